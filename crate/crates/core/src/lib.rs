//! Hierarchical volume-preserving maps and the cascaded diffusion model built on them.
//!
//! - [`hvp`]: Haar wavelet, Laplacian pyramid and nearest-neighbour hierarchies.
//! - [`diffusion`]: noise schedule, discrete-time variational bound, cascaded
//!   loss, sampling and training.
//! - [`nn`]: the per-scale ε-network with hand-written backpropagation and AdamW.
//! - [`emd`]: exact Earth Mover's Distance and its linear-time wavelet surrogate.
//! - [`codec`]: rANS and bits-back lossless compression with a trained model.
//! - [`ood`]: typicality-test out-of-distribution scoring.

pub mod codec;
pub mod diffusion;
pub mod emd;
pub mod error;
pub mod hvp;
pub mod io;
pub mod nn;
pub mod ood;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{dequantize, quantize, ImageU8, Tensor};
