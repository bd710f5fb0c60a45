//! Lossless compression with the cascade as a bits-back latent variable model.

mod archive;
mod bitsback;
mod gaussian;
mod rans;

pub use archive::{aux_state, compress, decompress, default_aux_words, EncodeReport, MAGIC};
pub use bitsback::{bb_decode, bb_encode, CodecConfig, LATENT_LIMIT};
pub use gaussian::{GaussianBins, MAX_BINS};
pub use rans::{AnsState, FreqTable, Interval, SymbolTable, PRECISION, TOTAL};
