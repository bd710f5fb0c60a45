//! Small convolutional ε-predictor with exact reverse-mode gradients, and AdamW.

mod adamw;
mod net;

pub use adamw::AdamWState;
pub use net::{embed_log_snr, Activations, EpsNet, NetConfig};
