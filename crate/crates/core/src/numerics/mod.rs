//! Denoiser network, exact reverse-mode gradients, Adam and parameter EMA.

mod adam;
mod net;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use net::{
    time_embedding, Activation, Architecture, DenoiserNet, ForwardCache, ForwardOutput, GradBundle, Linear,
};

/// Flat view over a model's parameter tensors, in declaration order.
///
/// The order is the one used by checkpoints: for each layer, weight then bias.
pub trait Parameters {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Hex SHA-256 of every parameter as little-endian bytes, in declaration order.
pub fn parameter_checksum<P: Parameters + ?Sized>(params: &P) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for tensor in params.tensors() {
        for v in tensor {
            hasher.update(v.to_le_bytes());
        }
    }
    hex::encode(hasher.finalize())
}
