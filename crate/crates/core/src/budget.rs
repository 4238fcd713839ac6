//! Compute-budget estimators for vision-transformer surrogates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetSpec {
    /// Input extent per spatial dimension (pixels).
    pub input_dims: Vec<u64>,
    /// Patch extent per spatial dimension.
    pub patch_dims: Vec<u64>,
    pub epochs: f64,
    /// Trainable parameter count.
    pub params: f64,
    pub dataset_images: f64,
}

impl BudgetSpec {
    /// Tokens per image, `Π L_i / P_i`.
    pub fn tokens_per_image(&self) -> Result<u64> {
        if self.input_dims.is_empty() || self.input_dims.len() != self.patch_dims.len() {
            return Err(Error::Config("input_dims and patch_dims must be non-empty and of equal length".into()));
        }
        let mut tokens = 1u64;
        for (&l, &p) in self.input_dims.iter().zip(&self.patch_dims) {
            if l == 0 || p == 0 || l % p != 0 {
                return Err(Error::Config(format!("input extent {l} is not divisible by patch {p}")));
            }
            tokens *= l / p;
        }
        Ok(tokens)
    }
}

/// Training cost `6 · tokens · epochs · params · images`.
pub fn estimate_training_flops(spec: &BudgetSpec) -> Result<f64> {
    let tokens = spec.tokens_per_image()? as f64;
    for (name, v) in [("epochs", spec.epochs), ("params", spec.params), ("dataset_images", spec.dataset_images)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Config(format!("{name} = {v} must be positive")));
        }
    }
    Ok(6.0 * tokens * spec.epochs * spec.params * spec.dataset_images)
}

/// Transformer weights ignoring biases, norms and embeddings:
/// `layers · (4 + 2 · mlp_ratio) · dim²`.
pub fn vit_param_count(layers: u64, embed_dim: u64, mlp_ratio: f64) -> Result<f64> {
    if layers == 0 || embed_dim == 0 || !(mlp_ratio > 0.0) {
        return Err(Error::Config("layers, embed_dim and mlp_ratio must be positive".into()));
    }
    Ok(layers as f64 * (4.0 + 2.0 * mlp_ratio) * (embed_dim as f64).powi(2))
}
