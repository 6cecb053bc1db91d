//! Bilevel search: SGD-momentum steps on weights and connection weights
//! alternate with Adam steps on operation scores driven by a two-path
//! sampling estimator.

mod checkpoint;
mod engine;

pub use checkpoint::{write_atomic, Checkpoint, CHECKPOINT_VERSION};
pub use engine::{clip_global_norm, run_search, SearchRun, StepMetrics, StreamCursor, TrainState};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::DatasetSpec;
use crate::error::{Error, Result};
use crate::supergraph::{NetworkShape, OpKind};

fn default_blocks() -> usize {
    4
}
fn default_op_set() -> Vec<OpKind> {
    OpKind::default_set()
}
fn default_lr_w() -> f64 {
    0.1
}
fn default_momentum() -> f64 {
    0.9
}
fn default_lr_alpha() -> f64 {
    0.006
}
fn default_val_size() -> usize {
    5000
}
fn default_batch_size() -> usize {
    64
}
fn default_grad_clip() -> f64 {
    5.0
}

/// Complete description of a search run. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    pub seed: u64,
    #[serde(rename = "M")]
    pub dags: usize,
    #[serde(rename = "N")]
    pub nodes: usize,
    #[serde(rename = "K", default = "default_blocks")]
    pub blocks: usize,
    #[serde(rename = "C0")]
    pub base_channels: usize,
    #[serde(default = "default_op_set")]
    pub op_set: Vec<OpKind>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub total_steps: u64,
    #[serde(default = "default_lr_w")]
    pub lr_w: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    /// Global L2 norm bound on each weight-step gradient; 0 disables.
    #[serde(default = "default_grad_clip")]
    pub grad_clip: f64,
    #[serde(default = "default_lr_alpha")]
    pub lr_alpha: f64,
    #[serde(default = "default_val_size")]
    pub val_size: usize,
    pub dataset: DatasetSpec,
    /// Steps between intermediate checkpoints; 0 writes only the final one.
    #[serde(default)]
    pub checkpoint_interval: u64,
    #[serde(default)]
    pub augment_flip: bool,
}

impl SearchConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn network_shape(&self, in_channels: usize, classes: usize) -> NetworkShape {
        NetworkShape {
            in_channels,
            classes,
            dags: self.dags,
            nodes: self.nodes,
            blocks: self.blocks,
            base_channels: self.base_channels,
            op_set: self.op_set.clone(),
        }
    }

    /// Validates everything that does not need pixel data, including the
    /// dataset's reachability and the input-size constraint.
    pub fn validate(&self) -> Result<()> {
        let (channels, side, classes, train_len) = self.dataset.describe()?;
        let shape = self.network_shape(channels, classes);
        shape.validate()?;
        shape
            .check_input_size(side, side)
            .map_err(|e| Error::config("M", e.to_string()))?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        for (field, v) in [
            ("lr_w", self.lr_w),
            ("lr_alpha", self.lr_alpha),
            ("grad_clip", self.grad_clip),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(field, "must be finite and non-negative"));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", "must lie in [0, 1)"));
        }
        if self.val_size == 0 {
            return Err(Error::config("val_size", "must be at least 1"));
        }
        if self.val_size >= train_len {
            return Err(Error::config(
                "val_size",
                format!("{} must be smaller than the training set ({train_len})", self.val_size),
            ));
        }
        self.dataset.check_available()
    }
}

/// Two distinct operations drawn for one node, with their probabilities
/// renormalized over the pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPathSample {
    pub op_m: usize,
    pub op_n: usize,
    pub p_m: f64,
    pub p_n: f64,
}

/// Numerically stable softmax.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|&a| (a - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Draws an index with probability proportional to `weights`.
pub fn categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Draws `op_m` from `softmax(alpha_row)`, then `op_n` from the remaining
/// operations renormalized.
pub fn sample_two_paths<R: Rng + ?Sized>(alpha_row: &[f64], rng: &mut R) -> Result<TwoPathSample> {
    if alpha_row.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "two-path sampling needs at least 2 operations, got {}",
            alpha_row.len()
        )));
    }
    let mut q = softmax(alpha_row);
    let op_m = categorical(&q, rng);
    q[op_m] = 0.0;
    let op_n = categorical(&q, rng);
    let (p_m, p_n) = pair_probabilities(alpha_row[op_m], alpha_row[op_n]);
    Ok(TwoPathSample {
        op_m,
        op_n,
        p_m,
        p_n,
    })
}

fn pair_probabilities(a_m: f64, a_n: f64) -> (f64, f64) {
    let d = a_n - a_m;
    let p_m = 1.0 / (1.0 + d.exp());
    (p_m, 1.0 - p_m)
}

/// `∂L/∂α_m = Σ_n ∂L/∂g_n · p_n · (δ_mn − p_m)` for the two sampled
/// operations; returns `[(op_m, grad_m), (op_n, grad_n)]`.
///
/// With two paths and `p_m + p_n = 1` the sum collapses to
/// `± p_m · p_n · (∂L/∂g_m − ∂L/∂g_n)`, which is evaluated in that form so
/// the pair sums to exactly zero.
pub fn alpha_grad(sample: &TwoPathSample, dl_dg: [f64; 2]) -> [(usize, f64); 2] {
    let g = sample.p_m * sample.p_n * (dl_dg[0] - dl_dg[1]);
    [(sample.op_m, g), (sample.op_n, -g)]
}

#[cfg(test)]
mod tests;
