//! Accuracy reports and optional weight retraining for derived networks.

use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::data::{batch_indices, Dataset};
use crate::error::{Error, Result};
use crate::optim::{CosineSchedule, SgdMomentumState};
use crate::search::clip_global_norm;
use crate::supergraph::{GradMode, NodeChoice, Supernet};

const EVAL_CHUNK: usize = 256;

/// Machine-readable result of evaluating a derived network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub loss: f64,
    pub param_count: usize,
}

/// Schedule for retraining a derived network's weights; gamma stays frozen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for RetrainConfig {
    fn default() -> Self {
        RetrainConfig {
            steps: 0,
            batch_size: 64,
            lr: 0.1,
            momentum: 0.9,
            grad_clip: 5.0,
            seed: 0,
        }
    }
}

fn single_path(net: &Supernet) -> Vec<usize> {
    vec![0; net.total_nodes()]
}

fn check_classes(net: &Supernet, data: &Dataset) -> Result<()> {
    if net.shape.classes != data.classes || net.shape.in_channels != data.channels {
        return Err(Error::Architecture(format!(
            "network expects {} classes over {} channels, dataset has {} classes over {}",
            net.shape.classes, net.shape.in_channels, data.classes, data.channels
        )));
    }
    Ok(())
}

/// Top-1 accuracy and mean cross-entropy of a single-path network over
/// every sample of `data`.
pub fn evaluate(net: &Supernet, data: &Dataset) -> Result<EvalReport> {
    check_classes(net, data)?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate on an empty dataset".into()));
    }
    let ops = single_path(net);
    let (mut correct, mut loss) = (0usize, 0.0);
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let batch = data.batch(chunk);
        let logits = net.logits(&batch.images, &ops)?;
        let classes = logits.shape()[1];
        for (row, &label) in logits.data().chunks(classes).zip(&batch.labels) {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            correct += usize::from(best == label);
        }
        let mut tape = Tape::new();
        let l = tape.constant(logits);
        let ce = tape.cross_entropy(l, &batch.labels)?;
        loss += tape.value(ce).item() * chunk.len() as f64;
    }
    Ok(EvalReport {
        accuracy: correct as f64 / data.len() as f64,
        loss: loss / data.len() as f64,
        param_count: net.count_params(),
    })
}

/// Trains the weights of a single-path network on `data` with SGD momentum
/// under a cosine schedule. Returns the loss of every step.
pub fn retrain(net: &mut Supernet, data: &Dataset, cfg: &RetrainConfig) -> Result<Vec<f64>> {
    check_classes(net, data)?;
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("retrain batch size must be at least 1".into()));
    }
    let schedule = CosineSchedule::new(cfg.lr, cfg.steps);
    let mut sgd: Vec<SgdMomentumState> = net
        .params
        .iter()
        .map(|p| SgdMomentumState::new(p.shape(), cfg.momentum, schedule))
        .collect();
    let pool: Vec<usize> = (0..data.len()).collect();
    let choices: Vec<NodeChoice> = single_path(net).into_iter().map(NodeChoice::Single).collect();
    let mode = GradMode {
        weights: true,
        gamma: false,
    };
    let mut losses = Vec::with_capacity(cfg.steps as usize);
    let (mut epoch, mut batches, mut pos) = (0, Vec::new(), 0);
    for step in 0..cfg.steps {
        if pos == batches.len() {
            batches = batch_indices(&pool, cfg.batch_size, cfg.seed, epoch)?;
            epoch += 1;
            pos = 0;
        }
        let batch = data.batch(&batches[pos]);
        pos += 1;
        let mut tape = Tape::new();
        let pass = net.forward(&mut tape, &batch.images, &choices, mode)?;
        let loss_var = tape.cross_entropy(pass.logits, &batch.labels)?;
        let loss = tape.value(loss_var).item();
        if !loss.is_finite() {
            let (node, op) = tape.first_non_finite().unwrap_or((tape.len(), "cross_entropy"));
            return Err(Error::NonFinite { op, node, step });
        }
        tape.backward(loss_var)?;
        let mut grads = pass.binder.grads(&tape);
        clip_global_norm(&mut grads, cfg.grad_clip);
        for (id, g) in grads.into_iter().enumerate() {
            if let Some(g) = g {
                sgd[id].step(&mut net.params[id], &g, step)?;
            }
        }
        losses.push(loss);
    }
    Ok(losses)
}
