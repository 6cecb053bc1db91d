use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::data::{augment_flip, batch_indices, split_dataset, Dataset, ImageBatch, Normalization, Split};
use crate::discretize::select_operations;
use crate::error::{Error, Result};
use crate::optim::{AdamState, CosineSchedule, SgdMomentumState};
use crate::supergraph::{GradMode, NodeChoice, ParentNetwork};
use crate::tensor::Tensor;

use super::{alpha_grad, categorical, sample_two_paths, softmax, Checkpoint, SearchConfig};

const TRAIN_STREAM_SALT: u64 = 0x9E37_79B9_7F4A_7C15;
const VAL_STREAM_SALT: u64 = 0xD1B5_4A32_D192_ED03;
const EVAL_CHUNK: usize = 256;

/// Position within a seeded epoch-by-epoch batch stream.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamCursor {
    pub epoch: u64,
    pub pos: u64,
}

/// Per-step log row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub train_loss: f64,
    /// Loss of the architecture step on its validation batch.
    pub val_loss: f64,
    pub lr: f64,
}

/// Everything that evolves during a search. All randomness after network
/// initialization is drawn from `rng`.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: SearchConfig,
    pub in_channels: usize,
    pub classes: usize,
    pub step: u64,
    pub parent: ParentNetwork,
    /// One state per network parameter, in declared order.
    pub sgd: Vec<SgdMomentumState>,
    /// One state per alpha row.
    pub adam: Vec<AdamState>,
    pub rng: ChaCha8Rng,
    pub train_cursor: StreamCursor,
    pub val_cursor: StreamCursor,
    pub norm: Normalization,
    /// Training loss of every completed step.
    pub history: Vec<f64>,
}

impl TrainState {
    pub fn new(
        config: &SearchConfig,
        in_channels: usize,
        classes: usize,
        norm: Normalization,
    ) -> Result<Self> {
        let shape = config.network_shape(in_channels, classes);
        let parent = ParentNetwork::build(&shape, config.seed)?;
        let schedule = CosineSchedule::new(config.lr_w, config.total_steps);
        let sgd = parent
            .net
            .params
            .iter()
            .map(|p| SgdMomentumState::new(p.shape(), config.momentum, schedule))
            .collect();
        let ops = shape.op_set.len();
        let adam = (0..shape.total_nodes())
            .map(|_| AdamState::new([1, 1, 1, ops], config.lr_alpha))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(TrainState {
            config: config.clone(),
            in_channels,
            classes,
            step: 0,
            parent,
            sgd,
            adam,
            rng,
            train_cursor: StreamCursor::default(),
            val_cursor: StreamCursor::default(),
            norm,
            history: Vec::new(),
        })
    }

    pub fn lr(&self) -> f64 {
        self.sgd
            .first()
            .map_or(0.0, |s| s.schedule.lr(self.step))
    }

    /// One operation per node drawn from `softmax(alpha)`.
    pub fn sample_ops(&mut self) -> Vec<usize> {
        let rows = &self.parent.alpha.rows;
        let mut ops = Vec::with_capacity(rows.len());
        for row in rows {
            ops.push(categorical(&softmax(row), &mut self.rng));
        }
        ops
    }

    /// Hard-path step on `w` and `gamma` with freshly sampled operations.
    pub fn weight_step(&mut self, batch: &ImageBatch) -> Result<f64> {
        let ops = self.sample_ops();
        self.weight_step_with(batch, &ops)
    }

    /// Hard-path step with fixed operation choices.
    pub fn weight_step_with(&mut self, batch: &ImageBatch, ops: &[usize]) -> Result<f64> {
        let choices: Vec<NodeChoice> = ops.iter().map(|&o| NodeChoice::Single(o)).collect();
        let mut tape = Tape::new();
        let pass = self
            .parent
            .net
            .forward(&mut tape, &batch.images, &choices, GradMode::ALL)?;
        let loss_var = tape.cross_entropy(pass.logits, &batch.labels)?;
        let loss = tape.value(loss_var).item();
        self.check_finite(&tape, loss)?;
        tape.backward(loss_var)?;
        let mut grads = pass.binder.grads(&tape);
        clip_global_norm(&mut grads, self.config.grad_clip);
        for (id, g) in grads.into_iter().enumerate() {
            if let Some(g) = g {
                self.sgd[id].step(&mut self.parent.net.params[id], &g, self.step)?;
            }
        }
        Ok(loss)
    }

    /// Architecture step: every node runs two sampled candidates mixed by
    /// their pair probabilities, and only alpha is updated.
    pub fn alpha_step(&mut self, batch: &ImageBatch) -> Result<f64> {
        if self.parent.alpha.ops() < 2 {
            let ops = vec![0; self.parent.alpha.rows.len()];
            return self.evaluate(batch, &ops);
        }
        let mut samples = Vec::with_capacity(self.parent.alpha.rows.len());
        for row in &self.parent.alpha.rows {
            samples.push(sample_two_paths(row, &mut self.rng)?);
        }
        let mut tape = Tape::new();
        let mut gates = Vec::with_capacity(samples.len());
        let choices: Vec<NodeChoice> = samples
            .iter()
            .map(|s| {
                let g = [
                    tape.leaf(Tensor::scalar(s.p_m), true),
                    tape.leaf(Tensor::scalar(s.p_n), true),
                ];
                gates.push(g);
                NodeChoice::Pair {
                    first: s.op_m,
                    second: s.op_n,
                    gates: g,
                }
            })
            .collect();
        let pass = self
            .parent
            .net
            .forward(&mut tape, &batch.images, &choices, GradMode::NONE)?;
        let loss_var = tape.cross_entropy(pass.logits, &batch.labels)?;
        let loss = tape.value(loss_var).item();
        self.check_finite(&tape, loss)?;
        tape.backward(loss_var)?;
        let ops = self.parent.alpha.ops();
        for (node, (s, g)) in samples.iter().zip(&gates).enumerate() {
            let dl = g.map(|v| tape.grad(v).map_or(0.0, |t| t.item()));
            let mut grad = vec![0.0; ops];
            for (op, d) in alpha_grad(s, dl) {
                grad[op] += d;
            }
            let row = &mut self.parent.alpha.rows[node];
            let mut param = Tensor::new([1, 1, 1, ops], std::mem::take(row))?;
            self.adam[node].step(&mut param, &Tensor::new([1, 1, 1, ops], grad)?)?;
            *row = param.into_data();
        }
        Ok(loss)
    }

    /// Mean cross-entropy of a fixed single-path network on `batch`.
    pub fn evaluate(&self, batch: &ImageBatch, ops: &[usize]) -> Result<f64> {
        let logits = self.parent.net.logits(&batch.images, ops)?;
        let mut tape = Tape::new();
        let l = tape.constant(logits);
        let loss = tape.cross_entropy(l, &batch.labels)?;
        Ok(tape.value(loss).item())
    }

    fn check_finite(&self, tape: &Tape, loss: f64) -> Result<()> {
        if loss.is_finite() {
            return Ok(());
        }
        let (node, op) = tape.first_non_finite().unwrap_or((tape.len(), "cross_entropy"));
        Err(Error::NonFinite {
            op,
            node,
            step: self.step,
        })
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut [Option<Tensor>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// A seeded batch stream over a fixed index pool.
#[derive(Debug, Clone)]
struct Stream {
    pool: Vec<usize>,
    batch_size: usize,
    seed: u64,
    batches: Vec<Vec<usize>>,
    cached_epoch: Option<u64>,
}

impl Stream {
    fn new(pool: Vec<usize>, batch_size: usize, seed: u64) -> Self {
        Stream {
            pool,
            batch_size,
            seed,
            batches: Vec::new(),
            cached_epoch: None,
        }
    }

    fn next(&mut self, cursor: &mut StreamCursor) -> Result<Vec<usize>> {
        loop {
            if self.cached_epoch != Some(cursor.epoch) {
                self.batches = batch_indices(&self.pool, self.batch_size, self.seed, cursor.epoch)?;
                self.cached_epoch = Some(cursor.epoch);
            }
            if let Some(b) = self.batches.get(cursor.pos as usize) {
                cursor.pos += 1;
                return Ok(b.clone());
            }
            cursor.epoch += 1;
            cursor.pos = 0;
        }
    }
}

/// A search bound to its data.
#[derive(Debug, Clone)]
pub struct SearchRun {
    pub state: TrainState,
    pub train: Dataset,
    pub test: Dataset,
    pub split: Split,
    train_stream: Stream,
    val_stream: Stream,
}

impl SearchRun {
    /// Validates `config`, loads the data and builds the parent network.
    pub fn new(config: &SearchConfig) -> Result<Self> {
        config.validate()?;
        let (train, test) = config.dataset.load()?;
        let state = TrainState::new(config, train.channels, train.classes, train.norm.clone())?;
        Self::assemble(state, train, test)
    }

    /// Continues a search from a saved state.
    pub fn resume(state: TrainState) -> Result<Self> {
        state.config.validate()?;
        let (train, test) = state.config.dataset.load()?;
        let (train, test) = (
            train.with_normalization(state.norm.clone()),
            test.with_normalization(state.norm.clone()),
        );
        Self::assemble(state, train, test)
    }

    fn assemble(state: TrainState, train: Dataset, test: Dataset) -> Result<Self> {
        let cfg = &state.config;
        let split = split_dataset(train.len(), cfg.val_size, cfg.seed)?;
        let train_stream = Stream::new(
            split.weight_train.clone(),
            cfg.batch_size,
            cfg.seed ^ TRAIN_STREAM_SALT,
        );
        let val_stream = Stream::new(split.alpha_val.clone(), cfg.batch_size, cfg.seed ^ VAL_STREAM_SALT);
        Ok(SearchRun {
            state,
            train,
            test,
            split,
            train_stream,
            val_stream,
        })
    }

    pub fn is_done(&self) -> bool {
        self.state.step >= self.state.config.total_steps
    }

    /// One weight step followed by one architecture step.
    pub fn step(&mut self) -> Result<StepMetrics> {
        let lr = self.state.lr();
        let idx = self.train_stream.next(&mut self.state.train_cursor)?;
        let mut batch = self.train.batch(&idx);
        if self.state.config.augment_flip {
            augment_flip(&mut batch, &mut self.state.rng, 0.5);
        }
        let train_loss = self.state.weight_step(&batch)?;
        let idx = self.val_stream.next(&mut self.state.val_cursor)?;
        let val_loss = self.state.alpha_step(&self.train.batch(&idx))?;
        let metrics = StepMetrics {
            step: self.state.step,
            train_loss,
            val_loss,
            lr,
        };
        self.state.history.push(train_loss);
        self.state.step += 1;
        Ok(metrics)
    }

    /// Runs the remaining steps, calling `hook` after each.
    pub fn run<F>(&mut self, mut hook: F) -> Result<()>
    where
        F: FnMut(&SearchRun, &StepMetrics) -> Result<()>,
    {
        while !self.is_done() {
            let m = self.step()?;
            hook(self, &m)?;
        }
        Ok(())
    }

    /// Cross-entropy of the current argmax architecture over the whole
    /// validation split.
    pub fn validation_loss(&self) -> Result<f64> {
        let ops = select_operations(&self.state.parent.alpha);
        let mut total = 0.0;
        for chunk in self.split.alpha_val.chunks(EVAL_CHUNK) {
            total += self.state.evaluate(&self.train.batch(chunk), &ops)? * chunk.len() as f64;
        }
        Ok(total / self.split.alpha_val.len() as f64)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_state(&self.state)
    }
}

/// Builds the parent network and runs the full search.
pub fn run_search(config: &SearchConfig) -> Result<(TrainState, Checkpoint)> {
    let mut run = SearchRun::new(config)?;
    run.run(|_, _| Ok(()))?;
    let ckpt = run.checkpoint();
    Ok((run.state, ckpt))
}
