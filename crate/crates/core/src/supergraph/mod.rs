//! The over-parameterized parent network: a stem convolution, a chain of
//! complete DAGs whose nodes exchange information block-to-block through
//! learned connection weights, and a pooled linear classifier.
//!
//! Every node's `C` channels are split into `K` contiguous blocks. For a
//! target node `j` and target block `k`, the routed input is
//!
//! ```text
//! x^k = Σ_{i<j} Σ_l gamma[i→j][l][k] · X_i^l
//! ```
//!
//! and each block is then transformed independently by the node's operation
//! (its own weights per block) followed by ReLU. The first node of a DAG
//! takes the previous stage output block-for-block, halves the resolution
//! and doubles the width; it only acts as a routing source. A DAG emits the
//! mean of its node outputs.

mod ops;

pub use ops::OpKind;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Term, Var};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Structural hyperparameters of a parent or derived network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub in_channels: usize,
    pub classes: usize,
    /// Number of chained DAGs (M).
    pub dags: usize,
    /// Nodes per DAG (N).
    pub nodes: usize,
    /// Channel blocks per node (K).
    pub blocks: usize,
    /// Stem output channels (C0).
    pub base_channels: usize,
    pub op_set: Vec<OpKind>,
}

impl NetworkShape {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("in_channels", self.in_channels),
            ("classes", self.classes),
            ("dags", self.dags),
            ("nodes", self.nodes),
            ("blocks", self.blocks),
            ("base_channels", self.base_channels),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if self.op_set.is_empty() {
            return Err(Error::config("op_set", "must list at least one operation"));
        }
        if self.dags > 20 {
            return Err(Error::config("dags", "at most 20 stages are supported"));
        }
        for d in 0..self.dags {
            let c = self.stage_input_channels(d);
            if !c.is_multiple_of(self.blocks) {
                return Err(Error::config(
                    "blocks",
                    format!(
                        "K={} does not divide C0={} (DAG {d} input has {c} channels)",
                        self.blocks, self.base_channels
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn stage_input_channels(&self, dag: usize) -> usize {
        self.base_channels << dag
    }

    pub fn stage_channels(&self, dag: usize) -> usize {
        self.base_channels << (dag + 1)
    }

    pub fn final_channels(&self) -> usize {
        self.stage_channels(self.dags - 1)
    }

    pub fn total_nodes(&self) -> usize {
        self.dags * self.nodes
    }

    pub fn edges_per_dag(&self) -> usize {
        self.nodes * (self.nodes - 1) / 2
    }

    /// Rejects spatial sizes that cannot be halved once per DAG.
    pub fn check_input_size(&self, height: usize, width: usize) -> Result<()> {
        let factor = 1usize << self.dags;
        for (name, s) in [("height", height), ("width", width)] {
            if s < factor || s % factor != 0 {
                return Err(Error::InvalidArgument(format!(
                    "input {name} {s} is not a positive multiple of 2^{} = {factor}",
                    self.dags
                )));
            }
        }
        Ok(())
    }
}

pub type ParamId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    /// Convolution or classifier weights (w).
    Weight,
    /// Block connection weights (gamma).
    Gamma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpParams {
    Conv { w: ParamId },
    DwSeparable { depth: ParamId, point: ParamId },
}

/// One candidate operation of a node, with independent weights per block.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeOp {
    pub kind: OpKind,
    pub blocks: Vec<OpParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub index: usize,
    /// Output width C.
    pub channels: usize,
    /// Block count K.
    pub blocks: usize,
    pub stride: usize,
    pub in_block_width: usize,
    pub ops: Vec<NodeOp>,
}

impl NodeSpec {
    pub fn out_block_width(&self) -> usize {
        self.channels / self.blocks
    }
}

/// Edge `src → dst` with its `K×K` gamma matrix stored as a `(1, 1, K, K)`
/// parameter; entry `[l][k]` weights source block `l` into target block `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub gamma: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DagSpec {
    pub dag_index: usize,
    pub in_channels: usize,
    pub nodes: Vec<NodeSpec>,
    /// Ordered by target node, then source node.
    pub edges: Vec<Edge>,
}

impl DagSpec {
    pub fn incoming(&self, dst: usize) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.dst == dst)
    }

    pub fn edge(&self, src: usize, dst: usize) -> Option<&Edge> {
        self.edges.iter().find(|e| e.src == src && e.dst == dst)
    }
}

/// Weights and wiring shared by parent and derived networks. Parameters are
/// kept in one flat list in declaration order: stem, then per DAG the node
/// operations (node, op, block) followed by gamma edges, then the head.
#[derive(Debug, Clone, PartialEq)]
pub struct Supernet {
    pub shape: NetworkShape,
    pub params: Vec<Tensor>,
    pub kinds: Vec<ParamKind>,
    pub stem: ParamId,
    pub dags: Vec<DagSpec>,
    pub head_w: ParamId,
    pub head_b: ParamId,
}

/// Per-node operation scores, one row of length O per node (global node
/// order: DAG-major).
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaTable {
    pub rows: Vec<Vec<f64>>,
}

impl AlphaTable {
    pub fn zeros(nodes: usize, ops: usize) -> Self {
        AlphaTable {
            rows: vec![vec![0.0; ops]; nodes],
        }
    }

    pub fn ops(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn is_finite(&self) -> bool {
        self.rows.iter().flatten().all(|v| v.is_finite())
    }
}

/// The parent network with every candidate operation and connection.
#[derive(Debug, Clone, PartialEq)]
pub struct ParentNetwork {
    pub net: Supernet,
    pub alpha: AlphaTable,
}

impl ParentNetwork {
    /// Builds and initializes the parent network deterministically from `seed`.
    pub fn build(shape: &NetworkShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = ParamBuilder::default();
        let stem = b.push(
            Tensor::uniform(
                [shape.base_channels, shape.in_channels, 3, 3],
                he_bound(shape.in_channels * 9),
                &mut rng,
            ),
            ParamKind::Weight,
        );
        let k = shape.blocks;
        let mut dags = Vec::with_capacity(shape.dags);
        for d in 0..shape.dags {
            let in_c = shape.stage_input_channels(d);
            let c = shape.stage_channels(d);
            let mut nodes = Vec::with_capacity(shape.nodes);
            for n in 0..shape.nodes {
                let in_bw = if n == 0 { in_c / k } else { c / k };
                let out_bw = c / k;
                let ops = shape
                    .op_set
                    .iter()
                    .map(|&kind| NodeOp {
                        kind,
                        blocks: (0..k)
                            .map(|_| b.init_op(kind, in_bw, out_bw, &mut rng))
                            .collect(),
                    })
                    .collect();
                nodes.push(NodeSpec {
                    index: n,
                    channels: c,
                    blocks: k,
                    stride: if n == 0 { 2 } else { 1 },
                    in_block_width: in_bw,
                    ops,
                });
            }
            let mut edges = Vec::with_capacity(shape.edges_per_dag());
            for dst in 1..shape.nodes {
                for src in 0..dst {
                    let gamma = b.push(
                        Tensor::full([1, 1, k, k], 1.0 / k as f64),
                        ParamKind::Gamma,
                    );
                    edges.push(Edge { src, dst, gamma });
                }
            }
            dags.push(DagSpec {
                dag_index: d,
                in_channels: in_c,
                nodes,
                edges,
            });
        }
        let f = shape.final_channels();
        let head_w = b.push(
            Tensor::uniform([shape.classes, f, 1, 1], 1.0 / (f as f64).sqrt(), &mut rng),
            ParamKind::Weight,
        );
        let head_b = b.push(Tensor::zeros([1, shape.classes, 1, 1]), ParamKind::Weight);
        Ok(ParentNetwork {
            net: Supernet {
                shape: shape.clone(),
                params: b.params,
                kinds: b.kinds,
                stem,
                dags,
                head_w,
                head_b,
            },
            alpha: AlphaTable::zeros(shape.total_nodes(), shape.op_set.len()),
        })
    }
}

pub fn build_parent(shape: &NetworkShape, seed: u64) -> Result<ParentNetwork> {
    ParentNetwork::build(shape, seed)
}

fn he_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

#[derive(Default)]
pub(crate) struct ParamBuilder {
    pub params: Vec<Tensor>,
    pub kinds: Vec<ParamKind>,
}

impl ParamBuilder {
    pub fn push(&mut self, t: Tensor, kind: ParamKind) -> ParamId {
        self.params.push(t);
        self.kinds.push(kind);
        self.params.len() - 1
    }

    fn init_op(
        &mut self,
        kind: OpKind,
        in_ch: usize,
        out_ch: usize,
        rng: &mut ChaCha8Rng,
    ) -> OpParams {
        match kind {
            OpKind::Conv(k) => OpParams::Conv {
                w: self.push(
                    Tensor::uniform([out_ch, in_ch, k, k], he_bound(in_ch * k * k), rng),
                    ParamKind::Weight,
                ),
            },
            OpKind::DwSeparable(k) => {
                let depth = self.push(
                    Tensor::uniform([in_ch, 1, k, k], he_bound(k * k), rng),
                    ParamKind::Weight,
                );
                let point = self.push(
                    Tensor::uniform([out_ch, in_ch, 1, 1], he_bound(in_ch), rng),
                    ParamKind::Weight,
                );
                OpParams::DwSeparable { depth, point }
            }
        }
    }
}

/// Operation selection for one node during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeChoice {
    /// Run exactly one candidate (hard path).
    Single(usize),
    /// Run two candidates and combine their outputs as
    /// `gates[0]·out(first) + gates[1]·out(second)`; the gates are scalar
    /// tape values so their gradients can be read back.
    Pair {
        first: usize,
        second: usize,
        gates: [Var; 2],
    },
}

/// Which parameter groups receive gradients during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradMode {
    pub weights: bool,
    pub gamma: bool,
}

impl GradMode {
    pub const ALL: GradMode = GradMode {
        weights: true,
        gamma: true,
    };
    pub const NONE: GradMode = GradMode {
        weights: false,
        gamma: false,
    };
}

/// Lazily registers network parameters as tape leaves.
#[derive(Debug)]
pub struct Binder {
    vars: Vec<Option<Var>>,
    mode: GradMode,
}

impl Binder {
    pub fn new(net: &Supernet, mode: GradMode) -> Self {
        Binder {
            vars: vec![None; net.params.len()],
            mode,
        }
    }

    pub fn bind(&mut self, tape: &mut Tape, net: &Supernet, id: ParamId) -> Var {
        if let Some(v) = self.vars[id] {
            return v;
        }
        let rg = match net.kinds[id] {
            ParamKind::Weight => self.mode.weights,
            ParamKind::Gamma => self.mode.gamma,
        };
        let v = tape.leaf(net.params[id].clone(), rg);
        self.vars[id] = Some(v);
        v
    }

    pub fn var(&self, id: ParamId) -> Option<Var> {
        self.vars[id]
    }

    /// Gradients for every bound parameter that received one.
    pub fn grads(&self, tape: &Tape) -> Vec<Option<Tensor>> {
        self.vars
            .iter()
            .map(|v| v.and_then(|v| tape.grad(v)))
            .collect()
    }
}

/// One predecessor feeding [`route_block`]: its `K` output blocks and the
/// edge's `(1, 1, K, K)` gamma tensor.
#[derive(Debug, Clone, Copy)]
pub struct RouteSource<'a> {
    pub blocks: &'a [Var],
    pub gamma: Var,
}

/// Routed input `x^k` of target block `k`: every source block of every
/// predecessor, weighted by `gamma[l][k]`, summed in (predecessor, block)
/// order.
pub fn route_block(
    tape: &mut Tape,
    sources: &[RouteSource<'_>],
    target_block: usize,
    blocks: usize,
) -> Result<Var> {
    if sources.is_empty() {
        return Err(Error::shape("route_block", "no predecessors"));
    }
    if target_block >= blocks {
        return Err(Error::shape(
            "route_block",
            format!("target block {target_block} out of {blocks}"),
        ));
    }
    let mut terms = Vec::with_capacity(sources.len() * blocks);
    for src in sources {
        if src.blocks.len() != blocks {
            return Err(Error::shape(
                "route_block",
                format!("predecessor has {} blocks, expected {blocks}", src.blocks.len()),
            ));
        }
        if tape.value(src.gamma).len() != blocks * blocks {
            return Err(Error::shape(
                "route_block",
                format!("gamma has {} entries, expected {}", tape.value(src.gamma).len(), blocks * blocks),
            ));
        }
        for (l, &x) in src.blocks.iter().enumerate() {
            terms.push(Term {
                x,
                coeff: src.gamma,
                index: l * blocks + target_block,
            });
        }
    }
    tape.weighted_sum(&terms)
}

/// Splits a tensor into `blocks` contiguous channel ranges.
pub fn partition_blocks(tape: &mut Tape, x: Var, blocks: usize) -> Result<Vec<Var>> {
    let c = tape.shape(x)[1];
    if blocks == 0 || !c.is_multiple_of(blocks) {
        return Err(Error::shape(
            "partition_blocks",
            format!("{c} channels cannot be split into {blocks} blocks"),
        ));
    }
    let w = c / blocks;
    (0..blocks)
        .map(|k| tape.slice_channels(x, k * w, w))
        .collect()
}

fn run_op(
    tape: &mut Tape,
    net: &Supernet,
    binder: &mut Binder,
    kind: OpKind,
    params: OpParams,
    x: Var,
    stride: usize,
) -> Result<Var> {
    let y = match params {
        OpParams::Conv { w } => {
            let w = binder.bind(tape, net, w);
            tape.conv2d(x, w, stride, kind.pad())?
        }
        OpParams::DwSeparable { depth, point } => {
            let d = binder.bind(tape, net, depth);
            let p = binder.bind(tape, net, point);
            tape.dw_separable_conv(x, d, p, stride, kind.pad())?
        }
    };
    Ok(tape.relu(y))
}

/// Applies a node's selected operation to each routed block with that
/// block's own weights; returns the `K` output blocks (their channel
/// concatenation is the node featuremap).
pub fn apply_node(
    tape: &mut Tape,
    net: &Supernet,
    binder: &mut Binder,
    node: &NodeSpec,
    routed: &[Var],
    choice: NodeChoice,
) -> Result<Vec<Var>> {
    if routed.len() != node.blocks {
        return Err(Error::shape(
            "apply_node",
            format!("{} routed blocks for K={}", routed.len(), node.blocks),
        ));
    }
    let check = |op: usize| -> Result<&NodeOp> {
        node.ops.get(op).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "operation index {op} out of range for node with {} candidates",
                node.ops.len()
            ))
        })
    };
    match choice {
        NodeChoice::Single(op) => {
            let nop = check(op)?;
            routed
                .iter()
                .zip(&nop.blocks)
                .map(|(&x, &p)| run_op(tape, net, binder, nop.kind, p, x, node.stride))
                .collect()
        }
        NodeChoice::Pair {
            first,
            second,
            gates,
        } => {
            let (a, b) = (check(first)?, check(second)?);
            let mut out = Vec::with_capacity(node.blocks);
            for (k, &x) in routed.iter().enumerate() {
                let ya = run_op(tape, net, binder, a.kind, a.blocks[k], x, node.stride)?;
                let yb = run_op(tape, net, binder, b.kind, b.blocks[k], x, node.stride)?;
                out.push(tape.weighted_sum(&[
                    Term {
                        x: ya,
                        coeff: gates[0],
                        index: 0,
                    },
                    Term {
                        x: yb,
                        coeff: gates[1],
                        index: 0,
                    },
                ])?);
            }
            Ok(out)
        }
    }
}

/// Result of [`Supernet::forward`].
#[derive(Debug)]
pub struct ForwardPass {
    pub logits: Var,
    pub binder: Binder,
    /// Featuremap shapes after the stem and after each DAG.
    pub stage_shapes: Vec<Shape>,
}

impl Supernet {
    pub fn total_nodes(&self) -> usize {
        self.dags.iter().map(|d| d.nodes.len()).sum()
    }

    pub fn node(&self, global: usize) -> &NodeSpec {
        let n = self.shape.nodes;
        &self.dags[global / n].nodes[global % n]
    }

    /// Trainable weight scalars (excludes gamma).
    pub fn count_params(&self) -> usize {
        self.params
            .iter()
            .zip(&self.kinds)
            .filter(|(_, k)| **k == ParamKind::Weight)
            .map(|(p, _)| p.len())
            .sum()
    }

    pub fn gamma(&self, dag: usize, src: usize, dst: usize) -> Option<&Tensor> {
        self.dags
            .get(dag)?
            .edge(src, dst)
            .map(|e| &self.params[e.gamma])
    }

    /// Stem, DAGs in order, then pooled linear head. `choices` holds one
    /// entry per node in global (DAG-major) order.
    pub fn forward(
        &self,
        tape: &mut Tape,
        images: &Tensor,
        choices: &[NodeChoice],
        mode: GradMode,
    ) -> Result<ForwardPass> {
        let [_, c, h, w] = images.shape();
        if c != self.shape.in_channels {
            return Err(Error::shape(
                "network_forward",
                format!("images have {c} channels, network expects {}", self.shape.in_channels),
            ));
        }
        self.shape.check_input_size(h, w)?;
        if choices.len() != self.total_nodes() {
            return Err(Error::InvalidArgument(format!(
                "{} operation choices for {} nodes",
                choices.len(),
                self.total_nodes()
            )));
        }
        let k = self.shape.blocks;
        let mut binder = Binder::new(self, mode);
        let x = tape.constant(images.clone());
        let stem_w = binder.bind(tape, self, self.stem);
        let stem = tape.conv2d(x, stem_w, 1, 1)?;
        let stem = tape.relu(stem);
        let mut stage_shapes = vec![tape.shape(stem)];
        let mut stage = partition_blocks(tape, stem, k)?;

        let mut global = 0;
        for dag in &self.dags {
            let mut outputs: Vec<Vec<Var>> = Vec::with_capacity(dag.nodes.len());
            for node in &dag.nodes {
                let routed = if node.index == 0 {
                    stage.clone()
                } else {
                    let mut gammas = Vec::with_capacity(node.index);
                    for e in dag.incoming(node.index) {
                        gammas.push((e.src, binder.bind(tape, self, e.gamma)));
                    }
                    let sources: Vec<RouteSource<'_>> = gammas
                        .iter()
                        .map(|&(src, gamma)| RouteSource {
                            blocks: &outputs[src],
                            gamma,
                        })
                        .collect();
                    (0..k)
                        .map(|kb| route_block(tape, &sources, kb, k))
                        .collect::<Result<Vec<_>>>()?
                };
                let out = apply_node(tape, self, &mut binder, node, &routed, choices[global])?;
                outputs.push(out);
                global += 1;
            }
            stage = if outputs.len() == 1 {
                outputs.pop().expect("one node")
            } else {
                let inv = tape.constant(Tensor::scalar(1.0 / outputs.len() as f64));
                (0..k)
                    .map(|kb| {
                        let terms: Vec<Term> = outputs
                            .iter()
                            .map(|o| Term {
                                x: o[kb],
                                coeff: inv,
                                index: 0,
                            })
                            .collect();
                        tape.weighted_sum(&terms)
                    })
                    .collect::<Result<Vec<_>>>()?
            };
            let [n, bc, sh, sw] = tape.shape(stage[0]);
            stage_shapes.push([n, bc * k, sh, sw]);
        }
        let features = tape.concat_channels(&stage)?;
        let pooled = tape.global_avg_pool(features);
        let hw = binder.bind(tape, self, self.head_w);
        let hb = binder.bind(tape, self, self.head_b);
        let logits = tape.linear(pooled, hw, hb)?;
        Ok(ForwardPass {
            logits,
            binder,
            stage_shapes,
        })
    }

    /// Forward pass without gradients; returns the logits tensor.
    pub fn logits(&self, images: &Tensor, ops: &[usize]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let choices: Vec<NodeChoice> = ops.iter().map(|&o| NodeChoice::Single(o)).collect();
        let pass = self.forward(&mut tape, images, &choices, GradMode::NONE)?;
        Ok(tape.value(pass.logits).clone())
    }

    /// Single-path copy: global node `g` keeps only candidate `ops[g]` (at
    /// index 0) and every edge's gamma is replaced by
    /// `gamma(dag, edge_index, current)`. Parameters are re-declared in the
    /// usual order, so unused candidates disappear from the count.
    pub fn restrict<F>(&self, ops: &[usize], mut gamma: F) -> Result<Supernet>
    where
        F: FnMut(usize, usize, &Tensor) -> Tensor,
    {
        if ops.len() != self.total_nodes() {
            return Err(Error::InvalidArgument(format!(
                "{} operation choices for {} nodes",
                ops.len(),
                self.total_nodes()
            )));
        }
        let mut b = ParamBuilder::default();
        let copy = |b: &mut ParamBuilder, id: ParamId| b.push(self.params[id].clone(), self.kinds[id]);
        let stem = copy(&mut b, self.stem);
        let mut dags = Vec::with_capacity(self.dags.len());
        let mut global = 0;
        for dag in &self.dags {
            let mut nodes = Vec::with_capacity(dag.nodes.len());
            for node in &dag.nodes {
                let chosen = node.ops.get(ops[global]).ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "operation index {} out of range for node {global}",
                        ops[global]
                    ))
                })?;
                let blocks = chosen
                    .blocks
                    .iter()
                    .map(|p| match *p {
                        OpParams::Conv { w } => OpParams::Conv { w: copy(&mut b, w) },
                        OpParams::DwSeparable { depth, point } => OpParams::DwSeparable {
                            depth: copy(&mut b, depth),
                            point: copy(&mut b, point),
                        },
                    })
                    .collect();
                nodes.push(NodeSpec {
                    ops: vec![NodeOp {
                        kind: chosen.kind,
                        blocks,
                    }],
                    ..node.clone()
                });
                global += 1;
            }
            let mut edges = Vec::with_capacity(dag.edges.len());
            for (i, e) in dag.edges.iter().enumerate() {
                let g = gamma(dag.dag_index, i, &self.params[e.gamma]);
                if g.shape() != self.params[e.gamma].shape() {
                    return Err(Error::shape("restrict", "replacement gamma has the wrong shape"));
                }
                edges.push(Edge {
                    gamma: b.push(g, ParamKind::Gamma),
                    ..*e
                });
            }
            dags.push(DagSpec {
                nodes,
                edges,
                ..*dag
            });
        }
        let head_w = copy(&mut b, self.head_w);
        let head_b = copy(&mut b, self.head_b);
        Ok(Supernet {
            shape: self.shape.clone(),
            params: b.params,
            kinds: b.kinds,
            stem,
            dags,
            head_w,
            head_b,
        })
    }

    /// Shape of the final featuremap for a given input size.
    pub fn feature_shape(&self, batch: usize, height: usize, width: usize) -> Shape {
        let f = 1 << self.shape.dags;
        [batch, self.shape.final_channels(), height / f, width / f]
    }
}

pub fn network_forward(
    net: &Supernet,
    tape: &mut Tape,
    images: &Tensor,
    choices: &[NodeChoice],
    mode: GradMode,
) -> Result<ForwardPass> {
    net.forward(tape, images, choices, mode)
}

pub fn count_params(net: &Supernet) -> usize {
    net.count_params()
}
