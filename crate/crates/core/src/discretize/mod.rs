//! Turns a searched parent network into a fixed architecture: one operation
//! per node by argmax over alpha, and the top half of every node's incoming
//! block connections by gamma.

mod export;

pub use export::{arch_from_json, arch_to_dot, arch_to_json, ARCH_VERSION};

use std::path::Path;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search::{Checkpoint, TrainState};
use crate::supergraph::{AlphaTable, NetworkShape, ParentNetwork, Supernet};
use crate::tensor::Tensor;

/// Retained flags per `[dag][node][connection]`. Connections of target node
/// `j` are enumerated by source node, then source block, then target block;
/// node 0 has none.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectionMask {
    pub dags: Vec<Vec<Vec<bool>>>,
}

impl ConnectionMask {
    pub fn retained(&self) -> usize {
        self.dags.iter().flatten().flatten().filter(|&&b| b).count()
    }

    pub fn total(&self) -> usize {
        self.dags.iter().flatten().map(Vec::len).sum()
    }
}

/// One retained block connection into a node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Connection {
    pub src_node: usize,
    pub src_block: usize,
    pub dst_block: usize,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeArch {
    pub op: usize,
    pub inputs: Vec<Connection>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub seed: u64,
    pub step: u64,
    pub checkpoint_hash: String,
}

/// A discretized network description.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedArchitecture {
    pub shape: NetworkShape,
    /// `[dag][node]`.
    pub dags: Vec<Vec<NodeArch>>,
    pub provenance: Provenance,
    pub param_count: usize,
}

impl DerivedArchitecture {
    /// Chosen operation per node in global order.
    pub fn ops(&self) -> Vec<usize> {
        self.dags.iter().flatten().map(|n| n.op).collect()
    }

    pub fn mask(&self) -> ConnectionMask {
        let k = self.shape.blocks;
        let dags = self
            .dags
            .iter()
            .map(|nodes| {
                nodes
                    .iter()
                    .enumerate()
                    .map(|(j, node)| {
                        let mut m = vec![false; j * k * k];
                        for c in &node.inputs {
                            m[connection_index(c.src_node, c.src_block, c.dst_block, k)] = true;
                        }
                        m
                    })
                    .collect()
            })
            .collect();
        ConnectionMask { dags }
    }

    /// Fraction of block connections retained.
    pub fn retained_fraction(&self) -> f64 {
        let m = self.mask();
        if m.total() == 0 {
            1.0
        } else {
            m.retained() as f64 / m.total() as f64
        }
    }

    /// The `(1, 1, K, K)` gamma of edge `src → dst` with pruned entries zero.
    pub fn edge_gamma(&self, dag: usize, src: usize, dst: usize) -> Tensor {
        let k = self.shape.blocks;
        let mut t = Tensor::zeros([1, 1, k, k]);
        for c in self.dags[dag][dst].inputs.iter().filter(|c| c.src_node == src) {
            t.data_mut()[c.src_block * k + c.dst_block] = c.gamma;
        }
        t
    }
}

fn connection_index(src: usize, src_block: usize, dst_block: usize, k: usize) -> usize {
    src * k * k + src_block * k + dst_block
}

/// Ranks `gamma` descending (ties by ascending position) and retains the
/// first `ceil(n / 2)`.
pub fn prune_connections(gamma: &[f64]) -> Vec<bool> {
    let mut order: Vec<usize> = (0..gamma.len()).collect();
    order.sort_by(|&a, &b| gamma[b].total_cmp(&gamma[a]).then(a.cmp(&b)));
    let mut keep = vec![false; gamma.len()];
    for &i in &order[..gamma.len().div_ceil(2)] {
        keep[i] = true;
    }
    keep
}

/// Incoming gamma values of every node, in connection order.
pub fn incoming_gammas(net: &Supernet) -> Vec<Vec<Vec<f64>>> {
    net.dags
        .iter()
        .map(|dag| {
            (0..dag.nodes.len())
                .map(|j| {
                    dag.incoming(j)
                        .flat_map(|e| net.params[e.gamma].data().iter().copied())
                        .collect()
                })
                .collect()
        })
        .collect()
}

pub fn prune_network(net: &Supernet) -> ConnectionMask {
    ConnectionMask {
        dags: incoming_gammas(net)
            .iter()
            .map(|nodes| nodes.iter().map(|g| prune_connections(g)).collect())
            .collect(),
    }
}

/// Argmax of every alpha row; ties go to the lowest index.
pub fn select_operations(alpha: &AlphaTable) -> Vec<usize> {
    alpha
        .rows
        .iter()
        .map(|row| {
            let mut best = 0;
            for (i, &a) in row.iter().enumerate() {
                if a > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Composes operation selection and connection pruning.
pub fn derive(parent: &ParentNetwork, provenance: Provenance) -> Result<DerivedArchitecture> {
    let net = &parent.net;
    let ops = select_operations(&parent.alpha);
    let k = net.shape.blocks;
    let gammas = incoming_gammas(net);
    let mut dags = Vec::with_capacity(net.dags.len());
    let mut global = 0;
    for dag_gammas in &gammas {
        let mut nodes = Vec::with_capacity(dag_gammas.len());
        for g in dag_gammas {
            let keep = prune_connections(g);
            let mut inputs = Vec::new();
            for (idx, _) in keep.iter().enumerate().filter(|(_, &b)| b) {
                inputs.push(Connection {
                    src_node: idx / (k * k),
                    src_block: idx / k % k,
                    dst_block: idx % k,
                    gamma: g[idx],
                });
            }
            nodes.push(NodeArch {
                op: ops[global],
                inputs,
            });
            global += 1;
        }
        dags.push(nodes);
    }
    let mut arch = DerivedArchitecture {
        shape: net.shape.clone(),
        dags,
        provenance,
        param_count: 0,
    };
    arch.param_count = instantiate(&arch, net)?.count_params();
    Ok(arch)
}

/// Loads a checkpoint and derives its architecture together with the
/// derived network carrying the searched weights.
pub fn derive_checkpoint(path: &Path) -> Result<(DerivedArchitecture, Supernet, TrainState)> {
    let (state, ckpt) = Checkpoint::load(path)?;
    let (arch, net) = derive_state(&state, &ckpt)?;
    Ok((arch, net, state))
}

pub fn derive_state(state: &TrainState, ckpt: &Checkpoint) -> Result<(DerivedArchitecture, Supernet)> {
    let arch = derive(
        &state.parent,
        Provenance {
            seed: state.config.seed,
            step: state.step,
            checkpoint_hash: ckpt.hash_hex(),
        },
    )?;
    let net = instantiate(&arch, &state.parent.net)?;
    Ok((arch, net))
}

/// Single-path network for `arch`, taking chosen-operation weights from
/// `source` and frozen gamma values from the architecture.
pub fn instantiate(arch: &DerivedArchitecture, source: &Supernet) -> Result<Supernet> {
    if source.shape != arch.shape {
        return Err(Error::Architecture(
            "weight source does not match the architecture's configuration".into(),
        ));
    }
    let edges: Vec<Vec<(usize, usize)>> = source
        .dags
        .iter()
        .map(|d| d.edges.iter().map(|e| (e.src, e.dst)).collect())
        .collect();
    source.restrict(&arch.ops(), |dag, e, _| {
        let (src, dst) = edges[dag][e];
        arch.edge_gamma(dag, src, dst)
    })
}

/// Single-path network for `arch` with freshly initialized weights.
pub fn instantiate_fresh(arch: &DerivedArchitecture, seed: u64) -> Result<Supernet> {
    let parent = ParentNetwork::build(&arch.shape, seed)?;
    instantiate(arch, &parent.net)
}

/// Copy of `parent` whose pruned gamma entries are zero.
pub fn mask_parent(parent: &Supernet, mask: &ConnectionMask) -> Result<Supernet> {
    let k = parent.shape.blocks;
    let mut net = parent.clone();
    if mask.dags.len() != net.dags.len() {
        return Err(Error::shape("mask_parent", "mask and network disagree on DAG count"));
    }
    for (d, dag) in parent.dags.iter().enumerate() {
        for e in &dag.edges {
            let flags = mask.dags[d]
                .get(e.dst)
                .filter(|f| f.len() == e.dst * k * k)
                .ok_or_else(|| Error::shape("mask_parent", "mask does not match network"))?;
            let g = net.params[e.gamma].data_mut();
            for (i, v) in g.iter_mut().enumerate() {
                if !flags[e.src * k * k + i] {
                    *v = 0.0;
                }
            }
        }
    }
    Ok(net)
}

/// Largest absolute logit difference between the masked parent running
/// the derived operations and the derived network.
pub fn check_equivalence(
    parent: &Supernet,
    arch: &DerivedArchitecture,
    derived: &Supernet,
    images: &Tensor,
) -> Result<f64> {
    if derived.total_nodes() != parent.total_nodes() || derived.shape != parent.shape {
        return Err(Error::shape(
            "check_equivalence",
            "derived network does not match the parent's structure",
        ));
    }
    let masked = mask_parent(parent, &arch.mask())?;
    let a = masked.logits(images, &arch.ops())?;
    let b = derived.logits(images, &vec![0; derived.total_nodes()])?;
    Ok(a.max_abs_diff(&b))
}

/// `M · O^N · 2^(N(N−1)/2)`, exactly.
pub fn search_space_size(dags: u64, nodes: u64, ops: u64) -> BigUint {
    let edges = nodes * nodes.saturating_sub(1) / 2;
    BigUint::from(dags)
        * BigUint::from(ops).pow(u32::try_from(nodes).expect("node count fits u32"))
        * (BigUint::from(1u8) << edges)
}

/// Base-10 logarithm of a big integer.
pub fn log10_big(n: &BigUint) -> f64 {
    let digits = n.to_string();
    let lead: String = digits.chars().take(17).collect();
    let mantissa: f64 = lead.parse::<f64>().expect("digits") / 10f64.powi(lead.len() as i32 - 1);
    mantissa.log10() + (digits.len() - 1) as f64
}

#[cfg(test)]
mod tests;
