use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::supergraph::{NetworkShape, OpKind};

use super::{instantiate_fresh, Connection, DerivedArchitecture, NodeArch, Provenance};

pub const ARCH_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchJson {
    version: u32,
    config: ConfigJson,
    dags: Vec<DagJson>,
    provenance: Provenance,
    param_count: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigJson {
    #[serde(rename = "M")]
    dags: usize,
    #[serde(rename = "N")]
    nodes: usize,
    #[serde(rename = "K")]
    blocks: usize,
    #[serde(rename = "C0")]
    base_channels: usize,
    classes: usize,
    op_set: Vec<OpKind>,
    in_channels: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DagJson {
    nodes: Vec<NodeJson>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeJson {
    op: usize,
    #[serde(rename = "in")]
    inputs: Vec<Connection>,
}

pub fn arch_to_json(arch: &DerivedArchitecture) -> String {
    let s = &arch.shape;
    let doc = ArchJson {
        version: ARCH_VERSION,
        config: ConfigJson {
            dags: s.dags,
            nodes: s.nodes,
            blocks: s.blocks,
            base_channels: s.base_channels,
            classes: s.classes,
            op_set: s.op_set.clone(),
            in_channels: s.in_channels,
        },
        dags: arch
            .dags
            .iter()
            .map(|nodes| DagJson {
                nodes: nodes
                    .iter()
                    .map(|n| NodeJson {
                        op: n.op,
                        inputs: n.inputs.clone(),
                    })
                    .collect(),
            })
            .collect(),
        provenance: arch.provenance.clone(),
        param_count: arch.param_count,
    };
    let mut out = serde_json::to_string_pretty(&doc).expect("architecture serializes");
    out.push('\n');
    out
}

/// Parses and validates an architecture document.
pub fn arch_from_json(text: &str) -> Result<DerivedArchitecture> {
    let doc: ArchJson = serde_json::from_str(text)?;
    if doc.version != ARCH_VERSION {
        return Err(Error::Architecture(format!(
            "version {} is not supported (expected {ARCH_VERSION})",
            doc.version
        )));
    }
    let c = doc.config;
    let shape = NetworkShape {
        in_channels: c.in_channels,
        classes: c.classes,
        dags: c.dags,
        nodes: c.nodes,
        blocks: c.blocks,
        base_channels: c.base_channels,
        op_set: c.op_set,
    };
    shape.validate()?;
    if doc.dags.len() != shape.dags {
        return Err(Error::Architecture(format!(
            "{} DAG entries for M={}",
            doc.dags.len(),
            shape.dags
        )));
    }
    let k = shape.blocks;
    let mut dags = Vec::with_capacity(shape.dags);
    for (d, dag) in doc.dags.into_iter().enumerate() {
        if dag.nodes.len() != shape.nodes {
            return Err(Error::Architecture(format!(
                "DAG {d} has {} nodes, expected N={}",
                dag.nodes.len(),
                shape.nodes
            )));
        }
        let mut nodes = Vec::with_capacity(shape.nodes);
        for (j, n) in dag.nodes.into_iter().enumerate() {
            if n.op >= shape.op_set.len() {
                return Err(Error::Architecture(format!(
                    "DAG {d} node {j}: operation {} out of range",
                    n.op
                )));
            }
            let mut seen = vec![false; j * k * k];
            for conn in &n.inputs {
                if conn.src_node >= j || conn.src_block >= k || conn.dst_block >= k {
                    return Err(Error::Architecture(format!(
                        "DAG {d} node {j}: invalid connection {conn:?}"
                    )));
                }
                let idx = conn.src_node * k * k + conn.src_block * k + conn.dst_block;
                if std::mem::replace(&mut seen[idx], true) {
                    return Err(Error::Architecture(format!(
                        "DAG {d} node {j}: duplicate connection {conn:?}"
                    )));
                }
                if !conn.gamma.is_finite() {
                    return Err(Error::Architecture(format!(
                        "DAG {d} node {j}: non-finite gamma"
                    )));
                }
            }
            nodes.push(NodeArch {
                op: n.op,
                inputs: n.inputs,
            });
        }
        dags.push(nodes);
    }
    let arch = DerivedArchitecture {
        shape,
        dags,
        provenance: doc.provenance,
        param_count: doc.param_count,
    };
    let actual = instantiate_fresh(&arch, 0)?.count_params();
    if actual != arch.param_count {
        return Err(Error::Architecture(format!(
            "param_count {} disagrees with the structure ({actual})",
            arch.param_count
        )));
    }
    Ok(arch)
}

fn block_id(dag: usize, node: usize, block: usize) -> String {
    format!("d{dag}_n{node}_b{block}")
}

/// One graph node per channel block, a cluster per DAG, and one edge per
/// retained connection labeled with its gamma.
pub fn arch_to_dot(arch: &DerivedArchitecture) -> String {
    let k = arch.shape.blocks;
    let mut out = String::from("digraph renas {\n  rankdir=LR;\n  stem [shape=box];\n  head [shape=box];\n");
    for (d, nodes) in arch.dags.iter().enumerate() {
        writeln!(out, "  subgraph cluster_dag{d} {{\n    label=\"DAG {d}\";").unwrap();
        for (j, n) in nodes.iter().enumerate() {
            let op = arch.shape.op_set[n.op];
            for b in 0..k {
                writeln!(
                    out,
                    "    \"{}\" [label=\"node {j} block {b}\\n{op}\"];",
                    block_id(d, j, b)
                )
                .unwrap();
            }
        }
        out.push_str("  }\n");
    }
    for (d, nodes) in arch.dags.iter().enumerate() {
        for (j, n) in nodes.iter().enumerate() {
            for c in &n.inputs {
                writeln!(
                    out,
                    "  \"{}\" -> \"{}\" [label=\"{}\"];",
                    block_id(d, c.src_node, c.src_block),
                    block_id(d, j, c.dst_block),
                    c.gamma
                )
                .unwrap();
            }
        }
    }
    out.push_str("}\n");
    out
}
