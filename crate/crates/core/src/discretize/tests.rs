use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::supergraph::OpKind;

fn positions(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
}

/// Rank by counting how many entries beat each one.
fn rank_oracle(g: &[f64]) -> Vec<bool> {
    let keep = g.len().div_ceil(2);
    (0..g.len())
        .map(|i| {
            let beaten_by = (0..g.len())
                .filter(|&j| g[j] > g[i] || (g[j] == g[i] && j < i))
                .count();
            beaten_by < keep
        })
        .collect()
}

#[test]
fn prune_top_half() {
    assert_eq!(positions(&prune_connections(&[0.9, 0.2, 0.5, 0.4])), vec![0, 2]);
    assert_eq!(positions(&prune_connections(&[0.3; 6])), vec![0, 1, 2]);
    assert_eq!(positions(&prune_connections(&[0.1])), vec![0]);
    assert_eq!(positions(&prune_connections(&[0.1, 0.5, 0.3])), vec![1, 2]);
}

#[test]
fn prune_matches_rank_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..200 {
        let g: Vec<f64> = (0..12).map(|_| (rng.random_range(0..8) as f64) / 4.0 - 0.5).collect();
        assert_eq!(prune_connections(&g), rank_oracle(&g), "{g:?}");
    }
}

#[test]
fn argmax_selection() {
    let alpha = AlphaTable {
        rows: vec![vec![0.1, 0.9, 0.3], vec![0.5, 0.5, 0.5], vec![-1.0, -2.0, -0.5]],
    };
    assert_eq!(select_operations(&alpha), vec![1, 0, 2]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let row: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let c = rng.random_range(-100.0..100.0);
        let shifted: Vec<f64> = row.iter().map(|v| v + c).collect();
        let cubed: Vec<f64> = row.iter().map(|v| v * v * v).collect();
        let a = select_operations(&AlphaTable { rows: vec![row] });
        assert_eq!(a, select_operations(&AlphaTable { rows: vec![shifted] }));
        assert_eq!(a, select_operations(&AlphaTable { rows: vec![cubed] }));
    }
}

fn shape(dags: usize, nodes: usize, blocks: usize, c0: usize) -> NetworkShape {
    NetworkShape {
        in_channels: 3,
        classes: 5,
        dags,
        nodes,
        blocks,
        base_channels: c0,
        op_set: OpKind::default_set(),
    }
}

/// Parent with random alpha and gamma.
fn random_parent(shape: &NetworkShape, seed: u64) -> ParentNetwork {
    let mut p = ParentNetwork::build(shape, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    for row in &mut p.alpha.rows {
        row.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    }
    for (t, k) in p.net.params.iter_mut().zip(&p.net.kinds) {
        if *k == crate::supergraph::ParamKind::Gamma {
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
    }
    p
}

fn prov() -> Provenance {
    Provenance {
        seed: 0,
        step: 0,
        checkpoint_hash: "00".into(),
    }
}

fn images(seed: u64, n: usize, side: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::uniform([n, 3, side, side], 1.0, &mut rng)
}

#[test]
fn pruning_law_holds_on_derived_networks() {
    let p = random_parent(&shape(2, 4, 2, 4), 3);
    let arch = derive(&p, prov()).unwrap();
    let gammas = incoming_gammas(&p.net);
    let mask = arch.mask();
    for (d, nodes) in mask.dags.iter().enumerate() {
        for (j, m) in nodes.iter().enumerate() {
            assert_eq!(m.len(), j * 4);
            assert_eq!(m.iter().filter(|&&b| b).count(), m.len().div_ceil(2));
            let g = &gammas[d][j];
            let kept = g.iter().zip(m).filter(|(_, &b)| b).map(|(v, _)| *v);
            let pruned = g.iter().zip(m).filter(|(_, &b)| !b).map(|(v, _)| *v);
            let min_kept = kept.fold(f64::INFINITY, f64::min);
            let max_pruned = pruned.fold(f64::NEG_INFINITY, f64::max);
            assert!(j == 0 || min_kept >= max_pruned);
        }
    }
    assert_eq!(arch.ops(), select_operations(&p.alpha));
    let f = arch.retained_fraction();
    assert!((0.5..=0.6).contains(&f), "{f}");
}

#[test]
fn derivation_is_deterministic() {
    let p = random_parent(&shape(1, 3, 2, 4), 9);
    assert_eq!(derive(&p, prov()).unwrap(), derive(&p, prov()).unwrap());
}

#[test]
fn single_connection_survives() {
    let p = random_parent(&shape(1, 2, 1, 4), 1);
    let arch = derive(&p, prov()).unwrap();
    assert_eq!(arch.dags[0][1].inputs.len(), 1);
    let dot = arch_to_dot(&arch);
    assert_eq!(dot.matches(" [label=\"node ").count(), 2);
    assert_eq!(dot.matches("->").count(), 1);
    assert!(dot.contains("stem") && dot.contains("head"));
}

#[test]
fn derived_network_matches_masked_parent() {
    for seed in 0..5 {
        let p = random_parent(&shape(2, 3, 2, 4), seed);
        let arch = derive(&p, prov()).unwrap();
        let derived = instantiate(&arch, &p.net).unwrap();
        let x = images(seed, 2, 8);
        let d = check_equivalence(&p.net, &arch, &derived, &x).unwrap();
        assert!(d < 1e-6, "{d}");

        let mut perturbed = arch.clone();
        perturbed.dags[0][2].inputs[0].gamma += 0.5;
        let derived2 = instantiate(&perturbed, &p.net).unwrap();
        assert!(check_equivalence(&p.net, &arch, &derived2, &x).unwrap() > 0.0);
    }
}

#[test]
fn unmasked_parent_differs_from_derived() {
    let p = random_parent(&shape(1, 3, 2, 4), 2);
    let arch = derive(&p, prov()).unwrap();
    let derived = instantiate(&arch, &p.net).unwrap();
    let x = images(0, 2, 8);
    let full = p.net.logits(&x, &arch.ops()).unwrap();
    let single = derived.logits(&x, &[0; 3]).unwrap();
    assert!(full.max_abs_diff(&single) > 1e-6);
}

#[test]
fn equivalence_rejects_mismatched_networks() {
    let p = random_parent(&shape(1, 3, 2, 4), 2);
    let q = random_parent(&shape(1, 2, 2, 4), 2);
    let arch = derive(&q, prov()).unwrap();
    let derived = instantiate(&arch, &q.net).unwrap();
    assert!(check_equivalence(&p.net, &arch, &derived, &images(0, 1, 8)).is_err());
}

#[test]
fn space_size_values() {
    assert_eq!(search_space_size(1, 3, 6).to_string(), "1728");
    assert_eq!(search_space_size(1, 1, 1).to_string(), "1");
    assert_eq!(search_space_size(2, 8, 6).to_string(), "901736973729792");
    assert_eq!(
        search_space_size(3, 10, 6).to_string(),
        "6382393305518410039296"
    );
    assert!((log10_big(&search_space_size(1, 3, 6)) - 1728f64.log10()).abs() < 1e-12);
}

#[test]
fn space_size_laws() {
    for m in 1..4u64 {
        for n in 1..7u64 {
            for o in 1..7u64 {
                let s = search_space_size(m, n, o);
                assert_eq!(&s % BigUint::from(m), BigUint::ZERO);
                assert_eq!(&s % BigUint::from(o), BigUint::ZERO);
            }
        }
    }
    for n in 1..12u64 {
        let a = search_space_size(1, n, 1);
        let b = search_space_size(1, n + 1, 1);
        assert_eq!(b, a << (n as usize));
    }
}

#[test]
fn json_round_trip_is_byte_identical() {
    let p = random_parent(&shape(2, 3, 2, 4), 4);
    let arch = derive(&p, prov()).unwrap();
    let json = arch_to_json(&arch);
    let back = arch_from_json(&json).unwrap();
    assert_eq!(back, arch);
    assert_eq!(arch_to_json(&back), json);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["version"], 1);
    for key in ["M", "N", "K", "C0", "classes", "op_set"] {
        assert!(v["config"].get(key).is_some(), "{key}");
    }
    let edges: usize = v["dags"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|d| d["nodes"].as_array().unwrap())
        .map(|n| n["in"].as_array().unwrap().len())
        .sum();
    assert_eq!(edges, arch.mask().retained());
    assert_eq!(arch_to_dot(&arch).matches("->").count(), edges);
}

#[test]
fn malformed_architectures_are_rejected() {
    let p = random_parent(&shape(1, 3, 2, 4), 4);
    let json = arch_to_json(&derive(&p, prov()).unwrap());
    let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
    v["version"] = 2.into();
    assert!(arch_from_json(&v.to_string()).is_err());
    let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
    v["dags"][0]["nodes"][1]["in"][0]["src_node"] = 1.into();
    assert!(arch_from_json(&v.to_string()).is_err());
    let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
    v["param_count"] = 1.into();
    assert!(arch_from_json(&v.to_string()).is_err());
}
