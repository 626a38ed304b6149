mod common;

use std::collections::BTreeSet;

use flowmoe::augment::{augment, drop_edges, perturb_statistics, AugmentParams, DropMode};
use flowmoe::graph::{build_graph, embed_edges, readout, FeatureKind};
use flowmoe::ingest::NormStats;
use proptest::prelude::*;

#[test]
fn interner_matches_sorted_unique_addresses() {
    let recs = common::random_records(400, 37, 3, 1);
    let g = build_graph(&recs).unwrap();
    let by_sort: BTreeSet<&str> = recs.iter().flat_map(|r| [r.src_ip.as_str(), r.dst_ip.as_str()]).collect();
    let interned: BTreeSet<&str> = g.nodes().iter().map(|(ip, _)| ip).collect();
    assert_eq!(by_sort, interned);
    for (e, r) in recs.iter().enumerate() {
        let (u, v) = g.endpoints(e);
        assert_eq!(g.nodes().ip(u), r.src_ip);
        assert_eq!(g.nodes().ip(v), r.dst_ip);
    }
}

#[test]
fn readout_is_mean_of_embeddings() {
    let recs = common::random_records(300, 20, 4, 2);
    let mut g = build_graph(&recs).unwrap();
    g.compute_node_features();
    let stats = NormStats::identity(4);
    for kind in [FeatureKind::Avg, FeatureKind::Deg] {
        let m = embed_edges(&g, kind, &stats).unwrap();
        let r = readout(&g, kind, &stats).unwrap();
        for (c, col) in m.columns().into_iter().enumerate() {
            let mean = col.sum() / col.len() as f64;
            assert!((mean - r[c]).abs() < 1e-9);
        }
    }
}

#[test]
fn identity_augmentation_is_bit_identical() {
    let recs = common::random_records(500, 40, 4, 3);
    let mut g = build_graph(&recs).unwrap();
    g.compute_node_features();
    for seed in 0..5 {
        let out = augment(&g, &AugmentParams::identity().with_seed(seed));
        assert_eq!(out, g);
    }
}

#[test]
fn literal_and_inverted_modes_agree_at_half() {
    let recs = common::random_records(500, 40, 2, 4);
    let mut g = build_graph(&recs).unwrap();
    g.compute_node_features();
    let p = AugmentParams::new(0.0, 0.0, 0.5).unwrap().with_seed(11);
    assert_eq!(drop_edges(&g, &p), drop_edges(&g, &p.with_drop_mode(DropMode::Inverted)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn node_features_match_brute_force(n in 1usize..300, hosts in 1usize..30, seed in any::<u64>()) {
        let recs = common::random_records(n, hosts, 3, seed);
        let mut g = build_graph(&recs).unwrap();
        g.compute_node_features();
        common::assert_node_features_consistent(&g, 1e-12);
    }

    #[test]
    fn augmented_graphs_stay_consistent(
        n in 1usize..500,
        hosts in 1usize..40,
        alpha in 0.0f64..1.0,
        beta in 0.0f64..2.0,
        gamma in 0.0f64..1.0,
        inverted in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let recs = common::random_records(n, hosts, 2, seed);
        let mut g = build_graph(&recs).unwrap();
        g.compute_node_features();
        let mode = if inverted { DropMode::Inverted } else { DropMode::Literal };
        let p = AugmentParams::new(alpha, beta, gamma).unwrap().with_seed(seed).with_drop_mode(mode);
        let out = augment(&g, &p);
        if !out.is_empty() {
            common::assert_node_features_consistent(&out, 1e-9);
            // surviving edges are a subsequence of the input edges
            let ids: Vec<u64> = out.flow_ids().to_vec();
            prop_assert!(ids.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(ids.iter().all(|&i| (i as usize) < n));
        }
        let perturbed = perturb_statistics(&g, &p);
        prop_assert_eq!(perturbed.edge_count(), g.edge_count());
        common::assert_node_features_consistent(&perturbed, 1e-9);
    }
}
