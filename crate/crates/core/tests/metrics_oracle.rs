mod common;

use flowmoe::eval::{compute_metrics, oracle_select, GateCheck};
use flowmoe::experts::ExpertOutputs;
use flowmoe::gate::{gating_labels, GateSupervision};
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

fn random_outputs(n: usize, seed: u64) -> (ExpertOutputs, Vec<u8>) {
    let mut r = common::rng(seed);
    let mut probs = || {
        let mut a = Array2::zeros((n, 2));
        for i in 0..n {
            // a few exact ties to exercise the tie rule
            let p = if r.random_range(0..20) == 0 { 0.5 } else { r.random_range(0.0..1.0) };
            a[[i, 0]] = 1.0 - p;
            a[[i, 1]] = p;
        }
        a
    };
    let p_avg = probs();
    let p_deg = probs();
    let labels: Vec<u8> = (0..n).map(|_| r.random_range(0..2u8)).collect();
    let mut out = ExpertOutputs {
        p_avg,
        p_deg,
        loss_avg: None,
        loss_deg: None,
    };
    out.attach_losses(&labels).unwrap();
    (out, labels)
}

fn naive_counts(pred: &[u8], labels: &[u8]) -> (u64, u64, u64, u64) {
    let mut c = (0, 0, 0, 0);
    for (&p, &y) in pred.iter().zip(labels) {
        match (p, y) {
            (1, 1) => c.0 += 1,
            (1, 0) => c.1 += 1,
            (0, 0) => c.2 += 1,
            _ => c.3 += 1,
        }
    }
    c
}

#[test]
fn metrics_match_naive_counting() {
    let mut r = common::rng(1);
    let pred: Vec<u8> = (0..1000).map(|_| r.random_range(0..2u8)).collect();
    let labels: Vec<u8> = (0..1000).map(|_| r.random_range(0..2u8)).collect();
    let m = compute_metrics(&pred, &labels, None).unwrap();
    let (tp, fp, tn, fn_) = naive_counts(&pred, &labels);
    assert_eq!((m.tp, m.fp, m.tn, m.fn_), (tp, fp, tn, fn_));
    assert_eq!(m.acc, (tp + tn) as f64 / 1000.0);
    let p = tp as f64 / (tp + fp) as f64;
    let rc = tp as f64 / (tp + fn_) as f64;
    assert!((m.f1 - 2.0 * p * rc / (p + rc)).abs() < 1e-12);
}

#[test]
fn f1_degenerate_cases() {
    assert_eq!(compute_metrics(&[0, 0], &[0, 0], None).unwrap().f1, 0.0);
    assert_eq!(compute_metrics(&[1], &[1], None).unwrap().f1, 1.0);
    assert!(compute_metrics(&[1], &[1, 0], None).is_err());
}

#[test]
fn oracle_matches_brute_force_min_loss() {
    let (out, labels) = random_outputs(500, 2);
    let sel = oracle_select(&out, &labels).unwrap();
    for e in 0..500 {
        let y = labels[e] as usize;
        let la = -out.p_avg[[e, y]].max(1e-12).ln();
        let ld = -out.p_deg[[e, y]].max(1e-12).ln();
        let pick_avg = la <= ld;
        let p = if pick_avg { out.p_avg.row(e) } else { out.p_deg.row(e) };
        let class = (p[1] > p[0]) as u8;
        assert_eq!(sel.chosen[e], (!pick_avg) as u8, "edge {e}");
        assert_eq!(sel.class[e], class, "edge {e}");
    }
}

#[test]
fn gate_accuracy_counts_masked_edges_only() {
    let (out, labels) = random_outputs(300, 3);
    let sup: GateSupervision = gating_labels(&out, &labels).unwrap();
    let chosen = vec![0u8; 300];
    let pred = vec![0u8; 300];
    let m = compute_metrics(&pred, &labels, Some(GateCheck { chosen: &chosen, supervision: &sup })).unwrap();
    let masked: Vec<usize> = (0..300).filter(|&e| sup.mask[e]).collect();
    let hits = masked.iter().filter(|&&e| sup.gate_label[e] == 0).count();
    assert_eq!(m.n_masked as usize, masked.len());
    assert!((m.acc_gate.unwrap() - hits as f64 / masked.len() as f64).abs() < 1e-12);
}

proptest! {
    #[test]
    fn oracle_dominates_both_experts(n in 1usize..400, seed in any::<u64>()) {
        let (out, labels) = random_outputs(n, seed);
        let sel = oracle_select(&out, &labels).unwrap();
        let acc = |p: &Array2<f64>| {
            let pred: Vec<u8> = p.rows().into_iter().map(|r| (r[1] > r[0]) as u8).collect();
            compute_metrics(&pred, &labels, None).unwrap().acc
        };
        prop_assert!(sel.metrics.acc >= acc(&out.p_avg).max(acc(&out.p_deg)));
    }
}
