//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use flowmoe::graph::TrafficGraph;
use flowmoe::ingest::FlowRecord;
use flowmoe::nn::{Activation, MlpModel};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_batch(rows: usize, cols: usize, seed: u64) -> (Array2<f64>, Vec<u8>) {
    let mut r = rng(seed);
    let x = Array2::from_shape_fn((rows, cols), |_| r.random_range(-2.0..2.0));
    let y = (0..rows).map(|_| r.random_range(0..2u8)).collect();
    (x, y)
}

/// Largest relative error between analytic and central-difference gradients
/// over every parameter, and the number of parameters compared.
pub fn finite_difference_check(dims: &[usize], act: Activation, seed: u64) -> (f64, usize) {
    let model = MlpModel::with_activation(dims, act, seed).unwrap();
    let (x, y) = random_batch(24, dims[0], seed ^ 0xabc);
    let grads = model.backward(x.view(), &y).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut count = 0;
    let loss_at = |m: &MlpModel| m.loss(x.view(), &y).unwrap();
    for k in 0..model.num_layers() {
        let (rows, cols) = model.weights()[k].dim();
        for i in 0..rows {
            for j in 0..cols {
                let mut plus = model.clone();
                plus.layer_mut(k).0[[i, j]] += h;
                let mut minus = model.clone();
                minus.layer_mut(k).0[[i, j]] -= h;
                let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
                worst = worst.max(rel_err(grads.weights[k][[i, j]], numeric));
                count += 1;
            }
        }
        for i in 0..model.biases()[k].len() {
            let mut plus = model.clone();
            plus.layer_mut(k).1[i] += h;
            let mut minus = model.clone();
            minus.layer_mut(k).1[i] -= h;
            let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
            worst = worst.max(rel_err(grads.biases[k][i], numeric));
            count += 1;
        }
    }
    (worst, count)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Random flows over a small address space, with self-loops and repeated pairs.
pub fn random_records(n: usize, hosts: usize, d: usize, seed: u64) -> Vec<FlowRecord> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| FlowRecord {
            flow_id: i as u64,
            src_ip: format!("10.0.0.{}", r.random_range(0..hosts)),
            dst_ip: format!("10.0.0.{}", r.random_range(0..hosts)),
            timestamp: i as f64,
            features: (0..d).map(|_| r.random_range(-3.0..3.0)).collect(),
            label: Some(r.random_range(0..2u8)),
        })
        .collect()
}

/// Node features recomputed by scanning every edge for every node.
pub struct BruteNodes {
    pub avg: BTreeMap<String, Vec<f64>>,
    pub deg: BTreeMap<String, f64>,
}

pub fn brute_node_features(g: &TrafficGraph) -> BruteNodes {
    let d = g.feature_dim();
    let mut avg = BTreeMap::new();
    let mut deg = BTreeMap::new();
    for (ip, u) in g.nodes().iter() {
        let mut sum = vec![0.0; d];
        let mut count = 0.0;
        for e in 0..g.edge_count() {
            let (s, t) = g.endpoints(e);
            let hits = (s == u) as u32 + (t == u) as u32;
            for _ in 0..hits {
                for (acc, v) in sum.iter_mut().zip(g.edge_features(e)) {
                    *acc += v;
                }
                count += 1.0;
            }
        }
        avg.insert(ip.to_string(), sum.iter().map(|s| s / count).collect());
        deg.insert(ip.to_string(), count);
    }
    BruteNodes { avg, deg }
}

/// Asserts stored node features match the brute-force recomputation.
pub fn assert_node_features_consistent(g: &TrafficGraph, tol: f64) {
    let brute = brute_node_features(g);
    for (ip, u) in g.nodes().iter() {
        assert_eq!(g.h_deg(u), brute.deg[ip], "degree of {ip}");
        for (a, b) in g.h_avg(u).iter().zip(&brute.avg[ip]) {
            assert!((a - b).abs() <= tol, "h_avg of {ip}: {a} vs {b}");
        }
    }
}
