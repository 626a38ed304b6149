//! Drift-motivated graph augmentation: flow-statistic perturbation and random
//! edge dropping.
//!
//! Random draws come from a ChaCha8 generator seeded with
//! [`AugmentParams::seed`]. Edge dropping reads stream 0 (first the keep level
//! `a`, then one uniform per edge in edge order); perturbation reads stream 1
//! (first the bias `b`, then the noise scale `σ`, then one standard normal per
//! feature value in row-major order). A bound of zero skips its draw.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::TrafficGraph;

/// How the edge-keep level `a` is drawn from `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DropMode {
    /// `a ~ U(γ, 1)`: larger γ keeps more edges.
    #[default]
    Literal,
    /// `a ~ U(1 − γ, 1)`: larger γ drops more edges.
    Inverted,
}

impl fmt::Display for DropMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DropMode::Literal => "literal",
            DropMode::Inverted => "inverted",
        })
    }
}

impl FromStr for DropMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "literal" => Ok(DropMode::Literal),
            "inverted" => Ok(DropMode::Inverted),
            other => Err(Error::InvalidArgument(format!("unknown drop mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    /// Bias bound: `b ~ U(−alpha, alpha)`, in normalized feature units.
    pub alpha: f64,
    /// Noise-scale bound: `σ ~ U(0, beta)`; noise is `N(0, σ²)` per value.
    pub beta: f64,
    /// Lower bound on the edge-keep level (see [`DropMode`]).
    pub gamma: f64,
    pub seed: u64,
    pub drop_mode: DropMode,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams::identity()
    }
}

impl AugmentParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let p = AugmentParams {
            alpha,
            beta,
            gamma,
            seed: 0,
            drop_mode: DropMode::Literal,
        };
        p.validate()?;
        Ok(p)
    }

    /// No perturbation, every edge kept.
    pub fn identity() -> Self {
        AugmentParams {
            alpha: 0.0,
            beta: 0.0,
            gamma: 1.0,
            seed: 0,
            drop_mode: DropMode::Literal,
        }
    }

    /// Expert-training defaults `(0.2, 0.5, 0.5)`.
    pub fn stage1_default() -> Self {
        AugmentParams {
            alpha: 0.2,
            beta: 0.5,
            gamma: 0.5,
            ..AugmentParams::identity()
        }
    }

    /// Gate-training defaults `(0.0, 1.0, 1.0)`.
    pub fn stage2_default() -> Self {
        AugmentParams {
            alpha: 0.0,
            beta: 1.0,
            gamma: 1.0,
            ..AugmentParams::identity()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_drop_mode(mut self, mode: DropMode) -> Self {
        self.drop_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::InvalidArgument(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::InvalidArgument(format!("beta must be finite and >= 0, got {}", self.beta)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidArgument(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        Ok(())
    }

    /// Lower end of the interval the keep level is drawn from.
    pub fn keep_floor(&self) -> f64 {
        match self.drop_mode {
            DropMode::Literal => self.gamma,
            DropMode::Inverted => 1.0 - self.gamma,
        }
    }

    pub fn perturbs(&self) -> bool {
        self.alpha > 0.0 || self.beta > 0.0
    }

    pub fn drops(&self) -> bool {
        self.keep_floor() < 1.0
    }

    pub fn is_identity(&self) -> bool {
        !self.perturbs() && !self.drops()
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Adds `ε + b` to every edge feature, with `b ~ U(−α, α)` and
/// `σ ~ U(0, β)` drawn once for the whole graph and `ε ~ N(0, σ²)` drawn per
/// value. Node features are recomputed; the input is untouched.
pub fn perturb_statistics(graph: &TrafficGraph, params: &AugmentParams) -> TrafficGraph {
    let (g, _) = perturb_with_draws(graph, params);
    g
}

/// Like [`perturb_statistics`], also returning the drawn `(b, σ)`.
pub fn perturb_with_draws(graph: &TrafficGraph, params: &AugmentParams) -> (TrafficGraph, (f64, f64)) {
    if !params.perturbs() || graph.is_empty() {
        let mut g = graph.clone();
        if !g.has_node_features() && !g.is_empty() {
            g.compute_node_features();
        }
        return (g, (0.0, 0.0));
    }
    let mut rng = stream(params.seed, 1);
    let b = if params.alpha > 0.0 {
        rng.random_range(-params.alpha..=params.alpha)
    } else {
        0.0
    };
    let sigma = if params.beta > 0.0 {
        rng.random_range(0.0..=params.beta)
    } else {
        0.0
    };
    let features: Vec<f64> = graph
        .features()
        .iter()
        .map(|&f| {
            let eps: f64 = if params.beta > 0.0 {
                sigma * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            f + eps + b
        })
        .collect();
    let g = graph
        .with_edge_features(features)
        .expect("same feature count");
    (g, (b, sigma))
}

/// Keeps each edge iff `m ≤ a`, where `a` is drawn once from
/// `U(keep_floor, 1)` and `m ~ U(0, 1)` per edge. Nodes left without edges are
/// removed. Returns [`TrafficGraph::empty`] when nothing survives.
pub fn drop_edges(graph: &TrafficGraph, params: &AugmentParams) -> TrafficGraph {
    drop_with_level(graph, params).0
}

/// Like [`drop_edges`], also returning the drawn keep level `a`.
pub fn drop_with_level(graph: &TrafficGraph, params: &AugmentParams) -> (TrafficGraph, f64) {
    if !params.drops() || graph.is_empty() {
        let mut g = graph.clone();
        if !g.has_node_features() && !g.is_empty() {
            g.compute_node_features();
        }
        return (g, 1.0);
    }
    let mut rng = stream(params.seed, 0);
    let a: f64 = rng.random_range(params.keep_floor()..=1.0);
    let keep: Vec<bool> = (0..graph.edge_count())
        .map(|_| rng.random::<f64>() <= a)
        .collect();
    (graph.retain_edges(&keep), a)
}

/// Drops edges, then perturbs the surviving features. Node features on the
/// result are consistent with its edge set.
pub fn augment(graph: &TrafficGraph, params: &AugmentParams) -> TrafficGraph {
    let dropped = drop_edges(graph, params);
    if dropped.is_empty() {
        return dropped;
    }
    perturb_statistics(&dropped, params)
}
