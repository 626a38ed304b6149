//! Throughput of graph construction and MoE inference.

use std::fmt::Write as _;
use std::time::Instant;

use crate::config::BenchConfig;
use crate::error::Result;
use crate::experts::ExpertBundle;
use crate::gate::{moe_predict, GateModel};
use crate::ingest::{FlowRecord, NormStats};
use crate::training::{build_window_graphs, HyperConfig};

use super::synth::{generate_latent_flows, SynthConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageTiming {
    pub secs: f64,
    pub flows_per_sec: f64,
}

impl StageTiming {
    fn new(flows: usize, secs: f64) -> Self {
        StageTiming {
            secs,
            flows_per_sec: flows as f64 / secs.max(1e-12),
        }
    }
}

/// Construction time at half and full flow count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingProbe {
    pub half_flows: usize,
    pub half_secs: f64,
    pub full_secs: f64,
}

impl ScalingProbe {
    pub fn ratio(&self) -> f64 {
        self.full_secs / self.half_secs.max(1e-12)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub flows: usize,
    pub feature_dim: usize,
    pub graphs: usize,
    pub threads: usize,
    /// Median over repeats.
    pub construction: StageTiming,
    pub inference: StageTiming,
    pub construction_runs: Vec<f64>,
    pub inference_runs: Vec<f64>,
    /// Peak resident set size of the process, where the platform reports it.
    pub peak_rss_bytes: Option<u64>,
    pub scaling: Option<ScalingProbe>,
}

impl BenchReport {
    /// Both stages back to back.
    pub fn end_to_end(&self) -> StageTiming {
        StageTiming::new(self.flows, self.construction.secs + self.inference.secs)
    }

    pub fn bytes_per_flow(&self) -> Option<f64> {
        self.peak_rss_bytes.map(|b| b as f64 / self.flows as f64)
    }

    /// Largest relative deviation of a run from the median, over both stages.
    pub fn spread(&self) -> f64 {
        let dev = |runs: &[f64], med: f64| runs.iter().map(|r| (r - med).abs() / med).fold(0.0, f64::max);
        dev(&self.construction_runs, self.construction.secs).max(dev(&self.inference_runs, self.inference.secs))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "flows={}", self.flows);
        let _ = writeln!(s, "feature_dim={}", self.feature_dim);
        let _ = writeln!(s, "graphs={}", self.graphs);
        let _ = writeln!(s, "threads={}", self.threads);
        let _ = writeln!(s, "construction_secs={:.6}", self.construction.secs);
        let _ = writeln!(s, "construction_flows_per_sec={:.0}", self.construction.flows_per_sec);
        let _ = writeln!(s, "inference_secs={:.6}", self.inference.secs);
        let _ = writeln!(s, "inference_flows_per_sec={:.0}", self.inference.flows_per_sec);
        let _ = writeln!(s, "end_to_end_flows_per_sec={:.0}", self.end_to_end().flows_per_sec);
        let _ = writeln!(s, "run_spread={:.4}", self.spread());
        match self.peak_rss_bytes {
            Some(b) => {
                let _ = writeln!(s, "peak_rss_bytes={b}");
                let _ = writeln!(s, "bytes_per_flow={:.1}", b as f64 / self.flows as f64);
            }
            None => {
                let _ = writeln!(s, "peak_rss_bytes=unavailable");
            }
        }
        if let Some(p) = &self.scaling {
            let _ = writeln!(s, "scaling_half_flows={}", p.half_flows);
            let _ = writeln!(s, "scaling_half_secs={:.6}", p.half_secs);
            let _ = writeln!(s, "scaling_full_secs={:.6}", p.full_secs);
            let _ = writeln!(s, "scaling_ratio={:.4}", p.ratio());
        }
        s
    }
}

/// High-water mark of resident memory from `/proc/self/status`.
pub fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn bench_flows(cfg: &BenchConfig, flows: usize, seed: u64) -> Result<Vec<FlowRecord>> {
    let synth = SynthConfig {
        flows,
        flows_per_window: cfg.flows_per_window,
        feature_dim: cfg.feature_dim,
        servers: 4096,
        ..SynthConfig::default()
    };
    generate_latent_flows(&synth, seed)
}

fn time_construction(records: &[FlowRecord], window_secs: f64, norm: &NormStats) -> Result<(f64, usize)> {
    // cloning the input is setup, not construction
    let input = records.to_vec();
    let t = Instant::now();
    let graphs = build_window_graphs(input, window_secs, norm)?;
    Ok((t.elapsed().as_secs_f64(), graphs.len()))
}

/// Times construction and inference over synthetic flows. Without a trained
/// model an untrained one of the default shape is used; inference cost does
/// not depend on the weights.
pub fn throughput_bench(
    cfg: &BenchConfig,
    model: Option<(&ExpertBundle, &GateModel)>,
    seed: u64,
) -> Result<BenchReport> {
    cfg.validate()?;
    let window_secs = SynthConfig::default().window_secs;
    let records = bench_flows(cfg, cfg.flows, seed)?;
    let norm = match model {
        Some((bundle, _)) => bundle.norm.clone(),
        None => NormStats::identity(cfg.feature_dim),
    };
    let owned;
    let (bundle, gate) = match model {
        Some(m) => m,
        None => {
            let hyper = HyperConfig {
                seed,
                ..HyperConfig::default()
            };
            owned = (hyper.init_bundle(norm.clone())?, hyper.init_gate(cfg.feature_dim, hyper.gate_input)?);
            (&owned.0, &owned.1)
        }
    };

    let half = match cfg.scaling_probe && cfg.flows >= 2 {
        true => Some(bench_flows(cfg, cfg.flows / 2, seed)?),
        false => None,
    };
    let mut construction_runs = Vec::with_capacity(cfg.repeats);
    let mut inference_runs = Vec::with_capacity(cfg.repeats);
    let mut half_runs = Vec::with_capacity(cfg.repeats);
    let mut graph_count = 0;
    // Pass 0 is an untimed warm-up: first-touch page faults otherwise land
    // on whichever run first reaches the peak footprint.
    for pass in 0..=cfg.repeats {
        let timed = pass > 0;
        if let Some(h) = &half {
            let secs = time_construction(h, window_secs, &norm)?.0;
            if timed {
                half_runs.push(secs);
            }
        }
        let input = records.clone();
        let t = Instant::now();
        let graphs = build_window_graphs(input, window_secs, &norm)?;
        let build_secs = t.elapsed().as_secs_f64();
        graph_count = graphs.len();

        let t = Instant::now();
        let mut routed = 0usize;
        for g in &graphs {
            routed += moe_predict(bundle, gate, g)?.class.len();
        }
        debug_assert_eq!(routed, cfg.flows);
        if timed {
            construction_runs.push(build_secs);
            inference_runs.push(t.elapsed().as_secs_f64());
        }
    }
    let construction = StageTiming::new(cfg.flows, median(&construction_runs));
    let inference = StageTiming::new(cfg.flows, median(&inference_runs));
    let peak = peak_rss_bytes();
    let scaling = half.map(|h| ScalingProbe {
        half_flows: h.len(),
        half_secs: median(&half_runs),
        full_secs: construction.secs,
    });

    Ok(BenchReport {
        flows: cfg.flows,
        feature_dim: cfg.feature_dim,
        graphs: graph_count,
        threads: rayon::current_num_threads(),
        construction,
        inference,
        construction_runs,
        inference_runs,
        peak_rss_bytes: peak,
        scaling,
    })
}
