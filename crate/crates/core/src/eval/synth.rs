//! Synthetic drift benchmark.
//!
//! Every flow feature is drawn around its source host's mean, and both classes
//! share the same standard-normal marginal per feature, so a single flow says
//! almost nothing about its class. Graph context does:
//!
//! * malicious sources open many more flows per window (degree signal);
//! * benign hosts repeat near-identical flows while attacking hosts spread
//!   theirs widely around the host mean, so the gap between a flow and its
//!   source's averaged features separates the classes (average signal).
//!
//! Destinations come from a shared server pool with Zipf popularity. The last
//! `service_columns` features are set by the destination service (plus a
//! little jitter) and carry no class information.
//! Features are generated in standardized units and mapped to byte/packet
//! scales with a fixed affine transform per column.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal, Zipf};

use crate::augment::{augment, AugmentParams};
use crate::error::{Error, Result};
use crate::graph::build_graph;
use crate::history::mix_seed;
use crate::ingest::{split_by_time, window_flows, write_flow_csv, FlowRecord, SchemaConfig, BENIGN, MALICIOUS};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub flows: usize,
    pub flows_per_window: usize,
    pub window_secs: f64,
    pub malicious_fraction: f64,
    pub feature_dim: usize,
    pub benign_mean_degree: f64,
    pub malicious_mean_degree: f64,
    pub servers: usize,
    pub server_zipf: f64,
    /// Standard deviation of a benign flow around its host mean.
    pub benign_flow_spread: f64,
    /// Standard deviation of malicious host means around zero.
    pub malicious_host_spread: f64,
    /// Trailing feature columns determined by the destination service.
    pub service_columns: usize,
    /// Jitter of a service column around the server's value.
    pub service_jitter: f64,
    pub train_fraction: f64,
    /// Applied to every training window in standardized units.
    pub pre_augment: AugmentParams,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            flows: 20_000,
            flows_per_window: 1_000,
            window_secs: 30.0,
            malicious_fraction: 0.5,
            feature_dim: 4,
            benign_mean_degree: 3.0,
            malicious_mean_degree: 12.0,
            servers: 64,
            server_zipf: 1.0,
            benign_flow_spread: 0.15,
            malicious_host_spread: 0.5,
            service_columns: 1,
            service_jitter: 0.05,
            train_fraction: 0.5,
            pre_augment: AugmentParams {
                alpha: 0.0,
                beta: 0.1,
                gamma: 0.9,
                ..AugmentParams::identity()
            },
        }
    }
}

const OFFSETS: [f64; 4] = [1200.0, 1800.0, 40.0, 50.0];
const SCALES: [f64; 4] = [150.0, 200.0, 5.0, 6.0];
const NAMES: [&str; 4] = ["in_bytes", "out_bytes", "in_pkts", "out_pkts"];

fn column_affine(j: usize) -> (f64, f64) {
    (OFFSETS[j % 4] * (1 + j / 4) as f64, SCALES[j % 4])
}

/// Column names of the synthetic feature vector.
pub fn synthetic_feature_names(d: usize) -> Vec<String> {
    (0..d)
        .map(|j| if j < 4 { NAMES[j].to_string() } else { format!("stat{j}") })
        .collect()
}

/// CSV layout of the synthetic files.
pub fn synthetic_schema(d: usize) -> SchemaConfig {
    SchemaConfig {
        feature_cols: synthetic_feature_names(d),
        label_required: true,
        ..SchemaConfig::default()
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, m: &str| Err(Error::config(k, m));
        if !(self.malicious_fraction > 0.0 && self.malicious_fraction < 1.0) {
            return bad("synth.malicious_fraction", "invalid class balance: must lie strictly between 0 and 1");
        }
        if self.flows == 0 || self.flows_per_window == 0 {
            return bad("synth.flows", "flow counts must be positive");
        }
        if !(self.window_secs > 0.0 && self.window_secs.is_finite()) {
            return bad("synth.window_secs", "must be positive");
        }
        if self.feature_dim == 0 {
            return bad("synth.feature_dim", "must be positive");
        }
        if self.service_columns >= self.feature_dim {
            return bad("synth.service_columns", "must leave at least one host-driven column");
        }
        if !(0.0..1.0).contains(&self.service_jitter) {
            return bad("synth.service_jitter", "must lie in [0, 1)");
        }
        if !(self.benign_mean_degree >= 1.0 && self.malicious_mean_degree >= 1.0) {
            return bad("synth.benign_mean_degree", "mean degrees must be at least 1");
        }
        if self.servers == 0 || !(self.server_zipf >= 0.0) {
            return bad("synth.servers", "need at least one server and a non-negative exponent");
        }
        if !(0.0..1.0).contains(&self.benign_flow_spread) {
            return bad("synth.benign_flow_spread", "must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.malicious_host_spread) {
            return bad("synth.malicious_host_spread", "must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return bad("synth.train_fraction", "must lie in [0, 1]");
        }
        self.pre_augment.validate()
    }

    pub fn windows(&self) -> usize {
        self.flows.div_ceil(self.flows_per_window)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub train: Vec<FlowRecord>,
    pub test: Vec<FlowRecord>,
}

struct HostClass {
    label: u8,
    mean_degree: f64,
    /// Spread of host means; flow noise takes the remaining unit variance.
    host_std: f64,
}

fn host_classes(cfg: &SynthConfig) -> [HostClass; 2] {
    let benign_noise = cfg.benign_flow_spread;
    [
        HostClass {
            label: BENIGN,
            mean_degree: cfg.benign_mean_degree,
            host_std: (1.0 - benign_noise * benign_noise).sqrt(),
        },
        HostClass {
            label: MALICIOUS,
            mean_degree: cfg.malicious_mean_degree,
            host_std: cfg.malicious_host_spread,
        },
    ]
}

fn source_ip(k: u64) -> String {
    format!("10.{}.{}.{}", (k >> 16) & 0xff, (k >> 8) & 0xff, k & 0xff)
}

fn server_ip(k: usize) -> String {
    format!("172.16.{}.{}", k / 256, k % 256)
}

/// Flows in standardized units, time-ordered, with sequential flow ids.
pub fn generate_latent_flows(cfg: &SynthConfig, seed: u64) -> Result<Vec<FlowRecord>> {
    cfg.validate()?;
    let d = cfg.feature_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zipf = Zipf::new(cfg.servers as f64, cfg.server_zipf)
        .map_err(|e| Error::config("synth.server_zipf", e.to_string()))?;
    let classes = host_classes(cfg);
    let host_dims = d - cfg.service_columns;
    let service_std = (1.0 - cfg.service_jitter * cfg.service_jitter).sqrt();
    let services: Vec<Vec<f64>> = (0..cfg.servers)
        .map(|_| {
            (0..cfg.service_columns)
                .map(|_| service_std * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(cfg.flows);
    let mut next_host = 1u64;
    for w in 0..cfg.windows() {
        let size = cfg.flows_per_window.min(cfg.flows - w * cfg.flows_per_window);
        let n_mal = (size as f64 * cfg.malicious_fraction).round() as usize;
        let mut window = Vec::with_capacity(size);
        for (class, quota) in classes.iter().zip([size - n_mal, n_mal]) {
            let flow_std = (1.0 - class.host_std * class.host_std).sqrt();
            let extra = Poisson::new(class.mean_degree - 1.0).ok();
            let mut left = quota;
            while left > 0 {
                let k = match &extra {
                    Some(p) => 1 + p.sample(&mut rng) as usize,
                    None => 1,
                }
                .min(left);
                left -= k;
                let ip = source_ip(next_host);
                next_host += 1;
                let mean: Vec<f64> = (0..host_dims)
                    .map(|_| class.host_std * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                for _ in 0..k {
                    let server = zipf.sample(&mut rng) as usize - 1;
                    let mut features: Vec<f64> = mean
                        .iter()
                        .map(|m| m + flow_std * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    features.extend(
                        services[server]
                            .iter()
                            .map(|v| v + cfg.service_jitter * rng.sample::<f64, _>(StandardNormal)),
                    );
                    let t = (w as f64 + rng.random::<f64>()) * cfg.window_secs;
                    window.push(FlowRecord {
                        flow_id: 0,
                        src_ip: ip.clone(),
                        dst_ip: server_ip(server),
                        timestamp: t,
                        features,
                        label: Some(class.label),
                    });
                }
            }
        }
        window.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        out.extend(window);
    }
    for (i, r) in out.iter_mut().enumerate() {
        r.flow_id = i as u64;
    }
    Ok(out)
}

/// Maps standardized features to raw byte/packet scales in place.
pub fn to_raw_units(records: &mut [FlowRecord]) {
    for r in records {
        for (j, v) in r.features.iter_mut().enumerate() {
            let (o, s) = column_affine(j);
            *v = o + s * *v;
        }
    }
}

fn pre_augment_windows(
    records: Vec<FlowRecord>,
    cfg: &SynthConfig,
    seed: u64,
) -> Result<Vec<FlowRecord>> {
    if records.is_empty() || cfg.pre_augment.is_identity() {
        return Ok(records);
    }
    let mut out = Vec::with_capacity(records.len());
    for (w, window) in window_flows(records, cfg.window_secs)?.into_iter().enumerate() {
        let g = build_graph(&window)?;
        let params = cfg.pre_augment.with_seed(mix_seed(seed, &[0x5eed, w as u64]));
        let ag = augment(&g, &params);
        // edges keep window order, so a merge walk recovers the records
        let mut it = window.into_iter();
        for e in 0..ag.edge_count() {
            let id = ag.flow_ids()[e];
            let mut r = it.by_ref().find(|r| r.flow_id == id).expect("surviving edge");
            r.features.copy_from_slice(ag.edge_features(e));
            out.push(r);
        }
    }
    Ok(out)
}

/// Train and test records in raw units. Training windows are pre-augmented
/// with [`SynthConfig::pre_augment`]; test windows are left clean so drift
/// scenarios can be applied at evaluation time.
pub fn generate_synthetic(cfg: &SynthConfig, seed: u64) -> Result<SyntheticDataset> {
    let flows = generate_latent_flows(cfg, seed)?;
    let (train, test) = split_by_time(&flows, cfg.train_fraction)?;
    let mut train = pre_augment_windows(train, cfg, seed)?;
    let mut test = test;
    to_raw_units(&mut train);
    to_raw_units(&mut test);
    Ok(SyntheticDataset { train, test })
}

pub fn synth_manifest(cfg: &SynthConfig, seed: u64, data: &SyntheticDataset) -> String {
    let mut s = String::new();
    let a = &cfg.pre_augment;
    let _ = writeln!(s, "seed={seed}");
    let _ = writeln!(s, "synth.flows={}", cfg.flows);
    let _ = writeln!(s, "synth.flows_per_window={}", cfg.flows_per_window);
    let _ = writeln!(s, "synth.window_secs={}", cfg.window_secs);
    let _ = writeln!(s, "synth.malicious_fraction={}", cfg.malicious_fraction);
    let _ = writeln!(s, "synth.feature_dim={}", cfg.feature_dim);
    let _ = writeln!(s, "synth.benign_mean_degree={}", cfg.benign_mean_degree);
    let _ = writeln!(s, "synth.malicious_mean_degree={}", cfg.malicious_mean_degree);
    let _ = writeln!(s, "synth.servers={}", cfg.servers);
    let _ = writeln!(s, "synth.server_zipf={}", cfg.server_zipf);
    let _ = writeln!(s, "synth.benign_flow_spread={}", cfg.benign_flow_spread);
    let _ = writeln!(s, "synth.malicious_host_spread={}", cfg.malicious_host_spread);
    let _ = writeln!(s, "synth.service_columns={}", cfg.service_columns);
    let _ = writeln!(s, "synth.service_jitter={}", cfg.service_jitter);
    let _ = writeln!(s, "synth.train_fraction={}", cfg.train_fraction);
    let _ = writeln!(s, "synth.pre_alpha={}", a.alpha);
    let _ = writeln!(s, "synth.pre_beta={}", a.beta);
    let _ = writeln!(s, "synth.pre_gamma={}", a.gamma);
    let _ = writeln!(s, "synth.pre_drop_mode={}", a.drop_mode);
    let _ = writeln!(s, "train_rows={}", data.train.len());
    let _ = writeln!(s, "test_rows={}", data.test.len());
    s
}

/// Writes `train.csv`, `test.csv` and `manifest.txt` into `dir`.
pub fn write_synthetic(dir: &Path, cfg: &SynthConfig, seed: u64, data: &SyntheticDataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let schema = synthetic_schema(cfg.feature_dim);
    write_flow_csv(&data.train, &schema, dir.join("train.csv"))?;
    write_flow_csv(&data.test, &schema, dir.join("test.csv"))?;
    let path = dir.join("manifest.txt");
    fs::write(&path, synth_manifest(cfg, seed, data)).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            flows: 3_000,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn exact_class_balance_and_order() {
        let flows = generate_latent_flows(&small(), 1).unwrap();
        assert_eq!(flows.len(), 3_000);
        let mal = flows.iter().filter(|r| r.label == Some(MALICIOUS)).count();
        assert_eq!(mal, 1_500);
        assert!(flows.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
        assert!(flows.iter().enumerate().all(|(i, r)| r.flow_id == i as u64));
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_synthetic(&small(), 9).unwrap();
        let b = generate_synthetic(&small(), 9).unwrap();
        let c = generate_synthetic(&small(), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_balance_rejected() {
        let cfg = SynthConfig {
            malicious_fraction: 1.0,
            ..small()
        };
        let err = generate_latent_flows(&cfg, 0).unwrap_err();
        assert!(err.to_string().contains("class balance"), "{err}");
    }

    #[test]
    fn pre_augmentation_drops_only_training_flows() {
        let cfg = small();
        let data = generate_synthetic(&cfg, 3).unwrap();
        assert_eq!(data.test.len(), 1_500);
        assert!(data.train.len() < 1_500 && data.train.len() > 1_000);
        let none = SynthConfig {
            pre_augment: AugmentParams::identity(),
            ..small()
        };
        assert_eq!(generate_synthetic(&none, 3).unwrap().train.len(), 1_500);
    }
}
