//! Run configuration in a flat `key = value` text format.
//!
//! Keys are dotted (`train.stage1_epochs`). A `[section]` line prefixes the
//! keys that follow it, so `[aug1]` then `alpha = 0.2` sets `aug1.alpha`.
//! `#` starts a comment. Unknown keys and unparsable values are errors that
//! name the offending key. [`RunConfig::to_text`] writes every key back out
//! and parses to the same configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::augment::{AugmentParams, DropMode};
use crate::error::{Error, Result};
use crate::eval::{ScenarioConfig, SynthConfig, Variant};
use crate::experts::ClassWeighting;
use crate::gate::GateInputMode;
use crate::ingest::SchemaConfig;
use crate::nn::{Activation, OptimizerKind};
use crate::training::HyperConfig;

/// Where training and test flows come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Generated in memory by the built-in benchmark generator.
    Synthetic,
    /// Read from CSV files. Without a test file the training file is split
    /// by arrival time.
    Csv { train: PathBuf, test: Option<PathBuf> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub schema: SchemaConfig,
    pub window_secs: f64,
    /// Share of the earliest flows used for training when a single file is split.
    pub split_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            schema: SchemaConfig::default(),
            window_secs: 30.0,
            split_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub variants: Vec<Variant>,
    pub scenarios: ScenarioConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            variants: Variant::ALL.to_vec(),
            scenarios: ScenarioConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub flows: usize,
    pub feature_dim: usize,
    pub flows_per_window: usize,
    pub repeats: usize,
    /// Also time half the flow count to check construction scaling.
    pub scaling_probe: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            flows: 1_000_000,
            feature_dim: 4,
            flows_per_window: 100_000,
            repeats: 3,
            scaling_probe: true,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.flows == 0 {
            return Err(Error::config("bench.flows", "must be positive"));
        }
        if self.feature_dim == 0 {
            return Err(Error::config("bench.feature_dim", "must be positive"));
        }
        if self.flows_per_window == 0 {
            return Err(Error::config("bench.flows_per_window", "must be positive"));
        }
        if self.repeats == 0 {
            return Err(Error::config("bench.repeats", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Master seed: data generation and model initialization derive from it.
    pub seed: u64,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub hyper: HyperConfig,
    pub eval: EvalConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut hyper = HyperConfig::default();
        hyper.aug2 = hyper.aug2.with_drop_mode(DropMode::Inverted);
        hyper.stage1.epochs = 400;
        hyper.stage1.learning_rate = 3e-3;
        hyper.stage2.epochs = 400;
        hyper.stage2.learning_rate = 3e-3;
        let mut cfg = RunConfig {
            seed: 1,
            data: DataConfig::default(),
            synth: SynthConfig::default(),
            hyper,
            eval: EvalConfig::default(),
            bench: BenchConfig::default(),
        };
        cfg.set_seed(1);
        cfg
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

fn parse_with<T>(key: &str, value: &str, f: impl FnOnce(&str) -> Result<T>) -> Result<T> {
    f(value.trim()).map_err(|e| Error::config(key, e.to_string()))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::config(key, format!("expected a boolean, got `{value}`"))),
    }
}

fn parse_widths(key: &str, value: &str) -> Result<Vec<usize>> {
    let value = value.trim();
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|w| parse(key, w)).collect()
}

fn parse_list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn optional(value: &str) -> Option<String> {
    let v = value.trim();
    (!v.is_empty()).then(|| v.to_string())
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Relu => "relu",
        Activation::Tanh => "tanh",
    }
}

fn parse_activation(key: &str, value: &str) -> Result<Activation> {
    match value.trim().to_ascii_lowercase().as_str() {
        "relu" => Ok(Activation::Relu),
        "tanh" => Ok(Activation::Tanh),
        other => Err(Error::config(key, format!("unknown activation `{other}`"))),
    }
}

fn weighting_name(w: ClassWeighting) -> &'static str {
    match w {
        ClassWeighting::None => "none",
        ClassWeighting::InverseFrequency => "inverse_frequency",
    }
}

fn parse_weighting(key: &str, value: &str) -> Result<ClassWeighting> {
    match value.trim().to_ascii_lowercase().as_str() {
        "none" => Ok(ClassWeighting::None),
        "inverse_frequency" => Ok(ClassWeighting::InverseFrequency),
        other => Err(Error::config(key, format!("unknown class weighting `{other}`"))),
    }
}

fn set_aug(p: &mut AugmentParams, key: &str, field: &str, value: &str) -> Result<bool> {
    match field {
        "alpha" => p.alpha = parse(key, value)?,
        "beta" => p.beta = parse(key, value)?,
        "gamma" => p.gamma = parse(key, value)?,
        "drop_mode" => p.drop_mode = parse_with(key, value, DropMode::from_str)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn write_aug(s: &mut String, prefix: &str, p: &AugmentParams) {
    let _ = writeln!(s, "{prefix}.alpha = {}", p.alpha);
    let _ = writeln!(s, "{prefix}.beta = {}", p.beta);
    let _ = writeln!(s, "{prefix}.gamma = {}", p.gamma);
    let _ = writeln!(s, "{prefix}.drop_mode = {}", p.drop_mode);
}

impl RunConfig {
    /// Sets the master seed and everything derived from it.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.hyper.seed = seed;
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        // Relative data paths are taken relative to the config file.
        if let DataSource::Csv { train, test } = &mut cfg.data.source {
            let base = path.parent().unwrap_or(Path::new(""));
            for p in std::iter::once(train).chain(test.as_mut()) {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// Parses a configuration, starting from the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        let mut source: Option<String> = None;
        let mut train_path: Option<String> = None;
        let mut test_path: Option<String> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::config(format!("line {}", lineno + 1), "unterminated section header"))?;
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}", lineno + 1), "expected `key = value`"))?;
            let key = if section.is_empty() {
                k.trim().to_string()
            } else {
                format!("{section}.{}", k.trim())
            };
            match key.as_str() {
                "data.source" => source = Some(v.trim().to_ascii_lowercase()),
                "data.train_path" => train_path = optional(v),
                "data.test_path" => test_path = optional(v),
                _ => cfg.set(&key, v)?,
            }
        }
        match (source.as_deref(), train_path) {
            (None | Some("synthetic"), None) => {
                if test_path.is_some() {
                    return Err(Error::config("data.test_path", "needs data.source = csv and data.train_path"));
                }
            }
            (None | Some("csv"), Some(train)) => {
                cfg.data.source = DataSource::Csv {
                    train: train.into(),
                    test: test_path.map(PathBuf::from),
                }
            }
            (Some("csv"), None) => return Err(Error::config("data.train_path", "required when data.source = csv")),
            (Some("synthetic"), Some(_)) => {
                return Err(Error::config("data.train_path", "not used with data.source = synthetic"))
            }
            (Some(other), _) => return Err(Error::config("data.source", format!("unknown source `{other}`"))),
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let (group, field) = key.split_once('.').unwrap_or(("", key));
        let known = match group {
            "" => match field {
                "seed" => {
                    let seed = parse(key, v)?;
                    self.set_seed(seed);
                    true
                }
                _ => false,
            },
            "data" => {
                let s = &mut self.data.schema;
                match field {
                    "window_secs" => self.data.window_secs = parse(key, v)?,
                    "split_fraction" => self.data.split_fraction = parse(key, v)?,
                    "src_col" => s.src_col = v.trim().to_string(),
                    "dst_col" => s.dst_col = v.trim().to_string(),
                    "ts_col" => s.ts_col = optional(v),
                    "ts_scale" => s.ts_scale = parse(key, v)?,
                    "label_col" => s.label_col = optional(v),
                    "label_required" => s.label_required = parse_bool(key, v)?,
                    "feature_cols" => s.feature_cols = parse_list(v),
                    "delimiter" => {
                        let d = v.trim();
                        s.delimiter = match d {
                            "tab" | "\\t" => b'\t',
                            _ if d.len() == 1 => d.as_bytes()[0],
                            _ => return Err(Error::config(key, "expected a single character or `tab`")),
                        }
                    }
                    "max_bad_fraction" => s.max_bad_fraction = parse(key, v)?,
                    _ => return Err(unknown(key)),
                }
                true
            }
            "synth" => {
                let s = &mut self.synth;
                match field {
                    "flows" => s.flows = parse(key, v)?,
                    "flows_per_window" => s.flows_per_window = parse(key, v)?,
                    "window_secs" => s.window_secs = parse(key, v)?,
                    "malicious_fraction" => s.malicious_fraction = parse(key, v)?,
                    "feature_dim" => s.feature_dim = parse(key, v)?,
                    "benign_mean_degree" => s.benign_mean_degree = parse(key, v)?,
                    "malicious_mean_degree" => s.malicious_mean_degree = parse(key, v)?,
                    "servers" => s.servers = parse(key, v)?,
                    "server_zipf" => s.server_zipf = parse(key, v)?,
                    "benign_flow_spread" => s.benign_flow_spread = parse(key, v)?,
                    "malicious_host_spread" => s.malicious_host_spread = parse(key, v)?,
                    "service_columns" => s.service_columns = parse(key, v)?,
                    "service_jitter" => s.service_jitter = parse(key, v)?,
                    "train_fraction" => s.train_fraction = parse(key, v)?,
                    "pre_alpha" => s.pre_augment.alpha = parse(key, v)?,
                    "pre_beta" => s.pre_augment.beta = parse(key, v)?,
                    "pre_gamma" => s.pre_augment.gamma = parse(key, v)?,
                    "pre_drop_mode" => s.pre_augment.drop_mode = parse_with(key, v, DropMode::from_str)?,
                    _ => return Err(unknown(key)),
                }
                true
            }
            "aug1" => set_aug(&mut self.hyper.aug1, key, field, v)?,
            "aug2" => set_aug(&mut self.hyper.aug2, key, field, v)?,
            "train" => {
                let h = &mut self.hyper;
                match field {
                    "stage1_epochs" => h.stage1.epochs = parse(key, v)?,
                    "stage2_epochs" => h.stage2.epochs = parse(key, v)?,
                    "stage1_lr" => h.stage1.learning_rate = parse(key, v)?,
                    "stage2_lr" => h.stage2.learning_rate = parse(key, v)?,
                    "batch_size" => {
                        let b = parse(key, v)?;
                        h.stage1.batch_size = b;
                        h.stage2.batch_size = b;
                    }
                    "full_batch_limit" => {
                        let b = parse(key, v)?;
                        h.stage1.full_batch_limit = b;
                        h.stage2.full_batch_limit = b;
                    }
                    "optimizer" => {
                        let o = parse_with(key, v, OptimizerKind::from_str)?;
                        h.stage1.optimizer = o;
                        h.stage2.optimizer = o;
                    }
                    "class_weighting" => h.class_weighting = parse_weighting(key, v)?,
                    _ => return Err(unknown(key)),
                }
                true
            }
            "model" => {
                let h = &mut self.hyper;
                match field {
                    "hidden" => h.expert_hidden = parse_widths(key, v)?,
                    "gate_hidden" => h.gate_hidden = parse_widths(key, v)?,
                    "head_hidden" => h.head_hidden = parse_widths(key, v)?,
                    "activation" => h.activation = parse_activation(key, v)?,
                    "gate_input" => h.gate_input = parse_with(key, v, GateInputMode::from_str)?,
                    _ => return Err(unknown(key)),
                }
                true
            }
            "eval" => {
                let s = &mut self.eval.scenarios;
                match field {
                    "variants" => {
                        self.eval.variants = if v.trim() == "all" {
                            Variant::ALL.to_vec()
                        } else {
                            parse_list(v)
                                .iter()
                                .map(|n| parse_with(key, n, Variant::from_str))
                                .collect::<Result<_>>()?
                        }
                    }
                    "drift1_alpha" => s.drift1_alpha = parse(key, v)?,
                    "drift1_beta" => s.drift1_beta = parse(key, v)?,
                    "drift2_gamma" => s.drift2_gamma = parse(key, v)?,
                    "drift2_mode" => s.drift2_mode = parse_with(key, v, DropMode::from_str)?,
                    "replicas" => s.replicas = parse(key, v)?,
                    "scenario_seed" => s.seed = parse(key, v)?,
                    _ => return Err(unknown(key)),
                }
                true
            }
            "bench" => {
                let b = &mut self.bench;
                match field {
                    "flows" => b.flows = parse(key, v)?,
                    "feature_dim" => b.feature_dim = parse(key, v)?,
                    "flows_per_window" => b.flows_per_window = parse(key, v)?,
                    "repeats" => b.repeats = parse(key, v)?,
                    "scaling_probe" => b.scaling_probe = parse_bool(key, v)?,
                    _ => return Err(unknown(key)),
                }
                true
            }
            _ => false,
        };
        if known {
            Ok(())
        } else {
            Err(unknown(key))
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.data.window_secs > 0.0 && self.data.window_secs.is_finite()) {
            return Err(Error::config("data.window_secs", "must be positive"));
        }
        if !(0.0 < self.data.split_fraction && self.data.split_fraction < 1.0) {
            return Err(Error::config("data.split_fraction", "must lie in (0, 1)"));
        }
        if let DataSource::Csv { .. } = self.data.source {
            if self.data.schema.feature_cols.is_empty() {
                return Err(Error::config("data.feature_cols", "at least one feature column is required"));
            }
        }
        if !(0.0..=1.0).contains(&self.data.schema.max_bad_fraction) {
            return Err(Error::config("data.max_bad_fraction", "must lie in [0, 1]"));
        }
        self.synth.validate()?;
        for (prefix, p) in [("aug1", &self.hyper.aug1), ("aug2", &self.hyper.aug2)] {
            p.validate().map_err(|e| Error::config(prefix, e.to_string()))?;
        }
        self.hyper.validate()?;
        if self.eval.variants.is_empty() {
            return Err(Error::config("eval.variants", "at least one variant is required"));
        }
        self.eval.scenarios.validate()?;
        self.bench.validate()
    }

    /// Every key with its current value, in a form [`RunConfig::parse`] accepts.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        let d = &self.data;
        match &d.source {
            DataSource::Synthetic => {
                let _ = writeln!(s, "data.source = synthetic");
            }
            DataSource::Csv { train, test } => {
                let _ = writeln!(s, "data.source = csv");
                let _ = writeln!(s, "data.train_path = {}", train.display());
                if let Some(t) = test {
                    let _ = writeln!(s, "data.test_path = {}", t.display());
                }
            }
        }
        let _ = writeln!(s, "data.window_secs = {}", d.window_secs);
        let _ = writeln!(s, "data.split_fraction = {}", d.split_fraction);
        let sc = &d.schema;
        let _ = writeln!(s, "data.src_col = {}", sc.src_col);
        let _ = writeln!(s, "data.dst_col = {}", sc.dst_col);
        let _ = writeln!(s, "data.ts_col = {}", sc.ts_col.as_deref().unwrap_or(""));
        let _ = writeln!(s, "data.ts_scale = {}", sc.ts_scale);
        let _ = writeln!(s, "data.label_col = {}", sc.label_col.as_deref().unwrap_or(""));
        let _ = writeln!(s, "data.label_required = {}", sc.label_required);
        let _ = writeln!(s, "data.feature_cols = {}", sc.feature_cols.join(","));
        let delim = if sc.delimiter == b'\t' { "tab".to_string() } else { (sc.delimiter as char).to_string() };
        let _ = writeln!(s, "data.delimiter = {delim}");
        let _ = writeln!(s, "data.max_bad_fraction = {}", sc.max_bad_fraction);

        let y = &self.synth;
        let _ = writeln!(s, "synth.flows = {}", y.flows);
        let _ = writeln!(s, "synth.flows_per_window = {}", y.flows_per_window);
        let _ = writeln!(s, "synth.window_secs = {}", y.window_secs);
        let _ = writeln!(s, "synth.malicious_fraction = {}", y.malicious_fraction);
        let _ = writeln!(s, "synth.feature_dim = {}", y.feature_dim);
        let _ = writeln!(s, "synth.benign_mean_degree = {}", y.benign_mean_degree);
        let _ = writeln!(s, "synth.malicious_mean_degree = {}", y.malicious_mean_degree);
        let _ = writeln!(s, "synth.servers = {}", y.servers);
        let _ = writeln!(s, "synth.server_zipf = {}", y.server_zipf);
        let _ = writeln!(s, "synth.benign_flow_spread = {}", y.benign_flow_spread);
        let _ = writeln!(s, "synth.malicious_host_spread = {}", y.malicious_host_spread);
        let _ = writeln!(s, "synth.service_columns = {}", y.service_columns);
        let _ = writeln!(s, "synth.service_jitter = {}", y.service_jitter);
        let _ = writeln!(s, "synth.train_fraction = {}", y.train_fraction);
        let _ = writeln!(s, "synth.pre_alpha = {}", y.pre_augment.alpha);
        let _ = writeln!(s, "synth.pre_beta = {}", y.pre_augment.beta);
        let _ = writeln!(s, "synth.pre_gamma = {}", y.pre_augment.gamma);
        let _ = writeln!(s, "synth.pre_drop_mode = {}", y.pre_augment.drop_mode);

        let h = &self.hyper;
        write_aug(&mut s, "aug1", &h.aug1);
        write_aug(&mut s, "aug2", &h.aug2);
        let _ = writeln!(s, "train.stage1_epochs = {}", h.stage1.epochs);
        let _ = writeln!(s, "train.stage2_epochs = {}", h.stage2.epochs);
        let _ = writeln!(s, "train.stage1_lr = {}", h.stage1.learning_rate);
        let _ = writeln!(s, "train.stage2_lr = {}", h.stage2.learning_rate);
        let _ = writeln!(s, "train.batch_size = {}", h.stage1.batch_size);
        let _ = writeln!(s, "train.full_batch_limit = {}", h.stage1.full_batch_limit);
        let _ = writeln!(s, "train.optimizer = {}", h.stage1.optimizer);
        let _ = writeln!(s, "train.class_weighting = {}", weighting_name(h.class_weighting));
        let _ = writeln!(s, "model.hidden = {}", join(&h.expert_hidden));
        let _ = writeln!(s, "model.gate_hidden = {}", join(&h.gate_hidden));
        let _ = writeln!(s, "model.head_hidden = {}", join(&h.head_hidden));
        let _ = writeln!(s, "model.activation = {}", activation_name(h.activation));
        let _ = writeln!(s, "model.gate_input = {}", h.gate_input);

        let e = &self.eval;
        let slugs: Vec<&str> = e.variants.iter().map(|v| v.slug()).collect();
        let _ = writeln!(s, "eval.variants = {}", slugs.join(","));
        let _ = writeln!(s, "eval.drift1_alpha = {}", e.scenarios.drift1_alpha);
        let _ = writeln!(s, "eval.drift1_beta = {}", e.scenarios.drift1_beta);
        let _ = writeln!(s, "eval.drift2_gamma = {}", e.scenarios.drift2_gamma);
        let _ = writeln!(s, "eval.drift2_mode = {}", e.scenarios.drift2_mode);
        let _ = writeln!(s, "eval.replicas = {}", e.scenarios.replicas);
        let _ = writeln!(s, "eval.scenario_seed = {}", e.scenarios.seed);

        let b = &self.bench;
        let _ = writeln!(s, "bench.flows = {}", b.flows);
        let _ = writeln!(s, "bench.feature_dim = {}", b.feature_dim);
        let _ = writeln!(s, "bench.flows_per_window = {}", b.flows_per_window);
        let _ = writeln!(s, "bench.repeats = {}", b.repeats);
        let _ = writeln!(s, "bench.scaling_probe = {}", b.scaling_probe);
        s
    }
}

fn unknown(key: &str) -> Error {
    Error::config(key, "unknown key")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn sections_and_comments() {
        let cfg = RunConfig::parse("# top\nseed = 9\n[aug1]\nalpha = 0.3 # inline\n[train]\nstage2_epochs=7\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.hyper.seed, 9);
        assert_eq!(cfg.hyper.aug1.alpha, 0.3);
        assert_eq!(cfg.hyper.stage2.epochs, 7);
    }

    #[test]
    fn unknown_key_is_named() {
        match RunConfig::parse("train.epochz = 3") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "train.epochz"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_value_is_named() {
        match RunConfig::parse("[model]\nhidden = 8,x") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "model.hidden"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_source() {
        let cfg = RunConfig::parse("data.train_path = a.csv\ndata.feature_cols = x, y\n").unwrap();
        assert_eq!(
            cfg.data.source,
            DataSource::Csv { train: "a.csv".into(), test: None }
        );
        assert_eq!(cfg.data.schema.feature_cols, ["x", "y"]);
        assert!(RunConfig::parse("data.source = csv").is_err());
    }
}
