//! Two-stage and one-stage training, model containers and data preparation.

mod container;
mod prepare;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

pub use container::{ModelContainer, CONTAINER_VERSION};
pub use prepare::{build_window_graphs, prepare_training};

use crate::augment::{augment, AugmentParams, DropMode};
use crate::error::{Error, Result};
use crate::experts::{
    expert_predict, step_classifiers, train_experts, ClassWeighting, ExpertBundle, ExpertTrainOptions,
};
use crate::gate::{gate_step, gating_labels, train_gate, GateInputMode, GateModel, GateSupervision};
use crate::graph::{FeatureKind, TrafficGraph};
use crate::history::{mix_seed, EpochRecord, Stage};
use crate::ingest::NormStats;
use crate::nn::{Activation, Optimizer, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct HyperConfig {
    pub expert_hidden: Vec<usize>,
    pub gate_hidden: Vec<usize>,
    /// Hidden widths of the weighted-summation head.
    pub head_hidden: Vec<usize>,
    pub activation: Activation,
    pub gate_input: GateInputMode,
    pub aug1: AugmentParams,
    pub aug2: AugmentParams,
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
    pub class_weighting: ClassWeighting,
    pub seed: u64,
}

impl Default for HyperConfig {
    fn default() -> Self {
        HyperConfig {
            expert_hidden: vec![64, 64],
            gate_hidden: vec![64, 64],
            head_hidden: vec![64],
            activation: Activation::Relu,
            gate_input: GateInputMode::Full,
            aug1: AugmentParams::stage1_default(),
            aug2: AugmentParams::stage2_default(),
            stage1: TrainConfig::default(),
            stage2: TrainConfig::default(),
            class_weighting: ClassWeighting::None,
            seed: 0,
        }
    }
}

impl HyperConfig {
    pub fn validate(&self) -> Result<()> {
        self.aug1.validate()?;
        self.aug2.validate()?;
        self.stage1.validate()?;
        self.stage2.validate()?;
        for (key, widths) in [
            ("model.hidden", &self.expert_hidden),
            ("model.gate_hidden", &self.gate_hidden),
            ("model.head_hidden", &self.head_hidden),
        ] {
            if widths.contains(&0) {
                return Err(Error::config(key, "layer widths must be positive"));
            }
        }
        Ok(())
    }

    /// Stage-one schedule with its own derived seed.
    pub fn stage1_config(&self) -> TrainConfig {
        TrainConfig {
            seed: mix_seed(self.seed, &[101]),
            ..self.stage1.clone()
        }
    }

    pub fn stage2_config(&self) -> TrainConfig {
        TrainConfig {
            seed: mix_seed(self.seed, &[102]),
            ..self.stage2.clone()
        }
    }

    pub fn init_bundle(&self, norm: NormStats) -> Result<ExpertBundle> {
        ExpertBundle::new(norm, &self.expert_hidden, self.activation, mix_seed(self.seed, &[201]))
    }

    pub fn init_gate(&self, feature_dim: usize, mode: GateInputMode) -> Result<GateModel> {
        GateModel::new(feature_dim, &self.gate_hidden, self.activation, mode, mix_seed(self.seed, &[202]))
    }

    pub fn expert_options(&self) -> ExpertTrainOptions {
        ExpertTrainOptions {
            class_weighting: self.class_weighting,
        }
    }

    fn meta(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("seed".into(), self.seed.to_string());
        let fmt = |a: &AugmentParams| format!("{},{},{},{}", a.alpha, a.beta, a.gamma, a.drop_mode);
        m.insert("aug1".into(), fmt(&self.aug1));
        m.insert("aug2".into(), fmt(&self.aug2));
        m
    }
}

/// What a training run did and how long each stage took.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingReport {
    pub history: Vec<EpochRecord>,
    pub stage1_secs: f64,
    pub stage2_secs: f64,
    pub train_graphs: usize,
    pub train_edges: usize,
    /// Stage one was loaded from a checkpoint instead of trained.
    pub resumed: bool,
}

impl TrainingReport {
    pub fn final_loss(&self, stage: Stage) -> Option<f64> {
        self.history.iter().rev().find(|r| r.stage == stage).map(|r| r.loss)
    }

    /// Key metrics as `key=value` lines.
    pub fn write_summary<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "train_graphs={}", self.train_graphs)?;
        writeln!(w, "train_edges={}", self.train_edges)?;
        writeln!(w, "resumed_stage1={}", self.resumed)?;
        writeln!(w, "stage1_secs={:.3}", self.stage1_secs)?;
        writeln!(w, "stage2_secs={:.3}", self.stage2_secs)?;
        for stage in [Stage::Experts, Stage::Gate, Stage::Joint] {
            if let Some(l) = self.final_loss(stage) {
                writeln!(w, "final_loss_{stage}={l:.9}")?;
            }
        }
        let empty_epochs = self
            .history
            .iter()
            .filter(|r| r.stage == Stage::Gate && r.graphs_used > 0 && r.no_signal_graphs == r.graphs_used)
            .count();
        writeln!(w, "gate_epochs_without_signal={empty_epochs}")?;
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct TwoStageOptions {
    /// Where to write `stage1.fmoe` and `stage2.fmoe`.
    pub checkpoint_dir: Option<PathBuf>,
    /// Skip stage one and take the experts from this container.
    pub resume_from: Option<PathBuf>,
}

fn check_training_set(graphs: &[TrafficGraph]) -> Result<usize> {
    if graphs.iter().all(|g| g.is_empty()) {
        return Err(Error::EmptyInput("no training graphs"));
    }
    let mut edges = 0;
    for g in graphs {
        g.require_labels()?;
        edges += g.edge_count();
    }
    Ok(edges)
}

/// Stage one trains the experts under `aug1`; stage two trains the gate
/// under `aug2` with the experts frozen.
pub fn run_two_stage(
    graphs: &[TrafficGraph],
    norm: &NormStats,
    hyper: &HyperConfig,
    options: &TwoStageOptions,
) -> Result<(ModelContainer, TrainingReport)> {
    hyper.validate()?;
    let mut report = TrainingReport {
        train_graphs: graphs.len(),
        train_edges: check_training_set(graphs)?,
        ..TrainingReport::default()
    };
    let started = Instant::now();
    let bundle = match &options.resume_from {
        Some(path) => {
            report.resumed = true;
            ModelContainer::load(path)?.bundle
        }
        None => {
            let (bundle, hist) = train_experts(
                graphs,
                hyper.init_bundle(norm.clone())?,
                &hyper.aug1,
                &hyper.stage1_config(),
                &hyper.expert_options(),
            )?;
            report.history.extend(hist);
            bundle
        }
    };
    report.stage1_secs = started.elapsed().as_secs_f64();
    let gate = hyper.init_gate(bundle.feature_dim(), hyper.gate_input)?;
    let mut container = ModelContainer {
        bundle,
        gate,
        meta: hyper.meta(),
    };
    if let Some(dir) = &options.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        container.save(&dir.join("stage1.fmoe"))?;
    }
    let started = Instant::now();
    let (gate, hist) = train_gate(
        graphs,
        &container.bundle,
        container.gate.clone(),
        &hyper.aug2,
        &hyper.stage2_config(),
    )?;
    report.history.extend(hist);
    report.stage2_secs = started.elapsed().as_secs_f64();
    container.gate = gate;
    if let Some(dir) = &options.checkpoint_dir {
        container.save(&dir.join("stage2.fmoe"))?;
    }
    Ok((container, report))
}

/// Gate supervision seen by a one-stage step, for instrumentation.
#[derive(Debug)]
pub struct JointStep<'a> {
    pub epoch: usize,
    pub graph: usize,
    /// 1 for the mild copy, 2 for the strong copy.
    pub copy: u8,
    pub supervision: &'a GateSupervision,
}

/// The one-stage ablation: experts and gate are stepped together on
/// `L_cls + L_gate`, with gate supervision recomputed from the current experts
/// at every step. Each graph contributes one copy augmented under `aug1` and
/// one under `aug2` per epoch. The two losses touch disjoint parameters, so
/// the joint step is one expert update plus one gate update.
pub fn run_one_stage(
    graphs: &[TrafficGraph],
    norm: &NormStats,
    hyper: &HyperConfig,
    mut spy: Option<&mut dyn FnMut(&JointStep<'_>)>,
) -> Result<(ModelContainer, TrainingReport)> {
    hyper.validate()?;
    let mut report = TrainingReport {
        train_graphs: graphs.len(),
        train_edges: check_training_set(graphs)?,
        ..TrainingReport::default()
    };
    let started = Instant::now();
    let cfg = hyper.stage1_config();
    let mut bundle = hyper.init_bundle(norm.clone())?;
    let mut gate = hyper.init_gate(bundle.feature_dim(), hyper.gate_input)?;
    let class_w = hyper.class_weighting.weights(graphs);
    let mut opt_avg = Optimizer::for_model(cfg.optimizer, &bundle.avg);
    let mut opt_deg = Optimizer::for_model(cfg.optimizer, &bundle.deg);
    let mut opt_gate = Optimizer::for_model(hyper.stage2.optimizer, &gate.mlp);
    let gate_cfg = hyper.stage2_config();
    for epoch in 0..cfg.epochs {
        let mut rec = EpochRecord {
            stage: Stage::Joint,
            epoch,
            loss: 0.0,
            masked_fraction: None,
            graphs_used: 0,
            graphs_skipped: 0,
            no_signal_graphs: 0,
        };
        let (mut edges, mut masked) = (0usize, 0usize);
        let (mut cls_sum, mut gate_sum) = (0.0, 0.0);
        for (gi, g) in graphs.iter().enumerate() {
            for (copy, aug) in [(1u8, &hyper.aug1), (2u8, &hyper.aug2)] {
                let params = aug.with_seed(mix_seed(cfg.seed, &[3, copy as u64, epoch as u64, gi as u64]));
                let ag = augment(g, &params);
                if ag.is_empty() {
                    rec.graphs_skipped += 1;
                    continue;
                }
                let labels = ag.require_labels()?;
                let sup = gating_labels(&expert_predict(&bundle, &ag)?, &labels)?;
                if let Some(f) = spy.as_mut() {
                    f(&JointStep {
                        epoch,
                        graph: gi,
                        copy,
                        supervision: &sup,
                    });
                }
                let ExpertBundle { avg, deg, norm } = &mut bundle;
                cls_sum += step_classifiers(
                    &mut [
                        (avg, &mut opt_avg, FeatureKind::Avg),
                        (deg, &mut opt_deg, FeatureKind::Deg),
                    ],
                    &ag,
                    &labels,
                    norm,
                    &cfg,
                    class_w,
                )?;
                let (gl, m) = gate_step(&mut gate, &mut opt_gate, &ag, &bundle.norm, &sup, &gate_cfg)?;
                if m == 0 {
                    rec.no_signal_graphs += 1;
                }
                gate_sum += gl;
                masked += m;
                edges += labels.len();
                rec.graphs_used += 1;
            }
        }
        if edges > 0 {
            rec.loss = cls_sum / edges as f64 + if masked > 0 { gate_sum / masked as f64 } else { 0.0 };
            rec.masked_fraction = Some(masked as f64 / edges as f64);
        }
        report.history.push(rec);
    }
    report.stage1_secs = started.elapsed().as_secs_f64();
    let mut meta = hyper.meta();
    meta.insert("schedule".into(), "one_stage".into());
    Ok((ModelContainer { bundle, gate, meta }, report))
}

/// Augmentation parameters that leave graphs untouched.
pub fn no_augmentation() -> AugmentParams {
    AugmentParams::identity()
}

/// Stage-two defaults with the drop level read as `a ~ U(1 − γ, 1)`.
pub fn inverted_stage2() -> AugmentParams {
    AugmentParams::stage2_default().with_drop_mode(DropMode::Inverted)
}
