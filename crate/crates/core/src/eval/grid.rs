//! The ablation grid: every model variant scored under every drift scenario.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use super::metrics::{oracle_select, GateCheck, MetricsAccumulator, MetricsReport};
use super::scenario::{apply_scenario, ScenarioConfig, ScenarioKind};
use crate::augment::AugmentParams;
use crate::error::{Error, Result};
use crate::experts::{train_experts, ExpertBundle, SingleExpert};
use crate::gate::{
    gating_labels, moe_predict, moe_predict_weighted, train_gate, train_weighted_moe, GateInputMode,
    GateModel, WeightedMoe, AVG_EXPERT,
};
use crate::graph::{FeatureKind, TrafficGraph};
use crate::history::mix_seed;
use crate::ingest::NormStats;
use crate::nn::argmax2;
use crate::training::{run_one_stage, HyperConfig, ModelContainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Avg,
    Deg,
    AvgAug,
    DegAug,
    AvgDeg,
    AvgDegAug,
    MalMoeNoAug,
    MalMoe,
    NoGraphInput,
    NoHardSelection,
    NoGateAug,
    OneStage,
}

impl Variant {
    pub const ALL: [Variant; 12] = [
        Variant::Avg,
        Variant::Deg,
        Variant::AvgAug,
        Variant::DegAug,
        Variant::AvgDeg,
        Variant::AvgDegAug,
        Variant::MalMoeNoAug,
        Variant::MalMoe,
        Variant::NoGraphInput,
        Variant::NoHardSelection,
        Variant::NoGateAug,
        Variant::OneStage,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Avg => "AVG",
            Variant::Deg => "DEG",
            Variant::AvgAug => "AVG-AUG",
            Variant::DegAug => "DEG-AUG",
            Variant::AvgDeg => "AVG-DEG",
            Variant::AvgDegAug => "AVG-DEG-AUG",
            Variant::MalMoeNoAug => "MalMoE (w/o AUG)",
            Variant::MalMoe => "MalMoE",
            Variant::NoGraphInput => "w/o G.I.",
            Variant::NoHardSelection => "w/o H.S.",
            Variant::NoGateAug => "w/o AUG",
            Variant::OneStage => "One-Stage",
        }
    }

    /// File-name friendly form.
    pub fn slug(self) -> &'static str {
        match self {
            Variant::Avg => "avg",
            Variant::Deg => "deg",
            Variant::AvgAug => "avg_aug",
            Variant::DegAug => "deg_aug",
            Variant::AvgDeg => "avg_deg",
            Variant::AvgDegAug => "avg_deg_aug",
            Variant::MalMoeNoAug => "malmoe_no_aug",
            Variant::MalMoe => "malmoe",
            Variant::NoGraphInput => "no_graph_input",
            Variant::NoHardSelection => "no_hard_selection",
            Variant::NoGateAug => "no_gate_aug",
            Variant::OneStage => "one_stage",
        }
    }

    /// Variants that route between the two experts.
    pub fn is_moe(self) -> bool {
        matches!(
            self,
            Variant::MalMoeNoAug
                | Variant::MalMoe
                | Variant::NoGraphInput
                | Variant::NoHardSelection
                | Variant::NoGateAug
                | Variant::OneStage
        )
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s || v.slug() == s)
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct GridConfig {
    pub variants: Vec<Variant>,
    pub scenarios: ScenarioConfig,
    pub hyper: HyperConfig,
    /// A trained two-stage model. When present its experts serve as the
    /// augmented bundle and its gate as the MalMoE gate, instead of
    /// retraining them.
    pub pretrained: Option<ModelContainer>,
}

/// Accuracy of each expert and of the oracle on a scored set.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExpertAccuracy {
    pub avg: f64,
    pub deg: f64,
    pub oracle: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub variant: Variant,
    /// `None` for the overall row.
    pub scenario: Option<ScenarioKind>,
    pub metrics: MetricsReport,
    /// Present for routing variants.
    pub experts: Option<ExpertAccuracy>,
    /// Fraction of masked edges routed to Avg-Expert, for routing variants.
    pub avg_share: Option<f64>,
}

impl GridRow {
    pub fn scenario_name(&self) -> &'static str {
        self.scenario.map(|s| s.name()).unwrap_or("overall")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GridResult {
    pub rows: Vec<GridRow>,
}

impl GridResult {
    pub fn get(&self, variant: Variant, scenario: Option<ScenarioKind>) -> Option<&GridRow> {
        self.rows
            .iter()
            .find(|r| r.variant == variant && r.scenario == scenario)
    }

    pub fn overall(&self, variant: Variant) -> Option<&GridRow> {
        self.get(variant, None)
    }

    /// `variant,scenario,acc,f1,acc_gate,n_masked`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["variant", "scenario", "acc", "f1", "acc_gate", "n_masked"])?;
        for r in &self.rows {
            out.write_record([
                r.variant.name().to_string(),
                r.scenario_name().to_string(),
                format!("{:.6}", r.metrics.acc),
                format!("{:.6}", r.metrics.f1),
                r.metrics.acc_gate.map(|g| format!("{g:.6}")).unwrap_or_default(),
                r.metrics.n_masked.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// `scenario,expert,fraction` over masked edges for one routing variant.
    pub fn write_selection_csv<W: Write>(&self, variant: Variant, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["scenario", "expert", "fraction"])?;
        for r in self.rows.iter().filter(|r| r.variant == variant && r.scenario.is_some()) {
            if let Some(share) = r.avg_share {
                out.write_record([r.scenario_name(), "avg", &format!("{share:.6}")])?;
                out.write_record([r.scenario_name(), "deg", &format!("{:.6}", 1.0 - share)])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

enum Trained {
    Single(SingleExpert),
    Hard(ExpertBundle, GateModel),
    Weighted(ExpertBundle, WeightedMoe),
}

/// Lazily trained components shared between variants.
struct Models<'a> {
    graphs: &'a [TrafficGraph],
    norm: &'a NormStats,
    hyper: &'a HyperConfig,
    plain: Option<ExpertBundle>,
    augmented: Option<ExpertBundle>,
    gate: Option<GateModel>,
}

impl Models<'_> {
    fn bundle(&mut self, augmented: bool) -> Result<ExpertBundle> {
        let slot = if augmented { &mut self.augmented } else { &mut self.plain };
        if slot.is_none() {
            let aug = if augmented { self.hyper.aug1 } else { AugmentParams::identity() };
            let (b, _) = train_experts(
                self.graphs,
                self.hyper.init_bundle(self.norm.clone())?,
                &aug,
                &self.hyper.stage1_config(),
                &self.hyper.expert_options(),
            )?;
            *slot = Some(b);
        }
        Ok(slot.clone().unwrap())
    }

    fn single(&mut self, kind: FeatureKind, augmented: bool) -> Result<SingleExpert> {
        let b = self.bundle(augmented)?;
        Ok(SingleExpert {
            kind,
            model: b.model(kind).clone(),
            norm: b.norm,
        })
    }

    fn concat(&mut self, augmented: bool) -> Result<SingleExpert> {
        let aug = if augmented { self.hyper.aug1 } else { AugmentParams::identity() };
        let init = SingleExpert::new(
            FeatureKind::Concat,
            self.norm.clone(),
            &self.hyper.expert_hidden,
            self.hyper.activation,
            mix_seed(self.hyper.seed, &[203]),
        )?;
        Ok(init
            .train(self.graphs, &aug, &self.hyper.stage1_config(), &self.hyper.expert_options())?
            .0)
    }

    fn gated(&mut self, augmented_experts: bool, mode: GateInputMode, aug2: AugmentParams) -> Result<Trained> {
        let b = self.bundle(augmented_experts)?;
        let init = self.hyper.init_gate(b.feature_dim(), mode)?;
        let (gate, _) = train_gate(self.graphs, &b, init, &aug2, &self.hyper.stage2_config())?;
        Ok(Trained::Hard(b, gate))
    }

    fn train(&mut self, v: Variant) -> Result<Trained> {
        let h = self.hyper;
        Ok(match v {
            Variant::Avg => Trained::Single(self.single(FeatureKind::Avg, false)?),
            Variant::Deg => Trained::Single(self.single(FeatureKind::Deg, false)?),
            Variant::AvgAug => Trained::Single(self.single(FeatureKind::Avg, true)?),
            Variant::DegAug => Trained::Single(self.single(FeatureKind::Deg, true)?),
            Variant::AvgDeg => Trained::Single(self.concat(false)?),
            Variant::AvgDegAug => Trained::Single(self.concat(true)?),
            Variant::MalMoeNoAug => self.gated(false, h.gate_input, h.aug2)?,
            Variant::MalMoe => match self.gate.clone() {
                Some(g) => Trained::Hard(self.bundle(true)?, g),
                None => self.gated(true, h.gate_input, h.aug2)?,
            },
            Variant::NoGraphInput => self.gated(true, GateInputMode::PerSample, h.aug2)?,
            Variant::NoGateAug => self.gated(true, h.gate_input, AugmentParams::identity())?,
            Variant::NoHardSelection => {
                let b = self.bundle(true)?;
                let init = WeightedMoe::new(
                    &b,
                    &h.gate_hidden,
                    &h.head_hidden,
                    h.activation,
                    h.gate_input,
                    mix_seed(h.seed, &[204]),
                )?;
                let (m, _) = train_weighted_moe(self.graphs, &b, init, &h.aug2, &h.stage2_config())?;
                Trained::Weighted(b, m)
            }
            Variant::OneStage => {
                let (c, _) = run_one_stage(self.graphs, self.norm, h, None)?;
                Trained::Hard(c.bundle, c.gate)
            }
        })
    }
}

#[derive(Default)]
struct CellAccumulator {
    main: MetricsAccumulator,
    avg: MetricsAccumulator,
    deg: MetricsAccumulator,
    oracle: MetricsAccumulator,
    routed_avg: u64,
    masked: u64,
}

fn argmax_rows(p: &ndarray::Array2<f64>) -> Vec<u8> {
    p.rows().into_iter().map(|r| argmax2(r.as_slice().unwrap())).collect()
}

fn score(model: &Trained, graphs: &[TrafficGraph], variant: Variant, scenario: ScenarioKind) -> Result<GridRow> {
    let mut acc = CellAccumulator::default();
    let mut routed = false;
    for g in graphs {
        let labels = g.require_labels()?;
        match model {
            Trained::Single(m) => {
                acc.main.add(&argmax_rows(&m.predict(g)?), &labels, None)?;
            }
            Trained::Hard(b, gate) => {
                routed = true;
                let p = moe_predict(b, gate, g)?;
                let sup = gating_labels(&p.experts, &labels)?;
                acc.main.add(
                    &p.class,
                    &labels,
                    Some(GateCheck {
                        chosen: &p.chosen,
                        supervision: &sup,
                    }),
                )?;
                tally_experts(&mut acc, &p.experts, &labels, &p.chosen, &sup.mask)?;
            }
            Trained::Weighted(b, m) => {
                routed = true;
                let p = moe_predict_weighted(b, m, g)?;
                let sup = gating_labels(&p.experts, &labels)?;
                let chosen = p.dominant();
                acc.main.add(
                    &p.class,
                    &labels,
                    Some(GateCheck {
                        chosen: &chosen,
                        supervision: &sup,
                    }),
                )?;
                tally_experts(&mut acc, &p.experts, &labels, &chosen, &sup.mask)?;
            }
        }
    }
    let metrics = acc.main.finish();
    Ok(GridRow {
        variant,
        scenario: Some(scenario),
        metrics,
        experts: routed.then(|| ExpertAccuracy {
            avg: acc.avg.finish().acc,
            deg: acc.deg.finish().acc,
            oracle: acc.oracle.finish().acc,
        }),
        avg_share: (routed && acc.masked > 0).then(|| acc.routed_avg as f64 / acc.masked as f64),
    })
}

fn tally_experts(
    acc: &mut CellAccumulator,
    experts: &crate::experts::ExpertOutputs,
    labels: &[u8],
    chosen: &[u8],
    mask: &[bool],
) -> Result<()> {
    acc.avg.add(&argmax_rows(&experts.p_avg), labels, None)?;
    acc.deg.add(&argmax_rows(&experts.p_deg), labels, None)?;
    acc.oracle.add(&oracle_select(experts, labels)?.class, labels, None)?;
    for (c, &m) in chosen.iter().zip(mask) {
        if m {
            acc.masked += 1;
            acc.routed_avg += (*c == AVG_EXPERT) as u64;
        }
    }
    Ok(())
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Unweighted mean over the scenario rows.
fn overall_row(variant: Variant, rows: &[GridRow]) -> GridRow {
    let gates: Vec<f64> = rows.iter().filter_map(|r| r.metrics.acc_gate).collect();
    let sum = |f: fn(&MetricsReport) -> u64| rows.iter().map(|r| f(&r.metrics)).sum::<u64>();
    let metrics = MetricsReport {
        acc: mean(rows.iter().map(|r| r.metrics.acc)),
        f1: mean(rows.iter().map(|r| r.metrics.f1)),
        precision: mean(rows.iter().map(|r| r.metrics.precision)),
        recall: mean(rows.iter().map(|r| r.metrics.recall)),
        tp: sum(|m| m.tp),
        fp: sum(|m| m.fp),
        tn: sum(|m| m.tn),
        fn_: sum(|m| m.fn_),
        acc_gate: (!gates.is_empty()).then(|| mean(gates.iter().copied())),
        n_masked: sum(|m| m.n_masked),
    };
    let experts = rows.iter().all(|r| r.experts.is_some()).then(|| ExpertAccuracy {
        avg: mean(rows.iter().map(|r| r.experts.unwrap().avg)),
        deg: mean(rows.iter().map(|r| r.experts.unwrap().deg)),
        oracle: mean(rows.iter().map(|r| r.experts.unwrap().oracle)),
    });
    GridRow {
        variant,
        scenario: None,
        metrics,
        experts,
        avg_share: None,
    }
}

/// Trains each requested variant on `train` and scores it on every drift
/// scenario of `test`, plus an overall row per variant.
pub fn run_ablation_grid(
    train: &[TrafficGraph],
    norm: &NormStats,
    test: &[TrafficGraph],
    cfg: &GridConfig,
) -> Result<GridResult> {
    cfg.hyper.validate()?;
    cfg.scenarios.validate()?;
    if test.is_empty() {
        return Err(Error::EmptyInput("no test graphs"));
    }
    let scenario_sets: BTreeMap<ScenarioKind, Vec<TrafficGraph>> = cfg
        .scenarios
        .all()?
        .iter()
        .map(|s| (s.kind, apply_scenario(test, s, &cfg.scenarios)))
        .collect();
    let mut models = Models {
        graphs: train,
        norm,
        hyper: &cfg.hyper,
        plain: None,
        augmented: cfg.pretrained.as_ref().map(|c| c.bundle.clone()),
        gate: cfg.pretrained.as_ref().map(|c| c.gate.clone()),
    };
    let mut result = GridResult::default();
    for &v in &cfg.variants {
        let trained = models.train(v)?;
        let rows = scenario_sets
            .iter()
            .map(|(&k, graphs)| score(&trained, graphs, v, k))
            .collect::<Result<Vec<_>>>()?;
        let overall = overall_row(v, &rows);
        result.rows.extend(rows);
        result.rows.push(overall);
    }
    Ok(result)
}
