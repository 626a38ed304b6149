//! The routing gate: supervision from expert losses, the masked gate loss,
//! stage-two training, hard-selection inference and the weighted-summation
//! variant.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use ndarray::{s, Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::augment::{augment, AugmentParams};
use crate::error::{Error, Result};
use crate::experts::{
    batch_ranges, classifier_dims, expert_losses, ExpertBundle, ExpertOutputs, DEFAULT_INFER_BATCH,
};
use crate::graph::{fill_embeddings, FeatureKind, GraphReadout, TrafficGraph};
use crate::history::{mix_seed, EpochRecord, Stage};
use crate::ingest::NormStats;
use crate::nn::{argmax2, cross_entropy, Activation, MlpModel, Optimizer, TrainConfig};

pub(crate) const TAG_GATE: u64 = 2;

/// Gate index of Avg-Expert.
pub const AVG_EXPERT: u8 = 0;
/// Gate index of Deg-Expert.
pub const DEG_EXPERT: u8 = 1;

pub fn expert_name(index: u8) -> &'static str {
    if index == AVG_EXPERT {
        "avg"
    } else {
        "deg"
    }
}

/// Which inputs the gate sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GateInputMode {
    /// `e_avg ‖ e_deg ‖ g_avg ‖ g_deg`.
    #[default]
    Full,
    /// `e_avg ‖ e_deg` only, without graph readouts.
    PerSample,
}

impl GateInputMode {
    pub fn input_dim(self, d: usize) -> usize {
        let per_sample = FeatureKind::Avg.embedding_dim(d) + FeatureKind::Deg.embedding_dim(d);
        match self {
            GateInputMode::Full => 2 * per_sample,
            GateInputMode::PerSample => per_sample,
        }
    }

    pub fn code(self) -> u32 {
        match self {
            GateInputMode::Full => 0,
            GateInputMode::PerSample => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(GateInputMode::Full),
            1 => Some(GateInputMode::PerSample),
            _ => None,
        }
    }
}

impl fmt::Display for GateInputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GateInputMode::Full => "full",
            GateInputMode::PerSample => "per_sample",
        })
    }
}

impl FromStr for GateInputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" => Ok(GateInputMode::Full),
            "per_sample" | "per-sample" => Ok(GateInputMode::PerSample),
            other => Err(Error::InvalidArgument(format!("unknown gate input mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateModel {
    pub mlp: MlpModel,
    pub mode: GateInputMode,
}

impl GateModel {
    pub fn new(
        feature_dim: usize,
        hidden: &[usize],
        activation: Activation,
        mode: GateInputMode,
        seed: u64,
    ) -> Result<Self> {
        let dims = classifier_dims(mode.input_dim(feature_dim), hidden);
        Ok(GateModel {
            mlp: MlpModel::with_activation(&dims, activation, mix_seed(seed, &[13]))?,
            mode,
        })
    }

    pub fn check(&self, feature_dim: usize) -> Result<()> {
        let want = self.mode.input_dim(feature_dim);
        if self.mlp.input_dim() != want || self.mlp.output_dim() != 2 {
            return Err(Error::DimensionMismatch {
                context: "gate input width",
                expected: want,
                actual: self.mlp.input_dim(),
            });
        }
        Ok(())
    }

    /// Gate probabilities `(p_avg, p_deg)` for every edge.
    pub fn probabilities(&self, graph: &TrafficGraph, norm: &NormStats) -> Result<Array2<f64>> {
        let x = gate_inputs(graph, norm, self.mode)?;
        self.mlp.forward(x.view())
    }
}

/// Readouts for modes that need them.
fn readout_for(graph: &TrafficGraph, norm: &NormStats, mode: GateInputMode) -> Result<Option<GraphReadout>> {
    match mode {
        GateInputMode::Full => GraphReadout::compute(graph, norm).map(Some),
        GateInputMode::PerSample => Ok(None),
    }
}

fn fill_gate_rows(
    graph: &TrafficGraph,
    edges: Range<usize>,
    norm: &NormStats,
    mode: GateInputMode,
    readout: Option<&GraphReadout>,
) -> Array2<f64> {
    let d = graph.feature_dim();
    let wa = FeatureKind::Avg.embedding_dim(d);
    let wd = FeatureKind::Deg.embedding_dim(d);
    let mut out = Array2::zeros((edges.len(), mode.input_dim(d)));
    let mut view = out.view_mut();
    fill_embeddings(graph, edges.clone(), FeatureKind::Avg, norm, &mut view, 0);
    fill_embeddings(graph, edges, FeatureKind::Deg, norm, &mut view, wa);
    if let Some(r) = readout {
        for mut row in out.axis_iter_mut(Axis(0)) {
            let row = row.as_slice_mut().expect("row-major");
            row[wa + wd..2 * wa + wd].copy_from_slice(&r.g_avg);
            row[2 * wa + wd..].copy_from_slice(&r.g_deg);
        }
    }
    out
}

fn check_graph(graph: &TrafficGraph, norm: &NormStats) -> Result<()> {
    if !graph.has_node_features() {
        return Err(Error::InvalidArgument("node features have not been computed".into()));
    }
    if norm.dim() != graph.feature_dim() {
        return Err(Error::DimensionMismatch {
            context: "gate normalizer",
            expected: graph.feature_dim(),
            actual: norm.dim(),
        });
    }
    Ok(())
}

/// Gate input matrix over every edge.
pub fn gate_inputs(graph: &TrafficGraph, norm: &NormStats, mode: GateInputMode) -> Result<Array2<f64>> {
    check_graph(graph, norm)?;
    let readout = readout_for(graph, norm, mode)?;
    Ok(fill_gate_rows(graph, 0..graph.edge_count(), norm, mode, readout.as_ref()))
}

/// Gate input of one edge.
pub fn gate_input(
    graph: &TrafficGraph,
    edge: usize,
    norm: &NormStats,
    mode: GateInputMode,
) -> Result<Vec<f64>> {
    if edge >= graph.edge_count() {
        return Err(Error::InvalidArgument(format!(
            "edge {edge} out of range ({} edges)",
            graph.edge_count()
        )));
    }
    check_graph(graph, norm)?;
    let readout = readout_for(graph, norm, mode)?;
    Ok(fill_gate_rows(graph, edge..edge + 1, norm, mode, readout.as_ref()).into_raw_vec_and_offset().0)
}

/// Per-edge gate targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GateSupervision {
    /// Index of the lower-loss expert, ties to Avg-Expert.
    pub gate_label: Vec<u8>,
    /// True where the experts' predicted classes differ.
    pub mask: Vec<bool>,
}

impl GateSupervision {
    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn masked_indices(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }
}

/// Gate label for one edge from the two experts' losses.
#[inline]
pub fn gate_label_of(loss_avg: f64, loss_deg: f64) -> u8 {
    if loss_deg < loss_avg {
        DEG_EXPERT
    } else {
        AVG_EXPERT
    }
}

pub fn gating_labels(outputs: &ExpertOutputs, labels: &[u8]) -> Result<GateSupervision> {
    let (la, ld) = match (&outputs.loss_avg, &outputs.loss_deg) {
        (Some(a), Some(d)) if a.len() == labels.len() => (a.clone(), d.clone()),
        _ => expert_losses(outputs, labels)?,
    };
    Ok(GateSupervision {
        gate_label: la.iter().zip(&ld).map(|(&a, &d)| gate_label_of(a, d)).collect(),
        mask: outputs.disagreement(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateLoss {
    pub loss: f64,
    /// No edge was masked, so there is nothing to learn from.
    pub no_signal: bool,
}

/// Masked mean cross-entropy of the gate.
pub fn gate_loss(gate_probs: ArrayView2<f64>, sup: &GateSupervision) -> Result<GateLoss> {
    if gate_probs.nrows() != sup.mask.len() || sup.gate_label.len() != sup.mask.len() {
        return Err(Error::DimensionMismatch {
            context: "gate probabilities vs supervision",
            expected: sup.mask.len(),
            actual: gate_probs.nrows(),
        });
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (e, &m) in sup.mask.iter().enumerate() {
        if m {
            total += cross_entropy(gate_probs.row(e).as_slice().unwrap(), sup.gate_label[e]);
            count += 1;
        }
    }
    if count == 0 {
        return Ok(GateLoss {
            loss: 0.0,
            no_signal: true,
        });
    }
    Ok(GateLoss {
        loss: total / count as f64,
        no_signal: false,
    })
}

/// One gate update on the masked edges of a prepared graph. Returns the summed
/// masked loss and the masked count; zero masked edges means no step.
pub(crate) fn gate_step(
    gate: &mut GateModel,
    opt: &mut Optimizer,
    graph: &TrafficGraph,
    norm: &NormStats,
    sup: &GateSupervision,
    cfg: &TrainConfig,
) -> Result<(f64, usize)> {
    let idx = sup.masked_indices();
    if idx.is_empty() {
        return Ok((0.0, 0));
    }
    let x = gate_inputs(graph, norm, gate.mode)?.select(Axis(0), &idx);
    let y: Vec<u8> = idx.iter().map(|&e| sup.gate_label[e]).collect();
    let mut loss_sum = 0.0;
    for r in cfg.batches(idx.len()) {
        let w = vec![1.0 / r.len() as f64; r.len()];
        let (g, loss) = gate.mlp.backward_weighted(x.slice(s![r.clone(), ..]), &y[r.clone()], &w)?;
        opt.step(&mut gate.mlp, &g, cfg.learning_rate)?;
        loss_sum += loss * r.len() as f64;
    }
    Ok((loss_sum, idx.len()))
}

fn new_record(stage: Stage, epoch: usize) -> EpochRecord {
    EpochRecord {
        stage,
        epoch,
        loss: 0.0,
        masked_fraction: None,
        graphs_used: 0,
        graphs_skipped: 0,
        no_signal_graphs: 0,
    }
}

/// Stage-two training with frozen experts. Each epoch, every graph is
/// augmented with a fresh seed, the experts are re-run, and the gate is
/// stepped on the masked edges.
pub fn train_gate(
    graphs: &[TrafficGraph],
    bundle: &ExpertBundle,
    mut gate: GateModel,
    aug: &AugmentParams,
    cfg: &TrainConfig,
) -> Result<(GateModel, Vec<EpochRecord>)> {
    cfg.validate()?;
    aug.validate()?;
    gate.check(bundle.feature_dim())?;
    for g in graphs {
        bundle.check(g)?;
        g.require_labels()?;
    }
    let mut opt = Optimizer::for_model(cfg.optimizer, &gate.mlp);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rec = new_record(Stage::Gate, epoch);
        let (mut masked, mut edges) = (0usize, 0usize);
        for (gi, g) in graphs.iter().enumerate() {
            let params = aug.with_seed(mix_seed(cfg.seed, &[TAG_GATE, epoch as u64, gi as u64]));
            let ag = augment(g, &params);
            if ag.is_empty() {
                rec.graphs_skipped += 1;
                continue;
            }
            let labels = ag.require_labels()?;
            let out = crate::experts::expert_predict(bundle, &ag)?;
            let sup = gating_labels(&out, &labels)?;
            rec.graphs_used += 1;
            edges += labels.len();
            let (loss, m) = gate_step(&mut gate, &mut opt, &ag, &bundle.norm, &sup, cfg)?;
            if m == 0 {
                rec.no_signal_graphs += 1;
            }
            rec.loss += loss;
            masked += m;
        }
        if masked > 0 {
            rec.loss /= masked as f64;
        }
        if edges > 0 {
            rec.masked_fraction = Some(masked as f64 / edges as f64);
        }
        history.push(rec);
    }
    Ok((gate, history))
}

/// Hard-selection output for every edge.
#[derive(Debug, Clone, PartialEq)]
pub struct MoePrediction {
    pub class: Vec<u8>,
    pub chosen: Vec<u8>,
    /// `|E| × 2` gate probabilities `(avg, deg)`.
    pub gate_probs: Array2<f64>,
    pub experts: ExpertOutputs,
}

pub fn moe_predict(bundle: &ExpertBundle, gate: &GateModel, graph: &TrafficGraph) -> Result<MoePrediction> {
    moe_predict_batched(bundle, gate, graph, DEFAULT_INFER_BATCH)
}

/// Batched, parallel inference. The gate input already holds both experts'
/// embeddings, so each batch builds it once and the experts read column
/// slices of it.
pub fn moe_predict_batched(
    bundle: &ExpertBundle,
    gate: &GateModel,
    graph: &TrafficGraph,
    batch: usize,
) -> Result<MoePrediction> {
    bundle.check(graph)?;
    let d = bundle.feature_dim();
    gate.check(d)?;
    check_graph(graph, &bundle.norm)?;
    let wa = FeatureKind::Avg.embedding_dim(d);
    let wd = FeatureKind::Deg.embedding_dim(d);
    let readout = readout_for(graph, &bundle.norm, gate.mode)?;
    let parts: Vec<(Array2<f64>, Array2<f64>, Array2<f64>)> = batch_ranges(graph.edge_count(), batch)
        .into_par_iter()
        .map(|r| {
            let x = fill_gate_rows(graph, r, &bundle.norm, gate.mode, readout.as_ref());
            Ok((
                bundle.avg.forward(x.slice(s![.., ..wa]))?,
                bundle.deg.forward(x.slice(s![.., wa..wa + wd]))?,
                gate.mlp.forward(x.view())?,
            ))
        })
        .collect::<Result<_>>()?;
    let n = graph.edge_count();
    let mut p_avg = Array2::zeros((n, 2));
    let mut p_deg = Array2::zeros((n, 2));
    let mut gate_probs = Array2::zeros((n, 2));
    let mut at = 0;
    for (a, dg, gp) in parts {
        let k = a.nrows();
        p_avg.slice_mut(s![at..at + k, ..]).assign(&a);
        p_deg.slice_mut(s![at..at + k, ..]).assign(&dg);
        gate_probs.slice_mut(s![at..at + k, ..]).assign(&gp);
        at += k;
    }
    let mut experts = ExpertOutputs {
        p_avg,
        p_deg,
        loss_avg: None,
        loss_deg: None,
    };
    if let Ok(labels) = graph.require_labels() {
        experts.attach_losses(&labels)?;
    }
    Ok(route_hard(experts, gate_probs))
}

/// Hard selection given both experts' outputs and the gate probabilities.
pub fn route_hard(experts: ExpertOutputs, gate_probs: Array2<f64>) -> MoePrediction {
    let n = experts.len();
    let mut class = Vec::with_capacity(n);
    let mut chosen = Vec::with_capacity(n);
    for e in 0..n {
        let c = argmax2(gate_probs.row(e).as_slice().unwrap());
        chosen.push(c);
        class.push(if c == AVG_EXPERT {
            experts.pred_avg(e)
        } else {
            experts.pred_deg(e)
        });
    }
    MoePrediction {
        class,
        chosen,
        gate_probs,
        experts,
    }
}

/// The weighted-summation variant: a gate mixes the experts' penultimate
/// latents and a separate head classifies the mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedMoe {
    pub gate: GateModel,
    pub head: MlpModel,
}

impl WeightedMoe {
    pub fn new(
        bundle: &ExpertBundle,
        gate_hidden: &[usize],
        head_hidden: &[usize],
        activation: Activation,
        mode: GateInputMode,
        seed: u64,
    ) -> Result<Self> {
        let width = latent_width(bundle)?;
        Ok(WeightedMoe {
            gate: GateModel::new(bundle.feature_dim(), gate_hidden, activation, mode, seed)?,
            head: MlpModel::with_activation(
                &classifier_dims(width, head_hidden),
                activation,
                mix_seed(seed, &[14]),
            )?,
        })
    }
}

fn latent_width(bundle: &ExpertBundle) -> Result<usize> {
    let (a, d) = (bundle.avg.latent_dim(), bundle.deg.latent_dim());
    if a != d {
        return Err(Error::DimensionMismatch {
            context: "expert latent widths",
            expected: a,
            actual: d,
        });
    }
    Ok(a)
}

/// `w_avg · z_avg + w_deg · z_deg` row by row.
pub fn mix_latents(weights: ArrayView2<f64>, z_avg: ArrayView2<f64>, z_deg: ArrayView2<f64>) -> Array2<f64> {
    let mut out = z_avg.to_owned();
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let (wa, wd) = (weights[[i, 0]], weights[[i, 1]]);
        row.zip_mut_with(&z_deg.row(i), |a, &b| *a = wa * *a + wd * b);
    }
    out
}

struct LatentBatch {
    gate_x: Array2<f64>,
    z_avg: Array2<f64>,
    z_deg: Array2<f64>,
}

fn latent_batch(bundle: &ExpertBundle, mode: GateInputMode, graph: &TrafficGraph) -> Result<LatentBatch> {
    let d = bundle.feature_dim();
    let wa = FeatureKind::Avg.embedding_dim(d);
    let wd = FeatureKind::Deg.embedding_dim(d);
    let full = gate_inputs(graph, &bundle.norm, GateInputMode::Full)?;
    let z_avg = bundle.avg.latent(full.slice(s![.., ..wa]))?;
    let z_deg = bundle.deg.latent(full.slice(s![.., wa..wa + wd]))?;
    let gate_x = match mode {
        GateInputMode::Full => full,
        GateInputMode::PerSample => full.slice(s![.., ..wa + wd]).to_owned(),
    };
    Ok(LatentBatch { gate_x, z_avg, z_deg })
}

/// One end-to-end step of gate and head on the classification loss over all
/// edges. The gate receives gradient through the softmax weights.
pub(crate) fn weighted_step(
    model: &mut WeightedMoe,
    opt_gate: &mut Optimizer,
    opt_head: &mut Optimizer,
    bundle: &ExpertBundle,
    graph: &TrafficGraph,
    labels: &[u8],
    cfg: &TrainConfig,
) -> Result<f64> {
    let lb = latent_batch(bundle, model.gate.mode, graph)?;
    let mut loss_sum = 0.0;
    for r in cfg.batches(labels.len()) {
        let n = r.len();
        let gc = model.gate.mlp.forward_cached(lb.gate_x.slice(s![r.clone(), ..]))?;
        let za = lb.z_avg.slice(s![r.clone(), ..]);
        let zd = lb.z_deg.slice(s![r.clone(), ..]);
        let mix = mix_latents(gc.probs.view(), za, zd);
        let hc = model.head.forward_cached(mix.view())?;
        let y = &labels[r.clone()];
        let mut dlogits = hc.probs.clone();
        for (i, mut row) in dlogits.axis_iter_mut(Axis(0)).enumerate() {
            loss_sum += cross_entropy(hc.probs.row(i).as_slice().unwrap(), y[i]);
            row[y[i] as usize] -= 1.0;
            row /= n as f64;
        }
        let (g_head, dmix) = model.head.backward_from_logit_grad(&hc, dlogits.view());
        let mut dgate = Array2::zeros((n, 2));
        for i in 0..n {
            let dwa = dmix.row(i).dot(&za.row(i));
            let dwd = dmix.row(i).dot(&zd.row(i));
            let (pa, pd) = (gc.probs[[i, 0]], gc.probs[[i, 1]]);
            let mean = pa * dwa + pd * dwd;
            dgate[[i, 0]] = pa * (dwa - mean);
            dgate[[i, 1]] = pd * (dwd - mean);
        }
        let (g_gate, _) = model.gate.mlp.backward_from_logit_grad(&gc, dgate.view());
        opt_head.step(&mut model.head, &g_head, cfg.learning_rate)?;
        opt_gate.step(&mut model.gate.mlp, &g_gate, cfg.learning_rate)?;
    }
    Ok(loss_sum)
}

/// Stage-two training of the weighted variant with frozen experts.
pub fn train_weighted_moe(
    graphs: &[TrafficGraph],
    bundle: &ExpertBundle,
    mut model: WeightedMoe,
    aug: &AugmentParams,
    cfg: &TrainConfig,
) -> Result<(WeightedMoe, Vec<EpochRecord>)> {
    cfg.validate()?;
    aug.validate()?;
    model.gate.check(bundle.feature_dim())?;
    let width = latent_width(bundle)?;
    if model.head.input_dim() != width {
        return Err(Error::DimensionMismatch {
            context: "weighted head input",
            expected: width,
            actual: model.head.input_dim(),
        });
    }
    for g in graphs {
        bundle.check(g)?;
        g.require_labels()?;
    }
    let mut opt_gate = Optimizer::for_model(cfg.optimizer, &model.gate.mlp);
    let mut opt_head = Optimizer::for_model(cfg.optimizer, &model.head);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rec = new_record(Stage::WeightedGate, epoch);
        let mut edges = 0usize;
        for (gi, g) in graphs.iter().enumerate() {
            let params = aug.with_seed(mix_seed(cfg.seed, &[TAG_GATE, epoch as u64, gi as u64]));
            let ag = augment(g, &params);
            if ag.is_empty() {
                rec.graphs_skipped += 1;
                continue;
            }
            let labels = ag.require_labels()?;
            rec.loss += weighted_step(&mut model, &mut opt_gate, &mut opt_head, bundle, &ag, &labels, cfg)?;
            edges += labels.len();
            rec.graphs_used += 1;
        }
        if edges > 0 {
            rec.loss /= edges as f64;
        }
        history.push(rec);
    }
    Ok((model, history))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedPrediction {
    pub class: Vec<u8>,
    pub gate_probs: Array2<f64>,
    pub experts: ExpertOutputs,
}

impl WeightedPrediction {
    /// The expert with the larger mixing weight on each edge.
    pub fn dominant(&self) -> Vec<u8> {
        self.gate_probs
            .axis_iter(Axis(0))
            .map(|r| argmax2(r.as_slice().unwrap()))
            .collect()
    }
}

pub fn moe_predict_weighted(
    bundle: &ExpertBundle,
    model: &WeightedMoe,
    graph: &TrafficGraph,
) -> Result<WeightedPrediction> {
    bundle.check(graph)?;
    model.gate.check(bundle.feature_dim())?;
    latent_width(bundle)?;
    let lb = latent_batch(bundle, model.gate.mode, graph)?;
    let gate_probs = model.gate.mlp.forward(lb.gate_x.view())?;
    let mix = mix_latents(gate_probs.view(), lb.z_avg.view(), lb.z_deg.view());
    let probs = model.head.forward(mix.view())?;
    let class = probs
        .axis_iter(Axis(0))
        .map(|r| argmax2(r.as_slice().unwrap()))
        .collect();
    let experts = crate::experts::expert_predict(bundle, graph)?;
    Ok(WeightedPrediction {
        class,
        gate_probs,
        experts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;
    use crate::ingest::FlowRecord;
    use ndarray::array;

    fn rec(src: &str, dst: &str, f: &[f64], label: u8) -> FlowRecord {
        FlowRecord {
            flow_id: 0,
            src_ip: src.into(),
            dst_ip: dst.into(),
            timestamp: 0.0,
            features: f.to_vec(),
            label: Some(label),
        }
    }

    fn outputs(p_avg: Array2<f64>, p_deg: Array2<f64>) -> ExpertOutputs {
        ExpertOutputs {
            p_avg,
            p_deg,
            loss_avg: None,
            loss_deg: None,
        }
    }

    #[test]
    fn input_widths() {
        assert_eq!(GateInputMode::Full.input_dim(4), 36);
        assert_eq!(GateInputMode::PerSample.input_dim(4), 18);
    }

    #[test]
    fn singleton_graph_halves_match() {
        let mut g = build_graph(&[rec("a", "b", &[1.0, 2.0, 3.0, 4.0], 0)]).unwrap();
        g.compute_node_features();
        let x = gate_input(&g, 0, &NormStats::identity(4), GateInputMode::Full).unwrap();
        assert_eq!(x.len(), 36);
        assert_eq!(x[..18], x[18..]);
        let p = gate_input(&g, 0, &NormStats::identity(4), GateInputMode::PerSample).unwrap();
        assert_eq!(p, x[..18]);
        assert!(gate_input(&g, 1, &NormStats::identity(4), GateInputMode::Full).is_err());
    }

    #[test]
    fn labels_and_mask() {
        let out = outputs(
            array![[0.9, 0.1], [0.2, 0.8], [0.6, 0.4], [0.3, 0.7]],
            array![[0.5, 0.5], [0.1, 0.9], [0.6, 0.4], [0.8, 0.2]],
        );
        let sup = gating_labels(&out, &[0, 1, 0, 1]).unwrap();
        // edge 0: avg loss lower; edge 1: deg lower; edge 2: tie -> avg
        assert_eq!(sup.gate_label, vec![0, 1, 0, 0]);
        // edge 0: deg argmax of a tie is class 0, so both predict 0
        assert_eq!(sup.mask, vec![false, false, false, true]);
        assert!(gating_labels(&out, &[0, 1]).is_err());
    }

    #[test]
    fn gate_label_rule() {
        assert_eq!(gate_label_of(0.1, 0.5), AVG_EXPERT);
        assert_eq!(gate_label_of(0.5, 0.1), DEG_EXPERT);
        assert_eq!(gate_label_of(0.3, 0.3), AVG_EXPERT);
    }

    #[test]
    fn loss_edge_cases() {
        let sup = GateSupervision {
            gate_label: vec![0, 1],
            mask: vec![false, false],
        };
        let l = gate_loss(array![[0.5, 0.5], [0.2, 0.8]].view(), &sup).unwrap();
        assert_eq!(l.loss, 0.0);
        assert!(l.no_signal);
        let sup = GateSupervision {
            gate_label: vec![1, 1],
            mask: vec![true, false],
        };
        let l = gate_loss(array![[0.5, 0.5], [0.9, 0.1]].view(), &sup).unwrap();
        assert!((l.loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(!l.no_signal);
    }

    #[test]
    fn hard_routing_semantics() {
        let ex = outputs(array![[0.2, 0.8], [0.3, 0.7]], array![[0.7, 0.3], [0.1, 0.9]]);
        let p = route_hard(ex, array![[0.9, 0.1], [0.05, 0.95]]);
        assert_eq!(p.chosen, vec![AVG_EXPERT, DEG_EXPERT]);
        assert_eq!(p.class, vec![1, 1]);
    }

    #[test]
    fn mixing_is_convex() {
        let z = array![[1.0, -2.0, 3.0]];
        let other = array![[5.0, 5.0, 5.0]];
        assert_eq!(mix_latents(array![[1.0, 0.0]].view(), z.view(), other.view()), z);
        assert_eq!(mix_latents(array![[0.5, 0.5]].view(), z.view(), z.view()), z);
    }

    fn small_graph() -> TrafficGraph {
        let mut recs = Vec::new();
        for i in 0..40 {
            let f = [(i % 7) as f64 * 0.3 - 1.0, (i % 3) as f64 - 1.0, 0.5, -(i % 5) as f64 * 0.2];
            recs.push(rec(&format!("s{}", i % 6), &format!("d{}", i % 4), &f, (i % 6 == 0) as u8));
        }
        let mut g = build_graph(&recs).unwrap();
        g.compute_node_features();
        g
    }

    #[test]
    fn batching_preserves_predictions() {
        let g = small_graph();
        let bundle = ExpertBundle::new(NormStats::identity(4), &[8], Activation::Relu, 2).unwrap();
        let gate = GateModel::new(4, &[8], Activation::Relu, GateInputMode::Full, 2).unwrap();
        let a = moe_predict_batched(&bundle, &gate, &g, 1).unwrap();
        let b = moe_predict_batched(&bundle, &gate, &g, 1000).unwrap();
        assert_eq!(a.class, b.class);
        assert!((&a.gate_probs - &b.gate_probs).iter().all(|v| v.abs() < 1e-12));
        let plain = crate::experts::expert_predict(&bundle, &g).unwrap();
        assert!((&a.experts.p_avg - &plain.p_avg).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn gate_training_leaves_experts_alone() {
        let g = small_graph();
        let bundle = ExpertBundle::new(NormStats::identity(4), &[8], Activation::Relu, 5).unwrap();
        let before = bundle.clone();
        let gate = GateModel::new(4, &[8], Activation::Relu, GateInputMode::Full, 5).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let (_, hist) = train_gate(&[g], &bundle, gate, &AugmentParams::stage2_default(), &cfg).unwrap();
        assert_eq!(bundle, before);
        assert_eq!(hist.len(), 3);
    }
}
