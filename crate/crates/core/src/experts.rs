//! The two node-feature experts: Avg-Expert on averaged traffic features and
//! Deg-Expert on node degrees. Each is an MLP over its flow embedding.

use ndarray::{concatenate, Array2, Axis};
use rayon::prelude::*;

use crate::augment::{augment, AugmentParams};
use crate::error::{Error, Result};
use crate::graph::{embed_range, FeatureKind, TrafficGraph};
use crate::history::{mix_seed, EpochRecord, Stage};
use crate::ingest::NormStats;
use crate::nn::{argmax2, cross_entropy, Activation, Gradients, MlpModel, Optimizer, TrainConfig};

/// Rows per inference batch.
pub const DEFAULT_INFER_BATCH: usize = 8192;

/// Seed-derivation tag for stage-1 augmentation.
pub(crate) const TAG_EXPERTS: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertBundle {
    pub avg: MlpModel,
    pub deg: MlpModel,
    pub norm: NormStats,
}

/// Layer widths `[input, hidden…, 2]`.
pub fn classifier_dims(input: usize, hidden: &[usize]) -> Vec<usize> {
    let mut dims = Vec::with_capacity(hidden.len() + 2);
    dims.push(input);
    dims.extend_from_slice(hidden);
    dims.push(2);
    dims
}

impl ExpertBundle {
    pub fn new(norm: NormStats, hidden: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        let d = norm.dim();
        if d == 0 {
            return Err(Error::InvalidArgument("feature dimension must be positive".into()));
        }
        Ok(ExpertBundle {
            avg: MlpModel::with_activation(
                &classifier_dims(FeatureKind::Avg.embedding_dim(d), hidden),
                activation,
                mix_seed(seed, &[11]),
            )?,
            deg: MlpModel::with_activation(
                &classifier_dims(FeatureKind::Deg.embedding_dim(d), hidden),
                activation,
                mix_seed(seed, &[12]),
            )?,
            norm,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.norm.dim()
    }

    pub fn model(&self, kind: FeatureKind) -> &MlpModel {
        match kind {
            FeatureKind::Avg => &self.avg,
            FeatureKind::Deg => &self.deg,
            FeatureKind::Concat => panic!("the bundle holds no concatenated-feature expert"),
        }
    }

    pub fn check(&self, graph: &TrafficGraph) -> Result<()> {
        let d = self.feature_dim();
        if graph.feature_dim() != d {
            return Err(Error::DimensionMismatch {
                context: "graph feature width vs expert bundle",
                expected: d,
                actual: graph.feature_dim(),
            });
        }
        for (kind, m) in [(FeatureKind::Avg, &self.avg), (FeatureKind::Deg, &self.deg)] {
            if m.input_dim() != kind.embedding_dim(d) || m.output_dim() != 2 {
                return Err(Error::DimensionMismatch {
                    context: "expert input width",
                    expected: kind.embedding_dim(d),
                    actual: m.input_dim(),
                });
            }
        }
        Ok(())
    }
}

/// Per-edge outputs of both experts.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertOutputs {
    /// `|E| × 2` probabilities from Avg-Expert.
    pub p_avg: Array2<f64>,
    /// `|E| × 2` probabilities from Deg-Expert.
    pub p_deg: Array2<f64>,
    /// Per-edge cross-entropy, present when the graph is fully labeled.
    pub loss_avg: Option<Vec<f64>>,
    pub loss_deg: Option<Vec<f64>>,
}

impl ExpertOutputs {
    pub fn len(&self) -> usize {
        self.p_avg.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn pred_avg(&self, e: usize) -> u8 {
        argmax2(self.p_avg.row(e).as_slice().unwrap())
    }

    #[inline]
    pub fn pred_deg(&self, e: usize) -> u8 {
        argmax2(self.p_deg.row(e).as_slice().unwrap())
    }

    /// True where the experts' predicted classes differ.
    pub fn disagreement(&self) -> Vec<bool> {
        (0..self.len()).map(|e| self.pred_avg(e) != self.pred_deg(e)).collect()
    }

    /// Fills in per-edge losses against `labels`.
    pub fn attach_losses(&mut self, labels: &[u8]) -> Result<()> {
        let (la, ld) = expert_losses(self, labels)?;
        self.loss_avg = Some(la);
        self.loss_deg = Some(ld);
        Ok(())
    }
}

pub(crate) fn batch_ranges(n: usize, batch: usize) -> Vec<std::ops::Range<usize>> {
    let batch = batch.max(1);
    (0..n.div_ceil(batch))
        .map(|b| b * batch..((b + 1) * batch).min(n))
        .collect()
}

/// Probabilities of one model over every edge, in batches.
pub fn predict_kind(
    model: &MlpModel,
    graph: &TrafficGraph,
    kind: FeatureKind,
    norm: &NormStats,
    batch: usize,
) -> Result<Array2<f64>> {
    let parts: Vec<Array2<f64>> = batch_ranges(graph.edge_count(), batch)
        .into_par_iter()
        .map(|r| {
            let x = embed_range(graph, r, kind, norm)?;
            model.forward(x.view())
        })
        .collect::<Result<_>>()?;
    if parts.is_empty() {
        return Ok(Array2::zeros((0, 2)));
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    Ok(concatenate(Axis(0), &views).expect("uniform widths"))
}

/// Both experts' probabilities for every edge (losses attached when labeled).
pub fn expert_predict(bundle: &ExpertBundle, graph: &TrafficGraph) -> Result<ExpertOutputs> {
    expert_predict_batched(bundle, graph, DEFAULT_INFER_BATCH)
}

pub fn expert_predict_batched(
    bundle: &ExpertBundle,
    graph: &TrafficGraph,
    batch: usize,
) -> Result<ExpertOutputs> {
    bundle.check(graph)?;
    let mut out = ExpertOutputs {
        p_avg: predict_kind(&bundle.avg, graph, FeatureKind::Avg, &bundle.norm, batch)?,
        p_deg: predict_kind(&bundle.deg, graph, FeatureKind::Deg, &bundle.norm, batch)?,
        loss_avg: None,
        loss_deg: None,
    };
    if let Ok(labels) = graph.require_labels() {
        out.attach_losses(&labels)?;
    }
    Ok(out)
}

/// Per-edge `(L_avg, L_deg)` cross-entropies.
pub fn expert_losses(outputs: &ExpertOutputs, labels: &[u8]) -> Result<(Vec<f64>, Vec<f64>)> {
    if labels.len() != outputs.len() {
        return Err(Error::MissingLabels(outputs.len().saturating_sub(labels.len())));
    }
    let la = labels
        .iter()
        .enumerate()
        .map(|(e, &y)| cross_entropy(outputs.p_avg.row(e).as_slice().unwrap(), y))
        .collect();
    let ld = labels
        .iter()
        .enumerate()
        .map(|(e, &y)| cross_entropy(outputs.p_deg.row(e).as_slice().unwrap(), y))
        .collect();
    Ok((la, ld))
}

/// `L_cls = (1/|E|) Σ (L_avg + L_deg)`.
pub fn expert_training_loss(loss_avg: &[f64], loss_deg: &[f64]) -> Result<f64> {
    if loss_avg.is_empty() {
        return Err(Error::EmptyInput("expert loss over an empty edge set"));
    }
    if loss_avg.len() != loss_deg.len() {
        return Err(Error::DimensionMismatch {
            context: "per-edge losses",
            expected: loss_avg.len(),
            actual: loss_deg.len(),
        });
    }
    let total: f64 = loss_avg.iter().zip(loss_deg).map(|(a, d)| a + d).sum();
    Ok(total / loss_avg.len() as f64)
}

/// Optional per-class loss weights for imbalanced data.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ClassWeighting {
    #[default]
    None,
    /// `w_c = N / (2 · N_c)` computed on the training labels.
    InverseFrequency,
}

impl ClassWeighting {
    pub(crate) fn weights(self, graphs: &[TrafficGraph]) -> [f64; 2] {
        match self {
            ClassWeighting::None => [1.0, 1.0],
            ClassWeighting::InverseFrequency => {
                let mut counts = [0usize; 2];
                for g in graphs {
                    for l in g.labels().iter().flatten() {
                        counts[*l as usize] += 1;
                    }
                }
                let n = (counts[0] + counts[1]) as f64;
                let w = |c: usize| if c == 0 { 1.0 } else { n / (2.0 * c as f64) };
                [w(counts[0]), w(counts[1])]
            }
        }
    }
}

/// Sample weights for a mean loss over `labels`, scaled per class.
pub(crate) fn mean_weights(labels: &[u8], class_w: [f64; 2], total: usize) -> Vec<f64> {
    let inv = 1.0 / total as f64;
    labels.iter().map(|&y| class_w[y as usize] * inv).collect()
}

/// Gradients of `L_cls` with respect to each expert on one graph, and the
/// loss itself. Each expert's gradient depends only on its own term.
pub fn cls_gradients(
    bundle: &ExpertBundle,
    graph: &TrafficGraph,
    class_w: [f64; 2],
) -> Result<(Gradients, Gradients, f64)> {
    bundle.check(graph)?;
    let labels = graph.require_labels()?;
    let n = labels.len();
    if n == 0 {
        return Err(Error::EmptyInput("expert loss over an empty edge set"));
    }
    let w = mean_weights(&labels, class_w, n);
    let xa = embed_range(graph, 0..n, FeatureKind::Avg, &bundle.norm)?;
    let xd = embed_range(graph, 0..n, FeatureKind::Deg, &bundle.norm)?;
    let (ga, la) = bundle.avg.backward_weighted(xa.view(), &labels, &w)?;
    let (gd, ld) = bundle.deg.backward_weighted(xd.view(), &labels, &w)?;
    Ok((ga, gd, la + ld))
}

/// One expert-side update on a prepared (augmented) graph; returns the summed
/// loss over edges for logging.
pub(crate) fn step_classifiers(
    models: &mut [(&mut MlpModel, &mut Optimizer, FeatureKind)],
    graph: &TrafficGraph,
    labels: &[u8],
    norm: &NormStats,
    cfg: &TrainConfig,
    class_w: [f64; 2],
) -> Result<f64> {
    let mut loss_sum = 0.0;
    let n = labels.len();
    for range in cfg.batches(n) {
        let y = &labels[range.clone()];
        let w = mean_weights(y, class_w, y.len());
        for (model, opt, kind) in models.iter_mut() {
            let x = embed_range(graph, range.clone(), *kind, norm)?;
            let (g, loss) = model.backward_weighted(x.view(), y, &w)?;
            opt.step(model, &g, cfg.learning_rate)?;
            loss_sum += loss * y.len() as f64;
        }
    }
    Ok(loss_sum)
}

#[derive(Debug, Clone, Default)]
pub struct ExpertTrainOptions {
    pub class_weighting: ClassWeighting,
}

/// Stage-one training: each epoch, every graph is augmented with a fresh seed
/// derived from `(cfg.seed, epoch, graph index)` and both experts are stepped
/// on `L_cls`. Graphs emptied by augmentation are skipped.
pub fn train_experts(
    graphs: &[TrafficGraph],
    mut bundle: ExpertBundle,
    aug: &AugmentParams,
    cfg: &TrainConfig,
    options: &ExpertTrainOptions,
) -> Result<(ExpertBundle, Vec<EpochRecord>)> {
    cfg.validate()?;
    aug.validate()?;
    for g in graphs {
        bundle.check(g)?;
        g.require_labels()?;
    }
    let class_w = options.class_weighting.weights(graphs);
    let mut opt_avg = Optimizer::for_model(cfg.optimizer, &bundle.avg);
    let mut opt_deg = Optimizer::for_model(cfg.optimizer, &bundle.deg);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rec = EpochRecord {
            stage: Stage::Experts,
            epoch,
            loss: 0.0,
            masked_fraction: None,
            graphs_used: 0,
            graphs_skipped: 0,
            no_signal_graphs: 0,
        };
        let mut edges = 0usize;
        for (gi, g) in graphs.iter().enumerate() {
            let params = aug.with_seed(mix_seed(cfg.seed, &[TAG_EXPERTS, epoch as u64, gi as u64]));
            let ag = augment(g, &params);
            if ag.is_empty() {
                rec.graphs_skipped += 1;
                continue;
            }
            let labels = ag.require_labels()?;
            let ExpertBundle { avg, deg, norm } = &mut bundle;
            rec.loss += step_classifiers(
                &mut [
                    (avg, &mut opt_avg, FeatureKind::Avg),
                    (deg, &mut opt_deg, FeatureKind::Deg),
                ],
                &ag,
                &labels,
                norm,
                cfg,
                class_w,
            )?;
            edges += labels.len();
            rec.graphs_used += 1;
        }
        if edges > 0 {
            rec.loss /= edges as f64;
        }
        history.push(rec);
    }
    Ok((bundle, history))
}

/// A lone classifier on one feature kind, used for the single-expert and
/// concatenated-feature baselines.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleExpert {
    pub kind: FeatureKind,
    pub model: MlpModel,
    pub norm: NormStats,
}

impl SingleExpert {
    pub fn new(
        kind: FeatureKind,
        norm: NormStats,
        hidden: &[usize],
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        let dims = classifier_dims(kind.embedding_dim(norm.dim()), hidden);
        Ok(SingleExpert {
            kind,
            model: MlpModel::with_activation(&dims, activation, seed)?,
            norm,
        })
    }

    pub fn predict(&self, graph: &TrafficGraph) -> Result<Array2<f64>> {
        predict_kind(&self.model, graph, self.kind, &self.norm, DEFAULT_INFER_BATCH)
    }

    pub fn train(
        mut self,
        graphs: &[TrafficGraph],
        aug: &AugmentParams,
        cfg: &TrainConfig,
        options: &ExpertTrainOptions,
    ) -> Result<(Self, Vec<EpochRecord>)> {
        cfg.validate()?;
        let class_w = options.class_weighting.weights(graphs);
        let mut opt = Optimizer::for_model(cfg.optimizer, &self.model);
        let mut history = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            let mut rec = EpochRecord {
                stage: Stage::Experts,
                epoch,
                loss: 0.0,
                masked_fraction: None,
                graphs_used: 0,
                graphs_skipped: 0,
                no_signal_graphs: 0,
            };
            let mut edges = 0usize;
            for (gi, g) in graphs.iter().enumerate() {
                let params =
                    aug.with_seed(mix_seed(cfg.seed, &[TAG_EXPERTS, epoch as u64, gi as u64]));
                let ag = augment(g, &params);
                if ag.is_empty() {
                    rec.graphs_skipped += 1;
                    continue;
                }
                let labels = ag.require_labels()?;
                rec.loss += step_classifiers(
                    &mut [(&mut self.model, &mut opt, self.kind)],
                    &ag,
                    &labels,
                    &self.norm,
                    cfg,
                    class_w,
                )?;
                edges += labels.len();
                rec.graphs_used += 1;
            }
            if edges > 0 {
                rec.loss /= edges as f64;
            }
            history.push(rec);
        }
        Ok((self, history))
    }
}
