//! Classification metrics, gate alignment and the oracle selector.

use crate::error::{Error, Result};
use crate::experts::{expert_losses, ExpertOutputs};
use crate::gate::{gate_label_of, GateSupervision, AVG_EXPERT};
use crate::ingest::MALICIOUS;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricsReport {
    pub acc: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
    /// Fraction of masked edges routed to the lower-loss expert.
    pub acc_gate: Option<f64>,
    pub n_masked: u64,
}

impl MetricsReport {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Routing decisions paired with their supervision, for ACC_gate.
#[derive(Debug, Clone, Copy)]
pub struct GateCheck<'a> {
    pub chosen: &'a [u8],
    pub supervision: &'a GateSupervision,
}

/// Running confusion counts over several prediction sets.
#[derive(Debug, Clone, Copy, Default)]
pub struct MetricsAccumulator {
    tp: u64,
    fp: u64,
    tn: u64,
    fn_: u64,
    gate_hits: u64,
    n_masked: u64,
    gate_seen: bool,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl MetricsAccumulator {
    pub fn add(&mut self, pred: &[u8], labels: &[u8], gate: Option<GateCheck<'_>>) -> Result<()> {
        if pred.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                context: "predictions vs labels",
                expected: labels.len(),
                actual: pred.len(),
            });
        }
        if let Some(g) = gate {
            let n = labels.len();
            if g.chosen.len() != n || g.supervision.mask.len() != n || g.supervision.gate_label.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "gate decisions vs labels",
                    expected: n,
                    actual: g.chosen.len(),
                });
            }
        }
        for (&p, &y) in pred.iter().zip(labels) {
            match (p == MALICIOUS, y == MALICIOUS) {
                (true, true) => self.tp += 1,
                (true, false) => self.fp += 1,
                (false, false) => self.tn += 1,
                (false, true) => self.fn_ += 1,
            }
        }
        if let Some(g) = gate {
            self.gate_seen = true;
            for e in 0..labels.len() {
                if g.supervision.mask[e] {
                    self.n_masked += 1;
                    self.gate_hits += (g.chosen[e] == g.supervision.gate_label[e]) as u64;
                }
            }
        }
        Ok(())
    }

    pub fn finish(&self) -> MetricsReport {
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        MetricsReport {
            acc: ratio(self.tp + self.tn, self.tp + self.tn + self.fp + self.fn_),
            f1,
            precision,
            recall,
            tp: self.tp,
            fp: self.fp,
            tn: self.tn,
            fn_: self.fn_,
            acc_gate: (self.gate_seen && self.n_masked > 0).then(|| ratio(self.gate_hits, self.n_masked)),
            n_masked: self.n_masked,
        }
    }
}

/// Malicious is the positive class.
pub fn compute_metrics(pred: &[u8], labels: &[u8], gate: Option<GateCheck<'_>>) -> Result<MetricsReport> {
    let mut acc = MetricsAccumulator::default();
    acc.add(pred, labels, gate)?;
    Ok(acc.finish())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSelection {
    pub class: Vec<u8>,
    /// Expert picked on each edge.
    pub chosen: Vec<u8>,
    pub metrics: MetricsReport,
}

/// Hindsight routing to the lower-loss expert on every edge (ties to avg).
pub fn oracle_select(outputs: &ExpertOutputs, labels: &[u8]) -> Result<OracleSelection> {
    let (la, ld) = expert_losses(outputs, labels)?;
    let chosen: Vec<u8> = la.iter().zip(&ld).map(|(&a, &d)| gate_label_of(a, d)).collect();
    let class: Vec<u8> = chosen
        .iter()
        .enumerate()
        .map(|(e, &c)| {
            if c == AVG_EXPERT {
                outputs.pred_avg(e)
            } else {
                outputs.pred_deg(e)
            }
        })
        .collect();
    let metrics = compute_metrics(&class, labels, None)?;
    Ok(OracleSelection {
        class,
        chosen,
        metrics,
    })
}
