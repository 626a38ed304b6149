//! Per-epoch training records.

use std::fmt;
use std::io::Write;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Experts,
    Gate,
    Joint,
    WeightedGate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Experts => "experts",
            Stage::Gate => "gate",
            Stage::Joint => "joint",
            Stage::WeightedGate => "weighted_gate",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub stage: Stage,
    pub epoch: usize,
    /// Edge-weighted mean of the stage's loss (L_cls, L_gate, or their sum).
    pub loss: f64,
    /// Fraction of edges where the experts disagree; `None` in the expert stage.
    pub masked_fraction: Option<f64>,
    pub graphs_used: usize,
    /// Graphs emptied by augmentation.
    pub graphs_skipped: usize,
    /// Graphs that carried no gate-training signal (no masked edge).
    pub no_signal_graphs: usize,
}

pub fn write_epoch_csv<W: Write>(records: &[EpochRecord], mut w: W) -> Result<()> {
    writeln!(w, "stage,epoch,loss,masked_fraction,graphs_used,graphs_skipped,no_signal_graphs")?;
    for r in records {
        writeln!(
            w,
            "{},{},{:.9},{},{},{},{}",
            r.stage,
            r.epoch,
            r.loss,
            r.masked_fraction.map(|m| format!("{m:.6}")).unwrap_or_default(),
            r.graphs_used,
            r.graphs_skipped,
            r.no_signal_graphs
        )?;
    }
    Ok(())
}

/// SplitMix64 finalizer used to derive independent sub-seeds.
pub(crate) fn mix_seed(base: u64, parts: &[u64]) -> u64 {
    let mut x = base;
    for &p in parts {
        x = x.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(p);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x = z ^ (z >> 31);
    }
    x
}
