//! Turning flow records into normalized window graphs.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{build_graph, TrafficGraph};
use crate::ingest::{window_spans, FlowRecord, NormStats};

/// Builds one graph per time window and normalizes it with `norm`. Windows
/// are independent, so they are built in parallel; output order follows time.
pub fn build_window_graphs(
    mut records: Vec<FlowRecord>,
    window_secs: f64,
    norm: &NormStats,
) -> Result<Vec<TrafficGraph>> {
    let spans = window_spans(&mut records, window_secs)?;
    spans
        .into_par_iter()
        .map(|span| {
            let mut g = build_graph(&records[span])?;
            g.normalize(norm)?;
            Ok(g)
        })
        .collect()
}

/// Fits feature statistics on the training records, builds the training
/// graphs, then fits the degree normalizer on their nodes.
pub fn prepare_training(records: Vec<FlowRecord>, window_secs: f64) -> Result<(NormStats, Vec<TrafficGraph>)> {
    if records.is_empty() {
        return Err(Error::EmptyInput("training set has no flows"));
    }
    let mut norm = NormStats::fit(&records)?;
    let graphs = build_window_graphs(records, window_secs, &norm)?;
    norm.fit_degrees(graphs.iter().flat_map(|g| g.h_deg_vector().iter().copied()))?;
    Ok((norm, graphs))
}
