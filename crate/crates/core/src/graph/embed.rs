//! Flow embeddings and graph readouts.
//!
//! The embedding of edge `(u, v)` under a node-feature kind is
//! `h_u ‖ h_v ‖ f_(u,v)`. Degrees enter through the degree normalizer held in
//! [`NormStats`]; averaged features are taken as stored on the graph (they are
//! already on the normalized scale once [`TrafficGraph::normalize`] ran).

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use ndarray::{Array2, ArrayViewMut2};

use super::traffic::TrafficGraph;
use crate::error::{Error, Result};
use crate::ingest::NormStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureKind {
    /// Averaged incident-edge features.
    Avg,
    /// Node degree.
    Deg,
    /// Both node features side by side (`h_avg ‖ deg`), used by the
    /// single-model concatenation baseline.
    Concat,
}

impl FeatureKind {
    /// Node-feature width for edge features of width `d`.
    pub fn node_dim(self, d: usize) -> usize {
        match self {
            FeatureKind::Avg => d,
            FeatureKind::Deg => 1,
            FeatureKind::Concat => d + 1,
        }
    }

    /// Flow-embedding width for edge features of width `d`.
    pub fn embedding_dim(self, d: usize) -> usize {
        2 * self.node_dim(d) + d
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Avg => "avg",
            FeatureKind::Deg => "deg",
            FeatureKind::Concat => "avg-deg",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "avg" => Ok(FeatureKind::Avg),
            "deg" => Ok(FeatureKind::Deg),
            "avg-deg" | "concat" => Ok(FeatureKind::Concat),
            other => Err(Error::InvalidArgument(format!("unknown feature kind `{other}`"))),
        }
    }
}

#[inline]
fn write_node(graph: &TrafficGraph, u: u32, kind: FeatureKind, stats: &NormStats, out: &mut [f64]) {
    match kind {
        FeatureKind::Avg => out.copy_from_slice(graph.h_avg(u)),
        FeatureKind::Deg => out[0] = stats.normalize_degree(graph.h_deg(u)),
        FeatureKind::Concat => {
            let d = graph.feature_dim();
            out[..d].copy_from_slice(graph.h_avg(u));
            out[d] = stats.normalize_degree(graph.h_deg(u));
        }
    }
}

#[inline]
fn write_embedding(
    graph: &TrafficGraph,
    e: usize,
    kind: FeatureKind,
    stats: &NormStats,
    out: &mut [f64],
) {
    let d = graph.feature_dim();
    let nd = kind.node_dim(d);
    let (u, v) = graph.endpoints(e);
    write_node(graph, u, kind, stats, &mut out[..nd]);
    write_node(graph, v, kind, stats, &mut out[nd..2 * nd]);
    out[2 * nd..].copy_from_slice(graph.edge_features(e));
}

fn check_ready(graph: &TrafficGraph, stats: &NormStats) -> Result<()> {
    if !graph.has_node_features() {
        return Err(Error::InvalidArgument("node features have not been computed".into()));
    }
    if stats.dim() != graph.feature_dim() {
        return Err(Error::DimensionMismatch {
            context: "embedding normalizer",
            expected: graph.feature_dim(),
            actual: stats.dim(),
        });
    }
    Ok(())
}

/// Embedding of a single edge.
pub fn flow_embedding(
    graph: &TrafficGraph,
    edge: usize,
    kind: FeatureKind,
    stats: &NormStats,
) -> Result<Vec<f64>> {
    if edge >= graph.edge_count() {
        return Err(Error::InvalidArgument(format!(
            "edge {edge} out of range ({} edges)",
            graph.edge_count()
        )));
    }
    check_ready(graph, stats)?;
    let mut out = vec![0.0; kind.embedding_dim(graph.feature_dim())];
    write_embedding(graph, edge, kind, stats, &mut out);
    Ok(out)
}

/// Writes embeddings of `edges` into the rows of `out` starting at column
/// `col`. The caller guarantees readiness and shapes.
pub(crate) fn fill_embeddings(
    graph: &TrafficGraph,
    edges: Range<usize>,
    kind: FeatureKind,
    stats: &NormStats,
    out: &mut ArrayViewMut2<f64>,
    col: usize,
) {
    let width = kind.embedding_dim(graph.feature_dim());
    for (row, e) in edges.enumerate() {
        let mut r = out.row_mut(row);
        let slice = r.as_slice_mut().expect("row-major output");
        write_embedding(graph, e, kind, stats, &mut slice[col..col + width]);
    }
}

/// `|edges| × dim` embedding matrix for a range of edges.
pub fn embed_range(
    graph: &TrafficGraph,
    edges: Range<usize>,
    kind: FeatureKind,
    stats: &NormStats,
) -> Result<Array2<f64>> {
    check_ready(graph, stats)?;
    if edges.end > graph.edge_count() {
        return Err(Error::InvalidArgument("edge range out of bounds".into()));
    }
    let mut out = Array2::zeros((edges.len(), kind.embedding_dim(graph.feature_dim())));
    fill_embeddings(graph, edges, kind, stats, &mut out.view_mut(), 0);
    Ok(out)
}

/// Embedding matrix over every edge.
pub fn embed_edges(graph: &TrafficGraph, kind: FeatureKind, stats: &NormStats) -> Result<Array2<f64>> {
    embed_range(graph, 0..graph.edge_count(), kind, stats)
}

/// Mean of all edge embeddings of one kind.
pub fn readout(graph: &TrafficGraph, kind: FeatureKind, stats: &NormStats) -> Result<Vec<f64>> {
    check_ready(graph, stats)?;
    let width = kind.embedding_dim(graph.feature_dim());
    let mut sum = vec![0.0; width];
    let mut row = vec![0.0; width];
    for e in 0..graph.edge_count() {
        write_embedding(graph, e, kind, stats, &mut row);
        for (s, v) in sum.iter_mut().zip(&row) {
            *s += v;
        }
    }
    let n = graph.edge_count().max(1) as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    Ok(sum)
}

/// Graph-level summaries for both expert feature kinds.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphReadout {
    pub g_avg: Vec<f64>,
    pub g_deg: Vec<f64>,
}

impl GraphReadout {
    pub fn compute(graph: &TrafficGraph, stats: &NormStats) -> Result<Self> {
        Ok(GraphReadout {
            g_avg: readout(graph, FeatureKind::Avg, stats)?,
            g_deg: readout(graph, FeatureKind::Deg, stats)?,
        })
    }
}
