//! Flow multigraph: one node per IP, one directed edge per flow.

use std::io::Write;

use super::intern::NodeInterner;
use crate::error::{Error, Result};
use crate::ingest::{FlowRecord, NormStats};

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficGraph {
    nodes: NodeInterner,
    src: Vec<u32>,
    dst: Vec<u32>,
    /// Row-major `|E| × feature_dim`.
    features: Vec<f64>,
    labels: Vec<Option<u8>>,
    flow_ids: Vec<u64>,
    feature_dim: usize,
    /// Row-major `n × feature_dim`; empty until node features are computed.
    h_avg: Vec<f64>,
    /// Raw degree per node; empty until node features are computed.
    h_deg: Vec<f64>,
}

/// Interns endpoints and turns each record into one edge. Node features are
/// left empty; see [`TrafficGraph::compute_node_features`].
pub fn build_graph(records: &[FlowRecord]) -> Result<TrafficGraph> {
    let first = records
        .first()
        .ok_or(Error::EmptyInput("graph construction needs at least one record"))?;
    let d = first.features.len();
    let e = records.len();
    let mut nodes = NodeInterner::with_capacity(e / 2 + 16);
    let mut src = Vec::with_capacity(e);
    let mut dst = Vec::with_capacity(e);
    let mut features = Vec::with_capacity(e * d);
    let mut labels = Vec::with_capacity(e);
    let mut flow_ids = Vec::with_capacity(e);
    for r in records {
        if r.features.len() != d {
            return Err(Error::DimensionMismatch {
                context: "record features",
                expected: d,
                actual: r.features.len(),
            });
        }
        src.push(nodes.intern(&r.src_ip));
        dst.push(nodes.intern(&r.dst_ip));
        features.extend_from_slice(&r.features);
        labels.push(r.label);
        flow_ids.push(r.flow_id);
    }
    Ok(TrafficGraph {
        nodes,
        src,
        dst,
        features,
        labels,
        flow_ids,
        feature_dim: d,
        h_avg: Vec::new(),
        h_deg: Vec::new(),
    })
}

impl TrafficGraph {
    /// Graph with no nodes or edges; returned when augmentation drops every edge.
    pub fn empty(feature_dim: usize) -> Self {
        TrafficGraph {
            nodes: NodeInterner::default(),
            src: Vec::new(),
            dst: Vec::new(),
            features: Vec::new(),
            labels: Vec::new(),
            flow_ids: Vec::new(),
            feature_dim,
            h_avg: Vec::new(),
            h_deg: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.src.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn nodes(&self) -> &NodeInterner {
        &self.nodes
    }

    #[inline]
    pub fn endpoints(&self, e: usize) -> (u32, u32) {
        (self.src[e], self.dst[e])
    }

    pub fn sources(&self) -> &[u32] {
        &self.src
    }

    pub fn destinations(&self) -> &[u32] {
        &self.dst
    }

    #[inline]
    pub fn edge_features(&self, e: usize) -> &[f64] {
        &self.features[e * self.feature_dim..(e + 1) * self.feature_dim]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[Option<u8>] {
        &self.labels
    }

    pub fn flow_ids(&self) -> &[u64] {
        &self.flow_ids
    }

    /// All edge labels, or an error naming how many are missing.
    pub fn require_labels(&self) -> Result<Vec<u8>> {
        let missing = self.labels.iter().filter(|l| l.is_none()).count();
        if missing > 0 {
            return Err(Error::MissingLabels(missing));
        }
        Ok(self.labels.iter().map(|l| l.unwrap()).collect())
    }

    pub fn has_node_features(&self) -> bool {
        self.h_deg.len() == self.node_count() && !self.h_deg.is_empty()
    }

    #[inline]
    pub fn h_avg(&self, u: u32) -> &[f64] {
        let u = u as usize;
        &self.h_avg[u * self.feature_dim..(u + 1) * self.feature_dim]
    }

    #[inline]
    pub fn h_deg(&self, u: u32) -> f64 {
        self.h_deg[u as usize]
    }

    pub fn h_avg_matrix(&self) -> &[f64] {
        &self.h_avg
    }

    pub fn h_deg_vector(&self) -> &[f64] {
        &self.h_deg
    }

    /// Fills the averaged-traffic and degree node features.
    ///
    /// For node `u`, `h_avg[u]` is the mean feature vector over every incident
    /// edge (incoming and outgoing, parallel edges counted separately) and
    /// `h_deg[u]` is that edge count. A self-loop counts once as incoming and
    /// once as outgoing.
    pub fn compute_node_features(&mut self) {
        let n = self.node_count();
        let d = self.feature_dim;
        let mut sum = vec![0.0; n * d];
        let mut deg = vec![0.0; n];
        for e in 0..self.src.len() {
            let f = &self.features[e * d..(e + 1) * d];
            for u in [self.src[e], self.dst[e]] {
                let u = u as usize;
                deg[u] += 1.0;
                for (s, v) in sum[u * d..(u + 1) * d].iter_mut().zip(f) {
                    *s += v;
                }
            }
        }
        for u in 0..n {
            let k = deg[u];
            if k > 0.0 {
                sum[u * d..(u + 1) * d].iter_mut().for_each(|s| *s /= k);
            }
        }
        self.h_avg = sum;
        self.h_deg = deg;
    }

    /// Normalizes edge features with `stats` and recomputes node features on
    /// the normalized edges.
    pub fn normalize(&mut self, stats: &NormStats) -> Result<()> {
        if stats.dim() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                context: "graph normalization",
                expected: stats.dim(),
                actual: self.feature_dim,
            });
        }
        if !self.features.is_empty() {
            stats.normalize_matrix(&mut self.features)?;
        }
        self.compute_node_features();
        Ok(())
    }

    /// Same topology with replaced edge features; node features recomputed.
    pub fn with_edge_features(&self, features: Vec<f64>) -> Result<TrafficGraph> {
        if features.len() != self.features.len() {
            return Err(Error::DimensionMismatch {
                context: "replacement edge features",
                expected: self.features.len(),
                actual: features.len(),
            });
        }
        let mut g = TrafficGraph {
            nodes: self.nodes.clone(),
            src: self.src.clone(),
            dst: self.dst.clone(),
            features,
            labels: self.labels.clone(),
            flow_ids: self.flow_ids.clone(),
            feature_dim: self.feature_dim,
            h_avg: Vec::new(),
            h_deg: Vec::new(),
        };
        g.compute_node_features();
        Ok(g)
    }

    /// Keeps the edges whose `keep` flag is set. Nodes left without edges are
    /// removed; surviving nodes keep their relative order. Node features are
    /// recomputed.
    pub fn retain_edges(&self, keep: &[bool]) -> TrafficGraph {
        assert_eq!(keep.len(), self.edge_count(), "keep mask length");
        let kept = keep.iter().filter(|&&k| k).count();
        if kept == 0 {
            return TrafficGraph::empty(self.feature_dim);
        }
        let d = self.feature_dim;
        let mut used = vec![false; self.node_count()];
        for (e, _) in keep.iter().enumerate().filter(|(_, &k)| k) {
            used[self.src[e] as usize] = true;
            used[self.dst[e] as usize] = true;
        }
        let mut remap = vec![u32::MAX; self.node_count()];
        let mut nodes = NodeInterner::with_capacity(used.iter().filter(|&&u| u).count());
        for (old, _) in used.iter().enumerate().filter(|(_, &u)| u) {
            remap[old] = nodes.intern(self.nodes.ip(old as u32));
        }
        let mut g = TrafficGraph {
            nodes,
            src: Vec::with_capacity(kept),
            dst: Vec::with_capacity(kept),
            features: Vec::with_capacity(kept * d),
            labels: Vec::with_capacity(kept),
            flow_ids: Vec::with_capacity(kept),
            feature_dim: d,
            h_avg: Vec::new(),
            h_deg: Vec::new(),
        };
        for (e, _) in keep.iter().enumerate().filter(|(_, &k)| k) {
            g.src.push(remap[self.src[e] as usize]);
            g.dst.push(remap[self.dst[e] as usize]);
            g.features.extend_from_slice(self.edge_features(e));
            g.labels.push(self.labels[e]);
            g.flow_ids.push(self.flow_ids[e]);
        }
        g.compute_node_features();
        g
    }

    /// Edge list dump, one `u,v,f1,…,fd,label` line per edge (label empty
    /// when unknown).
    pub fn write_edge_list<W: Write>(&self, mut w: W) -> Result<()> {
        for e in 0..self.edge_count() {
            write!(w, "{},{}", self.src[e], self.dst[e])?;
            for v in self.edge_features(e) {
                write!(w, ",{v:?}")?;
            }
            match self.labels[e] {
                Some(l) => writeln!(w, ",{l}")?,
                None => writeln!(w, ",")?,
            }
        }
        Ok(())
    }

    /// Node map dump, one `ip,index` line per node.
    pub fn write_node_map<W: Write>(&self, mut w: W) -> Result<()> {
        for (ip, i) in self.nodes.iter() {
            writeln!(w, "{ip},{i}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(src: &str, dst: &str, f: &[f64]) -> FlowRecord {
        FlowRecord {
            flow_id: 0,
            src_ip: src.into(),
            dst_ip: dst.into(),
            timestamp: 0.0,
            features: f.to_vec(),
            label: Some(0),
        }
    }

    #[test]
    fn first_appearance_interning() {
        let g = build_graph(&[rec("A", "B", &[1.0]), rec("A", "C", &[2.0])]).unwrap();
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.edge_count(), 2);
        assert_eq!(g.nodes().get("A"), Some(0));
        assert_eq!(g.nodes().get("C"), Some(2));
        assert!(!g.has_node_features());
    }

    #[test]
    fn parallel_edges_kept() {
        let g = build_graph(&[rec("A", "B", &[1.0]), rec("A", "B", &[1.0])]).unwrap();
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.edge_count(), 2);
        assert_eq!(g.endpoints(0), g.endpoints(1));
    }

    #[test]
    fn two_edge_mean() {
        // B receives (10,2) from A and sends (20,4) to C
        let mut g = build_graph(&[rec("A", "B", &[10.0, 2.0]), rec("B", "C", &[20.0, 4.0])]).unwrap();
        g.compute_node_features();
        let b = g.nodes().get("B").unwrap();
        assert_eq!(g.h_avg(b), [15.0, 3.0]);
        assert_eq!(g.h_deg(b), 2.0);
        let a = g.nodes().get("A").unwrap();
        assert_eq!(g.h_avg(a), [10.0, 2.0]);
        assert_eq!(g.h_deg(a), 1.0);
    }

    #[test]
    fn isolated_pair() {
        let mut g = build_graph(&[rec("A", "B", &[3.0, -1.0])]).unwrap();
        g.compute_node_features();
        assert_eq!(g.h_avg(0), [3.0, -1.0]);
        assert_eq!(g.h_avg(1), [3.0, -1.0]);
        assert_eq!(g.h_deg_vector(), [1.0, 1.0]);
    }

    #[test]
    fn self_loop_counts_twice() {
        let mut g = build_graph(&[rec("A", "A", &[4.0]), rec("A", "B", &[1.0])]).unwrap();
        g.compute_node_features();
        assert_eq!(g.h_deg(0), 3.0);
        assert_eq!(g.h_avg(0), [3.0]);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(build_graph(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn retain_compacts_nodes() {
        let mut g = build_graph(&[
            rec("A", "B", &[1.0]),
            rec("C", "D", &[2.0]),
            rec("B", "D", &[3.0]),
        ])
        .unwrap();
        g.compute_node_features();
        let sub = g.retain_edges(&[false, true, true]);
        assert_eq!(sub.node_count(), 3);
        assert_eq!(sub.nodes().get("A"), None);
        assert_eq!(sub.nodes().get("B"), Some(0));
        assert_eq!(sub.h_deg_vector(), [1.0, 1.0, 2.0]);
        assert!(g.retain_edges(&[false, false, false]).is_empty());
    }

    #[test]
    fn dumps() {
        let mut r = rec("10.0.0.1", "10.0.0.2", &[1.5, 2.0]);
        r.label = Some(1);
        let mut u = rec("10.0.0.2", "10.0.0.1", &[0.0, 1.0]);
        u.label = None;
        let g = build_graph(&[r, u]).unwrap();
        let mut edges = Vec::new();
        g.write_edge_list(&mut edges).unwrap();
        assert_eq!(String::from_utf8(edges).unwrap(), "0,1,1.5,2.0,1\n1,0,0.0,1.0,\n");
        let mut map = Vec::new();
        g.write_node_map(&mut map).unwrap();
        assert_eq!(String::from_utf8(map).unwrap(), "10.0.0.1,0\n10.0.0.2,1\n");
    }
}
