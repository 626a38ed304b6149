//! Flow-graph construction, node features and readouts.

mod embed;
mod intern;
mod traffic;

pub use embed::{
    embed_edges, embed_range, flow_embedding, readout, FeatureKind, GraphReadout,
};
pub(crate) use embed::fill_embeddings;
pub use intern::NodeInterner;
pub use traffic::{build_graph, TrafficGraph};

/// Node features as a free function, for pipelines that prefer it.
pub fn compute_node_features(mut graph: TrafficGraph) -> TrafficGraph {
    graph.compute_node_features();
    graph
}
