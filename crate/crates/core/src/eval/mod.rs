//! Metrics, the oracle selector, the synthetic benchmark, drift scenarios and
//! the ablation grid.

mod bench;
mod grid;
mod metrics;
mod scenario;
mod synth;

pub use bench::{peak_rss_bytes, throughput_bench, BenchReport, ScalingProbe, StageTiming};
pub use grid::{run_ablation_grid, ExpertAccuracy, GridConfig, GridResult, GridRow, Variant};
pub use metrics::{compute_metrics, oracle_select, GateCheck, MetricsAccumulator, MetricsReport, OracleSelection};
pub use scenario::{apply_scenario, DriftScenario, ScenarioConfig, ScenarioKind};
pub use synth::{
    generate_latent_flows, generate_synthetic, synth_manifest, synthetic_feature_names,
    synthetic_schema, to_raw_units, write_synthetic, SynthConfig, SyntheticDataset,
};
