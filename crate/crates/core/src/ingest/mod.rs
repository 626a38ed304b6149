//! Flow ingestion: CSV parsing, normalization statistics and time windowing.

mod norm;
mod record;
mod window;

pub use norm::{apply_normalization, fit_normalization, NormStats, STD_FLOOR};
pub use record::{
    parse_flow_csv, parse_flows, parse_label, write_flow_csv, write_flows, FlowRecord,
    ParseOutcome, RowError, SchemaConfig, BENIGN, MALICIOUS,
};
pub use window::{split_by_time, window_flows, window_spans};
