//! NetFlow-style CSV records.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const BENIGN: u8 = 0;
pub const MALICIOUS: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowRecord {
    /// Data-row index in the source file (header excluded), starting at 0.
    pub flow_id: u64,
    pub src_ip: String,
    pub dst_ip: String,
    /// Seconds.
    pub timestamp: f64,
    pub features: Vec<f64>,
    pub label: Option<u8>,
}

/// Column mapping for a CSV flow file.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaConfig {
    pub src_col: String,
    pub dst_col: String,
    /// Absent: every record gets timestamp 0.
    pub ts_col: Option<String>,
    /// Multiplier applied to the timestamp column (e.g. 0.001 for milliseconds).
    pub ts_scale: f64,
    pub label_col: Option<String>,
    /// When false, a missing label column yields unlabeled records.
    pub label_required: bool,
    pub feature_cols: Vec<String>,
    pub delimiter: u8,
    /// Fraction of data rows allowed to be rejected before parsing fails.
    pub max_bad_fraction: f64,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        SchemaConfig {
            src_col: "src_ip".into(),
            dst_col: "dst_ip".into(),
            ts_col: Some("timestamp".into()),
            ts_scale: 1.0,
            label_col: Some("label".into()),
            label_required: false,
            feature_cols: Vec::new(),
            delimiter: b',',
            max_bad_fraction: 0.01,
        }
    }
}

impl SchemaConfig {
    /// Layout used by the public NetFlow v3 datasets.
    pub fn netflow_v3() -> Self {
        SchemaConfig {
            src_col: "IPV4_SRC_ADDR".into(),
            dst_col: "IPV4_DST_ADDR".into(),
            ts_col: Some("FLOW_START_MILLISECONDS".into()),
            ts_scale: 1e-3,
            label_col: Some("Label".into()),
            label_required: true,
            feature_cols: ["IN_BYTES", "OUT_BYTES", "IN_PKTS", "OUT_PKTS", "FLOW_DURATION_MILLISECONDS"]
                .into_iter()
                .map(String::from)
                .collect(),
            delimiter: b',',
            max_bad_fraction: 0.01,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_cols.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    pub row: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParseOutcome {
    pub records: Vec<FlowRecord>,
    pub errors: Vec<RowError>,
}

impl ParseOutcome {
    /// Writes the rejected rows as `row,reason` CSV.
    pub fn write_error_report<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["row", "reason"])?;
        for e in &self.errors {
            out.write_record([e.row.to_string(), e.reason.clone()])?;
        }
        out.flush()?;
        Ok(())
    }
}

struct ColumnIndex {
    src: usize,
    dst: usize,
    ts: Option<usize>,
    label: Option<usize>,
    features: Vec<usize>,
}

fn resolve_columns(headers: &csv::StringRecord, schema: &SchemaConfig) -> Result<ColumnIndex> {
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let require = |name: &str| {
        find(name).ok_or_else(|| Error::Schema(format!("missing required column `{name}`")))
    };
    if schema.feature_cols.is_empty() {
        return Err(Error::Schema("no feature columns configured".into()));
    }
    let label = match &schema.label_col {
        Some(name) => match find(name) {
            Some(i) => Some(i),
            None if schema.label_required => {
                return Err(Error::Schema(format!("missing required column `{name}`")))
            }
            None => None,
        },
        None => None,
    };
    Ok(ColumnIndex {
        src: require(&schema.src_col)?,
        dst: require(&schema.dst_col)?,
        ts: schema.ts_col.as_deref().map(require).transpose()?,
        label,
        features: schema
            .feature_cols
            .iter()
            .map(|c| require(c))
            .collect::<Result<_>>()?,
    })
}

pub fn parse_label(raw: &str) -> Option<u8> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "0" | "benign" | "false" | "normal" => Some(BENIGN),
        "1" | "malicious" | "true" | "attack" => Some(MALICIOUS),
        _ => None,
    }
}

fn parse_row(
    row: &csv::StringRecord,
    cols: &ColumnIndex,
    schema: &SchemaConfig,
    flow_id: u64,
) -> std::result::Result<FlowRecord, String> {
    let field = |i: usize| row.get(i).map(str::trim).unwrap_or("");
    let src_ip = field(cols.src);
    let dst_ip = field(cols.dst);
    if src_ip.is_empty() {
        return Err(format!("empty {}", schema.src_col));
    }
    if dst_ip.is_empty() {
        return Err(format!("empty {}", schema.dst_col));
    }
    let timestamp = match cols.ts {
        Some(i) => {
            let v: f64 = field(i)
                .parse()
                .map_err(|_| format!("unparseable timestamp `{}`", field(i)))?;
            let v = v * schema.ts_scale;
            if !v.is_finite() {
                return Err("non-finite timestamp".into());
            }
            v
        }
        None => 0.0,
    };
    let mut features = Vec::with_capacity(cols.features.len());
    for (&i, name) in cols.features.iter().zip(&schema.feature_cols) {
        let raw = field(i);
        let v: f64 = raw
            .parse()
            .map_err(|_| format!("unparseable {name} `{raw}`"))?;
        if !v.is_finite() {
            return Err(format!("non-finite {name} `{raw}`"));
        }
        features.push(v);
    }
    let label = match cols.label {
        Some(i) => Some(parse_label(field(i)).ok_or_else(|| format!("bad label `{}`", field(i)))?),
        None => None,
    };
    Ok(FlowRecord {
        flow_id,
        src_ip: src_ip.to_owned(),
        dst_ip: dst_ip.to_owned(),
        timestamp,
        features,
        label,
    })
}

/// Parses CSV flows from any reader. Rows that fail to parse are collected in
/// [`ParseOutcome::errors`]; parsing only fails outright on schema problems or
/// when the rejected fraction exceeds `schema.max_bad_fraction`.
pub fn parse_flows<R: Read>(reader: R, schema: &SchemaConfig) -> Result<ParseOutcome> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let cols = resolve_columns(&headers, schema)?;
    let mut out = ParseOutcome::default();
    let mut row = csv::StringRecord::new();
    let mut index = 0u64;
    loop {
        match rdr.read_record(&mut row) {
            Ok(false) => break,
            Ok(true) => {
                if row.len() != headers.len() {
                    out.errors.push(RowError {
                        row: index,
                        reason: format!("expected {} fields, found {}", headers.len(), row.len()),
                    });
                } else {
                    match parse_row(&row, &cols, schema, index) {
                        Ok(r) => out.records.push(r),
                        Err(reason) => out.errors.push(RowError { row: index, reason }),
                    }
                }
            }
            Err(e) if matches!(e.kind(), csv::ErrorKind::Utf8 { .. }) => {
                out.errors.push(RowError {
                    row: index,
                    reason: "invalid utf-8".into(),
                });
            }
            Err(e) => return Err(e.into()),
        }
        index += 1;
    }
    let total = index as usize;
    if !out.errors.is_empty() && out.errors.len() as f64 > schema.max_bad_fraction * total as f64 {
        let first = &out.errors[0];
        return Err(Error::TooManyBadRows {
            bad: out.errors.len(),
            total,
            limit: schema.max_bad_fraction * 100.0,
            first_row: first.row,
            first_reason: first.reason.clone(),
        });
    }
    Ok(out)
}

pub fn parse_flow_csv(path: impl AsRef<Path>, schema: &SchemaConfig) -> Result<ParseOutcome> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_flows(std::io::BufReader::new(file), schema)
}

/// Writes records with the schema's column names. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_flows<W: Write>(records: &[FlowRecord], schema: &SchemaConfig, w: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new()
        .delimiter(schema.delimiter)
        .from_writer(w);
    let mut header = vec![schema.src_col.clone(), schema.dst_col.clone()];
    if let Some(ts) = &schema.ts_col {
        header.push(ts.clone());
    }
    header.extend(schema.feature_cols.iter().cloned());
    if let Some(l) = &schema.label_col {
        header.push(l.clone());
    }
    out.write_record(&header)?;
    let mut fields: Vec<String> = Vec::with_capacity(header.len());
    for r in records {
        if r.features.len() != schema.feature_dim() {
            return Err(Error::DimensionMismatch {
                context: "record features",
                expected: schema.feature_dim(),
                actual: r.features.len(),
            });
        }
        fields.clear();
        fields.push(r.src_ip.clone());
        fields.push(r.dst_ip.clone());
        if schema.ts_col.is_some() {
            fields.push(format!("{:?}", r.timestamp / schema.ts_scale));
        }
        fields.extend(r.features.iter().map(|v| format!("{v:?}")));
        if schema.label_col.is_some() {
            fields.push(r.label.map(|l| l.to_string()).unwrap_or_default());
        }
        out.write_record(&fields)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_flow_csv(
    records: &[FlowRecord],
    schema: &SchemaConfig,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_flows(records, schema, std::io::BufWriter::new(file))
}
