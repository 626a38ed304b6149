//! End-to-end commands behind the command-line tool. Each takes a parsed
//! [`RunConfig`] and writes its artifacts into an output directory.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::config::{DataSource, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{
    generate_synthetic, run_ablation_grid, synthetic_schema, throughput_bench, write_synthetic, BenchReport,
    GridConfig, GridResult,
};
use crate::gate::{expert_name, moe_predict};
use crate::history::write_epoch_csv;
use crate::ingest::{parse_flow_csv, split_by_time, FlowRecord, SchemaConfig};
use crate::training::{build_window_graphs, prepare_training, run_two_stage, ModelContainer, TrainingReport, TwoStageOptions};

/// File names written by the commands.
pub const MODEL_FILE: &str = "model.fmoe";
pub const GRID_FILE: &str = "grid.csv";
pub const CONFIG_ECHO_FILE: &str = "config.txt";

/// Labeled flows split into training and test parts.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<FlowRecord>,
    pub test: Vec<FlowRecord>,
    pub window_secs: f64,
    pub schema: SchemaConfig,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_csv(path: &Path, schema: &SchemaConfig) -> Result<Vec<FlowRecord>> {
    Ok(parse_flow_csv(path, schema)?.records)
}

/// Loads or generates the configured flows.
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.data.source {
        DataSource::Synthetic => {
            let data = generate_synthetic(&cfg.synth, cfg.seed)?;
            Ok(Dataset {
                train: data.train,
                test: data.test,
                window_secs: cfg.synth.window_secs,
                schema: synthetic_schema(cfg.synth.feature_dim),
            })
        }
        DataSource::Csv { train, test } => {
            let mut schema = cfg.data.schema.clone();
            schema.label_required = true;
            let records = read_csv(train, &schema)?;
            let (train, test) = match test {
                Some(t) => (records, read_csv(t, &schema)?),
                None => split_by_time(&records, cfg.data.split_fraction)?,
            };
            Ok(Dataset {
                train,
                test,
                window_secs: cfg.data.window_secs,
                schema,
            })
        }
    }
}

/// Writes the synthetic benchmark as `train.csv`, `test.csv` and a manifest.
pub fn cmd_synth(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    create_dir(out_dir)?;
    let data = generate_synthetic(&cfg.synth, cfg.seed)?;
    write_synthetic(out_dir, &cfg.synth, cfg.seed, &data)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model_path: PathBuf,
    pub report: TrainingReport,
}

/// Two-stage training. Writes the model container, stage checkpoints, a
/// summary report and the per-epoch history.
pub fn cmd_train(cfg: &RunConfig, out_dir: &Path) -> Result<TrainOutcome> {
    create_dir(out_dir)?;
    write_text(&out_dir.join(CONFIG_ECHO_FILE), &cfg.to_text())?;
    let data = load_dataset(cfg)?;
    let (norm, graphs) = prepare_training(data.train, data.window_secs)?;
    let options = TwoStageOptions {
        checkpoint_dir: Some(out_dir.join("checkpoints")),
        resume_from: None,
    };
    let (mut container, report) = run_two_stage(&graphs, &norm, &cfg.hyper, &options)?;
    container.meta.insert("window_secs".into(), data.window_secs.to_string());
    container.meta.insert("feature_cols".into(), data.schema.feature_cols.join(","));
    let model_path = out_dir.join(MODEL_FILE);
    container.save(&model_path)?;

    let mut w = create_file(&out_dir.join("train_report.txt"))?;
    report.write_summary(&mut w)?;
    w.flush()?;
    let mut w = create_file(&out_dir.join("train_history.csv"))?;
    write_epoch_csv(&report.history, &mut w)?;
    w.flush()?;
    Ok(TrainOutcome { model_path, report })
}

/// Runs the ablation grid and writes `grid.csv` plus one selection
/// distribution per routing variant. With a model, its experts and gate stand
/// in for the full MalMoE variant and its normalizer is used throughout.
pub fn cmd_eval(cfg: &RunConfig, model_path: Option<&Path>, out_dir: &Path) -> Result<GridResult> {
    create_dir(out_dir)?;
    let data = load_dataset(cfg)?;
    let pretrained = model_path.map(ModelContainer::load).transpose()?;
    let (norm, train) = match &pretrained {
        Some(c) => {
            let norm = c.bundle.norm.clone();
            let train = build_window_graphs(data.train, data.window_secs, &norm)?;
            (norm, train)
        }
        None => prepare_training(data.train, data.window_secs)?,
    };
    let test = build_window_graphs(data.test, data.window_secs, &norm)?;
    let grid = GridConfig {
        variants: cfg.eval.variants.clone(),
        scenarios: cfg.eval.scenarios.clone(),
        hyper: cfg.hyper.clone(),
        pretrained,
    };
    let result = run_ablation_grid(&train, &norm, &test, &grid)?;
    let mut w = create_file(&out_dir.join(GRID_FILE))?;
    result.write_csv(&mut w)?;
    w.flush()?;
    for v in grid.variants.iter().filter(|v| v.is_moe()) {
        let mut w = create_file(&out_dir.join(format!("selection_{}.csv", v.slug())))?;
        result.write_selection_csv(*v, &mut w)?;
        w.flush()?;
    }
    Ok(result)
}

/// Scores every flow of `flows_csv` with a trained model and writes
/// `flow_id,predicted_label,chosen_expert,gate_prob_avg,gate_prob_deg` rows in
/// input order. Feature columns left empty in `schema` are taken from the
/// model. Returns the number of rows written.
pub fn cmd_detect(
    model_path: &Path,
    flows_csv: &Path,
    out_csv: &Path,
    schema: &SchemaConfig,
    window_secs: f64,
) -> Result<usize> {
    let container = ModelContainer::load(model_path)?;
    let mut schema = schema.clone();
    if schema.feature_cols.is_empty() {
        // fall back to the columns the model was trained on
        if let Some(cols) = container.meta.get("feature_cols") {
            schema.feature_cols = cols.split(',').filter(|c| !c.is_empty()).map(String::from).collect();
        }
    }
    let d = container.bundle.feature_dim();
    if schema.feature_dim() != d {
        return Err(Error::DimensionMismatch {
            context: "detection schema feature columns",
            expected: d,
            actual: schema.feature_dim(),
        });
    }
    schema.label_required = false;
    let records = parse_flow_csv(flows_csv, &schema)?.records;
    let order: Vec<u64> = records.iter().map(|r| r.flow_id).collect();
    let graphs = build_window_graphs(records, window_secs, &container.bundle.norm)?;

    // flow_id -> (class, chosen, p_avg, p_deg)
    let mut scored = std::collections::HashMap::with_capacity(order.len());
    for g in &graphs {
        let p = moe_predict(&container.bundle, &container.gate, g)?;
        for (e, &id) in g.flow_ids().iter().enumerate() {
            scored.insert(id, (p.class[e], p.chosen[e], p.gate_probs[[e, 0]], p.gate_probs[[e, 1]]));
        }
    }
    if let Some(dir) = out_csv.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let mut out = csv::Writer::from_writer(create_file(out_csv)?);
    out.write_record(["flow_id", "predicted_label", "chosen_expert", "gate_prob_avg", "gate_prob_deg"])?;
    for id in &order {
        let (class, chosen, pa, pd) = scored[id];
        out.write_record([
            id.to_string(),
            class.to_string(),
            expert_name(chosen).to_string(),
            format!("{pa:.6}"),
            format!("{pd:.6}"),
        ])?;
    }
    out.flush()?;
    Ok(order.len())
}

/// Throughput benchmark, written to `bench.txt`.
pub fn cmd_bench(cfg: &RunConfig, model_path: Option<&Path>, out_dir: &Path) -> Result<BenchReport> {
    create_dir(out_dir)?;
    let container = model_path.map(ModelContainer::load).transpose()?;
    if let Some(c) = &container {
        if c.bundle.feature_dim() != cfg.bench.feature_dim {
            return Err(Error::DimensionMismatch {
                context: "bench.feature_dim against the model",
                expected: c.bundle.feature_dim(),
                actual: cfg.bench.feature_dim,
            });
        }
    }
    let report = throughput_bench(&cfg.bench, container.as_ref().map(|c| (&c.bundle, &c.gate)), cfg.seed)?;
    write_text(&out_dir.join("bench.txt"), &report.to_text())?;
    Ok(report)
}
