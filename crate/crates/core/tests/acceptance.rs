//! Acceptance checks for the detector. Prints one PASS/FAIL line per
//! criterion and exits nonzero if any fails.
//!
//! The benchmark criteria (4 to 8) train the ablation grid on the built-in
//! synthetic benchmark described by `configs/benchmark.conf`.

mod common;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use flowmoe::augment::{augment, AugmentParams, DropMode};
use flowmoe::config::RunConfig;
use flowmoe::eval::{run_ablation_grid, throughput_bench, GridConfig, GridResult, ScenarioKind, Variant};
use flowmoe::graph::build_graph;
use flowmoe::nn::Activation;
use flowmoe::pipeline::{cmd_eval, cmd_train, load_dataset, GRID_FILE};
use flowmoe::training::{build_window_graphs, prepare_training};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn benchmark_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::load(repo_root().join("configs/benchmark.conf")).expect("benchmark config");
    cfg.set_seed(seed);
    cfg
}

fn run_grid(cfg: &RunConfig, variants: &[Variant]) -> GridResult {
    let data = load_dataset(cfg).unwrap();
    let (norm, train) = prepare_training(data.train, data.window_secs).unwrap();
    let test = build_window_graphs(data.test, data.window_secs, &norm).unwrap();
    let grid = GridConfig {
        variants: variants.to_vec(),
        scenarios: cfg.eval.scenarios.clone(),
        hyper: cfg.hyper.clone(),
        pretrained: None,
    };
    run_ablation_grid(&train, &norm, &test, &grid).unwrap()
}

fn acc(g: &GridResult, v: Variant, s: Option<ScenarioKind>) -> f64 {
    g.get(v, s).expect("grid cell").metrics.acc
}

fn gate_acc(g: &GridResult, v: Variant) -> f64 {
    g.overall(v).and_then(|r| r.metrics.acc_gate).expect("routing variant")
}

fn c1_gradients() -> Outcome {
    let t = Instant::now();
    let (worst, count) = common::finite_difference_check(&[16, 32, 2], Activation::Tanh, 1);
    let (worst_relu, _) = common::finite_difference_check(&[16, 32, 2], Activation::Relu, 2);
    let secs = t.elapsed().as_secs_f64();
    let worst = worst.max(worst_relu);
    outcome(
        worst < 1e-4 && count >= 500 && secs < 5.0,
        format!("max rel err {worst:.2e} over {count} params, {secs:.2}s"),
    )
}

/// Oracle ≥ both experts on every scored set of every grid run.
fn c2_oracle(grids: &[&GridResult]) -> Outcome {
    let mut sets = 0;
    let mut worst = f64::INFINITY;
    for g in grids {
        for r in g.rows.iter().filter(|r| r.scenario.is_some()) {
            if let Some(e) = r.experts {
                sets += 1;
                worst = worst.min(e.oracle - e.avg.max(e.deg));
            }
        }
    }
    outcome(sets > 0 && worst >= 0.0, format!("{sets} labeled sets, min margin {worst:.4}"))
}

fn c3_augmentation() -> Outcome {
    let mut checked = 0;
    for seed in 0..40u64 {
        let recs = common::random_records(50 + 11 * seed as usize, 5 + seed as usize, 3, seed);
        let mut g = build_graph(&recs).unwrap();
        g.compute_node_features();
        if augment(&g, &AugmentParams::identity().with_seed(seed)) != g {
            return outcome(false, format!("identity changed graph (seed {seed})"));
        }
        for (mode, params) in [
            (DropMode::Literal, AugmentParams::new(0.2, 0.5, 0.5).unwrap()),
            (DropMode::Inverted, AugmentParams::new(0.0, 1.0, 1.0).unwrap()),
            (DropMode::Literal, AugmentParams::new(1.0, 2.0, 1.0).unwrap()),
            (DropMode::Literal, AugmentParams::new(0.0, 0.0, 0.1).unwrap()),
        ] {
            let out = augment(&g, &params.with_seed(seed).with_drop_mode(mode));
            if out.is_empty() {
                continue;
            }
            let brute = common::brute_node_features(&out);
            for (ip, u) in out.nodes().iter() {
                if out.h_deg(u) != brute.deg[ip] {
                    return outcome(false, format!("degree mismatch at {ip}"));
                }
                if out.h_avg(u).iter().zip(&brute.avg[ip]).any(|(a, b)| (a - b).abs() > 1e-9) {
                    return outcome(false, format!("h_avg mismatch at {ip}"));
                }
            }
            checked += 1;
        }
    }
    outcome(true, format!("identity bit-exact; {checked} augmented graphs consistent"))
}

fn c4_insight(g: &GridResult) -> Outcome {
    let drop = |v, s| acc(g, v, Some(ScenarioKind::None)) - acc(g, v, Some(s));
    let a1 = drop(Variant::Avg, ScenarioKind::Drift1);
    let a2 = drop(Variant::Avg, ScenarioKind::Drift2);
    let d2 = drop(Variant::Deg, ScenarioKind::Drift2);
    let d1 = drop(Variant::Deg, ScenarioKind::Drift1);
    let pass = a1 >= 0.10 && a2 < a1 / 2.0 && d2 >= 0.10 && d1 < d2 / 2.0;
    outcome(
        pass,
        format!(
            "AVG drop D1 {:.1} / D2 {:.1} pts; DEG drop D2 {:.1} / D1 {:.1} pts",
            a1 * 100.0,
            a2 * 100.0,
            d2 * 100.0,
            d1 * 100.0
        ),
    )
}

fn c5_moe_gain(g: &GridResult) -> Outcome {
    let o = |v| acc(g, v, None);
    let moe = o(Variant::MalMoe);
    let aug_best = o(Variant::AvgAug).max(o(Variant::DegAug));
    let plain_best = o(Variant::Avg).max(o(Variant::Deg));
    let pass = moe >= aug_best - 0.01 && moe - plain_best >= 0.05;
    outcome(
        pass,
        format!(
            "MalMoE {moe:.4}; AVG-AUG {:.4}, DEG-AUG {:.4}; AVG {:.4}, DEG {:.4} (gain {:.1} pts)",
            o(Variant::AvgAug),
            o(Variant::DegAug),
            o(Variant::Avg),
            o(Variant::Deg),
            (moe - plain_best) * 100.0
        ),
    )
}

fn c6_explainability(g: &GridResult) -> Outcome {
    let share = |s| g.get(Variant::MalMoe, Some(s)).and_then(|r| r.avg_share).unwrap_or(f64::NAN);
    let deg_d1 = 1.0 - share(ScenarioKind::Drift1);
    let avg_d2 = share(ScenarioKind::Drift2);
    outcome(
        deg_d1 > 0.6 && avg_d2 > 0.6,
        format!("Drift 1 -> Deg-Expert {:.1}%; Drift 2 -> Avg-Expert {:.1}%", deg_d1 * 100.0, avg_d2 * 100.0),
    )
}

fn c7_hard_vs_weighted(g: &GridResult) -> Outcome {
    let hard = gate_acc(g, Variant::MalMoe);
    let weighted = gate_acc(g, Variant::NoHardSelection);
    outcome(
        hard - weighted >= 0.2,
        format!("ACC_gate hard {hard:.4} vs weighted {weighted:.4} (gap {:.4})", hard - weighted),
    )
}

fn c8_graph_input(grids: &[&GridResult]) -> Outcome {
    let gaps: Vec<f64> = grids
        .iter()
        .map(|g| gate_acc(g, Variant::MalMoe) - gate_acc(g, Variant::NoGraphInput))
        .collect();
    let wins = gaps.iter().filter(|&&d| d > 0.0).count();
    outcome(
        wins * 2 > gaps.len(),
        format!(
            "ACC_gate decrease without readout per seed: {}",
            gaps.iter().map(|d| format!("{d:+.4}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn c9_throughput() -> Outcome {
    let cfg = RunConfig::default().bench;
    let r = throughput_bench(&cfg, None, 1).unwrap();
    let e2e = r.end_to_end().flows_per_sec;
    let ratio = r.scaling.map(|p| p.ratio()).unwrap_or(f64::NAN);
    outcome(
        e2e >= 100_000.0 && ratio <= 2.5,
        format!(
            "{} flows: construction {:.0}/s, inference {:.0}/s, end-to-end {e2e:.0}/s; 2x flows -> {ratio:.2}x construction time; {:.0} B/flow peak",
            r.flows,
            r.construction.flows_per_sec,
            r.inference.flows_per_sec,
            r.bytes_per_flow().unwrap_or(f64::NAN)
        ),
    )
}

fn c10_determinism() -> Outcome {
    let mut cfg = RunConfig::load(repo_root().join("configs/determinism.conf")).expect("determinism config");
    cfg.set_seed(5);
    let dir = tempfile::tempdir().unwrap();
    let mut grids = Vec::new();
    for k in 0..2 {
        let d = dir.path().join(format!("run{k}"));
        let trained = cmd_train(&cfg, &d).unwrap();
        cmd_eval(&cfg, Some(&trained.model_path), &d).unwrap();
        grids.push(std::fs::read(d.join(GRID_FILE)).unwrap());
    }
    let rows = String::from_utf8_lossy(&grids[0]).lines().count() - 1;
    outcome(grids[0] == grids[1], format!("{rows} grid rows compared byte for byte"))
}

fn main() -> ExitCode {
    let mut results: Vec<(u8, &str, Outcome)> = Vec::new();
    let mut report = |n: u8, name: &'static str, o: Outcome| {
        println!("{} C{n} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    report(1, "gradient correctness", c1_gradients());
    report(3, "augmentation identity", c3_augmentation());

    let t = Instant::now();
    let main_grid = run_grid(&benchmark_config(1), &Variant::ALL);
    let grid_secs = t.elapsed().as_secs_f64();
    for r in &main_grid.rows {
        println!(
            "    {:<18} {:<8} acc={:.4} f1={:.4} acc_gate={}",
            r.variant.name(),
            r.scenario_name(),
            r.metrics.acc,
            r.metrics.f1,
            r.metrics.acc_gate.map(|g| format!("{g:.4}")).unwrap_or_else(|| "-".into())
        );
    }
    let mut c4 = c4_insight(&main_grid);
    c4.pass &= grid_secs < 600.0;
    c4.detail.push_str(&format!("; full grid {grid_secs:.0}s"));
    report(4, "insight reproduction", c4);
    report(5, "MoE gain", c5_moe_gain(&main_grid));
    report(6, "gate explainability", c6_explainability(&main_grid));
    report(7, "hard vs weighted selection", c7_hard_vs_weighted(&main_grid));

    let extra: Vec<GridResult> = [2u64, 3]
        .iter()
        .map(|&s| run_grid(&benchmark_config(s), &[Variant::MalMoe, Variant::NoGraphInput]))
        .collect();
    let mut all: Vec<&GridResult> = vec![&main_grid];
    all.extend(extra.iter());
    report(8, "graph-input ablation", c8_graph_input(&all));
    report(2, "oracle dominance", c2_oracle(&all));
    report(9, "throughput", c9_throughput());
    report(10, "determinism", c10_determinism());

    let failed: Vec<String> = results.iter().filter(|r| !r.2.pass).map(|r| format!("C{}", r.0)).collect();
    println!("acceptance: {}/{} passed", results.len() - failed.len(), results.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
