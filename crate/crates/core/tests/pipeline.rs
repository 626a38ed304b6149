use std::fs;
use std::path::Path;

use flowmoe::config::RunConfig;
use flowmoe::pipeline::{cmd_bench, cmd_detect, cmd_eval, cmd_synth, cmd_train, GRID_FILE};
use flowmoe::training::ModelContainer;
use flowmoe::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> RunConfig {
    RunConfig::load(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tiny.conf")).unwrap()
}

#[test]
fn synth_is_reproducible_and_echoes_params() {
    let cfg = tiny();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    cmd_synth(&cfg, a.path()).unwrap();
    cmd_synth(&cfg, b.path()).unwrap();
    for f in ["train.csv", "test.csv", "manifest.txt"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let manifest = fs::read_to_string(a.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains("seed=3"));
    assert!(manifest.contains("synth.flows=3000"));
}

#[test]
fn config_mutations_name_the_bad_key() {
    let text = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tiny.conf")).unwrap();
    let keys: Vec<String> = RunConfig::parse(&text)
        .unwrap()
        .to_text()
        .lines()
        .filter_map(|l| l.split_once(" = ").map(|(k, _)| k.to_string()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..200 {
        let key = &keys[rng.random_range(0..keys.len())];
        // misspelled key, placed before any section header
        let typo = format!("{key}x");
        match RunConfig::parse(&format!("{typo} = 1\n{text}")) {
            Err(Error::Config { key: k, .. }) => assert_eq!(k, typo),
            other => panic!("{typo}: {other:?}"),
        }
        // unparsable value, for keys that take numbers or enumerations
        let bad = format!("{key} = ~~\n{text}");
        if let Err(e) = RunConfig::parse(&bad) {
            match e {
                Error::Config { key: k, .. } => assert!(k == *key || k.starts_with(key.split('.').next().unwrap()), "{key} vs {k}"),
                other => panic!("{key}: {other:?}"),
            }
        }
    }
}

#[test]
fn train_eval_detect_round_trip() {
    let cfg = tiny();
    let dir = tempfile::tempdir().unwrap();
    let out = cmd_train(&cfg, &dir.path().join("train")).unwrap();
    let bytes = fs::read(&out.model_path).unwrap();
    let loaded = ModelContainer::load(&out.model_path).unwrap();
    assert_eq!(loaded.to_bytes().unwrap(), bytes);
    assert!(dir.path().join("train/checkpoints/stage1.fmoe").exists());
    assert!(dir.path().join("train/train_history.csv").exists());

    let grid = cmd_eval(&cfg, Some(&out.model_path), &dir.path().join("eval")).unwrap();
    assert_eq!(grid.rows.len(), cfg.eval.variants.len() * 5);
    let csv = fs::read_to_string(dir.path().join("eval").join(GRID_FILE)).unwrap();
    assert!(csv.starts_with("variant,scenario,acc,f1,acc_gate,n_masked\n"));
    assert!(dir.path().join("eval/selection_malmoe.csv").exists());

    // three flows, deliberately out of time order
    let flows = dir.path().join("three.csv");
    fs::write(
        &flows,
        "src_ip,dst_ip,timestamp,in_bytes,out_bytes,in_pkts,out_pkts\n\
         10.0.0.1,172.16.0.1,40.0,1200,1800,40,50\n\
         10.0.0.2,172.16.0.1,1.0,1300,1500,38,52\n\
         10.0.0.1,172.16.0.2,2.0,900,2100,44,47\n",
    )
    .unwrap();
    let mut schema = cfg.data.schema.clone();
    schema.feature_cols = ["in_bytes", "out_bytes", "in_pkts", "out_pkts"].map(String::from).to_vec();
    let pred = dir.path().join("pred.csv");
    assert_eq!(cmd_detect(&out.model_path, &flows, &pred, &schema, 30.0).unwrap(), 3);
    let text = fs::read_to_string(&pred).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "flow_id,predicted_label,chosen_expert,gate_prob_avg,gate_prob_deg");
    let ids: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ids, ["0", "1", "2"]);

    // without configured feature columns the model's own are used
    let pred2 = dir.path().join("pred2.csv");
    cmd_detect(&out.model_path, &flows, &pred2, &cfg.data.schema, 30.0).unwrap();
    assert_eq!(fs::read_to_string(&pred2).unwrap(), text);
}

#[test]
fn detect_rejects_wrong_width_and_bad_container() {
    let cfg = tiny();
    let dir = tempfile::tempdir().unwrap();
    let bogus = dir.path().join("bogus.fmoe");
    fs::write(&bogus, b"FMOE\x09\x00\x00\x00").unwrap();
    let flows = dir.path().join("f.csv");
    fs::write(&flows, "src_ip,dst_ip,timestamp,a\n1,2,0,0\n").unwrap();
    let err = cmd_detect(&bogus, &flows, &dir.path().join("o.csv"), &cfg.data.schema, 30.0).unwrap_err();
    assert_eq!(err.kind(), "format");
    let missing = cmd_detect(&dir.path().join("nope.fmoe"), &flows, &dir.path().join("o.csv"), &cfg.data.schema, 30.0);
    assert_eq!(missing.unwrap_err().kind(), "io");
}

#[test]
fn bench_reports_both_stages() {
    let cfg = tiny();
    let dir = tempfile::tempdir().unwrap();
    let r = cmd_bench(&cfg, None, dir.path()).unwrap();
    assert_eq!(r.flows, 4000);
    assert!(r.construction.flows_per_sec > 0.0 && r.inference.flows_per_sec > 0.0);
    let text = fs::read_to_string(dir.path().join("bench.txt")).unwrap();
    assert!(text.contains("construction_flows_per_sec=") && text.contains("inference_flows_per_sec="));
}

#[test]
fn shipped_configs_load() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let bench = RunConfig::load(root.join("benchmark.conf")).unwrap();
    assert_eq!(bench, RunConfig::default());
    let small = RunConfig::load(root.join("determinism.conf")).unwrap();
    assert_eq!(small.seed, 5);
}
