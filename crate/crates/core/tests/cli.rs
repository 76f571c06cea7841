use std::path::Path;
use std::process::{Command, Output};

fn phonecls(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phonecls"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn synth_ingest_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = phonecls(&["synth", "--out", "corpus", "--seed", "3"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.join("corpus/experiment.toml").is_file());
    assert_eq!(code(&phonecls(&["synth", "--out", "corpus"], d)), 2);

    let o = phonecls(&["ingest", "--config", "corpus/experiment.toml", "--out", "runs"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.join("runs/synth-cnn/frames/synth-train.jsonl").is_file());
    let state = std::fs::read_to_string(d.join("runs/synth-cnn/state.json")).unwrap();
    assert!(state.contains("\"partial\""));

    let again = phonecls(&["ingest", "--config", "corpus/experiment.toml", "--out", "runs"], d);
    assert_eq!(code(&again), 2);
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    let forced = phonecls(&["ingest", "--config", "corpus/experiment.toml", "--out", "runs", "--force"], d);
    assert_eq!(code(&forced), 0);

    assert_eq!(code(&phonecls(&["run", "--config", "missing.toml"], d)), 2);
    std::fs::write(d.join("bad.toml"), "run_id = \"x\"\n").unwrap();
    assert_eq!(code(&phonecls(&["balance", "--config", "bad.toml"], d)), 2);

    // alignment referencing a phone outside the inventory
    let align = d.join("corpus/corpora/synth-control/align/synth-control-spk00-u00.csv");
    let text = std::fs::read_to_string(&align).unwrap();
    std::fs::write(&align, text.replacen(",sil\n", ",XX\n", 1)).unwrap();
    let o = phonecls(&["ingest", "--config", "corpus/experiment.toml", "--out", "runs", "--force"], d);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn grid_writes_one_config_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&phonecls(&["synth", "--out", "corpus"], d)), 0);
    std::fs::write(
        d.join("factors.toml"),
        "[factors]\n\"training.epochs\" = [1, 2]\n\"seeds.init\" = [0, 1]\n",
    )
    .unwrap();
    let o = phonecls(
        &["grid", "--config", "corpus/experiment.toml", "--factors", "factors.toml", "--out", "runs"],
        d,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let grid = d.join("runs/synth-cnn-grid");
    for i in 0..4 {
        let p = grid.join(format!("synth-cnn-g{i:03}.json"));
        let cfg = phonecls::experiments::ExperimentConfig::load(&p).unwrap();
        cfg.validate(&Default::default()).unwrap();
    }
    let index: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(grid.join("grid.json")).unwrap()).unwrap();
    assert_eq!(index["synth-cnn-g003"]["training.epochs"], 2);
    assert_eq!(index["synth-cnn-g003"]["seeds.init"], 1);
}

#[test]
fn report_requires_config_or_reports() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&phonecls(&["report"], dir.path())), 2);
    assert_eq!(code(&phonecls(&["report", "--tabulate", "nope.json"], dir.path())), 4);
}
