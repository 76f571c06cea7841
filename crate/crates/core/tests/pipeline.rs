use std::path::Path;

use phonecls::experiments::{read_state, run_stages, ExperimentConfig, RunOptions, RunStatus, Stage};
use phonecls::models::BackendRegistry;
use phonecls::synth::{generate, SynthConfig};
use phonecls::Error;

fn small_corpus(root: &Path) -> ExperimentConfig {
    let mut synth = SynthConfig::default();
    for (i, spec) in synth.corpora.iter_mut().enumerate() {
        spec.n_speakers = if i == 0 { 4 } else { 3 };
        spec.utterances_per_speaker = if i == 0 { 3 } else { 1 };
    }
    let summary = generate(root, &synth).unwrap();
    let mut cfg = ExperimentConfig::load(&summary.config_path).unwrap();
    cfg.training.epochs = 1;
    cfg.balancing.target_count = Some(20);
    cfg.bootstrap.n_resamples = 100;
    cfg
}

fn opts(out: &Path, until: Stage) -> RunOptions {
    RunOptions {
        out_dir: out.to_path_buf(),
        force: false,
        until,
    }
}

#[test]
fn staged_run_resumes_refuses_and_forces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_corpus(&dir.path().join("corpus"));
    let out = dir.path().join("runs");
    let reg = BackendRegistry::default();

    let first = run_stages(&cfg, &opts(&out, Stage::Balance), &reg).unwrap();
    assert_eq!(first.executed, [Stage::Ingest, Stage::Balance]);
    assert!(first.report.is_none());
    let state = read_state(&first.run_dir).unwrap().unwrap();
    assert_eq!(state.status, RunStatus::Partial);
    assert!(!first.run_dir.join(".lock").exists());

    let rest = run_stages(&cfg, &opts(&out, Stage::Report), &reg).unwrap();
    assert_eq!(rest.executed[0], Stage::Features);
    assert_eq!(rest.executed.len(), 5);
    let report = rest.report.unwrap();
    report.validate().unwrap();
    assert_eq!(report.test_results.len(), 2);
    let patient = &report.test_results["synth-patient"];
    assert_eq!(patient.correlations.len(), 2);
    let names: Vec<&str> = patient.group_matrices.iter().map(|g| g.name.as_str()).collect();
    assert_eq!(names, ["obstruents", "oral_nasal"]);

    let again = run_stages(&cfg, &opts(&out, Stage::Report), &reg).unwrap_err();
    assert!(matches!(again, Error::RunExists { .. }));
    assert_eq!(again.exit_code(), 2);

    let changed = cfg.clone().with_seed(9);
    assert!(matches!(
        run_stages(&changed, &opts(&out, Stage::Ingest), &reg),
        Err(Error::RunExists { .. })
    ));

    let forced = run_stages(
        &cfg,
        &RunOptions {
            force: true,
            ..opts(&out, Stage::Report)
        },
        &reg,
    )
    .unwrap();
    assert_eq!(forced.executed.len(), Stage::ALL.len());
    assert_eq!(forced.report.unwrap().to_json(), report.to_json());

    let elsewhere = run_stages(&cfg, &opts(&dir.path().join("other"), Stage::Report), &reg).unwrap();
    assert_eq!(
        std::fs::read(elsewhere.run_dir.join("report.json")).unwrap(),
        std::fs::read(rest.run_dir.join("report.json")).unwrap()
    );
}

#[test]
fn failures_leave_a_marker_and_resume_from_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_corpus(&dir.path().join("corpus"));
    let out = dir.path().join("runs");
    let reg = BackendRegistry::default();

    let done = run_stages(&cfg, &opts(&out, Stage::Balance), &reg).unwrap();
    let split = done.run_dir.join("splits/train.jsonl");
    let good = std::fs::read(&split).unwrap();
    std::fs::write(&split, b"{not json\n").unwrap();
    let err = run_stages(&cfg, &opts(&out, Stage::Features), &reg).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
    let state = read_state(&done.run_dir).unwrap().unwrap();
    assert_eq!(state.status, RunStatus::Failed);
    assert_eq!(state.failure.unwrap().stage, Stage::Features);
    assert_eq!(state.completed, [Stage::Ingest, Stage::Balance]);

    std::fs::write(&split, good).unwrap();
    let resumed = run_stages(&cfg, &opts(&out, Stage::Features), &reg).unwrap();
    assert_eq!(resumed.executed, [Stage::Features]);
}

#[test]
fn lock_and_config_errors_stop_before_compute() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_corpus(&dir.path().join("corpus"));
    let out = dir.path().join("runs");
    let reg = BackendRegistry::default();

    let mut missing = cfg.clone();
    missing.test_corpora.push("absent".into());
    let err = run_stages(&missing, &opts(&out, Stage::Report), &reg).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(!out.exists(), "config errors must precede any output");

    let run_dir = out.join(&cfg.run_id);
    std::fs::create_dir_all(&run_dir).unwrap();
    std::fs::write(run_dir.join(".lock"), "1\n").unwrap();
    let err = run_stages(&cfg, &opts(&out, Stage::Ingest), &reg).unwrap_err();
    assert!(matches!(err, Error::Locked { .. }));
    assert_eq!(err.exit_code(), 4);
}
