use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::report::{
    CorpusResult, CorrelationEntry, EvaluationReport, GroupMatrices, TrainingSummary, REPORT_SCHEMA_VERSION,
};
use crate::corpus::{
    balance, extract_frames_with_hop, parse_alignments, read_frames, split_train_validation, write_frames,
    CorpusManifest, FrameRecord, Usage,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    balanced_accuracy, bootstrap_balanced_accuracy, confusion_matrix, micro_accuracy, present_phones, submatrix,
    ColumnSelection, PredictionSet,
};
use crate::features::{FeatureCache, FeatureCacheHeader};
use crate::inventory::PhoneInventory;
use crate::models::{load_checkpoint_with, BackendRegistry, PhoneClassifier};
use crate::perceptual::{average_ratings, read_ratings, scatter_export, speaker_balanced_accuracy, Dimension};
use crate::training::{predict_dataset, train, CheckpointSink, Dataset, InputKind};

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Balance,
    Features,
    Train,
    Evaluate,
    Correlate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Balance,
        Stage::Features,
        Stage::Train,
        Stage::Evaluate,
        Stage::Correlate,
        Stage::Report,
    ];
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("stage serializes");
        f.write_str(s.as_str().expect("unit variant"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Partial,
    Failed,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: Stage,
    pub message: String,
}

/// Contents of `state.json`: the resume marker of a run directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunState {
    pub run_id: String,
    pub config_hash: String,
    pub completed: Vec<Stage>,
    pub status: RunStatus,
    pub failure: Option<StageFailure>,
}

impl RunState {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn is_done(&self, stage: Stage) -> bool {
        self.completed.contains(&stage)
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Parent of the run directory `{out_dir}/{run_id}`.
    pub out_dir: PathBuf,
    /// Wipe an existing run directory (and its lock) first.
    pub force: bool,
    /// Last stage to execute.
    pub until: Stage,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            force: false,
            until: Stage::Report,
        }
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    /// Stages executed by this call, skipping those resumed from disk.
    pub executed: Vec<Stage>,
    pub report: Option<EvaluationReport>,
}

/// File layout of `{out}/{run_id}`.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(out_dir: &Path, run_id: &str) -> Self {
        Self {
            root: out_dir.join(run_id),
        }
    }
    pub fn lock(&self) -> PathBuf {
        self.root.join(".lock")
    }
    pub fn state(&self) -> PathBuf {
        self.root.join("state.json")
    }
    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }
    pub fn corpus_frames(&self, tag: &str) -> PathBuf {
        self.root.join("frames").join(format!("{tag}.jsonl"))
    }
    pub fn corpus_audio(&self, tag: &str) -> PathBuf {
        self.root.join("frames").join(format!("{tag}.audio.json"))
    }
    pub fn split(&self, name: &str) -> PathBuf {
        self.root.join("splits").join(format!("{name}.jsonl"))
    }
    pub fn features(&self, name: &str) -> PathBuf {
        self.root.join("features").join(format!("{name}.phfc"))
    }
    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }
    pub fn training_summary(&self) -> PathBuf {
        self.root.join("training.json")
    }
    pub fn eval(&self, tag: &str) -> PathBuf {
        self.root.join("eval").join(tag)
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }
}

fn test_split(tag: &str) -> String {
    format!("test_{tag}")
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Exclusive ownership of a run directory; released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(run_dir: &RunDir) -> Result<Self> {
        let path = run_dir.lock();
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked {
                path: run_dir.root.display().to_string(),
            }),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Full pipeline through the report.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path, force: bool) -> Result<EvaluationReport> {
    let opts = RunOptions {
        out_dir: out_dir.to_path_buf(),
        force,
        until: Stage::Report,
    };
    let outcome = run_stages(config, &opts, &BackendRegistry::default())?;
    Ok(outcome.report.expect("report stage ran"))
}

/// Runs every stage up to `opts.until`, resuming from `state.json` when the
/// directory holds an unfinished run of the same config.
pub fn run_stages(config: &ExperimentConfig, opts: &RunOptions, registry: &BackendRegistry) -> Result<RunOutcome> {
    config.validate(registry)?;
    let dir = RunDir::new(&opts.out_dir, &config.run_id);
    if opts.force && dir.root.exists() {
        fs::remove_dir_all(&dir.root).map_err(|e| Error::io(&dir.root, e))?;
    }
    mkdir(&dir.root)?;
    let _lock = RunLock::acquire(&dir)?;

    let hash = config.content_hash();
    let mut state = if dir.state().exists() {
        let state = RunState::read(&dir.state())?;
        if state.config_hash != hash {
            return Err(Error::RunExists {
                run_id: config.run_id.clone(),
                message: format!("{} holds a run with a different config; use --force", dir.root.display()),
            });
        }
        if state.is_done(opts.until) {
            return Err(Error::RunExists {
                run_id: config.run_id.clone(),
                message: format!("already complete through {}; use --force to redo", opts.until),
            });
        }
        state
    } else {
        write_json(&dir.config(), config)?;
        RunState {
            run_id: config.run_id.clone(),
            config_hash: hash,
            completed: Vec::new(),
            status: RunStatus::Running,
            failure: None,
        }
    };
    state.status = RunStatus::Running;
    state.failure = None;
    state.write(&dir.state())?;

    let ctx = Ctx {
        cfg: config,
        dir: &dir,
        inventory: config.load_inventory()?,
        registry,
    };
    let mut executed = Vec::new();
    let mut report = None;
    for stage in Stage::ALL.into_iter().filter(|&s| s <= opts.until) {
        if state.is_done(stage) {
            continue;
        }
        let result = match stage {
            Stage::Ingest => ctx.ingest(),
            Stage::Balance => ctx.balance(),
            Stage::Features => ctx.features(),
            Stage::Train => ctx.train(),
            Stage::Evaluate => ctx.evaluate(),
            Stage::Correlate => ctx.correlate(),
            Stage::Report => ctx.report().map(|r| {
                report = Some(r);
            }),
        };
        if let Err(e) = result {
            state.status = RunStatus::Failed;
            state.failure = Some(StageFailure {
                stage,
                message: e.to_string(),
            });
            state.write(&dir.state())?;
            return Err(e);
        }
        state.completed.push(stage);
        executed.push(stage);
        state.write(&dir.state())?;
    }
    state.status = if state.is_done(Stage::Report) {
        RunStatus::Complete
    } else {
        RunStatus::Partial
    };
    state.write(&dir.state())?;
    Ok(RunOutcome {
        run_dir: dir.root.clone(),
        executed,
        report,
    })
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    dir: &'a RunDir,
    inventory: PhoneInventory,
    registry: &'a BackendRegistry,
}

impl Ctx<'_> {
    fn silence(&self) -> usize {
        self.inventory.silence_index()
    }

    fn ingest(&self) -> Result<()> {
        mkdir(&self.dir.root.join("frames"))?;
        let mut seen: HashMap<String, String> = HashMap::new();
        for tag in self.cfg.all_corpora() {
            let manifest = self.cfg.resolve_path(&self.cfg.corpora[&tag]);
            let utterances = parse_alignments(&manifest, &self.inventory)?;
            let mut frames = Vec::new();
            let mut audio = BTreeMap::new();
            for mut utt in utterances {
                if let Some(other) = seen.insert(utt.utterance_id.clone(), tag.clone()) {
                    return Err(Error::Data(format!(
                        "utterance id {} appears in both {other} and {tag}",
                        utt.utterance_id
                    )));
                }
                utt.corpus_tag = tag.clone();
                frames.extend(extract_frames_with_hop(&utt, self.cfg.features.frame_hop_s));
                audio.insert(utt.utterance_id.clone(), utt.audio_path.clone());
            }
            if frames.is_empty() {
                return Err(Error::Data(format!("corpus {tag} yields no frames")));
            }
            write_frames(&self.dir.corpus_frames(&tag), &frames)?;
            write_json(&self.dir.corpus_audio(&tag), &audio)?;
            let usage = if self.cfg.test_corpora.contains(&tag) {
                Usage::Test
            } else {
                Usage::Train
            };
            CorpusManifest::describe(&tag, usage, &frames, self.inventory.num_classes(), None)
                .write(&self.dir.corpus_frames(&tag).with_extension("manifest.json"))?;
        }
        Ok(())
    }

    fn write_split(&self, name: &str, usage: Usage, frames: &[FrameRecord], seed: Option<u64>) -> Result<()> {
        let path = self.dir.split(name);
        write_frames(&path, frames)?;
        CorpusManifest::describe(name, usage, frames, self.inventory.num_classes(), seed)
            .write(&path.with_extension("manifest.json"))?;
        Ok(())
    }

    fn balance(&self) -> Result<()> {
        mkdir(&self.dir.root.join("splits"))?;
        let mut pooled = Vec::new();
        for tag in &self.cfg.finetune_corpora {
            pooled.extend(read_frames(&self.dir.corpus_frames(tag))?);
        }
        let balanced = balance(&pooled, &self.cfg.balancing)?;
        let (train, validation) = split_train_validation(
            &balanced,
            self.cfg.train_fraction,
            self.cfg.seeds.split,
            self.inventory.num_classes(),
        )?;
        self.write_split("train", Usage::Train, &train, Some(self.cfg.seeds.split))?;
        self.write_split("validation", Usage::Validation, &validation, Some(self.cfg.seeds.split))?;
        for tag in &self.cfg.test_corpora {
            let frames = read_frames(&self.dir.corpus_frames(tag))?;
            let (frames, seed) = if self.cfg.balance_test {
                (balance(&frames, &self.cfg.balancing)?, Some(self.cfg.balancing.seed))
            } else {
                (frames, None)
            };
            self.write_split(&test_split(tag), Usage::Test, &frames, seed)?;
        }
        Ok(())
    }

    fn input_kind(&self) -> InputKind {
        if self.cfg.is_ssl() {
            InputKind::Waveform
        } else {
            InputKind::Context
        }
    }

    fn split_names(&self) -> Vec<String> {
        let mut names = vec!["train".to_string(), "validation".to_string()];
        names.extend(self.cfg.test_corpora.iter().map(|t| test_split(t)));
        names
    }

    fn features(&self) -> Result<()> {
        mkdir(&self.dir.root.join("features"))?;
        let mut audio: HashMap<String, PathBuf> = HashMap::new();
        for tag in self.cfg.all_corpora() {
            let map: BTreeMap<String, PathBuf> = read_json(&self.dir.corpus_audio(&tag))?;
            audio.extend(map);
        }
        let kind = self.input_kind();
        for name in self.split_names() {
            let frames = read_frames(&self.dir.split(&name))?;
            let ds = Dataset::from_frames(&frames, &audio, kind, &self.cfg.features)?;
            ds.to_cache(kind, &self.cfg.features).write(&self.dir.features(&name))?;
        }
        Ok(())
    }

    fn load_split(&self, name: &str) -> Result<Dataset> {
        let frames = read_frames(&self.dir.split(name))?;
        let path = self.dir.features(name);
        let kind = self.input_kind();
        let expected = FeatureCacheHeader {
            kind: kind.cache_kind(),
            mel_config: self.cfg.features.clone(),
            record_len: match kind {
                InputKind::Context => self.cfg.features.window_len(),
                InputKind::Waveform => crate::features::waveform_window_len(self.cfg.features.sample_rate_hz),
            },
        };
        let cache = FeatureCache::read_if_valid(&path, &expected)
            .ok_or_else(|| Error::Data(format!("{}: missing or stale feature cache", path.display())))?;
        Ok(Dataset::from_cache(&frames, &cache)?)
    }

    fn train(&self) -> Result<()> {
        let model = PhoneClassifier::with_registry(self.cfg.model_config(), self.registry)?;
        let num_params = model.num_params();
        let train_set = self.load_split("train")?;
        let validation_set = self.load_split("validation")?;
        let sink = CheckpointSink {
            dir: self.dir.checkpoints(),
            inventory_hash: self.inventory.content_hash(),
        };
        let outcome = train(model, &train_set, &validation_set, &self.cfg.training, Some(&sink))?;
        let summary = TrainingSummary {
            best_epoch: outcome.checkpoint.epoch,
            best_validation_phone_error_rate: outcome.checkpoint.validation_phone_error_rate,
            num_params,
            train_frames: train_set.len(),
            validation_frames: validation_set.len(),
            history: outcome.history,
        };
        write_json(&self.dir.training_summary(), &summary)
    }

    fn phones(&self, preds: &PredictionSet) -> Vec<usize> {
        let exclude = self.cfg.exclude_silence.then(|| self.silence());
        present_phones(preds, exclude)
    }

    fn evaluate(&self) -> Result<()> {
        let ckpt = CheckpointSink {
            dir: self.dir.checkpoints(),
            inventory_hash: String::new(),
        }
        .best_checkpoint_path();
        let (model, header) = load_checkpoint_with(&ckpt, self.registry)?;
        if header.inventory_hash != self.inventory.content_hash() {
            return Err(Error::Data(format!("{}: trained against a different inventory", ckpt.display())));
        }
        let labels = self.inventory.labels();
        let groups = self.cfg.load_groups()?;
        for tag in &self.cfg.test_corpora {
            let out = self.dir.eval(tag);
            mkdir(&out)?;
            let data = self.load_split(&test_split(tag))?;
            let preds = predict_dataset(&model, &data)?;
            drop(data);
            preds.write_csv(&out.join("predictions.csv"))?;
            let phones = self.phones(&preds);
            if phones.is_empty() {
                return Err(Error::Data(format!("test corpus {tag} has no scorable phones")));
            }
            let ba = balanced_accuracy(&preds, &phones)?;
            let ci = bootstrap_balanced_accuracy(&preds, &phones, &self.cfg.bootstrap)?;
            let confusion = confusion_matrix(&preds, &labels)?;
            confusion.write_csv(&out.join("confusion.csv"))?;
            confusion.write_heatmap_csv(&out.join("confusion_heatmap.csv"))?;
            let mut group_matrices = Vec::new();
            for g in &groups {
                let full = submatrix(&confusion, g, ColumnSelection::Full)?;
                let restricted = submatrix(&confusion, g, ColumnSelection::Restricted)?;
                restricted.write_csv(&out.join(format!("group_{}.csv", g.name)))?;
                group_matrices.push(GroupMatrices {
                    name: g.name.clone(),
                    members: g.members.clone(),
                    full,
                    restricted,
                });
            }
            let result = CorpusResult {
                n_frames: preds.len(),
                n_speakers: preds.speakers().len(),
                micro_accuracy: micro_accuracy(&preds)?,
                balanced_accuracy: ba,
                confidence_interval: ci,
                confusion,
                group_matrices,
                correlations: Vec::new(),
            };
            write_json(&out.join("result.json"), &result)?;
        }
        Ok(())
    }

    fn correlate(&self) -> Result<()> {
        for (tag, path) in &self.cfg.ratings {
            let out = self.dir.eval(tag);
            let preds = PredictionSet::read_csv(&out.join("predictions.csv"), self.inventory.num_classes())?;
            let exclude = self.cfg.exclude_silence.then(|| self.silence());
            let accs = speaker_balanced_accuracy(&preds, exclude);
            let scores = average_ratings(&read_ratings(&self.cfg.resolve_path(path))?)?;
            let mut entries = Vec::new();
            for dim in Dimension::ALL {
                let export = scatter_export(&scores, &accs, dim, &out)?;
                let paired: Vec<&str> = export.rows.iter().map(|r| r.speaker_id.as_str()).collect();
                entries.push(CorrelationEntry {
                    dimension: dim,
                    fit: export.fit,
                    n_paired: paired.len(),
                    n_excluded: export.exclusions.len(),
                    few_rater_speakers: scores
                        .iter()
                        .filter(|s| s.few_raters && paired.contains(&s.speaker_id.as_str()))
                        .count(),
                });
            }
            write_json(&out.join("correlations.json"), &entries)?;
        }
        Ok(())
    }

    fn report(&self) -> Result<EvaluationReport> {
        let training: TrainingSummary = read_json(&self.dir.training_summary())?;
        let mut test_results = BTreeMap::new();
        for tag in &self.cfg.test_corpora {
            let out = self.dir.eval(tag);
            let mut result: CorpusResult = read_json(&out.join("result.json"))?;
            if self.cfg.ratings.contains_key(tag) {
                result.correlations = read_json(&out.join("correlations.json"))?;
            }
            test_results.insert(tag.clone(), result);
        }
        let report = EvaluationReport {
            schema_version: REPORT_SCHEMA_VERSION,
            run_id: self.cfg.run_id.clone(),
            inventory_hash: self.inventory.content_hash(),
            phone_labels: self.inventory.labels(),
            config: self.cfg.clone(),
            training,
            test_results,
        };
        report.validate()?;
        report.write(&self.dir.report())?;
        Ok(report)
    }
}

/// Reads `{run_dir}/state.json` if present.
pub fn read_state(run_dir: &Path) -> Result<Option<RunState>> {
    let path = run_dir.join("state.json");
    if path.exists() {
        RunState::read(&path).map(Some)
    } else {
        Ok(None)
    }
}

/// Loads and validates `{run_dir}/report.json`.
pub fn load_report(run_dir: &Path) -> Result<EvaluationReport> {
    EvaluationReport::read(&run_dir.join("report.json"))
}
