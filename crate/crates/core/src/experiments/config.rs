use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::BalancingPolicy;
use crate::error::{Error, Result};
use crate::evaluation::{default_groups, parse_groups, BootstrapConfig, PhoneClassGroup};
use crate::features::MelConfig;
use crate::inventory::PhoneInventory;
use crate::models::{BackendRegistry, ClassifierHeadConfig, EncoderConfig, ModelConfig};
use crate::training::TrainingConfig;

/// Every seed a run consumes. These override the `seed` fields of the
/// nested balancing, training and bootstrap sections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub balance: u64,
    pub split: u64,
    pub init: u64,
    pub train: u64,
    pub bootstrap: u64,
}

impl Seeds {
    pub fn all(seed: u64) -> Self {
        Self {
            balance: seed,
            split: seed,
            init: seed,
            train: seed,
            bootstrap: seed,
        }
    }
}

fn default_true() -> bool {
    true
}

fn default_train_fraction() -> f64 {
    0.9
}

/// One run: encoder choice, fine-tuning and test corpora, and every knob of
/// the pipeline. Loaded from TOML or JSON; relative paths resolve against
/// the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run_id: String,
    pub encoder: EncoderConfig,
    /// Must stay true for the CNN, which trains from scratch.
    #[serde(default = "default_true")]
    pub trainable_encoder: bool,
    #[serde(default)]
    pub head: ClassifierHeadConfig,
    /// Manifest store: corpus tag → alignment manifest CSV.
    pub corpora: BTreeMap<String, PathBuf>,
    pub finetune_corpora: Vec<String>,
    pub test_corpora: Vec<String>,
    /// Defaults to the bundled French inventory.
    #[serde(default)]
    pub inventory: Option<PathBuf>,
    /// Defaults to the bundled obstruent and oral/nasal groups.
    #[serde(default)]
    pub phone_groups: Option<PathBuf>,
    /// Test corpus tag → expert ratings CSV.
    #[serde(default)]
    pub ratings: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub balancing: BalancingPolicy,
    /// Apply the balancing policy to test corpora as well.
    #[serde(default)]
    pub balance_test: bool,
    /// Share of each balanced class sent to train; the rest validates.
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub features: MelConfig,
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
    /// Leave silence out of balanced accuracies.
    #[serde(default = "default_true")]
    pub exclude_silence: bool,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    /// Parses `.json` as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let mut cfg = if is_json {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg.resolved())
    }

    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        toml::from_str::<Self>(text).map(Self::resolved).map_err(|e| e.to_string())
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        serde_json::from_str::<Self>(text)
            .map(Self::resolved)
            .map_err(|e| e.to_string())
    }

    /// Copies `seeds` and `trainable_encoder` into the nested sections so the
    /// serialized snapshot has one consistent value for each.
    pub fn resolved(mut self) -> Self {
        self.balancing.seed = self.seeds.balance;
        self.training.seed = self.seeds.train;
        self.bootstrap.seed = self.seeds.bootstrap;
        if let EncoderConfig::Ssl(h) = &mut self.encoder {
            h.trainable = self.trainable_encoder;
        }
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seeds = Seeds::all(seed);
        self.resolved()
    }

    pub fn resolve_path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Rewrites every path field to its resolved form, for configs that
    /// will be written somewhere other than `base_dir`.
    pub fn absolutize(&mut self) {
        let base = std::path::absolute(&self.base_dir).unwrap_or_else(|_| self.base_dir.clone());
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.corpora.values_mut().for_each(fix);
        self.ratings.values_mut().for_each(fix);
        self.inventory.iter_mut().for_each(fix);
        self.phone_groups.iter_mut().for_each(fix);
        if let EncoderConfig::Ssl(h) = &mut self.encoder {
            h.weights.iter_mut().for_each(fix);
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder.clone(),
            head: self.head.clone(),
            init_seed: self.seeds.init,
        }
    }

    pub fn is_ssl(&self) -> bool {
        matches!(self.encoder, EncoderConfig::Ssl(_))
    }

    pub fn load_inventory(&self) -> Result<PhoneInventory> {
        Ok(match &self.inventory {
            Some(p) => PhoneInventory::load(self.resolve_path(p))?,
            None => PhoneInventory::french(),
        })
    }

    pub fn load_groups(&self) -> Result<Vec<PhoneClassGroup>> {
        Ok(match &self.phone_groups {
            Some(p) => {
                let path = self.resolve_path(p);
                let text = std::fs::read_to_string(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                parse_groups(&text)?
            }
            None => default_groups(),
        })
    }

    /// Fine-tuning and test corpora, deduplicated and sorted.
    pub fn all_corpora(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.finetune_corpora.iter().chain(&self.test_corpora).collect();
        set.into_iter().cloned().collect()
    }

    /// SHA-256 of the serialized config; identifies a run directory's contents.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Everything that can be checked without touching audio or weights.
    pub fn validate(&self, registry: &BackendRegistry) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.run_id.is_empty()
            || !self
                .run_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
            || self.run_id.starts_with('.')
        {
            return bad(format!("run_id {:?} must be non-empty [A-Za-z0-9._-] not starting with '.'", self.run_id));
        }
        if self.finetune_corpora.is_empty() {
            return bad("finetune_corpora is empty".into());
        }
        if self.test_corpora.is_empty() {
            return bad("test_corpora is empty".into());
        }
        for (name, list) in [("finetune_corpora", &self.finetune_corpora), ("test_corpora", &self.test_corpora)] {
            let unique: BTreeSet<&String> = list.iter().collect();
            if unique.len() != list.len() {
                return bad(format!("{name} lists a corpus twice"));
            }
        }
        if let Some(tag) = self.test_corpora.iter().find(|t| self.finetune_corpora.contains(t)) {
            return bad(format!("corpus {tag} is used for both fine-tuning and testing"));
        }
        for tag in self.all_corpora() {
            let Some(p) = self.corpora.get(&tag) else {
                return bad(format!("corpus {tag} is not in the manifest store"));
            };
            let path = self.resolve_path(p);
            if !path.is_file() {
                return bad(format!("corpus {tag}: manifest {} not found", path.display()));
            }
        }
        for (tag, p) in &self.ratings {
            if !self.test_corpora.contains(tag) {
                return bad(format!("ratings given for {tag}, which is not a test corpus"));
            }
            let path = self.resolve_path(p);
            if !path.is_file() {
                return bad(format!("ratings for {tag}: {} not found", path.display()));
            }
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction {} not in (0, 1)", self.train_fraction));
        }
        if self.bootstrap.n_resamples == 0 || !(self.bootstrap.alpha > 0.0 && self.bootstrap.alpha < 1.0) {
            return bad("bootstrap needs n_resamples > 0 and alpha in (0, 1)".into());
        }
        let inventory = self.load_inventory()?;
        if self.balancing.num_classes != inventory.num_classes() {
            return bad(format!(
                "balancing.num_classes {} disagrees with the inventory's {}",
                self.balancing.num_classes,
                inventory.num_classes()
            ));
        }
        let labels = inventory.labels();
        for g in self.load_groups()? {
            if let Some(m) = g.members.iter().find(|m| !labels.contains(m)) {
                return bad(format!("phone group {}: {m} is not in the inventory", g.name));
            }
        }
        self.features.validate()?;
        self.training.validate()?;
        self.head.validate()?;
        match &self.encoder {
            EncoderConfig::Cnn(c) => {
                c.validate()?;
                if !self.trainable_encoder {
                    return bad("the CNN encoder trains from scratch; trainable_encoder must be true".into());
                }
                let expected = [self.features.context_frames, self.features.feature_width()];
                if c.input_shape != expected {
                    return bad(format!(
                        "CNN input_shape {:?} does not match the feature windows {expected:?}",
                        c.input_shape
                    ));
                }
            }
            EncoderConfig::Ssl(h) => {
                h.validate()?;
                if !registry.contains(h) {
                    return bad(format!(
                        "no SSL backend registered for {:?} (known schemes: {})",
                        h.backend_id,
                        registry.schemes().collect::<Vec<_>>().join(", ")
                    ));
                }
            }
        }
        Ok(())
    }
}
