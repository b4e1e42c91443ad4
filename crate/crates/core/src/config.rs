//! Run configuration: one TOML file drives the training and evaluation commands.
//!
//! ```toml
//! seed = 7
//! datasets = ["data/cairo.txt"]
//! relabel = "cairo"            # built-in map name or a path to a map file
//! output_dir = "runs/cairo"
//!
//! [classifier]
//! encoder = "elmo_frozen:concat"
//!
//! [grid]
//! encoders = ["none", "trainable_embedding", "word2vec_frozen", "elmo_frozen"]
//! ```
//!
//! Every omitted field takes its default. Seeds of the `classifier`, `bilm` and
//! `word2vec` sections default to the top-level seed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bilm::BiLmConfig;
use crate::classifier::{ClassifierConfig, Directionality, EncoderKind};
use crate::dataset::DEFAULT_MAX_LEN;
use crate::error::{HarError, Result};
use crate::eval::ExperimentConfig;
use crate::tokenizer::RelabelMap;
use crate::word2vec::SkipGramConfig;

/// Version string recorded in manifests, `git describe` output when built from a checkout.
pub const VERSION: &str = match option_env!("HAR_GIT_DESCRIBE") {
    Some(v) => v,
    None => concat!("v", env!("CARGO_PKG_VERSION")),
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub datasets: Vec<PathBuf>,
    #[serde(default)]
    pub relabel: Option<String>,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub bilm: BiLmConfig,
    #[serde(default)]
    pub word2vec: SkipGramConfig,
    /// Runs every combination instead of the single `classifier` setting.
    #[serde(default)]
    pub grid: Option<Grid>,
}

fn default_max_len() -> usize {
    DEFAULT_MAX_LEN
}

fn default_folds() -> usize {
    3
}

fn default_validation_fraction() -> f64 {
    0.2
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub encoders: Vec<EncoderKind>,
    pub directionality: Vec<Directionality>,
    pub layers: Vec<usize>,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            encoders: vec![
                EncoderKind::None,
                EncoderKind::TrainableEmbedding,
                EncoderKind::Word2VecFrozen,
                EncoderKind::ElmoFrozen(Default::default()),
            ],
            directionality: vec![Directionality::Bi],
            layers: vec![1],
        }
    }
}

impl Grid {
    pub fn points(&self) -> Vec<(EncoderKind, Directionality, usize)> {
        let mut out = Vec::new();
        for &e in &self.encoders {
            for &d in &self.directionality {
                for &l in &self.layers {
                    out.push((e, d, l));
                }
            }
        }
        out
    }
}

impl RunConfig {
    /// All defaults, every section seeded with `seed`.
    pub fn with_seed(seed: u64) -> Self {
        let mut c = RunConfig {
            seed,
            datasets: Vec::new(),
            relabel: None,
            max_len: default_max_len(),
            folds: default_folds(),
            validation_fraction: default_validation_fraction(),
            workers: None,
            output_dir: default_output_dir(),
            classifier: ClassifierConfig::default(),
            bilm: BiLmConfig::default(),
            word2vec: SkipGramConfig::default(),
            grid: None,
        };
        c.classifier.seed = seed;
        c.bilm.seed = seed;
        c.word2vec.seed = seed;
        c
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| HarError::Config(e.to_string()))?;
        if !table.contains_key("seed") {
            return Err(HarError::Config("seed is required".into()));
        }
        let mut cfg: RunConfig = table.clone().try_into().map_err(|e: toml::de::Error| HarError::Config(e.to_string()))?;
        let has_seed = |section: &str| table.get(section).and_then(|s| s.get("seed")).is_some();
        if !has_seed("classifier") {
            cfg.classifier.seed = cfg.seed;
        }
        if !has_seed("bilm") {
            cfg.bilm.seed = cfg.seed;
        }
        if !has_seed("word2vec") {
            cfg.word2vec.seed = cfg.seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &Path| if p.is_relative() { base.join(p) } else { p.to_path_buf() };
        cfg.datasets = cfg.datasets.iter().map(|p| resolve(p)).collect();
        cfg.output_dir = resolve(&cfg.output_dir);
        if let Some(r) = &cfg.relabel {
            if RelabelMap::builtin(r).is_none() {
                cfg.relabel = Some(resolve(Path::new(r)).to_string_lossy().into_owned());
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarError::Config(m.into()));
        if self.max_len == 0 {
            return bad("max_len must be positive");
        }
        if self.folds < 2 {
            return bad("folds must be at least 2");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation_fraction must be in (0, 1)");
        }
        if self.workers == Some(0) {
            return bad("workers must be positive");
        }
        if let Some(g) = &self.grid {
            if g.points().is_empty() {
                return bad("grid has no points");
            }
            if g.layers.iter().any(|l| !(1..=2).contains(l)) {
                return bad("grid layers must be 1 or 2");
            }
        }
        self.bilm.validate().map_err(|e| HarError::Config(e.to_string()))?;
        self.word2vec.validate().map_err(|e| HarError::Config(e.to_string()))
    }

    /// Dataset paths, which must be present and exist.
    pub fn require_datasets(&self) -> Result<&[PathBuf]> {
        if self.datasets.is_empty() {
            return Err(HarError::Config("no dataset path given".into()));
        }
        for p in &self.datasets {
            if !p.is_file() {
                return Err(HarError::Config(format!("dataset {} does not exist", p.display())));
            }
        }
        Ok(&self.datasets)
    }

    pub fn relabel_map(&self) -> Result<Option<RelabelMap>> {
        match &self.relabel {
            None => Ok(None),
            Some(name) => match RelabelMap::builtin(name) {
                Some(m) => Ok(Some(m)),
                None => {
                    let p = Path::new(name);
                    if !p.is_file() {
                        return Err(HarError::Config(format!("relabel map {name} is neither built in nor a file")));
                    }
                    RelabelMap::load(p).map(Some)
                }
            },
        }
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            classifier: self.classifier.clone(),
            bilm: self.bilm.clone(),
            word2vec: self.word2vec.clone(),
            folds: self.folds,
            validation_fraction: self.validation_fraction,
            seed: self.seed,
            workers: self.workers,
        }
    }

    /// Fields that differ from the defaults, as dotted paths. Seeds equal to the
    /// top-level seed are not overrides.
    pub fn overrides(&self) -> Result<BTreeMap<String, Override>> {
        let mut base = Self::with_seed(self.seed);
        base.datasets = self.datasets.clone();
        let mut a = BTreeMap::new();
        let mut b = BTreeMap::new();
        flatten("", &serde_json::to_value(&base)?, &mut a);
        flatten("", &serde_json::to_value(self)?, &mut b);
        let keys: std::collections::BTreeSet<&String> = a.keys().chain(b.keys()).collect();
        let null = serde_json::Value::Null;
        Ok(keys
            .into_iter()
            .filter(|k| k.as_str() != "seed" && k.as_str() != "datasets")
            .filter_map(|k| {
                let (d, v) = (a.get(k).unwrap_or(&null), b.get(k).unwrap_or(&null));
                (d != v).then(|| (k.clone(), Override { default: d.clone(), value: v.clone() }))
            })
            .collect())
    }
}

fn flatten(prefix: &str, v: &serde_json::Value, out: &mut BTreeMap<String, serde_json::Value>) {
    match v {
        serde_json::Value::Object(m) => {
            for (k, child) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        _ => {
            out.insert(prefix.to_string(), v.clone());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Override {
    pub default: serde_json::Value,
    pub value: serde_json::Value,
}

/// Provenance record written next to every command's outputs. It carries no timestamps,
/// so identical inputs give an identical manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub overrides: BTreeMap<String, Override>,
    pub metrics: serde_json::Value,
    /// Output file name to SHA-256 of its contents.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        RunManifest {
            command: command.into(),
            version: VERSION.into(),
            seed,
            config,
            overrides: BTreeMap::new(),
            metrics: serde_json::Value::Null,
            outputs: BTreeMap::new(),
        }
    }

    pub fn for_run(command: &str, cfg: &RunConfig) -> Result<Self> {
        let mut m = Self::new(command, cfg.seed, serde_json::to_value(cfg)?);
        m.overrides = cfg.overrides()?;
        Ok(m)
    }

    /// Hashes a written file and records it under its file name.
    pub fn record(&mut self, path: &Path) -> Result<()> {
        let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        self.outputs.insert(name, file_sha256(path)?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_published_tables() {
        let c = RunConfig::from_toml_str("seed = 1").unwrap();
        assert_eq!((c.folds, c.max_len, c.classifier.max_epochs, c.classifier.batch_size, c.classifier.patience), (3, 2000, 400, 64, 20));
        assert_eq!((c.word2vec.embedding_size, c.word2vec.window, c.word2vec.epochs), (64, 20, 100));
        assert_eq!((c.bilm.embedding_size, c.bilm.window, c.bilm.max_epochs, c.bilm.batch_size), (64, 60, 400, 512));
        assert_eq!((c.classifier.units, c.classifier.layers), (64, 1));
        assert_eq!((c.classifier.seed, c.bilm.seed, c.word2vec.seed), (1, 1, 1));
        assert!(c.overrides().unwrap().is_empty());
    }

    #[test]
    fn seed_is_mandatory() {
        assert!(matches!(RunConfig::from_toml_str("folds = 3"), Err(HarError::Config(_))));
    }

    #[test]
    fn overrides_are_listed() {
        let c = RunConfig::from_toml_str("seed = 4\nfolds = 5\n[classifier]\nencoder = \"none\"\nseed = 9\n").unwrap();
        let o = c.overrides().unwrap();
        assert_eq!(o.keys().collect::<Vec<_>>(), ["classifier.encoder", "classifier.seed", "folds"]);
        assert_eq!(o["folds"].value, serde_json::json!(5));
        assert_eq!(c.classifier.encoder, EncoderKind::None);
        assert_eq!(c.bilm.seed, 4);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(RunConfig::from_toml_str("seed = 1\nfold = 3").is_err());
        assert!(RunConfig::from_toml_str("seed = 1\nfolds = 1").is_err());
        assert!(RunConfig::from_toml_str("seed = 1\n[classifier]\nencoder = \"glove\"").is_err());
    }

    #[test]
    fn grid_defaults_to_the_four_encoders() {
        let c = RunConfig::from_toml_str("seed = 1\n[grid]\n").unwrap();
        assert_eq!(c.grid.unwrap().points().len(), 4);
    }

    #[test]
    fn missing_dataset_is_a_config_error() {
        let mut c = RunConfig::with_seed(0);
        assert!(matches!(c.require_datasets(), Err(HarError::Config(_))));
        c.datasets.push("/nonexistent/log.txt".into());
        assert!(matches!(c.require_datasets(), Err(HarError::Config(_))));
    }
}
