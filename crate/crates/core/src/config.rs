//! Experiment configuration: one versioned TOML file covering every
//! command, with dotted-key flag overrides (`--train.lr0 0.01`). Missing
//! sections and fields fall back to desk-scale defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::synth::SyntheticTaskConfig;
use crate::entropy::EntropyParams;
use crate::error::{Error, Result};
use crate::features::{GfbConfig, SAMPLE_RATE};
use crate::net::{AdaptConfig, NetworkSpec, TrainConfig};
use crate::selection::PassConfig;

pub const CONFIG_VERSION: u32 = 1;

/// Split names as generated by `synth` and consumed everywhere else.
pub const SPLITS: [&str; 5] = ["train", "cv", "eval_matched", "pool", "eval_mismatched"];

fn default_version() -> u32 {
    CONFIG_VERSION
}

/// Artifact locations. `workdir` is resolved against the process working
/// directory; every other path is relative to `workdir`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub workdir: String,
    pub model: String,
    pub adapted: String,
    pub scores: String,
    pub selection: String,
    pub train_log: String,
    pub adapt_log: String,
    pub loop_dir: String,
    pub report_dir: String,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            workdir: "work".into(),
            model: "model.ckpt".into(),
            adapted: "adapted.ckpt".into(),
            scores: "scores.csv".into(),
            selection: "selected.txt".into(),
            train_log: "train_log.csv".into(),
            adapt_log: "adapt_log.csv".into(),
            loop_dir: "loop".into(),
            report_dir: "report".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreConfig {
    /// Manifest to score, relative to workdir.
    pub manifest: String,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            manifest: "corpus/pool.jsonl".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectConfig {
    /// Selection size for the standalone `select` command.
    pub k: usize,
}

impl Default for SelectConfig {
    fn default() -> Self {
        SelectConfig { k: 30 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Layers for the correlation sweep; empty means every tappable layer.
    pub layers: Vec<usize>,
    /// Labeled manifest scored for the NRSE-vs-error correlation.
    pub manifest: String,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            layers: Vec::new(),
            manifest: "corpus/eval_mismatched.jsonl".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_version")]
    pub config_version: u32,
    pub paths: PathsConfig,
    pub gfb: GfbConfig,
    pub net: NetworkSpec,
    pub entropy: EntropyParams,
    pub train: TrainConfig,
    pub adapt: AdaptConfig,
    pub pass: PassConfig,
    pub synth: SyntheticTaskConfig,
    pub score: ScoreConfig,
    pub select: SelectConfig,
    pub report: ReportConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            config_version: CONFIG_VERSION,
            paths: PathsConfig::default(),
            gfb: GfbConfig::default(),
            net: NetworkSpec::default(),
            entropy: EntropyParams::default(),
            train: TrainConfig::default(),
            adapt: AdaptConfig::default(),
            pass: PassConfig::default(),
            synth: SyntheticTaskConfig::default(),
            score: ScoreConfig::default(),
            select: SelectConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

fn lookup<'a>(table: &'a toml::Table, segments: &[&str]) -> Option<&'a toml::Value> {
    let (first, rest) = segments.split_first()?;
    let value = table.get(*first)?;
    if rest.is_empty() {
        Some(value)
    } else {
        lookup(value.as_table()?, rest)
    }
}

/// Parses an override value, matching the type the key has in `like`
/// (the config file merged over the built-in defaults). Unknown keys fall
/// back to literal inference and are then caught by strict
/// deserialization.
fn coerce(key: &str, raw: &str, like: Option<&toml::Value>) -> Result<toml::Value> {
    use toml::Value;
    let fail = |ty: &str| Error::config(format!("override {key}={raw:?}: expected a {ty} value"));
    match like {
        Some(Value::Integer(_)) => Ok(Value::Integer(raw.parse().map_err(|_| fail("integer"))?)),
        Some(Value::Float(_)) => Ok(Value::Float(raw.parse().map_err(|_| fail("float"))?)),
        Some(Value::Boolean(_)) => Ok(Value::Boolean(raw.parse().map_err(|_| fail("boolean"))?)),
        Some(Value::String(_)) => Ok(Value::String(raw.to_string())),
        Some(_) => Err(Error::config(format!(
            "override {key} does not name a scalar field"
        ))),
        None => Ok(if let Ok(b) = raw.parse::<bool>() {
            Value::Boolean(b)
        } else if let Ok(i) = raw.parse::<i64>() {
            Value::Integer(i)
        } else if let Ok(f) = raw.parse::<f64>() {
            Value::Float(f)
        } else {
            Value::String(raw.to_string())
        }),
    }
}

fn apply_override(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let segments: Vec<&str> = key.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(Error::config(format!("invalid override key {key:?}")));
    }
    let mut current = table;
    for seg in &segments[..segments.len() - 1] {
        let slot = current
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        current = slot
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("override {key}: {seg} is not a section")))?;
    }
    current.insert(segments[segments.len() - 1].to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    /// Builds a config from an optional TOML file plus dotted-key
    /// overrides. Override values take the type the key already has; keys
    /// unknown to the schema are rejected.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let (text, source) = match path {
            Some(p) => (crate::ioutil::read_string(p)?, p.display().to_string()),
            None => (String::new(), "<defaults>".to_string()),
        };
        Self::from_toml_str(&text, &source, overrides)
    }

    pub fn from_toml_str(text: &str, source: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::config(format!("{source}: {e}")))?;
        let defaults =
            toml::Table::try_from(ExperimentConfig::default()).expect("default config serializes");
        for (key, raw) in overrides {
            let segments: Vec<&str> = key.split('.').collect();
            let like = lookup(&table, &segments).or_else(|| lookup(&defaults, &segments));
            let value = coerce(key, raw, like)?;
            apply_override(&mut table, key, value)?;
        }
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::config(format!("{source}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.config_version != CONFIG_VERSION {
            return Err(Error::config(format!(
                "unsupported config_version {} (this build reads version {CONFIG_VERSION})",
                self.config_version
            )));
        }
        self.gfb.validate(SAMPLE_RATE)?;
        self.net.validate()?;
        if self.net.input_bands != self.gfb.num_filters {
            return Err(Error::config(format!(
                "net.input_bands is {} but gfb.num_filters is {}",
                self.net.input_bands, self.gfb.num_filters
            )));
        }
        self.entropy.validate()?;
        self.net.validate_tap(self.entropy.layer_index)?;
        self.train.validate()?;
        self.adapt.validate()?;
        self.pass_config().validate()?;
        self.synth.validate()?;
        if self.select.k == 0 {
            return Err(Error::config("select.k must be positive".to_string()));
        }
        for &layer in &self.report.layers {
            self.net.validate_tap(layer)?;
        }
        if self.paths.workdir.is_empty() {
            return Err(Error::config("paths.workdir must not be empty".to_string()));
        }
        Ok(())
    }

    /// The pass section completed with this config's entropy and
    /// adaptation settings.
    pub fn pass_config(&self) -> PassConfig {
        let mut pass = self.pass.clone();
        pass.entropy = self.entropy.clone();
        pass.adapt = self.adapt.clone();
        pass
    }

    pub fn workdir(&self) -> PathBuf {
        PathBuf::from(&self.paths.workdir)
    }

    /// A workdir-relative artifact path.
    pub fn workpath(&self, rel: &str) -> PathBuf {
        self.workdir().join(rel)
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.workpath("corpus")
    }

    pub fn manifest_path(&self, split: &str) -> PathBuf {
        self.corpus_dir().join(format!("{split}.jsonl"))
    }

    /// Layers for the report sweep: the configured list, or every
    /// tappable layer when the list is empty.
    pub fn report_layers(&self) -> Vec<usize> {
        if self.report.layers.is_empty() {
            (1..=self.net.hidden.len()).collect()
        } else {
            self.report.layers.clone()
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
