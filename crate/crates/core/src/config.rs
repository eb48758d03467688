//! Experiment configuration shared by the CLI subcommands.
//!
//! The JSON layout is published in `schema/experiment-config.schema.json`.
//! Relative paths resolve against the directory holding the config file.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bridging::{BridgeTemplate, MixRatio};
use crate::error::{Error, Result};
use crate::probing::Setting;
use crate::script::ScriptClass;

pub const DEFAULT_MAX_STEP: u64 = 1500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub label: String,
    pub path: PathBuf,
    pub lang: String,
    /// Scripts kept by `filter`; defaults to the language's own script.
    #[serde(default)]
    pub scripts: Option<Vec<ScriptClass>>,
}

impl CorpusSpec {
    pub fn allowed_scripts(&self) -> Result<BTreeSet<ScriptClass>> {
        match &self.scripts {
            Some(s) if s.iter().any(|c| c.is_script()) => Ok(s.iter().copied().collect()),
            Some(_) => Err(Error::config(format!("corpus `{}` allows no script class", self.label))),
            None => ScriptClass::for_lang(&self.lang)
                .map(|c| BTreeSet::from([c]))
                .ok_or_else(|| Error::config(format!("no default script for language `{}`", self.lang))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepGrid {
    pub every: u64,
    #[serde(default = "default_max_step")]
    pub max: u64,
}

fn default_max_step() -> u64 {
    DEFAULT_MAX_STEP
}

impl StepGrid {
    pub fn steps(&self) -> Vec<u64> {
        (0..=self.max / self.every).map(|i| i * self.every).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointSpec {
    pub setting: Setting,
    pub step: u64,
    /// `ngram:PATH`, `stdio:COMMAND`, an `http(s)://` URL or `uniform`.
    pub scorer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Required; every seeded operation draws from it.
    pub seed: Option<u64>,
    pub lang: String,
    #[serde(default)]
    pub corpora: Vec<CorpusSpec>,
    #[serde(default)]
    pub parallel: Option<PathBuf>,
    /// Bridge pattern with `{en}` and `{xx}`; the built-in one when absent.
    #[serde(default)]
    pub template: Option<String>,
    #[serde(default)]
    pub ratio: Option<String>,
    #[serde(default)]
    pub max_chars: Option<usize>,
    #[serde(default)]
    pub questions: Vec<PathBuf>,
    #[serde(default)]
    pub steps: Option<StepGrid>,
    #[serde(default)]
    pub checkpoints: Vec<CheckpointSpec>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub judge: Option<String>,
    #[serde(default)]
    pub ema_weight: Option<f64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

/// A validated configuration with paths made absolute.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub seed: u64,
    /// Hex SHA-256 of the config file's canonical JSON form.
    pub hash: String,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::config(format!("{what} `{}` does not exist", path.display())))
    }
}

/// Canonical hash of a JSON value: keys sorted, no insignificant whitespace.
pub fn config_hash(value: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(value).unwrap_or_default();
    hex::encode(Sha256::digest(&bytes))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<LoadedConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let hash = config_hash(&value);
        let config: ExperimentConfig =
            serde_json::from_value(value).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.validate(base, hash)
    }

    pub fn validate(mut self, base: &Path, hash: String) -> Result<LoadedConfig> {
        let seed = self.seed.ok_or_else(|| Error::config("config is missing `seed`"))?;
        if self.lang.is_empty() {
            return Err(Error::config("config `lang` is empty"));
        }
        let mut labels = BTreeSet::new();
        for c in &mut self.corpora {
            if !labels.insert(c.label.clone()) {
                return Err(Error::config(format!("corpus label `{}` appears twice", c.label)));
            }
            c.path = resolve(base, &c.path);
            require_file(&c.path, "corpus")?;
            c.allowed_scripts()?;
        }
        if let Some(p) = &mut self.parallel {
            *p = resolve(base, p);
            require_file(p, "parallel corpus")?;
        }
        for q in &mut self.questions {
            *q = resolve(base, q);
            require_file(q, "question file")?;
        }
        if let Some(t) = &self.template {
            BridgeTemplate::new(&self.lang, t, &self.lang)?;
        }
        if let Some(r) = &self.ratio {
            r.parse::<MixRatio>()?;
        }
        if self.max_chars == Some(0) {
            return Err(Error::config("max_chars must be at least 1"));
        }
        if self.k == Some(0) {
            return Err(Error::config("k must be at least 1"));
        }
        if let Some(w) = self.ema_weight {
            if !(0.0..1.0).contains(&w) {
                return Err(Error::config(format!("ema_weight must lie in [0, 1), got {w}")));
            }
        }
        if let Some(g) = &self.steps {
            if g.every == 0 || g.max == 0 {
                return Err(Error::config("step grid needs positive `every` and `max`"));
            }
        }
        let grid: Option<BTreeSet<u64>> = self.steps.map(|g| g.steps().into_iter().collect());
        let mut seen = BTreeSet::new();
        for c in &mut self.checkpoints {
            if !seen.insert((c.setting, c.step)) {
                return Err(Error::config(format!("two scorers for {} step {}", c.setting, c.step)));
            }
            if let Some(grid) = &grid {
                if !grid.contains(&c.step) {
                    return Err(Error::config(format!("checkpoint step {} is not on the step grid", c.step)));
                }
            }
            // ngram model paths name artifacts that later stages produce
            if let Some(p) = c.scorer.strip_prefix("ngram:") {
                c.scorer = format!("ngram:{}", resolve(base, Path::new(p)).display());
            }
        }
        if let Some(o) = &mut self.output_dir {
            *o = resolve(base, o);
        }
        Ok(LoadedConfig { config: self, seed, hash })
    }

    pub fn corpus(&self, label: &str) -> Result<&CorpusSpec> {
        self.corpora
            .iter()
            .find(|c| c.label == label)
            .ok_or_else(|| Error::config(format!("config has no corpus labelled `{label}`")))
    }

    pub fn scorer_for(&self, setting: Setting, step: u64) -> Option<&str> {
        self.checkpoints
            .iter()
            .find(|c| c.setting == setting && c.step == step)
            .map(|c| c.scorer.as_str())
    }
}
