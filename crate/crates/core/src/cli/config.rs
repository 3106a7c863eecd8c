use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::evalkit::ThresholdCriterion;
use crate::model::UNetConfig;
use crate::pretrain::PretrainConfig;
use crate::probe::ProbeConfig;
use crate::seed::{derive_seed, json_digest};
use crate::synthdata::DatasetConfig;

/// Environment variable that replaces `root_seed`.
pub const SEED_ENV: &str = "RIDGELINE_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Classifier-mode threshold; `None` means 0.5.
    pub classifier_threshold: Option<f64>,
    /// Pick the classifier-mode threshold on validation pairs instead.
    pub classifier_threshold_from_val: bool,
    /// Rule for the similarity-mode threshold, chosen on validation pairs.
    pub similarity_criterion: ThresholdCriterion,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            classifier_threshold: None,
            classifier_threshold_from_val: false,
            similarity_criterion: ThresholdCriterion::MaxAccuracy,
        }
    }
}

/// Whole-pipeline configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub root_seed: u64,
    pub output_dir: PathBuf,
    pub synthdata: DatasetConfig,
    pub model: UNetConfig,
    pub pretrain: PretrainConfig,
    pub probe: ProbeConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            root_seed: 0,
            output_dir: PathBuf::from("runs/desk"),
            synthdata: DatasetConfig::default(),
            model: UNetConfig::default(),
            pretrain: PretrainConfig::default(),
            probe: ProbeConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn apply_override(root: &mut Value, key: &str, raw: &str) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override {key}: {} is not a section", parts[..i].join("."))))?;
        node = obj
            .get_mut(*part)
            .ok_or_else(|| Error::Config(format!("override {key}: unknown key {part:?}")))?;
    }
    // Values are JSON when they parse as JSON, plain strings otherwise.
    *node = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}

impl RunConfig {
    /// Defaults, then the optional JSON file, then `RIDGELINE_SEED`, then
    /// `key=value` overrides, then seed resolution and validation.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)], env_seed: Option<&str>) -> Result<Self> {
        let mut value = serde_json::to_value(RunConfig::default())?;
        if let Some(path) = file {
            if !path.is_file() {
                return Err(Error::Dependency(path.to_path_buf()));
            }
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let patch: Value =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            merge(&mut value, patch);
        }
        if let Some(seed) = env_seed {
            let seed: u64 = seed
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={seed:?} is not an unsigned integer")))?;
            value["root_seed"] = Value::from(seed);
        }
        for (k, v) in overrides {
            apply_override(&mut value, k, v)?;
        }
        let cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolved()
    }

    /// Derives every section seed from `root_seed` and validates the result.
    pub fn resolved(mut self) -> Result<Self> {
        let root = self.root_seed;
        self.synthdata.seed = derive_seed(root, "synthdata", &[]);
        self.pretrain.seed = derive_seed(root, "pretrain", &[]);
        self.probe.seed = derive_seed(root, "probe", &[]);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.synthdata.validate()?;
        self.model.validate()?;
        self.pretrain.validate()?;
        self.probe.validate()?;
        if self.model.input_size != self.synthdata.image_size {
            return Err(Error::Config(format!(
                "model.input_size {} differs from synthdata.image_size {}",
                self.model.input_size, self.synthdata.image_size
            )));
        }
        Ok(())
    }

    /// Digest of the resolved configuration; `output_dir` is excluded so the
    /// same experiment in two places has one digest.
    pub fn digest(&self) -> String {
        let mut v = serde_json::to_value(self).expect("serializable config");
        v.as_object_mut().expect("object").remove("output_dir");
        json_digest(&v)
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.output_dir.join(stage)
    }

    /// Writes `config.json` (resolved config plus digest) into `dir`.
    pub fn write_snapshot(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let snapshot = serde_json::json!({ "config_digest": self.digest(), "config": self });
        let path = dir.join("config.json");
        let mut text = serde_json::to_string_pretty(&snapshot)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

/// Splits `--section.key=value` (and `--root_seed=`, `--output_dir=`) config
/// overrides out of `args`, returning the remaining arguments.
pub fn extract_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    for arg in args {
        let parsed = arg.strip_prefix("--").and_then(|body| body.split_once('='));
        match parsed {
            Some((key, value)) if key.contains('.') || key == "root_seed" || key == "output_dir" => {
                overrides.push((key.to_string(), value.to_string()));
            }
            _ => rest.push(arg),
        }
    }
    (rest, overrides)
}
