use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::evalkit::{emit_report, emit_roc_plot, read_roc_csv, report, score_pairs, select_threshold, MetricsReport, ScoreMode};
use crate::model::{load_checkpoint, Component, Provenance};
use crate::pretrain::{run_pretrain, Method, PretrainArtifacts, ENCODER_FILE};
use crate::probe::{make_pairs, train_verifier, FrozenEncoder, PairSet, ProbeArtifacts, Verifier, CLASSIFIER_FILE, PROJECTION_FILE};
use crate::synthdata::{build_dataset, Manifest, Split, MANIFEST_FILE};

/// Evaluation mode as spelled on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Classifier,
    Similarity,
}

impl EvalMode {
    pub const ALL: [EvalMode; 2] = [EvalMode::Classifier, EvalMode::Similarity];

    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::Classifier => "classifier",
            EvalMode::Similarity => "similarity",
        }
    }

    pub fn score_mode(self) -> ScoreMode {
        match self {
            EvalMode::Classifier => ScoreMode::ClassifierProb,
            EvalMode::Similarity => ScoreMode::Cosine,
        }
    }
}

/// Where each stage reads and writes, all under `output_dir/{stage}/`.
#[derive(Clone, Debug)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(config: &RunConfig) -> Self {
        Layout { root: config.output_dir.clone() }
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.root.join("generate")
    }

    pub fn pretrain_dir(&self, method: Method) -> PathBuf {
        self.root.join("pretrain").join(method.as_str())
    }

    pub fn pairs_path(&self, split: Split) -> PathBuf {
        self.root.join("probe").join(format!("pairs_{}.json", split.as_str()))
    }

    pub fn probe_dir(&self, method: Method) -> PathBuf {
        self.root.join("probe").join(method.as_str())
    }

    pub fn eval_dir(&self, method: Method, mode: EvalMode) -> PathBuf {
        self.root.join("eval").join(method.as_str()).join(mode.as_str())
    }

    pub fn plot_dir(&self) -> PathBuf {
        self.root.join("plot-roc")
    }

    pub fn compare_dir(&self) -> PathBuf {
        self.root.join("compare")
    }
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Dependency(path.to_path_buf()))
    }
}

/// Logs a warning when an artifact was produced under another configuration.
pub fn check_provenance(what: &Path, provenance: &Provenance, expected: &str) -> bool {
    let same = provenance.config_digest == expected;
    if !same {
        log::warn!(
            "provenance mismatch: {} was written under config {} but the current config is {}",
            what.display(),
            provenance.config_digest,
            expected
        );
    }
    same
}

/// The run configuration with `pretrain.method` set to `method`.
pub fn for_method(config: &RunConfig, method: Method) -> RunConfig {
    let mut c = config.clone();
    c.pretrain.method = method;
    c
}

pub fn cmd_generate(config: &RunConfig) -> Result<Manifest> {
    let dir = Layout::new(config).dataset_dir();
    log::info!("generating {} identities into {}", config.synthdata.identities, dir.display());
    let manifest = build_dataset(&config.synthdata, &dir)?;
    config.write_snapshot(&dir)?;
    Ok(manifest)
}

/// Loads the manifest written by `generate`, warning when it was built from a
/// different dataset configuration.
pub fn load_manifest(config: &RunConfig) -> Result<Manifest> {
    let path = Layout::new(config).dataset_dir().join(MANIFEST_FILE);
    require(&path)?;
    let manifest = Manifest::load(&path)?;
    if manifest.config_digest != config.synthdata.digest() {
        log::warn!(
            "provenance mismatch: {} was generated from dataset config {} but the current one is {}",
            path.display(),
            manifest.config_digest,
            config.synthdata.digest()
        );
    }
    Ok(manifest)
}

/// Pretrains the encoder with `config.pretrain.method`.
pub fn cmd_pretrain(config: &RunConfig, manifest: &Manifest, workers: usize) -> Result<PretrainArtifacts> {
    let method = config.pretrain.method;
    let dir = Layout::new(config).pretrain_dir(method);
    log::info!("pretraining {method} into {}", dir.display());
    let artifacts = run_pretrain(&config.pretrain, &config.model, manifest, &dir, &config.digest(), workers)?;
    config.write_snapshot(&dir)?;
    Ok(artifacts)
}

/// Builds (or rebuilds, deterministically) the verification pairs of `split`.
pub fn pairs_for(config: &RunConfig, manifest: &Manifest, split: Split) -> Result<PairSet> {
    let path = Layout::new(config).pairs_path(split);
    let p = &config.probe;
    let pairs = make_pairs(manifest, split, p.pair_ratio, p.genuine_cap, p.seed)?;
    pairs.save(&path)?;
    Ok(pairs)
}

fn load_pairs(config: &RunConfig, manifest_root: &Path, split: Split) -> Result<PairSet> {
    let path = Layout::new(config).pairs_path(split);
    require(&path)?;
    PairSet::load(&path, manifest_root)
}

/// Trains the verification head on the frozen encoder at `encoder_ckpt`.
pub fn cmd_probe(config: &RunConfig, encoder_ckpt: &Path, manifest: &Manifest, workers: usize) -> Result<ProbeArtifacts> {
    require(encoder_ckpt)?;
    let digest = config.digest();
    let encoder = FrozenEncoder::load(encoder_ckpt)?;
    check_provenance(encoder_ckpt, &encoder.provenance, &digest);
    let train = pairs_for(config, manifest, Split::Train)?;
    let val = pairs_for(config, manifest, Split::Val)?;
    pairs_for(config, manifest, Split::Test)?;
    let dir = Layout::new(config).probe_dir(config.pretrain.method);
    log::info!(
        "probing {} on {} train / {} val pairs into {}",
        encoder_ckpt.display(),
        train.pairs.len(),
        val.pairs.len(),
        dir.display()
    );
    let artifacts = train_verifier(&encoder, &train, Some(&val), &config.probe, &dir, &digest, workers)?;
    config.write_snapshot(&dir)?;
    Ok(artifacts)
}

/// Checkpoints consumed by `eval`.
pub struct EvalInputs {
    pub encoder: FrozenEncoder,
    pub verifier: Verifier,
}

impl EvalInputs {
    /// Loads the encoder and verification head for `config.pretrain.method`.
    pub fn load(config: &RunConfig) -> Result<Self> {
        let layout = Layout::new(config);
        let method = config.pretrain.method;
        let digest = config.digest();
        let enc_path = layout.pretrain_dir(method).join(ENCODER_FILE);
        let proj_path = layout.probe_dir(method).join(PROJECTION_FILE);
        let cls_path = layout.probe_dir(method).join(CLASSIFIER_FILE);
        for p in [&enc_path, &proj_path, &cls_path] {
            require(p)?;
        }
        let encoder = FrozenEncoder::load(&enc_path)?;
        let projection = load_checkpoint(&proj_path, Component::Projection)?;
        let classifier = load_checkpoint(&cls_path, Component::Classifier)?;
        check_provenance(&enc_path, &encoder.provenance, &digest);
        check_provenance(&proj_path, &projection.provenance, &digest);
        check_provenance(&cls_path, &classifier.provenance, &digest);
        let verifier = Verifier::from_checkpoints(&projection, &classifier)?;
        Ok(EvalInputs { encoder, verifier })
    }
}

/// Scores the test pairs in `mode` and writes `metrics.json`, `roc.csv` and
/// `roc.svg`. The classifier threshold is 0.5 unless configured otherwise;
/// the similarity threshold is selected on the validation pairs.
pub fn cmd_eval(
    config: &RunConfig,
    inputs: &EvalInputs,
    mode: EvalMode,
    val: &PairSet,
    test: &PairSet,
    workers: usize,
) -> Result<MetricsReport> {
    let score_mode = mode.score_mode();
    let score = |pairs: &PairSet| score_pairs(pairs, score_mode, &inputs.encoder, &inputs.verifier, workers);
    let threshold = match mode {
        EvalMode::Classifier if !config.eval.classifier_threshold_from_val => {
            config.eval.classifier_threshold.unwrap_or(0.5)
        }
        EvalMode::Classifier => select_threshold(&score(val)?, crate::evalkit::ThresholdCriterion::MaxAccuracy)?,
        EvalMode::Similarity => select_threshold(&score(val)?, config.eval.similarity_criterion)?,
    };
    let scores = score(test)?;
    let rep = report(&scores, threshold)?;
    rep.check_identities()?;
    let dir = Layout::new(config).eval_dir(config.pretrain.method, mode);
    emit_report(&rep, &config.digest(), dir.join("metrics.json"))?;
    if !rep.roc.is_empty() {
        emit_roc_plot(&rep.roc, dir.join("roc"))?;
    }
    config.write_snapshot(&dir)?;
    Ok(rep)
}

/// Loads checkpoints and pairs, then runs [`cmd_eval`].
pub fn cmd_eval_stage(config: &RunConfig, mode: EvalMode, workers: usize) -> Result<MetricsReport> {
    let inputs = EvalInputs::load(config)?;
    let root = Layout::new(config).dataset_dir();
    let val = load_pairs(config, &root, Split::Val)?;
    let test = load_pairs(config, &root, Split::Test)?;
    cmd_eval(config, &inputs, mode, &val, &test, workers)
}

/// Re-renders `roc.csv` files from `eval` as plots under `output_dir/plot-roc/`.
/// Returns the written SVG paths.
pub fn cmd_plot_roc(config: &RunConfig, methods: &[Method], modes: &[EvalMode]) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(config);
    let mut written = Vec::new();
    for &method in methods {
        for &mode in modes {
            let csv = layout.eval_dir(method, mode).join("roc.csv");
            require(&csv)?;
            let points = read_roc_csv(&csv)?;
            let base = layout.plot_dir().join(format!("{}_{}", method.as_str(), mode.as_str()));
            let (_, svg) = emit_roc_plot(&points, base)?;
            written.push(svg);
        }
    }
    Ok(written)
}

/// One cell of the comparison matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: Method,
    pub mode: EvalMode,
    pub subset: String,
    pub accuracy: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    pub config_digest: String,
    pub classifier: MetricsReport,
    pub similarity: MetricsReport,
}

/// Output of `compare`, written to `compare/metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub config_digest: String,
    pub methods: Vec<MethodResult>,
    pub rows: Vec<ComparisonRow>,
}

const SUBSETS: [&str; 3] = ["imposter", "genuine", "entire"];

impl ComparisonTable {
    pub fn new(config_digest: String, methods: Vec<MethodResult>) -> Self {
        let mut rows = Vec::with_capacity(methods.len() * 6);
        for m in &methods {
            for (mode, rep) in [(EvalMode::Classifier, &m.classifier), (EvalMode::Similarity, &m.similarity)] {
                let acc = [rep.accuracy.imposter, rep.accuracy.genuine, rep.accuracy.entire];
                let f1 = [rep.f1.imposter, rep.f1.genuine, rep.f1.entire];
                for (k, subset) in SUBSETS.iter().enumerate() {
                    rows.push(ComparisonRow {
                        method: m.method,
                        mode,
                        subset: subset.to_string(),
                        accuracy: acc[k],
                        f1: f1[k],
                    });
                }
            }
        }
        ComparisonTable {
            config_digest,
            methods,
            rows,
        }
    }

    /// Markdown matrix with one row per method; each cell is `accuracy / F1`.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| method |");
        for mode in EvalMode::ALL {
            for subset in SUBSETS {
                let _ = write!(s, " {} {} |", mode.as_str(), subset);
            }
        }
        s.push_str(" classifier AUC | similarity AUC |\n|---|");
        s.push_str(&"---|".repeat(8));
        s.push('\n');
        for m in &self.methods {
            let _ = write!(s, "| {} |", m.method);
            for rep in [&m.classifier, &m.similarity] {
                let acc = [rep.accuracy.imposter, rep.accuracy.genuine, rep.accuracy.entire];
                let f1 = [rep.f1.imposter, rep.f1.genuine, rep.f1.entire];
                for k in 0..3 {
                    let _ = write!(s, " {:.4} / {:.4} |", acc[k], f1[k]);
                }
            }
            for rep in [&m.classifier, &m.similarity] {
                match rep.auc {
                    Some(a) => {
                        let _ = write!(s, " {a:.4} |");
                    }
                    None => s.push_str(" n/a |"),
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Runs generate, then pretrain, probe and both eval modes for each method,
/// and writes `compare/metrics.json` and `compare/table.md`.
pub fn cmd_compare(config: &RunConfig, methods: &[Method], workers: usize) -> Result<ComparisonTable> {
    let manifest = cmd_generate(config)?;
    let layout = Layout::new(config);
    let mut results = Vec::with_capacity(methods.len());
    for &method in methods {
        let cfg = for_method(config, method);
        cmd_pretrain(&cfg, &manifest, workers)?;
        let enc_path = layout.pretrain_dir(method).join(ENCODER_FILE);
        cmd_probe(&cfg, &enc_path, &manifest, workers)?;
        let inputs = EvalInputs::load(&cfg)?;
        let val = load_pairs(&cfg, &manifest.root, Split::Val)?;
        let test = load_pairs(&cfg, &manifest.root, Split::Test)?;
        let classifier = cmd_eval(&cfg, &inputs, EvalMode::Classifier, &val, &test, workers)?;
        let similarity = cmd_eval(&cfg, &inputs, EvalMode::Similarity, &val, &test, workers)?;
        log::info!(
            "{method}: classifier entire accuracy {:.4}, similarity entire accuracy {:.4}",
            classifier.accuracy.entire,
            similarity.accuracy.entire
        );
        results.push(MethodResult {
            method,
            config_digest: cfg.digest(),
            classifier,
            similarity,
        });
    }
    let table = ComparisonTable::new(config.digest(), results);
    let dir = layout.compare_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let json_path = dir.join("metrics.json");
    let mut text = serde_json::to_string_pretty(&table)?;
    text.push('\n');
    std::fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
    let md_path = dir.join("table.md");
    std::fs::write(&md_path, table.to_markdown()).map_err(|e| Error::io(&md_path, e))?;
    config.write_snapshot(&dir)?;
    Ok(table)
}
