//! Dataset construction and the on-disk manifest.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::degrade::{degrade, DegradationProfile};
use super::gabor::{classical_enhance_with, ClassicalParams};
use super::impression::{gen_impression, ImpressionConfig};
use super::master::{gen_master_print_with, MasterParams};
use super::orientation::{gen_orientation_field, OrientationParams};
use crate::error::{Error, Result};
use crate::imaging::{load_image, save_image, GrayImage};
use crate::seed::{derive_seed, json_digest, rng_from, sha256_hex};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub identity_id: u64,
    pub impression_id: u64,
    /// Relative to the manifest's directory.
    pub degraded_path: String,
    pub target_path: String,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config_digest: String,
    pub records: Vec<SampleRecord>,
    /// Directory the relative paths resolve against; not serialized.
    #[serde(skip)]
    pub root: PathBuf,
}

impl Manifest {
    /// Reads and validates `path` (either the manifest file or its directory).
    pub fn load(path: impl AsRef<Path>) -> Result<Manifest> {
        let mut path = path.as_ref().to_path_buf();
        if path.is_dir() {
            path = path.join(MANIFEST_FILE);
        }
        if !path.exists() {
            return Err(Error::Dependency(path));
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::Data(format!(
                "manifest version {} is not supported",
                manifest.version
            )));
        }
        manifest.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        manifest.validate()?;
        Ok(manifest)
    }

    /// Keys are unique and every referenced file exists.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert((r.identity_id, r.impression_id)) {
                return Err(Error::Data(format!(
                    "duplicate record ({}, {})",
                    r.identity_id, r.impression_id
                )));
            }
            for p in [&r.degraded_path, &r.target_path] {
                let full = self.root.join(p);
                if !full.is_file() {
                    return Err(Error::Data(format!("missing file {}", full.display())));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Digest of the serialized manifest, used as pair-set provenance.
    pub fn digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("serializable manifest"))
    }

    pub fn records_in(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn degraded_path(&self, r: &SampleRecord) -> PathBuf {
        self.root.join(&r.degraded_path)
    }

    pub fn target_path(&self, r: &SampleRecord) -> PathBuf {
        self.root.join(&r.target_path)
    }
}

/// Where the clean enhancement target comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// The Gabor-enhanced clean impression.
    ClassicalEnhance,
    /// The clean impression itself.
    CleanSynthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub identities: usize,
    pub impressions_per_identity: usize,
    pub image_size: usize,
    /// Train/val/test fractions over identities, summing to 1.
    pub split: [f64; 3],
    pub target: TargetKind,
    /// Ridge frequency range per identity, cycles/pixel.
    pub frequency_range: (f64, f64),
    pub orientation: OrientationParams,
    pub master: MasterParams,
    pub impression: ImpressionConfig,
    pub degradation: DegradationProfile,
    pub classical: ClassicalParams,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            identities: 50,
            impressions_per_identity: 4,
            image_size: 128,
            split: [0.7, 0.1, 0.2],
            target: TargetKind::ClassicalEnhance,
            frequency_range: (0.09, 0.14),
            orientation: OrientationParams::default(),
            master: MasterParams::default(),
            impression: ImpressionConfig::default(),
            degradation: DegradationProfile::default(),
            classical: ClassicalParams::default(),
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.split.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.split.iter().any(|f| *f < 0.0) {
            return Err(Error::Config(format!("split fractions {:?} do not sum to 1", self.split)));
        }
        if self.identities == 0 || self.impressions_per_identity == 0 {
            return Err(Error::Config("dataset needs at least one identity and impression".into()));
        }
        if self.image_size < 64 {
            return Err(Error::Config("image_size must be at least 64".into()));
        }
        let (lo, hi) = self.frequency_range;
        if !(lo > 1.0 / 25.0 && lo <= hi && hi < 1.0 / 3.0) {
            return Err(Error::Config("frequency_range must lie inside (1/25, 1/3)".into()));
        }
        self.impression.validate()
    }

    pub fn digest(&self) -> String {
        json_digest(self)
    }
}

/// Largest-remainder apportionment of `n` items to `fractions`; ties in the
/// remainder go to the earlier slot.
pub fn largest_remainder(n: usize, fractions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// A generated sample held in memory.
pub struct GeneratedSample {
    pub identity_id: u64,
    pub impression_id: u64,
    pub clean: GrayImage,
    pub degraded: GrayImage,
    pub target: GrayImage,
}

/// Master print of one identity.
pub fn identity_master(config: &DatasetConfig, identity_id: u64) -> Result<GrayImage> {
    let root = config.seed;
    let s = config.image_size;
    let orient = gen_orientation_field(
        derive_seed(root, "orientation", &[identity_id]),
        s,
        s,
        config.classical.block_size,
        &config.orientation,
    )?;
    let (lo, hi) = config.frequency_range;
    let mut rng = rng_from(derive_seed(root, "frequency", &[identity_id]));
    let freq = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    gen_master_print_with(&orient, freq, derive_seed(root, "master", &[identity_id]), &config.master)
}

/// Renders one (identity, impression) sample from its master print.
pub fn generate_sample(
    config: &DatasetConfig,
    master: &GrayImage,
    identity_id: u64,
    impression_id: u64,
) -> Result<GeneratedSample> {
    let root = config.seed;
    let clean = gen_impression(
        master,
        identity_id,
        impression_id,
        derive_seed(root, "impression", &[identity_id, impression_id]),
        &config.impression,
    )?;
    let recipe = config
        .degradation
        .sample(derive_seed(root, "degrade", &[identity_id, impression_id]));
    let degraded = degrade(&clean, &recipe)?;
    let target = match config.target {
        TargetKind::ClassicalEnhance => classical_enhance_with(&clean, &config.classical)?,
        TargetKind::CleanSynthetic => clean.clone(),
    };
    Ok(GeneratedSample {
        identity_id,
        impression_id,
        clean,
        degraded,
        target,
    })
}

/// Generates the synthetic dataset under `out_dir` and writes `manifest.json`.
///
/// Identities are split contiguously by largest-remainder apportionment of the
/// split fractions, so every impression of an identity lands in one split.
pub fn build_dataset(config: &DatasetConfig, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    config.validate()?;
    let out_dir = out_dir.as_ref();
    let images = out_dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let counts = largest_remainder(config.identities, &config.split);
    let split_of = |id: usize| {
        if id < counts[0] {
            Split::Train
        } else if id < counts[0] + counts[1] {
            Split::Val
        } else {
            Split::Test
        }
    };
    let mut records = Vec::with_capacity(config.identities * config.impressions_per_identity);
    for id in 0..config.identities {
        let master = identity_master(config, id as u64)?;
        for imp in 0..config.impressions_per_identity {
            let sample = generate_sample(config, &master, id as u64, imp as u64)?;
            let degraded_path = format!("images/{id:05}_{imp:02}_degraded.png");
            let target_path = format!("images/{id:05}_{imp:02}_target.png");
            save_image(&sample.degraded, out_dir.join(&degraded_path))?;
            save_image(&sample.target, out_dir.join(&target_path))?;
            records.push(SampleRecord {
                identity_id: id as u64,
                impression_id: imp as u64,
                degraded_path,
                target_path,
                split: split_of(id),
            });
        }
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        config_digest: config.digest(),
        records,
        root: out_dir.to_path_buf(),
    };
    manifest.save(out_dir)?;
    Ok(manifest)
}

/// Loads the degraded and target images of every record in `split`.
pub fn load_split(manifest: &Manifest, split: Split) -> Result<Vec<(GrayImage, GrayImage)>> {
    manifest
        .records_in(split)
        .map(|r| Ok((load_image(manifest.degraded_path(r))?, load_image(manifest.target_path(r))?)))
        .collect()
}
