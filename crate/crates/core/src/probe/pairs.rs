use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from};
use crate::synthdata::{Manifest, Split};

pub const PAIRSET_VERSION: u32 = 1;

/// One verification pair. Paths are relative to the pair set's root.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSample {
    pub a: String,
    pub b: String,
    /// 1 for genuine (same identity), 0 for imposter.
    pub label: u8,
}

impl PairSample {
    pub fn is_genuine(&self) -> bool {
        self.label == 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSet {
    pub version: u32,
    /// Digest of the manifest the pairs were drawn from.
    pub source_digest: String,
    pub seed: u64,
    /// Imposter pairs per genuine pair.
    pub ratio: f64,
    pub pairs: Vec<PairSample>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl PairSet {
    pub fn genuine_count(&self) -> usize {
        self.pairs.iter().filter(|p| p.is_genuine()).count()
    }

    pub fn imposter_count(&self) -> usize {
        self.pairs.len() - self.genuine_count()
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Distinct image paths in first-appearance order.
    pub fn images(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for p in &self.pairs {
            for x in [&p.a, &p.b] {
                if seen.insert(x.as_str()) {
                    out.push(x.clone());
                }
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Reads a pair set; relative paths resolve against `root`.
    pub fn load(path: impl AsRef<Path>, root: impl Into<PathBuf>) -> Result<Self> {
        let path = path.as_ref();
        if !path.is_file() {
            return Err(Error::Dependency(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut set: PairSet = serde_json::from_str(&text)?;
        if set.version != PAIRSET_VERSION {
            return Err(Error::Data(format!("pair set version {} is not supported", set.version)));
        }
        set.root = root.into();
        Ok(set)
    }
}

/// Largest-remainder target: `round(genuine * ratio)` with halves rounded up.
pub fn imposter_target(genuine: usize, ratio: f64) -> usize {
    (genuine as f64 * ratio + 0.5).floor() as usize
}

/// Builds genuine pairs (every within-identity impression pair, at most
/// `genuine_cap` per identity) and uniformly sampled cross-identity imposter
/// pairs at `ratio` imposters per genuine pair.
pub fn make_pairs(manifest: &Manifest, split: Split, ratio: f64, genuine_cap: usize, seed: u64) -> Result<PairSet> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::Config(format!("pair ratio must be positive, got {ratio}")));
    }
    let split_key = Split::ALL.iter().position(|&s| s == split).expect("known split") as u64;
    let mut by_identity: BTreeMap<u64, Vec<(u64, &str)>> = BTreeMap::new();
    for r in manifest.records_in(split) {
        by_identity
            .entry(r.identity_id)
            .or_default()
            .push((r.impression_id, r.degraded_path.as_str()));
    }
    let usable = by_identity.values().filter(|v| v.len() >= 2).count();
    if by_identity.len() < 2 || usable == 0 {
        return Err(Error::Data(format!(
            "{} split has {} identities ({usable} with two impressions); pairs need at least two identities",
            split.as_str(),
            by_identity.len()
        )));
    }
    let mut images: Vec<(u64, &str)> = Vec::new();
    let mut pairs = Vec::new();
    for (&id, imps) in &mut by_identity {
        imps.sort();
        let mut within: Vec<(usize, usize)> = Vec::new();
        for i in 0..imps.len() {
            for j in i + 1..imps.len() {
                within.push((i, j));
            }
        }
        if within.len() > genuine_cap {
            let mut rng = rng_from(derive_seed(seed, "pairs-genuine", &[split_key, id]));
            let mut keep = index::sample(&mut rng, within.len(), genuine_cap).into_vec();
            keep.sort_unstable();
            within = keep.into_iter().map(|k| within[k]).collect();
        }
        for (i, j) in within {
            pairs.push(PairSample {
                a: imps[i].1.to_string(),
                b: imps[j].1.to_string(),
                label: 1,
            });
        }
        images.extend(imps.iter().map(|&(_, p)| (id, p)));
    }
    let genuine = pairs.len();
    let wanted = imposter_target(genuine, ratio);
    let n = images.len();
    let same: usize = by_identity.values().map(|v| v.len() * (v.len() - 1) / 2).sum();
    let available = n * (n - 1) / 2 - same;
    if wanted > available {
        return Err(Error::Data(format!(
            "need {wanted} imposter pairs but only {available} cross-identity pairs exist"
        )));
    }
    let mut rng = rng_from(derive_seed(seed, "pairs-imposter", &[split_key]));
    let chosen: Vec<(usize, usize)> = if wanted * 2 <= available {
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(wanted);
        while out.len() < wanted {
            let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
            let key = (i.min(j), i.max(j));
            if images[i].0 != images[j].0 && seen.insert(key) {
                out.push(key);
            }
        }
        out
    } else {
        let mut all = Vec::with_capacity(available);
        for i in 0..n {
            for j in i + 1..n {
                if images[i].0 != images[j].0 {
                    all.push((i, j));
                }
            }
        }
        index::sample(&mut rng, all.len(), wanted).into_iter().map(|k| all[k]).collect()
    };
    for (i, j) in chosen {
        pairs.push(PairSample {
            a: images[i].1.to_string(),
            b: images[j].1.to_string(),
            label: 0,
        });
    }
    pairs.shuffle(&mut rng_from(derive_seed(seed, "pairs-order", &[split_key])));
    Ok(PairSet {
        version: PAIRSET_VERSION,
        source_digest: manifest.digest(),
        seed,
        ratio,
        pairs,
        root: manifest.root.clone(),
    })
}
