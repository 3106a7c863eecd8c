//! Verification scoring and metrics: classifier-probability and
//! cosine-similarity modes, per-subset accuracy and F1, ROC/AUC, EER,
//! threshold selection, and report/plot files.

mod emit;
mod metrics;

pub use emit::{emit_report, emit_roc_plot, read_roc_csv};
pub use metrics::{
    confusion_at, eer, report, roc_curve, select_threshold, Counts, F1Scores, MetricsReport, RocPoint, ScoreMode,
    ScoreSet, SubsetAccuracy, ThresholdCriterion,
};

use crate::error::Result;
use crate::probe::{cosine, FrozenEncoder, PairSet, Verifier};

/// Scores every pair of `pairs` in the requested mode. Classifier mode uses
/// the order-symmetrized probability; cosine mode compares projection
/// embeddings.
pub fn score_pairs(
    pairs: &PairSet,
    mode: ScoreMode,
    encoder: &FrozenEncoder,
    verifier: &Verifier,
    workers: usize,
) -> Result<ScoreSet> {
    let data = encoder.feature_pairs(pairs, workers)?;
    let labels = pairs.pairs.iter().map(|p| p.is_genuine()).collect();
    let scores = match mode {
        ScoreMode::ClassifierProb => data.probabilities(verifier, 64)?,
        ScoreMode::Cosine => {
            let rows: Vec<&[f32]> = data.features.iter().map(Vec::as_slice).collect();
            let mut emb = Vec::with_capacity(rows.len());
            for chunk in rows.chunks(64) {
                emb.extend(verifier.embed_features(chunk)?);
            }
            data.pairs
                .iter()
                .map(|&(i, j)| cosine(emb[i].values(), emb[j].values()))
                .collect()
        }
    };
    ScoreSet::new(mode, scores, labels)
}
