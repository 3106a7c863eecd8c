use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What a score means.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Classifier probability of "genuine", in [0, 1].
    ClassifierProb,
    /// Cosine similarity of embeddings, in [-1, 1].
    Cosine,
}

/// Parallel lists of scores and labels (`true` = genuine).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub mode: ScoreMode,
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl ScoreSet {
    pub fn new(mode: ScoreMode, scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Contract(format!(
                "{} scores for {} labels",
                scores.len(),
                labels.len()
            )));
        }
        let (lo, hi) = match mode {
            ScoreMode::ClassifierProb => (0.0, 1.0),
            ScoreMode::Cosine => (-1.0, 1.0),
        };
        if let Some(s) = scores.iter().find(|s| !(lo..=hi).contains(*s)) {
            return Err(Error::Contract(format!("score {s} outside [{lo}, {hi}] for {mode:?}")));
        }
        Ok(ScoreSet { mode, scores, labels })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn class_counts(&self) -> (usize, usize) {
        let g = self.labels.iter().filter(|&&l| l).count();
        (g, self.labels.len() - g)
    }

    fn require_both_classes(&self) -> Result<(usize, usize)> {
        let (g, i) = self.class_counts();
        if g == 0 || i == 0 {
            return Err(Error::Data(format!(
                "needs genuine and imposter scores, got {g} genuine and {i} imposter"
            )));
        }
        Ok((g, i))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Confusion counts when "genuine" is predicted iff `score >= threshold`.
pub fn confusion_at(scores: &ScoreSet, threshold: f64) -> Counts {
    let mut c = Counts::default();
    for (&s, &genuine) in scores.scores.iter().zip(&scores.labels) {
        match (s >= threshold, genuine) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

/// Accuracy on the imposter pairs, on the genuine pairs and overall.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetAccuracy {
    pub imposter: f64,
    pub genuine: f64,
    pub entire: f64,
}

/// Per-class F1. `entire` is the genuine-class F1; `macro` averages both
/// classes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub imposter: f64,
    pub genuine: f64,
    pub entire: f64,
    #[serde(rename = "macro")]
    pub macro_avg: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores at or above this value count as genuine; the first point uses
    /// `+inf`.
    pub threshold: f64,
}

/// Everything written to `metrics.json`, plus the ROC points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: ScoreMode,
    pub threshold: f64,
    pub counts: Counts,
    pub accuracy: SubsetAccuracy,
    pub f1: F1Scores,
    pub precision: f64,
    pub recall: f64,
    /// `None` when only one class is present.
    pub auc: Option<f64>,
    pub eer: Option<f64>,
    #[serde(skip)]
    pub roc: Vec<RocPoint>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    ratio(2 * tp, 2 * tp + fp + fn_)
}

/// Point metrics at `threshold`, with ROC, AUC and EER when both classes are
/// present. Empty classes give 0 for their subset accuracy.
pub fn report(scores: &ScoreSet, threshold: f64) -> Result<MetricsReport> {
    if scores.is_empty() {
        return Err(Error::Data("cannot report on an empty score set".into()));
    }
    let c = confusion_at(scores, threshold);
    let accuracy = SubsetAccuracy {
        imposter: ratio(c.tn, c.tn + c.fp),
        genuine: ratio(c.tp, c.tp + c.fn_),
        entire: ratio(c.tp + c.tn, c.total()),
    };
    let (genuine_f1, imposter_f1) = (f1(c.tp, c.fp, c.fn_), f1(c.tn, c.fn_, c.fp));
    let f1 = F1Scores {
        imposter: imposter_f1,
        genuine: genuine_f1,
        entire: genuine_f1,
        macro_avg: 0.5 * (genuine_f1 + imposter_f1),
    };
    let recall = ratio(c.tp, c.tp + c.fn_);
    let (roc, auc, eer_rate) = match scores.require_both_classes() {
        Ok(_) => {
            let (points, auc) = roc_curve(scores)?;
            (points, Some(auc), Some(eer(scores)?.0))
        }
        Err(_) => (Vec::new(), None, None),
    };
    let out = MetricsReport {
        mode: scores.mode,
        threshold,
        counts: c,
        accuracy,
        f1,
        precision: ratio(c.tp, c.tp + c.fp),
        recall,
        auc,
        eer: eer_rate,
        roc,
    };
    out.check_identities()?;
    Ok(out)
}

impl MetricsReport {
    /// Genuine-subset accuracy is the recall, imposter-subset accuracy the
    /// specificity, and entire accuracy the overall hit rate.
    pub fn check_identities(&self) -> Result<()> {
        let c = self.counts;
        let ok = self.accuracy.genuine == self.recall
            && self.accuracy.imposter == ratio(c.tn, c.tn + c.fp)
            && self.accuracy.entire == ratio(c.tp + c.tn, c.total());
        if !ok {
            return Err(Error::Contract("report subset accuracies disagree with the counts".into()));
        }
        Ok(())
    }
}

/// Distinct scores with genuine/imposter counts, highest score first.
fn grouped_desc(scores: &ScoreSet) -> Vec<(f64, usize, usize)> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores.scores[b].total_cmp(&scores.scores[a]));
    let mut out: Vec<(f64, usize, usize)> = Vec::new();
    for i in idx {
        let s = scores.scores[i];
        let (g, m) = if scores.labels[i] { (1, 0) } else { (0, 1) };
        match out.last_mut() {
            Some(last) if last.0 == s => {
                last.1 += g;
                last.2 += m;
            }
            _ => out.push((s, g, m)),
        }
    }
    out
}

/// ROC with one point per distinct score (equal scores form one step), led by
/// `(0, 0)` at threshold `+inf`; AUC by the trapezoid rule.
pub fn roc_curve(scores: &ScoreSet) -> Result<(Vec<RocPoint>, f64)> {
    let (pos, neg) = scores.require_both_classes()?;
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    for (s, g, m) in grouped_desc(scores) {
        let prev = *points.last().expect("seeded");
        tp += g;
        fp += m;
        let p = RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold: s,
        };
        auc += (p.fpr - prev.fpr) * (p.tpr + prev.tpr) / 2.0;
        points.push(p);
    }
    Ok((points, auc))
}

/// Equal error rate and its threshold. Candidates are the distinct scores in
/// ascending order followed by a sentinel above the maximum (all rejected);
/// the crossing of FAR and FRR is interpolated linearly between the
/// bracketing candidates. The sentinel's threshold value is the maximum
/// score itself.
pub fn eer(scores: &ScoreSet) -> Result<(f64, f64)> {
    let (pos, neg) = scores.require_both_classes()?;
    let mut groups = grouped_desc(scores);
    groups.reverse();
    // (threshold, far, frr) at every candidate, threshold ascending.
    let mut cands = Vec::with_capacity(groups.len() + 1);
    let (mut rejected_g, mut rejected_i) = (0usize, 0usize);
    for &(s, g, m) in &groups {
        cands.push((s, 1.0 - rejected_i as f64 / neg as f64, rejected_g as f64 / pos as f64));
        rejected_g += g;
        rejected_i += m;
    }
    let top = groups.last().expect("non-empty").0;
    cands.push((top, 0.0, 1.0));
    let mut prev = cands[0];
    if prev.1 == prev.2 {
        return Ok((prev.1, prev.0));
    }
    for &cur in &cands[1..] {
        let (d0, d1) = (prev.1 - prev.2, cur.1 - cur.2);
        if d1 == 0.0 {
            return Ok((cur.1, cur.0));
        }
        if d0 > 0.0 && d1 < 0.0 {
            let a = d0 / (d0 - d1);
            return Ok((prev.1 + a * (cur.1 - prev.1), prev.0 + a * (cur.0 - prev.0)));
        }
        prev = cur;
    }
    unreachable!("far - frr goes from >= 0 to -1 across the candidates")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdCriterion {
    MaxAccuracy,
    Eer,
}

/// Threshold chosen on validation scores. `MaxAccuracy` sweeps the midpoints
/// between adjacent distinct scores plus one value below the minimum and one
/// above the maximum, preferring the higher threshold on ties.
pub fn select_threshold(scores: &ScoreSet, criterion: ThresholdCriterion) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Data("cannot select a threshold from no scores".into()));
    }
    match criterion {
        ThresholdCriterion::Eer => Ok(eer(scores)?.1),
        ThresholdCriterion::MaxAccuracy => {
            let groups = grouped_desc(scores);
            let (pos, _) = scores.class_counts();
            // Walking thresholds from high to low: above the max, everything
            // is predicted imposter.
            let mut best_t = groups[0].0 + 1.0;
            let mut correct = scores.len() - pos;
            let mut best = correct;
            for (k, &(s, g, m)) in groups.iter().enumerate() {
                correct = correct + g - m;
                let t = match groups.get(k + 1) {
                    Some(next) => 0.5 * (s + next.0),
                    None => s - 1.0,
                };
                if correct > best {
                    best = correct;
                    best_t = t;
                }
            }
            Ok(best_t)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> ScoreSet {
        ScoreSet::new(ScoreMode::ClassifierProb, vec![0.9, 0.8, 0.1, 0.2], vec![true, true, false, false]).unwrap()
    }

    #[test]
    fn confusion_on_hand_set() {
        let s = toy();
        assert_eq!(confusion_at(&s, 0.5), Counts { tp: 2, fp: 0, tn: 2, fn_: 0 });
        let above = confusion_at(&s, 0.95);
        assert_eq!((above.tp, above.fp), (0, 0));
        let below = confusion_at(&s, 0.1);
        assert_eq!((below.tn, below.fn_), (0, 0));
    }

    #[test]
    fn separable_report() {
        let r = report(&toy(), 0.5).unwrap();
        assert_eq!(r.accuracy, SubsetAccuracy { imposter: 1.0, genuine: 1.0, entire: 1.0 });
        assert_eq!(r.f1.entire, 1.0);
        assert_eq!(r.auc, Some(1.0));
        assert_eq!(r.eer, Some(0.0));
        assert_eq!(r.roc.first().unwrap().threshold, f64::INFINITY);
    }

    #[test]
    fn all_imposter_predictions_on_one_to_three() {
        let labels = [vec![true; 10], vec![false; 30]].concat();
        let s = ScoreSet::new(ScoreMode::ClassifierProb, vec![0.2; 40], labels).unwrap();
        let r = report(&s, 0.5).unwrap();
        assert_eq!(r.accuracy.entire, 0.75);
        assert_eq!(r.accuracy.genuine, 0.0);
        assert_eq!(r.accuracy.imposter, 1.0);
        assert_eq!(r.f1.genuine, 0.0);
        assert_eq!(r.auc, Some(0.5));
        let (rate, t) = eer(&s).unwrap();
        assert_eq!((rate, t), (0.5, 0.2));
    }

    #[test]
    fn single_class_is_a_data_error() {
        let s = ScoreSet::new(ScoreMode::Cosine, vec![0.1, 0.3], vec![true, true]).unwrap();
        assert!(matches!(roc_curve(&s), Err(Error::Data(_))));
        assert!(eer(&s).is_err());
        assert_eq!(report(&s, 0.0).unwrap().auc, None);
        assert!(ScoreSet::new(ScoreMode::Cosine, vec![1.5], vec![true]).is_err());
        assert!(report(&ScoreSet::new(ScoreMode::Cosine, vec![], vec![]).unwrap(), 0.0).is_err());
    }

    #[test]
    fn threshold_selection() {
        let s = toy();
        let t = select_threshold(&s, ThresholdCriterion::MaxAccuracy).unwrap();
        assert_eq!(t, 0.5);
        assert_eq!(report(&s, t).unwrap().accuracy.entire, 1.0);
        assert_eq!(select_threshold(&s, ThresholdCriterion::Eer).unwrap(), 0.8);
        // All genuine: accepting everything is optimal.
        let g = ScoreSet::new(ScoreMode::Cosine, vec![0.3, 0.6], vec![true, true]).unwrap();
        assert_eq!(select_threshold(&g, ThresholdCriterion::MaxAccuracy).unwrap(), -0.7);
        // All imposter: the highest candidate already wins.
        let i = ScoreSet::new(ScoreMode::Cosine, vec![0.3, 0.6], vec![false, false]).unwrap();
        assert_eq!(select_threshold(&i, ThresholdCriterion::MaxAccuracy).unwrap(), 1.6);
    }
}
