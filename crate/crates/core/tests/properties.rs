//! Property tests for the metric, pairing and serialization invariants.

use std::collections::HashSet;

use proptest::prelude::*;

use ridgeline::evalkit::{eer, report, roc_curve, ScoreMode, ScoreSet};
use ridgeline::imaging::{rmse, ssim, GrayImage};
use ridgeline::model::{Checkpoint, Component, ParamSet, Provenance};
use ridgeline::probe::{imposter_target, make_pairs};
use ridgeline::seed::derive_seed;
use ridgeline::synthdata::{Manifest, SampleRecord, Split, MANIFEST_VERSION};

fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (4usize..60)
        .prop_flat_map(|n| (prop::collection::vec(0.0f64..=1.0, n), prop::collection::vec(any::<bool>(), n)))
        .prop_filter("both classes", |(_, l)| l.iter().any(|&x| x) && l.iter().any(|&x| !x))
}

fn image(side: usize) -> impl Strategy<Value = GrayImage> {
    prop::collection::vec(0.0f64..=1.0, side * side).prop_map(move |v| GrayImage::from_vec(side, side, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn roc_is_monotone_and_spans_the_unit_square((scores, labels) in scored()) {
        let set = ScoreSet::new(ScoreMode::ClassifierProb, scores, labels).unwrap();
        let (points, auc) = roc_curve(&set).unwrap();
        prop_assert_eq!((points[0].fpr, points[0].tpr), (0.0, 0.0));
        let last = points.last().unwrap();
        prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        for w in points.windows(2) {
            prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
            prop_assert!(w[1].threshold < w[0].threshold);
        }
        prop_assert!((0.0..=1.0).contains(&auc));
    }

    #[test]
    fn roc_and_eer_ignore_monotone_rescaling((scores, labels) in scored()) {
        let squashed: Vec<f64> = scores.iter().map(|s| s * s * s).collect();
        let a = ScoreSet::new(ScoreMode::ClassifierProb, scores, labels.clone()).unwrap();
        let b = ScoreSet::new(ScoreMode::ClassifierProb, squashed, labels).unwrap();
        let (pa, auc_a) = roc_curve(&a).unwrap();
        let (pb, auc_b) = roc_curve(&b).unwrap();
        prop_assert!((auc_a - auc_b).abs() < 1e-12);
        prop_assert_eq!(pa.len(), pb.len());
        for (x, y) in pa.iter().zip(&pb) {
            prop_assert_eq!((x.fpr, x.tpr), (y.fpr, y.tpr));
        }
        prop_assert!((eer(&a).unwrap().0 - eer(&b).unwrap().0).abs() < 1e-12);
    }

    #[test]
    fn flipping_labels_mirrors_auc((scores, labels) in scored()) {
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let a = ScoreSet::new(ScoreMode::ClassifierProb, scores.clone(), labels).unwrap();
        let b = ScoreSet::new(ScoreMode::ClassifierProb, scores, flipped).unwrap();
        prop_assert!((roc_curve(&a).unwrap().1 + roc_curve(&b).unwrap().1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn report_identities_hold_at_any_threshold((scores, labels) in scored(), t in 0.0f64..=1.0) {
        let set = ScoreSet::new(ScoreMode::ClassifierProb, scores, labels).unwrap();
        let r = report(&set, t).unwrap();
        prop_assert!(r.check_identities().is_ok());
        let c = r.counts;
        prop_assert_eq!(c.total(), set.len());
        let macro_f1 = (r.f1.genuine + r.f1.imposter) / 2.0;
        prop_assert!((r.f1.macro_avg - macro_f1).abs() < 1e-15);
    }

    #[test]
    fn ssim_and_rmse_are_symmetric(a in image(16), b in image(16)) {
        let (s1, s2) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        prop_assert!((s1 - s2).abs() <= 1e-12);
        prop_assert!(s1 <= 1.0);
        prop_assert_eq!(rmse(&a, &b).unwrap(), rmse(&b, &a).unwrap());
        prop_assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        prop_assert_eq!(rmse(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn checkpoints_round_trip_bit_exactly(values in prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 1..40), step in any::<u64>()) {
        let mut params = ParamSet::new();
        params.insert("projection.layer0.weight", vec![values.len()], values).unwrap();
        let ckpt = Checkpoint {
            component: Component::Projection,
            architecture: serde_json::json!({"dims": [1, 1]}),
            params,
            provenance: Provenance { config_digest: "d".into(), step, seed: 1, method: "enhance".into() },
        };
        let back = Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap();
        prop_assert_eq!(back, ckpt);
    }

    #[test]
    fn derived_seeds_separate_stages_and_keys(root in any::<u64>(), k in any::<u64>()) {
        prop_assert_ne!(derive_seed(root, "pretrain", &[k]), derive_seed(root, "probe", &[k]));
        prop_assert_ne!(derive_seed(root, "pretrain", &[k]), derive_seed(root, "pretrain", &[k.wrapping_add(1)]));
        prop_assert_eq!(derive_seed(root, "pretrain", &[k]), derive_seed(root, "pretrain", &[k]));
    }
}

fn manifest(identities: u64, impressions: u64) -> Manifest {
    let mut records = Vec::new();
    for id in 0..identities {
        for imp in 0..impressions {
            records.push(SampleRecord {
                identity_id: id,
                impression_id: imp,
                degraded_path: format!("images/{id:05}_{imp:02}_degraded.png"),
                target_path: format!("images/{id:05}_{imp:02}_target.png"),
                split: Split::Test,
            });
        }
    }
    Manifest {
        version: MANIFEST_VERSION,
        config_digest: "synthetic".into(),
        records,
        root: "/nonexistent".into(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pair_generator_meets_its_ratio(identities in 4u64..12, impressions in 2u64..6, ratio in 0.5f64..3.0, cap in 1usize..8, seed in any::<u64>()) {
        let m = manifest(identities, impressions);
        let set = make_pairs(&m, Split::Test, ratio, cap, seed).unwrap();
        let per_identity = ((impressions * (impressions - 1) / 2) as usize).min(cap);
        prop_assert_eq!(set.genuine_count(), per_identity * identities as usize);
        prop_assert_eq!(set.imposter_count(), imposter_target(set.genuine_count(), ratio));
        let identity = |p: &str| p[7..12].to_string();
        let mut seen = HashSet::new();
        for p in &set.pairs {
            prop_assert_ne!(&p.a, &p.b);
            prop_assert_eq!(p.is_genuine(), identity(&p.a) == identity(&p.b));
            let key = if p.a < p.b { (p.a.clone(), p.b.clone()) } else { (p.b.clone(), p.a.clone()) };
            prop_assert!(seen.insert(key), "duplicate pair");
        }
        prop_assert_eq!(make_pairs(&m, Split::Test, ratio, cap, seed).unwrap().pairs, set.pairs);
    }
}

#[test]
fn four_by_four_gives_twenty_four_and_seventy_two() {
    let set = make_pairs(&manifest(4, 4), Split::Test, 3.0, 50, 0).unwrap();
    assert_eq!((set.genuine_count(), set.imposter_count()), (24, 72));
}
