use std::path::Path;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mapmatch::classifier::ClassifierModel;
use mapmatch::dataset::{
    load_feature_map, save_feature_map, validate_manifest, AnnotationFile, Centroid, DetectionFile, ModelCheckpoint,
    PixelBox, ValidatedManifest,
};
use mapmatch::eval::{fuse, match_detections, metrics, pr_curve, EvalConfig, FlaggedDetection, MetricSet, SystemMode};
use mapmatch::pipeline::{evaluate_prepared, evaluate_system, prepare_frames, refine_frames, PipelineConfig, Scorer};
use mapmatch::region::EncodingMode;
use mapmatch::synth::{generate_traverse, SynthConfig};
use mapmatch::tensor::FeatureMap;
use mapmatch::Error;

fn small(seed: u64) -> SynthConfig {
    SynthConfig {
        places: 12,
        places_per_submap: 4,
        train_frames: 10,
        val_frames: 10,
        test_frames: 40,
        seed,
        ..SynthConfig::default()
    }
}

fn dataset(dir: &Path, cfg: &SynthConfig) -> (ValidatedManifest, ValidatedManifest) {
    let out = generate_traverse(cfg, dir).unwrap();
    let test = out.split("test").unwrap();
    (validate_manifest(&test.manifest).unwrap(), validate_manifest(&test.gt_manifest).unwrap())
}

fn dominates(a: &MetricSet, b: &MetricSet) -> bool {
    a.f1_at_tau >= b.f1_at_tau && a.auc >= b.auc && a.max_f1 >= b.max_f1 && a.precision_at_recall >= b.precision_at_recall
}

#[test]
fn detector_baseline_matches_a_direct_computation() {
    let dir = tempfile::tempdir().unwrap();
    let (vm, _) = dataset(dir.path(), &small(1));
    let m = vm.manifest();
    let (w, h) = m.image_dims;
    let mut flagged = Vec::new();
    let mut total = 0;
    for q in &m.query_frames {
        let dets = DetectionFile::load(vm.resolve(&q.detections_path)).unwrap();
        let ann = AnnotationFile::load(vm.resolve(q.annotations_path.as_ref().unwrap())).unwrap();
        let centroids = ann.frame(&q.frame_id).unwrap();
        total += centroids.len();
        let kept: Vec<(usize, PixelBox, f64)> = dets
            .frame(&q.frame_id)
            .unwrap()
            .iter()
            .enumerate()
            .filter(|(_, d)| d.detector_score >= 0.1 && d.bbox.area() >= 0.0008 * f64::from(w * h))
            .map(|(i, d)| (i, d.bbox, d.detector_score))
            .collect();
        let pairs: Vec<(PixelBox, f64)> = kept.iter().map(|&(_, b, s)| (b, s)).collect();
        let outcome = match_detections(&pairs, centroids).unwrap();
        for (&(i, _, s), tp) in kept.iter().zip(outcome.true_positive) {
            flagged.push(FlaggedDetection {
                frame_id: q.frame_id.clone(),
                index: i,
                score: s,
                true_positive: tp,
            });
        }
    }
    let curve = pr_curve(&flagged, total).unwrap();
    let expected = metrics(&curve, &EvalConfig::default());
    let report =
        evaluate_system(&vm, None, SystemMode::YolopOnly, &PipelineConfig::default(), &EvalConfig::default()).unwrap();
    let got = report.scorer("yolop_only").unwrap();
    assert_eq!(got.metrics, expected);
    assert_eq!(got.curve, curve);
    assert_eq!(report.total_gt, total);
}

#[test]
fn perfect_classifier_dominates_and_refines_to_labels() {
    let dir = tempfile::tempdir().unwrap();
    let (_, gt) = dataset(dir.path(), &small(2));
    let frames = prepare_frames(&gt, &PipelineConfig::default()).unwrap();
    let ecfg = EvalConfig::default();
    let (oracle, _) = evaluate_prepared(&frames, &Scorer::Oracle, &ecfg).unwrap();
    let (detector, _) = evaluate_prepared(&frames, &Scorer::Detector, &ecfg).unwrap();
    assert!(dominates(&oracle, &detector), "{oracle:?} vs {detector:?}");

    let refined = refine_frames(&frames, &Scorer::Oracle, 0.5).unwrap();
    let mut checked = 0;
    for f in &frames {
        let dets = refined.frame(&f.frame_id).unwrap();
        for c in &f.candidates {
            assert_eq!(dets[c.candidate.index].kept, c.candidate.label);
            checked += 1;
        }
    }
    assert!(checked > 100);
}

#[test]
fn query_only_ignores_the_map() {
    let dir = tempfile::tempdir().unwrap();
    let (_, gt) = dataset(dir.path(), &small(3));
    let pcfg = PipelineConfig::default();
    let model = ClassifierModel::init(32, 16, 8, 0.0, 5).unwrap();
    let scorer = Scorer::Classifier {
        model: &model,
        encoding: EncodingMode::QueryOnly,
        fuse: true,
    };
    let score_all = || -> Vec<f64> {
        prepare_frames(&gt, &pcfg)
            .unwrap()
            .iter()
            .flat_map(|f| scorer.score_frame(f).unwrap())
            .map(|s| s.final_score)
            .collect()
    };
    let before = score_all();

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for r in &gt.manifest().reference_frames {
        let path = gt.resolve(&r.feature_path);
        let fm = load_feature_map(&path).unwrap();
        let (h, w, c) = fm.shape();
        let noise = FeatureMap::from_fn(h, w, c, fm.source_dims(), |_, _, _| rng.random_range(0.0..5.0)).unwrap();
        save_feature_map(&noise, &path).unwrap();
    }
    assert_eq!(score_all(), before);
}

#[test]
fn mismatched_checkpoint_mode_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (vm, _) = dataset(dir.path(), &small(4));
    let ck = ModelCheckpoint::new(ClassifierModel::init(64, 8, 4, 0.0, 0).unwrap(), EncodingMode::Concat, 3.0);
    let pcfg = PipelineConfig::default();
    let ecfg = EvalConfig::default();
    for mode in [SystemMode::Disparity, SystemMode::QueryOnly] {
        assert!(matches!(evaluate_system(&vm, Some(&ck), mode, &pcfg, &ecfg), Err(Error::ModeMismatch(_))), "{mode}");
    }
    assert!(matches!(evaluate_system(&vm, None, SystemMode::Ours, &pcfg, &ecfg), Err(Error::ModeMismatch(_))));
    assert!(evaluate_system(&vm, Some(&ck), SystemMode::Ours, &pcfg, &ecfg).is_ok());
}

#[test]
fn distractor_disparity_stays_within_noise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        gain_spread: 0.0,
        ..small(5)
    };
    let (_, gt) = dataset(dir.path(), &cfg);
    let frames = prepare_frames(&gt, &PipelineConfig::default()).unwrap();
    let mut scaled = Vec::new();
    for c in frames.iter().flat_map(|f| &f.candidates) {
        if c.candidate.label == Some(false) {
            let mean_abs: f64 = c.pooled_query.iter().zip(&c.pooled_map).map(|(q, m)| (q - m).abs()).sum::<f64>()
                / c.pooled_query.len() as f64;
            scaled.push(mean_abs * (c.grid_box.cells() as f64).sqrt());
        }
    }
    assert!(scaled.len() > 50);
    let mean = scaled.iter().sum::<f64>() / scaled.len() as f64;
    assert!(mean <= 3.0 * cfg.noise_sigma, "mean scaled disparity {mean}");
}

type ScoredFrame = (Vec<(PixelBox, f64)>, Vec<Centroid>);

fn random_frames(seed: u64, frames: usize) -> Vec<ScoredFrame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..frames)
        .map(|_| {
            let boxes = (0..rng.random_range(0..8))
                .map(|_| {
                    let (x, y) = (rng.random_range(0.0..80.0), rng.random_range(0.0..80.0));
                    let d: f64 = rng.random_range(0.0..4.0);
                    (PixelBox::new(x, y, x + rng.random_range(5.0..30.0), y + rng.random_range(5.0..30.0)), d)
                })
                .collect();
            let cents = (0..rng.random_range(1..6))
                .map(|_| Centroid::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)))
                .collect();
            (boxes, cents)
        })
        .collect()
}

fn curve_counts(frames: &[ScoredFrame], transform: fn(f64) -> f64) -> Vec<(usize, usize)> {
    let mut flagged = Vec::new();
    let mut total = 0;
    for (fi, (boxes, cents)) in frames.iter().enumerate() {
        let scored: Vec<(PixelBox, f64)> = boxes.iter().map(|&(b, d)| (b, transform(d))).collect();
        let outcome = match_detections(&scored, cents).unwrap();
        total += cents.len();
        for (i, ((_, s), tp)) in scored.iter().zip(outcome.true_positive).enumerate() {
            flagged.push(FlaggedDetection {
                frame_id: format!("f{fi:03}"),
                index: i,
                score: *s,
                true_positive: tp,
            });
        }
    }
    pr_curve(&flagged, total).unwrap().points.iter().map(|p| (p.tp, p.fp)).collect()
}

proptest! {
    #[test]
    fn l2_ranking_is_invariant_to_the_squashing(seed in any::<u64>(), n in 1usize..6) {
        let frames = random_frames(seed, n);
        prop_assert_eq!(curve_counts(&frames, |d| d), curve_counts(&frames, |d| d / (1.0 + d)));
    }

    #[test]
    fn fusion_preserves_classifier_order(a in 0.0f64..=1.0, b in 0.0f64..=1.0, sd in 0.0f64..=1.0) {
        let (fa, fb) = (fuse(a, sd).unwrap(), fuse(b, sd).unwrap());
        prop_assert_eq!(a.partial_cmp(&b), fa.partial_cmp(&fb));
    }
}
