//! How much the classifier depends on retrieving the right map: a growing
//! fraction of test queries is pinned to a reference from another submap.

use mapmatch::classifier::TrainConfig;
use mapmatch::dataset::validate_manifest;
use mapmatch::eval::{EvalConfig, SystemMode};
use mapmatch::pipeline::{evaluate_system, prepare_frames, train_classifier, PipelineConfig};
use mapmatch::region::EncodingMode;
use mapmatch::synth::{corrupt_retrieval, generate_traverse, SynthConfig};

fn main() -> mapmatch::Result<()> {
    let dir = tempfile::tempdir().map_err(|e| mapmatch::Error::InvalidConfig(e.to_string()))?;
    let synth = SynthConfig {
        train_frames: 400,
        ..SynthConfig::default()
    };
    let out = generate_traverse(&synth, dir.path())?;
    let pcfg = PipelineConfig::default();
    let ecfg = EvalConfig::default();
    let split = |name: &str| validate_manifest(&out.split(name).unwrap().manifest);
    let train = prepare_frames(&split("train")?, &pcfg)?;
    let val = prepare_frames(&split("val")?, &pcfg)?;
    let (ck, _) = train_classifier(&train, &val, EncodingMode::Concat, pcfg.gem_p, &TrainConfig::default())?;

    let test = split("test")?;
    for fraction in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let corrupted = corrupt_retrieval(test.manifest(), fraction, 7)?;
        let path = dir.path().join(format!("test_corrupt_{}.json", (fraction * 100.0) as u32));
        corrupted.save(&path)?;
        let report = evaluate_system(&validate_manifest(&path)?, Some(&ck), SystemMode::Ours, &pcfg, &ecfg)?;
        let m = &report.primary().metrics;
        let base = &report.scorer("yolop_only").unwrap().metrics;
        println!(
            "wrong map for {:>3.0}% of queries: p@95%r {:.4}  f1@tau {:.4}  (detector alone {:.4})",
            fraction * 100.0,
            m.precision_at_recall,
            m.f1_at_tau,
            base.precision_at_recall
        );
    }
    Ok(())
}
