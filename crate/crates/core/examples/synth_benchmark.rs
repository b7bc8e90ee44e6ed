//! End-to-end benchmark on a synthetic traverse: trains the concat,
//! disparity and query-only classifiers and compares every system on the
//! test split.
//!
//! `cargo run --release --example synth_benchmark -- [seed]`

use mapmatch::classifier::TrainConfig;
use mapmatch::dataset::validate_manifest;
use mapmatch::eval::{EvalConfig, SystemMode};
use mapmatch::pipeline::{evaluate_system, prepare_frames, train_classifier, PipelineConfig};
use mapmatch::synth::{generate_traverse, SynthConfig};

fn main() -> mapmatch::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let dir = tempfile::tempdir().map_err(|e| mapmatch::Error::InvalidConfig(e.to_string()))?;
    let out = generate_traverse(&SynthConfig { seed, ..SynthConfig::default() }, dir.path())?;
    let pcfg = PipelineConfig::default();
    let ecfg = EvalConfig::default();
    let split = |name: &str| validate_manifest(&out.split(name).unwrap().manifest);
    let train = prepare_frames(&split("train")?, &pcfg)?;
    let val = prepare_frames(&split("val")?, &pcfg)?;
    let test = split("test")?;

    println!("{:<12} {:>9} {:>7} {:>7} {:>9}", "system", "f1@tau", "auc", "max_f1", "p@95%r");
    let row = |name: &str, m: &mapmatch::eval::MetricSet| {
        println!(
            "{name:<12} {:>9.4} {:>7.4} {:>7.4} {:>9.4}",
            m.f1_at_tau, m.auc, m.max_f1, m.precision_at_recall
        )
    };
    for mode in [SystemMode::Ours, SystemMode::Disparity, SystemMode::QueryOnly] {
        let enc = mode.encoding().unwrap();
        let cfg = TrainConfig { seed, ..TrainConfig::default() };
        let (ck, _) = train_classifier(&train, &val, enc, pcfg.gem_p, &cfg)?;
        let report = evaluate_system(&test, Some(&ck), mode, &pcfg, &ecfg)?;
        row(mode.name(), &report.primary().metrics);
    }
    let report = evaluate_system(&test, None, SystemMode::L2, &pcfg, &ecfg)?;
    for s in &report.scorers {
        row(&s.name, &s.metrics);
    }
    Ok(())
}
