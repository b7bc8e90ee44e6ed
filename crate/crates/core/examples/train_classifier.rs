//! Trains the map-matching classifier on a small synthetic traverse and
//! saves the best checkpoint.

use mapmatch::classifier::TrainConfig;
use mapmatch::dataset::{load_checkpoint, save_checkpoint, validate_manifest};
use mapmatch::pipeline::{prepare_frames, train_classifier, PipelineConfig};
use mapmatch::region::EncodingMode;
use mapmatch::synth::{generate_traverse, SynthConfig};

fn main() -> mapmatch::Result<()> {
    let dir = tempfile::tempdir().map_err(|e| mapmatch::Error::InvalidConfig(e.to_string()))?;
    let synth = SynthConfig {
        train_frames: 300,
        val_frames: 60,
        test_frames: 10,
        ..SynthConfig::default()
    };
    let out = generate_traverse(&synth, dir.path())?;
    let pcfg = PipelineConfig::default();
    let train = prepare_frames(&validate_manifest(&out.split("train").unwrap().manifest)?, &pcfg)?;
    let val = prepare_frames(&validate_manifest(&out.split("val").unwrap().manifest)?, &pcfg)?;
    println!(
        "{} training candidates, {} validation candidates",
        train.iter().map(|f| f.candidates.len()).sum::<usize>(),
        val.iter().map(|f| f.candidates.len()).sum::<usize>()
    );

    let cfg = TrainConfig {
        max_epochs: 20,
        ..TrainConfig::default()
    };
    let (ck, outcome) = train_classifier(&train, &val, EncodingMode::Concat, pcfg.gem_p, &cfg)?;
    for r in &outcome.history {
        println!("epoch {:>2}  loss {:.4}  validation f1 {:.4}", r.epoch, r.train_loss, r.validation_f1);
    }
    println!("best epoch {} (f1 {:.4}), dims {:?}", outcome.best_epoch, outcome.best_validation_f1, ck.dims);

    let path = dir.path().join("model.json");
    save_checkpoint(&ck, &path)?;
    assert_eq!(load_checkpoint(&path)?, ck);
    println!("checkpoint round-trips ({} bytes)", std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0));
    Ok(())
}
