//! Scores a traverse's detections with a trained model and writes the
//! refined detection file with classifier, fused score and keep decision.

use mapmatch::classifier::TrainConfig;
use mapmatch::dataset::{validate_manifest, DetectionFile};
use mapmatch::pipeline::{prepare_frames, refine_frames, train_classifier, PipelineConfig, Scorer};
use mapmatch::region::EncodingMode;
use mapmatch::synth::{generate_traverse, SynthConfig};

fn main() -> mapmatch::Result<()> {
    let dir = tempfile::tempdir().map_err(|e| mapmatch::Error::InvalidConfig(e.to_string()))?;
    let synth = SynthConfig {
        train_frames: 200,
        val_frames: 40,
        test_frames: 5,
        ..SynthConfig::default()
    };
    let out = generate_traverse(&synth, dir.path())?;
    let pcfg = PipelineConfig::default();
    let frames = |name: &str| prepare_frames(&validate_manifest(&out.split(name).unwrap().manifest)?, &pcfg);
    let cfg = TrainConfig {
        max_epochs: 10,
        ..TrainConfig::default()
    };
    let (ck, _) = train_classifier(&frames("train")?, &frames("val")?, EncodingMode::Concat, pcfg.gem_p, &cfg)?;

    let test = frames("test")?;
    let scorer = Scorer::Classifier {
        model: &ck.model,
        encoding: ck.encoding_mode,
        fuse: true,
    };
    let refined = refine_frames(&test, &scorer, cfg.operating_threshold)?;
    let path = dir.path().join("refined.json");
    refined.save(&path)?;
    for (frame, dets) in &DetectionFile::load(&path)?.frames {
        println!("{frame}");
        for d in dets {
            println!(
                "  box {:>6.1?}  detector {:.3}  classifier {:>5}  fused {:>5}  kept {}",
                <[f64; 4]>::from(d.bbox),
                d.detector_score,
                d.classifier_score.map_or("-".into(), |v| format!("{v:.3}")),
                d.fused_score.map_or("-".into(), |v| format!("{v:.3}")),
                d.kept == Some(true)
            );
        }
    }
    Ok(())
}
