//! Matching scored boxes against centroids and summarising the PR curve.

use mapmatch::dataset::{Centroid, PixelBox};
use mapmatch::eval::{match_detections, metrics, pr_curve, EvalConfig, FlaggedDetection};

fn main() -> mapmatch::Result<()> {
    let frames = [
        (
            vec![
                (PixelBox::new(0.0, 0.0, 50.0, 50.0), 0.9),
                (PixelBox::new(10.0, 10.0, 60.0, 60.0), 0.8),
                (PixelBox::new(200.0, 200.0, 240.0, 240.0), 0.7),
            ],
            vec![Centroid::new(25.0, 25.0)],
        ),
        (
            vec![(PixelBox::new(100.0, 100.0, 150.0, 150.0), 0.6), (PixelBox::new(0.0, 0.0, 30.0, 30.0), 0.3)],
            vec![Centroid::new(120.0, 130.0), Centroid::new(15.0, 15.0), Centroid::new(300.0, 300.0)],
        ),
    ];
    let mut flagged = Vec::new();
    let mut total = 0;
    for (f, (boxes, cents)) in frames.iter().enumerate() {
        let m = match_detections(boxes, cents)?;
        println!("frame {f}: tp {:?}, false negatives {}", m.true_positive, m.false_negatives);
        total += cents.len();
        for (i, (&(_, s), tp)) in boxes.iter().zip(&m.true_positive).enumerate() {
            flagged.push(FlaggedDetection {
                frame_id: format!("frame_{f}"),
                index: i,
                score: s,
                true_positive: *tp,
            });
        }
    }
    let curve = pr_curve(&flagged, total)?;
    print!("{}", curve.to_csv());
    let cfg = EvalConfig {
        operating_threshold: 0.5,
        target_recall: 0.75,
    };
    let m = metrics(&curve, &cfg);
    println!(
        "f1@{} {:.3}  auc {:.3}  max f1 {:.3}  p@{}r {:.3} (reached: {})",
        cfg.operating_threshold, m.f1_at_tau, m.auc, m.max_f1, cfg.target_recall, m.precision_at_recall, m.target_recall_reached
    );
    Ok(())
}
