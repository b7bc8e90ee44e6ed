//! File contract with the external feature exporter: containers are written
//! byte by byte and JSON is written as untyped values, the way a foreign
//! producer would, then read back through the library.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use mapmatch::dataset::{
    load_descriptor, load_feature_map, validate_manifest, AnnotationFile, DetectionFile, ManifestIssue,
};
use mapmatch::retrieval::compute_global_descriptor;
use mapmatch::Error;

const H: usize = 6;
const W: usize = 8;
const C: usize = 16;
const IMAGE: (u32, u32) = (320, 240);

fn container(h: usize, w: usize, c: usize, values: &[f32]) -> Vec<u8> {
    let mut b = b"MMFT".to_vec();
    b.push(1);
    for d in [h as u32, w as u32, c as u32, IMAGE.0, IMAGE.1] {
        b.extend_from_slice(&d.to_le_bytes());
    }
    for v in values {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b
}

/// Whole-map GeM with p = 3 followed by L2 normalisation, as the exporter computes it.
fn exporter_descriptor(values: &[f32]) -> Vec<f32> {
    let cells = (H * W) as f64;
    let pooled: Vec<f64> = (0..C)
        .map(|c| {
            let s: f64 = values.iter().skip(c).step_by(C).map(|&v| f64::from(v).max(1e-6).powi(3)).sum();
            (s / cells).cbrt()
        })
        .collect();
    let n = pooled.iter().map(|v| v * v).sum::<f64>().sqrt();
    pooled.iter().map(|v| (v / n) as f32).collect()
}

struct Export {
    maps: Vec<Vec<f32>>,
    scores: Vec<Vec<f64>>,
}

/// Simulates exporting a folder of ten images: four references and six queries.
fn export(dir: &Path, rng: &mut ChaCha8Rng) -> Export {
    std::fs::create_dir_all(dir.join("features")).unwrap();
    let mut maps = Vec::new();
    let mut refs = Vec::new();
    let mut queries = Vec::new();
    let mut dets = serde_json::Map::new();
    let mut anns = serde_json::Map::new();
    let mut scores = Vec::new();
    for i in 0..10 {
        let values: Vec<f32> = (0..H * W * C).map(|_| rng.random_range(0.0..3.0)).collect();
        let id = if i < 4 { format!("ref_{i}") } else { format!("q_{i}") };
        let fpath = format!("features/{id}.bin");
        let dpath = format!("features/{id}.desc.bin");
        std::fs::write(dir.join(&fpath), container(H, W, C, &values)).unwrap();
        std::fs::write(dir.join(&dpath), container(1, 1, C, &exporter_descriptor(&values))).unwrap();
        let submap = if i % 2 == 0 { "north" } else { "south" };
        if i < 4 {
            refs.push(json!({"frame_id": id, "feature_path": fpath, "descriptor_path": dpath, "submap_id": submap}));
        } else {
            // the exporter drops anything under 0.1
            let s: Vec<f64> = (0..4).map(|_| rng.random_range(0.1..1.0)).collect();
            let boxes: Vec<_> = s
                .iter()
                .map(|&sc| {
                    let x = rng.random_range(0.0..250.0);
                    let y = rng.random_range(0.0..180.0);
                    json!({"box": [x, y, x + 60.0, y + 50.0], "detector_score": sc})
                })
                .collect();
            dets.insert(id.clone(), json!(boxes));
            anns.insert(id.clone(), json!([{"x_px": 100.0, "y_px": 80.0}]));
            queries.push(json!({
                "frame_id": id, "feature_path": fpath, "descriptor_path": dpath, "submap_id": submap,
                "detections_path": "detections.json", "annotations_path": "annotations.json"
            }));
            scores.push(s);
        }
        maps.push(values);
    }
    std::fs::write(dir.join("detections.json"), json!({"frames": dets}).to_string()).unwrap();
    std::fs::write(dir.join("annotations.json"), json!({"frames": anns}).to_string()).unwrap();
    let manifest = json!({
        "image_dims": [IMAGE.0, IMAGE.1],
        "metadata": {"exporter": "test"},
        "reference_frames": refs,
        "query_frames": queries,
    });
    std::fs::write(dir.join("manifest.json"), manifest.to_string()).unwrap();
    Export { maps, scores }
}

#[test]
fn exported_folder_validates_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let ex = export(dir.path(), &mut rng);
    let vm = validate_manifest(dir.path().join("manifest.json")).unwrap();
    assert_eq!(vm.feature_shape(), (H, W, C));
    let m = vm.manifest();
    assert_eq!((m.reference_frames.len(), m.query_frames.len()), (4, 6));

    let frames = m.reference_frames.iter().map(|r| &r.feature_path).chain(m.query_frames.iter().map(|q| &q.feature_path));
    let descs = m
        .reference_frames
        .iter()
        .map(|r| r.descriptor_path.as_ref().unwrap())
        .chain(m.query_frames.iter().map(|q| q.descriptor_path.as_ref().unwrap()));
    for ((fpath, dpath), values) in frames.zip(descs).zip(&ex.maps) {
        let fm = load_feature_map(vm.resolve(fpath)).unwrap();
        assert_eq!(fm.shape(), (H, W, C));
        assert_eq!(fm.source_dims(), IMAGE);
        assert_eq!(fm.values(), &values[..]);
        assert_eq!(fm.get(2, 3, 5), values[(2 * W + 3) * C + 5]);

        let stored = load_descriptor(vm.resolve(dpath)).unwrap();
        let ours = compute_global_descriptor(&fm, 3.0).unwrap();
        for (a, b) in stored.values().iter().zip(ours.values()) {
            assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
    }

    let dets = DetectionFile::load(dir.path().join("detections.json")).unwrap();
    for (q, s) in m.query_frames.iter().zip(&ex.scores) {
        let got: Vec<f64> = dets.frame(&q.frame_id).unwrap().iter().map(|d| d.detector_score).collect();
        assert_eq!(&got, s);
        assert!(got.iter().all(|&v| v >= 0.1));
    }
    let anns = AnnotationFile::load(dir.path().join("annotations.json")).unwrap();
    assert_eq!(anns.frame("q_4").unwrap()[0].x_px, 100.0);
}

#[test]
fn broken_exports_are_reported_per_frame() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    export(dir.path(), &mut rng);
    // wrong channel count on one query, truncated payload on another
    std::fs::write(dir.path().join("features/q_5.bin"), container(H, W, C + 1, &vec![0.5; H * W * (C + 1)])).unwrap();
    let mut cut = std::fs::read(dir.path().join("features/q_6.bin")).unwrap();
    cut.truncate(cut.len() - 3);
    std::fs::write(dir.path().join("features/q_6.bin"), cut).unwrap();
    std::fs::remove_file(dir.path().join("features/ref_1.desc.bin")).unwrap();

    let Err(Error::Manifest(report)) = validate_manifest(dir.path().join("manifest.json")) else {
        panic!("broken export validated");
    };
    let frames: Vec<&str> = report
        .issues
        .iter()
        .filter_map(|i| match i {
            ManifestIssue::ShapeMismatch { frame_id, .. }
            | ManifestIssue::Unparseable { frame_id, .. }
            | ManifestIssue::MissingFile { frame_id, .. } => Some(frame_id.as_str()),
            _ => None,
        })
        .collect();
    for f in ["q_5", "q_6", "ref_1"] {
        assert!(frames.contains(&f), "{f} not reported in {report}");
    }
}

#[test]
fn container_header_is_checked() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.bin");
    let good = container(1, 1, 2, &[1.0, 2.0]);
    assert_eq!(good.len(), 25 + 8);

    let mut bad = good.clone();
    bad[0] = b'X';
    std::fs::write(&p, &bad).unwrap();
    assert!(matches!(load_feature_map(&p), Err(Error::BadMagic(_))));

    let mut bad = good.clone();
    bad[4] = 2;
    std::fs::write(&p, &bad).unwrap();
    assert!(matches!(load_feature_map(&p), Err(Error::UnsupportedVersion { version: 2, .. })));

    let mut bad = good.clone();
    bad.push(0);
    std::fs::write(&p, &bad).unwrap();
    assert!(matches!(load_feature_map(&p), Err(Error::TrailingBytes(_))));

    std::fs::write(&p, container(1, 1, 2, &[1.0, f32::NAN])).unwrap();
    assert!(matches!(load_feature_map(&p), Err(Error::NanPayload(_))));

    std::fs::write(&p, container(2, 1, 2, &[1.0; 4])).unwrap();
    assert!(load_descriptor(&p).is_err());
}
