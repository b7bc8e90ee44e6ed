//! Writes a feature map and its global descriptor in the binary container
//! and reads them back.

use mapmatch::dataset::{load_descriptor, load_feature_map, save_descriptor, save_feature_map, HEADER_LEN};
use mapmatch::retrieval::compute_global_descriptor;
use mapmatch::tensor::FeatureMap;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let fm = FeatureMap::from_fn(12, 16, 32, (640, 480), |y, x, c| ((y + 2 * x + 3 * c) % 7) as f32 / 7.0)?;
    let map_path = dir.path().join("frame.bin");
    save_feature_map(&fm, &map_path)?;
    let size = std::fs::metadata(&map_path)?.len();
    println!("{}: {size} bytes ({HEADER_LEN} header + {} f32)", map_path.display(), fm.values().len());

    let back = load_feature_map(&map_path)?;
    println!("shape {:?}, source {:?}, identical: {}", back.shape(), back.source_dims(), back == fm);

    let desc = compute_global_descriptor(&fm, 3.0)?;
    let desc_path = dir.path().join("frame.desc.bin");
    save_descriptor(&desc, fm.source_dims(), &desc_path)?;
    let stored = load_descriptor(&desc_path)?;
    let err = desc.values().iter().zip(stored.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("descriptor length {}, max f32 rounding error {err:.2e}", stored.len());
    Ok(())
}
