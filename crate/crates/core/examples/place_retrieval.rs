//! Top-1 cosine retrieval of reference places, globally and within a submap.

use mapmatch::retrieval::{compute_global_descriptor, RetrievalIndex};
use mapmatch::tensor::FeatureMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn place(seed: u64) -> mapmatch::Result<FeatureMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<f32> = (0..16).map(|_| rng.random_range(0.0..2.0)).collect();
    FeatureMap::from_fn(6, 8, 16, (320, 240), |y, x, c| base[c] * (1.0 + 0.05 * ((x + y) % 3) as f32))
}

fn main() -> mapmatch::Result<()> {
    let mut refs = Vec::new();
    for i in 0..8u64 {
        let submap = if i < 4 { "east" } else { "west" };
        refs.push((format!("ref_{i}"), submap.to_string(), compute_global_descriptor(&place(i)?, 3.0)?));
    }
    let index = RetrievalIndex::build(refs)?;
    println!("index: {} references of dimension {}", index.len(), index.dim());

    // a revisit of place 5 under a different exposure
    let q = place(5)?;
    let (h, w, c) = q.shape();
    let revisit = FeatureMap::from_fn(h, w, c, q.source_dims(), |y, x, ch| 1.3 * q.get(y, x, ch) + 0.01)?;
    let d = compute_global_descriptor(&revisit, 3.0)?;
    for submap in [None, Some("west"), Some("east")] {
        let hit = index.retrieve(&d, submap)?;
        println!("submap {submap:?}: {} (cosine {:.4})", hit.frame_id, hit.similarity);
    }
    Ok(())
}
