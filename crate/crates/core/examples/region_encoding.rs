//! From pixel detections to classifier inputs: filtering, rescaling to the
//! feature grid, labelling and the three encodings.

use mapmatch::dataset::{Centroid, Detection, PixelBox};
use mapmatch::region::{
    build_encoding, extract_region_pair, filter_candidates, label_candidates, rescale_box, CandidateFilter, EncodingMode,
};
use mapmatch::tensor::{FeatureMap, DEFAULT_GEM_EPS};

fn main() -> mapmatch::Result<()> {
    let image = (640, 480);
    let map = FeatureMap::from_fn(12, 16, 4, image, |y, x, c| 0.5 + 0.02 * (x + y + c) as f32)?;
    // the query matches the map except for a bright object at cells (4..7, 3..5)
    let query = FeatureMap::from_fn(12, 16, 4, image, |y, x, c| {
        let obj = (4..7).contains(&x) && (3..5).contains(&y);
        map.get(y, x, c) + if obj { 0.8 } else { 0.0 }
    })?;

    let dets = vec![
        Detection::new(PixelBox::new(160.0, 120.0, 280.0, 200.0), 0.62),
        Detection::new(PixelBox::new(400.0, 300.0, 520.0, 390.0), 0.48),
        Detection::new(PixelBox::new(10.0, 10.0, 18.0, 16.0), 0.90),
        Detection::new(PixelBox::new(300.0, 50.0, 380.0, 120.0), 0.05),
    ];
    let mut cands = filter_candidates(&dets, image, &CandidateFilter::default());
    println!("{} of {} detections survive the filter", cands.len(), dets.len());
    label_candidates(&mut cands, &[Centroid::new(220.0, 160.0)]);

    for c in &cands {
        let grid = rescale_box(&c.pixel_box, image, (16, 12));
        let (q, m) = extract_region_pair(&query, &map, grid)?;
        println!("detection {} label {:?} grid {grid:?}", c.index, c.label);
        for mode in [EncodingMode::Concat, EncodingMode::Disparity, EncodingMode::QueryOnly] {
            let e = build_encoding(&q, &m, mode, 3.0, DEFAULT_GEM_EPS)?;
            println!("  {:<10} [{}]", mode.to_string(), e.values.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(", "));
        }
    }
    Ok(())
}
