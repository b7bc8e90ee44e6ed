//! GeM pooling of a feature-map region; `p = 1` is the mean and a large `p`
//! approaches the max.

use mapmatch::tensor::{gem_pool, FeatureMap, GridBox, DEFAULT_GEM_EPS};

fn main() -> mapmatch::Result<()> {
    let fm = FeatureMap::from_fn(4, 6, 3, (120, 80), |y, x, c| (y * 6 + x) as f32 * 0.1 + c as f32)?;
    let region = fm.region(GridBox::new(1, 1, 4, 3))?;
    println!("region of {} cells, {} channels", region.cells(), region.channels());
    for p in [1.0, 3.0, 10.0, 100.0] {
        let d = gem_pool(&region, p, DEFAULT_GEM_EPS)?;
        println!("p = {p:>5}: {:.4?}", d.values());
    }
    let max: Vec<f32> = (0..3)
        .map(|c| region.iter_cells().map(|cell| cell[c]).fold(f32::MIN, f32::max))
        .collect();
    println!("max      : {max:.4?}");
    Ok(())
}
