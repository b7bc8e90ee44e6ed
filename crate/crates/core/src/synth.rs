//! Seeded synthetic traverses in the on-disk dataset formats.
//!
//! Each place has a reference feature map: a smooth positive field plus a few
//! static vehicle-like objects. A query frame of a place is the reference
//! under a multiplicative per-channel gain, with additive noise and dynamic
//! vehicle signatures at the ground-truth boxes. Candidates are every GT box
//! plus distractors, some over the static objects (map-consistent, vehicle
//! looking) and some over plain background.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    save_descriptor, save_feature_map, validate_manifest, AnnotationFile, Centroid, Detection, DetectionFile,
    PixelBox, QueryFrame, ReferenceFrame, TraverseManifest,
};
use crate::error::{Error, Result};
use crate::tensor::{DescriptorVector, FeatureMap};

/// A unimodal score distribution on `[0, 1]`, parameterized as a Beta by
/// mean and concentration (`alpha + beta`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreDistribution {
    pub mean: f64,
    pub concentration: f64,
}

impl ScoreDistribution {
    fn beta(&self) -> Result<Beta<f64>> {
        Beta::new(self.mean * self.concentration, (1.0 - self.mean) * self.concentration)
            .map_err(|e| Error::InvalidConfig(format!("score distribution {self:?}: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// `(height_f, width_f, channels)`.
    pub grid: (usize, usize, usize),
    /// `(width_px, height_px)`.
    pub image_dims: (u32, u32),
    pub places: usize,
    pub places_per_submap: usize,
    pub train_frames: usize,
    pub val_frames: usize,
    pub test_frames: usize,
    /// Inclusive range.
    pub vehicles_per_frame: (usize, usize),
    /// Inclusive range.
    pub distractors_per_frame: (usize, usize),
    /// Inclusive range.
    pub static_objects_per_place: (usize, usize),
    /// Probability that a distractor is placed over a static object.
    pub static_distractor_fraction: f64,
    /// Additive per-cell noise standard deviation.
    pub noise_sigma: f64,
    /// Log-scale spread of the per-frame gain; half is shared across
    /// channels, half is per channel.
    pub gain_spread: f64,
    pub signature_strength: f64,
    /// Box width range in pixels; heights are 0.6 to 0.9 of the width.
    pub box_width_px: (f64, f64),
    /// Side of the coarse noise grid the smooth field is upsampled from.
    pub field_coarse_cells: usize,
    pub tp_scores: ScoreDistribution,
    pub fp_scores: ScoreDistribution,
    /// Detector scores below this are resampled, as an exporter floor would drop them.
    pub score_floor: f64,
    pub descriptor_dim: usize,
    /// Noise added to a query's place descriptor before normalization.
    pub retrieval_perturbation: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            grid: (12, 16, 32),
            image_dims: (640, 480),
            places: 120,
            places_per_submap: 10,
            train_frames: 1000,
            val_frames: 100,
            test_frames: 100,
            vehicles_per_frame: (1, 4),
            distractors_per_frame: (2, 6),
            static_objects_per_place: (2, 4),
            static_distractor_fraction: 0.5,
            noise_sigma: 0.1,
            gain_spread: 0.5,
            signature_strength: 0.6,
            box_width_px: (60.0, 150.0),
            field_coarse_cells: 4,
            tp_scores: ScoreDistribution {
                mean: 0.7,
                concentration: 8.0,
            },
            fp_scores: ScoreDistribution {
                mean: 0.35,
                concentration: 8.0,
            },
            score_floor: 0.1,
            descriptor_dim: 64,
            retrieval_perturbation: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let (h, w, c) = self.grid;
        if h == 0 || w == 0 || c == 0 || self.image_dims.0 == 0 || self.image_dims.1 == 0 {
            return bad(format!("grid {:?} and image dims {:?} must be positive", self.grid, self.image_dims));
        }
        if self.places == 0 || self.places_per_submap == 0 {
            return bad("places and places_per_submap must be positive".into());
        }
        for (name, (lo, hi)) in [
            ("vehicles_per_frame", self.vehicles_per_frame),
            ("distractors_per_frame", self.distractors_per_frame),
            ("static_objects_per_place", self.static_objects_per_place),
        ] {
            if lo > hi {
                return bad(format!("{name} range {lo}..={hi} is empty"));
            }
        }
        if !(0.0..=1.0).contains(&self.static_distractor_fraction) {
            return bad("static_distractor_fraction must be in [0, 1]".into());
        }
        for (name, v) in [
            ("noise_sigma", self.noise_sigma),
            ("gain_spread", self.gain_spread),
            ("signature_strength", self.signature_strength),
            ("retrieval_perturbation", self.retrieval_perturbation),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        let (bw0, bw1) = self.box_width_px;
        let max_w = f64::from(self.image_dims.0).min(f64::from(self.image_dims.1) / 0.9) / 2.0;
        if !(bw0 >= 1.0 && bw0 <= bw1 && bw1 <= max_w) {
            return bad(format!("box_width_px {:?} must lie in [1, {max_w}]", self.box_width_px));
        }
        if self.field_coarse_cells < 2 {
            return bad("field_coarse_cells must be at least 2".into());
        }
        if !(0.0..1.0).contains(&self.score_floor) {
            return bad("score_floor must be in [0, 1)".into());
        }
        for d in [self.tp_scores, self.fp_scores] {
            if !(d.mean > self.score_floor && d.mean < 1.0 && d.concentration > 0.0) {
                return bad(format!("score distribution {d:?} needs mean in (score_floor, 1) and concentration > 0"));
            }
            d.beta()?;
        }
        if self.descriptor_dim == 0 {
            return bad("descriptor_dim must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitOutput {
    pub name: String,
    /// Manifest whose queries go through retrieval.
    pub manifest: PathBuf,
    /// Same queries pinned to their true reference.
    pub gt_manifest: PathBuf,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthOutput {
    pub root: PathBuf,
    pub splits: Vec<SplitOutput>,
}

impl SynthOutput {
    pub fn split(&self, name: &str) -> Option<&SplitOutput> {
        self.splits.iter().find(|s| s.name == name)
    }
}

struct StaticObject {
    bbox: PixelBox,
}

struct Place {
    frame_id: String,
    submap_id: String,
    map: FeatureMap,
    descriptor: Vec<f64>,
    statics: Vec<StaticObject>,
}

struct World<'a> {
    cfg: &'a SynthConfig,
    /// Shared vehicle appearance direction, one weight per channel.
    pattern: Vec<f64>,
}

impl World<'_> {
    fn sample_box(&self, rng: &mut ChaCha8Rng) -> PixelBox {
        let (iw, ih) = (f64::from(self.cfg.image_dims.0), f64::from(self.cfg.image_dims.1));
        let (w0, w1) = self.cfg.box_width_px;
        let w = if w1 > w0 { rng.random_range(w0..=w1) } else { w0 };
        let h = w * rng.random_range(0.6..=0.9);
        let x = rng.random_range(0.0..=(iw - w));
        let y = rng.random_range(0.0..=(ih - h));
        PixelBox::new(x, y, x + w, y + h)
    }

    /// Rejection-samples a box at least `margin` pixels from every box in
    /// `avoid`; gives up after a bounded number of tries.
    fn place_box(&self, rng: &mut ChaCha8Rng, avoid: &[PixelBox], margin: f64) -> Option<PixelBox> {
        (0..200)
            .map(|_| self.sample_box(rng))
            .find(|b| avoid.iter().all(|a| !overlaps(b, a, margin)))
    }

    /// Instance-level variation of the shared vehicle pattern.
    fn instance_pattern(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let s = self.cfg.signature_strength * rng.random_range(0.6..=1.4);
        self.pattern.iter().map(|v| s * v * rng.random_range(0.8..=1.2)).collect()
    }

    fn add_signature(&self, values: &mut [f64], bbox: &PixelBox, pattern: &[f64]) {
        let (h, w, c) = self.cfg.grid;
        let cw = f64::from(self.cfg.image_dims.0) / w as f64;
        let ch = f64::from(self.cfg.image_dims.1) / h as f64;
        for y in 0..h {
            let oy = overlap_1d(bbox.y_min, bbox.y_max, y as f64 * ch, (y + 1) as f64 * ch) / ch;
            if oy <= 0.0 {
                continue;
            }
            for x in 0..w {
                let ox = overlap_1d(bbox.x_min, bbox.x_max, x as f64 * cw, (x + 1) as f64 * cw) / cw;
                if ox <= 0.0 {
                    continue;
                }
                let cell = &mut values[(y * w + x) * c..(y * w + x + 1) * c];
                for (v, p) in cell.iter_mut().zip(pattern) {
                    *v += ox * oy * p;
                }
            }
        }
    }

    fn smooth_field(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let (h, w, c) = self.cfg.grid;
        let k = self.cfg.field_coarse_cells;
        let mut out = vec![0.0; h * w * c];
        for ch in 0..c {
            let level = rng.random_range(0.3..=1.0);
            let coarse: Vec<f64> = (0..k * k).map(|_| rng.random_range(0.5..=1.5)).collect();
            for y in 0..h {
                let fy = if h > 1 { y as f64 / (h - 1) as f64 } else { 0.0 } * (k - 1) as f64;
                let (y0, ty) = (fy.floor().min((k - 2) as f64) as usize, fy - fy.floor().min((k - 2) as f64));
                for x in 0..w {
                    let fx = if w > 1 { x as f64 / (w - 1) as f64 } else { 0.0 } * (k - 1) as f64;
                    let (x0, tx) = (fx.floor().min((k - 2) as f64) as usize, fx - fx.floor().min((k - 2) as f64));
                    let g = |yy: usize, xx: usize| coarse[yy * k + xx];
                    let v = (1.0 - ty) * ((1.0 - tx) * g(y0, x0) + tx * g(y0, x0 + 1))
                        + ty * ((1.0 - tx) * g(y0 + 1, x0) + tx * g(y0 + 1, x0 + 1));
                    out[(y * w + x) * c + ch] = level * v;
                }
            }
        }
        out
    }

    fn to_map(&self, values: &[f64]) -> Result<FeatureMap> {
        let (h, w, c) = self.cfg.grid;
        FeatureMap::new(h, w, c, values.iter().map(|&v| v as f32).collect(), self.cfg.image_dims)
    }

    fn place(&self, rng: &mut ChaCha8Rng, index: usize) -> Result<Place> {
        let mut values = self.smooth_field(rng);
        let (lo, hi) = self.cfg.static_objects_per_place;
        let n = rng.random_range(lo..=hi);
        let mut statics: Vec<StaticObject> = Vec::new();
        for _ in 0..n {
            let avoid: Vec<PixelBox> = statics.iter().map(|s| s.bbox).collect();
            let Some(bbox) = self.place_box(rng, &avoid, 20.0) else { break };
            let pattern = self.instance_pattern(rng);
            self.add_signature(&mut values, &bbox, &pattern);
            statics.push(StaticObject { bbox });
        }
        let descriptor = random_unit(rng, self.cfg.descriptor_dim);
        Ok(Place {
            frame_id: format!("ref_{index:04}"),
            submap_id: format!("submap_{:02}", index / self.cfg.places_per_submap),
            map: self.to_map(&values)?,
            descriptor,
            statics,
        })
    }
}

fn overlap_1d(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

fn overlaps(a: &PixelBox, b: &PixelBox, margin: f64) -> bool {
    a.x_min < b.x_max + margin && b.x_min < a.x_max + margin && a.y_min < b.y_max + margin && b.y_min < a.y_max + margin
}

fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn sample_score(rng: &mut ChaCha8Rng, dist: &Beta<f64>, floor: f64) -> f64 {
    loop {
        let s = dist.sample(rng);
        if s >= floor && s <= 1.0 {
            return s;
        }
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const SPLITS: [&str; 3] = ["train", "val", "test"];

/// Writes a full synthetic dataset under `out_dir`: shared reference frames
/// and, per split, query features, descriptors, detections, annotations and
/// two manifests (`{split}.json` with retrieval, `{split}_gt.json` pinned).
pub fn generate_traverse(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<SynthOutput> {
    cfg.validate()?;
    let root = out_dir.as_ref().to_path_buf();
    let tp_beta = cfg.tp_scores.beta()?;
    let fp_beta = cfg.fp_scores.beta()?;

    let mut world_rng = stream_rng(cfg.seed, 1);
    let world = World {
        cfg,
        pattern: (0..cfg.grid.2).map(|_| 0.2 + 1.3 * world_rng.random::<f64>().powi(2)).collect(),
    };
    let places: Vec<Place> = (0..cfg.places).map(|i| world.place(&mut world_rng, i)).collect::<Result<_>>()?;

    let mut reference_frames = Vec::with_capacity(places.len());
    for p in &places {
        let feature_path = PathBuf::from(format!("references/{}.bin", p.frame_id));
        let descriptor_path = PathBuf::from(format!("references/{}.desc.bin", p.frame_id));
        save_feature_map(&p.map, root.join(&feature_path))?;
        save_descriptor(&DescriptorVector::new(p.descriptor.clone()), cfg.image_dims, root.join(&descriptor_path))?;
        reference_frames.push(ReferenceFrame {
            frame_id: p.frame_id.clone(),
            feature_path,
            descriptor_path: Some(descriptor_path),
            submap_id: p.submap_id.clone(),
        });
    }

    let noise = if cfg.noise_sigma > 0.0 {
        Some(Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?)
    } else {
        None
    };
    let (h, w, c) = cfg.grid;
    let mut splits = Vec::new();
    for (si, split) in SPLITS.iter().enumerate() {
        let count = [cfg.train_frames, cfg.val_frames, cfg.test_frames][si];
        let mut rng = stream_rng(cfg.seed, 2 + si as u64);
        let mut detections = DetectionFile::default();
        let mut annotations = AnnotationFile::default();
        let mut query_frames = Vec::with_capacity(count);
        let mut pinned = Vec::with_capacity(count);
        for i in 0..count {
            let frame_id = format!("{split}_{i:05}");
            let place = &places[rng.random_range(0..places.len())];

            let shared = rng.random_range(-1.0..=1.0) * cfg.gain_spread;
            let gains: Vec<f64> = (0..c)
                .map(|_| (shared + 0.5 * rng.random_range(-1.0..=1.0) * cfg.gain_spread).exp())
                .collect();
            let mut values: Vec<f64> = place
                .map
                .values()
                .iter()
                .enumerate()
                .map(|(k, &m)| gains[k % c] * f64::from(m))
                .collect();
            if let Some(n) = &noise {
                for v in &mut values {
                    *v += n.sample(&mut rng);
                }
            }

            let mut occupied: Vec<PixelBox> = place.statics.iter().map(|s| s.bbox).collect();
            let (vlo, vhi) = cfg.vehicles_per_frame;
            let mut vehicles = Vec::new();
            for _ in 0..rng.random_range(vlo..=vhi) {
                let Some(b) = world.place_box(&mut rng, &occupied, 20.0) else { break };
                let pattern = world.instance_pattern(&mut rng);
                world.add_signature(&mut values, &b, &pattern);
                occupied.push(b);
                vehicles.push(b);
            }
            for v in &mut values {
                *v = v.max(0.0);
            }

            let mut dets: Vec<Detection> = vehicles
                .iter()
                .map(|b| Detection::new(*b, sample_score(&mut rng, &tp_beta, cfg.score_floor)))
                .collect();
            let centroids: Vec<Centroid> = vehicles
                .iter()
                .map(|b| {
                    let (x, y) = b.center();
                    Centroid::new(x, y)
                })
                .collect();

            let mut free_statics: Vec<PixelBox> = place.statics.iter().map(|s| s.bbox).collect();
            free_statics.shuffle(&mut rng);
            let (dlo, dhi) = cfg.distractors_per_frame;
            for _ in 0..rng.random_range(dlo..=dhi) {
                let over_static = rng.random::<f64>() < cfg.static_distractor_fraction;
                let bbox = match (over_static, free_statics.pop()) {
                    (true, Some(s)) => Some(jitter(&mut rng, &s, cfg.image_dims, 6.0)),
                    (_, s) => {
                        free_statics.extend(s);
                        world.place_box(&mut rng, &occupied, 10.0)
                    }
                };
                let Some(bbox) = bbox else { continue };
                if centroids.iter().any(|p| bbox.contains(p.x_px, p.y_px)) {
                    continue;
                }
                occupied.push(bbox);
                dets.push(Detection::new(bbox, sample_score(&mut rng, &fp_beta, cfg.score_floor)));
            }
            dets.shuffle(&mut rng);

            let mut desc: Vec<f64> = place
                .descriptor
                .iter()
                .map(|d| d + cfg.retrieval_perturbation * rng.random_range(-1.0..=1.0))
                .collect();
            let norm = desc.iter().map(|x| x * x).sum::<f64>().sqrt();
            desc.iter_mut().for_each(|x| *x /= norm);

            let feature_path = PathBuf::from(format!("{split}/{frame_id}.bin"));
            let descriptor_path = PathBuf::from(format!("{split}/{frame_id}.desc.bin"));
            let fm = FeatureMap::new(h, w, c, values.iter().map(|&v| v as f32).collect(), cfg.image_dims)?;
            save_feature_map(&fm, root.join(&feature_path))?;
            save_descriptor(&DescriptorVector::new(desc), cfg.image_dims, root.join(&descriptor_path))?;
            detections.frames.insert(frame_id.clone(), dets);
            annotations.frames.insert(frame_id.clone(), centroids);
            query_frames.push(QueryFrame {
                frame_id,
                feature_path,
                descriptor_path: Some(descriptor_path),
                submap_id: place.submap_id.clone(),
                detections_path: PathBuf::from(format!("{split}_detections.json")),
                annotations_path: Some(PathBuf::from(format!("{split}_annotations.json"))),
                pinned_reference_id: None,
            });
            pinned.push(place.frame_id.clone());
        }
        detections.save(root.join(format!("{split}_detections.json")))?;
        annotations.save(root.join(format!("{split}_annotations.json")))?;

        let mut metadata = BTreeMap::new();
        metadata.insert("name".to_string(), format!("synth-{split}"));
        metadata.insert("seed".to_string(), cfg.seed.to_string());
        let manifest = TraverseManifest {
            image_dims: cfg.image_dims,
            metadata: metadata.clone(),
            reference_frames: reference_frames.clone(),
            query_frames,
        };
        let mut gt = manifest.clone();
        for (q, r) in gt.query_frames.iter_mut().zip(pinned) {
            q.pinned_reference_id = Some(r);
        }
        let manifest_path = root.join(format!("{split}.json"));
        let gt_path = root.join(format!("{split}_gt.json"));
        manifest.save(&manifest_path)?;
        gt.save(&gt_path)?;
        splits.push(SplitOutput {
            name: split.to_string(),
            manifest: manifest_path,
            gt_manifest: gt_path,
            frames: count,
        });
    }
    crate::dataset::write_json(&root.join("synth_config.json"), cfg)?;
    for s in &splits {
        validate_manifest(&s.manifest)?;
    }
    Ok(SynthOutput { root, splits })
}

fn jitter(rng: &mut ChaCha8Rng, b: &PixelBox, dims: (u32, u32), px: f64) -> PixelBox {
    let (iw, ih) = (f64::from(dims.0), f64::from(dims.1));
    let dx = rng.random_range(-px..=px).clamp(-b.x_min, iw - b.x_max);
    let dy = rng.random_range(-px..=px).clamp(-b.y_min, ih - b.y_max);
    PixelBox::new(b.x_min + dx, b.y_min + dy, b.x_max + dx, b.y_max + dy)
}

/// Pins `fraction` of the queries (chosen deterministically from `seed`) to a
/// random reference in a different submap, emulating failed localization.
pub fn corrupt_retrieval(manifest: &TraverseManifest, fraction: f64, seed: u64) -> Result<TraverseManifest> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(format!("fraction {fraction} outside [0, 1]")));
    }
    let mut out = manifest.clone();
    let n = out.query_frames.len();
    let k = (fraction * n as f64).round() as usize;
    if k == 0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order.truncate(k);
    order.sort_unstable();
    for i in order {
        let q = &mut out.query_frames[i];
        let others: Vec<&ReferenceFrame> = manifest
            .reference_frames
            .iter()
            .filter(|r| r.submap_id != q.submap_id)
            .collect();
        let r = others.choose(&mut rng).ok_or_else(|| {
            Error::InvalidConfig(format!("frame {}: no reference outside submap {}", q.frame_id, q.submap_id))
        })?;
        q.pinned_reference_id = Some(r.frame_id.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{load_feature_map, validate_manifest};

    fn small() -> SynthConfig {
        SynthConfig {
            places: 6,
            places_per_submap: 3,
            train_frames: 8,
            val_frames: 3,
            test_frames: 3,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn identity_configuration_reproduces_the_map() {
        let cfg = SynthConfig {
            noise_sigma: 0.0,
            gain_spread: 0.0,
            signature_strength: 0.0,
            distractors_per_frame: (0, 0),
            ..small()
        };
        let dir = tempfile::tempdir().unwrap();
        let out = generate_traverse(&cfg, dir.path()).unwrap();
        let vm = validate_manifest(&out.split("train").unwrap().gt_manifest).unwrap();
        for q in &vm.manifest().query_frames {
            let r = vm.manifest().reference(q.pinned_reference_id.as_deref().unwrap()).unwrap();
            let qm = load_feature_map(vm.resolve(&q.feature_path)).unwrap();
            let rm = load_feature_map(vm.resolve(&r.feature_path)).unwrap();
            assert_eq!(qm, rm);
        }
    }

    #[test]
    fn every_centroid_in_exactly_one_candidate() {
        let dir = tempfile::tempdir().unwrap();
        let out = generate_traverse(&small(), dir.path()).unwrap();
        let dets = DetectionFile::load(dir.path().join("train_detections.json")).unwrap();
        let ann = AnnotationFile::load(dir.path().join("train_annotations.json")).unwrap();
        assert_eq!(out.split("train").unwrap().frames, 8);
        for (id, cents) in &ann.frames {
            let d = dets.frame(id).unwrap();
            for p in cents {
                assert_eq!(d.iter().filter(|d| d.bbox.contains(p.x_px, p.y_px)).count(), 1);
            }
            assert!(d.iter().all(|d| d.detector_score >= 0.1 && d.detector_score <= 1.0));
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        generate_traverse(&small(), a.path()).unwrap();
        generate_traverse(&small(), b.path()).unwrap();
        for name in ["train.json", "test_gt.json", "val_detections.json", "references/ref_0003.bin", "test/test_00002.bin"] {
            assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap(), "{name}");
        }
    }

    #[test]
    fn corruption_pins_to_other_submaps() {
        let dir = tempfile::tempdir().unwrap();
        let out = generate_traverse(&small(), dir.path()).unwrap();
        let m = TraverseManifest::load(&out.split("train").unwrap().manifest).unwrap();
        assert_eq!(corrupt_retrieval(&m, 0.0, 1).unwrap(), m);

        let all = corrupt_retrieval(&m, 1.0, 1).unwrap();
        for q in &all.query_frames {
            let r = all.reference(q.pinned_reference_id.as_deref().unwrap()).unwrap();
            assert_ne!(r.submap_id, q.submap_id);
        }
        let half = corrupt_retrieval(&m, 0.5, 9).unwrap();
        assert_eq!(half, corrupt_retrieval(&m, 0.5, 9).unwrap());
        assert_eq!(half.query_frames.iter().filter(|q| q.pinned_reference_id.is_some()).count(), 4);
        assert!(corrupt_retrieval(&m, 1.5, 1).is_err());
    }

    #[test]
    fn rejects_bad_config() {
        for cfg in [
            SynthConfig { noise_sigma: -1.0, ..small() },
            SynthConfig { vehicles_per_frame: (3, 1), ..small() },
            SynthConfig { grid: (0, 4, 4), ..small() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        }
    }
}
