//! End-to-end flow over a validated manifest: reference lookup, candidate
//! extraction, pooling, scoring, matching and metrics.

use std::collections::HashMap;
use std::path::PathBuf;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::classifier::{train, ClassifierModel, TrainConfig, TrainOutcome, TrainingSet, ValidationScore};
use crate::dataset::{
    load_descriptor, load_feature_map, AnnotationFile, Centroid, Detection, DetectionFile, ModelCheckpoint,
    ValidatedManifest,
};
use crate::error::{Error, Result};
use crate::eval::{fuse, match_detections, metrics, pr_curve, EvalConfig, FlaggedDetection, MetricSet, PrCurve, SystemMode};
use crate::region::{encode_pooled, extract_region_pair, filter_candidates, label_candidates, rescale_box, CandidateDetection, CandidateFilter, EncodingMode};
use crate::retrieval::{compute_global_descriptor, RetrievalIndex};
use crate::tensor::{gem_pool, l2_distance_slices, DescriptorVector, FeatureMap, GridBox, DEFAULT_GEM_EPS, DEFAULT_GEM_P};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// GeM exponent for region pooling and, without descriptor files, for
    /// global descriptors.
    pub gem_p: f64,
    pub filter: CandidateFilter,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            gem_p: DEFAULT_GEM_P,
            filter: CandidateFilter::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedCandidate {
    pub candidate: CandidateDetection,
    pub grid_box: GridBox,
    pub pooled_query: Vec<f64>,
    pub pooled_map: Vec<f64>,
}

/// One query frame after retrieval and pooling; scorers only need this.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedFrame {
    pub frame_id: String,
    pub reference_id: String,
    /// `None` when the reference was pinned rather than retrieved.
    pub retrieval_similarity: Option<f64>,
    /// All detections after sanitizing, in file order.
    pub detections: Vec<Detection>,
    /// Indices of detections clamped to the image.
    pub clamped: Vec<usize>,
    pub candidates: Vec<PreparedCandidate>,
    pub centroids: Option<Vec<Centroid>>,
}

impl PreparedFrame {
    fn centroids_required(&self) -> Result<&[Centroid]> {
        self.centroids
            .as_deref()
            .ok_or_else(|| Error::MissingAnnotations(self.frame_id.clone()))
    }
}

struct Loader<'a> {
    vm: &'a ValidatedManifest,
    maps: HashMap<String, FeatureMap>,
    detections: HashMap<PathBuf, DetectionFile>,
    annotations: HashMap<PathBuf, AnnotationFile>,
}

impl<'a> Loader<'a> {
    fn reference_map(&mut self, id: &str) -> Result<&FeatureMap> {
        if !self.maps.contains_key(id) {
            let r = self
                .vm
                .manifest()
                .reference(id)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown reference {id:?}")))?;
            let fm = load_feature_map(self.vm.resolve(&r.feature_path))?;
            self.maps.insert(id.to_string(), fm);
        }
        Ok(&self.maps[id])
    }

    fn detections(&mut self, path: PathBuf) -> Result<&DetectionFile> {
        if !self.detections.contains_key(&path) {
            let f = DetectionFile::load(&path)?;
            self.detections.insert(path.clone(), f);
        }
        Ok(&self.detections[&path])
    }

    fn annotations(&mut self, path: PathBuf) -> Result<&AnnotationFile> {
        if !self.annotations.contains_key(&path) {
            let f = AnnotationFile::load(&path)?;
            self.annotations.insert(path.clone(), f);
        }
        Ok(&self.annotations[&path])
    }
}

fn build_index(loader: &mut Loader<'_>, p: f64) -> Result<RetrievalIndex> {
    let vm = loader.vm;
    let mut entries = Vec::with_capacity(vm.manifest().reference_frames.len());
    for r in &vm.manifest().reference_frames {
        let d = match &r.descriptor_path {
            Some(dp) => load_descriptor(vm.resolve(dp))?,
            None => compute_global_descriptor(loader.reference_map(&r.frame_id)?, p)?,
        };
        entries.push((r.frame_id.clone(), r.submap_id.clone(), d));
    }
    RetrievalIndex::build(entries)
}

/// Loads every query frame, finds its reference (pinned or retrieved within
/// its submap) and pools every candidate region in both maps.
pub fn prepare_frames(vm: &ValidatedManifest, cfg: &PipelineConfig) -> Result<Vec<PreparedFrame>> {
    let manifest = vm.manifest();
    let dims = manifest.image_dims;
    let (h, w, _) = vm.feature_shape();
    let mut loader = Loader {
        vm,
        maps: HashMap::new(),
        detections: HashMap::new(),
        annotations: HashMap::new(),
    };
    let needs_index = manifest.query_frames.iter().any(|q| q.pinned_reference_id.is_none());
    let index = if needs_index { Some(build_index(&mut loader, cfg.gem_p)?) } else { None };

    let mut frames = Vec::with_capacity(manifest.query_frames.len());
    for q in &manifest.query_frames {
        let query_map = load_feature_map(vm.resolve(&q.feature_path))?;
        let (reference_id, retrieval_similarity) = match (&q.pinned_reference_id, &index) {
            (Some(id), _) => (id.clone(), None),
            (None, Some(index)) => {
                let d: DescriptorVector = match &q.descriptor_path {
                    Some(dp) => load_descriptor(vm.resolve(dp))?,
                    None => compute_global_descriptor(&query_map, cfg.gem_p)?,
                };
                let hit = index.retrieve(&d, Some(&q.submap_id))?;
                (hit.frame_id, Some(hit.similarity))
            }
            (None, None) => unreachable!("index is built whenever a query is unpinned"),
        };

        let sanitized = loader
            .detections(vm.resolve(&q.detections_path))?
            .sanitized_frame(&q.frame_id, dims)?;
        let centroids = match &q.annotations_path {
            Some(p) => Some(loader.annotations(vm.resolve(p))?.checked_frame(&q.frame_id, dims)?.to_vec()),
            None => None,
        };
        let mut cands = filter_candidates(&sanitized.detections, dims, &cfg.filter);
        if let Some(c) = &centroids {
            label_candidates(&mut cands, c);
        }

        let map = loader.reference_map(&reference_id)?;
        let mut candidates = Vec::with_capacity(cands.len());
        for candidate in cands {
            let grid_box = rescale_box(&candidate.pixel_box, dims, (w, h));
            let (rq, rm) = extract_region_pair(&query_map, map, grid_box)?;
            candidates.push(PreparedCandidate {
                pooled_query: gem_pool(&rq, cfg.gem_p, DEFAULT_GEM_EPS)?.into_values(),
                pooled_map: gem_pool(&rm, cfg.gem_p, DEFAULT_GEM_EPS)?.into_values(),
                candidate,
                grid_box,
            });
        }
        frames.push(PreparedFrame {
            frame_id: q.frame_id.clone(),
            reference_id,
            retrieval_similarity,
            detections: sanitized.detections,
            clamped: sanitized.clamped,
            candidates,
            centroids,
        });
    }
    Ok(frames)
}

/// Labelled classifier inputs for every candidate of every frame.
pub fn training_set(frames: &[PreparedFrame], mode: EncodingMode) -> Result<TrainingSet> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for f in frames {
        for c in &f.candidates {
            let label = c
                .candidate
                .label
                .ok_or_else(|| Error::MissingAnnotations(f.frame_id.clone()))?;
            rows.push(encode_pooled(&c.pooled_query, &c.pooled_map, mode)?.values);
            labels.push(label);
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptySet("no candidates in training frames".into()));
    }
    TrainingSet::from_rows(&rows, &labels)
}

/// How candidates are scored.
#[derive(Debug, Clone, Copy)]
pub enum Scorer<'a> {
    /// Detector confidence as-is.
    Detector,
    /// Classifier output, fused with the detector unless `fuse` is false.
    Classifier {
        model: &'a ClassifierModel,
        encoding: EncodingMode,
        fuse: bool,
    },
    /// `d / (1 + d)` of the pooled-vector distance.
    L2 { fuse: bool },
    /// Ground-truth labels standing in for the classifier, fused.
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateScore {
    /// Classifier-side score before fusion, if the scorer has one.
    pub classifier: Option<f64>,
    pub final_score: f64,
}

impl Scorer<'_> {
    pub fn score_frame(&self, frame: &PreparedFrame) -> Result<Vec<CandidateScore>> {
        let cands = &frame.candidates;
        let side: Vec<Option<f64>> = match *self {
            Scorer::Detector => vec![None; cands.len()],
            Scorer::Classifier { model, encoding, .. } => {
                if cands.is_empty() {
                    Vec::new()
                } else {
                    let dim = model.input_dim();
                    let mut x = Array2::zeros((cands.len(), dim));
                    for (mut row, c) in x.rows_mut().into_iter().zip(cands) {
                        let e = encode_pooled(&c.pooled_query, &c.pooled_map, encoding)?;
                        if e.values.len() != dim {
                            return Err(Error::ModeMismatch(format!(
                                "{encoding} encodings have length {} but the model expects {dim}",
                                e.values.len()
                            )));
                        }
                        row.assign(&ndarray::ArrayView1::from(&e.values[..]));
                    }
                    model.predict_batch(x.view())?.iter().map(|&s| Some(s)).collect()
                }
            }
            Scorer::L2 { .. } => cands
                .iter()
                .map(|c| {
                    l2_distance_slices(&c.pooled_query, &c.pooled_map).map(|d| Some(crate::eval::distance_to_score(d)))
                })
                .collect::<Result<_>>()?,
            Scorer::Oracle => cands
                .iter()
                .map(|c| {
                    c.candidate
                        .label
                        .map(|l| Some(if l { 1.0 } else { 0.0 }))
                        .ok_or_else(|| Error::MissingAnnotations(frame.frame_id.clone()))
                })
                .collect::<Result<_>>()?,
        };
        let fused = match *self {
            Scorer::Detector => false,
            Scorer::Classifier { fuse, .. } | Scorer::L2 { fuse } => fuse,
            Scorer::Oracle => true,
        };
        cands
            .iter()
            .zip(side)
            .map(|(c, s)| {
                let final_score = match s {
                    None => c.candidate.detector_score,
                    Some(s) if fused => fuse(s, c.candidate.detector_score)?,
                    Some(s) => s,
                };
                Ok(CandidateScore {
                    classifier: s,
                    final_score,
                })
            })
            .collect()
    }
}

/// Scores, matches and summarizes a set of prepared frames.
pub fn evaluate_prepared(
    frames: &[PreparedFrame],
    scorer: &Scorer<'_>,
    cfg: &EvalConfig,
) -> Result<(MetricSet, PrCurve)> {
    cfg.validate()?;
    let mut flagged = Vec::new();
    let mut total_gt = 0;
    for f in frames {
        let centroids = f.centroids_required()?;
        let scores = scorer.score_frame(f)?;
        let pairs: Vec<_> = f
            .candidates
            .iter()
            .zip(&scores)
            .map(|(c, s)| (c.candidate.pixel_box, s.final_score))
            .collect();
        let m = match_detections(&pairs, centroids)?;
        total_gt += centroids.len();
        for ((c, s), tp) in f.candidates.iter().zip(&scores).zip(m.true_positive) {
            flagged.push(FlaggedDetection {
                frame_id: f.frame_id.clone(),
                index: c.candidate.index,
                score: s.final_score,
                true_positive: tp,
            });
        }
    }
    let curve = pr_curve(&flagged, total_gt)?;
    Ok((metrics(&curve, cfg), curve))
}

/// F1 at the operating threshold for a model snapshot, used as the
/// early-stopping signal during training.
pub fn validation_f1(
    frames: &[PreparedFrame],
    model: &ClassifierModel,
    encoding: EncodingMode,
    score: ValidationScore,
    operating_threshold: f64,
) -> Result<f64> {
    let scorer = Scorer::Classifier {
        model,
        encoding,
        fuse: score == ValidationScore::Fused,
    };
    let cfg = EvalConfig {
        operating_threshold,
        ..EvalConfig::default()
    };
    Ok(evaluate_prepared(frames, &scorer, &cfg)?.0.f1_at_tau)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerReport {
    pub name: String,
    pub metrics: MetricSet,
    pub curve: PrCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraverseReport {
    pub traverse: String,
    pub mode: SystemMode,
    pub eval: EvalConfig,
    pub frames: usize,
    pub candidates: usize,
    pub total_gt: usize,
    pub clamped_boxes: usize,
    /// The mode's own scorer(s) first, then the `yolop_only` baseline.
    pub scorers: Vec<ScorerReport>,
}

impl TraverseReport {
    pub fn scorer(&self, name: &str) -> Option<&ScorerReport> {
        self.scorers.iter().find(|s| s.name == name)
    }

    /// The first scorer, i.e. the evaluated mode itself (the fused variant
    /// for `l2`).
    pub fn primary(&self) -> &ScorerReport {
        &self.scorers[0]
    }
}

/// Runs one system mode over a traverse. Learned modes need a checkpoint
/// trained with the matching encoding; its GeM exponent overrides `pcfg`.
pub fn evaluate_system(
    vm: &ValidatedManifest,
    checkpoint: Option<&ModelCheckpoint>,
    mode: SystemMode,
    pcfg: &PipelineConfig,
    ecfg: &EvalConfig,
) -> Result<TraverseReport> {
    ecfg.validate()?;
    let mut pcfg = *pcfg;
    let learned = match (mode.encoding(), checkpoint) {
        (Some(enc), Some(ck)) => {
            if ck.encoding_mode != enc {
                return Err(Error::ModeMismatch(format!(
                    "mode {mode} needs a {enc} model, checkpoint was trained with {}",
                    ck.encoding_mode
                )));
            }
            pcfg.gem_p = ck.gem_p;
            Some((&ck.model, enc))
        }
        (Some(enc), None) => {
            return Err(Error::ModeMismatch(format!("mode {mode} needs a checkpoint trained with {enc}")))
        }
        (None, _) => None,
    };
    let frames = prepare_frames(vm, &pcfg)?;
    let evaluate = |name: &str, scorer: Scorer<'_>| -> Result<ScorerReport> {
        let (metrics, curve) = evaluate_prepared(&frames, &scorer, ecfg)?;
        Ok(ScorerReport {
            name: name.to_string(),
            metrics,
            curve,
        })
    };
    let mut scorers = Vec::new();
    match (mode, learned) {
        (SystemMode::L2, _) => {
            scorers.push(evaluate("l2_fused", Scorer::L2 { fuse: true })?);
            scorers.push(evaluate("l2_raw", Scorer::L2 { fuse: false })?);
        }
        (SystemMode::YolopOnly, _) => {}
        (_, Some((model, encoding))) => scorers.push(evaluate(
            mode.name(),
            Scorer::Classifier {
                model,
                encoding,
                fuse: true,
            },
        )?),
        (_, None) => unreachable!("learned modes were checked above"),
    }
    scorers.push(evaluate(SystemMode::YolopOnly.name(), Scorer::Detector)?);
    let total_gt = scorers[0].curve.total_gt;
    Ok(TraverseReport {
        traverse: vm.traverse_name(),
        mode,
        eval: *ecfg,
        frames: frames.len(),
        candidates: frames.iter().map(|f| f.candidates.len()).sum(),
        total_gt,
        clamped_boxes: frames.iter().map(|f| f.clamped.len()).sum(),
        scorers,
    })
}

/// Detections annotated with classifier, fused score and the keep decision
/// at `threshold`. Detections removed by the candidate filter are kept out
/// (`kept = false`) without scores.
pub fn refine_frames(frames: &[PreparedFrame], scorer: &Scorer<'_>, threshold: f64) -> Result<DetectionFile> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidConfig(format!("threshold {threshold} outside (0, 1]")));
    }
    let mut out = DetectionFile::default();
    for f in frames {
        let mut dets: Vec<Detection> = f
            .detections
            .iter()
            .map(|d| Detection {
                classifier_score: None,
                fused_score: None,
                kept: Some(false),
                ..d.clone()
            })
            .collect();
        for (c, s) in f.candidates.iter().zip(scorer.score_frame(f)?) {
            let d = &mut dets[c.candidate.index];
            d.classifier_score = s.classifier;
            d.fused_score = Some(s.final_score);
            d.kept = Some(s.final_score >= threshold);
        }
        out.frames.insert(f.frame_id.clone(), dets);
    }
    Ok(out)
}

/// Trains a classifier on prepared training frames with early stopping on
/// the validation frames, and packages the best epoch as a checkpoint.
pub fn train_classifier(
    train_frames: &[PreparedFrame],
    val_frames: &[PreparedFrame],
    encoding: EncodingMode,
    gem_p: f64,
    cfg: &TrainConfig,
) -> Result<(ModelCheckpoint, TrainOutcome)> {
    if val_frames.is_empty() {
        return Err(Error::EmptySet("validation split has no frames".into()));
    }
    let data = training_set(train_frames, encoding)?;
    let outcome = train(&data, cfg, &mut |m| {
        validation_f1(val_frames, m, encoding, cfg.validation_score, cfg.operating_threshold)
    })?;
    let mut ck = ModelCheckpoint::new(outcome.model.clone(), encoding, gem_p);
    ck.train_config = Some(cfg.clone());
    ck.best_validation_f1 = Some(outcome.best_validation_f1);
    ck.epoch = Some(outcome.best_epoch);
    ck.optimizer = Some(outcome.optimizer.clone());
    Ok((ck, outcome))
}

impl TraverseReport {
    /// Plain-text rendering: the summary metrics of every scorer side by
    /// side, optionally followed by each scorer's full PR point list.
    pub fn to_text(&self, with_points: bool) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(s, "traverse: {}", self.traverse);
        let _ = writeln!(s, "mode: {}", self.mode);
        let _ = writeln!(
            s,
            "frames: {}  candidates: {}  ground truth: {}  clamped boxes: {}",
            self.frames, self.candidates, self.total_gt, self.clamped_boxes
        );
        let _ = writeln!(
            s,
            "operating threshold: {}  target recall: {}",
            self.eval.operating_threshold, self.eval.target_recall
        );
        let _ = write!(s, "{:<22}", "metric");
        for sc in &self.scorers {
            let _ = write!(s, "{:>12}", sc.name);
        }
        s.push('\n');
        type Column = (&'static str, fn(&MetricSet) -> f64);
        let rows: [Column; 4] = [
            ("f1_at_tau", |m| m.f1_at_tau),
            ("auc", |m| m.auc),
            ("max_f1", |m| m.max_f1),
            ("precision_at_recall", |m| m.precision_at_recall),
        ];
        for (name, get) in rows {
            let _ = write!(s, "{name:<22}");
            for sc in &self.scorers {
                let _ = write!(s, "{:>12.4}", get(&sc.metrics));
            }
            s.push('\n');
        }
        let _ = write!(s, "{:<22}", "target_recall_reached");
        for sc in &self.scorers {
            let _ = write!(s, "{:>12}", sc.metrics.target_recall_reached);
        }
        s.push('\n');
        if with_points {
            for sc in &self.scorers {
                let _ = writeln!(s, "\npr points for {} (threshold precision recall tp fp):", sc.name);
                for p in &sc.curve.points {
                    let _ = writeln!(s, "{:.6} {:.6} {:.6} {} {}", p.threshold, p.precision, p.recall, p.tp, p.fp);
                }
            }
        }
        s
    }
}
