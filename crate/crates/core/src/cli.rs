//! Command-line front end.
//!
//! Every subcommand checks its inputs before writing anything. Exit codes:
//! 0 on success, 2 for invalid inputs or arguments, 3 for failures while
//! computing or writing results.

use std::ffi::OsString;
use std::fmt::Display;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::classifier::{EpochRecord, TrainConfig, ValidationScore};
use crate::dataset::{
    load_checkpoint, save_checkpoint, validate_manifest, ModelCheckpoint, TraverseManifest, ValidatedManifest,
};
use crate::error::Error;
use crate::eval::{EvalConfig, SystemMode};
use crate::pipeline::{
    evaluate_system, prepare_frames, refine_frames, train_classifier, PipelineConfig, Scorer, TraverseReport,
};
use crate::synth::{corrupt_retrieval, generate_traverse, SynthConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "mapmatch", version, about = "Map-aided refinement of vehicle detections")]
pub struct Cli {
    /// TOML file with optional [synth], [train], [eval] and [pipeline]
    /// tables. Flags override values from the file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for outputs whose path is not given explicitly.
    #[arg(long, global = true, env = "MAPMATCH_OUTPUT_ROOT", default_value = ".")]
    pub output_root: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Check manifests and every file they reference.
    Validate(ValidateArgs),
    /// Train a classifier and write its checkpoint and history.
    Train(TrainArgs),
    /// Score detections and write them back with decisions.
    Refine(RefineArgs),
    /// Compute PR metrics for a mode next to the detector baseline.
    Evaluate(EvaluateArgs),
    /// Render stored evaluation reports as text and CSV.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory [default: <output-root>/synth].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub places: Option<usize>,
    #[arg(long)]
    pub places_per_submap: Option<usize>,
    #[arg(long)]
    pub train_frames: Option<usize>,
    #[arg(long)]
    pub val_frames: Option<usize>,
    #[arg(long)]
    pub test_frames: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub gain_spread: Option<f64>,
    #[arg(long)]
    pub signature_strength: Option<f64>,
    #[arg(long)]
    pub static_distractor_fraction: Option<f64>,
    #[arg(long)]
    pub retrieval_perturbation: Option<f64>,
    /// Also write `test_corrupt.json` with this fraction of test queries
    /// pinned to references from other submaps.
    #[arg(long)]
    pub corrupt_fraction: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub corrupt_seed: u64,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(required = true)]
    pub manifests: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    /// One of ours, disparity, query_only.
    #[arg(long, default_value = "ours")]
    pub mode: SystemMode,
    /// Checkpoint path [default: <output-root>/model.json].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// History path [default: next to the checkpoint, `.history.json`].
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience_epochs: Option<usize>,
    #[arg(long)]
    pub hidden1: Option<usize>,
    #[arg(long)]
    pub hidden2: Option<usize>,
    /// Threshold for the validation F1.
    #[arg(long)]
    pub operating_threshold: Option<f64>,
    /// fused or classifier_only.
    #[arg(long, value_parser = parse_validation_score)]
    pub validation_score: Option<ValidationScore>,
    #[arg(long)]
    pub gem_p: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Only refine this frame.
    #[arg(long)]
    pub frame: Option<String>,
    /// Keep detections whose fused score reaches this value.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Output detections file [default: <output-root>/refined.json].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Required for ours, disparity and query_only.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "ours")]
    pub mode: SystemMode,
    #[arg(long)]
    pub operating_threshold: Option<f64>,
    #[arg(long)]
    pub target_recall: Option<f64>,
    #[arg(long)]
    pub gem_p: Option<f64>,
    /// Report path [default: <output-root>/report_<traverse>_<mode>.json].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write one PR-point CSV per scorer into this directory.
    #[arg(long)]
    pub csv_dir: Option<PathBuf>,
    /// Print the full PR point lists.
    #[arg(long)]
    pub points: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    /// Write one PR-point CSV per traverse and scorer into this directory.
    #[arg(long)]
    pub csv_dir: Option<PathBuf>,
    /// Omit the PR point lists.
    #[arg(long)]
    pub summary: bool,
}

fn parse_validation_score(s: &str) -> Result<ValidationScore, String> {
    match s {
        "fused" => Ok(ValidationScore::Fused),
        "classifier_only" => Ok(ValidationScore::ClassifierOnly),
        _ => Err(format!("expected fused or classifier_only, got {s:?}")),
    }
}

/// Contents of the `--config` file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub pipeline: PipelineConfig,
}

impl FileConfig {
    pub fn load(path: &Path) -> crate::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::parse(path, e))
    }
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

fn invalid(e: impl Display) -> Failure {
    Failure {
        code: EXIT_INVALID,
        message: e.to_string(),
    }
}

fn runtime(e: impl Display) -> Failure {
    Failure {
        code: EXIT_RUNTIME,
        message: e.to_string(),
    }
}

/// Errors while reading inputs are validation failures unless the
/// filesystem itself failed.
fn reading(e: Error) -> Failure {
    match e {
        Error::Io { .. } => runtime(e),
        other => invalid(other),
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn require_file(p: &Path, what: &str) -> Outcome {
    if p.is_file() {
        Ok(())
    } else {
        Err(invalid(format!("{what} {} does not exist", p.display())))
    }
}

fn require_writable_file(p: &Path) -> Outcome {
    if p.is_dir() {
        return Err(invalid(format!("output {} is a directory", p.display())));
    }
    if let Some(bad) = p.ancestors().skip(1).find(|a| a.is_file()) {
        return Err(invalid(format!("output {}: {} is not a directory", p.display(), bad.display())));
    }
    Ok(())
}

fn require_writable_dir(p: &Path) -> Outcome {
    if let Some(bad) = p.ancestors().find(|a| a.is_file()) {
        return Err(invalid(format!("output {}: {} is not a directory", p.display(), bad.display())));
    }
    Ok(())
}

fn load_manifest(p: &Path) -> Outcome<ValidatedManifest> {
    require_file(p, "manifest")?;
    validate_manifest(p).map_err(|e| reading(e).with_context(p))
}

impl Failure {
    fn with_context(self, p: &Path) -> Self {
        Failure {
            message: format!("{}: {}", p.display(), self.message),
            ..self
        }
    }
}

/// Parses `args` (including the program name) and runs the subcommand,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn execute(cli: &Cli) -> Outcome {
    let file = match &cli.config {
        Some(p) => {
            require_file(p, "config file")?;
            FileConfig::load(p).map_err(reading)?
        }
        None => FileConfig::default(),
    };
    match &cli.command {
        Command::Synth(a) => synth(cli, file, a),
        Command::Validate(a) => validate(a),
        Command::Train(a) => train(cli, file, a),
        Command::Refine(a) => refine(cli, file, a),
        Command::Evaluate(a) => evaluate(cli, file, a),
        Command::Report(a) => report(a),
    }
}

fn set<T: Clone>(dst: &mut T, src: &Option<T>) {
    if let Some(v) = src {
        *dst = v.clone();
    }
}

fn synth(cli: &Cli, file: FileConfig, a: &SynthArgs) -> Outcome {
    let mut cfg = file.synth;
    set(&mut cfg.seed, &a.seed);
    set(&mut cfg.places, &a.places);
    set(&mut cfg.places_per_submap, &a.places_per_submap);
    set(&mut cfg.train_frames, &a.train_frames);
    set(&mut cfg.val_frames, &a.val_frames);
    set(&mut cfg.test_frames, &a.test_frames);
    set(&mut cfg.noise_sigma, &a.noise_sigma);
    set(&mut cfg.gain_spread, &a.gain_spread);
    set(&mut cfg.signature_strength, &a.signature_strength);
    set(&mut cfg.static_distractor_fraction, &a.static_distractor_fraction);
    set(&mut cfg.retrieval_perturbation, &a.retrieval_perturbation);
    cfg.validate().map_err(invalid)?;
    if let Some(f) = a.corrupt_fraction {
        if !(0.0..=1.0).contains(&f) {
            return Err(invalid(format!("corrupt fraction {f} outside [0, 1]")));
        }
        if cfg.places <= cfg.places_per_submap {
            return Err(invalid("corruption needs at least two submaps"));
        }
    }
    let out = a.out.clone().unwrap_or_else(|| cli.output_root.join("synth"));
    require_writable_dir(&out)?;

    let generated = generate_traverse(&cfg, &out).map_err(runtime)?;
    for s in &generated.splits {
        println!("{}: {} frames, {} (pinned: {})", s.name, s.frames, s.manifest.display(), s.gt_manifest.display());
    }
    if let (Some(f), Some(test)) = (a.corrupt_fraction, generated.split("test")) {
        let m = TraverseManifest::load(&test.manifest).map_err(runtime)?;
        let corrupted = corrupt_retrieval(&m, f, a.corrupt_seed).map_err(runtime)?;
        let path = out.join("test_corrupt.json");
        corrupted.save(&path).map_err(runtime)?;
        println!("test_corrupt: {}", path.display());
    }
    Ok(())
}

fn validate(a: &ValidateArgs) -> Outcome {
    let mut failed = None;
    for p in &a.manifests {
        match load_manifest(p) {
            Ok(vm) => {
                let m = vm.manifest();
                let (h, w, c) = vm.feature_shape();
                println!(
                    "ok {}: {} references, {} queries, features {h}x{w}x{c}",
                    p.display(),
                    m.reference_frames.len(),
                    m.query_frames.len()
                );
            }
            Err(f) => {
                println!("invalid {}", f.message);
                failed = Some(failed.map_or(f.code, |c: i32| c.max(f.code)));
            }
        }
    }
    match failed {
        None => Ok(()),
        Some(code) => Err(Failure {
            code,
            message: "validation failed".into(),
        }),
    }
}

#[derive(Debug, Serialize)]
struct HistoryFile<'a> {
    mode: SystemMode,
    best_epoch: usize,
    best_validation_f1: f64,
    history: &'a [EpochRecord],
}

fn require_annotations(vm: &ValidatedManifest) -> Outcome {
    if vm.manifest().query_frames.is_empty() {
        return Err(invalid(format!("{} has no query frames", vm.path().display())));
    }
    match vm.manifest().query_frames.iter().find(|q| q.annotations_path.is_none()) {
        Some(q) => Err(invalid(Error::MissingAnnotations(q.frame_id.clone()))),
        None => Ok(()),
    }
}

fn train(cli: &Cli, file: FileConfig, a: &TrainArgs) -> Outcome {
    let Some(encoding) = a.mode.encoding() else {
        return Err(invalid(format!("mode {} has no classifier to train", a.mode)));
    };
    let mut cfg = file.train;
    set(&mut cfg.seed, &a.seed);
    set(&mut cfg.learning_rate, &a.learning_rate);
    set(&mut cfg.dropout, &a.dropout);
    set(&mut cfg.batch_size, &a.batch_size);
    set(&mut cfg.max_epochs, &a.max_epochs);
    set(&mut cfg.patience_epochs, &a.patience_epochs);
    set(&mut cfg.hidden1, &a.hidden1);
    set(&mut cfg.hidden2, &a.hidden2);
    set(&mut cfg.operating_threshold, &a.operating_threshold);
    set(&mut cfg.validation_score, &a.validation_score);
    cfg.validate().map_err(invalid)?;
    let mut pcfg = file.pipeline;
    set(&mut pcfg.gem_p, &a.gem_p);

    let out = a.out.clone().unwrap_or_else(|| cli.output_root.join("model.json"));
    let history = a.history.clone().unwrap_or_else(|| out.with_extension("history.json"));
    require_writable_file(&out)?;
    require_writable_file(&history)?;

    let train_vm = load_manifest(&a.train)?;
    let val_vm = load_manifest(&a.val)?;
    require_annotations(&train_vm)?;
    require_annotations(&val_vm)?;
    let train_frames = prepare_frames(&train_vm, &pcfg).map_err(reading)?;
    let val_frames = prepare_frames(&val_vm, &pcfg).map_err(reading)?;
    if train_frames.iter().all(|f| f.candidates.is_empty()) {
        return Err(invalid("training split has no candidates after filtering"));
    }

    let (ck, outcome) = train_classifier(&train_frames, &val_frames, encoding, pcfg.gem_p, &cfg).map_err(runtime)?;
    save_checkpoint(&ck, &out).map_err(runtime)?;
    let record = HistoryFile {
        mode: a.mode,
        best_epoch: outcome.best_epoch,
        best_validation_f1: outcome.best_validation_f1,
        history: &outcome.history,
    };
    crate::dataset::write_json(&history, &record).map_err(runtime)?;
    for h in &outcome.history {
        println!("epoch {:>3}  loss {:.6}  validation f1 {:.4}", h.epoch, h.train_loss, h.validation_f1);
    }
    println!(
        "best epoch {} (validation f1 {:.4}); checkpoint {}",
        outcome.best_epoch,
        outcome.best_validation_f1,
        out.display()
    );
    Ok(())
}

fn load_ckpt(p: &Path) -> Outcome<ModelCheckpoint> {
    require_file(p, "checkpoint")?;
    load_checkpoint(p).map_err(|e| reading(e).with_context(p))
}

fn refine(cli: &Cli, file: FileConfig, a: &RefineArgs) -> Outcome {
    let threshold = a.threshold.unwrap_or(file.eval.operating_threshold);
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(invalid(format!("threshold {threshold} outside (0, 1]")));
    }
    let out = a.out.clone().unwrap_or_else(|| cli.output_root.join("refined.json"));
    require_writable_file(&out)?;
    let vm = load_manifest(&a.manifest)?;
    let ck = load_ckpt(&a.checkpoint)?;
    if let Some(id) = &a.frame {
        if !vm.manifest().query_frames.iter().any(|q| &q.frame_id == id) {
            return Err(invalid(format!("frame {id:?} is not in {}", a.manifest.display())));
        }
    }
    let pcfg = PipelineConfig {
        gem_p: ck.gem_p,
        ..file.pipeline
    };
    let mut frames = prepare_frames(&vm, &pcfg).map_err(reading)?;
    if let Some(id) = &a.frame {
        frames.retain(|f| &f.frame_id == id);
    }
    let scorer = Scorer::Classifier {
        model: &ck.model,
        encoding: ck.encoding_mode,
        fuse: true,
    };
    let refined = refine_frames(&frames, &scorer, threshold).map_err(runtime)?;
    refined.save(&out).map_err(runtime)?;
    let total: usize = refined.frames.values().map(Vec::len).sum();
    let kept = refined.frames.values().flatten().filter(|d| d.kept == Some(true)).count();
    println!("{} frames, {kept} of {total} detections kept at {threshold}; wrote {}", refined.frames.len(), out.display());
    Ok(())
}

fn csv_name(traverse: &str, scorer: &str) -> String {
    let clean: String = traverse
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{clean}_{scorer}.csv")
}

fn write_csvs(report: &TraverseReport, dir: &Path) -> Outcome {
    for s in &report.scorers {
        let path = dir.join(csv_name(&report.traverse, &s.name));
        crate::dataset::write_atomic(&path, s.curve.to_csv().as_bytes()).map_err(runtime)?;
    }
    Ok(())
}

fn evaluate(cli: &Cli, file: FileConfig, a: &EvaluateArgs) -> Outcome {
    let mut ecfg = file.eval;
    set(&mut ecfg.operating_threshold, &a.operating_threshold);
    set(&mut ecfg.target_recall, &a.target_recall);
    ecfg.validate().map_err(invalid)?;
    let mut pcfg = file.pipeline;
    set(&mut pcfg.gem_p, &a.gem_p);

    let vm = load_manifest(&a.manifest)?;
    require_annotations(&vm)?;
    let ck = match (&a.checkpoint, a.mode.encoding()) {
        (Some(p), Some(_)) => Some(load_ckpt(p)?),
        (None, Some(enc)) => {
            return Err(invalid(format!("mode {} needs --checkpoint with a {enc} model", a.mode)));
        }
        (_, None) => None,
    };
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| cli.output_root.join(format!("report_{}_{}.json", vm.traverse_name(), a.mode)));
    require_writable_file(&out)?;
    if let Some(d) = &a.csv_dir {
        require_writable_dir(d)?;
    }

    let report = evaluate_system(&vm, ck.as_ref(), a.mode, &pcfg, &ecfg).map_err(reading)?;
    crate::dataset::write_json(&out, &report).map_err(runtime)?;
    if let Some(d) = &a.csv_dir {
        write_csvs(&report, d)?;
    }
    print!("{}", report.to_text(a.points));
    println!("report written to {}", out.display());
    Ok(())
}

fn report(a: &ReportArgs) -> Outcome {
    let mut reports = Vec::with_capacity(a.reports.len());
    for p in &a.reports {
        require_file(p, "report")?;
        let r: TraverseReport = crate::dataset::read_json(p).map_err(|e| reading(e).with_context(p))?;
        reports.push(r);
    }
    if let Some(d) = &a.csv_dir {
        require_writable_dir(d)?;
    }
    for (i, r) in reports.iter().enumerate() {
        if i > 0 {
            println!();
        }
        print!("{}", r.to_text(!a.summary));
        if let Some(d) = &a.csv_dir {
            write_csvs(r, d)?;
        }
    }
    Ok(())
}
