//! Command-line surface. Exit codes are a scripting contract: 0 success,
//! 1 usage error, 2 data error, 3 numeric failure.

use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::ava::{self, AestheticLabel, AvaError, ImageRecord, Split};
use crate::backbones::{self, BackboneError};
use crate::checkpoint::{self, CheckpointError};
use crate::config::{derive_seed, Config, ConfigError, Profile};
use crate::dataset::{self, DatasetError, Loader};
use crate::geometry::{
    apply_crop, bilinear_resize, center_crop, pad_to_square, random_crops, resize_to,
    GeometryError, ImagePlane,
};
use crate::multicolumn::{
    ensure_min_side, MultiColumnModel, MulticolumnError, SelectStrategy, VariantParams,
};
use crate::report::{self, ReportError};
use crate::saliency::{fine_grained, spectral_residual};
use crate::train::{
    self, default_schedule, CheckpointMeta, StageReport, TrainError, TrainReport, TrainStage,
    Trainer,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<AvaError> for CliError {
    fn from(e: AvaError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<GeometryError> for CliError {
    fn from(e: GeometryError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<BackboneError> for CliError {
    fn from(e: BackboneError) -> Self {
        match e {
            BackboneError::BadSpec(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<MulticolumnError> for CliError {
    fn from(e: MulticolumnError) -> Self {
        match e {
            MulticolumnError::BadConfig(_) | MulticolumnError::BadFusion { .. } => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => CliError::Numeric(e.to_string()),
            TrainError::EmptySplit { .. } | TrainError::ResumeMismatch { .. } => {
                CliError::Data(e.to_string())
            }
            TrainError::Dataset(inner) => inner.into(),
            TrainError::Model(inner) => inner.into(),
            TrainError::Backbone(inner) => inner.into(),
            TrainError::Checkpoint(inner) => inner.into(),
            TrainError::Config(inner) => inner.into(),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "aesthetics",
    version,
    about = "Multi-column CNN aesthetic quality classification"
)]
struct Cli {
    /// Root seed; every random draw in a run derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Execution profile: `paper` (full scale) or `desk` (tiny, fast).
    #[arg(long, global = true, default_value = "desk")]
    profile: String,
    /// KEY=VALUE config file applied over the profile defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Single KEY=VALUE override, highest precedence; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse vote metadata, binarize labels, split, and write a manifest.
    Ingest {
        /// Whitespace-delimited metadata: index, id, ten vote counts, tags.
        #[arg(long)]
        metadata: PathBuf,
        /// Image directory; records whose files are missing are skipped.
        #[arg(long)]
        images: Option<PathBuf>,
        /// Manifest file to write.
        #[arg(long)]
        out: PathBuf,
        /// TRAIN,VAL,TEST fractions; must sum to 1.
        #[arg(long, default_value = "0.8,0.1,0.1")]
        ratios: String,
        /// Fail instead of warn on malformed lines and missing files.
        #[arg(long)]
        strict: bool,
    },
    /// Write every preprocessing variant of one image plus a crop sidecar.
    Preview {
        image: PathBuf,
        /// Output directory for the variant images.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a small balanced synthetic corpus (images + metadata).
    Synth {
        /// Directory to create `metadata.txt` and `images/` under.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        count: usize,
    },
    /// Run the staged training schedule; writes checkpoints and a report.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Root directory for run outputs.
        #[arg(long)]
        out: PathBuf,
        /// Image directory (default: `images/` beside the manifest).
        #[arg(long)]
        images: Option<PathBuf>,
        /// Continue the most recent run of this exact config.
        #[arg(long)]
        resume: bool,
        /// Fixed run directory name instead of timestamp-fingerprint.
        #[arg(long)]
        run_name: Option<String>,
    },
    /// Accuracy of a trained checkpoint on a manifest split.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// One of train, val, test.
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        images: Option<PathBuf>,
    },
    /// Classify one image with a trained checkpoint.
    Predict {
        image: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Average the softmax over every feasible variant combination.
        #[arg(long)]
        average: bool,
    },
    /// Merge run reports with the published baselines into one table.
    Report {
        /// report.json files from previous runs.
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let profile = Profile::parse(&cli.profile)?;
    let mut sets = Vec::with_capacity(cli.sets.len() + 1);
    for s in &cli.sets {
        sets.push(Config::parse_set(s)?);
    }
    if let Some(seed) = cli.seed {
        sets.push(("seed".to_string(), seed.to_string()));
    }
    let cfg = Config::load(profile, cli.config.as_deref(), &sets)?;
    match cli.command {
        Command::Ingest {
            metadata,
            images,
            out,
            ratios,
            strict,
        } => cmd_ingest(&cfg, &metadata, images.as_deref(), &out, &ratios, strict),
        Command::Preview { image, out } => cmd_preview(&cfg, &image, &out),
        Command::Synth { out, count } => cmd_synth(&cfg, &out, count),
        Command::Train {
            manifest,
            out,
            images,
            resume,
            run_name,
        } => cmd_train(
            &cfg,
            &manifest,
            &out,
            images.as_deref(),
            resume,
            run_name.as_deref(),
        ),
        Command::Eval {
            manifest,
            checkpoint,
            split,
            images,
        } => cmd_eval(&cfg, &manifest, &checkpoint, &split, images.as_deref()),
        Command::Predict {
            image,
            checkpoint,
            average,
        } => cmd_predict(&cfg, &image, &checkpoint, average),
        Command::Report { files } => cmd_report(&files),
    }
}

fn split_indices(records: &[ImageRecord], split: Split) -> Vec<usize> {
    records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.split == split)
        .map(|(i, _)| i)
        .collect()
}

fn parse_ratios(s: &str) -> Result<(f64, f64, f64), CliError> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("--ratios wants three numbers, got `{s}`")))?;
    if parts.len() != 3 {
        return Err(CliError::Usage(format!(
            "--ratios wants three comma-separated fractions, got `{s}`"
        )));
    }
    let (a, b, c) = (parts[0], parts[1], parts[2]);
    if a <= 0.0 || b <= 0.0 || c <= 0.0 || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(CliError::Usage(format!(
            "--ratios must be positive and sum to 1, got `{s}`"
        )));
    }
    Ok((a, b, c))
}

fn parse_strategy(cfg: &Config) -> Result<SelectStrategy, CliError> {
    let raw = cfg.get("select_strategy")?;
    SelectStrategy::parse(raw).ok_or_else(|| {
        CliError::Usage(format!(
            "select_strategy must be `random` or `canonical`, got `{raw}`"
        ))
    })
}

fn images_root(manifest: &Path, images: Option<&Path>) -> PathBuf {
    match images {
        Some(dir) => dir.to_path_buf(),
        None => manifest
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join("images"),
    }
}

fn cmd_ingest(
    cfg: &Config,
    metadata: &Path,
    images: Option<&Path>,
    out: &Path,
    ratios: &str,
    strict: bool,
) -> Result<(), CliError> {
    let ratios = parse_ratios(ratios)?;
    let file = std::fs::File::open(metadata).map_err(|e| {
        CliError::Data(format!("cannot open metadata `{}`: {e}", metadata.display()))
    })?;
    let outcome = ava::parse_metadata(BufReader::new(file))
        .map_err(|e| CliError::Data(format!("metadata read failed: {e}")))?;
    let mut records = outcome.records;
    if !outcome.issues.is_empty() {
        for issue in outcome.issues.iter().take(5) {
            eprintln!("warning: {issue}");
        }
        if outcome.issues.len() > 5 {
            eprintln!(
                "warning: ... and {} more malformed lines",
                outcome.issues.len() - 5
            );
        }
        if strict {
            return Err(CliError::Data(format!(
                "{} malformed metadata lines",
                outcome.issues.len()
            )));
        }
    }
    let parsed = records.len();
    records.retain(|r| r.histogram.total() > 0);
    if records.len() < parsed {
        let dropped = parsed - records.len();
        if strict {
            return Err(CliError::Data(format!("{dropped} records have no votes")));
        }
        eprintln!("warning: dropped {dropped} records with no votes");
    }
    if records.is_empty() {
        return Err(CliError::Data("no usable records in metadata".into()));
    }
    // The rating summary reflects the metadata, before any file filtering.
    let summary = ava::summarize_by_rating(&records)?;
    println!("{summary}");
    ava::derive_labels(&mut records)?;
    let count_of = |l: AestheticLabel| records.iter().filter(|r| r.label == Some(l)).count();
    println!(
        "labels: {} LOW, {} HIGH, {} EXCLUDED",
        count_of(AestheticLabel::Low),
        count_of(AestheticLabel::High),
        count_of(AestheticLabel::Excluded)
    );
    if let Some(dir) = images {
        let present = records.len();
        records.retain(|r| dir.join(&r.path).is_file());
        let missing = present - records.len();
        if missing > 0 {
            if strict {
                return Err(CliError::Data(format!(
                    "{missing} image files missing under `{}`",
                    dir.display()
                )));
            }
            eprintln!("warning: skipped {missing} records with missing image files");
        }
    }
    ava::make_splits(&mut records, ratios, cfg.seed()?)?;
    ava::write_manifest(&records, out)?;
    let splits = [Split::Train, Split::Val, Split::Test]
        .map(|s| format!("{} {}", split_indices(&records, s).len(), s.token()));
    println!(
        "manifest: {} records ({}) -> {}",
        records.len(),
        splits.join(", "),
        out.display()
    );
    Ok(())
}

fn cmd_synth(cfg: &Config, out: &Path, count: usize) -> Result<(), CliError> {
    let meta = dataset::generate_synthetic(out, count, cfg.seed()?)?;
    println!(
        "wrote {count} synthetic images under {}",
        out.join("images").display()
    );
    println!("metadata: {}", meta.display());
    Ok(())
}

fn cmd_preview(cfg: &Config, image: &Path, out: &Path) -> Result<(), CliError> {
    let plane = dataset::load_plane(image)?;
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Data(format!("cannot create `{}`: {e}", out.display())))?;
    let params = VariantParams::from_config(cfg)?;
    let s = params.input_size;
    let save_rgb = |p: &ImagePlane, name: &str| -> Result<(), CliError> {
        p.to_rgb_image()
            .save(out.join(name))
            .map_err(|e| CliError::Data(format!("cannot write {name}: {e}")))
    };
    let save_gray = |p: &ImagePlane, name: &str| -> Result<(), CliError> {
        p.to_gray_image()
            .save(out.join(name))
            .map_err(|e| CliError::Data(format!("cannot write {name}: {e}")))
    };
    let base = resize_to(&plane, s, s, params.resize_mode);
    save_rgb(&base, "original.png")?;
    let (padded, _) = pad_to_square(&plane);
    save_rgb(&bilinear_resize(&padded, s, s), "padded.png")?;
    let min_side = plane.width().min(plane.height());
    let (centered, _) = center_crop(&plane, min_side)?;
    save_rgb(&bilinear_resize(&centered, s, s), "center_crop.png")?;
    save_gray(&spectral_residual(&base, &params.spectral).to_plane(), "saliency_spectral.png")?;
    save_gray(&fine_grained(&base, &params.fine_scales).to_plane(), "saliency_fine.png")?;

    let stem = image
        .file_stem()
        .map(|t| t.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    let big = ensure_min_side(&plane, s);
    let crop_seed = derive_seed(cfg.seed()?, &["crops", &stem]);
    let mut sidecar = format!(
        "image {stem}\ncrop size {s}, min separation {}, max attempts {}\n",
        params.crop_min_sep, params.crop_max_attempts
    );
    let mut write_crop = |i: usize, spec: &crate::geometry::CropSpec| -> Result<(), CliError> {
        let crop = apply_crop(&big, spec)?;
        save_rgb(&crop, &format!("random_crop_{}.png", i + 1))?;
        sidecar.push_str(&format!(
            "random_crop_{} x={} y={} w={} h={}\n",
            i + 1,
            spec.x,
            spec.y,
            spec.w,
            spec.h
        ));
        Ok(())
    };
    match random_crops(
        &big,
        s,
        params.crop_count,
        params.crop_min_sep,
        crop_seed,
        params.crop_max_attempts,
    ) {
        Ok(crops) => {
            for (i, spec) in crops.iter().enumerate() {
                write_crop(i, spec)?;
            }
        }
        Err(GeometryError::InsufficientSeparation { needed, placed }) => {
            for (i, spec) in placed.iter().enumerate() {
                write_crop(i, spec)?;
            }
            sidecar.push_str(&format!(
                "infeasible: needed {needed}, placed {}\n",
                placed.len()
            ));
            eprintln!(
                "warning: only {} of {needed} separated crops fit; sidecar records the shortfall",
                placed.len()
            );
        }
        Err(other) => return Err(other.into()),
    }
    std::fs::write(out.join("crops.txt"), sidecar)
        .map_err(|e| CliError::Data(format!("cannot write crops.txt: {e}")))?;
    println!("preview written to {}", out.display());
    Ok(())
}

/// Pick the run directory: explicit name, else the latest prior run of this
/// config when resuming, else timestamp + config fingerprint.
fn resolve_run_dir(
    root: &Path,
    run_name: Option<&str>,
    resume: bool,
    fp12: &str,
) -> Result<PathBuf, CliError> {
    if let Some(name) = run_name {
        return Ok(root.join(name));
    }
    if resume {
        let suffix = format!("-{fp12}");
        let mut candidates: Vec<PathBuf> = std::fs::read_dir(root)
            .map_err(|e| CliError::Data(format!("cannot scan `{}`: {e}", root.display())))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| {
                p.is_dir()
                    && p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with("run-") && n.ends_with(&suffix))
            })
            .collect();
        candidates.sort();
        return candidates.pop().ok_or_else(|| {
            CliError::Data(format!(
                "no previous run of this config under `{}`",
                root.display()
            ))
        });
    }
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    Ok(root.join(format!("run-{secs}-{fp12}")))
}

/// Reconstruct what a dead run had finished, from its last checkpoint.
fn partial_report_from_checkpoint(
    ckpt: &Path,
    schedule: &[TrainStage],
    architecture: String,
    network: String,
    wall_seconds: f64,
    fingerprint: &str,
) -> Option<TrainReport> {
    let (meta_json, _) = checkpoint::read_file(ckpt).ok()?;
    let meta: CheckpointMeta = serde_json::from_str(&meta_json).ok()?;
    let mut stages = meta.completed;
    if !meta.partial_stats.is_empty() {
        let st = schedule.get(meta.stage_index)?;
        let final_train_accuracy = meta.partial_stats.last().map_or(0.0, |e| e.accuracy);
        stages.push(StageReport {
            stage: st.name.clone(),
            policy: st.policy.name().to_string(),
            epochs_planned: st.epochs,
            epochs_run: meta.partial_stats.len(),
            epoch_stats: meta.partial_stats,
            step_losses: meta.partial_steps,
            final_train_accuracy,
        });
    }
    let final_train_accuracy = stages.last().map_or(0.0, |s| s.final_train_accuracy);
    Some(TrainReport {
        architecture,
        network,
        stages,
        final_train_accuracy,
        final_test_accuracy: None,
        wall_seconds,
        config_fingerprint: fingerprint.to_string(),
    })
}

fn cmd_train(
    cfg: &Config,
    manifest: &Path,
    out_root: &Path,
    images: Option<&Path>,
    resume: bool,
    run_name: Option<&str>,
) -> Result<(), CliError> {
    let records = ava::read_manifest(manifest)?;
    let train_idx = split_indices(&records, Split::Train);
    let test_idx = split_indices(&records, Split::Test);
    let fingerprint = cfg.fingerprint();
    let run_dir = resolve_run_dir(out_root, run_name, resume, &fingerprint[..12])?;
    std::fs::create_dir_all(&run_dir)
        .map_err(|e| CliError::Data(format!("cannot create `{}`: {e}", run_dir.display())))?;
    let seed = cfg.seed()?;

    let mut model = train::assemble_from_config(cfg)?;
    if cfg.get_bool("pretrained")? {
        let weights = cfg.get("weights")?;
        if weights.is_empty() {
            return Err(CliError::Data(
                "pretrained=true needs weights=<file> (a checkpoint holding backbone blocks)"
                    .into(),
            ));
        }
        let (_, blocks) = checkpoint::read_file(Path::new(weights))?;
        for column in &mut model.columns {
            backbones::load_backbone_blocks(column, &blocks)?;
        }
        println!("loaded pretrained backbone weights from {weights}");
    }
    let architecture = model.configs[0].kind.name().to_string();
    let network = model.network_label().to_string();

    let params = VariantParams::from_config(cfg)?;
    let strategy = parse_strategy(cfg)?;
    let mut loader = Loader::new(records, images_root(manifest, images), params, strategy, seed);
    let schedule = default_schedule(cfg)?;
    let class_weights = if cfg.get_bool("class_weighted")? {
        let labels: Vec<usize> = train_idx
            .iter()
            .filter_map(|&i| match loader.records[i].label {
                Some(AestheticLabel::Low) => Some(0),
                Some(AestheticLabel::High) => Some(1),
                _ => None,
            })
            .collect();
        Some(train::class_weights_for(&labels))
    } else {
        None
    };

    let started = Instant::now();
    let ckpt = run_dir.join("checkpoint.bin");
    let mut trainer = Trainer::new(&mut model, &mut loader, train_idx, seed);
    trainer.class_weights = class_weights;
    trainer.checkpoint_path = Some(ckpt.clone());
    trainer.checkpoint_interval = cfg.get_usize("checkpoint_interval")?;
    trainer.stop_after_epochs = cfg.get_opt_usize("stop_after_epochs")?;
    trainer.config_fingerprint = fingerprint.clone();
    if resume {
        trainer.resume_from_checkpoint(&ckpt)?;
        println!("resumed from {}", ckpt.display());
    }
    let outcome = match trainer.run(&schedule) {
        Ok(outcome) => outcome,
        Err(err @ TrainError::Diverged { .. }) => {
            // Whatever the last checkpoint saw survives as a partial report.
            if let Some(partial) = partial_report_from_checkpoint(
                &ckpt,
                &schedule,
                architecture,
                network,
                started.elapsed().as_secs_f64(),
                &fingerprint,
            ) {
                let path = run_dir.join("report-partial.json");
                if report::write_json(&partial, &path).is_ok() {
                    eprintln!("partial report retained at {}", path.display());
                }
            }
            return Err(err.into());
        }
        Err(other) => return Err(other.into()),
    };
    for stage in &outcome.stages {
        println!(
            "stage {} ({}): {} epochs, final train accuracy {:.4}",
            stage.stage, stage.policy, stage.epochs_run, stage.final_train_accuracy
        );
    }
    if outcome.stopped_early {
        println!(
            "stopped after {} epochs as configured; continue with --resume",
            outcome.total_epochs_done
        );
        return Ok(());
    }

    let batch_size = cfg.get_usize("batch_size")?;
    let test_accuracy = if test_idx.is_empty() {
        None
    } else {
        let eval = train::evaluate(&mut model, &mut loader, &test_idx, "test", batch_size)?;
        if eval.skipped > 0 {
            eprintln!(
                "warning: {} test records had no usable variants and scored as incorrect",
                eval.skipped
            );
        }
        Some(eval.accuracy)
    };
    let report = train::build_report(
        &model,
        outcome.stages,
        test_accuracy,
        started.elapsed().as_secs_f64(),
        fingerprint,
    );
    let report_path = run_dir.join("report.json");
    report::write_json(&report, &report_path)?;
    print!("{}", report::render_run_table(std::slice::from_ref(&report)));
    println!("report: {}", report_path.display());
    Ok(())
}

fn load_model_from_checkpoint(
    path: &Path,
    seed: u64,
) -> Result<(MultiColumnModel, CheckpointMeta), CliError> {
    let (meta_json, blocks) = checkpoint::read_file(path)?;
    let meta: CheckpointMeta = serde_json::from_str(&meta_json).map_err(|e| {
        CliError::Data(format!(
            "checkpoint `{}` has unreadable metadata: {e}",
            path.display()
        ))
    })?;
    let mut model = MultiColumnModel::from_descriptor(&meta.descriptor, seed)?;
    let mut params = model.named_params_mut();
    checkpoint::params_from_blocks(&mut params, &blocks)?;
    drop(params);
    Ok((model, meta))
}

/// Preprocessing must match the geometry the checkpoint was trained for.
fn reconcile_input_size(params: &mut VariantParams, model: &MultiColumnModel) {
    if params.input_size != model.input_size {
        eprintln!(
            "warning: config input_size {} != checkpoint input size {}; using the checkpoint's",
            params.input_size, model.input_size
        );
        params.input_size = model.input_size;
    }
}

fn cmd_eval(
    cfg: &Config,
    manifest: &Path,
    ckpt: &Path,
    split_name: &str,
    images: Option<&Path>,
) -> Result<(), CliError> {
    let split = Split::parse(&split_name.to_uppercase()).ok_or_else(|| {
        CliError::Usage(format!(
            "--split must be train, val, or test, got `{split_name}`"
        ))
    })?;
    let records = ava::read_manifest(manifest)?;
    let indices = split_indices(&records, split);
    let seed = cfg.seed()?;
    let (mut model, meta) = load_model_from_checkpoint(ckpt, seed)?;
    if meta.config_fingerprint != cfg.fingerprint() {
        eprintln!("warning: checkpoint was trained under a different config fingerprint");
    }
    let mut params = VariantParams::from_config(cfg)?;
    reconcile_input_size(&mut params, &model);
    let mut loader = Loader::new(
        records,
        images_root(manifest, images),
        params,
        parse_strategy(cfg)?,
        seed,
    );
    let out = train::evaluate(
        &mut model,
        &mut loader,
        &indices,
        split_name,
        cfg.get_usize("batch_size")?,
    )?;
    println!(
        "{split_name} accuracy: {:.4} ({}/{} correct, {} skipped)",
        out.accuracy, out.correct, out.total, out.skipped
    );
    Ok(())
}

fn cmd_predict(cfg: &Config, image: &Path, ckpt: &Path, average: bool) -> Result<(), CliError> {
    let seed = cfg.seed()?;
    let (mut model, _) = load_model_from_checkpoint(ckpt, seed)?;
    let plane = dataset::load_plane(image)?;
    let mut params = VariantParams::from_config(cfg)?;
    reconcile_input_size(&mut params, &model);
    let pred = train::predict(&mut model, &plane, &params, seed, average)?;
    let plural = if pred.combinations == 1 { "" } else { "s" };
    println!(
        "{}: {} (confidence {:.4}, {} variant combination{plural})",
        image.display(),
        pred.label.token(),
        pred.confidence,
        pred.combinations
    );
    println!(
        "P(LOW) = {:.4}, P(HIGH) = {:.4}",
        pred.probs[0], pred.probs[1]
    );
    Ok(())
}

fn cmd_report(files: &[PathBuf]) -> Result<(), CliError> {
    let mut reports = Vec::new();
    for path in files {
        match report::read_json(path) {
            Ok(r) => reports.push(r),
            Err(e) => eprintln!("warning: skipping report: {e}"),
        }
    }
    if reports.is_empty() {
        return Err(ReportError::Empty.into());
    }
    print!("{}", report::render_run_table(&reports));
    println!();
    print!("{}", report::render_comparison(&reports));
    Ok(())
}
