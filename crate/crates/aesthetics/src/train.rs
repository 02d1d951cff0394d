//! Staged training: classifier first, then the top convolutional blocks.
//!
//! Every source of randomness is derived from the run seed, so a run is a
//! pure function of (config, data): interrupting at any checkpoint and
//! resuming replays the identical remaining steps.

use std::path::{Path, PathBuf};

use ndarray::{Array3, Array4, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ava::AestheticLabel;
use crate::backbones::{BackboneError, BackboneKind, HeadSpec, TrainablePolicy};
use crate::checkpoint::{self, CheckpointError};
use crate::config::{derive_seed, Config, ConfigError};
use crate::dataset::{DatasetError, Loader};
use crate::geometry::ImagePlane;
use crate::multicolumn::{
    build_variant, select_column_variant, standard_configs, ModelDescriptor, MultiColumnModel,
    MulticolumnError, SelectMode, SelectStrategy, VariantParams,
};
use crate::nn;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss diverged in stage `{stage}` at epoch {epoch}, batch {batch}")]
    Diverged {
        stage: String,
        epoch: usize,
        batch: usize,
    },
    #[error("split `{split}` has no records")]
    EmptySplit { split: String },
    #[error("checkpoint does not match this run: {detail}")]
    ResumeMismatch { detail: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] MulticolumnError),
    #[error(transparent)]
    Backbone(#[from] BackboneError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainStage {
    pub name: String,
    pub epochs: usize,
    pub policy: TrainablePolicy,
    pub lr: f32,
    pub batch_size: usize,
    pub momentum: f32,
}

/// Scale a nominal epoch count by the profile multiplier, never below one
/// full pass.
pub fn effective_epochs(base: u64, multiplier: f64) -> usize {
    ((base as f64 * multiplier).round() as usize).max(1)
}

/// The standard two-stage schedule: train the fused classifier with the
/// backbones frozen, then unfreeze the top convolutional blocks at a lower
/// rate. AlexNet without pretrained weights has nothing worth protecting,
/// so it trains everything in a single stage.
pub fn default_schedule(cfg: &Config) -> Result<Vec<TrainStage>, TrainError> {
    let kind = BackboneKind::parse(cfg.get("backbone")?)?;
    let multiplier = cfg.get_f64("epoch_multiplier")?;
    let batch_size = cfg.get_usize("batch_size")?;
    let momentum = cfg.get_f32("momentum")?;
    let head_epochs = effective_epochs(cfg.get_u64("epochs_head")?, multiplier);
    if kind == BackboneKind::Alexnet && !cfg.get_bool("pretrained")? {
        return Ok(vec![TrainStage {
            name: "scratch".into(),
            epochs: head_epochs,
            policy: TrainablePolicy::All,
            lr: cfg.get_f32("lr_head")?,
            batch_size,
            momentum,
        }]);
    }
    Ok(vec![
        TrainStage {
            name: "head".into(),
            epochs: head_epochs,
            policy: TrainablePolicy::HeadOnly,
            lr: cfg.get_f32("lr_head")?,
            batch_size,
            momentum,
        },
        TrainStage {
            name: "finetune".into(),
            epochs: effective_epochs(cfg.get_u64("epochs_finetune")?, multiplier),
            policy: TrainablePolicy::HeadPlusTopConv,
            lr: cfg.get_f32("lr_finetune")?,
            batch_size,
            momentum,
        },
    ])
}

/// Build the model the config describes. A single column takes the paper
/// head (or `head_widths`) as its classifier; fused models use
/// `fusion_widths` on top of the concatenated features.
pub fn assemble_from_config(cfg: &Config) -> Result<MultiColumnModel, TrainError> {
    let kind = BackboneKind::parse(cfg.get("backbone")?)?;
    let columns = cfg.get_usize("columns")?;
    let input_size = cfg.get_usize("input_size")?;
    let tail = if columns == 1 {
        let widths = cfg.get_usize_list("head_widths")?;
        if widths.is_empty() {
            HeadSpec::default_for(kind).widths().to_vec()
        } else {
            widths
        }
    } else {
        cfg.get_usize_list("fusion_widths")?
    };
    let (configs, fusion) = standard_configs(columns, kind, input_size, &tail)?;
    Ok(MultiColumnModel::assemble(
        &configs,
        &fusion,
        input_size,
        cfg.seed()?,
    )?)
}

/// Inverse-frequency weights over the two classes, normalized to mean 1.
pub fn class_weights_for(labels: &[usize]) -> [f32; 2] {
    let high = labels.iter().filter(|&&l| l == 1).count();
    let low = labels.len() - high;
    if low == 0 || high == 0 {
        return [1.0, 1.0];
    }
    let total = labels.len() as f32;
    [total / (2.0 * low as f32), total / (2.0 * high as f32)]
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct EpochStat {
    /// 1-based position in the whole run, counting across stages.
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct StageReport {
    pub stage: String,
    pub policy: String,
    pub epochs_planned: usize,
    pub epochs_run: usize,
    pub epoch_stats: Vec<EpochStat>,
    /// Per-batch losses in step order, for trend diagnostics.
    pub step_losses: Vec<f32>,
    pub final_train_accuracy: f64,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub architecture: String,
    pub network: String,
    pub stages: Vec<StageReport>,
    pub final_train_accuracy: f64,
    pub final_test_accuracy: Option<f64>,
    pub wall_seconds: f64,
    pub config_fingerprint: String,
}

impl TrainReport {
    /// Equality of everything a run determines; wall time is measurement
    /// noise.
    pub fn core_eq(&self, other: &TrainReport) -> bool {
        let mut a = self.clone();
        let mut b = other.clone();
        a.wall_seconds = 0.0;
        b.wall_seconds = 0.0;
        a == b
    }
}

/// Everything beyond the weight blocks needed to resume a run.
#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct CheckpointMeta {
    pub descriptor: ModelDescriptor,
    pub stage_index: usize,
    pub epochs_done_in_stage: usize,
    pub total_epochs_done: usize,
    pub completed: Vec<StageReport>,
    pub partial_stats: Vec<EpochStat>,
    pub partial_steps: Vec<f32>,
    pub config_fingerprint: String,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub stages: Vec<StageReport>,
    pub total_epochs_done: usize,
    /// True when the stop-after-epochs hook cut the run short; a resumable
    /// checkpoint was written.
    pub stopped_early: bool,
}

struct ResumePoint {
    stage_index: usize,
    epochs_done_in_stage: usize,
    total_epochs_done: usize,
    completed: Vec<StageReport>,
    partial_stats: Vec<EpochStat>,
    partial_steps: Vec<f32>,
}

pub struct Trainer<'a> {
    pub model: &'a mut MultiColumnModel,
    pub loader: &'a mut Loader,
    pub train_indices: Vec<usize>,
    pub seed: u64,
    pub class_weights: Option<[f32; 2]>,
    pub checkpoint_path: Option<PathBuf>,
    pub checkpoint_interval: usize,
    pub stop_after_epochs: Option<usize>,
    pub config_fingerprint: String,
    resume: Option<ResumePoint>,
}

/// Index of the winning class; exact ties go to LOW.
fn decide(low: f32, high: f32) -> usize {
    usize::from(high > low)
}

impl<'a> Trainer<'a> {
    pub fn new(
        model: &'a mut MultiColumnModel,
        loader: &'a mut Loader,
        train_indices: Vec<usize>,
        seed: u64,
    ) -> Trainer<'a> {
        Trainer {
            model,
            loader,
            train_indices,
            seed,
            class_weights: None,
            checkpoint_path: None,
            checkpoint_interval: 1,
            stop_after_epochs: None,
            config_fingerprint: String::new(),
            resume: None,
        }
    }

    /// Restore weights, optimizer state, and run position from a checkpoint
    /// written by an earlier invocation of the same config.
    pub fn resume_from_checkpoint(&mut self, path: &Path) -> Result<(), TrainError> {
        let (meta_json, blocks) = checkpoint::read_file(path)?;
        let meta: CheckpointMeta =
            serde_json::from_str(&meta_json).map_err(|e| TrainError::ResumeMismatch {
                detail: format!("unreadable metadata: {e}"),
            })?;
        if meta.descriptor != self.model.descriptor() {
            return Err(TrainError::ResumeMismatch {
                detail: "model architecture differs".into(),
            });
        }
        if meta.config_fingerprint != self.config_fingerprint {
            return Err(TrainError::ResumeMismatch {
                detail: format!(
                    "config fingerprint {} != {}",
                    meta.config_fingerprint, self.config_fingerprint
                ),
            });
        }
        let mut params = self.model.named_params_mut();
        checkpoint::params_from_blocks(&mut params, &blocks)?;
        self.resume = Some(ResumePoint {
            stage_index: meta.stage_index,
            epochs_done_in_stage: meta.epochs_done_in_stage,
            total_epochs_done: meta.total_epochs_done,
            completed: meta.completed,
            partial_stats: meta.partial_stats,
            partial_steps: meta.partial_steps,
        });
        Ok(())
    }

    fn write_checkpoint(
        &self,
        stage_index: usize,
        epochs_done_in_stage: usize,
        total_epochs_done: usize,
        completed: &[StageReport],
        partial_stats: &[EpochStat],
        partial_steps: &[f32],
    ) -> Result<(), TrainError> {
        let Some(path) = &self.checkpoint_path else {
            return Ok(());
        };
        let meta = CheckpointMeta {
            descriptor: self.model.descriptor(),
            stage_index,
            epochs_done_in_stage,
            total_epochs_done,
            completed: completed.to_vec(),
            partial_stats: partial_stats.to_vec(),
            partial_steps: partial_steps.to_vec(),
            config_fingerprint: self.config_fingerprint.clone(),
        };
        let meta_json = serde_json::to_string(&meta).expect("meta serializes");
        let blocks = checkpoint::blocks_from_params(&self.model.named_params());
        checkpoint::write_file(path, &meta_json, &blocks)?;
        Ok(())
    }

    /// Run the schedule (or its remainder, after a resume). Exactly
    /// `stage.epochs` passes per stage unless the stop hook fires.
    pub fn run(&mut self, schedule: &[TrainStage]) -> Result<TrainOutcome, TrainError> {
        if self.train_indices.is_empty() {
            return Err(TrainError::EmptySplit {
                split: "train".into(),
            });
        }
        let resume = self.resume.take();
        let (start_stage, mut start_epoch, mut total_done, mut completed, mut stats, mut steps) =
            match resume {
                Some(r) => (
                    r.stage_index,
                    r.epochs_done_in_stage,
                    r.total_epochs_done,
                    r.completed,
                    r.partial_stats,
                    r.partial_steps,
                ),
                None => (0, 0, 0, Vec::new(), Vec::new(), Vec::new()),
            };
        for (si, stage) in schedule.iter().enumerate() {
            if si < start_stage {
                continue;
            }
            self.model.apply_policy(stage.policy);
            for epoch_in_stage in start_epoch..stage.epochs {
                let (loss, accuracy) = self.run_epoch(si, stage, epoch_in_stage, total_done, &mut steps)?;
                total_done += 1;
                stats.push(EpochStat {
                    epoch: total_done,
                    loss,
                    accuracy,
                });
                let stage_over = epoch_in_stage + 1 == stage.epochs;
                let stopping = self.stop_after_epochs.is_some_and(|n| total_done >= n);
                let interval_hit =
                    self.checkpoint_interval > 0 && (epoch_in_stage + 1) % self.checkpoint_interval == 0;
                if interval_hit || stage_over || stopping {
                    self.write_checkpoint(
                        si,
                        epoch_in_stage + 1,
                        total_done,
                        &completed,
                        &stats,
                        &steps,
                    )?;
                }
                if stopping && !(stage_over && si + 1 == schedule.len()) {
                    return Ok(TrainOutcome {
                        stages: completed,
                        total_epochs_done: total_done,
                        stopped_early: true,
                    });
                }
            }
            let final_train_accuracy = stats.last().map_or(0.0, |s| s.accuracy);
            completed.push(StageReport {
                stage: stage.name.clone(),
                policy: stage.policy.name().to_string(),
                epochs_planned: stage.epochs,
                epochs_run: stats.len(),
                epoch_stats: std::mem::take(&mut stats),
                step_losses: std::mem::take(&mut steps),
                final_train_accuracy,
            });
            start_epoch = 0;
        }
        Ok(TrainOutcome {
            stages: completed,
            total_epochs_done: total_done,
            stopped_early: false,
        })
    }

    fn run_epoch(
        &mut self,
        stage_index: usize,
        stage: &TrainStage,
        epoch_in_stage: usize,
        total_done: usize,
        steps: &mut Vec<f32>,
    ) -> Result<(f64, f64), TrainError> {
        let mut order = self.train_indices.clone();
        let shuffle_seed = derive_seed(
            self.seed,
            &[
                "shuffle",
                &stage_index.to_string(),
                &epoch_in_stage.to_string(),
            ],
        );
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
        let mut loss_sum = 0f64;
        let mut correct = 0usize;
        let mut seen = 0usize;
        for (bi, chunk) in order.chunks(stage.batch_size).enumerate() {
            let batch = self.loader.batch(
                chunk,
                &self.model.configs,
                SelectMode::Train { epoch: total_done },
            )?;
            if batch.labels.is_empty() {
                continue;
            }
            let logits = self.model.forward(&batch.inputs, true);
            let weights = self.class_weights.as_ref().map(|w| w.as_slice());
            let out = nn::softmax_cross_entropy(&logits, &batch.labels, weights);
            if !out.loss.is_finite() {
                return Err(TrainError::Diverged {
                    stage: stage.name.clone(),
                    epoch: epoch_in_stage + 1,
                    batch: bi + 1,
                });
            }
            for (row, &label) in logits.rows().into_iter().zip(&batch.labels) {
                if decide(row[0], row[1]) == label {
                    correct += 1;
                }
            }
            seen += batch.labels.len();
            loss_sum += out.loss as f64 * batch.labels.len() as f64;
            steps.push(out.loss);
            self.model.backward(&out.grad);
            let mut params: Vec<&mut nn::Param> = self
                .model
                .named_params_mut()
                .into_iter()
                .map(|(_, p)| p)
                .collect();
            nn::sgd_step(&mut params, stage.lr, stage.momentum);
        }
        let denom = seen.max(1) as f64;
        Ok((loss_sum / denom, correct as f64 / denom))
    }
}

#[derive(Debug)]
pub struct EvalOutcome {
    pub accuracy: f64,
    pub correct: usize,
    /// Records with no constructible variant; they count against accuracy.
    pub skipped: usize,
    pub total: usize,
}

/// Deterministic accuracy under canonical variant selection.
pub fn evaluate(
    model: &mut MultiColumnModel,
    loader: &mut Loader,
    indices: &[usize],
    split_name: &str,
    batch_size: usize,
) -> Result<EvalOutcome, TrainError> {
    if indices.is_empty() {
        return Err(TrainError::EmptySplit {
            split: split_name.into(),
        });
    }
    let mut correct = 0usize;
    let mut skipped = 0usize;
    for chunk in indices.chunks(batch_size.max(1)) {
        let batch = loader.batch(chunk, &model.configs, SelectMode::Eval)?;
        skipped += batch.skipped;
        if batch.labels.is_empty() {
            continue;
        }
        let logits = model.forward(&batch.inputs, false);
        for (row, &label) in logits.rows().into_iter().zip(&batch.labels) {
            if decide(row[0], row[1]) == label {
                correct += 1;
            }
        }
    }
    Ok(EvalOutcome {
        accuracy: correct as f64 / indices.len() as f64,
        correct,
        skipped,
        total: indices.len(),
    })
}

pub struct Prediction {
    pub label: AestheticLabel,
    pub confidence: f64,
    pub probs: [f64; 2],
    /// Variant combinations averaged over (1 without averaging).
    pub combinations: usize,
}

/// Classify one image. `averaging` means the softmax over every feasible
/// combination of per-column menu variants; otherwise each column takes its
/// canonical choice. Exact ties resolve to LOW.
pub fn predict(
    model: &mut MultiColumnModel,
    plane: &ImagePlane,
    params: &VariantParams,
    seed: u64,
    averaging: bool,
) -> Result<Prediction, TrainError> {
    let record_id = "predict";
    let configs = model.configs.clone();
    let mut per_column: Vec<Vec<Array3<f32>>> = Vec::with_capacity(configs.len());
    for (ci, cfg) in configs.iter().enumerate() {
        if averaging {
            let feasible: Vec<Array3<f32>> = cfg
                .menu
                .iter()
                .filter_map(|&v| build_variant(plane, v, params, record_id, seed).ok())
                .collect();
            if feasible.is_empty() {
                return Err(MulticolumnError::NoVariant { column: ci + 1 }.into());
            }
            per_column.push(feasible);
        } else {
            let (_, tensor) = select_column_variant(
                &cfg.menu,
                ci,
                SelectMode::Eval,
                SelectStrategy::Canonical,
                seed,
                record_id,
                |v| build_variant(plane, v, params, record_id, seed),
            )?;
            per_column.push(vec![tensor]);
        }
    }
    let combos: usize = per_column.iter().map(Vec::len).product();
    let s = params.input_size;
    // One forward pass with a row per combination, walked in mixed-radix
    // order over the per-column choices.
    let mut inputs: Vec<Array4<f32>> = per_column
        .iter()
        .map(|_| Array4::<f32>::zeros((combos, 3, s, s)))
        .collect();
    for combo in 0..combos {
        let mut rest = combo;
        for (ci, choices) in per_column.iter().enumerate() {
            let pick = rest % choices.len();
            rest /= choices.len();
            inputs[ci]
                .index_axis_mut(Axis(0), combo)
                .assign(&choices[pick]);
        }
    }
    let logits = model.forward(&inputs, false);
    let mut probs = [0f64; 2];
    for row in logits.rows() {
        let p = nn::softmax_row(&[row[0], row[1]]);
        probs[0] += p[0] as f64;
        probs[1] += p[1] as f64;
    }
    probs[0] /= combos as f64;
    probs[1] /= combos as f64;
    let label = if probs[1] > probs[0] {
        AestheticLabel::High
    } else {
        AestheticLabel::Low
    };
    let confidence = probs[usize::from(label == AestheticLabel::High)];
    Ok(Prediction {
        label,
        confidence,
        probs,
        combinations: combos,
    })
}

/// Assemble a TrainReport from a finished run.
pub fn build_report(
    model: &MultiColumnModel,
    stages: Vec<StageReport>,
    final_test_accuracy: Option<f64>,
    wall_seconds: f64,
    config_fingerprint: String,
) -> TrainReport {
    let final_train_accuracy = stages.last().map_or(0.0, |s| s.final_train_accuracy);
    let architecture = model
        .configs
        .first()
        .map_or("?", |c| c.kind.name())
        .to_string();
    TrainReport {
        architecture,
        network: model.network_label().to_string(),
        stages,
        final_train_accuracy,
        final_test_accuracy,
        wall_seconds,
        config_fingerprint,
    }
}
