//! Training loop, evaluation and checkpoints.
//!
//! Each optimizer step runs a train-mode forward pass, the combined
//! objective, backward, global-norm clipping and an AdamW update with the
//! scheduled learning rate. After each epoch the model is evaluated on the
//! validation set; a checkpoint is written whenever validation AUROC strictly
//! improves, and training stops once `patience` epochs pass without one. The
//! best checkpoint is restored at the end.
//!
//! `out_dir/metrics.jsonl` gets one object per epoch with the keys
//!
//! `epoch`, `mean_train_total`, `mean_train_cls`, `mean_train_contrastive`,
//! `val_auroc`, `val_accuracy`, `val_loss`, `lr_at_epoch_end`
//!
//! `epoch` is 1-based and `lr_at_epoch_end` is the rate used by the epoch's
//! last step. Wall-clock times go to `out_dir/timing.jsonl`
//! (`epoch`, `wall_seconds`) so that `metrics.jsonl` is reproducible byte for
//! byte. The best model is `out_dir/best.gcck`.

mod checkpoint;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, save_checkpoint,
    Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

use crate::embedding_store::{make_batches, Dataset, Label};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_scores, EvalResult};
use crate::model::{Architecture, ModelConfig, ModelKind};
use crate::nn_core::{Matrix, Mode, ParameterSet};
use crate::optim::{adamw_step, clip_global_norm, AdamWState, OptimHyper, ScheduleSpec};
use crate::rng::{derive_key, Purpose};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const TIMING_FILE: &str = "timing.jsonl";
pub const BEST_CHECKPOINT: &str = "best.gcck";

/// Rows per forward pass during evaluation and prediction. Evaluation has no
/// randomness, so this only affects speed and float summation order.
pub const EVAL_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model_kind: ModelKind,
    pub model: ModelConfig,
    pub hyper: OptimHyper,
    pub schedule: ScheduleSpec,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lambda: f64,
    pub flip_prob: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl TrainConfig {
    pub fn new(model_kind: ModelKind, seed: u64, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            model_kind,
            model: ModelConfig::default(),
            hyper: OptimHyper::default(),
            schedule: ScheduleSpec::default(),
            batch_size: 32,
            max_epochs: 20,
            patience: 7,
            lambda: 0.01,
            flip_prob: 0.5,
            seed,
            out_dir: out_dir.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.hyper.validate()?;
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.max_epochs == 0 {
            return bad("max_epochs must be >= 1".into());
        }
        if self.model.num_classes < 2 {
            return bad("num_classes must be >= 2 (class 1 is hateful)".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.patience > self.max_epochs {
            return bad(format!(
                "patience ({}) must not exceed max_epochs ({})",
                self.patience, self.max_epochs
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            ));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return bad(format!(
                "flip_prob must be in [0, 1], got {}",
                self.flip_prob
            ));
        }
        self.schedule.resolve(self.max_epochs, 1).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_train_total: f64,
    pub mean_train_cls: f64,
    pub mean_train_contrastive: f64,
    pub val_auroc: f64,
    pub val_accuracy: f64,
    pub val_loss: f64,
    pub lr_at_epoch_end: f64,
    #[serde(skip)]
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub best_epoch: usize,
    pub best_val_auroc: f64,
    pub epochs_run: usize,
    pub logs: Vec<EpochLog>,
    pub best_checkpoint_path: PathBuf,
    pub arch: Architecture,
    /// Parameters restored from the best checkpoint.
    pub params: ParameterSet<f32>,
    /// Learning rate used at every optimizer step, in order.
    pub lr_trace: Vec<f64>,
}

fn check_datasets(train: &Dataset, val: &Dataset, model: &ModelConfig) -> Result<()> {
    for (name, ds) in [("train", train), ("val", val)] {
        if ds.is_empty() {
            return Err(Error::EmptyDataset);
        }
        ds.require_labeled()?;
        if ds.dim() != model.dim_in {
            return Err(Error::InvalidArgument(format!(
                "{name} embeddings have dim {}, model expects {}",
                ds.dim(),
                model.dim_in
            )));
        }
    }
    let (benign, hateful, _) = val.label_counts();
    if benign == 0 || hateful == 0 {
        return Err(Error::SingleClass);
    }
    Ok(())
}

fn append_json_line(out: &mut impl Write, value: &impl Serialize, path: &Path) -> Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    writeln!(out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn train(train_ds: &Dataset, val_ds: &Dataset, config: &TrainConfig) -> Result<TrainResult> {
    train_with(train_ds, val_ds, config, |_| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with(
    train_ds: &Dataset,
    val_ds: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainResult> {
    config.validate()?;
    check_datasets(train_ds, val_ds, &config.model)?;
    let arch = Architecture::new(config.model_kind, config.model.clone())?;

    let steps_per_epoch = train_ds.len().div_ceil(config.batch_size);
    let schedule = config
        .schedule
        .resolve(config.max_epochs, steps_per_epoch)?;

    let out_dir = &config.out_dir;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let metrics_path = out_dir.join(METRICS_FILE);
    let timing_path = out_dir.join(TIMING_FILE);
    let best_path = out_dir.join(BEST_CHECKPOINT);
    let mut metrics_out = create(&metrics_path)?;
    let mut timing_out = create(&timing_path)?;

    let mut params = arch.init_params::<f32>(config.seed)?;
    let mut state = AdamWState::new(&params);
    let mut step: u64 = 0;
    let mut lr_trace = Vec::with_capacity(schedule.total_steps() as usize);
    let mut logs = Vec::new();
    let mut best: Option<(usize, f64)> = None;

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        let batches = make_batches(
            train_ds,
            config.batch_size,
            true,
            config.flip_prob,
            config.seed,
            epoch as u64 - 1,
        )?;
        let (mut sum_total, mut sum_cls, mut sum_con, mut seen) = (0.0, 0.0, 0.0, 0usize);
        let mut lr = 0.0;
        for batch in &batches {
            let key = derive_key(config.seed, Purpose::Dropout, step, 0);
            let (loss, _) = arch.loss_and_grad(
                batch.image.view(),
                batch.text.view(),
                &batch.labels,
                &mut params,
                config.lambda,
                Mode::Train,
                key,
            )?;
            if !loss.total.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            clip_global_norm(&mut params, config.hyper.max_grad_norm)?;
            lr = schedule.lr_at(step);
            adamw_step(&mut params, &mut state, &config.hyper, lr)?;
            lr_trace.push(lr);

            let n = batch.len() as f64;
            sum_total += loss.total * n;
            sum_cls += loss.cls * n;
            sum_con += loss.contrastive * n;
            seen += batch.len();
            step += 1;
        }

        let (val, val_loss) = evaluate(val_ds, &params, &arch, config.lambda)?;
        let seen = seen as f64;
        let log = EpochLog {
            epoch,
            mean_train_total: sum_total / seen,
            mean_train_cls: sum_cls / seen,
            mean_train_contrastive: sum_con / seen,
            val_auroc: val.auroc,
            val_accuracy: val.accuracy,
            val_loss,
            lr_at_epoch_end: lr,
            wall_seconds: started.elapsed().as_secs_f64(),
        };

        if best.is_none_or(|(_, auroc)| log.val_auroc > auroc) {
            best = Some((epoch, log.val_auroc));
            let meta = CheckpointMeta {
                epoch,
                val_auroc: log.val_auroc,
                lambda: config.lambda,
                seed: config.seed,
            };
            save_checkpoint(&best_path, &arch, &params, Some(&state), &meta)?;
        }

        append_json_line(&mut metrics_out, &log, &metrics_path)?;
        append_json_line(
            &mut timing_out,
            &serde_json::json!({ "epoch": epoch, "wall_seconds": log.wall_seconds }),
            &timing_path,
        )?;
        on_epoch(&log);
        logs.push(log);

        let (best_epoch, _) = best.expect("set on the first epoch");
        if epoch - best_epoch >= config.patience {
            break;
        }
    }

    let (best_epoch, best_val_auroc) = best.expect("at least one epoch ran");
    let restored = load_checkpoint_for(&best_path, &arch)?;
    Ok(TrainResult {
        best_epoch,
        best_val_auroc,
        epochs_run: logs.len(),
        logs,
        best_checkpoint_path: best_path,
        arch,
        params: restored.params,
        lr_trace,
    })
}

/// Hateful-class probabilities from an eval-mode forward pass over every
/// record in file order, original image embeddings only.
pub fn predict_scores(
    ds: &Dataset,
    params: &ParameterSet<f32>,
    arch: &Architecture,
) -> Result<Vec<f64>> {
    Ok(eval_pass(ds, params, arch, None)?.0)
}

/// Eval-mode AUROC / accuracy plus the mean combined loss (with `lambda`).
pub fn evaluate(
    ds: &Dataset,
    params: &ParameterSet<f32>,
    arch: &Architecture,
    lambda: f64,
) -> Result<(EvalResult, f64)> {
    ds.require_labeled()?;
    let (scores, loss) = eval_pass(ds, params, arch, Some(lambda))?;
    let labels: Vec<Label> = ds.records().iter().map(|r| r.label).collect();
    Ok((evaluate_scores(&scores, &labels)?, loss))
}

fn eval_pass(
    ds: &Dataset,
    params: &ParameterSet<f32>,
    arch: &Architecture,
    lambda: Option<f64>,
) -> Result<(Vec<f64>, f64)> {
    arch.check_params(params)?;
    if arch.config.num_classes < 2 {
        return Err(Error::InvalidArgument(
            "scoring needs num_classes >= 2 (class 1 is hateful)".into(),
        ));
    }
    if ds.dim() != arch.config.dim_in {
        return Err(Error::InvalidArgument(format!(
            "embeddings have dim {}, model expects {}",
            ds.dim(),
            arch.config.dim_in
        )));
    }
    let batches = make_batches(ds, EVAL_BATCH, false, 0.0, 0, 0)?;
    let mut scores = Vec::with_capacity(ds.len());
    let mut loss_sum = 0.0;
    for batch in &batches {
        let pass = arch.forward(batch.image.view(), batch.text.view(), params, Mode::Eval, 0)?;
        scores.extend(positive_probabilities(pass.logits()));
        if let Some(lambda) = lambda {
            let loss = arch.loss(
                batch.image.view(),
                batch.text.view(),
                &batch.labels,
                params,
                lambda,
                Mode::Eval,
                0,
            )?;
            loss_sum += loss.total * batch.len() as f64;
        }
    }
    Ok((scores, loss_sum / ds.len() as f64))
}

/// Softmax probability of class 1 for each row.
pub fn positive_probabilities(logits: &Matrix<f32>) -> Vec<f64> {
    (0..logits.rows())
        .map(|r| {
            let row: Vec<f64> = logits.row(r).iter().map(|&v| v as f64).collect();
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
            (row[1] - max).exp() / denom
        })
        .collect()
}
