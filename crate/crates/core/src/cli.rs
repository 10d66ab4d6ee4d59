//! The `gatedclip` command-line front end.
//!
//! Exit codes: 0 on success (including `--help`), 1 on usage errors, 2 on
//! runtime failures. Every subcommand only parses arguments, calls into the
//! library and prints the result.
//!
//! `train` takes an optional flat JSON config file (see `configs/train.json`)
//! whose keys mirror the training, model, optimizer and schedule settings.
//! Command-line flags override the file. Relative `train` / `val` / `out_dir`
//! paths in the file are resolved against the file's directory.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::embedding_store::{
    generate_synthetic, read_embedding_file, write_embedding_file, Dataset, MetaTag,
    SyntheticConfig, SyntheticMode,
};
use crate::error::Error;
use crate::gate_analysis::{export_gate_csv, gate_report};
use crate::model::{Architecture, ModelKind};
use crate::trainer::{evaluate, load_checkpoint, predict_scores, train_with, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "gatedclip",
    version,
    about = "Train and analyse gated fusion heads over frozen image/text embeddings",
    arg_required_else_help = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic embedding file.
    GenSynthetic(GenSyntheticArgs),
    /// Train a model and write metrics and checkpoints to an output directory.
    Train(TrainArgs),
    /// Report AUROC, accuracy and loss of a checkpoint on a labeled file.
    Eval(EvalArgs),
    /// Write `id,score` rows with the hateful-class probability.
    Predict(PredictArgs),
    /// Write per-example gate values and summary statistics as CSV.
    AnalyzeGates(PredictArgs),
    /// Print header and label statistics of an embedding file.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct GenSyntheticArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long, value_parser = parse_mode)]
    pub mode: SyntheticMode,
    #[arg(long, default_value_t = 512)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long)]
    pub seed: u64,
    /// Also draw this many extra records (same directions) into `--val-out`.
    #[arg(long, requires = "val_out")]
    pub val_n: Option<usize>,
    #[arg(long, requires = "val_n")]
    pub val_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_kind)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Suppress per-epoch progress lines.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long, conflicts_with = "path")]
    pub data: Option<PathBuf>,
    /// Same as `--data`.
    #[arg(value_name = "PATH")]
    pub path: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<SyntheticMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Flat training config file. Every key is optional; missing keys take the
/// library defaults, and `dim_in` defaults to the training data's width.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub model_kind: Option<ModelKind>,
    pub seed: Option<u64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub lambda: Option<f64>,
    pub flip_prob: Option<f64>,
    pub peak_lr: Option<f64>,
    pub warmup_epochs: Option<usize>,
    pub min_lr: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
    pub weight_decay: Option<f64>,
    pub max_grad_norm: Option<f64>,
    pub dim_in: Option<usize>,
    pub proj_hidden: Option<usize>,
    pub proj_out: Option<usize>,
    pub gate_hidden: Option<usize>,
    pub cls_hidden: Option<usize>,
    pub num_classes: Option<usize>,
    pub dropout_proj: Option<f64>,
    pub dropout_cls: Option<f64>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> crate::Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ConfigFile = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.train, &mut cfg.val, &mut cfg.out_dir]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Library config with this file's values over the defaults.
    pub fn to_train_config(
        &self,
        kind: ModelKind,
        seed: u64,
        out_dir: PathBuf,
        data_dim: usize,
    ) -> TrainConfig {
        let mut c = TrainConfig::new(kind, seed, out_dir);
        macro_rules! set {
            ($($src:ident => $($dst:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$src.clone() { c.$($dst).+ = v; })*
            };
        }
        c.model.dim_in = data_dim;
        set!(
            batch_size => batch_size,
            max_epochs => max_epochs,
            patience => patience,
            lambda => lambda,
            flip_prob => flip_prob,
            peak_lr => schedule.peak_lr,
            warmup_epochs => schedule.warmup_epochs,
            min_lr => schedule.min_lr,
            beta1 => hyper.beta1,
            beta2 => hyper.beta2,
            eps => hyper.eps,
            weight_decay => hyper.weight_decay,
            max_grad_norm => hyper.max_grad_norm,
            dim_in => model.dim_in,
            proj_hidden => model.proj_hidden,
            proj_out => model.proj_out,
            gate_hidden => model.gate_hidden,
            cls_hidden => model.cls_hidden,
            num_classes => model.num_classes,
            dropout_proj => model.dropout_proj,
            dropout_cls => model.dropout_cls,
        );
        c
    }
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CmdResult = Result<(), Failure>;

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::GenSynthetic(a) => gen_synthetic(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::AnalyzeGates(a) => analyze_gates_cmd(a),
        Command::Inspect(a) => inspect_cmd(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("\nFor more information, try '--help'.");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

/// Creates the parent directory of an output file if needed.
fn ensure_parent(path: &Path) -> crate::Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
        }
        _ => Ok(()),
    }
}

fn gen_synthetic(a: GenSyntheticArgs) -> CmdResult {
    let extra = a.val_n.unwrap_or(0);
    let config = SyntheticConfig {
        n: a.n + extra,
        dim: a.dim,
        mode: a.mode,
        alpha: a.alpha,
        noise_sigma: a.noise,
        seed: a.seed,
    };
    let all = generate_synthetic(&config)?;
    let (main, val) = all.split_at(a.n)?;
    ensure_parent(&a.out)?;
    write_embedding_file(&main, &a.out)?;
    println!(
        "wrote {} records (dim {}) to {}",
        main.len(),
        main.dim(),
        a.out.display()
    );
    if let Some(path) = &a.val_out {
        ensure_parent(path)?;
        write_embedding_file(&val, path)?;
        println!(
            "wrote {} records (dim {}) to {}",
            val.len(),
            val.dim(),
            path.display()
        );
    }
    Ok(())
}

fn train_cmd(a: TrainArgs) -> CmdResult {
    let file = match &a.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let pick = |cli: Option<PathBuf>, cfg: &Option<PathBuf>, flag: &str| {
        cli.or_else(|| cfg.clone())
            .ok_or_else(|| Failure::Usage(format!("--{flag} is required (flag or config file)")))
    };
    let train_path = pick(a.train, &file.train, "train")?;
    let val_path = pick(a.val, &file.val, "val")?;
    let out_dir = pick(a.out_dir, &file.out_dir, "out-dir")?;
    let kind = a.model.or(file.model_kind).unwrap_or(ModelKind::GatedClip);
    let seed = a.seed.or(file.seed).unwrap_or(0);

    let train_ds = read_embedding_file(&train_path)?;
    let val_ds = read_embedding_file(&val_path)?;
    let config = file.to_train_config(kind, seed, out_dir.clone(), train_ds.dim());
    config.validate()?;
    fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
    let resolved = out_dir.join("config.json");
    let json = serde_json::to_string_pretty(&config).map_err(Error::from)?;
    fs::write(&resolved, json + "\n").map_err(io_err(&resolved))?;

    let quiet = a.quiet;
    let result = train_with(&train_ds, &val_ds, &config, |log| {
        if !quiet {
            println!(
                "epoch {:>3}  train {:.4} (cls {:.4}, align {:.4})  val_loss {:.4}  val_auroc {:.4}  val_acc {:.4}  lr {:.3e}",
                log.epoch,
                log.mean_train_total,
                log.mean_train_cls,
                log.mean_train_contrastive,
                log.val_loss,
                log.val_auroc,
                log.val_accuracy,
                log.lr_at_epoch_end
            );
        }
    })?;
    println!(
        "best val_auroc {:.6} at epoch {} of {}; checkpoint {}",
        result.best_val_auroc,
        result.best_epoch,
        result.epochs_run,
        result.best_checkpoint_path.display()
    );
    Ok(())
}

fn load_for_data(
    data: &Path,
    checkpoint: &Path,
) -> crate::Result<(Dataset, crate::trainer::Checkpoint)> {
    let ds = read_embedding_file(data)?;
    let ck = load_checkpoint(checkpoint)?;
    Ok((ds, ck))
}

fn eval_cmd(a: EvalArgs) -> CmdResult {
    let (ds, ck) = load_for_data(&a.data, &a.checkpoint)?;
    let (res, loss) = evaluate(&ds, &ck.params, &ck.arch, ck.meta.lambda)?;
    println!("model: {}", ck.arch.kind);
    println!("n: {}", res.n);
    println!("n_positive: {}", res.n_positive);
    println!("auroc: {:.6}", res.auroc);
    println!("accuracy: {:.6}", res.accuracy);
    println!("loss: {loss:.6}");
    Ok(())
}

fn predict_cmd(a: PredictArgs) -> CmdResult {
    let (ds, ck) = load_for_data(&a.data, &a.checkpoint)?;
    let scores = predict_scores(&ds, &ck.params, &ck.arch)?;
    ensure_parent(&a.out)?;
    let file = File::create(&a.out).map_err(io_err(&a.out))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["id", "score"]).map_err(Error::from)?;
    for (r, s) in ds.records().iter().zip(&scores) {
        w.write_record([r.id.to_string(), format!("{s:.6}")])
            .map_err(Error::from)?;
    }
    w.flush().map_err(io_err(&a.out))?;
    println!("wrote {} scores to {}", scores.len(), a.out.display());
    Ok(())
}

fn analyze_gates_cmd(a: PredictArgs) -> CmdResult {
    let (ds, ck) = load_for_data(&a.data, &a.checkpoint)?;
    let arch: &Architecture = &ck.arch;
    let report = gate_report(&ds, &ck.params, arch)?;
    ensure_parent(&a.out)?;
    export_gate_csv(&report, &a.out)?;
    println!("n: {}", report.per_example.len());
    println!("overall_mean: {:.6}", report.overall_mean);
    println!("overall_std: {:.6}", report.overall_std);
    for (k, v) in &report.group_means {
        println!("group_mean[{k}]: {v:.6}");
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn inspect_cmd(a: InspectArgs) -> CmdResult {
    let path = a
        .data
        .or(a.path)
        .ok_or_else(|| Failure::Usage("inspect needs --data PATH".into()))?;
    let ds = read_embedding_file(&path)?;
    let (benign, hateful, unlabeled) = ds.label_counts();
    let flipped = ds
        .records()
        .iter()
        .filter(|r| r.flipped_image_emb.is_some())
        .count();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let mut emit = || -> std::io::Result<()> {
        writeln!(out, "file: {}", path.display())?;
        writeln!(out, "version: {}", ds.format_version())?;
        writeln!(out, "dim: {}", ds.dim())?;
        writeln!(out, "count: {}", ds.len())?;
        writeln!(
            out,
            "labels: benign={benign} hateful={hateful} unlabeled={unlabeled}"
        )?;
        writeln!(out, "flipped: {flipped}")?;
        if ds.is_tagged() {
            let count = |t| ds.records().iter().filter(|r| r.meta_tag == t).count();
            writeln!(
                out,
                "meta_tags: none={} image_signal={} text_signal={}",
                count(MetaTag::None),
                count(MetaTag::ImageSignal),
                count(MetaTag::TextSignal)
            )?;
        }
        Ok(())
    };
    emit().map_err(|e| Error::io(Path::new("<stdout>"), e))?;
    Ok(())
}
