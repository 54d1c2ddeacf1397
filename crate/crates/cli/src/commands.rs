//! Subcommand implementations. Each returns data for the caller to print so
//! the same code paths serve the binary and the tests.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ssformer::checks::{conv2d_mutant_check, run_suite, standard_suite, CheckResult};
use ssformer::data::{
    load_checkpoint, load_dataset_dir, load_image, resize_image, resize_mask, save_checkpoint, save_dataset_dir,
    save_netpbm, synth_dataset, Sample,
};
use ssformer::encoder::attention_heatmap;
use ssformer::pld::feature_heatmap;
use ssformer::training::{evaluate, log_row, threshold_logits, train_epoch, AdamW, EvalStats, Schedule, LOG_HEADER};
use ssformer::{Model32, SeededRng, Tape, Tensor};

use crate::config::{ConfigError, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] ssformer::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 for numerical divergence, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(ssformer::Error::DivergenceDetected { .. }) => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(io_err(path))
}

fn non_empty(samples: Vec<Sample>, what: &Path) -> CliResult<Vec<Sample>> {
    if samples.is_empty() {
        return Err(CliError::Usage(format!("no samples in {}", what.display())));
    }
    Ok(samples)
}

fn load_dir(dir: &Path, size: usize) -> CliResult<Vec<Sample>> {
    if !dir.join("images").is_dir() {
        return Err(CliError::Usage(format!("no samples in {}", dir.display())));
    }
    non_empty(load_dataset_dir(dir, size)?, dir)
}

/// Training and validation sets named by the config.
pub fn datasets(cfg: &RunConfig) -> CliResult<(Vec<Sample>, Vec<Sample>)> {
    if cfg.synthetic {
        let train = synth_dataset(cfg.synth_train, cfg.size, cfg.synth_seed)?;
        let val = synth_dataset(cfg.synth_val, cfg.size, cfg.synth_val_seed())?;
        return Ok((train, val));
    }
    let dir = cfg
        .dir
        .as_ref()
        .ok_or_else(|| CliError::Usage("data.dir is required when data.synthetic=off".into()))?;
    let train = load_dir(dir, cfg.size)?;
    let val = match &cfg.val_dir {
        Some(v) => load_dir(v, cfg.size)?,
        None => train.clone(),
    };
    Ok((train, val))
}

pub struct TrainOutcome {
    pub model: Model32,
    /// Validation metrics after the last epoch; `None` when no epoch ran.
    pub last_val: Option<EvalStats>,
}

/// Trains per config, writing `model.ckpt`, `log.csv`, `run.log` and
/// `config.txt` under `out`. On divergence the log so far is kept.
pub fn train(cfg: &RunConfig, out: &Path) -> CliResult<TrainOutcome> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    write_file(&out.join("config.txt"), &cfg.source)?;
    let (train_set, val_set) = datasets(cfg)?;
    let mut model = Model32::new(&cfg.model(), cfg.seed)?;
    let mut opt = AdamW::new(&model.params, cfg.lr, cfg.weight_decay);
    let schedule = Schedule {
        base_lr: cfg.lr,
        total_epochs: cfg.epochs,
        ..Schedule::default()
    };
    let mut rng = SeededRng::substream(cfg.seed, 1);
    let mut csv = format!("{LOG_HEADER}\n");
    let mut run_log = format!("# config\n{}\n# epochs\n", cfg.source.trim_end());
    log::info!(
        "training {} samples, validating on {}, {} parameters",
        train_set.len(),
        val_set.len(),
        model.params.numel()
    );
    let mut last_val = None;
    let mut failure = None;
    for epoch in 0..cfg.epochs {
        let lr = schedule.lr_at(epoch)?;
        opt.lr = lr;
        let stats = match train_epoch(&mut model, &train_set, &mut opt, &mut rng, cfg.batch, cfg.augment) {
            Ok(s) => s,
            Err(e) => {
                let _ = writeln!(run_log, "epoch {epoch}: {e}");
                failure = Some(e);
                break;
            }
        };
        let val = evaluate(&model, &val_set, cfg.batch)?;
        let row = log_row(epoch, lr, &stats, &val);
        log::info!("{row}");
        let _ = writeln!(csv, "{row}");
        let _ = writeln!(run_log, "{row}");
        last_val = Some(val);
    }
    write_file(&out.join("log.csv"), &csv)?;
    write_file(&out.join("run.log"), &run_log)?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    save_checkpoint(&model.params.to_named(), out.join("model.ckpt"))?;
    Ok(TrainOutcome { model, last_val })
}

/// Builds the configured architecture and fills it from a checkpoint.
pub fn load_model(cfg: &RunConfig, ckpt: &Path) -> CliResult<Model32> {
    let mut model = Model32::new(&cfg.model(), 0)?;
    model.params.load_named(&load_checkpoint(ckpt)?)?;
    Ok(model)
}

pub fn format_metrics(stats: &EvalStats) -> String {
    format!("mDice={:.6} mIoU={:.6}", stats.mdice, stats.miou)
}

/// Evaluates on `data`, or on the configured validation data.
pub fn eval(cfg: &RunConfig, ckpt: &Path, data: Option<&Path>) -> CliResult<EvalStats> {
    let model = load_model(cfg, ckpt)?;
    let samples = match data {
        Some(dir) => load_dir(dir, cfg.size)?,
        None => datasets(cfg)?.1,
    };
    Ok(evaluate(&model, &samples, cfg.batch)?)
}

fn model_input(image: &Tensor<f32>, size: usize) -> CliResult<Tensor<f32>> {
    let resized = resize_image(image, (size, size))?;
    Ok(Tensor::stack(&[resized])?)
}

/// Writes a binary P5 mask at the input image's resolution.
pub fn predict(cfg: &RunConfig, ckpt: &Path, image_path: &Path, out: &Path) -> CliResult<()> {
    let model = load_model(cfg, ckpt)?;
    let image: Tensor<f32> = load_image(image_path)?;
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let logits = model.predict_logits(&model_input(&image, cfg.size)?)?;
    let mask = threshold_logits(&logits.reshaped(&logits.shape()[1..])?);
    save_netpbm(&resize_mask(&mask, (h, w))?, out)?;
    Ok(())
}

/// Runs the verification suite; `mutant` swaps in a deliberately broken
/// conv2d gradient.
pub fn gradcheck(mutant: bool) -> Vec<CheckResult> {
    let mut checks = standard_suite();
    if mutant {
        for c in checks.iter_mut().filter(|c| c.name == "conv2d") {
            *c = conv2d_mutant_check();
        }
    }
    run_suite(&checks)
}

pub fn format_check(r: &CheckResult) -> String {
    match &r.outcome {
        Ok(e) => format!(
            "{:<22} max_rel_err={e:.3e} tol={:.0e} {}",
            r.name,
            r.tolerance,
            if r.passed() { "ok" } else { "FAIL" }
        ),
        Err(msg) => format!("{:<22} error: {msg} FAIL", r.name),
    }
}

/// Writes `stage<i>_{raw,le,fused}.pgm` and `attn<i>.pgm` for i = 1..4 and
/// returns the written paths.
pub fn heatmap(cfg: &RunConfig, ckpt: &Path, image_path: &Path, out: &Path) -> CliResult<Vec<PathBuf>> {
    let model = load_model(cfg, ckpt)?;
    let image: Tensor<f32> = load_image(image_path)?;
    let tape = Tape::new();
    let p = model.params.bind_frozen(&tape);
    let x = tape.constant(model_input(&image, cfg.size)?);
    let result = model.forward(&tape, &p, x, true)?;
    let records = result.attention.as_deref().unwrap_or(&[]);
    fs::create_dir_all(out).map_err(io_err(out))?;
    let mut written = Vec::new();
    for i in 0..4 {
        let maps = [
            ("raw", result.pyramid.maps[i]),
            ("le", result.decoder.emphasized[i]),
            ("fused", result.decoder.fused[i]),
        ];
        for (kind, var) in maps {
            let path = out.join(format!("stage{}_{kind}.pgm", i + 1));
            save_netpbm(&feature_heatmap(&tape.value(var))?, &path)?;
            written.push(path);
        }
        let record = records.get(i);
        let query = record.map_or(0, |r| (r.grid.0 / 2) * r.grid.1 + r.grid.1 / 2);
        let path = out.join(format!("attn{}.pgm", i + 1));
        save_netpbm(&attention_heatmap(record, query)?, &path)?;
        written.push(path);
    }
    Ok(written)
}

pub fn synth(n: usize, size: usize, seed: u64, out: &Path) -> CliResult<()> {
    save_dataset_dir(&synth_dataset(n, size, seed)?, out)?;
    Ok(())
}
