//! The `mfdp` command line.
//!
//! Exit codes: 0 success, 1 usage, 2 I/O or unreadable data, 3 contract or
//! configuration violation, 4 training diverged.

mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::{EvalConfig, Paths, RunConfig};

use crate::cfa::{add_gaussian_noise, demosaic_nn, mosaic, NoiseSpec, RgbImage, Task};
use crate::error::{Error, Result};
use crate::io::{read_mosaic, read_rgb, write_mosaic, write_rgb};
use crate::metrics::{ms_ssim, psnr, ssim, MetricReport, MetricRow};
use crate::model::{load_checkpoint, MfdpModel, ModelConfig};
use crate::synth;
use crate::tensor::{Precision, Tensor};
use crate::train::Trainer;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_CONTRACT: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

/// Published sizes of the presets, in parameters.
pub const PUBLISHED_SIZES: [(&str, f64); 4] =
    [("default", 5.91e6), ("mfdp1", 5.91e6), ("mfdp2", 5.95e6), ("mfdp3", 5.98e6)];

#[derive(Debug, Parser)]
#[command(name = "mfdp", version, about = "Bayer demosaicking with a multi-scale spectral network")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate RGGB capture of an RGB image.
    Mosaic(MosaicArgs),
    /// Reconstruct RGB from a mosaic.
    Demosaic(DemosaicArgs),
    /// Train from a run configuration.
    Train(TrainArgs),
    /// Evaluate on a directory of RGB images.
    Eval(EvalArgs),
    /// Write procedural textured test images.
    Synth(SynthArgs),
    /// Print the parameter breakdown of a model.
    Params(ParamsArgs),
}

#[derive(Debug, Args)]
pub struct MosaicArgs {
    /// RGB input (P6 or PFM).
    pub input: PathBuf,
    /// Mosaic output (P5, or PFM for a `.pfm` extension).
    pub output: PathBuf,
    /// Additive Gaussian noise level in 8-bit units.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the mosaic as lossless PFM.
    #[arg(long)]
    pub pfm: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// Nearest-neighbour sample duplication.
    Nn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    High,
    Standard,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::High => Precision::High,
            PrecisionArg::Standard => Precision::Standard,
        }
    }
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["checkpoint", "method"]))]
pub struct DemosaicArgs {
    /// Mosaic input (P5 or PFM).
    pub input: PathBuf,
    /// RGB output (P6, or PFM for a `.pfm` extension).
    pub output: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    /// Noise level of the input in 8-bit units, for joint-denoise models.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Reference RGB image; prints PSNR and SSIM against it.
    #[arg(long = "ref")]
    pub reference: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "standard")]
    pub precision: PrecisionArg,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run configuration (TOML).
    pub config: PathBuf,
    /// Override a configuration key, e.g. `--set train.steps=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Overrides `paths.out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `paths.train_dir`.
    #[arg(long)]
    pub train_dir: Option<PathBuf>,
    /// Overrides `paths.val_dir`.
    #[arg(long)]
    pub val_dir: Option<PathBuf>,
    /// Overrides `paths.resume`.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Overrides `train.steps`.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Overrides `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["checkpoint", "method"]))]
pub struct EvalArgs {
    /// Run configuration (TOML); defaults apply without one.
    pub config: Option<PathBuf>,
    /// Overrides `paths.checkpoint`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    /// Overrides `paths.eval_dir`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Overrides `eval.sigmas`; comma-separated 8-bit levels.
    #[arg(long, value_delimiter = ',')]
    pub sigma: Vec<f64>,
    /// Overrides `paths.out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `eval.save_images`.
    #[arg(long)]
    pub save_images: bool,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = 128)]
    pub height: usize,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write PFM instead of 8-bit P6.
    #[arg(long)]
    pub float: bool,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[arg(long, default_value = "default", conflicts_with = "config")]
    pub preset: String,
    /// Take the model from a run configuration instead.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Name segments to group by.
    #[arg(long, default_value_t = 1)]
    pub depth: usize,
}

/// A failed invocation: bad arguments or a library error.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Run(e) => match e {
                Error::Io { .. } | Error::Format { .. } | Error::CheckpointChecksum { .. } | Error::CheckpointVersion { .. } => {
                    EXIT_IO
                }
                Error::Contract { .. } | Error::Config { .. } | Error::ConfigMismatch(_) => EXIT_CONTRACT,
                Error::NonFinite { .. } | Error::Diverged { .. } => EXIT_DIVERGED,
            },
        }
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Messages go to stdout and stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("mfdp: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Mosaic(a) => cmd_mosaic(a),
        Command::Demosaic(a) => cmd_demosaic(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Params(a) => cmd_params(a),
    }
}

fn sigma_level(op: &str, sigma: f64) -> Result<f64, CliError> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(CliError::Usage(format!("{op}: --sigma must be a level ≥ 0, got {sigma}")));
    }
    Ok(sigma / 255.0)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Path of the metadata written next to a noisy mosaic.
pub fn sidecar_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

fn cmd_mosaic(a: MosaicArgs) -> Result<(), CliError> {
    let rgb = read_rgb(&a.input)?;
    let sigma = a.sigma.map(|s| sigma_level("mosaic", s)).transpose()?.unwrap_or(0.0);
    let mut bayer = mosaic(&rgb);
    if sigma > 0.0 {
        bayer = add_gaussian_noise(&bayer, NoiseSpec { sigma, seed: a.seed })?;
    }
    write_mosaic(&a.output, &bayer)?;
    if let Some(p) = &a.pfm {
        write_mosaic(p, &bayer)?;
    }
    if sigma > 0.0 {
        let meta = serde_json::json!({
            "source": a.input,
            "cfa": "RGGB",
            "sigma_8bit": a.sigma,
            "sigma": sigma,
            "seed": a.seed,
        });
        let text = serde_json::to_string_pretty(&meta).expect("JSON value") + "\n";
        write_text(&sidecar_path(&a.output), &text)?;
    }
    Ok(())
}

fn cmd_demosaic(a: DemosaicArgs) -> Result<(), CliError> {
    let bayer = read_mosaic(&a.input)?;
    let sigma = a.sigma.map(|s| sigma_level("demosaic", s)).transpose()?;
    let out = match (&a.checkpoint, a.method) {
        (Some(path), _) => {
            let model = MfdpModel::load(path, None)?;
            model.demosaic(&bayer, sigma, a.precision.into())?
        }
        (None, Some(Method::Nn)) => {
            if sigma.is_some() {
                return Err(CliError::Usage("--sigma applies only to joint-denoise checkpoints".into()));
            }
            demosaic_nn(&bayer)
        }
        (None, None) => unreachable!("clap requires a source"),
    };
    write_rgb(&a.output, &out)?;
    if let Some(r) = &a.reference {
        let reference = read_rgb(r)?;
        let (p, s) = (psnr(out.tensor(), reference.tensor())?, ssim(out.tensor(), reference.tensor())?);
        println!("psnr_db={p}");
        println!("ssim={s}");
    }
    Ok(())
}

/// RGB images (`.ppm`, `.pfm`) of a directory in file-name order.
pub fn load_dataset(dir: &Path) -> Result<Vec<(String, RgbImage)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("ppm" | "pfm")) {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        let e = std::io::Error::new(std::io::ErrorKind::NotFound, "no .ppm or .pfm images");
        return Err(Error::io(dir, e));
    }
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, read_rgb(&p)?))
        })
        .collect()
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    let mut sets = a.sets.clone();
    let mut flag = |key: &str, v: Option<String>| {
        if let Some(v) = v {
            sets.push(format!("{key}={}", toml::Value::String(v)));
        }
    };
    let path_str = |p: &Option<PathBuf>| p.as_ref().map(|p| p.to_string_lossy().into_owned());
    flag("paths.out_dir", path_str(&a.out));
    flag("paths.train_dir", path_str(&a.train_dir));
    flag("paths.val_dir", path_str(&a.val_dir));
    flag("paths.resume", path_str(&a.resume));
    if let Some(s) = a.steps {
        sets.push(format!("train.steps={s}"));
    }
    if let Some(s) = a.seed {
        sets.push(format!("train.seed={s}"));
    }
    let cfg = RunConfig::load(&a.config, &sets)?;
    let train_dir = cfg.paths.train_dir.as_ref().ok_or_else(|| Error::config("paths.train_dir", "is required for training"))?;
    let data: Vec<RgbImage> = load_dataset(train_dir)?.into_iter().map(|(_, im)| im).collect();
    let val: Vec<RgbImage> = match &cfg.paths.val_dir {
        Some(d) => load_dataset(d)?.into_iter().map(|(_, im)| im).collect(),
        None => Vec::new(),
    };
    let out = &cfg.paths.out_dir;
    create_dir(out)?;
    write_text(&out.join("config.toml"), &cfg.to_toml())?;

    let mut trainer = match &cfg.paths.resume {
        Some(p) => {
            let mut t = Trainer::resume(load_checkpoint(p, Some(&cfg.model))?)?;
            t.set_total_steps(cfg.train.steps);
            t
        }
        None => {
            let model = MfdpModel::build(cfg.model.clone(), cfg.train.seed)?;
            Trainer::new(model, cfg.train.clone(), cfg.loss.clone())?
        }
    };
    trainer.run(&data, &val, Some(out))?;
    let last = trainer.history().last();
    println!(
        "trained {} steps; final loss {}; checkpoint {}",
        trainer.step_count(),
        last.map_or(f64::NAN, |r| r.loss),
        out.join("final.ckpt").display()
    );
    Ok(())
}

/// `|a − b|` magnified 4× for viewing.
fn error_image(a: &Tensor, b: &Tensor) -> Result<RgbImage> {
    let d = a.data().iter().zip(b.data()).map(|(x, y)| (4.0 * (x - y).abs()).min(1.0)).collect();
    RgbImage::new(Tensor::new(a.shape(), d)?)
}

/// Seed of the capture noise for one image and level.
fn noise_seed(base: u64, image: usize, level: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add((image as u64) << 16 | level as u64)
}

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    let mut sets = a.sets.clone();
    let quoted = |p: &Path| toml::Value::String(p.to_string_lossy().into_owned()).to_string();
    if let Some(p) = &a.checkpoint {
        sets.push(format!("paths.checkpoint={}", quoted(p)));
    }
    if let Some(p) = &a.dataset {
        sets.push(format!("paths.eval_dir={}", quoted(p)));
    }
    if let Some(p) = &a.out {
        sets.push(format!("paths.out_dir={}", quoted(p)));
    }
    if !a.sigma.is_empty() {
        let list: Vec<String> = a.sigma.iter().map(|s| format!("{s:?}")).collect();
        sets.push(format!("eval.sigmas=[{}]", list.join(",")));
    }
    if a.save_images {
        sets.push("eval.save_images=true".into());
    }
    let cfg = match &a.config {
        Some(p) => RunConfig::load(p, &sets)?,
        None => RunConfig::parse("", &sets)?,
    };
    let dir = cfg.paths.eval_dir.as_ref().ok_or_else(|| CliError::Usage("eval needs --dataset DIR".into()))?;
    let images = load_dataset(dir)?;
    let model = match a.method {
        Some(Method::Nn) => None,
        None => {
            let path = cfg.paths.checkpoint.as_ref().ok_or_else(|| CliError::Usage("eval needs --checkpoint".into()))?;
            Some((path.clone(), MfdpModel::load(path, None)?))
        }
    };
    let label = match &model {
        None => "nn".to_string(),
        Some((p, _)) => p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into()),
    };
    let dataset = cfg.eval.dataset_name.clone().unwrap_or_else(|| {
        dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "dataset".into())
    });
    let out = &cfg.paths.out_dir;
    create_dir(out)?;
    write_text(&out.join("config.toml"), &cfg.to_toml())?;
    if cfg.eval.save_images {
        create_dir(&out.join("images"))?;
    }

    let mut report = MetricReport::default();
    for (level, &s8) in cfg.eval.sigmas.iter().enumerate() {
        for (i, (name, target)) in images.iter().enumerate() {
            let sigma = s8 / 255.0;
            let clean = mosaic(target);
            let observed = add_gaussian_noise(&clean, NoiseSpec { sigma, seed: noise_seed(cfg.eval.seed, i, level) })?;
            let pred = match &model {
                None => demosaic_nn(&observed),
                Some((_, m)) => {
                    let noise = (m.config().task == Task::JointDenoise).then_some(sigma);
                    m.demosaic(&observed, noise, cfg.eval.precision)?
                }
            };
            let (p, t) = (pred.tensor(), target.tensor());
            report.push(MetricRow {
                dataset: dataset.clone(),
                config: label.clone(),
                sigma: s8,
                image: name.clone(),
                psnr: psnr(p, t)?,
                ssim: ssim(p, t)?,
                ms_ssim: ms_ssim(p, t)?,
            });
            if cfg.eval.save_images {
                let stem = format!("{name}_s{s8}");
                write_rgb(&out.join("images").join(format!("{stem}.ppm")), &pred)?;
                write_rgb(&out.join("images").join(format!("{stem}_err.ppm")), &error_image(p, t)?)?;
            }
        }
    }
    write_text(&out.join("metrics.csv"), &report.to_csv())?;
    let md = report.to_markdown();
    write_text(&out.join("metrics.md"), &md)?;
    print!("{md}");
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<(), CliError> {
    create_dir(&a.out_dir)?;
    let images = synth::dataset(a.seed, a.count, a.height, a.width)?;
    let ext = if a.float { "pfm" } else { "ppm" };
    for (i, im) in images.iter().enumerate() {
        write_rgb(&a.out_dir.join(format!("synth-{i:04}.{ext}")), im)?;
    }
    println!("wrote {} images to {}", images.len(), a.out_dir.display());
    Ok(())
}

fn cmd_params(a: ParamsArgs) -> Result<(), CliError> {
    let cfg = match &a.config {
        Some(p) => RunConfig::load(p, &[])?,
        None => RunConfig::for_preset(&a.preset)?,
    };
    let model = MfdpModel::build(cfg.model.clone(), 0)?;
    let total = model.param_count();
    println!("{:<32} {:>12}", "module", "parameters");
    for (name, count) in model.param_breakdown(a.depth.max(1)) {
        println!("{name:<32} {count:>12}");
    }
    println!("{:<32} {total:>12}", "total");
    let published = PUBLISHED_SIZES.iter().find(|(p, _)| *p == cfg.preset);
    if let Some((_, published)) = published.filter(|_| ModelConfig::preset(&cfg.preset).ok().as_ref() == Some(&cfg.model)) {
        let rel = (total as f64 - published) / published;
        println!("published {:.2}M, deviation {:+.1}%", published / 1e6, 100.0 * rel);
    }
    Ok(())
}
