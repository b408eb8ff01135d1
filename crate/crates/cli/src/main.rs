use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sldm::io::{png, FlatTensor};
use sldm::saem::{region_histogram, roi_mean, run_saem, BilateralConfig};
use sldm::ImageGrid;
use sldm_cli::config::RunConfig;
use sldm_cli::error::{Error, Result};
use sldm_cli::pipeline::{Run, Stage, StageStatus};
use sldm_cli::verify::verify_suite;

#[derive(Parser)]
#[command(name = "sldm", version, about = "Structure-preserving enhancement of low-dose contrast CT phantoms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the phantom dataset.
    GenData(RunArgs),
    /// Pretrain the descriptor/image alignment model.
    PretrainClip(RunArgs),
    /// Train the score network.
    Train(RunArgs),
    /// Sample enhanced test images.
    Sample(RunArgs),
    /// Subtraction enhancement of the samples, or of a standalone mask/fill pair.
    Saem(SaemArgs),
    /// Metrics of the samples on the test split.
    Eval(RunArgs),
    /// Numerical verification suite; exits with 1 when a check fails.
    Verify(RunArgs),
    /// Write report.md for the run directory.
    Report(RunArgs),
    /// Every enabled stage in order.
    Run(RunArgs),
    /// Print the resolved config as TOML.
    Config(RunArgs),
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// TOML config file; its values override the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Starting point: default, desk or tiny.
    #[arg(long)]
    preset: Option<String>,
    /// Run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Diffusion steps T.
    #[arg(long)]
    steps: Option<usize>,
    /// Phantom side length in pixels.
    #[arg(long)]
    size: Option<usize>,
    /// Score-network training iterations.
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed_data: Option<u64>,
    #[arg(long)]
    seed_training: Option<u64>,
    #[arg(long)]
    seed_sampling: Option<u64>,
    /// Save chain snapshots every T/10 steps.
    #[arg(long)]
    snapshots: bool,
    /// Sample without descriptor conditioning.
    #[arg(long)]
    no_semantic: bool,
}

#[derive(Args, Clone)]
struct SaemArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Mask (degraded input) image, PNG or flat tensor. Enables standalone mode.
    #[arg(long, requires = "fill")]
    mask: Option<PathBuf>,
    /// Fill (enhanced) image, PNG or flat tensor.
    #[arg(long, requires = "mask")]
    fill: Option<PathBuf>,
    /// Fusion weight; repeat for a sweep.
    #[arg(long = "lambda")]
    lambdas: Vec<f64>,
    #[arg(long)]
    sigma_space: Option<f64>,
    #[arg(long)]
    sigma_range: Option<f64>,
    /// Region of interest for the reported mean and histogram.
    #[arg(long)]
    roi: Option<PathBuf>,
    /// Directory for standalone outputs.
    #[arg(long, default_value = "saem_out")]
    output: PathBuf,
}

impl RunArgs {
    /// Preset, then config file, then explicit flags.
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = match (&self.config, &self.preset) {
            (Some(path), preset) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?;
                let base = RunConfig::preset(preset.as_deref().unwrap_or("default"))?;
                merge_toml(&base, &text)?
            }
            (None, Some(p)) => RunConfig::preset(p)?,
            (None, None) => RunConfig::default(),
        };
        if let Some(v) = &self.out {
            c.out_dir = v.clone();
        }
        if let Some(v) = self.steps {
            c.schedule.steps = v;
        }
        if let Some(v) = self.size {
            c.phantom.size = v;
        }
        if let Some(v) = self.iterations {
            c.training.iterations = v;
        }
        if let Some(v) = self.seed_data {
            c.seeds.data = v;
        }
        if let Some(v) = self.seed_training {
            c.seeds.training = v;
        }
        if let Some(v) = self.seed_sampling {
            c.seeds.sampling = v;
        }
        if self.snapshots {
            c.sampling.snapshots = true;
        }
        if self.no_semantic {
            c.sampling.semantic = false;
        }
        Ok(c)
    }
}

/// Overlays the tables of `text` on `base`.
fn merge_toml(base: &RunConfig, text: &str) -> Result<RunConfig> {
    let mut merged: toml::Table = toml::from_str(&base.to_toml()).map_err(|e| Error::Runtime(e.to_string()))?;
    let over: toml::Table = toml::from_str(text).map_err(|e| Error::Usage(format!("config: {e}")))?;
    fn overlay(dst: &mut toml::Table, src: toml::Table) {
        for (k, v) in src {
            match (dst.get_mut(&k), v) {
                (Some(toml::Value::Table(d)), toml::Value::Table(s)) => overlay(d, s),
                (_, v) => {
                    dst.insert(k, v);
                }
            }
        }
    }
    overlay(&mut merged, over);
    RunConfig::from_toml(&toml::to_string(&merged).map_err(|e| Error::Runtime(e.to_string()))?)
}

fn read_image(path: &Path) -> Result<ImageGrid> {
    let grid = match path.extension().and_then(|e| e.to_str()) {
        Some("png") => png::read_gray(path)?,
        _ => FlatTensor::load(path)?.to_grid()?,
    };
    Ok(grid.extract_channel(0)?)
}

fn standalone_saem(a: &SaemArgs, mask: &Path, fill: &Path) -> Result<()> {
    let mut bilateral = BilateralConfig::default();
    if let Some(v) = a.sigma_space {
        bilateral.sigma_space = v;
    }
    if let Some(v) = a.sigma_range {
        bilateral.sigma_range = v;
    }
    bilateral.validate().map_err(|e| Error::Usage(e.to_string()))?;
    let lambdas = if a.lambdas.is_empty() { vec![1.0] } else { a.lambdas.clone() };
    if lambdas.iter().any(|&l| !(l >= 0.0)) {
        return Err(Error::Usage("--lambda must be non-negative".into()));
    }
    let (mask, fill) = (read_image(mask)?, read_image(fill)?);
    let roi = a.roi.as_deref().map(read_image).transpose()?;
    std::fs::create_dir_all(&a.output)?;
    println!("lambda,roi_mean,file");
    for lambda in lambdas {
        let r = run_saem(&mask, &fill, lambda, &bilateral)?;
        let name = format!("saem_lambda{lambda:.2}.png");
        png::write_gray16(a.output.join(&name), &r.x_out)?;
        FlatTensor::from_grid(&r.x_out).save(a.output.join(format!("saem_lambda{lambda:.2}.sldm")))?;
        let mean = match &roi {
            Some(roi) => {
                let h = region_histogram(&r.x_out, roi, 32)?;
                let mut csv = String::from("bin,center,count\n");
                for (k, n) in h.counts.iter().enumerate() {
                    csv += &format!("{k},{:.6},{n}\n", h.bin_center(k));
                }
                std::fs::write(a.output.join(format!("histogram_lambda{lambda:.2}.csv")), csv)?;
                roi_mean(&r.x_out, roi)?
            }
            None => r.x_out.mean(),
        };
        println!("{lambda},{mean:.6},{name}");
    }
    Ok(())
}

fn run_stages(args: &RunArgs, stages: &[Stage]) -> Result<ExitCode> {
    let mut run = Run::open(args.resolve()?)?;
    for &stage in stages {
        match run.run_stage(stage)? {
            StageStatus::Skipped => eprintln!("{}: already complete", stage.name()),
            StageStatus::Disabled => eprintln!("{}: disabled in config", stage.name()),
            StageStatus::Ran(r) => eprintln!("{}: {:.1}s", stage.name(), r.seconds),
        }
    }
    if stages.contains(&Stage::Verify) {
        if let Ok(text) = std::fs::read_to_string(run.path("verify/report.txt")) {
            print!("{text}");
        }
        if run.verify_outcome() == Some(false) {
            return Ok(ExitCode::from(1));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenData(a) => run_stages(&a, &[Stage::GenData]),
        Command::PretrainClip(a) => run_stages(&a, &[Stage::PretrainClip]),
        Command::Train(a) => run_stages(&a, &[Stage::Train]),
        Command::Sample(a) => run_stages(&a, &[Stage::Sample]),
        Command::Saem(a) => match (&a.mask, &a.fill) {
            (Some(m), Some(f)) => standalone_saem(&a, m, f).map(|_| ExitCode::SUCCESS),
            _ => run_stages(&a.run, &[Stage::Saem]),
        },
        Command::Eval(a) => run_stages(&a, &[Stage::Eval]),
        Command::Verify(a) => {
            let cfg = a.resolve()?;
            if cfg.schedule.build().is_err() {
                // Reported as a failed check rather than a usage error.
                print!("{}", verify_suite(&cfg).to_text());
                return Ok(ExitCode::from(1));
            }
            run_stages(&a, &[Stage::Verify])
        }
        Command::Report(a) => run_stages(&a, &[Stage::Report]),
        Command::Run(a) => run_stages(&a, &Stage::ALL),
        Command::Config(a) => {
            print!("{}", a.resolve()?.to_toml());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
