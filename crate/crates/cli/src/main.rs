use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vrmatte::dataset::{build_dataset, read_manifest, Sources, Split};
use vrmatte::harness::{
    check_device, evaluate, predict_split, sample_to_dir, train_codec_stage, train_diffusion_stage, EvalOptions, Pipeline, RunConfig,
};
use vrmatte::metrics::{DEFAULT_IOU, DEFAULT_SIGMA, DEFAULT_STEP};
use vrmatte::Result;

#[derive(Parser)]
#[command(name = "vrmatte", version, about = "Video referring matting by latent diffusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration: default, toy or overfit.
    #[arg(long)]
    preset: Option<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        match (&self.config, &self.preset) {
            (Some(path), _) => RunConfig::load(path),
            (None, Some(name)) => RunConfig::preset(name),
            (None, None) => Ok(RunConfig::toy()),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Stage {
    Codec,
    Diffusion,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the captioned composite dataset.
    Synth(ConfigArgs),
    /// Train the codec or the diffusion denoiser.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_enum)]
        stage: Stage,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Print a progress line every N steps.
        #[arg(long, default_value_t = 100)]
        log_every: usize,
    },
    /// Generate the matte of the captioned instance in a frame directory.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        caption: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict every instance of a dataset split.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "val")]
        split: SplitArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predicted mattes against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = DEFAULT_IOU)]
        iou: f64,
        #[arg(long, default_value_t = DEFAULT_SIGMA)]
        sigma: f64,
        #[arg(long, default_value_t = DEFAULT_STEP)]
        step: f64,
        /// Only score ground-truth samples of this split.
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
        /// Report directory (defaults to the prediction root).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a preset configuration as TOML.
    Config {
        #[arg(long, default_value = "toy")]
        preset: String,
    },
}

fn synth(cfg: &RunConfig) -> Result<PathBuf> {
    let sources = Sources::<f32>::from_config(&cfg.synth.sources)?;
    let manifest = build_dataset(&cfg.synth, &sources, &cfg.paths.data_root)?;
    let records = read_manifest(&manifest)?;
    let train = records.iter().filter(|r| r.split == Split::Train).count();
    println!("{} samples: {train} train, {} val", records.len(), records.len() - train);
    Ok(manifest)
}

fn train(cfg: &RunConfig, stage: Stage, resume: Option<&Path>, every: usize) -> Result<PathBuf> {
    let every = every.max(1);
    let summary = match stage {
        Stage::Codec => train_codec_stage::<f32>(cfg, resume, &mut |l| {
            if l.step % every == 0 {
                match l.heldout {
                    Some(h) => eprintln!("codec step {} loss {:.6} recon {:.6} heldout {:.6}", l.step, l.loss, l.recon, h),
                    None => eprintln!("codec step {} loss {:.6} recon {:.6}", l.step, l.loss, l.recon),
                }
            }
        })?,
        Stage::Diffusion => train_diffusion_stage::<f32>(cfg, resume, &mut |l| {
            if l.step % every == 0 {
                eprintln!(
                    "diffusion step {} loss {:.6} l_diff {:.6} l_nce {:.6}{}",
                    l.step,
                    l.loss,
                    l.l_diff,
                    l.l_nce,
                    if l.skip_flag { " (skipped)" } else { "" }
                );
            }
        })?,
    };
    println!("trained steps {}..{}", summary.start_step, summary.end_step);
    Ok(summary.checkpoint)
}

fn run(cli: Cli) -> Result<()> {
    check_device()?;
    match cli.command {
        Command::Synth(args) => {
            let cfg = args.load()?;
            println!("{}", synth(&cfg)?.display());
        }
        Command::Train { config, stage, resume, log_every } => {
            let cfg = config.load()?;
            println!("{}", train(&cfg, stage, resume.as_deref(), log_every)?.display());
        }
        Command::Sample { ckpt, video, caption, seed, out } => {
            let pipeline = Pipeline::<f32>::load(&ckpt)?;
            println!("{}", sample_to_dir(&pipeline, &video, &caption, &out, seed)?.display());
        }
        Command::Predict { ckpt, data, split, seed, out } => {
            let pipeline = Pipeline::<f32>::load(&ckpt)?;
            let ids = predict_split(&pipeline, &data, split.into(), &out, seed)?;
            println!("{} samples predicted into {}", ids.len(), out.display());
        }
        Command::Eval { pred, gt, iou, sigma, step, split, out } => {
            let opts = EvalOptions { iou, sigma, step, split: split.map(Into::into) };
            let report = evaluate::<f32>(&pred, &gt, &opts)?;
            print!("{}", report.to_text());
            println!("{}", report.write(out.as_deref().unwrap_or(&pred))?.display());
        }
        Command::Config { preset } => print!("{}", RunConfig::preset(&preset)?.to_toml()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
