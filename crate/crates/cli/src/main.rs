//! Command-line front end: training, evaluation and the experiment harnesses.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fusion_stereo::network::Variant;
use fusion_stereo::Error;

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "fusion-stereo", version, about = "LiDAR-conditioned stereo matching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// `synthetic` or `manifest:PATH`.
    #[arg(long)]
    data: Option<String>,
    /// Output directory; every artifact is written below it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of synthetic frames.
    #[arg(long)]
    scenes: Option<usize>,
    /// Seed of the first synthetic frame.
    #[arg(long)]
    scene_seed: Option<u64>,
    /// Rows kept from the bottom of manifest frames.
    #[arg(long)]
    crop_h: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a network and write checkpoints and the loss log.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Random training crop `HxW`.
        #[arg(long, value_parser = parse_crop)]
        crop: Option<[usize; 2]>,
        #[arg(long)]
        checkpoint_every: Option<usize>,
    },
    /// Metrics of a checkpoint on a dataset, plus predicted disparity maps.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Metrics under uniformly subsampled LiDAR.
    Density {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        densities: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Prediction change after overwriting LiDAR inside a region.
    Sensitivity {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        frame: Option<usize>,
        /// `top,left,height,width`.
        #[arg(long, value_delimiter = ',')]
        region: Option<Vec<usize>>,
        #[arg(long)]
        new_disparity: Option<f64>,
    },
    /// Parameter accounting and forward timing per variant.
    Params {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
        variants: Option<Vec<Variant>>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        channels: Option<usize>,
        #[arg(long)]
        levels: Option<usize>,
        #[arg(long)]
        d_hat: Option<usize>,
    },
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_crop(s: &str) -> Result<[usize; 2], String> {
    let (h, w) = s.split_once('x').ok_or("expected HxW")?;
    Ok([h.parse().map_err(|_| "bad height")?, w.parse().map_err(|_| "bad width")?])
}

fn apply_common(c: &Common, name: &str) -> Result<RunConfig, Error> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.command = name.to_string();
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = &c.data {
        cfg.data.source = v.clone();
    }
    if let Some(v) = &c.out {
        cfg.out = v.clone();
    }
    if let Some(v) = c.scenes {
        cfg.data.scenes = v;
    }
    if let Some(v) = c.scene_seed {
        cfg.scene.seed = v;
    }
    if let Some(v) = c.crop_h {
        cfg.data.crop_h = Some(v);
    }
    cfg.data_source()?;
    Ok(cfg)
}

fn resolve(cmd: &Command) -> Result<RunConfig, Error> {
    let set = |dst: &mut Option<PathBuf>, src: &Option<PathBuf>| {
        if let Some(p) = src {
            *dst = Some(p.clone());
        }
    };
    let mut cfg = match cmd {
        Command::Train {
            common,
            variant,
            iters,
            lr,
            crop,
            checkpoint_every,
        } => {
            let mut cfg = apply_common(common, "train")?;
            if let Some(v) = variant {
                cfg.variant = *v;
            }
            if let Some(v) = iters {
                cfg.train.iters = *v;
            }
            if let Some(v) = lr {
                cfg.train.lr = *v;
            }
            if let Some(v) = crop {
                cfg.train.crop = Some(*v);
            }
            if let Some(v) = checkpoint_every {
                cfg.train.checkpoint_every = *v;
            }
            cfg.network = Some(cfg.network_config());
            cfg
        }
        Command::Eval { common, checkpoint } => {
            let mut cfg = apply_common(common, "eval")?;
            set(&mut cfg.checkpoint, checkpoint);
            cfg
        }
        Command::Density {
            common,
            checkpoint,
            densities,
            seeds,
        } => {
            let mut cfg = apply_common(common, "density")?;
            set(&mut cfg.checkpoint, checkpoint);
            if let Some(v) = densities {
                cfg.density.densities = v.clone();
            }
            if let Some(v) = seeds {
                cfg.density.seeds = v.clone();
            }
            cfg
        }
        Command::Sensitivity {
            common,
            checkpoint,
            frame,
            region,
            new_disparity,
        } => {
            let mut cfg = apply_common(common, "sensitivity")?;
            set(&mut cfg.checkpoint, checkpoint);
            if let Some(v) = frame {
                cfg.sensitivity.frame = *v;
            }
            if let Some(r) = region {
                let &[top, left, h, w] = r.as_slice() else {
                    return Err(Error::Config("--region takes top,left,height,width".into()));
                };
                cfg.sensitivity.region = Some([top, left, h, w]);
            }
            if let Some(v) = new_disparity {
                cfg.sensitivity.new_disparity = *v;
            }
            cfg
        }
        Command::Params {
            common,
            variants,
            runs,
            channels,
            levels,
            d_hat,
        } => {
            let mut cfg = apply_common(common, "params")?;
            if let Some(v) = variants {
                cfg.params.variants = v.clone();
            }
            if let Some(v) = runs {
                cfg.params.runs = *v;
            }
            if let Some(v) = channels {
                cfg.params.channels = *v;
            }
            if let Some(v) = levels {
                cfg.params.levels = *v;
            }
            if let Some(v) = d_hat {
                cfg.params.d_hat = *v;
            }
            cfg
        }
    };
    cfg.resolve_precision()?;
    Ok(cfg)
}

/// 2 configuration, 3 data, 4 numeric divergence.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Divergence { .. } | Error::NonFinite(_) => 4,
        Error::Io { .. }
        | Error::Format { .. }
        | Error::EmptyDataset
        | Error::NoSupervisedPixels
        | Error::NoConditioningSignal => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = resolve(&cli.command).and_then(|cfg| commands::run(&cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
