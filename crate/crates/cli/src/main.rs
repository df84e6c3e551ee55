//! `radplace`: the radar place-recognition pipeline from the command line.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use radplace_core::eval::ConcatMode;

use config::{Overrides, RunConfig};
use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "radplace", version, about = "Radar place recognition pipeline")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Run seed; every random stream derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Named parameter set applied before the config file.
    #[arg(long, global = true, value_parser = ["paper-defaults"])]
    preset: Option<String>,
    /// Heatmap concatenation mode.
    #[arg(long, global = true, value_enum)]
    concat: Option<ConcatArg>,
    /// Heatmap and encoder input size, rows x columns.
    #[arg(long, global = true, value_name = "RxC", value_parser = config::parse_size)]
    heatmap_size: Option<(usize, usize)>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ConcatArg {
    None,
    Fixed,
    Relpose,
}

impl From<ConcatArg> for ConcatMode {
    fn from(c: ConcatArg) -> Self {
        match c {
            ConcatArg::None => ConcatMode::None,
            ConcatArg::Fixed => ConcatMode::Fixed,
            ConcatArg::Relpose => ConcatMode::Relpose,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a rotating-platform sweep of a scene into IF cubes and truth.csv.
    Simulate {
        /// Scene listing, one `range_m azimuth_deg amplitude` per line.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Number of frames.
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Turn IF cubes into range-azimuth heatmaps.
    Heatmap {
        #[arg(long, value_name = "DIR")]
        cubes: Option<PathBuf>,
    },
    /// Register consecutive heatmaps and mosaic each rotation cycle.
    Concat {
        #[arg(long, value_name = "DIR")]
        heatmaps: Option<PathBuf>,
    },
    /// Train the place encoder on heatmaps with known positions.
    Train {
        #[arg(long, value_name = "DIR")]
        heatmaps: Option<PathBuf>,
        #[arg(long)]
        poses: Option<PathBuf>,
    },
    /// Encode heatmaps into a place database.
    BuildDb {
        #[arg(long, value_name = "DIR")]
        heatmaps: Option<PathBuf>,
        #[arg(long)]
        poses: Option<PathBuf>,
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Retrieve the nearest database places for each query heatmap.
    Query {
        #[arg(long, value_name = "DIR")]
        heatmaps: Option<PathBuf>,
        /// Query positions; enables correctness labels and metrics.
        #[arg(long)]
        poses: Option<PathBuf>,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        db: Option<PathBuf>,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Run the synthetic place-recognition study and write a report.
    Eval,
    /// Render heatmaps as 8-bit PGM images.
    Render {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Log-compress magnitudes before normalising.
        #[arg(long)]
        log: bool,
    },
}

fn set(slot: &mut Option<PathBuf>, v: Option<PathBuf>) {
    if v.is_some() {
        *slot = v;
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = cli.global;
    let overrides = Overrides {
        config: g.config,
        seed: g.seed,
        preset: g.preset,
        concat: g.concat.map(Into::into),
        heatmap_size: g.heatmap_size,
        out: g.out,
    };
    let mut cfg = RunConfig::resolve(&overrides)?;
    let p = &mut cfg.paths;
    match cli.command {
        Command::Simulate { scene, frames } => {
            set(&mut p.scene, scene);
            if let Some(n) = frames {
                cfg.simulate.frames = n;
            }
            commands::simulate(&cfg)
        }
        Command::Heatmap { cubes } => {
            set(&mut p.cubes, cubes);
            commands::heatmap(&cfg)
        }
        Command::Concat { heatmaps } => {
            set(&mut p.heatmaps, heatmaps);
            commands::concat(&cfg)
        }
        Command::Train { heatmaps, poses } => {
            set(&mut p.heatmaps, heatmaps);
            set(&mut p.poses, poses);
            commands::train_cmd(&cfg)
        }
        Command::BuildDb { heatmaps, poses, weights } => {
            set(&mut p.heatmaps, heatmaps);
            set(&mut p.poses, poses);
            set(&mut p.weights, weights);
            commands::build_db(&cfg)
        }
        Command::Query {
            heatmaps,
            poses,
            weights,
            db,
            top_k,
        } => {
            set(&mut p.heatmaps, heatmaps);
            set(&mut p.poses, poses);
            set(&mut p.weights, weights);
            set(&mut p.db, db);
            if let Some(k) = top_k {
                if k == 0 {
                    return Err(CliError::Usage("--top-k must be >= 1".into()));
                }
                cfg.query.top_k = k;
            }
            commands::query(&cfg)
        }
        Command::Eval => commands::eval(&cfg),
        Command::Render { inputs, log } => commands::render(&cfg, &inputs, log),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
