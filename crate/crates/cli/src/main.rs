use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qslam_cli::commands::{cmd_evaluate, cmd_simulate, cmd_solve, estimate_dir_name};
use qslam_cli::config::ExperimentConfig;
use qslam_cli::report::format_table;
use qslam_cli::{CliError, Result};
use qslam_core::graph::ErrorMode;

#[derive(Debug, Parser)]
#[command(name = "qslam", version, about = "Object-landmark SLAM with constrained dual quadrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic trials.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        scenes: Option<usize>,
        #[arg(long)]
        seeds_per_scene: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Estimate trajectories and landmarks for every trial in a dataset.
    Solve {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        error_mode: Option<ErrorMode>,
        /// Width and height standard deviation limits in pixels, e.g. 50,30.
        #[arg(long, value_parser = parse_pair)]
        reject_bbox_std: Option<[f64; 2]>,
        #[arg(long)]
        max_iters: Option<usize>,
    },
    /// Compute metrics, the aggregate table and plots.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        /// Estimate directory name inside each trial.
        #[arg(long, default_value_t = estimate_dir_name(ErrorMode::Geometric))]
        estimates: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_pair(s: &str) -> std::result::Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    match parts.as_slice() {
        [w, h] => {
            let w: f64 = w.trim().parse().map_err(|e| format!("{w}: {e}"))?;
            let h: f64 = h.trim().parse().map_err(|e| format!("{h}: {e}"))?;
            Ok([w, h])
        }
        _ => Err(format!("expected W,H but got {s:?}")),
    }
}

fn load_config(path: Option<&PathBuf>) -> Result<ExperimentConfig> {
    path.map_or_else(|| Ok(ExperimentConfig::default()), |p| ExperimentConfig::load(p))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            out,
            seed,
            scenes,
            seeds_per_scene,
            trials,
        } => {
            let mut cfg = load_config(config.as_ref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = scenes {
                cfg.scenes = n;
            }
            if let Some(n) = seeds_per_scene {
                cfg.seeds_per_scene = n;
            }
            if trials.is_some() {
                cfg.trials = trials;
            }
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            let dirs = cmd_simulate(&cfg, &out)?;
            println!("simulated {} trial(s) under {}", dirs.len(), out.display());
        }
        Command::Solve {
            dataset,
            config,
            error_mode,
            reject_bbox_std,
            max_iters,
        } => {
            let mut cfg = load_config(config.as_ref())?;
            if let Some(m) = error_mode {
                cfg.error_mode = m;
            }
            if reject_bbox_std.is_some() {
                cfg.reject_bbox_std = reject_bbox_std;
            }
            if let Some(n) = max_iters {
                cfg.solver.max_iterations = n;
            }
            let solved = cmd_solve(&dataset, &cfg)?;
            let excluded: usize = solved.iter().map(|(_, s)| s.excluded).sum();
            println!(
                "solved {} trial(s) into {}; {excluded} landmark(s) excluded",
                solved.len(),
                estimate_dir_name(cfg.error_mode)
            );
        }
        Command::Evaluate { dataset, estimates, out } => {
            let workers = ExperimentConfig::default().resolved_workers()?;
            let eval = cmd_evaluate(&dataset, &estimates, &out, workers)?;
            print!("{}", format_table(&eval.aggregate));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(CliError::exit_code(&e) as u8)
        }
    }
}
