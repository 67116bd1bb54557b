//! `radar-uq`: simulate, detect, filter, propagate, evaluate and register
//! radar point clouds from the command line.

mod commands;
mod config;
mod failure;

use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use commands::{BdafCheckArgs, Output, VelocitySource};
use config::Config;
use failure::Failure;

/// Environment variable that caps the worker thread count.
const THREADS_ENV: &str = "RAUF_THREADS";

#[derive(Parser, Debug)]
#[command(name = "radar-uq", version, about = "Radar point-cloud uncertainty and Doppler filtering toolkit")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for the scene generator and RANSAC (overrides the config).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory for written artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic scene into a radar cube with labels and ground truth.
    Simulate,
    /// Run OS-CFAR on a cube and list the detections.
    Detect { cube: PathBuf },
    /// Keep detections whose Doppler agrees with the ego velocity.
    Filter {
        detections: PathBuf,
        /// Ego velocity as `vx,vy,vz`.
        #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true, conflicts_with = "ego")]
        velocity: Option<[f64; 3]>,
        /// File whose first record is `vx vy vz`.
        #[arg(long, value_name = "FILE")]
        ego: Option<PathBuf>,
        #[arg(long)]
        doppler_threshold: Option<f64>,
    },
    /// Attach propagated Cartesian covariances to detections.
    Propagate { detections: PathBuf },
    /// Score a predicted cloud against a reference: `cd f precision recall cpr`.
    Evaluate {
        predicted: PathBuf,
        reference: PathBuf,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        zeta: Option<f64>,
    },
    /// Align two uncertain clouds: `tx ty tz qw qx qy qz cost iterations`.
    Register { source: PathBuf, target: PathBuf },
    /// Estimate ego velocity: `vx vy vz inliers total`.
    Eve { detections: PathBuf },
    /// Finite-difference check of the attention fusion gradients.
    BdafCheck {
        /// Weight bundle to check instead of random weights.
        #[arg(long, value_name = "FILE")]
        weights: Option<PathBuf>,
        /// Write the random weights used for the given sizes.
        #[arg(long, value_name = "FILE")]
        save_weights: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 6)]
        tokens: usize,
        #[arg(long, default_value_t = 8)]
        channels: usize,
        #[arg(long, default_value_t = 4)]
        key_dim: usize,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Simulate, detect, filter and evaluate in one run.
    Pipeline {
        #[arg(long)]
        doppler_threshold: Option<f64>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        zeta: Option<f64>,
    },
}

fn parse_vec3(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected vx,vy,vz, got `{s}`"));
    }
    let mut v = [0.0; 3];
    for (dst, p) in v.iter_mut().zip(parts) {
        *dst = p.parse().map_err(|e| format!("`{p}`: {e}"))?;
    }
    Ok(v)
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = match raw.trim().parse() {
        Ok(n) if n > 0 => n,
        _ => return Err(Failure::config(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")).into()),
    };
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::config(format!("{THREADS_ENV}: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn override_threshold(slot: &mut f64, value: Option<f64>, name: &str) -> Result<()> {
    if let Some(v) = value {
        if v.is_nan() || v <= 0.0 {
            return Err(Failure::config(format!("--{name} must be positive")).into());
        }
        *slot = v;
    }
    Ok(())
}

fn run(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    configure_threads()?;
    let mut cfg = Config::load(cli.config.as_deref())?;
    if cli.seed.is_some() {
        cfg.pipeline.seed = cli.seed;
    }
    let out_dir = cli.out.or_else(|| cfg.paths.out.clone());
    let out = |inputs: &[&Path]| Output::new(out_dir.clone(), inputs);
    let t = &mut cfg.pipeline.thresholds;

    match cli.command {
        Command::Simulate => commands::simulate(&cfg, &out(&[]), stdout),
        Command::Detect { cube } => commands::detect(&cfg, &cube, &out(&[&cube]), stdout),
        Command::Filter { detections, velocity, ego, doppler_threshold } => {
            override_threshold(&mut t.doppler, doppler_threshold, "doppler-threshold")?;
            let mut inputs = vec![detections.as_path()];
            let source = match (velocity, &ego) {
                (Some(v), _) => VelocitySource::Given(v),
                (None, Some(p)) => {
                    inputs.push(p);
                    VelocitySource::File(p.clone())
                }
                (None, None) => VelocitySource::Estimate,
            };
            commands::filter(&cfg, &detections, source, &out(&inputs), stdout)
        }
        Command::Propagate { detections } => commands::propagate(&cfg, &detections, &out(&[&detections]), stdout),
        Command::Evaluate { predicted, reference, tau, zeta } => {
            override_threshold(&mut t.tau, tau, "tau")?;
            override_threshold(&mut t.zeta, zeta, "zeta")?;
            commands::evaluate_clouds(&cfg, &predicted, &reference, &out(&[&predicted, &reference]), stdout)
        }
        Command::Register { source, target } => commands::register(&cfg, &source, &target, stdout),
        Command::Eve { detections } => commands::eve(&cfg, &detections, stdout),
        Command::BdafCheck { weights, save_weights, instances, tokens, channels, key_dim, step, tolerance } => {
            let args = BdafCheckArgs { weights, save_weights, instances, tokens, channels, key_dim, step, tolerance };
            let seed = cfg.pipeline.seed.unwrap_or(cfg.pipeline.scene.seed);
            commands::bdaf_check(seed, &args, stdout)
        }
        Command::Pipeline { doppler_threshold, tau, zeta } => {
            override_threshold(&mut t.doppler, doppler_threshold, "doppler-threshold")?;
            override_threshold(&mut t.tau, tau, "tau")?;
            override_threshold(&mut t.zeta, zeta, "zeta")?;
            commands::pipeline(&cfg, &out(&[]), stdout)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(failure::EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    let result = run(cli, &mut lock).and_then(|()| Ok(lock.flush()?));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(failure::exit_code(&err))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vec3_parser() {
        assert_eq!(parse_vec3("1, -2.5,3").unwrap(), [1.0, -2.5, 3.0]);
        assert!(parse_vec3("1,2").is_err());
        assert!(parse_vec3("1,x,3").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_code_matches_clap() {
        assert_eq!(failure::EXIT_USAGE, 2);
        let err = Cli::try_parse_from(["radar-uq", "nope"]).unwrap_err();
        assert_eq!(err.exit_code(), i32::from(failure::EXIT_USAGE));
    }
}
