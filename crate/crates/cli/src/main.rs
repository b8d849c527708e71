use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use infosep_cli::config::density_value;
use infosep_cli::{run_file, run_value, CliError, Result, RunOutcome};
use serde_json::{json, Map, Value};

#[derive(Parser)]
#[command(name = "infosep", version, about = "Informed source separation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Output directory.
    #[arg(long, short)]
    out: PathBuf,
    /// Override a config key, e.g. `--set stages.0.config.step_size=0.05`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config.
    Run {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Generate synthetic data from a single simulate stage (JSON file).
    Simulate {
        spec: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Separate recordings (CSV) by MAP Infomax.
    Separate {
        input: PathBuf,
        /// True mixing matrix (CSV) for scoring.
        #[arg(long)]
        mixing: Option<PathBuf>,
        /// Density per source, e.g. `logistic`, `laplacian:0.5`, `bimodal:0.66,0.26`.
        #[arg(long, default_value = "logistic")]
        density: Vec<String>,
        /// `none`, `uniform:MIN,MAX` or `inverse-square:R[,R_MIN]`.
        #[arg(long, default_value = "none")]
        prior: String,
        #[arg(long, default_value = "natural")]
        mode: String,
        #[arg(long, default_value = "posterior-over-a")]
        objective: String,
        #[arg(long, default_value_t = 0.1)]
        step: f64,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[arg(long, default_value_t = 2000)]
        max_iter: usize,
        /// Start from a random orthogonal matrix with this seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        whiten: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Fit source positions to recordings (CSV) under a geometry (JSON).
    Localize {
        input: PathBuf,
        #[arg(long)]
        geometry: PathBuf,
        #[arg(long, default_value_t = 1)]
        sources: usize,
        #[arg(long, default_value_t = 0.1)]
        grid_resolution: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Fit trial-varying amplitudes and latencies to an ensemble manifest.
    Dvca {
        ensemble: PathBuf,
        #[arg(long)]
        components: usize,
        #[arg(long)]
        max_shift: usize,
        #[arg(long, default_value_t = 200)]
        max_sweeps: usize,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value_t = 4)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        fix_amplitudes: bool,
        #[arg(long)]
        fix_latencies: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Average an ensemble over trials.
    Average {
        ensemble: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Compare Monte Carlo mixing coefficients with the analytic prior.
    ValidatePrior {
        #[arg(long)]
        radius: f64,
        #[arg(long, default_value_t = 0.0)]
        min_radius: f64,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long, default_value_t = 100)]
        bins: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
}

fn prior_value(text: &str) -> Result<Value> {
    let (kind, params) = text.split_once(':').unwrap_or((text, ""));
    let nums: Vec<f64> = if params.is_empty() {
        Vec::new()
    } else {
        params
            .split(',')
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|_| CliError::config(format!("bad prior parameter {p:?}")))
            })
            .collect::<Result<_>>()?
    };
    match (kind, nums.as_slice()) {
        ("none", []) => Ok(json!({"kind": "none"})),
        ("uniform", [min, max]) => Ok(json!({"kind": "uniform-box", "min": min, "max": max})),
        ("inverse-square", [r]) => Ok(json!({"kind": "inverse-square", "radius": r})),
        ("inverse-square", [r, rmin]) => {
            Ok(json!({"kind": "inverse-square", "radius": r, "min_radius": rmin}))
        }
        _ => Err(CliError::config(format!("cannot parse prior {text:?}"))),
    }
}

fn single_stage(out: &PathBuf, seed: u64, stage: Value) -> Value {
    json!({"version": 1, "seed": seed, "output_dir": out, "stages": [stage]})
}

fn dispatch(command: Command) -> Result<RunOutcome> {
    match command {
        Command::Run { config, overrides } => run_file(&config, &overrides),
        Command::Simulate { spec, seed, common } => {
            let mut stage: Map<String, Value> = match infosep_cli::runner::load_config(&spec)? {
                Value::Object(m) => m,
                _ => return Err(CliError::config("simulate spec must be a JSON object")),
            };
            stage.entry("name").or_insert_with(|| json!("simulate"));
            stage.entry("kind").or_insert_with(|| json!("simulate"));
            run_value(
                single_stage(&common.out, seed, Value::Object(stage)),
                &common.overrides,
            )
        }
        Command::Separate {
            input,
            mixing,
            density,
            prior,
            mode,
            objective,
            step,
            tol,
            max_iter,
            seed,
            whiten,
            common,
        } => {
            let densities = density
                .iter()
                .map(|d| density_value(d))
                .collect::<Result<Vec<_>>>()?;
            let init = match seed {
                Some(s) => json!({"type": "random-orthogonal", "seed": s}),
                None => json!({"type": "identity"}),
            };
            let stage = json!({
                "kind": "separate",
                "name": "separate",
                "input": {"file": input},
                "mixing": mixing,
                "config": {
                    "densities": densities,
                    "matrix_prior": prior_value(&prior)?,
                    "step_size": step,
                    "max_iterations": max_iter,
                    "tolerance": tol,
                    "mode": mode,
                    "objective": objective,
                    "init": init,
                    "whiten": whiten,
                },
            });
            run_value(single_stage(&common.out, 0, stage), &common.overrides)
        }
        Command::Localize {
            input,
            geometry,
            sources,
            grid_resolution,
            seed,
            common,
        } => {
            let geometry = infosep_cli::runner::load_config(&geometry)?;
            let stage = json!({
                "kind": "localize",
                "name": "localize",
                "input": {"file": input},
                "geometry": geometry,
                "sources": sources,
                "options": {"grid_resolution": grid_resolution, "seed": seed},
            });
            run_value(single_stage(&common.out, 0, stage), &common.overrides)
        }
        Command::Dvca {
            ensemble,
            components,
            max_shift,
            max_sweeps,
            tol,
            restarts,
            seed,
            fix_amplitudes,
            fix_latencies,
            common,
        } => {
            let stage = json!({
                "kind": "dvca",
                "name": "dvca",
                "input": {"file": ensemble},
                "components": components,
                "options": {
                    "max_shift": max_shift,
                    "max_sweeps": max_sweeps,
                    "tolerance": tol,
                    "restarts": restarts,
                    "seed": seed,
                    "fix_amplitudes": fix_amplitudes,
                    "fix_latencies": fix_latencies,
                },
            });
            run_value(single_stage(&common.out, 0, stage), &common.overrides)
        }
        Command::Average { ensemble, common } => {
            let stage = json!({"kind": "average", "name": "average", "input": {"file": ensemble}});
            run_value(single_stage(&common.out, 0, stage), &common.overrides)
        }
        Command::ValidatePrior {
            radius,
            min_radius,
            samples,
            bins,
            seed,
            common,
        } => {
            let stage = json!({
                "kind": "validate-prior",
                "name": "validate-prior",
                "seed": seed,
                "radius": radius,
                "min_radius": min_radius,
                "samples": samples,
                "bins": bins,
            });
            run_value(single_stage(&common.out, seed, stage), &common.overrides)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(outcome) => {
            if let Some((stage, message)) = &outcome.failure {
                eprintln!("stage {stage} failed: {message}");
            }
            println!(
                "{}",
                outcome
                    .output_dir
                    .join(infosep_cli::artifacts::MANIFEST_NAME)
                    .display()
            );
            ExitCode::from(outcome.status)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
