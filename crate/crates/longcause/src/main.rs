//! Command-line front end: dataset simulation, effect estimation, the
//! transition assumption test, and benchmark sweeps.
//!
//! Exit codes: 0 on success, 2 on validation errors (bad flags, config, or
//! input data), 3 on runtime estimation failures.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use longcause::bench::config::{parse_config, parse_regressor_spec, BenchConfig};
use longcause::bench::{render_results_csv, run_sweep};
use longcause::data::{load_csv, sniff_schema, write_csv, CombinedDataset};
use longcause::dynamics::assumption_r2;
use longcause::estimator::{
    enumerate_horizon_candidates, estimate_caecb, estimate_fcaecb, estimate_tlearner_obs,
    CaecbStep, EstimatorOptions, Splitting, TauModel,
};
use longcause::nuisance::fit_nuisances;
use longcause::sim::generate;

#[derive(Parser)]
#[command(
    name = "longcause",
    about = "Long-term heterogeneous causal effects from combined experimental and observational data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (data.csv) and its ground truth (truth.csv).
    Simulate {
        /// Flat key-value config file.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (created if missing).
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Estimate heterogeneous long-term effects on a dataset CSV.
    Estimate {
        #[arg(long)]
        data: PathBuf,
        /// fcaecb | caecb | tlearner-obs
        #[arg(long)]
        method: String,
        /// Regressor for nuisance fits, e.g. ols:1, ridge:2:0.5, knn:25.
        #[arg(long, default_value = "ols:1")]
        nuisance: String,
        /// Regressor for the bias transition.
        #[arg(long, default_value = "ols:1")]
        transition: String,
        /// on | off: fit stages on disjoint halves.
        #[arg(long, default_value = "off")]
        splitting: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// auto | all | comma-separated steps (e.g. 1,3,5).
        #[arg(long, default_value = "all")]
        horizon: String,
        /// Long-horizon offset: the long-term outcome is step T + mu. The
        /// data CSV does not carry it. Required for fcaecb.
        #[arg(long)]
        mu: Option<usize>,
        /// For caecb: first | middle | last | random | an explicit step index.
        #[arg(long, default_value = "last")]
        caecb_step: String,
        /// Denominator guard for ratio-based transition fits.
        #[arg(long, default_value_t = 1e-6)]
        guard: f64,
        /// Output CSV of per-row effect estimates.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the bias transition on early steps and score it on the last one.
    AssumptionTest {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "ols:1")]
        nuisance: String,
        #[arg(long, default_value = "ols:1")]
        transition: String,
        #[arg(long, default_value_t = 1e-6)]
        guard: f64,
    },
    /// Run a replicated sweep and write the tidy results CSV.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Validation failures exit 2, runtime estimation failures exit 3.
enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => m,
        }
    }
}

fn validation(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn read_config(path: &Path) -> Result<BenchConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| validation(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text).map_err(validation)
}

fn load_dataset(path: &Path, mu: usize) -> Result<CombinedDataset, CliError> {
    let schema = sniff_schema(path, mu).map_err(validation)?;
    load_csv(path, schema).map_err(validation)
}

fn write_tau_csv(
    dataset: &CombinedDataset,
    model: &TauModel,
    out: &Path,
) -> Result<(), CliError> {
    let d = dataset.d();
    let mut text = String::new();
    for j in 1..=d {
        text.push_str(&format!("x_{j},"));
    }
    text.push_str("tau_hat\n");
    for record in dataset.records() {
        let tau = model.predict(&record.covariates).map_err(runtime)?;
        for v in record.covariates.values() {
            text.push_str(&format!("{v},"));
        }
        text.push_str(&format!("{tau}\n"));
    }
    fs::write(out, text).map_err(|e| runtime(format!("cannot write {}: {e}", out.display())))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { config, out_dir } => {
            let cfg = read_config(&config)?;
            cfg.sim.validate().map_err(validation)?;
            let (dataset, truth) = generate(&cfg.sim).map_err(runtime)?;
            fs::create_dir_all(&out_dir)
                .map_err(|e| runtime(format!("cannot create {}: {e}", out_dir.display())))?;
            write_csv(&dataset, &out_dir.join("data.csv")).map_err(runtime)?;
            fs::write(out_dir.join("truth.csv"), truth.render_csv())
                .map_err(|e| runtime(e.to_string()))?;
            println!(
                "wrote {} rows ({} experimental, {} observational) to {}",
                dataset.len(),
                dataset.n_experimental(),
                dataset.n_observational(),
                out_dir.display()
            );
            Ok(())
        }
        Command::Estimate {
            data,
            method,
            nuisance,
            transition,
            splitting,
            seed,
            horizon,
            mu,
            caecb_step,
            guard,
            out,
        } => {
            let nuisance_spec = parse_regressor_spec(&nuisance).map_err(validation)?;
            let transition_spec = parse_regressor_spec(&transition).map_err(validation)?;
            let splitting = match splitting.as_str() {
                "on" => Splitting::On { seed },
                "off" => Splitting::Off,
                other => return Err(validation(format!("--splitting must be on|off, got {other}"))),
            };
            let model = match method.as_str() {
                "fcaecb" => {
                    let mu = mu.ok_or_else(|| {
                        validation("--mu is required for fcaecb (the CSV does not carry it)")
                    })?;
                    let dataset = load_dataset(&data, mu)?;
                    let horizon_candidates = match horizon.as_str() {
                        "all" => None,
                        "auto" => Some(enumerate_horizon_candidates(
                            dataset.t(),
                            dataset.t() + dataset.mu(),
                        )),
                        steps => {
                            let parsed: Result<Vec<usize>, _> =
                                steps.split(',').map(|s| s.trim().parse()).collect();
                            Some(vec![parsed.map_err(|_| {
                                validation(format!("--horizon: bad step list `{steps}`"))
                            })?])
                        }
                    };
                    let options = EstimatorOptions {
                        splitting,
                        guard_epsilon: guard,
                        horizon_candidates,
                        ..EstimatorOptions::default()
                    };
                    let model = estimate_fcaecb(&dataset, nuisance_spec, transition_spec, &options)
                        .map_err(runtime)?;
                    write_tau_csv(&dataset, &model, &out)?;
                    model
                }
                "caecb" => {
                    let dataset = load_dataset(&data, mu.unwrap_or(1))?;
                    let step = match caecb_step.as_str() {
                        "first" => CaecbStep::First,
                        "middle" => CaecbStep::Middle,
                        "last" => CaecbStep::Last,
                        "random" => CaecbStep::Random { seed },
                        t => CaecbStep::Explicit(t.parse().map_err(|_| {
                            validation(format!("--caecb-step: bad value `{t}`"))
                        })?),
                    };
                    let model = estimate_caecb(&dataset, step, nuisance_spec).map_err(runtime)?;
                    write_tau_csv(&dataset, &model, &out)?;
                    model
                }
                "tlearner-obs" => {
                    let dataset = load_dataset(&data, mu.unwrap_or(1))?;
                    let model = estimate_tlearner_obs(&dataset, nuisance_spec).map_err(runtime)?;
                    write_tau_csv(&dataset, &model, &out)?;
                    model
                }
                other => {
                    return Err(validation(format!(
                        "--method must be fcaecb|caecb|tlearner-obs, got {other}"
                    )))
                }
            };
            println!("estimated with {}; wrote {}", model.method().label(), out.display());
            Ok(())
        }
        Command::AssumptionTest {
            data,
            nuisance,
            transition,
            guard,
        } => {
            let nuisance_spec = parse_regressor_spec(&nuisance).map_err(validation)?;
            let transition_spec = parse_regressor_spec(&transition).map_err(validation)?;
            let dataset = load_dataset(&data, 1)?;
            let nuisances = fit_nuisances(&dataset, nuisance_spec).map_err(runtime)?;
            let points = dataset.observational_covariates();
            let panel = longcause::dynamics::build_panel(&nuisances, &points, "assumption test")
                .map_err(runtime)?;
            let test = assumption_r2(&panel, transition_spec, guard).map_err(runtime)?;
            let diag = test.transition.diagnostics();
            println!("held-out step:    {}", test.held_out_step);
            println!("R^2:              {}", test.r_squared);
            println!("pairs used:       {}", test.transition.pairs_used());
            println!("pairs dropped:    {}", diag.dropped_pairs);
            println!("residual SSE:     {}", diag.residual_sse);
            println!("degenerate fit:   {}", diag.degenerate);
            Ok(())
        }
        Command::Bench { config, out } => {
            let cfg = read_config(&config)?;
            cfg.sim.validate().map_err(validation)?;
            let result = if cfg.workers > 0 {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(cfg.workers)
                    .build()
                    .map_err(|e| runtime(e.to_string()))?
                    .install(|| run_sweep(&cfg.sim, &cfg.settings, &cfg.axis))
            } else {
                run_sweep(&cfg.sim, &cfg.settings, &cfg.axis)
            }
            .map_err(runtime)?;
            for cell in &result.cells {
                for f in &cell.failures {
                    eprintln!(
                        "warning: replicate seed {} method {} failed: {}",
                        f.seed,
                        f.method.label(),
                        f.message
                    );
                }
            }
            fs::write(&out, render_results_csv(&result))
                .map_err(|e| runtime(format!("cannot write {}: {e}", out.display())))?;
            println!("wrote {} cells to {}", result.cells.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
