//! Metrics, replicated experiment sweeps, and their CSV reporting.
//!
//! A *cell* is one generator configuration evaluated with a set of methods
//! over `R` seeded replicates; a *sweep* walks one axis of cells (horizon
//! offset, window length, sample size, or step subsets) and emits one tidy
//! CSV row per (cell, method, metric). Replicates are embarrassingly
//! parallel; results are keyed by seed and aggregated in seed order, so a
//! sweep re-run with the same config is byte-identical regardless of worker
//! count.

pub mod config;

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rayon::prelude::*;
use thiserror::Error;

use crate::estimator::{
    estimate_caecb, estimate_fcaecb, estimate_tlearner_exp_idealized, estimate_tlearner_obs,
    CaecbStep, EstimatorOptions, Splitting,
};
use crate::regress::RegressorSpec;
use crate::sim::{generate, SimConfig, TruthTable};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("metric input lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("metric inputs are empty")]
    EmptyInput,
    #[error("cell {cell}: {failed} of {total} replicates failed (limit {limit}); first failure: {first}")]
    TooManyFailures {
        cell: String,
        failed: usize,
        total: usize,
        limit: f64,
        first: String,
    },
    #[error("sweep grid is empty")]
    EmptyGrid,
}

/// Root-mean-square pointwise error of a heterogeneous-effect estimate.
pub fn pehe(true_tau: &[f64], est_tau: &[f64]) -> Result<f64, BenchError> {
    if true_tau.len() != est_tau.len() {
        return Err(BenchError::LengthMismatch {
            left: true_tau.len(),
            right: est_tau.len(),
        });
    }
    if true_tau.is_empty() {
        return Err(BenchError::EmptyInput);
    }
    let mse = true_tau
        .iter()
        .zip(est_tau)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / true_tau.len() as f64;
    Ok(mse.sqrt())
}

/// Absolute error of the average effect: `|mean(tau) - mean(tau_hat)|`.
pub fn ate_error(true_tau: &[f64], est_tau: &[f64]) -> Result<f64, BenchError> {
    if true_tau.len() != est_tau.len() {
        return Err(BenchError::LengthMismatch {
            left: true_tau.len(),
            right: est_tau.len(),
        });
    }
    if true_tau.is_empty() {
        return Err(BenchError::EmptyInput);
    }
    let n = true_tau.len() as f64;
    let mt = true_tau.iter().sum::<f64>() / n;
    let me = est_tau.iter().sum::<f64>() / n;
    Ok((mt - me).abs())
}

/// The method roster a benchmark cell can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMethod {
    Fcaecb,
    CaecbFirst,
    CaecbMiddle,
    CaecbLast,
    CaecbRandom,
    TLearnerObs,
    TLearnerExpIdealized,
}

impl BenchMethod {
    pub fn label(self) -> &'static str {
        match self {
            BenchMethod::Fcaecb => "fcaecb",
            BenchMethod::CaecbFirst => "caecb_first",
            BenchMethod::CaecbMiddle => "caecb_middle",
            BenchMethod::CaecbLast => "caecb_last",
            BenchMethod::CaecbRandom => "caecb_random",
            BenchMethod::TLearnerObs => "tlearner_obs",
            BenchMethod::TLearnerExpIdealized => "tlearner_exp",
        }
    }

    pub const ALL: [BenchMethod; 7] = [
        BenchMethod::Fcaecb,
        BenchMethod::CaecbFirst,
        BenchMethod::CaecbMiddle,
        BenchMethod::CaecbLast,
        BenchMethod::CaecbRandom,
        BenchMethod::TLearnerObs,
        BenchMethod::TLearnerExpIdealized,
    ];
}

/// Everything one cell needs besides the generator config.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub methods: Vec<BenchMethod>,
    pub replicates: usize,
    pub base_seed: u64,
    pub nuisance_spec: RegressorSpec,
    pub transition_spec: RegressorSpec,
    /// Re-split per replicate when true (the split seed is the replicate
    /// seed, keeping the whole pipeline deterministic).
    pub splitting_on: bool,
    pub guard_epsilon: f64,
    pub horizon_candidates: Option<Vec<Vec<usize>>>,
    pub refit_full: bool,
    /// Build bias panels on pooled covariates instead of observational ones.
    pub pooled_eval: bool,
    /// A cell whose failure fraction exceeds this aborts instead of
    /// aggregating.
    pub max_failure_fraction: f64,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            methods: vec![BenchMethod::Fcaecb],
            replicates: 50,
            base_seed: 0,
            nuisance_spec: RegressorSpec::OlsPolynomial { degree: 1 },
            transition_spec: RegressorSpec::OlsPolynomial { degree: 1 },
            splitting_on: false,
            guard_epsilon: crate::dynamics::DEFAULT_GUARD_EPSILON,
            horizon_candidates: None,
            refit_full: false,
            pooled_eval: false,
            max_failure_fraction: 0.1,
        }
    }
}

/// One estimator evaluated on one replicate.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub pehe: f64,
    pub ate_error: f64,
    pub n_eval: usize,
    pub method: BenchMethod,
    pub config_fingerprint: u64,
}

/// Mean / spread of one metric over a cell's successful replicates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricAggregate {
    pub mean: f64,
    pub sd: f64,
    pub se: f64,
    pub r: usize,
    /// Set when r == 1, where the spread estimates are degenerate zeros.
    pub degenerate_r: bool,
}

fn aggregate(values: &[f64]) -> MetricAggregate {
    let r = values.len();
    let mean = values.iter().sum::<f64>() / r as f64;
    let (sd, se) = if r > 1 {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (r as f64 - 1.0);
        let sd = var.sqrt();
        (sd, sd / (r as f64).sqrt())
    } else {
        (0.0, 0.0)
    };
    MetricAggregate {
        mean,
        sd,
        se,
        r,
        degenerate_r: r == 1,
    }
}

#[derive(Debug, Clone)]
pub struct ReplicateFailure {
    pub seed: u64,
    pub method: BenchMethod,
    pub message: String,
}

/// Aggregates for one (cell, method) pair.
#[derive(Debug, Clone)]
pub struct MethodCellResult {
    pub method: BenchMethod,
    pub pehe: MetricAggregate,
    pub ate: MetricAggregate,
    /// Per-replicate metric values in seed order, for audits and recomputation.
    pub pehe_values: Vec<f64>,
    pub ate_values: Vec<f64>,
}

/// One grid cell: axis coordinates plus per-method aggregates.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub axis_mu: usize,
    pub axis_t: usize,
    pub axis_ne: usize,
    pub methods: Vec<MethodCellResult>,
    pub failures: Vec<ReplicateFailure>,
}

/// A full sweep: one cell per grid point, in grid order.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub cells: Vec<CellResult>,
}

fn fingerprint(sim: &SimConfig, settings: &RunSettings, method: BenchMethod) -> u64 {
    let mut h = DefaultHasher::new();
    format!("{sim:?}|{settings:?}|{method:?}").hash(&mut h);
    h.finish()
}

fn run_method(
    method: BenchMethod,
    dataset: &crate::data::CombinedDataset,
    truth: &TruthTable,
    seed: u64,
    settings: &RunSettings,
    fingerprint_value: u64,
) -> Result<MetricReport, String> {
    let spec = settings.nuisance_spec;
    let model = match method {
        BenchMethod::Fcaecb => {
            let opts = EstimatorOptions {
                splitting: if settings.splitting_on {
                    Splitting::On { seed }
                } else {
                    Splitting::Off
                },
                guard_epsilon: settings.guard_epsilon,
                horizon_candidates: settings.horizon_candidates.clone(),
                refit_full: settings.refit_full,
                eval_population: if settings.pooled_eval {
                    crate::estimator::EvalPopulation::Pooled
                } else {
                    crate::estimator::EvalPopulation::Observational
                },
            };
            estimate_fcaecb(dataset, spec, settings.transition_spec, &opts)
        }
        BenchMethod::CaecbFirst => estimate_caecb(dataset, CaecbStep::First, spec),
        BenchMethod::CaecbMiddle => estimate_caecb(dataset, CaecbStep::Middle, spec),
        BenchMethod::CaecbLast => estimate_caecb(dataset, CaecbStep::Last, spec),
        BenchMethod::CaecbRandom => {
            estimate_caecb(dataset, CaecbStep::Random { seed }, spec)
        }
        BenchMethod::TLearnerObs => estimate_tlearner_obs(dataset, spec),
        BenchMethod::TLearnerExpIdealized => {
            estimate_tlearner_exp_idealized(dataset, &truth.experimental_y, spec)
        }
    }
    .map_err(|e| e.to_string())?;

    let est: Vec<f64> = truth
        .eval_points
        .iter()
        .map(|x| model.predict(x))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    Ok(MetricReport {
        pehe: pehe(&truth.true_tau, &est).map_err(|e| e.to_string())?,
        ate_error: ate_error(&truth.true_tau, &est).map_err(|e| e.to_string())?,
        n_eval: est.len(),
        method,
        config_fingerprint: fingerprint_value,
    })
}

/// Runs `R` independent generate -> estimate -> metric replicates of one cell
/// with seeds `base_seed .. base_seed + R`.
pub fn run_replicated(
    sim: &SimConfig,
    settings: &RunSettings,
) -> Result<CellResult, BenchError> {
    let r = settings.replicates.max(1);
    let replicate_outputs: Vec<(u64, Vec<Result<MetricReport, String>>)> = (0..r as u64)
        .into_par_iter()
        .map(|i| {
            let seed = settings.base_seed + i;
            let cell_sim = SimConfig { seed, ..*sim };
            let per_method = match generate(&cell_sim) {
                Ok((dataset, truth)) => settings
                    .methods
                    .iter()
                    .map(|&m| {
                        run_method(
                            m,
                            &dataset,
                            &truth,
                            seed,
                            settings,
                            fingerprint(&cell_sim, settings, m),
                        )
                    })
                    .collect(),
                Err(e) => settings
                    .methods
                    .iter()
                    .map(|_| Err(e.to_string()))
                    .collect(),
            };
            (seed, per_method)
        })
        .collect();

    // Deterministic aggregation: seed order, independent of worker schedule.
    let mut ordered = replicate_outputs;
    ordered.sort_by_key(|(seed, _)| *seed);

    let mut failures = Vec::new();
    let mut methods = Vec::with_capacity(settings.methods.len());
    for (mi, &method) in settings.methods.iter().enumerate() {
        let mut pehe_values = Vec::with_capacity(r);
        let mut ate_values = Vec::with_capacity(r);
        for (seed, per_method) in &ordered {
            match &per_method[mi] {
                Ok(report) => {
                    pehe_values.push(report.pehe);
                    ate_values.push(report.ate_error);
                }
                Err(message) => failures.push(ReplicateFailure {
                    seed: *seed,
                    method,
                    message: message.clone(),
                }),
            }
        }
        let failed = r - pehe_values.len();
        if pehe_values.is_empty() || (failed as f64) > settings.max_failure_fraction * r as f64 {
            let first = failures
                .iter()
                .find(|f| f.method == method)
                .map(|f| f.message.clone())
                .unwrap_or_default();
            return Err(BenchError::TooManyFailures {
                cell: format!("mu={} T={} n_e={} {}", sim.mu, sim.t_total, sim.n_e, method.label()),
                failed,
                total: r,
                limit: settings.max_failure_fraction,
                first,
            });
        }
        methods.push(MethodCellResult {
            method,
            pehe: aggregate(&pehe_values),
            ate: aggregate(&ate_values),
            pehe_values,
            ate_values,
        });
    }

    Ok(CellResult {
        axis_mu: sim.mu,
        axis_t: sim.t_total,
        axis_ne: sim.n_e,
        methods,
        failures,
    })
}

/// One axis of generator configurations to sweep.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SweepAxis {
    /// A single cell at the base config.
    None,
    /// Vary the long-horizon offset at fixed window length.
    Mu(Vec<usize>),
    /// Vary the window length with the absolute long-horizon index pinned,
    /// so every cell estimates the same target: `mu = long_index - T`.
    T {
        values: Vec<usize>,
        long_index: usize,
    },
    /// Vary the experimental sample size with `n_o = ratio * n_e`.
    Ne { values: Vec<usize>, ratio: usize },
    /// Run the corrected estimator through forced step subsets of the base
    /// config (cells are keyed by the subset's effective T and mu).
    Horizon(Vec<Vec<usize>>),
}

/// Expands the axis into per-cell `(SimConfig, RunSettings)` pairs.
fn expand_grid(
    base_sim: &SimConfig,
    base_settings: &RunSettings,
    axis: &SweepAxis,
) -> Result<Vec<(SimConfig, RunSettings)>, BenchError> {
    let cells = match axis {
        SweepAxis::None => vec![(*base_sim, base_settings.clone())],
        SweepAxis::Mu(values) => values
            .iter()
            .map(|&mu| (SimConfig { mu, ..*base_sim }, base_settings.clone()))
            .collect(),
        SweepAxis::T { values, long_index } => values
            .iter()
            .filter(|&&t| t < *long_index)
            .map(|&t| {
                (
                    SimConfig {
                        t_total: t,
                        mu: long_index - t,
                        ..*base_sim
                    },
                    base_settings.clone(),
                )
            })
            .collect(),
        SweepAxis::Ne { values, ratio } => values
            .iter()
            .map(|&n_e| {
                (
                    SimConfig {
                        n_e,
                        n_o: ratio * n_e,
                        ..*base_sim
                    },
                    base_settings.clone(),
                )
            })
            .collect(),
        SweepAxis::Horizon(subsets) => subsets
            .iter()
            .map(|subset| {
                let settings = RunSettings {
                    horizon_candidates: Some(vec![subset.clone()]),
                    ..base_settings.clone()
                };
                (*base_sim, settings)
            })
            .collect(),
    };
    if cells.is_empty() {
        return Err(BenchError::EmptyGrid);
    }
    Ok(cells)
}

/// Runs one [`run_replicated`] per grid cell.
pub fn run_sweep(
    base_sim: &SimConfig,
    base_settings: &RunSettings,
    axis: &SweepAxis,
) -> Result<SweepResult, BenchError> {
    let grid = expand_grid(base_sim, base_settings, axis)?;
    let mut cells = Vec::with_capacity(grid.len());
    for (sim, settings) in &grid {
        let mut cell = run_replicated(sim, settings)?;
        // Horizon cells are keyed by their effective time structure.
        if let SweepAxis::Horizon(_) = axis {
            if let Some(cands) = &settings.horizon_candidates {
                if let Ok(choice) = crate::estimator::select_horizon(
                    sim.t_total,
                    sim.t_total + sim.mu,
                    cands,
                ) {
                    cell.axis_t = choice.effective_t;
                    cell.axis_mu = choice.effective_mu;
                }
            }
        }
        cells.push(cell);
    }
    Ok(SweepResult { cells })
}

/// Renders the tidy results CSV:
/// `axis_mu,axis_T,axis_ne,method,metric,mean,sd,se,R`.
pub fn render_results_csv(result: &SweepResult) -> String {
    let mut out = String::from("axis_mu,axis_T,axis_ne,method,metric,mean,sd,se,R\n");
    for cell in &result.cells {
        for m in &cell.methods {
            for (metric, agg) in [("pehe", &m.pehe), ("ate", &m.ate)] {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{}\n",
                    cell.axis_mu,
                    cell.axis_t,
                    cell.axis_ne,
                    m.method.label(),
                    metric,
                    crate::data::fmt_f64(agg.mean),
                    crate::data::fmt_f64(agg.sd),
                    crate::data::fmt_f64(agg.se),
                    agg.r
                ));
            }
        }
    }
    out
}
