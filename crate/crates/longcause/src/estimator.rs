//! Assembling effect estimators from the fitted pieces.
//!
//! The flagship estimator corrects the observational long-term contrast with
//! an extrapolated confounding bias:
//!
//! ```text
//! tau_hat(x) = muY_O(1,x) - muY_O(0,x) + f_hat(x)^mu * omega_hat_T(x)
//! ```
//!
//! Its pipeline is: optional step-subset selection, optional sample split,
//! first-stage nuisance fits, bias panel and transition fit, then the formula
//! above. Three reference estimators share the machinery: the equal-bias
//! corrector (which replaces `f_hat^mu` with 1 at a chosen step), the plain
//! observational T-learner (no correction), and an idealized T-learner fitted
//! on privileged experimental long-term outcomes that no real dataset
//! contains.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::data::{
    select_time_subset, split_halves, validate_progression, Arm, CombinedDataset,
    CovariateVector, DataError, Group,
};
use crate::dynamics::{
    build_panel, fit_transition, transition_power, BiasTransition, DynamicsError,
    DEFAULT_GUARD_EPSILON,
};
use crate::nuisance::{
    confounding_bias, fit_nuisances, observed_outcome_difference, NuisanceError, NuisanceSet,
};
use crate::regress::{fit, FittedModel, RegressError, RegressorSpec};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("no valid step-subset candidate")]
    NoValidCandidate,
    #[error("step index {t} outside 1..={t_max}")]
    IndexOutOfRange { t: usize, t_max: usize },
    #[error("experimental outcomes misaligned: {found} values for {expected} experimental rows")]
    MissingExperimentalOutcome { expected: usize, found: usize },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Nuisance(#[from] NuisanceError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Regress(#[from] RegressError),
}

/// Whether the first and second stages are fitted on disjoint halves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Splitting {
    On { seed: u64 },
    Off,
}

/// Which estimator produced a [`TauModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Fcaecb,
    Caecb { step: usize },
    TLearnerObs,
    TLearnerExpIdealized,
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Fcaecb => "fcaecb".into(),
            Method::Caecb { step } => format!("caecb_s{step}"),
            Method::TLearnerObs => "tlearner_obs".into(),
            Method::TLearnerExpIdealized => "tlearner_exp_idealized".into(),
        }
    }
}

/// A validated choice of observed-step subset with its re-indexed time
/// structure. The selection score is `mu' / sqrt(T' - 1)`: extrapolating
/// farther hurts, observing longer helps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HorizonChoice {
    pub kept_steps: Vec<usize>,
    pub effective_t: usize,
    pub effective_mu: usize,
}

impl HorizonChoice {
    /// The no-subsetting choice: keep all `t` steps at offset `mu`.
    pub fn all_steps(t: usize, mu: usize) -> Self {
        HorizonChoice {
            kept_steps: (1..=t).collect(),
            effective_t: t,
            effective_mu: mu,
        }
    }

    pub fn score(&self) -> f64 {
        self.effective_mu as f64 / ((self.effective_t - 1) as f64).sqrt()
    }
}

/// Scores every candidate subset of `1..=t_available` against
/// `long_index` and returns the one minimizing `mu' / sqrt(T' - 1)`.
/// Ties prefer the smaller extrapolation offset, then the longer window.
/// Candidates that are not equally spaced, do not reach the long horizon on
/// their grid, or keep fewer than two steps are skipped; if none survive the
/// selection fails.
pub fn select_horizon(
    t_available: usize,
    long_index: usize,
    candidates: &[Vec<usize>],
) -> Result<HorizonChoice, EstimatorError> {
    let mut best: Option<HorizonChoice> = None;
    for cand in candidates {
        let Ok(spacing) = validate_progression(cand, t_available) else {
            continue;
        };
        let last = *cand.last().unwrap();
        if long_index <= last || !(long_index - last).is_multiple_of(spacing) {
            continue;
        }
        let choice = HorizonChoice {
            kept_steps: cand.clone(),
            effective_t: cand.len(),
            effective_mu: (long_index - last) / spacing,
        };
        let better = match &best {
            None => true,
            Some(b) => {
                let (sa, sb) = (choice.score(), b.score());
                sa < sb
                    || (sa == sb
                        && (choice.effective_mu < b.effective_mu
                            || (choice.effective_mu == b.effective_mu
                                && choice.effective_t > b.effective_t)))
            }
        };
        if better {
            best = Some(choice);
        }
    }
    best.ok_or(EstimatorError::NoValidCandidate)
}

/// All equally spaced subsets of `1..=t_available` (length >= 2) from which
/// `long_index` is reachable in whole steps. This is the candidate pool for
/// automatic horizon selection.
pub fn enumerate_horizon_candidates(t_available: usize, long_index: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for spacing in 1..t_available {
        for start in 1..=t_available {
            let mut steps = Vec::new();
            let mut s = start;
            while s <= t_available {
                steps.push(s);
                s += spacing;
            }
            while steps.len() >= 2 {
                let last = *steps.last().unwrap();
                if long_index > last && (long_index - last).is_multiple_of(spacing) {
                    out.push(steps.clone());
                }
                steps.pop();
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

/// Which covariates feed the bias panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvalPopulation {
    /// Observational rows of the evaluation split (the estimand's target
    /// population).
    #[default]
    Observational,
    /// Pooled experimental and observational rows, for sensitivity analysis.
    Pooled,
}

/// Pipeline options for the transition-corrected estimator.
#[derive(Debug, Clone)]
pub struct EstimatorOptions {
    pub splitting: Splitting,
    pub guard_epsilon: f64,
    /// `None` keeps every observed step; `Some(candidates)` runs subset
    /// selection over them first.
    pub horizon_candidates: Option<Vec<Vec<usize>>>,
    /// With splitting on, refit the final-prediction nuisances on the full
    /// dataset instead of reusing the first half's.
    pub refit_full: bool,
    pub eval_population: EvalPopulation,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        EstimatorOptions {
            splitting: Splitting::Off,
            guard_epsilon: DEFAULT_GUARD_EPSILON,
            horizon_candidates: None,
            refit_full: false,
            eval_population: EvalPopulation::Observational,
        }
    }
}

#[derive(Debug, Clone)]
enum TauKind {
    Fcaecb {
        nuisances: NuisanceSet,
        transition: BiasTransition,
        horizon: HorizonChoice,
    },
    Caecb {
        nuisances: NuisanceSet,
        step: usize,
    },
    OutcomeContrast {
        models: [FittedModel; 2],
    },
}

/// A callable heterogeneous-effect estimate with its provenance.
#[derive(Debug, Clone)]
pub struct TauModel {
    method: Method,
    kind: TauKind,
    splitting: Splitting,
}

impl TauModel {
    pub fn method(&self) -> Method {
        self.method
    }

    pub fn splitting(&self) -> Splitting {
        self.splitting
    }

    pub fn horizon(&self) -> Option<&HorizonChoice> {
        match &self.kind {
            TauKind::Fcaecb { horizon, .. } => Some(horizon),
            _ => None,
        }
    }

    pub fn transition(&self) -> Option<&BiasTransition> {
        match &self.kind {
            TauKind::Fcaecb { transition, .. } => Some(transition),
            _ => None,
        }
    }

    pub fn nuisances(&self) -> Option<&NuisanceSet> {
        match &self.kind {
            TauKind::Fcaecb { nuisances, .. } | TauKind::Caecb { nuisances, .. } => {
                Some(nuisances)
            }
            TauKind::OutcomeContrast { .. } => None,
        }
    }

    /// Builds the transition-corrected estimator from already-fitted parts.
    pub fn fcaecb_from_parts(
        nuisances: NuisanceSet,
        transition: BiasTransition,
        horizon: HorizonChoice,
        splitting: Splitting,
    ) -> Self {
        TauModel {
            method: Method::Fcaecb,
            kind: TauKind::Fcaecb {
                nuisances,
                transition,
                horizon,
            },
            splitting,
        }
    }

    /// Builds the equal-bias estimator at `step` from already-fitted parts.
    pub fn caecb_from_parts(
        nuisances: NuisanceSet,
        step: usize,
    ) -> Result<Self, EstimatorError> {
        if step == 0 || step > nuisances.t() {
            return Err(EstimatorError::IndexOutOfRange {
                t: step,
                t_max: nuisances.t(),
            });
        }
        Ok(TauModel {
            method: Method::Caecb { step },
            kind: TauKind::Caecb { nuisances, step },
            splitting: Splitting::Off,
        })
    }

    /// Evaluates the estimator's formula at `x`.
    pub fn predict(&self, x: &CovariateVector) -> Result<f64, EstimatorError> {
        match &self.kind {
            TauKind::Fcaecb {
                nuisances,
                transition,
                horizon,
            } => {
                let base = observed_outcome_difference(nuisances, x)?;
                let omega_last = confounding_bias(nuisances, nuisances.t(), x)?;
                let fpow = transition_power(transition, x, horizon.effective_mu)?;
                Ok(base + fpow * omega_last)
            }
            TauKind::Caecb { nuisances, step } => {
                let base = observed_outcome_difference(nuisances, x)?;
                let omega = confounding_bias(nuisances, *step, x)?;
                Ok(base + omega)
            }
            TauKind::OutcomeContrast { models } => {
                Ok(models[1].predict(x)? - models[0].predict(x)?)
            }
        }
    }
}

/// Free-function form of [`TauModel::predict`].
pub fn predict_tau(model: &TauModel, x: &CovariateVector) -> Result<f64, EstimatorError> {
    model.predict(x)
}

fn panel_points(dataset: &CombinedDataset, population: EvalPopulation) -> Vec<CovariateVector> {
    match population {
        EvalPopulation::Observational => dataset.observational_covariates(),
        EvalPopulation::Pooled => dataset.all_covariates(),
    }
}

/// Runs the full transition-corrected pipeline on one dataset.
pub fn estimate_fcaecb(
    dataset: &CombinedDataset,
    nuisance_spec: RegressorSpec,
    transition_spec: RegressorSpec,
    options: &EstimatorOptions,
) -> Result<TauModel, EstimatorError> {
    let long_index = dataset.t() + dataset.mu();
    let (working, horizon) = match &options.horizon_candidates {
        None => (
            dataset.clone(),
            HorizonChoice::all_steps(dataset.t(), dataset.mu()),
        ),
        Some(cands) => {
            let choice = select_horizon(dataset.t(), long_index, cands)?;
            let subset = select_time_subset(dataset, &choice.kept_steps, long_index)?;
            (subset, choice)
        }
    };

    let (nuisances, transition) = match options.splitting {
        Splitting::Off => {
            let nuis = fit_nuisances(&working, nuisance_spec)?;
            let points = panel_points(&working, options.eval_population);
            let panel = build_panel(&nuis, &points, "full sample")?;
            let transition = fit_transition(&panel, transition_spec, options.guard_epsilon)?;
            (nuis, transition)
        }
        Splitting::On { seed } => {
            let split = split_halves(&working, seed)?;
            let nuis_a = fit_nuisances(&split.part_a, nuisance_spec)?;
            let points = panel_points(&split.part_b, options.eval_population);
            let panel = build_panel(&nuis_a, &points, format!("split seed {seed}"))?;
            let transition = fit_transition(&panel, transition_spec, options.guard_epsilon)?;
            let final_nuis = if options.refit_full {
                fit_nuisances(&working, nuisance_spec)?
            } else {
                nuis_a
            };
            (final_nuis, transition)
        }
    };

    Ok(TauModel {
        method: Method::Fcaecb,
        kind: TauKind::Fcaecb {
            nuisances,
            transition,
            horizon,
        },
        splitting: options.splitting,
    })
}

/// Which single step the equal-bias corrector uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaecbStep {
    First,
    Middle,
    Last,
    Random { seed: u64 },
    Explicit(usize),
}

impl CaecbStep {
    pub fn resolve(self, t: usize) -> Result<usize, EstimatorError> {
        let step = match self {
            CaecbStep::First => 1,
            CaecbStep::Middle => t.div_ceil(2),
            CaecbStep::Last => t,
            CaecbStep::Random { seed } => {
                ChaCha12Rng::seed_from_u64(seed).gen_range(1..=t)
            }
            CaecbStep::Explicit(s) => s,
        };
        if step == 0 || step > t {
            return Err(EstimatorError::IndexOutOfRange { t: step, t_max: t });
        }
        Ok(step)
    }
}

/// The equal-bias corrector: the observational contrast plus the bias at one
/// chosen short-term step, treated as if it equaled the long-term bias.
pub fn estimate_caecb(
    dataset: &CombinedDataset,
    s_index: CaecbStep,
    spec: RegressorSpec,
) -> Result<TauModel, EstimatorError> {
    let step = s_index.resolve(dataset.t())?;
    let nuisances = fit_nuisances(dataset, spec)?;
    TauModel::caecb_from_parts(nuisances, step)
}

fn arm_outcome_fit(
    rows: &[(&CovariateVector, f64)],
    group: Group,
    arm: Arm,
    spec: RegressorSpec,
) -> Result<FittedModel, EstimatorError> {
    if rows.is_empty() {
        return Err(EstimatorError::Nuisance(NuisanceError::EmptyStratum {
            group,
            arm: arm.index(),
        }));
    }
    let xs: Vec<CovariateVector> = rows.iter().map(|(x, _)| (*x).clone()).collect();
    let ys: Vec<f64> = rows.iter().map(|(_, y)| *y).collect();
    Ok(fit(spec, &xs, &ys, None)?)
}

/// The uncorrected estimator: per-arm fits of the long-term outcome on
/// observational rows.
pub fn estimate_tlearner_obs(
    dataset: &CombinedDataset,
    spec: RegressorSpec,
) -> Result<TauModel, EstimatorError> {
    let mut per_arm: [Vec<(&CovariateVector, f64)>; 2] = [Vec::new(), Vec::new()];
    for r in dataset.records() {
        if r.group == Group::Observational {
            per_arm[r.arm.index()].push((&r.covariates, r.long_outcome.unwrap()));
        }
    }
    let models = [
        arm_outcome_fit(&per_arm[0], Group::Observational, Arm::Control, spec)?,
        arm_outcome_fit(&per_arm[1], Group::Observational, Arm::Treated, spec)?,
    ];
    Ok(TauModel {
        method: Method::TLearnerObs,
        kind: TauKind::OutcomeContrast { models },
        splitting: Splitting::Off,
    })
}

/// The idealized reference: per-arm fits of the long-term outcome on
/// experimental rows, which requires the simulator's privileged
/// `experimental_y` (aligned with experimental records in dataset order).
/// Infeasible outside simulation, where it serves as the attainable floor.
pub fn estimate_tlearner_exp_idealized(
    dataset: &CombinedDataset,
    experimental_y: &[f64],
    spec: RegressorSpec,
) -> Result<TauModel, EstimatorError> {
    let n_exp = dataset.n_experimental();
    if experimental_y.len() != n_exp {
        return Err(EstimatorError::MissingExperimentalOutcome {
            expected: n_exp,
            found: experimental_y.len(),
        });
    }
    let mut per_arm: [Vec<(&CovariateVector, f64)>; 2] = [Vec::new(), Vec::new()];
    let mut k = 0;
    for r in dataset.records() {
        if r.group == Group::Experimental {
            per_arm[r.arm.index()].push((&r.covariates, experimental_y[k]));
            k += 1;
        }
    }
    let models = [
        arm_outcome_fit(&per_arm[0], Group::Experimental, Arm::Control, spec)?,
        arm_outcome_fit(&per_arm[1], Group::Experimental, Arm::Treated, spec)?,
    ];
    Ok(TauModel {
        method: Method::TLearnerExpIdealized,
        kind: TauKind::OutcomeContrast { models },
        splitting: Splitting::Off,
    })
}
