//! Second stage: fit the bias-transition function, extrapolate it, and test
//! the transition assumption on held-out steps.
//!
//! Given per-step bias estimates `omega_t(x_i)` arranged in a panel, the
//! transition `f` is the multiplier linking consecutive steps,
//! `omega_{t+1}(x) = f(x) * omega_t(x)`. For polynomial families we solve the
//! literal least-squares objective
//!
//! ```text
//! min_f  sum_{t=1}^{T-1} sum_i ( omega_{t+1}(x_i) - f(x_i) * omega_t(x_i) )^2
//! ```
//!
//! by absorbing the multiplier into the design: each pair contributes one row
//! `phi(x_i) * omega_t(x_i)` with target `omega_{t+1}(x_i)`. The k-NN family
//! has no global design, so it fits the local ratio `omega_{t+1}/omega_t`
//! weighted by `omega_t^2`, dropping pairs whose denominator sits within
//! `guard_epsilon` of zero.

use rayon::prelude::*;
use thiserror::Error;

use crate::data::CovariateVector;
use crate::nuisance::{confounding_bias, NuisanceError, NuisanceSet};
use crate::regress::{
    basis_row, fit, monomial_exponents, solve_wls, FittedModel, RegressError, RegressorSpec,
};

/// Default denominator guard for the ratio (k-NN) path.
pub const DEFAULT_GUARD_EPSILON: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("panel has {t} step columns; at least {required} required")]
    TooFewSteps { t: usize, required: usize },
    #[error("every bias magnitude is within {guard} of zero; the transition is uninformative")]
    AllPairsDegenerate { guard: f64 },
    #[error("held-out bias column is constant; R^2 is undefined")]
    ZeroVariance,
    #[error("panel contains a non-finite bias at point {point}, step {step}")]
    NonFinitePanelEntry { point: usize, step: usize },
    #[error("panel is empty")]
    EmptyPanel,
    #[error(transparent)]
    Nuisance(#[from] NuisanceError),
    #[error(transparent)]
    Regress(#[from] RegressError),
}

/// Bias evaluations on a fixed set of covariate points: entry `(i, t)` holds
/// `omega_{t+1}(x_i)` for `t` in `0..T`.
#[derive(Debug, Clone)]
pub struct BiasPanel {
    eval_points: Vec<CovariateVector>,
    biases: Vec<Vec<f64>>,
    source: String,
}

impl BiasPanel {
    pub fn new(
        eval_points: Vec<CovariateVector>,
        biases: Vec<Vec<f64>>,
        source: impl Into<String>,
    ) -> Result<Self, DynamicsError> {
        if eval_points.is_empty() {
            return Err(DynamicsError::EmptyPanel);
        }
        assert_eq!(eval_points.len(), biases.len(), "one bias row per eval point");
        let t = biases[0].len();
        if t < 2 {
            return Err(DynamicsError::TooFewSteps { t, required: 2 });
        }
        for (i, row) in biases.iter().enumerate() {
            assert_eq!(row.len(), t, "ragged bias panel");
            if let Some(step) = row.iter().position(|v| !v.is_finite()) {
                return Err(DynamicsError::NonFinitePanelEntry { point: i, step });
            }
        }
        Ok(BiasPanel {
            eval_points,
            biases,
            source: source.into(),
        })
    }

    pub fn eval_points(&self) -> &[CovariateVector] {
        &self.eval_points
    }

    pub fn n_eval(&self) -> usize {
        self.eval_points.len()
    }

    pub fn t(&self) -> usize {
        self.biases[0].len()
    }

    /// `omega_{t}(x_i)` with 1-based `t`.
    pub fn bias(&self, i: usize, t: usize) -> f64 {
        self.biases[i][t - 1]
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Panel restricted to the first `t` step columns.
    pub fn truncated(&self, t: usize) -> Result<BiasPanel, DynamicsError> {
        BiasPanel::new(
            self.eval_points.clone(),
            self.biases.iter().map(|row| row[..t].to_vec()).collect(),
            format!("{} (first {t} steps)", self.source),
        )
    }
}

/// Evaluates the fitted confounding bias at every `(point, step)` cell.
pub fn build_panel(
    nuisances: &NuisanceSet,
    eval_points: &[CovariateVector],
    source: impl Into<String>,
) -> Result<BiasPanel, DynamicsError> {
    if eval_points.is_empty() {
        return Err(DynamicsError::EmptyPanel);
    }
    let t_max = nuisances.t();
    let biases: Vec<Vec<f64>> = eval_points
        .par_iter()
        .map(|x| {
            (1..=t_max)
                .map(|t| confounding_bias(nuisances, t, x))
                .collect::<Result<Vec<f64>, NuisanceError>>()
        })
        .collect::<Result<_, _>>()?;
    BiasPanel::new(eval_points.to_vec(), biases, source)
}

/// Fit diagnostics for a transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionDiagnostics {
    /// Sum of squared residuals of the transition objective over used pairs.
    pub residual_sse: f64,
    /// Pairs excluded by the denominator guard (ratio path only).
    pub dropped_pairs: usize,
    /// True when the polynomial solve needed the automatic-ridge rescue
    /// (e.g. an all-zero panel, where the fitted transition is identically 0).
    pub degenerate: bool,
}

/// The fitted one-step bias transition `f_hat` with its fit provenance.
#[derive(Debug, Clone)]
pub struct BiasTransition {
    model: FittedModel,
    guard_epsilon: f64,
    pairs_used: usize,
    diagnostics: TransitionDiagnostics,
}

impl BiasTransition {
    /// A transition that is exactly the constant `value`; `constant(d, 1.0)`
    /// reduces the extrapolated correction to the equi-bias special case.
    pub fn constant(d: usize, value: f64) -> Self {
        BiasTransition {
            model: FittedModel::constant(d, value),
            guard_epsilon: DEFAULT_GUARD_EPSILON,
            pairs_used: 0,
            diagnostics: TransitionDiagnostics {
                residual_sse: 0.0,
                dropped_pairs: 0,
                degenerate: false,
            },
        }
    }

    pub fn evaluate(&self, x: &CovariateVector) -> Result<f64, RegressError> {
        self.model.predict(x)
    }

    pub fn model(&self) -> &FittedModel {
        &self.model
    }

    pub fn guard_epsilon(&self) -> f64 {
        self.guard_epsilon
    }

    pub fn pairs_used(&self) -> usize {
        self.pairs_used
    }

    pub fn diagnostics(&self) -> TransitionDiagnostics {
        self.diagnostics
    }
}

/// Fits the transition on all consecutive step pairs of the panel.
pub fn fit_transition(
    panel: &BiasPanel,
    spec: RegressorSpec,
    guard_epsilon: f64,
) -> Result<BiasTransition, DynamicsError> {
    spec.validate()?;
    let t = panel.t();
    if t < 2 {
        return Err(DynamicsError::TooFewSteps { t, required: 2 });
    }
    let n_pairs = panel.n_eval() * (t - 1);

    let (model, pairs_used, dropped_pairs, degenerate) = match spec {
        RegressorSpec::OlsPolynomial { degree } | RegressorSpec::RidgePolynomial { degree, .. } => {
            let lambda = match spec {
                RegressorSpec::RidgePolynomial { lambda, .. } => (lambda > 0.0).then_some(lambda),
                _ => None,
            };
            let exponents = monomial_exponents(panel.eval_points[0].dim(), degree);
            let mut rows = Vec::with_capacity(n_pairs);
            let mut targets = Vec::with_capacity(n_pairs);
            for step in 1..t {
                for (i, x) in panel.eval_points.iter().enumerate() {
                    let scale = panel.bias(i, step);
                    let mut row = basis_row(x.values(), &exponents);
                    for v in &mut row {
                        *v *= scale;
                    }
                    rows.push(row);
                    targets.push(panel.bias(i, step + 1));
                }
            }
            let sol = solve_wls(&rows, &targets, None, lambda.map(|l| (l, 1)), true)?;
            let model =
                FittedModel::from_polynomial_coefficients(degree, panel.eval_points[0].dim(), sol.coefficients)?;
            (model, n_pairs, 0, sol.ridge_fallback)
        }
        RegressorSpec::KnnSmoother { .. } => {
            let mut inputs = Vec::new();
            let mut ratios = Vec::new();
            let mut weights = Vec::new();
            let mut dropped = 0usize;
            for step in 1..t {
                for (i, x) in panel.eval_points.iter().enumerate() {
                    let denom = panel.bias(i, step);
                    if denom.abs() <= guard_epsilon {
                        dropped += 1;
                        continue;
                    }
                    inputs.push(x.clone());
                    ratios.push(panel.bias(i, step + 1) / denom);
                    weights.push(denom * denom);
                }
            }
            if inputs.is_empty() {
                return Err(DynamicsError::AllPairsDegenerate {
                    guard: guard_epsilon,
                });
            }
            let model = fit(spec, &inputs, &ratios, Some(&weights))?;
            (model, inputs.len(), dropped, false)
        }
    };

    // Residual of the transition objective over the pairs that entered the fit.
    let mut residual_sse = 0.0;
    for step in 1..t {
        for (i, x) in panel.eval_points.iter().enumerate() {
            let denom = panel.bias(i, step);
            if matches!(spec, RegressorSpec::KnnSmoother { .. }) && denom.abs() <= guard_epsilon {
                continue;
            }
            let pred = model.predict(x)? * denom;
            let r = panel.bias(i, step + 1) - pred;
            residual_sse += r * r;
        }
    }

    Ok(BiasTransition {
        model,
        guard_epsilon,
        pairs_used,
        diagnostics: TransitionDiagnostics {
            residual_sse,
            dropped_pairs,
            degenerate,
        },
    })
}

/// `f_hat(x)^mu` by repeated multiplication, preserving sign for negative
/// transitions.
pub fn transition_power(
    transition: &BiasTransition,
    x: &CovariateVector,
    mu: usize,
) -> Result<f64, RegressError> {
    let f = transition.evaluate(x)?;
    let mut acc = 1.0;
    for _ in 0..mu {
        acc *= f;
    }
    Ok(acc)
}

/// Result of the held-out transition test.
#[derive(Debug, Clone)]
pub struct AssumptionTest {
    /// Held-out R^2 of the transition on the last step pair; may be negative.
    pub r_squared: f64,
    /// The transition fitted on the earlier pairs.
    pub transition: BiasTransition,
    /// Index of the held-out target step (always the panel's last step).
    pub held_out_step: usize,
}

/// Fits the transition on step pairs `1..T-2` and scores it on the held-out
/// pair `(T-1, T)`:
///
/// ```text
/// R^2 = 1 - sum_i (omega_T(x_i) - f_hat(x_i) omega_{T-1}(x_i))^2
///         / sum_i (omega_T(x_i) - mean_j omega_T(x_j))^2
/// ```
///
/// With exactly three steps this is fit-on-(1,2), test-on-(2,3). Values near 1
/// mean the one-step multiplier extrapolates; values well below 1 mean the
/// transition family does not explain the held-out step.
pub fn assumption_r2(
    panel: &BiasPanel,
    spec: RegressorSpec,
    guard_epsilon: f64,
) -> Result<AssumptionTest, DynamicsError> {
    let t = panel.t();
    if t < 3 {
        return Err(DynamicsError::TooFewSteps { t, required: 3 });
    }
    let train = panel.truncated(t - 1)?;
    let transition = fit_transition(&train, spec, guard_epsilon)?;

    let n = panel.n_eval();
    let mean_last = (0..n).map(|i| panel.bias(i, t)).sum::<f64>() / n as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, x) in panel.eval_points.iter().enumerate() {
        let pred = transition.model.predict(x)? * panel.bias(i, t - 1);
        let r = panel.bias(i, t) - pred;
        num += r * r;
        let c = panel.bias(i, t) - mean_last;
        den += c * c;
    }
    if den == 0.0 {
        return Err(DynamicsError::ZeroVariance);
    }
    Ok(AssumptionTest {
        r_squared: 1.0 - num / den,
        transition,
        held_out_step: t,
    })
}
