//! Pluggable supervised-regression backend used by every fitting step.
//!
//! All first- and second-stage fits in this crate go through [`fit`] /
//! [`FittedModel::predict`], so swapping the learner is a config change, not a
//! code change. Three families are provided: ordinary polynomial least
//! squares, ridge-penalized polynomial least squares, and a k-nearest-neighbor
//! smoother. Polynomial systems are solved through a singular value
//! decomposition of the (weight-scaled) design matrix; rank-deficient systems
//! get an automatic ridge of `1e-10 * trace(X'WX)` and a diagnostic flag
//! instead of failing, unless the caller disables that fallback.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::data::CovariateVector;

/// Relative singular-value cutoff below which a system counts as
/// rank-deficient.
const RANK_TOL: f64 = 1e-12;

/// Which regression family to fit, with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegressorSpec {
    /// Least squares on all monomials of total degree <= `degree`.
    OlsPolynomial { degree: u32 },
    /// Same basis with an L2 penalty of strength `lambda` on every
    /// non-intercept coefficient.
    RidgePolynomial { degree: u32, lambda: f64 },
    /// Average of the `k` nearest training targets (Euclidean distance on raw
    /// covariates, distance ties broken by lowest training index).
    KnnSmoother { k: usize },
}

impl RegressorSpec {
    pub fn validate(&self) -> Result<(), RegressError> {
        match *self {
            RegressorSpec::OlsPolynomial { degree } => {
                if !(1..=5).contains(&degree) {
                    return Err(RegressError::BadSpec(format!(
                        "polynomial degree must be in 1..=5, got {degree}"
                    )));
                }
            }
            RegressorSpec::RidgePolynomial { degree, lambda } => {
                if !(1..=5).contains(&degree) {
                    return Err(RegressError::BadSpec(format!(
                        "polynomial degree must be in 1..=5, got {degree}"
                    )));
                }
                if lambda.is_nan() || lambda < 0.0 {
                    return Err(RegressError::BadSpec(format!(
                        "ridge lambda must be nonnegative, got {lambda}"
                    )));
                }
            }
            RegressorSpec::KnnSmoother { k } => {
                if k == 0 {
                    return Err(RegressError::BadSpec("knn k must be at least 1".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum RegressError {
    #[error("empty training set")]
    EmptyTraining,
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("singular normal-equation system and ridge fallback disabled")]
    SingularSystem,
    #[error("invalid regressor spec: {0}")]
    BadSpec(String),
    #[error("negative weight at index {0}")]
    NegativeWeight(usize),
}

/// Knobs for [`fit_with`]. The default enables the automatic-ridge rescue of
/// rank-deficient polynomial systems.
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub ridge_fallback: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { ridge_fallback: true }
    }
}

#[derive(Debug, Clone)]
enum ModelState {
    Polynomial {
        exponents: Vec<Vec<u32>>,
        coefficients: Vec<f64>,
        ridge_fallback: bool,
    },
    Knn {
        k: usize,
        inputs: Vec<Vec<f64>>,
        targets: Vec<f64>,
        weights: Vec<f64>,
    },
}

/// A fitted regression model; prediction is deterministic given the stored
/// state.
#[derive(Debug, Clone)]
pub struct FittedModel {
    spec: RegressorSpec,
    d: usize,
    state: ModelState,
}

impl FittedModel {
    pub fn spec(&self) -> RegressorSpec {
        self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.d
    }

    /// True when a rank-deficient polynomial system was rescued with the
    /// automatic ridge.
    pub fn used_ridge_fallback(&self) -> bool {
        match &self.state {
            ModelState::Polynomial { ridge_fallback, .. } => *ridge_fallback,
            ModelState::Knn { .. } => false,
        }
    }

    /// Fitted basis coefficients, in graded lexicographic monomial order.
    /// Empty for the k-NN family.
    pub fn coefficients(&self) -> &[f64] {
        match &self.state {
            ModelState::Polynomial { coefficients, .. } => coefficients,
            ModelState::Knn { .. } => &[],
        }
    }

    /// Builds a polynomial model directly from coefficients. Used by the
    /// transition fitter, whose design matrix is not a plain basis expansion,
    /// and by tests that need exactly known functions.
    pub fn from_polynomial_coefficients(
        degree: u32,
        d: usize,
        coefficients: Vec<f64>,
    ) -> Result<Self, RegressError> {
        let exponents = monomial_exponents(d, degree);
        if coefficients.len() != exponents.len() {
            return Err(RegressError::DimensionMismatch {
                expected: exponents.len(),
                found: coefficients.len(),
            });
        }
        Ok(FittedModel {
            spec: RegressorSpec::OlsPolynomial { degree },
            d,
            state: ModelState::Polynomial {
                exponents,
                coefficients,
                ridge_fallback: false,
            },
        })
    }

    /// The constant function `c`, as a degree-1 polynomial model.
    pub fn constant(d: usize, c: f64) -> Self {
        let exponents = monomial_exponents(d, 1);
        let mut coefficients = vec![0.0; exponents.len()];
        coefficients[0] = c;
        FittedModel {
            spec: RegressorSpec::OlsPolynomial { degree: 1 },
            d,
            state: ModelState::Polynomial {
                exponents,
                coefficients,
                ridge_fallback: false,
            },
        }
    }

    pub fn predict(&self, x: &CovariateVector) -> Result<f64, RegressError> {
        if x.dim() != self.d {
            return Err(RegressError::DimensionMismatch {
                expected: self.d,
                found: x.dim(),
            });
        }
        match &self.state {
            ModelState::Polynomial {
                exponents,
                coefficients,
                ..
            } => Ok(exponents
                .iter()
                .zip(coefficients)
                .map(|(e, c)| c * monomial(x.values(), e))
                .sum()),
            ModelState::Knn {
                k,
                inputs,
                targets,
                weights,
            } => {
                let mut order: Vec<usize> = (0..inputs.len()).collect();
                order.sort_by(|&i, &j| {
                    let di = sq_dist(x.values(), &inputs[i]);
                    let dj = sq_dist(x.values(), &inputs[j]);
                    di.partial_cmp(&dj).unwrap().then(i.cmp(&j))
                });
                let take = (*k).min(order.len());
                let mut num = 0.0;
                let mut den = 0.0;
                for &i in &order[..take] {
                    num += weights[i] * targets[i];
                    den += weights[i];
                }
                if den == 0.0 {
                    // All selected neighbors carry zero weight; fall back to
                    // the unweighted neighborhood mean.
                    let m = order[..take].iter().map(|&i| targets[i]).sum::<f64>();
                    Ok(m / take as f64)
                } else {
                    Ok(num / den)
                }
            }
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

fn monomial(x: &[f64], exps: &[u32]) -> f64 {
    x.iter()
        .zip(exps)
        .map(|(v, &e)| v.powi(e as i32))
        .product()
}

/// All monomial exponent vectors of total degree <= `degree` in `d` variables,
/// graded lexicographic: constant first, then degree 1, 2, ...
pub(crate) fn monomial_exponents(d: usize, degree: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    for total in 0..=degree {
        let mut current = vec![0u32; d];
        emit_exponents(&mut out, &mut current, 0, total);
    }
    out
}

fn emit_exponents(out: &mut Vec<Vec<u32>>, current: &mut Vec<u32>, pos: usize, remaining: u32) {
    if pos == current.len() - 1 {
        current[pos] = remaining;
        out.push(current.clone());
        current[pos] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        current[pos] = e;
        emit_exponents(out, current, pos + 1, remaining - e);
        current[pos] = 0;
    }
}

/// Evaluates the polynomial basis for `spec`'s degree at `x`.
pub(crate) fn basis_row(x: &[f64], exponents: &[Vec<u32>]) -> Vec<f64> {
    exponents.iter().map(|e| monomial(x, e)).collect()
}

/// Outcome of a raw weighted least-squares solve.
pub(crate) struct WlsSolution {
    pub coefficients: Vec<f64>,
    pub ridge_fallback: bool,
}

/// Solves `min_beta sum_i w_i (y_i - row_i . beta)^2 (+ explicit ridge)` via
/// SVD of the sqrt(w)-scaled design. `penalize_from` is the first column the
/// explicit ridge applies to (1 keeps the intercept free). Rank-deficient
/// systems are re-solved with an automatic all-column ridge of
/// `1e-10 * trace(X'WX)` when `allow_fallback` is set.
pub(crate) fn solve_wls(
    rows: &[Vec<f64>],
    targets: &[f64],
    weights: Option<&[f64]>,
    explicit_ridge: Option<(f64, usize)>,
    allow_fallback: bool,
) -> Result<WlsSolution, RegressError> {
    let n = rows.len();
    if n == 0 {
        return Err(RegressError::EmptyTraining);
    }
    let p = rows[0].len();
    if targets.len() != n {
        return Err(RegressError::DimensionMismatch {
            expected: n,
            found: targets.len(),
        });
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(RegressError::DimensionMismatch {
                expected: n,
                found: w.len(),
            });
        }
        if let Some(i) = w.iter().position(|&v| v < 0.0) {
            return Err(RegressError::NegativeWeight(i));
        }
    }

    let (lambda, penalize_from) = explicit_ridge.unwrap_or((0.0, p));
    let extra = if lambda > 0.0 { p - penalize_from } else { 0 };
    let mut design = DMatrix::<f64>::zeros(n + extra, p);
    let mut rhs = DVector::<f64>::zeros(n + extra);
    for (i, row) in rows.iter().enumerate() {
        let sw = weights.map_or(1.0, |w| w[i].sqrt());
        for (j, v) in row.iter().enumerate() {
            design[(i, j)] = sw * v;
        }
        rhs[i] = sw * targets[i];
    }
    if extra > 0 {
        let s = lambda.sqrt();
        for (k, j) in (penalize_from..p).enumerate() {
            design[(n + k, j)] = s;
        }
    }

    let trace: f64 = design.column_iter().map(|c| c.norm_squared()).sum();
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let deficient = smax == 0.0
        || svd
            .singular_values
            .iter()
            .any(|&s| s <= RANK_TOL * smax);

    if !deficient {
        let beta = svd
            .solve(&rhs, RANK_TOL * smax)
            .map_err(|_| RegressError::SingularSystem)?;
        return Ok(WlsSolution {
            coefficients: beta.iter().cloned().collect(),
            ridge_fallback: false,
        });
    }
    if !allow_fallback {
        return Err(RegressError::SingularSystem);
    }
    // Rescue ridge on every column. A zero-trace (all-zero) design falls
    // through to the minimum-norm solution, which is identically zero.
    let auto = 1e-10 * trace;
    if auto > 0.0 {
        let mut aug = DMatrix::<f64>::zeros(design.nrows() + p, p);
        aug.view_mut((0, 0), (design.nrows(), p)).copy_from(&design);
        let s = auto.sqrt();
        for j in 0..p {
            aug[(design.nrows() + j, j)] = s;
        }
        let mut rhs_aug = DVector::<f64>::zeros(aug.nrows());
        rhs_aug.rows_mut(0, rhs.len()).copy_from(&rhs);
        let svd2 = aug.svd(true, true);
        let smax2 = svd2.singular_values.iter().cloned().fold(0.0_f64, f64::max);
        let beta = svd2
            .solve(&rhs_aug, RANK_TOL * smax2)
            .map_err(|_| RegressError::SingularSystem)?;
        Ok(WlsSolution {
            coefficients: beta.iter().cloned().collect(),
            ridge_fallback: true,
        })
    } else {
        let beta = svd.solve(&rhs, 0.0).unwrap_or_else(|_| DVector::zeros(p));
        Ok(WlsSolution {
            coefficients: beta.iter().cloned().collect(),
            ridge_fallback: true,
        })
    }
}

/// Fits `spec` to `(inputs, targets)` with optional nonnegative weights.
pub fn fit(
    spec: RegressorSpec,
    inputs: &[CovariateVector],
    targets: &[f64],
    weights: Option<&[f64]>,
) -> Result<FittedModel, RegressError> {
    fit_with(spec, inputs, targets, weights, FitOptions::default())
}

pub fn fit_with(
    spec: RegressorSpec,
    inputs: &[CovariateVector],
    targets: &[f64],
    weights: Option<&[f64]>,
    options: FitOptions,
) -> Result<FittedModel, RegressError> {
    spec.validate()?;
    if inputs.is_empty() {
        return Err(RegressError::EmptyTraining);
    }
    if targets.len() != inputs.len() {
        return Err(RegressError::DimensionMismatch {
            expected: inputs.len(),
            found: targets.len(),
        });
    }
    let d = inputs[0].dim();
    if let Some(bad) = inputs.iter().find(|x| x.dim() != d) {
        return Err(RegressError::DimensionMismatch {
            expected: d,
            found: bad.dim(),
        });
    }

    match spec {
        RegressorSpec::OlsPolynomial { degree } => {
            fit_polynomial(spec, d, degree, None, inputs, targets, weights, options)
        }
        RegressorSpec::RidgePolynomial { degree, lambda } => fit_polynomial(
            spec,
            d,
            degree,
            (lambda > 0.0).then_some(lambda),
            inputs,
            targets,
            weights,
            options,
        ),
        RegressorSpec::KnnSmoother { k } => {
            if let Some(w) = weights {
                if w.len() != inputs.len() {
                    return Err(RegressError::DimensionMismatch {
                        expected: inputs.len(),
                        found: w.len(),
                    });
                }
                if let Some(i) = w.iter().position(|&v| v < 0.0) {
                    return Err(RegressError::NegativeWeight(i));
                }
            }
            Ok(FittedModel {
                spec,
                d,
                state: ModelState::Knn {
                    k,
                    inputs: inputs.iter().map(|x| x.values().to_vec()).collect(),
                    targets: targets.to_vec(),
                    weights: weights
                        .map(<[f64]>::to_vec)
                        .unwrap_or_else(|| vec![1.0; targets.len()]),
                },
            })
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn fit_polynomial(
    spec: RegressorSpec,
    d: usize,
    degree: u32,
    lambda: Option<f64>,
    inputs: &[CovariateVector],
    targets: &[f64],
    weights: Option<&[f64]>,
    options: FitOptions,
) -> Result<FittedModel, RegressError> {
    let exponents = monomial_exponents(d, degree);
    let rows: Vec<Vec<f64>> = inputs
        .iter()
        .map(|x| basis_row(x.values(), &exponents))
        .collect();
    let sol = solve_wls(
        &rows,
        targets,
        weights,
        lambda.map(|l| (l, 1)),
        options.ridge_fallback,
    )?;
    Ok(FittedModel {
        spec,
        d,
        state: ModelState::Polynomial {
            exponents,
            coefficients: sol.coefficients,
            ridge_fallback: sol.ridge_fallback,
        },
    })
}
