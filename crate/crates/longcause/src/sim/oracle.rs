//! Exact verification of the identification identities on a finite
//! population.
//!
//! A discrete law over (X, U, A, G) with a deterministic outcome table lets
//! every conditional mean be computed by enumeration, with no estimation
//! error. On such a law the identification formulas are algebraic identities:
//! the corrected observational contrast must reproduce the true effect
//! exactly, and consecutive biases must be linked by the declared transition.
//! The oracle computes both sides of each identity and reports the largest
//! discrepancy, so a conforming law certifies the formulas and a deliberately
//! broken law quantifies how far they drift.
//!
//! Construction guarantees for the law itself:
//! - treatment is a constant coin in the experimental group (randomization),
//! - `U | X` has the same marginal in both groups (group exchangeability of
//!   potential outcomes given covariates),
//! - outcomes are a deterministic table in (t, a, x, u), so treatment in the
//!   observational group may depend on (x, u) without breaking consistency.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("law violates {assumption} at {detail}")]
    SpecViolatesAssumption {
        assumption: &'static str,
        detail: String,
    },
    #[error("invalid oracle shape: {0}")]
    InvalidShape(String),
}

/// A finite-support law plus outcome table. `outcome[t - 1][a][xi][ui]` is the
/// deterministic outcome at step `t` (1-based up to `t_total + mu`) for arm
/// `a` at grid cell `(x_values[xi], u_values[ui])`.
#[derive(Debug, Clone)]
pub struct OracleSpec {
    pub x_values: Vec<f64>,
    pub u_values: Vec<f64>,
    /// Marginal `P(X = x)`, shared by both groups.
    pub p_x: Vec<f64>,
    /// `P(U = u | X = x)` marginally over treatment; used directly in the
    /// experimental group and mixed with `p_a1_given_x_u_obs` in the
    /// observational one.
    pub p_u_given_x: Vec<Vec<f64>>,
    /// `P(A = 1 | X = x, U = u, G = O)`; dependence on `u` is what creates
    /// latent confounding.
    pub p_a1_given_x_u_obs: Vec<Vec<f64>>,
    /// Randomized `P(A = 1 | G = E)`.
    pub p_a1_exp: f64,
    /// Declared one-step transition `f*(x)` to verify against.
    pub f_star: Vec<f64>,
    pub outcome: Vec<Vec<Vec<Vec<f64>>>>,
    pub t_total: usize,
    pub mu: usize,
}

/// Everything the enumeration produces: per-point population quantities and
/// the worst-case discrepancies of the identities.
#[derive(Debug, Clone)]
pub struct OracleReport {
    pub x_values: Vec<f64>,
    /// True heterogeneous effect at each grid point.
    pub tau: Vec<f64>,
    /// `omega_t(x)` for t = 1..=t_total+mu, indexed `[x][t - 1]`.
    pub omega: Vec<Vec<f64>>,
    /// `max over (x, t < T+mu) of |omega_{t+1} - f*(x) omega_t|`.
    pub transition_max_residual: f64,
    /// Per-point discrepancy of the extrapolated-correction identity
    /// `tau(x) = muYdiff(x) + f*(x)^mu omega_T(x)`.
    pub corrected_discrepancy: Vec<f64>,
    pub corrected_max_discrepancy: f64,
    /// Max discrepancy of the equal-bias identity
    /// `tau(x) = muYdiff(x) + omega_T(x)` (exact when f* = 1).
    pub equal_bias_max_discrepancy: f64,
}

impl OracleSpec {
    fn n_x(&self) -> usize {
        self.x_values.len()
    }

    fn n_u(&self) -> usize {
        self.u_values.len()
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        let (nx, nu) = (self.n_x(), self.n_u());
        if nx == 0 || nu == 0 {
            return Err(OracleError::InvalidShape("empty X or U grid".into()));
        }
        if self.t_total < 1 || self.mu < 1 {
            return Err(OracleError::InvalidShape(
                "need t_total >= 1 and mu >= 1".into(),
            ));
        }
        let total = self.t_total + self.mu;
        if self.p_x.len() != nx
            || self.p_u_given_x.len() != nx
            || self.p_a1_given_x_u_obs.len() != nx
            || self.f_star.len() != nx
        {
            return Err(OracleError::InvalidShape(
                "per-x tables must match the X grid".into(),
            ));
        }
        if self.outcome.len() != total {
            return Err(OracleError::InvalidShape(format!(
                "outcome table covers {} steps, law declares {total}",
                self.outcome.len()
            )));
        }
        for (t, per_arm) in self.outcome.iter().enumerate() {
            if per_arm.len() != 2
                || per_arm.iter().any(|g| {
                    g.len() != nx || g.iter().any(|row| row.len() != nu)
                })
            {
                return Err(OracleError::InvalidShape(format!(
                    "outcome table at step {} is ragged",
                    t + 1
                )));
            }
        }

        let sum_px: f64 = self.p_x.iter().sum();
        if (sum_px - 1.0).abs() > 1e-9 {
            return Err(OracleError::SpecViolatesAssumption {
                assumption: "law normalization",
                detail: format!("P(X) sums to {sum_px}"),
            });
        }
        for (i, px) in self.p_x.iter().enumerate() {
            if *px <= 0.0 {
                return Err(OracleError::SpecViolatesAssumption {
                    assumption: "positivity",
                    detail: format!("P(X = {}) = {px}", self.x_values[i]),
                });
            }
            let su: f64 = self.p_u_given_x[i].iter().sum();
            if (su - 1.0).abs() > 1e-9 {
                return Err(OracleError::SpecViolatesAssumption {
                    assumption: "law normalization",
                    detail: format!("P(U | X = {}) sums to {su}", self.x_values[i]),
                });
            }
            for (j, pu) in self.p_u_given_x[i].iter().enumerate() {
                if *pu < 0.0 {
                    return Err(OracleError::SpecViolatesAssumption {
                        assumption: "law normalization",
                        detail: format!(
                            "P(U = {} | X = {}) = {pu}",
                            self.u_values[j], self.x_values[i]
                        ),
                    });
                }
                let pa = self.p_a1_given_x_u_obs[i][j];
                if !(0.0..=1.0).contains(&pa) {
                    return Err(OracleError::SpecViolatesAssumption {
                        assumption: "positivity",
                        detail: format!(
                            "P(A=1 | X = {}, U = {}, O) = {pa}",
                            self.x_values[i], self.u_values[j]
                        ),
                    });
                }
            }
            // Positivity of both arms in the observational group at this x.
            let pa1: f64 = self.p_u_given_x[i]
                .iter()
                .zip(&self.p_a1_given_x_u_obs[i])
                .map(|(pu, pa)| pu * pa)
                .sum();
            if !(pa1 > 0.0 && pa1 < 1.0) {
                return Err(OracleError::SpecViolatesAssumption {
                    assumption: "positivity",
                    detail: format!("P(A=1 | X = {}, O) = {pa1}", self.x_values[i]),
                });
            }
        }
        if !(self.p_a1_exp > 0.0 && self.p_a1_exp < 1.0) {
            return Err(OracleError::SpecViolatesAssumption {
                assumption: "positivity",
                detail: format!("P(A=1 | E) = {}", self.p_a1_exp),
            });
        }
        Ok(())
    }

    /// `E[S_t | A=a, X=x_i, G=E]`: treatment is randomized, so `U | X` keeps
    /// its marginal law. 1-based `t` runs to `t_total + mu`.
    pub fn mean_experimental(&self, t: usize, a: usize, i: usize) -> f64 {
        self.p_u_given_x[i]
            .iter()
            .enumerate()
            .map(|(j, pu)| pu * self.outcome[t - 1][a][i][j])
            .sum()
    }

    /// `E[S_t | A=a, X=x_i, G=O]` via Bayes over U.
    pub fn mean_observational(&self, t: usize, a: usize, i: usize) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (j, pu) in self.p_u_given_x[i].iter().enumerate() {
            let pa = self.p_a1_given_x_u_obs[i][j];
            let w = pu * if a == 1 { pa } else { 1.0 - pa };
            num += w * self.outcome[t - 1][a][i][j];
            den += w;
        }
        num / den
    }

    fn omega(&self, t: usize, i: usize) -> f64 {
        self.mean_experimental(t, 1, i) - self.mean_experimental(t, 0, i)
            + self.mean_observational(t, 0, i)
            - self.mean_observational(t, 1, i)
    }

    /// True effect at x_i: the potential-outcome contrast at the long step,
    /// averaged over the shared `U | X` law.
    fn tau(&self, i: usize) -> f64 {
        let t_long = self.t_total + self.mu;
        self.p_u_given_x[i]
            .iter()
            .enumerate()
            .map(|(j, pu)| {
                pu * (self.outcome[t_long - 1][1][i][j] - self.outcome[t_long - 1][0][i][j])
            })
            .sum()
    }
}

/// Enumerates every conditional mean of the law and checks the transition
/// identity and both correction identities pointwise.
pub fn population_oracle(spec: &OracleSpec) -> Result<OracleReport, OracleError> {
    spec.validate()?;
    let total = spec.t_total + spec.mu;
    let nx = spec.n_x();

    let omega: Vec<Vec<f64>> = (0..nx)
        .map(|i| (1..=total).map(|t| spec.omega(t, i)).collect())
        .collect();
    let tau: Vec<f64> = (0..nx).map(|i| spec.tau(i)).collect();

    let mut transition_max_residual = 0.0_f64;
    for (i, row) in omega.iter().enumerate() {
        for t in 0..total - 1 {
            let r = (row[t + 1] - spec.f_star[i] * row[t]).abs();
            transition_max_residual = transition_max_residual.max(r);
        }
    }

    let mut corrected_discrepancy = Vec::with_capacity(nx);
    let mut corrected_max = 0.0_f64;
    let mut equal_bias_max = 0.0_f64;
    for i in 0..nx {
        let mu_y_diff =
            spec.mean_observational(total, 1, i) - spec.mean_observational(total, 0, i);
        let omega_t = omega[i][spec.t_total - 1];
        let mut fpow = 1.0;
        for _ in 0..spec.mu {
            fpow *= spec.f_star[i];
        }
        let corrected = mu_y_diff + fpow * omega_t;
        let equal_bias = mu_y_diff + omega_t;
        let dc = corrected - tau[i];
        corrected_discrepancy.push(dc);
        corrected_max = corrected_max.max(dc.abs());
        equal_bias_max = equal_bias_max.max((equal_bias - tau[i]).abs());
    }

    Ok(OracleReport {
        x_values: spec.x_values.clone(),
        tau,
        omega,
        transition_max_residual,
        corrected_discrepancy,
        corrected_max_discrepancy: corrected_max,
        equal_bias_max_discrepancy: equal_bias_max,
    })
}

/// Convenience constructor for conforming (or deliberately broken) laws:
/// outcomes take the additive form `m_t(a, x, u) = g_t(a, x) + h_t(x) u`,
/// where the per-step confounder loadings `h_t` drive every bias. Passing
/// loadings with `h_{t+1} = f*(x) h_t` yields a law satisfying the transition
/// assumption exactly; any other sequence violates it in a controlled way.
#[allow(clippy::too_many_arguments)]
pub fn additive_oracle_spec(
    x_values: Vec<f64>,
    u_values: Vec<f64>,
    p_x: Vec<f64>,
    p_u_given_x: Vec<Vec<f64>>,
    p_a1_given_x_u_obs: Vec<Vec<f64>>,
    p_a1_exp: f64,
    f_star: Vec<f64>,
    t_total: usize,
    mu: usize,
    g: impl Fn(usize, usize, f64) -> f64,
    h: impl Fn(usize, f64) -> f64,
) -> OracleSpec {
    let total = t_total + mu;
    let outcome = (1..=total)
        .map(|t| {
            (0..2)
                .map(|a| {
                    x_values
                        .iter()
                        .map(|&x| {
                            u_values
                                .iter()
                                .map(|&u| g(t, a, x) + h(t, x) * u)
                                .collect()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    OracleSpec {
        x_values,
        u_values,
        p_x,
        p_u_given_x,
        p_a1_given_x_u_obs,
        p_a1_exp,
        f_star,
        outcome,
        t_total,
        mu,
    }
}
