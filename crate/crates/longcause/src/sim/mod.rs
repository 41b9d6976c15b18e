//! Synthetic benchmark generator with privileged ground truth, plus a
//! discrete-distribution population oracle that verifies the identification
//! identities by exact enumeration.
//!
//! The generator draws a treatment per group (`Bernoulli(p_treat_e)` in the
//! experimental group, `Bernoulli(p_treat_o)` in the observational one), then
//! a covariate/confounder pair from one bivariate normal per (arm, group):
//!
//! ```text
//! (X, U) | A, G=E  ~  N([ (2A-1)/2, 0 ],  [[1, 0], [0, 1]])
//! (X, U) | A, G=O  ~  N([ (1-2A)/2, 0 ],  [[1, c(A-1/2)], [c(A-1/2), 1]])
//! ```
//!
//! with `c` the confounding strength. Outcomes follow the cumulative recursion
//!
//! ```text
//! S_t = A + 0.1 A X + X + U + sum_{k<t} S_k + eps_t,     eps_t ~ N(0, noise_sd^2)
//! ```
//!
//! whose conditional mean doubles each step: `E[S_t | A, X, U] = 2^(t-1) (A +
//! 0.1 A X + X + U)`. The long-term outcome is `Y = S_(T+mu)`; it is stripped
//! from experimental rows in the public dataset and retained in the
//! [`TruthTable`]. In population terms the effect and bias are
//!
//! ```text
//! tau(x)     = 2^(T+mu-1) (1 + 0.1 x)
//! omega_t(x) = -c 2^(t-1) x
//! ```
//!
//! so consecutive biases are linked by the constant transition `f(x) = 2`.
//! The optional bias break turns that multiplicative recursion into the affine
//! `omega_{t+1} = 2 omega_t + shift` by injecting an arm-dependent drift into
//! observational outcomes, which no multiplicative transition can represent.

pub mod oracle;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::data::{
    fmt_f64, Arm, CombinedDataset, CovariateVector, DataError, DataSchema, Group, UnitRecord,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulator config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// How (if at all) to violate the multiplicative bias-transition structure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BiasBreak {
    None,
    /// Shifts every bias transition additively: `omega_{t+1} = 2 omega_t + c`.
    /// Implemented by adding `-c (t-1) A` to observational outcomes at step t,
    /// which compounds through the recursion into exactly that drift.
    AdditiveShift(f64),
}

/// Generator parameters. `confounding_strength` scales the X-U covariance in
/// the observational group: 1 is the benchmark setting, 0 removes confounding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub n_e: usize,
    pub n_o: usize,
    pub t_total: usize,
    pub mu: usize,
    pub seed: u64,
    pub noise_sd: f64,
    pub p_treat_e: f64,
    pub p_treat_o: f64,
    pub confounding_strength: f64,
    pub bias_break: BiasBreak,
}

impl Default for SimConfig {
    /// The benchmark defaults: n_e = 2000, n_o = 4000, T = 6, mu = 3,
    /// unit noise, treatment probabilities 0.4 (experimental) and 0.6
    /// (observational), full confounding, no break.
    fn default() -> Self {
        SimConfig {
            n_e: 2000,
            n_o: 4000,
            t_total: 6,
            mu: 3,
            seed: 0,
            noise_sd: 1.0,
            p_treat_e: 0.4,
            p_treat_o: 0.6,
            confounding_strength: 1.0,
            bias_break: BiasBreak::None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_e == 0 || self.n_o == 0 {
            return Err(SimError::InvalidConfig("n_e and n_o must be positive".into()));
        }
        if self.t_total < 2 {
            return Err(SimError::InvalidConfig("t_total must be at least 2".into()));
        }
        if self.mu == 0 {
            return Err(SimError::InvalidConfig("mu must be at least 1".into()));
        }
        if self.noise_sd.is_nan() || self.noise_sd < 0.0 {
            return Err(SimError::InvalidConfig("noise_sd must be nonnegative".into()));
        }
        for (name, p) in [("p_treat_e", self.p_treat_e), ("p_treat_o", self.p_treat_o)] {
            if p.is_nan() || p <= 0.0 || p >= 1.0 {
                return Err(SimError::InvalidConfig(format!(
                    "{name} must lie strictly between 0 and 1, got {p}"
                )));
            }
        }
        if self.confounding_strength.is_nan() || self.confounding_strength.abs() > 2.0 {
            return Err(SimError::InvalidConfig(
                "confounding strength must lie in [-2, 2] so the (X, U) correlation stays valid"
                    .into(),
            ));
        }
        Ok(())
    }

    fn break_shift(&self) -> f64 {
        match self.bias_break {
            BiasBreak::None => 0.0,
            BiasBreak::AdditiveShift(c) => c,
        }
    }
}

/// Analytic ground truth for one generated dataset, evaluated at the
/// observational covariates, plus the privileged experimental long-term
/// outcomes no real dataset would contain.
#[derive(Debug, Clone)]
pub struct TruthTable {
    /// Observational covariates, in record order.
    pub eval_points: Vec<CovariateVector>,
    /// `tau(x_i)` at each eval point.
    pub true_tau: Vec<f64>,
    /// Population `omega_t(x_i)` for t = 1..=T+mu (columns), including the
    /// drift contributed by an active bias break.
    pub true_bias: Vec<Vec<f64>>,
    /// Long-term outcomes of the experimental rows, in record order.
    pub experimental_y: Vec<f64>,
}

impl TruthTable {
    /// Renders the `truth.csv` sibling file:
    /// `x_1,...,x_d,tau_true,omega_1,...,omega_{T+mu}`.
    pub fn render_csv(&self) -> String {
        let d = self.eval_points.first().map_or(1, CovariateVector::dim);
        let total = self.true_bias.first().map_or(0, Vec::len);
        let mut header: Vec<String> = (1..=d).map(|j| format!("x_{j}")).collect();
        header.push("tau_true".into());
        header.extend((1..=total).map(|t| format!("omega_{t}")));
        let mut out = header.join(",");
        out.push('\n');
        for (i, x) in self.eval_points.iter().enumerate() {
            let mut fields: Vec<String> = x.values().iter().map(|v| fmt_f64(*v)).collect();
            fields.push(fmt_f64(self.true_tau[i]));
            fields.extend(self.true_bias[i].iter().map(|v| fmt_f64(*v)));
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }
}

/// The population heterogeneous effect of the generator:
/// `tau(x) = 2^(T+mu-1) (1 + 0.1 x)`.
pub fn true_tau(config: &SimConfig, x: &CovariateVector) -> f64 {
    let scale = pow2(config.t_total + config.mu - 1);
    scale * (1.0 + 0.1 * x.values()[0])
}

/// The population confounding bias at (1-based) step `t`, including the drift
/// of an active additive break: `-c 2^(t-1) x + shift (2^(t-1) - 1)`.
pub fn true_bias(config: &SimConfig, t: usize, x: &CovariateVector) -> f64 {
    let scale = pow2(t - 1);
    -config.confounding_strength * scale * x.values()[0] + config.break_shift() * (scale - 1.0)
}

fn pow2(k: usize) -> f64 {
    let mut acc = 1.0;
    for _ in 0..k {
        acc *= 2.0;
    }
    acc
}

/// Draws one dataset and its ground truth. Bit-reproducible per config.
pub fn generate(config: &SimConfig) -> Result<(CombinedDataset, TruthTable), SimError> {
    config.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let total_steps = config.t_total + config.mu;
    let shift = config.break_shift();

    let mut records = Vec::with_capacity(config.n_e + config.n_o);
    let mut experimental_y = Vec::with_capacity(config.n_e);

    for (group, count, p_treat) in [
        (Group::Experimental, config.n_e, config.p_treat_e),
        (Group::Observational, config.n_o, config.p_treat_o),
    ] {
        for _ in 0..count {
            let arm = if rng.gen::<f64>() < p_treat {
                Arm::Treated
            } else {
                Arm::Control
            };
            let a = arm.index() as f64;
            let z1: f64 = StandardNormal.sample(&mut rng);
            let z2: f64 = StandardNormal.sample(&mut rng);
            let (x, u) = match group {
                Group::Experimental => ((2.0 * a - 1.0) / 2.0 + z1, z2),
                Group::Observational => {
                    let mean_x = (1.0 - 2.0 * a) / 2.0;
                    let rho = config.confounding_strength * (a - 0.5);
                    let x = mean_x + z1;
                    // U | X has regression coefficient rho toward (x - mean_x)
                    // and residual variance 1 - rho^2.
                    let u = rho * (x - mean_x) + (1.0 - rho * rho).max(0.0).sqrt() * z2;
                    (x, u)
                }
            };
            let base = a + 0.1 * a * x + x + u;
            let mut outcomes = Vec::with_capacity(total_steps);
            let mut running_sum = 0.0;
            for t in 1..=total_steps {
                let eps: f64 = StandardNormal.sample(&mut rng);
                let mut s = base + running_sum + config.noise_sd * eps;
                if group == Group::Observational {
                    s -= shift * (t as f64 - 1.0) * a;
                }
                outcomes.push(s);
                running_sum += s;
            }
            let y = outcomes[total_steps - 1];
            outcomes.truncate(config.t_total);
            let long_outcome = match group {
                Group::Experimental => {
                    experimental_y.push(y);
                    None
                }
                Group::Observational => Some(y),
            };
            records.push(UnitRecord {
                group,
                arm,
                covariates: CovariateVector::scalar(x),
                short_outcomes: outcomes,
                long_outcome,
            });
        }
    }

    let dataset = CombinedDataset::new(
        records,
        DataSchema {
            d: 1,
            t: config.t_total,
            mu: config.mu,
        },
    )?;

    let eval_points = dataset.observational_covariates();
    let true_tau_vec = eval_points.iter().map(|x| true_tau(config, x)).collect();
    let true_bias_mat = eval_points
        .iter()
        .map(|x| (1..=total_steps).map(|t| true_bias(config, t, x)).collect())
        .collect();

    Ok((
        dataset,
        TruthTable {
            eval_points,
            true_tau: true_tau_vec,
            true_bias: true_bias_mat,
            experimental_y,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regress::solve_wls;
    use approx::assert_abs_diff_eq;

    #[test]
    fn default_sizes_and_treatment_rates() {
        let config = SimConfig {
            seed: 11,
            ..SimConfig::default()
        };
        let (ds, truth) = generate(&config).unwrap();
        assert_eq!(ds.n_experimental(), 2000);
        assert_eq!(ds.n_observational(), 4000);
        assert_eq!(truth.experimental_y.len(), 2000);
        assert_eq!(truth.eval_points.len(), 4000);
        let obs_treated = ds
            .records()
            .iter()
            .filter(|r| r.group == Group::Observational && r.arm == Arm::Treated)
            .count() as f64;
        let rate = obs_treated / 4000.0;
        assert!((rate - 0.6).abs() < 0.02, "P(A=1|O) = {rate}");
        let exp_treated = ds
            .records()
            .iter()
            .filter(|r| r.group == Group::Experimental && r.arm == Arm::Treated)
            .count() as f64;
        let rate_e = exp_treated / 2000.0;
        assert!((rate_e - 0.4).abs() < 0.03, "P(A=1|E) = {rate_e}");
    }

    #[test]
    fn generation_is_bit_reproducible() {
        let config = SimConfig {
            seed: 77,
            n_e: 50,
            n_o: 80,
            ..SimConfig::default()
        };
        let (a, ta) = generate(&config).unwrap();
        let (b, tb) = generate(&config).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta.experimental_y, tb.experimental_y);
        assert_eq!(ta.true_tau, tb.true_tau);
    }

    #[test]
    fn true_tau_closed_form_examples() {
        let at = |t_total, mu| {
            true_tau(
                &SimConfig {
                    t_total,
                    mu,
                    ..SimConfig::default()
                },
                &CovariateVector::scalar(0.0),
            )
        };
        assert_abs_diff_eq!(at(6, 3), 256.0, epsilon = 0.0);
        assert_abs_diff_eq!(at(2, 1), 4.0, epsilon = 0.0);
    }

    #[test]
    fn privileged_outcomes_match_tau_on_average() {
        // Monte-Carlo check of the closed form: within a narrow covariate bin,
        // the treated-minus-control mean of privileged experimental Y must
        // approach tau at the bin center.
        let config = SimConfig {
            n_e: 60000,
            n_o: 10,
            t_total: 3,
            mu: 1,
            seed: 5,
            ..SimConfig::default()
        };
        let (ds, truth) = generate(&config).unwrap();
        let mut sums = [[0.0; 2]; 2];
        let mut counts = [[0usize; 2]; 2];
        let mut k = 0;
        for r in ds.records() {
            if r.group != Group::Experimental {
                continue;
            }
            let y = truth.experimental_y[k];
            k += 1;
            let x = r.covariates.values()[0];
            if (x - 0.5).abs() < 0.1 {
                sums[0][r.arm.index()] += y;
                counts[0][r.arm.index()] += 1;
            }
            if (x + 0.5).abs() < 0.1 {
                sums[1][r.arm.index()] += y;
                counts[1][r.arm.index()] += 1;
            }
        }
        for (bin, center) in [(0usize, 0.5), (1usize, -0.5)] {
            let diff = sums[bin][1] / counts[bin][1] as f64 - sums[bin][0] / counts[bin][0] as f64;
            let want = true_tau(&config, &CovariateVector::scalar(center));
            // Y | A, X has SD ~ sqrt(16 + noise); bins hold thousands of rows.
            let se = 8.0 * (1.0 / counts[bin][1] as f64 + 1.0 / counts[bin][0] as f64).sqrt();
            assert!(
                (diff - want).abs() < 3.0 * se + 0.5,
                "bin {bin}: diff {diff}, want {want}"
            );
        }
    }

    #[test]
    fn zero_confounding_removes_the_u_slope() {
        // With confounding off, E[U | A, X, O] = 0, so the within-arm slope of
        // S_1 on x is exactly 1 + 0.1a; with confounding on it would pick up
        // the extra +-0.5 from the U regression. U itself never leaves the
        // generator, so this is the observable face of corr(X, U | A, O) = 0.
        let config = SimConfig {
            confounding_strength: 0.0,
            n_e: 10,
            n_o: 20000,
            seed: 9,
            ..SimConfig::default()
        };
        let (ds, _) = generate(&config).unwrap();
        for arm in Arm::BOTH {
            let rows: Vec<&UnitRecord> = ds
                .records()
                .iter()
                .filter(|r| r.group == Group::Observational && r.arm == arm)
                .collect();
            let design: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| vec![1.0, r.covariates.values()[0]])
                .collect();
            let targets: Vec<f64> = rows.iter().map(|r| r.short_outcomes[0]).collect();
            let sol = solve_wls(&design, &targets, None, None, true).unwrap();
            let want = 1.0 + 0.1 * arm.index() as f64;
            let n = rows.len() as f64;
            // Residual SD ~ sqrt(2); slope SE ~ sqrt(2/n).
            let tol = 3.0 * (2.0 / n).sqrt() + 0.01;
            assert!(
                (sol.coefficients[1] - want).abs() < tol,
                "arm {:?}: slope {} vs {want}",
                arm,
                sol.coefficients[1]
            );
        }
    }

    #[test]
    fn recursion_coefficients_recovered_at_large_n() {
        let config = SimConfig {
            n_e: 40000,
            n_o: 10,
            t_total: 2,
            mu: 1,
            seed: 3,
            ..SimConfig::default()
        };
        let (ds, _) = generate(&config).unwrap();
        let rows: Vec<&UnitRecord> = ds
            .records()
            .iter()
            .filter(|r| r.group == Group::Experimental)
            .collect();
        // S_1 = A + 0.1 AX + X + U + eps in the experimental group, where
        // E[U | A, X] = 0, so OLS on (1, a, ax, x) recovers (0, 1, 0.1, 1).
        let design: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let a = r.arm.index() as f64;
                let x = r.covariates.values()[0];
                vec![1.0, a, a * x, x]
            })
            .collect();
        let targets: Vec<f64> = rows.iter().map(|r| r.short_outcomes[0]).collect();
        let sol = solve_wls(&design, &targets, None, None, true).unwrap();
        for (got, want) in sol.coefficients.iter().zip([0.0, 1.0, 0.1, 1.0]) {
            assert!((got - want).abs() < 0.05, "got {got}, want {want}");
        }
        // And the cumulative structure: S_2 - 2 S_1 is pure noise.
        let diff_mean = rows
            .iter()
            .map(|r| r.short_outcomes[1] - 2.0 * r.short_outcomes[0])
            .sum::<f64>()
            / rows.len() as f64;
        assert!(diff_mean.abs() < 0.05, "S_2 - 2 S_1 mean = {diff_mean}");
    }

    #[test]
    fn additive_break_shifts_every_transition() {
        let shift = 5.0;
        let config = SimConfig {
            bias_break: BiasBreak::AdditiveShift(shift),
            ..SimConfig::default()
        };
        let x = CovariateVector::scalar(0.7);
        for t in 1..=config.t_total + config.mu - 1 {
            let w_t = true_bias(&config, t, &x);
            let w_next = true_bias(&config, t + 1, &x);
            assert_abs_diff_eq!(w_next, 2.0 * w_t + shift, epsilon = 1e-9);
        }
        // tau is defined from the unbroken experimental potential outcomes.
        assert_abs_diff_eq!(
            true_tau(&config, &x),
            256.0 * (1.0 + 0.07),
            epsilon = 1e-12
        );
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = SimConfig {
            p_treat_e: 1.0,
            ..SimConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SimConfig {
            confounding_strength: 2.5,
            ..SimConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SimConfig {
            t_total: 1,
            ..SimConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
