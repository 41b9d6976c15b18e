//! First-stage conditional-mean fits and the per-step confounding bias.
//!
//! For every short-term step `t` and arm `a` we fit one regression of the
//! outcome on covariates per (group, arm) stratum, plus a pair for the
//! long-term outcome on the observational side; `4T + 2` models in all. The
//! confounding bias at step `t`,
//!
//! ```text
//! omega_t(x) = mu_St_E(1,x) - mu_St_E(0,x) + mu_St_O(0,x) - mu_St_O(1,x)
//! ```
//!
//! measures how far the observational contrast at that step drifts from the
//! randomized one. It is identically zero when treatment assignment is
//! unconfounded given `x`.

use thiserror::Error;

use crate::data::{Arm, CombinedDataset, CovariateVector, Group};
use crate::regress::{fit, FittedModel, RegressError, RegressorSpec};

#[derive(Debug, Error)]
pub enum NuisanceError {
    #[error("stratum ({group}, arm {arm}) is empty; cannot fit its conditional mean")]
    EmptyStratum { group: Group, arm: usize },
    #[error("time index {t} outside 1..={t_max}")]
    IndexOutOfRange { t: usize, t_max: usize },
    #[error(transparent)]
    Regress(#[from] RegressError),
}

/// The fitted conditional-mean functions for one dataset: per-step models for
/// both groups and arms, and the long-term pair on the observational side.
#[derive(Debug, Clone)]
pub struct NuisanceSet {
    /// `mu_s_e[t - 1][arm]` predicts `S_t` from `x` on experimental rows.
    mu_s_e: Vec<[FittedModel; 2]>,
    /// `mu_s_o[t - 1][arm]` predicts `S_t` from `x` on observational rows.
    mu_s_o: Vec<[FittedModel; 2]>,
    /// `mu_y_o[arm]` predicts the long-term outcome on observational rows.
    mu_y_o: [FittedModel; 2],
    t: usize,
    d: usize,
}

impl NuisanceSet {
    /// Assembles a set from already-fitted models. The grids must be indexed
    /// `[t - 1][arm]` and every model must share the input dimension `d`.
    pub fn from_parts(
        mu_s_e: Vec<[FittedModel; 2]>,
        mu_s_o: Vec<[FittedModel; 2]>,
        mu_y_o: [FittedModel; 2],
    ) -> Result<Self, NuisanceError> {
        assert_eq!(mu_s_e.len(), mu_s_o.len(), "grids must cover the same steps");
        assert!(!mu_s_e.is_empty(), "at least one short-term step required");
        let d = mu_y_o[0].input_dim();
        let t = mu_s_e.len();
        for m in mu_s_e
            .iter()
            .chain(mu_s_o.iter())
            .flatten()
            .chain(mu_y_o.iter())
        {
            assert_eq!(m.input_dim(), d, "all models must share one input dimension");
        }
        Ok(NuisanceSet {
            mu_s_e,
            mu_s_o,
            mu_y_o,
            t,
            d,
        })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn short_term_model(&self, group: Group, t: usize, arm: Arm) -> &FittedModel {
        let grid = match group {
            Group::Experimental => &self.mu_s_e,
            Group::Observational => &self.mu_s_o,
        };
        &grid[t - 1][arm.index()]
    }

    pub fn long_term_model(&self, arm: Arm) -> &FittedModel {
        &self.mu_y_o[arm.index()]
    }
}

/// Covariates, per-step short-term targets, and (observational only) the
/// long-term targets of one (group, arm) stratum.
type StratumData = (Vec<CovariateVector>, Vec<Vec<f64>>, Option<Vec<f64>>);

fn stratum_rows(
    dataset: &CombinedDataset,
    group: Group,
    arm: Arm,
) -> (Vec<CovariateVector>, Vec<&crate::data::UnitRecord>) {
    let recs: Vec<_> = dataset
        .records()
        .iter()
        .filter(|r| r.group == group && r.arm == arm)
        .collect();
    let xs = recs.iter().map(|r| r.covariates.clone()).collect();
    (xs, recs)
}

/// Fits all `4T + 2` stratum models with the given regression family. Each
/// stratum is fitted on its own rows only, with no treatment indicator in the
/// design.
pub fn fit_nuisances(
    dataset: &CombinedDataset,
    spec: RegressorSpec,
) -> Result<NuisanceSet, NuisanceError> {
    let t_max = dataset.t();
    let mut mu_s_e: Vec<[FittedModel; 2]> = Vec::with_capacity(t_max);
    let mut mu_s_o: Vec<[FittedModel; 2]> = Vec::with_capacity(t_max);

    let per_stratum = |group: Group| -> Result<Vec<StratumData>, NuisanceError> {
        let mut out = Vec::new();
        for arm in Arm::BOTH {
            let (xs, recs) = stratum_rows(dataset, group, arm);
            if xs.is_empty() {
                return Err(NuisanceError::EmptyStratum {
                    group,
                    arm: arm.index(),
                });
            }
            let mut short_targets: Vec<Vec<f64>> = vec![Vec::with_capacity(recs.len()); t_max];
            let mut long_targets = (group == Group::Observational)
                .then(|| Vec::with_capacity(recs.len()));
            for r in &recs {
                for (t, v) in r.short_outcomes.iter().enumerate() {
                    short_targets[t].push(*v);
                }
                if let Some(buf) = long_targets.as_mut() {
                    buf.push(r.long_outcome.expect("validated observational outcome"));
                }
            }
            out.push((xs, short_targets, long_targets));
        }
        Ok(out)
    };

    let exp = per_stratum(Group::Experimental)?;
    let obs = per_stratum(Group::Observational)?;

    for t in 0..t_max {
        let fit_pair = |strata: &[StratumData]| -> Result<[FittedModel; 2], NuisanceError> {
            let control = fit(spec, &strata[0].0, &strata[0].1[t], None)?;
            let treated = fit(spec, &strata[1].0, &strata[1].1[t], None)?;
            Ok([control, treated])
        };
        mu_s_e.push(fit_pair(&exp)?);
        mu_s_o.push(fit_pair(&obs)?);
    }

    let mu_y_o = [
        fit(spec, &obs[0].0, obs[0].2.as_ref().unwrap(), None)?,
        fit(spec, &obs[1].0, obs[1].2.as_ref().unwrap(), None)?,
    ];

    NuisanceSet::from_parts(mu_s_e, mu_s_o, mu_y_o)
}

/// Evaluates the step-`t` confounding bias at `x` (1-based `t`).
pub fn confounding_bias(
    nuisances: &NuisanceSet,
    t: usize,
    x: &CovariateVector,
) -> Result<f64, NuisanceError> {
    if t == 0 || t > nuisances.t {
        return Err(NuisanceError::IndexOutOfRange {
            t,
            t_max: nuisances.t,
        });
    }
    let e1 = nuisances.mu_s_e[t - 1][1].predict(x)?;
    let e0 = nuisances.mu_s_e[t - 1][0].predict(x)?;
    let o1 = nuisances.mu_s_o[t - 1][1].predict(x)?;
    let o0 = nuisances.mu_s_o[t - 1][0].predict(x)?;
    Ok(e1 - e0 + o0 - o1)
}

/// The observational long-term outcome contrast `mu_Y_O(1,x) - mu_Y_O(0,x)`.
/// This is the uncorrected effect estimate; subtracting nothing from it is
/// exactly the observational T-learner.
pub fn observed_outcome_difference(
    nuisances: &NuisanceSet,
    x: &CovariateVector,
) -> Result<f64, NuisanceError> {
    Ok(nuisances.mu_y_o[1].predict(x)? - nuisances.mu_y_o[0].predict(x)?)
}
