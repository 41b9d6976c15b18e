//! Heterogeneous long-term causal effects from combined experimental and
//! observational data.
//!
//! Short-term experiments randomize treatment but end before the outcome that
//! matters; observational records run long enough but carry latent
//! confounding. This crate merges the two: it measures the per-step
//! *confounding bias* — the gap between the observational and randomized
//! treatment contrasts at each observed step — fits the multiplicative
//! transition that links consecutive biases, extrapolates that transition to
//! the long horizon, and corrects the observational long-term contrast with
//! the extrapolated bias:
//!
//! ```text
//! tau_hat(x) = muY_O(1,x) - muY_O(0,x) + f_hat(x)^mu * omega_hat_T(x)
//! ```
//!
//! The crate ships the full workflow: domain types and CSV interchange
//! ([`data`]), a pluggable regression backend ([`regress`]), first-stage
//! conditional means and biases ([`nuisance`]), the transition fit, its
//! extrapolation and a held-out assumption test ([`dynamics`]), estimator
//! assembly with horizon selection and reference baselines ([`estimator`]),
//! a synthetic generator with analytic ground truth and an exact population
//! oracle ([`sim`]), and replicated benchmark sweeps ([`mod@bench`]). The
//! `longcause` binary exposes `simulate`, `estimate`, `assumption-test`, and
//! `bench` subcommands over the same machinery.
//!
//! The narrative guide in `book/` walks through the method and each module;
//! its code blocks compile and run as part of this crate's doc-tests.

pub mod bench;
pub mod data;
pub mod dynamics;
pub mod estimator;
pub mod nuisance;
pub mod regress;
pub mod sim;

pub use data::{
    load_csv, parse_csv_text, render_csv_text, select_time_subset, sniff_schema, split_halves,
    write_csv, Arm, CombinedDataset,
    CovariateVector, DataError, DataSchema, Group, SplitPair, UnitRecord,
};
pub use dynamics::{
    assumption_r2, build_panel, fit_transition, transition_power, AssumptionTest, BiasPanel,
    BiasTransition, DynamicsError,
};
pub use estimator::{
    enumerate_horizon_candidates, estimate_caecb, estimate_fcaecb,
    estimate_tlearner_exp_idealized, estimate_tlearner_obs, predict_tau, select_horizon,
    CaecbStep, EstimatorError, EstimatorOptions, EvalPopulation, HorizonChoice, Method,
    Splitting, TauModel,
};
pub use nuisance::{
    confounding_bias, fit_nuisances, observed_outcome_difference, NuisanceError, NuisanceSet,
};
pub use regress::{fit, fit_with, FitOptions, FittedModel, RegressError, RegressorSpec};
pub use sim::{generate, true_bias, true_tau, BiasBreak, SimConfig, SimError, TruthTable};

// The guide's code blocks double as doc-tests so the book can never drift
// from the library. Each chapter becomes one hidden module here; `cargo test
// --doc` compiles and runs every Rust block in it.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data-model.md")]
    mod data_model {}
    #[doc = include_str!("../../../book/src/regression.md")]
    mod regression {}
    #[doc = include_str!("../../../book/src/confounding-bias.md")]
    mod confounding_bias {}
    #[doc = include_str!("../../../book/src/bias-transition.md")]
    mod bias_transition {}
    #[doc = include_str!("../../../book/src/estimators.md")]
    mod estimators {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/benchmarking.md")]
    mod benchmarking {}
}
