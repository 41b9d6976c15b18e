//! Flat key-value config files for the CLI.
//!
//! Format: one `key = value` per line, `#` starts a comment, blank lines are
//! skipped. Unknown and duplicated keys are errors, so a typo cannot silently
//! fall back to a default.

use std::collections::HashSet;

use thiserror::Error;

use crate::bench::{BenchMethod, RunSettings, SweepAxis};
use crate::regress::RegressorSpec;
use crate::sim::{BiasBreak, SimConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Malformed { line: usize, text: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("duplicate config key `{0}`")]
    DuplicateKey(String),
    #[error("key `{key}`: {message}")]
    BadValue { key: String, message: String },
}

/// Everything a CLI run can configure.
#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub sim: SimConfig,
    pub settings: RunSettings,
    pub axis: SweepAxis,
    /// Worker threads for replicate parallelism; 0 leaves the default pool.
    pub workers: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            sim: SimConfig::default(),
            settings: RunSettings {
                methods: vec![
                    BenchMethod::Fcaecb,
                    BenchMethod::CaecbLast,
                    BenchMethod::TLearnerObs,
                    BenchMethod::TLearnerExpIdealized,
                ],
                ..RunSettings::default()
            },
            axis: SweepAxis::None,
            workers: 0,
        }
    }
}

/// Parses a regressor spec string: `ols:<degree>`, `ridge:<degree>:<lambda>`,
/// or `knn:<k>`.
pub fn parse_regressor_spec(text: &str) -> Result<RegressorSpec, String> {
    let parts: Vec<&str> = text.split(':').collect();
    let spec = match parts.as_slice() {
        ["ols", degree] => RegressorSpec::OlsPolynomial {
            degree: degree.parse().map_err(|_| format!("bad degree `{degree}`"))?,
        },
        ["ridge", degree, lambda] => RegressorSpec::RidgePolynomial {
            degree: degree.parse().map_err(|_| format!("bad degree `{degree}`"))?,
            lambda: lambda.parse().map_err(|_| format!("bad lambda `{lambda}`"))?,
        },
        ["knn", k] => RegressorSpec::KnnSmoother {
            k: k.parse().map_err(|_| format!("bad k `{k}`"))?,
        },
        _ => return Err(format!("unrecognized regressor spec `{text}`")),
    };
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}

pub fn parse_method(label: &str) -> Result<BenchMethod, String> {
    BenchMethod::ALL
        .iter()
        .copied()
        .find(|m| m.label() == label)
        .ok_or_else(|| format!("unknown method `{label}`"))
}

fn parse_usize_list(value: &str) -> Result<Vec<usize>, String> {
    value
        .split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| format!("bad integer `{s}`")))
        .collect()
}

/// Parses the config text against the full key schema.
pub fn parse_config(text: &str) -> Result<BenchConfig, ConfigError> {
    let mut cfg = BenchConfig::default();
    let mut seen = HashSet::new();
    let mut sweep_axis: Option<String> = None;
    let mut mu_values: Option<Vec<usize>> = None;
    let mut t_values: Option<Vec<usize>> = None;
    let mut ne_values: Option<Vec<usize>> = None;
    let mut long_index: Option<usize> = None;
    let mut no_ratio: usize = 2;
    let mut horizon_subsets: Option<Vec<Vec<usize>>> = None;

    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Malformed {
                line: lineno + 1,
                text: raw.to_string(),
            });
        };
        let key = key.trim();
        let value = value.trim();
        if !seen.insert(key.to_string()) {
            return Err(ConfigError::DuplicateKey(key.to_string()));
        }
        let bad = |message: String| ConfigError::BadValue {
            key: key.to_string(),
            message,
        };
        macro_rules! num {
            () => {
                value.parse().map_err(|_| bad(format!("unparseable value `{value}`")))?
            };
        }
        match key {
            "n_e" => cfg.sim.n_e = num!(),
            "n_o" => cfg.sim.n_o = num!(),
            "t_total" => cfg.sim.t_total = num!(),
            "mu" => cfg.sim.mu = num!(),
            "seed" => {
                let seed: u64 = num!();
                cfg.sim.seed = seed;
                cfg.settings.base_seed = seed;
            }
            "noise_sd" => cfg.sim.noise_sd = num!(),
            "p_treat_e" => cfg.sim.p_treat_e = num!(),
            "p_treat_o" => cfg.sim.p_treat_o = num!(),
            "confounding_strength" => cfg.sim.confounding_strength = num!(),
            "bias_break" => {
                cfg.sim.bias_break = if value == "none" {
                    BiasBreak::None
                } else if let Some(c) = value.strip_prefix("additive_shift:") {
                    BiasBreak::AdditiveShift(
                        c.parse().map_err(|_| bad(format!("bad shift `{c}`")))?,
                    )
                } else {
                    return Err(bad(format!(
                        "expected `none` or `additive_shift:<c>`, got `{value}`"
                    )));
                }
            }
            "replicates" => cfg.settings.replicates = num!(),
            "methods" => {
                cfg.settings.methods = value
                    .split(',')
                    .map(|s| parse_method(s.trim()).map_err(&bad))
                    .collect::<Result<_, _>>()?;
            }
            "nuisance" => cfg.settings.nuisance_spec = parse_regressor_spec(value).map_err(bad)?,
            "transition" => {
                cfg.settings.transition_spec = parse_regressor_spec(value).map_err(bad)?
            }
            "splitting" => {
                cfg.settings.splitting_on = match value {
                    "on" => true,
                    "off" => false,
                    _ => return Err(bad(format!("expected `on` or `off`, got `{value}`"))),
                }
            }
            "guard_epsilon" => cfg.settings.guard_epsilon = num!(),
            "horizon" => {
                cfg.settings.horizon_candidates = match value {
                    "all" => None,
                    "auto" => Some(Vec::new()), // filled from the sim shape below
                    steps => Some(vec![parse_usize_list(steps).map_err(bad)?]),
                }
            }
            "refit_full" => {
                cfg.settings.refit_full = value
                    .parse()
                    .map_err(|_| bad(format!("expected true/false, got `{value}`")))?
            }
            "eval_population" => {
                cfg.settings.pooled_eval = match value {
                    "observational" => false,
                    "pooled" => true,
                    _ => {
                        return Err(bad(format!(
                            "expected `observational` or `pooled`, got `{value}`"
                        )))
                    }
                }
            }
            "workers" => cfg.workers = num!(),
            "max_failure_fraction" => cfg.settings.max_failure_fraction = num!(),
            "sweep_axis" => sweep_axis = Some(value.to_string()),
            "mu_values" => mu_values = Some(parse_usize_list(value).map_err(bad)?),
            "t_values" => t_values = Some(parse_usize_list(value).map_err(bad)?),
            "ne_values" => ne_values = Some(parse_usize_list(value).map_err(bad)?),
            "long_index" => long_index = Some(num!()),
            "no_ratio" => no_ratio = num!(),
            "horizon_subsets" => {
                horizon_subsets = Some(
                    value
                        .split('|')
                        .map(|s| parse_usize_list(s).map_err(&bad))
                        .collect::<Result<_, _>>()?,
                )
            }
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
    }

    // `horizon = auto` enumerates candidates once the time shape is known.
    if let Some(cands) = &mut cfg.settings.horizon_candidates {
        if cands.is_empty() {
            *cands = crate::estimator::enumerate_horizon_candidates(
                cfg.sim.t_total,
                cfg.sim.t_total + cfg.sim.mu,
            );
        }
    }

    cfg.axis = match sweep_axis.as_deref() {
        None | Some("none") => SweepAxis::None,
        Some("mu") => SweepAxis::Mu(mu_values.ok_or(ConfigError::BadValue {
            key: "sweep_axis".into(),
            message: "sweep_axis = mu requires mu_values".into(),
        })?),
        Some("t") => SweepAxis::T {
            values: t_values.ok_or(ConfigError::BadValue {
                key: "sweep_axis".into(),
                message: "sweep_axis = t requires t_values".into(),
            })?,
            long_index: long_index.unwrap_or(cfg.sim.t_total + cfg.sim.mu),
        },
        Some("ne") => SweepAxis::Ne {
            values: ne_values.ok_or(ConfigError::BadValue {
                key: "sweep_axis".into(),
                message: "sweep_axis = ne requires ne_values".into(),
            })?,
            ratio: no_ratio,
        },
        Some("horizon") => SweepAxis::Horizon(horizon_subsets.ok_or(ConfigError::BadValue {
            key: "sweep_axis".into(),
            message: "sweep_axis = horizon requires horizon_subsets".into(),
        })?),
        Some(other) => {
            return Err(ConfigError::BadValue {
                key: "sweep_axis".into(),
                message: format!("unknown axis `{other}`"),
            })
        }
    };

    Ok(cfg)
}
