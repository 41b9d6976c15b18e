//! Domain types for combined experimental/observational samples, CSV
//! ingestion/emission, deterministic stratified splitting, and time-step
//! subsetting.
//!
//! A combined sample merges two sources: an experimental group in which
//! treatment was randomized but the long-term outcome is never observed, and
//! an observational group in which the long-term outcome is recorded but
//! treatment assignment may be confounded. Every record carries `T` short-term
//! outcomes `s_1..s_T`; the long-term outcome sits `mu` steps past the last
//! observed one.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

/// Which source a record was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Group {
    /// Randomized treatment, long-term outcome unobserved.
    Experimental,
    /// Possibly confounded treatment, long-term outcome observed.
    Observational,
}

impl Group {
    pub fn label(self) -> &'static str {
        match self {
            Group::Experimental => "E",
            Group::Observational => "O",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Binary treatment arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arm {
    Control,
    Treated,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Control, Arm::Treated];

    /// 0 for control, 1 for treated; used for array indexing and CSV output.
    pub fn index(self) -> usize {
        match self {
            Arm::Control => 0,
            Arm::Treated => 1,
        }
    }

}

/// A real covariate vector of fixed dimension. All entries are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateVector(Vec<f64>);

impl CovariateVector {
    pub fn new(values: Vec<f64>) -> Result<Self, DataError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DataError::NonFiniteValue { row: None });
        }
        Ok(CovariateVector(values))
    }

    /// One-dimensional covariate; panics on non-finite input.
    pub fn scalar(x: f64) -> Self {
        CovariateVector::new(vec![x]).expect("finite scalar covariate")
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// One row of the merged sample.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitRecord {
    pub group: Group,
    pub arm: Arm,
    pub covariates: CovariateVector,
    pub short_outcomes: Vec<f64>,
    /// Present exactly when `group == Observational`.
    pub long_outcome: Option<f64>,
}

/// Declared shape of a combined dataset: covariate dimension, number of
/// observed short-term steps, and the long-horizon offset (the long-term
/// outcome is the short-term series extended to step `T + mu`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataSchema {
    pub d: usize,
    pub t: usize,
    pub mu: usize,
}

/// Errors from dataset construction, I/O, splitting, and subsetting.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("row {row}: expected {expected} columns, found {found}")]
    MissingColumn {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}: treatment must be 0 or 1, got `{value}`")]
    NonBinaryTreatment { row: usize, value: String },
    #[error("row {row}: experimental row carries a long-term outcome")]
    ExperimentalRowHasOutcome { row: usize },
    #[error("row {row}: observational row is missing its long-term outcome")]
    ObservationalRowMissingOutcome { row: usize },
    #[error("non-finite numeric value{}", .row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    NonFiniteValue { row: Option<usize> },
    #[error("row {row}: unknown group label `{value}` (expected E or O)")]
    UnknownGroup { row: usize, value: String },
    #[error("row {row}: unparseable numeric field `{value}`")]
    BadNumber { row: usize, value: String },
    #[error("header mismatch: expected `{expected}`, found `{found}`")]
    HeaderMismatch { expected: String, found: String },
    #[error("i/o failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("record {row} has covariate dim {found}, dataset declares {expected}")]
    CovariateDimMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("record {row} has {found} short-term outcomes, dataset declares {expected}")]
    OutcomeLenMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("invalid dataset shape: {0}")]
    InvalidShape(String),
    #[error("stratum ({group}, arm {arm}) has {found} records; at least {required} required")]
    StratumTooSmall {
        group: Group,
        arm: usize,
        found: usize,
        required: usize,
    },
    #[error("kept steps {steps:?} are not an arithmetic progression of length >= 2")]
    UnevenSpacing { steps: Vec<usize> },
    #[error("long horizon index {long_index} is not reachable in whole steps of spacing {spacing} from step {last_kept}")]
    HorizonNotOnGrid {
        long_index: usize,
        last_kept: usize,
        spacing: usize,
    },
    #[error("kept step {step} is outside the observed range 1..={t}")]
    StepOutOfRange { step: usize, t: usize },
}

/// The merged experimental + observational sample with its time structure.
///
/// Immutable after construction; cheap to clone and safe to share across
/// worker threads.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedDataset {
    records: Vec<UnitRecord>,
    schema: DataSchema,
}

impl CombinedDataset {
    /// Validates per-record shape invariants: vector lengths against the
    /// schema, finiteness, and outcome presence matching the group. Stratum
    /// coverage is checked separately by [`CombinedDataset::check_strata`]
    /// so that empty or partial datasets remain representable for I/O.
    pub fn new(records: Vec<UnitRecord>, schema: DataSchema) -> Result<Self, DataError> {
        if schema.d == 0 || schema.t == 0 {
            return Err(DataError::InvalidShape(
                "covariate dimension and step count must be positive".into(),
            ));
        }
        if schema.mu == 0 {
            return Err(DataError::InvalidShape(
                "long-horizon offset mu must be at least 1".into(),
            ));
        }
        for (i, r) in records.iter().enumerate() {
            if r.covariates.dim() != schema.d {
                return Err(DataError::CovariateDimMismatch {
                    row: i,
                    expected: schema.d,
                    found: r.covariates.dim(),
                });
            }
            if r.short_outcomes.len() != schema.t {
                return Err(DataError::OutcomeLenMismatch {
                    row: i,
                    expected: schema.t,
                    found: r.short_outcomes.len(),
                });
            }
            if r.short_outcomes.iter().any(|v| !v.is_finite()) {
                return Err(DataError::NonFiniteValue { row: Some(i) });
            }
            match (r.group, r.long_outcome) {
                (Group::Experimental, Some(_)) => {
                    return Err(DataError::ExperimentalRowHasOutcome { row: i })
                }
                (Group::Observational, None) => {
                    return Err(DataError::ObservationalRowMissingOutcome { row: i })
                }
                (Group::Observational, Some(y)) if !y.is_finite() => {
                    return Err(DataError::NonFiniteValue { row: Some(i) })
                }
                _ => {}
            }
        }
        Ok(CombinedDataset { records, schema })
    }

    pub fn records(&self) -> &[UnitRecord] {
        &self.records
    }

    pub fn schema(&self) -> DataSchema {
        self.schema
    }

    pub fn d(&self) -> usize {
        self.schema.d
    }

    /// Number of observed short-term steps.
    pub fn t(&self) -> usize {
        self.schema.t
    }

    /// Long-horizon offset: the long-term outcome is step `t() + mu()`.
    pub fn mu(&self) -> usize {
        self.schema.mu
    }

    pub fn n_experimental(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.group == Group::Experimental)
            .count()
    }

    pub fn n_observational(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.group == Group::Observational)
            .count()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Covariates of every observational record, in record order. This is the
    /// default evaluation population for bias panels and effect estimates.
    pub fn observational_covariates(&self) -> Vec<CovariateVector> {
        self.records
            .iter()
            .filter(|r| r.group == Group::Observational)
            .map(|r| r.covariates.clone())
            .collect()
    }

    /// Covariates of every record (both groups), in record order.
    pub fn all_covariates(&self) -> Vec<CovariateVector> {
        self.records.iter().map(|r| r.covariates.clone()).collect()
    }

    /// Checks that every (group, arm) stratum holds at least `min_per_stratum`
    /// records. Estimation entry points require 1; splitting requires 2.
    pub fn check_strata(&self, min_per_stratum: usize) -> Result<(), DataError> {
        for group in [Group::Experimental, Group::Observational] {
            for arm in Arm::BOTH {
                let n = self
                    .records
                    .iter()
                    .filter(|r| r.group == group && r.arm == arm)
                    .count();
                if n < min_per_stratum {
                    return Err(DataError::StratumTooSmall {
                        group,
                        arm: arm.index(),
                        found: n,
                        required: min_per_stratum,
                    });
                }
            }
        }
        Ok(())
    }
}

/// A stratified 50/50 partition of a dataset, reproducible from its seed.
#[derive(Debug, Clone)]
pub struct SplitPair {
    pub part_a: CombinedDataset,
    pub part_b: CombinedDataset,
    pub seed: u64,
}

/// Splits a dataset into two halves, stratified by (group, arm) so both
/// treatment arms of both groups survive into each half. The same seed always
/// produces the same partition. Odd strata give their extra record to
/// whichever half currently holds fewer rows, keeping the size gap bounded by
/// the number of strata.
pub fn split_halves(dataset: &CombinedDataset, seed: u64) -> Result<SplitPair, DataError> {
    dataset.check_strata(2)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut in_a = vec![false; dataset.len()];
    let mut n_a = 0usize;
    let mut n_b = 0usize;
    // Iterate strata in a fixed order so the RNG stream is stable.
    for group in [Group::Experimental, Group::Observational] {
        for arm in Arm::BOTH {
            let mut idx: Vec<usize> = dataset
                .records
                .iter()
                .enumerate()
                .filter(|(_, r)| r.group == group && r.arm == arm)
                .map(|(i, _)| i)
                .collect();
            idx.shuffle(&mut rng);
            let mut half = idx.len() / 2;
            if idx.len() % 2 == 1 && n_a > n_b {
                // leftover goes to part_b this time
            } else {
                half += idx.len() % 2;
            }
            for (j, &i) in idx.iter().enumerate() {
                if j < half {
                    in_a[i] = true;
                    n_a += 1;
                } else {
                    n_b += 1;
                }
            }
        }
    }
    let (mut rec_a, mut rec_b) = (Vec::with_capacity(n_a), Vec::with_capacity(n_b));
    for (i, r) in dataset.records.iter().enumerate() {
        if in_a[i] {
            rec_a.push(r.clone());
        } else {
            rec_b.push(r.clone());
        }
    }
    Ok(SplitPair {
        part_a: CombinedDataset::new(rec_a, dataset.schema)?,
        part_b: CombinedDataset::new(rec_b, dataset.schema)?,
        seed,
    })
}

/// Restricts the short-term series to an equally spaced subset of steps and
/// re-indexes the time structure accordingly.
///
/// `kept_steps` are 1-based indices into the observed series and must form an
/// arithmetic progression of length >= 2; `long_horizon_index` names the
/// absolute step of the long-term outcome and must be reachable in whole
/// multiples of the progression's spacing. The returned dataset has
/// `T' = kept_steps.len()` and `mu' = (long_horizon_index - last_kept) / spacing`.
pub fn select_time_subset(
    dataset: &CombinedDataset,
    kept_steps: &[usize],
    long_horizon_index: usize,
) -> Result<CombinedDataset, DataError> {
    let spacing = validate_progression(kept_steps, dataset.t())?;
    let last = *kept_steps.last().unwrap();
    if long_horizon_index <= last || !(long_horizon_index - last).is_multiple_of(spacing) {
        return Err(DataError::HorizonNotOnGrid {
            long_index: long_horizon_index,
            last_kept: last,
            spacing,
        });
    }
    let new_mu = (long_horizon_index - last) / spacing;
    let records = dataset
        .records
        .iter()
        .map(|r| UnitRecord {
            group: r.group,
            arm: r.arm,
            covariates: r.covariates.clone(),
            short_outcomes: kept_steps.iter().map(|&s| r.short_outcomes[s - 1]).collect(),
            long_outcome: r.long_outcome,
        })
        .collect();
    CombinedDataset::new(
        records,
        DataSchema {
            d: dataset.d(),
            t: kept_steps.len(),
            mu: new_mu,
        },
    )
}

/// Checks that `steps` is a strictly increasing arithmetic progression of
/// length >= 2 inside `1..=t`, returning the spacing.
pub(crate) fn validate_progression(steps: &[usize], t: usize) -> Result<usize, DataError> {
    if steps.len() < 2 {
        return Err(DataError::UnevenSpacing {
            steps: steps.to_vec(),
        });
    }
    for &s in steps {
        if s == 0 || s > t {
            return Err(DataError::StepOutOfRange { step: s, t });
        }
    }
    let spacing = steps[1].saturating_sub(steps[0]);
    if spacing == 0 {
        return Err(DataError::UnevenSpacing {
            steps: steps.to_vec(),
        });
    }
    for w in steps.windows(2) {
        if w[1] <= w[0] || w[1] - w[0] != spacing {
            return Err(DataError::UnevenSpacing {
                steps: steps.to_vec(),
            });
        }
    }
    Ok(spacing)
}

fn expected_header(schema: DataSchema) -> String {
    let mut cols = vec!["group".to_string(), "a".to_string()];
    cols.extend((1..=schema.d).map(|j| format!("x_{j}")));
    cols.extend((1..=schema.t).map(|t| format!("s_{t}")));
    cols.push("y".to_string());
    cols.join(",")
}

/// Formats a float with the shortest representation that parses back to the
/// same value.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Reads only the header of a dataset CSV and derives `d` and `T` from the
/// column names; `mu` cannot be recovered from the file and must be supplied.
pub fn sniff_schema(path: &Path, mu: usize) -> Result<DataSchema, DataError> {
    let text = fs::read_to_string(path)?;
    let header = text.lines().next().unwrap_or("");
    let cols: Vec<&str> = header.split(',').collect();
    let d = cols.iter().filter(|c| c.starts_with("x_")).count();
    let t = cols.iter().filter(|c| c.starts_with("s_")).count();
    let schema = DataSchema { d, t, mu };
    if d == 0 || t == 0 || header != expected_header(schema) {
        return Err(DataError::HeaderMismatch {
            expected: "group,a,x_1..x_d,s_1..s_T,y".to_string(),
            found: header.to_string(),
        });
    }
    Ok(schema)
}

/// Loads a combined dataset from the CSV interchange format.
///
/// The header must match the declared schema exactly:
/// `group,a,x_1,...,x_d,s_1,...,s_T,y` with `group` in {E,O}, `a` in {0,1},
/// and `y` empty on experimental rows. Rows violating record invariants are
/// rejected with the offending (0-based, header excluded) row index.
pub fn load_csv(path: &Path, schema: DataSchema) -> Result<CombinedDataset, DataError> {
    let text = fs::read_to_string(path)?;
    parse_csv_text(&text, schema)
}

pub fn parse_csv_text(text: &str, schema: DataSchema) -> Result<CombinedDataset, DataError> {
    let expected = expected_header(schema);
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header != expected {
        return Err(DataError::HeaderMismatch {
            expected,
            found: header.to_string(),
        });
    }
    let n_cols = 2 + schema.d + schema.t + 1;
    let mut records = Vec::new();
    for (row, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n_cols {
            return Err(DataError::MissingColumn {
                row,
                expected: n_cols,
                found: fields.len(),
            });
        }
        let group = match fields[0] {
            "E" => Group::Experimental,
            "O" => Group::Observational,
            other => {
                return Err(DataError::UnknownGroup {
                    row,
                    value: other.to_string(),
                })
            }
        };
        let arm = match fields[1] {
            "0" => Arm::Control,
            "1" => Arm::Treated,
            other => {
                return Err(DataError::NonBinaryTreatment {
                    row,
                    value: other.to_string(),
                })
            }
        };
        let parse = |s: &str| -> Result<f64, DataError> {
            let v: f64 = s.parse().map_err(|_| DataError::BadNumber {
                row,
                value: s.to_string(),
            })?;
            if !v.is_finite() {
                return Err(DataError::NonFiniteValue { row: Some(row) });
            }
            Ok(v)
        };
        let mut covs = Vec::with_capacity(schema.d);
        for f in &fields[2..2 + schema.d] {
            covs.push(parse(f)?);
        }
        let mut shorts = Vec::with_capacity(schema.t);
        for f in &fields[2 + schema.d..2 + schema.d + schema.t] {
            shorts.push(parse(f)?);
        }
        let y_field = fields[n_cols - 1];
        let long_outcome = match (group, y_field.is_empty()) {
            (Group::Experimental, true) => None,
            (Group::Experimental, false) => {
                return Err(DataError::ExperimentalRowHasOutcome { row })
            }
            (Group::Observational, true) => {
                return Err(DataError::ObservationalRowMissingOutcome { row })
            }
            (Group::Observational, false) => Some(parse(y_field)?),
        };
        records.push(UnitRecord {
            group,
            arm,
            covariates: CovariateVector::new(covs)
                .map_err(|_| DataError::NonFiniteValue { row: Some(row) })?,
            short_outcomes: shorts,
            long_outcome,
        });
    }
    CombinedDataset::new(records, schema)
}

/// Writes a dataset in the CSV interchange format. `load_csv` of the output
/// reproduces the dataset exactly (float text is shortest round-trip).
pub fn write_csv(dataset: &CombinedDataset, path: &Path) -> Result<(), DataError> {
    fs::write(path, render_csv_text(dataset))?;
    Ok(())
}

pub fn render_csv_text(dataset: &CombinedDataset) -> String {
    let mut out = String::new();
    out.push_str(&expected_header(dataset.schema));
    out.push('\n');
    for r in &dataset.records {
        out.push_str(r.group.label());
        out.push(',');
        out.push_str(if r.arm == Arm::Treated { "1" } else { "0" });
        for x in r.covariates.values() {
            out.push(',');
            out.push_str(&fmt_f64(*x));
        }
        for s in &r.short_outcomes {
            out.push(',');
            out.push_str(&fmt_f64(*s));
        }
        out.push(',');
        if let Some(y) = r.long_outcome {
            out.push_str(&fmt_f64(y));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(group: Group, arm: Arm, x: f64, shorts: Vec<f64>, y: Option<f64>) -> UnitRecord {
        UnitRecord {
            group,
            arm,
            covariates: CovariateVector::scalar(x),
            short_outcomes: shorts,
            long_outcome: y,
        }
    }

    fn small_dataset() -> CombinedDataset {
        let schema = DataSchema { d: 1, t: 3, mu: 2 };
        let records = vec![
            record(Group::Experimental, Arm::Control, 0.1, vec![1.0, 2.0, 3.0], None),
            record(Group::Experimental, Arm::Treated, -0.4, vec![1.5, 2.5, 3.5], None),
            record(Group::Observational, Arm::Control, 0.25, vec![0.5, 1.5, 2.5], Some(9.5)),
            record(Group::Observational, Arm::Treated, 1.75, vec![2.0, 4.0, 6.0], Some(18.25)),
            record(Group::Experimental, Arm::Control, -1.0, vec![0.0, 0.0, 0.0], None),
            record(Group::Observational, Arm::Treated, 0.0, vec![1.0, 1.0, 1.0], Some(3.0)),
        ];
        CombinedDataset::new(records, schema).unwrap()
    }

    #[test]
    fn roundtrip_preserves_six_row_file() {
        let ds = small_dataset();
        let text = render_csv_text(&ds);
        let back = parse_csv_text(&text, ds.schema()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.n_experimental() + back.n_observational(), 6);
    }

    #[test]
    fn experimental_row_with_outcome_is_rejected() {
        let schema = DataSchema { d: 1, t: 2, mu: 1 };
        let text = "group,a,x_1,s_1,s_2,y\nE,0,0.5,1,2,3\n";
        let err = parse_csv_text(text, schema).unwrap_err();
        assert!(matches!(err, DataError::ExperimentalRowHasOutcome { row: 0 }));
    }

    #[test]
    fn observational_row_missing_outcome_is_rejected() {
        let schema = DataSchema { d: 1, t: 2, mu: 1 };
        let text = "group,a,x_1,s_1,s_2,y\nO,1,0.5,1,2,\n";
        let err = parse_csv_text(text, schema).unwrap_err();
        assert!(matches!(err, DataError::ObservationalRowMissingOutcome { row: 0 }));
    }

    #[test]
    fn non_finite_values_are_rejected_at_load() {
        let schema = DataSchema { d: 1, t: 2, mu: 1 };
        let text = "group,a,x_1,s_1,s_2,y\nE,0,NaN,1,2,\n";
        assert!(matches!(
            parse_csv_text(text, schema).unwrap_err(),
            DataError::NonFiniteValue { row: Some(0) }
        ));
        let text = "group,a,x_1,s_1,s_2,y\nO,1,0.5,inf,2,3\n";
        assert!(matches!(
            parse_csv_text(text, schema).unwrap_err(),
            DataError::NonFiniteValue { row: Some(0) }
        ));
    }

    #[test]
    fn non_binary_treatment_is_rejected() {
        let schema = DataSchema { d: 1, t: 2, mu: 1 };
        let text = "group,a,x_1,s_1,s_2,y\nE,2,0.5,1,2,\n";
        let err = parse_csv_text(text, schema).unwrap_err();
        assert!(matches!(err, DataError::NonBinaryTreatment { row: 0, .. }));
    }

    #[test]
    fn missing_column_names_row() {
        let schema = DataSchema { d: 1, t: 2, mu: 1 };
        let text = "group,a,x_1,s_1,s_2,y\nE,0,0.5,1,\n";
        let err = parse_csv_text(text, schema).unwrap_err();
        assert!(matches!(err, DataError::MissingColumn { row: 0, .. }));
    }

    #[test]
    fn empty_dataset_renders_header_only() {
        let schema = DataSchema { d: 2, t: 4, mu: 3 };
        let ds = CombinedDataset::new(vec![], schema).unwrap();
        assert_eq!(render_csv_text(&ds), "group,a,x_1,x_2,s_1,s_2,s_3,s_4,y\n");
    }

    fn strata_dataset(per_stratum: usize) -> CombinedDataset {
        let schema = DataSchema { d: 1, t: 2, mu: 1 };
        let mut records = Vec::new();
        for group in [Group::Experimental, Group::Observational] {
            for arm in Arm::BOTH {
                for k in 0..per_stratum {
                    let y = (group == Group::Observational).then_some(1.0 + k as f64);
                    records.push(record(group, arm, k as f64 * 0.3 - 1.0, vec![0.0, 1.0], y));
                }
            }
        }
        CombinedDataset::new(records, schema).unwrap()
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let ds = strata_dataset(3);
        let s1 = split_halves(&ds, 42).unwrap();
        let s2 = split_halves(&ds, 42).unwrap();
        assert_eq!(s1.part_a, s2.part_a);
        assert_eq!(s1.part_b, s2.part_b);
        assert_eq!(s1.part_a.len() + s1.part_b.len(), ds.len());
        // Every record lands in exactly one half (multiset equality).
        let mut merged: Vec<_> = s1
            .part_a
            .records()
            .iter()
            .chain(s1.part_b.records())
            .map(|r| format!("{r:?}"))
            .collect();
        merged.sort();
        let mut orig: Vec<_> = ds.records().iter().map(|r| format!("{r:?}")).collect();
        orig.sort();
        assert_eq!(merged, orig);
    }

    #[test]
    fn split_keeps_every_stratum_in_both_halves() {
        let ds = strata_dataset(2);
        let split = split_halves(&ds, 7).unwrap();
        for part in [&split.part_a, &split.part_b] {
            part.check_strata(1).unwrap();
            assert_eq!(part.len(), 4);
        }
    }

    #[test]
    fn split_rejects_tiny_strata() {
        let ds = small_dataset();
        // Observational control stratum has a single record.
        let err = split_halves(&ds, 1).unwrap_err();
        assert!(matches!(err, DataError::StratumTooSmall { .. }));
    }

    fn six_step_dataset() -> CombinedDataset {
        let schema = DataSchema { d: 1, t: 6, mu: 3 };
        let records = vec![
            record(Group::Experimental, Arm::Control, 0.0, (1..=6).map(f64::from).collect(), None),
            record(
                Group::Observational,
                Arm::Treated,
                1.0,
                (1..=6).map(|v| f64::from(v) * 2.0).collect(),
                Some(99.0),
            ),
        ];
        CombinedDataset::new(records, schema).unwrap()
    }

    #[test]
    fn subset_examples_reindex_time_structure() {
        let ds = six_step_dataset();
        let a = select_time_subset(&ds, &[1, 3, 5], 9).unwrap();
        assert_eq!((a.t(), a.mu()), (3, 2));
        assert_eq!(a.records()[0].short_outcomes, vec![1.0, 3.0, 5.0]);

        let b = select_time_subset(&ds, &[1, 5], 9).unwrap();
        assert_eq!((b.t(), b.mu()), (2, 1));

        let c = select_time_subset(&ds, &[1, 2, 3, 4, 5, 6], 9).unwrap();
        assert_eq!((c.t(), c.mu()), (6, 3));
        assert_eq!(&c, &ds);
    }

    #[test]
    fn split_of_simulated_dataset_is_balanced() {
        // Stratified halving bounds the size gap by the number of strata.
        let (ds, _) = crate::sim::generate(&crate::sim::SimConfig {
            seed: 123,
            ..crate::sim::SimConfig::default()
        })
        .unwrap();
        let split = split_halves(&ds, 9).unwrap();
        let (a, b) = (split.part_a.len() as i64, split.part_b.len() as i64);
        assert!((a - b).unsigned_abs() <= 4, "|{a} - {b}| > 4 strata");
    }

    proptest::proptest! {
        /// CSV write-then-load is the identity on valid datasets, including
        /// extreme magnitudes: float text is shortest-round-trip.
        #[test]
        fn csv_roundtrip_identity(seed in 0u64..500) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            let d = rng.gen_range(1..=3);
            let t = rng.gen_range(2..=5);
            let schema = DataSchema { d, t, mu: rng.gen_range(1..=3) };
            let value = |r: &mut rand_chacha::ChaCha12Rng| -> f64 {
                let mantissa: f64 = r.gen_range(-1.0..1.0);
                let scale = 10f64.powi(r.gen_range(-12..=12));
                mantissa * scale
            };
            let n = rng.gen_range(0..=12);
            let mut records = Vec::new();
            for i in 0..n {
                let group = if i % 2 == 0 { Group::Experimental } else { Group::Observational };
                records.push(UnitRecord {
                    group,
                    arm: if rng.gen_bool(0.5) { Arm::Treated } else { Arm::Control },
                    covariates: CovariateVector::new(
                        (0..d).map(|_| value(&mut rng)).collect(),
                    ).unwrap(),
                    short_outcomes: (0..t).map(|_| value(&mut rng)).collect(),
                    long_outcome: (group == Group::Observational).then(|| value(&mut rng)),
                });
            }
            let ds = CombinedDataset::new(records, schema).unwrap();
            let text = render_csv_text(&ds);
            let back = parse_csv_text(&text, schema).unwrap();
            proptest::prop_assert_eq!(&back, &ds);
        }
    }

    #[test]
    fn subset_rejects_uneven_and_off_grid() {
        let ds = six_step_dataset();
        assert!(matches!(
            select_time_subset(&ds, &[1, 2, 4], 9).unwrap_err(),
            DataError::UnevenSpacing { .. }
        ));
        assert!(matches!(
            select_time_subset(&ds, &[2, 4, 6], 9).unwrap_err(),
            DataError::HorizonNotOnGrid { .. }
        ));
        assert!(matches!(
            select_time_subset(&ds, &[1, 7], 9).unwrap_err(),
            DataError::StepOutOfRange { step: 7, .. }
        ));
    }
}
