//! Discrete memoryless channels and their unit-interval representation.
//!
//! A [`Dmc`] bundles an input pmf `p(x)` with a transition matrix `p(y|x)` and
//! caches the derived output pmf `p(y)` and posterior `p(x|y)`. The
//! [`WPartition`] splits `[0, 1]` at the cumulative input probabilities, so a
//! point `w` drawn uniformly maps to an input symbol distributed as `p(x)`.
//! All probabilities are plain `f64`; validation is to an absolute `1e-12`.

use serde::Deserialize;
use thiserror::Error;

/// Absolute tolerance for pmf and row-sum validation.
pub const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("pmf or transition row does not sum to 1: {what} sums to {sum}")]
    NonStochastic { what: String, sum: f64 },
    #[error("redundant input pairs (identical rows): {pairs:?}")]
    RedundantInputs { pairs: Vec<(usize, usize)> },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("no output symbol has positive probability for y={0}")]
    ZeroOutputProbability(usize),
    #[error("probabilities must be finite and nonnegative: {0}")]
    InvalidEntry(String),
    #[error("channel spec parse error: {0}")]
    BadSpec(String),
}

/// What to do with inputs whose transition rows coincide.
///
/// Redundant inputs defeat the scheme (shifting the interval across them
/// carries no information), so the constructor either refuses them or merges
/// each group into its first member, summing the input probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RedundantPolicy {
    #[default]
    Reject,
    Merge,
}

#[derive(Deserialize)]
struct DmcSpecFile {
    input_pmf: Vec<f64>,
    transition: Vec<Vec<f64>>,
}

/// A validated discrete memoryless channel with a fixed input distribution.
#[derive(Debug, Clone)]
pub struct Dmc {
    input_pmf: Vec<f64>,
    transition: Vec<Vec<f64>>,
    output_pmf: Vec<f64>,
    /// `posterior[y][x] = p(x|y)`, zero rows for outputs with `p(y) = 0`.
    posterior: Vec<Vec<f64>>,
    /// Original indices of inputs dropped for having `p(x) = 0`.
    stripped_inputs: Vec<usize>,
    /// Pairs merged under [`RedundantPolicy::Merge`], as (kept, dropped).
    merged_inputs: Vec<(usize, usize)>,
}

impl Dmc {
    /// Validates and builds a channel, rejecting redundant inputs.
    pub fn new(input_pmf: Vec<f64>, transition: Vec<Vec<f64>>) -> Result<Self, ChannelError> {
        Self::with_policy(input_pmf, transition, RedundantPolicy::Reject)
    }

    pub fn with_policy(
        input_pmf: Vec<f64>,
        transition: Vec<Vec<f64>>,
        policy: RedundantPolicy,
    ) -> Result<Self, ChannelError> {
        if input_pmf.is_empty() || transition.is_empty() {
            return Err(ChannelError::DimensionMismatch(
                "empty pmf or transition matrix".into(),
            ));
        }
        if input_pmf.len() != transition.len() {
            return Err(ChannelError::DimensionMismatch(format!(
                "pmf has {} entries but transition has {} rows",
                input_pmf.len(),
                transition.len()
            )));
        }
        let cols = transition[0].len();
        if cols == 0 {
            return Err(ChannelError::DimensionMismatch("no output symbols".into()));
        }
        for (x, row) in transition.iter().enumerate() {
            if row.len() != cols {
                return Err(ChannelError::DimensionMismatch(format!(
                    "row {x} has {} entries, expected {cols}",
                    row.len()
                )));
            }
        }
        for (i, &p) in input_pmf.iter().enumerate() {
            if !p.is_finite() || p < 0.0 {
                return Err(ChannelError::InvalidEntry(format!("input_pmf[{i}] = {p}")));
            }
        }
        for (x, row) in transition.iter().enumerate() {
            for (y, &p) in row.iter().enumerate() {
                if !p.is_finite() || p < 0.0 {
                    return Err(ChannelError::InvalidEntry(format!(
                        "transition[{x}][{y}] = {p}"
                    )));
                }
            }
        }
        let pmf_sum: f64 = input_pmf.iter().sum();
        if (pmf_sum - 1.0).abs() > PROB_TOL {
            return Err(ChannelError::NonStochastic {
                what: "input_pmf".into(),
                sum: pmf_sum,
            });
        }
        for (x, row) in transition.iter().enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > PROB_TOL {
                return Err(ChannelError::NonStochastic {
                    what: format!("transition row {x}"),
                    sum: s,
                });
            }
        }

        // Zero-probability inputs carry no mass in the W partition; drop them
        // up front and remember which, since the analysis assumes p(x) > 0.
        let mut stripped = Vec::new();
        let mut pmf = Vec::new();
        let mut rows = Vec::new();
        for (x, (&p, row)) in input_pmf.iter().zip(&transition).enumerate() {
            if p > 0.0 {
                pmf.push(p);
                rows.push(row.clone());
            } else {
                stripped.push(x);
            }
        }

        let rows_equal = |a: &[f64], b: &[f64]| {
            a.iter().zip(b).all(|(u, v)| (u - v).abs() <= PROB_TOL)
        };
        let mut redundant = Vec::new();
        for i in 0..rows.len() {
            for j in (i + 1)..rows.len() {
                if rows_equal(&rows[i], &rows[j]) {
                    redundant.push((i, j));
                }
            }
        }
        let mut merged = Vec::new();
        if !redundant.is_empty() {
            match policy {
                RedundantPolicy::Reject => {
                    return Err(ChannelError::RedundantInputs { pairs: redundant })
                }
                RedundantPolicy::Merge => {
                    // Fold each later duplicate into the first matching row.
                    let mut keep: Vec<usize> = Vec::new();
                    let mut new_pmf: Vec<f64> = Vec::new();
                    let mut new_rows: Vec<Vec<f64>> = Vec::new();
                    'outer: for i in 0..rows.len() {
                        for (slot, &k) in keep.iter().enumerate() {
                            if rows_equal(&rows[k], &rows[i]) {
                                new_pmf[slot] += pmf[i];
                                merged.push((k, i));
                                continue 'outer;
                            }
                        }
                        keep.push(i);
                        new_pmf.push(pmf[i]);
                        new_rows.push(rows[i].clone());
                    }
                    pmf = new_pmf;
                    rows = new_rows;
                }
            }
        }
        if pmf.is_empty() {
            return Err(ChannelError::NonStochastic {
                what: "input_pmf (all entries zero)".into(),
                sum: 0.0,
            });
        }

        let mut output_pmf = vec![0.0; cols];
        for (p, row) in pmf.iter().zip(&rows) {
            for (o, t) in output_pmf.iter_mut().zip(row) {
                *o += p * t;
            }
        }
        let posterior = (0..cols)
            .map(|y| {
                let py = output_pmf[y];
                (0..pmf.len())
                    .map(|x| if py > 0.0 { pmf[x] * rows[x][y] / py } else { 0.0 })
                    .collect()
            })
            .collect();

        Ok(Self {
            input_pmf: pmf,
            transition: rows,
            output_pmf,
            posterior,
            stripped_inputs: stripped,
            merged_inputs: merged,
        })
    }

    /// Binary symmetric channel with crossover probability `p`, uniform input.
    pub fn bsc(p: f64) -> Result<Self, ChannelError> {
        if !(0.0..=1.0).contains(&p) || !p.is_finite() {
            return Err(ChannelError::BadSpec(format!(
                "bsc crossover must be in [0,1], got {p}"
            )));
        }
        if (p - 0.5).abs() <= PROB_TOL {
            // Both rows equal: redundant by construction.
            return Err(ChannelError::RedundantInputs { pairs: vec![(0, 1)] });
        }
        Self::new(vec![0.5, 0.5], vec![vec![1.0 - p, p], vec![p, 1.0 - p]])
    }

    /// Parses a channel spec: either `bsc:<p>` or a JSON object
    /// `{"input_pmf": [...], "transition": [[...], ...]}`.
    pub fn from_json(text: &str) -> Result<Self, ChannelError> {
        let spec: DmcSpecFile = serde_json::from_str(text)
            .map_err(|e| ChannelError::BadSpec(e.to_string()))?;
        Self::new(spec.input_pmf, spec.transition)
    }

    pub fn num_inputs(&self) -> usize {
        self.input_pmf.len()
    }

    pub fn num_outputs(&self) -> usize {
        self.output_pmf.len()
    }

    pub fn input_pmf(&self) -> &[f64] {
        self.input_pmf.as_slice()
    }

    pub fn output_pmf(&self) -> &[f64] {
        self.output_pmf.as_slice()
    }

    /// `p(y|x)` for input row `x`.
    pub fn row(&self, x: usize) -> &[f64] {
        &self.transition[x]
    }

    /// `p(x|y)` for output `y`; all zeros when `p(y) = 0`.
    pub fn posterior_row(&self, y: usize) -> &[f64] {
        &self.posterior[y]
    }

    pub fn stripped_inputs(&self) -> &[usize] {
        &self.stripped_inputs
    }

    pub fn merged_inputs(&self) -> &[(usize, usize)] {
        &self.merged_inputs
    }

    /// Mutual information `I(X;Y)` in nats.
    pub fn mutual_information(&self) -> f64 {
        let mut total = 0.0;
        for (x, row) in self.transition.iter().enumerate() {
            let px = self.input_pmf[x];
            for (y, &pyx) in row.iter().enumerate() {
                if pyx > 0.0 {
                    total += px * pyx * (pyx / self.output_pmf[y]).ln();
                }
            }
        }
        total.max(0.0)
    }

    /// Channel dispersion `Var[ln(p(Y|X)/p(Y))]` in nats².
    pub fn dispersion(&self) -> f64 {
        let mean = self.mutual_information();
        let mut second = 0.0;
        for (x, row) in self.transition.iter().enumerate() {
            let px = self.input_pmf[x];
            for (y, &pyx) in row.iter().enumerate() {
                if pyx > 0.0 {
                    let z = (pyx / self.output_pmf[y]).ln();
                    second += px * pyx * z * z;
                }
            }
        }
        (second - mean * mean).max(0.0)
    }

    /// Unit-interval partition at the cumulative input probabilities.
    pub fn w_partition(&self) -> WPartition {
        let mut boundaries = Vec::with_capacity(self.input_pmf.len() + 1);
        boundaries.push(0.0);
        let mut acc = 0.0;
        for &p in &self.input_pmf {
            acc += p;
            boundaries.push(acc);
        }
        *boundaries.last_mut().unwrap() = 1.0;
        WPartition { boundaries }
    }

    /// Per-input reweighting factors `p(x|y)/p(x) = p(y|x)/p(y)` for a
    /// received `y`. Reweighting preserves mass: `Σ_x p(x)·factor_x = 1`.
    pub fn posterior_factors(&self, y: usize) -> Result<Vec<f64>, ChannelError> {
        if y >= self.num_outputs() {
            return Err(ChannelError::DimensionMismatch(format!(
                "output {y} out of range"
            )));
        }
        let py = self.output_pmf[y];
        if py <= 0.0 {
            return Err(ChannelError::ZeroOutputProbability(y));
        }
        Ok(self.transition.iter().map(|row| row[y] / py).collect())
    }

    /// Inverse-cdf sample from row `x` driven by a uniform `unit` in `[0, 1)`.
    pub fn sample_output(&self, x: usize, unit: f64) -> usize {
        let row = &self.transition[x];
        let mut acc = 0.0;
        for (y, &p) in row.iter().enumerate() {
            acc += p;
            if unit < acc {
                return y;
            }
        }
        // Guard against accumulated rounding just below 1.
        row.len() - 1
    }
}

/// The unit interval split at cumulative input probabilities:
/// `0 = F(0) < F(1) ≤ … ≤ F(|X|) = 1`, with gap `x` equal to `p(x)`.
#[derive(Debug, Clone)]
pub struct WPartition {
    boundaries: Vec<f64>,
}

impl WPartition {
    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    /// Number of input symbols.
    pub fn num_cells(&self) -> usize {
        self.boundaries.len() - 1
    }

    /// Cell `x` as `(F(x), F(x+1))`.
    pub fn cell(&self, x: usize) -> (f64, f64) {
        (self.boundaries[x], self.boundaries[x + 1])
    }

    /// Maps `w` to its input symbol: the `x` with `F(x) < w ≤ F(x+1)`,
    /// with `w = 0` assigned to the first cell.
    pub fn symbol_of(&self, w: f64) -> usize {
        let n = self.num_cells();
        for x in 0..n {
            if w <= self.boundaries[x + 1] {
                return x;
            }
        }
        n - 1
    }
}
