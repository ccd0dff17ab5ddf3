//! Experimental records, datasets, and the random batch partition.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CramError, Result};

/// Minimum distance of every propensity score from 0 and 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapConfig {
    c: f64,
}

impl OverlapConfig {
    pub const DEFAULT_C: f64 = 0.01;

    pub fn new(c: f64) -> Result<Self> {
        if !(c > 0.0 && c <= 0.5) {
            return Err(CramError::Config(format!(
                "overlap constant must lie in (0, 0.5], got {c}"
            )));
        }
        Ok(Self { c })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn check(&self, propensity: f64) -> Result<()> {
        self.check_row(propensity, None)
    }

    fn check_row(&self, propensity: f64, row: Option<usize>) -> Result<()> {
        let (lower, upper) = (self.c, 1.0 - self.c);
        if propensity.is_finite() && propensity >= lower && propensity <= upper {
            Ok(())
        } else {
            Err(CramError::OverlapViolation {
                propensity,
                lower,
                upper,
                row,
            })
        }
    }
}

impl Default for OverlapConfig {
    fn default() -> Self {
        Self { c: Self::DEFAULT_C }
    }
}

/// One experimental unit: covariates, binary treatment, outcome and the
/// known probability of treatment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: Vec<f64>,
    pub d: bool,
    pub y: f64,
    pub e: f64,
}

impl Observation {
    pub fn new(x: Vec<f64>, d: bool, y: f64, e: f64) -> Self {
        Self { x, d, y, e }
    }

    /// IPW pseudo-outcome `y·d/e − y·(1−d)/(1−e)` without the overlap check.
    ///
    /// Observations held by a [`Dataset`] have already passed overlap
    /// validation; use [`ipw_kernel`] for unvalidated records.
    #[inline]
    pub fn ipw_term(&self) -> f64 {
        if self.d {
            self.y / self.e
        } else {
            -self.y / (1.0 - self.e)
        }
    }

    /// IPW estimate of the outcome a policy assigning treatment with
    /// probability `pi` would realize on this unit.
    #[inline]
    pub fn value_term(&self, pi: f64) -> f64 {
        if self.d {
            self.y / self.e * pi
        } else {
            self.y / (1.0 - self.e) * (1.0 - pi)
        }
    }
}

/// Inverse-propensity-weighted pseudo-outcome of a single observation.
///
/// Its conditional mean given the covariates is the CATE.
pub fn ipw_kernel(obs: &Observation, overlap: OverlapConfig) -> Result<f64> {
    overlap.check(obs.e)?;
    Ok(obs.ipw_term())
}

/// A validated i.i.d. sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    observations: Vec<Observation>,
    p: usize,
    overlap: OverlapConfig,
}

impl Dataset {
    pub fn new(observations: Vec<Observation>, overlap: OverlapConfig) -> Result<Self> {
        let first = observations
            .first()
            .ok_or_else(|| CramError::InvalidData("dataset is empty".into()))?;
        let p = first.x.len();
        let (mut treated, mut control) = (0usize, 0usize);
        for (row, obs) in observations.iter().enumerate() {
            if obs.x.len() != p {
                return Err(CramError::Shape {
                    expected: p,
                    got: obs.x.len(),
                });
            }
            if !obs.y.is_finite() {
                return Err(CramError::InvalidData(format!(
                    "non-finite outcome at row {row}"
                )));
            }
            if obs.x.iter().any(|v| !v.is_finite()) {
                return Err(CramError::InvalidData(format!(
                    "non-finite covariate at row {row}"
                )));
            }
            overlap.check_row(obs.e, Some(row))?;
            if obs.d {
                treated += 1;
            } else {
                control += 1;
            }
        }
        if treated == 0 || control == 0 {
            return Err(CramError::InvalidData(format!(
                "need at least one treated and one control unit (treated={treated}, control={control})"
            )));
        }
        Ok(Self {
            observations,
            p,
            overlap,
        })
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn overlap(&self) -> OverlapConfig {
        self.overlap
    }

    pub fn covariates(&self) -> Vec<&[f64]> {
        self.observations.iter().map(|o| o.x.as_slice()).collect()
    }

    pub fn treated_count(&self) -> usize {
        self.observations.iter().filter(|o| o.d).count()
    }

    /// Rescales every covariate column to mean 0 and variance 1.
    ///
    /// Constant columns are centered only.
    pub fn standardized(&self) -> Self {
        let n = self.len() as f64;
        let mut out = self.observations.clone();
        for k in 0..self.p {
            let mean = self.observations.iter().map(|o| o.x[k]).sum::<f64>() / n;
            let var = self
                .observations
                .iter()
                .map(|o| (o.x[k] - mean).powi(2))
                .sum::<f64>()
                / (n - 1.0).max(1.0);
            let sd = var.sqrt();
            for obs in &mut out {
                obs.x[k] -= mean;
                if sd > 0.0 {
                    obs.x[k] /= sd;
                }
            }
        }
        Self {
            observations: out,
            p: self.p,
            overlap: self.overlap,
        }
    }

    /// Copies of the observations at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Vec<Observation> {
        indices
            .iter()
            .map(|&i| self.observations[i].clone())
            .collect()
    }
}

/// A seeded random partition of a dataset into `T` near-equal batches.
///
/// Batch ids are 1-based to match the usual `B_1, …, B_T` indexing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchPlan {
    num_batches: usize,
    assignment: Vec<usize>,
    sizes: Vec<usize>,
    members: Vec<Vec<usize>>,
    seed: u64,
}

impl BatchPlan {
    pub fn num_batches(&self) -> usize {
        self.num_batches
    }

    /// Batch id (1-based) of every observation, in dataset order.
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Dataset indices of batch `j` (1-based).
    pub fn members(&self, j: usize) -> &[usize] {
        &self.members[j - 1]
    }

    /// Materializes every batch as an owned list of observations.
    pub fn materialize(&self, dataset: &Dataset) -> Vec<Vec<Observation>> {
        self.members.iter().map(|m| dataset.select(m)).collect()
    }
}

/// Randomly partitions `dataset` into `num_batches` batches.
///
/// A seeded Fisher–Yates shuffle is cut into contiguous blocks of size
/// `⌊n/T⌋`, the first `n mod T` blocks receiving one extra observation.
pub fn partition_batches(
    dataset: &Dataset,
    num_batches: usize,
    seed: u64,
    burn_in_min: usize,
    burn_out_min: usize,
) -> Result<BatchPlan> {
    partition_indices(dataset.len(), num_batches, seed, burn_in_min, burn_out_min)
}

pub(crate) fn partition_indices(
    n: usize,
    num_batches: usize,
    seed: u64,
    burn_in_min: usize,
    burn_out_min: usize,
) -> Result<BatchPlan> {
    if num_batches < 2 || num_batches > n {
        return Err(CramError::InvalidBatching(format!(
            "batch count must satisfy 2 <= T <= n, got T={num_batches}, n={n}"
        )));
    }
    if burn_in_min + burn_out_min > n {
        return Err(CramError::Config(format!(
            "burn-in ({burn_in_min}) plus burn-out ({burn_out_min}) exceeds n={n}"
        )));
    }
    let base = n / num_batches;
    let extra = n % num_batches;
    let sizes: Vec<usize> = (0..num_batches)
        .map(|j| base + usize::from(j < extra))
        .collect();
    if sizes[0] < burn_in_min {
        return Err(CramError::Config(format!(
            "first batch has {} observations, burn-in requires {burn_in_min}",
            sizes[0]
        )));
    }
    if sizes[num_batches - 1] < burn_out_min {
        return Err(CramError::Config(format!(
            "last batch has {} observations, burn-out requires {burn_out_min}",
            sizes[num_batches - 1]
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut assignment = vec![0usize; n];
    let mut members = Vec::with_capacity(num_batches);
    let mut start = 0;
    for (j, &size) in sizes.iter().enumerate() {
        let block = order[start..start + size].to_vec();
        for &i in &block {
            assignment[i] = j + 1;
        }
        members.push(block);
        start += size;
    }
    Ok(BatchPlan {
        num_batches,
        assignment,
        sizes,
        members,
        seed,
    })
}

/// Column roles for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub outcome: String,
    pub treatment: String,
    #[serde(default)]
    pub propensity: Option<String>,
    /// Explicit covariate columns; `None` means every remaining column.
    #[serde(default)]
    pub covariates: Option<Vec<String>>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            outcome: "y".into(),
            treatment: "d".into(),
            propensity: None,
            covariates: None,
        }
    }
}

/// Loads a dataset from a headered, comma-separated file.
pub fn read_dataset_csv(
    path: impl AsRef<Path>,
    schema: &CsvSchema,
    constant_propensity: Option<f64>,
    overlap: OverlapConfig,
) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_dataset_from_reader(file, schema, constant_propensity, overlap)
}

pub fn read_dataset_from_reader<R: std::io::Read>(
    reader: R,
    schema: &CsvSchema,
    constant_propensity: Option<f64>,
    overlap: OverlapConfig,
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| ingest(0, "<header>", e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let index: HashMap<&str, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.as_str(), i))
        .collect();
    let find = |name: &str| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| ingest(0, name, "missing column".into()))
    };

    let y_col = find(&schema.outcome)?;
    let d_col = find(&schema.treatment)?;
    let e_col = match (&schema.propensity, constant_propensity) {
        (Some(name), _) => Some(find(name)?),
        (None, Some(e)) => {
            if !(e > 0.0 && e < 1.0) {
                return Err(CramError::Config(format!(
                    "constant propensity must lie in (0, 1), got {e}"
                )));
            }
            None
        }
        (None, None) => {
            return Err(CramError::Config(
                "either a propensity column or a constant propensity is required".into(),
            ))
        }
    };
    let x_cols: Vec<usize> = match &schema.covariates {
        Some(names) => names.iter().map(|n| find(n)).collect::<Result<_>>()?,
        None => (0..headers.len())
            .filter(|&i| i != y_col && i != d_col && Some(i) != e_col)
            .collect(),
    };

    let mut observations = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        // 1-based data row, header excluded
        let row = r + 1;
        let record = record.map_err(|e| ingest(row, "<record>", e.to_string()))?;
        let cell = |col: usize| -> Result<f64> {
            let raw = record
                .get(col)
                .ok_or_else(|| ingest(row, &headers[col], "missing cell".into()))?;
            if raw.is_empty() {
                return Err(ingest(row, &headers[col], "empty cell".into()));
            }
            raw.parse::<f64>()
                .map_err(|_| ingest(row, &headers[col], format!("non-numeric value `{raw}`")))
        };
        let y = cell(y_col)?;
        let d = match cell(d_col)? {
            0.0 => false,
            1.0 => true,
            v => {
                return Err(ingest(
                    row,
                    &headers[d_col],
                    format!("treatment must be 0 or 1, got {v}"),
                ))
            }
        };
        let e = match e_col {
            Some(col) => {
                let e = cell(col)?;
                overlap.check_row(e, Some(row))?;
                e
            }
            None => constant_propensity.unwrap_or_default(),
        };
        let x = x_cols
            .iter()
            .map(|&c| cell(c))
            .collect::<Result<Vec<_>>>()?;
        observations.push(Observation { x, d, y, e });
    }
    if observations.is_empty() {
        return Err(ingest(0, "<file>", "no data rows".into()));
    }
    Dataset::new(observations, overlap)
}

fn ingest(row: usize, column: &str, message: String) -> CramError {
    CramError::Ingestion {
        row,
        column: column.to_string(),
        message,
    }
}
