//! The cram engine: one pass of batched learning with simultaneous
//! evaluation of the final learned policy.
//!
//! Indices follow the usual convention: batches `B_1..B_T`, learned
//! policies `π̂_0 (baseline), π̂_1, …, π̂_T`. Step `t` (1 ≤ t ≤ T−1) learns
//! `π̂_t` on `B_1..B_t` and estimates `Δ(π̂_t; π̂_{t−1})` on `B_{t+1}..B_T`.
//!
//! Batches may differ in size by one. Each batch estimate `Γ̂_tj` averages
//! over its own batch, step estimates weight the remaining batches equally,
//! and the variance uses actual observation counts.

use serde::{Deserialize, Serialize};

use crate::data::{partition_batches, partition_indices, Dataset, Observation};
use crate::error::{CramError, Result};
use crate::learner::Learner;
use crate::policy::{Policy, PolicySequence};
use crate::stability::StabilityDiagnostics;
use crate::stats::{two_sided_z, RunningMoments};

pub const DEFAULT_BATCHES: usize = 20;
pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;

/// Quantity targeted by a cram run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimand {
    /// `Δ(π̂_T; π₀) = V(π̂_T) − V(π₀)`
    #[default]
    ValueDifference,
    /// `V(π̂_T)`
    PolicyValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CramOptions {
    pub num_batches: usize,
    pub seed: u64,
    pub alpha: f64,
    /// Keep `π̂_{T−1}` as the final policy so the last batch is used only
    /// for evaluation.
    pub debias_final: bool,
    pub estimand: Estimand,
    pub burn_in_min: usize,
    pub burn_out_min: usize,
}

impl Default for CramOptions {
    fn default() -> Self {
        Self {
            num_batches: DEFAULT_BATCHES,
            seed: 0,
            alpha: DEFAULT_ALPHA,
            debias_final: false,
            estimand: Estimand::ValueDifference,
            burn_in_min: 0,
            burn_out_min: 0,
        }
    }
}

impl CramOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CramError::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.num_batches < 2 {
            return Err(CramError::InvalidBatching(format!(
                "batch count must be at least 2, got {}",
                self.num_batches
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CramResult {
    pub estimand: Estimand,
    /// `Δ̂(π̂_T; π₀)`, or `Ψ̂` for the policy-value estimand.
    pub delta_hat: f64,
    pub v_hat_sq: f64,
    /// `sqrt(v̂² / T)`
    pub se: f64,
    pub ci: (f64, f64),
    pub alpha: f64,
    pub num_batches: usize,
    pub batch_sizes: Vec<usize>,
    pub n: usize,
    pub seed: u64,
    pub final_policy: Policy,
    pub policy_sequence: PolicySequence,
    /// `Δ̂(π̂_t; π̂_{t−1})` for `t = 1..T−1`.
    pub per_step_deltas: Vec<f64>,
    /// `Q̂_t` on the full covariate sample for `t = 1..T`.
    pub q_t_series: Vec<f64>,
    /// `(1/T) Σ_j η̂_j`; only set for the policy-value estimand.
    pub baseline_value: Option<f64>,
    pub treated_fraction: f64,
}

impl CramResult {
    pub fn report(&self) -> CramReport {
        CramReport {
            estimand: self.estimand,
            estimate: self.delta_hat,
            variance: self.v_hat_sq,
            se: self.se,
            ci_lower: self.ci.0,
            ci_upper: self.ci.1,
            alpha: self.alpha,
            batches: self.num_batches,
            batch_sizes: self.batch_sizes.clone(),
            n: self.n,
            seed: self.seed,
            per_step_deltas: self.per_step_deltas.clone(),
            q_t: self.q_t_series.clone(),
            treated_fraction_under_final_policy: self.treated_fraction,
            baseline_value: self.baseline_value,
            final_policy: self.final_policy.clone(),
            stability: None,
        }
    }
}

/// Flat, serializable summary of a cram run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CramReport {
    pub estimand: Estimand,
    pub estimate: f64,
    pub variance: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub alpha: f64,
    #[serde(rename = "T")]
    pub batches: usize,
    pub batch_sizes: Vec<usize>,
    pub n: usize,
    pub seed: u64,
    pub per_step_deltas: Vec<f64>,
    pub q_t: Vec<f64>,
    pub treated_fraction_under_final_policy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_value: Option<f64>,
    pub final_policy: Policy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability: Option<StabilityDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub delta_hat: f64,
    pub se: f64,
    pub ci: (f64, f64),
    pub alpha: f64,
    pub final_policy: Policy,
    pub train_fraction: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

/// Batch estimate `Γ̂_tj = mean_{i∈B_j} ψ_i·(π_t(x_i) − π_{t−1}(x_i))` with
/// `ψ` the IPW pseudo-outcome.
pub fn gamma_tj(pi_t: &Policy, pi_tm1: &Policy, batch: &[Observation]) -> Result<f64> {
    if batch.is_empty() {
        return Err(CramError::Domain("empty evaluation batch".into()));
    }
    let mut total = 0.0;
    for obs in batch {
        total += obs.ipw_term() * (pi_t.evaluate(&obs.x)? - pi_tm1.evaluate(&obs.x)?);
    }
    Ok(total / batch.len() as f64)
}

/// Step estimate `Δ̂(π̂_t; π̂_{t−1}) = (1/(T−t)) Σ_{j=t+1}^{T} Γ̂_tj`.
///
/// `batches[0]` is `B_1`.
pub fn delta_hat_step(
    t: usize,
    sequence: &PolicySequence,
    batches: &[Vec<Observation>],
) -> Result<f64> {
    let num_batches = batches.len();
    if t < 1 || t + 1 > num_batches {
        return Err(CramError::Index {
            index: t,
            lo: 1,
            hi: num_batches.saturating_sub(1),
        });
    }
    let (pi_t, pi_tm1) = step_pair(sequence, t)?;
    let mut total = 0.0;
    for batch in &batches[t..] {
        total += gamma_tj(pi_t, pi_tm1, batch)?;
    }
    Ok(total / (num_batches - t) as f64)
}

fn step_pair(sequence: &PolicySequence, t: usize) -> Result<(&Policy, &Policy)> {
    let missing = || CramError::Index {
        index: t,
        lo: 1,
        hi: sequence.steps(),
    };
    Ok((
        sequence.get(t).ok_or_else(missing)?,
        sequence.get(t - 1).ok_or_else(missing)?,
    ))
}

/// Accumulates `W_j(x) = Σ_{t<j} (π̂_t(x) − π̂_{t−1}(x)) / (T − t)` for
/// `j = 2, 3, …` through `W_j = W_{j−1} + (π̂_{j−1} − π̂_{j−2})/(T − j + 1)`.
struct WeightRecursion<'a> {
    policies: &'a [Policy],
    num_batches: usize,
    /// Next `j` to produce.
    j: usize,
    weight: f64,
    prev_eval: f64,
}

impl<'a> WeightRecursion<'a> {
    fn new(policies: &'a [Policy], num_batches: usize, x: &[f64]) -> Result<Self> {
        Ok(Self {
            policies,
            num_batches,
            j: 2,
            weight: 0.0,
            prev_eval: policies[0].evaluate(x)?,
        })
    }

    /// Advances to `W_j` for the current `j` and returns it.
    fn advance(&mut self, x: &[f64]) -> Result<f64> {
        let t = self.j - 1;
        let eval = self.policies[t].evaluate(x)?;
        self.weight += (eval - self.prev_eval) / (self.num_batches - t) as f64;
        self.prev_eval = eval;
        self.j += 1;
        Ok(self.weight)
    }
}

/// `W_j(x)` for every `j = 2..=upto`, via the incremental recursion.
pub fn cumulative_weights(
    sequence: &PolicySequence,
    num_batches: usize,
    upto: usize,
    x: &[f64],
) -> Result<Vec<f64>> {
    if upto > num_batches || upto > sequence.steps() + 1 {
        return Err(CramError::Index {
            index: upto,
            lo: 2,
            hi: num_batches.min(sequence.steps() + 1),
        });
    }
    let mut rec = WeightRecursion::new(sequence.as_slice(), num_batches, x)?;
    (2..=upto).map(|_| rec.advance(x)).collect()
}

/// Batch aggregate `Γ̂_j(T) = Σ_{t=1}^{j−1} Γ̂_tj / (T − t)`, computed as
/// `mean_{i∈B_j} ψ_i·W_j(x_i)`. `batch_j` is `B_j`, `j` is 1-based.
pub fn gamma_j_of_t(
    j: usize,
    sequence: &PolicySequence,
    num_batches: usize,
    batch_j: &[Observation],
) -> Result<f64> {
    if j < 2 || j > num_batches || j > sequence.steps() + 1 {
        return Err(CramError::Index {
            index: j,
            lo: 2,
            hi: num_batches,
        });
    }
    if batch_j.is_empty() {
        return Err(CramError::Domain("empty evaluation batch".into()));
    }
    let mut total = 0.0;
    for obs in batch_j {
        let mut rec = WeightRecursion::new(sequence.as_slice(), num_batches, &obs.x)?;
        let mut w = 0.0;
        for _ in 2..=j {
            w = rec.advance(&obs.x)?;
        }
        total += obs.ipw_term() * w;
    }
    Ok(total / batch_j.len() as f64)
}

/// Baseline-value batch estimate
/// `η̂_j = mean_{i∈B_j} [y d/e·π₀(x) + y(1−d)/(1−e)·(1−π₀(x))]`.
pub fn eta_j(batch: &[Observation], baseline: &Policy) -> Result<f64> {
    if batch.is_empty() {
        return Err(CramError::Domain("empty evaluation batch".into()));
    }
    let mut total = 0.0;
    for obs in batch {
        total += obs.value_term(baseline.evaluate(&obs.x)?);
    }
    Ok(total / batch.len() as f64)
}

/// Normal interval `Δ̂ ± z_{1−α/2}·sqrt(v̂²/T)`.
pub fn confidence_interval(
    delta_hat: f64,
    v_hat_sq: f64,
    num_batches: usize,
    alpha: f64,
) -> (f64, f64) {
    let half = two_sided_z(alpha) * (v_hat_sq.max(0.0) / num_batches as f64).sqrt();
    (delta_hat - half, delta_hat + half)
}

/// Per-observation quantities shared by the estimators of one pass.
struct PassSummary {
    per_step_deltas: Vec<f64>,
    /// `V̂(ĝ_Tj)` for `j = 1..=T` (index 0 holds `j = 1`).
    kernel_variances: Vec<f64>,
    etas: Vec<f64>,
}

/// Single sweep over all batches computing `Γ̂_tj`, the per-window sample
/// variances of the variance kernels and, optionally, `η̂_j`.
fn summarize_pass(
    sequence: &PolicySequence,
    batches: &[Vec<Observation>],
    value_scale: Option<f64>,
) -> Result<PassSummary> {
    let num_batches = batches.len();
    let policies = sequence.as_slice();
    // gamma_sums[t][j]: Σ_{i∈B_j} ψ_i (π_t − π_{t−1})(x_i), 1-based t and j
    let mut gamma_sums = vec![vec![0.0; num_batches + 1]; num_batches];
    let mut windows = vec![RunningMoments::new(); num_batches + 1];
    let mut etas = Vec::new();
    let baseline = sequence.baseline();

    for (k0, batch) in batches.iter().enumerate() {
        let k = k0 + 1;
        let mut eta_sum = 0.0;
        for obs in batch {
            let psi = obs.ipw_term();
            let value_kernel = match value_scale {
                Some(scale) => {
                    let v = obs.value_term(baseline.evaluate(&obs.x)?);
                    eta_sum += v;
                    v * scale
                }
                None => 0.0,
            };
            if value_scale.is_some() {
                windows[1].push(value_kernel);
            }
            let mut prev = policies[0].evaluate(&obs.x)?;
            let mut weight = 0.0;
            #[allow(clippy::needless_range_loop)]
            for j in 2..=k {
                let t = j - 1;
                let eval = policies[t].evaluate(&obs.x)?;
                let diff = eval - prev;
                prev = eval;
                gamma_sums[t][k] += psi * diff;
                weight += diff / (num_batches - t) as f64;
                windows[j].push(psi * weight + value_kernel);
            }
        }
        if value_scale.is_some() {
            etas.push(eta_sum / batch.len() as f64);
        }
    }

    let per_step_deltas = (1..num_batches)
        .map(|t| {
            let total: f64 = (t + 1..=num_batches)
                .map(|j| gamma_sums[t][j] / batches[j - 1].len() as f64)
                .sum();
            total / (num_batches - t) as f64
        })
        .collect();
    let kernel_variances = (1..=num_batches)
        .map(|j| windows[j].sample_variance())
        .collect();
    Ok(PassSummary {
        per_step_deltas,
        kernel_variances,
        etas,
    })
}

/// Crammed variance estimate `v̂²_T = T Σ_{j=2}^{T} V̂(ĝ_Tj) / |B_j|`, where
/// `V̂(ĝ_Tj)` is the sample variance of `ψ·W_j` over batches `j..T`. A window
/// holding a single observation contributes zero.
pub fn variance_hat(sequence: &PolicySequence, batches: &[Vec<Observation>]) -> Result<f64> {
    check_pass_inputs(sequence, batches)?;
    let summary = summarize_pass(sequence, batches, None)?;
    Ok(combine_variances(&summary.kernel_variances, batches, 2))
}

fn combine_variances(
    kernel_variances: &[f64],
    batches: &[Vec<Observation>],
    first_j: usize,
) -> f64 {
    let num_batches = batches.len();
    let total: f64 = (first_j..=num_batches)
        .map(|j| kernel_variances[j - 1] / batches[j - 1].len() as f64)
        .sum();
    num_batches as f64 * total
}

fn check_pass_inputs(sequence: &PolicySequence, batches: &[Vec<Observation>]) -> Result<()> {
    if batches.len() < 2 {
        return Err(CramError::InvalidBatching(format!(
            "need at least 2 batches, got {}",
            batches.len()
        )));
    }
    if sequence.steps() + 1 < batches.len() {
        return Err(CramError::Domain(format!(
            "policy sequence has {} learned policies, {} batches need at least {}",
            sequence.steps(),
            batches.len(),
            batches.len() - 1
        )));
    }
    if batches.iter().any(|b| b.is_empty()) {
        return Err(CramError::Domain("empty batch".into()));
    }
    Ok(())
}

/// Runs the learner over the batches and returns `π̂_0..π̂_T`, with
/// `π̂_T = π̂_{T−1}` in debiased mode.
fn learn_sequence<L: Learner + ?Sized>(
    learner: &mut L,
    baseline: &Policy,
    batches: &[Vec<Observation>],
    debias_final: bool,
) -> Result<PolicySequence> {
    let num_batches = batches.len();
    learner.reset();
    let mut sequence = PolicySequence::new(baseline.clone());
    for (k0, batch) in batches.iter().enumerate() {
        let step = k0 + 1;
        if step == num_batches && debias_final {
            sequence.push(sequence.last().clone());
            break;
        }
        let attach = |e| CramError::LearnerStep {
            step,
            source: Box::new(e),
        };
        learner.update(batch).map_err(attach)?;
        sequence.push(learner.emit_policy().map_err(attach)?);
    }
    Ok(sequence)
}

/// Cram pass estimating `Δ(π̂_T; π₀)` (or `V(π̂_T)` when
/// `options.estimand` asks for it).
pub fn cram_run<L: Learner + ?Sized>(
    dataset: &Dataset,
    learner: &mut L,
    baseline: &Policy,
    options: &CramOptions,
) -> Result<CramResult> {
    options.validate()?;
    let plan = partition_batches(
        dataset,
        options.num_batches,
        options.seed,
        options.burn_in_min,
        options.burn_out_min,
    )?;
    let batches = plan.materialize(dataset);
    let sequence = learn_sequence(learner, baseline, &batches, options.debias_final)?;
    finish_run(dataset, &batches, sequence, options)
}

/// Cram pass estimating the value `V(π̂_T)` of the final policy:
/// `Ψ̂ = Σ_{j≥2} Γ̂_j(T) + (1/T) Σ_j η̂_j`.
pub fn cram_value_run<L: Learner + ?Sized>(
    dataset: &Dataset,
    learner: &mut L,
    baseline: &Policy,
    options: &CramOptions,
) -> Result<CramResult> {
    let options = CramOptions {
        estimand: Estimand::PolicyValue,
        ..options.clone()
    };
    cram_run(dataset, learner, baseline, &options)
}

/// Estimation on an already learned policy sequence.
pub fn estimate_from_sequence(
    dataset: &Dataset,
    batches: &[Vec<Observation>],
    sequence: PolicySequence,
    options: &CramOptions,
) -> Result<CramResult> {
    options.validate()?;
    finish_run(dataset, batches, sequence, options)
}

fn finish_run(
    dataset: &Dataset,
    batches: &[Vec<Observation>],
    sequence: PolicySequence,
    options: &CramOptions,
) -> Result<CramResult> {
    check_pass_inputs(&sequence, batches)?;
    let num_batches = batches.len();
    let value_scale = match options.estimand {
        Estimand::ValueDifference => None,
        Estimand::PolicyValue => Some(1.0 / num_batches as f64),
    };
    let summary = summarize_pass(&sequence, batches, value_scale)?;
    let difference: f64 = summary.per_step_deltas.iter().sum();
    let (delta_hat, v_hat_sq, baseline_value) = match options.estimand {
        Estimand::ValueDifference => (
            difference,
            combine_variances(&summary.kernel_variances, batches, 2),
            None,
        ),
        Estimand::PolicyValue => {
            let eta_bar = summary.etas.iter().sum::<f64>() / num_batches as f64;
            (
                difference + eta_bar,
                combine_variances(&summary.kernel_variances, batches, 1),
                Some(eta_bar),
            )
        }
    };
    let reference = dataset.covariates();
    let final_policy = sequence
        .get(num_batches)
        .unwrap_or_else(|| sequence.last())
        .clone();
    let q_t_series = sequence.consecutive_distances(&reference)?;
    let treated_fraction = final_policy.treated_fraction(&reference)?;
    Ok(CramResult {
        estimand: options.estimand,
        delta_hat,
        v_hat_sq,
        se: (v_hat_sq / num_batches as f64).sqrt(),
        ci: confidence_interval(delta_hat, v_hat_sq, num_batches, options.alpha),
        alpha: options.alpha,
        num_batches,
        batch_sizes: batches.iter().map(Vec::len).collect(),
        n: dataset.len(),
        seed: options.seed,
        final_policy,
        policy_sequence: sequence,
        per_step_deltas: summary.per_step_deltas,
        q_t_series,
        baseline_value,
        treated_fraction,
    })
}

/// Train/test baseline: fit on a seeded random `train_fraction` of the data
/// and estimate `Δ(π̂; π₀)` by IPW on the held-out rest.
///
/// The training set has `⌊train_fraction·n + 0.5⌋` rows.
pub fn sample_split_run<L: Learner + ?Sized>(
    dataset: &Dataset,
    learner: &mut L,
    baseline: &Policy,
    train_fraction: f64,
    seed: u64,
    alpha: f64,
) -> Result<SplitResult> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CramError::Config(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CramError::Config(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let n = dataset.len();
    let n_train = (train_fraction * n as f64 + 0.5).floor() as usize;
    if n_train == 0 || n_train >= n {
        return Err(CramError::Config(format!(
            "train fraction {train_fraction} leaves an empty split on n={n}"
        )));
    }
    // one shuffle; the first n_train shuffled rows train
    let plan = partition_indices(n, n, seed, 0, 0)?;
    let order: Vec<usize> = (1..=n).flat_map(|j| plan.members(j).to_vec()).collect();
    let train = dataset.select(&order[..n_train]);
    let test = dataset.select(&order[n_train..]);

    learner.reset();
    learner.update(&train).map_err(|e| CramError::LearnerStep {
        step: 1,
        source: Box::new(e),
    })?;
    let policy = learner.emit_policy()?;
    let mut moments = RunningMoments::new();
    for obs in &test {
        moments.push(obs.ipw_term() * (policy.evaluate(&obs.x)? - baseline.evaluate(&obs.x)?));
    }
    let delta_hat = moments.mean();
    let se = moments.std_error();
    let half = two_sided_z(alpha) * se;
    Ok(SplitResult {
        delta_hat,
        se,
        ci: (delta_hat - half, delta_hat + half),
        alpha,
        final_policy: policy,
        train_fraction,
        n_train,
        n_test: test.len(),
        seed,
    })
}
