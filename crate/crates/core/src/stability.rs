//! Stabilizing wrapper for arbitrary learners and the policy-stability
//! diagnostic `Q̂_t = E_X |π̂_t − π̂_{t−1}|`.
//!
//! The wrapper blends each candidate policy with the previous output using
//! weight `p_t = min(C·t^{−1−δ}, 1)`, so consecutive policies can never be
//! further apart than `p_t` in L1 on any covariate sample.

use serde::{Deserialize, Serialize};

use crate::data::Observation;
use crate::error::{CramError, Result};
use crate::learner::Learner;
use crate::policy::{l1_policy_distance, mix_policies, Policy, PolicySequence};

pub const DEFAULT_DELTA: f64 = 0.05;

/// Relative slack applied to the diagnostic bound so that
/// `t^{1+δ}·p_t` rounding to just above `C` is not flagged.
const FLAG_RELATIVE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityParams {
    c: f64,
    delta: f64,
}

impl StabilityParams {
    pub fn new(c: f64, delta: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) || !(delta > 0.0 && delta.is_finite()) {
            return Err(CramError::Config(format!(
                "stability constants must be positive and finite, got C={c}, delta={delta}"
            )));
        }
        Ok(Self { c, delta })
    }

    /// Parameters that leave the inner learner untouched for the first
    /// `⌈0.8·T⌉` steps.
    pub fn for_batches(num_batches: usize) -> Self {
        let delta = DEFAULT_DELTA;
        let free_steps = (0.8 * num_batches as f64).ceil().max(1.0);
        Self {
            c: free_steps.powf(1.0 + delta),
            delta,
        }
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// `p_t = min(C·t^{−1−δ}, 1)`.
pub fn acceptance_prob(t: usize, params: StabilityParams) -> f64 {
    assert!(t >= 1, "acceptance probability is defined for t >= 1");
    (params.c / (t as f64).powf(1.0 + params.delta)).min(1.0)
}

/// Learner whose step-`t` output is `p_t·π̃_t + (1 − p_t)·π̂_{t−1}`, with
/// `π̃_t` the inner learner's candidate and `π̂_0` the baseline.
pub struct StableLearner<L> {
    inner: L,
    params: StabilityParams,
    baseline: Policy,
    current: Policy,
    step: usize,
}

impl<L: Learner> StableLearner<L> {
    pub fn new(inner: L, params: StabilityParams, baseline: Policy) -> Self {
        Self {
            inner,
            params,
            current: baseline.clone(),
            baseline,
            step: 0,
        }
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn params(&self) -> StabilityParams {
        self.params
    }
}

/// Wraps `inner` so that its policy sequence satisfies the stabilization
/// rate `Q_t ≤ min(C·t^{−1−δ}, 1)`.
pub fn stable_wrap<L: Learner>(
    inner: L,
    params: StabilityParams,
    baseline: Policy,
) -> StableLearner<L> {
    StableLearner::new(inner, params, baseline)
}

impl<L: Learner> Learner for StableLearner<L> {
    fn update(&mut self, batch: &[Observation]) -> Result<()> {
        self.inner.update(batch)?;
        self.step += 1;
        let candidate = self.inner.emit_policy()?;
        let weight = acceptance_prob(self.step, self.params);
        self.current = mix_policies(weight, candidate, self.current.clone())?;
        Ok(())
    }

    fn emit_policy(&self) -> Result<Policy> {
        Ok(self.current.clone())
    }

    fn reset(&mut self) {
        self.inner.reset();
        self.step = 0;
        self.current = self.baseline.clone();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityDiagnostics {
    /// `Q̂_t` for `t = 1..=steps`.
    pub q_t: Vec<f64>,
    /// `t^{1+δ}·Q̂_t`.
    pub t_power_q: Vec<f64>,
    /// Whether some `t ≥ t_min` has `t^{1+δ}·Q̂_t > K`.
    pub flag: bool,
    pub delta: f64,
    pub t_min: usize,
    pub bound: f64,
}

/// Measures consecutive policy changes on `reference` and flags sequences
/// whose scaled change exceeds `bound` from step `t_min` on.
pub fn diagnose_stability<X: AsRef<[f64]>>(
    sequence: &PolicySequence,
    reference: &[X],
    delta: f64,
    t_min: usize,
    bound: f64,
) -> Result<StabilityDiagnostics> {
    if sequence.steps() < 1 {
        return Err(CramError::Domain(
            "stability diagnostics need at least one learned policy".into(),
        ));
    }
    if reference.is_empty() {
        return Err(CramError::Domain("empty reference sample".into()));
    }
    let policies = sequence.as_slice();
    let mut q_t = Vec::with_capacity(sequence.steps());
    let mut t_power_q = Vec::with_capacity(sequence.steps());
    let mut flag = false;
    for t in 1..policies.len() {
        let q = l1_policy_distance(&policies[t], &policies[t - 1], reference)?;
        let scaled = (t as f64).powf(1.0 + delta) * q;
        if t >= t_min && scaled > bound * (1.0 + FLAG_RELATIVE_SLACK) {
            flag = true;
        }
        q_t.push(q);
        t_power_q.push(scaled);
    }
    Ok(StabilityDiagnostics {
        q_t,
        t_power_q,
        flag,
        delta,
        t_min,
        bound,
    })
}
