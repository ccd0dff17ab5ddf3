//! The learner contract and the built-in ridge S-/M-learners.
//!
//! A learner consumes batches cumulatively and can emit a policy at any
//! point. After updates on batches `1..=t` the emitted policy must be the
//! one a fresh fit on their concatenation would give, so online learners
//! (recursive least squares, SGD) plug in naturally.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Observation, OverlapConfig};
use crate::error::{CramError, Result};
use crate::policy::{CateModel, Policy};
use crate::stability::{StabilityParams, StableLearner};

pub const DEFAULT_LAMBDA: f64 = 0.1;

/// Incremental policy learning algorithm.
pub trait Learner: Send {
    /// Absorbs one more batch into the learner's state.
    fn update(&mut self, batch: &[Observation]) -> Result<()>;

    /// Policy learned from every batch seen so far.
    fn emit_policy(&self) -> Result<Policy>;

    /// Forgets all data.
    fn reset(&mut self);
}

impl<L: Learner + ?Sized> Learner for Box<L> {
    fn update(&mut self, batch: &[Observation]) -> Result<()> {
        (**self).update(batch)
    }

    fn emit_policy(&self) -> Result<Policy> {
        (**self).emit_policy()
    }

    fn reset(&mut self) {
        (**self).reset()
    }
}

/// Design of the ridge regression behind a learner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMap {
    /// Outcome on `[1, x, d, d·x]`; CATE is the treatment part.
    SLearner,
    /// IPW pseudo-outcome on `[1, x]`; CATE is the fitted value.
    MLearner,
}

impl FeatureMap {
    pub fn dim(self, p: usize) -> usize {
        match self {
            FeatureMap::SLearner => 2 * p + 2,
            FeatureMap::MLearner => p + 1,
        }
    }

    fn fill(self, obs: &Observation, out: &mut [f64]) {
        let p = obs.x.len();
        out[0] = 1.0;
        out[1..=p].copy_from_slice(&obs.x);
        if self == FeatureMap::SLearner {
            let d = if obs.d { 1.0 } else { 0.0 };
            out[p + 1] = d;
            for k in 0..p {
                out[p + 2 + k] = d * obs.x[k];
            }
        }
    }

    fn response(self, obs: &Observation) -> f64 {
        match self {
            FeatureMap::SLearner => obs.y,
            FeatureMap::MLearner => obs.ipw_term(),
        }
    }
}

/// Sufficient statistics of a ridge regression: `G = Σ φφᵀ`, `m = Σ φ·y`.
#[derive(Debug, Clone)]
pub struct RidgeState {
    features: FeatureMap,
    p: usize,
    gram: DMatrix<f64>,
    moment: DVector<f64>,
    lambda: f64,
    penalize_intercept: bool,
    overlap: OverlapConfig,
    n_seen: usize,
}

impl RidgeState {
    pub fn new(features: FeatureMap, p: usize, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(CramError::Config(format!(
                "ridge penalty must be finite and >= 0, got {lambda}"
            )));
        }
        let q = features.dim(p);
        Ok(Self {
            features,
            p,
            gram: DMatrix::zeros(q, q),
            moment: DVector::zeros(q),
            lambda,
            penalize_intercept: true,
            overlap: OverlapConfig::default(),
            n_seen: 0,
        })
    }

    pub fn with_intercept_penalty(mut self, penalize: bool) -> Self {
        self.penalize_intercept = penalize;
        self
    }

    pub fn with_overlap(mut self, overlap: OverlapConfig) -> Self {
        self.overlap = overlap;
        self
    }

    pub fn features(&self) -> FeatureMap {
        self.features
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn n_seen(&self) -> usize {
        self.n_seen
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn moment(&self) -> &DVector<f64> {
        &self.moment
    }

    /// Adds a batch to the accumulated sums.
    pub fn update(&mut self, batch: &[Observation]) -> Result<()> {
        if batch.is_empty() {
            return Err(CramError::Domain("cannot fit on an empty batch".into()));
        }
        let q = self.gram.nrows();
        let mut phi = vec![0.0; q];
        for obs in batch {
            if obs.x.len() != self.p {
                return Err(CramError::Shape {
                    expected: self.p,
                    got: obs.x.len(),
                });
            }
            if self.features == FeatureMap::MLearner {
                self.overlap.check(obs.e)?;
            }
            self.features.fill(obs, &mut phi);
            let r = self.features.response(obs);
            for a in 0..q {
                let fa = phi[a];
                if fa == 0.0 {
                    continue;
                }
                self.moment[a] += fa * r;
                for (b, fb) in phi.iter().enumerate().skip(a) {
                    self.gram[(a, b)] += fa * fb;
                }
            }
        }
        for a in 0..q {
            for b in 0..a {
                self.gram[(a, b)] = self.gram[(b, a)];
            }
        }
        self.n_seen += batch.len();
        Ok(())
    }

    pub fn reset(&mut self) {
        self.gram.fill(0.0);
        self.moment.fill(0.0);
        self.n_seen = 0;
    }

    /// Solves `(G + λI) β = m` by Cholesky factorization.
    pub fn coefficients(&self) -> Result<DVector<f64>> {
        if self.n_seen == 0 {
            return Err(CramError::NotFitted);
        }
        let mut system = self.gram.clone();
        let start = usize::from(!self.penalize_intercept);
        for k in start..system.nrows() {
            system[(k, k)] += self.lambda;
        }
        let singular = || CramError::Numerical {
            message: "regularized normal equations are singular".into(),
            condition: condition_estimate(&system),
        };
        let chol = system.clone().cholesky().ok_or_else(singular)?;
        // squared pivot ratio of the factor bounds the reciprocal condition
        let l = chol.l_dirty();
        let (lo, hi) = (0..l.nrows()).fold((f64::INFINITY, 0.0f64), |(lo, hi), k| {
            let v = l[(k, k)].abs();
            (lo.min(v), hi.max(v))
        });
        if (lo / hi).powi(2) < f64::EPSILON * l.nrows() as f64 {
            return Err(singular());
        }
        Ok(chol.solve(&self.moment))
    }

    pub fn cate_model(&self) -> Result<CateModel> {
        let beta = self.coefficients()?;
        let p = self.p;
        Ok(match self.features {
            FeatureMap::SLearner => CateModel::Linear {
                intercept: beta[p + 1],
                coefs: beta.as_slice()[p + 2..].to_vec(),
            },
            FeatureMap::MLearner => CateModel::Linear {
                intercept: beta[0],
                coefs: beta.as_slice()[1..].to_vec(),
            },
        })
    }
}

fn condition_estimate(system: &DMatrix<f64>) -> f64 {
    let eig = system.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Adds a batch to a ridge S-learner state.
pub fn slearner_ridge_fit(mut state: RidgeState, batch: &[Observation]) -> Result<RidgeState> {
    debug_assert_eq!(state.features, FeatureMap::SLearner);
    state.update(batch)?;
    Ok(state)
}

/// Adds a batch to a ridge M-learner state.
pub fn mlearner_ridge_fit(mut state: RidgeState, batch: &[Observation]) -> Result<RidgeState> {
    debug_assert_eq!(state.features, FeatureMap::MLearner);
    state.update(batch)?;
    Ok(state)
}

/// Treat iff the current CATE estimate is strictly positive.
pub fn emit_threshold_policy(state: &RidgeState) -> Result<Policy> {
    Ok(Policy::cate_threshold(state.cate_model()?, 0.0))
}

/// Ridge regression learner emitting CATE-sign policies.
#[derive(Debug, Clone)]
pub struct RidgeLearner {
    state: RidgeState,
}

impl RidgeLearner {
    pub fn new(state: RidgeState) -> Self {
        Self { state }
    }

    pub fn s_learner(p: usize, lambda: f64) -> Result<Self> {
        Ok(Self::new(RidgeState::new(FeatureMap::SLearner, p, lambda)?))
    }

    pub fn m_learner(p: usize, lambda: f64) -> Result<Self> {
        Ok(Self::new(RidgeState::new(FeatureMap::MLearner, p, lambda)?))
    }

    pub fn state(&self) -> &RidgeState {
        &self.state
    }
}

impl Learner for RidgeLearner {
    fn update(&mut self, batch: &[Observation]) -> Result<()> {
        self.state.update(batch)
    }

    fn emit_policy(&self) -> Result<Policy> {
        emit_threshold_policy(&self.state)
    }

    fn reset(&mut self) {
        self.state.reset();
    }
}

/// Ignores the data and always returns the same policy.
#[derive(Debug, Clone)]
pub struct ConstantLearner {
    policy: Policy,
}

pub fn constant_learner(policy: Policy) -> ConstantLearner {
    ConstantLearner { policy }
}

impl Learner for ConstantLearner {
    fn update(&mut self, _batch: &[Observation]) -> Result<()> {
        Ok(())
    }

    fn emit_policy(&self) -> Result<Policy> {
        Ok(self.policy.clone())
    }

    fn reset(&mut self) {}
}

/// Flips between treat-all and treat-none on every update; a maximally
/// unstable fixture for the stability diagnostics.
#[derive(Debug, Clone, Default)]
pub struct AlternatingLearner {
    updates: usize,
}

impl Learner for AlternatingLearner {
    fn update(&mut self, _batch: &[Observation]) -> Result<()> {
        self.updates += 1;
        Ok(())
    }

    fn emit_policy(&self) -> Result<Policy> {
        Ok(if self.updates % 2 == 1 {
            Policy::treat_all()
        } else {
            Policy::treat_none()
        })
    }

    fn reset(&mut self) {
        self.updates = 0;
    }
}

/// Serializable description of a learner, used to build a fresh instance
/// per run (for example once per Monte Carlo replicate).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LearnerSpec {
    SlearnerRidge {
        lambda: f64,
        #[serde(default = "default_true")]
        penalize_intercept: bool,
    },
    MlearnerRidge {
        lambda: f64,
        #[serde(default = "default_true")]
        penalize_intercept: bool,
    },
    Constant {
        policy: Policy,
    },
    Alternating,
    Stable {
        inner: Box<LearnerSpec>,
        params: StabilityParams,
    },
}

fn default_true() -> bool {
    true
}

impl LearnerSpec {
    pub fn s_learner(lambda: f64) -> Self {
        LearnerSpec::SlearnerRidge {
            lambda,
            penalize_intercept: true,
        }
    }

    pub fn m_learner(lambda: f64) -> Self {
        LearnerSpec::MlearnerRidge {
            lambda,
            penalize_intercept: true,
        }
    }

    /// Instantiates the learner for covariate dimension `p`. `baseline` seeds
    /// the stabilizing wrapper.
    pub fn build(&self, p: usize, baseline: &Policy) -> Result<Box<dyn Learner>> {
        Ok(match self {
            LearnerSpec::SlearnerRidge {
                lambda,
                penalize_intercept,
            } => Box::new(RidgeLearner::new(
                RidgeState::new(FeatureMap::SLearner, p, *lambda)?
                    .with_intercept_penalty(*penalize_intercept),
            )),
            LearnerSpec::MlearnerRidge {
                lambda,
                penalize_intercept,
            } => Box::new(RidgeLearner::new(
                RidgeState::new(FeatureMap::MLearner, p, *lambda)?
                    .with_intercept_penalty(*penalize_intercept),
            )),
            LearnerSpec::Constant { policy } => Box::new(constant_learner(policy.clone())),
            LearnerSpec::Alternating => Box::new(AlternatingLearner::default()),
            LearnerSpec::Stable { inner, params } => Box::new(StableLearner::new(
                inner.build(p, baseline)?,
                *params,
                baseline.clone(),
            )),
        })
    }
}
