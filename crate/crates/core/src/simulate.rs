//! Synthetic data-generating processes with known potential outcomes,
//! Monte Carlo oracles for policy values, and the replicate harness that
//! measures bias, standard error and interval coverage.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cram::{cram_run, sample_split_run, CramOptions, DEFAULT_ALPHA, DEFAULT_BATCHES};
use crate::data::{Dataset, Observation, OverlapConfig};
use crate::error::{CramError, Result};
use crate::learner::LearnerSpec;
use crate::policy::Policy;
use crate::stats::RunningMoments;

pub const DEFAULT_ORACLE_SAMPLES: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateLaw {
    StandardNormal,
    /// Uniform on (−1, 1).
    Uniform,
}

/// `coef · Π_k x[indices[k]]`; repeated indices give powers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coef: f64,
    pub indices: Vec<usize>,
}

/// A conditional mean function of the covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum MeanFunction {
    Linear {
        intercept: f64,
        coefs: Vec<f64>,
    },
    Polynomial {
        intercept: f64,
        terms: Vec<Monomial>,
    },
}

impl MeanFunction {
    pub fn constant(value: f64) -> Self {
        MeanFunction::Polynomial {
            intercept: value,
            terms: Vec::new(),
        }
    }

    /// `x[k]`
    pub fn coordinate(k: usize) -> Self {
        MeanFunction::Polynomial {
            intercept: 0.0,
            terms: vec![Monomial {
                coef: 1.0,
                indices: vec![k],
            }],
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            MeanFunction::Linear { intercept, coefs } => {
                intercept + coefs.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
            }
            MeanFunction::Polynomial { intercept, terms } => {
                intercept
                    + terms
                        .iter()
                        .map(|t| t.coef * t.indices.iter().map(|&k| x[k]).product::<f64>())
                        .sum::<f64>()
            }
        }
    }

    fn max_index(&self) -> Option<usize> {
        match self {
            MeanFunction::Linear { coefs, .. } => coefs.len().checked_sub(1),
            MeanFunction::Polynomial { terms, .. } => {
                terms.iter().flat_map(|t| t.indices.iter().copied()).max()
            }
        }
    }
}

/// Data-generating process: `Y = μ₀(X) + D·τ(X) + ε`, `ε ~ N(0, σ²)`,
/// `D ~ Bernoulli(e)` independent of `X`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub p: usize,
    pub covariate_law: CovariateLaw,
    pub mu0: MeanFunction,
    pub tau: MeanFunction,
    pub noise_sd: f64,
    pub propensity: f64,
}

impl DgpSpec {
    /// `τ(x) = x₁`, `μ₀(x) = x₂`, standard-normal covariates, unit noise.
    pub fn linear(p: usize) -> Self {
        assert!(p >= 2, "linear DGP needs at least two covariates");
        Self {
            p,
            covariate_law: CovariateLaw::StandardNormal,
            mu0: MeanFunction::coordinate(1),
            tau: MeanFunction::coordinate(0),
            noise_sd: 1.0,
            propensity: 0.5,
        }
    }

    /// Strongly heterogeneous cubic CATE
    /// `τ(x) = 0.5 + x₁ − 0.5·x₂² + x₁x₂x₃`, `μ₀(x) = x₂ + 0.5·x₁x₃`.
    pub fn polynomial(p: usize) -> Self {
        assert!(p >= 3, "polynomial DGP needs at least three covariates");
        let m = |coef: f64, indices: &[usize]| Monomial {
            coef,
            indices: indices.to_vec(),
        };
        Self {
            p,
            covariate_law: CovariateLaw::StandardNormal,
            mu0: MeanFunction::Polynomial {
                intercept: 0.0,
                terms: vec![m(1.0, &[1]), m(0.5, &[0, 2])],
            },
            tau: MeanFunction::Polynomial {
                intercept: 0.5,
                terms: vec![m(1.0, &[0]), m(-0.5, &[1, 1]), m(1.0, &[0, 1, 2])],
            },
            noise_sd: 1.0,
            propensity: 0.5,
        }
    }

    /// No treatment effect anywhere: `τ ≡ 0`, `μ₀(x) = x₁`.
    pub fn null(p: usize) -> Self {
        assert!(p >= 1, "null DGP needs at least one covariate");
        Self {
            p,
            covariate_law: CovariateLaw::StandardNormal,
            mu0: MeanFunction::coordinate(0),
            tau: MeanFunction::constant(0.0),
            noise_sd: 1.0,
            propensity: 0.5,
        }
    }

    pub fn validate(&self, overlap: OverlapConfig) -> Result<()> {
        if !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            return Err(CramError::Config(format!(
                "noise standard deviation must be positive, got {}",
                self.noise_sd
            )));
        }
        overlap.check(self.propensity)?;
        for f in [&self.mu0, &self.tau] {
            if let Some(k) = f.max_index() {
                if k >= self.p {
                    return Err(CramError::Shape {
                        expected: self.p,
                        got: k + 1,
                    });
                }
            }
        }
        Ok(())
    }

    fn draw_covariates<R: Rng>(&self, rng: &mut R, out: &mut Vec<f64>) {
        out.clear();
        match self.covariate_law {
            CovariateLaw::StandardNormal => {
                out.extend((0..self.p).map(|_| rng.sample::<f64, _>(StandardNormal)))
            }
            CovariateLaw::Uniform => {
                let u = Uniform::new(-1.0, 1.0).expect("valid bounds");
                out.extend((0..self.p).map(|_| u.sample(rng)))
            }
        }
    }

    /// `V(π) = E[μ₀(X) + τ(X)·π(X)]` integrand at `x`.
    fn value_integrand(&self, x: &[f64], pi: f64) -> f64 {
        self.mu0.eval(x) + self.tau.eval(x) * pi
    }
}

/// Draws `n` observations from `dgp`; deterministic given `seed`.
pub fn generate_dataset(dgp: &DgpSpec, n: usize, seed: u64) -> Result<Dataset> {
    let overlap = OverlapConfig::default();
    dgp.validate(overlap)?;
    if n == 0 {
        return Err(CramError::Config("sample size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let treat = Bernoulli::new(dgp.propensity)
        .map_err(|e| CramError::Config(format!("invalid propensity: {e}")))?;
    let mut observations = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(dgp.p);
    for _ in 0..n {
        dgp.draw_covariates(&mut rng, &mut x);
        let d = treat.sample(&mut rng);
        let noise: f64 = rng.sample(StandardNormal);
        let mut y = dgp.mu0.eval(&x) + dgp.noise_sd * noise;
        if d {
            y += dgp.tau.eval(&x);
        }
        observations.push(Observation::new(x.clone(), d, y, dgp.propensity));
    }
    Dataset::new(observations, overlap)
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// A fixed sample of covariate draws with `μ₀` and `τ` precomputed, used to
/// integrate policy values against the true covariate law.
#[derive(Debug, Clone)]
pub struct OracleSample {
    covariates: Vec<Vec<f64>>,
    mu0: Vec<f64>,
    tau: Vec<f64>,
}

impl OracleSample {
    pub fn draw(dgp: &DgpSpec, n_oracle: usize, seed: u64) -> Result<Self> {
        if n_oracle == 0 {
            return Err(CramError::Config(
                "oracle sample size must be at least 1".into(),
            ));
        }
        dgp.validate(OverlapConfig::default())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut covariates = Vec::with_capacity(n_oracle);
        let mut x = Vec::with_capacity(dgp.p);
        for _ in 0..n_oracle {
            dgp.draw_covariates(&mut rng, &mut x);
            covariates.push(x.clone());
        }
        let mu0 = covariates.iter().map(|x| dgp.mu0.eval(x)).collect();
        let tau = covariates.iter().map(|x| dgp.tau.eval(x)).collect();
        Ok(Self {
            covariates,
            mu0,
            tau,
        })
    }

    pub fn len(&self) -> usize {
        self.covariates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.covariates.is_empty()
    }

    pub fn covariates(&self) -> &[Vec<f64>] {
        &self.covariates
    }

    /// `Δ(π; π₀) = E[τ(X)(π(X) − π₀(X))]`.
    pub fn delta(&self, pi: &Policy, pi0: &Policy) -> Result<OracleEstimate> {
        let mut m = RunningMoments::new();
        for (x, tau) in self.covariates.iter().zip(&self.tau) {
            m.push(tau * (pi.evaluate(x)? - pi0.evaluate(x)?));
        }
        Ok(OracleEstimate {
            value: m.mean(),
            std_error: m.std_error(),
        })
    }

    /// `V(π) = E[μ₀(X) + τ(X)π(X)]`.
    pub fn value(&self, pi: &Policy) -> Result<OracleEstimate> {
        let mut m = RunningMoments::new();
        for ((x, mu0), tau) in self.covariates.iter().zip(&self.mu0).zip(&self.tau) {
            m.push(mu0 + tau * pi.evaluate(x)?);
        }
        Ok(OracleEstimate {
            value: m.mean(),
            std_error: m.std_error(),
        })
    }
}

/// True value difference `Δ(π; π₀)` by Monte Carlo over `n_oracle` fresh
/// covariate draws.
pub fn oracle_delta(
    dgp: &DgpSpec,
    pi: &Policy,
    pi0: &Policy,
    n_oracle: usize,
    seed: u64,
) -> Result<f64> {
    Ok(oracle_delta_estimate(dgp, pi, pi0, n_oracle, seed)?.value)
}

/// Like [`oracle_delta`], also returning the Monte Carlo standard error.
/// Streams the draws instead of materializing them.
pub fn oracle_delta_estimate(
    dgp: &DgpSpec,
    pi: &Policy,
    pi0: &Policy,
    n_oracle: usize,
    seed: u64,
) -> Result<OracleEstimate> {
    stream_oracle(dgp, n_oracle, seed, |x| {
        Ok(dgp.tau.eval(x) * (pi.evaluate(x)? - pi0.evaluate(x)?))
    })
}

/// True policy value `V(π)` by Monte Carlo.
pub fn oracle_value(
    dgp: &DgpSpec,
    pi: &Policy,
    n_oracle: usize,
    seed: u64,
) -> Result<OracleEstimate> {
    stream_oracle(dgp, n_oracle, seed, |x| {
        Ok(dgp.value_integrand(x, pi.evaluate(x)?))
    })
}

fn stream_oracle<F>(
    dgp: &DgpSpec,
    n_oracle: usize,
    seed: u64,
    mut integrand: F,
) -> Result<OracleEstimate>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if n_oracle == 0 {
        return Err(CramError::Config(
            "oracle sample size must be at least 1".into(),
        ));
    }
    dgp.validate(OverlapConfig::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(dgp.p);
    let mut m = RunningMoments::new();
    for _ in 0..n_oracle {
        dgp.draw_covariates(&mut rng, &mut x);
        m.push(integrand(&x)?);
    }
    Ok(OracleEstimate {
        value: m.mean(),
        std_error: m.std_error(),
    })
}

/// Evaluation procedure compared by the Monte Carlo harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Cram,
    CramDebiased,
    #[serde(rename = "split_80_20")]
    Split8020,
    #[serde(rename = "split_60_40")]
    Split6040,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Cram,
        Method::CramDebiased,
        Method::Split8020,
        Method::Split6040,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Cram => "cram",
            Method::CramDebiased => "cram_debiased",
            Method::Split8020 => "split_80_20",
            Method::Split6040 => "split_60_40",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| CramError::Config(format!("unknown method `{name}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub dgp: DgpSpec,
    pub n: usize,
    pub num_batches: usize,
    pub learner: LearnerSpec,
    pub baseline: Policy,
    pub replicates: usize,
    pub base_seed: u64,
    pub methods: Vec<Method>,
    pub alpha: f64,
    /// Size of the shared covariate sample used for per-replicate truth.
    pub n_oracle: usize,
    /// Worker threads; `None` uses rayon's global pool.
    pub threads: Option<usize>,
}

impl McConfig {
    pub fn new(dgp: DgpSpec, n: usize, learner: LearnerSpec) -> Self {
        Self {
            dgp,
            n,
            num_batches: DEFAULT_BATCHES,
            learner,
            baseline: Policy::treat_none(),
            replicates: 1000,
            base_seed: 0,
            methods: vec![Method::Cram, Method::Split8020],
            alpha: DEFAULT_ALPHA,
            n_oracle: DEFAULT_ORACLE_SAMPLES,
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(CramError::Config("replicates must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(CramError::Config("at least one method is required".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CramError::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.n_oracle == 0 {
            return Err(CramError::Config(
                "oracle sample size must be at least 1".into(),
            ));
        }
        self.dgp.validate(OverlapConfig::default())
    }
}

/// Outcome of one method on one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub method: Method,
    pub estimate: f64,
    /// `Δ(π̂; π₀)` of this replicate's own learned policy.
    pub truth: f64,
    pub est_se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    /// Oracle `V(π̂)` of the learned policy.
    pub value: f64,
}

impl ReplicateRecord {
    pub fn error(&self) -> f64 {
        self.estimate - self.truth
    }

    pub fn covered(&self) -> bool {
        self.ci_lower <= self.truth && self.truth <= self.ci_upper
    }
}

/// Aggregate over replicates for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    /// Mean oracle value of the learned policy.
    pub value: f64,
    /// Mean of `Δ̂ − Δ(π̂; π₀)`.
    pub bias: f64,
    pub abs_bias: f64,
    /// Standard error of `bias` across replicates.
    pub bias_se: f64,
    /// Root mean square of `Δ̂ − Δ(π̂; π₀)`.
    pub mc_se: f64,
    pub mean_est_se: f64,
    pub coverage: f64,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub rows: Vec<MethodSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub records: Vec<ReplicateRecord>,
}

impl McReport {
    pub fn row(&self, method: Method) -> Option<&MethodSummary> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// `(value_a − value_b) / |value_b|` on mean oracle policy values.
    pub fn relative_value_gain(&self, a: Method, b: Method) -> Option<f64> {
        let (ra, rb) = (self.row(a)?, self.row(b)?);
        Some((ra.value - rb.value) / rb.value.abs())
    }
}

fn derive_seed(base: u64, replicate: usize, stream: u64) -> u64 {
    // splitmix64 finalizer over (base + replicate, stream)
    let mut z = base
        .wrapping_add(replicate as u64)
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn run_replicate(
    config: &McConfig,
    oracle: &OracleSample,
    r: usize,
) -> Result<Vec<ReplicateRecord>> {
    let data_seed = config.base_seed.wrapping_add(r as u64);
    let split_seed = derive_seed(config.base_seed, r, 2);
    let wrap = |method: Method| {
        move |e: CramError| CramError::Replicate {
            replicate: r,
            method: method.name().to_string(),
            source: Box::new(e),
        }
    };
    let dataset =
        generate_dataset(&config.dgp, config.n, data_seed).map_err(wrap(config.methods[0]))?;
    let baseline = &config.baseline;
    let mut records = Vec::with_capacity(config.methods.len());
    for &method in &config.methods {
        let run = || -> Result<ReplicateRecord> {
            let mut learner = config.learner.build(dataset.p(), baseline)?;
            let (estimate, est_se, ci, policy) = match method {
                Method::Cram | Method::CramDebiased => {
                    let opts = CramOptions {
                        num_batches: config.num_batches,
                        seed: derive_seed(config.base_seed, r, 1),
                        alpha: config.alpha,
                        debias_final: method == Method::CramDebiased,
                        ..CramOptions::default()
                    };
                    let res = cram_run(&dataset, &mut learner, baseline, &opts)?;
                    (res.delta_hat, res.se, res.ci, res.final_policy)
                }
                Method::Split8020 | Method::Split6040 => {
                    let fraction = if method == Method::Split8020 {
                        0.8
                    } else {
                        0.6
                    };
                    let res = sample_split_run(
                        &dataset,
                        &mut learner,
                        baseline,
                        fraction,
                        split_seed,
                        config.alpha,
                    )?;
                    (res.delta_hat, res.se, res.ci, res.final_policy)
                }
            };
            Ok(ReplicateRecord {
                replicate: r,
                method,
                estimate,
                truth: oracle.delta(&policy, baseline)?.value,
                est_se,
                ci_lower: ci.0,
                ci_upper: ci.1,
                value: oracle.value(&policy)?.value,
            })
        };
        records.push(run().map_err(wrap(method))?);
    }
    Ok(records)
}

/// Runs every configured method on `replicates` independent datasets and
/// aggregates bias, Monte Carlo standard error and coverage per method.
///
/// Replicate `r` uses dataset seed `base_seed + r`; results do not depend on
/// thread scheduling.
pub fn run_monte_carlo(config: &McConfig) -> Result<McReport> {
    config.validate()?;
    let oracle = OracleSample::draw(
        &config.dgp,
        config.n_oracle,
        derive_seed(config.base_seed, 0, 3),
    )?;
    let work = || -> Result<Vec<Vec<ReplicateRecord>>> {
        (0..config.replicates)
            .into_par_iter()
            .map(|r| run_replicate(config, &oracle, r))
            .collect()
    };
    let per_replicate = match config.threads {
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .map_err(|e| CramError::Config(format!("thread pool: {e}")))?
            .install(work)?,
        None => work()?,
    };
    let records: Vec<ReplicateRecord> = per_replicate.into_iter().flatten().collect();
    Ok(McReport {
        rows: summarize(&config.methods, &records),
        records,
    })
}

/// Aggregates records per method, in replicate order.
pub fn summarize(methods: &[Method], records: &[ReplicateRecord]) -> Vec<MethodSummary> {
    methods
        .iter()
        .map(|&method| {
            let mine: Vec<&ReplicateRecord> =
                records.iter().filter(|r| r.method == method).collect();
            let count = mine.len().max(1) as f64;
            let mut errors = RunningMoments::new();
            let (mut value, mut sq, mut se, mut covered) = (0.0, 0.0, 0.0, 0usize);
            for rec in &mine {
                let err = rec.error();
                errors.push(err);
                sq += err * err;
                value += rec.value;
                se += rec.est_se;
                covered += usize::from(rec.covered());
            }
            MethodSummary {
                method,
                value: value / count,
                bias: errors.mean(),
                abs_bias: errors.mean().abs(),
                bias_se: errors.std_error(),
                mc_se: (sq / count).sqrt(),
                mean_est_se: se / count,
                coverage: covered as f64 / count,
                replicates: mine.len(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ipw_kernel;
    use crate::policy::CateModel;

    #[test]
    fn noiseless_constant_outcome() {
        let dgp = DgpSpec {
            p: 2,
            covariate_law: CovariateLaw::Uniform,
            mu0: MeanFunction::constant(5.0),
            tau: MeanFunction::constant(0.0),
            noise_sd: 1e-300,
            propensity: 0.5,
        };
        let ds = generate_dataset(&dgp, 200, 1).unwrap();
        assert!(ds.observations().iter().all(|o| o.y == 5.0));
        assert!(ds
            .observations()
            .iter()
            .all(|o| o.x.iter().all(|v| v.abs() < 1.0)));
    }

    #[test]
    fn treated_fraction_concentrates() {
        let ds = generate_dataset(&DgpSpec::linear(3), 100_000, 7).unwrap();
        let frac = ds.treated_count() as f64 / 1e5;
        assert!((frac - 0.5).abs() < 0.01, "{frac}");
    }

    #[test]
    fn ipw_mean_recovers_ate() {
        let ds = generate_dataset(&DgpSpec::linear(3), 100_000, 8).unwrap();
        let mut m = RunningMoments::new();
        for o in ds.observations() {
            m.push(ipw_kernel(o, OverlapConfig::default()).unwrap());
        }
        // E[τ(X)] = E[x₁] = 0
        assert!(
            m.mean().abs() <= 3.0 * m.std_error(),
            "{} ± {}",
            m.mean(),
            m.std_error()
        );
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate_dataset(&DgpSpec::polynomial(4), 50, 3).unwrap();
        let b = generate_dataset(&DgpSpec::polynomial(4), 50, 3).unwrap();
        assert_eq!(a.observations(), b.observations());
    }

    #[test]
    fn oracle_identities() {
        let dgp = DgpSpec::linear(2);
        let pi = Policy::constant(0.7).unwrap();
        assert_eq!(oracle_delta(&dgp, &pi, &pi, 1000, 3).unwrap(), 0.0);
        let constant = DgpSpec {
            tau: MeanFunction::constant(2.0),
            ..DgpSpec::linear(2)
        };
        let d = oracle_delta(
            &constant,
            &Policy::treat_all(),
            &Policy::treat_none(),
            1000,
            1,
        )
        .unwrap();
        assert!((d - 2.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_value_of_treat_all() {
        // V(treat all) = E[x₂ + x₁] = 0
        let est = oracle_value(&DgpSpec::linear(3), &Policy::treat_all(), 200_000, 5).unwrap();
        assert!(est.value.abs() <= 3.0 * est.std_error);
    }

    #[test]
    fn sample_and_streaming_agree() {
        let dgp = DgpSpec::polynomial(3);
        let pi = Policy::cate_threshold(
            CateModel::Linear {
                intercept: 0.0,
                coefs: vec![1.0, 0.0, 0.0],
            },
            0.0,
        );
        let sample = OracleSample::draw(&dgp, 5000, 17).unwrap();
        let streamed = oracle_delta_estimate(&dgp, &pi, &Policy::treat_none(), 5000, 17).unwrap();
        assert!(
            (sample.delta(&pi, &Policy::treat_none()).unwrap().value - streamed.value).abs()
                < 1e-12
        );
    }

    #[test]
    fn validation() {
        let mut dgp = DgpSpec::linear(2);
        dgp.noise_sd = 0.0;
        assert!(generate_dataset(&dgp, 10, 0).is_err());
        let mut dgp = DgpSpec::linear(2);
        dgp.propensity = 1.0;
        assert!(generate_dataset(&dgp, 10, 0).is_err());
        let mut dgp = DgpSpec::linear(2);
        dgp.tau = MeanFunction::coordinate(4);
        assert!(generate_dataset(&dgp, 10, 0).is_err());
        assert!(generate_dataset(&DgpSpec::linear(2), 0, 0).is_err());
    }

    #[test]
    fn fourth_moment_is_stable() {
        let m4 = |seed| {
            let ds = generate_dataset(&DgpSpec::polynomial(3), 20_000, seed).unwrap();
            ds.observations().iter().map(|o| o.y.powi(4)).sum::<f64>() / 20_000.0
        };
        let (a, b) = (m4(1), m4(2));
        assert!(a.is_finite() && b.is_finite());
        assert!((a - b).abs() / a.max(b) < 0.5, "{a} vs {b}");
    }

    #[test]
    fn constant_learner_monte_carlo_is_degenerate() {
        let mut config = McConfig::new(
            DgpSpec::linear(3),
            100,
            LearnerSpec::Constant {
                policy: Policy::treat_none(),
            },
        );
        config.replicates = 4;
        config.num_batches = 5;
        config.n_oracle = 1000;
        config.methods = Method::ALL.to_vec();
        config.threads = Some(2);
        let report = run_monte_carlo(&config).unwrap();
        assert_eq!(report.rows.len(), 4);
        for row in &report.rows {
            assert_eq!(row.bias, 0.0);
            assert_eq!(row.mc_se, 0.0);
            assert_eq!(row.coverage, 1.0);
            assert_eq!(row.replicates, 4);
        }
    }

    #[test]
    fn monte_carlo_deterministic() {
        let mut config = McConfig::new(DgpSpec::linear(3), 120, LearnerSpec::s_learner(0.1));
        config.replicates = 6;
        config.num_batches = 6;
        config.n_oracle = 2000;
        config.threads = Some(3);
        let a = run_monte_carlo(&config).unwrap();
        config.threads = Some(1);
        let b = run_monte_carlo(&config).unwrap();
        assert_eq!(a, b);
        assert!(a.rows.iter().all(|r| (0.0..=1.0).contains(&r.coverage)));
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()).unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.name()));
        }
        assert!(Method::parse("bootstrap").is_err());
    }
}
