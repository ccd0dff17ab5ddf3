//! Simultaneous policy learning and evaluation by cramming.
//!
//! The data are split into `T` random batches. A learner is trained on a
//! growing prefix of batches, and every change in the learned policy is
//! evaluated by inverse probability weighting on the batches it has not yet
//! seen. Summing these changes estimates how much better the final learned
//! policy is than a baseline, with a martingale-based variance estimate and
//! normal confidence interval.
//!
//! ```no_run
//! use cramkit::{cram_run, generate_dataset, CramOptions, DgpSpec, Policy, RidgeLearner};
//!
//! let data = generate_dataset(&DgpSpec::linear(5), 500, 1)?;
//! let mut learner = RidgeLearner::s_learner(5, 0.1)?;
//! let result = cram_run(&data, &mut learner, &Policy::treat_none(), &CramOptions::default())?;
//! println!("{} ({}, {})", result.delta_hat, result.ci.0, result.ci.1);
//! # Ok::<(), cramkit::CramError>(())
//! ```

pub mod cram;
pub mod data;
pub mod error;
pub mod learner;
pub mod policy;
pub mod simulate;
pub mod stability;
pub mod stats;

pub use cram::{
    confidence_interval, cram_run, cram_value_run, cumulative_weights, delta_hat_step,
    estimate_from_sequence, eta_j, gamma_j_of_t, gamma_tj, sample_split_run, variance_hat,
    CramOptions, CramReport, CramResult, Estimand, SplitResult,
};
pub use data::{
    ipw_kernel, partition_batches, read_dataset_csv, read_dataset_from_reader, BatchPlan,
    CsvSchema, Dataset, Observation, OverlapConfig,
};
pub use error::{CramError, Result};
pub use learner::{
    constant_learner, emit_threshold_policy, mlearner_ridge_fit, slearner_ridge_fit,
    AlternatingLearner, ConstantLearner, FeatureMap, Learner, LearnerSpec, RidgeLearner,
    RidgeState,
};
pub use policy::{l1_policy_distance, mix_policies, CateModel, Policy, PolicySequence};
pub use simulate::{
    generate_dataset, oracle_delta, oracle_delta_estimate, oracle_value, run_monte_carlo,
    CovariateLaw, DgpSpec, McConfig, McReport, MeanFunction, Method, MethodSummary, Monomial,
    OracleEstimate, OracleSample, ReplicateRecord,
};
pub use stability::{
    acceptance_prob, diagnose_stability, stable_wrap, StabilityDiagnostics, StabilityParams,
    StableLearner,
};
