//! Shared fixtures for the benchmarks.

use cramkit::{generate_dataset, Dataset, DgpSpec};

/// Linear-effect trial with `p` covariates.
pub fn linear_trial(n: usize, p: usize, seed: u64) -> Dataset {
    generate_dataset(&DgpSpec::linear(p), n, seed).expect("valid benchmark DGP")
}
