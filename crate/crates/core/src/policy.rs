//! Treatment policies: maps from covariates to a treatment probability.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{CramError, Result};

/// A fitted conditional-average-treatment-effect model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum CateModel {
    /// `τ̂(x) = intercept + coefs · x`
    Linear { intercept: f64, coefs: Vec<f64> },
}

impl CateModel {
    pub fn dim(&self) -> usize {
        match self {
            CateModel::Linear { coefs, .. } => coefs.len(),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        match self {
            CateModel::Linear { intercept, coefs } => {
                if x.len() != coefs.len() {
                    return Err(CramError::Shape {
                        expected: coefs.len(),
                        got: x.len(),
                    });
                }
                Ok(intercept + coefs.iter().zip(x).map(|(b, v)| b * v).sum::<f64>())
            }
        }
    }
}

/// An immutable treatment rule `x ↦ π(x) ∈ [0, 1]`.
///
/// Children of a mixture are reference counted so that long chains built by
/// the stabilizing wrapper share structure instead of copying it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    Constant {
        prob: f64,
    },
    /// Treat iff `τ̂(x) > threshold`; ties go to control.
    CateThreshold {
        model: Arc<CateModel>,
        threshold: f64,
    },
    /// `weight · newer(x) + (1 − weight) · older(x)`
    Mixture {
        weight: f64,
        newer: Arc<Policy>,
        older: Arc<Policy>,
    },
}

impl Policy {
    pub fn constant(prob: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&prob) {
            return Err(CramError::Domain(format!(
                "constant policy probability must lie in [0, 1], got {prob}"
            )));
        }
        Ok(Policy::Constant { prob })
    }

    pub fn treat_none() -> Self {
        Policy::Constant { prob: 0.0 }
    }

    pub fn treat_all() -> Self {
        Policy::Constant { prob: 1.0 }
    }

    pub fn cate_threshold(model: CateModel, threshold: f64) -> Self {
        Policy::CateThreshold {
            model: Arc::new(model),
            threshold,
        }
    }

    /// Probability of assigning treatment to a unit with covariates `x`.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        match self {
            Policy::Constant { prob } => Ok(*prob),
            Policy::CateThreshold { model, threshold } => Ok(if model.predict(x)? > *threshold {
                1.0
            } else {
                0.0
            }),
            Policy::Mixture {
                weight,
                newer,
                older,
            } => Ok(weight * newer.evaluate(x)? + (1.0 - weight) * older.evaluate(x)?),
        }
    }

    /// Nesting depth of mixture nodes.
    pub fn depth(&self) -> usize {
        match self {
            Policy::Mixture { newer, older, .. } => 1 + newer.depth().max(older.depth()),
            _ => 0,
        }
    }

    /// Mean treatment probability over a covariate sample.
    pub fn treated_fraction<X: AsRef<[f64]>>(&self, reference: &[X]) -> Result<f64> {
        if reference.is_empty() {
            return Err(CramError::Domain("empty reference sample".into()));
        }
        let mut total = 0.0;
        for x in reference {
            total += self.evaluate(x.as_ref())?;
        }
        Ok(total / reference.len() as f64)
    }
}

/// Convex combination `p · newer + (1 − p) · older`.
///
/// Degenerate weights return the selected child itself rather than a
/// wrapper node, which bounds the evaluation depth.
pub fn mix_policies(p: f64, newer: Policy, older: Policy) -> Result<Policy> {
    if !(0.0..=1.0).contains(&p) {
        return Err(CramError::Domain(format!(
            "mixture weight must lie in [0, 1], got {p}"
        )));
    }
    Ok(if p == 1.0 {
        newer
    } else if p == 0.0 {
        older
    } else {
        Policy::Mixture {
            weight: p,
            newer: Arc::new(newer),
            older: Arc::new(older),
        }
    })
}

/// Empirical `E_X |a(X) − b(X)|` over a reference covariate sample.
pub fn l1_policy_distance<X: AsRef<[f64]>>(a: &Policy, b: &Policy, reference: &[X]) -> Result<f64> {
    if reference.is_empty() {
        return Err(CramError::Domain("empty reference sample".into()));
    }
    let mut total = 0.0;
    for x in reference {
        let x = x.as_ref();
        total += (a.evaluate(x)? - b.evaluate(x)?).abs();
    }
    Ok(total / reference.len() as f64)
}

/// The policies `π̂_0, π̂_1, …, π̂_T` produced by one cram pass; index 0 is
/// the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySequence {
    policies: Vec<Policy>,
}

impl PolicySequence {
    pub fn new(baseline: Policy) -> Self {
        Self {
            policies: vec![baseline],
        }
    }

    pub fn from_policies(policies: Vec<Policy>) -> Result<Self> {
        if policies.is_empty() {
            return Err(CramError::Domain(
                "policy sequence needs at least the baseline".into(),
            ));
        }
        Ok(Self { policies })
    }

    pub fn push(&mut self, policy: Policy) {
        self.policies.push(policy);
    }

    pub fn baseline(&self) -> &Policy {
        &self.policies[0]
    }

    pub fn get(&self, t: usize) -> Option<&Policy> {
        self.policies.get(t)
    }

    pub fn last(&self) -> &Policy {
        self.policies.last().expect("sequence holds the baseline")
    }

    /// Number of learned policies, excluding the baseline.
    pub fn steps(&self) -> usize {
        self.policies.len() - 1
    }

    pub fn as_slice(&self) -> &[Policy] {
        &self.policies
    }

    /// `Q̂_t = l1(π̂_t, π̂_{t−1})` for `t = 1..=steps`.
    pub fn consecutive_distances<X: AsRef<[f64]>>(&self, reference: &[X]) -> Result<Vec<f64>> {
        self.policies
            .windows(2)
            .map(|w| l1_policy_distance(&w[1], &w[0], reference))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn first_coordinate() -> Policy {
        Policy::cate_threshold(
            CateModel::Linear {
                intercept: 0.0,
                coefs: vec![1.0, 0.0],
            },
            0.0,
        )
    }

    #[test]
    fn evaluation_examples() {
        assert_eq!(Policy::treat_none().evaluate(&[3.0]).unwrap(), 0.0);
        let mix = mix_policies(0.25, Policy::treat_all(), Policy::treat_none()).unwrap();
        assert_eq!(mix.evaluate(&[1.0, 2.0, 3.0]).unwrap(), 0.25);
        let pol = first_coordinate();
        assert_eq!(pol.evaluate(&[-1.0, 5.0]).unwrap(), 0.0);
        assert_eq!(pol.evaluate(&[1.0, 5.0]).unwrap(), 1.0);
        assert_eq!(pol.evaluate(&[0.0, 5.0]).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch() {
        let err = first_coordinate().evaluate(&[1.0]).unwrap_err();
        assert!(matches!(
            err,
            CramError::Shape {
                expected: 2,
                got: 1
            }
        ));
    }

    #[test]
    fn degenerate_mixtures() {
        let newer = first_coordinate();
        let older = Policy::constant(0.3).unwrap();
        assert_eq!(
            mix_policies(1.0, newer.clone(), older.clone()).unwrap(),
            newer
        );
        assert_eq!(
            mix_policies(0.0, newer.clone(), older.clone()).unwrap(),
            older
        );
        assert!(mix_policies(1.5, newer.clone(), older.clone()).is_err());
        assert!(mix_policies(-0.1, newer, older).is_err());
        assert!(Policy::constant(1.1).is_err());
    }

    #[test]
    fn distance_examples() {
        let reference = vec![
            vec![-1.0, 0.0],
            vec![1.0, 0.0],
            vec![-2.0, 0.0],
            vec![3.0, 0.0],
        ];
        let a = first_coordinate();
        assert_eq!(l1_policy_distance(&a, &a, &reference).unwrap(), 0.0);
        assert_eq!(
            l1_policy_distance(&Policy::treat_all(), &Policy::treat_none(), &reference).unwrap(),
            1.0
        );
        // half the sample is treated: |0.5-1|·½ + |0.5-0|·½
        let half = Policy::constant(0.5).unwrap();
        assert_eq!(l1_policy_distance(&half, &a, &reference).unwrap(), 0.5);
        let empty: Vec<Vec<f64>> = vec![];
        assert!(l1_policy_distance(&a, &a, &empty).is_err());
    }

    fn arb_policy() -> impl Strategy<Value = Policy> {
        let leaf = prop_oneof![
            (0.0..=1.0f64).prop_map(|p| Policy::Constant { prob: p }),
            (-1.0..1.0f64, -2.0..2.0f64, -2.0..2.0f64).prop_map(|(b, c0, c1)| {
                Policy::cate_threshold(
                    CateModel::Linear {
                        intercept: b,
                        coefs: vec![c0, c1],
                    },
                    0.0,
                )
            }),
        ];
        leaf.prop_recursive(3, 8, 2, |inner| {
            (0.0..=1.0f64, inner.clone(), inner)
                .prop_map(|(w, a, b)| mix_policies(w, a, b).unwrap())
        })
    }

    fn arb_reference() -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 2), 1..40)
    }

    proptest! {
        #[test]
        fn mixture_is_pointwise_convex(p in 0.0..=1.0f64, a in arb_policy(), b in arb_policy(),
                                       x in prop::collection::vec(-3.0..3.0f64, 2)) {
            let m = mix_policies(p, a.clone(), b.clone()).unwrap();
            let direct = p * a.evaluate(&x).unwrap() + (1.0 - p) * b.evaluate(&x).unwrap();
            prop_assert!((m.evaluate(&x).unwrap() - direct).abs() <= 1e-15);
        }

        #[test]
        fn values_in_unit_interval(a in arb_policy(), x in prop::collection::vec(-3.0..3.0f64, 2)) {
            let v = a.evaluate(&x).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
        }

        #[test]
        fn l1_is_pseudometric(a in arb_policy(), b in arb_policy(), c in arb_policy(), r in arb_reference()) {
            let ab = l1_policy_distance(&a, &b, &r).unwrap();
            let ba = l1_policy_distance(&b, &a, &r).unwrap();
            let bc = l1_policy_distance(&b, &c, &r).unwrap();
            let ac = l1_policy_distance(&a, &c, &r).unwrap();
            prop_assert_eq!(l1_policy_distance(&a, &a, &r).unwrap(), 0.0);
            prop_assert!((ab - ba).abs() <= 1e-15);
            prop_assert!(ac <= ab + bc + 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn threshold_policies_are_deterministic(b in -1.0..1.0f64, c in -2.0..2.0f64, x in -3.0..3.0f64) {
            let pol = Policy::cate_threshold(CateModel::Linear { intercept: b, coefs: vec![c] }, 0.0);
            let v = pol.evaluate(&[x]).unwrap();
            prop_assert!(v == 0.0 || v == 1.0);
        }
    }

    #[test]
    fn serde_round_trip() {
        let pol = mix_policies(0.4, first_coordinate(), Policy::treat_none()).unwrap();
        let text = serde_json::to_string(&pol).unwrap();
        assert!(text.contains("\"kind\":\"mixture\""));
        let back: Policy = serde_json::from_str(&text).unwrap();
        assert_eq!(back, pol);
    }
}
