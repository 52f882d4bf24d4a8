//! Variance identification, estimation and bounds.
//!
//! Estimators are linear combinations of per-arm HT statistics. A [`Term`]
//! selects an arm, the quantity it sums (outcomes, or ones for the Hájek
//! denominator) and its coefficient; HT contrasts use the arm signs and the
//! Hájek linearization adds the denominators weighted by the arm means.

pub mod additive;
pub mod cr_special;
pub(crate) mod kernel;
pub mod lipschitz;
pub mod stratified;

use std::collections::BTreeMap;

use crate::error::Result;
use crate::estimand::Analysis;
use crate::estimators::{Observed, PointEstimate};
use crate::frame::KeyMap;

pub use additive::{
    fit_additive_coefficients, moment_matrix, pseudo_inverse, var_additive, var_additive_hat,
    var_tau_additive, AdditiveFit,
};
pub use cr_special::{var_cr_special, var_cr_special_hat};
pub use lipschitz::{lipschitz_bound, lipschitz_bound_hat, Distance, LipschitzConstant, LipschitzSpec};
pub use stratified::{
    var_de_stratified, var_de_stratified_hat, var_ie_stratified, var_ie_stratified_hat,
    var_mu_stratified, var_mu_stratified_hat, var_tau_multi, var_tau_multi_hat,
    MeasurabilityPolicy, NodeValues, VarianceCoefficients,
};

/// Quantity summed over a group's members.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quantity {
    Outcome,
    /// One per member; the Hájek denominator.
    Count,
}

/// Coefficient of one per-arm HT statistic in a linear combination.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Term {
    pub arm: usize,
    pub quantity: Quantity,
    pub weight: f64,
}

impl Term {
    /// The HT contrast: each arm's outcome total with its sign.
    pub fn ht(analysis: &Analysis) -> Vec<Term> {
        analysis
            .signs
            .iter()
            .enumerate()
            .map(|(arm, &s)| Term {
                arm,
                quantity: Quantity::Outcome,
                weight: s,
            })
            .collect()
    }

    /// Linearization of the Hájek contrast at the realized arm means.
    pub fn hajek(analysis: &Analysis, est: &PointEstimate) -> Result<Vec<Term>> {
        let mut out = Vec::with_capacity(2 * analysis.arm_count());
        for (arm, (&s, a)) in analysis.signs.iter().zip(&est.arms).enumerate() {
            let mean = a.hajek()?;
            out.push(Term {
                arm,
                quantity: Quantity::Outcome,
                weight: s,
            });
            out.push(Term {
                arm,
                quantity: Quantity::Count,
                weight: -s * mean,
            });
        }
        Ok(out)
    }
}

/// Raw variance estimate with diagnostic flags.
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceEstimate {
    /// Unclamped value; may be negative for unbiased quadratic forms.
    pub value: f64,
    pub flags: Vec<String>,
}

/// Pooled potential outcomes per unit: `values[k][a][i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PooledPotentials {
    pub values: Vec<[Vec<f64>; 2]>,
}

/// Realized pooled outcomes and dependent counts per intervention unit.
#[derive(Clone, Debug, PartialEq)]
pub struct PooledOutcomes {
    pub pooled: Vec<Vec<f64>>,
    pub counts: Vec<Vec<usize>>,
}

/// Sums target outcomes onto each of their key units.
pub fn pool_outcomes(keys: &KeyMap, outcomes: &[Vec<f64>]) -> PooledOutcomes {
    let mut pooled = Vec::with_capacity(keys.k());
    let mut counts = Vec::with_capacity(keys.k());
    for (ck, y) in keys.clusters().iter().zip(outcomes) {
        let mut p = vec![0.0; ck.n()];
        for (j, ks) in ck.all_keys().iter().enumerate() {
            for &i in ks {
                p[i] += y[j];
            }
        }
        pooled.push(p);
        counts.push(ck.dependents());
    }
    PooledOutcomes { pooled, counts }
}

/// Sums target outcomes by key set.
pub fn pool_by_key_set(keys: &KeyMap, outcomes: &[Vec<f64>]) -> Vec<BTreeMap<Vec<usize>, f64>> {
    keys.clusters()
        .iter()
        .zip(outcomes)
        .map(|(ck, y)| {
            let mut m = BTreeMap::new();
            for (j, ks) in ck.all_keys().iter().enumerate() {
                *m.entry(ks.clone()).or_insert(0.0) += y[j];
            }
            m
        })
        .collect()
}

/// Interference assumption used for the Hájek linearization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HajekMode {
    Stratified,
    Additive,
}

/// Linearized variance estimate of the Hájek contrast.
pub fn var_hajek_hat(analysis: &Analysis, obs: &Observed, mode: HajekMode) -> Result<VarianceEstimate> {
    let est = analysis.hajek(obs)?;
    let terms = Term::hajek(analysis, &est)?;
    match mode {
        HajekMode::Stratified => {
            stratified::estimate(analysis, &terms, obs, default_policy(analysis))
        }
        HajekMode::Additive => additive::estimate(analysis, &terms, obs),
    }
}

/// Measurability handling used by default for an estimand.
pub fn default_policy(analysis: &Analysis) -> MeasurabilityPolicy {
    match analysis.estimand.kind {
        crate::estimand::EstimandKind::TauMulti(_) => MeasurabilityPolicy::Bound,
        _ => MeasurabilityPolicy::Error,
    }
}
