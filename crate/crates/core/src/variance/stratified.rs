//! Quadratic forms in pooled outcomes under stratified interference.
//!
//! Every variance here is `sum_k 1/(K |S_k|)^2 sum_{u,v} kappa_uv Z_u Z_v`,
//! where nodes `u` are (arm, group) pairs and `Z_u` is the linear combination
//! of pooled outcomes and member counts selected by the [`Term`]s. The
//! estimators replace each product by its HT plug-in; products that are never
//! jointly observed use the rules documented on [`estimate`].

use crate::error::{Error, Result};
use crate::estimand::{Analysis, EstimandKind};
use crate::estimators::Observed;
use crate::variance::{PooledPotentials, Quantity, Term, VarianceEstimate};

/// Handling of unit pairs whose outcomes are never jointly observed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeasurabilityPolicy {
    /// Raise a non-measurable-design error.
    Error,
    /// Replace the product by the conservative half-sum of squares and flag it.
    Bound,
}

/// Pooled potential outcome of every node: `[cluster][arm][group]`.
pub type NodeValues = Vec<Vec<Vec<f64>>>;

pub(crate) fn require_fixed_total(analysis: &Analysis) -> Result<()> {
    for (k, f) in analysis.designs.iter().enumerate() {
        if f.fixed_total().is_none() {
            return Err(Error::Assumption(format!(
                "cluster {k}: stratified interference needs a design with a fixed treated count"
            )));
        }
    }
    Ok(())
}

fn require_shared_keys(analysis: &Analysis) -> Result<()> {
    if analysis.estimand.kind == EstimandKind::Tau {
        return Err(Error::Unsupported(
            "stratified variance needs mu, de, ie, te or tau_multi".into(),
        ));
    }
    for (k, plan) in analysis.clusters.iter().enumerate() {
        for arm in &plan.arms {
            if let Some(g) = arm.groups.iter().find(|g| g.keys.is_none()) {
                return Err(Error::Unsupported(format!(
                    "cluster {k}: target {} shares an admissible set with units of other key sets",
                    g.members[0]
                )));
            }
        }
    }
    Ok(())
}

fn check(analysis: &Analysis, terms: &[Term]) -> Result<()> {
    require_fixed_total(analysis)?;
    require_shared_keys(analysis)?;
    if let Some(t) = terms.iter().find(|t| t.arm >= analysis.arm_count()) {
        return Err(Error::Structural(format!("term refers to missing arm {}", t.arm)));
    }
    Ok(())
}

fn combine(terms: &[Term], arm: usize, outcome: f64, count: f64) -> f64 {
    terms
        .iter()
        .filter(|t| t.arm == arm)
        .map(|t| {
            t.weight
                * match t.quantity {
                    Quantity::Outcome => outcome,
                    Quantity::Count => count,
                }
        })
        .sum()
}

/// Exact variance of the linear combination `terms` of HT statistics.
pub fn exact(analysis: &Analysis, terms: &[Term], values: &NodeValues) -> Result<f64> {
    check(analysis, terms)?;
    let kf = analysis.k() as f64;
    let mut total = 0.0;
    for (k, plan) in analysis.clusters.iter().enumerate() {
        let kern = analysis.kernel(k)?;
        let z: Vec<f64> = kern
            .nodes
            .iter()
            .map(|&(r, g)| {
                let grp = &plan.arms[r].groups[g];
                combine(terms, r, values[k][r][g], grp.members.len() as f64)
            })
            .collect();
        let m = kern.len();
        let mut q = 0.0;
        for u in 0..m {
            if z[u] == 0.0 {
                continue;
            }
            for v in 0..m {
                q += kern.kappa(u, v) * z[u] * z[v];
            }
        }
        let s = plan.targets as f64;
        total += q / (s * s);
    }
    Ok(total / (kf * kf))
}

/// HT plug-in estimate of the quadratic form.
///
/// Pairs observed jointly with positive probability use
/// `1(both observed) / f(both observed)`. For pairs never observed jointly:
/// products of two member counts use the mean of the two single-group HT
/// indicators; an outcome times a count uses the outcome's single-group HT
/// term; a product of two outcomes is bounded by the half-sum of their squared
/// HT terms, which is exact in expectation only when the outcomes coincide.
/// Such outcome products across distinct key sets are non-measurable and follow
/// `policy`.
pub fn estimate(
    analysis: &Analysis,
    terms: &[Term],
    obs: &Observed,
    policy: MeasurabilityPolicy,
) -> Result<VarianceEstimate> {
    check(analysis, terms)?;
    analysis.check_observed(obs)?;
    let kf = analysis.k() as f64;
    let mut total = 0.0;
    let mut flags = Vec::new();
    let mut approximate = false;
    for (k, plan) in analysis.clusters.iter().enumerate() {
        let kern = analysis.kernel(k)?;
        approximate |= kern.approximate;
        let a = &obs.assignments[k];
        let y = &obs.outcomes[k];
        let m = kern.len();
        let mut x = vec![0.0; m];
        let mut d = vec![0.0; m];
        let mut active = vec![false; m];
        for (u, &(r, g)) in kern.nodes.iter().enumerate() {
            let grp = &plan.arms[r].groups[g];
            if kern.f_obs(u, u) <= 0.0 {
                return Err(Error::NonMeasurable(format!(
                    "cluster {k}: outcomes of target {} are never observed under the design",
                    grp.members[0]
                )));
            }
            x[u] = grp.members.iter().map(|&j| y[j]).sum();
            d[u] = grp.members.len() as f64;
            active[u] = grp.observe.contains(a);
        }
        let z: Vec<f64> = kern
            .nodes
            .iter()
            .enumerate()
            .map(|(u, &(r, _))| combine(terms, r, x[u], d[u]))
            .collect();
        let live: Vec<usize> = (0..m).filter(|&u| active[u]).collect();
        let mut q = 0.0;
        for &u in &live {
            for &v in &live {
                let fo = kern.f_obs(u, v);
                if fo > 0.0 {
                    q += kern.kappa(u, v) * z[u] * z[v] / fo;
                }
            }
        }
        let ht = |u: usize| {
            if active[u] {
                1.0 / kern.f_obs(u, u)
            } else {
                0.0
            }
        };
        for u in 0..m {
            for v in 0..m {
                if kern.f_obs(u, v) > 0.0 {
                    continue;
                }
                let kv = kern.kappa(u, v);
                if kv == 0.0 {
                    continue;
                }
                let (r, g) = kern.nodes[u];
                let (s, h) = kern.nodes[v];
                let same_keys = r != s
                    && plan.arms[r].groups[g].keys == plan.arms[s].groups[h].keys;
                for t in terms.iter().filter(|t| t.arm == r) {
                    for t2 in terms.iter().filter(|t| t.arm == s) {
                        let w = t.weight * t2.weight * kv;
                        q += match (t.quantity, t2.quantity) {
                            (Quantity::Count, Quantity::Count) => {
                                w * d[u] * d[v] * 0.5 * (ht(u) + ht(v))
                            }
                            (Quantity::Outcome, Quantity::Count) => w * d[v] * ht(u) * x[u],
                            (Quantity::Count, Quantity::Outcome) => w * d[u] * ht(v) * x[v],
                            (Quantity::Outcome, Quantity::Outcome) => {
                                if !same_keys {
                                    if policy == MeasurabilityPolicy::Error {
                                        return Err(Error::NonMeasurable(format!(
                                            "cluster {k}: targets {} and {} are never observed jointly",
                                            plan.arms[r].groups[g].members[0],
                                            plan.arms[s].groups[h].members[0]
                                        )));
                                    }
                                    if !flags.iter().any(|f| f == "conservative_fallback") {
                                        flags.push("conservative_fallback".to_string());
                                    }
                                }
                                0.5 * w.abs() * (ht(u) * x[u] * x[u] + ht(v) * x[v] * x[v])
                            }
                        };
                    }
                }
            }
        }
        let s = plan.targets as f64;
        total += q / (s * s);
    }
    if approximate {
        flags.push("monte_carlo_coefficients".to_string());
    }
    Ok(VarianceEstimate {
        value: total / (kf * kf),
        flags,
    })
}

/// Node values from per-unit pooled potentials; single-key plans only.
pub fn node_values(analysis: &Analysis, pooled: &PooledPotentials) -> Result<NodeValues> {
    let arm_levels = arm_levels(analysis.estimand.kind)?;
    analysis
        .clusters
        .iter()
        .enumerate()
        .map(|(k, plan)| {
            plan.arms
                .iter()
                .zip(&arm_levels)
                .map(|(arm, &a)| {
                    arm.groups
                        .iter()
                        .map(|g| match g.keys.as_deref() {
                            Some([i]) => Ok(pooled.values[k][a as usize][*i]),
                            _ => Err(Error::Unsupported(
                                "per-unit pooled outcomes need single key units".into(),
                            )),
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Key arm targeted by each arm of a single-key estimand.
pub fn arm_levels(kind: EstimandKind) -> Result<Vec<u8>> {
    Ok(match kind {
        EstimandKind::Mu(a) => vec![a],
        EstimandKind::De | EstimandKind::Te => vec![1, 0],
        EstimandKind::Ie(a) => vec![a, a],
        _ => {
            return Err(Error::Unsupported(format!(
                "{} has no per-unit key arm",
                kind.label()
            )))
        }
    })
}

fn require_kind(analysis: &Analysis, ok: impl Fn(EstimandKind) -> bool, name: &str) -> Result<()> {
    if !ok(analysis.estimand.kind) {
        return Err(Error::Unsupported(format!(
            "{name} applies to a different estimand than {}",
            analysis.estimand.kind.label()
        )));
    }
    Ok(())
}

/// Exact variance of the HT mean at key arm `a`.
pub fn var_mu_stratified(analysis: &Analysis, pooled: &PooledPotentials) -> Result<f64> {
    require_kind(analysis, |k| matches!(k, EstimandKind::Mu(_)), "var_mu_stratified")?;
    exact(analysis, &Term::ht(analysis), &node_values(analysis, pooled)?)
}

/// Unbiased estimate of [`var_mu_stratified`].
pub fn var_mu_stratified_hat(analysis: &Analysis, obs: &Observed) -> Result<f64> {
    require_kind(analysis, |k| matches!(k, EstimandKind::Mu(_)), "var_mu_stratified_hat")?;
    Ok(estimate(analysis, &Term::ht(analysis), obs, MeasurabilityPolicy::Error)?.value)
}

/// Exact variance of the HT direct effect.
pub fn var_de_stratified(analysis: &Analysis, pooled: &PooledPotentials) -> Result<f64> {
    require_kind(analysis, |k| k == EstimandKind::De, "var_de_stratified")?;
    exact(analysis, &Term::ht(analysis), &node_values(analysis, pooled)?)
}

/// Conservative estimate of [`var_de_stratified`].
pub fn var_de_stratified_hat(analysis: &Analysis, obs: &Observed) -> Result<f64> {
    require_kind(analysis, |k| k == EstimandKind::De, "var_de_stratified_hat")?;
    Ok(estimate(analysis, &Term::ht(analysis), obs, MeasurabilityPolicy::Error)?.value)
}

/// Exact variance of the HT indirect effect.
pub fn var_ie_stratified(analysis: &Analysis, pooled: &PooledPotentials) -> Result<f64> {
    require_kind(analysis, |k| matches!(k, EstimandKind::Ie(_)), "var_ie_stratified")?;
    exact(analysis, &Term::ht(analysis), &node_values(analysis, pooled)?)
}

/// Unbiased estimate of [`var_ie_stratified`] on measurable designs.
pub fn var_ie_stratified_hat(analysis: &Analysis, obs: &Observed) -> Result<f64> {
    require_kind(analysis, |k| matches!(k, EstimandKind::Ie(_)), "var_ie_stratified_hat")?;
    Ok(estimate(analysis, &Term::ht(analysis), obs, MeasurabilityPolicy::Error)?.value)
}

/// Exact variance of the multiple-key HT estimator from pooled outcomes per key set.
pub fn var_tau_multi(analysis: &Analysis, values: &NodeValues) -> Result<f64> {
    require_kind(analysis, |k| matches!(k, EstimandKind::TauMulti(_)), "var_tau_multi")?;
    exact(analysis, &Term::ht(analysis), values)
}

/// Estimate of [`var_tau_multi`]; falls back to the conservative bound on non-measurable designs.
pub fn var_tau_multi_hat(analysis: &Analysis, obs: &Observed) -> Result<VarianceEstimate> {
    require_kind(analysis, |k| matches!(k, EstimandKind::TauMulti(_)), "var_tau_multi_hat")?;
    estimate(analysis, &Term::ht(analysis), obs, MeasurabilityPolicy::Bound)
}

/// Weight covariances of one cluster indexed by arm and key unit.
#[derive(Clone, Debug)]
pub struct VarianceCoefficients {
    keys: Vec<Vec<Option<Vec<usize>>>>,
    offsets: Vec<usize>,
    size: usize,
    kappa: Vec<f64>,
}

impl VarianceCoefficients {
    pub fn new(analysis: &Analysis, k: usize) -> Result<Self> {
        let kern = analysis.kernel(k)?;
        let keys = analysis.clusters[k]
            .arms
            .iter()
            .map(|arm| arm.groups.iter().map(|g| g.keys.clone()).collect())
            .collect();
        Ok(VarianceCoefficients {
            keys,
            offsets: kern.offsets.clone(),
            size: kern.len(),
            kappa: kern.kappa.clone(),
        })
    }

    fn node(&self, arm: usize, keys: &[usize]) -> Option<usize> {
        let g = self.keys.get(arm)?.iter().position(|k| k.as_deref() == Some(keys))?;
        Some(self.offsets[arm] + g)
    }

    /// Covariance of the weights of two key sets, possibly in different arms.
    pub fn kappa(&self, arm: usize, keys: &[usize], arm2: usize, keys2: &[usize]) -> Option<f64> {
        let u = self.node(arm, keys)?;
        let v = self.node(arm2, keys2)?;
        Some(self.kappa[u * self.size + v])
    }

    /// Diagonal coefficient of unit `i` in arm `arm`.
    pub fn c(&self, arm: usize, i: usize) -> Option<f64> {
        self.kappa(arm, &[i], arm, &[i])
    }

    /// Off-diagonal coefficient of units `i`, `j` in arm `arm`.
    pub fn d(&self, arm: usize, i: usize, j: usize) -> Option<f64> {
        self.kappa(arm, &[i], arm, &[j])
    }

    /// Cross-arm coefficient between unit `i` in arm 0 and unit `j` in arm 1.
    pub fn g(&self, i: usize, j: usize) -> Option<f64> {
        self.kappa(0, &[i], 1, &[j])
    }

    /// Diagonal coefficient of a contrast of arms 0 and 1.
    pub fn c_contrast(&self, i: usize) -> Option<f64> {
        Some(self.c(0, i)? + self.c(1, i)? - 2.0 * self.g(i, i)?)
    }

    /// Off-diagonal coefficient of a contrast of arms 0 and 1.
    pub fn d_contrast(&self, i: usize, j: usize) -> Option<f64> {
        Some(self.d(0, i, j)? + self.d(1, i, j)? - self.g(i, j)? - self.g(j, i)?)
    }
}
