//! Horvitz-Thompson and Hájek point estimators.

use crate::design::Assignment;
use crate::error::{Error, Result};
use crate::estimand::Analysis;

/// Realized assignments and target outcomes, per cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct Observed {
    pub assignments: Vec<Assignment>,
    /// Outcomes in target order.
    pub outcomes: Vec<Vec<f64>>,
}

/// HT numerator and denominator of one arm.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmEstimate {
    /// HT estimate of the arm mean.
    pub numerator: f64,
    /// HT estimate of one.
    pub denominator: f64,
    /// Per-cluster numerator terms `(1/|S_k|) sum_j w_j Y_j`.
    pub cluster_numerators: Vec<f64>,
    /// Per-cluster denominator terms `(1/|S_k|) sum_j w_j`.
    pub cluster_denominators: Vec<f64>,
}

impl ArmEstimate {
    pub fn hajek(&self) -> Result<f64> {
        if self.denominator == 0.0 {
            return Err(Error::Undefined(
                "Hájek denominator is zero: no target unit received positive weight".into(),
            ));
        }
        Ok(self.numerator / self.denominator)
    }
}

/// Point estimate with its components.
#[derive(Clone, Debug, PartialEq)]
pub struct PointEstimate {
    pub point: f64,
    pub arms: Vec<ArmEstimate>,
    /// Signed per-cluster HT contributions; they sum to the HT point.
    pub cluster_contributions: Vec<f64>,
}

impl Analysis {
    /// Checks shapes and support; returns `f_k(A_k)` per cluster.
    pub fn check_observed(&self, obs: &Observed) -> Result<Vec<f64>> {
        if obs.assignments.len() != self.k() || obs.outcomes.len() != self.k() {
            return Err(Error::Structural(format!(
                "observed data for {} / {} clusters, expected {}",
                obs.assignments.len(),
                obs.outcomes.len(),
                self.k()
            )));
        }
        let mut fa = Vec::with_capacity(self.k());
        for (k, plan) in self.clusters.iter().enumerate() {
            let a = &obs.assignments[k];
            let p = self.designs[k].pmf(a)?;
            if p <= 0.0 {
                return Err(Error::InvalidData(format!(
                    "cluster {k}: design mismatch, realized assignment lies outside the design support"
                )));
            }
            let y = &obs.outcomes[k];
            if y.len() != plan.targets {
                return Err(Error::InvalidData(format!(
                    "cluster {k}: {} outcomes for {} target units",
                    y.len(),
                    plan.targets
                )));
            }
            if let Some(j) = y.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!(
                    "cluster {k}: outcome of target {j} is missing or not finite"
                )));
            }
            fa.push(p);
        }
        Ok(fa)
    }

    /// Per-target HT weights `pi_j(A)/f(A)` of every arm in cluster `k`.
    pub fn unit_weights(&self, k: usize, a: &[u8]) -> Result<Vec<Vec<f64>>> {
        let fa = self.designs[k].pmf(a)?;
        if fa <= 0.0 {
            return Err(Error::InvalidData(format!(
                "cluster {k}: assignment outside the design support"
            )));
        }
        let plan = &self.clusters[k];
        Ok(plan
            .arms
            .iter()
            .map(|arm| {
                let w = arm.weights(a, fa);
                let mut out = vec![0.0; plan.targets];
                for (g, grp) in arm.groups.iter().enumerate() {
                    for &j in &grp.members {
                        out[j] = w[g];
                    }
                }
                out
            })
            .collect())
    }

    /// HT numerators and denominators of every arm.
    pub fn arm_estimates(&self, obs: &Observed) -> Result<Vec<ArmEstimate>> {
        let fa = self.check_observed(obs)?;
        let kf = self.k() as f64;
        let mut arms: Vec<ArmEstimate> = (0..self.arm_count())
            .map(|_| ArmEstimate {
                numerator: 0.0,
                denominator: 0.0,
                cluster_numerators: Vec::with_capacity(self.k()),
                cluster_denominators: Vec::with_capacity(self.k()),
            })
            .collect();
        for (k, plan) in self.clusters.iter().enumerate() {
            let a = &obs.assignments[k];
            let y = &obs.outcomes[k];
            let s = plan.targets as f64;
            for (r, arm) in plan.arms.iter().enumerate() {
                let w = arm.weights(a, fa[k]);
                let mut num = 0.0;
                let mut den = 0.0;
                for (g, grp) in arm.groups.iter().enumerate() {
                    if w[g] == 0.0 {
                        continue;
                    }
                    let total: f64 = grp.members.iter().map(|&j| y[j]).sum();
                    num += w[g] * total;
                    den += w[g] * grp.members.len() as f64;
                }
                arms[r].cluster_numerators.push(num / s);
                arms[r].cluster_denominators.push(den / s);
            }
        }
        for arm in &mut arms {
            arm.numerator = arm.cluster_numerators.iter().sum::<f64>() / kf;
            arm.denominator = arm.cluster_denominators.iter().sum::<f64>() / kf;
        }
        Ok(arms)
    }

    /// Horvitz-Thompson estimate.
    pub fn ht(&self, obs: &Observed) -> Result<PointEstimate> {
        let arms = self.arm_estimates(obs)?;
        let kf = self.k() as f64;
        let mut point = 0.0;
        for (s, arm) in self.signs.iter().zip(&arms) {
            point += s * arm.numerator;
        }
        let cluster_contributions = (0..self.k())
            .map(|k| {
                self.signs
                    .iter()
                    .zip(&arms)
                    .map(|(s, arm)| s * arm.cluster_numerators[k])
                    .sum::<f64>()
                    / kf
            })
            .collect();
        Ok(PointEstimate {
            point,
            arms,
            cluster_contributions,
        })
    }

    /// Hájek estimate: per-arm ratio of HT numerator to HT denominator.
    pub fn hajek(&self, obs: &Observed) -> Result<PointEstimate> {
        let ht = self.ht(obs)?;
        let mut point = 0.0;
        for (s, arm) in self.signs.iter().zip(&ht.arms) {
            point += s * arm.hajek()?;
        }
        Ok(PointEstimate { point, ..ht })
    }
}
