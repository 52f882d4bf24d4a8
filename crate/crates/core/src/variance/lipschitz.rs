//! Upper bound on the variance of the HT mean when potential outcomes are
//! Lipschitz in the assignment of the non-key units.
//!
//! The bound drops a boundary term of order `C(n)` per target pair, so it is
//! guaranteed only as cluster sizes grow.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use itertools::Itertools;

use crate::design::choose;
use crate::error::{Error, Result};
use crate::estimand::{Analysis, EstimandKind};
use crate::estimators::Observed;

/// Largest number of ordered vector pairs a custom distance is evaluated on.
const PAIR_CAP: f64 = (1u64 << 24) as f64;

pub type DistanceFn = Arc<dyn Fn(&[u8], &[u8]) -> f64 + Send + Sync>;

/// Distance between two assignments of the non-key units.
#[derive(Clone)]
pub enum Distance {
    /// Number of differing coordinates.
    L1,
    Custom(DistanceFn),
}

impl fmt::Debug for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Distance::L1 => f.write_str("L1"),
            Distance::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Lipschitz constant as a function of cluster size.
#[derive(Clone, Debug, PartialEq)]
pub enum LipschitzConstant {
    /// `c / sqrt(n)`.
    Scaled(f64),
    Table(BTreeMap<usize, f64>),
}

impl LipschitzConstant {
    pub fn at(&self, n: usize) -> Result<f64> {
        match self {
            LipschitzConstant::Scaled(c) => Ok(c / (n as f64).sqrt()),
            LipschitzConstant::Table(t) => t.get(&n).copied().ok_or_else(|| {
                Error::Assumption(format!("no Lipschitz constant given for cluster size {n}"))
            }),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LipschitzSpec {
    pub constant: LipschitzConstant,
    pub distance: Distance,
    /// Bound on the absolute value of every potential outcome.
    pub outcome_bound: f64,
}

impl LipschitzSpec {
    fn validate(&self) -> Result<()> {
        if !(self.outcome_bound.is_finite() && self.outcome_bound >= 0.0) {
            return Err(Error::Assumption(format!(
                "outcome bound must be finite and nonnegative, got {}",
                self.outcome_bound
            )));
        }
        if let LipschitzConstant::Scaled(c) = self.constant {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::Assumption(format!(
                    "Lipschitz scale must be positive, got {c}"
                )));
            }
        }
        Ok(())
    }

    fn check_outcome(&self, k: usize, j: usize, y: f64) -> Result<()> {
        if y.abs() > self.outcome_bound {
            return Err(Error::Assumption(format!(
                "cluster {k}: outcome {y} of target {j} exceeds the bound {}",
                self.outcome_bound
            )));
        }
        Ok(())
    }

    /// `sum_{s != s'} d(s, s')^2` over vectors of length `m` with `t` ones.
    pub fn squared_distance_sum(&self, m: usize, t: usize) -> Result<f64> {
        if t > m {
            return Ok(0.0);
        }
        match &self.distance {
            Distance::L1 => Ok(choose(m, t)
                * (1..=t.min(m - t))
                    .map(|h| choose(t, h) * choose(m - t, h) * (4 * h * h) as f64)
                    .sum::<f64>()),
            Distance::Custom(d) => {
                let size = choose(m, t);
                if size * size > PAIR_CAP {
                    return Err(Error::EnumerationInfeasible {
                        size: size * size,
                        cap: PAIR_CAP as usize,
                    });
                }
                let vectors: Vec<Vec<u8>> = (0..m)
                    .combinations(t)
                    .map(|ones| {
                        let mut v = vec![0u8; m];
                        for i in ones {
                            v[i] = 1;
                        }
                        v
                    })
                    .collect();
                let mut total = 0.0;
                for (x, s) in vectors.iter().enumerate() {
                    for s2 in &vectors[x + 1..] {
                        total += 2.0 * d(s, s2).powi(2);
                    }
                }
                Ok(total)
            }
        }
    }
}

/// Outcome sums of one cluster entering the bound.
#[derive(Default)]
struct OutcomeSums {
    squares: f64,
    same_key: f64,
    cross_key: f64,
}

impl OutcomeSums {
    /// Adds the contribution of one assignment with weight `w`; `keyed[i]` sums
    /// and squares the outcomes of the targets keyed to unit `i`.
    fn add(&mut self, a: &[u8], arm: u8, keyed: &[(f64, f64)], w: f64) {
        let mut total = 0.0;
        let mut total_sq = 0.0;
        for (i, &(t, q)) in keyed.iter().enumerate() {
            if a[i] != arm {
                continue;
            }
            self.squares += w * q;
            self.same_key += w * (t * t - q);
            total += t;
            total_sq += t * t;
        }
        self.cross_key += w * (total * total - total_sq);
    }
}

struct ClusterShape {
    n: usize,
    na: usize,
    key: Vec<usize>,
}

fn shapes(analysis: &Analysis, spec: &LipschitzSpec) -> Result<(u8, Vec<ClusterShape>)> {
    spec.validate()?;
    let EstimandKind::Mu(arm) = analysis.estimand.kind else {
        return Err(Error::Unsupported(format!(
            "the Lipschitz bound covers mu, not {}",
            analysis.estimand.kind.label()
        )));
    };
    if !analysis.keys.is_single_key() {
        return Err(Error::Unsupported(
            "the Lipschitz bound needs single key units".into(),
        ));
    }
    let shapes = analysis
        .designs
        .iter()
        .zip(&analysis.clusters)
        .zip(analysis.keys.clusters())
        .enumerate()
        .map(|(k, ((f, plan), ck))| {
            let (n, n1) = f.as_complete().ok_or_else(|| {
                Error::Assumption(format!("cluster {k}: design is not a complete randomization"))
            })?;
            if plan.arms[0].base != *f {
                return Err(Error::Assumption(format!(
                    "cluster {k}: intervention differs from the design"
                )));
            }
            let na = if arm == 1 { n1 } else { n - n1 };
            if na == 0 {
                return Err(Error::Overlap(format!(
                    "cluster {k}: no intervention unit is ever assigned arm {arm}"
                )));
            }
            Ok(ClusterShape {
                n,
                na,
                key: (0..ck.targets()).map(|j| ck.keys(j)[0]).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((arm, shapes))
}

fn keyed_sums(shape: &ClusterShape, y: &[f64]) -> Vec<(f64, f64)> {
    let mut keyed = vec![(0.0, 0.0); shape.n];
    for (j, &i) in shape.key.iter().enumerate() {
        keyed[i].0 += y[j];
        keyed[i].1 += y[j] * y[j];
    }
    keyed
}

fn cluster_bound(
    k: usize,
    arm: u8,
    shape: &ClusterShape,
    spec: &LipschitzSpec,
    sums: &OutcomeSums,
) -> Result<f64> {
    let s = shape.key.len() as f64;
    let n = shape.n;
    let na = shape.na;
    let p = na as f64 / n as f64;
    let n1 = choose(n - 1, na - 1);
    let n2 = if na >= 2 { choose(n - 2, na - 2) } else { 0.0 };
    let mut per_key = vec![0usize; n];
    for &i in &shape.key {
        per_key[i] += 1;
    }
    let same_pairs: f64 = per_key.iter().map(|&c| (c * c.saturating_sub(1)) as f64).sum();
    let cross_pairs = s * (s - 1.0) - same_pairs;
    let c = spec.constant.at(n)?;
    let mut bound = c * c / (2.0 * n1 * n1)
        * spec.squared_distance_sum(n - 1, na - 1)?
        * (s + same_pairs)
        + (1.0 - p) / (p * n1) * (sums.squares + sums.same_key);
    if cross_pairs > 0.0 {
        if n2 == 0.0 {
            return Err(Error::Assumption(format!(
                "cluster {k}: targets keyed to different units are never jointly at arm {arm}"
            )));
        }
        bound += c * c / (2.0 * n2 * n2) * spec.squared_distance_sum(n - 2, na - 2)? * cross_pairs
            + (1.0 / (n1 * p) - 1.0 / n2) * sums.cross_key;
    }
    Ok(bound / (s * s))
}

/// Upper bound from full potential outcomes `potential(k, j, A)`.
pub fn lipschitz_bound(
    analysis: &Analysis,
    spec: &LipschitzSpec,
    potential: &dyn Fn(usize, usize, &[u8]) -> f64,
) -> Result<f64> {
    let (arm, shapes) = shapes(analysis, spec)?;
    let kf = analysis.k() as f64;
    let mut total = 0.0;
    for (k, shape) in shapes.iter().enumerate() {
        let f = &analysis.designs[k];
        let mut sums = OutcomeSums::default();
        for (a, _) in f.enumerate(analysis.numerics.cap)? {
            let y: Vec<f64> = (0..shape.key.len()).map(|j| potential(k, j, &a)).collect();
            for (j, &v) in y.iter().enumerate() {
                spec.check_outcome(k, j, v)?;
            }
            sums.add(&a, arm, &keyed_sums(shape, &y), 1.0);
        }
        total += cluster_bound(k, arm, shape, spec, &sums)?;
    }
    Ok(total / (kf * kf))
}

/// HT plug-in of [`lipschitz_bound`] from one realized assignment.
pub fn lipschitz_bound_hat(analysis: &Analysis, spec: &LipschitzSpec, obs: &Observed) -> Result<f64> {
    let (arm, shapes) = shapes(analysis, spec)?;
    let fa = analysis.check_observed(obs)?;
    let kf = analysis.k() as f64;
    let mut total = 0.0;
    for (k, shape) in shapes.iter().enumerate() {
        let y = &obs.outcomes[k];
        for (j, &v) in y.iter().enumerate() {
            spec.check_outcome(k, j, v)?;
        }
        let mut sums = OutcomeSums::default();
        sums.add(&obs.assignments[k], arm, &keyed_sums(shape, y), 1.0 / fa[k]);
        total += cluster_bound(k, arm, shape, spec, &sums)?;
    }
    Ok(total / (kf * kf))
}
