//! Ground truth by exhaustive enumeration.
//!
//! Estimands are evaluated by averaging potential outcomes over each target
//! unit's intervention law; estimator moments by summing over the design
//! support. Statistics are closures over [`Observed`], so estimators are
//! checked through the same code path used on real data.

use std::collections::HashMap;

use crate::design::{Assignment, AssignmentLaw, Event};
use crate::error::{Error, Result};
use crate::estimand::{Admissible, Analysis, EstimandKind, Intervention};
use crate::estimators::Observed;
use crate::variance::{NodeValues, PooledPotentials};

/// Largest product support [`exact_moments`] enumerates.
pub const PRODUCT_SUPPORT_CAP: usize = 1 << 22;

/// Largest cluster a dense potential table may cover.
pub const DENSE_MAX_UNITS: usize = 20;

/// Potential outcome of one target unit as a function of its cluster's assignment.
#[derive(Clone, Debug, PartialEq)]
pub enum UnitPotential {
    /// One value per assignment, indexed by the bitmask `sum a_i 2^i`.
    Dense(Vec<f64>),
    /// Values for listed assignments only.
    Tabulated(HashMap<Assignment, f64>),
    /// Depends on the key unit's arm and the cluster's treated count:
    /// `values[arm][total]`.
    Stratified { key: usize, values: [Vec<f64>; 2] },
    /// Depends on the treated count among the key units and the cluster's
    /// treated count: `values[key_treated][total]`.
    MultiStratified { keys: Vec<usize>, values: Vec<Vec<f64>> },
    /// Intercept followed by one slope per intervention unit.
    Additive(Vec<f64>),
}

fn bitmask(a: &[u8]) -> usize {
    a.iter()
        .enumerate()
        .fold(0, |m, (i, &x)| m | ((x as usize) << i))
}

impl UnitPotential {
    /// Tabulates `y` over every assignment of `n` units.
    pub fn dense(n: usize, y: impl Fn(&[u8]) -> f64) -> Result<Self> {
        if n > DENSE_MAX_UNITS {
            return Err(Error::EnumerationInfeasible {
                size: 2f64.powi(n as i32),
                cap: 1 << DENSE_MAX_UNITS,
            });
        }
        let mut a = vec![0u8; n];
        Ok(UnitPotential::Dense(
            (0..1usize << n)
                .map(|m| {
                    for (i, x) in a.iter_mut().enumerate() {
                        *x = ((m >> i) & 1) as u8;
                    }
                    y(&a)
                })
                .collect(),
        ))
    }

    pub fn eval(&self, a: &[u8]) -> Option<f64> {
        let total = || a.iter().map(|&x| x as usize).sum::<usize>();
        match self {
            UnitPotential::Dense(v) => v.get(bitmask(a)).copied(),
            UnitPotential::Tabulated(t) => t.get(a).copied(),
            UnitPotential::Stratified { key, values } => {
                values[*a.get(*key)? as usize].get(total()).copied()
            }
            UnitPotential::MultiStratified { keys, values } => {
                let c = keys.iter().map(|&i| a.get(i).map(|&x| x as usize)).sum::<Option<usize>>()?;
                values.get(c)?.get(total()).copied()
            }
            UnitPotential::Additive(beta) => {
                if beta.len() != a.len() + 1 {
                    return None;
                }
                Some(beta[0] + a.iter().zip(&beta[1..]).map(|(&x, b)| x as f64 * b).sum::<f64>())
            }
        }
    }

    /// Expectation under `law`, enumerating when feasible and otherwise using
    /// the count structure of the potential.
    pub fn expectation(&self, law: &AssignmentLaw, cap: usize) -> Result<f64> {
        match law.enumerate(cap) {
            Ok(support) => support
                .iter()
                .map(|(a, p)| Ok(p * self.eval_checked(a)?))
                .sum(),
            Err(Error::EnumerationInfeasible { size, cap }) => {
                let n = law.n();
                let by_count = |event: &Event, values: &[f64]| -> Result<f64> {
                    values
                        .iter()
                        .enumerate()
                        .map(|(t, v)| Ok(law.prob(&event.and(&Event::count(0..n, t)))? * v))
                        .sum()
                };
                match self {
                    UnitPotential::Stratified { key, values } => {
                        Ok(by_count(&Event::pin(*key, 0), &values[0])?
                            + by_count(&Event::pin(*key, 1), &values[1])?)
                    }
                    UnitPotential::MultiStratified { keys, values } => values
                        .iter()
                        .enumerate()
                        .map(|(c, row)| by_count(&Event::count(keys.iter().copied(), c), row))
                        .sum(),
                    UnitPotential::Additive(beta) => Ok(beta[0]
                        + (0..n)
                            .map(|i| Ok(beta[i + 1] * law.prob(&Event::pin(i, 1))?))
                            .sum::<Result<f64>>()?),
                    _ => Err(Error::EnumerationInfeasible { size, cap }),
                }
            }
            Err(e) => Err(e),
        }
    }

    fn eval_checked(&self, a: &[u8]) -> Result<f64> {
        self.eval(a).ok_or_else(|| {
            Error::InvalidData(format!("potential outcome undefined at assignment {a:?}"))
        })
    }
}

/// Potential outcomes of every target unit: `clusters[k][j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialTable {
    pub clusters: Vec<Vec<UnitPotential>>,
}

impl PotentialTable {
    pub fn new(clusters: Vec<Vec<UnitPotential>>) -> Self {
        PotentialTable { clusters }
    }

    pub fn outcomes(&self, k: usize, a: &[u8]) -> Result<Vec<f64>> {
        self.clusters[k].iter().map(|u| u.eval_checked(a)).collect()
    }

    /// Observed data implied by the assignments.
    pub fn observe(&self, assignments: &[Assignment]) -> Result<Observed> {
        Ok(Observed {
            outcomes: assignments
                .iter()
                .enumerate()
                .map(|(k, a)| self.outcomes(k, a))
                .collect::<Result<_>>()?,
            assignments: assignments.to_vec(),
        })
    }

    fn check_shape(&self, analysis: &Analysis) -> Result<()> {
        if self.clusters.len() != analysis.k() {
            return Err(Error::Structural(format!(
                "potential table covers {} clusters, expected {}",
                self.clusters.len(),
                analysis.k()
            )));
        }
        for (k, (units, plan)) in self.clusters.iter().zip(&analysis.clusters).enumerate() {
            if units.len() != plan.targets {
                return Err(Error::Structural(format!(
                    "cluster {k}: potential table has {} targets, expected {}",
                    units.len(),
                    plan.targets
                )));
            }
        }
        Ok(())
    }

    /// Pooled potentials per intervention unit and key arm, read at one
    /// design-supported vector with that arm; exact under stratified interference.
    pub fn pooled(&self, analysis: &Analysis) -> Result<PooledPotentials> {
        self.check_shape(analysis)?;
        let cap = analysis.numerics.cap;
        let mut values = Vec::with_capacity(analysis.k());
        for (k, (f, ck)) in analysis.designs.iter().zip(analysis.keys.clusters()).enumerate() {
            let mut out = [vec![0.0; ck.n()], vec![0.0; ck.n()]];
            for (arm, row) in out.iter_mut().enumerate() {
                for (i, slot) in row.iter_mut().enumerate() {
                    let dependents: Vec<usize> = (0..ck.targets())
                        .filter(|&j| ck.keys(j) == [i])
                        .collect();
                    if dependents.is_empty() {
                        continue;
                    }
                    let a = match f.restrict(&Event::pin(i, arm as u8)) {
                        Ok(law) => law.representative(cap)?,
                        Err(Error::Overlap(_)) => continue,
                        Err(e) => return Err(e),
                    };
                    let y = self.outcomes(k, &a)?;
                    *slot = dependents.iter().map(|&j| y[j]).sum();
                }
            }
            values.push(out);
        }
        Ok(PooledPotentials { values })
    }

    /// Summed potentials of every plan group, read at one design-supported
    /// vector of the group's admissible event.
    pub fn node_values(&self, analysis: &Analysis) -> Result<NodeValues> {
        self.check_shape(analysis)?;
        let cap = analysis.numerics.cap;
        analysis
            .clusters
            .iter()
            .enumerate()
            .map(|(k, plan)| {
                let f = &analysis.designs[k];
                plan.arms
                    .iter()
                    .map(|arm| {
                        arm.groups
                            .iter()
                            .map(|g| {
                                let a = f.restrict(&g.event)?.representative(cap)?;
                                let y = self.outcomes(k, &a)?;
                                Ok(g.members.iter().map(|&j| y[j]).sum())
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }
}

fn extended(pi: &Intervention, rule: Admissible) -> Intervention {
    let mut rules = pi.rules.clone();
    rules.push(rule);
    Intervention::new(pi.base.clone(), rules)
}

/// Signed component interventions of the estimand in cluster `k`.
fn components(analysis: &Analysis, k: usize) -> Result<Vec<(f64, Intervention)>> {
    let est = &analysis.estimand;
    let pi = || {
        est.pi
            .get(k)
            .ok_or_else(|| Error::Structural(format!("no intervention for cluster {k}")))
    };
    let alt = || {
        est.pi_alt
            .get(k)
            .ok_or_else(|| Error::Structural(format!("no alternative intervention for cluster {k}")))
    };
    use Admissible::KeyTreated;
    Ok(match est.kind {
        EstimandKind::Tau => vec![(1.0, pi()?.clone())],
        EstimandKind::Mu(a) => vec![(1.0, extended(pi()?, KeyTreated(a)))],
        EstimandKind::De => vec![
            (1.0, extended(pi()?, KeyTreated(1))),
            (-1.0, extended(pi()?, KeyTreated(0))),
        ],
        EstimandKind::Ie(a) => vec![
            (1.0, extended(pi()?, KeyTreated(a))),
            (-1.0, extended(alt()?, KeyTreated(a))),
        ],
        EstimandKind::Te => vec![
            (1.0, extended(pi()?, KeyTreated(1))),
            (-1.0, extended(alt()?, KeyTreated(0))),
        ],
        EstimandKind::TauMulti(p) => vec![(
            1.0,
            Intervention::new(analysis.designs[k].clone(), vec![Admissible::KeyProportion(p)]),
        )],
    })
}

/// The estimand: per target, the potential outcome averaged over its
/// intervention law; then averaged over targets and over clusters.
pub fn exact_estimand(analysis: &Analysis, table: &PotentialTable) -> Result<f64> {
    table.check_shape(analysis)?;
    let cap = analysis.numerics.cap;
    let mut total = 0.0;
    for (k, ck) in analysis.keys.clusters().iter().enumerate() {
        let mut cluster = 0.0;
        for (sign, pi) in components(analysis, k)? {
            let mut laws: HashMap<Event, AssignmentLaw> = HashMap::new();
            for j in 0..ck.targets() {
                let event = pi.unit_event(ck.keys(j))?;
                let law = match laws.get(&event) {
                    Some(l) => l,
                    None => {
                        let l = pi.base.restrict(&event)?;
                        laws.entry(event).or_insert(l)
                    }
                };
                cluster += sign * table.clusters[k][j].expectation(law, cap)?;
            }
        }
        total += cluster / ck.targets() as f64;
    }
    Ok(total / analysis.k() as f64)
}

/// Means and covariance matrix of several statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

impl Moments {
    pub fn variance(&self, s: usize) -> f64 {
        self.covariance[s][s]
    }
}

/// A statistic of the observed data.
pub type Statistic<'a> = &'a (dyn Fn(&Observed) -> Result<f64> + Sync);

/// Exact means and covariances by enumerating the product of the design supports.
pub fn exact_moments(
    designs: &[AssignmentLaw],
    table: &PotentialTable,
    statistics: &[Statistic],
) -> Result<Moments> {
    let size: f64 = designs.iter().map(|f| f.enumeration_cost()).product();
    if size > PRODUCT_SUPPORT_CAP as f64 {
        return Err(Error::EnumerationInfeasible {
            size,
            cap: PRODUCT_SUPPORT_CAP,
        });
    }
    let supports = designs
        .iter()
        .map(|f| f.enumerate(PRODUCT_SUPPORT_CAP))
        .collect::<Result<Vec<_>>>()?;
    let outcomes = supports
        .iter()
        .enumerate()
        .map(|(k, s)| s.iter().map(|(a, _)| table.outcomes(k, a)).collect())
        .collect::<Result<Vec<Vec<_>>>>()?;
    let m = statistics.len();
    let mut first = vec![0.0; m];
    let mut second = vec![vec![0.0; m]; m];
    let mut index = vec![0usize; designs.len()];
    if supports.iter().any(|s| s.is_empty()) {
        return Err(Error::Structural("design with empty support".into()));
    }
    loop {
        let obs = Observed {
            assignments: index
                .iter()
                .zip(&supports)
                .map(|(&x, s)| s[x].0.clone())
                .collect(),
            outcomes: index.iter().zip(&outcomes).map(|(&x, o)| o[x].clone()).collect(),
        };
        let p: f64 = index.iter().zip(&supports).map(|(&x, s)| s[x].1).product();
        let values = statistics
            .iter()
            .map(|s| s(&obs))
            .collect::<Result<Vec<_>>>()?;
        for u in 0..m {
            first[u] += p * values[u];
            for v in u..m {
                second[u][v] += p * values[u] * values[v];
            }
        }
        // odometer over clusters, last cluster fastest
        let mut k = designs.len();
        loop {
            if k == 0 {
                let covariance = (0..m)
                    .map(|u| {
                        (0..m)
                            .map(|v| {
                                let (a, b) = if u <= v { (u, v) } else { (v, u) };
                                second[a][b] - first[a] * first[b]
                            })
                            .collect()
                    })
                    .collect();
                return Ok(Moments {
                    mean: first,
                    covariance,
                });
            }
            k -= 1;
            index[k] += 1;
            if index[k] < supports[k].len() {
                break;
            }
            index[k] = 0;
        }
    }
}

/// Mean and variance of the HT estimate, cluster by cluster: contributions are
/// independent across clusters, so their variances add.
pub fn decomposed_ht_moments(analysis: &Analysis, table: &PotentialTable) -> Result<(f64, f64)> {
    table.check_shape(analysis)?;
    let cap = analysis.numerics.cap;
    let fixed = analysis
        .designs
        .iter()
        .map(|f| f.representative(cap))
        .collect::<Result<Vec<_>>>()?;
    let mut mean = 0.0;
    let mut var = 0.0;
    for (k, f) in analysis.designs.iter().enumerate() {
        let mut first = 0.0;
        let mut second = 0.0;
        for (a, p) in f.enumerate(cap)? {
            let mut assignments = fixed.clone();
            assignments[k] = a;
            let est = analysis.ht(&table.observe(&assignments)?)?;
            let x = est.cluster_contributions[k];
            first += p * x;
            second += p * x * x;
        }
        mean += first;
        var += second - first * first;
    }
    Ok((mean, var))
}

/// `E[estimator] - target`: nonnegative for conservative estimators, zero for unbiased ones.
pub fn check_conservative(
    designs: &[AssignmentLaw],
    table: &PotentialTable,
    estimator: Statistic,
    target: f64,
) -> Result<f64> {
    Ok(exact_moments(designs, table, &[estimator])?.mean[0] - target)
}
