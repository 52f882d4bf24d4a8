//! Variance under additive interference, where each outcome is linear in the
//! cluster's assignment vector: `Y_j(A) = (1, A) . beta_j`.

use nalgebra::{DMatrix, DVector};

use crate::design::{AssignmentLaw, Event};
use crate::error::{Error, Result};
use crate::estimand::Analysis;
use crate::estimators::Observed;
use crate::variance::kernel::{ArmMoments, CrossMoment};
use crate::variance::{Quantity, Term, VarianceEstimate};

/// Relative singular-value cutoff of the pseudoinverse.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// `E_f[(1, A)(1, A)^T]`.
pub fn moment_matrix(f: &AssignmentLaw) -> DMatrix<f64> {
    let n = f.n();
    let mut m = DMatrix::zeros(n + 1, n + 1);
    m[(0, 0)] = 1.0;
    for u in 0..n {
        let p = f.prob_unchecked(&Event::pin(u, 1));
        m[(0, u + 1)] = p;
        m[(u + 1, 0)] = p;
        m[(u + 1, u + 1)] = p;
        for v in (u + 1)..n {
            let q = f.prob_unchecked(&Event::pin(u, 1).and(&Event::pin(v, 1)));
            m[(u + 1, v + 1)] = q;
            m[(v + 1, u + 1)] = q;
        }
    }
    m
}

/// Moore-Penrose pseudoinverse and numerical rank of a symmetric positive
/// semidefinite matrix, from its eigendecomposition.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, usize)> {
    if !m.is_square() {
        return Err(Error::Numerical(format!("moment matrix is {}x{}", m.nrows(), m.ncols())));
    }
    let eig = m.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("moment matrix has non-finite eigenvalues".into()));
    }
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tol = RANK_TOLERANCE * top;
    let mut inv = DMatrix::zeros(m.nrows(), m.ncols());
    let mut rank = 0;
    for (i, &v) in eig.eigenvalues.iter().enumerate() {
        if v > tol {
            let col = eig.eigenvectors.column(i);
            inv += (col * col.transpose()) / v;
            rank += 1;
        }
    }
    Ok((inv, rank))
}

/// Per-target coefficient estimates of one cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct AdditiveFit {
    /// `betas[j]` has the intercept first, then one slope per intervention unit.
    pub betas: Vec<Vec<f64>>,
    pub rank: usize,
}

fn augmented(a: &[u8]) -> DVector<f64> {
    DVector::from_iterator(a.len() + 1, std::iter::once(1.0).chain(a.iter().map(|&x| x as f64)))
}

/// `beta_j = M^+ (1, A) Y_j` from one realized assignment.
pub fn fit_additive_coefficients(f: &AssignmentLaw, a: &[u8], y: &[f64]) -> Result<AdditiveFit> {
    if a.len() != f.n() {
        return Err(Error::Structural(format!(
            "assignment of length {} for a cluster of {} units",
            a.len(),
            f.n()
        )));
    }
    let (pinv, rank) = pseudo_inverse(&moment_matrix(f))?;
    let v = pinv * augmented(a);
    Ok(AdditiveFit {
        betas: y.iter().map(|&yj| v.iter().map(|x| x * yj).collect()).collect(),
        rank,
    })
}

impl CrossMoment {
    /// `sum_{A in e} p q / f (1, A)(1, A)^T`.
    fn second_moments(&self, e: &Event, n: usize) -> DMatrix<f64> {
        let mut q = DMatrix::zeros(n + 1, n + 1);
        match self {
            CrossMoment::Points { points, .. } => {
                for (a, w) in points.iter().filter(|(a, _)| e.contains(a)) {
                    let x = augmented(a);
                    q += (&x * x.transpose()) * *w;
                }
            }
            CrossMoment::Ratio { .. } => {
                q[(0, 0)] = self.eval(e);
                for s in 0..n {
                    let es = e.and(&Event::pin(s, 1));
                    let v = self.eval(&es);
                    q[(0, s + 1)] = v;
                    q[(s + 1, 0)] = v;
                    q[(s + 1, s + 1)] = v;
                    for t in (s + 1)..n {
                        let v = self.eval(&es.and(&Event::pin(t, 1)));
                        q[(s + 1, t + 1)] = v;
                        q[(t + 1, s + 1)] = v;
                    }
                }
            }
        }
        q
    }
}

struct AdditiveKernel {
    nodes: Vec<(usize, usize)>,
    /// Upper-triangle pair matrices, row-major over `u <= v`.
    q: Vec<DMatrix<f64>>,
    mu: Vec<DVector<f64>>,
}

impl AdditiveKernel {
    fn new(analysis: &Analysis, k: usize) -> Result<Self> {
        let plan = &analysis.clusters[k];
        let n = plan.n;
        let moments = ArmMoments::new(analysis, k)?;
        let nodes: Vec<(usize, usize)> = plan
            .arms
            .iter()
            .enumerate()
            .flat_map(|(r, arm)| (0..arm.groups.len()).map(move |g| (r, g)))
            .collect();
        let mu = nodes
            .iter()
            .map(|&(r, g)| {
                let arm = &plan.arms[r];
                let grp = &arm.groups[g];
                DVector::from_iterator(
                    n + 1,
                    std::iter::once(1.0).chain((0..n).map(|s| {
                        arm.base.prob_unchecked(&grp.event.and(&Event::pin(s, 1))) / grp.mass
                    })),
                )
            })
            .collect();
        let mut q = Vec::with_capacity(nodes.len() * (nodes.len() + 1) / 2);
        for (u, &(r, g)) in nodes.iter().enumerate() {
            let gu = &plan.arms[r].groups[g];
            for &(s, h) in &nodes[u..] {
                let gv = &plan.arms[s].groups[h];
                let joint = gu.event.and(&gv.event);
                q.push(moments.get(r, s).second_moments(&joint, n) / (gu.mass * gv.mass));
            }
        }
        Ok(AdditiveKernel { nodes, q, mu })
    }

    /// `sum_{u,v} B_u^T Q_uv B_v - (mu_u . B_u)(mu_v . B_v)`.
    fn quadratic(&self, b: &[DVector<f64>]) -> f64 {
        let m = self.nodes.len();
        let mean: f64 = (0..m).map(|u| self.mu[u].dot(&b[u])).sum();
        let mut second = 0.0;
        let mut idx = 0;
        for u in 0..m {
            for v in u..m {
                let x = b[u].dot(&(&self.q[idx] * &b[v]));
                second += if u == v { x } else { 2.0 * x };
                idx += 1;
            }
        }
        second - mean * mean
    }
}

fn node_coefficients(
    analysis: &Analysis,
    k: usize,
    nodes: &[(usize, usize)],
    terms: &[Term],
    betas: &[Vec<f64>],
) -> Result<Vec<DVector<f64>>> {
    let plan = &analysis.clusters[k];
    let n = plan.n;
    if betas.len() != plan.targets {
        return Err(Error::Structural(format!(
            "cluster {k}: {} coefficient vectors for {} targets",
            betas.len(),
            plan.targets
        )));
    }
    if let Some(b) = betas.iter().find(|b| b.len() != n + 1) {
        return Err(Error::Structural(format!(
            "cluster {k}: coefficient vector of length {}, expected {}",
            b.len(),
            n + 1
        )));
    }
    Ok(nodes
        .iter()
        .map(|&(r, g)| {
            let grp = &plan.arms[r].groups[g];
            let mut out = DVector::zeros(n + 1);
            for t in terms.iter().filter(|t| t.arm == r) {
                match t.quantity {
                    Quantity::Outcome => {
                        for &j in &grp.members {
                            for (o, b) in out.iter_mut().zip(&betas[j]) {
                                *o += t.weight * b;
                            }
                        }
                    }
                    Quantity::Count => out[0] += t.weight * grp.members.len() as f64,
                }
            }
            out
        })
        .collect())
}

/// Variance of a linear combination of HT statistics given coefficients `betas[k][j]`.
pub fn var_additive(analysis: &Analysis, terms: &[Term], betas: &[Vec<Vec<f64>>]) -> Result<f64> {
    if betas.len() != analysis.k() {
        return Err(Error::Structural(format!(
            "coefficients for {} clusters, expected {}",
            betas.len(),
            analysis.k()
        )));
    }
    let kf = analysis.k() as f64;
    let mut total = 0.0;
    for (k, plan) in analysis.clusters.iter().enumerate() {
        let kern = AdditiveKernel::new(analysis, k)?;
        let b = node_coefficients(analysis, k, &kern.nodes, terms, &betas[k])?;
        let s = plan.targets as f64;
        total += kern.quadratic(&b) / (s * s);
    }
    Ok(total / (kf * kf))
}

/// Plug-in estimate with fitted coefficients; conservative in expectation.
pub fn estimate(analysis: &Analysis, terms: &[Term], obs: &Observed) -> Result<VarianceEstimate> {
    analysis.check_observed(obs)?;
    let betas = analysis
        .designs
        .iter()
        .zip(obs.assignments.iter().zip(&obs.outcomes))
        .map(|(f, (a, y))| Ok(fit_additive_coefficients(f, a, y)?.betas))
        .collect::<Result<Vec<_>>>()?;
    Ok(VarianceEstimate {
        value: var_additive(analysis, terms, &betas)?,
        flags: Vec::new(),
    })
}

/// Plug-in estimate of the HT contrast variance.
pub fn var_additive_hat(analysis: &Analysis, obs: &Observed) -> Result<f64> {
    Ok(estimate(analysis, &Term::ht(analysis), obs)?.value)
}

/// Variance of the HT contrast as the design variance of
/// `zeta(A) = sum_j pi_j(A) / f(A) (1, A) . beta_j`, summed over the design support.
pub fn var_tau_additive(analysis: &Analysis, betas: &[Vec<Vec<f64>>]) -> Result<f64> {
    if betas.len() != analysis.k() {
        return Err(Error::Structural(format!(
            "coefficients for {} clusters, expected {}",
            betas.len(),
            analysis.k()
        )));
    }
    let kf = analysis.k() as f64;
    let mut total = 0.0;
    for (k, plan) in analysis.clusters.iter().enumerate() {
        let f = &analysis.designs[k];
        let support = f.enumerate(analysis.numerics.cap)?;
        let laws = plan
            .arms
            .iter()
            .map(|arm| {
                arm.groups
                    .iter()
                    .map(|g| arm.base.restrict(&g.event))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let mut first = 0.0;
        let mut second = 0.0;
        for (a, fa) in &support {
            let x: Vec<f64> = std::iter::once(1.0).chain(a.iter().map(|&v| v as f64)).collect();
            let mut zeta = 0.0;
            for (r, arm) in plan.arms.iter().enumerate() {
                for (g, grp) in arm.groups.iter().enumerate() {
                    let w = laws[r][g].pmf_unchecked(a) / fa;
                    if w == 0.0 {
                        continue;
                    }
                    for &j in &grp.members {
                        let fitted: f64 = x.iter().zip(&betas[k][j]).map(|(p, q)| p * q).sum();
                        zeta += analysis.signs[r] * w * fitted;
                    }
                }
            }
            first += fa * zeta;
            second += fa * zeta * zeta;
        }
        let s = plan.targets as f64;
        total += (second - first * first) / (s * s);
    }
    Ok(total / (kf * kf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_coin_fit() {
        let f = AssignmentLaw::bernoulli(&[0.5]).unwrap();
        let m = moment_matrix(&f);
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 0.5]));
        let fit = fit_additive_coefficients(&f, &[1], &[7.0]).unwrap();
        assert_eq!(fit.rank, 2);
        assert_abs_diff_eq!(fit.betas[0][0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.betas[0][1], 14.0, epsilon = 1e-12);
        let fit = fit_additive_coefficients(&f, &[0], &[3.0]).unwrap();
        assert_abs_diff_eq!(fit.betas[0][0], 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.betas[0][1], -6.0, epsilon = 1e-12);
    }

    #[test]
    fn complete_design_moment_matrix_loses_one_rank() {
        for (n, t) in [(3, 1), (4, 2), (6, 3)] {
            let f = AssignmentLaw::complete(n, t).unwrap();
            let (_, rank) = pseudo_inverse(&moment_matrix(&f)).unwrap();
            assert_eq!(rank, n);
        }
    }

    #[test]
    fn zero_outcomes_fit_zero() {
        let f = AssignmentLaw::complete(3, 1).unwrap();
        let fit = fit_additive_coefficients(&f, &[0, 1, 0], &[0.0, 0.0]).unwrap();
        assert!(fit.betas.iter().flatten().all(|&b| b == 0.0));
    }
}
