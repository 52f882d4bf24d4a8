//! Second moments of HT weights.
//!
//! For arm laws `p`, `q` and design `f`, the cross moment of an event `E` is
//! `sum over A in E of p(A) q(A) / f(A)`. The covariance of two group weights
//! is the cross moment of the joint event scaled by both group masses, minus one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::design::{Assignment, AssignmentLaw, Event};
use crate::error::{Error, Result};
use crate::estimand::{Analysis, Numerics};

/// Evaluator of `E -> sum_{A in E} p(A) q(A) / f(A)`.
#[derive(Clone, Debug)]
pub(crate) enum CrossMoment {
    /// `scale * law(E)`.
    Ratio { scale: f64, law: AssignmentLaw },
    /// Weighted support points; approximate when drawn by Monte Carlo.
    Points {
        points: Vec<(Assignment, f64)>,
        approximate: bool,
    },
}

impl CrossMoment {
    pub(crate) fn new(
        p: &AssignmentLaw,
        q: &AssignmentLaw,
        f: &AssignmentLaw,
        numerics: &Numerics,
    ) -> Result<Self> {
        if p == q {
            if let Some(r) = p.density_ratio(f) {
                return Ok(CrossMoment::Ratio {
                    scale: r,
                    law: p.clone(),
                });
            }
        } else {
            if let Some(r) = p.density_ratio(f) {
                if q.support_within(p, numerics.cap).unwrap_or(false) {
                    return Ok(CrossMoment::Ratio {
                        scale: r,
                        law: q.clone(),
                    });
                }
            }
            if let Some(r) = q.density_ratio(f) {
                if p.support_within(q, numerics.cap).unwrap_or(false) {
                    return Ok(CrossMoment::Ratio {
                        scale: r,
                        law: p.clone(),
                    });
                }
            }
        }
        match p.enumerate(numerics.cap) {
            Ok(support) => Ok(CrossMoment::Points {
                points: support
                    .into_iter()
                    .filter_map(|(a, pa)| {
                        let fa = f.pmf_unchecked(&a);
                        let qa = q.pmf_unchecked(&a);
                        (fa > 0.0 && qa > 0.0).then(|| {
                            let w = pa * qa / fa;
                            (a, w)
                        })
                    })
                    .collect(),
                approximate: false,
            }),
            Err(Error::EnumerationInfeasible { size, cap }) => match numerics.mc_draws {
                Some(draws) if draws > 0 => {
                    let mut rng = ChaCha8Rng::seed_from_u64(numerics.seed);
                    let scale = 1.0 / draws as f64;
                    let points = (0..draws)
                        .filter_map(|_| {
                            let a = p.sample(&mut rng);
                            let fa = f.pmf_unchecked(&a);
                            (fa > 0.0).then(|| {
                                let w = q.pmf_unchecked(&a) / fa * scale;
                                (a, w)
                            })
                        })
                        .collect();
                    Ok(CrossMoment::Points {
                        points,
                        approximate: true,
                    })
                }
                _ => Err(Error::EnumerationInfeasible { size, cap }),
            },
            Err(e) => Err(e),
        }
    }

    pub(crate) fn eval(&self, e: &Event) -> f64 {
        match self {
            CrossMoment::Ratio { scale, law } => scale * law.prob_unchecked(e),
            CrossMoment::Points { points, .. } => points
                .iter()
                .filter(|(a, _)| e.contains(a))
                .map(|(_, w)| w)
                .sum(),
        }
    }

    pub(crate) fn is_approximate(&self) -> bool {
        matches!(
            self,
            CrossMoment::Points {
                approximate: true,
                ..
            }
        )
    }
}

/// Cross moments for every ordered pair of arms of one cluster.
pub(crate) struct ArmMoments {
    arms: usize,
    moments: Vec<CrossMoment>,
}

impl ArmMoments {
    pub(crate) fn new(analysis: &Analysis, k: usize) -> Result<Self> {
        let plan = &analysis.clusters[k];
        let f = &analysis.designs[k];
        let arms = plan.arms.len();
        let mut moments: Vec<CrossMoment> = Vec::with_capacity(arms * arms);
        for r in 0..arms {
            for s in 0..arms {
                if s < r {
                    let prev = moments[s * arms + r].clone();
                    moments.push(prev);
                } else {
                    moments.push(CrossMoment::new(
                        &plan.arms[r].base,
                        &plan.arms[s].base,
                        f,
                        &analysis.numerics,
                    )?);
                }
            }
        }
        Ok(ArmMoments { arms, moments })
    }

    pub(crate) fn get(&self, r: usize, s: usize) -> &CrossMoment {
        &self.moments[r * self.arms + s]
    }

    pub(crate) fn is_approximate(&self) -> bool {
        self.moments.iter().any(|m| m.is_approximate())
    }
}

/// Group weight covariances and observation probabilities of one cluster.
#[derive(Debug)]
pub(crate) struct ClusterKernel {
    /// Node `(arm, group)` in arm-major order.
    pub nodes: Vec<(usize, usize)>,
    pub offsets: Vec<usize>,
    /// Row-major covariance of group weights.
    pub kappa: Vec<f64>,
    /// Design probability that both groups' outcomes are observed.
    pub f_obs: Vec<f64>,
    pub approximate: bool,
}

impl ClusterKernel {
    pub(crate) fn new(analysis: &Analysis, k: usize) -> Result<Self> {
        let plan = &analysis.clusters[k];
        let f = &analysis.designs[k];
        let moments = ArmMoments::new(analysis, k)?;
        let mut nodes = Vec::new();
        let mut offsets = Vec::with_capacity(plan.arms.len());
        for (r, arm) in plan.arms.iter().enumerate() {
            offsets.push(nodes.len());
            nodes.extend((0..arm.groups.len()).map(|g| (r, g)));
        }
        let m = nodes.len();
        let mut kappa = vec![0.0; m * m];
        let mut f_obs = vec![0.0; m * m];
        for u in 0..m {
            let (r, g) = nodes[u];
            let gu = &plan.arms[r].groups[g];
            for v in u..m {
                let (s, h) = nodes[v];
                let gv = &plan.arms[s].groups[h];
                let joint = gu.event.and(&gv.event);
                let cm = moments.get(r, s).eval(&joint);
                let kv = cm / (gu.mass * gv.mass) - 1.0;
                let fo = f.prob_unchecked(&gu.observe.and(&gv.observe));
                kappa[u * m + v] = kv;
                kappa[v * m + u] = kv;
                f_obs[u * m + v] = fo;
                f_obs[v * m + u] = fo;
            }
        }
        Ok(ClusterKernel {
            nodes,
            offsets,
            kappa,
            f_obs,
            approximate: moments.is_approximate(),
        })
    }

    pub(crate) fn len(&self) -> usize {
        self.nodes.len()
    }

    pub(crate) fn kappa(&self, u: usize, v: usize) -> f64 {
        self.kappa[u * self.len() + v]
    }

    pub(crate) fn f_obs(&self, u: usize, v: usize) -> f64 {
        self.f_obs[u * self.len() + v]
    }
}
