//! Stochastic interventions, estimand definitions and their per-cluster plans.
//!
//! A plan splits an estimand into signed arms. Each arm carries a base law and
//! groups of target units sharing one admissible event, so that every target
//! unit's intervention is the base law conditioned on its group's event.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use crate::design::{nearest_count, AssignmentLaw, Event, DEFAULT_SUPPORT_CAP};
use crate::error::{Error, Result};
use crate::frame::{ClusterKeys, KeyMap};
use crate::variance::kernel::ClusterKernel;

/// Design-admissible set attached to a target unit.
#[derive(Clone, Debug, PartialEq)]
pub enum Admissible {
    /// Every key unit has the given arm.
    KeyTreated(u8),
    /// The treated share of the key units equals `p_star` (nearest count).
    KeyProportion(f64),
    /// The treated share of a fixed unit group equals `alpha` (nearest count).
    GroupProportion { members: Vec<usize>, alpha: f64 },
    Unrestricted,
}

impl Admissible {
    fn event(&self, keys: &[usize]) -> Result<Event> {
        Ok(match self {
            Admissible::KeyTreated(a) => {
                if *a > 1 {
                    return Err(Error::Structural(format!("arm {a} is not binary")));
                }
                Event::count(keys.iter().copied(), *a as usize * keys.len())
            }
            Admissible::KeyProportion(p) => {
                check_share(*p, "p_star")?;
                Event::count(keys.iter().copied(), nearest_count(keys.len(), *p))
            }
            Admissible::GroupProportion { members, alpha } => {
                check_share(*alpha, "alpha")?;
                if members.is_empty() && *alpha > 0.0 {
                    return Err(Error::Overlap(format!(
                        "group proportion {alpha} requested for an empty group"
                    )));
                }
                Event::count(members.iter().copied(), nearest_count(members.len(), *alpha))
            }
            Admissible::Unrestricted => Event::all(),
        })
    }

    /// Part of the event that decides whether a unit's outcome is at the target arm.
    fn observation_event(&self, keys: &[usize]) -> Result<Event> {
        match self {
            Admissible::KeyTreated(_) | Admissible::KeyProportion(_) => self.event(keys),
            _ => Ok(Event::all()),
        }
    }
}

fn check_share(p: f64, name: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Structural(format!("{name} = {p} outside [0, 1]")));
    }
    Ok(())
}

/// Stochastic intervention for one cluster: a base law and admissible rules.
#[derive(Clone, Debug, PartialEq)]
pub struct Intervention {
    pub base: AssignmentLaw,
    pub rules: Vec<Admissible>,
}

impl Intervention {
    pub fn new(base: AssignmentLaw, rules: Vec<Admissible>) -> Self {
        Intervention { base, rules }
    }

    pub fn unrestricted(base: AssignmentLaw) -> Self {
        Intervention {
            base,
            rules: Vec::new(),
        }
    }

    /// One unrestricted intervention per cluster reusing the given laws.
    pub fn from_laws(laws: &[AssignmentLaw]) -> Vec<Self> {
        laws.iter().cloned().map(Self::unrestricted).collect()
    }

    fn with_rule(&self, rule: Admissible) -> Self {
        let mut out = self.clone();
        out.rules.push(rule);
        out
    }

    /// Admissible event of a target unit with key set `keys`.
    pub fn unit_event(&self, keys: &[usize]) -> Result<Event> {
        let mut e = Event::all();
        for r in &self.rules {
            e = e.and(&r.event(keys)?);
        }
        Ok(e)
    }

    fn observation_event(&self, keys: &[usize]) -> Result<Event> {
        let mut e = Event::all();
        for r in &self.rules {
            e = e.and(&r.observation_event(keys)?);
        }
        Ok(e)
    }

    /// The intervention law of a target unit with key set `keys`.
    pub fn unit_law(&self, keys: &[usize]) -> Result<AssignmentLaw> {
        self.base.restrict(&self.unit_event(keys)?)
    }
}

/// Which causal quantity is targeted.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EstimandKind {
    Tau,
    Mu(u8),
    De,
    Ie(u8),
    Te,
    TauMulti(f64),
}

impl EstimandKind {
    pub fn label(&self) -> String {
        match self {
            EstimandKind::Tau => "tau".into(),
            EstimandKind::Mu(a) => format!("mu{a}"),
            EstimandKind::De => "de".into(),
            EstimandKind::Ie(a) => format!("ie{a}"),
            EstimandKind::Te => "te".into(),
            EstimandKind::TauMulti(_) => "tau_multi".into(),
        }
    }
}

/// An estimand with its per-cluster interventions.
#[derive(Clone, Debug, PartialEq)]
pub struct Estimand {
    pub kind: EstimandKind,
    pub pi: Vec<Intervention>,
    pub pi_alt: Vec<Intervention>,
}

impl Estimand {
    pub fn tau(pi: Vec<Intervention>) -> Self {
        Self::make(EstimandKind::Tau, pi, Vec::new())
    }

    pub fn mu(a: u8, pi: Vec<Intervention>) -> Self {
        Self::make(EstimandKind::Mu(a), pi, Vec::new())
    }

    pub fn de(pi: Vec<Intervention>) -> Self {
        Self::make(EstimandKind::De, pi, Vec::new())
    }

    pub fn ie(a: u8, pi: Vec<Intervention>, pi_alt: Vec<Intervention>) -> Self {
        Self::make(EstimandKind::Ie(a), pi, pi_alt)
    }

    pub fn te(pi: Vec<Intervention>, pi_alt: Vec<Intervention>) -> Self {
        Self::make(EstimandKind::Te, pi, pi_alt)
    }

    /// Share `p_star` of each target's key units treated, intervention equal to the design.
    pub fn tau_multi(p_star: f64) -> Self {
        Self::make(EstimandKind::TauMulti(p_star), Vec::new(), Vec::new())
    }

    fn make(kind: EstimandKind, pi: Vec<Intervention>, pi_alt: Vec<Intervention>) -> Self {
        Estimand { kind, pi, pi_alt }
    }

    /// Signed component interventions for one cluster.
    fn arms(&self, k: usize, design: &AssignmentLaw) -> Result<Vec<(f64, Intervention)>> {
        let pi = || {
            self.pi.get(k).ok_or_else(|| {
                Error::Structural(format!("no intervention supplied for cluster {k}"))
            })
        };
        let alt = || {
            self.pi_alt.get(k).ok_or_else(|| {
                Error::Structural(format!("no alternative intervention for cluster {k}"))
            })
        };
        use Admissible::KeyTreated;
        Ok(match self.kind {
            EstimandKind::Tau => vec![(1.0, pi()?.clone())],
            EstimandKind::Mu(a) => vec![(1.0, pi()?.with_rule(KeyTreated(a)))],
            EstimandKind::De => vec![
                (1.0, pi()?.with_rule(KeyTreated(1))),
                (-1.0, pi()?.with_rule(KeyTreated(0))),
            ],
            EstimandKind::Ie(a) => vec![
                (1.0, pi()?.with_rule(KeyTreated(a))),
                (-1.0, alt()?.with_rule(KeyTreated(a))),
            ],
            EstimandKind::Te => vec![
                (1.0, pi()?.with_rule(KeyTreated(1))),
                (-1.0, alt()?.with_rule(KeyTreated(0))),
            ],
            EstimandKind::TauMulti(p) => {
                check_share(p, "p_star")?;
                vec![(
                    1.0,
                    Intervention::new(design.clone(), vec![Admissible::KeyProportion(p)]),
                )]
            }
        })
    }
}

/// Target units sharing one admissible event within an arm.
#[derive(Clone, Debug, PartialEq)]
pub struct Group {
    /// Admissible event.
    pub event: Event,
    /// Event on which the members' outcomes are at the arm's target condition.
    pub observe: Event,
    /// Target indices.
    pub members: Vec<usize>,
    /// Common key set of the members, when they share one.
    pub keys: Option<Vec<usize>>,
    /// Probability of `event` under the arm's base law.
    pub mass: f64,
}

/// One signed component of an estimand within a cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmPlan {
    pub base: AssignmentLaw,
    pub groups: Vec<Group>,
}

impl ArmPlan {
    /// HT weight of every group at the realized vector.
    pub fn weights(&self, a: &[u8], f_a: f64) -> Vec<f64> {
        let b = if self.groups.iter().any(|g| g.event.contains(a)) {
            self.base.pmf_unchecked(a)
        } else {
            0.0
        };
        self.groups
            .iter()
            .map(|g| {
                if b > 0.0 && g.event.contains(a) {
                    b / (g.mass * f_a)
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Plan of one cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterPlan {
    pub n: usize,
    pub targets: usize,
    pub arms: Vec<ArmPlan>,
}

/// Enumeration and Monte Carlo settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Numerics {
    pub cap: usize,
    pub mc_draws: Option<usize>,
    pub seed: u64,
}

impl Default for Numerics {
    fn default() -> Self {
        Numerics {
            cap: DEFAULT_SUPPORT_CAP,
            mc_draws: None,
            seed: 0,
        }
    }
}

/// Validated estimation problem: designs, key map, estimand and its plan.
///
/// Fields are read-only by convention: weight covariances derived from them
/// are cached on first use.
#[derive(Clone, Debug)]
pub struct Analysis {
    pub designs: Vec<AssignmentLaw>,
    pub keys: KeyMap,
    pub estimand: Estimand,
    pub signs: Vec<f64>,
    pub clusters: Vec<ClusterPlan>,
    pub numerics: Numerics,
    kernels: Arc<Vec<OnceLock<Arc<ClusterKernel>>>>,
}

impl Analysis {
    pub fn new(
        designs: Vec<AssignmentLaw>,
        keys: KeyMap,
        estimand: Estimand,
        numerics: Numerics,
    ) -> Result<Self> {
        if designs.len() != keys.k() {
            return Err(Error::Structural(format!(
                "{} designs for {} clusters",
                designs.len(),
                keys.k()
            )));
        }
        let mut clusters = Vec::with_capacity(designs.len());
        let mut signs: Option<Vec<f64>> = None;
        for (k, (f, ck)) in designs.iter().zip(keys.clusters()).enumerate() {
            if f.n() != ck.n() {
                return Err(Error::Structural(format!(
                    "cluster {k}: design over {} units, key map over {}",
                    f.n(),
                    ck.n()
                )));
            }
            let arms = estimand.arms(k, f)?;
            let s: Vec<f64> = arms.iter().map(|(s, _)| *s).collect();
            signs.get_or_insert(s);
            let arms = arms
                .into_iter()
                .map(|(_, pi)| plan_arm(k, f, ck, &pi, numerics.cap))
                .collect::<Result<Vec<_>>>()?;
            clusters.push(ClusterPlan {
                n: ck.n(),
                targets: ck.targets(),
                arms,
            });
        }
        Ok(Analysis {
            designs,
            keys,
            estimand,
            signs: signs.unwrap_or_default(),
            kernels: Arc::new((0..clusters.len()).map(|_| OnceLock::new()).collect()),
            clusters,
            numerics,
        })
    }

    /// Weight covariances of cluster `k`, computed once.
    pub(crate) fn kernel(&self, k: usize) -> Result<Arc<ClusterKernel>> {
        if let Some(kern) = self.kernels[k].get() {
            return Ok(kern.clone());
        }
        let kern = Arc::new(ClusterKernel::new(self, k)?);
        Ok(self.kernels[k].get_or_init(|| kern).clone())
    }

    pub fn k(&self) -> usize {
        self.clusters.len()
    }

    pub fn arm_count(&self) -> usize {
        self.signs.len()
    }
}

fn plan_arm(
    k: usize,
    f: &AssignmentLaw,
    ck: &ClusterKeys,
    pi: &Intervention,
    cap: usize,
) -> Result<ArmPlan> {
    if pi.base.n() != f.n() {
        return Err(Error::Structural(format!(
            "cluster {k}: intervention over {} units, design over {}",
            pi.base.n(),
            f.n()
        )));
    }
    let mut by_event: BTreeMap<Event, usize> = BTreeMap::new();
    let mut groups: Vec<Group> = Vec::new();
    for j in 0..ck.targets() {
        let keys = ck.keys(j);
        let event = pi.unit_event(keys)?;
        match by_event.get(&event) {
            Some(&g) => {
                let grp = &mut groups[g];
                grp.members.push(j);
                if grp.keys.as_deref() != Some(keys) {
                    grp.keys = None;
                }
            }
            None => {
                by_event.insert(event.clone(), groups.len());
                groups.push(Group {
                    observe: pi.observation_event(keys)?,
                    event,
                    members: vec![j],
                    keys: Some(keys.to_vec()),
                    mass: 0.0,
                });
            }
        }
    }
    let base_within = pi.base.support_within(f, cap)?;
    for g in &mut groups {
        g.mass = pi.base.prob(&g.event)?;
        if g.mass <= 0.0 {
            return Err(Error::Overlap(format!(
                "cluster {k}, target {}: admissible set has probability 0 under the intervention",
                g.members[0]
            )));
        }
        if !base_within {
            let law = pi.base.restrict(&g.event)?;
            if !law.support_within(f, cap)? {
                return Err(Error::Overlap(format!(
                    "cluster {k}, target {}: intervention support is not contained in the design support",
                    g.members[0]
                )));
            }
        }
    }
    Ok(ArmPlan {
        base: pi.base.clone(),
        groups,
    })
}
