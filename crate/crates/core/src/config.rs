//! JSON analysis configuration: designs, interventions, estimands and methods.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::design::{nearest_count, Assignment, AssignmentLaw};
use crate::error::{Error, Result};
use crate::estimand::{Admissible, Estimand, Intervention};
use crate::frame::{ClusterFrame, ExperimentFrame};
use crate::io::intervention_covariate;
use crate::variance::{Distance, LipschitzConstant, LipschitzSpec};

/// A single value or a list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(x) => vec![x.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

/// Support point of an explicit design: a 0/1 string and its probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportPoint {
    pub a: String,
    pub p: f64,
}

/// Assignment law of one cluster's intervention units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignSpec {
    /// Complete randomization with a treated count or a treated share.
    Complete {
        #[serde(default)]
        treated: Option<usize>,
        #[serde(default)]
        share: Option<f64>,
    },
    Bernoulli { p: f64 },
    /// Complete randomization within the levels of a covariate.
    Stratified {
        by: String,
        #[serde(default)]
        treated: Option<BTreeMap<String, usize>>,
        #[serde(default)]
        share: Option<f64>,
    },
    Explicit { support: Vec<SupportPoint> },
}

fn count_for(n: usize, treated: Option<usize>, share: Option<f64>, what: &str) -> Result<usize> {
    match (treated, share) {
        (Some(t), None) => Ok(t),
        (None, Some(p)) if (0.0..=1.0).contains(&p) => Ok(nearest_count(n, p)),
        (None, Some(p)) => Err(Error::Schema(format!("{what}: share {p} outside [0, 1]"))),
        _ => Err(Error::Schema(format!("{what}: give exactly one of treated and share"))),
    }
}

fn parse_support(a: &str, n: usize) -> Result<Assignment> {
    let v: Option<Assignment> = a
        .chars()
        .map(|c| match c {
            '0' => Some(0),
            '1' => Some(1),
            _ => None,
        })
        .collect();
    match v {
        Some(v) if v.len() == n => Ok(v),
        _ => Err(Error::Schema(format!(
            "support point {a:?} is not a 0/1 string of length {n}"
        ))),
    }
}

impl DesignSpec {
    pub fn law(&self, cluster: &ClusterFrame) -> Result<AssignmentLaw> {
        let n = cluster.n();
        match self {
            DesignSpec::Complete { treated, share } => {
                AssignmentLaw::complete(n, count_for(n, *treated, *share, "complete design")?)
            }
            DesignSpec::Bernoulli { p } => AssignmentLaw::bernoulli(&vec![*p; n]),
            DesignSpec::Stratified { by, treated, share } => {
                let labels = intervention_covariate(cluster, by)?;
                let mut sizes: BTreeMap<String, usize> = BTreeMap::new();
                for l in &labels {
                    *sizes.entry(l.clone()).or_default() += 1;
                }
                let counts = match (treated, share) {
                    (Some(t), None) => t.clone(),
                    _ => sizes
                        .iter()
                        .map(|(l, &m)| Ok((l.clone(), count_for(m, None, *share, "stratified design")?)))
                        .collect::<Result<_>>()?,
                };
                AssignmentLaw::stratified(&labels, &counts)
            }
            DesignSpec::Explicit { support } => AssignmentLaw::explicit(
                n,
                support
                    .iter()
                    .map(|s| Ok((parse_support(&s.a, n)?, s.p)))
                    .collect::<Result<_>>()?,
            ),
        }
    }
}

/// Admissible-set rule of an intervention.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum RuleSpec {
    KeyTreated { arm: u8 },
    KeyProportion { p_star: f64 },
    /// Treated share `alpha` among intervention units whose 0/1 covariate
    /// `group` equals 1.
    GroupProportion { group: String, alpha: f64 },
    Unrestricted,
}

impl RuleSpec {
    fn rule(&self, cluster: &ClusterFrame) -> Result<Admissible> {
        Ok(match self {
            RuleSpec::KeyTreated { arm } => Admissible::KeyTreated(*arm),
            RuleSpec::KeyProportion { p_star } => Admissible::KeyProportion(*p_star),
            RuleSpec::GroupProportion { group, alpha } => {
                let labels = intervention_covariate(cluster, group)?;
                let mut members = Vec::new();
                for (i, l) in labels.iter().enumerate() {
                    match l.as_str() {
                        "1" => members.push(i),
                        "0" => {}
                        other => {
                            return Err(Error::Schema(format!(
                                "group column {group:?} must be 0 or 1, got {other:?}"
                            )))
                        }
                    }
                }
                Admissible::GroupProportion { members, alpha: *alpha }
            }
            RuleSpec::Unrestricted => Admissible::Unrestricted,
        })
    }
}

/// Stochastic intervention: a base law (the design when absent) and rules.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterventionSpec {
    #[serde(default)]
    pub base: Option<DesignSpec>,
    #[serde(default)]
    pub rules: Vec<RuleSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimandSpec {
    Tau,
    Mu { arm: u8 },
    De,
    Ie { arm: u8 },
    Te,
    TauMulti { p_star: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Ht,
    Hajek,
}

impl EstimatorKind {
    pub fn label(&self) -> &'static str {
        match self {
            EstimatorKind::Ht => "ht",
            EstimatorKind::Hajek => "hajek",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceMethod {
    #[default]
    Stratified,
    Additive,
    Lipschitz,
    CrSpecial,
}

impl VarianceMethod {
    pub fn label(&self) -> &'static str {
        match self {
            VarianceMethod::Stratified => "stratified",
            VarianceMethod::Additive => "additive",
            VarianceMethod::Lipschitz => "lipschitz",
            VarianceMethod::CrSpecial => "cr-special",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceSpec {
    #[default]
    L1,
}

/// Smoothness assumption: constant `c / sqrt(n)` and `|Y| <= outcome_bound`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LipschitzConfig {
    pub c: f64,
    #[serde(default)]
    pub distance: DistanceSpec,
    pub outcome_bound: f64,
}

impl LipschitzConfig {
    pub fn spec(&self) -> LipschitzSpec {
        LipschitzSpec {
            constant: LipschitzConstant::Scaled(self.c),
            distance: match self.distance {
                DistanceSpec::L1 => Distance::L1,
            },
            outcome_bound: self.outcome_bound,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub alphas: Vec<f64>,
}

fn default_estimator() -> OneOrMany<EstimatorKind> {
    OneOrMany::One(EstimatorKind::Ht)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Design of every cluster without an override.
    pub design: DesignSpec,
    #[serde(default)]
    pub cluster_designs: BTreeMap<String, DesignSpec>,
    /// Intervention; the design itself when absent.
    #[serde(default)]
    pub intervention: Option<InterventionSpec>,
    /// Second intervention, for indirect and total effects.
    #[serde(default)]
    pub intervention_alt: Option<InterventionSpec>,
    pub estimand: OneOrMany<EstimandSpec>,
    #[serde(default = "default_estimator")]
    pub estimator: OneOrMany<EstimatorKind>,
    #[serde(default)]
    pub variance: VarianceMethod,
    #[serde(default)]
    pub lipschitz: Option<LipschitzConfig>,
    /// Confidence-interval level: intervals cover with probability `1 - alpha`.
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Largest support enumerated exactly.
    #[serde(default)]
    pub cap: Option<usize>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

impl AnalysisConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Schema(format!("analysis config: {e}")))
    }

    pub fn designs(&self, frame: &ExperimentFrame) -> Result<Vec<AssignmentLaw>> {
        for id in self.cluster_designs.keys() {
            if frame.cluster_index(id).is_none() {
                return Err(Error::Integrity(format!("design override for unknown cluster {id}")));
            }
        }
        frame
            .clusters
            .iter()
            .map(|c| {
                self.cluster_designs
                    .get(&c.id)
                    .unwrap_or(&self.design)
                    .law(c)
            })
            .collect()
    }

    fn build_interventions(
        spec: Option<&InterventionSpec>,
        frame: &ExperimentFrame,
        designs: &[AssignmentLaw],
    ) -> Result<Vec<Intervention>> {
        let Some(spec) = spec else {
            return Ok(Intervention::from_laws(designs));
        };
        frame
            .clusters
            .iter()
            .zip(designs)
            .map(|(c, f)| {
                let base = match &spec.base {
                    Some(b) => b.law(c)?,
                    None => f.clone(),
                };
                let rules = spec.rules.iter().map(|r| r.rule(c)).collect::<Result<_>>()?;
                Ok(Intervention::new(base, rules))
            })
            .collect()
    }

    pub fn estimand(
        &self,
        spec: &EstimandSpec,
        frame: &ExperimentFrame,
        designs: &[AssignmentLaw],
    ) -> Result<Estimand> {
        let pi = || Self::build_interventions(self.intervention.as_ref(), frame, designs);
        let alt = || match &self.intervention_alt {
            Some(s) => Self::build_interventions(Some(s), frame, designs),
            None => Err(Error::Schema(
                "indirect and total effects need intervention_alt".into(),
            )),
        };
        Ok(match spec {
            EstimandSpec::Tau => Estimand::tau(pi()?),
            EstimandSpec::Mu { arm } => Estimand::mu(*arm, pi()?),
            EstimandSpec::De => Estimand::de(pi()?),
            EstimandSpec::Ie { arm } => Estimand::ie(*arm, pi()?, alt()?),
            EstimandSpec::Te => Estimand::te(pi()?, alt()?),
            EstimandSpec::TauMulti { p_star } => Estimand::tau_multi(*p_star),
        })
    }

    /// Copy with every group-proportion share set to `alpha`.
    pub fn with_group_share(&self, alpha: f64) -> Result<Self> {
        let mut out = self.clone();
        let mut found = false;
        for spec in [&mut out.intervention, &mut out.intervention_alt].into_iter().flatten() {
            for r in &mut spec.rules {
                if let RuleSpec::GroupProportion { alpha: a, .. } = r {
                    *a = alpha;
                    found = true;
                }
            }
        }
        if !found {
            return Err(Error::Schema(
                "a sweep needs a group_proportion rule in an intervention".into(),
            ));
        }
        Ok(out)
    }
}
