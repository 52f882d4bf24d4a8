//! Monte Carlo study of the HT and Hájek estimators of the treated mean and
//! the direct effect in bipartite clusters.
//!
//! Each cluster has `n` intervention units with covariates `(W1, W2, W3)` and
//! `m` target units, each keyed to one intervention unit drawn uniformly. The
//! population is generated once per seed; replications redraw assignments only.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{nearest_count, Assignment, AssignmentLaw};
use crate::error::{Error, Result};
use crate::estimand::{Analysis, Estimand, Intervention, Numerics};
use crate::estimators::Observed;
use crate::frame::KeyMap;
use crate::oracle::{exact_estimand, PotentialTable, UnitPotential};
use crate::report::critical_value;
use crate::variance::{var_de_stratified_hat, var_hajek_hat, var_mu_stratified_hat, HajekMode};

/// Outcome model of a target unit given its key unit's arm and covariates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutcomeModel {
    /// Homogeneous key-arm effect.
    M1,
    /// Key-arm effect varying with `W1 + W2`.
    M2,
}

impl OutcomeModel {
    /// Outcome at key arm `a`, treated share `p` and key covariates `w`.
    pub fn outcome(self, a: u8, p: f64, w: [f64; 3]) -> f64 {
        let a = a as f64;
        let base = 5.0 - 2.5 * a - 1.5 * p + w[0] - 0.5 * w[1] + 3.0 * w[2] + a * p;
        match self {
            OutcomeModel::M1 => base,
            OutcomeModel::M2 => base + 2.0 * (w[0] + w[1]) * a,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            OutcomeModel::M1 => "M1",
            OutcomeModel::M2 => "M2",
        }
    }
}

/// Stochastic intervention of the study; the design is always complete
/// randomization with equal allocation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimIntervention {
    /// Equal to the design.
    Pi1,
    /// Equal allocation within the strata of `W3`.
    Pi2,
}

impl SimIntervention {
    pub fn label(self) -> &'static str {
        match self {
            SimIntervention::Pi1 => "pi1",
            SimIntervention::Pi2 => "pi2",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub k: usize,
    pub n: usize,
    pub m: usize,
    pub model: OutcomeModel,
    pub intervention: SimIntervention,
    pub reps: usize,
    pub seed: u64,
    pub alpha: f64,
    /// Largest number of draws per replication before it counts as failed.
    pub rerandomize_cap: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            k: 50,
            n: 32,
            m: 50,
            model: OutcomeModel::M1,
            intervention: SimIntervention::Pi1,
            reps: 1000,
            seed: 0,
            alpha: 0.05,
            rerandomize_cap: 1000,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.m == 0 {
            return Err(Error::Structural("simulation needs K >= 1 and m_k >= 1".into()));
        }
        if self.n < 2 || !self.n.is_multiple_of(2) {
            return Err(Error::Structural(format!(
                "n_k = {} must be even so that W3 and the allocation split it in half",
                self.n
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Structural(format!("alpha = {} outside (0, 1)", self.alpha)));
        }
        if self.rerandomize_cap == 0 {
            return Err(Error::Structural("rerandomize_cap must be positive".into()));
        }
        Ok(())
    }
}

/// Grid of configurations sharing reps, seed, alpha and cap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimGrid {
    pub k: Vec<usize>,
    pub n: usize,
    pub m: Vec<usize>,
    pub models: Vec<OutcomeModel>,
    pub interventions: Vec<SimIntervention>,
    pub reps: usize,
    pub seed: u64,
    pub alpha: f64,
    pub rerandomize_cap: usize,
}

impl Default for SimGrid {
    fn default() -> Self {
        let c = SimConfig::default();
        SimGrid {
            k: vec![10, 50],
            n: c.n,
            m: vec![50, 100, 250, 500],
            models: vec![OutcomeModel::M1, OutcomeModel::M2],
            interventions: vec![SimIntervention::Pi1, SimIntervention::Pi2],
            reps: c.reps,
            seed: c.seed,
            alpha: c.alpha,
            rerandomize_cap: c.rerandomize_cap,
        }
    }
}

impl SimGrid {
    /// Configurations in `K`, `m_k`, model, intervention order.
    pub fn configs(&self) -> Vec<SimConfig> {
        let mut out = Vec::new();
        for &k in &self.k {
            for &m in &self.m {
                for &model in &self.models {
                    for &intervention in &self.interventions {
                        out.push(SimConfig {
                            k,
                            n: self.n,
                            m,
                            model,
                            intervention,
                            reps: self.reps,
                            seed: self.seed,
                            alpha: self.alpha,
                            rerandomize_cap: self.rerandomize_cap,
                        });
                    }
                }
            }
        }
        out
    }
}

/// Random-stream domains; streams never overlap across domains.
#[derive(Clone, Copy)]
enum Domain {
    Population = 1,
    Assignment = 2,
}

/// Generator for `(domain, rep, cluster)`, independent of scheduling.
fn stream(seed: u64, domain: Domain, rep: u64, cluster: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((domain as u64) << 60) | ((rep & 0xF_FFFF_FFFF) << 24) | (cluster & 0xFF_FFFF));
    rng
}

/// Fixed finite population of the study.
#[derive(Clone, Debug)]
pub struct Population {
    pub designs: Vec<AssignmentLaw>,
    pub interventions: Vec<Intervention>,
    pub keys: KeyMap,
    /// `(W1, W2, W3)` of every intervention unit.
    pub covariates: Vec<Vec<[f64; 3]>>,
    pub table: PotentialTable,
}

impl Population {
    pub fn analysis(&self, estimand: Estimand) -> Result<Analysis> {
        Analysis::new(self.designs.clone(), self.keys.clone(), estimand, Numerics::default())
    }
}

pub fn generate_population(config: &SimConfig) -> Result<Population> {
    config.validate()?;
    let n = config.n;
    let f = AssignmentLaw::complete(n, n / 2)?;
    let mut designs = Vec::with_capacity(config.k);
    let mut interventions = Vec::with_capacity(config.k);
    let mut covariates = Vec::with_capacity(config.k);
    let mut key_lists = Vec::with_capacity(config.k);
    let mut table = Vec::with_capacity(config.k);
    for k in 0..config.k {
        let mut rng = stream(config.seed, Domain::Population, 0, k as u64);
        let mut w: Vec<[f64; 3]> = (0..n)
            .map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal), 0.0])
            .collect();
        for i in sample(&mut rng, n, n / 2) {
            w[i][2] = 1.0;
        }
        let keys: Vec<usize> = (0..config.m).map(|_| rng.random_range(0..n)).collect();
        let pi = match config.intervention {
            SimIntervention::Pi1 => f.clone(),
            SimIntervention::Pi2 => {
                let labels: Vec<u8> = w.iter().map(|x| x[2] as u8).collect();
                let half = nearest_count(n / 2, 0.5);
                AssignmentLaw::stratified(&labels, &[(0, half), (1, half)].into_iter().collect())?
            }
        };
        table.push(
            keys.iter()
                .map(|&i| UnitPotential::Stratified {
                    key: i,
                    values: [0u8, 1].map(|a| {
                        (0..=n)
                            .map(|t| config.model.outcome(a, t as f64 / n as f64, w[i]))
                            .collect()
                    }),
                })
                .collect(),
        );
        key_lists.push(keys.into_iter().map(|i| vec![i]).collect());
        designs.push(f.clone());
        interventions.push(Intervention::unrestricted(pi));
        covariates.push(w);
    }
    Ok(Population {
        designs,
        interventions,
        keys: KeyMap::from_lists(&vec![n; config.k], key_lists)?,
        covariates,
        table: PotentialTable::new(table),
    })
}

/// Estimand and estimator pairs reported by the study, in output order.
pub const SERIES: [(&str, &str); 4] = [("mu1", "ht"), ("mu1", "hajek"), ("de", "ht"), ("de", "hajek")];

/// Point estimates and raw variance estimates of one replication, in [`SERIES`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Replication {
    pub points: [f64; 4],
    pub variances: [f64; 4],
    /// Draws rejected before acceptance.
    pub redraws: usize,
}

/// Analyses of the treated mean and the direct effect with their true values.
pub struct Study {
    pub config: SimConfig,
    pub population: Population,
    pub mu1: Analysis,
    pub de: Analysis,
    pub truth_mu1: f64,
    pub truth_de: f64,
}

impl Study {
    pub fn new(config: &SimConfig) -> Result<Self> {
        let population = generate_population(config)?;
        let mu1 = population.analysis(Estimand::mu(1, population.interventions.clone()))?;
        let de = population.analysis(Estimand::de(population.interventions.clone()))?;
        let truth_mu1 = exact_estimand(&mu1, &population.table)?;
        let truth_de = exact_estimand(&de, &population.table)?;
        Ok(Study {
            config: config.clone(),
            population,
            mu1,
            de,
            truth_mu1,
            truth_de,
        })
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<Assignment> {
        self.population.designs.iter().map(|f| f.sample(rng)).collect()
    }

    fn evaluate(&self, obs: &Observed) -> Result<([f64; 4], [f64; 4])> {
        let mu_ht = self.mu1.ht(obs)?.point;
        let mu_hj = self.mu1.hajek(obs)?.point;
        let de_ht = self.de.ht(obs)?.point;
        let de_hj = self.de.hajek(obs)?.point;
        let points = [mu_ht, mu_hj, de_ht, de_hj];
        let variances = [
            var_mu_stratified_hat(&self.mu1, obs)?,
            var_hajek_hat(&self.mu1, obs, HajekMode::Stratified)?.value,
            var_de_stratified_hat(&self.de, obs)?,
            var_hajek_hat(&self.de, obs, HajekMode::Stratified)?.value,
        ];
        Ok((points, variances))
    }

    /// One replication; draws are rejected while any Hájek estimate is undefined.
    /// `Ok(None)` when the cap is exhausted.
    pub fn replicate(&self, rep: usize) -> Result<Option<Replication>> {
        let mut rng = stream(self.config.seed, Domain::Assignment, rep as u64, 0);
        for redraws in 0..self.config.rerandomize_cap {
            let obs = self.population.table.observe(&self.draw(&mut rng))?;
            match self.evaluate(&obs) {
                Ok((points, variances)) => {
                    return Ok(Some(Replication {
                        points,
                        variances,
                        redraws,
                    }))
                }
                Err(Error::Undefined(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        Ok(None)
    }

    pub fn truth(&self, series: usize) -> f64 {
        if series < 2 {
            self.truth_mu1
        } else {
            self.truth_de
        }
    }
}

/// Aggregated performance of one estimator.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimResultRow {
    #[serde(rename = "K")]
    pub k: usize,
    pub m_k: usize,
    pub model: String,
    pub intervention: String,
    pub estimand: String,
    pub estimator: String,
    pub bias: f64,
    pub emp_se: f64,
    pub mean_se_hat: f64,
    pub coverage: f64,
    pub ci_length: f64,
    pub reps_ok: usize,
    pub reps_failed: usize,
    #[serde(skip)]
    pub truth: f64,
    #[serde(skip)]
    pub seed: u64,
}

/// Result rows of one configuration with diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct SimSummary {
    pub rows: Vec<SimResultRow>,
    pub redraws: usize,
    pub warnings: Vec<String>,
}

/// Folds replications in rep order into one row per [`SERIES`] entry.
pub fn aggregate(study: &Study, reps: &[Option<Replication>]) -> Result<SimSummary> {
    let ok: Vec<&Replication> = reps.iter().flatten().collect();
    let failed = reps.len() - ok.len();
    if ok.len() < 2 {
        return Err(Error::Undefined(format!(
            "{} of {} replications succeeded; aggregation needs two",
            ok.len(),
            reps.len()
        )));
    }
    let c = &study.config;
    let z = critical_value(c.alpha)?;
    let count = ok.len() as f64;
    let mut warnings = Vec::new();
    let mut rows = Vec::with_capacity(SERIES.len());
    for (s, (estimand, estimator)) in SERIES.iter().enumerate() {
        let truth = study.truth(s);
        let points: Vec<f64> = ok.iter().map(|r| r.points[s]).collect();
        let ses: Vec<f64> = ok.iter().map(|r| r.variances[s].max(0.0).sqrt()).collect();
        let mean = points.iter().sum::<f64>() / count;
        let emp_se =
            (points.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1.0)).sqrt();
        if emp_se == 0.0 {
            warnings.push(format!("{estimand}/{estimator}: empirical SE is zero"));
        }
        let covered = points
            .iter()
            .zip(&ses)
            .filter(|(p, se)| (*p - truth).abs() <= z * *se)
            .count();
        rows.push(SimResultRow {
            k: c.k,
            m_k: c.m,
            model: c.model.label().into(),
            intervention: c.intervention.label().into(),
            estimand: (*estimand).into(),
            estimator: (*estimator).into(),
            bias: mean - truth,
            emp_se,
            mean_se_hat: ses.iter().sum::<f64>() / count,
            coverage: covered as f64 / count,
            ci_length: 2.0 * z * ses.iter().sum::<f64>() / count,
            reps_ok: ok.len(),
            reps_failed: failed,
            truth,
            seed: c.seed,
        });
    }
    Ok(SimSummary {
        rows,
        redraws: ok.iter().map(|r| r.redraws).sum(),
        warnings,
    })
}

/// Runs every replication of one configuration; parallel over reps with an
/// order-preserving merge.
pub fn run_simulation(config: &SimConfig) -> Result<SimSummary> {
    let study = Study::new(config)?;
    let reps = (0..config.reps)
        .into_par_iter()
        .map(|r| study.replicate(r))
        .collect::<Result<Vec<_>>>()?;
    aggregate(&study, &reps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_outcome_examples() {
        assert_eq!(OutcomeModel::M1.outcome(1, 0.5, [0.0; 3]), 2.25);
        for a in [0, 1] {
            assert_eq!(
                OutcomeModel::M1.outcome(a, 0.5, [0.0, 0.0, 1.0]),
                OutcomeModel::M2.outcome(a, 0.5, [0.0, 0.0, 1.0])
            );
        }
    }

    #[test]
    fn population_balances_w3() {
        let cfg = SimConfig {
            k: 3,
            n: 8,
            m: 5,
            ..SimConfig::default()
        };
        let pop = generate_population(&cfg).unwrap();
        for w in &pop.covariates {
            assert_eq!(w.iter().filter(|x| x[2] == 1.0).count(), 4);
        }
        assert_eq!(pop.table.clusters[0].len(), 5);
        let again = generate_population(&cfg).unwrap();
        assert_eq!(pop.covariates, again.covariates);
        assert_eq!(pop.table, again.table);
    }

    #[test]
    fn replication_replays() {
        let cfg = SimConfig {
            k: 4,
            n: 8,
            m: 6,
            reps: 3,
            intervention: SimIntervention::Pi2,
            ..SimConfig::default()
        };
        let study = Study::new(&cfg).unwrap();
        assert_eq!(study.replicate(2).unwrap(), study.replicate(2).unwrap());
        assert_ne!(study.replicate(1).unwrap(), study.replicate(2).unwrap());
    }

    #[test]
    fn design_intervention_never_redraws() {
        let cfg = SimConfig {
            k: 2,
            n: 8,
            m: 6,
            reps: 20,
            ..SimConfig::default()
        };
        let study = Study::new(&cfg).unwrap();
        for r in 0..cfg.reps {
            assert_eq!(study.replicate(r).unwrap().unwrap().redraws, 0);
        }
    }
}
