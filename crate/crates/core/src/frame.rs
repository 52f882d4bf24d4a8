//! Experiment structure: clusters, unit rosters, target populations and the
//! key-intervention map.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// One unit row as supplied by the caller.
#[derive(Clone, Debug, PartialEq)]
pub struct Unit {
    pub id: String,
    pub eligible: bool,
    pub in_target: bool,
    pub covariates: BTreeMap<String, String>,
}

/// Units of one cluster; intervention positions follow file order of eligible units.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterFrame {
    pub id: String,
    pub units: Vec<Unit>,
    intervention: Vec<usize>,
    targets: Vec<usize>,
    index: BTreeMap<String, usize>,
}

impl ClusterFrame {
    pub fn new(id: impl Into<String>, units: Vec<Unit>) -> Result<Self> {
        let id = id.into();
        let mut index = BTreeMap::new();
        for (pos, u) in units.iter().enumerate() {
            if index.insert(u.id.clone(), pos).is_some() {
                return Err(Error::Integrity(format!(
                    "duplicate unit id {} in cluster {id}",
                    u.id
                )));
            }
        }
        let intervention: Vec<usize> = (0..units.len()).filter(|&p| units[p].eligible).collect();
        let targets: Vec<usize> = (0..units.len()).filter(|&p| units[p].in_target).collect();
        if intervention.is_empty() {
            return Err(Error::Integrity(format!(
                "cluster {id} has no intervention units"
            )));
        }
        Ok(ClusterFrame {
            id,
            units,
            intervention,
            targets,
            index,
        })
    }

    /// Number of intervention units.
    pub fn n(&self) -> usize {
        self.intervention.len()
    }

    /// Number of non-intervention units.
    pub fn m(&self) -> usize {
        self.units.len() - self.intervention.len()
    }

    /// Row positions of intervention units in roster order.
    pub fn intervention_rows(&self) -> &[usize] {
        &self.intervention
    }

    /// Row positions of target units.
    pub fn target_rows(&self) -> &[usize] {
        &self.targets
    }

    pub fn row_of(&self, unit_id: &str) -> Option<usize> {
        self.index.get(unit_id).copied()
    }

    /// Roster position of an intervention unit.
    pub fn intervention_position(&self, unit_id: &str) -> Option<usize> {
        let row = self.row_of(unit_id)?;
        self.intervention.binary_search(&row).ok()
    }

    /// Position of a unit within the target list.
    pub fn target_position(&self, unit_id: &str) -> Option<usize> {
        let row = self.row_of(unit_id)?;
        self.targets.binary_search(&row).ok()
    }
}

/// Ordered clusters of an experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentFrame {
    pub clusters: Vec<ClusterFrame>,
}

impl ExperimentFrame {
    pub fn new(clusters: Vec<ClusterFrame>) -> Result<Self> {
        if clusters.is_empty() {
            return Err(Error::Integrity("an experiment needs at least one cluster".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in &clusters {
            if !seen.insert(c.id.clone()) {
                return Err(Error::Integrity(format!("duplicate cluster id {}", c.id)));
            }
        }
        Ok(ExperimentFrame { clusters })
    }

    pub fn k(&self) -> usize {
        self.clusters.len()
    }

    pub fn cluster_index(&self, id: &str) -> Option<usize> {
        self.clusters.iter().position(|c| c.id == id)
    }
}

/// Key units of every target unit of one cluster, as intervention positions.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterKeys {
    n: usize,
    keys: Vec<Vec<usize>>,
}

impl ClusterKeys {
    pub fn new(n: usize, keys: Vec<Vec<usize>>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Integrity("cluster without intervention units".into()));
        }
        if keys.is_empty() {
            return Err(Error::Integrity("cluster without target units".into()));
        }
        let mut out = Vec::with_capacity(keys.len());
        for (j, mut ks) in keys.into_iter().enumerate() {
            ks.sort_unstable();
            ks.dedup();
            if ks.is_empty() {
                return Err(Error::Integrity(format!("target {j} has no key unit")));
            }
            if let Some(&bad) = ks.iter().find(|&&i| i >= n) {
                return Err(Error::Integrity(format!(
                    "target {j} keyed to unit {bad} outside 0..{n}"
                )));
            }
            out.push(ks);
        }
        Ok(ClusterKeys { n, keys: out })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn targets(&self) -> usize {
        self.keys.len()
    }

    pub fn keys(&self, j: usize) -> &[usize] {
        &self.keys[j]
    }

    pub fn all_keys(&self) -> &[Vec<usize>] {
        &self.keys
    }

    pub fn is_single_key(&self) -> bool {
        self.keys.iter().all(|k| k.len() == 1)
    }

    /// Number of targets keyed to each intervention unit.
    pub fn dependents(&self) -> Vec<usize> {
        let mut d = vec![0; self.n];
        for ks in &self.keys {
            for &i in ks {
                d[i] += 1;
            }
        }
        d
    }
}

/// Key-intervention map over all clusters.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyMap {
    clusters: Vec<ClusterKeys>,
}

impl KeyMap {
    pub fn new(clusters: Vec<ClusterKeys>) -> Result<Self> {
        if clusters.is_empty() {
            return Err(Error::Integrity("key map without clusters".into()));
        }
        Ok(KeyMap { clusters })
    }

    /// Shorthand from raw per-cluster key lists.
    pub fn from_lists(ns: &[usize], keys: Vec<Vec<Vec<usize>>>) -> Result<Self> {
        if ns.len() != keys.len() {
            return Err(Error::Structural(format!(
                "{} cluster sizes for {} key lists",
                ns.len(),
                keys.len()
            )));
        }
        Self::new(
            ns.iter()
                .zip(keys)
                .map(|(&n, k)| ClusterKeys::new(n, k))
                .collect::<Result<_>>()?,
        )
    }

    pub fn k(&self) -> usize {
        self.clusters.len()
    }

    pub fn cluster(&self, k: usize) -> &ClusterKeys {
        &self.clusters[k]
    }

    pub fn clusters(&self) -> &[ClusterKeys] {
        &self.clusters
    }

    pub fn is_single_key(&self) -> bool {
        self.clusters.iter().all(|c| c.is_single_key())
    }
}
