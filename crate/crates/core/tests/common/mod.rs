//! Random small instances shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use netexp::{
    Admissible, AssignmentLaw, Error, Estimand, Intervention, KeyMap, Numerics, PotentialTable,
    Result, UnitPotential,
};
use netexp::Analysis;
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DesignKind {
    Complete,
    Bernoulli,
    Stratified,
}

pub const ALL_DESIGNS: [DesignKind; 3] = [DesignKind::Complete, DesignKind::Bernoulli, DesignKind::Stratified];
pub const FIXED_TOTAL_DESIGNS: [DesignKind; 2] = [DesignKind::Complete, DesignKind::Stratified];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableKind {
    /// Arbitrary dependence on the whole assignment.
    General,
    /// Key arm and treated count.
    Stratified,
    /// Key arm and treated count with equal values in both arms.
    StratifiedNoEffect,
    /// Treated key count and treated count.
    MultiStratified,
    Additive,
}

/// Designs, key map and potential table of a random instance.
#[derive(Clone, Debug)]
pub struct Instance {
    pub designs: Vec<AssignmentLaw>,
    pub keys: KeyMap,
    pub key_lists: Vec<Vec<Vec<usize>>>,
    pub table: PotentialTable,
    /// Additive coefficients when the table is additive: `betas[k][j]`.
    pub betas: Option<Vec<Vec<Vec<f64>>>>,
}

fn value<R: Rng>(rng: &mut R) -> f64 {
    rng.random_range(-2.0..2.0)
}

pub fn random_design<R: Rng>(rng: &mut R, n: usize, kind: DesignKind) -> AssignmentLaw {
    match kind {
        DesignKind::Complete => AssignmentLaw::complete(n, rng.random_range(1..n)).unwrap(),
        DesignKind::Bernoulli => {
            let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..0.8)).collect();
            AssignmentLaw::bernoulli(&p).unwrap()
        }
        DesignKind::Stratified => {
            let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
            let mut treated = BTreeMap::new();
            for l in 0..2u8 {
                let size = labels.iter().filter(|&&x| x == l).count();
                treated.insert(l, rng.random_range(0..=size));
            }
            AssignmentLaw::stratified(&labels, &treated).unwrap()
        }
    }
}

/// Bernoulli design whose probabilities are constant within two strata.
pub fn stratified_bernoulli<R: Rng>(rng: &mut R, n: usize) -> AssignmentLaw {
    let q = [rng.random_range(0.2..0.8), rng.random_range(0.2..0.8)];
    let p: Vec<f64> = (0..n).map(|_| q[rng.random_range(0..2)]).collect();
    AssignmentLaw::bernoulli(&p).unwrap()
}

fn random_keys<R: Rng>(rng: &mut R, n: usize, targets: usize, multi: bool) -> Vec<Vec<usize>> {
    (0..targets)
        .map(|_| {
            let size = if multi { rng.random_range(1..=n.min(3)) } else { 1 };
            let mut ks = sample(rng, n, size).into_vec();
            ks.sort_unstable();
            ks
        })
        .collect()
}

fn random_potential<R: Rng>(rng: &mut R, n: usize, keys: &[usize], kind: TableKind) -> UnitPotential {
    match kind {
        TableKind::General => {
            let vals: Vec<f64> = (0..1usize << n).map(|_| value(rng)).collect();
            UnitPotential::Dense(vals)
        }
        TableKind::Stratified => UnitPotential::Stratified {
            key: keys[0],
            values: [
                (0..=n).map(|_| value(rng)).collect(),
                (0..=n).map(|_| value(rng)).collect(),
            ],
        },
        TableKind::StratifiedNoEffect => {
            let v: Vec<f64> = (0..=n).map(|_| value(rng)).collect();
            UnitPotential::Stratified {
                key: keys[0],
                values: [v.clone(), v],
            }
        }
        TableKind::MultiStratified => UnitPotential::MultiStratified {
            keys: keys.to_vec(),
            values: (0..=keys.len())
                .map(|_| (0..=n).map(|_| value(rng)).collect())
                .collect(),
        },
        TableKind::Additive => UnitPotential::Additive((0..=n).map(|_| value(rng)).collect()),
    }
}

/// Shape limits of a random instance.
#[derive(Clone, Debug)]
pub struct Shape {
    pub max_clusters: usize,
    pub n: (usize, usize),
    pub max_targets: usize,
    pub designs: Vec<DesignKind>,
    pub table: TableKind,
    pub multi_key: bool,
}

impl Shape {
    pub fn new(designs: &[DesignKind], table: TableKind) -> Self {
        Shape {
            max_clusters: 2,
            n: (2, 5),
            max_targets: 6,
            designs: designs.to_vec(),
            table,
            multi_key: table == TableKind::MultiStratified,
        }
    }
}

pub fn random_instance<R: Rng>(rng: &mut R, shape: &Shape) -> Instance {
    let k = rng.random_range(1..=shape.max_clusters);
    let mut designs = Vec::with_capacity(k);
    let mut key_lists = Vec::with_capacity(k);
    let mut table = Vec::with_capacity(k);
    let mut betas = Vec::with_capacity(k);
    for _ in 0..k {
        let n = rng.random_range(shape.n.0..=shape.n.1);
        let kind = shape.designs[rng.random_range(0..shape.designs.len())];
        designs.push(random_design(rng, n, kind));
        let targets = rng.random_range(1..=shape.max_targets);
        let keys = random_keys(rng, n, targets, shape.multi_key);
        let units: Vec<UnitPotential> = keys
            .iter()
            .map(|ks| random_potential(rng, n, ks, shape.table))
            .collect();
        betas.push(
            units
                .iter()
                .filter_map(|u| match u {
                    UnitPotential::Additive(b) => Some(b.clone()),
                    _ => None,
                })
                .collect::<Vec<_>>(),
        );
        table.push(units);
        key_lists.push(keys);
    }
    let ns: Vec<usize> = designs.iter().map(|f| f.n()).collect();
    Instance {
        keys: KeyMap::from_lists(&ns, key_lists.clone()).unwrap(),
        designs,
        key_lists,
        table: PotentialTable::new(table),
        betas: (shape.table == TableKind::Additive).then_some(betas),
    }
}

/// Random admissible rule of the kinds used for unbiasedness checks.
pub fn random_rule<R: Rng>(rng: &mut R, n: usize) -> Option<Admissible> {
    match rng.random_range(0..4) {
        0 => None,
        1 => Some(Admissible::Unrestricted),
        2 => Some(Admissible::KeyTreated(rng.random_range(0..2))),
        _ => {
            let _ = n;
            Some(Admissible::KeyProportion([0.0, 0.5, 1.0][rng.random_range(0..3)]))
        }
    }
}

/// Group-share rule over a random subset of units.
pub fn random_group_rule<R: Rng>(rng: &mut R, n: usize) -> Admissible {
    let size = rng.random_range(0..=n);
    let mut members = sample(rng, n, size).into_vec();
    members.sort_unstable();
    Admissible::GroupProportion {
        members,
        alpha: [0.0, 0.25, 0.5, 0.75, 1.0][rng.random_range(0..5)],
    }
}

/// Intervention on the design: either the design itself or the design
/// conditioned on a random group share.
pub fn random_restriction<R: Rng>(rng: &mut R, designs: &[AssignmentLaw]) -> Vec<Intervention> {
    designs
        .iter()
        .map(|f| {
            if rng.random_bool(0.5) {
                Intervention::unrestricted(f.clone())
            } else {
                Intervention::new(f.clone(), vec![random_group_rule(rng, f.n())])
            }
        })
        .collect()
}

/// Intervention with a base law that differs from a Bernoulli design and a random rule.
pub fn random_intervention<R: Rng>(rng: &mut R, designs: &[AssignmentLaw]) -> Vec<Intervention> {
    designs
        .iter()
        .map(|f| {
            let n = f.n();
            let base = if f.fixed_total().is_none() && rng.random_bool(0.5) {
                if rng.random_bool(0.5) {
                    random_design(rng, n, DesignKind::Bernoulli)
                } else {
                    AssignmentLaw::complete(n, rng.random_range(0..=n)).unwrap()
                }
            } else {
                f.clone()
            };
            Intervention::new(base, random_rule(rng, n).into_iter().collect())
        })
        .collect()
}

pub fn analysis(inst: &Instance, estimand: Estimand) -> Result<Analysis> {
    Analysis::new(inst.designs.clone(), inst.keys.clone(), estimand, Numerics::default())
}

/// Draws instances until `build` accepts one; rejects overlap failures only.
pub fn accepted<R: Rng, T>(
    rng: &mut R,
    shape: &Shape,
    mut build: impl FnMut(&mut R, &Instance) -> Result<T>,
) -> (Instance, T) {
    for _ in 0..10_000 {
        let inst = random_instance(rng, shape);
        match build(rng, &inst) {
            Ok(t) => return (inst, t),
            Err(Error::Overlap(_) | Error::NonMeasurable(_) | Error::DegenerateConditioning(_)) => continue,
            Err(e) => panic!("unexpected error building an instance: {e}"),
        }
    }
    panic!("no admissible instance in 10000 draws");
}

/// `|a - b| <= tol * max(1, |b|)`.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}
