//! Probability laws over binary assignment vectors within one cluster.
//!
//! A law is either a product of independent blocks (complete, stratified and
//! Bernoulli designs), an explicit table, or a base law conditioned on an
//! [`Event`]. Event probabilities use closed forms on blocks and fall back to
//! enumeration only for tables and unrefinable restrictions.

use std::collections::BTreeMap;

use itertools::Itertools;
use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};

/// Default cap on the number of support vectors any enumeration may visit.
pub const DEFAULT_SUPPORT_CAP: usize = 1 << 20;

/// Binary treatment vector in intervention-roster order.
pub type Assignment = Vec<u8>;

/// Binomial coefficient as a float; zero outside `0 <= k <= n`.
pub fn choose(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    if acc < 9.0e15 {
        acc.round()
    } else {
        acc
    }
}

/// Conjunction of treated-count constraints `sum(a[u] for u in units) == count`.
///
/// Constraints are kept sorted and deduplicated so that equal events compare
/// equal; a pin is a constraint on a single unit.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Event {
    impossible: bool,
    constraints: Vec<(Vec<usize>, usize)>,
}

impl Event {
    /// The sure event.
    pub fn all() -> Self {
        Self::default()
    }

    /// The empty event.
    pub fn never() -> Self {
        Event {
            impossible: true,
            constraints: Vec::new(),
        }
    }

    /// Exactly `count` of `units` treated.
    pub fn count<I: IntoIterator<Item = usize>>(units: I, count: usize) -> Self {
        let units: Vec<usize> = units.into_iter().sorted().dedup().collect();
        if count > units.len() {
            return Self::never();
        }
        if units.is_empty() {
            return Self::all();
        }
        Event {
            impossible: false,
            constraints: vec![(units, count)],
        }
    }

    /// Unit `unit` has arm `arm`.
    pub fn pin(unit: usize, arm: u8) -> Self {
        Self::count([unit], arm as usize)
    }

    /// Conjunction of pins.
    pub fn pins(pins: &[(usize, u8)]) -> Self {
        pins.iter()
            .fold(Self::all(), |e, &(u, a)| e.and(&Self::pin(u, a)))
    }

    pub fn and(&self, other: &Event) -> Event {
        if self.impossible || other.impossible {
            return Self::never();
        }
        let mut merged: BTreeMap<&Vec<usize>, usize> = BTreeMap::new();
        for (units, c) in self.constraints.iter().chain(other.constraints.iter()) {
            if let Some(prev) = merged.insert(units, *c) {
                if prev != *c {
                    return Self::never();
                }
            }
        }
        Event {
            impossible: false,
            constraints: merged.into_iter().map(|(u, c)| (u.clone(), c)).collect(),
        }
    }

    pub fn is_impossible(&self) -> bool {
        self.impossible
    }

    pub fn is_all(&self) -> bool {
        !self.impossible && self.constraints.is_empty()
    }

    pub fn constraints(&self) -> &[(Vec<usize>, usize)] {
        &self.constraints
    }

    /// True when every constraint touches a single unit.
    pub fn is_pins(&self) -> bool {
        self.constraints.iter().all(|(u, _)| u.len() == 1)
    }

    pub fn contains(&self, a: &[u8]) -> bool {
        !self.impossible
            && self.constraints.iter().all(|(units, c)| {
                units.iter().map(|&u| a[u] as usize).sum::<usize>() == *c
            })
    }

    fn max_unit(&self) -> Option<usize> {
        self.constraints
            .iter()
            .filter_map(|(u, _)| u.last().copied())
            .max()
    }
}

/// Independent component of a block design.
#[derive(Clone, Debug, PartialEq)]
pub enum Block {
    /// Uniform over the `treated`-subsets of `units`.
    Fixed { units: Vec<usize>, treated: usize },
    /// Independent coin with success probability strictly inside (0, 1).
    Coin { unit: usize, p: f64 },
}

/// Product of independent blocks partitioning the units.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockDesign {
    n: usize,
    blocks: Vec<Block>,
    block_of: Vec<usize>,
}

impl BlockDesign {
    pub fn new(n: usize, blocks: Vec<Block>) -> Result<Self> {
        let mut normalized = Vec::with_capacity(blocks.len());
        for b in blocks {
            match b {
                Block::Fixed { mut units, treated } => {
                    units.sort_unstable();
                    if units.is_empty() {
                        continue;
                    }
                    if treated > units.len() {
                        return Err(Error::Structural(format!(
                            "block of {} units cannot have {treated} treated",
                            units.len()
                        )));
                    }
                    normalized.push(Block::Fixed { units, treated });
                }
                Block::Coin { unit, p } => {
                    if !(0.0..=1.0).contains(&p) {
                        return Err(Error::Structural(format!(
                            "treatment probability {p} outside [0, 1]"
                        )));
                    }
                    if p == 0.0 || p == 1.0 {
                        normalized.push(Block::Fixed {
                            units: vec![unit],
                            treated: p as usize,
                        });
                    } else {
                        normalized.push(Block::Coin { unit, p });
                    }
                }
            }
        }
        let mut block_of = vec![usize::MAX; n];
        for (b, block) in normalized.iter().enumerate() {
            let units: &[usize] = match block {
                Block::Fixed { units, .. } => units,
                Block::Coin { unit, .. } => std::slice::from_ref(unit),
            };
            for &u in units {
                if u >= n {
                    return Err(Error::Structural(format!("unit {u} out of range 0..{n}")));
                }
                if block_of[u] != usize::MAX {
                    return Err(Error::Structural(format!("unit {u} in two blocks")));
                }
                block_of[u] = b;
            }
        }
        if let Some(u) = block_of.iter().position(|&b| b == usize::MAX) {
            return Err(Error::Structural(format!("unit {u} in no block")));
        }
        Ok(BlockDesign {
            n,
            blocks: normalized,
            block_of,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    fn pmf(&self, a: &[u8]) -> f64 {
        let mut p = 1.0;
        for block in &self.blocks {
            match block {
                Block::Fixed { units, treated } => {
                    let t: usize = units.iter().map(|&u| a[u] as usize).sum();
                    if t != *treated {
                        return 0.0;
                    }
                    p /= choose(units.len(), *treated);
                }
                Block::Coin { unit, p: q } => {
                    p *= if a[*unit] == 1 { *q } else { 1.0 - q };
                }
            }
        }
        p
    }

    fn prob_event(&self, e: &Event) -> f64 {
        if e.impossible {
            return 0.0;
        }
        if e.constraints.is_empty() {
            return 1.0;
        }
        if e.is_pins() {
            self.prob_pins(e)
        } else {
            self.prob_counts(e)
        }
    }

    fn prob_pins(&self, e: &Event) -> f64 {
        // (block, pinned, pinned treated)
        let mut tally: Vec<(usize, usize, usize)> = Vec::with_capacity(e.constraints.len());
        let mut p = 1.0;
        for (units, c) in &e.constraints {
            let u = units[0];
            let b = self.block_of[u];
            match &self.blocks[b] {
                Block::Coin { p: q, .. } => p *= if *c == 1 { *q } else { 1.0 - q },
                Block::Fixed { .. } => match tally.iter_mut().find(|t| t.0 == b) {
                    Some(t) => {
                        t.1 += 1;
                        t.2 += c;
                    }
                    None => tally.push((b, 1, *c)),
                },
            }
        }
        for (b, t, x) in tally {
            let Block::Fixed { units, treated } = &self.blocks[b] else {
                unreachable!()
            };
            let big_n = units.len();
            let c = *treated;
            if x > c || t - x > big_n - c {
                return 0.0;
            }
            for r in 0..x {
                p *= (c - r) as f64 / (big_n - r) as f64;
            }
            for r in 0..(t - x) {
                p *= (big_n - c - r) as f64 / (big_n - x - r) as f64;
            }
        }
        p
    }

    /// Dynamic programme over blocks tracking the partial count of every constraint.
    fn prob_counts(&self, e: &Event) -> f64 {
        let m = e.constraints.len();
        let targets: Vec<usize> = e.constraints.iter().map(|(_, c)| *c).collect();
        // signature per unit: indices of constraints containing it
        let mut sig: Vec<Vec<usize>> = vec![Vec::new(); self.n];
        for (r, (units, _)) in e.constraints.iter().enumerate() {
            for &u in units {
                sig[u].push(r);
            }
        }
        let mut states: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
        states.insert(vec![0; m], 1.0);
        for block in &self.blocks {
            match block {
                Block::Coin { unit, p } => {
                    if sig[*unit].is_empty() {
                        continue;
                    }
                    let mut next = BTreeMap::new();
                    for (state, w) in &states {
                        *next.entry(state.clone()).or_insert(0.0) += w * (1.0 - p);
                        let mut s = state.clone();
                        let mut ok = true;
                        for &r in &sig[*unit] {
                            s[r] += 1;
                            ok &= s[r] <= targets[r];
                        }
                        if ok {
                            *next.entry(s).or_insert(0.0) += w * p;
                        }
                    }
                    states = next;
                }
                Block::Fixed { units, treated } => {
                    let mut cells: BTreeMap<&Vec<usize>, usize> = BTreeMap::new();
                    for &u in units {
                        *cells.entry(&sig[u]).or_insert(0) += 1;
                    }
                    if cells.len() == 1 && cells.keys().next().is_some_and(|s| s.is_empty()) {
                        continue;
                    }
                    let cells: Vec<(&Vec<usize>, usize)> = cells.into_iter().collect();
                    let total = choose(units.len(), *treated);
                    let mut allocations: Vec<(Vec<usize>, f64)> = Vec::new();
                    let mut buf = vec![0usize; cells.len()];
                    allocate(&cells, 0, *treated, 1.0, &mut buf, &mut allocations, m);
                    let mut next = BTreeMap::new();
                    for (state, w) in &states {
                        for (delta, ways) in &allocations {
                            let mut s = state.clone();
                            if s.iter_mut().zip(delta).zip(&targets).all(|((x, d), t)| {
                                *x += d;
                                *x <= *t
                            }) {
                                *next.entry(s).or_insert(0.0) += w * ways / total;
                            }
                        }
                    }
                    states = next;
                }
            }
            if states.is_empty() {
                return 0.0;
            }
        }
        states.get(&targets).copied().unwrap_or(0.0)
    }

    fn enumeration_cost(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| match b {
                Block::Fixed { units, treated } => choose(units.len(), *treated),
                Block::Coin { .. } => 2.0,
            })
            .product()
    }

    fn enumerate(&self) -> Vec<(Assignment, f64)> {
        let options: Vec<Vec<(Vec<usize>, f64)>> = self
            .blocks
            .iter()
            .map(|b| match b {
                Block::Fixed { units, treated } => {
                    let w = 1.0 / choose(units.len(), *treated);
                    units
                        .iter()
                        .copied()
                        .combinations(*treated)
                        .map(|c| (c, w))
                        .collect()
                }
                Block::Coin { unit, p } => vec![(vec![], 1.0 - p), (vec![*unit], *p)],
            })
            .collect();
        let mut out = Vec::new();
        if options.is_empty() {
            out.push((vec![0; self.n], 1.0));
            return out;
        }
        let mut idx = vec![0usize; options.len()];
        loop {
            let mut a = vec![0u8; self.n];
            let mut p = 1.0;
            for (b, &k) in idx.iter().enumerate() {
                let (treated, w) = &options[b][k];
                for &u in treated {
                    a[u] = 1;
                }
                p *= w;
            }
            out.push((a, p));
            let mut b = options.len();
            loop {
                if b == 0 {
                    return out;
                }
                b -= 1;
                idx[b] += 1;
                if idx[b] < options[b].len() {
                    break;
                }
                idx[b] = 0;
            }
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Assignment {
        let mut a = vec![0u8; self.n];
        for block in &self.blocks {
            match block {
                Block::Fixed { units, treated } => {
                    for pos in index::sample(rng, units.len(), *treated) {
                        a[units[pos]] = 1;
                    }
                }
                Block::Coin { unit, p } => a[*unit] = rng.random_bool(*p) as u8,
            }
        }
        a
    }

    fn first_vector(&self) -> Assignment {
        let mut a = vec![0u8; self.n];
        for block in &self.blocks {
            if let Block::Fixed { units, treated } = block {
                for &u in &units[..*treated] {
                    a[u] = 1;
                }
            }
        }
        a
    }

    /// Treated count over `units` when it is identical for every support vector.
    fn constant_count(&self, units: &[usize]) -> Option<usize> {
        let mut inside: BTreeMap<usize, usize> = BTreeMap::new();
        for &u in units {
            *inside.entry(self.block_of[u]).or_insert(0) += 1;
        }
        let mut total = 0;
        for (b, k) in inside {
            match &self.blocks[b] {
                Block::Fixed { units: us, treated } => {
                    if *treated == 0 {
                    } else if *treated == us.len() {
                        total += k;
                    } else if k == us.len() {
                        total += treated;
                    } else {
                        return None;
                    }
                }
                Block::Coin { .. } => return None,
            }
        }
        Some(total)
    }

    /// Every support vector lies in the support of `outer`.
    fn within(&self, outer: &BlockDesign) -> bool {
        outer.blocks.iter().all(|b| match b {
            Block::Fixed { units, treated } => self.constant_count(units) == Some(*treated),
            Block::Coin { .. } => true,
        })
    }

    /// Equivalent block design for the conditional law given `e`, when one exists.
    fn refine(&self, e: &Event) -> Option<BlockDesign> {
        let mut blocks = self.blocks.clone();
        for (units, c) in &e.constraints {
            let mut block_of = vec![0usize; self.n];
            for (b, block) in blocks.iter().enumerate() {
                match block {
                    Block::Fixed { units, .. } => units.iter().for_each(|&u| block_of[u] = b),
                    Block::Coin { unit, .. } => block_of[*unit] = b,
                }
            }
            let b = block_of[units[0]];
            if units.iter().any(|&u| block_of[u] != b) {
                return None;
            }
            match blocks[b].clone() {
                Block::Coin { unit, .. } => {
                    blocks[b] = Block::Fixed {
                        units: vec![unit],
                        treated: *c,
                    };
                }
                Block::Fixed {
                    units: all,
                    treated,
                } => {
                    if all.len() == units.len() {
                        if treated != *c {
                            return None;
                        }
                        continue;
                    }
                    if *c > treated || all.len() - units.len() < treated - c {
                        return None;
                    }
                    let rest: Vec<usize> = all.iter().copied().filter(|u| !units.contains(u)).collect();
                    blocks[b] = Block::Fixed {
                        units: units.clone(),
                        treated: *c,
                    };
                    blocks.push(Block::Fixed {
                        units: rest,
                        treated: treated - c,
                    });
                }
            }
        }
        BlockDesign::new(self.n, blocks).ok()
    }

    fn uniform_value(&self) -> Option<f64> {
        let mut v = 1.0;
        for b in &self.blocks {
            match b {
                Block::Fixed { units, treated } => v /= choose(units.len(), *treated),
                Block::Coin { p, .. } => {
                    if *p != 0.5 {
                        return None;
                    }
                    v *= 0.5;
                }
            }
        }
        Some(v)
    }

    fn fixed_total(&self) -> Option<usize> {
        let mut total = 0;
        for b in &self.blocks {
            match b {
                Block::Fixed { treated, .. } => total += treated,
                Block::Coin { .. } => return None,
            }
        }
        Some(total)
    }
}

/// Multivariate hypergeometric allocations of `left` treated over `cells`,
/// accumulated as per-constraint count deltas with their number of ways.
fn allocate(
    cells: &[(&Vec<usize>, usize)],
    k: usize,
    left: usize,
    ways: f64,
    buf: &mut Vec<usize>,
    out: &mut Vec<(Vec<usize>, f64)>,
    m: usize,
) {
    if k == cells.len() {
        if left == 0 {
            let mut delta = vec![0usize; m];
            for (cell, &h) in cells.iter().zip(buf.iter()) {
                for &r in cell.0 {
                    delta[r] += h;
                }
            }
            out.push((delta, ways));
        }
        return;
    }
    let size = cells[k].1;
    let room: usize = cells[k + 1..].iter().map(|c| c.1).sum();
    let lo = left.saturating_sub(room);
    for h in lo..=left.min(size) {
        buf[k] = h;
        allocate(cells, k + 1, left - h, ways * choose(size, h), buf, out, m);
    }
}

/// Explicit probability table over assignment vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct TableDesign {
    n: usize,
    entries: BTreeMap<Assignment, f64>,
}

impl TableDesign {
    pub fn new(n: usize, entries: Vec<(Assignment, f64)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut total = 0.0;
        for (a, p) in entries {
            if a.len() != n {
                return Err(Error::Structural(format!(
                    "table vector of length {} in a cluster of {n} units",
                    a.len()
                )));
            }
            if a.iter().any(|&x| x > 1) {
                return Err(Error::Structural("table vector entries must be 0 or 1".into()));
            }
            if !(p.is_finite() && p >= 0.0) {
                return Err(Error::Structural(format!("invalid table probability {p}")));
            }
            total += p;
            if p > 0.0 && map.insert(a.clone(), p).is_some() {
                return Err(Error::Structural(format!("duplicate table vector {a:?}")));
            }
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Structural(format!(
                "table probabilities sum to {total}, not 1"
            )));
        }
        Ok(TableDesign { n, entries: map })
    }

    pub fn entries(&self) -> impl Iterator<Item = (&Assignment, f64)> {
        self.entries.iter().map(|(a, p)| (a, *p))
    }
}

/// Base law conditioned on an event of positive probability.
#[derive(Clone, Debug, PartialEq)]
pub struct Restriction {
    base: AssignmentLaw,
    event: Event,
    mass: f64,
    refined: Option<BlockDesign>,
}

impl Restriction {
    pub fn base(&self) -> &AssignmentLaw {
        &self.base
    }

    pub fn event(&self) -> &Event {
        &self.event
    }

    /// Probability of the conditioning event under the base law.
    pub fn mass(&self) -> f64 {
        self.mass
    }
}

/// Probability law over the assignment vectors of one cluster.
#[derive(Clone, Debug, PartialEq)]
pub enum AssignmentLaw {
    Blocks(BlockDesign),
    Table(TableDesign),
    Restricted(Box<Restriction>),
}

impl AssignmentLaw {
    /// Complete randomization of `treated` out of `n` units.
    pub fn complete(n: usize, treated: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Structural("a cluster needs at least one unit".into()));
        }
        Ok(AssignmentLaw::Blocks(BlockDesign::new(
            n,
            vec![Block::Fixed {
                units: (0..n).collect(),
                treated,
            }],
        )?))
    }

    /// Complete randomization within strata given by `labels`.
    pub fn stratified<L: Ord + Clone + std::fmt::Debug>(
        labels: &[L],
        treated: &BTreeMap<L, usize>,
    ) -> Result<Self> {
        let mut strata: BTreeMap<&L, Vec<usize>> = BTreeMap::new();
        for (u, l) in labels.iter().enumerate() {
            strata.entry(l).or_default().push(u);
        }
        let mut blocks = Vec::with_capacity(strata.len());
        for (l, units) in strata {
            let t = *treated.get(l).ok_or_else(|| {
                Error::Structural(format!("no treated count for stratum {l:?}"))
            })?;
            blocks.push(Block::Fixed { units, treated: t });
        }
        if labels.is_empty() {
            return Err(Error::Structural("a cluster needs at least one unit".into()));
        }
        Ok(AssignmentLaw::Blocks(BlockDesign::new(labels.len(), blocks)?))
    }

    /// Independent Bernoulli assignment with per-unit probabilities.
    pub fn bernoulli(p: &[f64]) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::Structural("a cluster needs at least one unit".into()));
        }
        let blocks = p
            .iter()
            .enumerate()
            .map(|(unit, &p)| Block::Coin { unit, p })
            .collect();
        Ok(AssignmentLaw::Blocks(BlockDesign::new(p.len(), blocks)?))
    }

    pub fn explicit(n: usize, entries: Vec<(Assignment, f64)>) -> Result<Self> {
        Ok(AssignmentLaw::Table(TableDesign::new(n, entries)?))
    }

    pub fn n(&self) -> usize {
        match self {
            AssignmentLaw::Blocks(b) => b.n,
            AssignmentLaw::Table(t) => t.n,
            AssignmentLaw::Restricted(r) => r.base.n(),
        }
    }

    fn check_len(&self, a: &[u8]) -> Result<()> {
        if a.len() != self.n() {
            return Err(Error::Structural(format!(
                "assignment of length {} for a cluster of {} units",
                a.len(),
                self.n()
            )));
        }
        if a.iter().any(|&x| x > 1) {
            return Err(Error::Structural("assignment entries must be 0 or 1".into()));
        }
        Ok(())
    }

    fn check_event(&self, e: &Event) -> Result<()> {
        match e.max_unit() {
            Some(u) if u >= self.n() => Err(Error::Structural(format!(
                "event references unit {u} in a cluster of {} units",
                self.n()
            ))),
            _ => Ok(()),
        }
    }

    /// P(A = a).
    pub fn pmf(&self, a: &[u8]) -> Result<f64> {
        self.check_len(a)?;
        Ok(self.pmf_unchecked(a))
    }

    pub(crate) fn pmf_unchecked(&self, a: &[u8]) -> f64 {
        match self {
            AssignmentLaw::Blocks(b) => b.pmf(a),
            AssignmentLaw::Table(t) => t.entries.get(a).copied().unwrap_or(0.0),
            AssignmentLaw::Restricted(r) => match &r.refined {
                Some(b) => b.pmf(a),
                None if r.event.contains(a) => r.base.pmf_unchecked(a) / r.mass,
                None => 0.0,
            },
        }
    }

    /// P(A in e).
    pub fn prob(&self, e: &Event) -> Result<f64> {
        self.check_event(e)?;
        Ok(self.prob_unchecked(e))
    }

    pub(crate) fn prob_unchecked(&self, e: &Event) -> f64 {
        match self {
            AssignmentLaw::Blocks(b) => b.prob_event(e),
            AssignmentLaw::Table(t) => t
                .entries
                .iter()
                .filter(|(a, _)| e.contains(a))
                .map(|(_, p)| p)
                .sum(),
            AssignmentLaw::Restricted(r) => match &r.refined {
                Some(b) => b.prob_event(e),
                None => r.base.prob_unchecked(&r.event.and(e)) / r.mass,
            },
        }
    }

    /// P(A_i = a).
    pub fn marginal(&self, i: usize, a: u8) -> Result<f64> {
        self.prob(&Event::pin(i, a))
    }

    /// P(A_i = a, A_j = b) for distinct units.
    pub fn pairwise(&self, i: usize, j: usize, a: u8, b: u8) -> Result<f64> {
        if i == j {
            return Err(Error::Structural(format!(
                "pairwise probability needs distinct units, got {i} twice"
            )));
        }
        self.prob(&Event::pin(i, a).and(&Event::pin(j, b)))
    }

    /// P(A_rest = a_rest | A_given = a_given) read off the full vector `a`.
    pub fn conditional_pmf(&self, a: &[u8], given: &[usize]) -> Result<f64> {
        self.check_len(a)?;
        let pins: Vec<(usize, u8)> = given.iter().map(|&u| (u, a[u])).collect();
        let cond = Event::pins(&pins);
        self.check_event(&cond)?;
        let pg = self.prob_unchecked(&cond);
        if pg <= 0.0 {
            return Err(Error::DegenerateConditioning(format!(
                "conditioning event {pins:?} has probability 0"
            )));
        }
        Ok(self.pmf_unchecked(a) / pg)
    }

    /// Conditional law given `e`.
    pub fn restrict(&self, e: &Event) -> Result<AssignmentLaw> {
        self.check_event(e)?;
        if e.is_all() {
            return Ok(self.clone());
        }
        let (base, event) = match self {
            AssignmentLaw::Restricted(r) => (r.base.clone(), r.event.and(e)),
            other => (other.clone(), e.clone()),
        };
        let mass = base.prob_unchecked(&event);
        if mass <= 0.0 {
            return Err(Error::Overlap(format!(
                "empty restriction: admissible set has probability 0 under the base law ({event:?})"
            )));
        }
        let refined = match &base {
            AssignmentLaw::Blocks(b) => b.refine(&event),
            _ => None,
        };
        Ok(AssignmentLaw::Restricted(Box::new(Restriction {
            base,
            event,
            mass,
            refined,
        })))
    }

    /// Number of vectors an enumeration visits.
    pub fn enumeration_cost(&self) -> f64 {
        match self {
            AssignmentLaw::Blocks(b) => b.enumeration_cost(),
            AssignmentLaw::Table(t) => t.entries.len() as f64,
            AssignmentLaw::Restricted(r) => match &r.refined {
                Some(b) => b.enumeration_cost(),
                None => r.base.enumeration_cost(),
            },
        }
    }

    /// Every support vector exactly once with its probability.
    pub fn enumerate(&self, cap: usize) -> Result<Vec<(Assignment, f64)>> {
        let cost = self.enumeration_cost();
        if cost > cap as f64 {
            return Err(Error::EnumerationInfeasible { size: cost, cap });
        }
        Ok(self.enumerate_unchecked())
    }

    fn enumerate_unchecked(&self) -> Vec<(Assignment, f64)> {
        match self {
            AssignmentLaw::Blocks(b) => b.enumerate(),
            AssignmentLaw::Table(t) => t.entries.iter().map(|(a, p)| (a.clone(), *p)).collect(),
            AssignmentLaw::Restricted(r) => match &r.refined {
                Some(b) => b.enumerate(),
                None => r
                    .base
                    .enumerate_unchecked()
                    .into_iter()
                    .filter(|(a, _)| r.event.contains(a))
                    .map(|(a, p)| (a, p / r.mass))
                    .collect(),
            },
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Assignment {
        match self {
            AssignmentLaw::Blocks(b) => b.sample(rng),
            AssignmentLaw::Table(t) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut last = None;
                for (a, p) in &t.entries {
                    acc += p;
                    last = Some(a);
                    if u < acc {
                        return a.clone();
                    }
                }
                last.cloned().unwrap_or_else(|| vec![0; t.n])
            }
            AssignmentLaw::Restricted(r) => match &r.refined {
                Some(b) => b.sample(rng),
                None => loop {
                    let a = r.base.sample(rng);
                    if r.event.contains(&a) {
                        return a;
                    }
                },
            },
        }
    }

    /// A deterministic support vector.
    pub fn representative(&self, cap: usize) -> Result<Assignment> {
        match self {
            AssignmentLaw::Blocks(b) => Ok(b.first_vector()),
            AssignmentLaw::Restricted(r) if r.refined.is_some() => {
                Ok(r.refined.as_ref().unwrap().first_vector())
            }
            _ => self
                .enumerate(cap)?
                .into_iter()
                .find(|(_, p)| *p > 0.0)
                .map(|(a, _)| a)
                .ok_or_else(|| Error::Structural("law with empty support".into())),
        }
    }

    /// Treated total shared by every support vector, if any.
    pub fn fixed_total(&self) -> Option<usize> {
        match self {
            AssignmentLaw::Blocks(b) => b.fixed_total(),
            AssignmentLaw::Table(t) => {
                let mut totals = t.entries.keys().map(|a| a.iter().map(|&x| x as usize).sum());
                let first: usize = totals.next()?;
                totals.all(|s: usize| s == first).then_some(first)
            }
            AssignmentLaw::Restricted(r) => r
                .refined
                .as_ref()
                .and_then(|b| b.fixed_total())
                .or_else(|| r.base.fixed_total()),
        }
    }

    /// `(n, treated)` when the law is complete randomization over all units.
    pub fn as_complete(&self) -> Option<(usize, usize)> {
        let blocks = match self {
            AssignmentLaw::Blocks(b) => b,
            AssignmentLaw::Restricted(r) if r.refined.is_some() => r.refined.as_ref().unwrap(),
            _ => return None,
        };
        match blocks.blocks.as_slice() {
            [Block::Fixed { units, treated }] if units.len() == blocks.n => {
                Some((blocks.n, *treated))
            }
            _ => None,
        }
    }

    /// The constant pmf value on the support, when the law is uniform.
    pub fn uniform_value(&self) -> Option<f64> {
        match self {
            AssignmentLaw::Blocks(b) => b.uniform_value(),
            AssignmentLaw::Table(t) => {
                let mut it = t.entries.values();
                let first = *it.next()?;
                it.all(|&p| p == first).then_some(first)
            }
            AssignmentLaw::Restricted(r) => match &r.refined {
                Some(b) => b.uniform_value(),
                None => r.base.uniform_value().map(|u| u / r.mass),
            },
        }
    }

    /// The ratio `self(a) / f(a)` when it is constant over the support of `self`.
    ///
    /// Assumes the support of `self` lies within the support of `f`.
    pub fn density_ratio(&self, f: &AssignmentLaw) -> Option<f64> {
        if self == f {
            return Some(1.0);
        }
        if let AssignmentLaw::Restricted(r) = self {
            if let Some(x) = r.base.density_ratio(f) {
                return Some(x / r.mass);
            }
        }
        if let (Some(u), Some(v)) = (self.uniform_value(), f.uniform_value()) {
            return Some(u / v);
        }
        if let AssignmentLaw::Table(t) = self {
            let mut ratio = None;
            for (a, p) in &t.entries {
                let q = f.pmf_unchecked(a);
                if q <= 0.0 {
                    return None;
                }
                let x = p / q;
                match ratio {
                    None => ratio = Some(x),
                    Some(r) if ((x - r) / r).abs() <= 1e-13 => {}
                    Some(_) => return None,
                }
            }
            return ratio;
        }
        None
    }

    /// Whether every support vector of `self` has positive probability under `outer`.
    pub fn support_within(&self, outer: &AssignmentLaw, cap: usize) -> Result<bool> {
        if self == outer {
            return Ok(true);
        }
        if let Some(ans) = structural_within(self, outer) {
            return Ok(ans);
        }
        Ok(self
            .enumerate(cap)?
            .iter()
            .all(|(a, p)| *p <= 0.0 || outer.pmf_unchecked(a) > 0.0))
    }
}

/// Support inclusion decided from structure alone; `None` when undecided.
fn structural_within(inner: &AssignmentLaw, outer: &AssignmentLaw) -> Option<bool> {
    if inner == outer {
        return Some(true);
    }
    if let AssignmentLaw::Table(t) = inner {
        return Some(t.entries.keys().all(|a| outer.pmf_unchecked(a) > 0.0));
    }
    if let AssignmentLaw::Restricted(r) = outer {
        if let Some(b) = &r.refined {
            return structural_within(inner, &AssignmentLaw::Blocks(b.clone()));
        }
        let base_ok = structural_within(inner, &r.base)?;
        if !base_ok {
            return Some(false);
        }
        if let AssignmentLaw::Blocks(ib) = inner {
            return Some(
                r.event
                    .constraints
                    .iter()
                    .all(|(u, c)| ib.constant_count(u) == Some(*c)),
            );
        }
        return None;
    }
    match (inner, outer) {
        (AssignmentLaw::Restricted(r), _) => {
            if structural_within(&r.base, outer) == Some(true) {
                return Some(true);
            }
            let b = r.refined.as_ref()?;
            structural_within(&AssignmentLaw::Blocks(b.clone()), outer)
        }
        (AssignmentLaw::Blocks(ib), AssignmentLaw::Blocks(ob)) => Some(ib.within(ob)),
        _ => None,
    }
}

/// Nearest integer to `r * p`, ties rounded away from zero.
pub fn nearest_count(r: usize, p: f64) -> usize {
    let x = r as f64 * p;
    let fl = x.floor();
    if x - fl >= 0.5 - 1e-9 {
        fl as usize + 1
    } else {
        fl as usize
    }
}
