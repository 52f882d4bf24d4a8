mod common;

use common::*;
use netexp::oracle::exact_moments;
use netexp::variance::{
    additive, var_cr_special, var_de_stratified, var_de_stratified_hat, var_mu_stratified,
    var_mu_stratified_hat, Term,
};
use netexp::{
    exact_estimand, nearest_count, AssignmentLaw, Estimand, Event, Intervention, Observed,
};
use proptest::prelude::*;
use rand::Rng;

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(64)
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn design_supports_sum_to_one(seed in any::<u64>(), n in 1usize..7, kind in 0usize..3) {
        let mut r = rng(seed);
        let f = random_design(&mut r, n.max(2), ALL_DESIGNS[kind]);
        let support = f.enumerate(1 << 20).unwrap();
        let total: f64 = support.iter().map(|(_, p)| p).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        for i in 0..f.n() {
            let by_support: f64 = support.iter().filter(|(a, _)| a[i] == 1).map(|(_, p)| p).sum();
            prop_assert!((f.marginal(i, 1).unwrap() - by_support).abs() < 1e-12);
        }
    }

    #[test]
    fn restriction_renormalizes(seed in any::<u64>(), n in 2usize..7) {
        let mut r = rng(seed);
        let f = random_design(&mut r, n, DesignKind::Bernoulli);
        let t = r.random_range(0..=n);
        let e = Event::count(0..n, t);
        let mass = f.prob(&e).unwrap();
        let g = f.restrict(&e).unwrap();
        for (a, p) in g.enumerate(1 << 20).unwrap() {
            prop_assert_eq!(a.iter().map(|&x| x as usize).sum::<usize>(), t);
            prop_assert!((p - f.pmf(&a).unwrap() / mass).abs() < 1e-12);
        }
    }

    #[test]
    fn nearest_count_is_within_half_a_unit(r in 0usize..200, p in 0.0f64..=1.0) {
        let c = nearest_count(r, p);
        prop_assert!(c <= r);
        prop_assert!((c as f64 - p * r as f64).abs() <= 0.5 + 1e-12);
    }

    #[test]
    fn ht_is_unbiased_for_random_interventions(seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut shape = Shape::new(&ALL_DESIGNS, TableKind::General);
        shape.multi_key = seed % 2 == 0;
        let (inst, an) = accepted(&mut r, &shape, |r, inst| {
            analysis(inst, Estimand::tau(random_intervention(r, &inst.designs)))
        });
        let ht = |o: &Observed| an.ht(o).map(|e| e.point);
        let m = exact_moments(&an.designs, &inst.table, &[&ht]).unwrap();
        prop_assert!((m.mean[0] - exact_estimand(&an, &inst.table).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn mean_variance_estimate_is_unbiased(seed in any::<u64>(), arm in 0u8..2) {
        let mut r = rng(seed);
        let shape = Shape::new(&FIXED_TOTAL_DESIGNS, TableKind::Stratified);
        let (inst, an) = accepted(&mut r, &shape, |r, inst| {
            let an = analysis(inst, Estimand::mu(arm, random_restriction(r, &inst.designs)))?;
            let a: Vec<Vec<u8>> = inst.designs.iter().map(|f| f.representative(1 << 20).unwrap()).collect();
            var_mu_stratified_hat(&an, &inst.table.observe(&a)?)?;
            Ok(an)
        });
        let hat = |o: &Observed| var_mu_stratified_hat(&an, o);
        let ht = |o: &Observed| an.ht(o).map(|e| e.point);
        let m = exact_moments(&an.designs, &inst.table, &[&hat, &ht]).unwrap();
        let formula = var_mu_stratified(&an, &inst.table.pooled(&an).unwrap()).unwrap();
        prop_assert!((m.variance(1) - formula).abs() < 1e-9);
        prop_assert!((m.mean[0] - formula).abs() < 1e-9);
    }

    #[test]
    fn direct_effect_variance_estimate_is_conservative(seed in any::<u64>()) {
        let mut r = rng(seed);
        let shape = Shape::new(&FIXED_TOTAL_DESIGNS, TableKind::Stratified);
        let (inst, an) = accepted(&mut r, &shape, |r, inst| {
            let an = analysis(inst, Estimand::de(random_restriction(r, &inst.designs)))?;
            let a: Vec<Vec<u8>> = inst.designs.iter().map(|f| f.representative(1 << 20).unwrap()).collect();
            var_de_stratified_hat(&an, &inst.table.observe(&a)?)?;
            Ok(an)
        });
        let hat = |o: &Observed| var_de_stratified_hat(&an, o);
        let mean = exact_moments(&an.designs, &inst.table, &[&hat]).unwrap().mean[0];
        let formula = var_de_stratified(&an, &inst.table.pooled(&an).unwrap()).unwrap();
        prop_assert!(mean - formula >= -1e-9);
        prop_assert!(formula >= -1e-12);
    }

    #[test]
    fn additive_plug_in_is_conservative(seed in any::<u64>()) {
        let mut r = rng(seed);
        let shape = Shape::new(&ALL_DESIGNS, TableKind::Additive);
        let (inst, an) = accepted(&mut r, &shape, |r, inst| {
            analysis(inst, Estimand::tau(random_intervention(r, &inst.designs)))
        });
        let terms = Term::ht(&an);
        let hat = |o: &Observed| additive::estimate(&an, &terms, o).map(|v| v.value);
        let ht = |o: &Observed| an.ht(o).map(|e| e.point);
        let m = exact_moments(&an.designs, &inst.table, &[&hat, &ht]).unwrap();
        prop_assert!(m.mean[0] - m.variance(1) >= -1e-9);
    }

    #[test]
    fn complete_closed_form_matches_general(seed in any::<u64>()) {
        let mut r = rng(seed);
        let shape = Shape::new(&[DesignKind::Complete], TableKind::Stratified);
        let (inst, an) = accepted(&mut r, &shape, |_, inst| {
            analysis(inst, Estimand::de(Intervention::from_laws(&inst.designs)))
        });
        let pooled = inst.table.pooled(&an).unwrap();
        let general = var_de_stratified(&an, &pooled).unwrap();
        prop_assert!((var_cr_special(&an, &pooled).unwrap() - general).abs() < 1e-12);
    }

    #[test]
    fn cluster_variances_add(seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut shape = Shape::new(&ALL_DESIGNS, TableKind::General);
        shape.max_clusters = 3;
        shape.n = (2, 4);
        let (inst, an) = accepted(&mut r, &shape, |r, inst| {
            analysis(inst, Estimand::tau(random_intervention(r, &inst.designs)))
        });
        let ht = |o: &Observed| an.ht(o).map(|e| e.point);
        let joint = exact_moments(&an.designs, &inst.table, &[&ht]).unwrap();
        let (mean, var) = netexp::oracle::decomposed_ht_moments(&an, &inst.table).unwrap();
        prop_assert!((joint.mean[0] - mean).abs() < 1e-10);
        prop_assert!((joint.variance(0) - var).abs() < 1e-10);
    }
}

#[test]
fn hajek_matches_ht_when_weights_are_constant() {
    let f = AssignmentLaw::complete(4, 2).unwrap();
    let keys = netexp::KeyMap::from_lists(&[4], vec![vec![vec![0], vec![1], vec![2], vec![3]]]).unwrap();
    let an = netexp::Analysis::new(
        vec![f.clone()],
        keys,
        Estimand::tau(Intervention::from_laws(&[f])),
        netexp::Numerics::default(),
    )
    .unwrap();
    let obs = Observed {
        assignments: vec![vec![1, 0, 1, 0]],
        outcomes: vec![vec![1.0, 2.0, 4.0, 8.0]],
    };
    assert_eq!(an.ht(&obs).unwrap().point, an.hajek(&obs).unwrap().point);
}
