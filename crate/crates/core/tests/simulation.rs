use netexp::sim::{run_simulation, OutcomeModel, SimConfig, SimGrid, SimIntervention, Study};

fn small(model: OutcomeModel, intervention: SimIntervention) -> SimConfig {
    SimConfig {
        k: 6,
        n: 8,
        m: 10,
        model,
        intervention,
        reps: 60,
        seed: 5,
        ..SimConfig::default()
    }
}

#[test]
fn runs_are_reproducible() {
    let c = small(OutcomeModel::M2, SimIntervention::Pi2);
    assert_eq!(run_simulation(&c).unwrap(), run_simulation(&c).unwrap());
}

#[test]
fn population_is_shared_across_replications() {
    let study = Study::new(&small(OutcomeModel::M1, SimIntervention::Pi1)).unwrap();
    let a = study.replicate(3).unwrap().unwrap();
    let b = study.replicate(3).unwrap().unwrap();
    assert_eq!(a, b);
    assert_ne!(study.replicate(4).unwrap().unwrap(), a);
}

#[test]
fn ht_bias_is_within_monte_carlo_error() {
    for intervention in [SimIntervention::Pi1, SimIntervention::Pi2] {
        let s = run_simulation(&small(OutcomeModel::M1, intervention)).unwrap();
        for r in s.rows.iter().filter(|r| r.estimator == "ht") {
            let mcse = r.emp_se / (r.reps_ok as f64).sqrt();
            assert!(r.bias.abs() <= 3.0 * mcse, "{r:?}");
        }
    }
}

#[test]
fn identical_replications_flag_zero_spread() {
    let c = SimConfig {
        k: 2,
        n: 2,
        m: 1,
        reps: 2,
        ..SimConfig::default()
    };
    let s = run_simulation(&c).unwrap();
    assert_eq!(s.rows.len(), 4);
    let zero = s.rows.iter().filter(|r| r.emp_se == 0.0).count();
    assert_eq!(zero > 0, !s.warnings.is_empty());
}

#[test]
fn empirical_se_shrinks_with_more_clusters() {
    let se = |k: usize| {
        let c = SimConfig {
            k,
            n: 8,
            m: 10,
            reps: 200,
            seed: 9,
            ..SimConfig::default()
        };
        run_simulation(&c).unwrap().rows
    };
    let (few, many) = (se(5), se(20));
    for (a, b) in few.iter().zip(&many) {
        assert!(b.emp_se <= 1.15 * a.emp_se, "{a:?} {b:?}");
    }
}

#[test]
fn grid_expands_in_order() {
    let grid: SimGrid = serde_json::from_str(r#"{"k": [2, 3], "m": [4], "models": ["M1"], "interventions": ["pi1", "pi2"]}"#).unwrap();
    let configs = grid.configs();
    assert_eq!(configs.len(), 4);
    assert_eq!((configs[1].k, configs[1].intervention), (2, SimIntervention::Pi2));
    assert_eq!(configs[3].k, 3);
}
