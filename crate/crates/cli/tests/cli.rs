mod fixture;

use std::fs;

use serde_json::Value;

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).expect("valid JSON")
}

fn setup() -> (tempfile::TempDir, String) {
    let tmp = tempfile::tempdir().unwrap();
    let dir = fixture::write(tmp.path(), 3);
    let d = dir.to_str().unwrap().to_string();
    (tmp, d)
}

#[test]
fn estimate_emits_table_shaped_reports() {
    let (_tmp, d) = setup();
    let out = fixture::run(&["estimate", "--data", &d, "--config", &format!("{d}/analysis.json"), "--deterministic"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out.stdout);
    let reports = v.as_array().unwrap();
    let keys: Vec<(String, String)> = reports
        .iter()
        .map(|r| {
            let kind = r["estimand"]["kind"].as_str().unwrap();
            let arm = r["estimand"]["arm"].as_u64().map(|a| a.to_string()).unwrap_or_default();
            (format!("{kind}{arm}"), r["estimator"].as_str().unwrap().to_string())
        })
        .collect();
    let expected = [("mu1", "ht"), ("mu1", "hajek"), ("de", "ht"), ("de", "hajek")];
    assert_eq!(keys, expected.map(|(a, b)| (a.to_string(), b.to_string())));
    for r in reports {
        assert_eq!(r["method"], "stratified");
        let (point, se) = (r["point"].as_f64().unwrap(), r["se"].as_f64().unwrap());
        let ci = r["ci"].as_array().unwrap();
        assert!(ci[0].as_f64().unwrap() <= point && point <= ci[1].as_f64().unwrap());
        assert!(se >= 0.0);
        assert!(r.get("generated_at_unix").is_none());
    }
    assert!(reports[1]["warnings"][0].as_str().unwrap().starts_with("hajek_linearized"));
}

#[test]
fn single_combination_is_an_object_and_alpha_widens_intervals() {
    let (_tmp, d) = setup();
    let cfg = format!("{d}/one.json");
    fs::write(
        &cfg,
        r#"{"design": {"kind": "complete", "share": 0.5}, "estimand": {"kind": "mu", "arm": 1}}"#,
    )
    .unwrap();
    let width = |alpha: &str| {
        let out = fixture::run(&["estimate", "--data", &d, "--config", &cfg, "--alpha", alpha, "--deterministic"]);
        assert!(out.status.success());
        let v = json(&out.stdout);
        assert!(v.is_object());
        v["ci"][1].as_f64().unwrap() - v["ci"][0].as_f64().unwrap()
    };
    assert!(width("0.01") > width("0.2"));
}

#[test]
fn timestamps_appear_without_deterministic() {
    let (_tmp, d) = setup();
    let out = fixture::run(&["estimate", "--data", &d, "--config", &format!("{d}/analysis.json")]);
    assert!(out.status.success());
    assert!(json(&out.stdout)[0]["generated_at_unix"].is_u64());
}

#[test]
fn failures_map_to_exit_codes_or_recorded_errors() {
    let (_tmp, d) = setup();
    let analysis = format!("{d}/analysis.json");

    fs::write(format!("{d}/bad.json"), r#"{"design": {"kind": "complete"}, "estimand": {"kind": "tau"}}"#).unwrap();
    let out = fixture::run(&["estimate", "--data", &d, "--config", &format!("{d}/bad.json")]);
    assert_eq!(out.status.code(), Some(2));
    let err = json(&out.stderr);
    assert_eq!(err["error"]["code"], "schema");

    fs::write(
        format!("{d}/lip.json"),
        r#"{"design": {"kind": "complete", "share": 0.5}, "estimand": {"kind": "mu", "arm": 1}, "estimator": "hajek", "variance": "lipschitz"}"#,
    )
    .unwrap();
    let out = fixture::run(&["estimate", "--data", &d, "--config", &format!("{d}/lip.json")]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(json(&out.stderr)["error"]["code"], "unsupported");

    fs::write(
        format!("{d}/cap.json"),
        r#"{"design": {"kind": "complete", "share": 0.5}, "estimand": {"kind": "mu", "arm": 1}, "variance": "additive", "cap": 4}"#,
    )
    .unwrap();
    let out = fixture::run(&[
        "oracle", "--data", &d, "--config", &format!("{d}/cap.json"), "--table", &format!("{d}/potentials.csv"),
    ]);
    assert!(out.status.success());
    let v = json(&out.stdout);
    assert_eq!(v["errors"]["truth"]["code"], "enumeration_infeasible");
    assert!(v["truth"].is_null() && v["stratified_variance"].is_f64());

    let outcomes = fs::read_to_string(format!("{d}/outcomes.csv")).unwrap();
    fs::write(format!("{d}/outcomes.csv"), format!("{outcomes}school0,ghost,1.0\n")).unwrap();
    let out = fixture::run(&["estimate", "--data", &d, "--config", &analysis]);
    assert_eq!(out.status.code(), Some(3));
    let msg = json(&out.stderr)["error"]["message"].as_str().unwrap().to_string();
    assert!(msg.contains("outcomes.csv:"), "{msg}");
}

#[test]
fn validate_reports_every_violation() {
    let (_tmp, d) = setup();
    let out = fixture::run(&["validate", "--data", &d]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out.stdout)["valid"], true);

    let assignment = fs::read_to_string(format!("{d}/assignment.csv")).unwrap();
    fs::write(format!("{d}/assignment.csv"), format!("{assignment}school0,o0_0,1\nschool1,s1_0,7\n")).unwrap();
    let out = fixture::run(&["validate", "--data", &d]);
    assert_ne!(out.status.code(), Some(0));
    let v = json(&out.stdout);
    assert_eq!(v["valid"], false);
    assert!(v["violations"].as_array().unwrap().len() >= 2);
}

#[test]
fn sweep_emits_one_group_per_share() {
    let (_tmp, d) = setup();
    let plot = format!("{d}/sweep.csv");
    let out = fixture::run(&[
        "sweep", "--data", &d, "--config", &format!("{d}/sweep.json"), "--deterministic", "--plot-data", &plot,
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out.stdout);
    let groups = v.as_array().unwrap();
    assert_eq!(groups.len(), 5);
    // A share rounding to no referents (or all of them) leaves one arm without support;
    // an interior share may match no realized cluster, leaving the ratio undefined.
    let mut expected_rows = 1;
    for (i, g) in groups.iter().enumerate() {
        let reports = g["reports"].as_array().unwrap();
        if i == 0 || i == 4 {
            assert_eq!(g["error"]["code"], "overlap", "{g}");
        } else if let Some(e) = g.get("error") {
            assert_eq!(e["code"], "undefined_estimate", "{g}");
        } else {
            assert_eq!(reports.len(), 2);
        }
        expected_rows += reports.len().max(1);
    }
    assert!(groups[2].get("error").is_none());
    let csv = fs::read_to_string(plot).unwrap();
    assert!(csv.starts_with("group_alpha,estimand,estimator,point,se,ci_lo,ci_hi,status\n"));
    assert_eq!(csv.lines().count(), expected_rows);
    assert_eq!(csv.lines().filter(|l| l.ends_with(",overlap")).count(), 2);
}

#[test]
fn sweep_at_realized_share_is_well_defined() {
    let (_tmp, d) = setup();
    let out = fixture::run(&[
        "sweep", "--data", &d, "--config", &format!("{d}/sweep.json"), "--alphas", "0.5", "--deterministic",
    ]);
    assert!(out.status.success());
    let v = json(&out.stdout);
    for r in v[0]["reports"].as_array().unwrap() {
        assert!(r["point"].as_f64().unwrap().is_finite());
        assert!(r["se"].as_f64().unwrap().is_finite());
    }
}

#[test]
fn oracle_truth_matches_ht_mean() {
    let (_tmp, d) = setup();
    let out = fixture::run(&[
        "oracle", "--data", &d, "--config", &format!("{d}/analysis.json"), "--table", &format!("{d}/potentials.csv"),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for r in json(&out.stdout).as_array().unwrap() {
        let truth = r["truth"].as_f64().unwrap();
        assert!((truth - r["ht_mean"].as_f64().unwrap()).abs() < 1e-10);
        let (v, s) = (r["ht_variance"].as_f64().unwrap(), r["stratified_variance"].as_f64().unwrap());
        assert!((v - s).abs() < 1e-9, "{r}");
    }
}

#[test]
fn simulate_writes_results_and_plot_data() {
    let (_tmp, d) = setup();
    let results = format!("{d}/results.csv");
    let plot = format!("{d}/plot");
    let out = fixture::run(&[
        "simulate", "--config", &format!("{d}/sim.json"), "--reps", "10", "--seed", "4", "--out", &results, "--plot-data", &plot,
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(results).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "K,m_k,model,intervention,estimand,estimator,bias,emp_se,mean_se_hat,coverage,ci_length,reps_ok,reps_failed"
    );
    assert_eq!(lines.count(), 16);
    assert!(fs::read_to_string(format!("{plot}/simulation_long.csv")).unwrap().lines().count() > 16);
}

#[test]
fn malformed_inputs_are_schema_errors() {
    let (_tmp, d) = setup();
    assert_eq!(fixture::run(&["estimate", "--data", &d]).status.code(), Some(2));

    fs::write(format!("{d}/keymap.csv"), "cluster,unit_id,key_unit_id\n").unwrap();
    let out = fixture::run(&["validate", "--data", &d]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json(&out.stdout)["violations"][0]["kind"], "schema");
}

#[test]
fn variance_flags_override_the_config() {
    let (_tmp, d) = setup();
    let cfg = format!("{d}/one.json");
    fs::write(
        &cfg,
        r#"{"design": {"kind": "complete", "share": 0.5}, "estimand": {"kind": "mu", "arm": 1}}"#,
    )
    .unwrap();
    let base = ["estimate", "--data", &d, "--config", &cfg, "--deterministic"];
    let with = |extra: &[&str]| fixture::run(&[&base[..], extra].concat());

    let out = with(&["--variance", "lipschitz"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    let out = with(&["--variance", "lipschitz", "--lipschitz-c", "0.5", "--lipschitz-dist", "l1", "--outcome-bound", "10"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out.stdout);
    assert_eq!(v["method"], "lipschitz");
    assert!(v["variance"]["hi"].as_f64().unwrap() >= v["variance"]["lo"].as_f64().unwrap());

    let out = with(&["--variance", "additive"]);
    assert!(out.status.success());
    assert_eq!(json(&out.stdout)["method"], "additive");

    assert_eq!(with(&["--variance", "bogus"]).status.code(), Some(2));
}
