//! Synthetic data shaped like a school-network analysis: eligible students
//! keyed to themselves, ineligible students keyed to an eligible friend, and
//! a 0/1 referent flag on eligible students.
#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CLUSTERS: usize = 4;
pub const ELIGIBLE: usize = 8;
pub const INELIGIBLE: usize = 4;

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_netexp")
}

pub fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("netexp runs")
}

fn all_subsets(n: usize, t: usize) -> Vec<Vec<u8>> {
    (0..1usize << n)
        .filter(|m| m.count_ones() as usize == t)
        .map(|m| (0..n).map(|i| ((m >> i) & 1) as u8).collect())
        .collect()
}

/// Writes the four tables, configs and a potential table under `dir`.
pub fn write(dir: &Path, seed: u64) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut units = String::from("cluster_id,unit_id,eligible,in_target,referent\n");
    let mut keymap = String::from("cluster_id,unit_id,key_unit_id\n");
    let mut assignment = String::from("cluster_id,unit_id,a\n");
    let mut outcomes = String::from("cluster_id,unit_id,y\n");
    let mut potentials = String::from("cluster_id,unit_id,assignment,y\n");
    let support = all_subsets(ELIGIBLE, ELIGIBLE / 2);
    for k in 0..CLUSTERS {
        let c = format!("school{k}");
        let referents = sample(&mut rng, ELIGIBLE, ELIGIBLE / 2).into_vec();
        for i in 0..ELIGIBLE {
            let r = u8::from(referents.contains(&i));
            writeln!(units, "{c},s{k}_{i},1,1,{r}").unwrap();
        }
        for i in 0..INELIGIBLE {
            writeln!(units, "{c},o{k}_{i},0,1,0").unwrap();
        }
        let mut key = Vec::new();
        for i in 0..ELIGIBLE {
            key.push((format!("s{k}_{i}"), i));
        }
        for i in 0..INELIGIBLE {
            key.push((format!("o{k}_{i}"), rng.random_range(0..ELIGIBLE)));
        }
        for (id, i) in &key {
            writeln!(keymap, "{c},{id},s{k}_{i}").unwrap();
        }
        let base: Vec<f64> = key.iter().map(|_| rng.random_range(0.0..4.0)).collect();
        let effect: Vec<f64> = key.iter().map(|_| rng.random_range(0.5..1.5)).collect();
        let y = |j: usize, a: &[u8]| {
            let i = key[j].1;
            let spill = a.iter().zip(0..).filter(|&(&x, u)| x == 1 && u != i).count() as f64;
            base[j] + effect[j] * a[i] as f64 + 0.1 * spill
        };
        let realized = &support[rng.random_range(0..support.len())];
        for (i, a) in realized.iter().enumerate() {
            writeln!(assignment, "{c},s{k}_{i},{a}").unwrap();
        }
        for (j, (id, _)) in key.iter().enumerate() {
            writeln!(outcomes, "{c},{id},{:.16e}", y(j, realized)).unwrap();
            for a in &support {
                let s: String = a.iter().map(|&x| if x == 1 { '1' } else { '0' }).collect();
                writeln!(potentials, "{c},{id},{s},{:.16e}", y(j, a)).unwrap();
            }
        }
    }
    fs::create_dir_all(dir).unwrap();
    fs::write(dir.join("units.csv"), units).unwrap();
    fs::write(dir.join("keymap.csv"), keymap).unwrap();
    fs::write(dir.join("assignment.csv"), assignment).unwrap();
    fs::write(dir.join("outcomes.csv"), outcomes).unwrap();
    fs::write(dir.join("potentials.csv"), potentials).unwrap();
    fs::write(
        dir.join("analysis.json"),
        r#"{
  "design": {"kind": "complete", "share": 0.5},
  "estimand": [{"kind": "mu", "arm": 1}, {"kind": "de"}],
  "estimator": ["ht", "hajek"],
  "variance": "stratified"
}
"#,
    )
    .unwrap();
    fs::write(
        dir.join("sweep.json"),
        r#"{
  "design": {"kind": "complete", "share": 0.5},
  "intervention": {"rules": [{"rule": "group_proportion", "group": "referent", "alpha": 0.5}]},
  "estimand": {"kind": "mu", "arm": 1},
  "estimator": ["ht", "hajek"],
  "sweep": {"alphas": [0.1, 0.3, 0.5, 0.7, 0.9]}
}
"#,
    )
    .unwrap();
    fs::write(
        dir.join("sim.json"),
        r#"{"k": [4], "n": 8, "m": [6], "models": ["M1", "M2"], "interventions": ["pi1", "pi2"], "reps": 20}
"#,
    )
    .unwrap();
    dir.to_path_buf()
}
