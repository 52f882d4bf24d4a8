//! Closed forms when the design and the intervention are the same complete
//! randomization: the HT mean behaves like a stratified sample mean without
//! replacement, with clusters as strata.

use crate::error::{Error, Result};
use crate::estimand::{Analysis, EstimandKind};
use crate::estimators::Observed;
use crate::variance::{pool_outcomes, PooledPotentials};

fn sample_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// `(n, n_1)` per cluster; fails unless every arm uses the design itself.
fn complete_counts(analysis: &Analysis) -> Result<Vec<(usize, usize)>> {
    if !matches!(analysis.estimand.kind, EstimandKind::Mu(_) | EstimandKind::De) {
        return Err(Error::Unsupported(format!(
            "the complete-randomization closed form covers mu and de, not {}",
            analysis.estimand.kind.label()
        )));
    }
    if !analysis.keys.is_single_key() {
        return Err(Error::Unsupported(
            "the complete-randomization closed form needs single key units".into(),
        ));
    }
    analysis
        .designs
        .iter()
        .zip(&analysis.clusters)
        .enumerate()
        .map(|(k, (f, plan))| {
            let counts = f.as_complete().ok_or_else(|| {
                Error::Assumption(format!("cluster {k}: design is not a complete randomization"))
            })?;
            if plan.arms.iter().any(|arm| &arm.base != f) {
                return Err(Error::Assumption(format!(
                    "cluster {k}: intervention differs from the design"
                )));
            }
            Ok(counts)
        })
        .collect()
}

fn arm_size(n: usize, n1: usize, a: u8) -> usize {
    if a == 1 {
        n1
    } else {
        n - n1
    }
}

/// Exact variance of the HT mean or direct effect.
pub fn var_cr_special(analysis: &Analysis, pooled: &PooledPotentials) -> Result<f64> {
    let counts = complete_counts(analysis)?;
    let kf = analysis.k() as f64;
    let mut total = 0.0;
    for (k, &(n, n1)) in counts.iter().enumerate() {
        let s = analysis.clusters[k].targets as f64;
        let scale = (n as f64 / s).powi(2);
        let v = &pooled.values[k];
        if n < 2 {
            return Err(Error::Undefined(format!(
                "cluster {k}: population variance needs two intervention units"
            )));
        }
        total += match analysis.estimand.kind {
            EstimandKind::Mu(a) => {
                let na = arm_size(n, n1, a) as f64;
                scale * (1.0 - na / n as f64) * sample_variance(&v[a as usize]) / na
            }
            _ => {
                let diff: Vec<f64> = v[1].iter().zip(&v[0]).map(|(x, y)| x - y).collect();
                scale
                    * (sample_variance(&v[1]) / n1 as f64
                        + sample_variance(&v[0]) / (n - n1) as f64
                        - sample_variance(&diff) / n as f64)
            }
        };
    }
    Ok(total / (kf * kf))
}

/// Unbiased (mean) or conservative (direct effect) estimate of [`var_cr_special`].
pub fn var_cr_special_hat(analysis: &Analysis, obs: &Observed) -> Result<f64> {
    let counts = complete_counts(analysis)?;
    analysis.check_observed(obs)?;
    let pooled = pool_outcomes(&analysis.keys, &obs.outcomes);
    let kf = analysis.k() as f64;
    let arm_values = |k: usize, a: u8| -> Result<Vec<f64>> {
        let x: Vec<f64> = obs.assignments[k]
            .iter()
            .zip(&pooled.pooled[k])
            .filter(|(&ai, _)| ai == a)
            .map(|(_, &y)| y)
            .collect();
        if x.len() < 2 {
            return Err(Error::NonMeasurable(format!(
                "cluster {k}: arm {a} has {} intervention units; its sample variance needs two",
                x.len()
            )));
        }
        Ok(x)
    };
    let mut total = 0.0;
    for (k, &(n, n1)) in counts.iter().enumerate() {
        let s = analysis.clusters[k].targets as f64;
        let scale = (n as f64 / s).powi(2);
        total += match analysis.estimand.kind {
            EstimandKind::Mu(a) => {
                let na = arm_size(n, n1, a) as f64;
                scale * (1.0 - na / n as f64) * sample_variance(&arm_values(k, a)?) / na
            }
            _ => {
                scale
                    * (sample_variance(&arm_values(k, 1)?) / n1 as f64
                        + sample_variance(&arm_values(k, 0)?) / (n - n1) as f64)
            }
        };
    }
    Ok(total / (kf * kf))
}
