//! Estimation reports: point estimate, variance, standard error and interval.

use std::collections::BTreeMap;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::config::{AnalysisConfig, EstimandSpec, EstimatorKind, VarianceMethod};
use crate::error::{Error, Result};
use crate::estimand::{Analysis, EstimandKind, Numerics};
use crate::estimators::Observed;
use crate::frame::{ExperimentFrame, KeyMap};
use crate::io::Bundle;
use crate::oracle::{decomposed_ht_moments, exact_estimand, PotentialTable};
use crate::variance::{
    additive, default_policy, lipschitz_bound_hat, stratified, var_cr_special_hat, var_hajek_hat,
    HajekMode, LipschitzSpec, Term,
};

/// Two-sided normal quantile `z_{1 - alpha/2}`.
pub fn critical_value(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Schema(format!("confidence level alpha = {alpha} outside (0, 1)")));
    }
    let normal = Normal::new(0.0, 1.0).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(normal.inverse_cdf(1.0 - alpha / 2.0))
}

pub const NEGATIVE_VARIANCE_CLAMPED: &str = "negative_variance_clamped";
pub const HAJEK_LINEARIZED: &str =
    "hajek_linearized: variance targets the linearization, consistent as the number of clusters grows";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimandSummary {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arm: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_star: Option<f64>,
}

impl From<EstimandKind> for EstimandSummary {
    fn from(kind: EstimandKind) -> Self {
        let (arm, p_star) = match kind {
            EstimandKind::Mu(a) | EstimandKind::Ie(a) => (Some(a), None),
            EstimandKind::TauMulti(p) => (None, Some(p)),
            _ => (None, None),
        };
        let label = match kind {
            EstimandKind::Mu(_) => "mu".into(),
            EstimandKind::Ie(_) => "ie".into(),
            other => other.label(),
        };
        EstimandSummary { kind: label, arm, p_star }
    }
}

/// A variance point estimate, or an interval for bounds.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum VarianceValue {
    Point(f64),
    Interval { lo: f64, hi: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimateReport {
    pub estimand: EstimandSummary,
    pub estimator: String,
    pub point: f64,
    /// Clamped at zero; an interval for bounds.
    pub variance: VarianceValue,
    pub variance_raw: f64,
    pub se: f64,
    pub ci: [f64; 2],
    pub alpha: f64,
    pub method: String,
    pub diagnostics: BTreeMap<String, serde_json::Value>,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generated_at_unix: Option<u64>,
}

/// Inputs of one estimation besides the data.
#[derive(Clone, Debug)]
pub struct EstimateRequest<'a> {
    pub estimator: EstimatorKind,
    pub method: VarianceMethod,
    pub lipschitz: Option<&'a LipschitzSpec>,
    pub alpha: f64,
}

/// Point estimate, variance and interval for one analysis.
pub fn estimate(analysis: &Analysis, obs: &Observed, req: &EstimateRequest<'_>) -> Result<EstimateReport> {
    let z = critical_value(req.alpha)?;
    let mut warnings = Vec::new();
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("clusters".into(), analysis.k().into());
    diagnostics.insert(
        "intervention_units".into(),
        analysis.clusters.iter().map(|c| c.n).sum::<usize>().into(),
    );
    diagnostics.insert(
        "target_units".into(),
        analysis.clusters.iter().map(|c| c.targets).sum::<usize>().into(),
    );
    let point = match req.estimator {
        EstimatorKind::Ht => analysis.ht(obs)?,
        EstimatorKind::Hajek => analysis.hajek(obs)?,
    };
    if req.estimator == EstimatorKind::Hajek {
        let dens: Vec<f64> = point.arms.iter().map(|a| a.denominator).collect();
        diagnostics.insert("hajek_denominators".into(), dens.into());
    }
    let unsupported = || {
        Error::Unsupported(format!(
            "{} variance with the {} estimator",
            req.method.label(),
            req.estimator.label()
        ))
    };
    let (raw, bound, flags) = match (req.method, req.estimator) {
        (VarianceMethod::Stratified, EstimatorKind::Ht) => {
            let v = stratified::estimate(analysis, &Term::ht(analysis), obs, default_policy(analysis))?;
            (v.value, false, v.flags)
        }
        (VarianceMethod::Additive, EstimatorKind::Ht) => {
            let v = additive::estimate(analysis, &Term::ht(analysis), obs)?;
            (v.value, false, v.flags)
        }
        (VarianceMethod::Stratified, EstimatorKind::Hajek) => {
            let v = var_hajek_hat(analysis, obs, HajekMode::Stratified)?;
            (v.value, false, v.flags)
        }
        (VarianceMethod::Additive, EstimatorKind::Hajek) => {
            let v = var_hajek_hat(analysis, obs, HajekMode::Additive)?;
            (v.value, false, v.flags)
        }
        (VarianceMethod::Lipschitz, EstimatorKind::Ht) => {
            let spec = req.lipschitz.ok_or_else(|| {
                Error::Schema("lipschitz variance needs a lipschitz section".into())
            })?;
            (lipschitz_bound_hat(analysis, spec, obs)?, true, Vec::new())
        }
        (VarianceMethod::CrSpecial, EstimatorKind::Ht) => {
            (var_cr_special_hat(analysis, obs)?, false, Vec::new())
        }
        _ => return Err(unsupported()),
    };
    if !raw.is_finite() {
        return Err(Error::Numerical(format!("variance estimate is {raw}")));
    }
    warnings.extend(flags);
    if req.estimator == EstimatorKind::Hajek {
        warnings.push(HAJEK_LINEARIZED.into());
    }
    let clamped = if raw < 0.0 {
        warnings.push(NEGATIVE_VARIANCE_CLAMPED.into());
        0.0
    } else {
        raw
    };
    let variance = if bound {
        VarianceValue::Interval { lo: 0.0, hi: clamped }
    } else {
        VarianceValue::Point(clamped)
    };
    let se = clamped.sqrt();
    Ok(EstimateReport {
        estimand: analysis.estimand.kind.into(),
        estimator: req.estimator.label().into(),
        point: point.point,
        variance,
        variance_raw: raw,
        se,
        ci: [point.point - z * se, point.point + z * se],
        alpha: req.alpha,
        method: req.method.label().into(),
        diagnostics,
        warnings,
        generated_at_unix: None,
    })
}

/// Settings taken from the command line, overriding the configuration.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunOptions {
    pub alpha: Option<f64>,
    pub seed: u64,
    pub mc_draws: Option<usize>,
}

impl RunOptions {
    fn alpha(&self, config: &AnalysisConfig) -> f64 {
        self.alpha.or(config.alpha).unwrap_or(0.05)
    }

    fn numerics(&self, config: &AnalysisConfig) -> Numerics {
        let mut n = Numerics {
            seed: self.seed,
            mc_draws: self.mc_draws,
            ..Numerics::default()
        };
        if let Some(cap) = config.cap {
            n.cap = cap;
        }
        n
    }
}

fn analyses(
    frame: &ExperimentFrame,
    keys: &KeyMap,
    config: &AnalysisConfig,
    opts: &RunOptions,
) -> Result<Vec<(EstimandSpec, Result<Analysis>)>> {
    let designs = config.designs(frame)?;
    let numerics = opts.numerics(config);
    Ok(config
        .estimand
        .to_vec()
        .into_iter()
        .map(|spec| {
            let an = config
                .estimand(&spec, frame, &designs)
                .and_then(|e| Analysis::new(designs.clone(), keys.clone(), e, numerics));
            (spec, an)
        })
        .collect())
}

/// One report per estimand and estimator; the first failure aborts.
pub fn run_estimate(bundle: &Bundle, config: &AnalysisConfig, opts: &RunOptions) -> Result<Vec<EstimateReport>> {
    let obs = bundle.observed()?;
    let spec = config.lipschitz.as_ref().map(|l| l.spec());
    let alpha = opts.alpha(config);
    critical_value(alpha)?;
    let mut out = Vec::new();
    for (_, an) in analyses(&bundle.frame, &bundle.keys, config, opts)? {
        let an = an?;
        for estimator in config.estimator.to_vec() {
            let req = EstimateRequest {
                estimator,
                method: config.variance,
                lipschitz: spec.as_ref(),
                alpha,
            };
            out.push(estimate(&an, &obs, &req)?);
        }
    }
    Ok(out)
}

/// Reports at one group share, or the error that share produced.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub group_alpha: f64,
    pub reports: Vec<EstimateReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<SweepError>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepError {
    pub code: String,
    pub message: String,
}

impl From<&Error> for SweepError {
    fn from(e: &Error) -> Self {
        SweepError {
            code: e.code().into(),
            message: e.to_string(),
        }
    }
}

/// Flat row of a sweep for plotting.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub group_alpha: f64,
    pub estimand: String,
    pub estimator: String,
    pub point: Option<f64>,
    pub se: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub status: String,
}

/// Estimates over a grid of group shares; a failing share is recorded and
/// the sweep continues.
pub fn run_sweep(
    bundle: &Bundle,
    config: &AnalysisConfig,
    alphas: &[f64],
    opts: &RunOptions,
) -> Result<Vec<SweepPoint>> {
    if alphas.is_empty() {
        return Err(Error::Schema("a sweep needs at least one group share".into()));
    }
    let mut out = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let cfg = config.with_group_share(alpha)?;
        match run_estimate(bundle, &cfg, opts) {
            Ok(reports) => out.push(SweepPoint {
                group_alpha: alpha,
                reports,
                error: None,
            }),
            Err(e @ (Error::Schema(_) | Error::Io(_))) => return Err(e),
            Err(e) => out.push(SweepPoint {
                group_alpha: alpha,
                reports: Vec::new(),
                error: Some((&e).into()),
            }),
        }
    }
    Ok(out)
}

pub fn sweep_rows(points: &[SweepPoint]) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for p in points {
        if let Some(e) = &p.error {
            rows.push(SweepRow {
                group_alpha: p.group_alpha,
                estimand: String::new(),
                estimator: String::new(),
                point: None,
                se: None,
                ci_lo: None,
                ci_hi: None,
                status: e.code.clone(),
            });
        }
        for r in &p.reports {
            rows.push(SweepRow {
                group_alpha: p.group_alpha,
                estimand: r.estimand.kind.clone(),
                estimator: r.estimator.clone(),
                point: Some(r.point),
                se: Some(r.se),
                ci_lo: Some(r.ci[0]),
                ci_hi: Some(r.ci[1]),
                status: "ok".into(),
            });
        }
    }
    rows
}

/// Exact quantities under a known potential-outcome table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleReport {
    pub estimand: EstimandSummary,
    pub truth: Option<f64>,
    pub ht_mean: Option<f64>,
    pub ht_variance: Option<f64>,
    /// The identified stratified variance, when the interference structure allows it.
    pub stratified_variance: Option<f64>,
    pub errors: BTreeMap<String, SweepError>,
}

pub fn run_oracle(
    frame: &ExperimentFrame,
    keys: &KeyMap,
    config: &AnalysisConfig,
    table: &PotentialTable,
    opts: &RunOptions,
) -> Result<Vec<OracleReport>> {
    let mut out = Vec::new();
    for (_, an) in analyses(frame, keys, config, opts)? {
        let an = an?;
        let mut errors = BTreeMap::new();
        let mut keep = |name: &str, r: Result<f64>| match r {
            Ok(v) => Some(v),
            Err(e) => {
                errors.insert(name.to_string(), SweepError::from(&e));
                None
            }
        };
        let truth = keep("truth", exact_estimand(&an, table));
        let moments = decomposed_ht_moments(&an, table);
        let (ht_mean, ht_variance) = match moments {
            Ok((m, v)) => (Some(m), Some(v)),
            Err(e) => {
                keep("ht_moments", Err(e));
                (None, None)
            }
        };
        let stratified_variance = keep(
            "stratified_variance",
            table
                .node_values(&an)
                .and_then(|v| stratified::exact(&an, &Term::ht(&an), &v)),
        );
        out.push(OracleReport {
            estimand: an.estimand.kind.into(),
            truth,
            ht_mean,
            ht_variance,
            stratified_variance,
            errors,
        });
    }
    Ok(out)
}
