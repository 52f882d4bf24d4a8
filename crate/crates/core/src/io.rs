//! CSV ingestion, validation and serialization.
//!
//! Schemas (headers are exact):
//! `units.csv` `cluster_id,unit_id,eligible,in_target[,<covariates>]`,
//! `keymap.csv` `cluster_id,unit_id,key_unit_id` (one row per key unit),
//! `assignment.csv` `cluster_id,unit_id,a`, `outcomes.csv` `cluster_id,unit_id,y`,
//! `potentials.csv` `cluster_id,unit_id,assignment,y` with the assignment
//! written as a 0/1 string over the cluster's intervention units.
//! Booleans are `0`/`1`; floats are written with 17 significant digits.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::design::Assignment;
use crate::error::{Error, Result};
use crate::estimators::Observed;
use crate::frame::{ClusterFrame, ClusterKeys, ExperimentFrame, KeyMap, Unit};
use crate::oracle::{PotentialTable, UnitPotential};

pub const UNITS_HEADER: [&str; 4] = ["cluster_id", "unit_id", "eligible", "in_target"];
pub const KEYMAP_HEADER: [&str; 3] = ["cluster_id", "unit_id", "key_unit_id"];
pub const ASSIGNMENT_HEADER: [&str; 3] = ["cluster_id", "unit_id", "a"];
pub const OUTCOMES_HEADER: [&str; 3] = ["cluster_id", "unit_id", "y"];
pub const POTENTIALS_HEADER: [&str; 4] = ["cluster_id", "unit_id", "assignment", "y"];

/// Float with 17 significant digits; round-trips exactly.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

/// Violation class, mapped onto [`Error`] variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Schema,
    Integrity,
    InvalidData,
}

/// One problem found while loading, with its file and 1-based line.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub file: String,
    /// Line in the file, the header being line 1; 0 when not tied to a line.
    pub line: usize,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line > 0 {
            write!(f, "{}:{}: {}", self.file, self.line, self.message)
        } else {
            write!(f, "{}: {}", self.file, self.message)
        }
    }
}

/// Every violation found in a bundle.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    fn push(&mut self, kind: ViolationKind, file: &str, line: usize, message: impl Into<String>) {
        self.violations.push(Violation {
            kind,
            file: file.to_string(),
            line,
            message: message.into(),
        });
    }

    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    /// The error of the first violation's class, listing every violation.
    pub fn into_result(self) -> Result<()> {
        let Some(first) = self.violations.first() else {
            return Ok(());
        };
        let text = self
            .violations
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join("; ");
        Err(match first.kind {
            ViolationKind::Schema => Error::Schema(text),
            ViolationKind::Integrity => Error::Integrity(text),
            ViolationKind::InvalidData => Error::InvalidData(text),
        })
    }
}

/// Locations of the four input tables; assignment and outcomes are optional
/// for commands that do not need observed data.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetPaths {
    pub units: PathBuf,
    pub keymap: PathBuf,
    pub assignment: Option<PathBuf>,
    pub outcomes: Option<PathBuf>,
}

impl DatasetPaths {
    /// The conventional file names inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        DatasetPaths {
            units: dir.join("units.csv"),
            keymap: dir.join("keymap.csv"),
            assignment: Some(dir.join("assignment.csv")),
            outcomes: Some(dir.join("outcomes.csv")),
        }
    }
}

/// Validated experiment data.
#[derive(Clone, Debug, PartialEq)]
pub struct Bundle {
    pub frame: ExperimentFrame,
    pub keys: KeyMap,
    /// Covariate columns of `units.csv` in file order.
    pub covariate_names: Vec<String>,
    pub assignments: Option<Vec<Assignment>>,
    pub outcomes: Option<Vec<Vec<f64>>>,
}

impl Bundle {
    pub fn observed(&self) -> Result<Observed> {
        match (&self.assignments, &self.outcomes) {
            (Some(a), Some(y)) => Ok(Observed {
                assignments: a.clone(),
                outcomes: y.clone(),
            }),
            _ => Err(Error::Schema(
                "assignment and outcome tables are required for estimation".into(),
            )),
        }
    }
}

fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Rows of a CSV file with their line numbers, after an exact header check.
struct Table {
    label: String,
    header: Vec<String>,
    rows: Vec<(usize, Vec<String>)>,
}

fn read_table(path: &Path, expected: &[&str], extra: bool, report: &mut ValidationReport) -> Result<Option<Table>> {
    let label = file_label(path);
    let file = File::open(path).map_err(|e| {
        Error::Schema(format!("cannot open {}: {e}", path.display()))
    })?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.to_string()).collect();
    let prefix_ok = header.len() >= expected.len()
        && header.iter().zip(expected).all(|(h, e)| h == e)
        && (extra || header.len() == expected.len());
    if !prefix_ok {
        report.push(
            ViolationKind::Schema,
            &label,
            1,
            format!(
                "header {:?} does not match {}{}",
                header,
                expected.join(","),
                if extra { "[,<covariates>]" } else { "" }
            ),
        );
        return Ok(None);
    }
    let mut rows = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let line = idx + 2;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                report.push(ViolationKind::Schema, &label, line, e.to_string());
                continue;
            }
        };
        if rec.len() != header.len() {
            report.push(
                ViolationKind::Schema,
                &label,
                line,
                format!("{} fields, expected {}", rec.len(), header.len()),
            );
            continue;
        }
        rows.push((line, rec.iter().map(|s| s.trim().to_string()).collect()));
    }
    Ok(Some(Table { label, header, rows }))
}

fn parse_flag(v: &str) -> Option<bool> {
    match v {
        "0" => Some(false),
        "1" => Some(true),
        _ => None,
    }
}

fn parse_assignment_string(s: &str) -> Option<Assignment> {
    s.chars()
        .map(|c| match c {
            '0' => Some(0u8),
            '1' => Some(1u8),
            _ => None,
        })
        .collect()
}

/// Writes an assignment as a 0/1 string.
pub fn assignment_string(a: &[u8]) -> String {
    a.iter().map(|&x| if x == 1 { '1' } else { '0' }).collect()
}

/// Loads every table, collecting violations instead of stopping at the first.
pub fn validate(paths: &DatasetPaths) -> Result<(Option<Bundle>, ValidationReport)> {
    let mut report = ValidationReport::default();
    let Some(units) = read_table(&paths.units, &UNITS_HEADER, true, &mut report)? else {
        return Ok((None, report));
    };
    let covariate_names: Vec<String> = units.header[UNITS_HEADER.len()..].to_vec();
    let mut order: Vec<String> = Vec::new();
    let mut rosters: HashMap<String, Vec<Unit>> = HashMap::new();
    for (line, r) in &units.rows {
        let (Some(eligible), Some(in_target)) = (parse_flag(&r[2]), parse_flag(&r[3])) else {
            report.push(
                ViolationKind::Schema,
                &units.label,
                *line,
                format!("eligible and in_target must be 0 or 1, got {:?} and {:?}", r[2], r[3]),
            );
            continue;
        };
        if r[0].is_empty() || r[1].is_empty() {
            report.push(ViolationKind::Schema, &units.label, *line, "empty cluster_id or unit_id");
            continue;
        }
        let roster = rosters.entry(r[0].clone()).or_insert_with(|| {
            order.push(r[0].clone());
            Vec::new()
        });
        if roster.iter().any(|u| u.id == r[1]) {
            report.push(
                ViolationKind::Integrity,
                &units.label,
                *line,
                format!("duplicate unit {} in cluster {}", r[1], r[0]),
            );
            continue;
        }
        roster.push(Unit {
            id: r[1].clone(),
            eligible,
            in_target,
            covariates: covariate_names
                .iter()
                .cloned()
                .zip(r[UNITS_HEADER.len()..].iter().cloned())
                .collect(),
        });
    }
    let mut clusters = Vec::with_capacity(order.len());
    for id in &order {
        match ClusterFrame::new(id.clone(), rosters.remove(id).unwrap_or_default()) {
            Ok(c) => clusters.push(c),
            Err(e) => report.push(ViolationKind::Integrity, &units.label, 0, e.to_string()),
        }
    }
    if !report.is_ok() {
        return Ok((None, report));
    }
    let frame = match ExperimentFrame::new(clusters) {
        Ok(f) => f,
        Err(e) => {
            report.push(ViolationKind::Integrity, &units.label, 0, e.to_string());
            return Ok((None, report));
        }
    };

    let mut key_lists: Vec<Vec<Vec<usize>>> = frame
        .clusters
        .iter()
        .map(|c| vec![Vec::new(); c.target_rows().len()])
        .collect();
    if let Some(km) = read_table(&paths.keymap, &KEYMAP_HEADER, false, &mut report)? {
        for (line, r) in &km.rows {
            let Some(k) = frame.cluster_index(&r[0]) else {
                report.push(ViolationKind::Integrity, &km.label, *line, format!("unknown cluster {}", r[0]));
                continue;
            };
            let c = &frame.clusters[k];
            let Some(j) = c.target_position(&r[1]) else {
                report.push(
                    ViolationKind::Integrity,
                    &km.label,
                    *line,
                    format!("unit {} is not a target unit of cluster {}", r[1], r[0]),
                );
                continue;
            };
            let Some(i) = c.intervention_position(&r[2]) else {
                report.push(
                    ViolationKind::Integrity,
                    &km.label,
                    *line,
                    format!("key unit {} is not an intervention unit of cluster {}", r[2], r[0]),
                );
                continue;
            };
            if key_lists[k][j].contains(&i) {
                report.push(
                    ViolationKind::Integrity,
                    &km.label,
                    *line,
                    format!("duplicate key {} for unit {}", r[2], r[1]),
                );
                continue;
            }
            key_lists[k][j].push(i);
        }
        for (k, c) in frame.clusters.iter().enumerate() {
            for (j, &row) in c.target_rows().iter().enumerate() {
                if key_lists[k][j].is_empty() {
                    report.push(
                        ViolationKind::Integrity,
                        &km.label,
                        0,
                        format!("target unit {} of cluster {} has no key unit", c.units[row].id, c.id),
                    );
                }
            }
        }
    }

    let assignments = match &paths.assignment {
        Some(p) => read_assignments(p, &frame, &mut report)?,
        None => None,
    };
    let outcomes = match &paths.outcomes {
        Some(p) => read_outcomes(p, &frame, &mut report)?,
        None => None,
    };
    if !report.is_ok() {
        return Ok((None, report));
    }
    let keys = KeyMap::new(
        frame
            .clusters
            .iter()
            .zip(key_lists)
            .map(|(c, mut lists)| {
                for l in &mut lists {
                    l.sort_unstable();
                }
                ClusterKeys::new(c.n(), lists)
            })
            .collect::<Result<Vec<_>>>()?,
    )?;
    Ok((
        Some(Bundle {
            frame,
            keys,
            covariate_names,
            assignments,
            outcomes,
        }),
        report,
    ))
}

fn read_assignments(
    path: &Path,
    frame: &ExperimentFrame,
    report: &mut ValidationReport,
) -> Result<Option<Vec<Assignment>>> {
    let Some(t) = read_table(path, &ASSIGNMENT_HEADER, false, report)? else {
        return Ok(None);
    };
    let mut out: Vec<Vec<Option<u8>>> = frame.clusters.iter().map(|c| vec![None; c.n()]).collect();
    for (line, r) in &t.rows {
        let Some(k) = frame.cluster_index(&r[0]) else {
            report.push(ViolationKind::Integrity, &t.label, *line, format!("unknown cluster {}", r[0]));
            continue;
        };
        let Some(i) = frame.clusters[k].intervention_position(&r[1]) else {
            report.push(
                ViolationKind::Integrity,
                &t.label,
                *line,
                format!("unit {} is not an intervention unit of cluster {}", r[1], r[0]),
            );
            continue;
        };
        let Some(a) = parse_flag(&r[2]) else {
            report.push(ViolationKind::Schema, &t.label, *line, format!("a must be 0 or 1, got {:?}", r[2]));
            continue;
        };
        if out[k][i].replace(a as u8).is_some() {
            report.push(
                ViolationKind::Integrity,
                &t.label,
                *line,
                format!("duplicate assignment for unit {}", r[1]),
            );
        }
    }
    let mut result = Vec::with_capacity(out.len());
    for (c, a) in frame.clusters.iter().zip(out) {
        let mut v = Vec::with_capacity(a.len());
        for (i, x) in a.into_iter().enumerate() {
            match x {
                Some(x) => v.push(x),
                None => {
                    report.push(
                        ViolationKind::Integrity,
                        &t.label,
                        0,
                        format!(
                            "no assignment for intervention unit {} of cluster {}",
                            c.units[c.intervention_rows()[i]].id,
                            c.id
                        ),
                    );
                    v.push(0);
                }
            }
        }
        result.push(v);
    }
    Ok(Some(result))
}

fn read_outcomes(
    path: &Path,
    frame: &ExperimentFrame,
    report: &mut ValidationReport,
) -> Result<Option<Vec<Vec<f64>>>> {
    let Some(t) = read_table(path, &OUTCOMES_HEADER, false, report)? else {
        return Ok(None);
    };
    let mut out: Vec<Vec<Option<f64>>> = frame
        .clusters
        .iter()
        .map(|c| vec![None; c.target_rows().len()])
        .collect();
    for (line, r) in &t.rows {
        let Some(k) = frame.cluster_index(&r[0]) else {
            report.push(ViolationKind::Integrity, &t.label, *line, format!("unknown cluster {}", r[0]));
            continue;
        };
        let Some(j) = frame.clusters[k].target_position(&r[1]) else {
            report.push(
                ViolationKind::Integrity,
                &t.label,
                *line,
                format!("unit {} is not a target unit of cluster {}", r[1], r[0]),
            );
            continue;
        };
        let y = match r[2].parse::<f64>() {
            Ok(y) if y.is_finite() => y,
            _ => {
                report.push(
                    ViolationKind::InvalidData,
                    &t.label,
                    *line,
                    format!("outcome {:?} of unit {} is missing or not a finite number", r[2], r[1]),
                );
                continue;
            }
        };
        if out[k][j].replace(y).is_some() {
            report.push(
                ViolationKind::Integrity,
                &t.label,
                *line,
                format!("duplicate outcome for unit {}", r[1]),
            );
        }
    }
    let mut result = Vec::with_capacity(out.len());
    for (c, y) in frame.clusters.iter().zip(out) {
        let mut v = Vec::with_capacity(y.len());
        for (j, x) in y.into_iter().enumerate() {
            if x.is_none() {
                report.push(
                    ViolationKind::Integrity,
                    &t.label,
                    0,
                    format!(
                        "no outcome for target unit {} of cluster {}",
                        c.units[c.target_rows()[j]].id,
                        c.id
                    ),
                );
            }
            v.push(x.unwrap_or(f64::NAN));
        }
        result.push(v);
    }
    Ok(Some(result))
}

/// Loads and validates a bundle; fails with the class of the first violation.
pub fn load(paths: &DatasetPaths) -> Result<Bundle> {
    let (bundle, report) = validate(paths)?;
    report.into_result()?;
    bundle.ok_or_else(|| Error::Schema("bundle could not be assembled".into()))
}

fn write_rows(path: &Path, header: &[String], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

fn flag(b: bool) -> String {
    if b { "1" } else { "0" }.to_string()
}

/// Writes the bundle's tables under `dir` with the conventional file names.
pub fn write_bundle(bundle: &Bundle, dir: &Path) -> Result<DatasetPaths> {
    std::fs::create_dir_all(dir)?;
    let paths = DatasetPaths::in_dir(dir);
    let mut header: Vec<String> = UNITS_HEADER.iter().map(|s| s.to_string()).collect();
    header.extend(bundle.covariate_names.iter().cloned());
    let mut rows = Vec::new();
    for c in &bundle.frame.clusters {
        for u in &c.units {
            let mut r = vec![c.id.clone(), u.id.clone(), flag(u.eligible), flag(u.in_target)];
            r.extend(
                bundle
                    .covariate_names
                    .iter()
                    .map(|n| u.covariates.get(n).cloned().unwrap_or_default()),
            );
            rows.push(r);
        }
    }
    write_rows(&paths.units, &header, rows)?;

    let mut rows = Vec::new();
    for (c, ck) in bundle.frame.clusters.iter().zip(bundle.keys.clusters()) {
        for (j, &row) in c.target_rows().iter().enumerate() {
            for &i in ck.keys(j) {
                rows.push(vec![
                    c.id.clone(),
                    c.units[row].id.clone(),
                    c.units[c.intervention_rows()[i]].id.clone(),
                ]);
            }
        }
    }
    write_rows(&paths.keymap, &KEYMAP_HEADER.map(String::from), rows)?;

    if let Some(assignments) = &bundle.assignments {
        let mut rows = Vec::new();
        for (c, a) in bundle.frame.clusters.iter().zip(assignments) {
            for (&row, &x) in c.intervention_rows().iter().zip(a) {
                rows.push(vec![c.id.clone(), c.units[row].id.clone(), x.to_string()]);
            }
        }
        write_rows(paths.assignment.as_ref().unwrap(), &ASSIGNMENT_HEADER.map(String::from), rows)?;
    }
    if let Some(outcomes) = &bundle.outcomes {
        let mut rows = Vec::new();
        for (c, y) in bundle.frame.clusters.iter().zip(outcomes) {
            for (&row, &v) in c.target_rows().iter().zip(y) {
                rows.push(vec![c.id.clone(), c.units[row].id.clone(), fmt_f64(v)]);
            }
        }
        write_rows(paths.outcomes.as_ref().unwrap(), &OUTCOMES_HEADER.map(String::from), rows)?;
    }
    let paths = DatasetPaths {
        assignment: bundle.assignments.as_ref().and(paths.assignment),
        outcomes: bundle.outcomes.as_ref().and(paths.outcomes),
        ..paths
    };
    Ok(paths)
}

/// Reads a tabulated potential-outcome table for the bundle's target units.
pub fn read_potentials(path: &Path, frame: &ExperimentFrame) -> Result<PotentialTable> {
    let mut report = ValidationReport::default();
    let Some(t) = read_table(path, &POTENTIALS_HEADER, false, &mut report)? else {
        report.into_result()?;
        unreachable!()
    };
    let mut tables: Vec<Vec<HashMap<Assignment, f64>>> = frame
        .clusters
        .iter()
        .map(|c| vec![HashMap::new(); c.target_rows().len()])
        .collect();
    for (line, r) in &t.rows {
        let Some(k) = frame.cluster_index(&r[0]) else {
            report.push(ViolationKind::Integrity, &t.label, *line, format!("unknown cluster {}", r[0]));
            continue;
        };
        let c = &frame.clusters[k];
        let Some(j) = c.target_position(&r[1]) else {
            report.push(
                ViolationKind::Integrity,
                &t.label,
                *line,
                format!("unit {} is not a target unit of cluster {}", r[1], r[0]),
            );
            continue;
        };
        let a = match parse_assignment_string(&r[2]) {
            Some(a) if a.len() == c.n() => a,
            _ => {
                report.push(
                    ViolationKind::Schema,
                    &t.label,
                    *line,
                    format!("assignment {:?} is not a 0/1 string of length {}", r[2], c.n()),
                );
                continue;
            }
        };
        match r[3].parse::<f64>() {
            Ok(y) if y.is_finite() => {
                if tables[k][j].insert(a, y).is_some() {
                    report.push(ViolationKind::Integrity, &t.label, *line, "duplicate potential outcome row");
                }
            }
            _ => report.push(
                ViolationKind::InvalidData,
                &t.label,
                *line,
                format!("potential outcome {:?} is not a finite number", r[3]),
            ),
        }
    }
    report.into_result()?;
    Ok(PotentialTable::new(
        tables
            .into_iter()
            .map(|units| units.into_iter().map(UnitPotential::Tabulated).collect())
            .collect(),
    ))
}

/// Writes a potential table evaluated on `supports[k]` for every target unit.
pub fn write_potentials(
    path: &Path,
    frame: &ExperimentFrame,
    table: &PotentialTable,
    supports: &[Vec<Assignment>],
) -> Result<()> {
    let mut rows = Vec::new();
    for (k, c) in frame.clusters.iter().enumerate() {
        for (j, &row) in c.target_rows().iter().enumerate() {
            for a in &supports[k] {
                let y = table.clusters[k][j].eval(a).ok_or_else(|| {
                    Error::InvalidData(format!("potential outcome undefined at {}", assignment_string(a)))
                })?;
                rows.push(vec![c.id.clone(), c.units[row].id.clone(), assignment_string(a), fmt_f64(y)]);
            }
        }
    }
    write_rows(path, &POTENTIALS_HEADER.map(String::from), rows)
}

/// Writes serializable rows as CSV with a header.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Serializes floats with 17 significant digits.
struct PreciseFormatter(serde_json::ser::PrettyFormatter<'static>);

impl serde_json::ser::Formatter for PreciseFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        writer.write_all(fmt_f64(value).as_bytes())
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Pretty JSON with 17-significant-digit floats and a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(
        &mut buf,
        PreciseFormatter(serde_json::ser::PrettyFormatter::new()),
    );
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    String::from_utf8(buf).map_err(|e| Error::Numerical(e.to_string()))
}

/// Covariate values of a cluster's intervention units.
pub fn intervention_covariate(frame: &ClusterFrame, name: &str) -> Result<Vec<String>> {
    frame
        .intervention_rows()
        .iter()
        .map(|&r| {
            frame.units[r].covariates.get(name).cloned().ok_or_else(|| {
                Error::Schema(format!("units table has no covariate column {name:?}"))
            })
        })
        .collect()
}

/// Number of rows per cluster, for summaries.
pub fn cluster_sizes(frame: &ExperimentFrame) -> BTreeMap<String, (usize, usize)> {
    frame
        .clusters
        .iter()
        .map(|c| (c.id.clone(), (c.n(), c.target_rows().len())))
        .collect()
}
