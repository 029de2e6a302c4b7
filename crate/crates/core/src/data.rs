//! Trial datasets: loading, validation, missingness patterns and descriptives.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

/// Values with `|x|` below this are treated as exact (structural) zeros.
pub const ZERO_TOLERANCE: f64 = 1e-9;

pub const OUTCOME_COLUMNS: [&str; 7] = ["id", "arm", "e_pfs", "e_pps", "c_drug", "c_hos", "c_ae"];

#[inline]
pub fn is_structural_zero(x: f64) -> bool {
    x.abs() < ZERO_TOLERANCE
}

/// The five outcome variables, in their modelling order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variable {
    EPfs,
    EPps,
    CDrug,
    CHos,
    CAe,
}

impl Variable {
    pub const ALL: [Variable; 5] = [
        Variable::EPfs,
        Variable::EPps,
        Variable::CDrug,
        Variable::CHos,
        Variable::CAe,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        OUTCOME_COLUMNS[self.index() + 2]
    }

    /// Variables with a point mass at zero.
    pub fn is_hurdle(self) -> bool {
        self != Variable::EPfs
    }

    pub fn is_cost(self) -> bool {
        matches!(self, Variable::CDrug | Variable::CHos | Variable::CAe)
    }

    pub fn from_name(s: &str) -> Option<Variable> {
        Variable::ALL.into_iter().find(|v| v.name() == s)
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("malformed header: {0}")]
    Header(String),
    #[error("wrong number of fields at row {row}: expected {expected}, found {found}")]
    FieldCount { row: usize, expected: usize, found: usize },
    #[error("non-numeric value {value:?} at row {row}, column {column}")]
    NonNumeric { row: usize, column: String, value: String },
    #[error("arm out of range at row {row}: {value}")]
    ArmOutOfRange { row: usize, value: String },
    #[error("negative observed value {value} at row {row}, column {column}")]
    Negative { row: usize, column: String, value: f64 },
    #[error("duplicate id {id:?} at row {row}")]
    DuplicateId { row: usize, id: String },
    #[error("empty id at row {row}")]
    EmptyId { row: usize },
    #[error("missing covariate at row {row}, column {column}")]
    MissingCovariate { row: usize, column: String },
    #[error("arm {0} has no records")]
    EmptyArm(u8),
    #[error("csv: {0}")]
    Csv(String),
    #[error("io: {0}")]
    Io(String),
}

impl DataError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            DataError::Header(_) => "header",
            DataError::FieldCount { .. } => "field_count",
            DataError::NonNumeric { .. } => "non_numeric",
            DataError::ArmOutOfRange { .. } => "arm_out_of_range",
            DataError::Negative { .. } => "negative_value",
            DataError::DuplicateId { .. } => "duplicate_id",
            DataError::EmptyId { .. } => "empty_id",
            DataError::MissingCovariate { .. } => "missing_covariate",
            DataError::EmptyArm(_) => "empty_arm",
            DataError::Csv(_) => "csv",
            DataError::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> Self {
        DataError::Io(e.to_string())
    }
}

impl From<csv::Error> for DataError {
    fn from(e: csv::Error) -> Self {
        DataError::Csv(e.to_string())
    }
}

/// One subject: arm, the five outcomes (`None` = missing) and covariates.
#[derive(Clone, Debug, PartialEq)]
pub struct PatientRecord {
    pub id: String,
    pub arm: u8,
    pub outcomes: [Option<f64>; 5],
    pub covariates: Vec<f64>,
}

impl PatientRecord {
    pub fn get(&self, v: Variable) -> Option<f64> {
        self.outcomes[v.index()]
    }

    pub fn observed_flags(&self) -> [bool; 5] {
        self.outcomes.map(|o| o.is_some())
    }

    pub fn is_complete(&self) -> bool {
        self.outcomes.iter().all(Option::is_some)
    }
}

/// An immutable, validated two-arm dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialDataset {
    records: Vec<PatientRecord>,
    covariate_names: Vec<String>,
}

impl TrialDataset {
    /// Validates `records`: unique non-empty ids, arms in {1,2} with at least
    /// one record each, non-negative observed `e_pps` and costs.
    pub fn new(records: Vec<PatientRecord>, covariate_names: Vec<String>) -> Result<Self, DataError> {
        let mut seen = HashSet::new();
        for (k, r) in records.iter().enumerate() {
            let row = k + 1;
            if r.id.is_empty() {
                return Err(DataError::EmptyId { row });
            }
            if !seen.insert(r.id.as_str()) {
                return Err(DataError::DuplicateId { row, id: r.id.clone() });
            }
            if r.arm != 1 && r.arm != 2 {
                return Err(DataError::ArmOutOfRange { row, value: r.arm.to_string() });
            }
            for v in Variable::ALL.into_iter().filter(|v| v.is_hurdle()) {
                if let Some(x) = r.get(v) {
                    if x < 0.0 && !is_structural_zero(x) {
                        return Err(DataError::Negative { row, column: v.name().into(), value: x });
                    }
                }
                if let Some(x) = r.get(v) {
                    if !x.is_finite() {
                        return Err(DataError::NonNumeric { row, column: v.name().into(), value: x.to_string() });
                    }
                }
            }
            if let Some(x) = r.get(Variable::EPfs) {
                if !x.is_finite() {
                    return Err(DataError::NonNumeric { row, column: "e_pfs".into(), value: x.to_string() });
                }
            }
            if r.covariates.len() != covariate_names.len() {
                return Err(DataError::FieldCount {
                    row,
                    expected: 7 + covariate_names.len(),
                    found: 7 + r.covariates.len(),
                });
            }
        }
        for arm in [1u8, 2] {
            if !records.iter().any(|r| r.arm == arm) {
                return Err(DataError::EmptyArm(arm));
            }
        }
        Ok(TrialDataset { records, covariate_names })
    }

    pub fn records(&self) -> &[PatientRecord] {
        &self.records
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn arm_size(&self, arm: u8) -> usize {
        self.records.iter().filter(|r| r.arm == arm).count()
    }

    /// Records of one arm, in file order.
    pub fn arm(&self, arm: u8) -> ArmData {
        ArmData {
            arm,
            records: self.records.iter().filter(|r| r.arm == arm).cloned().collect(),
            covariate_names: self.covariate_names.clone(),
        }
    }

    /// Returns a copy with `f` applied to every record; re-validates.
    pub fn map_records<F>(&self, f: F) -> Result<TrialDataset, DataError>
    where
        F: FnMut(&PatientRecord) -> PatientRecord,
    {
        TrialDataset::new(self.records.iter().map(f).collect(), self.covariate_names.clone())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), DataError> {
        let mut out = csv::WriterBuilder::new().from_writer(w);
        let mut header: Vec<String> = OUTCOME_COLUMNS.iter().map(|s| s.to_string()).collect();
        header.extend(self.covariate_names.iter().cloned());
        out.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.id.clone(), r.arm.to_string()];
            row.extend(r.outcomes.iter().map(|o| match o {
                Some(x) => format_value(*x),
                None => "NA".to_string(),
            }));
            row.extend(r.covariates.iter().map(|x| format_value(*x)));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), DataError> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Shortest decimal string that parses back to the same `f64`.
pub fn format_value(x: f64) -> String {
    format!("{x}")
}

/// The records of a single arm.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmData {
    pub arm: u8,
    pub records: Vec<PatientRecord>,
    pub covariate_names: Vec<String>,
}

impl ArmData {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn observed(&self, v: Variable) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.get(v)).collect()
    }
}

pub fn load_trial_csv(path: &Path) -> Result<TrialDataset, DataError> {
    let f = std::fs::File::open(path)?;
    parse_trial_csv(std::io::BufReader::new(f))
}

pub fn parse_trial_csv<R: Read>(reader: R) -> Result<TrialDataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = rdr.records();
    let header = match rows.next() {
        Some(h) => h?,
        None => return Err(DataError::Header("empty file".into())),
    };
    let header: Vec<&str> = header.iter().collect();
    if header.len() < OUTCOME_COLUMNS.len() || header[..7] != OUTCOME_COLUMNS {
        return Err(DataError::Header(format!(
            "expected {} followed by optional x1..xp, found {}",
            OUTCOME_COLUMNS.join(","),
            header.join(",")
        )));
    }
    let covariate_names: Vec<String> = header[7..].iter().map(|s| s.to_string()).collect();
    for (j, name) in covariate_names.iter().enumerate() {
        if *name != format!("x{}", j + 1) {
            return Err(DataError::Header(format!("covariate column {} must be named x{}, found {name}", j + 8, j + 1)));
        }
    }
    let width = header.len();
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (k, rec) in rows.enumerate() {
        let rec = rec?;
        let row = k + 1;
        if rec.len() != width {
            return Err(DataError::FieldCount { row, expected: width, found: rec.len() });
        }
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(DataError::EmptyId { row });
        }
        if !seen.insert(id.clone()) {
            return Err(DataError::DuplicateId { row, id });
        }
        let arm = match rec[1].parse::<i64>() {
            Ok(a @ (1 | 2)) => a as u8,
            Ok(_) => return Err(DataError::ArmOutOfRange { row, value: rec[1].to_string() }),
            Err(_) => {
                return Err(DataError::NonNumeric { row, column: "arm".into(), value: rec[1].to_string() })
            }
        };
        let mut outcomes = [None; 5];
        for v in Variable::ALL {
            let cell = &rec[v.index() + 2];
            outcomes[v.index()] = parse_cell(cell, row, v.name())?;
            if let Some(x) = outcomes[v.index()] {
                if v.is_hurdle() && x < 0.0 && !is_structural_zero(x) {
                    return Err(DataError::Negative { row, column: v.name().into(), value: x });
                }
            }
        }
        let mut covariates = Vec::with_capacity(covariate_names.len());
        for (j, name) in covariate_names.iter().enumerate() {
            match parse_cell(&rec[7 + j], row, name)? {
                Some(x) => covariates.push(x),
                None => return Err(DataError::MissingCovariate { row, column: name.clone() }),
            }
        }
        records.push(PatientRecord { id, arm, outcomes, covariates });
    }
    TrialDataset::new(records, covariate_names)
}

fn parse_cell(cell: &str, row: usize, column: &str) -> Result<Option<f64>, DataError> {
    if cell == "NA" {
        return Ok(None);
    }
    match cell.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(Some(x)),
        _ => Err(DataError::NonNumeric { row, column: column.into(), value: cell.into() }),
    }
}

/// One observed/missing configuration and its per-arm counts.
#[derive(Clone, Debug, PartialEq)]
pub struct PatternRow {
    /// `true` where the variable is observed, in [`Variable::ALL`] order.
    pub observed: [bool; 5],
    pub counts: [usize; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatternTable {
    pub rows: Vec<PatternRow>,
    pub arm_sizes: [usize; 2],
}

impl PatternTable {
    /// Percentage of `arm` (1 or 2) in row `i`, derived from the counts.
    pub fn percent(&self, i: usize, arm: u8) -> f64 {
        let a = (arm - 1) as usize;
        if self.arm_sizes[a] == 0 {
            return 0.0;
        }
        100.0 * self.rows[i].counts[a] as f64 / self.arm_sizes[a] as f64
    }

    pub fn total(&self, i: usize) -> usize {
        self.rows[i].counts[0] + self.rows[i].counts[1]
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), DataError> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = Variable::ALL.iter().map(|v| v.name().to_string()).collect();
        header.extend(["n_arm1", "pct_arm1", "n_arm2", "pct_arm2", "n_total", "pct_total"].map(String::from));
        out.write_record(&header)?;
        let n = (self.arm_sizes[0] + self.arm_sizes[1]).max(1);
        for (i, r) in self.rows.iter().enumerate() {
            let mut row: Vec<String> =
                r.observed.iter().map(|&o| if o { "obs" } else { "NA" }.to_string()).collect();
            row.push(r.counts[0].to_string());
            row.push(format!("{:.1}", self.percent(i, 1)));
            row.push(r.counts[1].to_string());
            row.push(format!("{:.1}", self.percent(i, 2)));
            row.push(self.total(i).to_string());
            row.push(format!("{:.1}", 100.0 * self.total(i) as f64 / n as f64));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Tabulates the distinct missingness configurations. The completer row
/// (everything observed) comes first, even with zero count; the remaining
/// rows are ordered by decreasing total count, then by pattern.
pub fn missingness_patterns(d: &TrialDataset) -> PatternTable {
    let mut map: BTreeMap<[bool; 5], [usize; 2]> = BTreeMap::new();
    map.insert([true; 5], [0, 0]);
    for r in d.records() {
        map.entry(r.observed_flags()).or_default()[(r.arm - 1) as usize] += 1;
    }
    let complete = map.remove(&[true; 5]).unwrap_or_default();
    let mut rest: Vec<PatternRow> = map
        .into_iter()
        .map(|(observed, counts)| PatternRow { observed, counts })
        .collect();
    // BTreeMap order is false < true, so stable sort keeps a fixed tie order
    rest.sort_by(|a, b| (b.counts[0] + b.counts[1]).cmp(&(a.counts[0] + a.counts[1])));
    let mut rows = vec![PatternRow { observed: [true; 5], counts: complete }];
    rows.extend(rest);
    PatternTable { rows, arm_sizes: [d.arm_size(1), d.arm_size(2)] }
}

/// Descriptives for one arm and variable, over observed values only.
#[derive(Clone, Debug, PartialEq)]
pub struct VariableSummary {
    pub arm: u8,
    pub variable: Variable,
    pub n_observed: usize,
    pub n_missing: usize,
    pub mean: Option<f64>,
    /// `None` (and flagged) when fewer than two values are observed.
    pub sd: Option<f64>,
    /// Proportion of exact zeros; only for `e_pps` and the costs.
    pub zero_proportion: Option<f64>,
}

impl VariableSummary {
    pub fn sd_undefined(&self) -> bool {
        self.sd.is_none()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DescriptiveSummary {
    pub rows: Vec<VariableSummary>,
}

impl DescriptiveSummary {
    pub fn get(&self, arm: u8, v: Variable) -> &VariableSummary {
        self.rows
            .iter()
            .find(|r| r.arm == arm && r.variable == v)
            .expect("summary has every arm and variable")
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), DataError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["arm", "variable", "n_obs", "n_missing", "mean", "sd", "zero_prop", "sd_flag"])?;
        let opt = |x: Option<f64>| x.map(format_value).unwrap_or_else(|| "NA".into());
        for r in &self.rows {
            out.write_record([
                r.arm.to_string(),
                r.variable.name().to_string(),
                r.n_observed.to_string(),
                r.n_missing.to_string(),
                opt(r.mean),
                opt(r.sd),
                opt(r.zero_proportion),
                if r.sd_undefined() { "undefined".into() } else { String::new() },
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn summarize_values(values: &[f64]) -> (Option<f64>, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (None, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (Some(mean), None);
    }
    let ss: f64 = values.iter().map(|x| (x - mean).powi(2)).sum();
    (Some(mean), Some((ss / (n - 1) as f64).sqrt()))
}

pub fn zero_proportion(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    Some(values.iter().filter(|&&x| is_structural_zero(x)).count() as f64 / values.len() as f64)
}

pub fn summarize(d: &TrialDataset) -> DescriptiveSummary {
    let mut rows = Vec::new();
    for arm in [1u8, 2] {
        let data = d.arm(arm);
        for v in Variable::ALL {
            let obs = data.observed(v);
            let (mean, sd) = summarize_values(&obs);
            rows.push(VariableSummary {
                arm,
                variable: v,
                n_observed: obs.len(),
                n_missing: data.len() - obs.len(),
                mean,
                sd,
                zero_proportion: if v.is_hurdle() { zero_proportion(&obs) } else { None },
            });
        }
    }
    DescriptiveSummary { rows }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<TrialDataset, DataError> {
        parse_trial_csv(s.as_bytes())
    }

    const HEADER: &str = "id,arm,e_pfs,e_pps,c_drug,c_hos,c_ae\n";

    #[test]
    fn parses_structural_zero_and_na() {
        let d = parse(&format!("{HEADER}p1,1,0.21,0.00,0,150,80\np2,2,NA,NA,NA,1200,0\n")).unwrap();
        let p1 = &d.records()[0];
        assert_eq!(p1.outcomes, [Some(0.21), Some(0.0), Some(0.0), Some(150.0), Some(80.0)]);
        assert!(is_structural_zero(p1.get(Variable::EPps).unwrap()));
        let p2 = &d.records()[1];
        assert_eq!(p2.outcomes, [None, None, None, Some(1200.0), Some(0.0)]);
    }

    #[test]
    fn rejects_arm_three() {
        let err = parse(&format!("{HEADER}p1,1,0.2,0,0,1,1\np2,3,0.2,0,0,1,1\n")).unwrap_err();
        assert_eq!(err, DataError::ArmOutOfRange { row: 2, value: "3".into() });
        assert!(err.to_string().contains("arm out of range at row 2"));
    }

    #[test]
    fn distinct_validation_errors() {
        let bad_header = parse("id,arm,e_pfs\np1,1,0\n").unwrap_err();
        assert_eq!(bad_header.code(), "header");
        let nonnum = parse(&format!("{HEADER}p1,1,abc,0,0,1,1\np2,2,0,0,0,1,1\n")).unwrap_err();
        assert!(matches!(nonnum, DataError::NonNumeric { row: 1, ref column, .. } if column == "e_pfs"));
        let neg = parse(&format!("{HEADER}p1,1,0.1,0,-5,1,1\np2,2,0,0,0,1,1\n")).unwrap_err();
        assert!(matches!(neg, DataError::Negative { row: 1, ref column, .. } if column == "c_drug"));
        let dup = parse(&format!("{HEADER}p1,1,0.1,0,5,1,1\np1,2,0,0,0,1,1\n")).unwrap_err();
        assert_eq!(dup, DataError::DuplicateId { row: 2, id: "p1".into() });
        let empty = parse(&format!("{HEADER}p1,1,0.1,0,5,1,1\n")).unwrap_err();
        assert_eq!(empty, DataError::EmptyArm(2));
    }

    #[test]
    fn negative_e_pfs_is_allowed() {
        let d = parse(&format!("{HEADER}p1,1,-0.3,0,5,1,1\np2,2,0,0,0,1,1\n")).unwrap();
        assert_eq!(d.records()[0].get(Variable::EPfs), Some(-0.3));
    }

    #[test]
    fn covariates_must_be_named_and_observed() {
        let ok = parse("id,arm,e_pfs,e_pps,c_drug,c_hos,c_ae,x1,x2\np1,1,0,0,0,0,0,1.5,2\np2,2,0,0,0,0,0,3,4\n").unwrap();
        assert_eq!(ok.records()[1].covariates, vec![3.0, 4.0]);
        assert_eq!(parse("id,arm,e_pfs,e_pps,c_drug,c_hos,c_ae,age\n").unwrap_err().code(), "header");
        let na = parse("id,arm,e_pfs,e_pps,c_drug,c_hos,c_ae,x1\np1,1,0,0,0,0,0,NA\n").unwrap_err();
        assert_eq!(na.code(), "missing_covariate");
    }

    #[test]
    fn round_trip_is_lossless() {
        let src = format!("{HEADER}a,1,0.1234567890123456789,0.3,1e-300,1500.25,NA\nb,2,-0.7,0,0,NA,33.3333333333333\n");
        let d = parse(&src).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = parse_trial_csv(buf.as_slice()).unwrap();
        assert_eq!(d, back);
    }

    fn rec(id: &str, arm: u8, outcomes: [Option<f64>; 5]) -> PatientRecord {
        PatientRecord { id: id.into(), arm, outcomes, covariates: vec![] }
    }

    #[test]
    fn patterns_hand_enumerated() {
        let full = [Some(0.1), Some(0.0), Some(1.0), Some(2.0), Some(3.0)];
        let mut miss = full;
        miss[0] = None;
        let d = TrialDataset::new(
            vec![rec("a", 1, full), rec("b", 1, miss), rec("c", 2, miss)],
            vec![],
        )
        .unwrap();
        let t = missingness_patterns(&d);
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[0].observed, [true; 5]);
        assert_eq!(t.rows[0].counts, [1, 0]);
        assert_eq!(t.rows[1].observed, [false, true, true, true, true]);
        assert_eq!(t.rows[1].counts, [1, 1]);
        assert_eq!(t.total(0) + t.total(1), 3);
        assert!((t.percent(1, 1) - 50.0).abs() < 1e-12);
    }

    #[test]
    fn no_missing_gives_single_row() {
        let full = [Some(0.1), Some(0.0), Some(1.0), Some(2.0), Some(3.0)];
        let d = TrialDataset::new(vec![rec("a", 1, full), rec("b", 2, full)], vec![]).unwrap();
        let t = missingness_patterns(&d);
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.total(0), 2);
    }

    #[test]
    fn completers_249_of_300() {
        let full = [Some(0.1), Some(0.0), Some(1.0), Some(2.0), Some(3.0)];
        let mut partial = full;
        partial[2] = None;
        let recs = (0..300)
            .map(|i| rec(&format!("p{i}"), if i < 150 { 1 } else { 2 }, if i % 300 < 249 { full } else { partial }))
            .collect();
        let d = TrialDataset::new(recs, vec![]).unwrap();
        let t = missingness_patterns(&d);
        assert_eq!(t.total(0), 249);
        let pct = 100.0 * t.total(0) as f64 / 300.0;
        assert_eq!(pct.round(), 83.0);
        assert_eq!(t.total(1), 51);
        assert_eq!((100.0 * 51.0 / 300.0f64).round(), 17.0);
    }

    #[test]
    fn summary_zero_proportion_and_sd() {
        let d = TrialDataset::new(
            vec![
                rec("a", 1, [Some(1.0), Some(0.0), Some(0.0), Some(5.0), None]),
                rec("b", 1, [Some(1.0), Some(0.0), Some(0.0), Some(5.0), None]),
                rec("c", 1, [Some(1.0), Some(2.0), None, Some(5.0), Some(4.0)]),
                rec("d", 2, [None, Some(1.0), Some(1.0), Some(1.0), Some(1.0)]),
            ],
            vec![],
        )
        .unwrap();
        let s = summarize(&d);
        let pps = s.get(1, Variable::EPps);
        assert!((pps.zero_proportion.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((pps.mean.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.get(1, Variable::EPfs).sd, Some(0.0));
        assert_eq!(s.get(1, Variable::EPfs).zero_proportion, None);
        // missing cells never count as zeros
        assert_eq!(s.get(1, Variable::CDrug).zero_proportion, Some(1.0));
        assert_eq!(s.get(1, Variable::CDrug).n_missing, 1);
        let ae = s.get(1, Variable::CAe);
        assert!(ae.sd_undefined());
        assert_eq!(ae.mean, Some(4.0));
        assert!(s.get(2, Variable::EPfs).mean.is_none());
    }

    #[test]
    fn control_arm_drug_zero_share() {
        // 60% of control-arm drug costs are exact zeros
        let recs = (0..10)
            .map(|i| rec(&format!("c{i}"), 1, [Some(0.2), Some(0.1), Some(if i < 6 { 0.0 } else { 900.0 }), Some(1.0), Some(1.0)]))
            .chain(std::iter::once(rec("t", 2, [Some(0.2), Some(0.1), Some(10.0), Some(1.0), Some(1.0)])))
            .collect();
        let d = TrialDataset::new(recs, vec![]).unwrap();
        assert_eq!(summarize(&d).get(1, Variable::CDrug).zero_proportion, Some(0.6));
    }
}
