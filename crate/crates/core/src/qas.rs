//! Quality-adjusted survival from longitudinal utility data.
//!
//! Areas are trapezoidal sums over the observation grid. `qas` weights each
//! interval by the mean of the caller-supplied survival weights at its two
//! ends; `auc_qaly` is the unweighted special case.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use thiserror::Error;

use crate::data::{DataError, PatientRecord, TrialDataset};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QasError {
    #[error("series needs at least 2 time points, found {0}")]
    TooShort(usize),
    #[error("times must be strictly increasing (index {0})")]
    NonIncreasing(usize),
    #[error("array lengths differ: {times} times, {utilities} utilities, {survival} survival weights")]
    LengthMismatch { times: usize, utilities: usize, survival: usize },
    #[error("progression time {0} outside [0, {1}]")]
    ProgressionOutOfRange(f64, f64),
    #[error("no progression time set")]
    NoProgression,
    #[error("non-zero utility {utility} at time {time} after death at {death}")]
    UtilityAfterDeath { time: f64, utility: f64, death: f64 },
    #[error("time unit must be positive")]
    BadTimeUnit,
    #[error("series {id}: {source}")]
    Series { id: String, source: Box<QasError> },
    #[error("{0}")]
    Input(String),
}

/// Utility and survival-weight observations for one patient.
#[derive(Clone, Debug, PartialEq)]
pub struct UtilitySeries {
    times: Vec<f64>,
    utilities: Vec<f64>,
    survival: Vec<f64>,
    progression_time: Option<f64>,
    death_time: Option<f64>,
}

impl UtilitySeries {
    pub fn new(
        times: Vec<f64>,
        utilities: Vec<f64>,
        survival: Vec<f64>,
        progression_time: Option<f64>,
        death_time: Option<f64>,
    ) -> Result<Self, QasError> {
        if times.len() != utilities.len() || times.len() != survival.len() {
            return Err(QasError::LengthMismatch {
                times: times.len(),
                utilities: utilities.len(),
                survival: survival.len(),
            });
        }
        if times.len() < 2 {
            return Err(QasError::TooShort(times.len()));
        }
        if let Some(j) = (1..times.len()).find(|&j| times[j] <= times[j - 1]) {
            return Err(QasError::NonIncreasing(j));
        }
        if let Some(death) = death_time {
            for (&t, &u) in times.iter().zip(&utilities) {
                if t >= death && u != 0.0 {
                    return Err(QasError::UtilityAfterDeath { time: t, utility: u, death });
                }
            }
        }
        Ok(UtilitySeries { times, utilities, survival, progression_time, death_time })
    }

    /// Series with every survival weight equal to 1.
    pub fn unweighted(times: Vec<f64>, utilities: Vec<f64>) -> Result<Self, QasError> {
        let n = times.len();
        UtilitySeries::new(times, utilities, vec![1.0; n], None, None)
    }

    pub fn with_progression(mut self, t: Option<f64>) -> Self {
        self.progression_time = t;
        self
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn utilities(&self) -> &[f64] {
        &self.utilities
    }

    pub fn survival(&self) -> &[f64] {
        &self.survival
    }

    pub fn progression_time(&self) -> Option<f64> {
        self.progression_time
    }

    pub fn death_time(&self) -> Option<f64> {
        self.death_time
    }

    fn last_time(&self) -> f64 {
        *self.times.last().expect("at least two points")
    }

    fn term(&self, j: usize, time_unit: f64, weighted: bool) -> f64 {
        let u = 0.5 * (self.utilities[j] + self.utilities[j - 1]);
        let s = if weighted { 0.5 * (self.survival[j] + self.survival[j - 1]) } else { 1.0 };
        u * s * (self.times[j] - self.times[j - 1]) / time_unit
    }
}

fn check_unit(time_unit: f64) -> Result<(), QasError> {
    if time_unit > 0.0 && time_unit.is_finite() {
        Ok(())
    } else {
        Err(QasError::BadTimeUnit)
    }
}

/// Trapezoidal area under the utility curve, with interval lengths
/// expressed in `time_unit`s.
pub fn auc_qaly(s: &UtilitySeries, time_unit: f64) -> Result<f64, QasError> {
    check_unit(time_unit)?;
    Ok((1..s.times.len()).map(|j| s.term(j, time_unit, false)).sum())
}

/// Survival-weighted area: each interval's mean utility times its mean
/// survival weight times its length.
pub fn qas(s: &UtilitySeries, time_unit: f64) -> Result<f64, QasError> {
    check_unit(time_unit)?;
    Ok((1..s.times.len()).map(|j| s.term(j, time_unit, true)).sum())
}

/// Splits `qas(s)` at the progression time into pre- and post-progression
/// parts.
///
/// Intervals wholly before (after) the split go to the first (second) part.
/// An interval straddling the split is cut at a point whose utility and
/// weight are linearly interpolated; the two sub-areas set the shares of that
/// interval's own term, so the parts always add up to the total. When either
/// the utility or the weight is constant across the interval the shares are
/// exactly the sub-areas.
pub fn partition_qas(s: &UtilitySeries, time_unit: f64) -> Result<(f64, f64), QasError> {
    check_unit(time_unit)?;
    let p = s.progression_time.ok_or(QasError::NoProgression)?;
    let last = s.last_time();
    if !(p >= s.times[0] && p <= last) {
        return Err(QasError::ProgressionOutOfRange(p, last));
    }
    let mut pre = 0.0;
    let mut post = 0.0;
    for j in 1..s.times.len() {
        let (t0, t1) = (s.times[j - 1], s.times[j]);
        let term = s.term(j, time_unit, true);
        if t1 <= p {
            pre += term;
        } else if t0 >= p {
            post += term;
        } else {
            let share = straddle_share(s, j, p);
            let first = term * share;
            pre += first;
            post += term - first;
        }
    }
    Ok((pre, post))
}

fn straddle_share(s: &UtilitySeries, j: usize, p: f64) -> f64 {
    let (t0, t1) = (s.times[j - 1], s.times[j]);
    let lambda = (p - t0) / (t1 - t0);
    let (u0, u1) = (s.utilities[j - 1], s.utilities[j]);
    let (s0, s1) = (s.survival[j - 1], s.survival[j]);
    let up = u0 + lambda * (u1 - u0);
    let sp = s0 + lambda * (s1 - s0);
    let a1 = 0.25 * (u0 + up) * (s0 + sp) * (p - t0);
    let a2 = 0.25 * (up + u1) * (sp + s1) * (t1 - p);
    let total = a1 + a2;
    // sub-areas of opposite sign (utility crossing zero) give no usable
    // proportion; fall back to elapsed time
    if total != 0.0 && a1 * a2 >= 0.0 {
        a1 / total
    } else {
        lambda
    }
}

/// One row of the long-format series file.
#[derive(Clone, Debug, PartialEq)]
struct LongRow {
    arm: u8,
    time: f64,
    utility: Option<f64>,
    survival: f64,
    progressed: bool,
    dead: bool,
}

pub const SERIES_COLUMNS: [&str; 7] =
    ["id", "arm", "time_years", "utility", "survival_weight", "progressed", "dead"];

/// A parsed patient series plus its arm and whether any utility was missing
/// before or after progression.
#[derive(Clone, Debug)]
pub struct PatientSeries {
    pub id: String,
    pub arm: u8,
    pub series: UtilitySeries,
    pub missing_pre: bool,
    pub missing_post: bool,
}

/// Reads the long-format series CSV. Progression and death times are the
/// first times flagged `1`; rows of one id may appear in any order.
pub fn parse_series_csv<R: Read>(reader: R) -> Result<Vec<PatientSeries>, QasError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(|e| QasError::Input(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != SERIES_COLUMNS {
        return Err(QasError::Input(format!(
            "header must be {}, found {}",
            SERIES_COLUMNS.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut by_id: BTreeMap<String, (usize, Vec<LongRow>)> = BTreeMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| QasError::Input(e.to_string()))?;
        let row = k + 1;
        let num = |i: usize| -> Result<f64, QasError> {
            rec[i].parse::<f64>().map_err(|_| {
                QasError::Input(format!("non-numeric value {:?} at row {row}, column {}", &rec[i], SERIES_COLUMNS[i]))
            })
        };
        let flag = |i: usize| -> Result<bool, QasError> {
            match &rec[i] {
                "0" => Ok(false),
                "1" => Ok(true),
                v => Err(QasError::Input(format!("flag must be 0 or 1 at row {row}, column {}: {v:?}", SERIES_COLUMNS[i]))),
            }
        };
        let arm = match &rec[1] {
            "1" => 1,
            "2" => 2,
            v => return Err(QasError::Input(format!("arm out of range at row {row}: {v}"))),
        };
        let utility = if &rec[3] == "NA" { None } else { Some(num(3)?) };
        let r = LongRow { arm, time: num(2)?, utility, survival: num(4)?, progressed: flag(5)?, dead: flag(6)? };
        let n = by_id.len();
        by_id.entry(rec[0].to_string()).or_insert_with(|| (n, Vec::new())).1.push(r);
    }
    let mut out: Vec<(usize, PatientSeries)> = Vec::with_capacity(by_id.len());
    for (id, (order, mut rows)) in by_id {
        rows.sort_by(|a, b| a.time.total_cmp(&b.time));
        let wrap = |e: QasError| QasError::Series { id: id.clone(), source: Box::new(e) };
        let arm = rows[0].arm;
        if rows.iter().any(|r| r.arm != arm) {
            return Err(wrap(QasError::Input("arm changes within a series".into())));
        }
        let progression = rows.iter().find(|r| r.progressed).map(|r| r.time);
        let death = rows.iter().find(|r| r.dead).map(|r| r.time);
        let split = progression.unwrap_or(rows.last().map(|r| r.time).unwrap_or(0.0));
        let missing_pre = rows.iter().any(|r| r.utility.is_none() && r.time <= split);
        let missing_post = rows.iter().any(|r| r.utility.is_none() && r.time >= split);
        let series = UtilitySeries::new(
            rows.iter().map(|r| r.time).collect(),
            rows.iter().map(|r| r.utility.unwrap_or(0.0)).collect(),
            rows.iter().map(|r| r.survival).collect(),
            Some(split),
            death,
        )
        .map_err(wrap)?;
        out.push((order, PatientSeries { id, arm, series, missing_pre, missing_post }));
    }
    out.sort_by_key(|(o, _)| *o);
    Ok(out.into_iter().map(|(_, p)| p).collect())
}

/// Per-patient costs joined onto derived outcomes.
pub type CostTable = BTreeMap<String, [Option<f64>; 3]>;

/// Reads `id,c_drug,c_hos,c_ae` with `NA` for missing cells.
pub fn parse_cost_csv<R: Read>(reader: R) -> Result<CostTable, QasError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(|e| QasError::Input(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != ["id", "c_drug", "c_hos", "c_ae"] {
        return Err(QasError::Input("cost header must be id,c_drug,c_hos,c_ae".into()));
    }
    let mut out = CostTable::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| QasError::Input(e.to_string()))?;
        let mut c = [None; 3];
        for i in 0..3 {
            let cell = &rec[i + 1];
            c[i] = if cell == "NA" {
                None
            } else {
                Some(cell.parse::<f64>().map_err(|_| QasError::Input(format!("non-numeric cost {cell:?}")))?)
            };
        }
        out.insert(rec[0].to_string(), c);
    }
    Ok(out)
}

/// Derives the wide outcome dataset: `e_pfs`, `e_pps` from each series and
/// costs from `costs` (missing when absent).
pub fn derive_dataset(
    series: &[PatientSeries],
    costs: &CostTable,
    time_unit: f64,
) -> Result<TrialDataset, QasError> {
    let mut records = Vec::with_capacity(series.len());
    for p in series {
        let (pre, post) = partition_qas(&p.series, time_unit)
            .map_err(|e| QasError::Series { id: p.id.clone(), source: Box::new(e) })?;
        let c = costs.get(&p.id).copied().unwrap_or([None; 3]);
        records.push(PatientRecord {
            id: p.id.clone(),
            arm: p.arm,
            outcomes: [
                (!p.missing_pre).then_some(pre),
                (!p.missing_post).then_some(post.max(0.0)),
                c[0],
                c[1],
                c[2],
            ],
            covariates: vec![],
        });
    }
    TrialDataset::new(records, vec![]).map_err(|e: DataError| QasError::Input(e.to_string()))
}

pub fn write_derived<W: Write>(d: &TrialDataset, w: W) -> Result<(), DataError> {
    d.write_csv(w)
}
