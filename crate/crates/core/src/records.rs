//! Evaluation records: ingestion, validation, chronological partitioning and
//! the log-compute coordinate `z = log10(FLOPs)`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed leading CSV columns; every other column is a task score.
pub const FIXED_COLUMNS: [&str; 7] = [
    "model_id",
    "base_model_id",
    "pretraining_flops",
    "param_count",
    "release_date",
    "flag_official",
    "flag_pretrained",
];

const DATE_FMT: &str = "%Y-%m-%d";

/// Fraction-correct benchmark score in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Score(f64);

impl Score {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && (0.0..=1.0).contains(&value) {
            Ok(Score(value))
        } else {
            Err(Error::Records(format!("score {value} outside [0, 1]")))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Score {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Score::new(v)
    }
}

impl From<Score> for f64 {
    fn from(s: Score) -> f64 {
        s.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flags {
    pub official: bool,
    pub pretrained: bool,
}

impl Flags {
    /// Anything that is not a raw pretrained checkpoint counts as post-trained.
    pub fn post_trained(&self) -> bool {
        !self.pretrained
    }
}

/// One evaluated checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub model_id: String,
    pub base_model_id: String,
    /// Base-model pre-training compute; `None` when unknown (record is kept but
    /// cannot enter compute-conditioned fits).
    pub pretraining_flops: Option<f64>,
    pub param_count: Option<f64>,
    pub release_date: NaiveDate,
    pub scores: BTreeMap<String, Score>,
    pub flags: Flags,
}

impl ModelRecord {
    /// `log10(pretraining_flops)` when compute is known.
    pub fn log_compute(&self) -> Option<f64> {
        self.pretraining_flops.map(f64::log10)
    }

    pub fn score(&self, task: &str) -> Option<f64> {
        self.scores.get(task).map(|s| s.value())
    }

    /// A record is incomplete for a task when it lacks compute or that task's score.
    pub fn is_complete_for(&self, task: &str) -> bool {
        self.pretraining_flops.is_some() && self.scores.contains_key(task)
    }

    /// Days since 1970-01-01.
    pub fn release_day(&self) -> i64 {
        days_since_epoch(self.release_date)
    }
}

pub fn days_since_epoch(d: NaiveDate) -> i64 {
    let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid epoch");
    (d - epoch).num_days()
}

pub fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), DATE_FMT).ok()
}

/// `log10` of a record's pre-training compute.
pub fn derive_log_compute(r: &ModelRecord) -> Result<f64> {
    match r.pretraining_flops {
        Some(f) if f > 0.0 && f.is_finite() => Ok(f.log10()),
        Some(f) => Err(Error::Records(format!(
            "model `{}` has non-positive pre-training FLOPs {f}",
            r.model_id
        ))),
        None => Err(Error::Records(format!(
            "model `{}` has no pre-training FLOPs",
            r.model_id
        ))),
    }
}

/// An immutable collection of records with unique model ids.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Dataset {
    records: Vec<ModelRecord>,
    task_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset, checking id uniqueness. Task names are collected in
    /// order of first appearance.
    pub fn new(records: Vec<ModelRecord>) -> Result<Self> {
        let tasks = collect_tasks(&records, &[]);
        Self::with_tasks(records, tasks)
    }

    /// Like [`Dataset::new`] but keeps a caller-supplied task order (e.g. the CSV
    /// header order); tasks missing from the list are appended.
    pub fn with_tasks(records: Vec<ModelRecord>, task_order: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, r) in records.iter().enumerate() {
            if !seen.insert(r.model_id.as_str()) {
                return Err(Error::InvalidRow {
                    row: i + 1,
                    field: "model_id".into(),
                    message: format!("duplicate model id `{}`", r.model_id),
                });
            }
        }
        let task_names = collect_tasks(&records, &task_order);
        Ok(Dataset {
            records,
            task_names,
        })
    }

    pub fn records(&self) -> &[ModelRecord] {
        &self.records
    }

    pub fn task_names(&self) -> &[String] {
        &self.task_names
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, model_id: &str) -> Option<&ModelRecord> {
        self.records.iter().find(|r| r.model_id == model_id)
    }

    /// Error listing the available tasks when `task` is unknown.
    pub fn require_task(&self, task: &str) -> Result<()> {
        if self.task_names.iter().any(|t| t == task) {
            Ok(())
        } else {
            Err(Error::UnknownTask {
                task: task.to_string(),
                available: self.task_names.join(", "),
            })
        }
    }

    /// Sub-dataset keeping records for which `keep` holds; task list is preserved.
    pub fn filter(&self, mut keep: impl FnMut(&ModelRecord) -> bool) -> Dataset {
        Dataset {
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
            task_names: self.task_names.clone(),
        }
    }

    /// `(z, y)` pairs for one task, skipping records incomplete for it.
    pub fn task_points(&self, task: &str) -> Vec<(f64, f64)> {
        self.records
            .iter()
            .filter_map(|r| Some((r.log_compute()?, r.score(task)?)))
            .collect()
    }

    /// Records incomplete for `task` (missing compute or score).
    pub fn incomplete_for<'a>(&'a self, task: &'a str) -> impl Iterator<Item = &'a ModelRecord> + 'a {
        self.records.iter().filter(move |r| !r.is_complete_for(task))
    }

    /// Number of records carrying a score, per task.
    pub fn task_counts(&self) -> BTreeMap<String, usize> {
        let mut counts: BTreeMap<String, usize> =
            self.task_names.iter().map(|t| (t.clone(), 0)).collect();
        for r in &self.records {
            for t in r.scores.keys() {
                *counts.entry(t.clone()).or_default() += 1;
            }
        }
        counts
    }

    pub fn log_computes(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.log_compute()).collect()
    }
}

fn collect_tasks(records: &[ModelRecord], order: &[String]) -> Vec<String> {
    let mut tasks: Vec<String> = order.to_vec();
    let mut seen: HashSet<String> = tasks.iter().cloned().collect();
    for r in records {
        for t in r.scores.keys() {
            if seen.insert(t.clone()) {
                tasks.push(t.clone());
            }
        }
    }
    tasks
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    /// Infers the format from a file extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or_default();
        ext.parse()
    }
}

impl FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Json => "json",
        })
    }
}

pub fn load_records(path: impl AsRef<Path>, format: Format) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    match format {
        Format::Csv => read_csv(file),
        Format::Json => read_json(file),
    }
}

fn row_err(row: usize, field: &str, message: impl Into<String>) -> Error {
    Error::InvalidRow {
        row,
        field: field.to_string(),
        message: message.into(),
    }
}

fn parse_positive(row: usize, field: &str, raw: &str) -> Result<Option<f64>> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    let v: f64 = raw
        .parse()
        .map_err(|_| row_err(row, field, format!("`{raw}` is not a number")))?;
    if !(v.is_finite() && v > 0.0) {
        return Err(row_err(row, field, format!("must be positive, got {v}")));
    }
    Ok(Some(v))
}

fn parse_flag(row: usize, field: &str, raw: &str) -> Result<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "" | "0" | "false" | "no" => Ok(false),
        "1" | "true" | "yes" => Ok(true),
        other => Err(row_err(row, field, format!("`{other}` is not a boolean"))),
    }
}

fn parse_score(row: usize, field: &str, v: f64) -> Result<Score> {
    Score::new(v).map_err(|_| row_err(row, field, format!("score {v} outside [0, 1]")))
}

/// Reads the CSV schema: the fixed columns followed by one column per task.
/// Data rows are numbered from 1.
pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut idx = [0usize; FIXED_COLUMNS.len()];
    for (slot, col) in idx.iter_mut().zip(FIXED_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == col)
            .ok_or_else(|| Error::Records(format!("missing required column `{col}`")))?;
    }
    let task_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| !FIXED_COLUMNS.contains(&h.as_str()))
        .map(|(i, h)| (i, h.clone()))
        .collect();

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let rowno = i + 1;
        let row = row?;
        let field = |k: usize| row.get(idx[k]).unwrap_or("");
        let model_id = field(0).trim().to_string();
        if model_id.is_empty() {
            return Err(row_err(rowno, "model_id", "empty model id"));
        }
        let release_date = parse_date(field(4))
            .ok_or_else(|| row_err(rowno, "release_date", format!("`{}` is not YYYY-MM-DD", field(4))))?;
        let mut scores = BTreeMap::new();
        for (col, task) in &task_cols {
            let raw = row.get(*col).unwrap_or("").trim();
            if raw.is_empty() {
                continue;
            }
            let v: f64 = raw
                .parse()
                .map_err(|_| row_err(rowno, task, format!("`{raw}` is not a number")))?;
            scores.insert(task.clone(), parse_score(rowno, task, v)?);
        }
        records.push(ModelRecord {
            model_id,
            base_model_id: field(1).trim().to_string(),
            pretraining_flops: parse_positive(rowno, "pretraining_flops", field(2))?,
            param_count: parse_positive(rowno, "param_count", field(3))?,
            release_date,
            scores,
            flags: Flags {
                official: parse_flag(rowno, "flag_official", field(5))?,
                pretrained: parse_flag(rowno, "flag_pretrained", field(6))?,
            },
        });
    }
    Dataset::with_tasks(records, task_cols.into_iter().map(|(_, t)| t).collect())
}

#[derive(Deserialize)]
struct JsonRow {
    model_id: String,
    #[serde(default)]
    base_model_id: String,
    pretraining_flops: Option<f64>,
    param_count: Option<f64>,
    release_date: String,
    #[serde(default)]
    flag_official: bool,
    #[serde(default)]
    flag_pretrained: bool,
    #[serde(default)]
    scores: BTreeMap<String, Option<f64>>,
}

/// Reads a JSON array of objects with the CSV keys; scores nest under `"scores"`.
pub fn read_json<R: Read>(reader: R) -> Result<Dataset> {
    let rows: Vec<serde_json::Value> = serde_json::from_reader(reader)?;
    let mut records = Vec::with_capacity(rows.len());
    for (i, value) in rows.into_iter().enumerate() {
        let rowno = i + 1;
        let raw: JsonRow = serde_json::from_value(value)
            .map_err(|e| row_err(rowno, "<object>", e.to_string()))?;
        let check = |field: &str, v: Option<f64>| -> Result<Option<f64>> {
            match v {
                Some(x) if !(x.is_finite() && x > 0.0) => {
                    Err(row_err(rowno, field, format!("must be positive, got {x}")))
                }
                other => Ok(other),
            }
        };
        let release_date = parse_date(&raw.release_date).ok_or_else(|| {
            row_err(rowno, "release_date", format!("`{}` is not YYYY-MM-DD", raw.release_date))
        })?;
        let mut scores = BTreeMap::new();
        for (task, v) in raw.scores {
            if let Some(v) = v {
                let s = parse_score(rowno, &task, v)?;
                scores.insert(task, s);
            }
        }
        records.push(ModelRecord {
            model_id: raw.model_id,
            base_model_id: raw.base_model_id,
            pretraining_flops: check("pretraining_flops", raw.pretraining_flops)?,
            param_count: check("param_count", raw.param_count)?,
            release_date,
            scores,
            flags: Flags {
                official: raw.flag_official,
                pretrained: raw.flag_pretrained,
            },
        });
    }
    Dataset::new(records)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the dataset in the CSV schema. Floats use the shortest round-trip
/// representation, so `read_csv(write_csv(d)) == d`.
pub fn write_csv<W: Write>(d: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = FIXED_COLUMNS.to_vec();
    header.extend(d.task_names.iter().map(String::as_str));
    w.write_record(&header)?;
    for r in &d.records {
        let mut row = vec![
            r.model_id.clone(),
            r.base_model_id.clone(),
            fmt_opt(r.pretraining_flops),
            fmt_opt(r.param_count),
            r.release_date.format(DATE_FMT).to_string(),
            r.flags.official.to_string(),
            r.flags.pretrained.to_string(),
        ];
        row.extend(d.task_names.iter().map(|t| fmt_opt(r.score(t))));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<W: Write>(d: &Dataset, writer: W) -> Result<()> {
    let rows: Vec<serde_json::Value> = d
        .records
        .iter()
        .map(|r| {
            serde_json::json!({
                "model_id": r.model_id,
                "base_model_id": r.base_model_id,
                "pretraining_flops": r.pretraining_flops,
                "param_count": r.param_count,
                "release_date": r.release_date.format(DATE_FMT).to_string(),
                "flag_official": r.flags.official,
                "flag_pretrained": r.flags.pretrained,
                "scores": r.scores,
            })
        })
        .collect();
    serde_json::to_writer_pretty(writer, &rows)?;
    Ok(())
}

/// Chronological periods delimited by cutoff dates. `k` cutoffs give `k + 1`
/// periods; period `t` is `[cutoff_{t-1}, cutoff_t)` with open outer ends, so a
/// record dated exactly on a cutoff belongs to the later period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodPartition {
    boundaries: Vec<NaiveDate>,
    labels: Vec<String>,
}

impl PeriodPartition {
    pub fn new(boundaries: Vec<NaiveDate>) -> Result<Self> {
        let labels = (1..=boundaries.len() + 1).map(|t| format!("P{t}")).collect();
        Self::with_labels(boundaries, labels)
    }

    pub fn with_labels(boundaries: Vec<NaiveDate>, labels: Vec<String>) -> Result<Self> {
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("period cutoffs must be strictly increasing".into()));
        }
        if labels.len() != boundaries.len() + 1 {
            return Err(Error::Config(format!(
                "{} cutoffs need {} labels, got {}",
                boundaries.len(),
                boundaries.len() + 1,
                labels.len()
            )));
        }
        Ok(PeriodPartition { boundaries, labels })
    }

    pub fn boundaries(&self) -> &[NaiveDate] {
        &self.boundaries
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn num_periods(&self) -> usize {
        self.labels.len()
    }

    /// Index of the period containing `date`.
    pub fn period_of(&self, date: NaiveDate) -> usize {
        self.boundaries.partition_point(|c| *c <= date)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Period {
    pub label: String,
    pub data: Dataset,
}

/// Splits a dataset by release date. Empty periods are kept.
pub fn partition_periods(d: &Dataset, p: &PeriodPartition) -> Vec<Period> {
    let mut buckets: Vec<Vec<ModelRecord>> = vec![Vec::new(); p.num_periods()];
    for r in &d.records {
        buckets[p.period_of(r.release_date)].push(r.clone());
    }
    buckets
        .into_iter()
        .zip(&p.labels)
        .map(|(records, label)| Period {
            label: label.clone(),
            data: Dataset {
                records,
                task_names: d.task_names.clone(),
            },
        })
        .collect()
}

/// Closed interval of log-compute values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZInterval {
    pub lo: f64,
    pub hi: f64,
}

impl ZInterval {
    pub fn contains(&self, z: f64) -> bool {
        z >= self.lo && z <= self.hi
    }

    pub fn of(values: &[f64]) -> Option<ZInterval> {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo <= hi).then_some(ZInterval { lo, hi })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Overlap {
    Interval(ZInterval),
    /// The ranges are disjoint; both ranges are kept for reporting.
    Empty { train: ZInterval, valid: ZInterval },
}

impl Overlap {
    pub fn interval(&self) -> Option<ZInterval> {
        match self {
            Overlap::Interval(iv) => Some(*iv),
            Overlap::Empty { .. } => None,
        }
    }
}

/// Intersection `[max(min_z), min(max_z)]` of two sets of z-values.
pub fn overlap_of(train: &[f64], valid: &[f64]) -> Result<Overlap> {
    let t = ZInterval::of(train)
        .ok_or_else(|| Error::Records("training set has no compute values".into()))?;
    let v = ZInterval::of(valid)
        .ok_or_else(|| Error::Records("validation set has no compute values".into()))?;
    let lo = t.lo.max(v.lo);
    let hi = t.hi.min(v.hi);
    Ok(if lo <= hi {
        Overlap::Interval(ZInterval { lo, hi })
    } else {
        Overlap::Empty { train: t, valid: v }
    })
}

/// Overlap of the log-compute ranges of two datasets.
pub fn overlap_range(train: &Dataset, valid: &Dataset) -> Result<Overlap> {
    overlap_of(&train.log_computes(), &valid.log_computes())
}
