use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{Condition, MrmcError, Result, Tier};
use crate::pipeline::{map_birads_to_label, Birads, TriageLabel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinaryCall {
    NonSuspicious,
    Suspicious,
}

impl BinaryCall {
    pub fn is_suspicious(self) -> bool {
        self == BinaryCall::Suspicious
    }

    /// BI-RADS 1-3 non-suspicious, 4-6 suspicious, 0 no call.
    pub fn from_birads(b: Birads) -> Option<Self> {
        match map_birads_to_label(b) {
            TriageLabel::Negative => Some(BinaryCall::NonSuspicious),
            TriageLabel::Positive => Some(BinaryCall::Suspicious),
            TriageLabel::Excluded => None,
        }
    }
}

/// Active reading interval in seconds since an arbitrary origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub stop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderRating {
    pub reader_id: String,
    pub case_id: String,
    pub condition: Condition,
    pub binary_call: Option<BinaryCall>,
    pub birads: Option<Birads>,
    pub intervals: Vec<Interval>,
}

impl ReaderRating {
    /// The explicit binary call, else the one implied by the BI-RADS entry.
    pub fn call(&self) -> Option<BinaryCall> {
        self.binary_call.or_else(|| self.birads.and_then(BinaryCall::from_birads))
    }

    /// Total active seconds. Intervals must have `stop > start` and must not
    /// overlap.
    pub fn active_seconds(&self) -> Result<f64> {
        let mut iv = self.intervals.clone();
        iv.sort_by(|a, b| a.start.total_cmp(&b.start));
        let mut total = 0.0;
        for (i, x) in iv.iter().enumerate() {
            if !(x.stop > x.start) || !x.start.is_finite() || !x.stop.is_finite() {
                return Err(MrmcError::Interval(format!("{}/{}: interval ({}, {})", self.reader_id, self.case_id, x.start, x.stop)));
            }
            if i > 0 && x.start < iv[i - 1].stop {
                return Err(MrmcError::Interval(format!(
                    "{}/{}: ({}, {}) overlaps ({}, {})",
                    self.reader_id, self.case_id, iv[i - 1].start, iv[i - 1].stop, x.start, x.stop
                )));
            }
            total += x.stop - x.start;
        }
        Ok(total)
    }
}

/// Total active seconds per (reader, condition).
pub fn reading_time(ratings: &[ReaderRating]) -> Result<BTreeMap<(String, Condition), f64>> {
    let mut out = BTreeMap::new();
    for r in ratings {
        *out.entry((r.reader_id.clone(), r.condition)).or_insert(0.0) += r.active_seconds()?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    fn add(&mut self, call: bool, truth: bool) {
        match (call, truth) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn accuracy(&self) -> Option<f64> {
        let n = self.tp + self.fp + self.tn + self.fn_;
        (n > 0).then(|| (self.tp + self.tn) as f64 / n as f64)
    }

    pub fn sensitivity(&self) -> Option<f64> {
        let n = self.tp + self.fn_;
        (n > 0).then(|| self.tp as f64 / n as f64)
    }

    pub fn specificity(&self) -> Option<f64> {
        let n = self.tn + self.fp;
        (n > 0).then(|| self.tn as f64 / n as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderRow {
    pub reader_id: String,
    pub tier: Option<Tier>,
    pub condition: Condition,
    pub counts: Confusion,
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

/// Mean of per-reader values; `tier = None` pools all readers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub condition: Condition,
    pub tier: Option<Tier>,
    pub n_readers: usize,
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderTable {
    pub readers: Vec<ReaderRow>,
    pub aggregates: Vec<AggregateRow>,
}

fn mean(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let xs: Vec<f64> = v.flatten().collect();
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Per-reader, per-condition accuracy, sensitivity and specificity against the
/// reference labels, plus condition means overall and by tier. Cases with an
/// excluded reference and ratings without a call are skipped.
pub fn reader_table(
    ratings: &[ReaderRating],
    reference: &BTreeMap<String, TriageLabel>,
    tiers: &BTreeMap<String, Tier>,
) -> Result<ReaderTable> {
    let mut cells: BTreeMap<(String, Condition), Confusion> = BTreeMap::new();
    for r in ratings {
        let label = reference.get(&r.case_id).ok_or_else(|| MrmcError::UnknownCase(r.case_id.clone()))?;
        let (Some(truth), Some(call)) = (label.as_bool(), r.call()) else {
            continue;
        };
        cells.entry((r.reader_id.clone(), r.condition)).or_default().add(call.is_suspicious(), truth);
    }
    let readers: Vec<ReaderRow> = cells
        .into_iter()
        .map(|((reader_id, condition), counts)| ReaderRow {
            tier: tiers.get(&reader_id).copied(),
            reader_id,
            condition,
            accuracy: counts.accuracy(),
            sensitivity: counts.sensitivity(),
            specificity: counts.specificity(),
            counts,
        })
        .collect();
    let mut aggregates = Vec::new();
    for condition in Condition::ALL {
        for tier in [None, Some(Tier::Junior), Some(Tier::Intermediate), Some(Tier::Senior)] {
            let rows: Vec<&ReaderRow> =
                readers.iter().filter(|r| r.condition == condition && (tier.is_none() || r.tier == tier)).collect();
            if rows.is_empty() {
                continue;
            }
            aggregates.push(AggregateRow {
                condition,
                tier,
                n_readers: rows.len(),
                accuracy: mean(rows.iter().map(|r| r.accuracy)),
                sensitivity: mean(rows.iter().map(|r| r.sensitivity)),
                specificity: mean(rows.iter().map(|r| r.specificity)),
            });
        }
    }
    Ok(ReaderTable { readers, aggregates })
}

pub const RATINGS_HEADER: [&str; 6] = ["reader_id", "case_id", "condition", "binary_call", "birads", "total_seconds"];

#[derive(Serialize, Deserialize)]
struct Row {
    reader_id: String,
    case_id: String,
    condition: Condition,
    binary_call: Option<BinaryCall>,
    birads: Option<String>,
    total_seconds: f64,
}

/// One row per rating. Times are written with millisecond precision.
pub fn write_ratings_csv(ratings: &[ReaderRating], w: impl Write) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    let err = |e: csv::Error| MrmcError::Parse(e.to_string());
    csv.write_record(RATINGS_HEADER).map_err(err)?;
    for r in ratings {
        let secs = (r.active_seconds()? * 1000.0).round() / 1000.0;
        csv.write_record([
            r.reader_id.clone(),
            r.case_id.clone(),
            r.condition.to_string(),
            r.binary_call.map(|c| if c.is_suspicious() { "suspicious" } else { "non-suspicious" }).unwrap_or("").to_string(),
            r.birads.map(|b| b.to_string()).unwrap_or_default(),
            format!("{secs:.3}"),
        ])
        .map_err(err)?;
    }
    csv.flush().map_err(|e| MrmcError::Parse(e.to_string()))?;
    Ok(())
}

/// Reads an exported ratings CSV. Each rating gets a single interval
/// `[0, total_seconds]`.
pub fn read_ratings_csv(r: impl Read) -> Result<Vec<ReaderRating>> {
    let mut csv = csv::Reader::from_reader(r);
    let header: Vec<String> = csv.headers().map_err(|e| MrmcError::Parse(e.to_string()))?.iter().map(String::from).collect();
    if header != RATINGS_HEADER {
        return Err(MrmcError::Parse(format!("unexpected ratings header {header:?}")));
    }
    let mut out = Vec::new();
    for (i, row) in csv.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| MrmcError::Parse(format!("row {}: {e}", i + 2)))?;
        let birads = match row.birads.as_deref() {
            None | Some("") => None,
            Some(s) => Some(s.parse::<Birads>().map_err(|e| MrmcError::Parse(format!("row {}: {e}", i + 2)))?),
        };
        let intervals = if row.total_seconds > 0.0 { vec![Interval { start: 0.0, stop: row.total_seconds }] } else { vec![] };
        out.push(ReaderRating {
            reader_id: row.reader_id,
            case_id: row.case_id,
            condition: row.condition,
            binary_call: row.binary_call,
            birads,
            intervals,
        });
    }
    Ok(out)
}
