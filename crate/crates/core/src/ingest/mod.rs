//! CGM and tabular ingestion.
//!
//! Parsers normalise every source onto [`CgmSeries`]: records sorted by
//! timestamp, duplicate timestamps collapsed (last write wins) and readings
//! outside the plausibility band rejected and tallied. [`resample`] moves a
//! series onto a fixed grid anchored at its first record, and
//! [`impute_gaps`] fills or drops the slots the grid could not cover.

mod cgm_csv;
mod cgm_xml;
pub mod fixtures;
mod tabular;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cgm_csv::{export_cgm_csv, parse_cgm_csv, CSV_HEADER, CSV_TIMESTAMP_FORMAT};
pub use cgm_xml::{parse_cgm_xml, write_cgm_xml, XML_TIMESTAMP_FORMAT};
pub use tabular::{
    derive_risk_labels, export_tabular_csv, load_tabular, load_tabular_with, median,
    TabularDataset, BENCHMARK_FEATURES,
};

/// Lowest glucose reading (mg/dL) accepted from a sensor export.
pub const GLUCOSE_MIN: f64 = 10.0;
/// Highest glucose reading (mg/dL) accepted from a sensor export.
pub const GLUCOSE_MAX: f64 = 600.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("malformed XML at byte {offset}: {message}")]
    Xml { offset: u64, message: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("line {line}: {message}")]
    Record { line: u64, message: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("series is not on a resampled grid")]
    NotResampled,
    #[error("leading gap at slot 0 cannot be filled by hold-last")]
    LeadingGap,
    #[error("series has no observed values")]
    NoObservations,
    #[error("corpus is empty")]
    EmptyCorpus,
}

pub type Result<T> = std::result::Result<T, IngestError>;

/// One glucose reading. `glucose` is `None` for a grid slot that resampling
/// could not fill; `imputed` marks slots filled by [`impute_gaps`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CgmRecord {
    pub timestamp: NaiveDateTime,
    pub glucose: Option<f64>,
    #[serde(default)]
    pub imputed: bool,
}

impl CgmRecord {
    pub fn observed(timestamp: NaiveDateTime, glucose: f64) -> Self {
        Self {
            timestamp,
            glucose: Some(glucose),
            imputed: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CgmSeries {
    pub patient_id: String,
    pub records: Vec<CgmRecord>,
    /// Grid spacing in minutes once the series has been resampled.
    pub grid_interval_min: Option<u32>,
}

impl CgmSeries {
    pub fn new(patient_id: impl Into<String>, records: Vec<CgmRecord>) -> Self {
        Self {
            patient_id: patient_id.into(),
            records,
            grid_interval_min: None,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().filter_map(|r| r.glucose)
    }

    pub fn missing_count(&self) -> usize {
        self.records.iter().filter(|r| r.glucose.is_none()).count()
    }

    /// Most frequent spacing between consecutive observed records, in whole
    /// minutes. Ties resolve to the shorter interval.
    pub fn modal_interval_min(&self) -> Option<u32> {
        modal_interval(std::slice::from_ref(self))
    }
}

/// Output of the CGM parsers: canonicalised series plus the number of
/// readings rejected for falling outside `[GLUCOSE_MIN, GLUCOSE_MAX]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CgmParse {
    pub series: Vec<CgmSeries>,
    pub rejected: usize,
}

pub(crate) fn plausible(glucose: f64) -> bool {
    (GLUCOSE_MIN..=GLUCOSE_MAX).contains(&glucose)
}

/// Sorts ascending by timestamp and collapses duplicates, keeping the record
/// that appeared last in the input.
pub(crate) fn canonicalize(records: &mut Vec<CgmRecord>) {
    // stable sort keeps document order within equal timestamps
    records.sort_by_key(|r| r.timestamp);
    let mut out: Vec<CgmRecord> = Vec::with_capacity(records.len());
    for r in records.drain(..) {
        match out.last_mut() {
            Some(prev) if prev.timestamp == r.timestamp => *prev = r,
            _ => out.push(r),
        }
    }
    *records = out;
}

/// Places `series` on a grid of `interval_min` minutes anchored at its first
/// record and running through its last. Each slot takes the nearest observed
/// record within half an interval (earlier record on ties); uncovered slots
/// are left missing.
pub fn resample(series: &CgmSeries, interval_min: u32) -> Result<CgmSeries> {
    if interval_min == 0 {
        return Err(IngestError::InvalidArgument(
            "resample interval must be positive".into(),
        ));
    }
    let (first, last) = match (series.records.first(), series.records.last()) {
        (Some(f), Some(l)) => (f.timestamp, l.timestamp),
        _ => {
            return Err(IngestError::InvalidArgument(
                "cannot resample an empty series".into(),
            ))
        }
    };
    let step = i64::from(interval_min) * 60;
    let span = (last - first).num_seconds();
    let slots = span / step + 1;

    let observed: Vec<(i64, &CgmRecord)> = series
        .records
        .iter()
        .filter(|r| r.glucose.is_some())
        .map(|r| ((r.timestamp - first).num_seconds(), r))
        .collect();

    let mut records = Vec::with_capacity(slots as usize);
    let mut cursor = 0usize;
    for k in 0..slots {
        let target = k * step;
        while cursor + 1 < observed.len() && observed[cursor + 1].0 <= target {
            cursor += 1;
        }
        let mut best: Option<(i64, &CgmRecord)> = None;
        for &(t, r) in observed.iter().skip(cursor).take(2) {
            let d = (t - target).abs();
            // within half an interval, compared in doubled seconds
            if 2 * d <= step && best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, r));
            }
        }
        let timestamp = first + chrono::Duration::seconds(target);
        records.push(match best {
            Some((_, r)) => CgmRecord {
                timestamp,
                glucose: r.glucose,
                imputed: r.imputed,
            },
            None => CgmRecord {
                timestamp,
                glucose: None,
                imputed: false,
            },
        });
    }

    Ok(CgmSeries {
        patient_id: series.patient_id.clone(),
        records,
        grid_interval_min: Some(interval_min),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImputePolicy {
    Linear,
    HoldLast,
    Drop,
}

/// Fills or removes the missing slots of a resampled series.
///
/// `Linear` interpolates by slot index between the neighbouring observations
/// and extends the nearest observation flat over edge gaps. `HoldLast`
/// carries the previous value forward and fails on a leading gap. `Drop`
/// removes the slots, after which the series is no longer on a grid.
pub fn impute_gaps(series: &CgmSeries, policy: ImputePolicy) -> Result<CgmSeries> {
    if series.grid_interval_min.is_none() {
        return Err(IngestError::NotResampled);
    }
    let mut out = series.clone();
    match policy {
        ImputePolicy::Drop => {
            out.records.retain(|r| r.glucose.is_some());
            out.grid_interval_min = None;
        }
        ImputePolicy::HoldLast => {
            let mut last = None;
            for (i, r) in out.records.iter_mut().enumerate() {
                match r.glucose {
                    Some(v) => last = Some(v),
                    None => {
                        let v = last.ok_or(if i == 0 {
                            IngestError::LeadingGap
                        } else {
                            IngestError::NoObservations
                        })?;
                        r.glucose = Some(v);
                        r.imputed = true;
                    }
                }
            }
        }
        ImputePolicy::Linear => {
            let known: Vec<(usize, f64)> = out
                .records
                .iter()
                .enumerate()
                .filter_map(|(i, r)| r.glucose.map(|v| (i, v)))
                .collect();
            if known.is_empty() {
                if out.records.is_empty() {
                    return Ok(out);
                }
                return Err(IngestError::NoObservations);
            }
            let mut k = 0usize;
            for i in 0..out.records.len() {
                if out.records[i].glucose.is_some() {
                    continue;
                }
                while k + 1 < known.len() && known[k + 1].0 < i {
                    k += 1;
                }
                let (li, lv) = known[k];
                let v = if li > i {
                    lv
                } else if k + 1 < known.len() {
                    let (ri, rv) = known[k + 1];
                    lv + (rv - lv) * (i - li) as f64 / (ri - li) as f64
                } else {
                    lv
                };
                out.records[i].glucose = Some(v);
                out.records[i].imputed = true;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CgmSummary {
    pub record_count: usize,
    pub file_count: usize,
    pub mean_glucose: f64,
    /// Population standard deviation (divisor N).
    pub std_glucose: f64,
    pub min_glucose: f64,
    pub max_glucose: f64,
    pub modal_interval_min: Option<u32>,
}

/// Pooled statistics over every observed reading of the corpus. Each series
/// counts as one file.
pub fn summarize(corpus: &[CgmSeries]) -> Result<CgmSummary> {
    if corpus.is_empty() {
        return Err(IngestError::EmptyCorpus);
    }
    let mut n = 0usize;
    let mut mean = 0.0f64;
    let mut m2 = 0.0f64;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for v in corpus.iter().flat_map(|s| s.values()) {
        n += 1;
        let delta = v - mean;
        mean += delta / n as f64;
        m2 += delta * (v - mean);
        min = min.min(v);
        max = max.max(v);
    }
    if n == 0 {
        return Err(IngestError::NoObservations);
    }
    Ok(CgmSummary {
        record_count: n,
        file_count: corpus.len(),
        mean_glucose: mean,
        std_glucose: (m2.max(0.0) / n as f64).sqrt(),
        min_glucose: min,
        max_glucose: max,
        modal_interval_min: modal_interval(corpus),
    })
}

fn modal_interval(corpus: &[CgmSeries]) -> Option<u32> {
    let mut counts = std::collections::BTreeMap::<i64, usize>::new();
    for s in corpus {
        let times: Vec<NaiveDateTime> = s
            .records
            .iter()
            .filter(|r| r.glucose.is_some())
            .map(|r| r.timestamp)
            .collect();
        for w in times.windows(2) {
            let secs = (w[1] - w[0]).num_seconds();
            let minutes = (secs + 30).div_euclid(60);
            *counts.entry(minutes).or_default() += 1;
        }
    }
    // BTreeMap iterates ascending, so `max_by_key` over reversed keeps the
    // shortest interval among equally frequent ones.
    counts
        .into_iter()
        .rev()
        .max_by_key(|&(_, c)| c)
        .and_then(|(m, _)| u32::try_from(m).ok())
}
