//! Turning score series into anomaly flags and checking them against
//! labelled stress events.
//!
//! An event is signalled when at least one flagged day falls in the
//! `lookback` trading days before it (the anchor day included). Recall
//! counts signalled events; precision counts flags that land in some
//! event's lookback window.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::detectors::AnomalySeries;
use crate::error::{Error, Result};

pub const DEFAULT_PERCENTILE: f64 = 97.5;
pub const DEFAULT_LOOKBACK: usize = 50;

pub const TSX60_EVENTS_CSV: &str = include_str!("../data/tsx60_events.csv");
pub const DJIA_EVENTS_CSV: &str = include_str!("../data/djia_events.csv");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub date: NaiveDate,
    pub label: String,
}

/// Events in strictly increasing date order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EventList {
    events: Vec<Event>,
}

impl EventList {
    pub fn new(events: Vec<Event>) -> Result<Self> {
        for w in events.windows(2) {
            if w[0].date >= w[1].date {
                return Err(Error::InvalidArgument(format!(
                    "event dates not strictly increasing: {} then {}",
                    w[0].date, w[1].date
                )));
            }
        }
        Ok(Self { events })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Parses `date,label` rows; a `YYYY-MM` date means the 15th of that month.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut events = Vec::new();
        for (idx, record) in reader.records().enumerate() {
            let line = idx + 2;
            let record = record.map_err(|e| Error::Parse {
                line,
                reason: e.to_string(),
            })?;
            let raw = record.get(0).unwrap_or("");
            let date = parse_event_date(raw).ok_or_else(|| Error::Parse {
                line,
                reason: format!("bad event date `{raw}`"),
            })?;
            events.push(Event {
                date,
                label: record.get(1).unwrap_or("").to_string(),
            });
        }
        Self::new(events)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("date,label\n");
        for e in &self.events {
            out.push_str(&format!("{},{}\n", e.date.format("%Y-%m-%d"), e.label));
        }
        out
    }

    pub fn tsx60() -> Self {
        Self::parse_csv(TSX60_EVENTS_CSV).expect("bundled event file is valid")
    }

    pub fn djia() -> Self {
        Self::parse_csv(DJIA_EVENTS_CSV).expect("bundled event file is valid")
    }
}

pub fn parse_event_date(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .or_else(|| NaiveDate::parse_from_str(&format!("{s}-15"), "%Y-%m-%d").ok())
}

/// Linear-interpolation percentile of `values` (`0 ≤ p ≤ 100`).
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Dates whose score strictly exceeds the `percentile`-th empirical
/// percentile of the series.
pub fn threshold_anomalies(s: &AnomalySeries, percentile_level: f64) -> Result<Vec<NaiveDate>> {
    if s.is_empty() {
        return Err(Error::InvalidArgument("empty score series".into()));
    }
    if !(percentile_level > 0.0 && percentile_level < 100.0) {
        return Err(Error::InvalidArgument(format!(
            "percentile {percentile_level} outside (0, 100)"
        )));
    }
    let cut = percentile(&s.scores, percentile_level);
    Ok(s.dates
        .iter()
        .zip(&s.scores)
        .filter(|(_, &v)| v > cut)
        .map(|(d, _)| *d)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSignal {
    pub label: String,
    pub date: NaiveDate,
    /// Last trading day on or before the event; absent when the event
    /// precedes the data.
    pub anchor: Option<NaiveDate>,
    pub signaled: bool,
}

impl EventSignal {
    pub fn signalable(&self) -> bool {
        self.anchor.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalOutcome {
    pub per_event: Vec<EventSignal>,
    /// Parallel to the input flags: whether each flag lies in some event's
    /// lookback window.
    pub attributed: Vec<bool>,
}

pub fn signal_events(
    flags: &[NaiveDate],
    trading_days: &[NaiveDate],
    events: &EventList,
    lookback: usize,
) -> Result<SignalOutcome> {
    let flag_idx = flags
        .iter()
        .map(|d| {
            trading_days.binary_search(d).map_err(|_| {
                Error::InvalidArgument(format!("flagged date {d} is not a trading day"))
            })
        })
        .collect::<Result<Vec<usize>>>()?;

    let mut attributed = vec![false; flags.len()];
    let per_event = events
        .events()
        .iter()
        .map(|e| {
            let upto = trading_days.partition_point(|d| *d <= e.date);
            if upto == 0 {
                return EventSignal {
                    label: e.label.clone(),
                    date: e.date,
                    anchor: None,
                    signaled: false,
                };
            }
            let anchor = upto - 1;
            let first = anchor.saturating_sub(lookback);
            let mut signaled = false;
            for (k, &i) in flag_idx.iter().enumerate() {
                if (first..=anchor).contains(&i) {
                    signaled = true;
                    attributed[k] = true;
                }
            }
            EventSignal {
                label: e.label.clone(),
                date: e.date,
                anchor: Some(trading_days[anchor]),
                signaled,
            }
        })
        .collect();
    Ok(SignalOutcome {
        per_event,
        attributed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub per_event: Vec<EventSignal>,
    pub anomalous_dates: Vec<NaiveDate>,
}

pub fn f_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

pub fn metrics(
    flags: &[NaiveDate],
    trading_days: &[NaiveDate],
    events: &EventList,
    lookback: usize,
) -> Result<DetectionReport> {
    if events.is_empty() {
        return Err(Error::InvalidArgument("event list is empty".into()));
    }
    let outcome = signal_events(flags, trading_days, events, lookback)?;
    let signaled = outcome.per_event.iter().filter(|e| e.signaled).count();
    let recall = signaled as f64 / events.len() as f64;
    let precision = if flags.is_empty() {
        0.0
    } else {
        outcome.attributed.iter().filter(|&&a| a).count() as f64 / flags.len() as f64
    };
    Ok(DetectionReport {
        precision,
        recall,
        f_score: f_score(precision, recall),
        per_event: outcome.per_event,
        anomalous_dates: flags.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl From<NaiveDate> for YearMonth {
    fn from(d: NaiveDate) -> Self {
        Self {
            year: d.year(),
            month: d.month(),
        }
    }
}

pub fn monthly_counts(flags: &[NaiveDate]) -> Vec<(YearMonth, usize)> {
    let mut counts = BTreeMap::new();
    for &d in flags {
        *counts.entry(YearMonth::from(d)).or_insert(0) += 1;
    }
    counts.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventJson {
    pub label: String,
    pub date: NaiveDate,
    pub signaled: bool,
    pub signalable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthCount {
    pub month: String,
    pub count: usize,
}

/// Serialised form of an evaluation (`report.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportJson {
    pub method: String,
    pub percentile: f64,
    pub lookback: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub per_event: Vec<EventJson>,
    pub monthly_counts: Vec<MonthCount>,
    pub anomalous_dates: Vec<NaiveDate>,
}

/// Thresholds `scores`, evaluates against `events` using the series' own
/// dates as the trading calendar, and packages the result.
pub fn evaluate_series(
    scores: &AnomalySeries,
    events: &EventList,
    percentile_level: f64,
    lookback: usize,
) -> Result<ReportJson> {
    let flags = threshold_anomalies(scores, percentile_level)?;
    let report = metrics(&flags, &scores.dates, events, lookback)?;
    Ok(ReportJson {
        method: scores.method.clone(),
        percentile: percentile_level,
        lookback,
        precision: report.precision,
        recall: report.recall,
        f_score: report.f_score,
        per_event: report
            .per_event
            .iter()
            .map(|e| EventJson {
                label: e.label.clone(),
                date: e.date,
                signaled: e.signaled,
                signalable: e.signalable(),
            })
            .collect(),
        monthly_counts: monthly_counts(&flags)
            .into_iter()
            .map(|(m, count)| MonthCount {
                month: m.to_string(),
                count,
            })
            .collect(),
        anomalous_dates: flags,
    })
}
