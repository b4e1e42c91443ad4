//! CASAS-style event log ingestion.
//!
//! A log line is whitespace separated:
//!
//! ```text
//! 2010-11-04 05:40:51.303739 M004 ON Bed_to_Toilet begin
//! 2010-11-04 05:43:30.279021 M004 OFF
//! ```
//!
//! The pipeline is `parse_log` -> [`clean`] -> [`annotate`] -> [`segment`].
//! Timestamps are used for ordering and segmentation only; models never see them.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use chrono::{NaiveDate, NaiveDateTime, NaiveTime, Timelike};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{HarError, Result};

pub const OTHER_LABEL: &str = "Other";

const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M:%S%.f";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Marker {
    Begin,
    End,
}

impl Marker {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "begin" => Some(Marker::Begin),
            "end" => Some(Marker::End),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Marker::Begin => "begin",
            Marker::End => "end",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Annotation {
    pub activity: String,
    pub marker: Marker,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SensorEvent {
    pub timestamp: NaiveDateTime,
    pub sensor_id: String,
    pub value: String,
    pub annotation: Option<Annotation>,
}

impl SensorEvent {
    pub fn new(
        timestamp: NaiveDateTime,
        sensor_id: impl Into<String>,
        value: impl Into<String>,
        annotation: Option<Annotation>,
    ) -> Result<Self> {
        let sensor_id = sensor_id.into();
        let value = value.into();
        if sensor_id.is_empty() || value.is_empty() {
            return Err(HarError::invalid("sensor id and value must be non-empty"));
        }
        if let Some(a) = &annotation {
            if a.activity.is_empty() {
                return Err(HarError::invalid("annotation marker without activity name"));
            }
        }
        Ok(SensorEvent {
            timestamp: truncate_to_micros(timestamp),
            sensor_id,
            value,
            annotation,
        })
    }

    /// Renders the event back into the log line format accepted by [`parse_line`].
    pub fn render(&self) -> String {
        let mut line = format!(
            "{} {} {}",
            self.timestamp.format("%Y-%m-%d %H:%M:%S%.6f"),
            self.sensor_id,
            self.value
        );
        if let Some(a) = &self.annotation {
            line.push(' ');
            line.push_str(&a.activity);
            line.push(' ');
            line.push_str(a.marker.as_str());
        }
        line
    }
}

impl fmt::Display for SensorEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

fn truncate_to_micros(ts: NaiveDateTime) -> NaiveDateTime {
    let nanos = ts.nanosecond();
    ts.with_nanosecond(nanos - nanos % 1_000).unwrap_or(ts)
}

/// Parses one log line. `line_no` is 1-based and only used for error reporting.
pub fn parse_line(line: &str, line_no: usize) -> Result<SensorEvent> {
    let err = |message: String| HarError::Parse { line: line_no, message };
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() < 4 {
        return Err(err(format!(
            "expected at least 4 fields (date time sensor value), found {}",
            fields.len()
        )));
    }
    let stamp = format!("{} {}", fields[0], fields[1]);
    let timestamp = NaiveDateTime::parse_from_str(&stamp, TIMESTAMP_FORMAT)
        .map_err(|e| err(format!("bad timestamp {stamp:?}: {e}")))?;

    let annotation = match fields.len() {
        4 => None,
        5 => {
            return Err(err(format!(
                "activity {:?} has no begin/end marker",
                fields[4]
            )))
        }
        n => {
            let marker = Marker::parse(fields[n - 1])
                .ok_or_else(|| err(format!("unknown marker keyword {:?}", fields[n - 1])))?;
            Some(Annotation {
                activity: fields[4..n - 1].join(" "),
                marker,
            })
        }
    };
    SensorEvent::new(timestamp, fields[2], fields[3], annotation).map_err(|e| err(e.to_string()))
}

/// Parses a whole log, skipping blank lines.
pub fn parse_log(text: &str) -> Result<Vec<SensorEvent>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_line(l, i + 1))
        .collect()
}

pub fn render_log(events: &[SensorEvent]) -> String {
    let mut out = String::with_capacity(events.len() * 48);
    for e in events {
        out.push_str(&e.render());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub input_events: usize,
    pub output_events: usize,
    pub duplicate_events: usize,
    /// Events whose timestamp was earlier than the event preceding them.
    pub out_of_order_events: usize,
    pub duplicate_days: Vec<NaiveDate>,
    pub duplicate_day_events: usize,
    /// Days that largely repeat the previous day without being full copies. Kept, only reported.
    pub partial_duplicate_days: Vec<NaiveDate>,
}

const PARTIAL_DAY_OVERLAP: f64 = 0.5;

type DayTuple = (NaiveTime, String, String);

/// Removes exact duplicates, restores chronological order and drops calendar days
/// that replay an earlier day.
pub fn clean(events: &[SensorEvent]) -> (Vec<SensorEvent>, CleaningReport) {
    let mut report = CleaningReport {
        input_events: events.len(),
        ..Default::default()
    };

    let mut seen = HashSet::with_capacity(events.len());
    let mut kept: Vec<SensorEvent> = Vec::with_capacity(events.len());
    for e in events {
        if seen.insert(e) {
            kept.push(e.clone());
        } else {
            report.duplicate_events += 1;
        }
    }

    report.out_of_order_events = kept
        .windows(2)
        .filter(|w| w[1].timestamp < w[0].timestamp)
        .count();
    kept.sort_by_key(|e| e.timestamp);

    let mut days: BTreeMap<NaiveDate, Vec<usize>> = BTreeMap::new();
    for (i, e) in kept.iter().enumerate() {
        days.entry(e.timestamp.date()).or_default().push(i);
    }

    let mut fingerprints: HashSet<Vec<DayTuple>> = HashSet::new();
    let mut previous: Option<BTreeSet<DayTuple>> = None;
    let mut dropped = vec![false; kept.len()];
    for (date, idx) in &days {
        let mut tuples: Vec<DayTuple> = idx
            .iter()
            .map(|&i| {
                let e = &kept[i];
                (e.timestamp.time(), e.sensor_id.clone(), e.value.clone())
            })
            .collect();
        tuples.sort();
        if fingerprints.contains(&tuples) {
            report.duplicate_days.push(*date);
            report.duplicate_day_events += idx.len();
            for &i in idx {
                dropped[i] = true;
            }
            continue;
        }
        if let Some(prev) = &previous {
            let overlap = tuples.iter().filter(|t| prev.contains(*t)).count();
            if !tuples.is_empty() && overlap as f64 / tuples.len() as f64 >= PARTIAL_DAY_OVERLAP {
                warn!("{date}: {overlap} of {} events repeat the previous day", tuples.len());
                report.partial_duplicate_days.push(*date);
            }
        }
        previous = Some(tuples.iter().cloned().collect());
        fingerprints.insert(tuples);
    }

    let cleaned: Vec<SensorEvent> = kept
        .into_iter()
        .zip(dropped)
        .filter_map(|(e, d)| (!d).then_some(e))
        .collect();
    report.output_events = cleaned.len();
    (cleaned, report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledEvent {
    pub event: SensorEvent,
    pub activity_label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AnnotationWarning {
    UnmatchedEnd { index: usize, activity: String },
    UnclosedAtEnd { activity: String },
}

/// Labels every event with the innermost open activity, or [`OTHER_LABEL`].
pub fn annotate(events: &[SensorEvent]) -> (Vec<LabeledEvent>, Vec<AnnotationWarning>) {
    let mut open: Vec<&str> = Vec::new();
    let mut warnings = Vec::new();
    let mut labeled = Vec::with_capacity(events.len());

    for (index, event) in events.iter().enumerate() {
        let label = match &event.annotation {
            Some(Annotation { activity, marker: Marker::Begin }) => {
                open.push(activity);
                activity.clone()
            }
            Some(Annotation { activity, marker: Marker::End }) => {
                match open.iter().rposition(|a| a == activity) {
                    Some(pos) => {
                        open.remove(pos);
                        activity.clone()
                    }
                    None => {
                        warn!("event {index}: end of {activity:?} without matching begin");
                        warnings.push(AnnotationWarning::UnmatchedEnd {
                            index,
                            activity: activity.clone(),
                        });
                        OTHER_LABEL.to_string()
                    }
                }
            }
            None => open.last().map_or(OTHER_LABEL, |a| a).to_string(),
        };
        labeled.push(LabeledEvent { event: event.clone(), activity_label: label });
    }

    for activity in open {
        warn!("activity {activity:?} still open at end of log; closing at last event");
        warnings.push(AnnotationWarning::UnclosedAtEnd { activity: activity.to_string() });
    }
    (labeled, warnings)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivitySequence {
    pub label: String,
    pub events: Vec<LabeledEvent>,
    pub start: NaiveDateTime,
    pub end: NaiveDateTime,
}

impl ActivitySequence {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Explicit-window segmentation: each maximal run of equally labeled events is one sequence.
pub fn segment(labeled: &[LabeledEvent]) -> Vec<ActivitySequence> {
    let mut sequences: Vec<ActivitySequence> = Vec::new();
    for le in labeled {
        match sequences.last_mut() {
            Some(cur) if cur.label == le.activity_label => {
                cur.end = le.event.timestamp;
                cur.events.push(le.clone());
            }
            _ => sequences.push(ActivitySequence {
                label: le.activity_label.clone(),
                events: vec![le.clone()],
                start: le.event.timestamp,
                end: le.event.timestamp,
            }),
        }
    }
    sequences
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub resident_description: String,
    pub sensor_count: usize,
    pub activity_class_count: usize,
    pub day_count: usize,
    pub sequence_count: usize,
    pub per_class_sequences: BTreeMap<String, usize>,
}

pub fn stats(sequences: &[ActivitySequence], events: &[SensorEvent]) -> DatasetStats {
    let sensors: HashSet<&str> = events.iter().map(|e| e.sensor_id.as_str()).collect();
    let days: HashSet<NaiveDate> = events.iter().map(|e| e.timestamp.date()).collect();
    let mut per_class: BTreeMap<String, usize> = BTreeMap::new();
    for s in sequences {
        *per_class.entry(s.label.clone()).or_default() += 1;
    }
    DatasetStats {
        resident_description: String::new(),
        sensor_count: sensors.len(),
        activity_class_count: per_class.len(),
        day_count: days.len(),
        sequence_count: sequences.len(),
        per_class_sequences: per_class,
    }
}

/// Applies `relabel` to every event label, mapping raw activity names to groups.
pub fn relabel_events<F: Fn(&str) -> String>(labeled: &mut [LabeledEvent], relabel: F) {
    let mut cache: HashMap<String, String> = HashMap::new();
    for le in labeled.iter_mut() {
        let mapped = cache
            .entry(le.activity_label.clone())
            .or_insert_with(|| relabel(&le.activity_label))
            .clone();
        le.activity_label = mapped;
    }
}
