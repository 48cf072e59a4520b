//! Fixed-length segmentation and environmental bin labels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{DatasetError, SampleRecord};
use crate::capture::{AudioClip, SAMPLE_RATE_HZ};
use crate::trigger::SampleClass;

pub const SEGMENT_SECONDS: f64 = 5.0;
pub const SEGMENT_SAMPLES: usize = 5 * SAMPLE_RATE_HZ as usize;
pub const HOUR_SECONDS: f64 = 3600.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Label {
    Negative,
    Positive,
    Ignore,
}

impl Label {
    pub fn from_class(c: SampleClass) -> Self {
        match c {
            SampleClass::Silence => Label::Negative,
            SampleClass::Aircraft => Label::Positive,
        }
    }

    /// `Some(true)` for positives, `None` for ignored bins.
    pub fn as_bool(self) -> Option<bool> {
        match self {
            Label::Negative => Some(false),
            Label::Positive => Some(true),
            Label::Ignore => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Negative => "0",
            Label::Positive => "1",
            Label::Ignore => "ignore",
        })
    }
}

impl FromStr for Label {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "0" => Ok(Label::Negative),
            "1" => Ok(Label::Positive),
            "ignore" => Ok(Label::Ignore),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

impl From<Label> for String {
    fn from(l: Label) -> String {
        l.to_string()
    }
}

impl TryFrom<String> for Label {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentLabel {
    pub source: String,
    pub index: usize,
    pub label: Label,
    pub t_start_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    /// Exactly [`SEGMENT_SAMPLES`] values in [-1, 1).
    pub samples: Vec<f64>,
    /// Unpadded length.
    pub valid_samples: usize,
    pub label: SegmentLabel,
}

/// Cuts a clip into consecutive 5 s windows. The last window is zero-padded.
pub fn segment(record: &SampleRecord, clip: &AudioClip) -> Vec<Segment> {
    clip.samples
        .chunks(SEGMENT_SAMPLES)
        .enumerate()
        .map(|(index, chunk)| {
            let mut samples: Vec<f64> = chunk.iter().map(|&s| s as f64 / 32768.0).collect();
            samples.resize(SEGMENT_SAMPLES, 0.0);
            Segment {
                samples,
                valid_samples: chunk.len(),
                label: SegmentLabel {
                    source: record.filename.clone(),
                    index,
                    label: Label::from_class(record.class),
                    t_start_s: index as f64 * SEGMENT_SECONDS,
                },
            }
        })
        .collect()
}

/// One label per 5 s bin of an hour: bins wholly inside an event are
/// positive, bins touching no event negative, and partly covered bins
/// ignored.
pub fn quantize_env_annotations(events: &[(f64, f64)], hour_len_s: f64) -> Result<Vec<Label>, DatasetError> {
    let mut sorted = events.to_vec();
    for &(on, off) in &sorted {
        if !(on >= 0.0 && on < off && off <= hour_len_s) {
            return Err(DatasetError::EventOutOfRange(on, off));
        }
    }
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    for w in sorted.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(DatasetError::OverlappingEvents(w[0].0, w[0].1, w[1].0, w[1].1));
        }
    }

    let n_bins = (hour_len_s / SEGMENT_SECONDS).round() as usize;
    const EPS: f64 = 1e-9;
    Ok((0..n_bins)
        .map(|b| {
            let (lo, hi) = (b as f64 * SEGMENT_SECONDS, (b + 1) as f64 * SEGMENT_SECONDS);
            let covered: f64 = sorted
                .iter()
                .map(|&(on, off)| (off.min(hi) - on.max(lo)).max(0.0))
                .sum();
            if covered <= EPS {
                Label::Negative
            } else if covered >= SEGMENT_SECONDS - EPS {
                Label::Positive
            } else {
                Label::Ignore
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvAnnotationRow {
    pub hour_id: String,
    pub segment_index: usize,
    pub t_start_s: f64,
    pub label: Label,
}

/// Annotation CSV for one or more hours: `hour_id,segment_index,t_start_s,label`.
pub fn write_env_annotations<'a>(hours: impl IntoIterator<Item = (&'a str, &'a [Label])>) -> Result<String, DatasetError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (hour_id, labels) in hours {
        for (i, &label) in labels.iter().enumerate() {
            w.serialize(EnvAnnotationRow {
                hour_id: hour_id.to_string(),
                segment_index: i,
                t_start_s: i as f64 * SEGMENT_SECONDS,
                label,
            })?;
        }
    }
    let bytes = w.into_inner().map_err(|e| DatasetError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Parses annotation CSV into per-hour label lists, in order of first
/// appearance. Segment indices must run 0, 1, 2, ... within each hour.
pub fn read_env_annotations(text: &str) -> Result<Vec<(String, Vec<Label>)>, DatasetError> {
    let mut out: Vec<(String, Vec<Label>)> = Vec::new();
    for row in csv::Reader::from_reader(text.as_bytes()).deserialize::<EnvAnnotationRow>() {
        let row = row?;
        let pos = match out.iter().position(|(h, _)| *h == row.hour_id) {
            Some(p) => p,
            None => {
                out.push((row.hour_id.clone(), Vec::new()));
                out.len() - 1
            }
        };
        let labels = &mut out[pos].1;
        if row.segment_index != labels.len() {
            return Err(DatasetError::BadRecord(
                row.hour_id,
                format!("segment index {} out of sequence", row.segment_index),
            ));
        }
        labels.push(row.label);
    }
    Ok(out)
}
