//! Human verification of captured clips: a verdict journal, validation, and
//! the commit step that trims audio and writes the dataset index.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::Duration;
use serde::{Deserialize, Serialize};

use crate::adsb::Icao;
use crate::capture::{self, read_sidecar, read_wav, seconds_to_samples, write_wav, CaptureError, SidecarRow, SAMPLE_RATE_HZ};
use crate::dataset::{
    build_index, build_summary, consensus_lookup, prepare_records, DatasetError, Registry, RegistrationSource, SampleRecord,
    MAX_ALTITUDE_FT,
};
use crate::trigger::SampleClass;

pub const VERDICTS_FILE: &str = "verdicts.jsonl";
pub const INDEX_FILE: &str = "index.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
/// Shortest aircraft event kept after trimming.
pub const MIN_AIRCRAFT_EVENT_S: f64 = 18.0;
pub const ENVELOPE_BINS_PER_S: f64 = 100.0;

#[derive(Debug, thiserror::Error)]
pub enum ReviewError {
    #[error("unknown file {0}")]
    UnknownFile(String),
    #[error("invalid verdict: {0}")]
    Invalid(String),
    #[error("{file} has {found} samples, expected {original} or {trimmed}")]
    UnexpectedLength {
        file: String,
        found: usize,
        original: usize,
        trimmed: usize,
    },
    #[error("verdict journal line {line}: {source}")]
    Journal { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Capture(#[from] CaptureError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewStatus {
    Pending,
    Accepted,
    Trimmed,
    Discarded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiscardReason {
    #[serde(rename = "bad_quality")]
    BadQuality,
    #[serde(rename = "over_10000ft")]
    Over10000ft,
    #[serde(rename = "speech_privacy")]
    SpeechPrivacy,
    #[serde(rename = "mislabeled")]
    Mislabeled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Verdict {
    pub filename: String,
    pub status: ReviewStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trim_start_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trim_end_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<DiscardReason>,
}

impl Verdict {
    pub fn accept(filename: &str) -> Self {
        Verdict {
            filename: filename.to_string(),
            status: ReviewStatus::Accepted,
            trim_start_s: None,
            trim_end_s: None,
            reason: None,
        }
    }

    pub fn trim(filename: &str, start_s: f64, end_s: f64) -> Self {
        Verdict {
            status: ReviewStatus::Trimmed,
            trim_start_s: Some(start_s),
            trim_end_s: Some(end_s),
            ..Verdict::accept(filename)
        }
    }

    pub fn discard(filename: &str, reason: DiscardReason) -> Self {
        Verdict {
            status: ReviewStatus::Discarded,
            reason: Some(reason),
            ..Verdict::accept(filename)
        }
    }
}

/// Checks a verdict against the clip it targets.
pub fn validate_verdict(v: &Verdict, row: &SidecarRow) -> Result<(), ReviewError> {
    let invalid = |m: String| Err(ReviewError::Invalid(m));
    let duration = row.n_samples as f64 / SAMPLE_RATE_HZ as f64;
    match v.status {
        ReviewStatus::Pending => invalid("a verdict cannot set status pending".into()),
        ReviewStatus::Accepted => {
            if v.trim_start_s.is_some() || v.trim_end_s.is_some() || v.reason.is_some() {
                return invalid("accept takes no trim range or reason".into());
            }
            Ok(())
        }
        ReviewStatus::Discarded => {
            if v.reason.is_none() {
                return invalid("discard needs a reason".into());
            }
            if v.trim_start_s.is_some() || v.trim_end_s.is_some() {
                return invalid("discard takes no trim range".into());
            }
            Ok(())
        }
        ReviewStatus::Trimmed => {
            let (Some(a), Some(b)) = (v.trim_start_s, v.trim_end_s) else {
                return invalid("trim needs trim_start_s and trim_end_s".into());
            };
            if v.reason.is_some() {
                return invalid("trim takes no reason".into());
            }
            if !(a.is_finite() && b.is_finite() && a >= 0.0 && a < b && seconds_to_samples(b) <= row.n_samples) {
                return invalid(format!("trim range [{a}, {b}) outside the {duration} s clip"));
            }
            if row.class == SampleClass::Aircraft && b - a < MIN_AIRCRAFT_EVENT_S {
                return invalid(format!("aircraft event of {} s is shorter than {MIN_AIRCRAFT_EVENT_S} s", b - a));
            }
            Ok(())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReviewTask {
    pub filename: String,
    pub class: SampleClass,
    pub hex_id: Icao,
    pub altitude_ft: Option<i32>,
    pub date: String,
    pub time: String,
    pub location_id: u32,
    pub mic_id: u32,
    pub duration_s: f64,
    pub audio_url: String,
    pub status: ReviewStatus,
    pub trim_start_s: Option<f64>,
    pub trim_end_s: Option<f64>,
    pub reason: Option<DiscardReason>,
    /// Pre-filled discard reason for captures above the altitude limit.
    pub suggested_reason: Option<DiscardReason>,
}

/// Options for turning verdicts into the dataset index.
pub struct CommitOptions<'a> {
    /// Treat clips without a verdict as accepted.
    pub accept_all: bool,
    pub session_gap: Duration,
    pub n_folds: u8,
    /// Primary registry; airframe features are attached when the
    /// registration has a strict majority across it and `sources`.
    pub registry: Option<&'a Registry>,
    pub sources: Vec<&'a dyn RegistrationSource>,
}

impl Default for CommitOptions<'_> {
    fn default() -> Self {
        CommitOptions {
            accept_all: false,
            session_gap: Duration::hours(crate::dataset::DEFAULT_SESSION_GAP_HOURS),
            n_folds: crate::dataset::DEFAULT_FOLDS,
            registry: None,
            sources: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CommitReport {
    pub records: usize,
    pub trimmed_now: usize,
    pub discarded: usize,
    pub pending: usize,
    pub over_altitude: usize,
    pub military: usize,
    pub without_airframe: usize,
    pub index_written: bool,
    pub summary_written: bool,
}

/// Captures in one directory plus their verdict journal.
#[derive(Debug)]
pub struct ReviewStore {
    dir: PathBuf,
    rows: Vec<SidecarRow>,
    verdicts: BTreeMap<String, Verdict>,
}

impl ReviewStore {
    pub fn open(dir: &Path) -> Result<Self, ReviewError> {
        let rows = read_sidecar(dir)?;
        let mut verdicts = BTreeMap::new();
        let path = dir.join(VERDICTS_FILE);
        if path.exists() {
            for (i, line) in fs::read_to_string(&path)?.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let v: Verdict = serde_json::from_str(line).map_err(|source| ReviewError::Journal { line: i + 1, source })?;
                verdicts.insert(v.filename.clone(), v);
            }
        }
        Ok(ReviewStore {
            dir: dir.to_path_buf(),
            rows,
            verdicts,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn row(&self, filename: &str) -> Result<&SidecarRow, ReviewError> {
        self.rows
            .iter()
            .find(|r| r.filename == filename)
            .ok_or_else(|| ReviewError::UnknownFile(filename.to_string()))
    }

    /// Path of a known capture. Names not in the sidecar are rejected, so
    /// no caller-supplied path reaches the filesystem.
    pub fn audio_path(&self, filename: &str) -> Result<PathBuf, ReviewError> {
        self.row(filename)?;
        Ok(self.dir.join(filename))
    }

    pub fn verdict(&self, filename: &str) -> Option<&Verdict> {
        self.verdicts.get(filename)
    }

    pub fn tasks(&self) -> Vec<ReviewTask> {
        self.rows
            .iter()
            .map(|r| {
                let v = self.verdicts.get(&r.filename);
                ReviewTask {
                    filename: r.filename.clone(),
                    class: r.class,
                    hex_id: r.hex_id,
                    altitude_ft: r.altitude_ft,
                    date: r.date.clone(),
                    time: r.time.clone(),
                    location_id: r.location_id,
                    mic_id: r.mic_id,
                    duration_s: r.n_samples as f64 / SAMPLE_RATE_HZ as f64,
                    audio_url: format!("/audio/{}", r.filename),
                    status: v.map_or(ReviewStatus::Pending, |v| v.status),
                    trim_start_s: v.and_then(|v| v.trim_start_s),
                    trim_end_s: v.and_then(|v| v.trim_end_s),
                    reason: v.and_then(|v| v.reason),
                    suggested_reason: r
                        .altitude_ft
                        .filter(|&a| a > MAX_ALTITUDE_FT)
                        .map(|_| DiscardReason::Over10000ft),
                }
            })
            .collect()
    }

    pub fn pending(&self) -> Vec<ReviewTask> {
        self.tasks().into_iter().filter(|t| t.status == ReviewStatus::Pending).collect()
    }

    /// Validates and appends a verdict; it is on disk before this returns.
    pub fn submit(&mut self, v: Verdict) -> Result<(), ReviewError> {
        validate_verdict(&v, self.row(&v.filename)?)?;
        let mut f = OpenOptions::new().create(true).append(true).open(self.dir.join(VERDICTS_FILE))?;
        let mut line = serde_json::to_string(&v).expect("verdicts serialize");
        line.push('\n');
        f.write_all(line.as_bytes())?;
        f.sync_data()?;
        self.verdicts.insert(v.filename.clone(), v);
        Ok(())
    }

    /// Applies verdicts: trims audio in place, leaves out discarded and
    /// unreviewed clips, assigns sessions and folds, and writes the index
    /// and summary when their content changes. Running it twice changes
    /// nothing the second time. Discarded audio is left on disk.
    pub fn commit(&self, opts: &CommitOptions<'_>) -> Result<CommitReport, ReviewError> {
        let mut report = CommitReport::default();
        let mut records = Vec::new();
        for row in &self.rows {
            let v = self.verdicts.get(&row.filename);
            let status = v.map_or(ReviewStatus::Pending, |v| v.status);
            match status {
                ReviewStatus::Discarded => {
                    report.discarded += 1;
                    continue;
                }
                ReviewStatus::Pending if !opts.accept_all => {
                    report.pending += 1;
                    continue;
                }
                _ => {}
            }
            let mut rec = SampleRecord::from_sidecar(row)?;
            if status == ReviewStatus::Trimmed {
                let v = v.expect("trimmed status comes from a verdict");
                let (a, b) = (v.trim_start_s.unwrap(), v.trim_end_s.unwrap());
                if self.apply_trim(row, a, b)? {
                    report.trimmed_now += 1;
                }
                if row.class == SampleClass::Aircraft {
                    rec.event_start_s = Some(a);
                    rec.event_end_s = Some(b);
                }
            }
            if rec.altitude_ft.is_some_and(|a| a > MAX_ALTITUDE_FT) {
                report.over_altitude += 1;
                continue;
            }
            if rec.class == SampleClass::Aircraft {
                if let Some(registry) = opts.registry {
                    let mut sources: Vec<&dyn RegistrationSource> = vec![registry];
                    sources.extend(opts.sources.iter().copied());
                    match consensus_lookup(rec.hex_id, &sources, registry) {
                        Ok(r) => rec.airframe = Some(r.meta),
                        Err(DatasetError::MilitaryExcluded(_)) => {
                            report.military += 1;
                            continue;
                        }
                        Err(DatasetError::UnknownHex(_) | DatasetError::NoConsensus(_)) => report.without_airframe += 1,
                        Err(e) => return Err(e.into()),
                    }
                }
            }
            records.push(rec);
        }
        let records = prepare_records(records, opts.session_gap, opts.n_folds)?;
        report.records = records.len();
        report.index_written = write_if_changed(&self.dir.join(INDEX_FILE), &build_index(&records))?;
        report.summary_written = write_if_changed(&self.dir.join(SUMMARY_FILE), &build_summary(&records, opts.n_folds))?;
        Ok(report)
    }

    /// Trims a capture in place unless it already has the trimmed length.
    fn apply_trim(&self, row: &SidecarRow, start_s: f64, end_s: f64) -> Result<bool, ReviewError> {
        let path = self.dir.join(&row.filename);
        let clip = read_wav(&path)?;
        let trimmed_len = seconds_to_samples(end_s) - seconds_to_samples(start_s);
        if clip.len() == row.n_samples && trimmed_len != row.n_samples {
            write_wav(&path, &capture::trim(&clip, start_s, end_s)?)?;
            Ok(true)
        } else if clip.len() == trimmed_len {
            Ok(false)
        } else {
            Err(ReviewError::UnexpectedLength {
                file: row.filename.clone(),
                found: clip.len(),
                original: row.n_samples,
                trimmed: trimmed_len,
            })
        }
    }
}

fn write_if_changed(path: &Path, content: &str) -> Result<bool, ReviewError> {
    if fs::read_to_string(path).is_ok_and(|old| old == content) {
        return Ok(false);
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, content)?;
    fs::rename(&tmp, path)?;
    Ok(true)
}

/// Peak absolute amplitude per bin, scaled to [0, 1], with
/// `ceil(duration · bins_per_s)` bins.
pub fn envelope(clip: &capture::AudioClip, bins_per_s: f64) -> Vec<f32> {
    let n_bins = (clip.duration_s() * bins_per_s).ceil() as usize;
    let per_bin = SAMPLE_RATE_HZ as f64 / bins_per_s;
    (0..n_bins)
        .map(|b| {
            let lo = (b as f64 * per_bin).round() as usize;
            let hi = (((b + 1) as f64 * per_bin).round() as usize).min(clip.len());
            let peak = clip.samples[lo.min(hi)..hi].iter().map(|s| s.unsigned_abs()).max().unwrap_or(0);
            peak as f32 / 32768.0
        })
        .collect()
}
