//! Replay loop: message stream → tracker → trigger → recordings.

use std::path::Path;

use chrono::{Duration, NaiveDateTime};

use crate::adsb::{parse_frame, parse_sbs_line, parse_stream_line};
use crate::capture::{record, AudioSource, CaptureError, CaptureRecord, SyntheticSource};
use crate::simulate::StreamEvent;
use crate::track::{Tracker, DEFAULT_STALE_TIMEOUT_S};
use crate::trigger::{make_filename, step, Action, RecordingEvent, SampleClass, TriggerConfig, TriggerError, TriggerState};

#[derive(Debug, thiserror::Error)]
pub enum MonitorError {
    #[error(transparent)]
    Trigger(#[from] TriggerError),
    #[error(transparent)]
    Capture(#[from] CaptureError),
    #[error("stream timestamps go backwards at {0} s")]
    UnorderedStream(f64),
}

/// Supplies the audio for a recording.
pub trait SourceFactory {
    fn source_for(&mut self, event: &RecordingEvent) -> Box<dyn AudioSource>;
}

/// Harmonic tones for aircraft events and plain noise for silence, seeded
/// from the output filename so replays produce identical audio.
#[derive(Debug, Default, Clone, Copy)]
pub struct SyntheticFactory;

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf29ce484222325, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

impl SourceFactory for SyntheticFactory {
    fn source_for(&mut self, event: &RecordingEvent) -> Box<dyn AudioSource> {
        let seed = fnv1a(&make_filename(event));
        match event.class {
            SampleClass::Aircraft => Box::new(SyntheticSource::aircraft_like(seed)),
            SampleClass::Silence => Box::new(SyntheticSource::background(seed)),
        }
    }
}

#[derive(Debug, Default)]
pub struct MonitorReport {
    pub lines: usize,
    pub malformed_lines: usize,
    pub bad_crc: usize,
    pub snapshots: usize,
    pub actions: Vec<(f64, Action)>,
    pub recordings: Vec<CaptureRecord>,
    pub aborted: usize,
    /// Recordings still running when the stream ended; nothing is written.
    pub unfinished: usize,
}

/// Replays `events` in stream time. Snapshots are taken every
/// `cfg.snapshot_period_s` from t = 0 up to `until_s` (default: the last
/// message), each seeing every message stamped at or before it. Stream time
/// `t` maps to wall-clock `start_time + t`.
pub fn run_monitor(
    events: &[StreamEvent],
    cfg: &TriggerConfig,
    start_time: NaiveDateTime,
    until_s: Option<f64>,
    out_dir: &Path,
    factory: &mut dyn SourceFactory,
) -> Result<MonitorReport, MonitorError> {
    let mut tracker = Tracker::new(DEFAULT_STALE_TIMEOUT_S);
    let mut state = TriggerState::default();
    let mut report = MonitorReport::default();
    let mut tick = 0u64;
    let tick_time = |k: u64| k as f64 * cfg.snapshot_period_s;
    let end = until_s.unwrap_or_else(|| events.last().map_or(0.0, |e| e.t_s));

    let mut run_tick = |k: u64, tracker: &mut Tracker, state: &mut TriggerState, report: &mut MonitorReport| -> Result<(), MonitorError> {
        let now = tick_time(k);
        let snapshot = tracker.snapshot(now);
        let wall = start_time + Duration::milliseconds((now * 1000.0).round() as i64);
        let (next, actions) = step(state, &snapshot, cfg, now, wall)?;
        let active = state.active_event.clone();
        *state = next;
        report.snapshots += 1;
        for action in actions {
            match &action {
                Action::StopRecording => {
                    let event = active.clone().expect("stop implies an active recording");
                    let duration = match event.class {
                        SampleClass::Aircraft => cfg.aircraft_duration_s,
                        SampleClass::Silence => cfg.silence_duration_s,
                    };
                    let mut source = factory.source_for(&event);
                    match record(source.as_mut(), duration, &event, out_dir) {
                        Ok(rec) => report.recordings.push(rec),
                        Err(CaptureError::SourceUnderrun { .. }) => {}
                        Err(e) => return Err(e.into()),
                    }
                }
                Action::AbortSilenceRecording => report.aborted += 1,
                _ => {}
            }
            report.actions.push((now, action));
        }
        Ok(())
    };

    let mut last_t = f64::NEG_INFINITY;
    for ev in events {
        if ev.t_s < last_t {
            return Err(MonitorError::UnorderedStream(ev.t_s));
        }
        last_t = ev.t_s;
        while tick_time(tick) < ev.t_s && tick_time(tick) <= end {
            run_tick(tick, &mut tracker, &mut state, &mut report)?;
            tick += 1;
        }
        report.lines += 1;
        let line = ev.line.trim();
        if line.starts_with('*') {
            match parse_stream_line(line, ev.t_s) {
                Ok(raw) => {
                    let frame = parse_frame(&raw);
                    if !frame.crc_ok {
                        report.bad_crc += 1;
                    }
                    tracker.ingest(&frame, ev.t_s);
                }
                Err(_) => report.malformed_lines += 1,
            }
        } else {
            match parse_sbs_line(line) {
                Ok(rec) => {
                    tracker.ingest_sbs(&rec, ev.t_s);
                }
                Err(_) => report.malformed_lines += 1,
            }
        }
    }
    while tick_time(tick) <= end {
        run_tick(tick, &mut tracker, &mut state, &mut report)?;
        tick += 1;
    }
    if state.active_event.is_some() {
        report.unfinished += 1;
    }
    Ok(report)
}
