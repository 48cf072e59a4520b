//! Recording decisions from periodic airspace snapshots.

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::adsb::Icao;
use crate::track::AirspaceSnapshot;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TriggerError {
    #[error("clock went backwards: {now} s after {last} s")]
    ClockRegression { last: f64, now: f64 },
    #[error("invalid trigger config: {0}")]
    InvalidConfig(String),
}

/// Recording class. Serialized as its integer label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum SampleClass {
    Silence = 0,
    Aircraft = 1,
}

impl From<SampleClass> for u8 {
    fn from(c: SampleClass) -> u8 {
        c as u8
    }
}

impl TryFrom<u8> for SampleClass {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            0 => Ok(SampleClass::Silence),
            1 => Ok(SampleClass::Aircraft),
            _ => Err(format!("class must be 0 or 1, got {v}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerConfig {
    pub location_id: u32,
    pub mic_id: u32,
    pub device_position: (f64, f64),
    pub trigger_distance_km: f64,
    pub silence_radius_km: f64,
    pub aircraft_duration_s: f64,
    pub silence_duration_s: f64,
    pub confirmations_required: u32,
    pub cooldown_s: f64,
    pub snapshot_period_s: f64,
}

pub const DEFAULT_SILENCE_RADIUS_KM: f64 = 10.0;
pub const AIRCRAFT_DURATION_S: f64 = 60.0;
pub const SILENCE_DURATION_S: f64 = 10.0;
pub const DEFAULT_CONFIRMATIONS: u32 = 3;
pub const DEFAULT_COOLDOWN_S: f64 = 5.0;
pub const DEFAULT_SNAPSHOT_PERIOD_S: f64 = 1.0;

/// Trigger distance used at each of the three deployment sites.
pub fn preset_trigger_distance_km(location_id: u32) -> Option<f64> {
    match location_id {
        0 => Some(3.0),
        1 => Some(1.0),
        2 => Some(1.5),
        _ => None,
    }
}

impl TriggerConfig {
    /// Defaults for a known location; unknown locations get the 3 km radius.
    pub fn location(location_id: u32, mic_id: u32, device_position: (f64, f64)) -> Self {
        TriggerConfig {
            location_id,
            mic_id,
            device_position,
            trigger_distance_km: preset_trigger_distance_km(location_id).unwrap_or(3.0),
            silence_radius_km: DEFAULT_SILENCE_RADIUS_KM,
            aircraft_duration_s: AIRCRAFT_DURATION_S,
            silence_duration_s: SILENCE_DURATION_S,
            confirmations_required: DEFAULT_CONFIRMATIONS,
            cooldown_s: DEFAULT_COOLDOWN_S,
            snapshot_period_s: DEFAULT_SNAPSHOT_PERIOD_S,
        }
    }

    pub fn validate(&self) -> Result<(), TriggerError> {
        let bad = |m: &str| Err(TriggerError::InvalidConfig(format!("location {}: {m}", self.location_id)));
        if !(self.trigger_distance_km > 0.0) {
            return bad("trigger_distance_km must be positive");
        }
        if !(self.silence_radius_km > self.trigger_distance_km) {
            return bad("silence_radius_km must exceed trigger_distance_km");
        }
        if !(self.aircraft_duration_s > 0.0 && self.silence_duration_s > 0.0) {
            return bad("durations must be positive");
        }
        if self.confirmations_required == 0 {
            return bad("confirmations_required must be at least 1");
        }
        if !(self.cooldown_s >= 0.0) {
            return bad("cooldown_s must be non-negative");
        }
        if !(self.snapshot_period_s > 0.0) {
            return bad("snapshot_period_s must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LocationBlock {
    id: u32,
    #[serde(default = "default_mic")]
    mic: u32,
    lat: f64,
    lon: f64,
    trigger_distance_km: Option<f64>,
    silence_radius_km: Option<f64>,
    confirmations_required: Option<u32>,
    snapshot_period_s: Option<f64>,
    cooldown_s: Option<f64>,
}

fn default_mic() -> u32 {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    location: Vec<LocationBlock>,
}

/// Parses a TOML file of `[[location]]` blocks. Omitted keys take the
/// location preset.
pub fn parse_config(text: &str) -> Result<Vec<TriggerConfig>, TriggerError> {
    let file: ConfigFile =
        toml::from_str(text).map_err(|e| TriggerError::InvalidConfig(e.to_string()))?;
    file.location
        .into_iter()
        .map(|b| {
            let mut cfg = TriggerConfig::location(b.id, b.mic, (b.lat, b.lon));
            if let Some(v) = b.trigger_distance_km {
                cfg.trigger_distance_km = v;
            }
            if let Some(v) = b.silence_radius_km {
                cfg.silence_radius_km = v;
            }
            if let Some(v) = b.confirmations_required {
                cfg.confirmations_required = v;
            }
            if let Some(v) = b.snapshot_period_s {
                cfg.snapshot_period_s = v;
            }
            if let Some(v) = b.cooldown_s {
                cfg.cooldown_s = v;
            }
            cfg.validate()?;
            Ok(cfg)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingEvent {
    pub class: SampleClass,
    pub hex_id: Icao,
    pub altitude_ft: Option<i32>,
    pub started_at: NaiveDateTime,
    pub location_id: u32,
    pub mic_id: u32,
}

/// `{hex}_{YYYY-MM-DD}_{HH-MM-SS}_{loc}_{mic}.wav`
pub fn make_filename(event: &RecordingEvent) -> String {
    format!(
        "{}_{}_{}_{}.wav",
        event.hex_id,
        event.started_at.format("%Y-%m-%d_%H-%M-%S"),
        event.location_id,
        event.mic_id
    )
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    StartAircraftRecording(RecordingEvent),
    StartSilenceRecording(RecordingEvent),
    StopRecording,
    AbortSilenceRecording,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Idle,
    RecordingAircraft,
    RecordingSilence,
    Cooldown,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriggerState {
    pub mode: Mode,
    pub recording_ends_at: Option<f64>,
    pub cooldown_until: Option<f64>,
    pub clear_streak: u32,
    pub active_event: Option<RecordingEvent>,
    pub last_now: Option<f64>,
}

/// Advances the state machine by one snapshot.
///
/// The clear streak counts consecutive snapshots with no positioned airborne
/// aircraft inside the silence radius; it is updated in every mode and
/// cleared whenever a recording starts. A silence recording is aborted as
/// soon as such an aircraft appears, and the idle rules are then applied in
/// the same step, so a close aircraft can start a recording immediately.
pub fn step(
    state: &TriggerState,
    snapshot: &AirspaceSnapshot,
    cfg: &TriggerConfig,
    now: f64,
    wall_clock: NaiveDateTime,
) -> Result<(TriggerState, Vec<Action>), TriggerError> {
    if let Some(last) = state.last_now {
        if now < last {
            return Err(TriggerError::ClockRegression { last, now });
        }
    }
    let mut s = state.clone();
    s.last_now = Some(now);
    let mut actions = Vec::new();

    let contaminated = snapshot.any_airborne_within(cfg.device_position, cfg.silence_radius_km);
    if contaminated {
        s.clear_streak = 0;
    } else {
        s.clear_streak = s.clear_streak.saturating_add(1);
    }

    match s.mode {
        Mode::RecordingSilence if contaminated => {
            actions.push(Action::AbortSilenceRecording);
            s.mode = Mode::Idle;
            s.recording_ends_at = None;
            s.active_event = None;
        }
        Mode::RecordingSilence | Mode::RecordingAircraft => {
            if s.recording_ends_at.is_some_and(|end| now >= end) {
                actions.push(Action::StopRecording);
                s.recording_ends_at = None;
                s.active_event = None;
                s.mode = Mode::Cooldown;
                s.cooldown_until = Some(now + cfg.cooldown_s);
            }
        }
        Mode::Idle | Mode::Cooldown => {}
    }

    if s.mode == Mode::Cooldown && s.cooldown_until.is_none_or(|until| now >= until) {
        s.mode = Mode::Idle;
        s.cooldown_until = None;
    }

    if s.mode == Mode::Idle {
        let nearest = snapshot
            .nearest_airborne(cfg.device_position)
            .filter(|n| n.distance_km <= cfg.trigger_distance_km);
        if let Some(n) = nearest.filter(|n| n.altitude_ft.is_some()) {
            let event = RecordingEvent {
                class: SampleClass::Aircraft,
                hex_id: n.icao,
                altitude_ft: n.altitude_ft,
                started_at: wall_clock,
                location_id: cfg.location_id,
                mic_id: cfg.mic_id,
            };
            actions.push(Action::StartAircraftRecording(event.clone()));
            s.mode = Mode::RecordingAircraft;
            s.recording_ends_at = Some(now + cfg.aircraft_duration_s);
            s.active_event = Some(event);
            s.clear_streak = 0;
        } else if s.clear_streak >= cfg.confirmations_required {
            let event = RecordingEvent {
                class: SampleClass::Silence,
                hex_id: Icao::SILENCE,
                altitude_ft: None,
                started_at: wall_clock,
                location_id: cfg.location_id,
                mic_id: cfg.mic_id,
            };
            actions.push(Action::StartSilenceRecording(event.clone()));
            s.mode = Mode::RecordingSilence;
            s.recording_ends_at = Some(now + cfg.silence_duration_s);
            s.active_event = Some(event);
            s.clear_streak = 0;
        }
    }

    Ok((s, actions))
}
