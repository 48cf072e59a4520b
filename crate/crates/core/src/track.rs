//! Live table of nearby aircraft built from decoded frames.
//!
//! One ingestion context owns the [`Tracker`]; readers get immutable
//! [`AirspaceSnapshot`] copies.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::adsb::cpr::{decode_cpr_global_timed, decode_cpr_local, CprFormat};
use crate::adsb::{AirbornePositionMsg, Icao, ModeSFrame, Payload, SbsRecord};

/// Mean Earth radius (IUGG) in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Tracks silent for longer than this are pruned.
pub const DEFAULT_STALE_TIMEOUT_S: f64 = 60.0;

/// Great-circle distance between two `(lat, lon)` points in degrees.
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CprEntry {
    pub msg: AirbornePositionMsg,
    pub received_at: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AircraftState {
    pub icao: Icao,
    pub position: Option<(f64, f64)>,
    pub altitude_ft: Option<i32>,
    pub airborne: bool,
    pub callsign: Option<String>,
    pub ground_speed_kt: Option<f64>,
    pub heading_deg: Option<f64>,
    pub vertical_rate_fpm: Option<i32>,
    pub last_seen: f64,
    pub cpr_even: Option<CprEntry>,
    pub cpr_odd: Option<CprEntry>,
}

impl AircraftState {
    fn new(icao: Icao, now: f64) -> Self {
        AircraftState {
            icao,
            position: None,
            altitude_ft: None,
            airborne: true,
            callsign: None,
            ground_speed_kt: None,
            heading_deg: None,
            vertical_rate_fpm: None,
            last_seen: now,
            cpr_even: None,
            cpr_odd: None,
        }
    }

    fn apply_position(&mut self, msg: &AirbornePositionMsg, now: f64) -> bool {
        if msg.altitude_ft.is_some() {
            self.altitude_ft = msg.altitude_ft;
        }
        self.airborne = !msg.surface;

        let entry = CprEntry {
            msg: msg.clone(),
            received_at: now,
        };
        match msg.cpr_format {
            CprFormat::Even => self.cpr_even = Some(entry),
            CprFormat::Odd => self.cpr_odd = Some(entry),
        }

        if let (Some(even), Some(odd)) = (&self.cpr_even, &self.cpr_odd) {
            if let Ok(pos) =
                decode_cpr_global_timed(&even.msg, even.received_at, &odd.msg, odd.received_at)
            {
                self.position = Some(pos);
                return true;
            }
        }
        // Fall back to a local decode against the last globally anchored fix.
        if let Some(reference) = self.position {
            self.position = Some(decode_cpr_local(msg, reference));
            return true;
        }
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AirspaceSnapshot {
    pub taken_at: f64,
    /// Sorted by ICAO address.
    pub aircraft: Vec<AircraftState>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearestAircraft {
    pub icao: Icao,
    pub distance_km: f64,
    pub altitude_ft: Option<i32>,
}

impl AirspaceSnapshot {
    /// Closest airborne aircraft with a known position. Ties go to the
    /// lexicographically smaller ICAO address.
    pub fn nearest_airborne(&self, device: (f64, f64)) -> Option<NearestAircraft> {
        let mut best: Option<NearestAircraft> = None;
        for ac in self.aircraft.iter().filter(|a| a.airborne) {
            let Some(pos) = ac.position else { continue };
            let d = haversine_km(pos, device);
            let better = match &best {
                None => true,
                Some(b) => d < b.distance_km || (d == b.distance_km && ac.icao < b.icao),
            };
            if better {
                best = Some(NearestAircraft {
                    icao: ac.icao,
                    distance_km: d,
                    altitude_ft: ac.altitude_ft,
                });
            }
        }
        best
    }

    /// Whether any airborne, positioned aircraft is within `radius_km`.
    pub fn any_airborne_within(&self, device: (f64, f64), radius_km: f64) -> bool {
        self.nearest_airborne(device)
            .is_some_and(|n| n.distance_km <= radius_km)
    }
}

/// Free-function form of [`AirspaceSnapshot::nearest_airborne`].
pub fn nearest_airborne(snapshot: &AirspaceSnapshot, device: (f64, f64)) -> Option<NearestAircraft> {
    snapshot.nearest_airborne(device)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IngestReport {
    pub new_aircraft: bool,
    pub position_updated: bool,
    /// The frame's timestamp was older than the track's `last_seen`.
    pub out_of_order: bool,
}

#[derive(Debug, Clone)]
pub struct Tracker {
    aircraft: BTreeMap<Icao, AircraftState>,
    stale_timeout_s: f64,
}

impl Default for Tracker {
    fn default() -> Self {
        Self::new(DEFAULT_STALE_TIMEOUT_S)
    }
}

impl Tracker {
    pub fn new(stale_timeout_s: f64) -> Self {
        Tracker {
            aircraft: BTreeMap::new(),
            stale_timeout_s,
        }
    }

    pub fn len(&self) -> usize {
        self.aircraft.len()
    }

    pub fn is_empty(&self) -> bool {
        self.aircraft.is_empty()
    }

    pub fn get(&self, icao: Icao) -> Option<&AircraftState> {
        self.aircraft.get(&icao)
    }

    fn touch(&mut self, icao: Icao, now: f64) -> (&mut AircraftState, IngestReport) {
        let mut report = IngestReport::default();
        let state = self.aircraft.entry(icao).or_insert_with(|| {
            report.new_aircraft = true;
            AircraftState::new(icao, now)
        });
        if now < state.last_seen {
            report.out_of_order = true;
        } else {
            state.last_seen = now;
        }
        (state, report)
    }

    /// Applies one CRC-valid frame. Frames failing CRC should be dropped
    /// before reaching the tracker; they are ignored here as well.
    pub fn ingest(&mut self, frame: &ModeSFrame, now: f64) -> IngestReport {
        if !frame.crc_ok {
            return IngestReport::default();
        }
        let surface = frame.is_surface_report();
        let (state, mut report) = self.touch(frame.icao, now);
        match &frame.payload {
            Payload::AirbornePosition(p) => {
                report.position_updated = state.apply_position(p, now);
            }
            Payload::Velocity(v) => {
                state.ground_speed_kt = Some(v.ground_speed_kt);
                state.heading_deg = Some(v.heading_deg);
                state.vertical_rate_fpm = v.vertical_rate_fpm;
            }
            Payload::Identification(id) => {
                state.callsign = Some(id.callsign.clone());
            }
            Payload::Opaque { .. } => {
                if surface {
                    state.airborne = false;
                }
            }
        }
        report
    }

    /// Applies a pre-decoded SBS row.
    pub fn ingest_sbs(&mut self, rec: &SbsRecord, now: f64) -> IngestReport {
        let (state, mut report) = self.touch(rec.icao, now);
        if let Some(pos) = rec.position {
            state.position = Some(pos);
            report.position_updated = true;
        }
        if rec.altitude_ft.is_some() {
            state.altitude_ft = rec.altitude_ft;
        }
        if let Some(cs) = &rec.callsign {
            state.callsign = Some(cs.clone());
        }
        if rec.ground_speed_kt.is_some() {
            state.ground_speed_kt = rec.ground_speed_kt;
        }
        if rec.track_deg.is_some() {
            state.heading_deg = rec.track_deg;
        }
        if rec.vertical_rate_fpm.is_some() {
            state.vertical_rate_fpm = rec.vertical_rate_fpm;
        }
        if let Some(on_ground) = rec.on_ground {
            state.airborne = !on_ground;
        }
        report
    }

    /// Removes tracks with `now - last_seen > stale_timeout`.
    pub fn prune(&mut self, now: f64) -> usize {
        let before = self.aircraft.len();
        let timeout = self.stale_timeout_s;
        self.aircraft.retain(|_, s| now - s.last_seen <= timeout);
        before - self.aircraft.len()
    }

    pub fn snapshot(&mut self, now: f64) -> AirspaceSnapshot {
        self.prune(now);
        AirspaceSnapshot {
            taken_at: now,
            aircraft: self.aircraft.values().cloned().collect(),
        }
    }
}
