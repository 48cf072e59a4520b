//! Verified recordings → sessions, folds, segments and the published index.

pub mod index;
pub mod registry;
pub mod segment;

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate, NaiveDateTime, NaiveTime};
use serde::{Deserialize, Serialize};

use crate::adsb::Icao;
use crate::capture::{SidecarRow, SAMPLE_RATE_HZ};
use crate::trigger::SampleClass;

pub use index::{build_index, build_summary, parse_index, IndexRow, INDEX_COLUMNS};
pub use registry::{consensus_lookup, derive_engfamily, Registry, RegistrationSource, ResolvedAirframe, TableSource};
pub use segment::{
    quantize_env_annotations, read_env_annotations, segment, write_env_annotations, EnvAnnotationRow, Label, Segment,
    SegmentLabel, HOUR_SECONDS, SEGMENT_SAMPLES, SEGMENT_SECONDS,
};

pub const DEFAULT_SESSION_GAP_HOURS: i64 = 2;
pub const DEFAULT_FOLDS: u8 = 6;
/// Recordings above this altitude are left out of the index.
pub const MAX_ALTITUDE_FT: i32 = 10_000;
/// Allowed relative deviation of a fold's clip count from the equal share.
pub const FOLD_BALANCE_TOLERANCE: f64 = 0.15;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("no balanced split: {0}")]
    InfeasibleSplit(String),
    #[error("annotated events overlap: [{0}, {1}) and [{2}, {3})")]
    OverlappingEvents(f64, f64, f64, f64),
    #[error("event [{0}, {1}) is empty or outside the hour")]
    EventOutOfRange(f64, f64),
    #[error("no strict majority among registration sources for {0}")]
    NoConsensus(Icao),
    #[error("{0} is not known to any source")]
    UnknownHex(Icao),
    #[error("consensus needs at least two sources, got {0}")]
    InsufficientSources(usize),
    #[error("{0} is flagged military and excluded")]
    MilitaryExcluded(Icao),
    #[error("bad record {0}: {1}")]
    BadRecord(String, String),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// The 14 descriptive airframe features.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AirframeMeta {
    pub airframe: String,
    pub engtype: String,
    pub engnum: Option<u32>,
    pub shortdesc: String,
    pub typedesig: String,
    pub manu: String,
    pub model: String,
    pub engmanu: String,
    pub engmodel: String,
    pub engfamily: String,
    pub fueltype: String,
    pub propmanu: String,
    pub propmodel: String,
    pub mtow_kg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub filename: String,
    pub class: SampleClass,
    pub hex_id: Icao,
    pub altitude_ft: Option<i32>,
    pub date: NaiveDate,
    pub time: NaiveTime,
    pub location_id: u32,
    pub mic_id: u32,
    pub session_id: Option<u32>,
    pub fold: Option<u8>,
    /// Trim marks within the original recording (aircraft only).
    pub event_start_s: Option<f64>,
    pub event_end_s: Option<f64>,
    pub airframe: Option<AirframeMeta>,
}

impl SampleRecord {
    pub fn datetime(&self) -> NaiveDateTime {
        self.date.and_time(self.time)
    }

    /// A record for an untrimmed capture. Aircraft events span the whole file.
    pub fn from_sidecar(row: &SidecarRow) -> Result<Self, DatasetError> {
        let bad = |m: &str| DatasetError::BadRecord(row.filename.clone(), m.to_string());
        let date = NaiveDate::parse_from_str(&row.date, "%Y-%m-%d").map_err(|_| bad("date"))?;
        let time = NaiveTime::parse_from_str(&row.time, "%H:%M:%S").map_err(|_| bad("time"))?;
        let duration = row.n_samples as f64 / SAMPLE_RATE_HZ as f64;
        let aircraft = row.class == SampleClass::Aircraft;
        Ok(SampleRecord {
            filename: row.filename.clone(),
            class: row.class,
            hex_id: row.hex_id,
            altitude_ft: row.altitude_ft,
            date,
            time,
            location_id: row.location_id,
            mic_id: row.mic_id,
            session_id: None,
            fold: None,
            event_start_s: aircraft.then_some(0.0),
            event_end_s: aircraft.then_some(duration),
            airframe: None,
        })
    }

    /// Duration of the annotated event, if any.
    pub fn event_duration_s(&self) -> Option<f64> {
        Some(self.event_end_s? - self.event_start_s?)
    }
}

/// Groups records by (location, mic) into sessions: consecutive clips less
/// than `gap` apart share a session. Ids start at 1 and follow session start
/// time. Returns the number of sessions.
pub fn assign_sessions(records: &mut [SampleRecord], gap: Duration) -> u32 {
    let mut by_device: BTreeMap<(u32, u32), Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_device.entry((r.location_id, r.mic_id)).or_default().push(i);
    }

    // (start, loc, mic, members)
    let mut sessions: Vec<(NaiveDateTime, u32, u32, Vec<usize>)> = Vec::new();
    for ((loc, mic), mut idx) in by_device {
        idx.sort_by_key(|&i| (records[i].datetime(), records[i].filename.clone()));
        let mut prev: Option<NaiveDateTime> = None;
        for i in idx {
            let t = records[i].datetime();
            match prev {
                Some(p) if t - p < gap => sessions.last_mut().unwrap().3.push(i),
                _ => sessions.push((t, loc, mic, vec![i])),
            }
            prev = Some(t);
        }
    }
    sessions.sort_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));
    for (n, (_, _, _, members)) in sessions.iter().enumerate() {
        for &i in members {
            records[i].session_id = Some(n as u32 + 1);
        }
    }
    sessions.len() as u32
}

#[derive(Debug, Clone)]
struct SessionInfo {
    id: u32,
    location: u32,
    start: NaiveDateTime,
    count: usize,
}

fn session_table(records: &[SampleRecord]) -> Result<Vec<SessionInfo>, DatasetError> {
    let mut map: BTreeMap<u32, SessionInfo> = BTreeMap::new();
    for r in records {
        let id = r
            .session_id
            .ok_or_else(|| DatasetError::BadRecord(r.filename.clone(), "no session assigned".into()))?;
        let e = map.entry(id).or_insert(SessionInfo {
            id,
            location: r.location_id,
            start: r.datetime(),
            count: 0,
        });
        e.count += 1;
        e.start = e.start.min(r.datetime());
    }
    Ok(map.into_values().collect())
}

/// Assigns whole sessions to folds `1..=n_folds`; the last fold is the test
/// fold.
///
/// The test fold is filled first, per location from the latest session
/// backwards, taking a session only while that moves the test fold closer to
/// an equal share. The remaining sessions go largest first to the lightest
/// training fold. Every fold must end within
/// `max(FOLD_BALANCE_TOLERANCE · share, 1)` clips of the equal share.
pub fn split_folds(records: &mut [SampleRecord], n_folds: u8) -> Result<(), DatasetError> {
    if n_folds < 2 {
        return Err(DatasetError::InfeasibleSplit("need at least two folds".into()));
    }
    let sessions = session_table(records)?;
    let total: usize = sessions.iter().map(|s| s.count).sum();
    if total == 0 {
        return Ok(());
    }
    let share = total as f64 / n_folds as f64;

    // Per location, groups of sessions with equal start, latest group first.
    let mut tails: BTreeMap<u32, Vec<Vec<&SessionInfo>>> = BTreeMap::new();
    {
        let mut by_loc: BTreeMap<u32, Vec<&SessionInfo>> = BTreeMap::new();
        for s in &sessions {
            by_loc.entry(s.location).or_default().push(s);
        }
        for (loc, mut list) in by_loc {
            list.sort_by_key(|s| std::cmp::Reverse((s.start, s.id)));
            let mut groups: Vec<Vec<&SessionInfo>> = Vec::new();
            for s in list {
                match groups.last_mut() {
                    Some(g) if g[0].start == s.start => g.push(s),
                    _ => groups.push(vec![s]),
                }
            }
            tails.insert(loc, groups);
        }
    }

    let mut fold_of: BTreeMap<u32, u8> = BTreeMap::new();
    let mut test_size = 0usize;
    let mut cursor: BTreeMap<u32, usize> = tails.keys().map(|&l| (l, 0)).collect();
    loop {
        let current = (test_size as f64 - share).abs();
        let best = tails
            .iter()
            .filter_map(|(loc, groups)| {
                let g = groups.get(cursor[loc])?;
                let size: usize = g.iter().map(|s| s.count).sum();
                let err = (test_size as f64 + size as f64 - share).abs();
                (err < current).then_some((err, *loc, size))
            })
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let Some((_, loc, size)) = best else { break };
        for s in &tails[&loc][cursor[&loc]] {
            fold_of.insert(s.id, n_folds);
        }
        *cursor.get_mut(&loc).unwrap() += 1;
        test_size += size;
    }

    let mut rest: Vec<&SessionInfo> = sessions.iter().filter(|s| !fold_of.contains_key(&s.id)).collect();
    rest.sort_by_key(|s| (std::cmp::Reverse(s.count), s.start, s.id));
    let mut loads = vec![0usize; n_folds as usize - 1];
    for s in rest {
        let (i, _) = loads
            .iter()
            .enumerate()
            .min_by_key(|&(i, &l)| (l, i))
            .expect("at least one training fold");
        loads[i] += s.count;
        fold_of.insert(s.id, i as u8 + 1);
    }
    loads.push(test_size);

    let tol = (FOLD_BALANCE_TOLERANCE * share).max(1.0);
    if let Some((i, &l)) = loads.iter().enumerate().find(|&(_, &l)| (l as f64 - share).abs() > tol) {
        return Err(DatasetError::InfeasibleSplit(format!(
            "fold {} holds {l} of {total} clips; equal share is {share:.1} ± {tol:.1}",
            i + 1
        )));
    }

    for r in records.iter_mut() {
        r.fold = fold_of.get(&r.session_id.unwrap()).copied();
    }
    Ok(())
}

/// Drops high-altitude captures, then assigns sessions and folds. Output is
/// ordered by recording time, then filename.
pub fn prepare_records(mut records: Vec<SampleRecord>, session_gap: Duration, n_folds: u8) -> Result<Vec<SampleRecord>, DatasetError> {
    records.retain(|r| r.altitude_ft.is_none_or(|a| a <= MAX_ALTITUDE_FT));
    records.sort_by(|a, b| (a.datetime(), &a.filename).cmp(&(b.datetime(), &b.filename)));
    assign_sessions(&mut records, session_gap);
    split_folds(&mut records, n_folds)?;
    Ok(records)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn rec(name: &str, loc: u32, mic: u32, dt: NaiveDateTime, class: SampleClass) -> SampleRecord {
        let aircraft = class == SampleClass::Aircraft;
        SampleRecord {
            filename: name.to_string(),
            class,
            hex_id: if aircraft { "7C7CD0".parse().unwrap() } else { Icao::SILENCE },
            altitude_ft: aircraft.then_some(2000),
            date: dt.date(),
            time: dt.time(),
            location_id: loc,
            mic_id: mic,
            session_id: None,
            fold: None,
            event_start_s: aircraft.then_some(0.0),
            event_end_s: aircraft.then_some(60.0),
            airframe: None,
        }
    }

    pub(crate) fn day(d: u32, h: u32, m: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2023, 5, d).unwrap().and_hms_opt(h, m, 0).unwrap()
    }

    fn gap() -> Duration {
        Duration::hours(DEFAULT_SESSION_GAP_HOURS)
    }

    #[test]
    fn five_minutes_apart_share_a_session() {
        let mut r = vec![
            rec("a", 0, 1, day(1, 10, 0), SampleClass::Aircraft),
            rec("b", 0, 1, day(1, 10, 5), SampleClass::Silence),
        ];
        assert_eq!(assign_sessions(&mut r, gap()), 1);
        assert_eq!(r[0].session_id, r[1].session_id);
    }

    #[test]
    fn days_apart_are_different_sessions() {
        let mut r = vec![
            rec("a", 0, 1, day(1, 10, 0), SampleClass::Aircraft),
            rec("b", 0, 1, day(4, 10, 0), SampleClass::Aircraft),
        ];
        assert_eq!(assign_sessions(&mut r, gap()), 2);
        assert_eq!((r[0].session_id, r[1].session_id), (Some(1), Some(2)));
    }

    #[test]
    fn devices_never_share_sessions() {
        let mut r = vec![
            rec("a", 0, 1, day(1, 10, 0), SampleClass::Aircraft),
            rec("b", 0, 0, day(1, 10, 1), SampleClass::Aircraft),
            rec("c", 2, 1, day(1, 10, 2), SampleClass::Aircraft),
        ];
        assert_eq!(assign_sessions(&mut r, gap()), 3);
    }

    #[test]
    fn twenty_nine_sessions() {
        let mut r = Vec::new();
        for s in 0..29u32 {
            let d = 1 + s % 28;
            let h = if s >= 28 { 20 } else { 8 };
            for k in 0..3 {
                r.push(rec(&format!("{s}_{k}"), 0, 1, day(d, h, k * 20), SampleClass::Aircraft));
            }
        }
        assert_eq!(assign_sessions(&mut r, gap()), 29);
        let ids: std::collections::BTreeSet<_> = r.iter().map(|x| x.session_id.unwrap()).collect();
        assert_eq!(ids.len(), 29);
    }

    #[test]
    fn six_equal_sessions_one_per_fold() {
        let mut r = Vec::new();
        for d in 1..=6 {
            for k in 0..4 {
                r.push(rec(&format!("{d}_{k}"), 0, 1, day(d, 9, k * 10), SampleClass::Aircraft));
            }
        }
        assign_sessions(&mut r, gap());
        split_folds(&mut r, 6).unwrap();
        let mut fold_by_session = BTreeMap::new();
        for x in &r {
            fold_by_session.insert(x.session_id.unwrap(), x.fold.unwrap());
        }
        let folds: std::collections::BTreeSet<_> = fold_by_session.values().copied().collect();
        assert_eq!(folds.len(), 6);
        // The latest session is the test fold.
        assert_eq!(fold_by_session[&6], 6);
    }

    #[test]
    fn dominant_session_is_infeasible() {
        let mut r = Vec::new();
        for k in 0..40 {
            r.push(rec(&format!("big{k}"), 0, 1, day(1, 8, 0) + Duration::minutes(k), SampleClass::Aircraft));
        }
        for d in 2..=7 {
            for k in 0..10 {
                r.push(rec(&format!("{d}_{k}"), 0, 1, day(d, 9, k), SampleClass::Aircraft));
            }
        }
        assign_sessions(&mut r, gap());
        assert!(matches!(split_folds(&mut r, 6), Err(DatasetError::InfeasibleSplit(_))));
    }

    #[test]
    fn altitude_gate_and_ordering() {
        let mut high = rec("high", 0, 1, day(1, 9, 0), SampleClass::Aircraft);
        high.altitude_ft = Some(10_025);
        let mut r = vec![high];
        for d in 1..=6 {
            r.push(rec(&format!("{d}"), 0, 1, day(d, 10, 0), SampleClass::Aircraft));
        }
        let out = prepare_records(r, gap(), 6).unwrap();
        assert_eq!(out.len(), 6);
        assert!(out.iter().all(|x| x.filename != "high"));
    }

    #[test]
    fn from_sidecar_spans_file() {
        let row = SidecarRow {
            filename: "7C7CD0_2023-05-09_12-42-55_2_1.wav".into(),
            class: SampleClass::Aircraft,
            hex_id: "7C7CD0".parse().unwrap(),
            altitude_ft: Some(1500),
            date: "2023-05-09".into(),
            time: "12:42:55".into(),
            location_id: 2,
            mic_id: 1,
            n_samples: 1_323_000,
        };
        let r = SampleRecord::from_sidecar(&row).unwrap();
        assert_eq!(r.event_duration_s(), Some(60.0));
        assert_eq!(r.datetime(), day(9, 12, 42) + Duration::seconds(55));
    }
}
