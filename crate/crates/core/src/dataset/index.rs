//! `index.csv` (one row per clip) and the distribution summary.

use std::collections::BTreeMap;

use chrono::{NaiveDate, NaiveTime};
use serde::{Deserialize, Serialize};

use super::{AirframeMeta, DatasetError, SampleRecord};
use crate::adsb::Icao;
use crate::trigger::SampleClass;

pub const INDEX_COLUMNS: [&str; 26] = [
    "filename", "class", "fold", "hex_id", "date", "time", "location_id", "mic_id", "session_id",
    "altitude_ft", "event_start_s", "event_end_s", "airframe", "engtype", "engnum", "shortdesc",
    "typedesig", "manu", "model", "engmanu", "engmodel", "engfamily", "fueltype", "propmanu",
    "propmodel", "mtow_kg",
];

/// Flat CSV row; field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexRow {
    pub filename: String,
    pub class: SampleClass,
    pub fold: Option<u8>,
    pub hex_id: Icao,
    pub date: String,
    pub time: String,
    pub location_id: u32,
    pub mic_id: u32,
    pub session_id: Option<u32>,
    pub altitude_ft: Option<i32>,
    pub event_start_s: Option<f64>,
    pub event_end_s: Option<f64>,
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

impl From<&SampleRecord> for IndexRow {
    fn from(r: &SampleRecord) -> Self {
        let m = r.airframe.clone().unwrap_or_default();
        IndexRow {
            filename: r.filename.clone(),
            class: r.class,
            fold: r.fold,
            hex_id: r.hex_id,
            date: r.date.format("%Y-%m-%d").to_string(),
            time: r.time.format("%H:%M:%S").to_string(),
            location_id: r.location_id,
            mic_id: r.mic_id,
            session_id: r.session_id,
            altitude_ft: r.altitude_ft,
            event_start_s: r.event_start_s,
            event_end_s: r.event_end_s,
            airframe: m.airframe,
            engtype: m.engtype,
            engnum: m.engnum,
            shortdesc: m.shortdesc,
            typedesig: m.typedesig,
            manu: m.manu,
            model: m.model,
            engmanu: m.engmanu,
            engmodel: m.engmodel,
            engfamily: m.engfamily,
            fueltype: m.fueltype,
            propmanu: m.propmanu,
            propmodel: m.propmodel,
            mtow_kg: m.mtow_kg,
        }
    }
}

impl TryFrom<IndexRow> for SampleRecord {
    type Error = DatasetError;
    fn try_from(row: IndexRow) -> Result<Self, DatasetError> {
        let bad = |m: &str| DatasetError::BadRecord(row.filename.clone(), m.to_string());
        let date = NaiveDate::parse_from_str(&row.date, "%Y-%m-%d").map_err(|_| bad("date"))?;
        let time = NaiveTime::parse_from_str(&row.time, "%H:%M:%S").map_err(|_| bad("time"))?;
        let meta = AirframeMeta {
            airframe: row.airframe,
            engtype: row.engtype,
            engnum: row.engnum,
            shortdesc: row.shortdesc,
            typedesig: row.typedesig,
            manu: row.manu,
            model: row.model,
            engmanu: row.engmanu,
            engmodel: row.engmodel,
            engfamily: row.engfamily,
            fueltype: row.fueltype,
            propmanu: row.propmanu,
            propmodel: row.propmodel,
            mtow_kg: row.mtow_kg,
        };
        Ok(SampleRecord {
            filename: row.filename,
            class: row.class,
            hex_id: row.hex_id,
            altitude_ft: row.altitude_ft,
            date,
            time,
            location_id: row.location_id,
            mic_id: row.mic_id,
            session_id: row.session_id,
            fold: row.fold,
            event_start_s: row.event_start_s,
            event_end_s: row.event_end_s,
            airframe: (meta != AirframeMeta::default()).then_some(meta),
        })
    }
}

pub fn build_index(records: &[SampleRecord]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(INDEX_COLUMNS).expect("in-memory write");
    for r in records {
        w.serialize(IndexRow::from(r)).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("CSV output is UTF-8")
}

pub fn parse_index(text: &str) -> Result<Vec<SampleRecord>, DatasetError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != INDEX_COLUMNS {
        return Err(DatasetError::BadRecord("index.csv".into(), "unexpected header".into()));
    }
    r.deserialize::<IndexRow>()
        .map(|row| SampleRecord::try_from(row?))
        .collect()
}

fn pct(n: usize, d: usize) -> String {
    if d == 0 {
        "0.00".to_string()
    } else {
        format!("{:.2}", 100.0 * n as f64 / d as f64)
    }
}

/// Class, location and microphone shares (%) per training fold, over all
/// training folds, and in the test fold. Columns:
/// `group,value,fold_1..fold_{k-1},train,test`.
pub fn build_summary(records: &[SampleRecord], n_folds: u8) -> String {
    let test = n_folds;
    let mut cols: Vec<(String, Box<dyn Fn(&SampleRecord) -> bool>)> = (1..test)
        .map(|f| (format!("fold_{f}"), Box::new(move |r: &SampleRecord| r.fold == Some(f)) as Box<dyn Fn(&SampleRecord) -> bool>))
        .collect();
    cols.push(("train".into(), Box::new(move |r| r.fold.is_some_and(|f| f < test))));
    cols.push(("test".into(), Box::new(move |r| r.fold == Some(test))));

    let mut groups: Vec<(&str, BTreeMap<String, Vec<usize>>)> = Vec::new();
    let keys: [(&str, fn(&SampleRecord) -> String); 3] = [
        ("class", |r| (r.class as u8).to_string()),
        ("location", |r| r.location_id.to_string()),
        ("microphone", |r| r.mic_id.to_string()),
    ];
    let totals: Vec<usize> = cols.iter().map(|(_, f)| records.iter().filter(|r| f(r)).count()).collect();
    for (name, key) in keys {
        let mut values: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for r in records {
            let counts = values.entry(key(r)).or_insert_with(|| vec![0; cols.len()]);
            for (i, (_, f)) in cols.iter().enumerate() {
                if f(r) {
                    counts[i] += 1;
                }
            }
        }
        groups.push((name, values));
    }

    let mut out = String::from("group,value");
    for (name, _) in &cols {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    out.push_str("count,all");
    for t in &totals {
        out.push_str(&format!(",{t}"));
    }
    out.push('\n');
    for (name, values) in groups {
        for (value, counts) in values {
            out.push_str(&format!("{name},{value}"));
            for (c, t) in counts.iter().zip(&totals) {
                out.push(',');
                out.push_str(&pct(*c, *t));
            }
            out.push('\n');
        }
    }
    out
}
