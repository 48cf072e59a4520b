//! Registration consensus and airframe lookup from an offline registry file.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::Deserialize;

use super::{AirframeMeta, DatasetError};
use crate::adsb::Icao;

/// A source that maps an ICAO address to a registration. `None` means the
/// source has no answer.
pub trait RegistrationSource {
    fn registration(&self, hex: Icao) -> Option<String>;
}

/// A plain hex → registration table.
#[derive(Debug, Clone, Default)]
pub struct TableSource(pub HashMap<Icao, String>);

impl RegistrationSource for TableSource {
    fn registration(&self, hex: Icao) -> Option<String> {
        self.0.get(&hex).cloned()
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
struct RegistryRow {
    hex: Icao,
    registration: String,
    #[serde(default)]
    military: Option<u8>,
    #[serde(default)]
    airframe: String,
    #[serde(default)]
    engtype: String,
    #[serde(default)]
    engnum: Option<u32>,
    #[serde(default)]
    shortdesc: String,
    #[serde(default)]
    typedesig: String,
    #[serde(default)]
    manu: String,
    #[serde(default)]
    model: String,
    #[serde(default)]
    engmanu: String,
    #[serde(default)]
    engmodel: String,
    #[serde(default)]
    fueltype: String,
    #[serde(default)]
    propmanu: String,
    #[serde(default)]
    propmodel: String,
    #[serde(default)]
    mtow_kg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistryEntry {
    pub registration: String,
    pub military: bool,
    pub meta: AirframeMeta,
}

/// The primary registry: CSV keyed by `hex`, with a `registration` column,
/// an optional `military` flag (1 = excluded) and the airframe feature
/// columns. Any `engfamily` column is ignored and re-derived.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    entries: BTreeMap<Icao, RegistryEntry>,
}

impl Registry {
    pub fn from_csv(text: &str) -> Result<Self, DatasetError> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let mut entries = BTreeMap::new();
        for row in r.deserialize::<RegistryRow>() {
            let row = row?;
            let meta = AirframeMeta {
                engfamily: derive_engfamily(&row.engmodel),
                airframe: row.airframe,
                engtype: row.engtype,
                engnum: row.engnum,
                shortdesc: row.shortdesc,
                typedesig: row.typedesig,
                manu: row.manu,
                model: row.model,
                engmanu: row.engmanu,
                engmodel: row.engmodel,
                fueltype: row.fueltype,
                propmanu: row.propmanu,
                propmodel: row.propmodel,
                mtow_kg: row.mtow_kg,
            };
            entries.insert(
                row.hex,
                RegistryEntry {
                    registration: row.registration,
                    military: row.military.unwrap_or(0) != 0,
                    meta,
                },
            );
        }
        Ok(Registry { entries })
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, hex: Icao) -> Option<&RegistryEntry> {
        self.entries.get(&hex)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl RegistrationSource for Registry {
    fn registration(&self, hex: Icao) -> Option<String> {
        self.get(hex).map(|e| e.registration.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedAirframe {
    pub registration: String,
    pub meta: AirframeMeta,
}

/// Accepts the registration reported by a strict majority of the sources
/// that answer, then reads the airframe features from `registry`.
pub fn consensus_lookup(
    hex: Icao,
    sources: &[&dyn RegistrationSource],
    registry: &Registry,
) -> Result<ResolvedAirframe, DatasetError> {
    if sources.len() < 2 {
        return Err(DatasetError::InsufficientSources(sources.len()));
    }
    let answers: Vec<String> = sources
        .iter()
        .filter_map(|s| s.registration(hex))
        .map(|r| r.trim().to_uppercase())
        .collect();
    if answers.is_empty() {
        return Err(DatasetError::UnknownHex(hex));
    }
    let mut votes: BTreeMap<&str, usize> = BTreeMap::new();
    for a in &answers {
        *votes.entry(a.as_str()).or_default() += 1;
    }
    let (winner, n) = votes
        .iter()
        .max_by_key(|(_, &n)| n)
        .map(|(r, &n)| (r.to_string(), n))
        .expect("non-empty");
    if 2 * n <= answers.len() {
        return Err(DatasetError::NoConsensus(hex));
    }
    let entry = registry.get(hex).ok_or(DatasetError::UnknownHex(hex))?;
    if entry.military {
        return Err(DatasetError::MilitaryExcluded(hex));
    }
    Ok(ResolvedAirframe {
        registration: winner,
        meta: entry.meta.clone(),
    })
}

/// Engine family from an engine model designation.
///
/// Hyphens, spaces and slashes are ignored for matching, so `CFM-56-7B24`
/// and `CFM56-7B26/3` both map to `CFM56`. Unlisted models map to their
/// leading designation token.
pub fn derive_engfamily(engmodel: &str) -> String {
    const PREFIXES: &[(&str, &str)] = &[
        ("CFM56", "CFM56"),
        ("CF34", "CF34"),
        ("CF6", "CF6"),
        ("V25", "V2500"),
        ("PT6", "PT6"),
        ("PW1", "PW100"),
        ("PW2", "PW2000"),
        ("PW4", "PW4000"),
        ("GE90", "GE90"),
        ("GENX", "GENX"),
        ("LEAP", "LEAP"),
        ("TRENT", "TRENT"),
        ("TPE331", "TPE331"),
        ("JT8D", "JT8D"),
        ("JT15D", "JT15D"),
        ("TAY", "TAY"),
        ("AE3007", "AE3007"),
        ("ARRIEL", "ARRIEL"),
    ];
    let compact: String = engmodel
        .chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_uppercase())
        .collect();
    if compact.is_empty() {
        return String::new();
    }
    if compact.starts_with("PW1") && compact.as_bytes().get(6) == Some(&b'G') {
        return "PW1000G".to_string();
    }
    for (prefix, family) in PREFIXES {
        if compact.starts_with(prefix) {
            return family.to_string();
        }
    }
    engmodel
        .trim()
        .split(|c: char| c == '-' || c == '/' || c.is_whitespace())
        .next()
        .unwrap_or("")
        .to_uppercase()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hex(s: &str) -> Icao {
        s.parse().unwrap()
    }

    fn table(pairs: &[(&str, &str)]) -> TableSource {
        TableSource(pairs.iter().map(|(h, r)| (hex(h), r.to_string())).collect())
    }

    const REGISTRY: &str = "\
hex,registration,military,airframe,engtype,engnum,shortdesc,typedesig,manu,model,engmanu,engmodel,fueltype,propmanu,propmodel,mtow_kg
7C7777,VH-VUT,0,Power Driven Aeroplane,Turbofan,2,L2J,B738,THE BOEING COMPANY,737-8FE,CFM INTERNATIONAL,CFM56-7B24,Kerosene,NOT FITTED WITH PROPELLER,NOT APPLICABLE,79015
7CF000,A39-001,1,Power Driven Aeroplane,Turbofan,2,L2J,A332,AIRBUS,KC-30A,GENERAL ELECTRIC,CF6-80E1,Kerosene,NOT FITTED WITH PROPELLER,NOT APPLICABLE,233000
";

    #[test]
    fn engfamily_rule() {
        assert_eq!(derive_engfamily("CFM-56-7B24"), "CFM56");
        assert_eq!(derive_engfamily("CFM56-7B26/3"), "CFM56");
        assert_eq!(derive_engfamily("CF34-10E5"), "CF34");
        assert_eq!(derive_engfamily("V2527-A5"), "V2500");
        assert_eq!(derive_engfamily("PT6A-67P"), "PT6");
        assert_eq!(derive_engfamily("PW127M"), "PW100");
        assert_eq!(derive_engfamily("PW1127G-JM"), "PW1000G");
        assert_eq!(derive_engfamily("IO-540-K1A5"), "IO");
        assert_eq!(derive_engfamily(""), "");
    }

    #[test]
    fn unanimous_and_majority() {
        let registry = Registry::from_csv(REGISTRY).unwrap();
        let a = table(&[("7C7777", "VH-VUT")]);
        let b = table(&[("7C7777", "vh-vut")]);
        let c = table(&[("7C7777", "VH-XXX")]);
        let r = consensus_lookup(hex("7C7777"), &[&a, &b, &registry], &registry).unwrap();
        assert_eq!(r.registration, "VH-VUT");
        assert_eq!(r.meta.engfamily, "CFM56");
        assert_eq!(r.meta.mtow_kg, Some(79015.0));
        assert!(consensus_lookup(hex("7C7777"), &[&a, &c, &b], &registry).is_ok());
    }

    #[test]
    fn tie_is_no_consensus() {
        let registry = Registry::from_csv(REGISTRY).unwrap();
        let a = table(&[("7C7777", "VH-VUT")]);
        let c = table(&[("7C7777", "VH-XXX")]);
        assert!(matches!(
            consensus_lookup(hex("7C7777"), &[&a, &c], &registry),
            Err(DatasetError::NoConsensus(_))
        ));
    }

    #[test]
    fn unknown_military_and_source_count() {
        let registry = Registry::from_csv(REGISTRY).unwrap();
        let empty = TableSource::default();
        assert!(matches!(
            consensus_lookup(hex("ABCDEF"), &[&empty, &registry], &registry),
            Err(DatasetError::UnknownHex(_))
        ));
        let m = table(&[("7CF000", "A39-001")]);
        assert!(matches!(
            consensus_lookup(hex("7CF000"), &[&m, &registry], &registry),
            Err(DatasetError::MilitaryExcluded(_))
        ));
        assert!(matches!(
            consensus_lookup(hex("7C7777"), &[&registry], &registry),
            Err(DatasetError::InsufficientSources(1))
        ));
    }
}
