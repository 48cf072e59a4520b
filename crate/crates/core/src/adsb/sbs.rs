//! SBS/BaseStation CSV rows (`MSG,...`). Rows carry already-decoded values,
//! so positions bypass CPR entirely.

use super::{DecodeError, Icao};

#[derive(Debug, Clone, PartialEq)]
pub struct SbsRecord {
    pub transmission_type: u8,
    pub icao: Icao,
    pub callsign: Option<String>,
    pub altitude_ft: Option<i32>,
    pub ground_speed_kt: Option<f64>,
    pub track_deg: Option<f64>,
    pub position: Option<(f64, f64)>,
    pub vertical_rate_fpm: Option<i32>,
    pub on_ground: Option<bool>,
}

fn opt<T: std::str::FromStr>(fields: &[&str], idx: usize) -> Result<Option<T>, DecodeError> {
    match fields.get(idx).map(|s| s.trim()) {
        None | Some("") => Ok(None),
        Some(s) => s
            .parse()
            .map(Some)
            .map_err(|_| DecodeError::MalformedSbs(format!("field {} = {s:?}", idx + 1))),
    }
}

pub fn parse_sbs_line(line: &str) -> Result<SbsRecord, DecodeError> {
    let fields: Vec<&str> = line.trim().split(',').collect();
    if fields.len() < 16 || fields[0] != "MSG" {
        return Err(DecodeError::MalformedSbs(line.to_string()));
    }
    let transmission_type = fields[1]
        .trim()
        .parse()
        .map_err(|_| DecodeError::MalformedSbs(format!("transmission type {:?}", fields[1])))?;
    let icao: Icao = fields[4]
        .trim()
        .parse()
        .map_err(|_| DecodeError::MalformedSbs(format!("hex ident {:?}", fields[4])))?;
    let callsign = fields
        .get(10)
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty());
    let lat: Option<f64> = opt(&fields, 14)?;
    let lon: Option<f64> = opt(&fields, 15)?;
    let on_ground = match fields.get(21).map(|s| s.trim()) {
        None | Some("") => None,
        Some("0") => Some(false),
        Some(_) => Some(true),
    };

    Ok(SbsRecord {
        transmission_type,
        icao,
        callsign,
        altitude_ft: opt(&fields, 11)?,
        ground_speed_kt: opt(&fields, 12)?,
        track_deg: opt(&fields, 13)?,
        position: lat.zip(lon),
        vertical_rate_fpm: opt(&fields, 16)?,
        on_ground,
    })
}

fn field<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

/// Formats a row with 22 fields; date/time columns are left empty.
pub fn format_sbs_line(rec: &SbsRecord) -> String {
    let (lat, lon) = match rec.position {
        Some((lat, lon)) => (format!("{lat:.5}"), format!("{lon:.5}")),
        None => (String::new(), String::new()),
    };
    let on_ground = match rec.on_ground {
        Some(true) => "-1",
        Some(false) => "0",
        None => "",
    };
    format!(
        "MSG,{},1,1,{},1,,,,,{},{},{},{},{},{},{},,,,,{}",
        rec.transmission_type,
        rec.icao,
        rec.callsign.clone().unwrap_or_default(),
        field(&rec.altitude_ft),
        rec.ground_speed_kt.map(|v| format!("{v:.1}")).unwrap_or_default(),
        rec.track_deg.map(|v| format!("{v:.1}")).unwrap_or_default(),
        lat,
        lon,
        field(&rec.vertical_rate_fpm),
        on_ground,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn position_row() {
        let line = "MSG,3,1,1,7C7CD0,1,2023/05/09,12:42:55.000,2023/05/09,12:42:55.000,,3250,,,-34.95,138.53,,,0,0,0,0";
        let rec = parse_sbs_line(line).unwrap();
        assert_eq!(rec.icao.to_string(), "7C7CD0");
        assert_eq!(rec.altitude_ft, Some(3250));
        assert_eq!(rec.position, Some((-34.95, 138.53)));
        assert_eq!(rec.on_ground, Some(false));
        assert_eq!(rec.callsign, None);
    }

    #[test]
    fn identification_row() {
        let line = "MSG,1,1,1,7C7CD0,1,,,,,QFA123  ,,,,,,,,,,,";
        let rec = parse_sbs_line(line).unwrap();
        assert_eq!(rec.callsign.as_deref(), Some("QFA123"));
        assert_eq!(rec.position, None);
    }

    #[test]
    fn malformed_rows() {
        assert!(parse_sbs_line("MSG,3,1,1").is_err());
        assert!(parse_sbs_line("SEL,3,1,1,7C7CD0,1,,,,,,,,,,,").is_err());
        assert!(parse_sbs_line("MSG,3,1,1,XYZ,1,,,,,,,,,,,").is_err());
        assert!(parse_sbs_line("MSG,3,1,1,7C7CD0,1,,,,,,high,,,,,").is_err());
    }

    #[test]
    fn format_then_parse() {
        let rec = SbsRecord {
            transmission_type: 3,
            icao: "7C7CD0".parse().unwrap(),
            callsign: None,
            altitude_ft: Some(1000),
            ground_speed_kt: None,
            track_deg: None,
            position: Some((-34.9, 138.6)),
            vertical_rate_fpm: None,
            on_ground: Some(false),
        };
        assert_eq!(parse_sbs_line(&format_sbs_line(&rec)).unwrap(), rec);
    }
}
