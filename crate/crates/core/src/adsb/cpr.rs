//! Compact Position Reporting, airborne variant.
//!
//! - NZ = 15 latitude zones per hemisphere quarter; even zones are 360/60°,
//!   odd zones 360/59°.
//! - Coordinates are quantized to 17 bits.
//! - Global decode pairs an even and an odd frame received within
//!   [`PAIRING_WINDOW_S`]; local decode resolves one frame against a
//!   reference position within half a zone (about 180 NM).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{AirbornePositionMsg, DecodeError};

const NZ: f64 = 15.0;
const CPR_SCALE: f64 = 131_072.0; // 2^17

/// Maximum age difference between paired even and odd frames.
pub const PAIRING_WINDOW_S: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CprFormat {
    Even,
    Odd,
}

impl CprFormat {
    fn index(self) -> f64 {
        match self {
            CprFormat::Even => 0.0,
            CprFormat::Odd => 1.0,
        }
    }
}

/// Number of longitude zones at a latitude.
pub fn nl(lat: f64) -> u32 {
    let lat = lat.abs();
    if lat == 0.0 {
        return 59;
    }
    if lat >= 87.0 {
        return if lat > 87.0 { 1 } else { 2 };
    }
    let a = 1.0 - (PI / (2.0 * NZ)).cos();
    let b = (PI / 180.0 * lat).cos().powi(2);
    (2.0 * PI / (1.0 - a / b).acos()).floor() as u32
}

/// Euclidean remainder, always in `[0, y)`.
fn modulo(x: f64, y: f64) -> f64 {
    x - y * (x / y).floor()
}

fn zone_height(format: CprFormat) -> f64 {
    360.0 / (4.0 * NZ - format.index())
}

fn wrap_lon(lon: f64) -> f64 {
    let wrapped = modulo(lon + 180.0, 360.0) - 180.0;
    if wrapped >= 180.0 {
        wrapped - 360.0
    } else {
        wrapped
    }
}

/// Globally unambiguous decode of an even/odd pair.
///
/// `newest` selects which frame's longitude zone resolves the final
/// position; the returned latitude belongs to that frame as well.
pub fn decode_cpr_global(
    even: &AirbornePositionMsg,
    odd: &AirbornePositionMsg,
    newest: CprFormat,
) -> Result<(f64, f64), DecodeError> {
    let lat_e_cpr = even.cpr_lat as f64 / CPR_SCALE;
    let lon_e_cpr = even.cpr_lon as f64 / CPR_SCALE;
    let lat_o_cpr = odd.cpr_lat as f64 / CPR_SCALE;
    let lon_o_cpr = odd.cpr_lon as f64 / CPR_SCALE;

    let j = (59.0 * lat_e_cpr - 60.0 * lat_o_cpr + 0.5).floor();

    let mut lat_e = zone_height(CprFormat::Even) * (modulo(j, 60.0) + lat_e_cpr);
    let mut lat_o = zone_height(CprFormat::Odd) * (modulo(j, 59.0) + lat_o_cpr);
    if lat_e >= 270.0 {
        lat_e -= 360.0;
    }
    if lat_o >= 270.0 {
        lat_o -= 360.0;
    }
    if !(-90.0..=90.0).contains(&lat_e) || !(-90.0..=90.0).contains(&lat_o) {
        return Err(DecodeError::ZoneMismatch);
    }

    let zones = nl(lat_e);
    if zones != nl(lat_o) {
        return Err(DecodeError::ZoneMismatch);
    }

    let m = (lon_e_cpr * (zones as f64 - 1.0) - lon_o_cpr * zones as f64 + 0.5).floor();
    let (lat, lon_cpr, n) = match newest {
        CprFormat::Even => (lat_e, lon_e_cpr, zones.max(1)),
        CprFormat::Odd => (lat_o, lon_o_cpr, (zones.max(1) - 1).max(1)),
    };
    let dlon = 360.0 / n as f64;
    let lon = dlon * (modulo(m, n as f64) + lon_cpr);
    Ok((lat, wrap_lon(lon)))
}

/// Global decode with the pairing-window check applied to reception times.
pub fn decode_cpr_global_timed(
    even: &AirbornePositionMsg,
    t_even: f64,
    odd: &AirbornePositionMsg,
    t_odd: f64,
) -> Result<(f64, f64), DecodeError> {
    let gap = (t_even - t_odd).abs();
    if gap > PAIRING_WINDOW_S {
        return Err(DecodeError::StalePair(gap));
    }
    let newest = if t_even >= t_odd {
        CprFormat::Even
    } else {
        CprFormat::Odd
    };
    decode_cpr_global(even, odd, newest)
}

/// Single-frame decode: picks the candidate nearest `reference`.
///
/// Correct only when the true position lies within half a zone of the
/// reference; beyond that the neighbouring-zone candidate comes back.
pub fn decode_cpr_local(msg: &AirbornePositionMsg, reference: (f64, f64)) -> (f64, f64) {
    let (ref_lat, ref_lon) = reference;
    let dlat = zone_height(msg.cpr_format);
    let lat_cpr = msg.cpr_lat as f64 / CPR_SCALE;
    let lon_cpr = msg.cpr_lon as f64 / CPR_SCALE;

    let j = (ref_lat / dlat).floor() + (modulo(ref_lat, dlat) / dlat - lat_cpr + 0.5).floor();
    let lat = dlat * (j + lat_cpr);

    let n = (nl(lat) as f64 - msg.cpr_format.index()).max(1.0);
    let dlon = 360.0 / n;
    let m = (ref_lon / dlon).floor() + (modulo(ref_lon, dlon) / dlon - lon_cpr + 0.5).floor();
    let lon = dlon * (m + lon_cpr);
    (lat, wrap_lon(lon))
}

/// CPR-encodes a position. Latitude must satisfy |lat| < 87.
pub fn encode_cpr(lat: f64, lon: f64, format: CprFormat) -> (u32, u32) {
    let i = format.index();
    let dlat = zone_height(format);
    let yz = (CPR_SCALE * modulo(lat, dlat) / dlat + 0.5).floor();
    let rlat = dlat * (yz / CPR_SCALE + (lat / dlat).floor());
    let dlon = 360.0 / (nl(rlat) as f64 - i).max(1.0);
    let xz = (CPR_SCALE * modulo(lon, dlon) / dlon + 0.5).floor();
    ((yz as u32) & 0x1FFFF, (xz as u32) & 0x1FFFF)
}
