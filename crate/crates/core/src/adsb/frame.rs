//! Typed Mode S frames.

use serde::{Deserialize, Serialize};

use super::altitude::decode_altitude;
use super::cpr::CprFormat;
use super::crc::verify_crc;
use super::{Icao, RawFrame};

/// Mode S identification character set, indexed by 6-bit code. `#` marks
/// codes with no assigned character.
const CHARSET: &[u8; 64] =
    b"#ABCDEFGHIJKLMNOPQRSTUVWXYZ##### ###############0123456789######";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AirbornePositionMsg {
    pub cpr_format: CprFormat,
    pub cpr_lat: u32,
    pub cpr_lon: u32,
    pub altitude_ft: Option<i32>,
    /// Set when the transponder capability field reports "on ground".
    pub surface: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityMsg {
    pub ground_speed_kt: f64,
    /// Track angle, normalized to [0, 360).
    pub heading_deg: f64,
    pub vertical_rate_fpm: Option<i32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentificationMsg {
    pub callsign: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    AirbornePosition(AirbornePositionMsg),
    Velocity(VelocityMsg),
    Identification(IdentificationMsg),
    /// Anything else. `type_code` is set for DF17 frames.
    Opaque { type_code: Option<u8> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSFrame {
    pub df: u8,
    pub icao: Icao,
    pub payload: Payload,
    pub crc_ok: bool,
}

impl ModeSFrame {
    /// DF17 type codes 5–8 are surface position reports.
    pub fn is_surface_report(&self) -> bool {
        matches!(self.payload, Payload::Opaque { type_code: Some(5..=8) })
            || matches!(&self.payload, Payload::AirbornePosition(p) if p.surface)
    }
}

/// Reads `len` bits of the 56-bit ME field starting `shift` bits from the
/// least significant end.
fn bits(me: u64, shift: u32, len: u32) -> u64 {
    (me >> shift) & ((1u64 << len) - 1)
}

/// Classifies and decodes a raw frame. Never fails on well-formed input;
/// unknown content decodes as [`Payload::Opaque`].
pub fn parse_frame(raw: &RawFrame) -> ModeSFrame {
    let b = raw.bytes();
    let df = raw.df();
    let icao = Icao::new((b[1] as u32) << 16 | (b[2] as u32) << 8 | b[3] as u32)
        .expect("three bytes always fit in 24 bits");
    let crc_ok = verify_crc(raw);

    let payload = if df == 17 && raw.is_long() {
        let me = b[4..11].iter().fold(0u64, |acc, &x| acc << 8 | x as u64);
        let capability = b[0] & 0x07;
        decode_me(me, capability)
    } else {
        Payload::Opaque { type_code: None }
    };

    ModeSFrame {
        df,
        icao,
        payload,
        crc_ok,
    }
}

fn decode_me(me: u64, capability: u8) -> Payload {
    let tc = bits(me, 51, 5) as u8;
    let decoded = match tc {
        1..=4 => decode_identification(me).map(Payload::Identification),
        9..=18 => Some(Payload::AirbornePosition(decode_position(me, capability))),
        19 => decode_velocity(me).map(Payload::Velocity),
        _ => None,
    };
    decoded.unwrap_or(Payload::Opaque {
        type_code: Some(tc),
    })
}

fn decode_identification(me: u64) -> Option<IdentificationMsg> {
    let mut callsign = String::with_capacity(8);
    for i in 0..8 {
        let code = bits(me, 42 - 6 * i, 6) as usize;
        let c = CHARSET[code];
        if c == b'#' {
            return None;
        }
        callsign.push(c as char);
    }
    let trimmed = callsign.trim_end().len();
    callsign.truncate(trimmed);
    Some(IdentificationMsg { callsign })
}

fn decode_position(me: u64, capability: u8) -> AirbornePositionMsg {
    let ac12 = bits(me, 36, 12) as u16;
    let altitude_ft = if ac12 == 0 {
        None
    } else {
        decode_altitude(ac12).ok()
    };
    let cpr_format = if bits(me, 34, 1) == 1 {
        CprFormat::Odd
    } else {
        CprFormat::Even
    };
    AirbornePositionMsg {
        cpr_format,
        cpr_lat: bits(me, 17, 17) as u32,
        cpr_lon: bits(me, 0, 17) as u32,
        altitude_ft,
        surface: capability == 4,
    }
}

fn decode_velocity(me: u64) -> Option<VelocityMsg> {
    let subtype = bits(me, 48, 3);
    let scale = match subtype {
        1 => 1.0,
        2 => 4.0,
        _ => return None,
    };
    let v_ew = bits(me, 32, 10);
    let v_ns = bits(me, 21, 10);
    if v_ew == 0 || v_ns == 0 {
        return None;
    }
    let mut vx = (v_ew - 1) as f64 * scale;
    if bits(me, 42, 1) == 1 {
        vx = -vx;
    }
    let mut vy = (v_ns - 1) as f64 * scale;
    if bits(me, 31, 1) == 1 {
        vy = -vy;
    }
    let ground_speed_kt = vx.hypot(vy);
    let mut heading_deg = vx.atan2(vy).to_degrees();
    if heading_deg < 0.0 {
        heading_deg += 360.0;
    }
    if heading_deg >= 360.0 {
        heading_deg -= 360.0;
    }

    let vr = bits(me, 10, 9);
    let vertical_rate_fpm = (vr != 0).then(|| {
        let rate = (vr as i32 - 1) * 64;
        if bits(me, 19, 1) == 1 {
            -rate
        } else {
            rate
        }
    });

    Some(VelocityMsg {
        ground_speed_kt,
        heading_deg,
        vertical_rate_fpm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adsb::parse_stream_line;

    fn parse(line: &str) -> ModeSFrame {
        parse_frame(&parse_stream_line(line, 0.0).unwrap())
    }

    #[test]
    fn reference_identification() {
        let f = parse("*8D4840D6202CC371C32CE0576098;");
        assert_eq!(f.df, 17);
        assert_eq!(f.icao.to_string(), "4840D6");
        assert!(f.crc_ok);
        assert_eq!(
            f.payload,
            Payload::Identification(IdentificationMsg {
                callsign: "KLM1023".into()
            })
        );
    }

    #[test]
    fn reference_position() {
        let f = parse("*8D40621D58C382D690C8AC2863A7;");
        match f.payload {
            Payload::AirbornePosition(p) => {
                assert_eq!(p.altitude_ft, Some(38000));
                assert_eq!(p.cpr_format, CprFormat::Even);
                assert_eq!((p.cpr_lat, p.cpr_lon), (93000, 51372));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reference_velocity() {
        let f = parse("*8D485020994409940838175B284F;");
        match f.payload {
            Payload::Velocity(v) => {
                assert!((v.ground_speed_kt - 159.2).abs() < 0.1);
                assert!((v.heading_deg - 182.88).abs() < 0.01);
                assert_eq!(v.vertical_rate_fpm, Some(-832));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn short_frame_is_opaque_with_icao() {
        let f = parse("*5D4840D6000000;");
        assert_eq!(f.df, 11);
        assert_eq!(f.icao.to_string(), "4840D6");
        assert_eq!(f.payload, Payload::Opaque { type_code: None });
    }

    #[test]
    fn surface_type_codes_are_opaque() {
        // ME type code 6 in the first five bits.
        let mut bytes = vec![0u8; 14];
        bytes[0] = 0x8D;
        bytes[4] = 6 << 3;
        let f = parse_frame(&RawFrame::new(bytes, 0.0).unwrap());
        assert_eq!(f.payload, Payload::Opaque { type_code: Some(6) });
        assert!(f.is_surface_report());
    }
}
