//! Mode S extended squitter decoding.
//!
//! Frames arrive as AVR text lines (`*<hex>;`) or pre-decoded SBS rows. The
//! decoder validates CRC-24 parity, classifies DF17 payloads by type code and
//! recovers position (CPR), altitude, velocity and identification.

pub mod altitude;
pub mod avr;
pub mod cpr;
pub mod crc;
pub mod frame;
pub mod sbs;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use altitude::decode_altitude;
pub use avr::{parse_stream_line, serialize_avr};
pub use cpr::{decode_cpr_global, decode_cpr_local, nl, CprFormat, PAIRING_WINDOW_S};
pub use crc::{crc24, verify_crc};
pub use frame::{
    parse_frame, AirbornePositionMsg, IdentificationMsg, ModeSFrame, Payload, VelocityMsg,
};
pub use sbs::{parse_sbs_line, SbsRecord};

/// Short (56-bit) frame length in bytes.
pub const SHORT_FRAME_BYTES: usize = 7;
/// Long (112-bit) frame length in bytes.
pub const LONG_FRAME_BYTES: usize = 14;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DecodeError {
    #[error("frame must be 7 or 14 bytes, got {0}")]
    BadLength(usize),

    #[error("malformed AVR line: {0}")]
    MalformedLine(String),

    #[error("malformed SBS line: {0}")]
    MalformedSbs(String),

    #[error("altitude uses Gillham (Q=0) coding, which is not supported")]
    UndecodableAltitude,

    #[error("even/odd pair straddles a latitude zone boundary")]
    ZoneMismatch,

    #[error("even/odd frames are {0:.3} s apart, outside the pairing window")]
    StalePair(f64),

    #[error("invalid ICAO address {0:?}")]
    BadIcao(String),
}

/// 24-bit ICAO aircraft address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Icao(u32);

impl Icao {
    /// The placeholder address used to label silence recordings.
    pub const SILENCE: Icao = Icao(0);

    pub fn new(addr: u32) -> Result<Self, DecodeError> {
        if addr > 0xFF_FFFF {
            return Err(DecodeError::BadIcao(format!("{addr:#x}")));
        }
        Ok(Icao(addr))
    }

    pub fn value(self) -> u32 {
        self.0
    }
}

impl fmt::Display for Icao {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:06X}", self.0)
    }
}

impl FromStr for Icao {
    type Err = DecodeError;

    /// Accepts exactly six hex digits; lowercase input is normalized.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != 6 || !s.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(DecodeError::BadIcao(s.to_string()));
        }
        u32::from_str_radix(s, 16)
            .map(Icao)
            .map_err(|_| DecodeError::BadIcao(s.to_string()))
    }
}

impl Serialize for Icao {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Icao {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// An undecoded Mode S frame with its reception time.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFrame {
    bytes: Vec<u8>,
    /// Monotonic reception time in seconds.
    pub received_at: f64,
}

impl RawFrame {
    pub fn new(bytes: Vec<u8>, received_at: f64) -> Result<Self, DecodeError> {
        match bytes.len() {
            SHORT_FRAME_BYTES | LONG_FRAME_BYTES => Ok(RawFrame { bytes, received_at }),
            n => Err(DecodeError::BadLength(n)),
        }
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn is_long(&self) -> bool {
        self.bytes.len() == LONG_FRAME_BYTES
    }

    /// Downlink format: the first five bits.
    pub fn df(&self) -> u8 {
        self.bytes[0] >> 3
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icao_display_is_uppercase_hex6() {
        let icao = Icao::new(0x7c7cd0).unwrap();
        assert_eq!(icao.to_string(), "7C7CD0");
        assert_eq!(Icao::SILENCE.to_string(), "000000");
        assert_eq!("7c7cd0".parse::<Icao>().unwrap(), icao);
    }

    #[test]
    fn icao_rejects_bad_input() {
        assert!("7C7CD".parse::<Icao>().is_err());
        assert!("7C7CDG".parse::<Icao>().is_err());
        assert!(Icao::new(0x1_000_000).is_err());
    }

    #[test]
    fn raw_frame_length_is_checked() {
        assert!(RawFrame::new(vec![0; 7], 0.0).is_ok());
        assert!(RawFrame::new(vec![0; 14], 0.0).is_ok());
        assert_eq!(
            RawFrame::new(vec![0; 8], 0.0),
            Err(DecodeError::BadLength(8))
        );
    }

    #[test]
    fn df_from_first_byte() {
        let mut bytes = vec![0u8; 14];
        bytes[0] = 0x8D;
        assert_eq!(RawFrame::new(bytes, 0.0).unwrap().df(), 17);
    }
}
