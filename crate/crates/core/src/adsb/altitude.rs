//! 12-bit airborne altitude field (AC12).

use super::DecodeError;

/// Q-bit mask within the 12-bit altitude field.
const Q_BIT: u16 = 0x010;

/// Decodes an AC12 field with 25 ft resolution.
///
/// `ac12` holds the field right-aligned. A zero field means "no altitude" and
/// is handled by the caller; here it decodes like any other Q=0 value.
pub fn decode_altitude(ac12: u16) -> Result<i32, DecodeError> {
    let ac12 = ac12 & 0xFFF;
    if ac12 & Q_BIT == 0 {
        return Err(DecodeError::UndecodableAltitude);
    }
    let n = ((ac12 & 0xFE0) >> 1) | (ac12 & 0x00F);
    Ok(25 * n as i32 - 1000)
}

/// Inverse of [`decode_altitude`] for Q=1 encodings. Returns `None` when the
/// value is not a multiple of 25 ft or falls outside [-1000, 50175].
pub fn encode_altitude(feet: i32) -> Option<u16> {
    if (feet + 1000) % 25 != 0 || !(-1000..=50175).contains(&feet) {
        return None;
    }
    let n = ((feet + 1000) / 25) as u16;
    Some(((n & 0x7F0) << 1) | Q_BIT | (n & 0x00F))
}
