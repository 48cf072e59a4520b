//! AVR text format: `*<hex>;` with 14 or 28 hex digits.

use super::{DecodeError, RawFrame};

pub fn parse_stream_line(line: &str, received_at: f64) -> Result<RawFrame, DecodeError> {
    let line = line.trim();
    let hex = line
        .strip_prefix('*')
        .and_then(|rest| rest.strip_suffix(';'))
        .ok_or_else(|| DecodeError::MalformedLine(format!("missing '*'/';' sentinels: {line:?}")))?;

    if hex.len() % 2 != 0 {
        return Err(DecodeError::MalformedLine(format!(
            "odd hex length {}",
            hex.len()
        )));
    }
    if hex.len() != 14 && hex.len() != 28 {
        return Err(DecodeError::MalformedLine(format!(
            "expected 14 or 28 hex digits, got {}",
            hex.len()
        )));
    }
    let bytes = (0..hex.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&hex[i..i + 2], 16))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| DecodeError::MalformedLine(format!("non-hex payload {hex:?}")))?;
    RawFrame::new(bytes, received_at)
}

pub fn serialize_avr(frame: &RawFrame) -> String {
    let mut out = String::with_capacity(frame.bytes().len() * 2 + 2);
    out.push('*');
    for b in frame.bytes() {
        out.push_str(&format!("{b:02X}"));
    }
    out.push(';');
    out
}
