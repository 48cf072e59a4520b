//! Mode S CRC-24 (generator 0x1FFF409).

use super::RawFrame;

const GENERATOR: u32 = 0xFFF409;

const TABLE: [u32; 256] = build_table();

const fn build_table() -> [u32; 256] {
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = (i as u32) << 16;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 0x80_0000 != 0 {
                (crc << 1) ^ GENERATOR
            } else {
                crc << 1
            };
            bit += 1;
        }
        table[i] = crc & 0xFF_FFFF;
        i += 1;
    }
    table
}

/// Remainder of `data · x^24` modulo the Mode S generator.
pub fn crc24(data: &[u8]) -> u32 {
    data.iter().fold(0u32, |crc, &b| {
        let idx = ((crc >> 16) as u8 ^ b) as usize;
        ((crc << 8) ^ TABLE[idx]) & 0xFF_FFFF
    })
}

/// True when the trailing 24-bit parity field equals the CRC of the rest.
pub fn verify_crc(raw: &RawFrame) -> bool {
    let bytes = raw.bytes();
    let (data, parity) = bytes.split_at(bytes.len() - 3);
    let transmitted = (parity[0] as u32) << 16 | (parity[1] as u32) << 8 | parity[2] as u32;
    crc24(data) == transmitted
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(hex: &str) -> RawFrame {
        let bytes = (0..hex.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&hex[i..i + 2], 16).unwrap())
            .collect();
        RawFrame::new(bytes, 0.0).unwrap()
    }

    #[test]
    fn all_zero_frame_passes() {
        assert!(verify_crc(&RawFrame::new(vec![0; 14], 0.0).unwrap()));
        assert!(verify_crc(&RawFrame::new(vec![0; 7], 0.0).unwrap()));
    }

    #[test]
    fn published_reference_frames_pass() {
        // Widely circulated DF17 examples (identification and airborne position).
        assert!(verify_crc(&frame("8D4840D6202CC371C32CE0576098")));
        assert!(verify_crc(&frame("8D40621D58C382D690C8AC2863A7")));
    }

    #[test]
    fn corrupted_reference_frame_fails() {
        assert!(!verify_crc(&frame("8D4840D6202CC371C32CE0576099")));
        assert!(!verify_crc(&frame("8D4840D6202CC371C32CE1576098")));
    }
}
