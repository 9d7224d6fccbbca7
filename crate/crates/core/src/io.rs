//! Signal input and output: MIT-BIH format 212 payloads and one-column CSV.
//!
//! Format 212 packs two 12-bit two's-complement samples into three bytes:
//!
//! ```text
//! byte0 = s1[7:0]
//! byte1 = s2[11:8] << 4 | s1[11:8]
//! byte2 = s2[7:0]
//! ```
//!
//! Multi-channel records interleave samples, so with two channels each
//! group holds one sample per channel.

use crate::error::{invalid, Error, Result};
use crate::signal::{EcgSignal, DEFAULT_RESOLUTION_BITS};

/// Decode a format-212 byte stream into the raw interleaved sample flow.
pub fn decode_212(bytes: &[u8]) -> Result<Vec<i16>> {
    if !bytes.len().is_multiple_of(3) {
        let offset = bytes.len() - bytes.len() % 3;
        return Err(Error::Framing {
            offset,
            reason: format!("truncated group: {} trailing bytes", bytes.len() % 3),
        });
    }
    let mut out = Vec::with_capacity(bytes.len() / 3 * 2);
    for g in bytes.chunks_exact(3) {
        let s1 = (g[0] as u16) | (((g[1] & 0x0F) as u16) << 8);
        let s2 = (g[2] as u16) | (((g[1] >> 4) as u16) << 8);
        out.push(sign_extend_12(s1));
        out.push(sign_extend_12(s2));
    }
    Ok(out)
}

/// Encode a sample flow as format 212. An odd-length flow is padded with a
/// trailing zero sample. Values outside the 12-bit range are truncated to
/// their low 12 bits.
pub fn encode_212(samples: &[i16]) -> Vec<u8> {
    let mut out = Vec::with_capacity(samples.len().div_ceil(2) * 3);
    for pair in samples.chunks(2) {
        let s1 = pair[0] as u16 & 0x0FFF;
        let s2 = pair.get(1).map_or(0, |&s| s as u16 & 0x0FFF);
        out.push((s1 & 0xFF) as u8);
        out.push((((s2 >> 8) << 4) | (s1 >> 8)) as u8);
        out.push((s2 & 0xFF) as u8);
    }
    out
}

fn sign_extend_12(v: u16) -> i16 {
    ((v << 4) as i16) >> 4
}

/// Read a format-212 payload with `channels` interleaved signals (1 or 2).
pub fn read_mitbih_212(bytes: &[u8], channels: usize, sampling_rate_hz: f64) -> Result<Vec<EcgSignal>> {
    if !(1..=2).contains(&channels) {
        return Err(invalid(format!("channels must be 1 or 2, got {channels}")));
    }
    let flow = decode_212(bytes)?;
    if flow.is_empty() {
        return Err(Error::InsufficientData("empty format-212 stream".into()));
    }
    (0..channels)
        .map(|c| {
            let samples = flow.iter().skip(c).step_by(channels).map(|&s| f64::from(s)).collect();
            EcgSignal::new(samples, sampling_rate_hz, DEFAULT_RESOLUTION_BITS)
        })
        .collect()
}

/// Parse one numeric value per line. A non-numeric first line is taken as a
/// header; blank lines are skipped. Line numbers in errors are 1-based.
pub fn read_csv(text: &str, sampling_rate_hz: f64) -> Result<EcgSignal> {
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let field = line.split(',').next().unwrap_or("").trim();
        if field.is_empty() {
            continue;
        }
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => samples.push(v),
            Ok(_) => {
                return Err(Error::Parse { line: i + 1, reason: format!("non-finite value {field:?}") })
            }
            Err(_) if i == 0 => continue,
            Err(e) => return Err(Error::Parse { line: i + 1, reason: format!("{field:?}: {e}") }),
        }
    }
    if samples.is_empty() {
        return Err(Error::InsufficientData("csv contains no samples".into()));
    }
    EcgSignal::new(samples, sampling_rate_hz, DEFAULT_RESOLUTION_BITS)
}

/// Read beat locations from an MIT-format annotation file (`.atr`).
///
/// Each entry is a little-endian 16-bit word: 6-bit code, 10-bit time
/// increment. Codes 59..=63 are pseudo-annotations (long skip, num, sub,
/// chan, aux). Only beat codes are returned.
pub fn read_mit_annotations(bytes: &[u8]) -> Result<Vec<usize>> {
    let word = |at: usize| -> Result<u16> {
        bytes
            .get(at..at + 2)
            .map(|b| u16::from_le_bytes([b[0], b[1]]))
            .ok_or_else(|| Error::Framing { offset: at, reason: "truncated annotation word".into() })
    };
    let mut pos = 0;
    let mut time = 0usize;
    let mut beats = Vec::new();
    while pos + 1 < bytes.len() {
        let w = word(pos)?;
        pos += 2;
        let (code, value) = (w >> 10, (w & 0x3FF) as usize);
        match code {
            0 if value == 0 => break,
            59 => {
                // 32-bit interval, high word first
                let hi = word(pos)? as u32;
                let lo = word(pos + 2)? as u32;
                pos += 4;
                time = time
                    .checked_add_signed(((hi << 16) | lo) as i32 as isize)
                    .ok_or_else(|| Error::Framing { offset: pos, reason: "negative annotation time".into() })?;
            }
            60..=62 => {}
            63 => pos += value + (value & 1),
            _ => {
                time += value;
                if is_beat(code) {
                    beats.push(time);
                }
            }
        }
    }
    Ok(beats)
}

fn is_beat(code: u16) -> bool {
    matches!(code, 1..=13 | 25 | 30 | 34 | 35 | 37 | 38 | 41)
}

/// One sample per line, LF terminated, shortest round-tripping decimal form.
pub fn write_csv(samples: &[f64]) -> String {
    let mut out = String::with_capacity(samples.len() * 10);
    for v in samples {
        out.push_str(&v.to_string());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decodes_hand_packed_group() {
        // 1000 = 0x3E8, 999 = 0x3E7
        assert_eq!(decode_212(&[0xE8, 0x33, 0xE7]).unwrap(), vec![1000, 999]);
        assert_eq!(decode_212(&[0, 0, 0]).unwrap(), vec![0, 0]);
        assert_eq!(decode_212(&[0xFF, 0xFF, 0xFF]).unwrap(), vec![-1, -1]);
        // -2048 = 0x800, 2047 = 0x7FF
        assert_eq!(decode_212(&[0x00, 0x78, 0xFF]).unwrap(), vec![-2048, 2047]);
    }

    #[test]
    fn truncated_stream_reports_offset() {
        match decode_212(&[1, 2, 3, 4, 5]) {
            Err(Error::Framing { offset, .. }) => assert_eq!(offset, 3),
            other => panic!("expected framing error, got {other:?}"),
        }
    }

    #[test]
    fn two_channels_deinterleave() {
        let bytes = encode_212(&[10, -20, 11, -21, 12, -22]);
        let sigs = read_mitbih_212(&bytes, 2, 360.0).unwrap();
        assert_eq!(sigs[0].samples(), &[10.0, 11.0, 12.0]);
        assert_eq!(sigs[1].samples(), &[-20.0, -21.0, -22.0]);
        let one = read_mitbih_212(&bytes, 1, 360.0).unwrap();
        assert_eq!(one[0].len(), 6);
        assert!(read_mitbih_212(&bytes, 3, 360.0).is_err());
    }

    #[test]
    fn csv_basic() {
        let s = read_csv("1.0\n2.0\n3.0", 360.0).unwrap();
        assert_eq!(s.samples(), &[1.0, 2.0, 3.0]);
        assert_eq!(s.sampling_rate_hz(), 360.0);
    }

    #[test]
    fn csv_header_and_crlf() {
        let s = read_csv("mv\r\n1.5\r\n-2\r\n", 250.0).unwrap();
        assert_eq!(s.samples(), &[1.5, -2.0]);
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(read_csv("", 360.0), Err(Error::InsufficientData(_))));
        match read_csv("1.0\nxyz\n", 360.0) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn annotation_words() {
        let w = |code: u16, t: u16| ((code << 10) | t).to_le_bytes();
        let mut b = Vec::new();
        b.extend(w(1, 100)); // normal beat at 100
        b.extend(w(28, 5)); // rhythm change, not a beat
        b.extend(w(63, 3)); // aux of 3 bytes, padded to 4
        b.extend([b'(', b'N', 0, 0]);
        b.extend(w(5, 200)); // PVC at 305
        b.extend(w(59, 0)); // skip 70000
        b.extend(0x0001u16.to_le_bytes());
        b.extend(0x1170u16.to_le_bytes());
        b.extend(w(1, 1)); // beat at 70306
        b.extend(w(0, 0));
        assert_eq!(read_mit_annotations(&b).unwrap(), vec![100, 305, 70306]);
        assert!(matches!(read_mit_annotations(&b[..16]), Err(Error::Framing { .. })));
    }

    proptest! {
        #[test]
        fn bytes_round_trip(groups in prop::collection::vec(any::<[u8; 3]>(), 0..200)) {
            let bytes: Vec<u8> = groups.concat();
            let flow = decode_212(&bytes).unwrap();
            prop_assert_eq!(encode_212(&flow), bytes);
        }

        #[test]
        fn csv_round_trip(x in prop::collection::vec(-1e6f64..1e6, 1..100)) {
            let s = read_csv(&write_csv(&x), 360.0).unwrap();
            prop_assert_eq!(s.samples(), &x[..]);
        }
    }
}
