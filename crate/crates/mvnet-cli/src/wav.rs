//! Strict WAV I/O: RIFF/WAVE, PCM 16-bit, mono, 16 kHz. Anything else is
//! rejected with the offending field named, since silently resampling or
//! downmixing would corrupt every metric downstream.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::fail::{input, Fail};

pub const SAMPLE_RATE: u32 = 16_000;
const SCALE: f32 = 32768.0;

fn rd_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn rd_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

/// Reads a waveform, scaling samples to `[-1, 1)` by `1/32768`.
pub fn read(path: &Path) -> Result<Vec<f32>, Fail> {
    let bytes = fs::read(path)
        .map_err(|e| input(format!("cannot read {}: {e}", path.display())))?;
    let bad = |what: &str| input(format!("{}: {what}", path.display()));
    if bytes.len() < 44 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("not a RIFF/WAVE file"));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    let mut at = 12;
    while at + 8 <= bytes.len() {
        let id = &bytes[at..at + 4];
        let len = rd_u32(&bytes, at + 4) as usize;
        let body = at + 8;
        if body + len > bytes.len() {
            return Err(bad("truncated chunk"));
        }
        match id {
            b"fmt " => {
                if len < 16 {
                    return Err(bad("fmt chunk too short"));
                }
                fmt = Some((
                    rd_u16(&bytes, body),
                    rd_u16(&bytes, body + 2),
                    rd_u32(&bytes, body + 4),
                    rd_u16(&bytes, body + 14),
                ));
            }
            b"data" => data = Some(&bytes[body..body + len]),
            _ => {} // LIST, fact, cue: ignored
        }
        at = body + len + (len & 1); // chunks are word-aligned
    }

    let (tag, channels, rate, bits) = fmt.ok_or_else(|| bad("missing fmt chunk"))?;
    if tag != 1 {
        return Err(bad(&format!("format tag {tag}, expected 1 (PCM)")));
    }
    if channels != 1 {
        return Err(bad(&format!("{channels} channels, expected mono")));
    }
    if rate != SAMPLE_RATE {
        return Err(bad(&format!("sample rate {rate}, expected {SAMPLE_RATE}")));
    }
    if bits != 16 {
        return Err(bad(&format!("{bits} bits per sample, expected 16")));
    }
    let data = data.ok_or_else(|| bad("missing data chunk"))?;
    if data.len() % 2 != 0 {
        return Err(bad("odd data chunk length"));
    }
    Ok(data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / SCALE)
        .collect())
}

/// Writes a waveform as PCM16 with round-to-nearest-even quantisation,
/// the exact inverse of [`read`] for in-range values. The file lands via
/// a temp-and-rename so concurrent readers never see a partial write.
pub fn write(path: &Path, samples: &[f32]) -> Result<(), Fail> {
    let data_len = samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&SAMPLE_RATE.to_le_bytes());
    out.extend_from_slice(&(SAMPLE_RATE * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in samples {
        let q = (s * SCALE).round_ties_even().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    atomic_write(path, &out)
}

/// Write-to-temp-then-rename within the destination directory.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), Fail> {
    let err = |e: std::io::Error| input(format!("cannot write {}: {e}", path.display()));
    let tmp = path.with_extension("tmp~");
    let mut f = fs::File::create(&tmp).map_err(err)?;
    f.write_all(bytes).map_err(err)?;
    f.sync_all().ok();
    drop(f);
    fs::rename(&tmp, path).map_err(err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_error_is_below_one_quantum() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.wav");
        let w: Vec<f32> = (0..500)
            .map(|i| libm::sinf(i as f32 * 0.13) * 0.9)
            .collect();
        write(&p, &w).unwrap();
        let r = read(&p).unwrap();
        assert_eq!(r.len(), w.len());
        for (a, b) in w.iter().zip(&r) {
            assert!((a - b).abs() <= 1.0 / 32768.0, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_maps_to_integer_zero_and_back() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.wav");
        write(&p, &[0.0, 1.0, -1.0]).unwrap();
        let r = read(&p).unwrap();
        assert_eq!(r[0], 0.0);
        assert_eq!(r[1], 32767.0 / 32768.0); // +1.0 clamps to i16::MAX
        assert_eq!(r[2], -1.0);
    }

    #[test]
    fn quantisation_is_exactly_invertible() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.wav");
        let w: Vec<f32> = (-8i32..8).map(|k| k as f32 * 1000.0 / 32768.0).collect();
        write(&p, &w).unwrap();
        assert_eq!(read(&p).unwrap(), w);
    }

    #[test]
    fn wrong_rate_and_channels_are_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.wav");
        // Hand-build a 44.1 kHz stereo header.
        let mut b = Vec::new();
        b.extend_from_slice(b"RIFF");
        b.extend_from_slice(&40u32.to_le_bytes());
        b.extend_from_slice(b"WAVEfmt ");
        b.extend_from_slice(&16u32.to_le_bytes());
        b.extend_from_slice(&1u16.to_le_bytes());
        b.extend_from_slice(&2u16.to_le_bytes());
        b.extend_from_slice(&44100u32.to_le_bytes());
        b.extend_from_slice(&(44100u32 * 4).to_le_bytes());
        b.extend_from_slice(&4u16.to_le_bytes());
        b.extend_from_slice(&16u16.to_le_bytes());
        b.extend_from_slice(b"data");
        b.extend_from_slice(&0u32.to_le_bytes());
        std::fs::write(&p, &b).unwrap();
        let msg = read(&p).unwrap_err().to_string();
        assert!(msg.contains("channels"), "got: {msg}");
    }

    #[test]
    fn garbage_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("junk.wav");
        std::fs::write(&p, b"not audio").unwrap();
        assert!(read(&p).is_err());
    }
}
