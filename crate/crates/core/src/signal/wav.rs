//! RIFF/WAVE reader and writer for 16-bit PCM mono.

use std::fs;
use std::path::Path;

use super::{AudioClip, Result, SignalError};

const FORMAT_PCM: u16 = 1;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

fn malformed(msg: impl Into<String>) -> SignalError {
    SignalError::MalformedHeader(msg.into())
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Parses an in-memory WAV file. Samples are `int16 / 32768`.
pub fn wav_decode(bytes: &[u8]) -> Result<AudioClip> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(malformed("missing RIFF/WAVE signature"));
    }
    let mut pos = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| malformed(format!("chunk {:?} overruns file", String::from_utf8_lossy(id))))?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(malformed("fmt chunk shorter than 16 bytes"));
                }
                let mut tag = u16_at(body, 0);
                if tag == FORMAT_EXTENSIBLE && body.len() >= 26 {
                    tag = u16_at(body, 24);
                }
                format = Some((tag, u16_at(body, 2), u32_at(body, 4), u16_at(body, 14)));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // Chunks are word aligned.
        pos = body_end + (size & 1);
    }
    let (tag, channels, sample_rate, bits) = format.ok_or_else(|| malformed("no fmt chunk"))?;
    if tag != FORMAT_PCM {
        return Err(SignalError::UnsupportedEncoding(tag));
    }
    if channels != 1 {
        return Err(SignalError::UnsupportedChannels(channels));
    }
    if bits != 16 {
        return Err(SignalError::UnsupportedBitDepth(bits));
    }
    if sample_rate == 0 {
        return Err(malformed("sample rate is zero"));
    }
    let data = data.ok_or_else(|| malformed("no data chunk"))?;
    if data.len() % 2 != 0 {
        return Err(malformed("data chunk holds a partial sample"));
    }
    let samples = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
        .collect();
    Ok(AudioClip::new(samples, sample_rate))
}

/// Quantizes to int16: `round(x · 32768)` clamped to the int16 range, so
/// every `k / 32768` value survives a write/read cycle exactly.
pub fn quantize_i16(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn wav_encode(clip: &AudioClip) -> Vec<u8> {
    let data_len = clip.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &clip.samples {
        out.extend_from_slice(&quantize_i16(s).to_le_bytes());
    }
    out
}

pub fn wav_read(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| SignalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    wav_decode(&bytes)
}

pub fn wav_write(clip: &AudioClip, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, wav_encode(clip)).map_err(|source| SignalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header_with(tag: u16, channels: u16, bits: u16) -> Vec<u8> {
        let mut b = wav_encode(&AudioClip::new(vec![0.0; 4], 16_000));
        b[20..22].copy_from_slice(&tag.to_le_bytes());
        b[22..24].copy_from_slice(&channels.to_le_bytes());
        b[34..36].copy_from_slice(&bits.to_le_bytes());
        b
    }

    #[test]
    fn rejects_unsupported_layouts() {
        assert!(matches!(
            wav_decode(&header_with(1, 2, 16)),
            Err(SignalError::UnsupportedChannels(2))
        ));
        assert!(matches!(
            wav_decode(&header_with(3, 1, 16)),
            Err(SignalError::UnsupportedEncoding(3))
        ));
        assert!(matches!(
            wav_decode(&header_with(1, 1, 24)),
            Err(SignalError::UnsupportedBitDepth(24))
        ));
        assert!(matches!(
            wav_decode(b"RIFX0000WAVE"),
            Err(SignalError::MalformedHeader(_))
        ));
        let mut truncated = wav_encode(&AudioClip::new(vec![0.5; 8], 16_000));
        truncated.truncate(50);
        assert!(matches!(
            wav_decode(&truncated),
            Err(SignalError::MalformedHeader(_))
        ));
    }

    #[test]
    fn quantization_clamps() {
        assert_eq!(quantize_i16(1.0), 32767);
        assert_eq!(quantize_i16(-2.0), -32768);
        assert_eq!(quantize_i16(-1.0), -32768);
        assert_eq!(quantize_i16(0.5), 16384);
    }

    #[test]
    fn skips_unknown_chunks() {
        let clip = AudioClip::new(vec![0.25, -0.5], 8000);
        let plain = wav_encode(&clip);
        let mut with_list = plain[..36].to_vec();
        with_list.extend_from_slice(b"LIST");
        with_list.extend_from_slice(&3u32.to_le_bytes());
        with_list.extend_from_slice(&[1, 2, 3, 0]);
        with_list.extend_from_slice(&plain[36..]);
        assert_eq!(wav_decode(&with_list).unwrap(), clip);
    }
}
