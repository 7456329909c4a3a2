//! Minimal RIFF/WAVE reader and writer: 16-bit PCM and 32-bit IEEE float,
//! one or two channels.

use std::path::Path;

use super::Waveform;
use crate::error::{Error, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

struct Format {
    tag: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

/// Decodes WAV bytes into a mono waveform. Stereo is averaged; 16-bit PCM is
/// scaled by 1/32768.
pub fn decode(bytes: &[u8]) -> Result<Waveform> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::malformed("not a RIFF/WAVE file"));
    }
    let mut fmt: Option<Format> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::malformed("chunk extends past end of file"))?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(Error::malformed("fmt chunk too short"));
                }
                let mut tag = u16_at(body, 0);
                if tag == FORMAT_EXTENSIBLE {
                    if body.len() < 26 {
                        return Err(Error::malformed("extensible fmt chunk too short"));
                    }
                    tag = u16_at(body, 24);
                }
                fmt = Some(Format {
                    tag,
                    channels: u16_at(body, 2),
                    sample_rate: u32_at(body, 4),
                    bits: u16_at(body, 14),
                });
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos = body_end + (size & 1);
    }
    let fmt = fmt.ok_or_else(|| Error::malformed("missing fmt chunk"))?;
    let data = data.ok_or_else(|| Error::malformed("missing data chunk"))?;
    if !(1..=2).contains(&fmt.channels) {
        return Err(Error::Unsupported(format!("{} channels", fmt.channels)));
    }
    if fmt.sample_rate == 0 {
        return Err(Error::malformed("zero sample rate"));
    }
    let channels = fmt.channels as usize;
    let interleaved: Vec<f32> = match (fmt.tag, fmt.bits) {
        (FORMAT_PCM, 16) => data
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32768.0)
            .collect(),
        (FORMAT_FLOAT, 32) => data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
        (tag, bits) => {
            return Err(Error::Unsupported(format!(
                "codec tag {tag} with {bits} bits per sample"
            )))
        }
    };
    let samples: Vec<f32> = if channels == 2 {
        interleaved
            .chunks_exact(2)
            .map(|f| 0.5 * (f[0] + f[1]))
            .collect()
    } else {
        interleaved
    };
    if samples.is_empty() {
        return Err(Error::Empty("WAV file has no audio frames".into()));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("WAV sample".into()));
    }
    Ok(Waveform::new(samples, fmt.sample_rate))
}

pub fn load_wav(path: &Path) -> Result<Waveform> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

fn header(channels: u16, rate: u32, tag: u16, bits: u16, data_len: usize) -> Vec<u8> {
    let block = channels as u32 * bits as u32 / 8;
    let mut h = Vec::with_capacity(44);
    h.extend_from_slice(b"RIFF");
    h.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    h.extend_from_slice(b"WAVEfmt ");
    h.extend_from_slice(&16u32.to_le_bytes());
    h.extend_from_slice(&tag.to_le_bytes());
    h.extend_from_slice(&channels.to_le_bytes());
    h.extend_from_slice(&rate.to_le_bytes());
    h.extend_from_slice(&(rate * block).to_le_bytes());
    h.extend_from_slice(&(block as u16).to_le_bytes());
    h.extend_from_slice(&bits.to_le_bytes());
    h.extend_from_slice(b"data");
    h.extend_from_slice(&(data_len as u32).to_le_bytes());
    h
}

/// Encodes mono 16-bit PCM; samples are clamped to the representable range.
pub fn encode_pcm16(w: &Waveform) -> Vec<u8> {
    let mut out = header(1, w.sample_rate, FORMAT_PCM, 16, w.samples.len() * 2);
    for &s in &w.samples {
        let q = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

/// Encodes interleaved stereo 16-bit PCM from two equal-length channels.
pub fn encode_pcm16_stereo(left: &[f32], right: &[f32], sample_rate: u32) -> Vec<u8> {
    let mut out = header(2, sample_rate, FORMAT_PCM, 16, left.len() * 4);
    for (&l, &r) in left.iter().zip(right) {
        for s in [l, r] {
            let q = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
            out.extend_from_slice(&q.to_le_bytes());
        }
    }
    out
}

pub fn encode_f32(w: &Waveform) -> Vec<u8> {
    let mut out = header(1, w.sample_rate, FORMAT_FLOAT, 32, w.samples.len() * 4);
    for &s in &w.samples {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

pub fn write_wav_pcm16(path: &Path, w: &Waveform) -> Result<()> {
    std::fs::write(path, encode_pcm16(w)).map_err(|e| Error::io(path, e))
}

pub fn write_wav_f32(path: &Path, w: &Waveform) -> Result<()> {
    std::fs::write(path, encode_f32(w)).map_err(|e| Error::io(path, e))
}
