//! Minimal RIFF/WAVE reader and writer.
//!
//! Reads PCM16/24/32 and IEEE float32, 1-2 channels. Stereo is mixed down
//! as the per-sample mean; integer PCM is scaled by the type's maximum
//! magnitude. Float samples are clamped to [-1, 1] and the clamp count is
//! reported on the clip.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{AudioClip, AudioError};

const FORMAT_PCM: u16 = 1;
const FORMAT_IEEE_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

struct FmtChunk {
    format: u16,
    channels: u16,
    sample_rate: u32,
    bits_per_sample: u16,
}

pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip, AudioError> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let source_id = path.to_string_lossy().into_owned();
    decode_wav(&bytes, source_id)
}

/// Decode an in-memory WAV file (same contract as [`load_wav`]).
pub fn decode_wav_bytes(bytes: &[u8], source_id: impl Into<String>) -> Result<AudioClip, AudioError> {
    decode_wav(bytes, source_id.into())
}

pub(crate) fn decode_wav(bytes: &[u8], source_id: String) -> Result<AudioClip, AudioError> {
    if bytes.len() < 12 {
        return Err(AudioError::CorruptHeader("file shorter than RIFF header".into()));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(AudioError::CorruptHeader("missing RIFF magic".into()));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(AudioError::CorruptHeader("missing WAVE form type".into()));
    }

    let mut fmt: Option<FmtChunk> = None;
    let mut data: Option<&[u8]> = None;
    let mut off = 12usize;
    while off + 8 <= bytes.len() {
        let id = &bytes[off..off + 4];
        let size = u32::from_le_bytes(bytes[off + 4..off + 8].try_into().unwrap()) as usize;
        let body_start = off + 8;
        let body_end = body_start.checked_add(size).ok_or_else(|| {
            AudioError::CorruptHeader("chunk size overflows file offset".into())
        })?;
        if body_end > bytes.len() {
            return Err(AudioError::CorruptHeader(format!(
                "chunk '{}' claims {} bytes past end of file",
                String::from_utf8_lossy(id),
                size
            )));
        }
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(AudioError::CorruptHeader("fmt chunk shorter than 16 bytes".into()));
                }
                fmt = Some(FmtChunk {
                    format: u16::from_le_bytes(body[0..2].try_into().unwrap()),
                    channels: u16::from_le_bytes(body[2..4].try_into().unwrap()),
                    sample_rate: u32::from_le_bytes(body[4..8].try_into().unwrap()),
                    bits_per_sample: u16::from_le_bytes(body[14..16].try_into().unwrap()),
                });
            }
            b"data" => data = Some(body),
            _ => {} // skip LIST, fact, cue, ...
        }
        // chunks are word-aligned
        off = body_end + (size & 1);
    }

    let fmt = fmt.ok_or_else(|| AudioError::CorruptHeader("no fmt chunk".into()))?;
    let data = data.ok_or_else(|| AudioError::CorruptHeader("no data chunk".into()))?;

    if fmt.format == FORMAT_EXTENSIBLE {
        return Err(AudioError::UnsupportedEncoding(
            "WAVE_FORMAT_EXTENSIBLE is not supported".into(),
        ));
    }
    if fmt.format != FORMAT_PCM && fmt.format != FORMAT_IEEE_FLOAT {
        return Err(AudioError::UnsupportedEncoding(format!(
            "format tag {} (only PCM and IEEE float)",
            fmt.format
        )));
    }
    if fmt.channels == 0 || fmt.channels > 2 {
        return Err(AudioError::UnsupportedEncoding(format!(
            "{} channels (only mono or stereo)",
            fmt.channels
        )));
    }
    if fmt.sample_rate == 0 {
        return Err(AudioError::CorruptHeader("zero sample rate".into()));
    }

    let channels = fmt.channels as usize;
    let mut clamped = 0usize;
    let interleaved: Vec<f64> = match (fmt.format, fmt.bits_per_sample) {
        (FORMAT_PCM, 16) => data
            .chunks_exact(2)
            .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0)
            .collect(),
        (FORMAT_PCM, 24) => data
            .chunks_exact(3)
            .map(|b| {
                let v = i32::from_le_bytes([0, b[0], b[1], b[2]]) >> 8;
                v as f64 / 8_388_608.0
            })
            .collect(),
        (FORMAT_PCM, 32) => data
            .chunks_exact(4)
            .map(|b| i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64 / 2_147_483_648.0)
            .collect(),
        (FORMAT_IEEE_FLOAT, 32) => data
            .chunks_exact(4)
            .map(|b| {
                let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;
                if !(-1.0..=1.0).contains(&v) {
                    clamped += 1;
                }
                v.clamp(-1.0, 1.0)
            })
            .collect(),
        (f, bits) => {
            return Err(AudioError::UnsupportedEncoding(format!(
                "format {f} with {bits} bits per sample"
            )))
        }
    };

    if interleaved.is_empty() {
        return Err(AudioError::EmptyAudio);
    }

    let samples: Vec<f64> = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(2)
            .map(|fr| (fr[0] + fr[1]) / 2.0)
            .collect()
    };
    if samples.is_empty() {
        return Err(AudioError::EmptyAudio);
    }

    Ok(AudioClip {
        samples,
        sample_rate_hz: fmt.sample_rate,
        source_id,
        clamped_samples: clamped,
    })
}

/// Write a mono clip as 16-bit PCM.
pub fn write_wav_pcm16(path: impl AsRef<Path>, samples: &[f64], sample_rate_hz: u32) -> Result<(), AudioError> {
    let bytes = encode_wav_pcm16(samples, sample_rate_hz);
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

pub(crate) fn encode_wav_pcm16(samples: &[f64], sample_rate_hz: u32) -> Vec<u8> {
    let data_len = samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&(sample_rate_hz * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits per sample
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}
