//! Audio decoding, resampling, and framing.
//!
//! Everything downstream assumes the canonical form produced here: mono
//! float samples in [-1, 1] at 44100 Hz, cut into 1024-sample windows with a
//! 512-sample hop.

mod resample;
mod wav;

pub use resample::resample;
pub use wav::{decode_wav_bytes, load_wav, write_wav_pcm16};

use thiserror::Error;

use crate::{HOP_LEN, WINDOW_LEN};

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("audio stream has no samples")]
    EmptyAudio,
    #[error("clip too short: {got} samples, need at least {need}")]
    TooShort { got: usize, need: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A mono audio clip with samples normalized to [-1, 1].
#[derive(Debug, Clone)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
    pub source_id: String,
    /// How many decoded samples fell outside [-1, 1] and were clamped.
    pub clamped_samples: usize,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32, source_id: impl Into<String>) -> Self {
        assert!(sample_rate_hz > 0, "sample rate must be positive");
        Self {
            samples,
            sample_rate_hz,
            source_id: source_id.into(),
            clamped_samples: 0,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

/// Fixed-length analysis windows over a clip.
///
/// Owns one copy of the sample buffer; frames are views into it, so frame i
/// starting at `i * hop_len` always has exactly `window_len` samples.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    samples: Vec<f64>,
    pub window_len: usize,
    pub hop_len: usize,
    pub sample_rate_hz: u32,
}

impl FrameSequence {
    pub fn len(&self) -> usize {
        (self.samples.len() - self.window_len) / self.hop_len + 1
    }

    pub fn is_empty(&self) -> bool {
        false // construction requires at least one full window
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        let start = i * self.hop_len;
        &self.samples[start..start + self.window_len]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.len()).map(move |i| self.frame(i))
    }
}

/// Cut a clip into 1024-sample windows with 50% overlap.
///
/// Trailing samples that do not fill a whole window are discarded (at most
/// 511 samples, under 12 ms).
pub fn frame_signal(clip: &AudioClip) -> Result<FrameSequence, AudioError> {
    if clip.samples.len() < WINDOW_LEN {
        return Err(AudioError::TooShort {
            got: clip.samples.len(),
            need: WINDOW_LEN,
        });
    }
    Ok(FrameSequence {
        samples: clip.samples.clone(),
        window_len: WINDOW_LEN,
        hop_len: HOP_LEN,
        sample_rate_hz: clip.sample_rate_hz,
    })
}
