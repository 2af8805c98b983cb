//! MFCC extraction: Hann window, power spectrum, HTK mel filterbank,
//! log with floor, orthonormal DCT-II.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{FeatureError, MfccMatrix};
use crate::audio_io::FrameSequence;
use crate::{MEL_BANDS, NUM_MFCC};

/// Floor applied to filterbank energies before the log.
const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct MfccParams {
    pub mel_bands: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    pub num_coeffs: usize,
    /// Keep coefficient 0 (overall log-energy shape). When false the kept
    /// coefficients are 1..=num_coeffs instead of 0..num_coeffs.
    pub include_c0: bool,
}

impl Default for MfccParams {
    fn default() -> Self {
        Self {
            mel_bands: MEL_BANDS,
            fmin_hz: 0.0,
            fmax_hz: 22050.0,
            num_coeffs: NUM_MFCC,
            include_c0: true,
        }
    }
}

/// HTK mel scale.
fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Periodic Hann window of length `n`.
fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Triangular mel filterbank over `n_bins` FFT bins (dense rows).
fn mel_filterbank(params: &MfccParams, sample_rate: f64, n_fft: usize) -> Vec<Vec<f64>> {
    let n_bins = n_fft / 2 + 1;
    let mel_lo = hz_to_mel(params.fmin_hz);
    let mel_hi = hz_to_mel(params.fmax_hz);
    let n = params.mel_bands;
    let edges: Vec<f64> = (0..n + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n + 1) as f64))
        .collect();
    let mut filters = vec![vec![0.0; n_bins]; n];
    for (m, filter) in filters.iter_mut().enumerate() {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for (k, w) in filter.iter_mut().enumerate() {
            let f = k as f64 * sample_rate / n_fft as f64;
            if f > lo && f < hi {
                let rising = (f - lo) / (center - lo);
                let falling = (hi - f) / (hi - center);
                *w = rising.min(falling).max(0.0);
            }
        }
    }
    filters
}

/// Orthonormal DCT-II matrix, `num_coeffs` x `mel_bands` rows for the kept
/// coefficient indices.
fn dct_matrix(params: &MfccParams) -> Vec<Vec<f64>> {
    let m = params.mel_bands as f64;
    let first = if params.include_c0 { 0 } else { 1 };
    (first..first + params.num_coeffs)
        .map(|i| {
            let scale = if i == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
            (0..params.mel_bands)
                .map(|j| scale * (std::f64::consts::PI * (j as f64 + 0.5) * i as f64 / m).cos())
                .collect()
        })
        .collect()
}

/// Compute MFCCs for every frame. No pre-emphasis, no liftering.
pub fn mfcc(frames: &FrameSequence, params: &MfccParams) -> Result<MfccMatrix, FeatureError> {
    if frames.len() == 0 {
        return Err(FeatureError::EmptyFrames);
    }
    let n_fft = frames.window_len;
    let sample_rate = frames.sample_rate_hz as f64;
    let window = hann(n_fft);
    let filters = mel_filterbank(params, sample_rate, n_fft);
    let dct = dct_matrix(params);

    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];

    let n_bins = n_fft / 2 + 1;
    let mut coeffs = Vec::with_capacity(frames.len() * params.num_coeffs);
    let mut power = vec![0.0; n_bins];
    let mut log_mel = vec![0.0; params.mel_bands];
    for frame in frames.iter() {
        for (i, (&s, &w)) in frame.iter().zip(&window).enumerate() {
            buf[i] = Complex::new(s * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (k, p) in power.iter_mut().enumerate() {
            *p = buf[k].norm_sqr();
        }
        for (m, filter) in filters.iter().enumerate() {
            let e: f64 = filter.iter().zip(&power).map(|(w, p)| w * p).sum();
            log_mel[m] = e.max(LOG_FLOOR).ln();
        }
        for row in &dct {
            coeffs.push(row.iter().zip(&log_mel).map(|(d, l)| d * l).sum());
        }
    }

    MfccMatrix::from_flat(coeffs, frames.len(), params.num_coeffs, frames.hop_len, sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio_io::{frame_signal, AudioClip};

    fn clip_from(samples: Vec<f64>) -> AudioClip {
        AudioClip::new(samples, 44100, "test")
    }

    /// Deterministic 3-frame signal: tones plus a broadband pseudo-noise bed
    /// so every mel band carries energy above the log floor in every frame.
    fn three_frame_signal() -> Vec<f64> {
        let mut lcg: u64 = 0x2545F4914F6CDD1D;
        (0..2048)
            .map(|i| {
                let t = i as f64 / 44100.0;
                lcg = lcg.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let noise = (lcg >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
                0.4 * (2.0 * std::f64::consts::PI * 440.0 * t).sin()
                    + 0.2 * (2.0 * std::f64::consts::PI * 2500.0 * t).sin()
                    + 0.1 * (2.0 * std::f64::consts::PI * 9000.0 * t).sin()
                    + 0.05 * noise
            })
            .collect()
    }

    /// Straight-line reference MFCC: naive DFT, explicit mel triangles and
    /// DCT sums, sharing no code with the production path.
    fn reference_mfcc(samples: &[f64], n_frames: usize) -> Vec<Vec<f64>> {
        let n = 1024usize;
        let sr = 44100.0;
        let n_mels = 40usize;
        let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
        let imel = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
        let mel_max = mel(22050.0);
        let mut out = Vec::new();
        for fi in 0..n_frames {
            let frame = &samples[fi * 512..fi * 512 + n];
            // windowed naive DFT power spectrum
            let mut power = vec![0.0; n / 2 + 1];
            for (k, p) in power.iter_mut().enumerate() {
                let mut re = 0.0;
                let mut im = 0.0;
                for (i, &s) in frame.iter().enumerate() {
                    let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos();
                    let ph = -2.0 * std::f64::consts::PI * k as f64 * i as f64 / n as f64;
                    re += s * w * ph.cos();
                    im += s * w * ph.sin();
                }
                *p = re * re + im * im;
            }
            // mel energies
            let mut logmel = vec![0.0; n_mels];
            for (m, lm) in logmel.iter_mut().enumerate() {
                let f_lo = imel(mel_max * m as f64 / 41.0);
                let f_c = imel(mel_max * (m + 1) as f64 / 41.0);
                let f_hi = imel(mel_max * (m + 2) as f64 / 41.0);
                let mut e = 0.0;
                for (k, &p) in power.iter().enumerate() {
                    let f = k as f64 * sr / n as f64;
                    let w = if f <= f_lo || f >= f_hi {
                        0.0
                    } else if f <= f_c {
                        (f - f_lo) / (f_c - f_lo)
                    } else {
                        (f_hi - f) / (f_hi - f_c)
                    };
                    e += w * p;
                }
                *lm = e.max(1e-10).ln();
            }
            // orthonormal DCT-II, first 25 coefficients
            let mut row = Vec::new();
            for i in 0..25 {
                let scale = if i == 0 {
                    (1.0 / 40.0f64).sqrt()
                } else {
                    (2.0 / 40.0f64).sqrt()
                };
                let mut c = 0.0;
                for (j, &lm) in logmel.iter().enumerate() {
                    c += lm * (std::f64::consts::PI * (j as f64 + 0.5) * i as f64 / 40.0).cos();
                }
                row.push(scale * c);
            }
            out.push(row);
        }
        out
    }

    #[test]
    fn matches_independent_reference_implementation() {
        let samples = three_frame_signal();
        let frames = frame_signal(&clip_from(samples.clone())).unwrap();
        assert_eq!(frames.len(), 3);
        let got = mfcc(&frames, &MfccParams::default()).unwrap();
        let want = reference_mfcc(&samples, 3);
        for t in 0..3 {
            for i in 0..25 {
                let (a, b) = (got.coeffs[[t, i]], want[t][i]);
                let tol = 1e-6 * a.abs().max(b.abs()).max(1e-3);
                assert!((a - b).abs() <= tol, "frame {t} coeff {i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn silence_yields_identical_constant_rows() {
        let frames = frame_signal(&clip_from(vec![0.0; 4096])).unwrap();
        let m = mfcc(&frames, &MfccParams::default()).unwrap();
        let first: Vec<f64> = (0..25).map(|i| m.coeffs[[0, i]]).collect();
        for t in 1..m.num_frames() {
            for i in 0..25 {
                assert_eq!(m.coeffs[[t, i]], first[i]);
            }
        }
        // the constant is set by the log floor: c0 = sqrt(1/40) * 40 * ln(1e-10)
        let expected_c0 = (1.0 / 40.0f64).sqrt() * 40.0 * 1e-10f64.ln();
        assert!((first[0] - expected_c0).abs() < 1e-9);
        for &c in &first[1..] {
            assert!(c.abs() < 1e-9);
        }
    }

    #[test]
    fn gain_doubling_shifts_only_c0() {
        let samples = three_frame_signal();
        let doubled: Vec<f64> = samples.iter().map(|s| s * 2.0).collect();
        let m1 = mfcc(&frame_signal(&clip_from(samples)).unwrap(), &MfccParams::default()).unwrap();
        let m2 = mfcc(&frame_signal(&clip_from(doubled)).unwrap(), &MfccParams::default()).unwrap();
        // power scales by 4, every log-mel shifts by ln 4, and the shift
        // projects only onto the DCT's constant basis vector
        let expected_shift = (1.0 / 40.0f64).sqrt() * 40.0 * 4.0f64.ln();
        for t in 0..3 {
            assert!((m2.coeffs[[t, 0]] - m1.coeffs[[t, 0]] - expected_shift).abs() < 1e-9);
            for i in 1..25 {
                assert!(
                    (m2.coeffs[[t, i]] - m1.coeffs[[t, i]]).abs() < 1e-9,
                    "coeff {i} moved"
                );
            }
        }
    }

    #[test]
    fn excluding_c0_keeps_width_and_drops_the_gain_term() {
        let samples = three_frame_signal();
        let frames = frame_signal(&clip_from(samples)).unwrap();
        let with = mfcc(&frames, &MfccParams::default()).unwrap();
        let params = MfccParams {
            include_c0: false,
            ..MfccParams::default()
        };
        let without = mfcc(&frames, &params).unwrap();
        assert_eq!(without.coeffs.ncols(), 25);
        // coefficient k of the no-c0 matrix equals coefficient k+1 of the full one
        for t in 0..3 {
            for i in 0..24 {
                assert!((without.coeffs[[t, i]] - with.coeffs[[t, i + 1]]).abs() < 1e-12);
            }
        }
    }
}
