//! Band-limited sample-rate conversion with a windowed-sinc kernel.

use super::{AudioClip, AudioError};

/// Half-width of the sinc kernel, in samples at the lower of the two rates.
const KERNEL_HALF_WIDTH: f64 = 32.0;

/// Resample a clip to `target_hz` with a Blackman-windowed sinc kernel.
///
/// The kernel cutoff sits at the lower of the two Nyquist frequencies, so
/// downsampling low-passes before decimation. Output length is
/// `round(len * target / source)`.
pub fn resample(clip: &AudioClip, target_hz: u32) -> Result<AudioClip, AudioError> {
    assert!(target_hz > 0, "target rate must be positive");
    if clip.samples.is_empty() {
        return Err(AudioError::EmptyAudio);
    }
    if target_hz == clip.sample_rate_hz {
        return Ok(clip.clone());
    }

    let src = clip.sample_rate_hz as f64;
    let dst = target_hz as f64;
    let ratio = dst / src;
    let out_len = (clip.samples.len() as f64 * ratio).round().max(1.0) as usize;

    // cutoff as a fraction of the source Nyquist, and kernel stretch when
    // downsampling so the windowed sinc keeps its shape at the lower rate
    let (cutoff, stretch) = if ratio >= 1.0 { (1.0, 1.0) } else { (ratio, 1.0 / ratio) };
    let half_width = KERNEL_HALF_WIDTH * stretch;

    let input = &clip.samples;
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len {
        let center = n as f64 / ratio;
        let lo = ((center - half_width).ceil() as i64).max(0) as usize;
        let hi = ((center + half_width).floor() as i64).min(input.len() as i64 - 1) as usize;
        let mut acc = 0.0;
        let mut norm = 0.0;
        for j in lo..=hi {
            let x = j as f64 - center;
            let w = sinc(cutoff * x) * blackman(x / half_width);
            acc += input[j] * w;
            norm += w;
        }
        // normalizing by the kernel sum removes DC ripple from truncation
        out.push(if norm.abs() > 1e-12 { acc / norm } else { 0.0 });
    }

    Ok(AudioClip {
        samples: out,
        sample_rate_hz: target_hz,
        source_id: clip.source_id.clone(),
        clamped_samples: clip.clamped_samples,
    })
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Blackman window on [-1, 1].
fn blackman(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        return 0.0;
    }
    let x = std::f64::consts::PI * (t + 1.0); // map [-1,1] to [0, 2pi]
    0.42 - 0.5 * x.cos() + 0.08 * (2.0 * x).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, rate: u32, seconds: f64) -> AudioClip {
        let n = (rate as f64 * seconds) as usize;
        let samples = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin() * 0.7)
            .collect();
        AudioClip::new(samples, rate, "tone")
    }

    #[test]
    fn same_rate_is_identity() {
        let clip = tone(440.0, 44100, 0.1);
        let out = resample(&clip, 44100).unwrap();
        assert_eq!(out.samples, clip.samples);
    }

    #[test]
    fn empty_clip_is_rejected() {
        let clip = AudioClip::new(vec![], 44100, "e");
        assert!(matches!(resample(&clip, 22050), Err(AudioError::EmptyAudio)));
    }

    #[test]
    fn doubling_the_rate_doubles_the_length_within_one() {
        let clip = tone(440.0, 22050, 0.5);
        let n = clip.samples.len();
        let out = resample(&clip, 44100).unwrap();
        assert!((out.samples.len() as i64 - 2 * n as i64).abs() <= 1);
    }

    #[test]
    fn spectral_peak_survives_48k_to_44k() {
        // DFT peak-location oracle: after resampling a 1 kHz tone from 48k to
        // 44.1k, the magnitude peak must still sit at 1 kHz within one bin.
        let clip = tone(1000.0, 48000, 1.0);
        let out = resample(&clip, 44100).unwrap();
        let n = 32768.min(out.samples.len());
        let seg = &out.samples[..n];
        let rate = 44100.0;
        let mut best_bin = 0;
        let mut best_mag = 0.0;
        // scan a band around the expected peak; naive DFT is the oracle
        let lo = (800.0 * n as f64 / rate) as usize;
        let hi = (1200.0 * n as f64 / rate) as usize;
        for k in lo..=hi {
            let mut re = 0.0;
            let mut im = 0.0;
            for (i, &s) in seg.iter().enumerate() {
                let ph = -2.0 * std::f64::consts::PI * k as f64 * i as f64 / n as f64;
                re += s * ph.cos();
                im += s * ph.sin();
            }
            let mag = re * re + im * im;
            if mag > best_mag {
                best_mag = mag;
                best_bin = k;
            }
        }
        let peak_hz = best_bin as f64 * rate / n as f64;
        let bin_hz = rate / n as f64;
        assert!(
            (peak_hz - 1000.0).abs() <= bin_hz + 1e-9,
            "peak at {peak_hz} Hz, expected 1000 +- {bin_hz}"
        );
    }

    #[test]
    fn up_down_round_trip_correlates() {
        for freq in [300.0, 1000.0, 4000.0] {
            let clip = tone(freq, 22050, 1.0);
            let up = resample(&clip, 44100).unwrap();
            let back = resample(&up, 22050).unwrap();
            let n = clip.samples.len().min(back.samples.len());
            // skip kernel-width edges where the window is one-sided
            let (a, b) = (&clip.samples[64..n - 64], &back.samples[64..n - 64]);
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            let corr = dot / (na * nb);
            assert!(corr >= 0.99, "correlation {corr} at {freq} Hz");
        }
    }
}
