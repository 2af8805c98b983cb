//! Synthetic corpus generator.
//!
//! Each sound class has a distinct spectral signature: even class ids are
//! harmonic stacks on a class-specific fundamental, odd ids are band-limited
//! noise in a class-specific band. Each city is a categorical distribution
//! over classes, so soundtracks from different cities carry different sound
//! mixtures. Everything derives from the master seed; generation is
//! byte-identical across runs and thread schedules.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use super::HarnessError;
use crate::audio_io::{write_wav_pcm16, AudioClip};
use crate::{derive_seed, CITIES, SAMPLE_RATE_HZ, URBAN_SOUND_CLASSES};

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub n_cities: usize,
    pub videos_per_city: usize,
    pub exemplars_per_class: usize,
    pub seed: u64,
    /// Soundtrack durations are drawn uniformly from this range (seconds).
    pub duration_range_s: (f64, f64),
    pub exemplar_duration_s: f64,
    /// 0.0 = spectrally disjoint classes; larger values crowd the class
    /// bands together and widen the noise bands.
    pub spectral_overlap: f64,
    pub background_level: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_classes: 10,
            n_cities: 6,
            videos_per_city: 30,
            exemplars_per_class: 8,
            seed: 42,
            duration_range_s: (3.0, 6.0),
            exemplar_duration_s: 4.0,
            spectral_overlap: 0.0,
            background_level: 0.02,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidSpec(m));
        if !(2..=10).contains(&self.n_classes) {
            return bad(format!("n_classes {} outside 2..=10", self.n_classes));
        }
        if self.n_cities == 0 || self.n_cities > CITIES.len() {
            return bad(format!("n_cities {} outside 1..={}", self.n_cities, CITIES.len()));
        }
        if self.videos_per_city == 0 || self.exemplars_per_class == 0 {
            return bad("videos_per_city and exemplars_per_class must be positive".into());
        }
        let (lo, hi) = self.duration_range_s;
        if !(2.0..=90.0).contains(&lo) || !(2.0..=90.0).contains(&hi) || lo > hi {
            return bad(format!("duration range {lo}..{hi} outside [2, 90] seconds"));
        }
        if !(2.0..=90.0).contains(&self.exemplar_duration_s) {
            return bad(format!(
                "exemplar duration {} outside [2, 90] seconds",
                self.exemplar_duration_s
            ));
        }
        if !(0.0..0.95).contains(&self.spectral_overlap) {
            return bad(format!("spectral_overlap {} outside [0, 0.95)", self.spectral_overlap));
        }
        if !(0.0..0.5).contains(&self.background_level) {
            return bad(format!("background_level {} outside [0, 0.5)", self.background_level));
        }
        Ok(())
    }
}

/// One labeled event inside a generated soundtrack.
#[derive(Debug, Clone)]
pub struct LoggedEvent {
    pub path: String,
    pub class_name: String,
    pub onset_s: f64,
    pub offset_s: f64,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub root: PathBuf,
    pub urbansound_manifest: PathBuf,
    pub city_manifest: PathBuf,
    pub event_log: PathBuf,
    pub n_soundtracks: usize,
    pub n_exemplars: usize,
}

/// Class center frequency; overlap compresses the spacing between classes.
fn class_center_hz(class_id: usize, overlap: f64) -> f64 {
    let base = 1.55 - 0.45 * overlap;
    170.0 * base.powi(class_id as i32)
}

/// Render one event of `class_id` into `buf` starting at `start` samples.
/// Tone classes (even ids) are harmonic stacks; noise classes (odd ids) are
/// sums of random-phase sinusoids confined to the class band.
fn render_event_into(
    buf: &mut [f64],
    start: usize,
    len: usize,
    class_id: usize,
    overlap: f64,
    amplitude: f64,
    rng: &mut ChaCha20Rng,
) {
    let rate = SAMPLE_RATE_HZ as f64;
    let nyquist_margin = 0.45 * rate;
    let center = class_center_hz(class_id, overlap);

    // (frequency, relative amplitude, phase)
    let mut partials: Vec<(f64, f64, f64)> = Vec::new();
    if class_id % 2 == 0 {
        let detune = 1.0 + rng.random_range(-0.015..0.015);
        let f0 = center * detune;
        for h in 1..=4 {
            let f = f0 * h as f64;
            if f < nyquist_margin {
                partials.push((f, 1.0 / h as f64, rng.random_range(0.0..std::f64::consts::TAU)));
            }
        }
    } else {
        let width = 0.12 + 0.55 * overlap;
        let (lo, hi) = (center * (1.0 - width), center * (1.0 + width));
        for _ in 0..16 {
            let f = (lo.ln() + rng.random_range(0.0..1.0) * (hi.ln() - lo.ln())).exp();
            if f < nyquist_margin {
                partials.push((f, rng.random_range(0.4..1.0), rng.random_range(0.0..std::f64::consts::TAU)));
            }
        }
    }
    let norm: f64 = partials.iter().map(|p| p.1).sum();
    if norm <= 0.0 {
        return;
    }

    let attack = (0.05 * rate) as usize;
    let end = (start + len).min(buf.len());
    let n = end.saturating_sub(start);
    // two-tap resonator per partial: s[n] = 2cos(w) s[n-1] - s[n-2]
    for &(f, a, phase) in &partials {
        let w = std::f64::consts::TAU * f / rate;
        let coeff = 2.0 * w.cos();
        let mut s_prev = (phase - w).sin();
        let mut s_curr = phase.sin();
        let gain = amplitude * a / norm;
        for i in 0..n {
            let envelope = {
                let rise = ((i + 1) as f64 / attack as f64).min(1.0);
                let fall = ((n - i) as f64 / attack as f64).min(1.0);
                rise.min(fall)
            };
            buf[start + i] += gain * envelope * s_curr;
            let next = coeff * s_curr - s_prev;
            s_prev = s_curr;
            s_curr = next;
        }
    }
}

/// A standalone clip holding background noise plus a single event. Used for
/// exemplars and for evidence-retrieval experiments.
pub fn render_single_event_clip(
    class_id: usize,
    overlap: f64,
    duration_s: f64,
    event_span_s: (f64, f64),
    amplitude: f64,
    background_level: f64,
    seed: u64,
) -> AudioClip {
    let rate = SAMPLE_RATE_HZ as f64;
    let n = (duration_s * rate) as usize;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut buf: Vec<f64> = (0..n)
        .map(|_| rng.random_range(-1.0..1.0) * background_level)
        .collect();
    let start = (event_span_s.0 * rate) as usize;
    let len = ((event_span_s.1 - event_span_s.0) * rate) as usize;
    render_event_into(&mut buf, start, len, class_id, overlap, amplitude, &mut rng);
    for v in buf.iter_mut() {
        *v = v.clamp(-1.0, 1.0);
    }
    AudioClip::new(buf, SAMPLE_RATE_HZ, format!("synthetic-class-{class_id}"))
}

/// City-specific categorical distribution over classes: a circular Gaussian
/// bump centered at a city-specific class plus a small floor. The bump width
/// keeps neighboring cities' mixtures overlapping but clearly distinct.
fn city_class_distribution(city_idx: usize, n_cities: usize, n_classes: usize) -> Vec<f64> {
    let mu = city_idx as f64 * n_classes as f64 / n_cities as f64;
    let sigma = 0.85;
    let mut weights: Vec<f64> = (0..n_classes)
        .map(|c| {
            let d = (c as f64 - mu).abs();
            let circ = d.min(n_classes as f64 - d);
            (-0.5 * (circ / sigma).powi(2)).exp() + 0.015
        })
        .collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    weights
}

fn sample_categorical(weights: &[f64], rng: &mut ChaCha20Rng) -> usize {
    let r: f64 = rng.random_range(0.0..1.0);
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if r < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Render one city soundtrack: background noise plus a seeded sequence of
/// class events drawn from the city's distribution. Returns the samples and
/// the event log (class id, onset sample, length).
fn render_soundtrack(
    duration_s: f64,
    class_weights: &[f64],
    overlap: f64,
    background_level: f64,
    rng: &mut ChaCha20Rng,
) -> (Vec<f64>, Vec<(usize, usize, usize)>) {
    let rate = SAMPLE_RATE_HZ as f64;
    let n = (duration_s * rate) as usize;
    let mut buf: Vec<f64> = (0..n)
        .map(|_| rng.random_range(-1.0..1.0) * background_level)
        .collect();
    let mut events = Vec::new();
    let mut t = (0.1 * rate) as usize;
    loop {
        let class = sample_categorical(class_weights, rng);
        let len = (rng.random_range(0.4..1.8) * rate) as usize;
        if t + len + (0.1 * rate) as usize > n {
            break;
        }
        let amp = rng.random_range(0.25..0.55);
        render_event_into(&mut buf, t, len, class, overlap, amp, rng);
        events.push((class, t, len));
        t += len + (rng.random_range(0.05..0.35) * rate) as usize;
    }
    if events.is_empty() {
        // very short clip: force one event so the soundtrack is not empty
        let len = (0.8 * rate) as usize;
        let class = sample_categorical(class_weights, rng);
        render_event_into(&mut buf, (0.1 * rate) as usize, len, class, overlap, 0.4, rng);
        events.push((class, (0.1 * rate) as usize, len));
    }
    for v in buf.iter_mut() {
        *v = v.clamp(-1.0, 1.0);
    }
    (buf, events)
}

/// Generate the corpus: exemplar WAVs in UrbanSound8K layout with their
/// manifest, city soundtracks with their manifest, and a ground-truth event
/// log.
pub fn generate_synthetic_corpus(spec: &SynthSpec, root: impl AsRef<Path>) -> Result<SynthOutput, HarnessError> {
    spec.validate()?;
    let root = root.as_ref().to_path_buf();
    let rate = SAMPLE_RATE_HZ as f64;

    // exemplars, urbansound layout: audio/fold<f>/<class>_<i>.wav
    struct ExemplarJob {
        class_id: usize,
        fold: u8,
        rel: String,
        path: PathBuf,
        seed: u64,
    }
    let mut exemplar_jobs = Vec::new();
    for class_id in 0..spec.n_classes {
        for i in 0..spec.exemplars_per_class {
            let fold = ((class_id * spec.exemplars_per_class + i) % 10 + 1) as u8;
            let name = format!("{}_{i:03}.wav", URBAN_SOUND_CLASSES[class_id]);
            let path = root.join("audio").join(format!("fold{fold}")).join(&name);
            exemplar_jobs.push(ExemplarJob {
                class_id,
                fold,
                rel: name,
                path,
                seed: derive_seed(spec.seed, "synth-exemplar", (class_id * 1000 + i) as u64),
            });
        }
    }
    for job in &exemplar_jobs {
        if let Some(dir) = job.path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e.to_string()))?;
        }
    }
    exemplar_jobs
        .par_iter()
        .map(|job| {
            let margin = 0.25;
            let clip = render_single_event_clip(
                job.class_id,
                spec.spectral_overlap,
                spec.exemplar_duration_s,
                (margin, spec.exemplar_duration_s - margin),
                0.5,
                spec.background_level / 2.0,
                job.seed,
            );
            write_wav_pcm16(&job.path, &clip.samples, SAMPLE_RATE_HZ)
                .map_err(|e| HarnessError::io(&job.path, e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let us_manifest = root.join("urbansound_manifest.csv");
    {
        let mut text = String::from("slice_file_name,fsID,start,end,salience,fold,classID,class\n");
        for (fs_id, job) in exemplar_jobs.iter().enumerate() {
            let _ = writeln!(
                text,
                "{},{},0.0,{:.6},1,{},{},{}",
                job.rel,
                fs_id + 1,
                spec.exemplar_duration_s,
                job.fold,
                job.class_id,
                URBAN_SOUND_CLASSES[job.class_id]
            );
        }
        std::fs::write(&us_manifest, text).map_err(|e| HarnessError::io(&us_manifest, e.to_string()))?;
    }

    // city soundtracks
    struct TrackJob {
        city: &'static str,
        rel: String,
        path: PathBuf,
        weights: Vec<f64>,
        seed: u64,
    }
    let mut track_jobs = Vec::new();
    for city_idx in 0..spec.n_cities {
        let city = CITIES[city_idx];
        let weights = city_class_distribution(city_idx, spec.n_cities, spec.n_classes);
        for v in 0..spec.videos_per_city {
            let rel = format!("soundtracks/{}/{v:03}.wav", city.replace(' ', "_"));
            track_jobs.push(TrackJob {
                city,
                rel: rel.clone(),
                path: root.join(&rel),
                weights: weights.clone(),
                seed: derive_seed(spec.seed, "synth-track", (city_idx * 10_000 + v) as u64),
            });
        }
    }
    for job in &track_jobs {
        if let Some(dir) = job.path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e.to_string()))?;
        }
    }
    let logs: Vec<Vec<LoggedEvent>> = track_jobs
        .par_iter()
        .map(|job| {
            let mut rng = ChaCha20Rng::seed_from_u64(job.seed);
            let duration = rng.random_range(spec.duration_range_s.0..=spec.duration_range_s.1);
            let (samples, events) = render_soundtrack(
                duration,
                &job.weights,
                spec.spectral_overlap,
                spec.background_level,
                &mut rng,
            );
            write_wav_pcm16(&job.path, &samples, SAMPLE_RATE_HZ)
                .map_err(|e| HarnessError::io(&job.path, e.to_string()))?;
            Ok(events
                .into_iter()
                .map(|(class, onset, len)| LoggedEvent {
                    path: job.rel.clone(),
                    class_name: URBAN_SOUND_CLASSES[class].to_string(),
                    onset_s: onset as f64 / rate,
                    offset_s: (onset + len) as f64 / rate,
                })
                .collect())
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;

    let city_manifest = root.join("city_manifest.csv");
    {
        let mut text = String::from("path,city\n");
        for job in &track_jobs {
            let _ = writeln!(text, "{},{}", job.rel, job.city);
        }
        std::fs::write(&city_manifest, text)
            .map_err(|e| HarnessError::io(&city_manifest, e.to_string()))?;
    }

    let event_log = root.join("events.csv");
    {
        let mut text = String::from("path,class,onset_s,offset_s\n");
        for events in &logs {
            for e in events {
                let _ = writeln!(text, "{},{},{:.6},{:.6}", e.path, e.class_name, e.onset_s, e.offset_s);
            }
        }
        std::fs::write(&event_log, text).map_err(|e| HarnessError::io(&event_log, e.to_string()))?;
    }

    Ok(SynthOutput {
        root,
        urbansound_manifest: us_manifest,
        city_manifest,
        event_log,
        n_soundtracks: track_jobs.len(),
        n_exemplars: exemplar_jobs.len(),
    })
}

/// Parse an events.csv written by the generator.
pub fn load_event_log(path: impl AsRef<Path>) -> Result<Vec<LoggedEvent>, HarnessError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e.to_string()))?;
    let mut events = Vec::new();
    for line in text.lines().skip(1) {
        let mut parts = line.split(',');
        let (Some(p), Some(c), Some(on), Some(off)) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            continue;
        };
        events.push(LoggedEvent {
            path: p.to_string(),
            class_name: c.to_string(),
            onset_s: on.parse().unwrap_or(0.0),
            offset_s: off.parse().unwrap_or(0.0),
        });
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec(seed: u64) -> SynthSpec {
        SynthSpec {
            n_classes: 3,
            n_cities: 2,
            videos_per_city: 2,
            exemplars_per_class: 2,
            seed,
            duration_range_s: (2.0, 2.5),
            exemplar_duration_s: 2.0,
            spectral_overlap: 0.0,
            background_level: 0.02,
        }
    }

    fn tmp_root(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("cityid_synth_{tag}_{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        dir
    }

    fn dir_digest(root: &Path) -> Vec<(String, String)> {
        let mut files = Vec::new();
        fn walk(dir: &Path, root: &Path, out: &mut Vec<(String, String)>) {
            for entry in std::fs::read_dir(dir).unwrap() {
                let p = entry.unwrap().path();
                if p.is_dir() {
                    walk(&p, root, out);
                } else {
                    let rel = p.strip_prefix(root).unwrap().display().to_string();
                    let bytes = std::fs::read(&p).unwrap();
                    out.push((rel, super::super::cache::content_hash(&bytes)));
                }
            }
        }
        walk(root, root, &mut files);
        files.sort();
        files
    }

    #[test]
    fn counts_match_the_spec() {
        let root = tmp_root("counts");
        let out = generate_synthetic_corpus(&tiny_spec(1), &root).unwrap();
        assert_eq!(out.n_soundtracks, 4);
        assert_eq!(out.n_exemplars, 6);
        let entries = super::super::manifest::load_urbansound_manifest(&out.urbansound_manifest).unwrap();
        assert_eq!(entries.len(), 6);
        let (cities, warnings) = super::super::manifest::load_city_manifest(&out.city_manifest).unwrap();
        assert_eq!(cities.len(), 4);
        assert!(warnings.is_empty(), "all generated files exist: {warnings:?}");
    }

    #[test]
    fn generation_is_byte_identical_for_the_same_seed() {
        let root_a = tmp_root("det_a");
        let root_b = tmp_root("det_b");
        generate_synthetic_corpus(&tiny_spec(7), &root_a).unwrap();
        generate_synthetic_corpus(&tiny_spec(7), &root_b).unwrap();
        assert_eq!(dir_digest(&root_a), dir_digest(&root_b));

        let root_c = tmp_root("det_c");
        generate_synthetic_corpus(&tiny_spec(8), &root_c).unwrap();
        assert_ne!(dir_digest(&root_a), dir_digest(&root_c));
    }

    #[test]
    fn events_lie_within_their_soundtrack() {
        let root = tmp_root("events");
        let out = generate_synthetic_corpus(&tiny_spec(3), &root).unwrap();
        let events = load_event_log(&out.event_log).unwrap();
        assert!(!events.is_empty());
        for e in &events {
            assert!(e.onset_s >= 0.0);
            assert!(e.offset_s > e.onset_s);
            let wav = crate::audio_io::load_wav(root.join(&e.path)).unwrap();
            assert!(e.offset_s <= wav.duration_s() + 1e-6);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = tiny_spec(1);
        s.n_classes = 1;
        assert!(matches!(
            generate_synthetic_corpus(&s, tmp_root("bad1")),
            Err(HarnessError::InvalidSpec(_))
        ));
        let mut s = tiny_spec(1);
        s.duration_range_s = (1.0, 3.0);
        assert!(matches!(
            generate_synthetic_corpus(&s, tmp_root("bad2")),
            Err(HarnessError::InvalidSpec(_))
        ));
        let mut s = tiny_spec(1);
        s.n_cities = 19;
        assert!(matches!(
            generate_synthetic_corpus(&s, tmp_root("bad3")),
            Err(HarnessError::InvalidSpec(_))
        ));
    }

    #[test]
    fn class_bands_are_distinct_without_overlap() {
        // neighboring class centers stay separated by the band half-width
        for c in 0..9 {
            let a = class_center_hz(c, 0.0);
            let b = class_center_hz(c + 1, 0.0);
            assert!(b / a > 1.3, "classes {c} and {} too close", c + 1);
        }
    }

    #[test]
    fn city_distributions_are_distinct() {
        let a = city_class_distribution(0, 6, 10);
        let b = city_class_distribution(3, 6, 10);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let l1: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        assert!(l1 > 0.5, "distributions too similar, L1 distance {l1}");
    }
}
