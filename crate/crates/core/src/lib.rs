//! Audio-only city identification pipeline.
//!
//! The pipeline turns a soundtrack into per-frame MFCC summary statistics,
//! projects those statistics onto a taxonomy of urban-sound bases to obtain
//! semantic weights and a least-squares reconstruction, classifies frames
//! with a random forest or an MLP, and evaluates per-city equal error rates.
//!
//! Modules follow the stage order:
//!
//! * [`audio_io`] — WAV decode, resampling, framing
//! * [`features`] — MFCCs and the 275-dim summary statistics
//! * [`semantic`] — basis construction, pseudo-inverse projection, evidence
//! * [`classify`] — random forest, MLP, video-level score aggregation
//! * [`eval`] — DET curves, EER, basis-count ablation protocol
//! * [`harness`] — manifests, config, caching, synthetic corpus, CLI pipeline

pub mod audio_io;
pub mod classify;
pub mod eval;
pub mod features;
pub mod harness;
pub mod semantic;

mod seed;

pub use seed::derive_seed;

/// Canonical sample rate; the mel range of 0..22050 Hz pins Nyquist at 22050.
pub const SAMPLE_RATE_HZ: u32 = 44100;
/// Analysis window length in samples (~23.2 ms at 44.1 kHz).
pub const WINDOW_LEN: usize = 1024;
/// Hop between analysis windows (50% overlap).
pub const HOP_LEN: usize = 512;
/// Number of mel filterbank bands.
pub const MEL_BANDS: usize = 40;
/// Number of cepstral coefficients kept per frame.
pub const NUM_MFCC: usize = 25;
/// Summary statistics computed per coefficient.
pub const NUM_STATS: usize = 11;
/// Dimension of a summary-statistics vector (25 coefficients x 11 statistics).
pub const STAT_DIM: usize = NUM_MFCC * NUM_STATS;
/// Frames of context on each side of the current frame.
pub const CONTEXT_RADIUS: usize = 45;

/// The ten urban-sound classes, in canonical class-id order.
pub const URBAN_SOUND_CLASSES: [&str; 10] = [
    "air_conditioner",
    "car_horn",
    "children_playing",
    "dog_bark",
    "drilling",
    "engine_idling",
    "gun_shot",
    "jackhammer",
    "siren",
    "street_music",
];

/// The eighteen cities recognized by the manifest loader.
pub const CITIES: [&str; 18] = [
    "Bangkok",
    "Barcelona",
    "Beijing",
    "Berlin",
    "Rio",
    "Chicago",
    "Houston",
    "London",
    "Rome",
    "Tokyo",
    "Moscow",
    "New York",
    "Paris",
    "Praha",
    "Los Angeles",
    "Sydney",
    "San Francisco",
    "Seoul",
];
