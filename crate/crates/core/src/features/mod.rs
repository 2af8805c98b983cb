//! Summary-statistics features over MFCCs.
//!
//! Each coefficient column is summarized by 11 statistics — min, max,
//! median, mean, variance, skewness, kurtosis, and the mean and variance of
//! the first and second frame differences — giving a 275-dim vector. The
//! global variant summarizes a whole clip; the contextual variant summarizes
//! a 91-frame window around every frame.

mod mfcc;

pub use mfcc::{mfcc, MfccParams};

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use thiserror::Error;

use crate::{CONTEXT_RADIUS, NUM_MFCC, NUM_STATS, STAT_DIM};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("no frames to analyze")]
    EmptyFrames,
    #[error("empty input")]
    EmptyInput,
    #[error("too few frames: {got}, need at least {need}")]
    TooFewFrames { got: usize, need: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Per-frame cepstral coefficients, frame-major (T x 25).
#[derive(Debug, Clone)]
pub struct MfccMatrix {
    pub coeffs: Array2<f64>,
    pub frame_hop_s: f64,
    pub source_id: String,
}

impl MfccMatrix {
    pub(crate) fn from_flat(
        flat: Vec<f64>,
        rows: usize,
        cols: usize,
        hop_len: usize,
        sample_rate: f64,
    ) -> Result<Self, FeatureError> {
        let coeffs = Array2::from_shape_vec((rows, cols), flat)
            .map_err(|e| FeatureError::DimensionMismatch(e.to_string()))?;
        debug_assert!(coeffs.iter().all(|v| v.is_finite()));
        Ok(Self {
            coeffs,
            frame_hop_s: hop_len as f64 / sample_rate,
            source_id: String::new(),
        })
    }

    pub fn num_frames(&self) -> usize {
        self.coeffs.nrows()
    }
}

/// A 275-entry summary vector: 25 coefficient-major blocks of 11 statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct StatVector(pub Vec<f64>);

impl StatVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Per-frame contextual summary vectors (T x 275).
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    pub rows: Array2<f64>,
    pub context_radius: usize,
    pub source_id: String,
}

impl FeatureMatrix {
    pub fn num_frames(&self) -> usize {
        self.rows.nrows()
    }
}

/// Index of (coefficient `i`, statistic `j`) within a summary vector.
#[inline]
pub fn stat_index(coefficient: usize, statistic: usize) -> usize {
    NUM_STATS * coefficient + statistic
}

/// Variance below which skewness and kurtosis are defined as zero.
const MOMENT_FLOOR: f64 = 1e-12;

/// The 11 statistics of one column, in layout order.
fn column_stats(col: &[f64], out: &mut [f64]) {
    let s = col.len() as f64;
    let mut sorted = col.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let median = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2]) / 2.0
    };
    let mean = col.iter().sum::<f64>() / s;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in col {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= s;
    m3 /= s;
    m4 /= s;
    let (skew, kurt) = if m2 < MOMENT_FLOOR {
        (0.0, 0.0)
    } else {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    };

    let d1: Vec<f64> = col.windows(2).map(|w| w[1] - w[0]).collect();
    let (mean_d1, var_d1) = mean_var(&d1);
    let d2seq: Vec<f64> = d1.windows(2).map(|w| w[1] - w[0]).collect();
    let (mean_d2, var_d2) = mean_var(&d2seq);

    out[0] = sorted[0];
    out[1] = sorted[sorted.len() - 1];
    out[2] = median;
    out[3] = mean;
    out[4] = m2;
    out[5] = skew;
    out[6] = kurt;
    out[7] = mean_d1;
    out[8] = var_d1;
    out[9] = mean_d2;
    out[10] = var_d2;
}

/// Population mean and variance; (0, 0) for an empty sequence.
fn mean_var(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Summarize an S x 25 slice of coefficient rows into one 275-dim vector.
pub fn summarize(coeff_rows: ArrayView2<'_, f64>) -> Result<StatVector, FeatureError> {
    if coeff_rows.nrows() == 0 {
        return Err(FeatureError::EmptyInput);
    }
    if coeff_rows.ncols() != NUM_MFCC {
        return Err(FeatureError::DimensionMismatch(format!(
            "expected {} coefficient columns, got {}",
            NUM_MFCC,
            coeff_rows.ncols()
        )));
    }
    let mut values = vec![0.0; STAT_DIM];
    let mut col_buf = Vec::with_capacity(coeff_rows.nrows());
    for (i, col) in coeff_rows.columns().into_iter().enumerate() {
        col_buf.clear();
        col_buf.extend(col.iter());
        column_stats(&col_buf, &mut values[NUM_STATS * i..NUM_STATS * (i + 1)]);
    }
    Ok(StatVector(values))
}

/// Summarize a whole clip into the single 1 x 275 vector used for bases.
pub fn summarize_global(m: &MfccMatrix) -> Result<StatVector, FeatureError> {
    if m.num_frames() < 3 {
        return Err(FeatureError::TooFewFrames {
            got: m.num_frames(),
            need: 3,
        });
    }
    summarize(m.coeffs.view())
}

/// Summarize a 91-frame window around every frame; the window is truncated
/// at clip boundaries so row t is always a statistic of observed audio.
pub fn summarize_context(m: &MfccMatrix) -> Result<FeatureMatrix, FeatureError> {
    if m.num_frames() < 3 {
        return Err(FeatureError::TooFewFrames {
            got: m.num_frames(),
            need: 3,
        });
    }
    let t_total = m.num_frames();
    let rows: Vec<Vec<f64>> = (0..t_total)
        .into_par_iter()
        .map(|t| {
            let lo = t.saturating_sub(CONTEXT_RADIUS);
            let hi = (t + CONTEXT_RADIUS + 1).min(t_total);
            let window = m.coeffs.slice(ndarray::s![lo..hi, ..]);
            summarize(window).expect("window is nonempty and 25 wide").0
        })
        .collect();
    let mut flat = Vec::with_capacity(t_total * STAT_DIM);
    for row in rows {
        flat.extend(row);
    }
    Ok(FeatureMatrix {
        rows: Array2::from_shape_vec((t_total, STAT_DIM), flat)
            .expect("row count times 275 values"),
        context_radius: CONTEXT_RADIUS,
        source_id: m.source_id.clone(),
    })
}
