//! One-vs-rest DET curves, equal error rate, and the basis-count ablation
//! protocol.
//!
//! Acceptance convention: a trial is accepted when its score is greater
//! than or equal to the threshold. FAR is the fraction of negatives
//! accepted, FRR the fraction of positives rejected. The EER is read off
//! the curve by linearly interpolating FAR and FRR to their crossing.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::semantic::BasisMatrix;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("degenerate labels: need at least one positive and one negative")]
    DegenerateLabels,
    #[error("empty input")]
    EmptyInput,
    #[error("scores and labels have different lengths: {scores} vs {labels}")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("subset size {size} exceeds the {classes}-class basis")]
    SizeExceedsBasis { size: usize, classes: usize },
}

/// One operating point of a DET curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// DET curve over strictly increasing thresholds.
#[derive(Debug, Clone)]
pub struct DetCurve {
    pub points: Vec<DetPoint>,
    pub positives: usize,
    pub negatives: usize,
}

/// Sweep thresholds over the sorted unique scores plus sentinels below the
/// minimum and above the maximum.
pub fn det_points(scores: &[f64], labels: &[bool]) -> Result<DetCurve, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(EvalError::DegenerateLabels);
    }

    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    thresholds.dedup();
    let lo = thresholds[0] - 1.0;
    let hi = thresholds[thresholds.len() - 1] + 1.0;
    thresholds.insert(0, lo);
    thresholds.push(hi);

    let points = thresholds
        .into_iter()
        .map(|t| {
            let mut false_accepts = 0usize;
            let mut false_rejects = 0usize;
            for (&s, &l) in scores.iter().zip(labels) {
                let accept = s >= t;
                match (accept, l) {
                    (true, false) => false_accepts += 1,
                    (false, true) => false_rejects += 1,
                    _ => {}
                }
            }
            DetPoint {
                threshold: t,
                far: false_accepts as f64 / negatives as f64,
                frr: false_rejects as f64 / positives as f64,
            }
        })
        .collect();

    Ok(DetCurve {
        points,
        positives,
        negatives,
    })
}

/// Locate the FAR/FRR crossing and linearly interpolate to the common value.
pub fn equal_error_rate(curve: &DetCurve) -> f64 {
    let pts = &curve.points;
    // d = FAR - FRR starts at +1 (accept everything) and ends at -1
    // (reject everything), so a sign change always exists
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let da = a.far - a.frr;
        let db = b.far - b.frr;
        if da == 0.0 {
            return a.far;
        }
        if da > 0.0 && db <= 0.0 {
            if db == 0.0 {
                return b.far;
            }
            // interpolate both rates to the crossing of d
            let alpha = da / (da - db);
            return a.far + alpha * (b.far - a.far);
        }
    }
    // fall back to the point with the smallest |FAR - FRR|
    pts.iter()
        .min_by(|p, q| {
            (p.far - p.frr)
                .abs()
                .partial_cmp(&(q.far - q.frr).abs())
                .expect("finite rates")
        })
        .map(|p| (p.far + p.frr) / 2.0)
        .expect("curve has points")
}

/// Convenience: DET + EER in one step.
pub fn eer_from_scores(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    Ok(equal_error_rate(&det_points(scores, labels)?))
}

/// Per-city one-vs-rest EER values and their arithmetic mean.
#[derive(Debug, Clone, Serialize)]
pub struct EerReport {
    pub per_city: BTreeMap<String, f64>,
    pub mean_eer: f64,
    pub positives: BTreeMap<String, usize>,
}

pub fn mean_eer(per_city: &BTreeMap<String, f64>) -> Result<EerReport, EvalError> {
    if per_city.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mean = per_city.values().sum::<f64>() / per_city.len() as f64;
    Ok(EerReport {
        per_city: per_city.clone(),
        mean_eer: mean,
        positives: BTreeMap::new(),
    })
}

/// One evaluated basis subset.
#[derive(Debug, Clone, Serialize)]
pub struct AblationEntry {
    pub size: usize,
    pub classes: Vec<String>,
    pub mean_eer: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub entries: Vec<AblationEntry>,
    /// Mean EER across the groups of each subset size.
    pub mean_by_size: BTreeMap<usize, f64>,
    pub seed: u64,
}

/// Default ladder: five pairs, two quintuples, one octuple, plus the full
/// ten-class reference point.
pub fn default_sizes_plan() -> Vec<(usize, usize)> {
    vec![(2, 5), (5, 2), (8, 1), (10, 1)]
}

/// Run the basis-count ablation: for every (size, group count) in the plan,
/// sample that many distinct classes with the seeded generator, reduce the
/// basis by column selection, and evaluate the supplied pipeline on it.
pub fn ablation_run<F, E>(
    full_basis: &BasisMatrix,
    sizes_plan: &[(usize, usize)],
    seed: u64,
    mut run: F,
) -> Result<AblationReport, E>
where
    F: FnMut(&BasisMatrix) -> Result<EerReport, E>,
    E: From<EvalError>,
{
    let k = full_basis.num_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for &(size, groups) in sizes_plan {
        if size > k {
            return Err(EvalError::SizeExceedsBasis { size, classes: k }.into());
        }
        for _ in 0..groups {
            // partial Fisher-Yates over class indices, then canonical order
            let mut pool: Vec<usize> = (0..k).collect();
            for i in 0..size {
                let j = rng.random_range(i..k);
                pool.swap(i, j);
            }
            let mut picked = pool[..size].to_vec();
            picked.sort_unstable();
            let classes: Vec<String> =
                picked.iter().map(|&i| full_basis.class_names[i].clone()).collect();
            let reduced = full_basis
                .select_classes(&classes)
                .expect("selected classes exist in the basis");
            let report = run(&reduced)?;
            entries.push(AblationEntry {
                size,
                classes,
                mean_eer: report.mean_eer,
            });
        }
    }
    let mut by_size: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for e in &entries {
        let slot = by_size.entry(e.size).or_insert((0.0, 0));
        slot.0 += e.mean_eer;
        slot.1 += 1;
    }
    let mean_by_size = by_size
        .into_iter()
        .map(|(s, (sum, n))| (s, sum / n as f64))
        .collect();
    Ok(AblationReport {
        entries,
        mean_by_size,
        seed,
    })
}
