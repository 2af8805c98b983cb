//! Urban-sound basis construction and least-squares semantic decomposition.
//!
//! A basis column is the aggregate 275-dim summary vector of one sound
//! class. A soundtrack's per-frame features (as a 275 x T signal) are
//! projected onto the basis column space with the Moore-Penrose
//! pseudo-inverse: `weights = pinv(bases) x signal`. Multiplying back,
//! `bases x weights`, gives the least-squares reconstruction of the signal
//! inside the basis span. Row-normalized weights drive top-k sound
//! evidence retrieval.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use ndarray::Array2;
use thiserror::Error;

use crate::features::{FeatureMatrix, StatVector};
use crate::STAT_DIM;

#[derive(Debug, Error)]
pub enum SemanticError {
    #[error("class '{0}' has no clips")]
    MissingClass(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("too few frames: {got}, need at least {need}")]
    TooFewFrames { got: usize, need: usize },
}

/// How per-clip class vectors are merged into one basis column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisAggregation {
    Mean,
    Median,
}

/// 275 x K matrix with one column per sound class.
#[derive(Debug, Clone)]
pub struct BasisMatrix {
    /// Column j is the basis vector of `class_names[j]`.
    pub columns: Array2<f64>,
    pub class_names: Vec<String>,
    pub clip_counts: Vec<usize>,
}

impl BasisMatrix {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Reduced basis keeping only the named classes, in their current order.
    pub fn select_classes(&self, keep: &[String]) -> Result<BasisMatrix, SemanticError> {
        let indices: Vec<usize> = keep
            .iter()
            .map(|name| {
                self.class_names
                    .iter()
                    .position(|c| c == name)
                    .ok_or_else(|| SemanticError::MissingClass(name.clone()))
            })
            .collect::<Result<_, _>>()?;
        let mut columns = Array2::zeros((STAT_DIM, indices.len()));
        for (dst, &src) in indices.iter().enumerate() {
            columns.column_mut(dst).assign(&self.columns.column(src));
        }
        Ok(BasisMatrix {
            columns,
            class_names: indices.iter().map(|&i| self.class_names[i].clone()).collect(),
            clip_counts: indices.iter().map(|&i| self.clip_counts[i]).collect(),
        })
    }
}

/// K x T semantic weights; row k tracks the presence of class k over time.
/// Entries may be negative: a negative value indicates a null or low
/// presence of the sound.
#[derive(Debug, Clone)]
pub struct WeightsMatrix {
    pub rows: Array2<f64>,
    pub class_names: Vec<String>,
    pub source_id: String,
}

impl WeightsMatrix {
    pub fn num_frames(&self) -> usize {
        self.rows.ncols()
    }
}

/// 275 x T least-squares reconstruction of a signal in the basis span.
#[derive(Debug, Clone)]
pub struct ReconstructionMatrix {
    pub rows: Array2<f64>,
    pub source_id: String,
}

/// Ranked per-class evidence scores for one soundtrack.
#[derive(Debug, Clone)]
pub struct SoundEvidence {
    /// (class name, score), scores non-increasing.
    pub ranked: Vec<(String, f64)>,
}

/// Build the basis from per-class lists of global summary vectors.
///
/// `class_names` fixes the column order; every named class must have at
/// least one vector in `class_vectors`.
pub fn build_basis(
    class_names: &[String],
    class_vectors: &BTreeMap<String, Vec<StatVector>>,
    aggregation: BasisAggregation,
) -> Result<BasisMatrix, SemanticError> {
    let mut columns = Array2::zeros((STAT_DIM, class_names.len()));
    let mut clip_counts = Vec::with_capacity(class_names.len());
    for (j, name) in class_names.iter().enumerate() {
        let vectors = class_vectors
            .get(name)
            .filter(|v| !v.is_empty())
            .ok_or_else(|| SemanticError::MissingClass(name.clone()))?;
        for v in vectors {
            if v.0.len() != STAT_DIM {
                return Err(SemanticError::DimensionMismatch(format!(
                    "class '{}' has a vector of length {}, expected {}",
                    name,
                    v.0.len(),
                    STAT_DIM
                )));
            }
        }
        let column = match aggregation {
            BasisAggregation::Mean => (0..STAT_DIM)
                .map(|d| vectors.iter().map(|v| v.0[d]).sum::<f64>() / vectors.len() as f64)
                .collect::<Vec<f64>>(),
            BasisAggregation::Median => (0..STAT_DIM)
                .map(|d| {
                    let mut vals: Vec<f64> = vectors.iter().map(|v| v.0[d]).collect();
                    vals.sort_by(|a, b| a.partial_cmp(b).expect("finite features"));
                    if vals.len() % 2 == 1 {
                        vals[vals.len() / 2]
                    } else {
                        0.5 * (vals[vals.len() / 2 - 1] + vals[vals.len() / 2])
                    }
                })
                .collect(),
        };
        for (d, v) in column.into_iter().enumerate() {
            columns[[d, j]] = v;
        }
        clip_counts.push(vectors.len());
    }
    Ok(BasisMatrix {
        columns,
        class_names: class_names.to_vec(),
        clip_counts,
    })
}

/// Moore-Penrose pseudo-inverse of a basis, with its numerical rank.
#[derive(Debug, Clone)]
pub struct PseudoInverse {
    /// K x 275.
    pub matrix: Array2<f64>,
    pub rank: usize,
    pub singular_values: Vec<f64>,
}

/// Compute the pseudo-inverse by SVD. Singular values below
/// `max(sigma) * max(rows, cols) * machine epsilon` are treated as zero.
pub fn pseudo_inverse(basis: &BasisMatrix) -> Result<PseudoInverse, SemanticError> {
    pinv_of(&basis.columns)
}

pub(crate) fn pinv_of(matrix: &Array2<f64>) -> Result<PseudoInverse, SemanticError> {
    let (rows, cols) = (matrix.nrows(), matrix.ncols());
    let m = DMatrix::from_row_iterator(rows, cols, matrix.iter().copied());
    let svd = m
        .try_svd(true, true, f64::EPSILON, 10_000)
        .ok_or_else(|| SemanticError::NumericalFailure("SVD did not converge".into()))?;
    let mut singular_values: Vec<f64> = svd.singular_values.iter().copied().collect();
    singular_values.sort_by(|a, b| b.partial_cmp(a).expect("nonnegative singular values"));
    let sigma_max = singular_values.first().copied().unwrap_or(0.0);
    let tol = sigma_max * rows.max(cols) as f64 * f64::EPSILON;
    let rank = singular_values.iter().filter(|&&s| s > tol).count();
    let pinv = svd
        .pseudo_inverse(tol)
        .map_err(|e| SemanticError::NumericalFailure(e.to_string()))?;
    let matrix = Array2::from_shape_fn((cols, rows), |(i, j)| pinv[(i, j)]);
    Ok(PseudoInverse {
        matrix,
        rank,
        singular_values,
    })
}

/// Project a soundtrack's feature matrix onto the basis:
/// `weights = pinv(bases) x signal`, with the signal in its 275 x T
/// orientation (one column per frame).
pub fn project_weights(
    basis: &BasisMatrix,
    pinv: &PseudoInverse,
    signal: &FeatureMatrix,
) -> Result<WeightsMatrix, SemanticError> {
    if signal.rows.ncols() != STAT_DIM {
        return Err(SemanticError::DimensionMismatch(format!(
            "signal rows have width {}, expected {}",
            signal.rows.ncols(),
            STAT_DIM
        )));
    }
    if pinv.matrix.nrows() != basis.num_classes() || pinv.matrix.ncols() != STAT_DIM {
        return Err(SemanticError::DimensionMismatch(format!(
            "pseudo-inverse is {}x{}, basis expects {}x{}",
            pinv.matrix.nrows(),
            pinv.matrix.ncols(),
            basis.num_classes(),
            STAT_DIM
        )));
    }
    let rows = pinv.matrix.dot(&signal.rows.t());
    Ok(WeightsMatrix {
        rows,
        class_names: basis.class_names.clone(),
        source_id: signal.source_id.clone(),
    })
}

/// Reconstruct the signal inside the basis span: `bases x weights`.
pub fn reconstruct(
    basis: &BasisMatrix,
    weights: &WeightsMatrix,
) -> Result<ReconstructionMatrix, SemanticError> {
    if basis.num_classes() != weights.rows.nrows() {
        return Err(SemanticError::DimensionMismatch(format!(
            "basis has {} columns, weights have {} rows",
            basis.num_classes(),
            weights.rows.nrows()
        )));
    }
    Ok(ReconstructionMatrix {
        rows: basis.columns.dot(&weights.rows),
        source_id: weights.source_id.clone(),
    })
}

/// Variance below which a weights row is zeroed instead of standardized.
const VARIANCE_FLOOR: f64 = 1e-12;

/// Standardize each class row to zero mean and unit variance across time
/// within the soundtrack. Rows with variance below the floor become zeros.
pub fn normalize_weights(weights: &WeightsMatrix) -> Result<WeightsMatrix, SemanticError> {
    let t = weights.num_frames();
    if t < 2 {
        return Err(SemanticError::TooFewFrames { got: t, need: 2 });
    }
    let mut rows = weights.rows.clone();
    for mut row in rows.rows_mut() {
        let n = row.len() as f64;
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        if var < VARIANCE_FLOOR {
            row.fill(0.0);
        } else {
            let std = var.sqrt();
            row.mapv_inplace(|v| (v - mean) / std);
        }
    }
    Ok(WeightsMatrix {
        rows,
        class_names: weights.class_names.clone(),
        source_id: weights.source_id.clone(),
    })
}

/// Rank classes by their maximum normalized weight over time and return the
/// top k. Ties break toward the earlier class in basis order.
pub fn top_k_sounds(normalized: &WeightsMatrix, k: usize) -> SoundEvidence {
    assert!(
        k <= normalized.class_names.len(),
        "k = {} exceeds the {} basis classes",
        k,
        normalized.class_names.len()
    );
    let mut scored: Vec<(usize, f64)> = normalized
        .rows
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| (i, row.iter().cloned().fold(f64::NEG_INFINITY, f64::max)))
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite scores").then(a.0.cmp(&b.0)));
    SoundEvidence {
        ranked: scored
            .into_iter()
            .take(k)
            .map(|(i, s)| (normalized.class_names[i].clone(), s))
            .collect(),
    }
}
