//! Frame-level classifiers and video-level score aggregation.

mod blob;
mod forest;
mod mlp;

pub use forest::{
    deserialize_forest, predict_forest, serialize_forest, train_random_forest, ForestModel,
    ForestParams,
};
pub use mlp::{deserialize_mlp, predict_mlp, serialize_mlp, train_mlp, MlpHyper, MlpModel, MlpNet};

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::derive_seed;

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("empty training data")]
    EmptyData,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("training loss diverged at epoch {epoch}, batch {batch}")]
    DivergedLoss { epoch: usize, batch: usize },
    #[error("empty group: no frames to aggregate")]
    EmptyGroup,
    #[error("bad model blob: {0}")]
    BadModel(String),
}

/// Which representation the classifier consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Statistical,
    Weights,
    LinearCombination,
}

impl FeatureKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureKind::Statistical => "statistical",
            FeatureKind::Weights => "weights",
            FeatureKind::LinearCombination => "linear_combination",
        }
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "statistical" => Ok(FeatureKind::Statistical),
            "weights" => Ok(FeatureKind::Weights),
            "linear_combination" => Ok(FeatureKind::LinearCombination),
            other => Err(format!(
                "unknown feature kind '{other}' (expected statistical | weights | linear_combination)"
            )),
        }
    }
}

/// Frame-level training or evaluation rows.
#[derive(Debug, Clone)]
pub struct FrameDataset {
    /// N x D feature rows.
    pub features: Array2<f64>,
    /// City index per frame.
    pub labels: Vec<usize>,
    /// Video index per frame.
    pub group_ids: Vec<u32>,
    pub class_names: Vec<String>,
    pub feature_kind: FeatureKind,
}

/// Video-level posterior scores, one row per video.
#[derive(Debug, Clone)]
pub struct ScoreMatrix {
    pub scores: Array2<f64>,
    pub video_ids: Vec<String>,
    pub class_names: Vec<String>,
}

/// Keep at most `cap` frames per video, sampled without replacement with a
/// per-video derived seed, preserving frame order within each video.
pub fn cap_frames_per_video(data: &FrameDataset, cap: usize, seed: u64) -> FrameDataset {
    let mut by_group: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
    for (i, &g) in data.group_ids.iter().enumerate() {
        by_group.entry(g).or_default().push(i);
    }
    let mut keep: Vec<usize> = Vec::new();
    for (g, rows) in &by_group {
        if rows.len() <= cap {
            keep.extend(rows);
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "framecap", *g as u64));
        // partial Fisher-Yates over the row list, then restore order
        let mut pool = rows.clone();
        for k in 0..cap {
            let j = rng.random_range(k..pool.len());
            pool.swap(k, j);
        }
        let mut picked = pool[..cap].to_vec();
        picked.sort_unstable();
        keep.extend(picked);
    }
    let mut features = Array2::zeros((keep.len(), data.features.ncols()));
    for (dst, &src) in keep.iter().enumerate() {
        features.row_mut(dst).assign(&data.features.row(src));
    }
    FrameDataset {
        features,
        labels: keep.iter().map(|&i| data.labels[i]).collect(),
        group_ids: keep.iter().map(|&i| data.group_ids[i]).collect(),
        class_names: data.class_names.clone(),
        feature_kind: data.feature_kind,
    }
}

/// Mean-pool frame posteriors into one row per video, ordered by ascending
/// group id. Returns the group ids alongside the pooled rows.
pub fn aggregate_video_scores(
    frame_posteriors: ArrayView2<'_, f64>,
    group_ids: &[u32],
) -> Result<(Vec<u32>, Array2<f64>), ClassifyError> {
    if frame_posteriors.nrows() == 0 || frame_posteriors.nrows() != group_ids.len() {
        return Err(ClassifyError::EmptyGroup);
    }
    let mut by_group: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
    for (i, &g) in group_ids.iter().enumerate() {
        by_group.entry(g).or_default().push(i);
    }
    let c = frame_posteriors.ncols();
    let mut scores = Array2::zeros((by_group.len(), c));
    let mut ids = Vec::with_capacity(by_group.len());
    for (v, (g, rows)) in by_group.iter().enumerate() {
        ids.push(*g);
        let inv = 1.0 / rows.len() as f64;
        for &r in rows {
            for j in 0..c {
                scores[[v, j]] += frame_posteriors[[r, j]] * inv;
            }
        }
    }
    Ok((ids, scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn single_frame_video_keeps_its_row() {
        let posts = array![[0.25, 0.75]];
        let (ids, scores) = aggregate_video_scores(posts.view(), &[3]).unwrap();
        assert_eq!(ids, vec![3]);
        assert_eq!(scores, array![[0.25, 0.75]]);
    }

    #[test]
    fn two_frames_average() {
        let posts = array![[0.2, 0.8], [0.6, 0.4]];
        let (_, scores) = aggregate_video_scores(posts.view(), &[1, 1]).unwrap();
        assert!((scores[[0, 0]] - 0.4).abs() < 1e-12);
        assert!((scores[[0, 1]] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn frame_order_is_irrelevant() {
        let posts = array![[0.2, 0.8], [0.6, 0.4], [0.5, 0.5], [0.1, 0.9]];
        let (ids_a, a) = aggregate_video_scores(posts.view(), &[2, 1, 2, 1]).unwrap();
        let shuffled = array![[0.5, 0.5], [0.1, 0.9], [0.2, 0.8], [0.6, 0.4]];
        let (ids_b, b) = aggregate_video_scores(shuffled.view(), &[2, 1, 2, 1]).unwrap();
        assert_eq!(ids_a, ids_b);
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_input_is_rejected() {
        let posts = Array2::<f64>::zeros((0, 2));
        assert!(matches!(
            aggregate_video_scores(posts.view(), &[]),
            Err(ClassifyError::EmptyGroup)
        ));
    }

    #[test]
    fn aggregated_rows_sum_to_one() {
        let posts = array![[0.2, 0.8], [0.6, 0.4], [1.0, 0.0]];
        let (_, scores) = aggregate_video_scores(posts.view(), &[1, 1, 5]).unwrap();
        for row in scores.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn frame_cap_is_seeded_and_preserves_order() {
        let features = Array2::from_shape_fn((10, 1), |(i, _)| i as f64);
        let data = FrameDataset {
            features,
            labels: vec![0; 10],
            group_ids: vec![1, 1, 1, 1, 1, 2, 2, 2, 2, 2],
            class_names: vec!["a".into()],
            feature_kind: FeatureKind::Statistical,
        };
        let a = cap_frames_per_video(&data, 3, 7);
        let b = cap_frames_per_video(&data, 3, 7);
        assert_eq!(a.features, b.features);
        assert_eq!(a.group_ids, vec![1, 1, 1, 2, 2, 2]);
        // rows within each video stay in ascending original order
        let g1: Vec<f64> = a.features.column(0).iter().take(3).copied().collect();
        assert!(g1.windows(2).all(|w| w[0] < w[1]));
    }

    fn blobs_2d(n_per: usize, seed: u64) -> FrameDataset {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for i in 0..2 * n_per {
            let class = i % 2;
            let center = if class == 0 { -3.0 } else { 3.0 };
            feats.push(center + rng.random_range(-1.0..1.0));
            feats.push(center + rng.random_range(-1.0..1.0));
            labels.push(class);
        }
        FrameDataset {
            features: Array2::from_shape_vec((2 * n_per, 2), feats).unwrap(),
            labels,
            group_ids: (0..2 * n_per as u32).collect(),
            class_names: vec!["a".into(), "b".into()],
            feature_kind: FeatureKind::Statistical,
        }
    }

    #[test]
    fn forest_label_permutation_equivariance() {
        // permuting class order permutes posterior columns identically
        let mut data = blobs_2d(40, 13);
        let params = ForestParams {
            n_trees: 10,
            seed: 3,
            max_frames_per_video: None,
        };
        let model = train_random_forest(&data, &params).unwrap();
        let posts = predict_forest(&model, data.features.view()).unwrap();

        data.class_names.swap(0, 1);
        data.labels.iter_mut().for_each(|l| *l = 1 - *l);
        let swapped_model = train_random_forest(&data, &params).unwrap();
        let swapped = predict_forest(&swapped_model, data.features.view()).unwrap();
        for i in 0..posts.nrows() {
            assert!((posts[[i, 0]] - swapped[[i, 1]]).abs() < 1e-12);
            assert!((posts[[i, 1]] - swapped[[i, 0]]).abs() < 1e-12);
        }
    }
}
