//! Random forest of unpruned CART trees with Gini splits.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::blob::{BlobReader, BlobWriter, KIND_FOREST};
use super::{cap_frames_per_video, ClassifyError, FeatureKind, FrameDataset};
use crate::derive_seed;

#[derive(Debug, Clone)]
pub struct ForestParams {
    pub n_trees: usize,
    pub seed: u64,
    /// Seeded per-video frame subsampling applied before training.
    pub max_frames_per_video: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            seed: 0,
            max_frames_per_video: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        counts: Vec<u32>,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn leaf_counts(&self, row: ArrayView1<'_, f64>) -> &[u32] {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { counts } => return counts,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[*feature as usize] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    trees: Vec<Tree>,
    pub class_names: Vec<String>,
    pub feature_kind: FeatureKind,
    pub n_features: usize,
    pub seed: u64,
    pub warnings: Vec<String>,
}

impl ForestModel {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

/// Train a forest: each tree fits a bootstrap sample, splits on Gini
/// impurity over floor(sqrt(D)) random candidate features, and grows until
/// nodes are pure or unsplittable.
pub fn train_random_forest(
    data: &FrameDataset,
    params: &ForestParams,
) -> Result<ForestModel, ClassifyError> {
    if data.features.nrows() == 0 {
        return Err(ClassifyError::EmptyData);
    }
    let data_capped;
    let data = match params.max_frames_per_video {
        Some(cap) => {
            data_capped = cap_frames_per_video(data, cap, params.seed);
            &data_capped
        }
        None => data,
    };

    let n_classes = data.class_names.len();
    let mut warnings = Vec::new();
    let distinct: std::collections::BTreeSet<usize> = data.labels.iter().copied().collect();
    if distinct.len() < 2 {
        warnings.push(
            "SingleClassData: training labels contain one class; the forest degenerates to a constant predictor"
                .to_string(),
        );
    }

    let trees: Vec<Tree> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, "rf-tree", t as u64));
            grow_tree(&data.features, &data.labels, n_classes, &mut rng)
        })
        .collect();

    Ok(ForestModel {
        trees,
        class_names: data.class_names.clone(),
        feature_kind: data.feature_kind,
        n_features: data.features.ncols(),
        seed: params.seed,
        warnings,
    })
}

fn gini(counts: &[u32], total: u32) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts
        .iter()
        .map(|&c| {
            let p = c as f64 / t;
            p * p
        })
        .sum::<f64>()
}

fn grow_tree(x: &Array2<f64>, y: &[usize], n_classes: usize, rng: &mut ChaCha8Rng) -> Tree {
    let n = x.nrows();
    let d = x.ncols();
    let n_candidates = ((d as f64).sqrt().floor() as usize).max(1);

    // bootstrap sample, with replacement, size n
    let sample: Vec<u32> = (0..n).map(|_| rng.random_range(0..n) as u32).collect();

    let mut nodes: Vec<Node> = Vec::new();
    // work items: (node slot, sample indices)
    let mut stack: Vec<(usize, Vec<u32>)> = Vec::new();
    nodes.push(Node::Leaf { counts: vec![] }); // placeholder root
    stack.push((0, sample));

    let mut feature_pool: Vec<u32> = (0..d as u32).collect();

    while let Some((slot, indices)) = stack.pop() {
        let mut counts = vec![0u32; n_classes];
        for &i in &indices {
            counts[y[i as usize]] += 1;
        }
        let total = indices.len() as u32;
        let parent_gini = gini(&counts, total);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;

        if pure || indices.len() < 2 {
            nodes[slot] = Node::Leaf { counts };
            continue;
        }

        // sample candidate features without replacement (partial Fisher-Yates)
        for k in 0..n_candidates.min(d) {
            let j = rng.random_range(k..d);
            feature_pool.swap(k, j);
        }

        let mut best: Option<(f64, u32, f64)> = None; // (weighted impurity, feature, threshold)
        let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(indices.len());
        for &f in &feature_pool[..n_candidates.min(d)] {
            pairs.clear();
            pairs.extend(
                indices
                    .iter()
                    .map(|&i| (x[[i as usize, f as usize]], y[i as usize])),
            );
            pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite features"));

            let mut left = vec![0u32; n_classes];
            let mut n_left = 0u32;
            let mut right = counts.clone();
            for w in 0..pairs.len() - 1 {
                let (v, label) = pairs[w];
                left[label] += 1;
                right[label] -= 1;
                n_left += 1;
                let v_next = pairs[w + 1].0;
                if v_next <= v {
                    continue; // no boundary between equal values
                }
                let n_right = total - n_left;
                let weighted = (n_left as f64 * gini(&left, n_left)
                    + n_right as f64 * gini(&right, n_right))
                    / total as f64;
                if best.map_or(true, |(b, _, _)| weighted < b) {
                    best = Some((weighted, f, v + (v_next - v) / 2.0));
                }
            }
        }

        match best {
            Some((weighted, feature, threshold)) if weighted < parent_gini - 1e-15 => {
                let (mut li, mut ri) = (Vec::new(), Vec::new());
                for &i in &indices {
                    if x[[i as usize, feature as usize]] <= threshold {
                        li.push(i);
                    } else {
                        ri.push(i);
                    }
                }
                debug_assert!(!li.is_empty() && !ri.is_empty());
                let left = nodes.len() as u32;
                nodes.push(Node::Leaf { counts: vec![] });
                let right = nodes.len() as u32;
                nodes.push(Node::Leaf { counts: vec![] });
                nodes[slot] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
                stack.push((left as usize, li));
                stack.push((right as usize, ri));
            }
            _ => {
                // no candidate feature separates the samples
                nodes[slot] = Node::Leaf { counts };
            }
        }
    }

    Tree { nodes }
}

/// Average the leaf class-frequency distributions across trees; every output
/// row sums to 1.
pub fn predict_forest(model: &ForestModel, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, ClassifyError> {
    if x.ncols() != model.n_features {
        return Err(ClassifyError::DimensionMismatch(format!(
            "input width {} does not match training width {}",
            x.ncols(),
            model.n_features
        )));
    }
    let c = model.class_names.len();
    let rows: Vec<Vec<f64>> = (0..x.nrows())
        .into_par_iter()
        .map(|r| {
            let row = x.row(r);
            let mut acc = vec![0.0; c];
            for tree in &model.trees {
                let counts = tree.leaf_counts(row);
                let total: u32 = counts.iter().sum();
                for (a, &cnt) in acc.iter_mut().zip(counts) {
                    *a += cnt as f64 / total as f64;
                }
            }
            let k = model.trees.len() as f64;
            acc.iter_mut().for_each(|v| *v /= k);
            acc
        })
        .collect();
    let mut flat = Vec::with_capacity(x.nrows() * c);
    for r in rows {
        flat.extend(r);
    }
    Ok(Array2::from_shape_vec((x.nrows(), c), flat).expect("rows by classes"))
}

#[derive(Serialize, Deserialize)]
struct ForestHeader {
    class_names: Vec<String>,
    feature_kind: FeatureKind,
    n_features: usize,
    seed: u64,
    n_trees: usize,
    warnings: Vec<String>,
}

pub fn serialize_forest(model: &ForestModel) -> Vec<u8> {
    let header = serde_json::to_string(&ForestHeader {
        class_names: model.class_names.clone(),
        feature_kind: model.feature_kind,
        n_features: model.n_features,
        seed: model.seed,
        n_trees: model.trees.len(),
        warnings: model.warnings.clone(),
    })
    .expect("header serializes");
    let mut w = BlobWriter::new(KIND_FOREST, &header);
    for tree in &model.trees {
        w.u32(tree.nodes.len() as u32);
        for node in &tree.nodes {
            match node {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    w.i32(*feature as i32);
                    w.f64(*threshold);
                    w.u32(*left);
                    w.u32(*right);
                }
                Node::Leaf { counts } => {
                    w.i32(-1);
                    w.u32(counts.len() as u32);
                    for &c in counts {
                        w.u32(c);
                    }
                }
            }
        }
    }
    w.finish()
}

pub fn deserialize_forest(bytes: &[u8]) -> Result<ForestModel, ClassifyError> {
    let (mut r, header) = BlobReader::new(bytes, KIND_FOREST)?;
    let header: ForestHeader =
        serde_json::from_str(&header).map_err(|e| ClassifyError::BadModel(e.to_string()))?;
    let mut trees = Vec::with_capacity(header.n_trees);
    for _ in 0..header.n_trees {
        let n_nodes = r.u32()? as usize;
        let mut nodes = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            let tag = r.i32()?;
            if tag < 0 {
                let k = r.u32()? as usize;
                let mut counts = Vec::with_capacity(k);
                for _ in 0..k {
                    counts.push(r.u32()?);
                }
                nodes.push(Node::Leaf { counts });
            } else {
                nodes.push(Node::Split {
                    feature: tag as u32,
                    threshold: r.f64()?,
                    left: r.u32()?,
                    right: r.u32()?,
                });
            }
        }
        trees.push(Tree { nodes });
    }
    Ok(ForestModel {
        trees,
        class_names: header.class_names,
        feature_kind: header.feature_kind,
        n_features: header.n_features,
        seed: header.seed,
        warnings: header.warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn blob_dataset(n_per: usize) -> FrameDataset {
        // two well-separated 2-D Gaussian-ish blobs
        let mut rng = ChaCha8Rng::seed_from_u64(99);
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
    fn separable_blobs_reach_perfect_training_accuracy() {
        let data = blob_dataset(100);
        let model = train_random_forest(
            &data,
            &ForestParams {
                n_trees: 25,
                seed: 1,
                max_frames_per_video: None,
            },
        )
        .unwrap();
        let posts = predict_forest(&model, data.features.view()).unwrap();
        let mut correct = 0;
        for (i, row) in posts.rows().into_iter().enumerate() {
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            if pred == data.labels[i] {
                correct += 1;
            }
        }
        assert_eq!(correct, 200);
    }

    #[test]
    fn single_class_data_degenerates_with_a_warning() {
        let mut data = blob_dataset(20);
        data.labels.iter_mut().for_each(|l| *l = 1);
        let model = train_random_forest(&data, &ForestParams::default()).unwrap();
        assert!(model.warnings.iter().any(|w| w.contains("SingleClassData")));
        let posts = predict_forest(&model, data.features.view()).unwrap();
        for row in posts.rows() {
            assert_eq!(row[0], 0.0);
            assert_eq!(row[1], 1.0);
        }
    }

    #[test]
    fn empty_data_is_an_error() {
        let data = FrameDataset {
            features: Array2::zeros((0, 2)),
            labels: vec![],
            group_ids: vec![],
            class_names: vec!["a".into()],
            feature_kind: FeatureKind::Statistical,
        };
        assert!(matches!(
            train_random_forest(&data, &ForestParams::default()),
            Err(ClassifyError::EmptyData)
        ));
    }

    #[test]
    fn same_seed_gives_bit_identical_models() {
        let data = blob_dataset(50);
        let params = ForestParams {
            n_trees: 10,
            seed: 7,
            max_frames_per_video: None,
        };
        let a = serialize_forest(&train_random_forest(&data, &params).unwrap());
        let b = serialize_forest(&train_random_forest(&data, &params).unwrap());
        assert_eq!(a, b);
        let c = serialize_forest(
            &train_random_forest(
                &data,
                &ForestParams {
                    seed: 8,
                    ..params
                },
            )
            .unwrap(),
        );
        assert_ne!(a, c);
    }

    #[test]
    fn serialization_round_trips() {
        let data = blob_dataset(30);
        let model = train_random_forest(
            &data,
            &ForestParams {
                n_trees: 5,
                seed: 3,
                max_frames_per_video: None,
            },
        )
        .unwrap();
        let bytes = serialize_forest(&model);
        let back = deserialize_forest(&bytes).unwrap();
        assert_eq!(model, back);
    }

    #[test]
    fn posterior_rows_sum_to_one() {
        let data = blob_dataset(40);
        let model = train_random_forest(
            &data,
            &ForestParams {
                n_trees: 15,
                seed: 2,
                max_frames_per_video: None,
            },
        )
        .unwrap();
        let posts = predict_forest(&model, data.features.view()).unwrap();
        for row in posts.rows() {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn hand_built_three_tree_vote() {
        // trees voting (a, a, b) -> P(a) = 2/3
        let leaf_a = Tree {
            nodes: vec![Node::Leaf { counts: vec![5, 0] }],
        };
        let leaf_b = Tree {
            nodes: vec![Node::Leaf { counts: vec![0, 2] }],
        };
        let model = ForestModel {
            trees: vec![leaf_a.clone(), leaf_a, leaf_b],
            class_names: vec!["a".into(), "b".into()],
            feature_kind: FeatureKind::Statistical,
            n_features: 1,
            seed: 0,
            warnings: vec![],
        };
        let x = Array2::from_shape_vec((1, 1), vec![0.0]).unwrap();
        let posts = predict_forest(&model, x.view()).unwrap();
        assert!((posts[[0, 0]] - 2.0 / 3.0).abs() < 1e-12);
        assert!((posts[[0, 1]] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let data = blob_dataset(10);
        let model = train_random_forest(
            &data,
            &ForestParams {
                n_trees: 3,
                seed: 1,
                max_frames_per_video: None,
            },
        )
        .unwrap();
        let x = Array2::zeros((1, 5));
        assert!(matches!(
            predict_forest(&model, x.view()),
            Err(ClassifyError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn training_rows_from_pure_leaves_recover_their_class() {
        // unpruned trees interpolate the training set; a point far inside a
        // blob lands in a pure leaf for almost every tree
        let data = blob_dataset(50);
        let model = train_random_forest(
            &data,
            &ForestParams {
                n_trees: 30,
                seed: 5,
                max_frames_per_video: None,
            },
        )
        .unwrap();
        let x = Array2::from_shape_vec((2, 2), vec![-3.0, -3.0, 3.0, 3.0]).unwrap();
        let posts = predict_forest(&model, x.view()).unwrap();
        assert!(posts[[0, 0]] > 0.95);
        assert!(posts[[1, 1]] > 0.95);
    }
}
