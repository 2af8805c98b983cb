//! Multi-layer perceptron: D -> 1024 -> 1024 -> C with ReLU hidden layers,
//! softmax output, SGD with classic momentum, L2 weight decay, and inverted
//! dropout on both hidden layers during training.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::blob::{BlobReader, BlobWriter, KIND_MLP};
use super::{ClassifyError, FeatureKind, FrameDataset};
use crate::derive_seed;

#[derive(Debug, Clone)]
pub struct MlpHyper {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Hidden layer widths; the pipeline always uses (1024, 1024).
    pub hidden: (usize, usize),
}

impl Default for MlpHyper {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 500,
            momentum: 0.9,
            weight_decay: 1e-6,
            dropout: 0.5,
            epochs: 50,
            seed: 0,
            hidden: (1024, 1024),
        }
    }
}

/// Raw network parameters: weight matrices are (fan_in x fan_out).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl MlpNet {
    /// He-initialized network for the given layer sizes.
    pub fn new(dims: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            weights.push(Array2::from_shape_fn((fan_in, fan_out), |_| normal.sample(rng)));
            biases.push(Array1::zeros(fan_out));
        }
        Self { weights, biases }
    }

    /// All-zero network of the given layer sizes (uniform softmax output).
    pub fn zeros(dims: &[usize]) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in dims.windows(2) {
            weights.push(Array2::zeros((w[0], w[1])));
            biases.push(Array1::zeros(w[1]));
        }
        Self { weights, biases }
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    /// Forward pass without dropout; returns softmax probabilities.
    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut a = x.to_owned();
        for l in 0..self.n_layers() {
            let mut z = a.dot(&self.weights[l]) + &self.biases[l];
            if l + 1 < self.n_layers() {
                z.mapv_inplace(|v| v.max(0.0));
            }
            a = z;
        }
        softmax_rows(&mut a);
        a
    }

    /// Mean cross-entropy of labels under the dropout-free forward pass.
    pub fn loss(&self, x: ArrayView2<'_, f64>, y: &[usize]) -> f64 {
        let probs = self.predict_proba(x);
        cross_entropy(&probs, y)
    }

    /// Mean cross-entropy and parameter gradients via backpropagation.
    /// `masks`, when given, are inverted-dropout masks applied to the hidden
    /// activations (one per hidden layer).
    pub fn loss_and_grads(
        &self,
        x: ArrayView2<'_, f64>,
        y: &[usize],
        masks: Option<&[Array2<f64>]>,
    ) -> (f64, Vec<(Array2<f64>, Array1<f64>)>) {
        let n = x.nrows();
        let layers = self.n_layers();
        // forward, keeping post-activation values per layer
        let mut activations: Vec<Array2<f64>> = Vec::with_capacity(layers);
        let mut a = x.to_owned();
        for l in 0..layers {
            let mut z = a.dot(&self.weights[l]) + &self.biases[l];
            if l + 1 < layers {
                z.mapv_inplace(|v| v.max(0.0));
                if let Some(masks) = masks {
                    z *= &masks[l];
                }
            }
            activations.push(z.clone());
            a = z;
        }
        let mut probs = activations[layers - 1].clone();
        softmax_rows(&mut probs);
        let loss = cross_entropy(&probs, y);

        // delta at the softmax input
        let mut delta = probs;
        for (i, &label) in y.iter().enumerate() {
            delta[[i, label]] -= 1.0;
        }
        delta /= n as f64;

        let mut grads: Vec<(Array2<f64>, Array1<f64>)> = vec![Default::default(); layers];
        for l in (0..layers).rev() {
            let input = if l == 0 {
                x.to_owned()
            } else {
                activations[l - 1].clone()
            };
            let gw = input.t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            grads[l] = (gw, gb);
            if l > 0 {
                let mut back = delta.dot(&self.weights[l].t());
                // through dropout and ReLU: the stored activation is already
                // masked, so a zero activation kills the gradient either way
                ndarray::Zip::from(&mut back)
                    .and(&activations[l - 1])
                    .for_each(|b, &act| {
                        if act <= 0.0 {
                            *b = 0.0;
                        }
                    });
                if let Some(masks) = masks {
                    back *= &masks[l - 1];
                }
                delta = back;
            }
        }
        (loss, grads)
    }
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

fn cross_entropy(probs: &Array2<f64>, y: &[usize]) -> f64 {
    // no clamping: a zero or NaN probability must surface as a non-finite
    // loss so training aborts instead of silently continuing
    let mut acc = 0.0;
    for (i, &label) in y.iter().enumerate() {
        acc -= probs[[i, label]].ln();
    }
    acc / y.len() as f64
}

#[derive(Debug, Clone)]
pub struct MlpModel {
    pub net: MlpNet,
    /// Per-feature standardization moments from the training data.
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub class_names: Vec<String>,
    pub feature_kind: FeatureKind,
    pub seed: u64,
    /// Mean training cross-entropy per epoch.
    pub loss_curve: Vec<f64>,
}

impl MlpModel {
    pub fn n_features(&self) -> usize {
        self.feature_mean.len()
    }

    fn standardize(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                let std = self.feature_std[j];
                let std = if std < 1e-12 { 1.0 } else { std };
                *v = (*v - self.feature_mean[j]) / std;
            }
        }
        out
    }
}

/// Train with SGD: seeded shuffling each epoch, classic momentum, L2 decay
/// on the weights, inverted dropout on the hidden activations.
pub fn train_mlp(data: &FrameDataset, hyper: &MlpHyper) -> Result<MlpModel, ClassifyError> {
    let n = data.features.nrows();
    if n == 0 {
        return Err(ClassifyError::EmptyData);
    }
    let d = data.features.ncols();
    let c = data.class_names.len();
    let batch = hyper.batch_size.min(n).max(1);

    // standardization moments from the training set
    let mut mean = vec![0.0; d];
    let mut std = vec![0.0; d];
    for j in 0..d {
        let col = data.features.column(j);
        let m = col.sum() / n as f64;
        let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
        mean[j] = m;
        std[j] = v.sqrt();
    }
    let mut x = data.features.clone();
    for mut row in x.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            let s = if std[j] < 1e-12 { 1.0 } else { std[j] };
            *v = (*v - mean[j]) / s;
        }
    }

    let dims = [d, hyper.hidden.0, hyper.hidden.1, c];
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(hyper.seed, "mlp", 0));
    let mut net = MlpNet::new(&dims, &mut rng);
    let mut velocity: Vec<(Array2<f64>, Array1<f64>)> = net
        .weights
        .iter()
        .zip(&net.biases)
        .map(|(w, b)| (Array2::zeros(w.raw_dim()), Array1::zeros(b.raw_dim())))
        .collect();

    let keep = 1.0 - hyper.dropout;
    let mut order: Vec<usize> = (0..n).collect();
    let mut loss_curve = Vec::with_capacity(hyper.epochs);

    for epoch in 0..hyper.epochs {
        // Fisher-Yates with the training rng; deterministic given the seed
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for (batch_idx, chunk) in order.chunks(batch).enumerate() {
            let xb = ndarray::stack(
                Axis(0),
                &chunk.iter().map(|&i| x.row(i)).collect::<Vec<_>>(),
            )
            .expect("uniform row widths");
            let yb: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();

            let masks: Option<Vec<Array2<f64>>> = if hyper.dropout > 0.0 {
                Some(
                    [hyper.hidden.0, hyper.hidden.1]
                        .iter()
                        .map(|&h| {
                            Array2::from_shape_fn((chunk.len(), h), |_| {
                                if rng.random::<f64>() < keep {
                                    1.0 / keep
                                } else {
                                    0.0
                                }
                            })
                        })
                        .collect(),
                )
            } else {
                None
            };

            let (loss, grads) = net.loss_and_grads(xb.view(), &yb, masks.as_deref());
            if !loss.is_finite() {
                return Err(ClassifyError::DivergedLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            epoch_loss += loss;
            n_batches += 1;

            for l in 0..net.n_layers() {
                let (gw, gb) = &grads[l];
                let (vw, vb) = &mut velocity[l];
                ndarray::Zip::from(&mut *vw)
                    .and(gw)
                    .and(&net.weights[l])
                    .for_each(|v, &g, &w| {
                        *v = hyper.momentum * *v
                            - hyper.learning_rate * (g + hyper.weight_decay * w);
                    });
                net.weights[l] += &*vw;
                ndarray::Zip::from(&mut *vb).and(gb).for_each(|v, &g| {
                    *v = hyper.momentum * *v - hyper.learning_rate * g;
                });
                net.biases[l] += &*vb;
            }
        }
        loss_curve.push(epoch_loss / n_batches as f64);
    }

    Ok(MlpModel {
        net,
        feature_mean: mean,
        feature_std: std,
        class_names: data.class_names.clone(),
        feature_kind: data.feature_kind,
        seed: hyper.seed,
        loss_curve,
    })
}

/// Standardize with the stored moments and run the dropout-free forward
/// pass; rows are softmax distributions.
pub fn predict_mlp(model: &MlpModel, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, ClassifyError> {
    if x.ncols() != model.n_features() {
        return Err(ClassifyError::DimensionMismatch(format!(
            "input width {} does not match training width {}",
            x.ncols(),
            model.n_features()
        )));
    }
    let std = model.standardize(x);
    Ok(model.net.predict_proba(std.view()))
}

#[derive(Serialize, Deserialize)]
struct MlpHeader {
    class_names: Vec<String>,
    feature_kind: FeatureKind,
    seed: u64,
    dims: Vec<usize>,
    loss_curve: Vec<f64>,
}

pub fn serialize_mlp(model: &MlpModel) -> Vec<u8> {
    let mut dims = vec![model.net.weights[0].nrows()];
    dims.extend(model.net.weights.iter().map(|w| w.ncols()));
    let header = serde_json::to_string(&MlpHeader {
        class_names: model.class_names.clone(),
        feature_kind: model.feature_kind,
        seed: model.seed,
        dims,
        loss_curve: model.loss_curve.clone(),
    })
    .expect("header serializes");
    let mut w = BlobWriter::new(KIND_MLP, &header);
    w.f64s(model.feature_mean.iter().copied());
    w.f64s(model.feature_std.iter().copied());
    for (wm, b) in model.net.weights.iter().zip(&model.net.biases) {
        w.f64s(wm.iter().copied());
        w.f64s(b.iter().copied());
    }
    w.finish()
}

pub fn deserialize_mlp(bytes: &[u8]) -> Result<MlpModel, ClassifyError> {
    let (mut r, header) = BlobReader::new(bytes, KIND_MLP)?;
    let header: MlpHeader =
        serde_json::from_str(&header).map_err(|e| ClassifyError::BadModel(e.to_string()))?;
    let d = header.dims[0];
    let feature_mean = r.f64s(d)?;
    let feature_std = r.f64s(d)?;
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for w in header.dims.windows(2) {
        let flat = r.f64s(w[0] * w[1])?;
        weights.push(
            Array2::from_shape_vec((w[0], w[1]), flat)
                .map_err(|e| ClassifyError::BadModel(e.to_string()))?,
        );
        biases.push(Array1::from_vec(r.f64s(w[1])?));
    }
    Ok(MlpModel {
        net: MlpNet { weights, biases },
        feature_mean,
        feature_std,
        class_names: header.class_names,
        feature_kind: header.feature_kind,
        seed: header.seed,
        loss_curve: header.loss_curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn toy_dataset(n_per: usize, seed: u64) -> FrameDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for i in 0..3 * n_per {
            let class = i % 3;
            let (cx, cy) = [(0.0, 4.0), (-4.0, -2.0), (4.0, -2.0)][class];
            feats.push(cx + rng.random_range(-1.0..1.0));
            feats.push(cy + rng.random_range(-1.0..1.0));
            labels.push(class);
        }
        FrameDataset {
            features: Array2::from_shape_vec((3 * n_per, 2), feats).unwrap(),
            labels,
            group_ids: (0..3 * n_per as u32).collect(),
            class_names: vec!["a".into(), "b".into(), "c".into()],
            feature_kind: FeatureKind::Statistical,
        }
    }

    fn small_hyper(epochs: usize, seed: u64) -> MlpHyper {
        MlpHyper {
            learning_rate: 0.05,
            batch_size: 32,
            dropout: 0.0,
            epochs,
            seed,
            hidden: (16, 16),
            ..MlpHyper::default()
        }
    }

    #[test]
    fn gradients_match_central_finite_differences() {
        // D=4, widths 8-8, C=3, dropout disabled, double precision
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let dims = [4usize, 8, 8, 3];
        let net = MlpNet::new(&dims, &mut rng);
        let x = Array2::from_shape_fn((6, 4), |_| rng.random_range(-1.0..1.0));
        let y = vec![0usize, 1, 2, 1, 0, 2];
        let (_, grads) = net.loss_and_grads(x.view(), &y, None);

        let eps = 1e-6;
        let mut max_rel = 0.0f64;
        for l in 0..net.n_layers() {
            for idx in 0..net.weights[l].len() {
                let mut plus = net.clone();
                let mut minus = net.clone();
                plus.weights[l].as_slice_mut().unwrap()[idx] += eps;
                minus.weights[l].as_slice_mut().unwrap()[idx] -= eps;
                let fd = (plus.loss(x.view(), &y) - minus.loss(x.view(), &y)) / (2.0 * eps);
                let an = grads[l].0.as_slice().unwrap()[idx];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
                max_rel = max_rel.max(rel);
            }
            for idx in 0..net.biases[l].len() {
                let mut plus = net.clone();
                let mut minus = net.clone();
                plus.biases[l][idx] += eps;
                minus.biases[l][idx] -= eps;
                let fd = (plus.loss(x.view(), &y) - minus.loss(x.view(), &y)) / (2.0 * eps);
                let an = grads[l].1[idx];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
                max_rel = max_rel.max(rel);
            }
        }
        assert!(max_rel <= 1e-4, "max relative gradient error {max_rel}");
    }

    #[test]
    fn training_reduces_cross_entropy_on_separable_data() {
        let data = toy_dataset(30, 2);
        let model = train_mlp(&data, &small_hyper(200, 3)).unwrap();
        let first = model.loss_curve[0];
        let last = *model.loss_curve.last().unwrap();
        assert!(
            last < first,
            "final loss {last} not below initial loss {first}"
        );
        // and the model actually separates the blobs
        let posts = predict_mlp(&model, data.features.view()).unwrap();
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
        assert!(correct as f64 >= 0.95 * 90.0, "train accuracy {correct}/90");
    }

    #[test]
    fn same_seed_gives_identical_weights() {
        let data = toy_dataset(20, 4);
        let hyper = MlpHyper {
            dropout: 0.5,
            epochs: 5,
            seed: 42,
            hidden: (16, 16),
            batch_size: 16,
            learning_rate: 0.01,
            ..MlpHyper::default()
        };
        let a = serialize_mlp(&train_mlp(&data, &hyper).unwrap());
        let b = serialize_mlp(&train_mlp(&data, &hyper).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn zero_network_predicts_uniformly() {
        let net = MlpNet::zeros(&[4, 8, 8, 5]);
        let x = Array2::from_shape_fn((3, 4), |(i, j)| (i + j) as f64);
        let probs = net.predict_proba(x.view());
        for row in probs.rows() {
            for &p in row {
                assert!((p - 0.2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn posterior_rows_are_distributions() {
        let data = toy_dataset(10, 6);
        let model = train_mlp(&data, &small_hyper(10, 7)).unwrap();
        let posts = predict_mlp(&model, data.features.view()).unwrap();
        for row in posts.rows() {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn diverged_loss_is_reported() {
        let mut data = toy_dataset(10, 8);
        // blow up the inputs so a huge learning rate overflows the logits
        data.features.mapv_inplace(|v| v * 1e3);
        let hyper = MlpHyper {
            learning_rate: 1e150,
            batch_size: 8,
            dropout: 0.0,
            epochs: 3,
            seed: 1,
            hidden: (8, 8),
            weight_decay: 0.0,
            ..MlpHyper::default()
        };
        match train_mlp(&data, &hyper) {
            Err(ClassifyError::DivergedLoss { .. }) => {}
            other => panic!("expected DivergedLoss, got {other:?}"),
        }
    }

    #[test]
    fn serialization_round_trips() {
        let data = toy_dataset(10, 9);
        let model = train_mlp(&data, &small_hyper(3, 11)).unwrap();
        let bytes = serialize_mlp(&model);
        let back = deserialize_mlp(&bytes).unwrap();
        assert_eq!(model.net, back.net);
        assert_eq!(model.feature_mean, back.feature_mean);
        assert_eq!(model.feature_std, back.feature_std);
        assert_eq!(model.class_names, back.class_names);
        // predictions agree bit-for-bit
        let a = predict_mlp(&model, data.features.view()).unwrap();
        let b = predict_mlp(&back, data.features.view()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn standardization_uses_stored_moments() {
        let data = toy_dataset(20, 10);
        let model = train_mlp(&data, &small_hyper(5, 12)).unwrap();
        // shifting inputs by the stored mean changes predictions consistently:
        // a constant row maps to the standardized origin
        let x = Array2::from_shape_vec((1, 2), model.feature_mean.clone()).unwrap();
        let std = model.standardize(x.view());
        assert!(std.iter().all(|&v| v.abs() < 1e-12));
    }
}
