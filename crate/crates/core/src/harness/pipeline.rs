//! End-to-end pipeline: manifests -> features (cached) -> basis ->
//! projection -> classifier -> video scores -> per-city EER -> report.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;

use super::cache::{content_hash, FeatureCache};
use super::config::{ClassifierKind, PipelineConfig};
use super::manifest::{load_city_manifest, load_urbansound_manifest, split_city_entries, CityEntry};
use super::report::{RunCounts, RunReport, VideoEvidence};
use super::HarnessError;
use crate::audio_io::{decode_wav_bytes, frame_signal, resample};
use crate::classify::{
    aggregate_video_scores, cap_frames_per_video, predict_forest, predict_mlp, train_mlp,
    train_random_forest, FeatureKind, ForestParams, FrameDataset, MlpHyper, ScoreMatrix,
};
use crate::eval::{ablation_run, eer_from_scores, AblationReport, EvalError};
use crate::features::{mfcc, summarize_context, summarize_global, FeatureMatrix, StatVector};
use crate::semantic::{
    build_basis, normalize_weights, project_weights, pseudo_inverse, reconstruct, top_k_sounds,
    BasisMatrix, PseudoInverse,
};
use crate::{derive_seed, CITIES, URBAN_SOUND_CLASSES};

pub fn extract_context_features(
    path: &Path,
    cfg: &PipelineConfig,
    cache: &FeatureCache,
) -> Result<FeatureMatrix, HarnessError> {
    let source_id = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e.to_string()))?;
    let hash = content_hash(&bytes);
    if let Some(rows) = cache.get(&hash, "context") {
        return Ok(FeatureMatrix {
            rows,
            context_radius: cfg.context_radius,
            source_id,
        });
    }
    let clip = decode_wav_bytes(&bytes, source_id.clone())
        .map_err(|e| HarnessError::audio(&source_id, e))?;
    let clip = if clip.sample_rate_hz != cfg.sample_rate_hz {
        resample(&clip, cfg.sample_rate_hz).map_err(|e| HarnessError::audio(&source_id, e))?
    } else {
        clip
    };
    let frames = frame_signal(&clip).map_err(|e| HarnessError::audio(&source_id, e))?;
    let coeffs = mfcc(&frames, &cfg.mfcc_params())?;
    let mut features = summarize_context(&coeffs)?;
    features.source_id = source_id;
    cache.put(&hash, "context", &features.rows)?;
    Ok(features)
}

fn extract_global_vector(
    path: &Path,
    cfg: &PipelineConfig,
    cache: &FeatureCache,
) -> Result<StatVector, HarnessError> {
    let source_id = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e.to_string()))?;
    let hash = content_hash(&bytes);
    if let Some(m) = cache.get(&hash, "global") {
        return Ok(StatVector(m.into_raw_vec_and_offset().0));
    }
    let clip = decode_wav_bytes(&bytes, source_id.clone())
        .map_err(|e| HarnessError::audio(&source_id, e))?;
    let clip = if clip.sample_rate_hz != cfg.sample_rate_hz {
        resample(&clip, cfg.sample_rate_hz).map_err(|e| HarnessError::audio(&source_id, e))?
    } else {
        clip
    };
    let frames = frame_signal(&clip).map_err(|e| HarnessError::audio(&source_id, e))?;
    let coeffs = mfcc(&frames, &cfg.mfcc_params())?;
    let vector = summarize_global(&coeffs)?;
    let row = Array2::from_shape_vec((1, vector.0.len()), vector.0.clone())
        .expect("one stat vector row");
    cache.put(&hash, "global", &row)?;
    Ok(vector)
}

/// Build the urban-sound basis from the exemplar manifest, extracting (or
/// reusing cached) global vectors.
pub fn basis_from_exemplars(
    cfg: &PipelineConfig,
    cache: &FeatureCache,
) -> Result<BasisMatrix, HarnessError> {
    let entries = load_urbansound_manifest(&cfg.urbansound_manifest)?;
    if entries.is_empty() {
        return Err(HarnessError::InvalidManifest(
            "urbansound manifest has no rows".into(),
        ));
    }
    let dir = cfg
        .urbansound_manifest
        .parent()
        .unwrap_or(Path::new("."))
        .to_path_buf();
    let vectors: Vec<(String, StatVector)> = entries
        .par_iter()
        .map(|e| {
            let path = e.audio_path(&dir);
            extract_global_vector(&path, cfg, cache).map(|v| (e.class_name.clone(), v))
        })
        .collect::<Result<_, _>>()?;
    let mut class_vectors: BTreeMap<String, Vec<StatVector>> = BTreeMap::new();
    for (class, v) in vectors {
        class_vectors.entry(class).or_default().push(v);
    }
    // canonical class order, restricted to the classes present
    let class_names: Vec<String> = URBAN_SOUND_CLASSES
        .iter()
        .filter(|c| class_vectors.contains_key(**c))
        .map(|c| c.to_string())
        .collect();
    Ok(build_basis(&class_names, &class_vectors, cfg.basis_aggregation)?)
}

struct ClipOutput {
    rows: Array2<f64>,
    /// Mean raw weight over time, per class.
    raw_means: Vec<f64>,
    /// Mean normalized weight over time, per class.
    norm_means: Vec<f64>,
    /// Top-k evidence from normalized weights.
    evidence: Vec<(String, f64)>,
}

fn process_clip(
    path: &Path,
    cfg: &PipelineConfig,
    cache: &FeatureCache,
    basis: &BasisMatrix,
    pinv: &PseudoInverse,
) -> Result<ClipOutput, HarnessError> {
    let features = extract_context_features(path, cfg, cache)?;
    let weights = project_weights(basis, pinv, &features)?;
    let rows = match cfg.feature_kind {
        FeatureKind::Statistical => features.rows,
        FeatureKind::Weights => weights.rows.t().to_owned(),
        FeatureKind::LinearCombination => reconstruct(basis, &weights)?.rows.t().to_owned(),
    };
    let t = weights.num_frames() as f64;
    let raw_means: Vec<f64> = weights.rows.rows().into_iter().map(|r| r.sum() / t).collect();
    let normalized = normalize_weights(&weights)?;
    let norm_means: Vec<f64> = normalized.rows.rows().into_iter().map(|r| r.sum() / t).collect();
    let evidence = top_k_sounds(&normalized, cfg.evidence_top_k.min(basis.num_classes()))
        .ranked
        .into_iter()
        .collect();
    Ok(ClipOutput {
        rows,
        raw_means,
        norm_means,
        evidence,
    })
}

fn city_index_list(entries: &[CityEntry]) -> Vec<String> {
    CITIES
        .iter()
        .filter(|c| entries.iter().any(|e| e.city == **c))
        .map(|c| c.to_string())
        .collect()
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunReport, HarnessError> {
    run_pipeline_with_basis(cfg, None)
}

pub(crate) enum Model {
    Forest(crate::classify::ForestModel),
    Mlp(crate::classify::MlpModel),
}

struct PreparedRun {
    cache: FeatureCache,
    basis: BasisMatrix,
    pinv: PseudoInverse,
    train_entries: Vec<CityEntry>,
    test_entries: Vec<CityEntry>,
    cities: Vec<String>,
    dataset: FrameDataset,
    train_weights_by_city_raw: BTreeMap<String, BTreeMap<String, f64>>,
    train_weights_by_city_normalized: BTreeMap<String, BTreeMap<String, f64>>,
    warnings: Vec<String>,
    timings: Vec<(String, f64)>,
}

/// Stages up to and including training-set assembly.
fn prepare_run(
    cfg: &PipelineConfig,
    basis_override: Option<&BasisMatrix>,
) -> Result<PreparedRun, HarnessError> {
    cfg.validate()?;
    let mut warnings: Vec<String> = Vec::new();
    let mut timings: Vec<(String, f64)> = Vec::new();

    // manifests and split
    let t0 = Instant::now();
    let (mut train_entries, mut test_entries) = match (&cfg.train_manifest, &cfg.test_manifest) {
        (Some(train), Some(test)) => {
            let (a, wa) = load_city_manifest(train)?;
            let (b, wb) = load_city_manifest(test)?;
            warnings.extend(wa);
            warnings.extend(wb);
            (a, b)
        }
        _ => {
            let manifest = cfg.city_manifest.as_ref().expect("validated");
            let (all, w) = load_city_manifest(manifest)?;
            warnings.extend(w);
            split_city_entries(&all, cfg.train_fraction, derive_seed(cfg.seed, "split", 0))
        }
    };
    train_entries.retain(|e| e.path.exists());
    test_entries.retain(|e| e.path.exists());
    if train_entries.is_empty() || test_entries.is_empty() {
        return Err(HarnessError::InvalidManifest(
            "train or test split has no usable soundtracks".into(),
        ));
    }

    if cfg.shuffle_labels {
        // permute the city labels across the union of both splits
        use rand::{Rng, SeedableRng};
        let mut labels: Vec<String> = train_entries
            .iter()
            .chain(test_entries.iter())
            .map(|e| e.city.clone())
            .collect();
        let mut rng =
            rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "label-shuffle", 0));
        for i in (1..labels.len()).rev() {
            let j = rng.random_range(0..=i);
            labels.swap(i, j);
        }
        let (head, tail) = labels.split_at(train_entries.len());
        for (e, l) in train_entries.iter_mut().zip(head) {
            e.city = l.clone();
        }
        for (e, l) in test_entries.iter_mut().zip(tail) {
            e.city = l.clone();
        }
        warnings.push("shuffle_labels: city labels permuted across all videos".into());
    }

    let union: Vec<CityEntry> = train_entries.iter().chain(test_entries.iter()).cloned().collect();
    let cities = city_index_list(&union);
    let city_index: BTreeMap<&str, usize> =
        cities.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    timings.push(("manifests".into(), t0.elapsed().as_secs_f64()));

    // basis
    let t0 = Instant::now();
    let cache = FeatureCache::open(&cfg.cache_dir, &cfg.feature_params_key())?;
    let basis = match basis_override {
        Some(b) => b.clone(),
        None => basis_from_exemplars(cfg, &cache)?,
    };
    let pinv = pseudo_inverse(&basis)?;
    if pinv.rank < basis.num_classes() {
        warnings.push(format!(
            "basis rank {} below class count {}: near-parallel bases degrade the projection",
            pinv.rank,
            basis.num_classes()
        ));
    }
    timings.push(("basis".into(), t0.elapsed().as_secs_f64()));

    // training features
    let t0 = Instant::now();
    let train_outputs: Vec<ClipOutput> = train_entries
        .par_iter()
        .map(|e| process_clip(&e.path, cfg, &cache, &basis, &pinv))
        .collect::<Result<_, _>>()?;
    let d = train_outputs[0].rows.ncols();
    let mut flat: Vec<f64> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut group_ids: Vec<u32> = Vec::new();
    for (v, (entry, out)) in train_entries.iter().zip(&train_outputs).enumerate() {
        let label = city_index[entry.city.as_str()];
        for row in out.rows.rows() {
            flat.extend(row.iter());
            labels.push(label);
            group_ids.push(v as u32);
        }
    }
    let features = Array2::from_shape_vec((labels.len(), d), flat)
        .expect("uniform feature width across clips");
    let mut dataset = FrameDataset {
        features,
        labels,
        group_ids,
        class_names: cities.clone(),
        feature_kind: cfg.feature_kind,
    };
    if cfg.max_frames_per_video > 0 {
        let before = dataset.features.nrows();
        dataset = cap_frames_per_video(
            &dataset,
            cfg.max_frames_per_video,
            derive_seed(cfg.seed, "framecap", 0),
        );
        warnings.push(format!(
            "frame capping at {} kept {} of {} training frames",
            cfg.max_frames_per_video,
            dataset.features.nrows(),
            before
        ));
    }

    // per-city weight aggregates over the training split (raw and normalized)
    let mut raw_agg: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut norm_agg: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut city_counts: BTreeMap<String, usize> = BTreeMap::new();
    for (entry, out) in train_entries.iter().zip(&train_outputs) {
        let raw = raw_agg
            .entry(entry.city.clone())
            .or_insert_with(|| vec![0.0; basis.num_classes()]);
        for (a, v) in raw.iter_mut().zip(&out.raw_means) {
            *a += v;
        }
        let norm = norm_agg
            .entry(entry.city.clone())
            .or_insert_with(|| vec![0.0; basis.num_classes()]);
        for (a, v) in norm.iter_mut().zip(&out.norm_means) {
            *a += v;
        }
        *city_counts.entry(entry.city.clone()).or_insert(0) += 1;
    }
    let to_map = |agg: BTreeMap<String, Vec<f64>>| -> BTreeMap<String, BTreeMap<String, f64>> {
        agg.into_iter()
            .map(|(city, sums)| {
                let n = city_counts[&city] as f64;
                let classes = basis
                    .class_names
                    .iter()
                    .zip(sums)
                    .map(|(c, s)| (c.clone(), s / n))
                    .collect();
                (city, classes)
            })
            .collect()
    };
    let train_weights_by_city_raw = to_map(raw_agg);
    let train_weights_by_city_normalized = to_map(norm_agg);
    timings.push(("features_train".into(), t0.elapsed().as_secs_f64()));

    Ok(PreparedRun {
        cache,
        basis,
        pinv,
        train_entries,
        test_entries,
        cities,
        dataset,
        train_weights_by_city_raw,
        train_weights_by_city_normalized,
        warnings,
        timings,
    })
}

fn train_model(
    cfg: &PipelineConfig,
    dataset: &FrameDataset,
    warnings: &mut Vec<String>,
) -> Result<Model, HarnessError> {
    let train_seed = derive_seed(cfg.seed, "train", 0);
    Ok(match cfg.classifier {
        ClassifierKind::Rf => {
            let m = train_random_forest(
                dataset,
                &ForestParams {
                    n_trees: cfg.rf_trees,
                    seed: train_seed,
                    max_frames_per_video: None, // applied at dataset assembly
                },
            )?;
            warnings.extend(m.warnings.clone());
            Model::Forest(m)
        }
        ClassifierKind::Mlp => Model::Mlp(train_mlp(
            dataset,
            &MlpHyper {
                learning_rate: cfg.mlp_learning_rate,
                batch_size: cfg.mlp_batch_size,
                momentum: cfg.mlp_momentum,
                weight_decay: cfg.mlp_weight_decay,
                dropout: cfg.mlp_dropout,
                epochs: cfg.mlp_epochs,
                seed: train_seed,
                hidden: (1024, 1024),
            },
        )?),
    })
}

/// Train the configured classifier and return its serialized model blob.
pub fn train_model_blob(cfg: &PipelineConfig) -> Result<Vec<u8>, HarnessError> {
    let mut prep = prepare_run(cfg, None)?;
    let model = train_model(cfg, &prep.dataset, &mut prep.warnings)?;
    Ok(match model {
        Model::Forest(m) => crate::classify::serialize_forest(&m),
        Model::Mlp(m) => crate::classify::serialize_mlp(&m),
    })
}

/// Extract (and cache) features for every file in the configured manifests.
/// Returns (exemplar clips, city clips, cache hits, misses, stale entries).
pub fn warm_cache(cfg: &PipelineConfig) -> Result<(usize, usize, usize, usize, usize), HarnessError> {
    cfg.validate()?;
    let cache = FeatureCache::open(&cfg.cache_dir, &cfg.feature_params_key())?;
    let exemplars = load_urbansound_manifest(&cfg.urbansound_manifest)?;
    let dir = cfg
        .urbansound_manifest
        .parent()
        .unwrap_or(Path::new("."))
        .to_path_buf();
    exemplars
        .par_iter()
        .map(|e| extract_global_vector(&e.audio_path(&dir), cfg, &cache).map(|_| ()))
        .collect::<Result<Vec<_>, _>>()?;
    let (train, test) = resolve_split(cfg)?;
    let clips: Vec<CityEntry> = train.into_iter().chain(test).collect();
    clips
        .par_iter()
        .map(|e| extract_context_features(&e.path, cfg, &cache).map(|_| ()))
        .collect::<Result<Vec<_>, _>>()?;
    let (hits, misses, stale) = cache.stats();
    Ok((exemplars.len(), clips.len(), hits, misses, stale))
}

pub(crate) fn run_pipeline_with_basis(
    cfg: &PipelineConfig,
    basis_override: Option<&BasisMatrix>,
) -> Result<RunReport, HarnessError> {
    let prep = prepare_run(cfg, basis_override)?;
    let PreparedRun {
        cache,
        basis,
        pinv,
        train_entries,
        test_entries,
        cities,
        dataset,
        train_weights_by_city_raw,
        train_weights_by_city_normalized,
        mut warnings,
        mut timings,
    } = prep;
    let train_frames = dataset.features.nrows();

    // classifier
    let t0 = Instant::now();
    let model = train_model(cfg, &dataset, &mut warnings)?;
    drop(dataset);
    timings.push(("train".into(), t0.elapsed().as_secs_f64()));

    // score the test split
    let t0 = Instant::now();
    struct ScoredClip {
        posteriors: Array2<f64>,
        evidence: Vec<(String, f64)>,
    }
    let scored: Vec<ScoredClip> = test_entries
        .par_iter()
        .map(|e| {
            let out = process_clip(&e.path, cfg, &cache, &basis, &pinv)?;
            let posteriors = match &model {
                Model::Forest(m) => predict_forest(m, out.rows.view())?,
                Model::Mlp(m) => predict_mlp(m, out.rows.view())?,
            };
            Ok(ScoredClip {
                posteriors,
                evidence: out.evidence,
            })
        })
        .collect::<Result<_, HarnessError>>()?;
    let test_frames: usize = scored.iter().map(|s| s.posteriors.nrows()).sum();
    let mut all_posteriors = Array2::zeros((test_frames, cities.len()));
    let mut frame_groups: Vec<u32> = Vec::with_capacity(test_frames);
    let mut at = 0;
    for (v, clip) in scored.iter().enumerate() {
        for row in clip.posteriors.rows() {
            all_posteriors.row_mut(at).assign(&row);
            frame_groups.push(v as u32);
            at += 1;
        }
    }
    let (_, video_scores) = aggregate_video_scores(all_posteriors.view(), &frame_groups)?;
    let scores = ScoreMatrix {
        scores: video_scores,
        video_ids: test_entries.iter().map(|e| e.path.display().to_string()).collect(),
        class_names: cities.clone(),
    };
    let evidence: Vec<VideoEvidence> = test_entries
        .iter()
        .zip(&scored)
        .map(|(e, s)| VideoEvidence {
            video: e.path.display().to_string(),
            city: e.city.clone(),
            top: s.evidence.clone(),
        })
        .collect();
    timings.push(("score_test".into(), t0.elapsed().as_secs_f64()));

    // per-city one-vs-rest EER
    let t0 = Instant::now();
    let mut per_city_eer = BTreeMap::new();
    for (c, city) in cities.iter().enumerate() {
        let col: Vec<f64> = (0..scores.scores.nrows()).map(|v| scores.scores[[v, c]]).collect();
        let labels: Vec<bool> = test_entries.iter().map(|e| &e.city == city).collect();
        match eer_from_scores(&col, &labels) {
            Ok(eer) => {
                per_city_eer.insert(city.clone(), eer);
            }
            Err(EvalError::DegenerateLabels) => {
                warnings.push(format!(
                    "city '{city}' skipped in EER: no positives or no negatives in the test split"
                ));
            }
            Err(e) => return Err(e.into()),
        }
    }
    let eer_report = crate::eval::mean_eer(&per_city_eer)?;
    timings.push(("evaluate".into(), t0.elapsed().as_secs_f64()));

    let (cache_hits, cache_misses, stale_cache) = cache.stats();
    Ok(RunReport {
        config_fingerprint: cfg.fingerprint(),
        feature_kind: cfg.feature_kind,
        classifier: cfg.classifier,
        seed: cfg.seed,
        counts: RunCounts {
            train_videos: train_entries.len(),
            test_videos: test_entries.len(),
            train_frames,
            test_frames,
            classes: cities.len(),
            cache_hits,
            cache_misses,
            stale_cache,
        },
        per_city_eer,
        mean_eer: eer_report.mean_eer,
        scores,
        evidence,
        train_weights_by_city_raw,
        train_weights_by_city_normalized,
        ablation: None,
        timings,
        emit_timings: cfg.emit_timings,
        warnings,
    })
}

/// True city per test-split video, aligned with the report's score rows.
pub fn test_split_cities(cfg: &PipelineConfig) -> Result<Vec<String>, HarnessError> {
    let (_, test) = resolve_split(cfg)?;
    Ok(test.into_iter().map(|e| e.city).collect())
}

pub(crate) fn resolve_split(
    cfg: &PipelineConfig,
) -> Result<(Vec<CityEntry>, Vec<CityEntry>), HarnessError> {
    let (mut train, mut test) = match (&cfg.train_manifest, &cfg.test_manifest) {
        (Some(a), Some(b)) => {
            let (ta, _) = load_city_manifest(a)?;
            let (tb, _) = load_city_manifest(b)?;
            (ta, tb)
        }
        _ => {
            let manifest = cfg.city_manifest.as_ref().ok_or_else(|| {
                HarnessError::InvalidConfig("city_manifest is required".into())
            })?;
            let (all, _) = load_city_manifest(manifest)?;
            split_city_entries(&all, cfg.train_fraction, derive_seed(cfg.seed, "split", 0))
        }
    };
    train.retain(|e| e.path.exists());
    test.retain(|e| e.path.exists());
    Ok((train, test))
}

/// The basis-count ablation: rerun projection -> training -> evaluation with
/// linear-combination features and the MLP for every sampled class subset.
pub fn run_ablation(cfg: &PipelineConfig) -> Result<AblationReport, HarnessError> {
    cfg.validate()?;
    let cache = FeatureCache::open(&cfg.cache_dir, &cfg.feature_params_key())?;
    let full_basis = basis_from_exemplars(cfg, &cache)?;
    let mut variant = cfg.clone();
    variant.feature_kind = FeatureKind::LinearCombination;
    variant.classifier = ClassifierKind::Mlp;
    ablation_run(
        &full_basis,
        &cfg.sizes_plan,
        derive_seed(cfg.seed, "ablation", 0),
        |reduced| run_pipeline_with_basis(&variant, Some(reduced)).map(|r| r.eer_report()),
    )
}
