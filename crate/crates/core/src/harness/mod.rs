//! Harness: manifests, configuration, feature caching, the synthetic
//! corpus generator, the end-to-end pipeline, and report emission.

mod cache;
mod config;
mod manifest;
mod pipeline;
mod report;
mod synth;

pub use cache::{basis_from_json, basis_to_json, content_hash, FeatureCache};
pub use config::{ClassifierKind, PipelineConfig};
pub use manifest::{
    load_city_manifest, load_urbansound_manifest, split_city_entries, CityEntry, UrbanSoundEntry,
};
pub use pipeline::{
    extract_context_features,
    basis_from_exemplars, run_ablation, run_pipeline, test_split_cities, train_model_blob,
    warm_cache,
};
pub use report::{
    ablation_csv, eer_csv, emit_report, weights_csv, RunCounts, RunReport, VideoEvidence,
};
pub use synth::{
    generate_synthetic_corpus, load_event_log, render_single_event_clip, LoggedEvent, SynthOutput,
    SynthSpec,
};

use thiserror::Error;

use crate::audio_io::AudioError;
use crate::classify::ClassifyError;
use crate::eval::EvalError;
use crate::features::FeatureError;
use crate::semantic::SemanticError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("missing column '{0}'")]
    MissingColumn(String),
    #[error("bad classID: {0}")]
    BadClassId(String),
    #[error("bad fold: {0}")]
    BadFold(String),
    #[error("unknown city: {0}")]
    UnknownCity(String),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid synthetic corpus spec: {0}")]
    InvalidSpec(String),
    #[error("stale cache entry: {0}")]
    StaleCache(String),
    #[error("io failure at {path}: {message}")]
    IoFailure { path: String, message: String },
    #[error("audio stage failed on {source_id}: {source}")]
    Audio {
        source_id: String,
        #[source]
        source: AudioError,
    },
    #[error("feature stage: {0}")]
    Feature(#[from] FeatureError),
    #[error("semantic stage: {0}")]
    Semantic(#[from] SemanticError),
    #[error("classifier stage: {0}")]
    Classify(#[from] ClassifyError),
    #[error("evaluation stage: {0}")]
    Eval(#[from] EvalError),
}

impl HarnessError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, message: String) -> Self {
        HarnessError::IoFailure {
            path: path.as_ref().display().to_string(),
            message,
        }
    }

    pub(crate) fn audio(source_id: &str, source: AudioError) -> Self {
        HarnessError::Audio {
            source_id: source_id.to_string(),
            source,
        }
    }

    /// Validation failures exit with code 1; runtime failures with code 2.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            HarnessError::MissingColumn(_)
                | HarnessError::BadClassId(_)
                | HarnessError::BadFold(_)
                | HarnessError::UnknownCity(_)
                | HarnessError::InvalidManifest(_)
                | HarnessError::InvalidConfig(_)
                | HarnessError::InvalidSpec(_)
        )
    }
}
