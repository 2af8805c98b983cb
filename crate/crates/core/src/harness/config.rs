//! Pipeline configuration: flat key=value files, validation, fingerprints.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::classify::FeatureKind;
use crate::semantic::BasisAggregation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Rf,
    Mlp,
}

impl ClassifierKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ClassifierKind::Rf => "rf",
            ClassifierKind::Mlp => "mlp",
        }
    }
}

impl std::str::FromStr for ClassifierKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rf" => Ok(ClassifierKind::Rf),
            "mlp" => Ok(ClassifierKind::Mlp),
            other => Err(format!("unknown classifier '{other}' (expected rf | mlp)")),
        }
    }
}

/// Every knob of the pipeline. The canonical audio/feature geometry
/// (44100 Hz, 1024/512 framing, 40 mel bands to 22050 Hz, 25 coefficients,
/// 45-frame context) is carried here for provenance and cache keying but is
/// validated to its pinned value.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    // inputs
    pub urbansound_manifest: PathBuf,
    pub city_manifest: Option<PathBuf>,
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub cache_dir: PathBuf,

    // audio / features
    pub sample_rate_hz: u32,
    pub window_len: usize,
    pub hop_len: usize,
    pub context_radius: usize,
    pub mel_bands: usize,
    pub mel_fmin_hz: f64,
    pub mel_fmax_hz: f64,
    pub num_mfcc: usize,
    pub include_c0: bool,

    // semantic
    pub basis_aggregation: BasisAggregation,
    pub feature_kind: FeatureKind,

    // classifier
    pub classifier: ClassifierKind,
    pub rf_trees: usize,
    pub mlp_epochs: usize,
    pub mlp_learning_rate: f64,
    pub mlp_batch_size: usize,
    pub mlp_momentum: f64,
    pub mlp_weight_decay: f64,
    pub mlp_dropout: f64,
    pub max_frames_per_video: usize, // 0 disables capping

    // protocol
    pub seed: u64,
    pub train_fraction: (u32, u32),
    pub shuffle_labels: bool,
    pub sizes_plan: Vec<(usize, usize)>,
    pub evidence_top_k: usize,
    pub emit_timings: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            urbansound_manifest: PathBuf::new(),
            city_manifest: None,
            train_manifest: None,
            test_manifest: None,
            cache_dir: PathBuf::from("cache"),
            sample_rate_hz: 44100,
            window_len: 1024,
            hop_len: 512,
            context_radius: 45,
            mel_bands: 40,
            mel_fmin_hz: 0.0,
            mel_fmax_hz: 22050.0,
            num_mfcc: 25,
            include_c0: true,
            basis_aggregation: BasisAggregation::Mean,
            feature_kind: FeatureKind::LinearCombination,
            classifier: ClassifierKind::Mlp,
            rf_trees: 100,
            mlp_epochs: 50,
            mlp_learning_rate: 1e-4,
            mlp_batch_size: 500,
            mlp_momentum: 0.9,
            mlp_weight_decay: 1e-6,
            mlp_dropout: 0.5,
            max_frames_per_video: 0,
            seed: 42,
            train_fraction: (541, 1080),
            shuffle_labels: false,
            sizes_plan: crate::eval::default_sizes_plan(),
            evidence_top_k: 3,
            emit_timings: false,
        }
    }
}

fn plan_to_string(plan: &[(usize, usize)]) -> String {
    plan.iter()
        .map(|(size, groups)| format!("{size}:{groups}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn plan_from_string(s: &str) -> Result<Vec<(usize, usize)>, String> {
    s.split(',')
        .map(|part| {
            let (size, groups) = part
                .split_once(':')
                .ok_or_else(|| format!("bad sizes_plan entry '{part}' (expected size:groups)"))?;
            Ok((
                size.trim().parse().map_err(|_| format!("bad size '{size}'"))?,
                groups.trim().parse().map_err(|_| format!("bad group count '{groups}'"))?,
            ))
        })
        .collect()
}

impl PipelineConfig {
    /// Read a flat `key=value` file (# starts a comment) over the defaults.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::io(path, e.to_string()))?;
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                HarnessError::InvalidConfig(format!("line {}: expected key=value", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim()).map_err(|e| {
                HarnessError::InvalidConfig(format!("line {}: {e}", lineno + 1))
            })?;
        }
        Ok(cfg)
    }

    /// Set one field by its config key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn parse<T: std::str::FromStr>(v: &str, what: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("bad {what} value '{v}'"))
        }
        match key {
            "urbansound_manifest" => self.urbansound_manifest = PathBuf::from(value),
            "city_manifest" => self.city_manifest = Some(PathBuf::from(value)),
            "train_manifest" => self.train_manifest = Some(PathBuf::from(value)),
            "test_manifest" => self.test_manifest = Some(PathBuf::from(value)),
            "cache_dir" => self.cache_dir = PathBuf::from(value),
            "sample_rate_hz" => self.sample_rate_hz = parse(value, "integer")?,
            "window_len" => self.window_len = parse(value, "integer")?,
            "hop_len" => self.hop_len = parse(value, "integer")?,
            "context_radius" => self.context_radius = parse(value, "integer")?,
            "mel_bands" => self.mel_bands = parse(value, "integer")?,
            "mel_fmin_hz" => self.mel_fmin_hz = parse(value, "number")?,
            "mel_fmax_hz" => self.mel_fmax_hz = parse(value, "number")?,
            "num_mfcc" => self.num_mfcc = parse(value, "integer")?,
            "include_c0" => self.include_c0 = parse(value, "boolean")?,
            "basis_aggregation" => {
                self.basis_aggregation = match value {
                    "mean" => BasisAggregation::Mean,
                    "median" => BasisAggregation::Median,
                    other => return Err(format!("unknown aggregation '{other}'")),
                }
            }
            "feature" | "feature_kind" => self.feature_kind = value.parse()?,
            "classifier" => self.classifier = value.parse()?,
            "rf_trees" => self.rf_trees = parse(value, "integer")?,
            "mlp_epochs" => self.mlp_epochs = parse(value, "integer")?,
            "mlp_learning_rate" => self.mlp_learning_rate = parse(value, "number")?,
            "mlp_batch_size" => self.mlp_batch_size = parse(value, "integer")?,
            "mlp_momentum" => self.mlp_momentum = parse(value, "number")?,
            "mlp_weight_decay" => self.mlp_weight_decay = parse(value, "number")?,
            "mlp_dropout" => self.mlp_dropout = parse(value, "number")?,
            "max_frames_per_video" => self.max_frames_per_video = parse(value, "integer")?,
            "seed" => self.seed = parse(value, "integer")?,
            "train_fraction" => {
                let (n, d) = value
                    .split_once('/')
                    .ok_or_else(|| format!("bad train_fraction '{value}' (expected n/d)"))?;
                self.train_fraction = (parse(n, "integer")?, parse(d, "integer")?);
            }
            "shuffle_labels" => self.shuffle_labels = parse(value, "boolean")?,
            "sizes_plan" => self.sizes_plan = plan_from_string(value)?,
            "evidence_top_k" => self.evidence_top_k = parse(value, "integer")?,
            "emit_timings" => self.emit_timings = parse(value, "boolean")?,
            other => return Err(format!("unknown config key '{other}'")),
        }
        Ok(())
    }

    /// Validate every field against its legal range. The audio geometry is
    /// pinned to the canonical recipe.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidConfig(m));
        if self.urbansound_manifest.as_os_str().is_empty() {
            return bad("urbansound_manifest is required".into());
        }
        let has_single = self.city_manifest.is_some();
        let has_split = self.train_manifest.is_some() && self.test_manifest.is_some();
        if !has_single && !has_split {
            return bad("either city_manifest or train_manifest+test_manifest is required".into());
        }
        if self.sample_rate_hz != 44100 {
            return bad(format!("sample_rate_hz must be 44100, got {}", self.sample_rate_hz));
        }
        if self.window_len != 1024 || self.hop_len != 512 {
            return bad(format!(
                "framing is pinned to window 1024 / hop 512, got {}/{}",
                self.window_len, self.hop_len
            ));
        }
        if self.context_radius != 45 {
            return bad(format!("context_radius must be 45, got {}", self.context_radius));
        }
        if self.num_mfcc != 25 {
            return bad(format!("num_mfcc must be 25, got {}", self.num_mfcc));
        }
        if !(10..=128).contains(&self.mel_bands) {
            return bad(format!("mel_bands {} outside 10..=128", self.mel_bands));
        }
        if self.mel_fmin_hz < 0.0
            || self.mel_fmax_hz <= self.mel_fmin_hz
            || self.mel_fmax_hz > self.sample_rate_hz as f64 / 2.0
        {
            return bad(format!(
                "mel range {}..{} Hz invalid for rate {}",
                self.mel_fmin_hz, self.mel_fmax_hz, self.sample_rate_hz
            ));
        }
        if self.num_mfcc > self.mel_bands {
            return bad(format!(
                "num_mfcc {} exceeds mel_bands {}",
                self.num_mfcc, self.mel_bands
            ));
        }
        if self.rf_trees == 0 {
            return bad("rf_trees must be positive".into());
        }
        if self.mlp_epochs == 0 {
            return bad("mlp_epochs must be positive".into());
        }
        if self.mlp_batch_size == 0 {
            return bad("mlp_batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.mlp_dropout) {
            return bad(format!("mlp_dropout {} outside [0, 1)", self.mlp_dropout));
        }
        if !(0.0..1.0).contains(&self.mlp_momentum) {
            return bad(format!("mlp_momentum {} outside [0, 1)", self.mlp_momentum));
        }
        if self.mlp_learning_rate <= 0.0 || self.mlp_weight_decay < 0.0 {
            return bad("learning rate must be positive and weight decay nonnegative".into());
        }
        if self.train_fraction.0 == 0 || self.train_fraction.0 >= self.train_fraction.1 {
            return bad(format!(
                "train_fraction {}/{} must satisfy 0 < n < d",
                self.train_fraction.0, self.train_fraction.1
            ));
        }
        if self.sizes_plan.is_empty()
            || self.sizes_plan.iter().any(|&(s, g)| s < 2 || g == 0)
        {
            return bad("sizes_plan entries must have size >= 2 and groups >= 1".into());
        }
        if self.evidence_top_k == 0 {
            return bad("evidence_top_k must be positive".into());
        }
        Ok(())
    }

    /// Canonical `key=value` rendering of the effective config, sorted by
    /// key; the fingerprint hashes exactly this text.
    pub fn canonical(&self) -> String {
        let mut kv: BTreeMap<&str, String> = BTreeMap::new();
        kv.insert("urbansound_manifest", self.urbansound_manifest.display().to_string());
        kv.insert(
            "city_manifest",
            self.city_manifest.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
        );
        kv.insert(
            "train_manifest",
            self.train_manifest.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
        );
        kv.insert(
            "test_manifest",
            self.test_manifest.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
        );
        kv.insert("cache_dir", self.cache_dir.display().to_string());
        kv.insert("sample_rate_hz", self.sample_rate_hz.to_string());
        kv.insert("window_len", self.window_len.to_string());
        kv.insert("hop_len", self.hop_len.to_string());
        kv.insert("context_radius", self.context_radius.to_string());
        kv.insert("mel_bands", self.mel_bands.to_string());
        kv.insert("mel_fmin_hz", format!("{:?}", self.mel_fmin_hz));
        kv.insert("mel_fmax_hz", format!("{:?}", self.mel_fmax_hz));
        kv.insert("num_mfcc", self.num_mfcc.to_string());
        kv.insert("include_c0", self.include_c0.to_string());
        kv.insert(
            "basis_aggregation",
            match self.basis_aggregation {
                BasisAggregation::Mean => "mean".to_string(),
                BasisAggregation::Median => "median".to_string(),
            },
        );
        kv.insert("feature_kind", self.feature_kind.as_str().to_string());
        kv.insert("classifier", self.classifier.as_str().to_string());
        kv.insert("rf_trees", self.rf_trees.to_string());
        kv.insert("mlp_epochs", self.mlp_epochs.to_string());
        kv.insert("mlp_learning_rate", format!("{:?}", self.mlp_learning_rate));
        kv.insert("mlp_batch_size", self.mlp_batch_size.to_string());
        kv.insert("mlp_momentum", format!("{:?}", self.mlp_momentum));
        kv.insert("mlp_weight_decay", format!("{:?}", self.mlp_weight_decay));
        kv.insert("mlp_dropout", format!("{:?}", self.mlp_dropout));
        kv.insert("max_frames_per_video", self.max_frames_per_video.to_string());
        kv.insert("seed", self.seed.to_string());
        kv.insert(
            "train_fraction",
            format!("{}/{}", self.train_fraction.0, self.train_fraction.1),
        );
        kv.insert("shuffle_labels", self.shuffle_labels.to_string());
        kv.insert("sizes_plan", plan_to_string(&self.sizes_plan));
        kv.insert("evidence_top_k", self.evidence_top_k.to_string());
        kv.insert("emit_timings", self.emit_timings.to_string());
        let mut out = String::new();
        for (k, v) in kv {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    /// Hex fingerprint identifying this config in reports and cache keys.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Fingerprint of exactly the parameters that change feature bytes.
    pub fn feature_params_key(&self) -> String {
        let text = format!(
            "rate={};window={};hop={};mels={};fmin={:?};fmax={:?};nmfcc={};c0={};ctx={}",
            self.sample_rate_hz,
            self.window_len,
            self.hop_len,
            self.mel_bands,
            self.mel_fmin_hz,
            self.mel_fmax_hz,
            self.num_mfcc,
            self.include_c0,
            self.context_radius
        );
        let digest = Sha256::digest(text.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn mfcc_params(&self) -> crate::features::MfccParams {
        crate::features::MfccParams {
            mel_bands: self.mel_bands,
            fmin_hz: self.mel_fmin_hz,
            fmax_hz: self.mel_fmax_hz,
            num_coeffs: self.num_mfcc,
            include_c0: self.include_c0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn base_config() -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.urbansound_manifest = PathBuf::from("us.csv");
        cfg.city_manifest = Some(PathBuf::from("city.csv"));
        cfg
    }

    #[test]
    fn defaults_validate() {
        base_config().validate().unwrap();
    }

    #[test]
    fn pinned_geometry_is_enforced() {
        let mut cfg = base_config();
        cfg.window_len = 2048;
        assert!(cfg.validate().is_err());
        let mut cfg = base_config();
        cfg.context_radius = 30;
        assert!(cfg.validate().is_err());
        let mut cfg = base_config();
        cfg.num_mfcc = 13;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn fingerprint_is_stable_and_sensitive() {
        let cfg = base_config();
        assert_eq!(cfg.fingerprint(), cfg.fingerprint());
        let mut other = base_config();
        other.seed = 43;
        assert_ne!(cfg.fingerprint(), other.fingerprint());
    }

    #[test]
    fn feature_key_ignores_classifier_knobs() {
        let cfg = base_config();
        let mut other = base_config();
        other.mlp_epochs = 7;
        other.classifier = ClassifierKind::Rf;
        assert_eq!(cfg.feature_params_key(), other.feature_params_key());
        let mut changed = base_config();
        changed.include_c0 = false;
        assert_ne!(cfg.feature_params_key(), changed.feature_params_key());
    }

    #[test]
    fn config_file_round_trip() {
        let dir = std::env::temp_dir().join(format!("cityid_cfg_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("run.cfg");
        let mut f = std::fs::File::create(&p).unwrap();
        writeln!(f, "# acceptance run").unwrap();
        writeln!(f, "urbansound_manifest=us.csv").unwrap();
        writeln!(f, "city_manifest=city.csv").unwrap();
        writeln!(f, "feature=weights  # overridden name").unwrap();
        writeln!(f, "classifier=rf").unwrap();
        writeln!(f, "seed=7").unwrap();
        writeln!(f, "sizes_plan=2:5,5:2,8:1,10:1").unwrap();
        writeln!(f, "train_fraction=541/1080").unwrap();
        drop(f);
        let cfg = PipelineConfig::from_file(&p).unwrap();
        assert_eq!(cfg.feature_kind, FeatureKind::Weights);
        assert_eq!(cfg.classifier, ClassifierKind::Rf);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.sizes_plan, vec![(2, 5), (5, 2), (8, 1), (10, 1)]);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_key_is_an_error() {
        let mut cfg = PipelineConfig::default();
        assert!(cfg.set("no_such_knob", "1").is_err());
    }

    #[test]
    fn bad_ranges_are_rejected() {
        let mut cfg = base_config();
        cfg.mlp_dropout = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = base_config();
        cfg.train_fraction = (3, 2);
        assert!(cfg.validate().is_err());
        let mut cfg = base_config();
        cfg.sizes_plan = vec![(1, 5)];
        assert!(cfg.validate().is_err());
    }
}
