//! Command-line interface for the city identification pipeline.
//!
//! Exit codes: 0 success, 1 validation error (bad flags, config, or
//! manifests), 2 runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cityid_core::classify::FeatureKind;
use cityid_core::harness::{
    ablation_csv, basis_from_exemplars, basis_to_json, eer_csv, emit_report,
    extract_context_features, generate_synthetic_corpus, run_ablation, run_pipeline,
    test_split_cities, train_model_blob, warm_cache, weights_csv, ClassifierKind, FeatureCache,
    HarnessError, PipelineConfig, SynthSpec,
};
use cityid_core::semantic::{normalize_weights, project_weights, pseudo_inverse, top_k_sounds};

#[derive(Parser)]
#[command(
    name = "cityid",
    about = "Audio-only city identification: semantic acoustic features, classifiers, EER evaluation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Pipeline configuration file (flat key=value lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Feature cache directory override.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Feature kind override.
    #[arg(long, value_parser = parse_feature)]
    feature: Option<FeatureKind>,
    /// Classifier override.
    #[arg(long, value_parser = parse_classifier)]
    classifier: Option<ClassifierKind>,
}

fn parse_feature(s: &str) -> Result<FeatureKind, String> {
    s.parse()
}

fn parse_classifier(s: &str) -> Result<ClassifierKind, String> {
    s.parse()
}

impl CommonOpts {
    fn load(&self) -> Result<PipelineConfig, HarnessError> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::from_file(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(cache) = &self.cache {
            cfg.cache_dir = cache.clone();
        }
        if let Some(feature) = self.feature {
            cfg.feature_kind = feature;
        }
        if let Some(classifier) = self.classifier {
            cfg.classifier = classifier;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus: exemplar WAVs, city soundtracks,
    /// manifests, and a ground-truth event log.
    Synth {
        /// Output directory for the corpus.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 6)]
        cities: usize,
        #[arg(long, default_value_t = 30)]
        videos_per_city: usize,
        #[arg(long, default_value_t = 8)]
        exemplars_per_class: usize,
        #[arg(long, default_value_t = 3.0)]
        min_duration: f64,
        #[arg(long, default_value_t = 6.0)]
        max_duration: f64,
        /// 0 = spectrally disjoint sound classes.
        #[arg(long, default_value_t = 0.0)]
        overlap: f64,
    },
    /// Extract and cache features for every file in the configured manifests.
    Extract {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Build the urban-sound basis matrix and write it as JSON.
    Basis {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        out: PathBuf,
    },
    /// Project one soundtrack onto the basis: weights matrix plus top-k
    /// sound evidence.
    Project {
        #[command(flatten)]
        common: CommonOpts,
        /// WAV file to project.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        top_k: usize,
    },
    /// Train the configured classifier on the train split and save the model.
    Train {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full pipeline and write the run report.
    Evaluate {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        out: PathBuf,
        /// Also write plot-ready CSVs next to the report.
        #[arg(long)]
        emit_csv: bool,
    },
    /// Run the basis-count ablation protocol.
    Ablate {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        emit_csv: bool,
    },
    /// Summarize an existing report JSON; optionally re-emit its CSVs.
    Report {
        /// Previously written report JSON.
        #[arg(long)]
        input: PathBuf,
        /// Write plot-ready CSVs with this path prefix.
        #[arg(long)]
        emit_csv: Option<PathBuf>,
    },
}

fn write_file(path: &PathBuf, contents: impl AsRef<[u8]>) -> Result<(), HarnessError> {
    std::fs::write(path, contents).map_err(|e| HarnessError::IoFailure {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's own convention is exit code 2 for usage problems; the
            // contract here is 1 for any validation failure
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Synth {
            out,
            seed,
            classes,
            cities,
            videos_per_city,
            exemplars_per_class,
            min_duration,
            max_duration,
            overlap,
        } => {
            let spec = SynthSpec {
                n_classes: classes,
                n_cities: cities,
                videos_per_city,
                exemplars_per_class,
                seed,
                duration_range_s: (min_duration, max_duration),
                spectral_overlap: overlap,
                ..SynthSpec::default()
            };
            let output = generate_synthetic_corpus(&spec, &out)?;
            println!(
                "synthetic corpus at {}: {} soundtracks, {} exemplars",
                output.root.display(),
                output.n_soundtracks,
                output.n_exemplars
            );
            println!("  urbansound manifest: {}", output.urbansound_manifest.display());
            println!("  city manifest:       {}", output.city_manifest.display());
            println!("  event log:           {}", output.event_log.display());
            Ok(())
        }
        Command::Extract { common } => {
            let cfg = common.load()?;
            let (exemplars, clips, hits, misses, stale) = warm_cache(&cfg)?;
            println!(
                "extracted features for {exemplars} exemplars and {clips} soundtracks \
                 (cache hits {hits}, misses {misses}, stale {stale})"
            );
            Ok(())
        }
        Command::Basis { common, out } => {
            let cfg = common.load()?;
            cfg.validate()?;
            let cache = FeatureCache::open(&cfg.cache_dir, &cfg.feature_params_key())?;
            let basis = basis_from_exemplars(&cfg, &cache)?;
            let pinv = pseudo_inverse(&basis)?;
            write_file(&out, basis_to_json(&basis))?;
            println!(
                "basis {}x{} (rank {}) written to {}",
                basis.columns.nrows(),
                basis.columns.ncols(),
                pinv.rank,
                out.display()
            );
            Ok(())
        }
        Command::Project {
            common,
            input,
            out,
            top_k,
        } => {
            let cfg = common.load()?;
            cfg.validate()?;
            let cache = FeatureCache::open(&cfg.cache_dir, &cfg.feature_params_key())?;
            let basis = basis_from_exemplars(&cfg, &cache)?;
            let pinv = pseudo_inverse(&basis)?;
            let features = extract_context_features(&input, &cfg, &cache)?;
            let weights = project_weights(&basis, &pinv, &features)?;
            let normalized = normalize_weights(&weights)?;
            let evidence = top_k_sounds(&normalized, top_k.min(basis.num_classes()));
            let doc = serde_json::json!({
                "source": input.display().to_string(),
                "class_names": weights.class_names,
                "frames": weights.num_frames(),
                "weights": weights.rows.rows().into_iter()
                    .map(|r| r.iter().copied().collect::<Vec<f64>>())
                    .collect::<Vec<_>>(),
                "evidence": evidence.ranked.iter()
                    .map(|(class, score)| serde_json::json!({"class": class, "score": score}))
                    .collect::<Vec<_>>(),
            });
            write_file(&out, serde_json::to_string_pretty(&doc).expect("serializable"))?;
            println!("weights for {} written to {}", input.display(), out.display());
            for (class, score) in &evidence.ranked {
                println!("  {class}: {score:.4}");
            }
            Ok(())
        }
        Command::Train { common, out } => {
            let cfg = common.load()?;
            let blob = train_model_blob(&cfg)?;
            write_file(&out, &blob)?;
            println!(
                "{} model ({} bytes, feature kind {}) written to {}",
                cfg.classifier.as_str(),
                blob.len(),
                cfg.feature_kind.as_str(),
                out.display()
            );
            Ok(())
        }
        Command::Evaluate {
            common,
            out,
            emit_csv,
        } => {
            let cfg = common.load()?;
            let report = run_pipeline(&cfg)?;
            let cities = test_split_cities(&cfg)?;
            emit_report(&report, &cities, &out)?;
            println!("report written to {}", out.display());
            let c = &report.counts;
            println!(
                "cache: {} hits, {} misses, {} stale",
                c.cache_hits, c.cache_misses, c.stale_cache
            );
            println!("mean EER: {:.4}", report.mean_eer);
            for (city, eer) in &report.per_city_eer {
                println!("  {city}: {eer:.4}");
            }
            if emit_csv {
                let eer_path = out.with_extension("eer.csv");
                let weights_path = out.with_extension("weights.csv");
                write_file(&eer_path, eer_csv(&report))?;
                write_file(&weights_path, weights_csv(&report))?;
                println!("CSV: {} and {}", eer_path.display(), weights_path.display());
            }
            Ok(())
        }
        Command::Ablate {
            common,
            out,
            emit_csv,
        } => {
            let cfg = common.load()?;
            let ablation = run_ablation(&cfg)?;
            let json = serde_json::to_string_pretty(&ablation).expect("serializable");
            write_file(&out, json)?;
            println!("ablation report written to {}", out.display());
            for (size, eer) in &ablation.mean_by_size {
                println!("  {size} bases: mean EER {eer:.4}");
            }
            if emit_csv {
                let csv_path = out.with_extension("csv");
                write_file(&csv_path, ablation_csv(&ablation))?;
                println!("CSV: {}", csv_path.display());
            }
            Ok(())
        }
        Command::Report { input, emit_csv } => {
            let text = std::fs::read_to_string(&input).map_err(|e| HarnessError::IoFailure {
                path: input.display().to_string(),
                message: e.to_string(),
            })?;
            let v: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| HarnessError::InvalidManifest(format!("report JSON: {e}")))?;
            println!("config fingerprint: {}", v["config_fingerprint"].as_str().unwrap_or("?"));
            println!(
                "feature {} / classifier {}",
                v["feature_kind"].as_str().unwrap_or("?"),
                v["classifier"].as_str().unwrap_or("?")
            );
            if let Some(mean) = v["mean_eer"].as_f64() {
                println!("mean EER: {mean:.4}");
            }
            if let Some(map) = v["per_city_eer"].as_object() {
                for (city, eer) in map {
                    println!("  {city}: {:.4}", eer.as_f64().unwrap_or(f64::NAN));
                }
            }
            if let Some(warnings) = v["warnings"].as_array() {
                for w in warnings {
                    println!("warning: {}", w.as_str().unwrap_or("?"));
                }
            }
            if let Some(prefix) = emit_csv {
                let eer_path = prefix.with_extension("eer.csv");
                let rows = format!(
                    "feature_kind,classifier,eer\n{},{},{}\n",
                    v["feature_kind"].as_str().unwrap_or("?"),
                    v["classifier"].as_str().unwrap_or("?"),
                    v["mean_eer"].as_f64().unwrap_or(f64::NAN)
                );
                write_file(&eer_path, rows)?;
                println!("CSV: {}", eer_path.display());
            }
            Ok(())
        }
    }
}
