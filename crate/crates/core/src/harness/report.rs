//! Run reports and their canonical JSON serialization.
//!
//! The emitter is hand-rolled so the bytes are fully deterministic: keys in
//! a fixed order, maps sorted, and every float printed at 9 significant
//! digits (`{:.8e}`). Identical runs produce identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::config::ClassifierKind;
use super::HarnessError;
use crate::classify::{FeatureKind, ScoreMatrix};
use crate::eval::{AblationReport, EerReport};

#[derive(Debug, Clone, Default)]
pub struct RunCounts {
    pub train_videos: usize,
    pub test_videos: usize,
    pub train_frames: usize,
    pub test_frames: usize,
    pub classes: usize,
    pub cache_hits: usize,
    pub cache_misses: usize,
    pub stale_cache: usize,
}

#[derive(Debug, Clone)]
pub struct VideoEvidence {
    pub video: String,
    pub city: String,
    /// (class, normalized peak weight), descending.
    pub top: Vec<(String, f64)>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub config_fingerprint: String,
    pub feature_kind: FeatureKind,
    pub classifier: ClassifierKind,
    pub seed: u64,
    pub counts: RunCounts,
    pub per_city_eer: BTreeMap<String, f64>,
    pub mean_eer: f64,
    pub scores: ScoreMatrix,
    pub evidence: Vec<VideoEvidence>,
    /// Mean over a city's training soundtracks of each class's mean weight
    /// over time, raw and per-soundtrack-normalized.
    pub train_weights_by_city_raw: BTreeMap<String, BTreeMap<String, f64>>,
    pub train_weights_by_city_normalized: BTreeMap<String, BTreeMap<String, f64>>,
    pub ablation: Option<AblationReport>,
    /// (stage, wall seconds); serialized only when `emit_timings` is set,
    /// keeping default reports byte-reproducible.
    pub timings: Vec<(String, f64)>,
    pub emit_timings: bool,
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn eer_report(&self) -> EerReport {
        EerReport {
            per_city: self.per_city_eer.clone(),
            mean_eer: self.mean_eer,
            positives: BTreeMap::new(),
        }
    }

    /// Canonical JSON document. `scores_ref` names the sidecar CSV written
    /// next to the report.
    pub fn to_json(&self, scores_ref: &str) -> String {
        let mut w = JsonWriter::new();
        w.open_object();
        w.string_field("config_fingerprint", &self.config_fingerprint);
        w.string_field("feature_kind", self.feature_kind.as_str());
        w.string_field("classifier", self.classifier.as_str());
        w.int_field("seed", self.seed as i64);

        // cache statistics stay out of the document: they depend on cache
        // state, and every serialized number must be recomputable from the
        // corpus and config alone
        w.key("counts");
        w.open_object();
        w.int_field("train_videos", self.counts.train_videos as i64);
        w.int_field("test_videos", self.counts.test_videos as i64);
        w.int_field("train_frames", self.counts.train_frames as i64);
        w.int_field("test_frames", self.counts.test_frames as i64);
        w.int_field("classes", self.counts.classes as i64);
        w.close_object();

        w.key("per_city_eer");
        w.open_object();
        for (city, eer) in &self.per_city_eer {
            w.float_field(city, *eer);
        }
        w.close_object();
        w.float_field("mean_eer", self.mean_eer);
        w.string_field("scores_ref", scores_ref);

        w.key("evidence");
        w.open_array();
        for ev in &self.evidence {
            w.open_object();
            w.string_field("video", &ev.video);
            w.string_field("city", &ev.city);
            w.key("top");
            w.open_array();
            for (class, score) in &ev.top {
                w.open_object();
                w.string_field("class", class);
                w.float_field("score", *score);
                w.close_object();
            }
            w.close_array();
            w.close_object();
        }
        w.close_array();

        for (key, map) in [
            ("train_weights_by_city_raw", &self.train_weights_by_city_raw),
            (
                "train_weights_by_city_normalized",
                &self.train_weights_by_city_normalized,
            ),
        ] {
            w.key(key);
            w.open_object();
            for (city, classes) in map {
                w.key(city);
                w.open_object();
                for (class, v) in classes {
                    w.float_field(class, *v);
                }
                w.close_object();
            }
            w.close_object();
        }

        w.key("ablation");
        match &self.ablation {
            None => w.raw("null"),
            Some(ab) => {
                w.open_object();
                w.int_field("seed", ab.seed as i64);
                w.key("entries");
                w.open_array();
                for e in &ab.entries {
                    w.open_object();
                    w.int_field("size", e.size as i64);
                    w.key("classes");
                    w.open_array();
                    for c in &e.classes {
                        w.string_item(c);
                    }
                    w.close_array();
                    w.float_field("mean_eer", e.mean_eer);
                    w.close_object();
                }
                w.close_array();
                w.key("mean_by_size");
                w.open_object();
                for (size, eer) in &ab.mean_by_size {
                    w.float_field(&size.to_string(), *eer);
                }
                w.close_object();
                w.close_object();
            }
        }

        w.key("timings");
        w.open_object();
        if self.emit_timings {
            for (stage, secs) in &self.timings {
                w.float_field(stage, *secs);
            }
        }
        w.close_object();

        w.key("warnings");
        w.open_array();
        for warning in &self.warnings {
            w.string_item(warning);
        }
        w.close_array();

        w.close_object();
        w.finish()
    }

    /// Per-video score rows as CSV: video, true city, one column per class.
    pub fn scores_csv(&self, true_cities: &[String]) -> String {
        let mut out = String::from("video,true_city");
        for class in &self.scores.class_names {
            let _ = write!(out, ",{class}");
        }
        out.push('\n');
        for (i, video) in self.scores.video_ids.iter().enumerate() {
            let _ = write!(out, "{},{}", csv_field(video), true_cities.get(i).map(String::as_str).unwrap_or(""));
            for j in 0..self.scores.class_names.len() {
                let _ = write!(out, ",{}", fnum(self.scores.scores[[i, j]]));
            }
            out.push('\n');
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// 9 significant digits; the report contract for every float.
fn fnum(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.8e}")
    } else {
        "null".to_string()
    }
}

struct JsonWriter {
    out: String,
    needs_comma: Vec<bool>,
    indent: usize,
    /// Set after a key: the next value continues that line.
    pending_value: bool,
}

impl JsonWriter {
    fn new() -> Self {
        Self {
            out: String::new(),
            needs_comma: vec![false],
            indent: 0,
            pending_value: true, // the top-level value starts the document
        }
    }

    fn newline_item(&mut self) {
        if *self.needs_comma.last().unwrap() {
            self.out.push(',');
        }
        self.out.push('\n');
        for _ in 0..self.indent {
            self.out.push_str("  ");
        }
        *self.needs_comma.last_mut().unwrap() = true;
    }

    /// Position the cursor for a value: inline after a key, or as the next
    /// comma-separated item of the enclosing array.
    fn value_prelude(&mut self) {
        if self.pending_value {
            self.pending_value = false;
        } else {
            self.newline_item();
        }
    }

    fn key(&mut self, k: &str) {
        self.newline_item();
        let _ = write!(self.out, "\"{}\": ", escape(k));
        self.pending_value = true;
    }

    fn open_object(&mut self) {
        self.value_prelude();
        self.out.push('{');
        self.indent += 1;
        self.needs_comma.push(false);
    }

    fn close_object(&mut self) {
        let had_items = self.needs_comma.pop().unwrap();
        self.indent -= 1;
        if had_items {
            self.out.push('\n');
            for _ in 0..self.indent {
                self.out.push_str("  ");
            }
        }
        self.out.push('}');
    }

    fn open_array(&mut self) {
        self.value_prelude();
        self.out.push('[');
        self.indent += 1;
        self.needs_comma.push(false);
    }

    fn close_array(&mut self) {
        let had_items = self.needs_comma.pop().unwrap();
        self.indent -= 1;
        if had_items {
            self.out.push('\n');
            for _ in 0..self.indent {
                self.out.push_str("  ");
            }
        }
        self.out.push(']');
    }

    fn raw(&mut self, s: &str) {
        self.value_prelude();
        self.out.push_str(s);
    }

    fn string_item(&mut self, s: &str) {
        self.value_prelude();
        let _ = write!(self.out, "\"{}\"", escape(s));
    }

    fn string_field(&mut self, k: &str, v: &str) {
        self.key(k);
        self.string_item(v);
    }

    fn int_field(&mut self, k: &str, v: i64) {
        self.key(k);
        self.raw(&v.to_string());
    }

    fn float_field(&mut self, k: &str, v: f64) {
        self.key(k);
        let text = fnum(v);
        self.raw(&text);
    }

    fn finish(mut self) -> String {
        self.out.push('\n');
        self.out
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out
}

/// Write the report JSON at `path` and the score matrix CSV next to it.
pub fn emit_report(
    report: &RunReport,
    true_cities: &[String],
    path: impl AsRef<Path>,
) -> Result<(), HarnessError> {
    let path = path.as_ref();
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "report".to_string());
    let scores_name = format!("{stem}_scores.csv");
    let json = report.to_json(&scores_name);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e.to_string()))?;
    }
    std::fs::write(path, json).map_err(|e| HarnessError::io(path, e.to_string()))?;
    let scores_path = path.with_file_name(&scores_name);
    std::fs::write(&scores_path, report.scores_csv(true_cities))
        .map_err(|e| HarnessError::io(&scores_path, e.to_string()))?;
    Ok(())
}

/// Plot-ready CSV rows: (feature kind, classifier, mean EER).
pub fn eer_csv(report: &RunReport) -> String {
    format!(
        "feature_kind,classifier,eer\n{},{},{}\n",
        report.feature_kind.as_str(),
        report.classifier.as_str(),
        fnum(report.mean_eer)
    )
}

/// Plot-ready CSV rows: (city, class, mean raw weight).
pub fn weights_csv(report: &RunReport) -> String {
    let mut out = String::from("city,class,mean_weight\n");
    for (city, classes) in &report.train_weights_by_city_raw {
        for (class, v) in classes {
            let _ = writeln!(out, "{},{},{}", csv_field(city), csv_field(class), fnum(*v));
        }
    }
    out
}

/// Plot-ready CSV rows: (basis count, mean EER).
pub fn ablation_csv(ablation: &AblationReport) -> String {
    let mut out = String::from("n_bases,mean_eer\n");
    for (size, eer) in &ablation.mean_by_size {
        let _ = writeln!(out, "{size},{}", fnum(*eer));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn sample_report() -> (RunReport, Vec<String>) {
        let mut per_city = BTreeMap::new();
        per_city.insert("Tokyo".to_string(), 0.123456789123);
        per_city.insert("Paris".to_string(), 0.2);
        let mut raw = BTreeMap::new();
        let mut inner = BTreeMap::new();
        inner.insert("siren".to_string(), -0.5);
        inner.insert("car_horn".to_string(), 1.25);
        raw.insert("Tokyo".to_string(), inner);
        let report = RunReport {
            config_fingerprint: "abcd1234".into(),
            feature_kind: FeatureKind::LinearCombination,
            classifier: ClassifierKind::Mlp,
            seed: 42,
            counts: RunCounts {
                train_videos: 2,
                test_videos: 2,
                train_frames: 100,
                test_frames: 90,
                classes: 2,
                cache_hits: 1,
                cache_misses: 3,
                stale_cache: 0,
            },
            per_city_eer: per_city,
            mean_eer: 0.1617283945,
            scores: ScoreMatrix {
                scores: Array2::from_shape_vec((2, 2), vec![0.75, 0.25, 0.4, 0.6]).unwrap(),
                video_ids: vec!["a.wav".into(), "b.wav".into()],
                class_names: vec!["Paris".into(), "Tokyo".into()],
            },
            evidence: vec![VideoEvidence {
                video: "a.wav".into(),
                city: "Tokyo".into(),
                top: vec![("siren".into(), 3.5), ("car_horn".into(), 2.0)],
            }],
            train_weights_by_city_raw: raw.clone(),
            train_weights_by_city_normalized: raw,
            ablation: None,
            timings: vec![("features".into(), 1.5)],
            emit_timings: false,
            warnings: vec!["MissingFile: x.wav".into()],
        };
        (report, vec!["Tokyo".to_string(), "Paris".to_string()])
    }

    #[test]
    fn json_parses_and_carries_the_key_fields() {
        let (report, _) = sample_report();
        let json = report.to_json("r_scores.csv");
        let v: serde_json::Value = serde_json::from_str(&json).expect("valid JSON");
        assert_eq!(v["config_fingerprint"], "abcd1234");
        assert_eq!(v["feature_kind"], "linear_combination");
        assert_eq!(v["classifier"], "mlp");
        assert!(v["mean_eer"].is_number());
        assert!((v["mean_eer"].as_f64().unwrap() - 0.161728394).abs() < 1e-9);
        assert!((v["per_city_eer"]["Tokyo"].as_f64().unwrap() - 0.123456789).abs() < 1e-9);
        assert_eq!(v["timings"], serde_json::json!({}));
        assert_eq!(v["warnings"][0], "MissingFile: x.wav");
        assert_eq!(v["scores_ref"], "r_scores.csv");
    }

    #[test]
    fn floats_carry_nine_significant_digits() {
        let (report, _) = sample_report();
        let json = report.to_json("s.csv");
        assert!(json.contains("1.23456789e-1"), "{json}");
        assert!(json.contains("1.61728394e-1") || json.contains("1.61728395e-1"));
    }

    #[test]
    fn emission_is_byte_stable() {
        let (report, _) = sample_report();
        assert_eq!(report.to_json("s.csv"), report.to_json("s.csv"));
    }

    #[test]
    fn timings_appear_only_when_requested() {
        let (mut report, _) = sample_report();
        report.emit_timings = true;
        let json = report.to_json("s.csv");
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert!(v["timings"]["features"].is_number());
    }

    #[test]
    fn write_and_parse_back_round_trip() {
        let (report, cities) = sample_report();
        let dir = std::env::temp_dir().join(format!("cityid_report_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.json");
        emit_report(&report, &cities, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        // values survive at serialization precision
        assert_eq!(v["seed"], 42);
        assert_eq!(v["counts"]["train_frames"], 100);
        assert_eq!(
            v["evidence"][0]["top"][0]["class"].as_str().unwrap(),
            "siren"
        );
        // identical second write
        let again = dir.join("run2.json");
        emit_report(&report, &cities, &again).unwrap();
        // names of the sidecars differ, so compare after normalizing them
        let a = text.replace("run_scores.csv", "SCORES");
        let b = std::fs::read_to_string(&again)
            .unwrap()
            .replace("run2_scores.csv", "SCORES");
        assert_eq!(a, b);
        // sidecar exists and has a row per video
        let csv = std::fs::read_to_string(dir.join("run_scores.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("video,true_city,Paris,Tokyo"));
    }

    #[test]
    fn csv_emitters_have_plot_ready_columns() {
        let (report, _) = sample_report();
        assert!(eer_csv(&report).starts_with("feature_kind,classifier,eer\n"));
        let w = weights_csv(&report);
        assert!(w.starts_with("city,class,mean_weight\n"));
        assert!(w.contains("Tokyo,car_horn,"));
        let ab = AblationReport {
            entries: vec![],
            mean_by_size: [(2, 0.4), (10, 0.2)].into_iter().collect(),
            seed: 1,
        };
        let csv = ablation_csv(&ab);
        assert!(csv.contains("2,4.00000000e-1"));
        assert!(csv.contains("10,2.00000000e-1"));
    }

    #[test]
    fn strings_are_escaped() {
        let (mut report, cities) = sample_report();
        report.warnings = vec!["path \"with\" quotes\nand newline".into()];
        let json = report.to_json("s.csv");
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["warnings"][0], "path \"with\" quotes\nand newline");
        let _ = cities;
    }
}
