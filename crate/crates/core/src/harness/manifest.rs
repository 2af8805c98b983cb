//! CSV manifest loaders and the train/test split.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::HarnessError;
use crate::{CITIES, URBAN_SOUND_CLASSES};

/// One row of an UrbanSound8K-style metadata file.
#[derive(Debug, Clone, PartialEq)]
pub struct UrbanSoundEntry {
    pub slice_file_name: String,
    pub fs_id: u64,
    pub start_s: f64,
    pub end_s: f64,
    /// 1 = foreground, 2 = background.
    pub salience: u8,
    pub fold: u8,
    pub class_id: u8,
    pub class_name: String,
}

impl UrbanSoundEntry {
    /// Audio lives at `<manifest dir>/audio/fold<fold>/<slice_file_name>`.
    pub fn audio_path(&self, manifest_dir: &Path) -> PathBuf {
        manifest_dir
            .join("audio")
            .join(format!("fold{}", self.fold))
            .join(&self.slice_file_name)
    }
}

/// One labeled city soundtrack.
#[derive(Debug, Clone, PartialEq)]
pub struct CityEntry {
    pub path: PathBuf,
    pub city: String,
}

fn required_column(headers: &csv::StringRecord, name: &str) -> Result<usize, HarnessError> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| HarnessError::MissingColumn(name.to_string()))
}

/// Parse and validate an UrbanSound8K metadata CSV. Unknown columns are
/// ignored.
pub fn load_urbansound_manifest(path: impl AsRef<Path>) -> Result<Vec<UrbanSoundEntry>, HarnessError> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| HarnessError::io(path, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| HarnessError::io(path, e.to_string()))?
        .clone();
    let col_file = required_column(&headers, "slice_file_name")?;
    let col_fsid = required_column(&headers, "fsID")?;
    let col_start = required_column(&headers, "start")?;
    let col_end = required_column(&headers, "end")?;
    let col_salience = required_column(&headers, "salience")?;
    let col_fold = required_column(&headers, "fold")?;
    let col_class_id = required_column(&headers, "classID")?;
    let col_class = required_column(&headers, "class")?;

    let mut entries = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| HarnessError::io(path, e.to_string()))?;
        let field = |i: usize| record.get(i).unwrap_or("").trim().to_string();
        let parse_f64 = |i: usize, name: &str| -> Result<f64, HarnessError> {
            field(i).parse().map_err(|_| {
                HarnessError::InvalidManifest(format!(
                    "row {}: bad {name} value '{}'",
                    line + 2,
                    field(i)
                ))
            })
        };
        let fold: u8 = field(col_fold).parse().map_err(|_| {
            HarnessError::BadFold(format!("row {}: fold '{}'", line + 2, field(col_fold)))
        })?;
        if !(1..=10).contains(&fold) {
            return Err(HarnessError::BadFold(format!(
                "row {}: fold {fold} outside 1..=10",
                line + 2
            )));
        }
        let class_id: u8 = field(col_class_id).parse().map_err(|_| {
            HarnessError::BadClassId(format!(
                "row {}: classID '{}'",
                line + 2,
                field(col_class_id)
            ))
        })?;
        if class_id > 9 {
            return Err(HarnessError::BadClassId(format!(
                "row {}: classID {class_id} outside 0..=9",
                line + 2
            )));
        }
        let class_name = field(col_class);
        if class_name != URBAN_SOUND_CLASSES[class_id as usize] {
            return Err(HarnessError::BadClassId(format!(
                "row {}: class '{}' does not match classID {} ('{}')",
                line + 2,
                class_name,
                class_id,
                URBAN_SOUND_CLASSES[class_id as usize]
            )));
        }
        let start_s = parse_f64(col_start, "start")?;
        let end_s = parse_f64(col_end, "end")?;
        if end_s < start_s {
            return Err(HarnessError::InvalidManifest(format!(
                "row {}: end {end_s} before start {start_s}",
                line + 2
            )));
        }
        entries.push(UrbanSoundEntry {
            slice_file_name: field(col_file),
            fs_id: field(col_fsid).parse().unwrap_or(0),
            start_s,
            end_s,
            salience: field(col_salience).parse().unwrap_or(1),
            fold,
            class_id,
            class_name,
        });
    }
    Ok(entries)
}

/// Parse a city manifest (columns `path`, `city`). City names match the
/// 18-city list case-insensitively; paths are resolved against the manifest
/// directory and absent files are reported as warnings, not errors.
pub fn load_city_manifest(
    path: impl AsRef<Path>,
) -> Result<(Vec<CityEntry>, Vec<String>), HarnessError> {
    let path = path.as_ref();
    let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| HarnessError::io(path, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| HarnessError::io(path, e.to_string()))?
        .clone();
    let col_path = required_column(&headers, "path")?;
    let col_city = required_column(&headers, "city")?;

    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| HarnessError::io(path, e.to_string()))?;
        let rel = record.get(col_path).unwrap_or("").trim().to_string();
        let city_raw = record.get(col_city).unwrap_or("").trim().to_string();
        let city = CITIES
            .iter()
            .find(|c| c.eq_ignore_ascii_case(&city_raw))
            .ok_or_else(|| {
                HarnessError::UnknownCity(format!("row {}: '{}'", line + 2, city_raw))
            })?;
        let full = dir.join(&rel);
        if !full.exists() {
            warnings.push(format!("MissingFile: {}", full.display()));
        }
        entries.push(CityEntry {
            path: full,
            city: city.to_string(),
        });
    }
    Ok((entries, warnings))
}

/// Seeded shuffle-and-split. The train share follows the 541/1080 protocol
/// proportion: `train = round(n * num / den)`.
pub fn split_city_entries(
    entries: &[CityEntry],
    fraction: (u32, u32),
    seed: u64,
) -> (Vec<CityEntry>, Vec<CityEntry>) {
    let mut order: Vec<usize> = (0..entries.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let n_train = ((entries.len() as f64) * fraction.0 as f64 / fraction.1 as f64).round() as usize;
    let n_train = n_train.min(entries.len());
    let train = order[..n_train].iter().map(|&i| entries[i].clone()).collect();
    let test = order[n_train..].iter().map(|&i| entries[i].clone()).collect();
    (train, test)
}
