//! Feature cache: one binary matrix per (file content, feature params) key.
//!
//! File format "SCF1", little-endian: magic, u32 version, u32 rows,
//! u32 cols, row-major f64 data, trailing u64 FNV-1a checksum over all
//! preceding bytes. Writes go to a temp file renamed into place so
//! concurrent readers never observe a partial entry.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::Array2;
use sha2::{Digest, Sha256};

use super::HarnessError;

const MAGIC: [u8; 4] = *b"SCF1";
const VERSION: u32 = 1;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

pub fn encode_matrix(m: &Array2<f64>) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + m.len() * 8 + 8);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
    buf.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
    for v in m.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let checksum = fnv1a(&buf);
    buf.extend_from_slice(&checksum.to_le_bytes());
    buf
}

pub fn decode_matrix(bytes: &[u8]) -> Result<Array2<f64>, HarnessError> {
    let bad = |m: &str| HarnessError::StaleCache(m.to_string());
    if bytes.len() < 24 {
        return Err(bad("entry shorter than header"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    if fnv1a(body) != u64::from_le_bytes(tail.try_into().unwrap()) {
        return Err(bad("checksum mismatch"));
    }
    if body[0..4] != MAGIC {
        return Err(bad("bad magic"));
    }
    if u32::from_le_bytes(body[4..8].try_into().unwrap()) != VERSION {
        return Err(bad("unsupported version"));
    }
    let rows = u32::from_le_bytes(body[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(body[12..16].try_into().unwrap()) as usize;
    if body.len() != 16 + rows * cols * 8 {
        return Err(bad("length does not match dimensions"));
    }
    let data: Vec<f64> = body[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Array2::from_shape_vec((rows, cols), data)
        .map_err(|e| HarnessError::StaleCache(e.to_string()))
}

/// Hash of a source file's raw bytes; part of every cache key.
pub fn content_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest[..16].iter().map(|b| format!("{b:02x}")).collect()
}

/// Versioned on-disk form of a basis matrix. JSON keeps the class names
/// embedded; serde's float formatting round-trips f64 exactly.
#[derive(serde::Serialize, serde::Deserialize)]
struct BasisFile {
    format_version: u32,
    class_names: Vec<String>,
    clip_counts: Vec<usize>,
    rows: usize,
    cols: usize,
    /// Row-major.
    data: Vec<f64>,
}

pub fn basis_to_json(basis: &crate::semantic::BasisMatrix) -> String {
    let file = BasisFile {
        format_version: 1,
        class_names: basis.class_names.clone(),
        clip_counts: basis.clip_counts.clone(),
        rows: basis.columns.nrows(),
        cols: basis.columns.ncols(),
        data: basis.columns.iter().copied().collect(),
    };
    serde_json::to_string_pretty(&file).expect("basis serializes")
}

pub fn basis_from_json(text: &str) -> Result<crate::semantic::BasisMatrix, HarnessError> {
    let file: BasisFile = serde_json::from_str(text)
        .map_err(|e| HarnessError::InvalidManifest(format!("basis file: {e}")))?;
    if file.format_version != 1 {
        return Err(HarnessError::InvalidManifest(format!(
            "basis file: unsupported version {}",
            file.format_version
        )));
    }
    if file.data.len() != file.rows * file.cols || file.class_names.len() != file.cols {
        return Err(HarnessError::InvalidManifest(
            "basis file: inconsistent dimensions".into(),
        ));
    }
    Ok(crate::semantic::BasisMatrix {
        columns: Array2::from_shape_vec((file.rows, file.cols), file.data)
            .map_err(|e| HarnessError::InvalidManifest(format!("basis file: {e}")))?,
        class_names: file.class_names,
        clip_counts: file.clip_counts,
    })
}

pub struct FeatureCache {
    dir: PathBuf,
    /// Fingerprint of the feature parameters baked into every key.
    params_key: String,
    hits: AtomicUsize,
    misses: AtomicUsize,
    stale: AtomicUsize,
}

impl FeatureCache {
    pub fn open(dir: impl AsRef<Path>, params_key: &str) -> Result<Self, HarnessError> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e.to_string()))?;
        Ok(Self {
            dir,
            params_key: params_key.to_string(),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
            stale: AtomicUsize::new(0),
        })
    }

    fn entry_path(&self, content_hash: &str, kind: &str) -> PathBuf {
        let digest = Sha256::digest(format!("{content_hash}:{}:{kind}", self.params_key));
        let name: String = digest[..16].iter().map(|b| format!("{b:02x}")).collect();
        self.dir.join(format!("{name}.scf"))
    }

    /// Look up a cached matrix; a corrupt or stale entry counts as a miss.
    pub fn get(&self, content_hash: &str, kind: &str) -> Option<Array2<f64>> {
        let path = self.entry_path(content_hash, kind);
        let bytes = std::fs::read(&path).ok()?;
        match decode_matrix(&bytes) {
            Ok(m) => {
                self.hits.fetch_add(1, Ordering::Relaxed);
                Some(m)
            }
            Err(_) => {
                log::warn!("StaleCache: recomputing {}", path.display());
                self.stale.fetch_add(1, Ordering::Relaxed);
                None
            }
        }
    }

    /// Store a matrix under the key; atomic rename-on-complete.
    pub fn put(&self, content_hash: &str, kind: &str, m: &Array2<f64>) -> Result<(), HarnessError> {
        self.misses.fetch_add(1, Ordering::Relaxed);
        let path = self.entry_path(content_hash, kind);
        let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
        std::fs::write(&tmp, encode_matrix(m)).map_err(|e| HarnessError::io(&tmp, e.to_string()))?;
        std::fs::rename(&tmp, &path).map_err(|e| HarnessError::io(&path, e.to_string()))?;
        Ok(())
    }

    pub fn stats(&self) -> (usize, usize, usize) {
        (
            self.hits.load(Ordering::Relaxed),
            self.misses.load(Ordering::Relaxed),
            self.stale.load(Ordering::Relaxed),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn tmp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("cityid_cache_{tag}_{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn round_trip() {
        let cache = FeatureCache::open(tmp_dir("rt"), "params-a").unwrap();
        let m = Array2::from_shape_fn((7, 5), |(i, j)| (i * 10 + j) as f64 * 0.5);
        assert!(cache.get("file1", "context").is_none());
        cache.put("file1", "context", &m).unwrap();
        let back = cache.get("file1", "context").unwrap();
        assert_eq!(m, back);
        let (hits, misses, _) = cache.stats();
        assert_eq!((hits, misses), (1, 1));
    }

    #[test]
    fn params_change_forces_recompute() {
        let dir = tmp_dir("params");
        let m = Array2::from_elem((2, 2), 1.5);
        let a = FeatureCache::open(&dir, "params-a").unwrap();
        a.put("file1", "global", &m).unwrap();
        assert!(a.get("file1", "global").is_some());
        // same file, different feature params: different key, miss
        let b = FeatureCache::open(&dir, "params-b").unwrap();
        assert!(b.get("file1", "global").is_none());
        // and kind is part of the key too
        assert!(a.get("file1", "context").is_none());
    }

    #[test]
    fn corrupt_entry_is_detected_and_treated_as_miss() {
        let dir = tmp_dir("corrupt");
        let cache = FeatureCache::open(&dir, "p").unwrap();
        let m = Array2::from_elem((3, 3), 2.0);
        cache.put("f", "global", &m).unwrap();
        // flip a byte in the one entry on disk
        let entry = std::fs::read_dir(&dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .find(|p| p.extension().is_some_and(|e| e == "scf"))
            .unwrap();
        let mut bytes = std::fs::read(&entry).unwrap();
        bytes[20] ^= 0xFF;
        std::fs::write(&entry, bytes).unwrap();
        assert!(cache.get("f", "global").is_none());
        let (_, _, stale) = cache.stats();
        assert_eq!(stale, 1);
    }

    #[test]
    fn content_hash_distinguishes_bytes() {
        assert_ne!(content_hash(b"abc"), content_hash(b"abd"));
        assert_eq!(content_hash(b"abc"), content_hash(b"abc"));
    }

    #[test]
    fn basis_json_round_trips_exactly() {
        let basis = crate::semantic::BasisMatrix {
            columns: Array2::from_shape_fn((crate::STAT_DIM, 3), |(i, j)| {
                (i as f64 * 0.1 + j as f64) * std::f64::consts::PI
            }),
            class_names: vec!["car_horn".into(), "siren".into(), "dog_bark".into()],
            clip_counts: vec![4, 5, 6],
        };
        let json = basis_to_json(&basis);
        let back = basis_from_json(&json).unwrap();
        assert_eq!(basis.columns, back.columns);
        assert_eq!(basis.class_names, back.class_names);
        assert_eq!(basis.clip_counts, back.clip_counts);
        assert!(basis_from_json("{\"format_version\":2}").is_err());
    }
}
