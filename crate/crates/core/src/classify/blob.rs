//! Versioned binary blob format for trained models.
//!
//! Layout, all little-endian: magic "SCM1", u32 version, u8 kind,
//! u32 header length + UTF-8 JSON header, payload sections, trailing
//! u64 FNV-1a checksum over everything before it.

use super::ClassifyError;

pub const MODEL_MAGIC: [u8; 4] = *b"SCM1";
pub const MODEL_VERSION: u32 = 1;
pub const KIND_FOREST: u8 = 0;
pub const KIND_MLP: u8 = 1;

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

pub struct BlobWriter {
    buf: Vec<u8>,
}

impl BlobWriter {
    pub fn new(kind: u8, header_json: &str) -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(&MODEL_MAGIC);
        buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        buf.push(kind);
        buf.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
        buf.extend_from_slice(header_json.as_bytes());
        Self { buf }
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn i32(&mut self, v: i32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, vs: impl IntoIterator<Item = f64>) {
        for v in vs {
            self.f64(v);
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        let checksum = fnv1a(&self.buf);
        self.buf.extend_from_slice(&checksum.to_le_bytes());
        self.buf
    }
}

pub struct BlobReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BlobReader<'a> {
    /// Validate magic, version, kind, and checksum; position after the header.
    pub fn new(bytes: &'a [u8], expected_kind: u8) -> Result<(Self, String), ClassifyError> {
        let bad = |m: &str| ClassifyError::BadModel(m.to_string());
        if bytes.len() < 21 {
            return Err(bad("blob too short"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().unwrap());
        if fnv1a(body) != stored {
            return Err(bad("checksum mismatch"));
        }
        if body[0..4] != MODEL_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(body[4..8].try_into().unwrap());
        if version != MODEL_VERSION {
            return Err(ClassifyError::BadModel(format!("unsupported version {version}")));
        }
        if body[8] != expected_kind {
            return Err(ClassifyError::BadModel(format!(
                "model kind {} does not match expected {expected_kind}",
                body[8]
            )));
        }
        let header_len = u32::from_le_bytes(body[9..13].try_into().unwrap()) as usize;
        if 13 + header_len > body.len() {
            return Err(bad("header overruns blob"));
        }
        let header = String::from_utf8(body[13..13 + header_len].to_vec())
            .map_err(|_| bad("header is not UTF-8"))?;
        Ok((
            Self {
                bytes: body,
                pos: 13 + header_len,
            },
            header,
        ))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ClassifyError> {
        if self.pos + n > self.bytes.len() {
            return Err(ClassifyError::BadModel("payload truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32, ClassifyError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn i32(&mut self) -> Result<i32, ClassifyError> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64, ClassifyError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>, ClassifyError> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_checksum_detection() {
        let mut w = BlobWriter::new(KIND_FOREST, r#"{"x":1}"#);
        w.u32(7);
        w.f64(3.25);
        let mut bytes = w.finish();

        let (mut r, header) = BlobReader::new(&bytes, KIND_FOREST).unwrap();
        assert_eq!(header, r#"{"x":1}"#);
        assert_eq!(r.u32().unwrap(), 7);
        assert_eq!(r.f64().unwrap(), 3.25);

        // flip one payload byte: checksum must catch it
        let n = bytes.len();
        bytes[n - 12] ^= 0xFF;
        assert!(BlobReader::new(&bytes, KIND_FOREST).is_err());
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let bytes = BlobWriter::new(KIND_MLP, "{}").finish();
        assert!(BlobReader::new(&bytes, KIND_FOREST).is_err());
    }
}
