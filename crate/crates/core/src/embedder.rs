//! Text encoders and the binary embedding store.
//!
//! Store layout (little-endian): `b"EMB1"`, `u32` rows, `u32` dim, `u8`
//! precision (4 = f32, 8 = f64), then the row-major payload.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::digest::{sha256_hex, sha256_u64};

pub const STORE_MAGIC: &[u8; 4] = b"EMB1";

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic or truncated header")]
    BadMagic,
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("unsupported precision flag {0}")]
    BadPrecision(u8),
    #[error("text {0} is empty")]
    EmptyText(usize),
    #[error("encoder failed on text {index}: {reason}")]
    EncoderFailure { index: usize, reason: String },
    #[error("non-finite value in row {0}")]
    NonFinite(usize),
}

pub type Result<T> = std::result::Result<T, EmbedError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    fn flag(self) -> u8 {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }

    fn from_flag(flag: u8) -> Result<Self> {
        match flag {
            4 => Ok(Precision::F32),
            8 => Ok(Precision::F64),
            other => Err(EmbedError::BadPrecision(other)),
        }
    }
}

/// Row-major matrix of finite embeddings, one row per catalog entry.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    data: Array2<f64>,
}

impl EmbeddingMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        for (r, row) in data.rows().into_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(EmbedError::NonFinite(r));
            }
        }
        Ok(EmbeddingMatrix { data })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
            return Err(EmbedError::DimMismatch(format!(
                "row {bad} has {} entries, expected {dim}",
                rows[bad].len()
            )));
        }
        let n = rows.len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Self::new(Array2::from_shape_vec((n, dim), flat).expect("shape checked"))
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array2<f64> {
        self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.rows().into_iter().map(|r| r.to_vec()).collect()
    }

    /// Order-sensitive digest of the exact bit patterns.
    pub fn checksum(&self) -> String {
        let mut bytes = Vec::with_capacity(self.data.len() * 8 + 8);
        bytes.extend_from_slice(&(self.rows() as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        for v in self.data.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        sha256_hex(bytes)
    }
}

pub(crate) fn write_block<W: Write>(w: &mut W, m: &Array2<f64>, precision: Precision) -> std::io::Result<()> {
    w.write_all(STORE_MAGIC)?;
    w.write_all(&(m.nrows() as u32).to_le_bytes())?;
    w.write_all(&(m.ncols() as u32).to_le_bytes())?;
    w.write_all(&[precision.flag()])?;
    for v in m.iter() {
        match precision {
            Precision::F32 => w.write_all(&(*v as f32).to_le_bytes())?,
            Precision::F64 => w.write_all(&v.to_le_bytes())?,
        }
    }
    Ok(())
}

fn read_exact_or_magic<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => EmbedError::BadMagic,
        _ => EmbedError::Io(e),
    })
}

/// Reads one block, leaving the reader positioned after its payload.
pub(crate) fn read_block<R: Read>(r: &mut R) -> Result<(Array2<f64>, Precision)> {
    let mut header = [0u8; 13];
    read_exact_or_magic(r, &mut header)?;
    if &header[..4] != STORE_MAGIC {
        return Err(EmbedError::BadMagic);
    }
    let rows = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let precision = Precision::from_flag(header[12])?;
    let width = precision.flag() as usize;
    let mut payload = vec![0u8; rows * dim * width];
    let mut filled = 0;
    while filled < payload.len() {
        match r.read(&mut payload[filled..])? {
            0 => {
                return Err(EmbedError::DimMismatch(format!(
                    "header declares {rows}x{dim} but payload holds {} values",
                    filled / width
                )))
            }
            n => filled += n,
        }
    }
    let values: Vec<f64> = match precision {
        Precision::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Precision::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Ok((Array2::from_shape_vec((rows, dim), values).expect("sized"), precision))
}

pub fn store_write(matrix: &EmbeddingMatrix, path: &Path, precision: Precision) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_block(&mut w, &matrix.data, precision)?;
    w.flush()?;
    Ok(())
}

pub fn store_read(path: &Path) -> Result<EmbeddingMatrix> {
    let mut r = BufReader::new(File::open(path)?);
    let (data, _) = read_block(&mut r)?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(EmbedError::DimMismatch(
            "payload longer than the header declares".into(),
        ));
    }
    EmbeddingMatrix::new(data)
}

/// Maps one text to a fixed-width vector.
pub trait TextEncoder: Send + Sync {
    fn dim(&self) -> usize;
    fn encode(&self, text: &str) -> std::result::Result<Vec<f64>, String>;
}

/// Deterministic offline encoder: the text's SHA-256 seeds a generator that
/// draws `dim` standard normals, and the draw is L2-normalized.
#[derive(Debug, Clone)]
pub struct StubEncoder {
    dim: usize,
    seed: u64,
}

impl StubEncoder {
    pub const DEFAULT_DIM: usize = 32;

    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "stub encoder needs a positive dimension");
        StubEncoder { dim, seed }
    }
}

impl Default for StubEncoder {
    fn default() -> Self {
        StubEncoder::new(Self::DEFAULT_DIM, 0)
    }
}

impl TextEncoder for StubEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> std::result::Result<Vec<f64>, String> {
        let mut key = self.seed.to_le_bytes().to_vec();
        key.extend_from_slice(text.as_bytes());
        let mut rng = ChaCha8Rng::seed_from_u64(sha256_u64(key));
        let v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err("degenerate draw".into());
        }
        Ok(v.into_iter().map(|x| x / norm).collect())
    }
}

/// Looks texts up in vectors computed by an external sentence encoder.
///
/// The key file is a TSV of `sha256(text)<TAB>row` into the store.
#[derive(Debug, Clone)]
pub struct PrecomputedEncoder {
    vectors: EmbeddingMatrix,
    rows: HashMap<String, usize>,
}

impl PrecomputedEncoder {
    pub fn new(vectors: EmbeddingMatrix, rows: HashMap<String, usize>) -> Result<Self> {
        if let Some((_, &r)) = rows.iter().find(|(_, &r)| r >= vectors.rows()) {
            return Err(EmbedError::DimMismatch(format!(
                "key row {r} outside store with {} rows",
                vectors.rows()
            )));
        }
        Ok(PrecomputedEncoder { vectors, rows })
    }

    pub fn open(store: &Path, keys: &Path) -> Result<Self> {
        let vectors = store_read(store)?;
        let text = std::fs::read_to_string(keys)?;
        let mut rows = HashMap::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let (hash, row) = line.split_once('\t').ok_or_else(|| {
                EmbedError::DimMismatch(format!("key file line {} is malformed", n + 1))
            })?;
            let row = row.trim().parse::<usize>().map_err(|_| {
                EmbedError::DimMismatch(format!("key file line {} has a bad row", n + 1))
            })?;
            rows.insert(hash.to_string(), row);
        }
        Self::new(vectors, rows)
    }

    /// Key-file lines for `texts` stored in order.
    pub fn key_lines(texts: &[String]) -> String {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| format!("{}\t{i}\n", sha256_hex(t)))
            .collect()
    }
}

impl TextEncoder for PrecomputedEncoder {
    fn dim(&self) -> usize {
        self.vectors.dim()
    }

    fn encode(&self, text: &str) -> std::result::Result<Vec<f64>, String> {
        let row = self
            .rows
            .get(&sha256_hex(text))
            .ok_or_else(|| "text has no precomputed vector".to_string())?;
        Ok(self.vectors.row(*row).to_vec())
    }
}

/// Encodes every text, one row per text in input order.
pub fn encode_texts(encoder: &dyn TextEncoder, texts: &[String]) -> Result<EmbeddingMatrix> {
    if let Some(i) = texts.iter().position(|t| t.is_empty()) {
        return Err(EmbedError::EmptyText(i));
    }
    let dim = encoder.dim();
    let rows: Vec<Vec<f64>> = texts
        .par_iter()
        .enumerate()
        .map(|(index, t)| {
            let v = encoder
                .encode(t)
                .map_err(|reason| EmbedError::EncoderFailure { index, reason })?;
            if v.len() != dim {
                return Err(EmbedError::EncoderFailure {
                    index,
                    reason: format!("encoder returned {} values, expected {dim}", v.len()),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(EmbedError::EncoderFailure {
                    index,
                    reason: "non-finite output".into(),
                });
            }
            Ok(v)
        })
        .collect::<Result<_>>()?;
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    EmbeddingMatrix::new(Array2::from_shape_vec((texts.len(), dim), flat).expect("sized"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn stub_is_deterministic_and_unit_norm() {
        let enc = StubEncoder::default();
        let m = encode_texts(&enc, &strings(&["a", "a", "b"])).unwrap();
        assert_eq!(m.row(0), m.row(1));
        assert_ne!(m.row(0), m.row(2));
        for r in 0..3 {
            let norm = m.row(r).dot(&m.row(r)).sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_text_rejected() {
        let enc = StubEncoder::default();
        assert!(matches!(
            encode_texts(&enc, &strings(&["x", ""])),
            Err(EmbedError::EmptyText(1))
        ));
    }

    #[test]
    fn precomputed_lookup_and_failure_index() {
        let vectors = EmbeddingMatrix::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let store = dir.path().join("v.emb");
        let keys = dir.path().join("v.keys");
        store_write(&vectors, &store, Precision::F64).unwrap();
        std::fs::write(&keys, PrecomputedEncoder::key_lines(&strings(&["alpha", "beta"]))).unwrap();
        let enc = PrecomputedEncoder::open(&store, &keys).unwrap();
        let m = encode_texts(&enc, &strings(&["beta", "alpha"])).unwrap();
        assert_eq!(m.to_rows(), vec![vec![3.0, 4.0], vec![1.0, 2.0]]);
        let err = encode_texts(&enc, &strings(&["alpha", "gamma"])).unwrap_err();
        assert!(matches!(err, EmbedError::EncoderFailure { index: 1, .. }));
    }

    #[test]
    fn store_round_trip_2x3() {
        let m = EmbeddingMatrix::from_rows(vec![vec![0.1, -2.5, 3.0], vec![1e-300, 7.0, -0.0]]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.emb");
        store_write(&m, &p, Precision::F64).unwrap();
        let back = store_read(&p).unwrap();
        assert_eq!(back.checksum(), m.checksum());
    }

    #[test]
    fn store_f32_round_trip_for_representable_values() {
        let m = EmbeddingMatrix::from_rows(vec![vec![0.5, -1.25], vec![3.0, 1024.0]]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.emb");
        store_write(&m, &p, Precision::F32).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 13 + 4 * 4);
        assert_eq!(store_read(&p).unwrap(), m);
    }

    #[test]
    fn truncated_header_is_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.emb");
        std::fs::write(&p, b"EMB1\x02\x00").unwrap();
        assert!(matches!(store_read(&p), Err(EmbedError::BadMagic)));
        std::fs::write(&p, b"XXXX\x00\x00\x00\x00\x00\x00\x00\x00\x08").unwrap();
        assert!(matches!(store_read(&p), Err(EmbedError::BadMagic)));
    }

    #[test]
    fn short_payload_is_dim_mismatch() {
        let m = EmbeddingMatrix::from_rows(vec![vec![1.0]; 4]).unwrap();
        let mut bytes = Vec::new();
        write_block(&mut bytes, m.as_array(), Precision::F64).unwrap();
        bytes[4..8].copy_from_slice(&5u32.to_le_bytes());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.emb");
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(store_read(&p), Err(EmbedError::DimMismatch(_))));
    }

    proptest! {
        #[test]
        fn encode_is_order_preserving(texts in proptest::collection::vec("[a-z]{1,8}", 1..8), rot in 0usize..8) {
            let enc = StubEncoder::new(8, 3);
            let m = encode_texts(&enc, &texts).unwrap();
            let mut rotated = texts.clone();
            let k = rot % texts.len();
            rotated.rotate_left(k);
            let r = encode_texts(&enc, &rotated).unwrap();
            for i in 0..texts.len() {
                prop_assert_eq!(r.row(i), m.row((i + k) % texts.len()));
            }
        }

        #[test]
        fn store_round_trip_is_identity(rows in 0usize..6, dim in 0usize..5, seed in any::<u64>()) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = Array2::from_shape_fn((rows, dim), |_| rng.random_range(-1e6..1e6));
            let m = EmbeddingMatrix::new(data).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("p.emb");
            store_write(&m, &p, Precision::F64).unwrap();
            prop_assert_eq!(store_read(&p).unwrap(), m);
        }
    }
}
