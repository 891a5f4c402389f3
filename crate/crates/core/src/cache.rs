//! Binary embedding cache (`OFAC`) and joint-feature construction.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "OFAC" | version: u32 = 1 | n: u64 | d: u32
//! n × ( id_len: u16 | id: [u8; id_len] | image: [f32; d] | text: [f32; d] )
//! ```
//!
//! The cache stores raw per-encoder embeddings. Joint features are built on
//! load by concatenating the two halves and scaling to unit length, then kept
//! in 64-bit precision.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::matrix::{norm, Matrix};

pub const MAGIC: &[u8; 4] = b"OFAC";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 4 + 4 + 8 + 4;

/// Joint vectors at or below this norm are treated as blank embeddings.
pub const ZERO_NORM: f64 = 1e-12;

/// One candidate sample: an identifier plus its two encoder outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub image_emb: Vec<f32>,
    pub text_emb: Vec<f32>,
}

impl SampleRecord {
    pub fn new(id: impl Into<String>, image_emb: Vec<f32>, text_emb: Vec<f32>) -> Self {
        SampleRecord {
            id: id.into(),
            image_emb,
            text_emb,
        }
    }

    pub fn dim(&self) -> usize {
        self.image_emb.len()
    }

    fn validate(&self, d: usize) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::InvalidId("empty id".into()));
        }
        if self.id.len() > u16::MAX as usize {
            return Err(Error::InvalidId(format!(
                "id of {} bytes exceeds {}",
                self.id.len(),
                u16::MAX
            )));
        }
        for v in [&self.image_emb, &self.text_emb] {
            if v.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: v.len(),
                });
            }
        }
        if self
            .image_emb
            .iter()
            .chain(&self.text_emb)
            .any(|x| !x.is_finite())
        {
            return Err(Error::NonFinite(self.id.clone()));
        }
        Ok(())
    }
}

/// Options applied when turning raw embeddings into joint features.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Scale each modality to unit length before concatenating.
    #[serde(default)]
    pub prenormalize_modalities: bool,
}

/// Unit-norm joint features for a whole cache, in cache order.
#[derive(Debug, Clone)]
pub struct FeatureStore {
    d: usize,
    ids: Vec<String>,
    features: Matrix,
    digest: String,
}

impl FeatureStore {
    /// Builds a store from records already in memory. The digest is that of
    /// the records' cache encoding, so it matches what `read_cache` reports
    /// for the same content.
    pub fn from_records(records: &[SampleRecord], opts: LoadOptions) -> Result<Self> {
        let bytes = encode_cache(records)?;
        let d = records[0].dim();
        let mut data = Vec::with_capacity(records.len() * 2 * d);
        let mut ids = Vec::with_capacity(records.len());
        for r in records {
            data.extend(joint_feature(r, opts)?);
            ids.push(r.id.clone());
        }
        Ok(FeatureStore {
            d,
            ids,
            features: Matrix::from_vec(records.len(), 2 * d, data)?,
            digest: sha256_hex(&bytes),
        })
    }

    /// Per-encoder dimension `d`; rows are `2d` wide.
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    /// SHA-256 of the cache bytes this store was loaded from.
    pub fn digest(&self) -> &str {
        &self.digest
    }
}

/// `[image ; text] / ||[image ; text]||`.
pub fn concat_normalize(image_emb: &[f64], text_emb: &[f64]) -> Result<Vec<f64>> {
    if image_emb.len() != text_emb.len() {
        return Err(Error::DimensionMismatch {
            expected: image_emb.len(),
            got: text_emb.len(),
        });
    }
    let mut h: Vec<f64> = image_emb.iter().chain(text_emb).copied().collect();
    let n = norm(&h);
    if !(n > ZERO_NORM) {
        return Err(Error::ZeroVector { id: None });
    }
    for x in &mut h {
        *x /= n;
    }
    Ok(h)
}

fn joint_feature(r: &SampleRecord, opts: LoadOptions) -> Result<Vec<f64>> {
    let mut img: Vec<f64> = r.image_emb.iter().map(|&x| x as f64).collect();
    let mut txt: Vec<f64> = r.text_emb.iter().map(|&x| x as f64).collect();
    if opts.prenormalize_modalities {
        for v in [&mut img, &mut txt] {
            let n = norm(v);
            if n > ZERO_NORM {
                v.iter_mut().for_each(|x| *x /= n);
            }
        }
    }
    concat_normalize(&img, &txt).map_err(|e| match e {
        Error::ZeroVector { .. } => Error::ZeroVector {
            id: Some(r.id.clone()),
        },
        e => e,
    })
}

/// Exact file size for `n` records of dimension `d` with the given total id bytes.
pub fn expected_file_len(n: u64, d: u64, id_bytes: u64) -> u64 {
    HEADER_LEN + n * (2 + 8 * d) + id_bytes
}

pub fn encode_cache(records: &[SampleRecord]) -> Result<Vec<u8>> {
    let first = records.first().ok_or(Error::Empty)?;
    let d = first.dim();
    let mut seen = HashSet::with_capacity(records.len());
    let mut id_bytes = 0u64;
    for r in records {
        r.validate(d)?;
        if !seen.insert(r.id.as_str()) {
            return Err(Error::DuplicateId(r.id.clone()));
        }
        id_bytes += r.id.len() as u64;
    }
    let d32 = u32::try_from(d).map_err(|_| Error::DimensionMismatch {
        expected: u32::MAX as usize,
        got: d,
    })?;

    let len = expected_file_len(records.len() as u64, d as u64, id_bytes);
    let mut out = Vec::with_capacity(len as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    out.extend_from_slice(&d32.to_le_bytes());
    for r in records {
        out.extend_from_slice(&(r.id.len() as u16).to_le_bytes());
        out.extend_from_slice(r.id.as_bytes());
        for x in r.image_emb.iter().chain(&r.text_emb) {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    debug_assert_eq!(out.len() as u64, len);
    Ok(out)
}

pub fn write_cache(records: &[SampleRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_cache(records)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    expected: u64,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::TruncatedFile {
                expected: self.expected.max((self.pos + n) as u64),
                found: self.buf.len() as u64,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, d: usize) -> Result<Vec<f32>> {
        Ok(self
            .take(4 * d)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Decodes raw records, checking the header, ids and exact length.
pub fn decode_cache(bytes: &[u8]) -> Result<Vec<SampleRecord>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let mut cur = Cursor {
        buf: bytes,
        pos: 4,
        expected: HEADER_LEN,
    };
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let n = cur.u64()?;
    let d = cur.u32()? as usize;
    if n == 0 {
        return Err(Error::Empty);
    }
    // lower bound assuming empty ids; refined as ids are read
    cur.expected = expected_file_len(n, d as u64, 0);
    if cur.expected > bytes.len() as u64 {
        return Err(Error::TruncatedFile {
            expected: cur.expected,
            found: bytes.len() as u64,
        });
    }

    let mut records = Vec::with_capacity(n as usize);
    let mut seen = HashSet::with_capacity(n as usize);
    for _ in 0..n {
        let id_len = cur.u16()? as usize;
        cur.expected += id_len as u64;
        let id = std::str::from_utf8(cur.take(id_len)?)
            .map_err(|e| Error::InvalidId(e.to_string()))?
            .to_owned();
        let image_emb = cur.f32s(d)?;
        let text_emb = cur.f32s(d)?;
        let rec = SampleRecord {
            id,
            image_emb,
            text_emb,
        };
        rec.validate(d)?;
        if !seen.insert(rec.id.clone()) {
            return Err(Error::DuplicateId(rec.id));
        }
        records.push(rec);
    }
    if cur.pos != bytes.len() {
        return Err(Error::TruncatedFile {
            expected: cur.pos as u64,
            found: bytes.len() as u64,
        });
    }
    Ok(records)
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<SampleRecord>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cache(&bytes)
}

pub fn read_cache(path: impl AsRef<Path>) -> Result<FeatureStore> {
    read_cache_with(path, LoadOptions::default())
}

pub fn read_cache_with(path: impl AsRef<Path>, opts: LoadOptions) -> Result<FeatureStore> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let records = decode_cache(&bytes)?;
    let d = records[0].dim();
    let mut data = Vec::with_capacity(records.len() * 2 * d);
    for r in &records {
        data.extend(joint_feature(r, opts)?);
    }
    let n = records.len();
    Ok(FeatureStore {
        d,
        ids: records.into_iter().map(|r| r.id).collect(),
        features: Matrix::from_vec(n, 2 * d, data)?,
        digest: sha256_hex(&bytes),
    })
}
