//! Binary store of teacher token distributions for every ordered entity pair.
//!
//! Layout (little endian): magic `EVSILVER`, `u32` version, `u8` precision,
//! `u32` record count, then records in insertion order. A record is a `u8`
//! kind, a length-prefixed doc id and either `u32` entity count, `u32` token
//! count and the pair-major values (kind 0), or a length-prefixed skip reason
//! (kind 1).

use std::collections::HashMap;
use std::path::Path;

use half::f16;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

const MAGIC: &[u8; 8] = b"EVSILVER";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F16,
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f16" => Ok(Self::F16),
            "f32" => Ok(Self::F32),
            "f64" => Ok(Self::F64),
            _ => Err(Error::Config(format!("unknown precision `{s}` (expected f16, f32 or f64)"))),
        }
    }
}

impl Precision {
    fn tag(self) -> u8 {
        match self {
            Self::F16 => 0,
            Self::F32 => 1,
            Self::F64 => 2,
        }
    }

    fn from_tag(t: u8) -> Result<Self> {
        match t {
            0 => Ok(Self::F16),
            1 => Ok(Self::F32),
            2 => Ok(Self::F64),
            _ => Err(Error::Store(format!("unknown precision tag {t}"))),
        }
    }

    fn round(self, x: f64) -> f64 {
        match self {
            Self::F16 => f16::from_f64(x).to_f64(),
            Self::F32 => x as f32 as f64,
            Self::F64 => x,
        }
    }

    fn write(self, x: f64, out: &mut Vec<u8>) {
        match self {
            Self::F16 => out.extend(f16::from_f64(x).to_le_bytes()),
            Self::F32 => out.extend((x as f32).to_le_bytes()),
            Self::F64 => out.extend(x.to_le_bytes()),
        }
    }

    fn width(self) -> usize {
        match self {
            Self::F16 => 2,
            Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    /// Largest deviation from 1 tolerated for a stored row's mass.
    pub fn tolerance(self) -> f64 {
        match self {
            Self::F16 => 1e-4,
            Self::F32 => 1e-6,
            Self::F64 => 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SilverRecord {
    pub doc_id: String,
    pub num_entities: usize,
    pub num_tokens: usize,
    /// Row-major `m(m-1) x num_tokens`, pairs in lexicographic order; each
    /// row sums to one.
    pub values: Vec<f64>,
    /// The same rows at storage precision before renormalization.
    stored: Vec<f64>,
}

impl SilverRecord {
    pub fn num_pairs(&self) -> usize {
        self.num_entities * self.num_entities.saturating_sub(1)
    }

    pub fn get(&self, s: usize, o: usize) -> Option<&[f64]> {
        let i = pair_index(self.num_entities, s, o)?;
        Some(&self.values[i * self.num_tokens..(i + 1) * self.num_tokens])
    }

    /// All distributions as a `pairs x tokens` matrix.
    pub fn matrix(&self) -> Tensor {
        Tensor::matrix(self.num_pairs(), self.num_tokens, self.values.clone()).expect("sized")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedDocument {
    pub doc_id: String,
    pub reason: String,
}

/// Position of `(s, o)` among the lexicographically ordered pairs with
/// `s != o`.
pub fn pair_index(m: usize, s: usize, o: usize) -> Option<usize> {
    if s >= m || o >= m || s == o {
        return None;
    }
    Some(s * (m - 1) + if o < s { o } else { o - 1 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SilverEvidenceStore {
    precision: Precision,
    records: Vec<SilverRecord>,
    skipped: Vec<SkippedDocument>,
    /// Insertion order of records and skips, for serialization.
    order: Vec<(bool, usize)>,
    index: HashMap<String, usize>,
}

/// Rounds `values` to the storage precision in place and returns the rows
/// rescaled to unit mass in 64-bit arithmetic.
fn quantize_rows(values: &mut [f64], width: usize, precision: Precision) -> Result<Vec<f64>> {
    let mut normalized = Vec::with_capacity(values.len());
    for row in values.chunks_mut(width) {
        row.iter_mut().for_each(|x| *x = precision.round(*x));
        let s: f64 = row.iter().sum();
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::Store(format!("distribution with mass {s}")));
        }
        normalized.extend(row.iter().map(|x| x / s));
    }
    Ok(normalized)
}

impl SilverEvidenceStore {
    pub fn new(precision: Precision) -> Self {
        Self {
            precision,
            records: Vec::new(),
            skipped: Vec::new(),
            order: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    /// Adds one document's pair distributions (`m(m-1)` rows of `num_tokens`,
    /// lexicographic pair order). Values are held at storage precision,
    /// renormalized, so a saved and reloaded store compares equal.
    pub fn push_document(&mut self, doc_id: &str, num_entities: usize, num_tokens: usize, mut values: Vec<f64>) -> Result<()> {
        if self.index.contains_key(doc_id) || self.skipped.iter().any(|s| s.doc_id == doc_id) {
            return Err(Error::Store(format!("document `{doc_id}` stored twice")));
        }
        let pairs = num_entities * num_entities.saturating_sub(1);
        if values.len() != pairs * num_tokens {
            return Err(Error::Store(format!(
                "document `{doc_id}`: {} values for {pairs} pairs of {num_tokens} tokens",
                values.len()
            )));
        }
        let normalized = quantize_rows(&mut values, num_tokens.max(1), self.precision)?;
        self.index.insert(doc_id.to_string(), self.records.len());
        self.order.push((true, self.records.len()));
        self.records.push(SilverRecord {
            doc_id: doc_id.to_string(),
            num_entities,
            num_tokens,
            values: normalized,
            stored: values,
        });
        Ok(())
    }

    pub fn push_skipped(&mut self, doc_id: &str, reason: &str) {
        self.order.push((false, self.skipped.len()));
        self.skipped.push(SkippedDocument {
            doc_id: doc_id.to_string(),
            reason: reason.to_string(),
        });
    }

    pub fn record(&self, doc_id: &str) -> Option<&SilverRecord> {
        self.index.get(doc_id).map(|&i| &self.records[i])
    }

    pub fn get(&self, doc_id: &str, s: usize, o: usize) -> Option<&[f64]> {
        self.record(doc_id)?.get(s, o)
    }

    pub fn records(&self) -> &[SilverRecord] {
        &self.records
    }

    pub fn skipped(&self) -> &[SkippedDocument] {
        &self.skipped
    }

    pub fn num_distributions(&self) -> usize {
        self.records.iter().map(SilverRecord::num_pairs).sum()
    }

    /// Fails on the first corpus document that has neither a stored record
    /// nor a skip record.
    pub fn check_coverage(&self, corpus: &Corpus) -> Result<()> {
        for d in &corpus.documents {
            match self.record(&d.doc_id) {
                None if self.skipped.iter().any(|s| s.doc_id == d.doc_id) => {}
                None => return Err(Error::StoreCoverage(d.doc_id.clone())),
                Some(r) if r.num_entities != d.entities.len() => {
                    return Err(Error::Consistency(format!(
                        "document `{}`: store has {} entities, corpus has {}",
                        d.doc_id,
                        r.num_entities,
                        d.entities.len()
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(VERSION.to_le_bytes());
        out.push(self.precision.tag());
        out.extend((self.order.len() as u32).to_le_bytes());
        let put_str = |out: &mut Vec<u8>, s: &str| {
            out.extend((s.len() as u32).to_le_bytes());
            out.extend(s.as_bytes());
        };
        for &(is_doc, i) in &self.order {
            if is_doc {
                let r = &self.records[i];
                out.push(0);
                put_str(&mut out, &r.doc_id);
                out.extend((r.num_entities as u32).to_le_bytes());
                out.extend((r.num_tokens as u32).to_le_bytes());
                for &x in &r.stored {
                    self.precision.write(x, &mut out);
                }
            } else {
                let s = &self.skipped[i];
                out.push(1);
                put_str(&mut out, &s.doc_id);
                put_str(&mut out, &s.reason);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Store("not a silver evidence store".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Store(format!("unsupported version {version}")));
        }
        let precision = Precision::from_tag(r.take(1)?[0])?;
        let n = r.u32()? as usize;
        let mut store = Self::new(precision);
        for _ in 0..n {
            let kind = r.take(1)?[0];
            let doc_id = r.string()?;
            match kind {
                0 => {
                    let m = r.u32()? as usize;
                    let t = r.u32()? as usize;
                    let count = m * m.saturating_sub(1) * t;
                    let raw = r.take(count * precision.width())?;
                    let values: Vec<f64> = raw
                        .chunks_exact(precision.width())
                        .map(|c| match precision {
                            Precision::F16 => f16::from_le_bytes([c[0], c[1]]).to_f64(),
                            Precision::F32 => f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64,
                            Precision::F64 => f64::from_le_bytes(c.try_into().expect("8 bytes")),
                        })
                        .collect();
                    store.push_document(&doc_id, m, t, values)?;
                }
                1 => {
                    let reason = r.string()?;
                    store.push_skipped(&doc_id, &reason);
                }
                k => return Err(Error::Store(format!("unknown record kind {k}"))),
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Store("trailing bytes".into()));
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Store("truncated file".into()));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Store("doc id is not UTF-8".into()))
    }
}
