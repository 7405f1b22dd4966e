//! `DRNMF1` model container: a magic header, a `key=value` metadata block and
//! a list of named little-endian `f64` arrays.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "DRNMF1"
//! u32 metadata length, metadata bytes ("key=value\n" lines, UTF-8)
//! u32 array count
//! per array: u16 name length, name, u8 dtype length, dtype ("f64le"),
//!            u8 ndim, ndim x u64 dims, prod(dims) x f64
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::network::{DrNmfParams, Trainables};
use crate::snmf::Dictionary;

pub const MAGIC: &[u8; 6] = b"DRNMF1";
const DTYPE: &str = "f64le";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedArray {
    pub fn from_matrix(name: impl Into<String>, m: &Array2<f64>) -> Self {
        NamedArray {
            name: name.into(),
            shape: vec![m.nrows(), m.ncols()],
            data: m.iter().copied().collect(),
        }
    }

    pub fn from_vector(name: impl Into<String>, v: &Array1<f64>) -> Self {
        NamedArray { name: name.into(), shape: vec![v.len()], data: v.to_vec() }
    }

    pub fn scalar(name: impl Into<String>, v: f64) -> Self {
        NamedArray { name: name.into(), shape: vec![], data: vec![v] }
    }

    fn to_matrix(&self) -> Result<Array2<f64>> {
        match self.shape[..] {
            [r, c] => Ok(Array2::from_shape_vec((r, c), self.data.clone()).expect("checked on read")),
            _ => Err(Error::shape(format!("{} has shape {:?}, expected a matrix", self.name, self.shape))),
        }
    }

    fn to_vector(&self) -> Result<Array1<f64>> {
        match self.shape[..] {
            [_] => Ok(Array1::from_vec(self.data.clone())),
            _ => Err(Error::shape(format!("{} has shape {:?}, expected a vector", self.name, self.shape))),
        }
    }

    fn to_scalar(&self) -> Result<f64> {
        if self.shape.is_empty() {
            Ok(self.data[0])
        } else {
            Err(Error::shape(format!("{} has shape {:?}, expected a scalar", self.name, self.shape)))
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelFile {
    pub metadata: BTreeMap<String, String>,
    pub arrays: Vec<NamedArray>,
}

impl ModelFile {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.metadata.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.metadata
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::InvalidArgument(format!("model metadata lacks `{key}`")))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key)?;
        v.parse()
            .map_err(|_| Error::InvalidArgument(format!("model metadata `{key}` = `{v}` does not parse")))
    }

    pub fn array(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::InvalidArgument(format!("model has no array `{name}`")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut meta = String::new();
        for (k, v) in &self.metadata {
            if k.is_empty() || k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::InvalidArgument(format!("metadata entry `{k}` cannot be stored")));
            }
            meta.push_str(k);
            meta.push('=');
            meta.push_str(v);
            meta.push('\n');
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&u32::try_from(meta.len()).map_err(|_| too_big("metadata"))?.to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out.extend_from_slice(&u32::try_from(self.arrays.len()).map_err(|_| too_big("array count"))?.to_le_bytes());
        for a in &self.arrays {
            let expected: usize = a.shape.iter().product();
            if expected != a.data.len() {
                return Err(Error::shape(format!(
                    "{}: shape {:?} holds {expected} values, got {}",
                    a.name,
                    a.shape,
                    a.data.len()
                )));
            }
            out.extend_from_slice(&u16::try_from(a.name.len()).map_err(|_| too_big("array name"))?.to_le_bytes());
            out.extend_from_slice(a.name.as_bytes());
            out.push(DTYPE.len() as u8);
            out.extend_from_slice(DTYPE.as_bytes());
            out.push(u8::try_from(a.shape.len()).map_err(|_| too_big("ndim"))?);
            for &d in &a.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &a.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err("not a DRNMF1 model file".into());
        }
        let meta_len = r.u32()? as usize;
        let meta = std::str::from_utf8(r.take(meta_len)?).map_err(|_| "metadata is not UTF-8".to_string())?;
        let mut metadata = BTreeMap::new();
        for line in meta.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("malformed metadata line `{line}`"))?;
            metadata.insert(k.to_string(), v.to_string());
        }
        let count = r.u32()? as usize;
        let mut arrays = Vec::new();
        for _ in 0..count {
            let name_len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| "array name is not UTF-8".to_string())?;
            let dtype_len = r.take(1)?[0] as usize;
            let dtype = r.take(dtype_len)?;
            if dtype != DTYPE.as_bytes() {
                return Err(format!("array `{name}` has unsupported dtype {:?}", String::from_utf8_lossy(dtype)));
            }
            let ndim = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(ndim);
            let mut len: usize = 1;
            for _ in 0..ndim {
                let d = usize::try_from(u64::from_le_bytes(r.take(8)?.try_into().unwrap()))
                    .map_err(|_| format!("array `{name}` dimension overflows"))?;
                len = len.checked_mul(d).ok_or_else(|| format!("array `{name}` is too large"))?;
                shape.push(d);
            }
            let nbytes = len.checked_mul(8).ok_or_else(|| format!("array `{name}` is too large"))?;
            let data = r
                .take(nbytes)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            arrays.push(NamedArray { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        Ok(ModelFile { metadata, arrays })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        ModelFile::from_bytes(&bytes).map_err(|m| Error::format(path, m))
    }
}

fn too_big(what: &str) -> Error {
    Error::InvalidArgument(format!("{what} too large for the model container"))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format!("truncated at byte {}", self.pos)),
        }
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub const KIND_SNMF: &str = "snmf";
pub const KIND_DRNMF: &str = "drnmf";

fn expect_kind(m: &ModelFile, kind: &str) -> Result<()> {
    let found = m.get("kind")?;
    if found != kind {
        return Err(Error::InvalidArgument(format!("expected a {kind} model, found {found}")));
    }
    Ok(())
}

/// Container for a sparse NMF dictionary. `extra` entries (seeds, lambda1,
/// ...) are stored alongside the partition.
pub fn dictionary_model(dict: &Dictionary, extra: &BTreeMap<String, String>) -> ModelFile {
    let mut m = ModelFile { metadata: extra.clone(), arrays: vec![NamedArray::from_matrix("W", dict.w())] };
    m.set("kind", KIND_SNMF);
    m.set("n_speech", dict.n_speech());
    m.set("n_noise", dict.n_noise());
    m.set("N", dict.n_atoms());
    m
}

pub fn dictionary_from_model(m: &ModelFile) -> Result<Dictionary> {
    expect_kind(m, KIND_SNMF)?;
    Dictionary::new(m.array("W")?.to_matrix()?, m.parse("n_speech")?, m.parse("n_noise")?)
}

pub fn drnmf_model(p: &DrNmfParams, extra: &BTreeMap<String, String>) -> ModelFile {
    let mut m = ModelFile { metadata: extra.clone(), arrays: Vec::new() };
    for (k, w) in p.weights.w_log.iter().enumerate() {
        m.arrays.push(NamedArray::from_matrix(format!("W_log_{}", k + 1), w));
    }
    for (k, a) in p.weights.alpha_log.iter().enumerate() {
        m.arrays.push(NamedArray::scalar(format!("alpha_log_{}", k + 1), *a));
    }
    m.arrays.push(NamedArray::from_vector("h0_log", &p.weights.h0_log));
    m.set("kind", KIND_DRNMF);
    m.set("K", p.n_layers());
    m.set("N", p.n_atoms());
    m.set("n_speech", p.n_speech);
    m.set("n_noise", p.n_noise);
    m.set("lambda1", p.lambda1);
    m.set("eps_log", p.eps_log);
    m.set("eps_mask", p.eps_mask);
    m
}

pub fn drnmf_from_model(m: &ModelFile) -> Result<DrNmfParams> {
    expect_kind(m, KIND_DRNMF)?;
    let k: usize = m.parse("K")?;
    let mut w_log = Vec::with_capacity(k);
    let mut alpha_log = Array1::zeros(k);
    for i in 0..k {
        w_log.push(m.array(&format!("W_log_{}", i + 1))?.to_matrix()?);
        alpha_log[i] = m.array(&format!("alpha_log_{}", i + 1))?.to_scalar()?;
    }
    let p = DrNmfParams {
        weights: Trainables { w_log, alpha_log, h0_log: m.array("h0_log")?.to_vector()? },
        lambda1: m.parse("lambda1")?,
        n_speech: m.parse("n_speech")?,
        n_noise: m.parse("n_noise")?,
        eps_log: m.parse("eps_log")?,
        eps_mask: m.parse("eps_mask")?,
    };
    p.validate()?;
    Ok(p)
}

pub fn save_dictionary(path: impl AsRef<Path>, dict: &Dictionary, extra: &BTreeMap<String, String>) -> Result<()> {
    dictionary_model(dict, extra).write(path)
}

pub fn load_dictionary(path: impl AsRef<Path>) -> Result<Dictionary> {
    let path = path.as_ref();
    dictionary_from_model(&ModelFile::read(path)?).map_err(|e| Error::format(path, e.to_string()))
}

pub fn save_drnmf(path: impl AsRef<Path>, p: &DrNmfParams, extra: &BTreeMap<String, String>) -> Result<()> {
    drnmf_model(p, extra).write(path)
}

pub fn load_drnmf(path: impl AsRef<Path>) -> Result<DrNmfParams> {
    let path = path.as_ref();
    drnmf_from_model(&ModelFile::read(path)?).map_err(|e| Error::format(path, e.to_string()))
}
