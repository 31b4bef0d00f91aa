//! Little-endian binary containers.
//!
//! All three formats start with a 4-byte magic and a `u32` version.
//!
//! `SFPM` (profile matrix): `u64 T`, `u64 N`, `u64 n_series`, then per series
//! `str id`, `u64 start_offset`, `u64 len`; then `T * N` row-major `f64`
//! values; then the row-major mask packed 8 cells per byte, least significant
//! bit first.
//!
//! `SFSM` (sparse metadata): `u64 rows`, `u64 cols`, `u64 nnz`, `cols + 1`
//! `u64` column pointers, `nnz` `u64` row indices, `nnz` `f64` values,
//! `u64 n_labels` and the labels as `str`.
//!
//! `SFMD` (model): a `str` holding the JSON header `{"spec", "dims"}`, a
//! `u32` array count, then per array `str name`, `u32 ndim`, `ndim` `u64`
//! extents and the row-major `f64` data.
//!
//! A `str` is a `u32` byte length followed by UTF-8 bytes.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metadata::MetadataMatrix;
use crate::model::{Dims, ModelParams, ModelSpec};
use crate::profile::{ProfileMatrix, SeriesYearIndex};
use crate::sparse::CscMatrix;

pub const VERSION: u32 = 1;
pub const PROFILE_MAGIC: &[u8; 4] = b"SFPM";
pub const SPARSE_MAGIC: &[u8; 4] = b"SFSM";
pub const MODEL_MAGIC: &[u8; 4] = b"SFMD";

#[derive(Default)]
struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    fn new(magic: &[u8; 4]) -> Self {
        let mut e = Encoder::default();
        e.buf.extend_from_slice(magic);
        e.u32(VERSION);
        e
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }

    fn f64s(&mut self, vs: impl IntoIterator<Item = f64>) {
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
}

struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    fn new(buf: &'a [u8], magic: &[u8; 4]) -> Result<Self> {
        let mut d = Decoder { buf, pos: 0 };
        if d.take(4)? != magic {
            return Err(Error::Format(format!(
                "bad magic, expected {}",
                String::from_utf8_lossy(magic)
            )));
        }
        let version = d.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        Ok(d)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("size overflow".into()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn usizes(&mut self, n: usize) -> Result<Vec<usize>> {
        (0..n).map(|_| self.usize()).collect()
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("invalid UTF-8".into()))
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

pub fn encode_profile(pm: &ProfileMatrix) -> Vec<u8> {
    let mut e = Encoder::new(PROFILE_MAGIC);
    let (t, n) = pm.data().dim();
    e.usize(t);
    e.usize(n);
    let spans = pm.index().spans();
    e.usize(spans.len());
    for s in spans {
        e.str(&s.id);
        e.usize(s.start_offset);
        e.usize(s.len);
    }
    e.f64s(pm.data().iter().copied());
    let mut bits = vec![0u8; (t * n).div_ceil(8)];
    for (k, &m) in pm.mask().iter().enumerate() {
        if m {
            bits[k / 8] |= 1 << (k % 8);
        }
    }
    e.buf.extend_from_slice(&bits);
    e.buf
}

pub fn decode_profile(bytes: &[u8]) -> Result<ProfileMatrix> {
    let mut d = Decoder::new(bytes, PROFILE_MAGIC)?;
    let t = d.usize()?;
    let n = d.usize()?;
    let n_series = d.usize()?;
    let mut layout = Vec::with_capacity(n_series.min(1 << 20));
    for _ in 0..n_series {
        let id = d.str()?;
        let offset = d.usize()?;
        let len = d.usize()?;
        layout.push((id, offset, len));
    }
    let index = SeriesYearIndex::new(t, layout)?;
    if index.n_columns() != n {
        return Err(Error::Format(format!("index implies {} columns, header says {n}", index.n_columns())));
    }
    let cells = t.checked_mul(n).ok_or_else(|| Error::Format("size overflow".into()))?;
    let data = Array2::from_shape_vec((t, n), d.f64s(cells)?).expect("length checked");
    let bits = d.take(cells.div_ceil(8))?;
    let mask = Array2::from_shape_fn((t, n), |(j, i)| {
        let k = j * n + i;
        bits[k / 8] >> (k % 8) & 1 == 1
    });
    d.finish()?;
    ProfileMatrix::new(data, mask, index)
}

pub fn encode_sparse(meta: &MetadataMatrix) -> Vec<u8> {
    let mut e = Encoder::new(SPARSE_MAGIC);
    let f = &meta.features;
    e.usize(f.n_rows);
    e.usize(f.n_cols());
    e.usize(f.nnz());
    f.col_ptr.iter().for_each(|&p| e.usize(p));
    f.row_idx.iter().for_each(|&r| e.usize(r));
    e.f64s(f.values.iter().copied());
    e.usize(meta.labels.len());
    meta.labels.iter().for_each(|l| e.str(l));
    e.buf
}

/// Decode an `SFSM` container. The vocabulary lives in a separate text file.
pub fn decode_sparse(bytes: &[u8], vocab: Vec<String>) -> Result<MetadataMatrix> {
    let mut d = Decoder::new(bytes, SPARSE_MAGIC)?;
    let n_rows = d.usize()?;
    let n_cols = d.usize()?;
    let nnz = d.usize()?;
    let col_ptr = d.usizes(n_cols.checked_add(1).ok_or_else(|| Error::Format("size overflow".into()))?)?;
    let row_idx = d.usizes(nnz)?;
    let values = d.f64s(nnz)?;
    let n_labels = d.usize()?;
    let labels = (0..n_labels).map(|_| d.str()).collect::<Result<Vec<_>>>()?;
    d.finish()?;
    MetadataMatrix::new(
        CscMatrix {
            n_rows,
            col_ptr,
            row_idx,
            values,
        },
        vocab,
        labels,
    )
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    spec: ModelSpec,
    dims: Dims,
}

pub fn encode_model(params: &ModelParams) -> Vec<u8> {
    let mut e = Encoder::new(MODEL_MAGIC);
    let header = serde_json::to_string(&ModelHeader {
        spec: params.spec,
        dims: params.dims,
    })
    .expect("header serializes");
    e.str(&header);
    let blocks = params.blocks();
    e.u32(blocks.len() as u32);
    for b in blocks {
        e.str(b.name);
        e.u32(b.shape.len() as u32);
        b.shape.iter().for_each(|&s| e.usize(s));
        e.f64s(b.data.iter().copied());
    }
    e.buf
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelParams> {
    let mut d = Decoder::new(bytes, MODEL_MAGIC)?;
    let header: ModelHeader = serde_json::from_str(&d.str()?)?;
    let mut params = ModelParams::zeros(header.spec, header.dims)?;
    let expected: Vec<(&'static str, Vec<usize>)> = params.blocks().iter().map(|b| (b.name, b.shape.clone())).collect();
    let n_arrays = d.u32()? as usize;
    if n_arrays != expected.len() {
        return Err(Error::Format(format!("{n_arrays} arrays, expected {}", expected.len())));
    }
    let mut loaded = Vec::with_capacity(n_arrays);
    for (name, shape) in &expected {
        let got_name = d.str()?;
        let ndim = d.u32()? as usize;
        let got_shape = d.usizes(ndim)?;
        if got_name != *name || got_shape != *shape {
            return Err(Error::Format(format!(
                "array '{got_name}' {got_shape:?} where '{name}' {shape:?} was expected"
            )));
        }
        loaded.push(d.f64s(shape.iter().product())?);
    }
    d.finish()?;
    for ((_, dst), src) in params.blocks_mut().into_iter().zip(loaded) {
        dst.copy_from_slice(&src);
    }
    Ok(params)
}
