//! Fixed little-endian binary layouts for codebooks and parameter tensors.
//!
//! Every file starts with an 8-byte magic and a `u32` version. Integers are
//! little-endian, reals are IEEE-754 `f64` little-endian, strings are a `u32`
//! byte length followed by UTF-8.
//!
//! Codebook (`PRLCODE1`):
//!
//! ```text
//! magic[8] version:u32 scheme:u8 dim:u32 m:u32 k:u32 seed:u64 body
//!   scheme 0 pq      m = subspaces; body = m blocks of k x dim/m reals
//!   scheme 1 rq      m = levels;    body = per level rows:u32 then rows x dim reals
//!   scheme 2 atomic  body = count:u32 then count strings
//!   scheme 3 string  m = max length; body = count:u32 then count strings
//! ```
//!
//! Tensor container (`PRLTENS1`):
//!
//! ```text
//! magic[8] version:u32 kind:string meta:string(JSON) count:u32
//!   count x (name:string rows:u32 cols:u32 rows*cols reals, row-major)
//! ```

use std::path::Path;

use pearl_core::index::PropertyCodebook;
use pearl_core::quantize::{AtomicCodebook, PqCodebook, RqCodebook, StringCodebook};
use pearl_core::tensor::Mat;

use crate::error::{Error, Result};
use crate::formats::write_bytes;

pub const CODEBOOK_MAGIC: &[u8; 8] = b"PRLCODE1";
pub const TENSOR_MAGIC: &[u8; 8] = b"PRLTENS1";
pub const VERSION: u32 = 1;

#[derive(Default)]
pub struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn u8(&mut self, x: u8) {
        self.buf.push(x);
    }

    pub fn u32(&mut self, x: usize) {
        let x = u32::try_from(x).expect("value fits in u32");
        self.buf.extend_from_slice(&x.to_le_bytes());
    }

    pub fn u64(&mut self, x: u64) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }

    pub fn f64s(&mut self, xs: &[f64]) {
        for x in xs {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }
}

pub struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    pub fn new(path: &'a Path, bytes: &'a [u8]) -> Reader<'a> {
        Reader { bytes, pos: 0, path }
    }

    /// Byte offsets stand in for line numbers in binary format errors.
    pub fn fail(&self, message: impl std::fmt::Display) -> Error {
        Error::format(self.path, self.pos, format!("byte offset {}: {message}", self.pos))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail("unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| self.fail("length overflow"))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| self.fail("invalid UTF-8"))
    }

    pub fn header(&mut self, magic: &[u8; 8]) -> Result<()> {
        if self.take(8)? != magic {
            return Err(self.fail(format!("not a {} file", String::from_utf8_lossy(magic))));
        }
        let v = self.u32()?;
        if v != VERSION as usize {
            return Err(self.fail(format!("unsupported version {v}, expected {VERSION}")));
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.fail("trailing bytes"));
        }
        Ok(())
    }
}

pub fn encode_codebook(book: &PropertyCodebook) -> Vec<u8> {
    let mut w = Writer::default();
    w.buf.extend_from_slice(CODEBOOK_MAGIC);
    w.u32(VERSION as usize);
    match book {
        PropertyCodebook::Pq(b) => {
            w.u8(0);
            w.u32(b.dim);
            w.u32(b.m);
            w.u32(b.k);
            w.u64(b.seed);
            for c in &b.centroids {
                w.f64s(&c.data);
            }
        }
        PropertyCodebook::Rq(b) => {
            w.u8(1);
            w.u32(b.dim);
            w.u32(b.levels.len());
            w.u32(b.k);
            w.u64(b.seed);
            for l in &b.levels {
                w.u32(l.rows);
                w.f64s(&l.data);
            }
        }
        PropertyCodebook::Atomic(b) => {
            w.u8(2);
            w.u32(0);
            w.u32(0);
            w.u32(b.values.len());
            w.u64(0);
            w.u32(b.values.len());
            b.values.iter().for_each(|v| w.str(v));
        }
        PropertyCodebook::String(b) => {
            w.u8(3);
            w.u32(0);
            w.u32(b.max_len);
            w.u32(b.words.len());
            w.u64(0);
            w.u32(b.words.len());
            b.words.iter().for_each(|v| w.str(v));
        }
    }
    w.buf
}

pub fn decode_codebook(path: &Path, bytes: &[u8]) -> Result<PropertyCodebook> {
    let mut r = Reader::new(path, bytes);
    r.header(CODEBOOK_MAGIC)?;
    let scheme = r.u8()?;
    let dim = r.u32()?;
    let m = r.u32()?;
    let k = r.u32()?;
    let seed = r.u64()?;
    let book = match scheme {
        0 => {
            if m == 0 || dim % m != 0 {
                return Err(r.fail(format!("dimension {dim} is not divisible into {m} subspaces")));
            }
            let sub = dim / m;
            let centroids =
                (0..m).map(|_| Ok(Mat::from_vec(k, sub, r.f64s(k * sub)?))).collect::<Result<Vec<_>>>()?;
            PropertyCodebook::Pq(PqCodebook { dim, m, k, seed, centroids })
        }
        1 => {
            let levels = (0..m)
                .map(|_| {
                    let rows = r.u32()?;
                    Ok(Mat::from_vec(rows, dim, r.f64s(rows * dim)?))
                })
                .collect::<Result<Vec<_>>>()?;
            PropertyCodebook::Rq(RqCodebook { dim, k, seed, levels })
        }
        2 | 3 => {
            let n = r.u32()?;
            let words = (0..n).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
            if scheme == 2 {
                PropertyCodebook::Atomic(AtomicCodebook::from_values(words))
            } else {
                PropertyCodebook::String(StringCodebook::from_words(words, m))
            }
        }
        s => return Err(r.fail(format!("unknown scheme tag {s}"))),
    };
    r.finish()?;
    Ok(book)
}

/// Named tensors plus a JSON metadata blob.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub kind: String,
    pub meta: String,
    pub tensors: Vec<(String, Mat)>,
}

impl TensorFile {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.buf.extend_from_slice(TENSOR_MAGIC);
        w.u32(VERSION as usize);
        w.str(&self.kind);
        w.str(&self.meta);
        w.u32(self.tensors.len());
        for (name, m) in &self.tensors {
            w.str(name);
            w.u32(m.rows);
            w.u32(m.cols);
            w.f64s(&m.data);
        }
        w.buf
    }

    pub fn decode(path: &Path, bytes: &[u8], kind: &str) -> Result<TensorFile> {
        let mut r = Reader::new(path, bytes);
        r.header(TENSOR_MAGIC)?;
        let found = r.str()?;
        if found != kind {
            return Err(r.fail(format!("holds a {found:?}, expected a {kind:?}")));
        }
        let meta = r.str()?;
        let n = r.u32()?;
        let mut tensors = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.str()?;
            let rows = r.u32()?;
            let cols = r.u32()?;
            tensors.push((name, Mat::from_vec(rows, cols, r.f64s(rows * cols)?)));
        }
        r.finish()?;
        Ok(TensorFile { kind: found, meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.encode())
    }

    pub fn load(path: &Path, kind: &str) -> Result<TensorFile> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        TensorFile::decode(path, &bytes, kind)
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }
}
