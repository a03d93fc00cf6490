//! Identifier codes for property values: product quantization, residual
//! k-means, atomic integers and string token sequences.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::sq_dist;
use crate::rng::{rng_for, ChaCha8Rng};
use crate::tensor::Mat;
use crate::text::tokenize;

/// Lloyd iteration cap.
pub const MAX_ITERS: usize = 100;
/// Default maximum decoding steps, which also bounds string codes.
pub const MAX_STEPS: usize = 15;
/// String-code symbol standing for an empty property value.
pub const EMPTY_WORD: &str = "<empty>";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QuantizeError {
    #[error("dimension {dim} is not divisible by {m} subspaces")]
    Indivisible { dim: usize, m: usize },
    #[error("{what} {index} has {distinct} distinct vectors, need at least k = {k}")]
    TooFewDistinct { what: &'static str, index: usize, distinct: usize, k: usize },
    #[error("no training vectors")]
    Empty,
    #[error("k must be positive")]
    ZeroK,
    #[error("vector has dimension {found}, expected {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("symbol {symbol} at position {position} is out of range (k = {k})")]
    SymbolOutOfRange { position: usize, symbol: u32, k: usize },
    #[error("code has length {found}, expected {expected}")]
    CodeLength { expected: usize, found: usize },
    #[error("unknown value {0:?}")]
    UnknownValue(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Pq,
    Rq,
    Atomic,
    String,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Atomic, Scheme::String, Scheme::Rq, Scheme::Pq];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Pq => "pq",
            Scheme::Rq => "rq",
            Scheme::Atomic => "atomic",
            Scheme::String => "string",
        }
    }

    /// Code symbols depend on their position (pq, rq) or not (atomic, string).
    pub fn position_qualified(self) -> bool {
        matches!(self, Scheme::Pq | Scheme::Rq)
    }

    pub fn fixed_length(self) -> bool {
        !matches!(self, Scheme::String)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Scheme, String> {
        Scheme::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| alloc::format!("unknown scheme {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PropertyCode {
    pub scheme: Scheme,
    pub code: Vec<u32>,
}

/// Index of the nearest row of `centroids` (lowest index on ties) and its
/// squared distance.
pub fn nearest(centroids: &Mat, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for j in 0..centroids.rows {
        let d = sq_dist(centroids.row(j), x);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Row indices of the first occurrence of each distinct row, in row order.
fn distinct_rows(points: &Mat) -> Vec<usize> {
    let mut seen: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
    let mut out = Vec::new();
    for i in 0..points.rows {
        let key: Vec<u64> = points.row(i).iter().map(|x| (x + 0.0).to_bits()).collect();
        if let alloc::collections::btree_map::Entry::Vacant(e) = seen.entry(key) {
            e.insert(i);
            out.push(i);
        }
    }
    out
}

pub fn distinct_count(points: &Mat) -> usize {
    distinct_rows(points).len()
}

/// Lloyd's k-means. Initial centroids are `k` distinct points sampled with
/// `rng`; iteration stops at an assignment fixpoint or after [`MAX_ITERS`].
/// Empty clusters are reseeded with the point farthest from its centroid.
///
/// Returns `Err(distinct)` when there are fewer than `k` distinct points.
pub fn kmeans(points: &Mat, k: usize, rng: &mut ChaCha8Rng) -> Result<Mat, usize> {
    let distinct = distinct_rows(points);
    if distinct.len() < k || k == 0 {
        return Err(distinct.len());
    }
    let dim = points.cols;
    let mut centroids = Mat::zeros(k, dim);
    for (j, pick) in sample(rng, distinct.len(), k).into_iter().enumerate() {
        centroids.row_mut(j).copy_from_slice(points.row(distinct[pick]));
    }
    let n = points.rows;
    let mut assign = vec![usize::MAX; n];
    let mut dist = vec![0.0; n];
    for _ in 0..MAX_ITERS {
        let mut changed = false;
        for i in 0..n {
            let (c, d) = nearest(&centroids, points.row(i));
            dist[i] = d;
            if assign[i] != c {
                assign[i] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = Mat::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assign[i]] += 1;
            for (s, x) in sums.row_mut(assign[i]).iter_mut().zip(points.row(i)) {
                *s += x;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                let c = counts[j] as f64;
                for (dst, s) in centroids.row_mut(j).iter_mut().zip(sums.row(j)) {
                    *dst = s / c;
                }
            } else {
                let mut far = 0;
                for i in 1..n {
                    if dist[i] > dist[far] {
                        far = i;
                    }
                }
                dist[far] = -1.0;
                centroids.row_mut(j).copy_from_slice(points.row(far));
            }
        }
    }
    Ok(centroids)
}

fn check_vectors(vectors: &[Vec<f64>]) -> Result<usize, QuantizeError> {
    let dim = vectors.first().ok_or(QuantizeError::Empty)?.len();
    for v in vectors {
        if v.len() != dim {
            return Err(QuantizeError::Dimension { expected: dim, found: v.len() });
        }
    }
    Ok(dim)
}

fn stack(vectors: &[Vec<f64>], from: usize, width: usize) -> Mat {
    let mut m = Mat::zeros(vectors.len(), width);
    for (i, v) in vectors.iter().enumerate() {
        m.row_mut(i).copy_from_slice(&v[from..from + width]);
    }
    m
}

/// Product-quantization codebook: `m` subspaces with `k` centroids each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PqCodebook {
    pub dim: usize,
    pub m: usize,
    pub k: usize,
    pub seed: u64,
    /// One `k x dim/m` matrix per subspace.
    pub centroids: Vec<Mat>,
}

/// Smallest distinct sub-vector count over the `m` subspaces.
pub fn min_distinct_subvectors(vectors: &[Vec<f64>], m: usize) -> Result<usize, QuantizeError> {
    let dim = check_vectors(vectors)?;
    if m == 0 || dim % m != 0 {
        return Err(QuantizeError::Indivisible { dim, m });
    }
    let w = dim / m;
    Ok((0..m).map(|s| distinct_count(&stack(vectors, s * w, w))).min().unwrap())
}

pub fn train_pq(vectors: &[Vec<f64>], m: usize, k: usize, seed: u64) -> Result<PqCodebook, QuantizeError> {
    let dim = check_vectors(vectors)?;
    if m == 0 || dim % m != 0 {
        return Err(QuantizeError::Indivisible { dim, m });
    }
    if k == 0 {
        return Err(QuantizeError::ZeroK);
    }
    let w = dim / m;
    let mut centroids = Vec::with_capacity(m);
    for s in 0..m {
        let sub = stack(vectors, s * w, w);
        let mut rng = rng_for(seed, &alloc::format!("pq/{s}"));
        let c = kmeans(&sub, k, &mut rng)
            .map_err(|distinct| QuantizeError::TooFewDistinct { what: "subspace", index: s, distinct, k })?;
        centroids.push(c);
    }
    Ok(PqCodebook { dim, m, k, seed, centroids })
}

impl PqCodebook {
    pub fn sub_dim(&self) -> usize {
        self.dim / self.m
    }

    pub fn encode(&self, v: &[f64]) -> Result<PropertyCode, QuantizeError> {
        if v.len() != self.dim {
            return Err(QuantizeError::Dimension { expected: self.dim, found: v.len() });
        }
        let w = self.sub_dim();
        let code = (0..self.m).map(|s| nearest(&self.centroids[s], &v[s * w..(s + 1) * w]).0 as u32).collect();
        Ok(PropertyCode { scheme: Scheme::Pq, code })
    }

    pub fn reconstruct(&self, code: &[u32]) -> Result<Vec<f64>, QuantizeError> {
        if code.len() != self.m {
            return Err(QuantizeError::CodeLength { expected: self.m, found: code.len() });
        }
        let mut out = Vec::with_capacity(self.dim);
        for (s, &c) in code.iter().enumerate() {
            if c as usize >= self.k {
                return Err(QuantizeError::SymbolOutOfRange { position: s, symbol: c, k: self.k });
            }
            out.extend_from_slice(self.centroids[s].row(c as usize));
        }
        Ok(out)
    }

    /// Mean squared reconstruction error over `vectors`.
    pub fn error(&self, vectors: &[Vec<f64>]) -> Result<f64, QuantizeError> {
        mean_error(vectors, |v| self.reconstruct(&self.encode(v)?.code))
    }

    /// Per-subspace mean squared error; their sum equals [`PqCodebook::error`].
    pub fn subspace_errors(&self, vectors: &[Vec<f64>]) -> Vec<f64> {
        let w = self.sub_dim();
        (0..self.m)
            .map(|s| {
                let total: f64 =
                    vectors.iter().map(|v| nearest(&self.centroids[s], &v[s * w..(s + 1) * w]).1).sum();
                total / vectors.len() as f64
            })
            .collect()
    }
}

fn mean_error(
    vectors: &[Vec<f64>],
    mut recon: impl FnMut(&[f64]) -> Result<Vec<f64>, QuantizeError>,
) -> Result<f64, QuantizeError> {
    let mut total = 0.0;
    for v in vectors {
        total += sq_dist(v, &recon(v)?);
    }
    Ok(total / vectors.len().max(1) as f64)
}

/// Residual k-means: level `l` clusters what levels `0..l` left unexplained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RqCodebook {
    pub dim: usize,
    pub k: usize,
    pub seed: u64,
    /// One `k_l x dim` matrix per level; `k_l = k` unless capped.
    pub levels: Vec<Mat>,
}

pub fn train_rq(vectors: &[Vec<f64>], levels: usize, k: usize, seed: u64) -> Result<RqCodebook, QuantizeError> {
    train_rq_inner(vectors, levels, k, seed, false)
}

/// As [`train_rq`], but a level with fewer than `k` distinct residuals uses
/// that many clusters instead of failing.
pub fn train_rq_capped(vectors: &[Vec<f64>], levels: usize, k: usize, seed: u64) -> Result<RqCodebook, QuantizeError> {
    train_rq_inner(vectors, levels, k, seed, true)
}

fn train_rq_inner(
    vectors: &[Vec<f64>],
    levels: usize,
    k: usize,
    seed: u64,
    cap: bool,
) -> Result<RqCodebook, QuantizeError> {
    let dim = check_vectors(vectors)?;
    if k == 0 {
        return Err(QuantizeError::ZeroK);
    }
    let mut residual = stack(vectors, 0, dim);
    let mut out = Vec::with_capacity(levels);
    for l in 0..levels {
        let mut kl = k;
        if cap {
            kl = kl.min(distinct_count(&residual));
        }
        let mut rng = rng_for(seed, &alloc::format!("rq/{l}"));
        let c = kmeans(&residual, kl, &mut rng)
            .map_err(|distinct| QuantizeError::TooFewDistinct { what: "level", index: l, distinct, k: kl })?;
        for i in 0..residual.rows {
            let j = nearest(&c, residual.row(i)).0;
            for (r, x) in residual.row_mut(i).iter_mut().zip(c.row(j)) {
                *r -= x;
            }
        }
        out.push(c);
    }
    Ok(RqCodebook { dim, k, seed, levels: out })
}

impl RqCodebook {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn encode(&self, v: &[f64]) -> Result<PropertyCode, QuantizeError> {
        if v.len() != self.dim {
            return Err(QuantizeError::Dimension { expected: self.dim, found: v.len() });
        }
        let mut r = v.to_vec();
        let mut code = Vec::with_capacity(self.levels.len());
        for c in &self.levels {
            let j = nearest(c, &r).0;
            for (x, y) in r.iter_mut().zip(c.row(j)) {
                *x -= y;
            }
            code.push(j as u32);
        }
        Ok(PropertyCode { scheme: Scheme::Rq, code })
    }

    pub fn reconstruct(&self, code: &[u32]) -> Result<Vec<f64>, QuantizeError> {
        if code.len() != self.levels.len() {
            return Err(QuantizeError::CodeLength { expected: self.levels.len(), found: code.len() });
        }
        let mut out = vec![0.0; self.dim];
        for (l, (&s, c)) in code.iter().zip(&self.levels).enumerate() {
            if s as usize >= c.rows {
                return Err(QuantizeError::SymbolOutOfRange { position: l, symbol: s, k: c.rows });
            }
            for (o, x) in out.iter_mut().zip(c.row(s as usize)) {
                *o += x;
            }
        }
        Ok(out)
    }

    pub fn error(&self, vectors: &[Vec<f64>]) -> Result<f64, QuantizeError> {
        mean_error(vectors, |v| self.reconstruct(&self.encode(v)?.code))
    }
}

/// Dense integer per distinct value, in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomicCodebook {
    pub values: Vec<String>,
    #[serde(skip)]
    lookup: BTreeMap<String, u32>,
}

pub fn build_atomic<S: AsRef<str>>(properties: &[S]) -> (AtomicCodebook, Vec<PropertyCode>) {
    let mut book = AtomicCodebook::default();
    let codes = properties.iter().map(|p| book.intern(p.as_ref())).collect();
    (book, codes)
}

impl AtomicCodebook {
    pub fn from_values(values: Vec<String>) -> AtomicCodebook {
        let lookup = values.iter().enumerate().map(|(i, v)| (v.clone(), i as u32)).collect();
        AtomicCodebook { values, lookup }
    }

    /// Rebuilds the lookup after deserialization.
    pub fn reindex(&mut self) {
        *self = AtomicCodebook::from_values(core::mem::take(&mut self.values));
    }

    fn intern(&mut self, value: &str) -> PropertyCode {
        let next = self.values.len() as u32;
        let id = *self.lookup.entry(value.to_string()).or_insert(next);
        if id == next {
            self.values.push(value.to_string());
        }
        PropertyCode { scheme: Scheme::Atomic, code: vec![id] }
    }

    pub fn encode(&self, value: &str) -> Result<PropertyCode, QuantizeError> {
        self.lookup
            .get(value)
            .map(|&id| PropertyCode { scheme: Scheme::Atomic, code: vec![id] })
            .ok_or_else(|| QuantizeError::UnknownValue(value.to_string()))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Word list for string codes; symbol `i` is `words[i]`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StringCodebook {
    pub words: Vec<String>,
    pub max_len: usize,
    #[serde(skip)]
    lookup: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StringCodes {
    pub book: StringCodebook,
    pub codes: Vec<PropertyCode>,
    /// Values that were cut to `max_len` tokens.
    pub truncated: usize,
}

/// Token-id sequences of the property text, cut to `max_len` tokens. An
/// empty value is coded as the single [`EMPTY_WORD`] symbol.
pub fn build_string<S: AsRef<str>>(properties: &[S], max_len: usize) -> StringCodes {
    let mut book = StringCodebook { max_len, ..StringCodebook::default() };
    let mut truncated = 0;
    let codes = properties
        .iter()
        .map(|p| {
            let (code, cut) = book.intern(p.as_ref());
            truncated += usize::from(cut);
            code
        })
        .collect();
    StringCodes { book, codes, truncated }
}

impl StringCodebook {
    pub fn from_words(words: Vec<String>, max_len: usize) -> StringCodebook {
        let lookup = words.iter().enumerate().map(|(i, v)| (v.clone(), i as u32)).collect();
        StringCodebook { words, max_len, lookup }
    }

    /// Rebuilds the lookup after deserialization.
    pub fn reindex(&mut self) {
        *self = StringCodebook::from_words(core::mem::take(&mut self.words), self.max_len);
    }

    fn word_id(&mut self, w: &str) -> u32 {
        let next = self.words.len() as u32;
        let id = *self.lookup.entry(w.to_string()).or_insert(next);
        if id == next {
            self.words.push(w.to_string());
        }
        id
    }

    fn intern(&mut self, value: &str) -> (PropertyCode, bool) {
        let mut toks = tokenize(value);
        if toks.is_empty() {
            toks.push(EMPTY_WORD.to_string());
        }
        let cut = toks.len() > self.max_len;
        toks.truncate(self.max_len);
        let code = toks.iter().map(|t| self.word_id(t)).collect();
        (PropertyCode { scheme: Scheme::String, code }, cut)
    }

    pub fn encode(&self, value: &str) -> Result<PropertyCode, QuantizeError> {
        let mut toks = tokenize(value);
        if toks.is_empty() {
            toks.push(EMPTY_WORD.to_string());
        }
        toks.truncate(self.max_len);
        let code = toks
            .iter()
            .map(|t| self.lookup.get(t.as_str()).copied().ok_or_else(|| QuantizeError::UnknownValue(t.clone())))
            .collect::<Result<_, _>>()?;
        Ok(PropertyCode { scheme: Scheme::String, code })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal, rng_from_seed};

    fn random_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rng_from_seed(seed);
        (0..n).map(|_| (0..dim).map(|_| normal(&mut rng)).collect()).collect()
    }

    #[test]
    fn exact_cover_has_zero_error() {
        let pts = random_vectors(6, 4, 1);
        let book = train_pq(&pts, 2, 6, 3).unwrap();
        assert_eq!(book.error(&pts).unwrap(), 0.0);
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = random_vectors(10, 4, 2);
        let book = train_pq(&pts, 2, 1, 3).unwrap();
        for s in 0..2 {
            for c in 0..2 {
                let mean: f64 = pts.iter().map(|v| v[s * 2 + c]).sum::<f64>() / 10.0;
                assert!((book.centroids[s].get(0, c) - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn too_few_distinct_names_subspace() {
        let mut pts = random_vectors(3, 4, 2);
        pts.push(pts[0].clone());
        let err = train_pq(&pts, 2, 4, 0).unwrap_err();
        assert_eq!(err, QuantizeError::TooFewDistinct { what: "subspace", index: 0, distinct: 3, k: 4 });
        assert!(matches!(train_pq(&pts, 3, 2, 0), Err(QuantizeError::Indivisible { .. })));
    }

    #[test]
    fn ties_pick_lowest_index() {
        let book = PqCodebook {
            dim: 1,
            m: 1,
            k: 6,
            seed: 0,
            centroids: vec![Mat::from_vec(6, 1, vec![9.0, 9.0, 1.0, 9.0, 9.0, 1.0])],
        };
        assert_eq!(book.encode(&[1.0]).unwrap().code, vec![2]);
        assert!(matches!(book.reconstruct(&[6]), Err(QuantizeError::SymbolOutOfRange { symbol: 6, .. })));
    }

    #[test]
    fn rq_degenerate_cases() {
        let pts = random_vectors(20, 4, 5);
        let one = train_rq(&pts, 1, 3, 9).unwrap();
        let mut rng = rng_for(9, "rq/0");
        assert_eq!(one.levels[0], kmeans(&stack(&pts, 0, 4), 3, &mut rng).unwrap());

        let two = train_rq(&pts, 2, 1, 9).unwrap();
        let r = two.reconstruct(&[0, 0]).unwrap();
        let mean: Vec<f64> = (0..4).map(|c| pts.iter().map(|v| v[c]).sum::<f64>() / 20.0).collect();
        for (a, b) in r.iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn atomic_and_string_codes() {
        let (book, codes) = build_atomic(&["x", "y", "x"]);
        let flat: Vec<u32> = codes.iter().map(|c| c.code[0]).collect();
        assert_eq!(flat, vec![0, 1, 0]);
        assert_eq!(book.encode("y").unwrap().code, vec![1]);

        let long: Vec<String> = (0..17).map(|i| alloc::format!("w{i}")).collect();
        let s = build_string(&["good morning".to_string(), long.join(" ")], MAX_STEPS);
        assert_eq!(s.codes[0].code.len(), 2);
        assert_eq!(s.codes[1].code.len(), 15);
        assert_eq!(s.truncated, 1);
        assert_eq!(s.book.encode("Good Morning").unwrap(), s.codes[0]);
    }
}
