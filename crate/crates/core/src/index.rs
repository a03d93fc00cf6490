//! Per-property identifiers, the shared token vocabulary, prefix trees and
//! posting lists.
//!
//! Token layout of a [`Vocabulary`]:
//!
//! ```text
//! 0              unknown
//! 1..=T          text tokens
//! group_base     8 user-group tokens
//! prefix_base    5 property prefix tokens (o, c, e, v, m)
//! eos            end-of-code token; first token of the output space
//! eos+1 ..       code tokens
//! ```
//!
//! The decoder predicts over the *output space*: `0` is end-of-code and
//! `1 + c` is code token `c`. Prefix trees are keyed by output-space ids.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, UserGroup};
use crate::embed::Embedder;
use crate::math::fnv1a64;
use crate::quantize::{
    build_atomic, build_string, min_distinct_subvectors, train_pq, train_rq_capped, AtomicCodebook, PqCodebook,
    PropertyCode, QuantizeError, RqCodebook, Scheme, StringCodebook, MAX_STEPS,
};
use crate::text::tokenize;
use crate::{Property, PROPERTIES};

/// Output-space id of the end-of-code token.
pub const EOS: u32 = 0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IndexError {
    #[error("no codebook for property {0}")]
    MissingCodebook(Property),
    #[error("property {property}: {source}")]
    Quantize { property: Property, source: QuantizeError },
    #[error("property {property}: code of length {len} exceeds {max} decoding steps")]
    TooLong { property: Property, len: usize, max: usize },
    #[error("codebook for {property} uses scheme {found}, expected {expected}")]
    SchemeMismatch { property: Property, expected: Scheme, found: Scheme },
    #[error("corpus has {corpus} stickers but identifiers cover {codes}")]
    Size { corpus: usize, codes: usize },
}

/// How identifiers are built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub scheme: Scheme,
    /// Subspaces for pq, levels for rq; ignored otherwise.
    pub m: usize,
    /// Clusters per subspace or level.
    pub k: usize,
    pub seed: u64,
    pub max_steps: usize,
    /// Lower `k` to the number of distinct vectors instead of failing.
    pub cap_k: bool,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        SchemeConfig { scheme: Scheme::Pq, m: 8, k: 256, seed: 0, max_steps: MAX_STEPS, cap_k: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "lowercase")]
pub enum PropertyCodebook {
    Pq(PqCodebook),
    Rq(RqCodebook),
    Atomic(AtomicCodebook),
    String(StringCodebook),
}

impl PropertyCodebook {
    pub fn scheme(&self) -> Scheme {
        match self {
            PropertyCodebook::Pq(_) => Scheme::Pq,
            PropertyCodebook::Rq(_) => Scheme::Rq,
            PropertyCodebook::Atomic(_) => Scheme::Atomic,
            PropertyCodebook::String(_) => Scheme::String,
        }
    }

    pub fn encode(&self, text: &str, embedder: &Embedder) -> Result<PropertyCode, QuantizeError> {
        match self {
            PropertyCodebook::Pq(b) => b.encode(&embedder.embed_pooled(text)),
            PropertyCodebook::Rq(b) => b.encode(&embedder.embed_pooled(text)),
            PropertyCodebook::Atomic(b) => b.encode(text),
            PropertyCodebook::String(b) => b.encode(text),
        }
    }

    /// Rebuilds lookups dropped by serialization.
    pub fn reindex(&mut self) {
        match self {
            PropertyCodebook::Atomic(b) => b.reindex(),
            PropertyCodebook::String(b) => b.reindex(),
            PropertyCodebook::Pq(_) | PropertyCodebook::Rq(_) => {}
        }
    }

    /// `(positions, symbols per position)` of the code alphabet.
    fn alphabet(&self) -> (usize, usize) {
        match self {
            PropertyCodebook::Pq(b) => (b.m, b.k),
            PropertyCodebook::Rq(b) => (b.depth(), b.levels.iter().map(|l| l.rows).max().unwrap_or(0)),
            PropertyCodebook::Atomic(b) => (1, b.len()),
            PropertyCodebook::String(b) => (1, b.len()),
        }
    }
}

/// Trains one codebook per property on that property's values across the corpus.
pub fn train_codebooks(
    corpus: &Corpus,
    embedder: &Embedder,
    cfg: &SchemeConfig,
) -> Result<BTreeMap<Property, PropertyCodebook>, IndexError> {
    let mut out = BTreeMap::new();
    if cfg.scheme == Scheme::String {
        // One word list shared by all properties.
        let all: Vec<&str> =
            PROPERTIES.iter().flat_map(|p| corpus.stickers().iter().map(move |s| s.property(*p))).collect();
        let book = build_string(&all, cfg.max_steps).book;
        for p in PROPERTIES {
            out.insert(p, PropertyCodebook::String(book.clone()));
        }
        return Ok(out);
    }
    for p in PROPERTIES {
        let values: Vec<&str> = corpus.stickers().iter().map(|s| s.property(p)).collect();
        let wrap = |source| IndexError::Quantize { property: p, source };
        let seed = crate::rng::derive_seed(cfg.seed, p.name());
        let book = match cfg.scheme {
            Scheme::Atomic => PropertyCodebook::Atomic(build_atomic(&values).0),
            Scheme::Pq => {
                let vectors: Vec<Vec<f64>> = values.iter().map(|v| embedder.embed_pooled(v)).collect();
                let mut k = cfg.k;
                if cfg.cap_k {
                    k = k.min(min_distinct_subvectors(&vectors, cfg.m).map_err(wrap)?);
                }
                PropertyCodebook::Pq(train_pq(&vectors, cfg.m, k, seed).map_err(wrap)?)
            }
            Scheme::Rq => {
                let vectors: Vec<Vec<f64>> = values.iter().map(|v| embedder.embed_pooled(v)).collect();
                let book = if cfg.cap_k {
                    train_rq_capped(&vectors, cfg.m, cfg.k, seed)
                } else {
                    crate::quantize::train_rq(&vectors, cfg.m, cfg.k, seed)
                };
                PropertyCodebook::Rq(book.map_err(wrap)?)
            }
            Scheme::String => unreachable!(),
        };
        out.insert(p, book);
    }
    Ok(out)
}

/// Five codes per sticker, in corpus order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Identifiers {
    pub scheme: Scheme,
    pub codebooks: Vec<PropertyCodebook>,
    pub codes: Vec<[PropertyCode; 5]>,
}

impl Identifiers {
    pub fn code(&self, sticker: usize, p: Property) -> &PropertyCode {
        &self.codes[sticker][p.index()]
    }

    pub fn assignments(&self) -> usize {
        self.codes.len() * 5
    }
}

/// Encodes every sticker's five property values with the given codebooks.
pub fn build_identifiers(
    corpus: &Corpus,
    embedder: &Embedder,
    codebooks: &BTreeMap<Property, PropertyCodebook>,
) -> Result<Identifiers, IndexError> {
    let books: Vec<PropertyCodebook> = PROPERTIES
        .iter()
        .map(|p| codebooks.get(p).cloned().ok_or(IndexError::MissingCodebook(*p)))
        .collect::<Result<_, _>>()?;
    let scheme = books[0].scheme();
    for (p, b) in PROPERTIES.iter().zip(&books) {
        if b.scheme() != scheme {
            return Err(IndexError::SchemeMismatch { property: *p, expected: scheme, found: b.scheme() });
        }
    }
    let mut codes = Vec::with_capacity(corpus.len());
    for s in corpus.stickers() {
        let mut row: Vec<PropertyCode> = Vec::with_capacity(5);
        for (p, b) in PROPERTIES.iter().zip(&books) {
            row.push(b.encode(s.property(*p), embedder).map_err(|source| IndexError::Quantize { property: *p, source })?);
        }
        codes.push(row.try_into().unwrap());
    }
    Ok(Identifiers { scheme, codebooks: books, codes })
}

/// Token ids shared by the encoder and decoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub text: Vec<String>,
    pub scheme: Scheme,
    /// Code positions with distinct token families (1 for atomic/string).
    pub positions: usize,
    /// Symbols per position.
    pub symbols: usize,
    #[serde(skip)]
    lookup: BTreeMap<String, u32>,
}

impl Vocabulary {
    /// Text tokens come from `texts`, sorted; the code alphabet from `ids`.
    pub fn new<'a>(texts: impl IntoIterator<Item = &'a str>, ids: &Identifiers) -> Vocabulary {
        let mut set = BTreeSet::new();
        for t in texts {
            set.extend(tokenize(t));
        }
        let (mut positions, mut symbols) = (1, 0);
        for b in &ids.codebooks {
            let (p, s) = b.alphabet();
            positions = positions.max(p);
            symbols = symbols.max(s);
        }
        if !ids.scheme.position_qualified() {
            positions = 1;
        }
        Vocabulary::from_parts(set.into_iter().collect(), ids.scheme, positions, symbols)
    }

    pub fn from_parts(text: Vec<String>, scheme: Scheme, positions: usize, symbols: usize) -> Vocabulary {
        let lookup = text.iter().enumerate().map(|(i, t)| (t.clone(), i as u32 + 1)).collect();
        Vocabulary { text, scheme, positions, symbols, lookup }
    }

    /// Rebuilds the lookup after deserialization.
    pub fn reindex(&mut self) {
        self.lookup = self.text.iter().enumerate().map(|(i, t)| (t.clone(), i as u32 + 1)).collect();
    }

    pub fn group_base(&self) -> u32 {
        self.text.len() as u32 + 1
    }

    pub fn group_token(&self, g: UserGroup) -> u32 {
        self.group_base() + g.index() as u32
    }

    pub fn prefix_token(&self, p: Property) -> u32 {
        self.group_base() + UserGroup::COUNT as u32 + p.index() as u32
    }

    /// Global id of output-space index 0.
    pub fn output_base(&self) -> u32 {
        self.group_base() + UserGroup::COUNT as u32 + 5
    }

    pub fn output_size(&self) -> usize {
        1 + self.positions * self.symbols
    }

    pub fn len(&self) -> usize {
        self.output_base() as usize + self.output_size()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Text tokens of `text`, unknown words mapped to 0.
    pub fn encode_text(&self, text: &str) -> Vec<u32> {
        tokenize(text).iter().map(|t| self.lookup.get(t.as_str()).copied().unwrap_or(0)).collect()
    }

    /// Output-space ids of a code (no end token).
    pub fn code_outputs(&self, code: &PropertyCode) -> Vec<u32> {
        code.code
            .iter()
            .enumerate()
            .map(|(j, &c)| {
                let pos = if self.scheme.position_qualified() { j } else { 0 };
                1 + (pos * self.symbols) as u32 + c
            })
            .collect()
    }

    /// Decoder targets for a code: its outputs, plus the end token for
    /// variable-length schemes.
    pub fn code_targets(&self, code: &PropertyCode) -> Vec<u32> {
        let mut t = self.code_outputs(code);
        if !self.scheme.fixed_length() {
            t.push(EOS);
        }
        t
    }

    pub fn output_to_global(&self, o: u32) -> u32 {
        self.output_base() + o
    }

    /// Stable content hash, stored in checkpoints.
    pub fn hash(&self) -> u64 {
        let mut bytes = Vec::new();
        for t in &self.text {
            bytes.extend_from_slice(t.as_bytes());
            bytes.push(0);
        }
        bytes.extend_from_slice(self.scheme.name().as_bytes());
        bytes.extend_from_slice(&(self.positions as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.symbols as u64).to_le_bytes());
        fnv1a64(&bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrieNode {
    /// `(output id, child node)`, sorted by id.
    pub children: Vec<(u32, u32)>,
    /// Index of the code ending here.
    pub terminal: Option<u32>,
}

/// Prefix tree over output-space ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefixTree {
    pub nodes: Vec<TrieNode>,
    /// Complete paths, indexed by `terminal`.
    pub codes: Vec<Vec<u32>>,
}

impl PrefixTree {
    /// Builds a tree from distinct sequences; duplicates are merged.
    pub fn from_sequences<'a>(seqs: impl IntoIterator<Item = &'a [u32]>) -> PrefixTree {
        let mut sorted: Vec<&[u32]> = seqs.into_iter().collect();
        sorted.sort();
        sorted.dedup();
        let mut tree = PrefixTree { nodes: vec![TrieNode { children: Vec::new(), terminal: None }], codes: Vec::new() };
        for s in sorted {
            let mut node = 0usize;
            for &tok in s {
                node = match tree.nodes[node].children.binary_search_by_key(&tok, |c| c.0) {
                    Ok(i) => tree.nodes[node].children[i].1 as usize,
                    Err(i) => {
                        let id = tree.nodes.len() as u32;
                        tree.nodes.push(TrieNode { children: Vec::new(), terminal: None });
                        tree.nodes[node].children.insert(i, (tok, id));
                        id as usize
                    }
                };
            }
            tree.nodes[node].terminal = Some(tree.codes.len() as u32);
            tree.codes.push(s.to_vec());
        }
        tree
    }

    pub fn root(&self) -> &TrieNode {
        &self.nodes[0]
    }

    pub fn child(&self, node: u32, tok: u32) -> Option<u32> {
        let n = &self.nodes[node as usize];
        n.children.binary_search_by_key(&tok, |c| c.0).ok().map(|i| n.children[i].1)
    }

    /// Node reached by `path`, if any.
    pub fn walk(&self, path: &[u32]) -> Option<u32> {
        path.iter().try_fold(0u32, |n, &t| self.child(n, t))
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.children.is_empty()).count()
    }

    pub fn max_depth(&self) -> usize {
        self.codes.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Every node lies on a path to some terminal.
    pub fn is_prefix_closed(&self) -> bool {
        self.nodes.iter().all(|n| n.terminal.is_some() || !n.children.is_empty())
    }

    /// All complete paths reachable by walking the tree, in lexicographic order.
    pub fn enumerate(&self) -> Vec<Vec<u32>> {
        let mut out = Vec::new();
        let mut stack = vec![(0u32, Vec::new())];
        while let Some((node, path)) = stack.pop() {
            let n = &self.nodes[node as usize];
            if n.terminal.is_some() {
                out.push(path.clone());
            }
            for &(tok, child) in n.children.iter().rev() {
                let mut p = path.clone();
                p.push(tok);
                stack.push((child, p));
            }
        }
        out
    }
}

/// Tree plus postings for one property.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyIndex {
    pub property: Property,
    pub tree: PrefixTree,
    /// Sticker positions per tree code, ascending.
    pub postings: Vec<Vec<u32>>,
}

impl PropertyIndex {
    /// Stickers whose code has output ids `path`; empty for unknown codes.
    pub fn lookup(&self, path: &[u32]) -> &[u32] {
        match self.tree.walk(path).and_then(|n| self.tree.nodes[n as usize].terminal) {
            Some(t) => &self.postings[t as usize],
            None => &[],
        }
    }
}

/// Everything retrieval needs besides the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Index {
    pub vocab: Vocabulary,
    pub identifiers: Identifiers,
    pub properties: Vec<PropertyIndex>,
    pub sticker_ids: Vec<String>,
    pub max_steps: usize,
}

impl Index {
    /// Builds vocabulary, trees and postings. `extra_texts` (queries) extend
    /// the text vocabulary beyond the corpus.
    pub fn build<'a>(
        corpus: &'a Corpus,
        identifiers: Identifiers,
        extra_texts: impl IntoIterator<Item = &'a str>,
        max_steps: usize,
    ) -> Result<Index, IndexError> {
        if identifiers.codes.len() != corpus.len() {
            return Err(IndexError::Size { corpus: corpus.len(), codes: identifiers.codes.len() });
        }
        let texts = corpus.stickers().iter().flat_map(|s| PROPERTIES.map(|p| s.property(p))).chain(extra_texts);
        let vocab = Vocabulary::new(texts, &identifiers);
        let mut properties = Vec::with_capacity(5);
        for p in PROPERTIES {
            let seqs: Vec<Vec<u32>> =
                identifiers.codes.iter().map(|c| vocab.code_outputs(&c[p.index()])).collect();
            if let Some(s) = seqs.iter().find(|s| s.len() > max_steps) {
                return Err(IndexError::TooLong { property: p, len: s.len(), max: max_steps });
            }
            let tree = PrefixTree::from_sequences(seqs.iter().map(Vec::as_slice));
            let mut postings = vec![Vec::new(); tree.codes.len()];
            for (i, s) in seqs.iter().enumerate() {
                let node = tree.walk(s).expect("inserted path");
                let t = tree.nodes[node as usize].terminal.expect("terminal");
                postings[t as usize].push(i as u32);
            }
            properties.push(PropertyIndex { property: p, tree, postings });
        }
        let sticker_ids = corpus.stickers().iter().map(|s| s.sticker_id.clone()).collect();
        Ok(Index { vocab, identifiers, properties, sticker_ids, max_steps })
    }

    /// Rebuilds lookups dropped by serialization.
    pub fn reindex(&mut self) {
        self.vocab.reindex();
        self.identifiers.codebooks.iter_mut().for_each(PropertyCodebook::reindex);
    }

    pub fn property(&self, p: Property) -> &PropertyIndex {
        &self.properties[p.index()]
    }

    /// Sticker ids sharing `code` for property `p`.
    pub fn lookup_stickers(&self, p: Property, code: &PropertyCode) -> BTreeSet<String> {
        let path = self.vocab.code_outputs(code);
        self.property(p).lookup(&path).iter().map(|&i| self.sticker_ids[i as usize].clone()).collect()
    }

    pub fn describe(&self) -> String {
        let leaves: Vec<String> =
            self.properties.iter().map(|pi| format!("{}={}", pi.property.symbol(), pi.tree.codes.len())).collect();
        format!(
            "scheme {} | stickers {} | vocab {} (text {}, outputs {}) | distinct codes {}",
            self.identifiers.scheme,
            self.sticker_ids.len(),
            self.vocab.len(),
            self.vocab.text.len(),
            self.vocab.output_size(),
            leaves.join(" ")
        )
    }
}
