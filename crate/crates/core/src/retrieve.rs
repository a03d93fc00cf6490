//! Constrained decoding over prefix trees and intent-ordered funnel retrieval.

use alloc::collections::{BinaryHeap, BTreeMap};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::UserGroup;
use crate::index::{Index, PrefixTree, EOS};
use crate::intent::IntentRanking;
use crate::seqmodel::{EncodedQuery, SeqModel};
use crate::{Property, PROPERTIES};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RetrieveError {
    #[error("beam size must be at least 1")]
    ZeroBeam,
    #[error("prefix tree is empty")]
    EmptyTree,
    #[error("prefix tree has paths of length {depth}, more than {max_steps} decoding steps")]
    TooDeep { depth: usize, max_steps: usize },
    #[error("no intent ranking for query {0:?}")]
    Unresolved(String),
}

/// Next-token log-probabilities over the output space given a decoded prefix.
pub trait StepScorer {
    fn log_probs(&mut self, prefix: &[u32]) -> Vec<f64>;
}

impl<F: FnMut(&[u32]) -> Vec<f64>> StepScorer for F {
    fn log_probs(&mut self, prefix: &[u32]) -> Vec<f64> {
        self(prefix)
    }
}

/// A completed code and its log-probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub tokens: Vec<u32>,
    pub log_prob: f64,
}

struct Entry {
    score: f64,
    tokens: Vec<u32>,
    node: u32,
    complete: bool,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    /// Max-heap order: higher score, then lexicographically smaller tokens,
    /// then complete before partial.
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.tokens.cmp(&self.tokens))
            .then_with(|| self.complete.cmp(&other.complete))
    }
}

fn check_tree(tree: &PrefixTree, beam: usize, max_steps: usize) -> Result<(), RetrieveError> {
    if beam == 0 {
        return Err(RetrieveError::ZeroBeam);
    }
    if tree.codes.is_empty() {
        return Err(RetrieveError::EmptyTree);
    }
    let depth = tree.max_depth();
    if depth > max_steps {
        return Err(RetrieveError::TooDeep { depth, max_steps });
    }
    Ok(())
}

/// Top-`beam` complete codes of `tree` by sequence log-probability, ties in
/// lexicographic token order.
///
/// A leaf completes its path at no extra cost; a terminal node that also has
/// children completes by emitting [`EOS`]. The search is best-first over
/// partial scores, which never increase along a path, so the result equals
/// the first `beam` entries of an exhaustive ranking of every path.
pub fn constrained_beam_search(
    scorer: &mut impl StepScorer,
    tree: &PrefixTree,
    beam: usize,
    max_steps: usize,
) -> Result<Vec<Hypothesis>, RetrieveError> {
    check_tree(tree, beam, max_steps)?;
    let mut heap = BinaryHeap::new();
    heap.push(Entry { score: 0.0, tokens: Vec::new(), node: 0, complete: false });
    let mut out = Vec::with_capacity(beam);
    while let Some(e) = heap.pop() {
        if e.complete {
            out.push(Hypothesis { tokens: e.tokens, log_prob: e.score });
            if out.len() == beam {
                break;
            }
            continue;
        }
        let node = &tree.nodes[e.node as usize];
        if node.children.is_empty() {
            heap.push(Entry { complete: true, ..e });
            continue;
        }
        let lp = scorer.log_probs(&e.tokens);
        if node.terminal.is_some() {
            heap.push(Entry { score: e.score + lp[EOS as usize], tokens: e.tokens.clone(), node: e.node, complete: true });
        }
        for &(tok, child) in &node.children {
            let mut tokens = Vec::with_capacity(e.tokens.len() + 1);
            tokens.extend_from_slice(&e.tokens);
            tokens.push(tok);
            heap.push(Entry { score: e.score + lp[tok as usize], tokens, node: child, complete: false });
        }
    }
    Ok(out)
}

/// Follows the most probable admissible token at each node (ties to the
/// smallest token; ending beats continuing on equal probability).
pub fn greedy_decode(scorer: &mut impl StepScorer, tree: &PrefixTree, max_steps: usize) -> Result<Hypothesis, RetrieveError> {
    check_tree(tree, 1, max_steps)?;
    let mut node = 0u32;
    let mut tokens = Vec::new();
    let mut score = 0.0;
    loop {
        let n = &tree.nodes[node as usize];
        if n.children.is_empty() {
            return Ok(Hypothesis { tokens, log_prob: score });
        }
        let lp = scorer.log_probs(&tokens);
        let mut best: Option<(f64, u32, u32)> = None;
        for &(tok, child) in &n.children {
            if best.map_or(true, |b| lp[tok as usize] > b.0) {
                best = Some((lp[tok as usize], tok, child));
            }
        }
        let (s, tok, child) = best.unwrap();
        if n.terminal.is_some() && lp[EOS as usize] >= s {
            return Ok(Hypothesis { tokens, log_prob: score + lp[EOS as usize] });
        }
        score += s;
        tokens.push(tok);
        node = child;
    }
}

/// Scores decoder steps of one property with a trained model.
pub struct ModelScorer<'a> {
    pub model: &'a SeqModel,
    pub encoded: &'a EncodedQuery,
    pub property: Property,
}

impl StepScorer for ModelScorer<'_> {
    fn log_probs(&mut self, prefix: &[u32]) -> Vec<f64> {
        self.model.next_log_probs(self.encoded, self.property, prefix)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Intent-ordered stages with intersection.
    Funnel,
    /// All properties decoded once, equal weights, union of candidates.
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrieveConfig {
    pub beam: usize,
    pub topk: usize,
    pub max_steps: usize,
    pub mode: Mode,
    /// Number of leading intents used as stages (at most 5).
    pub depth: usize,
}

impl Default for RetrieveConfig {
    fn default() -> Self {
        RetrieveConfig { beam: 10, topk: 20, max_steps: crate::quantize::MAX_STEPS, mode: Mode::Funnel, depth: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub property: Property,
    pub weight: f64,
    pub codes: Vec<Hypothesis>,
    pub candidates: usize,
    pub survivors: usize,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSticker {
    pub sticker_id: String,
    pub position: u32,
    pub score: f64,
    /// Whether this sticker's code was decoded at each stage.
    pub stages: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub items: Vec<RankedSticker>,
    pub stages: Vec<StageReport>,
}

impl RetrievalResult {
    pub fn ids(&self) -> Vec<String> {
        self.items.iter().map(|r| r.sticker_id.clone()).collect()
    }
}

/// Candidate stickers of one stage with their code log-probabilities.
fn expand(index: &Index, p: Property, codes: &[Hypothesis]) -> BTreeMap<u32, f64> {
    let pi = index.property(p);
    let mut out = BTreeMap::new();
    for h in codes {
        for &s in pi.lookup(&h.tokens) {
            out.insert(s, h.log_prob);
        }
    }
    out
}

fn rank(
    index: &Index,
    survivors: impl Iterator<Item = u32>,
    score: &BTreeMap<u32, f64>,
    decoded: &BTreeMap<u32, Vec<bool>>,
    stages: usize,
    topk: usize,
) -> Vec<RankedSticker> {
    let mut items: Vec<RankedSticker> = survivors
        .map(|s| RankedSticker {
            sticker_id: index.sticker_ids[s as usize].clone(),
            position: s,
            score: score.get(&s).copied().unwrap_or(0.0),
            stages: decoded.get(&s).cloned().unwrap_or_else(|| vec![false; stages]),
        })
        .collect();
    items.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.sticker_id.cmp(&b.sticker_id)));
    items.truncate(topk);
    items
}

/// Decodes the properties of `ranking` stage by stage, intersecting the
/// candidate sets, and ranks the survivors by `Σ d_p · log p(code_p)` over
/// the stages where each sticker's code was decoded.
///
/// In [`Mode::Flat`] every property is decoded once with weight 1 and the
/// candidates are united instead.
pub fn funnel_retrieve(
    model: &SeqModel,
    index: &Index,
    group: Option<UserGroup>,
    query: &str,
    ranking: &IntentRanking,
    cfg: &RetrieveConfig,
) -> Result<RetrievalResult, RetrieveError> {
    let tokens = index.vocab.encode_text(query);
    let encoded = model.encode(group, &tokens);
    let n = index.sticker_ids.len() as u32;
    let order: Vec<(Property, f64)> = match cfg.mode {
        Mode::Funnel => ranking.order().iter().take(cfg.depth.clamp(1, 5)).map(|p| (*p, ranking.decay(*p))).collect(),
        Mode::Flat => PROPERTIES.iter().map(|p| (*p, 1.0)).collect(),
    };
    let stages = order.len();
    let mut alive: Vec<u32> = (0..n).collect();
    let mut union: alloc::collections::BTreeSet<u32> = alloc::collections::BTreeSet::new();
    let mut score: BTreeMap<u32, f64> = BTreeMap::new();
    let mut decoded: BTreeMap<u32, Vec<bool>> = BTreeMap::new();
    let mut reports = Vec::with_capacity(stages);
    for (i, &(p, w)) in order.iter().enumerate() {
        let mut scorer = ModelScorer { model, encoded: &encoded, property: p };
        let codes = constrained_beam_search(&mut scorer, &index.property(p).tree, cfg.beam, cfg.max_steps)?;
        let cands = expand(index, p, &codes);
        for (&s, &lp) in &cands {
            *score.entry(s).or_insert(0.0) += w * lp;
            decoded.entry(s).or_insert_with(|| vec![false; stages])[i] = true;
        }
        let mut fallback = false;
        match cfg.mode {
            Mode::Funnel => {
                let next: Vec<u32> = alive.iter().copied().filter(|s| cands.contains_key(s)).collect();
                if next.is_empty() {
                    fallback = true;
                } else {
                    alive = next;
                }
            }
            Mode::Flat => union.extend(cands.keys().copied()),
        }
        reports.push(StageReport {
            property: p,
            weight: w,
            codes,
            candidates: cands.len(),
            survivors: if cfg.mode == Mode::Funnel { alive.len() } else { union.len() },
            fallback,
        });
    }
    let items = match cfg.mode {
        Mode::Funnel => rank(index, alive.into_iter(), &score, &decoded, stages, cfg.topk),
        Mode::Flat => rank(index, union.into_iter(), &score, &decoded, stages, cfg.topk),
    };
    Ok(RetrievalResult { items, stages: reports })
}
