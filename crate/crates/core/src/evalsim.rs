//! Offline ranking metrics and the simulated interleaving test.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{QueryJudgments, UserGroup};
use crate::math;
use crate::rng::{rng_for, ChaCha8Rng};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("relevant set is empty")]
    EmptyRelevant,
    #[error("cutoff k must be at least 1")]
    ZeroK,
    #[error("no queries to evaluate")]
    NoQueries,
    #[error("every query lacks clicks for one of the systems; average click position is undefined")]
    NoAcpQueries,
}

/// Reciprocal rank of the first relevant item within the top `k`.
pub fn mrr_at_k(ranked: &[String], relevant: &BTreeSet<String>, k: usize) -> Result<f64, EvalError> {
    check(relevant, k)?;
    Ok(ranked.iter().take(k).position(|s| relevant.contains(s)).map_or(0.0, |i| 1.0 / (i + 1) as f64))
}

/// Share of the relevant set found within the top `k`.
pub fn recall_at_k(ranked: &[String], relevant: &BTreeSet<String>, k: usize) -> Result<f64, EvalError> {
    check(relevant, k)?;
    let hits = ranked.iter().take(k).collect::<BTreeSet<_>>().into_iter().filter(|s| relevant.contains(*s)).count();
    Ok(hits as f64 / relevant.len() as f64)
}

fn check(relevant: &BTreeSet<String>, k: usize) -> Result<(), EvalError> {
    if relevant.is_empty() {
        return Err(EvalError::EmptyRelevant);
    }
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    Ok(())
}

/// Cutoffs reported by default.
pub const CUTOFFS: [usize; 4] = [1, 5, 10, 20];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub ks: Vec<usize>,
    pub mrr: Vec<f64>,
    pub recall: Vec<f64>,
    pub queries: usize,
}

impl MetricTable {
    /// `(name, value)` pairs: MRR at every cutoff, then Recall.
    pub fn columns(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = self.ks.iter().zip(&self.mrr).map(|(k, v)| (format!("MRR@{k}"), *v)).collect();
        out.extend(self.ks.iter().zip(&self.recall).map(|(k, v)| (format!("Recall@{k}"), *v)));
        out
    }

    pub fn mrr_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|x| *x == k).map(|i| self.mrr[i])
    }
}

/// Averages MRR and Recall over all `(group, query)` pairs.
pub fn run_offline_eval(
    ranker: &mut dyn FnMut(&QueryJudgments) -> Vec<String>,
    judgments: &[QueryJudgments],
    ks: &[usize],
) -> Result<MetricTable, EvalError> {
    if judgments.is_empty() {
        return Err(EvalError::NoQueries);
    }
    let mut mrr = alloc::vec![0.0; ks.len()];
    let mut recall = alloc::vec![0.0; ks.len()];
    for j in judgments {
        let ranked = ranker(j);
        for (i, &k) in ks.iter().enumerate() {
            mrr[i] += mrr_at_k(&ranked, &j.relevant_ids, k)?;
            recall[i] += recall_at_k(&ranked, &j.relevant_ids, k)?;
        }
    }
    let n = judgments.len() as f64;
    mrr.iter_mut().for_each(|x| *x /= n);
    recall.iter_mut().for_each(|x| *x /= n);
    Ok(MetricTable { ks: ks.to_vec(), mrr, recall, queries: judgments.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Owner {
    P,
    B,
}

impl Owner {
    fn other(self) -> Owner {
        match self {
            Owner::P => Owner::B,
            Owner::B => Owner::P,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub sticker_id: String,
    pub owner: Owner,
}

/// Balanced interleaving with the first drafter given. Each turn the active
/// drafter appends its next sticker not yet in the list; an exhausted
/// drafter passes.
pub fn interleave_with(list_p: &[String], list_b: &[String], first: Owner) -> Vec<Slot> {
    let mut out: Vec<Slot> = Vec::with_capacity(list_p.len() + list_b.len());
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    let (mut ip, mut ib) = (0, 0);
    let mut turn = first;
    loop {
        let (list, cursor) = match turn {
            Owner::P => (list_p, &mut ip),
            Owner::B => (list_b, &mut ib),
        };
        while *cursor < list.len() && seen.contains(list[*cursor].as_str()) {
            *cursor += 1;
        }
        if *cursor < list.len() {
            seen.insert(&list[*cursor]);
            out.push(Slot { sticker_id: list[*cursor].clone(), owner: turn });
            *cursor += 1;
        }
        let done = |l: &[String], c: usize| l[c.min(l.len())..].iter().all(|s| seen.contains(s.as_str()));
        if done(list_p, ip) && done(list_b, ib) {
            return out;
        }
        turn = turn.other();
    }
}

/// Balanced interleaving; a fair coin from `rng` picks the first drafter.
pub fn balanced_interleave(list_p: &[String], list_b: &[String], rng: &mut ChaCha8Rng) -> (Vec<Slot>, Owner) {
    let first = if rng.gen_bool(0.5) { Owner::P } else { Owner::B };
    (interleave_with(list_p, list_b, first), first)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClickModelConfig {
    /// Examination at 1-based position `pos` is `min(1, 1 / log2(pos + offset))`.
    pub offset: f64,
    /// Click probability of an examined relevant item.
    pub relevant_click: f64,
    /// Click probability of an examined non-relevant item.
    pub irrelevant_click: f64,
    pub seed: u64,
}

impl Default for ClickModelConfig {
    fn default() -> Self {
        ClickModelConfig { offset: 0.0, relevant_click: 1.0, irrelevant_click: 0.0, seed: 7 }
    }
}

impl ClickModelConfig {
    pub fn examination(&self, pos: usize) -> f64 {
        let base = pos as f64 + self.offset;
        if base <= 2.0 {
            return 1.0;
        }
        (1.0 / math::log2(base)).clamp(0.0, 1.0)
    }
}

/// Examination-then-relevance clicks; returns 1-based clicked positions.
pub fn simulate_clicks(
    slots: &[Slot],
    relevant: &BTreeSet<String>,
    cfg: &ClickModelConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let mut clicks = Vec::new();
    for (i, s) in slots.iter().enumerate() {
        let pos = i + 1;
        let examined = rng.gen::<f64>() < cfg.examination(pos);
        let p = if relevant.contains(&s.sticker_id) { cfg.relevant_click } else { cfg.irrelevant_click };
        let clicked = rng.gen::<f64>() < p;
        if examined && clicked {
            clicks.push(pos);
        }
    }
    clicks
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Good,
    Same,
    Bad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub query: String,
    pub group: UserGroup,
    pub slots: Vec<Slot>,
    pub clicks: Vec<usize>,
    pub utility_p: usize,
    pub utility_b: usize,
}

impl SessionRecord {
    fn owned(&self, o: Owner) -> (usize, Vec<usize>) {
        let exposed = self.slots.iter().filter(|s| s.owner == o).count();
        let clicks = self.clicks.iter().copied().filter(|&pos| self.slots[pos - 1].owner == o).collect();
        (exposed, clicks)
    }

    pub fn ctr(&self, o: Owner) -> f64 {
        let (exposed, clicks) = self.owned(o);
        if exposed == 0 {
            0.0
        } else {
            clicks.len() as f64 / exposed as f64
        }
    }

    /// Mean clicked position of `o`, `None` without clicks.
    pub fn acp(&self, o: Owner) -> Option<f64> {
        let (_, clicks) = self.owned(o);
        (!clicks.is_empty()).then(|| clicks.iter().sum::<usize>() as f64 / clicks.len() as f64)
    }

    pub fn verdict(&self) -> Verdict {
        match self.utility_p.cmp(&self.utility_b) {
            core::cmp::Ordering::Greater => Verdict::Good,
            core::cmp::Ordering::Equal => Verdict::Same,
            core::cmp::Ordering::Less => Verdict::Bad,
        }
    }
}

pub fn delta_ctr(sessions: &[SessionRecord]) -> Result<f64, EvalError> {
    if sessions.is_empty() {
        return Err(EvalError::NoQueries);
    }
    Ok(sessions.iter().map(|s| s.ctr(Owner::P) - s.ctr(Owner::B)).sum::<f64>() / sessions.len() as f64)
}

/// Per-query ACP differences, skipping queries where either side has no clicks.
pub fn acp_differences(sessions: &[SessionRecord]) -> Vec<f64> {
    sessions.iter().filter_map(|s| Some(s.acp(Owner::P)? - s.acp(Owner::B)?)).collect()
}

pub fn delta_acp(sessions: &[SessionRecord]) -> Result<f64, EvalError> {
    if sessions.is_empty() {
        return Err(EvalError::NoQueries);
    }
    let d = acp_differences(sessions);
    if d.is_empty() {
        return Err(EvalError::NoAcpQueries);
    }
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

pub fn delta_gsb(verdicts: &[Verdict]) -> Result<f64, EvalError> {
    if verdicts.is_empty() {
        return Err(EvalError::NoQueries);
    }
    let good = verdicts.iter().filter(|v| **v == Verdict::Good).count() as f64;
    let bad = verdicts.iter().filter(|v| **v == Verdict::Bad).count() as f64;
    Ok((good - bad) / verdicts.len() as f64)
}

/// Utility of a top-10 list: number of relevant items in it.
pub fn utility(list: &[String], relevant: &BTreeSet<String>) -> usize {
    list.iter().take(10).filter(|s| relevant.contains(*s)).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub seed: u64,
    pub sessions: usize,
    pub acp_queries: usize,
    pub ctr: Estimate,
    /// `None` when no query had clicks on both sides.
    pub acp: Option<Estimate>,
    pub gsb: Estimate,
    pub good: usize,
    pub same: usize,
    pub bad: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnlineConfig {
    pub sessions: usize,
    pub list_len: usize,
    pub bootstrap: usize,
    pub clicks: ClickModelConfig,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        OnlineConfig { sessions: 1000, list_len: 10, bootstrap: 500, clicks: ClickModelConfig::default() }
    }
}

/// Percentile bootstrap of the mean of `xs` (2.5% and 97.5%).
pub fn bootstrap_mean(xs: &[f64], rounds: usize, rng: &mut ChaCha8Rng) -> Estimate {
    let n = xs.len();
    let value = xs.iter().sum::<f64>() / n.max(1) as f64;
    if n == 0 || rounds == 0 {
        return Estimate { value, low: value, high: value };
    }
    let mut means: Vec<f64> = (0..rounds)
        .map(|_| (0..n).map(|_| xs[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let at = |q: f64| means[((q * (rounds - 1) as f64) as usize).min(rounds - 1)];
    Estimate { value, low: at(0.025), high: at(0.975) }
}

/// Simulates `cfg.sessions` interleaved sessions cycling through `queries`.
/// Each session has its own derived seed.
pub fn simulate_sessions(
    ranker_p: &mut dyn FnMut(&QueryJudgments) -> Vec<String>,
    ranker_b: &mut dyn FnMut(&QueryJudgments) -> Vec<String>,
    queries: &[QueryJudgments],
    cfg: &OnlineConfig,
) -> Result<Vec<SessionRecord>, EvalError> {
    if queries.is_empty() {
        return Err(EvalError::NoQueries);
    }
    let lists: Vec<(Vec<String>, Vec<String>)> = queries
        .iter()
        .map(|q| {
            let mut p = ranker_p(q);
            let mut b = ranker_b(q);
            p.truncate(cfg.list_len);
            b.truncate(cfg.list_len);
            (p, b)
        })
        .collect();
    let mut out = Vec::with_capacity(cfg.sessions);
    for i in 0..cfg.sessions {
        let qi = i % queries.len();
        let q = &queries[qi];
        let (p, b) = &lists[qi];
        let mut rng = rng_for(cfg.clicks.seed, &format!("session/{i}"));
        let (slots, _) = balanced_interleave(p, b, &mut rng);
        let clicks = simulate_clicks(&slots, &q.relevant_ids, &cfg.clicks, &mut rng);
        out.push(SessionRecord {
            query: q.query.clone(),
            group: q.group,
            slots,
            clicks,
            utility_p: utility(p, &q.relevant_ids),
            utility_b: utility(b, &q.relevant_ids),
        });
    }
    Ok(out)
}

/// The three deltas with bootstrap intervals.
pub fn run_online_sim(
    ranker_p: &mut dyn FnMut(&QueryJudgments) -> Vec<String>,
    ranker_b: &mut dyn FnMut(&QueryJudgments) -> Vec<String>,
    queries: &[QueryJudgments],
    cfg: &OnlineConfig,
) -> Result<DeltaReport, EvalError> {
    let sessions = simulate_sessions(ranker_p, ranker_b, queries, cfg)?;
    report(&sessions, cfg)
}

pub fn report(sessions: &[SessionRecord], cfg: &OnlineConfig) -> Result<DeltaReport, EvalError> {
    if sessions.is_empty() {
        return Err(EvalError::NoQueries);
    }
    let mut rng = rng_for(cfg.clicks.seed, "bootstrap");
    let ctr: Vec<f64> = sessions.iter().map(|s| s.ctr(Owner::P) - s.ctr(Owner::B)).collect();
    let acp = acp_differences(sessions);
    let verdicts: Vec<Verdict> = sessions.iter().map(SessionRecord::verdict).collect();
    let gsb: Vec<f64> = verdicts
        .iter()
        .map(|v| match v {
            Verdict::Good => 1.0,
            Verdict::Same => 0.0,
            Verdict::Bad => -1.0,
        })
        .collect();
    let count = |x: Verdict| verdicts.iter().filter(|v| **v == x).count();
    Ok(DeltaReport {
        seed: cfg.clicks.seed,
        sessions: sessions.len(),
        acp_queries: acp.len(),
        ctr: bootstrap_mean(&ctr, cfg.bootstrap, &mut rng),
        acp: (!acp.is_empty()).then(|| bootstrap_mean(&acp, cfg.bootstrap, &mut rng)),
        gsb: bootstrap_mean(&gsb, cfg.bootstrap, &mut rng),
        good: count(Verdict::Good),
        same: count(Verdict::Same),
        bad: count(Verdict::Bad),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn ids(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn set(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn offline_metrics() {
        let ranked = ids(&["a", "b", "c", "d"]);
        assert_eq!(mrr_at_k(&ranked, &set(&["c"]), 10).unwrap(), 1.0 / 3.0);
        assert_eq!(mrr_at_k(&ranked, &set(&["z"]), 10).unwrap(), 0.0);
        assert_eq!(recall_at_k(&ranked, &set(&["z"]), 10).unwrap(), 0.0);
        assert_eq!(recall_at_k(&ranked, &set(&["a", "d", "x", "y", "z"]), 10).unwrap(), 0.4);
        assert_eq!(mrr_at_k(&ranked, &BTreeSet::new(), 10), Err(EvalError::EmptyRelevant));
    }

    #[test]
    fn interleaving_traces() {
        let got = interleave_with(&ids(&["a1", "a2"]), &ids(&["b1", "b2"]), Owner::P);
        let trace: Vec<(&str, Owner)> = got.iter().map(|s| (s.sticker_id.as_str(), s.owner)).collect();
        assert_eq!(trace, vec![("a1", Owner::P), ("b1", Owner::B), ("a2", Owner::P), ("b2", Owner::B)]);

        let got = interleave_with(&ids(&["x", "a2"]), &ids(&["x", "b2"]), Owner::P);
        let trace: Vec<(&str, Owner)> = got.iter().map(|s| (s.sticker_id.as_str(), s.owner)).collect();
        assert_eq!(trace, vec![("x", Owner::P), ("b2", Owner::B), ("a2", Owner::P)]);

        let p: Vec<String> = (0..10).map(|i| format!("p{i}")).collect();
        let b: Vec<String> = (0..10).map(|i| format!("b{i}")).collect();
        assert_eq!(interleave_with(&p, &b, Owner::B).len(), 20);
    }

    #[test]
    fn delta_formulas() {
        let s = SessionRecord {
            query: "q".into(),
            group: UserGroup::from_index(0),
            slots: ["P", "B", "P", "B", "P"]
                .iter()
                .enumerate()
                .map(|(i, o)| Slot { sticker_id: format!("s{i}"), owner: if *o == "P" { Owner::P } else { Owner::B } })
                .collect(),
            clicks: vec![1, 3, 4],
            utility_p: 3,
            utility_b: 1,
        };
        assert_eq!(delta_acp(&[s.clone()]).unwrap(), -2.0);
        assert!((delta_ctr(&[s.clone()]).unwrap() - (2.0 / 3.0 - 0.5)).abs() < 1e-12);
        let v = [Verdict::Good, Verdict::Good, Verdict::Good, Verdict::Bad, Verdict::Same];
        assert!((delta_gsb(&v).unwrap() - 0.4).abs() < 1e-12);
        let mut none = s;
        none.clicks.clear();
        assert_eq!(delta_acp(&[none]), Err(EvalError::NoAcpQueries));
    }

    #[test]
    fn click_limits() {
        let slots: Vec<Slot> = (0..6).map(|i| Slot { sticker_id: format!("s{i}"), owner: Owner::P }).collect();
        let mut rng = rng_for(1, "t");
        let cfg = ClickModelConfig::default();
        assert!(simulate_clicks(&slots, &BTreeSet::new(), &cfg, &mut rng).is_empty());
        let all: BTreeSet<String> = slots.iter().map(|s| s.sticker_id.clone()).collect();
        let always = ClickModelConfig { offset: -1e9, ..cfg };
        assert_eq!(simulate_clicks(&slots, &all, &always, &mut rng), vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(cfg.examination(4), 0.5);
    }
}
