//! User-group embeddings learned from click logs through three auxiliary
//! tasks (click, intent and interest prediction), then frozen.
//!
//! Vectors are rows; a projection is `h · W`. The attention block pools its
//! query side to one vector and attends over a key/value token sequence.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::corpus::{ClickLogRecord, Corpus, UserGroup};
use crate::embed::Embedder;
use crate::intent::IntentTable;
use crate::math;
use crate::optim::{Optimizer, OptimizerConfig};
use crate::rng::{normal, rng_for, ChaCha8Rng};
use crate::tensor::Mat;
use crate::Property;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum UserRepError {
    #[error("user group {0} has no click-log records")]
    NoRecords(UserGroup),
    #[error("attention needs at least one key")]
    EmptyKeys,
    #[error("no gold intent for query {0:?}")]
    MissingIntent(String),
    #[error("click log references unknown sticker {0:?}")]
    UnknownSticker(String),
    #[error("embedding table is frozen")]
    Frozen,
    #[error("embedding dimension {found} does not match model dimension {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
}

/// Which auxiliary tasks contribute to the joint loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSet {
    pub click: bool,
    pub intent: bool,
    pub interest: bool,
}

impl TaskSet {
    pub const ALL: TaskSet = TaskSet { click: true, intent: true, interest: true };
    pub const CLICK: TaskSet = TaskSet { click: true, intent: false, interest: false };
    pub const INTENT: TaskSet = TaskSet { click: false, intent: true, interest: false };
    pub const INTEREST: TaskSet = TaskSet { click: false, intent: false, interest: true };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRepConfig {
    pub dim: usize,
    pub hidden: usize,
    pub lr: f64,
    pub batch: usize,
    pub steps: usize,
    pub seed: u64,
    pub tasks: TaskSet,
}

impl Default for UserRepConfig {
    fn default() -> Self {
        UserRepConfig { dim: 64, hidden: 128, lr: 1e-3, batch: 64, steps: 200, seed: 7, tasks: TaskSet::ALL }
    }
}

/// Eight frozen-after-training group vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserEmbeddingTable {
    pub vectors: Mat,
    pub frozen: bool,
}

impl UserEmbeddingTable {
    pub fn dim(&self) -> usize {
        self.vectors.cols
    }

    pub fn get(&self, g: UserGroup) -> &[f64] {
        self.vectors.row(g.index())
    }

    /// `vectors -= lr * grad`, refused once frozen.
    pub fn apply_gradient(&mut self, grad: &Mat, lr: f64) -> Result<(), UserRepError> {
        if self.frozen {
            return Err(UserRepError::Frozen);
        }
        self.vectors.scaled_add_assign(-lr, grad);
        Ok(())
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn cosine(&self, a: UserGroup, b: UserGroup) -> f64 {
        math::cosine(self.get(a), self.get(b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Head {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Ids {
    groups: ParamId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    click: Head,
    intent: Head,
    ip: Head,
    entity: Head,
}

/// Which interest head to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interest {
    Ip,
    Entity,
}

/// Pre-embedded inputs of one log record.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub group: UserGroup,
    /// Query tokens, one row each.
    pub query: Mat,
    pub meaning: Mat,
    pub ip: Mat,
    pub entity: Mat,
    pub clicked: bool,
    pub gold_intent: Property,
}

impl Example {
    pub fn embed(
        embedder: &Embedder,
        group: UserGroup,
        query: &str,
        meaning: &str,
        ip: &str,
        entity: &str,
        clicked: bool,
        gold_intent: Property,
    ) -> Example {
        let seq = |t: &str| {
            let s = embedder.embed_text(t);
            let dim = embedder.dim();
            Mat::from_vec(s.vectors.len(), dim, s.vectors.concat())
        };
        Example {
            group,
            query: seq(query),
            meaning: seq(meaning),
            ip: seq(ip),
            entity: seq(entity),
            clicked,
            gold_intent,
        }
    }
}

/// Component losses of one example or a batch sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub click: f64,
    pub intent: f64,
    pub interest: f64,
    pub total: f64,
}

impl LossParts {
    fn add(&mut self, o: &LossParts) {
        self.click += o.click;
        self.intent += o.intent;
        self.interest += o.interest;
        self.total += o.total;
    }

    fn scaled(mut self, s: f64) -> LossParts {
        self.click *= s;
        self.intent *= s;
        self.interest *= s;
        self.total *= s;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub loss: LossParts,
}

/// Attention with the query side pooled to one vector, on plain matrices.
/// Returns `(output, weights)`.
pub fn attention(
    query: &[f64],
    keys: &Mat,
    values: &Mat,
    wq: &Mat,
    wk: &Mat,
    wv: &Mat,
) -> Result<(Vec<f64>, Vec<f64>), UserRepError> {
    if keys.rows == 0 || keys.rows != values.rows {
        return Err(UserRepError::EmptyKeys);
    }
    let q = Mat::row_vector(query.to_vec()).matmul(wq);
    let k = keys.matmul(wk);
    let v = values.matmul(wv);
    let scores: Vec<f64> = q.matmul_t(&k).data.iter().map(|s| s / math::sqrt(wq.cols as f64)).collect();
    let w = math::softmax(&scores);
    let out = Mat::row_vector(w.clone()).matmul(&v).data;
    Ok((out, w))
}

/// The representation model: shared attention projections, four heads and
/// the group table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRepModel {
    pub params: ParamStore,
    ids: Ids,
    pub dim: usize,
    pub hidden: usize,
}

fn init(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    Mat::from_vec(rows, cols, (0..rows * cols).map(|_| normal(rng) * scale).collect())
}

impl UserRepModel {
    pub fn new(dim: usize, hidden: usize, seed: u64) -> UserRepModel {
        let mut rng = rng_for(seed, "userrep/init");
        let mut ps = ParamStore::new();
        let s = 1.0 / math::sqrt(dim as f64);
        let groups = ps.add("groups", init(&mut rng, UserGroup::COUNT, dim, s));
        let wq = ps.add("wq", init(&mut rng, dim, dim, s));
        let wk = ps.add("wk", init(&mut rng, dim, dim, s));
        let wv = ps.add("wv", init(&mut rng, dim, dim, s));
        let mut head = |name: &str, input: usize, out: usize| Head {
            w1: ps.add(&format!("{name}.w1"), init(&mut rng, input, hidden, 1.0 / math::sqrt(input as f64))),
            b1: ps.add(&format!("{name}.b1"), Mat::zeros(1, hidden)),
            w2: ps.add(&format!("{name}.w2"), init(&mut rng, hidden, out, 1.0 / math::sqrt(hidden as f64))),
            b2: ps.add(&format!("{name}.b2"), Mat::zeros(1, out)),
        };
        let click = head("click", 2 * dim, 1);
        let intent = head("intent", dim, 5);
        let ip = head("interest_ip", 2 * dim, 1);
        let entity = head("interest_entity", 2 * dim, 1);
        UserRepModel { params: ps, ids: Ids { groups, wq, wk, wv, click, intent, ip, entity }, dim, hidden }
    }

    pub fn table(&self) -> UserEmbeddingTable {
        UserEmbeddingTable { vectors: self.params.get(self.ids.groups).clone(), frozen: false }
    }

    fn attend(&self, t: &mut Tape, query: Var, keys: Var) -> Var {
        let wq = t.param(self.ids.wq);
        let wk = t.param(self.ids.wk);
        let wv = t.param(self.ids.wv);
        let q = t.matmul(query, wq);
        let k = t.matmul(keys, wk);
        let v = t.matmul(keys, wv);
        let s = t.matmul_t(q, k);
        let s = t.scale(s, 1.0 / math::sqrt(self.dim as f64));
        let a = t.softmax_rows(s, false);
        t.matmul(a, v)
    }

    fn head(&self, t: &mut Tape, h: Head, x: Var) -> Var {
        let w1 = t.param(h.w1);
        let b1 = t.param(h.b1);
        let w2 = t.param(h.w2);
        let b2 = t.param(h.b2);
        let z = t.matmul(x, w1);
        let z = t.add_row(z, b1);
        let z = t.relu(z);
        let z = t.matmul(z, w2);
        t.add_row(z, b2)
    }

    fn group_row(&self, t: &mut Tape, g: UserGroup) -> Var {
        let table = t.param(self.ids.groups);
        t.gather(table, &[g.index()])
    }

    /// Logit of the two-tower binary task over `keys` (meaning for click, IP
    /// or entity tokens for interest).
    fn pair_logit(&self, t: &mut Tape, head: Head, ex: &Example, keys: &Mat) -> Var {
        let q = t.constant(ex.query.clone());
        let qbar = t.mean_rows(q);
        let keys = t.constant(keys.clone());
        let hq = self.attend(t, qbar, keys);
        let u = self.group_row(t, ex.group);
        let hu = self.attend(t, u, keys);
        let x = t.concat_cols(hq, hu);
        self.head(t, head, x)
    }

    fn intent_logits(&self, t: &mut Tape, ex: &Example) -> Var {
        let u = self.group_row(t, ex.group);
        let q = t.constant(ex.query.clone());
        let hi = self.attend(t, u, q);
        self.head(t, self.ids.intent, hi)
    }

    fn interest_head(&self, which: Interest) -> Head {
        match which {
            Interest::Ip => self.ids.ip,
            Interest::Entity => self.ids.entity,
        }
    }

    pub fn predict_click(&self, ex: &Example) -> f64 {
        let mut t = Tape::new(&self.params);
        let z = self.pair_logit(&mut t, self.ids.click, ex, &ex.meaning);
        math::sigmoid(t.scalar(z))
    }

    pub fn predict_intent(&self, ex: &Example) -> [f64; 5] {
        let mut t = Tape::new(&self.params);
        let z = self.intent_logits(&mut t, ex);
        let p = math::softmax(&t.value(z).data);
        [p[0], p[1], p[2], p[3], p[4]]
    }

    pub fn predict_interest(&self, ex: &Example, which: Interest) -> f64 {
        let keys = match which {
            Interest::Ip => &ex.ip,
            Interest::Entity => &ex.entity,
        };
        let mut t = Tape::new(&self.params);
        let z = self.pair_logit(&mut t, self.interest_head(which), ex, keys);
        math::sigmoid(t.scalar(z))
    }

    /// Records the selected task losses of `ex` on `t`.
    fn build_losses(&self, t: &mut Tape, ex: &Example, tasks: TaskSet) -> (Var, LossParts) {
        let y = if ex.clicked { 1.0 } else { 0.0 };
        let mut parts = Vec::new();
        let mut out = LossParts::default();
        if tasks.click {
            let z = self.pair_logit(t, self.ids.click, ex, &ex.meaning);
            let l = t.bce_logits(z, y);
            out.click = t.scalar(l);
            parts.push(l);
        }
        if tasks.intent {
            let z = self.intent_logits(t, ex);
            let l = t.cross_entropy(z, &[ex.gold_intent.index()], &[1.0]);
            out.intent = t.scalar(l);
            parts.push(l);
        }
        if tasks.interest {
            let zi = self.pair_logit(t, self.ids.ip, ex, &ex.ip);
            let li = t.bce_logits(zi, y);
            let ze = self.pair_logit(t, self.ids.entity, ex, &ex.entity);
            let le = t.bce_logits(ze, y);
            let l = t.add(li, le);
            out.interest = t.scalar(l);
            parts.push(l);
        }
        let total = t.sum_scalars(&parts);
        out.total = t.scalar(total);
        (total, out)
    }

    pub fn losses(&self, ex: &Example, tasks: TaskSet) -> LossParts {
        let mut t = Tape::new(&self.params);
        self.build_losses(&mut t, ex, tasks).1
    }

    /// Summed losses of `batch`; gradients are added into `grads`.
    pub fn accumulate(&self, batch: &[&Example], tasks: TaskSet, grads: &mut [Mat]) -> LossParts {
        let mut sum = LossParts::default();
        for ex in batch {
            let mut t = Tape::new(&self.params);
            let (loss, parts) = self.build_losses(&mut t, ex, tasks);
            t.backward(loss, grads);
            sum.add(&parts);
        }
        sum
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn group_param(&self) -> ParamId {
        self.ids.groups
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedUserRep {
    pub table: UserEmbeddingTable,
    pub initial_table: UserEmbeddingTable,
    pub model: UserRepModel,
    pub curve: Vec<CurvePoint>,
    pub config: UserRepConfig,
}

/// Embeds each record once. Gold intents come from `intents`.
pub fn build_examples(
    logs: &[ClickLogRecord],
    corpus: &Corpus,
    intents: &IntentTable,
    embedder: &Embedder,
) -> Result<Vec<Example>, UserRepError> {
    let mut cache: BTreeMap<String, Mat> = BTreeMap::new();
    let dim = embedder.dim();
    let mut seq = |t: &str| {
        cache
            .entry(String::from(t))
            .or_insert_with(|| {
                let s = embedder.embed_text(t);
                Mat::from_vec(s.vectors.len(), dim, s.vectors.concat())
            })
            .clone()
    };
    let mut out = Vec::with_capacity(logs.len());
    for r in logs {
        let s = corpus.get(&r.sticker_id).ok_or_else(|| UserRepError::UnknownSticker(r.sticker_id.clone()))?;
        let gold = intents.get(&r.query).ok_or_else(|| UserRepError::MissingIntent(r.query.clone()))?;
        out.push(Example {
            group: r.profile.group,
            query: seq(&r.query),
            meaning: seq(&s.meaning),
            ip: seq(&s.ip),
            entity: seq(&s.entity),
            clicked: r.clicked,
            gold_intent: gold.top(),
        });
    }
    Ok(out)
}

/// Mini-batch AdamW on the joint loss; the returned table is frozen.
pub fn train_user_embeddings(examples: &[Example], cfg: &UserRepConfig) -> Result<TrainedUserRep, UserRepError> {
    for g in UserGroup::all() {
        if !examples.iter().any(|e| e.group == g) {
            return Err(UserRepError::NoRecords(g));
        }
    }
    if let Some(e) = examples.first() {
        if e.query.cols != cfg.dim {
            return Err(UserRepError::Dimension { expected: cfg.dim, found: e.query.cols });
        }
    }
    let mut model = UserRepModel::new(cfg.dim, cfg.hidden, cfg.seed);
    let initial_table = model.table();
    let mut opt = Optimizer::new(OptimizerConfig::adamw(cfg.lr), &model.params);
    let mut rng = rng_for(cfg.seed, "userrep/batches");
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut cursor = order.len();
    let mut curve = Vec::with_capacity(cfg.steps);
    let batch = cfg.batch.max(1).min(examples.len());
    for step in 0..cfg.steps {
        let mut picked = Vec::with_capacity(batch);
        while picked.len() < batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            picked.push(&examples[order[cursor]]);
            cursor += 1;
        }
        let mut grads = model.params.zeros_like();
        let sum = model.accumulate(&picked, cfg.tasks, &mut grads);
        let mean = sum.scaled(1.0 / batch as f64);
        if !mean.total.is_finite() {
            return Err(UserRepError::Diverged { step, loss: mean.total });
        }
        curve.push(CurvePoint { step, loss: mean });
        opt.step(&mut model.params, &grads, 1.0 / batch as f64);
    }
    let mut table = model.table();
    table.freeze();
    Ok(TrainedUserRep { table, initial_table, model, curve, config: cfg.clone() })
}

/// Mean joint loss over `examples`.
pub fn mean_loss(model: &UserRepModel, examples: &[Example], tasks: TaskSet) -> LossParts {
    let mut sum = LossParts::default();
    for e in examples {
        sum.add(&model.losses(e, tasks));
    }
    sum.scaled(1.0 / examples.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference, relative_error};
    use crate::rng::rng_from_seed;
    use alloc::vec;

    fn toy_example(dim: usize, seed: u64, clicked: bool) -> Example {
        let mut rng = rng_from_seed(seed);
        let mut m = |rows| init(&mut rng, rows, dim, 1.0);
        Example {
            group: UserGroup::from_index(3),
            query: m(2),
            meaning: m(3),
            ip: m(2),
            entity: m(1),
            clicked,
            gold_intent: Property::Style,
        }
    }

    #[test]
    fn single_key_attention_is_the_value_projection() {
        let mut rng = rng_from_seed(1);
        let (wq, wk, wv) = (init(&mut rng, 4, 4, 1.0), init(&mut rng, 4, 4, 1.0), init(&mut rng, 4, 4, 1.0));
        let key = init(&mut rng, 1, 4, 1.0);
        let (out, w) = attention(&[0.3, -0.2, 0.5, 1.0], &key, &key, &wq, &wk, &wv).unwrap();
        assert_eq!(w, vec![1.0]);
        assert_eq!(out, key.matmul(&wv).data);
        let empty = Mat::zeros(0, 4);
        assert_eq!(attention(&[0.0; 4], &empty, &empty, &wq, &wk, &wv), Err(UserRepError::EmptyKeys));
    }

    #[test]
    fn identical_keys_give_uniform_weights() {
        let mut rng = rng_from_seed(2);
        let (wq, wk, wv) = (init(&mut rng, 4, 4, 1.0), init(&mut rng, 4, 4, 1.0), init(&mut rng, 4, 4, 1.0));
        let row = init(&mut rng, 1, 4, 1.0);
        let keys = Mat::from_rows(&[row.row(0), row.row(0), row.row(0)]);
        let values = init(&mut rng, 3, 4, 1.0);
        let (out, w) = attention(&[1.0, 2.0, 0.0, -1.0], &keys, &values, &wq, &wk, &wv).unwrap();
        assert!(w.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-12));
        let mean: Vec<f64> = (0..4).map(|c| (0..3).map(|r| values.get(r, c)).sum::<f64>() / 3.0).collect();
        let expect = Mat::row_vector(mean).matmul(&wv).data;
        for (a, b) in out.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn joint_loss_is_the_sum_of_parts() {
        let model = UserRepModel::new(6, 5, 3);
        let ex = toy_example(6, 4, true);
        let all = model.losses(&ex, TaskSet::ALL);
        assert!((all.total - (all.click + all.intent + all.interest)).abs() < 1e-12);
        assert_eq!(model.losses(&ex, TaskSet::CLICK).click, all.click);
        let p = model.predict_intent(&ex);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let model = UserRepModel::new(4, 3, 5);
        assert!(model.param_count() < 5000);
        let batch = [toy_example(4, 6, true), toy_example(4, 7, false)];
        let refs: Vec<&Example> = batch.iter().collect();
        for tasks in [TaskSet::CLICK, TaskSet::INTENT, TaskSet::INTEREST, TaskSet::ALL] {
            let mut analytic = model.params.zeros_like();
            model.accumulate(&refs, tasks, &mut analytic);
            let numeric = finite_difference(&model.params, 1e-5, |ps| {
                let m = UserRepModel { params: ps.clone(), ..model.clone() };
                batch.iter().map(|e| m.losses(e, tasks).total).sum()
            });
            let err = relative_error(&analytic, &numeric);
            assert!(err < 1e-6, "{tasks:?}: {err}");
        }
    }

    #[test]
    fn frozen_table_rejects_updates() {
        let mut t = UserRepModel::new(4, 3, 1).table();
        let g = Mat::zeros(8, 4);
        assert!(t.apply_gradient(&g, 0.1).is_ok());
        t.freeze();
        assert_eq!(t.apply_gradient(&g, 0.1), Err(UserRepError::Frozen));
    }

    #[test]
    fn missing_group_is_named() {
        let exs = [toy_example(4, 1, true)];
        let cfg = UserRepConfig { dim: 4, hidden: 3, steps: 1, ..UserRepConfig::default() };
        assert_eq!(train_user_embeddings(&exs, &cfg).unwrap_err(), UserRepError::NoRecords(UserGroup::from_index(0)));
    }
}
