//! Small encoder-decoder over the unified vocabulary.
//!
//! The encoder reads `[group] ++ query` (or property content for indexing);
//! the decoder starts from a property prefix token and predicts code tokens
//! over the output space of [`Vocabulary`]. One self-attention layer in the
//! encoder, one decoder layer with causal self-attention, cross-attention
//! and a feed-forward block. Layer norms carry no affine parameters.
//!
//! Group-token vectors come from a frozen table kept outside the trainable
//! parameters.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::corpus::{Corpus, Triplet, UserGroup};
use crate::embed::Embedder;
use crate::index::Index;
use crate::intent::{IntentRanking, IntentTable};
use crate::math;
use crate::optim::{Optimizer, OptimizerConfig};
use crate::rng::{normal, rng_for, ChaCha8Rng};
use crate::tensor::Mat;
use crate::userrep::UserEmbeddingTable;
use crate::{Property, PROPERTIES};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SeqError {
    #[error("decoder prefix must start with a property token")]
    MissingPrefix,
    #[error("no code for sticker {sticker} property {property}")]
    MissingCode { sticker: String, property: Property },
    #[error("no intent ranking for query {0:?}")]
    MissingRanking(String),
    #[error("unknown sticker {0:?}")]
    UnknownSticker(String),
    #[error("group table has dimension {found}, model needs {expected}")]
    GroupDimension { expected: usize, found: usize },
    #[error("training diverged at epoch {epoch}, update {update}: loss {loss} ({detail})")]
    Diverged { epoch: usize, update: usize, loss: f64, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub dim: usize,
    pub ff: usize,
    /// Positional-encoding table length.
    pub max_len: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        ModelShape { dim: 64, ff: 128, max_len: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub optimizer: OptimizerConfig,
    /// Token budget (encoder plus decoder tokens) per update.
    pub batch_tokens: usize,
    pub epochs: usize,
    pub seed: u64,
    pub use_user_embedding: bool,
    pub use_intent_loss: bool,
    /// Include the indexing objective.
    pub indexing: bool,
    /// Include the retrieval objective.
    pub retrieval: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            optimizer: OptimizerConfig::adamw(1e-3),
            batch_tokens: 256,
            epochs: 10,
            seed: 7,
            use_user_embedding: true,
            use_intent_loss: true,
            indexing: true,
            retrieval: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Attn {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Ffn {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Ids {
    embed: ParamId,
    enc_attn: Attn,
    enc_ffn: Ffn,
    dec_self: Attn,
    dec_cross: Attn,
    dec_ffn: Ffn,
    out_w: ParamId,
    out_b: ParamId,
}

/// Hidden states of an encoded input.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedQuery {
    pub hidden: Mat,
}

/// One indexing target: property content in, code out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexingItem {
    pub property: Property,
    pub content: Vec<u32>,
    /// Output-space targets.
    pub targets: Vec<u32>,
}

/// One retrieval target: group and query in, all five codes out.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalItem {
    pub group: UserGroup,
    pub query: Vec<u32>,
    pub targets: [Vec<u32>; 5],
    pub weights: [f64; 5],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub indexing: Vec<IndexingItem>,
    pub retrieval: Vec<RetrievalItem>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchLoss {
    pub indexing: f64,
    pub retrieval: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub updates: usize,
    /// Mean per-item losses over the epoch.
    pub loss: BatchLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqModel {
    pub shape: ModelShape,
    pub params: ParamStore,
    ids: Ids,
    /// Frozen group vectors, `8 x dim`.
    pub groups: Mat,
    pub use_user_embedding: bool,
    /// Output-space size.
    pub outputs: usize,
    pub prefix_base: u32,
    pub output_base: u32,
    pub group_base: u32,
}

fn init(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    Mat::from_vec(rows, cols, (0..rows * cols).map(|_| normal(rng) * scale).collect())
}

fn positional(len: usize, dim: usize) -> Mat {
    let mut m = Mat::zeros(len, dim);
    let scale = 1.0 / math::sqrt(dim as f64);
    for pos in 0..len {
        for i in 0..dim {
            let rate = math::powf(10000.0, -((i / 2 * 2) as f64) / dim as f64);
            let a = pos as f64 * rate;
            m.set(pos, i, scale * if i % 2 == 0 { math::sin(a) } else { math::cos(a) });
        }
    }
    m
}

impl SeqModel {
    /// Fresh model for `index`'s vocabulary. Text-token rows start from
    /// `embedder` vectors; `groups` must be `8 x shape.dim`.
    pub fn new(
        index: &Index,
        embedder: &Embedder,
        groups: &UserEmbeddingTable,
        shape: ModelShape,
        use_user_embedding: bool,
        seed: u64,
    ) -> Result<SeqModel, SeqError> {
        let d = shape.dim;
        if groups.vectors.cols != d || groups.vectors.rows != UserGroup::COUNT {
            return Err(SeqError::GroupDimension { expected: d, found: groups.vectors.cols });
        }
        let vocab = &index.vocab;
        let mut rng = rng_for(seed, "seqmodel/init");
        let s = 1.0 / math::sqrt(d as f64);
        let mut table = init(&mut rng, vocab.len(), d, s);
        for (i, tok) in vocab.text.iter().enumerate() {
            let v = embedder.token_vector(tok);
            if v.len() == d {
                table.row_mut(i + 1).copy_from_slice(&v);
            }
        }
        // Group rows live in the frozen table; keep the trainable rows inert.
        for g in 0..UserGroup::COUNT {
            table.row_mut(vocab.group_base() as usize + g).fill(0.0);
        }
        let mut ps = ParamStore::new();
        let embed = ps.add("embed", table);
        let mut attn = |name: &str, rng: &mut ChaCha8Rng| Attn {
            wq: ps.add(&format!("{name}.wq"), init(rng, d, d, s)),
            wk: ps.add(&format!("{name}.wk"), init(rng, d, d, s)),
            wv: ps.add(&format!("{name}.wv"), init(rng, d, d, s)),
            wo: ps.add(&format!("{name}.wo"), init(rng, d, d, s)),
        };
        let enc_attn = attn("enc.attn", &mut rng);
        let dec_self = attn("dec.self", &mut rng);
        let dec_cross = attn("dec.cross", &mut rng);
        let mut ffn = |name: &str, rng: &mut ChaCha8Rng| Ffn {
            w1: ps.add(&format!("{name}.w1"), init(rng, d, shape.ff, s)),
            b1: ps.add(&format!("{name}.b1"), Mat::zeros(1, shape.ff)),
            w2: ps.add(&format!("{name}.w2"), init(rng, shape.ff, d, 1.0 / math::sqrt(shape.ff as f64))),
            b2: ps.add(&format!("{name}.b2"), Mat::zeros(1, d)),
        };
        let enc_ffn = ffn("enc.ffn", &mut rng);
        let dec_ffn = ffn("dec.ffn", &mut rng);
        let outputs = vocab.output_size();
        let out_w = ps.add("out.w", init(&mut rng, d, outputs, s));
        let out_b = ps.add("out.b", Mat::zeros(1, outputs));
        Ok(SeqModel {
            shape,
            params: ps,
            ids: Ids { embed, enc_attn, enc_ffn, dec_self, dec_cross, dec_ffn, out_w, out_b },
            groups: groups.vectors.clone(),
            use_user_embedding,
            outputs,
            prefix_base: vocab.prefix_token(Property::Ocr),
            output_base: vocab.output_base(),
            group_base: vocab.group_base(),
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn prefix_token(&self, p: Property) -> u32 {
        self.prefix_base + p.index() as u32
    }

    fn attention(&self, t: &mut Tape, a: Attn, x: Var, ctx: Var, causal: bool) -> Var {
        let wq = t.param(a.wq);
        let wk = t.param(a.wk);
        let wv = t.param(a.wv);
        let wo = t.param(a.wo);
        let q = t.matmul(x, wq);
        let k = t.matmul(ctx, wk);
        let v = t.matmul(ctx, wv);
        let s = t.matmul_t(q, k);
        let s = t.scale(s, 1.0 / math::sqrt(self.shape.dim as f64));
        let w = t.softmax_rows(s, causal);
        let h = t.matmul(w, v);
        t.matmul(h, wo)
    }

    fn ffn(&self, t: &mut Tape, f: Ffn, x: Var) -> Var {
        let w1 = t.param(f.w1);
        let b1 = t.param(f.b1);
        let w2 = t.param(f.w2);
        let b2 = t.param(f.b2);
        let h = t.matmul(x, w1);
        let h = t.add_row(h, b1);
        let h = t.relu(h);
        let h = t.matmul(h, w2);
        t.add_row(h, b2)
    }

    fn with_positions(&self, t: &mut Tape, x: Var) -> Var {
        let n = t.value(x).rows;
        let pe = t.constant(positional(n, self.shape.dim));
        t.add(x, pe)
    }

    /// Token rows for global ids; empty input becomes the unknown token.
    fn embed_tokens(&self, t: &mut Tape, tokens: &[u32]) -> Var {
        let table = t.param(self.ids.embed);
        let idx: Vec<usize> = if tokens.is_empty() { vec![0] } else { tokens.iter().map(|&x| x as usize).collect() };
        t.gather(table, &idx)
    }

    fn encoder(&self, t: &mut Tape, group: Option<UserGroup>, tokens: &[u32]) -> Var {
        let words = self.embed_tokens(t, tokens);
        let x = match group {
            Some(g) if self.use_user_embedding => {
                let row = t.constant(Mat::row_vector(self.groups.row(g.index()).to_vec()));
                t.concat_rows(&[row, words])
            }
            _ => words,
        };
        let x = self.with_positions(t, x);
        let a = self.attention(t, self.ids.enc_attn, x, x, false);
        let x = t.add(x, a);
        let x = t.layer_norm(x);
        let f = self.ffn(t, self.ids.enc_ffn, x);
        let x = t.add(x, f);
        t.layer_norm(x)
    }

    /// Logits for every decoder position; `inputs` are output-space ids
    /// following the prefix token.
    fn decoder(&self, t: &mut Tape, enc: Var, p: Property, inputs: &[u32]) -> Var {
        let mut toks = Vec::with_capacity(inputs.len() + 1);
        toks.push(self.prefix_token(p));
        toks.extend(inputs.iter().map(|o| self.output_base + o));
        let y = self.embed_tokens(t, &toks);
        let y = self.with_positions(t, y);
        let a = self.attention(t, self.ids.dec_self, y, y, true);
        let y = t.add(y, a);
        let y = t.layer_norm(y);
        let c = self.attention(t, self.ids.dec_cross, y, enc, false);
        let y = t.add(y, c);
        let y = t.layer_norm(y);
        let f = self.ffn(t, self.ids.dec_ffn, y);
        let y = t.add(y, f);
        let y = t.layer_norm(y);
        let w = t.param(self.ids.out_w);
        let b = t.param(self.ids.out_b);
        let z = t.matmul(y, w);
        t.add_row(z, b)
    }

    /// Input is `[group] ++ tokens` when the model uses user embeddings and a
    /// group is given, `tokens` otherwise.
    pub fn encode(&self, group: Option<UserGroup>, tokens: &[u32]) -> EncodedQuery {
        let mut t = Tape::new(&self.params);
        let h = self.encoder(&mut t, group, tokens);
        EncodedQuery { hidden: t.value(h).clone() }
    }

    /// Log-probabilities over the output space after `prefix` (output ids)
    /// under property `p`.
    pub fn next_log_probs(&self, enc: &EncodedQuery, p: Property, prefix: &[u32]) -> Vec<f64> {
        let mut t = Tape::new(&self.params);
        let h = t.constant(enc.hidden.clone());
        let z = self.decoder(&mut t, h, p, prefix);
        let logits = t.value(z);
        let mut last = logits.row(logits.rows - 1).to_vec();
        math::log_softmax_in_place(&mut last);
        last
    }

    /// Distribution after a decoder prefix of global ids whose first token
    /// must be a property prefix token.
    pub fn next_token_distribution(&self, enc: &EncodedQuery, prefix: &[u32]) -> Result<Vec<f64>, SeqError> {
        let first = *prefix.first().ok_or(SeqError::MissingPrefix)?;
        if first < self.prefix_base || first >= self.prefix_base + 5 {
            return Err(SeqError::MissingPrefix);
        }
        let p = Property::from_index((first - self.prefix_base) as usize).unwrap();
        let mut outs = Vec::with_capacity(prefix.len() - 1);
        for &g in &prefix[1..] {
            if g < self.output_base {
                return Err(SeqError::MissingPrefix);
            }
            outs.push(g - self.output_base);
        }
        let lp = self.next_log_probs(enc, p, &outs);
        Ok(lp.into_iter().map(math::exp).collect())
    }

    /// Weighted NLL of `targets` given an encoded input node.
    fn sequence_nll(&self, t: &mut Tape, enc: Var, p: Property, targets: &[u32], weight: f64) -> Var {
        let inputs = &targets[..targets.len() - 1];
        let z = self.decoder(t, enc, p, inputs);
        let tg: Vec<usize> = targets.iter().map(|&x| x as usize).collect();
        t.cross_entropy(z, &tg, &vec![weight; tg.len()])
    }

    fn indexing_on_tape(&self, t: &mut Tape, item: &IndexingItem) -> Var {
        let enc = self.encoder(t, None, &item.content);
        self.sequence_nll(t, enc, item.property, &item.targets, 1.0)
    }

    fn retrieval_on_tape(&self, t: &mut Tape, item: &RetrievalItem) -> Var {
        let enc = self.encoder(t, Some(item.group), &item.query);
        let parts: Vec<Var> = PROPERTIES
            .iter()
            .map(|p| self.sequence_nll(t, enc, *p, &item.targets[p.index()], item.weights[p.index()]))
            .collect();
        t.sum_scalars(&parts)
    }

    pub fn loss_indexing(&self, items: &[IndexingItem]) -> f64 {
        items
            .iter()
            .map(|it| {
                let mut t = Tape::new(&self.params);
                let l = self.indexing_on_tape(&mut t, it);
                t.scalar(l)
            })
            .sum()
    }

    pub fn loss_retrieval(&self, items: &[RetrievalItem]) -> f64 {
        items
            .iter()
            .map(|it| {
                let mut t = Tape::new(&self.params);
                let l = self.retrieval_on_tape(&mut t, it);
                t.scalar(l)
            })
            .sum()
    }

    /// `L_I + L_R` on the two halves of `batch`.
    pub fn loss_total(&self, batch: &Batch) -> f64 {
        self.loss_indexing(&batch.indexing) + self.loss_retrieval(&batch.retrieval)
    }

    /// Adds the gradient of the batch's total loss into `grads`.
    pub fn gradients(&self, batch: &Batch, grads: &mut [Mat]) -> BatchLoss {
        let mut out = BatchLoss::default();
        for it in &batch.indexing {
            let mut t = Tape::new(&self.params);
            let l = self.indexing_on_tape(&mut t, it);
            out.indexing += t.scalar(l);
            t.backward(l, grads);
        }
        for it in &batch.retrieval {
            let mut t = Tape::new(&self.params);
            let l = self.retrieval_on_tape(&mut t, it);
            out.retrieval += t.scalar(l);
            t.backward(l, grads);
        }
        out.total = out.indexing + out.retrieval;
        out
    }

    pub fn all_finite(&self) -> bool {
        self.params.all_finite()
    }
}

/// One indexing item per sticker and property, in corpus order.
pub fn indexing_items(corpus: &Corpus, index: &Index, stickers: &[usize]) -> Vec<IndexingItem> {
    let mut out = Vec::with_capacity(stickers.len() * 5);
    for &i in stickers {
        let s = &corpus.stickers()[i];
        for p in PROPERTIES {
            out.push(IndexingItem {
                property: p,
                content: index.vocab.encode_text(s.property(p)),
                targets: index.vocab.code_targets(index.identifiers.code(i, p)),
            });
        }
    }
    out
}

/// Indexing items over distinct `(property, content, code)` triples.
pub fn distinct_indexing_items(corpus: &Corpus, index: &Index) -> Vec<IndexingItem> {
    let all: Vec<usize> = (0..corpus.len()).collect();
    let mut items = indexing_items(corpus, index, &all);
    let mut seen = alloc::collections::BTreeSet::new();
    items.retain(|it| seen.insert((it.property, it.content.clone(), it.targets.clone())));
    items
}

/// Decay weights of `ranking`, or all ones when the intent loss is off.
pub fn property_weights(ranking: &IntentRanking, use_intent_loss: bool) -> [f64; 5] {
    let mut w = [1.0; 5];
    if use_intent_loss {
        for p in PROPERTIES {
            w[p.index()] = ranking.decay(p);
        }
    }
    w
}

pub fn retrieval_items(
    triplets: &[Triplet],
    corpus: &Corpus,
    index: &Index,
    intents: &IntentTable,
    use_intent_loss: bool,
) -> Result<Vec<RetrievalItem>, SeqError> {
    let mut out = Vec::with_capacity(triplets.len());
    for tr in triplets {
        let pos = corpus.position(&tr.sticker_id).ok_or_else(|| SeqError::UnknownSticker(tr.sticker_id.clone()))?;
        let ranking = intents.get(&tr.query).ok_or_else(|| SeqError::MissingRanking(tr.query.clone()))?;
        let targets = PROPERTIES.map(|p| index.vocab.code_targets(index.identifiers.code(pos, p)));
        out.push(RetrievalItem {
            group: tr.group,
            query: index.vocab.encode_text(&tr.query),
            targets,
            weights: property_weights(&ranking, use_intent_loss),
        });
    }
    Ok(out)
}

enum Item<'a> {
    Indexing(&'a IndexingItem),
    Retrieval(&'a RetrievalItem),
}

impl Item<'_> {
    fn tokens(&self) -> usize {
        match self {
            Item::Indexing(i) => i.content.len().max(1) + i.targets.len(),
            Item::Retrieval(r) => r.query.len() + 1 + r.targets.iter().map(Vec::len).sum::<usize>(),
        }
    }
}

/// Mini-batch training on `L_T`. Items are shuffled each epoch with the
/// config seed; an update fires once the accumulated token count reaches
/// `batch_tokens`.
pub fn train(
    model: &mut SeqModel,
    indexing: &[IndexingItem],
    retrieval: &[RetrievalItem],
    cfg: &TrainingConfig,
) -> Result<Vec<EpochStats>, SeqError> {
    let mut items: Vec<Item> = Vec::new();
    if cfg.indexing {
        items.extend(indexing.iter().map(Item::Indexing));
    }
    if cfg.retrieval {
        items.extend(retrieval.iter().map(Item::Retrieval));
    }
    let mut opt = Optimizer::new(cfg.optimizer, &model.params);
    let mut rng = rng_for(cfg.seed, "seqmodel/shuffle");
    let mut stats = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut updates = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = BatchLoss::default();
        let mut grads = model.params.zeros_like();
        let mut tokens = 0;
        let mut in_batch = 0;
        for (n, &ix) in order.iter().enumerate() {
            let item = &items[ix];
            let mut t = Tape::new(&model.params);
            let l = match item {
                Item::Indexing(it) => model.indexing_on_tape(&mut t, it),
                Item::Retrieval(it) => model.retrieval_on_tape(&mut t, it),
            };
            let v = t.scalar(l);
            if !v.is_finite() {
                let detail = match item {
                    Item::Indexing(it) => format!("indexing item for {}", it.property),
                    Item::Retrieval(it) => format!("retrieval item for {}", it.group),
                };
                return Err(SeqError::Diverged { epoch, update: updates, loss: v, detail });
            }
            t.backward(l, &mut grads);
            match item {
                Item::Indexing(_) => sum.indexing += v,
                Item::Retrieval(_) => sum.retrieval += v,
            }
            tokens += item.tokens();
            in_batch += 1;
            if tokens >= cfg.batch_tokens || n + 1 == order.len() {
                opt.step(&mut model.params, &grads, 1.0 / in_batch as f64);
                updates += 1;
                grads.iter_mut().for_each(|g| g.fill(0.0));
                tokens = 0;
                in_batch = 0;
                if !model.all_finite() {
                    return Err(SeqError::Diverged {
                        epoch,
                        update: updates,
                        loss: f64::NAN,
                        detail: "non-finite parameter after update".into(),
                    });
                }
            }
        }
        let n = items.len().max(1) as f64;
        sum.indexing /= n;
        sum.retrieval /= n;
        sum.total = sum.indexing + sum.retrieval;
        stats.push(EpochStats { epoch, updates, loss: sum });
    }
    Ok(stats)
}
