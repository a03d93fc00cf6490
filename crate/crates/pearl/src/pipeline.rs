//! The stages of a run as plain functions over in-memory values. The
//! commands wrap these with file IO; experiments call them directly.

use std::collections::BTreeSet;

use log::info;
use pearl_core::corpus::{generate_synthetic, ClickLogRecord, Corpus, QueryJudgments, SyntheticData, Triplet};
use pearl_core::embed::Embedder;
use pearl_core::evalsim::{run_offline_eval, MetricTable, CUTOFFS};
use pearl_core::index::{build_identifiers, train_codebooks, Index};
use pearl_core::intent::{
    detect_rule_based, resolve_intents, IntentDetector, IntentRanking, IntentTable, Lexicons, ResolveMode,
    RuleDetector,
};
use pearl_core::retrieve::{funnel_retrieve, RetrievalResult};
use pearl_core::seqmodel::{distinct_indexing_items, indexing_items, retrieval_items, train, EpochStats, SeqModel};
use pearl_core::userrep::{build_examples, train_user_embeddings, TrainedUserRep, UserEmbeddingTable};

use crate::config::{IntentMode, RunConfig};
use crate::error::{Error, Result};

pub fn generate(cfg: &RunConfig) -> Result<SyntheticData> {
    Ok(generate_synthetic(&cfg.synthetic())?)
}

/// Hash embedder overridden by `table` (planted or precomputed vectors).
pub fn embedder(cfg: &RunConfig, table: Vec<(String, Vec<f64>)>) -> Result<Embedder> {
    Ok(Embedder::with_table(cfg.embed.dim, cfg.sub_seed("embed"), table)?)
}

/// Distinct query texts across the training, log and evaluation records.
pub fn query_texts<'a>(
    logs: &'a [ClickLogRecord],
    triplets: &'a [Triplet],
    judgments: &'a [QueryJudgments],
) -> BTreeSet<&'a str> {
    logs.iter()
        .map(|r| r.query.as_str())
        .chain(triplets.iter().map(|t| t.query.as_str()))
        .chain(judgments.iter().map(|j| j.query.as_str()))
        .collect()
}

/// Fills `table` for every query in `queries` according to `mode`.
/// `gold` supplies rankings for [`IntentMode::Gold`].
pub fn resolve_all<'a>(
    mode: IntentMode,
    corpus: &Corpus,
    queries: impl IntoIterator<Item = &'a str>,
    gold: &IntentTable,
    table: &mut IntentTable,
    llm: Option<&dyn IntentDetector>,
) -> Result<()> {
    let rules = RuleDetector { lexicons: Lexicons::from_corpus(corpus) };
    for q in queries {
        match mode {
            IntentMode::Gold => {
                let r = gold.get(q).ok_or_else(|| Error::Intent(format!("no recorded intent for query {q:?}")))?;
                table.insert(q, r);
            }
            IntentMode::Rules => {
                resolve_intents(q, table, ResolveMode::Rules, &rules, None)?;
            }
            IntentMode::TableFirst => {
                resolve_intents(q, table, ResolveMode::TableFirst, &rules, llm)?;
            }
            IntentMode::Llm => {
                resolve_intents(q, table, ResolveMode::Llm, &rules, llm)?;
            }
        }
    }
    Ok(())
}

pub fn gold_table(data: &SyntheticData) -> IntentTable {
    let mut t = IntentTable::new();
    for qi in &data.intents {
        t.insert(&qi.query, qi.ranking);
    }
    t
}

pub fn train_user(
    cfg: &RunConfig,
    logs: &[ClickLogRecord],
    corpus: &Corpus,
    intents: &IntentTable,
    emb: &Embedder,
) -> Result<TrainedUserRep> {
    let examples = build_examples(logs, corpus, intents, emb)?;
    info!("user representation: {} examples", examples.len());
    Ok(train_user_embeddings(&examples, &cfg.userrep_config())?)
}

pub fn build_index<'a>(
    cfg: &RunConfig,
    corpus: &'a Corpus,
    emb: &Embedder,
    queries: impl IntoIterator<Item = &'a str>,
) -> Result<Index> {
    let books = train_codebooks(corpus, emb, &cfg.scheme())?;
    let ids = build_identifiers(corpus, emb, &books)?;
    let index = Index::build(corpus, ids, queries, cfg.index.max_steps)?;
    info!("index: {}", index.describe());
    Ok(index)
}

pub fn train_model(
    cfg: &RunConfig,
    corpus: &Corpus,
    index: &Index,
    emb: &Embedder,
    groups: &UserEmbeddingTable,
    triplets: &[Triplet],
    intents: &IntentTable,
) -> Result<(SeqModel, Vec<EpochStats>)> {
    let tc = cfg.training();
    let mut model = SeqModel::new(index, emb, groups, cfg.shape(), tc.use_user_embedding, cfg.sub_seed("model"))?;
    let indexing = if cfg.train.dedup_indexing {
        distinct_indexing_items(corpus, index)
    } else {
        indexing_items(corpus, index, &(0..corpus.len()).collect::<Vec<_>>())
    };
    let retrieval = retrieval_items(triplets, corpus, index, intents, tc.use_intent_loss)?;
    info!(
        "model: {} parameters, {} indexing and {} retrieval items",
        model.param_count(),
        indexing.len(),
        retrieval.len()
    );
    let stats = train(&mut model, &indexing, &retrieval, &tc)?;
    for s in &stats {
        info!("epoch {} updates {} loss {:.4}", s.epoch, s.updates, s.loss.total);
    }
    Ok((model, stats))
}

/// Ranking for `query`: the table entry, else the rules.
pub fn ranking_for(intents: &IntentTable, lexicons: &Lexicons, query: &str) -> IntentRanking {
    intents.get(query).unwrap_or_else(|| detect_rule_based(query, lexicons))
}

pub fn retrieve(
    cfg: &RunConfig,
    model: &SeqModel,
    index: &Index,
    ranking: &IntentRanking,
    judgment: &QueryJudgments,
) -> Result<RetrievalResult> {
    Ok(funnel_retrieve(model, index, Some(judgment.group), &judgment.query, ranking, &cfg.retrieve_config())?)
}

pub fn offline_eval(
    cfg: &RunConfig,
    model: &SeqModel,
    index: &Index,
    corpus: &Corpus,
    intents: &IntentTable,
    judgments: &[QueryJudgments],
) -> Result<MetricTable> {
    let lex = Lexicons::from_corpus(corpus);
    let mut failure = None;
    let mut ranker = |j: &QueryJudgments| {
        let r = ranking_for(intents, &lex, &j.query);
        match retrieve(cfg, model, index, &r, j) {
            Ok(res) => res.ids(),
            Err(e) => {
                failure.get_or_insert(e);
                Vec::new()
            }
        }
    };
    let table = run_offline_eval(&mut ranker, judgments, &CUTOFFS)?;
    match failure {
        Some(e) => Err(e),
        None => Ok(table),
    }
}

/// Everything an in-memory run produces.
pub struct Experiment {
    pub data: SyntheticData,
    pub intents: IntentTable,
    pub index: Index,
    pub user: TrainedUserRep,
    pub model: SeqModel,
    pub epochs: Vec<EpochStats>,
    pub offline: MetricTable,
}

/// Generate, resolve intents, train both stages and evaluate on the test
/// judgments.
pub fn run_experiment(cfg: &RunConfig) -> Result<Experiment> {
    cfg.validate()?;
    let data = generate(cfg)?;
    let emb = embedder(cfg, data.embeddings.clone())?;
    let queries = query_texts(&data.click_logs, &data.triplets, &data.test_judgments);
    let gold = gold_table(&data);
    let mut intents = IntentTable::new();
    resolve_all(cfg.intent.mode, &data.corpus, queries.iter().copied(), &gold, &mut intents, None)?;
    let user = train_user(cfg, &data.click_logs, &data.corpus, &intents, &emb)?;
    let index = build_index(cfg, &data.corpus, &emb, queries.iter().copied())?;
    let (model, epochs) = train_model(cfg, &data.corpus, &index, &emb, &user.table, &data.triplets, &intents)?;
    let offline = offline_eval(cfg, &model, &index, &data.corpus, &intents, &data.test_judgments)?;
    Ok(Experiment { data, intents, index, user, model, epochs, offline })
}
