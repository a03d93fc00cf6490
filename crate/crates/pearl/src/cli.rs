//! Command line: every command reads and writes artifacts in one run
//! directory, so the pipeline composes through files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};
use pearl_core::corpus::{QueryJudgments, UserGroup};
use pearl_core::embed::Embedder;
use pearl_core::evalsim::{run_online_sim, MetricTable};
use pearl_core::index::Index;
use pearl_core::intent::{IntentDetector, IntentTable, Lexicons};
use pearl_core::quantize::Scheme;
use pearl_core::retrieve::{funnel_retrieve, RetrievalResult};
use serde_json::{json, Value};

use crate::artifacts::{
    curve_tsv, load_data, load_index, load_model, load_user, save_index, save_model, save_user, DataFiles, Layout,
    LoadedModel,
};
use crate::binary::{decode_codebook, TensorFile};
use crate::config::{IntentMode, RunConfig, Variant};
use crate::error::{Error, Result};
use crate::formats::{
    embeddings_text, read_embeddings, read_intents, read_jsonl, write_bytes, write_intents, write_json, write_jsonl,
};
use crate::llm::{HttpTransport, LlmDetector, LlmSettings};
use crate::pipeline;
use crate::report::Report;

#[derive(Debug, Parser)]
#[command(name = "pearl", version, about = "Personalized, intent-aware generative sticker retrieval")]
pub struct Cli {
    /// Run directory holding every artifact.
    #[arg(long, global = true, default_value = "run")]
    pub dir: PathBuf,
    /// TOML run configuration; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Model variant applied as a config diff.
    #[arg(long, global = true, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    /// Override any config key, e.g. `--set train.epochs=3`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Jsonl,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus, logs, triplets, judgments and embeddings.
    GenData {
        #[arg(long)]
        stickers: Option<usize>,
    },
    /// Resolve an intent ranking for every query in the data.
    ResolveIntents {
        /// gold, rules, table-first or llm.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Train the user group embeddings on the click logs.
    TrainUserEmb {
        /// all, click, intent or interest.
        #[arg(long)]
        tasks: Option<String>,
    },
    /// Quantize property values into identifiers and build the prefix trees.
    BuildIndex {
        #[arg(long, value_parser = parse_scheme)]
        scheme: Option<Scheme>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Train the sequence model on the indexing and retrieval objectives.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Retrieve stickers for one query.
    Retrieve {
        query: String,
        /// User group, e.g. `20-29:f`.
        #[arg(long)]
        group: Option<String>,
        #[arg(long)]
        topk: Option<usize>,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
    /// MRR and Recall at 1, 5, 10 and 20 on the judgments.
    EvalOffline {
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
    },
    /// Interleaving simulation of this run against a baseline run directory.
    SimulateOnline {
        /// Run directory of the baseline; this run itself when omitted.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        sessions: Option<usize>,
    },
    /// Train and evaluate one model per identifier scheme.
    AblateIds {
        #[arg(long, value_delimiter = ',', value_parser = parse_scheme)]
        schemes: Vec<Scheme>,
    },
    /// Summarize an artifact, or the run directory when no path is given.
    Inspect { path: Option<PathBuf> },
}

fn parse_scheme(s: &str) -> std::result::Result<Scheme, String> {
    s.parse().map_err(|e| format!("{e:?}"))
}

/// Sets `key` (dotted path) in `table`; the value is read as a TOML literal
/// and falls back to a plain string.
pub fn apply_override(table: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let next = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = next.as_table_mut().ok_or_else(|| Error::Config(format!("{key}: {p} is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl Cli {
    /// Defaults, then the config file, then `--set`, then command flags.
    pub fn resolve_config(&self) -> Result<RunConfig> {
        let mut table = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                toml::from_str::<toml::Table>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        let mut sets: Vec<(String, String)> = Vec::new();
        for s in &self.sets {
            let (k, v) = s.split_once('=').ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
            sets.push((k.trim().to_string(), v.trim().to_string()));
        }
        if let Some(seed) = self.seed {
            sets.push(("seed".into(), seed.to_string()));
        }
        let quoted = |s: &str| format!("{s:?}");
        match &self.command {
            Command::GenData { stickers: Some(n) } => sets.push(("data.stickers".into(), n.to_string())),
            Command::ResolveIntents { mode: Some(m) } => sets.push(("intent.mode".into(), quoted(m))),
            Command::TrainUserEmb { tasks: Some(t) } => sets.push(("userrep.tasks".into(), quoted(t))),
            Command::BuildIndex { scheme, m, k } => {
                if let Some(s) = scheme {
                    sets.push(("index.scheme".into(), quoted(s.name())));
                }
                if let Some(m) = m {
                    sets.push(("index.m".into(), m.to_string()));
                }
                if let Some(k) = k {
                    sets.push(("index.k".into(), k.to_string()));
                }
            }
            Command::Train { epochs: Some(e) } => sets.push(("train.epochs".into(), e.to_string())),
            Command::Retrieve { topk, beam, .. } => {
                if let Some(t) = topk {
                    sets.push(("retrieve.topk".into(), t.to_string()));
                }
                if let Some(b) = beam {
                    sets.push(("retrieve.beam".into(), b.to_string()));
                }
            }
            Command::SimulateOnline { sessions: Some(n), .. } => sets.push(("online.sessions".into(), n.to_string())),
            _ => {}
        }
        for (k, v) in &sets {
            apply_override(&mut table, k, v)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table).try_into().map_err(|e| Error::Config(format!("{e}")))?;
        if let Some(v) = self.variant {
            cfg = cfg.with_variant(v);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.resolve_config()?;
    let layout = Layout::new(&cli.dir);
    info!("run {} config {}", layout.root.display(), &cfg.hash()[..12]);
    match &cli.command {
        Command::GenData { .. } => gen_data(&cfg, &layout),
        Command::ResolveIntents { .. } => resolve_intents(&cfg, &layout),
        Command::TrainUserEmb { .. } => train_user_emb(&cfg, &layout),
        Command::BuildIndex { .. } => build_index(&cfg, &layout),
        Command::Train { .. } => train(&cfg, &layout),
        Command::Retrieve { query, group, format, .. } => retrieve(&cfg, &layout, query, group.as_deref(), *format),
        Command::EvalOffline { split } => eval_offline(&cfg, &layout, *split).map(|_| ()),
        Command::SimulateOnline { baseline, .. } => {
            let b = Layout::new(baseline.clone().unwrap_or_else(|| cli.dir.clone()));
            simulate_online(&cfg, &layout, &b).map(|_| ())
        }
        Command::AblateIds { schemes } => ablate_ids(&cfg, &layout, schemes).map(|_| ()),
        Command::Inspect { path } => inspect(&layout, path.as_deref()),
    }
}

pub fn gen_data(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let data = pipeline::generate(cfg)?;
    write_jsonl(&layout.corpus(), data.corpus.stickers())?;
    write_jsonl(&layout.click_logs(), &data.click_logs)?;
    write_jsonl(&layout.triplets(), &data.triplets)?;
    write_jsonl(&layout.train_judgments(), &data.train_judgments)?;
    write_jsonl(&layout.test_judgments(), &data.test_judgments)?;
    write_intents(&layout.gold_intents(), &pipeline::gold_table(&data))?;
    write_bytes(&layout.embeddings(), embeddings_text(&data.embeddings).as_bytes())?;
    write_json(&layout.data("ip_sets.json"), &data.ip_sets)?;
    let st = data.corpus.stats();
    println!(
        "{} stickers ({} ips, {} entities, {} styles), {} click logs, {} triplets, {} train and {} test judgments",
        st.stickers,
        st.distinct_ips,
        st.distinct_entities,
        st.distinct_styles,
        data.click_logs.len(),
        data.triplets.len(),
        data.train_judgments.len(),
        data.test_judgments.len()
    );
    Ok(())
}

fn embedder(cfg: &RunConfig, layout: &Layout) -> Result<Embedder> {
    let path = cfg.embed.path.as_ref().map(PathBuf::from).unwrap_or_else(|| layout.embeddings());
    let table = if path.exists() {
        read_embeddings(&path, cfg.embed.dim)?
    } else {
        warn!("no embedding file at {}; using hash vectors only", path.display());
        Vec::new()
    };
    pipeline::embedder(cfg, table)
}

fn all_judgments(d: &DataFiles) -> Vec<QueryJudgments> {
    d.train_judgments.iter().chain(&d.test_judgments).cloned().collect()
}

fn llm_detector() -> Result<Option<LlmDetector<HttpTransport>>> {
    let settings = LlmSettings::from_env().map_err(Error::Config)?;
    Ok(settings.map(|s| {
        let model = s.model.clone();
        LlmDetector::new(HttpTransport::new(s), &model)
    }))
}

pub fn resolve_intents(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let d = load_data(layout)?;
    let judgments = all_judgments(&d);
    let queries = pipeline::query_texts(&d.click_logs, &d.triplets, &judgments);
    let gold = if cfg.intent.mode == IntentMode::Gold {
        layout.require(&layout.gold_intents(), "gen-data")?;
        read_intents(&layout.gold_intents())?
    } else {
        IntentTable::new()
    };
    let mut table = if cfg.intent.mode == IntentMode::TableFirst && layout.intents().exists() {
        read_intents(&layout.intents())?
    } else {
        IntentTable::new()
    };
    let llm = match cfg.intent.mode {
        IntentMode::Llm | IntentMode::TableFirst => llm_detector()?,
        _ => None,
    };
    if cfg.intent.mode == IntentMode::Llm && llm.is_none() {
        return Err(Error::Config("intent mode llm needs PEARL_LLM_URL and PEARL_LLM_MODEL".into()));
    }
    let before = table.len();
    pipeline::resolve_all(
        cfg.intent.mode,
        &d.corpus,
        queries.iter().copied(),
        &gold,
        &mut table,
        llm.as_ref().map(|l| l as &dyn IntentDetector),
    )?;
    write_intents(&layout.intents(), &table)?;
    println!("{} query rankings ({} reused) written to {}", table.len(), before, layout.intents().display());
    Ok(())
}

fn load_intents(layout: &Layout) -> Result<IntentTable> {
    layout.require(&layout.intents(), "resolve-intents")?;
    read_intents(&layout.intents())
}

pub fn train_user_emb(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let d = load_data(layout)?;
    let intents = load_intents(layout)?;
    let emb = embedder(cfg, layout)?;
    let trained = pipeline::train_user(cfg, &d.click_logs, &d.corpus, &intents, &emb)?;
    save_user(&layout.user_checkpoint(), &trained.model, &cfg.hash())?;
    write_bytes(&layout.user_curve(), curve_tsv(&trained.curve).as_bytes())?;
    let last = trained.curve.last().map(|c| c.loss.total).unwrap_or(f64::NAN);
    println!("{} steps, final loss {last:.4}; checkpoint {}", trained.curve.len(), layout.user_checkpoint().display());
    Ok(())
}

pub fn build_index(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let d = load_data(layout)?;
    let emb = embedder(cfg, layout)?;
    let judgments = all_judgments(&d);
    let queries = pipeline::query_texts(&d.click_logs, &d.triplets, &judgments);
    let index = pipeline::build_index(cfg, &d.corpus, &emb, queries.iter().copied())?;
    save_index(&layout.index_dir(), &index)?;
    println!("{}", index.describe());
    Ok(())
}

fn require_index(layout: &Layout) -> Result<Index> {
    layout.require(&layout.index_dir().join("vocab.json"), "build-index")?;
    load_index(&layout.index_dir())
}

pub fn train(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let index = require_index(layout)?;
    layout.require(&layout.user_checkpoint(), "train-user-emb")?;
    let intents = load_intents(layout)?;
    let d = load_data(layout)?;
    let emb = embedder(cfg, layout)?;
    let mut table = load_user(&layout.user_checkpoint())?.table();
    table.freeze();
    let (model, epochs) = pipeline::train_model(cfg, &d.corpus, &index, &emb, &table, &d.triplets, &intents)?;
    save_model(&layout.model_checkpoint(), &model, &index, cfg.retrieve.mode, &cfg.hash())?;
    write_jsonl(&layout.model_epochs(), &epochs)?;
    let last = epochs.last().map(|e| e.loss.total).unwrap_or(f64::NAN);
    println!("{} epochs, final loss {last:.4}; checkpoint {}", epochs.len(), layout.model_checkpoint().display());
    Ok(())
}

/// Index and checkpoint of a run directory.
pub struct Loaded {
    pub index: Index,
    pub model: LoadedModel,
    pub lexicons: Lexicons,
    pub intents: IntentTable,
}

pub fn load_run(layout: &Layout) -> Result<Loaded> {
    let index = require_index(layout)?;
    layout.require(&layout.model_checkpoint(), "train")?;
    let model = load_model(&layout.model_checkpoint(), &index)?;
    layout.require(&layout.corpus(), "gen-data")?;
    let corpus = crate::artifacts::load_corpus(&layout.corpus())?;
    let intents = if layout.intents().exists() { read_intents(&layout.intents())? } else { IntentTable::new() };
    Ok(Loaded { index, model, lexicons: Lexicons::from_corpus(&corpus), intents })
}

impl Loaded {
    pub fn retrieve(&self, cfg: &RunConfig, group: Option<UserGroup>, query: &str) -> Result<RetrievalResult> {
        let ranking = pipeline::ranking_for(&self.intents, &self.lexicons, query);
        let mut rc = cfg.retrieve_config();
        rc.mode = self.model.mode;
        Ok(funnel_retrieve(&self.model.model, &self.index, group, query, &ranking, &rc)?)
    }
}

fn parse_group(s: &str) -> Result<UserGroup> {
    let token = if s.starts_with("<g:") { s.to_string() } else { format!("<g:{s}>") };
    UserGroup::from_token(&token).map_err(|e| Error::Config(e.to_string()))
}

pub fn retrieve(cfg: &RunConfig, layout: &Layout, query: &str, group: Option<&str>, format: Format) -> Result<()> {
    let group = group.map(parse_group).transpose()?;
    let run = load_run(layout)?;
    let res = run.retrieve(cfg, group, query)?;
    let ranking = pipeline::ranking_for(&run.intents, &run.lexicons, query);
    let mut report = Report::new("retrieve", cfg, &["rank", "sticker_id", "score", "stages"]);
    for (i, item) in res.items.iter().enumerate() {
        let stages: String = res
            .stages
            .iter()
            .zip(&item.stages)
            .map(|(s, hit)| if *hit { s.property.symbol() } else { '.' })
            .collect();
        report.push(json!({"rank": i + 1, "sticker_id": item.sticker_id, "score": item.score, "stages": stages}));
    }
    match format {
        Format::Jsonl => print!("{}", report.jsonl()),
        Format::Table => {
            let funnel: Vec<String> = res
                .stages
                .iter()
                .map(|s| format!("{}:{}{}", s.property.symbol(), s.survivors, if s.fallback { "!" } else { "" }))
                .collect();
            println!("query {query:?} intents {} funnel {}", ranking.symbols(), funnel.join(" "));
            print!("{}", report.table());
        }
    }
    Ok(())
}

fn metric_row(name: &str, t: &MetricTable) -> Value {
    let mut row = serde_json::Map::new();
    row.insert("name".into(), json!(name));
    for (k, v) in t.columns() {
        row.insert(k, json!(v));
    }
    row.insert("queries".into(), json!(t.queries));
    Value::Object(row)
}

const METRIC_COLUMNS: [&str; 10] =
    ["name", "MRR@1", "MRR@5", "MRR@10", "MRR@20", "Recall@1", "Recall@5", "Recall@10", "Recall@20", "queries"];

fn judgments_for(layout: &Layout, split: Split) -> Result<Vec<QueryJudgments>> {
    let path = match split {
        Split::Train => layout.train_judgments(),
        Split::Test => layout.test_judgments(),
    };
    layout.require(&path, "gen-data")?;
    read_jsonl(&path)
}

pub fn eval_offline(cfg: &RunConfig, layout: &Layout, split: Split) -> Result<MetricTable> {
    let run = load_run(layout)?;
    let judgments = judgments_for(layout, split)?;
    let mut failure = None;
    let mut ranker = |j: &QueryJudgments| match run.retrieve(cfg, Some(j.group), &j.query) {
        Ok(r) => r.ids(),
        Err(e) => {
            failure.get_or_insert(e);
            Vec::new()
        }
    };
    let table = pearl_core::evalsim::run_offline_eval(&mut ranker, &judgments, &pearl_core::evalsim::CUTOFFS)?;
    if let Some(e) = failure {
        return Err(e);
    }
    let mut report = Report::new("eval-offline", cfg, &METRIC_COLUMNS);
    report.push(metric_row(&format!("{:?}", split).to_lowercase(), &table));
    report.save(&layout.reports(), "offline")?;
    print!("{}", report.table());
    Ok(table)
}

pub fn simulate_online(cfg: &RunConfig, layout: &Layout, baseline: &Layout) -> Result<Value> {
    let p = load_run(layout)?;
    let b = load_run(baseline)?;
    let queries = judgments_for(layout, Split::Test)?;
    let mut failure = None;
    let mut rank_with = |run: &Loaded, j: &QueryJudgments| match run.retrieve(cfg, Some(j.group), &j.query) {
        Ok(r) => r.ids(),
        Err(e) => {
            failure.get_or_insert(e);
            Vec::new()
        }
    };
    let mut lists: BTreeMap<(UserGroup, String), (Vec<String>, Vec<String>)> = BTreeMap::new();
    for j in &queries {
        let pl = rank_with(&p, j);
        let bl = rank_with(&b, j);
        lists.insert((j.group, j.query.clone()), (pl, bl));
    }
    if let Some(e) = failure {
        return Err(e);
    }
    let mut rp = |j: &QueryJudgments| lists[&(j.group, j.query.clone())].0.clone();
    let mut rb = |j: &QueryJudgments| lists[&(j.group, j.query.clone())].1.clone();
    let d = run_online_sim(&mut rp, &mut rb, &queries, &cfg.online_config())?;
    let mut report = Report::new("simulate-online", cfg, &["metric", "value", "low", "high", "n"]);
    report.push(json!({"metric": "dCTR", "value": d.ctr.value, "low": d.ctr.low, "high": d.ctr.high, "n": d.sessions}));
    match d.acp {
        Some(a) => report.push(json!({"metric": "dACP", "value": a.value, "low": a.low, "high": a.high, "n": d.acp_queries})),
        None => report.push(json!({"metric": "dACP", "value": null, "low": null, "high": null, "n": 0})),
    }
    report.push(json!({"metric": "dGSB", "value": d.gsb.value, "low": d.gsb.low, "high": d.gsb.high, "n": d.sessions}));
    report.push(json!({"metric": "good/same/bad", "value": format!("{}/{}/{}", d.good, d.same, d.bad)}));
    report.save(&layout.reports(), "online")?;
    print!("{}", report.table());
    Ok(serde_json::to_value(&d).expect("report serializes"))
}

/// One model per scheme on the run's data, intents and user embeddings.
pub fn ablate_ids(cfg: &RunConfig, layout: &Layout, schemes: &[Scheme]) -> Result<Vec<(Scheme, MetricTable)>> {
    let d = load_data(layout)?;
    let intents = load_intents(layout)?;
    layout.require(&layout.user_checkpoint(), "train-user-emb")?;
    let mut table = load_user(&layout.user_checkpoint())?.table();
    table.freeze();
    let emb = embedder(cfg, layout)?;
    let judgments = all_judgments(&d);
    let queries = pipeline::query_texts(&d.click_logs, &d.triplets, &judgments);
    let schemes = if schemes.is_empty() { Scheme::ALL.to_vec() } else { schemes.to_vec() };
    let mut cols = vec!["scheme"];
    cols.extend(&METRIC_COLUMNS[1..]);
    let mut report = Report::new("ablate-ids", cfg, &cols);
    let mut out = Vec::new();
    for s in schemes {
        let mut c = cfg.clone();
        c.index.scheme = s;
        info!("scheme {s}");
        let index = pipeline::build_index(&c, &d.corpus, &emb, queries.iter().copied())?;
        let (model, _) = pipeline::train_model(&c, &d.corpus, &index, &emb, &table, &d.triplets, &intents)?;
        let t = pipeline::offline_eval(&c, &model, &index, &d.corpus, &intents, &d.test_judgments)?;
        let mut row = metric_row(s.name(), &t);
        row.as_object_mut().unwrap().insert("scheme".into(), json!(s.name()));
        report.push(row);
        out.push((s, t));
    }
    report.save(&layout.reports(), "ablate-ids")?;
    print!("{}", report.table());
    Ok(out)
}

const ARTIFACTS: [(&str, &str); 8] = [
    ("data/corpus.jsonl", "gen-data"),
    ("data/embeddings.txt", "gen-data"),
    ("intents.tsv", "resolve-intents"),
    ("user/user_rep.bin", "train-user-emb"),
    ("index/vocab.json", "build-index"),
    ("model/checkpoint.bin", "train"),
    ("reports/offline.jsonl", "eval-offline"),
    ("reports/online.jsonl", "simulate-online"),
];

pub fn inspect(layout: &Layout, path: Option<&Path>) -> Result<()> {
    let Some(path) = path else {
        for (rel, producer) in ARTIFACTS {
            let state = if layout.root.join(rel).exists() { "present" } else { "missing" };
            println!("{state:>7}  {rel:<24} ({producer})");
        }
        return Ok(());
    };
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    if path.is_dir() {
        println!("{}", load_index(path)?.describe());
        return Ok(());
    }
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    if name.ends_with(".bin") {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.starts_with(crate::binary::CODEBOOK_MAGIC) {
            let b = decode_codebook(path, &bytes)?;
            println!("{} codebook: {}", b.scheme(), serde_json::to_string(&codebook_summary(&b)).unwrap());
        } else {
            let kind = if name.starts_with("user") { "userrep" } else { "seqmodel" };
            let f = TensorFile::decode(path, &bytes, kind)?;
            println!("{} checkpoint, meta {}", f.kind, f.meta);
            for (n, m) in &f.tensors {
                println!("  {n:<16} {}x{}", m.rows, m.cols);
            }
        }
    } else if name.ends_with(".tsv") {
        let text = crate::formats::read_text(path)?;
        println!("{} lines", text.lines().filter(|l| !l.trim().is_empty()).count());
    } else {
        let records: Vec<Value> = read_jsonl(path)?;
        println!("{} records", records.len());
        if let Some(first) = records.first() {
            println!("first: {first}");
        }
    }
    Ok(())
}

fn codebook_summary(b: &pearl_core::index::PropertyCodebook) -> Value {
    use pearl_core::index::PropertyCodebook as B;
    match b {
        B::Pq(p) => json!({"dim": p.dim, "m": p.m, "k": p.k, "seed": p.seed}),
        B::Rq(r) => json!({"dim": r.dim, "levels": r.levels.iter().map(|l| l.rows).collect::<Vec<_>>(), "seed": r.seed}),
        B::Atomic(a) => json!({"values": a.values.len()}),
        B::String(s) => json!({"words": s.words.len(), "max_len": s.max_len}),
    }
}
