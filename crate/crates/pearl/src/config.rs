//! Run configuration: one TOML file, every field defaulted, one root seed.

use std::path::Path;

use pearl_core::corpus::SyntheticConfig;
use pearl_core::evalsim::{ClickModelConfig, OnlineConfig};
use pearl_core::index::SchemeConfig;
use pearl_core::optim::OptimizerConfig;
use pearl_core::quantize::Scheme;
use pearl_core::retrieve::{Mode, RetrieveConfig};
use pearl_core::rng::derive_seed;
use pearl_core::seqmodel::{ModelShape, TrainingConfig};
use pearl_core::userrep::{TaskSet, UserRepConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random stream in the run.
    pub seed: u64,
    pub data: DataConfig,
    pub embed: EmbedConfig,
    pub index: IndexConfig,
    pub userrep: UserRepSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub retrieve: RetrieveSection,
    pub intent: IntentSection,
    pub online: OnlineSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            data: DataConfig::default(),
            embed: EmbedConfig::default(),
            index: IndexConfig::default(),
            userrep: UserRepSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            retrieve: RetrieveSection::default(),
            intent: IntentSection::default(),
            online: OnlineSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub stickers: usize,
    pub ips: usize,
    pub entities: usize,
    pub styles: usize,
    pub ocr_concepts: usize,
    pub meaning_concepts: usize,
    pub synonyms: usize,
    pub ip_sets: usize,
    /// Mass each group puts on its own IP set.
    pub preference_strength: f64,
    pub compound_rate: f64,
    pub train_pairs: usize,
    pub test_pairs: usize,
    pub positives_per_pair: usize,
    pub click_logs: usize,
    pub synonym_noise: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = SyntheticConfig::default();
        DataConfig {
            stickers: s.stickers,
            ips: s.ips,
            entities: s.entities,
            styles: s.styles,
            ocr_concepts: s.ocr_concepts,
            meaning_concepts: s.meaning_concepts,
            synonyms: s.synonyms,
            ip_sets: s.ip_sets,
            preference_strength: 0.9,
            compound_rate: s.compound_rate,
            train_pairs: s.train_pairs,
            test_pairs: s.test_pairs,
            positives_per_pair: s.positives_per_pair,
            click_logs: s.click_logs,
            synonym_noise: s.synonym_noise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    pub dim: usize,
    /// Precomputed token vectors; the generator's planted vectors when unset.
    pub path: Option<String>,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig { dim: 64, path: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexConfig {
    pub scheme: Scheme,
    pub m: usize,
    pub k: usize,
    pub max_steps: usize,
    pub cap_k: bool,
}

impl Default for IndexConfig {
    fn default() -> Self {
        let s = SchemeConfig::default();
        IndexConfig { scheme: s.scheme, m: s.m, k: s.k, max_steps: s.max_steps, cap_k: s.cap_k }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tasks {
    All,
    Click,
    Intent,
    Interest,
}

impl Tasks {
    pub fn set(self) -> TaskSet {
        match self {
            Tasks::All => TaskSet::ALL,
            Tasks::Click => TaskSet::CLICK,
            Tasks::Intent => TaskSet::INTENT,
            Tasks::Interest => TaskSet::INTEREST,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UserRepSection {
    pub hidden: usize,
    pub lr: f64,
    pub batch: usize,
    pub steps: usize,
    pub tasks: Tasks,
}

impl Default for UserRepSection {
    fn default() -> Self {
        let u = UserRepConfig::default();
        UserRepSection { hidden: u.hidden, lr: u.lr, batch: u.batch, steps: u.steps, tasks: Tasks::All }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub ff: usize,
    pub max_len: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let s = ModelShape::default();
        ModelSection { ff: s.ff, max_len: s.max_len }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adamw,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub batch_tokens: usize,
    pub epochs: usize,
    pub use_user_embedding: bool,
    pub use_intent_loss: bool,
    pub indexing: bool,
    pub retrieval: bool,
    /// Train indexing on distinct (property, content, code) triples only.
    pub dedup_indexing: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainingConfig::default();
        TrainSection {
            optimizer: OptimizerKind::Adamw,
            lr: 1e-3,
            batch_tokens: t.batch_tokens,
            epochs: t.epochs,
            use_user_embedding: t.use_user_embedding,
            use_intent_loss: t.use_intent_loss,
            indexing: t.indexing,
            retrieval: t.retrieval,
            dedup_indexing: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrieveSection {
    pub beam: usize,
    pub topk: usize,
    pub mode: Mode,
    pub depth: usize,
}

impl Default for RetrieveSection {
    fn default() -> Self {
        let r = RetrieveConfig::default();
        RetrieveSection { beam: r.beam, topk: r.topk, mode: r.mode, depth: r.depth }
    }
}

/// Where query intent rankings come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntentMode {
    /// Rankings recorded by the data generator.
    Gold,
    /// Lexicon rules over the corpus.
    Rules,
    /// Intent table file, LLM on misses when configured, rules otherwise.
    TableFirst,
    /// Always ask the LLM.
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntentSection {
    pub mode: IntentMode,
}

impl Default for IntentSection {
    fn default() -> Self {
        IntentSection { mode: IntentMode::Rules }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnlineSection {
    pub sessions: usize,
    pub bootstrap: usize,
    pub examination_offset: f64,
    pub relevant_click: f64,
    pub irrelevant_click: f64,
}

impl Default for OnlineSection {
    fn default() -> Self {
        let o = OnlineConfig::default();
        OnlineSection {
            sessions: o.sessions,
            bootstrap: o.bootstrap,
            examination_offset: o.clicks.offset,
            relevant_click: o.clicks.relevant_click,
            irrelevant_click: o.clicks.irrelevant_click,
        }
    }
}

/// Named model variants; each is a config diff against the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    /// No user group token.
    NoUe,
    /// Equal property weights in the retrieval loss.
    NoIal,
    /// Equal weights in training and one flat decode pass.
    NoIg,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoUe, Variant::NoIal, Variant::NoIg];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoUe => "no-ue",
            Variant::NoIal => "no-ial",
            Variant::NoIg => "no-ig",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| format!("unknown variant {s:?}"))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn with_variant(mut self, v: Variant) -> RunConfig {
        match v {
            Variant::Full => {}
            Variant::NoUe => self.train.use_user_embedding = false,
            Variant::NoIal => self.train.use_intent_loss = false,
            Variant::NoIg => {
                self.train.use_intent_loss = false;
                self.retrieve.mode = Mode::Flat;
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.embed.dim == 0 {
            return bad("embed.dim must be positive");
        }
        if self.retrieve.beam == 0 || self.retrieve.topk == 0 {
            return bad("retrieve.beam and retrieve.topk must be positive");
        }
        if self.train.epochs > 0 && !(self.train.indexing || self.train.retrieval) {
            return bad("train needs at least one of indexing and retrieval");
        }
        if !(self.train.lr > 0.0 && self.userrep.lr > 0.0) {
            return bad("learning rates must be positive");
        }
        self.synthetic().validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn sub_seed(&self, name: &str) -> u64 {
        derive_seed(self.seed, name)
    }

    pub fn synthetic(&self) -> SyntheticConfig {
        let d = &self.data;
        SyntheticConfig {
            stickers: d.stickers,
            ips: d.ips,
            entities: d.entities,
            styles: d.styles,
            ocr_concepts: d.ocr_concepts,
            meaning_concepts: d.meaning_concepts,
            synonyms: d.synonyms,
            ip_sets: d.ip_sets,
            preference: SyntheticConfig::planted_preference(d.ip_sets.max(1), d.preference_strength),
            intent_mix: SyntheticConfig::uniform_intents(),
            compound_rate: d.compound_rate,
            train_pairs: d.train_pairs,
            test_pairs: d.test_pairs,
            positives_per_pair: d.positives_per_pair,
            click_logs: d.click_logs,
            embed_dim: self.embed.dim,
            synonym_noise: d.synonym_noise,
            seed: self.sub_seed("data"),
        }
    }

    pub fn scheme(&self) -> SchemeConfig {
        let i = &self.index;
        SchemeConfig {
            scheme: i.scheme,
            m: i.m,
            k: i.k,
            seed: self.sub_seed("index"),
            max_steps: i.max_steps,
            cap_k: i.cap_k,
        }
    }

    pub fn userrep_config(&self) -> UserRepConfig {
        let u = &self.userrep;
        UserRepConfig {
            dim: self.embed.dim,
            hidden: u.hidden,
            lr: u.lr,
            batch: u.batch,
            steps: u.steps,
            seed: self.sub_seed("userrep"),
            tasks: u.tasks.set(),
        }
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape { dim: self.embed.dim, ff: self.model.ff, max_len: self.model.max_len }
    }

    pub fn training(&self) -> TrainingConfig {
        let t = &self.train;
        TrainingConfig {
            optimizer: match t.optimizer {
                OptimizerKind::Adamw => OptimizerConfig::adamw(t.lr),
                OptimizerKind::Sgd => OptimizerConfig::sgd(t.lr),
            },
            batch_tokens: t.batch_tokens,
            epochs: t.epochs,
            seed: self.sub_seed("train"),
            use_user_embedding: t.use_user_embedding,
            use_intent_loss: t.use_intent_loss,
            indexing: t.indexing,
            retrieval: t.retrieval,
        }
    }

    pub fn retrieve_config(&self) -> RetrieveConfig {
        let r = &self.retrieve;
        RetrieveConfig { beam: r.beam, topk: r.topk, max_steps: self.index.max_steps, mode: r.mode, depth: r.depth }
    }

    pub fn online_config(&self) -> OnlineConfig {
        let o = &self.online;
        OnlineConfig {
            sessions: o.sessions,
            list_len: 10,
            bootstrap: o.bootstrap,
            clicks: ClickModelConfig {
                offset: o.examination_offset,
                relevant_click: o.relevant_click,
                irrelevant_click: o.irrelevant_click,
                seed: self.sub_seed("online"),
            },
        }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_partial_files() {
        let c = RunConfig::default();
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        let partial: RunConfig = toml::from_str("seed = 3\n[index]\nscheme = \"rq\"\n").unwrap();
        assert_eq!(partial.seed, 3);
        assert_eq!(partial.index.scheme, Scheme::Rq);
        assert_eq!(partial.index.m, 8);
        assert!(toml::from_str::<RunConfig>("sede = 3\n").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn variants_are_config_diffs() {
        let c = RunConfig::default();
        assert!(!c.clone().with_variant(Variant::NoUe).train.use_user_embedding);
        let ig = c.with_variant(Variant::NoIg);
        assert!(!ig.train.use_intent_loss);
        assert_eq!(ig.retrieve.mode, Mode::Flat);
    }
}
