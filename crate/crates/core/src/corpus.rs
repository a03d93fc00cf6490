//! Stickers, user groups, click logs and labeled triplets.
//!
//! [`generate_synthetic`] builds a desk-scale benchmark with planted
//! structure: every user group prefers one subset of character IPs, every
//! query carries a ground-truth intent ranking, and OCR/meaning words come in
//! synonym clusters whose embeddings sit close together.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::intent::IntentRanking;
use crate::rng::{normal, rng_for, ChaCha8Rng};
use crate::text::normalize;
use crate::{math, Property};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CorpusError {
    #[error("duplicate sticker id {0:?}")]
    DuplicateId(String),
    #[error("unknown sticker id {0:?}")]
    UnknownSticker(String),
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error("unknown user group {0:?}")]
    UnknownGroup(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Sticker {
    #[serde(rename = "id")]
    pub sticker_id: String,
    pub ocr: String,
    pub ip: String,
    pub entity: String,
    pub style: String,
    pub meaning: String,
}

impl Sticker {
    pub fn property(&self, p: Property) -> &str {
        match p {
            Property::Ocr => &self.ocr,
            Property::Ip => &self.ip,
            Property::Entity => &self.entity,
            Property::Style => &self.style,
            Property::Meaning => &self.meaning,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgeBucket {
    #[serde(rename = "0-19")]
    Under20,
    #[serde(rename = "20-29")]
    Twenties,
    #[serde(rename = "30-44")]
    Thirties,
    #[serde(rename = "45-59")]
    Older,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

/// Age bucket × gender cohort. There are exactly [`UserGroup::COUNT`] groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UserGroup {
    pub age: AgeBucket,
    pub gender: Gender,
}

const AGES: [AgeBucket; 4] = [AgeBucket::Under20, AgeBucket::Twenties, AgeBucket::Thirties, AgeBucket::Older];

impl UserGroup {
    pub const COUNT: usize = 8;

    pub fn all() -> [UserGroup; 8] {
        core::array::from_fn(UserGroup::from_index)
    }

    pub fn index(self) -> usize {
        let a = AGES.iter().position(|x| *x == self.age).unwrap();
        a * 2 + usize::from(self.gender == Gender::Female)
    }

    /// Panics for `i >= 8`.
    pub fn from_index(i: usize) -> UserGroup {
        assert!(i < Self::COUNT, "group index {i}");
        let gender = if i % 2 == 0 { Gender::Male } else { Gender::Female };
        UserGroup { age: AGES[i / 2], gender }
    }

    /// Special-token spelling, e.g. `<g:20-29:f>`.
    pub fn token(self) -> String {
        let age = match self.age {
            AgeBucket::Under20 => "0-19",
            AgeBucket::Twenties => "20-29",
            AgeBucket::Thirties => "30-44",
            AgeBucket::Older => "45-59",
        };
        let g = match self.gender {
            Gender::Male => 'm',
            Gender::Female => 'f',
        };
        format!("<g:{age}:{g}>")
    }

    pub fn from_token(s: &str) -> Result<UserGroup, CorpusError> {
        UserGroup::all()
            .into_iter()
            .find(|g| g.token() == s)
            .ok_or_else(|| CorpusError::UnknownGroup(s.to_string()))
    }
}

impl fmt::Display for UserGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.token())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub group: UserGroup,
    pub ip_history: BTreeSet<String>,
    pub entity_history: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickLogRecord {
    pub profile: UserProfile,
    pub query: String,
    pub sticker_id: String,
    pub clicked: bool,
}

/// A positive (group, query, sticker) judgment used for training.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triplet {
    pub group: UserGroup,
    pub query: String,
    pub sticker_id: String,
}

/// Evaluation container: all relevant stickers for one (group, query).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryJudgments {
    pub group: UserGroup,
    pub query: String,
    pub relevant_ids: BTreeSet<String>,
}

/// Ground-truth intent recorded by the generator for one query text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryIntent {
    pub query: String,
    pub ranking: IntentRanking,
}

/// Immutable sticker collection with unique ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    stickers: Vec<Sticker>,
    by_id: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CorpusStats {
    pub stickers: usize,
    pub distinct_ips: usize,
    pub distinct_entities: usize,
    pub distinct_styles: usize,
    /// Empty property values, per property in canonical order.
    pub empty_fields: [usize; 5],
}

impl Corpus {
    pub fn from_stickers(stickers: Vec<Sticker>) -> Result<Corpus, CorpusError> {
        let mut by_id = BTreeMap::new();
        for (i, s) in stickers.iter().enumerate() {
            if by_id.insert(s.sticker_id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId(s.sticker_id.clone()));
            }
        }
        Ok(Corpus { stickers, by_id })
    }

    pub fn stickers(&self) -> &[Sticker] {
        &self.stickers
    }

    pub fn len(&self) -> usize {
        self.stickers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stickers.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Sticker> {
        self.by_id.get(id).map(|&i| &self.stickers[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn stats(&self) -> CorpusStats {
        let distinct = |p: Property| {
            self.stickers.iter().map(|s| s.property(p)).filter(|v| !v.is_empty()).collect::<BTreeSet<_>>().len()
        };
        let mut empty_fields = [0; 5];
        for s in &self.stickers {
            for p in crate::PROPERTIES {
                if s.property(p).trim().is_empty() {
                    empty_fields[p.index()] += 1;
                }
            }
        }
        CorpusStats {
            stickers: self.stickers.len(),
            distinct_ips: distinct(Property::Ip),
            distinct_entities: distinct(Property::Entity),
            distinct_styles: distinct(Property::Style),
            empty_fields,
        }
    }

    pub fn check_resolves(&self, id: &str) -> Result<(), CorpusError> {
        if self.by_id.contains_key(id) {
            Ok(())
        } else {
            Err(CorpusError::UnknownSticker(id.to_string()))
        }
    }

    pub fn validate_logs(&self, logs: &[ClickLogRecord]) -> Result<(), CorpusError> {
        logs.iter().try_for_each(|r| self.check_resolves(&r.sticker_id))
    }

    pub fn validate_triplets(&self, triplets: &[Triplet]) -> Result<(), CorpusError> {
        triplets.iter().try_for_each(|t| self.check_resolves(&t.sticker_id))
    }

    pub fn validate_judgments(&self, judgments: &[QueryJudgments]) -> Result<(), CorpusError> {
        judgments.iter().flat_map(|j| j.relevant_ids.iter()).try_for_each(|id| self.check_resolves(id))
    }
}

/// Knobs of the synthetic benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub stickers: usize,
    pub ips: usize,
    pub entities: usize,
    pub styles: usize,
    pub ocr_concepts: usize,
    pub meaning_concepts: usize,
    /// Surface words per OCR/meaning concept.
    pub synonyms: usize,
    /// Number of IP subsets groups can prefer; IPs are split round-robin.
    pub ip_sets: usize,
    /// `8 x ip_sets` row-stochastic matrix; row `g` is group `g`'s preference.
    pub preference: Vec<Vec<f64>>,
    /// `8 x 5` row-stochastic matrix over top intents (canonical order o,c,e,v,m).
    pub intent_mix: Vec<Vec<f64>>,
    /// Probability that a query carries a second component.
    pub compound_rate: f64,
    pub train_pairs: usize,
    pub test_pairs: usize,
    pub positives_per_pair: usize,
    pub click_logs: usize,
    /// Dimension of the planted concept embeddings.
    pub embed_dim: usize,
    /// Noise scale of a synonym around its concept center.
    pub synonym_noise: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    /// Planted opposite preferences: group `g` puts `strength` on IP set
    /// `g % ip_sets` and spreads the rest uniformly.
    pub fn planted_preference(ip_sets: usize, strength: f64) -> Vec<Vec<f64>> {
        (0..UserGroup::COUNT)
            .map(|g| {
                let rest = if ip_sets > 1 { (1.0 - strength) / (ip_sets - 1) as f64 } else { 0.0 };
                (0..ip_sets).map(|s| if s == g % ip_sets { strength } else { rest }).collect()
            })
            .collect()
    }

    /// Uniform top-intent mixture for every group.
    pub fn uniform_intents() -> Vec<Vec<f64>> {
        vec![vec![0.2; 5]; UserGroup::COUNT]
    }

    pub fn with_stickers(stickers: usize, seed: u64) -> SyntheticConfig {
        SyntheticConfig { stickers, seed, ..SyntheticConfig::default() }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: String| Err(CorpusError::Config(m));
        if self.stickers == 0 {
            return bad("sticker count must be positive".into());
        }
        for (name, n) in [
            ("ips", self.ips),
            ("entities", self.entities),
            ("styles", self.styles),
            ("ocr_concepts", self.ocr_concepts),
            ("meaning_concepts", self.meaning_concepts),
            ("synonyms", self.synonyms),
            ("ip_sets", self.ip_sets),
            ("embed_dim", self.embed_dim),
        ] {
            if n == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.ip_sets > self.ips {
            return bad(format!("ip_sets ({}) exceeds ips ({})", self.ip_sets, self.ips));
        }
        check_stochastic("preference", &self.preference, self.ip_sets)?;
        check_stochastic("intent_mix", &self.intent_mix, 5)?;
        if !(0.0..=1.0).contains(&self.compound_rate) {
            return bad("compound_rate must lie in [0, 1]".into());
        }
        Ok(())
    }
}

fn check_stochastic(name: &str, m: &[Vec<f64>], width: usize) -> Result<(), CorpusError> {
    if m.len() != UserGroup::COUNT {
        return Err(CorpusError::Config(format!("{name} needs {} rows, got {}", UserGroup::COUNT, m.len())));
    }
    for (g, row) in m.iter().enumerate() {
        if row.len() != width {
            return Err(CorpusError::Config(format!("{name} row {g} has {} entries, expected {width}", row.len())));
        }
        if row.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(CorpusError::Config(format!("{name} row {g} has a negative or non-finite entry")));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CorpusError::Config(format!("{name} row {g} sums to {sum}, not 1")));
        }
    }
    Ok(())
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            stickers: 1000,
            ips: 24,
            entities: 20,
            styles: 8,
            ocr_concepts: 40,
            meaning_concepts: 30,
            synonyms: 3,
            ip_sets: 4,
            preference: SyntheticConfig::planted_preference(4, 0.9),
            intent_mix: SyntheticConfig::uniform_intents(),
            compound_rate: 0.5,
            train_pairs: 600,
            test_pairs: 120,
            positives_per_pair: 3,
            click_logs: 2000,
            embed_dim: 64,
            synonym_noise: 0.35,
            seed: 7,
        }
    }
}

/// Everything the generator emits.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub corpus: Corpus,
    pub click_logs: Vec<ClickLogRecord>,
    pub triplets: Vec<Triplet>,
    /// Judgments for the training pairs (all relevant stickers).
    pub train_judgments: Vec<QueryJudgments>,
    pub test_judgments: Vec<QueryJudgments>,
    /// Ground-truth ranking for every distinct query text.
    pub intents: Vec<QueryIntent>,
    /// Planted word embeddings for the synonym clusters.
    pub embeddings: Vec<(String, Vec<f64>)>,
    /// IP names per preference set.
    pub ip_sets: Vec<Vec<String>>,
}

/// Hidden attributes of a generated sticker.
#[derive(Debug, Clone, Copy)]
struct Latent {
    ocr: usize,
    ip: usize,
    entity: usize,
    style: usize,
    meaning: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Component {
    Ocr(usize),
    Ip(usize),
    Entity(usize),
    Style(usize),
    Meaning(usize),
}

impl Component {
    fn property(self) -> Property {
        match self {
            Component::Ocr(_) => Property::Ocr,
            Component::Ip(_) => Property::Ip,
            Component::Entity(_) => Property::Entity,
            Component::Style(_) => Property::Style,
            Component::Meaning(_) => Property::Meaning,
        }
    }

    fn matches(self, l: &Latent) -> bool {
        match self {
            Component::Ocr(c) => l.ocr == c,
            Component::Ip(c) => l.ip == c,
            Component::Entity(c) => l.entity == c,
            Component::Style(c) => l.style == c,
            Component::Meaning(c) => l.meaning == c,
        }
    }
}

struct Lexicon {
    ips: Vec<String>,
    entities: Vec<String>,
    styles: Vec<String>,
    ocr: Vec<Vec<String>>,
    meaning: Vec<Vec<String>>,
}

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch", "sh"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];

fn fresh_word(rng: &mut ChaCha8Rng, used: &mut BTreeSet<String>) -> String {
    loop {
        let syllables = rng.gen_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS[rng.gen_range(0..ONSETS.len())]);
            w.push_str(VOWELS[rng.gen_range(0..VOWELS.len())]);
        }
        if used.insert(w.clone()) {
            return w;
        }
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
    let n = math::norm(&v);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn sample_index(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

struct Generator<'a> {
    cfg: &'a SyntheticConfig,
    lex: Lexicon,
    latents: Vec<Latent>,
    ids: Vec<String>,
}

struct GeneratedQuery {
    text: String,
    ranking: IntentRanking,
    matches: Vec<usize>,
}

impl Generator<'_> {
    fn ip_set(&self, ip: usize) -> usize {
        ip % self.cfg.ip_sets
    }

    fn preferred_set(&self, g: UserGroup) -> usize {
        let row = &self.cfg.preference[g.index()];
        let mut best = 0;
        for (i, w) in row.iter().enumerate() {
            if *w > row[best] {
                best = i;
            }
        }
        best
    }

    fn pick_in_set(&self, rng: &mut ChaCha8Rng, set: usize) -> usize {
        let members: Vec<usize> = (0..self.cfg.ips).filter(|i| self.ip_set(*i) == set).collect();
        *members.choose(rng).unwrap()
    }

    fn component_text(&self, rng: &mut ChaCha8Rng, c: Component) -> String {
        match c {
            Component::Ocr(i) => self.lex.ocr[i].choose(rng).unwrap().clone(),
            Component::Ip(i) => self.lex.ips[i].clone(),
            Component::Entity(i) => self.lex.entities[i].clone(),
            Component::Style(i) => self.lex.styles[i].clone(),
            Component::Meaning(i) => self.lex.meaning[i].choose(rng).unwrap().clone(),
        }
    }

    fn matching(&self, comps: &[Component]) -> Vec<usize> {
        (0..self.latents.len()).filter(|&i| comps.iter().all(|c| c.matches(&self.latents[i]))).collect()
    }

    /// Draws a query for `group`; the top component's property is sampled
    /// from the group's intent mixture and IPs follow its preference.
    fn query(&self, rng: &mut ChaCha8Rng, group: UserGroup) -> GeneratedQuery {
        loop {
            let top = Property::from_index(sample_index(rng, &self.cfg.intent_mix[group.index()])).unwrap();
            let cfg = self.cfg;
            let first = match top {
                Property::Ocr => Component::Ocr(rng.gen_range(0..cfg.ocr_concepts)),
                Property::Ip => {
                    let set = sample_index(rng, &cfg.preference[group.index()]);
                    Component::Ip(self.pick_in_set(rng, set))
                }
                Property::Entity => Component::Entity(rng.gen_range(0..cfg.entities)),
                Property::Style => Component::Style(rng.gen_range(0..cfg.styles)),
                Property::Meaning => Component::Meaning(rng.gen_range(0..cfg.meaning_concepts)),
            };
            let second = if rng.gen_bool(cfg.compound_rate) {
                match top {
                    Property::Ip | Property::Entity => Some(Component::Style(rng.gen_range(0..cfg.styles))),
                    Property::Style | Property::Meaning => Some(Component::Entity(rng.gen_range(0..cfg.entities))),
                    Property::Ocr => None,
                }
            } else {
                None
            };
            let mut comps = vec![first];
            comps.extend(second);
            let mut matches = self.matching(&comps);
            if matches.is_empty() {
                comps.truncate(1);
                matches = self.matching(&comps);
            }
            if matches.is_empty() {
                continue;
            }
            let words: Vec<String> = comps.iter().map(|c| self.component_text(rng, *c)).collect();
            let leading: Vec<Property> = comps.iter().map(|c| c.property()).collect();
            return GeneratedQuery { text: words.join(" "), ranking: IntentRanking::with_leading(&leading), matches };
        }
    }

    /// Matches whose IP lies in the group's preferred set, or all matches if none do.
    fn relevant(&self, group: UserGroup, matches: &[usize]) -> Vec<usize> {
        let pref = self.preferred_set(group);
        let inside: Vec<usize> =
            matches.iter().copied().filter(|&i| self.ip_set(self.latents[i].ip) == pref).collect();
        if inside.is_empty() {
            matches.to_vec()
        } else {
            inside
        }
    }

    /// Positive draw: choose an IP set from the group's preference row, then a
    /// matching sticker inside it (falling back to the preferred set, then to
    /// any match).
    fn sample_positive(&self, rng: &mut ChaCha8Rng, group: UserGroup, matches: &[usize]) -> usize {
        let set = sample_index(rng, &self.cfg.preference[group.index()]);
        let inside: Vec<usize> =
            matches.iter().copied().filter(|&i| self.ip_set(self.latents[i].ip) == set).collect();
        if let Some(&i) = inside.choose(rng) {
            return i;
        }
        *self.relevant(group, matches).choose(rng).unwrap()
    }

    fn sample_negative(&self, rng: &mut ChaCha8Rng, group: UserGroup, matches: &[usize]) -> usize {
        let pref = self.preferred_set(group);
        let off: Vec<usize> =
            matches.iter().copied().filter(|&i| self.ip_set(self.latents[i].ip) != pref).collect();
        if let Some(&i) = off.choose(rng) {
            return i;
        }
        loop {
            let i = rng.gen_range(0..self.latents.len());
            if !matches.contains(&i) || self.latents.len() == matches.len() {
                return i;
            }
        }
    }
}

/// Deterministic synthetic benchmark for a fixed config and seed.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticData, CorpusError> {
    cfg.validate()?;
    let root = cfg.seed;
    let mut rng = rng_for(root, "lexicon");
    let mut used = BTreeSet::new();
    let ips = (0..cfg.ips)
        .map(|_| {
            let a = fresh_word(&mut rng, &mut used);
            let b = fresh_word(&mut rng, &mut used);
            format!("{a} {b}")
        })
        .collect();
    let mut words = |n: usize| (0..n).map(|_| fresh_word(&mut rng, &mut used)).collect::<Vec<_>>();
    let entities = words(cfg.entities);
    let styles = words(cfg.styles);
    let ocr: Vec<Vec<String>> = (0..cfg.ocr_concepts).map(|_| words(cfg.synonyms)).collect();
    let meaning: Vec<Vec<String>> = (0..cfg.meaning_concepts).map(|_| words(cfg.synonyms)).collect();
    let lex = Lexicon { ips, entities, styles, ocr, meaning };

    let mut erng = rng_for(root, "embeddings");
    let mut embeddings = Vec::new();
    for cluster in lex.ocr.iter().chain(&lex.meaning) {
        let center = unit_vector(&mut erng, cfg.embed_dim);
        for w in cluster {
            let mut v: Vec<f64> =
                center.iter().map(|c| c + cfg.synonym_noise * normal(&mut erng) / math::sqrt(cfg.embed_dim as f64)).collect();
            let n = math::norm(&v);
            v.iter_mut().for_each(|x| *x /= n);
            embeddings.push((w.clone(), v));
        }
    }

    let mut srng = rng_for(root, "stickers");
    let width = digits(cfg.stickers);
    let mut stickers = Vec::with_capacity(cfg.stickers);
    let mut latents = Vec::with_capacity(cfg.stickers);
    let mut ids = Vec::with_capacity(cfg.stickers);
    for i in 0..cfg.stickers {
        let l = Latent {
            ocr: srng.gen_range(0..cfg.ocr_concepts),
            ip: srng.gen_range(0..cfg.ips),
            entity: srng.gen_range(0..cfg.entities),
            style: srng.gen_range(0..cfg.styles),
            meaning: srng.gen_range(0..cfg.meaning_concepts),
        };
        let mut ocr_words = vec![lex.ocr[l.ocr].choose(&mut srng).unwrap().clone()];
        for _ in 0..srng.gen_range(0..=2) {
            let other = srng.gen_range(0..cfg.ocr_concepts);
            ocr_words.push(lex.ocr[other].choose(&mut srng).unwrap().clone());
        }
        let n_mean = srng.gen_range(1..=2).min(cfg.synonyms);
        let mut mean_words: Vec<String> = lex.meaning[l.meaning].clone();
        mean_words.shuffle(&mut srng);
        mean_words.truncate(n_mean);
        let id = format!("s{:0width$}", i, width = width);
        stickers.push(Sticker {
            sticker_id: id.clone(),
            ocr: ocr_words.join(" "),
            ip: lex.ips[l.ip].clone(),
            entity: lex.entities[l.entity].clone(),
            style: lex.styles[l.style].clone(),
            meaning: mean_words.join(" "),
        });
        latents.push(l);
        ids.push(id);
    }
    let corpus = Corpus::from_stickers(stickers)?;
    let gen = Generator { cfg, lex, latents, ids };

    let mut intents: BTreeMap<String, IntentRanking> = BTreeMap::new();
    let mut record_intent = |q: &GeneratedQuery| {
        intents.entry(normalize(&q.text)).or_insert(q.ranking);
    };

    let mut trng = rng_for(root, "train");
    let mut triplets = Vec::new();
    let mut train_judgments = Vec::new();
    for _ in 0..cfg.train_pairs {
        let group = UserGroup::from_index(trng.gen_range(0..UserGroup::COUNT));
        let q = gen.query(&mut trng, group);
        record_intent(&q);
        let mut chosen = BTreeSet::new();
        for _ in 0..cfg.positives_per_pair {
            chosen.insert(gen.sample_positive(&mut trng, group, &q.matches));
        }
        for i in &chosen {
            triplets.push(Triplet { group, query: q.text.clone(), sticker_id: gen.ids[*i].clone() });
        }
        train_judgments.push(QueryJudgments {
            group,
            query: q.text.clone(),
            relevant_ids: gen.relevant(group, &q.matches).iter().map(|i| gen.ids[*i].clone()).collect(),
        });
    }

    let mut qrng = rng_for(root, "test");
    let mut test_judgments = Vec::new();
    for _ in 0..cfg.test_pairs {
        let group = UserGroup::from_index(qrng.gen_range(0..UserGroup::COUNT));
        let q = gen.query(&mut qrng, group);
        record_intent(&q);
        test_judgments.push(QueryJudgments {
            group,
            query: q.text.clone(),
            relevant_ids: gen.relevant(group, &q.matches).iter().map(|i| gen.ids[*i].clone()).collect(),
        });
    }

    let mut crng = rng_for(root, "clicks");
    let mut click_logs = Vec::with_capacity(cfg.click_logs);
    for n in 0..cfg.click_logs {
        // Cycle through groups so every group has log records.
        let group = UserGroup::from_index(n % UserGroup::COUNT);
        let q = gen.query(&mut crng, group);
        record_intent(&q);
        let clicked = crng.gen_bool(0.5);
        let idx = if clicked {
            gen.sample_positive(&mut crng, group, &q.matches)
        } else {
            gen.sample_negative(&mut crng, group, &q.matches)
        };
        let mut ip_history = BTreeSet::new();
        for _ in 0..3 {
            let set = sample_index(&mut crng, &cfg.preference[group.index()]);
            ip_history.insert(gen.lex.ips[gen.pick_in_set(&mut crng, set)].clone());
        }
        let entity_history =
            (0..3).map(|_| gen.lex.entities[crng.gen_range(0..cfg.entities)].clone()).collect();
        click_logs.push(ClickLogRecord {
            profile: UserProfile { group, ip_history, entity_history },
            query: q.text,
            sticker_id: gen.ids[idx].clone(),
            clicked,
        });
    }

    let ip_sets = (0..cfg.ip_sets)
        .map(|s| (0..cfg.ips).filter(|i| gen.ip_set(*i) == s).map(|i| gen.lex.ips[i].clone()).collect())
        .collect();
    let intents = intents.into_iter().map(|(query, ranking)| QueryIntent { query, ranking }).collect();
    Ok(SyntheticData {
        corpus,
        click_logs,
        triplets,
        train_judgments,
        test_judgments,
        intents,
        embeddings,
        ip_sets,
    })
}

fn digits(n: usize) -> usize {
    let mut d = 1;
    let mut x = n.saturating_sub(1);
    while x >= 10 {
        x /= 10;
        d += 1;
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticConfig {
        SyntheticConfig { stickers: 120, train_pairs: 40, test_pairs: 10, click_logs: 80, ..SyntheticConfig::default() }
    }

    #[test]
    fn groups_round_trip_through_tokens() {
        let all = UserGroup::all();
        let tokens: BTreeSet<String> = all.iter().map(|g| g.token()).collect();
        assert_eq!(tokens.len(), 8);
        for (i, g) in all.iter().enumerate() {
            assert_eq!(g.index(), i);
            assert_eq!(UserGroup::from_token(&g.token()).unwrap(), *g);
        }
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let s = Sticker { sticker_id: "s1".into(), ..Default::default() };
        let err = Corpus::from_stickers(vec![s.clone(), s]).unwrap_err();
        assert_eq!(err, CorpusError::DuplicateId("s1".into()));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SyntheticConfig { seed: 8, ..small() }).unwrap();
        assert_ne!(a.corpus, c.corpus);
    }

    #[test]
    fn everything_resolves() {
        let d = generate_synthetic(&small()).unwrap();
        d.corpus.validate_logs(&d.click_logs).unwrap();
        d.corpus.validate_triplets(&d.triplets).unwrap();
        d.corpus.validate_judgments(&d.test_judgments).unwrap();
        assert!(d.test_judgments.iter().all(|j| !j.relevant_ids.is_empty()));
        for g in UserGroup::all() {
            assert!(d.click_logs.iter().any(|r| r.profile.group == g));
        }
        let stats = d.corpus.stats();
        assert_eq!(stats.stickers, 120);
        assert!(stats.distinct_ips <= 24);
    }

    #[test]
    fn config_errors() {
        assert!(matches!(generate_synthetic(&SyntheticConfig::with_stickers(0, 7)), Err(CorpusError::Config(_))));
        let mut cfg = small();
        cfg.preference[3][0] += 1e-6;
        assert!(matches!(generate_synthetic(&cfg), Err(CorpusError::Config(_))));
    }
}

