//! Query intent: which sticker property a query is really about.
//!
//! An [`IntentRanking`] orders the five properties from most to least
//! likely intent. Rankings come from an LLM prompted with a chain-of-thought
//! template, from a precomputed [`IntentTable`], or from a lexicon-matching
//! rule detector that needs no network.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::math::rank_decay;
use crate::text::{normalize, tokenize};
use crate::{Property, PROPERTIES};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IntentError {
    #[error("intent ranking is not a permutation of o,c,e,v,m: {0}")]
    NotPermutation(String),
    #[error("no intent chain found in response")]
    MissingChain,
    #[error("unknown intent name {0:?}")]
    UnknownName(String),
    #[error("transport failed after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("no intent ranking for query {0:?}")]
    Missing(String),
}

/// A permutation of the five properties, most likely intent first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct IntentRanking([Property; 5]);

impl IntentRanking {
    pub fn new(order: &[Property]) -> Result<IntentRanking, IntentError> {
        let describe = || order.iter().map(|p| p.symbol()).collect::<String>();
        if order.len() != 5 {
            return Err(IntentError::NotPermutation(describe()));
        }
        let mut seen = [false; 5];
        for p in order {
            if core::mem::replace(&mut seen[p.index()], true) {
                return Err(IntentError::NotPermutation(describe()));
            }
        }
        let mut out = [Property::Ocr; 5];
        out.copy_from_slice(order);
        Ok(IntentRanking(out))
    }

    /// Parses the 5-symbol form, e.g. `"cvemo"`.
    pub fn from_symbols(s: &str) -> Result<IntentRanking, IntentError> {
        let props: Option<Vec<Property>> = s.trim().chars().map(Property::from_symbol).collect();
        match props {
            Some(p) => IntentRanking::new(&p),
            None => Err(IntentError::NotPermutation(s.to_string())),
        }
    }

    pub fn symbols(&self) -> String {
        self.0.iter().map(|p| p.symbol()).collect()
    }

    pub fn order(&self) -> &[Property; 5] {
        &self.0
    }

    pub fn top(&self) -> Property {
        self.0[0]
    }

    /// 1-based position of `p`.
    pub fn rank(&self, p: Property) -> usize {
        self.0.iter().position(|q| *q == p).unwrap() + 1
    }

    /// Decay weight `1 / log2(rank(p) + 1)`.
    pub fn decay(&self, p: Property) -> f64 {
        rank_decay(self.rank(p))
    }

    /// Fallback order used when nothing is known: `m, o, c, e, v`.
    pub fn default_order() -> IntentRanking {
        IntentRanking([Property::Meaning, Property::Ocr, Property::Ip, Property::Entity, Property::Style])
    }

    /// Puts `leading` first (in the given order) followed by the remaining
    /// properties in the default tie order.
    pub fn with_leading(leading: &[Property]) -> IntentRanking {
        let mut order: Vec<Property> = Vec::with_capacity(5);
        for p in leading {
            if !order.contains(p) {
                order.push(*p);
            }
        }
        for p in IntentRanking::default_order().0 {
            if !order.contains(&p) {
                order.push(p);
            }
        }
        IntentRanking::new(&order).expect("complete permutation")
    }
}

impl fmt::Display for IntentRanking {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.symbols())
    }
}

impl TryFrom<String> for IntentRanking {
    type Error = IntentError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        IntentRanking::from_symbols(&s)
    }
}

impl From<IntentRanking> for String {
    fn from(r: IntentRanking) -> String {
        r.symbols()
    }
}

/// Few-shot examples inserted for each intent in the prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptExamples {
    pub ocr: Vec<String>,
    pub ip: Vec<String>,
    pub entity: Vec<String>,
    pub style: Vec<String>,
    pub meaning: Vec<String>,
}

impl Default for PromptExamples {
    fn default() -> Self {
        let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        PromptExamples {
            ocr: v(&["good morning", "thank you boss", "on my way"]),
            ip: v(&["Doraemon", "SpongeBob", "Pikachu"]),
            entity: v(&["cat", "coffee", "rabbit"]),
            style: v(&["pixel art", "hand-drawn", "cute"]),
            meaning: v(&["feeling tired", "celebration", "apology"]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub text: String,
    /// Set when the query was empty after trimming.
    pub empty_query: bool,
}

/// Fills the chain-of-thought intent template for `query`.
pub fn build_prompt(query: &str, examples: &PromptExamples) -> Prompt {
    let ex = |xs: &[String]| xs.join(", ");
    let q = query.trim();
    let text = format!(
        "I am a user who is using the sticker search feature, and I have entered a query. Please help me analyze the intent behind my query.\n\
There are five possible intents: OCR, IP, entity, style, and meaning. Here are the descriptions and examples for each intent.\n\
OCR textual content refers to the text extracted from the sticker using Optical Character Recognition (OCR) technology.\n\
Examples: {ocr}\n\
Character IP refers to Intellectual Property (IP) related to the characters depicted on the sticker, which could be a well-known character from a movie, TV show, comic book, video game, or any other form of media.\n\
Examples: {ip}\n\
Entity refers to the specific object, symbol, or concept that is primarily depicted in the sticker.\n\
Examples: {entity}\n\
Visual style refers to the specific artistic style that the sticker's design follows.\n\
Examples: {style}\n\
Meaning refers to the intended message, sentiment, or symbolism that the sticker is designed to convey, which is typically provided by the source of the sticker.\n\
Examples: {meaning}\n\
Q: Based on the given explanation, arrange the order of intent for the query: Doraemon cute.\n\
A: Let's think step by step. \"Doraemon cute\" is most likely to be an IP intent in OCR, IP, entity, style, meaning, because Doraemon is a well-known anime character. Excluding the IP intent, among the remaining OCR, entity, style, meaning, \"Doraemon cute\" is most likely to be a style intent, because the query includes the style description \"cute\". Excluding IP and style intents, among the remaining OCR, entity, meaning, \"Doraemon cute\" is most likely to be an entity intent, because Doraemon is a specific character. Excluding IP, style, and entity intents, among the remaining OCR and meaning, \"Doraemon cute\" is most likely to be a meaning intent, because \"Doraemon cute\" can be understood as a certain meaning. \"Doraemon cute\" is least likely to be an OCR intent, because it is not an image or video with text content. Therefore, the answer is: IP > style > entity > meaning > OCR.\n\
Q: Based on the given explanation, arrange the order of intent for the query: {q}\n\
A: Let's think step by step.",
        ocr = ex(&examples.ocr),
        ip = ex(&examples.ip),
        entity = ex(&examples.entity),
        style = ex(&examples.style),
        meaning = ex(&examples.meaning),
    );
    Prompt { text, empty_query: q.is_empty() }
}

fn intent_name(name: &str) -> Option<Property> {
    let cleaned: String = name
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect::<String>()
        .to_lowercase();
    let cleaned = cleaned.split_whitespace().collect::<Vec<_>>().join(" ");
    match cleaned.as_str() {
        "ocr" | "ocr textual content" | "ocr text" | "text" => Some(Property::Ocr),
        "ip" | "character ip" | "character" => Some(Property::Ip),
        "entity" => Some(Property::Entity),
        "style" | "visual style" => Some(Property::Style),
        "meaning" => Some(Property::Meaning),
        _ => None,
    }
}

/// Extracts the last `A > B > C > D > E` chain from an LLM answer.
pub fn parse_llm_ranking(response: &str) -> Result<IntentRanking, IntentError> {
    let segment = response
        .split(|c| matches!(c, ':' | '\n' | '.' | ';' | '!' | '?' | ','))
        .filter(|s| s.contains('>'))
        .last()
        .ok_or(IntentError::MissingChain)?;
    let mut order = Vec::with_capacity(5);
    for part in segment.split('>') {
        let part = part.trim();
        let p = intent_name(part).ok_or_else(|| IntentError::UnknownName(part.to_string()))?;
        order.push(p);
    }
    IntentRanking::new(&order)
}

/// Normalized property vocabularies used by the rule detector.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Lexicons {
    pub ips: BTreeSet<String>,
    pub entities: BTreeSet<String>,
    pub styles: BTreeSet<String>,
}

impl Lexicons {
    pub fn from_corpus(corpus: &Corpus) -> Lexicons {
        let mut lex = Lexicons::default();
        for s in corpus.stickers() {
            let put = |set: &mut BTreeSet<String>, text: &str| {
                let n = normalize(text);
                if !n.is_empty() {
                    set.insert(n);
                }
            };
            put(&mut lex.ips, &s.ip);
            put(&mut lex.entities, &s.entity);
            put(&mut lex.styles, &s.style);
        }
        lex
    }
}

/// Number of query tokens covered by lexicon entries that occur as
/// contiguous token runs in the query.
fn lexicon_hits(query: &[String], lexicon: &BTreeSet<String>) -> f64 {
    let mut covered = alloc::vec![false; query.len()];
    for entry in lexicon {
        let toks: Vec<&str> = entry.split(' ').collect();
        if toks.is_empty() || toks.len() > query.len() {
            continue;
        }
        for start in 0..=query.len() - toks.len() {
            if toks.iter().zip(&query[start..]).all(|(a, b)| *a == b.as_str()) {
                covered[start..start + toks.len()].iter_mut().for_each(|c| *c = true);
            }
        }
    }
    covered.iter().filter(|c| **c).count() as f64
}

/// Mass given to the meaning intent when nothing else matches.
pub const DEFAULT_MEANING_MASS: f64 = 0.5;
/// Token count from which an unmatched query reads as literal sticker text.
pub const LONG_QUERY_TOKENS: usize = 4;

/// Deterministic lexicon-based ranking.
///
/// IP, entity and style score the number of query tokens matched by their
/// lexicons; OCR scores 1 for quoted or long queries; meaning gets a fixed
/// default mass. Ties follow `m > o > c > e > v`.
pub fn detect_rule_based(query: &str, lexicons: &Lexicons) -> IntentRanking {
    let toks = tokenize(query);
    let quoted = query.contains('"') || query.contains('\u{201c}') || query.contains('\'');
    let c = lexicon_hits(&toks, &lexicons.ips);
    let e = lexicon_hits(&toks, &lexicons.entities);
    let v = lexicon_hits(&toks, &lexicons.styles);
    let o = if quoted || toks.len() >= LONG_QUERY_TOKENS { 1.0 } else { 0.0 };
    let m = DEFAULT_MEANING_MASS;
    let mut scored = [
        (m, Property::Meaning),
        (o, Property::Ocr),
        (c, Property::Ip),
        (e, Property::Entity),
        (v, Property::Style),
    ];
    // Stable sort keeps the tie order of the array above.
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let order: Vec<Property> = scored.iter().map(|(_, p)| *p).collect();
    IntentRanking::new(&order).unwrap()
}

/// Precomputed `query → ranking` map with normalized keys.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IntentTable {
    entries: BTreeMap<String, IntentRanking>,
}

impl IntentTable {
    pub fn new() -> IntentTable {
        IntentTable::default()
    }

    pub fn get(&self, query: &str) -> Option<IntentRanking> {
        self.entries.get(&normalize(query)).copied()
    }

    /// Inserts unless the key exists; returns whether the table grew.
    pub fn insert(&mut self, query: &str, ranking: IntentRanking) -> bool {
        let key = normalize(query);
        if self.entries.contains_key(&key) {
            return false;
        }
        self.entries.insert(key, ranking);
        true
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &IntentRanking)> {
        self.entries.iter()
    }
}

/// Something that can rank intents for a query, e.g. an LLM client.
pub trait IntentDetector {
    fn detect(&self, query: &str) -> Result<IntentRanking, IntentError>;
}

/// The rule detector as an [`IntentDetector`].
#[derive(Debug, Clone)]
pub struct RuleDetector {
    pub lexicons: Lexicons,
}

impl IntentDetector for RuleDetector {
    fn detect(&self, query: &str) -> Result<IntentRanking, IntentError> {
        Ok(detect_rule_based(query, &self.lexicons))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResolveMode {
    /// Table hit wins; on a miss ask the LLM when one is configured, else the rules.
    TableFirst,
    /// Always ask the LLM; unparsable answers fall back to the rules.
    Llm,
    /// Always run the rules.
    Rules,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntentSource {
    Table,
    Llm,
    Rules,
    /// LLM answered but the chain did not parse.
    RulesAfterParseFailure,
}

/// Resolves the ranking for `query` and caches it into `table`.
///
/// Transport failures of the LLM are returned as errors; parse failures fall
/// back to the rule detector.
pub fn resolve_intents(
    query: &str,
    table: &mut IntentTable,
    mode: ResolveMode,
    rules: &RuleDetector,
    llm: Option<&dyn IntentDetector>,
) -> Result<(IntentRanking, IntentSource), IntentError> {
    if mode == ResolveMode::TableFirst {
        if let Some(r) = table.get(query) {
            return Ok((r, IntentSource::Table));
        }
    }
    let use_llm = match mode {
        ResolveMode::Rules => false,
        ResolveMode::Llm => true,
        ResolveMode::TableFirst => llm.is_some(),
    };
    let (ranking, source) = if use_llm {
        let detector = llm.ok_or_else(|| IntentError::Transport {
            attempts: 0,
            message: "no LLM endpoint configured".to_string(),
        })?;
        match detector.detect(query) {
            Ok(r) => (r, IntentSource::Llm),
            Err(e @ IntentError::Transport { .. }) => return Err(e),
            Err(_) => (detect_rule_based(query, &rules.lexicons), IntentSource::RulesAfterParseFailure),
        }
    } else {
        (detect_rule_based(query, &rules.lexicons), IntentSource::Rules)
    };
    table.insert(query, ranking);
    Ok((ranking, source))
}

/// Every property in canonical order paired with its weight under `ranking`.
pub fn decay_weights(ranking: &IntentRanking) -> [(Property, f64); 5] {
    PROPERTIES.map(|p| (p, ranking.decay(p)))
}
