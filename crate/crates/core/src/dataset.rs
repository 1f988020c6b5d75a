//! Dataset construction: place ingestion, fact expansion, per-image QA
//! generation, three-layer verification, place-disjoint splitting and
//! composition reporting.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{
    validate_poi, validate_qa, Category, Clock, CotRecord, ImageKind, ImageRef, Modality, Money,
    Poi, PoiViolation, QaPair, Split, VlType,
};
use crate::text::{contains_phrase, normalize_text, stable_hash, word_count};

pub const DEFAULT_QUESTIONS_PER_FACT: usize = 5;
pub const QA_TYPES_PER_IMAGE: usize = 3;
pub const DEFAULT_TRAIN_RATIO: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fact {
    pub id: String,
    #[serde(default)]
    pub poi_id: Option<String>,
    pub text: String,
    pub source: String,
    /// Category for facts not tied to a place.
    #[serde(default)]
    pub category: Option<Category>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ForgeError {
    #[error("duplicate poi id {id:?} in records {first} and {second}")]
    DuplicateId { id: String, first: usize, second: usize },
    #[error("record {record} ({id}): {}", join_violations(.violations))]
    InvalidPoi { record: usize, id: String, violations: Vec<PoiViolation> },
    #[error("generator failed for {subject}: {message}")]
    Generator { subject: String, message: String, retriable: bool },
    #[error("{subject}: only {got} distinct questions of {wanted} after retries")]
    DuplicateQuestions { subject: String, wanted: usize, got: usize },
    #[error("questions per fact must be at least 1")]
    ZeroQuestions,
    #[error("image {uri:?} does not belong to poi {poi_id:?}")]
    ForeignImage { poi_id: String, uri: String },
    #[error("fact {fact_id:?} references unknown poi {poi_id:?}")]
    UnknownPoi { fact_id: String, poi_id: String },
    #[error("cannot split an empty place store")]
    EmptyStore,
    #[error("train ratio {0} must lie strictly between 0 and 1")]
    Ratio(f64),
}

fn join_violations(v: &[PoiViolation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Places indexed by id, city and category. Iteration is in id order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PoiStore {
    pois: BTreeMap<String, Poi>,
    by_city: BTreeMap<String, BTreeSet<String>>,
    by_category: BTreeMap<Category, BTreeSet<String>>,
}

impl PoiStore {
    /// Builds a store from `(record number, poi)` pairs, rejecting invalid
    /// records and duplicate ids.
    pub fn from_numbered<I>(records: I) -> Result<Self, ForgeError>
    where
        I: IntoIterator<Item = (usize, Poi)>,
    {
        let mut store = PoiStore::default();
        let mut first_seen: BTreeMap<String, usize> = BTreeMap::new();
        for (record, poi) in records {
            let verdict = validate_poi(&poi);
            if !verdict.is_ok() {
                return Err(ForgeError::InvalidPoi { record, id: poi.id, violations: verdict.violations });
            }
            if let Some(&first) = first_seen.get(&poi.id) {
                return Err(ForgeError::DuplicateId { id: poi.id, first, second: record });
            }
            first_seen.insert(poi.id.clone(), record);
            store.insert(poi);
        }
        Ok(store)
    }

    pub fn from_pois(pois: impl IntoIterator<Item = Poi>) -> Result<Self, ForgeError> {
        Self::from_numbered(pois.into_iter().enumerate().map(|(i, p)| (i + 1, p)))
    }

    fn insert(&mut self, poi: Poi) {
        self.by_city.entry(poi.city.clone()).or_default().insert(poi.id.clone());
        self.by_category.entry(poi.category.clone()).or_default().insert(poi.id.clone());
        self.pois.insert(poi.id.clone(), poi);
    }

    pub fn get(&self, id: &str) -> Option<&Poi> {
        self.pois.get(id)
    }

    pub fn len(&self) -> usize {
        self.pois.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pois.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Poi> {
        self.pois.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.pois.keys().map(String::as_str)
    }

    pub fn in_city<'a>(&'a self, city: &str) -> impl Iterator<Item = &'a Poi> + 'a {
        self.by_city.get(city).into_iter().flatten().filter_map(|id| self.pois.get(id))
    }

    pub fn in_category<'a>(&'a self, category: &Category) -> impl Iterator<Item = &'a Poi> + 'a {
        self.by_category.get(category).into_iter().flatten().filter_map(|id| self.pois.get(id))
    }

    pub fn cities(&self) -> impl Iterator<Item = &str> {
        self.by_city.keys().map(String::as_str)
    }

    /// Category of a QA record: its place's, else its own.
    pub fn category_of(&self, qa: &QaPair) -> Option<Category> {
        qa.poi_id
            .as_deref()
            .and_then(|id| self.get(id))
            .map(|p| p.category.clone())
            .or_else(|| qa.category.clone())
    }

    /// Subset containing only the given ids (unknown ids are ignored).
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> PoiStore {
        let mut out = PoiStore::default();
        for id in ids {
            if let Some(p) = self.get(id) {
                out.insert(p.clone());
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topic {
    Safety,
    Cost,
    Accessibility,
}

impl Topic {
    pub const ALL: [Topic; 3] = [Topic::Safety, Topic::Cost, Topic::Accessibility];

    fn slug(self) -> &'static str {
        match self {
            Topic::Safety => "safety",
            Topic::Cost => "cost",
            Topic::Accessibility => "accessibility",
        }
    }
}

/// Which prompt a generation request instantiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "template", content = "variant", rename_all = "snake_case")]
pub enum PromptTemplate {
    FactExpansion,
    VisionLanguage(VlType),
    Augmented(Topic),
}

#[derive(Debug, Clone, Copy)]
pub struct GenerationRequest<'a> {
    pub template: PromptTemplate,
    pub fact: Option<&'a Fact>,
    pub poi: Option<&'a Poi>,
    pub image: Option<&'a ImageRef>,
    /// How many outputs to return.
    pub n: usize,
    /// Index of the first output; lets deterministic generators continue a
    /// sequence on retry.
    pub offset: usize,
    pub attempt: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generated {
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GeneratorError {
    #[error("transient: {0}")]
    Transient(String),
    #[error("fatal: {0}")]
    Fatal(String),
}

/// Language-model boundary for question generation.
pub trait QuestionGenerator {
    fn generate(&mut self, req: &GenerationRequest<'_>) -> Result<Vec<Generated>, GeneratorError>;
}

/// Deterministic template generator used in place of a hosted model.
#[derive(Debug, Clone, Default)]
pub struct ReferenceGenerator;

const FACT_TEMPLATES: [&str; 8] = [
    "What is one thing worth knowing about {}?",
    "Which detail about {} do travel guides highlight?",
    "What do visitors often learn about {}?",
    "Could you share a travel tip about {}?",
    "What does a guidebook say about {}?",
    "What is notable about {} for a first-time visitor?",
    "What should I remember about {} before going?",
    "What is a key fact about {}?",
];

fn fact_subject(fact: &Fact, poi: Option<&Poi>) -> String {
    if let Some(p) = poi {
        return p.name.clone();
    }
    let words: Vec<&str> = fact.text.split_whitespace().take(5).collect();
    let joined = words.join(" ");
    joined.trim_end_matches(|c: char| !c.is_alphanumeric()).to_string()
}

fn kind_word(kind: ImageKind) -> &'static str {
    match kind {
        ImageKind::Map => "map",
        ImageKind::Street => "street",
    }
}

/// First opening window in weekday order, if any.
fn first_window(poi: &Poi) -> Option<crate::model::TimeWindow> {
    let mut hours = poi.hours.clone();
    hours.sort();
    hours.first().map(|h| h.window)
}

fn practical_answer(poi: &Poi) -> String {
    match first_window(poi) {
        Some(w) => format!(
            "{} opens at {} and closes at {}; admission costs {}.",
            poi.name,
            Clock(w.start),
            Clock(w.end),
            poi.price
        ),
        None => format!("{} has no published opening hours; admission costs {}.", poi.name, poi.price),
    }
}

impl QuestionGenerator for ReferenceGenerator {
    fn generate(&mut self, req: &GenerationRequest<'_>) -> Result<Vec<Generated>, GeneratorError> {
        let missing = |what: &str| GeneratorError::Fatal(format!("request lacks {what}"));
        let mut out = Vec::with_capacity(req.n);
        match req.template {
            PromptTemplate::FactExpansion => {
                let fact = req.fact.ok_or_else(|| missing("a fact"))?;
                let subject = fact_subject(fact, req.poi);
                for i in req.offset..req.offset + req.n {
                    let base = FACT_TEMPLATES[i % FACT_TEMPLATES.len()].replace("{}", &subject);
                    let round = i / FACT_TEMPLATES.len();
                    let question = if round == 0 { base } else { format!("{base} (variant {})", round + 1) };
                    out.push(Generated { question, answer: fact.text.clone() });
                }
            }
            PromptTemplate::VisionLanguage(t) => {
                let poi = req.poi.ok_or_else(|| missing("a place"))?;
                let image = req.image.ok_or_else(|| missing("an image"))?;
                let kind = kind_word(image.kind);
                let g = match t {
                    VlType::Identification => Generated {
                        question: format!("Which place is shown in this {kind} image?"),
                        answer: format!("This is {} in {}.", poi.name, poi.city),
                    },
                    VlType::Experience => Generated {
                        question: format!("What can visitors experience at the place shown in this {kind} image?"),
                        answer: format!(
                            "At {} visitors can explore one of the {} highlights of {} and should plan about {} minutes there.",
                            poi.name,
                            poi.category.name().to_lowercase(),
                            poi.city,
                            poi.visit_duration
                        ),
                    },
                    VlType::Practical => Generated {
                        question: format!("When is the place in this {kind} image open and what does it cost?"),
                        answer: practical_answer(poi),
                    },
                };
                out.extend(core::iter::repeat_n(g, req.n));
            }
            PromptTemplate::Augmented(topic) => {
                let poi = req.poi.ok_or_else(|| missing("a place"))?;
                let g = match topic {
                    Topic::Safety => Generated {
                        question: format!("Is {} a safe place to visit for travellers?", poi.name),
                        answer: format!(
                            "{} is a busy {} spot in {}; keep valuables close in crowded areas and follow posted guidance.",
                            poi.name,
                            poi.category.name().to_lowercase(),
                            poi.city
                        ),
                    },
                    Topic::Cost => Generated {
                        question: format!("How much does it cost to visit {}?", poi.name),
                        answer: format!("Admission to {} costs {} per person.", poi.name, poi.price),
                    },
                    Topic::Accessibility => {
                        let flags: Vec<String> = poi.accessibility.iter().map(ToString::to_string).collect();
                        let answer = if flags.is_empty() {
                            format!("{} lists no accessibility features, so check ahead before visiting.", poi.name)
                        } else {
                            format!("{} is listed as {}.", poi.name, flags.join(", "))
                        };
                        Generated {
                            question: format!("Is {} accessible for visitors with limited mobility?", poi.name),
                            answer,
                        }
                    }
                };
                out.extend(core::iter::repeat_n(g, req.n));
            }
        }
        Ok(out)
    }
}

/// Retry budget for transient generator failures and duplicate outputs.
pub const DEFAULT_GENERATOR_RETRIES: u32 = 3;

fn collect_distinct(
    gen: &mut dyn QuestionGenerator,
    base: GenerationRequest<'_>,
    subject: &str,
    want: usize,
    retries: u32,
) -> Result<Vec<Generated>, ForgeError> {
    let mut got: Vec<Generated> = Vec::with_capacity(want);
    let mut seen = BTreeSet::new();
    let mut offset = 0;
    for attempt in 0..=retries {
        let req = GenerationRequest { n: want - got.len(), offset, attempt, ..base };
        match gen.generate(&req) {
            Ok(batch) => {
                offset += batch.len();
                for g in batch {
                    if got.len() < want && seen.insert(normalize_text(&g.question)) {
                        got.push(g);
                    }
                }
            }
            Err(GeneratorError::Transient(message)) if attempt == retries => {
                return Err(ForgeError::Generator { subject: subject.into(), message, retriable: true });
            }
            Err(GeneratorError::Transient(_)) => {}
            Err(GeneratorError::Fatal(message)) => {
                return Err(ForgeError::Generator { subject: subject.into(), message, retriable: false });
            }
        }
        if got.len() == want {
            return Ok(got);
        }
    }
    Err(ForgeError::DuplicateQuestions { subject: subject.into(), wanted: want, got: got.len() })
}

/// Expands one fact into `k` QA pairs with pairwise-distinct questions.
pub fn expand_fact(
    fact: &Fact,
    poi: Option<&Poi>,
    gen: &mut dyn QuestionGenerator,
    k: usize,
    retries: u32,
) -> Result<Vec<QaPair>, ForgeError> {
    if k == 0 {
        return Err(ForgeError::ZeroQuestions);
    }
    let base = GenerationRequest {
        template: PromptTemplate::FactExpansion,
        fact: Some(fact),
        poi,
        image: None,
        n: k,
        offset: 0,
        attempt: 0,
    };
    let generated = collect_distinct(gen, base, &fact.id, k, retries)?;
    Ok(generated
        .into_iter()
        .enumerate()
        .map(|(i, g)| QaPair {
            id: format!("{}-q{}", fact.id, i + 1),
            poi_id: fact.poi_id.clone(),
            modality: Modality::Text,
            vl_type: None,
            question: g.question,
            answer: g.answer,
            source_fact_id: Some(fact.id.clone()),
            split: None,
            category: if fact.poi_id.is_none() { fact.category.clone() } else { None },
            image: None,
        })
        .collect())
}

/// Three QA pairs for one image of a place: identification, experience and
/// practical, in that order.
pub fn generate_vl_qa(
    poi: &Poi,
    image: &ImageRef,
    gen: &mut dyn QuestionGenerator,
    retries: u32,
) -> Result<Vec<QaPair>, ForgeError> {
    let idx = poi
        .images
        .iter()
        .position(|i| i == image)
        .ok_or_else(|| ForgeError::ForeignImage { poi_id: poi.id.clone(), uri: image.uri.clone() })?;
    let mut out = Vec::with_capacity(QA_TYPES_PER_IMAGE);
    for t in VlType::ALL {
        let base = GenerationRequest {
            template: PromptTemplate::VisionLanguage(t),
            fact: None,
            poi: Some(poi),
            image: Some(image),
            n: 1,
            offset: 0,
            attempt: 0,
        };
        let subject = format!("{}#{}", poi.id, idx + 1);
        let g = collect_distinct(gen, base, &subject, 1, retries)?.remove(0);
        out.push(QaPair {
            id: format!("{}-img{}-{}", poi.id, idx + 1, vl_slug(t)),
            poi_id: Some(poi.id.clone()),
            modality: Modality::VisionLanguage,
            vl_type: Some(t),
            question: g.question,
            answer: g.answer,
            source_fact_id: None,
            split: None,
            category: None,
            image: Some(image.clone()),
        });
    }
    Ok(out)
}

fn vl_slug(t: VlType) -> &'static str {
    match t {
        VlType::Identification => "identification",
        VlType::Experience => "experience",
        VlType::Practical => "practical",
    }
}

/// Vision-language pairs for every image of a place.
pub fn generate_poi_vl(poi: &Poi, gen: &mut dyn QuestionGenerator, retries: u32) -> Result<Vec<QaPair>, ForgeError> {
    let mut out = Vec::new();
    for image in &poi.images {
        out.extend(generate_vl_qa(poi, image, gen, retries)?);
    }
    Ok(out)
}

/// One practical-constraint QA pair about a place.
pub fn augment(
    poi: &Poi,
    topic: Topic,
    seq: usize,
    gen: &mut dyn QuestionGenerator,
    retries: u32,
) -> Result<QaPair, ForgeError> {
    let base = GenerationRequest {
        template: PromptTemplate::Augmented(topic),
        fact: None,
        poi: Some(poi),
        image: None,
        n: 1,
        offset: 0,
        attempt: 0,
    };
    let g = collect_distinct(gen, base, &poi.id, 1, retries)?.remove(0);
    Ok(QaPair {
        id: format!("{}-aug-{}-{}", poi.id, topic.slug(), seq),
        poi_id: Some(poi.id.clone()),
        modality: Modality::Text,
        vl_type: None,
        question: g.question,
        answer: g.answer,
        source_fact_id: None,
        split: None,
        category: None,
        image: None,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationVerdict {
    pub rule_pass: bool,
    pub semantic_pass: bool,
    pub manual_queue: bool,
    pub reasons: Vec<String>,
}

impl VerificationVerdict {
    pub fn accepted(&self) -> bool {
        self.rule_pass && self.semantic_pass
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub min_question_chars: usize,
    pub max_question_chars: usize,
    pub max_answer_words: usize,
    /// Fraction of accepted pairs sampled for manual review.
    pub manual_rate: f64,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            min_question_chars: 8,
            max_question_chars: 400,
            max_answer_words: 250,
            manual_rate: 0.05,
            seed: 0,
        }
    }
}

/// Checks that an answer agrees with the place record it is about.
pub trait ConsistencyChecker {
    fn check(&self, qa: &QaPair, poi: &Poi, store: &PoiStore) -> Vec<String>;
}

/// Keyed-field containment: opening/closing times, prices and city names
/// stated in the answer must match the place record.
#[derive(Debug, Clone, Default)]
pub struct KeyedFieldChecker;

const OPEN_WORDS: [&str; 4] = ["opens", "open", "opening", "from"];
const CLOSE_WORDS: [&str; 5] = ["closes", "close", "closing", "until", "till"];
const PRICE_WORDS: [&str; 8] = ["costs", "cost", "price", "priced", "admission", "fee", "ticket", "tickets"];

fn strip_word(w: &str) -> &str {
    w.trim_matches(|c: char| matches!(c, ',' | ';' | '.' | '!' | '?' | '(' | ')' | '"'))
}

fn parse_clock(w: &str) -> Option<u16> {
    let (h, m) = w.split_once(':')?;
    if h.is_empty() || h.len() > 2 || m.len() != 2 {
        return None;
    }
    let (h, m): (u16, u16) = (h.parse().ok()?, m.parse().ok()?);
    (h <= 24 && m < 60).then_some(h * 60 + m)
}

fn currency_symbol(c: char) -> Option<&'static str> {
    match c {
        '$' => Some("USD"),
        '€' => Some("EUR"),
        '£' => Some("GBP"),
        '¥' => Some("JPY"),
        _ => None,
    }
}

/// Parses a decimal amount into minor units with the given exponent.
pub(crate) fn parse_amount(s: &str, exponent: u32) -> Option<u64> {
    let s = s.replace(',', "");
    let (int, frac) = match s.split_once('.') {
        Some((i, f)) => (i, f),
        None => (s.as_str(), ""),
    };
    if int.is_empty() || !int.bytes().all(|b| b.is_ascii_digit()) || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if frac.len() > exponent as usize {
        return None;
    }
    let scale = 10u64.pow(exponent);
    let int: u64 = int.parse().ok()?;
    let mut frac_val: u64 = if frac.is_empty() { 0 } else { frac.parse().ok()? };
    frac_val *= 10u64.pow(exponent - frac.len() as u32);
    int.checked_mul(scale)?.checked_add(frac_val)
}

#[derive(Debug, PartialEq)]
enum Claim {
    Opens(u16),
    Closes(u16),
    Price { minor: Option<u64>, currency: Option<String>, raw: String },
}

fn extract_claims(answer: &str, price_exponent: u32) -> Vec<Claim> {
    let words: Vec<&str> = answer.split_whitespace().map(strip_word).collect();
    let lower: Vec<String> = words.iter().map(|w| w.to_lowercase()).collect();
    let mut out = Vec::new();
    for (i, w) in words.iter().enumerate() {
        let back = &lower[i.saturating_sub(3)..i];
        if let Some(t) = parse_clock(w) {
            let kind = back.iter().rev().find_map(|b| {
                if OPEN_WORDS.contains(&b.as_str()) {
                    Some(true)
                } else if CLOSE_WORDS.contains(&b.as_str()) {
                    Some(false)
                } else {
                    None
                }
            });
            match kind {
                Some(true) => out.push(Claim::Opens(t)),
                Some(false) => out.push(Claim::Closes(t)),
                None => {}
            }
            continue;
        }
        let (symbol_ccy, number) = match w.chars().next().and_then(currency_symbol) {
            Some(code) => (Some(code), &w[w.chars().next().map_or(0, char::len_utf8)..]),
            None => (None, *w),
        };
        if number.is_empty() || !number.as_bytes()[0].is_ascii_digit() {
            continue;
        }
        let code_after = words
            .get(i + 1)
            .filter(|n| n.len() == 3 && n.bytes().all(|b| b.is_ascii_uppercase()))
            .map(|n| n.to_string());
        let keyword = back.iter().any(|b| PRICE_WORDS.contains(&b.as_str()));
        if symbol_ccy.is_none() && code_after.is_none() && !keyword {
            continue;
        }
        let currency = code_after.or_else(|| symbol_ccy.map(String::from));
        out.push(Claim::Price { minor: parse_amount(number, price_exponent), currency, raw: w.to_string() });
    }
    out
}

impl ConsistencyChecker for KeyedFieldChecker {
    fn check(&self, qa: &QaPair, poi: &Poi, store: &PoiStore) -> Vec<String> {
        let mut reasons = Vec::new();
        let price: Money = poi.price;
        for claim in extract_claims(&qa.answer, price.currency.exponent()) {
            match claim {
                Claim::Opens(t) if !poi.hours.iter().any(|h| h.window.start == t) => {
                    reasons.push(format!("stated opening {} not in hours of {}", Clock(t), poi.id));
                }
                Claim::Closes(t) if !poi.hours.iter().any(|h| h.window.end == t) => {
                    reasons.push(format!("stated closing {} not in hours of {}", Clock(t), poi.id));
                }
                Claim::Price { minor, currency, raw } => {
                    let ccy_ok = currency.as_deref().is_none_or(|c| c == price.currency.code());
                    if !ccy_ok || minor != Some(price.amount) {
                        reasons.push(format!("stated price {raw} does not match {price}"));
                    }
                }
                _ => {}
            }
        }
        let answer = normalize_text(&qa.answer);
        for city in store.cities() {
            if city != poi.city && contains_phrase(&answer, &normalize_text(city)) {
                reasons.push(format!("mentions {city} but {} is in {}", poi.id, poi.city));
            }
        }
        reasons
    }
}

/// Runs the three verification layers in order. A pair failing a layer is
/// never shown to the later ones.
pub fn verify_qa(
    qa: &QaPair,
    store: &PoiStore,
    checker: &dyn ConsistencyChecker,
    cfg: &VerifyConfig,
) -> VerificationVerdict {
    let mut reasons = Vec::new();
    let q_chars = qa.question.trim().chars().count();
    if q_chars == 0 {
        reasons.push("empty question".to_string());
    } else if q_chars < cfg.min_question_chars {
        reasons.push(format!("question shorter than {} characters", cfg.min_question_chars));
    } else if q_chars > cfg.max_question_chars {
        reasons.push(format!("question longer than {} characters", cfg.max_question_chars));
    }
    if word_count(&qa.answer) > cfg.max_answer_words {
        reasons.push(format!("answer longer than {} words", cfg.max_answer_words));
    }
    if !qa.question.trim().is_empty() && normalize_text(&qa.question) == normalize_text(&qa.answer) {
        reasons.push("answer repeats the question".to_string());
    }
    reasons.extend(validate_qa(qa).violations.iter().map(ToString::to_string));
    if !reasons.is_empty() {
        return VerificationVerdict { rule_pass: false, semantic_pass: false, manual_queue: false, reasons };
    }

    if let Some(pid) = qa.poi_id.as_deref() {
        match store.get(pid) {
            None => reasons.push("unknown POI".to_string()),
            Some(poi) => reasons.extend(checker.check(qa, poi, store)),
        }
    }
    if !reasons.is_empty() {
        return VerificationVerdict { rule_pass: true, semantic_pass: false, manual_queue: false, reasons };
    }

    let bucket = stable_hash(cfg.seed, &["manual", &qa.id]) % 1_000_000;
    let manual_queue = (bucket as f64) < cfg.manual_rate * 1_000_000.0;
    VerificationVerdict { rule_pass: true, semantic_pass: true, manual_queue, reasons }
}

/// Train/test labels for every place and for place-less facts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub ratio: f64,
    pub pois: BTreeMap<String, Split>,
    /// Keyed by source fact id (or QA id when a place-less pair has none).
    pub orphans: BTreeMap<String, Split>,
}

fn orphan_key(qa: &QaPair) -> &str {
    qa.source_fact_id.as_deref().unwrap_or(&qa.id)
}

/// Number of training slots for `n` units; both sides stay non-empty when
/// `n >= 2`.
fn train_slots(n: usize, ratio: f64) -> usize {
    let raw = libm::round(ratio * n as f64) as usize;
    if n >= 2 {
        raw.clamp(1, n - 1)
    } else {
        n
    }
}

fn rank_partition<'a>(
    keys: impl IntoIterator<Item = &'a str>,
    pinned: &BTreeSet<&str>,
    ratio: f64,
    seed: u64,
    salt: &str,
) -> BTreeMap<String, Split> {
    let keys: Vec<&str> = keys.into_iter().collect();
    let target = train_slots(keys.len(), ratio);
    let mut ranked: Vec<(u64, &str)> = keys
        .iter()
        .filter(|k| !pinned.contains(*k))
        .map(|k| (stable_hash(seed, &[salt, k]), *k))
        .collect();
    ranked.sort();
    let pinned_here = keys.iter().filter(|k| pinned.contains(*k)).count();
    let free_train = target.saturating_sub(pinned_here);
    let mut out = BTreeMap::new();
    for k in keys.iter().filter(|k| pinned.contains(*k)) {
        out.insert(k.to_string(), Split::Train);
    }
    for (rank, (_, k)) in ranked.into_iter().enumerate() {
        let s = if rank < free_train { Split::Train } else { Split::Test };
        out.insert(k.to_string(), s);
    }
    out
}

/// Place-disjoint split at the requested train ratio.
///
/// Places are ranked by a seeded stable hash of their id and the first
/// `round(ratio * n)` go to train, so the ratio is exact at any size and the
/// result does not depend on input order. Places referenced by reasoning
/// records are pinned to train because those records are train-only.
/// Place-less text pairs are split the same way, keyed by fact id.
pub fn split_dataset(
    store: &PoiStore,
    qas: &[QaPair],
    cots: &[CotRecord],
    ratio: f64,
    seed: u64,
) -> Result<SplitAssignment, ForgeError> {
    if store.is_empty() {
        return Err(ForgeError::EmptyStore);
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(ForgeError::Ratio(ratio));
    }
    let pinned: BTreeSet<&str> = cots
        .iter()
        .flat_map(|c| c.poi_ids.iter().map(String::as_str))
        .filter(|id| store.get(id).is_some())
        .collect();
    let pois = rank_partition(store.ids(), &pinned, ratio, seed, "poi");
    let orphan_keys: BTreeSet<&str> = qas.iter().filter(|q| q.poi_id.is_none()).map(orphan_key).collect();
    let orphans = rank_partition(orphan_keys, &BTreeSet::new(), ratio, seed, "fact");
    Ok(SplitAssignment { seed, ratio, pois, orphans })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DisjointViolation {
    Unlabeled { record: String },
    UnknownPoi { record: String, poi_id: String },
    Mismatch { record: String, poi_id: String, label: Split, assigned: Split },
}

impl SplitAssignment {
    pub fn split_of(&self, qa: &QaPair) -> Option<Split> {
        match qa.poi_id.as_deref() {
            Some(p) => self.pois.get(p).copied(),
            None => self.orphans.get(orphan_key(qa)).copied(),
        }
    }

    /// Labels every record. Reasoning records are always train.
    pub fn apply(&self, qas: &mut [QaPair], cots: &mut [CotRecord]) {
        for qa in qas {
            qa.split = self.split_of(qa);
        }
        for c in cots {
            c.split = Some(Split::Train);
        }
    }

    pub fn counts(&self) -> (usize, usize) {
        let train = self.pois.values().filter(|s| **s == Split::Train).count();
        (train, self.pois.len() - train)
    }

    /// Every record whose label disagrees with its place's assignment.
    pub fn check_disjoint(&self, qas: &[QaPair], cots: &[CotRecord]) -> Vec<DisjointViolation> {
        let mut out = Vec::new();
        let mut check = |record: &str, poi_id: &str, label: Option<Split>| {
            let Some(label) = label else {
                out.push(DisjointViolation::Unlabeled { record: record.into() });
                return;
            };
            match self.pois.get(poi_id) {
                None => out.push(DisjointViolation::UnknownPoi { record: record.into(), poi_id: poi_id.into() }),
                Some(&assigned) if assigned != label => out.push(DisjointViolation::Mismatch {
                    record: record.into(),
                    poi_id: poi_id.into(),
                    label,
                    assigned,
                }),
                _ => {}
            }
        };
        for qa in qas {
            if let Some(p) = &qa.poi_id {
                check(&qa.id, p, qa.split);
            }
        }
        for c in cots {
            for p in &c.poi_ids {
                check(&c.id, p, c.split);
            }
        }
        out
    }
}

/// Counts in one table row.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Row {
    pub all: u64,
    pub train: u64,
    pub test: u64,
}

impl Row {
    fn add(&mut self, split: Option<Split>) {
        self.all += 1;
        match split {
            Some(Split::Train) => self.train += 1,
            Some(Split::Test) => self.test += 1,
            None => {}
        }
    }

    fn plus(self, o: Row) -> Row {
        Row { all: self.all + o.all, train: self.train + o.train, test: self.test + o.test }
    }

    pub const fn new(all: u64, train: u64, test: u64) -> Row {
        Row { all, train, test }
    }
}

/// The composition table: formats, place categories, visual elements and
/// reasoning annotations, each with all/train/test columns.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableCounts {
    pub text: Row,
    pub vision_language: Row,
    pub cot: Row,
    pub total: Row,
    /// In [`Category::ALL`] order.
    pub categories: [Row; 6],
    pub uncategorized: Row,
    pub map: Row,
    pub street: Row,
    pub cot_spatial: Row,
    pub cot_temporal: Row,
    pub cot_practical: Row,
}

impl TableCounts {
    /// The published composition, in thousands of records.
    pub fn published() -> TableCounts {
        TableCounts {
            text: Row::new(160, 128, 32),
            vision_language: Row::new(100, 80, 20),
            cot: Row::new(5, 5, 0),
            total: Row::new(265, 213, 52),
            categories: [
                Row::new(70, 56, 14),
                Row::new(52, 42, 10),
                Row::new(39, 31, 8),
                Row::new(26, 21, 5),
                Row::new(39, 31, 8),
                Row::new(34, 27, 7),
            ],
            uncategorized: Row::default(),
            map: Row::new(40, 32, 8),
            street: Row::new(60, 48, 12),
            cot_spatial: Row::new(5, 5, 0),
            cot_temporal: Row::new(5, 5, 0),
            cot_practical: Row::new(5, 5, 0),
        }
    }

    /// Row and column identities every composition table must satisfy.
    pub fn identities(&self) -> Vec<IdentityCheck> {
        let mut out = Vec::new();
        let cols: [(&str, fn(&Row) -> u64); 3] = [("all", |r| r.all), ("train", |r| r.train), ("test", |r| r.test)];
        let rows: [(&str, &Row); 14] = [
            ("text", &self.text),
            ("vision-language", &self.vision_language),
            ("cot", &self.cot),
            ("total", &self.total),
            ("attractions", &self.categories[0]),
            ("dining", &self.categories[1]),
            ("living", &self.categories[2]),
            ("transportation", &self.categories[3]),
            ("cultural", &self.categories[4]),
            ("practical", &self.categories[5]),
            ("map", &self.map),
            ("street", &self.street),
            ("cot-spatial", &self.cot_spatial),
            ("cot-temporal", &self.cot_temporal),
        ];
        for (name, r) in rows.iter().chain(core::iter::once(&("cot-practical", &self.cot_practical))) {
            out.push(IdentityCheck::new(format!("{name}: all = train + test"), r.train + r.test, r.all));
        }
        let cat_sum = self.categories.iter().fold(self.uncategorized, |a, r| a.plus(*r));
        let formats = self.text.plus(self.vision_language);
        for (col, get) in cols {
            out.push(IdentityCheck::new(
                format!("total = text + vision-language + cot ({col})"),
                get(&self.text) + get(&self.vision_language) + get(&self.cot),
                get(&self.total),
            ));
            out.push(IdentityCheck::new(
                format!("categories = text + vision-language ({col})"),
                get(&formats),
                get(&cat_sum),
            ));
            out.push(IdentityCheck::new(
                format!("uncategorized = 0 ({col})"),
                0,
                get(&self.uncategorized),
            ));
            out.push(IdentityCheck::new(
                format!("map + street = vision-language ({col})"),
                get(&self.vision_language),
                get(&self.map) + get(&self.street),
            ));
            for (name, r) in
                [("spatial", &self.cot_spatial), ("temporal", &self.cot_temporal), ("practical", &self.cot_practical)]
            {
                out.push(IdentityCheck::new(format!("cot {name} = cot ({col})"), get(&self.cot), get(r)));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub name: String,
    pub expected: u64,
    pub actual: u64,
}

impl IdentityCheck {
    fn new(name: String, expected: u64, actual: u64) -> Self {
        IdentityCheck { name, expected, actual }
    }

    pub fn holds(&self) -> bool {
        self.expected == self.actual
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionStats {
    pub table: TableCounts,
    pub pois: usize,
    pub facts: u64,
    pub questions_per_fact: u64,
    pub expanded: u64,
    pub augmented: u64,
    pub images: u64,
    pub mean_text_answer_words: Option<f64>,
    pub mean_vl_answer_words: Option<f64>,
    pub identities: Vec<IdentityCheck>,
}

impl CompositionStats {
    pub fn failures(&self) -> impl Iterator<Item = &IdentityCheck> {
        self.identities.iter().filter(|c| !c.holds())
    }

    pub fn all_hold(&self) -> bool {
        self.failures().next().is_none()
    }
}

fn mean(values: &[usize]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<usize>() as f64 / values.len() as f64)
}

/// Counts everything in the composition table and checks the pipeline's
/// counting identities: text = facts x k + augmented and
/// vision-language = images x 3, plus every table row/column identity.
pub fn composition_report(store: &PoiStore, qas: &[QaPair], cots: &[CotRecord], k: usize) -> CompositionStats {
    let mut t = TableCounts::default();
    let mut fact_ids = BTreeSet::new();
    let (mut expanded, mut augmented) = (0u64, 0u64);
    let (mut text_words, mut vl_words) = (Vec::new(), Vec::new());
    for qa in qas {
        match qa.modality {
            Modality::Text => {
                t.text.add(qa.split);
                text_words.push(word_count(&qa.answer));
                match &qa.source_fact_id {
                    Some(f) => {
                        fact_ids.insert(f.as_str());
                        expanded += 1;
                    }
                    None => augmented += 1,
                }
            }
            Modality::VisionLanguage => {
                t.vision_language.add(qa.split);
                vl_words.push(word_count(&qa.answer));
                match qa.image.as_ref().map(|i| i.kind) {
                    Some(ImageKind::Map) => t.map.add(qa.split),
                    Some(ImageKind::Street) => t.street.add(qa.split),
                    None => {}
                }
            }
        }
        match store.category_of(qa).and_then(|c| c.index()) {
            Some(i) => t.categories[i].add(qa.split),
            None => t.uncategorized.add(qa.split),
        }
    }
    for c in cots {
        t.cot.add(c.split);
        if !c.chain.spatial.is_empty() {
            t.cot_spatial.add(c.split);
        }
        if !c.chain.temporal.is_empty() {
            t.cot_temporal.add(c.split);
        }
        if !c.chain.practical.is_empty() {
            t.cot_practical.add(c.split);
        }
    }
    for r in [t.text, t.vision_language, t.cot] {
        t.total = t.total.plus(r);
    }
    let images: u64 = store.iter().map(|p| p.images.len() as u64).sum();
    let facts = fact_ids.len() as u64;
    let k = k as u64;
    let mut identities = alloc::vec![
        IdentityCheck::new("text = facts x k + augmented".into(), facts * k + augmented, t.text.all),
        IdentityCheck::new(
            "vision-language = images x 3".into(),
            images * QA_TYPES_PER_IMAGE as u64,
            t.vision_language.all
        ),
    ];
    identities.extend(t.identities());
    CompositionStats {
        table: t,
        pois: store.len(),
        facts,
        questions_per_fact: k,
        expanded,
        augmented,
        images,
        mean_text_answer_words: mean(&text_words),
        mean_vl_answer_words: mean(&vl_words),
        identities,
    }
}

impl fmt::Display for CompositionStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let row = |f: &mut fmt::Formatter<'_>, name: &str, r: &Row| {
            writeln!(f, "  {:<16} {:>8} {:>8} {:>8}", name, r.all, r.train, r.test)
        };
        writeln!(f, "Dataset composition")?;
        writeln!(f, "  {:<16} {:>8} {:>8} {:>8}", "", "all", "train", "test")?;
        writeln!(f, "QA format")?;
        row(f, "Text", &self.table.text)?;
        row(f, "Vis-Lang", &self.table.vision_language)?;
        row(f, "CoT", &self.table.cot)?;
        row(f, "Total", &self.table.total)?;
        writeln!(f, "Locations")?;
        for (c, r) in Category::ALL.iter().zip(&self.table.categories) {
            row(f, c.name(), r)?;
        }
        if self.table.uncategorized.all > 0 {
            row(f, "(uncategorized)", &self.table.uncategorized)?;
        }
        writeln!(f, "Visual elements")?;
        row(f, "Map", &self.table.map)?;
        row(f, "Street", &self.table.street)?;
        writeln!(f, "CoT annotations")?;
        row(f, "Spatial", &self.table.cot_spatial)?;
        row(f, "Temporal", &self.table.cot_temporal)?;
        row(f, "Practical", &self.table.cot_practical)?;
        writeln!(f)?;
        writeln!(
            f,
            "places {}  facts {}  questions/fact {}  expanded {}  augmented {}  images {}",
            self.pois, self.facts, self.questions_per_fact, self.expanded, self.augmented, self.images
        )?;
        let words = |w: Option<f64>| w.map_or_else(|| "n/a".to_string(), |m| format!("{m:.1}"));
        writeln!(
            f,
            "mean answer words: text {}  vision-language {}",
            words(self.mean_text_answer_words),
            words(self.mean_vl_answer_words)
        )?;
        writeln!(f)?;
        writeln!(f, "Identity checks")?;
        for c in &self.identities {
            let mark = if c.holds() { "ok  " } else { "FAIL" };
            writeln!(f, "  [{mark}] {}: expected {}, got {}", c.name, c.expected, c.actual)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub questions_per_fact: usize,
    /// Number of practical-constraint pairs, spread over places in id order.
    pub augmented: usize,
    pub topics: Vec<Topic>,
    pub ratio: f64,
    pub seed: u64,
    pub retries: u32,
    pub verify: VerifyConfig,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            questions_per_fact: DEFAULT_QUESTIONS_PER_FACT,
            augmented: 0,
            topics: Topic::ALL.to_vec(),
            ratio: DEFAULT_TRAIN_RATIO,
            seed: 0,
            retries: DEFAULT_GENERATOR_RETRIES,
            verify: VerifyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedQa {
    pub qa: QaPair,
    pub verdict: VerificationVerdict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBuild {
    pub qas: Vec<QaPair>,
    pub cots: Vec<CotRecord>,
    pub assignment: SplitAssignment,
    pub manual_queue: Vec<QaPair>,
    pub rejected: Vec<RejectedQa>,
    pub report: CompositionStats,
}

/// Full construction pipeline: expand facts, generate per-image pairs and
/// augmented pairs, verify, split and report. Output records are sorted by
/// id.
pub fn build_dataset(
    store: &PoiStore,
    facts: &[Fact],
    cots: &[CotRecord],
    gen: &mut dyn QuestionGenerator,
    checker: &dyn ConsistencyChecker,
    cfg: &BuildConfig,
) -> Result<DatasetBuild, ForgeError> {
    let mut candidates = Vec::new();
    for fact in facts {
        let poi = match fact.poi_id.as_deref() {
            Some(pid) => Some(store.get(pid).ok_or_else(|| ForgeError::UnknownPoi {
                fact_id: fact.id.clone(),
                poi_id: pid.into(),
            })?),
            None => None,
        };
        candidates.extend(expand_fact(fact, poi, gen, cfg.questions_per_fact, cfg.retries)?);
    }
    let pois: Vec<&Poi> = store.iter().collect();
    if !cfg.topics.is_empty() && !pois.is_empty() {
        for i in 0..cfg.augmented {
            let poi = pois[i % pois.len()];
            let topic = cfg.topics[i % cfg.topics.len()];
            candidates.push(augment(poi, topic, i + 1, gen, cfg.retries)?);
        }
    }
    for poi in &pois {
        candidates.extend(generate_poi_vl(poi, gen, cfg.retries)?);
    }

    let mut qas = Vec::with_capacity(candidates.len());
    let mut manual_queue = Vec::new();
    let mut rejected = Vec::new();
    for qa in candidates {
        let verdict = verify_qa(&qa, store, checker, &cfg.verify);
        if verdict.accepted() {
            if verdict.manual_queue {
                manual_queue.push(qa.clone());
            }
            qas.push(qa);
        } else {
            rejected.push(RejectedQa { qa, verdict });
        }
    }

    let mut cots = cots.to_vec();
    let assignment = split_dataset(store, &qas, &cots, cfg.ratio, cfg.seed)?;
    assignment.apply(&mut qas, &mut cots);
    for m in &mut manual_queue {
        m.split = assignment.split_of(m);
    }
    qas.sort_by(|a, b| a.id.cmp(&b.id));
    cots.sort_by(|a, b| a.id.cmp(&b.id));
    manual_queue.sort_by(|a, b| a.id.cmp(&b.id));
    let report = composition_report(store, &qas, &cots, cfg.questions_per_fact);
    Ok(DatasetBuild { qas, cots, assignment, manual_queue, rejected, report })
}
