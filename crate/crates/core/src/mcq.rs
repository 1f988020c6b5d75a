//! Four-choice item conversion, free-form answer matching and benchmark
//! score arithmetic.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::PoiStore;
use crate::model::{Category, Modality, Poi, QaPair, VlType};
use crate::text::{contains_phrase, stable_hash};

pub use crate::text::normalize_text;

pub const OPTIONS: usize = 4;
pub const DEFAULT_JACCARD_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqItem {
    pub qa_id: String,
    pub question: String,
    pub options: [String; OPTIONS],
    pub correct_index: u8,
    pub modality: Modality,
    #[serde(default)]
    pub category: Option<Category>,
}

impl McqItem {
    pub fn correct(&self) -> &str {
        &self.options[self.correct_index as usize]
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum McqError {
    #[error("{qa_id}: only {found} distinct distractor candidates, need 3")]
    TooFewCandidates { qa_id: String, found: usize },
    #[error("prediction for unknown item {0:?}")]
    UnknownItem(String),
    #[error("no prediction for item {0:?}")]
    MissingPrediction(String),
    #[error("duplicate item id {0:?}")]
    DuplicateItem(String),
    #[error("no items to score")]
    Empty,
    #[error("explicit text weight {0} outside [0, 1]")]
    Weight(f64),
    #[error("baseline score must be positive, got {0}")]
    ZeroBaseline(f64),
}

type AnswerKey<'a> = (&'a str, Modality, Option<VlType>);

/// Pre-indexed distractor sources: places in id order, and for each place
/// the first answer (by QA id) of each question kind.
pub struct DistractorPool<'a> {
    store: &'a PoiStore,
    pois: Vec<&'a Poi>,
    answers: BTreeMap<AnswerKey<'a>, &'a str>,
    /// Answers of place-less pairs, in QA id order.
    loose: Vec<(&'a str, Modality, Option<&'a Category>, &'a str)>,
}

impl<'a> DistractorPool<'a> {
    pub fn new(store: &'a PoiStore, qas: &'a [QaPair]) -> Self {
        let mut sorted: Vec<&QaPair> = qas.iter().collect();
        sorted.sort_by(|a, b| a.id.cmp(&b.id));
        let mut answers = BTreeMap::new();
        let mut loose = Vec::new();
        for qa in sorted {
            match qa.poi_id.as_deref() {
                Some(p) => {
                    answers.entry((p, qa.modality, qa.vl_type)).or_insert(qa.answer.as_str());
                }
                None => loose.push((qa.id.as_str(), qa.modality, qa.category.as_ref(), qa.answer.as_str())),
            }
        }
        DistractorPool { store, pois: store.iter().collect(), answers, loose }
    }

    fn text_for(&self, poi: &'a Poi, qa: &QaPair) -> &'a str {
        self.answers.get(&(poi.id.as_str(), qa.modality, qa.vl_type)).copied().unwrap_or(poi.name.as_str())
    }
}

/// Fisher-Yates over a virtual `0..n` array, materialising only the swaps it
/// makes.
struct LazyShuffle<'r> {
    n: usize,
    next: usize,
    swaps: BTreeMap<usize, usize>,
    rng: &'r mut ChaCha8Rng,
}

impl Iterator for LazyShuffle<'_> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.next >= self.n {
            return None;
        }
        let i = self.next;
        let j = self.rng.random_range(i..self.n);
        let at = |m: &BTreeMap<usize, usize>, k| m.get(&k).copied().unwrap_or(k);
        let (vi, vj) = (at(&self.swaps, i), at(&self.swaps, j));
        self.swaps.insert(j, vi);
        self.swaps.insert(i, vj);
        self.next += 1;
        Some(vj)
    }
}

fn item_rng(seed: u64, qa_id: &str, purpose: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stable_hash(seed, &["mcq", purpose, qa_id]))
}

/// Converts a QA pair into a four-choice item.
///
/// Distractors come from places sharing the gold place's category and city,
/// then its category anywhere, then any place. A candidate's text is that
/// place's answer to the same kind of question, or its name when it has
/// none. A pair without a place draws from other place-less answers, same
/// category first, then from any place. Within a tier candidates are visited
/// in a seeded random order.
pub fn build_mcq(qa: &QaPair, pool: &DistractorPool<'_>, seed: u64) -> Result<McqItem, McqError> {
    let gold_norm = normalize_text(&qa.answer);
    let mut seen: BTreeSet<String> = BTreeSet::from([gold_norm]);
    let mut chosen: Vec<String> = Vec::with_capacity(OPTIONS - 1);
    let mut rng = item_rng(seed, &qa.id, "distractors");
    let mut offer = |text: &str, chosen: &mut Vec<String>| {
        let norm = normalize_text(text);
        if !norm.is_empty() && seen.insert(norm) {
            chosen.push(text.to_string());
        }
        chosen.len() == OPTIONS - 1
    };

    let gold_poi = qa.poi_id.as_deref().and_then(|id| pool.store.get(id));
    let category = gold_poi.map(|p| &p.category).or(qa.category.as_ref());
    'tiers: {
        if let Some(gold) = gold_poi {
            let tier = |p: &Poi| -> u8 {
                if p.category == gold.category && p.city == gold.city {
                    0
                } else if p.category == gold.category {
                    1
                } else {
                    2
                }
            };
            for t in 0..3u8 {
                let members: Vec<&Poi> =
                    pool.pois.iter().copied().filter(|p| p.id != gold.id && tier(p) == t).collect();
                let order = LazyShuffle { n: members.len(), next: 0, swaps: BTreeMap::new(), rng: &mut rng };
                for i in order {
                    if offer(pool.text_for(members[i], qa), &mut chosen) {
                        break 'tiers;
                    }
                }
            }
        } else {
            for same_category in [true, false] {
                let members: Vec<&str> = pool
                    .loose
                    .iter()
                    .filter(|(id, m, c, _)| {
                        *id != qa.id && *m == qa.modality && (c.is_some() && *c == category) == same_category
                    })
                    .map(|(_, _, _, a)| *a)
                    .collect();
                let order = LazyShuffle { n: members.len(), next: 0, swaps: BTreeMap::new(), rng: &mut rng };
                for i in order {
                    if offer(members[i], &mut chosen) {
                        break 'tiers;
                    }
                }
            }
            // last tier: any place
            let order = LazyShuffle { n: pool.pois.len(), next: 0, swaps: BTreeMap::new(), rng: &mut rng };
            for i in order {
                if offer(pool.text_for(pool.pois[i], qa), &mut chosen) {
                    break 'tiers;
                }
            }
        }
    }
    if chosen.len() < OPTIONS - 1 {
        return Err(McqError::TooFewCandidates { qa_id: qa.id.clone(), found: chosen.len() });
    }

    let mut slots: Vec<(bool, String)> = core::iter::once((true, qa.answer.clone()))
        .chain(chosen.into_iter().map(|d| (false, d)))
        .collect();
    slots.shuffle(&mut item_rng(seed, &qa.id, "order"));
    let correct_index = slots.iter().position(|(gold, _)| *gold).unwrap_or(0) as u8;
    let mut it = slots.into_iter().map(|(_, s)| s);
    let options = core::array::from_fn(|_| it.next().unwrap_or_default());
    Ok(McqItem {
        qa_id: qa.id.clone(),
        question: qa.question.clone(),
        options,
        correct_index,
        modality: qa.modality,
        category: category.cloned(),
    })
}

fn token_set(s: &str) -> BTreeSet<&str> {
    s.split(' ').filter(|t| !t.is_empty()).collect()
}

fn jaccard(a: &BTreeSet<&str>, b: &BTreeSet<&str>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Maps a free-form response onto an option index, or `None` when the
/// response is unmatched or ambiguous (scored incorrect).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Matcher {
    pub threshold: f64,
}

impl Default for Matcher {
    fn default() -> Self {
        Matcher { threshold: DEFAULT_JACCARD_THRESHOLD }
    }
}

impl Matcher {
    pub fn match_answer(&self, response: &str, item: &McqItem) -> Option<usize> {
        let resp = normalize_text(response);
        if resp.is_empty() {
            return None;
        }
        let opts: Vec<String> = item.options.iter().map(|o| normalize_text(o)).collect();
        if let Some(i) = opts.iter().position(|o| *o == resp) {
            return Some(i);
        }
        let contained: Vec<usize> = (0..opts.len()).filter(|&i| contains_phrase(&resp, &opts[i])).collect();
        if let [only] = contained[..] {
            return Some(only);
        }

        let rs = token_set(&resp);
        let scores: Vec<f64> = opts.iter().map(|o| jaccard(&rs, &token_set(o))).collect();
        let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if best < self.threshold {
            return None;
        }
        let mut at_best = (0..scores.len()).filter(|&i| scores[i] == best);
        match (at_best.next(), at_best.next()) {
            (Some(i), None) => Some(i),
            _ => None,
        }
    }
}

pub fn match_answer(response: &str, item: &McqItem) -> Option<usize> {
    Matcher::default().match_answer(response, item)
}

/// One line of a prediction transcript.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub qa_id: String,
    pub response: String,
}

/// Matches every transcript line against its item.
pub fn resolve_predictions(
    items: &[McqItem],
    predictions: &[Prediction],
    matcher: &Matcher,
) -> Result<BTreeMap<String, Option<usize>>, McqError> {
    let by_id: BTreeMap<&str, &McqItem> = items.iter().map(|i| (i.qa_id.as_str(), i)).collect();
    let mut out = BTreeMap::new();
    for p in predictions {
        let item = by_id.get(p.qa_id.as_str()).ok_or_else(|| McqError::UnknownItem(p.qa_id.clone()))?;
        out.insert(p.qa_id.clone(), matcher.match_answer(&p.response, item));
    }
    Ok(out)
}

/// Rounds half away from zero to `decimals` places, absorbing binary
/// representation error (so 0.25 -> 0.3 and 75.95 -> 76.0).
pub fn round_half_up(x: f64, decimals: u32) -> f64 {
    let scale = libm::pow(10.0, decimals as f64);
    let scaled = x * scale;
    let nudge = 1e-9 * libm::fmax(1.0, libm::fabs(scaled));
    libm::round(scaled + libm::copysign(nudge, scaled)) / scale
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "text_weight", rename_all = "kebab-case")]
pub enum WeightsMode {
    #[default]
    FromCounts,
    Explicit(f64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub items: u64,
    pub correct: u64,
}

impl Tally {
    /// Accuracy in percent, unrounded. Zero for an empty tally.
    pub fn score(&self) -> f64 {
        if self.items == 0 {
            0.0
        } else {
            100.0 * self.correct as f64 / self.items as f64
        }
    }
}

/// Benchmark scores. Raw values are kept; [`fmt::Display`] and the
/// `*_rounded` accessors round half-up to one decimal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub text: Tally,
    pub vqa: Tally,
    pub text_score: f64,
    pub vqa_score: f64,
    pub full_score: f64,
    pub weights: (f64, f64),
    pub per_category: BTreeMap<String, Tally>,
}

impl ScoreReport {
    pub fn rounded(&self) -> (f64, f64, f64) {
        (round_half_up(self.text_score, 1), round_half_up(self.vqa_score, 1), round_half_up(self.full_score, 1))
    }
}

/// Weighted full score from the two modality scores.
pub fn full_score(text: f64, vqa: f64, weights: (f64, f64)) -> f64 {
    weights.0 * text + weights.1 * vqa
}

pub fn score_run(
    predictions: &BTreeMap<String, Option<usize>>,
    items: &[McqItem],
    weights: WeightsMode,
) -> Result<ScoreReport, McqError> {
    if items.is_empty() {
        return Err(McqError::Empty);
    }
    let mut ids = BTreeSet::new();
    for it in items {
        if !ids.insert(it.qa_id.as_str()) {
            return Err(McqError::DuplicateItem(it.qa_id.clone()));
        }
    }
    if let Some(unknown) = predictions.keys().find(|k| !ids.contains(k.as_str())) {
        return Err(McqError::UnknownItem(unknown.clone()));
    }
    let (mut text, mut vqa) = (Tally::default(), Tally::default());
    let mut per_category: BTreeMap<String, Tally> = BTreeMap::new();
    for it in items {
        let pred = predictions.get(&it.qa_id).ok_or_else(|| McqError::MissingPrediction(it.qa_id.clone()))?;
        let hit = *pred == Some(it.correct_index as usize);
        let tally = match it.modality {
            Modality::Text => &mut text,
            Modality::VisionLanguage => &mut vqa,
        };
        tally.items += 1;
        tally.correct += hit as u64;
        let key = it.category.as_ref().map_or_else(|| "uncategorized".to_string(), |c| c.name().to_string());
        let cat = per_category.entry(key).or_default();
        cat.items += 1;
        cat.correct += hit as u64;
    }
    let weights = match weights {
        WeightsMode::FromCounts => {
            let n = (text.items + vqa.items) as f64;
            (text.items as f64 / n, vqa.items as f64 / n)
        }
        WeightsMode::Explicit(w) if (0.0..=1.0).contains(&w) => (w, 1.0 - w),
        WeightsMode::Explicit(w) => return Err(McqError::Weight(w)),
    };
    let (text_score, vqa_score) = (text.score(), vqa.score());
    Ok(ScoreReport {
        text,
        vqa,
        text_score,
        vqa_score,
        full_score: full_score(text_score, vqa_score, weights),
        weights,
        per_category,
    })
}

impl fmt::Display for ScoreReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (t, v, full) = self.rounded();
        writeln!(f, "Pure Text  {t:>5.1}  ({}/{})", self.text.correct, self.text.items)?;
        writeln!(f, "VQA        {v:>5.1}  ({}/{})", self.vqa.correct, self.vqa.items)?;
        writeln!(f, "Full       {full:>5.1}  (weights {:.3} / {:.3})", self.weights.0, self.weights.1)?;
        writeln!(f, "By category")?;
        for (name, tally) in &self.per_category {
            writeln!(
                f,
                "  {:<16} {:>5.1}  ({}/{})",
                name,
                round_half_up(tally.score(), 1),
                tally.correct,
                tally.items
            )?;
        }
        Ok(())
    }
}

/// Relative improvement in percent, unrounded.
pub fn relative_change(pre: f64, fine: f64) -> Result<f64, McqError> {
    if !(pre > 0.0) {
        return Err(McqError::ZeroBaseline(pre));
    }
    Ok(100.0 * (fine - pre) / pre)
}

/// Relative improvement in percent, rounded half-up to one decimal.
pub fn improvement_delta(pre: f64, fine: f64) -> Result<f64, McqError> {
    relative_change(pre, fine).map(|d| round_half_up(d, 1))
}

/// Published benchmark scores.
pub mod published {
    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub enum Stage {
        Pretrained,
        FineTuned,
        FineTunedWithReasoning,
    }

    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct ScoreRow {
        pub method: &'static str,
        pub llm: &'static str,
        pub stage: Stage,
        pub text: f64,
        pub vqa: f64,
        pub full: f64,
        /// Printed relative gains (text, vqa, full) in percent.
        pub delta: Option<[f64; 3]>,
    }

    const fn pre(method: &'static str, llm: &'static str, text: f64, vqa: f64, full: f64) -> ScoreRow {
        ScoreRow { method, llm, stage: Stage::Pretrained, text, vqa, full, delta: None }
    }

    const fn fine(method: &'static str, llm: &'static str, s: [f64; 3], d: [f64; 3]) -> ScoreRow {
        ScoreRow { method, llm, stage: Stage::FineTuned, text: s[0], vqa: s[1], full: s[2], delta: Some(d) }
    }

    /// Modality shares of the published test set.
    pub const TEST_WEIGHTS: (f64, f64) = (0.615, 0.385);
    /// Test-set sizes in thousands of items.
    pub const TEST_COUNTS: (u64, u64) = (32, 20);

    pub const SCORES: [ScoreRow; 17] = [
        pre("BLIP-2", "Vicuna-13B", 60.3, 51.6, 56.9),
        pre("InstructBLIP", "Vicuna-7B", 62.8, 54.1, 59.4),
        pre("InstructBLIP", "Vicuna-13B", 64.6, 55.4, 61.1),
        pre("Shikra", "Vicuna-13B", 71.6, 60.8, 67.5),
        pre("Qwen-VL", "Qwen-7B", 72.1, 61.6, 68.1),
        pre("Qwen-VL-Chat", "Qwen-7B", 73.2, 62.8, 69.2),
        pre("LLaVA-1.5", "Vicuna-7B", 72.8, 62.3, 68.8),
        pre("LLaVA-1.5", "Vicuna-13B", 74.3, 63.3, 70.0),
        fine("BLIP-2", "Vicuna-13B", [64.7, 54.7, 60.9], [7.3, 6.0, 7.0]),
        fine("InstructBLIP", "Vicuna-7B", [68.2, 58.2, 64.4], [8.6, 7.6, 8.4]),
        fine("InstructBLIP", "Vicuna-13B", [68.8, 58.8, 64.9], [6.5, 6.1, 6.2]),
        fine("Shikra", "Vicuna-13B", [77.7, 66.7, 73.5], [8.5, 9.7, 8.9]),
        fine("Qwen-VL", "Qwen-7B", [78.7, 67.7, 74.5], [9.2, 9.9, 9.4]),
        fine("Qwen-VL-Chat", "Qwen-7B", [78.4, 67.4, 74.2], [7.1, 7.3, 7.2]),
        fine("LLaVA-1.5", "Vicuna-7B", [78.0, 67.0, 73.8], [7.1, 7.5, 7.3]),
        fine("LLaVA-1.5", "Vicuna-13B", [80.4, 68.9, 76.0], [8.2, 8.8, 8.6]),
        ScoreRow {
            method: "TraveLLaMA",
            llm: "Vicuna-13B",
            stage: Stage::FineTunedWithReasoning,
            text: 82.5,
            vqa: 70.5,
            full: 77.8,
            delta: Some([10.7, 11.0, 10.8]),
        },
    ];

    /// The pretrained row a fine-tuned row's gains are measured against: the
    /// same method and backbone, or for the reasoning model its base
    /// architecture (LLaVA-1.5 on Vicuna-13B).
    pub fn baseline_of(row: &ScoreRow) -> Option<&'static ScoreRow> {
        let method = match row.stage {
            Stage::Pretrained => return None,
            Stage::FineTuned => row.method,
            Stage::FineTunedWithReasoning => "LLaVA-1.5",
        };
        SCORES.iter().find(|r| r.stage == Stage::Pretrained && r.method == method && r.llm == row.llm)
    }
}
