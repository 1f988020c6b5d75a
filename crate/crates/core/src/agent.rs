//! The planning agent: query analysis, reasoning, a tool-employment loop over
//! an explicit plan state, and final integration into verified itineraries.
//!
//! The loop is `state_t = update_plan(state_{t-1}, tool(select_tool(state_{t-1})))`.
//! The final answer comes from [`generate`], which sees only the final plan
//! state, the observations and the reasoning chain.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cot::{reference_reason, QueryContext};
use crate::dataset::{parse_amount, PoiStore};
use crate::model::{
    AccessFlag, Clock, CoTChain, ConstraintSet, Currency, Money, Poi, StepPayload, TimeWindow, Weekday, GRID_MINUTES,
};
use crate::plan::{feasible, plan_days, BeamWidth, DayPlan, PlanError, PlanInstance, PlanViolation, TravelEdge};
use crate::text::normalize_text;
use crate::tools::{Gazetteer, ToolArgs, ToolCall, ToolExecutor, ToolId, ToolPayload, ToolResponse, ToolStatus};

pub const DEFAULT_MAX_STEPS: u32 = 32;
pub const DEFAULT_MAX_CANDIDATES: usize = 6;
pub const TRACE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AgentError {
    #[error("max_steps must be at least 1")]
    ZeroSteps,
    #[error("observation for {0:?}, which was never requested")]
    Protocol(Need),
    #[error("cannot both lock and exclude {0:?}")]
    LockExcludeConflict(String),
    #[error("{0:?} is not on the session shortlist")]
    NotShortlisted(String),
    #[error("session is not complete ({0}); only complete sessions can be refined")]
    NotComplete(&'static str),
    #[error("budget currency {got} differs from session currency {expected}")]
    Currency { got: Currency, expected: Currency },
    #[error("invalid window: {0}")]
    Window(String),
    #[error("trace is inconsistent: {0}")]
    Trace(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// Structured request extracted from the user's message and image.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub destination: Option<String>,
    pub days: Option<u32>,
    pub budget: Option<Money>,
    pub group_size: Option<u32>,
    #[serde(default)]
    pub access: BTreeSet<AccessFlag>,
    pub day: Option<Weekday>,
    #[serde(default)]
    pub wants_reviews: bool,
    /// Place recognized in the image.
    pub landmark: Option<String>,
    /// Place named in the text.
    pub landmark_mention: Option<String>,
    pub visual: Option<String>,
    #[serde(default)]
    pub remainder: String,
}

impl QuerySpec {
    fn resolved_anything(&self) -> bool {
        self.destination.is_some()
            || self.days.is_some()
            || self.budget.is_some()
            || self.group_size.is_some()
            || !self.access.is_empty()
            || self.day.is_some()
            || self.landmark.is_some()
            || self.landmark_mention.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clarification {
    pub missing: Vec<String>,
    pub question: String,
}

impl Clarification {
    fn for_fields(missing: Vec<String>) -> Self {
        let question = match missing.iter().map(String::as_str).collect::<Vec<_>>()[..] {
            ["destination", "budget"] => "Which city are you visiting, and what is your budget?".to_string(),
            ["destination"] => "Which city are you visiting?".to_string(),
            ["budget"] => "What is your budget for the trip?".to_string(),
            _ => "Could you tell me where you are going, for how long and on what budget?".to_string(),
        };
        Clarification { missing, question }
    }
}

/// Maps an image descriptor to a place id.
pub trait Recognizer {
    fn recognize(&self, descriptor: &str) -> Option<String>;
}

/// Reference recognizer: a lookup table from image uri or file name to
/// place id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LookupRecognizer {
    table: BTreeMap<String, String>,
}

impl LookupRecognizer {
    pub fn new(table: BTreeMap<String, String>) -> Self {
        LookupRecognizer { table }
    }

    pub fn from_catalog(catalog: &PoiStore) -> Self {
        let mut table = BTreeMap::new();
        for p in catalog.iter() {
            for img in &p.images {
                table.insert(img.uri.clone(), p.id.clone());
                let base = img.uri.rsplit(['/', '\\']).next().unwrap_or(&img.uri);
                table.entry(base.to_string()).or_insert_with(|| p.id.clone());
            }
        }
        LookupRecognizer { table }
    }
}

impl Recognizer for LookupRecognizer {
    fn recognize(&self, descriptor: &str) -> Option<String> {
        let base = descriptor.rsplit(['/', '\\']).next().unwrap_or(descriptor);
        self.table.get(descriptor).or_else(|| self.table.get(base)).cloned()
    }
}

fn number_word(w: &str) -> Option<u32> {
    const WORDS: [&str; 12] =
        ["one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve"];
    if let Ok(n) = w.parse::<u32>() {
        return Some(n);
    }
    WORDS.iter().position(|x| *x == w).map(|i| i as u32 + 1)
}

fn currency_word(w: &str) -> Option<Currency> {
    Some(match w {
        "usd" | "dollar" | "dollars" | "bucks" => Currency::USD,
        "eur" | "euro" | "euros" => Currency::EUR,
        "gbp" | "pound" | "pounds" | "quid" => Currency::GBP,
        "jpy" | "yen" => Currency::JPY,
        "cny" | "yuan" | "rmb" => Currency::CNY,
        _ => return None,
    })
}

fn currency_symbol(c: char) -> Option<Currency> {
    Some(match c {
        '$' => Currency::USD,
        '€' => Currency::EUR,
        '£' => Currency::GBP,
        '¥' => Currency::JPY,
        _ => return None,
    })
}

const PEOPLE_WORDS: [&str; 11] =
    ["people", "persons", "person", "travellers", "travelers", "adults", "guests", "friends", "pax", "of", "kids"];

/// Grammar-based extraction of trip constraints.
///
/// Recognizes day counts ("3 days", "3-day", "weekend"), amounts with a
/// currency symbol, code or word ("$500", "300 euros", "GBP 80"), group
/// sizes ("for 2 people", "family of 4", "couple", "solo"), weekdays,
/// accessibility needs, review-quality wording, and city and place names
/// from the gazetteer. The image, if any, is resolved by the recognizer.
pub fn analyze_query(
    message: &str,
    visual: Option<&str>,
    gazetteer: &Gazetteer,
    recognizer: &dyn Recognizer,
) -> Result<QuerySpec, Clarification> {
    let lower = message.to_lowercase();
    let words: Vec<&str> = lower
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| matches!(c, ',' | '.' | ';' | ':' | '!' | '?' | '(' | ')' | '"')))
        .filter(|w| !w.is_empty())
        .collect();
    let mut used = alloc::vec![false; words.len()];
    let mut spec = QuerySpec::default();

    let mut i = 0;
    while i < words.len() {
        let w = words[i];
        let next = words.get(i + 1).copied();
        // amounts
        if let Some(cur) = w.chars().next().and_then(currency_symbol) {
            if let Some(minor) = parse_amount(&w[w.chars().next().map_or(0, char::len_utf8)..], cur.exponent()) {
                spec.budget.get_or_insert(Money::new(minor, cur));
                used[i] = true;
                i += 1;
                continue;
            }
        }
        if let (Some(cur), Some(n)) = (currency_word(w), next) {
            if let Some(minor) = parse_amount(n, cur.exponent()) {
                spec.budget.get_or_insert(Money::new(minor, cur));
                used[i] = true;
                used[i + 1] = true;
                i += 2;
                continue;
            }
        }
        if let Some(cur) = next.and_then(currency_word) {
            if let Some(minor) = parse_amount(w, cur.exponent()) {
                spec.budget.get_or_insert(Money::new(minor, cur));
                used[i] = true;
                used[i + 1] = true;
                i += 2;
                continue;
            }
        }
        // "3-day"
        if let Some((n, rest)) = w.split_once('-') {
            if matches!(rest, "day" | "days") {
                if let Some(n) = number_word(n) {
                    spec.days.get_or_insert(n);
                    used[i] = true;
                }
            }
        }
        if let Some(n) = number_word(w) {
            match next {
                Some("day" | "days") => {
                    spec.days.get_or_insert(n);
                    used[i] = true;
                    used[i + 1] = true;
                    i += 2;
                    continue;
                }
                Some(p) if PEOPLE_WORDS.contains(&p) && p != "of" => {
                    spec.group_size.get_or_insert(n);
                    if i > 0 && words[i - 1] == "for" {
                        used[i - 1] = true;
                    }
                    used[i] = true;
                    used[i + 1] = true;
                    i += 2;
                    continue;
                }
                Some("of") if words.get(i + 2) == Some(&"us") => {
                    spec.group_size.get_or_insert(n);
                    used[i..i + 3].iter_mut().for_each(|u| *u = true);
                    i += 3;
                    continue;
                }
                _ => {}
            }
        }
        if matches!(w, "family" | "party" | "group") && next == Some("of") {
            if let Some(n) = words.get(i + 2).and_then(|x| number_word(x)) {
                spec.group_size.get_or_insert(n);
                used[i..i + 3].iter_mut().for_each(|u| *u = true);
                i += 3;
                continue;
            }
        }
        match w {
            "couple" => spec.group_size = spec.group_size.or(Some(2)),
            "solo" | "alone" | "myself" => spec.group_size = spec.group_size.or(Some(1)),
            "weekend" => spec.days = spec.days.or(Some(2)),
            "wheelchair" => {
                spec.access.insert(AccessFlag::Wheelchair);
            }
            "elderly" | "senior" | "seniors" | "grandparents" | "grandma" | "grandpa" => {
                spec.access.insert(AccessFlag::ElderFriendly);
            }
            "stroller" | "pram" | "buggy" | "toddler" | "baby" => {
                spec.access.insert(AccessFlag::StrollerFriendly);
            }
            "step-free" | "stepfree" => {
                spec.access.insert(AccessFlag::StepFree);
            }
            "stairs" if i > 0 && words[i - 1] == "no" => {
                spec.access.insert(AccessFlag::StepFree);
                used[i - 1] = true;
            }
            "best" | "top" | "rated" | "reviews" | "review" | "popular" | "highly" => spec.wants_reviews = true,
            _ => {
                let day = Weekday::from_name(w).or_else(|| w.strip_suffix('s').and_then(Weekday::from_name));
                match day {
                    Some(d) => spec.day = spec.day.or(Some(d)),
                    None => {
                        i += 1;
                        continue;
                    }
                }
            }
        }
        used[i] = true;
        i += 1;
    }

    spec.destination = gazetteer.find_city(message).map(String::from);
    spec.landmark_mention = gazetteer.find_place(message).map(String::from);
    let claimed: BTreeSet<String> = [spec.destination.as_deref(), spec.landmark_mention.as_deref()]
        .into_iter()
        .flatten()
        .flat_map(|n| {
            let names: Vec<String> = gazetteer
                .entries()
                .filter(|e| e.city.as_deref() == Some(n) || e.poi_id.as_deref() == Some(n))
                .map(|e| normalize_text(&e.name))
                .collect();
            names
        })
        .flat_map(|n| n.split(' ').map(String::from).collect::<Vec<_>>())
        .collect();
    spec.remainder = words
        .iter()
        .zip(&used)
        .filter(|(w, u)| !**u && !claimed.contains(&normalize_text(w)))
        .map(|(w, _)| *w)
        .collect::<Vec<_>>()
        .join(" ");

    let visual = visual.map(str::trim).filter(|v| !v.is_empty());
    spec.visual = visual.map(String::from);
    spec.landmark = visual.and_then(|v| recognizer.recognize(v));
    if !spec.resolved_anything() && visual.is_none() {
        return Err(Clarification::for_fields(alloc::vec!["destination".into(), "budget".into()]));
    }
    Ok(spec)
}

/// A piece of information the plan still needs. The derived order is the
/// tool-selection priority: locate, then hours, price, transit and reviews,
/// each by place id.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "need", rename_all = "snake_case")]
pub enum Need {
    Locate,
    Hours { poi_id: String },
    Price { poi_id: String },
    Transit { from: String, to: String },
    Reviews { poi_id: String },
}

impl Need {
    pub fn tool(&self) -> ToolId {
        match self {
            Need::Locate => ToolId::MapLocate,
            Need::Hours { .. } => ToolId::Hours,
            Need::Price { .. } => ToolId::Price,
            Need::Transit { .. } => ToolId::Transit,
            Need::Reviews { .. } => ToolId::Reviews,
        }
    }

    /// Whether the plan is incomplete while this need is pending. Missing
    /// transit falls back to walking time and reviews only refine ranking.
    pub fn blocking(&self) -> bool {
        matches!(self, Need::Locate | Need::Hours { .. } | Need::Price { .. })
    }

    fn of_payload(p: &ToolPayload) -> Need {
        match p {
            ToolPayload::Located { .. } => Need::Locate,
            ToolPayload::Hours { poi_id, .. } => Need::Hours { poi_id: poi_id.clone() },
            ToolPayload::Price { poi_id, .. } => Need::Price { poi_id: poi_id.clone() },
            ToolPayload::Transit { from, to, .. } => {
                let (from, to) = if from <= to { (from, to) } else { (to, from) };
                Need::Transit { from: from.clone(), to: to.clone() }
            }
            ToolPayload::Reviews { poi_id, .. } => Need::Reviews { poi_id: poi_id.clone() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocateQuery {
    pub text: Option<String>,
    pub image: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandmarkSource {
    Recognizer,
    Text,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Landmark {
    pub poi_id: String,
    pub source: LandmarkSource,
}

/// A tool result applied to the plan at step `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub t: u32,
    pub tool: ToolId,
    pub request: ToolCall,
    pub payload: ToolPayload,
}

impl Observation {
    /// Builds an observation from an `ok` response whose payload matches the
    /// requested tool.
    pub fn from_response(t: u32, request: &ToolCall, response: &ToolResponse) -> Option<Observation> {
        let payload = response.payload.clone().filter(|p| response.status == ToolStatus::Ok && p.tool() == request.tool)?;
        Some(Observation { t, tool: request.tool, request: request.clone(), payload })
    }

    pub fn need(&self) -> Need {
        Need::of_payload(&self.payload)
    }
}

mod entries {
    use alloc::collections::BTreeMap;
    use alloc::vec::Vec;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S, K, V>(m: &BTreeMap<K, V>, s: S) -> Result<S::Ok, S::Error>
    where
        S: Serializer,
        K: Serialize,
        V: Serialize,
    {
        s.collect_seq(m.iter())
    }

    pub fn deserialize<'de, D, K, V>(d: D) -> Result<BTreeMap<K, V>, D::Error>
    where
        D: Deserializer<'de>,
        K: Deserialize<'de> + Ord,
        V: Deserialize<'de>,
    {
        Ok(Vec::<(K, V)>::deserialize(d)?.into_iter().collect())
    }
}

/// The evolving plan: what is known, what is still needed and the draft
/// planning instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanState {
    pub t: u32,
    pub constraints: ConstraintSet,
    pub days: u32,
    pub wants_reviews: bool,
    pub locate: Option<LocateQuery>,
    pub landmark: Option<Landmark>,
    /// Candidate place ids, sorted.
    pub shortlist: Vec<String>,
    /// Candidate skeletons; hours and prices are filled only from tool
    /// observations.
    pub draft: BTreeMap<String, Poi>,
    /// Travel minutes keyed by the ordered id pair.
    #[serde(with = "entries")]
    pub travel: BTreeMap<(String, String), u32>,
    pub pending: BTreeSet<Need>,
    #[serde(with = "entries")]
    pub resolved: BTreeMap<Need, ToolPayload>,
    #[serde(with = "entries")]
    pub unresolvable: BTreeMap<Need, ToolStatus>,
    #[serde(default)]
    pub locked: BTreeSet<String>,
    #[serde(default)]
    pub excluded: BTreeSet<String>,
}

impl PlanState {
    pub fn blocking_pending(&self) -> Vec<Need> {
        self.pending.iter().filter(|n| n.blocking()).cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Call(ToolCall),
    Finish,
}

fn request_args(state: &PlanState, need: &Need) -> ToolArgs {
    match need {
        Need::Locate => {
            let q = state.locate.clone().unwrap_or(LocateQuery { text: None, image: None });
            ToolArgs::Locate { text: q.text, image: q.image }
        }
        Need::Hours { poi_id } | Need::Price { poi_id } | Need::Reviews { poi_id } => {
            ToolArgs::Poi { poi_id: poi_id.clone() }
        }
        Need::Transit { from, to } => ToolArgs::Pair { from: from.clone(), to: to.clone() },
    }
}

/// Fixed-priority tool policy: the first pending need in [`Need`] order, or
/// finish when nothing is pending.
pub fn select_tool(state: &PlanState) -> Action {
    match state.pending.first() {
        None => Action::Finish,
        Some(need) => Action::Call(ToolCall {
            request_id: format!("t{:03}", state.t + 1),
            tool: need.tool(),
            args: request_args(state, need),
        }),
    }
}

fn grid_up(minutes: u32) -> u32 {
    let g = u32::from(GRID_MINUTES);
    minutes.div_ceil(g) * g
}

/// Applies one observation. The need moves from pending to resolved and the
/// draft absorbs the payload; a repeated observation only advances `t`.
pub fn update_plan(state: &PlanState, obs: &Observation) -> Result<PlanState, AgentError> {
    let need = obs.need();
    let mut next = state.clone();
    next.t += 1;
    if next.resolved.contains_key(&need) {
        return Ok(next);
    }
    if !next.pending.remove(&need) {
        return Err(AgentError::Protocol(need));
    }
    match &obs.payload {
        ToolPayload::Located { poi_id, .. } => {
            next.landmark = Some(Landmark { poi_id: poi_id.clone(), source: LandmarkSource::Tool });
        }
        ToolPayload::Hours { poi_id, hours } => {
            if let Some(p) = next.draft.get_mut(poi_id) {
                p.hours = hours.clone();
            }
        }
        ToolPayload::Price { poi_id, price } => {
            if let Some(p) = next.draft.get_mut(poi_id) {
                p.price = *price;
            }
        }
        ToolPayload::Transit { from, to, minutes, .. } => {
            let key = if from <= to { (from.clone(), to.clone()) } else { (to.clone(), from.clone()) };
            next.travel.insert(key, grid_up(*minutes));
        }
        ToolPayload::Reviews { .. } => {}
    }
    next.resolved.insert(need, obs.payload.clone());
    Ok(next)
}

/// Records a need whose tool answered with a non-ok status. Nothing is
/// invented for it.
pub fn mark_unresolvable(state: &PlanState, need: &Need, status: ToolStatus) -> PlanState {
    let mut next = state.clone();
    next.t += 1;
    if next.pending.remove(need) {
        next.unresolvable.insert(need.clone(), status);
    }
    next
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub max_steps: u32,
    pub beam_width: BeamWidth,
    pub seed: u64,
    pub max_candidates: usize,
    /// Weekday of the first planned day unless the query names one.
    pub day: Weekday,
    pub day_window: TimeWindow,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            max_steps: DEFAULT_MAX_STEPS,
            beam_width: BeamWidth::default(),
            seed: 0,
            max_candidates: DEFAULT_MAX_CANDIDATES,
            day: Weekday::Sat,
            day_window: TimeWindow { start: 540, end: 1260 },
        }
    }
}

/// Agent-side knowledge: the place catalog (locations, durations, interest
/// and accessibility), the gazetteer and the image recognizer. Hours and
/// prices in the catalog inform reasoning only; plans use tool results.
#[derive(Clone, Copy)]
pub struct Adapters<'a> {
    pub catalog: &'a PoiStore,
    pub gazetteer: &'a Gazetteer,
    pub recognizer: &'a dyn Recognizer,
}

fn skeleton(p: &Poi) -> Poi {
    let mut s = p.clone();
    s.hours.clear();
    s.price = Money::zero(p.price.currency);
    s
}

/// Plan state before any tool call, plus the reasoning chain over the
/// shortlist. Asks for clarification instead of guessing a destination or a
/// budget.
pub fn initial_state(
    spec: &QuerySpec,
    message: &str,
    cfg: &SessionConfig,
    adapters: Adapters<'_>,
) -> Result<(PlanState, CoTChain), Clarification> {
    let catalog = adapters.catalog;
    let guess = spec
        .landmark
        .as_deref()
        .map(|id| (id, LandmarkSource::Recognizer))
        .or(spec.landmark_mention.as_deref().map(|id| (id, LandmarkSource::Text)))
        .filter(|(id, _)| catalog.get(id).is_some());
    let destination = spec.destination.clone().or_else(|| guess.and_then(|(id, _)| catalog.get(id)).map(|p| p.city.clone()));
    let mut missing = Vec::new();
    if destination.is_none() {
        missing.push("destination".to_string());
    }
    if spec.budget.is_none() {
        missing.push("budget".to_string());
    }
    let (Some(destination), Some(budget)) = (destination, spec.budget) else {
        return Err(Clarification::for_fields(missing));
    };

    let constraints = ConstraintSet {
        day: spec.day.unwrap_or(cfg.day),
        day_window: cfg.day_window,
        budget: Some(budget),
        group_size: spec.group_size.unwrap_or(1).max(1),
        required_access: spec.access.clone(),
    };
    let accessible = |p: &Poi| constraints.required_access.iter().all(|f| p.accessibility.contains(f));
    let mut ranked: Vec<&Poi> =
        catalog.in_city(&destination).filter(|p| accessible(p) && p.price.currency == budget.currency).collect();
    ranked.sort_by(|a, b| b.utility.cmp(&a.utility).then_with(|| a.id.cmp(&b.id)));
    let mut shortlist: Vec<&Poi> = ranked.iter().copied().take(cfg.max_candidates).collect();
    if let Some((id, _)) = guess {
        if !shortlist.iter().any(|p| p.id == id) {
            if let Some(p) = ranked.iter().find(|p| p.id == id) {
                if shortlist.len() == cfg.max_candidates {
                    shortlist.pop();
                }
                shortlist.push(p);
            }
        }
    }
    shortlist.sort_by(|a, b| a.id.cmp(&b.id));
    let ids: Vec<String> = shortlist.iter().map(|p| p.id.clone()).collect();

    let chain = if ids.is_empty() {
        CoTChain::default()
    } else {
        let query = if message.trim().is_empty() { None } else { Some(message.to_string()) };
        let visual = spec.visual.clone().or_else(|| query.is_none().then(|| "(no image)".into()));
        let mut ctx = QueryContext::new(query, visual, catalog.subset(ids.iter().map(String::as_str)), constraints.clone())
            .map_err(|_| Clarification::for_fields(Vec::new()))?;
        if let Some((id, _)) = guess {
            ctx = ctx.with_anchor(id);
        }
        reference_reason(&ctx).unwrap_or_default()
    };

    let mut pending = BTreeSet::new();
    let locate = (spec.visual.is_some() || spec.landmark_mention.is_some()).then(|| LocateQuery {
        text: spec.landmark_mention.as_ref().and_then(|id| catalog.get(id)).map(|p| p.name.clone()),
        image: spec.visual.clone(),
    });
    if locate.is_some() {
        pending.insert(Need::Locate);
    }
    for step in &chain.temporal {
        pending.extend(step.refs.iter().map(|id| Need::Hours { poi_id: id.clone() }));
    }
    for step in &chain.practical {
        pending.extend(step.refs.iter().map(|id| Need::Price { poi_id: id.clone() }));
    }
    let walk: BTreeSet<&String> = chain.spatial.iter().flat_map(|s| s.refs.iter()).collect();
    let walk: Vec<&String> = walk.into_iter().collect();
    for (i, a) in walk.iter().enumerate() {
        for b in &walk[i + 1..] {
            pending.insert(Need::Transit { from: (*a).clone(), to: (*b).clone() });
        }
    }
    if spec.wants_reviews {
        pending.extend(ids.iter().map(|id| Need::Reviews { poi_id: id.clone() }));
    }

    let state = PlanState {
        t: 0,
        constraints,
        days: spec.days.unwrap_or(1).max(1),
        wants_reviews: spec.wants_reviews,
        locate,
        landmark: guess.map(|(id, source)| Landmark { poi_id: id.into(), source }),
        shortlist: ids,
        draft: shortlist.iter().map(|p| (p.id.clone(), skeleton(p))).collect(),
        travel: BTreeMap::new(),
        pending,
        resolved: BTreeMap::new(),
        unresolvable: BTreeMap::new(),
        locked: BTreeSet::new(),
        excluded: BTreeSet::new(),
    };
    Ok((state, chain))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Complete,
    /// Steps ran out with blocking needs unresolved; the plan covers only
    /// what was resolved.
    Incomplete { unresolved: Vec<Need> },
    /// Locked places cannot all be scheduled.
    InfeasibleLock { locked: Vec<String> },
    Clarification(Clarification),
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Complete => "complete",
            Outcome::Incomplete { .. } => "incomplete",
            Outcome::InfeasibleLock { .. } => "infeasible-lock",
            Outcome::Clarification(_) => "clarification",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayVerdict {
    pub day: Weekday,
    pub violations: Vec<PlanViolation>,
}

/// The integration step's result.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub days: Vec<DayPlan>,
    pub verdicts: Vec<DayVerdict>,
    pub total_cost: Option<Money>,
    pub outcome: Outcome,
    pub text: String,
}

impl Answer {
    pub fn all_feasible(&self) -> bool {
        self.verdicts.iter().all(|v| v.violations.is_empty())
    }
}

/// The planning instance implied by a plan state: shortlisted, non-excluded
/// places whose hours and price were both observed.
pub fn instance_from_state(state: &PlanState) -> Result<PlanInstance, AgentError> {
    let budget = state.constraints.budget.ok_or_else(|| AgentError::Trace("plan state has no budget".into()))?;
    let mut candidates = Vec::new();
    for id in &state.shortlist {
        let known = |n: Need| state.resolved.contains_key(&n);
        if state.excluded.contains(id)
            || !known(Need::Hours { poi_id: id.clone() })
            || !known(Need::Price { poi_id: id.clone() })
        {
            continue;
        }
        let Some(mut p) = state.draft.get(id).cloned() else { continue };
        if state.wants_reviews {
            if let Some(ToolPayload::Reviews { mean_rating: Some(r), .. }) =
                state.resolved.get(&Need::Reviews { poi_id: id.clone() })
            {
                p.utility += libm::round(*r) as u32;
            }
        }
        candidates.push(p);
    }
    let present: BTreeSet<&str> = candidates.iter().map(|p| p.id.as_str()).collect();
    let edges = state
        .travel
        .iter()
        .filter(|((a, b), _)| present.contains(a.as_str()) && present.contains(b.as_str()))
        .map(|((a, b), &m)| TravelEdge { from: a.clone(), to: b.clone(), minutes: m })
        .collect();
    Ok(PlanInstance {
        candidates,
        edges,
        day: state.constraints.day,
        day_window: state.constraints.day_window,
        budget,
        group_size: state.constraints.group_size,
        required_access: state.constraints.required_access.clone(),
        locked: BTreeSet::new(),
    })
}

/// Final integration: plans from the final state, checks every day with
/// [`feasible`], and writes the answer. Observations must agree with the
/// state, and the chain's conflict flags are carried into the answer.
pub fn generate(
    state: &PlanState,
    observations: &[Observation],
    chain: &CoTChain,
    beam_width: BeamWidth,
) -> Result<Answer, AgentError> {
    for o in observations {
        if state.resolved.get(&o.need()) != Some(&o.payload) {
            return Err(AgentError::Trace(format!("observation t={} is not reflected in the plan state", o.t)));
        }
    }
    let mut inst = instance_from_state(state)?;
    let present: BTreeSet<String> = inst.candidates.iter().map(|p| p.id.clone()).collect();
    let blocking = state.blocking_pending();
    let unplaceable: Vec<String> = state.locked.iter().filter(|id| !present.contains(*id)).cloned().collect();
    inst.locked = state.locked.iter().filter(|id| present.contains(*id)).cloned().collect();

    let mut weekdays = Vec::with_capacity(state.days as usize);
    let mut d = state.constraints.day;
    for _ in 0..state.days {
        weekdays.push(d);
        d = d.succ();
    }
    let planned = if unplaceable.is_empty() { plan_days(&inst, &weekdays, beam_width)? } else { None };

    let (days, outcome) = match planned {
        Some(days) if blocking.is_empty() => (days, Outcome::Complete),
        Some(days) => (days, Outcome::Incomplete { unresolved: blocking }),
        None if !blocking.is_empty() => (Vec::new(), Outcome::Incomplete { unresolved: blocking }),
        None => (Vec::new(), Outcome::InfeasibleLock { locked: state.locked.iter().cloned().collect() }),
    };

    let mut verdicts = Vec::with_capacity(days.len());
    let mut total: Option<Money> = None;
    for dp in &days {
        let mut day_inst = inst.clone();
        day_inst.day = dp.day;
        day_inst.budget = dp.budget;
        day_inst.locked.clear();
        let mut violations = feasible(&dp.itinerary, &day_inst)?.violations;
        let sum = match total {
            Some(t) => t.checked_add(dp.itinerary.total_cost).map_err(PlanError::from)?,
            None => dp.itinerary.total_cost,
        };
        total = Some(sum);
        if sum.amount > inst.budget.amount {
            violations.push(PlanViolation::Budget { total: sum.amount, budget: inst.budget.amount });
        }
        verdicts.push(DayVerdict { day: dp.day, violations });
    }
    let visited: BTreeSet<&str> = days.iter().flat_map(|d| d.itinerary.ids()).collect();
    if let (Some(last), Outcome::Complete) = (verdicts.last_mut(), &outcome) {
        for id in &inst.locked {
            if !visited.contains(id.as_str()) {
                last.violations.push(PlanViolation::MissingLocked { poi_id: id.clone() });
            }
        }
    }

    let text = compose_answer(state, observations, chain, &days, total, &outcome);
    Ok(Answer { days, verdicts, total_cost: total, outcome, text })
}

fn compose_answer(
    state: &PlanState,
    observations: &[Observation],
    chain: &CoTChain,
    days: &[DayPlan],
    total: Option<Money>,
    outcome: &Outcome,
) -> String {
    let mut s = String::new();
    let name = |id: &str| state.draft.get(id).map_or_else(|| id.to_string(), |p| p.name.clone());
    if let Some(l) = &state.landmark {
        let _ = writeln!(s, "Landmark: {} ({}).", name(&l.poi_id), l.poi_id);
    }
    for (i, dp) in days.iter().enumerate() {
        let _ = writeln!(s, "Day {} ({}):", i + 1, dp.day);
        if dp.itinerary.visits.is_empty() {
            let _ = writeln!(s, "  no feasible visits");
        }
        for v in &dp.itinerary.visits {
            let cost = state.draft.get(&v.poi_id).map(|p| p.price.times(state.constraints.group_size));
            let cost = match cost {
                Some(Ok(m)) => format!(" {m}"),
                _ => String::new(),
            };
            let _ = writeln!(s, "  {}-{} {}{}", Clock(v.start), Clock(v.end), name(&v.poi_id), cost);
        }
    }
    if let (Some(t), Some(b)) = (total, state.constraints.budget) {
        let _ = writeln!(s, "Total {t} of a {b} budget for {} traveller(s).", state.constraints.group_size);
    }
    let conflicts: Vec<String> = chain
        .temporal
        .iter()
        .filter(|st| st.payload == Some(StepPayload::Closed))
        .flat_map(|st| st.refs.iter().map(|r| name(r)))
        .collect();
    if !conflicts.is_empty() {
        let _ = writeln!(s, "Expected timing conflicts: {}.", conflicts.join(", "));
    }
    let _ = writeln!(
        s,
        "Based on {} tool observations and {}/{}/{} spatial/temporal/practical reasoning steps.",
        observations.len(),
        chain.spatial.len(),
        chain.temporal.len(),
        chain.practical.len()
    );
    match outcome {
        Outcome::Complete => {}
        Outcome::Incomplete { unresolved } => {
            let _ = writeln!(s, "Incomplete: {} needs were still unresolved.", unresolved.len());
        }
        Outcome::InfeasibleLock { locked } => {
            let _ = writeln!(s, "No plan can include every locked place: {}.", locked.join(", "));
        }
        Outcome::Clarification(c) => {
            let _ = writeln!(s, "{}", c.question);
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub call: ToolCall,
    pub response: ToolResponse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Refinement {
    Budget { budget: Money },
    Lock { poi_id: String },
    Exclude { poi_id: String },
    ShiftWindow { start: u16, end: u16 },
}

/// Audit record of one session; replaying it against the same fixtures
/// reproduces it exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTrace {
    pub format_version: u32,
    pub message: String,
    pub visual: Option<String>,
    pub config: SessionConfig,
    pub query: QuerySpec,
    pub chain: CoTChain,
    pub initial_state: Option<PlanState>,
    pub steps: Vec<TraceStep>,
    pub observations: Vec<Observation>,
    /// Final plan state, after any refinements.
    pub state: Option<PlanState>,
    #[serde(default)]
    pub refinements: Vec<Refinement>,
    pub answer: Answer,
}

impl SessionTrace {
    pub fn outcome(&self) -> &Outcome {
        &self.answer.outcome
    }
}

fn clarification_trace(message: &str, visual: Option<&str>, cfg: &SessionConfig, query: QuerySpec, c: Clarification) -> SessionTrace {
    let text = format!("{}\n", c.question);
    SessionTrace {
        format_version: TRACE_FORMAT_VERSION,
        message: message.into(),
        visual: visual.map(String::from),
        config: cfg.clone(),
        query,
        chain: CoTChain::default(),
        initial_state: None,
        steps: Vec::new(),
        observations: Vec::new(),
        state: None,
        refinements: Vec::new(),
        answer: Answer { days: Vec::new(), verdicts: Vec::new(), total_cost: None, outcome: Outcome::Clarification(c), text },
    }
}

/// One full session: analyze, reason, run the tool loop until finish or
/// `max_steps`, then integrate.
pub fn run_session(
    message: &str,
    visual: Option<&str>,
    cfg: &SessionConfig,
    adapters: Adapters<'_>,
    tools: &mut dyn ToolExecutor,
) -> Result<SessionTrace, AgentError> {
    if cfg.max_steps == 0 {
        return Err(AgentError::ZeroSteps);
    }
    let query = match analyze_query(message, visual, adapters.gazetteer, adapters.recognizer) {
        Ok(q) => q,
        Err(c) => return Ok(clarification_trace(message, visual, cfg, QuerySpec::default(), c)),
    };
    let (initial, chain) = match initial_state(&query, message, cfg, adapters) {
        Ok(x) => x,
        Err(c) => return Ok(clarification_trace(message, visual, cfg, query, c)),
    };

    let mut state = initial.clone();
    let mut steps = Vec::new();
    let mut observations = Vec::new();
    while state.t < cfg.max_steps {
        let Action::Call(call) = select_tool(&state) else { break };
        let need = state.pending.first().cloned().ok_or_else(|| AgentError::Trace("empty pending set".into()))?;
        let response = tools.execute(&call);
        state = match Observation::from_response(state.t + 1, &call, &response) {
            Some(obs) if obs.need() == need => {
                let next = update_plan(&state, &obs)?;
                observations.push(obs);
                next
            }
            Some(_) => mark_unresolvable(&state, &need, ToolStatus::BadRequest),
            None => {
                let status = if response.status == ToolStatus::Ok { ToolStatus::BadRequest } else { response.status };
                mark_unresolvable(&state, &need, status)
            }
        };
        steps.push(TraceStep { call, response });
    }
    let answer = generate(&state, &observations, &chain, cfg.beam_width)?;
    Ok(SessionTrace {
        format_version: TRACE_FORMAT_VERSION,
        message: message.into(),
        visual: visual.map(String::from),
        config: cfg.clone(),
        query,
        chain,
        initial_state: Some(initial),
        steps,
        observations,
        state: Some(state),
        refinements: Vec::new(),
        answer,
    })
}

/// Applies a refinement to a plan state without any tool calls.
pub fn apply_refinement(state: &PlanState, r: &Refinement) -> Result<PlanState, AgentError> {
    let mut next = state.clone();
    let on_shortlist = |id: &str| state.shortlist.iter().any(|s| s == id);
    match r {
        Refinement::Budget { budget } => {
            let expected = state.constraints.budget.map(|b| b.currency);
            if let Some(expected) = expected.filter(|c| *c != budget.currency) {
                return Err(AgentError::Currency { got: budget.currency, expected });
            }
            next.constraints.budget = Some(*budget);
        }
        Refinement::Lock { poi_id } => {
            if state.excluded.contains(poi_id) {
                return Err(AgentError::LockExcludeConflict(poi_id.clone()));
            }
            if !on_shortlist(poi_id) {
                return Err(AgentError::NotShortlisted(poi_id.clone()));
            }
            next.locked.insert(poi_id.clone());
        }
        Refinement::Exclude { poi_id } => {
            if state.locked.contains(poi_id) {
                return Err(AgentError::LockExcludeConflict(poi_id.clone()));
            }
            if !on_shortlist(poi_id) {
                return Err(AgentError::NotShortlisted(poi_id.clone()));
            }
            next.excluded.insert(poi_id.clone());
        }
        Refinement::ShiftWindow { start, end } => {
            next.constraints.day_window =
                TimeWindow::new(*start, *end).map_err(|e| AgentError::Window(e.to_string()))?;
        }
    }
    Ok(next)
}

/// Re-plans a finished session under one more constraint, reusing every
/// resolved observation.
pub fn refine_session(trace: &SessionTrace, refinement: &Refinement) -> Result<SessionTrace, AgentError> {
    let state = match (&trace.answer.outcome, &trace.state) {
        (Outcome::Complete | Outcome::InfeasibleLock { .. }, Some(s)) => s,
        (o, _) => return Err(AgentError::NotComplete(o.label())),
    };
    let next = apply_refinement(state, refinement)?;
    let answer = generate(&next, &trace.observations, &trace.chain, trace.config.beam_width)?;
    let mut out = trace.clone();
    out.state = Some(next);
    out.refinements.push(refinement.clone());
    out.answer = answer;
    Ok(out)
}

/// Re-runs a session and its refinements from the recorded inputs.
pub fn replay(
    trace: &SessionTrace,
    adapters: Adapters<'_>,
    tools: &mut dyn ToolExecutor,
) -> Result<SessionTrace, AgentError> {
    let mut out = run_session(&trace.message, trace.visual.as_deref(), &trace.config, adapters, tools)?;
    for r in &trace.refinements {
        out = refine_session(&out, r)?;
    }
    Ok(out)
}

/// Recomputes the answer from the recorded initial state, tool exchanges,
/// refinements and chain alone; the message and query are not consulted.
/// Fails if the recorded final state does not follow from the record.
pub fn regenerate(trace: &SessionTrace) -> Result<Answer, AgentError> {
    let Some(mut state) = trace.initial_state.clone() else {
        return Ok(trace.answer.clone());
    };
    let mut observations = trace.observations.iter();
    for step in &trace.steps {
        let need = state.pending.first().cloned().ok_or_else(|| AgentError::Trace("step with nothing pending".into()))?;
        state = match Observation::from_response(state.t + 1, &step.call, &step.response) {
            Some(obs) if obs.need() == need => {
                if observations.next() != Some(&obs) {
                    return Err(AgentError::Trace(format!("observation list diverges at t={}", obs.t)));
                }
                update_plan(&state, &obs)?
            }
            Some(_) => mark_unresolvable(&state, &need, ToolStatus::BadRequest),
            None => {
                let s = if step.response.status == ToolStatus::Ok { ToolStatus::BadRequest } else { step.response.status };
                mark_unresolvable(&state, &need, s)
            }
        };
    }
    for r in &trace.refinements {
        state = apply_refinement(&state, r)?;
    }
    if Some(&state) != trace.state.as_ref() {
        return Err(AgentError::Trace("final plan state does not follow from the recorded steps".into()));
    }
    generate(&state, &trace.observations, &trace.chain, trace.config.beam_width)
}
