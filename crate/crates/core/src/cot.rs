//! Three-part reasoning chains: validation, a deterministic reference
//! reasoner, chain similarity and the joint loss bookkeeping.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::PoiStore;
use crate::geo::haversine_m;
use crate::model::{
    window_overlap, CoTChain, ConstraintSet, Money, Poi, ReasoningStep, StepPayload, TimeWindow, Verdict,
};
use crate::text::tokens;

pub const DEFAULT_LAMBDA: f64 = 1.0;
/// Largest per-step score two non-identical steps can earn, so that a
/// similarity of exactly 1 certifies identical chains.
pub const NON_IDENTICAL_CAP: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CotError {
    #[error("empty candidate set")]
    EmptyCandidates,
    #[error("context needs a query or a visual input")]
    NoInput,
    #[error("{name} must be a finite non-negative number, got {value}")]
    NegativeLoss { name: &'static str, value: f64 },
}

/// Everything the reasoner sees: the query text, an optional image
/// descriptor, the candidate places and the constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryContext {
    pub query: Option<String>,
    pub visual: Option<String>,
    pub candidates: PoiStore,
    pub constraints: ConstraintSet,
    /// Place the spatial walk starts from; the first candidate by id when
    /// unset or not a candidate.
    pub anchor: Option<String>,
}

impl QueryContext {
    pub fn new(
        query: Option<String>,
        visual: Option<String>,
        candidates: PoiStore,
        constraints: ConstraintSet,
    ) -> Result<Self, CotError> {
        let blank = |s: &Option<String>| s.as_deref().is_none_or(|s| s.trim().is_empty());
        if blank(&query) && blank(&visual) {
            return Err(CotError::NoInput);
        }
        Ok(QueryContext { query, visual, candidates, constraints, anchor: None })
    }

    pub fn with_anchor(mut self, anchor: impl Into<String>) -> Self {
        self.anchor = Some(anchor.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Spatial,
    Temporal,
    Practical,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Spatial, Component::Temporal, Component::Practical];

    pub fn symbol(self) -> &'static str {
        match self {
            Component::Spatial => "r_s",
            Component::Temporal => "r_t",
            Component::Practical => "r_p",
        }
    }

    pub fn of(self, chain: &CoTChain) -> &[ReasoningStep] {
        match self {
            Component::Spatial => &chain.spatial,
            Component::Temporal => &chain.temporal,
            Component::Practical => &chain.practical,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChainViolation {
    Missing { component: Component },
    UnresolvedRef { component: Component, step: usize, id: String },
    WindowInconsistent { step: usize, poi_id: String },
    ClosedInconsistent { step: usize, poi_id: String },
    DistanceMismatch { step: usize, stated: u64, computed: u64 },
    ArithmeticMismatch { component: Component, step: usize, stated: u64, computed: u64 },
}

impl fmt::Display for ChainViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChainViolation::Missing { component } => write!(f, "missing {}", component.symbol()),
            ChainViolation::UnresolvedRef { component, step, id } => {
                write!(f, "{} step {}: unresolved reference {id:?}", component.symbol(), step + 1)
            }
            ChainViolation::WindowInconsistent { step, poi_id } => {
                write!(f, "r_t step {}: window not within the hours of {poi_id}", step + 1)
            }
            ChainViolation::ClosedInconsistent { step, poi_id } => {
                write!(f, "r_t step {}: {poi_id} marked closed but has a usable window", step + 1)
            }
            ChainViolation::DistanceMismatch { step, stated, computed } => {
                write!(f, "r_s step {}: distance {stated} m, expected {computed} m", step + 1)
            }
            ChainViolation::ArithmeticMismatch { component, step, stated, computed } => write!(
                f,
                "{} step {}: arithmetic mismatch: stated {stated}, items sum to {computed}",
                component.symbol(),
                step + 1
            ),
        }
    }
}

/// Windows on the planned day, clipped to the day window, long enough for a
/// visit.
fn usable_windows(poi: &Poi, c: &ConstraintSet) -> Vec<TimeWindow> {
    poi.windows_on(c.day)
        .into_iter()
        .filter_map(|w| window_overlap(w, c.day_window))
        .filter(|w| w.len() >= poi.visit_duration)
        .collect()
}

fn clipped_windows(poi: &Poi, c: &ConstraintSet) -> Vec<TimeWindow> {
    poi.windows_on(c.day).into_iter().filter_map(|w| window_overlap(w, c.day_window)).collect()
}

const DISTANCE_TOLERANCE_M: u64 = 1;

pub fn validate_chain(chain: &CoTChain, ctx: &QueryContext) -> Verdict<ChainViolation> {
    let mut v = Vec::new();
    for component in Component::ALL {
        let steps = component.of(chain);
        if steps.is_empty() {
            v.push(ChainViolation::Missing { component });
        }
        for (i, step) in steps.iter().enumerate() {
            for id in &step.refs {
                if ctx.candidates.get(id).is_none() {
                    v.push(ChainViolation::UnresolvedRef { component, step: i, id: id.clone() });
                }
            }
            if let Some(StepPayload::Sum { items, total }) = &step.payload {
                let computed = items.iter().try_fold(0u64, |a, &x| a.checked_add(x)).unwrap_or(u64::MAX);
                if computed != *total {
                    v.push(ChainViolation::ArithmeticMismatch { component, step: i, stated: *total, computed });
                }
            }
        }
    }
    for (i, step) in chain.spatial.iter().enumerate() {
        if let (Some(StepPayload::Distance { meters }), [a, b]) = (&step.payload, step.refs.as_slice()) {
            if let (Some(a), Some(b)) = (ctx.candidates.get(a), ctx.candidates.get(b)) {
                let computed = libm::round(haversine_m(a.location, b.location)) as u64;
                if meters.abs_diff(computed) > DISTANCE_TOLERANCE_M {
                    v.push(ChainViolation::DistanceMismatch { step: i, stated: *meters, computed });
                }
            }
        }
    }
    for (i, step) in chain.temporal.iter().enumerate() {
        for id in &step.refs {
            let Some(poi) = ctx.candidates.get(id) else { continue };
            match &step.payload {
                Some(StepPayload::Window { start, end }) => {
                    let ok = start < end
                        && clipped_windows(poi, &ctx.constraints)
                            .iter()
                            .any(|w| w.start <= *start && *end <= w.end);
                    if !ok {
                        v.push(ChainViolation::WindowInconsistent { step: i, poi_id: id.clone() });
                    }
                }
                Some(StepPayload::Closed) if !usable_windows(poi, &ctx.constraints).is_empty() => {
                    v.push(ChainViolation::ClosedInconsistent { step: i, poi_id: id.clone() });
                }
                _ => {}
            }
        }
    }
    Verdict::from_violations(v)
}

/// Candidates in nearest-neighbour order from the anchor; ties go to the
/// smaller id.
pub fn nearest_neighbor_order(ctx: &QueryContext) -> Vec<&Poi> {
    let mut remaining: Vec<&Poi> = ctx.candidates.iter().collect();
    if remaining.is_empty() {
        return remaining;
    }
    let start = ctx
        .anchor
        .as_deref()
        .and_then(|a| remaining.iter().position(|p| p.id == a))
        .unwrap_or(0);
    let mut order = alloc::vec![remaining.remove(start)];
    while !remaining.is_empty() {
        let here = order[order.len() - 1].location;
        let mut best = 0;
        for i in 1..remaining.len() {
            if haversine_m(here, remaining[i].location) < haversine_m(here, remaining[best].location) {
                best = i;
            }
        }
        order.push(remaining.remove(best));
    }
    order
}

fn group_cost(poi: &Poi, c: &ConstraintSet) -> u64 {
    poi.price.amount.saturating_mul(u64::from(c.group_size.max(1)))
}

/// Deterministic stand-in for a learned reasoner.
///
/// Spatial steps walk the candidates in nearest-neighbour order from the
/// anchor. Temporal steps intersect each place's hours with the day window
/// and flag places with no window long enough for a visit. Practical steps
/// accumulate group cost over the feasible places and check accessibility
/// flags and the budget.
pub fn reference_reason(ctx: &QueryContext) -> Result<CoTChain, CotError> {
    if ctx.candidates.is_empty() {
        return Err(CotError::EmptyCandidates);
    }
    let c = &ctx.constraints;
    let order = nearest_neighbor_order(ctx);
    let mut chain = CoTChain::default();

    chain.spatial.push(
        ReasoningStep::new(format!("Start at {} ({}).", order[0].name, order[0].id))
            .with_ref(&order[0].id)
            .with_payload(StepPayload::Distance { meters: 0 }),
    );
    for pair in order.windows(2) {
        let meters = libm::round(haversine_m(pair[0].location, pair[1].location)) as u64;
        chain.spatial.push(
            ReasoningStep::new(format!("Next nearest is {}, {meters} m from {}.", pair[1].name, pair[0].name))
                .with_ref(&pair[0].id)
                .with_ref(&pair[1].id)
                .with_payload(StepPayload::Distance { meters }),
        );
    }

    let mut feasible: BTreeMap<&str, bool> = BTreeMap::new();
    for poi in &order {
        let usable = usable_windows(poi, c);
        let step = match usable.first() {
            Some(w) => ReasoningStep::new(format!(
                "{} is open {} on {} within the {} plan window; the visit takes {} minutes.",
                poi.name, w, c.day, c.day_window, poi.visit_duration
            ))
            .with_payload(StepPayload::Window { start: w.start, end: w.end }),
            None => ReasoningStep::new(format!(
                "Conflict: {} has no opening of {} minutes within {} on {}; marked infeasible.",
                poi.name, poi.visit_duration, c.day_window, c.day
            ))
            .with_payload(StepPayload::Closed),
        };
        feasible.insert(&poi.id, !usable.is_empty());
        chain.temporal.push(step.with_ref(&poi.id));
    }

    let mut items: Vec<u64> = Vec::new();
    for poi in &order {
        let mut text = if feasible[poi.id.as_str()] {
            let cost = group_cost(poi, c);
            items.push(cost);
            format!(
                "{} costs {} for {} traveller(s); running total {}.",
                poi.name,
                Money::new(cost, poi.price.currency),
                c.group_size.max(1),
                Money::new(items.iter().sum(), poi.price.currency)
            )
        } else {
            format!("{} is skipped as infeasible; running total unchanged.", poi.name)
        };
        let missing: Vec<String> =
            c.required_access.iter().filter(|f| !poi.accessibility.contains(f)).map(ToString::to_string).collect();
        if missing.is_empty() {
            if !c.required_access.is_empty() {
                text.push_str(" Accessibility needs are met.");
            }
        } else {
            text.push_str(&format!(" Lacks {}.", missing.join(", ")));
        }
        let total: u64 = items.iter().sum();
        if let Some(budget) = c.budget.filter(|b| total > b.amount) {
            text.push_str(&format!(" Exceeds the {budget} budget."));
        }
        chain.practical.push(
            ReasoningStep::new(text).with_ref(&poi.id).with_payload(StepPayload::Sum { items: items.clone(), total }),
        );
    }
    Ok(chain)
}

fn token_f1(a: &[String], b: &[String]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let mut counts: BTreeMap<&str, i64> = BTreeMap::new();
    for t in a {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0i64;
    for t in b {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let p = common as f64 / b.len() as f64;
    let r = common as f64 / a.len() as f64;
    2.0 * p * r / (p + r)
}

fn step_score(a: &ReasoningStep, b: &ReasoningStep, ta: &[String], tb: &[String]) -> f64 {
    if a == b {
        1.0
    } else {
        libm::fmin(token_f1(ta, tb), NON_IDENTICAL_CAP)
    }
}

/// Greedy best-match alignment score of `pred` against `gold` for one
/// component: summed step scores over the longer length, scaled by
/// `1 - inversions / (2 * C(m, 2))` for the `m` matched pairs.
fn directed_component(gold: &[ReasoningStep], pred: &[ReasoningStep]) -> f64 {
    match (gold.is_empty(), pred.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let gt: Vec<Vec<String>> = gold.iter().map(|s| tokens(&s.text)).collect();
    let pt: Vec<Vec<String>> = pred.iter().map(|s| tokens(&s.text)).collect();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, g) in gold.iter().enumerate() {
        for (j, p) in pred.iter().enumerate() {
            let s = step_score(g, p, &gt[i], &pt[j]);
            if s > 0.0 {
                pairs.push((s, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let (mut used_g, mut used_p) = (alloc::vec![false; gold.len()], alloc::vec![false; pred.len()]);
    let mut matched: Vec<(usize, usize, f64)> = Vec::new();
    for (s, i, j) in pairs {
        if !used_g[i] && !used_p[j] {
            used_g[i] = true;
            used_p[j] = true;
            matched.push((i, j, s));
        }
    }
    matched.sort_by_key(|m| m.0);
    let m = matched.len();
    let mut inversions = 0usize;
    for x in 0..m {
        for y in x + 1..m {
            if matched[x].1 > matched[y].1 {
                inversions += 1;
            }
        }
    }
    let order_factor = if m < 2 { 1.0 } else { 1.0 - 0.5 * inversions as f64 / (m * (m - 1) / 2) as f64 };
    let total: f64 = matched.iter().map(|t| t.2).sum();
    total / gold.len().max(pred.len()) as f64 * order_factor
}

/// Similarity of two chains in [0, 1]: the mean over the three components
/// of the symmetrized greedy alignment score. Equals 1 exactly when the
/// chains are component-wise identical.
pub fn chain_similarity(gold: &CoTChain, pred: &CoTChain) -> f64 {
    let per: f64 = Component::ALL
        .iter()
        .map(|c| {
            let (g, p) = (c.of(gold), c.of(pred));
            0.5 * (directed_component(g, p) + directed_component(p, g))
        })
        .sum();
    per / 3.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_cot: f64,
    pub l_ans: f64,
    pub lambda: f64,
    pub total: f64,
}

/// `total = lambda * l_cot + l_ans`.
pub fn combined_loss(l_cot: f64, l_ans: f64, lambda: f64) -> Result<LossBreakdown, CotError> {
    for (name, value) in [("l_cot", l_cot), ("l_ans", l_ans), ("lambda", lambda)] {
        if !(value.is_finite() && value >= 0.0) {
            return Err(CotError::NegativeLoss { name, value });
        }
    }
    Ok(LossBreakdown { l_cot, l_ans, lambda, total: lambda * l_cot + l_ans })
}

/// Chain-level loss proxy: one minus the similarity to the gold chain.
pub fn chain_loss(gold: &CoTChain, pred: &CoTChain) -> f64 {
    1.0 - chain_similarity(gold, pred)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AccessFlag, Category, Currency, DayHours, GeoPoint, Weekday};
    use alloc::vec;

    fn place(id: &str, lat: f64, lon: f64, hours: Option<(u16, u16)>, price: u64) -> Poi {
        Poi {
            id: id.into(),
            name: format!("Place {id}"),
            category: Category::Attractions,
            city: "Paris".into(),
            location: GeoPoint::from_degrees(lat, lon).unwrap(),
            hours: hours
                .map(|(s, e)| vec![DayHours { day: Weekday::Sat, window: TimeWindow { start: s, end: e } }])
                .unwrap_or_default(),
            price: Money::new(price, Currency::EUR),
            visit_duration: 60,
            utility: 5,
            accessibility: Default::default(),
            images: vec![],
        }
    }

    fn ctx(pois: Vec<Poi>) -> QueryContext {
        QueryContext::new(
            Some("a day in Paris".into()),
            None,
            PoiStore::from_pois(pois).unwrap(),
            ConstraintSet::for_day(Weekday::Sat),
        )
        .unwrap()
    }

    #[test]
    fn one_candidate() {
        let c = ctx(vec![place("a", 48.0, 2.0, Some((540, 1020)), 1000)]);
        let chain = reference_reason(&c).unwrap();
        assert_eq!((chain.spatial.len(), chain.temporal.len(), chain.practical.len()), (1, 1, 1));
        assert!(validate_chain(&chain, &c).is_ok());
    }

    #[test]
    fn empty_candidates_and_inputs() {
        let c = ctx(vec![]);
        assert_eq!(reference_reason(&c), Err(CotError::EmptyCandidates));
        assert_eq!(reference_reason(&c).unwrap_err().to_string(), "empty candidate set");
        let none = QueryContext::new(None, Some("  ".into()), PoiStore::default(), ConstraintSet::for_day(Weekday::Mon));
        assert_eq!(none, Err(CotError::NoInput));
    }

    #[test]
    fn closed_candidate_is_flagged() {
        let c = ctx(vec![place("a", 48.0, 2.0, None, 1000), place("b", 48.01, 2.0, Some((600, 700)), 500)]);
        let chain = reference_reason(&c).unwrap();
        assert_eq!(chain.temporal[0].payload, Some(StepPayload::Closed));
        assert!(chain.temporal[0].text.starts_with("Conflict"));
        assert_eq!(chain.practical.last().unwrap().payload, Some(StepPayload::Sum { items: vec![500], total: 500 }));
        assert!(validate_chain(&chain, &c).is_ok());
    }

    #[test]
    fn validator_catches_problems() {
        let c = ctx(vec![place("a", 48.0, 2.0, Some((540, 1020)), 1500), place("b", 48.0, 2.01, Some((540, 1020)), 2000)]);
        let mut chain = reference_reason(&c).unwrap();
        chain.temporal.clear();
        chain.practical.push(
            ReasoningStep::new("total").with_payload(StepPayload::Sum { items: vec![1500, 2000], total: 4500 }),
        );
        chain.spatial.push(ReasoningStep::new("ghost").with_ref("zzz"));
        let v = validate_chain(&chain, &c);
        let msgs: Vec<String> = v.violations.iter().map(ToString::to_string).collect();
        assert!(msgs.contains(&"missing r_t".to_string()), "{msgs:?}");
        assert!(msgs.iter().any(|m| m.contains("arithmetic mismatch")), "{msgs:?}");
        assert!(msgs.iter().any(|m| m.contains("unresolved reference \"zzz\"")), "{msgs:?}");

        let mut chain = reference_reason(&c).unwrap();
        chain.temporal[0].payload = Some(StepPayload::Window { start: 400, end: 600 });
        chain.temporal[1].payload = Some(StepPayload::Closed);
        let v = validate_chain(&chain, &c);
        assert_eq!(v.violations.len(), 2, "{:?}", v.violations);
    }

    #[test]
    fn accessibility_and_budget_are_checked() {
        let mut c = ctx(vec![place("a", 48.0, 2.0, Some((540, 1020)), 1500)]);
        c.constraints.required_access.insert(AccessFlag::Wheelchair);
        c.constraints.budget = Some(Money::new(1000, Currency::EUR));
        c.constraints.group_size = 2;
        let chain = reference_reason(&c).unwrap();
        let text = &chain.practical[0].text;
        assert!(text.contains("Lacks wheelchair") && text.contains("Exceeds"), "{text}");
        assert_eq!(chain.practical[0].payload, Some(StepPayload::Sum { items: vec![3000], total: 3000 }));
    }

    fn steps(texts: &[&str]) -> Vec<ReasoningStep> {
        texts.iter().map(|t| ReasoningStep::new(*t)).collect()
    }

    #[test]
    fn similarity_cases() {
        let g = CoTChain {
            spatial: steps(&["walk north to the tower", "then cross the river"]),
            temporal: steps(&["open until six"]),
            practical: steps(&["tickets cost ten"]),
        };
        assert_eq!(chain_similarity(&g, &g), 1.0);
        let disjoint = CoTChain {
            spatial: steps(&["zebra"]),
            temporal: steps(&["yak"]),
            practical: steps(&["xylophone"]),
        };
        assert_eq!(chain_similarity(&g, &disjoint), 0.0);
        // Both steps match exactly but in reverse: component score 2/2 * (1 - 1/2) = 0.5.
        let mut rev = g.clone();
        rev.spatial.reverse();
        let s = chain_similarity(&g, &rev);
        assert!((s - (0.5 + 1.0 + 1.0) / 3.0).abs() < 1e-12, "{s}");
        assert_eq!(s, chain_similarity(&rev, &g));
    }

    #[test]
    fn near_identical_steps_stay_below_one() {
        let g = CoTChain { spatial: steps(&["a b"]), temporal: steps(&["c"]), practical: steps(&["d"]) };
        let mut p = g.clone();
        p.spatial[0].text = "A, b!".into();
        let s = chain_similarity(&g, &p);
        assert!(s < 1.0 && s > 0.9, "{s}");
    }

    #[test]
    fn losses() {
        assert_eq!(combined_loss(0.0, 2.0, 1.0).unwrap().total, 2.0);
        assert_eq!(combined_loss(1.0, 2.0, 0.5).unwrap().total, 2.5);
        assert!(combined_loss(-1.0, 2.0, 0.5).is_err());
        assert!(combined_loss(1.0, 2.0, f64::NAN).is_err());
    }
}
