//! Single-day itinerary optimization: orienteering with time windows under a
//! budget.
//!
//! [`solve`] runs a beam search over partial schedules; [`brute_force`] is an
//! exhaustive oracle for small instances and shares nothing with the search
//! beyond the instance accessors. [`feasible`] re-checks any itinerary
//! against every constraint.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::geo::haversine_m;
use crate::model::{
    window_overlap, AccessFlag, Money, MoneyError, Poi, TimeWindow, Weekday, DAY_MINUTES,
    GRID_MINUTES,
};

/// Walking pace used when no explicit travel edge exists.
pub const WALKING_SPEED_KMH: f64 = 4.5;

/// Largest instance [`brute_force`] accepts.
pub const BRUTE_FORCE_LIMIT: usize = 8;

pub const DEFAULT_BEAM_WIDTH: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TravelEdge {
    pub from: String,
    pub to: String,
    pub minutes: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanInstance {
    pub candidates: Vec<Poi>,
    /// Explicit travel times. Looked up in both directions; missing pairs
    /// fall back to [`default_travel_time`].
    #[serde(default)]
    pub edges: Vec<TravelEdge>,
    pub day: Weekday,
    pub day_window: TimeWindow,
    pub budget: Money,
    pub group_size: u32,
    #[serde(default)]
    pub required_access: BTreeSet<AccessFlag>,
    /// Places that must appear in any acceptable itinerary.
    #[serde(default)]
    pub locked: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error("unknown poi id {0:?}")]
    UnknownPoi(String),
    #[error("duplicate candidate id {0:?}")]
    DuplicateCandidate(String),
    #[error("brute force refuses {n} candidates (limit {limit})")]
    TooManyCandidates { n: usize, limit: usize },
    #[error("group size must be at least 1")]
    EmptyGroup,
    #[error("beam width must be at least 1")]
    ZeroBeam,
    #[error("travel edge {from}->{to} of {minutes} min is off the {GRID_MINUTES}-minute grid")]
    EdgeOffGrid { from: String, to: String, minutes: u32 },
    #[error("invalid day window {0}")]
    DayWindow(TimeWindow),
    #[error(transparent)]
    Money(#[from] MoneyError),
}

impl PlanInstance {
    pub fn poi(&self, id: &str) -> Option<&Poi> {
        self.candidates.iter().find(|p| p.id == id)
    }

    /// Structural checks; every solver entry point runs these first.
    pub fn check(&self) -> Result<(), PlanError> {
        let mut seen = BTreeSet::new();
        for p in &self.candidates {
            if !seen.insert(p.id.as_str()) {
                return Err(PlanError::DuplicateCandidate(p.id.clone()));
            }
            if p.price.currency != self.budget.currency {
                return Err(MoneyError::CurrencyMismatch(p.price.currency, self.budget.currency).into());
            }
        }
        if self.group_size == 0 {
            return Err(PlanError::EmptyGroup);
        }
        if !self.day_window.problems().is_empty() {
            return Err(PlanError::DayWindow(self.day_window));
        }
        for e in &self.edges {
            for id in [&e.from, &e.to] {
                if !seen.contains(id.as_str()) {
                    return Err(PlanError::UnknownPoi(id.clone()));
                }
            }
            if e.minutes % GRID_MINUTES as u32 != 0 {
                return Err(PlanError::EdgeOffGrid {
                    from: e.from.clone(),
                    to: e.to.clone(),
                    minutes: e.minutes,
                });
            }
        }
        for id in &self.locked {
            if !seen.contains(id.as_str()) {
                return Err(PlanError::UnknownPoi(id.clone()));
            }
        }
        Ok(())
    }

    /// Travel minutes between two candidates.
    pub fn travel_time(&self, from: &str, to: &str) -> Result<u32, PlanError> {
        if from == to {
            return Ok(0);
        }
        let explicit = self
            .edges
            .iter()
            .find(|e| (e.from == from && e.to == to) || (e.from == to && e.to == from));
        if let Some(e) = explicit {
            return Ok(e.minutes);
        }
        let a = self.poi(from).ok_or_else(|| PlanError::UnknownPoi(from.into()))?;
        let b = self.poi(to).ok_or_else(|| PlanError::UnknownPoi(to.into()))?;
        Ok(default_travel_time(a, b))
    }

    /// Cost of one visit for the whole group, in minor units.
    pub fn visit_cost(&self, poi: &Poi) -> Result<u64, PlanError> {
        Ok(poi.price.times(self.group_size)?.amount)
    }

    /// Usable windows on the planned day: opening hours clipped to the day
    /// window, sorted by start.
    pub fn usable_windows(&self, poi: &Poi) -> Vec<TimeWindow> {
        poi.windows_on(self.day)
            .into_iter()
            .filter_map(|w| window_overlap(w, self.day_window))
            .collect()
    }
}

/// Walking time between two places at 4.5 km/h, rounded up to the grid.
pub fn default_travel_time(a: &Poi, b: &Poi) -> u32 {
    if a.id == b.id {
        return 0;
    }
    let meters = haversine_m(a.location, b.location);
    let minutes = meters / (WALKING_SPEED_KMH * 1000.0) * 60.0;
    let grid = GRID_MINUTES as f64;
    // absorb float noise so exact multiples are not bumped up a slot
    (libm::ceil(minutes / grid - 1e-9).max(0.0) * grid) as u32
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Visit {
    pub poi_id: String,
    pub start: u16,
    pub end: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Itinerary {
    pub visits: Vec<Visit>,
    pub total_cost: Money,
    pub total_utility: u64,
}

impl Itinerary {
    pub fn empty(currency: crate::model::Currency) -> Self {
        Itinerary { visits: Vec::new(), total_cost: Money::zero(currency), total_utility: 0 }
    }

    pub fn ids(&self) -> Vec<&str> {
        self.visits.iter().map(|v| v.poi_id.as_str()).collect()
    }

    /// End of the last visit, or `day_start` when empty.
    pub fn finish(&self, day_start: u16) -> u16 {
        self.visits.last().map_or(day_start, |v| v.end)
    }
}

/// Total order on itineraries: higher utility first, then earlier finish,
/// then the lexicographically smaller id sequence.
pub fn compare_itineraries(a: &Itinerary, b: &Itinerary, day_start: u16) -> Ordering {
    b.total_utility
        .cmp(&a.total_utility)
        .then_with(|| a.finish(day_start).cmp(&b.finish(day_start)))
        .then_with(|| a.ids().cmp(&b.ids()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlanViolation {
    Duration { poi_id: String, expected: u16, actual: u16 },
    Hours { poi_id: String, start: u16, end: u16 },
    Overlap { before: String, after: String },
    TravelTime { from: String, to: String, gap: u16, needed: u32 },
    Budget { total: u64, budget: u64 },
    Accessibility { poi_id: String, missing: Vec<AccessFlag> },
    RepeatVisit { poi_id: String },
    CostMismatch { stated: u64, actual: u64 },
    UtilityMismatch { stated: u64, actual: u64 },
    MissingLocked { poi_id: String },
}

impl core::fmt::Display for PlanViolation {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        use crate::model::Clock;
        match self {
            PlanViolation::Duration { poi_id, expected, actual } => {
                write!(f, "duration: {poi_id} lasts {actual} min, expected {expected}")
            }
            PlanViolation::Hours { poi_id, start, end } => write!(
                f,
                "hours: {poi_id} visit {}-{} is outside its opening hours",
                Clock(*start),
                Clock(*end)
            ),
            PlanViolation::Overlap { before, after } => {
                write!(f, "overlap: {after} starts before {before} ends")
            }
            PlanViolation::TravelTime { from, to, gap, needed } => {
                write!(f, "travel time: {gap} min from {from} to {to}, need {needed}")
            }
            PlanViolation::Budget { total, budget } => {
                write!(f, "budget: total {total} exceeds {budget}")
            }
            PlanViolation::Accessibility { poi_id, missing } => {
                write!(f, "accessibility: {poi_id} lacks {missing:?}")
            }
            PlanViolation::RepeatVisit { poi_id } => write!(f, "repeat visit: {poi_id}"),
            PlanViolation::CostMismatch { stated, actual } => {
                write!(f, "cost mismatch: stated {stated}, actual {actual}")
            }
            PlanViolation::UtilityMismatch { stated, actual } => {
                write!(f, "utility mismatch: stated {stated}, actual {actual}")
            }
            PlanViolation::MissingLocked { poi_id } => write!(f, "locked place missing: {poi_id}"),
        }
    }
}

/// Checks an itinerary against hours, travel, budget, accessibility and
/// lock constraints, reporting every violation.
pub fn feasible(
    it: &Itinerary,
    inst: &PlanInstance,
) -> Result<crate::model::Verdict<PlanViolation>, PlanError> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    let mut cost: u64 = 0;
    let mut utility: u64 = 0;
    let mut prev: Option<(&Visit, &Poi)> = None;
    for v in &it.visits {
        let poi = inst.poi(&v.poi_id).ok_or_else(|| PlanError::UnknownPoi(v.poi_id.clone()))?;
        if !seen.insert(v.poi_id.as_str()) {
            out.push(PlanViolation::RepeatVisit { poi_id: v.poi_id.clone() });
        }
        let actual = v.end.saturating_sub(v.start);
        if v.end < v.start || actual != poi.visit_duration {
            out.push(PlanViolation::Duration {
                poi_id: v.poi_id.clone(),
                expected: poi.visit_duration,
                actual,
            });
        }
        let span = TimeWindow { start: v.start, end: v.end };
        if !inst.usable_windows(poi).iter().any(|w| w.contains(&span)) {
            out.push(PlanViolation::Hours { poi_id: v.poi_id.clone(), start: v.start, end: v.end });
        }
        let missing: Vec<AccessFlag> =
            inst.required_access.iter().filter(|f| !poi.accessibility.contains(f)).copied().collect();
        if !missing.is_empty() {
            out.push(PlanViolation::Accessibility { poi_id: v.poi_id.clone(), missing });
        }
        if let Some((pv, pp)) = prev {
            if v.start < pv.end {
                out.push(PlanViolation::Overlap { before: pv.poi_id.clone(), after: v.poi_id.clone() });
            } else {
                let needed = inst.travel_time(&pp.id, &poi.id)?;
                let gap = v.start - pv.end;
                if (gap as u32) < needed {
                    out.push(PlanViolation::TravelTime {
                        from: pv.poi_id.clone(),
                        to: v.poi_id.clone(),
                        gap,
                        needed,
                    });
                }
            }
        }
        cost = cost.saturating_add(inst.visit_cost(poi)?);
        utility += poi.utility as u64;
        prev = Some((v, poi));
    }
    if it.total_cost.currency != inst.budget.currency {
        return Err(MoneyError::CurrencyMismatch(it.total_cost.currency, inst.budget.currency).into());
    }
    if cost > inst.budget.amount {
        out.push(PlanViolation::Budget { total: cost, budget: inst.budget.amount });
    }
    if it.total_cost.amount != cost {
        out.push(PlanViolation::CostMismatch { stated: it.total_cost.amount, actual: cost });
    }
    if it.total_utility != utility {
        out.push(PlanViolation::UtilityMismatch { stated: it.total_utility, actual: utility });
    }
    for id in &inst.locked {
        if !seen.contains(id.as_str()) {
            out.push(PlanViolation::MissingLocked { poi_id: id.clone() });
        }
    }
    Ok(crate::model::Verdict::from_violations(out))
}

/// How many partial schedules survive each search level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeamWidth {
    Bounded(usize),
    /// Keep every distinct state; exhaustive and exact.
    Unbounded,
}

impl BeamWidth {
    fn limit(self) -> usize {
        match self {
            BeamWidth::Bounded(w) => w,
            BeamWidth::Unbounded => usize::MAX,
        }
    }
}

impl Default for BeamWidth {
    fn default() -> Self {
        BeamWidth::Bounded(DEFAULT_BEAM_WIDTH)
    }
}

/// Result of a solve: the best itinerary, or `None` when locked places
/// cannot all be scheduled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Solution {
    pub itinerary: Option<Itinerary>,
}

/// Dense view of an instance for the search.
struct Prepared<'a> {
    inst: &'a PlanInstance,
    order: Vec<usize>,
    windows: Vec<Vec<TimeWindow>>,
    cost: Vec<u64>,
    travel: Vec<Vec<u32>>,
    eligible: Vec<bool>,
    locked: Vec<bool>,
    locked_total: usize,
}

impl<'a> Prepared<'a> {
    fn new(inst: &'a PlanInstance) -> Result<Self, PlanError> {
        inst.check()?;
        let n = inst.candidates.len();
        // iterate candidates in id order so ties resolve identically however
        // the caller ordered them
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| inst.candidates[a].id.cmp(&inst.candidates[b].id));
        let mut windows = Vec::with_capacity(n);
        let mut cost = Vec::with_capacity(n);
        let mut eligible = Vec::with_capacity(n);
        let mut locked = Vec::with_capacity(n);
        for p in &inst.candidates {
            windows.push(inst.usable_windows(p));
            cost.push(inst.visit_cost(p)?);
            eligible.push(inst.required_access.iter().all(|f| p.accessibility.contains(f)));
            locked.push(inst.locked.contains(&p.id));
        }
        let mut travel = vec![vec![0u32; n]; n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    travel[i][j] =
                        inst.travel_time(&inst.candidates[i].id, &inst.candidates[j].id)?;
                }
            }
        }
        let locked_total = locked.iter().filter(|l| **l).count();
        Ok(Prepared { inst, order, windows, cost, travel, eligible, locked, locked_total })
    }

    fn earliest_start(&self, i: usize, arrival: u32) -> Option<u16> {
        let dur = self.inst.candidates[i].visit_duration as u32;
        self.windows[i].iter().find_map(|w| {
            let s = arrival.max(w.start as u32);
            (s + dur <= w.end as u32 && s + dur <= DAY_MINUTES as u32).then_some(s as u16)
        })
    }
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord)]
struct StateKey {
    visited: Vec<u64>,
    last: Option<usize>,
    clock: u16,
    spent: u64,
}

#[derive(Clone)]
struct Node {
    seq: Vec<usize>,
    starts: Vec<u16>,
    visited: Vec<u64>,
    clock: u16,
    spent: u64,
    utility: u64,
    locked: usize,
}

impl Node {
    fn has(&self, i: usize) -> bool {
        self.visited[i / 64] & (1 << (i % 64)) != 0
    }

    fn key(&self) -> StateKey {
        StateKey { visited: self.visited.clone(), last: self.seq.last().copied(), clock: self.clock, spent: self.spent }
    }
}

fn id_cmp(p: &Prepared<'_>, a: &[usize], b: &[usize]) -> Ordering {
    let ids = |s: &[usize]| -> Vec<&str> { s.iter().map(|&i| p.inst.candidates[i].id.as_str()).collect() };
    ids(a).cmp(&ids(b))
}

/// Ordering among partial states: more locked places, more utility, earlier
/// clock, smaller id sequence.
fn rank(p: &Prepared<'_>, a: &Node, b: &Node) -> Ordering {
    b.locked
        .cmp(&a.locked)
        .then_with(|| b.utility.cmp(&a.utility))
        .then_with(|| a.clock.cmp(&b.clock))
        .then_with(|| id_cmp(p, &a.seq, &b.seq))
}

/// Ordering among complete answers (all locks satisfied).
fn answer_cmp(p: &Prepared<'_>, a: &Node, b: &Node) -> Ordering {
    b.utility
        .cmp(&a.utility)
        .then_with(|| a.clock.cmp(&b.clock))
        .then_with(|| id_cmp(p, &a.seq, &b.seq))
}

struct PassResult {
    best: Option<Node>,
    truncated: bool,
}

fn beam_pass(p: &Prepared<'_>, width: usize) -> PassResult {
    let n = p.inst.candidates.len();
    let root = Node {
        seq: Vec::new(),
        starts: Vec::new(),
        visited: vec![0; n.div_ceil(64).max(1)],
        clock: p.inst.day_window.start,
        spent: 0,
        utility: 0,
        locked: 0,
    };
    let mut best: Option<Node> = None;
    let consider = |node: &Node, best: &mut Option<Node>| {
        if node.locked == p.locked_total
            && best.as_ref().is_none_or(|b| answer_cmp(p, node, b) == Ordering::Less)
        {
            *best = Some(node.clone());
        }
    };
    consider(&root, &mut best);
    let mut level = vec![root];
    let mut truncated = false;
    while !level.is_empty() {
        let mut next: BTreeMap<StateKey, Node> = BTreeMap::new();
        for node in &level {
            for &j in &p.order {
                if node.has(j) || !p.eligible[j] {
                    continue;
                }
                let spent = node.spent + p.cost[j];
                if spent > p.inst.budget.amount {
                    continue;
                }
                let arrival = match node.seq.last() {
                    Some(&last) => node.clock as u32 + p.travel[last][j],
                    None => p.inst.day_window.start as u32,
                };
                let Some(start) = p.earliest_start(j, arrival) else { continue };
                let mut child = node.clone();
                child.seq.push(j);
                child.starts.push(start);
                child.visited[j / 64] |= 1 << (j % 64);
                child.clock = start + p.inst.candidates[j].visit_duration;
                child.spent = spent;
                child.utility += p.inst.candidates[j].utility as u64;
                child.locked += p.locked[j] as usize;
                let key = child.key();
                match next.get(&key) {
                    Some(existing) if rank(p, existing, &child) != Ordering::Greater => {}
                    _ => {
                        next.insert(key, child);
                    }
                }
            }
        }
        let mut children: Vec<Node> = next.into_values().collect();
        children.sort_by(|a, b| rank(p, a, b));
        if children.len() > width {
            children.truncate(width);
            truncated = true;
        }
        for c in &children {
            consider(c, &mut best);
        }
        level = children;
    }
    PassResult { best, truncated }
}

fn to_itinerary(p: &Prepared<'_>, node: &Node) -> Itinerary {
    let visits = node
        .seq
        .iter()
        .zip(&node.starts)
        .map(|(&i, &s)| {
            let poi = &p.inst.candidates[i];
            Visit { poi_id: poi.id.clone(), start: s, end: s + poi.visit_duration }
        })
        .collect();
    Itinerary {
        visits,
        total_cost: Money::new(node.spent, p.inst.budget.currency),
        total_utility: node.utility,
    }
}

/// Beam search for the highest-utility feasible itinerary.
///
/// A bounded width `w` keeps the best answer over widths `1..=w`, which makes
/// the result monotone in `w`; a pass that never truncates is exhaustive and
/// ends the sweep early.
pub fn solve(inst: &PlanInstance, width: BeamWidth) -> Result<Solution, PlanError> {
    let p = Prepared::new(inst)?;
    let widths: Vec<usize> = match width {
        BeamWidth::Bounded(0) => return Err(PlanError::ZeroBeam),
        BeamWidth::Bounded(w) => (1..=w).collect(),
        BeamWidth::Unbounded => vec![width.limit()],
    };
    let mut best: Option<Node> = None;
    for w in widths {
        let pass = beam_pass(&p, w);
        if let Some(node) = pass.best {
            if best.as_ref().is_none_or(|b| answer_cmp(&p, &node, b) == Ordering::Less) {
                best = Some(node);
            }
        }
        if !pass.truncated {
            break;
        }
    }
    Ok(Solution { itinerary: best.map(|n| to_itinerary(&p, &n)) })
}

/// Exhaustive oracle: every subset in every order, scheduled at earliest
/// feasible starts. Refuses more than [`BRUTE_FORCE_LIMIT`] candidates.
pub fn brute_force(inst: &PlanInstance) -> Result<Solution, PlanError> {
    let n = inst.candidates.len();
    if n > BRUTE_FORCE_LIMIT {
        return Err(PlanError::TooManyCandidates { n, limit: BRUTE_FORCE_LIMIT });
    }
    inst.check()?;
    let mut best: Option<Itinerary> = None;
    for mask in 0u32..(1 << n) {
        let mut members: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        if !inst.locked.iter().all(|id| members.iter().any(|&i| inst.candidates[i].id == *id)) {
            continue;
        }
        for_each_permutation(&mut members, &mut |order| {
            if let Some(it) = schedule_in_order(inst, order) {
                let better = best
                    .as_ref()
                    .is_none_or(|b| compare_itineraries(&it, b, inst.day_window.start) == Ordering::Less);
                if better {
                    best = Some(it);
                }
            }
        });
    }
    Ok(Solution { itinerary: best })
}

/// Heap's algorithm.
fn for_each_permutation(items: &mut [usize], f: &mut dyn FnMut(&[usize])) {
    let n = items.len();
    let mut c = vec![0usize; n];
    f(items);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                items.swap(0, i);
            } else {
                items.swap(c[i], i);
            }
            f(items);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

fn schedule_in_order(inst: &PlanInstance, order: &[usize]) -> Option<Itinerary> {
    let mut visits = Vec::with_capacity(order.len());
    let mut cost: u64 = 0;
    let mut utility: u64 = 0;
    let mut clock = inst.day_window.start as u32;
    let mut prev: Option<&Poi> = None;
    for &i in order {
        let poi = &inst.candidates[i];
        if !inst.required_access.iter().all(|f| poi.accessibility.contains(f)) {
            return None;
        }
        let arrival = match prev {
            Some(pp) => clock + inst.travel_time(&pp.id, &poi.id).ok()?,
            None => clock,
        };
        let dur = poi.visit_duration as u32;
        let start = inst.usable_windows(poi).into_iter().find_map(|w| {
            let s = arrival.max(w.start as u32);
            (s + dur <= w.end as u32).then_some(s)
        })?;
        visits.push(Visit { poi_id: poi.id.clone(), start: start as u16, end: (start + dur) as u16 });
        clock = start + dur;
        cost += poi.price.amount * inst.group_size as u64;
        utility += poi.utility as u64;
        prev = Some(poi);
    }
    (cost <= inst.budget.amount).then(|| Itinerary {
        visits,
        total_cost: Money::new(cost, inst.budget.currency),
        total_utility: utility,
    })
}

/// One day of a multi-day plan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayPlan {
    pub day: Weekday,
    pub itinerary: Itinerary,
    /// Budget left for this day when it was planned.
    pub budget: Money,
}

/// Plans consecutive days as iterated single days: places visited on one
/// day are removed for later days and the budget carries over. Locked places
/// are attempted on each day until placed; `None` when any stays unplaced.
pub fn plan_days(
    inst: &PlanInstance,
    days: &[Weekday],
    width: BeamWidth,
) -> Result<Option<Vec<DayPlan>>, PlanError> {
    inst.check()?;
    let mut remaining = inst.clone();
    let mut out = Vec::with_capacity(days.len());
    for &day in days {
        remaining.day = day;
        let sol = match solve(&remaining, width)?.itinerary {
            Some(it) => it,
            None => {
                let mut relaxed = remaining.clone();
                relaxed.locked.clear();
                solve(&relaxed, width)?.itinerary.unwrap_or_else(|| Itinerary::empty(inst.budget.currency))
            }
        };
        out.push(DayPlan { day, itinerary: sol.clone(), budget: remaining.budget });
        let visited: BTreeSet<&str> = sol.ids().into_iter().collect();
        remaining.candidates.retain(|p| !visited.contains(p.id.as_str()));
        remaining.edges.retain(|e| !visited.contains(e.from.as_str()) && !visited.contains(e.to.as_str()));
        remaining.locked.retain(|id| !visited.contains(id.as_str()));
        remaining.budget.amount -= sol.total_cost.amount;
    }
    Ok(remaining.locked.is_empty().then_some(out))
}
