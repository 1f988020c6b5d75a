//! Simulated travel services behind one request/response envelope.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::PoiStore;
use crate::model::{DayHours, Money};
use crate::plan::{default_travel_time, TravelEdge};
use crate::text::{contains_phrase, normalize_text, stable_hash};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolId {
    MapLocate,
    Hours,
    Price,
    Transit,
    Reviews,
}

impl ToolId {
    pub const ALL: [ToolId; 5] = [ToolId::MapLocate, ToolId::Hours, ToolId::Price, ToolId::Transit, ToolId::Reviews];

    pub fn name(self) -> &'static str {
        match self {
            ToolId::MapLocate => "map_locate",
            ToolId::Hours => "hours",
            ToolId::Price => "price",
            ToolId::Transit => "transit",
            ToolId::Reviews => "reviews",
        }
    }

    pub fn from_name(name: &str) -> Option<ToolId> {
        ToolId::ALL.into_iter().find(|t| t.name() == name)
    }
}

impl fmt::Display for ToolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Arguments; which shape is valid depends on the tool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ToolArgs {
    Poi { poi_id: String },
    Pair { from: String, to: String },
    Locate {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        text: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        image: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub request_id: String,
    pub tool: ToolId,
    pub args: ToolArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolStatus {
    Ok,
    NotFound,
    BadRequest,
    Unavailable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitSource {
    Table,
    Walking,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocateSource {
    Image,
    Gazetteer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ToolPayload {
    Located { poi_id: String, city: String, via: LocateSource },
    Hours { poi_id: String, hours: Vec<DayHours> },
    Price { poi_id: String, price: Money },
    Transit { from: String, to: String, minutes: u32, source: TransitSource },
    Reviews { poi_id: String, count: u32, mean_rating: Option<f64>, snippets: Vec<String> },
}

impl ToolPayload {
    pub fn tool(&self) -> ToolId {
        match self {
            ToolPayload::Located { .. } => ToolId::MapLocate,
            ToolPayload::Hours { .. } => ToolId::Hours,
            ToolPayload::Price { .. } => ToolId::Price,
            ToolPayload::Transit { .. } => ToolId::Transit,
            ToolPayload::Reviews { .. } => ToolId::Reviews,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResponse {
    pub request_id: String,
    pub status: ToolStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<ToolPayload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ToolResponse {
    fn ok(tc: &ToolCall, payload: ToolPayload) -> Self {
        ToolResponse { request_id: tc.request_id.clone(), status: ToolStatus::Ok, payload: Some(payload), error: None }
    }

    fn fail(tc: &ToolCall, status: ToolStatus, error: String) -> Self {
        ToolResponse { request_id: tc.request_id.clone(), status, payload: None, error: Some(error) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Review {
    pub poi_id: String,
    /// 1 to 5 stars.
    pub rating: u8,
    #[serde(default)]
    pub text: String,
}

/// A name the agent can recognize in text: either a city or a place.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GazetteerEntry {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub city: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poi_id: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Gazetteer {
    /// (normalized name, entry), longest names first.
    entries: Vec<(String, GazetteerEntry)>,
}

impl Gazetteer {
    pub fn new(entries: impl IntoIterator<Item = GazetteerEntry>) -> Self {
        let mut entries: Vec<(String, GazetteerEntry)> =
            entries.into_iter().map(|e| (normalize_text(&e.name), e)).filter(|(n, _)| !n.is_empty()).collect();
        entries.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        Gazetteer { entries }
    }

    pub fn entries(&self) -> impl Iterator<Item = &GazetteerEntry> {
        self.entries.iter().map(|(_, e)| e)
    }

    /// Longest city name mentioned in `text`.
    pub fn find_city(&self, text: &str) -> Option<&str> {
        let norm = normalize_text(text);
        self.entries
            .iter()
            .find(|(n, e)| e.city.is_some() && contains_phrase(&norm, n))
            .and_then(|(_, e)| e.city.as_deref())
    }

    /// Longest place name mentioned in `text`.
    pub fn find_place(&self, text: &str) -> Option<&str> {
        let norm = normalize_text(text);
        self.entries
            .iter()
            .find(|(n, e)| e.poi_id.is_some() && contains_phrase(&norm, n))
            .and_then(|(_, e)| e.poi_id.as_deref())
    }
}

/// Deterministic failure injection for resilience tests.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FailureConfig {
    /// Tools that always answer `unavailable`.
    #[serde(default)]
    pub offline: BTreeSet<ToolId>,
    /// Fraction of requests answered `unavailable`, chosen by a keyed hash
    /// of the request id.
    #[serde(default)]
    pub failure_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FixtureError {
    #[error("{what} references unknown poi {poi_id:?}")]
    UnknownPoi { what: String, poi_id: String },
    #[error("gazetteer entry {0:?} must name exactly one of city or poi_id")]
    Gazetteer(String),
    #[error("review for {poi_id:?} has rating {rating}, expected 1..=5")]
    Rating { poi_id: String, rating: u8 },
    #[error("transit edge {from}->{to} is off the 5-minute grid ({minutes} min)")]
    OffGrid { from: String, to: String, minutes: u32 },
}

/// Immutable per-city service data.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FixtureStore {
    pub pois: PoiStore,
    edges: BTreeMap<(String, String), u32>,
    reviews: BTreeMap<String, Vec<Review>>,
    pub gazetteer: Gazetteer,
    images: BTreeMap<String, String>,
    pub failures: FailureConfig,
}

fn pair_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.into(), b.into())
    } else {
        (b.into(), a.into())
    }
}

fn basename(uri: &str) -> &str {
    uri.rsplit(['/', '\\']).next().unwrap_or(uri)
}

impl FixtureStore {
    pub fn new(
        pois: PoiStore,
        edges: Vec<TravelEdge>,
        reviews: Vec<Review>,
        gazetteer: Vec<GazetteerEntry>,
    ) -> Result<Self, FixtureError> {
        let known = |what: &str, id: &str| {
            if pois.get(id).is_some() {
                Ok(())
            } else {
                Err(FixtureError::UnknownPoi { what: what.into(), poi_id: id.into() })
            }
        };
        let mut edge_map = BTreeMap::new();
        for e in edges {
            known("transit edge", &e.from)?;
            known("transit edge", &e.to)?;
            if e.minutes % u32::from(crate::model::GRID_MINUTES) != 0 {
                return Err(FixtureError::OffGrid { from: e.from, to: e.to, minutes: e.minutes });
            }
            edge_map.insert(pair_key(&e.from, &e.to), e.minutes);
        }
        let mut review_map: BTreeMap<String, Vec<Review>> = BTreeMap::new();
        for r in reviews {
            known("review", &r.poi_id)?;
            if !(1..=5).contains(&r.rating) {
                return Err(FixtureError::Rating { poi_id: r.poi_id, rating: r.rating });
            }
            review_map.entry(r.poi_id.clone()).or_default().push(r);
        }
        for e in &gazetteer {
            if e.city.is_some() == e.poi_id.is_some() {
                return Err(FixtureError::Gazetteer(e.name.clone()));
            }
            if let Some(p) = &e.poi_id {
                known("gazetteer", p)?;
            }
        }
        let mut images = BTreeMap::new();
        for p in pois.iter() {
            for img in &p.images {
                images.insert(img.uri.clone(), p.id.clone());
                images.entry(basename(&img.uri).to_string()).or_insert_with(|| p.id.clone());
            }
        }
        Ok(FixtureStore {
            pois,
            edges: edge_map,
            reviews: review_map,
            gazetteer: Gazetteer::new(gazetteer),
            images,
            failures: FailureConfig::default(),
        })
    }

    pub fn with_failures(mut self, failures: FailureConfig) -> Self {
        self.failures = failures;
        self
    }

    /// Place whose image matches the descriptor (full uri or file name).
    pub fn lookup_image(&self, descriptor: &str) -> Option<&str> {
        self.images.get(descriptor).or_else(|| self.images.get(basename(descriptor))).map(String::as_str)
    }

    pub fn edges(&self) -> impl Iterator<Item = TravelEdge> + '_ {
        self.edges.iter().map(|((a, b), &m)| TravelEdge { from: a.clone(), to: b.clone(), minutes: m })
    }

    fn injected_failure(&self, tc: &ToolCall) -> bool {
        if self.failures.offline.contains(&tc.tool) {
            return true;
        }
        let rate = self.failures.failure_rate;
        let bucket = stable_hash(self.failures.seed, &[tc.tool.name(), &tc.request_id]) % 1_000_000;
        rate > 0.0 && (bucket as f64) < rate * 1e6
    }
}

/// Serves one tool call. A pure function of the call and the fixtures.
pub fn call(tc: &ToolCall, fx: &FixtureStore) -> ToolResponse {
    if fx.injected_failure(tc) {
        return ToolResponse::fail(tc, ToolStatus::Unavailable, format!("{} is unavailable", tc.tool));
    }
    let not_found = |id: &str| ToolResponse::fail(tc, ToolStatus::NotFound, format!("unknown poi {id:?}"));
    let bad = || ToolResponse::fail(tc, ToolStatus::BadRequest, format!("malformed arguments for {}", tc.tool));
    match (tc.tool, &tc.args) {
        (ToolId::Hours | ToolId::Price | ToolId::Reviews, ToolArgs::Poi { poi_id }) => {
            let Some(poi) = fx.pois.get(poi_id) else { return not_found(poi_id) };
            let payload = match tc.tool {
                ToolId::Hours => {
                    let mut hours = poi.hours.clone();
                    hours.sort();
                    ToolPayload::Hours { poi_id: poi_id.clone(), hours }
                }
                ToolId::Price => ToolPayload::Price { poi_id: poi_id.clone(), price: poi.price },
                _ => {
                    let rs = fx.reviews.get(poi_id).map(Vec::as_slice).unwrap_or_default();
                    let mean_rating = (!rs.is_empty())
                        .then(|| rs.iter().map(|r| f64::from(r.rating)).sum::<f64>() / rs.len() as f64);
                    ToolPayload::Reviews {
                        poi_id: poi_id.clone(),
                        count: rs.len() as u32,
                        mean_rating,
                        snippets: rs.iter().take(3).map(|r| r.text.clone()).collect(),
                    }
                }
            };
            ToolResponse::ok(tc, payload)
        }
        (ToolId::Transit, ToolArgs::Pair { from, to }) => {
            let (Some(a), Some(b)) = (fx.pois.get(from), fx.pois.get(to)) else {
                return not_found(if fx.pois.get(from).is_none() { from } else { to });
            };
            let (minutes, source) = match fx.edges.get(&pair_key(from, to)) {
                Some(&m) => (m, TransitSource::Table),
                None => (default_travel_time(a, b), TransitSource::Walking),
            };
            ToolResponse::ok(tc, ToolPayload::Transit { from: from.clone(), to: to.clone(), minutes, source })
        }
        (ToolId::MapLocate, ToolArgs::Locate { text, image }) => {
            let blank = |s: &Option<String>| s.as_deref().is_none_or(|s| s.trim().is_empty());
            if blank(text) && blank(image) {
                return bad();
            }
            let hit = image
                .as_deref()
                .and_then(|d| fx.lookup_image(d))
                .map(|p| (p, LocateSource::Image))
                .or_else(|| text.as_deref().and_then(|t| fx.gazetteer.find_place(t)).map(|p| (p, LocateSource::Gazetteer)));
            match hit.and_then(|(id, via)| fx.pois.get(id).map(|p| (p, via))) {
                Some((poi, via)) => ToolResponse::ok(
                    tc,
                    ToolPayload::Located { poi_id: poi.id.clone(), city: poi.city.clone(), via },
                ),
                None => ToolResponse::fail(tc, ToolStatus::NotFound, "no matching landmark".into()),
            }
        }
        _ => bad(),
    }
}

/// Where the agent sends tool calls.
pub trait ToolExecutor {
    fn execute(&mut self, tc: &ToolCall) -> ToolResponse;
}

impl ToolExecutor for &FixtureStore {
    fn execute(&mut self, tc: &ToolCall) -> ToolResponse {
        call(tc, self)
    }
}

impl ToolExecutor for FixtureStore {
    fn execute(&mut self, tc: &ToolCall) -> ToolResponse {
        call(tc, self)
    }
}
