//! City fixture directories.
//!
//! ```text
//! <dir>/pois.jsonl            required, one place per line
//! <dir>/transit_edges.jsonl   optional, {"from","to","minutes"}
//! <dir>/reviews.jsonl         optional, {"poi_id","rating","text"}
//! <dir>/gazetteer.jsonl       optional, {"name","city"} or {"name","poi_id"}
//! <dir>/service.toml          optional, latency and failure injection
//! ```
//!
//! Without a gazetteer file every city and place name in `pois.jsonl` is
//! recognized.

use std::collections::BTreeSet;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use wayfarer_core::agent::LookupRecognizer;
use wayfarer_core::dataset::PoiStore;
use wayfarer_core::model::Poi;
use wayfarer_core::plan::TravelEdge;
use wayfarer_core::tools::{FailureConfig, FixtureStore, GazetteerEntry, Review};

use crate::io::{read_jsonl_numbered, read_jsonl_opt, require_dir, require_file};

/// Fault injection for resilience testing. Everything is off by default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    /// Delay added to every tool call, in milliseconds.
    #[serde(default)]
    pub latency_ms: u64,
    #[serde(default)]
    pub failures: FailureConfig,
}

impl ServiceConfig {
    pub fn validate(&self) -> Result<()> {
        let r = self.failures.failure_rate;
        if !(0.0..=1.0).contains(&r) {
            anyhow::bail!("failures.failure_rate: {r} is outside [0, 1]");
        }
        Ok(())
    }
}

/// A loaded city: immutable fixture data plus the agent's recognizer.
#[derive(Debug, Clone)]
pub struct City {
    pub store: FixtureStore,
    pub recognizer: LookupRecognizer,
    pub service: ServiceConfig,
}

pub fn load_pois(path: &Path) -> Result<PoiStore> {
    let records = read_jsonl_numbered::<Poi>(path)?;
    PoiStore::from_numbered(records).with_context(|| format!("{}: invalid places", path.display()))
}

pub fn default_gazetteer(pois: &PoiStore) -> Vec<GazetteerEntry> {
    let cities: BTreeSet<&str> = pois.cities().collect();
    let mut out: Vec<GazetteerEntry> =
        cities.into_iter().map(|c| GazetteerEntry { name: c.into(), city: Some(c.into()), poi_id: None }).collect();
    out.extend(pois.iter().map(|p| GazetteerEntry { name: p.name.clone(), city: None, poi_id: Some(p.id.clone()) }));
    out
}

pub fn load_city(dir: &Path) -> Result<City> {
    require_dir("fixtures", dir)?;
    let pois_path = dir.join("pois.jsonl");
    require_file("fixtures", &pois_path)?;
    let pois = load_pois(&pois_path)?;
    let edges: Vec<TravelEdge> = read_jsonl_opt(&dir.join("transit_edges.jsonl"))?;
    let reviews: Vec<Review> = read_jsonl_opt(&dir.join("reviews.jsonl"))?;
    let gaz_path = dir.join("gazetteer.jsonl");
    let gazetteer = if gaz_path.exists() { read_jsonl_opt(&gaz_path)? } else { default_gazetteer(&pois) };

    let service_path = dir.join("service.toml");
    let service: ServiceConfig = if service_path.exists() {
        let text = std::fs::read_to_string(&service_path)?;
        toml::from_str(&text).with_context(|| format!("{}: invalid service config", service_path.display()))?
    } else {
        ServiceConfig::default()
    };
    service.validate().with_context(|| service_path.display().to_string())?;

    let recognizer = LookupRecognizer::from_catalog(&pois);
    let store = FixtureStore::new(pois, edges, reviews, gazetteer)
        .with_context(|| format!("{}: inconsistent fixture", dir.display()))?
        .with_failures(service.failures.clone());
    Ok(City { store, recognizer, service })
}
