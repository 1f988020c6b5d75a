#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wayfarer_core::model::{
    AccessFlag, Category, Currency, DayHours, GeoPoint, ImageKind, ImageRef, Money, Poi, TimeWindow, Weekday,
};
use wayfarer_core::plan::{PlanInstance, TravelEdge};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn grid(r: &mut ChaCha8Rng, lo: u16, hi: u16) -> u16 {
    r.random_range(lo / 5..=hi / 5) * 5
}

pub fn random_poi(r: &mut ChaCha8Rng, id: &str, city: &str) -> Poi {
    let mut hours = Vec::new();
    for day in Weekday::ALL {
        if r.random_bool(0.15) {
            continue;
        }
        let start = grid(r, 420, 780);
        let end = grid(r, start + 60, 1380);
        hours.push(DayHours { day, window: TimeWindow { start, end } });
        if r.random_bool(0.2) && end + 60 <= 1430 {
            let s2 = grid(r, end + 30, 1400);
            let e2 = grid(r, s2 + 30, 1435);
            if e2 > s2 && s2 > end {
                hours.push(DayHours { day, window: TimeWindow { start: s2, end: e2 } });
            }
        }
    }
    let accessibility: BTreeSet<AccessFlag> = [AccessFlag::Wheelchair, AccessFlag::ElderFriendly]
        .into_iter()
        .filter(|_| r.random_bool(0.6))
        .collect();
    Poi {
        id: id.into(),
        name: format!("Place {id}"),
        category: Category::ALL[r.random_range(0..6)].clone(),
        city: city.into(),
        location: GeoPoint::from_degrees(40.70 + r.random_range(0.0..0.03), -74.0 + r.random_range(0.0..0.03))
            .unwrap(),
        hours,
        price: Money::new(r.random_range(0..4000u64), Currency::USD),
        visit_duration: grid(r, 15, 180),
        utility: r.random_range(0..10),
        accessibility,
        images: (0..r.random_range(0..3))
            .map(|i| ImageRef {
                uri: format!("img/{id}-{i}.jpg"),
                kind: if i % 2 == 0 { ImageKind::Street } else { ImageKind::Map },
            })
            .collect(),
    }
}

pub fn random_instance(r: &mut ChaCha8Rng, max_n: usize) -> PlanInstance {
    let n = r.random_range(1..=max_n);
    let candidates: Vec<Poi> = (0..n).map(|i| random_poi(r, &format!("p{i}"), "Testville")).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if r.random_bool(0.3) {
                edges.push(TravelEdge {
                    from: candidates[i].id.clone(),
                    to: candidates[j].id.clone(),
                    minutes: r.random_range(0..12u32) * 5,
                });
            }
        }
    }
    let start = grid(r, 480, 660);
    let end = grid(r, start + 120, 1320);
    let required_access = if r.random_bool(0.2) { BTreeSet::from([AccessFlag::Wheelchair]) } else { BTreeSet::new() };
    let locked = if r.random_bool(0.15) { BTreeSet::from([candidates[r.random_range(0..n)].id.clone()]) } else {
        BTreeSet::new()
    };
    PlanInstance {
        candidates,
        edges,
        day: Weekday::ALL[r.random_range(0..7)],
        day_window: TimeWindow { start, end },
        budget: Money::new(r.random_range(0..12000u64), Currency::USD),
        group_size: r.random_range(1..=3),
        required_access,
        locked,
    }
}

use wayfarer_core::dataset::PoiStore;
use wayfarer_core::model::{Modality, QaPair, VlType};

/// A 52-pair evaluation set in the published 32 text / 20 image proportion.
pub fn mcq_fixture() -> (PoiStore, Vec<QaPair>) {
    let mut r = rng(52);
    let pois: Vec<Poi> = (0..26)
        .map(|i| {
            let mut p = random_poi(&mut r, &format!("poi{i:02}"), if i % 2 == 0 { "Paris" } else { "Kyoto" });
            p.category = Category::ALL[i % 6].clone();
            p
        })
        .collect();
    let store = PoiStore::from_pois(pois).unwrap();
    let mut qas = Vec::new();
    for i in 0..32 {
        let poi = format!("poi{:02}", i % 26);
        qas.push(QaPair {
            id: format!("text-{i:02}"),
            poi_id: Some(poi.clone()),
            modality: Modality::Text,
            vl_type: None,
            question: format!("What should visitors to {poi} know (variant {i})?"),
            answer: format!("Answer {i} about {poi}"),
            source_fact_id: Some(format!("fact-{poi}")),
            split: None,
            category: None,
            image: None,
        });
    }
    for i in 0..20 {
        let poi = format!("poi{:02}", i % 26);
        qas.push(QaPair {
            id: format!("vl-{i:02}"),
            poi_id: Some(poi.clone()),
            modality: Modality::VisionLanguage,
            vl_type: Some(VlType::ALL[i % 3]),
            question: format!("What place is shown in photo {i}?"),
            answer: format!("Landmark {poi} seen in photo {i}"),
            source_fact_id: None,
            split: None,
            category: None,
            image: None,
        });
    }
    (store, qas)
}
