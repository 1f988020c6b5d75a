mod common;

use proptest::prelude::*;
use rand::Rng;
use wayfarer_core::cot::{chain_similarity, combined_loss, reference_reason, validate_chain, QueryContext};
use wayfarer_core::dataset::PoiStore;
use wayfarer_core::model::{
    AccessFlag, CoTChain, ConstraintSet, Currency, Money, ReasoningStep, TimeWindow, Weekday,
};

fn random_context(seed: u64) -> QueryContext {
    let mut r = common::rng(seed);
    let n = r.random_range(1..=8);
    let pois: Vec<_> = (0..n).map(|i| common::random_poi(&mut r, &format!("c{i}"), "Lisbon")).collect();
    let mut constraints = ConstraintSet::for_day(Weekday::ALL[r.random_range(0..7)]);
    let start = r.random_range(84..=130) * 5;
    constraints.day_window = TimeWindow::new(start, start + r.random_range(12..=120) * 5).unwrap();
    if r.random_bool(0.7) {
        constraints.budget = Some(Money::new(r.random_range(0..20_000), Currency::USD));
    }
    constraints.group_size = r.random_range(1..=4);
    if r.random_bool(0.3) {
        constraints.required_access.insert(AccessFlag::Wheelchair);
    }
    let (query, visual) = match r.random_range(0..3) {
        0 => (Some("A day out in Lisbon".to_string()), None),
        1 => (None, Some("img/c0-0.jpg".to_string())),
        _ => (Some("Plan around this photo".to_string()), Some("photo.jpg".to_string())),
    };
    let mut ctx = QueryContext::new(query, visual, PoiStore::from_pois(pois).unwrap(), constraints).unwrap();
    if r.random_bool(0.5) {
        ctx = ctx.with_anchor(format!("c{}", r.random_range(0..n)));
    }
    ctx
}

#[test]
fn validator_accepts_every_reference_chain() {
    for seed in 0..1000 {
        let ctx = random_context(seed);
        let chain = reference_reason(&ctx).unwrap();
        let verdict = validate_chain(&chain, &ctx);
        assert!(verdict.is_ok(), "seed {seed}: {:?}", verdict.violations);
        assert_eq!(chain, reference_reason(&ctx.clone()).unwrap());
    }
}

#[test]
fn self_similarity_is_one() {
    for seed in 0..200 {
        let g = reference_reason(&random_context(seed)).unwrap();
        assert_eq!(chain_similarity(&g, &g), 1.0);
    }
}

#[test]
fn reference_chains_are_symmetric_and_distinguished() {
    for seed in 0..300 {
        let a = reference_reason(&random_context(seed)).unwrap();
        let b = reference_reason(&random_context(seed + 10_000)).unwrap();
        let (ab, ba) = (chain_similarity(&a, &b), chain_similarity(&b, &a));
        assert!((ab - ba).abs() < 1e-12);
        if a != b {
            assert!(ab < 1.0);
        }
    }
}

#[test]
fn loss_is_linear_on_a_grid() {
    for i in 0..10 {
        for j in 0..10 {
            let (c, a) = (i as f64 * 0.37, j as f64 * 0.53);
            for lambda in [0.0, 0.5, 1.0, 2.5] {
                let base = combined_loss(c, a, lambda).unwrap().total;
                assert!((base - (lambda * c + a)).abs() < 1e-12);
                let dc = combined_loss(c + 1.0, a, lambda).unwrap().total - base;
                let da = combined_loss(c, a + 1.0, lambda).unwrap().total - base;
                assert!((dc - lambda).abs() < 1e-12 && (da - 1.0).abs() < 1e-12);
                let scaled = combined_loss(2.0 * c, 2.0 * a, lambda).unwrap().total;
                assert!((scaled - 2.0 * base).abs() < 1e-9);
            }
        }
    }
    assert!(combined_loss(-1.0, 0.0, 1.0).is_err());
}

fn step() -> impl Strategy<Value = ReasoningStep> {
    (
        prop::sample::select(vec!["walk north", "museum opens at nine", "tickets cost ten", "take the tram", "closed monday"]),
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c"]), 0..2),
    )
        .prop_map(|(t, refs)| {
            refs.into_iter().fold(ReasoningStep::new(t), |s, r| s.with_ref(r))
        })
}

fn chain() -> impl Strategy<Value = CoTChain> {
    (prop::collection::vec(step(), 0..4), prop::collection::vec(step(), 0..4), prop::collection::vec(step(), 0..4))
        .prop_map(|(spatial, temporal, practical)| CoTChain { spatial, temporal, practical })
}

proptest! {
    #[test]
    fn similarity_symmetric_and_bounded(a in chain(), b in chain()) {
        let (ab, ba) = (chain_similarity(&a, &b), chain_similarity(&b, &a));
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(ab == 1.0, a == b);
    }
}
