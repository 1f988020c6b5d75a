mod common;

use rand::Rng;
use wayfarer_core::model::Poi;
use wayfarer_core::plan::{brute_force, feasible, solve, BeamWidth, Itinerary, PlanInstance, Visit};

/// Independent feasibility check written from the constraint list alone.
fn oracle_ok(it: &Itinerary, inst: &PlanInstance) -> bool {
    let find = |id: &str| inst.candidates.iter().find(|p| p.id == id);
    let walk = |a: &Poi, b: &Poi| -> u32 {
        let (la, lb) = (a.location.lat().to_radians(), b.location.lat().to_radians());
        let dlat = lb - la;
        let dlon = (b.location.lon() - a.location.lon()).to_radians();
        let h = (dlat / 2.0).sin().powi(2) + la.cos() * lb.cos() * (dlon / 2.0).sin().powi(2);
        let meters = 2.0 * 6_371_000.0 * h.sqrt().asin();
        let minutes = meters / 4500.0 * 60.0;
        ((minutes / 5.0 - 1e-9).ceil().max(0.0) * 5.0) as u32
    };
    let travel = |a: &Poi, b: &Poi| -> u32 {
        inst.edges
            .iter()
            .find(|e| (e.from == a.id && e.to == b.id) || (e.from == b.id && e.to == a.id))
            .map_or_else(|| walk(a, b), |e| e.minutes)
    };
    let mut cost = 0u64;
    let mut utility = 0u64;
    let mut seen = std::collections::BTreeSet::new();
    let mut prev: Option<(&Visit, &Poi)> = None;
    for v in &it.visits {
        let Some(p) = find(&v.poi_id) else { return false };
        if !seen.insert(&p.id) || v.end < v.start || v.end - v.start != p.visit_duration {
            return false;
        }
        let inside = p.hours.iter().filter(|h| h.day == inst.day).any(|h| {
            let lo = h.window.start.max(inst.day_window.start);
            let hi = h.window.end.min(inst.day_window.end);
            lo <= v.start && v.end <= hi
        });
        if !inside || !inst.required_access.iter().all(|f| p.accessibility.contains(f)) {
            return false;
        }
        if let Some((pv, pp)) = prev {
            if v.start < pv.end || ((v.start - pv.end) as u32) < travel(pp, p) {
                return false;
            }
        }
        cost += p.price.amount * inst.group_size as u64;
        utility += p.utility as u64;
        prev = Some((v, p));
    }
    cost <= inst.budget.amount
        && cost == it.total_cost.amount
        && utility == it.total_utility
        && inst.locked.iter().all(|id| seen.contains(id))
}

#[test]
fn unbounded_beam_matches_brute_force() {
    let mut r = common::rng(7);
    for trial in 0..300 {
        let inst = common::random_instance(&mut r, 7);
        let exact = solve(&inst, BeamWidth::Unbounded).unwrap().itinerary;
        let oracle = brute_force(&inst).unwrap().itinerary;
        assert_eq!(
            exact.as_ref().map(|i| i.total_utility),
            oracle.as_ref().map(|i| i.total_utility),
            "trial {trial}"
        );
        if let Some(it) = &exact {
            assert!(feasible(it, &inst).unwrap().is_ok(), "trial {trial}");
            assert!(oracle_ok(it, &inst), "trial {trial}");
        }
    }
}

#[test]
fn every_solver_output_is_feasible() {
    let mut r = common::rng(11);
    let mut nonempty = 0;
    for trial in 0..10_000 {
        let inst = common::random_instance(&mut r, 8);
        let w = r.random_range(1..=4);
        let Some(it) = solve(&inst, BeamWidth::Bounded(w)).unwrap().itinerary else { continue };
        nonempty += !it.visits.is_empty() as u32;
        assert!(feasible(&it, &inst).unwrap().is_ok(), "trial {trial}: {:?}", feasible(&it, &inst));
        assert!(oracle_ok(&it, &inst), "trial {trial}");
    }
    assert!(nonempty > 5000, "generator too restrictive: {nonempty}");
}

#[test]
fn feasible_agrees_with_oracle_on_perturbed_plans() {
    let mut r = common::rng(13);
    let mut rejected = 0;
    for trial in 0..10_000 {
        let inst = common::random_instance(&mut r, 6);
        let Some(mut it) = solve(&inst, BeamWidth::Bounded(2)).unwrap().itinerary else { continue };
        if !it.visits.is_empty() {
            let k = r.random_range(0..it.visits.len());
            match r.random_range(0..5) {
                0 => {
                    let shift: i32 = r.random_range(-6..=6) * 5;
                    let v = &mut it.visits[k];
                    v.start = (v.start as i32 + shift).clamp(0, 1380) as u16;
                    v.end = (v.end as i32 + shift).clamp(0, 1435) as u16;
                }
                1 => it.visits[k].end += 5,
                2 => it.total_cost.amount += r.random_range(0..2),
                3 => {
                    let dup = it.visits[k].clone();
                    it.visits.push(dup);
                }
                _ => it.visits.reverse(),
            }
        }
        let verdict = feasible(&it, &inst).unwrap().is_ok();
        assert_eq!(verdict, oracle_ok(&it, &inst), "trial {trial}: {it:?}");
        rejected += !verdict as u32;
    }
    assert!(rejected > 1000);
}

#[test]
fn wider_beams_never_lose_utility() {
    let mut r = common::rng(17);
    for trial in 0..300 {
        let inst = common::random_instance(&mut r, 8);
        let mut last = 0;
        for w in [1, 2, 4, 8, 16] {
            let u = solve(&inst, BeamWidth::Bounded(w)).unwrap().itinerary.map_or(0, |i| i.total_utility);
            assert!(u >= last, "trial {trial} width {w}");
            last = u;
        }
    }
}

#[test]
fn solve_is_deterministic() {
    let mut r = common::rng(19);
    for _ in 0..100 {
        let inst = common::random_instance(&mut r, 8);
        let a = serde_json::to_string(&solve(&inst, BeamWidth::Bounded(8)).unwrap().itinerary).unwrap();
        let b = serde_json::to_string(&solve(&inst.clone(), BeamWidth::Bounded(8)).unwrap().itinerary).unwrap();
        assert_eq!(a, b);
    }
}
