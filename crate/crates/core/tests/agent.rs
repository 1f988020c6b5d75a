mod common;

use std::collections::BTreeSet;

use rand::Rng;
use wayfarer_core::agent::{
    initial_state, mark_unresolvable, regenerate, refine_session, replay, run_session, select_tool, update_plan,
    Action, Adapters, AgentError, LookupRecognizer, Need, Observation, Outcome, PlanState, Refinement,
    SessionConfig, SessionTrace,
};
use wayfarer_core::dataset::PoiStore;
use wayfarer_core::model::{Currency, Money, Poi};
use wayfarer_core::plan::BeamWidth;
use wayfarer_core::tools::{call, FailureConfig, FixtureStore, GazetteerEntry, Review, ToolId, ToolStatus};

fn city(seed: u64, n: usize) -> FixtureStore {
    let mut r = common::rng(seed);
    let pois: Vec<Poi> = (0..n).map(|i| common::random_poi(&mut r, &format!("v{i}"), "Vela")).collect();
    let reviews = pois
        .iter()
        .flat_map(|p| (0..2).map(move |k| Review { poi_id: p.id.clone(), rating: 1 + (k + p.utility as u8) % 5, text: "ok".into() }))
        .collect();
    let mut gaz = vec![GazetteerEntry { name: "Vela".into(), city: Some("Vela".into()), poi_id: None }];
    gaz.extend(pois.iter().map(|p| GazetteerEntry { name: p.name.clone(), city: None, poi_id: Some(p.id.clone()) }));
    FixtureStore::new(PoiStore::from_pois(pois).unwrap(), vec![], reviews, gaz).unwrap()
}

fn session(fx: &FixtureStore, message: &str, visual: Option<&str>, cfg: &SessionConfig) -> SessionTrace {
    let rec = LookupRecognizer::from_catalog(&fx.pois);
    let adapters = Adapters { catalog: &fx.pois, gazetteer: &fx.gazetteer, recognizer: &rec };
    let mut tools = fx.clone();
    run_session(message, visual, cfg, adapters, &mut tools).unwrap()
}

fn query(r: &mut impl Rng) -> String {
    let days = r.random_range(1..=3);
    let budget = r.random_range(0..300);
    let group = r.random_range(1..=4);
    let extra = ["", " with the best reviews", " near Place v1", " in a wheelchair"][r.random_range(0..4)];
    format!("{days} days in Vela, ${budget} for {group} people{extra}")
}

/// Walks the recorded steps again, checking the loop invariants.
fn check_progress(trace: &SessionTrace) {
    let Some(mut state) = trace.initial_state.clone() else {
        assert!(trace.steps.is_empty());
        return;
    };
    assert!(trace.steps.len() as u32 <= trace.config.max_steps);
    let mut obs = trace.observations.iter();
    for step in &trace.steps {
        let before = state.pending.len();
        let t = state.t;
        let need = state.pending.first().cloned().unwrap();
        state = match Observation::from_response(t + 1, &step.call, &step.response) {
            Some(o) => {
                assert_eq!(step.response.status, ToolStatus::Ok);
                assert_eq!(obs.next(), Some(&o));
                update_plan(&state, &o).unwrap()
            }
            None => {
                assert_ne!(step.response.status, ToolStatus::Ok);
                mark_unresolvable(&state, &need, step.response.status)
            }
        };
        assert_eq!(state.t, t + 1);
        assert!(state.pending.len() <= before);
        assert!(state.resolved.keys().all(|k| !state.pending.contains(k)));
    }
    assert_eq!(obs.next(), None);
    assert_eq!(Some(&state), trace.state.as_ref());
}

#[test]
fn random_sessions_keep_their_invariants() {
    let mut r = common::rng(1);
    for seed in 0..150 {
        let fx = city(seed, r.random_range(2..=7));
        let cfg = SessionConfig { max_steps: r.random_range(1..=40), ..SessionConfig::default() };
        let q = query(&mut r);
        let trace = session(&fx, &q, None, &cfg);
        check_progress(&trace);
        match trace.outcome() {
            Outcome::Complete => {
                assert!(trace.answer.all_feasible(), "seed {seed}: {:?}", trace.answer.verdicts);
                let budget = trace.state.as_ref().unwrap().constraints.budget.unwrap();
                assert!(trace.answer.total_cost.is_none_or(|c| c.amount <= budget.amount));
            }
            Outcome::Incomplete { unresolved } => assert!(unresolved.iter().all(Need::blocking)),
            o => panic!("seed {seed}: unexpected {o:?}"),
        }
        assert_eq!(regenerate(&trace).unwrap(), trace.answer);
        let again = session(&fx, &q, None, &cfg);
        assert_eq!(serde_json::to_string(&again).unwrap(), serde_json::to_string(&trace).unwrap());
    }
}

#[test]
fn failures_never_become_observations() {
    for seed in 0..60 {
        let mut fx = city(seed, 5);
        fx = fx.with_failures(FailureConfig { offline: BTreeSet::from([ToolId::Price]), failure_rate: 0.3, seed });
        let trace = session(&fx, "One day in Vela, $200", None, &SessionConfig::default());
        check_progress(&trace);
        let state = trace.state.as_ref().unwrap();
        assert!(state.resolved.keys().all(|n| !matches!(n, Need::Price { .. })));
        assert!(state.unresolvable.keys().any(|n| matches!(n, Need::Price { .. })));
        // without prices nothing may be scheduled
        assert!(trace.answer.days.iter().all(|d| d.itinerary.visits.is_empty()));
        assert!(state.draft.values().all(|p| p.price.amount == 0));
    }
}

#[test]
fn observation_order_does_not_matter() {
    let fx = city(3, 3);
    let rec = LookupRecognizer::from_catalog(&fx.pois);
    let adapters = Adapters { catalog: &fx.pois, gazetteer: &fx.gazetteer, recognizer: &rec };
    let spec = wayfarer_core::agent::analyze_query("Vela, $50", None, &fx.gazetteer, &rec).unwrap();
    let (state, _) = initial_state(&spec, "Vela, $50", &SessionConfig::default(), adapters).unwrap();
    let needs: Vec<Need> = state.pending.iter().take(5).cloned().collect();
    assert_eq!(needs.len(), 5);
    let observations: Vec<Observation> = needs
        .iter()
        .map(|n| {
            let mut probe = state.clone();
            probe.pending = BTreeSet::from([n.clone()]);
            let Action::Call(c) = select_tool(&probe) else { unreachable!() };
            Observation::from_response(1, &c, &call(&c, &fx)).unwrap()
        })
        .collect();
    let mut reference: Option<PlanState> = None;
    let mut idx: Vec<usize> = (0..5).collect();
    let mut count = 0;
    permute(&mut idx, 0, &mut |order| {
        let mut s = state.clone();
        for &i in order {
            s = update_plan(&s, &observations[i]).unwrap();
            let twice = update_plan(&s, &observations[i]).unwrap();
            assert_eq!(twice.resolved, s.resolved);
            assert_eq!(twice.t, s.t + 1);
        }
        s.t = 0;
        match &reference {
            None => reference = Some(s),
            Some(r) => assert_eq!(r, &s),
        }
        count += 1;
    });
    assert_eq!(count, 120);
}

fn permute(v: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == v.len() {
        f(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, f);
        v.swap(k, i);
    }
}

fn rank(n: &Need) -> u8 {
    match n {
        Need::Locate => 0,
        Need::Hours { .. } => 1,
        Need::Price { .. } => 2,
        Need::Transit { .. } => 3,
        Need::Reviews { .. } => 4,
    }
}

#[test]
fn policy_priority_over_all_pairs() {
    let fx = city(4, 2);
    let rec = LookupRecognizer::from_catalog(&fx.pois);
    let adapters = Adapters { catalog: &fx.pois, gazetteer: &fx.gazetteer, recognizer: &rec };
    let spec = wayfarer_core::agent::analyze_query("Vela, $50", None, &fx.gazetteer, &rec).unwrap();
    let (mut state, _) = initial_state(&spec, "Vela, $50", &SessionConfig::default(), adapters).unwrap();
    let ids = ["v0", "v1"];
    let mut all = vec![Need::Locate];
    for id in ids {
        all.push(Need::Hours { poi_id: id.into() });
        all.push(Need::Price { poi_id: id.into() });
        all.push(Need::Reviews { poi_id: id.into() });
    }
    all.push(Need::Transit { from: "v0".into(), to: "v1".into() });
    for a in &all {
        for b in &all {
            state.pending = BTreeSet::from([a.clone(), b.clone()]);
            let first = if (rank(a), format!("{a:?}")) <= (rank(b), format!("{b:?}")) { a } else { b };
            let Action::Call(c) = select_tool(&state) else { panic!() };
            assert_eq!(c.tool, first.tool(), "{a:?} vs {b:?}");
        }
    }
    state.pending.clear();
    assert_eq!(select_tool(&state), Action::Finish);
}

#[test]
fn duplicate_and_unknown_observations() {
    let fx = city(5, 2);
    let trace = session(&fx, "Vela $40", None, &SessionConfig::default());
    let first = trace.observations[0].clone();
    let init = trace.initial_state.clone().unwrap();
    let s1 = update_plan(&init, &first).unwrap();
    let s2 = update_plan(&s1, &first).unwrap();
    assert_eq!((s1.resolved.clone(), s1.pending.clone()), (s2.resolved, s2.pending));
    let mut stranger = first.clone();
    stranger.payload = wayfarer_core::tools::ToolPayload::Reviews {
        poi_id: "nowhere".into(),
        count: 0,
        mean_rating: None,
        snippets: vec![],
    };
    assert!(matches!(update_plan(&init, &stranger), Err(AgentError::Protocol(_))));
}

#[test]
fn tiny_step_budget_is_incomplete() {
    let fx = city(6, 4);
    let cfg = SessionConfig { max_steps: 1, ..SessionConfig::default() };
    let trace = session(&fx, "Vela $100", None, &cfg);
    assert_eq!(trace.steps.len(), 1);
    assert!(matches!(trace.outcome(), Outcome::Incomplete { .. }));
    let zero = SessionConfig { max_steps: 0, ..SessionConfig::default() };
    let rec = LookupRecognizer::from_catalog(&fx.pois);
    let adapters = Adapters { catalog: &fx.pois, gazetteer: &fx.gazetteer, recognizer: &rec };
    assert_eq!(run_session("Vela $1", None, &zero, adapters, &mut fx.clone()), Err(AgentError::ZeroSteps));
}

#[test]
fn loosening_the_budget_never_lowers_utility() {
    for seed in 0..40 {
        let fx = city(100 + seed, 6);
        let cfg = SessionConfig { beam_width: BeamWidth::Unbounded, ..SessionConfig::default() };
        let trace = session(&fx, "One day in Vela, $1", None, &cfg);
        assert_eq!(trace.outcome(), &Outcome::Complete);
        let mut last = 0;
        for dollars in (0..=200).step_by(10) {
            let r = Refinement::Budget { budget: Money::new(dollars * 100, Currency::USD) };
            let refined = refine_session(&trace, &r).unwrap();
            let u: u64 = refined.answer.days.iter().map(|d| d.itinerary.total_utility).sum();
            assert!(u >= last, "seed {seed} at ${dollars}");
            last = u;
        }
    }
}

#[test]
fn refinements() {
    let fx = city(8, 6);
    let trace = session(&fx, "One day in Vela, $150", None, &SessionConfig::default());
    assert_eq!(trace.outcome(), &Outcome::Complete);
    let visited: Vec<String> =
        trace.answer.days[0].itinerary.visits.iter().map(|v| v.poi_id.clone()).collect();
    assert!(!visited.is_empty());

    let same = refine_session(&trace, &Refinement::Budget { budget: Money::new(15000, Currency::USD) }).unwrap();
    assert_eq!(same.answer.days, trace.answer.days);

    let excl = refine_session(&trace, &Refinement::Exclude { poi_id: visited[0].clone() }).unwrap();
    assert!(excl.answer.days.iter().all(|d| d.itinerary.visits.iter().all(|v| v.poi_id != visited[0])));
    assert!(excl.answer.all_feasible());
    assert_eq!(excl.steps, trace.steps);

    let lock = refine_session(&trace, &Refinement::Lock { poi_id: visited[0].clone() }).unwrap();
    assert!(matches!(refine_session(&lock, &Refinement::Exclude { poi_id: visited[0].clone() }), Err(AgentError::LockExcludeConflict(_))));
    let broke = refine_session(&lock, &Refinement::Budget { budget: Money::new(0, Currency::USD) }).unwrap();
    let price = fx.pois.get(&visited[0]).unwrap().price.amount;
    if price > 0 {
        assert!(matches!(broke.outcome(), Outcome::InfeasibleLock { .. }));
    }

    let rec = LookupRecognizer::from_catalog(&fx.pois);
    let adapters = Adapters { catalog: &fx.pois, gazetteer: &fx.gazetteer, recognizer: &rec };
    let replayed = replay(&excl, adapters, &mut fx.clone()).unwrap();
    assert_eq!(replayed, excl);
    assert_eq!(regenerate(&excl).unwrap(), excl.answer);
}

#[test]
fn clarification_has_no_tool_calls() {
    let fx = city(9, 3);
    for q in ["hello", "two days please", "$300 budget"] {
        let trace = session(&fx, q, None, &SessionConfig::default());
        assert!(trace.steps.is_empty(), "{q}");
        assert!(matches!(trace.outcome(), Outcome::Clarification(_)), "{q}");
    }
}

#[test]
fn image_only_query_locates_then_asks() {
    let fx = city(10, 4);
    let uri = fx.pois.iter().find_map(|p| p.images.first()).map(|i| i.uri.clone());
    let Some(uri) = uri else { return };
    let trace = session(&fx, "", Some(&uri), &SessionConfig::default());
    assert!(trace.query.landmark.is_some());
    // a photo alone names the city but not a budget
    assert!(matches!(trace.outcome(), Outcome::Clarification(c) if c.missing == vec!["budget".to_string()]));
}
