mod common;

use proptest::prelude::*;
use rand::Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::statistics::Statistics;
use wayfarer_core::stats::{
    aggregate_study, check_published_columns, cohens_d, mean_ci95, sus_item_contribution, sus_score, t_quantile,
    welch_t_test, SusResponse,
};

/// Values with exact sample mean `m` and sample SD `sd`.
fn engineered(m: f64, sd: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut r = common::rng(seed);
    let raw: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    let mu = raw.iter().sum::<f64>() / n as f64;
    let s = (raw.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    raw.iter().map(|x| m + sd * (x - mu) / s).collect()
}

fn statrs_welch(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let (va, vb) = (a.variance() / a.len() as f64, b.variance() / b.len() as f64);
    let t = (a.mean() - b.mean()) / (va + vb).sqrt();
    let df = (va + vb).powi(2) / (va * va / (a.len() - 1) as f64 + vb * vb / (b.len() - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, df).unwrap();
    (t, df, 2.0 * (1.0 - dist.cdf(t.abs())))
}

#[test]
fn engineered_groups_match_closed_form_and_statrs() {
    let a = engineered(82.5, 10.0, 250, 1);
    let b = engineered(76.3, 10.0, 250, 2);
    let d = cohens_d(&a, &b).unwrap();
    assert!((d - 0.62).abs() < 1e-9, "d = {d}");
    let w = welch_t_test(&a, &b).unwrap();
    let (t, df, p) = statrs_welch(&a, &b);
    assert!((w.t - t).abs() < 1e-9);
    assert!((w.df - df).abs() < 1e-6);
    assert!((w.p - p).abs() < 1e-9, "{} vs {}", w.p, p);
    assert!(w.p < 0.001);
}

#[test]
fn t_distribution_matches_statrs() {
    let mut r = common::rng(3);
    for _ in 0..500 {
        let df = r.random_range(1.0..400.0);
        let t: f64 = r.random_range(-8.0..8.0);
        let dist = StudentsT::new(0.0, 1.0, df).unwrap();
        let ours = wayfarer_core::stats::t_cdf(t, df);
        assert!((ours - dist.cdf(t)).abs() < 1e-9, "df {df} t {t}");
        let q = r.random_range(0.001..0.999);
        assert!((t_quantile(q, df) - dist.inverse_cdf(q)).abs() < 1e-6, "df {df} q {q}");
    }
}

#[test]
fn confidence_interval_matches_statrs() {
    let xs = engineered(70.0, 12.0, 40, 9);
    let (lo, hi) = mean_ci95(&xs).unwrap();
    let half = StudentsT::new(0.0, 1.0, 39.0).unwrap().inverse_cdf(0.975) * 12.0 / 40f64.sqrt();
    assert!((lo - (70.0 - half)).abs() < 1e-6 && (hi - (70.0 + half)).abs() < 1e-6);
    assert!(mean_ci95(&[50.0]).is_none());
}

#[test]
fn published_columns() {
    let checks = check_published_columns();
    let claude = checks.iter().find(|c| c.system.contains("Claude")).unwrap();
    assert!((claude.item_sum - 76.3).abs() < 1e-9 && claude.consistent());
    let ours = checks.iter().find(|c| !c.system.contains("Claude")).unwrap();
    assert!((ours.item_sum - 83.5).abs() < 1e-9);
    assert!((ours.reported - 82.5).abs() < 1e-9);
    assert!(!ours.consistent());
}

fn response() -> impl Strategy<Value = SusResponse> {
    (prop::collection::vec(1u8..=5, 10), prop::collection::vec(1u8..=5, 0..=4))
        .prop_map(|(i, s)| SusResponse::new(&i, &s).unwrap())
}

proptest! {
    #[test]
    fn sus_score_in_range(r in response()) {
        let s = sus_score(&r);
        prop_assert!((0.0..=100.0).contains(&s));
    }

    #[test]
    fn group_mean_is_sum_of_item_means(g in prop::collection::vec(response(), 1..40)) {
        let mean = g.iter().map(sus_score).sum::<f64>() / g.len() as f64;
        let by_item: f64 = (0..10)
            .map(|i| g.iter().map(|r| sus_item_contribution(i + 1, r.items()[i]).unwrap()).sum::<f64>() / g.len() as f64)
            .sum();
        prop_assert!((mean - by_item).abs() < 1e-9);
    }

    #[test]
    fn swap_flips_sign(a in prop::collection::vec(response(), 2..30), b in prop::collection::vec(response(), 2..30)) {
        let ab = aggregate_study(&a, &b, ("A", "B")).unwrap();
        let ba = aggregate_study(&b, &a, ("B", "A")).unwrap();
        match (ab.cohens_d, ba.cohens_d) {
            (Some(x), Some(y)) => prop_assert!((x + y).abs() < 1e-12),
            (x, y) => prop_assert_eq!(x, y),
        }
        match (ab.welch, ba.welch) {
            (Some(x), Some(y)) => {
                prop_assert!((x.t + y.t).abs() < 1e-12);
                prop_assert!((x.p - y.p).abs() < 1e-12);
            }
            (x, y) => prop_assert_eq!(x.is_some(), y.is_some()),
        }
    }
}

#[test]
fn identical_groups() {
    let g: Vec<SusResponse> =
        (1..=5u8).map(|k| SusResponse::new(&[k, 6 - k, k, 3, 3, 3, k, 2, 4, 3], &[]).unwrap()).collect();
    let rep = aggregate_study(&g, &g, ("A", "B")).unwrap();
    assert!(rep.cohens_d.unwrap().abs() < 1e-9);
    assert!((rep.welch.unwrap().p - 1.0).abs() < 1e-9);
    assert!(aggregate_study(&g, &[], ("A", "B")).is_err());
}
