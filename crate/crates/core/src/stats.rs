//! Usability questionnaire scoring and two-group comparison statistics.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

pub const SUS_ITEMS: usize = 10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("item index {0} outside 1..=10")]
    ItemIndex(usize),
    #[error("item {index}: raw score {raw} outside 1..=5")]
    RawScore { index: usize, raw: u8 },
    #[error("expected 10 item scores, got {0}")]
    ItemCount(usize),
    #[error("group {0} is empty")]
    EmptyGroup(&'static str),
}

/// Contribution of one item on the 0-10 scale: odd items score
/// `(raw - 1) * 2.5`, even items `(5 - raw) * 2.5`.
pub fn sus_item_contribution(index: usize, raw: u8) -> Result<f64, StatsError> {
    if !(1..=SUS_ITEMS).contains(&index) {
        return Err(StatsError::ItemIndex(index));
    }
    if !(1..=5).contains(&raw) {
        return Err(StatsError::RawScore { index, raw });
    }
    let steps = if index % 2 == 1 { raw - 1 } else { 5 - raw };
    Ok(f64::from(steps) * 2.5)
}

/// One participant's answers: the ten standard items plus any supplementary
/// 1-5 items, which are reported raw.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SusResponse {
    items: [u8; SUS_ITEMS],
    #[serde(default)]
    supplementary: Vec<u8>,
}

impl SusResponse {
    pub fn new(items: &[u8], supplementary: &[u8]) -> Result<Self, StatsError> {
        let items: [u8; SUS_ITEMS] = items.try_into().map_err(|_| StatsError::ItemCount(items.len()))?;
        for (i, &raw) in items.iter().enumerate() {
            sus_item_contribution(i + 1, raw)?;
        }
        for (i, &raw) in supplementary.iter().enumerate() {
            if !(1..=5).contains(&raw) {
                return Err(StatsError::RawScore { index: SUS_ITEMS + 1 + i, raw });
            }
        }
        Ok(SusResponse { items, supplementary: supplementary.to_vec() })
    }

    pub fn items(&self) -> &[u8; SUS_ITEMS] {
        &self.items
    }

    pub fn supplementary(&self) -> &[u8] {
        &self.supplementary
    }

    pub fn contributions(&self) -> [f64; SUS_ITEMS] {
        core::array::from_fn(|i| {
            let steps = if i % 2 == 0 { self.items[i] - 1 } else { 5 - self.items[i] };
            f64::from(steps) * 2.5
        })
    }
}

/// SUS score on 0-100: the sum of the ten item contributions.
pub fn sus_score(resp: &SusResponse) -> f64 {
    resp.contributions().iter().sum()
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Unbiased sample variance; `None` below two observations.
pub fn sample_variance(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs)?;
    Some(xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64)
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if libm::fabs(d) < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if libm::fabs(d) < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if libm::fabs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if libm::fabs(d) < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if libm::fabs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if libm::fabs(delta - 1.0) < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b).
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b) + a * libm::log(x) + b * libm::log1p(-x);
    let front = libm::exp(ln_front);
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// Two-sided tail probability P(|T| >= |t|) for Student's t with `df`
/// degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    incomplete_beta(df / 2.0, 0.5, df / (df + t * t))
}

pub fn t_cdf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * t_two_sided_p(t, df);
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Inverse of [`t_cdf`] by bisection.
pub fn t_quantile(p: f64, df: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let (mut lo, mut hi) = (-1.0, 1.0);
    while t_cdf(lo, df) > p {
        lo *= 2.0;
    }
    while t_cdf(hi, df) < p {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if t_cdf(mid, df) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 * libm::fmax(1.0, libm::fabs(mid)) {
            break;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

/// Welch's unequal-variance two-sided t-test of `a` against `b`.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Option<WelchTest> {
    let (ma, mb) = (mean(a)?, mean(b)?);
    let (va, vb) = (sample_variance(a)?, sample_variance(b)?);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    if se2 == 0.0 {
        return Some(if ma == mb {
            WelchTest { t: 0.0, df: na + nb - 2.0, p: 1.0 }
        } else {
            WelchTest { t: libm::copysign(f64::INFINITY, ma - mb), df: na + nb - 2.0, p: 0.0 }
        });
    }
    let t = (ma - mb) / libm::sqrt(se2);
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    Some(WelchTest { t, df, p: t_two_sided_p(t, df) })
}

/// Cohen's d with the pooled standard deviation.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Option<f64> {
    let (ma, mb) = (mean(a)?, mean(b)?);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    if na + nb < 3.0 {
        return None;
    }
    let ss = |xs: &[f64], m: f64| xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    let pooled = libm::sqrt((ss(a, ma) + ss(b, mb)) / (na + nb - 2.0));
    if pooled == 0.0 {
        return Some(if ma == mb { 0.0 } else { libm::copysign(f64::INFINITY, ma - mb) });
    }
    Some((ma - mb) / pooled)
}

/// Two-sided 95% confidence interval for the mean; `None` below two
/// observations.
pub fn mean_ci95(xs: &[f64]) -> Option<(f64, f64)> {
    let m = mean(xs)?;
    let v = sample_variance(xs)?;
    let n = xs.len() as f64;
    let half = t_quantile(0.975, n - 1.0) * libm::sqrt(v / n);
    Some((m - half, m + half))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub label: String,
    pub n: usize,
    pub mean: f64,
    pub sd: Option<f64>,
    /// `None` for a single response.
    pub ci95: Option<(f64, f64)>,
    /// Mean contribution per item on 0-10; sums to `mean`.
    pub item_means: [f64; SUS_ITEMS],
    /// Mean raw score per supplementary item over the responses that have it.
    pub supplementary_means: Vec<Option<f64>>,
}

pub fn summarize_group(label: &str, group: &[SusResponse]) -> Option<GroupSummary> {
    let scores: Vec<f64> = group.iter().map(sus_score).collect();
    let mean = mean(&scores)?;
    let n = group.len();
    let mut item_means = [0.0; SUS_ITEMS];
    for r in group {
        for (acc, c) in item_means.iter_mut().zip(r.contributions()) {
            *acc += c;
        }
    }
    item_means.iter_mut().for_each(|m| *m /= n as f64);
    let width = group.iter().map(|r| r.supplementary.len()).max().unwrap_or(0);
    let supplementary_means = (0..width)
        .map(|k| {
            let vals: Vec<f64> = group.iter().filter_map(|r| r.supplementary.get(k)).map(|&v| f64::from(v)).collect();
            self::mean(&vals)
        })
        .collect();
    Some(GroupSummary {
        label: label.into(),
        n,
        mean,
        sd: sample_variance(&scores).map(libm::sqrt),
        ci95: mean_ci95(&scores),
        item_means,
        supplementary_means,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub a: GroupSummary,
    pub b: GroupSummary,
    /// Positive when group `a` scores higher.
    pub cohens_d: Option<f64>,
    /// `None` when either group has fewer than two responses.
    pub welch: Option<WelchTest>,
}

/// Between-subjects comparison of two groups of responses.
pub fn aggregate_study(
    a: &[SusResponse],
    b: &[SusResponse],
    labels: (&str, &str),
) -> Result<StudyReport, StatsError> {
    let ga = summarize_group(labels.0, a).ok_or(StatsError::EmptyGroup("a"))?;
    let gb = summarize_group(labels.1, b).ok_or(StatsError::EmptyGroup("b"))?;
    let sa: Vec<f64> = a.iter().map(sus_score).collect();
    let sb: Vec<f64> = b.iter().map(sus_score).collect();
    Ok(StudyReport { a: ga, b: gb, cohens_d: cohens_d(&sa, &sb), welch: welch_t_test(&sa, &sb) })
}

fn opt(f: &mut fmt::Formatter<'_>, v: Option<f64>) -> fmt::Result {
    match v {
        Some(v) => write!(f, "{v:.2}"),
        None => write!(f, "n/a"),
    }
}

impl fmt::Display for StudyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for g in [&self.a, &self.b] {
            write!(f, "{:<16} n={:<5} mean SUS {:.2}  sd ", g.label, g.n, g.mean)?;
            opt(f, g.sd)?;
            match g.ci95 {
                Some((lo, hi)) => writeln!(f, "  95% CI [{lo:.2}, {hi:.2}]")?,
                None => writeln!(f, "  95% CI undefined (n = 1)")?,
            }
        }
        write!(f, "Cohen's d ")?;
        opt(f, self.cohens_d)?;
        writeln!(f)?;
        match &self.welch {
            Some(w) => writeln!(f, "Welch t = {:.3}, df = {:.1}, two-sided p = {:.3e}", w.t, w.df, w.p)?,
            None => writeln!(f, "Welch t-test undefined (a group has fewer than 2 responses)")?,
        }
        writeln!(f, "Item contributions (0-10)")?;
        writeln!(f, "  item {:>10} {:>10}", self.a.label, self.b.label)?;
        for i in 0..SUS_ITEMS {
            writeln!(f, "  {:>4} {:>10.2} {:>10.2}", i + 1, self.a.item_means[i], self.b.item_means[i])?;
        }
        let width = self.a.supplementary_means.len().max(self.b.supplementary_means.len());
        if width > 0 {
            writeln!(f, "Supplementary items (1-5)")?;
            for k in 0..width {
                write!(f, "  {:>4} ", SUS_ITEMS + 1 + k)?;
                for g in [&self.a, &self.b] {
                    match g.supplementary_means.get(k).copied().flatten() {
                        Some(m) => write!(f, "{m:>10.2} ")?,
                        None => write!(f, "{:>10} ", "n/a")?,
                    }
                }
                writeln!(f)?;
            }
        }
        Ok(())
    }
}

/// Published usability results.
pub mod published {
    pub struct SusColumn {
        pub system: &'static str,
        pub reported: f64,
        /// Mean contribution of items 1..=10, by item number.
        pub items: [f64; 10],
        /// Mean raw score of supplementary items 11..=14.
        pub supplementary: [f64; 4],
    }

    pub const PARTICIPANTS_PER_SYSTEM: usize = 250;

    pub const COLUMNS: [SusColumn; 2] = [
        SusColumn {
            system: "TraveLLaMA",
            reported: 82.5,
            items: [8.8, 8.5, 8.6, 8.8, 8.0, 8.3, 8.7, 8.0, 7.9, 7.9],
            supplementary: [4.5, 4.6, 4.3, 4.5],
        },
        SusColumn {
            system: "Claude 3.5",
            reported: 76.3,
            items: [8.0, 7.3, 7.8, 7.5, 7.7, 6.9, 8.1, 7.2, 8.0, 7.8],
            supplementary: [4.1, 4.2, 4.4, 4.0],
        },
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnCheck {
    pub system: String,
    pub item_sum: f64,
    pub reported: f64,
}

impl ColumnCheck {
    /// Whether the item sum, at the table's one-decimal precision, equals
    /// the reported total.
    pub fn consistent(&self) -> bool {
        libm::fabs(crate::mcq::round_half_up(self.item_sum, 1) - self.reported) < 0.05
    }
}

/// Compares each published column's item sum with its reported total.
pub fn check_published_columns() -> Vec<ColumnCheck> {
    published::COLUMNS
        .iter()
        .map(|c| ColumnCheck { system: c.system.into(), item_sum: c.items.iter().sum(), reported: c.reported })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn contributions() {
        assert_eq!(sus_item_contribution(1, 5), Ok(10.0));
        assert_eq!(sus_item_contribution(2, 5), Ok(0.0));
        assert_eq!(sus_item_contribution(3, 3), Ok(5.0));
        assert_eq!(sus_item_contribution(0, 3), Err(StatsError::ItemIndex(0)));
        assert_eq!(sus_item_contribution(4, 6), Err(StatsError::RawScore { index: 4, raw: 6 }));
    }

    #[test]
    fn scores() {
        assert_eq!(sus_score(&SusResponse::new(&[3; 10], &[]).unwrap()), 50.0);
        let best = SusResponse::new(&[5, 1, 5, 1, 5, 1, 5, 1, 5, 1], &[]).unwrap();
        assert_eq!(sus_score(&best), 100.0);
        let worst = SusResponse::new(&[1, 5, 1, 5, 1, 5, 1, 5, 1, 5], &[]).unwrap();
        assert_eq!(sus_score(&worst), 0.0);
        assert_eq!(SusResponse::new(&[3; 9], &[]), Err(StatsError::ItemCount(9)));
        assert!(SusResponse::new(&[3; 10], &[0]).is_err());
    }

    #[test]
    fn published_columns() {
        let checks = check_published_columns();
        assert!(!checks[0].consistent());
        assert!((checks[0].item_sum - 83.5).abs() < 1e-9);
        assert!(checks[1].consistent());
        assert!((checks[1].item_sum - 76.3).abs() < 1e-9);
    }

    #[test]
    fn identical_groups() {
        let g: Vec<SusResponse> = [[3u8; 10], [4; 10], [2, 3, 4, 3, 2, 3, 4, 5, 1, 2]]
            .iter()
            .map(|r| SusResponse::new(r, &[]).unwrap())
            .collect();
        let r = aggregate_study(&g, &g, ("a", "b")).unwrap();
        assert_eq!(r.cohens_d, Some(0.0));
        assert!((r.welch.unwrap().p - 1.0).abs() < 1e-9);
        assert_eq!(aggregate_study(&g, &[], ("a", "b")), Err(StatsError::EmptyGroup("b")));
    }

    #[test]
    fn single_response_group() {
        let one = vec![SusResponse::new(&[3; 10], &[4]).unwrap()];
        let g = summarize_group("x", &one).unwrap();
        assert_eq!(g.ci95, None);
        assert_eq!(g.supplementary_means, vec![Some(4.0)]);
        let r = aggregate_study(&one, &one, ("a", "b")).unwrap();
        assert!(r.welch.is_none());
    }

    #[test]
    fn t_distribution_landmarks() {
        assert!((t_cdf(0.0, 5.0) - 0.5).abs() < 1e-15);
        // df = 1 is Cauchy: cdf(1) = 3/4
        assert!((t_cdf(1.0, 1.0) - 0.75).abs() < 1e-12);
        assert!((t_quantile(0.975, 1e6) - 1.959_963_98).abs() < 1e-5);
        assert!((t_quantile(0.975, 10.0) - 2.228_138_85).abs() < 1e-7);
    }
}
