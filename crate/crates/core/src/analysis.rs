//! Trend statistics and one-dimensional classification of cities.

use serde::Serialize;

use crate::error::{Error, Result};

/// Year-over-year percent changes of an annual series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendResult {
    pub unit_id: String,
    pub first_year: i32,
    /// `steps[t]` is the change from year `t` to `t + 1`; `None` where the
    /// earlier value is not positive.
    pub steps: Vec<Option<f64>>,
    /// Arithmetic mean of the defined steps.
    pub mean_pct: Option<f64>,
    /// Compound annual growth rate between the first and last value.
    pub cagr_pct: Option<f64>,
    pub diagnostics: Vec<String>,
}

pub fn pct_change_series(unit_id: &str, first_year: i32, totals: &[f64]) -> TrendResult {
    let mut diagnostics = Vec::new();
    let mut steps = Vec::with_capacity(totals.len().saturating_sub(1));
    for (t, pair) in totals.windows(2).enumerate() {
        let (prev, cur) = (pair[0], pair[1]);
        if prev > 0.0 && cur >= 0.0 && cur.is_finite() {
            steps.push(Some((cur - prev) / prev * 100.0));
        } else {
            diagnostics.push(format!(
                "{unit_id}: step {}->{} undefined (anchor {prev}, value {cur})",
                first_year + t as i32,
                first_year + t as i32 + 1
            ));
            steps.push(None);
        }
    }
    let defined: Vec<f64> = steps.iter().flatten().copied().collect();
    let mean_pct = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    let cagr_pct = match (totals.first(), totals.last()) {
        (Some(&a), Some(&b)) if totals.len() >= 2 && a > 0.0 && b > 0.0 => {
            Some(((b / a).powf(1.0 / (totals.len() - 1) as f64) - 1.0) * 100.0)
        }
        _ => None,
    };
    TrendResult {
        unit_id: unit_id.to_string(),
        first_year,
        steps,
        mean_pct,
        cagr_pct,
        diagnostics,
    }
}

/// Optimal partition of sorted values into contiguous classes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NaturalBreaks {
    /// Sorted copy of the input.
    pub sorted: Vec<f64>,
    /// Half-open index ranges into `sorted`, one per class.
    pub classes: Vec<(usize, usize)>,
    /// Upper bound (largest member) of every class but the last.
    pub breaks: Vec<f64>,
    /// Total within-class sum of squared deviations.
    pub ssd: f64,
    /// Fewer distinct values than classes.
    pub degenerate: bool,
}

impl NaturalBreaks {
    /// Index of the class a value falls in.
    pub fn class_of(&self, value: f64) -> usize {
        self.breaks.iter().take_while(|b| value > **b).count()
    }

    /// Lower bound (smallest member) of each class after the first.
    pub fn lower_bounds(&self) -> Vec<f64> {
        self.classes.iter().skip(1).map(|(s, _)| self.sorted[*s]).collect()
    }
}

/// Within-class SSD of `sorted[from..to]` from prefix sums.
fn ssd(prefix: &[f64], prefix_sq: &[f64], from: usize, to: usize) -> f64 {
    let n = (to - from) as f64;
    let s = prefix[to] - prefix[from];
    let sq = prefix_sq[to] - prefix_sq[from];
    (sq - s * s / n).max(0.0)
}

/// Exact Jenks natural breaks by dynamic programming over sorted values.
/// Among equal-cost partitions the one with the lowest break positions wins.
pub fn jenks_breaks(values: &[f64], k: usize) -> Result<NaturalBreaks> {
    let n = values.len();
    if k < 2 {
        return Err(Error::Usage(format!("need at least 2 classes, got {k}")));
    }
    if k > n {
        return Err(Error::Usage(format!("{k} classes requested for {n} values")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("natural breaks need finite values".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut prefix = vec![0.0; n + 1];
    let mut prefix_sq = vec![0.0; n + 1];
    for (i, v) in sorted.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
        prefix_sq[i + 1] = prefix_sq[i] + v * v;
    }

    // cost[c][i]: best SSD splitting the first i values into c + 1 classes.
    let mut cost = vec![vec![f64::INFINITY; n + 1]; k];
    let mut cut = vec![vec![0usize; n + 1]; k];
    for i in 1..=n {
        cost[0][i] = ssd(&prefix, &prefix_sq, 0, i);
    }
    for c in 1..k {
        for i in (c + 1)..=n {
            for j in c..i {
                let candidate = cost[c - 1][j] + ssd(&prefix, &prefix_sq, j, i);
                if candidate < cost[c][i] {
                    cost[c][i] = candidate;
                    cut[c][i] = j;
                }
            }
        }
    }

    let mut bounds = vec![n];
    let mut i = n;
    for c in (1..k).rev() {
        i = cut[c][i];
        bounds.push(i);
    }
    bounds.push(0);
    bounds.reverse();
    let classes: Vec<(usize, usize)> = bounds.windows(2).map(|w| (w[0], w[1])).collect();
    let breaks = classes[..k - 1].iter().map(|(_, e)| sorted[e - 1]).collect();
    let distinct = 1 + sorted.windows(2).filter(|w| w[0] != w[1]).count();
    Ok(NaturalBreaks {
        ssd: cost[k - 1][n],
        sorted,
        classes,
        breaks,
        degenerate: distinct < k,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GdpClass {
    Higher,
    Lower,
}

impl GdpClass {
    pub fn code(self) -> &'static str {
        match self {
            GdpClass::Higher => "higher",
            GdpClass::Lower => "lower",
        }
    }
}

/// GDP per capita at or above which a city counts as higher-GDP in the
/// 500-city analysis.
pub const HIGHER_GDP_THRESHOLD: f64 = 57_333.0;

pub fn classify_by_threshold(values: &[f64], threshold: f64) -> Vec<GdpClass> {
    values
        .iter()
        .map(|v| if *v >= threshold { GdpClass::Higher } else { GdpClass::Lower })
        .collect()
}

/// Per-city input to the group comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct CityTrend {
    pub city_id: String,
    pub class: GdpClass,
    pub trend: TrendResult,
    pub first_total: f64,
    pub last_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub class: GdpClass,
    pub cities: usize,
    /// Mean over cities of each city's mean annual % change.
    pub mean_of_city_changes_pct: Option<f64>,
    /// CAGR of the pooled group total.
    pub pooled_cagr_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupComparison {
    pub higher: GroupSummary,
    pub lower: GroupSummary,
    /// lower / higher using per-city mean changes.
    pub ratio_of_city_means: Option<f64>,
    /// lower / higher using pooled totals.
    pub ratio_of_pooled: Option<f64>,
}

pub fn compare_groups(cities: &[CityTrend], years: usize) -> GroupComparison {
    let summarize = |class: GdpClass| {
        let members: Vec<&CityTrend> = cities.iter().filter(|c| c.class == class).collect();
        let changes: Vec<f64> = members.iter().filter_map(|c| c.trend.mean_pct).collect();
        let first: f64 = members.iter().map(|c| c.first_total).sum();
        let last: f64 = members.iter().map(|c| c.last_total).sum();
        GroupSummary {
            class,
            cities: members.len(),
            mean_of_city_changes_pct: (!changes.is_empty())
                .then(|| changes.iter().sum::<f64>() / changes.len() as f64),
            pooled_cagr_pct: (first > 0.0 && last > 0.0 && years >= 2)
                .then(|| ((last / first).powf(1.0 / (years - 1) as f64) - 1.0) * 100.0),
        }
    };
    let higher = summarize(GdpClass::Higher);
    let lower = summarize(GdpClass::Lower);
    let ratio = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(l), Some(h)) if h != 0.0 => Some(l / h),
        _ => None,
    };
    GroupComparison {
        ratio_of_city_means: ratio(lower.mean_of_city_changes_pct, higher.mean_of_city_changes_pct),
        ratio_of_pooled: ratio(lower.pooled_cagr_pct, higher.pooled_cagr_pct),
        higher,
        lower,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive oracle: try every way of cutting the sorted values into k runs.
    fn brute_force_ssd(values: &[f64], k: usize) -> f64 {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let class_ssd = |s: &[f64]| {
            let m = s.iter().sum::<f64>() / s.len() as f64;
            s.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
        };
        let mut best = f64::INFINITY;
        let mut cuts = vec![0usize; k - 1];
        fn rec(pos: usize, start: usize, n: usize, cuts: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
            if pos == cuts.len() {
                f(cuts);
                return;
            }
            for c in start..n {
                cuts[pos] = c;
                rec(pos + 1, c + 1, n, cuts, f);
            }
        }
        rec(0, 1, n, &mut cuts, &mut |cuts| {
            let mut bounds = vec![0];
            bounds.extend_from_slice(cuts);
            bounds.push(n);
            let total: f64 = bounds.windows(2).map(|w| class_ssd(&sorted[w[0]..w[1]])).sum();
            if total < best {
                best = total;
            }
        });
        best
    }

    #[test]
    fn trend_examples() {
        let t = pct_change_series("c", 2020, &[100.0, 100.0, 100.0]);
        assert_eq!(t.steps, vec![Some(0.0), Some(0.0)]);
        assert_eq!(t.mean_pct, Some(0.0));

        let t = pct_change_series("c", 2020, &[100.0, 110.0]);
        assert!((t.mean_pct.unwrap() - 10.0).abs() < 1e-12);

        let t = pct_change_series("c", 2020, &[100.0, 110.0, 99.0]);
        let s: Vec<f64> = t.steps.iter().map(|s| s.unwrap()).collect();
        assert!((s[0] - 10.0).abs() < 1e-12 && (s[1] + 10.0).abs() < 1e-12);
        assert!(t.mean_pct.unwrap().abs() < 1e-12);
        // CAGR differs from the arithmetic mean here
        assert!(t.cagr_pct.unwrap() < 0.0);
    }

    #[test]
    fn zero_anchor_is_excluded() {
        let t = pct_change_series("c", 2020, &[0.0, 5.0, 10.0]);
        assert_eq!(t.steps[0], None);
        assert_eq!(t.mean_pct, Some(100.0));
        assert_eq!(t.diagnostics.len(), 1);
        assert_eq!(t.cagr_pct, None);
    }

    #[test]
    fn jenks_examples() {
        let j = jenks_breaks(&[1.0, 2.0, 3.0, 10.0, 11.0, 12.0], 2).unwrap();
        assert_eq!(j.breaks, vec![3.0]);
        assert_eq!(j.lower_bounds(), vec![10.0]);
        assert_eq!(j.class_of(3.0), 0);
        assert_eq!(j.class_of(10.0), 1);
        assert!(!j.degenerate);

        let flat = jenks_breaks(&[4.0; 5], 2).unwrap();
        assert!(flat.degenerate);
        assert_eq!(flat.ssd, 0.0);

        let shuffled = jenks_breaks(&[11.0, 2.0, 12.0, 1.0, 10.0, 3.0], 2).unwrap();
        assert_eq!(shuffled.breaks, j.breaks);

        assert!(matches!(jenks_breaks(&[1.0, 2.0], 3), Err(Error::Usage(_))));
        assert!(jenks_breaks(&[1.0, 2.0], 1).is_err());
    }

    #[test]
    fn jenks_one_class_per_value() {
        let v = [5.0, 1.0, 3.0, 9.0];
        let j = jenks_breaks(&v, 4).unwrap();
        assert_eq!(j.ssd, 0.0);
        assert!(j.classes.iter().all(|(s, e)| e - s == 1));
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(classify_by_threshold(&[57_333.0], HIGHER_GDP_THRESHOLD), vec![GdpClass::Higher]);
        assert_eq!(classify_by_threshold(&[57_332.99], HIGHER_GDP_THRESHOLD), vec![GdpClass::Lower]);
        assert!(classify_by_threshold(&[], HIGHER_GDP_THRESHOLD).is_empty());
    }

    #[test]
    fn group_comparison_reports_both_readings() {
        let city = |id: &str, class, series: &[f64]| CityTrend {
            city_id: id.into(),
            class,
            trend: pct_change_series(id, 2020, series),
            first_total: series[0],
            last_total: *series.last().unwrap(),
        };
        let cities = vec![
            city("a", GdpClass::Higher, &[100.0, 101.0, 102.01]),
            city("b", GdpClass::Lower, &[100.0, 103.0, 106.09]),
            city("c", GdpClass::Lower, &[10.0, 10.0, 10.0]),
        ];
        let g = compare_groups(&cities, 3);
        assert_eq!(g.lower.cities, 2);
        assert!((g.higher.mean_of_city_changes_pct.unwrap() - 1.0).abs() < 1e-9);
        assert!((g.lower.mean_of_city_changes_pct.unwrap() - 1.5).abs() < 1e-9);
        assert!((g.ratio_of_city_means.unwrap() - 1.5).abs() < 1e-9);
        assert!(g.ratio_of_pooled.unwrap() > 1.0);
    }

    proptest! {
        #[test]
        fn dp_matches_exhaustive(v in proptest::collection::vec(0.0..100.0f64, 2..10), k in 2usize..5) {
            prop_assume!(k <= v.len());
            let j = jenks_breaks(&v, k).unwrap();
            let best = brute_force_ssd(&v, k);
            prop_assert!((j.ssd - best).abs() <= 1e-9 * best.max(1.0));
        }

        #[test]
        fn geometric_series_has_constant_steps(start in 1.0..1e6f64, r in 0.5..2.0f64, n in 2usize..12) {
            let series: Vec<f64> = (0..n).map(|i| start * r.powi(i as i32)).collect();
            let t = pct_change_series("g", 2000, &series);
            for s in t.steps {
                prop_assert!((s.unwrap() - (r - 1.0) * 100.0).abs() < 1e-9);
            }
        }

        #[test]
        fn threshold_partitions(v in proptest::collection::vec(0.0..2e5f64, 0..50)) {
            let c = classify_by_threshold(&v, HIGHER_GDP_THRESHOLD);
            let hi = c.iter().filter(|x| **x == GdpClass::Higher).count();
            let lo = c.iter().filter(|x| **x == GdpClass::Lower).count();
            prop_assert_eq!(hi + lo, v.len());
        }
    }
}
