//! Confidence rubric, uncertainty propagation and validation metrics.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{code_enum, ConfidenceLevel};

code_enum! {
    /// Spatial specificity of the emission factor behind an estimate.
    pub enum EfGranularity {
        Asset => "asset",
        Regional => "regional",
        Country => "country",
        Global => "global",
    }
}

code_enum! {
    pub enum ActivitySource {
        Reported => "reported",
        SatelliteModeled => "satellite_modeled",
        Proxy => "proxy",
        Imputed => "imputed",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Evidence {
    pub ef: EfGranularity,
    pub activity: ActivitySource,
}

/// Lookup from evidence descriptors to a confidence level. Covers every
/// (EF granularity, activity source) pair, and a finer emission factor never
/// yields lower confidence for the same activity source.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceRubric {
    table: BTreeMap<Evidence, ConfidenceLevel>,
}

impl ConfidenceRubric {
    pub fn new(rules: impl IntoIterator<Item = (Evidence, ConfidenceLevel)>) -> Result<Self> {
        let mut table = BTreeMap::new();
        for (ev, level) in rules {
            if table.insert(ev, level).is_some() {
                return Err(Error::Config(format!(
                    "rubric has two rules for ({}, {})",
                    ev.ef, ev.activity
                )));
            }
        }
        for &ef in EfGranularity::ALL {
            for &activity in ActivitySource::ALL {
                if !table.contains_key(&Evidence { ef, activity }) {
                    return Err(Error::Config(format!(
                        "rubric has no rule for ({ef}, {activity})"
                    )));
                }
            }
        }
        for &activity in ActivitySource::ALL {
            for pair in EfGranularity::ALL.windows(2) {
                let finer = table[&Evidence { ef: pair[0], activity }];
                let coarser = table[&Evidence { ef: pair[1], activity }];
                if finer < coarser {
                    return Err(Error::Config(format!(
                        "rubric not monotone: {} EF gives {finer} but {} EF gives {coarser} for {activity} activity",
                        pair[0], pair[1]
                    )));
                }
            }
        }
        Ok(ConfidenceRubric { table })
    }

    pub fn rules(&self) -> impl Iterator<Item = (Evidence, ConfidenceLevel)> + '_ {
        self.table.iter().map(|(e, l)| (*e, *l))
    }
}

impl Default for ConfidenceRubric {
    /// Rows are EF granularity, columns activity source
    /// (reported, satellite_modeled, proxy, imputed):
    ///
    /// ```text
    /// asset     high    high    medium    low
    /// regional  medium  medium  low       very_low
    /// country   medium  medium  low       very_low
    /// global    low     low     very_low  very_low
    /// ```
    fn default() -> Self {
        use ConfidenceLevel::*;
        let rows = [
            (EfGranularity::Asset, [High, High, Medium, Low]),
            (EfGranularity::Regional, [Medium, Medium, Low, VeryLow]),
            (EfGranularity::Country, [Medium, Medium, Low, VeryLow]),
            (EfGranularity::Global, [Low, Low, VeryLow, VeryLow]),
        ];
        let rules = rows.iter().flat_map(|(ef, levels)| {
            ActivitySource::ALL
                .iter()
                .zip(levels)
                .map(move |(a, l)| (Evidence { ef: *ef, activity: *a }, *l))
        });
        ConfidenceRubric::new(rules).expect("default rubric is total and monotone")
    }
}

pub fn assign_confidence(evidence: Evidence, rubric: &ConfidenceRubric) -> ConfidenceLevel {
    rubric.table[&evidence]
}

/// Relative uncertainty (%) of a product of independent factors: root sum of squares.
pub fn propagate_uncertainty(components: &[f64]) -> Result<f64> {
    if let Some(bad) = components.iter().find(|u| !(**u >= 0.0) || !u.is_finite()) {
        return Err(Error::Domain(format!("uncertainty {bad}% is not a finite nonnegative value")));
    }
    // summing in sorted order makes the result independent of input order
    let mut squares: Vec<f64> = components.iter().map(|u| u * u).collect();
    squares.sort_by(f64::total_cmp);
    Ok(squares.iter().sum::<f64>().sqrt())
}

/// Relative uncertainty (%) of a sum of independent quantities, each given as
/// `(amount, relative uncertainty %)`: quantity-weighted root sum of squares.
pub fn aggregate_uncertainty(parts: &[(f64, f64)]) -> Result<f64> {
    let mut total = 0.0;
    let mut abs_sq = 0.0;
    for &(q, u) in parts {
        if !(q >= 0.0) || !(u >= 0.0) {
            return Err(Error::Domain(format!(
                "quantity {q} and uncertainty {u}% must be >= 0"
            )));
        }
        total += q;
        abs_sq += (q * u) * (q * u);
    }
    if total == 0.0 {
        return Ok(0.0);
    }
    Ok(abs_sq.sqrt() / total)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Metrics {
    pub n: usize,
    pub rmse: f64,
    pub mse: f64,
    pub mae: f64,
    /// `1 - SS_res / SS_tot` against the reference; undefined for a constant reference.
    pub r2: Option<f64>,
    /// Undefined when either series is constant.
    pub spearman: Option<f64>,
}

/// Fractional ranks, 1-based, ties get the mean of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of two rank vectors, computed exactly on doubled ranks
/// (which are integers) so that perfect agreement yields exactly +-1.
fn rank_correlation(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as i128;
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0i128, 0i128, 0i128, 0i128, 0i128);
    for (a, b) in x.iter().zip(y) {
        let a = (a * 2.0) as i128;
        let b = (b * 2.0) as i128;
        sx += a;
        sy += b;
        sxx += a * a;
        syy += b * b;
        sxy += a * b;
    }
    let cov = n * sxy - sx * sy;
    let vx = n * sxx - sx * sx;
    let vy = n * syy - sy * sy;
    if vx == 0 || vy == 0 {
        return None;
    }
    if let (Some(c2), Some(v2)) = (cov.checked_mul(cov), vx.checked_mul(vy)) {
        if c2 == v2 {
            return Some(if cov > 0 { 1.0 } else { -1.0 });
        }
    }
    Some((cov as f64 / ((vx as f64).sqrt() * (vy as f64).sqrt())).clamp(-1.0, 1.0))
}

pub fn compare_metrics(estimates: &[f64], reference: &[f64]) -> Result<Metrics> {
    if estimates.len() != reference.len() {
        return Err(Error::Usage(format!(
            "series lengths differ: {} estimates vs {} reference values",
            estimates.len(),
            reference.len()
        )));
    }
    if estimates.len() < 2 {
        return Err(Error::Usage("metrics need at least two paired values".into()));
    }
    if estimates.iter().chain(reference).any(|v| !v.is_finite()) {
        return Err(Error::Domain("metric inputs must be finite".into()));
    }
    let n = estimates.len();
    let nf = n as f64;
    let mut sq = 0.0;
    let mut abs = 0.0;
    for (e, r) in estimates.iter().zip(reference) {
        sq += (e - r) * (e - r);
        abs += (e - r).abs();
    }
    let mse = sq / nf;
    let mean_ref = reference.iter().sum::<f64>() / nf;
    let ss_tot: f64 = reference.iter().map(|r| (r - mean_ref) * (r - mean_ref)).sum();
    let r2 = (ss_tot > 0.0).then(|| 1.0 - sq / ss_tot);
    let spearman = rank_correlation(&average_ranks(estimates), &average_ranks(reference));
    Ok(Metrics {
        n,
        rmse: mse.sqrt(),
        mse,
        mae: abs / nf,
        r2,
        spearman,
    })
}

/// Pairs two keyed series on their shared keys and compares them. Also returns
/// the number of keys present on only one side.
pub fn compare_keyed<K: Ord>(
    estimates: &BTreeMap<K, f64>,
    reference: &BTreeMap<K, f64>,
) -> Result<(Metrics, usize)> {
    let mut e = Vec::new();
    let mut r = Vec::new();
    for (k, v) in estimates {
        if let Some(rv) = reference.get(k) {
            e.push(*v);
            r.push(*rv);
        }
    }
    let unmatched = estimates.len() + reference.len() - 2 * e.len();
    Ok((compare_metrics(&e, &r)?, unmatched))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rubric_examples() {
        let r = ConfidenceRubric::default();
        let ev = |ef, activity| Evidence { ef, activity };
        assert_eq!(
            assign_confidence(ev(EfGranularity::Asset, ActivitySource::Reported), &r),
            ConfidenceLevel::High
        );
        assert_eq!(
            assign_confidence(ev(EfGranularity::Country, ActivitySource::Proxy), &r),
            ConfidenceLevel::Low
        );
        for &a in ActivitySource::ALL {
            assert!(assign_confidence(ev(EfGranularity::Country, a), &r) <= ConfidenceLevel::Medium);
        }
    }

    #[test]
    fn rubric_rejects_gaps_and_inversions() {
        let full: Vec<_> = ConfidenceRubric::default().rules().collect();
        assert!(ConfidenceRubric::new(full[1..].to_vec()).is_err());
        let mut inverted = full.clone();
        for (ev, level) in inverted.iter_mut() {
            if ev.ef == EfGranularity::Global && ev.activity == ActivitySource::Reported {
                *level = ConfidenceLevel::VeryHigh;
            }
        }
        assert!(ConfidenceRubric::new(inverted).is_err());
    }

    #[test]
    fn quadrature_examples() {
        assert_eq!(propagate_uncertainty(&[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(propagate_uncertainty(&[7.5]).unwrap(), 7.5);
        assert!(propagate_uncertainty(&[-1.0]).is_err());
        // sqrt(10^2 + 30^2) / 400
        let u = aggregate_uncertainty(&[(100.0, 10.0), (300.0, 10.0)]).unwrap();
        assert!((u - 1000f64.sqrt() / 400.0 * 100.0).abs() < 1e-12);
        assert!((u - 7.9057).abs() < 1e-4);
    }

    #[test]
    fn metric_examples() {
        let r = [1.0, 4.0, 2.0, 8.0];
        let m = compare_metrics(&r, &r).unwrap();
        assert_eq!(m.rmse, 0.0);
        assert_eq!(m.spearman, Some(1.0));
        assert_eq!(m.r2, Some(1.0));

        let shifted: Vec<f64> = r.iter().map(|v| v + 1.0).collect();
        let m = compare_metrics(&shifted, &r).unwrap();
        assert_eq!(m.mae, 1.0);
        assert_eq!(m.spearman, Some(1.0));

        let fwd = [1.0, 2.0, 3.0, 4.0, 5.0];
        let rev = [5.0, 4.0, 3.0, 2.0, 1.0];
        // 1 - 6 * sum(d^2) / (n (n^2 - 1)) = 1 - 6 * 40 / 120
        assert_eq!(compare_metrics(&fwd, &rev).unwrap().spearman, Some(-1.0));

        assert!(compare_metrics(&[1.0], &[1.0]).is_err());
        assert!(compare_metrics(&[1.0, 2.0], &[1.0]).is_err());
        assert_eq!(compare_metrics(&[1.0, 2.0], &[3.0, 3.0]).unwrap().r2, None);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    }

    #[test]
    fn keyed_pairs_on_intersection() {
        let e = BTreeMap::from([("a", 1.0), ("b", 2.0), ("c", 3.0)]);
        let r = BTreeMap::from([("a", 1.0), ("b", 2.0), ("d", 9.0)]);
        let (m, unmatched) = compare_keyed(&e, &r).unwrap();
        assert_eq!(m.n, 2);
        assert_eq!(unmatched, 2);
    }

    proptest! {
        #[test]
        fn rmse_dominates_mae(pairs in proptest::collection::vec((-1e3..1e3f64, -1e3..1e3f64), 2..50)) {
            let (e, r): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let m = compare_metrics(&e, &r).unwrap();
            prop_assert!(m.rmse + 1e-12 >= m.mae);
            prop_assert!((m.mse - m.rmse * m.rmse).abs() <= 1e-9 * m.mse.max(1.0));
            if let Some(rho) = m.spearman {
                prop_assert!((-1.0..=1.0).contains(&rho));
            }
        }

        #[test]
        fn spearman_ignores_monotone_transforms(v in proptest::collection::vec((0.1..1e3f64, 0.1..1e3f64), 3..30)) {
            let (e, r): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let base = compare_metrics(&e, &r).unwrap().spearman;
            let te: Vec<f64> = e.iter().map(|x| x.ln() * 3.0 + 7.0).collect();
            let tr: Vec<f64> = r.iter().map(|x| x.powi(3)).collect();
            let moved = compare_metrics(&te, &tr).unwrap().spearman;
            match (base, moved) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
                (a, b) => prop_assert_eq!(a, b),
            }
        }

        #[test]
        fn quadrature_bounds_each_component(u in proptest::collection::vec(0.0..100.0f64, 1..10)) {
            let total = propagate_uncertainty(&u).unwrap();
            for x in &u {
                prop_assert!(total + 1e-12 >= *x);
            }
            let mut rev = u.clone();
            rev.reverse();
            prop_assert_eq!(propagate_uncertainty(&rev).unwrap().to_bits(), total.to_bits());
        }
    }
}
