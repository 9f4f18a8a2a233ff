//! Acceptance criteria. Runs as a plain binary so every criterion prints one
//! PASS/FAIL line; any failure makes the target fail.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use chrono::{Days, NaiveDate};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use emisynth::aggregation::{BoundaryIndex, Level, UnitPath};
use emisynth::analysis::{classify_by_threshold, jenks_breaks, GdpClass, HIGHER_GDP_THRESHOLD};
use emisynth::copollutants::{build_ratio_table, scale_pollutants, ReferenceInventory, ReferenceRow};
use emisynth::disaggregation::compute_remainder;
use emisynth::equations::{compute_activity, compute_emissions, decompose_emissions, EmissionFactor, KnownFactors};
use emisynth::gas::{Gas, GwpTable, Horizon};
use emisynth::ingest::{AssetRegistry, CountryTotalTable, ProxyRow, ProxySurface, TotalKey};
use emisynth::model::{Asset, EmissionRecord, EstimationMethod, Granularity, Period, Provenance, SourceKind, Subsector, YearMonth};
use emisynth::pipeline::{self, Inputs, RunConfig};
use emisynth::quality::{aggregate_uncertainty, average_ranks, compare_metrics, propagate_uncertainty};
use emisynth::temporal::{
    annual_to_monthly, impute_series, quarterly_to_monthly, span_to_monthly, ImputeContext, MonthlySeries,
    TemporalProfile,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()) || (a - b).abs() <= 1e-12
}

fn toy_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/toy")
}

// ---------------------------------------------------------------- 1

struct RandomFixture {
    inputs: Inputs,
    /// (country, subsector) -> effective total, worked out independently.
    effective: BTreeMap<(String, String), f64>,
}

fn random_fixture(rng: &mut StdRng) -> RandomFixture {
    let subsectors = BTreeMap::from([
        (
            "model".to_string(),
            Subsector::new("model", "1A").with_method(EstimationMethod::AssetModel),
        ),
        (
            "disagg".to_string(),
            Subsector::new("disagg", "2A").with_method(EstimationMethod::Disaggregate),
        ),
    ]);
    let countries: Vec<String> = (0..rng.gen_range(1..=3)).map(|i| format!("C{i}")).collect();
    let mut assets = Vec::new();
    let mut paths = BTreeMap::new();
    let n_assets = rng.gen_range(0..=50);
    for i in 0..n_assets {
        let country = countries.choose(rng).unwrap().clone();
        let model = rng.gen_bool(0.5);
        let mut a = Asset::new(format!("a{i}"), if model { "model" } else { "disagg" }, country.clone());
        if model {
            a.capacity = Some(rng.gen_range(1.0..100.0));
            a.capacity_factor = Some(rng.gen_range(0.0..1.0));
            a.emission_factors.insert(Gas::Co2, rng.gen_range(0.0..2.0));
        } else if rng.gen_bool(0.8) {
            a.output = Some(rng.gen_range(0.0..10.0));
        }
        if rng.gen_bool(0.7) {
            let g1 = format!("{country}.{}", rng.gen_range(1..=2));
            let g2 = rng.gen_bool(0.5).then(|| format!("{g1}.{}", rng.gen_range(1..=2)));
            paths.insert(
                a.id.clone(),
                UnitPath {
                    gadm0: country.clone(),
                    gadm1: Some(g1),
                    gadm2: g2,
                    fuas: Vec::new(),
                },
            );
        }
        assets.push(a);
    }
    let mut proxy_rows = Vec::new();
    for c in &countries {
        let all_zero = rng.gen_bool(0.25);
        for j in 0..rng.gen_range(0..=3) {
            let unit = format!("{c}-u{j}");
            proxy_rows.push(ProxyRow {
                subsector: None,
                country: c.clone(),
                unit_id: unit.clone(),
                weight: if all_zero { 0.0 } else { rng.gen_range(0.0..5.0) },
            });
            if rng.gen_bool(0.5) {
                paths.insert(
                    unit,
                    UnitPath {
                        gadm0: c.clone(),
                        gadm1: Some(format!("{c}.1")),
                        gadm2: None,
                        fuas: Vec::new(),
                    },
                );
            }
        }
    }
    let mut totals = CountryTotalTable::default();
    let mut effective = BTreeMap::new();
    for c in &countries {
        for s in ["model", "disagg"] {
            let t = if rng.gen_bool(0.1) { 0.0 } else { rng.gen_range(0.0..2000.0) };
            totals.rows.insert(
                TotalKey {
                    country: c.clone(),
                    subsector: s.into(),
                    gas: Gas::Co2,
                    year: 2022,
                },
                t,
            );
            // modeled assets run all year at C x CF x EF a month
            let modeled: f64 = assets
                .iter()
                .filter(|a| &a.country == c && a.subsector == s && s == "model")
                .map(|a| 12.0 * a.capacity.unwrap() * a.capacity_factor.unwrap() * a.emission_factors[&Gas::Co2])
                .sum();
            effective.insert((c.clone(), s.to_string()), t.max(modeled));
        }
    }
    let registry = AssetRegistry::new(assets, &subsectors).unwrap();
    RandomFixture {
        inputs: Inputs {
            subsectors,
            registry,
            totals,
            proxies: ProxySurface::new(proxy_rows),
            boundaries: BoundaryIndex::new(paths).unwrap(),
            ..Inputs::default()
        },
        effective,
    }
}

fn belongs(unit: &str, country: &str) -> bool {
    unit == country
        || unit.strip_prefix(country).is_some_and(|rest| rest.starts_with('.') || rest.starts_with('/'))
}

fn criterion_1() -> Outcome {
    let mut rng = StdRng::seed_from_u64(1);
    let cfg = RunConfig::in_memory("2022-01..2022-12".parse().unwrap());
    let started = Instant::now();
    let mut checks = 0;
    for f in 0..200 {
        let fx = random_fixture(&mut rng);
        let run = pipeline::synthesize(&fx.inputs, &cfg).map_err(|e| format!("fixture {f}: {e}"))?;
        ensure(run.report.success, || format!("fixture {f}: audit failed {:?}", run.report.failures))?;
        let mut by_country: BTreeMap<&str, f64> = BTreeMap::new();
        for ((c, _), v) in &fx.effective {
            *by_country.entry(c).or_default() += v;
        }
        for level in [Level::Gadm0, Level::Gadm1, Level::Gadm2] {
            let totals = run.rollups[&level].unit_totals(Gas::Co2);
            for (c, want) in &by_country {
                let got: f64 = totals.iter().filter(|(u, _)| belongs(u, c)).map(|(_, v)| v).sum();
                ensure(rel_close(got, *want, 1e-6), || {
                    format!("fixture {f} {level} {c}: rolled up {got}, effective {want}")
                })?;
                checks += 1;
            }
        }
    }
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("200 fixtures, {checks} country/level checks, {elapsed:.2?}"))
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let mut rng = StdRng::seed_from_u64(2);
    for _ in 0..10_000 {
        let total = rng.gen_range(0.0..1e6);
        let assets = if rng.gen_bool(0.1) { total } else { rng.gen_range(0.0..2e6) };
        let s = compute_remainder(total, assets);
        if assets > total {
            ensure(s.remainder == 0.0 && s.effective_total == assets, || format!("{total} {assets}: {s:?}"))?;
        } else {
            ensure(s.remainder == total - assets && s.effective_total == total, || {
                format!("{total} {assets}: {s:?}")
            })?;
        }
    }
    Ok("10000 random pairs exact".into())
}

// ---------------------------------------------------------------- 3

fn per_day(start: NaiveDate, end: NaiveDate, amount: f64) -> BTreeMap<YearMonth, f64> {
    let days = (end - start).num_days() as f64;
    let mut out = BTreeMap::new();
    let mut d = start;
    while d < end {
        *out.entry(YearMonth::of(d)).or_insert(0.0) += amount / days;
        d = d + Days::new(1);
    }
    out
}

fn criterion_3() -> Outcome {
    let mut rng = StdRng::seed_from_u64(3);
    for i in 0..1000 {
        let raw: [f64; 12] = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
        let sum: f64 = raw.iter().sum();
        let profile = TemporalProfile::new(format!("p{i}"), raw.map(|w| w / sum)).map_err(|e| e.to_string())?;
        let annual = rng.gen_range(0.0..1e7);
        let months = annual_to_monthly(annual, &profile);
        let got: f64 = months.iter().sum();
        ensure((got - annual).abs() <= 1e-9 * annual.max(1.0), || format!("annual {annual} -> {got}"))?;
        let q = rng.gen_range(0.0..1e7);
        let got: f64 = quarterly_to_monthly(q).iter().sum();
        ensure((got - q).abs() <= 1e-9 * q.max(1.0), || format!("quarter {q} -> {got}"))?;
    }
    let mut leap = 0;
    for i in 0..50 {
        let start = if i < 5 {
            // straddle a leap February
            NaiveDate::from_ymd_opt(2024, 2, rng.gen_range(1..=28)).unwrap()
        } else {
            NaiveDate::from_ymd_opt(rng.gen_range(2019..=2025), rng.gen_range(1..=12), rng.gen_range(1..=28)).unwrap()
        };
        let end = start + Days::new(rng.gen_range(1..800));
        if start <= NaiveDate::from_ymd_opt(2024, 2, 29).unwrap() && end > NaiveDate::from_ymd_opt(2024, 2, 29).unwrap() {
            leap += 1;
        }
        let amount = rng.gen_range(1.0..1e6);
        let period = Period::new(start, end, Granularity::Span).map_err(|e| e.to_string())?;
        let got: BTreeMap<YearMonth, f64> = span_to_monthly(&period, amount).into_iter().collect();
        let want = per_day(start, end, amount);
        ensure(got.len() == want.len(), || format!("{start}..{end}: month sets differ"))?;
        for (ym, w) in &want {
            let g = got.get(ym).copied().unwrap_or(f64::NAN);
            ensure((g - w).abs() <= 1e-9 * amount, || format!("{start}..{end} {ym}: {g} vs {w}"))?;
        }
        let total: f64 = got.values().sum();
        ensure((total - amount).abs() <= 1e-9 * amount, || format!("{start}..{end}: sum {total}"))?;
    }
    Ok(format!("1000 profiles, 1000 quarters, 50 spans ({leap} over 2024-02-29)"))
}

// ---------------------------------------------------------------- 4

fn impute_own(values: &[Option<f64>]) -> Result<Vec<f64>, String> {
    let s = MonthlySeries::from_observed(YearMonth::new(2022, 1).unwrap(), values);
    let out = impute_series(&s, &ImputeContext::none()).map_err(|e| e.to_string())?;
    Ok(out.cells().iter().map(|c| c.unwrap().0).collect())
}

fn criterion_4() -> Outcome {
    let a = impute_own(&[None, Some(5.0), None, None])?;
    ensure(a == [5.0, 5.0, 5.0, 5.0], || format!("[_,5,_,_] -> {a:?}"))?;
    let b = impute_own(&[None, Some(5.0), None, Some(7.0)])?;
    ensure(b == [5.0, 5.0, 7.0, 7.0], || format!("[_,5,_,7] -> {b:?}"))?;
    let mut rng = StdRng::seed_from_u64(4);
    for _ in 0..100 {
        let n = rng.gen_range(1..40);
        let vals: Vec<Option<f64>> = (0..n).map(|_| Some(rng.gen_range(0.0..1e4))).collect();
        let s = MonthlySeries::from_observed(YearMonth::new(2020, rng.gen_range(1..=12)).unwrap(), &vals);
        let once = impute_series(&s, &ImputeContext::none()).map_err(|e| e.to_string())?;
        ensure(once == s, || "complete series changed".into())?;
        let twice = impute_series(&once, &ImputeContext::none()).map_err(|e| e.to_string())?;
        ensure(twice == once, || "not idempotent".into())?;
    }
    Ok("rule-order cases exact, 100 complete series unchanged".into())
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let row = |s: &str, c: &str, f: Option<&str>, g: Gas, t: f64| ReferenceRow {
        subsector: s.into(),
        country: c.into(),
        fuel: f.map(str::to_string),
        gas: g,
        tonnes: t,
    };
    let keys = [
        ("cement", "USA", None),
        ("cement", "FRA", None),
        ("power", "USA", Some("coal")),
        ("power", "USA", Some("gas")),
        ("power", "IND", Some("coal")),
    ];
    let mut rng = StdRng::seed_from_u64(5);
    let mut reference = ReferenceInventory::default();
    let mut co2e = BTreeMap::new();
    for (s, c, f) in keys {
        let co2 = rng.gen_range(100.0..1e5);
        let ch4 = rng.gen_range(0.0..50.0);
        reference.ghg.push(row(s, c, f, Gas::Co2, co2));
        reference.ghg.push(row(s, c, f, Gas::Ch4, ch4));
        co2e.insert((s, c, f), co2 + 28.0 * ch4);
        for g in [Gas::Nox, Gas::So2, Gas::Pm25] {
            reference.pollutants.push(row(s, c, f, g, rng.gen_range(0.0..500.0)));
        }
    }
    let table = build_ratio_table(&reference, &GwpTable::default(), Horizon::Years100, &BTreeMap::new())
        .map_err(|e| e.to_string())?;
    let records = |k: f64| -> Vec<EmissionRecord> {
        let mut out = Vec::new();
        for ((s, c, f), total) in &co2e {
            for m in 1..=12 {
                let r = EmissionRecord::new(
                    SourceKind::Spatial,
                    format!("{s}-{c}"),
                    *c,
                    *s,
                    Gas::Co2e100,
                    YearMonth::new(2022, m).unwrap().period(),
                    k * total / 12.0,
                    Provenance::Modeled,
                )
                .unwrap()
                .with_fuel(f.map(str::to_string));
                out.push(r);
            }
        }
        out
    };
    let sums = |recs: &[EmissionRecord]| -> Result<BTreeMap<(String, Gas, String, Option<String>), f64>, String> {
        let (scaled, _) = scale_pollutants(recs, &table, &Default::default()).map_err(|e| e.to_string())?;
        let mut m = BTreeMap::new();
        for r in scaled {
            *m.entry((r.subsector.clone(), r.gas, r.country.clone(), r.fuel.clone())).or_insert(0.0) += r.amount();
        }
        Ok(m)
    };
    let base = sums(&records(1.0))?;
    for p in &reference.pollutants {
        let got = base
            .get(&(p.subsector.clone(), p.gas, p.country.clone(), p.fuel.clone()))
            .copied()
            .unwrap_or(f64::NAN);
        ensure(rel_close(got, p.tonnes, 1e-9), || {
            format!("{} {} {} {:?}: {got} vs {}", p.subsector, p.gas, p.country, p.fuel, p.tonnes)
        })?;
    }
    for k in [0.5, 2.0, 10.0] {
        let scaled = sums(&records(k))?;
        for (key, v) in &base {
            ensure(rel_close(scaled[key], k * v, 1e-9), || format!("k={k} {key:?}"))?;
        }
    }
    Ok(format!("{} reference cells reproduced, linear for k in 0.5/2/10", reference.pollutants.len()))
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Outcome {
    let mut rng = StdRng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let c = rng.gen_range(1e-3..1e6);
        let cf = rng.gen_range(1e-3..1.0);
        let ef = rng.gen_range(1e-6..10.0);
        let a = compute_activity(c, cf, "MWh").map_err(|e| e.to_string())?;
        let e = compute_emissions(&a, &EmissionFactor::new(ef, "MWh")).map_err(|e| e.to_string())?;
        let back = [
            (
                ef,
                decompose_emissions(e, KnownFactors::CapacityAndFactor { capacity: c, capacity_factor: cf }),
            ),
            (
                cf,
                decompose_emissions(e, KnownFactors::CapacityAndEf { capacity: c, emission_factor: ef }),
            ),
            (
                c,
                decompose_emissions(e, KnownFactors::FactorAndEf { capacity_factor: cf, emission_factor: ef }),
            ),
        ];
        for (want, got) in back {
            let got = got.map_err(|e| e.to_string())?;
            worst = worst.max((got - want).abs() / want);
        }
    }
    ensure(worst < 1e-12, || format!("worst relative error {worst:e}"))?;
    Ok(format!("10000 triples, worst relative error {worst:.1e}"))
}

// ---------------------------------------------------------------- 7

fn brute_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|x| {
            let below = v.iter().filter(|y| *y < x).count() as f64;
            let equal = v.iter().filter(|y| *y == x).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

fn criterion_7() -> Outcome {
    let mut rng = StdRng::seed_from_u64(7);
    for case in 0..100 {
        let n = rng.gen_range(2..=20);
        // integer values so ties occur
        let est: Vec<f64> = (0..n).map(|_| rng.gen_range(0..15) as f64).collect();
        let rf: Vec<f64> = (0..n).map(|_| rng.gen_range(0..15) as f64).collect();
        let m = compare_metrics(&est, &rf).map_err(|e| e.to_string())?;
        let nf = n as f64;
        let mse = est.iter().zip(&rf).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / nf;
        let mae = est.iter().zip(&rf).map(|(a, b)| (a - b).abs()).sum::<f64>() / nf;
        let mean = rf.iter().sum::<f64>() / nf;
        let ss_tot: f64 = rf.iter().map(|r| (r - mean).powi(2)).sum();
        let r2 = (ss_tot > 0.0).then(|| 1.0 - mse * nf / ss_tot);
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12 * a.abs().max(b.abs()).max(1.0);
        ensure(close(m.mse, mse) && close(m.rmse, mse.sqrt()) && close(m.mae, mae), || {
            format!("case {case}: moments")
        })?;
        ensure(
            match (m.r2, r2) {
                (Some(a), Some(b)) => close(a, b),
                (None, None) => true,
                _ => false,
            },
            || format!("case {case}: r2 {:?} vs {r2:?}", m.r2),
        )?;
        ensure(average_ranks(&est) == brute_ranks(&est), || format!("case {case}: ranks"))?;
        let rho = pearson(&brute_ranks(&est), &brute_ranks(&rf));
        ensure(
            match (m.spearman, rho) {
                (Some(a), Some(b)) => close(a, b),
                (None, None) => true,
                _ => false,
            },
            || format!("case {case}: spearman {:?} vs {rho:?}", m.spearman),
        )?;
        let distinct: Vec<f64> = (0..n).map(|i| i as f64 * 1.5 + 2.0).collect();
        let reversed: Vec<f64> = distinct.iter().rev().copied().collect();
        let r = compare_metrics(&distinct, &reversed).map_err(|e| e.to_string())?;
        ensure(r.spearman == Some(-1.0), || format!("reversed n={n}: {:?}", r.spearman))?;
    }
    Ok("100 paired series, ranks exact, moments within 1e-12, reversed gives -1".into())
}

// ---------------------------------------------------------------- 8

fn exhaustive_ssd(sorted: &[f64], k: usize) -> f64 {
    let n = sorted.len();
    let ssd = |s: &[f64]| {
        let m = s.iter().sum::<f64>() / s.len() as f64;
        s.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
    };
    let mut best = f64::INFINITY;
    // every subset of k-1 cut positions among 1..n
    for mask in 0u32..(1 << (n - 1)) {
        if mask.count_ones() as usize != k - 1 {
            continue;
        }
        let mut start = 0;
        let mut total = 0.0;
        for i in 1..n {
            if mask & (1 << (i - 1)) != 0 {
                total += ssd(&sorted[start..i]);
                start = i;
            }
        }
        total += ssd(&sorted[start..]);
        best = best.min(total);
    }
    best
}

fn criterion_8() -> Outcome {
    let mut rng = StdRng::seed_from_u64(8);
    let mut cases = 0;
    for n in 2..=12 {
        for k in 2..=4.min(n) {
            for _ in 0..15 {
                let values: Vec<f64> = (0..n)
                    .map(|_| if rng.gen_bool(0.3) { rng.gen_range(0..5) as f64 } else { rng.gen_range(0.0..100.0) })
                    .collect();
                let mut sorted = values.clone();
                sorted.sort_by(f64::total_cmp);
                let j = jenks_breaks(&values, k).map_err(|e| e.to_string())?;
                let want = exhaustive_ssd(&sorted, k);
                ensure((j.ssd - want).abs() <= 1e-9 * want.max(1.0), || {
                    format!("{values:?} k={k}: dp {} vs exhaustive {want}", j.ssd)
                })?;
                cases += 1;
            }
        }
    }
    let j = jenks_breaks(&[1.0, 2.0, 3.0, 10.0, 11.0, 12.0], 2).map_err(|e| e.to_string())?;
    ensure(j.breaks == [3.0] && j.lower_bounds() == [10.0], || format!("{:?}", j.breaks))?;
    Ok(format!("{cases} datasets match the exhaustive minimum; [1,2,3,10,11,12] splits 3 | 10"))
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Outcome {
    let labels = classify_by_threshold(&[57_333.0, 57_332.99], HIGHER_GDP_THRESHOLD);
    ensure(labels == [GdpClass::Higher, GdpClass::Lower], || format!("{labels:?}"))?;
    ensure(classify_by_threshold(&[], HIGHER_GDP_THRESHOLD).is_empty(), || "empty".into())?;
    Ok("57,333 -> higher, 57,332.99 -> lower".into())
}

// ---------------------------------------------------------------- 10

fn criterion_10() -> Outcome {
    let u = propagate_uncertainty(&[3.0, 4.0]).map_err(|e| e.to_string())?;
    ensure(u == 5.0, || format!("[3,4] -> {u}"))?;
    let mut rng = StdRng::seed_from_u64(10);
    for _ in 0..50 {
        let mut v: Vec<f64> = (0..rng.gen_range(1..12)).map(|_| rng.gen_range(0.0..80.0)).collect();
        let a = propagate_uncertainty(&v).map_err(|e| e.to_string())?;
        let mut parts: Vec<(f64, f64)> = v.iter().map(|u| (rng.gen_range(0.0..1e4), *u)).collect();
        let s = aggregate_uncertainty(&parts).map_err(|e| e.to_string())?;
        v.shuffle(&mut rng);
        parts.shuffle(&mut rng);
        ensure(propagate_uncertainty(&v).map_err(|e| e.to_string())? == a, || "product order".into())?;
        let s2 = aggregate_uncertainty(&parts).map_err(|e| e.to_string())?;
        ensure(rel_close(s, s2, 1e-12), || format!("sum order {s} vs {s2}"))?;
    }
    Ok("[3%,4%] -> 5% exact, 50 vectors order-invariant".into())
}

// ---------------------------------------------------------------- 11 / 12

fn run_toy(dir: &Path, out: &Path) -> Result<(), String> {
    let cfg = RunConfig::load(&dir.join("run.toml")).map_err(|e| e.to_string())?;
    let inputs = Inputs::load(&cfg).map_err(|e| e.to_string())?;
    let run = pipeline::synthesize(&inputs, &cfg).map_err(|e| e.to_string())?;
    run.check().map_err(|e| e.to_string())?;
    run.write(out, &cfg).map_err(|e| e.to_string())?;
    Ok(())
}

fn exports(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        let name = p.file_name().unwrap().to_string_lossy().to_string();
        if name != "run_report.json" {
            out.insert(name, fs::read(&p).unwrap());
        }
    }
    out
}

fn criterion_11() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_toy(&toy_dir(), &a)?;
    run_toy(&toy_dir(), &b)?;
    let first = exports(&a);
    ensure(first == exports(&b), || "two runs differ".into())?;

    let permuted = tmp.path().join("permuted");
    fs::create_dir(&permuted).map_err(|e| e.to_string())?;
    let mut rng = StdRng::seed_from_u64(11);
    for e in fs::read_dir(toy_dir()).map_err(|e| e.to_string())? {
        let p = e.map_err(|e| e.to_string())?.path();
        if p.is_dir() {
            continue;
        }
        let text = fs::read_to_string(&p).map_err(|e| e.to_string())?;
        let name = p.file_name().unwrap();
        let body = if p.extension().is_some_and(|x| x == "csv") {
            let mut lines: Vec<&str> = text.lines().collect();
            lines[1..].shuffle(&mut rng);
            lines.join("\n") + "\n"
        } else {
            text
        };
        fs::write(permuted.join(name), body).map_err(|e| e.to_string())?;
    }
    let c = tmp.path().join("c");
    run_toy(&permuted, &c)?;
    let third = exports(&c);
    for (name, bytes) in &first {
        ensure(third.get(name) == Some(bytes), || format!("{name} differs after permuting rows"))?;
    }
    Ok(format!("{} export files byte-identical across reruns and permuted rows", first.len()))
}

fn csv_rows(path: &Path) -> Result<Vec<Vec<String>>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let mut rows = vec![rdr.headers().map_err(|e| e.to_string())?.iter().map(str::to_string).collect()];
    for r in rdr.records() {
        rows.push(r.map_err(|e| e.to_string())?.iter().map(str::to_string).collect());
    }
    Ok(rows)
}

fn criterion_12() -> Outcome {
    let started = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_toy(&toy_dir(), tmp.path())?;
    let elapsed = started.elapsed();
    let mut rows = 0;
    for name in ["inventory", "rollup_gadm0", "rollup_gadm1", "rollup_gadm2", "rollup_fua"] {
        let got = csv_rows(&tmp.path().join(format!("{name}.csv")))?;
        let want = csv_rows(&toy_dir().join("golden").join(format!("{name}.csv")))?;
        ensure(got.len() == want.len(), || format!("{name}: {} rows vs {} golden", got.len(), want.len()))?;
        for (i, (g, w)) in got.iter().zip(&want).enumerate() {
            ensure(g.len() == w.len(), || format!("{name} row {i}: width"))?;
            for (a, b) in g.iter().zip(w) {
                let same = match (a.parse::<f64>(), b.parse::<f64>()) {
                    (Ok(x), Ok(y)) => rel_close(x, y, 1e-6),
                    _ => a == b,
                };
                ensure(same, || format!("{name} row {i}: {a:?} vs golden {b:?}"))?;
            }
            rows += 1;
        }
    }
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!("{rows} rows match golden files, run took {elapsed:.2?}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("conservation over 200 random fixtures", criterion_1),
        ("remainder rule", criterion_2),
        ("temporal conservation", criterion_3),
        ("imputation order", criterion_4),
        ("co-pollutant round trip", criterion_5),
        ("activity equation algebra", criterion_6),
        ("metrics harness", criterion_7),
        ("natural breaks oracle", criterion_8),
        ("GDP threshold classification", criterion_9),
        ("uncertainty quadrature", criterion_10),
        ("determinism", criterion_11),
        ("golden end-to-end fixture", criterion_12),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
