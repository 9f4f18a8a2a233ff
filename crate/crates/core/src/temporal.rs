//! Monthly series: resampling of mixed-granularity values, gap imputation and
//! same-month extrapolation.

use serde::{Deserialize, Serialize};

use crate::apportion;
use crate::error::{Error, Result};
use crate::model::{FillFlag, Granularity, Period, QuantityKind, YearMonth};

pub const PROFILE_SUM_TOLERANCE: f64 = 1e-6;

/// Twelve monthly fractions summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalProfile {
    pub id: String,
    weights: [f64; 12],
}

impl TemporalProfile {
    /// Validates and renormalizes. Sums within 1e-6 of one are rescaled to one;
    /// anything further off, negative, or all-zero is rejected.
    pub fn new(id: impl Into<String>, weights: [f64; 12]) -> Result<Self> {
        let id = id.into();
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Domain(format!(
                "profile `{id}` has a negative or non-finite weight"
            )));
        }
        let sum: f64 = weights.iter().sum();
        if sum == 0.0 {
            return Err(Error::Domain(format!("profile `{id}` is all zero")));
        }
        if (sum - 1.0).abs() > PROFILE_SUM_TOLERANCE {
            return Err(Error::Domain(format!(
                "profile `{id}` sums to {sum}, not 1"
            )));
        }
        let mut normalized = weights.map(|w| w / sum);
        apportion::fold_residual(&mut normalized, 1.0);
        Ok(TemporalProfile {
            id,
            weights: normalized,
        })
    }

    pub fn uniform() -> Self {
        TemporalProfile {
            id: "uniform".into(),
            weights: [1.0 / 12.0; 12],
        }
    }

    pub fn weights(&self) -> &[f64; 12] {
        &self.weights
    }
}

pub fn annual_to_monthly(annual: f64, profile: &TemporalProfile) -> [f64; 12] {
    let mut months = profile.weights.map(|w| annual * w);
    apportion::fold_residual(&mut months, annual);
    months
}

pub fn quarterly_to_monthly(quarter: f64) -> [f64; 3] {
    let parts = apportion::even(quarter, 3);
    [parts[0], parts[1], parts[2]]
}

/// Apportions `amount` over `[period.start, period.end)` by days of overlap with
/// each calendar month.
pub fn span_to_monthly(period: &Period, amount: f64) -> Vec<(YearMonth, f64)> {
    let total_days = period.days() as f64;
    let mut months = Vec::new();
    let mut weights = Vec::new();
    let mut ym = YearMonth::of(period.start);
    while ym.first_day() < period.end {
        let from = ym.first_day().max(period.start);
        let to = ym.succ().first_day().min(period.end);
        months.push(ym);
        weights.push((to - from).num_days() as f64 / total_days);
        ym = ym.succ();
    }
    let parts = apportion::proportional(amount, &weights).unwrap_or_default();
    months.into_iter().zip(parts).collect()
}

/// Spreads a value over the months its period covers. Extensive quantities are
/// split (annual by profile, quarterly evenly, otherwise by days); intensive
/// quantities are carried unchanged into every covered month.
pub fn resample(
    period: &Period,
    amount: f64,
    kind: QuantityKind,
    profile: &TemporalProfile,
) -> Vec<(YearMonth, f64, FillFlag)> {
    let first = YearMonth::of(period.start);
    if kind == QuantityKind::Intensive {
        let mut out = Vec::new();
        let mut ym = first;
        while ym.first_day() < period.end {
            let flag = if period.granularity == Granularity::Monthly {
                FillFlag::Observed
            } else {
                FillFlag::SpanApportioned
            };
            out.push((ym, amount, flag));
            ym = ym.succ();
        }
        return out;
    }
    match period.granularity {
        Granularity::Monthly => vec![(first, amount, FillFlag::Observed)],
        Granularity::Quarterly => {
            let parts = quarterly_to_monthly(amount);
            let mut ym = first;
            parts
                .into_iter()
                .map(|v| {
                    let cur = ym;
                    ym = ym.succ();
                    (cur, v, FillFlag::SpanApportioned)
                })
                .collect()
        }
        Granularity::Annual => annual_to_monthly(amount, profile)
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                (
                    YearMonth {
                        year: first.year,
                        month: i as u32 + 1,
                    },
                    v,
                    FillFlag::ProfileSplit,
                )
            })
            .collect(),
        Granularity::Span => span_to_monthly(period, amount)
            .into_iter()
            .map(|(ym, v)| (ym, v, FillFlag::SpanApportioned))
            .collect(),
    }
}

/// A contiguous run of months, each either missing or holding a value and the
/// flag describing how it was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlySeries {
    pub start: YearMonth,
    cells: Vec<Option<(f64, FillFlag)>>,
}

impl MonthlySeries {
    pub fn empty(start: YearMonth, len: usize) -> Self {
        MonthlySeries {
            start,
            cells: vec![None; len],
        }
    }

    /// A series from optional observed values.
    pub fn from_observed(start: YearMonth, values: &[Option<f64>]) -> Self {
        MonthlySeries {
            start,
            cells: values
                .iter()
                .map(|v| v.map(|x| (x, FillFlag::Observed)))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Last month covered, if any.
    pub fn end(&self) -> Option<YearMonth> {
        (!self.cells.is_empty()).then(|| self.month(self.cells.len() - 1))
    }

    pub fn month(&self, idx: usize) -> YearMonth {
        let mut ym = self.start;
        let total = ym.year as i64 * 12 + (ym.month as i64 - 1) + idx as i64;
        ym.year = total.div_euclid(12) as i32;
        ym.month = total.rem_euclid(12) as u32 + 1;
        ym
    }

    pub fn index_of(&self, ym: YearMonth) -> Option<usize> {
        if ym < self.start {
            return None;
        }
        let idx = self.start.span_to(ym) - 1;
        (idx < self.cells.len()).then_some(idx)
    }

    pub fn get(&self, ym: YearMonth) -> Option<(f64, FillFlag)> {
        self.index_of(ym).and_then(|i| self.cells[i])
    }

    /// Sets a month; returns false if `ym` is outside the series.
    pub fn set(&mut self, ym: YearMonth, value: f64, flag: FillFlag) -> bool {
        match self.index_of(ym) {
            Some(i) => {
                self.cells[i] = Some((value, flag));
                true
            }
            None => false,
        }
    }

    /// Adds to a month, keeping the existing flag when there is one.
    pub fn accumulate(&mut self, ym: YearMonth, value: f64, flag: FillFlag) -> bool {
        match self.index_of(ym) {
            Some(i) => {
                self.cells[i] = Some(match self.cells[i] {
                    Some((v, f)) => (v + value, f),
                    None => (value, flag),
                });
                true
            }
            None => false,
        }
    }

    pub fn cells(&self) -> &[Option<(f64, FillFlag)>] {
        &self.cells
    }

    pub fn iter(&self) -> impl Iterator<Item = (YearMonth, Option<(f64, FillFlag)>)> + '_ {
        self.cells
            .iter()
            .enumerate()
            .map(|(i, c)| (self.month(i), *c))
    }

    pub fn is_complete(&self) -> bool {
        self.cells.iter().all(Option::is_some)
    }

    pub fn has_observations(&self) -> bool {
        self.cells.iter().any(Option::is_some)
    }

    /// Sum of the known values whose month falls in `year`.
    pub fn year_total(&self, year: i32) -> f64 {
        self.iter()
            .filter(|(ym, _)| ym.year == year)
            .filter_map(|(_, c)| c.map(|(v, _)| v))
            .sum()
    }

    pub fn flag_count(&self, flag: FillFlag) -> usize {
        self.cells
            .iter()
            .filter(|c| matches!(c, Some((_, f)) if *f == flag))
            .count()
    }
}

/// Sources consulted, in priority order, for months with no observation.
pub struct ImputeContext<'a> {
    /// Months where the absence of activity implies zero emissions.
    pub zero_implied: &'a dyn Fn(YearMonth) -> bool,
    /// Capacity x capacity factor x emission factor estimate for a month.
    pub equation: Option<&'a dyn Fn(YearMonth) -> Option<f64>>,
    pub country_avg: Option<&'a dyn Fn(YearMonth) -> Option<f64>>,
    pub global_avg: Option<&'a dyn Fn(YearMonth) -> Option<f64>>,
}

impl ImputeContext<'_> {
    pub fn none() -> ImputeContext<'static> {
        ImputeContext {
            zero_implied: &|_| false,
            equation: None,
            country_avg: None,
            global_avg: None,
        }
    }
}

/// Fills every missing month. Priority: implied zeros, the activity equation,
/// one global backward-fill pass then one forward-fill pass from the asset's
/// own values, and only for assets with no values of their own, the country
/// average and then the global average.
///
/// Fails with [`Error::Inconsistent`] if any month is still missing.
pub fn impute_series(series: &MonthlySeries, ctx: &ImputeContext<'_>) -> Result<MonthlySeries> {
    let mut out = series.clone();
    let own: Vec<Option<f64>> = series.cells.iter().map(|c| c.map(|(v, _)| v)).collect();
    let has_own = own.iter().any(Option::is_some);

    for i in 0..out.cells.len() {
        if out.cells[i].is_some() {
            continue;
        }
        let ym = out.month(i);
        if (ctx.zero_implied)(ym) {
            out.cells[i] = Some((0.0, FillFlag::ZeroFilled));
        } else if let Some(v) = ctx.equation.and_then(|eq| eq(ym)) {
            out.cells[i] = Some((v, FillFlag::EqConstrained));
        }
    }

    if has_own {
        let mut next: Option<f64> = None;
        for i in (0..out.cells.len()).rev() {
            if let Some(v) = own[i] {
                next = Some(v);
            } else if out.cells[i].is_none() {
                if let Some(v) = next {
                    out.cells[i] = Some((v, FillFlag::Backfilled));
                }
            }
        }
        let mut last: Option<f64> = None;
        for i in 0..out.cells.len() {
            if let Some(v) = own[i] {
                last = Some(v);
            } else if out.cells[i].is_none() {
                if let Some(v) = last {
                    out.cells[i] = Some((v, FillFlag::Forwardfilled));
                }
            }
        }
    } else {
        for i in 0..out.cells.len() {
            if out.cells[i].is_some() {
                continue;
            }
            let ym = out.month(i);
            if let Some(v) = ctx.country_avg.and_then(|f| f(ym)) {
                out.cells[i] = Some((v, FillFlag::CountryAvg));
            } else if let Some(v) = ctx.global_avg.and_then(|f| f(ym)) {
                out.cells[i] = Some((v, FillFlag::GlobalAvg));
            }
        }
    }

    match out.cells.iter().position(Option::is_none) {
        None => Ok(out),
        Some(i) => Err(Error::Inconsistent(format!(
            "series unestimable: no value or fallback for {}",
            out.month(i)
        ))),
    }
}

/// Capacity factors implied by an imputed series and fixed capacity and emission
/// factor, so stored factors stay consistent with the emissions.
pub fn implied_capacity_factors(
    series: &MonthlySeries,
    capacity: f64,
    emission_factor: f64,
) -> Vec<Option<f64>> {
    series
        .cells
        .iter()
        .map(|c| {
            c.and_then(|(e, _)| {
                crate::equations::decompose_emissions(
                    e,
                    crate::equations::KnownFactors::CapacityAndEf {
                        capacity,
                        emission_factor,
                    },
                )
                .ok()
            })
        })
        .collect()
}

/// Extends `series` through `end`, filling each missing month from the latest
/// earlier month with the same month-of-year. Months with no earlier
/// counterpart stay missing.
pub fn extrapolate_months(series: &MonthlySeries, end: YearMonth) -> MonthlySeries {
    let mut out = series.clone();
    if let Some(cur_end) = series.end() {
        let extra = cur_end.succ().span_to(end);
        out.cells.extend(std::iter::repeat_n(None, extra));
    }
    let mut latest: [Option<f64>; 12] = [None; 12];
    for i in 0..out.cells.len() {
        let moy = (out.month(i).month - 1) as usize;
        match out.cells[i] {
            Some((v, _)) => latest[moy] = Some(v),
            None => {
                if let Some(v) = latest[moy] {
                    out.cells[i] = Some((v, FillFlag::MonthExtrapolated));
                }
            }
        }
    }
    out
}
