//! Gap filling in space: country totals to assets, remainders to proxy units,
//! and implicit estimation by subtraction.

use serde::{Deserialize, Serialize};

use crate::apportion;
use crate::error::{Error, Result};
use crate::gas::Gas;
use crate::model::Asset;

/// Number of establishments that emit: the registered total scaled by the
/// emitting ratio, or the scraped emitting count when that is larger.
pub fn adjust_emitting_count(total_establishments: u64, ratio: f64, scraped_emitting: u64) -> Result<u64> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Domain(format!("emitting ratio {ratio} outside [0, 1]")));
    }
    let adjusted = (total_establishments as f64 * ratio).round() as u64;
    Ok(adjusted.max(scraped_emitting))
}

/// Country emission factor `E / A`. `None` when activity is zero, in which case
/// the caller falls back to default imputation.
pub fn derive_country_ef(total_emissions: f64, total_activity: f64) -> Result<Option<f64>> {
    if !(total_emissions >= 0.0 && total_activity >= 0.0) {
        return Err(Error::Domain(format!(
            "emissions {total_emissions} and activity {total_activity} must be >= 0"
        )));
    }
    if total_activity == 0.0 {
        if total_emissions > 0.0 {
            log::debug!("emissions {total_emissions} with zero activity: country EF undefined");
        }
        return Ok(None);
    }
    Ok(Some(total_emissions / total_activity))
}

/// One asset competing for a country total.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationCandidate {
    pub asset_id: String,
    /// Activity proxy (economic output, capacity, or 1 for uniform).
    pub proxy: f64,
    /// Annual emissions the asset reported itself, if any.
    pub reported: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShareKind {
    Reported,
    Allocated,
    /// Reported assets already cover the total; this asset needs default imputation.
    NeedsDefaults,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssetShare {
    pub asset_id: String,
    pub amount: f64,
    pub kind: ShareKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssetAllocation {
    /// Sorted by asset id.
    pub shares: Vec<AssetShare>,
    /// Country total after reported assets are allowed to exceed it.
    pub effective_total: f64,
    /// Total left for unreported assets after subtracting reported emissions.
    pub pool: f64,
    /// Emission factor per unit of proxy applied to the pool.
    pub country_ef: Option<f64>,
    /// The part of the pool that belongs to establishments absent from the registry.
    pub unplaced: f64,
    /// Proxies summed to zero and the pool was split evenly.
    pub uniform_fallback: bool,
}

/// Allocates a country total to assets in proportion to their activity proxies.
///
/// Reported assets keep their values and shrink the pool; when they meet or
/// exceed the total, their sum becomes the effective total. `unplaced_activity`
/// is proxy mass of emitting establishments that have no registry entry; their
/// share of the pool is returned as `unplaced` rather than assigned.
pub fn allocate_country_to_assets(
    country_total: f64,
    candidates: &[AllocationCandidate],
    unplaced_activity: f64,
) -> Result<AssetAllocation> {
    if !(country_total.is_finite() && country_total >= 0.0) {
        return Err(Error::Domain(format!("country total {country_total} must be >= 0")));
    }
    if !(unplaced_activity >= 0.0) {
        return Err(Error::Domain("unplaced activity must be >= 0".into()));
    }
    let mut sorted: Vec<&AllocationCandidate> = candidates.iter().collect();
    sorted.sort_by(|a, b| a.asset_id.cmp(&b.asset_id));
    for c in &sorted {
        if !(c.proxy >= 0.0) || c.reported.is_some_and(|r| !(r >= 0.0)) {
            return Err(Error::Domain(format!("asset {} has a negative proxy or report", c.asset_id)));
        }
    }

    let reported_sum: f64 = sorted.iter().filter_map(|c| c.reported).sum();
    let pool = (country_total - reported_sum).max(0.0);
    let effective_total = country_total.max(reported_sum);
    let open: Vec<&AllocationCandidate> = sorted.iter().copied().filter(|c| c.reported.is_none()).collect();

    let mut country_ef = None;
    let mut uniform_fallback = false;
    let mut unplaced = 0.0;
    let mut open_amounts = vec![0.0; open.len()];
    if pool > 0.0 && !open.is_empty() {
        let proxies: Vec<f64> = open.iter().map(|c| c.proxy).collect();
        let activity: f64 = proxies.iter().sum::<f64>() + unplaced_activity;
        match derive_country_ef(pool, activity)? {
            Some(ef) if proxies.iter().any(|p| *p > 0.0) => {
                country_ef = Some(ef);
                open_amounts = proxies.iter().map(|p| p * ef).collect();
                if unplaced_activity == 0.0 {
                    apportion::fold_residual(&mut open_amounts, pool);
                } else {
                    unplaced = (pool - open_amounts.iter().sum::<f64>()).max(0.0);
                }
            }
            Some(_) | None if unplaced_activity > 0.0 => {
                unplaced = pool;
            }
            _ => {
                uniform_fallback = true;
                open_amounts = apportion::even(pool, open.len());
            }
        }
    } else if pool > 0.0 {
        unplaced = pool;
    }

    let exhausted = reported_sum >= country_total && reported_sum > 0.0;
    let mut open_iter = open_amounts.into_iter();
    let shares = sorted
        .iter()
        .map(|c| match c.reported {
            Some(r) => AssetShare {
                asset_id: c.asset_id.clone(),
                amount: r,
                kind: ShareKind::Reported,
            },
            None => AssetShare {
                asset_id: c.asset_id.clone(),
                amount: open_iter.next().unwrap_or(0.0),
                kind: if exhausted { ShareKind::NeedsDefaults } else { ShareKind::Allocated },
            },
        })
        .collect();

    Ok(AssetAllocation {
        shares,
        effective_total,
        pool,
        country_ef,
        unplaced,
        uniform_fallback,
    })
}

/// Where an imputed factor came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorSource {
    Own,
    Country,
    Global,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletedFactors {
    pub capacity: f64,
    pub capacity_factor: f64,
    pub emission_factor: f64,
    pub capacity_source: FactorSource,
    pub capacity_factor_source: FactorSource,
    pub emission_factor_source: FactorSource,
}

impl CompletedFactors {
    /// The coarsest source among the three factors.
    pub fn coarsest_source(&self) -> FactorSource {
        self.capacity_source
            .max(self.capacity_factor_source)
            .max(self.emission_factor_source)
    }

    pub fn monthly_emissions(&self) -> f64 {
        self.capacity * self.capacity_factor * self.emission_factor
    }
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Fills the asset's missing capacity, capacity factor and emission factor for
/// `gas`: median EF and median CF and mean capacity over `country_pool`, each
/// falling back to `global_pool` when the country has no values.
///
/// Pools are other assets of the same subsector; the asset itself is skipped.
pub fn impute_asset_defaults(
    asset: &Asset,
    gas: Gas,
    country_pool: &[&Asset],
    global_pool: &[&Asset],
) -> Result<CompletedFactors> {
    fn pick(
        own: Option<f64>,
        extract: impl Fn(&Asset) -> Option<f64>,
        reduce: fn(&mut [f64]) -> Option<f64>,
        id: &str,
        country: &[&Asset],
        global: &[&Asset],
    ) -> Option<(f64, FactorSource)> {
        if let Some(v) = own {
            return Some((v, FactorSource::Own));
        }
        let collect = |pool: &[&Asset]| {
            let mut vals: Vec<f64> = pool.iter().filter(|a| a.id != id).filter_map(|a| extract(a)).collect();
            reduce(&mut vals)
        };
        collect(country)
            .map(|v| (v, FactorSource::Country))
            .or_else(|| collect(global).map(|v| (v, FactorSource::Global)))
    }
    fn mean_mut(v: &mut [f64]) -> Option<f64> {
        mean(v)
    }

    let id = asset.id.as_str();
    let ef = pick(
        asset.emission_factors.get(&gas).copied(),
        |a| a.emission_factors.get(&gas).copied(),
        median,
        id,
        country_pool,
        global_pool,
    );
    let cf = pick(asset.capacity_factor, |a| a.capacity_factor, median, id, country_pool, global_pool);
    let cap = pick(asset.capacity, |a| a.capacity, mean_mut, id, country_pool, global_pool);
    match (cap, cf, ef) {
        (Some((capacity, cs)), Some((capacity_factor, cfs)), Some((emission_factor, efs))) => Ok(CompletedFactors {
            capacity,
            capacity_factor,
            emission_factor,
            capacity_source: cs,
            capacity_factor_source: cfs,
            emission_factor_source: efs,
        }),
        _ => Err(Error::Inconsistent(format!(
            "asset {id} unestimable for {gas}: no country or global values to impute from"
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemainderRule {
    AssetsExceedTotal,
    RemainderDistributed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemainderSplit {
    pub effective_total: f64,
    pub remainder: f64,
    pub rule: RemainderRule,
}

/// Treats the country total as a lower bound: assets that exceed it replace it,
/// otherwise the gap is the remainder.
pub fn compute_remainder(country_total: f64, asset_sum: f64) -> RemainderSplit {
    if asset_sum > country_total {
        RemainderSplit {
            effective_total: asset_sum,
            remainder: 0.0,
            rule: RemainderRule::AssetsExceedTotal,
        }
    } else {
        RemainderSplit {
            effective_total: country_total,
            remainder: country_total - asset_sum,
            rule: RemainderRule::RemainderDistributed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RemainderPlacement {
    /// Per-unit amounts, sorted by unit id.
    Units(Vec<(String, f64)>),
    /// No proxy weight in the country; the amount stays at country level.
    Parked(f64),
}

/// Spreads a remainder over spatial units by proxy weight.
pub fn allocate_remainder(remainder: f64, weights: &[(String, f64)]) -> Result<RemainderPlacement> {
    if !(remainder.is_finite() && remainder >= 0.0) {
        return Err(Error::Domain(format!("remainder {remainder} must be >= 0")));
    }
    if weights.iter().any(|(_, w)| !(*w >= 0.0)) {
        return Err(Error::Domain("proxy weights must be >= 0".into()));
    }
    let mut sorted: Vec<&(String, f64)> = weights.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let w: Vec<f64> = sorted.iter().map(|(_, w)| *w).collect();
    match apportion::proportional(remainder, &w) {
        Some(parts) => Ok(RemainderPlacement::Units(
            sorted.iter().map(|(id, _)| id.clone()).zip(parts).collect(),
        )),
        None if remainder == 0.0 => Ok(RemainderPlacement::Units(
            sorted.iter().map(|(id, _)| (id.clone(), 0.0)).collect(),
        )),
        None => Ok(RemainderPlacement::Parked(remainder)),
    }
}

/// `max(0, broad - sum(covered))`; the second value is the shortfall when the
/// covered categories exceed the broad total.
pub fn implicit_subtract(broad_total: f64, covered: &[f64]) -> Result<(f64, Option<f64>)> {
    if !(broad_total >= 0.0) || covered.iter().any(|c| !(*c >= 0.0)) {
        return Err(Error::Domain("implicit subtraction inputs must be >= 0".into()));
    }
    let diff = broad_total - covered.iter().sum::<f64>();
    if diff < 0.0 {
        Ok((0.0, Some(-diff)))
    } else {
        Ok((diff, None))
    }
}
