//! Non-GHG pollutants, either from pollutant emission factors (direct path) or
//! by scaling CO2e with country-level co-pollutant ratios.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::equations::{compute_activity, compute_emissions, EmissionFactor};
use crate::error::{Error, Result};
use crate::gas::{Gas, GwpTable, Horizon};
use crate::model::{EmissionRecord, PollutantPath, Provenance, Subsector};
use crate::quality::{assign_confidence, ActivitySource, ConfidenceRubric, EfGranularity, Evidence};

/// One row of a reference inventory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub subsector: String,
    pub country: String,
    pub fuel: Option<String>,
    pub gas: Gas,
    pub tonnes: f64,
}

type SourceKey = (String, String, Option<String>);

/// Pollutant and greenhouse-gas reference rows keyed by (subsector, country, fuel).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReferenceInventory {
    pub pollutants: Vec<ReferenceRow>,
    pub ghg: Vec<ReferenceRow>,
}

impl ReferenceInventory {
    /// Keeps every (subsector, gas, country, fuel) present in `self` and adds the
    /// keys only `other` has.
    pub fn merged_with(&self, other: &ReferenceInventory) -> ReferenceInventory {
        fn merge(first: &[ReferenceRow], second: &[ReferenceRow]) -> Vec<ReferenceRow> {
            let key = |r: &ReferenceRow| (r.subsector.clone(), r.gas, r.country.clone(), r.fuel.clone());
            let seen: BTreeSet<_> = first.iter().map(key).collect();
            first
                .iter()
                .cloned()
                .chain(second.iter().filter(|r| !seen.contains(&key(r))).cloned())
                .collect()
        }
        ReferenceInventory {
            pollutants: merge(&self.pollutants, &other.pollutants),
            ghg: merge(&self.ghg, &other.ghg),
        }
    }
}

/// `Em / CO2e`. `None` when CO2e is zero; a positive pollutant mass over zero
/// CO2e is logged.
pub fn compute_ratio(pollutant_mass: f64, co2e_mass: f64) -> Result<Option<f64>> {
    if !(pollutant_mass >= 0.0 && co2e_mass >= 0.0) {
        return Err(Error::Domain(format!(
            "masses must be >= 0 (pollutant {pollutant_mass}, CO2e {co2e_mass})"
        )));
    }
    if co2e_mass == 0.0 {
        if pollutant_mass > 0.0 {
            log::warn!("ratio undefined: {pollutant_mass} t pollutant over zero CO2e");
        }
        return Ok(None);
    }
    Ok(Some(pollutant_mass / co2e_mass))
}

/// Specificity of the ratio that was applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioLevel {
    /// Exact (subsector, gas, country, fuel) match.
    Exact,
    /// Country ratio pooled over fuels, CO2e-weighted.
    Country,
    Region,
    Global,
}

impl RatioLevel {
    pub fn ef_granularity(self) -> EfGranularity {
        match self {
            RatioLevel::Exact | RatioLevel::Country => EfGranularity::Country,
            RatioLevel::Region => EfGranularity::Regional,
            RatioLevel::Global => EfGranularity::Global,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Pooled {
    pollutant: f64,
    co2e: f64,
}

/// Co-pollutant ratios with their fallback levels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RatioTable {
    exact: BTreeMap<(String, Gas, String, Option<String>), f64>,
    country: BTreeMap<(String, Gas, String), f64>,
    region: BTreeMap<(String, Gas, String), f64>,
    global: BTreeMap<(String, Gas), f64>,
    regions: BTreeMap<String, String>,
    pub diagnostics: Vec<String>,
}

impl RatioTable {
    pub fn lookup(&self, subsector: &str, gas: Gas, country: &str, fuel: Option<&str>) -> Option<(f64, RatioLevel)> {
        let s = subsector.to_string();
        let c = country.to_string();
        if let Some(r) = self.exact.get(&(s.clone(), gas, c.clone(), fuel.map(str::to_string))) {
            return Some((*r, RatioLevel::Exact));
        }
        if let Some(r) = self.country.get(&(s.clone(), gas, c.clone())) {
            return Some((*r, RatioLevel::Country));
        }
        if let Some(region) = self.regions.get(&c) {
            if let Some(r) = self.region.get(&(s.clone(), gas, region.clone())) {
                return Some((*r, RatioLevel::Region));
            }
        }
        self.global.get(&(s, gas)).map(|r| (*r, RatioLevel::Global))
    }

    /// Every (subsector, pollutant) the table can serve.
    pub fn pollutants_for(&self, subsector: &str) -> Vec<Gas> {
        self.global
            .keys()
            .filter(|(s, _)| s == subsector)
            .map(|(_, g)| *g)
            .collect()
    }

    pub fn exact_entries(&self) -> impl Iterator<Item = (&(String, Gas, String, Option<String>), &f64)> {
        self.exact.iter()
    }
}

/// Builds ratios from a reference inventory. The GHG side is converted to CO2e
/// at `horizon`; rows whose CO2e is zero are excluded. Ratios pooled over fuels,
/// regions (`regions` maps country to region) and the globe serve as fallbacks.
pub fn build_ratio_table(
    reference: &ReferenceInventory,
    gwp: &GwpTable,
    horizon: Horizon,
    regions: &BTreeMap<String, String>,
) -> Result<RatioTable> {
    let mut ghg: BTreeMap<SourceKey, BTreeMap<Gas, f64>> = BTreeMap::new();
    for row in &reference.ghg {
        if !row.gas.is_greenhouse() {
            return Err(Error::Config(format!(
                "reference GHG table holds non-greenhouse gas {}",
                row.gas
            )));
        }
        *ghg.entry((row.subsector.clone(), row.country.clone(), row.fuel.clone()))
            .or_default()
            .entry(row.gas)
            .or_default() += row.tonnes;
    }
    let co2e: BTreeMap<SourceKey, f64> = ghg
        .iter()
        .map(|(k, amounts)| Ok((k.clone(), crate::equations::to_co2e(amounts, gwp, horizon)?)))
        .collect::<Result<_>>()?;

    let mut em: BTreeMap<(String, Gas, String, Option<String>), f64> = BTreeMap::new();
    for row in &reference.pollutants {
        if !row.gas.is_pollutant() {
            return Err(Error::Config(format!(
                "reference pollutant table holds {}, which is not a non-GHG pollutant",
                row.gas
            )));
        }
        *em.entry((row.subsector.clone(), row.gas, row.country.clone(), row.fuel.clone()))
            .or_default() += row.tonnes;
    }

    let mut table = RatioTable {
        regions: regions.clone(),
        ..RatioTable::default()
    };
    let mut by_country: BTreeMap<(String, Gas, String), Pooled> = BTreeMap::new();
    let mut by_region: BTreeMap<(String, Gas, String), Pooled> = BTreeMap::new();
    let mut by_globe: BTreeMap<(String, Gas), Pooled> = BTreeMap::new();
    for ((s, g, c, f), mass) in &em {
        let denominator = co2e.get(&(s.clone(), c.clone(), f.clone())).copied().unwrap_or(0.0);
        match compute_ratio(*mass, denominator)? {
            Some(r) => {
                table.exact.insert((s.clone(), *g, c.clone(), f.clone()), r);
            }
            None => {
                table.diagnostics.push(format!(
                    "no CO2e for ({s}, {g}, {c}, {}): row excluded",
                    f.as_deref().unwrap_or("-")
                ));
                continue;
            }
        }
        let add = |p: &mut Pooled| {
            p.pollutant += mass;
            p.co2e += denominator;
        };
        add(by_country.entry((s.clone(), *g, c.clone())).or_default());
        if let Some(region) = regions.get(c) {
            add(by_region.entry((s.clone(), *g, region.clone())).or_default());
        }
        add(by_globe.entry((s.clone(), *g)).or_default());
    }
    for (k, p) in by_country {
        if let Some(r) = compute_ratio(p.pollutant, p.co2e)? {
            table.country.insert(k, r);
        }
    }
    for (k, p) in by_region {
        if let Some(r) = compute_ratio(p.pollutant, p.co2e)? {
            table.region.insert(k, r);
        }
    }
    for (k, p) in by_globe {
        if let Some(r) = compute_ratio(p.pollutant, p.co2e)? {
            table.global.insert(k, r);
        }
    }
    Ok(table)
}

/// Pollutant records from CO2e records: `CO2e x r` for each pollutant the table
/// covers for the record's subsector. Confidence is capped by the ratio's
/// specificity (country level at best).
pub fn scale_pollutants(
    co2e_records: &[EmissionRecord],
    table: &RatioTable,
    rubric: &ConfidenceRubric,
) -> Result<(Vec<EmissionRecord>, Vec<String>)> {
    let mut out = Vec::new();
    let mut diagnostics = Vec::new();
    for rec in co2e_records {
        if !rec.gas.is_co2e() {
            return Err(Error::Usage(format!(
                "co-pollutant scaling needs CO2e records, got {}",
                rec.gas
            )));
        }
        for gas in table.pollutants_for(&rec.subsector) {
            let Some((ratio, level)) = table.lookup(&rec.subsector, gas, &rec.country, rec.fuel.as_deref()) else {
                diagnostics.push(format!(
                    "no {gas} ratio for {} in {}: omitted",
                    rec.subsector, rec.country
                ));
                continue;
            };
            let cap = assign_confidence(
                Evidence {
                    ef: level.ef_granularity(),
                    activity: ActivitySource::SatelliteModeled,
                },
                rubric,
            );
            let scaled = EmissionRecord::new(
                rec.source_kind,
                rec.source_id.clone(),
                rec.country.clone(),
                rec.subsector.clone(),
                gas,
                rec.period,
                rec.amount() * ratio,
                Provenance::Modeled,
            )?
            .with_confidence(rec.confidence.min(cap))
            .with_uncertainty(rec.uncertainty_pct)
            .with_fuel(rec.fuel.clone());
            let scaled = match rec.fill {
                Some(f) => scaled.with_fill(f),
                None => scaled,
            };
            out.push(scaled);
        }
    }
    Ok((out, diagnostics))
}

/// Pollutant mass from activity and a pollutant emission factor, for subsectors
/// routed to the direct path.
pub fn direct_pollutants(
    subsector: &Subsector,
    gas: Gas,
    capacity: f64,
    capacity_factor: f64,
    ef: &EmissionFactor,
) -> Result<f64> {
    match subsector.pollutant_path(gas) {
        Some(PollutantPath::Direct) => {}
        Some(PollutantPath::Copollutant) => {
            return Err(Error::Usage(format!(
                "{} estimates {gas} with co-pollutant ratios, not the direct path",
                subsector.id
            )))
        }
        None => return Err(Error::Domain(format!("{gas} is not a non-GHG pollutant"))),
    }
    let activity = compute_activity(capacity, capacity_factor, &ef.unit)?;
    compute_emissions(&activity, ef)
}
