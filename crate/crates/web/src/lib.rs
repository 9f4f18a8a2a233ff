//! Browser bindings: monthly split of an annual value, country remainder
//! placement and natural breaks. Every function takes and returns JSON text so
//! the page needs no generated types.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use emisynth::analysis::jenks_breaks;
use emisynth::disaggregation::{self, RemainderPlacement, RemainderRule};
use emisynth::temporal::{annual_to_monthly, TemporalProfile};

#[derive(Debug, Serialize)]
pub struct MonthlySplit {
    pub months: Vec<f64>,
    pub total: f64,
}

/// Splits `annual` over twelve months. `weights` is a JSON array of twelve
/// numbers summing to one, or empty for a flat profile.
pub fn split_annual_json(annual: f64, weights: &str) -> Result<String, String> {
    let profile = if weights.trim().is_empty() {
        TemporalProfile::uniform()
    } else {
        let w: Vec<f64> = serde_json::from_str(weights).map_err(|e| e.to_string())?;
        let w: [f64; 12] = w.try_into().map_err(|v: Vec<f64>| format!("need 12 weights, got {}", v.len()))?;
        TemporalProfile::new("page", w).map_err(|e| e.to_string())?
    };
    if !(annual.is_finite() && annual >= 0.0) {
        return Err(format!("annual value {annual} must be >= 0"));
    }
    let months = annual_to_monthly(annual, &profile).to_vec();
    let total = months.iter().sum();
    serde_json::to_string(&MonthlySplit { months, total }).map_err(|e| e.to_string())
}

#[derive(Debug, Deserialize)]
pub struct UnitWeight {
    pub unit: String,
    pub weight: f64,
}

#[derive(Debug, Serialize)]
pub struct RemainderView {
    pub effective_total: f64,
    pub remainder: f64,
    pub rule: RemainderRule,
    /// Per-unit amounts; empty when parked.
    pub units: Vec<(String, f64)>,
    /// Amount kept at country level for lack of proxy weight.
    pub parked: f64,
}

/// Remainder between a country total and the sum of its assets, placed over
/// proxy units given as `[{"unit": .., "weight": ..}]`.
pub fn allocate_remainder_json(country_total: f64, asset_sum: f64, weights: &str) -> Result<String, String> {
    if !(country_total >= 0.0 && asset_sum >= 0.0) {
        return Err("totals must be >= 0".into());
    }
    let w: Vec<UnitWeight> = if weights.trim().is_empty() {
        Vec::new()
    } else {
        serde_json::from_str(weights).map_err(|e| e.to_string())?
    };
    let pairs: Vec<(String, f64)> = w.into_iter().map(|u| (u.unit, u.weight)).collect();
    let split = disaggregation::compute_remainder(country_total, asset_sum);
    let (units, parked) = match disaggregation::allocate_remainder(split.remainder, &pairs).map_err(|e| e.to_string())? {
        RemainderPlacement::Units(u) => (u, 0.0),
        RemainderPlacement::Parked(x) => (Vec::new(), x),
    };
    serde_json::to_string(&RemainderView {
        effective_total: split.effective_total,
        remainder: split.remainder,
        rule: split.rule,
        units,
        parked,
    })
    .map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
pub struct BreaksView {
    pub breaks: Vec<f64>,
    pub classes: Vec<Vec<f64>>,
    pub ssd: f64,
    pub degenerate: bool,
}

/// Optimal `k`-class natural breaks of a JSON array of numbers.
pub fn natural_breaks_json(values: &str, k: usize) -> Result<String, String> {
    let v: Vec<f64> = serde_json::from_str(values).map_err(|e| e.to_string())?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err("values must be finite".into());
    }
    let b = jenks_breaks(&v, k).map_err(|e| e.to_string())?;
    let classes = b.classes.iter().map(|(s, e)| b.sorted[*s..*e].to_vec()).collect();
    serde_json::to_string(&BreaksView {
        breaks: b.breaks,
        classes,
        ssd: b.ssd,
        degenerate: b.degenerate,
    })
    .map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn split_annual(annual: f64, weights: &str) -> Result<String, JsError> {
    split_annual_json(annual, weights).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn allocate_remainder(country_total: f64, asset_sum: f64, weights: &str) -> Result<String, JsError> {
    allocate_remainder_json(country_total, asset_sum, weights).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn natural_breaks(values: &str, k: usize) -> Result<String, JsError> {
    natural_breaks_json(values, k).map_err(|e| JsError::new(&e))
}
