//! Activity = capacity x capacity factor; emissions = activity x emission factor.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gas::{Gas, GwpTable, Horizon};

/// Realized activity in some capacity unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Activity {
    pub value: f64,
    pub unit: String,
}

/// Tonnes of one gas per unit of activity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionFactor {
    pub tonnes_per_unit: f64,
    pub unit: String,
}

impl EmissionFactor {
    pub fn new(tonnes_per_unit: f64, unit: impl Into<String>) -> Self {
        EmissionFactor {
            tonnes_per_unit,
            unit: unit.into(),
        }
    }
}

/// Upper bound enforced on capacity factors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CfBound {
    /// CF in [0, 1].
    #[default]
    Strict,
    /// CF in [0, 1.5], for reported data that exceeds nameplate.
    Relaxed,
}

impl CfBound {
    pub fn max(self) -> f64 {
        match self {
            CfBound::Strict => 1.0,
            CfBound::Relaxed => 1.5,
        }
    }

    pub fn check(self, cf: f64) -> Result<()> {
        if cf.is_finite() && (0.0..=self.max()).contains(&cf) {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "capacity factor {cf} outside [0, {}]",
                self.max()
            )))
        }
    }
}

fn nonnegative(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be >= 0, got {v}")))
    }
}

pub fn compute_activity(capacity: f64, capacity_factor: f64, unit: &str) -> Result<Activity> {
    nonnegative("capacity", capacity)?;
    nonnegative("capacity factor", capacity_factor)?;
    Ok(Activity {
        value: capacity * capacity_factor,
        unit: unit.to_string(),
    })
}

pub fn compute_emissions(activity: &Activity, ef: &EmissionFactor) -> Result<f64> {
    nonnegative("activity", activity.value)?;
    nonnegative("emission factor", ef.tonnes_per_unit)?;
    if activity.unit != ef.unit {
        return Err(Error::Unit {
            activity: activity.unit.clone(),
            factor: ef.unit.clone(),
        });
    }
    Ok(activity.value * ef.tonnes_per_unit)
}

/// Two known factors of `E = C * CF * EF`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KnownFactors {
    /// Solve for the emission factor.
    CapacityAndFactor { capacity: f64, capacity_factor: f64 },
    /// Solve for the capacity factor.
    CapacityAndEf { capacity: f64, emission_factor: f64 },
    /// Solve for capacity.
    FactorAndEf {
        capacity_factor: f64,
        emission_factor: f64,
    },
}

/// Returns the factor missing from `known` such that the product reproduces `total`.
pub fn decompose_emissions(total: f64, known: KnownFactors) -> Result<f64> {
    nonnegative("emissions", total)?;
    let (a, b) = match known {
        KnownFactors::CapacityAndFactor {
            capacity,
            capacity_factor,
        } => (capacity, capacity_factor),
        KnownFactors::CapacityAndEf {
            capacity,
            emission_factor,
        } => (capacity, emission_factor),
        KnownFactors::FactorAndEf {
            capacity_factor,
            emission_factor,
        } => (capacity_factor, emission_factor),
    };
    nonnegative("known factor", a)?;
    nonnegative("known factor", b)?;
    if a == 0.0 || b == 0.0 {
        return if total > 0.0 {
            Err(Error::Inconsistent(format!(
                "emissions {total} > 0 but a known factor is zero"
            )))
        } else {
            // E = 0 is satisfied by any value of the missing factor.
            Ok(0.0)
        };
    }
    Ok(total / a / b)
}

/// CO2-equivalent mass of the greenhouse gases in `amounts`. Pollutants and
/// already-derived CO2e entries are skipped.
pub fn to_co2e(amounts: &BTreeMap<Gas, f64>, gwp: &GwpTable, horizon: Horizon) -> Result<f64> {
    let mut total = 0.0;
    for (&gas, &amount) in amounts {
        if !gas.is_greenhouse() {
            continue;
        }
        let factor = gwp.factor(gas, horizon).ok_or_else(|| {
            Error::Config(format!(
                "no GWP for {gas} at the {}-year horizon",
                horizon.years()
            ))
        })?;
        total += amount * factor;
    }
    Ok(total)
}
