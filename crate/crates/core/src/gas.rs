//! Gas codes and global-warming-potential tables.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The closed set of species the engine tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Gas {
    Co2,
    Ch4,
    N2o,
    Co2e100,
    Co2e20,
    Co,
    Oc,
    Bc,
    Voc,
    Pm25,
    Nox,
    Nh3,
    So2,
}

impl Gas {
    pub const ALL: [Gas; 13] = [
        Gas::Co2,
        Gas::Ch4,
        Gas::N2o,
        Gas::Co2e100,
        Gas::Co2e20,
        Gas::Co,
        Gas::Oc,
        Gas::Bc,
        Gas::Voc,
        Gas::Pm25,
        Gas::Nox,
        Gas::Nh3,
        Gas::So2,
    ];

    pub const GREENHOUSE: [Gas; 3] = [Gas::Co2, Gas::Ch4, Gas::N2o];

    pub const POLLUTANTS: [Gas; 8] = [
        Gas::Co,
        Gas::Oc,
        Gas::Bc,
        Gas::Voc,
        Gas::Pm25,
        Gas::Nox,
        Gas::Nh3,
        Gas::So2,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Gas::Co2 => "CO2",
            Gas::Ch4 => "CH4",
            Gas::N2o => "N2O",
            Gas::Co2e100 => "CO2e100",
            Gas::Co2e20 => "CO2e20",
            Gas::Co => "CO",
            Gas::Oc => "OC",
            Gas::Bc => "BC",
            Gas::Voc => "VOC",
            Gas::Pm25 => "PM2.5",
            Gas::Nox => "NOx",
            Gas::Nh3 => "NH3",
            Gas::So2 => "SO2",
        }
    }

    pub fn is_greenhouse(self) -> bool {
        matches!(self, Gas::Co2 | Gas::Ch4 | Gas::N2o)
    }

    pub fn is_co2e(self) -> bool {
        matches!(self, Gas::Co2e100 | Gas::Co2e20)
    }

    pub fn is_pollutant(self) -> bool {
        !self.is_greenhouse() && !self.is_co2e()
    }
}

impl fmt::Display for Gas {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Gas {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let trimmed = s.trim();
        Gas::ALL
            .iter()
            .copied()
            .find(|g| g.code().eq_ignore_ascii_case(trimmed))
            .or(match trimmed.to_ascii_uppercase().as_str() {
                "PM25" | "PM2_5" => Some(Gas::Pm25),
                _ => None,
            })
            .ok_or_else(|| Error::Domain(format!("unknown gas code `{trimmed}`")))
    }
}

impl TryFrom<String> for Gas {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        value.parse()
    }
}

impl From<Gas> for String {
    fn from(g: Gas) -> String {
        g.code().to_string()
    }
}

/// GWP time horizon in years.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Horizon {
    Years100,
    Years20,
}

impl Horizon {
    pub fn years(self) -> u32 {
        match self {
            Horizon::Years100 => 100,
            Horizon::Years20 => 20,
        }
    }

    /// The derived CO2e gas code for this horizon.
    pub fn co2e_gas(self) -> Gas {
        match self {
            Horizon::Years100 => Gas::Co2e100,
            Horizon::Years20 => Gas::Co2e20,
        }
    }
}

impl TryFrom<u32> for Horizon {
    type Error = Error;

    fn try_from(years: u32) -> Result<Self> {
        match years {
            100 => Ok(Horizon::Years100),
            20 => Ok(Horizon::Years20),
            other => Err(Error::Config(format!(
                "unsupported GWP horizon {other}; expected 100 or 20"
            ))),
        }
    }
}

impl From<Horizon> for u32 {
    fn from(h: Horizon) -> u32 {
        h.years()
    }
}

impl FromStr for Horizon {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let years: u32 = s
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("invalid horizon `{s}`")))?;
        Horizon::try_from(years)
    }
}

/// Dimensionless GWP factors keyed by (gas, horizon).
#[derive(Debug, Clone, PartialEq)]
pub struct GwpTable {
    entries: BTreeMap<(Gas, Horizon), f64>,
}

impl GwpTable {
    /// Builds a table, rejecting non-positive factors, non-greenhouse gases and
    /// any CO2 factor other than 1.
    pub fn new(entries: impl IntoIterator<Item = ((Gas, Horizon), f64)>) -> Result<Self> {
        let mut table = BTreeMap::new();
        for ((gas, horizon), factor) in entries {
            if !gas.is_greenhouse() {
                return Err(Error::Config(format!(
                    "GWP given for {gas}, which is not a greenhouse gas"
                )));
            }
            if !(factor.is_finite() && factor > 0.0) {
                return Err(Error::Config(format!(
                    "GWP for {gas} at {} yr must be positive, got {factor}",
                    horizon.years()
                )));
            }
            if gas == Gas::Co2 && factor != 1.0 {
                return Err(Error::Config(format!(
                    "GWP of CO2 is 1 by definition, got {factor}"
                )));
            }
            table.insert((gas, horizon), factor);
        }
        for horizon in [Horizon::Years100, Horizon::Years20] {
            table.entry((Gas::Co2, horizon)).or_insert(1.0);
        }
        Ok(GwpTable { entries: table })
    }

    pub fn factor(&self, gas: Gas, horizon: Horizon) -> Option<f64> {
        self.entries.get(&(gas, horizon)).copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = ((Gas, Horizon), f64)> + '_ {
        self.entries.iter().map(|(k, v)| (*k, *v))
    }
}

impl Default for GwpTable {
    /// IPCC AR5 values without climate-carbon feedback (WG1 Table 8.7):
    /// CH4 28 / 84 and N2O 265 / 264 at 100 / 20 years.
    fn default() -> Self {
        GwpTable::new([
            ((Gas::Ch4, Horizon::Years100), 28.0),
            ((Gas::Ch4, Horizon::Years20), 84.0),
            ((Gas::N2o, Horizon::Years100), 265.0),
            ((Gas::N2o, Horizon::Years20), 264.0),
        ])
        .expect("default GWP table is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_round_trip() {
        for gas in Gas::ALL {
            assert_eq!(gas.code().parse::<Gas>().unwrap(), gas);
        }
        assert_eq!("pm25".parse::<Gas>().unwrap(), Gas::Pm25);
        assert!("XYZ".parse::<Gas>().is_err());
    }

    #[test]
    fn classes_partition_the_code_set() {
        for gas in Gas::ALL {
            let n = [gas.is_greenhouse(), gas.is_co2e(), gas.is_pollutant()]
                .iter()
                .filter(|b| **b)
                .count();
            assert_eq!(n, 1, "{gas}");
        }
    }

    #[test]
    fn co2_is_always_one() {
        let t = GwpTable::default();
        assert_eq!(t.factor(Gas::Co2, Horizon::Years100), Some(1.0));
        assert_eq!(t.factor(Gas::Co2, Horizon::Years20), Some(1.0));
        assert!(GwpTable::new([((Gas::Co2, Horizon::Years20), 2.0)]).is_err());
    }

    #[test]
    fn rejects_bad_factors() {
        assert!(GwpTable::new([((Gas::Ch4, Horizon::Years100), 0.0)]).is_err());
        assert!(GwpTable::new([((Gas::So2, Horizon::Years100), 1.0)]).is_err());
    }

    #[test]
    fn horizon_parsing() {
        assert_eq!("20".parse::<Horizon>().unwrap(), Horizon::Years20);
        assert!("50".parse::<Horizon>().is_err());
    }
}
