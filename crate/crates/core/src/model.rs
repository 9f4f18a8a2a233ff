//! Domain vocabulary shared by every stage.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gas::Gas;

/// Declares a fieldless enum whose textual form is a fixed snake_case code.
macro_rules! code_enum {
    ($(#[$meta:meta])* $vis:vis enum $name:ident { $($(#[$vmeta:meta])* $variant:ident => $code:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, ::serde::Serialize, ::serde::Deserialize)]
        #[serde(try_from = "String", into = "String")]
        $vis enum $name { $($(#[$vmeta])* $variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn code(self) -> &'static str {
                match self { $($name::$variant => $code),+ }
            }
        }

        impl ::std::fmt::Display for $name {
            fn fmt(&self, f: &mut ::std::fmt::Formatter<'_>) -> ::std::fmt::Result {
                f.write_str(self.code())
            }
        }

        impl ::std::str::FromStr for $name {
            type Err = $crate::error::Error;
            fn from_str(s: &str) -> ::std::result::Result<Self, $crate::error::Error> {
                let s = s.trim();
                $name::ALL
                    .iter()
                    .copied()
                    .find(|v| v.code().eq_ignore_ascii_case(s))
                    .ok_or_else(|| $crate::error::Error::Domain(format!(
                        concat!("unknown ", stringify!($name), " `{}`"), s
                    )))
            }
        }

        impl TryFrom<String> for $name {
            type Error = $crate::error::Error;
            fn try_from(s: String) -> ::std::result::Result<Self, $crate::error::Error> { s.parse() }
        }

        impl From<$name> for String {
            fn from(v: $name) -> String { v.code().to_string() }
        }
    };
}
pub(crate) use code_enum;

code_enum! {
    /// Ordered qualitative confidence.
    pub enum ConfidenceLevel {
        VeryLow => "very_low",
        Low => "low",
        Medium => "medium",
        High => "high",
        VeryHigh => "very_high",
    }
}

code_enum! {
    pub enum Provenance {
        Reported => "reported",
        Modeled => "modeled",
        Disaggregated => "disaggregated",
        Remainder => "remainder",
        Imputed => "imputed",
    }
}

code_enum! {
    /// How a month of a series got its value.
    pub enum FillFlag {
        Observed => "observed",
        ZeroFilled => "zero_filled",
        EqConstrained => "eq_constrained",
        Backfilled => "backfilled",
        Forwardfilled => "forwardfilled",
        CountryAvg => "country_avg",
        GlobalAvg => "global_avg",
        ProfileSplit => "profile_split",
        SpanApportioned => "span_apportioned",
        MonthExtrapolated => "month_extrapolated",
    }
}

code_enum! {
    pub enum Granularity {
        Monthly => "monthly",
        Quarterly => "quarterly",
        Annual => "annual",
        Span => "span",
    }
}

code_enum! {
    /// Non-GHG estimation route for a subsector.
    pub enum PollutantPath {
        Direct => "direct",
        Copollutant => "copollutant",
    }
}

code_enum! {
    /// How a subsector's country totals reach assets.
    pub enum EstimationMethod {
        /// Per-asset capacity x capacity factor x emission factor, reported data preferred.
        AssetModel => "asset_model",
        /// Country totals allocated to assets by an activity proxy.
        Disaggregate => "disaggregate",
    }
}

code_enum! {
    /// Whether a quantity is split across time (extensive) or carried unchanged (intensive).
    pub enum QuantityKind {
        Extensive => "extensive",
        Intensive => "intensive",
    }
}

/// Subsectors whose non-GHG emissions come straight from capacity, capacity factor and
/// pollutant emission factors rather than from co-pollutant ratios.
pub const DIRECT_POLLUTANT_SUBSECTORS: [&str; 9] = [
    "electricity-generation",
    "oil-and-gas-refining",
    "road-transportation",
    "domestic-shipping",
    "international-shipping",
    "residential-onsite-fuel-usage",
    "non-residential-onsite-fuel-usage",
    "petrochemicals-steam-cracking",
    "cropland-fires",
];

/// A calendar month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::Domain(format!("month {month} outside 1..=12")));
        }
        Ok(YearMonth { year, month })
    }

    pub fn of(date: NaiveDate) -> Self {
        YearMonth {
            year: date.year(),
            month: date.month(),
        }
    }

    pub fn first_day(self) -> NaiveDate {
        NaiveDate::from_ymd_opt(self.year, self.month, 1).expect("valid year-month")
    }

    pub fn succ(self) -> Self {
        if self.month == 12 {
            YearMonth {
                year: self.year + 1,
                month: 1,
            }
        } else {
            YearMonth {
                year: self.year,
                month: self.month + 1,
            }
        }
    }

    pub fn pred(self) -> Self {
        if self.month == 1 {
            YearMonth {
                year: self.year - 1,
                month: 12,
            }
        } else {
            YearMonth {
                year: self.year,
                month: self.month - 1,
            }
        }
    }

    pub fn days(self) -> i64 {
        (self.succ().first_day() - self.first_day()).num_days()
    }

    /// Months between `self` and `later`, inclusive of both ends; 0 if `later < self`.
    pub fn span_to(self, later: YearMonth) -> usize {
        let a = self.year as i64 * 12 + self.month as i64;
        let b = later.year as i64 * 12 + later.month as i64;
        (b - a + 1).max(0) as usize
    }

    pub fn period(self) -> Period {
        Period {
            start: self.first_day(),
            end: self.succ().first_day(),
            granularity: Granularity::Monthly,
        }
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (y, m) = s
            .split_once('-')
            .ok_or_else(|| Error::Domain(format!("expected YYYY-MM, got `{s}`")))?;
        let year = y
            .parse()
            .map_err(|_| Error::Domain(format!("bad year in `{s}`")))?;
        let month = m
            .parse()
            .map_err(|_| Error::Domain(format!("bad month in `{s}`")))?;
        YearMonth::new(year, month)
    }
}

impl Serialize for YearMonth {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for YearMonth {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A half-open date interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Period {
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub granularity: Granularity,
}

impl Period {
    pub fn new(start: NaiveDate, end: NaiveDate, granularity: Granularity) -> Result<Self> {
        if start >= end {
            return Err(Error::Domain(format!(
                "period start {start} is not before end {end}"
            )));
        }
        Ok(Period {
            start,
            end,
            granularity,
        })
    }

    /// Infers granularity from the bounds: whole calendar months, quarters and
    /// years are recognised, anything else is a span.
    pub fn infer(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        let granularity = if start.day() == 1 && end.day() == 1 {
            let first = YearMonth::of(start);
            let months = first.span_to(YearMonth::of(end)) - 1;
            match months {
                1 => Granularity::Monthly,
                3 if (start.month() - 1) % 3 == 0 => Granularity::Quarterly,
                12 if start.month() == 1 => Granularity::Annual,
                _ => Granularity::Span,
            }
        } else {
            Granularity::Span
        };
        Period::new(start, end, granularity)
    }

    pub fn year(year: i32) -> Period {
        Period {
            start: NaiveDate::from_ymd_opt(year, 1, 1).expect("valid year"),
            end: NaiveDate::from_ymd_opt(year + 1, 1, 1).expect("valid year"),
            granularity: Granularity::Annual,
        }
    }

    pub fn days(&self) -> i64 {
        (self.end - self.start).num_days()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::Domain(format!(
                "coordinate ({lat}, {lon}) out of range"
            )));
        }
        Ok(LatLon { lat, lon })
    }
}

/// Country totals for `subsector` are derived as `broad - sum(covered)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImplicitRule {
    pub broad: String,
    pub covered: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subsector {
    pub id: String,
    pub ipcc_sector: String,
    pub method: EstimationMethod,
    pub profile_id: Option<String>,
    pollutant_paths: BTreeMap<Gas, PollutantPath>,
    /// Share of registered establishments that actually emit.
    pub emitting_ratio: Option<f64>,
    pub implicit: Option<ImplicitRule>,
    pub activity_uncertainty_pct: Option<f64>,
    pub ef_uncertainty_pct: Option<f64>,
}

impl Subsector {
    /// A subsector with default pollutant routing: the direct path for the nine
    /// combustion-dominated subsectors, co-pollutant ratios elsewhere.
    pub fn new(id: impl Into<String>, ipcc_sector: impl Into<String>) -> Self {
        let id = id.into();
        let path = if DIRECT_POLLUTANT_SUBSECTORS.contains(&id.as_str()) {
            PollutantPath::Direct
        } else {
            PollutantPath::Copollutant
        };
        Subsector {
            id,
            ipcc_sector: ipcc_sector.into(),
            method: EstimationMethod::AssetModel,
            profile_id: None,
            pollutant_paths: Gas::POLLUTANTS.iter().map(|g| (*g, path)).collect(),
            emitting_ratio: None,
            implicit: None,
            activity_uncertainty_pct: None,
            ef_uncertainty_pct: None,
        }
    }

    pub fn with_method(mut self, method: EstimationMethod) -> Self {
        self.method = method;
        self
    }

    pub fn with_pollutant_path(mut self, path: PollutantPath) -> Self {
        for p in self.pollutant_paths.values_mut() {
            *p = path;
        }
        self
    }

    pub fn set_pollutant_path(&mut self, gas: Gas, path: PollutantPath) -> Result<()> {
        if !gas.is_pollutant() {
            return Err(Error::Domain(format!("{gas} is not a non-GHG pollutant")));
        }
        self.pollutant_paths.insert(gas, path);
        Ok(())
    }

    pub fn pollutant_path(&self, gas: Gas) -> Option<PollutantPath> {
        self.pollutant_paths.get(&gas).copied()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetFlags {
    pub scraped: bool,
    pub emitting: bool,
    pub has_reported_emissions: bool,
}

/// One emitting facility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Asset {
    pub id: String,
    pub subsector: String,
    pub country: String,
    pub location: Option<LatLon>,
    /// Capacity per month, in `capacity_unit`.
    pub capacity: Option<f64>,
    pub capacity_unit: String,
    pub capacity_factor: Option<f64>,
    /// Tonnes per unit of activity; the activity unit is `capacity_unit`.
    pub emission_factors: BTreeMap<Gas, f64>,
    /// Economic output, the preferred allocation proxy.
    pub output: Option<f64>,
    pub fuel: Option<String>,
    pub operating_from: Option<NaiveDate>,
    pub operating_to: Option<NaiveDate>,
    pub quantity_kind: QuantityKind,
    pub flags: AssetFlags,
}

impl Asset {
    pub fn new(
        id: impl Into<String>,
        subsector: impl Into<String>,
        country: impl Into<String>,
    ) -> Self {
        Asset {
            id: id.into(),
            subsector: subsector.into(),
            country: country.into(),
            location: None,
            capacity: None,
            capacity_unit: "unit".into(),
            capacity_factor: None,
            emission_factors: BTreeMap::new(),
            output: None,
            fuel: None,
            operating_from: None,
            operating_to: None,
            quantity_kind: QuantityKind::Extensive,
            flags: AssetFlags {
                emitting: true,
                ..AssetFlags::default()
            },
        }
    }

    /// True when the asset is outside its operating dates for the whole month.
    pub fn inactive_in(&self, month: YearMonth) -> bool {
        let p = month.period();
        self.operating_from.is_some_and(|from| from >= p.end)
            || self.operating_to.is_some_and(|to| to <= p.start)
    }
}

code_enum! {
    pub enum SourceKind {
        Asset => "asset",
        /// A proxy cell or administrative unit.
        Spatial => "spatial",
        /// Emissions parked at country level because no proxy weight exists.
        Country => "country",
    }
}

/// A quantity of one gas from one source over one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionRecord {
    pub source_kind: SourceKind,
    pub source_id: String,
    pub country: String,
    pub subsector: String,
    pub gas: Gas,
    pub period: Period,
    amount: f64,
    provenance: Provenance,
    pub confidence: ConfidenceLevel,
    pub uncertainty_pct: Option<f64>,
    pub fill: Option<FillFlag>,
    pub fuel: Option<String>,
}

impl EmissionRecord {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        source_kind: SourceKind,
        source_id: impl Into<String>,
        country: impl Into<String>,
        subsector: impl Into<String>,
        gas: Gas,
        period: Period,
        amount: f64,
        provenance: Provenance,
    ) -> Result<Self> {
        check_amount(amount)?;
        Ok(EmissionRecord {
            source_kind,
            source_id: source_id.into(),
            country: country.into(),
            subsector: subsector.into(),
            gas,
            period,
            amount,
            provenance,
            confidence: ConfidenceLevel::Medium,
            uncertainty_pct: None,
            fill: None,
            fuel: None,
        })
    }

    pub fn amount(&self) -> f64 {
        self.amount
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Replaces the amount, keeping provenance.
    pub fn with_amount(mut self, amount: f64) -> Result<Self> {
        check_amount(amount)?;
        self.amount = amount;
        Ok(self)
    }

    pub fn with_confidence(mut self, level: ConfidenceLevel) -> Self {
        self.confidence = level;
        self
    }

    pub fn with_uncertainty(mut self, pct: Option<f64>) -> Self {
        self.uncertainty_pct = pct;
        self
    }

    pub fn with_fill(mut self, fill: FillFlag) -> Self {
        self.fill = Some(fill);
        self
    }

    pub fn with_fuel(mut self, fuel: Option<String>) -> Self {
        self.fuel = fuel;
        self
    }
}

fn check_amount(amount: f64) -> Result<()> {
    if amount.is_finite() && amount >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "emission amount must be finite and >= 0, got {amount}"
        )))
    }
}
