//! CSV loaders for every input table.
//!
//! Loaders either return a complete table or a [`LoadError`] listing every bad
//! row by line number (the header is line 1). Unknown columns are logged and
//! ignored. Outputs are sorted by key, so row order never matters.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Display;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::Serialize;

use crate::aggregation::{BoundaryIndex, UnitPath};
use crate::copollutants::ReferenceRow;
use crate::error::{Error, LoadError, Result, RowIssue};
use crate::gas::{Gas, GwpTable, Horizon};
use crate::model::{
    Asset, EstimationMethod, ImplicitRule, LatLon, Period, PollutantPath, QuantityKind, Subsector,
};
use crate::quality::{ActivitySource, ConfidenceRubric, EfGranularity, Evidence};
use crate::model::ConfidenceLevel;
use crate::temporal::TemporalProfile;

pub fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

struct Schema {
    table: &'static str,
    required: &'static [&'static str],
    optional: &'static [&'static str],
    prefix: Option<&'static str>,
}

struct Issues {
    table: &'static str,
    list: Vec<RowIssue>,
}

impl Issues {
    fn new(table: &'static str) -> Self {
        Issues { table, list: Vec::new() }
    }

    fn push(&mut self, line: u64, message: impl Into<String>) {
        self.list.push(RowIssue {
            line,
            message: message.into(),
        });
    }

    fn finish(mut self) -> Result<()> {
        if self.list.is_empty() {
            return Ok(());
        }
        self.list.sort_by(|a, b| a.line.cmp(&b.line).then_with(|| a.message.cmp(&b.message)));
        Err(LoadError {
            table: self.table.to_string(),
            issues: self.list,
        }
        .into())
    }
}

struct Row<'r> {
    rec: &'r csv::StringRecord,
    cols: &'r HashMap<String, usize>,
}

impl Row<'_> {
    fn get(&self, col: &str) -> Option<&str> {
        self.cols
            .get(col)
            .and_then(|&i| self.rec.get(i))
            .map(str::trim)
            .filter(|s| !s.is_empty())
    }

    fn req(&self, col: &str) -> std::result::Result<&str, String> {
        self.get(col).ok_or_else(|| format!("{col} is empty"))
    }

    fn parse<T: FromStr>(&self, col: &str) -> std::result::Result<Option<T>, String>
    where
        T::Err: Display,
    {
        self.get(col)
            .map(|s| s.parse().map_err(|e| format!("{col}: cannot parse {s:?}: {e}")))
            .transpose()
    }

    fn req_parse<T: FromStr>(&self, col: &str) -> std::result::Result<T, String>
    where
        T::Err: Display,
    {
        self.parse(col)?.ok_or_else(|| format!("{col} is empty"))
    }

    fn number(&self, col: &str) -> std::result::Result<Option<f64>, String> {
        match self.parse::<f64>(col)? {
            Some(v) if !v.is_finite() => Err(format!("{col}: not a finite number")),
            v => Ok(v),
        }
    }

    fn nonneg(&self, col: &str) -> std::result::Result<Option<f64>, String> {
        match self.number(col)? {
            Some(v) if v < 0.0 => Err(format!("{col}: negative ({v})")),
            v => Ok(v),
        }
    }

    fn req_nonneg(&self, col: &str) -> std::result::Result<f64, String> {
        self.nonneg(col)?.ok_or_else(|| format!("{col} is empty"))
    }

    fn flag(&self, col: &str, default: bool) -> std::result::Result<bool, String> {
        match self.get(col).map(str::to_ascii_lowercase).as_deref() {
            None => Ok(default),
            Some("true" | "1" | "yes" | "y") => Ok(true),
            Some("false" | "0" | "no" | "n") => Ok(false),
            Some(other) => Err(format!("{col}: expected true/false, got {other:?}")),
        }
    }

    fn prefixed<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, Option<&'a str>)> + 'a {
        let mut cols: Vec<(&String, &usize)> = self.cols.iter().filter(|(c, _)| c.starts_with(prefix)).collect();
        cols.sort();
        cols.into_iter().map(move |(c, &i)| {
            (
                &c[prefix.len()..],
                self.rec.get(i).map(str::trim).filter(|s| !s.is_empty()),
            )
        })
    }
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(input)
}

fn read_rows<R: Read, T>(
    input: R,
    schema: &Schema,
    issues: &mut Issues,
    mut parse: impl FnMut(&Row<'_>) -> std::result::Result<T, String>,
) -> Result<Vec<(u64, T)>> {
    let mut rdr = reader(input);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        issues.push(1, "missing header");
        return Ok(Vec::new());
    }
    let mut cols = HashMap::new();
    for (i, h) in headers.iter().enumerate() {
        let h = h.trim().to_string();
        let known = schema.required.contains(&h.as_str())
            || schema.optional.contains(&h.as_str())
            || schema.prefix.is_some_and(|p| h.starts_with(p));
        if !known {
            log::warn!("{}: ignoring unknown column {h:?}", schema.table);
        }
        if cols.insert(h.clone(), i).is_some() {
            issues.push(1, format!("duplicate column {h:?}"));
        }
    }
    for req in schema.required {
        if !cols.contains_key(*req) {
            issues.push(1, format!("missing required column {req:?}"));
        }
    }
    if !issues.list.is_empty() {
        return Ok(Vec::new());
    }

    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                issues.push(line, e.to_string());
                continue;
            }
        };
        let line = rec.position().map_or(0, |p| p.line());
        match parse(&Row { rec: &rec, cols: &cols }) {
            Ok(v) => out.push((line, v)),
            Err(msg) => issues.push(line, msg),
        }
    }
    if out.is_empty() && issues.list.is_empty() {
        log::warn!("{}: no data rows", schema.table);
    }
    Ok(out)
}

fn write_err(e: std::io::Error) -> Error {
    Error::Csv(e.into())
}

// ---------------------------------------------------------------- subsectors

const SUBSECTORS: Schema = Schema {
    table: "subsectors",
    required: &["subsector", "ipcc_sector"],
    optional: &[
        "method",
        "profile_id",
        "pollutant_path",
        "emitting_ratio",
        "implicit_from",
        "implicit_minus",
        "activity_uncertainty_pct",
        "ef_uncertainty_pct",
    ],
    prefix: None,
};

pub fn load_subsectors<R: Read>(input: R) -> Result<BTreeMap<String, Subsector>> {
    let mut issues = Issues::new(SUBSECTORS.table);
    let rows = read_rows(input, &SUBSECTORS, &mut issues, |r| {
        let mut s = Subsector::new(r.req("subsector")?, r.req("ipcc_sector")?);
        if let Some(m) = r.parse::<EstimationMethod>("method")? {
            s = s.with_method(m);
        }
        s.profile_id = r.get("profile_id").map(str::to_string);
        if let Some(p) = r.parse::<PollutantPath>("pollutant_path")? {
            s = s.with_pollutant_path(p);
        }
        s.emitting_ratio = r.nonneg("emitting_ratio")?;
        if s.emitting_ratio.is_some_and(|x| x > 1.0) {
            return Err("emitting_ratio: must be <= 1".into());
        }
        match (r.get("implicit_from"), r.get("implicit_minus")) {
            (Some(broad), minus) => {
                s.implicit = Some(ImplicitRule {
                    broad: broad.to_string(),
                    covered: minus
                        .map(|m| m.split(';').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect())
                        .unwrap_or_default(),
                })
            }
            (None, Some(_)) => return Err("implicit_minus given without implicit_from".into()),
            (None, None) => {}
        }
        s.activity_uncertainty_pct = r.nonneg("activity_uncertainty_pct")?;
        s.ef_uncertainty_pct = r.nonneg("ef_uncertainty_pct")?;
        Ok(s)
    })?;
    let mut out = BTreeMap::new();
    for (line, s) in rows {
        if out.contains_key(&s.id) {
            issues.push(line, format!("duplicate subsector {:?}", s.id));
        } else {
            out.insert(s.id.clone(), s);
        }
    }
    for s in out.values() {
        if let Some(rule) = &s.implicit {
            for id in std::iter::once(&rule.broad).chain(&rule.covered) {
                if !out.contains_key(id) {
                    issues.push(1, format!("{}: implicit rule names unknown subsector {id:?}", s.id));
                }
            }
        }
    }
    issues.finish()?;
    Ok(out)
}

// ---------------------------------------------------------------- assets

/// Assets sorted by id, each belonging to a known subsector.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AssetRegistry {
    assets: Vec<Asset>,
}

impl AssetRegistry {
    pub fn new(mut assets: Vec<Asset>, subsectors: &BTreeMap<String, Subsector>) -> Result<Self> {
        assets.sort_by(|a, b| a.id.cmp(&b.id));
        let mut problems = Vec::new();
        for w in assets.windows(2) {
            if w[0].id == w[1].id {
                problems.push(format!("duplicate asset id {:?}", w[0].id));
            }
        }
        for a in &assets {
            if !subsectors.contains_key(&a.subsector) {
                problems.push(format!("asset {:?}: unknown subsector {:?}", a.id, a.subsector));
            }
        }
        if problems.is_empty() {
            Ok(AssetRegistry { assets })
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn assets(&self) -> &[Asset] {
        &self.assets
    }

    pub fn len(&self) -> usize {
        self.assets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assets.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Asset> {
        self.assets
            .binary_search_by(|a| a.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.assets[i])
    }

    /// Assets of one subsector in one country, by id.
    pub fn group(&self, country: &str, subsector: &str) -> Vec<&Asset> {
        self.assets
            .iter()
            .filter(|a| a.country == country && a.subsector == subsector)
            .collect()
    }

    pub fn of_subsector(&self, subsector: &str) -> Vec<&Asset> {
        self.assets.iter().filter(|a| a.subsector == subsector).collect()
    }
}

const ASSETS: Schema = Schema {
    table: "assets",
    required: &["asset_id", "subsector", "country"],
    optional: &[
        "lat",
        "lon",
        "capacity",
        "capacity_unit",
        "capacity_factor",
        "output",
        "fuel",
        "operating_from",
        "operating_to",
        "quantity_kind",
        "scraped",
        "emitting",
    ],
    prefix: Some("ef_"),
};

pub fn load_asset_registry<R: Read>(input: R, subsectors: &BTreeMap<String, Subsector>) -> Result<AssetRegistry> {
    let mut issues = Issues::new(ASSETS.table);
    let rows = read_rows(input, &ASSETS, &mut issues, |r| {
        let mut a = Asset::new(r.req("asset_id")?, r.req("subsector")?, r.req("country")?);
        if !subsectors.contains_key(&a.subsector) {
            return Err(format!("unknown subsector {:?}", a.subsector));
        }
        a.location = match (r.number("lat")?, r.number("lon")?) {
            (Some(lat), Some(lon)) => Some(LatLon::new(lat, lon).map_err(|e| e.to_string())?),
            (None, None) => None,
            _ => return Err("lat and lon must be given together".into()),
        };
        a.capacity = r.nonneg("capacity")?;
        if let Some(u) = r.get("capacity_unit") {
            a.capacity_unit = u.to_string();
        }
        a.capacity_factor = r.nonneg("capacity_factor")?;
        for (code, value) in r.prefixed("ef_") {
            let gas: Gas = code.parse().map_err(|e: Error| format!("ef_{code}: {e}"))?;
            if gas.is_co2e() {
                return Err(format!("ef_{code}: emission factors are per gas, not CO2e"));
            }
            if let Some(v) = value {
                let v: f64 = v.parse().map_err(|e| format!("ef_{code}: cannot parse {v:?}: {e}"))?;
                if !(v.is_finite() && v >= 0.0) {
                    return Err(format!("ef_{code}: negative ({v})"));
                }
                a.emission_factors.insert(gas, v);
            }
        }
        a.output = r.nonneg("output")?;
        a.fuel = r.get("fuel").map(str::to_string);
        a.operating_from = r.parse::<NaiveDate>("operating_from")?;
        a.operating_to = r.parse::<NaiveDate>("operating_to")?;
        if let (Some(f), Some(t)) = (a.operating_from, a.operating_to) {
            if f >= t {
                return Err("operating_from must precede operating_to".into());
            }
        }
        if let Some(k) = r.parse::<QuantityKind>("quantity_kind")? {
            a.quantity_kind = k;
        }
        a.flags.scraped = r.flag("scraped", false)?;
        a.flags.emitting = r.flag("emitting", true)?;
        Ok(a)
    })?;
    let mut seen: HashMap<String, u64> = HashMap::new();
    let mut assets = Vec::with_capacity(rows.len());
    for (line, a) in rows {
        if let Some(first) = seen.get(&a.id) {
            issues.push(line, format!("duplicate asset id {:?} (first on row {first})", a.id));
            continue;
        }
        seen.insert(a.id.clone(), line);
        assets.push(a);
    }
    issues.finish()?;
    AssetRegistry::new(assets, subsectors)
}

fn opt_num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the registry in the layout [`load_asset_registry`] reads.
pub fn write_asset_registry<W: Write>(out: W, registry: &AssetRegistry) -> Result<()> {
    let gases: BTreeSet<Gas> = registry
        .assets()
        .iter()
        .flat_map(|a| a.emission_factors.keys().copied())
        .collect();
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = [
        "asset_id",
        "subsector",
        "country",
        "lat",
        "lon",
        "capacity",
        "capacity_unit",
        "capacity_factor",
        "output",
        "fuel",
        "operating_from",
        "operating_to",
        "quantity_kind",
        "scraped",
        "emitting",
    ]
    .map(String::from)
    .to_vec();
    header.extend(gases.iter().map(|g| format!("ef_{g}")));
    w.write_record(&header)?;
    for a in registry.assets() {
        let mut rec = vec![
            a.id.clone(),
            a.subsector.clone(),
            a.country.clone(),
            opt_num(a.location.map(|l| l.lat)),
            opt_num(a.location.map(|l| l.lon)),
            opt_num(a.capacity),
            a.capacity_unit.clone(),
            opt_num(a.capacity_factor),
            opt_num(a.output),
            a.fuel.clone().unwrap_or_default(),
            a.operating_from.map(|d| d.to_string()).unwrap_or_default(),
            a.operating_to.map(|d| d.to_string()).unwrap_or_default(),
            a.quantity_kind.to_string(),
            a.flags.scraped.to_string(),
            a.flags.emitting.to_string(),
        ];
        rec.extend(gases.iter().map(|g| opt_num(a.emission_factors.get(g).copied())));
        w.write_record(&rec)?;
    }
    w.flush().map_err(write_err)
}

// ---------------------------------------------------------------- country totals

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct TotalKey {
    pub country: String,
    pub subsector: String,
    pub gas: Gas,
    pub year: i32,
}

/// Reference country totals, one row per key. The totals are lower bounds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CountryTotalTable {
    pub rows: BTreeMap<TotalKey, f64>,
    /// Source label per key, when the file gives one.
    pub sources: BTreeMap<TotalKey, String>,
}

impl CountryTotalTable {
    pub fn get(&self, country: &str, subsector: &str, gas: Gas, year: i32) -> Option<f64> {
        self.rows
            .get(&TotalKey {
                country: country.into(),
                subsector: subsector.into(),
                gas,
                year,
            })
            .copied()
    }
}

const TOTALS: Schema = Schema {
    table: "country_totals",
    required: &["country", "subsector", "gas", "year", "tonnes"],
    optional: &["source"],
    prefix: None,
};

pub fn load_country_totals<R: Read>(input: R) -> Result<CountryTotalTable> {
    let mut issues = Issues::new(TOTALS.table);
    let rows = read_rows(input, &TOTALS, &mut issues, |r| {
        let gas: Gas = r.req_parse("gas")?;
        if !gas.is_greenhouse() {
            return Err(format!("gas: {gas} is not a per-gas greenhouse total (CO2, CH4, N2O)"));
        }
        let key = TotalKey {
            country: r.req("country")?.to_string(),
            subsector: r.req("subsector")?.to_string(),
            gas,
            year: r.req_parse("year")?,
        };
        let t = r.number("tonnes")?.ok_or("tonnes is empty")?;
        if t < 0.0 {
            return Err(format!("tonnes: negative ({t})"));
        }
        Ok((key, t, r.get("source").map(str::to_string)))
    })?;
    let mut table = CountryTotalTable::default();
    let mut lines: HashMap<TotalKey, u64> = HashMap::new();
    for (line, (key, t, source)) in rows {
        if let Some(first) = lines.get(&key) {
            issues.push(
                line,
                format!(
                    "duplicate key ({}, {}, {}, {}) (first on row {first})",
                    key.country, key.subsector, key.gas, key.year
                ),
            );
            continue;
        }
        lines.insert(key.clone(), line);
        if let Some(s) = source {
            table.sources.insert(key.clone(), s);
        }
        table.rows.insert(key, t);
    }
    issues.finish()?;
    Ok(table)
}

// ---------------------------------------------------------------- proxies

#[derive(Debug, Clone, PartialEq, PartialOrd, Serialize)]
pub struct ProxyRow {
    /// `None` applies to every subsector without rows of its own.
    pub subsector: Option<String>,
    pub country: String,
    pub unit_id: String,
    pub weight: f64,
}

/// Spatial weights for placing remainders, normalized per country on use.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProxySurface {
    rows: Vec<ProxyRow>,
}

impl ProxySurface {
    pub fn new(mut rows: Vec<ProxyRow>) -> Self {
        rows.sort_by(|a, b| {
            (&a.subsector, &a.country, &a.unit_id).cmp(&(&b.subsector, &b.country, &b.unit_id))
        });
        ProxySurface { rows }
    }

    pub fn rows(&self) -> &[ProxyRow] {
        &self.rows
    }

    /// Weights for (subsector, country): the subsector's own rows when it has
    /// any in that country, otherwise the wildcard rows.
    pub fn weights_for(&self, subsector: &str, country: &str) -> Vec<(String, f64)> {
        let pick = |s: Option<&str>| -> Vec<(String, f64)> {
            self.rows
                .iter()
                .filter(|r| r.subsector.as_deref() == s && r.country == country)
                .map(|r| (r.unit_id.clone(), r.weight))
                .collect()
        };
        let own = pick(Some(subsector));
        if own.is_empty() {
            pick(None)
        } else {
            own
        }
    }

    pub fn is_empty_for(&self, subsector: &str, country: &str) -> bool {
        self.weights_for(subsector, country).iter().all(|(_, w)| *w == 0.0)
    }
}

const PROXY: Schema = Schema {
    table: "proxy",
    required: &["subsector", "country", "unit_id", "weight"],
    optional: &[],
    prefix: None,
};

pub fn load_proxy_surface<R: Read>(input: R) -> Result<ProxySurface> {
    let mut issues = Issues::new(PROXY.table);
    let rows = read_rows(input, &PROXY, &mut issues, |r| {
        let s = r.req("subsector")?;
        Ok(ProxyRow {
            subsector: (s != "*").then(|| s.to_string()),
            country: r.req("country")?.to_string(),
            unit_id: r.req("unit_id")?.to_string(),
            weight: r.req_nonneg("weight")?,
        })
    })?;
    let mut seen = HashMap::new();
    let mut out = Vec::new();
    for (line, row) in rows {
        let key = (row.subsector.clone(), row.country.clone(), row.unit_id.clone());
        if let Some(first) = seen.insert(key, line) {
            issues.push(line, format!("duplicate proxy cell {:?} (first on row {first})", row.unit_id));
            continue;
        }
        out.push(row);
    }
    issues.finish()?;
    Ok(ProxySurface::new(out))
}

// ---------------------------------------------------------------- profiles

const PROFILES: Schema = Schema {
    table: "profiles",
    required: &[
        "profile_id", "m1", "m2", "m3", "m4", "m5", "m6", "m7", "m8", "m9", "m10", "m11", "m12",
    ],
    optional: &[],
    prefix: None,
};

pub fn load_profiles<R: Read>(input: R) -> Result<BTreeMap<String, TemporalProfile>> {
    let mut issues = Issues::new(PROFILES.table);
    let rows = read_rows(input, &PROFILES, &mut issues, |r| {
        let mut w = [0.0; 12];
        for (m, slot) in w.iter_mut().enumerate() {
            *slot = r.req_nonneg(&format!("m{}", m + 1))?;
        }
        TemporalProfile::new(r.req("profile_id")?, w).map_err(|e| e.to_string())
    })?;
    let mut out = BTreeMap::new();
    for (line, p) in rows {
        if out.contains_key(&p.id) {
            issues.push(line, format!("duplicate profile {:?}", p.id));
        } else {
            out.insert(p.id.clone(), p);
        }
    }
    issues.finish()?;
    Ok(out)
}

// ---------------------------------------------------------------- GWP

const GWP: Schema = Schema {
    table: "gwp",
    required: &["gas", "horizon", "factor"],
    optional: &[],
    prefix: None,
};

pub fn load_gwp<R: Read>(input: R) -> Result<GwpTable> {
    let mut issues = Issues::new(GWP.table);
    let rows = read_rows(input, &GWP, &mut issues, |r| {
        let gas: Gas = r.req_parse("gas")?;
        let horizon: Horizon = r.req_parse("horizon")?;
        let factor = r.number("factor")?.ok_or("factor is empty")?;
        Ok(((gas, horizon), factor))
    })?;
    let mut seen = HashMap::new();
    for (line, (key, _)) in &rows {
        if let Some(first) = seen.insert(*key, *line) {
            issues.push(*line, format!("duplicate GWP for {} at {} yr (first on row {first})", key.0, key.1.years()));
        }
    }
    issues.finish()?;
    GwpTable::new(rows.into_iter().map(|(_, e)| e))
}

// ---------------------------------------------------------------- boundaries

const BOUNDARIES: Schema = Schema {
    table: "boundaries",
    required: &["source_id", "gadm0"],
    optional: &["gadm1", "gadm2", "fua"],
    prefix: None,
};

pub fn load_boundaries<R: Read>(input: R) -> Result<BoundaryIndex> {
    let mut issues = Issues::new(BOUNDARIES.table);
    let rows = read_rows(input, &BOUNDARIES, &mut issues, |r| {
        let path = UnitPath {
            gadm0: r.req("gadm0")?.to_string(),
            gadm1: r.get("gadm1").map(str::to_string),
            gadm2: r.get("gadm2").map(str::to_string),
            fuas: r
                .get("fua")
                .map(|f| {
                    let set: BTreeSet<String> =
                        f.split(';').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect();
                    set.into_iter().collect()
                })
                .unwrap_or_default(),
        };
        if path.gadm2.is_some() && path.gadm1.is_none() {
            return Err("gadm2 given without gadm1".into());
        }
        Ok((r.req("source_id")?.to_string(), path))
    })?;
    let mut entries = BTreeMap::new();
    let mut lines = HashMap::new();
    for (line, (id, path)) in rows {
        if let Some(first) = lines.insert(id.clone(), line) {
            issues.push(line, format!("duplicate source_id {id:?} (first on row {first})"));
            continue;
        }
        entries.insert(id, path);
    }
    issues.finish()?;
    BoundaryIndex::new(entries)
}

// ---------------------------------------------------------------- reported emissions

/// A measured or reported emission amount for one asset over one period.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportedRow {
    pub asset_id: String,
    pub gas: Gas,
    pub period: Period,
    pub tonnes: f64,
}

const REPORTED: Schema = Schema {
    table: "reported_emissions",
    required: &["asset_id", "gas", "period_start", "period_end", "tonnes"],
    optional: &[],
    prefix: None,
};

/// Periods are end-exclusive. Monthly, quarterly and annual granularity is
/// inferred from the dates; anything else is treated as an arbitrary span.
pub fn load_reported<R: Read>(input: R, registry: &AssetRegistry) -> Result<Vec<ReportedRow>> {
    let mut issues = Issues::new(REPORTED.table);
    let rows = read_rows(input, &REPORTED, &mut issues, |r| {
        let asset_id = r.req("asset_id")?.to_string();
        if registry.get(&asset_id).is_none() {
            return Err(format!("unknown asset {asset_id:?}"));
        }
        let gas: Gas = r.req_parse("gas")?;
        if !gas.is_greenhouse() {
            return Err(format!("gas: {gas} is not a per-gas greenhouse gas"));
        }
        let period = Period::infer(r.req_parse("period_start")?, r.req_parse("period_end")?)
            .map_err(|e| e.to_string())?;
        Ok(ReportedRow {
            asset_id,
            gas,
            period,
            tonnes: r.req_nonneg("tonnes")?,
        })
    })?;
    let mut seen = HashMap::new();
    let mut out = Vec::new();
    for (line, row) in rows {
        let key = (row.asset_id.clone(), row.gas, row.period.start, row.period.end);
        if let Some(first) = seen.insert(key, line) {
            issues.push(line, format!("duplicate report for {:?} (first on row {first})", row.asset_id));
            continue;
        }
        out.push(row);
    }
    issues.finish()?;
    out.sort_by(|a, b| {
        (&a.asset_id, a.gas, a.period.start, a.period.end).cmp(&(&b.asset_id, b.gas, b.period.start, b.period.end))
    });
    Ok(out)
}

// ---------------------------------------------------------------- country activity

/// Country-level activity statistics for one subsector and year.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct CountryActivity {
    /// Total economic output, in the same unit as asset `output`.
    pub total_output: Option<f64>,
    /// Number of establishments, emitting or not.
    pub establishments: Option<u64>,
}

const ACTIVITY: Schema = Schema {
    table: "country_activity",
    required: &["country", "subsector", "year"],
    optional: &["total_output", "establishments"],
    prefix: None,
};

pub fn load_country_activity<R: Read>(input: R) -> Result<BTreeMap<(String, String, i32), CountryActivity>> {
    let mut issues = Issues::new(ACTIVITY.table);
    let rows = read_rows(input, &ACTIVITY, &mut issues, |r| {
        Ok((
            (r.req("country")?.to_string(), r.req("subsector")?.to_string(), r.req_parse("year")?),
            CountryActivity {
                total_output: r.nonneg("total_output")?,
                establishments: r.parse("establishments")?,
            },
        ))
    })?;
    let mut out = BTreeMap::new();
    for (line, (key, v)) in rows {
        if out.insert(key.clone(), v).is_some() {
            issues.push(line, format!("duplicate key ({}, {}, {})", key.0, key.1, key.2));
        }
    }
    issues.finish()?;
    Ok(out)
}

// ---------------------------------------------------------------- reference inventories

const REFERENCE: Schema = Schema {
    table: "reference",
    required: &["subsector", "country", "gas", "tonnes"],
    optional: &["fuel"],
    prefix: None,
};

fn load_reference<R: Read>(input: R, table: &'static str, want_pollutant: bool) -> Result<Vec<ReferenceRow>> {
    let mut issues = Issues::new(table);
    let rows = read_rows(input, &Schema { table, ..REFERENCE }, &mut issues, |r| {
        let gas: Gas = r.req_parse("gas")?;
        if want_pollutant && !gas.is_pollutant() {
            return Err(format!("gas: {gas} is not a non-GHG pollutant"));
        }
        if !want_pollutant && !gas.is_greenhouse() {
            return Err(format!("gas: {gas} is not a per-gas greenhouse gas"));
        }
        Ok(ReferenceRow {
            subsector: r.req("subsector")?.to_string(),
            country: r.req("country")?.to_string(),
            fuel: r.get("fuel").map(str::to_string),
            gas,
            tonnes: r.req_nonneg("tonnes")?,
        })
    })?;
    let mut seen = HashMap::new();
    let mut out = Vec::new();
    for (line, row) in rows {
        let key = (row.subsector.clone(), row.country.clone(), row.fuel.clone(), row.gas);
        if let Some(first) = seen.insert(key, line) {
            issues.push(line, format!("duplicate reference row (first on row {first})"));
            continue;
        }
        out.push(row);
    }
    issues.finish()?;
    out.sort_by(|a, b| {
        (&a.subsector, a.gas, &a.country, &a.fuel).cmp(&(&b.subsector, b.gas, &b.country, &b.fuel))
    });
    Ok(out)
}

pub fn load_reference_pollutants<R: Read>(input: R) -> Result<Vec<ReferenceRow>> {
    load_reference(input, "reference_pollutants", true)
}

pub fn load_reference_ghg<R: Read>(input: R) -> Result<Vec<ReferenceRow>> {
    load_reference(input, "reference_ghg", false)
}

// ---------------------------------------------------------------- regions

const REGIONS: Schema = Schema {
    table: "regions",
    required: &["country", "region"],
    optional: &[],
    prefix: None,
};

pub fn load_regions<R: Read>(input: R) -> Result<BTreeMap<String, String>> {
    let mut issues = Issues::new(REGIONS.table);
    let rows = read_rows(input, &REGIONS, &mut issues, |r| {
        Ok((r.req("country")?.to_string(), r.req("region")?.to_string()))
    })?;
    let mut out = BTreeMap::new();
    for (line, (c, region)) in rows {
        if out.insert(c.clone(), region).is_some() {
            issues.push(line, format!("country {c:?} listed twice"));
        }
    }
    issues.finish()?;
    Ok(out)
}

// ---------------------------------------------------------------- rubric

const RUBRIC: Schema = Schema {
    table: "rubric",
    required: &["ef_granularity", "activity_source", "confidence"],
    optional: &[],
    prefix: None,
};

pub fn load_rubric<R: Read>(input: R) -> Result<ConfidenceRubric> {
    let mut issues = Issues::new(RUBRIC.table);
    let rows = read_rows(input, &RUBRIC, &mut issues, |r| {
        Ok((
            Evidence {
                ef: r.req_parse::<EfGranularity>("ef_granularity")?,
                activity: r.req_parse::<ActivitySource>("activity_source")?,
            },
            r.req_parse::<ConfidenceLevel>("confidence")?,
        ))
    })?;
    issues.finish()?;
    ConfidenceRubric::new(rows.into_iter().map(|(_, v)| v))
}

// ---------------------------------------------------------------- cities

/// Annual emissions and GDP per capita for one city.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CityPanel {
    pub city_id: String,
    pub gdp_per_capita: f64,
    pub emissions: BTreeMap<i32, f64>,
}

const CITIES: Schema = Schema {
    table: "cities",
    required: &["city_id", "year", "emissions", "gdp_per_capita"],
    optional: &[],
    prefix: None,
};

pub fn load_cities<R: Read>(input: R) -> Result<Vec<CityPanel>> {
    let mut issues = Issues::new(CITIES.table);
    let rows = read_rows(input, &CITIES, &mut issues, |r| {
        Ok((
            r.req("city_id")?.to_string(),
            r.req_parse::<i32>("year")?,
            r.req_nonneg("emissions")?,
            r.req_nonneg("gdp_per_capita")?,
        ))
    })?;
    let mut out: BTreeMap<String, CityPanel> = BTreeMap::new();
    for (line, (id, year, em, gdp)) in rows {
        let panel = out.entry(id.clone()).or_insert_with(|| CityPanel {
            city_id: id.clone(),
            gdp_per_capita: gdp,
            emissions: BTreeMap::new(),
        });
        if panel.gdp_per_capita != gdp {
            issues.push(line, format!("city {id:?}: gdp_per_capita differs between rows"));
        }
        if panel.emissions.insert(year, em).is_some() {
            issues.push(line, format!("city {id:?}: year {year} listed twice"));
        }
    }
    issues.finish()?;
    Ok(out.into_values().collect())
}

// ---------------------------------------------------------------- validation

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Finding {
    pub severity: Severity,
    pub code: String,
    pub subject: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn has_errors(&self) -> bool {
        self.findings.iter().any(|f| f.severity == Severity::Error)
    }

    pub fn with_code<'a>(&'a self, code: &'a str) -> impl Iterator<Item = &'a Finding> + 'a {
        self.findings.iter().filter(move |f| f.code == code)
    }

    fn push(&mut self, severity: Severity, code: &str, subject: impl Into<String>, message: impl Into<String>) {
        self.findings.push(Finding {
            severity,
            code: code.into(),
            subject: subject.into(),
            message: message.into(),
        });
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["severity", "code", "subject", "message"])?;
        for f in &self.findings {
            let sev = match f.severity {
                Severity::Warning => "warning",
                Severity::Error => "error",
            };
            w.write_record([sev, &f.code, &f.subject, &f.message])?;
        }
        w.flush().map_err(write_err)
    }
}

/// Cross-table checks that individual loaders cannot make.
///
/// * `unallocatable` (warning): a country total whose country has neither
///   assets of that subsector nor proxy weight; its remainder stays at
///   country level.
/// * `uniform_fallback` (warning): a subsector with no usable profile.
/// * `unknown_subsector` (error): a country total naming an unknown subsector.
/// * `missing_gwp` (error): a greenhouse gas with no GWP at `horizon`.
pub fn validate_inputs(
    subsectors: &BTreeMap<String, Subsector>,
    registry: &AssetRegistry,
    totals: &CountryTotalTable,
    proxies: &ProxySurface,
    profiles: &BTreeMap<String, TemporalProfile>,
    gwp: &GwpTable,
    horizon: Horizon,
) -> ValidationReport {
    let mut report = ValidationReport::default();
    let pairs: BTreeSet<(&str, &str)> = totals
        .rows
        .keys()
        .map(|k| (k.country.as_str(), k.subsector.as_str()))
        .collect();
    for (country, subsector) in pairs {
        if !subsectors.contains_key(subsector) {
            report.push(
                Severity::Error,
                "unknown_subsector",
                format!("{country}/{subsector}"),
                "country total names a subsector missing from subsectors.csv",
            );
            continue;
        }
        let has_assets = registry
            .assets()
            .iter()
            .any(|a| a.country == country && a.subsector == subsector && a.flags.emitting);
        if !has_assets && proxies.is_empty_for(subsector, country) {
            report.push(
                Severity::Warning,
                "unallocatable",
                format!("{country}/{subsector}"),
                "no assets and no proxy weight; the total stays at country level",
            );
        }
    }
    for s in subsectors.values() {
        match &s.profile_id {
            None => report.push(Severity::Warning, "uniform_fallback", &s.id, "no profile mapped; uniform profile used"),
            Some(p) if !profiles.contains_key(p) => report.push(
                Severity::Warning,
                "uniform_fallback",
                &s.id,
                format!("profile {p:?} not found; uniform profile used"),
            ),
            Some(_) => {}
        }
    }
    for gas in Gas::GREENHOUSE {
        if gwp.factor(gas, horizon).is_none() {
            report.push(
                Severity::Error,
                "missing_gwp",
                gas.code(),
                format!("no GWP at {} yr", horizon.years()),
            );
        }
    }
    report.findings.sort();
    report
}
