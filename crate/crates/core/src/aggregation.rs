//! Boundary rollups, asset rankings and inventory export.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use chrono::Datelike;
use serde::Serialize;
use serde_json::{json, Value};

use crate::apportion::largest_remainder;
use crate::error::{Error, Result};
use crate::gas::Gas;
use crate::model::{
    code_enum, ConfidenceLevel, EmissionRecord, FillFlag, Granularity, LatLon, Period, Provenance, SourceKind,
    YearMonth,
};
use crate::temporal::MonthlySeries;

code_enum! {
    pub enum Level {
        Gadm0 => "gadm0",
        Gadm1 => "gadm1",
        Gadm2 => "gadm2",
        Fua => "fua",
    }
}

pub const UNLOCATED: &str = "unlocated";

/// Id of the virtual child that holds a unit's unlocated emissions.
pub fn unlocated_child(parent: &str) -> String {
    format!("{parent}/{UNLOCATED}")
}

/// The units one source falls in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UnitPath {
    pub gadm0: String,
    pub gadm1: Option<String>,
    pub gadm2: Option<String>,
    pub fuas: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct AdminUnit {
    pub id: String,
    pub level: Level,
    /// gadm1 points at gadm0, gadm2 at gadm1. FUAs have no parent.
    pub parent: Option<String>,
}

/// Precomputed source to unit lookup for assets and proxy cells.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundaryIndex {
    entries: BTreeMap<String, UnitPath>,
}

impl BoundaryIndex {
    /// Fails when one gadm1 or gadm2 id sits under two different parents.
    pub fn new(entries: BTreeMap<String, UnitPath>) -> Result<Self> {
        let mut parent_of: BTreeMap<&str, &str> = BTreeMap::new();
        let mut problems = Vec::new();
        for (src, p) in &entries {
            let links = [
                (p.gadm1.as_deref(), Some(p.gadm0.as_str())),
                (p.gadm2.as_deref(), p.gadm1.as_deref()),
            ];
            for (child, parent) in links {
                if let (Some(c), Some(par)) = (child, parent) {
                    match parent_of.insert(c, par) {
                        Some(prev) if prev != par => {
                            problems.push(format!("{src}: unit {c:?} under both {prev:?} and {par:?}"))
                        }
                        _ => {}
                    }
                }
            }
        }
        if problems.is_empty() {
            Ok(BoundaryIndex { entries })
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn get(&self, source_id: &str) -> Option<&UnitPath> {
        self.entries.get(source_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Every unit named in the index, plus unlocated children for each gadm0
    /// and gadm1.
    pub fn units(&self) -> Vec<AdminUnit> {
        let mut set = BTreeSet::new();
        for p in self.entries.values() {
            set.insert(AdminUnit {
                id: p.gadm0.clone(),
                level: Level::Gadm0,
                parent: None,
            });
            for (level, id, parent) in [
                (Level::Gadm1, p.gadm1.clone(), Some(p.gadm0.clone())),
                (Level::Gadm2, p.gadm2.clone(), p.gadm1.clone()),
            ] {
                if let Some(id) = id {
                    set.insert(AdminUnit { id, level, parent });
                }
            }
            for f in &p.fuas {
                set.insert(AdminUnit {
                    id: f.clone(),
                    level: Level::Fua,
                    parent: None,
                });
            }
        }
        let parents: Vec<(String, Level)> = set
            .iter()
            .filter(|u| u.level == Level::Gadm0 || u.level == Level::Gadm1)
            .map(|u| (u.id.clone(), u.level))
            .collect();
        for (id, level) in parents {
            let child = unlocated_child(&id);
            if level == Level::Gadm0 {
                set.insert(AdminUnit {
                    id: unlocated_child(&child),
                    level: Level::Gadm2,
                    parent: Some(child.clone()),
                });
            }
            set.insert(AdminUnit {
                id: child,
                level: if level == Level::Gadm0 { Level::Gadm1 } else { Level::Gadm2 },
                parent: Some(id),
            });
        }
        set.into_iter().collect()
    }

    /// The units a record counts toward at `level`. Records of sources missing
    /// from the index, or indexed under another country, go to the unlocated
    /// children of their country. Empty for a record with no country.
    pub fn units_of(&self, record: &EmissionRecord, level: Level) -> Vec<String> {
        let country = record.country.as_str();
        if country.is_empty() {
            return Vec::new();
        }
        let path = self.entries.get(&record.source_id).filter(|p| p.gadm0 == country);
        let g1 = path
            .and_then(|p| p.gadm1.clone())
            .unwrap_or_else(|| unlocated_child(country));
        match level {
            Level::Gadm0 => vec![country.to_string()],
            Level::Gadm1 => vec![g1],
            Level::Gadm2 => vec![path.and_then(|p| p.gadm2.clone()).unwrap_or_else(|| unlocated_child(&g1))],
            Level::Fua => path.map(|p| p.fuas.clone()).unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct RollupKey {
    pub unit_id: String,
    pub subsector: String,
    pub gas: Gas,
    pub period_start: chrono::NaiveDate,
    pub period_end: chrono::NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RollupCell {
    pub tonnes: f64,
    /// The shared provenance, or `None` when contributions differ.
    pub provenance: Option<Provenance>,
    /// Lowest confidence among contributions.
    pub confidence: ConfidenceLevel,
    pub records: usize,
}

impl RollupCell {
    pub fn provenance_code(&self) -> &'static str {
        self.provenance.map_or("mixed", Provenance::code)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Rollup {
    pub level: Option<Level>,
    pub cells: BTreeMap<RollupKey, RollupCell>,
    /// Source ids of records that had no country.
    pub quarantined: Vec<String>,
}

impl Rollup {
    pub fn total(&self, gas: Gas) -> f64 {
        self.cells.iter().filter(|(k, _)| k.gas == gas).map(|(_, c)| c.tonnes).sum()
    }

    /// Totals per unit for one gas, over all subsectors and periods.
    pub fn unit_totals(&self, gas: Gas) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for (k, c) in &self.cells {
            if k.gas == gas {
                *out.entry(k.unit_id.clone()).or_insert(0.0) += c.tonnes;
            }
        }
        out
    }
}

/// Sums records per (unit, subsector, gas, period) at `level`. With
/// `Granularity::Annual` each record counts toward the calendar year it starts
/// in; otherwise toward the month it starts in.
pub fn rollup(records: &[EmissionRecord], index: &BoundaryIndex, level: Level, granularity: Granularity) -> Result<Rollup> {
    let bucket = |p: &Period| -> Result<Period> {
        match granularity {
            Granularity::Annual => Ok(Period::year(p.start.year())),
            Granularity::Monthly => Ok(YearMonth::of(p.start).period()),
            other => Err(Error::Usage(format!("rollups are monthly or annual, not {other}"))),
        }
    };
    let mut out = Rollup {
        level: Some(level),
        ..Rollup::default()
    };
    for r in records {
        let units = index.units_of(r, level);
        if r.country.is_empty() {
            log::warn!("record {} has no country; quarantined", r.source_id);
            out.quarantined.push(r.source_id.clone());
            continue;
        }
        let period = bucket(&r.period)?;
        for unit_id in units {
            let key = RollupKey {
                unit_id,
                subsector: r.subsector.clone(),
                gas: r.gas,
                period_start: period.start,
                period_end: period.end,
            };
            out.cells
                .entry(key)
                .and_modify(|c| {
                    c.tonnes += r.amount();
                    if c.provenance != Some(r.provenance()) {
                        c.provenance = None;
                    }
                    c.confidence = c.confidence.min(r.confidence);
                    c.records += 1;
                })
                .or_insert(RollupCell {
                    tonnes: r.amount(),
                    provenance: Some(r.provenance()),
                    confidence: r.confidence,
                    records: 1,
                });
        }
    }
    Ok(out)
}

/// Assets in `unit` ranked by their total `gas` over records inside `period`,
/// largest first, ties by id.
pub fn rank_assets(
    records: &[EmissionRecord],
    index: &BoundaryIndex,
    level: Level,
    unit_id: &str,
    subsector: Option<&str>,
    gas: Gas,
    period: Option<&Period>,
) -> Vec<(String, f64)> {
    let mut totals: BTreeMap<&str, f64> = BTreeMap::new();
    for r in records {
        if r.source_kind != SourceKind::Asset
            || r.gas != gas
            || subsector.is_some_and(|s| s != r.subsector)
            || period.is_some_and(|p| r.period.start < p.start || r.period.end > p.end)
            || !index.units_of(r, level).iter().any(|u| u == unit_id)
        {
            continue;
        }
        *totals.entry(r.source_id.as_str()).or_insert(0.0) += r.amount();
    }
    let mut ranked: Vec<(String, f64)> = totals.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
}

/// Monthly totals of `gas` for one unit over `first..=last`. Months with
/// records are flagged observed; months without are 0 and zero_filled.
pub fn unit_timeseries(
    records: &[EmissionRecord],
    index: &BoundaryIndex,
    level: Level,
    unit_id: &str,
    gas: Gas,
    first: YearMonth,
    last: YearMonth,
) -> Result<MonthlySeries> {
    if last < first {
        return Err(Error::Usage(format!("window {first}..{last} is empty")));
    }
    let mut series = MonthlySeries::empty(first, first.span_to(last));
    for r in records {
        if r.gas != gas || !index.units_of(r, level).iter().any(|u| u == unit_id) {
            continue;
        }
        if r.period.granularity != Granularity::Monthly {
            return Err(Error::Usage(format!(
                "unit series needs monthly records; {} covers {}..{}",
                r.source_id, r.period.start, r.period.end
            )));
        }
        series.accumulate(YearMonth::of(r.period.start), r.amount(), FillFlag::Observed);
    }
    for i in 0..series.len() {
        let ym = series.month(i);
        if series.get(ym).is_none() {
            series.set(ym, 0.0, FillFlag::ZeroFilled);
        }
    }
    Ok(series)
}

// ---------------------------------------------------------------- export

code_enum! {
    pub enum ExportFormat {
        Csv => "csv",
        Geojson => "geojson",
    }
}

impl ExportFormat {
    pub fn extension(self) -> &'static str {
        self.code()
    }
}

/// Options shared by every export.
#[derive(Debug, Clone, Default)]
pub struct ExportOptions<'a> {
    /// Serialized run configuration embedded in the file.
    pub run_config: Option<&'a str>,
    /// Round tonnes to integers with largest-remainder apportionment per
    /// (country, subsector, gas, year), so each group keeps its rounded total.
    pub integral: bool,
}

pub const RECORD_COLUMNS: [&str; 13] = [
    "source_kind",
    "source_id",
    "country",
    "subsector",
    "gas",
    "period_start",
    "period_end",
    "tonnes",
    "provenance",
    "confidence",
    "uncertainty_pct",
    "fill",
    "fuel",
];

pub const ROLLUP_COLUMNS: [&str; 9] = [
    "unit_id",
    "level",
    "subsector",
    "gas",
    "period_start",
    "period_end",
    "tonnes",
    "provenance",
    "confidence",
];

fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else {
        v.to_string()
    }
}

fn integral_amounts(records: &[EmissionRecord]) -> Vec<f64> {
    let mut groups: BTreeMap<(&str, &str, Gas, i32), Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        groups
            .entry((&r.country, &r.subsector, r.gas, r.period.start.year()))
            .or_default()
            .push(i);
    }
    let mut out = vec![0.0; records.len()];
    for idx in groups.values() {
        let vals: Vec<f64> = idx.iter().map(|&i| records[i].amount()).collect();
        for (&i, v) in idx.iter().zip(largest_remainder(&vals)) {
            out[i] = v as f64;
        }
    }
    out
}

fn csv_preamble<W: Write>(out: &mut W, opts: &ExportOptions<'_>) -> Result<()> {
    if let Some(cfg) = opts.run_config {
        writeln!(out, "# run_config={cfg}").map_err(|e| Error::Csv(e.into()))?;
    }
    Ok(())
}

/// Writes source-level records. Located assets (by `locations`) get point
/// geometry in GeoJSON; everything else gets null geometry.
pub fn export_records<W: Write>(
    mut out: W,
    records: &[EmissionRecord],
    locations: &BTreeMap<String, LatLon>,
    format: ExportFormat,
    opts: &ExportOptions<'_>,
) -> Result<()> {
    let amounts: Vec<f64> = if opts.integral {
        integral_amounts(records)
    } else {
        records.iter().map(EmissionRecord::amount).collect()
    };
    match format {
        ExportFormat::Csv => {
            csv_preamble(&mut out, opts)?;
            let mut w = csv::Writer::from_writer(out);
            w.write_record(RECORD_COLUMNS)?;
            for (r, t) in records.iter().zip(&amounts) {
                w.write_record([
                    r.source_kind.code(),
                    &r.source_id,
                    &r.country,
                    &r.subsector,
                    r.gas.code(),
                    &r.period.start.to_string(),
                    &r.period.end.to_string(),
                    &fmt_num(*t),
                    r.provenance().code(),
                    r.confidence.code(),
                    &r.uncertainty_pct.map(fmt_num).unwrap_or_default(),
                    r.fill.map_or("", FillFlag::code),
                    r.fuel.as_deref().unwrap_or(""),
                ])?;
            }
            w.flush().map_err(|e| Error::Csv(e.into()))
        }
        ExportFormat::Geojson => {
            let features: Vec<Value> = records
                .iter()
                .zip(&amounts)
                .map(|(r, t)| {
                    let geometry = match (r.source_kind, locations.get(&r.source_id)) {
                        (SourceKind::Asset, Some(l)) => json!({"type": "Point", "coordinates": [l.lon, l.lat]}),
                        _ => Value::Null,
                    };
                    json!({
                        "type": "Feature",
                        "geometry": geometry,
                        "properties": {
                            "source_kind": r.source_kind.code(),
                            "source_id": r.source_id,
                            "country": r.country,
                            "subsector": r.subsector,
                            "gas": r.gas.code(),
                            "period_start": r.period.start.to_string(),
                            "period_end": r.period.end.to_string(),
                            "tonnes": t,
                            "provenance": r.provenance().code(),
                            "confidence": r.confidence.code(),
                            "uncertainty_pct": r.uncertainty_pct,
                            "fill": r.fill.map(FillFlag::code),
                            "fuel": r.fuel,
                        }
                    })
                })
                .collect();
            write_collection(out, features, opts)
        }
    }
}

fn write_collection<W: Write>(mut out: W, features: Vec<Value>, opts: &ExportOptions<'_>) -> Result<()> {
    let mut doc = json!({"type": "FeatureCollection", "features": features});
    if let Some(cfg) = opts.run_config {
        let parsed: Value = serde_json::from_str(cfg).unwrap_or_else(|_| Value::String(cfg.to_string()));
        doc["run_config"] = parsed;
    }
    serde_json::to_writer_pretty(&mut out, &doc)?;
    writeln!(out).map_err(|e| Error::Csv(e.into()))
}

/// Writes rollup cells. GeoJSON features carry null geometry; the unit id is
/// the join key to boundary files.
pub fn export_rollup<W: Write>(mut out: W, rollup: &Rollup, format: ExportFormat, opts: &ExportOptions<'_>) -> Result<()> {
    let level = rollup.level.map_or("", Level::code);
    let cells: Vec<(&RollupKey, &RollupCell, f64)> = if opts.integral {
        let vals: Vec<f64> = rollup.cells.values().map(|c| c.tonnes).collect();
        let rounded = largest_remainder(&vals);
        rollup
            .cells
            .iter()
            .zip(rounded)
            .map(|((k, c), t)| (k, c, t as f64))
            .collect()
    } else {
        rollup.cells.iter().map(|(k, c)| (k, c, c.tonnes)).collect()
    };
    match format {
        ExportFormat::Csv => {
            csv_preamble(&mut out, opts)?;
            let mut w = csv::Writer::from_writer(out);
            w.write_record(ROLLUP_COLUMNS)?;
            for (k, c, t) in cells {
                w.write_record([
                    k.unit_id.as_str(),
                    level,
                    &k.subsector,
                    k.gas.code(),
                    &k.period_start.to_string(),
                    &k.period_end.to_string(),
                    &fmt_num(t),
                    c.provenance_code(),
                    c.confidence.code(),
                ])?;
            }
            w.flush().map_err(|e| Error::Csv(e.into()))
        }
        ExportFormat::Geojson => {
            let features = cells
                .into_iter()
                .map(|(k, c, t)| {
                    json!({
                        "type": "Feature",
                        "geometry": Value::Null,
                        "properties": {
                            "unit_id": k.unit_id,
                            "level": level,
                            "subsector": k.subsector,
                            "gas": k.gas.code(),
                            "period_start": k.period_start.to_string(),
                            "period_end": k.period_end.to_string(),
                            "tonnes": t,
                            "provenance": c.provenance_code(),
                            "confidence": c.confidence.code(),
                        }
                    })
                })
                .collect();
            write_collection(out, features, opts)
        }
    }
}

/// Reads records written by [`export_records`] in CSV form.
pub fn load_records<R: Read>(input: R) -> Result<Vec<EmissionRecord>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("inventory file lacks column {name:?}")))
    };
    let idx: Vec<usize> = RECORD_COLUMNS.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let f = |i: usize| rec.get(idx[i]).unwrap_or("");
        let parse = || -> Result<EmissionRecord> {
            let period = Period::infer(
                f(5).parse().map_err(|e| Error::Domain(format!("period_start: {e}")))?,
                f(6).parse().map_err(|e| Error::Domain(format!("period_end: {e}")))?,
            )?;
            let tonnes: f64 = f(7).parse().map_err(|e| Error::Domain(format!("tonnes: {e}")))?;
            let mut r = EmissionRecord::new(
                f(0).parse()?,
                f(1),
                f(2),
                f(3),
                f(4).parse()?,
                period,
                tonnes,
                f(8).parse()?,
            )?
            .with_confidence(f(9).parse()?)
            .with_uncertainty(match f(10) {
                "" => None,
                s => Some(s.parse().map_err(|e| Error::Domain(format!("uncertainty_pct: {e}")))?),
            })
            .with_fuel((!f(12).is_empty()).then(|| f(12).to_string()));
            if !f(11).is_empty() {
                r = r.with_fill(f(11).parse()?);
            }
            Ok(r)
        };
        out.push(parse().map_err(|e| Error::Config(format!("inventory row {line}: {e}")))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(g0: &str, g1: Option<&str>, g2: Option<&str>, fuas: &[&str]) -> UnitPath {
        UnitPath {
            gadm0: g0.into(),
            gadm1: g1.map(Into::into),
            gadm2: g2.map(Into::into),
            fuas: fuas.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn index() -> BoundaryIndex {
        BoundaryIndex::new(BTreeMap::from([
            ("a".to_string(), path("USA", Some("USA.1"), Some("USA.1.1"), &["NYC"])),
            ("b".to_string(), path("USA", Some("USA.1"), Some("USA.1.1"), &[])),
            ("c".to_string(), path("USA", Some("USA.1"), Some("USA.1.2"), &["NYC"])),
            ("d".to_string(), path("USA", Some("USA.2"), None, &[])),
        ]))
        .unwrap()
    }

    fn rec(kind: SourceKind, id: &str, country: &str, t: f64) -> EmissionRecord {
        EmissionRecord::new(
            kind,
            id,
            country,
            "cement",
            Gas::Co2,
            YearMonth::new(2022, 3).unwrap().period(),
            t,
            Provenance::Modeled,
        )
        .unwrap()
    }

    #[test]
    fn same_county_sums() {
        let recs = [rec(SourceKind::Asset, "a", "USA", 10.0), rec(SourceKind::Asset, "b", "USA", 15.0)];
        let r = rollup(&recs, &index(), Level::Gadm2, Granularity::Monthly).unwrap();
        assert_eq!(r.unit_totals(Gas::Co2)["USA.1.1"], 25.0);
    }

    #[test]
    fn hierarchy_identity_and_unlocated_children() {
        let recs = [
            rec(SourceKind::Asset, "a", "USA", 10.0),
            rec(SourceKind::Asset, "c", "USA", 5.0),
            rec(SourceKind::Asset, "d", "USA", 7.0),
            rec(SourceKind::Country, "USA", "USA", 3.0),
        ];
        let idx = index();
        let g0 = rollup(&recs, &idx, Level::Gadm0, Granularity::Monthly).unwrap().unit_totals(Gas::Co2);
        let g1 = rollup(&recs, &idx, Level::Gadm1, Granularity::Monthly).unwrap().unit_totals(Gas::Co2);
        let g2 = rollup(&recs, &idx, Level::Gadm2, Granularity::Monthly).unwrap().unit_totals(Gas::Co2);
        assert_eq!(g0["USA"], 25.0);
        assert_eq!(g1["USA/unlocated"], 3.0);
        assert_eq!(g2["USA/unlocated/unlocated"], 3.0);
        assert_eq!(g2["USA.2/unlocated"], 7.0);
        let units = idx.units();
        for (child, total) in &g2 {
            let parent = units.iter().find(|u| &u.id == child).and_then(|u| u.parent.clone()).unwrap();
            assert!(g1.contains_key(&parent), "{child} -> {parent}");
            let _ = total;
        }
        let mut per_g1: BTreeMap<String, f64> = BTreeMap::new();
        for (child, t) in &g2 {
            let parent = units.iter().find(|u| &u.id == child).unwrap().parent.clone().unwrap();
            *per_g1.entry(parent).or_default() += t;
        }
        assert_eq!(per_g1, g1);
        let fua = rollup(&recs, &idx, Level::Fua, Granularity::Monthly).unwrap().unit_totals(Gas::Co2);
        assert_eq!(fua["NYC"], 15.0);
        assert!(fua["NYC"] <= g0["USA"]);
    }

    #[test]
    fn records_without_country_are_quarantined() {
        let recs = [rec(SourceKind::Asset, "a", "", 10.0)];
        let r = rollup(&recs, &index(), Level::Gadm0, Granularity::Annual).unwrap();
        assert!(r.cells.is_empty());
        assert_eq!(r.quarantined, ["a"]);
    }

    #[test]
    fn containment_conflicts_are_rejected() {
        let bad = BTreeMap::from([
            ("a".to_string(), path("USA", Some("X"), None, &[])),
            ("b".to_string(), path("CAN", Some("X"), None, &[])),
        ]);
        assert!(BoundaryIndex::new(bad).is_err());
    }

    #[test]
    fn ranking() {
        let idx = index();
        let recs = [rec(SourceKind::Asset, "a", "USA", 5.0), rec(SourceKind::Asset, "b", "USA", 9.0)];
        let r = rank_assets(&recs, &idx, Level::Gadm0, "USA", None, Gas::Co2, None);
        assert_eq!(r, [("b".to_string(), 9.0), ("a".to_string(), 5.0)]);
        let tie = [rec(SourceKind::Asset, "c", "USA", 5.0), rec(SourceKind::Asset, "a", "USA", 5.0)];
        let r = rank_assets(&tie, &idx, Level::Gadm0, "USA", None, Gas::Co2, None);
        assert_eq!(r.iter().map(|x| x.0.as_str()).collect::<Vec<_>>(), ["a", "c"]);
        assert!(rank_assets(&recs, &idx, Level::Gadm1, "USA.2", None, Gas::Co2, None).is_empty());
    }

    #[test]
    fn timeseries_fills_missing_months() {
        let idx = index();
        let recs = [rec(SourceKind::Asset, "a", "USA", 5.0), rec(SourceKind::Asset, "b", "USA", 2.0)];
        let s = unit_timeseries(
            &recs,
            &idx,
            Level::Gadm2,
            "USA.1.1",
            Gas::Co2,
            YearMonth::new(2022, 2).unwrap(),
            YearMonth::new(2022, 4).unwrap(),
        )
        .unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.get(YearMonth::new(2022, 3).unwrap()).unwrap().0, 7.0);
        assert_eq!(s.flag_count(FillFlag::ZeroFilled), 2);
        let clipped = unit_timeseries(
            &recs,
            &idx,
            Level::Gadm2,
            "USA.1.1",
            Gas::Co2,
            YearMonth::new(2022, 4).unwrap(),
            YearMonth::new(2022, 4).unwrap(),
        )
        .unwrap();
        assert_eq!(clipped.get(YearMonth::new(2022, 4).unwrap()).unwrap().0, 0.0);
    }

    #[test]
    fn csv_round_trip_and_empty_selection() {
        let recs = vec![
            rec(SourceKind::Asset, "a", "USA", 1.0 / 3.0).with_fill(FillFlag::ProfileSplit),
            rec(SourceKind::Spatial, "cell-9", "USA", 2.5).with_uncertainty(Some(12.5)),
        ];
        let mut buf = Vec::new();
        let opts = ExportOptions {
            run_config: Some(r#"{"jobs":1}"#),
            integral: false,
        };
        export_records(&mut buf, &recs, &BTreeMap::new(), ExportFormat::Csv, &opts).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# run_config="));
        assert_eq!(load_records(buf.as_slice()).unwrap(), recs);

        let mut empty = Vec::new();
        export_records(&mut empty, &[], &BTreeMap::new(), ExportFormat::Csv, &ExportOptions::default()).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap().lines().count(), 1);
    }

    #[test]
    fn geojson_geometry() {
        let recs = vec![rec(SourceKind::Asset, "a", "USA", 1.0), rec(SourceKind::Asset, "z", "USA", 1.0)];
        let locs = BTreeMap::from([("a".to_string(), LatLon::new(40.0, -74.0).unwrap())]);
        let mut buf = Vec::new();
        export_records(&mut buf, &recs, &locs, ExportFormat::Geojson, &ExportOptions::default()).unwrap();
        let v: Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["features"][0]["geometry"]["coordinates"], json!([-74.0, 40.0]));
        assert!(v["features"][1]["geometry"].is_null());
        assert!("shapefile".parse::<ExportFormat>().is_err());
    }

    #[test]
    fn integral_export_keeps_group_totals() {
        let recs: Vec<EmissionRecord> =
            (0..3).map(|i| rec(SourceKind::Asset, &format!("x{i}"), "USA", 10.0 / 3.0)).collect();
        let mut buf = Vec::new();
        let opts = ExportOptions {
            run_config: None,
            integral: true,
        };
        export_records(&mut buf, &recs, &BTreeMap::new(), ExportFormat::Csv, &opts).unwrap();
        let back = load_records(buf.as_slice()).unwrap();
        assert_eq!(back.iter().map(|r| r.amount()).sum::<f64>(), 10.0);
        assert_eq!(back[0].amount(), 4.0);
    }

    #[test]
    fn exports_are_deterministic() {
        let recs = vec![rec(SourceKind::Asset, "a", "USA", 1.0), rec(SourceKind::Asset, "c", "USA", 2.0)];
        let r = rollup(&recs, &index(), Level::Gadm1, Granularity::Annual).unwrap();
        let mut a = Vec::new();
        let mut b = Vec::new();
        for format in [ExportFormat::Csv, ExportFormat::Geojson] {
            export_rollup(&mut a, &r, format, &ExportOptions::default()).unwrap();
            export_rollup(&mut b, &r, format, &ExportOptions::default()).unwrap();
        }
        assert_eq!(a, b);
    }
}
