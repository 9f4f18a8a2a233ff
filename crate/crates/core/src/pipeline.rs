//! The end-to-end synthesis run: configuration, stages, conservation audit and
//! outputs.
//!
//! Stages run in order: ingest, asset estimates, allocation of country totals,
//! temporal completion, remainders, CO2e and co-pollutants, confidence,
//! rollups, export. Everything is computed over whole calendar years and
//! clipped to the window at the end.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::aggregation::{self, BoundaryIndex, ExportFormat, ExportOptions, Level, Rollup};
use crate::apportion;
use crate::copollutants::{self, ReferenceInventory};
use crate::disaggregation::{
    self, AllocationCandidate, FactorSource, RemainderPlacement, RemainderRule, ShareKind,
};
use crate::equations::{CfBound, EmissionFactor};
use crate::error::{Error, Result};
use crate::gas::{Gas, GwpTable, Horizon};
use crate::ingest::{self, AssetRegistry, CountryActivity, CountryTotalTable, ProxySurface, ReportedRow, Severity, ValidationReport};
use crate::model::{
    Asset, EmissionRecord, EstimationMethod, FillFlag, Granularity, LatLon, PollutantPath, Provenance, SourceKind,
    Subsector, YearMonth,
};
use crate::quality::{
    aggregate_uncertainty, assign_confidence, propagate_uncertainty, ActivitySource, ConfidenceRubric,
    EfGranularity, Evidence,
};
use crate::temporal::{self, ImputeContext, MonthlySeries, TemporalProfile};

// ---------------------------------------------------------------- config

/// Inclusive range of months.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: YearMonth,
    pub end: YearMonth,
}

impl Window {
    pub fn new(start: YearMonth, end: YearMonth) -> Result<Self> {
        if end < start {
            return Err(Error::Config(format!("window end {end} precedes start {start}")));
        }
        Ok(Window { start, end })
    }

    pub fn contains(&self, ym: YearMonth) -> bool {
        self.start <= ym && ym <= self.end
    }

    pub fn years(&self) -> Vec<i32> {
        (self.start.year..=self.end.year).collect()
    }
}

impl FromStr for Window {
    type Err = Error;

    /// `YYYY-MM..YYYY-MM`, or a single `YYYY-MM`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once("..") {
            Some((a, b)) => Window::new(a.trim().parse()?, b.trim().parse()?),
            None => {
                let ym: YearMonth = s.trim().parse()?;
                Window::new(ym, ym)
            }
        }
    }
}

impl std::fmt::Display for Window {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

/// Input file locations, relative to the config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPaths {
    pub subsectors: PathBuf,
    pub assets: PathBuf,
    pub country_totals: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proxy: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profiles: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gwp: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundaries: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reported: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub country_activity: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regions: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rubric: Option<PathBuf>,
    /// Pollutant side of each reference inventory, in order of preference.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reference_pollutants: Vec<PathBuf>,
    /// GHG side of each reference inventory, paired by position.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reference_ghg: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportConfig {
    #[serde(default = "default_formats")]
    pub formats: Vec<ExportFormat>,
    #[serde(default = "default_levels")]
    pub levels: Vec<Level>,
    #[serde(default)]
    pub integral: bool,
}

impl Default for ExportConfig {
    fn default() -> Self {
        ExportConfig {
            formats: default_formats(),
            levels: default_levels(),
            integral: false,
        }
    }
}

fn default_formats() -> Vec<ExportFormat> {
    vec![ExportFormat::Csv]
}

fn default_levels() -> Vec<Level> {
    Level::ALL.to_vec()
}

fn default_horizon() -> Horizon {
    Horizon::Years100
}

fn default_jobs() -> usize {
    1
}

fn default_threshold() -> f64 {
    0.01
}

fn default_ratio() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub inputs: InputPaths,
    pub window: Window,
    #[serde(default = "default_horizon")]
    pub horizon: Horizon,
    #[serde(default)]
    pub cf_bound: CfBound,
    /// Subsector id to profile id, overriding subsectors.csv.
    #[serde(default)]
    pub profile_map: BTreeMap<String, String>,
    #[serde(default)]
    pub export: ExportConfig,
    /// Worker threads; 0 uses every core.
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    /// Relative change above which `diff` reports a key.
    #[serde(default = "default_threshold")]
    pub change_threshold: f64,
    /// Emitting ratio for subsectors that do not set one.
    #[serde(default = "default_ratio")]
    pub default_emitting_ratio: f64,
    /// Fill months after an asset's last report from the same month of
    /// earlier years before the usual imputation.
    #[serde(default)]
    pub extrapolate: bool,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    /// A configuration for in-memory runs.
    pub fn in_memory(window: Window) -> Self {
        RunConfig {
            inputs: InputPaths::default(),
            window,
            horizon: default_horizon(),
            cf_bound: CfBound::default(),
            profile_map: BTreeMap::new(),
            export: ExportConfig::default(),
            jobs: default_jobs(),
            change_threshold: default_threshold(),
            default_emitting_ratio: default_ratio(),
            extrapolate: false,
            base_dir: PathBuf::new(),
        }
    }

    pub fn from_toml(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.window.end < self.window.start {
            problems.push("window end precedes start".to_string());
        }
        if !(self.change_threshold >= 0.0) {
            problems.push("change_threshold must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.default_emitting_ratio) {
            problems.push("default_emitting_ratio must be in [0, 1]".into());
        }
        if self.export.formats.is_empty() {
            problems.push("export.formats is empty".into());
        }
        if self.inputs.reference_pollutants.len() != self.inputs.reference_ghg.len() {
            problems.push("reference_pollutants and reference_ghg must pair up".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    /// Compact JSON copy embedded in every output.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).unwrap_or_default()
    }
}

// ---------------------------------------------------------------- inputs

/// Every loaded table.
#[derive(Debug, Clone, Default)]
pub struct Inputs {
    pub subsectors: BTreeMap<String, Subsector>,
    pub registry: AssetRegistry,
    pub totals: CountryTotalTable,
    pub proxies: ProxySurface,
    pub profiles: BTreeMap<String, TemporalProfile>,
    pub gwp: GwpTable,
    pub boundaries: BoundaryIndex,
    pub reported: Vec<ReportedRow>,
    pub country_activity: BTreeMap<(String, String, i32), CountryActivity>,
    pub reference: Option<ReferenceInventory>,
    pub regions: BTreeMap<String, String>,
    pub rubric: ConfidenceRubric,
}

impl Inputs {
    pub fn load(cfg: &RunConfig) -> Result<Inputs> {
        let p = &cfg.inputs;
        let open = |path: &Path| ingest::open(&cfg.resolve(path));
        let subsectors = ingest::load_subsectors(open(&p.subsectors)?)?;
        let registry = ingest::load_asset_registry(open(&p.assets)?, &subsectors)?;
        let mut inputs = Inputs {
            totals: ingest::load_country_totals(open(&p.country_totals)?)?,
            ..Inputs::default()
        };
        if let Some(x) = &p.proxy {
            inputs.proxies = ingest::load_proxy_surface(open(x)?)?;
        }
        if let Some(x) = &p.profiles {
            inputs.profiles = ingest::load_profiles(open(x)?)?;
        }
        if let Some(x) = &p.gwp {
            inputs.gwp = ingest::load_gwp(open(x)?)?;
        }
        if let Some(x) = &p.boundaries {
            inputs.boundaries = ingest::load_boundaries(open(x)?)?;
        }
        if let Some(x) = &p.reported {
            inputs.reported = ingest::load_reported(open(x)?, &registry)?;
        }
        if let Some(x) = &p.country_activity {
            inputs.country_activity = ingest::load_country_activity(open(x)?)?;
        }
        if let Some(x) = &p.regions {
            inputs.regions = ingest::load_regions(open(x)?)?;
        }
        if let Some(x) = &p.rubric {
            inputs.rubric = ingest::load_rubric(open(x)?)?;
        }
        let mut reference: Option<ReferenceInventory> = None;
        for (pol, ghg) in p.reference_pollutants.iter().zip(&p.reference_ghg) {
            let inv = ReferenceInventory {
                pollutants: ingest::load_reference_pollutants(open(pol)?)?,
                ghg: ingest::load_reference_ghg(open(ghg)?)?,
            };
            reference = Some(match reference {
                None => inv,
                Some(prev) => prev.merged_with(&inv),
            });
        }
        inputs.reference = reference;
        inputs.subsectors = subsectors;
        inputs.registry = registry;
        Ok(inputs)
    }
}

/// Cross-table validation plus the checks that depend on the run config.
pub fn validate(inputs: &Inputs, cfg: &RunConfig) -> ValidationReport {
    let mut report = ingest::validate_inputs(
        &inputs.subsectors,
        &inputs.registry,
        &inputs.totals,
        &inputs.proxies,
        &inputs.profiles,
        &inputs.gwp,
        cfg.horizon,
    );
    for a in inputs.registry.assets() {
        if let Some(cf) = a.capacity_factor {
            if cfg.cf_bound.check(cf).is_err() {
                report.findings.push(ingest::Finding {
                    severity: Severity::Error,
                    code: "cf_out_of_bound".into(),
                    subject: a.id.clone(),
                    message: format!("capacity factor {cf} exceeds {}", cfg.cf_bound.max()),
                });
            }
        }
    }
    for (s, p) in &cfg.profile_map {
        if !inputs.profiles.contains_key(p) {
            report.findings.push(ingest::Finding {
                severity: Severity::Error,
                code: "unknown_profile".into(),
                subject: s.clone(),
                message: format!("profile_map names missing profile {p:?}"),
            });
        }
    }
    report.findings.sort();
    report
}

// ---------------------------------------------------------------- report

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StageReport {
    pub name: String,
    pub diagnostics: Vec<String>,
    pub millis: u128,
}

/// Conservation check for one (country, subsector, gas, year) with a reference
/// total.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditEntry {
    pub country: String,
    pub subsector: String,
    pub gas: Gas,
    pub year: i32,
    pub reference: f64,
    /// True when the reference came from implicit subtraction.
    pub implicit: bool,
    pub asset_sum: f64,
    pub remainder: f64,
    pub effective_total: f64,
    pub rule: RemainderRule,
    /// Sum of every output record for the key.
    pub exported: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelAudit {
    pub level: Level,
    pub gas: Gas,
    pub records_total: f64,
    pub level_total: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunReport {
    pub success: bool,
    pub run_config: serde_json::Value,
    pub stages: Vec<StageReport>,
    pub audit: Vec<AuditEntry>,
    pub levels: Vec<LevelAudit>,
    pub failures: Vec<String>,
    pub quarantined: Vec<String>,
    pub record_count: usize,
}

pub const AUDIT_TOLERANCE: f64 = 1e-6;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= AUDIT_TOLERANCE * a.abs().max(b.abs()) + 1e-9
}

/// Output of a run.
#[derive(Debug, Clone, Default)]
pub struct Synthesis {
    /// Monthly records inside the window, in export order.
    pub records: Vec<EmissionRecord>,
    pub rollups: BTreeMap<Level, Rollup>,
    pub locations: BTreeMap<String, LatLon>,
    pub report: RunReport,
}

impl Synthesis {
    /// Fails with the failing keys when the conservation audit did not pass.
    pub fn check(&self) -> Result<()> {
        if self.report.success {
            Ok(())
        } else {
            Err(Error::Conservation(self.report.failures.clone()))
        }
    }

    /// Writes the report, and the exports when the audit passed. Returns the
    /// written paths.
    pub fn write(&self, out_dir: &Path, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let mut written = Vec::new();
        let report_path = out_dir.join("run_report.json");
        let text = serde_json::to_string_pretty(&self.report)?;
        fs::write(&report_path, text + "\n").map_err(|e| Error::io(&report_path, e))?;
        written.push(report_path);
        if !self.report.success {
            return Ok(written);
        }
        let cfg_json = cfg.to_json();
        let opts = ExportOptions {
            run_config: Some(&cfg_json),
            integral: cfg.export.integral,
        };
        for &format in &cfg.export.formats {
            let path = out_dir.join(format!("inventory.{}", format.extension()));
            let mut buf = Vec::new();
            aggregation::export_records(&mut buf, &self.records, &self.locations, format, &opts)?;
            fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
            written.push(path);
            for (level, rollup) in &self.rollups {
                let path = out_dir.join(format!("rollup_{level}.{}", format.extension()));
                let mut buf = Vec::new();
                aggregation::export_rollup(&mut buf, rollup, format, &opts)?;
                fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
                written.push(path);
            }
        }
        Ok(written)
    }
}

// ---------------------------------------------------------------- synthesis

#[derive(Debug, Clone)]
struct Block {
    kind: SourceKind,
    id: String,
    country: String,
    subsector: String,
    fuel: Option<String>,
    gas: Gas,
    provenance: Provenance,
    evidence: Evidence,
    months: Vec<(YearMonth, f64, FillFlag)>,
}

impl Block {
    fn for_asset(a: &Asset, gas: Gas, provenance: Provenance, evidence: Evidence) -> Block {
        Block {
            kind: SourceKind::Asset,
            id: a.id.clone(),
            country: a.country.clone(),
            subsector: a.subsector.clone(),
            fuel: a.fuel.clone(),
            gas,
            provenance,
            evidence,
            months: Vec::new(),
        }
    }

    fn total_in(&self, year: i32) -> f64 {
        self.months.iter().filter(|(ym, _, _)| ym.year == year).map(|(_, v, _)| v).sum()
    }
}

type Key = (String, String, Gas, i32);

struct Ctx {
    years: Vec<i32>,
    first: YearMonth,
    months: usize,
    profiles: BTreeMap<String, TemporalProfile>,
}

impl Ctx {
    fn profile(&self, subsector: &str) -> &TemporalProfile {
        &self.profiles[subsector]
    }

    fn year_months(year: i32) -> impl Iterator<Item = YearMonth> {
        (1..=12).map(move |m| YearMonth { year, month: m })
    }

    /// Splits an annual amount over the asset's active months with the
    /// subsector profile. `None` when the asset is inactive all year.
    fn split_year(&self, asset: Option<&Asset>, subsector: &str, year: i32, amount: f64) -> Option<Vec<(YearMonth, f64, FillFlag)>> {
        let w = self.profile(subsector).weights();
        let months: Vec<YearMonth> = Self::year_months(year).collect();
        let masked: Vec<f64> = months
            .iter()
            .zip(w)
            .map(|(ym, w)| if asset.is_some_and(|a| a.inactive_in(*ym)) { 0.0 } else { *w })
            .collect();
        let parts = apportion::proportional(amount, &masked)?;
        Some(months.into_iter().zip(parts).map(|(ym, v)| (ym, v, FillFlag::ProfileSplit)).collect())
    }

    fn modeled_months(&self, asset: &Asset, monthly: f64, years: &[i32]) -> Vec<(YearMonth, f64, FillFlag)> {
        years
            .iter()
            .flat_map(|&y| Self::year_months(y))
            .map(|ym| {
                if asset.inactive_in(ym) {
                    (ym, 0.0, FillFlag::ZeroFilled)
                } else {
                    (ym, monthly, FillFlag::EqConstrained)
                }
            })
            .collect()
    }
}

fn granularity_of(src: FactorSource) -> EfGranularity {
    match src {
        FactorSource::Own => EfGranularity::Asset,
        FactorSource::Country => EfGranularity::Country,
        FactorSource::Global => EfGranularity::Global,
    }
}

fn subsector_uncertainty(s: Option<&Subsector>) -> Option<f64> {
    let s = s?;
    let parts: Vec<f64> = [s.activity_uncertainty_pct, s.ef_uncertainty_pct].into_iter().flatten().collect();
    if parts.is_empty() {
        None
    } else {
        propagate_uncertainty(&parts).ok()
    }
}

struct Stages {
    list: Vec<StageReport>,
    started: Instant,
}

impl Stages {
    fn new() -> Self {
        Stages {
            list: Vec::new(),
            started: Instant::now(),
        }
    }

    fn finish(&mut self, name: &str, diagnostics: Vec<String>) {
        self.list.push(StageReport {
            name: name.into(),
            diagnostics,
            millis: self.started.elapsed().as_millis(),
        });
        self.started = Instant::now();
    }
}

/// Runs every stage on loaded inputs. The result carries the audit; call
/// [`Synthesis::check`] to turn an audit failure into an error.
pub fn synthesize(inputs: &Inputs, cfg: &RunConfig) -> Result<Synthesis> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run(inputs, cfg))
}

fn run(inputs: &Inputs, cfg: &RunConfig) -> Result<Synthesis> {
    use rayon::prelude::*;

    let mut stages = Stages::new();
    let years = cfg.window.years();
    let first = YearMonth::new(years[0], 1)?;
    let mut diag = Vec::new();
    let mut profiles = BTreeMap::new();
    for s in inputs.subsectors.values() {
        let id = cfg.profile_map.get(&s.id).or(s.profile_id.as_ref());
        let p = match id.and_then(|id| inputs.profiles.get(id)) {
            Some(p) => p.clone(),
            None => {
                diag.push(format!("{}: no profile, uniform used", s.id));
                TemporalProfile::uniform()
            }
        };
        profiles.insert(s.id.clone(), p);
    }
    let ctx = Ctx {
        months: years.len() * 12,
        years: years.clone(),
        first,
        profiles,
    };
    let assets: Vec<&Asset> = inputs
        .registry
        .assets()
        .iter()
        .filter(|a| a.flags.emitting && inputs.subsectors.contains_key(&a.subsector))
        .collect();
    let skipped = inputs.registry.len() - assets.len();
    if skipped > 0 {
        diag.push(format!("{skipped} non-emitting asset(s) skipped"));
    }

    // Reference totals, including implicit ones.
    let reference_only: BTreeSet<&str> = inputs
        .subsectors
        .values()
        .filter_map(|s| s.implicit.as_ref().map(|r| r.broad.as_str()))
        .collect();
    let mut totals: BTreeMap<Key, (f64, bool)> = BTreeMap::new();
    for (k, v) in &inputs.totals.rows {
        if !years.contains(&k.year) {
            continue;
        }
        if !inputs.subsectors.contains_key(&k.subsector) {
            diag.push(format!("total for unknown subsector {} ignored", k.subsector));
            continue;
        }
        if reference_only.contains(k.subsector.as_str()) {
            continue;
        }
        totals.insert((k.country.clone(), k.subsector.clone(), k.gas, k.year), (*v, false));
    }
    for s in inputs.subsectors.values() {
        let Some(rule) = &s.implicit else { continue };
        for (k, broad) in &inputs.totals.rows {
            if k.subsector != rule.broad || !years.contains(&k.year) {
                continue;
            }
            let key = (k.country.clone(), s.id.clone(), k.gas, k.year);
            if totals.contains_key(&key) {
                continue;
            }
            let covered: Vec<f64> = rule
                .covered
                .iter()
                .map(|c| inputs.totals.get(&k.country, c, k.gas, k.year).unwrap_or(0.0))
                .collect();
            let (value, shortfall) = disaggregation::implicit_subtract(*broad, &covered)?;
            if let Some(short) = shortfall {
                diag.push(format!(
                    "{}/{}/{}/{}: covered subsectors exceed {} by {short}",
                    k.country, s.id, k.gas, k.year, rule.broad
                ));
            }
            totals.insert(key, (value, true));
        }
    }
    stages.finish("ingest", diag);

    // Asset estimates from reports and from the activity equation.
    let mut diag = Vec::new();
    let mut reported: BTreeMap<(&str, Gas), Vec<&ReportedRow>> = BTreeMap::new();
    for r in &inputs.reported {
        reported.entry((r.asset_id.as_str(), r.gas)).or_default().push(r);
    }
    let gases_for = |a: &Asset| -> BTreeSet<Gas> {
        let mut set: BTreeSet<Gas> = a.emission_factors.keys().copied().filter(|g| g.is_greenhouse()).collect();
        set.extend(reported.keys().filter(|(id, _)| *id == a.id).map(|(_, g)| *g));
        set.extend(
            totals
                .keys()
                .filter(|(c, s, _, _)| *c == a.country && *s == a.subsector)
                .map(|(_, _, g, _)| *g),
        );
        set
    };
    let jobs: Vec<(&Asset, Gas)> = assets.iter().flat_map(|a| gases_for(a).into_iter().map(move |g| (*a, g))).collect();

    let observed: Vec<((&str, Gas), MonthlySeries)> = reported
        .par_iter()
        .filter_map(|(&(id, gas), rows)| {
            let a = assets.iter().find(|a| a.id == id)?;
            let mut s = MonthlySeries::empty(ctx.first, ctx.months);
            for r in rows {
                for (ym, v, f) in temporal::resample(&r.period, r.tonnes, a.quantity_kind, ctx.profile(&a.subsector)) {
                    s.accumulate(ym, v, f);
                }
            }
            Some(((id, gas), s))
        })
        .collect();
    let mut country_avg: BTreeMap<(&str, &str, Gas, YearMonth), (f64, usize)> = BTreeMap::new();
    let mut global_avg: BTreeMap<(&str, Gas, YearMonth), (f64, usize)> = BTreeMap::new();
    for ((id, gas), s) in &observed {
        let Some(a) = inputs.registry.get(id) else { continue };
        for (ym, cell) in s.iter() {
            if let Some((v, _)) = cell {
                let c = country_avg.entry((&a.subsector, &a.country, *gas, ym)).or_default();
                c.0 += v;
                c.1 += 1;
                let g = global_avg.entry((&a.subsector, *gas, ym)).or_default();
                g.0 += v;
                g.1 += 1;
            }
        }
    }
    let observed: BTreeMap<(&str, Gas), MonthlySeries> = observed.into_iter().collect();

    let stage1: Vec<(Option<Block>, Option<String>)> = jobs
        .par_iter()
        .map(|&(a, gas)| {
            let sub = &inputs.subsectors[&a.subsector];
            let own = match (a.capacity, a.capacity_factor, a.emission_factors.get(&gas)) {
                (Some(c), Some(cf), Some(ef)) => Some(c * cf * ef),
                _ => None,
            };
            if let Some(series) = observed.get(&(a.id.as_str(), gas)) {
                let mut series = series.clone();
                if cfg.extrapolate {
                    if let Some(last) = (0..series.len()).rev().find(|&i| series.cells()[i].is_some()) {
                        let ext = temporal::extrapolate_months(&series, series.month(series.len() - 1));
                        for i in last + 1..series.len() {
                            let ym = series.month(i);
                            if let Some((v, f)) = ext.get(ym) {
                                series.set(ym, v, f);
                            }
                        }
                    }
                }
                let zero = |ym: YearMonth| a.inactive_in(ym);
                let eq = |_: YearMonth| own;
                let c_avg = |ym: YearMonth| {
                    country_avg
                        .get(&(a.subsector.as_str(), a.country.as_str(), gas, ym))
                        .map(|(s, n)| s / *n as f64)
                };
                let g_avg = |ym: YearMonth| global_avg.get(&(a.subsector.as_str(), gas, ym)).map(|(s, n)| s / *n as f64);
                let ictx = ImputeContext {
                    zero_implied: &zero,
                    equation: own.is_some().then_some(&eq as &dyn Fn(YearMonth) -> Option<f64>),
                    country_avg: Some(&c_avg),
                    global_avg: Some(&g_avg),
                };
                match temporal::impute_series(&series, &ictx) {
                    Ok(full) => {
                        let mut b = Block::for_asset(
                            a,
                            gas,
                            Provenance::Reported,
                            Evidence {
                                ef: EfGranularity::Asset,
                                activity: ActivitySource::Reported,
                            },
                        );
                        b.months = full.iter().map(|(ym, c)| {
                            let (v, f) = c.unwrap_or((0.0, FillFlag::ZeroFilled));
                            (ym, v, f)
                        }).collect();
                        return (Some(b), None);
                    }
                    Err(e) => {
                        return (None, Some(format!("{} {gas}: reports unusable ({e}); estimated otherwise", a.id)));
                    }
                }
            }
            if sub.method == EstimationMethod::AssetModel {
                if let Some(monthly) = own {
                    let mut b = Block::for_asset(
                        a,
                        gas,
                        Provenance::Modeled,
                        Evidence {
                            ef: EfGranularity::Asset,
                            activity: ActivitySource::SatelliteModeled,
                        },
                    );
                    b.months = ctx.modeled_months(a, monthly, &ctx.years);
                    return (Some(b), None);
                }
            }
            (None, None)
        })
        .collect();
    let mut known: BTreeMap<(&str, Gas), Block> = BTreeMap::new();
    let mut pending: Vec<(&Asset, Gas)> = Vec::new();
    for ((a, gas), (block, note)) in jobs.iter().zip(stage1) {
        diag.extend(note);
        match block {
            Some(b) => {
                known.insert((a.id.as_str(), *gas), b);
            }
            None => pending.push((a, *gas)),
        }
    }
    stages.finish("asset_estimates", diag);

    // Allocation of country totals to assets without their own estimate.
    let mut diag = Vec::new();
    let defaults_needed: std::sync::Mutex<Vec<(&Asset, Gas, i32)>> = std::sync::Mutex::new(Vec::new());
    let key_jobs: Vec<(&Key, f64)> = totals.iter().map(|(k, (v, _))| (k, *v)).collect();
    let allocated: Vec<(Vec<Block>, Vec<String>)> = key_jobs
        .par_iter()
        .map(|&(key, total)| {
            let (country, subsector, gas, year) = key;
            let mut notes = Vec::new();
            let group: Vec<&Asset> = assets
                .iter()
                .copied()
                .filter(|a| &a.country == country && &a.subsector == subsector)
                .collect();
            let open: Vec<&Asset> = pending
                .iter()
                .filter(|(a, g)| g == gas && &a.country == country && &a.subsector == subsector)
                .map(|(a, _)| *a)
                .filter(|a| Ctx::year_months(*year).any(|ym| !a.inactive_in(ym)))
                .collect();
            let proxy = |a: &Asset| -> f64 {
                if open.iter().all(|o| o.output.is_some()) {
                    a.output.unwrap_or(0.0)
                } else if open.iter().all(|o| o.capacity.is_some()) {
                    a.capacity.unwrap_or(0.0)
                } else {
                    1.0
                }
            };
            let mut candidates: Vec<AllocationCandidate> = open
                .iter()
                .map(|a| AllocationCandidate {
                    asset_id: a.id.clone(),
                    proxy: proxy(a),
                    reported: None,
                })
                .collect();
            for a in &group {
                if let Some(b) = known.get(&(a.id.as_str(), *gas)) {
                    candidates.push(AllocationCandidate {
                        asset_id: a.id.clone(),
                        proxy: 0.0,
                        reported: Some(b.total_in(*year)),
                    });
                }
            }
            let mut unplaced_activity = 0.0;
            if let Some(act) = inputs.country_activity.get(&(country.clone(), subsector.clone(), *year)) {
                let by_output = !open.is_empty() && open.iter().all(|o| o.output.is_some());
                if let (true, Some(total_output)) = (by_output, act.total_output) {
                    let registered: f64 = group.iter().filter_map(|a| a.output).sum();
                    unplaced_activity = (total_output - registered).max(0.0);
                } else if let Some(n) = act.establishments {
                    let ratio = inputs.subsectors[subsector]
                        .emitting_ratio
                        .unwrap_or(cfg.default_emitting_ratio);
                    let scraped = group.iter().filter(|a| a.flags.scraped).count() as u64;
                    match disaggregation::adjust_emitting_count(n, ratio, scraped) {
                        Ok(emitting) => {
                            let missing = emitting.saturating_sub(group.len() as u64);
                            let proxies: Vec<f64> = open.iter().map(|a| proxy(a)).collect();
                            if let Some(mean) = disaggregation::mean(&proxies) {
                                unplaced_activity = missing as f64 * mean;
                            }
                        }
                        Err(e) => notes.push(format!("{country}/{subsector}/{year}: {e}")),
                    }
                }
            }
            let alloc = match disaggregation::allocate_country_to_assets(total, &candidates, unplaced_activity) {
                Ok(a) => a,
                Err(e) => {
                    notes.push(format!("{country}/{subsector}/{gas}/{year}: allocation failed: {e}"));
                    return (Vec::new(), notes);
                }
            };
            if alloc.uniform_fallback {
                notes.push(format!("{country}/{subsector}/{gas}/{year}: no activity proxy, split evenly"));
            }
            if alloc.unplaced > 0.0 && !open.is_empty() {
                notes.push(format!(
                    "{country}/{subsector}/{gas}/{year}: {} t attributed to unregistered establishments",
                    alloc.unplaced
                ));
            }
            let mut blocks = Vec::new();
            for share in &alloc.shares {
                let Some(a) = open.iter().find(|a| a.id == share.asset_id) else { continue };
                match share.kind {
                    ShareKind::Allocated => {
                        let mut b = Block::for_asset(
                            a,
                            *gas,
                            Provenance::Disaggregated,
                            Evidence {
                                ef: EfGranularity::Country,
                                activity: ActivitySource::Proxy,
                            },
                        );
                        b.months = ctx.split_year(Some(a), subsector, *year, share.amount).unwrap_or_default();
                        blocks.push(b);
                    }
                    ShareKind::NeedsDefaults => defaults_needed.lock().unwrap().push((a, *gas, *year)),
                    ShareKind::Reported => {}
                }
            }
            (blocks, notes)
        })
        .collect();
    let mut asset_blocks: Vec<Block> = known.into_values().collect();
    for (blocks, notes) in allocated {
        asset_blocks.extend(blocks);
        diag.extend(notes);
    }
    let mut defaults_needed = defaults_needed.into_inner().unwrap_or_default();
    for (a, gas) in &pending {
        for &y in &years {
            if !totals.contains_key(&(a.country.clone(), a.subsector.clone(), *gas, y)) {
                defaults_needed.push((a, *gas, y));
            }
        }
    }
    defaults_needed.sort_by(|x, y| (&x.0.id, x.1, x.2).cmp(&(&y.0.id, y.1, y.2)));
    let defaulted: Vec<std::result::Result<Block, String>> = defaults_needed
        .par_iter()
        .map(|&(a, gas, year)| {
            let global: Vec<&Asset> = assets.iter().copied().filter(|o| o.subsector == a.subsector).collect();
            let country: Vec<&Asset> = global.iter().copied().filter(|o| o.country == a.country).collect();
            let f = disaggregation::impute_asset_defaults(a, gas, &country, &global).map_err(|e| e.to_string())?;
            let prov = if f.coarsest_source() == FactorSource::Own {
                Provenance::Modeled
            } else {
                Provenance::Imputed
            };
            let activity = if f.capacity_source == FactorSource::Own && f.capacity_factor_source == FactorSource::Own {
                ActivitySource::SatelliteModeled
            } else {
                ActivitySource::Imputed
            };
            let mut b = Block::for_asset(
                a,
                gas,
                prov,
                Evidence {
                    ef: granularity_of(f.emission_factor_source),
                    activity,
                },
            );
            b.months = ctx.modeled_months(a, f.monthly_emissions(), &[year]);
            Ok(b)
        })
        .collect();
    for r in defaulted {
        match r {
            Ok(b) => asset_blocks.push(b),
            Err(e) => diag.push(e),
        }
    }
    // An asset may hold blocks for different years of the same gas.
    let mut merged: BTreeMap<(String, Gas), Block> = BTreeMap::new();
    for b in asset_blocks {
        match merged.get_mut(&(b.id.clone(), b.gas)) {
            Some(prev) => {
                if prev.provenance != b.provenance {
                    prev.provenance = prev.provenance.min(b.provenance);
                }
                prev.months.extend(b.months);
                prev.months.sort_by_key(|(ym, _, _)| *ym);
            }
            None => {
                merged.insert((b.id.clone(), b.gas), b);
            }
        }
    }
    stages.finish("allocation", diag);

    // Remainders.
    let mut diag = Vec::new();
    let mut blocks: Vec<Block> = Vec::new();
    let mut audit = Vec::new();
    let mut asset_sums: BTreeMap<Key, f64> = BTreeMap::new();
    for b in merged.values() {
        for &y in &years {
            *asset_sums.entry((b.country.clone(), b.subsector.clone(), b.gas, y)).or_default() += b.total_in(y);
        }
    }
    for (key, (total, implicit)) in &totals {
        let (country, subsector, gas, year) = key;
        let asset_sum = asset_sums.get(key).copied().unwrap_or(0.0);
        let split = disaggregation::compute_remainder(*total, asset_sum);
        if split.rule == RemainderRule::AssetsExceedTotal {
            diag.push(format!(
                "{country}/{subsector}/{gas}/{year}: assets ({asset_sum}) exceed the reference ({total}); assets kept"
            ));
        }
        let evidence = Evidence {
            ef: EfGranularity::Country,
            activity: ActivitySource::Proxy,
        };
        let template = |kind: SourceKind, id: &str| Block {
            kind,
            id: id.to_string(),
            country: country.clone(),
            subsector: subsector.clone(),
            fuel: None,
            gas: *gas,
            provenance: Provenance::Remainder,
            evidence,
            months: Vec::new(),
        };
        if split.remainder > 0.0 {
            match disaggregation::allocate_remainder(split.remainder, &inputs.proxies.weights_for(subsector, country))? {
                RemainderPlacement::Units(units) => {
                    for (unit, amount) in units {
                        let mut b = template(SourceKind::Spatial, &unit);
                        b.months = ctx.split_year(None, subsector, *year, amount).unwrap_or_default();
                        blocks.push(b);
                    }
                }
                RemainderPlacement::Parked(amount) => {
                    diag.push(format!("{country}/{subsector}/{gas}/{year}: no proxy weight, {amount} t kept at country level"));
                    let mut b = template(SourceKind::Country, country);
                    b.months = ctx.split_year(None, subsector, *year, amount).unwrap_or_default();
                    blocks.push(b);
                }
            }
        }
        audit.push(AuditEntry {
            country: country.clone(),
            subsector: subsector.clone(),
            gas: *gas,
            year: *year,
            reference: *total,
            implicit: *implicit,
            asset_sum,
            remainder: split.remainder,
            effective_total: split.effective_total,
            rule: split.rule,
            exported: 0.0,
            ok: false,
        });
    }
    blocks.extend(merged.into_values());
    stages.finish("remainder", diag);

    // Records, CO2e and co-pollutants.
    let mut diag = Vec::new();
    let rubric = &inputs.rubric;
    let make = |b: &Block, ym: YearMonth, v: f64, flag: Option<FillFlag>| -> Result<EmissionRecord> {
        let r = EmissionRecord::new(b.kind, b.id.clone(), b.country.clone(), b.subsector.clone(), b.gas, ym.period(), v, b.provenance)?
            .with_confidence(assign_confidence(b.evidence, rubric))
            .with_uncertainty(subsector_uncertainty(inputs.subsectors.get(&b.subsector)))
            .with_fuel(b.fuel.clone());
        Ok(match flag {
            Some(f) => r.with_fill(f),
            None => r,
        })
    };
    let mut records: Vec<EmissionRecord> = Vec::new();
    for b in &blocks {
        for &(ym, v, f) in &b.months {
            records.push(make(b, ym, v, Some(f))?);
        }
    }
    let co2e_gas = cfg.horizon.co2e_gas();
    let mut by_source: BTreeMap<(SourceKind, &str, &str, &str, YearMonth), Vec<&EmissionRecord>> = BTreeMap::new();
    for r in &records {
        by_source
            .entry((r.source_kind, &r.source_id, &r.country, &r.subsector, YearMonth::of(r.period.start)))
            .or_default()
            .push(r);
    }
    let mut co2e: Vec<EmissionRecord> = Vec::new();
    for ((_, _, _, _, ym), parts) in &by_source {
        let mut total = 0.0;
        let mut weighted = Vec::new();
        for r in parts {
            let gwp = inputs
                .gwp
                .factor(r.gas, cfg.horizon)
                .ok_or_else(|| Error::Config(format!("no GWP for {} at {} yr", r.gas, cfg.horizon.years())))?;
            total += r.amount() * gwp;
            weighted.push((r.amount() * gwp, r.uncertainty_pct));
        }
        let head = parts[0];
        let same_prov = parts.iter().all(|r| r.provenance() == head.provenance());
        let same_fill = parts.iter().all(|r| r.fill == head.fill);
        let unc = if weighted.iter().all(|(_, u)| u.is_some()) && total > 0.0 {
            let w: Vec<(f64, f64)> = weighted.iter().map(|(q, u)| (*q, u.unwrap_or(0.0))).collect();
            aggregate_uncertainty(&w).ok()
        } else {
            head.uncertainty_pct.filter(|_| parts.len() == 1)
        };
        let mut r = EmissionRecord::new(
            head.source_kind,
            head.source_id.clone(),
            head.country.clone(),
            head.subsector.clone(),
            co2e_gas,
            ym.period(),
            total,
            if same_prov { head.provenance() } else { Provenance::Modeled },
        )?
        .with_confidence(parts.iter().map(|r| r.confidence).min().unwrap_or(head.confidence))
        .with_uncertainty(unc)
        .with_fuel(head.fuel.clone());
        if same_fill {
            if let Some(f) = head.fill {
                r = r.with_fill(f);
            }
        }
        co2e.push(r);
    }

    let mut pollutants: Vec<EmissionRecord> = Vec::new();
    if let Some(reference) = &inputs.reference {
        let table = copollutants::build_ratio_table(reference, &inputs.gwp, cfg.horizon, &inputs.regions)?;
        diag.extend(table.diagnostics.iter().cloned());
        let (scaled, notes) = copollutants::scale_pollutants(&co2e, &table, rubric)?;
        diag.extend(notes);
        pollutants.extend(scaled.into_iter().filter(|r| {
            r.source_kind != SourceKind::Asset
                || inputs.subsectors.get(&r.subsector).and_then(|s| s.pollutant_path(r.gas)) == Some(PollutantPath::Copollutant)
        }));
    }
    for s in inputs.subsectors.values() {
        let members: Vec<&Asset> = assets.iter().copied().filter(|a| a.subsector == s.id).collect();
        let direct: BTreeSet<Gas> = members
            .iter()
            .flat_map(|a| a.emission_factors.keys().copied())
            .filter(|g| g.is_pollutant() && s.pollutant_path(*g) == Some(PollutantPath::Direct))
            .collect();
        for gas in direct {
            for a in &members {
                let country: Vec<&Asset> = members.iter().copied().filter(|o| o.country == a.country).collect();
                let f = match disaggregation::impute_asset_defaults(a, gas, &country, &members) {
                    Ok(f) => f,
                    Err(e) => {
                        diag.push(e.to_string());
                        continue;
                    }
                };
                let monthly = copollutants::direct_pollutants(
                    s,
                    gas,
                    f.capacity,
                    f.capacity_factor,
                    &EmissionFactor::new(f.emission_factor, a.capacity_unit.clone()),
                )?;
                let prov = if f.coarsest_source() == FactorSource::Own {
                    Provenance::Modeled
                } else {
                    Provenance::Imputed
                };
                let mut b = Block::for_asset(
                    a,
                    gas,
                    prov,
                    Evidence {
                        ef: granularity_of(f.emission_factor_source),
                        activity: if prov == Provenance::Modeled {
                            ActivitySource::SatelliteModeled
                        } else {
                            ActivitySource::Imputed
                        },
                    },
                );
                b.months = ctx.modeled_months(a, monthly, &ctx.years);
                for &(ym, v, fl) in &b.months {
                    pollutants.push(make(&b, ym, v, Some(fl))?);
                }
            }
        }
    }
    records.extend(co2e);
    records.extend(pollutants);
    stages.finish("pollutants", diag);

    // Audit over whole years, then clip to the window.
    let mut diag = Vec::new();
    let mut exported: BTreeMap<Key, f64> = BTreeMap::new();
    for r in &records {
        if r.gas.is_greenhouse() {
            *exported
                .entry((r.country.clone(), r.subsector.clone(), r.gas, YearMonth::of(r.period.start).year))
                .or_default() += r.amount();
        }
    }
    let mut failures = Vec::new();
    for e in &mut audit {
        e.exported = exported
            .get(&(e.country.clone(), e.subsector.clone(), e.gas, e.year))
            .copied()
            .unwrap_or(0.0);
        e.ok = close(e.exported, e.effective_total);
        if !e.ok {
            failures.push(format!(
                "{}/{}/{}/{}: exported {} vs effective {}",
                e.country, e.subsector, e.gas, e.year, e.exported, e.effective_total
            ));
        }
    }
    records.retain(|r| cfg.window.contains(YearMonth::of(r.period.start)));
    records.sort_by(|a, b| {
        (a.gas, &a.subsector, &a.country, a.source_kind, &a.source_id, a.period.start).cmp(&(
            b.gas,
            &b.subsector,
            &b.country,
            b.source_kind,
            &b.source_id,
            b.period.start,
        ))
    });
    stages.finish("confidence_audit", std::mem::take(&mut diag));

    // Rollups.
    let mut rollups = BTreeMap::new();
    let mut levels = Vec::new();
    let mut quarantined = Vec::new();
    let gases: BTreeSet<Gas> = records.iter().map(|r| r.gas).collect();
    let mut level_list = cfg.export.levels.clone();
    level_list.sort();
    level_list.dedup();
    for level in level_list {
        let r = aggregation::rollup(&records, &inputs.boundaries, level, Granularity::Monthly)?;
        quarantined.extend(r.quarantined.iter().cloned());
        if level != Level::Fua {
            for &gas in &gases {
                let records_total: f64 = records.iter().filter(|x| x.gas == gas && !x.country.is_empty()).map(|x| x.amount()).sum();
                let level_total = r.total(gas);
                let ok = close(records_total, level_total);
                if !ok {
                    failures.push(format!("{level} {gas}: rollup {level_total} vs records {records_total}"));
                }
                levels.push(LevelAudit {
                    level,
                    gas,
                    records_total,
                    level_total,
                    ok,
                });
            }
        }
        rollups.insert(level, r);
    }
    quarantined.sort();
    quarantined.dedup();
    stages.finish("rollups", diag);

    let locations = inputs
        .registry
        .assets()
        .iter()
        .filter_map(|a| a.location.map(|l| (a.id.clone(), l)))
        .collect();
    let report = RunReport {
        success: failures.is_empty(),
        run_config: serde_json::from_str(&cfg.to_json()).unwrap_or_default(),
        stages: stages.list,
        audit,
        levels,
        failures,
        quarantined,
        record_count: records.len(),
    };
    Ok(Synthesis {
        records,
        rollups,
        locations,
        report,
    })
}

// ---------------------------------------------------------------- iterate / diff

/// A key whose annual total moved by more than the threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Change {
    pub country: String,
    pub subsector: String,
    pub gas: Gas,
    pub year: i32,
    pub before: f64,
    pub after: f64,
    /// `None` when the key is new (before was zero).
    pub relative: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ChangeReport {
    pub threshold: f64,
    pub changes: Vec<Change>,
}

impl ChangeReport {
    pub fn is_empty(&self) -> bool {
        self.changes.is_empty()
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["country", "subsector", "gas", "year", "before", "after", "relative"])?;
        for c in &self.changes {
            w.write_record([
                c.country.as_str(),
                &c.subsector,
                c.gas.code(),
                &c.year.to_string(),
                &c.before.to_string(),
                &c.after.to_string(),
                &c.relative.map(|r| r.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))
    }
}

/// Compares annual totals per (country, subsector, gas, year) and lists keys
/// whose relative change exceeds `threshold`.
pub fn diff(before: &[EmissionRecord], after: &[EmissionRecord], threshold: f64) -> ChangeReport {
    let sum = |records: &[EmissionRecord]| {
        let mut m: BTreeMap<Key, f64> = BTreeMap::new();
        for r in records {
            *m.entry((r.country.clone(), r.subsector.clone(), r.gas, YearMonth::of(r.period.start).year))
                .or_default() += r.amount();
        }
        m
    };
    let (b, a) = (sum(before), sum(after));
    let keys: BTreeSet<&Key> = b.keys().chain(a.keys()).collect();
    let mut changes = Vec::new();
    for key in keys {
        let x = b.get(key).copied().unwrap_or(0.0);
        let y = a.get(key).copied().unwrap_or(0.0);
        let relative = (x != 0.0).then(|| (y - x).abs() / x.abs());
        let moved = match relative {
            Some(r) => r > threshold,
            None => y != 0.0,
        };
        if moved {
            changes.push(Change {
                country: key.0.clone(),
                subsector: key.1.clone(),
                gas: key.2,
                year: key.3,
                before: x,
                after: y,
                relative,
            });
        }
    }
    ChangeReport { threshold, changes }
}

/// Full recomputation on new inputs, with a change report against the
/// previous run.
pub fn iterate(previous: &Synthesis, inputs: &Inputs, cfg: &RunConfig) -> Result<(Synthesis, ChangeReport)> {
    let next = synthesize(inputs, cfg)?;
    let changes = diff(&previous.records, &next.records, cfg.change_threshold);
    Ok((next, changes))
}
