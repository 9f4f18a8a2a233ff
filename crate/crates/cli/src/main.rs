use std::collections::BTreeSet;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info, warn};

use emisynth::aggregation::{self, ExportFormat, ExportOptions, Level};
use emisynth::analysis::{self, CityTrend, HIGHER_GDP_THRESHOLD};
use emisynth::copollutants;
use emisynth::gas::Horizon;
use emisynth::ingest;
use emisynth::model::Granularity;
use emisynth::pipeline::{self, Inputs, RunConfig, Window};
use emisynth::Error;

/// Builds monthly asset- and boundary-level emissions inventories from
/// registries, reference totals and proxies.
#[derive(Parser, Debug)]
#[command(name = "emisynth", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check inputs without running the synthesis.
    Validate(RunArgs),
    /// Run every stage and write the inventory, rollups and run report.
    Synthesize(RunArgs),
    /// Roll an exported inventory up to boundary levels.
    Aggregate {
        #[command(flatten)]
        run: RunArgs,
        /// Inventory CSV written by `synthesize`.
        #[arg(long)]
        input: PathBuf,
        /// Levels to produce; defaults to the config's export levels.
        #[arg(long = "level")]
        levels: Vec<Level>,
        /// Annual instead of monthly cells.
        #[arg(long)]
        annual: bool,
    },
    /// Scale the CO2e records of an exported inventory into co-pollutants.
    Pollutants {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        input: PathBuf,
    },
    /// Trend and GDP-group report for a city panel.
    Analyze {
        /// CSV with city_id, year, emissions, gdp_per_capita.
        #[arg(long)]
        cities: PathBuf,
        /// Natural-breaks classes over mean annual change.
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = HIGHER_GDP_THRESHOLD)]
        threshold: f64,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Compare two exported inventories by annual key totals.
    Diff {
        before: PathBuf,
        after: PathBuf,
        /// Relative change to report; defaults to the config value or 0.01.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config window, e.g. 2022-01..2022-12.
    #[arg(long)]
    window: Option<Window>,
    #[arg(long, value_parser = parse_horizon)]
    horizon: Option<Horizon>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Repeat for several formats.
    #[arg(long)]
    format: Vec<ExportFormat>,
    #[arg(long)]
    jobs: Option<usize>,
}

fn parse_horizon(s: &str) -> Result<Horizon, String> {
    let years: u32 = s.parse().map_err(|_| format!("not a number: {s}"))?;
    Horizon::try_from(years).map_err(|e| e.to_string())
}

impl RunArgs {
    fn config(&self) -> emisynth::Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(w) = self.window {
            cfg.window = w;
        }
        if let Some(h) = self.horizon {
            cfg.horizon = h;
        }
        if !self.format.is_empty() {
            cfg.export.formats = self.format.clone();
        }
        if let Some(j) = self.jobs {
            cfg.jobs = j;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}

enum Failure {
    Validation(String),
    Conservation(Vec<String>),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Conservation(keys) => Failure::Conservation(keys),
            other => Failure::Validation(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Validation(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EMISYNTH_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let _ = e.print();
            // 2 is reserved for conservation failures
            return ExitCode::from(1);
        }
    };
    let outcome = match cli.command {
        Command::Validate(run) => validate(&run),
        Command::Synthesize(run) => synthesize(&run),
        Command::Aggregate {
            run,
            input,
            levels,
            annual,
        } => aggregate(&run, &input, levels, annual),
        Command::Pollutants { run, input } => pollutants(&run, &input),
        Command::Analyze {
            cities,
            classes,
            threshold,
            out_dir,
        } => analyze(&cities, classes, threshold, out_dir.as_deref()),
        Command::Diff {
            before,
            after,
            threshold,
            config,
            out_dir,
        } => diff(&before, &after, threshold, config.as_deref(), out_dir.as_deref()),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            error!("{msg}");
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Conservation(keys)) => {
            eprintln!("conservation audit failed for {} key(s):", keys.len());
            for k in keys {
                eprintln!("  {k}");
            }
            ExitCode::from(2)
        }
    }
}

/// Writes to `dir/name`, or to stdout when no directory was given.
fn emit(dir: Option<&Path>, name: &str, body: &[u8]) -> io::Result<()> {
    match dir {
        Some(d) => {
            fs::create_dir_all(d)?;
            fs::write(d.join(name), body)?;
            info!("wrote {}", d.join(name).display());
            Ok(())
        }
        None => io::stdout().write_all(body),
    }
}

fn load_validated(run: &RunArgs) -> Result<(RunConfig, Inputs), Failure> {
    let cfg = run.config()?;
    let inputs = Inputs::load(&cfg)?;
    let report = pipeline::validate(&inputs, &cfg);
    for f in &report.findings {
        warn!("{:?} {} {}: {}", f.severity, f.code, f.subject, f.message);
    }
    if report.has_errors() {
        let n = report.findings.iter().filter(|f| f.severity == ingest::Severity::Error).count();
        return Err(Failure::Validation(format!("{n} validation error(s)")));
    }
    Ok((cfg, inputs))
}

fn validate(run: &RunArgs) -> Outcome {
    let cfg = run.config()?;
    let inputs = Inputs::load(&cfg)?;
    let report = pipeline::validate(&inputs, &cfg);
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    emit(run.out_dir.as_deref(), "validation.csv", &buf)?;
    if report.has_errors() {
        return Err(Failure::Validation("inputs failed validation".into()));
    }
    Ok(())
}

fn synthesize(run: &RunArgs) -> Outcome {
    let (cfg, inputs) = load_validated(run)?;
    let out = run.out_dir();
    let result = pipeline::synthesize(&inputs, &cfg)?;
    let written = result.write(&out, &cfg)?;
    for p in &written {
        info!("wrote {}", p.display());
    }
    result.check()?;
    println!(
        "{} records, {} audit keys, written to {}",
        result.records.len(),
        result.report.audit.len(),
        out.display()
    );
    Ok(())
}

fn read_records(path: &Path) -> Result<Vec<emisynth::model::EmissionRecord>, Failure> {
    Ok(aggregation::load_records(ingest::open(path)?)?)
}

fn aggregate(run: &RunArgs, input: &Path, levels: Vec<Level>, annual: bool) -> Outcome {
    let cfg = run.config()?;
    let boundaries = match &cfg.inputs.boundaries {
        Some(p) => ingest::load_boundaries(ingest::open(&cfg.resolve(p))?)?,
        None => Default::default(),
    };
    let records = read_records(input)?;
    let levels = if levels.is_empty() { cfg.export.levels.clone() } else { levels };
    let granularity = if annual { Granularity::Annual } else { Granularity::Monthly };
    let cfg_json = cfg.to_json();
    let opts = ExportOptions {
        run_config: Some(&cfg_json),
        integral: cfg.export.integral,
    };
    let out = run.out_dir();
    let levels: BTreeSet<Level> = levels.into_iter().collect();
    for level in levels {
        let r = aggregation::rollup(&records, &boundaries, level, granularity)?;
        if !r.quarantined.is_empty() {
            warn!("{level}: {} record(s) quarantined", r.quarantined.len());
        }
        for &format in &cfg.export.formats {
            let mut buf = Vec::new();
            aggregation::export_rollup(&mut buf, &r, format, &opts)?;
            emit(Some(&out), &format!("rollup_{level}.{}", format.extension()), &buf)?;
        }
    }
    Ok(())
}

fn pollutants(run: &RunArgs, input: &Path) -> Outcome {
    let cfg = run.config()?;
    let inputs = Inputs::load(&cfg)?;
    let Some(reference) = &inputs.reference else {
        return Err(Failure::Validation("config names no reference inventory".into()));
    };
    let table = copollutants::build_ratio_table(reference, &inputs.gwp, cfg.horizon, &inputs.regions)?;
    for d in &table.diagnostics {
        warn!("{d}");
    }
    let co2e: Vec<_> = read_records(input)?
        .into_iter()
        .filter(|r| r.gas == cfg.horizon.co2e_gas())
        .collect();
    let (scaled, notes) = copollutants::scale_pollutants(&co2e, &table, &inputs.rubric)?;
    for n in &notes {
        warn!("{n}");
    }
    let locations = inputs
        .registry
        .assets()
        .iter()
        .filter_map(|a| a.location.map(|l| (a.id.clone(), l)))
        .collect();
    let cfg_json = cfg.to_json();
    let opts = ExportOptions {
        run_config: Some(&cfg_json),
        integral: cfg.export.integral,
    };
    for &format in &cfg.export.formats {
        let mut buf = Vec::new();
        aggregation::export_records(&mut buf, &scaled, &locations, format, &opts)?;
        emit(Some(&run.out_dir()), &format!("pollutants.{}", format.extension()), &buf)?;
    }
    Ok(())
}

fn analyze(cities: &Path, classes: usize, threshold: f64, out_dir: Option<&Path>) -> Outcome {
    let panel = ingest::load_cities(ingest::open(cities)?)?;
    let years: BTreeSet<i32> = panel.iter().flat_map(|c| c.emissions.keys().copied()).collect();
    let gdp: Vec<f64> = panel.iter().map(|c| c.gdp_per_capita).collect();
    let labels = analysis::classify_by_threshold(&gdp, threshold);
    let trends: Vec<CityTrend> = panel
        .iter()
        .zip(&labels)
        .map(|(c, class)| {
            let first_year = c.emissions.keys().next().copied().unwrap_or_default();
            let totals: Vec<f64> = c.emissions.values().copied().collect();
            CityTrend {
                city_id: c.city_id.clone(),
                class: *class,
                trend: analysis::pct_change_series(&c.city_id, first_year, &totals),
                first_total: totals.first().copied().unwrap_or(0.0),
                last_total: totals.last().copied().unwrap_or(0.0),
            }
        })
        .collect();
    for t in &trends {
        for d in &t.trend.diagnostics {
            warn!("{}: {d}", t.city_id);
        }
    }
    let means: Vec<f64> = trends.iter().filter_map(|t| t.trend.mean_pct).collect();
    let breaks = if means.len() >= classes {
        Some(analysis::jenks_breaks(&means, classes)?)
    } else {
        warn!("{} cities with a trend, fewer than {classes} classes; breaks skipped", means.len());
        None
    };

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["city_id", "gdp_per_capita", "gdp_class", "first_year", "years", "mean_pct", "cagr_pct", "break_class"])
        .map_err(csv_err)?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (t, c) in trends.iter().zip(&panel) {
        let class = match (&breaks, t.trend.mean_pct) {
            (Some(b), Some(m)) => b.class_of(m).to_string(),
            _ => String::new(),
        };
        w.write_record([
            t.city_id.as_str(),
            &c.gdp_per_capita.to_string(),
            t.class.code(),
            &t.trend.first_year.to_string(),
            &c.emissions.len().to_string(),
            &fmt(t.trend.mean_pct),
            &fmt(t.trend.cagr_pct),
            &class,
        ])
        .map_err(csv_err)?;
    }
    let body = w.into_inner().map_err(|e| Failure::Validation(e.to_string()))?;
    emit(out_dir, "analysis_trends.csv", &body)?;

    let comparison = analysis::compare_groups(&trends, years.len());
    let summary = serde_json::json!({
        "threshold": threshold,
        "comparison": comparison,
        "breaks": breaks.as_ref().map(|b| &b.breaks),
        "degenerate": breaks.as_ref().map(|b| b.degenerate),
    });
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Failure::Validation(e.to_string()))? + "\n";
    emit(out_dir, "analysis_groups.json", text.as_bytes())?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Failure {
    Failure::Validation(e.to_string())
}

fn diff(before: &Path, after: &Path, threshold: Option<f64>, config: Option<&Path>, out_dir: Option<&Path>) -> Outcome {
    let threshold = match (threshold, config) {
        (Some(t), _) => t,
        (None, Some(c)) => RunConfig::load(c)?.change_threshold,
        (None, None) => 0.01,
    };
    let report = pipeline::diff(&read_records(before)?, &read_records(after)?, threshold);
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    emit(out_dir, "changes.csv", &buf)?;
    info!("{} key(s) moved by more than {threshold}", report.changes.len());
    Ok(())
}
