//! Command-line front end.
//!
//! Every subcommand reads and writes plain files so the stages can be chained:
//! `simulate` → `map-keywords` → `train` → `evaluate` / `predict` → `serve`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::catalog::{keyword_set, parse_ad_catalog, write_ad_catalog, Placement};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, export_cost_trace, report_from_pairs, write_trace_csv, EvaluationReport};
use crate::features::{encode_size, SizeRegistry};
use crate::fixtures::parse_pairs;
use crate::keywords::{
    build_keyword_map, count_cooccurrences, resolve_page_value, transactions_from_events, KeywordMap, ResolveMode,
};
use crate::logs::{
    aggregate_events, looks_like_training_table, parse_event_log, parse_training_table, write_event_log,
    EventLogWriter, TrainingRow,
};
use crate::regression::{cost, load_model, predict, save_model, train, Method, RegressionModel, TrainingConfig};
use crate::server::http::{self, AppState};
use crate::server::{ServeMode, ServingPaths};
use crate::simulate::{simulate, SimConfig};

#[derive(Debug, Parser)]
#[command(name = "ctrf", version, about = "Contextual ad selection with a linear CTR model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a keyword-to-value map from the page keywords in an event log.
    MapKeywords(MapKeywordsArgs),
    /// Fit a CTR model from a training table or an event log.
    Train(TrainArgs),
    /// Predict the CTR of one feature vector.
    Predict(PredictArgs),
    /// Score a model on held-out rows, or score recorded (y, y_pred) pairs.
    Evaluate(EvaluateArgs),
    /// Run the HTTP ad server.
    Serve(ServeArgs),
    /// Generate synthetic events, a catalog and a keyword map.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct MapKeywordsArgs {
    /// Event log (CSV).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "sports")]
    pub category: String,
    /// Number of clusters.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Output JSON; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Gd,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Bid,
    Ctr,
}

impl From<ModeArg> for ServeMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Bid => ServeMode::Bid,
            ModeArg::Ctr => ServeMode::Ctr,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training table (`placement,size,bid,keyword_value,ctr`) or event log.
    #[arg(long)]
    pub data: PathBuf,
    /// Ad catalog, required for event logs.
    #[arg(long, env = "CTRF_ADS")]
    pub ads: Option<PathBuf>,
    /// Keyword map, required for event logs.
    #[arg(long, env = "CTRF_MAP")]
    pub map: Option<PathBuf>,
    /// Size registry JSON (array of labels); the built-in registry otherwise.
    #[arg(long)]
    pub sizes: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "gd")]
    pub method: MethodArg,
    #[arg(long, default_value_t = 0.01)]
    pub alpha: f64,
    #[arg(long, default_value_t = 400)]
    pub iters: usize,
    /// Stop gradient descent once the cost improves by less than this.
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub no_intercept: bool,
    /// Standardize features (default for gradient descent).
    #[arg(long, conflicts_with = "no_scaling")]
    pub scaling: bool,
    /// Train on raw features (default for the normal equation).
    #[arg(long)]
    pub no_scaling: bool,
    /// Treat page keywords missing from the map as an error instead of falling back.
    #[arg(long)]
    pub strict_keywords: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Write the cost trace as CSV (gradient descent only).
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long, env = "CTRF_MODEL")]
    pub model: PathBuf,
    /// `above_fold`/`below_fold` or 1/0.
    #[arg(long)]
    pub placement: Placement,
    /// Size label, e.g. 300x250.
    #[arg(long)]
    pub size: String,
    #[arg(long)]
    pub bid: f64,
    /// Numeric keyword value.
    #[arg(long, required_unless_present = "page_keywords", conflicts_with = "page_keywords")]
    pub keyword: Option<f64>,
    /// Comma-separated page keywords, resolved through `--map`.
    #[arg(long, requires = "map", value_delimiter = ',')]
    pub page_keywords: Option<Vec<String>>,
    #[arg(long, env = "CTRF_MAP")]
    pub map: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, env = "CTRF_MODEL", required_unless_present = "pairs")]
    pub model: Option<PathBuf>,
    /// Validation rows in training-table format.
    #[arg(long, required_unless_present = "pairs", conflicts_with = "pairs")]
    pub data: Option<PathBuf>,
    /// Recorded `y,y_pred` pairs; no model needed.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Write the full report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "CTRF_ADS")]
    pub ads: PathBuf,
    #[arg(long, env = "CTRF_MODEL")]
    pub model: PathBuf,
    #[arg(long, env = "CTRF_MAP")]
    pub map: PathBuf,
    #[arg(long, env = "CTRF_HOST", default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, env = "CTRF_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, value_enum, default_value = "ctr")]
    pub mode: ModeArg,
    /// Append `/event` posts to this event log; `/event` is disabled otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, env = "CTRF_SEED", default_value_t = 7)]
    pub seed: u64,
    /// Number of impressions.
    #[arg(long, default_value_t = 10_000)]
    pub count: usize,
    /// Number of distinct pages.
    #[arg(long, default_value_t = 500)]
    pub pages: usize,
    #[arg(long, default_value = "sports")]
    pub category: String,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Event log output.
    #[arg(long)]
    pub out: PathBuf,
    /// Catalog output.
    #[arg(long)]
    pub ads: Option<PathBuf>,
    /// Keyword map output (not written for zero events).
    #[arg(long)]
    pub map: Option<PathBuf>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn load_registry(path: Option<&Path>) -> Result<SizeRegistry> {
    match path {
        Some(p) => SizeRegistry::from_json(File::open(p)?),
        None => Ok(SizeRegistry::default()),
    }
}

fn load_map(path: &Path) -> Result<KeywordMap> {
    KeywordMap::load(File::open(path)?)
}

/// Runs one command, writing human-readable output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::MapKeywords(a) => map_keywords(a, out),
        Command::Train(a) => train_cmd(a, out),
        Command::Predict(a) => predict_cmd(a, out),
        Command::Evaluate(a) => evaluate_cmd(a, out),
        Command::Serve(a) => serve_cmd(a, out),
        Command::Simulate(a) => simulate_cmd(a, out),
    }
}

fn map_keywords(a: MapKeywordsArgs, out: &mut dyn Write) -> Result<()> {
    let events = parse_event_log(File::open(&a.data)?)?;
    let tx = transactions_from_events(&events, &a.category);
    let stats = count_cooccurrences(&tx, &a.category)?;
    let map = build_keyword_map(&stats, a.k)?;
    match &a.out {
        Some(p) => {
            map.save(create(p)?)?;
            writeln!(out, "keyword map: {} keywords, {} clusters", map.values.len(), map.centroids.len())?;
            for (c, n) in map.cluster_sizes() {
                writeln!(out, "  {c}: {n}")?;
            }
            writeln!(out, "reference: {}", map.reference())?;
        }
        None => writeln!(out, "{}", map.to_json()?)?,
    }
    Ok(())
}

fn training_rows(a: &TrainArgs, registry: &SizeRegistry) -> Result<(Vec<TrainingRow>, Option<KeywordMap>)> {
    let text = fs::read_to_string(&a.data)?;
    if looks_like_training_table(&text) {
        let map = a.map.as_deref().map(load_map).transpose()?;
        return Ok((parse_training_table(text.as_bytes())?, map));
    }
    let (Some(ads), Some(map_path)) = (&a.ads, &a.map) else {
        return Err(Error::Validation(
            "an event log needs --ads and --map to build training rows".into(),
        ));
    };
    let events = parse_event_log(text.as_bytes())?;
    let catalog = parse_ad_catalog(File::open(ads)?, registry)?;
    let map = load_map(map_path)?;
    let mode = if a.strict_keywords {
        ResolveMode::Strict
    } else {
        ResolveMode::Fallback
    };
    let rows = aggregate_events(&events, &map, registry, &catalog, mode)?
        .into_iter()
        .map(|g| g.row)
        .collect();
    Ok((rows, Some(map)))
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let registry = load_registry(a.sizes.as_deref())?;
    let (rows, map) = training_rows(&a, &registry)?;
    let method = match a.method {
        MethodArg::Gd => Method::GradientDescent,
        MethodArg::Normal => Method::NormalEquation,
    };
    let mut config = TrainingConfig::for_method(method);
    config.alpha = a.alpha;
    config.iterations = a.iters;
    config.tolerance = a.tolerance;
    config.include_intercept = !a.no_intercept;
    if a.scaling {
        config.scale_features = true;
    }
    if a.no_scaling {
        config.scale_features = false;
    }
    let model = train(&rows, map.as_ref(), &registry, &config)?;
    save_model(&model, create(&a.out)?)?;
    if let Some(trace) = &a.trace {
        write_trace_csv(&export_cost_trace(&model)?, create(trace)?)?;
    }
    report_model(&model, &rows, out)
}

fn report_model(model: &RegressionModel, rows: &[TrainingRow], out: &mut dyn Write) -> Result<()> {
    let method = match model.method() {
        Method::GradientDescent => "gradient_descent",
        Method::NormalEquation => "normal_equation",
    };
    writeln!(out, "method: {method}")?;
    writeln!(out, "rows: {}", rows.len())?;
    let theta: Vec<String> = model.theta.iter().map(|t| format!("{t:.6}")).collect();
    writeln!(out, "theta: [{}]", theta.join(", "))?;
    match model.cost_trace.last() {
        Some(c) => writeln!(out, "final cost: {c:e}")?,
        None => {
            let schema = &model.schema;
            let mut raw = crate::features::build_design_matrix(rows, schema)?;
            if let Some(s) = &model.scaler {
                raw = crate::features::transform(s, &raw)?;
            }
            writeln!(out, "cost: {:e}", cost(&model.theta, &raw)?)?;
        }
    }
    Ok(())
}

fn predict_cmd(a: PredictArgs, out: &mut dyn Write) -> Result<()> {
    let model = load_model(File::open(&a.model)?)?;
    let size = encode_size(&a.size, &model.schema.size_registry)?;
    let keyword = match (a.keyword, &a.page_keywords, &a.map) {
        (Some(v), _, _) => v,
        (None, Some(words), Some(map)) => {
            resolve_page_value(&load_map(map)?, &keyword_set(words), ResolveMode::Strict)?
        }
        _ => return Err(Error::Validation("need --keyword or --page-keywords with --map".into())),
    };
    let p = predict(&model, &[f64::from(a.placement.code()), f64::from(size), a.bid, keyword])?;
    writeln!(out, "{p}")?;
    Ok(())
}

fn write_report(report: &EvaluationReport, path: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "n: {}", report.n)?;
    writeln!(out, "se: {}", report.se)?;
    writeln!(out, "sse: {}", report.sse)?;
    match report.r_squared {
        Some(r) => writeln!(out, "r_squared: {r}")?,
        None => writeln!(out, "r_squared: undefined (constant observations)")?,
    }
    if let Some(p) = path {
        let mut w = create(p)?;
        w.write_all(report.to_json()?.as_bytes())?;
        w.flush()?;
    }
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let report = match (&a.pairs, &a.model, &a.data) {
        (Some(p), _, _) => {
            let (y, yp) = parse_pairs(&fs::read_to_string(p)?)?;
            report_from_pairs(&y, &yp)?
        }
        (None, Some(m), Some(d)) => {
            let model = load_model(File::open(m)?)?;
            evaluate(&model, &parse_training_table(File::open(d)?)?)?
        }
        _ => return Err(Error::Validation("need --pairs, or --model with --data".into())),
    };
    write_report(&report, a.out.as_deref(), out)
}

fn serve_cmd(a: ServeArgs, out: &mut dyn Write) -> Result<()> {
    let paths = ServingPaths {
        ads: a.ads,
        model: a.model,
        map: a.map,
    };
    let mut app = AppState::from_paths(paths, a.mode.into())?;
    if let Some(log) = &a.out {
        app = app.with_event_log(EventLogWriter::open(log)?);
    }
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| Error::Validation(format!("bad listen address: {e}")))?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        writeln!(out, "listening on {}", listener.local_addr()?)?;
        out.flush()?;
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
            log::info!("shutting down");
        };
        http::run(listener, app, shutdown).await?;
        Ok(())
    })
}

fn simulate_cmd(a: SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let config = SimConfig {
        seed: a.seed,
        events: a.count,
        pages: a.pages,
        category: a.category,
        k: a.k,
        ..SimConfig::default()
    };
    let sim = simulate(&config)?;
    let mut w = create(&a.out)?;
    write_event_log(&sim.events, &mut w)?;
    w.flush()?;
    if let Some(p) = &a.ads {
        write_ad_catalog(&sim.catalog, create(p)?)?;
    }
    if let (Some(p), Some(map)) = (&a.map, &sim.map) {
        map.save(create(p)?)?;
    }
    let clicks = sim.events.iter().filter(|e| e.clicked).count();
    writeln!(out, "events: {} ({} clicks)", sim.events.len(), clicks)?;
    writeln!(out, "ads: {}", sim.catalog.len())?;
    if let Some(map) = &sim.map {
        writeln!(out, "centroids: {}", map.centroids.join(", "))?;
    }
    Ok(())
}
