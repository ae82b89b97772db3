use std::fs;
use std::io::BufReader;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nearby_exposure::audit::{
    choose_attention, classify_ledger, popularity_lookup, render_report, run_audit, AuditConfig, AuditError, ErrorKind,
    Platform, RatingMode, ScenarioSet, Stage,
};
use nearby_exposure::bias::{bias_measures, exposure_from_log, measures_json, relevance_scores, write_ledger, RelevanceMode};
use nearby_exposure::geo::{GeoPoint, Kilometers};
use nearby_exposure::ingest::{dedup_checkins, load_businesses, load_checkins, load_click_log, load_landmarks, LoadMode};
use nearby_exposure::queries::{
    build_location_queries, cluster_radii, kmeans, load_queries, popularity_scores, write_queries, KMeansParams,
};
use nearby_exposure::simulate::{
    load_searchlog, rank_distance_profile, run_campaign, write_profile, write_searchlog, SearchLog, SearchParams,
    DEFAULT_RADIUS_KM,
};

/// Audit position bias in "search nearby" rankings.
#[derive(Parser)]
#[command(name = "nearby-exposure", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster check-ins into location queries (writes queries.csv).
    Cluster(ClusterArgs),
    /// Attach check-in popularity to a query set (writes queries.csv).
    Popularity(PopularityArgs),
    /// Rank businesses by distance for every query (writes searchlog.jsonl, profile.csv).
    Simulate(SimulateArgs),
    /// Fit the geometric attention parameter to a click log.
    FitAttention(FitArgs),
    /// Exposure ledger and bias measures for a search log.
    Exposure(ExposureArgs),
    /// Full pipeline from raw inputs to the disparity table.
    Audit(AuditArgs),
    /// Print a summary of an audit output directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    checkins: PathBuf,
    #[arg(long)]
    landmarks: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-3)]
    tol_km: f64,
    #[arg(long)]
    lenient: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PopularityArgs {
    #[arg(long)]
    checkins: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    lenient: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    businesses: PathBuf,
    #[arg(long, default_value = "yelp")]
    platform: Platform,
    /// Results per search; defaults to the platform's first-page size.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_RADIUS_KM, conflicts_with = "no_radius")]
    radius_km: f64,
    /// Rank the whole catalog regardless of distance.
    #[arg(long)]
    no_radius: bool,
    #[arg(long)]
    lenient: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    clicks: PathBuf,
    #[arg(long, default_value = "yelp")]
    platform: Platform,
    #[arg(long)]
    kappa: Option<usize>,
}

#[derive(Args)]
struct ExposureArgs {
    #[arg(long)]
    businesses: PathBuf,
    #[arg(long)]
    searchlog: PathBuf,
    /// Query set with popularity, required for the weighted scenario.
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long, default_value = "yelp")]
    platform: Platform,
    #[arg(long)]
    kappa: Option<usize>,
    #[arg(long, conflicts_with = "clicks")]
    p: Option<f64>,
    #[arg(long)]
    clicks: Option<PathBuf>,
    #[arg(long, default_value = "uniform")]
    scenario: ScenarioSet,
    #[arg(long, default_value = "per-query-simplex")]
    relevance_mode: RelevanceMode,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AuditArgs {
    /// JSON config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkins: Option<PathBuf>,
    #[arg(long)]
    landmarks: Option<PathBuf>,
    #[arg(long)]
    businesses: Option<PathBuf>,
    #[arg(long)]
    clicks: Option<PathBuf>,
    #[arg(long)]
    rankings: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    platform: Option<Platform>,
    #[arg(long)]
    kappa: Option<usize>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, conflicts_with = "no_radius")]
    radius_km: Option<f64>,
    #[arg(long)]
    no_radius: bool,
    #[arg(long)]
    scenario: Option<ScenarioSet>,
    #[arg(long)]
    rating_mode: Option<RatingMode>,
    #[arg(long)]
    relevance_mode: Option<RelevanceMode>,
    #[arg(long)]
    lenient: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    out: PathBuf,
}

fn open(path: &Path, stage: Stage) -> Result<BufReader<fs::File>, AuditError> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| AuditError::data(stage, format!("cannot open {}: {e}", path.display())))
}

fn data<E: std::fmt::Display>(stage: Stage) -> impl Fn(E) -> AuditError {
    move |e| AuditError::data(stage, e)
}

fn load_mode(lenient: bool) -> LoadMode {
    if lenient {
        LoadMode::Lenient
    } else {
        LoadMode::FailFast
    }
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), AuditError> {
    fs::create_dir_all(dir).map_err(data(Stage::Write))?;
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| AuditError::data(Stage::Write, format!("{}: {e}", path.display())))
}

fn csv_buf(f: impl FnOnce(&mut Vec<u8>) -> Result<(), csv::Error>) -> Result<Vec<u8>, AuditError> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| AuditError::new(Stage::Write, ErrorKind::Invariant, e))?;
    Ok(buf)
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json value"));
}

fn checkin_points(path: &Path, lenient: bool) -> Result<Vec<GeoPoint>, AuditError> {
    let loaded = load_checkins(open(path, Stage::Ingest)?, load_mode(lenient)).map_err(data(Stage::Ingest))?;
    Ok(dedup_checkins(&loaded.records).iter().map(|c| c.point).collect())
}

fn cluster(args: ClusterArgs) -> Result<(), AuditError> {
    let points = checkin_points(&args.checkins, args.lenient)?;
    let landmarks = match &args.landmarks {
        Some(p) => {
            load_landmarks(open(p, Stage::Ingest)?, load_mode(args.lenient))
                .map_err(data(Stage::Ingest))?
                .records
        }
        None => Vec::new(),
    };
    let params = KMeansParams {
        k: args.k,
        seed: args.seed,
        max_iter: args.max_iter,
        tol_km: args.tol_km,
    };
    let model = kmeans(&points, &params).map_err(data(Stage::Cluster))?;
    let radii = cluster_radii(&model, &points).map_err(data(Stage::Cluster))?;
    let queries = build_location_queries(&model.centroids, &landmarks);
    write_file(&args.out, "queries.csv", &csv_buf(|b| write_queries(&queries, b))?)?;
    print_json(&serde_json::json!({
        "clusters": model.k(),
        "iterations": model.iterations,
        "inertia": model.inertia,
        "mean_radius_km": radii.mean_radius.value(),
        "queries": queries.len(),
    }));
    Ok(())
}

fn popularity(args: PopularityArgs) -> Result<(), AuditError> {
    let points = checkin_points(&args.checkins, args.lenient)?;
    let mut queries = load_queries(open(&args.queries, Stage::Ingest)?).map_err(data(Stage::Ingest))?;
    let map = popularity_scores(&points, &queries).map_err(data(Stage::Popularity))?;
    map.apply(&mut queries);
    write_file(&args.out, "queries.csv", &csv_buf(|b| write_queries(&queries, b))?)?;
    print_json(&serde_json::json!({
        "checkins": map.total_checkins(),
        "queries": queries.len(),
    }));
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<(), AuditError> {
    let queries = load_queries(open(&args.queries, Stage::Ingest)?).map_err(data(Stage::Ingest))?;
    let (catalog, _) =
        load_businesses(open(&args.businesses, Stage::Ingest)?, load_mode(args.lenient)).map_err(data(Stage::Ingest))?;
    let limit = NonZeroUsize::new(args.limit.unwrap_or_else(|| args.platform.kappa()))
        .ok_or_else(|| AuditError::config(Stage::Config, "limit must be at least 1"))?;
    let radius_cutoff = if args.no_radius {
        None
    } else {
        Some(Kilometers::new(args.radius_km).map_err(|e| AuditError::config(Stage::Config, e))?)
    };
    let params = SearchParams { limit, radius_cutoff };
    let log = run_campaign(&queries, &catalog, &params, nearby_exposure::simulate::Scenario::Uniform)
        .map_err(data(Stage::Simulate))?;
    let profile = rank_distance_profile(&log).map_err(data(Stage::Simulate))?;
    let mut searchlog = Vec::new();
    write_searchlog(&log, &mut searchlog).map_err(data(Stage::Write))?;
    write_file(&args.out, "searchlog.jsonl", &searchlog)?;
    write_file(&args.out, "profile.csv", &csv_buf(|b| write_profile(&profile, b))?)?;
    print_json(&serde_json::json!({ "searches": log.len(), "limit": limit.get() }));
    Ok(())
}

fn fit(args: FitArgs) -> Result<(), AuditError> {
    let clicks = load_click_log(open(&args.clicks, Stage::Ingest)?, LoadMode::FailFast).map_err(data(Stage::Ingest))?;
    let kappa = args.kappa.unwrap_or_else(|| args.platform.kappa());
    let (model, _) = choose_attention(Some(&clicks.records), kappa, None)?;
    print_json(&serde_json::json!({
        "p": model.p(),
        "kappa": model.kappa(),
        "weights": model.weights(),
    }));
    Ok(())
}

fn exposure(args: ExposureArgs) -> Result<(), AuditError> {
    let (catalog, _) =
        load_businesses(open(&args.businesses, Stage::Ingest)?, LoadMode::FailFast).map_err(data(Stage::Ingest))?;
    let results = load_searchlog(open(&args.searchlog, Stage::Ingest)?).map_err(data(Stage::Ingest))?;
    let popularity = match &args.queries {
        Some(p) => popularity_lookup(&load_queries(open(p, Stage::Ingest)?).map_err(data(Stage::Ingest))?),
        None => Default::default(),
    };
    let clicks = match &args.clicks {
        Some(p) => Some(
            load_click_log(open(p, Stage::Ingest)?, LoadMode::FailFast)
                .map_err(data(Stage::Ingest))?
                .records,
        ),
        None => None,
    };
    let kappa = args.kappa.unwrap_or_else(|| args.platform.kappa());
    let (attention, _) = choose_attention(clicks.as_deref(), kappa, args.p)?;
    let relevance = relevance_scores(&catalog, args.relevance_mode);
    let scenarios = args.scenario.scenarios();
    let mut report = serde_json::Map::new();
    for &scenario in &scenarios {
        let log = SearchLog::with_scenario(results.clone(), scenario, &popularity).map_err(data(Stage::Exposure))?;
        let ledger = exposure_from_log(&log, &attention, &relevance).map_err(data(Stage::Exposure))?;
        let measures = bias_measures(&ledger);
        let (_, classes) = classify_ledger(&ledger)?;
        let (ledger_name, measures_name) = if scenarios.len() == 1 {
            ("ledger.csv".to_string(), "measures.json".to_string())
        } else {
            (format!("ledger_{scenario}.csv"), format!("measures_{scenario}.json"))
        };
        write_file(&args.out, &ledger_name, &csv_buf(|b| write_ledger(&ledger, b))?)?;
        write_file(&args.out, &measures_name, measures_json(&measures).as_bytes())?;
        report.insert(
            scenario.to_string(),
            serde_json::json!({ "measures": measures, "degenerate_exposure": classes.degenerate }),
        );
    }
    print_json(&serde_json::Value::Object(report));
    Ok(())
}

fn audit(args: AuditArgs) -> Result<(), AuditError> {
    let mut config = match &args.config {
        Some(path) => AuditConfig::from_file(path)?,
        None => AuditConfig::default(),
    };
    let paths = [
        (args.checkins, &mut config.checkins),
        (args.landmarks, &mut config.landmarks),
        (args.businesses, &mut config.businesses),
        (args.clicks, &mut config.clicks),
        (args.rankings, &mut config.rankings),
    ];
    for (flag, field) in paths {
        if flag.is_some() {
            *field = flag;
        }
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.k {
        config.k = v;
    }
    if let Some(v) = args.platform {
        config.platform = v;
    }
    if args.kappa.is_some() {
        config.kappa = args.kappa;
    }
    if args.p.is_some() {
        config.p = args.p;
    }
    if args.limit.is_some() {
        config.limit = args.limit;
    }
    if args.no_radius {
        config.radius_km = None;
    } else if args.radius_km.is_some() {
        config.radius_km = args.radius_km;
    }
    if let Some(v) = args.scenario {
        config.scenario = v;
    }
    if args.rating_mode.is_some() {
        config.rating_mode = args.rating_mode;
    }
    if let Some(v) = args.relevance_mode {
        config.relevance_mode = v;
    }
    config.lenient |= args.lenient;
    if let Some(out) = args.out {
        config.out = out;
    }

    let report = run_audit(&config)?;
    for w in &report.summary.warnings {
        eprintln!("warning: {w}");
    }
    for f in &report.files {
        println!("{}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Cluster(a) => cluster(a),
        Command::Popularity(a) => popularity(a),
        Command::Simulate(a) => simulate(a),
        Command::FitAttention(a) => fit(a),
        Command::Exposure(a) => exposure(a),
        Command::Audit(a) => audit(a),
        Command::Report(a) => render_report(&a.out).map(|text| print!("{text}")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
