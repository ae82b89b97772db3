//! Rating-vs-exposure disparity analysis and the end-to-end audit pipeline.
//!
//! Businesses are split into high/low exposure (top/bottom quartile of mean
//! exposure) and high/low rating, and each rating group reports how much of
//! it lands in each exposure class, once with every query weighted equally
//! and once weighted by query popularity.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, BufReader, Write};
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bias::{
    bias_measures, exposure_from_log, fit_attention, measures_json, relevance_scores, write_ledger, BiasMeasures,
    ExposureLedger, GeometricAttention, RelevanceMode, DEFAULT_P,
};
use crate::geo::{GeoPoint, Kilometers};
use crate::ingest::{
    dedup_checkins, load_businesses, load_checkins, load_click_log, load_landmarks, load_ranked_results,
    ClickLogRecord, IngestError, LandmarkRecord, LoadMode,
};
use crate::queries::{build_location_queries, cluster_radii, kmeans, popularity_scores, write_queries, KMeansParams};
use crate::simulate::{
    rank_distance_profile, run_campaign, write_profile, write_searchlog, Catalog, RankedList, Scenario, SearchLog,
    SearchParams, DEFAULT_RADIUS_KM,
};

/// Mean rating at or above which a business counts as highly rated on
/// five-point scales.
pub const HIGH_RATING_THRESHOLD: f64 = 4.0;

pub const DISPARITY_HEADER: &[&str] = &["scenario", "rating_class", "LE_pct", "HE_pct", "Mid_pct", "n"];

pub const OUTPUT_FILES: &[&str] = &[
    "queries.csv",
    "searchlog.jsonl",
    "profile.csv",
    "ledger.csv",
    "measures.json",
    "disparity.csv",
    "scatter_rating_exposure.csv",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExposureClass {
    #[serde(rename = "HE")]
    High,
    #[serde(rename = "LE")]
    Low,
    Mid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RatingClass {
    High,
    Low,
}

impl RatingClass {
    pub fn as_str(self) -> &'static str {
        match self {
            RatingClass::High => "High",
            RatingClass::Low => "Low",
        }
    }
}

impl fmt::Display for RatingClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RatingMode {
    /// High at or above [`HIGH_RATING_THRESHOLD`]; five-point scales only.
    #[default]
    Threshold,
    /// High/low are the top/bottom rating quartiles; the middle is excluded.
    Percentile,
}

impl FromStr for RatingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "threshold" => Ok(RatingMode::Threshold),
            "percentile" => Ok(RatingMode::Percentile),
            other => Err(format!("unknown rating mode `{other}` (expected threshold or percentile)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ErrorKind {
    Config,
    Data,
    Invariant,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 1,
            ErrorKind::Data => 2,
            ErrorKind::Invariant => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Config,
    Ingest,
    Cluster,
    Popularity,
    Simulate,
    Attention,
    Exposure,
    Classify,
    Disparity,
    Write,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Cluster => "cluster",
            Stage::Popularity => "popularity",
            Stage::Simulate => "simulate",
            Stage::Attention => "attention",
            Stage::Exposure => "exposure",
            Stage::Classify => "classify",
            Stage::Disparity => "disparity",
            Stage::Write => "write",
            Stage::Report => "report",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{stage} stage failed: {message}")]
pub struct AuditError {
    pub stage: Stage,
    pub kind: ErrorKind,
    pub message: String,
}

impl AuditError {
    pub fn new(stage: Stage, kind: ErrorKind, message: impl fmt::Display) -> Self {
        Self {
            stage,
            kind,
            message: message.to_string(),
        }
    }

    pub fn config(stage: Stage, message: impl fmt::Display) -> Self {
        Self::new(stage, ErrorKind::Config, message)
    }

    pub fn data(stage: Stage, message: impl fmt::Display) -> Self {
        Self::new(stage, ErrorKind::Data, message)
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

/// Classes plus the quartile boundaries that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureClassification {
    pub classes: Vec<ExposureClass>,
    pub p25: f64,
    pub p75: f64,
    /// The two boundaries coincide, so some scores sit in both tails; those
    /// are classed HE.
    pub degenerate: bool,
}

/// Lower and upper quartile boundaries by nearest rank: with
/// `m = ceil(n / 4)`, the lower boundary is the `m`-th smallest value and the
/// upper boundary the `m`-th largest. `sorted` must be ascending and
/// non-empty.
pub fn quartile_bounds(sorted: &[f64]) -> (f64, f64) {
    let n = sorted.len();
    let m = n.div_ceil(4);
    (sorted[m - 1], sorted[n - m])
}

fn sorted_finite(values: &[f64], stage: Stage) -> Result<Vec<f64>, AuditError> {
    if values.is_empty() {
        return Err(AuditError::data(stage, "nothing to classify"));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(AuditError::new(stage, ErrorKind::Invariant, format!("non-finite score {v}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted)
}

/// HE for scores at or above the upper quartile boundary, LE at or below the
/// lower one, Mid otherwise. HE wins when a score is in both tails.
pub fn classify_exposure(scores: &[f64]) -> Result<ExposureClassification, AuditError> {
    let sorted = sorted_finite(scores, Stage::Classify)?;
    let (p25, p75) = quartile_bounds(&sorted);
    let classes = scores
        .iter()
        .map(|&s| {
            if s >= p75 {
                ExposureClass::High
            } else if s <= p25 {
                ExposureClass::Low
            } else {
                ExposureClass::Mid
            }
        })
        .collect();
    Ok(ExposureClassification {
        classes,
        p25,
        p75,
        degenerate: p25 >= p75,
    })
}

/// Rating class per business id, in catalog order; `None` for businesses
/// outside both groups (the middle half in percentile mode).
pub fn classify_rating(catalog: &Catalog, mode: RatingMode) -> Result<IndexMap<String, Option<RatingClass>>, AuditError> {
    if catalog.is_empty() {
        return Err(AuditError::data(Stage::Classify, "catalog is empty"));
    }
    match mode {
        RatingMode::Threshold => {
            if let Some(b) = catalog.businesses().iter().find(|b| b.rating_scale_max != 5.0) {
                return Err(AuditError::config(
                    Stage::Classify,
                    format!(
                        "threshold rating mode needs five-point ratings but `{}` is rated out of {}; use percentile mode",
                        b.id, b.rating_scale_max
                    ),
                ));
            }
            Ok(catalog
                .businesses()
                .iter()
                .map(|b| {
                    let class = if b.mean_rating >= HIGH_RATING_THRESHOLD {
                        RatingClass::High
                    } else {
                        RatingClass::Low
                    };
                    (b.id.clone(), Some(class))
                })
                .collect())
        }
        RatingMode::Percentile => {
            let ratings: Vec<f64> = catalog.businesses().iter().map(|b| b.normalized_rating()).collect();
            let sorted = sorted_finite(&ratings, Stage::Classify)?;
            let (low, high) = quartile_bounds(&sorted);
            Ok(catalog
                .businesses()
                .iter()
                .zip(ratings)
                .map(|(b, r)| {
                    let class = if r >= high {
                        Some(RatingClass::High)
                    } else if r <= low {
                        Some(RatingClass::Low)
                    } else {
                        None
                    };
                    (b.id.clone(), class)
                })
                .collect())
        }
    }
}

/// Exposure classes keyed by business id, from a ledger's mean exposure.
pub fn classify_ledger(ledger: &ExposureLedger) -> Result<(IndexMap<String, ExposureClass>, ExposureClassification), AuditError> {
    let scores: Vec<f64> = ledger.rows.iter().map(|r| r.e_mean).collect();
    let classification = classify_exposure(&scores)?;
    let map = ledger
        .rows
        .iter()
        .zip(&classification.classes)
        .map(|(r, &c)| (r.business_id.clone(), c))
        .collect();
    Ok((map, classification))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisparityRow {
    pub scenario: Scenario,
    pub rating_class: RatingClass,
    /// `None` when the rating group is empty.
    pub le_pct: Option<f64>,
    pub he_pct: Option<f64>,
    pub mid_pct: Option<f64>,
    pub n: usize,
}

impl DisparityRow {
    /// The cell that signals disparity for this row: LE for highly rated
    /// businesses, HE for poorly rated ones.
    pub fn flagged_pct(&self) -> Option<f64> {
        match self.rating_class {
            RatingClass::High => self.le_pct,
            RatingClass::Low => self.he_pct,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisparityTable {
    pub rows: Vec<DisparityRow>,
}

impl DisparityTable {
    pub fn row(&self, scenario: Scenario, rating_class: RatingClass) -> Option<&DisparityRow> {
        self.rows
            .iter()
            .find(|r| r.scenario == scenario && r.rating_class == rating_class)
    }
}

/// Share of each rating group in each exposure class, per scenario. Rows come
/// in scenario order, Low before High.
pub fn disparity_table(
    ratings: &IndexMap<String, Option<RatingClass>>,
    exposures: &[(Scenario, &IndexMap<String, ExposureClass>)],
) -> Result<DisparityTable, AuditError> {
    let universe: HashSet<&String> = ratings.keys().collect();
    let mut rows = Vec::new();
    for &(scenario, classes) in exposures {
        let other: HashSet<&String> = classes.keys().collect();
        if other != universe {
            return Err(AuditError::new(
                Stage::Disparity,
                ErrorKind::Invariant,
                format!("{scenario} exposure classes cover a different set of businesses than the ratings"),
            ));
        }
        for group in [RatingClass::Low, RatingClass::High] {
            let (mut le, mut he, mut mid) = (0usize, 0usize, 0usize);
            for (id, class) in ratings {
                if *class != Some(group) {
                    continue;
                }
                match classes[id] {
                    ExposureClass::Low => le += 1,
                    ExposureClass::High => he += 1,
                    ExposureClass::Mid => mid += 1,
                }
            }
            let n = le + he + mid;
            let pct = |c: usize| (n > 0).then(|| 100.0 * c as f64 / n as f64);
            rows.push(DisparityRow {
                scenario,
                rating_class: group,
                le_pct: pct(le),
                he_pct: pct(he),
                mid_pct: pct(mid),
                n,
            });
        }
    }
    Ok(DisparityTable { rows })
}

fn fmt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |p| p.to_string())
}

pub fn write_disparity<W: Write>(table: &DisparityTable, sink: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(DISPARITY_HEADER)?;
    for r in &table.rows {
        w.write_record([
            r.scenario.to_string(),
            r.rating_class.to_string(),
            fmt_pct(r.le_pct),
            fmt_pct(r.he_pct),
            fmt_pct(r.mid_pct),
            r.n.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_disparity<R: io::Read>(source: R) -> Result<DisparityTable, AuditError> {
    let bad = |m: String| AuditError::data(Stage::Report, m);
    let mut reader = csv::Reader::from_reader(source);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != DISPARITY_HEADER {
        return Err(bad(format!("unexpected disparity header `{}`", header.join(","))));
    }
    let pct = |s: &str| -> Result<Option<f64>, AuditError> {
        if s == "NA" {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| bad(format!("bad percentage `{s}`")))
        }
    };
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        rows.push(DisparityRow {
            scenario: rec[0].parse().map_err(bad)?,
            rating_class: match &rec[1] {
                "High" => RatingClass::High,
                "Low" => RatingClass::Low,
                other => return Err(bad(format!("bad rating class `{other}`"))),
            },
            le_pct: pct(&rec[2])?,
            he_pct: pct(&rec[3])?,
            mid_pct: pct(&rec[4])?,
            n: rec[5].parse().map_err(|_| bad(format!("bad count `{}`", &rec[5])))?,
        });
    }
    Ok(DisparityTable { rows })
}

/// Platform defaults: first-page size as attention cutoff and rating mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Platform {
    #[default]
    Yelp,
    Google,
    Booking,
}

impl Platform {
    pub fn kappa(self) -> usize {
        match self {
            Platform::Yelp => 50,
            Platform::Google => 20,
            Platform::Booking => 15,
        }
    }

    pub fn rating_mode(self) -> RatingMode {
        match self {
            Platform::Yelp | Platform::Google => RatingMode::Threshold,
            Platform::Booking => RatingMode::Percentile,
        }
    }
}

impl FromStr for Platform {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "yelp" => Ok(Platform::Yelp),
            "google" => Ok(Platform::Google),
            "booking" => Ok(Platform::Booking),
            other => Err(format!("unknown platform `{other}` (expected yelp, google or booking)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioSet {
    Uniform,
    Weighted,
    #[default]
    Both,
}

impl ScenarioSet {
    pub fn scenarios(self) -> Vec<Scenario> {
        match self {
            ScenarioSet::Uniform => vec![Scenario::Uniform],
            ScenarioSet::Weighted => vec![Scenario::PopularityWeighted],
            ScenarioSet::Both => vec![Scenario::Uniform, Scenario::PopularityWeighted],
        }
    }
}

impl FromStr for ScenarioSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(ScenarioSet::Uniform),
            "weighted" => Ok(ScenarioSet::Weighted),
            "both" => Ok(ScenarioSet::Both),
            other => Err(format!("unknown scenario `{other}` (expected uniform, weighted or both)")),
        }
    }
}

fn default_k() -> usize {
    1000
}
fn default_max_iter() -> usize {
    100
}
fn default_tol_km() -> f64 {
    1e-3
}
fn default_radius() -> Option<f64> {
    Some(DEFAULT_RADIUS_KM)
}
fn default_out() -> PathBuf {
    PathBuf::from("audit-out")
}

/// Everything a full audit run needs. Read from a JSON document; relative
/// paths resolve against the document's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    pub checkins: Option<PathBuf>,
    #[serde(default)]
    pub landmarks: Option<PathBuf>,
    pub businesses: Option<PathBuf>,
    #[serde(default)]
    pub clicks: Option<PathBuf>,
    /// Recorded rankings to audit instead of simulated ones.
    #[serde(default)]
    pub rankings: Option<PathBuf>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol_km")]
    pub tol_km: f64,
    #[serde(default)]
    pub platform: Platform,
    /// Overrides the platform's attention cutoff.
    #[serde(default)]
    pub kappa: Option<usize>,
    /// Fixed attention parameter; ignored when a click log is given.
    #[serde(default)]
    pub p: Option<f64>,
    /// Results per search; defaults to kappa.
    #[serde(default)]
    pub limit: Option<usize>,
    /// Search radius; `null` disables the cutoff.
    #[serde(default = "default_radius")]
    pub radius_km: Option<f64>,
    #[serde(default)]
    pub scenario: ScenarioSet,
    /// Overrides the platform's rating mode.
    #[serde(default)]
    pub rating_mode: Option<RatingMode>,
    #[serde(default)]
    pub relevance_mode: RelevanceMode,
    #[serde(default)]
    pub lenient: bool,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            checkins: None,
            landmarks: None,
            businesses: None,
            clicks: None,
            rankings: None,
            k: default_k(),
            seed: 0,
            max_iter: default_max_iter(),
            tol_km: default_tol_km(),
            platform: Platform::default(),
            kappa: None,
            p: None,
            limit: None,
            radius_km: default_radius(),
            scenario: ScenarioSet::default(),
            rating_mode: None,
            relevance_mode: RelevanceMode::default(),
            lenient: false,
            out: default_out(),
        }
    }
}

impl AuditConfig {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self, AuditError> {
        let mut config: AuditConfig =
            serde_json::from_str(text).map_err(|e| AuditError::config(Stage::Config, format!("invalid config: {e}")))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        for p in [
            &mut config.checkins,
            &mut config.landmarks,
            &mut config.businesses,
            &mut config.clicks,
            &mut config.rankings,
        ]
        .into_iter()
        .flatten()
        {
            resolve(p);
        }
        resolve(&mut config.out);
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self, AuditError> {
        let text = fs::read_to_string(path)
            .map_err(|e| AuditError::config(Stage::Config, format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_json(&text, base)
    }

    pub fn kappa(&self) -> usize {
        self.kappa.unwrap_or_else(|| self.platform.kappa())
    }

    pub fn limit(&self) -> usize {
        self.limit.unwrap_or_else(|| self.kappa())
    }

    pub fn rating_mode(&self) -> RatingMode {
        self.rating_mode.unwrap_or_else(|| self.platform.rating_mode())
    }

    pub fn load_mode(&self) -> LoadMode {
        if self.lenient {
            LoadMode::Lenient
        } else {
            LoadMode::FailFast
        }
    }

    pub fn validate(&self) -> Result<(), AuditError> {
        let err = |m: String| Err(AuditError::config(Stage::Config, m));
        if self.businesses.is_none() {
            return err("no businesses file given".into());
        }
        if self.checkins.is_none() {
            return err("no check-ins file given".into());
        }
        if self.k == 0 {
            return err("k must be at least 1".into());
        }
        if self.kappa() == 0 {
            return err("kappa must be at least 1".into());
        }
        if self.limit() == 0 {
            return err("limit must be at least 1".into());
        }
        if let Some(p) = self.p {
            if !(p > 0.0 && p < 1.0) {
                return err(format!("p = {p} must lie strictly between 0 and 1"));
            }
        }
        if let Some(r) = self.radius_km {
            if !(r.is_finite() && r > 0.0) {
                return err(format!("radius_km = {r} must be positive"));
            }
        }
        if self.tol_km.is_nan() || self.tol_km <= 0.0 {
            return err(format!("tol_km = {} must be positive", self.tol_km));
        }
        Ok(())
    }
}

/// Per-scenario results of an audit.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutcome {
    pub scenario: Scenario,
    pub ledger: ExposureLedger,
    pub measures: BiasMeasures,
    pub exposure: ExposureClassification,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditSummary {
    pub businesses: usize,
    pub checkins: usize,
    pub unique_checkins: usize,
    pub skipped_rows: usize,
    pub clusters: usize,
    pub kmeans_iterations: usize,
    pub mean_cluster_radius_km: f64,
    pub queries: usize,
    pub searches: usize,
    pub recorded_rankings: bool,
    pub kappa: usize,
    pub p: f64,
    pub p_fitted: bool,
    pub limit: usize,
    pub radius_km: Option<f64>,
    pub rating_mode: RatingMode,
    pub relevance_mode: RelevanceMode,
    /// Scenario whose ledger backs `ledger.csv`, `measures.json` and the scatter.
    pub primary_scenario: Scenario,
    pub degenerate_exposure: Vec<Scenario>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub summary: AuditSummary,
    pub outcomes: Vec<ScenarioOutcome>,
    pub disparity: DisparityTable,
    /// Output files in the order they were written.
    pub files: Vec<PathBuf>,
}

fn read_file(path: &Path, stage: Stage) -> Result<BufReader<fs::File>, AuditError> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| AuditError::data(stage, format!("cannot open {}: {e}", path.display())))
}

fn ingest_err(path: &Path) -> impl Fn(IngestError) -> AuditError + '_ {
    move |e| AuditError::data(Stage::Ingest, format!("{}: {e}", path.display()))
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<(), csv::Error>) -> Result<Vec<u8>, AuditError> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| AuditError::new(Stage::Write, ErrorKind::Invariant, e))?;
    Ok(buf)
}

/// Writes all files or none: on failure, files already written are removed.
fn write_outputs(dir: &Path, files: &[(String, Vec<u8>)]) -> Result<Vec<PathBuf>, AuditError> {
    fs::create_dir_all(dir)
        .map_err(|e| AuditError::config(Stage::Write, format!("cannot create {}: {e}", dir.display())))?;
    let mut written = Vec::new();
    for (name, bytes) in files {
        let path = dir.join(name);
        if let Err(e) = fs::write(&path, bytes) {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            return Err(AuditError::data(Stage::Write, format!("cannot write {}: {e}", path.display())));
        }
        written.push(path);
    }
    Ok(written)
}

/// Attention model from a click log if given, else from the configured or
/// default parameter.
pub fn choose_attention(clicks: Option<&[ClickLogRecord]>, kappa: usize, p: Option<f64>) -> Result<(GeometricAttention, bool), AuditError> {
    match clicks {
        Some(clicks) => fit_attention(clicks, kappa)
            .map(|a| (a, true))
            .map_err(|e| AuditError::data(Stage::Attention, e)),
        None => GeometricAttention::new(p.unwrap_or(DEFAULT_P), kappa)
            .map(|a| (a, false))
            .map_err(|e| AuditError::config(Stage::Attention, e)),
    }
}

/// Runs the full pipeline and writes the report files into `config.out`.
pub fn run_audit(config: &AuditConfig) -> Result<AuditReport, AuditError> {
    config.validate()?;
    let mode = config.load_mode();
    let kappa = config.kappa();
    let limit = NonZeroUsize::new(config.limit()).expect("validated");
    let mut warnings = Vec::new();
    let mut skipped_rows = 0;

    // ingest
    let businesses_path = config.businesses.as_deref().expect("validated");
    let (catalog, skipped) =
        load_businesses(read_file(businesses_path, Stage::Ingest)?, mode).map_err(ingest_err(businesses_path))?;
    skipped_rows += skipped.len();
    if catalog.is_empty() {
        return Err(AuditError::data(Stage::Ingest, "business catalog is empty"));
    }

    let checkins_path = config.checkins.as_deref().expect("validated");
    let checkins = load_checkins(read_file(checkins_path, Stage::Ingest)?, mode).map_err(ingest_err(checkins_path))?;
    skipped_rows += checkins.skipped.len();

    let landmarks: Vec<LandmarkRecord> = match &config.landmarks {
        Some(path) => {
            let loaded = load_landmarks(read_file(path, Stage::Ingest)?, mode).map_err(ingest_err(path))?;
            skipped_rows += loaded.skipped.len();
            loaded.records
        }
        None => Vec::new(),
    };
    let clicks = match &config.clicks {
        Some(path) => {
            let loaded = load_click_log(read_file(path, Stage::Ingest)?, mode).map_err(ingest_err(path))?;
            skipped_rows += loaded.skipped.len();
            Some(loaded.records)
        }
        None => None,
    };
    let recorded = match &config.rankings {
        Some(path) => {
            let loaded = load_ranked_results(read_file(path, Stage::Ingest)?, mode).map_err(ingest_err(path))?;
            skipped_rows += loaded.skipped.len();
            Some(loaded.records)
        }
        None => None,
    };
    if skipped_rows > 0 {
        warnings.push(format!("{skipped_rows} malformed input rows skipped"));
    }

    // cluster + popularity
    let unique = dedup_checkins(&checkins.records);
    let points: Vec<GeoPoint> = unique.iter().map(|c| c.point).collect();
    let params = KMeansParams {
        k: config.k,
        seed: config.seed,
        max_iter: config.max_iter,
        tol_km: config.tol_km,
    };
    let model = kmeans(&points, &params).map_err(|e| AuditError::data(Stage::Cluster, e))?;
    let radii = cluster_radii(&model, &points).map_err(|e| AuditError::new(Stage::Cluster, ErrorKind::Invariant, e))?;

    let mut queries = build_location_queries(&model.centroids, &landmarks);
    let popularity = popularity_scores(&points, &queries).map_err(|e| AuditError::data(Stage::Popularity, e))?;
    popularity.apply(&mut queries);
    let popularity_by_id = popularity.to_hash_map();

    // simulate or replay recorded rankings
    let radius_cutoff = config
        .radius_km
        .map(|r| Kilometers::new(r).map_err(|e| AuditError::config(Stage::Config, e)))
        .transpose()?;
    let search_params = SearchParams {
        limit,
        radius_cutoff,
    };
    let base_log = match &recorded {
        Some(records) => {
            if records.is_empty() {
                return Err(AuditError::data(Stage::Simulate, "rankings file has no rankings"));
            }
            let lists: Vec<RankedList> = records.iter().map(RankedList::from_recorded).collect();
            SearchLog::with_scenario(lists, Scenario::Uniform, &popularity_by_id)
                .map_err(|e| AuditError::data(Stage::Simulate, e))?
        }
        None => run_campaign(&queries, &catalog, &search_params, Scenario::Uniform)
            .map_err(|e| AuditError::data(Stage::Simulate, e))?,
    };
    let profile = match rank_distance_profile(&base_log) {
        Ok(rows) => rows,
        Err(e) if recorded.is_some() => {
            warnings.push(format!("no rank/distance profile: {e}"));
            Vec::new()
        }
        Err(e) => return Err(AuditError::new(Stage::Simulate, ErrorKind::Invariant, e)),
    };

    // attention, exposure, measures
    let (attention, p_fitted) = choose_attention(clicks.as_deref(), kappa, config.p)?;
    let relevance = relevance_scores(&catalog, config.relevance_mode);
    let ratings = classify_rating(&catalog, config.rating_mode())?;

    let mut outcomes = Vec::new();
    for scenario in config.scenario.scenarios() {
        let log = base_log
            .reweighted(scenario, &popularity_by_id)
            .map_err(|e| AuditError::data(Stage::Exposure, e))?;
        let ledger = exposure_from_log(&log, &attention, &relevance).map_err(|e| AuditError::data(Stage::Exposure, e))?;
        let measures = bias_measures(&ledger);
        let (_, exposure) = classify_ledger(&ledger)?;
        if exposure.degenerate {
            warnings.push(format!(
                "{scenario}: exposure quartile boundaries coincide; tied businesses classed HE"
            ));
        }
        outcomes.push(ScenarioOutcome {
            scenario,
            ledger,
            measures,
            exposure,
        });
    }

    let class_maps: Vec<IndexMap<String, ExposureClass>> = outcomes
        .iter()
        .map(|o| {
            o.ledger
                .rows
                .iter()
                .zip(&o.exposure.classes)
                .map(|(r, &c)| (r.business_id.clone(), c))
                .collect()
        })
        .collect();
    let pairs: Vec<(Scenario, &IndexMap<String, ExposureClass>)> =
        outcomes.iter().map(|o| o.scenario).zip(class_maps.iter()).collect();
    let disparity = disparity_table(&ratings, &pairs)?;
    for row in &disparity.rows {
        let total: f64 = [row.le_pct, row.he_pct, row.mid_pct].iter().flatten().sum();
        if row.n > 0 && (total - 100.0).abs() > 0.01 {
            return Err(AuditError::new(
                Stage::Disparity,
                ErrorKind::Invariant,
                format!("{} {} row sums to {total}%", row.scenario, row.rating_class),
            ));
        }
    }

    let primary = outcomes.last().expect("at least one scenario");
    let summary = AuditSummary {
        businesses: catalog.len(),
        checkins: checkins.records.len(),
        unique_checkins: unique.len(),
        skipped_rows,
        clusters: model.k(),
        kmeans_iterations: model.iterations,
        mean_cluster_radius_km: radii.mean_radius.value(),
        queries: queries.len(),
        searches: base_log.len(),
        recorded_rankings: recorded.is_some(),
        kappa,
        p: attention.p(),
        p_fitted,
        limit: limit.get(),
        radius_km: config.radius_km,
        rating_mode: config.rating_mode(),
        relevance_mode: config.relevance_mode,
        primary_scenario: primary.scenario,
        degenerate_exposure: outcomes.iter().filter(|o| o.exposure.degenerate).map(|o| o.scenario).collect(),
        warnings,
    };

    // render everything before touching the output directory
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    files.push(("queries.csv".into(), csv_bytes(|b| write_queries(&queries, b))?));
    let mut searchlog = Vec::new();
    write_searchlog(&base_log, &mut searchlog).map_err(|e| AuditError::new(Stage::Write, ErrorKind::Invariant, e))?;
    files.push(("searchlog.jsonl".into(), searchlog));
    files.push(("profile.csv".into(), csv_bytes(|b| write_profile(&profile, b))?));
    files.push(("ledger.csv".into(), csv_bytes(|b| write_ledger(&primary.ledger, b))?));
    files.push(("measures.json".into(), measures_json(&primary.measures).into_bytes()));
    files.push(("disparity.csv".into(), csv_bytes(|b| write_disparity(&disparity, b))?));
    files.push((
        "scatter_rating_exposure.csv".into(),
        csv_bytes(|b| write_scatter(&catalog, &primary.ledger, b))?,
    ));
    for o in &outcomes {
        files.push((format!("ledger_{}.csv", o.scenario), csv_bytes(|b| write_ledger(&o.ledger, b))?));
        files.push((format!("measures_{}.json", o.scenario), measures_json(&o.measures).into_bytes()));
    }
    let summary_json = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    files.push(("summary.json".into(), summary_json.into_bytes()));

    let written = write_outputs(&config.out, &files)?;
    Ok(AuditReport {
        summary,
        outcomes,
        disparity,
        files: written,
    })
}

/// `business_id,mean_rating,E_mean` for a rating-vs-exposure scatter plot.
pub fn write_scatter<W: Write>(catalog: &Catalog, ledger: &ExposureLedger, sink: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["business_id", "mean_rating", "E_mean"])?;
    for row in &ledger.rows {
        let rating = catalog.get(&row.business_id).map_or(f64::NAN, |b| b.mean_rating);
        w.write_record([row.business_id.clone(), rating.to_string(), row.e_mean.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Human-readable summary of an audit output directory.
pub fn render_report(dir: &Path) -> Result<String, AuditError> {
    let open = |name: &str| read_file(&dir.join(name), Stage::Report);
    let disparity = load_disparity(open("disparity.csv")?)?;
    let mut out = String::new();
    let summary: Option<serde_json::Value> = fs::read_to_string(dir.join("summary.json"))
        .ok()
        .and_then(|s| serde_json::from_str(&s).ok());
    if let Some(s) = &summary {
        out.push_str(&format!(
            "businesses {}  queries {}  searches {}  kappa {}  p {}\n\n",
            s["businesses"], s["queries"], s["searches"], s["kappa"], s["p"]
        ));
    }

    out.push_str(&format!(
        "{:<10} {:<7} {:>8} {:>8} {:>8} {:>6}\n",
        "scenario", "rating", "LE%", "HE%", "Mid%", "n"
    ));
    let cell = |v: Option<f64>, flagged: bool| match v {
        None => "NA".to_string(),
        Some(p) if flagged => format!("*{p:.2}"),
        Some(p) => format!("{p:.2}"),
    };
    for r in &disparity.rows {
        let high = r.rating_class == RatingClass::High;
        out.push_str(&format!(
            "{:<10} {:<7} {:>8} {:>8} {:>8} {:>6}\n",
            r.scenario.to_string(),
            r.rating_class.to_string(),
            cell(r.le_pct, high),
            cell(r.he_pct, !high),
            cell(r.mid_pct, false),
            r.n
        ));
    }
    out.push_str("(* marks disparity cells: highly rated with low exposure, poorly rated with high exposure)\n");

    let mut measures: Vec<(String, serde_json::Value)> = Vec::new();
    for scenario in [Scenario::Uniform, Scenario::PopularityWeighted] {
        if let Ok(text) = fs::read_to_string(dir.join(format!("measures_{scenario}.json"))) {
            let v = serde_json::from_str(&text).map_err(|e| AuditError::data(Stage::Report, e))?;
            measures.push((scenario.to_string(), v));
        }
    }
    if measures.is_empty() {
        let text = fs::read_to_string(dir.join("measures.json"))
            .map_err(|e| AuditError::data(Stage::Report, format!("measures.json: {e}")))?;
        measures.push(("primary".into(), serde_json::from_str(&text).map_err(|e| AuditError::data(Stage::Report, e))?));
    }
    out.push('\n');
    for (name, m) in measures {
        out.push_str(&format!(
            "{name}: cumulative_B {}  egalitarian {}  merit_ratio_spread {}  excluded {}\n",
            m["cumulative_B"], m["egalitarian"], m["merit_ratio_spread"], m["excluded_zero_relevance"]
        ));
    }
    if let Some(warnings) = summary.as_ref().and_then(|s| s["warnings"].as_array()) {
        for w in warnings {
            out.push_str(&format!("warning: {}\n", w.as_str().unwrap_or_default()));
        }
    }
    Ok(out)
}

/// Popularity lookup from a query set, for re-weighting stored search logs.
pub fn popularity_lookup(queries: &[crate::queries::LocationQuery]) -> HashMap<String, f64> {
    queries.iter().map(|q| (q.id.clone(), q.popularity)).collect()
}
