//! Position-bias attention, exposure accounting and exposure-bias measures.
//!
//! Attention follows a truncated geometric curve: rank `t` in `1..=kappa`
//! receives `p (1-p)^(t-1)` renormalized to sum to one, and ranks past
//! `kappa` receive nothing. A business's exposure is the attention it
//! collects over a campaign of searches, optionally weighted by query
//! popularity. Bias is the gap between the relevance a business deserves
//! and the exposure it receives.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::ClickLogRecord;
use crate::simulate::{Catalog, RankedList, Scenario, SearchLog};

/// Fitted geometric parameter for hotel-search click data.
pub const DEFAULT_P: f64 = 0.144;

/// Search interval for [`fit_attention`].
pub const FIT_P_MIN: f64 = 1e-6;
pub const FIT_P_MAX: f64 = 1.0 - 1e-6;
pub const FIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BiasError {
    #[error("attention parameter p = {0} must lie strictly between 0 and 1")]
    InvalidP(f64),
    #[error("kappa must be at least 1")]
    ZeroKappa,
    #[error("click log has no clicks within positions 1..={0}")]
    AllZeroClicks(usize),
    #[error("click log needs at least two positions with clicks within 1..={kappa}, found {found}")]
    TooFewPositions { kappa: usize, found: usize },
    #[error("business `{0}` is not in the catalog")]
    UnknownBusiness(String),
    #[error("ranking for query `{0}` is empty")]
    EmptyRanking(String),
}

/// Truncated geometric attention over the first `kappa` ranks.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometricAttention {
    p: f64,
    kappa: usize,
    weights: Vec<f64>,
}

impl GeometricAttention {
    pub fn new(p: f64, kappa: usize) -> Result<Self, BiasError> {
        if !(p > 0.0 && p < 1.0) {
            return Err(BiasError::InvalidP(p));
        }
        if kappa == 0 {
            return Err(BiasError::ZeroKappa);
        }
        Ok(Self {
            p,
            kappa,
            weights: geometric_weights(p, kappa),
        })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn kappa(&self) -> usize {
        self.kappa
    }

    /// `weights()[t - 1]` is the attention at rank `t`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Attention at 1-based `rank`; zero outside `1..=kappa`.
    pub fn weight(&self, rank: usize) -> f64 {
        match rank {
            0 => 0.0,
            t => self.weights.get(t - 1).copied().unwrap_or(0.0),
        }
    }
}

// Terms are built by repeated multiplication so consecutive ratios are 1-p up
// to a couple of roundings.
fn geometric_weights(p: f64, kappa: usize) -> Vec<f64> {
    let q = 1.0 - p;
    let mut terms = Vec::with_capacity(kappa);
    let mut term = p;
    for _ in 0..kappa {
        terms.push(term);
        term *= q;
    }
    let total: f64 = terms.iter().sum();
    terms.iter_mut().for_each(|t| *t /= total);
    terms
}

/// Attention weights for ranks `1..=kappa`.
pub fn attention_weights(model: &GeometricAttention) -> Vec<f64> {
    model.weights.clone()
}

/// Least-squares fit of the geometric parameter to a click log.
///
/// Clicks at positions `1..=kappa` are turned into fractions and compared with
/// the attention curve over the same positions (renormalized over the
/// positions actually present in the log). The squared error is minimized by
/// golden-section search over `[FIT_P_MIN, FIT_P_MAX]`, inside a bracket
/// chosen from a coarse grid so that a non-unimodal error curve cannot trap
/// the search.
pub fn fit_attention(clicks: &[ClickLogRecord], kappa: usize) -> Result<GeometricAttention, BiasError> {
    if kappa == 0 {
        return Err(BiasError::ZeroKappa);
    }
    let observed: Vec<(usize, f64)> = clicks
        .iter()
        .filter(|c| c.position >= 1 && (c.position as usize) <= kappa)
        .map(|c| (c.position as usize, c.clicks as f64))
        .collect();
    let total: f64 = observed.iter().map(|&(_, c)| c).sum();
    if total <= 0.0 {
        return Err(BiasError::AllZeroClicks(kappa));
    }
    let nonzero = observed.iter().filter(|&&(_, c)| c > 0.0).count();
    if nonzero < 2 {
        return Err(BiasError::TooFewPositions { kappa, found: nonzero });
    }
    let fractions: Vec<(usize, f64)> = observed.iter().map(|&(t, c)| (t, c / total)).collect();

    let sse = |p: f64| -> f64 {
        let w = geometric_weights(p, kappa);
        let norm: f64 = fractions.iter().map(|&(t, _)| w[t - 1]).sum();
        fractions
            .iter()
            .map(|&(t, f)| {
                let e = w[t - 1] / norm - f;
                e * e
            })
            .sum()
    };

    let p = golden_section_min(sse, FIT_P_MIN, FIT_P_MAX, FIT_TOLERANCE);
    GeometricAttention::new(p, kappa)
}

fn golden_section_min<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, tol: f64) -> f64 {
    const GRID: usize = 256;
    let step = (hi - lo) / GRID as f64;
    let at = |i: usize| if i == GRID { hi } else { lo + step * i as f64 };
    let best = (0..=GRID)
        .map(|i| (i, f(at(i))))
        .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
    let (mut a, mut b) = (at(best.0.saturating_sub(1)), at((best.0 + 1).min(GRID)));

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let mid = (a + b) / 2.0;
    // The bracket can collapse onto a search bound.
    [mid, a, b]
        .into_iter()
        .map(|x| (x, f(x)))
        .fold((mid, f64::INFINITY), |acc, (x, v)| if v < acc.1 { (x, v) } else { acc })
        .0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelevanceMode {
    /// `mean_rating / rating_scale_max`, independent of the query.
    ScaleMax,
    /// Scale-max relevance renormalized to sum to one over each ranking.
    #[default]
    PerQuerySimplex,
}

impl fmt::Display for RelevanceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RelevanceMode::ScaleMax => "scale-max",
            RelevanceMode::PerQuerySimplex => "per-query-simplex",
        })
    }
}

impl FromStr for RelevanceMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scale-max" => Ok(RelevanceMode::ScaleMax),
            "per-query-simplex" | "simplex" => Ok(RelevanceMode::PerQuerySimplex),
            other => Err(format!("unknown relevance mode `{other}`")),
        }
    }
}

/// Per-business relevance for a catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceModel {
    mode: RelevanceMode,
    ids: Vec<String>,
    values: Vec<f64>,
    index: HashMap<String, usize>,
}

pub fn relevance_scores(catalog: &Catalog, mode: RelevanceMode) -> RelevanceModel {
    let ids: Vec<String> = catalog.businesses().iter().map(|b| b.id.clone()).collect();
    let values = catalog.businesses().iter().map(|b| b.normalized_rating()).collect();
    let index = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
    RelevanceModel {
        mode,
        ids,
        values,
        index,
    }
}

impl RelevanceModel {
    pub fn mode(&self) -> RelevanceMode {
        self.mode
    }

    pub fn with_mode(&self, mode: RelevanceMode) -> Self {
        Self { mode, ..self.clone() }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn business_ids(&self) -> &[String] {
        &self.ids
    }

    /// Scale-max relevance of a business.
    pub fn value(&self, id: &str) -> Option<f64> {
        self.index.get(id).map(|&i| self.values[i])
    }

    fn position(&self, id: &str) -> Result<usize, BiasError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| BiasError::UnknownBusiness(id.to_string()))
    }

    /// Relevance of each ranked candidate under this model's mode. In simplex
    /// mode a ranking whose candidates all have zero relevance gets zeros.
    pub fn ranking_relevance(&self, ranking: &RankedList) -> Result<Vec<f64>, BiasError> {
        let mut values = ranking
            .entries
            .iter()
            .map(|e| self.position(&e.business_id).map(|i| self.values[i]))
            .collect::<Result<Vec<f64>, _>>()?;
        if self.mode == RelevanceMode::PerQuerySimplex {
            let total: f64 = values.iter().sum();
            if total > 0.0 {
                values.iter_mut().for_each(|v| *v /= total);
            }
        }
        Ok(values)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerRow {
    pub business_id: String,
    /// Number of searches in which the business was ranked at all.
    pub appearances: usize,
    /// Weighted attention summed over searches.
    #[serde(rename = "E_total")]
    pub e_total: f64,
    /// `e_total / appearances`, or 0 if the business never appeared.
    #[serde(rename = "E_mean")]
    pub e_mean: f64,
    /// Weighted relevance summed over searches where the business was ranked.
    #[serde(rename = "V_total")]
    pub v_total: f64,
}

impl LedgerRow {
    /// Deserved minus received exposure over the whole campaign.
    pub fn amortized_bias(&self) -> f64 {
        self.v_total - self.e_total
    }
}

/// Exposure and relevance totals for every catalog business, in catalog order.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureLedger {
    pub rows: Vec<LedgerRow>,
    /// Number of searches in the log.
    pub searches: usize,
    pub scenario: Scenario,
}

impl ExposureLedger {
    pub fn row(&self, business_id: &str) -> Option<&LedgerRow> {
        self.rows.iter().find(|r| r.business_id == business_id)
    }
}

pub fn exposure_from_log(
    log: &SearchLog,
    attention: &GeometricAttention,
    relevance: &RelevanceModel,
) -> Result<ExposureLedger, BiasError> {
    let n = relevance.len();
    let mut e_total = vec![0.0f64; n];
    let mut v_total = vec![0.0f64; n];
    let mut appearances = vec![0usize; n];

    for (list, &w) in log.results().iter().zip(log.weights()) {
        let values = relevance.ranking_relevance(list)?;
        for (t, (entry, v)) in list.entries.iter().zip(values).enumerate() {
            let j = relevance.position(&entry.business_id)?;
            e_total[j] += w * attention.weight(t + 1);
            v_total[j] += w * v;
            appearances[j] += 1;
        }
    }

    let rows = relevance
        .business_ids()
        .iter()
        .enumerate()
        .map(|(j, id)| LedgerRow {
            business_id: id.clone(),
            appearances: appearances[j],
            e_total: e_total[j],
            e_mean: if appearances[j] == 0 {
                0.0
            } else {
                e_total[j] / appearances[j] as f64
            },
            v_total: v_total[j],
        })
        .collect();
    Ok(ExposureLedger {
        rows,
        searches: log.len(),
        scenario: log.scenario(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceBias {
    pub business_id: String,
    pub rank: usize,
    pub relevance: f64,
    pub attention: f64,
    /// `relevance - attention`; negative means over-exposed.
    pub bias: f64,
}

/// Bias of each candidate within one ranking.
///
/// Relevance follows the model's mode; with per-query-simplex relevance and a
/// ranking at least `kappa` long both terms are distributions over the
/// candidates, so the biases sum to zero.
pub fn instance_bias(
    ranking: &RankedList,
    relevance: &RelevanceModel,
    attention: &GeometricAttention,
) -> Result<Vec<InstanceBias>, BiasError> {
    if ranking.is_empty() {
        return Err(BiasError::EmptyRanking(ranking.query_id.clone()));
    }
    let values = relevance.ranking_relevance(ranking)?;
    Ok(ranking
        .entries
        .iter()
        .zip(values)
        .enumerate()
        .map(|(t, (entry, v))| {
            let a = attention.weight(t + 1);
            InstanceBias {
                business_id: entry.business_id.clone(),
                rank: t + 1,
                relevance: v,
                attention: a,
                bias: v - a,
            }
        })
        .collect())
}

/// Campaign-level bias summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasMeasures {
    /// Sum over businesses of |V_total - E_total|.
    #[serde(rename = "cumulative_B")]
    pub cumulative_b: f64,
    /// Sum of absolute amortized biases.
    pub utilitarian: f64,
    /// Largest absolute amortized bias.
    pub egalitarian: f64,
    /// Spread of E/V over businesses with V > 0; zero when exposure is
    /// exactly proportional to relevance.
    pub merit_ratio_spread: f64,
    /// Businesses left out of the ratio spread because V = 0.
    pub excluded_zero_relevance: usize,
}

pub fn bias_measures(ledger: &ExposureLedger) -> BiasMeasures {
    let biases: Vec<f64> = ledger.rows.iter().map(LedgerRow::amortized_bias).collect();
    let utilitarian: f64 = biases.iter().map(|b| b.abs()).sum();
    let egalitarian = biases.iter().map(|b| b.abs()).fold(0.0, f64::max);

    let ratios: Vec<f64> = ledger
        .rows
        .iter()
        .filter(|r| r.v_total > 0.0)
        .map(|r| r.e_total / r.v_total)
        .collect();
    let excluded = ledger.rows.len() - ratios.len();
    let spread = if ratios.is_empty() {
        0.0
    } else {
        let max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        max - min
    };

    BiasMeasures {
        cumulative_b: utilitarian,
        utilitarian,
        egalitarian,
        merit_ratio_spread: spread,
        excluded_zero_relevance: excluded,
    }
}

pub fn write_ledger<W: Write>(ledger: &ExposureLedger, sink: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["business_id", "appearances", "E_total", "E_mean", "V_total", "B_amortized"])?;
    for r in &ledger.rows {
        w.write_record([
            r.business_id.clone(),
            r.appearances.to_string(),
            r.e_total.to_string(),
            r.e_mean.to_string(),
            r.v_total.to_string(),
            r.amortized_bias().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn measures_json(measures: &BiasMeasures) -> String {
    serde_json::to_string_pretty(measures).expect("measures serialize") + "\n"
}
