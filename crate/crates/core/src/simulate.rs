//! "Near me" search simulation over a business catalog.
//!
//! Results are ordered purely by great-circle distance from the query point.
//! Other ranking models can be plugged in through [`Ranker`].

use std::collections::HashMap;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::num::NonZeroUsize;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{haversine_distance, Kilometers};
use crate::ingest::{BusinessRecord, RankedResultRecord};
use crate::queries::LocationQuery;

/// Default search radius in kilometers.
pub const DEFAULT_RADIUS_KM: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("duplicate business id `{0}`")]
pub struct DuplicateBusinessId(pub String);

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("no location queries to run")]
    EmptyQuerySet,
    #[error("ranking for query `{0}` has no distances; rank/distance profile needs simulated results")]
    MissingDistances(String),
    #[error("no popularity weight for query `{0}`")]
    MissingWeight(String),
    #[error("invalid search log weight {0}")]
    InvalidWeight(f64),
    #[error("search log has {results} results but {weights} weights")]
    WeightCount { results: usize, weights: usize },
    #[error("line {line}: malformed search log entry: {message}")]
    MalformedLine { line: u64, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// The set of businesses that can be ranked, indexed by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Catalog {
    businesses: Vec<BusinessRecord>,
    by_id: HashMap<String, usize>,
}

impl Catalog {
    pub fn new(businesses: Vec<BusinessRecord>) -> Result<Self, DuplicateBusinessId> {
        let mut by_id = HashMap::with_capacity(businesses.len());
        for (i, b) in businesses.iter().enumerate() {
            if by_id.insert(b.id.clone(), i).is_some() {
                return Err(DuplicateBusinessId(b.id.clone()));
            }
        }
        Ok(Self { businesses, by_id })
    }

    pub fn len(&self) -> usize {
        self.businesses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.businesses.is_empty()
    }

    pub fn businesses(&self) -> &[BusinessRecord] {
        &self.businesses
    }

    pub fn get(&self, id: &str) -> Option<&BusinessRecord> {
        self.index_of(id).map(|i| &self.businesses[i])
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    #[serde(rename = "id")]
    pub business_id: String,
    /// Distance from the query point; absent for ingested real rankings.
    #[serde(rename = "km", default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<Kilometers>,
}

/// One search result permutation. Rank `t` is `entries[t - 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Ranking recorded from a real platform: no distances.
    pub fn from_recorded(record: &RankedResultRecord) -> Self {
        Self {
            query_id: record.query_id.clone(),
            entries: record
                .ranked_business_ids
                .iter()
                .map(|id| RankedEntry {
                    business_id: id.clone(),
                    distance: None,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Every query counts equally.
    Uniform,
    /// Each query counts in proportion to its popularity.
    #[serde(rename = "weighted")]
    PopularityWeighted,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Uniform => "uniform",
            Scenario::PopularityWeighted => "weighted",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(Scenario::Uniform),
            "weighted" => Ok(Scenario::PopularityWeighted),
            other => Err(format!("unknown scenario `{other}` (expected uniform or weighted)")),
        }
    }
}

/// A campaign of searches with per-search weights.
///
/// `weights[i]` belongs to `results[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchLog {
    results: Vec<RankedList>,
    scenario: Scenario,
    weights: Vec<f64>,
}

impl SearchLog {
    pub fn new(results: Vec<RankedList>, scenario: Scenario, weights: Vec<f64>) -> Result<Self, SimulateError> {
        if results.len() != weights.len() {
            return Err(SimulateError::WeightCount {
                results: results.len(),
                weights: weights.len(),
            });
        }
        if let Some(&w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(SimulateError::InvalidWeight(w));
        }
        Ok(Self {
            results,
            scenario,
            weights,
        })
    }

    /// Attaches scenario weights: `1/k` for uniform, the query's popularity
    /// (looked up by query id) for the weighted scenario.
    pub fn with_scenario(
        results: Vec<RankedList>,
        scenario: Scenario,
        popularity: &HashMap<String, f64>,
    ) -> Result<Self, SimulateError> {
        let weights = match scenario {
            Scenario::Uniform => {
                let w = 1.0 / results.len() as f64;
                vec![w; results.len()]
            }
            Scenario::PopularityWeighted => results
                .iter()
                .map(|r| {
                    popularity
                        .get(&r.query_id)
                        .copied()
                        .ok_or_else(|| SimulateError::MissingWeight(r.query_id.clone()))
                })
                .collect::<Result<_, _>>()?,
        };
        Self::new(results, scenario, weights)
    }

    pub fn results(&self) -> &[RankedList] {
        &self.results
    }

    pub fn scenario(&self) -> Scenario {
        self.scenario
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.results.len()
    }

    pub fn is_empty(&self) -> bool {
        self.results.is_empty()
    }

    /// The same searches re-weighted under another scenario.
    pub fn reweighted(&self, scenario: Scenario, popularity: &HashMap<String, f64>) -> Result<Self, SimulateError> {
        Self::with_scenario(self.results.clone(), scenario, popularity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchParams {
    pub limit: NonZeroUsize,
    pub radius_cutoff: Option<Kilometers>,
}

/// Produces one ranked list for a query.
pub trait Ranker {
    fn rank(&self, query: &LocationQuery, catalog: &Catalog, params: &SearchParams) -> RankedList;
}

/// Pure distance ordering.
#[derive(Debug, Clone, Copy, Default)]
pub struct DistanceRanker;

impl Ranker for DistanceRanker {
    fn rank(&self, query: &LocationQuery, catalog: &Catalog, params: &SearchParams) -> RankedList {
        rank_by_distance(query, catalog, params.limit, params.radius_cutoff)
    }
}

/// Businesses within `radius_cutoff` (inclusive) ordered by distance from the
/// query, nearest first, truncated to `limit`. Equal distances are ordered by
/// business id.
pub fn rank_by_distance(
    query: &LocationQuery,
    catalog: &Catalog,
    limit: NonZeroUsize,
    radius_cutoff: Option<Kilometers>,
) -> RankedList {
    let mut scored: Vec<(Kilometers, &str)> = catalog
        .businesses()
        .iter()
        .map(|b| (haversine_distance(query.point, b.point), b.id.as_str()))
        .filter(|(d, _)| radius_cutoff.is_none_or(|r| *d <= r))
        .collect();
    scored.sort_by(|a, b| a.0.value().total_cmp(&b.0.value()).then_with(|| a.1.cmp(b.1)));
    scored.truncate(limit.get());

    RankedList {
        query_id: query.id.clone(),
        entries: scored
            .into_iter()
            .map(|(d, id)| RankedEntry {
                business_id: id.to_string(),
                distance: Some(d),
            })
            .collect(),
    }
}

/// Runs one distance-ranked search per query, in query order.
pub fn run_campaign(
    queries: &[LocationQuery],
    catalog: &Catalog,
    params: &SearchParams,
    scenario: Scenario,
) -> Result<SearchLog, SimulateError> {
    run_campaign_with(&DistanceRanker, queries, catalog, params, scenario)
}

pub fn run_campaign_with<R: Ranker + ?Sized>(
    ranker: &R,
    queries: &[LocationQuery],
    catalog: &Catalog,
    params: &SearchParams,
    scenario: Scenario,
) -> Result<SearchLog, SimulateError> {
    if queries.is_empty() {
        return Err(SimulateError::EmptyQuerySet);
    }
    let results: Vec<RankedList> = queries.iter().map(|q| ranker.rank(q, catalog, params)).collect();
    let weights = match scenario {
        Scenario::Uniform => vec![1.0 / queries.len() as f64; queries.len()],
        Scenario::PopularityWeighted => queries.iter().map(|q| q.popularity).collect(),
    };
    SearchLog::new(results, scenario, weights)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProfileRow {
    pub rank: usize,
    pub mean_km: f64,
    pub count: usize,
}

/// Mean distance at each rank over all lists that reach that rank.
///
/// When every list has the same length the profile is non-decreasing in rank,
/// since each list is sorted by distance. Lists truncated by a radius cutoff
/// can break that.
pub fn rank_distance_profile(log: &SearchLog) -> Result<Vec<ProfileRow>, SimulateError> {
    let mut sums: Vec<(f64, usize)> = Vec::new();
    for list in log.results() {
        for (t, entry) in list.entries.iter().enumerate() {
            let d = entry
                .distance
                .ok_or_else(|| SimulateError::MissingDistances(list.query_id.clone()))?;
            if sums.len() <= t {
                sums.push((0.0, 0));
            }
            sums[t].0 += d.value();
            sums[t].1 += 1;
        }
    }
    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(t, (sum, count))| ProfileRow {
            rank: t + 1,
            mean_km: sum / count as f64,
            count,
        })
        .collect())
}

/// One JSON line per ranked list.
pub fn write_searchlog<W: Write>(log: &SearchLog, mut sink: W) -> io::Result<()> {
    for list in log.results() {
        let line = serde_json::to_string(list).map_err(io::Error::other)?;
        writeln!(sink, "{line}")?;
    }
    Ok(())
}

pub fn load_searchlog<R: BufRead>(source: R) -> Result<Vec<RankedList>, SimulateError> {
    let mut lists = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let list: RankedList = serde_json::from_str(&line).map_err(|e| SimulateError::MalformedLine {
            line: i as u64 + 1,
            message: e.to_string(),
        })?;
        lists.push(list);
    }
    Ok(lists)
}

pub fn write_profile<W: Write>(profile: &[ProfileRow], sink: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["rank", "mean_km", "count"])?;
    for row in profile {
        w.write_record([row.rank.to_string(), row.mean_km.to_string(), row.count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GeoPoint;
    use crate::queries::QueryKind;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn business(id: &str, lat: f64, lon: f64) -> BusinessRecord {
        BusinessRecord {
            id: id.into(),
            name: id.into(),
            point: GeoPoint::new(lat, lon).unwrap(),
            mean_rating: 4.0,
            rating_scale_max: 5.0,
            platform: "test".into(),
        }
    }

    fn query(id: &str, lat: f64, lon: f64, popularity: f64) -> LocationQuery {
        LocationQuery {
            id: id.into(),
            point: GeoPoint::new(lat, lon).unwrap(),
            kind: QueryKind::Centroid,
            popularity,
        }
    }

    fn nz(n: usize) -> NonZeroUsize {
        NonZeroUsize::new(n).unwrap()
    }

    // One degree of latitude is ~111.195 km; these sit at ~1, 2, 3 km north.
    fn line_catalog() -> Catalog {
        let deg = 1.0 / 111.19492664455873;
        Catalog::new(vec![
            business("far", 3.0 * deg, 0.0),
            business("near", 1.0 * deg, 0.0),
            business("mid", 2.0 * deg, 0.0),
        ])
        .unwrap()
    }

    fn ids(list: &RankedList) -> Vec<&str> {
        list.entries.iter().map(|e| e.business_id.as_str()).collect()
    }

    #[test]
    fn ranks_nearest_first() {
        let list = rank_by_distance(&query("q", 0.0, 0.0, 1.0), &line_catalog(), nz(20), None);
        assert_eq!(ids(&list), vec!["near", "mid", "far"]);
    }

    #[test]
    fn radius_cutoff_filters() {
        let cutoff = Kilometers::new(2.5).unwrap();
        let list = rank_by_distance(&query("q", 0.0, 0.0, 1.0), &line_catalog(), nz(20), Some(cutoff));
        assert_eq!(ids(&list), vec!["near", "mid"]);
    }

    #[test]
    fn limit_truncates() {
        let list = rank_by_distance(&query("q", 0.0, 0.0, 1.0), &line_catalog(), nz(1), None);
        assert_eq!(ids(&list), vec!["near"]);
    }

    #[test]
    fn equidistant_ties_by_id() {
        let catalog = Catalog::new(vec![business("b", 1.0, 1.0), business("a", 1.0, 1.0)]).unwrap();
        let list = rank_by_distance(&query("q", 0.0, 0.0, 1.0), &catalog, nz(5), None);
        assert_eq!(ids(&list), vec!["a", "b"]);
    }

    #[test]
    fn empty_catalog_gives_empty_list() {
        let list = rank_by_distance(&query("q", 0.0, 0.0, 1.0), &Catalog::default(), nz(5), None);
        assert!(list.is_empty());
    }

    #[test]
    fn duplicate_catalog_ids_rejected() {
        let err = Catalog::new(vec![business("a", 0.0, 0.0), business("a", 1.0, 1.0)]).unwrap_err();
        assert_eq!(err, DuplicateBusinessId("a".into()));
    }

    #[test]
    fn campaign_weights() {
        let qs = [query("q1", 0.0, 0.0, 0.9), query("q2", 0.01, 0.0, 0.1)];
        let params = SearchParams {
            limit: nz(2),
            radius_cutoff: None,
        };
        let uniform = run_campaign(&qs, &line_catalog(), &params, Scenario::Uniform).unwrap();
        assert_eq!(uniform.weights(), &[0.5, 0.5]);
        let weighted = run_campaign(&qs, &line_catalog(), &params, Scenario::PopularityWeighted).unwrap();
        assert_eq!(weighted.weights(), &[0.9, 0.1]);
        assert_eq!(weighted.len(), 2);
        assert!(weighted.results().iter().all(|r| r.len() <= 2));
        assert_eq!(weighted.results()[0].query_id, "q1");

        assert!(matches!(
            run_campaign(&[], &line_catalog(), &params, Scenario::Uniform),
            Err(SimulateError::EmptyQuerySet)
        ));
    }

    #[test]
    fn reweighting_by_query_id() {
        let qs = [query("q1", 0.0, 0.0, 0.9), query("q2", 0.01, 0.0, 0.1)];
        let params = SearchParams {
            limit: nz(2),
            radius_cutoff: None,
        };
        let log = run_campaign(&qs, &line_catalog(), &params, Scenario::Uniform).unwrap();
        let pop: HashMap<String, f64> = [("q1".to_string(), 0.9), ("q2".to_string(), 0.1)].into();
        let weighted = log.reweighted(Scenario::PopularityWeighted, &pop).unwrap();
        assert_eq!(weighted.weights(), &[0.9, 0.1]);
        let missing = log.reweighted(Scenario::PopularityWeighted, &HashMap::new());
        assert!(matches!(missing, Err(SimulateError::MissingWeight(_))));
    }

    fn list_with(query_id: &str, kms: &[f64]) -> RankedList {
        RankedList {
            query_id: query_id.into(),
            entries: kms
                .iter()
                .enumerate()
                .map(|(i, &k)| RankedEntry {
                    business_id: format!("b{i}"),
                    distance: Some(Kilometers::new(k).unwrap()),
                })
                .collect(),
        }
    }

    #[test]
    fn profile_examples() {
        let log = SearchLog::new(vec![list_with("q", &[1.0, 2.0, 3.0])], Scenario::Uniform, vec![1.0]).unwrap();
        let rows = rank_distance_profile(&log).unwrap();
        assert_eq!(
            rows.iter().map(|r| (r.rank, r.mean_km)).collect::<Vec<_>>(),
            vec![(1, 1.0), (2, 2.0), (3, 3.0)]
        );

        let log = SearchLog::new(
            vec![list_with("a", &[1.0]), list_with("b", &[3.0])],
            Scenario::Uniform,
            vec![0.5, 0.5],
        )
        .unwrap();
        let rows = rank_distance_profile(&log).unwrap();
        assert_eq!(rows, vec![ProfileRow { rank: 1, mean_km: 2.0, count: 2 }]);
    }

    #[test]
    fn truncated_lists_can_break_profile_monotonicity() {
        let log = SearchLog::new(
            vec![list_with("a", &[5.0]), list_with("b", &[1.0, 2.0])],
            Scenario::Uniform,
            vec![0.5, 0.5],
        )
        .unwrap();
        let rows = rank_distance_profile(&log).unwrap();
        assert!(rows[1].mean_km < rows[0].mean_km);
    }

    #[test]
    fn profile_rejects_recorded_rankings() {
        let rec = RankedResultRecord {
            query_id: "q1".into(),
            ranked_business_ids: vec!["b1".into()],
        };
        let log = SearchLog::new(vec![RankedList::from_recorded(&rec)], Scenario::Uniform, vec![1.0]).unwrap();
        assert!(matches!(rank_distance_profile(&log), Err(SimulateError::MissingDistances(_))));
    }

    #[test]
    fn searchlog_format() {
        let log = SearchLog::new(vec![list_with("q1", &[0.5, 1.25])], Scenario::Uniform, vec![1.0]).unwrap();
        let mut buf = Vec::new();
        write_searchlog(&log, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text,
            "{\"query_id\":\"q1\",\"entries\":[{\"id\":\"b0\",\"km\":0.5},{\"id\":\"b1\",\"km\":1.25}]}\n"
        );
        assert_eq!(load_searchlog(buf.as_slice()).unwrap(), log.results());
    }

    #[test]
    fn bad_weights_rejected() {
        assert!(SearchLog::new(vec![list_with("q", &[1.0])], Scenario::Uniform, vec![-1.0]).is_err());
        assert!(SearchLog::new(vec![list_with("q", &[1.0])], Scenario::Uniform, vec![]).is_err());
    }

    proptest! {
        #[test]
        fn rankings_sorted_unique_and_deterministic(seed in any::<u64>(), n in 0usize..40, limit in 1usize..30) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let businesses = (0..n)
                .map(|i| business(&format!("b{i}"), rng.gen_range(40.6..40.8), rng.gen_range(-74.1..-73.9)))
                .collect();
            let catalog = Catalog::new(businesses).unwrap();
            let q = query("q", rng.gen_range(40.6..40.8), rng.gen_range(-74.1..-73.9), 1.0);
            let list = rank_by_distance(&q, &catalog, nz(limit), Some(Kilometers::new(8.0).unwrap()));
            prop_assert!(list.len() <= limit);
            for w in list.entries.windows(2) {
                prop_assert!(w[0].distance.unwrap() <= w[1].distance.unwrap());
            }
            let mut seen = std::collections::HashSet::new();
            prop_assert!(list.entries.iter().all(|e| seen.insert(e.business_id.clone())));
            prop_assert_eq!(&rank_by_distance(&q, &catalog, nz(limit), Some(Kilometers::new(8.0).unwrap())), &list);
        }
    }
}
