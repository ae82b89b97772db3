//! Location queries derived from check-in data.
//!
//! Check-ins are clustered with k-means; cluster centroids and named
//! landmarks become query origins, and each query's popularity is the share
//! of check-ins whose nearest query it is.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::geo::{haversine_distance, GeoPoint, Kilometers, NearestIndex, EARTH_RADIUS_KM};
use crate::ingest::{IngestError, LandmarkRecord, RowError};

pub const QUERIES_HEADER: &[&str] = &["id", "kind", "lat", "lon", "popularity"];

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("no points to cluster")]
    EmptyInput,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("cannot form {k} clusters from {points} points")]
    TooFewPoints { points: usize, k: usize },
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("model assigns {assigned} points but {points} were given")]
    LengthMismatch { assigned: usize, points: usize },
    #[error("no location queries")]
    EmptyQueries,
    #[error("duplicate query id `{0}`")]
    DuplicateQueryId(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once no centroid moves this far (km) in an iteration.
    pub tol_km: f64,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            max_iter: 100,
            tol_km: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub centroids: Vec<GeoPoint>,
    /// Centroid index for each input point.
    pub assignment: Vec<usize>,
    /// Sum of squared haversine distances (km²) to assigned centroids.
    pub inertia: f64,
    /// Inertia after seeding and after each accepted iteration.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }
}

/// Unit vectors of a point set, stored column-wise.
struct UnitVectors {
    xs: Vec<f64>,
    ys: Vec<f64>,
    zs: Vec<f64>,
}

impl UnitVectors {
    fn new(points: &[GeoPoint]) -> Self {
        let mut xs = Vec::with_capacity(points.len());
        let mut ys = Vec::with_capacity(points.len());
        let mut zs = Vec::with_capacity(points.len());
        for p in points {
            let (sin_lat, cos_lat) = p.lat().to_radians().sin_cos();
            let (sin_lon, cos_lon) = p.lon().to_radians().sin_cos();
            xs.push(cos_lat * cos_lon);
            ys.push(cos_lat * sin_lon);
            zs.push(sin_lat);
        }
        Self { xs, ys, zs }
    }

    /// Squared chord length on the unit sphere between point `i` and point
    /// `j` of `other`.
    fn unit_chord_sq(&self, i: usize, other: &UnitVectors, j: usize) -> f64 {
        let dx = self.xs[i] - other.xs[j];
        let dy = self.ys[i] - other.ys[j];
        let dz = self.zs[i] - other.zs[j];
        dx * dx + dy * dy + dz * dz
    }

    /// Squared chord length (km²) between points `i` and `j` of `other`.
    fn chord_sq(&self, i: usize, other: &UnitVectors, j: usize) -> f64 {
        self.unit_chord_sq(i, other, j) * EARTH_RADIUS_KM * EARTH_RADIUS_KM
    }
}

/// k-means++ seeding. Sampling weights are squared chord lengths, which order
/// points exactly as squared great-circle distances do.
fn seed_centroids(points: &[GeoPoint], units: &UnitVectors, k: usize, rng: &mut ChaCha8Rng) -> Vec<GeoPoint> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.gen_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first]];
    let mut weights: Vec<f64> = (0..n).map(|i| units.chord_sq(i, units, first)).collect();

    while centroids.len() < k {
        let total: f64 = weights.iter().sum();
        let next = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in weights.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total weight has a positive entry")
        } else {
            // Every remaining point duplicates a chosen one.
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.gen_range(0..free.len())]
        };
        chosen[next] = true;
        centroids.push(points[next]);
        for (i, w) in weights.iter_mut().enumerate() {
            let d = units.chord_sq(i, units, next);
            if d < *w {
                *w = d;
            }
        }
    }
    centroids
}

// Slack on unit-sphere chord lengths when deciding that one centroid is
// strictly nearer than another; far above the rounding error of the chord
// and haversine computations.
const CHORD_REL_SLACK: f64 = 1e-9;
const CHORD_ABS_SLACK: f64 = 1e-12;

fn inflate(chord: f64) -> f64 {
    chord * (1.0 + CHORD_REL_SLACK) + CHORD_ABS_SLACK
}

/// Nearest-centroid assignment plus the bounds that let the next iteration
/// skip most of the search. `lower[i]` is a unit-sphere chord length no
/// greater than the distance from point `i` to any centroid other than its
/// own; a point whose own centroid is nearer than that by more than the slack
/// keeps it without a scan.
struct Assignment {
    assignment: Vec<usize>,
    dists: Vec<f64>,
    inertia: f64,
    lower: Vec<f64>,
}

/// Exhaustive search for point `i`: the haversine-nearest centroid (ties to
/// the lower index) and a lower bound on the chord to every other centroid.
fn full_search(i: usize, point: GeoPoint, units: &UnitVectors, centroids: &[GeoPoint], cunits: &UnitVectors) -> (usize, f64) {
    let (mut best, mut best_sq, mut second_sq) = (0, f64::INFINITY, f64::INFINITY);
    for c in 0..centroids.len() {
        let d = units.unit_chord_sq(i, cunits, c);
        if d < best_sq {
            second_sq = best_sq;
            best_sq = d;
            best = c;
        } else if d < second_sq {
            second_sq = d;
        }
    }
    let best_chord = best_sq.sqrt();
    let limit = inflate(best_chord);
    if second_sq.sqrt() > limit {
        return (best, second_sq.sqrt());
    }
    // Near-tie: settle it by haversine distance, as an exhaustive scan would.
    let mut winner: Option<(usize, f64)> = None;
    for (c, &centroid) in centroids.iter().enumerate() {
        if units.unit_chord_sq(i, cunits, c).sqrt() > limit {
            continue;
        }
        let d = haversine_distance(point, centroid).value();
        if winner.is_none_or(|(_, wd)| d < wd) {
            winner = Some((c, d));
        }
    }
    let (w, _) = winner.expect("the best chord passes its own limit");
    (w, best_chord)
}

impl Assignment {
    fn initial(points: &[GeoPoint], units: &UnitVectors, centroids: &[GeoPoint], cunits: &UnitVectors) -> Self {
        let n = points.len();
        let mut state = Self {
            assignment: Vec::with_capacity(n),
            dists: Vec::with_capacity(n),
            inertia: 0.0,
            lower: Vec::with_capacity(n),
        };
        for (i, &p) in points.iter().enumerate() {
            let (c, l) = full_search(i, p, units, centroids, cunits);
            let d = haversine_distance(p, centroids[c]).value();
            state.assignment.push(c);
            state.dists.push(d);
            state.inertia += d * d;
            state.lower.push(l);
        }
        state
    }

    /// Assignment to `centroids`, which replace `previous` index for index.
    fn reassign(
        &self,
        points: &[GeoPoint],
        units: &UnitVectors,
        previous: &UnitVectors,
        centroids: &[GeoPoint],
        cunits: &UnitVectors,
    ) -> Self {
        let k = centroids.len();
        let drift: Vec<f64> = (0..k).map(|c| inflate(previous.unit_chord_sq(c, cunits, c).sqrt())).collect();
        let (mut max_c, mut max1, mut max2) = (0, 0.0f64, 0.0f64);
        for (c, &d) in drift.iter().enumerate() {
            if d > max1 {
                max2 = max1;
                max1 = d;
                max_c = c;
            } else if d > max2 {
                max2 = d;
            }
        }

        let mut next = Self {
            assignment: self.assignment.clone(),
            dists: Vec::with_capacity(points.len()),
            inertia: 0.0,
            lower: self.lower.clone(),
        };
        for (i, &p) in points.iter().enumerate() {
            let a = next.assignment[i];
            next.lower[i] -= if a == max_c { max2 } else { max1 };
            let own = units.unit_chord_sq(i, cunits, a).sqrt();
            if inflate(own) >= next.lower[i] {
                let (c, l) = full_search(i, p, units, centroids, cunits);
                next.assignment[i] = c;
                next.lower[i] = l;
            }
            let d = haversine_distance(p, centroids[next.assignment[i]]).value();
            next.dists.push(d);
            next.inertia += d * d;
        }
        next
    }
}

/// Moves each centroid to the arithmetic mean of its members' lat/lon, unless
/// that would raise the cluster's squared-haversine cost. Empty clusters keep
/// their centroid.
fn update_centroids(points: &[GeoPoint], assignment: &[usize], dists: &[f64], centroids: &[GeoPoint]) -> Vec<GeoPoint> {
    let k = centroids.len();
    let mut sums = vec![(0.0f64, 0.0f64, 0usize); k];
    for (p, &c) in points.iter().zip(assignment) {
        sums[c].0 += p.lat();
        sums[c].1 += p.lon();
        sums[c].2 += 1;
    }
    let means: Vec<Option<GeoPoint>> = sums
        .iter()
        .map(|&(lat, lon, n)| {
            (n > 0).then(|| {
                let n = n as f64;
                GeoPoint::new(lat / n, lon / n).expect("mean of valid coordinates is valid")
            })
        })
        .collect();

    let mut old_cost = vec![0.0f64; k];
    let mut new_cost = vec![0.0f64; k];
    for ((&p, &c), &d) in points.iter().zip(assignment).zip(dists) {
        if let Some(m) = means[c] {
            old_cost[c] += d * d;
            let nd = haversine_distance(p, m).value();
            new_cost[c] += nd * nd;
        }
    }

    (0..k)
        .map(|c| match means[c] {
            Some(m) if new_cost[c] <= old_cost[c] => m,
            _ => centroids[c],
        })
        .collect()
}

/// Lloyd's k-means on the sphere with seeded k-means++ initialization.
///
/// Points are assigned by haversine distance; centroids move to the
/// arithmetic mean of member coordinates (a close approximation at city
/// scale). Inertia never increases between recorded iterations: an update
/// that would raise it ends the run instead.
pub fn kmeans(points: &[GeoPoint], params: &KMeansParams) -> Result<ClusterModel, QueryError> {
    if points.is_empty() {
        return Err(QueryError::EmptyInput);
    }
    if params.k == 0 {
        return Err(QueryError::ZeroK);
    }
    if points.len() < params.k {
        return Err(QueryError::TooFewPoints {
            points: points.len(),
            k: params.k,
        });
    }
    if params.tol_km.is_nan() || params.tol_km <= 0.0 {
        return Err(QueryError::InvalidTolerance(params.tol_km));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let units = UnitVectors::new(points);
    let mut centroids = seed_centroids(points, &units, params.k, &mut rng);
    let mut cunits = UnitVectors::new(&centroids);
    let mut state = Assignment::initial(points, &units, &centroids, &cunits);
    let mut history = vec![state.inertia];
    let mut iterations = 0;

    while iterations < params.max_iter {
        let updated = update_centroids(points, &state.assignment, &state.dists, &centroids);
        let updated_units = UnitVectors::new(&updated);
        let next = state.reassign(points, &units, &cunits, &updated, &updated_units);
        if next.inertia > state.inertia {
            break;
        }
        let shift = centroids
            .iter()
            .zip(&updated)
            .map(|(&a, &b)| haversine_distance(a, b).value())
            .fold(0.0, f64::max);

        centroids = updated;
        cunits = updated_units;
        state = next;
        history.push(state.inertia);
        iterations += 1;
        if shift < params.tol_km {
            break;
        }
    }

    Ok(ClusterModel {
        centroids,
        assignment: state.assignment,
        inertia: state.inertia,
        inertia_history: history,
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterRadii {
    /// Mean member distance to the centroid; 0 for empty clusters.
    pub per_cluster: Vec<Kilometers>,
    /// Largest member distance to the centroid; 0 for empty clusters.
    pub max_per_cluster: Vec<Kilometers>,
    /// Mean of `per_cluster` over non-empty clusters.
    pub mean_radius: Kilometers,
}

pub fn cluster_radii(model: &ClusterModel, points: &[GeoPoint]) -> Result<ClusterRadii, QueryError> {
    if model.assignment.len() != points.len() {
        return Err(QueryError::LengthMismatch {
            assigned: model.assignment.len(),
            points: points.len(),
        });
    }
    let k = model.k();
    let mut sum = vec![0.0f64; k];
    let mut max = vec![0.0f64; k];
    let mut count = vec![0usize; k];
    for (&p, &c) in points.iter().zip(&model.assignment) {
        let d = haversine_distance(p, model.centroids[c]).value();
        sum[c] += d;
        max[c] = max[c].max(d);
        count[c] += 1;
    }
    let per_cluster: Vec<f64> = sum
        .iter()
        .zip(&count)
        .map(|(&s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
        .collect();
    let non_empty: Vec<f64> = per_cluster
        .iter()
        .zip(&count)
        .filter(|(_, &n)| n > 0)
        .map(|(&r, _)| r)
        .collect();
    let mean = if non_empty.is_empty() {
        0.0
    } else {
        non_empty.iter().sum::<f64>() / non_empty.len() as f64
    };
    let km = |v: f64| Kilometers::new(v).expect("distances are non-negative");
    Ok(ClusterRadii {
        per_cluster: per_cluster.into_iter().map(km).collect(),
        max_per_cluster: max.into_iter().map(km).collect(),
        mean_radius: km(mean),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryKind {
    Centroid,
    Landmark,
}

impl QueryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            QueryKind::Centroid => "centroid",
            QueryKind::Landmark => "landmark",
        }
    }
}

impl fmt::Display for QueryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QueryKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "centroid" => Ok(QueryKind::Centroid),
            "landmark" => Ok(QueryKind::Landmark),
            other => Err(format!("unknown query kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocationQuery {
    pub id: String,
    pub point: GeoPoint,
    pub kind: QueryKind,
    /// Share of check-ins nearest to this query, in [0, 1].
    pub popularity: f64,
}

/// One query per centroid (`c0..`) followed by one per landmark (`l0..`),
/// all with zero popularity. Landmarks that coincide with a centroid are kept.
pub fn build_location_queries(centroids: &[GeoPoint], landmarks: &[LandmarkRecord]) -> Vec<LocationQuery> {
    let centroid_queries = centroids.iter().enumerate().map(|(i, &point)| LocationQuery {
        id: format!("c{i}"),
        point,
        kind: QueryKind::Centroid,
        popularity: 0.0,
    });
    let landmark_queries = landmarks.iter().enumerate().map(|(i, l)| LocationQuery {
        id: format!("l{i}"),
        point: l.point,
        kind: QueryKind::Landmark,
        popularity: 0.0,
    });
    centroid_queries.chain(landmark_queries).collect()
}

/// Query id to popularity, in query order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PopularityMap {
    fractions: IndexMap<String, f64>,
    counts: Vec<usize>,
    total: usize,
}

impl PopularityMap {
    pub fn get(&self, query_id: &str) -> Option<f64> {
        self.fractions.get(query_id).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.fractions.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.fractions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fractions.is_empty()
    }

    /// Check-ins assigned to each query, in query order.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn total_checkins(&self) -> usize {
        self.total
    }

    pub fn to_hash_map(&self) -> HashMap<String, f64> {
        self.fractions.iter().map(|(k, &v)| (k.clone(), v)).collect()
    }

    /// Writes each query's popularity into the query set.
    pub fn apply(&self, queries: &mut [LocationQuery]) {
        for q in queries {
            q.popularity = self.get(&q.id).unwrap_or(0.0);
        }
    }
}

/// Share of check-ins whose nearest query (ties to the earlier query) is each
/// query. Check-ins should already be deduplicated. With no check-ins every
/// share is zero.
pub fn popularity_scores(checkins: &[GeoPoint], queries: &[LocationQuery]) -> Result<PopularityMap, QueryError> {
    if queries.is_empty() {
        return Err(QueryError::EmptyQueries);
    }
    let mut ids = HashSet::new();
    if let Some(dup) = queries.iter().find(|q| !ids.insert(q.id.as_str())) {
        return Err(QueryError::DuplicateQueryId(dup.id.clone()));
    }
    let points: Vec<GeoPoint> = queries.iter().map(|q| q.point).collect();
    let index = NearestIndex::new(&points).map_err(|_| QueryError::EmptyQueries)?;
    let mut counts = vec![0usize; queries.len()];
    for &c in checkins {
        counts[index.nearest(c).0] += 1;
    }
    let total = checkins.len();
    let fractions = queries
        .iter()
        .zip(&counts)
        .map(|(q, &n)| {
            let f = if total == 0 { 0.0 } else { n as f64 / total as f64 };
            (q.id.clone(), f)
        })
        .collect();
    Ok(PopularityMap {
        fractions,
        counts,
        total,
    })
}

pub fn write_queries<W: Write>(queries: &[LocationQuery], sink: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(QUERIES_HEADER)?;
    for q in queries {
        w.write_record([
            q.id.clone(),
            q.kind.to_string(),
            q.point.lat().to_string(),
            q.point.lon().to_string(),
            q.popularity.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `queries.csv` file as written by [`write_queries`].
pub fn load_queries<R: Read>(source: R) -> Result<Vec<LocationQuery>, QueryError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let header: Vec<String> = reader
        .headers()
        .map_err(IngestError::from)?
        .iter()
        .map(str::to_string)
        .collect();
    if header != QUERIES_HEADER {
        return Err(IngestError::Header {
            expected: QUERIES_HEADER.join(","),
            found: header.join(","),
        }
        .into());
    }
    let mut queries = Vec::new();
    let mut ids = HashSet::new();
    for rec in reader.records() {
        let rec = rec.map_err(IngestError::from)?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |message: String| IngestError::Row(RowError { line, message });
        let kind: QueryKind = rec[1].parse().map_err(bad)?;
        let num = |s: &str, name: &str| -> Result<f64, IngestError> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| IngestError::Row(RowError {
                    line,
                    message: format!("{name}: `{s}` is not a number"),
                }))
        };
        let point = GeoPoint::new(num(&rec[2], "lat")?, num(&rec[3], "lon")?)
            .map_err(|e| IngestError::Row(RowError { line, message: e.to_string() }))?;
        let popularity = num(&rec[4], "popularity")?;
        if !(0.0..=1.0).contains(&popularity) {
            return Err(IngestError::Row(RowError {
                line,
                message: format!("popularity {popularity} outside [0, 1]"),
            })
            .into());
        }
        if !ids.insert(rec[0].to_string()) {
            return Err(QueryError::DuplicateQueryId(rec[0].to_string()));
        }
        queries.push(LocationQuery {
            id: rec[0].to_string(),
            point,
            kind,
            popularity,
        });
    }
    Ok(queries)
}
