//! Spherical-geometry primitives.
//!
//! All distances are great-circle distances on a sphere of radius
//! [`EARTH_RADIUS_KM`], computed with the haversine formula.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius in kilometers.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    LatitudeOutOfRange(f64),
    #[error("longitude {0} outside (-180, 180]")]
    LongitudeOutOfRange(f64),
    #[error("distance {0} is not a finite non-negative number")]
    InvalidDistance(f64),
    #[error("no candidate points to search")]
    EmptyCandidates,
}

/// A WGS84 coordinate in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !(-90.0..=90.0).contains(&lat) {
            return Err(GeoError::LatitudeOutOfRange(lat));
        }
        if !(lon > -180.0 && lon <= 180.0) {
            return Err(GeoError::LongitudeOutOfRange(lon));
        }
        // -0.0 and 0.0 compare equal; store one representation so hashing agrees.
        Ok(Self {
            lat: lat + 0.0,
            lon: lon + 0.0,
        })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    /// Bit pattern of the coordinates, usable as a hash key.
    pub(crate) fn key(&self) -> (u64, u64) {
        (self.lat.to_bits(), self.lon.to_bits())
    }

    /// Unit vector on the sphere.
    fn unit_vector(&self) -> [f64; 3] {
        let (sin_lat, cos_lat) = self.lat.to_radians().sin_cos();
        let (sin_lon, cos_lon) = self.lon.to_radians().sin_cos();
        [cos_lat * cos_lon, cos_lat * sin_lon, sin_lat]
    }
}

impl<'de> Deserialize<'de> for GeoPoint {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            lat: f64,
            lon: f64,
        }
        let raw = Raw::deserialize(deserializer)?;
        GeoPoint::new(raw.lat, raw.lon).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for GeoPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.lat, self.lon)
    }
}

/// A non-negative distance in kilometers.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize)]
#[serde(transparent)]
pub struct Kilometers(f64);

impl Kilometers {
    pub const ZERO: Kilometers = Kilometers(0.0);

    pub fn new(value: f64) -> Result<Self, GeoError> {
        if value.is_finite() && value >= 0.0 {
            Ok(Self(value + 0.0))
        } else {
            Err(GeoError::InvalidDistance(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl<'de> Deserialize<'de> for Kilometers {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = f64::deserialize(deserializer)?;
        Kilometers::new(value).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for Kilometers {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} km", self.0)
    }
}

/// Great-circle distance between two points.
pub fn haversine_distance(a: GeoPoint, b: GeoPoint) -> Kilometers {
    let lat_a = a.lat.to_radians();
    let lat_b = b.lat.to_radians();
    let half_dlat = (b.lat - a.lat).to_radians() / 2.0;
    let half_dlon = (b.lon - a.lon).to_radians() / 2.0;

    let h = half_dlat.sin().powi(2) + lat_a.cos() * lat_b.cos() * half_dlon.sin().powi(2);
    // Rounding can push h past 1 for antipodal pairs.
    let central = 2.0 * h.clamp(0.0, 1.0).sqrt().asin();
    Kilometers(EARTH_RADIUS_KM * central)
}

/// Index of the candidate closest to `point`, with its distance.
///
/// Exhaustive scan; ties go to the lowest index.
pub fn nearest(point: GeoPoint, candidates: &[GeoPoint]) -> Result<(usize, Kilometers), GeoError> {
    let mut best: Option<(usize, Kilometers)> = None;
    for (i, &c) in candidates.iter().enumerate() {
        let d = haversine_distance(point, c);
        match best {
            Some((_, best_d)) if d >= best_d => {}
            _ => best = Some((i, d)),
        }
    }
    best.ok_or(GeoError::EmptyCandidates)
}

/// Precomputed candidate set for repeated nearest-neighbor queries.
///
/// Gives the same answer as [`nearest`] but screens candidates by unit-vector
/// dot product first, evaluating the haversine formula only for candidates
/// within floating-point slack of the best chord.
#[derive(Debug, Clone)]
pub struct NearestIndex {
    points: Vec<GeoPoint>,
    xs: Vec<f64>,
    ys: Vec<f64>,
    zs: Vec<f64>,
}

// Absolute and relative slack on chord length (unit sphere). Both are far
// larger than the rounding error of the dot-product route.
const CHORD_ABS_SLACK: f64 = 1e-12;
const CHORD_REL_SLACK: f64 = 1e-9;

impl NearestIndex {
    pub fn new(candidates: &[GeoPoint]) -> Result<Self, GeoError> {
        if candidates.is_empty() {
            return Err(GeoError::EmptyCandidates);
        }
        let n = candidates.len();
        let (mut xs, mut ys, mut zs) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for c in candidates {
            let [x, y, z] = c.unit_vector();
            xs.push(x);
            ys.push(y);
            zs.push(z);
        }
        Ok(Self {
            points: candidates.to_vec(),
            xs,
            ys,
            zs,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[GeoPoint] {
        &self.points
    }

    pub fn nearest(&self, point: GeoPoint) -> (usize, Kilometers) {
        let [px, py, pz] = point.unit_vector();
        let mut best_dot = f64::NEG_INFINITY;
        for i in 0..self.xs.len() {
            let dot = px * self.xs[i] + py * self.ys[i] + pz * self.zs[i];
            if dot > best_dot {
                best_dot = dot;
            }
        }
        // chord^2 = 2 - 2 dot
        let best_chord = (2.0 - 2.0 * best_dot).max(0.0).sqrt();
        let limit_chord = best_chord * (1.0 + CHORD_REL_SLACK) + CHORD_ABS_SLACK;
        let min_dot = 1.0 - limit_chord * limit_chord / 2.0;

        let mut best: Option<(usize, Kilometers)> = None;
        for i in 0..self.xs.len() {
            let dot = px * self.xs[i] + py * self.ys[i] + pz * self.zs[i];
            if dot < min_dot {
                continue;
            }
            let d = haversine_distance(point, self.points[i]);
            match best {
                Some((_, best_d)) if d >= best_d => {}
                _ => best = Some((i, d)),
            }
        }
        best.expect("the best-dot candidate always passes the screen")
    }
}
