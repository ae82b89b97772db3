//! File ingestion for check-ins, landmarks, business catalogs, click logs and
//! recorded rankings.
//!
//! CSV inputs are UTF-8, comma-delimited, with an exact header row. Rankings
//! are JSON lines. Every loader runs in one of two modes: fail-fast aborts on
//! the first bad row, lenient skips it and records a [`RowError`].

use std::collections::HashSet;
use std::io::{self, BufRead, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::GeoPoint;
use crate::simulate::Catalog;

pub const CHECKINS_HEADER: &[&str] = &["venue_id", "lat", "lon", "timestamp"];
pub const LANDMARKS_HEADER: &[&str] = &["name", "lat", "lon"];
pub const BUSINESSES_HEADER: &[&str] = &[
    "id",
    "name",
    "lat",
    "lon",
    "mean_rating",
    "rating_scale_max",
    "platform",
];
pub const CLICKS_HEADER: &[&str] = &["position", "clicks"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LoadMode {
    #[default]
    FailFast,
    Lenient,
}

/// A rejected data row. `line` is the 1-based line number in the source.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad header: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("{0}")]
    Row(RowError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("duplicate business id `{0}`")]
    DuplicateBusinessId(String),
}

/// Records accepted by a loader plus the rows skipped in lenient mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Loaded<T> {
    pub records: Vec<T>,
    pub skipped: Vec<RowError>,
}

impl<T> Loaded<T> {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct CheckInKey(Option<String>, (u64, u64), Option<String>);

#[derive(Debug, Clone, PartialEq)]
pub struct CheckInRecord {
    pub venue_id: Option<String>,
    pub point: GeoPoint,
    pub timestamp: Option<String>,
}

impl CheckInRecord {
    fn key(&self) -> CheckInKey {
        CheckInKey(self.venue_id.clone(), self.point.key(), self.timestamp.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkRecord {
    pub name: String,
    pub point: GeoPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BusinessRecord {
    pub id: String,
    pub name: String,
    pub point: GeoPoint,
    pub mean_rating: f64,
    pub rating_scale_max: f64,
    pub platform: String,
}

impl BusinessRecord {
    /// Mean rating scaled to [0, 1].
    pub fn normalized_rating(&self) -> f64 {
        self.mean_rating / self.rating_scale_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClickLogRecord {
    pub position: u32,
    pub clicks: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedResultRecord {
    pub query_id: String,
    #[serde(rename = "ranking")]
    pub ranked_business_ids: Vec<String>,
}

/// Drops repeated check-ins, keeping the first occurrence of each full
/// `(venue_id, point, timestamp)` tuple.
pub fn dedup_checkins(records: &[CheckInRecord]) -> Vec<CheckInRecord> {
    let mut seen = HashSet::with_capacity(records.len());
    records
        .iter()
        .filter(|r| seen.insert(r.key()))
        .cloned()
        .collect()
}

fn row_err(line: u64, message: impl Into<String>) -> RowError {
    RowError {
        line,
        message: message.into(),
    }
}

fn parse_f64(field: &str, name: &str, line: u64) -> Result<f64, RowError> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| row_err(line, format!("{name}: `{field}` is not a number")))?;
    if !v.is_finite() {
        return Err(row_err(line, format!("{name}: `{field}` is not finite")));
    }
    Ok(v)
}

fn parse_point(lat: &str, lon: &str, line: u64) -> Result<GeoPoint, RowError> {
    let lat = parse_f64(lat, "lat", line)?;
    let lon = parse_f64(lon, "lon", line)?;
    GeoPoint::new(lat, lon).map_err(|e| row_err(line, e.to_string()))
}

fn optional(field: &str) -> Option<String> {
    if field.is_empty() {
        None
    } else {
        Some(field.to_string())
    }
}

/// Reads a CSV stream with an exact header, handing each data row to `parse`.
fn load_csv<R, T, F>(source: R, header: &[&str], mode: LoadMode, mut parse: F) -> Result<Loaded<T>, IngestError>
where
    R: Read,
    F: FnMut(&csv::StringRecord, u64) -> Result<T, RowError>,
{
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(source);

    let found = reader.headers()?.clone();
    let found_fields: Vec<&str> = found.iter().collect();
    // Tolerate a UTF-8 byte order mark on the first field.
    let first_ok = found_fields
        .first()
        .map(|f| f.trim_start_matches('\u{feff}'))
        .zip(header.first().copied())
        .map_or(header.is_empty(), |(a, b)| a == b);
    if found_fields.len() != header.len() || !first_ok || found_fields[1..] != header[1..] {
        return Err(IngestError::Header {
            expected: header.join(","),
            found: found_fields.join(","),
        });
    }

    let mut loaded = Loaded {
        records: Vec::new(),
        skipped: Vec::new(),
    };
    let mut record = csv::StringRecord::new();
    loop {
        let line = reader.position().line();
        let outcome = match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {
                let line = record.position().map_or(line, |p| p.line());
                if record.len() != header.len() {
                    Err(row_err(
                        line,
                        format!("expected {} fields, found {}", header.len(), record.len()),
                    ))
                } else {
                    parse(&record, line)
                }
            }
            Err(e) => match e.kind() {
                csv::ErrorKind::Io(_) => return Err(e.into()),
                _ => Err(row_err(line, e.to_string())),
            },
        };
        match outcome {
            Ok(r) => loaded.records.push(r),
            Err(e) => match mode {
                LoadMode::FailFast => return Err(IngestError::Row(e)),
                LoadMode::Lenient => loaded.skipped.push(e),
            },
        }
    }
    Ok(loaded)
}

pub fn load_checkins<R: Read>(source: R, mode: LoadMode) -> Result<Loaded<CheckInRecord>, IngestError> {
    load_csv(source, CHECKINS_HEADER, mode, |rec, line| {
        Ok(CheckInRecord {
            venue_id: optional(&rec[0]),
            point: parse_point(&rec[1], &rec[2], line)?,
            timestamp: optional(&rec[3]),
        })
    })
}

pub fn load_landmarks<R: Read>(source: R, mode: LoadMode) -> Result<Loaded<LandmarkRecord>, IngestError> {
    load_csv(source, LANDMARKS_HEADER, mode, |rec, line| {
        if rec[0].trim().is_empty() {
            return Err(row_err(line, "landmark name is blank"));
        }
        Ok(LandmarkRecord {
            name: rec[0].to_string(),
            point: parse_point(&rec[1], &rec[2], line)?,
        })
    })
}

/// Loads a business catalog. Duplicate ids are row errors naming the id.
pub fn load_businesses<R: Read>(source: R, mode: LoadMode) -> Result<(Catalog, Vec<RowError>), IngestError> {
    let mut ids = HashSet::new();
    let loaded = load_csv(source, BUSINESSES_HEADER, mode, |rec, line| {
        let id = rec[0].to_string();
        if id.trim().is_empty() {
            return Err(row_err(line, "business id is blank"));
        }
        if ids.contains(&id) {
            return Err(row_err(line, format!("duplicate business id `{id}`")));
        }
        let point = parse_point(&rec[2], &rec[3], line)?;
        let mean_rating = parse_f64(&rec[4], "mean_rating", line)?;
        let rating_scale_max = parse_f64(&rec[5], "rating_scale_max", line)?;
        if rating_scale_max <= 0.0 {
            return Err(row_err(line, format!("rating_scale_max {rating_scale_max} must be positive")));
        }
        if mean_rating < 0.0 {
            return Err(row_err(line, format!("mean_rating {mean_rating} is negative")));
        }
        if mean_rating > rating_scale_max {
            return Err(row_err(
                line,
                format!("mean_rating {mean_rating} exceeds rating_scale_max {rating_scale_max}"),
            ));
        }
        ids.insert(id.clone());
        Ok(BusinessRecord {
            id,
            name: rec[1].to_string(),
            point,
            mean_rating,
            rating_scale_max,
            platform: rec[6].to_string(),
        })
    })?;
    let catalog = Catalog::new(loaded.records).map_err(|e| IngestError::DuplicateBusinessId(e.0))?;
    Ok((catalog, loaded.skipped))
}

/// Loads a click log, sorted by position.
pub fn load_click_log<R: Read>(source: R, mode: LoadMode) -> Result<Loaded<ClickLogRecord>, IngestError> {
    let mut positions = HashSet::new();
    let mut loaded = load_csv(source, CLICKS_HEADER, mode, |rec, line| {
        let position: u32 = rec[0]
            .trim()
            .parse()
            .map_err(|_| row_err(line, format!("position `{}` is not a positive integer", &rec[0])))?;
        if position == 0 {
            return Err(row_err(line, "position must be at least 1"));
        }
        let clicks: i64 = rec[1]
            .trim()
            .parse()
            .map_err(|_| row_err(line, format!("clicks `{}` is not an integer", &rec[1])))?;
        if clicks < 0 {
            return Err(row_err(line, format!("negative clicks {clicks}")));
        }
        if !positions.insert(position) {
            return Err(row_err(line, format!("duplicate position {position}")));
        }
        Ok(ClickLogRecord {
            position,
            clicks: clicks as u64,
        })
    })?;
    loaded.records.sort_by_key(|r| r.position);
    Ok(loaded)
}

/// Loads JSON-lines rankings. Blank lines are ignored.
pub fn load_ranked_results<R: BufRead>(source: R, mode: LoadMode) -> Result<Loaded<RankedResultRecord>, IngestError> {
    let mut loaded = Loaded {
        records: Vec::new(),
        skipped: Vec::new(),
    };
    for (i, line) in source.lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let outcome = serde_json::from_str::<RankedResultRecord>(&line)
            .map_err(|e| row_err(line_no, format!("malformed ranking: {e}")))
            .and_then(|r| {
                let mut seen = HashSet::new();
                match r.ranked_business_ids.iter().find(|id| !seen.insert(id.as_str())) {
                    Some(dup) => Err(row_err(line_no, format!("business `{dup}` ranked twice"))),
                    None => Ok(r),
                }
            });
        match outcome {
            Ok(r) => loaded.records.push(r),
            Err(e) => match mode {
                LoadMode::FailFast => return Err(IngestError::Row(e)),
                LoadMode::Lenient => loaded.skipped.push(e),
            },
        }
    }
    Ok(loaded)
}

pub fn write_checkins<W: Write>(records: &[CheckInRecord], sink: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(CHECKINS_HEADER)?;
    for r in records {
        w.write_record([
            r.venue_id.as_deref().unwrap_or(""),
            &r.point.lat().to_string(),
            &r.point.lon().to_string(),
            r.timestamp.as_deref().unwrap_or(""),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_landmarks<W: Write>(records: &[LandmarkRecord], sink: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(LANDMARKS_HEADER)?;
    for r in records {
        w.write_record([&r.name, &r.point.lat().to_string(), &r.point.lon().to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_businesses<W: Write>(catalog: &Catalog, sink: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(BUSINESSES_HEADER)?;
    for b in catalog.businesses() {
        w.write_record([
            &b.id,
            &b.name,
            &b.point.lat().to_string(),
            &b.point.lon().to_string(),
            &b.mean_rating.to_string(),
            &b.rating_scale_max.to_string(),
            &b.platform,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_click_log<W: Write>(records: &[ClickLogRecord], sink: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(CLICKS_HEADER)?;
    for r in records {
        w.write_record([r.position.to_string(), r.clicks.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ranked_results<W: Write>(records: &[RankedResultRecord], mut sink: W) -> Result<(), IngestError> {
    for r in records {
        let line = serde_json::to_string(r).map_err(io::Error::other)?;
        writeln!(sink, "{line}")?;
    }
    Ok(())
}
