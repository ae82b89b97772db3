//! Exposure bias auditing for location-based ("near me") ranked retrieval.
//!
//! The pipeline turns check-in data into weighted location queries, simulates
//! distance-ordered searches over a business catalog, scores each ranking
//! with a truncated geometric attention model and compares the exposure each
//! business receives with its rating.
//!
//! | Module | Role |
//! |--------|------|
//! | [`geo`] | coordinates, haversine distance, nearest neighbor |
//! | [`ingest`] | CSV / JSON-lines loaders and writers |
//! | [`queries`] | k-means over check-ins, location queries, popularity |
//! | [`simulate`] | distance ranking, search campaigns, rank/distance profile |
//! | [`bias`] | attention model, exposure ledger, bias measures |
//! | [`audit`] | HE/LE classification, disparity tables, full pipeline |

pub mod audit;
pub mod bias;
pub mod geo;
pub mod ingest;
pub mod queries;
pub mod simulate;
