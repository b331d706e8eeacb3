//! Snapshot ingestion and standard-day extraction.

pub mod kmeans;
pub mod snapshot;
pub mod standard_day;

use chrono::NaiveDate;
use thiserror::Error;

use crate::network::StationId;

pub use self::kmeans::{kmeans, KMeans};
pub use self::snapshot::{
    build_profiles, parse_snapshots, read_records, BinConfig, DayProfile, SnapshotFormat,
    SnapshotRecord,
};
pub use self::standard_day::{reduce_days, ReduceConfig, StandardDay};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("line {line}: station {station} reports zero capacity")]
    CapacityZero { line: usize, station: StationId },
    #[error("line {line}: timestamp goes backwards")]
    NonMonotonicTimestamps { line: usize },
    #[error("no points to cluster")]
    EmptyInput,
    #[error("cannot form {k} clusters from {points} points")]
    InvalidClusterCount { k: usize, points: usize },
    #[error("points have different dimensions")]
    DimensionMismatch,
    #[error("points contain non-finite values")]
    NonFinite,
    #[error("need at least 2 day profiles, got {0}")]
    InsufficientDays(usize),
    #[error("profile for {0} has a different station set or bin count")]
    MismatchedProfiles(NaiveDate),
    #[error("standard day matrix is missing bins for station {0}")]
    IncompleteMatrix(StationId),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
