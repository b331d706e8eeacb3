//! Agent-based simulation of a dock-based bike-sharing district.
//!
//! The pipeline runs from station snapshot files to a standard day profile ([`ingest`]), a
//! demand model ([`demand`]), seeded day-long runs ([`sim`]) and their indicators
//! ([`indicators`]), up to replicated sweeps and calibration ([`experiments`]).

pub mod demand;
pub mod experiments;
pub mod indicators;
pub mod ingest;
pub mod network;
pub mod scalar;
pub mod scenario;
pub mod sim;

pub use scalar::Scalar;

/// Double-precision instances of the scalar-generic types.
pub type Field = demand::SpatioTemporalField<f64>;
pub type KMeans = ingest::KMeans<f64>;
pub type DetourRatio = indicators::DetourRatio<f64>;
pub type HeterogeneityWeights = indicators::HeterogeneityWeights<f64>;
