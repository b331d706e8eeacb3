//! Demand model: origin/destination fields plus the boundary entry and departure processes.

mod boundary;
mod events;
mod field;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{Point, StreetNetwork};
use crate::scalar::Scalar;

pub use self::boundary::{build_boundary_processes, BoundaryProcess};
pub use self::events::{infer_events, StationEvents};
pub use self::field::{estimate_field, FieldSampler, Grid, SpatioTemporalField, WeightedEvent};

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_GRID_CELL: f64 = 50.0;

#[derive(Debug, Error)]
pub enum DemandError {
    #[error("kernel size sigma must be positive, got {0}")]
    InvalidSigma(f64),
    #[error("unsupported demand model version {0}")]
    Version(u32),
    #[error("station {0} in the demand events is not in the network")]
    UnknownStation(crate::network::StationId),
    #[error("demand model has {found} entry laws but the network has {expected} boundary points")]
    EntryCount { expected: usize, found: usize },
    #[error("malformed demand model: {0}")]
    Malformed(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Inverse kernel size; larger `sigma` means tighter kernels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub sigma: f64,
}

impl KernelSpec {
    pub fn new(sigma: f64) -> Result<Self, DemandError> {
        if sigma.is_finite() && sigma > 0.0 {
            Ok(Self { sigma })
        } else {
            Err(DemandError::InvalidSigma(sigma))
        }
    }

    /// Kernel bandwidth in meters: `diameter / (2 sigma)`.
    pub fn bandwidth(&self, diameter: f64) -> f64 {
        diameter / (2.0 * self.sigma)
    }

    /// Kernels wider than the whole district give quasi-uniform fields.
    pub fn is_degenerate(&self, diameter: f64) -> bool {
        self.bandwidth(diameter) > diameter
    }
}

/// Everything needed to initiate travels during a run. Immutable once built.
#[derive(Clone, Debug)]
pub struct DemandModel {
    pub kernel: KernelSpec,
    pub bandwidth: f64,
    pub events: StationEvents,
    pub origin: SpatioTemporalField<f64>,
    pub destination: SpatioTemporalField<f64>,
    pub boundary: BoundaryProcess,
    origin_sampler: FieldSampler,
    destination_sampler: FieldSampler,
}

fn station_event_points(
    events: &StationEvents,
    counts: &[Vec<u32>],
    net: &StreetNetwork,
) -> Result<Vec<WeightedEvent>, DemandError> {
    let mut out = Vec::new();
    for (s, id) in events.station_ids.iter().enumerate() {
        let idx = net
            .station_index(*id)
            .ok_or(DemandError::UnknownStation(*id))?;
        let position = net.position(net.stations()[idx].node);
        for (bin, &n) in counts[s].iter().enumerate() {
            if n > 0 {
                out.push(WeightedEvent {
                    position,
                    bin,
                    weight: n as f64,
                });
            }
        }
    }
    Ok(out)
}

/// Fits O/D fields of any scalar type from station events (departures and arrivals).
pub fn fit_fields<S: Scalar>(
    events: &StationEvents,
    net: &StreetNetwork,
    kernel: KernelSpec,
    grid_cell: f64,
) -> Result<(SpatioTemporalField<S>, SpatioTemporalField<S>), DemandError> {
    let grid = Grid::covering(net.bounds(), grid_cell);
    let h = S::of(kernel.bandwidth(net.diameter()));
    let origins = station_event_points(events, &events.departures, net)?;
    let destinations = station_event_points(events, &events.arrivals, net)?;
    Ok((
        estimate_field(&origins, events.bins(), &grid, h),
        estimate_field(&destinations, events.bins(), &grid, h),
    ))
}

impl DemandModel {
    pub fn fit(
        events: StationEvents,
        net: &StreetNetwork,
        kernel: KernelSpec,
        grid_cell: f64,
        mean_speed: f64,
    ) -> Result<Self, DemandError> {
        let (origin, destination) = fit_fields::<f64>(&events, net, kernel, grid_cell)?;
        let boundary = build_boundary_processes(&events, net, mean_speed);
        Ok(Self::from_parts(
            kernel,
            kernel.bandwidth(net.diameter()),
            events,
            origin,
            destination,
            boundary,
        ))
    }

    /// Same events and boundary laws, fields re-estimated with another kernel size.
    pub fn refit(&self, net: &StreetNetwork, kernel: KernelSpec) -> Result<Self, DemandError> {
        let (origin, destination) =
            fit_fields::<f64>(&self.events, net, kernel, self.origin.grid.cell)?;
        Ok(Self::from_parts(
            kernel,
            kernel.bandwidth(net.diameter()),
            self.events.clone(),
            origin,
            destination,
            self.boundary.clone(),
        ))
    }

    pub(crate) fn from_parts(
        kernel: KernelSpec,
        bandwidth: f64,
        events: StationEvents,
        origin: SpatioTemporalField<f64>,
        destination: SpatioTemporalField<f64>,
        boundary: BoundaryProcess,
    ) -> Self {
        Self {
            origin_sampler: FieldSampler::new(&origin),
            destination_sampler: FieldSampler::new(&destination),
            kernel,
            bandwidth,
            events,
            origin,
            destination,
            boundary,
        }
    }

    pub fn bins(&self) -> usize {
        self.boundary.bins()
    }

    pub fn bin_seconds(&self) -> u32 {
        self.events.bin_seconds
    }

    pub fn sample_origin<R: rand::Rng + ?Sized>(&self, bin: usize, rng: &mut R) -> Point {
        self.origin_sampler.sample_point(bin, rng)
    }

    pub fn sample_destination<R: rand::Rng + ?Sized>(&self, bin: usize, rng: &mut R) -> Point {
        self.destination_sampler.sample_point(bin, rng)
    }

    /// Checks station and boundary cross-references against a network.
    pub fn check_against(&self, net: &StreetNetwork) -> Result<(), DemandError> {
        for id in &self.events.station_ids {
            net.station_index(*id)
                .ok_or(DemandError::UnknownStation(*id))?;
        }
        let expected = net.boundary_points().len();
        let found = self.boundary.entry_trials.len();
        if expected != found {
            return Err(DemandError::EntryCount { expected, found });
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        let doc = DemandDocument {
            version: FORMAT_VERSION,
            sigma: self.kernel.sigma,
            bandwidth_m: self.bandwidth,
            bins: self.origin.bins,
            grid: self.origin.grid.clone(),
            origin_field: encode(&self.origin.values),
            destination_field: encode(&self.destination.values),
            events: self.events.clone(),
            boundary: self.boundary.clone(),
        };
        serde_json::to_value(doc).expect("demand model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, DemandError> {
        let doc: DemandDocument = serde_json::from_str(text)?;
        if doc.version != FORMAT_VERSION {
            return Err(DemandError::Version(doc.version));
        }
        let kernel = KernelSpec::new(doc.sigma)?;
        let expected = doc.bins * doc.grid.cells();
        if doc.grid.mask.len() != doc.grid.cells() {
            return Err(DemandError::Malformed("grid mask length".into()));
        }
        let decode_field = |s: &str| -> Result<SpatioTemporalField<f64>, DemandError> {
            let values = decode(s)?;
            if values.len() != expected {
                return Err(DemandError::Malformed(format!(
                    "field has {} values, expected {expected}",
                    values.len()
                )));
            }
            Ok(SpatioTemporalField {
                grid: doc.grid.clone(),
                bins: doc.bins,
                values,
            })
        };
        let origin = decode_field(&doc.origin_field)?;
        let destination = decode_field(&doc.destination_field)?;
        if doc.boundary.bins() != doc.bins || doc.events.bins() != doc.bins {
            return Err(DemandError::Malformed("bin counts disagree".into()));
        }
        Ok(Self::from_parts(
            kernel,
            doc.bandwidth_m,
            doc.events,
            origin,
            destination,
            doc.boundary,
        ))
    }
}

#[derive(Serialize, Deserialize)]
struct DemandDocument {
    version: u32,
    sigma: f64,
    bandwidth_m: f64,
    bins: usize,
    grid: Grid,
    /// Base64 of little-endian f64, row-major `[bin][cell]`.
    origin_field: String,
    destination_field: String,
    events: StationEvents,
    boundary: BoundaryProcess,
}

fn encode(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    BASE64.encode(bytes)
}

fn decode(text: &str) -> Result<Vec<f64>, DemandError> {
    let bytes = BASE64
        .decode(text)
        .map_err(|e| DemandError::Malformed(e.to_string()))?;
    if bytes.len() % 8 != 0 {
        return Err(DemandError::Malformed(
            "field byte length not a multiple of 8".into(),
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}
