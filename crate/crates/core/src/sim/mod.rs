//! Day-long, tick-based simulation of bikers and docking stations.

mod engine;
mod route;

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{NodeId, StationId};

pub use self::engine::{Engine, Simulation};
pub use self::route::Route;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("tick of {tau_s} s does not divide the demand bin width of {bin_s} s")]
    TickDoesNotDivideBin { tau_s: u32, bin_s: u32 },
    #[error("{name} must lie in [0, 1], got {value}")]
    Probability { name: &'static str, value: f64 },
    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("the simulation needs at least two stations")]
    TooFewStations,
    #[error("initial occupancy of station {station} is {bikes}, above its capacity {capacity}")]
    InitialAboveCapacity {
        station: StationId,
        bikes: u32,
        capacity: u32,
    },
    #[error("initial state has {found} stations, the network {expected}")]
    InitialShape { expected: usize, found: usize },
    #[error(transparent)]
    Demand(#[from] crate::demand::DemandError),
    #[error(transparent)]
    Indicator(#[from] crate::indicators::IndicatorError),
}

fn default_tau() -> u32 {
    60
}
fn default_mean_speed() -> f64 {
    14.0
}
fn default_walk_speed() -> f64 {
    5.0
}
fn default_p_it() -> f64 {
    0.2
}
fn default_p_info() -> f64 {
    0.3
}
fn default_radius() -> f64 {
    400.0
}
fn default_sigma() -> f64 {
    8.0
}
fn default_load() -> f64 {
    0.5
}

/// Run parameters, read from `config.json` with these key names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_tau")]
    pub tau_s: u32,
    #[serde(default = "default_mean_speed")]
    pub mean_speed_kmh: f64,
    #[serde(default = "default_walk_speed")]
    pub walk_speed_kmh: f64,
    #[serde(default = "default_p_it")]
    pub p_it: f64,
    #[serde(default = "default_p_info")]
    pub p_info: f64,
    #[serde(default = "default_radius")]
    pub walk_radius_m: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default)]
    pub seed: u64,
    /// Starting load factor of every station when no standard day is available.
    #[serde(default = "default_load")]
    pub initial_load_factor: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            tau_s: default_tau(),
            mean_speed_kmh: default_mean_speed(),
            walk_speed_kmh: default_walk_speed(),
            p_it: default_p_it(),
            p_info: default_p_info(),
            walk_radius_m: default_radius(),
            sigma: default_sigma(),
            seed: 0,
            initial_load_factor: default_load(),
        }
    }
}

impl SimConfig {
    pub fn mean_speed_mps(&self) -> f64 {
        self.mean_speed_kmh / 3.6
    }

    pub fn walk_speed_mps(&self) -> f64 {
        self.walk_speed_kmh / 3.6
    }

    pub fn check(&self) -> Result<(), SimError> {
        for (name, value) in [
            ("p_it", self.p_it),
            ("p_info", self.p_info),
            ("initial_load_factor", self.initial_load_factor),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(SimError::Probability { name, value });
            }
        }
        for (name, value) in [
            ("tau_s", self.tau_s as f64),
            ("mean_speed_kmh", self.mean_speed_kmh),
            ("walk_speed_kmh", self.walk_speed_kmh),
            ("sigma", self.sigma),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(SimError::NonPositive { name, value });
            }
        }
        if !(self.walk_radius_m.is_finite() && self.walk_radius_m >= 0.0) {
            return Err(SimError::NonPositive {
                name: "walk_radius_m",
                value: self.walk_radius_m,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    /// Bike docked inside the district.
    Dropped,
    /// Bike docked after the biker first had to walk away from an empty origin station.
    WalkDock,
    /// Left the district through a boundary point.
    Exited,
    /// No bike could be found at the origin.
    Abandoned,
    /// Still under way when the day ended.
    Unfinished,
}

impl Outcome {
    pub fn completed(self) -> bool {
        matches!(self, Outcome::Dropped | Outcome::WalkDock | Outcome::Exited)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TravelRecord {
    pub biker: u64,
    pub start_tick: u32,
    pub end_tick: u32,
    /// Network distance from the ride start to the destination chosen at ride start.
    pub d_th: f64,
    /// Distance actually ridden; walking is not counted.
    pub d_r: f64,
    pub adverse: bool,
    pub informed: bool,
    pub outbound: bool,
    pub outcome: Outcome,
}

impl TravelRecord {
    pub fn completed(&self) -> bool {
        self.outcome.completed()
    }

    pub fn counts_for_detour(&self) -> bool {
        self.completed() && self.d_th > 0.0
    }

    #[cfg(test)]
    pub(crate) fn test_default() -> Self {
        Self {
            biker: 0,
            start_tick: 0,
            end_tick: 0,
            d_th: 1.0,
            d_r: 1.0,
            adverse: false,
            informed: false,
            outbound: false,
            outcome: Outcome::Dropped,
        }
    }
}

/// One line of the optional JSON-lines event log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    /// A rider appears at a boundary entry point.
    Enter {
        tick: u32,
        biker: u64,
        node: NodeId,
        informed: bool,
    },
    /// An internal departure is drawn at `station`.
    Request {
        tick: u32,
        biker: u64,
        station: StationId,
        informed: bool,
        outbound: bool,
    },
    /// Chosen origin is empty; the biker walks to `walk_to` or gives up when it is absent.
    EmptyOrigin {
        tick: u32,
        biker: u64,
        station: StationId,
        walk_to: Option<StationId>,
    },
    /// A ride begins; `station` is set when a bike was taken from a dock.
    Start {
        tick: u32,
        biker: u64,
        station: Option<StationId>,
        target_station: Option<StationId>,
        target_node: NodeId,
        d_th: f64,
    },
    /// Raw destination reached away from a station; heading to `to`.
    Redirect {
        tick: u32,
        biker: u64,
        to: StationId,
    },
    /// Attempted drop at a full dock; `to` is the new target, if any.
    Full {
        tick: u32,
        biker: u64,
        station: StationId,
        to: Option<StationId>,
    },
    Drop {
        tick: u32,
        biker: u64,
        station: StationId,
        adverse: bool,
        d_th: f64,
        d_r: f64,
    },
    Exit {
        tick: u32,
        biker: u64,
        node: NodeId,
        adverse: bool,
        d_th: f64,
        d_r: f64,
    },
    Abandon {
        tick: u32,
        biker: u64,
        station: StationId,
    },
    Unfinished {
        biker: u64,
        adverse: bool,
    },
}

/// Bike accounting after a tick.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Ledger {
    pub docked: u64,
    pub in_transit: u64,
    pub entered: u64,
    pub exited: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IndicatorSeries {
    pub mean_load: Vec<f64>,
    pub heterogeneity: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Aggregates {
    pub travels: usize,
    pub adverse_rate: f64,
    pub detour: f64,
    pub detour_included: usize,
    pub detour_excluded: usize,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub seed: u64,
    pub tau_s: u32,
    pub ticks_per_bin: usize,
    pub station_ids: Vec<StationId>,
    pub capacities: Vec<u32>,
    /// `occupancy[t][s]`; row 0 is the initial state, row `t + 1` the state after tick `t`.
    pub occupancy: Vec<Vec<u32>>,
    /// Same row convention as `occupancy`.
    pub ledger: Vec<Ledger>,
    pub series: IndicatorSeries,
    pub records: Vec<TravelRecord>,
    pub aggregates: Aggregates,
    pub events: Option<Vec<Event>>,
}

impl RunResult {
    pub fn ticks(&self) -> usize {
        self.occupancy.len() - 1
    }

    /// Simulated load factors `[station][bin]`, sampled at bin boundaries.
    pub fn binned_load(&self, bins: usize) -> Vec<Vec<f64>> {
        (0..self.station_ids.len())
            .map(|s| {
                (0..bins)
                    .map(|b| {
                        let row = (b * self.ticks_per_bin).min(self.ticks());
                        self.occupancy[row][s] as f64 / self.capacities[s] as f64
                    })
                    .collect()
            })
            .collect()
    }

    /// MSE against a reference `[station][bin]` matrix in network station order.
    pub fn mse_against(
        &self,
        reference: &[Vec<f64>],
    ) -> Result<f64, crate::indicators::IndicatorError> {
        let bins = reference.first().map_or(0, Vec::len);
        crate::indicators::mse(&self.binned_load(bins), reference)
    }

    pub fn write_occupancy_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "tick,station_id,bikes")?;
        for (t, row) in self.occupancy.iter().enumerate() {
            for (id, bikes) in self.station_ids.iter().zip(row) {
                writeln!(out, "{t},{id},{bikes}")?;
            }
        }
        Ok(())
    }

    pub fn write_series_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "tick,mean_load,heterogeneity")?;
        for (t, (l, h)) in self
            .series
            .mean_load
            .iter()
            .zip(&self.series.heterogeneity)
            .enumerate()
        {
            writeln!(out, "{t},{l},{h}")?;
        }
        Ok(())
    }

    pub fn write_events_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for e in self.events.iter().flatten() {
            serde_json::to_writer(&mut out, e)?;
            writeln!(out)?;
        }
        Ok(())
    }
}
