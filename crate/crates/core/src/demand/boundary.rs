//! Binomial entry (`N_I`) and departure (`N_D`) processes.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use super::StationEvents;
use crate::network::StreetNetwork;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryProcess {
    /// `entry_trials[entry][bin]`, entries in `StreetNetwork::boundary_points` order.
    pub entry_trials: Vec<Vec<u32>>,
    /// Success probability of every entry law, `1 / |I|`.
    pub entry_probability: f64,
    pub departure_trials: Vec<u32>,
    pub departure_probability: f64,
    /// Entry trials whose lead time reached before the first bin and were put in bin 0.
    pub clamped: u32,
}

impl BoundaryProcess {
    pub fn bins(&self) -> usize {
        self.departure_trials.len()
    }

    /// One independent binomial draw per entry point.
    pub fn sample_entries<R: Rng + ?Sized>(&self, bin: usize, rng: &mut R) -> Vec<u32> {
        self.entry_trials
            .iter()
            .map(|row| binomial(row[bin], self.entry_probability, rng))
            .collect()
    }

    pub fn sample_departures<R: Rng + ?Sized>(&self, bin: usize, rng: &mut R) -> u32 {
        binomial(self.departure_trials[bin], self.departure_probability, rng)
    }

    /// Expected number of entries in `bin`, summed over entry points.
    pub fn expected_entries(&self, bin: usize) -> f64 {
        self.entry_trials.iter().map(|r| r[bin] as f64).sum::<f64>() * self.entry_probability
    }
}

fn binomial<R: Rng + ?Sized>(n: u32, p: f64, rng: &mut R) -> u32 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n as u64, p)
        .expect("valid binomial parameters")
        .sample(rng) as u32
}

/// Builds the entry and departure laws from station events.
///
/// Every arrival at a station adds one trial to each entry point's law, placed one mean
/// travel time (network distance / `mean_speed`) before the arrival bin. Every departure adds
/// one trial, with probability one, to the departure law of its own bin.
pub fn build_boundary_processes(
    events: &StationEvents,
    net: &StreetNetwork,
    mean_speed: f64,
) -> BoundaryProcess {
    let bins = events.bins();
    let entries = net.boundary_points();
    let bin_seconds = events.bin_seconds as f64;
    let mut entry_trials = vec![vec![0u32; bins]; entries.len()];
    let mut clamped = 0;
    for (s, id) in events.station_ids.iter().enumerate() {
        let Some(idx) = net.station_index(*id) else {
            continue;
        };
        let node = net.stations()[idx].node;
        let leads: Vec<i64> = entries
            .iter()
            .map(|&e| (net.distance(e, node) / mean_speed / bin_seconds).round() as i64)
            .collect();
        for (t, &count) in events.arrivals[s].iter().enumerate() {
            if count == 0 {
                continue;
            }
            for (i, &lead) in leads.iter().enumerate() {
                let target = t as i64 - lead;
                if target < 0 {
                    clamped += count;
                }
                entry_trials[i][target.max(0) as usize] += count;
            }
        }
    }
    let departure_trials = (0..bins).map(|t| events.departures_in_bin(t)).collect();
    BoundaryProcess {
        entry_trials,
        entry_probability: if entries.is_empty() {
            0.0
        } else {
            1.0 / entries.len() as f64
        },
        departure_trials,
        departure_probability: 1.0,
        clamped,
    }
}
