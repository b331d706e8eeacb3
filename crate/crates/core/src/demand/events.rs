use serde::{Deserialize, Serialize};

use crate::ingest::StandardDay;
use crate::network::StationId;

/// Bike movements per station and time bin, `departures[station][bin]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StationEvents {
    pub station_ids: Vec<StationId>,
    pub bin_seconds: u32,
    pub departures: Vec<Vec<u32>>,
    pub arrivals: Vec<Vec<u32>>,
}

impl StationEvents {
    pub fn bins(&self) -> usize {
        self.departures.first().map_or(0, Vec::len)
    }

    pub fn total_departures(&self) -> u64 {
        self.departures.iter().flatten().map(|&v| v as u64).sum()
    }

    pub fn total_arrivals(&self) -> u64 {
        self.arrivals.iter().flatten().map(|&v| v as u64).sum()
    }

    pub fn departures_in_bin(&self, bin: usize) -> u32 {
        self.departures.iter().map(|row| row[bin]).sum()
    }

    pub fn arrivals_in_bin(&self, bin: usize) -> u32 {
        self.arrivals.iter().map(|row| row[bin]).sum()
    }
}

/// Derives departures and arrivals from successive load factors of a standard day.
///
/// Bike counts are rounded half away from zero on the cumulative signal `lf * c`, so
/// fractional changes never accumulate into drift. `capacities` follows `day.station_ids`.
pub fn infer_events(day: &StandardDay, capacities: &[u32]) -> StationEvents {
    let bins = day.bins();
    let mut departures = vec![vec![0; bins]; day.station_ids.len()];
    let mut arrivals = vec![vec![0; bins]; day.station_ids.len()];
    for (s, row) in day.lf.iter().enumerate() {
        let c = capacities[s] as f64;
        let mut prev = (row[0] * c).round() as i64;
        for t in 1..bins {
            let now = (row[t] * c).round() as i64;
            let delta = now - prev;
            if delta < 0 {
                departures[s][t] = (-delta) as u32;
            } else {
                arrivals[s][t] = delta as u32;
            }
            prev = now;
        }
    }
    StationEvents {
        station_ids: day.station_ids.clone(),
        bin_seconds: day.bin_seconds().round() as u32,
        departures,
        arrivals,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn day(rows: Vec<Vec<f64>>) -> StandardDay {
        let ids = (0..rows.len() as u32).map(StationId).collect();
        StandardDay::from_matrix(ids, rows)
    }

    #[test]
    fn constant_profile_has_no_events() {
        let ev = infer_events(&day(vec![vec![0.4; 12]]), &[10]);
        assert_eq!(ev.total_departures() + ev.total_arrivals(), 0);
        assert_eq!(ev.bin_seconds, 7200);
    }

    #[test]
    fn drop_from_half_to_quarter_is_five_departures() {
        let ev = infer_events(&day(vec![vec![0.5, 0.25, 0.25]]), &[20]);
        assert_eq!(ev.departures[0], vec![0, 5, 0]);
        assert_eq!(ev.total_arrivals(), 0);
    }

    #[test]
    fn empty_to_full_is_capacity_arrivals() {
        let ev = infer_events(&day(vec![vec![0.0, 1.0]]), &[10]);
        assert_eq!(ev.arrivals[0], vec![0, 10]);
    }

    #[test]
    fn cumulative_rounding_does_not_drift() {
        // +0.3 bikes per bin: increments of 0 or 1 that sum to the rounded endpoint
        let row: Vec<f64> = (0..11).map(|t| 0.03 * t as f64).collect();
        let ev = infer_events(&day(vec![row]), &[10]);
        assert_eq!(ev.total_arrivals(), 3);
        assert_eq!(ev.total_departures(), 0);
    }
}
