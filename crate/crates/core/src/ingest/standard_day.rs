//! Two-stage k-means reduction of daily profiles to a standard weekday.

use std::io::{Read, Write};

use chrono::NaiveDate;

use super::kmeans::kmeans;
use super::snapshot::DayProfile;
use super::IngestError;
use crate::network::StationId;

/// Share of Mon-Fri dates a cluster needs to count as the weekday cluster.
pub const WEEKDAY_SHARE: f64 = 0.7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReduceConfig {
    /// Representative time bins kept per day in the first stage.
    pub k_inner: usize,
    /// Day clusters in the second stage.
    pub k_day: usize,
    pub seed: u64,
}

impl Default for ReduceConfig {
    fn default() -> Self {
        Self {
            k_inner: 24,
            k_day: 3,
            seed: 0,
        }
    }
}

/// Mean load-factor profile of the dominant weekday cluster, `lf[station][bin]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StandardDay {
    pub station_ids: Vec<StationId>,
    pub lf: Vec<Vec<f64>>,
    pub member_dates: Vec<NaiveDate>,
    pub cluster_label: usize,
    /// False when no cluster reached [`WEEKDAY_SHARE`] and the largest cluster was used instead.
    pub weekday_rule_met: bool,
}

impl StandardDay {
    pub fn bins(&self) -> usize {
        self.lf.first().map_or(0, Vec::len)
    }

    pub fn bin_seconds(&self) -> f64 {
        86_400.0 / self.bins() as f64
    }

    pub fn row(&self, station: StationId) -> Option<&[f64]> {
        self.station_ids
            .binary_search(&station)
            .ok()
            .map(|i| self.lf[i].as_slice())
    }

    /// Builds a standard day from an explicit matrix (rows sorted by station id).
    pub fn from_matrix(station_ids: Vec<StationId>, lf: Vec<Vec<f64>>) -> Self {
        Self {
            station_ids,
            lf,
            member_dates: Vec::new(),
            cluster_label: 0,
            weekday_rule_met: true,
        }
    }

    /// CSV matrix `station_id,bin_index,lf`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), IngestError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["station_id", "bin_index", "lf"])?;
        for (id, row) in self.station_ids.iter().zip(&self.lf) {
            for (bin, v) in row.iter().enumerate() {
                w.write_record([id.0.to_string(), bin.to_string(), v.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, IngestError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut cells: std::collections::BTreeMap<StationId, Vec<(usize, f64)>> =
            Default::default();
        for (i, row) in rdr.deserialize::<(u32, usize, f64)>().enumerate() {
            let line = i + 2;
            let (id, bin, lf) = row.map_err(|e| IngestError::MalformedRecord {
                line,
                reason: e.to_string(),
            })?;
            if !(0.0..=1.0).contains(&lf) {
                return Err(IngestError::MalformedRecord {
                    line,
                    reason: format!("load factor {lf} outside [0, 1]"),
                });
            }
            cells.entry(StationId(id)).or_default().push((bin, lf));
        }
        let bins = cells.values().next().map_or(0, Vec::len);
        let mut station_ids = Vec::new();
        let mut lf = Vec::new();
        for (id, mut entries) in cells {
            entries.sort_by_key(|&(b, _)| b);
            let complete =
                entries.len() == bins && entries.iter().enumerate().all(|(i, &(b, _))| b == i);
            if !complete {
                return Err(IngestError::IncompleteMatrix(id));
            }
            station_ids.push(id);
            lf.push(entries.into_iter().map(|(_, v)| v).collect());
        }
        Ok(Self::from_matrix(station_ids, lf))
    }
}

fn compress_day(profile: &DayProfile, k_inner: usize, seed: u64) -> Result<Vec<f64>, IngestError> {
    let bins = profile.bins();
    let columns: Vec<Vec<f64>> = (0..bins)
        .map(|t| profile.lf.iter().map(|row| row[t]).collect())
        .collect();
    let k = k_inner.clamp(1, bins);
    let km = kmeans(&columns, k, seed)?;
    // Order representative bins chronologically by the mean time index of their members.
    let mut order: Vec<(f64, usize)> = (0..k)
        .map(|j| {
            let members: Vec<usize> = (0..bins).filter(|&t| km.assignments[t] == j).collect();
            let key = if members.is_empty() {
                f64::INFINITY
            } else {
                members.iter().sum::<usize>() as f64 / members.len() as f64
            };
            (key, j)
        })
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(order
        .into_iter()
        .flat_map(|(_, j)| km.centroids[j].iter().copied())
        .collect())
}

/// Reduces daily profiles to a [`StandardDay`].
///
/// Stage one compresses each day by clustering its time bins into `k_inner` representative
/// bins; stage two clusters the compressed days into `k_day` groups. The largest group that is
/// at least [`WEEKDAY_SHARE`] Mon-Fri becomes the standard day, averaged over the members' full
/// profiles.
pub fn reduce_days(
    profiles: &[DayProfile],
    cfg: &ReduceConfig,
) -> Result<StandardDay, IngestError> {
    if profiles.len() < 2 {
        return Err(IngestError::InsufficientDays(profiles.len()));
    }
    let first = &profiles[0];
    for p in profiles {
        if p.station_ids != first.station_ids || p.bins() != first.bins() {
            return Err(IngestError::MismatchedProfiles(p.date));
        }
    }
    let mut days: Vec<&DayProfile> = profiles.iter().collect();
    days.sort_by(|a, b| {
        a.date.cmp(&b.date).then_with(|| {
            a.lf.iter()
                .flatten()
                .zip(b.lf.iter().flatten())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });

    let reduced: Vec<Vec<f64>> = days
        .iter()
        .map(|d| compress_day(d, cfg.k_inner, cfg.seed))
        .collect::<Result<_, _>>()?;
    let k_day = cfg.k_day.clamp(1, days.len());
    let km = kmeans(&reduced, k_day, cfg.seed.wrapping_add(1))?;

    let mut best: Option<(usize, usize)> = None;
    let mut largest: Option<(usize, usize)> = None;
    for label in 0..k_day {
        let members: Vec<&&DayProfile> = days
            .iter()
            .zip(&km.assignments)
            .filter(|(_, &a)| a == label)
            .map(|(d, _)| d)
            .collect();
        let size = members.len();
        if size == 0 {
            continue;
        }
        let weekdays = members.iter().filter(|d| d.is_weekday()).count();
        if largest.is_none_or(|(_, s)| size > s) {
            largest = Some((label, size));
        }
        if weekdays as f64 >= WEEKDAY_SHARE * size as f64 && best.is_none_or(|(_, s)| size > s) {
            best = Some((label, size));
        }
    }
    let weekday_rule_met = best.is_some();
    let (label, _) = best.or(largest).expect("k-means assigns every day");

    let members: Vec<&DayProfile> = days
        .iter()
        .zip(&km.assignments)
        .filter(|(_, &a)| a == label)
        .map(|(d, _)| *d)
        .collect();
    let n = members.len() as f64;
    let lf = (0..first.station_ids.len())
        .map(|s| {
            (0..first.bins())
                .map(|t| {
                    // shifted mean: exact when all members agree
                    let base = members[0].lf[s][t];
                    let dev = members.iter().map(|d| d.lf[s][t] - base).sum::<f64>() / n;
                    (base + dev).clamp(0.0, 1.0)
                })
                .collect()
        })
        .collect();
    Ok(StandardDay {
        station_ids: first.station_ids.clone(),
        lf,
        member_dates: members.iter().map(|d| d.date).collect(),
        cluster_label: label,
        weekday_rule_met,
    })
}
