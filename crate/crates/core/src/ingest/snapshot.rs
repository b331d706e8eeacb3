//! Station-status snapshot files and per-day load-factor profiles.

use std::collections::BTreeMap;
use std::io::{BufRead, Read};

use chrono::{DateTime, Datelike, NaiveDate, SecondsFormat, Utc, Weekday};
use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::network::StationId;

const DAY_SECONDS: i64 = 86_400;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SnapshotRecord {
    pub station_id: StationId,
    /// UTC seconds since the epoch.
    pub timestamp: i64,
    pub bikes: u32,
    pub capacity: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SnapshotFormat {
    Csv,
    JsonLines,
}

impl SnapshotFormat {
    /// `.jsonl`/`.ndjson`/`.json` read as JSON lines, everything else as CSV.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "ndjson" | "json") => Self::JsonLines,
            _ => Self::Csv,
        }
    }
}

/// Time binning and gap policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinConfig {
    pub bin_seconds: i64,
    /// Offset of the first bin from local midnight (03:00 by default).
    pub day_start_seconds: i64,
    /// Local time = UTC + offset.
    pub utc_offset_seconds: i64,
    /// Gaps up to this many bins are filled by carrying the last observation forward.
    pub max_fill_gap: usize,
    /// Days with more missing entries than this fraction are dropped.
    pub max_missing_fraction: f64,
}

impl Default for BinConfig {
    fn default() -> Self {
        Self {
            bin_seconds: 300,
            day_start_seconds: 3 * 3600,
            utc_offset_seconds: 0,
            max_fill_gap: 3,
            max_missing_fraction: 0.2,
        }
    }
}

impl BinConfig {
    pub fn bins_per_day(&self) -> usize {
        (DAY_SECONDS / self.bin_seconds) as usize
    }

    /// (calendar day, bin) nearest to a UTC timestamp.
    fn locate(&self, timestamp: i64) -> (NaiveDate, usize) {
        let shifted = timestamp + self.utc_offset_seconds - self.day_start_seconds;
        let global_bin = (shifted + self.bin_seconds / 2).div_euclid(self.bin_seconds);
        let per_day = self.bins_per_day() as i64;
        let day = global_bin.div_euclid(per_day);
        let bin = global_bin.rem_euclid(per_day) as usize;
        (epoch_day(day), bin)
    }

    /// UTC timestamp at the start of `bin` on `date`.
    pub fn timestamp_of(&self, date: NaiveDate, bin: usize) -> i64 {
        let day = (date - epoch_day(0)).num_days();
        day * DAY_SECONDS + self.day_start_seconds - self.utc_offset_seconds
            + bin as i64 * self.bin_seconds
    }
}

fn epoch_day(days: i64) -> NaiveDate {
    NaiveDate::from_ymd_opt(1970, 1, 1).unwrap() + chrono::Duration::days(days)
}

/// One calendar day of load factors, `lf[station][bin]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DayProfile {
    pub date: NaiveDate,
    pub station_ids: Vec<StationId>,
    /// Entries still missing after gap filling hold the nearest observed value of their row.
    pub lf: Vec<Vec<f64>>,
    pub missing: Vec<Vec<bool>>,
}

impl DayProfile {
    pub fn is_weekday(&self) -> bool {
        !matches!(self.date.weekday(), Weekday::Sat | Weekday::Sun)
    }

    pub fn bins(&self) -> usize {
        self.lf.first().map_or(0, Vec::len)
    }

    pub fn missing_fraction(&self) -> f64 {
        let total: usize = self.missing.iter().map(Vec::len).sum();
        if total == 0 {
            return 0.0;
        }
        let missing = self.missing.iter().flatten().filter(|&&m| m).count();
        missing as f64 / total as f64
    }
}

#[derive(Deserialize)]
struct RawRecord {
    station_id: u32,
    timestamp: String,
    bikes: u32,
    capacity: u32,
}

fn convert(raw: RawRecord, line: usize) -> Result<SnapshotRecord, IngestError> {
    let ts = DateTime::parse_from_rfc3339(raw.timestamp.trim()).map_err(|e| {
        IngestError::MalformedRecord {
            line,
            reason: format!("timestamp {:?}: {e}", raw.timestamp),
        }
    })?;
    if raw.capacity == 0 {
        return Err(IngestError::CapacityZero {
            line,
            station: StationId(raw.station_id),
        });
    }
    if raw.bikes > raw.capacity {
        return Err(IngestError::MalformedRecord {
            line,
            reason: format!("{} bikes exceed capacity {}", raw.bikes, raw.capacity),
        });
    }
    Ok(SnapshotRecord {
        station_id: StationId(raw.station_id),
        timestamp: ts.timestamp(),
        bikes: raw.bikes,
        capacity: raw.capacity,
    })
}

/// Reads one snapshot file. Timestamps must be non-decreasing.
pub fn read_records<R: Read>(
    reader: R,
    format: SnapshotFormat,
) -> Result<Vec<SnapshotRecord>, IngestError> {
    let mut out: Vec<SnapshotRecord> = Vec::new();
    let mut push = |rec: SnapshotRecord, line: usize| {
        if let Some(prev) = out.last() {
            if rec.timestamp < prev.timestamp {
                return Err(IngestError::NonMonotonicTimestamps { line });
            }
        }
        out.push(rec);
        Ok(())
    };
    match format {
        SnapshotFormat::Csv => {
            let mut rdr = csv::ReaderBuilder::new()
                .trim(csv::Trim::All)
                .from_reader(reader);
            for (i, row) in rdr.deserialize::<RawRecord>().enumerate() {
                // header is line 1
                let line = i + 2;
                let raw = row.map_err(|e| IngestError::MalformedRecord {
                    line,
                    reason: e.to_string(),
                })?;
                push(convert(raw, line)?, line)?;
            }
        }
        SnapshotFormat::JsonLines => {
            let buf = std::io::BufReader::new(reader);
            for (i, text) in buf.lines().enumerate() {
                let line = i + 1;
                let text = text.map_err(|e| IngestError::MalformedRecord {
                    line,
                    reason: e.to_string(),
                })?;
                if text.trim().is_empty() {
                    continue;
                }
                let raw: RawRecord =
                    serde_json::from_str(&text).map_err(|e| IngestError::MalformedRecord {
                        line,
                        reason: e.to_string(),
                    })?;
                push(convert(raw, line)?, line)?;
            }
        }
    }
    Ok(out)
}

/// Bins records into one profile per calendar day (days start at `day_start_seconds`).
///
/// The station set is the union over all records. Each bin takes the last record that rounds
/// to it; short gaps are filled forward and days with too many holes are dropped.
pub fn build_profiles(records: &[SnapshotRecord], cfg: &BinConfig) -> Vec<DayProfile> {
    let stations: Vec<StationId> = {
        let mut ids: Vec<StationId> = records.iter().map(|r| r.station_id).collect();
        ids.sort();
        ids.dedup();
        ids
    };
    let bins = cfg.bins_per_day();
    let mut days: BTreeMap<NaiveDate, Vec<Vec<Option<f64>>>> = BTreeMap::new();
    for r in records {
        let (date, bin) = cfg.locate(r.timestamp);
        let s = stations
            .binary_search(&r.station_id)
            .expect("station collected above");
        let grid = days
            .entry(date)
            .or_insert_with(|| vec![vec![None; bins]; stations.len()]);
        grid[s][bin] = Some(r.bikes as f64 / r.capacity as f64);
    }

    let mut out = Vec::new();
    for (date, mut grid) in days {
        for row in &mut grid {
            fill_short_gaps(row, cfg.max_fill_gap);
        }
        let missing: Vec<Vec<bool>> = grid
            .iter()
            .map(|row| row.iter().map(Option::is_none).collect())
            .collect();
        let n_missing = missing.iter().flatten().filter(|&&m| m).count();
        if n_missing as f64 > cfg.max_missing_fraction * (bins * stations.len()) as f64 {
            continue;
        }
        let lf = grid.iter().map(|row| fill_nearest(row)).collect();
        out.push(DayProfile {
            date,
            station_ids: stations.clone(),
            lf,
            missing,
        });
    }
    out
}

/// Parses a snapshot stream straight into day profiles.
pub fn parse_snapshots<R: Read>(
    reader: R,
    format: SnapshotFormat,
    cfg: &BinConfig,
) -> Result<Vec<DayProfile>, IngestError> {
    Ok(build_profiles(&read_records(reader, format)?, cfg))
}

fn fill_short_gaps(row: &mut [Option<f64>], max_gap: usize) {
    let mut i = 0;
    while i < row.len() {
        if row[i].is_some() {
            i += 1;
            continue;
        }
        let start = i;
        while i < row.len() && row[i].is_none() {
            i += 1;
        }
        if start > 0 && i - start <= max_gap {
            let v = row[start - 1];
            row[start..i].fill(v);
        }
    }
}

fn fill_nearest(row: &[Option<f64>]) -> Vec<f64> {
    let observed: Vec<usize> = (0..row.len()).filter(|&i| row[i].is_some()).collect();
    (0..row.len())
        .map(|i| match row[i] {
            Some(v) => v,
            None => {
                let pos = observed.partition_point(|&j| j < i);
                let before = pos.checked_sub(1).map(|p| observed[p]);
                let after = observed.get(pos).copied();
                let j = match (before, after) {
                    (Some(b), Some(a)) if a - i < i - b => a,
                    (Some(b), _) => b,
                    (None, Some(a)) => a,
                    (None, None) => return 0.0,
                };
                row[j].expect("observed index")
            }
        })
        .collect()
}

/// Writes records as snapshot CSV (the inverse of [`read_records`]).
pub fn write_records_csv<W: std::io::Write>(
    writer: W,
    records: &[SnapshotRecord],
) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["station_id", "timestamp", "bikes", "capacity"])?;
    for r in records {
        let ts = DateTime::<Utc>::from_timestamp(r.timestamp, 0)
            .expect("timestamp in range")
            .to_rfc3339_opts(SecondsFormat::Secs, true);
        w.write_record([
            r.station_id.0.to_string(),
            ts,
            r.bikes.to_string(),
            r.capacity.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Snapshot records reproducing a profile, one per station and observed bin.
pub fn profile_to_records(
    profile: &DayProfile,
    capacities: &[u32],
    cfg: &BinConfig,
) -> Vec<SnapshotRecord> {
    let mut out = Vec::new();
    for bin in 0..profile.bins() {
        for (s, &id) in profile.station_ids.iter().enumerate() {
            if profile.missing[s][bin] {
                continue;
            }
            let capacity = capacities[s];
            out.push(SnapshotRecord {
                station_id: id,
                timestamp: cfg.timestamp_of(profile.date, bin),
                bikes: (profile.lf[s][bin] * capacity as f64).round() as u32,
                capacity,
            });
        }
    }
    out
}
