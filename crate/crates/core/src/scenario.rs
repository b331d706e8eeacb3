//! Scenario directories and the synthetic test district.
//!
//! A scenario directory holds `network.geojson`, `demand.json`, `config.json` and optionally
//! `standard_day.csv`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::{DemandModel, KernelSpec, StationEvents, DEFAULT_GRID_CELL};
use crate::experiments::replication_seed;
use crate::ingest::StandardDay;
use crate::network::{self, grid_builder, NodeId, StationId, StreetNetwork};
use crate::sim::{RunResult, SimConfig, SimError, Simulation};

pub const NETWORK_FILE: &str = "network.geojson";
pub const DEMAND_FILE: &str = "demand.json";
pub const CONFIG_FILE: &str = "config.json";
pub const STANDARD_DAY_FILE: &str = "standard_day.csv";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("scenario is inconsistent: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Demand(#[from] crate::demand::DemandError),
}

fn read(path: &Path) -> Result<String, ScenarioError> {
    fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), ScenarioError> {
    fs::write(path, contents).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_err(path: &Path, e: impl std::fmt::Display) -> ScenarioError {
    ScenarioError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// A network, its demand model, run defaults and an optional reference day.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub network: StreetNetwork,
    pub demand: DemandModel,
    pub config: SimConfig,
    pub standard_day: Option<StandardDay>,
}

impl Scenario {
    /// Loads and cross-checks a scenario directory.
    pub fn load(dir: &Path) -> Result<Self, ScenarioError> {
        let (scenario, findings) = load_parts(dir)?;
        if findings.is_empty() {
            Ok(scenario)
        } else {
            Err(ScenarioError::Invalid(findings))
        }
    }

    pub fn save(&self, dir: &Path) -> Result<(), ScenarioError> {
        fs::create_dir_all(dir).map_err(|source| ScenarioError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let net = serde_json::to_string_pretty(&network::to_geojson(&self.network)).expect("json");
        write(&dir.join(NETWORK_FILE), net + "\n")?;
        write(
            &dir.join(DEMAND_FILE),
            self.demand.to_json().to_string() + "\n",
        )?;
        let cfg = serde_json::to_string_pretty(&self.config).expect("json");
        write(&dir.join(CONFIG_FILE), cfg + "\n")?;
        if let Some(day) = &self.standard_day {
            let path = dir.join(STANDARD_DAY_FILE);
            let mut buf = Vec::new();
            day.write_csv(&mut buf).map_err(|e| parse_err(&path, e))?;
            write(&path, buf)?;
        }
        Ok(())
    }

    /// Starting bikes per station in network order, from bin 0 of the standard day.
    pub fn initial_occupancy(&self) -> Option<Vec<u32>> {
        let day = self.standard_day.as_ref()?;
        self.network
            .stations()
            .iter()
            .map(|s| {
                day.row(s.id)
                    .map(|row| (row[0] * s.capacity as f64).round() as u32)
            })
            .collect()
    }

    /// Standard-day load factors in network station order.
    pub fn reference(&self) -> Option<Vec<Vec<f64>>> {
        let day = self.standard_day.as_ref()?;
        self.network
            .stations()
            .iter()
            .map(|s| day.row(s.id).map(<[f64]>::to_vec))
            .collect()
    }

    pub fn simulation(&self, config: SimConfig) -> Result<Simulation<'_>, SimError> {
        Simulation::new(
            &self.network,
            &self.demand,
            config,
            self.initial_occupancy(),
        )
    }

    pub fn simulation_with<'a>(
        &'a self,
        demand: &'a DemandModel,
        config: SimConfig,
    ) -> Result<Simulation<'a>, SimError> {
        Simulation::new(&self.network, demand, config, self.initial_occupancy())
    }
}

fn load_parts(dir: &Path) -> Result<(Scenario, Vec<String>), ScenarioError> {
    let net_path = dir.join(NETWORK_FILE);
    let network = network::parse_geojson(&read(&net_path)?).map_err(|e| parse_err(&net_path, e))?;
    let demand_path = dir.join(DEMAND_FILE);
    let demand =
        DemandModel::from_json(&read(&demand_path)?).map_err(|e| parse_err(&demand_path, e))?;
    let config_path = dir.join(CONFIG_FILE);
    let config: SimConfig =
        serde_json::from_str(&read(&config_path)?).map_err(|e| parse_err(&config_path, e))?;
    let day_path = dir.join(STANDARD_DAY_FILE);
    let standard_day = if day_path.exists() {
        let text = read(&day_path)?;
        Some(StandardDay::read_csv(text.as_bytes()).map_err(|e| parse_err(&day_path, e))?)
    } else {
        None
    };
    let scenario = Scenario {
        network,
        demand,
        config,
        standard_day,
    };
    let findings = check(&scenario);
    Ok((scenario, findings))
}

/// Every cross-reference problem of a loaded scenario, one message per finding.
pub fn check(s: &Scenario) -> Vec<String> {
    let mut out = Vec::new();
    let net_ids: BTreeSet<StationId> = s.network.station_ids().into_iter().collect();
    let demand_ids: BTreeSet<StationId> = s.demand.events.station_ids.iter().copied().collect();
    for id in demand_ids.difference(&net_ids) {
        out.push(format!(
            "demand references station {id}, which is not in the network"
        ));
    }
    for id in net_ids.difference(&demand_ids) {
        out.push(format!("station {id} has no demand events"));
    }
    let entries = s.network.boundary_points().len();
    if s.demand.boundary.entry_trials.len() != entries {
        out.push(format!(
            "demand has {} entry laws but the network has {entries} boundary points",
            s.demand.boundary.entry_trials.len()
        ));
    }
    if entries == 0 {
        out.push("network has no boundary points".into());
    }
    if let Err(e) = s.config.check() {
        out.push(format!("config: {e}"));
    }
    if s.config.tau_s > 0 && !s.demand.bin_seconds().is_multiple_of(s.config.tau_s) {
        out.push(format!(
            "config: tick of {} s does not divide the demand bin width of {} s",
            s.config.tau_s,
            s.demand.bin_seconds()
        ));
    }
    if let Some(day) = &s.standard_day {
        let day_ids: BTreeSet<StationId> = day.station_ids.iter().copied().collect();
        for id in net_ids.difference(&day_ids) {
            out.push(format!("standard day has no profile for station {id}"));
        }
        for id in day_ids.difference(&net_ids) {
            out.push(format!("standard day station {id} is not in the network"));
        }
        if day.bins() != s.demand.bins() {
            out.push(format!(
                "standard day has {} bins, the demand model {}",
                day.bins(),
                s.demand.bins()
            ));
        }
        if day.lf.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            out.push("standard day has load factors outside [0, 1]".into());
        }
    }
    out
}

/// Findings for a scenario directory; unreadable files count as one finding each.
pub fn validate(dir: &Path) -> Vec<String> {
    let mut findings = Vec::new();
    for name in [NETWORK_FILE, DEMAND_FILE, CONFIG_FILE] {
        if !dir.join(name).is_file() {
            findings.push(format!("{}: missing", dir.join(name).display()));
        }
    }
    if !findings.is_empty() {
        return findings;
    }
    match load_parts(dir) {
        Ok((_, f)) => f,
        Err(e) => vec![e.to_string()],
    }
}

/// Parameters of the synthetic grid district.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub cols: usize,
    pub rows: usize,
    pub side_m: f64,
    pub stations: usize,
    /// 0 gives identical origin and destination fields; 1 a strong west-to-east morning flow.
    pub asymmetry: f64,
    pub seed: u64,
    pub sigma: f64,
    pub p_info: f64,
    pub walk_radius_m: f64,
    /// Expected internal departures per day across the district.
    pub daily_departures: f64,
    /// Runs averaged into the shipped standard day; 0 ships none.
    pub reference_runs: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            cols: 12,
            rows: 12,
            side_m: 2000.0,
            stations: 40,
            asymmetry: 1.0,
            seed: 1,
            sigma: 4.0,
            p_info: 0.4,
            walk_radius_m: 400.0,
            daily_departures: 900.0,
            reference_runs: 20,
        }
    }
}

const BIN_SECONDS: u32 = 300;
const BINS: usize = 288;
const MORNING_PEAK_H: f64 = 5.0;
const EVENING_PEAK_H: f64 = 15.0;

/// Builds the synthetic scenario in memory. Identical specs give identical scenarios.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Scenario, ScenarioError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut b = grid_builder(spec.cols, spec.rows, spec.side_m);
    let node = |c: usize, r: usize| NodeId((r * spec.cols + c) as u32);
    let (lc, lr) = (spec.cols - 1, spec.rows - 1);
    let mut entries = Vec::new();
    for k in [1, 2] {
        let (c, r) = ((lc * k + 1) / 3, (lr * k + 1) / 3);
        entries.extend([node(c, 0), node(c, lr), node(0, r), node(lc, r)]);
    }
    entries.sort();
    entries.dedup();
    let mut candidates: Vec<NodeId> = (0..spec.cols * spec.rows)
        .map(|i| NodeId(i as u32))
        .filter(|n| !entries.contains(n))
        .collect();
    if spec.stations < 2 || spec.stations > candidates.len() {
        return Err(ScenarioError::Invalid(vec![format!(
            "station count {} must lie in [2, {}]",
            spec.stations,
            candidates.len()
        )]));
    }
    candidates.shuffle(&mut rng);
    let mut chosen = candidates[..spec.stations].to_vec();
    chosen.sort();
    for (i, &n) in chosen.iter().enumerate() {
        b.add_station(StationId(i as u32 + 1), n, rng.random_range(15..=30));
    }
    for &e in &entries {
        b.add_boundary(e);
    }
    let built = b
        .build()
        .map_err(|e| ScenarioError::Invalid(vec![e.to_string()]))?;
    // Round-trip through GeoJSON so node numbering matches what a loader will see.
    let net = network::parse_geojson(&network::to_geojson(&built).to_string())
        .map_err(|e| ScenarioError::Invalid(vec![e.to_string()]))?;

    let events = synthetic_events(&net, spec);
    let config = SimConfig {
        p_info: spec.p_info,
        walk_radius_m: spec.walk_radius_m,
        sigma: spec.sigma,
        seed: spec.seed,
        ..SimConfig::default()
    };
    let kernel = KernelSpec::new(spec.sigma)?;
    let demand = DemandModel::fit(
        events,
        &net,
        kernel,
        DEFAULT_GRID_CELL,
        config.mean_speed_mps(),
    )?;
    let mut scenario = Scenario {
        network: net,
        demand,
        config,
        standard_day: None,
    };
    if spec.reference_runs > 0 {
        scenario.standard_day = Some(reference_day(&scenario, spec.reference_runs, spec.seed)?);
    }
    Ok(scenario)
}

/// Mean binned load over `runs` replications of the scenario's own configuration.
pub fn reference_day(s: &Scenario, runs: usize, base_seed: u64) -> Result<StandardDay, SimError> {
    let sim = s.simulation(s.config.clone())?;
    let bins = s.demand.bins();
    let n = s.network.stations().len();
    let mut acc = vec![vec![0.0; bins]; n];
    for i in 0..runs {
        let r: RunResult = sim.run(replication_seed(base_seed, i as u64), false);
        for (a, row) in acc.iter_mut().zip(r.binned_load(bins)) {
            for (x, v) in a.iter_mut().zip(row) {
                *x += v;
            }
        }
    }
    for row in &mut acc {
        for x in row {
            *x /= runs as f64;
        }
    }
    Ok(StandardDay::from_matrix(s.network.station_ids(), acc))
}

fn gaussian_mass(h0: f64, h1: f64, mu: f64, sd: f64) -> f64 {
    // midpoint rule is plenty at 5-minute bins
    let h = 0.5 * (h0 + h1);
    (h1 - h0) * (-(h - mu).powi(2) / (2.0 * sd * sd)).exp()
        / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

/// Expected departures and arrivals per station and bin, rounded on the cumulative sum.
///
/// Morning departures lean towards western stations and arrivals towards eastern ones; the
/// evening mirrors it. With zero asymmetry both tables are identical.
fn synthetic_events(net: &StreetNetwork, spec: &SyntheticSpec) -> StationEvents {
    let stations = net.stations();
    let mean_cap = stations.iter().map(|s| s.capacity as f64).sum::<f64>() / stations.len() as f64;
    let west: Vec<f64> = stations
        .iter()
        .map(|s| {
            let x = net.position(s.node).x / spec.side_m;
            (2.0 * spec.asymmetry * (1.0 - 2.0 * x)).exp()
        })
        .collect();
    let east: Vec<f64> = west.iter().map(|w| 1.0 / w).collect();
    let norm = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| x / m).collect::<Vec<_>>()
    };
    let (west, east) = (norm(&west), norm(&east));
    let per_station = spec.daily_departures / stations.len() as f64;
    let bin_h = BIN_SECONDS as f64 / 3600.0;
    let mut departures = vec![vec![0u32; BINS]; stations.len()];
    let mut arrivals = vec![vec![0u32; BINS]; stations.len()];
    for (s, st) in stations.iter().enumerate() {
        let scale = per_station * st.capacity as f64 / mean_cap;
        let (mut cum_d, mut cum_a) = (0.0, 0.0);
        for t in 0..BINS {
            let (h0, h1) = (t as f64 * bin_h, (t + 1) as f64 * bin_h);
            let base = 0.3 * bin_h / 24.0;
            let morning = 0.35 * gaussian_mass(h0, h1, MORNING_PEAK_H, 1.0);
            let evening = 0.35 * gaussian_mass(h0, h1, EVENING_PEAK_H, 1.5);
            let d = scale * (base + morning * west[s] + evening * east[s]);
            let a = scale * (base + morning * east[s] + evening * west[s]);
            departures[s][t] = ((cum_d + d).round() - cum_d.round()) as u32;
            arrivals[s][t] = ((cum_a + a).round() - cum_a.round()) as u32;
            cum_d += d;
            cum_a += a;
        }
    }
    StationEvents {
        station_ids: net.station_ids(),
        bin_seconds: BIN_SECONDS,
        departures,
        arrivals,
    }
}
