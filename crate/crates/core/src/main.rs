use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use bikesim::demand::{infer_events, DemandModel, KernelSpec};
use bikesim::experiments::{self, CalibrationGrid};
use bikesim::ingest::{self, BinConfig, ReduceConfig, SnapshotFormat, StandardDay};
use bikesim::network;
use bikesim::scenario::{self, Scenario, ScenarioError, SyntheticSpec};
use bikesim::sim::SimConfig;

#[derive(Parser)]
#[command(
    name = "bikesim",
    version,
    about = "Agent-based bike-sharing district simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reduce station snapshot files (CSV or JSON lines) to a standard day.
    Ingest {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 24)]
        k_inner: usize,
        #[arg(long, default_value_t = 3)]
        k_day: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Local time offset from UTC, in hours.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        utc_offset_hours: f64,
    },
    /// Fit the demand model of a scenario from its standard day.
    FitDemand {
        scenario: PathBuf,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = bikesim::demand::DEFAULT_GRID_CELL)]
        grid_cell: f64,
    },
    /// Run one simulated day and print its indicators as a CSV row.
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        p_info: Option<f64>,
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long)]
        events_out: Option<PathBuf>,
        /// Occupancy series as `tick,station_id,bikes`.
        #[arg(long)]
        occupancy_out: Option<PathBuf>,
        /// Indicator series as `tick,mean_load,heterogeneity`.
        #[arg(long)]
        series_out: Option<PathBuf>,
    },
    /// Grid search of (sigma, p_info) minimising the MSE against a standard day.
    Calibrate {
        scenario: PathBuf,
        #[arg(long)]
        real: PathBuf,
        /// `start:stop:step` or a comma-separated list.
        #[arg(long)]
        sigma_grid: String,
        #[arg(long)]
        pinfo_grid: String,
        /// Comma-separated walking radii in meters.
        #[arg(long, default_value = "400")]
        radius: String,
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Run a parameter sweep described by a JSON file.
    Sweep {
        spec: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Write the synthetic grid scenario.
    GenSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        asymmetry: f64,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        p_info: Option<f64>,
        #[arg(long)]
        reference_runs: Option<usize>,
    },
    /// Check a scenario directory; exits with 2 when anything is inconsistent.
    Validate { scenario: PathBuf },
}

/// Findings that should end the process with exit code 2.
#[derive(Debug)]
struct Invalid(Vec<String>);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for line in &self.0 {
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}

impl std::error::Error for Invalid {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(Invalid(findings)) = e.downcast_ref::<Invalid>() {
                for f in findings {
                    eprintln!("{f}");
                }
                return ExitCode::from(2);
            }
            if let Some(ScenarioError::Invalid(findings)) = e.downcast_ref::<ScenarioError>() {
                for f in findings {
                    eprintln!("{f}");
                }
                return ExitCode::from(2);
            }
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ingest {
            files,
            out,
            k_inner,
            k_day,
            seed,
            utc_offset_hours,
        } => ingest_cmd(
            &files,
            &out,
            ReduceConfig {
                k_inner,
                k_day,
                seed,
            },
            utc_offset_hours,
        ),
        Command::FitDemand {
            scenario,
            sigma,
            out,
            grid_cell,
        } => fit_demand(&scenario, sigma, &out, grid_cell),
        Command::Simulate {
            scenario,
            seed,
            p_info,
            radius,
            events_out,
            occupancy_out,
            series_out,
        } => simulate(
            &scenario,
            seed,
            p_info,
            radius,
            events_out,
            occupancy_out,
            series_out,
        ),
        Command::Calibrate {
            scenario,
            real,
            sigma_grid,
            pinfo_grid,
            radius,
            reps,
            seed,
            jobs,
        } => {
            let sigma = parse_grid(&sigma_grid).context("--sigma-grid")?;
            let p_info = parse_grid(&pinfo_grid).context("--pinfo-grid")?;
            let radius = parse_grid(&radius).context("--radius")?;
            with_jobs(jobs, || {
                calibrate(&scenario, &real, &sigma, &p_info, &radius, reps, seed)
            })
        }
        Command::Sweep { spec, jobs } => {
            let spec = experiments::read_sweep_spec(&spec)?;
            let done = with_jobs(jobs, || Ok(experiments::sweep(&spec)?))?;
            eprintln!("wrote {}", done.dir.display());
            io::stdout().write_all(experiments::points_csv(&done.points).as_bytes())?;
            Ok(())
        }
        Command::GenSynthetic {
            out,
            seed,
            asymmetry,
            sigma,
            p_info,
            reference_runs,
        } => {
            let defaults = SyntheticSpec::default();
            let spec = SyntheticSpec {
                seed,
                asymmetry,
                sigma: sigma.unwrap_or(defaults.sigma),
                p_info: p_info.unwrap_or(defaults.p_info),
                reference_runs: reference_runs.unwrap_or(defaults.reference_runs),
                ..defaults
            };
            scenario::generate_synthetic(&spec)?.save(&out)?;
            eprintln!("wrote {}", out.display());
            Ok(())
        }
        Command::Validate { scenario } => {
            let findings = scenario::validate(&scenario);
            if findings.is_empty() {
                eprintln!("{}: ok", scenario.display());
                Ok(())
            } else {
                Err(Invalid(findings).into())
            }
        }
    }
}

fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            bail!("--jobs must be at least 1");
        }
        builder = builder.num_threads(n);
    }
    builder.build()?.install(f)
}

/// `start:stop:step` (inclusive, with rounding slack) or `a,b,c`.
fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let values = if parts.len() == 3 {
        let [a, b, step] = [parts[0], parts[1], parts[2]].map(|p| p.trim().parse::<f64>());
        let (a, b, step) = (a?, b?, step?);
        if step.is_nan() || step <= 0.0 || b < a {
            bail!("expected start <= stop and a positive step in {text:?}");
        }
        let n = ((b - a) / step + 1e-9).floor() as usize;
        (0..=n).map(|i| a + i as f64 * step).collect()
    } else {
        text.split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()?
    };
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        bail!("no usable values in {text:?}");
    }
    Ok(values)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| {
        format!("cannot create {}", path.display())
    })?))
}

fn ingest_cmd(
    files: &[PathBuf],
    out: &Path,
    reduce: ReduceConfig,
    utc_offset_hours: f64,
) -> Result<()> {
    let mut records = Vec::new();
    for path in files {
        let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
        let recs = ingest::read_records(io::BufReader::new(file), SnapshotFormat::from_path(path))
            .with_context(|| path.display().to_string())?;
        records.extend(recs);
    }
    let cfg = BinConfig {
        utc_offset_seconds: (utc_offset_hours * 3600.0).round() as i64,
        ..BinConfig::default()
    };
    let profiles = ingest::build_profiles(&records, &cfg);
    eprintln!("{} usable day profiles", profiles.len());
    let day = ingest::reduce_days(&profiles, &reduce)?;
    if !day.weekday_rule_met {
        eprintln!("warning: no day cluster is mostly Monday to Friday; using the largest cluster");
    }
    day.write_csv(create(out)?)?;
    Ok(())
}

fn read_config(dir: &Path) -> Result<SimConfig> {
    let path = dir.join(scenario::CONFIG_FILE);
    if !path.exists() {
        return Ok(SimConfig::default());
    }
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| path.display().to_string())
}

fn read_day(path: &Path) -> Result<StandardDay> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    StandardDay::read_csv(io::BufReader::new(file)).with_context(|| path.display().to_string())
}

fn fit_demand(dir: &Path, sigma: f64, out: &Path, grid_cell: f64) -> Result<()> {
    let net = network::load_geojson(&dir.join(scenario::NETWORK_FILE))?;
    let config = read_config(dir)?;
    let day = read_day(&dir.join(scenario::STANDARD_DAY_FILE))?;
    let mut capacities = Vec::with_capacity(day.station_ids.len());
    for id in &day.station_ids {
        let idx = net
            .station_index(*id)
            .with_context(|| format!("standard day station {id} is not in the network"))?;
        capacities.push(net.stations()[idx].capacity);
    }
    let events = infer_events(&day, &capacities);
    let model = DemandModel::fit(
        events,
        &net,
        KernelSpec::new(sigma)?,
        grid_cell,
        config.mean_speed_mps(),
    )?;
    if model.boundary.clamped > 0 {
        eprintln!(
            "{} entry trials fell before the first bin and were moved to it",
            model.boundary.clamped
        );
    }
    let mut w = create(out)?;
    serde_json::to_writer(&mut w, &model.to_json())?;
    writeln!(w)?;
    Ok(())
}

fn simulate(
    dir: &Path,
    seed: Option<u64>,
    p_info: Option<f64>,
    radius: Option<f64>,
    events_out: Option<PathBuf>,
    occupancy_out: Option<PathBuf>,
    series_out: Option<PathBuf>,
) -> Result<()> {
    let scenario = Scenario::load(dir)?;
    let mut config = scenario.config.clone();
    if let Some(p) = p_info {
        config.p_info = p;
    }
    if let Some(r) = radius {
        config.walk_radius_m = r;
    }
    let seed = seed.unwrap_or(config.seed);
    let sim = scenario.simulation(config.clone())?;
    let result = sim.run(seed, events_out.is_some());
    if let Some(path) = events_out {
        result.write_events_jsonl(create(&path)?)?;
    }
    if let Some(path) = occupancy_out {
        result.write_occupancy_csv(create(&path)?)?;
    }
    if let Some(path) = series_out {
        result.write_series_csv(create(&path)?)?;
    }
    let mse = match scenario.reference() {
        Some(real) => result.mse_against(&real)?.to_string(),
        None => String::new(),
    };
    let mut out = io::stdout().lock();
    writeln!(out, "run_id,seed,r,p_info,sigma,A,D_tot,MSE")?;
    writeln!(
        out,
        "0,{seed},{},{},{},{},{},{mse}",
        config.walk_radius_m,
        config.p_info,
        scenario.demand.kernel.sigma,
        result.aggregates.adverse_rate,
        result.aggregates.detour
    )?;
    Ok(())
}

fn calibrate(
    dir: &Path,
    real: &Path,
    sigma: &[f64],
    p_info: &[f64],
    radius: &[f64],
    reps: usize,
    seed: u64,
) -> Result<()> {
    let scenario = Scenario::load(dir)?;
    let day = read_day(real)?;
    let reference: Vec<Vec<f64>> = scenario
        .network
        .stations()
        .iter()
        .map(|s| {
            day.row(s.id)
                .map(<[f64]>::to_vec)
                .with_context(|| format!("{} has no profile for station {}", real.display(), s.id))
        })
        .collect::<Result<_>>()?;
    let grid = CalibrationGrid {
        sigma,
        p_info,
        radius,
        replications: reps,
        base_seed: seed,
    };
    let cal = experiments::calibrate(&scenario, &reference, &grid)?;
    for b in &cal.best {
        eprintln!(
            "radius {}: best sigma {} p_info {} (mse {})",
            b.params.radius, b.params.sigma, b.params.p_info, b.mse.mean
        );
    }
    io::stdout().write_all(experiments::surface_csv(&cal.surface, &cal.best).as_bytes())?;
    Ok(())
}
