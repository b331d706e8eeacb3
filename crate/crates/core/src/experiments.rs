//! Replicated runs, MSE calibration surfaces and parameter sweeps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::demand::{DemandModel, KernelSpec};
use crate::scenario::{self, Scenario, ScenarioError};
use crate::sim::{RunResult, SimConfig, SimError};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.96;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("every grid point has a kernel wider than the district")]
    AllDegenerate,
    #[error("{0} must not be empty")]
    EmptyAxis(&'static str),
    #[error("replications must be at least 1")]
    NoReplications,
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Spec { path: PathBuf, message: String },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Demand(#[from] crate::demand::DemandError),
    #[error(transparent)]
    Indicator(#[from] crate::indicators::IndicatorError),
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `i`; stable, so adding replications never changes earlier ones.
pub fn replication_seed(base: u64, i: u64) -> u64 {
    splitmix64(splitmix64(base) ^ i)
}

/// Replications needed for a 95% interval of length `target` standard deviations.
///
/// `n = ceil((2 * 1.96 / target)^2)`; the default target of one half gives 62.
pub fn required_replications(target: f64) -> u64 {
    assert!(
        target > 0.0 && target.is_finite(),
        "target must be positive"
    );
    (2.0 * Z95 / target).powi(2).ceil() as u64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation, 0 for a single value.
    pub std: f64,
    /// `1.96 * std / sqrt(n)`.
    pub ci_half: f64,
}

impl Summary {
    /// Summary over the finite values of `xs`.
    pub fn of(xs: &[f64]) -> Self {
        let v: Vec<f64> = xs.iter().copied().filter(|x| x.is_finite()).collect();
        let n = v.len();
        if n == 0 {
            return Self {
                n,
                mean: f64::NAN,
                std: f64::NAN,
                ci_half: f64::NAN,
            };
        }
        let mean = v.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            n,
            mean,
            std,
            ci_half: Z95 * std / (n as f64).sqrt(),
        }
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.ci_half
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.ci_half
    }

    /// Sample skewness `g1`.
    pub fn skewness(xs: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let m3 = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
        if m2 == 0.0 {
            0.0
        } else {
            m3 / m2.powf(1.5)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub radius: f64,
    pub p_info: f64,
    pub sigma: f64,
}

impl Params {
    pub fn label(&self) -> String {
        format!("r{}_p{}_s{}", self.radius, self.p_info, self.sigma)
    }

    pub fn apply(&self, base: &SimConfig) -> SimConfig {
        SimConfig {
            walk_radius_m: self.radius,
            p_info: self.p_info,
            sigma: self.sigma,
            ..base.clone()
        }
    }
}

/// Indicators of one replication.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRow {
    pub rep: usize,
    pub seed: u64,
    pub adverse: f64,
    pub detour: f64,
    pub mse: Option<f64>,
    pub mean_load: Vec<f64>,
    pub heterogeneity: Vec<f64>,
}

impl RunRow {
    fn from_result(
        rep: usize,
        r: RunResult,
        reference: Option<&[Vec<f64>]>,
    ) -> Result<Self, ExperimentError> {
        let mse = reference.map(|real| r.mse_against(real)).transpose()?;
        Ok(Self {
            rep,
            seed: r.seed,
            adverse: r.aggregates.adverse_rate,
            detour: r.aggregates.detour,
            mse,
            mean_load: r.series.mean_load,
            heterogeneity: r.series.heterogeneity,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointSummary {
    pub params: Params,
    pub adverse: Summary,
    pub detour: Summary,
    pub mse: Option<Summary>,
    pub runs: Vec<RunRow>,
}

impl PointSummary {
    pub fn replications(&self) -> usize {
        self.runs.len()
    }
}

/// Runs `n` replications of one parameter point on the current rayon pool.
///
/// Results are gathered in replication order, so the summary does not depend on scheduling.
pub fn run_point(
    scenario: &Scenario,
    demand: &DemandModel,
    params: Params,
    n: usize,
    base_seed: u64,
    reference: Option<&[Vec<f64>]>,
) -> Result<PointSummary, ExperimentError> {
    if n == 0 {
        return Err(ExperimentError::NoReplications);
    }
    let sim = scenario.simulation_with(demand, params.apply(&scenario.config))?;
    let runs: Vec<RunRow> = (0..n)
        .into_par_iter()
        .map(|i| {
            RunRow::from_result(
                i,
                sim.run(replication_seed(base_seed, i as u64), false),
                reference,
            )
        })
        .collect::<Result<_, _>>()?;
    let pick = |f: fn(&RunRow) -> f64| runs.iter().map(f).collect::<Vec<_>>();
    let mse = reference.map(|_| Summary::of(&pick(|r| r.mse.expect("reference given"))));
    Ok(PointSummary {
        params,
        adverse: Summary::of(&pick(|r| r.adverse)),
        detour: Summary::of(&pick(|r| r.detour)),
        mse,
        runs,
    })
}

/// Kernels wider than the district give quasi-uniform fields and are left out of the argmin.
pub fn is_degenerate(sigma: f64, diameter: f64) -> bool {
    KernelSpec { sigma }.is_degenerate(diameter)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurfacePoint {
    pub params: Params,
    pub mse: Summary,
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub surface: Vec<SurfacePoint>,
    /// Best non-degenerate point per radius, in input radius order.
    pub best: Vec<SurfacePoint>,
}

pub struct CalibrationGrid<'a> {
    pub sigma: &'a [f64],
    pub p_info: &'a [f64],
    pub radius: &'a [f64],
    pub replications: usize,
    pub base_seed: u64,
}

/// Mean MSE over a `(sigma, p_info)` grid for each radius and its argmin.
///
/// Every point uses the same replication seeds. Ties go to the smaller sigma, then the smaller
/// `p_info`.
pub fn calibrate(
    scenario: &Scenario,
    reference: &[Vec<f64>],
    grid: &CalibrationGrid<'_>,
) -> Result<Calibration, ExperimentError> {
    for (name, axis) in [
        ("sigma grid", grid.sigma),
        ("p_info grid", grid.p_info),
        ("radius list", grid.radius),
    ] {
        if axis.is_empty() {
            return Err(ExperimentError::EmptyAxis(name));
        }
    }
    let diameter = scenario.network.diameter();
    let demands: Vec<DemandModel> = grid
        .sigma
        .iter()
        .map(|&s| {
            scenario
                .demand
                .refit(&scenario.network, KernelSpec::new(s)?)
        })
        .collect::<Result<_, _>>()?;
    let mut surface = Vec::new();
    for &radius in grid.radius {
        for (demand, &sigma) in demands.iter().zip(grid.sigma) {
            for &p_info in grid.p_info {
                let params = Params {
                    radius,
                    p_info,
                    sigma,
                };
                let point = run_point(
                    scenario,
                    demand,
                    params,
                    grid.replications,
                    grid.base_seed,
                    Some(reference),
                )?;
                surface.push(SurfacePoint {
                    params,
                    mse: point.mse.expect("reference given"),
                    degenerate: is_degenerate(sigma, diameter),
                });
            }
        }
    }
    let best = argmin_per_radius(&surface, grid.radius)?;
    Ok(Calibration { surface, best })
}

pub fn argmin_per_radius(
    surface: &[SurfacePoint],
    radii: &[f64],
) -> Result<Vec<SurfacePoint>, ExperimentError> {
    let mut best = Vec::new();
    for &r in radii {
        let winner = surface
            .iter()
            .filter(|p| p.params.radius == r && !p.degenerate)
            .min_by(|a, b| {
                a.mse
                    .mean
                    .total_cmp(&b.mse.mean)
                    .then(a.params.sigma.total_cmp(&b.params.sigma))
                    .then(a.params.p_info.total_cmp(&b.params.p_info))
            })
            .ok_or(ExperimentError::AllDegenerate)?;
        best.push(winner.clone());
    }
    Ok(best)
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut out = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let r = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                out[k] = r;
            }
            i = j + 1;
        }
        out
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        f64::NAN
    } else {
        cov / (vx * vy).sqrt()
    }
}

/// Smallest `x` whose `y` has dropped by at least `share` of the total decrease from `y[0]`.
///
/// Points must be sorted by `x`. `None` when `y` never decreases.
pub fn decrease_threshold(x: &[f64], y: &[f64], share: f64) -> Option<f64> {
    let first = *y.first()?;
    let lowest = y.iter().copied().fold(f64::INFINITY, f64::min);
    let total = first - lowest;
    if total.is_nan() || total <= 0.0 {
        return None;
    }
    x.iter()
        .zip(y)
        .find(|(_, &v)| first - v >= share * total)
        .map(|(&x, _)| x)
}

fn default_true() -> bool {
    true
}

/// Contents of a `sweep.json` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub name: String,
    /// Scenario directory, relative to the sweep file.
    pub scenario: PathBuf,
    pub radius: Vec<f64>,
    pub p_info: Vec<f64>,
    pub sigma: Vec<f64>,
    pub replications: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Parent of `<name>/`, relative to the sweep file; defaults to `results`.
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub write_series: bool,
}

impl SweepSpec {
    pub fn check(&self) -> Result<(), ExperimentError> {
        for (name, axis) in [
            ("radius", &self.radius),
            ("p_info", &self.p_info),
            ("sigma", &self.sigma),
        ] {
            if axis.is_empty() {
                return Err(ExperimentError::EmptyAxis(name));
            }
        }
        if self.replications == 0 {
            return Err(ExperimentError::NoReplications);
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<Params> {
        let mut out = Vec::new();
        for &sigma in &self.sigma {
            for &radius in &self.radius {
                for &p_info in &self.p_info {
                    out.push(Params {
                        radius,
                        p_info,
                        sigma,
                    });
                }
            }
        }
        out
    }
}

pub fn read_sweep_spec(path: &Path) -> Result<SweepSpec, ExperimentError> {
    let text = fs::read_to_string(path).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut spec: SweepSpec = serde_json::from_str(&text).map_err(|e| ExperimentError::Spec {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    spec.scenario = base.join(&spec.scenario);
    spec.output = Some(
        base.join(
            spec.output
                .clone()
                .unwrap_or_else(|| PathBuf::from("results")),
        ),
    );
    spec.check()?;
    Ok(spec)
}

pub struct SweepOutcome {
    pub dir: PathBuf,
    pub points: Vec<PointSummary>,
}

/// Runs every point of the sweep and writes the results directory.
pub fn sweep(spec: &SweepSpec) -> Result<SweepOutcome, ExperimentError> {
    spec.check()?;
    let scenario = Scenario::load(&spec.scenario)?;
    let reference = scenario.reference();
    let mut demands = BTreeMap::new();
    for &s in &spec.sigma {
        let key = s.to_bits();
        if let std::collections::btree_map::Entry::Vacant(e) = demands.entry(key) {
            e.insert(
                scenario
                    .demand
                    .refit(&scenario.network, KernelSpec::new(s)?)?,
            );
        }
    }
    let points = spec
        .points()
        .into_iter()
        .map(|p| {
            run_point(
                &scenario,
                &demands[&p.sigma.to_bits()],
                p,
                spec.replications,
                spec.base_seed,
                reference.as_deref(),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let dir = spec
        .output
        .clone()
        .unwrap_or_else(|| PathBuf::from("results"))
        .join(&spec.name);
    write_sweep(&dir, spec, &scenario, &points)?;
    Ok(SweepOutcome { dir, points })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn put(path: &Path, text: &str) -> Result<(), ExperimentError> {
    fs::write(path, text).map_err(io_err(path))
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

pub fn points_csv(points: &[PointSummary]) -> String {
    let mut s = String::from(
        "point,radius,p_info,sigma,n,A_mean,A_std,A_ci,D_tot_mean,D_tot_std,D_tot_ci,MSE_mean,MSE_std,MSE_ci\n",
    );
    for (i, p) in points.iter().enumerate() {
        let m = p.mse;
        let _ = writeln!(
            s,
            "{i},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            p.params.radius,
            p.params.p_info,
            p.params.sigma,
            p.replications(),
            p.adverse.mean,
            p.adverse.std,
            p.adverse.ci_half,
            p.detour.mean,
            p.detour.std,
            p.detour.ci_half,
            opt(m.map(|m| m.mean)),
            opt(m.map(|m| m.std)),
            opt(m.map(|m| m.ci_half)),
        );
    }
    s
}

/// One row per replication: `run_id,seed,r,p_info,sigma,A,D_tot,MSE`.
pub fn runs_csv(points: &[PointSummary]) -> String {
    let mut s = String::from("run_id,seed,r,p_info,sigma,A,D_tot,MSE\n");
    for (i, p) in points.iter().enumerate() {
        for r in &p.runs {
            let _ = writeln!(
                s,
                "{i}-{},{},{},{},{},{},{},{}",
                r.rep,
                r.seed,
                p.params.radius,
                p.params.p_info,
                p.params.sigma,
                r.adverse,
                r.detour,
                opt(r.mse)
            );
        }
    }
    s
}

/// Per-point mean curves of `h(t)` and mean load with their 95% half-widths.
pub fn curves_csv(points: &[PointSummary]) -> String {
    let mut s = String::from("point,radius,p_info,sigma,tick,h_mean,h_ci,load_mean,load_ci\n");
    for (i, p) in points.iter().enumerate() {
        let ticks = p.runs[0].heterogeneity.len();
        for t in 0..ticks {
            let h = Summary::of(
                &p.runs
                    .iter()
                    .map(|r| r.heterogeneity[t])
                    .collect::<Vec<_>>(),
            );
            let l = Summary::of(&p.runs.iter().map(|r| r.mean_load[t]).collect::<Vec<_>>());
            let _ = writeln!(
                s,
                "{i},{},{},{},{t},{},{},{},{}",
                p.params.radius,
                p.params.p_info,
                p.params.sigma,
                h.mean,
                h.ci_half,
                l.mean,
                l.ci_half
            );
        }
    }
    s
}

/// For every `(radius, sigma)` pair: Spearman rho of mean A and of mean D_tot against
/// `p_info`, and the smallest `p_info` reaching 80% of the total decrease of A.
pub fn report_csv(points: &[PointSummary]) -> String {
    let mut groups: BTreeMap<(u64, u64), Vec<&PointSummary>> = BTreeMap::new();
    for p in points {
        groups
            .entry((p.params.radius.to_bits(), p.params.sigma.to_bits()))
            .or_default()
            .push(p);
    }
    let mut s = String::from(
        "radius,sigma,points,spearman_A_p_info,spearman_D_tot_p_info,threshold_80_A\n",
    );
    let mut keys: Vec<_> = groups.keys().copied().collect();
    keys.sort_by(|a, b| {
        f64::from_bits(a.0)
            .total_cmp(&f64::from_bits(b.0))
            .then(f64::from_bits(a.1).total_cmp(&f64::from_bits(b.1)))
    });
    for key in keys {
        let mut g = groups[&key].clone();
        g.sort_by(|a, b| a.params.p_info.total_cmp(&b.params.p_info));
        let x: Vec<f64> = g.iter().map(|p| p.params.p_info).collect();
        let a: Vec<f64> = g.iter().map(|p| p.adverse.mean).collect();
        let d: Vec<f64> = g.iter().map(|p| p.detour.mean).collect();
        let (rho_a, rho_d) = if g.len() > 1 {
            (spearman(&x, &a), spearman(&x, &d))
        } else {
            (f64::NAN, f64::NAN)
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            f64::from_bits(key.0),
            f64::from_bits(key.1),
            g.len(),
            rho_a,
            rho_d,
            opt(decrease_threshold(&x, &a, 0.8))
        );
    }
    s
}

pub fn surface_csv(surface: &[SurfacePoint], best: &[SurfacePoint]) -> String {
    let mut s = String::from("radius,sigma,p_info,n,mse_mean,mse_std,mse_ci,degenerate,best\n");
    for p in surface {
        let is_best = best.iter().any(|b| b.params == p.params);
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            p.params.radius,
            p.params.sigma,
            p.params.p_info,
            p.mse.n,
            p.mse.mean,
            p.mse.std,
            p.mse.ci_half,
            p.degenerate as u8,
            is_best as u8
        );
    }
    s
}

fn git_blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Git-style content hash of a scenario directory: sha256 over the sorted
/// `<blob hash> <file name>` lines of its files.
pub fn scenario_hash(dir: &Path) -> Result<String, ExperimentError> {
    let mut lines = String::new();
    for name in [
        scenario::CONFIG_FILE,
        scenario::DEMAND_FILE,
        scenario::NETWORK_FILE,
        scenario::STANDARD_DAY_FILE,
    ] {
        let path = dir.join(name);
        if path.is_file() {
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            let _ = writeln!(lines, "{} {name}", git_blob_hash(&bytes));
        }
    }
    Ok(hex(&Sha256::digest(lines.as_bytes())))
}

fn write_sweep(
    dir: &Path,
    spec: &SweepSpec,
    scenario: &Scenario,
    points: &[PointSummary],
) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    put(&dir.join("points.csv"), &points_csv(points))?;
    put(&dir.join("runs.csv"), &runs_csv(points))?;
    put(&dir.join("curves.csv"), &curves_csv(points))?;
    put(&dir.join("report.csv"), &report_csv(points))?;
    if points.iter().all(|p| p.mse.is_some()) {
        let surface: Vec<SurfacePoint> = points
            .iter()
            .map(|p| SurfacePoint {
                params: p.params,
                mse: p.mse.expect("checked"),
                degenerate: is_degenerate(p.params.sigma, scenario.network.diameter()),
            })
            .collect();
        let best = argmin_per_radius(&surface, &spec.radius).unwrap_or_default();
        put(&dir.join("surface.csv"), &surface_csv(&surface, &best))?;
    }
    if spec.write_series {
        for (i, p) in points.iter().enumerate() {
            let pdir = dir.join("series").join(format!("{i}_{}", p.params.label()));
            fs::create_dir_all(&pdir).map_err(io_err(&pdir))?;
            for r in &p.runs {
                let mut s = String::from("tick,mean_load,heterogeneity\n");
                for (t, (l, h)) in r.mean_load.iter().zip(&r.heterogeneity).enumerate() {
                    let _ = writeln!(s, "{t},{l},{h}");
                }
                put(&pdir.join(format!("{}.csv", r.rep)), &s)?;
            }
        }
    }
    let meta = serde_json::json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "sweep": spec,
        "scenario_config": scenario.config,
        "scenario_hash": scenario_hash(&spec.scenario)?,
        "replication_seeds": "splitmix64(splitmix64(base_seed) xor index)",
        "distances": "network shortest-path distances for routing and for h(t)",
    });
    put(
        &dir.join("meta.json"),
        &(serde_json::to_string_pretty(&meta).expect("json") + "\n"),
    )
}
