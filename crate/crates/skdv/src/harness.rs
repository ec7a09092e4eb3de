//! Experiment orchestration: configuration files, ensemble Monte Carlo,
//! exit-time statistics and persistence.
//!
//! Outputs are deterministic in `(config, seed)`: trajectories are keyed by
//! index, aggregation is order-independent, and no timestamps are written, so
//! reruns are byte-identical. Floating-point columns are serialized with 17
//! significant digits, which round-trips `f64` exactly.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid, Spectral};
use crate::modulation::{exit_times, CoefficientTables, ExitThresholds, ExitTimes};
use crate::noise::{build_kernel_with_options, KernelFamily};
use crate::solver::{simulate_trajectory_with_tables, ForcingProfile, SimConfig};
use crate::soliton::AmplitudeWindow;

/// Column-oriented time series of one trajectory.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub c: Vec<f64>,
    pub xi: Vec<f64>,
    pub omega: Vec<f64>,
    pub c_ap: Vec<f64>,
    pub l2_v: Vec<f64>,
    pub l2w_v: Vec<f64>,
    pub h1w_v: Vec<f64>,
    pub energy: Vec<f64>,
    pub exit: Option<ExitTimes>,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `sup_{t ≤ T} |c(t) − c_ap(t)|`.
    pub fn sup_amplitude_error(&self) -> f64 {
        self.c
            .iter()
            .zip(&self.c_ap)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Full experiment description.
#[derive(Clone)]
pub struct ExperimentConfig {
    pub sim: SimConfig,
    pub thresholds: ExitThresholds,
    pub n_trajectories: usize,
    pub seed: u64,
    pub config_hash: String,
}

impl ExperimentConfig {
    pub fn window(&self) -> &AmplitudeWindow {
        &self.sim.window
    }
}

/// Ensemble-level exit statistics. `stderr = √(p(1−p)/n)` over the successful
/// trajectories.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub config_hash: String,
    pub n: usize,
    pub p_exit_st: f64,
    pub p_exit_st_stderr: f64,
    pub p_exit_ap: f64,
    pub p_exit_ap_stderr: f64,
    pub p_exit_c: f64,
    pub sup_err_q50: f64,
    pub sup_err_q90: f64,
    pub failures: usize,
    #[serde(skip)]
    pub p_exit_c_stderr: f64,
}

/// Run `n_trajectories` independent trajectories (work-stealing parallel map
/// over indices) and aggregate exit statistics. Per-trajectory failures are
/// counted, never fatal.
pub fn run_ensemble(cfg: &ExperimentConfig) -> Result<EnsembleRun> {
    if cfg.n_trajectories == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let tables = CoefficientTables::build(&cfg.sim.kernel, &cfg.sim.window, &cfg.sim.spectral)?;
    let records: Vec<std::result::Result<TrajectoryRecord, String>> = (0..cfg.n_trajectories)
        .into_par_iter()
        .map(|i| {
            simulate_trajectory_with_tables(&cfg.sim, cfg.seed, i as u64, tables.clone())
                .map(|mut rec| {
                    rec.exit = Some(exit_times(&rec, &cfg.thresholds, &cfg.sim.window));
                    rec
                })
                .map_err(|e| e.to_string())
        })
        .collect();
    let stats = summarize(&records, &cfg.config_hash)?;
    Ok(EnsembleRun { stats, records })
}

pub struct EnsembleRun {
    pub stats: EnsembleStats,
    pub records: Vec<std::result::Result<TrajectoryRecord, String>>,
}

/// Aggregate exit frequencies and reduction-error quantiles.
pub fn summarize(
    records: &[std::result::Result<TrajectoryRecord, String>],
    config_hash: &str,
) -> Result<EnsembleStats> {
    if records.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let ok: Vec<&TrajectoryRecord> = records.iter().filter_map(|r| r.as_ref().ok()).collect();
    let failures = records.len() - ok.len();
    if ok.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let n = ok.len();
    let count = |f: &dyn Fn(&ExitTimes) -> bool| -> usize {
        ok.iter()
            .filter(|r| r.exit.as_ref().map(f).unwrap_or(false))
            .count()
    };
    let p_of = |k: usize| k as f64 / n as f64;
    let stderr_of = |p: f64| (p * (1.0 - p) / n as f64).sqrt();

    let p_exit_st = p_of(count(&|e| e.t_st.is_some()));
    let p_exit_ap = p_of(count(&|e| e.t_ap.is_some()));
    let p_exit_c = p_of(count(&|e| e.t_c.is_some()));

    let mut sups: Vec<f64> = ok.iter().map(|r| r.sup_amplitude_error()).collect();
    sups.sort_by(|a, b| a.partial_cmp(b).expect("finite sup errors"));
    let quantile = |q: f64| -> f64 {
        let idx = ((q * n as f64).ceil() as usize).clamp(1, n) - 1;
        sups[idx]
    };

    Ok(EnsembleStats {
        config_hash: config_hash.to_string(),
        n,
        p_exit_st,
        p_exit_st_stderr: stderr_of(p_exit_st),
        p_exit_ap,
        p_exit_ap_stderr: stderr_of(p_exit_ap),
        p_exit_c,
        sup_err_q50: quantile(0.5),
        sup_err_q90: quantile(0.9),
        failures,
        p_exit_c_stderr: stderr_of(p_exit_c),
    })
}

const CSV_HEADER: &str = "t,c,xi,omega,c_ap,l2_v,l2w_v,h1w_v,energy";

/// Serialize one trajectory as CSV with the fixed column order.
pub fn trajectory_to_csv(rec: &TrajectoryRecord) -> String {
    let mut out = String::with_capacity(rec.len() * 180 + 64);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for i in 0..rec.len() {
        // {:.16e} prints 17 significant digits: lossless f64 round-trip
        out.push_str(&format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            rec.times[i],
            rec.c[i],
            rec.xi[i],
            rec.omega[i],
            rec.c_ap[i],
            rec.l2_v[i],
            rec.l2w_v[i],
            rec.h1w_v[i],
            rec.energy[i],
        ));
    }
    out
}

/// Parse a trajectory CSV produced by [`trajectory_to_csv`].
pub fn trajectory_from_csv(text: &str) -> Result<TrajectoryRecord> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Config("empty trajectory csv".into()))?;
    if header.trim() != CSV_HEADER {
        return Err(Error::Config(format!("unexpected csv header: {header}")));
    }
    let mut rec = TrajectoryRecord::default();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 9 {
            return Err(Error::Config(format!(
                "line {}: expected 9 columns, got {}",
                lineno + 2,
                cols.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 2)))
        };
        rec.times.push(parse(cols[0])?);
        rec.c.push(parse(cols[1])?);
        rec.xi.push(parse(cols[2])?);
        rec.omega.push(parse(cols[3])?);
        rec.c_ap.push(parse(cols[4])?);
        rec.l2_v.push(parse(cols[5])?);
        rec.l2w_v.push(parse(cols[6])?);
        rec.h1w_v.push(parse(cols[7])?);
        rec.energy.push(parse(cols[8])?);
    }
    Ok(rec)
}

/// Write per-trajectory CSVs and the summary JSON into `dir`.
pub fn write_outputs(
    stats: &EnsembleStats,
    records: &[std::result::Result<TrajectoryRecord, String>],
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    for (i, rec) in records.iter().enumerate() {
        if let Ok(rec) = rec {
            let path = dir.join(format!("traj_{i:05}.csv"));
            let mut file =
                fs::File::create(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
            file.write_all(trajectory_to_csv(rec).as_bytes())
                .map_err(|e| Error::io(path.display().to_string(), e))?;
        }
    }
    let path = dir.join("summary.json");
    let json = serde_json::to_string_pretty(stats).expect("stats serialize");
    let mut file = fs::File::create(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(json.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(b"\n")
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Config file (TOML sections [grid], [noise], [forcing], [run], [thresholds])
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawConfig {
    pub grid: RawGrid,
    pub noise: RawNoise,
    pub forcing: RawForcing,
    pub run: RawRun,
    #[serde(default)]
    pub thresholds: RawThresholds,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawGrid {
    pub length: f64,
    pub n_points: usize,
    #[serde(default)]
    pub origin: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawNoise {
    pub family: KernelFamily,
    pub correlation_length: f64,
    #[serde(default = "default_true")]
    pub normalize: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawForcing {
    pub kind: String,
    #[serde(default)]
    pub amplitude: Option<f64>,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub t0: Option<f64>,
    #[serde(default)]
    pub width: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawRun {
    pub epsilon: f64,
    pub sigma: f64,
    pub t_end: f64,
    pub dt: f64,
    pub c_star: f64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default = "default_n_trajectories")]
    pub n_trajectories: usize,
    pub seed: u64,
}

fn default_record_every() -> usize {
    10
}

fn default_n_trajectories() -> usize {
    1
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RawThresholds {
    pub eta: Option<f64>,
    pub eta_l2: Option<f64>,
    pub lambda: Option<f64>,
    pub c_min: Option<f64>,
    pub c_max: Option<f64>,
    pub w: Option<f64>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text)
    }

    fn forcing(&self) -> Result<ForcingProfile> {
        let amp = self.forcing.amplitude;
        let need_amp =
            || amp.ok_or_else(|| Error::Config("forcing.amplitude is required".into()));
        match self.forcing.kind.as_str() {
            "zero" => Ok(ForcingProfile::Zero),
            "constant" => Ok(ForcingProfile::Constant { amplitude: need_amp()? }),
            "exp_decay" => Ok(ForcingProfile::ExpDecay {
                amplitude: need_amp()?,
                tau: self
                    .forcing
                    .tau
                    .ok_or_else(|| Error::Config("forcing.tau is required for exp_decay".into()))?,
            }),
            "bump" => Ok(ForcingProfile::Bump {
                amplitude: need_amp()?,
                t0: self
                    .forcing
                    .t0
                    .ok_or_else(|| Error::Config("forcing.t0 is required for bump".into()))?,
                width: self
                    .forcing
                    .width
                    .ok_or_else(|| Error::Config("forcing.width is required for bump".into()))?,
            }),
            other => Err(Error::Config(format!("unknown forcing kind '{other}'"))),
        }
    }

    /// SHA-256 over the canonical JSON form of the parsed config (whitespace
    /// and key formatting in the file do not affect the hash).
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serialize");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        hex_string(&hasher.finalize())
    }

    /// Build the runtime experiment: grid, kernel, amplitude window and
    /// thresholds.
    ///
    /// The window defaults to the forcing-budget form `[c*e^{−3E}, c*e^{3E}]`
    /// with `E = ε∫₀^{t_end}|f|`; when that is degenerate (no deterministic
    /// forcing) it falls back to `[c*/2, 2c*]`. Explicit `thresholds.c_min` /
    /// `c_max` override both.
    pub fn build(&self) -> Result<ExperimentConfig> {
        let grid = match self.grid.origin {
            Some(origin) => Grid::with_origin(self.grid.length, self.grid.n_points, origin)?,
            None => Grid::new(self.grid.length, self.grid.n_points)?,
        };
        let spectral = Arc::new(Spectral::new(Arc::new(grid)));
        let kernel = Arc::new(build_kernel_with_options(
            self.noise.family,
            self.noise.correlation_length,
            &spectral,
            self.noise.normalize,
        )?);
        let forcing = self.forcing()?;

        let budget = self.run.epsilon * forcing.abs_integral(self.run.t_end);
        let (mut c_min, mut c_max) = if budget > 1e-12 {
            let f = (3.0 * budget).exp();
            (self.run.c_star / f, self.run.c_star * f)
        } else {
            (0.5 * self.run.c_star, 2.0 * self.run.c_star)
        };
        if let Some(v) = self.thresholds.c_min {
            c_min = v;
        }
        if let Some(v) = self.thresholds.c_max {
            c_max = v;
        }
        let w = self
            .thresholds
            .w
            .unwrap_or_else(|| 0.9 * c_min.sqrt() / 3.0);
        let window = AmplitudeWindow::new(c_min, c_max, w)?;

        let sim = SimConfig::new(
            spectral,
            kernel,
            self.run.epsilon,
            self.run.sigma,
            forcing,
            self.run.t_end,
            self.run.dt,
            self.run.c_star,
            self.run.record_every,
            window,
        )?;

        let eta = self.thresholds.eta.unwrap_or(0.1);
        let thresholds = ExitThresholds {
            eta_h1w: eta,
            eta_l2: self.thresholds.eta_l2.unwrap_or(eta),
            lambda_ap: self.thresholds.lambda.unwrap_or(0.05),
        };
        if thresholds.eta_h1w <= 0.0 || thresholds.eta_l2 <= 0.0 || thresholds.lambda_ap <= 0.0 {
            return Err(Error::Config("thresholds must be positive".into()));
        }

        Ok(ExperimentConfig {
            sim,
            thresholds,
            n_trajectories: self.run.n_trajectories,
            seed: self.run.seed,
            config_hash: self.hash(),
        })
    }
}

fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Snapshot CSV (`x,u` columns): reconstructs the grid from the coordinates.
pub fn read_snapshot_csv(path: &Path) -> Result<Field> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut xs = Vec::new();
    let mut us = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with('x')) {
            continue;
        }
        let mut cols = line.split(',');
        let x: f64 = cols
            .next()
            .ok_or_else(|| Error::Config(format!("line {}: missing x", i + 1)))?
            .trim()
            .parse()
            .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        let u: f64 = cols
            .next()
            .ok_or_else(|| Error::Config(format!("line {}: missing u", i + 1)))?
            .trim()
            .parse()
            .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        xs.push(x);
        us.push(u);
    }
    if xs.len() < 8 {
        return Err(Error::Config("snapshot needs at least 8 samples".into()));
    }
    let dx = xs[1] - xs[0];
    for w in xs.windows(2) {
        if ((w[1] - w[0]) - dx).abs() > 1e-9 * dx.abs().max(1.0) {
            return Err(Error::Config("snapshot grid is not uniform".into()));
        }
    }
    let n = xs.len();
    let grid = Grid::with_origin(dx * n as f64, n, xs[0])?;
    Field::new(Arc::new(grid), us)
}

/// Write a snapshot CSV (`x,u`).
pub fn write_snapshot_csv(field: &Field, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(field.values().len() * 40 + 8);
    out.push_str("x,u\n");
    for (j, v) in field.values().iter().enumerate() {
        out.push_str(&format!("{:.16e},{:.16e}\n", field.grid().x(j), v));
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}
