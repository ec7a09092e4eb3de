//! Command-line driver: single trajectories, ensembles, decomposition of
//! snapshots, and operator spectra.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use skdv::grid::{Grid, Spectral, WeightConfig};
use skdv::harness::{
    self, read_snapshot_csv, trajectory_to_csv, write_outputs, RawConfig,
};
use skdv::modulation::{decompose, exit_times};
use skdv::soliton::SolitonParams;
use skdv::spectral::WeightedOperator;

#[derive(Parser)]
#[command(name = "skdv", about = "soliton dynamics of the stochastically forced KdV equation", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trajectory and write its CSV record.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the configured ensemble and write trajectory CSVs plus summary.json.
    Ensemble {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit (c, ξ) to a snapshot CSV with columns x,u.
    Decompose {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long = "c-guess")]
        c_guess: f64,
        #[arg(long = "xi-guess")]
        xi_guess: f64,
        /// Weight rate for the reported weighted norms.
        #[arg(long, default_value_t = 0.2)]
        weight: f64,
    },
    /// Eigenvalues of the weighted traveling-wave operator as CSV (re, im).
    Spectrum {
        #[arg(long)]
        c: f64,
        #[arg(long)]
        w: f64,
        #[arg(long)]
        n: usize,
        /// Domain length.
        #[arg(long, default_value_t = 80.0)]
        length: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> skdv::Result<()> {
    match cli.command {
        Command::Simulate { config, seed, out } => {
            let raw = RawConfig::from_path(&config)?;
            let cfg = raw.build()?;
            let seed = seed.unwrap_or(cfg.seed);
            let mut rec = skdv::solver::simulate_trajectory(&cfg.sim, seed, 0)?;
            rec.exit = Some(exit_times(&rec, &cfg.thresholds, &cfg.sim.window));
            std::fs::create_dir_all(&out)
                .map_err(|e| skdv::Error::io(out.display().to_string(), e))?;
            let path = out.join("traj_00000.csv");
            std::fs::write(&path, trajectory_to_csv(&rec))
                .map_err(|e| skdv::Error::io(path.display().to_string(), e))?;
            let exit = rec.exit.unwrap();
            println!(
                "{}",
                serde_json::json!({
                    "config_hash": cfg.config_hash,
                    "seed": seed,
                    "records": rec.len(),
                    "c_final": rec.c.last(),
                    "c_ap_final": rec.c_ap.last(),
                    "t_st": exit.t_st,
                    "t_en": exit.t_en,
                    "t_c": exit.t_c,
                    "t_ap": exit.t_ap,
                })
            );
            Ok(())
        }
        Command::Ensemble { config, out } => {
            let raw = RawConfig::from_path(&config)?;
            let cfg = raw.build()?;
            let run = harness::run_ensemble(&cfg)?;
            write_outputs(&run.stats, &run.records, &out)?;
            println!("{}", serde_json::to_string_pretty(&run.stats).expect("stats"));
            Ok(())
        }
        Command::Decompose { snapshot, c_guess, xi_guess, weight } => {
            let u = read_snapshot_csv(&snapshot)?;
            let spectral = Spectral::new(u.grid().clone());
            let w = WeightConfig::new(weight)?;
            let d = decompose(&u, SolitonParams::new(c_guess, xi_guess)?, &w, &spectral)?;
            println!(
                "{}",
                serde_json::json!({
                    "c": d.c,
                    "xi": d.xi,
                    "r1": d.residuals.0,
                    "r2": d.residuals.1,
                    "l2_v": skdv::l2_norm(&d.v),
                    "l2w_v": skdv::weighted_l2_norm(&d.v, &w),
                    "h1w_v": spectral.weighted_h1_norm(&d.v, &w),
                })
            );
            Ok(())
        }
        Command::Spectrum { c, w, n, length, out } => {
            let grid = Arc::new(Grid::new(length, n)?);
            let spectral = Spectral::new(grid);
            let op = WeightedOperator::build(c, w, &spectral)?;
            let spectrum = op.spectrum()?;
            let mut rows: Vec<(f64, f64)> =
                spectrum.filtered.iter().map(|z| (z.re, z.im)).collect();
            rows.sort_by(|a, b| (b.0, b.1).partial_cmp(&(a.0, a.1)).expect("finite"));
            let mut text = String::from("re,im\n");
            for (re, im) in rows {
                text.push_str(&format!("{re:.16e},{im:.16e}\n"));
            }
            std::fs::write(&out, text)
                .map_err(|e| skdv::Error::io(out.display().to_string(), e))?;
            eprintln!(
                "wrote {} filtered eigenvalues ({} boundary artifacts dropped)",
                spectrum.filtered.len(),
                spectrum.boundary.len()
            );
            Ok(())
        }
    }
}
