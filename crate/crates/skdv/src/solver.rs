//! Time integration of the forced stochastic KdV equation
//!
//! `du = −(∂ₓ³u + 2u∂ₓu) dt + ε f(t) u dt + σ u dW^Q`.
//!
//! One step is a Strang composition:
//!
//! 1. half-step of the Airy flow, exact in Fourier space (`û ← e^{ik³dt/2} û`),
//! 2. a full RK4 step of `u_t = −∂ₓ(u²)` with 2/3-rule dealiasing of the
//!    quadratic term,
//! 3. the multiplicative forcing/noise factor
//!    `u ← u·exp(εf dt − ½σ²q(0) dt + σ dW)`, which solves `du = εfu dt + σu dW`
//!    exactly in law at every grid point (Itô compensator `−½σ²q(0)dt`),
//! 4. the second Airy half-step.
//!
//! The exact linear substep removes the stiff dispersive CFL constraint; the
//! explicit stage only sees the advective speed `2|u|`.

use std::sync::Arc;

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{l2_norm_sq, Field, Grid, Spectral};
use crate::noise::{CovarianceKernel, NoiseStreamKey};
use crate::soliton::AmplitudeWindow;

/// Deterministic forcing profiles `f(t)`; all satisfy `|f(t)| ≤ 1·|amplitude|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForcingProfile {
    Zero,
    Constant { amplitude: f64 },
    /// `a·e^{−t/τ}`.
    ExpDecay { amplitude: f64, tau: f64 },
    /// Smoothed indicator of `[0, t0]`: `a·½(1 − tanh((t − t0)/width))`.
    Bump { amplitude: f64, t0: f64, width: f64 },
}

impl ForcingProfile {
    pub fn validate(&self) -> Result<()> {
        let amp = self.amplitude();
        if !(amp.is_finite() && amp.abs() <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "forcing amplitude must satisfy |a| <= 1, got {amp}"
            )));
        }
        match *self {
            ForcingProfile::ExpDecay { tau, .. } if !(tau.is_finite() && tau > 0.0) => Err(
                Error::InvalidParam(format!("exp_decay rate must be positive, got {tau}")),
            ),
            ForcingProfile::Bump { t0, width, .. }
                if !(t0.is_finite() && t0 >= 0.0 && width.is_finite() && width > 0.0) =>
            {
                Err(Error::InvalidParam(
                    "bump forcing requires t0 >= 0 and width > 0".into(),
                ))
            }
            _ => Ok(()),
        }
    }

    fn amplitude(&self) -> f64 {
        match *self {
            ForcingProfile::Zero => 0.0,
            ForcingProfile::Constant { amplitude }
            | ForcingProfile::ExpDecay { amplitude, .. }
            | ForcingProfile::Bump { amplitude, .. } => amplitude,
        }
    }

    pub fn f(&self, t: f64) -> f64 {
        match *self {
            ForcingProfile::Zero => 0.0,
            ForcingProfile::Constant { amplitude } => amplitude,
            ForcingProfile::ExpDecay { amplitude, tau } => amplitude * (-t / tau).exp(),
            ForcingProfile::Bump { amplitude, t0, width } => {
                amplitude * 0.5 * (1.0 - ((t - t0) / width).tanh())
            }
        }
    }

    /// `∫₀^T |f(t)| dt` (closed forms; the constant profile is integrated over
    /// the finite run horizon).
    pub fn abs_integral(&self, horizon: f64) -> f64 {
        let t = horizon.max(0.0);
        match *self {
            ForcingProfile::Zero => 0.0,
            ForcingProfile::Constant { amplitude } => amplitude.abs() * t,
            ForcingProfile::ExpDecay { amplitude, tau } => {
                amplitude.abs() * tau * (1.0 - (-t / tau).exp())
            }
            ForcingProfile::Bump { amplitude, t0, width } => {
                // ∫ ½(1 − tanh((t−t0)/w)) dt = ½[t − w·ln cosh((t−t0)/w)]
                let prim = |t: f64| 0.5 * (t - width * ((t - t0) / width).cosh().ln());
                amplitude.abs() * (prim(t) - prim(0.0))
            }
        }
    }
}

/// Everything one trajectory needs: grid machinery, noise kernel, forcing and
/// the numerical parameters. `dt` is adjusted so the horizon is an integer
/// number of steps.
#[derive(Clone)]
pub struct SimConfig {
    pub spectral: Arc<Spectral>,
    pub kernel: Arc<CovarianceKernel>,
    pub epsilon: f64,
    pub sigma: f64,
    pub forcing: ForcingProfile,
    pub t_end: f64,
    pub dt: f64,
    pub c_star: f64,
    pub record_every: usize,
    pub window: AmplitudeWindow,
}

impl SimConfig {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        spectral: Arc<Spectral>,
        kernel: Arc<CovarianceKernel>,
        epsilon: f64,
        sigma: f64,
        forcing: ForcingProfile,
        t_end: f64,
        dt: f64,
        c_star: f64,
        record_every: usize,
        window: AmplitudeWindow,
    ) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon >= 0.0) || !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::InvalidParam("epsilon and sigma must be >= 0".into()));
        }
        forcing.validate()?;
        if !(t_end.is_finite() && t_end > 0.0 && dt.is_finite() && dt > 0.0 && dt < t_end) {
            return Err(Error::InvalidParam(format!(
                "need 0 < dt < t_end, got dt={dt}, t_end={t_end}"
            )));
        }
        if !(c_star.is_finite() && c_star > 0.0) {
            return Err(Error::InvalidParam(format!("c_star must be positive, got {c_star}")));
        }
        if record_every == 0 {
            return Err(Error::InvalidParam("record_every must be >= 1".into()));
        }
        if !window.contains(c_star) {
            return Err(Error::InvalidParam(format!(
                "c_star = {c_star} outside amplitude window [{}, {}]",
                window.c_min, window.c_max
            )));
        }
        // The Airy substep is exact; the explicit stage must resolve advection
        // at the dealiased cutoff: dt·(2·max|u|)·k_cut ≲ 2.8 for RK4.
        let grid = spectral.grid();
        let k_cut = 2.0 * std::f64::consts::PI / grid.length() * (grid.n_points() / 3) as f64;
        let u_max = 1.5 * window.c_max * 1.5; // peak 3c/2 with headroom
        if dt * 2.0 * u_max * k_cut > 2.5 {
            return Err(Error::InvalidParam(format!(
                "dt = {dt} violates the nonlinear CFL bound for this grid (limit {:.3e})",
                2.5 / (2.0 * u_max * k_cut)
            )));
        }
        let n_steps = (t_end / dt).round().max(1.0);
        let dt = t_end / n_steps;
        Ok(SimConfig {
            spectral,
            kernel,
            epsilon,
            sigma,
            forcing,
            t_end,
            dt,
            c_star,
            record_every,
            window,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.spectral.grid()
    }

    pub fn n_steps(&self) -> u64 {
        (self.t_end / self.dt).round() as u64
    }

    /// Total forcing budget `E = ε ∫₀^{t_end} |f|`.
    pub fn forcing_budget(&self) -> f64 {
        self.epsilon * self.forcing.abs_integral(self.t_end)
    }
}

/// Per-step diagnostics.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepStats {
    /// Itô pairing `⟨u², dW⟩` evaluated at the pre-noise state; the running sum
    /// is the martingale part of `d‖u‖²` and serves as an ensemble control
    /// variate for the energy drift.
    pub uu_dw: f64,
}

/// One-trajectory stepper holding plans, multiplier tables and scratch.
pub struct StepEngine {
    spectral: Arc<Spectral>,
    airy_half: Vec<Complex64>,
    neg_ik_dealias: Vec<Complex64>,
    noise_amp: Vec<f64>,
    sigma: f64,
    epsilon: f64,
    q0: f64,
    forcing: ForcingProfile,
    dt: f64,
    seed: u64,
    trajectory: u64,
    // scratch
    spec_buf: Vec<Complex64>,
    fft_scratch: Vec<Complex64>,
    stage: Vec<f64>,
    ysq: Vec<f64>,
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    dw: Vec<f64>,
    z: Vec<f64>,
}

impl StepEngine {
    pub fn new(cfg: &SimConfig, seed: u64, trajectory: u64) -> Self {
        let spectral = cfg.spectral.clone();
        let grid = spectral.grid().clone();
        let n = grid.n_points();
        let dt = cfg.dt;
        let airy_half: Vec<Complex64> = spectral
            .wavenumbers()
            .iter()
            .map(|&k| Complex64::from_polar(1.0, k * k * k * dt * 0.5))
            .collect();
        let neg_ik_dealias: Vec<Complex64> = spectral
            .wavenumbers()
            .iter()
            .zip(spectral.dealias_keep())
            .map(|(&k, &keep)| {
                if keep {
                    Complex64::new(0.0, -k)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        let noise_amp: Vec<f64> = cfg
            .kernel
            .q_half_hat()
            .iter()
            .map(|&qh| qh * (dt / grid.spacing()).sqrt())
            .collect();
        let scratch_len = spectral.scratch_len();
        StepEngine {
            spectral,
            airy_half,
            neg_ik_dealias,
            noise_amp,
            sigma: cfg.sigma,
            epsilon: cfg.epsilon,
            q0: cfg.kernel.q0(),
            forcing: cfg.forcing,
            dt,
            seed,
            trajectory,
            spec_buf: vec![Complex64::default(); n],
            fft_scratch: vec![Complex64::default(); scratch_len],
            stage: vec![0.0; n],
            ysq: vec![0.0; n],
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            dw: vec![0.0; n],
            z: vec![0.0; n],
        }
    }

    /// Noise increment drawn in the most recent [`step`](Self::step) (zero for σ = 0).
    pub fn last_dw(&self) -> &[f64] {
        &self.dw
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    fn airy_half_step(&mut self, u: &mut [f64]) {
        self.spectral
            .forward_into(u, &mut self.spec_buf, &mut self.fft_scratch);
        for (b, a) in self.spec_buf.iter_mut().zip(&self.airy_half) {
            *b *= a;
        }
        self.spectral
            .inverse_real_into(&mut self.spec_buf, u, &mut self.fft_scratch);
    }

    /// `out = −∂ₓ(y²)` with the product dealiased by the 2/3 rule.
    fn nonlinear_rhs(&mut self, y: &[f64], which: usize) {
        for (s, &v) in self.ysq.iter_mut().zip(y) {
            *s = v * v;
        }
        self.spectral
            .forward_into(&self.ysq, &mut self.spec_buf, &mut self.fft_scratch);
        for (b, m) in self.spec_buf.iter_mut().zip(&self.neg_ik_dealias) {
            *b *= m;
        }
        let out = match which {
            1 => &mut self.k1,
            2 => &mut self.k2,
            3 => &mut self.k3,
            _ => &mut self.k4,
        };
        self.spectral
            .inverse_real_into(&mut self.spec_buf, out, &mut self.fft_scratch);
    }

    fn nonlinear_step(&mut self, u: &mut [f64]) {
        let dt = self.dt;
        self.nonlinear_rhs(u, 1);
        for j in 0..u.len() {
            self.stage[j] = u[j] + 0.5 * dt * self.k1[j];
        }
        let stage = std::mem::take(&mut self.stage);
        self.nonlinear_rhs(&stage, 2);
        self.stage = stage;
        for j in 0..u.len() {
            self.stage[j] = u[j] + 0.5 * dt * self.k2[j];
        }
        let stage = std::mem::take(&mut self.stage);
        self.nonlinear_rhs(&stage, 3);
        self.stage = stage;
        for j in 0..u.len() {
            self.stage[j] = u[j] + dt * self.k3[j];
        }
        let stage = std::mem::take(&mut self.stage);
        self.nonlinear_rhs(&stage, 4);
        self.stage = stage;
        let w = dt / 6.0;
        for j in 0..u.len() {
            u[j] += w * (self.k1[j] + 2.0 * self.k2[j] + 2.0 * self.k3[j] + self.k4[j]);
        }
    }

    /// Multiplicative forcing + noise factor; returns the Itô pairing ⟨u², dW⟩.
    fn forcing_noise_step(&mut self, u: &mut [f64], t: f64, step_index: u64) -> f64 {
        let f_mid = self.forcing.f(t + 0.5 * self.dt);
        let mut uu_dw = 0.0;
        if self.sigma > 0.0 {
            let key = NoiseStreamKey {
                seed: self.seed,
                trajectory: self.trajectory,
                step: step_index,
            };
            let mut rng = key.rng();
            for z in self.z.iter_mut() {
                *z = StandardNormal.sample(&mut rng);
            }
            self.spectral
                .forward_into(&self.z, &mut self.spec_buf, &mut self.fft_scratch);
            for (b, &a) in self.spec_buf.iter_mut().zip(&self.noise_amp) {
                *b *= a;
            }
            self.spectral
                .inverse_real_into(&mut self.spec_buf, &mut self.dw, &mut self.fft_scratch);

            let dx = self.spectral.grid().spacing();
            let det = self.epsilon * f_mid * self.dt - 0.5 * self.sigma * self.sigma * self.q0 * self.dt;
            for j in 0..u.len() {
                uu_dw += u[j] * u[j] * self.dw[j];
                u[j] *= (det + self.sigma * self.dw[j]).exp();
            }
            uu_dw *= dx;
        } else if self.epsilon > 0.0 {
            let factor = (self.epsilon * f_mid * self.dt).exp();
            for v in u.iter_mut() {
                *v *= factor;
            }
        }
        uu_dw
    }

    /// Advance `u` from `t` to `t + dt`. `step_index` keys the noise stream.
    pub fn step(&mut self, u: &mut [f64], t: f64, step_index: u64) -> Result<StepStats> {
        self.airy_half_step(u);
        self.nonlinear_step(u);
        let uu_dw = self.forcing_noise_step(u, t, step_index);
        self.airy_half_step(u);
        if !u.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { step: step_index, t });
        }
        Ok(StepStats { uu_dw })
    }
}

/// `‖u‖²_{L²}`: by Pythagoras under the orthogonality conditions this splits
/// as `6c^{3/2} + ‖v‖²` along a decomposed trajectory.
pub fn energy(u: &Field) -> f64 {
    l2_norm_sq(u)
}

/// Simulate one trajectory from `u(0) = φ_{c_*}`, decimated to
/// `record_every` steps, with the modulation decomposition, weighted norms
/// and the frame-coupled reduced amplitude path attached per record.
///
/// Builds the `v = 0` coefficient tables itself; ensembles should share one
/// table via [`simulate_trajectory_with_tables`].
pub fn simulate_trajectory(
    cfg: &SimConfig,
    seed: u64,
    trajectory: u64,
) -> Result<crate::harness::TrajectoryRecord> {
    let tables = crate::modulation::CoefficientTables::build(&cfg.kernel, &cfg.window, &cfg.spectral)?;
    simulate_trajectory_with_tables(cfg, seed, trajectory, tables)
}

pub fn simulate_trajectory_with_tables(
    cfg: &SimConfig,
    seed: u64,
    trajectory: u64,
    tables: Arc<crate::modulation::CoefficientTables>,
) -> Result<crate::harness::TrajectoryRecord> {
    use crate::harness::TrajectoryRecord;
    use crate::modulation::{decompose, ReducedIntegrator};
    use crate::soliton::SolitonParams;
    use crate::{weighted_l2_norm, l2_norm};

    let grid = cfg.grid().clone();
    let weight = cfg.window.weight();
    let mut engine = StepEngine::new(cfg, seed, trajectory);
    let mut u = crate::soliton::phi(cfg.c_star, &grid, 0.0)?;
    let mut reduced = ReducedIntegrator::new(cfg.c_star, cfg, tables)?;

    let n_steps = cfg.n_steps();
    let capacity = (n_steps as usize) / cfg.record_every + 2;
    let mut rec = TrajectoryRecord::default();
    rec.times.reserve(capacity);

    // ∫₀ᵗ c dt' accumulated by the trapezoid rule on the record grid; Ω is
    // reported at record resolution.
    let mut c_integral = 0.0;
    let mut last = SolitonParams { c: cfg.c_star, xi: 0.0 };
    let mut t_last_record = 0.0;

    let push_record = |rec: &mut TrajectoryRecord,
                           t: f64,
                           c: f64,
                           xi: f64,
                           omega: f64,
                           c_ap: f64,
                           v: Option<&Field>,
                           u: &Field| {
        rec.times.push(t);
        rec.c.push(c);
        rec.xi.push(xi);
        rec.omega.push(omega);
        rec.c_ap.push(c_ap);
        match v {
            Some(v) => {
                rec.l2_v.push(l2_norm(v));
                rec.l2w_v.push(weighted_l2_norm(v, &weight));
                rec.h1w_v.push(cfg.spectral.weighted_h1_norm(v, &weight));
            }
            None => {
                rec.l2_v.push(0.0);
                rec.l2w_v.push(0.0);
                rec.h1w_v.push(0.0);
            }
        }
        rec.energy.push(energy(u));
    };

    push_record(&mut rec, 0.0, cfg.c_star, 0.0, 0.0, cfg.c_star, None, &u);

    for i in 0..n_steps {
        let t = i as f64 * cfg.dt;
        engine.step(u.values_mut(), t, i)?;

        // frame-coupled reduced step sharing this step's increment; the frame
        // shift advances linearly between records at the last tracked speed
        let xi_est = last.xi + last.c * (t + cfg.dt - t_last_record);
        let d_w = if cfg.sigma > 0.0 { Some(engine.last_dw()) } else { None };
        reduced.step(t, cfg.forcing.f(t + 0.5 * cfg.dt), d_w, xi_est);

        let t_next = (i + 1) as f64 * cfg.dt;
        let is_record = (i + 1) % cfg.record_every as u64 == 0 || i + 1 == n_steps;
        if !is_record {
            continue;
        }
        let guess = SolitonParams {
            c: last.c,
            xi: last.xi + last.c * (t_next - t_last_record),
        };
        let d = decompose(&u, guess, &weight, &cfg.spectral)?;
        c_integral += 0.5 * (last.c + d.c) * (t_next - t_last_record);
        // a dead reduced path (c_ap ≤ 0) is recorded as 0: unambiguously
        // outside every amplitude window, so t_ap bookkeeping still fires
        let c_ap = if reduced.is_alive() { reduced.state.c_ap } else { 0.0 };
        push_record(
            &mut rec,
            t_next,
            d.c,
            d.xi,
            d.xi - c_integral,
            c_ap,
            Some(&d.v),
            &u,
        );
        last = SolitonParams { c: d.c, xi: d.xi };
        t_last_record = t_next;
    }
    Ok(rec)
}
