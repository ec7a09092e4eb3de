//! Translation-invariant Q-Wiener noise on the periodic grid.
//!
//! The covariance operator is the convolution `Qf = ∫ q(x−y) f(y) dy` with an
//! even kernel whose Fourier transform is non-negative, so `Q^{1/2}` is the
//! convolution with the inverse transform of `√q̂`. On the grid both act as
//! Fourier multipliers on DFT bins. An increment over `dt` is
//!
//! `dW = IDFT[ A ⊙ DFT(z) ]`,  `A_m = √(dt · q̂_m / dx)`,  `z_j ~ N(0,1)` iid,
//!
//! which gives `E[dW(x_j) dW(x_l)] = q(x_j − x_l)·dt` exactly on the grid, and
//! hence `Var⟨g, dW⟩ = dt·⟨Qg, g⟩` for every test field `g`.
//!
//! Kernels are normalized so that `q(0) = 1` (a config option keeps the raw
//! scale available): the Itô energy drift of the solver is `σ²q(0)‖u‖²`, and
//! the reference identities assume `q(0) = 1`.
//!
//! Increments are keyed by `(seed, trajectory, step)`; each triple seeds its
//! own ChaCha8 stream, so ensembles are reproducible under any parallel
//! schedule and individual increments can be regenerated in isolation.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Spectral};

/// Shipped covariance kernel families; all have non-negative spectra by
/// construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    /// `q(x) ∝ exp(−x²/2ℓ²)`, `q̂(k) ∝ exp(−k²ℓ²/2)`.
    Gaussian,
    /// Smoothed exponential `q(x) ∝ (1 + |x|/ℓ) e^{−|x|/ℓ}`, `q̂(k) ∝ (1 + k²ℓ²)^{−2}`.
    ExponentialSmoothed,
    /// Flat spectrum cut off at `|k| = 1/ℓ`.
    BandLimited,
}

impl KernelFamily {
    fn continuum_spectrum(&self, k: f64, ell: f64) -> f64 {
        match self {
            KernelFamily::Gaussian => {
                ell * (2.0 * std::f64::consts::PI).sqrt() * (-0.5 * k * k * ell * ell).exp()
            }
            KernelFamily::ExponentialSmoothed => {
                let a = 1.0 / ell;
                4.0 * a * a * a / ((a * a + k * k) * (a * a + k * k))
            }
            KernelFamily::BandLimited => {
                if k.abs() <= 1.0 / ell {
                    2.0 * ell
                } else {
                    0.0
                }
            }
        }
    }
}

/// Spatial covariance of the noise: kernel values, its per-mode spectrum and
/// the entrywise square root.
#[derive(Debug, Clone)]
pub struct CovarianceKernel {
    q: Field,
    q_hat: Vec<f64>,
    q_half_hat: Vec<f64>,
    q_half: Field,
    q0: f64,
}

impl CovarianceKernel {
    /// Kernel values on the grid, centered (`q(0)` at `x = 0`).
    pub fn q(&self) -> &Field {
        &self.q
    }

    /// Per-mode spectrum `q̂_m ≥ 0` in DFT bin order (continuum convention:
    /// `q̂_m = dx · DFT(q)_m`).
    pub fn q_hat(&self) -> &[f64] {
        &self.q_hat
    }

    pub fn q_half_hat(&self) -> &[f64] {
        &self.q_half_hat
    }

    /// Square-root kernel `q_{1/2}`, centered.
    pub fn q_half(&self) -> &Field {
        &self.q_half
    }

    /// `q(0)`; equals 1 for normalized kernels.
    pub fn q0(&self) -> f64 {
        self.q0
    }
}

/// Build a covariance kernel with `q(0) = 1` normalization.
pub fn build_kernel(
    family: KernelFamily,
    correlation_length: f64,
    spectral: &Spectral,
) -> Result<CovarianceKernel> {
    build_kernel_with_options(family, correlation_length, spectral, true)
}

/// As [`build_kernel`], optionally skipping the `q(0) = 1` normalization.
pub fn build_kernel_with_options(
    family: KernelFamily,
    correlation_length: f64,
    spectral: &Spectral,
    normalize: bool,
) -> Result<CovarianceKernel> {
    if !(correlation_length.is_finite() && correlation_length > 0.0) {
        return Err(Error::InvalidParam(format!(
            "correlation length must be positive, got {correlation_length}"
        )));
    }
    let grid = spectral.grid().clone();
    let n = grid.n_points();
    let mut q_hat: Vec<f64> = (0..n)
        .map(|m| family.continuum_spectrum(grid.wavenumber(m), correlation_length))
        .collect();

    let min = q_hat.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = q_hat.iter().cloned().fold(0.0f64, f64::max);
    if min < -1e-12 * max.max(1.0) {
        return Err(Error::NegativeSpectrum { min });
    }
    for v in q_hat.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }

    // q(0) on the grid is the mean of the spectrum: q(0) = (1/L) Σ_m q̂_m.
    let q0_raw: f64 = q_hat.iter().sum::<f64>() / grid.length();
    if q0_raw <= 0.0 {
        return Err(Error::InvalidParam(
            "covariance kernel vanishes on this grid".into(),
        ));
    }
    if normalize {
        for v in q_hat.iter_mut() {
            *v /= q0_raw;
        }
    }
    let q0 = if normalize { 1.0 } else { q0_raw };

    let q_half_hat: Vec<f64> = q_hat.iter().map(|v| v.sqrt()).collect();
    let q = kernel_field(&q_hat, spectral);
    let q_half = kernel_field(&q_half_hat, spectral);

    Ok(CovarianceKernel {
        q,
        q_hat,
        q_half_hat,
        q_half,
        q0,
    })
}

/// Physical kernel values, centered on the grid origin, from a spectrum given
/// in DFT bin order: offsets `q(i·dx)` are `IDFT(q̂)/dx`, then rotated so that
/// `q(0)` sits at `x = 0`.
fn kernel_field(q_hat: &[f64], spectral: &Spectral) -> Field {
    let grid = spectral.grid().clone();
    let n = grid.n_points();
    let hat: Vec<Complex64> = q_hat.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let offsets = spectral.inverse_real(hat);
    let dx = grid.spacing();
    let mut values = vec![0.0; n];
    for (j, value) in values.iter_mut().enumerate() {
        // x_j = (j − N/2)·dx  ⇒  offset index (j − N/2) mod N
        let off = (j + n - n / 2) % n;
        *value = offsets[off] / dx;
    }
    Field::new(grid, values).expect("kernel values are finite")
}

/// Identifies one noise increment: `(seed, trajectory, step)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NoiseStreamKey {
    pub seed: u64,
    pub trajectory: u64,
    pub step: u64,
}

impl NoiseStreamKey {
    /// Dedicated ChaCha8 stream for this key; distinct keys give independent
    /// streams and identical keys give bit-identical draws.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut seed_bytes = [0u8; 32];
        seed_bytes[0..8].copy_from_slice(&self.seed.to_le_bytes());
        seed_bytes[8..16].copy_from_slice(&self.trajectory.to_le_bytes());
        seed_bytes[16..24].copy_from_slice(&self.step.to_le_bytes());
        seed_bytes[24..32].copy_from_slice(&0x736b_6476_2d71_7731u64.to_le_bytes());
        ChaCha8Rng::from_seed(seed_bytes)
    }
}

/// One spatial increment of the Q-Wiener process over a step of length `dt`.
#[derive(Debug, Clone)]
pub struct NoiseIncrement {
    pub d_w: Field,
    pub dt: f64,
    pub key: NoiseStreamKey,
}

/// Draw `dW` with `E[dW(x)dW(y)] = q(x−y)·dt`.
pub fn sample_increment(
    kernel: &CovarianceKernel,
    dt: f64,
    key: NoiseStreamKey,
    spectral: &Spectral,
) -> Result<NoiseIncrement> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidParam(format!("dt must be positive, got {dt}")));
    }
    let grid = spectral.grid().clone();
    let n = grid.n_points();
    let mut rng = key.rng();
    let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut hat = spectral.forward(&z);
    let amp_scale = (dt / grid.spacing()).sqrt();
    for (h, &qh) in hat.iter_mut().zip(&kernel.q_half_hat) {
        *h *= amp_scale * qh;
    }
    let values = spectral.inverse_real(hat);
    Ok(NoiseIncrement {
        d_w: Field::new(grid, values)?,
        dt,
        key,
    })
}

fn apply_multiplier(kernel_hat: &[f64], g: &Field, spectral: &Spectral, sqrt: bool) -> Field {
    let mut hat = spectral.forward(g.values());
    for (h, &qh) in hat.iter_mut().zip(kernel_hat) {
        *h *= if sqrt { qh.sqrt() } else { qh };
    }
    Field::new(spectral.grid().clone(), spectral.inverse_real(hat)).expect("finite")
}

/// `Qg` as the circular convolution with `q`, realized by the multiplier `q̂`.
pub fn apply_q(kernel: &CovarianceKernel, g: &Field, spectral: &Spectral) -> Field {
    apply_multiplier(&kernel.q_hat, g, spectral, false)
}

/// `Q^{1/2}g`, multiplier `√q̂`.
pub fn apply_q_half(kernel: &CovarianceKernel, g: &Field, spectral: &Spectral) -> Field {
    apply_multiplier(&kernel.q_hat, g, spectral, true)
}

/// Quadratic form `⟨Qg, g⟩ = ‖Q^{1/2}g‖²`.
pub fn q_form(kernel: &CovarianceKernel, g: &Field, spectral: &Spectral) -> f64 {
    let qg = apply_q_half(kernel, g, spectral);
    crate::grid::l2_norm_sq(&qg)
}
