//! Uniform periodic grid, real scalar fields, quadrature and Fourier calculus.
//!
//! Space is the periodic truncation of the line: `N` equispaced points on
//! `[x₀, x₀ + L)` with `x₀ = −L/2` by default. All profiles of interest decay
//! exponentially, so the domain is chosen large enough (default `L = 80`) that
//! wrap-around contamination sits below test tolerances. Quadrature is the
//! rectangle rule, which is exact for trigonometric polynomials on this grid.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Uniform periodic spatial grid: `x_j = x₀ + j·dx`, `j = 0..N−1`, `dx·N = L`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    length: f64,
    n_points: usize,
    spacing: f64,
    origin: f64,
}

impl Grid {
    /// Grid of `n_points` points on `[−length/2, length/2)`.
    pub fn new(length: f64, n_points: usize) -> Result<Self> {
        Self::with_origin(length, n_points, -0.5 * length)
    }

    pub fn with_origin(length: f64, n_points: usize, origin: f64) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidGrid(format!("length must be positive, got {length}")));
        }
        if !origin.is_finite() {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        if n_points < 8 || !n_points.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "n_points must be a power of two >= 8, got {n_points}"
            )));
        }
        Ok(Grid {
            length,
            n_points,
            spacing: length / n_points as f64,
            origin,
        })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    /// Coordinate of the `j`-th grid point.
    pub fn x(&self, j: usize) -> f64 {
        self.origin + j as f64 * self.spacing
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(move |j| self.x(j))
    }

    /// Map `x` into the fundamental domain `[x₀, x₀ + L)`.
    pub fn wrap(&self, x: f64) -> f64 {
        let rel = (x - self.origin).rem_euclid(self.length);
        self.origin + rel
    }

    /// Signed wavenumber of DFT bin `m`: `k = 2π·m̃/L` with `m̃ ∈ [−N/2, N/2)`.
    pub fn wavenumber(&self, m: usize) -> f64 {
        let n = self.n_points;
        let signed = if m <= n / 2 { m as isize } else { m as isize - n as isize };
        2.0 * std::f64::consts::PI * signed as f64 / self.length
    }
}

/// Real scalar field sampled on a [`Grid`].
#[derive(Debug, Clone)]
pub struct Field {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_points() {
            return Err(Error::InvalidParam(format!(
                "field length {} does not match grid ({})",
                values.len(),
                grid.n_points()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParam("field contains non-finite values".into()));
        }
        Ok(Field { grid, values })
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let n = grid.n_points();
        Field {
            grid,
            values: vec![0.0; n],
        }
    }

    /// Sample `f(x_j)` on the grid.
    pub fn from_fn(grid: Arc<Grid>, f: impl FnMut(f64) -> f64) -> Self {
        let values = grid.points().map(f).collect();
        Field { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self + a·other`, elementwise.
    pub fn add_scaled(&self, a: f64, other: &Field) -> Field {
        assert_same_grid(self, other);
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(u, v)| u + a * v)
            .collect();
        Field {
            grid: self.grid.clone(),
            values,
        }
    }

    pub fn scaled(&self, a: f64) -> Field {
        Field {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| a * v).collect(),
        }
    }

    /// Pointwise product.
    pub fn product(&self, other: &Field) -> Field {
        assert_same_grid(self, other);
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(u, v)| u * v)
            .collect();
        Field {
            grid: self.grid.clone(),
            values,
        }
    }
}

#[track_caller]
pub(crate) fn assert_same_grid(a: &Field, b: &Field) {
    assert!(
        a.grid.as_ref() == b.grid.as_ref(),
        "fields live on different grids"
    );
}

/// L² pairing `⟨a,b⟩ = Σ_j a(x_j) b(x_j) dx`.
///
/// On periodic data the rectangle rule coincides with the trapezoid rule and
/// is spectrally accurate. Panics if the grids differ.
#[track_caller]
pub fn inner_product(a: &Field, b: &Field) -> f64 {
    assert_same_grid(a, b);
    let mut acc = 0.0;
    for (u, v) in a.values.iter().zip(&b.values) {
        acc += u * v;
    }
    acc * a.grid.spacing()
}

pub fn l2_norm_sq(f: &Field) -> f64 {
    inner_product(f, f)
}

pub fn l2_norm(f: &Field) -> f64 {
    l2_norm_sq(f).sqrt()
}

/// Exponential weight rate `w > 0` of the spaces `L²_w`, `H¹_w`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightConfig {
    w: f64,
}

impl WeightConfig {
    /// The combined restriction `w < √c_min/3` is enforced where the amplitude
    /// window is known (see [`crate::soliton::AmplitudeWindow`]); here only
    /// `w > 0` can be checked.
    pub fn new(w: f64) -> Result<Self> {
        if !(w.is_finite() && w > 0.0) {
            return Err(Error::InvalidParam(format!("weight rate must be positive, got {w}")));
        }
        Ok(WeightConfig { w })
    }

    pub fn rate(&self) -> f64 {
        self.w
    }
}

/// `‖v‖_{L²_w} = ‖e^{wx} v‖_{L²}` by quadrature.
pub fn weighted_l2_norm(v: &Field, cfg: &WeightConfig) -> f64 {
    let w = cfg.rate();
    let grid = v.grid();
    let dx = grid.spacing();
    let mut acc = 0.0;
    for (j, val) in v.values().iter().enumerate() {
        let weighted = (w * grid.x(j)).exp() * val;
        acc += weighted * weighted;
    }
    (acc * dx).sqrt()
}

/// Fourier engine bound to one grid: transforms, derivatives, translations.
///
/// Shareable across threads; the hot loops use the `*_into` variants with
/// caller-owned scratch so no allocation happens per step.
pub struct Spectral {
    grid: Arc<Grid>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    k: Vec<f64>,
    dealias_keep: Vec<bool>,
}

impl Spectral {
    pub fn new(grid: Arc<Grid>) -> Self {
        let n = grid.n_points();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let mut k: Vec<f64> = (0..n).map(|m| grid.wavenumber(m)).collect();
        // Nyquist bin is self-conjugate; odd-order multipliers would break the
        // real symmetry there, so it is dropped from the derivative stencil.
        k[n / 2] = 0.0;
        let cutoff = n / 3;
        let dealias_keep = (0..n)
            .map(|m| {
                let signed = if m <= n / 2 { m } else { n - m };
                signed <= cutoff
            })
            .collect();
        Spectral {
            grid,
            fwd,
            inv,
            k,
            dealias_keep,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// Signed wavenumbers per DFT bin (Nyquist zeroed).
    pub fn wavenumbers(&self) -> &[f64] {
        &self.k
    }

    pub fn dealias_keep(&self) -> &[bool] {
        &self.dealias_keep
    }

    pub fn scratch_len(&self) -> usize {
        self.fwd
            .get_inplace_scratch_len()
            .max(self.inv.get_inplace_scratch_len())
    }

    /// Unnormalized DFT of a real sequence.
    pub fn forward(&self, src: &[f64]) -> Vec<Complex64> {
        let mut out: Vec<Complex64> = src.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fwd.process(&mut out);
        out
    }

    /// Inverse DFT (with 1/N), real part.
    pub fn inverse_real(&self, mut hat: Vec<Complex64>) -> Vec<f64> {
        self.inv.process(&mut hat);
        let scale = 1.0 / hat.len() as f64;
        hat.iter().map(|z| z.re * scale).collect()
    }

    pub fn forward_into(&self, src: &[f64], out: &mut [Complex64], scratch: &mut [Complex64]) {
        for (o, &v) in out.iter_mut().zip(src) {
            *o = Complex64::new(v, 0.0);
        }
        self.fwd.process_with_scratch(out, scratch);
    }

    pub fn inverse_real_into(
        &self,
        hat: &mut [Complex64],
        out: &mut [f64],
        scratch: &mut [Complex64],
    ) {
        self.inv.process_with_scratch(hat, scratch);
        let scale = 1.0 / hat.len() as f64;
        for (o, z) in out.iter_mut().zip(hat.iter()) {
            *o = z.re * scale;
        }
    }

    /// Fourier-multiplier derivative `(ik)^order`, `order ∈ {1,2,3}`.
    pub fn derivative(&self, v: &Field, order: u32) -> Field {
        assert!((1..=3).contains(&order), "derivative order must be 1, 2 or 3");
        let mut hat = self.forward(v.values());
        for (z, &k) in hat.iter_mut().zip(&self.k) {
            let ik = Complex64::new(0.0, k);
            *z *= ik.powu(order);
        }
        Field {
            grid: self.grid.clone(),
            values: self.inverse_real(hat),
        }
    }

    /// Periodic translation `(T_ξ v)(x) = v(x + ξ)` via the phase `e^{ikξ}`.
    pub fn translate(&self, v: &Field, shift: f64) -> Field {
        let mut hat = self.forward(v.values());
        for (z, &k) in hat.iter_mut().zip(&self.k) {
            *z *= Complex64::from_polar(1.0, k * shift);
        }
        Field {
            grid: self.grid.clone(),
            values: self.inverse_real(hat),
        }
    }

    /// `‖v‖_{H¹_w} = ‖e^{wx}v‖_{H¹}` with `(e^{wx}v)' = e^{wx}(v' + wv)` and
    /// `v'` computed spectrally.
    pub fn weighted_h1_norm(&self, v: &Field, cfg: &WeightConfig) -> f64 {
        let w = cfg.rate();
        let dv = self.derivative(v, 1);
        let dx = self.grid.spacing();
        let mut acc = 0.0;
        for (j, (val, dval)) in v.values().iter().zip(dv.values()).enumerate() {
            let weight = (w * self.grid.x(j)).exp();
            let a = weight * val;
            let b = weight * (dval + w * val);
            acc += a * a + b * b;
        }
        (acc * dx).sqrt()
    }
}
