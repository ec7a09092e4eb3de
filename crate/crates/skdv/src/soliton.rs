//! The KdV soliton family and its linearization data.
//!
//! `φ_c(x) = (3c/2) sech²(√c·x/2)` solves the traveling-wave equation
//! `φ''' + 2φφ' − cφ' = 0` and scales as `φ_c(x) = c·φ_1(√c·x)`. The adjoint
//! kernel direction `ζ_c(x) = ∫_{−∞}^x ∂_cφ_c` has the closed form
//!
//! `ζ_c(x) = (3/(2√c))(1 + tanh s) + (3x/4) sech² s`,  `s = √c·x/2`,
//!
//! with left limit 0 and right limit `3/√c`. All c- and x-derivatives used by
//! the modulation system are evaluated analytically in terms of
//! `P = sech² s`, `T = tanh s`.
//!
//! Useful exact pairings (telescoping / differentiating `‖φ_c‖² = 6c^{3/2}`):
//! `⟨φ_c, ∂_cφ_c⟩ = (9/2)√c`, `⟨∂_cφ_c, ζ_c⟩ = (9/2)/c`,
//! `⟨∂ₓφ_c, ζ_c⟩ = −(9/2)√c`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{inner_product, Field, Grid, WeightConfig};

/// Modulation parameters of a single soliton.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolitonParams {
    pub c: f64,
    pub xi: f64,
}

impl SolitonParams {
    pub fn new(c: f64, xi: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::InvalidParam(format!("soliton amplitude must be positive, got {c}")));
        }
        if !xi.is_finite() {
            return Err(Error::InvalidParam("soliton position must be finite".into()));
        }
        Ok(SolitonParams { c, xi })
    }
}

/// Admissible amplitude range `[c_min, c_max]` together with a weight rate
/// satisfying `0 < w < √c_min / 3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmplitudeWindow {
    pub c_min: f64,
    pub c_max: f64,
    pub w: f64,
}

impl AmplitudeWindow {
    pub fn new(c_min: f64, c_max: f64, w: f64) -> Result<Self> {
        if !(c_min.is_finite() && c_max.is_finite() && c_min > 0.0 && c_min < c_max) {
            return Err(Error::InvalidParam(format!(
                "amplitude window requires 0 < c_min < c_max, got [{c_min}, {c_max}]"
            )));
        }
        let bound = c_min.sqrt() / 3.0;
        if !(w > 0.0 && w < bound) {
            return Err(Error::InvalidParam(format!(
                "weight rate must satisfy 0 < w < sqrt(c_min)/3 = {bound:.6}, got {w}"
            )));
        }
        Ok(AmplitudeWindow { c_min, c_max, w })
    }

    pub fn weight(&self) -> WeightConfig {
        WeightConfig::new(self.w).expect("validated at construction")
    }

    pub fn contains(&self, c: f64) -> bool {
        (self.c_min..=self.c_max).contains(&c)
    }
}

#[inline]
fn sech2_tanh(s: f64) -> (f64, f64) {
    let c = s.cosh();
    (1.0 / (c * c), s.tanh())
}

/// `φ_c(x)`.
#[inline]
pub fn phi_value(c: f64, x: f64) -> f64 {
    let s = 0.5 * c.sqrt() * x;
    let (p, _) = sech2_tanh(s);
    1.5 * c * p
}

/// `∂ₓφ_c(x)`.
#[inline]
pub fn dphi_dx_value(c: f64, x: f64) -> f64 {
    let s = 0.5 * c.sqrt() * x;
    let (p, t) = sech2_tanh(s);
    -1.5 * c.powf(1.5) * p * t
}

/// `∂ₓ²φ_c(x)`.
#[inline]
pub fn d2phi_dx2_value(c: f64, x: f64) -> f64 {
    let s = 0.5 * c.sqrt() * x;
    let (p, t) = sech2_tanh(s);
    0.75 * c * c * (2.0 * p * t * t - p * p)
}

/// `∂ₓ³φ_c(x)`.
#[inline]
pub fn d3phi_dx3_value(c: f64, x: f64) -> f64 {
    let s = 0.5 * c.sqrt() * x;
    let (p, t) = sech2_tanh(s);
    1.5 * c.powf(2.5) * (2.0 * p * p * t - p * t * t * t)
}

/// `∂_cφ_c(x)`.
#[inline]
pub fn dphi_dc_value(c: f64, x: f64) -> f64 {
    let s = 0.5 * c.sqrt() * x;
    let (p, t) = sech2_tanh(s);
    1.5 * p * (1.0 - s * t)
}

/// `∂_c²φ_c(x)`.
#[inline]
pub fn d2phi_dc2_value(c: f64, x: f64) -> f64 {
    let s = 0.5 * c.sqrt() * x;
    let (p, t) = sech2_tanh(s);
    0.75 / c * (-3.0 * s * p * t + 2.0 * s * s * p * t * t - s * s * p * p)
}

/// `∂_c³φ_c(x)`.
#[inline]
pub fn d3phi_dc3_value(c: f64, x: f64) -> f64 {
    let s = 0.5 * c.sqrt() * x;
    let (p, t) = sech2_tanh(s);
    let s2 = s * s;
    let s3 = s2 * s;
    0.375 / (c * c)
        * (3.0 * s * p * t + 6.0 * s2 * p * t * t - 3.0 * s2 * p * p - 4.0 * s3 * p * t * t * t
            + 8.0 * s3 * p * p * t)
}

/// `∂ₓ∂_cφ_c(x)`.
#[inline]
pub fn dphi_dxdc_value(c: f64, x: f64) -> f64 {
    let s = 0.5 * c.sqrt() * x;
    let (p, t) = sech2_tanh(s);
    0.75 * c.sqrt() * (-3.0 * p * t + 2.0 * s * p * t * t - s * p * p)
}

/// `ζ_c(x) = ∫_{−∞}^x ∂_cφ_c`.
#[inline]
pub fn zeta_value(c: f64, x: f64) -> f64 {
    let s = 0.5 * c.sqrt() * x;
    let (p, t) = sech2_tanh(s);
    1.5 / c.sqrt() * (1.0 + t) + 0.75 * x * p
}

/// `∂_cζ_c(x)`.
#[inline]
pub fn dzeta_dc_value(c: f64, x: f64) -> f64 {
    let s = 0.5 * c.sqrt() * x;
    let (p, t) = sech2_tanh(s);
    0.75 / c.powf(1.5) * (-(1.0 + t) + s * p - 2.0 * s * s * p * t)
}

/// `∂_c²ζ_c(x)`.
#[inline]
pub fn d2zeta_dc2_value(c: f64, x: f64) -> f64 {
    let s = 0.5 * c.sqrt() * x;
    let (p, t) = sech2_tanh(s);
    let s3 = s * s * s;
    0.375 / c.powf(2.5) * (3.0 * (1.0 + t) - 3.0 * s * p + 4.0 * s3 * p * t * t - 2.0 * s3 * p * p)
}

fn check_c(c: f64) -> Result<()> {
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::InvalidParam(format!("soliton amplitude must be positive, got {c}")));
    }
    Ok(())
}

fn sample(grid: &Arc<Grid>, xi: f64, f: impl Fn(f64) -> f64) -> Field {
    Field::from_fn(grid.clone(), |x| f(x - xi))
}

/// Soliton profile `φ_c(x − ξ)` sampled on the grid (no periodic wrap; the
/// profile decays below 1e−12 at the boundary for the supported windows).
pub fn phi(c: f64, grid: &Arc<Grid>, xi: f64) -> Result<Field> {
    check_c(c)?;
    Ok(sample(grid, xi, |x| phi_value(c, x)))
}

pub fn dphi_dx(c: f64, grid: &Arc<Grid>, xi: f64) -> Result<Field> {
    check_c(c)?;
    Ok(sample(grid, xi, |x| dphi_dx_value(c, x)))
}

pub fn dphi_dc(c: f64, grid: &Arc<Grid>, xi: f64) -> Result<Field> {
    check_c(c)?;
    Ok(sample(grid, xi, |x| dphi_dc_value(c, x)))
}

/// Adjoint-kernel primitive `ζ_c(x − ξ)`. Not in L²: it tends to `3/√c` on the
/// right, so pair it only against decaying fields (line-truncation quadrature).
pub fn zeta(c: f64, grid: &Arc<Grid>, xi: f64) -> Result<Field> {
    check_c(c)?;
    Ok(sample(grid, xi, |x| zeta_value(c, x)))
}

pub fn dzeta_dc(c: f64, grid: &Arc<Grid>, xi: f64) -> Result<Field> {
    check_c(c)?;
    Ok(sample(grid, xi, |x| dzeta_dc_value(c, x)))
}

/// Spectral projection onto the generalized kernel of the linearization at a
/// centered soliton:
///
/// `P_c f = ⟨f, (2/9)(c^{−2}φ_c − c^{−1/2}ζ_c)⟩ ∂ₓφ_c + ⟨f, (2/9)c^{−1/2}φ_c⟩ ∂_cφ_c`.
///
/// The adjoint pair is biorthogonal to `{∂ₓφ_c, ∂_cφ_c}`, so `P_c² = P_c`,
/// `P_c ∂ₓφ_c = ∂ₓφ_c`, `P_c ∂_cφ_c = ∂_cφ_c`, and the complement
/// `Q_c = I − P_c` lands in the subspace `⟨·,φ_c⟩ = ⟨·,ζ_c⟩ = 0`.
pub fn spectral_projection(g: &Field, c: f64) -> Field {
    let grid = g.grid();
    let phi_f = sample(grid, 0.0, |x| phi_value(c, x));
    let zeta_f = sample(grid, 0.0, |x| zeta_value(c, x));
    let dphi_dx_f = sample(grid, 0.0, |x| dphi_dx_value(c, x));
    let dphi_dc_f = sample(grid, 0.0, |x| dphi_dc_value(c, x));

    let two_ninth = 2.0 / 9.0;
    let alpha = inner_product(g, &phi_f) * two_ninth / (c * c)
        - inner_product(g, &zeta_f) * two_ninth / c.sqrt();
    let beta = inner_product(g, &phi_f) * two_ninth / c.sqrt();

    let mut out = dphi_dx_f.scaled(alpha);
    out = out.add_scaled(beta, &dphi_dc_f);
    out
}

/// Complementary projection `Q_c g = g − P_c g`.
pub fn spectral_complement(g: &Field, c: f64) -> Field {
    g.add_scaled(-1.0, &spectral_projection(g, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{l2_norm, l2_norm_sq, Spectral};
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn grid() -> Arc<Grid> {
        Arc::new(Grid::new(80.0, 1024).unwrap())
    }

    #[test]
    fn peak_value_is_three_halves_c() {
        assert_abs_diff_eq!(phi_value(1.0, 0.0), 1.5);
        assert_abs_diff_eq!(phi_value(2.0, 0.0), 3.0);
        let g = grid();
        let f = phi(1.0, &g, 0.0).unwrap();
        assert_abs_diff_eq!(f.values()[512], 1.5, epsilon = 1e-14);
    }

    #[test]
    fn rejects_nonpositive_amplitude() {
        let g = grid();
        assert!(phi(0.0, &g, 0.0).is_err());
        assert!(phi(-1.0, &g, 0.0).is_err());
        assert!(zeta(-0.5, &g, 0.0).is_err());
        assert!(SolitonParams::new(-1.0, 0.0).is_err());
    }

    #[test]
    fn amplitude_window_enforces_weight_bound() {
        assert!(AmplitudeWindow::new(0.81, 2.0, 0.31).is_err()); // sqrt(0.81)/3 = 0.3
        assert!(AmplitudeWindow::new(0.81, 2.0, 0.30).is_err());
        assert!(AmplitudeWindow::new(0.81, 2.0, 0.29).is_ok());
        assert!(AmplitudeWindow::new(2.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn scaling_relation_phi_c_of_x() {
        // φ_c(x) = c·φ_1(√c·x)
        for &c in &[0.5, 1.3, 2.0] {
            for &x in &[-7.0, -1.1, 0.0, 0.4, 3.0] {
                assert_abs_diff_eq!(
                    phi_value(c, x),
                    c * phi_value(1.0, c.sqrt() * x),
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn l2_norm_squared_matches_closed_form() {
        // ‖φ_c‖² = 6 c^{3/2}
        let g = grid();
        for &c in &[0.5, 1.0, 2.0] {
            let f = phi(c, &g, 0.0).unwrap();
            assert_abs_diff_eq!(l2_norm_sq(&f), 6.0 * c.powf(1.5), epsilon = 1e-9);
        }
    }

    #[test]
    fn derivative_formulas_match_finite_differences() {
        let xs = [-11.0, -3.0, -0.7, 0.0, 0.9, 2.4, 8.0];
        let c = 1.3;
        let h = 1e-5;
        for &x in &xs {
            let fd_c = (phi_value(c + h, x) - phi_value(c - h, x)) / (2.0 * h);
            assert_abs_diff_eq!(dphi_dc_value(c, x), fd_c, epsilon = 1e-7);

            let fd_cc = (dphi_dc_value(c + h, x) - dphi_dc_value(c - h, x)) / (2.0 * h);
            assert_abs_diff_eq!(d2phi_dc2_value(c, x), fd_cc, epsilon = 1e-6);

            let fd_ccc = (d2phi_dc2_value(c + h, x) - d2phi_dc2_value(c - h, x)) / (2.0 * h);
            assert_abs_diff_eq!(d3phi_dc3_value(c, x), fd_ccc, epsilon = 1e-6);

            let hx = 1e-5;
            let fd_x = (phi_value(c, x + hx) - phi_value(c, x - hx)) / (2.0 * hx);
            assert_abs_diff_eq!(dphi_dx_value(c, x), fd_x, epsilon = 1e-7);

            let fd_xx = (dphi_dx_value(c, x + hx) - dphi_dx_value(c, x - hx)) / (2.0 * hx);
            assert_abs_diff_eq!(d2phi_dx2_value(c, x), fd_xx, epsilon = 1e-6);

            let fd_xxx = (d2phi_dx2_value(c, x + hx) - d2phi_dx2_value(c, x - hx)) / (2.0 * hx);
            assert_abs_diff_eq!(d3phi_dx3_value(c, x), fd_xxx, epsilon = 1e-5);

            let fd_xc = (dphi_dc_value(c, x + hx) - dphi_dc_value(c, x - hx)) / (2.0 * hx);
            assert_abs_diff_eq!(dphi_dxdc_value(c, x), fd_xc, epsilon = 1e-7);

            let fd_zc = (zeta_value(c + h, x) - zeta_value(c - h, x)) / (2.0 * h);
            assert_abs_diff_eq!(dzeta_dc_value(c, x), fd_zc, epsilon = 1e-7);

            let fd_zcc = (dzeta_dc_value(c + h, x) - dzeta_dc_value(c - h, x)) / (2.0 * h);
            assert_abs_diff_eq!(d2zeta_dc2_value(c, x), fd_zcc, epsilon = 1e-6);
        }
    }

    #[test]
    fn dphi_dx_vanishes_at_peak() {
        assert_eq!(dphi_dx_value(1.7, 0.0), 0.0);
        let g = grid();
        let f = dphi_dx(1.0, &g, 3.0).unwrap();
        // x = 3 is not a grid point neighbor-free; check the analytic value instead
        assert_abs_diff_eq!(dphi_dx_value(1.0, 0.0), 0.0);
        drop(f);
    }

    #[test]
    fn pairing_dphi_dc_with_phi() {
        // ⟨∂_cφ_c, φ_c⟩ = d/dc ‖φ_c‖²/2 = (9/2)√c
        let g = grid();
        for &c in &[0.5, 1.0, 2.0] {
            let a = dphi_dc(c, &g, 0.0).unwrap();
            let b = phi(c, &g, 0.0).unwrap();
            assert_abs_diff_eq!(inner_product(&a, &b), 4.5 * c.sqrt(), epsilon = 1e-8);
        }
    }

    #[test]
    fn zeta_limits_and_total_variation() {
        let g = grid();
        for &c in &[0.5, 1.0, 2.0] {
            let z = zeta(c, &g, 0.0).unwrap();
            let left = z.values()[0];
            let right = z.values()[g.n_points() - 1];
            assert!(left.abs() < 1e-10, "left tail {left}");
            assert_abs_diff_eq!(right, 3.0 / c.sqrt(), epsilon = 1e-8);
            assert_abs_diff_eq!(right - left, 3.0 / c.sqrt(), epsilon = 1e-8);
        }
    }

    #[test]
    fn zeta_pairings_match_telescoping_identities() {
        let g = grid();
        for &c in &[0.7, 1.0, 1.8] {
            let z = zeta(c, &g, 0.0).unwrap();
            let dc = dphi_dc(c, &g, 0.0).unwrap();
            let dx = dphi_dx(c, &g, 0.0).unwrap();
            // ⟨∂_cφ_c, ζ_c⟩ = ½ (3/√c)² = (9/2)/c
            assert_abs_diff_eq!(inner_product(&dc, &z), 4.5 / c, epsilon = 1e-8);
            // ⟨∂ₓφ_c, ζ_c⟩ = −⟨φ_c, ∂_cφ_c⟩ = −(9/2)√c
            assert_abs_diff_eq!(inner_product(&dx, &z), -4.5 * c.sqrt(), epsilon = 1e-8);
        }
    }

    #[test]
    fn traveling_wave_identity_residual_is_tiny() {
        // ∂ₓ³φ_c + 2 φ_c ∂ₓφ_c − c ∂ₓφ_c = 0 with spectral derivatives
        let g = grid();
        let sp = Spectral::new(g.clone());
        for &c in &[0.5, 1.0, 2.0] {
            let f = phi(c, &g, 0.0).unwrap();
            let d3 = sp.derivative(&f, 3);
            let d1 = sp.derivative(&f, 1);
            let residual = d3.add_scaled(2.0, &f.product(&d1)).add_scaled(-c, &d1);
            assert!(l2_norm(&residual) < 1e-8, "residual {} at c={c}", l2_norm(&residual));
        }
    }

    fn random_localized(g: &Arc<Grid>, rng: &mut ChaCha8Rng) -> Field {
        // smooth random envelope-localized field
        let coeffs: Vec<(f64, f64, f64)> = (1..=6)
            .map(|m| {
                (
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    m as f64 * 2.0 * std::f64::consts::PI / 80.0,
                )
            })
            .collect();
        Field::from_fn(g.clone(), move |x| {
            let env = (-(x * x) / 60.0).exp();
            coeffs
                .iter()
                .map(|(a, b, k)| a * (k * x).sin() + b * (k * x).cos())
                .sum::<f64>()
                * env
        })
    }

    #[test]
    fn projection_is_idempotent_on_random_fields() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &c in &[0.8, 1.0, 1.6] {
            let f = random_localized(&g, &mut rng);
            let p = spectral_projection(&f, c);
            let pp = spectral_projection(&p, c);
            let diff = pp.add_scaled(-1.0, &p);
            assert!(l2_norm(&diff) <= 1e-10 * l2_norm(&f).max(1.0));
        }
    }

    #[test]
    fn projection_fixes_generalized_kernel() {
        let g = grid();
        for &c in &[0.8, 1.0, 1.6] {
            let dx = dphi_dx(c, &g, 0.0).unwrap();
            let dc = dphi_dc(c, &g, 0.0).unwrap();
            let pdx = spectral_projection(&dx, c);
            let pdc = spectral_projection(&dc, c);
            assert!(l2_norm(&pdx.add_scaled(-1.0, &dx)) < 1e-8);
            assert!(l2_norm(&pdc.add_scaled(-1.0, &dc)) < 1e-8);
        }
    }

    #[test]
    fn normalization_pairing_equals_one() {
        // ⟨∂_cφ_c, (2/9) c^{−1/2} φ_c⟩ = 1
        let g = grid();
        for &c in &[0.5, 1.0, 2.0] {
            let dc = dphi_dc(c, &g, 0.0).unwrap();
            let f = phi(c, &g, 0.0).unwrap();
            let val = inner_product(&dc, &f) * 2.0 / 9.0 / c.sqrt();
            assert_abs_diff_eq!(val, 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn complement_is_orthogonal_to_adjoint_kernel() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for &c in &[0.9, 1.0, 1.4] {
            let f = random_localized(&g, &mut rng);
            let q = spectral_complement(&f, c);
            let phi_f = phi(c, &g, 0.0).unwrap();
            let zeta_f = zeta(c, &g, 0.0).unwrap();
            assert!(inner_product(&q, &phi_f).abs() < 1e-9 * l2_norm(&f).max(1.0));
            assert!(inner_product(&q, &zeta_f).abs() < 1e-9 * l2_norm(&f).max(1.0));
        }
    }
}
