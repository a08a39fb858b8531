//! Closed-form moment formulas, length scales and regime classification.
//!
//! Everything here is written in physical units. The asymptotic formulas
//! for the scintillation regime are usually stated in rescaled variables
//! (positions `X = εx`, distance `L = εℓ`, covariance `γ₀^ε = εγ₀`); the
//! scaling factors cancel identically once positions, distance and `γ₀`
//! are all expressed physically, so the formulas below read exactly like
//! their rescaled counterparts with `L → ℓ`.
//!
//! Notation used in the docs:
//! * `ℓ_sca = 8/(γ₀(0)k₀²)` scattering mean free path,
//! * `ρ = 2/sqrt(γ̄₂k₀²ℓ)` speckle radius,
//! * `𝒜 = sqrt(γ̄₂ℓ³/6)` scattering-enhanced beam radius,
//! * `V(q) = ∫ U(X + q) Ū(X) dX` mask autocorrelation.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{fft_in_place, forward_transform, inverse_transform, ComplexField, Point, RealField, TransverseGrid};
use crate::medium::{MediumKind, MediumModel};
use crate::propagator::free_space_propagate;
use crate::quad;

const TOL: f64 = 1e-8;

pub fn scattering_mean_free_path(gamma0_at_zero: f64, k0: f64) -> f64 {
    8.0 / (gamma0_at_zero * k0 * k0)
}

pub fn speckle_radius(gamma_bar2: f64, k0: f64, ell: f64) -> f64 {
    2.0 / (gamma_bar2 * k0 * k0 * ell).sqrt()
}

pub fn beam_spread(gamma_bar2: f64, ell: f64) -> f64 {
    (gamma_bar2 * ell.powi(3) / 6.0).sqrt()
}

/// `K(z) = exp(-k₀²γ₀(0)z/2)`.
pub fn k_factor(gamma0_at_zero: f64, k0: f64, z: f64) -> f64 {
    (-0.5 * k0 * k0 * gamma0_at_zero * z).exp()
}

/// Damping `exp(-γ₀(0)k₀²z/8)` of the mean field.
pub fn mean_field_factor(gamma0_at_zero: f64, k0: f64, z: f64) -> f64 {
    (-gamma0_at_zero * k0 * k0 * z / 8.0).exp()
}

/// `exp(-γ₂(q)k₀²z/4)`: two-point coherence of the random fundamental
/// solution (point source) at separation `q`.
pub fn point_source_coherence(medium: &MediumModel, k0: f64, z: f64, q: Point) -> Result<f64> {
    Ok((-medium.gamma2_at(q)? * k0 * k0 * z / 4.0).exp())
}

/// `exp(-(γ₀(0) - γ₀(q))k₀²z/4)`: two-point coherence of an initially
/// plane wave at separation `q`.
pub fn plane_wave_coherence(medium: &MediumModel, k0: f64, z: f64, q: Point) -> f64 {
    let g = medium.gamma0_or_zero(q[0].hypot(q[1]));
    (-(medium.gamma0_at_zero() - g) * k0 * k0 * z / 4.0).exp()
}

/// Per-axis variance `γ̄₂ℓ³/12` of the random beam centre in the
/// spot-dancing regime.
pub fn spot_centroid_variance(gamma_bar2: f64, ell: f64) -> f64 {
    gamma_bar2 * ell.powi(3) / 12.0
}

/// `𝒵^{ρo} = (6/(πγ̄₂ℓ³))^d (1 + ρo²/ρ²)^{-d/2}`.
pub fn zeta_factor(gamma_bar2: f64, k0: f64, ell: f64, pixel: f64, dim: usize) -> f64 {
    let rho = speckle_radius(gamma_bar2, k0, ell);
    let d = dim as f64;
    (6.0 / (PI * gamma_bar2 * ell.powi(3))).powf(d) * (1.0 + (pixel / rho).powi(2)).powf(-d / 2.0)
}

/// Blur radius `R_L² = (γ̄₂ℓ³/6)·(1 + ρo²/ρ²)/(1 + 4ρo²/ρ²)`.
pub fn blur_radius(pixel: f64, medium: &MediumModel, k0: f64, ell: f64) -> f64 {
    let gb = medium.gamma_bar2();
    let s = (pixel / speckle_radius(gb, k0, ell)).powi(2);
    (gb * ell.powi(3) / 6.0 * (1.0 + s) / (1.0 + 4.0 * s)).sqrt()
}

/// Ray integral `∫₀^z γ₀(x + v z') dz'`.
///
/// Closed form through `erf` for the Gaussian family, adaptive quadrature
/// otherwise.
pub fn ray_integral(medium: &MediumModel, x: Point, v: Point, z: f64) -> Result<f64> {
    if z == 0.0 {
        return Ok(0.0);
    }
    match medium.kind {
        MediumKind::Gaussian => {
            let lc = medium.corr_length();
            let g0 = medium.gamma0_at_zero();
            let speed = v[0].hypot(v[1]);
            if speed * z < 1e-12 * lc {
                let r2 = x[0] * x[0] + x[1] * x[1];
                return Ok(g0 * z * (-0.5 * r2 / (lc * lc)).exp());
            }
            let e = [v[0] / speed, v[1] / speed];
            let along = x[0] * e[0] + x[1] * e[1];
            let perp2 = (x[0] * x[0] + x[1] * x[1] - along * along).max(0.0);
            let s = std::f64::consts::SQRT_2 * lc;
            let span = libm::erf((along + speed * z) / s) - libm::erf(along / s);
            // erf difference loses accuracy far out in the tails
            let span = if along / s > 3.0 {
                libm::erfc(along / s) - libm::erfc((along + speed * z) / s)
            } else if (along + speed * z) / s < -3.0 {
                libm::erfc(-(along + speed * z) / s) - libm::erfc(-along / s)
            } else {
                span
            };
            Ok(g0 * (-0.5 * perp2 / (lc * lc)).exp() * lc * (PI / 2.0).sqrt() / speed * span)
        }
        MediumKind::Tabulated { .. } => quad::integrate(
            |t| medium.gamma0_or_zero((x[0] + v[0] * t).hypot(x[1] + v[1] * t)),
            0.0,
            z,
            1e-12 * medium.gamma0_at_zero() * z,
        ),
    }
}

fn support_radius(medium: &MediumModel) -> f64 {
    match &medium.kind {
        MediumKind::Gaussian => 10.0 * medium.corr_length(),
        MediumKind::Tabulated { table } => table.max_offset(),
    }
}

/// `A(ξ, ζ, z) = (2π)^{-d} ∫ [exp((k₀²/4)∫₀^z γ₀(x + ζz'/k₀)dz') - 1] e^{-iξ·x} dx`.
pub fn a_kernel(medium: &MediumModel, k0: f64, xi: Point, zeta: Point, z: f64, dim: usize) -> Result<Complex64> {
    if z == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let v = [zeta[0] / k0, zeta[1] / k0];
    let bracket = |x: Point| -> f64 {
        let ray = ray_integral(medium, x, v, z).unwrap_or(f64::NAN);
        (0.25 * k0 * k0 * ray).exp_m1()
    };
    let rc = support_radius(medium);
    let lo = |c: f64| (-c * z).min(0.0) - rc;
    let hi = |c: f64| (-c * z).max(0.0) + rc;
    let panels = |w: f64, freq: f64| ((freq.abs() * w / PI).ceil() as usize + 1) * 2;
    let fail = |e: Error| match e {
        Error::NumericalFailure { detail, .. } => Error::numerical(
            "A kernel",
            format!("ξ = {xi:?}, ζ = {zeta:?}, z = {z}: {detail}"),
        ),
        other => other,
    };
    if dim == 1 {
        let (a, b) = (lo(v[0]), hi(v[0]));
        let np = panels(b - a, xi[0]);
        let re = quad::integrate_panels(|x| bracket([x, 0.0]) * (xi[0] * x).cos(), a, b, np, TOL).map_err(fail)?;
        let im = quad::integrate_panels(|x| -bracket([x, 0.0]) * (xi[0] * x).sin(), a, b, np, TOL).map_err(fail)?;
        return Ok(Complex64::new(re, im) / (2.0 * PI));
    }
    let (a0, b0, a1, b1) = (lo(v[0]), hi(v[0]), lo(v[1]), hi(v[1]));
    let (n0, n1) = (panels(b0 - a0, xi[0]), panels(b1 - a1, xi[1]));
    let inner_tol = TOL / (b0 - a0);
    let part = |phase_shift: f64| {
        quad::integrate_panels(
            |x0| {
                quad::integrate_panels(
                    |x1| bracket([x0, x1]) * (-(xi[0] * x0 + xi[1] * x1) + phase_shift).cos(),
                    a1,
                    b1,
                    n1,
                    inner_tol,
                )
                .unwrap_or(f64::NAN)
            },
            a0,
            b0,
            n0,
            TOL,
        )
    };
    let re = part(0.0).map_err(fail)?;
    let im = part(-PI / 2.0).map_err(fail)?;
    if !(re.is_finite() && im.is_finite()) {
        return Err(Error::numerical("A kernel", "inner quadrature did not converge"));
    }
    Ok(Complex64::new(re, im) / (2.0 * PI).powi(2))
}

/// Spectral damping of the mean intensity,
/// `exp((k₀²/4)∫₀^ℓ γ₀(ζz/k₀) - γ₀(0) dz) = exp(-k₀²ℓγ₂(ζℓ/k₀)/4)`.
pub fn mean_intensity_kernel(medium: &MediumModel, k0: f64, ell: f64, zeta: Point) -> Result<f64> {
    let q = [zeta[0] * ell / k0, zeta[1] * ell / k0];
    Ok((-0.25 * k0 * k0 * ell * medium.gamma2_at(q)?).exp())
}

/// Same kernel with an observation offset:
/// `exp((k₀²/4)∫₀^ℓ γ₀(ζz/k₀ - Y₀) - γ₀(0) dz)`.
pub fn offset_kernel(medium: &MediumModel, k0: f64, ell: f64, zeta: Point, y0: Point) -> Result<f64> {
    let ray = ray_integral(medium, [-y0[0], -y0[1]], [zeta[0] / k0, zeta[1] / k0], ell)?;
    Ok((0.25 * k0 * k0 * (ray - medium.gamma0_at_zero() * ell)).exp())
}

fn spectral_kernel_field<F>(grid: &TransverseGrid, f: F) -> Result<Vec<f64>>
where
    F: Fn(Point) -> Result<f64>,
{
    (0..grid.len()).map(|m| f(grid.wavevector(m))).collect()
}

/// Mean intensity `𝓘_r(x₀)` at every node of the mask grid in the
/// scintillation regime, by spectral quadrature over `ζ`.
///
/// `r` may be any vector; it enters as the phase `e^{-iζ·r}`.
pub fn mean_intensity_map(mask: &ComplexField, r: Point, medium: &MediumModel, k0: f64, ell: f64) -> Result<RealField> {
    let g = mask.grid;
    let kernel = spectral_kernel_field(&g, |k| mean_intensity_kernel(medium, k0, ell, k))?;
    let mut spec = forward_transform(&mask.intensity().to_complex());
    for (m, v) in spec.values.iter_mut().enumerate() {
        let k = g.wavevector(m);
        *v *= kernel[m] * Complex64::from_polar(1.0, -(k[0] * r[0] + k[1] * r[1]));
    }
    let out = inverse_transform(&spec);
    RealField::new(g, out.values.iter().map(|v| v.re).collect())
}

/// Mean intensity at a single observation point.
pub fn mean_intensity_scintillation(
    mask: &ComplexField,
    r: Point,
    x0: Point,
    medium: &MediumModel,
    k0: f64,
    ell: f64,
) -> Result<f64> {
    let g = mask.grid;
    let spec = forward_transform(&mask.intensity().to_complex());
    let mut acc = Complex64::new(0.0, 0.0);
    for (m, v) in spec.values.iter().enumerate() {
        let k = g.wavevector(m);
        let h = mean_intensity_kernel(medium, k0, ell, k)?;
        acc += v * h * Complex64::from_polar(1.0, k[0] * (x0[0] - r[0]) + k[1] * (x0[1] - r[1]));
    }
    Ok(acc.re * g.spectral_cell())
}

/// Strong-scattering mean intensity: `|U(· - r)|²` convolved with an
/// isotropic Gaussian of per-axis variance `γ̄₂ℓ³/12`.
pub fn mean_intensity_strong(mask: &ComplexField, r: Point, x0: Point, gamma_bar2: f64, ell: f64) -> f64 {
    let g = mask.grid;
    let b = gamma_bar2 * ell.powi(3);
    let d = g.dim() as f64;
    let norm = (6.0 / (PI * b)).powf(d / 2.0);
    let mut acc = 0.0;
    for (j, v) in mask.values.iter().enumerate() {
        let p = g.point(j);
        let u = [p[0] - x0[0] + r[0], p[1] - x0[1] + r[1]];
        acc += v.norm_sqr() * (-6.0 * (u[0] * u[0] + u[1] * u[1]) / b).exp();
    }
    norm * acc * g.cell()
}

/// `w(Y) = U(Y + Δ)Ū(Y)` on the mask grid for a grid-aligned `Δ`.
fn lagged_product(mask: &ComplexField, delta: Point) -> Result<ComplexField> {
    let steps = mask.grid.steps_of(delta)?;
    let ahead = mask.rolled([-steps[0], -steps[1]]);
    let values = ahead.values.iter().zip(&mask.values).map(|(a, b)| a * b.conj()).collect();
    ComplexField::new(mask.grid, values)
}

/// Which closed form [`covariance_scintillation`] evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceForm {
    /// Full scintillation expression, spectral quadrature over `ζ`.
    General,
    /// Strong-scattering closed form (Gaussian-weighted mask integral).
    Strong,
}

/// Statistical intensity covariance `𝒞_{r,r'}(x₀, x₀')` in the
/// scintillation regime with `x₀ = X₀ + Y₀/2`, `x₀' = X₀ - Y₀/2`.
/// The shift offset `r' - r` must be grid-aligned.
#[allow(clippy::too_many_arguments)]
pub fn covariance_scintillation(
    mask: &ComplexField,
    r: Point,
    r_prime: Point,
    x_mid: Point,
    y0: Point,
    medium: &MediumModel,
    k0: f64,
    ell: f64,
    form: CovarianceForm,
) -> Result<f64> {
    let g = mask.grid;
    let delta = [r_prime[0] - r[0], r_prime[1] - r[1]];
    let w = lagged_product(mask, delta)?;
    let centre = [x_mid[0] - 0.5 * (r[0] + r_prime[0]), x_mid[1] - 0.5 * (r[1] + r_prime[1])];
    match form {
        CovarianceForm::General => {
            let spec = forward_transform(&w);
            // V̂_Δ(ζ) = e^{-iζ·Δ/2} ŵ(ζ)
            let p = [centre[0] - 0.5 * delta[0], centre[1] - 0.5 * delta[1]];
            let mut acc = Complex64::new(0.0, 0.0);
            for (m, v) in spec.values.iter().enumerate() {
                if v.norm_sqr() == 0.0 {
                    continue;
                }
                let k = g.wavevector(m);
                let h = offset_kernel(medium, k0, ell, k, y0)?;
                acc += v * h * Complex64::from_polar(1.0, k[0] * p[0] + k[1] * p[1]);
            }
            let first = (acc * g.spectral_cell()).norm_sqr();
            // coherent part: U(c + Δ/2)Ū(c - Δ/2) damped by exp(-k₀²γ₀(0)ℓ/4)
            let coherent = interpolate_product(&w, p) * (-0.25 * k0 * k0 * medium.gamma0_at_zero() * ell).exp();
            Ok(first - coherent.norm_sqr())
        }
        CovarianceForm::Strong => {
            let gb = medium.gamma_bar2();
            let b = gb * ell.powi(3);
            let kappa = 1.5 * k0 / ell;
            let d = g.dim() as f64;
            let mut acc = Complex64::new(0.0, 0.0);
            for (j, v) in w.values.iter().enumerate() {
                if v.norm_sqr() == 0.0 {
                    continue;
                }
                let y = g.point(j);
                let u = [y[0] + 0.5 * delta[0] - centre[0], y[1] + 0.5 * delta[1] - centre[1]];
                let gauss = -6.0 * (u[0] * u[0] + u[1] * u[1]) / b;
                let phase = -kappa * (y0[0] * u[0] + y0[1] * u[1]);
                acc += v * Complex64::from_polar(gauss.exp(), phase);
            }
            let pref = (6.0 / (PI * b)).powf(d);
            let y2 = y0[0] * y0[0] + y0[1] * y0[1];
            Ok(pref * (acc * g.cell()).norm_sqr() * (-gb * k0 * k0 * ell * y2 / 16.0).exp())
        }
    }
}

/// Value of a grid function at `p` by direct band-limited interpolation.
fn interpolate_product(w: &ComplexField, p: Point) -> Complex64 {
    let g = w.grid;
    let spec = forward_transform(w);
    let mut acc = Complex64::new(0.0, 0.0);
    for (m, v) in spec.values.iter().enumerate() {
        let k = g.wavevector(m);
        acc += v * Complex64::from_polar(1.0, k[0] * p[0] + k[1] * p[1]);
    }
    acc * g.spectral_cell()
}

/// Mask autocorrelation `V(q) = ∫ U(X + q)Ū(X) dX` for every grid lag `q`,
/// stored at the node with coordinate `q`. Computed by zero-padded FFT, so
/// lags are linear (not circular) for masks supported in half the box.
pub fn mask_autocorrelation(mask: &ComplexField) -> Result<ComplexField> {
    let g = mask.grid;
    let n = g.n();
    let big = TransverseGrid::new(g.dim(), 2 * n, g.dx())?;
    let mut padded = vec![Complex64::new(0.0, 0.0); big.len()];
    for (j, v) in mask.values.iter().enumerate() {
        let [i0, i1] = g.unflatten(j);
        padded[big.flatten([i0, if g.dim() == 2 { i1 } else { 0 }])] = *v;
    }
    fft_in_place(&big, &mut padded, false);
    for v in padded.iter_mut() {
        *v = Complex64::new(v.norm_sqr(), 0.0);
    }
    // inverse of |F|² is Σ_y U(y+q)Ū(y) at circular lag index q
    fft_in_place(&big, &mut padded, true);
    let scale = g.cell() / big.len() as f64;
    let mut out = ComplexField::zeros(g);
    for (j, slot) in out.values.iter_mut().enumerate() {
        let [i0, i1] = g.unflatten(j);
        let lag = |i: usize| -> usize {
            let l = i as i64 - (n / 2) as i64;
            l.rem_euclid(2 * n as i64) as usize
        };
        let idx = if g.dim() == 1 {
            lag(i0)
        } else {
            big.flatten([lag(i0), lag(i1)])
        };
        *slot = padded[idx] * scale;
    }
    Ok(out)
}

/// `V(q)` for one grid-aligned lag by direct summation.
pub fn mask_autocorrelation_at(mask: &ComplexField, q: Point) -> Result<Complex64> {
    let steps = mask.grid.steps_of(q)?;
    let ahead = mask.rolled([-steps[0], -steps[1]]);
    let n = mask.grid.n() as i64;
    let g = mask.grid;
    let mut acc = Complex64::new(0.0, 0.0);
    for (j, (a, b)) in ahead.values.iter().zip(&mask.values).enumerate() {
        // exclude pairs that only meet through the periodic wrap
        let [i0, i1] = g.unflatten(j);
        let s0 = i0 as i64 + steps[0];
        let s1 = i1 as i64 + steps[1];
        if s0 < 0 || s0 >= n || (g.dim() == 2 && (s1 < 0 || s1 >= n)) {
            continue;
        }
        acc += a * b.conj();
    }
    Ok(acc * g.cell())
}

/// Self-averaged empirical covariance predicted for a shift offset `Δr`:
/// `𝒵^{ρo}|V(Δr)|²`.
pub fn predicted_covariance_map(
    mask: &ComplexField,
    delta: Point,
    pixel: f64,
    medium: &MediumModel,
    k0: f64,
    ell: f64,
) -> Result<f64> {
    let v = mask_autocorrelation_at(mask, delta)?;
    Ok(zeta_factor(medium.gamma_bar2(), k0, ell, pixel, mask.grid.dim()) * v.norm_sqr())
}

/// Predicted map at every grid lag (node with coordinate `Δr`).
pub fn predicted_covariance_field(
    mask: &ComplexField,
    pixel: f64,
    medium: &MediumModel,
    k0: f64,
    ell: f64,
) -> Result<RealField> {
    let v = mask_autocorrelation(mask)?;
    let z = zeta_factor(medium.gamma_bar2(), k0, ell, pixel, mask.grid.dim());
    RealField::new(mask.grid, v.values.iter().map(|c| z * c.norm_sqr()).collect())
}

/// Covariance integrated over the observation mid-point for masks that
/// are not small against the enhanced aperture:
/// `(3/(πγ̄₂ℓ³(1+ρo²/ρ²)))^{d/2} ∬ w(X) w̄(X') exp(-|X-X'|²/(2R_L²)) dX dX'`
/// with `w(X) = U(X + Δ/2)Ū(X - Δ/2)`.
pub fn blurred_covariance(
    mask: &ComplexField,
    delta: Point,
    pixel: f64,
    medium: &MediumModel,
    k0: f64,
    ell: f64,
) -> Result<f64> {
    let g = mask.grid;
    let w = lagged_product(mask, delta)?;
    let gb = medium.gamma_bar2();
    let s = (pixel / speckle_radius(gb, k0, ell)).powi(2);
    let rl = blur_radius(pixel, medium, k0, ell);
    let d = g.dim() as f64;
    let pref = (3.0 / (PI * gb * ell.powi(3) * (1.0 + s))).powf(d / 2.0);
    let support: Vec<(Point, Complex64)> = w
        .values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.norm_sqr() > 0.0)
        .map(|(j, v)| (g.point(j), *v))
        .collect();
    let mut acc = Complex64::new(0.0, 0.0);
    for (p, a) in &support {
        for (q, b) in &support {
            let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
            acc += a * b.conj() * (-d2 / (2.0 * rl * rl)).exp();
        }
    }
    Ok(pref * acc.re * g.cell() * g.cell())
}

/// Spot-dancing regime description of one imaging configuration.
#[derive(Debug, Clone)]
pub struct SpotDancingPrediction {
    /// Per-axis variance of the random beam centre.
    pub centroid_variance: f64,
    /// Field transmitted through a homogeneous medium (unshifted mask).
    pub homogeneous_field: ComplexField,
    /// Empirical covariance expected at every grid lag `r' - r` for an
    /// aperture of measure `aperture_measure`.
    pub covariance: RealField,
}

/// Spot-dancing predictions: the transmitted intensity is the homogeneous
/// one translated by a Gaussian centre, so the empirical covariance is the
/// autocovariance of `|E⁰|²` over the aperture.
pub fn spot_dancing_predictions(
    mask: &ComplexField,
    k0: f64,
    ell: f64,
    gamma_bar2: f64,
    aperture_measure: f64,
) -> Result<SpotDancingPrediction> {
    let e0 = free_space_propagate(mask, k0, ell)?;
    let intensity = e0.intensity();
    let auto = mask_autocorrelation(&intensity.to_complex())?;
    let mean = intensity.integral() / aperture_measure;
    let values = auto.values.iter().map(|v| v.re / aperture_measure - mean * mean).collect();
    Ok(SpotDancingPrediction {
        centroid_variance: spot_centroid_variance(gamma_bar2, ell),
        homogeneous_field: e0,
        covariance: RealField::new(mask.grid, values)?,
    })
}

/// Radius of a mask: largest distance from the intensity centroid among
/// nodes with `|U|² ≥ 10⁻²·max|U|²`.
pub fn mask_radius(mask: &ComplexField) -> f64 {
    let g = mask.grid;
    let inten: Vec<f64> = mask.values.iter().map(|v| v.norm_sqr()).collect();
    let peak = inten.iter().cloned().fold(0.0, f64::max);
    if peak == 0.0 {
        return 0.0;
    }
    let total: f64 = inten.iter().sum();
    let mut c = [0.0; 2];
    for (j, w) in inten.iter().enumerate() {
        let p = g.point(j);
        c[0] += w * p[0];
        c[1] += w * p[1];
    }
    c = [c[0] / total, c[1] / total];
    inten
        .iter()
        .enumerate()
        .filter(|(_, &w)| w >= 1e-2 * peak)
        .map(|(j, _)| {
            let p = g.point(j);
            (p[0] - c[0]).hypot(p[1] - c[1])
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    ScintillationStrong,
    ScintillationWeak,
    SpotDancing,
    Intermediate,
}

/// Quantities that decide which asymptotic description applies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeInputs {
    pub dim: usize,
    pub mask_radius: f64,
    pub gamma0_at_zero: f64,
    pub gamma_bar2: f64,
    pub corr_length: f64,
    pub k0: f64,
    pub ell: f64,
    pub aperture_radius: f64,
    pub pixel: f64,
    pub max_shift: f64,
}

impl RegimeInputs {
    pub fn new(mask: &ComplexField, medium: &MediumModel, k0: f64, ell: f64) -> Self {
        Self {
            dim: mask.grid.dim(),
            mask_radius: mask_radius(mask),
            gamma0_at_zero: medium.gamma0_at_zero(),
            gamma_bar2: medium.gamma_bar2(),
            corr_length: medium.corr_length(),
            k0,
            ell,
            aperture_radius: 0.0,
            pixel: 0.0,
            max_shift: 0.0,
        }
    }
}

/// Length scales, ratios and regime classification of a configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub ell_sca: f64,
    pub rho_speckle: f64,
    pub beam_spread: f64,
    pub ell_over_ell_sca: f64,
    pub mask_radius_over_corr_length: f64,
    pub aperture_over_rho: f64,
    pub mask_radius_over_beam_spread: f64,
    pub aperture_over_beam_spread: f64,
    pub shift_over_beam_spread: f64,
    /// Camera covers many speckle spots: `R_A ≥ 10·sqrt(ρo² + ρ²)`.
    pub aperture_condition: bool,
    /// Mask, camera and shifts all below the enhanced aperture `𝒜`.
    pub large_enhanced_aperture: bool,
    pub classification: Regime,
    pub warnings: Vec<String>,
}

/// Threshold on `r_U/ℓ_c` below which the spot-dancing description is used.
pub const SPOT_DANCING_MAX_RATIO: f64 = 1.0 / 3.0;
/// Threshold on `r_U/ℓ_c` above which the scintillation description is used.
pub const SCINTILLATION_MIN_RATIO: f64 = 3.0;
/// `ℓ/ℓ_sca` at and above which scattering counts as strong.
pub const STRONG_SCATTERING_MIN_RATIO: f64 = 10.0;
/// Factor used to read "much greater than" in the aperture condition.
pub const APERTURE_FACTOR: f64 = 10.0;

pub fn classify_regime(inp: &RegimeInputs) -> RegimeReport {
    let ell_sca = scattering_mean_free_path(inp.gamma0_at_zero, inp.k0);
    let rho = speckle_radius(inp.gamma_bar2, inp.k0, inp.ell);
    let spread = beam_spread(inp.gamma_bar2, inp.ell);
    let ratio = inp.mask_radius / inp.corr_length;
    let strength = inp.ell / ell_sca;
    let classification = if ratio < SPOT_DANCING_MAX_RATIO {
        Regime::SpotDancing
    } else if ratio > SCINTILLATION_MIN_RATIO {
        if strength >= STRONG_SCATTERING_MIN_RATIO {
            Regime::ScintillationStrong
        } else {
            Regime::ScintillationWeak
        }
    } else {
        Regime::Intermediate
    };
    let aperture_condition = inp.aperture_radius >= APERTURE_FACTOR * inp.pixel.hypot(rho);
    let large_enhanced_aperture =
        inp.mask_radius < spread && inp.aperture_radius < spread && inp.max_shift < spread;
    let mut warnings = Vec::new();
    if classification == Regime::Intermediate {
        warnings.push(format!(
            "r_U/ℓ_c = {ratio:.3} lies between the spot-dancing and scintillation descriptions; neither asymptotic formula is reliable"
        ));
    }
    if matches!(classification, Regime::ScintillationStrong | Regime::ScintillationWeak) {
        if !aperture_condition {
            warnings.push(format!(
                "camera radius {} is below {APERTURE_FACTOR}·sqrt(ρo² + ρ²) = {:.4}; self-averaging will be poor",
                inp.aperture_radius,
                APERTURE_FACTOR * inp.pixel.hypot(rho)
            ));
        }
        if !large_enhanced_aperture {
            warnings.push(format!(
                "mask, camera or shifts are not small against the enhanced aperture 𝒜 = {spread:.4}; the covariance map will be blurred"
            ));
        }
    }
    RegimeReport {
        ell_sca,
        rho_speckle: rho,
        beam_spread: spread,
        ell_over_ell_sca: strength,
        mask_radius_over_corr_length: ratio,
        aperture_over_rho: inp.aperture_radius / rho,
        mask_radius_over_beam_spread: inp.mask_radius / spread,
        aperture_over_beam_spread: inp.aperture_radius / spread,
        shift_over_beam_spread: inp.max_shift / spread,
        aperture_condition,
        large_enhanced_aperture,
        classification,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::energy;

    #[test]
    fn length_scales() {
        assert!((scattering_mean_free_path(8.0, 1.0) - 1.0).abs() < 1e-15);
        assert!((scattering_mean_free_path(0.5, 4.0) - 1.0).abs() < 1e-15);
        assert!((speckle_radius(4.0, 1.0, 1.0) - 1.0).abs() < 1e-15);
        assert!((speckle_radius(1.0, 2.0, 1.0) - 1.0).abs() < 1e-15);
        assert!((beam_spread(6.0, 1.0) - 1.0).abs() < 1e-15);
        assert!((beam_spread(6e-4, 10.0) - 0.1f64.sqrt()).abs() < 1e-12);
        assert_eq!(k_factor(1.0, 2.0, 0.0), 1.0);
        assert!((k_factor(1.0, 2.0, 1.0) - (-2f64).exp()).abs() < 1e-15);
        assert!((spot_centroid_variance(12.0, 1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn blur_radius_limits() {
        let m = MediumModel::gaussian(2.0, 0.5).unwrap();
        let (k0, ell) = (3.0_f64, 2.0_f64);
        let b = m.gamma_bar2() * ell.powi(3);
        assert!((blur_radius(0.0, &m, k0, ell) - (b / 6.0).sqrt()).abs() < 1e-12);
        assert!((blur_radius(1e6, &m, k0, ell) / (b / 24.0).sqrt() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ray_integral_closed_form_matches_quadrature() {
        let m = MediumModel::gaussian(1.3, 0.7).unwrap();
        for (x, v, z) in [
            ([0.2, 0.0], [0.5, 0.0], 3.0),
            ([-1.0, 0.3], [0.4, -0.2], 2.0),
            ([5.0, 0.0], [1.0, 0.0], 1.0),
            ([0.1, 0.1], [0.0, 0.0], 2.5),
        ] {
            let exact = ray_integral(&m, x, v, z).unwrap();
            let q = quad::integrate(
                |t| m.gamma0_at([x[0] + v[0] * t, x[1] + v[1] * t]).unwrap(),
                0.0,
                z,
                1e-14,
            )
            .unwrap();
            assert!((exact - q).abs() < 1e-12, "{exact} vs {q}");
        }
    }

    #[test]
    fn a_kernel_vanishes_at_zero_distance() {
        let m = MediumModel::gaussian(1.0, 1.0).unwrap();
        assert_eq!(a_kernel(&m, 1.0, [0.3, 0.0], [0.2, 0.0], 0.0, 1).unwrap(), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn regime_thresholds() {
        let base = RegimeInputs {
            dim: 1,
            mask_radius: 20.0,
            gamma0_at_zero: 1.0,
            gamma_bar2: 1.0,
            corr_length: 1.0,
            k0: 1.0,
            ell: 120.0,
            aperture_radius: 10.0,
            pixel: 0.0,
            max_shift: 0.0,
        };
        // ℓ_sca = 8 so ℓ/ℓ_sca = 15
        assert_eq!(classify_regime(&base).classification, Regime::ScintillationStrong);
        let spot = RegimeInputs { mask_radius: 0.1, ..base };
        assert_eq!(classify_regime(&spot).classification, Regime::SpotDancing);
        let mid = RegimeInputs { mask_radius: 1.0, ..base };
        let rep = classify_regime(&mid);
        assert_eq!(rep.classification, Regime::Intermediate);
        assert!(!rep.warnings.is_empty());
        let weak = RegimeInputs { ell: 8.0, ..base };
        assert_eq!(classify_regime(&weak).classification, Regime::ScintillationWeak);
    }

    fn grid1(n: usize, dx: f64) -> TransverseGrid {
        TransverseGrid::new(1, n, dx).unwrap()
    }

    fn gaussian_mask(g: TransverseGrid, w: f64) -> ComplexField {
        ComplexField::from_real_fn(g, |p| (-(p[0] * p[0] + p[1] * p[1]) / (2.0 * w * w)).exp())
    }

    /// Medium with ℓ/ℓ_sca = `ratio` for k₀ = 1, ℓ = 1.
    fn strong_medium(ratio: f64, lc: f64) -> MediumModel {
        MediumModel::gaussian(8.0 * ratio, lc).unwrap()
    }

    #[test]
    fn integral_of_a_over_xi_is_the_bracket_at_the_origin() {
        let m = MediumModel::gaussian(1.5, 1.0).unwrap();
        let (k0, z) = (1.2, 0.8);
        for zeta in [0.0, 0.7] {
            let total = quad::integrate(
                |xi| a_kernel(&m, k0, [xi, 0.0], [zeta, 0.0], z, 1).unwrap().re,
                -14.0,
                14.0,
                1e-9,
            )
            .unwrap();
            let expect = (0.25 * k0 * k0 * ray_integral(&m, [0.0, 0.0], [zeta / k0, 0.0], z).unwrap()).exp_m1();
            assert!((total - expect).abs() < 1e-6 * expect, "ζ = {zeta}: {total} vs {expect}");
        }
    }

    #[test]
    fn mean_intensity_conserves_power() {
        let g = grid1(128, 0.25);
        let u = gaussian_mask(g, 1.5);
        let m = MediumModel::gaussian(2.0, 1.0).unwrap();
        let map = mean_intensity_map(&u, [0.0, 0.0], &m, 1.5, 2.0).unwrap();
        let e = energy(&u);
        assert!((map.integral() - e).abs() < 1e-10 * e);
    }

    #[test]
    fn mean_intensity_point_and_map_agree() {
        let g = grid1(64, 0.25);
        let u = gaussian_mask(g, 1.0);
        let m = MediumModel::gaussian(2.0, 1.0).unwrap();
        let map = mean_intensity_map(&u, [0.5, 0.0], &m, 1.0, 1.0).unwrap();
        for j in [20, 32, 40] {
            let x0 = g.point(j);
            let p = mean_intensity_scintillation(&u, [0.5, 0.0], x0, &m, 1.0, 1.0).unwrap();
            assert!((p - map.values[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn strong_scattering_mean_intensity_is_a_gaussian_blur() {
        let g = grid1(256, 0.25);
        let u = gaussian_mask(g, 2.0);
        let m = strong_medium(20.0, 4.0);
        let map = mean_intensity_map(&u, [1.0, 0.0], &m, 1.0, 1.0).unwrap();
        let peak = map.values.iter().cloned().fold(0.0, f64::max);
        for j in (0..g.len()).step_by(7) {
            let x0 = g.point(j);
            let strong = mean_intensity_strong(&u, [1.0, 0.0], x0, m.gamma_bar2(), 1.0);
            assert!((strong - map.values[j]).abs() < 0.01 * peak, "x₀ = {}: {strong} vs {}", x0[0], map.values[j]);
        }
    }

    #[test]
    fn general_and_strong_covariance_agree_deep_in_the_strong_regime() {
        let g = grid1(256, 0.25);
        let u = gaussian_mask(g, 2.0);
        let m = strong_medium(20.0, 4.0);
        let at = |form, mid: f64, y0: f64, rp: f64| {
            covariance_scintillation(&u, [0.0, 0.0], [rp, 0.0], [mid, 0.0], [y0, 0.0], &m, 1.0, 1.0, form).unwrap()
        };
        let scale = at(CovarianceForm::Strong, 0.0, 0.0, 0.0);
        for (mid, y0, rp) in [(0.0, 0.0, 0.0), (1.0, 0.0, 0.5), (0.5, 0.1, 0.0), (-1.0, 0.2, 1.0)] {
            let gen = at(CovarianceForm::General, mid, y0, rp);
            let strong = at(CovarianceForm::Strong, mid, y0, rp);
            assert!((gen - strong).abs() < 0.02 * scale, "({mid}, {y0}, {rp}): {gen} vs {strong}");
        }
    }

    #[test]
    fn covariance_is_symmetric_and_bounded_by_the_variance() {
        let g = grid1(128, 0.25);
        let u = gaussian_mask(g, 1.5);
        let m = MediumModel::gaussian(8.0, 2.0).unwrap();
        let c = |x: f64, y: f64| {
            covariance_scintillation(&u, [0.0, 0.0], [0.0, 0.0], [0.5 * (x + y), 0.0], [x - y, 0.0], &m, 1.0, 2.0, CovarianceForm::General)
                .unwrap()
        };
        for (x, y) in [(0.0, 0.3), (1.0, -0.5), (0.4, 0.4)] {
            let (cxy, cyx) = (c(x, y), c(y, x));
            assert!((cxy - cyx).abs() < 1e-9 * cxy.abs().max(1e-12));
            assert!(cxy * cxy <= c(x, x) * c(y, y) * (1.0 + 1e-9));
            assert!(c(x, x) >= 0.0);
        }
    }

    #[test]
    fn rectangle_autocorrelation_is_a_triangle() {
        let g = grid1(64, 0.25);
        let w = 3.0;
        let u = ComplexField::from_real_fn(g, |p| if p[0] >= -w / 2.0 && p[0] < w / 2.0 { 1.0 } else { 0.0 });
        let auto = mask_autocorrelation(&u).unwrap();
        for j in 0..g.len() {
            let q = g.point(j)[0];
            let expect = (w - q.abs()).max(0.0);
            assert!((auto.values[j].re - expect).abs() < 1e-12, "q = {q}");
            let direct = mask_autocorrelation_at(&u, [q, 0.0]).unwrap();
            assert!((direct - auto.values[j]).norm() < 1e-12);
        }
        let m = MediumModel::gaussian(1.0, 1.0).unwrap();
        let z = zeta_factor(m.gamma_bar2(), 1.0, 1.0, 0.2, 1);
        let at0 = predicted_covariance_map(&u, [0.0, 0.0], 0.2, &m, 1.0, 1.0).unwrap();
        assert!((at0 - z * energy(&u).powi(2)).abs() < 1e-12 * at0);
    }

    #[test]
    fn double_slit_has_three_lobes() {
        let g = grid1(128, 0.25);
        let (a, s) = (1.0, 6.0);
        let slit = |x: f64, c: f64| x >= c - a / 2.0 && x < c + a / 2.0;
        let u = ComplexField::from_real_fn(g, |p| if slit(p[0], -s / 2.0) || slit(p[0], s / 2.0) { 1.0 } else { 0.0 });
        let at = |q: f64| mask_autocorrelation_at(&u, [q, 0.0]).unwrap().re;
        assert!((at(0.0) - 2.0 * a).abs() < 1e-12);
        assert!((at(s) - a).abs() < 1e-12);
        assert!((at(-s) - a).abs() < 1e-12);
        assert!(at(s / 2.0).abs() < 1e-12);
        let field = predicted_covariance_field(&u, 0.0, &MediumModel::gaussian(1.0, 1.0).unwrap(), 1.0, 1.0).unwrap();
        let lobe = field.values[g.n() / 2 + 24];
        let centre = field.values[g.n() / 2];
        assert!((centre / lobe - 4.0).abs() < 1e-10);
    }

    #[test]
    fn blurred_covariance_of_a_narrow_mask_is_the_overlap_squared() {
        let g = grid1(128, 0.1);
        let u = gaussian_mask(g, 0.3);
        // R_L ≈ 3.7 against a mask radius of 0.3
        let m = MediumModel::gaussian(20.0, 1.0).unwrap();
        let (k0, ell, pixel) = (1.0, 2.0, 0.1);
        let gb = m.gamma_bar2();
        let s = (pixel / speckle_radius(gb, k0, ell)).powi(2);
        let pref = (3.0 / (PI * gb * ell.powi(3) * (1.0 + s))).sqrt();
        for q in [0.0, 0.2, 0.4] {
            let v = mask_autocorrelation_at(&u, [q, 0.0]).unwrap().norm_sqr();
            let b = blurred_covariance(&u, [q, 0.0], pixel, &m, k0, ell).unwrap();
            assert!((b / (pref * v) - 1.0).abs() < 0.02, "q = {q}: {b} vs {}", pref * v);
        }
    }

    #[test]
    fn spot_dancing_covariance_peaks_at_zero_lag() {
        let g = grid1(64, 0.25);
        let u = gaussian_mask(g, 1.0);
        let pred = spot_dancing_predictions(&u, 2.0, 1.0, 0.1, g.box_len()).unwrap();
        assert!((pred.centroid_variance - 0.1 / 12.0).abs() < 1e-15);
        let c0 = pred.covariance.values[g.n() / 2];
        assert!(pred.covariance.values.iter().all(|&v| v <= c0 + 1e-12));
        assert!((energy(&pred.homogeneous_field) - energy(&u)).abs() < 1e-10 * energy(&u));
    }
}
