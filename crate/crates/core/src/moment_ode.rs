//! Direct integration of the fourth-order moment equation in `d = 1`.
//!
//! The fourth moment `M(x₁, x₂, y₁, y₂) = E[E(x₁)Ē(y₁)E_r(x₂)Ē_r(y₂)]` is
//! written in the variables
//!
//! ```text
//! x₁ = (r₁+r₂+q₁+q₂)/2   y₁ = (r₁+r₂-q₁-q₂)/2
//! x₂ = (r₁-r₂+q₁-q₂)/2   y₂ = (r₁-r₂-q₁+q₂)/2
//! ```
//!
//! and Fourier transformed in `(q₁, q₂, r₁, r₂) → (ξ₁, ξ₂, ζ₁, ζ₂)`. The
//! transform `μ̂` obeys
//!
//! ```text
//! ∂_z μ̂ + (i/k₀)(ξ₁ζ₁ + ξ₂ζ₂) μ̂ = (k₀²/4) ∫ γ̂₀(k) [ seven shifted copies of μ̂ ] dk/(2π)
//! ```
//!
//! The transport phase is removed exactly by working with
//! `ν = μ̂·exp(iz(ξ₁ζ₁ + ξ₂ζ₂)/k₀)`; the remaining coupling is advanced with
//! classical RK4. All four axes share one spacing `dκ`, so every shift by
//! a lattice wavenumber `k = j·dκ` lands on a node (periodic wrap).
//!
//! The lattice has `m⁴` nodes; it is meant as a validation oracle on
//! coarse grids, not as a production solver.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::grid::{transform_at, ComplexField};
use crate::medium::MediumModel;

/// Upper bound on the number of lattice nodes.
pub const MAX_NODES: usize = 1 << 20;

/// Samples of `μ̂(ξ₁, ξ₂, ζ₁, ζ₂, z)` on a periodic `m⁴` lattice.
///
/// Axis index `a` maps to the wavenumber `(a - m/2)·dκ`; storage is
/// row-major in `(ξ₁, ξ₂, ζ₁, ζ₂)` with `ζ₂` fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentLattice {
    pub m: usize,
    pub dkappa: f64,
    pub z: f64,
    pub values: Vec<Complex64>,
}

impl MomentLattice {
    pub fn index(&self, a: [usize; 4]) -> usize {
        ((a[0] * self.m + a[1]) * self.m + a[2]) * self.m + a[3]
    }

    pub fn unindex(&self, idx: usize) -> [usize; 4] {
        let m = self.m;
        [idx / (m * m * m), (idx / (m * m)) % m, (idx / m) % m, idx % m]
    }

    pub fn coord(&self, a: usize) -> f64 {
        (a as f64 - (self.m / 2) as f64) * self.dkappa
    }

    /// Index of the negated wavenumber on the periodic axis.
    pub fn mirror(&self, a: usize) -> usize {
        (self.m - a) % self.m
    }

    pub fn get(&self, a: [usize; 4]) -> Complex64 {
        self.values[self.index(a)]
    }

    fn transport_phase(&self, idx: usize, k0: f64) -> f64 {
        let a = self.unindex(idx);
        (self.coord(a[0]) * self.coord(a[2]) + self.coord(a[1]) * self.coord(a[3])) / k0
    }
}

fn check_size(m: usize, dkappa: f64) -> Result<()> {
    if m < 8 || !m.is_multiple_of(2) {
        return Err(Error::Configuration(format!("lattice size m must be even and >= 8, got {m}")));
    }
    if m.pow(4) > MAX_NODES {
        return Err(Error::Configuration(format!("lattice of {m}⁴ nodes exceeds the 2²⁰ memory guard")));
    }
    if !(dkappa > 0.0 && dkappa.is_finite()) {
        return Err(Error::Configuration(format!("lattice spacing must be positive, got {dkappa}")));
    }
    Ok(())
}

/// Transform of the band-limited field interpolating the mask samples:
/// the direct sum inside the Nyquist band, zero outside, half weight on
/// the band edge. Without the cut-off the lattice would see periodic
/// images of the spectrum.
fn band_limited_transform(mask: &ComplexField, k: f64) -> Complex64 {
    let nyquist = PI / mask.grid.dx();
    let excess = k.abs() - nyquist;
    if excess > 1e-12 * nyquist {
        Complex64::new(0.0, 0.0)
    } else if excess.abs() <= 1e-12 * nyquist {
        0.5 * transform_at(mask, [k, 0.0])
    } else {
        transform_at(mask, [k, 0.0])
    }
}

/// The `ζ` Nyquist planes are their own mirror images under `ζ → -ζ`, so
/// the transport phase cannot respect `μ̂(ξ,-ζ) = conj μ̂(ξ,ζ)` there; they
/// are held at zero.
fn on_zeta_edge(a: [usize; 4]) -> bool {
    a[2] == 0 || a[3] == 0
}

/// Initial condition
/// `Û((ξ₁+ξ₂+ζ₁+ζ₂)/2)·conj Û((ξ₁+ξ₂-ζ₁-ζ₂)/2)·Û((ξ₁-ξ₂+ζ₁-ζ₂)/2)·conj Û((ξ₁-ξ₂-ζ₁+ζ₂)/2)·e^{ir(ζ₂-ζ₁)}`.
///
/// `Û` is evaluated by direct summation over the mask samples (cut off at
/// the Nyquist wavenumber), so the lattice spacing is independent of the
/// mask grid.
pub fn init_lattice(mask: &ComplexField, r: f64, m: usize, dkappa: f64) -> Result<MomentLattice> {
    if mask.grid.dim() != 1 {
        return Err(Error::GridMismatch("moment lattices are one-dimensional".into()));
    }
    check_size(m, dkappa)?;
    let half = (m / 2) as i64;
    // every argument is (integer index sum)·dκ/2 with the sum in [-2m, 2m]
    let table: Vec<Complex64> = (-2 * m as i64..=2 * m as i64)
        .map(|s| band_limited_transform(mask, s as f64 * dkappa / 2.0))
        .collect();
    let u = |s: i64| table[(s + 2 * m as i64) as usize];
    let mut lat = MomentLattice {
        m,
        dkappa,
        z: 0.0,
        values: vec![Complex64::new(0.0, 0.0); m.pow(4)],
    };
    let values: Vec<Complex64> = (0..m.pow(4))
        .into_par_iter()
        .map(|idx| {
            let a = lat.unindex(idx);
            if on_zeta_edge(a) {
                return Complex64::new(0.0, 0.0);
            }
            let [x1, x2, z1, z2] = a.map(|v| v as i64 - half);
            let phase = Complex64::from_polar(1.0, r * (z2 - z1) as f64 * dkappa);
            u(x1 + x2 + z1 + z2) * u(x1 + x2 - z1 - z2).conj() * u(x1 - x2 + z1 - z2) * u(x1 - x2 - z1 + z2).conj() * phase
        })
        .collect();
    lat.values = values;
    Ok(lat)
}

/// Medium coupling used by [`evolve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coupling {
    /// The seven-term `γ̂₀`-weighted shift coupling.
    Full,
    /// Small-offset expansion `γ₀ ≈ γ₀(0) - γ̄₂|x|²/2`, which reduces the
    /// coupling to `(k₀²γ̄₂/2)∂²_{ξ₁}`.
    Quadratic,
}

/// Discretized `γ̂₀(j·dκ)·dκ/(2π)` for `|j| < m/2`.
fn shift_weights(medium: &MediumModel, m: usize, dkappa: f64) -> Result<Vec<(i64, f64)>> {
    let jmax = (m / 2) as i64 - 1;
    let mut w = Vec::new();
    for j in -jmax..=jmax {
        w.push((j, medium.spectrum_radial(j as f64 * dkappa, 1)? * dkappa / (2.0 * PI)));
    }
    let edge = medium.spectrum_radial(jmax as f64 * dkappa, 1)? / medium.spectrum_radial(0.0, 1)?;
    if edge > 1e-6 {
        return Err(Error::Configuration(format!(
            "γ̂₀ at the lattice edge is {edge:.2e} of its peak; widen the lattice (larger m·dκ)"
        )));
    }
    Ok(w)
}

struct Rhs<'a> {
    m: usize,
    k0: f64,
    coupling: Coupling,
    weights: Vec<(i64, f64)>,
    total_weight: f64,
    gamma_bar2: f64,
    dkappa: f64,
    phase: &'a [f64],
}

impl Rhs<'_> {
    /// `dν/dz` at distance `z`.
    fn eval(&self, nu: &[Complex64], z: f64, out: &mut [Complex64]) {
        let mu: Vec<Complex64> = nu
            .par_iter()
            .zip(self.phase.par_iter())
            .map(|(v, &p)| v * Complex64::from_polar(1.0, -z * p))
            .collect();
        match self.coupling {
            Coupling::Full => self.full(&mu, out),
            Coupling::Quadratic => self.quadratic(&mu, out),
        }
        let m = self.m;
        out.par_iter_mut()
            .zip(self.phase.par_iter())
            .enumerate()
            .for_each(|(i, (v, &p))| {
                if on_zeta_edge([0, 0, (i / m) % m, i % m]) {
                    *v = Complex64::new(0.0, 0.0);
                } else {
                    *v *= Complex64::from_polar(1.0, z * p);
                }
            });
    }

    fn full(&self, mu: &[Complex64], out: &mut [Complex64]) {
        let m = self.m;
        let mi = m as i64;
        let wrap = |a: usize, s: i64| (a as i64 + s).rem_euclid(mi) as usize;
        let idx = |a: [usize; 4]| ((a[0] * m + a[1]) * m + a[2]) * m + a[3];
        let c = 0.25 * self.k0 * self.k0;
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            let a = [i / (m * m * m), (i / (m * m)) % m, (i / m) % m, i % m];
            let mut acc = Complex64::new(0.0, 0.0);
            for &(j, w) in &self.weights {
                let t = mu[idx([wrap(a[0], -j), wrap(a[1], -j), a[2], a[3]])]
                    + mu[idx([wrap(a[0], -j), a[1], a[2], wrap(a[3], -j)])]
                    + mu[idx([wrap(a[0], j), wrap(a[1], -j), a[2], a[3]])]
                    + mu[idx([wrap(a[0], j), a[1], a[2], wrap(a[3], -j)])]
                    - mu[idx([a[0], wrap(a[1], -j), a[2], wrap(a[3], -j)])]
                    - mu[idx([a[0], wrap(a[1], j), a[2], wrap(a[3], -j)])];
                acc += t * w;
            }
            *o = c * (acc - 2.0 * self.total_weight * mu[i]);
        });
    }

    /// `(k₀²γ̄₂/2)∂²_{ξ₁}` by spectral differentiation along the first axis.
    fn quadratic(&self, mu: &[Complex64], out: &mut [Complex64]) {
        let m = self.m;
        let stride = m * m * m;
        let c = 0.5 * self.k0 * self.k0 * self.gamma_bar2;
        let mut planner = FftPlanner::<f64>::new();
        let fwd = planner.plan_fft_forward(m);
        let inv = planner.plan_fft_inverse(m);
        // conjugate variable of ξ₁ on the periodic axis; the Nyquist mode has
        // no symmetric second derivative and is dropped
        let dq = 2.0 * PI / (m as f64 * self.dkappa);
        let mult: Vec<f64> = (0..m)
            .map(|p| {
                if 2 * p == m {
                    return 0.0;
                }
                let q = if 2 * p < m { p as f64 } else { p as f64 - m as f64 } * dq;
                -q * q * c / m as f64
            })
            .collect();
        let cols: Vec<Vec<Complex64>> = (0..stride)
            .into_par_iter()
            .map(|col| {
                let mut line: Vec<Complex64> = (0..m).map(|a| mu[a * stride + col]).collect();
                fwd.process(&mut line);
                for (v, f) in line.iter_mut().zip(&mult) {
                    *v *= f;
                }
                inv.process(&mut line);
                line
            })
            .collect();
        for (col, line) in cols.into_iter().enumerate() {
            for (a, v) in line.into_iter().enumerate() {
                out[a * stride + col] = v;
            }
        }
    }
}

/// Advance a lattice over distance `ell` in `nz` RK4 steps.
///
/// The transport phase is integrated exactly; with a homogeneous medium
/// (`medium = None`) the result is exact for every `nz`.
pub fn evolve(
    lat: &MomentLattice,
    medium: Option<&MediumModel>,
    k0: f64,
    ell: f64,
    nz: usize,
    coupling: Coupling,
) -> Result<MomentLattice> {
    check_size(lat.m, lat.dkappa)?;
    if !(k0 > 0.0) || !(ell >= 0.0) {
        return Err(Error::Configuration(format!("need k0 > 0 and ell >= 0, got k0 = {k0}, ell = {ell}")));
    }
    let phase: Vec<f64> = (0..lat.values.len()).map(|i| lat.transport_phase(i, k0)).collect();
    let z0 = lat.z;
    // ν at the start: μ̂·e^{i z₀ φ}
    let mut nu: Vec<Complex64> = lat
        .values
        .iter()
        .zip(&phase)
        .map(|(v, &p)| v * Complex64::from_polar(1.0, z0 * p))
        .collect();
    if let Some(medium) = medium {
        if nz == 0 {
            return Err(Error::Configuration("nz must be at least 1".into()));
        }
        let weights = match coupling {
            Coupling::Full => shift_weights(medium, lat.m, lat.dkappa)?,
            Coupling::Quadratic => Vec::new(),
        };
        let total_weight = weights.iter().map(|w| w.1).sum();
        let kmax = (lat.m / 2) as f64 * lat.dkappa;
        let phase_rate = 2.0 * kmax * kmax / k0;
        let coupling_rate = match coupling {
            Coupling::Full => 2.0 * k0 * k0 * medium.gamma0_at_zero(),
            Coupling::Quadratic => {
                let qmax = PI / lat.dkappa;
                0.5 * k0 * k0 * medium.gamma_bar2() * qmax * qmax
            }
        };
        let dz = ell / nz as f64;
        if dz * (coupling_rate + phase_rate) > 2.0 {
            let need = (ell * (coupling_rate + phase_rate) / 2.0).ceil();
            return Err(Error::Configuration(format!(
                "RK4 step {dz} too large for coupling rate {coupling_rate:.3e} and phase rate {phase_rate:.3e}; use nz >= {need}"
            )));
        }
        let rhs = Rhs {
            m: lat.m,
            k0,
            coupling,
            weights,
            total_weight,
            gamma_bar2: medium.gamma_bar2(),
            phase: &phase,
            dkappa: lat.dkappa,
        };
        let n = nu.len();
        let mut k1 = vec![Complex64::new(0.0, 0.0); n];
        let mut k2 = k1.clone();
        let mut k3 = k1.clone();
        let mut k4 = k1.clone();
        let mut tmp = k1.clone();
        for step in 0..nz {
            let z = z0 + step as f64 * dz;
            rhs.eval(&nu, z, &mut k1);
            axpy(&nu, &k1, 0.5 * dz, &mut tmp);
            rhs.eval(&tmp, z + 0.5 * dz, &mut k2);
            axpy(&nu, &k2, 0.5 * dz, &mut tmp);
            rhs.eval(&tmp, z + 0.5 * dz, &mut k3);
            axpy(&nu, &k3, dz, &mut tmp);
            rhs.eval(&tmp, z + dz, &mut k4);
            nu.par_iter_mut().enumerate().for_each(|(i, v)| {
                *v += (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) * (dz / 6.0);
            });
        }
    }
    let z1 = z0 + ell;
    let values = nu
        .iter()
        .zip(&phase)
        .map(|(v, &p)| v * Complex64::from_polar(1.0, -z1 * p))
        .collect();
    Ok(MomentLattice {
        m: lat.m,
        dkappa: lat.dkappa,
        z: z1,
        values,
    })
}

fn axpy(x: &[Complex64], y: &[Complex64], a: f64, out: &mut [Complex64]) {
    out.par_iter_mut()
        .enumerate()
        .for_each(|(i, o)| *o = x[i] + y[i] * a);
}

/// `E[I(x₀)I_r(x₀')] = (2π)^{-4} Σ e^{iζ₁(x₀+x₀') + iζ₂(x₀-x₀')} μ̂ dκ⁴`.
pub fn reconstruct_second_moment(lat: &MomentLattice, x0: f64, x0p: f64) -> Result<f64> {
    let m = lat.m;
    // sum over ξ first: it only enters through q = 0
    let mut slice = vec![Complex64::new(0.0, 0.0); m * m];
    for (i, v) in lat.values.iter().enumerate() {
        slice[i % (m * m)] += v;
    }
    let mut acc = Complex64::new(0.0, 0.0);
    let mut scale = 0.0;
    for b1 in 0..m {
        for b2 in 0..m {
            let term = slice[b1 * m + b2]
                * Complex64::from_polar(1.0, lat.coord(b1) * (x0 + x0p) + lat.coord(b2) * (x0 - x0p));
            acc += term;
            scale += term.norm();
        }
    }
    let w = lat.dkappa.powi(4) / (2.0 * PI).powi(4);
    let (re, im) = (acc.re * w, acc.im * w);
    if im.abs() > 1e-6 * (scale * w).max(f64::MIN_POSITIVE) {
        return Err(Error::numerical(
            "second-moment reconstruction",
            format!("imaginary residue {im:.3e} against real part {re:.3e}"),
        ));
    }
    Ok(re)
}

/// Closed-form lattice values for the quadratic coupling (spot-dancing
/// regime):
///
/// ```text
/// μ̂(ξ₁,ξ₂,ζ₁,ζ₂,z) = ∫ μ̂₀(ξ₁',ξ₂,ζ₁,ζ₂) e^{-iz(ξ₁'ζ₁ + ξ₂ζ₂)/k₀} ψ(ξ₁ - ξ₁', ζ₁, z) dξ₁'
/// ψ(ξ,ζ,z) = (2πk₀²γ̄₂z)^{-1/2} exp(-γ̄₂z³ζ²/24 - izξζ/(2k₀) - ξ²/(2k₀²γ̄₂z))
/// ```
///
/// `μ̂₀` is evaluated at continuous `ξ₁'` from the mask transform, and the
/// `ξ₁'` integral runs over the real line by trapezoidal quadrature.
pub fn spot_dancing_moment_solution(
    mask: &ComplexField,
    r: f64,
    m: usize,
    dkappa: f64,
    k0: f64,
    gamma_bar2: f64,
    z: f64,
) -> Result<MomentLattice> {
    if mask.grid.dim() != 1 {
        return Err(Error::GridMismatch("moment lattices are one-dimensional".into()));
    }
    check_size(m, dkappa)?;
    if z == 0.0 {
        return init_lattice(mask, r, m, dkappa);
    }
    let var = k0 * k0 * gamma_bar2 * z;
    let sigma = var.sqrt();
    // trapezoid nodes ξ₁' = ξ₁ - u, u = t·δ, |u| ≤ 10σ; δ divides dκ so
    // every Û argument sits on a grid of spacing δ/2
    let sub = ((8.0 * dkappa / sigma).ceil() as i64).max(8);
    let delta = dkappa / sub as f64;
    let tmax = (10.0 * sigma / delta).ceil() as i64;
    let half = (m / 2) as i64;
    // argument (ξ₁' ± ...)/2 in units of δ/2: ξ₁' = (a₁·sub - t)δ, others lattice·sub·δ
    let smax = 4 * half * sub + tmax + sub;
    let table: Vec<Complex64> = (-smax..=smax)
        .into_par_iter()
        .map(|s| band_limited_transform(mask, s as f64 * delta / 2.0))
        .collect();
    let u = |s: i64| table[(s + smax) as usize];
    let norm = 1.0 / (2.0 * PI * var).sqrt();
    let mut lat = MomentLattice {
        m,
        dkappa,
        z,
        values: vec![Complex64::new(0.0, 0.0); m.pow(4)],
    };
    let values: Vec<Complex64> = (0..m.pow(4))
        .into_par_iter()
        .map(|idx| {
            let a = lat.unindex(idx);
            if on_zeta_edge(a) {
                return Complex64::new(0.0, 0.0);
            }
            let [x1, x2, z1, z2] = a.map(|v| v as i64 - half);
            let (zeta1, zeta2, xi2) = (z1 as f64 * dkappa, z2 as f64 * dkappa, x2 as f64 * dkappa);
            let shift = Complex64::from_polar(1.0, r * (zeta2 - zeta1));
            let damp = (-gamma_bar2 * z.powi(3) * zeta1 * zeta1 / 24.0).exp();
            let mut acc = Complex64::new(0.0, 0.0);
            for t in -tmax..=tmax {
                // ξ₁' in units of δ
                let p = x1 * sub - t;
                let uu = t as f64 * delta;
                let xi1p = p as f64 * delta;
                let (s2, s1, s3) = (x2 * sub, z1 * sub, z2 * sub);
                let mu0 = u(p + s2 + s1 + s3) * u(p + s2 - s1 - s3).conj() * u(p - s2 + s1 - s3) * u(p - s2 - s1 + s3).conj();
                let psi = (-uu * uu / (2.0 * var)).exp();
                let ph = -z * (xi1p * zeta1 + xi2 * zeta2) / k0 - z * uu * zeta1 / (2.0 * k0);
                acc += mu0 * Complex64::from_polar(psi, ph);
            }
            acc * shift * damp * norm * delta
        })
        .collect();
    lat.values = values;
    Ok(lat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TransverseGrid;

    fn gaussian_mask(n: usize, dx: f64, w: f64) -> ComplexField {
        let g = TransverseGrid::new(1, n, dx).unwrap();
        ComplexField::from_real_fn(g, |p| (-p[0] * p[0] / (2.0 * w * w)).exp())
    }

    #[test]
    fn guards() {
        let u = gaussian_mask(16, 1.0, 2.0);
        assert!(init_lattice(&u, 0.0, 6, 0.4).is_err());
        assert!(init_lattice(&u, 0.0, 64, 0.4).is_err());
    }

    #[test]
    fn initial_value_at_origin() {
        let u = gaussian_mask(16, 1.0, 2.0);
        let lat = init_lattice(&u, 0.0, 8, 0.5).unwrap();
        let u0 = transform_at(&u, [0.0, 0.0]).norm_sqr();
        assert!((lat.get([4, 4, 4, 4]).re - u0 * u0).abs() < 1e-12 * u0 * u0);
    }

    fn zeta_zero_mass(lat: &MomentLattice) -> Complex64 {
        let c = lat.m / 2;
        let mut acc = Complex64::new(0.0, 0.0);
        for a1 in 0..lat.m {
            for a2 in 0..lat.m {
                acc += lat.get([a1, a2, c, c]);
            }
        }
        acc
    }

    #[test]
    fn homogeneous_evolution_is_the_exact_transport_phase() {
        let u = gaussian_mask(16, 1.0, 2.0);
        let lat = init_lattice(&u, 1.0, 8, 0.6).unwrap();
        let out = evolve(&lat, None, 2.0, 1.5, 1, Coupling::Full).unwrap();
        for idx in 0..lat.values.len() {
            let expect = lat.values[idx] * Complex64::from_polar(1.0, -1.5 * lat.transport_phase(idx, 2.0));
            assert!((out.values[idx] - expect).norm() <= 1e-12 * lat.values[idx].norm().max(1e-300));
        }
    }

    #[test]
    fn full_coupling_conserves_zero_zeta_mass() {
        let u = gaussian_mask(16, 1.0, 2.0);
        let medium = MediumModel::gaussian(4.0, 2.0).unwrap();
        let lat = init_lattice(&u, 0.0, 8, 1.0).unwrap();
        let out = evolve(&lat, Some(&medium), 1.0, 0.5, 40, Coupling::Full).unwrap();
        let (m0, m1) = (zeta_zero_mass(&lat), zeta_zero_mass(&out));
        assert!((m0 - m1).norm() < 1e-10 * m0.norm(), "{m0} vs {m1}");
    }

    #[test]
    fn conjugation_symmetry_is_preserved() {
        // conj M(x₁,x₂,y₁,y₂) = M(y₁,y₂,x₁,x₂), i.e. q → -q, so
        // μ̂(ξ, -ζ) = conj μ̂(ξ, ζ) for any mask
        let g = TransverseGrid::new(1, 16, 1.0).unwrap();
        let u = ComplexField::from_fn(g, |p| Complex64::from_polar((-p[0] * p[0] / 8.0).exp(), 0.3 * p[0]));
        let medium = MediumModel::gaussian(4.0, 2.0).unwrap();
        let lat = init_lattice(&u, 1.0, 8, 1.0).unwrap();
        let out = evolve(&lat, Some(&medium), 1.0, 0.5, 40, Coupling::Full).unwrap();
        let peak = out.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for idx in 0..out.values.len() {
            let a = out.unindex(idx);
            let b = [a[0], a[1], out.mirror(a[2]), out.mirror(a[3])];
            let d = (out.get(b) - out.values[idx].conj()).norm();
            assert!(d < 1e-12 * peak, "{a:?}: {d:.3e} against {peak:.3e}");
        }
    }

    #[test]
    fn rk4_is_fourth_order() {
        let u = gaussian_mask(16, 1.0, 2.0);
        let medium = MediumModel::gaussian(4.0, 2.0).unwrap();
        let lat = init_lattice(&u, 0.5, 8, 1.0).unwrap();
        let reference = evolve(&lat, Some(&medium), 1.0, 0.5, 320, Coupling::Full).unwrap();
        let err = |nz| {
            let out = evolve(&lat, Some(&medium), 1.0, 0.5, nz, Coupling::Full).unwrap();
            out.values.iter().zip(&reference.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
        };
        let (e1, e2) = (err(20), err(40));
        let order = (e1 / e2).log2();
        assert!((3.6..4.4).contains(&order), "observed order {order} ({e1:.3e}, {e2:.3e})");
    }

    #[test]
    fn too_few_steps_is_a_configuration_error() {
        let u = gaussian_mask(16, 1.0, 2.0);
        let medium = MediumModel::gaussian(400.0, 2.0).unwrap();
        let lat = init_lattice(&u, 0.0, 8, 1.0).unwrap();
        assert!(matches!(
            evolve(&lat, Some(&medium), 1.0, 1.0, 2, Coupling::Full),
            Err(Error::Configuration(_))
        ));
    }

    #[test]
    fn initial_lattice_reconstructs_the_intensity_product() {
        let u = gaussian_mask(16, 1.0, 2.0);
        let lat = init_lattice(&u, 1.0, 16, 2.0 * PI / 16.0).unwrap();
        let i = |x: f64| (-x * x / 4.0).exp();
        for (x0, x0p) in [(0.0, 0.0), (1.0, -2.0), (2.0, 1.0)] {
            let got = reconstruct_second_moment(&lat, x0, x0p).unwrap();
            let want = i(x0) * i(x0p - 1.0);
            assert!((got - want).abs() < 0.02 * want, "{got} vs {want}");
        }
    }

    #[test]
    fn quadratic_coupling_matches_the_psi_solution() {
        let u = gaussian_mask(16, 1.0, 2.0);
        let dk = 2.0 * PI / 16.0;
        let (k0, z) = (1.0, 1.0);
        let medium = MediumModel::gaussian(1.0, 2.0).unwrap();
        let lat = init_lattice(&u, 0.0, 16, dk).unwrap();
        let num = evolve(&lat, Some(&medium), k0, z, 200, Coupling::Quadratic).unwrap();
        let exact = spot_dancing_moment_solution(&u, 0.0, 16, dk, k0, medium.gamma_bar2(), z).unwrap();
        let peak = exact.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let worst = num.values.iter().zip(&exact.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(worst < 0.02 * peak, "deviation {worst:.3e} against peak {peak:.3e}");
    }

    #[test]
    fn heat_kernel_limit_at_zero_zeta() {
        // at ζ₁ = 0 the kernel is a normalized Gaussian in ξ
        let var: f64 = 0.3;
        let total: f64 = (-400..=400)
            .map(|i| {
                let x = i as f64 * 0.01;
                (-x * x / (2.0 * var)).exp() / (2.0 * PI * var).sqrt() * 0.01
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-10);
    }
}
