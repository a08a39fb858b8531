//! Transverse grids, sampled fields and the continuous Fourier convention.
//!
//! Nodes sit at `x_j = (j - n/2)·dx`, so the origin is node `n/2` on every
//! axis. Two-dimensional data is stored row-major with the `x` index
//! running fastest (`flat = iy·n + ix`).
//!
//! The transform pair approximates
//!
//! ```text
//! Û(k) = ∫ U(x) e^{-ik·x} dx,     U(x) = (2π)^{-d} ∫ Û(k) e^{ik·x} dk
//! ```
//!
//! Spectral samples are kept in FFT order: spectral index `m` holds
//! `k_m = m·dk` for `m < n/2` and `(m - n)·dk` otherwise. Because the
//! spatial grid is centred, the discrete sum picks up a `(-1)^m` factor per
//! axis on top of the `dx^d` weight.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point or wavevector. The second component is ignored when `d = 1`.
pub type Point = [f64; 2];

/// Uniform periodic grid on the transverse plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransverseGrid {
    dim: usize,
    n: usize,
    dx: f64,
}

impl TransverseGrid {
    pub fn new(dim: usize, n: usize, dx: f64) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidGrid(format!("dimension must be 1 or 2, got {dim}")));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!("n must be a power of two >= 8, got {n}")));
        }
        if !(dx > 0.0 && dx.is_finite()) {
            return Err(Error::InvalidGrid(format!("dx must be positive and finite, got {dx}")));
        }
        Ok(Self { dim, n, dx })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// Number of nodes, `n^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Spectral spacing `2π/(n·dx)`.
    pub fn dk(&self) -> f64 {
        2.0 * PI / (self.n as f64 * self.dx)
    }

    /// Side length of the periodic box.
    pub fn box_len(&self) -> f64 {
        self.n as f64 * self.dx
    }

    /// `dx^d`.
    pub fn cell(&self) -> f64 {
        self.dx.powi(self.dim as i32)
    }

    /// `dk^d / (2π)^d`.
    pub fn spectral_cell(&self) -> f64 {
        (self.dk() / (2.0 * PI)).powi(self.dim as i32)
    }

    pub fn coord(&self, j: usize) -> f64 {
        (j as f64 - (self.n / 2) as f64) * self.dx
    }

    /// Signed spectral index of FFT slot `m`.
    pub fn freq_index(&self, m: usize) -> i64 {
        if m < self.n / 2 {
            m as i64
        } else {
            m as i64 - self.n as i64
        }
    }

    pub fn wavenumber(&self, m: usize) -> f64 {
        self.freq_index(m) as f64 * self.dk()
    }

    /// Per-axis indices of a flat node index.
    pub fn unflatten(&self, flat: usize) -> [usize; 2] {
        if self.dim == 1 {
            [flat, 0]
        } else {
            [flat % self.n, flat / self.n]
        }
    }

    pub fn flatten(&self, idx: [usize; 2]) -> usize {
        if self.dim == 1 {
            idx[0]
        } else {
            idx[1] * self.n + idx[0]
        }
    }

    pub fn point(&self, flat: usize) -> Point {
        let [i, j] = self.unflatten(flat);
        if self.dim == 1 {
            [self.coord(i), 0.0]
        } else {
            [self.coord(i), self.coord(j)]
        }
    }

    pub fn wavevector(&self, flat: usize) -> Point {
        let [i, j] = self.unflatten(flat);
        if self.dim == 1 {
            [self.wavenumber(i), 0.0]
        } else {
            [self.wavenumber(i), self.wavenumber(j)]
        }
    }

    /// `(-1)^{m_x + m_y}` for the spectral slot `flat`.
    fn centring_sign(&self, flat: usize) -> f64 {
        let [i, j] = self.unflatten(flat);
        if (i + j) % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Convert a physical vector to whole grid steps, rejecting misaligned input.
    pub fn steps_of(&self, r: Point) -> Result<[i64; 2]> {
        let mut out = [0i64; 2];
        for axis in 0..self.dim {
            let s = r[axis] / self.dx;
            let rounded = s.round();
            if (s - rounded).abs() > 1e-9 * s.abs().max(1.0) {
                return Err(Error::Precondition(format!(
                    "shift component {} is not an integer multiple of dx = {}",
                    r[axis], self.dx
                )));
            }
            out[axis] = rounded as i64;
        }
        if self.dim == 1 && r[1] != 0.0 {
            return Err(Error::Precondition("second shift component must be 0 when d = 1".into()));
        }
        Ok(out)
    }

    pub fn ensure_same(&self, other: &TransverseGrid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!(
                "(d={}, n={}, dx={}) vs (d={}, n={}, dx={})",
                self.dim, self.n, self.dx, other.dim, other.n, other.dx
            )));
        }
        Ok(())
    }

    /// Apply `f` to every node point and collect the results.
    pub fn sample<T, F: Fn(Point) -> T>(&self, f: F) -> Vec<T> {
        (0..self.len()).map(|i| f(self.point(i))).collect()
    }
}

/// Complex samples on a grid (either a field or its spectrum).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexField {
    pub grid: TransverseGrid,
    pub values: Vec<Complex64>,
}

impl ComplexField {
    pub fn new(grid: TransverseGrid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: TransverseGrid) -> Self {
        Self {
            grid,
            values: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn from_fn<F: Fn(Point) -> Complex64>(grid: TransverseGrid, f: F) -> Self {
        Self {
            grid,
            values: grid.sample(f),
        }
    }

    pub fn from_real_fn<F: Fn(Point) -> f64>(grid: TransverseGrid, f: F) -> Self {
        Self::from_fn(grid, |p| Complex64::new(f(p), 0.0))
    }

    pub fn intensity(&self) -> RealField {
        RealField {
            grid: self.grid,
            values: self.values.iter().map(|v| v.norm_sqr()).collect(),
        }
    }

    /// Circular roll by whole grid steps: `out(x) = self(x - steps·dx)`.
    pub fn rolled(&self, steps: [i64; 2]) -> Self {
        Self {
            grid: self.grid,
            values: roll(&self.grid, &self.values, steps),
        }
    }

    /// L² norm with Riemann weights.
    pub fn norm(&self) -> f64 {
        energy(self).sqrt()
    }
}

/// Real samples on a grid (intensities, phase screens).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealField {
    pub grid: TransverseGrid,
    pub values: Vec<f64>,
}

impl RealField {
    pub fn new(grid: TransverseGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn rolled(&self, steps: [i64; 2]) -> Self {
        Self {
            grid: self.grid,
            values: roll(&self.grid, &self.values, steps),
        }
    }

    pub fn to_complex(&self) -> ComplexField {
        ComplexField {
            grid: self.grid,
            values: self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }

    /// Riemann-sum integral.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell()
    }
}

fn roll<T: Copy>(grid: &TransverseGrid, values: &[T], steps: [i64; 2]) -> Vec<T> {
    let n = grid.n as i64;
    let sx = steps[0].rem_euclid(n) as usize;
    let sy = if grid.dim == 2 { steps[1].rem_euclid(n) as usize } else { 0 };
    let mut out = values.to_vec();
    for (flat, slot) in out.iter_mut().enumerate() {
        let [i, j] = grid.unflatten(flat);
        let src = grid.flatten([(i + grid.n - sx) % grid.n, (j + grid.n - sy) % grid.n]);
        *slot = values[src];
    }
    out
}

/// Riemann sum `Σ|U|²·dx^d`.
pub fn energy(f: &ComplexField) -> f64 {
    f.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * f.grid.cell()
}

/// Spectral energy `(2π)^{-d} Σ|Û|²·dk^d`; equals [`energy`] by Parseval.
pub fn spectral_energy(spec: &ComplexField) -> f64 {
    spec.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * spec.grid.spectral_cell()
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

/// Unnormalized in-place DFT over all axes of `grid`.
///
/// `inverse = false` uses `e^{-2πi mj/n}`, `inverse = true` uses the
/// conjugate kernel; no scaling is applied in either direction.
pub fn fft_in_place(grid: &TransverseGrid, data: &mut [Complex64], inverse: bool) {
    debug_assert_eq!(data.len(), grid.len());
    let n = grid.n;
    let fft = plan(n, inverse);
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    fft.process_with_scratch(data, &mut scratch);
    if grid.dim == 2 {
        let mut t = vec![Complex64::new(0.0, 0.0); data.len()];
        transpose(data, &mut t, n);
        fft.process_with_scratch(&mut t, &mut scratch);
        transpose(&t, data, n);
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], n: usize) {
    const B: usize = 32;
    for ib in (0..n).step_by(B) {
        for jb in (0..n).step_by(B) {
            for i in ib..(ib + B).min(n) {
                for j in jb..(jb + B).min(n) {
                    dst[j * n + i] = src[i * n + j];
                }
            }
        }
    }
}

/// Continuous-convention forward transform; the result lives on the dual
/// grid in FFT order.
pub fn forward_transform(f: &ComplexField) -> ComplexField {
    let g = f.grid;
    let mut data = f.values.clone();
    fft_in_place(&g, &mut data, false);
    let w = g.cell();
    for (m, v) in data.iter_mut().enumerate() {
        *v *= w * g.centring_sign(m);
    }
    ComplexField { grid: g, values: data }
}

/// Inverse of [`forward_transform`].
pub fn inverse_transform(spec: &ComplexField) -> ComplexField {
    let g = spec.grid;
    let mut data: Vec<Complex64> = spec
        .values
        .iter()
        .enumerate()
        .map(|(m, v)| v * g.centring_sign(m))
        .collect();
    fft_in_place(&g, &mut data, true);
    let w = (1.0 / g.box_len()).powi(g.dim as i32);
    for v in data.iter_mut() {
        *v *= w;
    }
    ComplexField { grid: g, values: data }
}

/// `Û(k)` at an arbitrary wavevector by direct Riemann summation.
pub fn transform_at(f: &ComplexField, k: Point) -> Complex64 {
    let g = f.grid;
    let mut acc = Complex64::new(0.0, 0.0);
    for (i, v) in f.values.iter().enumerate() {
        if v.re == 0.0 && v.im == 0.0 {
            continue;
        }
        let p = g.point(i);
        let phase = -(k[0] * p[0] + k[1] * p[1]);
        acc += v * Complex64::from_polar(1.0, phase);
    }
    acc * g.cell()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g1(n: usize, dx: f64) -> TransverseGrid {
        TransverseGrid::new(1, n, dx).unwrap()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(TransverseGrid::new(3, 64, 1.0).is_err());
        assert!(TransverseGrid::new(1, 4, 1.0).is_err());
        assert!(TransverseGrid::new(1, 48, 1.0).is_err());
        assert!(TransverseGrid::new(2, 64, 0.0).is_err());
    }

    #[test]
    fn delta_has_flat_spectrum() {
        for dim in [1, 2] {
            let g = TransverseGrid::new(dim, 16, 0.25).unwrap();
            let mut f = ComplexField::zeros(g);
            let origin = g.flatten([8, 8]);
            f.values[origin] = Complex64::new(1.0 / g.cell(), 0.0);
            let s = forward_transform(&f);
            for v in &s.values {
                assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn round_trip() {
        let g = TransverseGrid::new(2, 32, 0.3).unwrap();
        let f = ComplexField::from_fn(g, |p| Complex64::new((p[0] * 1.3).sin() + p[1], (p[1] * 0.7).cos()));
        let back = inverse_transform(&forward_transform(&f));
        let scale = f.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for (a, b) in f.values.iter().zip(&back.values) {
            assert!((a - b).norm() < 1e-12 * scale);
        }
    }

    #[test]
    fn gaussian_transform_matches_closed_form() {
        let g = g1(256, 0.1);
        let f = ComplexField::from_real_fn(g, |p| (-p[0] * p[0] / 2.0).exp());
        let s = forward_transform(&f);
        for m in 0..g.n() {
            let k = g.wavenumber(m);
            if k.abs() < 5.0 {
                let exact = (2.0 * PI).sqrt() * (-k * k / 2.0).exp();
                assert!((s.values[m] - Complex64::new(exact, 0.0)).norm() / exact < 1e-8);
            }
        }
    }

    #[test]
    fn energy_examples() {
        let g = g1(256, 1.0 / 64.0);
        assert_eq!(energy(&ComplexField::zeros(g)), 0.0);
        let rect = ComplexField::from_real_fn(g, |p| if p[0].abs() < 0.5 { 1.0 } else { 0.0 });
        assert!((energy(&rect) - 1.0).abs() <= g.dx());
        let g = g1(256, 0.1);
        let gauss = ComplexField::from_real_fn(g, |p| (-p[0] * p[0] / 2.0).exp());
        assert!((energy(&gauss) - PI.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn direct_transform_agrees_with_fft() {
        let g = TransverseGrid::new(2, 16, 0.5).unwrap();
        let f = ComplexField::from_real_fn(g, |p| (-(p[0] * p[0] + 2.0 * p[1] * p[1]) / 3.0).exp() * (1.0 + p[0]));
        let s = forward_transform(&f);
        for m in [0, 5, 37, 200] {
            let direct = transform_at(&f, g.wavevector(m));
            assert!((direct - s.values[m]).norm() < 1e-12);
        }
    }

    #[test]
    fn steps_of_requires_alignment() {
        let g = g1(64, 0.25);
        assert_eq!(g.steps_of([0.75, 0.0]).unwrap(), [3, 0]);
        assert!(g.steps_of([0.3, 0.0]).is_err());
    }
}
