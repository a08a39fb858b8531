//! Statistics of the random medium and synthesis of phase-screen increments.
//!
//! The medium enters the paraxial model only through the transverse
//! covariance `γ₀(x)` of the Brownian field `B(x, z)`:
//! `E[B(x,z) B(x',z')] = γ₀(x - x')·min(z, z')`. All covariances are
//! isotropic, so a model is a radial profile `γ₀(|x|)`.
//!
//! The Gaussian family `γ₀(x) = γ₀(0)·exp(-|x|²/(2ℓ_c²))` is the default.
//! It is a modelling choice: any smooth profile with a finite curvature
//! `γ̄₂` at the origin is admissible, and tabulated profiles can be loaded
//! for sensitivity studies.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{fft_in_place, Point, RealField, TransverseGrid};
use crate::quad;

/// Radial samples of a tabulated covariance profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    offsets: Vec<f64>,
    values: Vec<f64>,
}

impl Table {
    pub fn new(offsets: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if offsets.len() != values.len() || offsets.len() < 3 {
            return Err(Error::InvalidModel(
                "tabulated profile needs at least three (offset, value) rows".into(),
            ));
        }
        if offsets[0] != 0.0 {
            return Err(Error::InvalidModel("first tabulated offset must be 0".into()));
        }
        if offsets.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidModel("tabulated offsets must be strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("tabulated values must be finite".into()));
        }
        if values.iter().any(|&v| v > values[0]) {
            return Err(Error::InvalidModel("covariance profile must peak at the origin".into()));
        }
        Ok(Self { offsets, values })
    }

    pub fn max_offset(&self) -> f64 {
        *self.offsets.last().unwrap()
    }

    /// Piecewise-linear interpolation in `r²`, which keeps the profile even
    /// and differentiable at the origin.
    fn eval(&self, r: f64) -> Result<f64> {
        let max = self.max_offset();
        if r > max * (1.0 + 1e-12) {
            return Err(Error::OutOfRange { value: r, max });
        }
        let s = r * r;
        let i = self.offsets.partition_point(|&o| o * o <= s).clamp(1, self.offsets.len() - 1);
        let (s0, s1) = (self.offsets[i - 1].powi(2), self.offsets[i].powi(2));
        let t = ((s - s0) / (s1 - s0)).clamp(0.0, 1.0);
        Ok(self.values[i - 1] * (1.0 - t) + self.values[i] * t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MediumKind {
    Gaussian,
    Tabulated { table: Table },
}

/// Transverse covariance model of the medium.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediumModel {
    pub kind: MediumKind,
    gamma0_at_zero: f64,
    corr_length: f64,
}

impl MediumModel {
    pub fn gaussian(gamma0_at_zero: f64, corr_length: f64) -> Result<Self> {
        if !(gamma0_at_zero > 0.0 && gamma0_at_zero.is_finite()) {
            return Err(Error::InvalidModel(format!("γ₀(0) must be positive, got {gamma0_at_zero}")));
        }
        if !(corr_length > 0.0 && corr_length.is_finite()) {
            return Err(Error::InvalidModel(format!("correlation length must be positive, got {corr_length}")));
        }
        Ok(Self {
            kind: MediumKind::Gaussian,
            gamma0_at_zero,
            corr_length,
        })
    }

    /// Tabulated radial profile. The correlation length is defined through
    /// the curvature as `ℓ_c = sqrt(γ₀(0)/γ̄₂)`, which coincides with the
    /// Gaussian parameter for Gaussian data.
    pub fn tabulated(table: Table) -> Result<Self> {
        let g0 = table.values[0];
        if !(g0 > 0.0) {
            return Err(Error::InvalidModel(format!("γ₀(0) must be positive, got {g0}")));
        }
        let h = table.offsets[1];
        let curvature = 2.0 * (g0 - table.values[1]) / (h * h);
        if !(curvature > 0.0) {
            return Err(Error::InvalidModel("profile must decrease away from the origin".into()));
        }
        Ok(Self {
            corr_length: (g0 / curvature).sqrt(),
            gamma0_at_zero: g0,
            kind: MediumKind::Tabulated { table },
        })
    }

    /// Load a two-column `(offset, value)` CSV profile; a header row is allowed.
    pub fn tabulated_from_csv(path: &Path) -> Result<Self> {
        let shown = path.display().to_string();
        let file = std::fs::File::open(path).map_err(|e| Error::io(&shown, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(file);
        let (mut offsets, mut values) = (Vec::new(), Vec::new());
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::Format { path: shown.clone(), detail: e.to_string() })?;
            if rec.len() != 2 {
                return Err(Error::Format {
                    path: shown,
                    detail: format!("row {} has {} columns, expected 2", line + 1, rec.len()),
                });
            }
            let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
            match parsed {
                Ok(v) => {
                    offsets.push(v[0]);
                    values.push(v[1]);
                }
                Err(_) if line == 0 => continue,
                Err(e) => {
                    return Err(Error::Format {
                        path: shown,
                        detail: format!("row {}: {e}", line + 1),
                    })
                }
            }
        }
        Self::tabulated(Table::new(offsets, values)?)
    }

    pub fn gamma0_at_zero(&self) -> f64 {
        self.gamma0_at_zero
    }

    pub fn corr_length(&self) -> f64 {
        self.corr_length
    }

    /// Copy of the model with `γ₀` scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        match &self.kind {
            MediumKind::Gaussian => Self::gaussian(self.gamma0_at_zero * factor, self.corr_length),
            MediumKind::Tabulated { table } => Self::tabulated(Table::new(
                table.offsets.clone(),
                table.values.iter().map(|v| v * factor).collect(),
            )?),
        }
    }

    /// `γ₀` as a function of distance.
    pub fn gamma0_radial(&self, r: f64) -> Result<f64> {
        match &self.kind {
            MediumKind::Gaussian => {
                let a = r / self.corr_length;
                Ok(self.gamma0_at_zero * (-0.5 * a * a).exp())
            }
            MediumKind::Tabulated { table } => table.eval(r.abs()),
        }
    }

    /// `γ₀` with tabulated profiles extended by zero past their last offset.
    pub(crate) fn gamma0_or_zero(&self, r: f64) -> f64 {
        self.gamma0_radial(r).unwrap_or(0.0)
    }

    pub fn gamma0_at(&self, x: Point) -> Result<f64> {
        self.gamma0_radial(x[0].hypot(x[1]))
    }

    /// Curvature `γ̄₂` in `γ₀(x) = γ₀(0) - γ̄₂|x|²/2 + O(|x|⁴)`.
    pub fn gamma_bar2(&self) -> f64 {
        self.gamma0_at_zero / (self.corr_length * self.corr_length)
    }

    /// Structure function `γ₂(x) = ∫₀¹ γ₀(0) - γ₀(xs) ds`, by adaptive quadrature.
    pub fn gamma2_radial(&self, r: f64) -> Result<f64> {
        let r = r.abs();
        if r == 0.0 {
            return Ok(0.0);
        }
        let g0 = self.gamma0_at_zero;
        let v = quad::integrate(|s| g0 - self.gamma0_or_zero(r * s), 0.0, 1.0, 1e-12)?;
        Ok(v.max(0.0))
    }

    pub fn gamma2_at(&self, x: Point) -> Result<f64> {
        self.gamma2_radial(x[0].hypot(x[1]))
    }

    /// `γ̂₀(k) = ∫ γ₀(x) e^{-ik·x} dx` in `dim` transverse dimensions.
    pub fn spectrum(&self, k: Point, dim: usize) -> Result<f64> {
        let kk = if dim == 1 { k[0].abs() } else { k[0].hypot(k[1]) };
        self.spectrum_radial(kk, dim)
    }

    pub fn spectrum_radial(&self, k: f64, dim: usize) -> Result<f64> {
        let lc = self.corr_length;
        match &self.kind {
            MediumKind::Gaussian => Ok(self.gamma0_at_zero
                * (2.0 * PI * lc * lc).powf(dim as f64 / 2.0)
                * (-0.5 * k * k * lc * lc).exp()),
            MediumKind::Tabulated { table } => {
                let rmax = table.max_offset();
                let pieces = ((k * rmax / PI).ceil() as usize + 1).min(4096) * 4;
                let v = if dim == 1 {
                    2.0 * quad::integrate_panels(|x| self.gamma0_or_zero(x) * (k * x).cos(), 0.0, rmax, pieces, 1e-12)?
                } else {
                    2.0 * PI
                        * quad::integrate_panels(|x| self.gamma0_or_zero(x) * libm::j0(k * x) * x, 0.0, rmax, pieces, 1e-12)?
                };
                let scale = self.gamma0_at_zero * rmax.powi(dim as i32);
                if v < -1e-9 * scale {
                    return Err(Error::InvalidModel(format!(
                        "negative spectral density {v:.3e} at |k| = {k}; profile is not a covariance"
                    )));
                }
                Ok(v.max(0.0))
            }
        }
    }

    /// Precompute the spectral amplitudes used to draw increments on `grid`
    /// over a slab of thickness `dz`.
    pub fn screen_synthesizer(&self, grid: &TransverseGrid, dz: f64) -> Result<ScreenSynthesizer> {
        if !(dz > 0.0 && dz.is_finite()) {
            return Err(Error::Precondition(format!("slab thickness must be positive, got {dz}")));
        }
        let box_len = grid.box_len();
        if box_len < 8.0 * self.corr_length {
            return Err(Error::Configuration(format!(
                "grid box {box_len} is shorter than 8 correlation lengths ({})",
                8.0 * self.corr_length
            )));
        }
        if let MediumKind::Tabulated { table } = &self.kind {
            if 2.0 * table.max_offset() > box_len {
                log::warn!("tabulated covariance extends beyond half the grid box; periodization will alias it");
            }
        }
        let weight = dz / box_len.powi(grid.dim() as i32);
        let mut cache: Vec<(f64, f64)> = Vec::new();
        let mut amp = Vec::with_capacity(grid.len());
        for m in 0..grid.len() {
            let k = grid.wavevector(m);
            let kk = k[0].hypot(k[1]);
            // isotropic: many slots share |k|, so memoize on the radius
            let s = match cache.iter().find(|(r, _)| (*r - kk).abs() <= 1e-12 * kk.max(1.0)) {
                Some(&(_, s)) => s,
                None => {
                    let s = self.spectrum_radial(kk, grid.dim())?;
                    if cache.len() < 4096 {
                        cache.push((kk, s));
                    }
                    s
                }
            };
            amp.push((s * weight).sqrt());
        }
        let partner = (0..grid.len())
            .map(|m| {
                let [i, j] = grid.unflatten(m);
                let n = grid.n();
                grid.flatten([(n - i) % n, (n - j) % n])
            })
            .collect();
        Ok(ScreenSynthesizer {
            grid: *grid,
            dz,
            amp,
            partner,
        })
    }

    /// One Brownian increment `ΔB` over a slab of thickness `dz`.
    pub fn synthesize_increment<R: Rng + ?Sized>(
        &self,
        grid: &TransverseGrid,
        dz: f64,
        rng: &mut R,
    ) -> Result<RealField> {
        Ok(self.screen_synthesizer(grid, dz)?.draw(rng))
    }
}

/// Cached spectral amplitudes `sqrt(γ̂₀(k_m)·dz/(n·dx)^d)` for repeated draws.
#[derive(Debug, Clone)]
pub struct ScreenSynthesizer {
    grid: TransverseGrid,
    dz: f64,
    amp: Vec<f64>,
    partner: Vec<usize>,
}

impl ScreenSynthesizer {
    pub fn grid(&self) -> &TransverseGrid {
        &self.grid
    }

    pub fn dz(&self) -> f64 {
        self.dz
    }

    /// Draw a real, mean-zero field with periodized covariance `γ₀(x-x')·dz`.
    ///
    /// Spectral coefficients are drawn in slot order; each conjugate pair
    /// `(m, -m)` consumes one complex normal at its lower slot, and
    /// self-conjugate slots (zero and Nyquist) consume one real normal.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> RealField {
        let g = self.grid;
        let mut coef = vec![Complex64::new(0.0, 0.0); g.len()];
        let half = std::f64::consts::FRAC_1_SQRT_2;
        for m in 0..g.len() {
            let p = self.partner[m];
            if p < m {
                continue;
            }
            let a = self.amp[m];
            if p == m {
                let w: f64 = rng.sample(StandardNormal);
                coef[m] = Complex64::new(a * w, 0.0);
            } else {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                let c = Complex64::new(a * half * re, a * half * im);
                coef[m] = c;
                coef[p] = c.conj();
            }
        }
        // centred grid: e^{ik_m x_j} = (-1)^m e^{2πi mj/n}
        for (m, c) in coef.iter_mut().enumerate() {
            let [i, j] = g.unflatten(m);
            if (i + j) % 2 == 1 {
                *c = -*c;
            }
        }
        fft_in_place(&g, &mut coef, true);
        let scale = coef.iter().map(|c| c.re.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        debug_assert!(
            coef.iter().all(|c| c.im.abs() <= 1e-12 * scale),
            "Hermitian symmetrization left an imaginary residue"
        );
        RealField {
            grid: g,
            values: coef.into_iter().map(|c| c.re).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;

    fn erf_gamma2(g0: f64, lc: f64, r: f64) -> f64 {
        let a = r / lc;
        g0 * (1.0 - (PI / 2.0).sqrt() / a * libm::erf(a / 2f64.sqrt()))
    }

    #[test]
    fn gaussian_gamma0_values() {
        let m = MediumModel::gaussian(2.0, 1.0).unwrap();
        assert_eq!(m.gamma0_at([0.0, 0.0]).unwrap(), 2.0);
        assert!((m.gamma0_at([1.0, 0.0]).unwrap() - 1.21306).abs() < 1e-5);
        assert!((m.gamma0_at([0.6, 0.8]).unwrap() - 1.21306).abs() < 1e-5);
    }

    #[test]
    fn taylor_remainder_is_quartic() {
        let m = MediumModel::gaussian(1.7, 0.8).unwrap();
        let gb = m.gamma_bar2();
        let mut worst: f64 = 0.0;
        for i in 1..=50 {
            let r = 0.2 * i as f64 / 50.0; // up to ℓ_c/4
            let resid = (m.gamma0_radial(r).unwrap() - 1.7 + 0.5 * gb * r * r).abs();
            worst = worst.max(resid / r.powi(4));
        }
        // bound: γ₀(0)/(8ℓ_c⁴)
        assert!(worst <= 1.7 / (8.0 * 0.8f64.powi(4)) * 1.0001);
    }

    #[test]
    fn gamma2_matches_error_function_form() {
        let m = MediumModel::gaussian(1.0, 1.0).unwrap();
        assert_eq!(m.gamma2_radial(0.0).unwrap(), 0.0);
        let v = m.gamma2_radial(2.0).unwrap();
        assert!((v - erf_gamma2(1.0, 1.0, 2.0)).abs() < 1e-10);
        assert!((v - 0.401856).abs() < 1e-6);
        let small = m.gamma2_radial(0.1).unwrap();
        assert!((small / (m.gamma_bar2() * 0.01 / 6.0) - 1.0).abs() < 0.01);
    }

    #[test]
    fn gamma2_is_monotone_and_bounded() {
        let m = MediumModel::gaussian(3.0, 0.5).unwrap();
        let mut prev = 0.0;
        for i in 1..200 {
            let v = m.gamma2_radial(0.05 * i as f64).unwrap();
            assert!(v + 1e-12 >= prev && v <= 3.0);
            prev = v;
        }
    }

    #[test]
    fn gaussian_spectrum_values() {
        let m = MediumModel::gaussian(1.0, 1.0).unwrap();
        assert!((m.spectrum([0.0, 0.0], 1).unwrap() - (2.0 * PI).sqrt()).abs() < 1e-12);
        let tail = m.spectrum([10.0, 0.0], 1).unwrap();
        assert!(tail < 1e-20 * m.spectrum([0.0, 0.0], 1).unwrap());
        let total = quad::integrate(|k| m.spectrum([k, 0.0], 1).unwrap(), -40.0, 40.0, 1e-12).unwrap() / (2.0 * PI);
        assert!((total - 1.0).abs() < 1e-8);
    }

    #[test]
    fn tabulated_reproduces_gaussian() {
        let g = MediumModel::gaussian(1.5, 1.0).unwrap();
        let offsets: Vec<f64> = (0..=800).map(|i| i as f64 * 0.01).collect();
        let values = offsets.iter().map(|&r| g.gamma0_radial(r).unwrap()).collect();
        let t = MediumModel::tabulated(Table::new(offsets, values).unwrap()).unwrap();
        assert!((t.corr_length() - 1.0).abs() < 1e-3);
        for dim in [1, 2] {
            for k in [0.0, 0.5, 1.5, 3.0] {
                let a = g.spectrum_radial(k, dim).unwrap();
                let b = t.spectrum_radial(k, dim).unwrap();
                assert!((a - b).abs() < 1e-4 * g.spectrum_radial(0.0, dim).unwrap(), "dim {dim} k {k}: {a} vs {b}");
            }
        }
        assert!(matches!(t.gamma0_radial(9.0), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn non_positive_definite_table_is_rejected() {
        // a box profile has a sinc spectrum with negative lobes
        let offsets: Vec<f64> = (0..=100).map(|i| i as f64 * 0.05).collect();
        let values = offsets.iter().map(|&r| if r <= 1.0 { 1.0 - 1e-3 * r * r } else { 0.0 }).collect();
        let t = MediumModel::tabulated(Table::new(offsets, values).unwrap()).unwrap();
        let any_negative = (1..60).any(|i| t.spectrum_radial(0.1 * i as f64, 1).is_err());
        assert!(any_negative);
    }

    #[test]
    fn small_box_is_a_configuration_error() {
        let m = MediumModel::gaussian(1.0, 1.0).unwrap();
        let g = TransverseGrid::new(1, 64, 0.1).unwrap();
        assert!(matches!(m.screen_synthesizer(&g, 0.1), Err(Error::Configuration(_))));
    }

    #[test]
    fn increments_are_real_and_have_the_right_variance() {
        let m = MediumModel::gaussian(1.0, 1.0).unwrap();
        let g = TransverseGrid::new(1, 64, 0.25).unwrap();
        let synth = m.screen_synthesizer(&g, 0.01).unwrap();
        let tree = SeedTree::new(11);
        let draws = 20_000;
        let (mut s, mut s2, mut lag) = (0.0, 0.0, 0.0);
        for r in 0..draws {
            let f = synth.draw(&mut tree.realization(r).screen(0));
            let v = f.values[32];
            s += v;
            s2 += v * v;
            lag += v * f.values[36];
        }
        let d = draws as f64;
        assert!((s / d).abs() < 4.0 * (0.01 / d).sqrt());
        assert!((s2 / d / 0.01 - 1.0).abs() < 0.05);
        let expected = m.gamma0_radial(1.0).unwrap() * 0.01;
        assert!((lag / d - expected).abs() < 4.0 * 0.01 * (2.0 / d).sqrt());
    }
}
