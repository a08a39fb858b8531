//! Split-step spectral integration of the paraxial random wave equation
//!
//! ```text
//! 2ik₀ dφ + Δφ dz + k₀² φ ∘ dB = 0
//! ```
//!
//! with `B` a Brownian field of transverse covariance `γ₀`. Each step of
//! thickness `dz` applies diffraction `exp(-i|k|²dz/(2k₀))` in the spectral
//! domain and the phase screen `exp(i(k₀/2)ΔB)` in real space; Strang
//! splitting sandwiches the screen between two half diffractions. The
//! screen is exactly unitary and realizes the Stratonovich product, so no
//! drift correction is added. The carrier `e^{ik₀z}` is dropped.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{fft_in_place, ComplexField, Point, RealField, TransverseGrid};
use crate::medium::{MediumModel, ScreenSynthesizer};
use crate::rng::RealizationStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Splitting {
    #[default]
    Strang,
    Lie,
}

/// Parameters of one propagation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationPlan {
    pub k0: f64,
    pub ell: f64,
    pub nz: usize,
    pub splitting: Splitting,
    pub medium: Option<MediumModel>,
}

impl PropagationPlan {
    pub fn new(k0: f64, ell: f64, nz: usize, splitting: Splitting, medium: Option<MediumModel>) -> Result<Self> {
        let plan = Self {
            k0,
            ell,
            nz,
            splitting,
            medium,
        };
        plan.check()?;
        Ok(plan)
    }

    /// Homogeneous plan; a single exact diffraction step.
    pub fn homogeneous(k0: f64, ell: f64) -> Result<Self> {
        Self::new(k0, ell, 1, Splitting::Strang, None)
    }

    pub fn dz(&self) -> f64 {
        self.ell / self.nz as f64
    }

    /// Largest admissible step: `ℓ_c·min(1, k₀ℓ_c)/4`.
    pub fn max_step(k0: f64, medium: &MediumModel) -> f64 {
        let lc = medium.corr_length();
        lc * (k0 * lc).min(1.0) / 4.0
    }

    /// Smallest step count satisfying [`PropagationPlan::max_step`].
    pub fn min_steps(k0: f64, ell: f64, medium: &MediumModel) -> usize {
        let n = (ell / Self::max_step(k0, medium) * (1.0 - 1e-12)).ceil() as usize;
        n.max(1)
    }

    fn check(&self) -> Result<()> {
        if !(self.k0 > 0.0 && self.k0.is_finite()) {
            return Err(Error::Configuration(format!("k0 must be positive, got {}", self.k0)));
        }
        if !(self.ell >= 0.0 && self.ell.is_finite()) {
            return Err(Error::Configuration(format!("propagation distance must be >= 0, got {}", self.ell)));
        }
        if self.nz == 0 {
            return Err(Error::Configuration("nz must be at least 1".into()));
        }
        if let Some(m) = &self.medium {
            let bound = Self::max_step(self.k0, m);
            if self.dz() > bound * (1.0 + 1e-12) {
                return Err(Error::Configuration(format!(
                    "step dz = {} exceeds ℓ_c·min(1, k₀ℓ_c)/4 = {bound}; use nz >= {}",
                    self.dz(),
                    Self::min_steps(self.k0, self.ell, m)
                )));
            }
        }
        Ok(())
    }

    /// Warnings about the plan on a given grid (currently the paraxial
    /// sanity bound on the largest grid wavenumber).
    pub fn warnings(&self, grid: &TransverseGrid) -> Vec<String> {
        let mut out = Vec::new();
        let kmax = std::f64::consts::PI / grid.dx();
        if kmax / self.k0 > 0.5 {
            out.push(format!(
                "grid Nyquist wavenumber {kmax:.3} exceeds 0.5·k₀ = {:.3}; paraxial accuracy relies on the field spectrum staying narrow",
                0.5 * self.k0
            ));
        }
        out
    }
}

/// Incident field `U_r(x) = U(x - r)` for a grid-aligned shift `r`.
pub fn make_incident(mask: &ComplexField, r: Point) -> Result<ComplexField> {
    let steps = mask.grid.steps_of(r)?;
    Ok(mask.rolled(steps))
}

fn diffraction_multiplier(grid: &TransverseGrid, k0: f64, z: f64) -> Vec<Complex64> {
    (0..grid.len())
        .map(|m| {
            let k = grid.wavevector(m);
            let k2 = k[0] * k[0] + k[1] * k[1];
            Complex64::from_polar(1.0, -k2 * z / (2.0 * k0))
        })
        .collect()
}

/// Exact homogeneous propagation over distance `z`.
pub fn free_space_propagate(f: &ComplexField, k0: f64, z: f64) -> Result<ComplexField> {
    if !(z >= 0.0) {
        return Err(Error::Precondition(format!("propagation distance must be >= 0, got {z}")));
    }
    if !(k0 > 0.0) {
        return Err(Error::Precondition(format!("k0 must be positive, got {k0}")));
    }
    if z == 0.0 {
        return Ok(f.clone());
    }
    let g = f.grid;
    let mult = diffraction_multiplier(&g, k0, z);
    let mut data = f.values.clone();
    fft_in_place(&g, &mut data, false);
    let norm = 1.0 / g.len() as f64;
    for (v, m) in data.iter_mut().zip(&mult) {
        *v *= m * norm;
    }
    fft_in_place(&g, &mut data, true);
    Ok(ComplexField { grid: g, values: data })
}

/// Reusable propagation engine for one grid and plan.
///
/// Holds the diffraction multipliers and the phase-screen synthesizer so
/// that many realizations and shifts can be advanced without recomputing
/// them.
#[derive(Debug, Clone)]
pub struct Propagator {
    grid: TransverseGrid,
    plan: PropagationPlan,
    full: Vec<Complex64>,
    half: Vec<Complex64>,
    synth: Option<ScreenSynthesizer>,
}

impl Propagator {
    pub fn new(grid: TransverseGrid, plan: PropagationPlan) -> Result<Self> {
        plan.check()?;
        let dz = plan.dz();
        let synth = match &plan.medium {
            Some(m) => Some(m.screen_synthesizer(&grid, dz)?),
            None => None,
        };
        for w in plan.warnings(&grid) {
            log::warn!("{w}");
        }
        Ok(Self {
            full: diffraction_multiplier(&grid, plan.k0, dz),
            half: diffraction_multiplier(&grid, plan.k0, 0.5 * dz),
            grid,
            plan,
            synth,
        })
    }

    pub fn grid(&self) -> &TransverseGrid {
        &self.grid
    }

    pub fn plan(&self) -> &PropagationPlan {
        &self.plan
    }

    /// The phase increment `ΔB` of step `step` in this realization.
    pub fn screen(&self, stream: &RealizationStream, step: usize) -> Option<RealField> {
        self.synth.as_ref().map(|s| s.draw(&mut stream.screen(step as u64)))
    }

    /// Propagate one realization.
    pub fn propagate(&self, input: &ComplexField, stream: &RealizationStream) -> Result<ComplexField> {
        self.grid.ensure_same(&input.grid)?;
        if self.synth.is_none() {
            return free_space_propagate(input, self.plan.k0, self.plan.ell);
        }
        self.run_with(input, |s| self.screen(stream, s), |_, _| {})
    }

    /// Propagate with caller-supplied increments `ΔB` per step (`None`
    /// means a homogeneous step). `observe(steps_done, field)` is called
    /// after every step with the real-space field at `z = steps_done·dz`.
    pub fn run_with<S, O>(&self, input: &ComplexField, mut screen: S, mut observe: O) -> Result<ComplexField>
    where
        S: FnMut(usize) -> Option<RealField>,
        O: FnMut(usize, &ComplexField),
    {
        self.grid.ensure_same(&input.grid)?;
        let mut state = State::new(&self.grid, &input.values);
        let mut out = ComplexField::zeros(self.grid);
        for step in 0..self.plan.nz {
            let db = screen(step);
            self.advance(&mut state, db.as_ref());
            state.real_space(&self.grid, &mut out.values);
            observe(step + 1, &out);
        }
        if self.plan.nz == 0 {
            out.values.clone_from(&input.values);
        }
        Ok(out)
    }

    /// Propagate several incident fields through the same medium realization.
    ///
    /// Each step's increment is synthesized once and applied to every
    /// field, so the medium is frozen across the batch.
    pub fn propagate_many(&self, inputs: &[ComplexField], stream: &RealizationStream) -> Result<Vec<ComplexField>> {
        for f in inputs {
            self.grid.ensure_same(&f.grid)?;
        }
        if self.synth.is_none() {
            return inputs
                .par_iter()
                .map(|f| free_space_propagate(f, self.plan.k0, self.plan.ell))
                .collect();
        }
        let mut states: Vec<State> = inputs.iter().map(|f| State::new(&self.grid, &f.values)).collect();
        for step in 0..self.plan.nz {
            let db = self.screen(stream, step);
            states.par_iter_mut().for_each(|s| self.advance(s, db.as_ref()));
        }
        Ok(states
            .par_iter_mut()
            .map(|s| {
                let mut out = ComplexField::zeros(self.grid);
                s.real_space(&self.grid, &mut out.values);
                out
            })
            .collect())
    }

    fn advance(&self, state: &mut State, db: Option<&RealField>) {
        let g = &self.grid;
        let k0 = self.plan.k0;
        match self.plan.splitting {
            Splitting::Strang => {
                state.multiply(&self.half);
                if let Some(db) = db {
                    state.apply_screen(g, db, k0);
                }
                state.multiply(&self.half);
            }
            Splitting::Lie => {
                state.multiply(&self.full);
                if let Some(db) = db {
                    state.apply_screen(g, db, k0);
                }
            }
        }
    }
}

/// Field held in unnormalized DFT space between steps.
struct State {
    spec: Vec<Complex64>,
}

impl State {
    fn new(grid: &TransverseGrid, values: &[Complex64]) -> Self {
        let mut spec = values.to_vec();
        fft_in_place(grid, &mut spec, false);
        Self { spec }
    }

    fn multiply(&mut self, m: &[Complex64]) {
        for (v, w) in self.spec.iter_mut().zip(m) {
            *v *= w;
        }
    }

    fn apply_screen(&mut self, grid: &TransverseGrid, db: &RealField, k0: f64) {
        fft_in_place(grid, &mut self.spec, true);
        let norm = 1.0 / grid.len() as f64;
        for (v, &b) in self.spec.iter_mut().zip(&db.values) {
            *v *= Complex64::from_polar(norm, 0.5 * k0 * b);
        }
        fft_in_place(grid, &mut self.spec, false);
    }

    fn real_space(&self, grid: &TransverseGrid, out: &mut [Complex64]) {
        out.copy_from_slice(&self.spec);
        fft_in_place(grid, out, true);
        let norm = 1.0 / grid.len() as f64;
        for v in out.iter_mut() {
            *v *= norm;
        }
    }
}

/// One realization of the transmitted field.
pub fn propagate(f: &ComplexField, plan: &PropagationPlan, stream: &RealizationStream) -> Result<ComplexField> {
    Propagator::new(f.grid, plan.clone())?.propagate(f, stream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::energy;
    use crate::rng::SeedTree;

    fn gauss(grid: TransverseGrid, r0: f64) -> ComplexField {
        ComplexField::from_real_fn(grid, |p| (-(p[0] * p[0] + p[1] * p[1]) / (2.0 * r0 * r0)).exp())
    }

    #[test]
    fn incident_shift_round_trip() {
        let g = TransverseGrid::new(2, 16, 0.5).unwrap();
        let u = gauss(g, 1.0);
        assert_eq!(make_incident(&u, [0.0, 0.0]).unwrap(), u);
        let s = make_incident(&u, [1.5, -2.0]).unwrap();
        assert!((energy(&s) - energy(&u)).abs() < 1e-13 * energy(&u));
        assert_eq!(make_incident(&s, [-1.5, 2.0]).unwrap(), u);
        assert!(make_incident(&u, [0.3, 0.0]).is_err());
    }

    #[test]
    fn plane_wave_is_invariant() {
        let g = TransverseGrid::new(1, 64, 0.5).unwrap();
        let u = ComplexField::from_real_fn(g, |_| 1.0);
        let out = free_space_propagate(&u, 3.0, 17.0).unwrap();
        for v in &out.values {
            assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
        assert_eq!(free_space_propagate(&u, 3.0, 0.0).unwrap(), u);
    }

    #[test]
    fn step_bound_is_enforced() {
        let m = MediumModel::gaussian(1.0, 1.0).unwrap();
        assert!(PropagationPlan::new(2.0, 10.0, 10, Splitting::Strang, Some(m.clone())).is_err());
        let nz = PropagationPlan::min_steps(2.0, 10.0, &m);
        assert_eq!(nz, 40);
        assert!(PropagationPlan::new(2.0, 10.0, nz, Splitting::Strang, Some(m)).is_ok());
    }

    #[test]
    fn homogeneous_plan_matches_free_space() {
        let g = TransverseGrid::new(1, 128, 0.2).unwrap();
        let u = gauss(g, 1.0);
        let plan = PropagationPlan::new(4.0, 3.0, 7, Splitting::Strang, None).unwrap();
        let out = propagate(&u, &plan, &SeedTree::new(0).realization(0)).unwrap();
        assert_eq!(out, free_space_propagate(&u, 4.0, 3.0).unwrap());
    }

    #[test]
    fn batch_equals_individual_runs() {
        let g = TransverseGrid::new(1, 128, 0.25).unwrap();
        let m = MediumModel::gaussian(0.5, 1.0).unwrap();
        let plan = PropagationPlan::new(2.0, 4.0, 16, Splitting::Strang, Some(m)).unwrap();
        let p = Propagator::new(g, plan).unwrap();
        let stream = SeedTree::new(5).realization(2);
        let u = gauss(g, 2.0);
        let inputs: Vec<_> = [0.0, 1.0, -2.5]
            .iter()
            .map(|&r| make_incident(&u, [r, 0.0]).unwrap())
            .collect();
        let batch = p.propagate_many(&inputs, &stream).unwrap();
        for (inp, out) in inputs.iter().zip(&batch) {
            assert_eq!(&p.propagate(inp, &stream).unwrap(), out);
        }
    }

    #[test]
    fn random_propagation_is_unitary() {
        let g = TransverseGrid::new(2, 32, 0.5).unwrap();
        let m = MediumModel::gaussian(1.0, 1.0).unwrap();
        let plan = PropagationPlan::new(1.0, 2.0, 8, Splitting::Lie, Some(m)).unwrap();
        let u = gauss(g, 2.0);
        let out = propagate(&u, &plan, &SeedTree::new(9).realization(0)).unwrap();
        assert!((energy(&out) / energy(&u) - 1.0).abs() < 1e-12);
    }
}
