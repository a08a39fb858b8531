//! Two-stage phase retrieval from a covariance map.
//!
//! The self-averaged covariance over shift offsets is `∝ |V(Δr)|²`, where
//! `V(q) = (2π)^{-d}∫|Û(k)|² e^{ik·q} dk` is the mask autocorrelation.
//!
//! 1. Stage one recovers the power spectrum `P = |Û|²` from `|V|`, with
//!    the object-domain constraint that `P` is real and non-negative.
//! 2. Stage two recovers `U` from `|Û| = √P`, under a support constraint
//!    and an assumed phase.
//!
//! Both stages use hybrid input-output (HIO) cycles followed by
//! error-reduction (ER) cycles, restarted from random phases. The best
//! Fourier residual is kept.
//!
//! Translations and the inversion `x → -x` of the mask leave the data
//! unchanged. [`register_and_score`] removes them before comparing with a
//! known truth.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{CovarianceMap, OffsetSample};
use crate::grid::{fft_in_place, forward_transform, inverse_transform, ComplexField, RealField, TransverseGrid};
use crate::rng::{Purpose, SeedTree};

/// Modulus data `√max(C, 0)` over offsets, normalized to a unit peak.
#[derive(Debug, Clone, PartialEq)]
pub struct Modulus {
    /// Node with coordinate `Δr` holds the modulus at that offset.
    pub field: RealField,
    /// Negative covariance mass removed by clipping, relative to the total
    /// absolute mass.
    pub clipped_mass: f64,
    /// Peak of the unnormalized covariance.
    pub peak: f64,
}

/// Smallest power-of-two grid (with spacing `dx`) holding every offset
/// with at least one empty node of margin.
pub fn offset_grid(samples: &[OffsetSample], dim: usize, dx: f64) -> Result<TransverseGrid> {
    let reach = samples
        .iter()
        .map(|s| (s.offset[0].abs().max(s.offset[1].abs()) / dx).round() as usize)
        .max()
        .unwrap_or(0);
    let n = (2 * reach + 2).next_power_of_two().max(8);
    TransverseGrid::new(dim, n, dx)
}

/// Place offset samples on `grid` (nodes without samples stay zero).
pub fn offsets_to_field(samples: &[OffsetSample], grid: &TransverseGrid) -> Result<RealField> {
    let mut values = vec![0.0; grid.len()];
    let half = (grid.n() / 2) as i64;
    for s in samples {
        let st = grid.steps_of(s.offset)?;
        let idx = [st[0] + half, st[1] + if grid.dim() == 2 { half } else { 0 }];
        let inside = |v: i64| v >= 0 && v < grid.n() as i64;
        if !inside(idx[0]) || (grid.dim() == 2 && !inside(idx[1])) {
            return Err(Error::GridMismatch(format!("offset {:?} falls outside the offset grid", s.offset)));
        }
        values[grid.flatten([idx[0] as usize, idx[1] as usize])] = s.value;
    }
    RealField::new(*grid, values)
}

/// Modulus of a covariance map already reduced to offsets.
pub fn modulus_from_offsets(samples: &[OffsetSample], grid: &TransverseGrid) -> Result<Modulus> {
    let field = offsets_to_field(samples, grid)?;
    let total: f64 = field.values.iter().map(|v| v.abs()).sum();
    let negative: f64 = field.values.iter().filter(|v| **v < 0.0).map(|v| -v).sum();
    let peak = field.values.iter().cloned().fold(0.0, f64::max);
    let scale = if peak > 0.0 { 1.0 / peak.sqrt() } else { 0.0 };
    let values = field.values.iter().map(|v| v.max(0.0).sqrt() * scale).collect();
    Ok(Modulus {
        field: RealField::new(*grid, values)?,
        clipped_mass: if total > 0.0 { negative / total } else { 0.0 },
        peak,
    })
}

/// `√max(C, 0)` of a shift-pair covariance map over offsets.
///
/// Pairs sharing an offset are averaged only when `average_midpoints` is
/// set; otherwise a map with more than one pair per offset is rejected.
/// `scan_grid` supplies the spacing the shifts are aligned to.
pub fn covariance_to_modulus(map: &CovarianceMap, scan_grid: &TransverseGrid, average_midpoints: bool) -> Result<Modulus> {
    let samples = map.by_offset(scan_grid)?;
    if !average_midpoints && samples.iter().any(|s| s.pairs > 1) {
        return Err(Error::Precondition(
            "the map has several shift pairs per offset; enable mid-point averaging to reduce it".into(),
        ));
    }
    let grid = offset_grid(&samples, scan_grid.dim(), scan_grid.dx())?;
    modulus_from_offsets(&samples, &grid)
}

/// Iteration schedule shared by both stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalOptions {
    pub hio_iterations: usize,
    pub er_iterations: usize,
    /// Number of HIO+ER cycles per restart.
    pub cycles: usize,
    pub restarts: usize,
    pub beta: f64,
    pub seed: u64,
    /// Relative Fourier residual regarded as converged.
    pub tolerance: f64,
    /// Independent stage-one/stage-two chains tried by [`reconstruct_mask`]
    /// until one converges.
    pub chains: usize,
}

impl Default for RetrievalOptions {
    fn default() -> Self {
        Self {
            hio_iterations: 40,
            er_iterations: 10,
            cycles: 10,
            restarts: 20,
            beta: 0.9,
            seed: 0,
            tolerance: 1e-2,
            chains: 4,
        }
    }
}

impl RetrievalOptions {
    fn check(&self) -> Result<()> {
        if self.restarts == 0 || self.cycles == 0 || self.chains == 0 || self.hio_iterations + self.er_iterations == 0 {
            return Err(Error::Configuration("retrieval budgets must be at least 1".into()));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::Configuration(format!("feedback β must lie in (0, 1], got {}", self.beta)));
        }
        Ok(())
    }
}

/// Object-domain constraint of one stage.
#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    /// Real and non-negative wherever `support` is set, zero elsewhere.
    NonNegative { support: Vec<bool> },
    /// `|U|e^{iφ}` with the given phase inside the support, zero elsewhere.
    Phase { support: Vec<bool>, phase: Vec<f64> },
}

impl Constraint {
    /// Projection onto the constraint set, or `None` where the point is
    /// outside it and HIO should apply feedback.
    fn project(&self, j: usize, v: Complex64) -> (Complex64, bool) {
        match self {
            Constraint::NonNegative { support } => {
                if support[j] && v.re >= 0.0 {
                    (Complex64::new(v.re, 0.0), true)
                } else {
                    (Complex64::new(0.0, 0.0), false)
                }
            }
            Constraint::Phase { support, phase } => {
                let dir = Complex64::from_polar(1.0, phase[j]);
                let a = (v * dir.conj()).re;
                if support[j] && a >= 0.0 {
                    (dir * a, true)
                } else {
                    (Complex64::new(0.0, 0.0), false)
                }
            }
        }
    }
}

/// One restart's outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestartRecord {
    pub index: usize,
    pub residual: f64,
    /// Error-reduction steps whose Fourier residual increased (should be 0).
    pub er_violations: usize,
}

/// Outcome of an alternating-projection run.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseRetrieval {
    /// Best object estimate (after the final projection).
    pub object: ComplexField,
    /// Relative Fourier residual `‖|F(object)| - data‖/‖data‖`.
    pub residual: f64,
    pub converged: bool,
    pub restarts: Vec<RestartRecord>,
}

impl PhaseRetrieval {
    /// Turn a non-converged run into an error (the candidate is lost).
    pub fn into_result(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::numerical(
                "phase retrieval",
                format!("best residual {:.3e} above tolerance after the full budget", self.residual),
            ))
        }
    }
}

/// Transform pair used by a stage: object ↔ data domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pair {
    /// Object in real space, data = forward transform (stage two).
    Forward,
    /// Object in spectral space, data = inverse transform (stage one).
    Inverse,
}

impl Pair {
    fn to_data(self, grid: &TransverseGrid, v: &[Complex64]) -> Vec<Complex64> {
        let f = ComplexField { grid: *grid, values: v.to_vec() };
        match self {
            Pair::Forward => forward_transform(&f).values,
            Pair::Inverse => inverse_transform(&f).values,
        }
    }

    fn to_object(self, grid: &TransverseGrid, v: &[Complex64]) -> Vec<Complex64> {
        let f = ComplexField { grid: *grid, values: v.to_vec() };
        match self {
            Pair::Forward => inverse_transform(&f).values,
            Pair::Inverse => forward_transform(&f).values,
        }
    }
}

fn fourier_residual(data: &[Complex64], target: &[f64], norm: f64) -> f64 {
    data.iter()
        .zip(target)
        .map(|(d, t)| (d.norm() - t).powi(2))
        .sum::<f64>()
        .sqrt()
        / norm
}

fn impose_modulus(data: &mut [Complex64], target: &[f64]) {
    for (d, t) in data.iter_mut().zip(target) {
        let a = d.norm();
        *d = if a > 0.0 { *d * (t / a) } else { Complex64::new(*t, 0.0) };
    }
}

fn run_projections(
    grid: &TransverseGrid,
    target: &[f64],
    constraint: &Constraint,
    pair: Pair,
    opts: &RetrievalOptions,
    purpose_offset: u64,
) -> Result<PhaseRetrieval> {
    opts.check()?;
    let norm = target.iter().map(|t| t * t).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(PhaseRetrieval {
            object: ComplexField::zeros(*grid),
            residual: 0.0,
            converged: true,
            restarts: vec![],
        });
    }
    let tree = SeedTree::new(opts.seed);
    let runs: Vec<(Vec<Complex64>, RestartRecord)> = (0..opts.restarts)
        .into_par_iter()
        .map(|restart| {
            let mut rng = tree.auxiliary(Purpose::Restart, purpose_offset + restart as u64);
            // restart 0 starts from zero phase, the others from random phases
            let start: Vec<Complex64> = target
                .iter()
                .map(|t| {
                    let phase = if restart == 0 { 0.0 } else { rng.random_range(0.0..std::f64::consts::TAU) };
                    Complex64::from_polar(*t, phase)
                })
                .collect();
            let mut g = pair.to_object(grid, &start);
            let mut violations = 0;
            let mut last = f64::INFINITY;
            for _ in 0..opts.cycles {
                for it in 0..opts.hio_iterations + opts.er_iterations {
                    let hio = it < opts.hio_iterations;
                    let mut data = pair.to_data(grid, &g);
                    if !hio {
                        let r = fourier_residual(&data, target, norm);
                        if r > last * (1.0 + 1e-9) + 1e-14 {
                            violations += 1;
                        }
                        last = r;
                    } else {
                        last = f64::INFINITY;
                    }
                    impose_modulus(&mut data, target);
                    let gp = pair.to_object(grid, &data);
                    for (j, (gv, pv)) in g.iter_mut().zip(&gp).enumerate() {
                        let (proj, ok) = constraint.project(j, *pv);
                        *gv = if ok || !hio { proj } else { *gv - opts.beta * pv };
                    }
                }
            }
            // the returned state satisfies the constraints exactly
            let obj: Vec<Complex64> = g.iter().enumerate().map(|(j, v)| constraint.project(j, *v).0).collect();
            let residual = fourier_residual(&pair.to_data(grid, &obj), target, norm);
            (
                obj,
                RestartRecord {
                    index: restart,
                    residual,
                    er_violations: violations,
                },
            )
        })
        .collect();
    // lowest residual wins, ties go to the lowest restart index
    let best = runs
        .iter()
        .min_by(|a, b| a.1.residual.total_cmp(&b.1.residual).then(a.1.index.cmp(&b.1.index)))
        .expect("at least one restart");
    Ok(PhaseRetrieval {
        object: ComplexField::new(*grid, best.0.clone())?,
        residual: best.1.residual,
        converged: best.1.residual <= opts.tolerance,
        restarts: runs.iter().map(|r| r.1).collect(),
    })
}

/// Stage one: a real non-negative `P` on the spectral grid dual to the
/// modulus grid with `|inverse_transform(P)| = modulus`. The object is
/// stored in FFT order like any spectrum of `modulus.field.grid`, rolled
/// so that its maximum sits at `k = 0`.
pub fn recover_power_spectrum(modulus: &Modulus, opts: &RetrievalOptions) -> Result<PhaseRetrieval> {
    let grid = modulus.field.grid;
    let support = vec![true; grid.len()];
    let mut out = run_projections(
        &grid,
        &modulus.field.values,
        &Constraint::NonNegative { support },
        Pair::Inverse,
        opts,
        0,
    )?;
    // Translating P in k only adds a phase ramp to V, so the data cannot
    // fix its position. A non-negative mask has |Û| largest at k = 0.
    let peak = (0..grid.len())
        .max_by(|a, b| out.object.values[*a].re.total_cmp(&out.object.values[*b].re).then(b.cmp(a)))
        .unwrap_or(0);
    let [a, b] = grid.unflatten(peak);
    out.object = out.object.rolled([-(a as i64), -(b as i64)]);
    Ok(out)
}

/// Stage two: a mask with `|Û| = spectrum_modulus` (FFT order on `grid`)
/// satisfying `constraint` in real space.
pub fn recover_mask(
    grid: &TransverseGrid,
    spectrum_modulus: &[f64],
    constraint: &Constraint,
    opts: &RetrievalOptions,
) -> Result<PhaseRetrieval> {
    if spectrum_modulus.len() != grid.len() {
        return Err(Error::GridMismatch(format!(
            "{} spectral samples for a grid of {} nodes",
            spectrum_modulus.len(),
            grid.len()
        )));
    }
    if spectrum_modulus.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Precondition("spectral modulus must be non-negative".into()));
    }
    // restart streams of stage two are disjoint from stage one
    run_projections(grid, spectrum_modulus, constraint, Pair::Forward, opts, 1 << 32)
}

/// `√max(P, 0)` of a stage-one result, ready for [`recover_mask`].
pub fn spectrum_modulus(power: &ComplexField) -> Vec<f64> {
    power.values.iter().map(|v| v.re.max(0.0).sqrt()).collect()
}

/// Support estimate from the modulus: the autocorrelation of a mask
/// extends twice as far as the mask along each axis. The box of offsets
/// where the modulus exceeds `threshold` of its peak is halved, centered
/// on the origin and padded by one node.
pub fn estimate_support(modulus: &Modulus, threshold: f64) -> Vec<bool> {
    let g = modulus.field.grid;
    let peak = modulus.field.values.iter().cloned().fold(0.0, f64::max);
    let mut reach = [0.0_f64; 2];
    for (j, v) in modulus.field.values.iter().enumerate() {
        if *v > threshold * peak {
            let p = g.point(j);
            reach[0] = reach[0].max(p[0].abs());
            reach[1] = reach[1].max(p[1].abs());
        }
    }
    let half = [reach[0] / 2.0 + g.dx(), reach[1] / 2.0 + g.dx()];
    (0..g.len())
        .map(|j| {
            let p = g.point(j);
            p[0].abs() <= half[0] + 1e-9 * g.dx() && p[1].abs() <= half[1] + 1e-9 * g.dx()
        })
        .collect()
}

/// Copy a field onto another grid of the same spacing, matching node
/// coordinates; nodes without a counterpart are zero.
pub fn resample_on(f: &ComplexField, grid: &TransverseGrid) -> Result<ComplexField> {
    if f.grid.dim() != grid.dim() || (f.grid.dx() - grid.dx()).abs() > 1e-12 * grid.dx() {
        return Err(Error::GridMismatch("resampling needs equal dimension and spacing".into()));
    }
    let (hs, hd) = ((f.grid.n() / 2) as i64, (grid.n() / 2) as i64);
    let mut out = ComplexField::zeros(*grid);
    for (j, v) in f.values.iter().enumerate() {
        let idx = f.grid.unflatten(j);
        let map = |i: usize| i as i64 - hs + hd;
        let (a, b) = (map(idx[0]), if grid.dim() == 2 { map(idx[1]) } else { 0 });
        let inside = |v: i64| v >= 0 && v < grid.n() as i64;
        if inside(a) && (grid.dim() == 1 || inside(b)) {
            out.values[grid.flatten([a as usize, b as usize])] = *v;
        } else if v.norm_sqr() > 0.0 {
            return Err(Error::GridMismatch("field support does not fit the target grid".into()));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    pub aligned: ComplexField,
    /// `‖aligned - truth‖₂ / ‖truth‖₂`.
    pub error: f64,
    pub steps: [i64; 2],
    pub mirrored: bool,
    pub scale: Complex64,
}

fn mirror(f: &ComplexField) -> ComplexField {
    let g = f.grid;
    let n = g.n();
    let flip = |i: usize| (n - i) % n;
    let mut out = ComplexField::zeros(g);
    for (j, v) in f.values.iter().enumerate() {
        let [a, b] = g.unflatten(j);
        let t = if g.dim() == 2 { g.flatten([flip(a), flip(b)]) } else { flip(a) };
        out.values[t] = *v;
    }
    out
}

/// Best alignment of `candidate` to `truth` over circular translations,
/// inversion and a complex global scale.
pub fn register_and_score(candidate: &ComplexField, truth: &ComplexField) -> Result<Registration> {
    let g = truth.grid;
    g.ensure_same(&candidate.grid)?;
    let plain = |f: &ComplexField| f.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let tn = plain(truth);
    if tn == 0.0 {
        return Err(Error::Precondition("truth has zero norm".into()));
    }
    let cn = plain(candidate);
    if cn == 0.0 {
        return Ok(Registration {
            aligned: candidate.clone(),
            error: 1.0,
            steps: [0, 0],
            mirrored: false,
            scale: Complex64::new(0.0, 0.0),
        });
    }
    let mut best: Option<(f64, [i64; 2], bool, Complex64)> = None;
    for mirrored in [false, true] {
        let c = if mirrored { mirror(candidate) } else { candidate.clone() };
        // cross-correlation Σ_x conj(c(x - s)) t(x) for every circular shift s
        let mut ct = c.values.clone();
        let mut tt = truth.values.clone();
        fft_in_place(&g, &mut ct, false);
        fft_in_place(&g, &mut tt, false);
        let mut prod: Vec<Complex64> = ct.iter().zip(&tt).map(|(a, b)| a.conj() * b).collect();
        fft_in_place(&g, &mut prod, true);
        let len = g.len() as f64;
        for (j, v) in prod.iter().enumerate() {
            let inner = v / len;
            let score = inner.norm();
            if best.as_ref().is_none_or(|b| score > b.0 + 1e-12 * b.0) {
                let [a, b] = g.unflatten(j);
                best = Some((score, [a as i64, b as i64], mirrored, inner / (cn * cn)));
            }
        }
    }
    let (_, steps, mirrored, scale) = best.expect("non-empty grid");
    let c = if mirrored { mirror(candidate) } else { candidate.clone() };
    let moved = c.rolled(steps);
    let aligned = ComplexField::new(g, moved.values.iter().map(|v| v * scale).collect())?;
    let error = aligned
        .values
        .iter()
        .zip(&truth.values)
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        .sqrt()
        / tn;
    Ok(Registration {
        aligned,
        error,
        steps,
        mirrored,
        scale,
    })
}

/// Full chain on a modulus: power spectrum, support estimate, mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskReconstruction {
    pub power: PhaseRetrieval,
    pub support: Vec<bool>,
    pub mask: PhaseRetrieval,
}

/// Stage one, support estimation (2% threshold) and stage two under the
/// zero-phase assumption.
///
/// Stage one can fit the data exactly with the wrong spectrum: when the
/// autocorrelation splits into lobes that do not overlap, their relative
/// phases are invisible in the modulus. Such a spectrum belongs to no
/// non-negative mask, so stage two then stalls. Whole chains are rerun on
/// fresh seeds until stage two converges, keeping the lowest residual.
pub fn reconstruct_mask(modulus: &Modulus, opts: &RetrievalOptions) -> Result<MaskReconstruction> {
    opts.check()?;
    let support = estimate_support(modulus, 0.02);
    let mut best: Option<MaskReconstruction> = None;
    for chain in 0..opts.chains {
        let o = RetrievalOptions {
            seed: opts.seed.wrapping_add((chain as u64) << 40),
            ..*opts
        };
        let power = recover_power_spectrum(modulus, &o)?;
        let amp = spectrum_modulus(&power.object);
        let mask = recover_mask(
            &modulus.field.grid,
            &amp,
            &Constraint::NonNegative { support: support.clone() },
            &o,
        )?;
        let done = mask.converged;
        if best.as_ref().is_none_or(|b| mask.residual < b.mask.residual) {
            best = Some(MaskReconstruction {
                power,
                support: support.clone(),
                mask,
            });
        }
        if done {
            break;
        }
    }
    Ok(best.expect("at least one chain"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::mask_autocorrelation;

    fn g1(n: usize, dx: f64) -> TransverseGrid {
        TransverseGrid::new(1, n, dx).unwrap()
    }

    fn modulus_of(mask: &ComplexField) -> Modulus {
        let auto = mask_autocorrelation(mask).unwrap();
        let samples: Vec<OffsetSample> = auto
            .values
            .iter()
            .enumerate()
            .map(|(j, v)| OffsetSample {
                offset: mask.grid.point(j),
                value: v.norm_sqr(),
                stderr: None,
                pairs: 1,
            })
            .collect();
        modulus_from_offsets(&samples, &mask.grid).unwrap()
    }

    fn quick() -> RetrievalOptions {
        RetrievalOptions {
            restarts: 4,
            cycles: 6,
            ..Default::default()
        }
    }

    #[test]
    fn clipping_is_accounted() {
        let g = g1(8, 1.0);
        let samples: Vec<OffsetSample> = [(-1.0, -0.01), (0.0, 0.5), (1.0, 0.49)]
            .iter()
            .map(|&(q, v)| OffsetSample { offset: [q, 0.0], value: v, stderr: None, pairs: 1 })
            .collect();
        let m = modulus_from_offsets(&samples, &g).unwrap();
        assert!((m.clipped_mass - 0.01).abs() < 1e-12);
        assert_eq!(m.field.values.iter().cloned().fold(0.0, f64::max), 1.0);
        let zero: Vec<OffsetSample> = samples.iter().map(|s| OffsetSample { value: 0.0, ..*s }).collect();
        assert!(modulus_from_offsets(&zero, &g).unwrap().field.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rectangle_modulus_is_a_triangle() {
        let g = g1(64, 0.25);
        let w = 3.0;
        let u = ComplexField::from_real_fn(g, |p| if p[0] >= -w / 2.0 && p[0] < w / 2.0 { 1.0 } else { 0.0 });
        let m = modulus_of(&u);
        for (j, v) in m.field.values.iter().enumerate() {
            let q = g.point(j)[0];
            assert!((v - (w - q.abs()).max(0.0) / w).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_data_gives_zero_object() {
        let g = g1(16, 1.0);
        let m = Modulus { field: RealField::new(g, vec![0.0; 16]).unwrap(), clipped_mass: 0.0, peak: 0.0 };
        let out = recover_power_spectrum(&m, &quick()).unwrap();
        assert!(out.object.values.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn power_spectrum_of_a_rectangle() {
        let g = g1(128, 0.25);
        let w = 4.0;
        let u = ComplexField::from_real_fn(g, |p| if p[0] >= -w / 2.0 && p[0] < w / 2.0 { 1.0 } else { 0.0 });
        let m = modulus_of(&u);
        let out = recover_power_spectrum(&m, &quick()).unwrap();
        assert!(out.converged);
        assert!(out.restarts.iter().all(|r| r.er_violations == 0));
        // compare shapes: the data fix P up to a constant
        let truth: Vec<f64> = forward_transform(&u).values.iter().map(|v| v.norm_sqr()).collect();
        let got: Vec<f64> = out.object.values.iter().map(|v| v.re).collect();
        let scale = truth.iter().zip(&got).map(|(a, b)| a * b).sum::<f64>() / got.iter().map(|b| b * b).sum::<f64>();
        let err = truth.iter().zip(&got).map(|(a, b)| (a - scale * b).powi(2)).sum::<f64>().sqrt()
            / truth.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn gaussian_mask_from_its_spectrum() {
        let g = g1(128, 0.25);
        let u = ComplexField::from_real_fn(g, |p| (-p[0] * p[0] / 2.0).exp());
        let amp: Vec<f64> = forward_transform(&u).values.iter().map(|v| v.norm()).collect();
        let support: Vec<bool> = (0..g.len()).map(|j| g.point(j)[0].abs() < 6.0).collect();
        let out = recover_mask(&g, &amp, &Constraint::NonNegative { support }, &quick()).unwrap();
        let reg = register_and_score(&out.object, &u).unwrap();
        assert!(reg.error < 1e-3, "{}", reg.error);
    }

    #[test]
    fn recovered_masks_satisfy_the_constraints() {
        let g = g1(64, 0.5);
        let u = ComplexField::from_real_fn(g, |p| if p[0].abs() < 3.0 { 1.0 + 0.3 * p[0] } else { 0.0 });
        let amp: Vec<f64> = forward_transform(&u).values.iter().map(|v| v.norm()).collect();
        let support: Vec<bool> = (0..g.len()).map(|j| g.point(j)[0].abs() < 4.0).collect();
        let out = recover_mask(&g, &amp, &Constraint::NonNegative { support: support.clone() }, &quick()).unwrap();
        for (v, s) in out.object.values.iter().zip(&support) {
            assert_eq!(v.im, 0.0);
            assert!(v.re >= 0.0);
            if !s {
                assert_eq!(v.re, 0.0);
            }
        }
    }

    #[test]
    fn registration_removes_translation_and_inversion() {
        let g = g1(64, 0.5);
        let u = ComplexField::from_real_fn(g, |p| if p[0] > -2.0 && p[0] < 3.0 { 1.0 + 0.2 * p[0] } else { 0.0 });
        let shifted = u.rolled([3, 0]);
        assert!(register_and_score(&shifted, &u).unwrap().error < 1e-12);
        let mirrored = mirror(&u);
        let reg = register_and_score(&mirrored, &u).unwrap();
        assert!(reg.error < 1e-12 && reg.mirrored);
        let scaled = ComplexField::new(g, u.values.iter().map(|v| v * 2.5).collect()).unwrap();
        assert!(register_and_score(&scaled, &u).unwrap().error < 1e-12);
    }

    #[test]
    fn registration_error_is_the_relative_norm() {
        let g = g1(256, 0.1);
        let u = ComplexField::from_real_fn(g, |p| (-p[0] * p[0]).exp());
        let mut rng = SeedTree::new(3).auxiliary(Purpose::Synthetic, 0);
        let noise: Vec<f64> = (0..256).map(|_| rng.random_range(-1.0..1.0)).collect();
        let nn = noise.iter().map(|v| v * v).sum::<f64>().sqrt();
        let eps = 0.01 * u.norm() / (nn * g.cell().sqrt());
        let noisy = ComplexField::new(g, u.values.iter().zip(&noise).map(|(v, e)| v + eps * e).collect()).unwrap();
        let err = register_and_score(&noisy, &u).unwrap().error;
        assert!((err - 0.01).abs() < 1e-3, "{err}");
    }

    #[test]
    fn double_slit_round_trip() {
        let g = g1(128, 1.0);
        let (a, s) = (4.0, 16.0);
        let slit = |x: f64, c: f64| x >= c - a / 2.0 && x < c + a / 2.0;
        let u = ComplexField::from_real_fn(g, |p| if slit(p[0], -s / 2.0) || slit(p[0], s / 2.0) { 1.0 } else { 0.0 });
        let m = modulus_of(&u);
        let rec = reconstruct_mask(&m, &RetrievalOptions::default()).unwrap();
        let reg = register_and_score(&rec.mask.object, &u).unwrap();
        assert!(reg.error < 0.05, "{}", reg.error);
    }

    #[test]
    fn offset_reduction_requires_consent() {
        let map = CovarianceMap {
            shifts: vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]],
            values: vec![4.0, 2.0, 1.0, 2.0, 6.0, 3.0, 1.0, 3.0, 5.0],
            stderr: None,
            flavor: crate::estimator::Flavor::EmpiricalSingleRealization,
            warnings: vec![],
        };
        let g = g1(8, 1.0);
        assert!(matches!(covariance_to_modulus(&map, &g, false), Err(Error::Precondition(_))));
        let m = covariance_to_modulus(&map, &g, true).unwrap();
        assert_eq!(m.peak, 5.0);
    }

    #[test]
    fn power_spectrum_matches_the_continuous_rectangle_transform() {
        let w = 4.0;
        let g = g1(1024, w / 128.0);
        // half-open so exactly w/dx nodes are lit
        let u = ComplexField::from_real_fn(g, |p| if p[0] >= -w / 2.0 && p[0] < w / 2.0 { 1.0 } else { 0.0 });
        let out = recover_power_spectrum(&modulus_of(&u), &quick()).unwrap();
        let truth: Vec<f64> = (0..g.len())
            .map(|m| {
                let k = g.wavenumber(m);
                if k == 0.0 { w * w } else { (2.0 * (k * w / 2.0).sin() / k).powi(2) }
            })
            .collect();
        let got: Vec<f64> = out.object.values.iter().map(|v| v.re).collect();
        let scale = truth[0] / got[0];
        let err = truth.iter().zip(&got).map(|(a, b)| (a - scale * b).powi(2)).sum::<f64>().sqrt()
            / truth.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn symmetric_spectrum_is_a_quick_fixed_point() {
        let g = g1(128, 0.5);
        let u = ComplexField::from_real_fn(g, |p| (-(p[0] - 1.0).powi(2) / 4.0).exp() + (-(p[0] + 1.0).powi(2) / 4.0).exp());
        let er_only = RetrievalOptions {
            hio_iterations: 0,
            er_iterations: 50,
            cycles: 1,
            restarts: 1,
            tolerance: 1e-6,
            ..Default::default()
        };
        let out = recover_power_spectrum(&modulus_of(&u), &er_only).unwrap();
        assert!(out.converged, "{}", out.residual);
    }

    #[test]
    fn perfect_data_round_trip_reproduces_the_map() {
        let g = g1(128, 1.0);
        let u = ComplexField::from_real_fn(g, |p| if p[0].abs() < 6.0 { 1.0 + 0.5 * (p[0] / 3.0).cos() } else { 0.0 });
        let m = modulus_of(&u);
        let rec = reconstruct_mask(&m, &RetrievalOptions::default()).unwrap();
        let again = modulus_of(&rec.mask.object);
        let err = again.field.values.iter().zip(&m.field.values).map(|(a, b)| (a * a - b * b).powi(2)).sum::<f64>().sqrt()
            / m.field.values.iter().map(|b| b.powi(4)).sum::<f64>().sqrt();
        assert!(err < 0.01, "{err}");
    }
}
