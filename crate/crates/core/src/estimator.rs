//! Imaging experiment and empirical statistics.
//!
//! One experiment scans the incident mask over a list of shifts. Within a
//! realization the medium is frozen: every shift sees the same phase
//! screens, because screens are keyed by `(seed, realization, step)` and
//! never by shift. Empirical covariances are spatial averages over a
//! camera aperture; ensemble averages over realizations are a separate,
//! explicitly labelled flavour.

use std::collections::BTreeMap;

use log::warn;
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{self, speckle_radius};
use crate::error::{Error, Result};
use crate::grid::{forward_transform, inverse_transform, ComplexField, Point, RealField, TransverseGrid};
use crate::medium::MediumModel;
use crate::propagator::{make_incident, PropagationPlan, Propagator, Splitting};
use crate::rng::{Purpose, SeedTree};

/// Camera aperture: an interval (`d = 1`) or disk (`d = 2`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub center: Point,
    pub radius: f64,
}

impl Camera {
    pub fn contains(&self, p: Point) -> bool {
        let d = [p[0] - self.center[0], p[1] - self.center[1]];
        d[0] * d[0] + d[1] * d[1] <= self.radius * self.radius * (1.0 + 1e-12)
    }

    /// Flat indices of the grid nodes inside the aperture.
    pub fn nodes(&self, grid: &TransverseGrid) -> Vec<usize> {
        (0..grid.len()).filter(|&j| self.contains(grid.point(j))).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mask: ComplexField,
    pub shifts: Vec<Point>,
    pub k0: f64,
    pub ell: f64,
    pub nz: usize,
    pub splitting: Splitting,
    /// `None` for a homogeneous medium.
    pub medium: Option<MediumModel>,
    pub camera: Camera,
    pub pixel: f64,
    pub realizations: usize,
    pub seed: u64,
    /// Keep the complex fields (needed by [`gaussianity_diagnostic`]).
    pub keep_fields: bool,
}

impl ExperimentConfig {
    pub fn grid(&self) -> TransverseGrid {
        self.mask.grid
    }

    pub fn plan(&self) -> Result<PropagationPlan> {
        PropagationPlan::new(self.k0, self.ell, self.nz, self.splitting, self.medium.clone())
    }

    /// Speckle radius `ρ`, infinite for a homogeneous medium.
    pub fn speckle_radius(&self) -> f64 {
        match &self.medium {
            Some(m) => speckle_radius(m.gamma_bar2(), self.k0, self.ell),
            None => f64::INFINITY,
        }
    }

    /// Check every invariant; returns the first violation.
    pub fn validate(&self) -> Result<()> {
        let g = self.grid();
        if self.realizations == 0 {
            return Err(Error::Configuration("realizations must be at least 1".into()));
        }
        if self.shifts.is_empty() {
            return Err(Error::Configuration("the shift scan is empty".into()));
        }
        for (i, r) in self.shifts.iter().enumerate() {
            g.steps_of(*r).map_err(|e| Error::Configuration(format!("shift #{i}: {e}")))?;
        }
        if !(self.pixel >= 0.0 && self.pixel.is_finite()) {
            return Err(Error::Configuration(format!("pixel size must be >= 0, got {}", self.pixel)));
        }
        if !(self.camera.radius > 0.0) {
            return Err(Error::Configuration(format!("camera radius must be positive, got {}", self.camera.radius)));
        }
        self.plan()?;
        let rho = self.speckle_radius();
        let margin = if rho.is_finite() { 4.0 * rho } else { 0.0 };
        let (lo, hi) = (g.coord(0), g.coord(g.n() - 1));
        for axis in 0..g.dim() {
            let c = self.camera.center[axis];
            if c - self.camera.radius - margin < lo || c + self.camera.radius + margin > hi {
                return Err(Error::Configuration(format!(
                    "camera aperture (centre {c}, radius {}) plus a margin of 4ρ = {margin:.4} leaves the grid box [{lo}, {hi}] on axis {axis}",
                    self.camera.radius
                )));
            }
        }
        if self.camera.nodes(&g).is_empty() {
            return Err(Error::Configuration("camera aperture contains no grid node".into()));
        }
        Ok(())
    }
}

/// Intensities for every realization and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityStack {
    pub grid: TransverseGrid,
    pub shifts: Vec<Point>,
    /// `intensities[realization][shift]`.
    pub intensities: Vec<Vec<RealField>>,
    /// Complex fields in the same layout, when retained.
    pub fields: Option<Vec<Vec<ComplexField>>>,
    pub seed: u64,
    /// Free-form provenance tag (the CLI stores the scenario hash here).
    pub tag: String,
}

impl IntensityStack {
    pub fn realizations(&self) -> usize {
        self.intensities.len()
    }

    pub fn from_intensities(grid: TransverseGrid, shifts: Vec<Point>, intensities: Vec<Vec<RealField>>) -> Result<Self> {
        for row in &intensities {
            if row.len() != shifts.len() {
                return Err(Error::GridMismatch(format!(
                    "stack row has {} shifts, expected {}",
                    row.len(),
                    shifts.len()
                )));
            }
            for f in row {
                grid.ensure_same(&f.grid)?;
            }
        }
        Ok(Self {
            grid,
            shifts,
            intensities,
            fields: None,
            seed: 0,
            tag: String::new(),
        })
    }
}

/// Run the scan. Realizations are independent and run in parallel; the
/// result does not depend on the worker count.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<IntensityStack> {
    cfg.validate()?;
    let g = cfg.grid();
    let plan = cfg.plan()?;
    for w in plan.warnings(&g) {
        warn!("{w}");
    }
    let prop = Propagator::new(g, plan)?;
    let inputs: Vec<ComplexField> = cfg
        .shifts
        .iter()
        .map(|r| make_incident(&cfg.mask, *r))
        .collect::<Result<_>>()?;
    let tree = SeedTree::new(cfg.seed);
    let runs: Vec<Vec<ComplexField>> = (0..cfg.realizations)
        .into_par_iter()
        .map(|i| prop.propagate_many(&inputs, &tree.realization(i as u64)))
        .collect::<Result<_>>()?;
    let intensities = runs.iter().map(|row| row.iter().map(|f| f.intensity()).collect()).collect();
    Ok(IntensityStack {
        grid: g,
        shifts: cfg.shifts.clone(),
        intensities,
        fields: cfg.keep_fields.then_some(runs),
        seed: cfg.seed,
        tag: String::new(),
    })
}

/// Convolve one intensity with `(2π)^{-d/2}ρo^{-d}exp(-|y|²/(2ρo²))`.
pub fn smooth_field(f: &RealField, pixel: f64) -> RealField {
    if pixel == 0.0 {
        return f.clone();
    }
    let g = f.grid;
    let mut spec = forward_transform(&f.to_complex());
    for (m, v) in spec.values.iter_mut().enumerate() {
        let k = g.wavevector(m);
        *v *= (-0.5 * pixel * pixel * (k[0] * k[0] + k[1] * k[1])).exp();
    }
    let out = inverse_transform(&spec);
    RealField {
        grid: g,
        values: out.values.iter().map(|v| v.re).collect(),
    }
}

/// Gaussian pixel smoothing of every intensity in the stack. Complex
/// fields are dropped since they no longer match the intensities.
pub fn pixel_smooth(stack: &IntensityStack, pixel: f64) -> Result<IntensityStack> {
    if !(pixel >= 0.0 && pixel.is_finite()) {
        return Err(Error::Precondition(format!("pixel size must be >= 0, got {pixel}")));
    }
    let intensities = stack
        .intensities
        .par_iter()
        .map(|row| row.iter().map(|f| smooth_field(f, pixel)).collect())
        .collect();
    Ok(IntensityStack {
        intensities,
        fields: None,
        ..stack.clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Flavor {
    EmpiricalSingleRealization,
    EnsembleAveraged,
    Analytic,
}

/// Covariance over all shift pairs, row-major `values[i·s + j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceMap {
    pub shifts: Vec<Point>,
    pub values: Vec<f64>,
    pub stderr: Option<Vec<f64>>,
    pub flavor: Flavor,
    pub warnings: Vec<String>,
}

/// One entry of a map reduced to shift offsets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetSample {
    pub offset: Point,
    pub value: f64,
    pub stderr: Option<f64>,
    /// Number of shift pairs averaged into this entry.
    pub pairs: usize,
}

impl CovarianceMap {
    pub fn size(&self) -> usize {
        self.shifts.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size() + j]
    }

    /// Average all pairs sharing the offset `r_j - r_i` (grid steps of
    /// `grid`), sorted by offset.
    pub fn by_offset(&self, grid: &TransverseGrid) -> Result<Vec<OffsetSample>> {
        let steps: Vec<[i64; 2]> = self.shifts.iter().map(|r| grid.steps_of(*r)).collect::<Result<_>>()?;
        let mut acc: BTreeMap<[i64; 2], (f64, f64, usize)> = BTreeMap::new();
        let s = self.size();
        for i in 0..s {
            for j in 0..s {
                let key = [steps[j][0] - steps[i][0], steps[j][1] - steps[i][1]];
                let e = acc.entry(key).or_insert((0.0, 0.0, 0));
                e.0 += self.values[i * s + j];
                if let Some(se) = &self.stderr {
                    e.1 += se[i * s + j].powi(2);
                }
                e.2 += 1;
            }
        }
        let dx = grid.dx();
        Ok(acc
            .into_iter()
            .map(|(k, (sum, var, n))| OffsetSample {
                offset: [k[0] as f64 * dx, k[1] as f64 * dx],
                value: sum / n as f64,
                // pairs at one offset are strongly correlated; report the
                // mean of their errors rather than pretending independence
                stderr: self.stderr.as_ref().map(|_| (var / n as f64).sqrt()),
                pairs: n,
            })
            .collect())
    }
}

fn aperture_warning(nodes: usize, grid: &TransverseGrid, rho: f64) -> Option<String> {
    if !rho.is_finite() {
        return None;
    }
    let per_axis = (nodes as f64).powf(1.0 / grid.dim() as f64) * grid.dx() / rho;
    (per_axis < 10.0).then(|| {
        format!("aperture spans {per_axis:.1} speckle radii per axis (< 10); the empirical covariance is not self-averaging")
    })
}

fn pair_covariances(row: &[RealField], nodes: &[usize]) -> Vec<f64> {
    let s = row.len();
    let na = nodes.len() as f64;
    let centred: Vec<Vec<f64>> = row
        .iter()
        .map(|f| {
            let mean = nodes.iter().map(|&j| f.values[j]).sum::<f64>() / na;
            nodes.iter().map(|&j| f.values[j] - mean).collect()
        })
        .collect();
    let mut out = vec![0.0; s * s];
    let upper: Vec<(usize, usize, f64)> = (0..s)
        .into_par_iter()
        .flat_map_iter(|i| {
            let centred = &centred;
            (i..s).map(move |j| {
                let c = centred[i].iter().zip(&centred[j]).map(|(a, b)| a * b).sum::<f64>() / na;
                (i, j, c)
            })
        })
        .collect();
    for (i, j, c) in upper {
        out[i * s + j] = c;
        out[j * s + i] = c;
    }
    out
}

/// Empirical covariance of one realization:
/// `C_{r,r'} = ⟨I_r I_{r'}⟩_A - ⟨I_r⟩_A⟨I_{r'}⟩_A` over the aperture nodes.
/// `rho` (speckle radius, may be infinite) only drives the low-SNR warning.
pub fn empirical_covariance(stack: &IntensityStack, camera: &Camera, realization: usize, rho: f64) -> Result<CovarianceMap> {
    let row = stack.intensities.get(realization).ok_or_else(|| {
        Error::Precondition(format!(
            "realization {realization} requested from a stack of {}",
            stack.realizations()
        ))
    })?;
    let nodes = camera.nodes(&stack.grid);
    if nodes.is_empty() {
        return Err(Error::Precondition("camera aperture contains no grid node".into()));
    }
    Ok(CovarianceMap {
        shifts: stack.shifts.clone(),
        values: pair_covariances(row, &nodes),
        stderr: None,
        flavor: Flavor::EmpiricalSingleRealization,
        warnings: aperture_warning(nodes.len(), &stack.grid, rho).into_iter().collect(),
    })
}

/// Realization average of the single-realization maps with standard errors.
pub fn ensemble_covariance(stack: &IntensityStack, camera: &Camera, rho: f64) -> Result<CovarianceMap> {
    let m = stack.realizations();
    if m == 0 {
        return Err(Error::Precondition("empty stack".into()));
    }
    let maps: Vec<CovarianceMap> = (0..m)
        .map(|i| empirical_covariance(stack, camera, i, rho))
        .collect::<Result<_>>()?;
    let len = maps[0].values.len();
    let mut mean = vec![0.0; len];
    for map in &maps {
        for (a, v) in mean.iter_mut().zip(&map.values) {
            *a += v / m as f64;
        }
    }
    let stderr = if m > 1 {
        let mut var = vec![0.0; len];
        for map in &maps {
            for ((a, v), mu) in var.iter_mut().zip(&map.values).zip(&mean) {
                *a += (v - mu).powi(2) / (m - 1) as f64;
            }
        }
        Some(var.iter().map(|v| (v / m as f64).sqrt()).collect())
    } else {
        None
    };
    Ok(CovarianceMap {
        shifts: stack.shifts.clone(),
        values: mean,
        stderr,
        flavor: Flavor::EnsembleAveraged,
        warnings: maps[0].warnings.clone(),
    })
}

/// Spatial autocovariance of one intensity over observation offsets along
/// the first axis, `⟨I(x)I(x+Y)⟩ - ⟨I(x)⟩⟨I(x+Y)⟩` with `x` in the aperture.
pub fn observation_autocovariance(f: &RealField, camera: &Camera, max_steps: usize) -> Vec<f64> {
    let g = f.grid;
    let nodes = camera.nodes(&g);
    let n = g.n() as i64;
    (0..=max_steps as i64)
        .map(|s| {
            let pairs: Vec<(f64, f64)> = nodes
                .iter()
                .filter_map(|&j| {
                    let [i0, i1] = g.unflatten(j);
                    let t = i0 as i64 + s;
                    (t < n).then(|| (f.values[j], f.values[g.flatten([t as usize, i1])]))
                })
                .collect();
            let k = pairs.len() as f64;
            let (ma, mb) = (
                pairs.iter().map(|p| p.0).sum::<f64>() / k,
                pairs.iter().map(|p| p.1).sum::<f64>() / k,
            );
            pairs.iter().map(|(a, b)| (a - ma) * (b - mb)).sum::<f64>() / k
        })
        .collect()
}

/// Fit `c(Y)/c(0) = exp(-Y²/w²)` by least squares on `ln c` against `Y²`
/// over the offsets where the normalized curve exceeds `floor`; returns `w`.
pub fn fit_gaussian_width(offsets: &[f64], values: &[f64], floor: f64) -> Result<f64> {
    let c0 = values.first().copied().unwrap_or(0.0);
    if !(c0 > 0.0) {
        return Err(Error::numerical("speckle radius fit", format!("non-positive zero-offset value {c0}")));
    }
    let pts: Vec<(f64, f64)> = offsets
        .iter()
        .zip(values)
        .map(|(y, v)| (y * y, v / c0))
        .take_while(|(_, v)| *v > floor)
        .map(|(y2, v)| (y2, v.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::numerical(
            "speckle radius fit",
            format!("only {} offsets above {floor} of the peak; refine the grid", pts.len()),
        ));
    }
    // slope through the origin: ln c = -Y²/w²
    let num: f64 = pts.iter().map(|(x, y)| x * y).sum();
    let den: f64 = pts.iter().map(|(x, _)| x * x).sum();
    let slope = num / den;
    if !(slope < 0.0) {
        let residuals: Vec<String> = pts.iter().map(|(x, y)| format!("{:.3e}", y - slope * x)).collect();
        return Err(Error::numerical(
            "speckle radius fit",
            format!("non-decaying fit (slope {slope:.3e}); residuals [{}]", residuals.join(", ")),
        ));
    }
    Ok((-1.0 / slope).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeckleDiagnostics {
    /// Fitted `w` in `exp(-|Y₀|²/w²)`; equals `2ρ` in theory.
    pub decay_width: f64,
    pub speckle_radius_fit: f64,
    /// `Var(I)/E[I]²`: over realizations node by node when there are
    /// several, else over the aperture.
    pub contrast: f64,
    /// Predicted relative fluctuation of the empirical covariance,
    /// `(ρ/R_A)^{d/2}`, when the speckle radius is known.
    pub predicted_relative_fluctuation: Option<f64>,
    /// Observed relative spread of `C_{r,r}` across realizations.
    pub observed_relative_fluctuation: Option<f64>,
}

/// Speckle radius, contrast and SNR for the first shift of the stack.
/// `rho` is the theoretical speckle radius (infinite if unknown).
pub fn speckle_diagnostics(stack: &IntensityStack, camera: &Camera, rho: f64) -> Result<SpeckleDiagnostics> {
    let g = stack.grid;
    let m = stack.realizations();
    if m == 0 {
        return Err(Error::Precondition("empty stack".into()));
    }
    let nodes = camera.nodes(&g);
    if nodes.is_empty() {
        return Err(Error::Precondition("camera aperture contains no grid node".into()));
    }
    let max_steps = ((camera.radius / g.dx()) as usize / 2).max(4);
    let mut curve = vec![0.0; max_steps + 1];
    for row in &stack.intensities {
        for (a, v) in curve.iter_mut().zip(observation_autocovariance(&row[0], camera, max_steps)) {
            *a += v / m as f64;
        }
    }
    let offsets: Vec<f64> = (0..=max_steps).map(|s| s as f64 * g.dx()).collect();
    let width = fit_gaussian_width(&offsets, &curve, 0.05)?;
    let contrast = if m > 1 {
        let mut acc = 0.0;
        for &j in &nodes {
            let vals: Vec<f64> = stack.intensities.iter().map(|row| row[0].values[j]).collect();
            let mean = vals.iter().sum::<f64>() / m as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
            acc += if mean > 0.0 { var / (mean * mean) } else { 0.0 };
        }
        acc / nodes.len() as f64
    } else {
        let vals: Vec<f64> = nodes.iter().map(|&j| stack.intensities[0][0].values[j]).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        var / (mean * mean)
    };
    let predicted = rho.is_finite().then(|| (rho / camera.radius).powf(g.dim() as f64 / 2.0));
    let observed = (m > 1)
        .then(|| {
            let c: Vec<f64> = (0..m)
                .map(|i| empirical_covariance(stack, camera, i, rho).map(|map| map.get(0, 0)))
                .collect::<Result<_>>()?;
            let mean = c.iter().sum::<f64>() / m as f64;
            let sd = (c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64).sqrt();
            Ok::<f64, Error>(sd / mean)
        })
        .transpose()?;
    Ok(SpeckleDiagnostics {
        decay_width: width,
        speckle_radius_fit: width / 2.0,
        contrast,
        predicted_relative_fluctuation: predicted,
        observed_relative_fluctuation: observed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussianity {
    /// `⟨|E[E²]|⟩ / ⟨E[|E|²]⟩` over the aperture, expectations over realizations.
    pub ratio: f64,
    /// 95% bootstrap interval over realizations.
    pub ci: [f64; 2],
}

fn pseudo_variance_ratio(samples: &[&[Complex64]]) -> f64 {
    let nodes = samples[0].len();
    let m = samples.len() as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for j in 0..nodes {
        let mut e2 = Complex64::new(0.0, 0.0);
        let mut p = 0.0;
        for s in samples {
            e2 += s[j] * s[j];
            p += s[j].norm_sqr();
        }
        num += (e2 / m).norm();
        den += p / m;
    }
    num / den
}

/// Pseudo-variance ratio of the retained fields at the first shift:
/// 1 for a deterministic field, near 0 for circular Gaussian statistics.
pub fn gaussianity_diagnostic(stack: &IntensityStack, camera: &Camera, bootstrap: usize) -> Result<Gaussianity> {
    let fields = stack
        .fields
        .as_ref()
        .ok_or_else(|| Error::Unavailable("complex fields were not retained; rerun with keep_fields".into()))?;
    let nodes = camera.nodes(&stack.grid);
    let samples: Vec<Vec<Complex64>> = fields
        .iter()
        .map(|row| nodes.iter().map(|&j| row[0].values[j]).collect())
        .collect();
    gaussianity_of_samples(&samples, stack.seed, bootstrap)
}

/// [`gaussianity_diagnostic`] on raw samples, `samples[realization][node]`.
pub fn gaussianity_of_samples(samples: &[Vec<Complex64>], seed: u64, bootstrap: usize) -> Result<Gaussianity> {
    if samples.is_empty() || samples[0].is_empty() {
        return Err(Error::Precondition("no samples".into()));
    }
    let all: Vec<&[Complex64]> = samples.iter().map(|s| s.as_slice()).collect();
    let ratio = pseudo_variance_ratio(&all);
    let mut rng = SeedTree::new(seed).auxiliary(Purpose::Bootstrap, 0);
    let m = samples.len();
    let mut boot: Vec<f64> = (0..bootstrap)
        .map(|_| {
            let pick: Vec<&[Complex64]> = (0..m).map(|_| all[rng.random_range(0..m)]).collect();
            pseudo_variance_ratio(&pick)
        })
        .collect();
    boot.sort_by(f64::total_cmp);
    let ci = if boot.is_empty() {
        [ratio, ratio]
    } else {
        let q = |p: f64| boot[((p * (boot.len() - 1) as f64).round() as usize).min(boot.len() - 1)];
        [q(0.025), q(0.975)]
    };
    Ok(Gaussianity { ratio, ci })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidTrack {
    pub centroids: Vec<Point>,
    pub mean: Point,
    /// Per-axis sample variance.
    pub variance: Point,
    /// Approximate 95% interval of each per-axis variance (normal theory).
    pub variance_ci: [[f64; 2]; 2],
}

/// Intensity-weighted centroid of one field.
pub fn centroid(f: &RealField) -> Point {
    let g = f.grid;
    let mut acc = [0.0, 0.0];
    let mut total = 0.0;
    for (j, v) in f.values.iter().enumerate() {
        let p = g.point(j);
        acc[0] += v * p[0];
        acc[1] += v * p[1];
        total += v;
    }
    [acc[0] / total, acc[1] / total]
}

/// Fraction of the power within `width` nodes of the box edge.
fn edge_fraction(f: &RealField, width: usize) -> f64 {
    let g = f.grid;
    let n = g.n();
    let mut edge = 0.0;
    let mut total = 0.0;
    for (j, v) in f.values.iter().enumerate() {
        let idx = g.unflatten(j);
        let near = (0..g.dim()).any(|a| idx[a] < width || idx[a] >= n - width);
        if near {
            edge += v;
        }
        total += v;
    }
    edge / total
}

/// Centroids of the first-shift intensity of every realization.
pub fn centroid_track(stack: &IntensityStack) -> Result<CentroidTrack> {
    let m = stack.realizations();
    if m == 0 {
        return Err(Error::Precondition("empty stack".into()));
    }
    let width = (stack.grid.n() / 20).max(1);
    for (i, row) in stack.intensities.iter().enumerate() {
        let frac = edge_fraction(&row[0], width);
        if frac > 1e-3 {
            return Err(Error::Precondition(format!(
                "realization {i}: {:.2}% of the power lies within {width} nodes of the box edge; the beam is clipped",
                100.0 * frac
            )));
        }
    }
    let centroids: Vec<Point> = stack.intensities.iter().map(|row| centroid(&row[0])).collect();
    let mean = [0, 1].map(|a| centroids.iter().map(|c| c[a]).sum::<f64>() / m as f64);
    let variance = [0, 1].map(|a| {
        if m < 2 {
            0.0
        } else {
            centroids.iter().map(|c| (c[a] - mean[a]).powi(2)).sum::<f64>() / (m - 1) as f64
        }
    });
    let half = if m > 1 { 1.96 * (2.0 / (m - 1) as f64).sqrt() } else { f64::INFINITY };
    let variance_ci = [0, 1].map(|a| [variance[a] * (1.0 - half).max(0.0), variance[a] * (1.0 + half)]);
    Ok(CentroidTrack {
        centroids,
        mean,
        variance,
        variance_ci,
    })
}

/// Translate a field by a continuous offset (spectral phase ramp).
pub fn translate(f: &RealField, by: Point) -> RealField {
    let g = f.grid;
    let mut spec = forward_transform(&f.to_complex());
    for (m, v) in spec.values.iter_mut().enumerate() {
        let k = g.wavevector(m);
        *v *= Complex64::from_polar(1.0, -(k[0] * by[0] + k[1] * by[1]));
    }
    RealField {
        grid: g,
        values: inverse_transform(&spec).values.iter().map(|v| v.re).collect(),
    }
}

/// Mean relative L² distance between each realization's first-shift
/// intensity, re-centred on its centroid, and `reference` re-centred on its own.
pub fn recentered_profile_error(stack: &IntensityStack, reference: &RealField) -> Result<f64> {
    stack.grid.ensure_same(&reference.grid)?;
    let c_ref = centroid(reference);
    let reference = translate(reference, [-c_ref[0], -c_ref[1]]);
    let norm = reference.values.iter().map(|v| v * v).sum::<f64>().sqrt();
    let errs: Vec<f64> = stack
        .intensities
        .par_iter()
        .map(|row| {
            let c = centroid(&row[0]);
            let moved = translate(&row[0], [-c[0], -c[1]]);
            moved
                .values
                .iter()
                .zip(&reference.values)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
                / norm
        })
        .collect();
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

/// Pearson correlation of two equally long samples.
pub fn normalized_correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len()) as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Analytic counterpart of an offset-reduced map: `𝒵^{ρo}|V(Δr)|²` at each offset.
pub fn analytic_offsets(
    samples: &[OffsetSample],
    mask: &ComplexField,
    pixel: f64,
    medium: &MediumModel,
    k0: f64,
    ell: f64,
) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|s| analytic::predicted_covariance_map(mask, s.offset, pixel, medium, k0, ell))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagator::propagate;

    fn g1(n: usize, dx: f64) -> TransverseGrid {
        TransverseGrid::new(1, n, dx).unwrap()
    }

    fn base_config(medium: Option<MediumModel>) -> ExperimentConfig {
        let g = g1(128, 0.25);
        ExperimentConfig {
            mask: ComplexField::from_real_fn(g, |p| (-p[0] * p[0] / 2.0).exp()),
            shifts: vec![[0.0, 0.0], [1.0, 0.0], [-0.5, 0.0]],
            k0: 4.0,
            ell: 1.0,
            nz: 8,
            splitting: Splitting::Strang,
            medium,
            camera: Camera { center: [0.0, 0.0], radius: 6.0 },
            pixel: 0.0,
            realizations: 3,
            seed: 11,
            keep_fields: true,
        }
    }

    #[test]
    fn homogeneous_scan_is_shift_equivariant() {
        let cfg = base_config(None);
        let stack = run_experiment(&cfg).unwrap();
        let base = &stack.intensities[0][0];
        let moved = &stack.intensities[0][1];
        let expect = base.rolled([4, 0]);
        for (a, b) in moved.values.iter().zip(&expect.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_realization_matches_direct_propagation() {
        let mut cfg = base_config(Some(MediumModel::gaussian(1.0, 1.0).unwrap()));
        cfg.realizations = 1;
        cfg.shifts = vec![[1.0, 0.0]];
        cfg.camera.radius = 4.0;
        let stack = run_experiment(&cfg).unwrap();
        let direct = propagate(
            &make_incident(&cfg.mask, [1.0, 0.0]).unwrap(),
            &cfg.plan().unwrap(),
            &SeedTree::new(cfg.seed).realization(0),
        )
        .unwrap();
        assert_eq!(stack.intensities[0][0], direct.intensity());
    }

    #[test]
    fn shift_order_does_not_change_the_stack() {
        let mut cfg = base_config(Some(MediumModel::gaussian(1.0, 1.0).unwrap()));
        cfg.camera.radius = 4.0;
        let a = run_experiment(&cfg).unwrap();
        cfg.shifts.reverse();
        let b = run_experiment(&cfg).unwrap();
        for (ra, rb) in a.intensities.iter().zip(&b.intensities) {
            for (i, f) in ra.iter().enumerate() {
                assert_eq!(f, &rb[ra.len() - 1 - i]);
            }
        }
    }

    #[test]
    fn invalid_configs_are_rejected_before_compute() {
        let mut cfg = base_config(None);
        cfg.shifts.push([0.1, 0.0]);
        assert!(matches!(run_experiment(&cfg), Err(Error::Configuration(_))));
        let mut cfg = base_config(None);
        cfg.camera.radius = 40.0;
        assert!(matches!(run_experiment(&cfg), Err(Error::Configuration(_))));
        let mut cfg = base_config(None);
        cfg.realizations = 0;
        assert!(run_experiment(&cfg).is_err());
    }

    #[test]
    fn smoothing_identities() {
        let g = g1(256, 0.1);
        let f = RealField::new(g, vec![2.5; 256]).unwrap();
        let s = smooth_field(&f, 0.7);
        assert!(s.values.iter().all(|v| (v - 2.5).abs() < 1e-12));
        assert_eq!(smooth_field(&f, 0.0), f);
        let (a, rho) = (1.0, 0.6);
        let bump = RealField::new(g, g.sample(|p| (-p[0] * p[0] / (2.0 * a * a)).exp())).unwrap();
        let out = smooth_field(&bump, rho);
        let w2 = a * a + rho * rho;
        for (j, v) in out.values.iter().enumerate() {
            let x = g.point(j)[0];
            let expect = a / w2.sqrt() * (-x * x / (2.0 * w2)).exp();
            assert!((v - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn toy_covariance_matches_direct_summation() {
        let g = g1(8, 1.0);
        let a = RealField::new(g, vec![1.0, 2.0, 0.0, 3.0, 1.0, 4.0, 2.0, 0.5]).unwrap();
        let b = RealField::new(g, vec![0.0, 1.0, 1.0, 2.0, 5.0, 1.0, 0.0, 3.0]).unwrap();
        let stack = IntensityStack::from_intensities(g, vec![[0.0, 0.0], [1.0, 0.0]], vec![vec![a.clone(), b.clone()]]).unwrap();
        let cam = Camera { center: [0.0, 0.0], radius: 10.0 };
        let map = empirical_covariance(&stack, &cam, 0, f64::INFINITY).unwrap();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (ma, mb) = (mean(&a.values), mean(&b.values));
        let cab = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum::<f64>() / 8.0 - ma * mb;
        let caa = a.values.iter().map(|x| x * x).sum::<f64>() / 8.0 - ma * ma;
        assert!((map.get(0, 1) - cab).abs() < 1e-14);
        assert!((map.get(1, 0) - cab).abs() < 1e-14);
        assert!((map.get(0, 0) - caa).abs() < 1e-14);
        let flat = RealField::new(g, vec![3.0; 8]).unwrap();
        let stack = IntensityStack::from_intensities(g, vec![[0.0, 0.0]], vec![vec![flat]]).unwrap();
        assert_eq!(empirical_covariance(&stack, &cam, 0, f64::INFINITY).unwrap().values, vec![0.0]);
    }

    #[test]
    fn offsets_average_equal_lags() {
        let map = CovarianceMap {
            shifts: vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]],
            values: vec![4.0, 2.0, 1.0, 2.0, 6.0, 3.0, 1.0, 3.0, 5.0],
            stderr: None,
            flavor: Flavor::EmpiricalSingleRealization,
            warnings: vec![],
        };
        let off = map.by_offset(&g1(8, 1.0)).unwrap();
        let at = |q: f64| off.iter().find(|s| s.offset[0] == q).unwrap();
        assert_eq!(at(0.0).value, 5.0);
        assert_eq!(at(1.0).value, 2.5);
        assert_eq!(at(-2.0).value, 1.0);
        assert_eq!(at(1.0).pairs, 2);
    }

    #[test]
    fn width_fit_recovers_a_gaussian() {
        let ys: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
        let vs: Vec<f64> = ys.iter().map(|y| 3.0 * (-y * y / 1.44).exp()).collect();
        assert!((fit_gaussian_width(&ys, &vs, 0.05).unwrap() - 1.2).abs() < 1e-10);
        assert!(fit_gaussian_width(&ys, &vec![1.0; 30], 0.05).is_err());
    }

    #[test]
    fn homogeneous_diagnostics() {
        let cfg = base_config(None);
        let stack = run_experiment(&cfg).unwrap();
        let gauss = gaussianity_diagnostic(&stack, &cfg.camera, 50).unwrap();
        assert!((gauss.ratio - 1.0).abs() < 1e-12);
        let track = centroid_track(&stack).unwrap();
        assert!(track.variance[0] < 1e-20);
        let plain = IntensityStack { fields: None, ..stack };
        assert!(matches!(gaussianity_diagnostic(&plain, &cfg.camera, 10), Err(Error::Unavailable(_))));
    }

    #[test]
    fn circular_gaussian_samples_have_small_pseudo_variance() {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = SeedTree::new(5).auxiliary(Purpose::Synthetic, 0);
        let samples: Vec<Vec<Complex64>> = (0..10_000)
            .map(|_| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                vec![Complex64::new(re, im)]
            })
            .collect();
        let g = gaussianity_of_samples(&samples, 1, 100).unwrap();
        assert!(g.ratio < 0.05, "{}", g.ratio);
        assert!(g.ci[0] <= g.ratio && g.ratio <= g.ci[1] + 1e-12);
    }

    #[test]
    fn clipped_beam_is_rejected() {
        let g = g1(64, 0.25);
        let wide = RealField::new(g, vec![1.0; 64]).unwrap();
        let stack = IntensityStack::from_intensities(g, vec![[0.0, 0.0]], vec![vec![wide]]).unwrap();
        assert!(matches!(centroid_track(&stack), Err(Error::Precondition(_))));
    }

    #[test]
    fn correlation_limits() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!((normalized_correlation(&a, &[2.0, 4.0, 6.0, 8.0]) - 1.0).abs() < 1e-15);
        assert!((normalized_correlation(&a, &[4.0, 3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
    }
}
