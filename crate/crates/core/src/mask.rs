//! Parametric mask shapes.
//!
//! Edges are half-open, `[c - a/2, c + a/2)`, so a slit of width `a` on a
//! grid with `a/dx` integral lights exactly `a/dx` nodes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use num_complex::Complex64;

use crate::grid::{forward_transform, inverse_transform, ComplexField, Point, TransverseGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum MaskShape {
    /// `exp(-|x|²/(2r²))`.
    Gaussian { radius: f64 },
    /// Width along the first axis, height along the second (d = 2).
    Rectangle { width: f64, height: f64 },
    /// Two slits of width `slit_width` centred at `±separation/2` on the
    /// first axis, each `height` tall in d = 2.
    DoubleSlit { slit_width: f64, separation: f64, height: f64 },
    Disk { radius: f64 },
}

fn inside(x: f64, c: f64, a: f64) -> bool {
    // edges that fall on a node up to rounding keep the half-open rule
    let tol = 1e-9 * a;
    x >= c - a / 2.0 - tol && x < c + a / 2.0 - tol
}

impl MaskShape {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Configuration(format!("mask {name} must be positive, got {v}")))
            }
        };
        match *self {
            MaskShape::Gaussian { radius } | MaskShape::Disk { radius } => positive("radius", radius),
            MaskShape::Rectangle { width, height } => positive("width", width).and(positive("height", height)),
            MaskShape::DoubleSlit {
                slit_width,
                separation,
                height,
            } => {
                positive("slit_width", slit_width)?;
                positive("height", height)?;
                if separation <= slit_width {
                    return Err(Error::Configuration(format!(
                        "slit separation {separation} must exceed the slit width {slit_width}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Amplitude at `p`; the second coordinate is ignored when `dim == 1`.
    pub fn value(&self, p: Point, dim: usize) -> f64 {
        let y_ok = |h: f64| dim == 1 || inside(p[1], 0.0, h);
        let lit = |b: bool| if b { 1.0 } else { 0.0 };
        match *self {
            MaskShape::Gaussian { radius } => {
                let r2 = p[0] * p[0] + if dim == 2 { p[1] * p[1] } else { 0.0 };
                (-r2 / (2.0 * radius * radius)).exp()
            }
            MaskShape::Rectangle { width, height } => lit(inside(p[0], 0.0, width) && y_ok(height)),
            MaskShape::DoubleSlit {
                slit_width,
                separation,
                height,
            } => {
                let c = separation / 2.0;
                lit((inside(p[0], -c, slit_width) || inside(p[0], c, slit_width)) && y_ok(height))
            }
            MaskShape::Disk { radius } => {
                let r2 = p[0] * p[0] + if dim == 2 { p[1] * p[1] } else { 0.0 };
                lit(r2 < radius * radius)
            }
        }
    }

    pub fn sample(&self, grid: TransverseGrid) -> ComplexField {
        let d = grid.dim();
        ComplexField::from_real_fn(grid, |p| self.value(p, d))
    }

    /// Samples with every wavevector beyond `fraction` of the grid Nyquist
    /// radius removed. Hard edges otherwise put power right up to the band
    /// edge, where any random tilt folds it back through the periodic
    /// spectrum.
    pub fn sample_band_limited(&self, grid: TransverseGrid, fraction: f64) -> ComplexField {
        let cutoff = fraction * std::f64::consts::PI / grid.dx();
        let mut spec = forward_transform(&self.sample(grid));
        for (m, v) in spec.values.iter_mut().enumerate() {
            let k = grid.wavevector(m);
            if k[0].hypot(k[1]) > cutoff {
                *v = Complex64::new(0.0, 0.0);
            }
        }
        inverse_transform(&spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slit_lights_exact_node_counts() {
        let g = TransverseGrid::new(1, 128, 1.0).unwrap();
        let u = MaskShape::DoubleSlit { slit_width: 4.0, separation: 16.0, height: 1.0 }.sample(g);
        let lit: Vec<f64> = (0..128).filter(|&j| u.values[j].re > 0.0).map(|j| g.point(j)[0]).collect();
        assert_eq!(lit, vec![-10.0, -9.0, -8.0, -7.0, 6.0, 7.0, 8.0, 9.0]);
    }

    #[test]
    fn rectangle_in_two_dimensions() {
        let g = TransverseGrid::new(2, 16, 0.5).unwrap();
        let u = MaskShape::Rectangle { width: 2.0, height: 1.0 }.sample(g);
        assert_eq!(u.values.iter().filter(|v| v.re > 0.0).count(), 4 * 2);
    }

    #[test]
    fn band_limit_keeps_mass_and_removes_high_wavenumbers() {
        let g = TransverseGrid::new(1, 256, 0.1).unwrap();
        let shape = MaskShape::Rectangle { width: 2.0, height: 1.0 };
        let u = shape.sample_band_limited(g, 0.5);
        let sum = |f: &ComplexField| f.values.iter().sum::<Complex64>();
        assert!((sum(&u) - sum(&shape.sample(g))).norm() < 1e-9);
        let spec = forward_transform(&u);
        for (m, v) in spec.values.iter().enumerate() {
            if g.wavenumber(m).abs() > 0.5 * std::f64::consts::PI / g.dx() {
                assert!(v.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn validation() {
        assert!(MaskShape::DoubleSlit { slit_width: 2.0, separation: 1.0, height: 1.0 }.validate().is_err());
        assert!(MaskShape::Gaussian { radius: -1.0 }.validate().is_err());
        assert!(MaskShape::Disk { radius: 1.0 }.validate().is_ok());
    }
}
