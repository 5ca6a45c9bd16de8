//! Ellipse-based synthetic head phantom with known tissue masks.
//!
//! The geometry is fixed; only per-volume intensity modulation depends on
//! the seed, so masks can be derived from the dimensions alone.

use rand::Rng;

use super::Volume4D;
use crate::error::{Error, Result};
use crate::grid::Mask;
use crate::rng::Prng;

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    angle: f64,
    value: f64,
}

impl Ellipse {
    const fn new(cx: f64, cy: f64, a: f64, b: f64, angle_deg: f64, value: f64) -> Self {
        Self {
            cx,
            cy,
            a,
            b,
            angle: angle_deg,
            value,
        }
    }

    /// Normalised radius squared of `(u, v)` for the ellipse scaled by `s`.
    fn radius2(&self, u: f64, v: f64, s: f64) -> f64 {
        let (sin, cos) = self.angle.to_radians().sin_cos();
        let du = u - self.cx * s;
        let dv = v - self.cy * s;
        let p = (du * cos + dv * sin) / (self.a * s);
        let q = (-du * sin + dv * cos) / (self.b * s);
        p * p + q * q
    }
}

// Painted in order; later entries overwrite earlier ones.
const HEAD: usize = 0;
const WHITE_MATTER: usize = 2;
const TRACT: usize = 5;
const ELLIPSES: [Ellipse; 7] = [
    Ellipse::new(0.0, 0.0, 0.70, 0.90, 0.0, 0.40),
    Ellipse::new(0.0, 0.0, 0.60, 0.80, 0.0, 0.55),
    Ellipse::new(0.0, -0.05, 0.42, 0.56, 0.0, 0.78),
    Ellipse::new(-0.15, 0.22, 0.08, 0.22, 18.0, 0.15),
    Ellipse::new(0.15, 0.22, 0.08, 0.22, -18.0, 0.15),
    Ellipse::new(0.0, -0.33, 0.28, 0.14, 0.0, 0.95),
    Ellipse::new(0.36, -0.42, 0.07, 0.07, 0.0, 0.65),
];

/// Relative amplitude of the per-volume intensity modulation.
const MODULATION: f64 = 0.04;

fn pixel_coords(r: usize, c: usize, h: usize, w: usize) -> (f64, f64) {
    (
        (c as f64 + 0.5) / w as f64 * 2.0 - 1.0,
        (r as f64 + 0.5) / h as f64 * 2.0 - 1.0,
    )
}

/// Cross-section scale of slice `i`: an ellipsoid cut between z = -0.6 and 0.6.
fn slice_scale(i: usize, d: usize) -> f64 {
    let z = if d > 1 {
        -0.6 + 1.2 * i as f64 / (d - 1) as f64
    } else {
        0.0
    };
    (1.0 - z * z).sqrt()
}

fn check_dims(w: usize, h: usize, d: usize) -> Result<()> {
    if w < 8 || h < 8 || d < 1 {
        return Err(Error::Config(format!(
            "phantom needs w, h >= 8 and d >= 1, got {w}x{h}x{d}"
        )));
    }
    Ok(())
}

/// Normalised phantom: background exactly -1, volumes share geometry and
/// differ by a small seeded modulation of white-matter and tract intensity.
pub fn make_phantom(w: usize, h: usize, d: usize, l: usize, seed: u64) -> Result<Volume4D> {
    check_dims(w, h, d)?;
    if l < 2 {
        return Err(Error::Config(format!("phantom needs l >= 2, got {l}")));
    }
    let root = Prng::new(seed);
    let mut values = Vec::with_capacity(w * h * d * l);
    for j in 0..l {
        let mut rng = root.split("phantom-volume", &[j as u64]);
        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let mut gains = [1.0; ELLIPSES.len()];
        gains[WHITE_MATTER] = 1.0 + MODULATION * phase.cos();
        gains[TRACT] = 1.0 + MODULATION * phase.sin();
        for i in 0..d {
            let s = slice_scale(i, d);
            for r in 0..h {
                for c in 0..w {
                    let (u, v) = pixel_coords(r, c, h, w);
                    let mut value = 0.0;
                    for (k, e) in ELLIPSES.iter().enumerate() {
                        if e.radius2(u, v, s) <= 1.0 {
                            value = e.value * gains[k];
                        }
                    }
                    if value > 0.0 {
                        // smooth shading across the head
                        value *= 1.0 + 0.08 * u + 0.05 * v;
                    }
                    values.push(value as f32);
                }
            }
        }
    }
    Volume4D::new(w, h, d, l, values, false)?.normalize()
}

/// `(signal, background)` masks valid on every slice: signal lies inside the
/// bright tract ellipse on all slices, background outside the head on all
/// slices, each with a safety margin.
pub fn phantom_masks(w: usize, h: usize, d: usize) -> Result<(Mask, Mask)> {
    check_dims(w, h, d)?;
    let scales: Vec<f64> = (0..d).map(|i| slice_scale(i, d)).collect();
    let tract = ELLIPSES[TRACT];
    let head = ELLIPSES[HEAD];
    let signal = Mask::from_fn(h, w, |r, c| {
        let (u, v) = pixel_coords(r, c, h, w);
        scales.iter().all(|&s| tract.radius2(u, v, s) <= 0.8)
    });
    let background = Mask::from_fn(h, w, |r, c| {
        let (u, v) = pixel_coords(r, c, h, w);
        scales.iter().all(|&s| head.radius2(u, v, s) >= 1.25)
    });
    Ok((signal, background))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_in_seed() {
        let a = make_phantom(32, 32, 4, 3, 9).unwrap();
        let b = make_phantom(32, 32, 4, 3, 9).unwrap();
        assert_eq!(a, b);
        let c = make_phantom(32, 32, 4, 3, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn normalized_with_large_background() {
        let v = make_phantom(32, 32, 4, 2, 1).unwrap();
        assert!(v.is_normalized());
        assert_eq!(v.min_max(), (-1.0, 1.0));
        let bg = v.values().iter().filter(|&&x| x == -1.0).count();
        assert!(bg as f64 > 0.3 * v.values().len() as f64, "{bg}");
    }

    #[test]
    fn volumes_share_support() {
        let v = make_phantom(32, 32, 4, 2, 3).unwrap();
        for i in 0..4 {
            let a = v.slice(i, 0).unwrap();
            let b = v.slice(i, 1).unwrap();
            let sa: Vec<bool> = a.as_slice().iter().map(|&x| x > -1.0).collect();
            let sb: Vec<bool> = b.as_slice().iter().map(|&x| x > -1.0).collect();
            assert_eq!(sa, sb);
            assert_ne!(a, b);
        }
    }

    #[test]
    fn edge_slices_hold_less_tissue() {
        let v = make_phantom(32, 32, 5, 2, 3).unwrap();
        let tissue = |i| v.slice(i, 0).unwrap().as_slice().iter().filter(|&&x| x > -1.0).count();
        assert!(tissue(0) < tissue(2));
        assert!(tissue(4) < tissue(2));
    }

    #[test]
    fn masks_fall_on_expected_tissue() {
        let (w, h, d) = (32, 32, 4);
        let v = make_phantom(w, h, d, 2, 5).unwrap();
        let (signal, background) = phantom_masks(w, h, d).unwrap();
        assert!(signal.count() >= 10, "{}", signal.count());
        assert!(background.count() >= 100);
        assert!(signal.is_disjoint(&background));
        for i in 0..d {
            for j in 0..2 {
                let s = v.slice(i, j).unwrap();
                for r in 0..h {
                    for c in 0..w {
                        if background.get(r, c) {
                            assert_eq!(s.get(r, c), -1.0);
                        }
                        if signal.get(r, c) {
                            assert!(s.get(r, c) > 0.5, "({i},{j},{r},{c}) = {}", s.get(r, c));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_small_dims() {
        assert!(make_phantom(4, 32, 4, 2, 0).is_err());
        assert!(make_phantom(32, 32, 4, 1, 0).is_err());
    }
}
