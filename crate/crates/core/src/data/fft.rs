//! 2D DFT over complex grids (row-major, `h` rows of `w`) with power-of-two sides.

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use crate::error::{Error, Result};

fn check_pow2(n: usize) -> Result<()> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(n));
    }
    Ok(())
}

fn transform_2d(data: &[Complex64], h: usize, w: usize, inverse: bool) -> Result<Vec<Complex64>> {
    check_pow2(h)?;
    check_pow2(w)?;
    if data.len() != h * w {
        return Err(Error::ShapeMismatch {
            expected: (h, w),
            got: (data.len(), 1),
        });
    }
    let direction = if inverse {
        FftDirection::Inverse
    } else {
        FftDirection::Forward
    };
    let mut planner = FftPlanner::new();
    let mut out = data.to_vec();
    planner.plan_fft(w, direction).process(&mut out);
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    let col_fft = planner.plan_fft(h, direction);
    for c in 0..w {
        for r in 0..h {
            col[r] = out[r * w + c];
        }
        col_fft.process(&mut col);
        for r in 0..h {
            out[r * w + c] = col[r];
        }
    }
    if inverse {
        let scale = 1.0 / (h * w) as f64;
        out.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(out)
}

/// Forward 2D DFT, `X[u,v] = sum x[r,c] exp(-2 pi i (u r / h + v c / w))`.
pub fn dft2(data: &[Complex64], h: usize, w: usize) -> Result<Vec<Complex64>> {
    transform_2d(data, h, w, false)
}

/// Inverse of [`dft2`], including the `1 / (h w)` factor.
pub fn idft2(data: &[Complex64], h: usize, w: usize) -> Result<Vec<Complex64>> {
    transform_2d(data, h, w, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use std::f64::consts::PI;

    fn naive_dft2(data: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); h * w];
        for u in 0..h {
            for v in 0..w {
                let mut acc = Complex64::new(0.0, 0.0);
                for r in 0..h {
                    for c in 0..w {
                        let phase = -2.0 * PI * ((u * r) as f64 / h as f64 + (v * c) as f64 / w as f64);
                        acc += data[r * w + c] * Complex64::from_polar(1.0, phase);
                    }
                }
                out[u * w + v] = acc;
            }
        }
        out
    }

    fn random_grid(h: usize, w: usize, seed: u64) -> Vec<Complex64> {
        let mut rng = crate::Prng::new(seed);
        (0..h * w)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    fn max_rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
        let scale = b.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1e-300);
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max) / scale
    }

    #[test]
    fn matches_naive_dft() {
        for (h, w) in [(16, 16), (8, 32), (1, 4)] {
            let x = random_grid(h, w, 11);
            let fast = dft2(&x, h, w).unwrap();
            assert!(max_rel_err(&fast, &naive_dft2(&x, h, w)) < 1e-9, "{h}x{w}");
        }
    }

    #[test]
    fn round_trip_and_parseval() {
        let (h, w) = (32, 16);
        let x = random_grid(h, w, 5);
        let spec = dft2(&x, h, w).unwrap();
        let back = idft2(&spec, h, w).unwrap();
        assert!(max_rel_err(&back, &x) < 1e-9);
        let e_time: f64 = x.iter().map(|v| v.norm_sqr()).sum();
        let e_freq: f64 = spec.iter().map(|v| v.norm_sqr()).sum::<f64>() / (h * w) as f64;
        assert!((e_time - e_freq).abs() / e_time < 1e-9);
    }

    #[test]
    fn delta_has_flat_spectrum() {
        let mut x = vec![Complex64::new(0.0, 0.0); 64];
        x[0] = Complex64::new(1.0, 0.0);
        for v in dft2(&x, 8, 8).unwrap() {
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_concentrates_at_dc() {
        let x = vec![Complex64::new(0.5, 0.0); 64];
        let spec = dft2(&x, 8, 8).unwrap();
        assert!((spec[0] - Complex64::new(32.0, 0.0)).norm() < 1e-12);
        assert!(spec[1..].iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn rejects_non_power_of_two() {
        let x = vec![Complex64::new(0.0, 0.0); 12 * 8];
        assert!(matches!(dft2(&x, 12, 8), Err(Error::NotPowerOfTwo(12))));
        assert!(idft2(&x, 8, 12).is_err());
    }
}
