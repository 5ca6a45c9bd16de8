//! Noisy-measurement simulation, image domain or complex k-space.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::fft::{dft2, idft2};
use super::Volume4D;
use crate::error::{Error, Result};
use crate::rng::Prng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    ImageGaussian,
    KspaceComplex,
}

#[derive(Debug, Clone)]
pub struct SimulatedPair {
    pub clean: Volume4D,
    pub noisy: Volume4D,
    pub noise_std: f64,
    pub mode: NoiseMode,
}

/// Corrupts every volume of `clean` with an independent noise realisation.
///
/// In k-space mode each slice is mapped from `[-1, 1]` to magnitude
/// `[0, 1]`, transformed, perturbed with complex Gaussian noise scaled so the
/// image-domain noise per real/imaginary part has std `noise_std / 2`, and
/// the magnitude of the inverse transform is mapped back, giving
/// `noise_std` on the `[-1, 1]` scale.
pub fn simulate_noise(
    clean: &Volume4D,
    noise_std: f64,
    mode: NoiseMode,
    seed: u64,
) -> Result<SimulatedPair> {
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(Error::Config(format!(
            "noise_std must be finite and non-negative, got {noise_std}"
        )));
    }
    let (w, h, d, l) = clean.dims();
    if mode == NoiseMode::KspaceComplex {
        for n in [w, h] {
            if !n.is_power_of_two() {
                return Err(Error::NotPowerOfTwo(n));
            }
        }
    }
    let root = Prng::new(seed);
    let mut noisy = clean.clone().with_normalized_flag(false);
    for j in 0..l {
        let mut rng = root.split("noise-volume", &[j as u64]);
        for i in 0..d {
            let slice = clean.slice(i, j)?;
            let out = match mode {
                NoiseMode::ImageGaussian => slice.map(|v| {
                    let z: f64 = rng.sample(StandardNormal);
                    v + noise_std * z
                }),
                NoiseMode::KspaceComplex => {
                    let img: Vec<Complex64> = slice
                        .as_slice()
                        .iter()
                        .map(|&v| Complex64::new((v + 1.0) * 0.5, 0.0))
                        .collect();
                    let mut k = dft2(&img, h, w)?;
                    let k_std = 0.5 * noise_std * ((h * w) as f64).sqrt();
                    for v in k.iter_mut() {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        *v += Complex64::new(re, im) * k_std;
                    }
                    let back = idft2(&k, h, w)?;
                    let mut out = slice.clone();
                    for (dst, src) in out.as_mut_slice().iter_mut().zip(back) {
                        *dst = src.norm() * 2.0 - 1.0;
                    }
                    out
                }
            };
            noisy.set_slice(i, j, &out)?;
        }
    }
    Ok(SimulatedPair {
        clean: clean.clone(),
        noisy,
        noise_std,
        mode,
    })
}
