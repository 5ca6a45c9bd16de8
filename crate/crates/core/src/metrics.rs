//! Image quality metrics: PSNR, SSIM, mask-based SNR/CNR and residuals.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Volume4D;
use crate::error::{Error, Result};
use crate::grid::{Grid, Mask};

/// Value reported for identical inputs.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn psnr_from_mse(mse: f64, data_range: f64) -> f64 {
    if mse == 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (data_range * data_range / mse).log10()).min(PSNR_CAP)
    }
}

fn check_range(data_range: f64) -> Result<()> {
    if data_range > 0.0 && data_range.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("data_range must be positive, got {data_range}")))
    }
}

pub fn psnr(reference: &Grid, test: &Grid, data_range: f64) -> Result<f64> {
    check_range(data_range)?;
    Ok(psnr_from_mse(reference.mse(test)?, data_range))
}

/// PSNR over every voxel of two volumes.
pub fn psnr_volume(reference: &Volume4D, test: &Volume4D, data_range: f64) -> Result<f64> {
    check_range(data_range)?;
    same_dims(reference, test)?;
    let sum: f64 = reference
        .values()
        .iter()
        .zip(test.values())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum();
    Ok(psnr_from_mse(sum / reference.values().len() as f64, data_range))
}

fn same_dims(a: &Volume4D, b: &Volume4D) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimsMismatch {
            expected: a.dims(),
            got: b.dims(),
        });
    }
    Ok(())
}

/// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (k, t) in taps.iter_mut().enumerate() {
        let x = k as f64 - half;
        *t = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    taps
}

/// Valid-mode separable filtering with the SSIM window.
fn filter_valid(img: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let n = SSIM_WINDOW;
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..n).map(|k| taps[k] * img[r * w + c + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..n).map(|k| taps[k] * rows[(r + k) * ow + c]).sum();
        }
    }
    out
}

/// Mean local SSIM over all fully contained 11x11 windows.
pub fn ssim(reference: &Grid, test: &Grid, data_range: f64) -> Result<f64> {
    check_range(data_range)?;
    reference.ensure_same_shape(test)?;
    let (h, w) = reference.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::ShapeMismatch {
            expected: (SSIM_WINDOW, SSIM_WINDOW),
            got: (h, w),
        });
    }
    let taps = gaussian_taps();
    let a = reference.as_slice();
    let b = test.as_slice();
    let prod = |f: fn(f64, f64) -> f64| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>();
    let mu_a = filter_valid(a, h, w, &taps);
    let mu_b = filter_valid(b, h, w, &taps);
    let aa = filter_valid(&prod(|x, _| x * x), h, w, &taps);
    let bb = filter_valid(&prod(|_, y| y * y), h, w, &taps);
    let ab = filter_valid(&prod(|x, y| x * y), h, w, &taps);
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let total: f64 = (0..mu_a.len())
        .map(|k| {
            let (ma, mb) = (mu_a[k], mu_b[k]);
            let va = aa[k] - ma * ma;
            let vb = bb[k] - mb * mb;
            let cov = ab[k] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / mu_a.len() as f64)
}

/// Mean SSIM over every slice of two volumes.
pub fn ssim_volume(reference: &Volume4D, test: &Volume4D, data_range: f64) -> Result<f64> {
    same_dims(reference, test)?;
    let (_, _, d, l) = reference.dims();
    let per: Vec<f64> = slice_indices(d, l)
        .par_iter()
        .map(|&(i, j)| ssim(&reference.slice(i, j)?, &test.slice(i, j)?, data_range))
        .collect::<Result<_>>()?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

fn slice_indices(d: usize, l: usize) -> Vec<(usize, usize)> {
    (0..l).flat_map(|j| (0..d).map(move |i| (i, j))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrCnr {
    pub snr: f64,
    pub cnr: f64,
}

/// `Mean(signal) / Var(background)` and
/// `(Mean(signal) - Mean(background)) / Var(background)` on one slice.
pub fn snr_cnr_slice(slice: &Grid, signal: &Mask, background: &Mask) -> Result<SnrCnr> {
    check_masks(slice, signal, background)?;
    let pick = |m: &Mask| -> Vec<f64> {
        slice
            .as_slice()
            .iter()
            .zip(m.as_slice())
            .filter(|(_, &on)| on)
            .map(|(&v, _)| v)
            .collect()
    };
    let sig = pick(signal);
    let bg = MeanStd::of(&pick(background));
    let var_bg = bg.std * bg.std;
    if var_bg == 0.0 {
        return Err(Error::NonFinite("background variance is zero".into()));
    }
    let mean_sig = sig.iter().sum::<f64>() / sig.len() as f64;
    Ok(SnrCnr {
        snr: mean_sig / var_bg,
        cnr: (mean_sig - bg.mean) / var_bg,
    })
}

fn check_masks(slice: &Grid, signal: &Mask, background: &Mask) -> Result<()> {
    for m in [signal, background] {
        if m.shape() != slice.shape() {
            return Err(Error::ShapeMismatch {
                expected: slice.shape(),
                got: m.shape(),
            });
        }
        if m.count() == 0 {
            return Err(Error::Config("mask is empty".into()));
        }
    }
    if !signal.is_disjoint(background) {
        return Err(Error::Config("signal and background masks overlap".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceMetrics {
    pub slice: usize,
    pub volume: usize,
    pub psnr: f64,
    pub ssim: f64,
    /// `None` when the background has zero variance.
    pub snr: Option<f64>,
    pub cnr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    /// `None` when any slice has a constant background.
    pub snr: Option<MeanStd>,
    pub cnr: Option<MeanStd>,
    pub per_slice: Vec<SliceMetrics>,
}

/// SNR and CNR of every slice, aggregated as mean and standard deviation.
pub fn snr_cnr(volume: &Volume4D, signal: &Mask, background: &Mask) -> Result<(MeanStd, MeanStd)> {
    let (_, _, d, l) = volume.dims();
    let per: Vec<SnrCnr> = slice_indices(d, l)
        .par_iter()
        .map(|&(i, j)| snr_cnr_slice(&volume.slice(i, j)?, signal, background))
        .collect::<Result<_>>()?;
    let snr: Vec<f64> = per.iter().map(|s| s.snr).collect();
    let cnr: Vec<f64> = per.iter().map(|s| s.cnr).collect();
    Ok((MeanStd::of(&snr), MeanStd::of(&cnr)))
}

/// Full report of `test` against `reference`, with SNR/CNR measured on `test`.
pub fn evaluate(
    reference: &Volume4D,
    test: &Volume4D,
    signal: &Mask,
    background: &Mask,
    data_range: f64,
) -> Result<MetricReport> {
    same_dims(reference, test)?;
    check_range(data_range)?;
    let (_, _, d, l) = reference.dims();
    let per_slice: Vec<SliceMetrics> = slice_indices(d, l)
        .par_iter()
        .map(|&(i, j)| {
            let r = reference.slice(i, j)?;
            let t = test.slice(i, j)?;
            let sc = match snr_cnr_slice(&t, signal, background) {
                Ok(sc) => Some(sc),
                Err(Error::NonFinite(_)) => None,
                Err(e) => return Err(e),
            };
            Ok(SliceMetrics {
                slice: i,
                volume: j,
                psnr: psnr(&r, &t, data_range)?,
                ssim: ssim(&r, &t, data_range)?,
                snr: sc.map(|v| v.snr),
                cnr: sc.map(|v| v.cnr),
            })
        })
        .collect::<Result<_>>()?;
    let summarise = |f: fn(&SliceMetrics) -> Option<f64>| {
        per_slice.iter().map(f).collect::<Option<Vec<_>>>().map(|v| MeanStd::of(&v))
    };
    let ssim_mean = per_slice.iter().map(|s| s.ssim).sum::<f64>() / per_slice.len() as f64;
    Ok(MetricReport {
        psnr: psnr_volume(reference, test, data_range)?,
        ssim: ssim_mean,
        snr: summarise(|s| s.snr),
        cnr: summarise(|s| s.cnr),
        per_slice,
    })
}

/// Elementwise squared difference.
pub fn residual(noisy: &Grid, denoised: &Grid) -> Result<Grid> {
    noisy.zip_map(denoised, |a, b| (a - b) * (a - b))
}
