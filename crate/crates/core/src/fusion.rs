//! Fused forward process: interpolate from `x'` towards `x`, then perturb
//! with residual noise.

use serde::{Deserialize, Serialize};

use crate::data::SlicePair;
use crate::di_noise::DiNoise;
use crate::error::Result;
use crate::grid::Grid;
use crate::schedule::NoiseSchedule;

/// Switches that disable parts of the method for comparison runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Use `x'` in place of the interpolant at every step.
    pub no_fusion: bool,
    /// Use i.i.d. standard normal noise in place of the residual noise.
    pub gaussian_noise: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedState {
    pub x_star: Grid,
    pub x_t: Grid,
    pub t: usize,
}

/// `lambda1(t) * x + lambda2(t) * x'`.
pub fn fuse(pair: &SlicePair, t: usize, sched: &NoiseSchedule) -> Result<Grid> {
    sched.check_step(t)?;
    pair.x.axpby(sched.lambda1(t), &pair.x_prime, sched.lambda2(t))
}

/// `sqrt(abar_t) * x_star + sqrt(1 - abar_t) * xi`.
pub fn perturb(x_star: &Grid, noise: &DiNoise, t: usize, sched: &NoiseSchedule) -> Result<Grid> {
    sched.check_step(t)?;
    x_star.axpby(
        sched.alpha_bar(t).sqrt(),
        &noise.xi,
        sched.one_minus_alpha_bar(t).sqrt(),
    )
}

/// Inverse of [`perturb`] for a known noise field.
pub fn unperturb(x_t: &Grid, noise: &DiNoise, t: usize, sched: &NoiseSchedule) -> Result<Grid> {
    sched.check_step(t)?;
    let a = sched.alpha_bar(t).sqrt();
    let b = sched.one_minus_alpha_bar(t).sqrt();
    x_t.zip_map(&noise.xi, |v, xi| (v - b * xi) / a)
}

/// Interpolant under the given ablation setting.
pub fn interpolant(
    pair: &SlicePair,
    t: usize,
    sched: &NoiseSchedule,
    ablation: Ablation,
) -> Result<Grid> {
    if ablation.no_fusion {
        sched.check_step(t)?;
        Ok(pair.x_prime.clone())
    } else {
        fuse(pair, t, sched)
    }
}

/// Full forward state `x_t` for a pair at step `t`.
pub fn forward_state(
    pair: &SlicePair,
    noise: &DiNoise,
    t: usize,
    sched: &NoiseSchedule,
    ablation: Ablation,
) -> Result<FusedState> {
    let x_star = interpolant(pair, t, sched, ablation)?;
    let x_t = perturb(&x_star, noise, t, sched)?;
    Ok(FusedState { x_star, x_t, t })
}
