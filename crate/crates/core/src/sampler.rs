//! Run-walk reverse sampling with adaptive termination.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{SlicePair, Volume4D};
use crate::di_noise::DiNoise;
use crate::error::{out_of_range, Error, Result};
use crate::fusion::{forward_state, Ablation};
use crate::grid::Grid;
use crate::model::{forward, ModelParams};
use crate::rng::Prng;
use crate::schedule::{NoiseSchedule, RunWalkSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub t_c: usize,
    pub t_r: usize,
    pub p: usize,
    pub eta: f64,
    pub csnr: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub seed: u64,
    pub no_fusion: bool,
    pub gaussian_noise: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            t_c: 300,
            t_r: 50,
            p: 10,
            eta: 0.0,
            csnr: 0.040,
            rho1: -0.93,
            rho2: -0.95,
            seed: 0,
            no_fusion: false,
            gaussian_noise: false,
        }
    }
}

impl SamplerConfig {
    pub fn ablation(&self) -> Ablation {
        Ablation {
            no_fusion: self.no_fusion,
            gaussian_noise: self.gaussian_noise,
        }
    }

    pub fn validate(&self, sched: &NoiseSchedule) -> Result<()> {
        if self.t_c == 0 || self.t_c > sched.total_steps() {
            return Err(out_of_range("t_c", self.t_c, 1, sched.total_steps()));
        }
        self.run_walk()?;
        if !(0.0..=1.0).contains(&self.csnr) {
            return Err(Error::Config(format!("csnr must lie in [0, 1], got {}", self.csnr)));
        }
        if !self.eta.is_finite() || self.eta < 0.0 {
            return Err(Error::Config(format!("eta must be non-negative, got {}", self.eta)));
        }
        if !(self.rho1.is_finite() && self.rho2.is_finite()) {
            return Err(Error::Config("rho thresholds must be finite".into()));
        }
        Ok(())
    }

    pub fn run_walk(&self) -> Result<RunWalkSchedule> {
        RunWalkSchedule::new(self.t_c, self.t_r, self.p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleTrace {
    pub steps_executed: usize,
    /// `(tau, d_x)` for every executed step, in execution order.
    pub d_history: Vec<(usize, f64)>,
    pub terminated_early: bool,
    pub output: Grid,
}

/// Serializable per-slice record of a sampling run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceTrace {
    pub slice: usize,
    pub volume: usize,
    pub steps_executed: usize,
    pub d_history: Vec<(usize, f64)>,
    pub terminated_early: bool,
}

impl SliceTrace {
    pub fn from_trace(trace: &SampleTrace, slice: usize, volume: usize) -> Self {
        Self {
            slice,
            volume,
            steps_executed: trace.steps_executed,
            d_history: trace.d_history.clone(),
            terminated_early: trace.terminated_early,
        }
    }
}

/// Foreground correction factor `wh/(2 c1) + wh/(2 c2)`, where `ck` counts
/// pixels above `rhok` (at least one).
pub fn brain_ratio(x: &Grid, rho1: f64, rho2: f64) -> f64 {
    let area = x.len() as f64;
    let count = |rho: f64| x.as_slice().iter().filter(|&&v| v > rho).count().max(1) as f64;
    area / (2.0 * count(rho1)) + area / (2.0 * count(rho2))
}

/// `mean((x - x_out)^2) * b_x`.
pub fn distance(x: &Grid, x_out: &Grid, b_x: f64) -> Result<f64> {
    Ok(x.mse(x_out)? * b_x)
}

/// `lambda1 * x_out + lambda2 * x_tau + sigma * eta * xi` at step `tau`.
pub fn reverse_step(
    x_tau: &Grid,
    x_out: &Grid,
    tau: usize,
    noise: &DiNoise,
    sched: &NoiseSchedule,
    eta: f64,
) -> Result<Grid> {
    sched.check_step(tau)?;
    x_tau.ensure_same_shape(x_out)?;
    x_tau.ensure_same_shape(&noise.xi)?;
    let (l1, l2, s) = (sched.lambda1(tau), sched.lambda2(tau), sched.sigma(tau) * eta);
    let data = x_tau
        .as_slice()
        .iter()
        .zip(x_out.as_slice())
        .zip(noise.xi.as_slice())
        .map(|((&xt, &xo), &xi)| l1 * xo + l2 * xt + s * xi)
        .collect();
    Grid::from_vec(x_tau.height(), x_tau.width(), data)
}

fn draw_noise(pair: &SlicePair, ablation: Ablation, rng: &mut Prng) -> Result<DiNoise> {
    if ablation.gaussian_noise {
        let (h, w) = pair.shape();
        Ok(DiNoise::gaussian(h, w, rng))
    } else {
        DiNoise::from_pair(pair, rng)
    }
}

/// Denoises `pair.x`, walking the run-walk steps from `t_c` down to 1 and
/// stopping as soon as the corrected distance exceeds `csnr`.
pub fn sample(
    pair: &SlicePair,
    params: &ModelParams,
    cfg: &SamplerConfig,
    sched: &NoiseSchedule,
) -> Result<SampleTrace> {
    cfg.validate(sched)?;
    let rw = cfg.run_walk()?;
    let ablation = cfg.ablation();
    let root = Prng::new(cfg.seed);
    let ids = [pair.slice as u64, pair.volume as u64];
    let noise = draw_noise(pair, ablation, &mut root.split("init", &ids))?;
    let mut x = forward_state(pair, &noise, cfg.t_c, sched, ablation)?.x_t;
    let b_x = brain_ratio(&pair.x, cfg.rho1, cfg.rho2);

    let mut d_history = Vec::with_capacity(rw.len());
    for tau in rw.reversed() {
        let x_out = forward(params, &x, sched.alpha_bar(tau))?;
        let d = distance(&pair.x, &x_out, b_x)?;
        if !d.is_finite() {
            return Err(Error::NonFinite(format!("distance at step {tau}")));
        }
        d_history.push((tau, d));
        if d > cfg.csnr {
            return Ok(SampleTrace {
                steps_executed: d_history.len(),
                d_history,
                terminated_early: true,
                output: x_out,
            });
        }
        let step_noise = if cfg.eta == 0.0 {
            noise.clone()
        } else {
            let mut rng = root.split("step", &[ids[0], ids[1], tau as u64]);
            if ablation.gaussian_noise {
                draw_noise(pair, ablation, &mut rng)?
            } else {
                noise.reshuffle(&mut rng)
            }
        };
        x = reverse_step(&x, &x_out, tau, &step_noise, sched, cfg.eta)?;
    }
    Ok(SampleTrace {
        steps_executed: d_history.len(),
        d_history,
        terminated_early: false,
        output: x,
    })
}

/// Denoises every slice of every volume. Slices run in parallel; the
/// traces come back ordered by volume, then slice.
pub fn denoise_volume(
    data: &Volume4D,
    params: &ModelParams,
    cfg: &SamplerConfig,
    sched: &NoiseSchedule,
) -> Result<(Volume4D, Vec<SliceTrace>)> {
    cfg.validate(sched)?;
    let (w, h, d, l) = data.dims();
    let jobs: Vec<(usize, usize)> = (0..l).flat_map(|j| (0..d).map(move |i| (i, j))).collect();
    let results: Vec<SampleTrace> = jobs
        .par_iter()
        .map(|&(i, j)| sample(&data.slice_pair(i, j)?, params, cfg, sched))
        .collect::<Result<_>>()?;
    let mut out = Volume4D::zeros(w, h, d, l)?.with_normalized_flag(data.is_normalized());
    let mut traces = Vec::with_capacity(jobs.len());
    for (&(i, j), trace) in jobs.iter().zip(&results) {
        out.set_slice(i, j, &trace.output)?;
        traces.push(SliceTrace::from_trace(trace, i, j));
    }
    Ok((out, traces))
}
