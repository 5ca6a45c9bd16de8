//! Self-supervised training loop.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::net::{gradients, ArchConfig, ModelParams, TrainingExample};
use crate::data::Volume4D;
use crate::di_noise::DiNoise;
use crate::error::{out_of_range, Error, Result};
use crate::fusion::{forward_state, Ablation};
use crate::rng::Prng;
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub t_c: usize,
    pub seed: u64,
    pub no_fusion: bool,
    pub gaussian_noise: bool,
    /// Draw `t` from the whole schedule instead of `1..=t_c`.
    pub full_range_t: bool,
    pub arch: ArchConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Small configuration that trains in minutes on one core.
    pub fn desk() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 8,
            steps: 2000,
            t_c: 300,
            seed: 0,
            no_fusion: false,
            gaussian_noise: false,
            full_range_t: false,
            arch: ArchConfig::default(),
        }
    }

    /// Full-scale optimiser settings.
    pub fn full_scale() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 32,
            steps: 100_000,
            ..Self::desk()
        }
    }

    pub fn ablation(&self) -> Ablation {
        Ablation {
            no_fusion: self.no_fusion,
            gaussian_noise: self.gaussian_noise,
        }
    }

    pub fn validate(&self, sched: &NoiseSchedule) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.t_c == 0 || self.t_c > sched.total_steps() {
            return Err(out_of_range("t_c", self.t_c, 1, sched.total_steps()));
        }
        self.arch.validate()
    }

    /// Largest step the loop may draw.
    pub fn max_step(&self, sched: &NoiseSchedule) -> usize {
        if self.full_range_t {
            sched.total_steps()
        } else {
            self.t_c
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub params: ModelParams,
    /// Mean batch loss of every optimiser step.
    pub losses: Vec<f64>,
    /// Largest `t` drawn over the whole run; 0 when no step ran.
    pub max_t_drawn: usize,
}

impl TrainReport {
    /// Trailing mean of the last `window` losses at every step.
    pub fn running_loss(&self, window: usize) -> Vec<f64> {
        let window = window.max(1);
        let mut out = Vec::with_capacity(self.losses.len());
        let mut acc = 0.0;
        for (k, &l) in self.losses.iter().enumerate() {
            acc += l;
            if k >= window {
                acc -= self.losses[k - window];
            }
            out.push(acc / (k + 1).min(window) as f64);
        }
        out
    }

    /// Means of the first and last `window` losses.
    pub fn first_last_window(&self, window: usize) -> Option<(f64, f64)> {
        let n = self.losses.len();
        if n == 0 {
            return None;
        }
        let w = window.clamp(1, n);
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        Some((mean(&self.losses[..w]), mean(&self.losses[n - w..])))
    }
}

/// Builds one training example for slice `i` of volume `j` at step `t`.
pub fn build_example(
    data: &Volume4D,
    i: usize,
    j: usize,
    t: usize,
    sched: &NoiseSchedule,
    ablation: Ablation,
    rng: &mut Prng,
) -> Result<TrainingExample> {
    let pair = data.slice_pair(i, j)?;
    let noise = if ablation.gaussian_noise {
        let (h, w) = pair.shape();
        DiNoise::gaussian(h, w, rng)
    } else {
        DiNoise::from_pair(&pair, rng)?
    };
    let state = forward_state(&pair, &noise, t, sched, ablation)?;
    Ok(TrainingExample {
        input: state.x_t,
        alpha_bar: sched.alpha_bar(t),
        target: pair.x,
    })
}

pub fn train(data: &Volume4D, cfg: &TrainConfig, sched: &NoiseSchedule) -> Result<TrainReport> {
    train_with(data, cfg, sched, |_, _| {})
}

/// Like [`train`], calling `on_step(step, loss)` after every update.
pub fn train_with(
    data: &Volume4D,
    cfg: &TrainConfig,
    sched: &NoiseSchedule,
    mut on_step: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    cfg.validate(sched)?;
    if data.volumes() < 2 {
        return Err(Error::Config(format!(
            "training needs at least 2 volumes, got {}",
            data.volumes()
        )));
    }
    let upper = cfg.max_step(sched);
    let view = sched.truncated(upper)?;
    let ablation = cfg.ablation();
    let root = Prng::new(cfg.seed);
    let mut params = ModelParams::init(cfg.arch, &mut root.split("init", &[]))?;
    let mut opt = Adam::new(cfg.learning_rate, params.len());
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut max_t_drawn = 0;
    let (d, l) = (data.slices(), data.volumes());

    for step in 0..cfg.steps {
        let drawn: Vec<(usize, TrainingExample)> = (0..cfg.batch_size)
            .into_par_iter()
            .map(|b| {
                let mut rng = root.split("train", &[step as u64, b as u64]);
                let t = rng.random_range(1..=upper);
                let i = rng.random_range(0..d);
                let j = rng.random_range(0..l);
                build_example(data, i, j, t, &view, ablation, &mut rng).map(|ex| (t, ex))
            })
            .collect::<Result<_>>()?;
        max_t_drawn = drawn.iter().map(|(t, _)| *t).fold(max_t_drawn, usize::max);
        let batch: Vec<TrainingExample> = drawn.into_iter().map(|(_, ex)| ex).collect();

        let last_finite = losses.last().copied().unwrap_or(f64::NAN);
        let (loss, grad) = match gradients(&params, &batch) {
            Ok(v) => v,
            Err(Error::NonFinite(_)) => return Err(Error::Diverged { step, last_finite }),
            Err(e) => return Err(e),
        };
        if !loss.is_finite() {
            return Err(Error::Diverged { step, last_finite });
        }
        opt.step(params.values_mut(), &grad);
        losses.push(loss);
        on_step(step, loss);
    }

    Ok(TrainReport {
        params,
        losses,
        max_t_drawn,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_phantom;
    use crate::schedule::ScheduleConfig;

    fn sched() -> NoiseSchedule {
        NoiseSchedule::build(&ScheduleConfig::default()).unwrap()
    }

    fn small_cfg(steps: usize) -> TrainConfig {
        TrainConfig {
            steps,
            batch_size: 2,
            arch: ArchConfig { enc: 2, mid: 4, dec: 2 },
            seed: 5,
            ..TrainConfig::desk()
        }
    }

    #[test]
    fn zero_steps_returns_initialisation() {
        let data = make_phantom(8, 8, 2, 2, 1).unwrap();
        let cfg = small_cfg(0);
        let report = train(&data, &cfg, &sched()).unwrap();
        let init = ModelParams::init(cfg.arch, &mut Prng::new(cfg.seed).split("init", &[])).unwrap();
        assert_eq!(report.params, init);
        assert!(report.losses.is_empty());
        assert_eq!(report.max_t_drawn, 0);
    }

    #[test]
    fn training_is_deterministic() {
        let data = make_phantom(8, 8, 2, 3, 2).unwrap();
        let cfg = small_cfg(5);
        let a = train(&data, &cfg, &sched()).unwrap();
        let b = train(&data, &cfg, &sched()).unwrap();
        let bits = |p: &ModelParams| p.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.params), bits(&b.params));
        assert_eq!(a.losses, b.losses);
    }

    #[test]
    fn t_stays_within_t_c() {
        let data = make_phantom(8, 8, 2, 2, 3).unwrap();
        let cfg = TrainConfig { t_c: 20, ..small_cfg(30) };
        let report = train(&data, &cfg, &sched()).unwrap();
        assert!(report.max_t_drawn >= 1 && report.max_t_drawn <= 20);
        let full = TrainConfig { full_range_t: true, ..cfg };
        assert_eq!(full.max_step(&sched()), 1000);
    }

    #[test]
    fn rejects_bad_configs() {
        let data = make_phantom(8, 8, 2, 2, 1).unwrap();
        let s = sched();
        for cfg in [
            TrainConfig { learning_rate: 0.0, ..small_cfg(1) },
            TrainConfig { batch_size: 0, ..small_cfg(1) },
            TrainConfig { t_c: 0, ..small_cfg(1) },
            TrainConfig { t_c: 1001, ..small_cfg(1) },
        ] {
            assert!(train(&data, &cfg, &s).unwrap_err().is_config());
        }
    }

    #[test]
    fn huge_learning_rate_is_caught() {
        let data = make_phantom(8, 8, 2, 2, 1).unwrap();
        let cfg = TrainConfig { learning_rate: 1e30, ..small_cfg(20) };
        match train(&data, &cfg, &sched()) {
            Err(Error::Diverged { step, .. }) => assert!(step > 0),
            other => panic!("expected divergence, got {:?}", other.map(|r| r.losses)),
        }
    }

    #[test]
    fn running_loss_windows() {
        let report = TrainReport {
            params: ModelParams::zeros(ArchConfig { enc: 2, mid: 2, dec: 2 }).unwrap(),
            losses: vec![4.0, 2.0, 6.0, 0.0],
            max_t_drawn: 1,
        };
        assert_eq!(report.running_loss(2), vec![4.0, 3.0, 4.0, 3.0]);
        assert_eq!(report.first_last_window(2), Some((3.0, 3.0)));
    }
}
