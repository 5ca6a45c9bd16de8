//! Noise schedule tables and run-walk step subsequences.

use serde::{Deserialize, Serialize};

use crate::error::{out_of_range, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub beta_low: f64,
    pub beta_high: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            total_steps: 1000,
            warmup_steps: 300,
            beta_low: 5e-5,
            beta_high: 1e-2,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be positive".into()));
        }
        if self.warmup_steps == 0 || self.warmup_steps >= self.total_steps {
            return Err(Error::Config(format!(
                "warmup_steps must lie in [1, {}), got {}",
                self.total_steps, self.warmup_steps
            )));
        }
        if !(self.beta_low > 0.0) {
            return Err(Error::Config(format!(
                "beta_low must be positive, got {}",
                self.beta_low
            )));
        }
        if !(self.beta_high < 1.0) {
            return Err(Error::Config(format!(
                "beta_high must be below 1 (alpha_t would be nonpositive), got {}",
                self.beta_high
            )));
        }
        if self.beta_low > self.beta_high {
            return Err(Error::Config(format!(
                "beta_low {} exceeds beta_high {}",
                self.beta_low, self.beta_high
            )));
        }
        Ok(())
    }

    /// Constant `beta_low` up to `warmup_steps`, then a linear ramp reaching
    /// `beta_high` at the final step.
    fn beta_at(&self, t: usize) -> f64 {
        if t <= self.warmup_steps {
            self.beta_low
        } else {
            let frac = (t - self.warmup_steps) as f64
                / (self.total_steps - self.warmup_steps) as f64;
            self.beta_low + (self.beta_high - self.beta_low) * frac
        }
    }
}

/// Per-step coefficient tables, 1-based in `t`.
///
/// `alpha_bar(0) = 1`, which pins `lambda1(1) = 1` and `lambda2(1) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    one_minus_alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
    lambda1: Vec<f64>,
    lambda2: Vec<f64>,
}

impl NoiseSchedule {
    pub fn build(cfg: &ScheduleConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.total_steps;
        let mut beta = vec![0.0; n + 1];
        let mut alpha = vec![1.0; n + 1];
        let mut alpha_bar = vec![1.0; n + 1];
        let mut one_minus_alpha_bar = vec![0.0; n + 1];
        let mut sigma = vec![0.0; n + 1];
        let mut lambda1 = vec![0.0; n + 1];
        let mut lambda2 = vec![0.0; n + 1];
        for t in 1..=n {
            let b = cfg.beta_at(t);
            beta[t] = b;
            alpha[t] = 1.0 - b;
            alpha_bar[t] = alpha_bar[t - 1] * alpha[t];
            // 1 - abar_t = (1 - abar_{t-1}) + abar_{t-1} * beta_t, exact at t = 1.
            one_minus_alpha_bar[t] = one_minus_alpha_bar[t - 1] + alpha_bar[t - 1] * b;
            sigma[t] = b.sqrt();
            lambda1[t] = alpha_bar[t - 1].sqrt() * b / one_minus_alpha_bar[t];
            lambda2[t] = alpha[t].sqrt() * one_minus_alpha_bar[t - 1] / one_minus_alpha_bar[t];
        }
        Ok(Self {
            beta,
            alpha,
            alpha_bar,
            one_minus_alpha_bar,
            sigma,
            lambda1,
            lambda2,
        })
    }

    pub fn total_steps(&self) -> usize {
        self.beta.len() - 1
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.total_steps() {
            return Err(out_of_range("t", t, 1, self.total_steps()));
        }
        Ok(())
    }

    /// Copy holding only steps `1..=upper`; later lookups beyond `upper` fail.
    pub fn truncated(&self, upper: usize) -> Result<Self> {
        self.check_step(upper)?;
        let keep = |v: &Vec<f64>| v[..=upper].to_vec();
        Ok(Self {
            beta: keep(&self.beta),
            alpha: keep(&self.alpha),
            alpha_bar: keep(&self.alpha_bar),
            one_minus_alpha_bar: keep(&self.one_minus_alpha_bar),
            sigma: keep(&self.sigma),
            lambda1: keep(&self.lambda1),
            lambda2: keep(&self.lambda2),
        })
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    /// Valid for `t = 0` as well.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn one_minus_alpha_bar(&self, t: usize) -> f64 {
        self.one_minus_alpha_bar[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t]
    }

    pub fn lambda1(&self, t: usize) -> f64 {
        self.lambda1[t]
    }

    pub fn lambda2(&self, t: usize) -> f64 {
        self.lambda2[t]
    }
}

/// Increasing step subsequence: dense `1..=t_r`, then stride `p` up to `t_c`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunWalkSchedule {
    tau: Vec<usize>,
    t_r: usize,
    p: usize,
}

impl RunWalkSchedule {
    pub fn new(t_c: usize, t_r: usize, p: usize) -> Result<Self> {
        if t_c == 0 {
            return Err(Error::Config("T_c must be positive".into()));
        }
        if t_r == 0 || t_r > t_c {
            return Err(out_of_range("T_r", t_r, 1, t_c));
        }
        if p == 0 {
            return Err(Error::Config("stride p must be positive".into()));
        }
        let mut tau: Vec<usize> = (1..=t_r).collect();
        let mut k = t_r + p;
        while k < t_c {
            tau.push(k);
            k += p;
        }
        if *tau.last().unwrap() != t_c {
            tau.push(t_c);
        }
        Ok(Self { tau, t_r, p })
    }

    pub fn steps(&self) -> &[usize] {
        &self.tau
    }

    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    pub fn t_c(&self) -> usize {
        *self.tau.last().unwrap()
    }

    pub fn t_r(&self) -> usize {
        self.t_r
    }

    pub fn stride(&self) -> usize {
        self.p
    }

    /// Order in which the sampler visits steps: `t_c` down to 1.
    pub fn reversed(&self) -> impl Iterator<Item = usize> + '_ {
        self.tau.iter().rev().copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_schedule() -> NoiseSchedule {
        NoiseSchedule::build(&ScheduleConfig::default()).unwrap()
    }

    #[test]
    fn warmup_segment_is_flat() {
        let s = default_schedule();
        assert_eq!(s.beta(1), 5e-5);
        assert_eq!(s.beta(300), 5e-5);
        assert!(s.beta(301) > 5e-5);
        assert!((s.beta(1000) - 1e-2).abs() < 1e-17);
    }

    #[test]
    fn first_step_coefficients_are_exact() {
        let s = default_schedule();
        assert_eq!(s.lambda1(1), 1.0);
        assert_eq!(s.lambda2(1), 0.0);
        assert_eq!(s.alpha_bar(0), 1.0);
    }

    // Frozen from a 50-digit evaluation of the cumulative product.
    #[test]
    fn matches_extended_precision_values() {
        let s = default_schedule();
        let cases = [
            (2, 0.9999000025, 0.49999999984374218718, 0.49999999984374218718),
            (50, 0.99750306005143871314, 0.019999994793490624557, 0.97999998989324574845),
            (300, 0.98511157017384021958, 0.0033333020823230954619, 0.99666660447594430025),
            (301, 0.98504831193801262799, 0.0042626938093381128657, 0.99573718578257170843),
            (1000, 0.028745190103788182848, 0.0017544129029598821441, 0.99468998681070626776),
        ];
        for (t, abar, l1, l2) in cases {
            assert!((s.alpha_bar(t) - abar).abs() / abar < 1e-13, "alpha_bar[{t}]");
            assert!((s.lambda1(t) - l1).abs() / l1 < 1e-11, "lambda1[{t}]");
            assert!((s.lambda2(t) - l2).abs() / l2 < 1e-13, "lambda2[{t}]");
        }
    }

    #[test]
    fn alpha_bar_recurrence_and_bounds() {
        let s = default_schedule();
        for t in 1..=s.total_steps() {
            assert_eq!(s.alpha_bar(t), s.alpha_bar(t - 1) * s.alpha(t));
            assert!(s.alpha_bar(t) > 0.0 && s.alpha_bar(t) < s.alpha_bar(t - 1));
            assert!((0.0..=1.0).contains(&s.lambda1(t)));
            assert!((s.sigma(t).powi(2) - s.beta(t)).abs() <= 4e-16 * s.beta(t));
        }
    }

    #[test]
    fn lambda1_decreasing_on_flat_segment() {
        let s = default_schedule();
        for t in 2..=300 {
            assert!(s.lambda1(t) <= s.lambda1(t - 1), "t = {t}");
        }
    }

    #[test]
    fn rejects_invalid_configs() {
        let bad = [
            ScheduleConfig { beta_high: 1.0, ..Default::default() },
            ScheduleConfig { beta_high: 100.0, ..Default::default() },
            ScheduleConfig { beta_low: 0.0, ..Default::default() },
            ScheduleConfig { beta_low: 0.5, beta_high: 0.1, ..Default::default() },
            ScheduleConfig { warmup_steps: 1000, ..Default::default() },
        ];
        for cfg in bad {
            assert!(NoiseSchedule::build(&cfg).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn truncated_schedule_refuses_later_steps() {
        let s = default_schedule().truncated(300).unwrap();
        assert_eq!(s.total_steps(), 300);
        assert!(s.check_step(300).is_ok());
        assert!(s.check_step(301).is_err());
        assert!(s.check_step(0).is_err());
    }

    #[test]
    fn run_walk_default_shape() {
        let rw = RunWalkSchedule::new(300, 50, 10).unwrap();
        let mut expected: Vec<usize> = (1..=50).collect();
        expected.extend((60..=300).step_by(10));
        assert_eq!(rw.steps(), expected.as_slice());
        assert_eq!(rw.len(), 75);
    }

    #[test]
    fn run_walk_degenerate_cases() {
        let dense = RunWalkSchedule::new(300, 300, 10).unwrap();
        assert_eq!(dense.steps(), (1..=300).collect::<Vec<_>>().as_slice());

        let uniform = RunWalkSchedule::new(300, 1, 10).unwrap();
        let mut expected: Vec<usize> = (1..300).step_by(10).collect();
        expected.push(300);
        assert_eq!(uniform.steps(), expected.as_slice());
        assert_eq!(uniform.len(), 31);
        assert_eq!(uniform.steps()[29], 291);
    }

    #[test]
    fn run_walk_uneven_tail_keeps_endpoint() {
        let rw = RunWalkSchedule::new(37, 5, 10).unwrap();
        assert_eq!(rw.steps(), &[1, 2, 3, 4, 5, 15, 25, 35, 37]);
        let exact = RunWalkSchedule::new(35, 5, 10).unwrap();
        assert_eq!(exact.steps(), &[1, 2, 3, 4, 5, 15, 25, 35]);
    }

    #[test]
    fn run_walk_rejects_bad_parameters() {
        assert!(RunWalkSchedule::new(300, 0, 10).is_err());
        assert!(RunWalkSchedule::new(300, 301, 10).is_err());
        assert!(RunWalkSchedule::new(300, 50, 0).is_err());
    }

    #[test]
    fn reversed_ends_at_one() {
        let rw = RunWalkSchedule::new(300, 50, 10).unwrap();
        let order: Vec<usize> = rw.reversed().collect();
        assert_eq!(order.first(), Some(&300));
        assert_eq!(order.last(), Some(&1));
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn run_walk_invariants(t_c in 1usize..400, t_r_frac in 0.0f64..1.0, p in 1usize..40) {
                let t_r = 1 + ((t_c - 1) as f64 * t_r_frac) as usize;
                let rw = RunWalkSchedule::new(t_c, t_r, p).unwrap();
                let tau = rw.steps();
                prop_assert_eq!(tau[0], 1);
                prop_assert_eq!(*tau.last().unwrap(), t_c);
                prop_assert!(tau.windows(2).all(|w| w[0] < w[1]));
                let walk: Vec<usize> = (1..=t_r).collect();
                prop_assert_eq!(&tau[..t_r], walk.as_slice());
                prop_assert!(tau[t_r - 1..].windows(2).all(|w| w[1] - w[0] <= p));
            }

            #[test]
            fn dense_when_walk_covers_everything(t_c in 1usize..400, p in 1usize..40) {
                let rw = RunWalkSchedule::new(t_c, t_c, p).unwrap();
                let identity: Vec<usize> = (1..=t_c).collect();
                prop_assert_eq!(rw.steps(), identity.as_slice());
            }
        }
    }
}
