use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use difusion::model::TrainConfig;
use difusion::sampler::SamplerConfig;
use difusion::schedule::{NoiseSchedule, ScheduleConfig};

/// Settings shared by every subcommand, loaded from a JSON file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schedule: ScheduleConfig,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<(Self, bool)> {
        let Some(path) = path else {
            return Ok((Self::default(), false));
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg = serde_json::from_str(&text)
            .map_err(|e| difusion::Error::Config(format!("{}: {e}", path.display())))?;
        Ok((cfg, true))
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(seed) = seed {
            self.train.seed = seed;
            self.sampler.seed = seed;
        }
        self
    }

    /// Checks every section and returns the built schedule.
    pub fn validate(&self) -> difusion::Result<NoiseSchedule> {
        let sched = NoiseSchedule::build(&self.schedule)?;
        self.train.validate(&sched)?;
        self.sampler.validate(&sched)?;
        Ok(sched)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_default_independently() {
        let cfg: RunConfig = serde_json::from_str(r#"{"sampler": {"csnr": 0.5}}"#).unwrap();
        assert_eq!(cfg.sampler.csnr, 0.5);
        assert_eq!(cfg.sampler.t_r, 50);
        assert_eq!(cfg.train, TrainConfig::default());
        assert!(serde_json::from_str::<RunConfig>(r#"{"extra": {}}"#).is_err());
    }

    #[test]
    fn seed_override_reaches_both_sections() {
        let cfg = RunConfig::default().with_seed(Some(9));
        assert_eq!((cfg.train.seed, cfg.sampler.seed), (9, 9));
        assert!(cfg.validate().is_ok());
        let bad = RunConfig {
            sampler: SamplerConfig { t_c: 2000, ..SamplerConfig::default() },
            ..RunConfig::default()
        };
        assert!(bad.validate().unwrap_err().is_config());
    }
}
