//! Run configuration: TOML file, then command-line overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use c2fdiff::data::Degradation;
use c2fdiff::experiments::TrainConfig;
use c2fdiff::losses::{CannyParams, LossWeights, DEFAULT_BINS};
use c2fdiff::nn::{NetworkSpec, COARSE_DILATIONS};
use c2fdiff::optim::AdamConfig;
use c2fdiff::sde::ScheduleParams;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub schedule: ScheduleParams,
    pub network: NetworkSpec,
    pub loss_weights: LossWeights,
    pub canny: CannyParams,
    pub bins: usize,
    pub optimizer: AdamConfig,
    pub train: TrainSection,
    pub roundtrip: RoundtripSection,
    pub restore: RestoreSection,
    pub probe: ProbeSection,
    pub data: DataSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            schedule: ScheduleParams::default(),
            network: NetworkSpec::default(),
            loss_weights: LossWeights::default(),
            canny: CannyParams::default(),
            bins: DEFAULT_BINS,
            optimizer: AdamConfig::default(),
            train: TrainSection::default(),
            roundtrip: RoundtripSection::default(),
            restore: RestoreSection::default(),
            probe: ProbeSection::default(),
            data: DataSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub iters: usize,
    pub batch: usize,
    pub image_size: usize,
    pub pool_size: usize,
    pub window: usize,
    pub degradation: Degradation,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            iters: t.iters,
            batch: t.batch,
            image_size: t.image_size,
            pool_size: t.pool_size,
            window: t.window,
            degradation: t.degradation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoundtripSection {
    pub size: usize,
    /// Scenes averaged in the report's study block.
    pub seeds: usize,
    pub deterministic: bool,
}

impl Default for RoundtripSection {
    fn default() -> Self {
        Self {
            size: 32,
            seeds: 8,
            deterministic: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RestoreSection {
    /// Drop the Brownian term of the reverse SDE.
    pub deterministic: bool,
}

impl Default for RestoreSection {
    fn default() -> Self {
        Self {
            deterministic: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub dilations: [usize; 3],
    pub channels: usize,
    pub trials: usize,
    pub block_trials: usize,
}

impl Default for ProbeSection {
    fn default() -> Self {
        Self {
            dilations: COARSE_DILATIONS,
            channels: 4,
            trials: 100,
            block_trials: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub count: usize,
    pub size: usize,
    pub degradation: Degradation,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            count: 4,
            size: 16,
            degradation: Degradation::default(),
        }
    }
}

/// Overrides given on the command line; `None` keeps the file value.
#[derive(Debug, Default, Clone, Copy)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub kappa: Option<f64>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                Self::from_toml(&text)
            }
        }
    }

    pub fn apply(&mut self, o: Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(t) = o.steps {
            self.schedule.steps = t;
        }
        if let Some(k) = o.kappa {
            self.schedule.kappa = k;
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let cfg = |e: c2fdiff::Error| CliError::Config(e.to_string());
        self.schedule.build().map_err(cfg)?;
        self.network.validate().map_err(cfg)?;
        self.loss_weights.validate().map_err(cfg)?;
        self.canny.validate().map_err(cfg)?;
        self.optimizer.validate().map_err(cfg)?;
        self.train_config().validate().map_err(cfg)?;
        if self.bins == 0 {
            return Err(CliError::Config("bins must be positive".into()));
        }
        if self.roundtrip.size == 0 || self.roundtrip.seeds == 0 {
            return Err(CliError::Config(
                "roundtrip size and seeds must be positive".into(),
            ));
        }
        if self.data.size == 0 {
            return Err(CliError::Config("data size must be positive".into()));
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            iters: self.train.iters,
            batch: self.train.batch,
            image_size: self.train.image_size,
            pool_size: self.train.pool_size,
            window: self.train.window,
            optimizer: self.optimizer,
            network: self.network,
            schedule: self.schedule,
            loss_weights: self.loss_weights,
            canny: self.canny,
            bins: self.bins,
            degradation: self.train.degradation,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("seeed = 3").is_err());
        assert!(RunConfig::from_toml("[schedule]\nstep = 10").is_err());
    }

    #[test]
    fn partial_sections_and_overrides() {
        let mut c = RunConfig::from_toml(
            "seed = 5\n[schedule]\nsteps = 40\n[train.degradation]\nkind = \"haze\"\ntransmission = 0.5\nairlight = 0.9\n",
        )
        .unwrap();
        assert_eq!(c.schedule.steps, 40);
        assert_eq!(c.schedule.kappa, ScheduleParams::default().kappa);
        c.apply(Overrides {
            seed: Some(9),
            steps: None,
            kappa: Some(0.2),
        });
        assert_eq!((c.seed, c.schedule.steps, c.schedule.kappa), (9, 40, 0.2));
        assert!(c.validate().is_ok());
    }

    #[test]
    fn default_validates_and_roundtrips_through_toml() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
    }
}
