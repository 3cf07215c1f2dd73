use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusConfig;
use crate::error::{Error, Result};
use crate::metrics::DEFAULT_DURATIONS_MS;
use crate::nn::DEFAULT_LR;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Training crops per train speaker.
    pub crops_per_speaker: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: DEFAULT_LR,
            seed: 1,
            crops_per_speaker: 24,
        }
    }
}

impl EncoderConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            seed: self.seed,
            shuffle: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub durations_ms: Vec<u32>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            durations_ms: DEFAULT_DURATIONS_MS.to_vec(),
        }
    }
}

/// Contents of a `--config` TOML file. Every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    pub train: TrainConfig,
    pub encoder: EncoderConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let s = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                Self::from_toml(&s)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.train.validate()?;
        self.encoder.train_config().validate()?;
        if self.encoder.crops_per_speaker == 0 {
            return Err(Error::Config("encoder.crops_per_speaker must be positive".into()));
        }
        validate_durations(&self.eval.durations_ms)
    }
}

pub fn validate_durations(d: &[u32]) -> Result<()> {
    if d.contains(&0) {
        return Err(Error::Config("durations must be positive".into()));
    }
    if d.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("durations must be strictly ascending".into()));
    }
    Ok(())
}

pub fn parse_durations(s: &str) -> Result<Vec<u32>> {
    let d = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<u32>()
                .map_err(|_| Error::Usage(format!("invalid duration {t:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    validate_durations(&d).map_err(|e| Error::Usage(e.to_string()))?;
    Ok(d)
}
