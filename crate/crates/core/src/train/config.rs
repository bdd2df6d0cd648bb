//! Training configuration and its flat `key=value` text form.

use serde::Serialize;

use super::grad::TrainableSubset;
use super::AdamConfig;
use crate::model::{Activation, HiddenMap, ModelOptions};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositionalMode {
    Learned,
    /// Fixed sine/cosine table; never trained.
    Sinusoidal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub d: usize,
    pub heads: usize,
    pub d0: usize,
    pub dr: usize,
    pub m: usize,
    pub activation: Activation,
    pub stepsize: f64,
    pub iterations: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub seed: u64,
    pub subset: TrainableSubset,
    pub threshold_fraction: f64,
    pub early_stop: bool,
    pub positional: PositionalMode,
    pub init_scale: f64,
    pub skip_connection: bool,
    pub hidden: HiddenMap,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            d: 16,
            heads: 1,
            d0: 16,
            dr: 16,
            m: 8,
            activation: Activation::Gelu,
            stepsize: 1e-3,
            iterations: 20_000,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            seed: 0,
            subset: TrainableSubset::All,
            threshold_fraction: 0.01,
            early_stop: true,
            positional: PositionalMode::Learned,
            init_scale: 0.02,
            skip_connection: false,
            hidden: HiddenMap::Activation,
            checkpoint_every: 100,
        }
    }
}

pub const KEYS: &[&str] = &[
    "d",
    "heads",
    "d0",
    "dr",
    "m",
    "activation",
    "stepsize",
    "iterations",
    "beta1",
    "beta2",
    "eps_adam",
    "seed",
    "subset",
    "threshold_fraction",
    "early_stop",
    "positional",
    "init_scale",
    "skip_connection",
    "hidden",
    "checkpoint_every",
];

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| Error::Config(format!("{key}: {e}")))
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "d" => self.d = num(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "d0" => self.d0 = num(key, value)?,
            "dr" => self.dr = num(key, value)?,
            "m" => self.m = num(key, value)?,
            "activation" => self.activation = value.parse()?,
            "stepsize" => self.stepsize = num(key, value)?,
            "iterations" => self.iterations = num(key, value)?,
            "beta1" => self.beta1 = num(key, value)?,
            "beta2" => self.beta2 = num(key, value)?,
            "eps_adam" => self.eps_adam = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "subset" => self.subset = value.parse()?,
            "threshold_fraction" => self.threshold_fraction = num(key, value)?,
            "early_stop" => self.early_stop = num(key, value)?,
            "positional" => {
                self.positional = match value {
                    "learned" => PositionalMode::Learned,
                    "sinusoidal" => PositionalMode::Sinusoidal,
                    other => return Err(Error::Config(format!("positional: unknown mode `{other}`"))),
                }
            }
            "init_scale" => self.init_scale = num(key, value)?,
            "skip_connection" => self.skip_connection = num(key, value)?,
            "hidden" => {
                self.hidden = match value {
                    "activation" => HiddenMap::Activation,
                    "softmax" => HiddenMap::Softmax,
                    other => return Err(Error::Config(format!("hidden: unknown map `{other}`"))),
                }
            }
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", lineno + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every key with its resolved value, one per line.
    pub fn to_text(&self) -> String {
        let positional = match self.positional {
            PositionalMode::Learned => "learned",
            PositionalMode::Sinusoidal => "sinusoidal",
        };
        let hidden = match self.hidden {
            HiddenMap::Activation => "activation",
            HiddenMap::Softmax => "softmax",
        };
        let vals = [
            self.d.to_string(),
            self.heads.to_string(),
            self.d0.to_string(),
            self.dr.to_string(),
            self.m.to_string(),
            self.activation.name(),
            self.stepsize.to_string(),
            self.iterations.to_string(),
            self.beta1.to_string(),
            self.beta2.to_string(),
            self.eps_adam.to_string(),
            self.seed.to_string(),
            self.subset.to_string(),
            self.threshold_fraction.to_string(),
            self.early_stop.to_string(),
            positional.to_string(),
            self.init_scale.to_string(),
            self.skip_connection.to_string(),
            hidden.to_string(),
            self.checkpoint_every.to_string(),
        ];
        KEYS.iter().zip(vals).map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || self.d0 == 0 || self.dr == 0 {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        if self.m < 1 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        if !(self.stepsize > 0.0 && self.stepsize.is_finite()) {
            return Err(Error::Config("stepsize must be positive".into()));
        }
        if self.iterations < 1 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if !(self.threshold_fraction > 0.0 && self.threshold_fraction <= 1.0) {
            return Err(Error::Config("threshold_fraction must lie in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps_adam > 0.0) {
            return Err(Error::Config("invalid Adam moments".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be positive".into()));
        }
        Ok(())
    }

    pub fn model_options(&self) -> ModelOptions {
        ModelOptions { skip_connection: self.skip_connection, hidden: self.hidden }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { stepsize: self.stepsize, beta1: self.beta1, beta2: self.beta2, eps: self.eps_adam }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip() {
        let mut cfg = TrainConfig { m: 32, positional: PositionalMode::Sinusoidal, ..TrainConfig::default() };
        cfg.activation = Activation::Tanh;
        cfg.subset = TrainableSubset::FnnOnly;
        assert_eq!(TrainConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(TrainConfig::from_text("bogus=1").is_err());
        assert!(TrainConfig::from_text("m=0").is_err());
        assert!(TrainConfig::from_text("stepsize=-1").is_err());
        assert!(TrainConfig::from_text("threshold_fraction=0").is_err());
        assert!(TrainConfig::from_text("m").is_err());
        let cfg = TrainConfig::from_text("# comment\n\nm = 4\nthreshold_fraction=1.0\n").unwrap();
        assert_eq!(cfg.m, 4);
    }
}
