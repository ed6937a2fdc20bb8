use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbone::{TapPreset, MAX_STRIDE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// One ResNet-18 teacher and the reduced student.
    Reduced,
    /// ResNet-18 and EfficientNet-b0 teachers, one student each, fused maps.
    Mixed,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Reduced => "reduced",
            Method::Mixed => "mixed",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "reduced" => Ok(Method::Reduced),
            "mixed" => Ok(Method::Mixed),
            _ => Err(Error::config(
                "method",
                format!("unknown method `{s}` (reduced|mixed)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the EfficientNet-branch loss (mixed method only).
    pub alpha: f64,
    pub input_size: usize,
    /// Share of the training images used for training; the rest validates.
    pub split_ratio: f64,
    pub seed: u64,
    /// Where the best checkpoint is written during training, if anywhere.
    pub checkpoint_dir: Option<PathBuf>,
    /// ResNet-branch taps.
    pub resnet_preset: TapPreset,
    pub resnet_weights: String,
    pub effnet_weights: String,
}

impl TrainConfig {
    pub fn for_method(method: Method) -> Self {
        Self {
            method,
            learning_rate: 0.4,
            epochs: match method {
                Method::Reduced => 100,
                Method::Mixed => 200,
            },
            batch_size: 16,
            alpha: 0.1,
            input_size: 256,
            split_ratio: 0.8,
            seed: 0,
            checkpoint_dir: None,
            resnet_preset: match method {
                Method::Reduced => TapPreset::ReducedStudent,
                Method::Mixed => TapPreset::MixedResnet,
            },
            resnet_weights: "auto".into(),
            effnet_weights: "auto".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be a finite value > 0"));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::config(
                "split_ratio",
                format!("{} is not in (0, 1)", self.split_ratio),
            ));
        }
        if self.batch_size < 1 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("alpha", "must be a finite value > 0"));
        }
        if self.epochs < 1 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.input_size < 2 * MAX_STRIDE || !self.input_size.is_multiple_of(MAX_STRIDE) {
            return Err(Error::config(
                "input_size",
                format!(
                    "{} must be a multiple of {MAX_STRIDE} and at least {}",
                    self.input_size,
                    2 * MAX_STRIDE
                ),
            ));
        }
        if crate::backbone::preset_arch(self.resnet_preset) != crate::backbone::Arch::Resnet18 {
            return Err(Error::config(
                "resnet_preset",
                format!("{} is not a ResNet-18 preset", self.resnet_preset),
            ));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_method(Method::Reduced)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_per_method() {
        let r = TrainConfig::for_method(Method::Reduced);
        assert_eq!((r.learning_rate, r.epochs, r.batch_size), (0.4, 100, 16));
        let m = TrainConfig::for_method(Method::Mixed);
        assert_eq!(
            (m.learning_rate, m.epochs, m.batch_size, m.alpha),
            (0.4, 200, 16, 0.1)
        );
        assert!(r.validate().is_ok() && m.validate().is_ok());
    }

    #[test]
    fn invalid_fields_are_named() {
        let with = |f: fn(&mut TrainConfig)| {
            let mut c = TrainConfig::default();
            f(&mut c);
            c.validate()
        };
        assert!(
            matches!(with(|c| c.split_ratio = 1.5), Err(Error::InvalidConfig { field, .. }) if field == "split_ratio")
        );
        assert!(
            matches!(with(|c| c.learning_rate = 0.0), Err(Error::InvalidConfig { field, .. }) if field == "learning_rate")
        );
        assert!(with(|c| c.input_size = 250).is_err());
        assert!(with(|c| c.resnet_preset = TapPreset::MixedEffnet).is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let c = TrainConfig::for_method(Method::Mixed);
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&s).unwrap(), c);
    }
}
