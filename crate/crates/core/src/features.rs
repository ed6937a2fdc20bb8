use std::fmt;
use std::str::FromStr;

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::error::Error;

/// A named intermediate activation of a backbone.
///
/// ResNet taps are the stem (after conv + norm + ReLU, before max-pooling)
/// and the outputs of residual stages `block1..block4`. EfficientNet taps are
/// the outputs of MBConv stages `stage1..stage7`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Tap {
    Stem,
    Block(u8),
    Stage(u8),
}

impl Tap {
    /// Position from shallow (0) to deep within its backbone.
    pub fn depth(self) -> u8 {
        match self {
            Tap::Stem => 0,
            Tap::Block(i) | Tap::Stage(i) => i,
        }
    }
}

impl fmt::Display for Tap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tap::Stem => f.write_str("stem"),
            Tap::Block(i) => write!(f, "block{i}"),
            Tap::Stage(i) => write!(f, "stage{i}"),
        }
    }
}

impl FromStr for Tap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse_index = |rest: &str| rest.parse::<u8>().ok().filter(|i| *i >= 1);
        if s == "stem" {
            return Ok(Tap::Stem);
        }
        if let Some(i) = s.strip_prefix("block").and_then(parse_index) {
            return Ok(Tap::Block(i));
        }
        if let Some(i) = s.strip_prefix("stage").and_then(parse_index) {
            return Ok(Tap::Stage(i));
        }
        Err(Error::config("tap", format!("unknown tap `{s}`")))
    }
}

impl From<Tap> for String {
    fn from(t: Tap) -> Self {
        t.to_string()
    }
}

impl TryFrom<String> for Tap {
    type Error = Error;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// One tapped activation for a batch: `(batch, channels, height, width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<F = f32> {
    pub tap: Tap,
    /// Input pixels per feature cell along each axis.
    pub stride: usize,
    pub data: Array4<F>,
}

impl<F> FeatureMap<F> {
    pub fn new(tap: Tap, stride: usize, data: Array4<F>) -> Self {
        Self { tap, stride, data }
    }

    pub fn batch(&self) -> usize {
        self.data.dim().0
    }

    pub fn channels(&self) -> usize {
        self.data.dim().1
    }

    /// `(height, width)`.
    pub fn spatial(&self) -> (usize, usize) {
        let (_, _, h, w) = self.data.dim();
        (h, w)
    }

    pub fn shape(&self) -> [usize; 4] {
        let (n, c, h, w) = self.data.dim();
        [n, c, h, w]
    }
}
