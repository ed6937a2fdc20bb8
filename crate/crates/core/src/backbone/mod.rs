//! Frozen teacher backbones and their tap contracts.

mod effnet;
mod resnet;
pub mod weights;

use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView4;
use serde::{Deserialize, Serialize};

pub use weights::{ParamSpec, ParamStore, WeightsSource, WEIGHTS_DIR_ENV};

use crate::error::{Error, Result};
use crate::features::{FeatureMap, Tap};

/// Input side length the tap contracts are stated for.
pub const REFERENCE_INPUT: usize = 256;

/// Largest stride of any tap; valid input sides are multiples of it.
pub const MAX_STRIDE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Resnet18,
    EfficientnetB0,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::Resnet18 => "resnet18",
            Arch::EfficientnetB0 => "efficientnet_b0",
        }
    }

    /// Canonical parameter table of the convolutional trunk.
    pub fn param_specs(self) -> Vec<ParamSpec> {
        match self {
            Arch::Resnet18 => resnet::param_specs(),
            Arch::EfficientnetB0 => effnet::param_specs(),
        }
    }

    /// `(channels, spatial side at 256 input)` of every tap point.
    pub fn tap_shape(self, tap: Tap) -> Option<(usize, usize)> {
        match (self, tap) {
            (Arch::Resnet18, Tap::Stem) => Some((64, 128)),
            (Arch::Resnet18, Tap::Block(1)) => Some((64, 64)),
            (Arch::Resnet18, Tap::Block(2)) => Some((128, 32)),
            (Arch::Resnet18, Tap::Block(3)) => Some((256, 16)),
            (Arch::Resnet18, Tap::Block(4)) => Some((512, 8)),
            (Arch::EfficientnetB0, Tap::Stem) => Some((32, 128)),
            (Arch::EfficientnetB0, Tap::Stage(1)) => Some((16, 128)),
            (Arch::EfficientnetB0, Tap::Stage(2)) => Some((24, 64)),
            (Arch::EfficientnetB0, Tap::Stage(3)) => Some((40, 32)),
            (Arch::EfficientnetB0, Tap::Stage(4)) => Some((80, 16)),
            (Arch::EfficientnetB0, Tap::Stage(5)) => Some((112, 16)),
            (Arch::EfficientnetB0, Tap::Stage(6)) => Some((192, 8)),
            (Arch::EfficientnetB0, Tap::Stage(7)) => Some((320, 8)),
            _ => None,
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "resnet18" => Ok(Arch::Resnet18),
            "efficientnet_b0" | "effnet_b0" => Ok(Arch::EfficientnetB0),
            _ => Err(Error::config("arch", format!("unknown backbone `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TapPreset {
    /// ResNet stem + blocks 1..3, for the single-teacher student.
    ReducedStudent,
    /// ResNet stem + blocks 1..2, the ResNet branch of the two-teacher model.
    MixedResnet,
    /// EfficientNet stages 5 and 6.
    MixedEffnet,
    /// ResNet blocks 1 and 2.
    AblationL12,
    /// ResNet blocks 2 and 3.
    AblationL23,
}

impl TapPreset {
    pub const ALL: [TapPreset; 5] = [
        TapPreset::ReducedStudent,
        TapPreset::MixedResnet,
        TapPreset::MixedEffnet,
        TapPreset::AblationL12,
        TapPreset::AblationL23,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TapPreset::ReducedStudent => "reduced_student",
            TapPreset::MixedResnet => "mixed_resnet",
            TapPreset::MixedEffnet => "mixed_effnet",
            TapPreset::AblationL12 => "ablation_l12",
            TapPreset::AblationL23 => "ablation_l23",
        }
    }

    fn arch_and_taps(self) -> (Arch, &'static [Tap]) {
        match self {
            TapPreset::ReducedStudent => (
                Arch::Resnet18,
                &[Tap::Stem, Tap::Block(1), Tap::Block(2), Tap::Block(3)],
            ),
            TapPreset::MixedResnet => (Arch::Resnet18, &[Tap::Stem, Tap::Block(1), Tap::Block(2)]),
            TapPreset::MixedEffnet => (Arch::EfficientnetB0, &[Tap::Stage(5), Tap::Stage(6)]),
            TapPreset::AblationL12 => (Arch::Resnet18, &[Tap::Block(1), Tap::Block(2)]),
            TapPreset::AblationL23 => (Arch::Resnet18, &[Tap::Block(2), Tap::Block(3)]),
        }
    }
}

impl fmt::Display for TapPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TapPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        TapPreset::ALL
            .into_iter()
            .find(|p| p.name() == norm)
            .ok_or_else(|| Error::config("preset", format!("unknown tap preset `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TapSpec {
    pub tap: Tap,
    pub channels: usize,
    /// Spatial side for a 256x256 input.
    pub spatial: usize,
}

impl TapSpec {
    pub fn stride(&self) -> usize {
        REFERENCE_INPUT / self.spatial
    }

    /// Spatial side for an input of side `input` (a multiple of [`MAX_STRIDE`]).
    pub fn spatial_for(&self, input: usize) -> usize {
        input / self.stride()
    }
}

/// Which stages of a backbone are tapped, with the expected shape of each.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerTapSpec {
    pub arch: Arch,
    pub taps: Vec<TapSpec>,
}

impl LayerTapSpec {
    /// Builds a spec from tap points, filling shapes from the architecture table.
    /// Taps must be valid for `arch` and strictly ordered shallow to deep.
    pub fn new(arch: Arch, taps: &[Tap]) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::InvalidSpec("no taps".into()));
        }
        if taps.windows(2).any(|w| w[0].depth() >= w[1].depth()) {
            return Err(Error::InvalidSpec(format!(
                "taps must be strictly ordered shallow to deep: {taps:?}"
            )));
        }
        let taps = taps
            .iter()
            .map(|&tap| {
                arch.tap_shape(tap)
                    .map(|(channels, spatial)| TapSpec {
                        tap,
                        channels,
                        spatial,
                    })
                    .ok_or_else(|| Error::InvalidSpec(format!("{arch} has no tap {tap}")))
            })
            .collect::<Result<_>>()?;
        Ok(Self { arch, taps })
    }

    pub fn tap_ids(&self) -> Vec<Tap> {
        self.taps.iter().map(|t| t.tap).collect()
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }
}

pub fn tap_preset(arch: Arch, preset: TapPreset) -> Result<LayerTapSpec> {
    let (preset_arch, taps) = preset.arch_and_taps();
    if preset_arch != arch {
        return Err(Error::InvalidPreset {
            arch: arch.to_string(),
            preset: preset.to_string(),
        });
    }
    LayerTapSpec::new(arch, taps)
}

/// The backbone a preset belongs to.
pub fn preset_arch(preset: TapPreset) -> Arch {
    preset.arch_and_taps().0
}

/// A frozen pretrained (or seeded) feature extractor running in evaluation mode.
///
/// There is no mutable access to the parameters after construction.
#[derive(Debug)]
pub struct TeacherBackbone {
    arch: Arch,
    source: String,
    fingerprint: String,
    params: ParamStore,
}

impl TeacherBackbone {
    pub fn from_params(arch: Arch, params: ParamStore, source: impl Into<String>) -> Result<Self> {
        let params = params.conform(&arch.param_specs(), arch.name())?;
        let fingerprint = params.fingerprint();
        Ok(Self {
            arch,
            source: source.into(),
            fingerprint,
            params,
        })
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    /// Resolved weight provenance (`seeded:<n>` or a file path).
    pub fn source(&self) -> &str {
        &self.source
    }

    /// Hex digest computed at load time.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Hex digest recomputed from the parameters as they are now.
    pub fn current_fingerprint(&self) -> String {
        self.params.fingerprint()
    }

    pub fn parameter_count(&self) -> usize {
        self.params
            .iter()
            .filter(|(name, _)| !name.contains("running_"))
            .map(|(_, t)| t.len())
            .sum()
    }

    /// One feature map per tap of `spec`, shapes checked against the contract.
    pub fn extract_features(
        &self,
        batch: ArrayView4<f32>,
        spec: &LayerTapSpec,
    ) -> Result<Vec<FeatureMap>> {
        if spec.arch != self.arch {
            return Err(Error::InvalidPreset {
                arch: self.arch.to_string(),
                preset: format!("{} tap spec", spec.arch),
            });
        }
        let (n, c, h, w) = batch.dim();
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        if c != 3 || h != w || h % MAX_STRIDE != 0 {
            return Err(Error::ShapeContractViolation {
                tap: "input".into(),
                expected: vec![n, 3, h - h % MAX_STRIDE, h - h % MAX_STRIDE],
                actual: vec![n, c, h, w],
            });
        }
        let taps = spec.tap_ids();
        let maps = match self.arch {
            Arch::Resnet18 => resnet::forward(&self.params, batch, &taps),
            Arch::EfficientnetB0 => effnet::forward(&self.params, batch, &taps),
        };
        spec.taps
            .iter()
            .zip(maps)
            .map(|(ts, data)| {
                let s = ts.spatial_for(h);
                let expected = [n, ts.channels, s, s];
                if data.shape() != expected {
                    return Err(Error::ShapeContractViolation {
                        tap: ts.tap.to_string(),
                        expected: expected.to_vec(),
                        actual: data.shape().to_vec(),
                    });
                }
                Ok(FeatureMap::new(ts.tap, ts.stride(), data))
            })
            .collect()
    }
}

/// Loads a frozen teacher from a weights source string: `seeded:<n>`,
/// `torchvision` (exported file in the weights directory), `auto`, or a
/// path to a safetensors file with torchvision parameter names.
pub fn load_teacher(arch: Arch, weights_source: &str) -> Result<TeacherBackbone> {
    let specs = arch.param_specs();
    let exported = weights::weights_dir().join(format!("{}.safetensors", arch.name()));
    match WeightsSource::parse(weights_source) {
        WeightsSource::Seeded(seed) => TeacherBackbone::from_params(
            arch,
            ParamStore::seeded(&specs, seed),
            format!("seeded:{seed}"),
        ),
        WeightsSource::Torchvision => load_file(arch, &exported),
        WeightsSource::Auto if exported.is_file() => load_file(arch, &exported),
        WeightsSource::Auto => {
            log::warn!(
                "no exported {} weights at {}; using seeded:0",
                arch.name(),
                exported.display()
            );
            TeacherBackbone::from_params(arch, ParamStore::seeded(&specs, 0), "seeded:0")
        }
        WeightsSource::File(path) => load_file(arch, &path),
    }
}

fn load_file(arch: Arch, path: &std::path::Path) -> Result<TeacherBackbone> {
    if !path.is_file() {
        return Err(Error::MissingWeights(path.display().to_string()));
    }
    let params = ParamStore::load_safetensors(path)?;
    TeacherBackbone::from_params(arch, params, path.display().to_string())
}
