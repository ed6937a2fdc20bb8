//! Anomaly maps, their fusion across branches, and the anomaly score.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use image::{imageops, Rgb, RgbImage};
use ndarray::{Array2, Array3, ArrayView4, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{preprocess_to, stack, Sample};
use crate::distill::{align_teacher, pixel_loss};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::model::DistillModel;
use crate::ops::resize_bilinear;

/// Below this extent an EfficientNet map counts as constant.
pub const MIN_EXTENT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionRule {
    /// `a_res ⊙ (a_eff − min a_eff)`: the EfficientNet map normalized to
    /// [0, 1] and scaled back by its extent.
    #[default]
    Extent,
    /// `a_res · (max − min) · a_eff`.
    Literal,
}

impl FusionRule {
    pub fn name(self) -> &'static str {
        match self {
            FusionRule::Extent => "extent",
            FusionRule::Literal => "literal",
        }
    }
}

impl fmt::Display for FusionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "extent" => Ok(FusionRule::Extent),
            "literal" => Ok(FusionRule::Literal),
            _ => Err(Error::config(
                "fusion",
                format!("unknown fusion rule `{s}` (extent|literal)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapBranch {
    Resnet,
    Effnet,
    Fused,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyMap {
    /// Height × width, at the network input resolution.
    pub values: Array2<f32>,
    pub branch: MapBranch,
}

impl AnomalyMap {
    pub fn new(values: Array2<f32>, branch: MapBranch) -> Self {
        Self { values, branch }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn min(&self) -> f32 {
        self.values.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn max(&self) -> f32 {
        self.values
            .iter()
            .copied()
            .fold(f32::NEG_INFINITY, f32::max)
    }
}

/// Per-location pixel loss of an aligned pair, bilinearly upsampled to
/// `out_size × out_size`. Shape `(batch, out_size, out_size)`.
pub fn layer_anomaly_map(ft: &FeatureMap, fs: &FeatureMap, out_size: usize) -> Result<Array3<f32>> {
    let loss = pixel_loss(ft, fs)?;
    let mut out = Array3::<f32>::zeros((loss.dim().0, out_size, out_size));
    for (mut dst, src) in out.outer_iter_mut().zip(loss.outer_iter()) {
        dst.assign(&resize_bilinear(src, out_size, out_size));
    }
    Ok(out)
}

/// Sum of the layer maps of aligned pairs, one map per image.
pub fn branch_anomaly_map(
    pairs: &[(FeatureMap, FeatureMap)],
    out_size: usize,
    branch: MapBranch,
) -> Result<Vec<AnomalyMap>> {
    let (first, rest) = pairs.split_first().ok_or(Error::EmptyPairs)?;
    let mut acc = layer_anomaly_map(&first.0, &first.1, out_size)?;
    for (ft, fs) in rest {
        let layer = layer_anomaly_map(ft, fs, out_size)?;
        if layer.dim().0 != acc.dim().0 {
            return Err(Error::shape(
                "batch of layer maps",
                acc.shape(),
                layer.shape(),
            ));
        }
        acc += &layer;
    }
    Ok(acc
        .outer_iter()
        .map(|m| AnomalyMap::new(m.to_owned(), branch))
        .collect())
}

/// Combines ResNet and EfficientNet maps into one fused map.
pub fn fuse_maps(a_res: &AnomalyMap, a_eff: &AnomalyMap, rule: FusionRule) -> Result<AnomalyMap> {
    if a_res.dim() != a_eff.dim() {
        let (r, e) = (a_res.dim(), a_eff.dim());
        return Err(Error::shape("fused maps", &[r.0, r.1], &[e.0, e.1]));
    }
    let (min, max) = (a_eff.min() as f64, a_eff.max() as f64);
    let extent = max - min;
    if extent <= MIN_EXTENT {
        log::warn!("EfficientNet anomaly map is constant; fused map is zero");
        return Ok(AnomalyMap::new(
            Array2::zeros(a_res.dim()),
            MapBranch::Fused,
        ));
    }
    let mut values = Array2::<f32>::zeros(a_res.dim());
    ndarray::Zip::from(&mut values)
        .and(&a_res.values)
        .and(&a_eff.values)
        .for_each(|m, &r, &e| {
            let (r, e) = (r as f64, e as f64);
            *m = match rule {
                FusionRule::Extent => r * (e - min),
                FusionRule::Literal => r * extent * e,
            } as f32;
        });
    Ok(AnomalyMap::new(values, MapBranch::Fused))
}

/// Sum of all map values.
pub fn anomaly_score(m: &AnomalyMap) -> f64 {
    m.values.iter().map(|&v| v as f64).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    /// The ResNet map for the reduced method, the fused map for the mixed one.
    pub map: AnomalyMap,
    pub score: f64,
    pub resnet_map: AnomalyMap,
    pub effnet_map: Option<AnomalyMap>,
}

fn aligned_pairs(
    teacher: Vec<FeatureMap>,
    student: Vec<FeatureMap>,
) -> Vec<(FeatureMap, FeatureMap)> {
    teacher.iter().map(align_teacher).zip(student).collect()
}

/// Maps and scores for a preprocessed batch.
pub fn infer_tensor(model: &DistillModel, batch: ArrayView4<f32>) -> Result<Vec<Inference>> {
    let side = batch.dim().2;
    let (t, s) = model.resnet.features(batch)?;
    let res_maps = branch_anomaly_map(&aligned_pairs(t, s), side, MapBranch::Resnet)?;
    let eff_maps = match &model.effnet {
        Some(branch) => {
            let (t, s) = branch.features(batch)?;
            Some(branch_anomaly_map(
                &aligned_pairs(t, s),
                side,
                MapBranch::Effnet,
            )?)
        }
        None => None,
    };
    let mut out = Vec::with_capacity(res_maps.len());
    for (i, res) in res_maps.into_iter().enumerate() {
        let eff = eff_maps.as_ref().map(|m| m[i].clone());
        let map = match &eff {
            Some(e) => fuse_maps(&res, e, model.fusion)?,
            None => res.clone(),
        };
        out.push(Inference {
            score: anomaly_score(&map),
            map,
            resnet_map: res,
            effnet_map: eff,
        });
    }
    Ok(out)
}

/// Preprocesses one image and runs [`infer_tensor`] on it.
pub fn infer(model: &DistillModel, image: &RgbImage) -> Result<Inference> {
    let x = preprocess_to(image, model.input_size).insert_axis(Axis(0));
    Ok(infer_tensor(model, x.view())?.remove(0))
}

/// Inference over samples in batches of `batch_size`, in input order.
pub fn infer_samples(
    model: &DistillModel,
    samples: &[Sample],
    batch_size: usize,
) -> Result<Vec<Inference>> {
    let mut out = Vec::with_capacity(samples.len());
    for part in samples.chunks(batch_size.max(1)) {
        let planes: Vec<_> = part
            .iter()
            .map(|s| preprocess_to(&s.image, model.input_size))
            .collect();
        out.extend(infer_tensor(
            model,
            stack(&planes, model.input_size).view(),
        )?);
    }
    Ok(out)
}

/// Writes a single-channel 32-bit portable float map (little-endian, bottom row first).
pub fn write_pfm(path: &Path, map: &AnomalyMap) -> Result<()> {
    let (h, w) = map.dim();
    let mut f = BufWriter::new(File::create(path)?);
    write!(f, "Pf\n{w} {h}\n-1.0\n")?;
    for row in map.values.outer_iter().rev() {
        for v in row {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

/// Reads a map written by [`write_pfm`].
pub fn read_pfm(path: &Path) -> Result<Array2<f32>> {
    let bytes = std::fs::read(path)?;
    let bad = |why: &str| Error::UndecodableImage {
        path: path.to_path_buf(),
        reason: why.to_string(),
    };
    let mut header = Vec::new();
    let mut pos = 0;
    while header.len() < 3 {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("truncated header"))?;
        header.push(String::from_utf8_lossy(&bytes[pos..pos + end]).into_owned());
        pos += end + 1;
    }
    if header[0] != "Pf" {
        return Err(bad("not a single-channel PFM"));
    }
    let dims: Vec<usize> = header[1]
        .split_whitespace()
        .map(|v| v.parse().map_err(|_| bad("bad dimensions")))
        .collect::<Result<_>>()?;
    let scale: f32 = header[2].trim().parse().map_err(|_| bad("bad scale"))?;
    let (w, h) = (dims[0], dims[1]);
    let data = &bytes[pos..];
    if data.len() != w * h * 4 {
        return Err(bad("payload size does not match dimensions"));
    }
    let mut out = Array2::<f32>::zeros((h, w));
    for (i, chunk) in data.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if scale < 0.0 {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        out[[h - 1 - i / w, i % w]] = v;
    }
    Ok(out)
}

fn jet(t: f32) -> [f32; 3] {
    let c = |x: f32| x.clamp(0.0, 1.0);
    [
        c(1.5 - (4.0 * t - 3.0).abs()),
        c(1.5 - (4.0 * t - 2.0).abs()),
        c(1.5 - (4.0 * t - 1.0).abs()),
    ]
}

/// Min-max normalized jet heatmap blended half-and-half over the input image
/// (resized to the map's resolution).
pub fn heatmap_overlay(image: &RgbImage, map: &AnomalyMap) -> RgbImage {
    let (h, w) = map.dim();
    let base = imageops::resize(image, w as u32, h as u32, imageops::FilterType::Triangle);
    let (lo, hi) = (map.min(), map.max());
    let span = if hi > lo { hi - lo } else { 1.0 };
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let t = (map.values[[y as usize, x as usize]] - lo) / span;
        let heat = jet(t);
        let p = base.get_pixel(x, y);
        Rgb(std::array::from_fn(|c| {
            (0.5 * p[c] as f32 + 0.5 * heat[c] * 255.0)
                .round()
                .clamp(0.0, 255.0) as u8
        }))
    })
}

pub fn write_overlay(path: &Path, image: &RgbImage, map: &AnomalyMap) -> Result<()> {
    heatmap_overlay(image, map).save(path)?;
    Ok(())
}
