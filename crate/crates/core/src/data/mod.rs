//! Samples, dataset splits, image decoding and preprocessing.

mod mvtec;
mod synthetic;

use std::path::Path;

use image::{imageops, GrayImage, RgbImage};
use ndarray::{Array2, Array3, Array4, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::resize_nearest;

pub use mvtec::{load_mvtec_category, load_mvtec_category_with, materialize, MaskPolicy};
pub use synthetic::{
    generate_synthetic_texture_dataset, DefectKind, TextureFamily, SYNTHETIC_SIDE,
};

/// Side of the square network input.
pub const INPUT_SIDE: usize = 256;
pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Good,
    Defect,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: RgbImage,
    pub label: Label,
    /// Binary mask (0 or 255) with the image's dimensions.
    pub mask: Option<GrayImage>,
    /// `<split>/<defect type>/<stem>`, unique within a dataset.
    pub source_id: String,
}

impl Sample {
    /// Defect type encoded in the source id (`good` for defect-free samples).
    pub fn defect_type(&self) -> &str {
        self.source_id.split('/').nth(1).unwrap_or("good")
    }

    pub fn stem(&self) -> &str {
        self.source_id.rsplit('/').next().unwrap_or(&self.source_id)
    }

    /// Mask at `side × side` (nearest neighbour); all false when there is no mask.
    pub fn mask_at(&self, side: usize) -> Array2<bool> {
        match &self.mask {
            Some(m) => {
                let (w, h) = m.dimensions();
                let plane = Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
                    m.get_pixel(x as u32, y as u32)[0] > 127
                });
                resize_nearest(plane.view(), side, side)
            }
            None => Array2::from_elem((side, side), false),
        }
    }

    pub fn mask_pixels(&self) -> usize {
        self.mask
            .as_ref()
            .map_or(0, |m| m.pixels().filter(|p| p[0] > 127).count())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    pub category: String,
    pub train_good: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl DatasetSplits {
    pub fn n_test_good(&self) -> usize {
        self.test.iter().filter(|s| s.label == Label::Good).count()
    }

    pub fn n_test_defect(&self) -> usize {
        self.test
            .iter()
            .filter(|s| s.label == Label::Defect)
            .count()
    }

    /// True when every defect test image carries a mask.
    pub fn has_masks(&self) -> bool {
        self.test
            .iter()
            .all(|s| s.label == Label::Good || s.mask.is_some())
    }
}

/// Decodes a PNG or JPEG file to 8-bit RGB (grayscale replicated, 16-bit rescaled).
pub fn decode_image(path: &Path) -> Result<RgbImage> {
    let undecodable = |reason: String| Error::UndecodableImage {
        path: path.to_path_buf(),
        reason,
    };
    let reader = image::ImageReader::open(path)
        .map_err(|e| undecodable(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| undecodable(e.to_string()))?;
    let img = reader.decode().map_err(|e| undecodable(e.to_string()))?;
    Ok(img.to_rgb8())
}

pub(crate) fn decode_mask(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|e| Error::UndecodableImage {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut mask = img.to_luma8();
    for p in mask.pixels_mut() {
        p[0] = if p[0] > 127 { 255 } else { 0 };
    }
    Ok(mask)
}

/// Bilinear resize to `side × side`, scale to [0, 1], then ImageNet
/// standardization. Output is channel-first.
pub fn preprocess_to(image: &RgbImage, side: usize) -> Array3<f32> {
    let resized;
    let img = if image.dimensions() == (side as u32, side as u32) {
        image
    } else {
        resized = imageops::resize(
            image,
            side as u32,
            side as u32,
            imageops::FilterType::Triangle,
        );
        &resized
    };
    let mut out = Array3::<f32>::zeros((3, side, side));
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            out[[c, y as usize, x as usize]] =
                (p[c] as f32 / 255.0 - IMAGENET_MEAN[c]) / IMAGENET_STD[c];
        }
    }
    out
}

/// [`preprocess_to`] at the standard 256 input side.
pub fn preprocess(image: &RgbImage) -> Array3<f32> {
    preprocess_to(image, INPUT_SIDE)
}

/// Preprocesses many images in parallel into one `(n, 3, side, side)` batch.
pub fn preprocess_batch(images: &[&RgbImage], side: usize) -> Array4<f32> {
    let planes: Vec<Array3<f32>> = images
        .par_iter()
        .map(|im| preprocess_to(im, side))
        .collect();
    stack(&planes, side)
}

pub(crate) fn stack(planes: &[Array3<f32>], side: usize) -> Array4<f32> {
    let mut batch = Array4::<f32>::zeros((planes.len(), 3, side, side));
    for (mut dst, src) in batch.axis_iter_mut(Axis(0)).zip(planes) {
        dst.assign(src);
    }
    batch
}
