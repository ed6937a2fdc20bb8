//! Procedural texture datasets with injected defects and exact masks.

use std::f32::consts::PI;
use std::fmt;
use std::str::FromStr;

use image::{GrayImage, Luma, Rgb, RgbImage};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DatasetSplits, Label, Sample};
use crate::error::{Error, Result};

/// Side of every generated image.
pub const SYNTHETIC_SIDE: usize = 256;
const MIN_MASK_FRACTION: f64 = 0.001;
const MAX_MASK_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureFamily {
    Grating,
    Checker,
    ValueNoise,
}

impl TextureFamily {
    pub const ALL: [TextureFamily; 3] = [Self::Grating, Self::Checker, Self::ValueNoise];

    pub fn name(self) -> &'static str {
        match self {
            Self::Grating => "grating",
            Self::Checker => "checker",
            Self::ValueNoise => "value_noise",
        }
    }

    fn tint(self) -> [f32; 3] {
        match self {
            Self::Grating => [0.95, 0.85, 0.70],
            Self::Checker => [0.80, 0.85, 0.95],
            Self::ValueNoise => [0.90, 0.80, 0.75],
        }
    }
}

impl fmt::Display for TextureFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TextureFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|f| f.name() == norm)
            .ok_or_else(|| Error::config("family", format!("unknown texture family `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectKind {
    TextureSwap,
    Scratch,
    Blur,
}

impl DefectKind {
    pub const ALL: [DefectKind; 3] = [Self::TextureSwap, Self::Scratch, Self::Blur];

    pub fn name(self) -> &'static str {
        match self {
            Self::TextureSwap => "texture_swap",
            Self::Scratch => "scratch",
            Self::Blur => "blur",
        }
    }
}

#[derive(Debug, Clone)]
enum Texture {
    Grating {
        theta: f32,
        period: f32,
        phase: f32,
        mean: f32,
        contrast: f32,
    },
    Checker {
        theta: f32,
        cell: f32,
        offset: (f32, f32),
        mean: f32,
        contrast: f32,
    },
    ValueNoise {
        octaves: Vec<(f32, Array2<f32>)>,
        mean: f32,
        contrast: f32,
    },
}

fn lattice(rng: &mut ChaCha8Rng, cell: f32) -> (f32, Array2<f32>) {
    let n = (SYNTHETIC_SIDE as f32 / cell).ceil() as usize + 2;
    (
        cell,
        Array2::from_shape_simple_fn((n, n), || rng.random_range(-1.0f32..1.0)),
    )
}

fn smooth(t: f32) -> f32 {
    t * t * (3.0 - 2.0 * t)
}

impl Texture {
    fn sample(family: TextureFamily, rng: &mut ChaCha8Rng) -> Self {
        let mean = 0.5 + rng.random_range(-0.015f32..0.015);
        match family {
            TextureFamily::Grating => Texture::Grating {
                theta: 0.35 + rng.random_range(-0.05f32..0.05),
                period: 12.0 + rng.random_range(-1.0f32..1.0),
                phase: rng.random_range(0.0..2.0 * PI),
                mean,
                contrast: 0.35 + rng.random_range(-0.01f32..0.01),
            },
            TextureFamily::Checker => {
                let cell = 16.0 + rng.random_range(-1.0f32..1.0);
                Texture::Checker {
                    theta: rng.random_range(-0.04f32..0.04),
                    cell,
                    offset: (
                        rng.random_range(0.0..2.0 * cell),
                        rng.random_range(0.0..2.0 * cell),
                    ),
                    mean,
                    contrast: 0.22 + rng.random_range(-0.01f32..0.01),
                }
            }
            TextureFamily::ValueNoise => Texture::ValueNoise {
                octaves: vec![lattice(rng, 32.0), lattice(rng, 12.0)],
                mean,
                contrast: 0.25,
            },
        }
    }

    /// A visibly different texture of the same family, for texture swaps.
    fn swapped(&self, rng: &mut ChaCha8Rng) -> Self {
        match self {
            Texture::Grating {
                theta,
                period,
                mean,
                contrast,
                ..
            } => Texture::Grating {
                theta: theta + PI / 3.0,
                period: period * 0.6,
                phase: rng.random_range(0.0..2.0 * PI),
                mean: *mean,
                contrast: *contrast,
            },
            Texture::Checker {
                theta,
                cell,
                mean,
                contrast,
                ..
            } => Texture::Checker {
                theta: theta + PI / 4.0,
                cell: cell * 0.5,
                offset: (0.0, 0.0),
                mean: *mean,
                contrast: *contrast,
            },
            Texture::ValueNoise { mean, contrast, .. } => Texture::ValueNoise {
                octaves: vec![lattice(rng, 5.0)],
                mean: *mean,
                contrast: contrast * 1.6,
            },
        }
    }

    fn value(&self, x: f32, y: f32) -> f32 {
        match self {
            Texture::Grating {
                theta,
                period,
                phase,
                mean,
                contrast,
            } => {
                let u = x * theta.cos() + y * theta.sin();
                mean + contrast * (2.0 * PI * u / period + phase).sin()
            }
            Texture::Checker {
                theta,
                cell,
                offset,
                mean,
                contrast,
            } => {
                let (s, c) = theta.sin_cos();
                let u = ((x * c + y * s + offset.0) / cell).floor() as i64;
                let v = ((-x * s + y * c + offset.1) / cell).floor() as i64;
                if (u + v).rem_euclid(2) == 0 {
                    mean + contrast
                } else {
                    mean - contrast
                }
            }
            Texture::ValueNoise {
                octaves,
                mean,
                contrast,
            } => {
                let mut acc = 0.0;
                let mut weight = 1.0;
                let mut total = 0.0;
                for (cell, grid) in octaves {
                    let (gx, gy) = (x / cell, y / cell);
                    let (ix, iy) = (gx.floor() as usize, gy.floor() as usize);
                    let (tx, ty) = (smooth(gx.fract()), smooth(gy.fract()));
                    let top = grid[[iy, ix]] * (1.0 - tx) + grid[[iy, ix + 1]] * tx;
                    let bottom = grid[[iy + 1, ix]] * (1.0 - tx) + grid[[iy + 1, ix + 1]] * tx;
                    acc += weight * (top * (1.0 - ty) + bottom * ty);
                    total += weight;
                    weight *= 0.5;
                }
                mean + contrast * acc / total
            }
        }
    }

    fn render(&self) -> Array2<f32> {
        Array2::from_shape_fn((SYNTHETIC_SIDE, SYNTHETIC_SIDE), |(y, x)| {
            self.value(x as f32, y as f32)
        })
    }
}

struct Ellipse {
    cx: f32,
    cy: f32,
    a: f32,
    b: f32,
    rot: f32,
}

impl Ellipse {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        let side = SYNTHETIC_SIDE as f32;
        Self {
            cx: rng.random_range(0.16 * side..0.84 * side),
            cy: rng.random_range(0.16 * side..0.84 * side),
            a: rng.random_range(16.0..36.0),
            b: rng.random_range(16.0..36.0),
            rot: rng.random_range(0.0..PI),
        }
    }

    fn contains(&self, x: f32, y: f32) -> bool {
        let (s, c) = self.rot.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * c + dy * s) / self.a;
        let v = (-dx * s + dy * c) / self.b;
        u * u + v * v <= 1.0
    }

    fn mask(&self) -> Array2<bool> {
        Array2::from_shape_fn((SYNTHETIC_SIDE, SYNTHETIC_SIDE), |(y, x)| {
            self.contains(x as f32, y as f32)
        })
    }
}

fn scratch_mask(rng: &mut ChaCha8Rng) -> Array2<bool> {
    let side = SYNTHETIC_SIDE as f32;
    let (x0, y0) = (
        rng.random_range(0.2 * side..0.8 * side),
        rng.random_range(0.2 * side..0.8 * side),
    );
    let angle = rng.random_range(0.0..2.0 * PI);
    let len = rng.random_range(80.0f32..160.0);
    let half_width = rng.random_range(1.5f32..3.0);
    let (dx, dy) = (angle.cos(), angle.sin());
    Array2::from_shape_fn((SYNTHETIC_SIDE, SYNTHETIC_SIDE), |(y, x)| {
        let (px, py) = (x as f32 - x0, y as f32 - y0);
        let t = (px * dx + py * dy).clamp(0.0, len);
        let (qx, qy) = (px - t * dx, py - t * dy);
        (qx * qx + qy * qy).sqrt() <= half_width
    })
}

fn box_blur(plane: &Array2<f32>, radius: usize) -> Array2<f32> {
    let (h, w) = plane.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let (y0, y1) = (y.saturating_sub(radius), (y + radius + 1).min(h));
        let (x0, x1) = (x.saturating_sub(radius), (x + radius + 1).min(w));
        let region = plane.slice(ndarray::s![y0..y1, x0..x1]);
        region.sum() / region.len() as f32
    })
}

fn inject(
    plane: &mut Array2<f32>,
    texture: &Texture,
    kind: DefectKind,
    rng: &mut ChaCha8Rng,
) -> Array2<bool> {
    loop {
        let (mask, replacement) = match kind {
            DefectKind::TextureSwap => {
                let mask = Ellipse::sample(rng).mask();
                (mask, texture.swapped(rng).render())
            }
            DefectKind::Scratch => {
                let level = if rng.random_bool(0.5) { 0.05 } else { 0.95 };
                (scratch_mask(rng), Array2::from_elem(plane.dim(), level))
            }
            DefectKind::Blur => (Ellipse::sample(rng).mask(), box_blur(plane, 5)),
        };
        let fraction = mask.iter().filter(|&&m| m).count() as f64 / mask.len() as f64;
        if !(MIN_MASK_FRACTION..=MAX_MASK_FRACTION).contains(&fraction) {
            continue;
        }
        ndarray::Zip::from(&mut *plane)
            .and(&mask)
            .and(&replacement)
            .for_each(|p, &m, &r| {
                if m {
                    *p = r;
                }
            });
        return mask;
    }
}

fn to_rgb(
    plane: &Array2<f32>,
    tint: [f32; 3],
    noise: &Normal<f32>,
    rng: &mut ChaCha8Rng,
) -> RgbImage {
    let side = SYNTHETIC_SIDE as u32;
    let mut img = RgbImage::new(side, side);
    for (x, y, p) in img.enumerate_pixels_mut() {
        let v = plane[[y as usize, x as usize]] + noise.sample(rng);
        *p = Rgb(tint.map(|t| ((v * t).clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    img
}

fn to_mask_image(mask: &Array2<bool>) -> GrayImage {
    let side = SYNTHETIC_SIDE as u32;
    GrayImage::from_fn(side, side, |x, y| {
        Luma([if mask[[y as usize, x as usize]] {
            255
        } else {
            0
        }])
    })
}

/// Generates a deterministic dataset of one texture family. Defect samples
/// cycle through texture swaps, scratches and blurred regions; each mask
/// covers between 0.1% and 10% of the image.
pub fn generate_synthetic_texture_dataset(
    family: TextureFamily,
    n_train: usize,
    n_test_good: usize,
    n_test_defect: usize,
    seed: u64,
) -> DatasetSplits {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f32, 0.02).expect("valid std");
    let tint = family.tint();
    let good = |rng: &mut ChaCha8Rng, id: String| {
        let plane = Texture::sample(family, rng).render();
        Sample {
            image: to_rgb(&plane, tint, &noise, rng),
            label: Label::Good,
            mask: None,
            source_id: id,
        }
    };
    let train_good = (0..n_train)
        .map(|i| good(&mut rng, format!("train/good/{i:03}")))
        .collect();
    let mut test: Vec<Sample> = (0..n_test_good)
        .map(|i| good(&mut rng, format!("test/good/{i:03}")))
        .collect();
    for i in 0..n_test_defect {
        let kind = DefectKind::ALL[i % DefectKind::ALL.len()];
        let texture = Texture::sample(family, &mut rng);
        let mut plane = texture.render();
        let mask = inject(&mut plane, &texture, kind, &mut rng);
        test.push(Sample {
            image: to_rgb(&plane, tint, &noise, &mut rng),
            label: Label::Defect,
            mask: Some(to_mask_image(&mask)),
            source_id: format!("test/{}/{i:03}", kind.name()),
        });
    }
    DatasetSplits {
        category: family.name().to_string(),
        train_good,
        test,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn same_seed_gives_identical_datasets() {
        let a = generate_synthetic_texture_dataset(TextureFamily::Grating, 5, 2, 3, 3);
        let b = generate_synthetic_texture_dataset(TextureFamily::Grating, 5, 2, 3, 3);
        assert_eq!(a, b);
        let c = generate_synthetic_texture_dataset(TextureFamily::Grating, 5, 2, 3, 4);
        assert_ne!(a.train_good[0].image, c.train_good[0].image);
    }

    #[test]
    fn masks_are_bounded_and_only_on_defects() {
        for family in TextureFamily::ALL {
            let d = generate_synthetic_texture_dataset(family, 1, 3, 6, 11);
            for s in &d.test {
                match s.label {
                    Label::Good => assert!(s.mask.is_none()),
                    Label::Defect => {
                        let frac =
                            s.mask_pixels() as f64 / (SYNTHETIC_SIDE * SYNTHETIC_SIDE) as f64;
                        assert!((0.001..=0.10).contains(&frac), "{}: {frac}", s.source_id);
                    }
                }
            }
        }
    }

    #[test]
    fn source_ids_are_unique_and_kinds_cycle() {
        let d = generate_synthetic_texture_dataset(TextureFamily::Checker, 4, 2, 6, 1);
        let ids: HashSet<_> = d
            .train_good
            .iter()
            .chain(&d.test)
            .map(|s| &s.source_id)
            .collect();
        assert_eq!(ids.len(), 12);
        let kinds: HashSet<_> = d.test.iter().map(Sample::defect_type).collect();
        assert_eq!(kinds.len(), 4);
    }

    #[test]
    fn family_names_parse() {
        assert_eq!(
            "VALUE-NOISE".parse::<TextureFamily>().unwrap(),
            TextureFamily::ValueNoise
        );
        assert!("plaid".parse::<TextureFamily>().is_err());
    }
}
