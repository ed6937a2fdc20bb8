//! MVTec-AD directory layout: reading and writing.
//!
//! ```text
//! <root>/<category>/train/good/*.png
//! <root>/<category>/test/<defect type>/*.png
//! <root>/<category>/ground_truth/<defect type>/<stem>_mask.png
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{decode_image, decode_mask, DatasetSplits, Label, Sample};
use crate::error::{Error, Result};

/// What to do with defect images that have no ground-truth mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskPolicy {
    /// Every defect image needs a mask.
    #[default]
    Required,
    /// Missing masks are tolerated; pixel-level metrics are then unavailable.
    Optional,
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    files.sort();
    Ok(files)
}

fn list_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn require_dir(path: PathBuf) -> Result<PathBuf> {
    if path.is_dir() {
        Ok(path)
    } else {
        Err(Error::MissingDirectory(path))
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn find_mask(gt_dir: &Path, stem: &str) -> Option<PathBuf> {
    let files = list_images(gt_dir).ok()?;
    let prefix = format!("{stem}_mask");
    files
        .iter()
        .find(|p| file_stem(p) == prefix)
        .or_else(|| files.iter().find(|p| file_stem(p).starts_with(&prefix)))
        .cloned()
}

/// Loads one category, requiring a mask for every defect test image.
pub fn load_mvtec_category(root: &Path, category: &str) -> Result<DatasetSplits> {
    load_mvtec_category_with(root, category, MaskPolicy::Required)
}

pub fn load_mvtec_category_with(
    root: &Path,
    category: &str,
    policy: MaskPolicy,
) -> Result<DatasetSplits> {
    let base = require_dir(root.join(category))?;
    let train_dir = require_dir(base.join("train").join("good"))?;
    let test_dir = require_dir(base.join("test"))?;
    let gt_dir = base.join("ground_truth");
    if policy == MaskPolicy::Required && !gt_dir.is_dir() {
        let has_defects = list_dirs(&test_dir)?
            .iter()
            .any(|d| d.file_name().is_some_and(|n| n != "good"));
        if has_defects {
            return Err(Error::MissingDirectory(gt_dir));
        }
    }

    let train_files = list_images(&train_dir)?;
    if train_files.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no training images in {}",
            train_dir.display()
        )));
    }

    // (path, label, mask path, source id)
    let mut test_jobs = Vec::new();
    for dir in list_dirs(&test_dir)? {
        let kind = dir.file_name().unwrap().to_string_lossy().into_owned();
        let label = if kind == "good" {
            Label::Good
        } else {
            Label::Defect
        };
        for path in list_images(&dir)? {
            let stem = file_stem(&path);
            let mask = if label == Label::Defect {
                match find_mask(&gt_dir.join(&kind), &stem) {
                    Some(m) => Some(m),
                    None if policy == MaskPolicy::Required => {
                        return Err(Error::UnpairedMask {
                            stem: format!("{kind}/{stem}"),
                        })
                    }
                    None => None,
                }
            } else {
                None
            };
            test_jobs.push((path, label, mask, format!("test/{kind}/{stem}")));
        }
    }

    let train_good = train_files
        .par_iter()
        .map(|p| {
            Ok(Sample {
                image: decode_image(p)?,
                label: Label::Good,
                mask: None,
                source_id: format!("train/good/{}", file_stem(p)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let test = test_jobs
        .into_par_iter()
        .map(|(path, label, mask_path, source_id)| {
            let image = decode_image(&path)?;
            let mask = match mask_path {
                Some(mp) => {
                    let mut m = decode_mask(&mp)?;
                    if m.dimensions() != image.dimensions() {
                        let (w, h) = image.dimensions();
                        m = image::imageops::resize(&m, w, h, image::imageops::FilterType::Nearest);
                    }
                    Some(m)
                }
                None => None,
            };
            Ok(Sample {
                image,
                label,
                mask,
                source_id,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    log::info!(
        "loaded {category}: {} train, {} test good, {} test defect",
        train_good.len(),
        test.iter().filter(|s| s.label == Label::Good).count(),
        test.iter().filter(|s| s.label == Label::Defect).count()
    );
    Ok(DatasetSplits {
        category: category.to_string(),
        train_good,
        test,
    })
}

/// Writes splits to `<root>/<category>/...` in the MVTec layout and returns
/// the category directory.
pub fn materialize(splits: &DatasetSplits, root: &Path) -> Result<PathBuf> {
    let base = root.join(&splits.category);
    for sample in splits.train_good.iter().chain(&splits.test) {
        let img_path = base.join(format!("{}.png", sample.source_id));
        fs::create_dir_all(img_path.parent().unwrap())?;
        sample.image.save(&img_path)?;
        if let Some(mask) = &sample.mask {
            let dir = base.join("ground_truth").join(sample.defect_type());
            fs::create_dir_all(&dir)?;
            mask.save(dir.join(format!("{}_mask.png", sample.stem())))?;
        }
    }
    Ok(base)
}
