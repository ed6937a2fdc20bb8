//! A trained teacher/student model ready for inference.

use std::sync::Arc;

use ndarray::{Array3, ArrayView4};

use crate::anomaly::FusionRule;
use crate::backbone::{LayerTapSpec, TeacherBackbone};
use crate::data::stack;
use crate::distill::{per_image_layer_loss, Method, Target};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::student::StudentNet;

/// One frozen teacher with the student that imitates it.
#[derive(Debug, Clone)]
pub struct BranchModel {
    pub teacher: Arc<TeacherBackbone>,
    pub spec: LayerTapSpec,
    pub student: StudentNet<f32>,
}

impl BranchModel {
    pub fn new(
        teacher: Arc<TeacherBackbone>,
        spec: LayerTapSpec,
        student: StudentNet<f32>,
    ) -> Result<Self> {
        if teacher.arch() != spec.arch {
            return Err(Error::InvalidSpec(format!(
                "{} teacher with a {} tap spec",
                teacher.arch(),
                spec.arch
            )));
        }
        let student_taps: Vec<_> = student.taps().iter().map(|t| t.tap).collect();
        if student_taps != spec.tap_ids() {
            return Err(Error::InvalidSpec(format!(
                "student taps {student_taps:?} do not match spec taps {:?}",
                spec.tap_ids()
            )));
        }
        Ok(Self {
            teacher,
            spec,
            student,
        })
    }

    /// Raw teacher maps and student maps for a preprocessed batch.
    pub fn features(&self, batch: ArrayView4<f32>) -> Result<(Vec<FeatureMap>, Vec<FeatureMap>)> {
        let t = self.teacher.extract_features(batch, &self.spec)?;
        let s = self.student.forward(batch)?;
        Ok((t, s))
    }

    /// Per-image sum of layer losses over this branch's taps.
    pub fn per_image_losses(&self, batch: ArrayView4<f32>) -> Result<Vec<f64>> {
        let (t, s) = self.features(batch)?;
        let per_tap: Vec<Vec<f64>> = t
            .iter()
            .zip(&s)
            .map(|(ft, fs)| {
                per_image_layer_loss(Target::from_teacher(ft).data.view(), fs.data.view())
            })
            .collect();
        Ok(sum_taps(&per_tap, batch.dim().0))
    }
}

pub(crate) fn sum_taps(per_tap: &[Vec<f64>], n: usize) -> Vec<f64> {
    (0..n).map(|i| per_tap.iter().map(|l| l[i]).sum()).collect()
}

pub(crate) fn combine(res: &[f64], eff: Option<&[f64]>, alpha: f64) -> Vec<f64> {
    match eff {
        Some(eff) => res.iter().zip(eff).map(|(r, e)| r + alpha * e).collect(),
        None => res.to_vec(),
    }
}

#[derive(Debug, Clone)]
pub struct DistillModel {
    pub method: Method,
    pub resnet: BranchModel,
    /// Present for the mixed method.
    pub effnet: Option<BranchModel>,
    pub alpha: f64,
    pub input_size: usize,
    pub fusion: FusionRule,
}

impl DistillModel {
    /// Per-image training objective (ResNet total plus `alpha` times the
    /// EfficientNet total) on a preprocessed batch.
    pub fn per_image_losses(&self, batch: ArrayView4<f32>) -> Result<Vec<f64>> {
        let res = self.resnet.per_image_losses(batch)?;
        let eff = match &self.effnet {
            Some(b) => Some(b.per_image_losses(batch)?),
            None => None,
        };
        Ok(combine(&res, eff.as_deref(), self.alpha))
    }

    /// Mean objective over preprocessed images, evaluated in chunks.
    pub fn mean_loss(&self, images: &[Array3<f32>], chunk: usize) -> Result<f64> {
        if images.is_empty() {
            return Err(Error::EmptyDataset("no images to evaluate".into()));
        }
        let mut losses = Vec::with_capacity(images.len());
        for part in images.chunks(chunk.max(1)) {
            let batch = stack(part, self.input_size);
            losses.extend(self.per_image_losses(batch.view())?);
        }
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    }

    /// Trainable parameters across students.
    pub fn student_parameters(&self) -> usize {
        self.resnet.student.parameter_count()
            + self
                .effnet
                .as_ref()
                .map_or(0, |b| b.student.parameter_count())
    }
}
