use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use ndarray::{Array3, Array4, ArrayView4, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::checkpoint::Checkpoint;
use super::config::{Method, TrainConfig};
use super::loss::{layer_loss_with_grad, per_image_layer_loss, Target};
use super::split::split_indices;
use crate::backbone::{load_teacher, tap_preset, Arch, LayerTapSpec, TapPreset, TeacherBackbone};
use crate::data::{preprocess_to, stack, Sample};
use crate::error::{Error, Result};
use crate::model::{combine, sum_taps};
use crate::ops::Real;
use crate::student::{build_effnet_student, build_reduced_student, Gradients, StudentNet};

const SHUFFLE_STREAM: u64 = 0x5eed_5eed;
const TARGET_CHUNK: usize = 8;

/// The frozen teachers a training run distills from.
#[derive(Debug, Clone)]
pub struct Teachers {
    pub resnet: Arc<TeacherBackbone>,
    pub effnet: Option<Arc<TeacherBackbone>>,
}

impl Teachers {
    /// Loads the teachers `config.method` needs from the configured sources.
    pub fn load(config: &TrainConfig) -> Result<Self> {
        let resnet = Arc::new(load_teacher(Arch::Resnet18, &config.resnet_weights)?);
        let effnet = match config.method {
            Method::Mixed => Some(Arc::new(load_teacher(
                Arch::EfficientnetB0,
                &config.effnet_weights,
            )?)),
            Method::Reduced => None,
        };
        Ok(Self { resnet, effnet })
    }

    fn all(&self) -> impl Iterator<Item = &Arc<TeacherBackbone>> {
        std::iter::once(&self.resnet).chain(self.effnet.as_ref())
    }

    /// Load-time fingerprints keyed by architecture name.
    pub fn fingerprints(&self) -> BTreeMap<String, String> {
        self.all()
            .map(|t| (t.arch().name().to_string(), t.fingerprint().to_string()))
            .collect()
    }

    /// Fingerprints recomputed from the current parameters.
    pub fn current_fingerprints(&self) -> BTreeMap<String, String> {
        self.all()
            .map(|t| (t.arch().name().to_string(), t.current_fingerprint()))
            .collect()
    }

    pub fn sources(&self) -> BTreeMap<String, String> {
        self.all()
            .map(|t| (t.arch().name().to_string(), t.source().to_string()))
            .collect()
    }
}

/// Tap specs of both branches for a config.
pub fn branch_specs(config: &TrainConfig) -> Result<(LayerTapSpec, Option<LayerTapSpec>)> {
    let res = tap_preset(Arch::Resnet18, config.resnet_preset)?;
    let eff = match config.method {
        Method::Mixed => Some(tap_preset(Arch::EfficientnetB0, TapPreset::MixedEffnet)?),
        Method::Reduced => None,
    };
    Ok((res, eff))
}

/// Freshly initialized students for a config.
pub fn init_students(config: &TrainConfig) -> Result<(StudentNet, Option<StudentNet>)> {
    let (res_spec, eff_spec) = branch_specs(config)?;
    let res = build_reduced_student(&res_spec, config.seed)?;
    let eff = eff_spec
        .map(|s| build_effnet_student(&s, config.seed.wrapping_add(1)))
        .transpose()?;
    Ok((res, eff))
}

/// Weighted sum of layer losses for one batch and the student's parameter
/// gradients. `targets` are unit-normalized teacher maps in student geometry.
pub fn loss_and_gradients<F: Real>(
    student: &mut StudentNet<F>,
    x: ArrayView4<F>,
    targets: &[ArrayView4<F>],
    weight: F,
    update_running: bool,
) -> Result<(F, Gradients<F>)> {
    let (maps, trace) = student.forward_train(x, update_running)?;
    if maps.len() != targets.len() {
        return Err(Error::LengthMismatch {
            teacher: targets.len(),
            student: maps.len(),
        });
    }
    let mut loss = F::zero();
    let mut tap_grads = Vec::with_capacity(maps.len());
    for (fs, t) in maps.iter().zip(targets) {
        let (l, g) = layer_loss_with_grad(*t, fs.data.view(), weight)?;
        loss += l;
        tap_grads.push(g);
    }
    Ok((loss, student.backward(trace, &tap_grads)))
}

/// Per-tap stacks of normalized teacher targets for every image.
struct TargetCache {
    taps: Vec<Array4<f32>>,
}

impl TargetCache {
    fn build(
        teacher: &TeacherBackbone,
        spec: &LayerTapSpec,
        images: &[Array3<f32>],
        side: usize,
    ) -> Result<Self> {
        let mut per_chunk: Vec<Vec<Array4<f32>>> = Vec::new();
        for part in images.chunks(TARGET_CHUNK) {
            let batch = stack(part, side);
            let maps = teacher.extract_features(batch.view(), spec)?;
            per_chunk.push(maps.iter().map(|m| Target::from_teacher(m).data).collect());
        }
        let taps = (0..spec.len())
            .map(|k| {
                let views: Vec<_> = per_chunk.iter().map(|c| c[k].view()).collect();
                ndarray::concatenate(Axis(0), &views).expect("same tap shapes")
            })
            .collect();
        Ok(Self { taps })
    }

    fn gather(&self, idx: &[usize]) -> Vec<Array4<f32>> {
        self.taps.iter().map(|t| t.select(Axis(0), idx)).collect()
    }

    fn bytes(&self) -> usize {
        self.taps.iter().map(|t| t.len() * 4).sum()
    }
}

struct Branch {
    student: StudentNet,
    train: TargetCache,
    val: TargetCache,
    weight: f32,
}

impl Branch {
    fn step(&mut self, x: ArrayView4<f32>, idx: &[usize]) -> Result<(f64, Gradients<f32>)> {
        let targets = self.train.gather(idx);
        let views: Vec<_> = targets.iter().map(|t| t.view()).collect();
        let (loss, grads) = loss_and_gradients(&mut self.student, x, &views, self.weight, true)?;
        Ok((loss as f64, grads))
    }

    fn val_losses(&self, val_images: &[Array3<f32>], side: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(val_images.len());
        for (c, part) in val_images.chunks(TARGET_CHUNK).enumerate() {
            let batch = stack(part, side);
            let maps = self.student.forward(batch.view())?;
            let idx: Vec<usize> = (c * TARGET_CHUNK..c * TARGET_CHUNK + part.len()).collect();
            let targets = self.val.gather(&idx);
            let per_tap: Vec<Vec<f64>> = maps
                .iter()
                .zip(&targets)
                .map(|(fs, t)| per_image_layer_loss(t.view(), fs.data.view()))
                .collect();
            out.extend(sum_taps(&per_tap, part.len()));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The lowest-validation-loss checkpoint.
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochStats>,
    /// Objective of every optimization step, in order.
    pub step_losses: Vec<f64>,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    /// Where the best checkpoint was written, when a directory was configured.
    pub checkpoint_path: Option<std::path::PathBuf>,
}

/// Distills the configured students from frozen teachers on defect-free
/// images with plain SGD, validating after every epoch and keeping the
/// checkpoint with the lowest validation loss.
pub fn train(
    config: &TrainConfig,
    dataset: &[Sample],
    teachers: &Teachers,
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset("no training images".into()));
    }
    if config.method == Method::Mixed && teachers.effnet.is_none() {
        return Err(Error::config(
            "method",
            "mixed training needs an EfficientNet teacher",
        ));
    }
    let side = config.input_size;
    let (train_idx, val_idx) = split_indices(dataset.len(), config.split_ratio, config.seed)?;
    if train_idx.is_empty() {
        return Err(Error::EmptyDataset("split left no training images".into()));
    }
    let prep = |ids: &[usize]| -> Vec<Array3<f32>> {
        ids.par_iter()
            .map(|&i| preprocess_to(&dataset[i].image, side))
            .collect()
    };
    let (train_images, val_images) = (prep(&train_idx), prep(&val_idx));

    let (res_spec, eff_spec) = branch_specs(config)?;
    let (res_student, eff_student) = init_students(config)?;
    let started = Instant::now();
    let mut branches = vec![Branch {
        student: res_student,
        train: TargetCache::build(&teachers.resnet, &res_spec, &train_images, side)?,
        val: TargetCache::build(&teachers.resnet, &res_spec, &val_images, side)?,
        weight: 1.0,
    }];
    if let (Some(spec), Some(student), Some(teacher)) = (&eff_spec, eff_student, &teachers.effnet) {
        branches.push(Branch {
            student,
            train: TargetCache::build(teacher, spec, &train_images, side)?,
            val: TargetCache::build(teacher, spec, &val_images, side)?,
            weight: config.alpha as f32,
        });
    }
    log::info!(
        "cached teacher targets for {} train / {} val images in {:.1}s ({} MiB)",
        train_images.len(),
        val_images.len(),
        started.elapsed().as_secs_f64(),
        branches
            .iter()
            .map(|b| b.train.bytes() + b.val.bytes())
            .sum::<usize>()
            >> 20
    );

    let lr = config.learning_rate as f32;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train_images.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut step_losses = Vec::new();
    let mut best: Option<Checkpoint> = None;
    let mut checkpoint_path = None;
    let ids = |idx: &[usize]| {
        idx.iter()
            .map(|&i| dataset[i].source_id.clone())
            .collect::<Vec<_>>()
    };
    let val_ids = ids(&val_idx);

    for epoch in 1..=config.epochs {
        let t0 = Instant::now();
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        for (step, idx) in order.chunks(config.batch_size).enumerate() {
            let parts: Vec<Array3<f32>> = idx.iter().map(|&i| train_images[i].clone()).collect();
            let x = stack(&parts, side);
            let mut loss = 0.0;
            let mut grads = Vec::with_capacity(branches.len());
            for b in &mut branches {
                let (l, g) = b.step(x.view(), idx)?;
                loss += l;
                grads.push(g);
            }
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step: step + 1,
                    value: loss,
                });
            }
            for (b, g) in branches.iter_mut().zip(&grads) {
                b.student.sgd_step(g, lr);
            }
            step_losses.push(loss);
            weighted += loss * idx.len() as f64;
        }
        let train_loss = weighted / train_images.len() as f64;

        let res_val = branches[0].val_losses(&val_images, side)?;
        let eff_val = branches
            .get(1)
            .map(|b| b.val_losses(&val_images, side))
            .transpose()?;
        let per_image = combine(&res_val, eff_val.as_deref(), config.alpha);
        let val_loss = per_image.iter().sum::<f64>() / per_image.len() as f64;
        let seconds = t0.elapsed().as_secs_f64();
        log::info!(
            "epoch {epoch}/{}: train {train_loss:.6} val {val_loss:.6} ({seconds:.1}s)",
            config.epochs
        );
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            seconds,
        });

        if best.as_ref().is_none_or(|b| val_loss < b.validation_loss) {
            let ckpt = Checkpoint {
                config: config.clone(),
                epoch,
                validation_loss: val_loss,
                teacher_fingerprints: teachers.fingerprints(),
                teacher_sources: teachers.sources(),
                validation_ids: val_ids.clone(),
                resnet_student: branches[0].student.clone(),
                effnet_student: branches.get(1).map(|b| b.student.clone()),
            };
            if let Some(dir) = &config.checkpoint_dir {
                checkpoint_path = Some(ckpt.save_in(dir)?);
            }
            best = Some(ckpt);
        }
    }

    Ok(TrainOutcome {
        checkpoint: best.expect("at least one epoch"),
        history,
        step_losses,
        train_ids: ids(&train_idx),
        val_ids,
        checkpoint_path,
    })
}
