use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use safetensors::SafeTensors;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::train::{branch_specs, init_students, Teachers};
use crate::anomaly::FusionRule;
use crate::backbone::{Arch, ParamStore};
use crate::error::{Error, Result};
use crate::model::{BranchModel, DistillModel};
use crate::student::StudentNet;

const FORMAT: &str = "texdistill-checkpoint/1";
const RESNET_PREFIX: &str = "resnet";
const EFFNET_PREFIX: &str = "effnet";
/// File name used by [`Checkpoint::save_in`].
pub const BEST_CHECKPOINT: &str = "best.safetensors";

/// Trained students plus everything needed to rebuild and verify a model.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub epoch: usize,
    pub validation_loss: f64,
    pub teacher_fingerprints: BTreeMap<String, String>,
    pub teacher_sources: BTreeMap<String, String>,
    pub validation_ids: Vec<String>,
    pub resnet_student: StudentNet,
    pub effnet_student: Option<StudentNet>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    epoch: usize,
    validation_loss: f64,
    teacher_fingerprints: BTreeMap<String, String>,
    teacher_sources: BTreeMap<String, String>,
    validation_ids: Vec<String>,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    format: &'static str,
    config: &'a TrainConfig,
    #[serde(flatten)]
    meta: &'a Meta,
    student_parameters: BTreeMap<&'static str, usize>,
}

/// The sidecar metadata path next to a checkpoint file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

impl Checkpoint {
    fn meta(&self) -> Meta {
        Meta {
            epoch: self.epoch,
            validation_loss: self.validation_loss,
            teacher_fingerprints: self.teacher_fingerprints.clone(),
            teacher_sources: self.teacher_sources.clone(),
            validation_ids: self.validation_ids.clone(),
        }
    }

    /// Writes the checkpoint archive and its JSON sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut store = self.resnet_student.to_param_store(RESNET_PREFIX);
        if let Some(eff) = &self.effnet_student {
            for (name, t) in eff.to_param_store(EFFNET_PREFIX).iter() {
                store.insert(name, t.clone());
            }
        }
        let meta = self.meta();
        let metadata = HashMap::from([
            ("format".to_string(), FORMAT.to_string()),
            ("config".to_string(), serde_json::to_string(&self.config)?),
            ("meta".to_string(), serde_json::to_string(&meta)?),
        ]);
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, store.to_safetensors_bytes(Some(metadata))?)?;

        let mut student_parameters =
            BTreeMap::from([(RESNET_PREFIX, self.resnet_student.parameter_count())]);
        if let Some(eff) = &self.effnet_student {
            student_parameters.insert(EFFNET_PREFIX, eff.parameter_count());
        }
        let sidecar = Sidecar {
            format: FORMAT,
            config: &self.config,
            meta: &meta,
            student_parameters,
        };
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    /// Saves as `<dir>/best.safetensors` and returns that path.
    pub fn save_in(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(BEST_CHECKPOINT);
        self.save(&path)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let (_, header) = SafeTensors::read_metadata(&bytes)?;
        let md = header
            .metadata()
            .clone()
            .ok_or_else(|| Error::Checkpoint(format!("{} has no metadata", path.display())))?;
        if md.get("format").map(String::as_str) != Some(FORMAT) {
            return Err(Error::Checkpoint(format!(
                "{} is not a {FORMAT} file",
                path.display()
            )));
        }
        let field = |k: &str| {
            md.get(k)
                .ok_or_else(|| Error::Checkpoint(format!("metadata field `{k}` missing")))
        };
        let config: TrainConfig = serde_json::from_str(field("config")?)?;
        let meta: Meta = serde_json::from_str(field("meta")?)?;
        let store = ParamStore::from_safetensors_bytes(&bytes)?;
        let (mut res, mut eff) = init_students(&config)?;
        res.load_param_store(&store, RESNET_PREFIX)?;
        if let Some(e) = eff.as_mut() {
            e.load_param_store(&store, EFFNET_PREFIX)?;
        }
        Ok(Self {
            config,
            epoch: meta.epoch,
            validation_loss: meta.validation_loss,
            teacher_fingerprints: meta.teacher_fingerprints,
            teacher_sources: meta.teacher_sources,
            validation_ids: meta.validation_ids,
            resnet_student: res,
            effnet_student: eff,
        })
    }

    /// Loads the teachers recorded in the checkpoint.
    pub fn load_teachers(&self) -> Result<Teachers> {
        let mut cfg = self.config.clone();
        if let Some(src) = self.teacher_sources.get(Arch::Resnet18.name()) {
            cfg.resnet_weights = src.clone();
        }
        if let Some(src) = self.teacher_sources.get(Arch::EfficientnetB0.name()) {
            cfg.effnet_weights = src.clone();
        }
        Teachers::load(&cfg)
    }

    /// Pairs the students with `teachers`, which must carry the recorded fingerprints.
    pub fn into_model(self, teachers: &Teachers, fusion: FusionRule) -> Result<DistillModel> {
        let current = teachers.current_fingerprints();
        for (arch, fp) in &self.teacher_fingerprints {
            match current.get(arch) {
                Some(c) if c == fp => {}
                Some(c) => {
                    return Err(Error::Checkpoint(format!(
                        "{arch} teacher fingerprint {c} differs from the checkpoint's {fp}"
                    )))
                }
                None => return Err(Error::Checkpoint(format!("no {arch} teacher supplied"))),
            }
        }
        let (res_spec, eff_spec) = branch_specs(&self.config)?;
        let resnet = BranchModel::new(Arc::clone(&teachers.resnet), res_spec, self.resnet_student)?;
        let effnet = match (eff_spec, self.effnet_student, &teachers.effnet) {
            (Some(spec), Some(student), Some(teacher)) => {
                Some(BranchModel::new(Arc::clone(teacher), spec, student)?)
            }
            (None, None, _) => None,
            _ => {
                return Err(Error::Checkpoint(
                    "EfficientNet branch is incomplete".into(),
                ))
            }
        };
        Ok(DistillModel {
            method: self.config.method,
            resnet,
            effnet,
            alpha: self.config.alpha,
            input_size: self.config.input_size,
            fusion,
        })
    }
}

/// Loads a checkpoint, its teachers, and assembles the model.
pub fn load_model(path: &Path, fusion: FusionRule) -> Result<(Checkpoint, DistillModel)> {
    let ckpt = Checkpoint::load(path)?;
    let teachers = ckpt.load_teachers()?;
    let model = ckpt.clone().into_model(&teachers, fusion)?;
    Ok((ckpt, model))
}
