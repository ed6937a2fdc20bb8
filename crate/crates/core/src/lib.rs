pub mod anomaly;
pub mod backbone;
pub mod data;
pub mod distill;
pub mod error;
pub mod eval;
pub mod features;
pub mod model;
pub mod ops;
pub mod student;

pub use anomaly::{AnomalyMap, FusionRule, Inference, MapBranch};
pub use data::{DatasetSplits, Label, Sample};
pub use distill::{Checkpoint, Method, TrainConfig};
pub use error::{Error, Result};
pub use features::{FeatureMap, Tap};
pub use model::DistillModel;
