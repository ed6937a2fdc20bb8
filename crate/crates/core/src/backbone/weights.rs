//! Named parameter sets: safetensors I/O, seeded synthesis and fingerprints.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use ndarray::{Array3, ArrayD, ArrayView1, ArrayView4, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Environment variable naming the directory that holds exported weight files.
pub const WEIGHTS_DIR_ENV: &str = "TEXDISTILL_WEIGHTS_DIR";

/// How a parameter of the canonical architecture is initialized when weights
/// are synthesized from a seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Normal with std `sqrt(2 / fan_in)`, `fan_in = in_per_group * k * k`.
    HeFanIn,
    Ones,
    Zeros,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        }
    }
}

/// Ordered map of parameter name to `f32` tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, ArrayD<f32>>,
    transformed: KernelCache,
}

/// Winograd-transformed 3x3 kernels, filled on first use.
#[derive(Debug, Default)]
struct KernelCache(Mutex<HashMap<String, Arc<Array3<f32>>>>);

impl Clone for KernelCache {
    fn clone(&self) -> Self {
        Self::default()
    }
}

impl PartialEq for KernelCache {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: ArrayD<f32>) {
        let name = name.into();
        self.cache().remove(&name);
        self.tensors.insert(name, tensor);
    }

    fn cache(&self) -> std::sync::MutexGuard<'_, HashMap<String, Arc<Array3<f32>>>> {
        self.transformed.0.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f32>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f32>> {
        self.tensors.get(name)
    }

    pub fn numel(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    pub(crate) fn tensor4(&self, name: &str) -> ArrayView4<'_, f32> {
        self.tensors[name]
            .view()
            .into_dimensionality()
            .unwrap_or_else(|_| panic!("{name} is not 4-D"))
    }

    /// The 4-D kernel `name` passed through [`crate::ops::winograd_kernel`], cached.
    pub(crate) fn winograd4(&self, name: &str) -> Arc<Array3<f32>> {
        let mut cache = self.cache();
        Arc::clone(
            cache
                .entry(name.to_owned())
                .or_insert_with(|| Arc::new(crate::ops::winograd_kernel(self.tensor4(name)))),
        )
    }

    pub(crate) fn tensor1(&self, name: &str) -> ArrayView1<'_, f32> {
        self.tensors[name]
            .view()
            .into_dimensionality()
            .unwrap_or_else(|_| panic!("{name} is not 1-D"))
    }

    /// Keeps exactly the parameters named in `specs`, checking every shape.
    pub fn conform(mut self, specs: &[ParamSpec], what: &str) -> Result<Self> {
        let mut out = ParamStore::new();
        for spec in specs {
            let tensor = self.tensors.remove(&spec.name).ok_or_else(|| {
                Error::shape(
                    format!("{what}: missing tensor {}", spec.name),
                    &spec.shape,
                    &[],
                )
            })?;
            if tensor.shape() != spec.shape.as_slice() {
                return Err(Error::shape(
                    format!("{what}: tensor {}", spec.name),
                    &spec.shape,
                    tensor.shape(),
                ));
            }
            out.tensors.insert(spec.name.clone(), tensor);
        }
        Ok(out)
    }

    /// Deterministic synthetic parameters for the given architecture table.
    pub fn seeded(specs: &[ParamSpec], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = ParamStore::new();
        for spec in specs {
            let tensor = match spec.init {
                Init::Ones => ArrayD::ones(IxDyn(&spec.shape)),
                Init::Zeros => ArrayD::zeros(IxDyn(&spec.shape)),
                Init::HeFanIn => {
                    let fan_in: usize = spec.shape[1..].iter().product();
                    let normal =
                        Normal::new(0.0, (2.0 / fan_in.max(1) as f64).sqrt()).expect("finite std");
                    ArrayD::from_shape_simple_fn(IxDyn(&spec.shape), || {
                        normal.sample(&mut rng) as f32
                    })
                }
            };
            out.tensors.insert(spec.name.clone(), tensor);
        }
        out
    }

    /// SHA-256 over names, shapes and little-endian values, in name order.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, tensor) in &self.tensors {
            hasher.update((name.len() as u64).to_le_bytes());
            hasher.update(name.as_bytes());
            hasher.update((tensor.ndim() as u64).to_le_bytes());
            for d in tensor.shape() {
                hasher.update((*d as u64).to_le_bytes());
            }
            for v in tensor.iter() {
                hasher.update(v.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }

    pub fn from_safetensors_bytes(bytes: &[u8]) -> Result<Self> {
        let st = SafeTensors::deserialize(bytes)?;
        let mut out = ParamStore::new();
        for (name, view) in st.tensors() {
            let shape = view.shape().to_vec();
            let values: Vec<f32> = match view.dtype() {
                Dtype::F32 => view
                    .data()
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect(),
                Dtype::F64 => view
                    .data()
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")) as f32)
                    .collect(),
                // Integer bookkeeping tensors (e.g. batch counters) are not parameters.
                _ => continue,
            };
            let tensor = ArrayD::from_shape_vec(IxDyn(&shape), values)
                .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
            out.tensors.insert(name, tensor);
        }
        Ok(out)
    }

    pub fn load_safetensors(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_safetensors_bytes(&bytes)
    }

    pub fn to_safetensors_bytes(
        &self,
        metadata: Option<HashMap<String, String>>,
    ) -> Result<Vec<u8>> {
        let buffers: Vec<(String, Vec<u8>, Vec<usize>)> = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let bytes = t.iter().flat_map(|v| v.to_le_bytes()).collect();
                (name.clone(), bytes, t.shape().to_vec())
            })
            .collect();
        let views = buffers
            .iter()
            .map(|(name, bytes, shape)| {
                TensorView::new(Dtype::F32, shape.clone(), bytes).map(|v| (name.clone(), v))
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(safetensors::serialize(views, metadata)?)
    }
}

/// Where a teacher's parameters come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WeightsSource {
    /// Synthesized deterministically from a seed (`seeded:<n>`).
    Seeded(u64),
    /// An exported torchvision checkpoint in the weights directory (`torchvision`).
    Torchvision,
    /// Torchvision weights when present, otherwise `seeded:0` (`auto`).
    Auto,
    /// A safetensors file.
    File(PathBuf),
}

impl WeightsSource {
    pub fn parse(s: &str) -> Self {
        match s {
            "torchvision" => WeightsSource::Torchvision,
            "auto" => WeightsSource::Auto,
            _ => match s.strip_prefix("seeded:").map(str::parse::<u64>) {
                Some(Ok(seed)) => WeightsSource::Seeded(seed),
                _ => WeightsSource::File(PathBuf::from(s)),
            },
        }
    }
}

pub fn weights_dir() -> PathBuf {
    if let Some(dir) = std::env::var_os(WEIGHTS_DIR_ENV) {
        return PathBuf::from(dir);
    }
    let home = std::env::var_os("HOME")
        .map(PathBuf::from)
        .unwrap_or_default();
    home.join(".cache").join("texdistill").join("weights")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn specs() -> Vec<ParamSpec> {
        vec![
            ParamSpec::new("conv.weight", &[4, 2, 3, 3], Init::HeFanIn),
            ParamSpec::new("bn.weight", &[4], Init::Ones),
            ParamSpec::new("bn.bias", &[4], Init::Zeros),
        ]
    }

    #[test]
    fn seeded_is_reproducible_and_seed_sensitive() {
        let a = ParamStore::seeded(&specs(), 5);
        let b = ParamStore::seeded(&specs(), 5);
        let c = ParamStore::seeded(&specs(), 6);
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
        assert_eq!(a.numel(), 72 + 8);
    }

    #[test]
    fn safetensors_round_trip_preserves_fingerprint() {
        let a = ParamStore::seeded(&specs(), 1);
        let bytes = a.to_safetensors_bytes(None).unwrap();
        let b = ParamStore::from_safetensors_bytes(&bytes).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn conform_rejects_wrong_shapes_and_drops_extras() {
        let mut store = ParamStore::seeded(&specs(), 1);
        store.insert("fc.weight", ArrayD::zeros(IxDyn(&[3, 3])));
        let kept = store.clone().conform(&specs(), "test").unwrap();
        assert_eq!(kept.len(), 3);
        let mut bad = specs();
        bad[0].shape = vec![4, 3, 3, 3];
        assert!(matches!(
            store.conform(&bad, "test"),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn source_strings_parse() {
        assert_eq!(WeightsSource::parse("seeded:42"), WeightsSource::Seeded(42));
        assert_eq!(
            WeightsSource::parse("torchvision"),
            WeightsSource::Torchvision
        );
        assert_eq!(
            WeightsSource::parse("w/resnet18.safetensors"),
            WeightsSource::File(PathBuf::from("w/resnet18.safetensors"))
        );
    }
}
