//! Named parameter storage and the sources backbones pull parameters from.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WeightError {
    #[error("missing parameter `{0}`")]
    Missing(String),
    #[error("parameter `{name}` has shape {found:?}, expected {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("parameter `{name}` has dtype {found}, expected {expected}")]
    Dtype {
        name: String,
        expected: &'static str,
        found: String,
    },
    #[error("{} stored parameters were not consumed by the architecture (first: `{}`)", .0.len(), .0[0])]
    Unused(Vec<String>),
    #[error("malformed weight file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Element storage for a named tensor.
#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype_name(&self) -> &'static str {
        match self {
            TensorData::F32(_) => "F32",
            TensorData::F64(_) => "F64",
        }
    }

    fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            TensorData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            TensorData::F64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub data: TensorData,
}

/// An ordered map of named tensors, persisted in the safetensors format.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightStore {
    tensors: BTreeMap<String, StoredTensor>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &StoredTensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn get(&self, name: &str) -> Option<&StoredTensor> {
        self.tensors.get(name)
    }

    pub fn insert_f32(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.insert(
            name.into(),
            StoredTensor {
                shape,
                data: TensorData::F32(data),
            },
        );
    }

    pub fn insert_f64(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.insert(
            name.into(),
            StoredTensor {
                shape,
                data: TensorData::F64(data),
            },
        );
    }

    /// Copies every tensor of `other` in under `prefix`.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &WeightStore) {
        for (name, t) in &other.tensors {
            self.tensors.insert(format!("{prefix}{name}"), t.clone());
        }
    }

    /// The sub-store of tensors whose names start with `prefix`, prefix stripped.
    pub fn strip_prefix(&self, prefix: &str) -> WeightStore {
        WeightStore {
            tensors: self
                .tensors
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
                .collect(),
        }
    }

    pub fn f32_tensor(&self, name: &str) -> Result<(&[usize], &[f32]), WeightError> {
        let t = self
            .tensors
            .get(name)
            .ok_or_else(|| WeightError::Missing(name.to_string()))?;
        match &t.data {
            TensorData::F32(v) => Ok((&t.shape, v)),
            other => Err(WeightError::Dtype {
                name: name.to_string(),
                expected: "F32",
                found: other.dtype_name().to_string(),
            }),
        }
    }

    pub fn f64_tensor(&self, name: &str) -> Result<(&[usize], &[f64]), WeightError> {
        let t = self
            .tensors
            .get(name)
            .ok_or_else(|| WeightError::Missing(name.to_string()))?;
        match &t.data {
            TensorData::F64(v) => Ok((&t.shape, v)),
            other => Err(WeightError::Dtype {
                name: name.to_string(),
                expected: "F64",
                found: other.dtype_name().to_string(),
            }),
        }
    }

    /// Total element count over all tensors.
    pub fn element_count(&self) -> usize {
        self.tensors.values().map(|t| t.data.len()).sum()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, WeightError> {
        let raw: Vec<(String, Dtype, Vec<usize>, Vec<u8>)> = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let dtype = match t.data {
                    TensorData::F32(_) => Dtype::F32,
                    TensorData::F64(_) => Dtype::F64,
                };
                (name.clone(), dtype, t.shape.clone(), t.data.to_le_bytes())
            })
            .collect();
        let views = raw
            .iter()
            .map(|(name, dtype, shape, bytes)| {
                TensorView::new(*dtype, shape.clone(), bytes)
                    .map(|v| (name.clone(), v))
                    .map_err(|e| WeightError::Format(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        safetensors::serialize(views, &None).map_err(|e| WeightError::Format(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WeightError> {
        let st = SafeTensors::deserialize(bytes).map_err(|e| WeightError::Format(e.to_string()))?;
        let mut store = WeightStore::new();
        for (name, view) in st.tensors() {
            let shape = view.shape().to_vec();
            let data = view.data();
            let tensor = match view.dtype() {
                Dtype::F32 => TensorData::F32(
                    data.chunks_exact(4)
                        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                        .collect(),
                ),
                Dtype::F64 => TensorData::F64(
                    data.chunks_exact(8)
                        .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                        .collect(),
                ),
                Dtype::I64 => TensorData::F32(
                    data.chunks_exact(8)
                        .map(|b| i64::from_le_bytes(b.try_into().expect("8-byte chunk")) as f32)
                        .collect(),
                ),
                other => {
                    return Err(WeightError::Dtype {
                        name,
                        expected: "F32",
                        found: format!("{other:?}"),
                    })
                }
            };
            store.tensors.insert(name, StoredTensor { shape, data: tensor });
        }
        Ok(store)
    }

    pub fn load(path: &Path) -> Result<Self, WeightError> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<(), WeightError> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    /// SHA-256 of the serialized form, hex encoded.
    pub fn content_hash(&self) -> Result<String, WeightError> {
        Ok(sha256_hex(&self.to_bytes()?))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// What a parameter is for; surrogate initialization keys off this.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    Kernel { fan_in: usize },
    Bias,
    Gamma,
    Beta,
    MovingMean,
    MovingVariance,
    NormMean,
    NormVariance,
    NormCount,
}

/// Supplies parameters to a backbone while it is being assembled.
pub trait ParamSource {
    fn fetch(&mut self, name: &str, shape: &[usize], role: ParamRole) -> Result<Vec<f32>, WeightError>;
}

/// Reads parameters from a [`WeightStore`], checking shapes and tracking use.
pub struct StoreSource<'a> {
    store: &'a WeightStore,
    used: BTreeSet<String>,
}

impl<'a> StoreSource<'a> {
    pub fn new(store: &'a WeightStore) -> Self {
        Self {
            store,
            used: BTreeSet::new(),
        }
    }

    /// Fails when the store holds tensors the architecture never asked for,
    /// which means the checkpoint belongs to a different network.
    pub fn finish(self) -> Result<(), WeightError> {
        let unused: Vec<String> = self
            .store
            .names()
            .filter(|n| !self.used.contains(*n))
            .map(str::to_string)
            .collect();
        if unused.is_empty() {
            Ok(())
        } else {
            Err(WeightError::Unused(unused))
        }
    }
}

impl ParamSource for StoreSource<'_> {
    fn fetch(&mut self, name: &str, shape: &[usize], _role: ParamRole) -> Result<Vec<f32>, WeightError> {
        let (found, data) = self.store.f32_tensor(name)?;
        if found != shape {
            // Keras stores some per-channel statistics with broadcast dimensions.
            let squeeze = |s: &[usize]| s.iter().copied().filter(|&d| d != 1).collect::<Vec<_>>();
            if squeeze(found) != squeeze(shape) || data.len() != shape.iter().product::<usize>() {
                return Err(WeightError::Shape {
                    name: name.to_string(),
                    expected: shape.to_vec(),
                    found: found.to_vec(),
                });
            }
        }
        self.used.insert(name.to_string());
        Ok(data.to_vec())
    }
}

/// Deterministic stand-in parameters drawn from a seeded generator.
///
/// Every tensor is generated from `(seed, name)` alone, so the same
/// architecture always receives the same values regardless of build order.
/// Generated tensors are recorded and can be exported with [`Self::into_store`].
pub struct SurrogateSource {
    seed: u64,
    recorded: WeightStore,
}

impl SurrogateSource {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            recorded: WeightStore::new(),
        }
    }

    pub fn into_store(self) -> WeightStore {
        self.recorded
    }
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl ParamSource for SurrogateSource {
    fn fetch(&mut self, name: &str, shape: &[usize], role: ParamRole) -> Result<Vec<f32>, WeightError> {
        let n: usize = shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ name_hash(name));
        let data: Vec<f32> = match role {
            ParamRole::Kernel { fan_in } => {
                let std = (2.0 / fan_in.max(1) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("finite std");
                (0..n).map(|_| normal.sample(&mut rng) as f32).collect()
            }
            ParamRole::Bias => (0..n).map(|_| rng.gen_range(-0.05f32..0.05)).collect(),
            ParamRole::Gamma => (0..n).map(|_| rng.gen_range(0.6f32..1.0)).collect(),
            ParamRole::Beta => (0..n).map(|_| rng.gen_range(-0.1f32..0.1)).collect(),
            ParamRole::MovingMean => (0..n).map(|_| rng.gen_range(-0.1f32..0.1)).collect(),
            ParamRole::MovingVariance => (0..n).map(|_| rng.gen_range(0.8f32..1.6)).collect(),
            ParamRole::NormMean => vec![0.485, 0.456, 0.406].into_iter().cycle().take(n).collect(),
            ParamRole::NormVariance => {
                // The published checkpoint stores the standard deviations here.
                vec![0.229f32, 0.224, 0.225].into_iter().cycle().take(n).collect()
            }
            ParamRole::NormCount => vec![0.0; n],
        };
        self.recorded.insert_f32(name, shape.to_vec(), data.clone());
        Ok(data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surrogate_is_order_independent() {
        let mut a = SurrogateSource::new(7);
        let mut b = SurrogateSource::new(7);
        let x1 = a.fetch("conv/kernel", &[3, 3, 3, 8], ParamRole::Kernel { fan_in: 27 }).unwrap();
        let _ = b.fetch("other/bias", &[8], ParamRole::Bias).unwrap();
        let x2 = b.fetch("conv/kernel", &[3, 3, 3, 8], ParamRole::Kernel { fan_in: 27 }).unwrap();
        assert_eq!(x1, x2);
        let mut c = SurrogateSource::new(8);
        let x3 = c.fetch("conv/kernel", &[3, 3, 3, 8], ParamRole::Kernel { fan_in: 27 }).unwrap();
        assert_ne!(x1, x3);
    }

    #[test]
    fn store_round_trips_through_safetensors() {
        let mut s = WeightStore::new();
        s.insert_f32("a/kernel", vec![2, 2], vec![1.0, -2.0, 3.5, 0.25]);
        s.insert_f64("head/bias", vec![3], vec![0.1, 0.2, 0.3]);
        let bytes = s.to_bytes().unwrap();
        let back = WeightStore::from_bytes(&bytes).unwrap();
        assert_eq!(s, back);
        assert_eq!(s.content_hash().unwrap(), back.content_hash().unwrap());
    }

    #[test]
    fn store_source_reports_shape_mismatch_and_unused() {
        let mut s = WeightStore::new();
        s.insert_f32("x/kernel", vec![1, 1, 2, 2], vec![0.0; 4]);
        s.insert_f32("y/bias", vec![2], vec![0.0; 2]);
        let mut src = StoreSource::new(&s);
        let err = src.fetch("x/kernel", &[1, 1, 4, 1], ParamRole::Kernel { fan_in: 4 });
        assert!(matches!(err, Err(WeightError::Shape { .. })));
        src.fetch("x/kernel", &[1, 1, 2, 2], ParamRole::Kernel { fan_in: 2 }).unwrap();
        assert!(matches!(src.finish(), Err(WeightError::Unused(v)) if v == vec!["y/bias".to_string()]));
    }
}
