use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::graph::{Gradients, Graph, Var};
use super::init::{seeded_init, InitScheme};
use super::rng::derive_seed;
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{bail, Error, Result};

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

/// Named parameter collection. Each parameter is initialized from a seed derived
/// from `(init_seed, name)`, so two stores that contain the same name receive
/// bit-identical initial values regardless of what else they hold.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    params: BTreeMap<String, Param<T>>,
    init_seed: u64,
    /// Optimizer steps applied so far (persisted with checkpoints).
    pub step: u64,
}

/// Parameters placed on a tape for one forward pass.
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{name}`")))
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
}

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    seed: u64,
    step: u64,
    params: Vec<CheckpointEntry>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new(init_seed: u64) -> Self {
        ParamStore {
            params: BTreeMap::new(),
            init_seed,
            step: 0,
        }
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    /// Create a parameter initialized with the name-derived seed.
    pub fn init(&mut self, name: &str, shape: &[usize], scheme: InitScheme) -> Result<()> {
        let t = seeded_init(shape, scheme, derive_seed(self.init_seed, name));
        self.insert(name, t)
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        if self.params.contains_key(name) {
            bail!(InvalidArgument, "duplicate parameter `{}`", name);
        }
        self.params
            .insert(name.to_string(), Param { value, grad: None });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name).map(|p| &mut p.value)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// Put every parameter on `graph` as a gradient-tracked leaf.
    pub fn bind(&self, graph: &mut Graph<T>) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(k, p)| (k.clone(), graph.param(p.value.clone())))
            .collect();
        Bound { vars }
    }

    /// Put every parameter on `graph` as a constant (inference).
    pub fn bind_frozen(&self, graph: &mut Graph<T>) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(k, p)| (k.clone(), graph.constant(p.value.clone())))
            .collect();
        Bound { vars }
    }

    /// Add gradients from a backward pass into the stored accumulators.
    /// Parameters the loss does not depend on receive an explicit zero gradient.
    pub fn accumulate_grads(&mut self, bound: &Bound, grads: &mut Gradients<T>) {
        for (name, p) in self.params.iter_mut() {
            let Some(&v) = bound.vars.get(name) else { continue };
            let g = grads
                .take(v)
                .unwrap_or_else(|| Tensor::zeros(p.value.shape()));
            match &mut p.grad {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += *b;
                    }
                }
                None => p.grad = Some(g),
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad = None;
        }
    }

    /// Flat concatenation of all values in name order.
    pub fn flat_values(&self) -> Vec<T> {
        self.params
            .values()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    pub fn flat_grads(&self) -> Option<Vec<T>> {
        let mut out = Vec::with_capacity(self.num_values());
        for p in self.params.values() {
            out.extend_from_slice(p.grad.as_ref()?.data());
        }
        Some(out)
    }

    pub fn set_flat_values(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_values() {
            bail!(Shape, "flat parameter vector of {} for {}", flat.len(), self.num_values());
        }
        let mut off = 0;
        for p in self.params.values_mut() {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Write `manifest.json` plus one little-endian `.f32` file per parameter.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display(), e))?;
        let mut entries = Vec::with_capacity(self.params.len());
        for (i, (name, p)) in self.params.iter().enumerate() {
            let file = format!("p{i:04}.f32");
            let bytes: Vec<u8> = p
                .value
                .data()
                .iter()
                .flat_map(|v| (v.f64() as f32).to_le_bytes())
                .collect();
            let path = dir.join(&file);
            fs::write(&path, bytes).map_err(|e| Error::io(path.display(), e))?;
            entries.push(CheckpointEntry {
                name: name.clone(),
                shape: p.value.shape().to_vec(),
                file,
            });
        }
        let manifest = CheckpointManifest {
            seed: self.init_seed,
            step: self.step,
            params: entries,
        };
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)?)
            .map_err(|e| Error::io(path.display(), e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(path.display(), e))?;
        let manifest: CheckpointManifest = serde_json::from_str(&text)?;
        let mut store = ParamStore::new(manifest.seed);
        store.step = manifest.step;
        for e in manifest.params {
            let path = dir.join(&e.file);
            let bytes = fs::read(&path).map_err(|err| Error::io(path.display(), err))?;
            if bytes.len() % 4 != 0 {
                bail!(Data, "{} is not a whole number of f32 values", path.display());
            }
            let data = bytes
                .chunks_exact(4)
                .map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
                .collect();
            store.insert(&e.name, Tensor::new(e.shape, data)?)?;
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_name_same_seed_identical_init() {
        let mut a = ParamStore::<f32>::new(7);
        let mut b = ParamStore::<f32>::new(7);
        a.init("x.w", &[4, 3], InitScheme::KaimingUniform { fan_in: 4 }).unwrap();
        b.init("other", &[2], InitScheme::Zeros).unwrap();
        b.init("x.w", &[4, 3], InitScheme::KaimingUniform { fan_in: 4 }).unwrap();
        assert_eq!(a.get("x.w"), b.get("x.w"));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut a = ParamStore::<f32>::new(0);
        a.init("w", &[1], InitScheme::Zeros).unwrap();
        assert!(a.init("w", &[1], InitScheme::Zeros).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = ParamStore::<f32>::new(5);
        a.init("enc/w", &[3, 2], InitScheme::Normal { std: 1.0 }).unwrap();
        a.init("b", &[2], InitScheme::Ones).unwrap();
        a.step = 12;
        a.save(dir.path()).unwrap();
        let b = ParamStore::<f32>::load(dir.path()).unwrap();
        assert_eq!(b.step, 12);
        assert_eq!(b.init_seed(), 5);
        assert_eq!(a.get("enc/w"), b.get("enc/w"));
        assert_eq!(a.get("b"), b.get("b"));
    }
}
