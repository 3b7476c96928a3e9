use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Tensor;
use crate::error::{Error, IoContext, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named trainable tensors. Insertion order is stable and defines iteration
/// order everywhere (optimizer state, checkpoints, gradient checks).
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.tensors.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(value.with_grad());
        id
    }

    /// Adds a parameter drawn from N(0, std²).
    pub fn add_normal(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        std: f64,
        rng: &mut impl Rng,
    ) -> ParamId {
        let normal = Normal::new(0.0, std).expect("finite std");
        let numel = shape.iter().product();
        let data = (0..numel).map(|_| normal.sample(rng)).collect();
        let t = Tensor::new(shape.to_vec(), data).expect("shape matches");
        self.add(name, t)
    }

    pub fn add_full(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> ParamId {
        self.add(name, Tensor::full(shape, value))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.id(name).map(move |id| &mut self.tensors[id.0])
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for t in &mut self.tensors {
            if let Some(g) = t.grad_mut() {
                g.iter_mut().for_each(|v| *v *= factor);
            }
        }
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Writes one `<name>.kgt` file per parameter into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).at(dir)?;
        for (name, t) in self.names.iter().zip(&self.tensors) {
            Tensor::new(t.shape().to_vec(), t.data().to_vec())?
                .save(&dir.join(format!("{name}.kgt")))?;
        }
        Ok(())
    }

    /// Overwrites every parameter with the tensor stored under its name in `dir`.
    pub fn load_dir(&mut self, dir: &Path) -> Result<()> {
        for i in 0..self.tensors.len() {
            let path = dir.join(format!("{}.kgt", self.names[i]));
            let loaded = Tensor::load(&path)?;
            if loaded.shape() != self.tensors[i].shape() {
                return Err(Error::Data(format!(
                    "parameter {} has shape {:?} in {} but the model expects {:?}",
                    self.names[i],
                    loaded.shape(),
                    path.display(),
                    self.tensors[i].shape()
                )));
            }
            self.tensors[i].data_mut().copy_from_slice(loaded.data());
        }
        Ok(())
    }

    /// Copies values for every parameter name also present in `other`.
    /// Returns how many tensors were copied.
    pub fn copy_matching(&mut self, other: &ParamStore) -> usize {
        let mut copied = 0;
        for i in 0..self.tensors.len() {
            if let Some(src) = other.by_name(&self.names[i]) {
                if src.shape() == self.tensors[i].shape() {
                    self.tensors[i].data_mut().copy_from_slice(src.data());
                    copied += 1;
                }
            }
        }
        copied
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn params_round_trip_through_directory() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        store.add_normal("layer.w", &[3, 2], 0.02, &mut rng);
        store.add_full("layer.b", &[2], 0.5);
        let dir = tempfile::tempdir().unwrap();
        store.save_dir(dir.path()).unwrap();

        let mut fresh = ParamStore::new();
        fresh.add_full("layer.w", &[3, 2], 0.0);
        fresh.add_full("layer.b", &[2], 0.0);
        fresh.load_dir(dir.path()).unwrap();
        for id in store.ids() {
            assert_eq!(store.get(id).data(), fresh.get(id).data());
        }
    }

    #[test]
    fn params_track_gradients() {
        let mut store = ParamStore::new();
        let id = store.add_full("w", &[2], 1.0);
        assert!(store.get(id).requires_grad());
        store.get_mut(id).accumulate_grad(&[1.0, 1.0]).unwrap();
        store.scale_grads(0.5);
        assert_eq!(store.get(id).grad().unwrap(), &[0.5, 0.5]);
    }
}
