//! Named parameter store shared by every model component.
//!
//! Components hold `ParamId` handles into one flat store; the store owns the
//! tensors, their stable names (used for checkpoints, optimizer state, and
//! freeze-census hashes) and per-parameter trainability flags.

use crate::error::{Error, Result};
use crate::tensor::tape::{NodeId, Tape};
use crate::tensor::{Real, Tensor};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct ParamStore<F> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
    trainable: Vec<bool>,
}

impl<F: Real> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), tensors: Vec::new(), trainable: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<F>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.trainable.push(false);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<F> {
        &self.tensors[id.0]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.tensors[id.0]
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.trainable[id.0]
    }

    pub fn set_trainable(&mut self, id: ParamId, flag: bool) {
        self.trainable[id.0] = flag;
    }

    pub fn freeze_all(&mut self) {
        for t in self.trainable.iter_mut() {
            *t = false;
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn trainable_count(&self) -> usize {
        self.ids().filter(|&id| self.is_trainable(id)).map(|id| self.tensor(id).numel()).sum()
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
            trainable: self.trainable.clone(),
        }
    }

    /// SHA-256 over (name, f32 LE bytes) of every param whose name starts
    /// with `prefix`, in store order. Used by the freeze census.
    pub fn hash_component(&self, prefix: &str) -> [u8; 32] {
        let mut h = Sha256::new();
        for id in self.ids() {
            let name = self.name(id);
            if !name.starts_with(prefix) {
                continue;
            }
            h.update(name.as_bytes());
            h.update([0u8]);
            for &v in self.tensor(id).data() {
                h.update(v.to_f32().to_le_bytes());
            }
        }
        h.finalize().into()
    }

    /// Export (name, f32 data) pairs for every param under `prefix`.
    pub fn export_blobs(&self, prefix: &str) -> Vec<(String, Vec<f32>)> {
        self.ids()
            .filter(|&id| self.name(id).starts_with(prefix))
            .map(|id| (self.name(id).to_string(), self.tensor(id).to_f32_vec()))
            .collect()
    }

    /// Overlay blob values onto existing params by exact name. Missing
    /// params or shape mismatches are checkpoint errors.
    pub fn import_blobs(&mut self, blobs: &[(String, Vec<f32>)]) -> Result<()> {
        for (name, data) in blobs {
            let id = self
                .find(name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name:?}")))?;
            let t = self.tensor_mut(id);
            if t.numel() != data.len() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name:?} has {} values, checkpoint provides {}",
                    t.numel(),
                    data.len()
                )));
            }
            for (dst, &src) in t.data_mut().iter_mut().zip(data) {
                *dst = F::from_f32(src);
            }
        }
        Ok(())
    }
}

/// Caches tape leaves per parameter within one tape build, so a parameter
/// bound twice shares a single leaf and its gradients accumulate.
#[derive(Debug, Default)]
pub struct Binding {
    pairs: Vec<(ParamId, NodeId)>,
}

impl Binding {
    pub fn new() -> Self {
        Binding { pairs: Vec::new() }
    }

    pub fn bind<F: Real>(&mut self, tape: &mut Tape<F>, store: &ParamStore<F>, id: ParamId) -> NodeId {
        if let Some(&(_, node)) = self.pairs.iter().find(|(p, _)| *p == id) {
            return node;
        }
        let node = tape.leaf(store.tensor(id).clone(), store.is_trainable(id));
        self.pairs.push((id, node));
        node
    }

    pub fn pairs(&self) -> &[(ParamId, NodeId)] {
        &self.pairs
    }
}

/// Weight + bias of one affine layer.
#[derive(Debug, Clone, Copy)]
pub struct LinearIds {
    pub w: ParamId,
    pub b: ParamId,
}

/// Initialize an affine layer: weight ~ N(0, std), bias 0.
pub fn init_linear<F: Real>(
    store: &mut ParamStore<F>,
    prefix: &str,
    in_dim: usize,
    out_dim: usize,
    std: f64,
    rng: &mut crate::rng::SplitMix64,
) -> LinearIds {
    let w = store.add(format!("{prefix}.w"), Tensor::randn(vec![in_dim, out_dim], std, rng));
    let b = store.add(format!("{prefix}.b"), Tensor::zeros(vec![out_dim]));
    LinearIds { w, b }
}

/// x @ w + b on the tape.
pub fn linear_forward<F: Real>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    binding: &mut Binding,
    ids: LinearIds,
    x: NodeId,
) -> Result<NodeId> {
    let w = binding.bind(tape, store, ids.w);
    let b = binding.bind(tape, store, ids.b);
    let y = tape.matmul(x, w)?;
    tape.add_bias(y, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn hash_changes_with_values_and_prefix_filters() {
        let mut store: ParamStore<f32> = ParamStore::new();
        let mut rng = SplitMix64::new(3);
        let a = store.add("enc.w", Tensor::randn(vec![2, 2], 1.0, &mut rng));
        store.add("head.w", Tensor::randn(vec![2, 2], 1.0, &mut rng));
        let h1 = store.hash_component("enc.");
        let h_head = store.hash_component("head.");
        assert_ne!(h1, h_head);
        store.tensor_mut(a).data_mut()[0] += 1.0;
        assert_ne!(store.hash_component("enc."), h1);
        assert_eq!(store.hash_component("head."), h_head);
    }

    #[test]
    fn export_import_roundtrip() {
        let mut store: ParamStore<f32> = ParamStore::new();
        let mut rng = SplitMix64::new(4);
        store.add("a.w", Tensor::randn(vec![3], 1.0, &mut rng));
        store.add("a.b", Tensor::randn(vec![2], 1.0, &mut rng));
        let blobs = store.export_blobs("a.");
        let mut other: ParamStore<f32> = ParamStore::new();
        other.add("a.w", Tensor::zeros(vec![3]));
        other.add("a.b", Tensor::zeros(vec![2]));
        other.import_blobs(&blobs).unwrap();
        assert_eq!(other.hash_component("a."), store.hash_component("a."));
        // unknown name rejected
        assert!(other.import_blobs(&[("zzz".into(), vec![1.0])]).is_err());
    }

    #[test]
    fn binding_dedupes_leaves() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let id = store.add("p", Tensor::vector(vec![1.0, 2.0]));
        let mut tape = Tape::new();
        let mut binding = Binding::new();
        let n1 = binding.bind(&mut tape, &store, id);
        let n2 = binding.bind(&mut tape, &store, id);
        assert_eq!(n1, n2);
        assert_eq!(binding.pairs().len(), 1);
    }
}
