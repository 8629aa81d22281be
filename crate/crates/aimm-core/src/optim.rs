//! Adam optimizer and serializable training state.
//!
//! Moments are kept per parameter and only advance on steps where that
//! parameter received a gradient (round-robin task training touches a
//! different subset each step). TrainState serializes everything needed to
//! resume bit-exactly: step counter, moments, the data-sampling RNG state,
//! and the loss history ring.

use crate::params::{ParamId, ParamStore};
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
struct Slot<F> {
    m: Vec<F>,
    v: Vec<F>,
    t: u64,
}

#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub cfg: AdamConfig,
    slots: Vec<Option<Slot<F>>>,
}

impl<F: Real> Adam<F> {
    pub fn new(cfg: AdamConfig, n_params: usize) -> Self {
        Adam { cfg, slots: (0..n_params).map(|_| None).collect() }
    }

    /// Apply one update to every (param, gradient) pair.
    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &[(ParamId, Vec<F>)]) {
        let b1 = F::from_f64(self.cfg.beta1);
        let b2 = F::from_f64(self.cfg.beta2);
        let one = F::one();
        let eps = F::from_f64(self.cfg.eps);
        let lr = F::from_f64(self.cfg.lr);
        for (id, g) in grads {
            let numel = store.tensor(*id).numel();
            debug_assert_eq!(numel, g.len());
            let slot = self.slots[id.0].get_or_insert_with(|| Slot {
                m: vec![F::zero(); numel],
                v: vec![F::zero(); numel],
                t: 0,
            });
            slot.t += 1;
            let bc1 = one - F::from_f64(self.cfg.beta1.powi(slot.t as i32));
            let bc2 = one - F::from_f64(self.cfg.beta2.powi(slot.t as i32));
            let data = store.tensor_mut(*id).data_mut();
            for i in 0..numel {
                let gi = g[i];
                slot.m[i] = b1 * slot.m[i] + (one - b1) * gi;
                slot.v[i] = b2 * slot.v[i] + (one - b2) * gi * gi;
                let mhat = slot.m[i] / bc1;
                let vhat = slot.v[i] / bc2;
                data[i] = data[i] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }

    /// Export moments as (name-keyed) blobs plus per-slot step counts.
    pub fn export(&self, store: &ParamStore<F>) -> (Vec<(String, Vec<f32>)>, Vec<(String, u64)>) {
        let mut blobs = Vec::new();
        let mut steps = Vec::new();
        for (i, slot) in self.slots.iter().enumerate() {
            if let Some(s) = slot {
                let name = store.name(ParamId(i));
                blobs.push((format!("adam.m.{name}"), s.m.iter().map(|&v| v.to_f32()).collect()));
                blobs.push((format!("adam.v.{name}"), s.v.iter().map(|&v| v.to_f32()).collect()));
                steps.push((name.to_string(), s.t));
            }
        }
        (blobs, steps)
    }

    pub fn import(
        &mut self,
        store: &ParamStore<F>,
        blobs: &[(String, Vec<f32>)],
        steps: &[(String, u64)],
    ) -> crate::error::Result<()> {
        for (name, t) in steps {
            let id = store.find(name).ok_or_else(|| {
                crate::error::Error::Checkpoint(format!("adam state for unknown param {name:?}"))
            })?;
            let m_blob = blobs
                .iter()
                .find(|(n, _)| n == &format!("adam.m.{name}"))
                .ok_or_else(|| crate::error::Error::Checkpoint(format!("missing adam.m.{name}")))?;
            let v_blob = blobs
                .iter()
                .find(|(n, _)| n == &format!("adam.v.{name}"))
                .ok_or_else(|| crate::error::Error::Checkpoint(format!("missing adam.v.{name}")))?;
            self.slots[id.0] = Some(Slot {
                m: m_blob.1.iter().map(|&v| F::from_f32(v)).collect(),
                v: v_blob.1.iter().map(|&v| F::from_f32(v)).collect(),
                t: *t,
            });
        }
        Ok(())
    }
}

/// Capacity of the loss history ring buffer.
pub const LOSS_RING: usize = 64;

/// Serializable training progress.
#[derive(Debug, Clone)]
pub struct TrainState<F> {
    pub step: u64,
    pub adam: Adam<F>,
    /// Data-sampling stream (batch index draws).
    pub rng: crate::rng::SplitMix64,
    pub loss_ring: Vec<f32>,
    pub ring_pos: usize,
}

impl<F: Real> TrainState<F> {
    pub fn new(cfg: AdamConfig, n_params: usize, rng: crate::rng::SplitMix64) -> Self {
        TrainState { step: 0, adam: Adam::new(cfg, n_params), rng, loss_ring: Vec::new(), ring_pos: 0 }
    }

    pub fn record_loss(&mut self, loss: f32) {
        if self.loss_ring.len() < LOSS_RING {
            self.loss_ring.push(loss);
            self.ring_pos = self.loss_ring.len() % LOSS_RING;
        } else {
            self.loss_ring[self.ring_pos] = loss;
            self.ring_pos = (self.ring_pos + 1) % LOSS_RING;
        }
    }

    pub fn recent_mean_loss(&self) -> f32 {
        if self.loss_ring.is_empty() {
            return f32::NAN;
        }
        self.loss_ring.iter().sum::<f32>() / self.loss_ring.len() as f32
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn adam_minimizes_a_quadratic() {
        // minimize (x - 3)^2 elementwise
        let mut store: ParamStore<f64> = ParamStore::new();
        let id = store.add("x", Tensor::vector(vec![0.0, 10.0, -4.0]));
        store.set_trainable(id, true);
        let mut adam = Adam::new(AdamConfig { lr: 0.05, ..AdamConfig::default() }, store.len());
        for _ in 0..2000 {
            let g: Vec<f64> = store.tensor(id).data().iter().map(|&x| 2.0 * (x - 3.0)).collect();
            adam.step(&mut store, &[(id, g)]);
        }
        for &x in store.tensor(id).data() {
            assert!((x - 3.0).abs() < 1e-3, "x = {x}");
        }
    }

    #[test]
    fn export_import_resumes_identically() {
        let mut store: ParamStore<f32> = ParamStore::new();
        let id = store.add("w", Tensor::vector(vec![1.0f32, -2.0, 0.5]));
        store.set_trainable(id, true);
        let cfg = AdamConfig::default();
        let grad_at = |s: &ParamStore<f32>| -> Vec<f32> {
            s.tensor(id).data().iter().map(|&x| x * 0.3 + 0.1).collect()
        };
        // run A: 20 straight steps
        let mut store_a = store.clone();
        let mut adam_a = Adam::new(cfg, store_a.len());
        for _ in 0..20 {
            let g = grad_at(&store_a);
            adam_a.step(&mut store_a, &[(id, g)]);
        }
        // run B: 10 steps, snapshot, restore into fresh state, 10 more
        let mut store_b = store.clone();
        let mut adam_b = Adam::new(cfg, store_b.len());
        for _ in 0..10 {
            let g = grad_at(&store_b);
            adam_b.step(&mut store_b, &[(id, g)]);
        }
        let (blobs, steps) = adam_b.export(&store_b);
        let mut adam_c = Adam::new(cfg, store_b.len());
        adam_c.import(&store_b, &blobs, &steps).unwrap();
        for _ in 0..10 {
            let g = grad_at(&store_b);
            adam_c.step(&mut store_b, &[(id, g)]);
        }
        assert_eq!(store_a.tensor(id).data(), store_b.tensor(id).data());
    }

    #[test]
    fn loss_ring_wraps() {
        let mut st: TrainState<f32> =
            TrainState::new(AdamConfig::default(), 0, crate::rng::SplitMix64::new(1));
        for i in 0..LOSS_RING + 10 {
            st.record_loss(i as f32);
        }
        assert_eq!(st.loss_ring.len(), LOSS_RING);
        assert!(st.recent_mean_loss() > 0.0);
    }
}
