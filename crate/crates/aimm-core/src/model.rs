//! The assembled multi-task model and the eight run configurations.
//!
//! Per task, the forward path is: modality encoder (frozen unless TE/TC) ->
//! adapter -> [modality token | prefix | keyword] sequence -> backbone with
//! LoRA -> last-position feature -> task head. The WM configuration removes
//! the instruction and backbone entirely, wiring the adapter straight into
//! the heads.

use crate::backbone::{
    backbone_last_position, init_backbone, init_lora, BackboneIds, LoraIds, ModelDims,
};
use crate::encoder::{adapter_forward, encoder_forward, init_adapter, init_mlp, MlpIds};
use crate::error::{Error, Result};
use crate::instructions::{build_instruction, init_prefixes, PrefixIds, PrefixMode};
use crate::params::{init_linear, linear_forward, Binding, LinearIds, ParamStore};
use crate::rng::{domain, SplitMix64};
use crate::tasks::{task_loss, TaskId, TaskTargets};
use crate::tensor::tape::{NodeId, Tape};
use crate::tensor::{Real, Tensor};
use crate::vocab::Vocab;
use std::sync::atomic::{AtomicU64, Ordering};

/// Run configuration: the full model or one of the seven benchmark
/// variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConfigKind {
    /// Ours: prefix + adapters + LoRA + heads trainable.
    Full,
    /// Fixed prompt: keyword tokens only, no learnable prefix.
    Fp,
    /// Same prompt: one shared instruction for every task.
    Sp,
    /// Train EPNN from scratch (environment encoder not pretrained).
    Te,
    /// Train CFENN from scratch (channel encoder not pretrained).
    Tc,
    /// Without LoRA: backbone used as-is.
    Wl,
    /// Random backbone: randomly initialized then frozen.
    Rl,
    /// Without backbone: adapter connects directly to the heads.
    Wm,
}

impl ConfigKind {
    pub const ALL: [ConfigKind; 8] = [
        ConfigKind::Full,
        ConfigKind::Fp,
        ConfigKind::Sp,
        ConfigKind::Te,
        ConfigKind::Tc,
        ConfigKind::Wl,
        ConfigKind::Rl,
        ConfigKind::Wm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ConfigKind::Full => "full",
            ConfigKind::Fp => "fp",
            ConfigKind::Sp => "sp",
            ConfigKind::Te => "te",
            ConfigKind::Tc => "tc",
            ConfigKind::Wl => "wl",
            ConfigKind::Rl => "rl",
            ConfigKind::Wm => "wm",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown config {name:?}")))
    }

    pub fn prefix_mode(self) -> PrefixMode {
        match self {
            ConfigKind::Full | ConfigKind::Te | ConfigKind::Tc | ConfigKind::Wl | ConfigKind::Rl => {
                PrefixMode::PerTask
            }
            ConfigKind::Sp => PrefixMode::Shared,
            ConfigKind::Fp => PrefixMode::Fixed,
            ConfigKind::Wm => PrefixMode::Absent,
        }
    }

    pub fn has_backbone(self) -> bool {
        self != ConfigKind::Wm
    }

    pub fn has_lora(self) -> bool {
        !matches!(self, ConfigKind::Wl | ConfigKind::Wm)
    }

    /// Backbone weights come from the pretrained checkpoint (RL keeps its
    /// own random init, frozen).
    pub fn uses_pretrained_backbone(self) -> bool {
        self.has_backbone() && self != ConfigKind::Rl
    }

    /// The encoder (if any) trained from scratch in this configuration.
    pub fn scratch_encoder(self) -> Option<Modality> {
        match self {
            ConfigKind::Te => Some(Modality::Environment),
            ConfigKind::Tc => Some(Modality::Channel),
            _ => None,
        }
    }

    /// Component name prefixes expected to change during training.
    pub fn trainable_components(self) -> Vec<&'static str> {
        let mut v = vec!["adapter_env.", "adapter_chan.", "head."];
        if self.prefix_mode() != PrefixMode::Fixed && self.prefix_mode() != PrefixMode::Absent {
            v.push("prefix.");
        }
        if self.has_lora() {
            v.push("lora.");
        }
        match self.scratch_encoder() {
            Some(Modality::Environment) => v.push("epnn."),
            Some(Modality::Channel) => v.push("cfenn."),
            None => {}
        }
        v.sort_unstable();
        v
    }
}

pub use crate::tasks::Modality;

/// Normalization constants carried with a trained model.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct ModelMeta {
    pub pl_mean: f64,
    pub pl_std: f64,
    pub csi_rms: f64,
}

#[derive(Debug)]
pub struct Model<F: Real> {
    pub kind: ConfigKind,
    pub dims: ModelDims,
    pub store: ParamStore<F>,
    pub epnn: MlpIds,
    pub cfenn: MlpIds,
    pub adapter_env: LinearIds,
    pub adapter_chan: LinearIds,
    pub prefixes: PrefixIds,
    pub backbone: Option<BackboneIds>,
    pub lora: Option<LoraIds>,
    /// Heads indexed in `TaskId::ALL` order.
    pub heads: Vec<LinearIds>,
    pub vocab: Vocab,
    pub meta: ModelMeta,
    backbone_calls: AtomicU64,
}

impl<F: Real> Clone for Model<F> {
    fn clone(&self) -> Self {
        Model {
            kind: self.kind,
            dims: self.dims.clone(),
            store: self.store.clone(),
            epnn: self.epnn,
            cfenn: self.cfenn,
            adapter_env: self.adapter_env,
            adapter_chan: self.adapter_chan,
            prefixes: self.prefixes.clone(),
            backbone: self.backbone.clone(),
            lora: self.lora.clone(),
            heads: self.heads.clone(),
            vocab: self.vocab.clone(),
            meta: self.meta.clone(),
            backbone_calls: AtomicU64::new(self.backbone_calls.load(Ordering::Relaxed)),
        }
    }
}

/// Name prefixes of all model components, in census order.
pub const COMPONENT_PREFIXES: [&str; 8] = [
    "epnn.",
    "cfenn.",
    "adapter_env.",
    "adapter_chan.",
    "prefix.",
    "backbone.",
    "lora.",
    "head.",
];

impl<F: Real> Model<F> {
    /// Fresh model with every component at seeded random init and the
    /// configuration's freeze policy applied. Pretrained weights are
    /// overlaid afterwards via [`ParamStore::import_blobs`].
    pub fn new(kind: ConfigKind, dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut store = ParamStore::new();
        let mut rng_enc = SplitMix64::stream(seed, &[domain::INIT, 1]);
        let epnn = init_mlp(&mut store, "epnn", dims.env_dim, dims.d_enc, &mut rng_enc);
        let cfenn = init_mlp(&mut store, "cfenn", dims.csi_dim, dims.d_enc, &mut rng_enc);
        let mut rng_adapt = SplitMix64::stream(seed, &[domain::INIT, 2]);
        let adapter_env = init_adapter(&mut store, "adapter_env", dims.d_enc, dims.d_model, &mut rng_adapt);
        let adapter_chan = init_adapter(&mut store, "adapter_chan", dims.d_enc, dims.d_model, &mut rng_adapt);
        let mut rng_prefix = SplitMix64::stream(seed, &[domain::INIT, 3]);
        let prefixes = init_prefixes(&mut store, kind.prefix_mode(), dims.d_model, &mut rng_prefix);
        let backbone = if kind.has_backbone() {
            let mut rng_bb = SplitMix64::stream(seed, &[domain::INIT, 4]);
            Some(init_backbone(&mut store, &dims, &mut rng_bb)?)
        } else {
            None
        };
        let lora = if kind.has_lora() {
            let mut rng_lora = SplitMix64::stream(seed, &[domain::INIT, 5]);
            Some(init_lora(&mut store, &dims, &mut rng_lora)?)
        } else {
            None
        };
        let mut rng_heads = SplitMix64::stream(seed, &[domain::INIT, 6]);
        let heads = TaskId::ALL
            .iter()
            .map(|t| {
                init_linear(
                    &mut store,
                    &format!("head.{}", t.name()),
                    dims.d_model,
                    t.out_dim(dims.n_t),
                    0.02,
                    &mut rng_heads,
                )
            })
            .collect();
        let mut model = Model {
            kind,
            dims,
            store,
            epnn,
            cfenn,
            adapter_env,
            adapter_chan,
            prefixes,
            backbone,
            lora,
            heads,
            vocab: Vocab::new(),
            meta: ModelMeta::default(),
            backbone_calls: AtomicU64::new(0),
        };
        model.apply_freeze_policy();
        Ok(model)
    }

    /// Set per-parameter trainability from the configuration contract.
    pub fn apply_freeze_policy(&mut self) {
        self.store.freeze_all();
        let trainable = self.kind.trainable_components();
        for id in self.store.ids().collect::<Vec<_>>() {
            let name = self.store.name(id).to_string();
            if trainable.iter().any(|p| name.starts_with(p)) {
                self.store.set_trainable(id, true);
            }
        }
    }

    pub fn cast<G: Real>(&self) -> Model<G> {
        Model {
            kind: self.kind,
            dims: self.dims.clone(),
            store: self.store.cast(),
            epnn: self.epnn,
            cfenn: self.cfenn,
            adapter_env: self.adapter_env,
            adapter_chan: self.adapter_chan,
            prefixes: self.prefixes.clone(),
            backbone: self.backbone.clone(),
            lora: self.lora.clone(),
            heads: self.heads.clone(),
            vocab: self.vocab.clone(),
            meta: self.meta.clone(),
            backbone_calls: AtomicU64::new(0),
        }
    }

    pub fn backbone_call_count(&self) -> u64 {
        self.backbone_calls.load(Ordering::Relaxed)
    }

    pub fn reset_backbone_call_count(&self) {
        self.backbone_calls.store(0, Ordering::Relaxed);
    }

    /// SHA-256 per component (only components present in this config).
    pub fn component_hashes(&self) -> Vec<(String, [u8; 32])> {
        COMPONENT_PREFIXES
            .iter()
            .filter_map(|&p| {
                let any = self.store.ids().any(|id| self.store.name(id).starts_with(p));
                any.then(|| (p.to_string(), self.store.hash_component(p)))
            })
            .collect()
    }

    fn encoder_for(&self, task: TaskId) -> (MlpIds, LinearIds) {
        match task.modality() {
            Modality::Environment => (self.epnn, self.adapter_env),
            Modality::Channel => (self.cfenn, self.adapter_chan),
        }
    }

    fn head_for(&self, task: TaskId) -> LinearIds {
        let idx = TaskId::ALL.iter().position(|&t| t == task).unwrap();
        self.heads[idx]
    }

    /// Build the task feature `[B, d_model]` on the tape.
    pub fn task_feature(
        &self,
        tape: &mut Tape<F>,
        binding: &mut Binding,
        task: TaskId,
        inputs: &Tensor<F>,
    ) -> Result<NodeId> {
        let (enc, adapter) = self.encoder_for(task);
        let x = tape.constant(inputs.clone());
        let code = encoder_forward(tape, &self.store, binding, enc, x)?;
        let token = adapter_forward(tape, &self.store, binding, adapter, code)?;
        match &self.backbone {
            None => Ok(token),
            Some(bb) => {
                let instr = build_instruction(
                    tape,
                    &self.store,
                    binding,
                    &self.prefixes,
                    &self.vocab,
                    bb.embed,
                    task,
                )?;
                let seq = tape.assemble_seq(token, instr)?;
                self.backbone_calls.fetch_add(1, Ordering::Relaxed);
                backbone_last_position(tape, &self.store, binding, bb, self.lora.as_ref(), &self.dims, seq)
            }
        }
    }

    /// Head output `[B, out_dim]` on the tape.
    pub fn task_output(
        &self,
        tape: &mut Tape<F>,
        binding: &mut Binding,
        task: TaskId,
        inputs: &Tensor<F>,
    ) -> Result<NodeId> {
        let feat = self.task_feature(tape, binding, task, inputs)?;
        linear_forward(tape, &self.store, binding, self.head_for(task), feat)
    }

    /// Scalar task loss on the tape.
    pub fn task_loss_node(
        &self,
        tape: &mut Tape<F>,
        binding: &mut Binding,
        task: TaskId,
        inputs: &Tensor<F>,
        targets: &TaskTargets<F>,
    ) -> Result<NodeId> {
        let pred = self.task_output(tape, binding, task, inputs)?;
        task_loss(tape, task, pred, targets)
    }

    /// Value-only batched prediction.
    pub fn predict(&self, task: TaskId, inputs: &Tensor<F>) -> Result<Tensor<F>> {
        let mut tape = Tape::new();
        let mut binding = Binding::new();
        let out = self.task_output(&mut tape, &mut binding, task, inputs)?;
        Ok(tape.value(out).clone())
    }

    /// Value-only loss.
    pub fn loss_value(&self, task: TaskId, inputs: &Tensor<F>, targets: &TaskTargets<F>) -> Result<f64> {
        let mut tape = Tape::new();
        let mut binding = Binding::new();
        let node = self.task_loss_node(&mut tape, &mut binding, task, inputs, targets)?;
        Ok(tape.value(node).data()[0].to_f64())
    }
}

/// Assemble inputs and targets for a batch of record indices.
pub fn make_batch<F: Real>(
    records: &[crate::dataset::SampleRecord],
    idxs: &[usize],
    task: TaskId,
    meta: &ModelMeta,
) -> (Tensor<F>, TaskTargets<F>) {
    let b = idxs.len();
    let mut inputs: Vec<F> = Vec::new();
    for &i in idxs {
        let r = &records[i];
        let row = match task.modality() {
            Modality::Environment => r.env_vector(),
            Modality::Channel => r.csi_vector(meta.csi_rms),
        };
        inputs.extend(row.into_iter().map(F::from_f32));
    }
    let dim = inputs.len() / b;
    let inputs = Tensor::new(vec![b, dim], inputs).expect("row width constant");
    let targets = match task {
        TaskId::Positioning => TaskTargets::Positioning(
            idxs.iter()
                .flat_map(|&i| records[i].ue_xy)
                .map(F::from_f32)
                .collect(),
        ),
        TaskId::LosNlos => {
            TaskTargets::LosNlos(idxs.iter().map(|&i| records[i].los as i64).collect())
        }
        TaskId::Precoding => TaskTargets::Precoding(
            idxs.iter()
                .flat_map(|&i| records[i].precoder.iter().copied())
                .map(F::from_f32)
                .collect(),
        ),
        TaskId::BeamSelection => {
            TaskTargets::BeamSelection(idxs.iter().map(|&i| records[i].beam_index as i64).collect())
        }
        TaskId::PathLoss => TaskTargets::PathLoss(
            idxs.iter()
                .map(|&i| {
                    F::from_f64((records[i].path_loss_db as f64 - meta.pl_mean) / meta.pl_std)
                })
                .collect(),
        ),
    };
    (inputs, targets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dims() -> ModelDims {
        ModelDims {
            env_dim: 260,
            csi_dim: 2 * 4 * 4,
            d_enc: 8,
            d_model: 16,
            n_layers: 2,
            n_heads: 2,
            d_ff: 32,
            vocab_size: 64,
            max_len: 8,
            n_t: 4,
            lora_rank: 2,
        }
    }

    fn rand_inputs(task: TaskId, dims: &ModelDims, b: usize, seed: u64) -> Tensor<f64> {
        let mut rng = SplitMix64::new(seed);
        let dim = match task.modality() {
            Modality::Environment => dims.env_dim,
            Modality::Channel => dims.csi_dim,
        };
        Tensor::randn(vec![b, dim], 0.5, &mut rng)
    }

    #[test]
    fn all_configs_forward_all_tasks() {
        let dims = tiny_dims();
        for kind in ConfigKind::ALL {
            let model: Model<f64> = Model::new(kind, dims.clone(), 3).unwrap();
            for task in TaskId::ALL {
                let x = rand_inputs(task, &dims, 2, 9);
                let y = model.predict(task, &x).unwrap();
                assert_eq!(y.shape(), &[2, task.out_dim(dims.n_t)], "{} {}", kind.name(), task.name());
                assert!(y.data().iter().all(|v| v.is_finite()));
            }
        }
    }

    #[test]
    fn wm_never_calls_backbone_and_has_none() {
        let dims = tiny_dims();
        let model: Model<f64> = Model::new(ConfigKind::Wm, dims.clone(), 3).unwrap();
        assert!(model.backbone.is_none());
        assert!(model.lora.is_none());
        let x = rand_inputs(TaskId::Positioning, &dims, 2, 1);
        model.predict(TaskId::Positioning, &x).unwrap();
        assert_eq!(model.backbone_call_count(), 0);
        // full config does call it
        let full: Model<f64> = Model::new(ConfigKind::Full, dims, 3).unwrap();
        let x2 = rand_inputs(TaskId::Positioning, &full.dims, 2, 1);
        full.predict(TaskId::Positioning, &x2).unwrap();
        assert_eq!(full.backbone_call_count(), 1);
    }

    #[test]
    fn wl_has_zero_lora_parameters() {
        let dims = tiny_dims();
        let model: Model<f64> = Model::new(ConfigKind::Wl, dims, 3).unwrap();
        assert!(model.lora.is_none());
        let lora_params = model.store.ids().filter(|&id| model.store.name(id).starts_with("lora.")).count();
        assert_eq!(lora_params, 0);
    }

    #[test]
    fn trainable_sets_match_contract() {
        let dims = tiny_dims();
        for kind in ConfigKind::ALL {
            let model: Model<f64> = Model::new(kind, dims.clone(), 5).unwrap();
            let expected = kind.trainable_components();
            for id in model.store.ids() {
                let name = model.store.name(id);
                let should_train = expected.iter().any(|p| name.starts_with(p));
                assert_eq!(
                    model.store.is_trainable(id),
                    should_train,
                    "{}: {}",
                    kind.name(),
                    name
                );
            }
        }
    }

    #[test]
    fn deterministic_init_per_seed() {
        let dims = tiny_dims();
        let a: Model<f32> = Model::new(ConfigKind::Full, dims.clone(), 11).unwrap();
        let b: Model<f32> = Model::new(ConfigKind::Full, dims.clone(), 11).unwrap();
        let c: Model<f32> = Model::new(ConfigKind::Full, dims, 12).unwrap();
        assert_eq!(a.component_hashes(), b.component_hashes());
        assert_ne!(a.component_hashes(), c.component_hashes());
    }

    #[test]
    fn full_model_gradcheck_every_task() {
        // the whole per-task loss path matches finite differences in 64-bit
        let dims = tiny_dims();
        let model: Model<f64> = Model::new(ConfigKind::Full, dims.clone(), 21).unwrap();
        let mut rng = SplitMix64::new(5);
        for task in TaskId::ALL {
            let b = 2usize;
            let x = rand_inputs(task, &dims, b, 31);
            let targets: TaskTargets<f64> = match task {
                TaskId::Positioning => {
                    TaskTargets::Positioning((0..2 * b).map(|_| rng.next_f64()).collect())
                }
                TaskId::LosNlos => TaskTargets::LosNlos((0..b).map(|_| rng.below(2) as i64).collect()),
                TaskId::Precoding => TaskTargets::Precoding(
                    (0..2 * dims.n_t * b).map(|_| rng.next_normal() * 0.3).collect(),
                ),
                TaskId::BeamSelection => {
                    TaskTargets::BeamSelection((0..b).map(|_| rng.below(dims.n_t as u64) as i64).collect())
                }
                TaskId::PathLoss => {
                    TaskTargets::PathLoss((0..b).map(|_| rng.next_normal()).collect())
                }
            };
            // gradcheck a few coordinates of several trainable tensors by
            // finite differences over the full model pass
            let check_ids: Vec<_> = model
                .store
                .ids()
                .filter(|&id| model.store.is_trainable(id))
                .take(6)
                .collect();
            // analytic gradients
            let mut tape = Tape::new();
            let mut binding = Binding::new();
            let loss_node = model
                .task_loss_node(&mut tape, &mut binding, task, &x, &targets)
                .unwrap();
            let grads = tape.backward(loss_node).unwrap();
            for pid in check_ids {
                let node = binding.pairs().iter().find(|(p, _)| *p == pid).map(|&(_, n)| n);
                let analytic = node.and_then(|n| grads.get(n)).map(|g| g.to_vec());
                let Some(analytic) = analytic else { continue };
                let numel = model.store.tensor(pid).numel();
                for idx in [0, numel / 2, numel - 1] {
                    let h = 1e-6 * (1.0 + model.store.tensor(pid).data()[idx].abs());
                    let mut m2 = model.clone();
                    m2.store.tensor_mut(pid).data_mut()[idx] += h;
                    let fp = m2.loss_value(task, &x, &targets).unwrap();
                    m2.store.tensor_mut(pid).data_mut()[idx] -= 2.0 * h;
                    let fm = m2.loss_value(task, &x, &targets).unwrap();
                    let fd = (fp - fm) / (2.0 * h);
                    let err = crate::tensor::gradcheck::rel_err(analytic[idx], fd);
                    assert!(
                        err < 1e-4,
                        "{}: param {} idx {idx}: analytic {} fd {} err {err}",
                        task.name(),
                        model.store.name(pid),
                        analytic[idx],
                        fd
                    );
                }
            }
        }
    }
}
