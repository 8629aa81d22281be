//! Modality encoders and adapters.
//!
//! EPNN encodes the physical-environment vector (occupancy grid + BS/UE
//! coordinates), CFENN the flattened normalized CSI. Both are 3-layer MLPs
//! with GELU activations and an L2-normalized output code; adapters are
//! affine maps from code space into backbone token space.

use crate::error::Result;
use crate::params::{init_linear, linear_forward, Binding, LinearIds, ParamId, ParamStore};
use crate::rng::SplitMix64;
use crate::tensor::tape::{NodeId, Tape};
use crate::tensor::{Real, Tensor};

/// Hidden widths of both encoder MLPs.
pub const ENC_HIDDEN: (usize, usize) = (128, 64);

#[derive(Debug, Clone, Copy)]
pub struct MlpIds {
    pub l1: LinearIds,
    pub l2: LinearIds,
    pub l3: LinearIds,
}

/// He-style init for a 3-layer MLP `in_dim -> h1 -> h2 -> out_dim`.
pub fn init_mlp<F: Real>(
    store: &mut ParamStore<F>,
    prefix: &str,
    in_dim: usize,
    out_dim: usize,
    rng: &mut SplitMix64,
) -> MlpIds {
    let (h1, h2) = ENC_HIDDEN;
    let s1 = (2.0 / in_dim as f64).sqrt();
    let s2 = (2.0 / h1 as f64).sqrt();
    let s3 = (2.0 / h2 as f64).sqrt();
    MlpIds {
        l1: init_linear(store, &format!("{prefix}.l1"), in_dim, h1, s1, rng),
        l2: init_linear(store, &format!("{prefix}.l2"), h1, h2, s2, rng),
        l3: init_linear(store, &format!("{prefix}.l3"), h2, out_dim, s3, rng),
    }
}

/// Encoder forward: three affine layers, GELU after the first two, rows
/// L2-normalized at the end. Input `[B, in_dim]`, output `[B, out_dim]`.
pub fn encoder_forward<F: Real>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    binding: &mut Binding,
    ids: MlpIds,
    x: NodeId,
) -> Result<NodeId> {
    let h1 = linear_forward(tape, store, binding, ids.l1, x)?;
    let a1 = tape.gelu(h1);
    let h2 = linear_forward(tape, store, binding, ids.l2, a1)?;
    let a2 = tape.gelu(h2);
    let h3 = linear_forward(tape, store, binding, ids.l3, a2)?;
    Ok(tape.row_l2_norm(h3))
}

/// Value-only encode of a batch of input rows.
pub fn encode<F: Real>(
    store: &ParamStore<F>,
    ids: MlpIds,
    inputs: &Tensor<F>,
) -> Result<Tensor<F>> {
    let mut tape = Tape::new();
    let mut binding = Binding::new();
    let x = tape.constant(inputs.clone());
    let code = encoder_forward(&mut tape, store, &mut binding, ids, x)?;
    Ok(tape.value(code).clone())
}

/// Adapter: one affine map from `d_enc` to `d_model` (exactly one modality
/// token per sample).
pub fn init_adapter<F: Real>(
    store: &mut ParamStore<F>,
    prefix: &str,
    d_enc: usize,
    d_model: usize,
    rng: &mut SplitMix64,
) -> LinearIds {
    init_linear(store, prefix, d_enc, d_model, 0.02, rng)
}

pub fn adapter_forward<F: Real>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    binding: &mut Binding,
    ids: LinearIds,
    code: NodeId,
) -> Result<NodeId> {
    linear_forward(tape, store, binding, ids, code)
}

/// Adapt a single code vector, value only.
pub fn adapt<F: Real>(store: &ParamStore<F>, ids: LinearIds, code: &Tensor<F>) -> Result<Tensor<F>> {
    let mut tape = Tape::new();
    let mut binding = Binding::new();
    let rows = code.rows();
    let x = tape.constant(code.clone().reshaped(vec![rows, code.last_dim()])?);
    let tok = adapter_forward(&mut tape, store, &mut binding, ids, x)?;
    Ok(tape.value(tok).clone())
}

pub struct EncoderInit {
    pub epnn: MlpIds,
    pub cfenn: MlpIds,
    pub log_inv_temp: ParamId,
}

/// Fresh encoder pair plus the learnable contrastive temperature
/// (parameterized as log(1/T), initialized at T = 0.07).
pub fn init_encoders<F: Real>(
    store: &mut ParamStore<F>,
    env_dim: usize,
    csi_dim: usize,
    d_enc: usize,
    rng: &mut SplitMix64,
) -> EncoderInit {
    let epnn = init_mlp(store, "epnn", env_dim, d_enc, rng);
    let cfenn = init_mlp(store, "cfenn", csi_dim, d_enc, rng);
    let log_inv_temp = store.add(
        "align.log_inv_temp",
        Tensor::scalar(F::from_f64((1.0f64 / 0.07).ln())),
    );
    EncoderInit { epnn, cfenn, log_inv_temp }
}
