//! Mini decoder-only transformer backbone with optional LoRA adapters on
//! the query/key projections.
//!
//! Pre-norm blocks: x = x + Attn(LN(x)); x = x + FFN(LN(x)); a final layer
//! norm closes the stack. Positions come from a learned embedding table.
//! LoRA materializes W = W0 + A B on the tape, so gradients flow to A and B
//! only and B = 0 reproduces the LoRA-free forward bitwise.

use crate::error::{Error, Result};
use crate::params::{Binding, LinearIds, ParamId, ParamStore};
use crate::rng::SplitMix64;
use crate::tensor::tape::{NodeId, Tape};
use crate::tensor::{Real, Tensor};

/// Model shape constants. Defaults are the desk-scale configuration.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelDims {
    pub env_dim: usize,
    pub csi_dim: usize,
    pub d_enc: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub n_t: usize,
    pub lora_rank: usize,
}

impl ModelDims {
    pub fn desk_scale(n_t: usize, n_c: usize) -> Self {
        ModelDims {
            env_dim: crate::dataset::ENV_DIM,
            csi_dim: 2 * n_t * n_c,
            d_enc: 32,
            d_model: 64,
            n_layers: 4,
            n_heads: 4,
            d_ff: 256,
            vocab_size: crate::vocab::VOCAB_SIZE,
            max_len: 8,
            n_t,
            lora_rank: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.lora_rank >= self.d_model {
            return Err(Error::Config(format!(
                "lora rank {} must be < d_model {}",
                self.lora_rank, self.d_model
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct LayerIds {
    pub ln1_g: ParamId,
    pub ln1_b: ParamId,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub ln2_g: ParamId,
    pub ln2_b: ParamId,
    pub ffn1: LinearIds,
    pub ffn2: LinearIds,
}

#[derive(Debug, Clone)]
pub struct BackboneIds {
    pub embed: ParamId,
    pub pos: ParamId,
    pub layers: Vec<LayerIds>,
    pub lnf_g: ParamId,
    pub lnf_b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct LoraLayerIds {
    pub a_q: ParamId,
    pub b_q: ParamId,
    pub a_k: ParamId,
    pub b_k: ParamId,
}

#[derive(Debug, Clone)]
pub struct LoraIds {
    pub layers: Vec<LoraLayerIds>,
    pub rank: usize,
}

pub fn init_backbone<F: Real>(
    store: &mut ParamStore<F>,
    dims: &ModelDims,
    rng: &mut SplitMix64,
) -> Result<BackboneIds> {
    dims.validate()?;
    let d = dims.d_model;
    let std = 0.02;
    let embed = store.add("backbone.embed", Tensor::randn(vec![dims.vocab_size, d], std, rng));
    let pos = store.add("backbone.pos", Tensor::randn(vec![dims.max_len, d], std, rng));
    let mut layers = Vec::with_capacity(dims.n_layers);
    for l in 0..dims.n_layers {
        let p = format!("backbone.layer{l}");
        layers.push(LayerIds {
            ln1_g: store.add(format!("{p}.ln1.g"), Tensor::full(vec![d], F::one())),
            ln1_b: store.add(format!("{p}.ln1.b"), Tensor::zeros(vec![d])),
            wq: store.add(format!("{p}.wq"), Tensor::randn(vec![d, d], std, rng)),
            wk: store.add(format!("{p}.wk"), Tensor::randn(vec![d, d], std, rng)),
            wv: store.add(format!("{p}.wv"), Tensor::randn(vec![d, d], std, rng)),
            wo: store.add(format!("{p}.wo"), Tensor::randn(vec![d, d], std, rng)),
            ln2_g: store.add(format!("{p}.ln2.g"), Tensor::full(vec![d], F::one())),
            ln2_b: store.add(format!("{p}.ln2.b"), Tensor::zeros(vec![d])),
            ffn1: LinearIds {
                w: store.add(format!("{p}.ffn1.w"), Tensor::randn(vec![d, dims.d_ff], std, rng)),
                b: store.add(format!("{p}.ffn1.b"), Tensor::zeros(vec![dims.d_ff])),
            },
            ffn2: LinearIds {
                w: store.add(format!("{p}.ffn2.w"), Tensor::randn(vec![dims.d_ff, d], std, rng)),
                b: store.add(format!("{p}.ffn2.b"), Tensor::zeros(vec![d])),
            },
        });
    }
    let lnf_g = store.add("backbone.lnf.g", Tensor::full(vec![d], F::one()));
    let lnf_b = store.add("backbone.lnf.b", Tensor::zeros(vec![d]));
    Ok(BackboneIds { embed, pos, layers, lnf_g, lnf_b })
}

/// LoRA pairs for every layer's Wq and Wk: A ~ N(0, 0.02), B = 0 so the
/// initial update is exactly zero.
pub fn init_lora<F: Real>(
    store: &mut ParamStore<F>,
    dims: &ModelDims,
    rng: &mut SplitMix64,
) -> Result<LoraIds> {
    dims.validate()?;
    let d = dims.d_model;
    let r = dims.lora_rank;
    let mut layers = Vec::with_capacity(dims.n_layers);
    for l in 0..dims.n_layers {
        let p = format!("lora.layer{l}");
        layers.push(LoraLayerIds {
            a_q: store.add(format!("{p}.a_q"), Tensor::randn(vec![d, r], 0.02, rng)),
            b_q: store.add(format!("{p}.b_q"), Tensor::zeros(vec![r, d])),
            a_k: store.add(format!("{p}.a_k"), Tensor::randn(vec![d, r], 0.02, rng)),
            b_k: store.add(format!("{p}.b_k"), Tensor::zeros(vec![r, d])),
        });
    }
    Ok(LoraIds { layers, rank: r })
}

/// Effective projection on the tape: W0 (frozen leaf) or W0 + A B.
pub fn apply_lora<F: Real>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    binding: &mut Binding,
    w0: ParamId,
    lora: Option<(ParamId, ParamId)>,
) -> Result<NodeId> {
    let w0_node = binding.bind(tape, store, w0);
    match lora {
        None => Ok(w0_node),
        Some((a, b)) => {
            let (ash, bsh) = (store.tensor(a).shape(), store.tensor(b).shape());
            let w0_sh = store.tensor(w0).shape();
            let r = ash[1];
            if r >= w0_sh[0].min(w0_sh[1]) || bsh[0] != r || ash[0] != w0_sh[0] || bsh[1] != w0_sh[1] {
                return Err(Error::Config(format!(
                    "lora shapes {ash:?} x {bsh:?} invalid for base {w0_sh:?}"
                )));
            }
            let a_node = binding.bind(tape, store, a);
            let b_node = binding.bind(tape, store, b);
            let update = tape.matmul(a_node, b_node)?;
            tape.add(w0_node, update)
        }
    }
}

/// Materialized effective weight W0 + A B (value only).
pub fn lora_effective_weight<F: Real>(
    store: &ParamStore<F>,
    w0: ParamId,
    a: ParamId,
    b: ParamId,
) -> Result<Tensor<F>> {
    let mut tape = Tape::new();
    let mut binding = Binding::new();
    let w = apply_lora(&mut tape, store, &mut binding, w0, Some((a, b)))?;
    Ok(tape.value(w).clone())
}

/// Run the transformer stack over an embedded sequence `[B, T, D]` and
/// return the full normalized output sequence `[B, T, D]`.
pub fn backbone_forward<F: Real>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    binding: &mut Binding,
    ids: &BackboneIds,
    lora: Option<&LoraIds>,
    dims: &ModelDims,
    x: NodeId,
) -> Result<NodeId> {
    let t = match tape.value(x).shape() {
        s if s.len() == 3 => s[1],
        s => return Err(Error::Dimension(format!("backbone expects [B,T,D], got {s:?}"))),
    };
    if t > dims.max_len {
        return Err(Error::Dimension(format!(
            "sequence length {} exceeds max_len {}",
            t, dims.max_len
        )));
    }
    let pos = binding.bind(tape, store, ids.pos);
    let mut h = tape.add_positional(x, pos)?;
    let scale = F::from_f64(1.0 / (dims.head_dim() as f64).sqrt());
    for (l, layer) in ids.layers.iter().enumerate() {
        let lora_layer = lora.map(|lo| &lo.layers[l]);
        // attention sublayer
        let g1 = binding.bind(tape, store, layer.ln1_g);
        let b1 = binding.bind(tape, store, layer.ln1_b);
        let n1 = tape.layer_norm(h, g1, b1, F::from_f64(LN_EPS))?;
        let wq = apply_lora(tape, store, binding, layer.wq, lora_layer.map(|ll| (ll.a_q, ll.b_q)))?;
        let wk = apply_lora(tape, store, binding, layer.wk, lora_layer.map(|ll| (ll.a_k, ll.b_k)))?;
        let wv = binding.bind(tape, store, layer.wv);
        let q = tape.matmul(n1, wq)?;
        let k = tape.matmul(n1, wk)?;
        let v = tape.matmul(n1, wv)?;
        let qh = tape.split_heads(q, dims.n_heads)?;
        let kh = tape.split_heads(k, dims.n_heads)?;
        let vh = tape.split_heads(v, dims.n_heads)?;
        let scores = tape.bmm(qh, kh, true)?;
        let scaled = tape.scale(scores, scale);
        let att = tape.causal_softmax(scaled)?;
        let ctx = tape.bmm(att, vh, false)?;
        let merged = tape.merge_heads(ctx, dims.n_heads)?;
        let wo = binding.bind(tape, store, layer.wo);
        let o = tape.matmul(merged, wo)?;
        h = tape.add(h, o)?;
        // feed-forward sublayer
        let g2 = binding.bind(tape, store, layer.ln2_g);
        let b2 = binding.bind(tape, store, layer.ln2_b);
        let n2 = tape.layer_norm(h, g2, b2, F::from_f64(LN_EPS))?;
        let f1 = crate::params::linear_forward(tape, store, binding, layer.ffn1, n2)?;
        let a1 = tape.gelu(f1);
        let f2 = crate::params::linear_forward(tape, store, binding, layer.ffn2, a1)?;
        h = tape.add(h, f2)?;
    }
    let gf = binding.bind(tape, store, ids.lnf_g);
    let bf = binding.bind(tape, store, ids.lnf_b);
    tape.layer_norm(h, gf, bf, F::from_f64(LN_EPS))
}

/// Last-position output vector `[B, D]` of the stack (the task feature).
pub fn backbone_last_position<F: Real>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    binding: &mut Binding,
    ids: &BackboneIds,
    lora: Option<&LoraIds>,
    dims: &ModelDims,
    x: NodeId,
) -> Result<NodeId> {
    let seq = backbone_forward(tape, store, binding, ids, lora, dims, x)?;
    tape.slice_last_row(seq)
}

/// Next-token logits via weight tying: `[B*T, vocab]` = seq @ embed^T.
pub fn lm_logits<F: Real>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    binding: &mut Binding,
    ids: &BackboneIds,
    seq: NodeId,
) -> Result<NodeId> {
    let embed = binding.bind(tape, store, ids.embed);
    tape.matmul_trans_b(seq, embed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::domain;

    fn tiny_dims() -> ModelDims {
        ModelDims {
            env_dim: 260,
            csi_dim: 128,
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

    fn setup(with_lora: bool) -> (ParamStore<f64>, BackboneIds, Option<LoraIds>, ModelDims) {
        let dims = tiny_dims();
        let mut store = ParamStore::new();
        let mut rng = SplitMix64::stream(41, &[domain::INIT, 2]);
        let ids = init_backbone(&mut store, &dims, &mut rng).unwrap();
        let lora = with_lora.then(|| init_lora(&mut store, &dims, &mut rng).unwrap());
        (store, ids, lora, dims)
    }

    fn run_forward(
        store: &ParamStore<f64>,
        ids: &BackboneIds,
        lora: Option<&LoraIds>,
        dims: &ModelDims,
        x: &Tensor<f64>,
    ) -> Tensor<f64> {
        let mut tape = Tape::new();
        let mut binding = Binding::new();
        let xn = tape.constant(x.clone());
        let out = backbone_last_position(&mut tape, store, &mut binding, ids, lora, dims, xn).unwrap();
        tape.value(out).clone()
    }

    #[test]
    fn lora_b_zero_is_bitwise_identical_to_no_lora() {
        let (store, ids, lora, dims) = setup(true);
        let mut rng = SplitMix64::new(77);
        let x = Tensor::randn(vec![3, 6, 16], 1.0, &mut rng);
        let with = run_forward(&store, &ids, lora.as_ref(), &dims, &x);
        let without = run_forward(&store, &ids, None, &dims, &x);
        assert_eq!(with.data(), without.data(), "B=0 must be a bitwise no-op");
    }

    #[test]
    fn lora_rank_bound_and_effective_weight() {
        let (mut store, _ids, lora, dims) = setup(true);
        let lora = lora.unwrap();
        // rank(A*B) <= r for random A, B
        let ll = lora.layers[0];
        let mut rng = SplitMix64::new(3);
        for v in store.tensor_mut(ll.b_q).data_mut() {
            *v = rng.next_normal();
        }
        let w0 = store.find("backbone.layer0.wq").unwrap();
        let eff = lora_effective_weight(&store, w0, ll.a_q, ll.b_q).unwrap();
        // W - W0 = A*B has rank <= 2: verify every 3x3 minor-ish via svd of
        // the update through power iteration twice deflated is overkill;
        // instead check column space: every column of A*B is a combination
        // of A's 2 columns.
        let d = dims.d_model;
        let a = store.tensor(ll.a_q).data();
        let upd: Vec<f64> = eff
            .data()
            .iter()
            .zip(store.tensor(w0).data())
            .map(|(w, w0)| w - w0)
            .collect();
        // solve per column j: upd[:,j] = a * coef (2-dim least squares, exact)
        for j in 0..d {
            let col: Vec<f64> = (0..d).map(|i| upd[i * d + j]).collect();
            // normal equations for 2 coefficients
            let (mut a00, mut a01, mut a11, mut r0, mut r1) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..d {
                let (x0, x1) = (a[i * 2], a[i * 2 + 1]);
                a00 += x0 * x0;
                a01 += x0 * x1;
                a11 += x1 * x1;
                r0 += x0 * col[i];
                r1 += x1 * col[i];
            }
            let det = a00 * a11 - a01 * a01;
            let c0 = (r0 * a11 - r1 * a01) / det;
            let c1 = (a00 * r1 - a01 * r0) / det;
            for i in 0..d {
                let fit = a[i * 2] * c0 + a[i * 2 + 1] * c1;
                assert!((fit - col[i]).abs() < 1e-9, "update not rank-{}", dims.lora_rank);
            }
        }
    }

    #[test]
    fn invalid_lora_rank_is_config_error() {
        let mut dims = tiny_dims();
        dims.lora_rank = 16; // == d_model
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut rng = SplitMix64::new(1);
        assert!(init_lora(&mut store, &dims, &mut rng).is_err());
    }

    #[test]
    fn single_token_attention_is_value_path() {
        // with one token, softmax over one key = 1, so attention output is
        // exactly that token's value projection
        let (store, ids, _lora, dims) = setup(false);
        let mut rng = SplitMix64::new(13);
        let x = Tensor::randn(vec![2, 1, 16], 1.0, &mut rng);
        // reproduce layer 0 attention by hand
        let mut tape = Tape::new();
        let mut binding = Binding::new();
        let xn = tape.constant(x.clone());
        let pos = binding.bind(&mut tape, &store, ids.pos);
        let h = tape.add_positional(xn, pos).unwrap();
        let l = &ids.layers[0];
        let g1 = binding.bind(&mut tape, &store, l.ln1_g);
        let b1 = binding.bind(&mut tape, &store, l.ln1_b);
        let n1 = tape.layer_norm(h, g1, b1, 1e-5).unwrap();
        let wv = binding.bind(&mut tape, &store, l.wv);
        let v = tape.matmul(n1, wv).unwrap();
        // full attention path
        let wq = binding.bind(&mut tape, &store, l.wq);
        let wk = binding.bind(&mut tape, &store, l.wk);
        let q = tape.matmul(n1, wq).unwrap();
        let k = tape.matmul(n1, wk).unwrap();
        let qh = tape.split_heads(q, dims.n_heads).unwrap();
        let kh = tape.split_heads(k, dims.n_heads).unwrap();
        let vh = tape.split_heads(v, dims.n_heads).unwrap();
        let scores = tape.bmm(qh, kh, true).unwrap();
        let att = tape.causal_softmax(scores).unwrap();
        let ctx = tape.bmm(att, vh, false).unwrap();
        let merged = tape.merge_heads(ctx, dims.n_heads).unwrap();
        let diff: f64 = tape
            .value(merged)
            .data()
            .iter()
            .zip(tape.value(v).data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-12, "single-token attention must pass values through, diff {diff}");
    }

    #[test]
    fn output_depends_only_on_earlier_positions() {
        let (store, ids, _lora, dims) = setup(false);
        let mut rng = SplitMix64::new(14);
        let x = Tensor::randn(vec![1, 5, 16], 1.0, &mut rng);
        // output at position k read via the full sequence
        let seq_out = |x: &Tensor<f64>| -> Tensor<f64> {
            let mut tape = Tape::new();
            let mut binding = Binding::new();
            let xn = tape.constant(x.clone());
            let out =
                backbone_forward(&mut tape, &store, &mut binding, &ids, None, &dims, xn).unwrap();
            tape.value(out).clone()
        };
        let base = seq_out(&x);
        // perturb position 4; outputs at positions 0..=3 must not move
        let mut x2 = x.clone();
        for j in 0..16 {
            x2.data_mut()[4 * 16 + j] += 1.5;
        }
        let pert = seq_out(&x2);
        for t in 0..4 {
            for j in 0..16 {
                assert_eq!(
                    base.data()[t * 16 + j],
                    pert.data()[t * 16 + j],
                    "causality violated at position {t}"
                );
            }
        }
        // and the perturbed position itself does change
        assert!(base.data()[4 * 16..].iter().zip(&pert.data()[4 * 16..]).any(|(a, b)| a != b));
    }

    #[test]
    fn permuting_rows_changes_output() {
        // positional embeddings make the forward order-sensitive
        let (store, ids, _lora, dims) = setup(false);
        let mut rng = SplitMix64::new(15);
        let x = Tensor::randn(vec![1, 4, 16], 1.0, &mut rng);
        let mut swapped = x.clone();
        for j in 0..16 {
            let a = swapped.data()[16 + j];
            swapped.data_mut()[16 + j] = swapped.data()[2 * 16 + j];
            swapped.data_mut()[2 * 16 + j] = a;
        }
        let a = run_forward(&store, &ids, None, &dims, &x);
        let b = run_forward(&store, &ids, None, &dims, &swapped);
        assert!(a.max_abs_diff(&b) > 1e-9, "permutation must change the output");
    }

    #[test]
    fn too_long_sequence_rejected() {
        let (store, ids, _lora, dims) = setup(false);
        let x = Tensor::<f64>::zeros(vec![1, 9, 16]);
        let mut tape = Tape::new();
        let mut binding = Binding::new();
        let xn = tape.constant(x);
        assert!(backbone_forward(&mut tape, &store, &mut binding, &ids, None, &dims, xn).is_err());
    }

    #[test]
    fn lora_gradients_flow_to_a_and_b_not_base(){
        let (mut store, ids, lora, dims) = setup(true);
        let lora = lora.unwrap();
        // make lora trainable, base frozen
        for ll in &lora.layers {
            for id in [ll.a_q, ll.b_q, ll.a_k, ll.b_k] {
                store.set_trainable(id, true);
            }
        }
        let mut rng = SplitMix64::new(16);
        let x = Tensor::randn(vec![2, 3, 16], 1.0, &mut rng);
        let mut tape = Tape::new();
        let mut binding = Binding::new();
        let xn = tape.constant(x);
        let out = backbone_last_position(&mut tape, &store, &mut binding, &ids, Some(&lora), &dims, xn)
            .unwrap();
        let loss = tape.mean_all(out);
        let grads = tape.backward(loss).unwrap();
        let find = |pid: ParamId| binding.pairs().iter().find(|(p, _)| *p == pid).map(|&(_, n)| n);
        // base wq got no gradient buffer
        let wq_node = find(ids.layers[0].wq).unwrap();
        assert!(grads.get(wq_node).is_none(), "frozen base weight must never get a gradient");
        // lora a_q did (b_q = 0 blocks a_q's gradient through the product,
        // so check b_q instead, whose gradient is A^T * upstream)
        let bq_node = find(lora.layers[0].b_q).unwrap();
        let g = grads.get(bq_node).expect("b_q gradient");
        assert!(g.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn lora_gradient_matches_finite_differences() {
        let (store, ids, lora, dims) = setup(true);
        let lora = lora.unwrap();
        let mut rng = SplitMix64::new(17);
        let x = Tensor::randn(vec![2, 3, 16], 1.0, &mut rng);
        // check d loss / d b_q[0] for layer 0 by rebuilding the graph with a
        // perturbed store (A's gradient is zero while B = 0, so perturb B)
        let bq = lora.layers[0].b_q;
        let mut store_t = store.clone();
        store_t.set_trainable(bq, true);
        let loss_of = |s: &ParamStore<f64>| -> f64 {
            let mut tape = Tape::new();
            let mut binding = Binding::new();
            let xn = tape.constant(x.clone());
            let out = backbone_last_position(&mut tape, s, &mut binding, &ids, Some(&lora), &dims, xn)
                .unwrap();
            let l = tape.mean_all(out);
            tape.value(l).data()[0]
        };
        let mut tape = Tape::new();
        let mut binding = Binding::new();
        let xn = tape.constant(x.clone());
        let out = backbone_last_position(&mut tape, &store_t, &mut binding, &ids, Some(&lora), &dims, xn)
            .unwrap();
        let l = tape.mean_all(out);
        let grads = tape.backward(l).unwrap();
        let bq_node = binding.pairs().iter().find(|(p, _)| *p == bq).unwrap().1;
        let analytic = grads.get(bq_node).unwrap().to_vec();
        let h = 1e-6;
        for idx in [0usize, 5, 17] {
            let mut sp = store.clone();
            sp.tensor_mut(bq).data_mut()[idx] += h;
            let fp = loss_of(&sp);
            sp.tensor_mut(bq).data_mut()[idx] -= 2.0 * h;
            let fm = loss_of(&sp);
            let fd = (fp - fm) / (2.0 * h);
            let err = crate::tensor::gradcheck::rel_err(analytic[idx], fd);
            assert!(err < 1e-5, "idx {idx}: analytic {} fd {} err {err}", analytic[idx], fd);
        }
    }
}
