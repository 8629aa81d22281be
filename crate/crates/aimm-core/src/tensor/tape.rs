//! Reverse-mode autodiff over a per-step operation tape.
//!
//! The model graph is a static feed-forward DAG: a tape is built fresh for
//! each training step, `backward` walks it once in reverse, and leaf
//! gradients are read out by node id. Gradient buffers are only allocated
//! for nodes on a path to a `requires_grad` leaf, so frozen subgraphs
//! (encoders, backbone base weights) cost nothing in the backward pass.
//!
//! Matrix-like ops treat the last axis as columns and all leading axes,
//! flattened, as rows; `[B, T, D]` therefore flows through `MatMul`,
//! `AddBias`, `LayerNorm` etc. without reshape noise.

use super::kernels;
use super::{Real, Tensor};
use crate::error::{Error, Result};

pub type NodeId = usize;

enum Op<F: Real> {
    Leaf,
    /// a[..,k] * b[k,n]
    MatMul { a: NodeId, b: NodeId },
    /// a[..,k] * b[n,k]^T
    MatMulTransB { a: NodeId, b: NodeId },
    /// a[nb,m,k] * b[nb,k,n] (or b[nb,n,k] with trans_b)
    Bmm { a: NodeId, b: NodeId, trans_b: bool },
    Add { a: NodeId, b: NodeId },
    /// bias broadcast over the last axis
    AddBias { a: NodeId, bias: NodeId },
    Scale { a: NodeId, factor: F },
    /// multiply by a 1-element tensor node
    MulScalar { a: NodeId, s: NodeId },
    Exp { a: NodeId },
    Gelu { a: NodeId },
    /// 2-D transpose
    Transpose { a: NodeId },
    Reshape { a: NodeId },
    /// rows scaled to unit L2 norm (eps-guarded)
    RowL2Norm { a: NodeId },
    LayerNorm { a: NodeId, gain: NodeId, bias: NodeId, eps: F },
    SoftmaxRows { a: NodeId },
    /// softmax over the valid causal prefix of each row of [.., T, T]
    CausalSoftmax { a: NodeId },
    /// out[r,:] = table[ids[r],:]
    Gather { table: NodeId, ids: Vec<usize> },
    /// [ra,c] ++ [rb,c] -> [ra+rb,c]
    ConcatRows { a: NodeId, b: NodeId },
    /// modality [B,D] + instr [Ti,D] -> [B,1+Ti,D] (instr broadcast over batch)
    AssembleSeq { modality: NodeId, instr: Option<NodeId> },
    /// [B,T,D] -> [B,D] at a fixed row
    SliceRow { a: NodeId, row: usize },
    /// x[b,t,:] += table[t,:] for t < T
    AddPositional { a: NodeId, table: NodeId },
    /// [B,T,H*dh] -> [B*H,T,dh]
    SplitHeads { a: NodeId, heads: usize },
    /// [B*H,T,dh] -> [B,T,H*dh]
    MergeHeads { a: NodeId, heads: usize },
    MeanAll { a: NodeId },
    /// mean squared error against constants
    MseLoss { pred: NodeId, target: Vec<F> },
    /// mean cross-entropy over rows with target >= 0
    CrossEntropy { logits: NodeId, targets: Vec<i64> },
    /// mean focal loss -(1-p_t)^gamma * log(p_t)
    FocalLoss { logits: NodeId, targets: Vec<i64>, gamma: F },
    /// mean (1 - SGCS) against constant complex labels, rows of 2n reals
    SgcsLoss { pred: NodeId, labels: Vec<F> },
}

struct Node<F: Real> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Gradients by node id after a backward pass.
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, id: NodeId) -> Option<&[F]> {
        self.grads.get(id).and_then(|g| g.as_deref())
    }
}

pub struct Tape<F: Real> {
    nodes: Vec<Node<F>>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::with_capacity(128) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id].value
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        self.nodes.len() - 1
    }

    fn ng(&self, id: NodeId) -> bool {
        self.nodes[id].needs_grad
    }

    // ── graph constructors ──────────────────────────────────────────────

    pub fn leaf(&mut self, t: Tensor<F>, requires_grad: bool) -> NodeId {
        self.push(t, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, t: Tensor<F>) -> NodeId {
        self.push(t, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ash, bsh) = (self.nodes[a].value.shape(), self.nodes[b].value.shape());
        if bsh.len() != 2 || *ash.last().unwrap_or(&0) != bsh[0] {
            return Err(Error::Dimension(format!("matmul {:?} x {:?}", ash, bsh)));
        }
        let m = self.nodes[a].value.rows();
        let k = bsh[0];
        let n = bsh[1];
        let mut out_shape: Vec<usize> = ash[..ash.len() - 1].to_vec();
        out_shape.push(n);
        let mut data = vec![F::zero(); m * n];
        kernels::mm_nn_acc(&mut data, self.nodes[a].value.data(), self.nodes[b].value.data(), m, k, n);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(out_shape, data)?, Op::MatMul { a, b }, ng))
    }

    pub fn matmul_trans_b(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ash, bsh) = (self.nodes[a].value.shape(), self.nodes[b].value.shape());
        if bsh.len() != 2 || *ash.last().unwrap_or(&0) != bsh[1] {
            return Err(Error::Dimension(format!("matmul_trans_b {:?} x {:?}", ash, bsh)));
        }
        let m = self.nodes[a].value.rows();
        let k = bsh[1];
        let n = bsh[0];
        let mut out_shape: Vec<usize> = ash[..ash.len() - 1].to_vec();
        out_shape.push(n);
        let mut data = vec![F::zero(); m * n];
        kernels::mm_nt_acc(&mut data, self.nodes[a].value.data(), self.nodes[b].value.data(), m, k, n);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(out_shape, data)?, Op::MatMulTransB { a, b }, ng))
    }

    pub fn bmm(&mut self, a: NodeId, b: NodeId, trans_b: bool) -> Result<NodeId> {
        let ash = self.nodes[a].value.shape().to_vec();
        let bsh = self.nodes[b].value.shape().to_vec();
        if ash.len() != 3 || bsh.len() != 3 || ash[0] != bsh[0] {
            return Err(Error::Dimension(format!("bmm {:?} x {:?}", ash, bsh)));
        }
        let (nb, m, k) = (ash[0], ash[1], ash[2]);
        let (bk, n) = if trans_b { (bsh[2], bsh[1]) } else { (bsh[1], bsh[2]) };
        if bk != k {
            return Err(Error::Dimension(format!("bmm inner {:?} x {:?}", ash, bsh)));
        }
        let mut data = vec![F::zero(); nb * m * n];
        {
            let ad = self.nodes[a].value.data();
            let bd = self.nodes[b].value.data();
            for i in 0..nb {
                let dst = &mut data[i * m * n..(i + 1) * m * n];
                let asl = &ad[i * m * k..(i + 1) * m * k];
                let bsl = &bd[i * k * n..(i + 1) * k * n];
                if trans_b {
                    kernels::mm_nt_acc(dst, asl, bsl, m, k, n);
                } else {
                    kernels::mm_nn_acc(dst, asl, bsl, m, k, n);
                }
            }
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(vec![nb, m, n], data)?, Op::Bmm { a, b, trans_b }, ng))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.nodes[a].value.shape() != self.nodes[b].value.shape() {
            return Err(Error::Dimension(format!(
                "add {:?} + {:?}",
                self.nodes[a].value.shape(),
                self.nodes[b].value.shape()
            )));
        }
        let data: Vec<F> = self.nodes[a]
            .value
            .data()
            .iter()
            .zip(self.nodes[b].value.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.nodes[a].value.shape().to_vec();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Add { a, b }, ng))
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let c = self.nodes[a].value.last_dim();
        if self.nodes[bias].value.shape() != [c] {
            return Err(Error::Dimension(format!(
                "add_bias {:?} + {:?}",
                self.nodes[a].value.shape(),
                self.nodes[bias].value.shape()
            )));
        }
        let bd = self.nodes[bias].value.data().to_vec();
        let data: Vec<F> = self.nodes[a]
            .value
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bd[i % c])
            .collect();
        let shape = self.nodes[a].value.shape().to_vec();
        let ng = self.ng(a) || self.ng(bias);
        Ok(self.push(Tensor::new(shape, data)?, Op::AddBias { a, bias }, ng))
    }

    pub fn scale(&mut self, a: NodeId, factor: F) -> NodeId {
        let data: Vec<F> = self.nodes[a].value.data().iter().map(|&x| x * factor).collect();
        let shape = self.nodes[a].value.shape().to_vec();
        let ng = self.ng(a);
        self.push(Tensor { shape, data }, Op::Scale { a, factor }, ng)
    }

    pub fn mul_scalar(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        if self.nodes[s].value.numel() != 1 {
            return Err(Error::Dimension("mul_scalar expects a 1-element scalar".into()));
        }
        let sv = self.nodes[s].value.data()[0];
        let data: Vec<F> = self.nodes[a].value.data().iter().map(|&x| x * sv).collect();
        let shape = self.nodes[a].value.shape().to_vec();
        let ng = self.ng(a) || self.ng(s);
        Ok(self.push(Tensor { shape, data }, Op::MulScalar { a, s }, ng))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let data: Vec<F> = self.nodes[a].value.data().iter().map(|&x| x.exp()).collect();
        let shape = self.nodes[a].value.shape().to_vec();
        let ng = self.ng(a);
        self.push(Tensor { shape, data }, Op::Exp { a }, ng)
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let data: Vec<F> =
            self.nodes[a].value.data().iter().map(|&x| kernels::gelu_val_grad(x).0).collect();
        let shape = self.nodes[a].value.shape().to_vec();
        let ng = self.ng(a);
        self.push(Tensor { shape, data }, Op::Gelu { a }, ng)
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let sh = self.nodes[a].value.shape();
        if sh.len() != 2 {
            return Err(Error::Dimension(format!("transpose expects 2-D, got {:?}", sh)));
        }
        let (r, c) = (sh[0], sh[1]);
        let src = self.nodes[a].value.data();
        let mut data = vec![F::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor::new(vec![c, r], data)?, Op::Transpose { a }, ng))
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[a].value.numel() {
            return Err(Error::Dimension(format!(
                "reshape {} elements to {:?}",
                self.nodes[a].value.numel(),
                shape
            )));
        }
        let data = self.nodes[a].value.data().to_vec();
        let ng = self.ng(a);
        Ok(self.push(Tensor::new(shape, data)?, Op::Reshape { a }, ng))
    }

    /// Rows scaled to unit L2 norm. Norms below 1e-12 are clamped, so a zero
    /// row maps to zero output with a finite, linear backward.
    pub fn row_l2_norm(&mut self, a: NodeId) -> NodeId {
        let c = self.nodes[a].value.last_dim();
        let rows = self.nodes[a].value.rows();
        let src = self.nodes[a].value.data();
        let mut data = vec![F::zero(); src.len()];
        let eps = F::from_f64(1e-12);
        for r in 0..rows {
            let s = &src[r * c..(r + 1) * c];
            let mut n2 = F::zero();
            for &v in s {
                n2 = n2 + v * v;
            }
            let n = n2.sqrt().max(eps);
            let inv = F::one() / n;
            for (d, &v) in data[r * c..(r + 1) * c].iter_mut().zip(s) {
                *d = v * inv;
            }
        }
        let shape = self.nodes[a].value.shape().to_vec();
        let ng = self.ng(a);
        self.push(Tensor { shape, data }, Op::RowL2Norm { a }, ng)
    }

    pub fn layer_norm(&mut self, a: NodeId, gain: NodeId, bias: NodeId, eps: F) -> Result<NodeId> {
        let c = self.nodes[a].value.last_dim();
        if self.nodes[gain].value.shape() != [c] || self.nodes[bias].value.shape() != [c] {
            return Err(Error::Dimension(format!(
                "layer_norm over {} cols with gain {:?} bias {:?}",
                c,
                self.nodes[gain].value.shape(),
                self.nodes[bias].value.shape()
            )));
        }
        let rows = self.nodes[a].value.rows();
        let src = self.nodes[a].value.data();
        let g = self.nodes[gain].value.data();
        let b = self.nodes[bias].value.data();
        let mut data = vec![F::zero(); src.len()];
        let cf = F::from_f64(c as f64);
        for r in 0..rows {
            let s = &src[r * c..(r + 1) * c];
            let mut mean = F::zero();
            for &v in s {
                mean = mean + v;
            }
            mean = mean / cf;
            let mut var = F::zero();
            for &v in s {
                let d = v - mean;
                var = var + d * d;
            }
            var = var / cf;
            let inv_std = F::one() / (var + eps).sqrt();
            for j in 0..c {
                let xhat = (s[j] - mean) * inv_std;
                data[r * c + j] = xhat * g[j] + b[j];
            }
        }
        let shape = self.nodes[a].value.shape().to_vec();
        let ng = self.ng(a) || self.ng(gain) || self.ng(bias);
        Ok(self.push(Tensor { shape, data }, Op::LayerNorm { a, gain, bias, eps }, ng))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let c = self.nodes[a].value.last_dim();
        let rows = self.nodes[a].value.rows();
        let mut data = vec![F::zero(); rows * c];
        kernels::softmax_rows(&mut data, self.nodes[a].value.data(), rows, c);
        let shape = self.nodes[a].value.shape().to_vec();
        let ng = self.ng(a);
        self.push(Tensor { shape, data }, Op::SoftmaxRows { a }, ng)
    }

    /// Causal softmax over `[.., T, T]`: row `r` of each `T x T` block is a
    /// softmax over its first `r+1` entries; the rest are exactly zero.
    pub fn causal_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let sh = self.nodes[a].value.shape();
        let d = sh.len();
        if d < 2 || sh[d - 1] != sh[d - 2] {
            return Err(Error::Dimension(format!("causal_softmax expects [..,T,T], got {:?}", sh)));
        }
        let t = sh[d - 1];
        let src = self.nodes[a].value.data();
        let mut data = vec![F::zero(); src.len()];
        let n_mats = src.len() / (t * t);
        for m in 0..n_mats {
            for r in 0..t {
                let off = m * t * t + r * t;
                let valid = r + 1;
                kernels::softmax_row(&mut data[off..off + valid], &src[off..off + valid]);
            }
        }
        let shape = sh.to_vec();
        let ng = self.ng(a);
        Ok(self.push(Tensor { shape, data }, Op::CausalSoftmax { a }, ng))
    }

    pub fn gather(&mut self, table: NodeId, ids: Vec<usize>) -> Result<NodeId> {
        let sh = self.nodes[table].value.shape();
        if sh.len() != 2 {
            return Err(Error::Dimension(format!("gather from non-matrix {:?}", sh)));
        }
        let (v, d) = (sh[0], sh[1]);
        let src = self.nodes[table].value.data();
        let mut data = vec![F::zero(); ids.len() * d];
        for (r, &id) in ids.iter().enumerate() {
            if id >= v {
                return Err(Error::Dimension(format!("gather index {} out of {}", id, v)));
            }
            data[r * d..(r + 1) * d].copy_from_slice(&src[id * d..(id + 1) * d]);
        }
        let ng = self.ng(table);
        let n = ids.len();
        Ok(self.push(Tensor::new(vec![n, d], data)?, Op::Gather { table, ids }, ng))
    }

    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ash, bsh) = (self.nodes[a].value.shape(), self.nodes[b].value.shape());
        if ash.len() != 2 || bsh.len() != 2 || ash[1] != bsh[1] {
            return Err(Error::Dimension(format!("concat_rows {:?} ++ {:?}", ash, bsh)));
        }
        let c = ash[1];
        let rows = ash[0] + bsh[0];
        let mut data = Vec::with_capacity(rows * c);
        data.extend_from_slice(self.nodes[a].value.data());
        data.extend_from_slice(self.nodes[b].value.data());
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(vec![rows, c], data)?, Op::ConcatRows { a, b }, ng))
    }

    /// Prepend one modality token per batch row to a shared instruction
    /// block: `[B,D]` + `[Ti,D]` -> `[B, 1+Ti, D]`.
    pub fn assemble_seq(&mut self, modality: NodeId, instr: Option<NodeId>) -> Result<NodeId> {
        let msh = self.nodes[modality].value.shape();
        if msh.len() != 2 {
            return Err(Error::Dimension(format!("assemble_seq modality {:?}", msh)));
        }
        let (bsz, d) = (msh[0], msh[1]);
        let ti = match instr {
            Some(i) => {
                let ish = self.nodes[i].value.shape();
                if ish.len() != 2 || ish[1] != d {
                    return Err(Error::Dimension(format!("assemble_seq instr {:?}", ish)));
                }
                ish[0]
            }
            None => 0,
        };
        let t = 1 + ti;
        let mut data = vec![F::zero(); bsz * t * d];
        let md = self.nodes[modality].value.data();
        for b in 0..bsz {
            data[b * t * d..b * t * d + d].copy_from_slice(&md[b * d..(b + 1) * d]);
            if let Some(i) = instr {
                let idta = self.nodes[i].value.data();
                data[b * t * d + d..(b + 1) * t * d].copy_from_slice(idta);
            }
        }
        let ng = self.ng(modality) || instr.map(|i| self.ng(i)).unwrap_or(false);
        Ok(self.push(Tensor::new(vec![bsz, t, d], data)?, Op::AssembleSeq { modality, instr }, ng))
    }

    pub fn slice_row(&mut self, a: NodeId, row: usize) -> Result<NodeId> {
        let sh = self.nodes[a].value.shape();
        if sh.len() != 3 || row >= sh[1] {
            return Err(Error::Dimension(format!("slice_row {} of {:?}", row, sh)));
        }
        let (bsz, t, d) = (sh[0], sh[1], sh[2]);
        let src = self.nodes[a].value.data();
        let mut data = vec![F::zero(); bsz * d];
        for b in 0..bsz {
            data[b * d..(b + 1) * d].copy_from_slice(&src[(b * t + row) * d..(b * t + row) * d + d]);
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor::new(vec![bsz, d], data)?, Op::SliceRow { a, row }, ng))
    }

    pub fn slice_last_row(&mut self, a: NodeId) -> Result<NodeId> {
        let t = match self.nodes[a].value.shape() {
            s if s.len() == 3 => s[1],
            s => return Err(Error::Dimension(format!("slice_last_row of {:?}", s))),
        };
        self.slice_row(a, t - 1)
    }

    pub fn add_positional(&mut self, a: NodeId, table: NodeId) -> Result<NodeId> {
        let sh = self.nodes[a].value.shape();
        let tsh = self.nodes[table].value.shape();
        if sh.len() != 3 || tsh.len() != 2 || sh[2] != tsh[1] || sh[1] > tsh[0] {
            return Err(Error::Dimension(format!("add_positional {:?} + {:?}", sh, tsh)));
        }
        let (bsz, t, d) = (sh[0], sh[1], sh[2]);
        let src = self.nodes[a].value.data();
        let pos = self.nodes[table].value.data();
        let mut data = vec![F::zero(); src.len()];
        for b in 0..bsz {
            for tt in 0..t {
                let off = (b * t + tt) * d;
                for j in 0..d {
                    data[off + j] = src[off + j] + pos[tt * d + j];
                }
            }
        }
        let shape = sh.to_vec();
        let ng = self.ng(a) || self.ng(table);
        Ok(self.push(Tensor { shape, data }, Op::AddPositional { a, table }, ng))
    }

    pub fn split_heads(&mut self, a: NodeId, heads: usize) -> Result<NodeId> {
        let sh = self.nodes[a].value.shape();
        if sh.len() != 3 || sh[2] % heads != 0 {
            return Err(Error::Dimension(format!("split_heads {:?} into {}", sh, heads)));
        }
        let (bsz, t, d) = (sh[0], sh[1], sh[2]);
        let dh = d / heads;
        let src = self.nodes[a].value.data();
        let mut data = vec![F::zero(); src.len()];
        for b in 0..bsz {
            for h in 0..heads {
                for tt in 0..t {
                    let dst_off = (((b * heads + h) * t) + tt) * dh;
                    let src_off = (b * t + tt) * d + h * dh;
                    data[dst_off..dst_off + dh].copy_from_slice(&src[src_off..src_off + dh]);
                }
            }
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor::new(vec![bsz * heads, t, dh], data)?, Op::SplitHeads { a, heads }, ng))
    }

    pub fn merge_heads(&mut self, a: NodeId, heads: usize) -> Result<NodeId> {
        let sh = self.nodes[a].value.shape();
        if sh.len() != 3 || sh[0] % heads != 0 {
            return Err(Error::Dimension(format!("merge_heads {:?} from {}", sh, heads)));
        }
        let (bh, t, dh) = (sh[0], sh[1], sh[2]);
        let bsz = bh / heads;
        let d = dh * heads;
        let src = self.nodes[a].value.data();
        let mut data = vec![F::zero(); src.len()];
        for b in 0..bsz {
            for h in 0..heads {
                for tt in 0..t {
                    let src_off = (((b * heads + h) * t) + tt) * dh;
                    let dst_off = (b * t + tt) * d + h * dh;
                    data[dst_off..dst_off + dh].copy_from_slice(&src[src_off..src_off + dh]);
                }
            }
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor::new(vec![bsz, t, d], data)?, Op::MergeHeads { a, heads }, ng))
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.nodes[a].value.numel();
        let mut s = F::zero();
        for &v in self.nodes[a].value.data() {
            s = s + v;
        }
        let mean = s / F::from_f64(n as f64);
        let ng = self.ng(a);
        self.push(Tensor::scalar(mean), Op::MeanAll { a }, ng)
    }

    pub fn mse_loss(&mut self, pred: NodeId, target: Vec<F>) -> Result<NodeId> {
        if self.nodes[pred].value.numel() != target.len() {
            return Err(Error::Dimension(format!(
                "mse_loss pred {} vs target {}",
                self.nodes[pred].value.numel(),
                target.len()
            )));
        }
        let mut s = F::zero();
        for (&p, &t) in self.nodes[pred].value.data().iter().zip(&target) {
            let d = p - t;
            s = s + d * d;
        }
        let v = s / F::from_f64(target.len() as f64);
        let ng = self.ng(pred);
        Ok(self.push(Tensor::scalar(v), Op::MseLoss { pred, target }, ng))
    }

    /// Mean cross-entropy over rows whose target id is >= 0.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: Vec<i64>) -> Result<NodeId> {
        let c = self.nodes[logits].value.last_dim();
        let rows = self.nodes[logits].value.rows();
        if targets.len() != rows {
            return Err(Error::Dimension(format!("cross_entropy {} rows vs {} targets", rows, targets.len())));
        }
        let src = self.nodes[logits].value.data();
        let mut total = F::zero();
        let mut n_valid = 0usize;
        for (r, &t) in targets.iter().enumerate() {
            if t < 0 {
                continue;
            }
            let row = &src[r * c..(r + 1) * c];
            let lse = kernels::logsumexp_row(row);
            total = total + (lse - row[t as usize]);
            n_valid += 1;
        }
        if n_valid == 0 {
            return Err(Error::Batch("cross_entropy with no valid targets".into()));
        }
        let v = total / F::from_f64(n_valid as f64);
        let ng = self.ng(logits);
        Ok(self.push(Tensor::scalar(v), Op::CrossEntropy { logits, targets }, ng))
    }

    /// Mean focal loss with the given gamma; gamma = 0 reduces exactly to
    /// cross-entropy.
    pub fn focal_loss(&mut self, logits: NodeId, targets: Vec<i64>, gamma: F) -> Result<NodeId> {
        let c = self.nodes[logits].value.last_dim();
        let rows = self.nodes[logits].value.rows();
        if targets.len() != rows {
            return Err(Error::Dimension(format!("focal_loss {} rows vs {} targets", rows, targets.len())));
        }
        let src = self.nodes[logits].value.data();
        let mut total = F::zero();
        let mut n_valid = 0usize;
        let tiny = F::from_f64(1e-30);
        for (r, &t) in targets.iter().enumerate() {
            if t < 0 {
                continue;
            }
            let row = &src[r * c..(r + 1) * c];
            let lse = kernels::logsumexp_row(row);
            let log_pt = row[t as usize] - lse;
            let pt = log_pt.exp().max(tiny);
            let w = (F::one() - pt).powf(gamma);
            total = total - w * log_pt;
            n_valid += 1;
        }
        if n_valid == 0 {
            return Err(Error::Batch("focal_loss with no valid targets".into()));
        }
        let v = total / F::from_f64(n_valid as f64);
        let ng = self.ng(logits);
        Ok(self.push(Tensor::scalar(v), Op::FocalLoss { logits, targets, gamma }, ng))
    }

    /// Mean of 1 - SGCS(pred_row, label_row) over rows of 2n interleaved
    /// (re, im) reals. A zero-norm prediction contributes loss 1 with zero
    /// gradient (degenerate case).
    pub fn sgcs_loss(&mut self, pred: NodeId, labels: Vec<F>) -> Result<NodeId> {
        let c = self.nodes[pred].value.last_dim();
        let rows = self.nodes[pred].value.rows();
        if c % 2 != 0 || labels.len() != rows * c {
            return Err(Error::Dimension(format!(
                "sgcs_loss rows {} x {} vs labels {}",
                rows,
                c,
                labels.len()
            )));
        }
        let src = self.nodes[pred].value.data();
        let mut total = F::zero();
        for r in 0..rows {
            let p = &src[r * c..(r + 1) * c];
            let w = &labels[r * c..(r + 1) * c];
            total = total + (F::one() - sgcs_row(p, w));
        }
        let v = total / F::from_f64(rows as f64);
        let ng = self.ng(pred);
        Ok(self.push(Tensor::scalar(v), Op::SgcsLoss { pred, labels }, ng))
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse-mode sweep from a scalar loss node. Returns per-node
    /// gradients; only nodes on a path to a `requires_grad` leaf get one.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<F>> {
        if self.nodes[loss].value.numel() != 1 {
            return Err(Error::Dimension("backward expects a scalar loss".into()));
        }
        let mut grads: Vec<Option<Vec<F>>> = vec![None; self.nodes.len()];
        if !self.nodes[loss].needs_grad {
            return Ok(Gradients { grads });
        }
        grads[loss] = Some(vec![F::one()]);
        for id in (0..=loss).rev() {
            if grads[id].is_none() || !self.nodes[id].needs_grad {
                continue;
            }
            let g = grads[id].take().unwrap();
            self.backprop_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accum(&self, grads: &mut [Option<Vec<F>>], id: NodeId, delta: &[F]) {
        if !self.nodes[id].needs_grad {
            return;
        }
        let slot = &mut grads[id];
        match slot {
            Some(g) => {
                for (a, &d) in g.iter_mut().zip(delta) {
                    *a = *a + d;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    fn accum_buf<'a>(&self, grads: &'a mut [Option<Vec<F>>], id: NodeId) -> Option<&'a mut Vec<F>> {
        if !self.nodes[id].needs_grad {
            return None;
        }
        if grads[id].is_none() {
            grads[id] = Some(vec![F::zero(); self.nodes[id].value.numel()]);
        }
        grads[id].as_mut()
    }

    #[allow(clippy::too_many_lines)]
    fn backprop_node(&self, id: NodeId, g: &[F], grads: &mut Vec<Option<Vec<F>>>) {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (a, b) = (*a, *b);
                let m = self.nodes[a].value.rows();
                let k = self.nodes[a].value.last_dim();
                let n = self.nodes[b].value.shape()[1];
                let ad = self.nodes[a].value.data().to_vec();
                let bd = self.nodes[b].value.data().to_vec();
                if let Some(ga) = self.accum_buf(grads, a) {
                    kernels::mm_nt_acc(ga, g, &bd, m, n, k);
                }
                if let Some(gb) = self.accum_buf(grads, b) {
                    kernels::mm_tn_acc(gb, &ad, g, m, k, n);
                }
            }
            Op::MatMulTransB { a, b } => {
                let (a, b) = (*a, *b);
                let m = self.nodes[a].value.rows();
                let k = self.nodes[a].value.last_dim();
                let n = self.nodes[b].value.shape()[0];
                let ad = self.nodes[a].value.data().to_vec();
                let bd = self.nodes[b].value.data().to_vec();
                if let Some(ga) = self.accum_buf(grads, a) {
                    kernels::mm_nn_acc(ga, g, &bd, m, n, k);
                }
                if let Some(gb) = self.accum_buf(grads, b) {
                    kernels::mm_tn_acc(gb, g, &ad, m, n, k);
                }
            }
            Op::Bmm { a, b, trans_b } => {
                let (a, b, trans_b) = (*a, *b, *trans_b);
                let ash = self.nodes[a].value.shape().to_vec();
                let (nb, m, k) = (ash[0], ash[1], ash[2]);
                let n = self.nodes[id].value.shape()[2];
                let ad = self.nodes[a].value.data().to_vec();
                let bd = self.nodes[b].value.data().to_vec();
                if let Some(ga) = self.accum_buf(grads, a) {
                    for i in 0..nb {
                        let gsl = &g[i * m * n..(i + 1) * m * n];
                        let gasl = &mut ga[i * m * k..(i + 1) * m * k];
                        if trans_b {
                            // c = a * b^T => da = g * b
                            kernels::mm_nn_acc(gasl, gsl, &bd[i * n * k..(i + 1) * n * k], m, n, k);
                        } else {
                            // da = g * b^T
                            kernels::mm_nt_acc(gasl, gsl, &bd[i * k * n..(i + 1) * k * n], m, n, k);
                        }
                    }
                }
                if let Some(gb) = self.accum_buf(grads, b) {
                    for i in 0..nb {
                        let gsl = &g[i * m * n..(i + 1) * m * n];
                        let asl = &ad[i * m * k..(i + 1) * m * k];
                        if trans_b {
                            // db = g^T * a  ([n,m]x[m,k] -> [n,k])
                            kernels::mm_tn_acc(&mut gb[i * n * k..(i + 1) * n * k], gsl, asl, m, n, k);
                        } else {
                            // db = a^T * g  ([k,m]x[m,n] -> [k,n])
                            kernels::mm_tn_acc(&mut gb[i * k * n..(i + 1) * k * n], asl, gsl, m, k, n);
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                self.accum(grads, a, g);
                self.accum(grads, b, g);
            }
            Op::AddBias { a, bias } => {
                let (a, bias) = (*a, *bias);
                self.accum(grads, a, g);
                let c = self.nodes[bias].value.numel();
                if let Some(gb) = self.accum_buf(grads, bias) {
                    for (i, &gv) in g.iter().enumerate() {
                        gb[i % c] = gb[i % c] + gv;
                    }
                }
            }
            Op::Scale { a, factor } => {
                let (a, factor) = (*a, *factor);
                if let Some(ga) = self.accum_buf(grads, a) {
                    for (d, &gv) in ga.iter_mut().zip(g) {
                        *d = *d + gv * factor;
                    }
                }
            }
            Op::MulScalar { a, s } => {
                let (a, s) = (*a, *s);
                let sv = self.nodes[s].value.data()[0];
                let ad = self.nodes[a].value.data().to_vec();
                if let Some(ga) = self.accum_buf(grads, a) {
                    for (d, &gv) in ga.iter_mut().zip(g) {
                        *d = *d + gv * sv;
                    }
                }
                if let Some(gs) = self.accum_buf(grads, s) {
                    let mut acc = F::zero();
                    for (&gv, &av) in g.iter().zip(&ad) {
                        acc = acc + gv * av;
                    }
                    gs[0] = gs[0] + acc;
                }
            }
            Op::Exp { a } => {
                let a = *a;
                let out = self.nodes[id].value.data().to_vec();
                if let Some(ga) = self.accum_buf(grads, a) {
                    for ((d, &gv), &ov) in ga.iter_mut().zip(g).zip(&out) {
                        *d = *d + gv * ov;
                    }
                }
            }
            Op::Gelu { a } => {
                let a = *a;
                let src = self.nodes[a].value.data().to_vec();
                if let Some(ga) = self.accum_buf(grads, a) {
                    for ((d, &gv), &x) in ga.iter_mut().zip(g).zip(&src) {
                        *d = *d + gv * kernels::gelu_val_grad(x).1;
                    }
                }
            }
            Op::Transpose { a } => {
                let a = *a;
                let (r, c) = {
                    let s = self.nodes[a].value.shape();
                    (s[0], s[1])
                };
                if let Some(ga) = self.accum_buf(grads, a) {
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] = ga[i * c + j] + g[j * r + i];
                        }
                    }
                }
            }
            Op::Reshape { a } => {
                self.accum(grads, *a, g);
            }
            Op::RowL2Norm { a } => {
                let a = *a;
                let c = self.nodes[a].value.last_dim();
                let rows = self.nodes[a].value.rows();
                let src = self.nodes[a].value.data().to_vec();
                let out = self.nodes[id].value.data().to_vec();
                let eps = F::from_f64(1e-12);
                if let Some(ga) = self.accum_buf(grads, a) {
                    for r in 0..rows {
                        let x = &src[r * c..(r + 1) * c];
                        let y = &out[r * c..(r + 1) * c];
                        let gr = &g[r * c..(r + 1) * c];
                        let mut n2 = F::zero();
                        for &v in x {
                            n2 = n2 + v * v;
                        }
                        let n = n2.sqrt().max(eps);
                        let mut dot = F::zero();
                        for (&gv, &yv) in gr.iter().zip(y) {
                            dot = dot + gv * yv;
                        }
                        for j in 0..c {
                            ga[r * c + j] = ga[r * c + j] + (gr[j] - y[j] * dot) / n;
                        }
                    }
                }
            }
            Op::LayerNorm { a, gain, bias, eps } => {
                let (a, gain, bias, eps) = (*a, *gain, *bias, *eps);
                let c = self.nodes[a].value.last_dim();
                let rows = self.nodes[a].value.rows();
                let src = self.nodes[a].value.data().to_vec();
                let gn = self.nodes[gain].value.data().to_vec();
                let cf = F::from_f64(c as f64);
                // recompute per-row stats
                let mut xhat = vec![F::zero(); src.len()];
                let mut inv_std = vec![F::zero(); rows];
                for r in 0..rows {
                    let s = &src[r * c..(r + 1) * c];
                    let mut mean = F::zero();
                    for &v in s {
                        mean = mean + v;
                    }
                    mean = mean / cf;
                    let mut var = F::zero();
                    for &v in s {
                        let d = v - mean;
                        var = var + d * d;
                    }
                    var = var / cf;
                    let is = F::one() / (var + eps).sqrt();
                    inv_std[r] = is;
                    for j in 0..c {
                        xhat[r * c + j] = (s[j] - mean) * is;
                    }
                }
                if let Some(gg) = self.accum_buf(grads, gain) {
                    for r in 0..rows {
                        for j in 0..c {
                            gg[j] = gg[j] + g[r * c + j] * xhat[r * c + j];
                        }
                    }
                }
                if let Some(gb) = self.accum_buf(grads, bias) {
                    for r in 0..rows {
                        for j in 0..c {
                            gb[j] = gb[j] + g[r * c + j];
                        }
                    }
                }
                if let Some(ga) = self.accum_buf(grads, a) {
                    for r in 0..rows {
                        let mut mean_dxhat = F::zero();
                        let mut mean_dxhat_xhat = F::zero();
                        for j in 0..c {
                            let dxh = g[r * c + j] * gn[j];
                            mean_dxhat = mean_dxhat + dxh;
                            mean_dxhat_xhat = mean_dxhat_xhat + dxh * xhat[r * c + j];
                        }
                        mean_dxhat = mean_dxhat / cf;
                        mean_dxhat_xhat = mean_dxhat_xhat / cf;
                        for j in 0..c {
                            let dxh = g[r * c + j] * gn[j];
                            let d = (dxh - mean_dxhat - xhat[r * c + j] * mean_dxhat_xhat) * inv_std[r];
                            ga[r * c + j] = ga[r * c + j] + d;
                        }
                    }
                }
            }
            Op::SoftmaxRows { a } => {
                let a = *a;
                let c = self.nodes[a].value.last_dim();
                let rows = self.nodes[a].value.rows();
                let out = self.nodes[id].value.data().to_vec();
                if let Some(ga) = self.accum_buf(grads, a) {
                    for r in 0..rows {
                        let y = &out[r * c..(r + 1) * c];
                        let gr = &g[r * c..(r + 1) * c];
                        let mut dot = F::zero();
                        for (&gv, &yv) in gr.iter().zip(y) {
                            dot = dot + gv * yv;
                        }
                        for j in 0..c {
                            ga[r * c + j] = ga[r * c + j] + (gr[j] - dot) * y[j];
                        }
                    }
                }
            }
            Op::CausalSoftmax { a } => {
                let a = *a;
                let sh = self.nodes[a].value.shape();
                let t = sh[sh.len() - 1];
                let n_mats = self.nodes[a].value.numel() / (t * t);
                let out = self.nodes[id].value.data().to_vec();
                if let Some(ga) = self.accum_buf(grads, a) {
                    for m in 0..n_mats {
                        for r in 0..t {
                            let off = m * t * t + r * t;
                            let valid = r + 1;
                            let y = &out[off..off + valid];
                            let gr = &g[off..off + valid];
                            let mut dot = F::zero();
                            for (&gv, &yv) in gr.iter().zip(y) {
                                dot = dot + gv * yv;
                            }
                            for j in 0..valid {
                                ga[off + j] = ga[off + j] + (gr[j] - dot) * y[j];
                            }
                        }
                    }
                }
            }
            Op::Gather { table, ids } => {
                let table = *table;
                let d = self.nodes[table].value.shape()[1];
                let ids = ids.clone();
                if let Some(gt) = self.accum_buf(grads, table) {
                    for (r, &tid) in ids.iter().enumerate() {
                        for j in 0..d {
                            gt[tid * d + j] = gt[tid * d + j] + g[r * d + j];
                        }
                    }
                }
            }
            Op::ConcatRows { a, b } => {
                let (a, b) = (*a, *b);
                let na = self.nodes[a].value.numel();
                self.accum(grads, a, &g[..na]);
                self.accum(grads, b, &g[na..]);
            }
            Op::AssembleSeq { modality, instr } => {
                let (modality, instr) = (*modality, *instr);
                let msh = self.nodes[modality].value.shape();
                let (bsz, d) = (msh[0], msh[1]);
                let t = self.nodes[id].value.shape()[1];
                if let Some(gm) = self.accum_buf(grads, modality) {
                    for b in 0..bsz {
                        for j in 0..d {
                            gm[b * d + j] = gm[b * d + j] + g[b * t * d + j];
                        }
                    }
                }
                if let Some(i) = instr {
                    if let Some(gi) = self.accum_buf(grads, i) {
                        for b in 0..bsz {
                            for r in 1..t {
                                for j in 0..d {
                                    gi[(r - 1) * d + j] = gi[(r - 1) * d + j] + g[(b * t + r) * d + j];
                                }
                            }
                        }
                    }
                }
            }
            Op::SliceRow { a, row } => {
                let (a, row) = (*a, *row);
                let sh = self.nodes[a].value.shape();
                let (bsz, t, d) = (sh[0], sh[1], sh[2]);
                if let Some(ga) = self.accum_buf(grads, a) {
                    for b in 0..bsz {
                        for j in 0..d {
                            ga[(b * t + row) * d + j] = ga[(b * t + row) * d + j] + g[b * d + j];
                        }
                    }
                }
            }
            Op::AddPositional { a, table } => {
                let (a, table) = (*a, *table);
                let sh = self.nodes[a].value.shape();
                let (bsz, t, d) = (sh[0], sh[1], sh[2]);
                self.accum(grads, a, g);
                if let Some(gt) = self.accum_buf(grads, table) {
                    for b in 0..bsz {
                        for tt in 0..t {
                            for j in 0..d {
                                gt[tt * d + j] = gt[tt * d + j] + g[(b * t + tt) * d + j];
                            }
                        }
                    }
                }
            }
            Op::SplitHeads { a, heads } => {
                let (a, heads) = (*a, *heads);
                let sh = self.nodes[a].value.shape();
                let (bsz, t, d) = (sh[0], sh[1], sh[2]);
                let dh = d / heads;
                if let Some(ga) = self.accum_buf(grads, a) {
                    for b in 0..bsz {
                        for h in 0..heads {
                            for tt in 0..t {
                                let src_off = (((b * heads + h) * t) + tt) * dh;
                                let dst_off = (b * t + tt) * d + h * dh;
                                for j in 0..dh {
                                    ga[dst_off + j] = ga[dst_off + j] + g[src_off + j];
                                }
                            }
                        }
                    }
                }
            }
            Op::MergeHeads { a, heads } => {
                let (a, heads) = (*a, *heads);
                let sh = self.nodes[a].value.shape();
                let (bh, t, dh) = (sh[0], sh[1], sh[2]);
                let bsz = bh / heads;
                let d = dh * heads;
                if let Some(ga) = self.accum_buf(grads, a) {
                    for b in 0..bsz {
                        for h in 0..heads {
                            for tt in 0..t {
                                let dst_off = (((b * heads + h) * t) + tt) * dh;
                                let src_off = (b * t + tt) * d + h * dh;
                                for j in 0..dh {
                                    ga[dst_off + j] = ga[dst_off + j] + g[src_off + j];
                                }
                            }
                        }
                    }
                }
            }
            Op::MeanAll { a } => {
                let a = *a;
                let n = self.nodes[a].value.numel();
                let gv = g[0] / F::from_f64(n as f64);
                if let Some(ga) = self.accum_buf(grads, a) {
                    for d in ga.iter_mut() {
                        *d = *d + gv;
                    }
                }
            }
            Op::MseLoss { pred, target } => {
                let pred = *pred;
                let n = target.len();
                let target = target.clone();
                let pd = self.nodes[pred].value.data().to_vec();
                let scale = g[0] * F::from_f64(2.0 / n as f64);
                if let Some(gp) = self.accum_buf(grads, pred) {
                    for ((d, &p), &t) in gp.iter_mut().zip(&pd).zip(&target) {
                        *d = *d + scale * (p - t);
                    }
                }
            }
            Op::CrossEntropy { logits, targets } => {
                let logits = *logits;
                let c = self.nodes[logits].value.last_dim();
                let src = self.nodes[logits].value.data().to_vec();
                let targets = targets.clone();
                let n_valid = targets.iter().filter(|&&t| t >= 0).count();
                let scale = g[0] / F::from_f64(n_valid as f64);
                if let Some(gl) = self.accum_buf(grads, logits) {
                    let mut prob = vec![F::zero(); c];
                    for (r, &t) in targets.iter().enumerate() {
                        if t < 0 {
                            continue;
                        }
                        kernels::softmax_row(&mut prob, &src[r * c..(r + 1) * c]);
                        for j in 0..c {
                            let onehot = if j == t as usize { F::one() } else { F::zero() };
                            gl[r * c + j] = gl[r * c + j] + scale * (prob[j] - onehot);
                        }
                    }
                }
            }
            Op::FocalLoss { logits, targets, gamma } => {
                let (logits, gamma) = (*logits, *gamma);
                let c = self.nodes[logits].value.last_dim();
                let src = self.nodes[logits].value.data().to_vec();
                let targets = targets.clone();
                let n_valid = targets.iter().filter(|&&t| t >= 0).count();
                let scale = g[0] / F::from_f64(n_valid as f64);
                let tiny = F::from_f64(1e-30);
                if let Some(gl) = self.accum_buf(grads, logits) {
                    let mut prob = vec![F::zero(); c];
                    for (r, &t) in targets.iter().enumerate() {
                        if t < 0 {
                            continue;
                        }
                        let row = &src[r * c..(r + 1) * c];
                        kernels::softmax_row(&mut prob, row);
                        let ti = t as usize;
                        let pt = prob[ti].max(tiny);
                        let one_m = F::one() - pt;
                        // dL/dpt; the gamma term vanishes identically at gamma = 0
                        let dl_dpt = if gamma == F::zero() {
                            -(F::one() / pt)
                        } else {
                            gamma * one_m.powf(gamma - F::one()) * pt.ln() - one_m.powf(gamma) / pt
                        };
                        for j in 0..c {
                            let delta = if j == ti { F::one() } else { F::zero() };
                            let dpt_dzj = pt * (delta - prob[j]);
                            gl[r * c + j] = gl[r * c + j] + scale * dl_dpt * dpt_dzj;
                        }
                    }
                }
            }
            Op::SgcsLoss { pred, labels } => {
                let pred = *pred;
                let c = self.nodes[pred].value.last_dim();
                let rows = self.nodes[pred].value.rows();
                let src = self.nodes[pred].value.data().to_vec();
                let labels = labels.clone();
                let scale = g[0] / F::from_f64(rows as f64);
                let tiny = F::from_f64(1e-24);
                if let Some(gp) = self.accum_buf(grads, pred) {
                    let n = c / 2;
                    for r in 0..rows {
                        let p = &src[r * c..(r + 1) * c];
                        let w = &labels[r * c..(r + 1) * c];
                        let mut sr = F::zero();
                        let mut si = F::zero();
                        let mut n2 = F::zero();
                        let mut w2 = F::zero();
                        for k in 0..n {
                            let (x, y) = (p[2 * k], p[2 * k + 1]);
                            let (wr, wi) = (w[2 * k], w[2 * k + 1]);
                            sr = sr + x * wr + y * wi;
                            si = si + x * wi - y * wr;
                            n2 = n2 + x * x + y * y;
                            w2 = w2 + wr * wr + wi * wi;
                        }
                        if n2 < tiny || w2 < tiny {
                            continue; // degenerate: loss 1, zero gradient
                        }
                        let s2 = sr * sr + si * si;
                        let denom = n2 * w2;
                        for k in 0..n {
                            let (x, y) = (p[2 * k], p[2 * k + 1]);
                            let (wr, wi) = (w[2 * k], w[2 * k + 1]);
                            let two = F::from_f64(2.0);
                            let ds2_dx = two * (sr * wr + si * wi);
                            let ds2_dy = two * (sr * wi - si * wr);
                            let dn2_dx = two * x;
                            let dn2_dy = two * y;
                            // d(1 - s2/(n2*w2))
                            let dx = -(ds2_dx * n2 - s2 * dn2_dx) / (denom * n2);
                            let dy = -(ds2_dy * n2 - s2 * dn2_dy) / (denom * n2);
                            gp[r * c + 2 * k] = gp[r * c + 2 * k] + scale * dx;
                            gp[r * c + 2 * k + 1] = gp[r * c + 2 * k + 1] + scale * dy;
                        }
                    }
                }
            }
        }
    }
}

/// SGCS of one interleaved complex row pair: |p^H w|^2 / (|p|^2 |w|^2).
/// Returns 0 when either vector has (near-)zero norm.
pub fn sgcs_row<F: Real>(p: &[F], w: &[F]) -> F {
    debug_assert_eq!(p.len(), w.len());
    debug_assert_eq!(p.len() % 2, 0);
    let n = p.len() / 2;
    let mut sr = F::zero();
    let mut si = F::zero();
    let mut n2 = F::zero();
    let mut w2 = F::zero();
    for k in 0..n {
        let (x, y) = (p[2 * k], p[2 * k + 1]);
        let (wr, wi) = (w[2 * k], w[2 * k + 1]);
        sr = sr + x * wr + y * wi;
        si = si + x * wi - y * wr;
        n2 = n2 + x * x + y * y;
        w2 = w2 + wr * wr + wi * wi;
    }
    let tiny = F::from_f64(1e-24);
    if n2 < tiny || w2 < tiny {
        return F::zero();
    }
    (sr * sr + si * si) / (n2 * w2)
}
