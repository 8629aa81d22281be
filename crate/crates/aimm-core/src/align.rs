//! Contrastive alignment pretraining of the two modality encoders.
//!
//! Symmetric InfoNCE over in-batch (environment, channel) pairs: the B x B
//! cosine-similarity matrix, scaled by a learnable inverse temperature, is
//! scored against the identity matching with cross-entropy in both
//! directions.

use crate::dataset::Dataset;
use crate::encoder::{encoder_forward, init_encoders, EncoderInit};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::params::{Binding, ParamStore};
use crate::rng::{domain, SplitMix64};
use crate::tensor::tape::{NodeId, Tape};
use crate::tensor::{Real, Tensor};

/// One aligned pair of modality input rows.
#[derive(Debug, Clone)]
pub struct PairBatch<F> {
    /// `[B, env_dim]`
    pub env: Tensor<F>,
    /// `[B, csi_dim]`
    pub csi: Tensor<F>,
}

/// Symmetric InfoNCE on the tape. `inv_temp` is a 1-element node (already
/// exponentiated); logits = (E C^T) * inv_temp.
pub fn contrastive_loss_node<F: Real>(
    tape: &mut Tape<F>,
    env_codes: NodeId,
    csi_codes: NodeId,
    inv_temp: NodeId,
) -> Result<NodeId> {
    let b = tape.value(env_codes).shape()[0];
    if b < 2 {
        return Err(Error::Batch(format!("contrastive batch needs >= 2 pairs, got {b}")));
    }
    let sims = tape.matmul_trans_b(env_codes, csi_codes)?;
    let logits = tape.mul_scalar(sims, inv_temp)?;
    let diag: Vec<i64> = (0..b as i64).collect();
    let loss_ec = tape.cross_entropy(logits, diag.clone())?;
    let logits_t = tape.transpose(logits)?;
    let loss_ce = tape.cross_entropy(logits_t, diag)?;
    let sum = tape.add(loss_ec, loss_ce)?;
    Ok(tape.scale(sum, F::from_f64(0.5)))
}

/// Loss value for a batch of raw (env, csi) input pairs through the given
/// encoders at a fixed temperature.
pub fn contrastive_align<F: Real>(
    store: &ParamStore<F>,
    enc: &EncoderInit,
    batch: &PairBatch<F>,
    temperature: f64,
) -> Result<f64> {
    if batch.env.shape()[0] != batch.csi.shape()[0] {
        return Err(Error::Batch("pair batch sides disagree".into()));
    }
    let mut tape = Tape::new();
    let mut binding = Binding::new();
    let e_in = tape.constant(batch.env.clone());
    let c_in = tape.constant(batch.csi.clone());
    let e_codes = encoder_forward(&mut tape, store, &mut binding, enc.epnn, e_in)?;
    let c_codes = encoder_forward(&mut tape, store, &mut binding, enc.cfenn, c_in)?;
    let inv_temp = tape.constant(Tensor::scalar(F::from_f64(1.0 / temperature)));
    let loss = contrastive_loss_node(&mut tape, e_codes, c_codes, inv_temp)?;
    Ok(tape.value(loss).data()[0].to_f64())
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct AlignReport {
    pub epochs: usize,
    pub n_train_pairs: usize,
    pub n_holdout_pairs: usize,
    pub final_loss: f64,
    /// In-batch retrieval top-1 at B = 64 on held-out pairs.
    pub holdout_top1: f64,
    /// Mean cosine similarity of matched vs mismatched held-out pairs.
    pub matched_mean: f64,
    pub mismatched_mean: f64,
    pub csi_rms: f64,
}

pub struct AlignOutput<F: Real> {
    pub store: ParamStore<F>,
    pub enc: EncoderInit,
    pub report: AlignReport,
}

/// Pool (env, csi) input rows from several area datasets. CSI rows are
/// normalized by the pooled RMS amplitude (recomputed over all areas).
pub fn collect_pairs<F: Real>(datasets: &[Dataset]) -> Result<(Vec<Vec<F>>, Vec<Vec<F>>, f64)> {
    if datasets.is_empty() {
        return Err(Error::Batch("no datasets for alignment".into()));
    }
    let mut sum_sq = 0.0f64;
    let mut count = 0usize;
    for ds in datasets {
        for r in &ds.records {
            for pair in r.csi.chunks_exact(2) {
                sum_sq += (pair[0] as f64).powi(2) + (pair[1] as f64).powi(2);
                count += 1;
            }
        }
    }
    let rms = (sum_sq / count as f64).sqrt();
    let mut env_rows = Vec::new();
    let mut csi_rows = Vec::new();
    for ds in datasets {
        for r in &ds.records {
            env_rows.push(r.env_vector().into_iter().map(F::from_f32).collect());
            csi_rows.push(r.csi_vector(rms).into_iter().map(F::from_f32).collect());
        }
    }
    Ok((env_rows, csi_rows, rms))
}

fn stack<F: Real>(rows: &[Vec<F>], idxs: &[usize]) -> Tensor<F> {
    let dim = rows[0].len();
    let mut data = Vec::with_capacity(idxs.len() * dim);
    for &i in idxs {
        data.extend_from_slice(&rows[i]);
    }
    Tensor::new(vec![idxs.len(), dim], data).expect("constant row width")
}

/// Holdout interval: every `HOLDOUT_EVERY`-th pair is held out, so the
/// holdout covers unseen UE positions in every area rather than whole
/// unseen areas.
pub const HOLDOUT_EVERY: usize = 10;

/// Train the encoder pair with symmetric InfoNCE.
///
/// Every tenth pair is held out for the retrieval and similarity checks;
/// training runs `epochs` passes of batch-64 steps over the rest.
pub fn train_alignment<F: Real>(
    datasets: &[Dataset],
    d_enc: usize,
    epochs: usize,
    seed: u64,
    lr: f64,
) -> Result<AlignOutput<F>> {
    const BATCH: usize = 64;
    let (env_rows, csi_rows, csi_rms) = collect_pairs::<F>(datasets)?;
    let n_total = env_rows.len();
    let holdout: Vec<usize> = (0..n_total).filter(|i| i % HOLDOUT_EVERY == 0).collect();
    let train_idx: Vec<usize> = (0..n_total).filter(|i| i % HOLDOUT_EVERY != 0).collect();
    let n_holdout = holdout.len();
    let n_train = train_idx.len();
    if n_train < BATCH {
        return Err(Error::Batch(format!("{n_train} training pairs < batch {BATCH}")));
    }
    let env_dim = env_rows[0].len();
    let csi_dim = csi_rows[0].len();

    let mut store: ParamStore<F> = ParamStore::new();
    let mut rng_init = SplitMix64::stream(seed, &[domain::INIT, 7]);
    let enc = init_encoders(&mut store, env_dim, csi_dim, d_enc, &mut rng_init);
    for id in store.ids().collect::<Vec<_>>() {
        store.set_trainable(id, true);
    }
    let mut adam = Adam::new(AdamConfig { lr, ..AdamConfig::default() }, store.len());
    let mut rng = SplitMix64::stream(seed, &[domain::SHUFFLE, 1]);

    let mut order = train_idx;
    let mut final_loss = f64::NAN;
    for _epoch in 0..epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks_exact(BATCH) {
            let env = stack(&env_rows, chunk);
            let csi = stack(&csi_rows, chunk);
            let mut tape = Tape::new();
            let mut binding = Binding::new();
            let e_in = tape.constant(env);
            let c_in = tape.constant(csi);
            let e_codes = encoder_forward(&mut tape, &store, &mut binding, enc.epnn, e_in)?;
            let c_codes = encoder_forward(&mut tape, &store, &mut binding, enc.cfenn, c_in)?;
            let log_it = binding.bind(&mut tape, &store, enc.log_inv_temp);
            let inv_temp = tape.exp(log_it);
            let loss = contrastive_loss_node(&mut tape, e_codes, c_codes, inv_temp)?;
            final_loss = tape.value(loss).data()[0].to_f64();
            let grads = tape.backward(loss)?;
            let mut updates = Vec::new();
            for &(pid, node) in binding.pairs() {
                if store.is_trainable(pid) {
                    if let Some(g) = grads.get(node) {
                        updates.push((pid, g.to_vec()));
                    }
                }
            }
            adam.step(&mut store, &updates);
        }
    }

    // held-out evaluation
    let (top1, matched, mismatched) =
        holdout_retrieval(&store, &enc, &env_rows, &csi_rows, &holdout, BATCH)?;
    let report = AlignReport {
        epochs,
        n_train_pairs: n_train,
        n_holdout_pairs: n_holdout,
        final_loss,
        holdout_top1: top1,
        matched_mean: matched,
        mismatched_mean: mismatched,
        csi_rms,
    };
    Ok(AlignOutput { store, enc, report })
}

/// In-batch retrieval top-1 (at the given batch size) and matched vs
/// mismatched mean cosine similarity on held-out pairs.
pub fn holdout_retrieval<F: Real>(
    store: &ParamStore<F>,
    enc: &EncoderInit,
    env_rows: &[Vec<F>],
    csi_rows: &[Vec<F>],
    holdout: &[usize],
    batch: usize,
) -> Result<(f64, f64, f64)> {
    let mut hits = 0usize;
    let mut total = 0usize;
    let mut matched_sum = 0.0f64;
    let mut matched_n = 0usize;
    let mut mismatched_sum = 0.0f64;
    let mut mismatched_n = 0usize;
    for chunk in holdout.chunks(batch) {
        if chunk.len() < 2 {
            continue;
        }
        let env = stack(env_rows, chunk);
        let csi = stack(csi_rows, chunk);
        let mut tape = Tape::new();
        let mut binding = Binding::new();
        let e_in = tape.constant(env);
        let c_in = tape.constant(csi);
        let e_codes = encoder_forward(&mut tape, store, &mut binding, enc.epnn, e_in)?;
        let c_codes = encoder_forward(&mut tape, store, &mut binding, enc.cfenn, c_in)?;
        let sims = tape.matmul_trans_b(e_codes, c_codes)?;
        let s = tape.value(sims);
        let b = chunk.len();
        for i in 0..b {
            let row = &s.data()[i * b..(i + 1) * b];
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            hits += (best == i) as usize;
            total += 1;
            for (j, &v) in row.iter().enumerate() {
                if j == i {
                    matched_sum += v.to_f64();
                    matched_n += 1;
                } else {
                    mismatched_sum += v.to_f64();
                    mismatched_n += 1;
                }
            }
        }
    }
    if total == 0 {
        return Err(Error::Evaluation("empty holdout for retrieval".into()));
    }
    Ok((
        hits as f64 / total as f64,
        matched_sum / matched_n as f64,
        mismatched_sum / mismatched_n.max(1) as f64,
    ))
}
