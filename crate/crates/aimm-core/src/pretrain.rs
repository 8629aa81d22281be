//! Backbone pretraining on a synthetic token grammar.
//!
//! Sentences are templated mixes of task keywords and filler words over the
//! fixed 64-word vocabulary; the backbone trains with next-token
//! cross-entropy (logits tied to the embedding table). Fixed seeds give
//! bit-identical checkpoints across runs.

use crate::backbone::{backbone_forward, init_backbone, lm_logits, BackboneIds, ModelDims};
use crate::error::Result;
use crate::optim::{Adam, AdamConfig};
use crate::params::{Binding, ParamStore};
use crate::rng::{domain, SplitMix64};
use crate::tensor::tape::Tape;
use crate::tensor::{Real, Tensor};
use crate::vocab::{Vocab, PAD};

/// Sentence templates; `{kw}` expands to a task keyword (1-2 tokens),
/// `{noun}` to a filler noun. Every expansion fits in max_len = 8 tokens.
const TEMPLATES: [&str; 6] = [
    "what is the {kw} of this {noun}",
    "please infer the {kw} from this {noun}",
    "report the {kw} for the {noun}",
    "the {noun} is about the {kw}",
    "estimate the {kw} of the {noun}",
    "show me the best {kw} value",
];

const KEYWORDS: [&str; 6] =
    ["position", "los status", "precoding", "beam selection", "path loss", "user information"];

const NOUNS: [&str; 8] = ["channel", "signal", "map", "area", "scene", "matrix", "link", "measurement"];

/// One grammar sentence as token ids, padded with PAD to `max_len`.
pub fn sample_sentence(vocab: &Vocab, rng: &mut SplitMix64, max_len: usize) -> Vec<u16> {
    let template = TEMPLATES[rng.below(TEMPLATES.len() as u64) as usize];
    let kw = KEYWORDS[rng.below(KEYWORDS.len() as u64) as usize];
    let noun = NOUNS[rng.below(NOUNS.len() as u64) as usize];
    let text = template.replace("{kw}", kw).replace("{noun}", noun);
    let mut ids = vocab.tokenize(&text).expect("grammar words are all in vocabulary");
    debug_assert!(ids.len() <= max_len, "template too long: {text}");
    ids.resize(max_len, PAD);
    ids
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct PretrainReport {
    pub steps: usize,
    pub initial_perplexity: f64,
    pub final_perplexity: f64,
}

pub struct PretrainOutput<F: Real> {
    pub store: ParamStore<F>,
    pub ids: BackboneIds,
    pub report: PretrainReport,
}

const BATCH: usize = 16;
const EVAL_SENTENCES: usize = 128;

fn batch_ce<F: Real>(
    store: &ParamStore<F>,
    ids: &BackboneIds,
    dims: &ModelDims,
    sentences: &[Vec<u16>],
    with_grads: bool,
) -> Result<(f64, Option<(Tape<F>, Binding, crate::tensor::tape::NodeId)>)> {
    let b = sentences.len();
    let t = dims.max_len;
    let mut tape = Tape::new();
    let mut binding = Binding::new();
    let flat: Vec<usize> = sentences.iter().flatten().map(|&id| id as usize).collect();
    let embed = binding.bind(&mut tape, store, ids.embed);
    let gathered = tape.gather(embed, flat.clone())?;
    let seq = tape.reshape(gathered, vec![b, t, dims.d_model])?;
    let out = backbone_forward(&mut tape, store, &mut binding, ids, None, dims, seq)?;
    let flat_out = tape.reshape(out, vec![b * t, dims.d_model])?;
    let logits = lm_logits(&mut tape, store, &mut binding, ids, flat_out)?;
    // next-token targets; rows whose next token is PAD (or past the end)
    // are ignored
    let mut targets = vec![-1i64; b * t];
    for (s, sent) in sentences.iter().enumerate() {
        for pos in 0..t - 1 {
            let next = sent[pos + 1];
            if next != PAD {
                targets[s * t + pos] = next as i64;
            }
        }
    }
    let loss = tape.cross_entropy(logits, targets)?;
    let v = tape.value(loss).data()[0].to_f64();
    if with_grads {
        Ok((v, Some((tape, binding, loss))))
    } else {
        Ok((v, None))
    }
}

/// Train a fresh backbone on the grammar for `steps` steps. The returned
/// store holds only backbone parameters, all marked frozen (downstream
/// configurations never update the base).
pub fn pretrain_lm<F: Real>(
    dims: &ModelDims,
    steps: usize,
    seed: u64,
    lr: f64,
) -> Result<PretrainOutput<F>> {
    let vocab = Vocab::new();
    let mut store: ParamStore<F> = ParamStore::new();
    let mut rng_init = SplitMix64::stream(seed, &[domain::INIT, 8]);
    let ids = init_backbone(&mut store, dims, &mut rng_init)?;
    for id in store.ids().collect::<Vec<_>>() {
        store.set_trainable(id, true);
    }
    let mut adam = Adam::new(AdamConfig { lr, ..AdamConfig::default() }, store.len());
    let mut corpus_rng = SplitMix64::stream(seed, &[domain::CORPUS, 0]);
    let mut eval_rng = SplitMix64::stream(seed, &[domain::CORPUS, 1]);
    let eval_set: Vec<Vec<u16>> =
        (0..EVAL_SENTENCES).map(|_| sample_sentence(&vocab, &mut eval_rng, dims.max_len)).collect();

    let (ce0, _) = batch_ce(&store, &ids, dims, &eval_set, false)?;
    let initial_perplexity = ce0.exp();

    for _ in 0..steps {
        let batch: Vec<Vec<u16>> =
            (0..BATCH).map(|_| sample_sentence(&vocab, &mut corpus_rng, dims.max_len)).collect();
        let (_, ctx) = batch_ce(&store, &ids, dims, &batch, true)?;
        let (tape, binding, loss) = ctx.expect("grads requested");
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

    let (ce1, _) = batch_ce(&store, &ids, dims, &eval_set, false)?;
    let final_perplexity = ce1.exp();
    store.freeze_all();
    Ok(PretrainOutput {
        store,
        ids,
        report: PretrainReport { steps, initial_perplexity, final_perplexity },
    })
}
