//! Task instruction blocks: learnable prefix prompts plus fixed keyword
//! embeddings looked up from the frozen backbone embedding table.

use crate::error::Result;
use crate::params::{Binding, ParamId, ParamStore};
use crate::rng::SplitMix64;
use crate::tasks::TaskId;
use crate::tensor::tape::{NodeId, Tape};
use crate::tensor::{Real, Tensor};
use crate::vocab::Vocab;

/// Learnable prefix token count per instruction.
pub const PREFIX_TOKENS: usize = 3;
/// Shared-instruction keyword used by the SP configuration.
pub const SHARED_KEYWORD: &str = "user information";

/// How instructions are built for a run configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrefixMode {
    /// One learnable prefix per task, task-specific keyword.
    PerTask,
    /// One shared prefix and the shared keyword for every task.
    Shared,
    /// No learnable prefix; keyword tokens only.
    Fixed,
    /// No instruction at all (and no backbone in the path).
    Absent,
}

#[derive(Debug, Clone)]
pub struct PrefixIds {
    pub mode: PrefixMode,
    /// 5 entries for PerTask, 1 for Shared, 0 otherwise.
    pub prompts: Vec<ParamId>,
}

/// Allocate prefix prompts per mode. Initialization: N(0, 0.02).
pub fn init_prefixes<F: Real>(
    store: &mut ParamStore<F>,
    mode: PrefixMode,
    d_model: usize,
    rng: &mut SplitMix64,
) -> PrefixIds {
    let prompts = match mode {
        PrefixMode::PerTask => TaskId::ALL
            .iter()
            .map(|t| {
                store.add(
                    format!("prefix.{}", t.name()),
                    Tensor::randn(vec![PREFIX_TOKENS, d_model], 0.02, rng),
                )
            })
            .collect(),
        PrefixMode::Shared => vec![store.add(
            "prefix.shared",
            Tensor::randn(vec![PREFIX_TOKENS, d_model], 0.02, rng),
        )],
        PrefixMode::Fixed | PrefixMode::Absent => Vec::new(),
    };
    PrefixIds { mode, prompts }
}

impl PrefixIds {
    pub fn prompt_for(&self, task: TaskId) -> Option<ParamId> {
        match self.mode {
            PrefixMode::PerTask => {
                let idx = TaskId::ALL.iter().position(|&t| t == task).unwrap();
                Some(self.prompts[idx])
            }
            PrefixMode::Shared => Some(self.prompts[0]),
            PrefixMode::Fixed | PrefixMode::Absent => None,
        }
    }
}

/// Keyword token ids for a task under the given mode.
pub fn keyword_ids(vocab: &Vocab, mode: PrefixMode, task: TaskId) -> Result<[u16; 2]> {
    let kw = match mode {
        PrefixMode::Shared => SHARED_KEYWORD,
        _ => task.keyword(),
    };
    vocab.tokenize_keyword(kw)
}

/// Build the instruction block on the tape: prefix rows (when present)
/// stacked over the two keyword-embedding rows gathered from the backbone
/// embedding table. Returns None in `Absent` mode.
pub fn build_instruction<F: Real>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    binding: &mut Binding,
    prefixes: &PrefixIds,
    vocab: &Vocab,
    embed_table: ParamId,
    task: TaskId,
) -> Result<Option<NodeId>> {
    if prefixes.mode == PrefixMode::Absent {
        return Ok(None);
    }
    let kw = keyword_ids(vocab, prefixes.mode, task)?;
    let table = binding.bind(tape, store, embed_table);
    let kw_rows = tape.gather(table, vec![kw[0] as usize, kw[1] as usize])?;
    let block = match prefixes.prompt_for(task) {
        Some(pid) => {
            let prefix = binding.bind(tape, store, pid);
            tape.concat_rows(prefix, kw_rows)?
        }
        None => kw_rows,
    };
    Ok(Some(block))
}

/// Value-only instruction block (for inspection and tests).
pub fn instruction_block_value<F: Real>(
    store: &ParamStore<F>,
    prefixes: &PrefixIds,
    vocab: &Vocab,
    embed_table: ParamId,
    task: TaskId,
) -> Result<Option<Tensor<F>>> {
    let mut tape = Tape::new();
    let mut binding = Binding::new();
    let node = build_instruction(&mut tape, store, &mut binding, prefixes, vocab, embed_table, task)?;
    Ok(node.map(|n| tape.value(n).clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::domain;

    fn setup(mode: PrefixMode) -> (ParamStore<f64>, PrefixIds, ParamId, Vocab) {
        let mut store = ParamStore::new();
        let mut rng = SplitMix64::stream(31, &[domain::INIT, 1]);
        let embed = store.add("backbone.embed", Tensor::randn(vec![64, 16], 0.02, &mut rng));
        let prefixes = init_prefixes(&mut store, mode, 16, &mut rng);
        (store, prefixes, embed, Vocab::new())
    }

    #[test]
    fn per_task_block_is_prefix_plus_keywords() {
        let (store, prefixes, embed, vocab) = setup(PrefixMode::PerTask);
        let block = instruction_block_value(&store, &prefixes, &vocab, embed, TaskId::Precoding)
            .unwrap()
            .unwrap();
        assert_eq!(block.shape(), &[5, 16]);
        // rows 0-2 are the prefix
        let pid = prefixes.prompt_for(TaskId::Precoding).unwrap();
        assert_eq!(&block.data()[..3 * 16], store.tensor(pid).data());
        // rows 3-4 are embed[id(precoding)] and embed[PAD]
        let kid = vocab.id("precoding").unwrap() as usize;
        assert_eq!(&block.data()[3 * 16..4 * 16], &store.tensor(embed).data()[kid * 16..(kid + 1) * 16]);
        assert_eq!(&block.data()[4 * 16..], &store.tensor(embed).data()[..16]);
    }

    #[test]
    fn fixed_mode_omits_prefix_rows() {
        let (store, prefixes, embed, vocab) = setup(PrefixMode::Fixed);
        let block = instruction_block_value(&store, &prefixes, &vocab, embed, TaskId::PathLoss)
            .unwrap()
            .unwrap();
        assert_eq!(block.shape(), &[2, 16]);
    }

    #[test]
    fn shared_mode_identical_across_tasks() {
        let (store, prefixes, embed, vocab) = setup(PrefixMode::Shared);
        let blocks: Vec<_> = TaskId::ALL
            .iter()
            .map(|&t| {
                instruction_block_value(&store, &prefixes, &vocab, embed, t).unwrap().unwrap()
            })
            .collect();
        for b in &blocks[1..] {
            assert_eq!(b, &blocks[0], "SP instruction must not depend on the task");
        }
        assert_eq!(blocks[0].shape(), &[5, 16]);
    }

    #[test]
    fn absent_mode_yields_no_block() {
        let (store, prefixes, embed, vocab) = setup(PrefixMode::Absent);
        assert!(instruction_block_value(&store, &prefixes, &vocab, embed, TaskId::Positioning)
            .unwrap()
            .is_none());
    }

    #[test]
    fn prefix_rows_learn_keyword_rows_do_not() {
        let (mut store, prefixes, embed, vocab) = setup(PrefixMode::PerTask);
        let pid = prefixes.prompt_for(TaskId::Positioning).unwrap();
        store.set_trainable(pid, true);
        // embed stays frozen
        let mut tape = Tape::new();
        let mut binding = Binding::new();
        let block = build_instruction(&mut tape, &store, &mut binding, &prefixes, &vocab, embed, TaskId::Positioning)
            .unwrap()
            .unwrap();
        let loss = tape.mean_all(block);
        let grads = tape.backward(loss).unwrap();
        let prefix_node = binding.pairs().iter().find(|(p, _)| *p == pid).unwrap().1;
        let embed_node = binding.pairs().iter().find(|(p, _)| *p == embed).unwrap().1;
        let g = grads.get(prefix_node).unwrap();
        assert!(g.iter().any(|&v| v != 0.0), "prefix must receive gradient");
        assert!(grads.get(embed_node).is_none(), "frozen embedding table must not");
    }
}
