#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use stackformer::data::TreebankEntry;
use stackformer::transition::{Action, DepGraph, ParserState, Sentence, TransitionConfig};

pub const LABELS: [&str; 6] = ["nsubj", "obj", "amod", "det", "case", "nmod"];

/// Assigns heads to `lo..=hi`, splitting the span into consecutive chunks
/// whose own heads attach to `head`. Every subtree is a contiguous span.
fn attach<R: Rng>(rng: &mut R, lo: usize, hi: usize, head: usize, heads: &mut [usize]) {
    let mut start = lo;
    while start <= hi {
        let end = rng.gen_range(start..=hi);
        let m = rng.gen_range(start..=end);
        heads[m - 1] = head;
        if m > start {
            attach(rng, start, m - 1, m, heads);
        }
        if m < end {
            attach(rng, m + 1, end, m, heads);
        }
        start = end + 1;
    }
}

/// Random projective tree over `n` words with labels from `labels`.
pub fn random_projective_tree<R: Rng>(rng: &mut R, n: usize, labels: &[&str]) -> DepGraph {
    let mut heads = vec![0; n];
    let root = rng.gen_range(1..=n);
    if root > 1 {
        attach(rng, 1, root - 1, root, &mut heads);
    }
    if root < n {
        attach(rng, root + 1, n, root, &mut heads);
    }
    let labels = heads
        .iter()
        .map(|&h| {
            if h == 0 {
                "root".to_string()
            } else {
                labels.choose(rng).unwrap().to_string()
            }
        })
        .collect();
    DepGraph::new(heads, labels).expect("generated a tree")
}

pub fn sentence(n: usize) -> Sentence {
    Sentence::new((1..=n).map(|i| format!("w{i}"))).unwrap()
}

pub fn entry(id: &str, sentence: Sentence, graph: DepGraph) -> TreebankEntry {
    let n = sentence.len();
    TreebankEntry {
        id: id.into(),
        sentence,
        graph,
        upos: vec!["X".into(); n],
    }
}

/// A random valid action sequence over `n` words, ending with the end
/// symbol, using every effect `transitions` enables. After `budget`
/// random steps it completes with SHIFTs and RIGHT-ARCs.
pub fn random_actions<R: Rng>(rng: &mut R, n: usize, transitions: TransitionConfig, budget: usize) -> Vec<Action> {
    let mut state = ParserState::new(n).unwrap();
    let mut out = Vec::new();
    let label = |rng: &mut R| LABELS.choose(rng).unwrap().to_string();
    while !state.is_terminal() {
        let action = if out.len() < budget {
            let mut options = vec![
                Action::Shift(rng.gen_bool(0.3).then(|| format!("w{}", rng.gen_range(1..=n)))),
                Action::LeftArc(label(rng)),
                Action::RightArc(label(rng)),
                Action::Reduce,
                Action::Swap,
            ];
            options.retain(|a| transitions.permits(&state, a));
            options.choose(rng).unwrap().clone()
        } else if !state.buffer().is_empty() {
            Action::shift()
        } else {
            Action::RightArc(label(rng))
        };
        state = state.apply(&action).unwrap();
        out.push(action);
    }
    out.push(Action::End);
    out
}

use stackformer::data::{build_examples, build_vocabs, synth, WordVocab};
use stackformer::model::{Example, ModelConfig};
use stackformer::oracle::ShiftVocab;
use stackformer::plan::HeadSpec;
use stackformer::transition::ActionVocab;

/// Small synthetic corpus with its vocabularies (no SHIFT decoration).
pub fn corpus(sentences: usize, max_words: usize, seed: u64) -> (Vec<TreebankEntry>, WordVocab, ActionVocab) {
    let treebank = synth::generate(&synth::SynthConfig {
        sentences,
        seed,
        max_words,
    });
    let (words, actions) = build_vocabs(&treebank, &ShiftVocab::default()).unwrap();
    (treebank, words, actions)
}

pub fn examples(
    treebank: &[TreebankEntry],
    words: &WordVocab,
    actions: &ActionVocab,
    specs: &[HeadSpec],
) -> Vec<Example> {
    build_examples(treebank, words, actions, &ShiftVocab::default(), specs, None)
        .unwrap()
        .0
}

/// 2/2 layers of width 32 with one head per spec, dropout off.
pub fn small_config(specs: Vec<HeadSpec>, words: usize, actions: usize) -> ModelConfig {
    ModelConfig {
        encoder_layers: 2,
        decoder_layers: 2,
        d_model: 8 * specs.len(),
        heads: specs.len(),
        ffn_dim: 32,
        head_specs: specs,
        dropout: 0.0,
        label_smoothing: 0.01,
        max_depth: 32,
        word_vocab: words,
        action_vocab: actions,
    }
}
