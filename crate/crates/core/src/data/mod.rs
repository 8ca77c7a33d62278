//! Corpus ingestion, vocabularies, training examples and batching.

mod conllu;
pub mod synth;

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use conllu::{read_conllu, write_conllu, Treebank, TreebankEntry};

use crate::error::{Error, Result};
use crate::model::{Example, PAD_WORD, UNK_WORD};
use crate::oracle::{decorate, oracle_actions, ShiftVocab};
use crate::plan::{compute_plan, HeadSpec};
use crate::transition::{Action, ActionVocab, Sentence};

/// Word ↔ id mapping with reserved padding, unknown and sentinel entries.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordVocab {
    words: Vec<String>,
    counts: Vec<usize>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl WordVocab {
    pub const RESERVED: [&'static str; 3] = ["<pad>", "<unk>", "</s>"];

    /// Every training word, sorted, after the reserved entries.
    pub fn build<'a>(sentences: impl IntoIterator<Item = &'a Sentence>) -> Self {
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for s in sentences {
            for t in s.tokens() {
                *freq.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut entries: Vec<(&str, usize)> = freq.into_iter().collect();
        entries.sort();
        let mut words: Vec<String> = Self::RESERVED.iter().map(|s| s.to_string()).collect();
        let mut counts = vec![0; words.len()];
        for (w, c) in entries {
            words.push(w.to_string());
            counts.push(c);
        }
        Self::from_parts(words, counts)
    }

    fn from_parts(words: Vec<String>, counts: Vec<usize>) -> Self {
        let index = words.iter().cloned().enumerate().map(|(i, w)| (w, i)).collect();
        WordVocab { words, counts, index }
    }

    /// Rebuilds the lookup table after deserialization.
    pub fn reindex(self) -> Self {
        Self::from_parts(self.words, self.counts)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK_WORD)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn count(&self, id: usize) -> usize {
        self.counts[id]
    }

    pub fn encode(&self, sentence: &Sentence) -> Vec<usize> {
        sentence.tokens().iter().map(|t| self.id(t)).collect()
    }
}

/// Gold action sequences for a treebank; non-projective sentences are
/// dropped and counted.
#[derive(Clone, Debug)]
pub struct OracleCorpus {
    /// `(index into the treebank, decorated actions)`
    pub sequences: Vec<(usize, Vec<Action>)>,
    pub skipped: usize,
}

pub fn oracle_corpus(treebank: &[TreebankEntry], shift_vocab: &ShiftVocab) -> Result<OracleCorpus> {
    let mut sequences = Vec::with_capacity(treebank.len());
    let mut skipped = 0;
    for (i, entry) in treebank.iter().enumerate() {
        match oracle_actions(&entry.sentence, &entry.graph) {
            Ok(actions) => {
                let actions = decorate(&actions, &entry.sentence, shift_vocab)?;
                sequences.push((i, actions));
            }
            Err(Error::NonProjective) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} non-projective sentences");
    }
    Ok(OracleCorpus { sequences, skipped })
}

/// Word and action vocabularies of a training treebank.
pub fn build_vocabs(treebank: &[TreebankEntry], shift_vocab: &ShiftVocab) -> Result<(WordVocab, ActionVocab)> {
    let corpus = oracle_corpus(treebank, shift_vocab)?;
    let words = WordVocab::build(treebank.iter().map(|e| &e.sentence));
    let actions = ActionVocab::from_sequences(corpus.sequences.iter().map(|(_, a)| a.as_slice()));
    Ok((words, actions))
}

/// Model-ready examples for every projective sentence, with plans compiled
/// once. Actions unseen in `actions` (e.g. rare dev labels) are an error.
pub fn build_examples(
    treebank: &[TreebankEntry],
    words: &WordVocab,
    actions: &ActionVocab,
    shift_vocab: &ShiftVocab,
    specs: &[HeadSpec],
    external: Option<&[Array2<f32>]>,
) -> Result<(Vec<Example>, Vec<usize>)> {
    let corpus = oracle_corpus(treebank, shift_vocab)?;
    let mut examples = Vec::with_capacity(corpus.sequences.len());
    let mut kept = Vec::with_capacity(corpus.sequences.len());
    for (i, seq) in corpus.sequences {
        let entry = &treebank[i];
        let action_ids = match actions.encode(&seq) {
            Ok(ids) => ids,
            Err(Error::UnknownAction(a)) => {
                log::warn!("sentence {}: action {a} not in vocabulary, skipped", entry.id);
                continue;
            }
            Err(e) => return Err(e),
        };
        let plan = compute_plan(entry.sentence.len(), &seq, specs)?;
        examples.push(Example {
            word_ids: words.encode(&entry.sentence),
            action_ids,
            plan: Arc::new(plan),
            external: external.map(|e| e[i].clone()),
        });
        kept.push(i);
    }
    Ok((examples, kept))
}

/// With probability `p`, replaces each word seen once in training by UNK.
pub fn unk_replace<R: Rng>(word_ids: &[usize], words: &WordVocab, p: f64, rng: &mut R) -> Vec<usize> {
    word_ids
        .iter()
        .map(|&id| {
            if id >= WordVocab::RESERVED.len() && words.count(id) == 1 && rng.gen::<f64>() < p {
                UNK_WORD
            } else {
                id
            }
        })
        .collect()
}

/// A group of sentences packed under a token budget.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    /// Indices into the example list.
    pub members: Vec<usize>,
    /// Word ids padded with [`PAD_WORD`], one row per member.
    pub word_ids: Array2<usize>,
    /// Action ids padded with the end symbol, one row per member.
    pub action_ids: Array2<usize>,
    pub word_lens: Vec<usize>,
    pub action_lens: Vec<usize>,
}

impl Batch {
    fn new(members: Vec<usize>, examples: &[Example]) -> Self {
        let word_lens: Vec<usize> = members.iter().map(|&i| examples[i].n_words()).collect();
        let action_lens: Vec<usize> = members.iter().map(|&i| examples[i].action_ids.len()).collect();
        let wmax = word_lens.iter().copied().max().unwrap_or(0);
        let amax = action_lens.iter().copied().max().unwrap_or(0);
        let mut word_ids = Array2::from_elem((members.len(), wmax), PAD_WORD);
        let mut action_ids = Array2::zeros((members.len(), amax));
        for (r, &i) in members.iter().enumerate() {
            for (c, &w) in examples[i].word_ids.iter().enumerate() {
                word_ids[[r, c]] = w;
            }
            for (c, &a) in examples[i].action_ids.iter().enumerate() {
                action_ids[[r, c]] = a;
            }
        }
        Batch {
            members,
            word_ids,
            action_ids,
            word_lens,
            action_lens,
        }
    }

    pub fn tokens(&self) -> usize {
        self.word_lens.iter().sum()
    }
}

/// Sorts sentences by length and packs them greedily so each batch holds at
/// most `budget` words. A sentence longer than the budget gets its own batch.
pub fn make_batches(examples: &[Example], budget: usize) -> Vec<Batch> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.sort_by_key(|&i| (examples[i].n_words(), i));
    let mut batches = Vec::new();
    let mut cur: Vec<usize> = Vec::new();
    let mut used = 0;
    for i in order {
        let n = examples[i].n_words();
        if n > budget {
            log::warn!("sentence of {n} words exceeds the batch budget of {budget}");
        }
        if !cur.is_empty() && used + n > budget {
            batches.push(Batch::new(std::mem::take(&mut cur), examples));
            used = 0;
        }
        cur.push(i);
        used += n;
    }
    if !cur.is_empty() {
        batches.push(Batch::new(cur, examples));
    }
    batches
}

/// Seeded per-epoch batch order.
pub fn shuffle_batches<R: Rng>(batches: &mut [Batch], rng: &mut R) {
    batches.shuffle(rng);
}

/// Reads fixed input vectors: one line of whitespace-separated floats per
/// token, sentences separated by blank lines, in corpus order.
pub fn read_embeddings(path: &Path) -> Result<Vec<Array2<f32>>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let display = path.display().to_string();
    let mut out = Vec::new();
    let mut rows: Vec<Vec<f32>> = Vec::new();
    let mut dim = None;
    let flush = |rows: &mut Vec<Vec<f32>>, out: &mut Vec<Array2<f32>>, d: usize| {
        if !rows.is_empty() {
            let flat: Vec<f32> = rows.drain(..).flatten().collect();
            out.push(Array2::from_shape_vec((flat.len() / d, d), flat).unwrap());
        }
    };
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            if let Some(d) = dim {
                flush(&mut rows, &mut out, d);
            }
            continue;
        }
        let row: Vec<f32> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                path: display.clone(),
                line: i + 1,
                message: format!("bad float: {e}"),
            })?;
        match dim {
            None => dim = Some(row.len()),
            Some(d) if d != row.len() => {
                return Err(Error::Parse {
                    path: display.clone(),
                    line: i + 1,
                    message: format!("expected {d} values, found {}", row.len()),
                })
            }
            _ => {}
        }
        rows.push(row);
    }
    if let Some(d) = dim {
        flush(&mut rows, &mut out, d);
    }
    Ok(out)
}

/// Checks that fixed vectors line up with a treebank and the model width.
pub fn check_embeddings(emb: &[Array2<f32>], treebank: &[TreebankEntry], d_model: usize) -> Result<()> {
    if emb.len() != treebank.len() {
        return Err(Error::Alignment(format!(
            "{} embedded sentences for {} treebank sentences",
            emb.len(),
            treebank.len()
        )));
    }
    for (e, entry) in emb.iter().zip(treebank) {
        if e.nrows() != entry.sentence.len() || e.ncols() != d_model {
            return Err(Error::Alignment(format!(
                "sentence {}: vectors are {}×{}, expected {}×{}",
                entry.id,
                e.nrows(),
                e.ncols(),
                entry.sentence.len(),
                d_model
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::build_shift_vocab;
    use crate::plan::{verify_plan, HeadTarget};
    use crate::transition::DepGraph;

    fn entry(text: &str, heads: &[usize], labels: &[&str]) -> TreebankEntry {
        let sentence = Sentence::from_text(text).unwrap();
        let n = sentence.len();
        TreebankEntry {
            id: text.into(),
            sentence,
            graph: DepGraph::new(heads.to_vec(), labels.iter().map(|s| s.to_string()).collect()).unwrap(),
            upos: vec!["_".into(); n],
        }
    }

    #[test]
    fn action_vocab_from_oracle() {
        let tb = vec![entry("a b", &[2, 0], &["amod", "root"]), entry("c", &[0], &["root"])];
        let (words, actions) = build_vocabs(&tb, &ShiftVocab::default()).unwrap();
        let rendered: Vec<String> = actions.actions().iter().map(ToString::to_string).collect();
        assert_eq!(rendered, vec!["</a>", "SHIFT", "LA(amod)", "RA(root)"]);
        assert_eq!(words.len(), 3 + 3);
        assert_eq!(words.id("zzz"), UNK_WORD);
    }

    #[test]
    fn decoration_adds_one_entry_per_word() {
        let tb = vec![
            entry("a b", &[2, 0], &["amod", "root"]),
            entry("c a", &[0, 1], &["root", "x"]),
        ];
        let sv = build_shift_vocab(tb.iter().map(|e| &e.sentence), 2);
        let (_, plain) = build_vocabs(&tb, &ShiftVocab::default()).unwrap();
        let (_, dec) = build_vocabs(&tb, &sv).unwrap();
        assert_eq!(dec.len(), plain.len() + 2);
        let (_, none) = build_vocabs(&tb, &build_shift_vocab(tb.iter().map(|e| &e.sentence), 0)).unwrap();
        assert_eq!(none, plain);
    }

    fn examples_of_lengths(lens: &[usize]) -> Vec<Example> {
        lens.iter()
            .map(|&n| {
                let text: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
                let heads: Vec<usize> = (0..n).collect();
                let labels = vec!["x"; n];
                let e = entry(&text.join(" "), &heads, &labels);
                let acts = oracle_actions(&e.sentence, &e.graph).unwrap();
                Example {
                    word_ids: vec![3; n],
                    action_ids: vec![1; acts.len()],
                    plan: Arc::new(compute_plan(n, &acts, &[HeadSpec::FREE]).unwrap()),
                    external: None,
                }
            })
            .collect()
    }

    #[test]
    fn greedy_packing() {
        let ex = examples_of_lengths(&[4, 4, 4]);
        let batches = make_batches(&ex, 10);
        let members: Vec<Vec<usize>> = batches.iter().map(|b| b.members.clone()).collect();
        assert_eq!(members, vec![vec![0, 1], vec![2]]);
        assert_eq!(make_batches(&ex, 100).len(), 1);
        // an oversized sentence still gets a batch
        let batches = make_batches(&examples_of_lengths(&[12, 2]), 10);
        assert_eq!(batches.len(), 2);
        assert!(batches.iter().all(|b| b.tokens() <= 10 || b.members.len() == 1));
    }

    #[test]
    fn padding_is_separate_from_lengths() {
        let ex = examples_of_lengths(&[2, 3]);
        let b = &make_batches(&ex, 10)[0];
        assert_eq!(b.word_ids.dim(), (2, 3));
        assert_eq!(b.word_ids[[0, 2]], PAD_WORD);
        assert_eq!(b.word_lens, vec![2, 3]);
    }

    #[test]
    fn seeded_shuffle_is_reproducible() {
        use rand::SeedableRng;
        let ex = examples_of_lengths(&[1, 2, 3, 4, 5, 6, 7, 8]);
        let order = |seed| {
            let mut b = make_batches(&ex, 3);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            shuffle_batches(&mut b, &mut rng);
            b.into_iter().map(|b| b.members).collect::<Vec<_>>()
        };
        assert_eq!(order(5), order(5));
    }

    #[test]
    fn example_plans_verify() {
        let tb = vec![entry("a b c", &[2, 0, 2], &["x", "root", "y"])];
        let (words, actions) = build_vocabs(&tb, &ShiftVocab::default()).unwrap();
        let specs = [HeadSpec::new(HeadTarget::FullStack), HeadSpec::FREE];
        let (ex, kept) = build_examples(&tb, &words, &actions, &ShiftVocab::default(), &specs, None).unwrap();
        assert_eq!(kept, vec![0]);
        let acts = actions.decode(&ex[0].action_ids);
        assert!(verify_plan(&ex[0].plan, 3, &acts, &specs).is_ok());
    }

    #[test]
    fn embeddings_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        fs::write(&path, "0 1\n2 3\n\n4 5\n").unwrap();
        let emb = read_embeddings(&path).unwrap();
        assert_eq!(emb.len(), 2);
        assert_eq!(emb[0].dim(), (2, 2));
        assert_eq!(emb[1][[0, 1]], 5.0);
        fs::write(&path, "0 1\n2\n").unwrap();
        assert!(read_embeddings(&path).is_err());
    }
}
