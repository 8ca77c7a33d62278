//! Static arc-standard oracle and SHIFT decoration with frequent words.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::transition::{Action, DepGraph, ParserState, Sentence, ROOT};

/// Gold action sequence for a projective tree, ending with the end symbol.
///
/// The result has exactly `2n + 1` actions.
pub fn oracle_actions(sentence: &Sentence, gold: &DepGraph) -> Result<Vec<Action>> {
    if gold.len() != sentence.len() {
        return Err(Error::MalformedTree(format!(
            "tree has {} words, sentence has {}",
            gold.len(),
            sentence.len()
        )));
    }
    if !is_projective(gold) {
        return Err(Error::NonProjective);
    }
    let n = sentence.len();
    let mut pending = vec![0usize; n + 1];
    for d in 1..=n {
        pending[gold.head(d)] += 1;
    }

    let mut state = ParserState::new(n)?;
    let mut actions = Vec::with_capacity(2 * n + 1);
    while !state.is_terminal() {
        let action = match (state.s1(), state.s0()) {
            (Some(s1), Some(s0)) if s1 != ROOT && gold.head(s1) == s0 => {
                pending[s0] -= 1;
                Action::LeftArc(gold.label(s1).to_string())
            }
            (Some(s1), Some(s0))
                if s0 != ROOT
                    && gold.head(s0) == s1
                    && pending[s0] == 0
                    && (s1 != ROOT || state.buffer().is_empty()) =>
            {
                pending[s1] -= 1;
                Action::RightArc(gold.label(s0).to_string())
            }
            _ => Action::shift(),
        };
        state = state.apply(&action)?;
        actions.push(action);
    }
    actions.push(Action::End);
    Ok(actions)
}

/// True iff no two arcs cross when drawn above the sentence, counting the
/// arc from the root token at position 0.
pub fn is_projective(gold: &DepGraph) -> bool {
    let spans: Vec<(usize, usize)> = (1..=gold.len())
        .map(|d| {
            let h = gold.head(d);
            (h.min(d), h.max(d))
        })
        .collect();
    for (i, &(l1, r1)) in spans.iter().enumerate() {
        for &(l2, r2) in &spans[i + 1..] {
            if (l1 < l2 && l2 < r1 && r1 < r2) || (l2 < l1 && l1 < r2 && r2 < r1) {
                return false;
            }
        }
    }
    true
}

/// The `k` most frequent training words, used to decorate SHIFT actions.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ShiftVocab {
    words: Vec<String>,
    members: HashSet<String>,
}

impl ShiftVocab {
    /// Words in frequency-descending order.
    pub fn new(words: Vec<String>) -> Self {
        let members = words.iter().cloned().collect();
        ShiftVocab { words, members }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.members.contains(word)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = fs::File::create(path)?;
        for w in &self.words {
            writeln!(out, "{w}")?;
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut words = Vec::new();
        for line in reader.lines() {
            let line = line?;
            let word = line.trim();
            if !word.is_empty() {
                words.push(word.to_string());
            }
        }
        Ok(Self::new(words))
    }
}

/// Most frequent `k` surface words; ties go to the lexicographically smaller word.
pub fn build_shift_vocab<'a, I>(corpus: I, k: usize) -> ShiftVocab
where
    I: IntoIterator<Item = &'a Sentence>,
{
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for sentence in corpus {
        for t in sentence.tokens() {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ShiftVocab::new(ranked.into_iter().take(k).map(|(w, _)| w.to_string()).collect())
}

/// Rewrites every SHIFT to carry the shifted word when it is in `vocab`.
pub fn decorate(actions: &[Action], sentence: &Sentence, vocab: &ShiftVocab) -> Result<Vec<Action>> {
    let mut state = ParserState::new(sentence.len())?;
    let mut out = Vec::with_capacity(actions.len());
    for action in actions {
        let rewritten = match action {
            Action::Shift(_) => match state.buffer().first() {
                Some(&w) if vocab.contains(sentence.word(w)) => Action::Shift(Some(sentence.word(w).to_string())),
                _ => Action::shift(),
            },
            other => other.clone(),
        };
        state = state.apply(&rewritten)?;
        out.push(rewritten);
    }
    Ok(out)
}

pub fn strip(actions: &[Action]) -> Vec<Action> {
    actions.iter().map(Action::undecorated).collect()
}
