//! Shift-reduce state machine: actions, parser configurations and the
//! mapping from an action sequence over a sentence to a dependency tree.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of the artificial root token. Words are numbered `1..=n`.
pub const ROOT: usize = 0;

/// Rendering of the end-of-sequence action.
pub const END_SYMBOL: &str = "</a>";

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sentence {
    tokens: Vec<String>,
}

impl Sentence {
    pub fn new<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Result<Self> {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.is_empty() {
            return Err(Error::InvalidSentence("sentence has no tokens".into()));
        }
        if let Some(i) = tokens.iter().position(|t| t.is_empty()) {
            return Err(Error::InvalidSentence(format!("token {} is empty", i + 1)));
        }
        Ok(Sentence { tokens })
    }

    /// Whitespace-separated tokens.
    pub fn from_text(text: &str) -> Result<Self> {
        Self::new(text.split_whitespace())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Surface form of word `i` (1-based).
    pub fn word(&self, i: usize) -> &str {
        &self.tokens[i - 1]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// The state effect of an action, independent of labels and decorations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Effect {
    Shift,
    LeftArc,
    RightArc,
    Reduce,
    Swap,
}

/// A transition, or the end-of-sequence symbol.
///
/// Labels live on arcs only and decorations on shifts only, so the type
/// itself rules out malformed combinations.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Shift(Option<String>),
    LeftArc(String),
    RightArc(String),
    Reduce,
    Swap,
    End,
}

impl Action {
    pub fn shift() -> Self {
        Action::Shift(None)
    }

    pub fn effect(&self) -> Option<Effect> {
        match self {
            Action::Shift(_) => Some(Effect::Shift),
            Action::LeftArc(_) => Some(Effect::LeftArc),
            Action::RightArc(_) => Some(Effect::RightArc),
            Action::Reduce => Some(Effect::Reduce),
            Action::Swap => Some(Effect::Swap),
            Action::End => None,
        }
    }

    pub fn label(&self) -> Option<&str> {
        match self {
            Action::LeftArc(l) | Action::RightArc(l) => Some(l),
            _ => None,
        }
    }

    pub fn decoration(&self) -> Option<&str> {
        match self {
            Action::Shift(Some(w)) => Some(w),
            _ => None,
        }
    }

    /// The same action with any SHIFT decoration removed.
    pub fn undecorated(&self) -> Action {
        match self {
            Action::Shift(_) => Action::Shift(None),
            other => other.clone(),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Shift(None) => write!(f, "SHIFT"),
            Action::Shift(Some(w)) => write!(f, "SHIFT({w})"),
            Action::LeftArc(l) => write!(f, "LA({l})"),
            Action::RightArc(l) => write!(f, "RA({l})"),
            Action::Reduce => write!(f, "REDUCE"),
            Action::Swap => write!(f, "SWAP"),
            Action::End => write!(f, "{END_SYMBOL}"),
        }
    }
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::UnknownAction(s.to_string());
        match s {
            "SHIFT" => return Ok(Action::Shift(None)),
            "REDUCE" => return Ok(Action::Reduce),
            "SWAP" => return Ok(Action::Swap),
            END_SYMBOL => return Ok(Action::End),
            _ => {}
        }
        let open = s.find('(').ok_or_else(bad)?;
        if !s.ends_with(')') {
            return Err(bad());
        }
        let arg = &s[open + 1..s.len() - 1];
        if arg.is_empty() {
            return Err(bad());
        }
        match &s[..open] {
            "SHIFT" => Ok(Action::Shift(Some(arg.to_string()))),
            "LA" => Ok(Action::LeftArc(arg.to_string())),
            "RA" => Ok(Action::RightArc(arg.to_string())),
            _ => Err(bad()),
        }
    }
}

/// Renders one action sequence as a line of the actions text format.
pub fn format_actions(actions: &[Action]) -> String {
    actions.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

/// Parses one line of the actions text format.
pub fn parse_actions(line: &str) -> Result<Vec<Action>> {
    line.split_whitespace().map(str::parse).collect()
}

/// Dense bijection between actions and integer ids. Id 0 is always the
/// end-of-sequence symbol.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionVocab {
    actions: Vec<Action>,
    index: HashMap<Action, usize>,
}

impl ActionVocab {
    /// Builds the vocabulary of every action observed in `sequences`.
    /// Ids are assigned in sorted order after the end symbol, so the
    /// result does not depend on corpus order.
    pub fn from_sequences<'a, I>(sequences: I) -> Self
    where
        I: IntoIterator<Item = &'a [Action]>,
    {
        let mut seen: Vec<Action> = sequences
            .into_iter()
            .flat_map(|s| s.iter().cloned())
            .filter(|a| *a != Action::End)
            .collect();
        seen.sort();
        seen.dedup();
        Self::from_actions(seen)
    }

    /// Builds a vocabulary from an explicit list. The end symbol is
    /// moved to id 0; duplicates are dropped keeping first occurrence.
    pub fn from_actions(actions: impl IntoIterator<Item = Action>) -> Self {
        let mut list = vec![Action::End];
        let mut index = HashMap::new();
        index.insert(Action::End, 0);
        for a in actions {
            if !index.contains_key(&a) {
                index.insert(a.clone(), list.len());
                list.push(a);
            }
        }
        ActionVocab { actions: list, index }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn end_id(&self) -> usize {
        0
    }

    pub fn id(&self, action: &Action) -> Option<usize> {
        self.index.get(action).copied()
    }

    pub fn action(&self, id: usize) -> &Action {
        &self.actions[id]
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn encode(&self, actions: &[Action]) -> Result<Vec<usize>> {
        actions
            .iter()
            .map(|a| self.id(a).ok_or_else(|| Error::UnknownAction(a.to_string())))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<Action> {
        ids.iter().map(|&i| self.actions[i].clone()).collect()
    }

    /// Labels of every arc action in the vocabulary.
    pub fn labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = self
            .actions
            .iter()
            .filter_map(|a| a.label().map(str::to_string))
            .collect();
        labels.sort();
        labels.dedup();
        labels
    }
}

/// Which optional effects a transition system permits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionConfig {
    pub allow_reduce: bool,
    pub allow_swap: bool,
}

impl TransitionConfig {
    /// SHIFT, LEFT-ARC and RIGHT-ARC only.
    pub fn arc_standard() -> Self {
        Self::default()
    }

    pub fn all() -> Self {
        TransitionConfig {
            allow_reduce: true,
            allow_swap: true,
        }
    }

    pub fn enables(&self, effect: Effect) -> bool {
        match effect {
            Effect::Reduce => self.allow_reduce,
            Effect::Swap => self.allow_swap,
            _ => true,
        }
    }

    /// Whether `action` may be applied in `state` under this configuration.
    pub fn permits(&self, state: &ParserState, action: &Action) -> bool {
        match action.effect() {
            None => state.is_terminal(),
            Some(effect) => self.enables(effect) && state.check(action).is_ok(),
        }
    }

    /// Ids of all vocabulary actions permitted in `state`, ascending.
    pub fn valid_actions(&self, state: &ParserState, vocab: &ActionVocab) -> Vec<usize> {
        // Effects are checked once; labels and decorations never matter.
        let mut allowed = [false; 6];
        for (slot, probe) in [
            Action::shift(),
            Action::LeftArc(String::new()),
            Action::RightArc(String::new()),
            Action::Reduce,
            Action::Swap,
            Action::End,
        ]
        .iter()
        .enumerate()
        {
            allowed[slot] = self.permits(state, probe);
        }
        let slot = |a: &Action| match a {
            Action::Shift(_) => 0,
            Action::LeftArc(_) => 1,
            Action::RightArc(_) => 2,
            Action::Reduce => 3,
            Action::Swap => 4,
            Action::End => 5,
        };
        (0..vocab.len()).filter(|&id| allowed[slot(vocab.action(id))]).collect()
    }
}

/// One configuration of the transition machine.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ParserState {
    stack: Vec<usize>,
    buffer: Vec<usize>,
    heads: Vec<Option<(usize, String)>>,
    step: usize,
}

impl ParserState {
    pub fn new(n_words: usize) -> Result<Self> {
        if n_words == 0 {
            return Err(Error::InvalidSentence("sentence has no words".into()));
        }
        Ok(ParserState {
            stack: vec![ROOT],
            buffer: (1..=n_words).collect(),
            heads: vec![None; n_words + 1],
            step: 0,
        })
    }

    /// Stack from bottom to top.
    pub fn stack(&self) -> &[usize] {
        &self.stack
    }

    /// Buffer from front to back.
    pub fn buffer(&self) -> &[usize] {
        &self.buffer
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn n_words(&self) -> usize {
        self.heads.len() - 1
    }

    pub fn head(&self, dependent: usize) -> Option<(usize, &str)> {
        self.heads[dependent].as_ref().map(|(h, l)| (*h, l.as_str()))
    }

    /// All arcs as `(head, dependent, label)`, ordered by dependent.
    pub fn arcs(&self) -> Vec<(usize, usize, &str)> {
        self.heads
            .iter()
            .enumerate()
            .filter_map(|(d, a)| a.as_ref().map(|(h, l)| (*h, d, l.as_str())))
            .collect()
    }

    /// Top of the stack (`s0`).
    pub fn s0(&self) -> Option<usize> {
        self.stack.last().copied()
    }

    /// Second item from the top (`s1`).
    pub fn s1(&self) -> Option<usize> {
        self.stack.len().checked_sub(2).map(|i| self.stack[i])
    }

    pub fn is_terminal(&self) -> bool {
        self.buffer.is_empty() && self.stack == [ROOT]
    }

    /// Words that are neither on the stack nor in the buffer.
    pub fn reduced(&self) -> Vec<usize> {
        (1..self.heads.len())
            .filter(|i| !self.stack.contains(i) && !self.buffer.contains(i))
            .collect()
    }

    /// Structural precondition of `action`, ignoring whether optional
    /// effects are enabled.
    fn check(&self, action: &Action) -> std::result::Result<(), &'static str> {
        let depth = self.stack.len();
        match action {
            Action::Shift(_) => {
                if self.buffer.is_empty() {
                    return Err("buffer is empty");
                }
            }
            Action::LeftArc(_) => {
                if depth < 3 {
                    return Err("LEFT-ARC needs two words on the stack");
                }
            }
            Action::RightArc(_) => {
                if depth < 2 {
                    return Err("RIGHT-ARC needs a word on the stack");
                }
                if depth == 2 && !self.buffer.is_empty() {
                    return Err("root attachment needs an empty buffer");
                }
            }
            Action::Reduce => {
                if depth < 2 {
                    return Err("REDUCE needs a word on the stack");
                }
            }
            Action::Swap => {
                if depth < 3 {
                    return Err("SWAP needs two words on the stack");
                }
                if self.stack[depth - 2] > self.stack[depth - 1] {
                    return Err("SWAP needs s1 to precede s0");
                }
            }
            Action::End => {
                if !self.is_terminal() {
                    return Err("end of sequence in a non-terminal state");
                }
            }
        }
        Ok(())
    }

    /// Applies `action`, returning the successor state.
    pub fn apply(&self, action: &Action) -> Result<ParserState> {
        self.check(action).map_err(|reason| Error::InvalidTransition {
            action: action.to_string(),
            step: self.step,
            reason: reason.to_string(),
        })?;
        let mut next = self.clone();
        next.step += 1;
        let depth = next.stack.len();
        match action {
            Action::Shift(_) => {
                let front = next.buffer.remove(0);
                next.stack.push(front);
            }
            Action::LeftArc(label) => {
                let s1 = next.stack.remove(depth - 2);
                next.heads[s1] = Some((next.stack[depth - 2], label.clone()));
            }
            Action::RightArc(label) => {
                let s0 = next.stack.pop().unwrap();
                next.heads[s0] = Some((next.stack[depth - 2], label.clone()));
            }
            Action::Reduce => {
                next.stack.pop();
            }
            Action::Swap => {
                let s1 = next.stack.remove(depth - 2);
                next.buffer.insert(0, s1);
            }
            Action::End => {}
        }
        Ok(next)
    }

    /// Applies a whole sequence. Nothing may follow the end symbol.
    pub fn replay(n_words: usize, actions: &[Action]) -> Result<ParserState> {
        let mut state = ParserState::new(n_words)?;
        for (i, action) in actions.iter().enumerate() {
            if *action == Action::End && i + 1 != actions.len() {
                return Err(Error::InvalidTransition {
                    action: actions[i + 1].to_string(),
                    step: i + 1,
                    reason: "action after end of sequence".into(),
                });
            }
            state = state.apply(action)?;
        }
        Ok(state)
    }
}

/// Head and label for every word of a sentence; a tree rooted at [`ROOT`].
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DepGraph {
    heads: Vec<usize>,
    labels: Vec<String>,
}

impl DepGraph {
    /// `heads[i]` and `labels[i]` belong to word `i + 1`.
    pub fn new(heads: Vec<usize>, labels: Vec<String>) -> Result<Self> {
        let graph = DepGraph { heads, labels };
        graph.validate()?;
        Ok(graph)
    }

    fn validate(&self) -> Result<()> {
        let n = self.heads.len();
        if n == 0 {
            return Err(Error::MalformedTree("no words".into()));
        }
        if self.labels.len() != n {
            return Err(Error::MalformedTree(format!(
                "{} heads but {} labels",
                n,
                self.labels.len()
            )));
        }
        for (i, &h) in self.heads.iter().enumerate() {
            if h > n {
                return Err(Error::MalformedTree(format!(
                    "word {} has head {h} outside 0..={n}",
                    i + 1
                )));
            }
            if h == i + 1 {
                return Err(Error::MalformedTree(format!("word {h} heads itself")));
            }
        }
        let roots = self.heads.iter().filter(|&&h| h == ROOT).count();
        if roots != 1 {
            return Err(Error::MalformedTree(format!(
                "expected exactly one root word, found {roots}"
            )));
        }
        for start in 1..=n {
            let mut cur = start;
            for _ in 0..=n {
                cur = self.heads[cur - 1];
                if cur == ROOT {
                    break;
                }
            }
            if cur != ROOT {
                return Err(Error::MalformedTree(format!("word {start} is on a cycle")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    /// Head of word `i` (1-based).
    pub fn head(&self, i: usize) -> usize {
        self.heads[i - 1]
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i - 1]
    }

    pub fn heads(&self) -> &[usize] {
        &self.heads
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Dependents of `head` in sentence order.
    pub fn dependents(&self, head: usize) -> impl Iterator<Item = usize> + '_ {
        (1..=self.len()).filter(move |&d| self.heads[d - 1] == head)
    }
}

/// Runs `actions` over `sentence` and returns the resulting tree.
pub fn recover_graph(sentence: &Sentence, actions: &[Action]) -> Result<DepGraph> {
    let state = ParserState::replay(sentence.len(), actions)?;
    let headless: Vec<usize> = (1..=sentence.len()).filter(|&i| state.head(i).is_none()).collect();
    if !headless.is_empty() || !state.is_terminal() {
        return Err(Error::IncompleteParse(headless));
    }
    let (heads, labels) = (1..=sentence.len())
        .map(|i| {
            let (h, l) = state.head(i).unwrap();
            (h, l.to_string())
        })
        .unzip();
    DepGraph::new(heads, labels)
}
