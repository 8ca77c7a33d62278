use std::cmp::Ordering;

use ndarray::Array2;

use super::checkpoint::Checkpoint;
use crate::data::{TreebankEntry, WordVocab};
use crate::error::{Error, Result};
use crate::model::{DecoderCache, EncodedSentence, Model};
use crate::plan::step_masks;
use crate::transition::{recover_graph, Action, ActionVocab, DepGraph, ParserState, Sentence, TransitionConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecodeOptions {
    /// 1 is constrained greedy decoding.
    pub beam: usize,
    /// Rank finished hypotheses by mean instead of total log-probability.
    pub len_norm: bool,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            beam: 1,
            len_norm: false,
        }
    }
}

/// Result of decoding one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    /// Actions including the final end symbol.
    pub actions: Vec<Action>,
    pub graph: DepGraph,
    /// Sum of per-step log-probabilities renormalized over valid actions.
    pub log_prob: f64,
}

/// A partial parse in the beam.
#[derive(Clone, Debug)]
pub struct BeamItem {
    pub ids: Vec<usize>,
    pub log_prob: f64,
    pub state: ParserState,
    pub finished: bool,
    cache: DecoderCache<f32>,
}

impl BeamItem {
    fn rank(&self, len_norm: bool) -> f64 {
        if len_norm && !self.ids.is_empty() {
            self.log_prob / self.ids.len() as f64
        } else {
            self.log_prob
        }
    }
}

/// Borrowed view of everything needed to parse.
#[derive(Clone, Copy)]
pub struct Parser<'a> {
    pub model: &'a Model<f32>,
    pub words: &'a WordVocab,
    pub actions: &'a ActionVocab,
    pub transitions: TransitionConfig,
}

impl<'a> Parser<'a> {
    pub fn new(checkpoint: &'a Checkpoint) -> Self {
        Parser {
            model: &checkpoint.model,
            words: &checkpoint.words,
            actions: &checkpoint.actions,
            transitions: checkpoint.transitions,
        }
    }

    pub fn decode(
        &self,
        sentence: &Sentence,
        external: Option<&Array2<f32>>,
        options: DecodeOptions,
    ) -> Result<Decoded> {
        let word_ids = self.words.encode(sentence);
        let encoded = self.model.prepare(&word_ids, external);
        let width = options.beam.max(1);
        let mut best = self.search(&encoded, sentence.len(), width, options.len_norm)?;
        if width > 1 {
            // Beam search can prune the greedy path; never return less than it.
            let greedy = self.search(&encoded, sentence.len(), 1, options.len_norm)?;
            if greedy.rank(options.len_norm) > best.rank(options.len_norm) {
                best = greedy;
            }
        }
        let actions = self.actions.decode(&best.ids);
        let graph = recover_graph(sentence, &actions)?;
        Ok(Decoded {
            actions,
            graph,
            log_prob: best.log_prob,
        })
    }

    fn search(&self, encoded: &EncodedSentence<f32>, n_words: usize, width: usize, len_norm: bool) -> Result<BeamItem> {
        let specs = &self.model.config.head_specs;
        let end = self.actions.end_id();
        let mut beam = vec![BeamItem {
            ids: Vec::new(),
            log_prob: 0.0,
            state: ParserState::new(n_words)?,
            finished: false,
            cache: self.model.empty_cache(),
        }];
        // Arc-standard needs exactly 2N+1 steps; REDUCE and SWAP can lengthen this.
        let limit = 4 * n_words * (n_words + 1) + 8;
        for _ in 0..limit {
            if beam.iter().all(|b| b.finished) {
                break;
            }
            // (rank, log-probability, parent, action)
            let mut candidates: Vec<(f64, f64, usize, Option<usize>)> = Vec::new();
            for (parent, item) in beam.iter_mut().enumerate() {
                if item.finished {
                    candidates.push((item.rank(len_norm), item.log_prob, parent, None));
                    continue;
                }
                let masks = step_masks(&item.state, specs);
                let input = item.ids.last().copied().unwrap_or(end);
                let logp = self.model.step(encoded, &mut item.cache, input, &masks);
                let valid = self.transitions.valid_actions(&item.state, self.actions);
                let max = valid.iter().map(|&a| logp[a] as f64).fold(f64::NEG_INFINITY, f64::max);
                let lse = max + valid.iter().map(|&a| (logp[a] as f64 - max).exp()).sum::<f64>().ln();
                for &a in &valid {
                    let log_prob = item.log_prob + logp[a] as f64 - lse;
                    let rank = if len_norm {
                        log_prob / (item.ids.len() + 1) as f64
                    } else {
                        log_prob
                    };
                    candidates.push((rank, log_prob, parent, Some(a)));
                }
            }
            candidates.sort_by(|x, y| {
                y.0.total_cmp(&x.0)
                    .then_with(|| x.3.cmp(&y.3))
                    .then_with(|| x.2.cmp(&y.2))
            });
            candidates.truncate(width);
            let mut next = Vec::with_capacity(candidates.len());
            for (_, log_prob, parent, action) in candidates {
                let item = &beam[parent];
                match action {
                    None => next.push(item.clone()),
                    Some(a) => {
                        let mut ids = item.ids.clone();
                        ids.push(a);
                        next.push(BeamItem {
                            ids,
                            log_prob,
                            state: item.state.apply(self.actions.action(a))?,
                            finished: a == end,
                            cache: item.cache.clone(),
                        });
                    }
                }
            }
            if next.is_empty() {
                return Err(Error::Config("no valid action for any hypothesis".into()));
            }
            beam = next;
        }
        beam.into_iter()
            .filter(|b| b.finished)
            .max_by(|x, y| match x.rank(len_norm).total_cmp(&y.rank(len_norm)) {
                // keep the earlier (better-sorted) item on ties
                Ordering::Equal => Ordering::Greater,
                o => o,
            })
            .ok_or_else(|| Error::Config("decoding did not terminate".into()))
    }

    /// Parses every sentence of a treebank, keeping ids and tags.
    pub fn parse_treebank(
        &self,
        treebank: &[TreebankEntry],
        external: Option<&[Array2<f32>]>,
        options: DecodeOptions,
    ) -> Result<Vec<TreebankEntry>> {
        treebank
            .iter()
            .enumerate()
            .map(|(i, entry)| {
                let decoded = self.decode(&entry.sentence, external.map(|e| &e[i]), options)?;
                Ok(entry.with_graph(decoded.graph))
            })
            .collect()
    }
}
