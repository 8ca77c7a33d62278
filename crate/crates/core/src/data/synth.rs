//! Seeded generator of projective toy treebanks.
//!
//! Sentences come from a small dependency grammar (subject, verb, object,
//! prepositional phrases, relative clauses, coordination). Whether a
//! prepositional phrase attaches to the object noun or to the verb depends
//! on a fixed compatibility between the preposition and the noun's class,
//! so correct attachment requires looking at specific earlier words.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TreebankEntry;
use crate::transition::{DepGraph, Sentence};

const NOUNS: usize = 96;
const NOUN_CLASSES: usize = 4;
const TRANSITIVE: usize = 24;
const INTRANSITIVE: usize = 16;
const ADJECTIVES: usize = 32;
const ADVERBS: usize = 16;
const DETERMINERS: usize = 6;
const PREPOSITIONS: usize = 8;

/// Sampling knobs for [`generate`].
#[derive(Clone, Copy, Debug)]
pub struct SynthConfig {
    pub sentences: usize,
    pub seed: u64,
    /// Upper bound on the number of words per sentence.
    pub max_words: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sentences: 1000,
            seed: 1,
            max_words: 40,
        }
    }
}

struct Node {
    word: String,
    upos: &'static str,
    label: &'static str,
    left: Vec<Node>,
    right: Vec<Node>,
}

impl Node {
    fn new(word: String, upos: &'static str, label: &'static str) -> Self {
        Node {
            word,
            upos,
            label,
            left: Vec::new(),
            right: Vec::new(),
        }
    }

    fn size(&self) -> usize {
        1 + self.left.iter().chain(&self.right).map(Node::size).sum::<usize>()
    }
}

/// Zipf-like choice of an index below `n`.
fn zipf<R: Rng>(rng: &mut R, n: usize) -> usize {
    let total: f64 = (1..=n).map(|i| 1.0 / i as f64).sum();
    let mut x = rng.gen::<f64>() * total;
    for i in 0..n {
        x -= 1.0 / (i + 1) as f64;
        if x <= 0.0 {
            return i;
        }
    }
    n - 1
}

fn noun_class(index: usize) -> usize {
    index % NOUN_CLASSES
}

/// Each preposition attaches to nouns of two classes and to the verb otherwise.
fn attaches_to_noun(prep: usize, noun: usize) -> bool {
    let c = noun_class(noun);
    c == prep % NOUN_CLASSES || c == (prep + 1) % NOUN_CLASSES
}

struct Grammar<'a, R> {
    rng: &'a mut R,
}

impl<R: Rng> Grammar<'_, R> {
    fn chance(&mut self, p: f64) -> bool {
        self.rng.gen::<f64>() < p
    }

    fn noun(&mut self, label: &'static str) -> (Node, usize) {
        let i = zipf(self.rng, NOUNS);
        let mut n = Node::new(format!("noun{i}"), "NOUN", label);
        if self.chance(0.7) {
            let d = zipf(self.rng, DETERMINERS);
            n.left.push(Node::new(format!("det{d}"), "DET", "det"));
        }
        let adjs = if self.chance(0.4) {
            1 + usize::from(self.chance(0.3))
        } else {
            0
        };
        for _ in 0..adjs {
            let a = zipf(self.rng, ADJECTIVES);
            // adjectives sit between determiner and noun
            n.left.push(Node::new(format!("adj{a}"), "ADJ", "amod"));
        }
        (n, i)
    }

    fn prep_phrase(&mut self, label: &'static str) -> (Node, usize) {
        let p = zipf(self.rng, PREPOSITIONS);
        let (mut n, _) = self.noun(label);
        n.left.insert(0, Node::new(format!("prep{p}"), "ADP", "case"));
        (n, p)
    }

    fn verb(&mut self, transitive: bool) -> Node {
        if transitive {
            let v = zipf(self.rng, TRANSITIVE);
            Node::new(format!("tverb{v}"), "VERB", "root")
        } else {
            let v = zipf(self.rng, INTRANSITIVE);
            Node::new(format!("iverb{v}"), "VERB", "root")
        }
    }

    /// Adds PPs after an optional object; each goes to the object or the verb.
    fn attach_pps(&mut self, verb: &mut Node, object: Option<(usize, usize)>, max: usize) {
        let count = (0..max).filter(|_| self.chance(0.45)).count();
        for _ in 0..count {
            let (pp, prep) = self.prep_phrase("obl");
            match object {
                Some((slot, noun)) if attaches_to_noun(prep, noun) => {
                    let mut pp = pp;
                    pp.label = "nmod";
                    verb.right[slot].right.push(pp);
                }
                _ => verb.right.push(pp),
            }
        }
    }

    fn clause(&mut self, depth: usize) -> Node {
        let transitive = self.chance(0.65);
        let mut verb = self.verb(transitive);
        let (mut subj, _) = self.noun("nsubj");
        if depth == 0 && self.chance(0.15) {
            let (mut other, _) = self.noun("conj");
            other.left.insert(0, Node::new("and".into(), "CCONJ", "cc"));
            subj.right.push(other);
        }
        verb.left.push(subj);
        if self.chance(0.25) {
            let a = zipf(self.rng, ADVERBS);
            verb.left.push(Node::new(format!("adv{a}"), "ADV", "advmod"));
        }
        let object = if transitive {
            let (mut obj, noun) = self.noun("obj");
            if depth == 0 && self.chance(0.2) {
                obj.right.push(self.relative_clause());
            }
            verb.right.push(obj);
            Some((verb.right.len() - 1, noun))
        } else {
            None
        };
        self.attach_pps(&mut verb, object, if depth == 0 { 2 } else { 1 });
        verb
    }

    /// `that VERB [NOUN]` modifying a noun.
    fn relative_clause(&mut self) -> Node {
        let transitive = self.chance(0.5);
        let mut verb = self.verb(transitive);
        verb.label = "acl";
        verb.left.push(Node::new("that".into(), "PRON", "nsubj"));
        if transitive {
            let (obj, _) = self.noun("obj");
            verb.right.push(obj);
        }
        verb
    }
}

fn linearize(node: &Node, head: usize, out: &mut Vec<(String, &'static str, usize, &'static str)>) {
    // reserve this node's slot after its left dependents
    let left_size: usize = node.left.iter().map(Node::size).sum();
    let me = out.len() + left_size + 1;
    for dep in &node.left {
        linearize(dep, me, out);
    }
    out.push((node.word.clone(), node.upos, head, node.label));
    for dep in &node.right {
        linearize(dep, me, out);
    }
}

/// Generates `config.sentences` projective sentences deterministically.
pub fn generate(config: &SynthConfig) -> Vec<TreebankEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::with_capacity(config.sentences);
    while out.len() < config.sentences {
        let mut root = Grammar { rng: &mut rng }.clause(0);
        root.right.push(Node::new(".".into(), "PUNCT", "punct"));
        if root.size() > config.max_words {
            continue;
        }
        let mut rows = Vec::new();
        linearize(&root, 0, &mut rows);
        let sentence = Sentence::new(rows.iter().map(|r| r.0.clone())).expect("non-empty");
        let graph = DepGraph::new(
            rows.iter().map(|r| r.2).collect(),
            rows.iter().map(|r| r.3.to_string()).collect(),
        )
        .expect("generator produces trees");
        out.push(TreebankEntry {
            id: format!("synth-{}-{}", config.seed, out.len() + 1),
            sentence,
            graph,
            upos: rows.iter().map(|r| r.1.to_string()).collect(),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::is_projective;

    #[test]
    fn trees_are_projective_and_deterministic() {
        let config = SynthConfig {
            sentences: 300,
            seed: 9,
            max_words: 40,
        };
        let a = generate(&config);
        assert_eq!(a, generate(&config));
        assert!(a.iter().all(|e| is_projective(&e.graph)));
        assert!(a.iter().all(|e| e.sentence.len() <= 40));
        let mut words: Vec<&String> = a.iter().flat_map(|e| e.sentence.tokens()).collect();
        words.sort();
        words.dedup();
        assert!(words.len() >= 100, "only {} distinct words", words.len());
    }

    #[test]
    fn simple_sentence_shape() {
        let config = SynthConfig {
            sentences: 50,
            seed: 2,
            max_words: 40,
        };
        for e in generate(&config) {
            let n = e.sentence.len();
            assert_eq!(e.sentence.word(n), ".");
            assert_eq!(e.graph.label(n), "punct");
            let root = (1..=n).find(|&i| e.graph.head(i) == 0).unwrap();
            assert!(e.sentence.word(root).contains("verb"));
        }
    }
}
