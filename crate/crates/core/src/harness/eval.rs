use std::fmt;

use crate::data::TreebankEntry;
use crate::error::{Error, Result};

/// Attachment counts over a corpus.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AttachmentScores {
    pub scored: usize,
    pub heads_correct: usize,
    pub labeled_correct: usize,
}

impl AttachmentScores {
    /// Unlabeled attachment score in percent.
    pub fn uas(&self) -> f64 {
        percent(self.heads_correct, self.scored)
    }

    /// Labeled attachment score in percent.
    pub fn las(&self) -> f64 {
        percent(self.labeled_correct, self.scored)
    }
}

fn percent(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

impl fmt::Display for AttachmentScores {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "UAS {:.2} ({}/{})\tLAS {:.2} ({}/{})",
            self.uas(),
            self.heads_correct,
            self.scored,
            self.las(),
            self.labeled_correct,
            self.scored
        )
    }
}

/// Scores `predicted` against `gold`. Punctuation (UPOS `PUNCT` in the gold
/// file) is skipped when `exclude_punct` is set.
pub fn evaluate(gold: &[TreebankEntry], predicted: &[TreebankEntry], exclude_punct: bool) -> Result<AttachmentScores> {
    if gold.len() != predicted.len() {
        return Err(Error::Alignment(format!(
            "{} gold sentences, {} predicted",
            gold.len(),
            predicted.len()
        )));
    }
    let mut scores = AttachmentScores::default();
    for (g, p) in gold.iter().zip(predicted) {
        if g.id != p.id || g.sentence.len() != p.sentence.len() {
            return Err(Error::Alignment(format!(
                "gold sentence {} ({} words) paired with {} ({} words)",
                g.id,
                g.sentence.len(),
                p.id,
                p.sentence.len()
            )));
        }
        for i in 1..=g.sentence.len() {
            if exclude_punct && g.is_punct(i) {
                continue;
            }
            scores.scored += 1;
            if g.graph.head(i) == p.graph.head(i) {
                scores.heads_correct += 1;
                if g.graph.label(i) == p.graph.label(i) {
                    scores.labeled_correct += 1;
                }
            }
        }
    }
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transition::{DepGraph, Sentence};

    fn entry(id: &str, heads: &[usize], labels: &[&str], upos: &[&str]) -> TreebankEntry {
        TreebankEntry {
            id: id.into(),
            sentence: Sentence::new((0..heads.len()).map(|i| format!("w{i}"))).unwrap(),
            graph: DepGraph::new(heads.to_vec(), labels.iter().map(|l| l.to_string()).collect()).unwrap(),
            upos: upos.iter().map(|u| u.to_string()).collect(),
        }
    }

    #[test]
    fn one_wrong_label_of_four() {
        let upos = ["X", "X", "X", "PUNCT"];
        let gold = entry("s", &[2, 0, 2, 2], &["det", "root", "obj", "punct"], &upos);
        let pred = entry("s", &[2, 0, 2, 2], &["det", "root", "nsubj", "punct"], &upos);
        let s = evaluate(std::slice::from_ref(&gold), std::slice::from_ref(&pred), false).unwrap();
        assert_eq!((s.uas(), s.las()), (100.0, 75.0));
        assert_eq!(s.to_string(), "UAS 100.00 (4/4)\tLAS 75.00 (3/4)");
        let s = evaluate(std::slice::from_ref(&gold), std::slice::from_ref(&gold), true).unwrap();
        assert_eq!((s.scored, s.uas(), s.las()), (3, 100.0, 100.0));
    }

    #[test]
    fn wrong_head_counts_against_both() {
        let gold = entry("s", &[2, 0, 2], &["a", "root", "b"], &["X"; 3]);
        let pred = entry("s", &[2, 0, 1], &["a", "root", "b"], &["X"; 3]);
        let s = evaluate(&[gold], &[pred], false).unwrap();
        assert_eq!((s.heads_correct, s.labeled_correct), (2, 2));
    }

    #[test]
    fn misaligned() {
        let a = entry("a", &[0], &["root"], &["X"]);
        let b = entry("b", &[0], &["root"], &["X"]);
        assert!(matches!(
            evaluate(std::slice::from_ref(&a), &[b], false),
            Err(Error::Alignment(_))
        ));
        assert!(matches!(
            evaluate(std::slice::from_ref(&a), &[], false),
            Err(Error::Alignment(_))
        ));
    }
}
