use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::transition::{DepGraph, Sentence};

/// One annotated sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreebankEntry {
    pub id: String,
    pub sentence: Sentence,
    pub graph: DepGraph,
    /// UPOS column per word (`_` when absent).
    pub upos: Vec<String>,
}

impl TreebankEntry {
    /// Whether word `i` (1-based) is punctuation.
    pub fn is_punct(&self, i: usize) -> bool {
        self.upos[i - 1] == "PUNCT"
    }

    /// Same sentence with a different tree.
    pub fn with_graph(&self, graph: DepGraph) -> Self {
        TreebankEntry { graph, ..self.clone() }
    }
}

pub type Treebank = Vec<TreebankEntry>;

struct Pending {
    id: Option<String>,
    forms: Vec<String>,
    upos: Vec<String>,
    heads: Vec<usize>,
    labels: Vec<String>,
}

impl Pending {
    fn new() -> Self {
        Pending {
            id: None,
            forms: Vec::new(),
            upos: Vec::new(),
            heads: Vec::new(),
            labels: Vec::new(),
        }
    }

    fn is_empty(&self) -> bool {
        self.forms.is_empty()
    }

    fn finish(self, ordinal: usize) -> Result<TreebankEntry> {
        let id = self.id.unwrap_or_else(|| ordinal.to_string());
        let structure = |message: String| Error::Structure {
            id: id.clone(),
            message,
        };
        let sentence = Sentence::new(self.forms).map_err(|e| structure(e.to_string()))?;
        let graph = DepGraph::new(self.heads, self.labels).map_err(|e| structure(e.to_string()))?;
        Ok(TreebankEntry {
            id,
            sentence,
            graph,
            upos: self.upos,
        })
    }
}

/// Reads a 10-column CoNLL-U file. Multiword-token and empty-node lines
/// are skipped; `# sent_id = ...` comments name the sentences.
pub fn read_conllu(path: &Path) -> Result<Treebank> {
    let reader = BufReader::new(fs::File::open(path)?);
    let display = path.display().to_string();
    let mut out = Vec::new();
    let mut cur = Pending::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let parse_err = |message: String| Error::Parse {
            path: display.clone(),
            line: lineno,
            message,
        };
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() {
            if !cur.is_empty() {
                out.push(std::mem::replace(&mut cur, Pending::new()).finish(out.len() + 1)?);
            } else {
                cur = Pending::new();
            }
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            if let Some(id) = comment.trim().strip_prefix("sent_id") {
                cur.id = Some(id.trim_start_matches([' ', '=']).trim().to_string());
            }
            continue;
        }
        let cols: Vec<&str> = trimmed.split('\t').collect();
        if cols.len() != 10 {
            return Err(parse_err(format!("expected 10 columns, found {}", cols.len())));
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let idx: usize = cols[0]
            .parse()
            .map_err(|_| parse_err(format!("bad ID {:?}", cols[0])))?;
        if idx != cur.forms.len() + 1 {
            return Err(parse_err(format!(
                "word ID {idx} out of sequence, expected {}",
                cur.forms.len() + 1
            )));
        }
        let head: usize = cols[6]
            .parse()
            .map_err(|_| parse_err(format!("bad HEAD {:?}", cols[6])))?;
        cur.forms.push(cols[1].to_string());
        cur.upos.push(cols[3].to_string());
        cur.heads.push(head);
        cur.labels.push(cols[7].to_string());
    }
    if !cur.is_empty() {
        out.push(cur.finish(out.len() + 1)?);
    }
    Ok(out)
}

/// Writes canonical CoNLL-U: ID, FORM, UPOS, HEAD and DEPREL are filled,
/// every other column is `_`.
pub fn write_conllu(treebank: &[TreebankEntry], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for entry in treebank {
        writeln!(out, "# sent_id = {}", entry.id)?;
        for i in 1..=entry.sentence.len() {
            writeln!(
                out,
                "{}\t{}\t_\t{}\t_\t_\t{}\t{}\t_\t_",
                i,
                entry.sentence.word(i),
                entry.upos[i - 1],
                entry.graph.head(i),
                entry.graph.label(i)
            )?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}
