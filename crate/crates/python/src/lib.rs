//! Python bindings: oracle, attention plans, training, parsing and scoring.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use stackformer::data::{read_conllu, synth, write_conllu};
use stackformer::harness::{
    checkpoint_average, evaluate as score, train as run_training, Checkpoint, DecodeOptions, Parser as CoreParser,
    TrainConfig, TrainData, TrainSchedule,
};
use stackformer::model::ModelConfig;
use stackformer::oracle::{decorate, oracle_actions, ShiftVocab};
use stackformer::plan::{compute_plan, parse_head_specs, variant_specs};
use stackformer::transition::{self, Action, DepGraph, Sentence};
use stackformer::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        e if e.is_validation() => PyValueError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_actions(actions: &[String]) -> PyResult<Vec<Action>> {
    actions.iter().map(|a| a.parse::<Action>().map_err(py_err)).collect()
}

/// Gold action sequence (ending with `</a>`) for a projective tree.
/// Heads are 1-based with 0 for the root; `shift_words` decorates SHIFT.
#[pyfunction]
#[pyo3(signature = (words, heads, labels, shift_words=None))]
fn oracle(
    words: Vec<String>,
    heads: Vec<usize>,
    labels: Vec<String>,
    shift_words: Option<Vec<String>>,
) -> PyResult<Vec<String>> {
    let sentence = Sentence::new(words).map_err(py_err)?;
    let graph = DepGraph::new(heads, labels).map_err(py_err)?;
    let actions = oracle_actions(&sentence, &graph).map_err(py_err)?;
    let vocab = ShiftVocab::new(shift_words.unwrap_or_default());
    let actions = decorate(&actions, &sentence, &vocab).map_err(py_err)?;
    Ok(actions.iter().map(ToString::to_string).collect())
}

/// Replays `actions` and returns `(heads, labels)`.
#[pyfunction]
fn recover_graph(words: Vec<String>, actions: Vec<String>) -> PyResult<(Vec<usize>, Vec<String>)> {
    let sentence = Sentence::new(words).map_err(py_err)?;
    let graph = transition::recover_graph(&sentence, &parse_actions(&actions)?).map_err(py_err)?;
    Ok((graph.heads().to_vec(), graph.labels().to_vec()))
}

/// Text rendering of the cross-attention masks for an action sequence.
#[pyfunction]
#[pyo3(signature = (n_words, actions, heads="stack,buffer"))]
fn plan_dump(n_words: usize, actions: Vec<String>, heads: &str) -> PyResult<String> {
    let specs = parse_head_specs(heads).map_err(py_err)?;
    let plan = compute_plan(n_words, &parse_actions(&actions)?, &specs).map_err(py_err)?;
    Ok(plan.dump())
}

/// Writes a synthetic projective treebank; returns the sentence count.
#[pyfunction]
#[pyo3(signature = (path, sentences=1000, seed=1, max_words=40))]
fn synth_conllu(path: PathBuf, sentences: usize, seed: u64, max_words: usize) -> PyResult<usize> {
    let treebank = synth::generate(&synth::SynthConfig {
        sentences,
        seed,
        max_words,
    });
    write_conllu(&treebank, &path).map_err(py_err)?;
    Ok(treebank.len())
}

/// `(UAS, LAS)` in percent of a predicted file against a gold file.
#[pyfunction]
#[pyo3(signature = (gold, predicted, include_punct=false))]
fn evaluate(gold: PathBuf, predicted: PathBuf, include_punct: bool) -> PyResult<(f64, f64)> {
    let gold = read_conllu(&gold).map_err(py_err)?;
    let predicted = read_conllu(&predicted).map_err(py_err)?;
    let scores = score(&gold, &predicted, !include_punct).map_err(py_err)?;
    Ok((scores.uas(), scores.las()))
}

/// Trains a desk-size parser; returns `(best checkpoint path, best dev LAS)`.
#[pyfunction]
#[pyo3(signature = (train, dev, out_dir, variant='c', epochs=10, shift_words=0, seed=1, token_budget=1024))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    train: PathBuf,
    dev: PathBuf,
    out_dir: PathBuf,
    variant: char,
    epochs: usize,
    shift_words: usize,
    seed: u64,
    token_budget: usize,
) -> PyResult<(String, f64)> {
    let specs = variant_specs(variant, 4).map_err(py_err)?;
    let schedule = TrainSchedule {
        epochs,
        seed,
        token_budget,
        ..TrainSchedule::desk()
    };
    let mut config = TrainConfig::new(ModelConfig::desk(specs, 0, 0), schedule);
    config.shift_words = shift_words;
    let train_tb = read_conllu(&train).map_err(py_err)?;
    let dev_tb = read_conllu(&dev).map_err(py_err)?;
    let outcome = py
        .detach(|| {
            run_training(
                &config,
                TrainData {
                    train: &train_tb,
                    dev: &dev_tb,
                    train_external: None,
                    dev_external: None,
                },
                Some(&out_dir),
            )
        })
        .map_err(py_err)?;
    let path = outcome.best_path.map(|p| p.display().to_string()).unwrap_or_default();
    Ok((path, outcome.best.dev_las.unwrap_or(0.0)))
}

/// `(heads, labels, actions, log_prob)` of one parsed sentence.
type Parsed = (Vec<usize>, Vec<String>, Vec<String>, f64);

/// A trained parser loaded from one checkpoint, or the average of several.
#[pyclass]
struct Parser {
    checkpoint: Checkpoint,
}

#[pymethods]
impl Parser {
    #[new]
    fn new(checkpoints: Vec<PathBuf>) -> PyResult<Self> {
        let checkpoint = match checkpoints.as_slice() {
            [one] => Checkpoint::load(one),
            _ => checkpoint_average(&checkpoints),
        }
        .map_err(py_err)?;
        Ok(Parser { checkpoint })
    }

    /// Action vocabulary in id order.
    #[getter]
    fn actions(&self) -> Vec<String> {
        self.checkpoint
            .actions
            .actions()
            .iter()
            .map(ToString::to_string)
            .collect()
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.checkpoint.epoch
    }

    /// Parses one tokenized sentence: `(heads, labels, actions, log_prob)`.
    #[pyo3(signature = (words, beam=1, len_norm=false))]
    fn parse(&self, py: Python<'_>, words: Vec<String>, beam: usize, len_norm: bool) -> PyResult<Parsed> {
        if beam == 0 {
            return Err(PyValueError::new_err("beam width must be at least 1"));
        }
        let sentence = Sentence::new(words).map_err(py_err)?;
        let decoded = py
            .detach(|| CoreParser::new(&self.checkpoint).decode(&sentence, None, DecodeOptions { beam, len_norm }))
            .map_err(py_err)?;
        Ok((
            decoded.graph.heads().to_vec(),
            decoded.graph.labels().to_vec(),
            decoded.actions.iter().map(ToString::to_string).collect(),
            decoded.log_prob,
        ))
    }

    /// Parses a CoNLL-U file into another, keeping sentence ids and words.
    #[pyo3(signature = (input, output, beam=1, len_norm=false))]
    fn parse_file(&self, py: Python<'_>, input: PathBuf, output: PathBuf, beam: usize, len_norm: bool) -> PyResult<()> {
        if beam == 0 {
            return Err(PyValueError::new_err("beam width must be at least 1"));
        }
        let treebank = read_conllu(&input).map_err(py_err)?;
        let predicted = py
            .detach(|| {
                CoreParser::new(&self.checkpoint).parse_treebank(&treebank, None, DecodeOptions { beam, len_norm })
            })
            .map_err(py_err)?;
        write_conllu(&predicted, &output).map_err(py_err)
    }
}

#[pymodule]
fn stackformer_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(oracle, m)?)?;
    m.add_function(wrap_pyfunction!(recover_graph, m)?)?;
    m.add_function(wrap_pyfunction!(plan_dump, m)?)?;
    m.add_function(wrap_pyfunction!(synth_conllu, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_class::<Parser>()?;
    Ok(())
}
