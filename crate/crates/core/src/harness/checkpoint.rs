use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::WordVocab;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, Params};
use crate::oracle::ShiftVocab;
use crate::transition::{Action, ActionVocab, TransitionConfig};

const FORMAT: &str = "stackformer-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A trained parser: model, vocabularies and bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub words: WordVocab,
    pub actions: ActionVocab,
    pub shift_vocab: ShiftVocab,
    pub transitions: TransitionConfig,
    pub updates: usize,
    pub epoch: usize,
    pub dev_las: Option<f64>,
    /// Sources of an averaged checkpoint.
    pub provenance: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: [usize; 2],
    data: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct Stored {
    format: String,
    version: u32,
    config: ModelConfig,
    words: WordVocab,
    actions: Vec<String>,
    shift_vocab: Vec<String>,
    transitions: TransitionConfig,
    updates: usize,
    epoch: usize,
    dev_las: Option<f64>,
    provenance: Vec<String>,
    tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let stored = Stored {
            format: FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.model.config.clone(),
            words: self.words.clone(),
            actions: self.actions.actions().iter().map(Action::to_string).collect(),
            shift_vocab: self.shift_vocab.words().to_vec(),
            transitions: self.transitions,
            updates: self.updates,
            epoch: self.epoch,
            dev_las: self.dev_las,
            provenance: self.provenance.clone(),
            tensors: self
                .model
                .params
                .named()
                .into_iter()
                .map(|(name, t)| TensorRecord {
                    name,
                    shape: [t.nrows(), t.ncols()],
                    data: t.iter().copied().collect(),
                })
                .collect(),
        };
        let mut out = BufWriter::new(fs::File::create(path)?);
        serde_json::to_writer(&mut out, &stored)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bad = |message: String| Error::Checkpoint {
            path: path.to_path_buf(),
            message,
        };
        let stored: Stored =
            serde_json::from_reader(BufReader::new(fs::File::open(path)?)).map_err(|e| bad(e.to_string()))?;
        if stored.format != FORMAT {
            return Err(bad(format!("not a checkpoint (format {:?})", stored.format)));
        }
        if stored.version != CHECKPOINT_VERSION {
            return Err(bad(format!(
                "version {} is not supported (expected {CHECKPOINT_VERSION})",
                stored.version
            )));
        }
        stored.config.validate().map_err(|e| bad(e.to_string()))?;
        let actions = stored
            .actions
            .iter()
            .map(|a| a.parse::<Action>())
            .collect::<Result<Vec<_>>>()
            .map_err(|e| bad(e.to_string()))?;
        if actions.first() != Some(&Action::End) {
            return Err(bad("action vocabulary must start with the end symbol".into()));
        }
        let actions = ActionVocab::from_actions(actions);
        if actions.len() != stored.config.action_vocab || stored.words.len() != stored.config.word_vocab {
            return Err(bad("vocabulary sizes disagree with the model configuration".into()));
        }
        let mut params = Params::<f32>::init(&stored.config, &mut ChaCha8Rng::seed_from_u64(0));
        let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
        if names.len() != stored.tensors.len() {
            return Err(bad(format!(
                "{} tensors stored, {} expected",
                stored.tensors.len(),
                names.len()
            )));
        }
        for ((name, slot), record) in names.iter().zip(params.tensors_mut()).zip(stored.tensors) {
            if *name != record.name || slot.dim() != (record.shape[0], record.shape[1]) {
                return Err(bad(format!(
                    "tensor {} {:?} does not match expected {name} {:?}",
                    record.name,
                    record.shape,
                    slot.dim()
                )));
            }
            *slot = Array2::from_shape_vec(slot.raw_dim(), record.data).map_err(|e| bad(e.to_string()))?;
        }
        if !params.all_finite() {
            return Err(bad("non-finite parameter values".into()));
        }
        Ok(Checkpoint {
            model: Model {
                config: stored.config,
                params,
            },
            words: stored.words.reindex(),
            actions,
            shift_vocab: ShiftVocab::new(stored.shift_vocab),
            transitions: stored.transitions,
            updates: stored.updates,
            epoch: stored.epoch,
            dev_las: stored.dev_las,
            provenance: stored.provenance,
        })
    }
}

/// Elementwise mean of the parameters of `inputs`, which must share
/// configuration and vocabularies. `names` label the inputs in the
/// provenance record.
pub fn average(inputs: &[Checkpoint], names: &[String]) -> Result<Checkpoint> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::Incompatible("no checkpoints to average".into()))?;
    for (i, c) in inputs.iter().enumerate().skip(1) {
        let which = names.get(i).cloned().unwrap_or_else(|| format!("input {}", i + 1));
        if c.model.config != first.model.config {
            return Err(Error::Incompatible(format!("{which}: model configuration differs")));
        }
        if c.words != first.words || c.actions != first.actions || c.shift_vocab != first.shift_vocab {
            return Err(Error::Incompatible(format!("{which}: vocabularies differ")));
        }
        if c.transitions != first.transitions {
            return Err(Error::Incompatible(format!("{which}: transition systems differ")));
        }
    }
    let mut params = first.model.params.zeros_like();
    // values are sorted before summing, so input order cannot change the result
    let count = inputs.len() as f64;
    let sources: Vec<Vec<&Array2<f32>>> = inputs.iter().map(|c| c.model.params.tensors()).collect();
    for (k, dst) in params.tensors_mut().into_iter().enumerate() {
        for (idx, v) in dst.indexed_iter_mut() {
            let mut values: Vec<f64> = sources.iter().map(|s| s[k][idx] as f64).collect();
            values.sort_by(|a, b| a.total_cmp(b));
            *v = (values.iter().sum::<f64>() / count) as f32;
        }
    }
    Ok(Checkpoint {
        model: Model {
            config: first.model.config.clone(),
            params,
        },
        updates: inputs.iter().map(|c| c.updates).max().unwrap_or(0),
        epoch: inputs.iter().map(|c| c.epoch).max().unwrap_or(0),
        dev_las: None,
        provenance: names.to_vec(),
        ..first.clone()
    })
}

/// Loads and averages checkpoint files.
pub fn checkpoint_average(paths: &[PathBuf]) -> Result<Checkpoint> {
    let inputs = paths.iter().map(|p| Checkpoint::load(p)).collect::<Result<Vec<_>>>()?;
    let names: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
    average(&inputs, &names)
}
