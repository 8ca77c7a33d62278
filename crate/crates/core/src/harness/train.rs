use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::decode::{DecodeOptions, Parser};
use super::eval::evaluate;
use super::schedule::{Adam, TrainSchedule};
use crate::data::{build_examples, build_vocabs, make_batches, shuffle_batches, unk_replace, TreebankEntry};
use crate::error::{Error, Result};
use crate::model::{CrossPath, Example, Model, ModelConfig};
use crate::oracle::build_shift_vocab;
use crate::transition::TransitionConfig;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub schedule: TrainSchedule,
    /// Architecture; vocabulary sizes are filled in from the training data.
    pub model: ModelConfig,
    /// Number of frequent words that decorate SHIFT (0 disables decoration).
    pub shift_words: usize,
    pub transitions: TransitionConfig,
    /// How many best-by-LAS checkpoints to keep on disk.
    pub keep_best: usize,
    /// Skip punctuation when scoring the dev set.
    pub exclude_punct: bool,
}

impl TrainConfig {
    pub fn new(model: ModelConfig, schedule: TrainSchedule) -> Self {
        TrainConfig {
            schedule,
            model,
            shift_words: 0,
            transitions: TransitionConfig::arc_standard(),
            keep_best: 3,
            exclude_punct: true,
        }
    }
}

/// Corpora for a run. External vectors, when given, align with the treebanks.
#[derive(Clone, Copy)]
pub struct TrainData<'a> {
    pub train: &'a [TreebankEntry],
    pub dev: &'a [TreebankEntry],
    pub train_external: Option<&'a [Array2<f32>]>,
    pub dev_external: Option<&'a [Array2<f32>]>,
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss per token, with dropout.
    pub loss: f64,
    /// Teacher-forced dev action accuracy.
    pub action_acc: f64,
    pub uas: f64,
    pub las: f64,
    /// Learning rate of the last update.
    pub lr: f64,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{:.4}\t{:.4}\t{:.2}\t{:.2}\t{:.3e}",
            self.epoch, self.loss, self.action_acc, self.uas, self.las, self.lr
        )
    }
}

pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// Checkpoint with the best dev LAS (earliest on ties).
    pub best: Checkpoint,
    pub last: Checkpoint,
    /// Where the best checkpoint was written, when an output directory was given.
    pub best_path: Option<PathBuf>,
}

/// Best-by-LAS checkpoints kept on disk.
struct Keeper {
    dir: PathBuf,
    keep: usize,
    /// `(las, epoch)`, best first
    kept: Vec<(f64, usize)>,
}

impl Keeper {
    fn path(&self, epoch: usize) -> PathBuf {
        self.dir.join(format!("checkpoint_epoch{epoch}.json"))
    }

    fn offer(&mut self, checkpoint: &Checkpoint, las: f64) -> Result<()> {
        let epoch = checkpoint.epoch;
        let pos = self.kept.iter().position(|&(l, _)| las > l).unwrap_or(self.kept.len());
        if pos >= self.keep {
            return Ok(());
        }
        checkpoint.save(&self.path(epoch))?;
        self.kept.insert(pos, (las, epoch));
        while self.kept.len() > self.keep {
            let (_, dropped) = self.kept.pop().unwrap();
            fs::remove_file(self.path(dropped))?;
        }
        Ok(())
    }
}

/// Trains a parser and selects the epoch with the best greedy dev LAS.
pub fn train(config: &TrainConfig, data: TrainData<'_>, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    let schedule = &config.schedule;
    if data.train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    if schedule.epochs == 0 {
        return Err(Error::Config("at least one epoch is required".into()));
    }
    let shift_vocab = build_shift_vocab(data.train.iter().map(|e| &e.sentence), config.shift_words);
    let (words, actions) = build_vocabs(data.train, &shift_vocab)?;
    let mut model_config = config.model.clone();
    model_config.word_vocab = words.len();
    model_config.action_vocab = actions.len();
    let specs = model_config.head_specs.clone();
    let (train_examples, _) = build_examples(data.train, &words, &actions, &shift_vocab, &specs, data.train_external)?;
    let (dev_examples, _) = build_examples(data.dev, &words, &actions, &shift_vocab, &specs, data.dev_external)?;
    if train_examples.is_empty() {
        return Err(Error::Config("no usable training sentence".into()));
    }
    log::info!(
        "{} training sentences, {} words, {} actions",
        train_examples.len(),
        words.len(),
        actions.len()
    );

    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut model: Model<f32> = Model::new(model_config, &mut rng)?;
    rng.set_stream(1);
    let mut adam = Adam::new(&model.params, schedule);
    let mut batches = make_batches(&train_examples, schedule.token_budget);

    let mut keeper = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            Some(Keeper {
                dir: dir.to_path_buf(),
                keep: config.keep_best.max(1),
                kept: Vec::new(),
            })
        }
        None => None,
    };
    let mut log_file = match out_dir {
        Some(dir) => Some(fs::File::create(dir.join("train.log"))?),
        None => None,
    };

    let snapshot = |model: &Model<f32>, updates: usize, epoch: usize, las: f64| Checkpoint {
        model: model.clone(),
        words: words.clone(),
        actions: actions.clone(),
        shift_vocab: shift_vocab.clone(),
        transitions: config.transitions,
        updates,
        epoch,
        dev_las: Some(las),
        provenance: Vec::new(),
    };

    let mut history = Vec::with_capacity(schedule.epochs);
    let mut best: Option<Checkpoint> = None;
    let mut lr = 0.0;
    for epoch in 1..=schedule.epochs {
        shuffle_batches(&mut batches, &mut rng);
        let mut loss_sum = 0.0;
        let mut tokens = 0;
        for batch in &batches {
            let examples: Vec<Example> = batch
                .members
                .iter()
                .map(|&i| {
                    let mut ex = train_examples[i].clone();
                    ex.word_ids = unk_replace(&ex.word_ids, &words, schedule.unk_prob, &mut rng);
                    ex
                })
                .collect();
            let refs: Vec<&Example> = examples.iter().collect();
            let (stats, grad) = model.loss_and_grad(&refs, CrossPath::Planned, Some(&mut rng));
            let update = adam.updates() + 1;
            if !stats.loss_sum.is_finite() || !grad.all_finite() {
                return Err(Error::Divergence {
                    update,
                    loss: stats.mean(),
                });
            }
            lr = schedule.lr(update);
            adam.step(&mut model.params, &grad, lr);
            loss_sum += stats.loss_sum;
            tokens += stats.tokens;
        }

        let dev_refs: Vec<&Example> = dev_examples.iter().collect();
        let action_acc = model.evaluate(&dev_refs, CrossPath::Planned).accuracy();
        let parser = Parser {
            model: &model,
            words: &words,
            actions: &actions,
            transitions: config.transitions,
        };
        let predicted = parser.parse_treebank(data.dev, data.dev_external, DecodeOptions::default())?;
        let scores = evaluate(data.dev, &predicted, config.exclude_punct)?;
        let record = EpochRecord {
            epoch,
            loss: loss_sum / tokens.max(1) as f64,
            action_acc,
            uas: scores.uas(),
            las: scores.las(),
            lr,
        };
        log::info!("{record}");
        if let Some(f) = log_file.as_mut() {
            writeln!(f, "{record}")?;
            f.flush()?;
        }
        history.push(record);

        let current = snapshot(&model, adam.updates(), epoch, record.las);
        if let Some(keeper) = keeper.as_mut() {
            keeper.offer(&current, record.las)?;
            current.save(&keeper.dir.join("checkpoint_last.json"))?;
        }
        if best
            .as_ref()
            .is_none_or(|b| record.las > b.dev_las.unwrap_or(f64::NEG_INFINITY))
        {
            best = Some(current);
        }
    }

    let best = best.expect("at least one epoch ran");
    let best_path = keeper.as_ref().map(|k| k.path(best.epoch));
    let last_record = history.last().expect("at least one epoch ran");
    let last = snapshot(&model, adam.updates(), last_record.epoch, last_record.las);
    log::info!(
        "best dev LAS {:.2} at epoch {}",
        best.dev_las.unwrap_or(0.0),
        best.epoch
    );
    Ok(TrainOutcome {
        history,
        best,
        last,
        best_path,
    })
}
