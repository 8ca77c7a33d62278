use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser as ClapParser, Subcommand, ValueEnum};

use stackformer::data::{check_embeddings, read_conllu, read_embeddings, synth, write_conllu};
use stackformer::harness::{
    checkpoint_average, evaluate, gradcheck, tiny_setup, train, Checkpoint, DecodeOptions, Parser, TrainConfig,
    TrainData, TrainSchedule,
};
use stackformer::model::ModelConfig;
use stackformer::oracle::{build_shift_vocab, decorate, oracle_actions, strip};
use stackformer::plan::{compute_plan, parse_head_specs, variant_specs, HeadSpec};
use stackformer::transition::{format_actions, parse_actions, recover_graph};
use stackformer::{Error, Result};

#[derive(ClapParser)]
#[command(
    name = "stackformer",
    version,
    about = "Transition-based dependency parser with stack and buffer attention heads"
)]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scale {
    Desk,
    Full,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic projective treebank.
    Synth {
        #[arg(long, default_value_t = 1000)]
        sentences: usize,
        #[arg(long, default_value_t = 40)]
        max_words: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a treebank to oracle action sequences.
    Oracle {
        input: PathBuf,
        /// One action sequence per projective sentence.
        #[arg(long)]
        actions: Option<PathBuf>,
        /// Decorate SHIFT with the K most frequent words.
        #[arg(long, default_value_t = 0)]
        shift_words: usize,
        #[arg(long)]
        shift_vocab: Option<PathBuf>,
    },
    /// Train a parser, keeping the best checkpoints by dev LAS.
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Scale::Desk)]
        scale: Scale,
        /// Head layout by ablation letter (a-h).
        #[arg(long, default_value = "c", conflicts_with = "heads")]
        variant: char,
        /// Explicit comma-separated head specs, e.g. `stack+pos,buffer,free,free`.
        #[arg(long)]
        heads: Option<String>,
        #[arg(long, default_value_t = 0)]
        shift_words: usize,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        warmup: Option<usize>,
        #[arg(long)]
        warmup_init_lr: Option<f64>,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        dropout: Option<f64>,
        #[arg(long)]
        unk_prob: Option<f64>,
        /// Score punctuation when selecting checkpoints.
        #[arg(long)]
        include_punct: bool,
        #[arg(long, requires = "dev_embeddings")]
        train_embeddings: Option<PathBuf>,
        #[arg(long, requires = "train_embeddings")]
        dev_embeddings: Option<PathBuf>,
    },
    /// Parse a CoNLL-U file; several checkpoints are averaged first.
    Parse {
        /// Repeat to average several checkpoints.
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 1)]
        beam: usize,
        #[arg(long)]
        len_norm: bool,
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Average checkpoints into a new one.
    Average {
        #[arg(required = true, num_args = 2..)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Attachment scores of a prediction against gold.
    Eval {
        gold: PathBuf,
        predicted: PathBuf,
        #[arg(long)]
        include_punct: bool,
    },
    /// Print the attention masks of an action sequence.
    Plan {
        /// Actions such as `SHIFT SHIFT LA(amod) RA(root) </a>`.
        #[arg(long, requires = "words")]
        actions: Option<String>,
        #[arg(long)]
        words: Option<usize>,
        /// Use the oracle sequence of this sentence instead (1-based).
        #[arg(long, requires = "conllu", conflicts_with = "actions")]
        sentence: Option<usize>,
        #[arg(long)]
        conllu: Option<PathBuf>,
        #[arg(long, default_value = "stack,buffer")]
        heads: String,
    },
    /// Compare analytic and numeric gradients on a tiny model.
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
        Err(_) => ExitCode::from(2),
    }
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Synth {
            sentences,
            max_words,
            out,
        } => {
            let treebank = synth::generate(&synth::SynthConfig {
                sentences,
                seed,
                max_words,
            });
            write_conllu(&treebank, &out)
        }
        Command::Oracle {
            input,
            actions,
            shift_words,
            shift_vocab,
        } => oracle(&input, actions.as_deref(), shift_words, shift_vocab.as_deref()),
        Command::Train {
            train: train_path,
            dev,
            out,
            scale,
            variant,
            heads,
            shift_words,
            epochs,
            lr,
            warmup,
            warmup_init_lr,
            budget,
            dropout,
            unk_prob,
            include_punct,
            train_embeddings,
            dev_embeddings,
        } => {
            let (model, mut schedule) = match scale {
                Scale::Desk => (ModelConfig::desk(Vec::new(), 0, 0), TrainSchedule::desk()),
                Scale::Full => (ModelConfig::full_scale(Vec::new(), 0, 0), TrainSchedule::full_scale()),
            };
            let specs: Vec<HeadSpec> = match heads {
                Some(h) => parse_head_specs(&h)?,
                None => variant_specs(variant, model.heads)?,
            };
            let mut model = ModelConfig {
                heads: specs.len(),
                head_specs: specs,
                ..model
            };
            schedule.seed = seed;
            if let Some(v) = epochs {
                schedule.epochs = v;
            }
            if let Some(v) = lr {
                schedule.peak_lr = v;
            }
            if let Some(v) = warmup {
                schedule.warmup = v;
            }
            if let Some(v) = warmup_init_lr {
                schedule.warmup_init_lr = v;
            }
            if let Some(v) = budget {
                schedule.token_budget = v;
            }
            if let Some(v) = unk_prob {
                schedule.unk_prob = v;
            }
            if let Some(v) = dropout {
                model.dropout = v;
            }
            let mut config = TrainConfig::new(model, schedule);
            config.shift_words = shift_words;
            config.exclude_punct = !include_punct;
            let train_tb = read_conllu(&train_path)?;
            let dev_tb = read_conllu(&dev)?;
            let embeddings = match (train_embeddings, dev_embeddings) {
                (Some(t), Some(d)) => {
                    let (t, d) = (read_embeddings(&t)?, read_embeddings(&d)?);
                    check_embeddings(&t, &train_tb, config.model.d_model)?;
                    check_embeddings(&d, &dev_tb, config.model.d_model)?;
                    Some((t, d))
                }
                _ => None,
            };
            let data = TrainData {
                train: &train_tb,
                dev: &dev_tb,
                train_external: embeddings.as_ref().map(|e| e.0.as_slice()),
                dev_external: embeddings.as_ref().map(|e| e.1.as_slice()),
            };
            let outcome = train(&config, data, Some(&out))?;
            println!(
                "best\tepoch {}\tLAS {:.2}\t{}",
                outcome.best.epoch,
                outcome.best.dev_las.unwrap_or(0.0),
                outcome.best_path.map(|p| p.display().to_string()).unwrap_or_default()
            );
            Ok(())
        }
        Command::Parse {
            checkpoints,
            input,
            output,
            beam,
            len_norm,
            embeddings,
        } => {
            if beam == 0 {
                return Err(Error::Config("beam width must be at least 1".into()));
            }
            let checkpoint = if checkpoints.len() == 1 {
                Checkpoint::load(&checkpoints[0])?
            } else {
                checkpoint_average(&checkpoints)?
            };
            let treebank = read_conllu(&input)?;
            let external = match embeddings {
                Some(p) => {
                    let e = read_embeddings(&p)?;
                    check_embeddings(&e, &treebank, checkpoint.model.config.d_model)?;
                    Some(e)
                }
                None => None,
            };
            let predicted = Parser::new(&checkpoint).parse_treebank(
                &treebank,
                external.as_deref(),
                DecodeOptions { beam, len_norm },
            )?;
            write_conllu(&predicted, &output)
        }
        Command::Average { checkpoints, out } => checkpoint_average(&checkpoints)?.save(&out),
        Command::Eval {
            gold,
            predicted,
            include_punct,
        } => {
            let scores = evaluate(&read_conllu(&gold)?, &read_conllu(&predicted)?, !include_punct)?;
            println!("{scores}");
            Ok(())
        }
        Command::Plan {
            actions,
            words,
            sentence,
            conllu,
            heads,
        } => {
            let specs = parse_head_specs(&heads)?;
            let (n, actions) = match (actions, sentence, conllu) {
                (Some(a), _, _) => (words.unwrap_or(0), parse_actions(&a)?),
                (None, Some(i), Some(path)) => {
                    let treebank = read_conllu(&path)?;
                    let entry = treebank
                        .get(i.wrapping_sub(1))
                        .ok_or_else(|| Error::Config(format!("no sentence {i} in {}", path.display())))?;
                    (entry.sentence.len(), oracle_actions(&entry.sentence, &entry.graph)?)
                }
                _ => {
                    return Err(Error::Config(
                        "give --actions with --words, or --sentence with --conllu".into(),
                    ))
                }
            };
            print!("{}", compute_plan(n, &actions, &specs)?.dump());
            Ok(())
        }
        Command::Gradcheck { step, tolerance } => {
            let (model, examples) = tiny_setup(seed)?;
            let refs: Vec<_> = examples.iter().collect();
            let report = gradcheck(&model, &refs, step);
            for t in &report.tensors {
                println!(
                    "{}\t{:.3e}\t{} entries\t{} kinks",
                    t.name, t.rel_error, t.entries, t.kinks
                );
            }
            println!("max relative error {:.3e}", report.max_error());
            if report.max_error() < tolerance {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "gradient check failed: {:.3e} ≥ {tolerance:e}",
                    report.max_error()
                )))
            }
        }
    }
}

fn oracle(input: &Path, actions_out: Option<&Path>, shift_words: usize, vocab_out: Option<&Path>) -> Result<()> {
    let treebank = read_conllu(input)?;
    let vocab = build_shift_vocab(treebank.iter().map(|e| &e.sentence), shift_words);
    let mut lines = Vec::with_capacity(treebank.len());
    let mut skipped = 0;
    let mut recovered = 0;
    for entry in &treebank {
        let actions = match oracle_actions(&entry.sentence, &entry.graph) {
            Ok(a) => a,
            Err(Error::NonProjective) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let decorated = decorate(&actions, &entry.sentence, &vocab)?;
        if recover_graph(&entry.sentence, &strip(&decorated)).is_ok_and(|g| g == entry.graph) {
            recovered += 1;
        }
        lines.push(format_actions(&decorated));
    }
    if let Some(path) = actions_out {
        let mut out = fs::File::create(path)?;
        for line in &lines {
            writeln!(out, "{line}")?;
        }
    }
    if let Some(path) = vocab_out {
        vocab.write(path)?;
    }
    let converted = lines.len();
    println!(
        "sentences {}\tskipped non-projective {}\tround-trip {}/{} ({:.2}%)",
        treebank.len(),
        skipped,
        recovered,
        converted,
        if converted == 0 {
            100.0
        } else {
            100.0 * recovered as f64 / converted as f64
        }
    );
    Ok(())
}
