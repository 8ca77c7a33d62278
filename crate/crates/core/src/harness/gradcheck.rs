use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{build_examples, build_vocabs, synth};
use crate::error::Result;
use crate::model::{CrossPath, Example, Model, ModelConfig};
use crate::oracle::ShiftVocab;
use crate::plan::{HeadSpec, HeadTarget};

/// Agreement between analytic and finite-difference gradients per tensor.
#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub tensors: Vec<TensorCheck>,
}

#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub entries: usize,
    /// Entries whose perturbation crossed a ReLU kink and were not compared.
    pub kinks: usize,
    pub rel_error: f64,
}

impl GradcheckReport {
    pub fn max_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.rel_error).fold(0.0, f64::max)
    }

    pub fn kinks(&self) -> usize {
        self.tensors.iter().map(|t| t.kinks).sum()
    }
}

/// Gradient norms below this count as zero when forming relative errors.
pub const GRAD_FLOOR: f64 = 1e-6;

/// Compares analytic gradients of the mean token loss with central
/// differences of width `step`. A tensor's error is
/// `|a - n| / max(|a|, |n|, GRAD_FLOOR)` in the Frobenius norm over its
/// compared entries. Entries whose perturbation switches any ReLU unit are
/// skipped, since the loss is not differentiable across that interval.
pub fn gradcheck(model: &Model<f64>, examples: &[&Example], step: f64) -> GradcheckReport {
    let path = CrossPath::Planned;
    let (_, analytic) = model.loss_and_grad::<ChaCha8Rng>(examples, path, None);
    let base_pattern = model.relu_pattern(examples, path);
    let mut probe = model.clone();
    let names: Vec<String> = model.params.named().into_iter().map(|(n, _)| n).collect();
    let mut tensors = Vec::with_capacity(names.len());
    for (k, (name, grad)) in names.into_iter().zip(analytic.tensors()).enumerate() {
        let mut diff = 0.0;
        let mut a_norm = 0.0;
        let mut n_norm = 0.0;
        let mut kinks = 0;
        for (idx, &a) in grad.indexed_iter() {
            let original = probe.params.tensors_mut()[k][idx];
            let mut side = |delta: f64| {
                probe.params.tensors_mut()[k][idx] = original + delta;
                let loss = probe.evaluate(examples, path).mean();
                (loss, probe.relu_pattern(examples, path) == base_pattern)
            };
            let (plus, smooth_plus) = side(step);
            let (minus, smooth_minus) = side(-step);
            probe.params.tensors_mut()[k][idx] = original;
            if !(smooth_plus && smooth_minus) {
                kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * step);
            diff += (a - numeric).powi(2);
            a_norm += a * a;
            n_norm += numeric * numeric;
        }
        let scale = a_norm.sqrt().max(n_norm.sqrt()).max(GRAD_FLOOR);
        tensors.push(TensorCheck {
            name,
            entries: grad.len(),
            kinks,
            rel_error: diff.sqrt() / scale,
        });
    }
    GradcheckReport { tensors }
}

/// Tiny double-precision model (1/1 layers, width 16, one stack head with
/// depth embeddings and one free head) and a few short synthetic sentences.
pub fn tiny_setup(seed: u64) -> Result<(Model<f64>, Vec<Example>)> {
    let treebank = synth::generate(&synth::SynthConfig {
        sentences: 3,
        seed,
        max_words: 7,
    });
    let shift_vocab = ShiftVocab::default();
    let (words, actions) = build_vocabs(&treebank, &shift_vocab)?;
    let specs = vec![HeadSpec::new(HeadTarget::FullStack).with_positions(), HeadSpec::FREE];
    let (examples, _) = build_examples(&treebank, &words, &actions, &shift_vocab, &specs, None)?;
    let config = ModelConfig {
        encoder_layers: 1,
        decoder_layers: 1,
        d_model: 16,
        heads: 2,
        ffn_dim: 32,
        head_specs: specs,
        dropout: 0.0,
        label_smoothing: 0.01,
        max_depth: 32,
        word_vocab: words.len(),
        action_vocab: actions.len(),
    };
    let model = Model::new(config, &mut ChaCha8Rng::seed_from_u64(seed))?;
    Ok((model, examples))
}
