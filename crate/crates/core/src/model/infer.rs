//! Step-by-step decoding with cached self-attention keys and values.

use ndarray::{s, Array1, Array2, Axis};

use super::layers::{attend, real, sinusoid};
use super::network::{log_softmax, specialized_head, CrossMemory, CrossPath, Model};
use super::Real;
use crate::plan::HeadMask;

/// Encoder output and per-layer cross-attention projections of a sentence.
pub struct EncodedSentence<F> {
    pub h: Array2<F>,
    memories: Vec<CrossMemory<F>>,
}

/// Self-attention history of one hypothesis.
#[derive(Clone, Debug)]
pub struct DecoderCache<F> {
    keys: Vec<Array2<F>>,
    values: Vec<Array2<F>>,
}

impl<F: Real> DecoderCache<F> {
    pub fn len(&self) -> usize {
        self.keys.first().map_or(0, |k| k.nrows())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<F: Real> Model<F> {
    pub fn prepare(&self, word_ids: &[usize], external: Option<&Array2<f32>>) -> EncodedSentence<F> {
        let h = self.encode(word_ids, external);
        let memories = self
            .params
            .decoder
            .iter()
            .map(|l| CrossMemory::new(&l.cross, &h, &self.params, CrossPath::Planned))
            .collect();
        EncodedSentence { h, memories }
    }

    pub fn empty_cache(&self) -> DecoderCache<F> {
        let d = self.config.d_model;
        DecoderCache {
            keys: vec![Array2::zeros((0, d)); self.config.decoder_layers],
            values: vec![Array2::zeros((0, d)); self.config.decoder_layers],
        }
    }

    /// Log-probabilities of the next action after feeding `input` (the
    /// previous action, or the end symbol at the first step). `masks` are
    /// the cross-attention masks of the current parser state, in head order.
    pub fn step(
        &self,
        sentence: &EncodedSentence<F>,
        cache: &mut DecoderCache<F>,
        input: usize,
        masks: &[Option<HeadMask>],
    ) -> Array1<F> {
        let config = &self.config;
        let d = config.d_model;
        let heads = config.heads;
        let dh = config.head_dim();
        let scale = real::<F>(1.0 / (dh as f64).sqrt());
        let pos = cache.len();

        let pe = sinusoid::<F>(pos + 1, d);
        let mut y = pe.slice(s![pos..pos + 1, ..]).to_owned();
        y.row_mut(0)
            .scaled_add(real((d as f64).sqrt()), &self.params.action_emb.row(input));

        for (li, layer) in self.params.decoder.iter().enumerate() {
            let (a, _) = layer.ln_self.forward(&y);
            let q = layer.self_attn.q.forward(&a.view());
            let k = layer.self_attn.k.forward(&a.view());
            let v = layer.self_attn.v.forward(&a.view());
            cache.keys[li].push_row(k.row(0)).unwrap();
            cache.values[li].push_row(v.row(0)).unwrap();
            let mut concat = Array2::zeros((1, d));
            for h in 0..heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let (out, _) = attend(
                    &q.slice(cols),
                    &cache.keys[li].slice(cols),
                    &cache.values[li].slice(cols),
                    scale,
                    false,
                );
                concat.slice_mut(cols).assign(&out);
            }
            y = y + layer.self_attn.o.forward(&concat.view());

            let memory = &sentence.memories[li];
            let (c, _) = layer.ln_cross.forward(&y);
            let q = layer.cross.q.forward(&c.view());
            let mut concat = Array2::zeros((1, d));
            let mut weights = Array1::zeros(memory.kh.nrows());
            for (h, mask) in masks.iter().enumerate().take(heads) {
                let cols = s![.., h * dh..(h + 1) * dh];
                match mask {
                    Some(mask) => {
                        let out = specialized_head(
                            memory,
                            &config.head_specs[h],
                            mask,
                            q.row(0),
                            h * dh..(h + 1) * dh,
                            scale,
                            weights.view_mut(),
                        );
                        concat.slice_mut(s![0, h * dh..(h + 1) * dh]).assign(&out);
                    }
                    None => {
                        let (out, _) = attend(
                            &q.slice(cols),
                            &memory.kh.slice(cols),
                            &memory.v.slice(cols),
                            scale,
                            false,
                        );
                        concat.slice_mut(cols).assign(&out);
                    }
                }
            }
            y = y + layer.cross.o.forward(&concat.view());

            let (b, _) = layer.ln_ffn.forward(&y);
            let (f, _) = layer.ffn.forward(b);
            y = y + f;
        }
        let (z, _) = self.params.decoder_ln.forward(&y);
        let logits = self.params.output.forward(&z.view()).index_axis_move(Axis(0), 0);
        log_softmax(&logits)
    }
}
