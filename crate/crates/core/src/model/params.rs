use ndarray::Array2;
use rand::Rng;

use super::config::ModelConfig;
use super::layers::{normal_table, FeedForward, LayerNorm, Linear};
use super::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Attention<F> {
    pub q: Linear<F>,
    pub k: Linear<F>,
    pub v: Linear<F>,
    pub o: Linear<F>,
}

impl<F: Real> Attention<F> {
    fn init<R: Rng>(rng: &mut R, d: usize) -> Self {
        Attention {
            q: Linear::init(rng, d, d),
            k: Linear::init(rng, d, d),
            v: Linear::init(rng, d, d),
            o: Linear::init(rng, d, d),
        }
    }

    fn zeros_like(&self) -> Self {
        Attention {
            q: self.q.zeros_like(),
            k: self.k.zeros_like(),
            v: self.v.zeros_like(),
            o: self.o.zeros_like(),
        }
    }

    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Array2<F>)>) {
        for (name, lin) in [("q", &self.q), ("k", &self.k), ("v", &self.v), ("o", &self.o)] {
            out.push((format!("{prefix}.{name}.w"), &lin.w));
            out.push((format!("{prefix}.{name}.b"), &lin.b));
        }
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Array2<F>>) {
        for lin in [&mut self.q, &mut self.k, &mut self.v, &mut self.o] {
            out.extend(lin.tensors_mut());
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer<F> {
    pub ln_attn: LayerNorm<F>,
    pub attn: Attention<F>,
    pub ln_ffn: LayerNorm<F>,
    pub ffn: FeedForward<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderLayer<F> {
    pub ln_self: LayerNorm<F>,
    pub self_attn: Attention<F>,
    pub ln_cross: LayerNorm<F>,
    pub cross: Attention<F>,
    pub ln_ffn: LayerNorm<F>,
    pub ffn: FeedForward<F>,
}

/// Every trainable tensor of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<F> {
    pub word_emb: Array2<F>,
    pub action_emb: Array2<F>,
    pub encoder: Vec<EncoderLayer<F>>,
    pub encoder_ln: LayerNorm<F>,
    pub decoder: Vec<DecoderLayer<F>>,
    pub decoder_ln: LayerNorm<F>,
    pub output: Linear<F>,
    pub stack_depth: Option<Array2<F>>,
    pub buffer_depth: Option<Array2<F>>,
}

impl<F: Real> Params<F> {
    /// Random initialization. Depth tables are drawn last so configurations
    /// without positions consume the generator identically.
    pub fn init<R: Rng>(config: &ModelConfig, rng: &mut R) -> Self {
        let d = config.d_model;
        let emb_std = (d as f64).powf(-0.5);
        let word_emb = normal_table(rng, config.word_vocab, d, emb_std);
        let action_emb = normal_table(rng, config.action_vocab, d, emb_std);
        let encoder = (0..config.encoder_layers)
            .map(|_| EncoderLayer {
                ln_attn: LayerNorm::new(d),
                attn: Attention::init(rng, d),
                ln_ffn: LayerNorm::new(d),
                ffn: FeedForward::init(rng, d, config.ffn_dim),
            })
            .collect();
        let decoder = (0..config.decoder_layers)
            .map(|_| DecoderLayer {
                ln_self: LayerNorm::new(d),
                self_attn: Attention::init(rng, d),
                ln_cross: LayerNorm::new(d),
                cross: Attention::init(rng, d),
                ln_ffn: LayerNorm::new(d),
                ffn: FeedForward::init(rng, d, config.ffn_dim),
            })
            .collect();
        let output = Linear::init(rng, d, config.action_vocab);
        let stack_depth = config
            .uses_stack_positions()
            .then(|| normal_table(rng, config.max_depth, d, emb_std));
        let buffer_depth = config
            .uses_buffer_positions()
            .then(|| normal_table(rng, config.max_depth, d, emb_std));
        Params {
            word_emb,
            action_emb,
            encoder,
            encoder_ln: LayerNorm::new(d),
            decoder,
            decoder_ln: LayerNorm::new(d),
            output,
            stack_depth,
            buffer_depth,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Params {
            word_emb: Array2::zeros(self.word_emb.raw_dim()),
            action_emb: Array2::zeros(self.action_emb.raw_dim()),
            encoder: self
                .encoder
                .iter()
                .map(|l| EncoderLayer {
                    ln_attn: l.ln_attn.zeros_like(),
                    attn: l.attn.zeros_like(),
                    ln_ffn: l.ln_ffn.zeros_like(),
                    ffn: l.ffn.zeros_like(),
                })
                .collect(),
            encoder_ln: self.encoder_ln.zeros_like(),
            decoder: self
                .decoder
                .iter()
                .map(|l| DecoderLayer {
                    ln_self: l.ln_self.zeros_like(),
                    self_attn: l.self_attn.zeros_like(),
                    ln_cross: l.ln_cross.zeros_like(),
                    cross: l.cross.zeros_like(),
                    ln_ffn: l.ln_ffn.zeros_like(),
                    ffn: l.ffn.zeros_like(),
                })
                .collect(),
            decoder_ln: self.decoder_ln.zeros_like(),
            output: self.output.zeros_like(),
            stack_depth: self.stack_depth.as_ref().map(|t| Array2::zeros(t.raw_dim())),
            buffer_depth: self.buffer_depth.as_ref().map(|t| Array2::zeros(t.raw_dim())),
        }
    }

    /// All tensors with stable names, in a fixed order.
    pub fn named(&self) -> Vec<(String, &Array2<F>)> {
        let mut out = vec![
            ("word_emb".to_string(), &self.word_emb),
            ("action_emb".to_string(), &self.action_emb),
        ];
        for (i, l) in self.encoder.iter().enumerate() {
            let p = format!("encoder.{i}");
            out.push((format!("{p}.ln_attn.g"), &l.ln_attn.g));
            out.push((format!("{p}.ln_attn.b"), &l.ln_attn.b));
            l.attn.named(&format!("{p}.attn"), &mut out);
            out.push((format!("{p}.ln_ffn.g"), &l.ln_ffn.g));
            out.push((format!("{p}.ln_ffn.b"), &l.ln_ffn.b));
            for (n, t) in ["inner.w", "inner.b", "outer.w", "outer.b"].iter().zip(l.ffn.tensors()) {
                out.push((format!("{p}.ffn.{n}"), t));
            }
        }
        out.push(("encoder_ln.g".into(), &self.encoder_ln.g));
        out.push(("encoder_ln.b".into(), &self.encoder_ln.b));
        for (i, l) in self.decoder.iter().enumerate() {
            let p = format!("decoder.{i}");
            out.push((format!("{p}.ln_self.g"), &l.ln_self.g));
            out.push((format!("{p}.ln_self.b"), &l.ln_self.b));
            l.self_attn.named(&format!("{p}.self_attn"), &mut out);
            out.push((format!("{p}.ln_cross.g"), &l.ln_cross.g));
            out.push((format!("{p}.ln_cross.b"), &l.ln_cross.b));
            l.cross.named(&format!("{p}.cross"), &mut out);
            out.push((format!("{p}.ln_ffn.g"), &l.ln_ffn.g));
            out.push((format!("{p}.ln_ffn.b"), &l.ln_ffn.b));
            for (n, t) in ["inner.w", "inner.b", "outer.w", "outer.b"].iter().zip(l.ffn.tensors()) {
                out.push((format!("{p}.ffn.{n}"), t));
            }
        }
        out.push(("decoder_ln.g".into(), &self.decoder_ln.g));
        out.push(("decoder_ln.b".into(), &self.decoder_ln.b));
        out.push(("output.w".into(), &self.output.w));
        out.push(("output.b".into(), &self.output.b));
        if let Some(t) = &self.stack_depth {
            out.push(("stack_depth".into(), t));
        }
        if let Some(t) = &self.buffer_depth {
            out.push(("buffer_depth".into(), t));
        }
        out
    }

    /// Mutable tensors in the same order as [`Params::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<F>> {
        let mut out = vec![&mut self.word_emb, &mut self.action_emb];
        for l in self.encoder.iter_mut() {
            out.extend(l.ln_attn.tensors_mut());
            l.attn.collect_mut(&mut out);
            out.extend(l.ln_ffn.tensors_mut());
            out.extend(l.ffn.tensors_mut());
        }
        out.extend(self.encoder_ln.tensors_mut());
        for l in self.decoder.iter_mut() {
            out.extend(l.ln_self.tensors_mut());
            l.self_attn.collect_mut(&mut out);
            out.extend(l.ln_cross.tensors_mut());
            l.cross.collect_mut(&mut out);
            out.extend(l.ln_ffn.tensors_mut());
            out.extend(l.ffn.tensors_mut());
        }
        out.extend(self.decoder_ln.tensors_mut());
        out.extend(self.output.tensors_mut());
        if let Some(t) = self.stack_depth.as_mut() {
            out.push(t);
        }
        if let Some(t) = self.buffer_depth.as_mut() {
            out.push(t);
        }
        out
    }

    pub fn tensors(&self) -> Vec<&Array2<F>> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Converts every tensor to another float type.
    pub fn cast<G: Real>(&self) -> Params<G> {
        let mut out: Params<G> = self.map_shapes();
        for (dst, src) in out.tensors_mut().into_iter().zip(self.tensors()) {
            *dst = src.mapv(|v| G::from_f64(v.to_f64().unwrap()).unwrap());
        }
        out
    }

    fn map_shapes<G: Real>(&self) -> Params<G> {
        let z = |t: &Array2<F>| Array2::<G>::zeros(t.raw_dim());
        let lin = |l: &Linear<F>| Linear { w: z(&l.w), b: z(&l.b) };
        let ln = |l: &LayerNorm<F>| LayerNorm { g: z(&l.g), b: z(&l.b) };
        let att = |a: &Attention<F>| Attention {
            q: lin(&a.q),
            k: lin(&a.k),
            v: lin(&a.v),
            o: lin(&a.o),
        };
        let ffn = |f: &FeedForward<F>| FeedForward {
            inner: lin(&f.inner),
            outer: lin(&f.outer),
        };
        Params {
            word_emb: z(&self.word_emb),
            action_emb: z(&self.action_emb),
            encoder: self
                .encoder
                .iter()
                .map(|l| EncoderLayer {
                    ln_attn: ln(&l.ln_attn),
                    attn: att(&l.attn),
                    ln_ffn: ln(&l.ln_ffn),
                    ffn: ffn(&l.ffn),
                })
                .collect(),
            encoder_ln: ln(&self.encoder_ln),
            decoder: self
                .decoder
                .iter()
                .map(|l| DecoderLayer {
                    ln_self: ln(&l.ln_self),
                    self_attn: att(&l.self_attn),
                    ln_cross: ln(&l.ln_cross),
                    cross: att(&l.cross),
                    ln_ffn: ln(&l.ln_ffn),
                    ffn: ffn(&l.ffn),
                })
                .collect(),
            decoder_ln: ln(&self.decoder_ln),
            output: lin(&self.output),
            stack_depth: self.stack_depth.as_ref().map(z),
            buffer_depth: self.buffer_depth.as_ref().map(z),
        }
    }

    /// `self += other * scale`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Params<F>, scale: F) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.scaled_add(scale, src);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::variant_specs;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn named_and_mut_orders_agree() {
        let config = ModelConfig {
            d_model: 8,
            heads: 2,
            ffn_dim: 16,
            ..ModelConfig::desk(variant_specs('d', 2).unwrap(), 7, 5)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p: Params<f64> = Params::init(&config, &mut rng);
        let shapes: Vec<_> = p.named().iter().map(|(_, t)| t.raw_dim()).collect();
        let names: Vec<_> = p.named().into_iter().map(|(n, _)| n).collect();
        let mut_shapes: Vec<_> = p.tensors_mut().iter().map(|t| t.raw_dim()).collect();
        assert_eq!(shapes, mut_shapes);
        assert!(names.contains(&"stack_depth".to_string()));
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        let cast: Params<f32> = p.cast();
        assert_eq!(cast.count(), p.count());
    }

    #[test]
    fn depth_tables_only_with_positions() {
        let config = ModelConfig {
            d_model: 8,
            heads: 2,
            ffn_dim: 16,
            ..ModelConfig::desk(variant_specs('c', 2).unwrap(), 7, 5)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p: Params<f32> = Params::init(&config, &mut rng);
        assert!(p.stack_depth.is_none() && p.buffer_depth.is_none());
    }
}
