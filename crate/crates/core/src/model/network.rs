//! Teacher-forced forward pass and exact backpropagation.

use std::sync::Arc;

use ndarray::{s, Array1, Array2};
use rand::Rng;

use super::config::ModelConfig;
use super::layers::{
    apply_mask, attend, attend_backward, dropout_mask, real, sinusoid, softmax_prefix, FeedForwardCache, LayerNormCache,
};
use super::params::{Attention, DecoderLayer, EncoderLayer, Params};
use super::{Real, SENTINEL_WORD};
use crate::plan::{AttentionPlan, HeadMask, HeadSpec};

/// One training instance: word ids (without the sentinel), gold action ids
/// ending with the end symbol, and the plan compiled from those actions.
#[derive(Clone, Debug)]
pub struct Example {
    pub word_ids: Vec<usize>,
    pub action_ids: Vec<usize>,
    pub plan: Arc<AttentionPlan>,
    /// Fixed input vectors, one row per word, replacing learned embeddings.
    pub external: Option<Array2<f32>>,
}

impl Example {
    pub fn n_words(&self) -> usize {
        self.word_ids.len()
    }

    /// Decoder inputs: the end symbol doubles as start symbol, then the
    /// gold actions shifted right by one.
    pub fn decoder_inputs(&self, end_id: usize) -> Vec<usize> {
        std::iter::once(end_id)
            .chain(self.action_ids[..self.action_ids.len() - 1].iter().copied())
            .collect()
    }
}

/// How decoder cross-attention treats the heads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CrossPath {
    /// Specialized heads follow the attention plan.
    Planned,
    /// Plain multi-head attention; plans and head specs are ignored.
    Vanilla,
}

/// Sum of token losses and related counts for a group of sentences.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossStats {
    pub loss_sum: f64,
    pub tokens: usize,
    pub correct: usize,
}

impl LossStats {
    pub fn mean(&self) -> f64 {
        self.loss_sum / self.tokens.max(1) as f64
    }

    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.tokens.max(1) as f64
    }

    pub fn merge(&mut self, other: LossStats) {
        self.loss_sum += other.loss_sum;
        self.tokens += other.tokens;
        self.correct += other.correct;
    }
}

pub(crate) struct AttnCache<F> {
    x: Array2<F>,
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    probs: Vec<Array2<F>>,
    concat: Array2<F>,
}

pub(crate) fn self_attention<F: Real>(
    att: &Attention<F>,
    x: Array2<F>,
    heads: usize,
    causal: bool,
) -> (Array2<F>, AttnCache<F>) {
    let d = x.ncols();
    let dh = d / heads;
    let scale = real::<F>(1.0 / (dh as f64).sqrt());
    let q = att.q.forward(&x.view());
    let k = att.k.forward(&x.view());
    let v = att.v.forward(&x.view());
    let mut concat = Array2::zeros((x.nrows(), d));
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let (out, p) = attend(&q.slice(cols), &k.slice(cols), &v.slice(cols), scale, causal);
        concat.slice_mut(cols).assign(&out);
        probs.push(p);
    }
    let y = att.o.forward(&concat.view());
    (
        y,
        AttnCache {
            x,
            q,
            k,
            v,
            probs,
            concat,
        },
    )
}

fn self_attention_backward<F: Real>(
    att: &Attention<F>,
    cache: &AttnCache<F>,
    dy: &Array2<F>,
    grad: &mut Attention<F>,
) -> Array2<F> {
    let heads = cache.probs.len();
    let d = cache.x.ncols();
    let dh = d / heads;
    let scale = real::<F>(1.0 / (dh as f64).sqrt());
    let dconcat = att.o.backward(&cache.concat.view(), dy, &mut grad.o);
    let mut dq = Array2::zeros(cache.q.raw_dim());
    let mut dk = Array2::zeros(cache.k.raw_dim());
    let mut dv = Array2::zeros(cache.v.raw_dim());
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let (gq, gk, gv) = attend_backward(
            &cache.q.slice(cols),
            &cache.k.slice(cols),
            &cache.v.slice(cols),
            &cache.probs[h],
            &dconcat.slice(cols),
            scale,
        );
        dq.slice_mut(cols).assign(&gq);
        dk.slice_mut(cols).assign(&gk);
        dv.slice_mut(cols).assign(&gv);
    }
    let x = cache.x.view();
    let mut dx = att.q.backward(&x, &dq, &mut grad.q);
    dx += &att.k.backward(&x, &dk, &mut grad.k);
    dx += &att.v.backward(&x, &dv, &mut grad.v);
    dx
}

/// Encoder-side projections of one cross-attention layer.
pub(crate) struct CrossMemory<F> {
    pub kh: Array2<F>,
    pub v: Array2<F>,
    pub kp_stack: Option<Array2<F>>,
    pub kp_buffer: Option<Array2<F>>,
}

impl<F: Real> CrossMemory<F> {
    pub fn new(att: &Attention<F>, h: &Array2<F>, params: &Params<F>, path: CrossPath) -> Self {
        let depth_keys = |table: &Option<Array2<F>>| match path {
            CrossPath::Planned => table.as_ref().map(|t| t.dot(&att.k.w)),
            CrossPath::Vanilla => None,
        };
        CrossMemory {
            kh: att.k.forward(&h.view()),
            v: att.v.forward(&h.view()),
            kp_stack: depth_keys(&params.stack_depth),
            kp_buffer: depth_keys(&params.buffer_depth),
        }
    }

    /// Key of encoder row `row` for `spec`'s head at the given depth.
    fn key(&self, spec: &HeadSpec, row: usize, depth: Option<usize>, cols: std::ops::Range<usize>) -> Array1<F> {
        let mut key = self.kh.slice(s![row, cols.clone()]).to_owned();
        if let (true, Some(depth)) = (spec.uses_positions(), depth) {
            let table = if spec.target.is_stack() {
                self.kp_stack.as_ref()
            } else {
                self.kp_buffer.as_ref()
            };
            let table = table.expect("depth table missing for a head with positions");
            let depth = depth.min(table.nrows() - 1);
            key += &table.slice(s![depth, cols]);
        }
        key
    }
}

/// Attention of one specialized head for one query over the permitted rows
/// of `mask`. `query` is the full-width query row; the head reads `cols`.
/// Writes weights into `weights` (full row width) and returns the attended
/// value.
pub(crate) fn specialized_head<F: Real>(
    memory: &CrossMemory<F>,
    spec: &HeadSpec,
    mask: &HeadMask,
    query: ndarray::ArrayView1<F>,
    cols: std::ops::Range<usize>,
    scale: F,
    mut weights: ndarray::ArrayViewMut1<F>,
) -> Array1<F> {
    let query = query.slice(s![cols.clone()]);
    let entries: Vec<(usize, Option<usize>)> = mask.entries().collect();
    let mut scores: Vec<F> = entries
        .iter()
        .map(|&(r, depth)| memory.key(spec, r, depth, cols.clone()).dot(&query) * scale)
        .collect();
    let n = scores.len();
    softmax_prefix(&mut scores, n);
    weights.fill(F::zero());
    let mut out = Array1::zeros(cols.len());
    for (&(r, _), &a) in entries.iter().zip(&scores) {
        weights[r] = a;
        out.scaled_add(a, &memory.v.slice(s![r, cols.clone()]));
    }
    out
}

struct CrossCache<F> {
    c: Array2<F>,
    q: Array2<F>,
    memory: CrossMemory<F>,
    probs: Vec<Array2<F>>,
    concat: Array2<F>,
}

fn cross_attention<F: Real>(
    att: &Attention<F>,
    c: Array2<F>,
    h: &Array2<F>,
    params: &Params<F>,
    config: &ModelConfig,
    plan: &AttentionPlan,
    path: CrossPath,
) -> (Array2<F>, CrossCache<F>) {
    let heads = config.heads;
    let dh = config.head_dim();
    let scale = real::<F>(1.0 / (dh as f64).sqrt());
    let q = att.q.forward(&c.view());
    let memory = CrossMemory::new(att, h, params, path);
    let steps = c.nrows();
    let rows = h.nrows();
    let mut concat = Array2::zeros((steps, config.d_model));
    let mut probs = Vec::with_capacity(heads);
    for head in 0..heads {
        let cols = s![.., head * dh..(head + 1) * dh];
        let spec = &config.head_specs[head];
        if path == CrossPath::Vanilla || !spec.is_specialized() {
            let (out, p) = attend(
                &q.slice(cols),
                &memory.kh.slice(cols),
                &memory.v.slice(cols),
                scale,
                false,
            );
            concat.slice_mut(cols).assign(&out);
            probs.push(p);
        } else {
            let mut p = Array2::zeros((steps, rows));
            for t in 0..steps {
                let mask = plan.mask(t, head).expect("plan lacks a specialized head");
                let out = specialized_head(
                    &memory,
                    spec,
                    mask,
                    q.row(t),
                    head * dh..(head + 1) * dh,
                    scale,
                    p.row_mut(t),
                );
                concat.slice_mut(s![t, head * dh..(head + 1) * dh]).assign(&out);
            }
            probs.push(p);
        }
    }
    let y = att.o.forward(&concat.view());
    (
        y,
        CrossCache {
            c,
            q,
            memory,
            probs,
            concat,
        },
    )
}

/// Backward pass of cross-attention. Returns the gradient for the queries'
/// input and accumulates the encoder-output gradient into `dh_total`.
#[allow(clippy::too_many_arguments)]
fn cross_attention_backward<F: Real>(
    att: &Attention<F>,
    cache: &CrossCache<F>,
    dy: &Array2<F>,
    h: &Array2<F>,
    params: &Params<F>,
    config: &ModelConfig,
    plan: &AttentionPlan,
    path: CrossPath,
    grad: &mut Attention<F>,
    grad_stack: &mut Option<Array2<F>>,
    grad_buffer: &mut Option<Array2<F>>,
    dh_total: &mut Array2<F>,
) -> Array2<F> {
    let heads = config.heads;
    let dh = config.head_dim();
    let scale = real::<F>(1.0 / (dh as f64).sqrt());
    let dconcat = att.o.backward(&cache.concat.view(), dy, &mut grad.o);
    let memory = &cache.memory;
    let mut dq = Array2::zeros(cache.q.raw_dim());
    let mut dkh = Array2::zeros(memory.kh.raw_dim());
    let mut dv = Array2::zeros(memory.v.raw_dim());
    let mut dkp_stack = memory.kp_stack.as_ref().map(|t| Array2::<F>::zeros(t.raw_dim()));
    let mut dkp_buffer = memory.kp_buffer.as_ref().map(|t| Array2::<F>::zeros(t.raw_dim()));

    for head in 0..heads {
        let range = head * dh..(head + 1) * dh;
        let cols = s![.., head * dh..(head + 1) * dh];
        let spec = &config.head_specs[head];
        if path == CrossPath::Vanilla || !spec.is_specialized() {
            let (gq, gk, gv) = attend_backward(
                &cache.q.slice(cols),
                &memory.kh.slice(cols),
                &memory.v.slice(cols),
                &cache.probs[head],
                &dconcat.slice(cols),
                scale,
            );
            dq.slice_mut(cols).assign(&gq);
            dkh.slice_mut(cols).assign(&gk);
            dv.slice_mut(cols).assign(&gv);
            continue;
        }
        let probs = &cache.probs[head];
        for t in 0..cache.q.nrows() {
            let mask = plan.mask(t, head).expect("plan lacks a specialized head");
            let entries: Vec<(usize, Option<usize>)> = mask.entries().collect();
            let dout = dconcat.slice(s![t, range.clone()]);
            let query = cache.q.slice(s![t, range.clone()]);
            let dalpha: Vec<F> = entries
                .iter()
                .map(|&(r, _)| memory.v.slice(s![r, range.clone()]).dot(&dout))
                .collect();
            let dot = entries
                .iter()
                .zip(&dalpha)
                .map(|(&(r, _), &da)| probs[[t, r]] * da)
                .sum::<F>();
            for (&(r, depth), &da) in entries.iter().zip(&dalpha) {
                let a = probs[[t, r]];
                dv.slice_mut(s![r, range.clone()]).scaled_add(a, &dout);
                let ds = a * (da - dot) * scale;
                let key = memory.key(spec, r, depth, range.clone());
                dq.slice_mut(s![t, range.clone()]).scaled_add(ds, &key);
                dkh.slice_mut(s![r, range.clone()]).scaled_add(ds, &query);
                if let (true, Some(depth)) = (spec.uses_positions(), depth) {
                    let table = if spec.target.is_stack() {
                        dkp_stack.as_mut()
                    } else {
                        dkp_buffer.as_mut()
                    };
                    let table = table.unwrap();
                    let depth = depth.min(table.nrows() - 1);
                    table.slice_mut(s![depth, range.clone()]).scaled_add(ds, &query);
                }
            }
        }
    }

    let dc = att.q.backward(&cache.c.view(), &dq, &mut grad.q);
    *dh_total += &att.k.backward(&h.view(), &dkh, &mut grad.k);
    *dh_total += &att.v.backward(&h.view(), &dv, &mut grad.v);
    for (dkp, table, gtable) in [
        (dkp_stack, &params.stack_depth, grad_stack),
        (dkp_buffer, &params.buffer_depth, grad_buffer),
    ] {
        if let (Some(dkp), Some(table), Some(gtable)) = (dkp, table.as_ref(), gtable.as_mut()) {
            // keys = table · W_k, no bias
            grad.k.w += &table.t().dot(&dkp);
            *gtable += &dkp.dot(&att.k.w.t());
        }
    }
    dc
}

struct EncoderLayerCache<F> {
    ln_attn: LayerNormCache<F>,
    attn: AttnCache<F>,
    drop_attn: Option<Array2<F>>,
    ln_ffn: LayerNormCache<F>,
    ffn: FeedForwardCache<F>,
    drop_ffn: Option<Array2<F>>,
}

fn encoder_layer<F: Real, R: Rng>(
    layer: &EncoderLayer<F>,
    x: Array2<F>,
    config: &ModelConfig,
    mut rng: Option<&mut R>,
) -> (Array2<F>, EncoderLayerCache<F>) {
    let shape = x.dim();
    let (a, ln_attn) = layer.ln_attn.forward(&x);
    let (mut s, attn) = self_attention(&layer.attn, a, config.heads, false);
    let drop_attn = dropout_mask(rng.as_deref_mut(), shape, config.dropout);
    apply_mask(&mut s, &drop_attn);
    let x = x + s;
    let (b, ln_ffn) = layer.ln_ffn.forward(&x);
    let (mut f, ffn) = layer.ffn.forward(b);
    let drop_ffn = dropout_mask(rng, shape, config.dropout);
    apply_mask(&mut f, &drop_ffn);
    (
        x + f,
        EncoderLayerCache {
            ln_attn,
            attn,
            drop_attn,
            ln_ffn,
            ffn,
            drop_ffn,
        },
    )
}

fn encoder_layer_backward<F: Real>(
    layer: &EncoderLayer<F>,
    cache: &EncoderLayerCache<F>,
    dy: Array2<F>,
    grad: &mut EncoderLayer<F>,
) -> Array2<F> {
    let mut df = dy.clone();
    apply_mask(&mut df, &cache.drop_ffn);
    let db = layer.ffn.backward(&cache.ffn, &df, &mut grad.ffn);
    let dx1 = dy + layer.ln_ffn.backward(&cache.ln_ffn, &db, &mut grad.ln_ffn);
    let mut ds = dx1.clone();
    apply_mask(&mut ds, &cache.drop_attn);
    let da = self_attention_backward(&layer.attn, &cache.attn, &ds, &mut grad.attn);
    dx1 + layer.ln_attn.backward(&cache.ln_attn, &da, &mut grad.ln_attn)
}

struct DecoderLayerCache<F> {
    ln_self: LayerNormCache<F>,
    self_attn: AttnCache<F>,
    drop_self: Option<Array2<F>>,
    ln_cross: LayerNormCache<F>,
    cross: CrossCache<F>,
    drop_cross: Option<Array2<F>>,
    ln_ffn: LayerNormCache<F>,
    ffn: FeedForwardCache<F>,
    drop_ffn: Option<Array2<F>>,
}

struct EmbedCache<F> {
    ids: Vec<usize>,
    /// Rows taken from fixed vectors receive no embedding gradient.
    fixed_rows: usize,
    drop: Option<Array2<F>>,
}

/// Everything the backward pass needs for one sentence.
pub(crate) struct Tape<F> {
    enc_embed: EmbedCache<F>,
    enc_layers: Vec<EncoderLayerCache<F>>,
    enc_ln: LayerNormCache<F>,
    h: Array2<F>,
    dec_embed: EmbedCache<F>,
    dec_layers: Vec<DecoderLayerCache<F>>,
    dec_ln: LayerNormCache<F>,
    z: Array2<F>,
    /// Row-wise probabilities over actions.
    pub probs: Array2<F>,
    logp: Array2<F>,
    targets: Vec<usize>,
}

/// A model: configuration plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<F> {
    pub config: ModelConfig,
    pub params: Params<F>,
}

impl<F: Real> Model<F> {
    pub fn new<R: Rng>(config: ModelConfig, rng: &mut R) -> crate::Result<Self> {
        config.validate()?;
        let params = Params::init(&config, rng);
        Ok(Model { config, params })
    }

    fn embed<R: Rng>(
        &self,
        table: &Array2<F>,
        ids: &[usize],
        external: Option<&Array2<f32>>,
        rng: Option<&mut R>,
    ) -> (Array2<F>, EmbedCache<F>) {
        let d = self.config.d_model;
        let scale = real::<F>((d as f64).sqrt());
        let mut x = sinusoid::<F>(ids.len(), d);
        let fixed_rows = external.map_or(0, |e| e.nrows());
        for (i, (&id, mut row)) in ids.iter().zip(x.rows_mut()).enumerate() {
            match external {
                Some(e) if i < fixed_rows => {
                    row.zip_mut_with(&e.row(i), |v, &f| *v += real::<F>(f as f64));
                }
                _ => row.scaled_add(scale, &table.row(id)),
            }
        }
        let drop = dropout_mask(rng, x.dim(), self.config.dropout);
        apply_mask(&mut x, &drop);
        (
            x,
            EmbedCache {
                ids: ids.to_vec(),
                fixed_rows,
                drop,
            },
        )
    }

    fn embed_backward(&self, cache: &EmbedCache<F>, mut dx: Array2<F>, grad: &mut Array2<F>) {
        let scale = real::<F>((self.config.d_model as f64).sqrt());
        apply_mask(&mut dx, &cache.drop);
        for (i, (&id, row)) in cache.ids.iter().zip(dx.rows()).enumerate() {
            if i >= cache.fixed_rows {
                grad.row_mut(id).scaled_add(scale, &row);
            }
        }
    }

    fn encode_with_tape<R: Rng>(
        &self,
        word_ids: &[usize],
        external: Option<&Array2<f32>>,
        mut rng: Option<&mut R>,
    ) -> (Array2<F>, EmbedCache<F>, Vec<EncoderLayerCache<F>>, LayerNormCache<F>) {
        let mut ids = word_ids.to_vec();
        ids.push(SENTINEL_WORD);
        let (mut x, enc_embed) = self.embed(&self.params.word_emb, &ids, external, rng.as_deref_mut());
        let mut caches = Vec::with_capacity(self.params.encoder.len());
        for layer in &self.params.encoder {
            let (y, c) = encoder_layer(layer, x, &self.config, rng.as_deref_mut());
            x = y;
            caches.push(c);
        }
        let (h, ln) = self.params.encoder_ln.forward(&x);
        (h, enc_embed, caches, ln)
    }

    /// Encoder output: one row per word plus the sentinel row.
    pub fn encode(&self, word_ids: &[usize], external: Option<&Array2<f32>>) -> Array2<F> {
        self.encode_with_tape::<rand_chacha::ChaCha8Rng>(word_ids, external, None)
            .0
    }

    pub(crate) fn forward<R: Rng>(&self, ex: &Example, path: CrossPath, mut rng: Option<&mut R>) -> Tape<F> {
        let config = &self.config;
        let (h, enc_embed, enc_layers, enc_ln) =
            self.encode_with_tape(&ex.word_ids, ex.external.as_ref(), rng.as_deref_mut());

        let inputs = ex.decoder_inputs(0);
        let (mut y, dec_embed) = self.embed(&self.params.action_emb, &inputs, None, rng.as_deref_mut());
        let shape = y.dim();
        let mut dec_layers = Vec::with_capacity(self.params.decoder.len());
        for layer in &self.params.decoder {
            let (a, ln_self) = layer.ln_self.forward(&y);
            let (mut s, self_attn) = self_attention(&layer.self_attn, a, config.heads, true);
            let drop_self = dropout_mask(rng.as_deref_mut(), shape, config.dropout);
            apply_mask(&mut s, &drop_self);
            y = y + s;

            let (c, ln_cross) = layer.ln_cross.forward(&y);
            let (mut r, cross) = cross_attention(&layer.cross, c, &h, &self.params, config, &ex.plan, path);
            let drop_cross = dropout_mask(rng.as_deref_mut(), shape, config.dropout);
            apply_mask(&mut r, &drop_cross);
            y = y + r;

            let (b, ln_ffn) = layer.ln_ffn.forward(&y);
            let (mut f, ffn) = layer.ffn.forward(b);
            let drop_ffn = dropout_mask(rng.as_deref_mut(), shape, config.dropout);
            apply_mask(&mut f, &drop_ffn);
            y = y + f;

            dec_layers.push(DecoderLayerCache {
                ln_self,
                self_attn,
                drop_self,
                ln_cross,
                cross,
                drop_cross,
                ln_ffn,
                ffn,
                drop_ffn,
            });
        }
        let (z, dec_ln) = self.params.decoder_ln.forward(&y);
        let mut logp = self.params.output.forward(&z.view());
        for mut row in logp.rows_mut() {
            let lp = log_softmax(&row.to_owned());
            row.assign(&lp);
        }
        let probs = logp.mapv(|v| v.exp());
        Tape {
            enc_embed,
            enc_layers,
            enc_ln,
            h,
            dec_embed,
            dec_layers,
            dec_ln,
            z,
            probs,
            logp,
            targets: ex.action_ids.clone(),
        }
    }

    /// Label-smoothed cross-entropy summed over the tape's tokens.
    fn tape_stats(&self, tape: &Tape<F>) -> LossStats {
        let eps = self.config.label_smoothing;
        let v = tape.probs.ncols();
        let mut stats = LossStats {
            tokens: tape.targets.len(),
            ..Default::default()
        };
        for (row, &gold) in tape.logp.rows().into_iter().zip(&tape.targets) {
            let logp: Vec<f64> = row.iter().map(|p| p.to_f64().unwrap()).collect();
            let others: f64 = logp.iter().sum::<f64>() - logp[gold];
            stats.loss_sum += -(1.0 - eps) * logp[gold] - eps / (v - 1) as f64 * others;
            let best = argmax(row.iter().copied());
            if best == gold {
                stats.correct += 1;
            }
        }
        stats
    }

    /// Accumulates weighted gradients into `grad` and returns the gradient
    /// with respect to the encoder output.
    fn backward(&self, ex: &Example, tape: &Tape<F>, path: CrossPath, weight: F, grad: &mut Params<F>) -> Array2<F> {
        let config = &self.config;
        let v = tape.probs.ncols();
        let eps = config.label_smoothing;
        let off = real::<F>(eps / (v - 1) as f64);
        let on = real::<F>(1.0 - eps);
        let mut dlogits = tape.probs.clone();
        for (mut row, &gold) in dlogits.rows_mut().into_iter().zip(&tape.targets) {
            for (j, g) in row.iter_mut().enumerate() {
                let target = if j == gold { on } else { off };
                *g = (*g - target) * weight;
            }
        }
        let dz = self.params.output.backward(&tape.z.view(), &dlogits, &mut grad.output);
        let mut dy = self.params.decoder_ln.backward(&tape.dec_ln, &dz, &mut grad.decoder_ln);
        let mut dh = Array2::zeros(tape.h.raw_dim());

        for (i, layer) in self.params.decoder.iter().enumerate().rev() {
            let cache = &tape.dec_layers[i];
            let g: &mut DecoderLayer<F> = &mut grad.decoder[i];

            let mut df = dy.clone();
            apply_mask(&mut df, &cache.drop_ffn);
            let db = layer.ffn.backward(&cache.ffn, &df, &mut g.ffn);
            dy += &layer.ln_ffn.backward(&cache.ln_ffn, &db, &mut g.ln_ffn);

            let mut dr = dy.clone();
            apply_mask(&mut dr, &cache.drop_cross);
            let dc = cross_attention_backward(
                &layer.cross,
                &cache.cross,
                &dr,
                &tape.h,
                &self.params,
                config,
                &ex.plan,
                path,
                &mut g.cross,
                &mut grad.stack_depth,
                &mut grad.buffer_depth,
                &mut dh,
            );
            dy += &layer.ln_cross.backward(&cache.ln_cross, &dc, &mut g.ln_cross);

            let mut ds = dy.clone();
            apply_mask(&mut ds, &cache.drop_self);
            let da = self_attention_backward(&layer.self_attn, &cache.self_attn, &ds, &mut g.self_attn);
            dy += &layer.ln_self.backward(&cache.ln_self, &da, &mut g.ln_self);
        }
        self.embed_backward(&tape.dec_embed, dy, &mut grad.action_emb);

        let mut dx = self.params.encoder_ln.backward(&tape.enc_ln, &dh, &mut grad.encoder_ln);
        for (i, layer) in self.params.encoder.iter().enumerate().rev() {
            dx = encoder_layer_backward(layer, &tape.enc_layers[i], dx, &mut grad.encoder[i]);
        }
        self.embed_backward(&tape.enc_embed, dx, &mut grad.word_emb);
        dh
    }

    /// Gradient of one sentence's mean token loss with respect to the
    /// encoder output rows, dropout off.
    pub fn encoder_output_grad(&self, ex: &Example, path: CrossPath) -> Array2<F> {
        let tape = self.forward::<rand_chacha::ChaCha8Rng>(ex, path, None);
        let weight = real::<F>(1.0 / ex.action_ids.len() as f64);
        let mut grad = self.params.zeros_like();
        self.backward(ex, &tape, path, weight, &mut grad)
    }

    /// Teacher-forced action distributions, one row per decoding step.
    pub fn distributions(&self, ex: &Example, path: CrossPath) -> Array2<F> {
        self.forward::<rand_chacha::ChaCha8Rng>(ex, path, None).probs
    }

    /// Cross-attention weights of every decoder layer for one sentence:
    /// `[layer][head]` is a steps × rows matrix.
    pub fn cross_weights(&self, ex: &Example) -> Vec<Vec<Array2<F>>> {
        let tape = self.forward::<rand_chacha::ChaCha8Rng>(ex, CrossPath::Planned, None);
        tape.dec_layers.into_iter().map(|c| c.cross.probs).collect()
    }

    /// On/off state of every ReLU unit over `examples`, dropout off. Two
    /// parameter settings with the same pattern lie on one linear piece.
    pub fn relu_pattern(&self, examples: &[&Example], path: CrossPath) -> Vec<bool> {
        let mut out = Vec::new();
        for ex in examples {
            let tape = self.forward::<rand_chacha::ChaCha8Rng>(ex, path, None);
            for c in &tape.enc_layers {
                out.extend(c.ffn.active());
            }
            for c in &tape.dec_layers {
                out.extend(c.ffn.active());
            }
        }
        out
    }

    /// Loss statistics without gradients; dropout is off.
    pub fn evaluate(&self, examples: &[&Example], path: CrossPath) -> LossStats {
        let mut stats = LossStats::default();
        for ex in examples {
            let tape = self.forward::<rand_chacha::ChaCha8Rng>(ex, path, None);
            stats.merge(self.tape_stats(&tape));
        }
        stats
    }

    /// Token-mean loss over `examples` and its exact gradient. Dropout is
    /// active iff `rng` is given.
    pub fn loss_and_grad<R: Rng>(
        &self,
        examples: &[&Example],
        path: CrossPath,
        mut rng: Option<&mut R>,
    ) -> (LossStats, Params<F>) {
        let total: usize = examples.iter().map(|e| e.action_ids.len()).sum();
        let weight = real::<F>(1.0 / total.max(1) as f64);
        let mut grad = self.params.zeros_like();
        let mut stats = LossStats::default();
        for ex in examples {
            let tape = self.forward(ex, path, rng.as_deref_mut());
            stats.merge(self.tape_stats(&tape));
            self.backward(ex, &tape, path, weight, &mut grad);
        }
        (stats, grad)
    }
}

pub(crate) fn argmax<F: Real>(values: impl Iterator<Item = F>) -> usize {
    let mut best = 0;
    let mut best_v = F::neg_infinity();
    for (i, v) in values.enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Log-softmax of a row of logits.
pub(crate) fn log_softmax<F: Real>(logits: &Array1<F>) -> Array1<F> {
    let max = logits.fold(F::neg_infinity(), |m, &v| m.max(v));
    let lse = logits.mapv(|v| (v - max).exp()).sum().ln() + max;
    logits.mapv(|v| v - lse)
}
