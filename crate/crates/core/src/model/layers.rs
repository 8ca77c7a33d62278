//! Differentiable building blocks. Every layer type doubles as its own
//! gradient container: `backward` accumulates into a value of the same type.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::Real;

pub fn real<F: Real>(x: f64) -> F {
    F::from_f64(x).unwrap()
}

/// `acc += a^T b`
fn add_at_b<F: Real>(acc: &mut Array2<F>, a: &ArrayView2<F>, b: &ArrayView2<F>) {
    general_mat_mul(F::one(), &a.t(), b, F::one(), acc);
}

fn sum_rows<F: Real>(x: &Array2<F>) -> Array2<F> {
    x.sum_axis(Axis(0)).insert_axis(Axis(0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear<F> {
    pub w: Array2<F>,
    pub b: Array2<F>,
}

impl<F: Real> Linear<F> {
    /// Xavier-uniform weights, zero bias.
    pub fn init<R: Rng>(rng: &mut R, d_in: usize, d_out: usize) -> Self {
        let a = (6.0 / (d_in + d_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-a, a);
        Linear {
            w: Array2::from_shape_fn((d_in, d_out), |_| real(dist.sample(rng))),
            b: Array2::zeros((1, d_out)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Linear {
            w: Array2::zeros(self.w.raw_dim()),
            b: Array2::zeros(self.b.raw_dim()),
        }
    }

    pub fn forward(&self, x: &ArrayView2<F>) -> Array2<F> {
        x.dot(&self.w) + &self.b
    }

    pub fn backward(&self, x: &ArrayView2<F>, dy: &Array2<F>, grad: &mut Self) -> Array2<F> {
        add_at_b(&mut grad.w, x, &dy.view());
        grad.b += &sum_rows(dy);
        dy.dot(&self.w.t())
    }

    pub fn tensors(&self) -> [&Array2<F>; 2] {
        [&self.w, &self.b]
    }

    pub fn tensors_mut(&mut self) -> [&mut Array2<F>; 2] {
        [&mut self.w, &mut self.b]
    }
}

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm<F> {
    pub g: Array2<F>,
    pub b: Array2<F>,
}

pub struct LayerNormCache<F> {
    xhat: Array2<F>,
    inv_std: Array1<F>,
}

impl<F: Real> LayerNorm<F> {
    pub fn new(d: usize) -> Self {
        LayerNorm {
            g: Array2::ones((1, d)),
            b: Array2::zeros((1, d)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        LayerNorm {
            g: Array2::zeros(self.g.raw_dim()),
            b: Array2::zeros(self.b.raw_dim()),
        }
    }

    pub fn forward(&self, x: &Array2<F>) -> (Array2<F>, LayerNormCache<F>) {
        let d = real::<F>(x.ncols() as f64);
        let eps = real::<F>(LN_EPS);
        let mut xhat = x.clone();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / d;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|&v| v * v).sum::<F>() / d;
            *is = F::one() / (var + eps).sqrt();
            let s = *is;
            row.mapv_inplace(|v| v * s);
        }
        let y = &xhat * &self.g + &self.b;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache<F>, dy: &Array2<F>, grad: &mut Self) -> Array2<F> {
        grad.g += &sum_rows(&(dy * &cache.xhat));
        grad.b += &sum_rows(dy);
        let d = real::<F>(dy.ncols() as f64);
        let mut dx = dy * &self.g;
        for ((mut row, xh), &is) in dx
            .rows_mut()
            .into_iter()
            .zip(cache.xhat.rows())
            .zip(cache.inv_std.iter())
        {
            let mean_d = row.sum() / d;
            let mean_dx = row.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<F>() / d;
            Zip::from(&mut row)
                .and(&xh)
                .for_each(|v, &x| *v = is * (*v - mean_d - x * mean_dx));
        }
        dx
    }

    pub fn tensors(&self) -> [&Array2<F>; 2] {
        [&self.g, &self.b]
    }

    pub fn tensors_mut(&mut self) -> [&mut Array2<F>; 2] {
        [&mut self.g, &mut self.b]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward<F> {
    pub inner: Linear<F>,
    pub outer: Linear<F>,
}

pub struct FeedForwardCache<F> {
    x: Array2<F>,
    hidden: Array2<F>,
}

impl<F: Real> FeedForwardCache<F> {
    /// Which hidden units passed the ReLU.
    pub fn active(&self) -> impl Iterator<Item = bool> + '_ {
        self.hidden.iter().map(|&h| h > F::zero())
    }
}

impl<F: Real> FeedForward<F> {
    pub fn init<R: Rng>(rng: &mut R, d: usize, d_ff: usize) -> Self {
        FeedForward {
            inner: Linear::init(rng, d, d_ff),
            outer: Linear::init(rng, d_ff, d),
        }
    }

    pub fn zeros_like(&self) -> Self {
        FeedForward {
            inner: self.inner.zeros_like(),
            outer: self.outer.zeros_like(),
        }
    }

    pub fn forward(&self, x: Array2<F>) -> (Array2<F>, FeedForwardCache<F>) {
        let mut hidden = self.inner.forward(&x.view());
        hidden.mapv_inplace(|v| v.max(F::zero()));
        let y = self.outer.forward(&hidden.view());
        (y, FeedForwardCache { x, hidden })
    }

    pub fn backward(&self, cache: &FeedForwardCache<F>, dy: &Array2<F>, grad: &mut Self) -> Array2<F> {
        let mut dh = self.outer.backward(&cache.hidden.view(), dy, &mut grad.outer);
        Zip::from(&mut dh).and(&cache.hidden).for_each(|d, &h| {
            if h <= F::zero() {
                *d = F::zero()
            }
        });
        self.inner.backward(&cache.x.view(), &dh, &mut grad.inner)
    }

    pub fn tensors(&self) -> Vec<&Array2<F>> {
        let mut v = self.inner.tensors().to_vec();
        v.extend(self.outer.tensors());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<F>> {
        let mut v: Vec<&mut Array2<F>> = self.inner.tensors_mut().into_iter().collect();
        v.extend(self.outer.tensors_mut());
        v
    }
}

/// Inverted-dropout mask, or `None` when dropout is inactive.
pub fn dropout_mask<F: Real, R: Rng>(rng: Option<&mut R>, shape: (usize, usize), p: f64) -> Option<Array2<F>> {
    let rng = rng?;
    if p <= 0.0 {
        return None;
    }
    let keep = real::<F>(1.0 / (1.0 - p));
    Some(Array2::from_shape_fn(shape, |_| {
        if rng.gen::<f64>() < p {
            F::zero()
        } else {
            keep
        }
    }))
}

pub fn apply_mask<F: Real>(x: &mut Array2<F>, mask: &Option<Array2<F>>) {
    if let Some(m) = mask {
        *x *= m;
    }
}

/// Sinusoidal position encodings for positions `0..len`.
pub fn sinusoid<F: Real>(len: usize, d: usize) -> Array2<F> {
    let half = d / 2;
    Array2::from_shape_fn((len, d), |(pos, i)| {
        let k = (i % half.max(1)) as f64;
        let rate = (-(10000f64.ln()) * k / (half.max(2) - 1) as f64).exp();
        let angle = pos as f64 * rate;
        if i < half {
            real(angle.sin())
        } else {
            real(angle.cos())
        }
    })
}

pub fn normal_table<F: Real, R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Array2<F> {
    let dist = Normal::new(0.0, std).unwrap();
    Array2::from_shape_fn((rows, cols), |_| real(dist.sample(rng)))
}

/// Softmax of `scores` over the first `limit` entries; later entries get 0.
pub fn softmax_prefix<F: Real>(scores: &mut [F], limit: usize) {
    let max = scores[..limit].iter().fold(F::neg_infinity(), |m, &v| m.max(v));
    let mut total = F::zero();
    for v in scores[..limit].iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in scores[..limit].iter_mut() {
        *v /= total;
    }
    for v in scores[limit..].iter_mut() {
        *v = F::zero();
    }
}

/// Scaled dot-product attention of one head. With `causal`, query `t`
/// only sees keys `0..=t`. Returns the output and the attention weights.
pub fn attend<F: Real>(
    q: &ArrayView2<F>,
    k: &ArrayView2<F>,
    v: &ArrayView2<F>,
    scale: F,
    causal: bool,
) -> (Array2<F>, Array2<F>) {
    let mut probs = q.dot(&k.t());
    probs.mapv_inplace(|x| x * scale);
    let cols = probs.ncols();
    for (t, mut row) in probs.rows_mut().into_iter().enumerate() {
        let limit = if causal { (t + 1).min(cols) } else { cols };
        softmax_prefix(row.as_slice_mut().unwrap(), limit);
    }
    let out = probs.dot(v);
    (out, probs)
}

/// Gradients of [`attend`] with respect to `q`, `k` and `v`.
pub fn attend_backward<F: Real>(
    q: &ArrayView2<F>,
    k: &ArrayView2<F>,
    v: &ArrayView2<F>,
    probs: &Array2<F>,
    dout: &ArrayView2<F>,
    scale: F,
) -> (Array2<F>, Array2<F>, Array2<F>) {
    let dv = probs.t().dot(dout);
    let mut ds = dout.dot(&v.t());
    for (mut row, p) in ds.rows_mut().into_iter().zip(probs.rows()) {
        let dot = row.iter().zip(p.iter()).map(|(&a, &b)| a * b).sum::<F>();
        Zip::from(&mut row)
            .and(&p)
            .for_each(|d, &pi| *d = pi * (*d - dot) * scale);
    }
    let dq = ds.dot(k);
    let dk = ds.t().dot(q);
    (dq, dk, dv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_closed_form() {
        let mut s = [2f64.ln(), 0.0];
        softmax_prefix(&mut s, 2);
        assert!((s[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((s[1] - 1.0 / 3.0).abs() < 1e-12);

        let mut s = [0.0, 7.0];
        softmax_prefix(&mut s, 1);
        assert_eq!(s, [1.0, 0.0]);

        let mut s = [0.3f64; 5];
        softmax_prefix(&mut s, 5);
        assert!(s.iter().all(|&p| (p - 0.2).abs() < 1e-12));
    }

    #[test]
    fn causal_rows_are_zero_ahead() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q: Array2<f64> = normal_table(&mut rng, 4, 3, 1.0);
        let (_, p) = attend(&q.view(), &q.view(), &q.view(), 1.0, true);
        for t in 0..4 {
            for j in t + 1..4 {
                assert_eq!(p[[t, j]], 0.0);
            }
            assert!((p.row(t).sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_rows_are_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Array2<f64> = normal_table(&mut rng, 3, 8, 2.0);
        let (y, _) = LayerNorm::new(8).forward(&x);
        for row in y.rows() {
            assert!(row.mean().unwrap().abs() < 1e-12);
            let var = row.mapv(|v| v * v).mean().unwrap();
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn sinusoid_distinguishes_positions() {
        let pe: Array2<f64> = sinusoid(4, 8);
        assert_eq!(pe[[0, 0]], 0.0);
        assert_eq!(pe[[0, 4]], 1.0);
        assert_ne!(pe.row(1), pe.row(2));
    }
}
