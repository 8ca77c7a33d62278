use serde::{Deserialize, Serialize};

use crate::model::Params;

/// Optimizer and schedule settings for a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub peak_lr: f64,
    pub warmup: usize,
    /// Learning rate at update 0; the warmup ramps linearly from here.
    pub warmup_init_lr: f64,
    pub min_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    /// Maximum number of words per batch.
    pub token_budget: usize,
    /// Probability of replacing a training singleton by UNK.
    pub unk_prob: f64,
    pub seed: u64,
}

impl TrainSchedule {
    pub fn desk() -> Self {
        TrainSchedule {
            peak_lr: 3e-4,
            warmup: 400,
            warmup_init_lr: 0.0,
            min_lr: 1e-9,
            beta1: 0.9,
            beta2: 0.98,
            adam_eps: 1e-8,
            epochs: 40,
            token_budget: 1024,
            unk_prob: 0.5,
            seed: 1,
        }
    }

    pub fn full_scale() -> Self {
        TrainSchedule {
            peak_lr: 5e-4,
            warmup: 4000,
            warmup_init_lr: 1e-7,
            token_budget: 3584,
            ..Self::desk()
        }
    }

    /// Learning rate for update `u` (1-based): linear warmup to the peak,
    /// then inverse square-root decay, never below `min_lr`.
    pub fn lr(&self, u: usize) -> f64 {
        let u = u.max(1) as f64;
        let w = self.warmup.max(1) as f64;
        let lr = if u < w {
            self.warmup_init_lr + (self.peak_lr - self.warmup_init_lr) * u / w
        } else {
            self.peak_lr * (w / u).sqrt()
        };
        lr.max(self.min_lr)
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Params<f32>,
    v: Params<f32>,
    t: usize,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(params: &Params<f32>, schedule: &TrainSchedule) -> Self {
        Adam {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            beta1: schedule.beta1,
            beta2: schedule.beta2,
            eps: schedule.adam_eps,
        }
    }

    pub fn updates(&self) -> usize {
        self.t
    }

    pub fn step(&mut self, params: &mut Params<f32>, grad: &Params<f32>, lr: f64) {
        self.t += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = (lr * c2.sqrt() / c1) as f32;
        let eps = (self.eps * c2.sqrt()) as f32;
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grad.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= step * *m / (v.sqrt() + eps);
            });
        }
    }
}
