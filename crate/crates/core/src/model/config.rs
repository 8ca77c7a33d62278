use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plan::HeadSpec;

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// One spec per cross-attention head, shared by every decoder layer.
    pub head_specs: Vec<HeadSpec>,
    pub dropout: f64,
    pub label_smoothing: f64,
    /// Number of rows in each depth-embedding table; deeper items share the last row.
    pub max_depth: usize,
    pub word_vocab: usize,
    pub action_vocab: usize,
}

impl ModelConfig {
    /// 2/2 layers, width 128, 4 heads.
    pub fn desk(head_specs: Vec<HeadSpec>, word_vocab: usize, action_vocab: usize) -> Self {
        ModelConfig {
            encoder_layers: 2,
            decoder_layers: 2,
            d_model: 128,
            heads: 4,
            ffn_dim: 512,
            head_specs,
            dropout: 0.1,
            label_smoothing: 0.01,
            max_depth: 32,
            word_vocab,
            action_vocab,
        }
    }

    /// 6/6 layers, width 256, 4 heads.
    pub fn full_scale(head_specs: Vec<HeadSpec>, word_vocab: usize, action_vocab: usize) -> Self {
        ModelConfig {
            encoder_layers: 6,
            decoder_layers: 6,
            d_model: 256,
            ffn_dim: 1024,
            ..Self::desk(head_specs, word_vocab, action_vocab)
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn uses_stack_positions(&self) -> bool {
        self.head_specs
            .iter()
            .any(|s| s.uses_positions() && s.target.is_stack())
    }

    pub fn uses_buffer_positions(&self) -> bool {
        self.head_specs
            .iter()
            .any(|s| s.uses_positions() && s.target.is_buffer())
    }

    pub fn is_vanilla(&self) -> bool {
        self.head_specs.iter().all(|s| !s.is_specialized())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return fail(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            ));
        }
        if self.head_specs.len() != self.heads {
            return fail(format!("{} head specs for {} heads", self.head_specs.len(), self.heads));
        }
        if self.d_model < 2 || self.encoder_layers == 0 || self.decoder_layers == 0 {
            return fail("model needs width ≥ 2 and at least one layer per side".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return fail(format!("label smoothing {} outside [0, 1)", self.label_smoothing));
        }
        if self.max_depth == 0 {
            return fail("max_depth must be positive".into());
        }
        if self.action_vocab < 2 {
            return fail("action vocabulary needs the end symbol and at least one action".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::variant_specs;

    #[test]
    fn validation() {
        let ok = ModelConfig::desk(variant_specs('c', 4).unwrap(), 10, 5);
        assert!(ok.validate().is_ok());
        assert_eq!(ok.head_dim(), 32);
        let mut bad = ok.clone();
        bad.heads = 3;
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.head_specs.pop();
        assert!(bad.validate().is_err());
        assert!(!ok.uses_stack_positions());
        let d = ModelConfig::desk(variant_specs('d', 4).unwrap(), 10, 5);
        assert!(d.uses_stack_positions() && d.uses_buffer_positions());
    }
}
