//! Encoder-decoder Transformer over words and actions whose decoder
//! cross-attention can dedicate heads to the parser's stack or buffer.

mod config;
mod infer;
pub mod layers;
mod network;
mod params;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};

pub use config::ModelConfig;
pub use infer::{DecoderCache, EncodedSentence};
pub use network::{CrossPath, Example, LossStats, Model};
pub use params::{Attention, DecoderLayer, EncoderLayer, Params};

/// Reserved word ids.
pub const PAD_WORD: usize = 0;
pub const UNK_WORD: usize = 1;
pub const SENTINEL_WORD: usize = 2;

/// Floating-point element type of model tensors.
pub trait Real:
    LinalgScalar
    + Float
    + FromPrimitive
    + ScalarOperand
    + Debug
    + Display
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}
