//! Training, decoding, checkpoint averaging and evaluation.

mod checkpoint;
mod decode;
mod eval;
mod gradcheck;
mod schedule;
mod train;

pub use checkpoint::{average, checkpoint_average, Checkpoint, CHECKPOINT_VERSION};
pub use decode::{BeamItem, DecodeOptions, Decoded, Parser};
pub use eval::{evaluate, AttachmentScores};
pub use gradcheck::{gradcheck, tiny_setup, GradcheckReport, TensorCheck, GRAD_FLOOR};
pub use schedule::{Adam, TrainSchedule};
pub use train::{train, EpochRecord, TrainConfig, TrainData, TrainOutcome};
