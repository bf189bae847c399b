//! Numerical core: matrices, a differentiation tape, the encoder-decoder,
//! optimization and checkpoints.

pub mod checkpoint;
pub mod model;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use checkpoint::{load_params, save_params, CheckpointError};
pub use model::{build_vocab, teacher_pair, ModelError, Seq2SeqParams, SeqBatch, Vocab, BOS, EOS, PAD, SEP, UNK};
pub use optim::{adam_step, clip_grad_norm, lr_schedule, AdamState, LinearSchedule};
pub use tape::{Grads, Tape, Var};
pub use tensor::{Mat, Scalar};
