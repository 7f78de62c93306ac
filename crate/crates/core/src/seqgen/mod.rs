//! Primitive sequences: tokenization, the recurrent mixture-density
//! generator, its training and sampling.

mod mdn;
mod model;
mod sample;
mod token;
mod train;
mod weights;

pub use mdn::{mdn_loss, mixture_from_raw, step_loss, MixtureParams, PROB_FLOOR};
pub use model::{
    backward, forward_sequence, item_loss, lstm_step, mdn_head, rotation_heads, teacher_inputs, total_loss,
    LossBreakdown, LstmState, StepOutput, TrainItem,
};
pub use sample::{generate, sample_next, sample_rotation, Draw, SamplingMode};
pub use token::{
    detokenize, sequence_primitives, tokenize, Stats, Token, TokenSequence, INPUT_DIM, MIN_DECODED_SCALE,
};
pub use train::{build_bank, train, Dataset, TrainConfig, TrainOutcome};
pub use weights::{
    BankEntry, EncoderKind, ModelConfig, ModelWeights, NamedTensor, TensorInfo, WeightContainer, WEIGHT_FORMAT,
    WEIGHT_VERSION,
};
pub(crate) use weights::EncoderSlots;
