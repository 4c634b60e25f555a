//! Recurrent cells, input embeddings and the projection head.
//!
//! The FG-LSTM is an LSTM whose input and recurrent weights are masked so that
//! hidden unit `i` only reads inputs and hidden units with the same residue
//! `i mod p`. It is therefore equivalent to `p` small LSTMs run side by side
//! (see [`split_into_group_cells`]), but executes as one cell.

mod embedding;
mod head;
mod lstm;
mod model;
mod recurrent;

pub use embedding::{embed_input, EmbeddingTable};
pub use head::{softmax, Dense, HeadCache, OutputActivation, ProjectionHead};
pub use lstm::{
    deinterleave, dense_kernel_size, effective_kernel_size, fg_lstm_step, interleave_into, lstm_step,
    merge_group_cells, split_into_group_cells, CellParams, Gate, GateValues, MaskSpec,
};
pub use model::{
    forward_sequence, Architecture, CacheKey, EncodedInput, EncodedSequence, EncodingConfig, ForwardCache, Model,
    ModelConfig, Params, MODEL_FORMAT,
};
pub use recurrent::{backprop_recurrent, run_recurrent, RecurrentCache, SequenceNoise};
