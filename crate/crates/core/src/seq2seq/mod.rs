//! Recurrent autoencoder playlist encoders: a stacked (optionally
//! bidirectional) encoder, a global-attention decoder, teacher-forced
//! training, and fixed-length embedding extraction.

mod model;
mod train;

use serde::{Deserialize, Serialize};

use crate::nncore::{CellKind, Optimizer};

pub use model::{AttentionKind, AttentionStep, EncoderStates, Seq2seqModel};
pub use train::{
    perplexity, playlist_embedding, train_autoencoder, EpochStats, Seq2seqEncoder, TrainOutput,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Seq2seqConfig {
    pub layers: usize,
    pub hidden: usize,
    pub cell: CellKind,
    pub bidirectional: bool,
    pub attention: AttentionKind,
    /// Training keeps only playlists strictly shorter than this.
    pub max_len: usize,
    pub vocab_min_count: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub max_grad_norm: f64,
    pub seed: u64,
    /// Optional cap on the number of training playlists (seeded subsample).
    pub max_train_playlists: Option<usize>,
    /// Parallel gradient accumulation over fixed-size chunks; results are
    /// identical to the single-threaded path because chunk boundaries and
    /// the reduction order are fixed.
    pub parallel: bool,
}

impl Default for Seq2seqConfig {
    fn default() -> Self {
        Seq2seqConfig {
            layers: 3,
            hidden: 64,
            cell: CellKind::Lstm,
            bidirectional: false,
            attention: AttentionKind::GeneralDot,
            max_len: 50,
            vocab_min_count: 20,
            epochs: 15,
            batch_size: 64,
            optimizer: Optimizer::default(),
            max_grad_norm: 1.0,
            seed: 1234,
            max_train_playlists: None,
            parallel: true,
        }
    }
}
