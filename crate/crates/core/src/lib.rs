//! Playlist embedding toolkit.
//!
//! Learns fixed-length playlist representations from playlist corpora with
//! bag-of-words and recurrent autoencoder encoders, annotates songs and
//! playlists with genres by clustering co-occurrence embeddings, and
//! evaluates the representations with probing classifiers and an
//! approximate-nearest-neighbor recommendation task.

pub mod ann;
pub mod bowenc;
pub mod corpus;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod genre;
pub mod io;
pub mod linalg;
pub mod nncore;
pub mod pipeline;
pub mod probes;
pub mod recsys;
pub mod seq2seq;
pub mod song2vec;

pub use corpus::{Corpus, CorpusStats, FilterConfig, Playlist, SynthConfig, Track, Vocabulary};
pub use embedding::EmbeddingTable;
pub use encoder::PlaylistEncoder;
pub use error::{Error, Result};
