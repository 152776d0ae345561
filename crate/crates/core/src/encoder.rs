//! The encoder abstraction: anything that maps an ordered track-id list to a
//! fixed-length vector.

use rayon::prelude::*;

use crate::corpus::Playlist;
use crate::embedding::EmbeddingTable;
use crate::error::Result;

/// Canonical encoder names used in reports.
pub const BASE_BOW: &str = "base-bow";
pub const WEIGHTED_BOW: &str = "weighted-bow";
pub const BASE_SEQ2SEQ: &str = "base-seq2seq";
pub const BI_SEQ2SEQ: &str = "bi-seq2seq";

pub trait PlaylistEncoder: Send + Sync {
    /// Stable encoder name for reports ("base-bow", "bi-seq2seq", ...).
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, track_ids: &[String]) -> Result<Vec<f32>>;
}

/// Embeds a set of playlists into a table keyed by playlist id. Playlists
/// are independent, so the work runs in parallel; output order is fixed by
/// the input order.
pub fn embed_playlists(
    encoder: &dyn PlaylistEncoder,
    playlists: &[Playlist],
) -> Result<EmbeddingTable> {
    let vectors: Vec<Result<Vec<f32>>> = playlists
        .par_iter()
        .map(|pl| encoder.embed(&pl.track_ids))
        .collect();
    let mut table = EmbeddingTable::new(encoder.dim());
    for (pl, vec) in playlists.iter().zip(vectors) {
        table.insert(pl.playlist_id.clone(), vec?)?;
    }
    Ok(table)
}
