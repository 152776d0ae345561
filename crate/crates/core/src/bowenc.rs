//! Bag-of-words playlist encoders: plain arithmetic mean and the
//! inverse-frequency weighted mean with dominant-singular-direction removal.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Playlist};
use crate::embedding::EmbeddingTable;
use crate::encoder::{PlaylistEncoder, BASE_BOW, WEIGHTED_BOW};
use crate::error::{Error, Result};
use crate::io::Checkpoint;
use crate::linalg::{dominant_eigenvector, gram_matrix};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SifConfig {
    /// Weighting parameter; weight(w) = a / (a + p(w)).
    pub a: f64,
    pub power_iters: usize,
    pub tol: f64,
}

impl Default for SifConfig {
    fn default() -> Self {
        SifConfig {
            a: (-3.0f64).exp(),
            power_iters: 100,
            tol: 1e-9,
        }
    }
}

/// Unigram song probabilities over the filtered corpus.
#[derive(Debug, Clone)]
pub struct FrequencyTable {
    probs: HashMap<String, f64>,
}

impl FrequencyTable {
    pub fn from_corpus(corpus: &Corpus) -> Result<Self> {
        let occ = corpus.track_occurrence_counts();
        let total: usize = occ.values().sum();
        if total == 0 {
            return Err(Error::data("cannot build frequencies of an empty corpus"));
        }
        let probs = occ
            .into_iter()
            .map(|(t, c)| (t.to_string(), c as f64 / total as f64))
            .collect();
        Ok(FrequencyTable { probs })
    }

    pub fn probability(&self, track_id: &str) -> f64 {
        self.probs.get(track_id).copied().unwrap_or(0.0)
    }

    pub fn total_probability(&self) -> f64 {
        self.probs.values().sum()
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// weight = a / (a + p_w)
pub fn sif_weight(p_w: f64, a: f64) -> f64 {
    a / (a + p_w)
}

/// Unweighted mean of the song vectors; songs without an embedding are
/// skipped. Errors when nothing is embeddable.
pub fn bow_embed(track_ids: &[String], table: &EmbeddingTable) -> Result<Vec<f32>> {
    let mut sum = vec![0.0f64; table.dim()];
    let mut n = 0usize;
    for tid in track_ids {
        if let Some(row) = table.get(tid) {
            for (s, v) in sum.iter_mut().zip(row) {
                *s += *v as f64;
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::data("playlist has no embeddable songs"));
    }
    Ok(sum.into_iter().map(|v| (v / n as f64) as f32).collect())
}

/// Dominant right-singular direction of the row matrix X by power iteration
/// on X^T X. Returns (unit vector, converged flag).
pub fn first_singular_vector(
    rows: &[&[f32]],
    iters: usize,
    tol: f64,
) -> Result<(Vec<f64>, bool)> {
    if rows.is_empty() {
        return Err(Error::data("singular vector of an empty matrix"));
    }
    let d = rows[0].len();
    if rows.iter().all(|r| r.iter().all(|&v| v == 0.0)) {
        return Err(Error::data("singular vector of a zero matrix"));
    }
    let g = gram_matrix(rows.iter().copied(), d);
    let res = dominant_eigenvector(&g, d, iters, tol);
    Ok((res.vector, res.converged))
}

/// The fitted weighted-BoW encoder: weighting parameter, frequency table,
/// and the frozen dominant direction to remove.
pub struct SifModel {
    pub a: f64,
    pub u: Vec<f64>,
    freq: FrequencyTable,
    songs: EmbeddingTable,
}

impl SifModel {
    /// Weighted mean without the projection removal.
    fn weighted_mean(&self, track_ids: &[String]) -> Result<Vec<f64>> {
        let dim = self.songs.dim();
        let mut sum = vec![0.0f64; dim];
        let mut n = 0usize;
        for tid in track_ids {
            if let Some(row) = self.songs.get(tid) {
                let w = sif_weight(self.freq.probability(tid), self.a);
                for (s, v) in sum.iter_mut().zip(row) {
                    *s += w * *v as f64;
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::data("playlist has no embeddable songs"));
        }
        for s in &mut sum {
            *s /= n as f64;
        }
        Ok(sum)
    }

    fn remove_component(&self, v: &mut [f64]) {
        let proj: f64 = v.iter().zip(&self.u).map(|(a, b)| a * b).sum();
        for (vi, ui) in v.iter_mut().zip(&self.u) {
            *vi -= proj * ui;
        }
    }

    pub fn embed(&self, track_ids: &[String]) -> Result<Vec<f32>> {
        let mut v = self.weighted_mean(track_ids)?;
        self.remove_component(&mut v);
        Ok(v.into_iter().map(|x| x as f32).collect())
    }

    /// Persists (a, u) plus the inputs needed for re-embedding later.
    pub fn write_file(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "kind": "sif_model",
            "a": self.a,
            "dim": self.songs.dim(),
        });
        let mut ck = Checkpoint::new(meta.to_string());
        ck.push_vec("u", &self.u);
        ck.write_file(path)
    }
}

/// Fits the weighted encoder over a playlist set: weighted means first, then
/// the dominant direction of the embedded corpus is computed and removed
/// from every vector. The direction is kept in the model so unseen playlists
/// embed consistently.
pub fn fit_sif(
    playlists: &[Playlist],
    songs: &EmbeddingTable,
    freq: &FrequencyTable,
    cfg: &SifConfig,
) -> Result<(SifModel, EmbeddingTable)> {
    if cfg.a <= 0.0 {
        return Err(Error::config("sif parameter a must be positive"));
    }
    let mut model = SifModel {
        a: cfg.a,
        u: vec![],
        freq: freq.clone(),
        songs: songs.clone(),
    };
    let mut means: Vec<(String, Vec<f64>)> = Vec::with_capacity(playlists.len());
    for pl in playlists {
        means.push((pl.playlist_id.clone(), model.weighted_mean(&pl.track_ids)?));
    }
    if means.is_empty() {
        return Err(Error::data("no playlists to fit"));
    }

    let rows_f32: Vec<Vec<f32>> = means
        .iter()
        .map(|(_, v)| v.iter().map(|&x| x as f32).collect())
        .collect();
    let row_refs: Vec<&[f32]> = rows_f32.iter().map(|r| r.as_slice()).collect();
    let (u, _converged) = first_singular_vector(&row_refs, cfg.power_iters, cfg.tol)?;
    model.u = u;

    let mut table = EmbeddingTable::new(songs.dim());
    for (id, mut v) in means {
        model.remove_component(&mut v);
        table.insert(id, v.into_iter().map(|x| x as f32).collect())?;
    }
    Ok((model, table))
}

/// The arithmetic-mean encoder.
pub struct BowEncoder {
    songs: EmbeddingTable,
}

impl BowEncoder {
    pub fn new(songs: EmbeddingTable) -> Self {
        BowEncoder { songs }
    }
}

impl PlaylistEncoder for BowEncoder {
    fn name(&self) -> &str {
        BASE_BOW
    }
    fn dim(&self) -> usize {
        self.songs.dim()
    }
    fn embed(&self, track_ids: &[String]) -> Result<Vec<f32>> {
        bow_embed(track_ids, &self.songs)
    }
}

impl PlaylistEncoder for SifModel {
    fn name(&self) -> &str {
        WEIGHTED_BOW
    }
    fn dim(&self) -> usize {
        self.songs.dim()
    }
    fn embed(&self, track_ids: &[String]) -> Result<Vec<f32>> {
        SifModel::embed(self, track_ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Playlist, Provenance, Track};
    use std::collections::BTreeMap;

    fn song_table() -> EmbeddingTable {
        let mut t = EmbeddingTable::new(2);
        t.insert("s1", vec![1.0, 0.0]).unwrap();
        t.insert("s2", vec![0.0, 1.0]).unwrap();
        t.insert("s3", vec![1.0, 1.0]).unwrap();
        t
    }

    fn pl(id: &str, tracks: &[&str]) -> Playlist {
        Playlist {
            playlist_id: id.into(),
            track_ids: tracks.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn bow_mean_and_permutation_invariance() {
        let t = song_table();
        let v = bow_embed(&pl("p", &["s1", "s2"]).track_ids, &t).unwrap();
        assert_eq!(v, vec![0.5, 0.5]);

        let single = bow_embed(&pl("p", &["s3"]).track_ids, &t).unwrap();
        assert_eq!(single, vec![1.0, 1.0]);

        let fwd = bow_embed(&pl("p", &["s1", "s2", "s3"]).track_ids, &t).unwrap();
        let rev = bow_embed(&pl("p", &["s3", "s2", "s1"]).track_ids, &t).unwrap();
        assert_eq!(fwd, rev);

        assert!(bow_embed(&pl("p", &["zz"]).track_ids, &t).is_err());
    }

    #[test]
    fn sif_weight_closed_forms() {
        let a = (-3.0f64).exp();
        assert_eq!(sif_weight(0.0, a), 1.0);
        assert!((sif_weight(a, a) - 0.5).abs() < 1e-15);
        assert!((sif_weight(0.01, a) - 0.8327).abs() < 1e-4);
        // Exact algebraic identity: w * (a + p) = a.
        for p in [0.0, 0.001, 0.01, 0.3, 1.0] {
            assert!((sif_weight(p, a) * (a + p) - a).abs() < 1e-15);
        }
        // Strictly decreasing in p_w.
        let mut prev = f64::INFINITY;
        for i in 0..50 {
            let w = sif_weight(i as f64 / 50.0, a);
            assert!(w < prev);
            prev = w;
        }
        // Lower a downweights frequent songs more.
        let a_small = (-5.0f64).exp();
        for p in [0.001, 0.01, 0.1] {
            assert!(sif_weight(p, a_small) < sif_weight(p, a));
        }
    }

    #[test]
    fn first_singular_vector_rank_one() {
        let r1 = [3.0f32, 4.0];
        let r2 = [6.0f32, 8.0];
        let rows: Vec<&[f32]> = vec![&r1, &r2];
        let (u, converged) = first_singular_vector(&rows, 200, 1e-12).unwrap();
        assert!(converged);
        let expect = [0.6f64, 0.8];
        let cos: f64 = u.iter().zip(&expect).map(|(a, b)| a * b).sum();
        assert!(cos.abs() > 1.0 - 1e-9);
        let norm: f64 = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn first_singular_vector_known_spectrum() {
        // Rows along two axes with singular values 10 and 1.
        let rows_data: Vec<Vec<f32>> = vec![vec![10.0, 0.0], vec![0.0, 1.0]];
        let rows: Vec<&[f32]> = rows_data.iter().map(|r| r.as_slice()).collect();
        let (u, _) = first_singular_vector(&rows, 300, 1e-12).unwrap();
        assert!(u[0].abs() > 1.0 - 1e-6);
    }

    fn tiny_corpus(playlists: Vec<Playlist>) -> Corpus {
        let mut tracks = BTreeMap::new();
        for p in &playlists {
            for t in &p.track_ids {
                tracks.entry(t.clone()).or_insert_with(|| Track {
                    track_id: t.clone(),
                    artist_id: "a".into(),
                    artist_genres: vec![],
                });
            }
        }
        Corpus {
            playlists,
            tracks,
            provenance: Provenance::Filtered,
        }
    }

    #[test]
    fn uniform_frequencies_reduce_to_scaled_mean() {
        let t = song_table();
        // Every song occurs exactly once -> p uniform.
        let corpus = tiny_corpus(vec![pl("p1", &["s1", "s2", "s3"])]);
        let freq = FrequencyTable::from_corpus(&corpus).unwrap();
        let cfg = SifConfig::default();
        let model = SifModel {
            a: cfg.a,
            u: vec![],
            freq,
            songs: t.clone(),
        };
        let wm = model.weighted_mean(&pl("p", &["s1", "s2"]).track_ids).unwrap();
        let bow = bow_embed(&pl("p", &["s1", "s2"]).track_ids, &t).unwrap();
        let w = sif_weight(1.0 / 3.0, cfg.a);
        for i in 0..2 {
            assert!((wm[i] - w * bow[i] as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn residual_projection_vanishes() {
        let corpus = tiny_corpus(vec![
            pl("p1", &["s1", "s2"]),
            pl("p2", &["s2", "s3"]),
            pl("p3", &["s1", "s3"]),
        ]);
        let t = song_table();
        let freq = FrequencyTable::from_corpus(&corpus).unwrap();
        let (model, table) = fit_sif(&corpus.playlists, &t, &freq, &SifConfig::default()).unwrap();
        for (_, row) in table.rows() {
            let norm: f64 = row.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            let proj: f64 = row
                .iter()
                .zip(&model.u)
                .map(|(&v, u)| v as f64 * u)
                .sum();
            if norm > 0.0 {
                assert!(proj.abs() / norm < 1e-6, "residual {} norm {}", proj, norm);
            }
        }
    }

    #[test]
    fn sif_three_playlist_hand_fixture() {
        // Hand-computed oracle: songs e1=(1,0), e2=(0,1), e3=(1,1);
        // occurrences: s1 x2, s2 x2, s3 x2 -> p = 1/3 each, weights equal w.
        // means: p1=(w/2)(1,1), p2=(w/2)(1,2), p3=(w/2)(2,1).
        let corpus = tiny_corpus(vec![
            pl("p1", &["s1", "s2"]),
            pl("p2", &["s2", "s3"]),
            pl("p3", &["s1", "s3"]),
        ]);
        let t = song_table();
        let freq = FrequencyTable::from_corpus(&corpus).unwrap();
        let cfg = SifConfig::default();
        let model = SifModel {
            a: cfg.a,
            u: vec![],
            freq: freq.clone(),
            songs: t.clone(),
        };
        let w = sif_weight(1.0 / 3.0, cfg.a);
        let expect = [
            ("p1", [w / 2.0, w / 2.0]),
            ("p2", [w / 2.0, w]),
            ("p3", [w, w / 2.0]),
        ];
        for (pid, exp) in expect {
            let got = model
                .weighted_mean(
                    &corpus
                        .playlists
                        .iter()
                        .find(|p| p.playlist_id == pid)
                        .unwrap()
                        .track_ids,
                )
                .unwrap();
            for i in 0..2 {
                assert!(
                    (got[i] - exp[i]).abs() < 1e-12,
                    "{}[{}]: {} vs {}",
                    pid,
                    i,
                    got[i],
                    exp[i]
                );
            }
        }
    }

    #[test]
    fn frequency_table_sums_to_one() {
        let corpus = tiny_corpus(vec![
            pl("p1", &["s1", "s2", "s3", "s1"]),
            pl("p2", &["s2", "s3"]),
        ]);
        let freq = FrequencyTable::from_corpus(&corpus).unwrap();
        assert!((freq.total_probability() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn dominant_energy_drops_after_removal() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        // Random playlists over a random song table with a planted common
        // direction so there is something to remove.
        let dim = 6;
        let mut songs = EmbeddingTable::new(dim);
        let common: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0..1.0f32)).collect();
        for i in 0..40 {
            let v: Vec<f32> = (0..dim)
                .map(|j| common[j] * 2.0 + rng.gen_range(-0.5..0.5f32))
                .collect();
            songs.insert(format!("s{:02}", i), v).unwrap();
        }
        let playlists: Vec<Playlist> = (0..30)
            .map(|i| {
                let ids = (0..8)
                    .map(|_| format!("s{:02}", rng.gen_range(0..40)))
                    .collect();
                Playlist {
                    playlist_id: format!("p{}", i),
                    track_ids: ids,
                }
            })
            .collect();
        let corpus = tiny_corpus(playlists.clone());
        let freq = FrequencyTable::from_corpus(&corpus).unwrap();
        let (_, table) = fit_sif(&playlists, &songs, &freq, &SifConfig::default()).unwrap();

        let energy_ratio = |rows: Vec<&[f32]>| -> f64 {
            let g = gram_matrix(rows.into_iter(), dim);
            let trace: f64 = (0..dim).map(|i| g[i * dim + i]).sum();
            let top = dominant_eigenvector(&g, dim, 200, 1e-12).value;
            top / trace
        };
        let model = SifModel {
            a: SifConfig::default().a,
            u: vec![],
            freq,
            songs: songs.clone(),
        };
        let pre_rows: Vec<Vec<f32>> = playlists
            .iter()
            .map(|p| {
                model
                    .weighted_mean(&p.track_ids)
                    .unwrap()
                    .into_iter()
                    .map(|v| v as f32)
                    .collect()
            })
            .collect();
        let pre = energy_ratio(pre_rows.iter().map(|r| r.as_slice()).collect());
        let post = energy_ratio((0..table.len()).map(|i| table.row(i)).collect());
        assert!(post < pre, "dominant energy {} should drop below {}", post, pre);
    }
}
