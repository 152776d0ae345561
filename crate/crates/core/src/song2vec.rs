//! Song embeddings from playlist co-occurrence: skipgram with negative
//! sampling over playlists-as-sentences.

use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::nncore::{log_sigmoid, sigmoid};

pub use crate::embedding::cosine;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SkipgramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub min_count: usize,
    pub epochs: usize,
    /// Initial learning rate; decays linearly to 1e-4 of itself.
    pub learning_rate: f64,
    pub seed: u64,
    /// Lock-free parallel updates; faster but not deterministic.
    pub parallel: bool,
}

impl Default for SkipgramConfig {
    fn default() -> Self {
        SkipgramConfig {
            dim: 32,
            window: 5,
            negatives: 5,
            min_count: 5,
            epochs: 5,
            learning_rate: 0.025,
            seed: 1,
            parallel: false,
        }
    }
}

/// Cumulative distribution over the vocabulary proportional to count^0.75.
pub struct NegativeSamplingTable {
    cdf: Vec<f64>,
}

impl NegativeSamplingTable {
    pub fn new(counts: &[usize]) -> Self {
        let mut cdf = Vec::with_capacity(counts.len());
        let mut acc = 0.0f64;
        for &c in counts {
            acc += (c as f64).powf(0.75);
            cdf.push(acc);
        }
        assert!(acc > 0.0, "negative-sampling table needs positive counts");
        for v in &mut cdf {
            *v /= acc;
        }
        NegativeSamplingTable { cdf }
    }

    pub fn len(&self) -> usize {
        self.cdf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cdf.is_empty()
    }

    pub fn probability(&self, i: usize) -> f64 {
        let prev = if i == 0 { 0.0 } else { self.cdf[i - 1] };
        self.cdf[i] - prev
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.gen();
        match self
            .cdf
            .binary_search_by(|p| p.partial_cmp(&u).unwrap_or(std::cmp::Ordering::Equal))
        {
            Ok(i) => i,
            Err(i) => i.min(self.cdf.len() - 1),
        }
    }
}

/// SGNS loss and gradients for one (center, context, negatives) triple:
/// loss = -log s(u.v) - sum_i log s(-u.n_i).
/// Returns (loss, d/dcenter, d/dcontext, d/dnegatives).
#[allow(clippy::type_complexity)]
pub fn sgns_pair_objective<F: crate::nncore::Real>(
    center: &[F],
    context: &[F],
    negatives: &[&[F]],
) -> (F, Vec<F>, Vec<F>, Vec<Vec<F>>) {
    let dim = center.len();
    assert_eq!(context.len(), dim);
    let dotf = |a: &[F], b: &[F]| -> F { a.iter().zip(b).map(|(x, y)| *x * *y).sum() };

    let pos = dotf(center, context);
    let mut loss = -log_sigmoid(pos);
    // d(-log s(x))/dx = s(x) - 1
    let gpos = sigmoid(pos) - F::one();
    let mut d_center: Vec<F> = context.iter().map(|v| gpos * *v).collect();
    let d_context: Vec<F> = center.iter().map(|v| gpos * *v).collect();

    let mut d_negs = Vec::with_capacity(negatives.len());
    for neg in negatives {
        assert_eq!(neg.len(), dim);
        let s = dotf(center, neg);
        loss = loss - log_sigmoid(-s);
        // d(-log s(-x))/dx = s(x)
        let gneg = sigmoid(s);
        for i in 0..dim {
            d_center[i] = d_center[i] + gneg * neg[i];
        }
        d_negs.push(center.iter().map(|v| gneg * *v).collect());
    }
    (loss, d_center, d_context, d_negs)
}

/// f32 storage that tolerates unsynchronized parallel updates (the classic
/// lock-free scheme). Single-threaded use is fully deterministic.
struct SharedVectors {
    dim: usize,
    data: Vec<AtomicU32>,
}

impl SharedVectors {
    fn zeros(n: usize, dim: usize) -> Self {
        SharedVectors {
            dim,
            data: (0..n * dim).map(|_| AtomicU32::new(0)).collect(),
        }
    }

    fn init_uniform(n: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 0.5 / dim as f32;
        SharedVectors {
            dim,
            data: (0..n * dim)
                .map(|_| AtomicU32::new(rng.gen_range(-bound..bound).to_bits()))
                .collect(),
        }
    }

    #[inline]
    fn load_row(&self, r: usize, out: &mut [f32]) {
        for (i, v) in out.iter_mut().enumerate() {
            *v = f32::from_bits(self.data[r * self.dim + i].load(Ordering::Relaxed));
        }
    }

    #[inline]
    fn add_row(&self, r: usize, delta: &[f32]) {
        for (i, d) in delta.iter().enumerate() {
            let slot = &self.data[r * self.dim + i];
            let cur = f32::from_bits(slot.load(Ordering::Relaxed));
            slot.store((cur + d).to_bits(), Ordering::Relaxed);
        }
    }

    fn into_rows(self) -> Vec<Vec<f32>> {
        let dim = self.dim;
        let flat: Vec<f32> = self
            .data
            .into_iter()
            .map(|a| f32::from_bits(a.into_inner()))
            .collect();
        flat.chunks(dim).map(|c| c.to_vec()).collect()
    }
}

struct SgnsVocab {
    ids: Vec<String>,
    counts: Vec<usize>,
    index: std::collections::HashMap<String, usize>,
}

fn sgns_vocab(corpus: &Corpus, min_count: usize) -> SgnsVocab {
    let occ = corpus.track_occurrence_counts();
    let mut kept: Vec<(&str, usize)> = occ
        .iter()
        .filter(|(_, &c)| c >= min_count)
        .map(|(&t, &c)| (t, c))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let ids: Vec<String> = kept.iter().map(|(t, _)| t.to_string()).collect();
    let counts: Vec<usize> = kept.iter().map(|(_, c)| *c).collect();
    let index = ids
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i))
        .collect();
    SgnsVocab { ids, counts, index }
}

/// Per-epoch mean pair loss alongside the learned table.
pub struct SkipgramOutput {
    pub table: EmbeddingTable,
    pub epoch_losses: Vec<f64>,
}

/// Trains skipgram-with-negative-sampling song vectors on a corpus. The
/// center vectors are the published embeddings.
pub fn train_skipgram(corpus: &Corpus, cfg: &SkipgramConfig) -> Result<SkipgramOutput> {
    if cfg.window < 1 || cfg.negatives < 1 {
        return Err(Error::config("window and negatives must be >= 1"));
    }
    let vocab = sgns_vocab(corpus, cfg.min_count);
    if vocab.ids.is_empty() {
        return Err(Error::data("empty skipgram vocabulary"));
    }
    let n = vocab.ids.len();
    let dim = cfg.dim;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centers = SharedVectors::init_uniform(n, dim, &mut rng);
    let contexts = SharedVectors::zeros(n, dim);
    let neg_table = NegativeSamplingTable::new(&vocab.counts);

    // Encoded playlists with out-of-vocabulary tracks dropped.
    let encoded: Vec<Vec<usize>> = corpus
        .playlists
        .iter()
        .map(|pl| {
            pl.track_ids
                .iter()
                .filter_map(|t| vocab.index.get(t).copied())
                .collect()
        })
        .filter(|v: &Vec<usize>| v.len() >= 2)
        .collect();

    let total_tokens: u64 = encoded.iter().map(|p| p.len() as u64).sum();
    let total_work = (total_tokens * cfg.epochs as u64).max(1);
    let processed = AtomicU64::new(0);
    let loss_bits_sum = AtomicU64::new(0); // f64 loss accumulated as micro-units
    let pair_count = AtomicU64::new(0);

    let run_playlist = |playlist: &[usize], rng: &mut ChaCha8Rng| {
        let mut center = vec![0.0f32; dim];
        let mut ctx = vec![0.0f32; dim];
        let mut neg = vec![0.0f32; dim];
        let mut d_center = vec![0.0f32; dim];
        let mut local_loss = 0.0f64;
        let mut local_pairs = 0u64;
        for (pos, &c_idx) in playlist.iter().enumerate() {
            let done = processed.fetch_add(1, Ordering::Relaxed);
            let progress = done as f64 / total_work as f64;
            let lr = (cfg.learning_rate * (1.0 - progress)).max(cfg.learning_rate * 1e-4) as f32;

            let lo = pos.saturating_sub(cfg.window);
            let hi = (pos + cfg.window).min(playlist.len() - 1);
            for t in lo..=hi {
                if t == pos {
                    continue;
                }
                let o_idx = playlist[t];
                centers.load_row(c_idx, &mut center);
                contexts.load_row(o_idx, &mut ctx);

                d_center.iter_mut().for_each(|v| *v = 0.0);
                // Positive update.
                let s: f64 = center
                    .iter()
                    .zip(&ctx)
                    .map(|(a, b)| *a as f64 * *b as f64)
                    .sum();
                local_loss -= log_sigmoid(s);
                let g = (sigmoid(s) - 1.0) as f32;
                for i in 0..dim {
                    d_center[i] += g * ctx[i];
                    ctx[i] = -lr * g * center[i];
                }
                contexts.add_row(o_idx, &ctx);

                // Negative updates.
                for _ in 0..cfg.negatives {
                    let mut n_idx = neg_table.sample(rng);
                    if n_idx == o_idx {
                        n_idx = neg_table.sample(rng);
                        if n_idx == o_idx {
                            continue;
                        }
                    }
                    contexts.load_row(n_idx, &mut neg);
                    let s: f64 = center
                        .iter()
                        .zip(&neg)
                        .map(|(a, b)| *a as f64 * *b as f64)
                        .sum();
                    local_loss -= log_sigmoid(-s);
                    let g = sigmoid(s) as f32;
                    for i in 0..dim {
                        d_center[i] += g * neg[i];
                        neg[i] = -lr * g * center[i];
                    }
                    contexts.add_row(n_idx, &neg);
                }

                for v in &mut d_center {
                    *v = -lr * *v;
                }
                centers.add_row(c_idx, &d_center);
                local_pairs += 1;
            }
        }
        // Micro-unit accumulation keeps the counters lock-free.
        loss_bits_sum.fetch_add((local_loss * 1e6) as u64, Ordering::Relaxed);
        pair_count.fetch_add(local_pairs, Ordering::Relaxed);
    };

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        loss_bits_sum.store(0, Ordering::Relaxed);
        pair_count.store(0, Ordering::Relaxed);
        if cfg.parallel {
            encoded.par_iter().enumerate().for_each(|(i, pl)| {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64) << 32 ^ i as u64);
                run_playlist(pl, &mut rng);
            });
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1 + epoch as u64));
            for pl in &encoded {
                run_playlist(pl, &mut rng);
            }
        }
        let pairs = pair_count.load(Ordering::Relaxed).max(1);
        epoch_losses.push(loss_bits_sum.load(Ordering::Relaxed) as f64 / 1e6 / pairs as f64);
    }

    let rows = centers.into_rows();
    let mut table = EmbeddingTable::new(dim);
    for (id, row) in vocab.ids.iter().zip(rows) {
        table.insert(id.clone(), row)?;
    }
    Ok(SkipgramOutput {
        table,
        epoch_losses,
    })
}

/// Exact top-k by cosine (delegates to the table; ties break by id).
pub fn nearest_songs(table: &EmbeddingTable, id: &str, k: usize) -> Result<Vec<(String, f32)>> {
    table.nearest(id, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SynthConfig};
    use std::collections::BTreeMap;

    fn clique_corpus() -> Corpus {
        // Two disjoint 5-song cliques; playlists alternate within a clique.
        let mut playlists = Vec::new();
        let mut tracks = BTreeMap::new();
        for clique in 0..2 {
            for i in 0..5 {
                let id = format!("c{}t{}", clique, i);
                tracks.insert(
                    id.clone(),
                    crate::corpus::Track {
                        track_id: id,
                        artist_id: format!("a{}", clique),
                        artist_genres: vec![],
                    },
                );
            }
            for p in 0..40 {
                let ids: Vec<String> = (0..5)
                    .map(|i| format!("c{}t{}", clique, (i + p) % 5))
                    .collect();
                playlists.push(crate::corpus::Playlist {
                    playlist_id: format!("c{}p{}", clique, p),
                    track_ids: ids,
                });
            }
        }
        Corpus {
            playlists,
            tracks,
            provenance: crate::corpus::Provenance::Synthetic,
        }
    }

    #[test]
    fn sgns_objective_closed_forms() {
        let zero = vec![0.0f64; 4];
        let (loss, _, _, _) = sgns_pair_objective(&zero, &zero, &[&zero]);
        assert!((loss - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);

        let u = [1.0f64, 0.0];
        let v = [0.0f64, 1.0];
        let (loss, _, _, _) = sgns_pair_objective(&u, &v, &[]);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn sgns_gradients_match_finite_differences() {
        // 64-bit central differences over every coordinate of the triple.
        let center = [0.3f64, -0.2, 0.5];
        let context = [0.1f64, 0.4, -0.6];
        let neg1 = [0.2f64, 0.2, 0.1];
        let neg2 = [-0.5f64, 0.3, 0.0];

        let eval = |c: &[f64], ctx: &[f64], n1: &[f64], n2: &[f64]| -> f64 {
            sgns_pair_objective(c, ctx, &[n1, n2]).0
        };
        let (_, d_c, d_ctx, d_negs) = sgns_pair_objective(&center, &context, &[&neg1, &neg2]);

        let eps = 1e-6f64;
        for i in 0..3 {
            let mut p = center;
            let mut m = center;
            p[i] += eps;
            m[i] -= eps;
            let num =
                (eval(&p, &context, &neg1, &neg2) - eval(&m, &context, &neg1, &neg2)) / (2.0 * eps);
            assert!((num - d_c[i]).abs() < 1e-6, "center[{}]", i);

            let mut p = context;
            let mut m = context;
            p[i] += eps;
            m[i] -= eps;
            let num =
                (eval(&center, &p, &neg1, &neg2) - eval(&center, &m, &neg1, &neg2)) / (2.0 * eps);
            assert!((num - d_ctx[i]).abs() < 1e-6, "context[{}]", i);

            let mut p = neg1;
            let mut m = neg1;
            p[i] += eps;
            m[i] -= eps;
            let num = (eval(&center, &context, &p, &neg2) - eval(&center, &context, &m, &neg2))
                / (2.0 * eps);
            assert!((num - d_negs[0][i]).abs() < 1e-6, "neg1[{}]", i);
        }
    }

    #[test]
    fn negative_table_matches_power_law() {
        let counts = vec![1000usize, 300, 120, 50, 8];
        let table = NegativeSamplingTable::new(&counts);
        let total: f64 = counts.iter().map(|&c| (c as f64).powf(0.75)).sum();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut hits = vec![0u64; counts.len()];
        let draws = 1_000_000;
        for _ in 0..draws {
            hits[table.sample(&mut rng)] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            let expect = (c as f64).powf(0.75) / total;
            let got = hits[i] as f64 / draws as f64;
            assert!(
                (got - expect).abs() < 0.02,
                "class {}: {} vs {}",
                i,
                got,
                expect
            );
            assert!((table.probability(i) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn training_is_deterministic_single_threaded() {
        let corpus = clique_corpus();
        let cfg = SkipgramConfig {
            dim: 2,
            epochs: 1,
            min_count: 1,
            seed: 7,
            ..SkipgramConfig::default()
        };
        let a = train_skipgram(&corpus, &cfg).unwrap();
        let b = train_skipgram(&corpus, &cfg).unwrap();
        assert_eq!(a.table, b.table);
    }

    #[test]
    fn cliques_separate() {
        let corpus = clique_corpus();
        let cfg = SkipgramConfig {
            dim: 8,
            epochs: 12,
            min_count: 1,
            window: 3,
            seed: 3,
            ..SkipgramConfig::default()
        };
        let out = train_skipgram(&corpus, &cfg).unwrap();
        let t = &out.table;
        let mut intra = Vec::new();
        let mut cross = Vec::new();
        for a in 0..t.len() {
            for b in (a + 1)..t.len() {
                let cos = cosine(t.row(a), t.row(b)).unwrap();
                if t.id(a).chars().nth(1) == t.id(b).chars().nth(1) {
                    intra.push(cos);
                } else {
                    cross.push(cos);
                }
            }
        }
        let mean = |v: &[f32]| v.iter().sum::<f32>() / v.len() as f32;
        assert!(
            mean(&intra) > mean(&cross),
            "intra {} cross {}",
            mean(&intra),
            mean(&cross)
        );
    }

    #[test]
    fn loss_non_increasing_over_first_epochs() {
        for seed in [1u64, 2, 3, 4, 5] {
            let (corpus, _) = generate_synthetic(&SynthConfig {
                n_genres: 4,
                songs_per_genre: 40,
                n_playlists: 400,
                length_median: 15.0,
                seed,
                ..SynthConfig::default()
            })
            .unwrap();
            let out = train_skipgram(
                &corpus,
                &SkipgramConfig {
                    dim: 8,
                    epochs: 3,
                    min_count: 1,
                    seed,
                    ..SkipgramConfig::default()
                },
            )
            .unwrap();
            let l = &out.epoch_losses;
            assert_eq!(l.len(), 3);
            for w in l.windows(2) {
                assert!(
                    w[1] <= w[0] * 1.02,
                    "epoch loss should not rise >2%: {:?}",
                    l
                );
            }
        }
    }

    #[test]
    fn genre_retrieval_on_synthetic_corpus() {
        let (corpus, truth) = generate_synthetic(&SynthConfig {
            n_genres: 6,
            songs_per_genre: 50,
            n_playlists: 1500,
            length_median: 20.0,
            noise_prob: 0.1,
            seed: 9,
            ..SynthConfig::default()
        })
        .unwrap();
        let out = train_skipgram(
            &corpus,
            &SkipgramConfig {
                dim: 16,
                epochs: 6,
                min_count: 2,
                seed: 9,
                ..SkipgramConfig::default()
            },
        )
        .unwrap();
        let table = &out.table;
        // precision@10 of same-genre neighbors, over a sample of songs.
        let mut correct = 0usize;
        let mut total = 0usize;
        for i in (0..table.len()).step_by(7) {
            let id = table.id(i).to_string();
            let genre = &truth.song_genres[&id];
            for (nid, _) in table.nearest(&id, 10).unwrap() {
                total += 1;
                if &truth.song_genres[&nid] == genre {
                    correct += 1;
                }
            }
        }
        let precision = correct as f64 / total as f64;
        assert!(
            precision >= 0.8,
            "genre retrieval precision@10 {} below 0.8",
            precision
        );
    }
}
