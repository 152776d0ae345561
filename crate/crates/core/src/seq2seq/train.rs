//! Teacher-forced autoencoder training, perplexity, and embedding
//! extraction for trained models.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Vocabulary, BOS, EOS, UNK};
use crate::encoder::{PlaylistEncoder, BASE_SEQ2SEQ, BI_SEQ2SEQ};
use crate::error::{Error, Result};
use crate::io::Checkpoint;
use crate::nncore::{clip_grad_norm, rf, Real, Tensor};

use super::model::Seq2seqModel;
use super::Seq2seqConfig;

/// Fixed chunk size for gradient accumulation. Chunk boundaries (not thread
/// scheduling) determine summation order, so results do not depend on the
/// number of worker threads.
const GRAD_CHUNK: usize = 16;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub perplexity: f64,
    pub token_accuracy: f64,
}

/// A trained autoencoder bundled with its vocabulary and training log.
pub struct TrainOutput {
    pub model: Seq2seqModel<f32>,
    pub vocab_tokens: Vec<String>,
    pub log: Vec<EpochStats>,
}

impl TrainOutput {
    pub fn encoder(&self) -> Seq2seqEncoder {
        Seq2seqEncoder::new(self.model.clone(), self.vocab_tokens.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let extra = serde_json::json!({
            "vocab_tokens": self.vocab_tokens,
            "log": self.log,
        });
        self.model.to_checkpoint(extra).write_file(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::read_file(path)?;
        let (model, extra) = Seq2seqModel::<f32>::from_checkpoint(&ck)?;
        let vocab_tokens: Vec<String> = serde_json::from_value(extra["vocab_tokens"].clone())
            .map_err(|e| Error::format(format!("vocab_tokens: {}", e)))?;
        let log: Vec<EpochStats> = serde_json::from_value(extra["log"].clone()).unwrap_or_default();
        Ok(TrainOutput {
            model,
            vocab_tokens,
            log,
        })
    }
}

/// Trains the autoencoder: the decoder reconstructs the encoder's input
/// under teacher forcing. Playlists with length >= cfg.max_len are excluded
/// from training.
pub fn train_autoencoder(corpus: &Corpus, cfg: &Seq2seqConfig) -> Result<TrainOutput> {
    let vocab = crate::corpus::build_vocab(corpus, cfg.vocab_min_count)?;
    train_autoencoder_with_vocab(corpus, cfg, &vocab)
}

pub fn train_autoencoder_with_vocab(
    corpus: &Corpus,
    cfg: &Seq2seqConfig,
    vocab: &Vocabulary,
) -> Result<TrainOutput> {
    let mut sequences: Vec<Vec<usize>> = corpus
        .playlists
        .iter()
        .filter(|pl| !pl.is_empty() && pl.len() < cfg.max_len)
        .map(|pl| vocab.encode_playlist(pl))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x53_65_71_32);
    if let Some(cap) = cfg.max_train_playlists {
        if sequences.len() > cap {
            sequences.shuffle(&mut rng);
            sequences.truncate(cap);
        }
    }
    if sequences.is_empty() {
        return Err(Error::data("no playlists shorter than max_len to train on"));
    }

    let mut model = Seq2seqModel::<f32>::new(cfg, vocab.size())?;
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        sequences.shuffle(&mut rng);
        let mut epoch_nll = 0.0f64;
        let mut epoch_tokens = 0usize;
        let mut epoch_correct = 0usize;

        for batch in sequences.chunks(cfg.batch_size.max(1)) {
            let batch_tokens: usize = batch.iter().map(|s| s.len() + 1).sum();
            let scale = rf::<f32>(1.0 / batch_tokens as f64);

            let chunks: Vec<&[Vec<usize>]> = batch.chunks(GRAD_CHUNK).collect();
            let run_chunk = |chunk: &&[Vec<usize>]| -> Result<(Vec<Tensor<f32>>, f64, usize, usize)> {
                let mut fork = model.clone();
                fork.zero_grads();
                let mut nll = 0.0;
                let mut tokens = 0;
                let mut correct = 0;
                for seq in chunk.iter() {
                    let (n, t, c) = fork.train_step(seq, BOS, EOS, scale)?;
                    nll += n;
                    tokens += t;
                    correct += c;
                }
                Ok((fork.take_grads(), nll, tokens, correct))
            };
            let results: Vec<Result<(Vec<Tensor<f32>>, f64, usize, usize)>> = if cfg.parallel {
                chunks.par_iter().map(run_chunk).collect()
            } else {
                chunks.iter().map(run_chunk).collect()
            };
            // Reduce in chunk order: deterministic regardless of threads.
            for res in results {
                let (grads, nll, tokens, correct) = res?;
                model.add_grads(&grads);
                epoch_nll += nll;
                epoch_tokens += tokens;
                epoch_correct += correct;
            }

            {
                let mut params = model.params_mut();
                let mut grads: Vec<&mut Tensor<f32>> =
                    params.iter_mut().map(|p| &mut p.grad).collect();
                clip_grad_norm(&mut grads, cfg.max_grad_norm);
            }
            for p in model.params_mut() {
                cfg.optimizer.update(p);
            }
        }

        log.push(EpochStats {
            epoch,
            perplexity: (epoch_nll / epoch_tokens.max(1) as f64).exp(),
            token_accuracy: epoch_correct as f64 / epoch_tokens.max(1) as f64,
        });
    }

    let vocab_tokens: Vec<String> = (0..vocab.size())
        .map(|i| vocab.decode(i).unwrap().to_string())
        .collect();
    Ok(TrainOutput {
        model,
        vocab_tokens,
        log,
    })
}

/// exp(mean teacher-forced negative log-likelihood per target token).
pub fn perplexity<F: Real>(
    model: &Seq2seqModel<F>,
    sequences: &[Vec<usize>],
) -> Result<f64> {
    if sequences.is_empty() {
        return Err(Error::data("perplexity of an empty playlist set"));
    }
    let parts: Vec<Result<(f64, usize)>> = sequences
        .par_iter()
        .map(|seq| model.sequence_nll(seq, BOS, EOS))
        .collect();
    let mut nll = 0.0;
    let mut tokens = 0usize;
    for p in parts {
        let (n, t) = p?;
        nll += n;
        tokens += t;
    }
    Ok((nll / tokens as f64).exp())
}

/// Teacher-forced reconstruction accuracy (argmax vs target).
pub fn reconstruction_accuracy(
    model: &Seq2seqModel<f32>,
    sequences: &[Vec<usize>],
) -> Result<f64> {
    let mut total = 0usize;
    let mut correct = 0usize;
    for seq in sequences {
        let mut fork = model.clone();
        let (_, t, c) = fork.train_step(seq, BOS, EOS, 0.0)?;
        total += t;
        correct += c;
    }
    Ok(correct as f64 / total.max(1) as f64)
}

/// Deterministic fixed-length embedding of a token sequence.
pub fn playlist_embedding<F: Real>(model: &Seq2seqModel<F>, tokens: &[usize]) -> Result<Vec<f32>> {
    let enc = model.encode(tokens)?;
    Ok(model
        .extract_embedding(&enc)
        .iter()
        .map(|v| v.to_f64().unwrap() as f32)
        .collect())
}

/// A trained model plus vocabulary, usable as a playlist encoder.
pub struct Seq2seqEncoder {
    model: Seq2seqModel<f32>,
    index: HashMap<String, usize>,
    name: &'static str,
}

impl Seq2seqEncoder {
    pub fn new(model: Seq2seqModel<f32>, vocab_tokens: Vec<String>) -> Self {
        let name = if model.cfg.bidirectional {
            BI_SEQ2SEQ
        } else {
            BASE_SEQ2SEQ
        };
        let index = vocab_tokens
            .into_iter()
            .enumerate()
            .map(|(i, t)| (t, i))
            .collect();
        Seq2seqEncoder { model, index, name }
    }

    pub fn model(&self) -> &Seq2seqModel<f32> {
        &self.model
    }

    pub fn encode_tokens(&self, track_ids: &[String]) -> Vec<usize> {
        track_ids
            .iter()
            .map(|t| self.index.get(t).copied().unwrap_or(UNK))
            .collect()
    }
}

impl PlaylistEncoder for Seq2seqEncoder {
    fn name(&self) -> &str {
        self.name
    }

    fn dim(&self) -> usize {
        self.model.embedding_dim()
    }

    fn embed(&self, track_ids: &[String]) -> Result<Vec<f32>> {
        let tokens = self.encode_tokens(track_ids);
        playlist_embedding(&self.model, &tokens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SynthConfig};
    use crate::nncore::CellKind;
    use crate::seq2seq::AttentionKind;

    fn toy_corpus() -> Corpus {
        let (corpus, _) = generate_synthetic(&SynthConfig {
            n_genres: 3,
            songs_per_genre: 20,
            n_playlists: 60,
            length_median: 8.0,
            length_sigma: 0.3,
            min_length: 4,
            seed: 5,
            ..SynthConfig::default()
        })
        .unwrap();
        corpus
    }

    fn toy_cfg() -> Seq2seqConfig {
        Seq2seqConfig {
            layers: 2,
            hidden: 16,
            cell: CellKind::Lstm,
            bidirectional: false,
            attention: AttentionKind::GeneralDot,
            max_len: 50,
            vocab_min_count: 1,
            epochs: 2,
            batch_size: 16,
            seed: 11,
            ..Seq2seqConfig::default()
        }
    }

    #[test]
    fn initial_perplexity_near_vocab_size() {
        let corpus = toy_corpus();
        let vocab = crate::corpus::build_vocab(&corpus, 1).unwrap();
        let cfg = toy_cfg();
        let model = Seq2seqModel::<f32>::new(&cfg, vocab.size()).unwrap();
        let sequences: Vec<Vec<usize>> = corpus
            .playlists
            .iter()
            .take(20)
            .map(|p| vocab.encode_playlist(p))
            .collect();
        let ppl = perplexity(&model, &sequences).unwrap();
        let v = vocab.size() as f64;
        assert!(
            (ppl - v).abs() / v < 0.05,
            "untrained perplexity {} should be near V={}",
            ppl,
            v
        );
    }

    #[test]
    fn training_reduces_perplexity_and_is_deterministic() {
        let corpus = toy_corpus();
        let cfg = toy_cfg();
        let out1 = train_autoencoder(&corpus, &cfg).unwrap();
        let out2 = train_autoencoder(&corpus, &cfg).unwrap();
        assert_eq!(out1.log.len(), 2);
        assert_eq!(
            out1.log[0].perplexity, out2.log[0].perplexity,
            "same seed must give identical first-epoch perplexity"
        );
        assert!(out1.log[1].perplexity < out1.log[0].perplexity);
    }

    #[test]
    fn parallel_matches_serial_exactly() {
        let corpus = toy_corpus();
        let mut cfg = toy_cfg();
        cfg.epochs = 1;
        cfg.parallel = true;
        let par = train_autoencoder(&corpus, &cfg).unwrap();
        cfg.parallel = false;
        let ser = train_autoencoder(&corpus, &cfg).unwrap();
        for ((_, a), (_, b)) in par
            .model
            .named_params()
            .iter()
            .zip(ser.model.named_params())
        {
            assert!(
                a.value
                    .data()
                    .iter()
                    .zip(b.value.data())
                    .all(|(x, y)| x.to_bits() == y.to_bits()),
                "chunked parallel accumulation must be bit-identical to serial"
            );
        }
    }

    #[test]
    fn embedding_dims_and_determinism() {
        let corpus = toy_corpus();
        let mut cfg = toy_cfg();
        cfg.epochs = 1;
        let uni = train_autoencoder(&corpus, &cfg).unwrap();
        cfg.bidirectional = true;
        let bi = train_autoencoder(&corpus, &cfg).unwrap();

        let ids: Vec<String> = corpus.playlists[0].track_ids.clone();
        let ue = uni.encoder();
        let be = bi.encoder();
        assert_eq!(ue.embed(&ids).unwrap().len(), 16);
        assert_eq!(be.embed(&ids).unwrap().len(), 32);
        assert_eq!(ue.name(), BASE_SEQ2SEQ);
        assert_eq!(be.name(), BI_SEQ2SEQ);
        assert_eq!(ue.embed(&ids).unwrap(), ue.embed(&ids).unwrap());
    }

    #[test]
    fn order_sensitivity_after_training() {
        let corpus = toy_corpus();
        let mut cfg = toy_cfg();
        cfg.epochs = 6;
        let out = train_autoencoder(&corpus, &cfg).unwrap();
        let enc = out.encoder();
        let pl = corpus
            .playlists
            .iter()
            .find(|p| p.len() >= 6)
            .expect("a playlist of length >= 6");
        let fwd = enc.embed(&pl.track_ids).unwrap();
        let mut rev_ids = pl.track_ids.clone();
        rev_ids.reverse();
        let rev = enc.embed(&rev_ids).unwrap();
        let dist: f32 = fwd
            .iter()
            .zip(&rev)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f32>()
            .sqrt();
        assert!(dist > 0.0, "reversed playlist must embed differently");
    }

    #[test]
    fn memorizes_tiny_corpus() {
        // Overfit check at miniature scale; the acceptance suite runs the
        // full-size version.
        let (corpus, _) = generate_synthetic(&SynthConfig {
            n_genres: 2,
            songs_per_genre: 15,
            n_playlists: 12,
            length_median: 6.0,
            length_sigma: 0.2,
            min_length: 4,
            seed: 17,
            ..SynthConfig::default()
        })
        .unwrap();
        let cfg = Seq2seqConfig {
            layers: 1,
            hidden: 24,
            vocab_min_count: 1,
            epochs: 120,
            batch_size: 4,
            optimizer: crate::nncore::Optimizer::Adam(crate::nncore::AdamConfig {
                learning_rate: 3e-3,
                ..Default::default()
            }),
            seed: 3,
            ..toy_cfg()
        };
        let out = train_autoencoder(&corpus, &cfg).unwrap();
        let vocab = crate::corpus::build_vocab(&corpus, 1).unwrap();
        let sequences: Vec<Vec<usize>> = corpus
            .playlists
            .iter()
            .map(|p| vocab.encode_playlist(p))
            .collect();
        let acc = reconstruction_accuracy(&out.model, &sequences).unwrap();
        assert!(acc > 0.9, "memorization accuracy {} too low", acc);
        let ppl = perplexity(&out.model, &sequences).unwrap();
        assert!(ppl < 2.5, "memorization perplexity {} too high", ppl);
    }

    #[test]
    fn perplexity_matches_independent_recomputation() {
        let corpus = toy_corpus();
        let vocab = crate::corpus::build_vocab(&corpus, 1).unwrap();
        let cfg = toy_cfg();
        let model = Seq2seqModel::<f32>::new(&cfg, vocab.size()).unwrap();
        let sequences: Vec<Vec<usize>> = corpus
            .playlists
            .iter()
            .take(8)
            .map(|p| vocab.encode_playlist(p))
            .collect();
        let ppl = perplexity(&model, &sequences).unwrap();

        // Second route: per-sequence mean NLLs combined token-weighted, in
        // log2 space.
        let mut log2_sum = 0.0f64;
        let mut tokens = 0usize;
        for seq in &sequences {
            let (nll, t) = model.sequence_nll(seq, BOS, EOS).unwrap();
            log2_sum += nll / std::f64::consts::LN_2;
            tokens += t;
        }
        let ppl2 = 2.0f64.powf(log2_sum / tokens as f64);
        assert!(
            (ppl - ppl2).abs() <= 1e-6 * ppl.max(1.0),
            "{} vs {}",
            ppl,
            ppl2
        );
    }
}
