//! Playlist corpora: ingestion, filtering, vocabulary, statistics, and a
//! synthetic generator with planted genre structure.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::distributions::Distribution;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A track and the genre strings inherited from its artist.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Track {
    pub track_id: String,
    pub artist_id: String,
    /// Raw artist genres, possibly sub-genres. May be empty.
    pub artist_genres: Vec<String>,
}

/// An ordered list of track ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Playlist {
    pub playlist_id: String,
    pub track_ids: Vec<String>,
}

impl Playlist {
    pub fn len(&self) -> usize {
        self.track_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.track_ids.is_empty()
    }
}

/// Where a corpus came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Ingested,
    Filtered,
    Synthetic,
}

/// A playlist corpus. Tracks are kept in a sorted map so iteration order is
/// stable everywhere a corpus is written out or hashed.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub playlists: Vec<Playlist>,
    pub tracks: BTreeMap<String, Track>,
    pub provenance: Provenance,
}

impl Corpus {
    /// Checks that every referenced track exists.
    pub fn check_integrity(&self) -> Result<()> {
        for pl in &self.playlists {
            for tid in &pl.track_ids {
                if !self.tracks.contains_key(tid) {
                    return Err(Error::data(format!(
                        "playlist {} references unknown track {}",
                        pl.playlist_id, tid
                    )));
                }
            }
        }
        Ok(())
    }

    /// Number of playlists each track occurs in (multiple occurrences within
    /// one playlist count once).
    pub fn track_playlist_counts(&self) -> HashMap<&str, usize> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for pl in &self.playlists {
            let mut seen: HashSet<&str> = HashSet::new();
            for tid in &pl.track_ids {
                if seen.insert(tid) {
                    *counts.entry(tid).or_insert(0) += 1;
                }
            }
        }
        counts
    }

    /// Total token occurrences per track across all playlists.
    pub fn track_occurrence_counts(&self) -> HashMap<&str, usize> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for pl in &self.playlists {
            for tid in &pl.track_ids {
                *counts.entry(tid.as_str()).or_insert(0) += 1;
            }
        }
        counts
    }
}

/// Filtering rules applied to a raw corpus, in order: rare-track removal,
/// per-playlist retention, de-duplication, length range.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub min_track_playlist_count: usize,
    pub min_retained_fraction: f64,
    pub min_length: usize,
    pub max_length: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_track_playlist_count: 3,
            min_retained_fraction: 0.3,
            min_length: 10,
            max_length: 5000,
        }
    }
}

/// Summary statistics over playlist lengths plus the rank-frequency table of
/// track occurrences.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusStats {
    pub playlist_count: usize,
    pub track_count: usize,
    pub length_mean: f64,
    pub length_std: f64,
    pub length_median: f64,
    pub length_min: usize,
    pub length_max: usize,
    /// (rank, occurrence count), rank starting at 1, sorted by descending count.
    pub rank_frequency: Vec<(usize, usize)>,
}

impl CorpusStats {
    /// Least-squares slope of log10(count) against log10(rank).
    pub fn zipf_slope(&self) -> f64 {
        let pts: Vec<(f64, f64)> = self
            .rank_frequency
            .iter()
            .filter(|(_, c)| *c > 0)
            .map(|(r, c)| ((*r as f64).log10(), (*c as f64).log10()))
            .collect();
        let n = pts.len() as f64;
        if pts.len() < 2 {
            return 0.0;
        }
        let sx: f64 = pts.iter().map(|(x, _)| x).sum();
        let sy: f64 = pts.iter().map(|(_, y)| y).sum();
        let sxx: f64 = pts.iter().map(|(x, _)| x * x).sum();
        let sxy: f64 = pts.iter().map(|(x, y)| x * y).sum();
        (n * sxy - sx * sy) / (n * sxx - sx * sx)
    }

    /// Writes `metric,value` rows.
    pub fn write_summary_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "metric,value")?;
        writeln!(w, "playlist_count,{}", self.playlist_count)?;
        writeln!(w, "track_count,{}", self.track_count)?;
        writeln!(w, "length_mean,{}", self.length_mean)?;
        writeln!(w, "length_std,{}", self.length_std)?;
        writeln!(w, "length_median,{}", self.length_median)?;
        writeln!(w, "length_min,{}", self.length_min)?;
        writeln!(w, "length_max,{}", self.length_max)?;
        Ok(())
    }

    /// Writes the plot-ready `rank,count` table.
    pub fn write_rank_frequency_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "rank,count")?;
        for (rank, count) in &self.rank_frequency {
            writeln!(w, "{},{}", rank, count)?;
        }
        Ok(())
    }
}

/// Configuration of the synthetic corpus generator.
///
/// Playlists are built from a planted dominant genre: every slot draws from
/// that genre's Zipfian song popularity except that with `noise_prob` the
/// slot draws from a uniformly chosen foreign genre instead. Songs within a
/// playlist are distinct and ordered by descending popularity with Gaussian
/// rank jitter, so song order carries signal that shuffling destroys.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_genres: usize,
    pub songs_per_genre: usize,
    pub n_playlists: usize,
    pub noise_prob: f64,
    /// Median of the log-normal playlist length distribution.
    pub length_median: f64,
    /// Sigma of the log-normal playlist length distribution.
    pub length_sigma: f64,
    /// Lengths are clamped to this range.
    pub min_length: usize,
    pub max_length: usize,
    /// Zipf exponent for within-genre song popularity.
    pub popularity_exponent: f64,
    /// Std-dev (in popularity ranks) of the jitter applied to the
    /// popularity-sorted playlist order.
    pub order_jitter: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_genres: 8,
            songs_per_genre: 400,
            n_playlists: 12_000,
            noise_prob: 0.15,
            length_median: 45.0,
            length_sigma: 0.7,
            min_length: 10,
            max_length: 5000,
            popularity_exponent: 1.0,
            order_jitter: 4.0,
            seed: 42,
        }
    }
}

/// Planted ground truth emitted alongside a synthetic corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthTruth {
    /// track_id -> planted genre.
    pub song_genres: BTreeMap<String, String>,
    /// playlist_id -> planted dominant genre.
    pub playlist_genres: BTreeMap<String, String>,
}

/// The nine parent genres used for annotation.
pub const PARENT_GENRES: [&str; 9] = [
    "Rock",
    "Metal",
    "Blues",
    "Country",
    "Classical",
    "Electronic",
    "Hip Hop",
    "Reggae",
    "Latin",
];

/// Reads a corpus from a playlist file (one `playlist_id TAB id,id,...` per
/// line) and a track metadata CSV (`track_id,artist_id,artist_genres` with
/// `|`-separated genres).
pub fn ingest(playlist_path: &Path, tracks_path: &Path) -> Result<Corpus> {
    let tracks = read_track_metadata(tracks_path)?;

    let file = std::fs::File::open(playlist_path)?;
    let reader = BufReader::new(file);
    let path_str = playlist_path.display().to_string();

    let mut playlists = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (pid, rest) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(&path_str, lineno, "expected TAB separator"))?;
        if pid.is_empty() {
            return Err(Error::parse(&path_str, lineno, "empty playlist_id"));
        }
        if !seen_ids.insert(pid.to_string()) {
            return Err(Error::parse(
                &path_str,
                lineno,
                format!("duplicate playlist_id {}", pid),
            ));
        }
        let track_ids: Vec<String> = rest
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.to_string())
            .collect();
        for tid in &track_ids {
            if !tracks.contains_key(tid) {
                return Err(Error::parse(
                    &path_str,
                    lineno,
                    format!("playlist {} references unknown track {}", pid, tid),
                ));
            }
        }
        playlists.push(Playlist {
            playlist_id: pid.to_string(),
            track_ids,
        });
    }

    Ok(Corpus {
        playlists,
        tracks,
        provenance: Provenance::Ingested,
    })
}

fn read_track_metadata(path: &Path) -> Result<BTreeMap<String, Track>> {
    let path_str = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::format(format!("{}: {}", path_str, e)))?;

    let mut tracks = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::parse(&path_str, i + 2, e.to_string()))?;
        if record.len() < 3 {
            return Err(Error::parse(&path_str, i + 2, "expected 3 columns"));
        }
        let track_id = record[0].to_string();
        if track_id.is_empty() {
            return Err(Error::parse(&path_str, i + 2, "empty track_id"));
        }
        let artist_genres: Vec<String> = record[2]
            .split('|')
            .filter(|s| !s.is_empty())
            .map(|s| s.to_string())
            .collect();
        let track = Track {
            track_id: track_id.clone(),
            artist_id: record[1].to_string(),
            artist_genres,
        };
        if tracks.insert(track_id.clone(), track).is_some() {
            return Err(Error::parse(
                &path_str,
                i + 2,
                format!("duplicate track_id {}", track_id),
            ));
        }
    }
    Ok(tracks)
}

/// Writes the corpus back out in the ingestion formats.
pub fn write_corpus(corpus: &Corpus, playlist_path: &Path, tracks_path: &Path) -> Result<()> {
    let mut pw = std::io::BufWriter::new(std::fs::File::create(playlist_path)?);
    for pl in &corpus.playlists {
        writeln!(pw, "{}\t{}", pl.playlist_id, pl.track_ids.join(","))?;
    }
    pw.flush()?;

    let mut tw = csv::Writer::from_path(tracks_path)
        .map_err(|e| Error::format(format!("{}: {}", tracks_path.display(), e)))?;
    tw.write_record(["track_id", "artist_id", "artist_genres"])
        .map_err(|e| Error::format(e.to_string()))?;
    for track in corpus.tracks.values() {
        tw.write_record([
            track.track_id.as_str(),
            track.artist_id.as_str(),
            &track.artist_genres.join("|"),
        ])
        .map_err(|e| Error::format(e.to_string()))?;
    }
    tw.flush()?;
    Ok(())
}

/// Applies the four filtering rules in order: rare tracks out, low-retention
/// playlists out, in-playlist duplicates out (first kept), then the length
/// range. Unreferenced tracks are dropped from the metadata map.
pub fn filter_corpus(corpus: &Corpus, cfg: &FilterConfig) -> Corpus {
    let counts = corpus.track_playlist_counts();
    let keep: HashSet<&str> = counts
        .iter()
        .filter(|(_, &c)| c >= cfg.min_track_playlist_count)
        .map(|(&t, _)| t)
        .collect();

    let mut playlists = Vec::new();
    for pl in &corpus.playlists {
        let retained: Vec<&String> = pl
            .track_ids
            .iter()
            .filter(|t| keep.contains(t.as_str()))
            .collect();
        if pl.track_ids.is_empty()
            || (retained.len() as f64) < cfg.min_retained_fraction * pl.track_ids.len() as f64
        {
            continue;
        }
        let mut seen: HashSet<&str> = HashSet::new();
        let deduped: Vec<String> = retained
            .into_iter()
            .filter(|t| seen.insert(t.as_str()))
            .cloned()
            .collect();
        if deduped.len() < cfg.min_length || deduped.len() > cfg.max_length {
            continue;
        }
        playlists.push(Playlist {
            playlist_id: pl.playlist_id.clone(),
            track_ids: deduped,
        });
    }

    let referenced: HashSet<&str> = playlists
        .iter()
        .flat_map(|p| p.track_ids.iter().map(|s| s.as_str()))
        .collect();
    let tracks: BTreeMap<String, Track> = corpus
        .tracks
        .iter()
        .filter(|(id, _)| referenced.contains(id.as_str()))
        .map(|(id, t)| (id.clone(), t.clone()))
        .collect();

    Corpus {
        playlists,
        tracks,
        provenance: Provenance::Filtered,
    }
}

/// Reserved vocabulary slots.
pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: usize = 4;
const RESERVED_TOKENS: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Dense track-id vocabulary with reserved pad/begin/end/unknown slots.
/// Tracks are ordered by descending occurrence count (ties by id) so indices
/// are deterministic.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    index: HashMap<String, usize>,
    tokens: Vec<String>,
    /// Occurrence counts aligned with `tokens` (reserved slots have count 0).
    counts: Vec<usize>,
    pub min_count: usize,
}

impl Vocabulary {
    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn encode(&self, track_id: &str) -> usize {
        self.index.get(track_id).copied().unwrap_or(UNK)
    }

    pub fn decode(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(|s| s.as_str())
    }

    pub fn contains(&self, track_id: &str) -> bool {
        self.index.contains_key(track_id)
    }

    pub fn count(&self, index: usize) -> usize {
        self.counts.get(index).copied().unwrap_or(0)
    }

    /// Track tokens (reserved slots excluded) in index order.
    pub fn track_tokens(&self) -> &[String] {
        &self.tokens[RESERVED..]
    }

    pub fn encode_playlist(&self, pl: &Playlist) -> Vec<usize> {
        pl.track_ids.iter().map(|t| self.encode(t)).collect()
    }
}

/// Builds the vocabulary over a corpus; tracks occurring fewer than
/// `min_count` times map to the unknown token.
pub fn build_vocab(corpus: &Corpus, min_count: usize) -> Result<Vocabulary> {
    if min_count < 1 {
        return Err(Error::config("vocabulary min_count must be >= 1"));
    }
    let occ = corpus.track_occurrence_counts();
    let mut kept: Vec<(&str, usize)> = occ
        .iter()
        .filter(|(_, &c)| c >= min_count)
        .map(|(&t, &c)| (t, c))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let mut tokens: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
    let mut counts = vec![0usize; RESERVED];
    for (t, c) in kept {
        tokens.push(t.to_string());
        counts.push(c);
    }
    let index: HashMap<String, usize> = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i))
        .collect();
    Ok(Vocabulary {
        index,
        tokens,
        counts,
        min_count,
    })
}

/// Length statistics and the occurrence rank-frequency table.
pub fn corpus_stats(corpus: &Corpus) -> Result<CorpusStats> {
    if corpus.playlists.is_empty() {
        return Err(Error::data("cannot compute stats of an empty corpus"));
    }
    let mut lengths: Vec<usize> = corpus.playlists.iter().map(|p| p.len()).collect();
    lengths.sort_unstable();
    let n = lengths.len();
    let mean = lengths.iter().sum::<usize>() as f64 / n as f64;
    let var = lengths
        .iter()
        .map(|&l| {
            let d = l as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n as f64;
    let median = if n % 2 == 1 {
        lengths[n / 2] as f64
    } else {
        (lengths[n / 2 - 1] + lengths[n / 2]) as f64 / 2.0
    };

    let occ = corpus.track_occurrence_counts();
    let mut counts: Vec<(&str, usize)> = occ.into_iter().collect();
    counts.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let rank_frequency = counts
        .iter()
        .enumerate()
        .map(|(i, (_, c))| (i + 1, *c))
        .collect();

    Ok(CorpusStats {
        playlist_count: n,
        track_count: corpus.tracks.len(),
        length_mean: mean,
        length_std: var.sqrt(),
        length_median: median,
        length_min: lengths[0],
        length_max: lengths[n - 1],
        rank_frequency,
    })
}

/// Subgenre spellings planted on synthetic artists, keyed by parent genre.
fn synth_subgenres(parent: &str) -> Vec<String> {
    let base = parent.to_lowercase();
    vec![
        base.clone(),
        format!("indie {}", base),
        format!("classic {}", base),
        format!("alt {}", base),
    ]
}

struct ZipfTable {
    /// Cumulative probability per rank.
    cdf: Vec<f64>,
}

impl ZipfTable {
    fn new(n: usize, exponent: f64) -> Self {
        let mut cdf = Vec::with_capacity(n);
        let mut acc = 0.0;
        for rank in 1..=n {
            acc += 1.0 / (rank as f64).powf(exponent);
            cdf.push(acc);
        }
        let total = acc;
        for v in &mut cdf {
            *v /= total;
        }
        ZipfTable { cdf }
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
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

/// Generates a synthetic corpus with planted genre structure and returns the
/// ground-truth labels. Deterministic for a fixed config.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<(Corpus, SynthTruth)> {
    if cfg.n_genres < 2 {
        return Err(Error::config("synthetic corpus needs at least 2 genres"));
    }
    if cfg.n_genres > PARENT_GENRES.len() {
        return Err(Error::config(format!(
            "synthetic corpus supports at most {} genres",
            PARENT_GENRES.len()
        )));
    }
    if cfg.songs_per_genre < 10 {
        return Err(Error::config("songs_per_genre must be >= 10"));
    }
    if !(0.0..=1.0).contains(&cfg.noise_prob) {
        return Err(Error::config("noise_prob must be in [0,1]"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let genres: Vec<&str> = PARENT_GENRES[..cfg.n_genres].to_vec();

    // Songs: g{genre}_s{rank:04}; rank 0 is the most popular in its genre.
    // Each block of ten songs shares an artist carrying 1-3 subgenres.
    let mut tracks = BTreeMap::new();
    let mut song_genres = BTreeMap::new();
    for (gi, genre) in genres.iter().enumerate() {
        let subs = synth_subgenres(genre);
        for rank in 0..cfg.songs_per_genre {
            let track_id = format!("g{}_s{:04}", gi, rank);
            let artist_id = format!("g{}_a{:03}", gi, rank / 10);
            let n_subs = 1 + (rank / 10) % 3;
            let artist_genres: Vec<String> = (0..n_subs)
                .map(|k| subs[(rank / 10 + k) % subs.len()].clone())
                .collect();
            tracks.insert(
                track_id.clone(),
                Track {
                    track_id: track_id.clone(),
                    artist_id,
                    artist_genres,
                },
            );
            song_genres.insert(track_id, genre.to_string());
        }
    }

    let zipf = ZipfTable::new(cfg.songs_per_genre, cfg.popularity_exponent);

    let mut playlists = Vec::with_capacity(cfg.n_playlists);
    let mut playlist_genres = BTreeMap::new();
    for pi in 0..cfg.n_playlists {
        let own_genre = pi % cfg.n_genres;
        let playlist_id = format!("p{:06}", pi);

        let ln_len = cfg.length_median.ln() + cfg.length_sigma * sample_standard_normal(&mut rng);
        let mut length = ln_len.exp().round() as i64;
        length = length.clamp(cfg.min_length as i64, cfg.max_length as i64);
        // Distinct songs only, so the length cannot exceed the pool.
        let length = (length as usize).min(cfg.n_genres * cfg.songs_per_genre);

        let pool = cfg.songs_per_genre;
        let mut chosen: Vec<(usize, usize)> = Vec::with_capacity(length); // (genre, rank)
        let mut used: Vec<HashSet<usize>> = vec![HashSet::new(); cfg.n_genres];
        for _ in 0..length {
            let mut genre = if rng.gen::<f64>() < cfg.noise_prob {
                let mut g = rng.gen_range(0..cfg.n_genres - 1);
                if g >= own_genre {
                    g += 1;
                }
                g
            } else {
                own_genre
            };
            if used[genre].len() == pool {
                // Genre exhausted; take the next genre with space.
                match (1..cfg.n_genres)
                    .map(|off| (genre + off) % cfg.n_genres)
                    .find(|&g| used[g].len() < pool)
                {
                    Some(g) => genre = g,
                    None => break,
                }
            }
            let mut rank = zipf.sample(&mut rng);
            let mut attempts = 0u32;
            while used[genre].contains(&rank) {
                attempts += 1;
                if attempts >= 64 {
                    // Zipf rejection stalls once the popular head is taken;
                    // probe linearly from a random start instead.
                    let start = rng.gen_range(0..pool);
                    rank = (0..pool)
                        .map(|i| (start + i) % pool)
                        .find(|r| !used[genre].contains(r))
                        .expect("genre pool has space");
                    break;
                }
                rank = zipf.sample(&mut rng);
            }
            used[genre].insert(rank);
            chosen.push((genre, rank));
        }

        // Popularity-sorted order with jitter: the rank trend is the order
        // signal probing tasks rely on.
        let mut keyed: Vec<(f64, usize, usize)> = chosen
            .into_iter()
            .map(|(g, r)| {
                (
                    r as f64 + cfg.order_jitter * sample_standard_normal(&mut rng),
                    g,
                    r,
                )
            })
            .collect();
        keyed.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| (a.1, a.2).cmp(&(b.1, b.2)))
        });

        let track_ids: Vec<String> = keyed
            .into_iter()
            .map(|(_, g, r)| format!("g{}_s{:04}", g, r))
            .collect();
        playlist_genres.insert(playlist_id.clone(), genres[own_genre].to_string());
        playlists.push(Playlist {
            playlist_id,
            track_ids,
        });
    }

    let corpus = Corpus {
        playlists,
        tracks,
        provenance: Provenance::Synthetic,
    };
    Ok((
        corpus,
        SynthTruth {
            song_genres,
            playlist_genres,
        },
    ))
}

fn sample_standard_normal(rng: &mut impl Rng) -> f64 {
    // Box-Muller; one value per call keeps the stream simple.
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[allow(unused)]
fn _uniform_usize(rng: &mut impl Rng, n: usize) -> usize {
    rand::distributions::Uniform::new(0, n).sample(rng)
}
