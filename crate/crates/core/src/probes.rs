//! Probing tasks: datasets built from labeled playlists and frozen
//! embeddings, and the small weighted classifier that evaluates them.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Playlist;
use crate::embedding::EmbeddingTable;
use crate::encoder::PlaylistEncoder;
use crate::error::{Error, Result};
use crate::nncore::{
    bce_with_logit, rf, sigmoid, softmax_cross_entropy, Linear, Optimizer, Parameter, Real,
};

/// Label storage for one probing dataset.
#[derive(Debug, Clone)]
pub enum ProbeLabels {
    MultiClass { y: Vec<usize>, n_classes: usize },
    Binary { y: Vec<bool> },
    MultiLabel { y: Vec<Vec<bool>>, n_labels: usize },
}

impl ProbeLabels {
    pub fn len(&self) -> usize {
        match self {
            ProbeLabels::MultiClass { y, .. } => y.len(),
            ProbeLabels::Binary { y } => y.len(),
            ProbeLabels::MultiLabel { y, .. } => y.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Class index per sample for stratification (first set label for
    /// multi-label data).
    fn strata(&self) -> Vec<usize> {
        match self {
            ProbeLabels::MultiClass { y, .. } => y.clone(),
            ProbeLabels::Binary { y } => y.iter().map(|&b| b as usize).collect(),
            ProbeLabels::MultiLabel { y, .. } => y
                .iter()
                .map(|bits| bits.iter().position(|&b| b).unwrap_or(0))
                .collect(),
        }
    }
}

/// (embedding, label) pairs with class weights and a seeded train/test split.
#[derive(Debug, Clone)]
pub struct ProbeDataset {
    pub task: String,
    pub x: Vec<Vec<f32>>,
    pub labels: ProbeLabels,
    pub class_weights: Vec<f64>,
    pub class_names: Vec<String>,
    pub sample_ids: Vec<String>,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

impl ProbeDataset {
    pub fn dim(&self) -> usize {
        self.x.first().map(|v| v.len()).unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn new(
        task: impl Into<String>,
        x: Vec<Vec<f32>>,
        labels: ProbeLabels,
        class_names: Vec<String>,
        sample_ids: Vec<String>,
        split_seed: u64,
    ) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::data("empty probe dataset"));
        }
        assert_eq!(x.len(), labels.len());
        assert_eq!(x.len(), sample_ids.len());
        let class_weights = match &labels {
            ProbeLabels::MultiClass { y, n_classes } => class_weights(y, *n_classes),
            ProbeLabels::Binary { y } => {
                let yc: Vec<usize> = y.iter().map(|&b| b as usize).collect();
                class_weights(&yc, 2)
            }
            ProbeLabels::MultiLabel { n_labels, .. } => vec![1.0; *n_labels],
        };
        let (train_idx, test_idx) = stratified_split(&labels.strata(), 0.8, split_seed);
        Ok(ProbeDataset {
            task: task.into(),
            x,
            labels,
            class_weights,
            class_names,
            sample_ids,
            train_idx,
            test_idx,
        })
    }

    /// Persists the dataset as an embedding text file plus a label CSV.
    pub fn write(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut table = EmbeddingTable::new(self.dim());
        for (i, x) in self.x.iter().enumerate() {
            table.insert(format!("{}#{}", i, self.sample_ids[i]), x.clone())?;
        }
        table.write_text(&dir.join("x.txt"))?;
        let train: HashSet<usize> = self.train_idx.iter().copied().collect();
        let mut out = String::from("index,sample_id,label,split\n");
        for i in 0..self.len() {
            let label = match &self.labels {
                ProbeLabels::MultiClass { y, .. } => self.class_names[y[i]].clone(),
                ProbeLabels::Binary { y } => (y[i] as usize).to_string(),
                ProbeLabels::MultiLabel { y, .. } => y[i]
                    .iter()
                    .enumerate()
                    .filter(|(_, &b)| b)
                    .map(|(j, _)| self.class_names[j].clone())
                    .collect::<Vec<_>>()
                    .join("|"),
            };
            let split = if train.contains(&i) { "train" } else { "test" };
            out.push_str(&format!(
                "{},{},{},{}\n",
                i, self.sample_ids[i], label, split
            ));
        }
        crate::io::write_atomic(&dir.join("labels.csv"), out.as_bytes())
    }
}

/// Balanced class weights: w_c = N / (K * count_c), K = classes present.
pub fn class_weights(y: &[usize], n_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; n_classes];
    for &c in y {
        counts[c] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count().max(1);
    let n = y.len() as f64;
    counts
        .iter()
        .map(|&c| {
            if c == 0 {
                0.0
            } else {
                n / (present as f64 * c as f64)
            }
        })
        .collect()
}

/// Seeded stratified split: each class is split train/test separately so no
/// class vanishes from the training side.
pub fn stratified_split(
    strata: &[usize],
    train_fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut per_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in strata.iter().enumerate() {
        per_class.entry(c).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (_, mut idx) in per_class {
        idx.shuffle(&mut rng);
        let n_train = ((idx.len() as f64 * train_fraction).round() as usize)
            .max(1)
            .min(idx.len());
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

// ----------------------------------------------------------------------
// Dataset builders
// ----------------------------------------------------------------------

fn sorted_classes(values: impl Iterator<Item = String>) -> Vec<String> {
    let set: std::collections::BTreeSet<String> = values.collect();
    set.into_iter().collect()
}

/// Genre prediction: one class per annotated playlist genre.
pub fn make_gpred(
    playlist_genres: &BTreeMap<String, String>,
    embeddings: &EmbeddingTable,
    split_seed: u64,
) -> Result<ProbeDataset> {
    let classes = sorted_classes(playlist_genres.values().cloned());
    if classes.len() < 2 {
        return Err(Error::data("genre prediction needs at least 2 classes"));
    }
    let class_idx: HashMap<&str, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut ids = Vec::new();
    for (pid, genre) in playlist_genres {
        if let Some(v) = embeddings.get(pid) {
            x.push(v.to_vec());
            y.push(class_idx[genre.as_str()]);
            ids.push(pid.clone());
        }
    }
    ProbeDataset::new(
        "gpred",
        x,
        ProbeLabels::MultiClass {
            y,
            n_classes: classes.len(),
        },
        classes,
        ids,
        split_seed,
    )
}

/// Distinct-genre-count diversity bins: [1,3] low, [4,6] medium, [7,9] high.
pub fn gdpred_bin(distinct_genres: usize) -> usize {
    match distinct_genres {
        0..=3 => 0,
        4..=6 => 1,
        _ => 2,
    }
}

/// Genre diversity prediction over fully-annotated playlists.
pub fn make_gdpred(
    playlists: &[Playlist],
    song_genres: &BTreeMap<String, String>,
    embeddings: &EmbeddingTable,
    split_seed: u64,
) -> Result<ProbeDataset> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut ids = Vec::new();
    for pl in playlists {
        let Some(v) = embeddings.get(&pl.playlist_id) else {
            continue;
        };
        let mut genres = HashSet::new();
        let mut all = true;
        for t in &pl.track_ids {
            match song_genres.get(t) {
                Some(g) => {
                    genres.insert(g.as_str());
                }
                None => {
                    all = false;
                    break;
                }
            }
        }
        if !all || genres.is_empty() {
            continue;
        }
        x.push(v.to_vec());
        y.push(gdpred_bin(genres.len()));
        ids.push(pl.playlist_id.clone());
    }
    ProbeDataset::new(
        "gdpred",
        x,
        ProbeLabels::MultiClass { y, n_classes: 3 },
        vec!["low".into(), "medium".into(), "high".into()],
        ids,
        split_seed,
    )
}

/// Length class for the playlist-length probe: [30,250] in bins of 20,
/// closed at 250; everything else excluded.
pub fn plen_class(len: usize) -> Option<usize> {
    if len == 250 {
        Some(9)
    } else if (30..250).contains(&len) {
        Some((len - 30) / 20)
    } else {
        None
    }
}

pub fn make_plen(
    playlists: &[Playlist],
    embeddings: &EmbeddingTable,
    split_seed: u64,
) -> Result<ProbeDataset> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut ids = Vec::new();
    for pl in playlists {
        let Some(cls) = plen_class(pl.len()) else {
            continue;
        };
        let Some(v) = embeddings.get(&pl.playlist_id) else {
            continue;
        };
        x.push(v.to_vec());
        y.push(cls);
        ids.push(pl.playlist_id.clone());
    }
    // Renumber to the classes actually present so sparse tails do not leave
    // unreachable outputs.
    let present: Vec<usize> = {
        let set: std::collections::BTreeSet<usize> = y.iter().copied().collect();
        set.into_iter().collect()
    };
    let remap: HashMap<usize, usize> = present.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let y: Vec<usize> = y.into_iter().map(|c| remap[&c]).collect();
    let class_names = present
        .iter()
        .map(|&i| format!("{}-{}", 30 + 20 * i, 30 + 20 * (i + 1)))
        .collect();
    let n_classes = present.len();
    ProbeDataset::new(
        "plen",
        x,
        ProbeLabels::MultiClass { y, n_classes },
        class_names,
        ids,
        split_seed,
    )
}

/// Song-content task: mid-frequency target songs; playlists containing
/// exactly one target, sampled to equal class counts. Returns the dataset
/// and any shrink warnings.
pub fn make_sc(
    playlists: &[Playlist],
    occurrence_counts: &HashMap<&str, usize>,
    embeddings: &EmbeddingTable,
    n_targets: usize,
    split_seed: u64,
) -> Result<(ProbeDataset, Vec<String>)> {
    let mut ranked: Vec<(&str, usize)> = occurrence_counts.iter().map(|(&t, &c)| (t, c)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    if ranked.len() < n_targets {
        return Err(Error::data(format!(
            "vocabulary {} smaller than n_targets {}",
            ranked.len(),
            n_targets
        )));
    }
    let start = (ranked.len() - n_targets) / 2;
    let targets: Vec<&str> = ranked[start..start + n_targets]
        .iter()
        .map(|(t, _)| *t)
        .collect();
    let target_idx: HashMap<&str, usize> =
        targets.iter().enumerate().map(|(i, &t)| (t, i)).collect();

    // Playlists containing exactly one target song.
    let mut per_target: Vec<Vec<&Playlist>> = vec![Vec::new(); n_targets];
    for pl in playlists {
        let mut found: Option<usize> = None;
        let mut multiple = false;
        for t in &pl.track_ids {
            if let Some(&i) = target_idx.get(t.as_str()) {
                if found.is_some() {
                    multiple = true;
                    break;
                }
                found = Some(i);
            }
        }
        if multiple {
            continue;
        }
        if let Some(i) = found {
            if embeddings.contains(&pl.playlist_id) {
                per_target[i].push(pl);
            }
        }
    }

    let mut warnings = Vec::new();
    let kept: Vec<usize> = (0..n_targets)
        .filter(|&i| !per_target[i].is_empty())
        .collect();
    if kept.len() < n_targets {
        warnings.push(format!(
            "song-content: {} of {} targets had no qualifying playlists; shrunk to {}",
            n_targets - kept.len(),
            n_targets,
            kept.len()
        ));
    }
    if kept.len() < 2 {
        return Err(Error::data(
            "song-content task needs at least 2 usable targets",
        ));
    }
    let m = kept.iter().map(|&i| per_target[i].len()).min().unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(split_seed ^ 0x5c);
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut ids = Vec::new();
    let class_names: Vec<String> = kept.iter().map(|&i| targets[i].to_string()).collect();
    for (new_idx, &i) in kept.iter().enumerate() {
        let mut pool: Vec<&Playlist> = per_target[i].clone();
        pool.sort_by(|a, b| a.playlist_id.cmp(&b.playlist_id));
        pool.shuffle(&mut rng);
        for pl in pool.into_iter().take(m) {
            x.push(embeddings.get(&pl.playlist_id).unwrap().to_vec());
            y.push(new_idx);
            ids.push(pl.playlist_id.clone());
        }
    }
    let n_classes = kept.len();
    let ds = ProbeDataset::new(
        "sc",
        x,
        ProbeLabels::MultiClass { y, n_classes },
        class_names,
        ids,
        split_seed,
    )?;
    Ok((ds, warnings))
}

/// Length band the order probes draw from.
pub const ORDER_LEN_RANGE: (usize, usize) = (50, 100);

fn order_eligible<'a>(
    playlists: &'a [Playlist],
    limit: Option<usize>,
    seed: u64,
) -> Vec<&'a Playlist> {
    let mut eligible: Vec<&Playlist> = playlists
        .iter()
        .filter(|p| p.len() >= ORDER_LEN_RANGE.0 && p.len() <= ORDER_LEN_RANGE.1)
        .collect();
    if let Some(cap) = limit {
        if eligible.len() > cap {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x11f);
            eligible.shuffle(&mut rng);
            eligible.truncate(cap);
            eligible.sort_by(|a, b| a.playlist_id.cmp(&b.playlist_id));
        }
    }
    eligible
}

fn embed_all(
    encoder: &dyn PlaylistEncoder,
    lists: &[(String, Vec<String>, bool)],
) -> Result<(Vec<Vec<f32>>, Vec<bool>, Vec<String>)> {
    use rayon::prelude::*;
    let vectors: Vec<Result<Vec<f32>>> = lists
        .par_iter()
        .map(|(_, tracks, _)| encoder.embed(tracks))
        .collect();
    let mut x = Vec::with_capacity(lists.len());
    let mut y = Vec::with_capacity(lists.len());
    let mut ids = Vec::with_capacity(lists.len());
    for ((id, _, label), v) in lists.iter().zip(vectors) {
        x.push(v?);
        y.push(*label);
        ids.push(id.clone());
    }
    Ok((x, y, ids))
}

/// Bigram shift: originals vs copies with one adjacent pair swapped.
pub fn make_bshift(
    playlists: &[Playlist],
    encoder: &dyn PlaylistEncoder,
    limit: Option<usize>,
    seed: u64,
) -> Result<ProbeDataset> {
    let eligible = order_eligible(playlists, limit, seed);
    if eligible.is_empty() {
        return Err(Error::data("no playlists in the bigram-shift length range"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lists: Vec<(String, Vec<String>, bool)> = Vec::with_capacity(eligible.len() * 2);
    for pl in &eligible {
        lists.push((pl.playlist_id.clone(), pl.track_ids.clone(), false));
        let mut swapped = pl.track_ids.clone();
        let i = rng.gen_range(0..swapped.len() - 1);
        swapped.swap(i, i + 1);
        lists.push((format!("{}#shift", pl.playlist_id), swapped, true));
    }
    let (x, y, ids) = embed_all(encoder, &lists)?;
    ProbeDataset::new(
        "bshift",
        x,
        ProbeLabels::Binary { y },
        vec!["original".into(), "shifted".into()],
        ids,
        seed,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PermuteKind {
    /// Shuffle a random contiguous block.
    Shuffle1,
    /// Shuffle songs at randomly chosen positions.
    Shuffle2,
    /// Reverse a random contiguous block.
    Reversal,
}

impl PermuteKind {
    pub fn tag(&self) -> &'static str {
        match self {
            PermuteKind::Shuffle1 => "shuffle1",
            PermuteKind::Shuffle2 => "shuffle2",
            PermuteKind::Reversal => "reversal",
        }
    }
}

/// Applies one permutation; retries when the result equals the original.
fn permute_tracks(
    tracks: &[String],
    kind: PermuteKind,
    fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<String>> {
    let len = tracks.len();
    let block = ((fraction * len as f64).ceil() as usize).clamp(2, len);
    for _ in 0..16 {
        let mut out = tracks.to_vec();
        match kind {
            PermuteKind::Shuffle1 => {
                let start = rng.gen_range(0..=len - block);
                out[start..start + block].shuffle(rng);
            }
            PermuteKind::Shuffle2 => {
                let mut positions: Vec<usize> = (0..len).collect();
                positions.shuffle(rng);
                let mut chosen: Vec<usize> = positions[..block].to_vec();
                chosen.sort_unstable();
                let mut moved: Vec<String> = chosen.iter().map(|&i| out[i].clone()).collect();
                moved.shuffle(rng);
                for (slot, track) in chosen.iter().zip(moved) {
                    out[*slot] = track;
                }
            }
            PermuteKind::Reversal => {
                let start = rng.gen_range(0..=len - block);
                out[start..start + block].reverse();
            }
        }
        if out != tracks {
            return Ok(out);
        }
    }
    Err(Error::data(
        "could not produce a non-identity permutation after 16 tries",
    ))
}

/// Permute classification dataset. With `exclude_complement` each source
/// playlist contributes either its original or its permuted form.
pub fn make_permute(
    playlists: &[Playlist],
    encoder: &dyn PlaylistEncoder,
    kind: PermuteKind,
    fraction: f64,
    exclude_complement: bool,
    limit: Option<usize>,
    seed: u64,
) -> Result<ProbeDataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config("permute fraction must lie in (0, 1]"));
    }
    let eligible = order_eligible(playlists, limit, seed);
    if eligible.is_empty() {
        return Err(Error::data("no playlists in the permute length range"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lists: Vec<(String, Vec<String>, bool)> = Vec::new();
    for (i, pl) in eligible.iter().enumerate() {
        let permuted = match permute_tracks(&pl.track_ids, kind, fraction, &mut rng) {
            Ok(p) => p,
            Err(_) => continue,
        };
        if exclude_complement {
            if i % 2 == 0 {
                lists.push((pl.playlist_id.clone(), pl.track_ids.clone(), false));
            } else {
                lists.push((format!("{}#perm", pl.playlist_id), permuted, true));
            }
        } else {
            lists.push((pl.playlist_id.clone(), pl.track_ids.clone(), false));
            lists.push((format!("{}#perm", pl.playlist_id), permuted, true));
        }
    }
    let (x, y, ids) = embed_all(encoder, &lists)?;
    let task = format!(
        "permute-{}-{}{}",
        kind.tag(),
        fraction,
        if exclude_complement { "-excl" } else { "" }
    );
    ProbeDataset::new(
        task,
        x,
        ProbeLabels::Binary { y },
        vec!["original".into(), "permuted".into()],
        ids,
        seed,
    )
}

/// Multi-label genre prediction: one bit per genre present in the playlist.
pub fn make_gmlpred(
    playlists: &[Playlist],
    song_genres: &BTreeMap<String, String>,
    embeddings: &EmbeddingTable,
    split_seed: u64,
) -> Result<ProbeDataset> {
    let classes = sorted_classes(song_genres.values().cloned());
    let class_idx: HashMap<&str, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let mut x = Vec::new();
    let mut y: Vec<Vec<bool>> = Vec::new();
    let mut ids = Vec::new();
    for pl in playlists {
        let Some(v) = embeddings.get(&pl.playlist_id) else {
            continue;
        };
        let mut bits = vec![false; classes.len()];
        let mut all = true;
        for t in &pl.track_ids {
            match song_genres.get(t) {
                Some(g) => bits[class_idx[g.as_str()]] = true,
                None => {
                    all = false;
                    break;
                }
            }
        }
        if !all || !bits.iter().any(|&b| b) {
            continue;
        }
        x.push(v.to_vec());
        y.push(bits);
        ids.push(pl.playlist_id.clone());
    }
    let n_labels = classes.len();
    ProbeDataset::new(
        "gmlpred",
        x,
        ProbeLabels::MultiLabel { y, n_labels },
        classes,
        ids,
        split_seed,
    )
}

/// Genre-switch rate: adjacent genre changes divided by playlist length.
pub fn switch_rate(genres: &[&str]) -> f64 {
    if genres.is_empty() {
        return 0.0;
    }
    let switches = genres.windows(2).filter(|w| w[0] != w[1]).count();
    switches as f64 / genres.len() as f64
}

pub fn gspred_class(rate: f64) -> usize {
    if rate < 0.34 {
        0
    } else if rate < 0.67 {
        1
    } else {
        2
    }
}

/// Genre-switch prediction over fully-annotated playlists.
pub fn make_gspred(
    playlists: &[Playlist],
    song_genres: &BTreeMap<String, String>,
    embeddings: &EmbeddingTable,
    split_seed: u64,
) -> Result<ProbeDataset> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut ids = Vec::new();
    for pl in playlists {
        let Some(v) = embeddings.get(&pl.playlist_id) else {
            continue;
        };
        let genres: Option<Vec<&str>> = pl
            .track_ids
            .iter()
            .map(|t| song_genres.get(t).map(|s| s.as_str()))
            .collect();
        let Some(genres) = genres else { continue };
        x.push(v.to_vec());
        y.push(gspred_class(switch_rate(&genres)));
        ids.push(pl.playlist_id.clone());
    }
    // Same renumbering treatment as the length probe.
    let present: Vec<usize> = {
        let set: std::collections::BTreeSet<usize> = y.iter().copied().collect();
        set.into_iter().collect()
    };
    let remap: HashMap<usize, usize> = present.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let y: Vec<usize> = y.into_iter().map(|c| remap[&c]).collect();
    let names = ["low", "mid", "high"];
    let class_names: Vec<String> = present.iter().map(|&i| names[i].to_string()).collect();
    let n_classes = present.len();
    ProbeDataset::new(
        "gspred",
        x,
        ProbeLabels::MultiClass { y, n_classes },
        class_names,
        ids,
        split_seed,
    )
}

// ----------------------------------------------------------------------
// Classifier
// ----------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeTrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ProbeTrainConfig {
    fn default() -> Self {
        ProbeTrainConfig {
            hidden: 512,
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 7,
        }
    }
}

/// One hidden layer, ReLU, then softmax or sigmoid outputs.
pub struct ProbeClassifier<F> {
    pub l1: Linear<F>,
    pub l2: Linear<F>,
}

impl<F: Real> ProbeClassifier<F> {
    pub fn new(input: usize, hidden: usize, outputs: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ProbeClassifier {
            l1: Linear::new(input, hidden, &mut rng),
            l2: Linear::new(hidden, outputs, &mut rng),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        let mut v = self.l1.params_mut();
        v.extend(self.l2.params_mut());
        v
    }

    pub fn forward(&self, x: &[F]) -> (Vec<F>, Vec<F>) {
        let mut h = self.l1.forward(x);
        for v in &mut h {
            if *v < F::zero() {
                *v = F::zero();
            }
        }
        let logits = self.l2.forward(&h);
        (h, logits)
    }

    /// Backward given d(loss)/d(logits); accumulates parameter grads.
    pub fn backward(&mut self, x: &[F], h: &[F], dlogits: &[F]) {
        let mut dh = vec![F::zero(); h.len()];
        self.l2.backward(h, dlogits, Some(&mut dh));
        for (d, hv) in dh.iter_mut().zip(h) {
            if *hv <= F::zero() {
                *d = F::zero();
            }
        }
        self.l1.backward(x, &dh, None);
    }
}

/// Held-out evaluation results of a trained probe.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeReport {
    pub task: String,
    pub encoder: String,
    pub dim: usize,
    pub accuracy: f64,
    /// Mean per-class recall; chance is 1/n_classes for any
    /// label-independent predictor. Absent for multi-label tasks.
    pub balanced_accuracy: Option<f64>,
    pub n_classes: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub confusion: Vec<Vec<usize>>,
}

/// Trains the weighted classifier on the dataset's train split and reports
/// held-out accuracy. Deterministic under the config seed.
pub fn train_probe(
    dataset: &ProbeDataset,
    encoder_name: &str,
    cfg: &ProbeTrainConfig,
) -> Result<ProbeReport> {
    let dim = dataset.dim();
    let (outputs, n_classes) = match &dataset.labels {
        ProbeLabels::MultiClass { n_classes, .. } => (*n_classes, *n_classes),
        ProbeLabels::Binary { .. } => (1usize, 2usize),
        ProbeLabels::MultiLabel { n_labels, .. } => (*n_labels, *n_labels),
    };
    // Every class that appears in the test split must appear in training.
    if let ProbeLabels::MultiClass { y, .. } = &dataset.labels {
        let in_train: HashSet<usize> = dataset.train_idx.iter().map(|&i| y[i]).collect();
        for &i in &dataset.test_idx {
            if !in_train.contains(&y[i]) {
                return Err(Error::data(format!(
                    "class {} absent from the training split",
                    dataset.class_names[y[i]]
                )));
            }
        }
    }

    let mut clf = ProbeClassifier::<f32>::new(dim, cfg.hidden, outputs, cfg.seed);
    let optimizer = Optimizer::Adam(crate::nncore::AdamConfig {
        learning_rate: cfg.learning_rate,
        ..Default::default()
    });
    let mut order = dataset.train_idx.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let scale = rf::<f32>(1.0 / batch.len() as f64);
            for &i in batch {
                let x = &dataset.x[i];
                let (h, logits) = clf.forward(x);
                let dlogits = match &dataset.labels {
                    ProbeLabels::MultiClass { y, .. } => {
                        let w = rf::<f32>(dataset.class_weights[y[i]]);
                        let (_, mut g) = softmax_cross_entropy(&logits, y[i])?;
                        for v in &mut g {
                            *v = *v * w * scale;
                        }
                        g
                    }
                    ProbeLabels::Binary { y } => {
                        let w = rf::<f32>(dataset.class_weights[y[i] as usize]);
                        let (_, g) = bce_with_logit(logits[0], y[i]);
                        vec![g * w * scale]
                    }
                    ProbeLabels::MultiLabel { y, .. } => {
                        let per = rf::<f32>(1.0 / logits.len() as f64);
                        logits
                            .iter()
                            .zip(&y[i])
                            .map(|(&l, &b)| bce_with_logit(l, b).1 * per * scale)
                            .collect()
                    }
                };
                clf.backward(x, &h, &dlogits);
            }
            for p in clf.params_mut() {
                optimizer.update(p);
            }
        }
    }

    // Held-out evaluation.
    let mut correct = 0usize;
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    let mut label_correct = 0usize;
    let mut label_total = 0usize;
    for &i in &dataset.test_idx {
        let (_, logits) = clf.forward(&dataset.x[i]);
        match &dataset.labels {
            ProbeLabels::MultiClass { y, .. } => {
                let pred = argmax(&logits);
                confusion[y[i]][pred] += 1;
                if pred == y[i] {
                    correct += 1;
                }
            }
            ProbeLabels::Binary { y } => {
                let pred = logits[0] > 0.0;
                confusion[y[i] as usize][pred as usize] += 1;
                if pred == y[i] {
                    correct += 1;
                }
            }
            ProbeLabels::MultiLabel { y, .. } => {
                for (&l, &b) in logits.iter().zip(&y[i]) {
                    label_total += 1;
                    if (sigmoid(l) > 0.5) == b {
                        label_correct += 1;
                    }
                }
            }
        }
    }
    let n_test = dataset.test_idx.len();
    let (accuracy, balanced) = match &dataset.labels {
        ProbeLabels::MultiLabel { .. } => (label_correct as f64 / label_total.max(1) as f64, None),
        _ => {
            let acc = correct as f64 / n_test.max(1) as f64;
            let mut recalls = Vec::new();
            for (c, row) in confusion.iter().enumerate() {
                let total: usize = row.iter().sum();
                if total > 0 {
                    recalls.push(row[c] as f64 / total as f64);
                }
            }
            let bal = recalls.iter().sum::<f64>() / recalls.len().max(1) as f64;
            (acc, Some(bal))
        }
    };
    Ok(ProbeReport {
        task: dataset.task.clone(),
        encoder: encoder_name.to_string(),
        dim,
        accuracy,
        balanced_accuracy: balanced,
        n_classes,
        n_train: dataset.train_idx.len(),
        n_test,
        confusion,
    })
}

fn argmax<F: Real>(v: &[F]) -> usize {
    v.iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Writes probe reports as `task,encoder,dim,accuracy` rows.
pub fn write_reports_csv(reports: &[ProbeReport], path: &std::path::Path) -> Result<()> {
    let mut out = String::from("task,encoder,dim,accuracy\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{:.4}\n",
            r.task, r.encoder, r.dim, r.accuracy
        ));
    }
    crate::io::write_atomic(path, out.as_bytes())
}
