//! Genre annotation: cluster song embeddings, vote each cluster's genre
//! from its members' artist genres, then label playlists by song agreement.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Playlist, PARENT_GENRES};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::linalg::top_eigenvectors;
use crate::probes::{train_probe, ProbeDataset, ProbeLabels, ProbeTrainConfig};

/// Sub-genre to parent-genre map. Lookups are case-insensitive.
#[derive(Debug, Clone)]
pub struct GenreLexicon {
    map: BTreeMap<String, String>,
}

impl GenreLexicon {
    pub fn new(entries: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (sub, parent) in entries {
            if !PARENT_GENRES.contains(&parent.as_str()) {
                return Err(Error::data(format!(
                    "`{}` maps to unknown parent genre `{}`",
                    sub, parent
                )));
            }
            map.insert(sub.to_lowercase(), parent);
        }
        Ok(GenreLexicon { map })
    }

    /// The nine parents, identity-mapped, plus the spelling variants the
    /// synthetic generator plants.
    pub fn builtin() -> Self {
        let mut entries = Vec::new();
        for parent in PARENT_GENRES {
            let base = parent.to_lowercase();
            for sub in [
                base.clone(),
                format!("indie {}", base),
                format!("classic {}", base),
                format!("alt {}", base),
                format!("soft {}", base),
            ] {
                entries.push((sub, parent.to_string()));
            }
        }
        GenreLexicon::new(entries).expect("builtin lexicon is valid")
    }

    pub fn parent(&self, subgenre: &str) -> Option<&str> {
        self.map.get(&subgenre.to_lowercase()).map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn from_csv(path: &Path) -> Result<Self> {
        let path_str = path.display().to_string();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::format(format!("{}: {}", path_str, e)))?;
        let mut entries = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::parse(&path_str, i + 2, e.to_string()))?;
            if rec.len() < 2 {
                return Err(Error::parse(&path_str, i + 2, "expected subgenre,parent"));
            }
            entries.push((rec[0].to_string(), rec[1].to_string()));
        }
        GenreLexicon::new(entries)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("subgenre,parent\n");
        for (sub, parent) in &self.map {
            out.push_str(&format!("{},{}\n", sub, parent));
        }
        crate::io::write_atomic(path, out.as_bytes())
    }
}

/// k-means result: centroids plus the assignment of every embedded song.
#[derive(Debug, Clone)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f32>>,
    /// Indices aligned with the embedding table rows.
    pub assignment: Vec<usize>,
    /// Inertia after each assignment step.
    pub inertia_log: Vec<f64>,
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum()
}

/// Default cluster count for a song table: one cluster per ~125 songs.
pub fn default_cluster_count(n_songs: usize) -> usize {
    (n_songs / 125).max(2)
}

/// Lloyd's algorithm with k-means++ seeding. Deterministic under the seed.
pub fn kmeans(
    table: &EmbeddingTable,
    k: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<ClusterModel> {
    if k < 2 {
        return Err(Error::config("k-means needs k >= 2"));
    }
    let n = table.len();
    if k > n {
        return Err(Error::config(format!(
            "k={} exceeds the number of points {}",
            k, n
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding.
    let mut centroids: Vec<Vec<f32>> = Vec::with_capacity(k);
    centroids.push(table.row(rng.gen_range(0..n)).to_vec());
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(table.row(i), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.gen_range(0..n)
        } else {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        };
        centroids.push(table.row(next).to_vec());
        for i in 0..n {
            d2[i] = d2[i].min(sq_dist(table.row(i), centroids.last().unwrap()));
        }
    }

    let dim = table.dim();
    let mut assignment = vec![0usize; n];
    let mut inertia_log = Vec::new();
    for _ in 0..max_iters {
        // Assignment step (parallel over points).
        let assigned: Vec<(usize, f64)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let row = table.row(i);
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for (c, centroid) in centroids.iter().enumerate() {
                    let d = sq_dist(row, centroid);
                    if d < best_d {
                        best_d = d;
                        best = c;
                    }
                }
                (best, best_d)
            })
            .collect();
        let inertia: f64 = assigned.iter().map(|(_, d)| d).sum();
        inertia_log.push(inertia);
        for (i, (c, _)) in assigned.iter().enumerate() {
            assignment[i] = *c;
        }

        // Update step.
        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assignment[i];
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(table.row(i)) {
                *s += *v as f64;
            }
        }
        let mut max_shift = 0.0f64;
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed an empty cluster at the point farthest from its
                // current centroid.
                let far = assigned
                    .iter()
                    .enumerate()
                    .max_by(|a, b| {
                        a.1 .1
                            .partial_cmp(&b.1 .1)
                            .unwrap_or(std::cmp::Ordering::Equal)
                    })
                    .map(|(i, _)| i)
                    .unwrap();
                centroids[c] = table.row(far).to_vec();
                max_shift = f64::INFINITY;
                continue;
            }
            let new: Vec<f32> = sums[c]
                .iter()
                .map(|s| (*s / counts[c] as f64) as f32)
                .collect();
            max_shift = max_shift.max(sq_dist(&new, &centroids[c]).sqrt());
            centroids[c] = new;
        }
        if max_shift < tol {
            break;
        }
    }

    Ok(ClusterModel {
        k,
        centroids,
        assignment,
        inertia_log,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct VoteConfig {
    /// Assign when the top genre holds at least this share of counts.
    pub min_share: f64,
    /// ... or leads the runner-up by at least this ratio.
    pub min_lead: f64,
}

impl Default for VoteConfig {
    fn default() -> Self {
        VoteConfig {
            min_share: 0.5,
            min_lead: 1.5,
        }
    }
}

/// Maps member artist genres to parents and votes. Ties abstain; otherwise
/// the majority genre wins when its share or lead is clear. Returns the
/// count dictionary alongside the decision.
pub fn cluster_genre_vote(
    member_genres: &[&[String]],
    lexicon: &GenreLexicon,
    cfg: &VoteConfig,
) -> (BTreeMap<String, usize>, Option<String>) {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for genres in member_genres {
        for g in genres.iter() {
            if let Some(parent) = lexicon.parent(g) {
                *counts.entry(parent.to_string()).or_insert(0) += 1;
            }
        }
    }
    let total: usize = counts.values().sum();
    if total == 0 {
        return (counts, None);
    }
    let mut ranked: Vec<(&String, &usize)> = counts.iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
    let (top_genre, &top) = (ranked[0].0.clone(), ranked[0].1);
    let runner_up = ranked.get(1).map(|(_, &c)| c).unwrap_or(0);
    if runner_up == top {
        // A tied vote is never a clear majority.
        return (counts, None);
    }
    let share = top as f64 / total as f64;
    let lead_ok = runner_up == 0 || top as f64 >= cfg.min_lead * runner_up as f64;
    if share >= cfg.min_share || lead_ok {
        (counts, Some(top_genre))
    } else {
        (counts, None)
    }
}

/// Outcome of song annotation: per-song parent genres plus diagnostics.
#[derive(Debug, Clone)]
pub struct SongAnnotation {
    pub song_genres: BTreeMap<String, String>,
    pub clusters: ClusterModel,
    pub abstained_clusters: usize,
}

/// Clusters the song embeddings and applies the per-cluster vote.
pub fn annotate_songs(
    table: &EmbeddingTable,
    corpus: &Corpus,
    lexicon: &GenreLexicon,
    vote: &VoteConfig,
    k: usize,
    seed: u64,
) -> Result<SongAnnotation> {
    let clusters = kmeans(table, k, seed, 100, 1e-4)?;
    let mut song_genres = BTreeMap::new();
    let mut abstained = 0usize;
    for c in 0..clusters.k {
        let member_idx: Vec<usize> = (0..table.len())
            .filter(|&i| clusters.assignment[i] == c)
            .collect();
        if member_idx.is_empty() {
            continue;
        }
        let genre_slices: Vec<&[String]> = member_idx
            .iter()
            .filter_map(|&i| {
                corpus
                    .tracks
                    .get(table.id(i))
                    .map(|t| t.artist_genres.as_slice())
            })
            .collect();
        let (_, verdict) = cluster_genre_vote(&genre_slices, lexicon, vote);
        match verdict {
            Some(genre) => {
                for &i in &member_idx {
                    song_genres.insert(table.id(i).to_string(), genre.clone());
                }
            }
            None => abstained += 1,
        }
    }
    Ok(SongAnnotation {
        song_genres,
        clusters,
        abstained_clusters: abstained,
    })
}

/// Labels playlists whose songs are all annotated and where strictly more
/// than `agree_frac` of the songs share one genre.
pub fn annotate_playlists(
    song_genres: &BTreeMap<String, String>,
    playlists: &[Playlist],
    agree_frac: f64,
) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for pl in playlists {
        if pl.is_empty() {
            continue;
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        let mut all = true;
        for t in &pl.track_ids {
            match song_genres.get(t) {
                Some(g) => *counts.entry(g.as_str()).or_insert(0) += 1,
                None => {
                    all = false;
                    break;
                }
            }
        }
        if !all {
            continue;
        }
        let (best, count) = counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(g, c)| (*g, *c))
            .unwrap();
        if (count as f64) > agree_frac * pl.len() as f64 {
            out.insert(pl.playlist_id.clone(), best.to_string());
        }
    }
    out
}

/// Trains the probing classifier on (song embedding, genre) pairs and
/// reports held-out accuracy. Returns (accuracy, warnings).
pub fn validate_annotation(
    song_genres: &BTreeMap<String, String>,
    table: &EmbeddingTable,
    split_seed: u64,
) -> Result<(f64, Vec<String>)> {
    let classes: Vec<String> = {
        let set: std::collections::BTreeSet<String> = song_genres.values().cloned().collect();
        set.into_iter().collect()
    };
    if classes.len() < 2 {
        return Err(Error::data("annotation validation needs >= 2 classes"));
    }
    let class_idx: HashMap<&str, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut ids = Vec::new();
    for (song, genre) in song_genres {
        if let Some(v) = table.get(song) {
            x.push(v.to_vec());
            y.push(class_idx[genre.as_str()]);
            ids.push(song.clone());
        }
    }
    let mut warnings = Vec::new();
    let mut counts = vec![0usize; classes.len()];
    for &c in &y {
        counts[c] += 1;
    }
    for (c, &count) in counts.iter().enumerate() {
        if count > 0 && count < 5 {
            warnings.push(format!(
                "class {} has only {} samples",
                classes[c], count
            ));
        }
    }
    let n_classes = classes.len();
    let ds = ProbeDataset::new(
        "annotation-validation",
        x,
        ProbeLabels::MultiClass { y, n_classes },
        classes,
        ids,
        split_seed,
    )?;
    let report = train_probe(
        &ds,
        "song2vec",
        &ProbeTrainConfig {
            hidden: 128,
            epochs: 20,
            seed: split_seed,
            ..Default::default()
        },
    )?;
    Ok((report.accuracy, warnings))
}

/// Centered 2-D PCA coordinates via power iteration with deflation.
/// Returns (id, genre-or-empty, x, y) rows.
pub fn pca2d(
    table: &EmbeddingTable,
    labels: &BTreeMap<String, String>,
) -> Result<Vec<(String, String, f64, f64)>> {
    let n = table.len();
    if n < 3 {
        return Err(Error::data("2-D projection needs at least 3 points"));
    }
    let d = table.dim();
    let mut mean = vec![0.0f64; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(table.row(i)) {
            *m += *v as f64;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    // Covariance (unnormalized) of centered data.
    let mut gram = vec![0.0f64; d * d];
    for i in 0..n {
        let row = table.row(i);
        for a in 0..d {
            let xa = row[a] as f64 - mean[a];
            if xa == 0.0 {
                continue;
            }
            for b in 0..d {
                gram[a * d + b] += xa * (row[b] as f64 - mean[b]);
            }
        }
    }
    if gram.iter().all(|&v| v.abs() < 1e-30) {
        return Err(Error::data("degenerate (rank-0) data"));
    }
    let (vecs, _vals, _) = top_eigenvectors(&gram, d, 2, 200, 1e-12);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let row = table.row(i);
        let centered: Vec<f64> = row
            .iter()
            .zip(&mean)
            .map(|(v, m)| *v as f64 - m)
            .collect();
        let px: f64 = centered.iter().zip(&vecs[0]).map(|(a, b)| a * b).sum();
        let py: f64 = centered.iter().zip(&vecs[1]).map(|(a, b)| a * b).sum();
        let id = table.id(i).to_string();
        let genre = labels.get(&id).cloned().unwrap_or_default();
        out.push((id, genre, px, py));
    }
    Ok(out)
}

/// Writes annotation rows as `id,genre`.
pub fn write_annotations_csv(labels: &BTreeMap<String, String>, path: &Path) -> Result<()> {
    let mut out = String::from("id,genre\n");
    for (id, genre) in labels {
        out.push_str(&format!("{},{}\n", id, genre));
    }
    crate::io::write_atomic(path, out.as_bytes())
}

/// Writes `id,genre,x,y` projection rows.
pub fn write_pca_csv(rows: &[(String, String, f64, f64)], path: &Path) -> Result<()> {
    let mut out = String::from("id,genre,x,y\n");
    for (id, genre, x, y) in rows {
        out.push_str(&format!("{},{},{},{}\n", id, genre, x, y));
    }
    crate::io::write_atomic(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn table_from(rows: Vec<(&str, Vec<f32>)>) -> EmbeddingTable {
        let mut t = EmbeddingTable::new(rows[0].1.len());
        for (id, v) in rows {
            t.insert(id, v).unwrap();
        }
        t
    }

    #[test]
    fn kmeans_two_point_masses() {
        let mut rows = Vec::new();
        for i in 0..10 {
            rows.push((
                Box::leak(format!("a{}", i).into_boxed_str()) as &str,
                vec![1.0f32, 1.0],
            ));
            rows.push((
                Box::leak(format!("b{}", i).into_boxed_str()) as &str,
                vec![-1.0f32, -1.0],
            ));
        }
        let t = table_from(rows);
        let model = kmeans(&t, 2, 3, 50, 1e-6).unwrap();
        let mut sorted = model.centroids.clone();
        sorted.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        assert!((sorted[0][0] + 1.0).abs() < 1e-6);
        assert!((sorted[1][0] - 1.0).abs() < 1e-6);
        assert!(kmeans(&t, 1, 3, 50, 1e-6).is_err());
    }

    #[test]
    fn kmeans_k_equals_n_zero_inertia() {
        let t = table_from(vec![
            ("a", vec![0.0, 0.0]),
            ("b", vec![1.0, 0.0]),
            ("c", vec![0.0, 1.0]),
            ("d", vec![5.0, 5.0]),
        ]);
        let model = kmeans(&t, 4, 9, 100, 1e-9).unwrap();
        let final_inertia = *model.inertia_log.last().unwrap();
        assert!(final_inertia < 1e-9, "inertia {}", final_inertia);
    }

    #[test]
    fn kmeans_inertia_non_increasing() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut t = EmbeddingTable::new(6);
        for i in 0..200 {
            let v: Vec<f32> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            t.insert(format!("s{:03}", i), v).unwrap();
        }
        let model = kmeans(&t, 8, 11, 60, 0.0).unwrap();
        for w in model.inertia_log.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-9,
                "inertia went up: {:?}",
                model.inertia_log
            );
        }
        // Deterministic under seed.
        let again = kmeans(&t, 8, 11, 60, 0.0).unwrap();
        assert_eq!(model.assignment, again.assignment);
    }

    fn genres(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn vote_sample_dictionary() {
        // 17 songs: rock 5, indie-rock 3, blues 2, soft-rock 7 -> Rock 15/17.
        let lex = GenreLexicon::new(vec![
            ("rock".into(), "Rock".into()),
            ("indie-rock".into(), "Rock".into()),
            ("soft-rock".into(), "Rock".into()),
            ("blues".into(), "Blues".into()),
        ])
        .unwrap();
        let mut members: Vec<Vec<String>> = Vec::new();
        for _ in 0..5 {
            members.push(genres(&["rock"]));
        }
        for _ in 0..3 {
            members.push(genres(&["indie-rock"]));
        }
        for _ in 0..2 {
            members.push(genres(&["blues"]));
        }
        for _ in 0..7 {
            members.push(genres(&["soft-rock"]));
        }
        let slices: Vec<&[String]> = members.iter().map(|m| m.as_slice()).collect();
        let (counts, verdict) = cluster_genre_vote(&slices, &lex, &VoteConfig::default());
        assert_eq!(verdict.as_deref(), Some("Rock"));
        assert_eq!(counts["Rock"], 15);
        assert_eq!(counts["Blues"], 2);
    }

    #[test]
    fn vote_single_genre_and_tie() {
        let lex = GenreLexicon::builtin();
        let members = vec![genres(&["rock"]), genres(&["rock"])];
        let slices: Vec<&[String]> = members.iter().map(|m| m.as_slice()).collect();
        let (_, verdict) = cluster_genre_vote(&slices, &lex, &VoteConfig::default());
        assert_eq!(verdict.as_deref(), Some("Rock"));

        let members: Vec<Vec<String>> = (0..5)
            .map(|_| genres(&["rock"]))
            .chain((0..5).map(|_| genres(&["blues"])))
            .collect();
        let slices: Vec<&[String]> = members.iter().map(|m| m.as_slice()).collect();
        let (_, verdict) = cluster_genre_vote(&slices, &lex, &VoteConfig::default());
        assert_eq!(verdict, None, "a tie is not a clear majority");
    }

    #[test]
    fn vote_invariant_to_order_and_subgenre_renaming() {
        let lex = GenreLexicon::builtin();
        let a = vec![
            genres(&["rock"]),
            genres(&["blues"]),
            genres(&["indie rock"]),
            genres(&["rock"]),
        ];
        let mut b = a.clone();
        b.reverse();
        // Rename subgenres while preserving parents.
        let c = vec![
            genres(&["classic rock"]),
            genres(&["blues"]),
            genres(&["alt rock"]),
            genres(&["indie rock"]),
        ];
        let verdicts: Vec<Option<String>> = [&a, &b, &c]
            .iter()
            .map(|m| {
                let slices: Vec<&[String]> = m.iter().map(|x| x.as_slice()).collect();
                cluster_genre_vote(&slices, &lex, &VoteConfig::default()).1
            })
            .collect();
        assert_eq!(verdicts[0], verdicts[1]);
        assert_eq!(verdicts[0], verdicts[2]);
        assert_eq!(verdicts[0].as_deref(), Some("Rock"));
    }

    fn mk_playlist(id: &str, tracks: &[&str]) -> Playlist {
        Playlist {
            playlist_id: id.into(),
            track_ids: tracks.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn playlist_annotation_rules() {
        let mut song_genres = BTreeMap::new();
        for i in 0..8 {
            song_genres.insert(format!("r{}", i), "Rock".to_string());
        }
        for i in 0..3 {
            song_genres.insert(format!("b{}", i), "Blues".to_string());
        }

        // 8 rock / 2 blues -> 0.8 > 0.7 -> Rock.
        let p1 = mk_playlist(
            "p1",
            &["r0", "r1", "r2", "r3", "r4", "r5", "r6", "r7", "b0", "b1"],
        );
        // 7 rock / 3 blues -> 0.7 not > 0.7 -> unlabeled.
        let p2 = mk_playlist(
            "p2",
            &["r0", "r1", "r2", "r3", "r4", "r5", "r6", "b0", "b1", "b2"],
        );
        // Contains an unlabeled song -> ineligible.
        let p3 = mk_playlist("p3", &["r0", "r1", "zz"]);
        let labels = annotate_playlists(&song_genres, &[p1, p2, p3], 0.7);
        assert_eq!(labels.get("p1").map(|s| s.as_str()), Some("Rock"));
        assert!(!labels.contains_key("p2"));
        assert!(!labels.contains_key("p3"));
        // When labeled, the label is the strict-majority genre.
        for (_, g) in labels {
            assert_eq!(g, "Rock");
        }
    }

    #[test]
    fn validation_separable_and_shuffled() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut t = EmbeddingTable::new(4);
        let mut labels = BTreeMap::new();
        for i in 0..120 {
            let cls = i % 3;
            let mut v = vec![0.0f32; 4];
            v[cls] = 3.0 + rng.gen_range(-0.2..0.2);
            v[3] = rng.gen_range(-0.5..0.5);
            let id = format!("s{:03}", i);
            t.insert(id.clone(), v).unwrap();
            labels.insert(id, PARENT_GENRES[cls].to_string());
        }
        let (acc, _) = validate_annotation(&labels, &t, 5).unwrap();
        assert!(acc >= 0.99, "separable accuracy {}", acc);

        // Random labels: near chance.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let shuffled: BTreeMap<String, String> = labels
            .keys()
            .map(|k| {
                (
                    k.clone(),
                    PARENT_GENRES[rng.gen_range(0..3)].to_string(),
                )
            })
            .collect();
        let (acc, _) = validate_annotation(&shuffled, &t, 5).unwrap();
        assert!(
            (acc - 1.0 / 3.0).abs() < 0.15,
            "random-label accuracy {} should be near 1/3",
            acc
        );
    }

    #[test]
    fn pca_recovers_planar_structure() {
        // 3-D points lying on the z=0 plane.
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut t = EmbeddingTable::new(3);
        for i in 0..50 {
            let v = vec![
                rng.gen_range(-3.0..3.0f32),
                rng.gen_range(-1.0..1.0f32),
                0.0,
            ];
            t.insert(format!("p{:02}", i), v).unwrap();
        }
        let rows = pca2d(&t, &BTreeMap::new()).unwrap();
        // Pairwise distances in the projection match the originals.
        for i in (0..rows.len()).step_by(7) {
            for j in (i + 1..rows.len()).step_by(11) {
                let a3 = t.row(i);
                let b3 = t.row(j);
                let d3 = sq_dist(a3, b3).sqrt();
                let dx = rows[i].2 - rows[j].2;
                let dy = rows[i].3 - rows[j].3;
                let d2 = (dx * dx + dy * dy).sqrt();
                assert!(
                    (d3 - d2).abs() < 1e-5,
                    "distance {} vs {} not preserved",
                    d3,
                    d2
                );
            }
        }
    }

    #[test]
    fn pca_variance_ordering() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut t = EmbeddingTable::new(5);
        for i in 0..80 {
            let v: Vec<f32> = (0..5)
                .map(|d| rng.gen_range(-1.0..1.0) * (d as f32 + 1.0))
                .collect();
            t.insert(format!("p{:02}", i), v).unwrap();
        }
        let rows = pca2d(&t, &BTreeMap::new()).unwrap();
        let var = |f: &dyn Fn(&(String, String, f64, f64)) -> f64| {
            let m: f64 = rows.iter().map(|r| f(r)).sum::<f64>() / rows.len() as f64;
            rows.iter().map(|r| (f(r) - m).powi(2)).sum::<f64>() / rows.len() as f64
        };
        let vx = var(&|r| r.2);
        let vy = var(&|r| r.3);
        assert!(vx >= vy, "PC1 variance {} < PC2 variance {}", vx, vy);
        // Coordinates are centered.
        let mx: f64 = rows.iter().map(|r| r.2).sum::<f64>() / rows.len() as f64;
        assert!(mx.abs() < 1e-9);
    }

    #[test]
    fn lexicon_rejects_unknown_parent() {
        assert!(GenreLexicon::new(vec![("x".into(), "NotAGenre".into())]).is_err());
        let lex = GenreLexicon::builtin();
        assert_eq!(lex.parent("Indie Rock"), Some("Rock"));
        assert_eq!(lex.parent("unknown style"), None);
    }
}
