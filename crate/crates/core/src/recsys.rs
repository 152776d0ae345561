//! Recommendation-quality evaluation: genre / length-class precision and
//! recall of retrieved neighbors, averaged over sampled queries.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ann::{exact_knn, RPForest};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};

/// A retrieval backend: the approximate forest or the exact scan.
pub enum RecIndex<'a> {
    Forest { forest: &'a RPForest, search_k: usize },
    Exact { table: &'a EmbeddingTable },
}

impl<'a> RecIndex<'a> {
    fn table(&self) -> &EmbeddingTable {
        match self {
            RecIndex::Forest { forest, .. } => forest.items(),
            RecIndex::Exact { table } => table,
        }
    }

    /// Top-k neighbors of the stored item `id`, excluding the item itself.
    fn neighbors(&self, id: &str, k: usize) -> Result<Vec<String>> {
        let table = self.table();
        let query = table
            .get(id)
            .ok_or_else(|| Error::data(format!("unknown query id {}", id)))?
            .to_vec();
        // Ask for one extra so the query itself can be dropped.
        let want = (k + 1).min(table.len());
        let raw = match self {
            RecIndex::Forest { forest, search_k } => {
                forest.query(&query, want, (*search_k).max(want))?
            }
            RecIndex::Exact { table } => exact_knn(table, &query, want)?,
        };
        Ok(raw
            .neighbors
            .into_iter()
            .filter(|(nid, _)| nid != id)
            .take(k)
            .map(|(nid, _)| nid)
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    Genre,
    Length,
}

impl LabelKind {
    pub fn tag(&self) -> &'static str {
        match self {
            LabelKind::Genre => "genre",
            LabelKind::Length => "length",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RecEvalConfig {
    pub n_queries: usize,
    pub k_grid: Vec<usize>,
    pub seed: u64,
}

impl Default for RecEvalConfig {
    fn default() -> Self {
        RecEvalConfig {
            n_queries: 100,
            k_grid: vec![1, 5, 10, 20, 50],
            seed: 9,
        }
    }
}

/// Fraction of the query's top-k neighbors sharing its label.
pub fn precision_at_k(
    index: &RecIndex,
    labels: &BTreeMap<String, String>,
    query_id: &str,
    k: usize,
) -> Result<f64> {
    let label = labels
        .get(query_id)
        .ok_or_else(|| Error::data(format!("query {} has no label", query_id)))?;
    let neighbors = index.neighbors(query_id, k)?;
    if neighbors.is_empty() {
        return Ok(0.0);
    }
    let hits = neighbors
        .iter()
        .filter(|nid| labels.get(*nid) == Some(label))
        .count();
    Ok(hits as f64 / neighbors.len() as f64)
}

/// Fraction of all same-label items (excluding the query) retrieved within
/// the top-k. None when the query's class has no other members.
pub fn recall_at_k(
    index: &RecIndex,
    labels: &BTreeMap<String, String>,
    query_id: &str,
    k: usize,
) -> Result<Option<f64>> {
    let label = labels
        .get(query_id)
        .ok_or_else(|| Error::data(format!("query {} has no label", query_id)))?;
    let class_size = labels
        .iter()
        .filter(|(id, l)| *l == label && id.as_str() != query_id)
        .count();
    if class_size == 0 {
        return Ok(None);
    }
    if k == 0 {
        return Ok(Some(0.0));
    }
    let neighbors = index.neighbors(query_id, k)?;
    let hits = neighbors
        .iter()
        .filter(|nid| labels.get(*nid) == Some(label))
        .count();
    Ok(Some(hits as f64 / class_size as f64))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecPoint {
    pub k: usize,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub queries_used: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecReport {
    pub label_kind: String,
    pub encoder: String,
    pub points: Vec<RecPoint>,
    pub query_ids: Vec<String>,
    /// Per-class mean precision at the largest k, for skew inspection.
    pub per_class_precision: BTreeMap<String, f64>,
}

/// Samples labeled queries and averages precision/recall over the k grid.
pub fn eval_recommendation(
    index: &RecIndex,
    labels: &BTreeMap<String, String>,
    label_kind: LabelKind,
    encoder: &str,
    cfg: &RecEvalConfig,
) -> Result<RecReport> {
    let table = index.table();
    let mut labeled: Vec<&String> = labels
        .keys()
        .filter(|id| table.contains(id))
        .collect();
    if labeled.len() < cfg.n_queries {
        return Err(Error::data(format!(
            "only {} labeled indexed items for {} queries",
            labeled.len(),
            cfg.n_queries
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    labeled.sort();
    labeled.shuffle(&mut rng);
    let queries: Vec<String> = labeled[..cfg.n_queries].iter().map(|s| s.to_string()).collect();

    let mut points = Vec::with_capacity(cfg.k_grid.len());
    let max_k = cfg.k_grid.iter().copied().max().unwrap_or(10);
    let mut per_class_sum: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for &k in &cfg.k_grid {
        let mut psum = 0.0;
        let mut rsum = 0.0;
        let mut rcount = 0usize;
        for q in &queries {
            psum += precision_at_k(index, labels, q, k)?;
            if let Some(r) = recall_at_k(index, labels, q, k)? {
                rsum += r;
                rcount += 1;
            }
            if k == max_k {
                let e = per_class_sum.entry(labels[q].clone()).or_insert((0.0, 0));
                e.0 += precision_at_k(index, labels, q, k)?;
                e.1 += 1;
            }
        }
        points.push(RecPoint {
            k,
            mean_precision: psum / queries.len() as f64,
            mean_recall: if rcount > 0 { rsum / rcount as f64 } else { 0.0 },
            queries_used: queries.len(),
        });
    }
    let per_class_precision = per_class_sum
        .into_iter()
        .map(|(c, (s, n))| (c, s / n as f64))
        .collect();
    Ok(RecReport {
        label_kind: label_kind.tag().to_string(),
        encoder: encoder.to_string(),
        points,
        query_ids: queries,
        per_class_precision,
    })
}

/// Expected precision when labels carry no geometric signal: the chance a
/// second draw (without replacement) shares the query's label.
pub fn chance_precision(labels: &BTreeMap<String, String>, ids: &HashSet<&str>) -> f64 {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut n = 0usize;
    for (id, label) in labels {
        if ids.contains(id.as_str()) {
            *counts.entry(label.as_str()).or_insert(0) += 1;
            n += 1;
        }
    }
    if n < 2 {
        return 0.0;
    }
    counts
        .values()
        .map(|&c| (c as f64 / n as f64) * ((c as f64 - 1.0) / (n as f64 - 1.0)))
        .sum()
}

/// Plot-ready PR rows: `k,label_kind,encoder,mean_precision,mean_recall`.
pub fn write_rec_csv(reports: &[RecReport], path: &std::path::Path) -> Result<()> {
    let mut out = String::from("k,label_kind,encoder,mean_precision,mean_recall\n");
    for r in reports {
        for p in &r.points {
            out.push_str(&format!(
                "{},{},{},{:.4},{:.4}\n",
                p.k, r.label_kind, r.encoder, p.mean_precision, p.mean_recall
            ));
        }
    }
    crate::io::write_atomic(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Two well-separated clusters with known labels.
    fn clustered() -> (EmbeddingTable, BTreeMap<String, String>) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut t = EmbeddingTable::new(3);
        let mut labels = BTreeMap::new();
        for i in 0..40 {
            let (center, label) = if i % 2 == 0 {
                ([3.0f32, 0.0, 0.0], "a")
            } else {
                ([0.0f32, 3.0, 0.0], "b")
            };
            let v: Vec<f32> = center
                .iter()
                .map(|c| c + rng.gen_range(-0.2..0.2))
                .collect();
            let id = format!("p{:02}", i);
            t.insert(id.clone(), v).unwrap();
            labels.insert(id, label.to_string());
        }
        (t, labels)
    }

    #[test]
    fn precision_extremes() {
        let (t, labels) = clustered();
        let index = RecIndex::Exact { table: &t };
        // Clusters are tight: all neighbors share the query label.
        let p = precision_at_k(&index, &labels, "p00", 10).unwrap();
        assert_eq!(p, 1.0);

        // Flip every other label so that no neighbor matches.
        let mut anti = labels.clone();
        for (id, l) in anti.iter_mut() {
            if id == "p00" {
                *l = "solo".into();
            }
        }
        let p = precision_at_k(&index, &anti, "p00", 10).unwrap();
        assert_eq!(p, 0.0);
        assert!(precision_at_k(&index, &labels, "missing", 5).is_err());
    }

    #[test]
    fn recall_properties() {
        let (t, labels) = clustered();
        let index = RecIndex::Exact { table: &t };
        // k covering the whole class -> recall 1.
        let r = recall_at_k(&index, &labels, "p00", 39).unwrap().unwrap();
        assert_eq!(r, 1.0);
        assert_eq!(recall_at_k(&index, &labels, "p00", 0).unwrap(), Some(0.0));
        // Singleton class -> undefined.
        let mut with_solo = labels.clone();
        with_solo.insert("p00".into(), "solo".into());
        assert_eq!(recall_at_k(&index, &with_solo, "p00", 5).unwrap(), None);
        // Non-decreasing in k.
        let mut prev = 0.0;
        for k in [1usize, 3, 7, 15, 30] {
            let r = recall_at_k(&index, &labels, "p02", k).unwrap().unwrap();
            assert!(r >= prev);
            prev = r;
        }
    }

    #[test]
    fn eval_matches_between_forest_exhaustive_and_exact() {
        let (t, labels) = clustered();
        let forest = RPForest::build(t.clone(), 4, 4, 3).unwrap();
        let cfg = RecEvalConfig {
            n_queries: 20,
            k_grid: vec![1, 5, 10],
            seed: 2,
        };
        let exact = RecIndex::Exact { table: &t };
        let full = RecIndex::Forest {
            forest: &forest,
            search_k: usize::MAX,
        };
        let a = eval_recommendation(&exact, &labels, LabelKind::Genre, "e", &cfg).unwrap();
        let b = eval_recommendation(&full, &labels, LabelKind::Genre, "e", &cfg).unwrap();
        for (pa, pb) in a.points.iter().zip(&b.points) {
            assert_eq!(pa.mean_precision, pb.mean_precision);
            assert_eq!(pa.mean_recall, pb.mean_recall);
        }
        // Determinism under the seed.
        let c = eval_recommendation(&exact, &labels, LabelKind::Genre, "e", &cfg).unwrap();
        assert_eq!(a.query_ids, c.query_ids);
        assert_eq!(a.points[0].mean_precision, c.points[0].mean_precision);
    }

    #[test]
    fn random_labels_hit_chance_level() {
        let (t, _) = clustered();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let labels: BTreeMap<String, String> = (0..40)
            .map(|i| {
                (
                    format!("p{:02}", i),
                    ["x", "y"][rng.gen_range(0..2)].to_string(),
                )
            })
            .collect();
        let index = RecIndex::Exact { table: &t };
        let cfg = RecEvalConfig {
            n_queries: 40,
            k_grid: vec![10],
            seed: 4,
        };
        let report = eval_recommendation(&index, &labels, LabelKind::Genre, "e", &cfg).unwrap();
        let ids: HashSet<&str> = labels.keys().map(|s| s.as_str()).collect();
        let chance = chance_precision(&labels, &ids);
        assert!(
            (report.points[0].mean_precision - chance).abs() < 0.12,
            "precision {} vs chance {}",
            report.points[0].mean_precision,
            chance
        );
    }
}
