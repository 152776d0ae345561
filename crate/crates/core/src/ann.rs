//! Random-projection-forest approximate nearest neighbor index over playlist
//! embeddings, with an exact brute-force oracle. Angular metric throughout:
//! distance = 1 - cosine.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::collections::HashSet;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::embedding::{cosine, EmbeddingTable};
use crate::error::{Error, Result};
use crate::io::{write_atomic, Checkpoint};
use crate::nncore::Tensor;

/// Angular distance in [0, 2].
pub fn angular_distance(u: &[f32], v: &[f32]) -> Result<f32> {
    Ok(1.0 - cosine(u, v)?)
}

#[derive(Debug, Clone)]
enum Node {
    Split {
        /// Unit normal of the splitting hyperplane.
        normal: Vec<f32>,
        offset: f32,
        left: usize,
        right: usize,
    },
    Leaf {
        items: Vec<u32>,
    },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

/// Ordered candidate list from a query.
#[derive(Debug, Clone)]
pub struct QueryResult {
    /// (id, angular distance), distance non-decreasing.
    pub neighbors: Vec<(String, f32)>,
    /// Leaf items inspected before re-ranking.
    pub budget_used: usize,
}

pub struct RPForest {
    pub n_trees: usize,
    pub leaf_size: usize,
    pub seed: u64,
    trees: Vec<Tree>,
    items: EmbeddingTable,
}

const TWO_MEANS_ITERS: usize = 5;

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum()
}

/// Two-means split: sample two distinct points, refine both centroids a few
/// rounds, split on the perpendicular bisector. Falls back to an index-half
/// split for degenerate data.
fn choose_split(
    table: &EmbeddingTable,
    idx: &[u32],
    rng: &mut ChaCha8Rng,
) -> Option<(Vec<f32>, f32)> {
    let n = idx.len();
    let a = idx[rng.gen_range(0..n)];
    let mut b = idx[rng.gen_range(0..n)];
    for _ in 0..8 {
        if table.row(b as usize) != table.row(a as usize) {
            break;
        }
        b = idx[rng.gen_range(0..n)];
    }
    let mut c0: Vec<f32> = table.row(a as usize).to_vec();
    let mut c1: Vec<f32> = table.row(b as usize).to_vec();
    if c0 == c1 {
        return None;
    }
    let dim = table.dim();
    for _ in 0..TWO_MEANS_ITERS {
        let mut s0 = vec![0.0f64; dim];
        let mut s1 = vec![0.0f64; dim];
        let mut n0 = 0usize;
        let mut n1 = 0usize;
        for &i in idx {
            let row = table.row(i as usize);
            if sq_dist(row, &c0) <= sq_dist(row, &c1) {
                n0 += 1;
                for (s, v) in s0.iter_mut().zip(row) {
                    *s += *v as f64;
                }
            } else {
                n1 += 1;
                for (s, v) in s1.iter_mut().zip(row) {
                    *s += *v as f64;
                }
            }
        }
        if n0 == 0 || n1 == 0 {
            break;
        }
        c0 = s0.iter().map(|s| (*s / n0 as f64) as f32).collect();
        c1 = s1.iter().map(|s| (*s / n1 as f64) as f32).collect();
    }
    let mut normal: Vec<f32> = c0.iter().zip(&c1).map(|(x, y)| x - y).collect();
    let norm = normal.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return None;
    }
    for v in &mut normal {
        *v = (*v as f64 / norm) as f32;
    }
    let mid: Vec<f32> = c0.iter().zip(&c1).map(|(x, y)| (x + y) / 2.0).collect();
    let offset: f32 = normal.iter().zip(&mid).map(|(n, m)| n * m).sum();
    Some((normal, offset))
}

fn build_tree(table: &EmbeddingTable, leaf_size: usize, seed: u64) -> Tree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = Vec::new();
    let all: Vec<u32> = (0..table.len() as u32).collect();
    build_node(table, &all, leaf_size, &mut rng, &mut nodes);
    Tree { nodes }
}

fn build_node(
    table: &EmbeddingTable,
    idx: &[u32],
    leaf_size: usize,
    rng: &mut ChaCha8Rng,
    nodes: &mut Vec<Node>,
) -> usize {
    if idx.len() <= leaf_size {
        nodes.push(Node::Leaf {
            items: idx.to_vec(),
        });
        return nodes.len() - 1;
    }
    let split = choose_split(table, idx, rng);
    let (mut left_idx, mut right_idx) = (Vec::new(), Vec::new());
    let (normal, offset) = match split {
        Some((normal, offset)) => {
            for &i in idx {
                let row = table.row(i as usize);
                let side: f32 = normal.iter().zip(row).map(|(n, v)| n * v).sum::<f32>() - offset;
                if side >= 0.0 {
                    left_idx.push(i);
                } else {
                    right_idx.push(i);
                }
            }
            (normal, offset)
        }
        None => (vec![0.0; table.dim()], 0.0),
    };
    if left_idx.is_empty() || right_idx.is_empty() {
        // Degenerate split (duplicated or collinear data): halve by index.
        left_idx = idx[..idx.len() / 2].to_vec();
        right_idx = idx[idx.len() / 2..].to_vec();
    }
    let slot = nodes.len();
    nodes.push(Node::Leaf { items: Vec::new() }); // placeholder
    let left = build_node(table, &left_idx, leaf_size, rng, nodes);
    let right = build_node(table, &right_idx, leaf_size, rng, nodes);
    nodes[slot] = Node::Split {
        normal,
        offset,
        left,
        right,
    };
    slot
}

/// Max-heap entry ordered by margin priority.
struct HeapEntry {
    priority: f32,
    tree: u32,
    node: u32,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.priority == other.priority && self.tree == other.tree && self.node == other.node
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority
            .partial_cmp(&other.priority)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.tree.cmp(&self.tree))
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl RPForest {
    /// Builds the forest; deterministic under the seed.
    pub fn build(items: EmbeddingTable, n_trees: usize, leaf_size: usize, seed: u64) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::data("cannot index an empty embedding table"));
        }
        if leaf_size < 1 {
            return Err(Error::config("leaf_size must be >= 1"));
        }
        if n_trees < 1 {
            return Err(Error::config("n_trees must be >= 1"));
        }
        for i in 0..items.len() {
            if items.row(i).iter().all(|&v| v == 0.0) {
                return Err(Error::data(format!(
                    "zero vector `{}` cannot be indexed under the angular metric",
                    items.id(i)
                )));
            }
        }
        let trees: Vec<Tree> = (0..n_trees as u64)
            .into_par_iter()
            .map(|t| build_tree(&items, leaf_size, seed.wrapping_add(t.wrapping_mul(0x9e3779b97f4a7c15))))
            .collect();
        Ok(RPForest {
            n_trees,
            leaf_size,
            seed,
            trees,
            items,
        })
    }

    pub fn items(&self) -> &EmbeddingTable {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Maximum leaf depth over all trees.
    pub fn max_depth(&self) -> usize {
        fn depth(nodes: &[Node], at: usize, d: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => d,
                Node::Split { left, right, .. } => {
                    depth(nodes, *left, d + 1).max(depth(nodes, *right, d + 1))
                }
            }
        }
        self.trees
            .iter()
            .map(|t| depth(&t.nodes, 0, 0))
            .max()
            .unwrap_or(0)
    }

    /// Best-first search across all trees until at least `search_k` leaf
    /// items were inspected, then exact re-ranking of the candidates.
    pub fn query(&self, query: &[f32], k: usize, search_k: usize) -> Result<QueryResult> {
        if query.len() != self.items.dim() {
            return Err(Error::dim(format!(
                "query dim {} vs index dim {}",
                query.len(),
                self.items.dim()
            )));
        }
        if k < 1 {
            return Err(Error::config("k must be >= 1"));
        }
        if k > self.items.len() {
            return Err(Error::data(format!(
                "k={} exceeds indexed items {}",
                k,
                self.items.len()
            )));
        }
        let mut heap: BinaryHeap<HeapEntry> = BinaryHeap::new();
        for t in 0..self.trees.len() {
            heap.push(HeapEntry {
                priority: f32::INFINITY,
                tree: t as u32,
                node: 0,
            });
        }
        let mut seen: HashSet<u32> = HashSet::new();
        let mut candidates: Vec<u32> = Vec::new();
        let mut inspected = 0usize;
        while let Some(entry) = heap.pop() {
            if inspected >= search_k {
                break;
            }
            let tree = &self.trees[entry.tree as usize];
            match &tree.nodes[entry.node as usize] {
                Node::Leaf { items } => {
                    for &i in items {
                        inspected += 1;
                        if seen.insert(i) {
                            candidates.push(i);
                        }
                    }
                }
                Node::Split {
                    normal,
                    offset,
                    left,
                    right,
                } => {
                    let margin: f32 =
                        normal.iter().zip(query).map(|(n, v)| n * v).sum::<f32>() - offset;
                    let (near, far) = if margin >= 0.0 {
                        (*left, *right)
                    } else {
                        (*right, *left)
                    };
                    heap.push(HeapEntry {
                        priority: entry.priority,
                        tree: entry.tree,
                        node: near as u32,
                    });
                    heap.push(HeapEntry {
                        priority: entry.priority.min(margin.abs()),
                        tree: entry.tree,
                        node: far as u32,
                    });
                }
            }
        }

        let mut scored: Vec<(u32, f32)> = candidates
            .into_iter()
            .map(|i| {
                let d = angular_distance(query, self.items.row(i as usize))?;
                Ok((i, d))
            })
            .collect::<Result<_>>()?;
        scored.sort_by(|a, b| {
            a.1.partial_cmp(&b.1)
                .unwrap_or(Ordering::Equal)
                .then_with(|| self.items.id(a.0 as usize).cmp(self.items.id(b.0 as usize)))
        });
        scored.truncate(k);
        Ok(QueryResult {
            neighbors: scored
                .into_iter()
                .map(|(i, d)| (self.items.id(i as usize).to_string(), d))
                .collect(),
            budget_used: inspected,
        })
    }

    pub fn query_by_id(&self, id: &str, k: usize, search_k: usize) -> Result<QueryResult> {
        let v = self
            .items
            .get(id)
            .ok_or_else(|| Error::data(format!("unknown id {}", id)))?
            .to_vec();
        self.query(&v, k, search_k)
    }

    /// Default candidate budget: n_trees * k.
    pub fn default_search_k(&self, k: usize) -> usize {
        self.n_trees * k
    }

    // ------------------------------------------------------------------
    // Serialization: header meta + flat node arrays per tree.
    // ------------------------------------------------------------------

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "kind": "rpforest",
            "version": 1,
            "metric": "angular",
            "dim": self.items.dim(),
            "n_trees": self.n_trees,
            "leaf_size": self.leaf_size,
            "seed": self.seed,
            "ids": self.items.ids(),
        });
        let mut ck = Checkpoint::new(meta.to_string());
        let mut vectors = Vec::with_capacity(self.items.len() * self.items.dim());
        for i in 0..self.items.len() {
            vectors.extend_from_slice(self.items.row(i));
        }
        ck.push(
            "vectors",
            &Tensor::from_vec(&[self.items.len(), self.items.dim()], vectors),
        );
        for (t, tree) in self.trees.iter().enumerate() {
            // Node table: kind, left/right or item span, offset; normals and
            // leaf items in side arrays.
            let mut headers: Vec<f32> = Vec::new();
            let mut normals: Vec<f32> = Vec::new();
            let mut leaf_items: Vec<f32> = Vec::new();
            for node in &tree.nodes {
                match node {
                    Node::Split {
                        normal,
                        offset,
                        left,
                        right,
                    } => {
                        headers.extend_from_slice(&[
                            0.0,
                            *left as f32,
                            *right as f32,
                            *offset,
                        ]);
                        normals.extend_from_slice(normal);
                    }
                    Node::Leaf { items } => {
                        headers.extend_from_slice(&[
                            1.0,
                            leaf_items.len() as f32,
                            items.len() as f32,
                            0.0,
                        ]);
                        leaf_items.extend(items.iter().map(|&i| i as f32));
                    }
                }
            }
            ck.push(
                format!("tree.{}.headers", t),
                &Tensor::from_vec(&[headers.len()], headers),
            );
            ck.push(
                format!("tree.{}.normals", t),
                &Tensor::from_vec(&[normals.len()], normals),
            );
            ck.push(
                format!("tree.{}.leaf_items", t),
                &Tensor::from_vec(&[leaf_items.len()], leaf_items),
            );
        }
        write_atomic(path, &ck.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::read_file(path)?;
        let meta: serde_json::Value = serde_json::from_str(&ck.meta)
            .map_err(|e| Error::format(format!("index meta: {}", e)))?;
        if meta["kind"] != "rpforest" {
            return Err(Error::format("not an rpforest index file"));
        }
        let dim = meta["dim"].as_u64().unwrap_or(0) as usize;
        let n_trees = meta["n_trees"].as_u64().unwrap_or(0) as usize;
        let leaf_size = meta["leaf_size"].as_u64().unwrap_or(1) as usize;
        let seed = meta["seed"].as_u64().unwrap_or(0);
        let ids: Vec<String> = serde_json::from_value(meta["ids"].clone())
            .map_err(|e| Error::format(format!("index ids: {}", e)))?;

        let vectors: Tensor<f32> = ck.get("vectors")?;
        let mut items = EmbeddingTable::new(dim);
        for (i, id) in ids.iter().enumerate() {
            items.insert(id.clone(), vectors.data()[i * dim..(i + 1) * dim].to_vec())?;
        }

        let mut trees = Vec::with_capacity(n_trees);
        for t in 0..n_trees {
            let headers: Vec<f32> = ck.get_vec(&format!("tree.{}.headers", t))?;
            let normals: Vec<f32> = ck.get_vec(&format!("tree.{}.normals", t))?;
            let leaf_items: Vec<f32> = ck.get_vec(&format!("tree.{}.leaf_items", t))?;
            let mut nodes = Vec::with_capacity(headers.len() / 4);
            let mut normal_at = 0usize;
            for chunk in headers.chunks_exact(4) {
                if chunk[0] == 0.0 {
                    let normal = normals[normal_at..normal_at + dim].to_vec();
                    normal_at += dim;
                    nodes.push(Node::Split {
                        normal,
                        offset: chunk[3],
                        left: chunk[1] as usize,
                        right: chunk[2] as usize,
                    });
                } else {
                    let start = chunk[1] as usize;
                    let count = chunk[2] as usize;
                    nodes.push(Node::Leaf {
                        items: leaf_items[start..start + count]
                            .iter()
                            .map(|&v| v as u32)
                            .collect(),
                    });
                }
            }
            trees.push(Tree { nodes });
        }
        Ok(RPForest {
            n_trees,
            leaf_size,
            seed,
            trees,
            items,
        })
    }
}

/// Exhaustive exact top-k by angular distance; ties break by ascending id.
pub fn exact_knn(table: &EmbeddingTable, query: &[f32], k: usize) -> Result<QueryResult> {
    if k < 1 {
        return Err(Error::config("k must be >= 1"));
    }
    if k > table.len() {
        return Err(Error::data(format!(
            "k={} exceeds table size {}",
            k,
            table.len()
        )));
    }
    let mut scored: Vec<(usize, f32)> = (0..table.len())
        .map(|i| Ok((i, angular_distance(query, table.row(i))?)))
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| {
        a.1.partial_cmp(&b.1)
            .unwrap_or(Ordering::Equal)
            .then_with(|| table.id(a.0).cmp(table.id(b.0)))
    });
    scored.truncate(k);
    Ok(QueryResult {
        neighbors: scored
            .into_iter()
            .map(|(i, d)| (table.id(i).to_string(), d))
            .collect(),
        budget_used: table.len(),
    })
}

/// Mean |approx top-k intersect exact top-k| / k over the query vectors.
pub fn recall(
    forest: &RPForest,
    table: &EmbeddingTable,
    queries: &[Vec<f32>],
    k: usize,
    search_k: usize,
) -> Result<f64> {
    if queries.is_empty() {
        return Ok(0.0);
    }
    let per: Vec<Result<f64>> = queries
        .par_iter()
        .map(|q| {
            let approx = forest.query(q, k, search_k)?;
            let exact = exact_knn(table, q, k)?;
            let exact_ids: HashSet<&str> =
                exact.neighbors.iter().map(|(id, _)| id.as_str()).collect();
            let hits = approx
                .neighbors
                .iter()
                .filter(|(id, _)| exact_ids.contains(id.as_str()))
                .count();
            Ok(hits as f64 / k as f64)
        })
        .collect();
    let mut total = 0.0;
    for r in per {
        total += r?;
    }
    Ok(total / queries.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_table(n: usize, dim: usize, seed: u64) -> EmbeddingTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = EmbeddingTable::new(dim);
        for i in 0..n {
            let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            t.insert(format!("v{:05}", i), v).unwrap();
        }
        t
    }

    #[test]
    fn angular_distance_properties() {
        let u = [1.0f32, 2.0, -0.5];
        let w = [-0.3f32, 0.7, 1.1];
        let duw = angular_distance(&u, &w).unwrap();
        let dwu = angular_distance(&w, &u).unwrap();
        assert!((duw - dwu).abs() < 1e-7);
        assert!((0.0..=2.0).contains(&duw));
        // Zero iff same direction.
        let u2: Vec<f32> = u.iter().map(|v| v * 3.0).collect();
        assert!(angular_distance(&u, &u2).unwrap().abs() < 1e-6);
        let neg: Vec<f32> = u.iter().map(|v| -v).collect();
        assert!((angular_distance(&u, &neg).unwrap() - 2.0).abs() < 1e-6);
    }

    #[test]
    fn single_leaf_when_small() {
        let t = random_table(8, 4, 1);
        let f = RPForest::build(t, 4, 16, 9).unwrap();
        assert_eq!(f.max_depth(), 0);
    }

    #[test]
    fn self_query_returns_self() {
        let t = random_table(300, 8, 2);
        let f = RPForest::build(t.clone(), 8, 16, 5).unwrap();
        for i in (0..300).step_by(37) {
            let id = t.id(i).to_string();
            let res = f.query_by_id(&id, 1, f.default_search_k(1).max(64)).unwrap();
            assert_eq!(res.neighbors[0].0, id);
            assert!(res.neighbors[0].1.abs() < 1e-6);
        }
    }

    #[test]
    fn depth_is_logarithmic() {
        let n = 4096;
        let leaf = 16;
        let t = random_table(n, 8, 3);
        let f = RPForest::build(t, 4, leaf, 7).unwrap();
        let bound = 4.0 * ((n / leaf) as f64).log2() + 16.0;
        assert!(
            (f.max_depth() as f64) < bound,
            "depth {} above bound {}",
            f.max_depth(),
            bound
        );
    }

    #[test]
    fn exhaustive_search_matches_oracle() {
        let t = random_table(500, 6, 11);
        let f = RPForest::build(t.clone(), 5, 8, 13).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let q: Vec<f32> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let approx = f.query(&q, 10, usize::MAX).unwrap();
            let exact = exact_knn(&t, &q, 10).unwrap();
            assert_eq!(approx.neighbors, exact.neighbors);
        }
    }

    #[test]
    fn exact_knn_handles_ties_and_duplicates() {
        let mut t = EmbeddingTable::new(2);
        t.insert("b", vec![1.0, 0.0]).unwrap();
        t.insert("a", vec![2.0, 0.0]).unwrap(); // same direction as b
        t.insert("c", vec![0.0, 1.0]).unwrap();
        let q = [1.0f32, 0.0];
        let res = exact_knn(&t, &q, 2).unwrap();
        // a and b tie at distance 0; ascending id order.
        assert_eq!(res.neighbors[0].0, "a");
        assert_eq!(res.neighbors[1].0, "b");
        let res1 = exact_knn(&t, &q, 1).unwrap();
        assert_eq!(res1.neighbors[0].0, "a");
    }

    #[test]
    fn exact_knn_order_invariant_to_insertion() {
        let mut t1 = EmbeddingTable::new(2);
        t1.insert("x", vec![1.0, 0.1]).unwrap();
        t1.insert("y", vec![1.0, -0.1]).unwrap();
        t1.insert("z", vec![-1.0, 0.0]).unwrap();
        let mut t2 = EmbeddingTable::new(2);
        t2.insert("z", vec![-1.0, 0.0]).unwrap();
        t2.insert("y", vec![1.0, -0.1]).unwrap();
        t2.insert("x", vec![1.0, 0.1]).unwrap();
        let q = [1.0f32, 0.0];
        assert_eq!(
            exact_knn(&t1, &q, 3).unwrap().neighbors,
            exact_knn(&t2, &q, 3).unwrap().neighbors
        );
    }

    #[test]
    fn three_known_angles() {
        let mut t = EmbeddingTable::new(2);
        // Angles 0, 45, 90 degrees from the query (1,0).
        t.insert("deg00", vec![1.0, 0.0]).unwrap();
        t.insert("deg45", vec![1.0, 1.0]).unwrap();
        t.insert("deg90", vec![0.0, 1.0]).unwrap();
        let res = exact_knn(&t, &[1.0, 0.0], 3).unwrap();
        let ids: Vec<&str> = res.neighbors.iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(ids, vec!["deg00", "deg45", "deg90"]);
        assert!((res.neighbors[1].1 - (1.0 - 0.5f32.sqrt())).abs() < 1e-6);
    }

    #[test]
    fn recall_reasonable_and_monotone() {
        let t = random_table(2000, 16, 21);
        let f = RPForest::build(t.clone(), 10, 16, 23).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let queries: Vec<Vec<f32>> = (0..50)
            .map(|_| (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut prev = 0.0;
        for (i, search_k) in [20usize, 100, 400, 2000].iter().enumerate() {
            let r = recall(&f, &t, &queries, 10, *search_k).unwrap();
            assert!(
                r >= prev - 0.01,
                "recall should not decrease with search_k: {} -> {}",
                prev,
                r
            );
            prev = r;
            if i == 3 {
                assert!((r - 1.0).abs() < 1e-9, "exhaustive recall must be 1");
            }
        }
    }

    #[test]
    fn serialization_roundtrip_same_results() {
        let t = random_table(400, 8, 41);
        let f = RPForest::build(t.clone(), 6, 8, 43).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.bin");
        f.save(&path).unwrap();
        let g = RPForest::load(&path).unwrap();
        assert_eq!(g.n_trees, f.n_trees);
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for _ in 0..25 {
            let q: Vec<f32> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = f.query(&q, 5, 120).unwrap();
            let b = g.query(&q, 5, 120).unwrap();
            assert_eq!(a.neighbors, b.neighbors);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let t = random_table(10, 4, 3);
        assert!(RPForest::build(t.clone(), 0, 8, 1).is_err());
        assert!(RPForest::build(t.clone(), 2, 0, 1).is_err());
        let f = RPForest::build(t.clone(), 2, 4, 1).unwrap();
        assert!(f.query(&[1.0, 0.0], 1, 10).is_err()); // wrong dim
        assert!(f.query(&[1.0, 0.0, 0.0, 0.0], 11, 10).is_err()); // k too big
        let mut zt = EmbeddingTable::new(2);
        zt.insert("z", vec![0.0, 0.0]).unwrap();
        assert!(RPForest::build(zt, 2, 4, 1).is_err());
    }
}
