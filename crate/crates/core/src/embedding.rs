//! ID-indexed dense vector tables: the currency passed between the song
//! embedding trainer, the playlist encoders, and the retrieval index.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::io::{write_atomic, Checkpoint};
use crate::nncore::Tensor;

/// A table of equal-dimension f32 vectors addressed by string id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f32>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            ids: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f32>) -> Result<()> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(Error::dim(format!(
                "vector for {} has dim {} but table dim is {}",
                id,
                vector.len(),
                self.dim
            )));
        }
        if self.index.contains_key(&id) {
            return Err(Error::data(format!("duplicate embedding id {}", id)));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(&vector);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index.get(id).map(|&i| self.row(i))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.ids
            .iter()
            .enumerate()
            .map(move |(i, id)| (id.as_str(), self.row(i)))
    }

    /// Exact top-k neighbors of `id` by descending cosine similarity,
    /// excluding the query itself. Ties break by ascending id.
    pub fn nearest(&self, id: &str, k: usize) -> Result<Vec<(String, f32)>> {
        let query = self
            .get(id)
            .ok_or_else(|| Error::data(format!("unknown embedding id {}", id)))?;
        if k >= self.len() {
            return Err(Error::data(format!(
                "k={} must be smaller than table size {}",
                k,
                self.len()
            )));
        }
        let mut scored: Vec<(usize, f32)> = Vec::with_capacity(self.len() - 1);
        for i in 0..self.len() {
            if self.ids[i] == id {
                continue;
            }
            scored.push((i, cosine(query, self.row(i))?));
        }
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| self.ids[a.0].cmp(&self.ids[b.0]))
        });
        scored.truncate(k);
        Ok(scored
            .into_iter()
            .map(|(i, s)| (self.ids[i].clone(), s))
            .collect())
    }

    /// Text format: header `count dim`, then one `id v1 v2 ...` per line.
    /// Ids must not contain whitespace; floats round-trip exactly.
    pub fn write_text(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        writeln!(out, "{} {}", self.len(), self.dim)?;
        for (id, row) in self.rows() {
            if id.chars().any(|c| c.is_whitespace()) {
                return Err(Error::data(format!(
                    "id `{}` contains whitespace; use the binary format",
                    id
                )));
            }
            write!(out, "{}", id)?;
            for v in row {
                write!(out, " {}", v)?;
            }
            writeln!(out)?;
        }
        write_atomic(path, &out)
    }

    pub fn read_text(path: &Path) -> Result<Self> {
        let path_str = path.display().to_string();
        let f = std::fs::File::open(path)?;
        let mut lines = BufReader::new(f).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(&path_str, 1, "missing header"))??;
        let mut parts = header.split_whitespace();
        let count: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(&path_str, 1, "bad count"))?;
        let dim: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(&path_str, 1, "bad dim"))?;
        let mut table = EmbeddingTable::new(dim);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let id = parts
                .next()
                .ok_or_else(|| Error::parse(&path_str, i + 2, "missing id"))?;
            let vector: Vec<f32> = parts
                .map(|s| s.parse::<f32>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(&path_str, i + 2, e.to_string()))?;
            table.insert(id, vector)?;
        }
        if table.len() != count {
            return Err(Error::format(format!(
                "{}: header says {} rows, found {}",
                path_str,
                count,
                table.len()
            )));
        }
        Ok(table)
    }

    /// Binary format: one `vectors` tensor plus the id list in the metadata.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "kind": "embedding_table",
            "dim": self.dim,
            "ids": self.ids,
        });
        let mut ck = Checkpoint::new(meta.to_string());
        ck.push(
            "vectors",
            &Tensor::from_vec(&[self.len(), self.dim], self.data.clone()),
        );
        ck.write_file(path)
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let ck = Checkpoint::read_file(path)?;
        #[derive(Deserialize)]
        struct Meta {
            dim: usize,
            ids: Vec<String>,
        }
        let meta: Meta = serde_json::from_str(&ck.meta)
            .map_err(|e| Error::format(format!("embedding meta: {}", e)))?;
        let vectors: Tensor<f32> = ck.get("vectors")?;
        if vectors.len() != meta.ids.len() * meta.dim {
            return Err(Error::format("embedding payload size mismatch"));
        }
        let mut table = EmbeddingTable::new(meta.dim);
        for (i, id) in meta.ids.iter().enumerate() {
            table.insert(
                id.clone(),
                vectors.data()[i * meta.dim..(i + 1) * meta.dim].to_vec(),
            )?;
        }
        Ok(table)
    }
}

/// Cosine similarity; errors on zero vectors.
pub fn cosine(u: &[f32], v: &[f32]) -> Result<f32> {
    if u.len() != v.len() {
        return Err(Error::dim(format!(
            "cosine of {}-dim and {}-dim vectors",
            u.len(),
            v.len()
        )));
    }
    let mut uu = 0.0f64;
    let mut vv = 0.0f64;
    let mut uv = 0.0f64;
    for i in 0..u.len() {
        let a = u[i] as f64;
        let b = v[i] as f64;
        uu += a * a;
        vv += b * b;
        uv += a * b;
    }
    if uu == 0.0 || vv == 0.0 {
        return Err(Error::data("cosine of a zero vector"));
    }
    Ok((uv / (uu.sqrt() * vv.sqrt())) as f32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table3() -> EmbeddingTable {
        let mut t = EmbeddingTable::new(2);
        t.insert("a", vec![1.0, 0.0]).unwrap();
        t.insert("b", vec![0.0, 1.0]).unwrap();
        t.insert("c", vec![1.0, 0.0]).unwrap();
        t
    }

    #[test]
    fn cosine_basics() {
        let v = [0.3f32, -0.4, 1.2];
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-6);
        let neg: Vec<f32> = v.iter().map(|x| -x).collect();
        assert!((cosine(&v, &neg).unwrap() + 1.0).abs() < 1e-6);
        assert!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap().abs() < 1e-9);
        assert!(cosine(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn nearest_duplicate_vector_ranks_first() {
        let t = table3();
        let res = t.nearest("a", 1).unwrap();
        assert_eq!(res[0].0, "c");
        assert!((res[0].1 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn nearest_k_equals_rest() {
        let t = table3();
        let res = t.nearest("b", 2).unwrap();
        assert_eq!(res.len(), 2);
        // a and c tie; ascending id breaks the tie.
        assert_eq!(res[0].0, "a");
        assert_eq!(res[1].0, "c");
        assert!(t.nearest("b", 3).is_err());
        assert!(t.nearest("zzz", 1).is_err());
    }

    #[test]
    fn nearest_matches_brute_force_scan() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut t = EmbeddingTable::new(4);
        for i in 0..30 {
            let v: Vec<f32> = (0..4).map(|_| rng.gen_range(-1.0..1.0f32)).collect();
            t.insert(format!("id{:02}", i), v).unwrap();
        }
        let query = "id07";
        let got = t.nearest(query, 5).unwrap();
        // Independent scan.
        let qv = t.get(query).unwrap().to_vec();
        let mut all: Vec<(String, f32)> = t
            .rows()
            .filter(|(id, _)| *id != query)
            .map(|(id, row)| (id.to_string(), cosine(&qv, row).unwrap()))
            .collect();
        all.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap()
                .then_with(|| a.0.cmp(&b.0))
        });
        assert_eq!(got, all[..5].to_vec());
    }

    #[test]
    fn text_and_binary_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let t = table3();
        let tp = dir.path().join("emb.txt");
        let bp = dir.path().join("emb.bin");
        t.write_text(&tp).unwrap();
        t.write_binary(&bp).unwrap();
        assert_eq!(EmbeddingTable::read_text(&tp).unwrap(), t);
        assert_eq!(EmbeddingTable::read_binary(&bp).unwrap(), t);
    }
}
