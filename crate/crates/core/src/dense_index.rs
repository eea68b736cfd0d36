//! Exact cosine kNN over precomputed embeddings.
//!
//! Embedding file: a header line `count dim`, then one line per vector with
//! the id followed by `dim` whitespace-separated decimals.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{rank_order, RankedList, ScoredDoc};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    ids: Vec<String>,
    lookup: HashMap<String, usize>,
    /// row-major, `ids.len() * dim`
    vectors: Vec<f32>,
    norms: Vec<f64>,
}

fn norm(v: &[f32]) -> f64 {
    v.iter()
        .map(|&x| f64::from(x) * f64::from(x))
        .sum::<f64>()
        .sqrt()
}

impl EmbeddingStore {
    pub fn from_vectors<S: Into<String>>(
        dim: usize,
        rows: impl IntoIterator<Item = (S, Vec<f32>)>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter(
                "embedding dim must be positive".into(),
            ));
        }
        let mut store = EmbeddingStore {
            dim,
            ids: Vec::new(),
            lookup: HashMap::new(),
            vectors: Vec::new(),
            norms: Vec::new(),
        };
        for (id, v) in rows {
            store.push(id.into(), v)?;
        }
        Ok(store)
    }

    fn push(&mut self, id: String, v: Vec<f32>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::InvalidInput(format!(
                "vector `{id}` has {} values, expected {}",
                v.len(),
                self.dim
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "vector `{id}` has non-finite values"
            )));
        }
        if self.lookup.insert(id.clone(), self.ids.len()).is_some() {
            return Err(Error::DuplicateId(id));
        }
        self.norms.push(norm(&v));
        self.vectors.extend_from_slice(&v);
        self.ids.push(id);
        Ok(())
    }

    /// Reads an embedding file, checking the declared count and dim.
    pub fn load_vectors(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let fail = |message: String| Error::Embedding {
            path: path.to_path_buf(),
            message,
        };
        let mut lines = content.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| fail("missing header".into()))?;
        let header: Vec<&str> = header.split_whitespace().collect();
        let parse_usize = |s: &str| s.parse::<usize>().ok();
        let (count, dim) = match header.as_slice() {
            [c, d] => match (parse_usize(c), parse_usize(d)) {
                (Some(c), Some(d)) if d > 0 => (c, d),
                _ => return Err(fail("header must be `count dim` with dim > 0".into())),
            },
            _ => return Err(fail("header must be `count dim`".into())),
        };
        let mut store = EmbeddingStore::from_vectors(dim, Vec::<(String, Vec<f32>)>::new())?;
        for (i, line) in lines {
            let mut fields = line.split_whitespace();
            let id = fields
                .next()
                .ok_or_else(|| fail(format!("line {}: empty row", i + 1)))?;
            let values: Vec<f32> = fields
                .map(|f| {
                    f.parse::<f32>()
                        .map_err(|_| fail(format!("row `{id}`: bad value `{f}`")))
                })
                .collect::<Result<_>>()?;
            if values.len() != dim {
                return Err(fail(format!(
                    "row `{id}` has {} values, header declares dim {dim}",
                    values.len()
                )));
            }
            store
                .push(id.to_string(), values)
                .map_err(|e| fail(format!("row `{id}`: {e}")))?;
        }
        if store.len() != count {
            return Err(fail(format!(
                "header declares {count} vectors, file has {}",
                store.len()
            )));
        }
        Ok(store)
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

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        let i = *self.lookup.get(id)?;
        Some(&self.vectors[i * self.dim..(i + 1) * self.dim])
    }

    /// Top-`depth` ids by cosine similarity to `query_vec`, by exhaustive
    /// scan. Zero-norm stored vectors and `exclude` ids are never returned.
    pub fn knn_cosine(
        &self,
        query_id: &str,
        query_vec: &[f32],
        depth: usize,
        exclude: &HashSet<String>,
    ) -> Result<RankedList> {
        if query_vec.len() != self.dim {
            return Err(Error::InvalidInput(format!(
                "query vector has {} values, store dim is {}",
                query_vec.len(),
                self.dim
            )));
        }
        let qn = norm(query_vec);
        if qn == 0.0 || !qn.is_finite() {
            return Err(Error::InvalidInput("query vector has zero norm".into()));
        }
        let mut hits: Vec<(f64, usize)> = Vec::with_capacity(self.len());
        for (i, id) in self.ids.iter().enumerate() {
            let vn = self.norms[i];
            if vn == 0.0 || exclude.contains(id) {
                continue;
            }
            let row = &self.vectors[i * self.dim..(i + 1) * self.dim];
            let dot: f64 = row
                .iter()
                .zip(query_vec)
                .map(|(&a, &b)| f64::from(a) * f64::from(b))
                .sum();
            hits.push((dot / (qn * vn), i));
        }
        let cmp = |a: &(f64, usize), b: &(f64, usize)| {
            rank_order(a.0, &self.ids[a.1], b.0, &self.ids[b.1])
        };
        if depth == 0 {
            hits.clear();
        } else if hits.len() > depth {
            hits.select_nth_unstable_by(depth - 1, cmp);
            hits.truncate(depth);
        }
        hits.sort_unstable_by(cmp);
        let entries = hits
            .into_iter()
            .map(|(s, i)| ScoredDoc::new(self.ids[i].clone(), s))
            .collect();
        Ok(RankedList::from_canonical(query_id.to_string(), entries))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write(content: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        fs::write(&path, content).unwrap();
        (dir, path)
    }

    #[test]
    fn load_valid_file() {
        let (_d, path) = write("2 3\na 1 0 0\nb 0.5 0.5 -1\n");
        let store = EmbeddingStore::load_vectors(&path).unwrap();
        assert_eq!(store.dim(), 3);
        assert_eq!(store.len(), 2);
        assert_eq!(store.get("b").unwrap(), &[0.5, 0.5, -1.0]);
    }

    #[test]
    fn load_dim_mismatch_names_row() {
        let (_d, path) = write("2 3\na 1 0 0\nb 1 2\n");
        let err = EmbeddingStore::load_vectors(&path).unwrap_err();
        assert!(err.to_string().contains("`b`"), "{err}");
    }

    #[test]
    fn load_count_mismatch() {
        let (_d, path) = write("3 2\na 1 0\nb 0 1\n");
        assert!(EmbeddingStore::load_vectors(&path).is_err());
    }

    #[test]
    fn self_similarity_ranks_first() {
        let store = EmbeddingStore::from_vectors(
            2,
            [
                ("x", vec![0.3, 0.4]),
                ("y", vec![1.0, 0.0]),
                ("z", vec![0.0, 1.0]),
            ],
        )
        .unwrap();
        let r = store
            .knn_cosine("q", &[0.3, 0.4], 3, &HashSet::new())
            .unwrap();
        assert_eq!(r.entries()[0].doc_id, "x");
        assert!((r.entries()[0].score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_vector_scores_zero_and_is_returned() {
        let store = EmbeddingStore::from_vectors(2, [("a", vec![0.0, 1.0])]).unwrap();
        let r = store
            .knn_cosine("q", &[1.0, 0.0], 1, &HashSet::new())
            .unwrap();
        assert_eq!(r.entries(), &[ScoredDoc::new("a", 0.0)]);
    }

    #[test]
    fn zero_norm_rows_and_excluded_ids_skipped() {
        let store = EmbeddingStore::from_vectors(
            2,
            [
                ("a", vec![0.0, 0.0]),
                ("b", vec![1.0, 1.0]),
                ("c", vec![1.0, 0.0]),
            ],
        )
        .unwrap();
        let exclude: HashSet<String> = ["c".to_string()].into();
        let r = store.knn_cosine("q", &[1.0, 0.0], 10, &exclude).unwrap();
        assert_eq!(r.doc_ids().collect::<Vec<_>>(), ["b"]);
    }

    #[test]
    fn zero_query_rejected() {
        let store = EmbeddingStore::from_vectors(2, [("a", vec![1.0, 0.0])]).unwrap();
        assert!(store
            .knn_cosine("q", &[0.0, 0.0], 1, &HashSet::new())
            .is_err());
        assert!(store.knn_cosine("q", &[1.0], 1, &HashSet::new()).is_err());
    }

    /// Independently coded scan: normalizes both sides first, sorts the
    /// complete candidate list.
    fn oracle(rows: &[(String, Vec<f32>)], q: &[f32], depth: usize) -> Vec<(String, f64)> {
        let unit = |v: &[f32]| {
            let n = v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            v.iter().map(|&x| x as f64 / n).collect::<Vec<_>>()
        };
        let uq = unit(q);
        let mut all: Vec<(String, f64)> = rows
            .iter()
            .map(|(id, v)| {
                let uv = unit(v);
                (id.clone(), uv.iter().zip(&uq).map(|(a, b)| a * b).sum())
            })
            .collect();
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        all.truncate(depth);
        all
    }

    proptest! {
        #[test]
        fn matches_bruteforce_oracle(
            rows in prop::collection::vec(prop::collection::vec(0.1f32..1.0, 4), 10),
            q in prop::collection::vec(-1.0f32..1.0, 4),
            exp in -6i32..7,
        ) {
            prop_assume!(q.iter().any(|x| x.abs() > 1e-3));
            let rows: Vec<(String, Vec<f32>)> = rows
                .into_iter()
                .enumerate()
                .map(|(i, v)| (format!("v{i:02}"), v))
                .collect();
            let store = EmbeddingStore::from_vectors(4, rows.clone()).unwrap();
            let got = store.knn_cosine("q", &q, 3, &HashSet::new()).unwrap();
            let want = oracle(&rows, &q, 3);
            prop_assert_eq!(got.len(), 3);
            for (g, w) in got.entries().iter().zip(&want) {
                prop_assert_eq!(&g.doc_id, &w.0);
                prop_assert!((g.score - w.1).abs() < 1e-9);
            }
            // power-of-two scaling is exact in f32, so only the similarity path is tested
            let scale = 2f32.powi(exp);
            let scaled: Vec<f32> = q.iter().map(|x| x * scale).collect();
            let got2 = store.knn_cosine("q", &scaled, 10, &HashSet::new()).unwrap();
            let all = store.knn_cosine("q", &q, 10, &HashSet::new()).unwrap();
            prop_assert_eq!(got2.len(), 10);
            for (a, b) in got2.entries().iter().zip(all.entries()) {
                prop_assert!((a.score - b.score).abs() < 1e-9);
            }
        }
    }
}
