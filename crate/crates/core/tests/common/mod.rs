#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use qvqpp_core::corpus_io::{parse_collection, parse_qrels, parse_queries, parse_run};
use qvqpp_core::text_index::tokenize;
use qvqpp_core::{Document, Qrels, Query, RankedList};

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/mini")
}

pub struct Fixture {
    pub docs: Vec<Document>,
    pub train: Vec<Query>,
    pub train_qrels: Qrels,
    pub targets: Vec<Query>,
    pub test_qrels: Qrels,
    pub runs: BTreeMap<String, RankedList>,
}

pub fn fixture() -> Fixture {
    let d = fixture_dir();
    Fixture {
        docs: parse_collection(d.join("collection.tsv")).unwrap(),
        train: parse_queries(d.join("train_queries.tsv")).unwrap(),
        train_qrels: parse_qrels(d.join("train_qrels.txt")).unwrap(),
        targets: parse_queries(d.join("test_queries.tsv")).unwrap(),
        test_qrels: parse_qrels(d.join("test_qrels.txt")).unwrap(),
        runs: parse_run(d.join("target_run.txt"), 1000).unwrap(),
    }
}

/// Exhaustive BM25 straight from the formula (k1 = 0.9, b = 0.4).
pub struct Bm25Oracle {
    items: Vec<(String, Vec<String>)>,
    df: HashMap<String, usize>,
    avgdl: f64,
}

pub const K1: f64 = 0.9;
pub const B: f64 = 0.4;

pub fn idf(n: usize, df: usize) -> f64 {
    (1.0 + (n as f64 - df as f64 + 0.5) / (df as f64 + 0.5)).ln()
}

pub fn weight(idf: f64, tf: f64, len: f64, avgdl: f64) -> f64 {
    idf * tf * (K1 + 1.0) / (tf + K1 * (1.0 - B + B * len / avgdl))
}

impl Bm25Oracle {
    pub fn new(items: impl IntoIterator<Item = (String, String)>) -> Self {
        let items: Vec<(String, Vec<String>)> = items
            .into_iter()
            .map(|(id, text)| (id, tokenize(&text)))
            .collect();
        let mut df = HashMap::new();
        for (_, toks) in &items {
            let mut uniq = toks.clone();
            uniq.sort();
            uniq.dedup();
            for t in uniq {
                *df.entry(t).or_insert(0) += 1;
            }
        }
        let total: usize = items.iter().map(|(_, t)| t.len()).sum();
        let avgdl = if items.is_empty() {
            0.0
        } else {
            total as f64 / items.len() as f64
        };
        Bm25Oracle { items, df, avgdl }
    }

    pub fn score(&self, i: usize, query: &[String]) -> f64 {
        let toks = &self.items[i].1;
        let mut s = 0.0;
        for q in query {
            let tf = toks.iter().filter(|t| *t == q).count();
            if tf > 0 {
                s += weight(
                    idf(self.items.len(), self.df[q]),
                    tf as f64,
                    toks.len() as f64,
                    self.avgdl,
                );
            }
        }
        s
    }

    /// Positive-scoring items, score desc then id asc, cut at `depth`.
    pub fn retrieve(
        &self,
        query: &[String],
        depth: usize,
        keep: impl Fn(&str) -> bool,
    ) -> Vec<(String, f64)> {
        let mut hits: Vec<(String, f64)> = (0..self.items.len())
            .filter(|&i| keep(&self.items[i].0))
            .map(|i| (self.items[i].0.clone(), self.score(i, query)))
            .filter(|(_, s)| *s > 0.0)
            .collect();
        hits.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        hits.truncate(depth);
        hits
    }

    pub fn tokens(&self, id: &str) -> &[String] {
        &self.items.iter().find(|(i, _)| i == id).unwrap().1
    }
}

pub fn ids(list: &RankedList) -> Vec<String> {
    list.doc_ids().map(str::to_string).collect()
}

/// Population std over the collection score.
pub fn nqc_oracle(scores: &[f64], cs: f64) -> f64 {
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt() / cs
}
