//! Tokenization, inverted index and BM25 retrieval.
//!
//! The same index type serves the passage collection (the internal document
//! retriever) and the training query set (the variant retriever).

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{rank_order, Document, Query, RankedList, ScoredDoc};

/// Built-in English stopword list. Part of the tokenizer's contract:
/// changing it changes every index and ranking.
pub const STOPWORDS: &[&str] = &[
    "a",
    "about",
    "above",
    "after",
    "again",
    "against",
    "all",
    "am",
    "an",
    "and",
    "any",
    "are",
    "as",
    "at",
    "be",
    "because",
    "been",
    "before",
    "being",
    "below",
    "between",
    "both",
    "but",
    "by",
    "can",
    "could",
    "did",
    "do",
    "does",
    "doing",
    "down",
    "during",
    "each",
    "few",
    "for",
    "from",
    "further",
    "had",
    "has",
    "have",
    "having",
    "he",
    "her",
    "here",
    "hers",
    "herself",
    "him",
    "himself",
    "his",
    "how",
    "i",
    "if",
    "in",
    "into",
    "is",
    "it",
    "its",
    "itself",
    "me",
    "more",
    "most",
    "my",
    "myself",
    "no",
    "nor",
    "not",
    "of",
    "off",
    "on",
    "once",
    "only",
    "or",
    "other",
    "our",
    "ours",
    "ourselves",
    "out",
    "over",
    "own",
    "same",
    "she",
    "should",
    "so",
    "some",
    "such",
    "than",
    "that",
    "the",
    "their",
    "theirs",
    "them",
    "themselves",
    "then",
    "there",
    "these",
    "they",
    "this",
    "those",
    "through",
    "to",
    "too",
    "under",
    "until",
    "up",
    "very",
    "was",
    "we",
    "were",
    "what",
    "when",
    "where",
    "which",
    "while",
    "who",
    "whom",
    "why",
    "will",
    "with",
    "would",
    "you",
    "your",
    "yours",
    "yourself",
    "yourselves",
];

fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

/// Lowercases, splits on runs of non-alphanumeric characters and drops
/// stopwords. No stemming.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty() && !is_stopword(t))
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 0.9, b: 0.4 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 >= 0.0 && self.k1.is_finite()) || !(0.0..=1.0).contains(&self.b) {
            return Err(Error::InvalidParameter(format!(
                "bm25 needs k1 >= 0 and 0 <= b <= 1, got k1={} b={}",
                self.k1, self.b
            )));
        }
        Ok(())
    }

    /// ln(1 + (N - df + 0.5) / (df + 0.5)); never negative.
    pub fn idf(n_items: usize, df: usize) -> f64 {
        let (n, df) = (n_items as f64, df as f64);
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    pub fn term_weight(&self, idf: f64, tf: f64, len: f64, avgdl: f64) -> f64 {
        let norm = if avgdl > 0.0 { len / avgdl } else { 0.0 };
        idf * tf * (self.k1 + 1.0) / (tf + self.k1 * (1.0 - self.b + self.b * norm))
    }
}

const ARTIFACT_FORMAT: &str = "qvqpp-inverted-index";
const ARTIFACT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Artifact {
    format: String,
    version: u32,
    index: InvertedIndex,
}

/// Immutable inverted index with per-item term statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "IndexData", into = "IndexData")]
pub struct InvertedIndex {
    data: IndexData,
    id_lookup: HashMap<String, u32>,
    term_lookup: HashMap<String, u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IndexData {
    bm25: Bm25Params,
    item_ids: Vec<String>,
    item_lengths: Vec<u32>,
    terms: Vec<String>,
    /// term id -> (item ordinal, tf), ordinals ascending
    postings: Vec<Vec<(u32, u32)>>,
    /// item ordinal -> (term id, tf), term ids ascending
    forward: Vec<Vec<(u32, u32)>>,
    collection_freq: Vec<u64>,
    total_tokens: u64,
}

impl From<IndexData> for InvertedIndex {
    fn from(data: IndexData) -> Self {
        let id_lookup = data
            .item_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as u32))
            .collect();
        let term_lookup = data
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        InvertedIndex {
            data,
            id_lookup,
            term_lookup,
        }
    }
}

impl From<InvertedIndex> for IndexData {
    fn from(index: InvertedIndex) -> Self {
        index.data
    }
}

impl PartialEq for InvertedIndex {
    fn eq(&self, other: &Self) -> bool {
        self.data == other.data
    }
}

impl InvertedIndex {
    /// Builds an index over `(id, text)` pairs. Ordinals follow input order.
    pub fn build<I, S, T>(items: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, T)>,
        S: AsRef<str>,
        T: AsRef<str>,
    {
        let mut data = IndexData {
            bm25: Bm25Params::default(),
            item_ids: Vec::new(),
            item_lengths: Vec::new(),
            terms: Vec::new(),
            postings: Vec::new(),
            forward: Vec::new(),
            collection_freq: Vec::new(),
            total_tokens: 0,
        };
        let mut id_lookup = HashMap::new();
        let mut term_lookup: HashMap<String, u32> = HashMap::new();

        for (id, text) in items {
            let id = id.as_ref();
            if id.is_empty() {
                return Err(Error::InvalidInput("empty item id".into()));
            }
            let ordinal = u32::try_from(data.item_ids.len())
                .map_err(|_| Error::InvalidInput("too many items".into()))?;
            if id_lookup.insert(id.to_string(), ordinal).is_some() {
                return Err(Error::DuplicateId(id.to_string()));
            }
            let tokens = tokenize(text.as_ref());
            let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
            for tok in &tokens {
                let tid = match term_lookup.get(tok) {
                    Some(&t) => t,
                    None => {
                        let t = data.terms.len() as u32;
                        term_lookup.insert(tok.clone(), t);
                        data.terms.push(tok.clone());
                        data.postings.push(Vec::new());
                        data.collection_freq.push(0);
                        t
                    }
                };
                *counts.entry(tid).or_insert(0) += 1;
            }
            for (&tid, &tf) in &counts {
                data.postings[tid as usize].push((ordinal, tf));
                data.collection_freq[tid as usize] += u64::from(tf);
            }
            data.item_ids.push(id.to_string());
            data.item_lengths.push(tokens.len() as u32);
            data.total_tokens += tokens.len() as u64;
            data.forward.push(counts.into_iter().collect());
        }
        Ok(InvertedIndex {
            data,
            id_lookup,
            term_lookup,
        })
    }

    pub fn from_documents(docs: &[Document]) -> Result<Self> {
        Self::build(docs.iter().map(|d| (&d.id, &d.text)))
    }

    pub fn from_queries(queries: &[Query]) -> Result<Self> {
        Self::build(queries.iter().map(|q| (&q.id, &q.text)))
    }

    pub fn with_bm25(mut self, params: Bm25Params) -> Result<Self> {
        params.validate()?;
        self.data.bm25 = params;
        Ok(self)
    }

    pub fn bm25_params(&self) -> Bm25Params {
        self.data.bm25
    }

    /// Number of indexed items (N).
    pub fn len(&self) -> usize {
        self.data.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.item_ids.is_empty()
    }

    pub fn avgdl(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.data.total_tokens as f64 / self.len() as f64
        }
    }

    pub fn total_tokens(&self) -> u64 {
        self.data.total_tokens
    }

    pub fn item_id(&self, ordinal: usize) -> &str {
        &self.data.item_ids[ordinal]
    }

    pub fn ordinal(&self, id: &str) -> Option<usize> {
        self.id_lookup.get(id).map(|&o| o as usize)
    }

    pub fn item_length(&self, ordinal: usize) -> u32 {
        self.data.item_lengths[ordinal]
    }

    pub fn vocabulary_size(&self) -> usize {
        self.data.terms.len()
    }

    pub fn term_id(&self, term: &str) -> Option<u32> {
        self.term_lookup.get(term).copied()
    }

    pub fn term(&self, term_id: u32) -> &str {
        &self.data.terms[term_id as usize]
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.term_id(term)
            .map_or(0, |t| self.data.postings[t as usize].len())
    }

    pub fn collection_frequency(&self, term: &str) -> u64 {
        self.term_id(term)
            .map_or(0, |t| self.data.collection_freq[t as usize])
    }

    pub fn postings(&self, term: &str) -> &[(u32, u32)] {
        self.term_id(term)
            .map_or(&[], |t| &self.data.postings[t as usize])
    }

    /// `(term id, tf)` pairs of one item, term ids ascending.
    pub fn item_terms(&self, ordinal: usize) -> &[(u32, u32)] {
        &self.data.forward[ordinal]
    }

    /// Top-`depth` items by BM25 for a bag of tokens. Repeated tokens count
    /// once per occurrence. Items scoring 0 are never returned.
    pub fn bm25_retrieve(&self, query_id: &str, terms: &[String], depth: usize) -> RankedList {
        self.bm25_retrieve_filtered(query_id, terms, depth, |_| true)
    }

    /// As [`bm25_retrieve`](Self::bm25_retrieve), skipping items for which
    /// `keep(ordinal)` is false before the depth cut.
    pub fn bm25_retrieve_filtered(
        &self,
        query_id: &str,
        terms: &[String],
        depth: usize,
        keep: impl Fn(usize) -> bool,
    ) -> RankedList {
        if depth == 0 || terms.is_empty() || self.is_empty() {
            return RankedList::empty(query_id);
        }
        let params = self.data.bm25;
        let n = self.len();
        let avgdl = self.avgdl();
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for term in terms {
            let Some(tid) = self.term_id(term) else {
                continue;
            };
            let postings = &self.data.postings[tid as usize];
            let idf = Bm25Params::idf(n, postings.len());
            for &(ordinal, tf) in postings {
                let len = f64::from(self.data.item_lengths[ordinal as usize]);
                *acc.entry(ordinal).or_insert(0.0) +=
                    params.term_weight(idf, f64::from(tf), len, avgdl);
            }
        }
        let mut hits: Vec<(f64, u32)> = acc
            .into_iter()
            .filter(|&(o, s)| s > 0.0 && keep(o as usize))
            .map(|(o, s)| (s, o))
            .collect();
        let ids = &self.data.item_ids;
        let cmp = |a: &(f64, u32), b: &(f64, u32)| {
            rank_order(a.0, &ids[a.1 as usize], b.0, &ids[b.1 as usize])
        };
        if hits.len() > depth {
            hits.select_nth_unstable_by(depth - 1, cmp);
            hits.truncate(depth);
        }
        hits.sort_unstable_by(cmp);
        let entries = hits
            .into_iter()
            .map(|(s, o)| ScoredDoc::new(ids[o as usize].clone(), s))
            .collect();
        RankedList::from_canonical(query_id.to_string(), entries)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let artifact = ArtifactRef {
            format: ARTIFACT_FORMAT,
            version: ARTIFACT_VERSION,
            index: &self.data,
        };
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(file), &artifact)
            .map_err(|e| Error::Artifact(format!("{}: {e}", path.display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let artifact: Artifact = serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| Error::Artifact(format!("{}: {e}", path.display())))?;
        if artifact.format != ARTIFACT_FORMAT || artifact.version != ARTIFACT_VERSION {
            return Err(Error::Artifact(format!(
                "{}: unsupported artifact {} v{}",
                path.display(),
                artifact.format,
                artifact.version
            )));
        }
        artifact.index.data.bm25.validate()?;
        Ok(artifact.index)
    }
}

#[derive(Serialize)]
struct ArtifactRef<'a> {
    format: &'a str,
    version: u32,
    index: &'a IndexData,
}

/// Term bag standing in for a document when it is used as a query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoQuery {
    pub source_doc_id: String,
    pub terms: Vec<String>,
}

impl PseudoQuery {
    /// True when the source document had no non-stopword tokens.
    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

/// The `m` most frequent tokens of a document, ties broken alphabetically.
pub fn make_pseudo_query(doc: &Document, m: usize) -> PseudoQuery {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for tok in tokenize(&doc.text) {
        *counts.entry(tok).or_insert(0) += 1;
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| match b.1.cmp(&a.1) {
        Ordering::Equal => a.0.cmp(&b.0),
        o => o,
    });
    PseudoQuery {
        source_doc_id: doc.id.clone(),
        terms: ranked.into_iter().take(m).map(|(t, _)| t).collect(),
    }
}
