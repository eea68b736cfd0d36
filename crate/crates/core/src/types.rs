use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
}

impl Query {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Query {
            id: id.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
}

impl ScoredDoc {
    pub fn new(doc_id: impl Into<String>, score: f64) -> Self {
        ScoredDoc {
            doc_id: doc_id.into(),
            score,
        }
    }
}

/// Canonical result ordering: score descending, then id ascending.
pub(crate) fn rank_order(a_score: f64, a_id: &str, b_score: f64, b_id: &str) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_id.cmp(b_id))
}

/// A per-query ranking, always held in canonical order
/// (score descending, ties by doc id ascending) with distinct doc ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    query_id: String,
    entries: Vec<ScoredDoc>,
}

impl RankedList {
    /// Builds a list from entries in any order. Rejects duplicate doc ids
    /// and non-finite scores.
    pub fn new(query_id: impl Into<String>, mut entries: Vec<ScoredDoc>) -> Result<Self> {
        let query_id = query_id.into();
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !e.score.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "non-finite score for `{}` in list `{query_id}`",
                    e.doc_id
                )));
            }
            if !seen.insert(e.doc_id.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "document `{}` appears twice in list `{query_id}`",
                    e.doc_id
                )));
            }
        }
        entries.sort_by(|a, b| rank_order(a.score, &a.doc_id, b.score, &b.doc_id));
        Ok(RankedList { query_id, entries })
    }

    /// Caller guarantees canonical order and distinct ids.
    pub(crate) fn from_canonical(query_id: String, entries: Vec<ScoredDoc>) -> Self {
        debug_assert!(entries.windows(2).all(|w| rank_order(
            w[0].score,
            &w[0].doc_id,
            w[1].score,
            &w[1].doc_id
        ) == Ordering::Less));
        RankedList { query_id, entries }
    }

    pub fn empty(query_id: impl Into<String>) -> Self {
        RankedList {
            query_id: query_id.into(),
            entries: Vec::new(),
        }
    }

    pub fn query_id(&self) -> &str {
        &self.query_id
    }

    pub fn entries(&self) -> &[ScoredDoc] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }

    pub fn scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.score)
    }

    pub fn truncate(&mut self, depth: usize) {
        self.entries.truncate(depth);
    }

    pub fn truncated(&self, depth: usize) -> RankedList {
        RankedList {
            query_id: self.query_id.clone(),
            entries: self.entries.iter().take(depth).cloned().collect(),
        }
    }
}

/// Relevance judgments: query id -> doc id -> grade.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Qrels::default()
    }

    /// Adds a judgment. A second judgment for the same pair is rejected.
    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) -> Result<()> {
        if query_id.is_empty() || doc_id.is_empty() {
            return Err(Error::InvalidInput("empty id in qrels".into()));
        }
        let per_query = self.judgments.entry(query_id.to_string()).or_default();
        if per_query.contains_key(doc_id) {
            return Err(Error::InvalidInput(format!(
                "duplicate judgment for ({query_id}, {doc_id})"
            )));
        }
        per_query.insert(doc_id.to_string(), grade);
        Ok(())
    }

    pub fn get(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query_id)
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> Option<u32> {
        self.judgments.get(query_id)?.get(doc_id).copied()
    }

    /// Doc ids judged at or above `threshold`, in id order.
    pub fn relevant(&self, query_id: &str, threshold: u32) -> impl Iterator<Item = &str> + '_ {
        self.judgments
            .get(query_id)
            .into_iter()
            .flat_map(move |docs| {
                docs.iter()
                    .filter(move |(_, &g)| g >= threshold)
                    .map(|(d, _)| d.as_str())
            })
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.judgments.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.judgments.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranked_list_canonical_order() {
        let list = RankedList::new(
            "q",
            vec![
                ScoredDoc::new("d9", 1.0),
                ScoredDoc::new("d3", 1.0),
                ScoredDoc::new("d1", 2.0),
            ],
        )
        .unwrap();
        let ids: Vec<_> = list.doc_ids().collect();
        assert_eq!(ids, ["d1", "d3", "d9"]);
    }

    #[test]
    fn ranked_list_rejects_duplicates_and_nan() {
        assert!(RankedList::new(
            "q",
            vec![ScoredDoc::new("a", 1.0), ScoredDoc::new("a", 2.0)]
        )
        .is_err());
        assert!(RankedList::new("q", vec![ScoredDoc::new("a", f64::NAN)]).is_err());
    }

    #[test]
    fn qrels_duplicate_rejected() {
        let mut q = Qrels::new();
        q.insert("q1", "d1", 3).unwrap();
        assert!(q.insert("q1", "d1", 1).is_err());
        assert_eq!(q.relevant("q1", 2).collect::<Vec<_>>(), ["d1"]);
        assert_eq!(q.relevant("missing", 0).count(), 0);
    }
}
