//! Readers and writers for the on-disk artifacts.
//!
//! - queries / collection: `id<TAB>text`, one record per line
//! - run: TREC `qid Q0 docid rank score tag`, whitespace separated
//! - qrels: TREC `qid 0 docid grade`
//! - score files (predictions, per-query metric values): `qid<TAB>value`
//!
//! Every parser rejects malformed input with the offending line number.
//! Nothing is repaired silently.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{Document, Qrels, Query, RankedList, ScoredDoc};

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_string(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

/// Splits `content` into `(line_number, line)` pairs with line endings removed.
fn numbered_lines(content: &str) -> impl Iterator<Item = (usize, &str)> {
    content
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
}

fn parse_tsv_records(content: &str, origin: &Path) -> Result<Vec<(String, String)>> {
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (line_no, line) in numbered_lines(content) {
        let (id, text) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(origin, line_no, "expected `id<TAB>text`"))?;
        if id.is_empty() {
            return Err(Error::parse(origin, line_no, "empty id"));
        }
        if !seen.insert(id.to_string()) {
            return Err(Error::parse(
                origin,
                line_no,
                format!("duplicate id `{id}`"),
            ));
        }
        records.push((id.to_string(), text.to_string()));
    }
    Ok(records)
}

pub fn parse_queries_str(content: &str, origin: &Path) -> Result<Vec<Query>> {
    let records = parse_tsv_records(content, origin)?;
    let mut queries = Vec::with_capacity(records.len());
    for (i, (id, text)) in records.into_iter().enumerate() {
        if text.trim().is_empty() {
            return Err(Error::parse(
                origin,
                i + 1,
                format!("query `{id}` has empty text"),
            ));
        }
        queries.push(Query { id, text });
    }
    Ok(queries)
}

/// Reads a query TSV file.
pub fn parse_queries(path: impl AsRef<Path>) -> Result<Vec<Query>> {
    let path = path.as_ref();
    parse_queries_str(&read_to_string(path)?, path)
}

pub fn parse_collection_str(content: &str, origin: &Path) -> Result<Vec<Document>> {
    Ok(parse_tsv_records(content, origin)?
        .into_iter()
        .map(|(id, text)| Document { id, text })
        .collect())
}

/// Reads a passage collection TSV file, preserving file order.
pub fn parse_collection(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    parse_collection_str(&read_to_string(path)?, path)
}

pub fn parse_run_str(
    content: &str,
    origin: &Path,
    depth: usize,
) -> Result<BTreeMap<String, RankedList>> {
    if depth == 0 {
        return Err(Error::InvalidParameter("run depth must be positive".into()));
    }
    let mut raw: BTreeMap<String, Vec<ScoredDoc>> = BTreeMap::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    for (line_no, line) in numbered_lines(content) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(Error::parse(
                origin,
                line_no,
                format!("expected 6 fields, found {}", fields.len()),
            ));
        }
        let (qid, docid, score) = (fields[0], fields[2], fields[4]);
        let score: f64 = score
            .parse()
            .map_err(|_| Error::parse(origin, line_no, format!("non-numeric score `{score}`")))?;
        if !score.is_finite() {
            return Err(Error::parse(origin, line_no, "non-finite score"));
        }
        if !seen.insert((qid.to_string(), docid.to_string())) {
            return Err(Error::parse(
                origin,
                line_no,
                format!("document `{docid}` listed twice for query `{qid}`"),
            ));
        }
        raw.entry(qid.to_string())
            .or_default()
            .push(ScoredDoc::new(docid, score));
    }
    raw.into_iter()
        .map(|(qid, entries)| {
            let mut list = RankedList::new(qid.clone(), entries)?;
            list.truncate(depth);
            Ok((qid, list))
        })
        .collect()
}

/// Reads a TREC run. Stated ranks are ignored; each list is re-sorted by
/// (score desc, doc id asc) and cut to `depth`.
pub fn parse_run(path: impl AsRef<Path>, depth: usize) -> Result<BTreeMap<String, RankedList>> {
    let path = path.as_ref();
    parse_run_str(&read_to_string(path)?, path, depth)
}

pub fn format_run(lists: &BTreeMap<String, RankedList>, tag: &str) -> Result<String> {
    if tag.is_empty() || tag.chars().any(char::is_whitespace) {
        return Err(Error::InvalidParameter(format!("invalid run tag `{tag}`")));
    }
    let mut out = String::new();
    for (qid, list) in lists {
        for (rank, e) in list.entries().iter().enumerate() {
            writeln!(
                out,
                "{qid} Q0 {} {} {:.6} {tag}",
                e.doc_id,
                rank + 1,
                e.score
            )
            .expect("writing to a String cannot fail");
        }
    }
    Ok(out)
}

/// Writes lists in TREC format with 1-based ranks and 6-decimal scores.
pub fn write_run(
    lists: &BTreeMap<String, RankedList>,
    tag: &str,
    path: impl AsRef<Path>,
) -> Result<()> {
    write_string(path.as_ref(), &format_run(lists, tag)?)
}

pub fn parse_qrels_str(content: &str, origin: &Path) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for (line_no, line) in numbered_lines(content) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::parse(
                origin,
                line_no,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        }
        let grade: i64 = fields[3].parse().map_err(|_| {
            Error::parse(
                origin,
                line_no,
                format!("non-integer grade `{}`", fields[3]),
            )
        })?;
        if grade < 0 {
            return Err(Error::parse(
                origin,
                line_no,
                format!("negative grade {grade}"),
            ));
        }
        let grade = u32::try_from(grade)
            .map_err(|_| Error::parse(origin, line_no, format!("grade {grade} out of range")))?;
        qrels
            .insert(fields[0], fields[2], grade)
            .map_err(|e| Error::parse(origin, line_no, e.to_string()))?;
    }
    Ok(qrels)
}

/// Reads TREC qrels. Grades are stored as given, including explicit zeros.
pub fn parse_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    let path = path.as_ref();
    parse_qrels_str(&read_to_string(path)?, path)
}

pub fn parse_scores_str(content: &str, origin: &Path) -> Result<BTreeMap<String, f64>> {
    let mut scores = BTreeMap::new();
    for (line_no, line) in numbered_lines(content) {
        let (qid, value) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(origin, line_no, "expected `qid<TAB>value`"))?;
        if qid.is_empty() {
            return Err(Error::parse(origin, line_no, "empty query id"));
        }
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::parse(origin, line_no, format!("non-numeric value `{value}`")))?;
        if !value.is_finite() {
            return Err(Error::parse(origin, line_no, "non-finite value"));
        }
        if scores.insert(qid.to_string(), value).is_some() {
            return Err(Error::parse(
                origin,
                line_no,
                format!("duplicate query id `{qid}`"),
            ));
        }
    }
    Ok(scores)
}

/// Reads a `qid<TAB>value` file (predictions or ground-truth metric values).
pub fn parse_scores(path: impl AsRef<Path>) -> Result<BTreeMap<String, f64>> {
    let path = path.as_ref();
    parse_scores_str(&read_to_string(path)?, path)
}

/// Values use the shortest representation that round-trips exactly.
pub fn format_scores(scores: &BTreeMap<String, f64>) -> String {
    let mut out = String::new();
    for (qid, v) in scores {
        writeln!(out, "{qid}\t{v}").expect("writing to a String cannot fail");
    }
    out
}

pub fn write_scores(scores: &BTreeMap<String, f64>, path: impl AsRef<Path>) -> Result<()> {
    write_string(path.as_ref(), &format_scores(scores))
}
