//! Query-variant retrieval and the smoothed estimator.
//!
//! Per target query:
//!
//! 1. 1-hop: the top-`n` training queries for the target, by BM25 over the
//!    training query index or by cosine over precomputed embeddings.
//! 2. 2-hop: for each 1-hop variant, each of its relevant training documents
//!    becomes a pseudo-query that retrieves another top-`n` training
//!    queries (always BM25). The union with the 1-hop set is deduplicated,
//!    keeping the lower hop.
//! 3. Every candidate is run through the internal BM25 document retriever
//!    and scored by RBO against the target's internal run; the top-`k`
//!    survive.
//! 4. `(1-λ)·φ(target run) + λ·Σ (rbo/Σrbo)·φ(variant run)`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::dense_index::EmbeddingStore;
use crate::error::{Error, Result};
use crate::evaluation::PredictionSource;
use crate::predictors::{Predictor, PredictorConfig};
use crate::rank_sim::{rbo_lists, RboParams};
use crate::text_index::{make_pseudo_query, tokenize, InvertedIndex};
use crate::types::{Document, Qrels, Query, RankedList};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryRetrieverKind {
    Bm25,
    Dense,
}

/// Which 1-hop variants have their relevant documents expanded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TwoHopSeeds {
    /// Every 1-hop candidate in the size-`n` pool.
    Pool,
    /// Only the `k` 1-hop candidates that survive RBO re-ranking.
    TopK,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QppConfig {
    pub lambda: f64,
    /// Number of variants kept after re-ranking.
    pub k: usize,
    /// Candidate pool per retrieval (1-hop, and each 2-hop pseudo-query).
    pub n: usize,
    pub query_retriever: QueryRetrieverKind,
    pub use_2hop: bool,
    pub two_hop_seeds: TwoHopSeeds,
    pub pseudo_query_m: usize,
    pub rbo: RboParams,
    /// Depth of internal BM25 document runs.
    pub internal_depth: usize,
    /// Minimum training-qrels grade for a document to count as relevant.
    pub relevant_grade: u32,
    pub predictor: PredictorConfig,
}

impl Default for QppConfig {
    fn default() -> Self {
        QppConfig {
            lambda: 0.5,
            k: 5,
            n: 100,
            query_retriever: QueryRetrieverKind::Bm25,
            use_2hop: true,
            two_hop_seeds: TwoHopSeeds::Pool,
            pseudo_query_m: 20,
            rbo: RboParams::default(),
            internal_depth: 100,
            relevant_grade: 1,
            predictor: PredictorConfig::default(),
        }
    }
}

impl QppConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be in [0,1], got {}",
                self.lambda
            )));
        }
        if self.k == 0 || self.n <= self.k {
            return Err(Error::InvalidParameter(format!(
                "need n > k >= 1, got n={} k={}",
                self.n, self.k
            )));
        }
        if self.pseudo_query_m == 0 || self.internal_depth == 0 {
            return Err(Error::InvalidParameter(
                "pseudo_query_m and internal_depth must be positive".into(),
            ));
        }
        self.rbo.validate()?;
        self.predictor.uef.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Hop {
    One = 1,
    Two = 2,
}

impl Hop {
    pub fn number(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QvCandidate {
    pub query: Query,
    pub hop: Hop,
    /// Score from the query retriever that surfaced this variant.
    pub retrieval_score: f64,
    pub rbo: Option<f64>,
    pub internal_run: Option<Arc<RankedList>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QvStage {
    OneHop,
    Merged,
    Reranked,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QvSet {
    pub target_query_id: String,
    pub candidates: Vec<QvCandidate>,
    pub stage: QvStage,
}

impl QvSet {
    pub fn ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.candidates.iter().map(|c| c.query.id.as_str())
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Training queries with their BM25 index and a lookup for queries whose
/// token sequence matches a target's.
#[derive(Debug, Clone)]
pub struct TrainingQueries {
    queries: Vec<Query>,
    index: InvertedIndex,
    by_tokens: HashMap<Vec<String>, Vec<usize>>,
}

impl TrainingQueries {
    pub fn new(queries: Vec<Query>) -> Result<Self> {
        let index = InvertedIndex::from_queries(&queries)?;
        Self::with_index(queries, index)
    }

    /// Pairs queries with an index built from them (e.g. loaded from disk).
    pub fn with_index(queries: Vec<Query>, index: InvertedIndex) -> Result<Self> {
        if index.len() != queries.len()
            || queries
                .iter()
                .enumerate()
                .any(|(i, q)| index.item_id(i) != q.id)
        {
            return Err(Error::InvalidInput(
                "query index does not match the training query file".into(),
            ));
        }
        let mut by_tokens: HashMap<Vec<String>, Vec<usize>> = HashMap::new();
        for (i, q) in queries.iter().enumerate() {
            by_tokens.entry(tokenize(&q.text)).or_default().push(i);
        }
        Ok(TrainingQueries {
            queries,
            index,
            by_tokens,
        })
    }

    pub fn index(&self) -> &InvertedIndex {
        &self.index
    }

    pub fn queries(&self) -> &[Query] {
        &self.queries
    }

    pub fn get(&self, id: &str) -> Option<&Query> {
        self.index.ordinal(id).map(|o| &self.queries[o])
    }

    /// Ordinals that must never be returned for `target`: the same id, or
    /// identical text after tokenization.
    fn excluded_for(&self, target: &Query, target_tokens: &[String]) -> HashSet<usize> {
        let mut out: HashSet<usize> = self
            .by_tokens
            .get(target_tokens)
            .into_iter()
            .flatten()
            .copied()
            .collect();
        out.extend(self.index.ordinal(&target.id));
        out
    }

    fn retrieve(
        &self,
        target: &Query,
        target_tokens: &[String],
        terms: &[String],
        n: usize,
    ) -> RankedList {
        let excluded = self.excluded_for(target, target_tokens);
        self.index
            .bm25_retrieve_filtered(&target.id, terms, n, |o| !excluded.contains(&o))
    }
}

/// Passage lookup by id.
#[derive(Debug, Clone, Default)]
pub struct DocumentStore {
    docs: HashMap<String, Document>,
}

impl DocumentStore {
    pub fn new(docs: Vec<Document>) -> Result<Self> {
        let mut map = HashMap::with_capacity(docs.len());
        for d in docs {
            if map.contains_key(&d.id) {
                return Err(Error::DuplicateId(d.id));
            }
            map.insert(d.id.clone(), d);
        }
        Ok(DocumentStore { docs: map })
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.docs.get(id)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

/// Embeddings for dense 1-hop retrieval.
#[derive(Debug, Clone, Copy)]
pub struct DenseQueries<'a> {
    pub training: &'a EmbeddingStore,
    pub targets: &'a EmbeddingStore,
}

/// 1-hop candidates: top-`n` training queries for `target`.
pub fn retrieve_1hop(
    target: &Query,
    config: &QppConfig,
    training: &TrainingQueries,
    dense: Option<DenseQueries<'_>>,
) -> Result<QvSet> {
    let target_tokens = tokenize(&target.text);
    let hits = match config.query_retriever {
        QueryRetrieverKind::Bm25 => {
            training.retrieve(target, &target_tokens, &target_tokens, config.n)
        }
        QueryRetrieverKind::Dense => {
            let dense = dense.ok_or_else(|| {
                Error::InvalidInput("dense query retrieval needs embedding stores".into())
            })?;
            let vec = dense.targets.get(&target.id).ok_or_else(|| {
                Error::InvalidInput(format!("no embedding for target query `{}`", target.id))
            })?;
            let exclude: HashSet<String> = training
                .excluded_for(target, &target_tokens)
                .into_iter()
                .map(|o| training.queries[o].id.clone())
                .collect();
            dense
                .training
                .knn_cosine(&target.id, vec, config.n, &exclude)?
        }
    };
    let candidates = hits
        .entries()
        .iter()
        .filter_map(|e| {
            training.get(&e.doc_id).map(|q| QvCandidate {
                query: q.clone(),
                hop: Hop::One,
                retrieval_score: e.score,
                rbo: None,
                internal_run: None,
            })
        })
        .collect();
    Ok(QvSet {
        target_query_id: target.id.clone(),
        candidates,
        stage: QvStage::OneHop,
    })
}

/// Merges 2-hop variants reached through every candidate of `one_hop`.
pub fn expand_2hop(
    one_hop: QvSet,
    target: &Query,
    qrels: &Qrels,
    config: &QppConfig,
    training: &TrainingQueries,
    collection: &DocumentStore,
) -> Result<QvSet> {
    let seeds: Vec<String> = one_hop.ids().map(str::to_string).collect();
    expand_2hop_from(one_hop, &seeds, target, qrels, config, training, collection)
}

/// Merges 2-hop variants reached through the relevant documents of the
/// `seeds` (training query ids), in seed order.
pub fn expand_2hop_from(
    one_hop: QvSet,
    seeds: &[String],
    target: &Query,
    qrels: &Qrels,
    config: &QppConfig,
    training: &TrainingQueries,
    collection: &DocumentStore,
) -> Result<QvSet> {
    if one_hop.stage != QvStage::OneHop {
        return Err(Error::InvalidInput(
            "2-hop expansion needs a 1-hop set".into(),
        ));
    }
    if one_hop.target_query_id != target.id {
        return Err(Error::InvalidInput(
            "1-hop set belongs to another target".into(),
        ));
    }
    let target_tokens = tokenize(&target.text);
    let mut merged = one_hop;
    let mut present: HashSet<String> = merged.ids().map(str::to_string).collect();
    for seed in seeds {
        for doc_id in qrels.relevant(seed, config.relevant_grade) {
            let Some(doc) = collection.get(doc_id) else {
                log::warn!("relevant document `{doc_id}` of training query `{seed}` is not in the collection");
                continue;
            };
            let pseudo = make_pseudo_query(doc, config.pseudo_query_m);
            if pseudo.is_empty() {
                continue;
            }
            let hits = training.retrieve(target, &target_tokens, &pseudo.terms, config.n);
            for e in hits.entries() {
                if present.contains(&e.doc_id) {
                    continue;
                }
                if let Some(q) = training.get(&e.doc_id) {
                    present.insert(e.doc_id.clone());
                    merged.candidates.push(QvCandidate {
                        query: q.clone(),
                        hop: Hop::Two,
                        retrieval_score: e.score,
                        rbo: None,
                        internal_run: None,
                    });
                }
            }
        }
    }
    merged.stage = QvStage::Merged;
    Ok(merged)
}

/// Cache of internal runs keyed by training query id. Runs depend only on
/// the query text and the document index, so they are shared across targets.
#[derive(Debug, Default)]
pub struct InternalRunCache {
    runs: RwLock<HashMap<String, Arc<RankedList>>>,
}

impl InternalRunCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn get_or_compute(
        &self,
        query: &Query,
        doc_index: &InvertedIndex,
        depth: usize,
    ) -> Arc<RankedList> {
        if let Some(run) = self.runs.read().expect("cache lock").get(&query.id) {
            return Arc::clone(run);
        }
        let run = Arc::new(doc_index.bm25_retrieve(&query.id, &tokenize(&query.text), depth));
        self.runs
            .write()
            .expect("cache lock")
            .entry(query.id.clone())
            .or_insert(run)
            .clone()
    }
}

fn candidate_order(a: &QvCandidate, b: &QvCandidate) -> Ordering {
    let (ra, rb) = (a.rbo.unwrap_or(0.0), b.rbo.unwrap_or(0.0));
    rb.total_cmp(&ra)
        .then(a.hop.cmp(&b.hop))
        .then_with(|| a.query.id.cmp(&b.query.id))
}

/// Scores every candidate by RBO against `target_internal_run` and sorts
/// them (rbo desc, hop asc, id asc) without truncating.
pub fn score_candidates(
    mut set: QvSet,
    target_internal_run: &RankedList,
    doc_index: &InvertedIndex,
    config: &QppConfig,
    cache: Option<&InternalRunCache>,
) -> Result<QvSet> {
    if set.stage == QvStage::Reranked {
        return Err(Error::InvalidInput("QV set is already re-ranked".into()));
    }
    for c in &mut set.candidates {
        let run = match cache {
            Some(cache) => cache.get_or_compute(&c.query, doc_index, config.internal_depth),
            None => Arc::new(doc_index.bm25_retrieve(
                &c.query.id,
                &tokenize(&c.query.text),
                config.internal_depth,
            )),
        };
        c.rbo = Some(rbo_lists(target_internal_run, &run, &config.rbo)?);
        c.internal_run = Some(run);
    }
    set.candidates.sort_by(candidate_order);
    set.stage = QvStage::Reranked;
    Ok(set)
}

/// RBO re-ranking followed by the top-`k` cut.
pub fn rerank_by_rbo(
    set: QvSet,
    target_internal_run: &RankedList,
    doc_index: &InvertedIndex,
    config: &QppConfig,
) -> Result<QvSet> {
    let mut set = score_candidates(set, target_internal_run, doc_index, config, None)?;
    set.candidates.truncate(config.k);
    Ok(set)
}

/// Normalized variant weights rbo/Σrbo; empty when Σrbo is 0.
pub fn qv_weights(rbos: &[f64]) -> Vec<f64> {
    let total: f64 = rbos.iter().sum();
    if total > 0.0 {
        rbos.iter().map(|r| r / total).collect()
    } else {
        Vec::new()
    }
}

/// The smoothed estimate from a base value and `(rbo, φ)` per variant.
/// Falls back to `base` when there are no variants or all rbo are 0.
pub fn smooth(base: f64, variants: &[(f64, f64)], lambda: f64) -> f64 {
    let total: f64 = variants.iter().map(|v| v.0).sum();
    if variants.is_empty() || total <= 0.0 {
        return base;
    }
    let qv: f64 = variants.iter().map(|&(w, phi)| w / total * phi).sum();
    (1.0 - lambda) * base + lambda * qv
}

/// φ for each re-ranked variant; variants with rbo 0 carry no weight and are
/// not scored.
fn variant_values(qv_set: &QvSet, predictor: &Predictor<'_>) -> Result<Vec<(f64, f64)>> {
    qv_set
        .candidates
        .iter()
        .map(|c| {
            let rbo = c.rbo.ok_or_else(|| {
                Error::InvalidInput(format!("variant `{}` has no RBO score", c.query.id))
            })?;
            if rbo <= 0.0 {
                return Ok((0.0, 0.0));
            }
            let run = c.internal_run.as_ref().ok_or_else(|| {
                Error::InvalidInput(format!("variant `{}` has no internal run", c.query.id))
            })?;
            Ok((rbo, predictor.predict(run, &tokenize(&c.query.text))?))
        })
        .collect()
}

/// Smoothed prediction for a target run given its re-ranked variants.
pub fn smooth_qpp(
    target: &Query,
    target_run: &RankedList,
    qv_set: &QvSet,
    lambda: f64,
    predictor: &Predictor<'_>,
) -> Result<f64> {
    if qv_set.stage != QvStage::Reranked {
        return Err(Error::InvalidInput(
            "smoothing needs a re-ranked QV set".into(),
        ));
    }
    let base = predictor.predict(target_run, &tokenize(&target.text))?;
    if lambda == 0.0 {
        return Ok(base);
    }
    Ok(smooth(base, &variant_values(qv_set, predictor)?, lambda))
}

/// Everything needed to evaluate the estimator for one target query over
/// a grid of `(λ, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryProfile {
    pub query_id: String,
    pub base: f64,
    variants: VariantTable,
}

#[derive(Debug, Clone, PartialEq)]
enum VariantTable {
    /// `(rbo, φ)` in re-ranked order; the top-k set is a prefix.
    Shared(Vec<(f64, f64)>),
    /// The candidate set itself depends on k.
    PerK(BTreeMap<usize, Vec<(f64, f64)>>),
}

impl QueryProfile {
    pub fn estimate(&self, lambda: f64, k: usize) -> Result<f64> {
        let variants = match &self.variants {
            VariantTable::Shared(v) => &v[..k.min(v.len())],
            VariantTable::PerK(m) => m.get(&k).map(Vec::as_slice).ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "profile of `{}` has no entry for k={k}",
                    self.query_id
                ))
            })?,
        };
        Ok(smooth(self.base, variants, lambda))
    }
}

/// Profiles keyed by query id; predictions for a `(λ, k)` cell.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProfileTable(pub BTreeMap<String, QueryProfile>);

impl PredictionSource for ProfileTable {
    fn predictions(&self, lambda: f64, k: usize) -> Result<BTreeMap<String, f64>> {
        self.0
            .iter()
            .map(|(qid, p)| Ok((qid.clone(), p.estimate(lambda, k)?)))
            .collect()
    }
}

/// The full per-target pipeline over shared, read-only resources.
pub struct QvPipeline<'a> {
    config: QppConfig,
    training: &'a TrainingQueries,
    training_qrels: &'a Qrels,
    doc_index: &'a InvertedIndex,
    collection: &'a DocumentStore,
    dense: Option<DenseQueries<'a>>,
    predictor: Predictor<'a>,
    cache: InternalRunCache,
}

impl<'a> QvPipeline<'a> {
    pub fn new(
        config: QppConfig,
        training: &'a TrainingQueries,
        training_qrels: &'a Qrels,
        doc_index: &'a InvertedIndex,
        collection: &'a DocumentStore,
        dense: Option<DenseQueries<'a>>,
    ) -> Result<Self> {
        config.validate()?;
        if config.query_retriever == QueryRetrieverKind::Dense && dense.is_none() {
            return Err(Error::InvalidInput(
                "dense query retrieval needs training and target embeddings".into(),
            ));
        }
        Ok(QvPipeline {
            config,
            training,
            training_qrels,
            doc_index,
            collection,
            dense,
            predictor: Predictor::new(doc_index, config.predictor)?,
            cache: InternalRunCache::new(),
        })
    }

    pub fn config(&self) -> &QppConfig {
        &self.config
    }

    pub fn predictor(&self) -> &Predictor<'a> {
        &self.predictor
    }

    /// BM25 run of the target on the document index.
    pub fn target_internal_run(&self, target: &Query) -> RankedList {
        self.doc_index.bm25_retrieve(
            &target.id,
            &tokenize(&target.text),
            self.config.internal_depth,
        )
    }

    pub fn one_hop(&self, target: &Query) -> Result<QvSet> {
        retrieve_1hop(target, &self.config, self.training, self.dense)
    }

    /// All candidates for `target`, scored and sorted but not truncated,
    /// with 2-hop seeds chosen for a final set of size `k`.
    pub fn ranked_candidates(&self, target: &Query, k: usize) -> Result<QvSet> {
        let internal = self.target_internal_run(target);
        let one_hop = self.one_hop(target)?;
        let merged = if !self.config.use_2hop {
            one_hop
        } else {
            let seeds: Vec<String> = match self.config.two_hop_seeds {
                TwoHopSeeds::Pool => one_hop.ids().map(str::to_string).collect(),
                TwoHopSeeds::TopK => {
                    let scored = score_candidates(
                        one_hop.clone(),
                        &internal,
                        self.doc_index,
                        &self.config,
                        Some(&self.cache),
                    )?;
                    scored.ids().take(k).map(str::to_string).collect()
                }
            };
            expand_2hop_from(
                one_hop,
                &seeds,
                target,
                self.training_qrels,
                &self.config,
                self.training,
                self.collection,
            )?
        };
        score_candidates(
            merged,
            &internal,
            self.doc_index,
            &self.config,
            Some(&self.cache),
        )
    }

    /// The final top-`k` variants for `target`.
    pub fn qv_set(&self, target: &Query) -> Result<QvSet> {
        let mut set = self.ranked_candidates(target, self.config.k)?;
        set.candidates.truncate(self.config.k);
        Ok(set)
    }

    /// Smoothed prediction for a target-retriever run.
    pub fn predict(&self, target: &Query, target_run: &RankedList) -> Result<f64> {
        if self.config.lambda == 0.0 {
            return self.predictor.predict(target_run, &tokenize(&target.text));
        }
        let qvs = self.qv_set(target)?;
        smooth_qpp(
            target,
            target_run,
            &qvs,
            self.config.lambda,
            &self.predictor,
        )
    }

    /// Base value and variant values for every `k` in `ks`.
    pub fn profile(
        &self,
        target: &Query,
        target_run: &RankedList,
        ks: &[usize],
    ) -> Result<QueryProfile> {
        let base = self
            .predictor
            .predict(target_run, &tokenize(&target.text))?;
        let max_k = ks.iter().copied().max().unwrap_or(0);
        let variants = if !self.config.use_2hop || self.config.two_hop_seeds == TwoHopSeeds::Pool {
            let mut set = self.ranked_candidates(target, max_k)?;
            set.candidates.truncate(max_k);
            VariantTable::Shared(variant_values(&set, &self.predictor)?)
        } else {
            let mut per_k = BTreeMap::new();
            for &k in ks {
                let mut set = self.ranked_candidates(target, k)?;
                set.candidates.truncate(k);
                per_k.insert(k, variant_values(&set, &self.predictor)?);
            }
            VariantTable::PerK(per_k)
        };
        Ok(QueryProfile {
            query_id: target.id.clone(),
            base,
            variants,
        })
    }
}

fn clean_field(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c == '\t' || c == '\n' || c == '\r' {
                ' '
            } else {
                c
            }
        })
        .collect()
}

/// Rows `qid<TAB>variant_qid<TAB>hop<TAB>rbo<TAB>variant_text`, sets in the
/// given order, variants in re-ranked order.
pub fn format_qv_report<'s>(sets: impl IntoIterator<Item = &'s QvSet>) -> String {
    let mut out = String::new();
    for set in sets {
        for c in &set.candidates {
            writeln!(
                out,
                "{}\t{}\t{}\t{:.6}\t{}",
                set.target_query_id,
                c.query.id,
                c.hop.number(),
                c.rbo.unwrap_or(0.0),
                clean_field(&c.query.text)
            )
            .expect("writing to a String cannot fail");
        }
    }
    out
}
