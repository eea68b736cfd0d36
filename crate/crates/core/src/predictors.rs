//! Base post-retrieval predictors: NQC and UEF (with NQC inside UEF).

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rank_sim::{rbo_lists, RboParams};
use crate::text_index::{Bm25Params, InvertedIndex};
use crate::types::{rank_order, RankedList, ScoredDoc};

/// Returned by [`collection_score`] when the query has no indexed term.
pub const COLLECTION_SCORE_FLOOR: f64 = 1e-6;

pub const DEFAULT_DIRICHLET_MU: f64 = 1000.0;

#[derive(Debug, Clone, Copy)]
pub struct PredictorInput<'a> {
    pub ranked_list: &'a RankedList,
    /// Score of the whole collection viewed as one document.
    pub collection_score: f64,
    /// Number of head scores used; all entries if the list is shorter.
    pub top_k: usize,
}

/// Population standard deviation of the top-k scores over the collection
/// score.
pub fn nqc(input: &PredictorInput<'_>) -> Result<f64> {
    if input.ranked_list.is_empty() {
        return Err(Error::InvalidInput(format!(
            "NQC on empty list `{}`",
            input.ranked_list.query_id()
        )));
    }
    if input.collection_score.is_nan() || input.collection_score <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "NQC needs a positive collection score, got {}",
            input.collection_score
        )));
    }
    let scores: Vec<f64> = input
        .ranked_list
        .scores()
        .take(input.top_k.max(1))
        .collect();
    Ok(std_dev(&scores) / input.collection_score)
}

/// Deviations are taken from the first value so equal inputs give exactly 0.
fn std_dev(scores: &[f64]) -> f64 {
    let shift = scores[0];
    let n = scores.len() as f64;
    let mean = scores.iter().map(|s| s - shift).sum::<f64>() / n;
    let var = scores
        .iter()
        .map(|s| {
            let d = s - shift - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    var.sqrt()
}

/// BM25 score of a virtual document holding the whole collection: term
/// frequencies are collection frequencies, length is the total token
/// count, N/df/avgdl are those of the real collection.
pub fn collection_score(index: &InvertedIndex, terms: &[String]) -> f64 {
    if index.is_empty() {
        return COLLECTION_SCORE_FLOOR;
    }
    let params = index.bm25_params();
    let len = index.total_tokens() as f64;
    let avgdl = index.avgdl();
    let mut score = 0.0;
    for term in terms {
        let cf = index.collection_frequency(term);
        if cf == 0 {
            continue;
        }
        let idf = Bm25Params::idf(index.len(), index.document_frequency(term));
        score += params.term_weight(idf, cf as f64, len, avgdl);
    }
    if score > 0.0 {
        score
    } else {
        COLLECTION_SCORE_FLOOR
    }
}

/// Term distribution induced by a document sample (RM1).
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceModel {
    /// term -> probability, summing to 1
    weights: BTreeMap<String, f64>,
}

impl RelevanceModel {
    pub fn weights(&self) -> &BTreeMap<String, f64> {
        &self.weights
    }

    pub fn weight(&self, term: &str) -> f64 {
        self.weights.get(term).copied().unwrap_or(0.0)
    }
}

struct DocModel<'a> {
    index: &'a InvertedIndex,
    mu: f64,
}

impl DocModel<'_> {
    fn p_collection(&self, term_id: u32) -> f64 {
        self.index.collection_frequency(self.index.term(term_id)) as f64
            / self.index.total_tokens() as f64
    }

    /// Dirichlet-smoothed p(w|D). Documents absent from the index are
    /// treated as empty.
    fn p_term(&self, term_id: u32, ordinal: Option<usize>) -> f64 {
        let (tf, len) = match ordinal {
            Some(o) => {
                let terms = self.index.item_terms(o);
                let tf = terms
                    .binary_search_by_key(&term_id, |&(t, _)| t)
                    .map_or(0, |i| terms[i].1);
                (f64::from(tf), f64::from(self.index.item_length(o)))
            }
            None => (0.0, 0.0),
        };
        (tf + self.mu * self.p_collection(term_id)) / (len + self.mu)
    }
}

fn check_mu(mu: f64) -> Result<()> {
    if mu > 0.0 && mu.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "Dirichlet mu must be positive, got {mu}"
        )))
    }
}

/// RM1 over the terms occurring in the sample: weight(w) proportional to
/// sum over D of p(w|D) * softmax(score(D)), with Dirichlet-smoothed p(w|D).
pub fn build_relevance_model(
    index: &InvertedIndex,
    sample: &RankedList,
    mu: f64,
) -> Result<RelevanceModel> {
    check_mu(mu)?;
    if sample.is_empty() {
        return Err(Error::InvalidInput(
            "relevance model needs a nonempty sample".into(),
        ));
    }
    let ordinals: Vec<Option<usize>> = sample.doc_ids().map(|d| index.ordinal(d)).collect();
    let mut vocab: Vec<u32> = ordinals
        .iter()
        .flatten()
        .flat_map(|&o| index.item_terms(o).iter().map(|&(t, _)| t))
        .collect();
    vocab.sort_unstable();
    vocab.dedup();
    if vocab.is_empty() {
        return Err(Error::InvalidInput(format!(
            "every sampled document of `{}` is empty",
            sample.query_id()
        )));
    }

    let max = sample.scores().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = sample.scores().map(|s| (s - max).exp()).collect();
    let z: f64 = exp.iter().sum();

    let lm = DocModel { index, mu };
    let mut raw = vec![0.0; vocab.len()];
    for (ordinal, e) in ordinals.iter().zip(&exp) {
        let doc_weight = e / z;
        for (slot, &t) in raw.iter_mut().zip(&vocab) {
            *slot += lm.p_term(t, *ordinal) * doc_weight;
        }
    }
    let total: f64 = raw.iter().sum();
    let weights = vocab
        .iter()
        .zip(raw)
        .map(|(&t, w)| (index.term(t).to_string(), w / total))
        .collect();
    Ok(RelevanceModel { weights })
}

/// Re-scores the top `depth` entries of `list` by the cross entropy
/// sum_w model(w) * ln p(w|D). Ties go to doc id ascending.
pub fn rm_rerank(
    model: &RelevanceModel,
    index: &InvertedIndex,
    list: &RankedList,
    depth: usize,
    mu: f64,
) -> Result<RankedList> {
    check_mu(mu)?;
    let lm = DocModel { index, mu };
    let terms: Vec<(u32, f64)> = model
        .weights
        .iter()
        .filter_map(|(t, &w)| index.term_id(t).map(|id| (id, w)))
        .collect();
    let mut entries: Vec<ScoredDoc> = list
        .doc_ids()
        .take(depth)
        .map(|doc| {
            let ordinal = index.ordinal(doc);
            let score = terms
                .iter()
                .map(|&(t, w)| w * lm.p_term(t, ordinal).ln())
                .sum();
            ScoredDoc::new(doc, score)
        })
        .collect();
    entries.sort_by(|a, b| rank_order(a.score, &a.doc_id, b.score, &b.doc_id));
    Ok(RankedList::from_canonical(
        list.query_id().to_string(),
        entries,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UefParams {
    pub samples: usize,
    pub sample_size: usize,
    /// Samples are drawn from this many top documents.
    pub pool_depth: usize,
    pub mu: f64,
    pub rbo: RboParams,
}

impl Default for UefParams {
    fn default() -> Self {
        UefParams {
            samples: 20,
            sample_size: 25,
            pool_depth: 50,
            mu: DEFAULT_DIRICHLET_MU,
            rbo: RboParams::default(),
        }
    }
}

impl UefParams {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 || self.sample_size == 0 || self.pool_depth == 0 {
            return Err(Error::InvalidParameter(
                "UEF samples, sample_size and pool_depth must be positive".into(),
            ));
        }
        check_mu(self.mu)?;
        self.rbo.validate()
    }
}

/// RNG for one query, keyed on (global seed, query id) so results do not
/// depend on scheduling.
pub fn query_rng(seed: u64, query_id: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(query_id.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Rank positions (ascending) of each UEF sample, drawn uniformly without
/// replacement from `0..pool_len`.
pub fn uef_sample_positions(
    seed: u64,
    query_id: &str,
    pool_len: usize,
    sample_size: usize,
    samples: usize,
) -> Result<Vec<Vec<usize>>> {
    if sample_size > pool_len {
        return Err(Error::InvalidInput(format!(
            "UEF sample size {sample_size} exceeds the {pool_len} available documents of `{query_id}`"
        )));
    }
    let mut rng = query_rng(seed, query_id);
    Ok((0..samples)
        .map(|_| {
            let mut idx = rand::seq::index::sample(&mut rng, pool_len, sample_size).into_vec();
            idx.sort_unstable();
            idx
        })
        .collect())
}

/// UEF: mean over sampled subsets S of
/// RBO(top-k, RM(S)-reranked top-k) * NQC(S).
pub fn uef(
    input: &PredictorInput<'_>,
    index: &InvertedIndex,
    seed: u64,
    params: &UefParams,
) -> Result<f64> {
    params.validate()?;
    let list = input.ranked_list;
    let top = list.truncated(input.top_k.max(1));
    let pool_len = params.pool_depth.min(list.len());
    let positions = uef_sample_positions(
        seed,
        list.query_id(),
        pool_len,
        params.sample_size,
        params.samples,
    )?;
    let mut total = 0.0;
    for sample_pos in positions {
        let entries = sample_pos
            .iter()
            .map(|&i| list.entries()[i].clone())
            .collect();
        let sample = RankedList::from_canonical(list.query_id().to_string(), entries);
        let spread = nqc(&PredictorInput {
            ranked_list: &sample,
            collection_score: input.collection_score,
            top_k: sample.len(),
        })?;
        if spread == 0.0 {
            continue;
        }
        let model = build_relevance_model(index, &sample, params.mu)?;
        let reranked = rm_rerank(&model, index, &top, top.len(), params.mu)?;
        total += rbo_lists(&top, &reranked, &params.rbo)? * spread;
    }
    Ok(total / params.samples as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseKind {
    Nqc,
    Uef,
}

impl std::str::FromStr for BaseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nqc" => Ok(BaseKind::Nqc),
            "uef" => Ok(BaseKind::Uef),
            other => Err(Error::InvalidParameter(format!(
                "unknown base predictor `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    pub base: BaseKind,
    pub top_k: usize,
    /// Set by the caller rather than read from configuration, so one global
    /// seed drives every stochastic step.
    #[serde(skip)]
    pub seed: u64,
    pub uef: UefParams,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            base: BaseKind::Nqc,
            top_k: 100,
            seed: 42,
            uef: UefParams::default(),
        }
    }
}

/// Base predictor bound to the document index that supplies collection
/// statistics and document language models.
#[derive(Debug, Clone, Copy)]
pub struct Predictor<'a> {
    index: &'a InvertedIndex,
    config: PredictorConfig,
}

impl<'a> Predictor<'a> {
    pub fn new(index: &'a InvertedIndex, config: PredictorConfig) -> Result<Self> {
        if config.top_k == 0 {
            return Err(Error::InvalidParameter(
                "predictor top_k must be positive".into(),
            ));
        }
        config.uef.validate()?;
        Ok(Predictor { index, config })
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.config
    }

    /// Predicts the quality of `list`, retrieved for a query with tokens
    /// `query_terms`. For UEF the sample size is capped at the number of
    /// documents in the pool, so short lists still get a value.
    pub fn predict(&self, list: &RankedList, query_terms: &[String]) -> Result<f64> {
        let input = PredictorInput {
            ranked_list: list,
            collection_score: collection_score(self.index, query_terms),
            top_k: self.config.top_k,
        };
        match self.config.base {
            BaseKind::Nqc => nqc(&input),
            BaseKind::Uef => {
                if list.is_empty() {
                    return nqc(&input);
                }
                let mut params = self.config.uef;
                let pool = params.pool_depth.min(list.len());
                params.sample_size = params.sample_size.min(pool);
                uef(&input, self.index, self.config.seed, &params)
            }
        }
    }
}
