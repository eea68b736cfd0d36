use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;

use qvqpp_core::corpus_io::{
    format_scores, parse_collection, parse_qrels, parse_queries, parse_run, parse_scores,
};
use qvqpp_core::dense_index::EmbeddingStore;
use qvqpp_core::evaluation::{
    compare_to_baseline, fisher_z_compare, format_sweep_csv, format_tune_report, kendall_tau,
    pair_up, parse_fold_assignment, sweep_grid, tune_2fold, BaselineSection, FoldSpec,
    PredictionSource,
};
use qvqpp_core::qv_qpp::{
    format_qv_report, DenseQueries, DocumentStore, ProfileTable, QueryRetrieverKind, QvPipeline,
    TrainingQueries,
};
use qvqpp_core::text_index::InvertedIndex;
use qvqpp_core::{Qrels, Query, RankedList};

use crate::config::PipelineConfig;

/// Writes to `out`, or stdout when absent.
fn emit(out: Option<&Path>, content: &str) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            fs::write(path, content).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(content.as_bytes())?;
            Ok(stdout.flush()?)
        }
    }
}

pub fn index(config: &PipelineConfig) -> Result<()> {
    let docs = parse_collection(&config.paths.collection)?;
    let queries = parse_queries(&config.paths.train_queries)?;
    let doc_index = InvertedIndex::from_documents(&docs)?;
    let query_index = InvertedIndex::from_queries(&queries)?;
    let dir = &config.paths.index_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    doc_index.save(config.paths.document_index())?;
    query_index.save(config.paths.query_index())?;
    eprintln!(
        "indexed {} documents ({} terms) and {} training queries into {}",
        doc_index.len(),
        doc_index.vocabulary_size(),
        query_index.len(),
        dir.display()
    );
    Ok(())
}

struct Resources {
    collection: DocumentStore,
    doc_index: InvertedIndex,
    training: TrainingQueries,
    train_qrels: Qrels,
    targets: BTreeMap<String, Query>,
    embeddings: Option<(EmbeddingStore, EmbeddingStore)>,
}

impl Resources {
    fn load(config: &PipelineConfig) -> Result<Self> {
        let paths = &config.paths;
        let stale = |what: &str| {
            anyhow!(
                "{what} index in {} does not match the input files; run `qvqpp index` first",
                paths.index_dir.display()
            )
        };
        let docs = parse_collection(&paths.collection)?;
        let doc_index = InvertedIndex::load(paths.document_index()).map_err(|e| {
            anyhow!(e).context("loading the document index (run `qvqpp index` first)")
        })?;
        if doc_index.len() != docs.len()
            || docs
                .iter()
                .enumerate()
                .any(|(i, d)| doc_index.item_id(i) != d.id)
        {
            return Err(stale("document"));
        }
        let query_index = InvertedIndex::load(paths.query_index())
            .map_err(|e| anyhow!(e).context("loading the query index (run `qvqpp index` first)"))?;
        let training =
            TrainingQueries::with_index(parse_queries(&paths.train_queries)?, query_index)
                .map_err(|_| stale("training query"))?;
        let mut targets = BTreeMap::new();
        for q in parse_queries(&paths.test_queries)? {
            targets.insert(q.id.clone(), q);
        }
        let embeddings = if config.qpp.query_retriever == QueryRetrieverKind::Dense {
            let (Some(train), Some(test)) = (&paths.train_embeddings, &paths.test_embeddings)
            else {
                bail!("dense query retrieval needs both embedding files");
            };
            Some((
                EmbeddingStore::load_vectors(train)?,
                EmbeddingStore::load_vectors(test)?,
            ))
        } else {
            None
        };
        Ok(Resources {
            collection: DocumentStore::new(docs)?,
            doc_index,
            training,
            train_qrels: parse_qrels(&paths.train_qrels)?,
            targets,
            embeddings,
        })
    }

    fn pipeline(&self, config: &PipelineConfig) -> Result<QvPipeline<'_>> {
        let dense = self
            .embeddings
            .as_ref()
            .map(|(training, targets)| DenseQueries { training, targets });
        Ok(QvPipeline::new(
            config.qpp,
            &self.training,
            &self.train_qrels,
            &self.doc_index,
            &self.collection,
            dense,
        )?)
    }

    fn target(&self, qid: &str) -> Result<&Query> {
        self.targets.get(qid).ok_or_else(|| {
            anyhow!("query `{qid}` is in the target run but not in the test queries")
        })
    }
}

pub fn qv(config: &PipelineConfig, out: Option<&Path>) -> Result<()> {
    let res = Resources::load(config)?;
    let pipeline = res.pipeline(config)?;
    let targets: Vec<&Query> = res.targets.values().collect();
    let sets = targets
        .par_iter()
        .map(|q| pipeline.qv_set(q))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    for set in sets.iter().filter(|s| s.is_empty()) {
        eprintln!("query `{}`: no variants", set.target_query_id);
    }
    emit(out, &format_qv_report(&sets))
}

fn load_runs(config: &PipelineConfig) -> Result<BTreeMap<String, RankedList>> {
    let runs = parse_run(&config.paths.target_run, config.run_depth)?;
    if runs.is_empty() {
        bail!("target run {} is empty", config.paths.target_run.display());
    }
    Ok(runs)
}

pub fn predict(config: &PipelineConfig, out: Option<&Path>) -> Result<()> {
    let res = Resources::load(config)?;
    let runs = load_runs(config)?;
    let pipeline = res.pipeline(config)?;
    let scores = runs
        .par_iter()
        .map(|(qid, run)| Ok((qid.clone(), pipeline.predict(res.target(qid)?, run)?)))
        .collect::<Result<BTreeMap<String, f64>>>()?;
    emit(out, &format_scores(&scores))
}

fn actual_values(
    config: &PipelineConfig,
    runs: &BTreeMap<String, RankedList>,
) -> Result<BTreeMap<String, f64>> {
    let qrels = parse_qrels(&config.paths.test_qrels)?;
    Ok(config.metric.evaluate_all(runs, &qrels))
}

pub fn evaluate(
    config: &PipelineConfig,
    predictions: &Path,
    baseline: Option<&Path>,
    actual_out: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let predicted = parse_scores(predictions)?;
    let baseline_scores = baseline.map(parse_scores).transpose()?;
    let runs = load_runs(config)?;
    let actual = actual_values(config, &runs)?;
    let pairs = pair_up(&predicted, &actual, None)?;
    let tau = kendall_tau(&pairs)?;

    let mut report = format!(
        "metric = {}\nqueries = {}\ntau = {tau:.6}\n",
        config.metric,
        pairs.len()
    );
    if let (Some(path), Some(scores)) = (baseline, &baseline_scores) {
        let ids = predicted.keys().cloned().collect();
        let base_tau = kendall_tau(&pair_up(scores, &actual, Some(&ids))?)?;
        report += &format!(
            "baseline = {}\nbaseline_tau = {base_tau:.6}\nsignificance_test = fisher z, independent-samples r-to-z approximation applied to tau\nconfidence = {}\n",
            path.display(),
            config.confidence
        );
        match fisher_z_compare(tau, base_tau, pairs.len(), config.confidence) {
            Ok(z) => report += &format!("z = {:.6}\nsignificant = {}\n", z.z, z.significant),
            Err(e) => report += &format!("significance_note = {e}\n"),
        }
    }
    if let Some(path) = actual_out {
        emit(Some(path), &format_scores(&actual))?;
    }
    emit(out, &report)
}

/// Per-query profiles over the grid's k values for every query in the run.
fn profiles(
    config: &PipelineConfig,
    res: &Resources,
    runs: &BTreeMap<String, RankedList>,
) -> Result<ProfileTable> {
    let pipeline = res.pipeline(config)?;
    let mut ks = config.grid.ks.clone();
    ks.sort_unstable();
    ks.dedup();
    let table = runs
        .par_iter()
        .map(|(qid, run)| Ok((qid.clone(), pipeline.profile(res.target(qid)?, run, &ks)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(ProfileTable(table))
}

pub fn tune(config: &PipelineConfig, baseline: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let folds_path = config
        .paths
        .folds
        .as_ref()
        .ok_or_else(|| anyhow!("tuning needs `paths.folds`"))?;
    let groups = parse_fold_assignment(
        &fs::read_to_string(folds_path)
            .with_context(|| format!("reading {}", folds_path.display()))?,
        folds_path,
    )?;
    let folds = FoldSpec::two_fold(&groups)?;
    let baseline_file = baseline.map(parse_scores).transpose()?;

    let res = Resources::load(config)?;
    let runs = load_runs(config)?;
    let actual = actual_values(config, &runs)?;
    let table = profiles(config, &res, &runs)?;
    let report = tune_2fold(&folds, &config.grid, &table, &actual)?;

    let (name, baseline_scores) = match (baseline, baseline_file) {
        (Some(path), Some(scores)) => (path.display().to_string(), scores),
        _ => (
            format!("{:?} without variants", config.qpp.predictor.base).to_lowercase(),
            table.predictions(0.0, 1)?,
        ),
    };
    let comparisons = compare_to_baseline(
        &report,
        &folds,
        &baseline_scores,
        &actual,
        config.confidence,
    )?;
    let section = BaselineSection {
        name: &name,
        confidence: config.confidence,
        comparisons: &comparisons,
    };
    emit(
        out,
        &format_tune_report(&report, &config.metric, Some(&section)),
    )
}

pub fn sweep(config: &PipelineConfig, out: Option<&Path>) -> Result<()> {
    let res = Resources::load(config)?;
    let runs = load_runs(config)?;
    let actual = actual_values(config, &runs)?;
    let table = profiles(config, &res, &runs)?;
    let cells = sweep_grid(&config.grid, &table, &actual, None)?;
    emit(out, &format_sweep_csv(&cells))
}
