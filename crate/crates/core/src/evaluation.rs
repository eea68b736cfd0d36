//! Ground-truth metrics, rank correlation and the tuning protocol.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::types::{Qrels, RankedList};

/// Mean precision at the ranks of relevant documents within the top `k`.
/// The denominator is the number of documents judged `>= rel_threshold`,
/// capped at `k`; unjudged documents are non-relevant.
pub fn ap_at_k(run: &RankedList, qrels: &Qrels, k: usize, rel_threshold: u32) -> f64 {
    if qrels.get(run.query_id()).is_none() {
        log::warn!("no judgments for query `{}`; AP is 0", run.query_id());
        return 0.0;
    }
    let relevant: HashSet<&str> = qrels.relevant(run.query_id(), rel_threshold).collect();
    let denominator = relevant.len().min(k);
    if denominator == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, doc) in run.doc_ids().take(k).enumerate() {
        if relevant.contains(doc) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / denominator as f64
}

fn gain(grade: u32) -> f64 {
    2f64.powi(grade.min(1000) as i32) - 1.0
}

/// nDCG with gain `2^g - 1` and discount `log2(rank + 1)`.
pub fn ndcg_at_k(run: &RankedList, qrels: &Qrels, k: usize) -> f64 {
    let Some(judged) = qrels.get(run.query_id()) else {
        log::warn!("no judgments for query `{}`; nDCG is 0", run.query_id());
        return 0.0;
    };
    let dcg: f64 = run
        .doc_ids()
        .take(k)
        .enumerate()
        .map(|(i, d)| gain(judged.get(d).copied().unwrap_or(0)) / ((i + 2) as f64).log2())
        .sum();
    let mut ideal: Vec<u32> = judged.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain(g) / ((i + 2) as f64).log2())
        .sum();
    if idcg > 0.0 {
        dcg / idcg
    } else {
        0.0
    }
}

/// Target IR metric whose per-query values the predictions should rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetMetric {
    Ap { k: usize, threshold: u32 },
    Ndcg { k: usize },
}

impl TargetMetric {
    /// AP binarizes graded judgments at 2.
    pub const AP_THRESHOLD: u32 = 2;

    pub fn evaluate(&self, run: &RankedList, qrels: &Qrels) -> f64 {
        match *self {
            TargetMetric::Ap { k, threshold } => ap_at_k(run, qrels, k, threshold),
            TargetMetric::Ndcg { k } => ndcg_at_k(run, qrels, k),
        }
    }

    /// Metric value for every run.
    pub fn evaluate_all(
        &self,
        runs: &BTreeMap<String, RankedList>,
        qrels: &Qrels,
    ) -> BTreeMap<String, f64> {
        runs.iter()
            .map(|(qid, run)| (qid.clone(), self.evaluate(run, qrels)))
            .collect()
    }
}

impl FromStr for TargetMetric {
    type Err = Error;

    /// `ap@<k>` or `ndcg@<k>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("unknown target metric `{s}`"));
        let (name, k) = s.split_once('@').ok_or_else(bad)?;
        let k: usize = k.parse().map_err(|_| bad())?;
        if k == 0 {
            return Err(bad());
        }
        match name {
            "ap" => Ok(TargetMetric::Ap {
                k,
                threshold: Self::AP_THRESHOLD,
            }),
            "ndcg" => Ok(TargetMetric::Ndcg { k }),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for TargetMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetMetric::Ap { k, .. } => write!(f, "ap@{k}"),
            TargetMetric::Ndcg { k } => write!(f, "ndcg@{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    pub query_id: String,
    pub predicted: f64,
    pub actual: f64,
}

/// Joins predictions with ground truth over `ids` (all predicted ids when
/// `None`). Every id must be present on both sides.
pub fn pair_up(
    predicted: &BTreeMap<String, f64>,
    actual: &BTreeMap<String, f64>,
    ids: Option<&BTreeSet<String>>,
) -> Result<Vec<EvalPair>> {
    let ids: Box<dyn Iterator<Item = &String>> = match ids {
        Some(ids) => Box::new(ids.iter()),
        None => Box::new(predicted.keys()),
    };
    ids.map(|qid| {
        let p = predicted
            .get(qid)
            .ok_or_else(|| Error::InvalidInput(format!("no prediction for query `{qid}`")))?;
        let a = actual
            .get(qid)
            .ok_or_else(|| Error::InvalidInput(format!("no ground truth for query `{qid}`")))?;
        Ok(EvalPair {
            query_id: qid.clone(),
            predicted: *p,
            actual: *a,
        })
    })
    .collect()
}

fn tie_pairs(sorted: &[f64]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Sorts `v` ascending and returns the number of strictly inverted pairs.
fn merge_sort_inversions(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps =
        merge_sort_inversions(&mut v[..mid], buf) + merge_sort_inversions(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            swaps += (mid - i) as u64;
            buf.push(v[j]);
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Kendall's tau-b, computed in O(n log n) (Knight's algorithm).
pub fn kendall_tau(pairs: &[EvalPair]) -> Result<f64> {
    if pairs.len() < 2 {
        return Err(Error::InvalidInput(
            "Kendall's tau needs at least 2 pairs".into(),
        ));
    }
    // `+ 0.0` folds -0.0 into 0.0 so both compare as ties
    let mut xy: Vec<(f64, f64)> = pairs
        .iter()
        .map(|p| (p.predicted + 0.0, p.actual + 0.0))
        .collect();
    if xy.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::InvalidInput(
            "non-finite value in Kendall's tau input".into(),
        ));
    }
    xy.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let n = xy.len() as u64;
    let n0 = n * (n - 1) / 2;

    let xs: Vec<f64> = xy.iter().map(|p| p.0).collect();
    let n1 = tie_pairs(&xs);
    let mut n3 = 0u64;
    let mut run = 1u64;
    for w in xy.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            n3 += run * (run - 1) / 2;
            run = 1;
        }
    }
    n3 += run * (run - 1) / 2;

    let mut ys: Vec<f64> = xy.iter().map(|p| p.1).collect();
    let mut buf = Vec::with_capacity(ys.len());
    let swaps = merge_sort_inversions(&mut ys, &mut buf);
    let n2 = tie_pairs(&ys);

    let numerator = n0 as i128 - n1 as i128 - n2 as i128 + n3 as i128 - 2 * swaps as i128;
    let denominator = u128::from(n0 - n1) * u128::from(n0 - n2);
    if denominator == 0 {
        return Err(Error::UndefinedCorrelation(
            "all predictions or all actual values are tied".into(),
        ));
    }
    Ok(numerator as f64 / (denominator as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FisherZ {
    pub z: f64,
    /// Two-sided standard-normal critical value at the confidence level.
    pub critical: f64,
    pub significant: bool,
}

/// Compares two correlations with the independent-samples r-to-z
/// approximation: `z = (atanh a - atanh b) / sqrt(2/(n-3))`.
pub fn fisher_z_compare(tau_a: f64, tau_b: f64, n: usize, confidence: f64) -> Result<FisherZ> {
    if n < 4 {
        return Err(Error::InvalidInput(format!(
            "Fisher's z needs n >= 4, got {n}"
        )));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "confidence must be in (0,1), got {confidence}"
        )));
    }
    for t in [tau_a, tau_b] {
        if t.is_nan() || t.abs() >= 1.0 {
            return Err(Error::InvalidInput(format!(
                "Fisher transform diverges for correlation {t}"
            )));
        }
    }
    let z = (tau_a.atanh() - tau_b.atanh()) / (2.0 / (n as f64 - 3.0)).sqrt();
    let critical = Normal::standard().inverse_cdf(1.0 - (1.0 - confidence) / 2.0);
    Ok(FisherZ {
        z,
        critical,
        significant: z.abs() > critical,
    })
}

/// Grid of smoothing weights and variant counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub lambdas: Vec<f64>,
    pub ks: Vec<usize>,
}

impl Grid {
    pub fn new(lambdas: Vec<f64>, ks: Vec<usize>) -> Result<Self> {
        if lambdas.is_empty() || ks.is_empty() {
            return Err(Error::InvalidParameter("empty parameter grid".into()));
        }
        if lambdas.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(Error::InvalidParameter(
                "grid lambdas must lie in [0,1]".into(),
            ));
        }
        if ks.contains(&0) {
            return Err(Error::InvalidParameter(
                "grid k values must be positive".into(),
            ));
        }
        Ok(Grid { lambdas, ks })
    }

    /// λ ∈ {0, 0.1, ..., 1.0}, k ∈ {1, ..., 10}.
    pub fn standard() -> Self {
        Grid {
            lambdas: (0..=10).map(|i| f64::from(i) / 10.0).collect(),
            ks: (1..=10).collect(),
        }
    }

    /// Cells ordered by (λ, k).
    pub fn cells(&self) -> Vec<(f64, usize)> {
        let mut lambdas = self.lambdas.clone();
        lambdas.sort_by(f64::total_cmp);
        lambdas.dedup();
        let mut ks = self.ks.clone();
        ks.sort_unstable();
        ks.dedup();
        lambdas
            .iter()
            .flat_map(|&l| ks.iter().map(move |&k| (l, k)))
            .collect()
    }
}

/// Per-query predictions for one `(λ, k)` grid cell.
pub trait PredictionSource: Sync {
    fn predictions(&self, lambda: f64, k: usize) -> Result<BTreeMap<String, f64>>;
}

impl<F> PredictionSource for F
where
    F: Fn(f64, usize) -> Result<BTreeMap<String, f64>> + Sync,
{
    fn predictions(&self, lambda: f64, k: usize) -> Result<BTreeMap<String, f64>> {
        self(lambda, k)
    }
}

/// Train/test query split for one fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldSpec {
    pub train_label: String,
    pub test_label: String,
    pub train_ids: BTreeSet<String>,
    pub test_ids: BTreeSet<String>,
}

impl FoldSpec {
    pub fn new(
        train_label: impl Into<String>,
        train_ids: BTreeSet<String>,
        test_label: impl Into<String>,
        test_ids: BTreeSet<String>,
    ) -> Result<Self> {
        if let Some(shared) = train_ids.intersection(&test_ids).next() {
            return Err(Error::InvalidInput(format!(
                "query `{shared}` is in both train and test"
            )));
        }
        Ok(FoldSpec {
            train_label: train_label.into(),
            test_label: test_label.into(),
            train_ids,
            test_ids,
        })
    }

    /// Two folds from a two-group assignment: train on one group, test on
    /// the other, then swap. Groups are taken in label order.
    pub fn two_fold(groups: &BTreeMap<String, BTreeSet<String>>) -> Result<[FoldSpec; 2]> {
        let [(a, ids_a), (b, ids_b)]: [(&String, &BTreeSet<String>); 2] = groups
            .iter()
            .collect::<Vec<_>>()
            .try_into()
            .map_err(|v: Vec<_>| {
                Error::InvalidInput(format!("expected exactly 2 fold groups, found {}", v.len()))
            })?;
        Ok([
            FoldSpec::new(a.clone(), ids_a.clone(), b.clone(), ids_b.clone())?,
            FoldSpec::new(b.clone(), ids_b.clone(), a.clone(), ids_a.clone())?,
        ])
    }
}

/// Parses `qid<TAB>group` lines into groups of query ids.
pub fn parse_fold_assignment(
    content: &str,
    origin: &Path,
) -> Result<BTreeMap<String, BTreeSet<String>>> {
    let mut groups: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut seen = HashSet::new();
    for (i, line) in content.lines().enumerate() {
        let (qid, group) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(origin, i + 1, "expected `qid<TAB>fold`"))?;
        let group = group.trim();
        if qid.is_empty() || group.is_empty() {
            return Err(Error::parse(origin, i + 1, "empty field"));
        }
        if !seen.insert(qid.to_string()) {
            return Err(Error::parse(
                origin,
                i + 1,
                format!("query `{qid}` assigned twice"),
            ));
        }
        groups
            .entry(group.to_string())
            .or_default()
            .insert(qid.to_string());
    }
    Ok(groups)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub train_label: String,
    pub test_label: String,
    pub lambda: f64,
    pub k: usize,
    pub train_tau: f64,
    pub test_tau: f64,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneReport {
    pub folds: Vec<FoldOutcome>,
    pub mean_test_tau: f64,
}

fn tau_on(
    predicted: &BTreeMap<String, f64>,
    actual: &BTreeMap<String, f64>,
    ids: &BTreeSet<String>,
) -> Result<f64> {
    kendall_tau(&pair_up(predicted, actual, Some(ids))?)
}

/// Per fold, picks the cell with the highest train-side tau (ties: smaller
/// k, then smaller λ) and reports its test-side tau. Test queries never
/// influence the choice.
pub fn tune_2fold(
    folds: &[FoldSpec; 2],
    grid: &Grid,
    source: &dyn PredictionSource,
    actual: &BTreeMap<String, f64>,
) -> Result<TuneReport> {
    let mut cells = grid.cells();
    cells.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.total_cmp(&b.0)));
    let predictions: Vec<BTreeMap<String, f64>> = cells
        .par_iter()
        .map(|&(l, k)| source.predictions(l, k))
        .collect::<Result<_>>()?;

    let mut outcomes = Vec::with_capacity(2);
    for fold in folds {
        let train_taus: Vec<Option<f64>> = predictions
            .par_iter()
            .map(|p| match tau_on(p, actual, &fold.train_ids) {
                Ok(t) => Ok(Some(t)),
                Err(Error::UndefinedCorrelation(_)) => Ok(None),
                Err(e) => Err(e),
            })
            .collect::<Result<_>>()?;
        let mut best: Option<(usize, f64)> = None;
        for (i, tau) in train_taus.iter().enumerate() {
            if let Some(t) = *tau {
                if best.is_none_or(|(_, b)| t > b) {
                    best = Some((i, t));
                }
            }
        }
        let (i, train_tau) = best.ok_or_else(|| {
            Error::UndefinedCorrelation(format!(
                "train tau undefined for every grid cell on `{}`",
                fold.train_label
            ))
        })?;
        let (lambda, k) = cells[i];
        outcomes.push(FoldOutcome {
            train_label: fold.train_label.clone(),
            test_label: fold.test_label.clone(),
            lambda,
            k,
            train_tau,
            test_tau: tau_on(&predictions[i], actual, &fold.test_ids)?,
            n_test: fold.test_ids.len(),
        });
    }
    let mean_test_tau = outcomes.iter().map(|o| o.test_tau).sum::<f64>() / outcomes.len() as f64;
    Ok(TuneReport {
        folds: outcomes,
        mean_test_tau,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    pub lambda: f64,
    pub k: usize,
    /// `None` when tau is undefined (all predictions or actuals tied).
    pub tau: Option<f64>,
}

/// Tau for every cell, ordered by (λ, k), over `ids` (all predicted
/// queries when `None`).
pub fn sweep_grid(
    grid: &Grid,
    source: &dyn PredictionSource,
    actual: &BTreeMap<String, f64>,
    ids: Option<&BTreeSet<String>>,
) -> Result<Vec<SweepCell>> {
    grid.cells()
        .par_iter()
        .map(|&(lambda, k)| {
            let predicted = source.predictions(lambda, k)?;
            let tau = match kendall_tau(&pair_up(&predicted, actual, ids)?) {
                Ok(t) => Some(t),
                Err(Error::UndefinedCorrelation(_)) => None,
                Err(e) => return Err(e),
            };
            Ok(SweepCell { lambda, k, tau })
        })
        .collect()
}

/// CSV with header `lambda,k,tau`; undefined tau is written as `NaN`.
pub fn format_sweep_csv(cells: &[SweepCell]) -> String {
    let mut out = String::from("lambda,k,tau\n");
    for c in cells {
        let tau = c
            .tau
            .map_or_else(|| "NaN".to_string(), |t| format!("{t:.6}"));
        writeln!(out, "{},{},{tau}", c.lambda, c.k).expect("writing to a String cannot fail");
    }
    out
}

/// Outcome of testing one fold's tuned tau against a baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineComparison {
    pub baseline_tau: Option<f64>,
    pub fisher: Option<FisherZ>,
    /// Why no test was run (undefined tau, too few queries, |tau| = 1).
    pub note: Option<String>,
}

/// Significance of the tuned test tau against a baseline's tau on the same
/// test queries, one entry per fold. A fold where the test cannot be run
/// gets a note instead of failing the whole comparison.
pub fn compare_to_baseline(
    report: &TuneReport,
    folds: &[FoldSpec; 2],
    baseline: &BTreeMap<String, f64>,
    actual: &BTreeMap<String, f64>,
    confidence: f64,
) -> Result<Vec<BaselineComparison>> {
    report
        .folds
        .iter()
        .zip(folds)
        .map(|(outcome, fold)| {
            let base_tau = match tau_on(baseline, actual, &fold.test_ids) {
                Ok(t) => t,
                Err(Error::UndefinedCorrelation(m)) => {
                    return Ok(BaselineComparison {
                        baseline_tau: None,
                        fisher: None,
                        note: Some(m),
                    })
                }
                Err(e) => return Err(e),
            };
            let test =
                fisher_z_compare(outcome.test_tau, base_tau, fold.test_ids.len(), confidence);
            Ok(match test {
                Ok(z) => BaselineComparison {
                    baseline_tau: Some(base_tau),
                    fisher: Some(z),
                    note: None,
                },
                Err(Error::InvalidInput(m)) => BaselineComparison {
                    baseline_tau: Some(base_tau),
                    fisher: None,
                    note: Some(m),
                },
                Err(e) => return Err(e),
            })
        })
        .collect()
}

/// Named baseline and per-fold comparisons for a tuning report.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineSection<'a> {
    pub name: &'a str,
    pub confidence: f64,
    pub comparisons: &'a [BaselineComparison],
}

/// Key-value tuning report.
pub fn format_tune_report(
    report: &TuneReport,
    metric: &TargetMetric,
    baseline: Option<&BaselineSection<'_>>,
) -> String {
    let mut out = String::new();
    let mut kv = |k: String, v: String| {
        writeln!(out, "{k} = {v}").expect("writing to a String cannot fail");
    };
    kv("metric".into(), metric.to_string());
    for (i, f) in report.folds.iter().enumerate() {
        let p = format!("fold.{}", i + 1);
        kv(format!("{p}.train"), f.train_label.clone());
        kv(format!("{p}.test"), f.test_label.clone());
        kv(format!("{p}.lambda"), f.lambda.to_string());
        kv(format!("{p}.k"), f.k.to_string());
        kv(format!("{p}.train_tau"), format!("{:.6}", f.train_tau));
        kv(format!("{p}.test_tau"), format!("{:.6}", f.test_tau));
        kv(format!("{p}.n_test"), f.n_test.to_string());
    }
    kv(
        "mean_test_tau".into(),
        format!("{:.6}", report.mean_test_tau),
    );
    if let Some(b) = baseline {
        kv("baseline".into(), b.name.to_string());
        kv(
            "significance_test".into(),
            "fisher z, independent-samples r-to-z approximation applied to tau".into(),
        );
        kv("confidence".into(), b.confidence.to_string());
        for (i, c) in b.comparisons.iter().enumerate() {
            let p = format!("fold.{}", i + 1);
            if let Some(t) = c.baseline_tau {
                kv(format!("{p}.baseline_tau"), format!("{t:.6}"));
            }
            if let Some(z) = c.fisher {
                kv(format!("{p}.z"), format!("{:.6}", z.z));
                kv(format!("{p}.significant"), z.significant.to_string());
            }
            if let Some(note) = &c.note {
                kv(format!("{p}.significance_note"), note.clone());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ScoredDoc;
    use proptest::prelude::*;

    fn run(ids: &[&str]) -> RankedList {
        RankedList::new(
            "q1",
            ids.iter()
                .enumerate()
                .map(|(i, d)| ScoredDoc::new(*d, (ids.len() - i) as f64))
                .collect(),
        )
        .unwrap()
    }

    fn qrels(entries: &[(&str, u32)]) -> Qrels {
        let mut q = Qrels::new();
        for (d, g) in entries {
            q.insert("q1", d, *g).unwrap();
        }
        q
    }

    fn pairs(pred: &[f64], act: &[f64]) -> Vec<EvalPair> {
        pred.iter()
            .zip(act)
            .enumerate()
            .map(|(i, (&p, &a))| EvalPair {
                query_id: format!("q{i}"),
                predicted: p,
                actual: a,
            })
            .collect()
    }

    /// O(n²) pair counting.
    fn tau_oracle(p: &[EvalPair]) -> Option<f64> {
        let (mut c, mut d, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
        for i in 0..p.len() {
            for j in i + 1..p.len() {
                let dx = p[i].predicted - p[j].predicted;
                let dy = p[i].actual - p[j].actual;
                if dx == 0.0 && dy == 0.0 {
                } else if dx == 0.0 {
                    ty += 1;
                } else if dy == 0.0 {
                    tx += 1;
                } else if (dx > 0.0) == (dy > 0.0) {
                    c += 1;
                } else {
                    d += 1;
                }
            }
        }
        // rows tied only in actual count against the predicted side's
        // denominator and vice versa
        let den = ((c + d + tx) * (c + d + ty)) as f64;
        (den > 0.0).then(|| (c - d) as f64 / den.sqrt())
    }

    #[test]
    fn ap_examples() {
        let q = qrels(&[("d1", 3), ("d3", 2), ("d2", 1)]);
        let v = ap_at_k(&run(&["d2", "d1", "d3"]), &q, 100, 2);
        assert!((v - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert!((v - 0.58333).abs() < 1e-5);
        assert_eq!(
            ap_at_k(&run(&["d1", "x"]), &qrels(&[("d1", 2)]), 100, 2),
            1.0
        );
        assert_eq!(ap_at_k(&run(&["d1"]), &qrels(&[("d1", 1)]), 100, 2), 0.0);
        assert_eq!(ap_at_k(&run(&["d1"]), &Qrels::new(), 100, 2), 0.0);
    }

    #[test]
    fn ap_denominator_capped_at_k() {
        let q = qrels(&[("a", 2), ("b", 2), ("c", 2)]);
        assert_eq!(ap_at_k(&run(&["a", "b"]), &q, 2, 2), 1.0);
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_at_k(&run(&["dA"]), &qrels(&[("dA", 2)]), 10), 1.0);
        assert_eq!(ndcg_at_k(&run(&["x", "y"]), &qrels(&[("dA", 2)]), 10), 0.0);
        // run [a(1), b(3), c(0)], ideal [3,1,0]
        let q = qrels(&[("a", 1), ("b", 3), ("c", 0)]);
        let dcg = 1.0 / 2f64.log2() + 7.0 / 3f64.log2();
        let idcg = 7.0 / 2f64.log2() + 1.0 / 3f64.log2();
        let v = ndcg_at_k(&run(&["a", "b", "c"]), &q, 10);
        assert!((v - dcg / idcg).abs() < 1e-12);
    }

    #[test]
    fn metric_names() {
        assert_eq!(
            "ap@100".parse::<TargetMetric>().unwrap(),
            TargetMetric::Ap {
                k: 100,
                threshold: 2
            }
        );
        assert_eq!(
            "ndcg@10".parse::<TargetMetric>().unwrap(),
            TargetMetric::Ndcg { k: 10 }
        );
        assert!("map".parse::<TargetMetric>().is_err());
        assert!("ap@0".parse::<TargetMetric>().is_err());
        assert_eq!(TargetMetric::Ndcg { k: 10 }.to_string(), "ndcg@10");
    }

    #[test]
    fn tau_examples() {
        let t = kendall_tau(&pairs(&[1.0, 2.0, 3.0, 4.0], &[0.1, 0.2, 0.3, 0.4])).unwrap();
        assert_eq!(t, 1.0);
        let t = kendall_tau(&pairs(&[1.0, 2.0, 3.0, 4.0], &[0.4, 0.3, 0.2, 0.1])).unwrap();
        assert_eq!(t, -1.0);
        let t = kendall_tau(&pairs(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0])).unwrap();
        assert!((t - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn tau_undefined_and_too_short() {
        assert!(matches!(
            kendall_tau(&pairs(&[1.0, 1.0], &[2.0, 2.0])),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(kendall_tau(&pairs(&[1.0], &[2.0])).is_err());
    }

    #[test]
    fn tau_signed_zero_is_a_tie() {
        let a = kendall_tau(&pairs(&[-0.0, 0.0, 1.0], &[1.0, 2.0, 3.0])).unwrap();
        let b = kendall_tau(&pairs(&[0.0, 0.0, 1.0], &[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn tau_matches_pair_counting(
            v in prop::collection::vec((0u8..6, 0u8..6), 2..60)
        ) {
            let p: Vec<EvalPair> = v.iter().enumerate().map(|(i, &(x, y))| EvalPair {
                query_id: i.to_string(), predicted: f64::from(x), actual: f64::from(y),
            }).collect();
            match (kendall_tau(&p), tau_oracle(&p)) {
                (Ok(t), Some(o)) => prop_assert!((t - o).abs() <= 1e-12, "{} vs {}", t, o),
                (Err(Error::UndefinedCorrelation(_)), None) => {}
                (got, want) => prop_assert!(false, "{:?} vs {:?}", got, want),
            }
        }

        #[test]
        fn tau_negates_with_predictions(v in prop::collection::vec(-1e6f64..1e6, 2..40)) {
            let act: Vec<f64> = (0..v.len()).map(|i| i as f64).collect();
            let p = pairs(&v, &act);
            let neg: Vec<f64> = v.iter().map(|x| -x).collect();
            let n = pairs(&neg, &act);
            let (a, b) = (kendall_tau(&p).unwrap(), kendall_tau(&n).unwrap());
            prop_assert!((a + b).abs() < 1e-12);
        }
    }

    #[test]
    fn fisher_examples() {
        let same = fisher_z_compare(0.3, 0.3, 50, 0.99).unwrap();
        assert_eq!(same.z, 0.0);
        assert!(!same.significant);
        let r = fisher_z_compare(0.5, 0.1, 97, 0.99).unwrap();
        let expect = (0.5f64.atanh() - 0.1f64.atanh()) / (2.0f64 / 94.0).sqrt();
        assert!((r.z - expect).abs() < 1e-12);
        assert!((r.z - 3.08).abs() < 0.005);
        assert!((r.critical - 2.5758).abs() < 1e-4);
        assert!(r.significant);
        assert!(fisher_z_compare(0.5, 0.1, 3, 0.99).is_err());
        assert!(fisher_z_compare(1.0, 0.1, 10, 0.99).is_err());
    }

    #[test]
    fn grid_validation_and_order() {
        assert!(Grid::new(vec![], vec![1]).is_err());
        assert!(Grid::new(vec![0.5], vec![]).is_err());
        assert!(Grid::new(vec![1.5], vec![1]).is_err());
        let g = Grid::new(vec![0.5, 0.0], vec![2, 1]).unwrap();
        assert_eq!(g.cells(), vec![(0.0, 1), (0.0, 2), (0.5, 1), (0.5, 2)]);
        assert_eq!(Grid::standard().cells().len(), 110);
    }

    fn ids(v: &[&str]) -> BTreeSet<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn actual(v: &[(&str, f64)]) -> BTreeMap<String, f64> {
        v.iter().map(|(q, a)| (q.to_string(), *a)).collect()
    }

    #[test]
    fn single_point_grid() {
        let truth = actual(&[("a", 0.1), ("b", 0.2), ("c", 0.3), ("d", 0.4)]);
        let src = |_: f64, _: usize| -> Result<BTreeMap<String, f64>> {
            Ok(actual(&[("a", 1.0), ("b", 3.0), ("c", 2.0), ("d", 4.0)]))
        };
        let folds = FoldSpec::two_fold(
            &[
                ("x".to_string(), ids(&["a", "b"])),
                ("y".to_string(), ids(&["c", "d"])),
            ]
            .into(),
        )
        .unwrap();
        let grid = Grid::new(vec![0.3], vec![2]).unwrap();
        let rep = tune_2fold(&folds, &grid, &src, &truth).unwrap();
        assert!(rep.folds.iter().all(|f| f.lambda == 0.3 && f.k == 2));
        let mean = (rep.folds[0].test_tau + rep.folds[1].test_tau) / 2.0;
        assert_eq!(rep.mean_test_tau, mean);
    }

    #[test]
    fn identical_folds_train_choice_is_test_optimal() {
        let truth = actual(&[("a", 0.1), ("b", 0.2), ("c", 0.3)]);
        let src = |l: f64, k: usize| -> Result<BTreeMap<String, f64>> {
            // reversed unless l=0.5 and k=2
            let good = l == 0.5 && k == 2;
            Ok(actual(&[
                ("a", if good { 1.0 } else { 3.0 }),
                ("b", 2.0),
                ("c", if good { 3.0 } else { 1.0 }),
            ]))
        };
        let all = ids(&["a", "b", "c"]);
        let fold = FoldSpec {
            train_label: "s".into(),
            test_label: "s".into(),
            train_ids: all.clone(),
            test_ids: all,
        };
        let grid = Grid::new(vec![0.0, 0.5, 1.0], vec![1, 2, 3]).unwrap();
        let rep = tune_2fold(&[fold.clone(), fold], &grid, &src, &truth).unwrap();
        for f in &rep.folds {
            assert_eq!((f.lambda, f.k), (0.5, 2));
            assert_eq!(f.train_tau, f.test_tau);
        }
    }

    #[test]
    fn tuning_ties_prefer_small_k_then_small_lambda() {
        let truth = actual(&[("a", 0.1), ("b", 0.2), ("c", 0.3), ("d", 0.4)]);
        let src = |_: f64, _: usize| -> Result<BTreeMap<String, f64>> {
            Ok(actual(&[("a", 1.0), ("b", 2.0), ("c", 3.0), ("d", 4.0)]))
        };
        let folds = FoldSpec::two_fold(
            &[
                ("x".to_string(), ids(&["a", "b"])),
                ("y".to_string(), ids(&["c", "d"])),
            ]
            .into(),
        )
        .unwrap();
        let grid = Grid::new(vec![0.9, 0.2], vec![5, 3]).unwrap();
        let rep = tune_2fold(&folds, &grid, &src, &truth).unwrap();
        assert_eq!((rep.folds[0].lambda, rep.folds[0].k), (0.2, 3));
    }

    #[test]
    fn poisoned_test_queries_do_not_move_the_choice() {
        // cell (0.0, 1) ranks train queries correctly; (1.0, 1) ranks the
        // reversed order correctly
        let src = |l: f64, _: usize| -> Result<BTreeMap<String, f64>> {
            let s = if l == 0.0 { 1.0 } else { -1.0 };
            Ok(actual(&[
                ("a", s),
                ("b", 2.0 * s),
                ("c", 3.0 * s),
                ("d", s),
                ("e", 2.0 * s),
                ("f", 3.0 * s),
            ]))
        };
        let train = ids(&["a", "b", "c"]);
        let test = ids(&["d", "e", "f"]);
        let fold = FoldSpec::new("tr", train.clone(), "te", test.clone()).unwrap();
        let other = FoldSpec::new("te", test, "tr", train).unwrap();
        let grid = Grid::new(vec![0.0, 1.0], vec![1]).unwrap();
        let clean = actual(&[
            ("a", 0.1),
            ("b", 0.2),
            ("c", 0.3),
            ("d", 0.1),
            ("e", 0.2),
            ("f", 0.3),
        ]);
        let poisoned_test = actual(&[
            ("a", 0.1),
            ("b", 0.2),
            ("c", 0.3),
            ("d", 0.3),
            ("e", 0.2),
            ("f", 0.1),
        ]);
        let poisoned_train = actual(&[
            ("a", 0.3),
            ("b", 0.2),
            ("c", 0.1),
            ("d", 0.1),
            ("e", 0.2),
            ("f", 0.3),
        ]);
        let folds = [fold, other];
        let base = tune_2fold(&folds, &grid, &src, &clean).unwrap();
        let pt = tune_2fold(&folds, &grid, &src, &poisoned_test).unwrap();
        let ptr = tune_2fold(&folds, &grid, &src, &poisoned_train).unwrap();
        assert_eq!(base.folds[0].lambda, 0.0);
        assert_eq!(pt.folds[0].lambda, 0.0);
        assert_eq!(pt.folds[0].test_tau, -1.0);
        assert_eq!(ptr.folds[0].lambda, 1.0);
    }

    #[test]
    fn sweep_csv_format() {
        let cells = [
            SweepCell {
                lambda: 0.0,
                k: 1,
                tau: Some(0.5),
            },
            SweepCell {
                lambda: 0.1,
                k: 2,
                tau: None,
            },
        ];
        assert_eq!(
            format_sweep_csv(&cells),
            "lambda,k,tau\n0,1,0.500000\n0.1,2,NaN\n"
        );
    }

    #[test]
    fn fold_assignment_parsing() {
        let g = parse_fold_assignment("a\tx\nb\ty\nc\tx\n", Path::new("f")).unwrap();
        assert_eq!(g["x"], ids(&["a", "c"]));
        assert!(parse_fold_assignment("a\tx\na\ty\n", Path::new("f")).is_err());
        let three = parse_fold_assignment("a\tx\nb\ty\nc\tz\n", Path::new("f")).unwrap();
        assert!(FoldSpec::two_fold(&three).is_err());
        assert!(FoldSpec::new("x", ids(&["a"]), "y", ids(&["a"])).is_err());
    }
}
