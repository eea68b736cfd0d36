use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Deserialize;

use qvqpp_core::evaluation::{Grid, TargetMetric};
use qvqpp_core::predictors::BaseKind;
use qvqpp_core::qv_qpp::{QppConfig, QueryRetrieverKind, TwoHopSeeds};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default = "default_seed")]
    seed: u64,
    paths: FilePaths,
    #[serde(default)]
    qpp: QppConfig,
    #[serde(default)]
    evaluation: FileEvaluation,
}

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FilePaths {
    collection: PathBuf,
    train_queries: PathBuf,
    train_qrels: PathBuf,
    test_queries: PathBuf,
    test_qrels: PathBuf,
    target_run: PathBuf,
    index_dir: PathBuf,
    train_embeddings: Option<PathBuf>,
    test_embeddings: Option<PathBuf>,
    folds: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileEvaluation {
    metric: String,
    lambdas: Vec<f64>,
    ks: Vec<usize>,
    confidence: f64,
    run_depth: usize,
}

impl Default for FileEvaluation {
    fn default() -> Self {
        let grid = Grid::standard();
        FileEvaluation {
            metric: "ap@100".into(),
            lambdas: grid.lambdas,
            ks: grid.ks,
            confidence: 0.99,
            run_depth: 1000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Paths {
    pub collection: PathBuf,
    pub train_queries: PathBuf,
    pub train_qrels: PathBuf,
    pub test_queries: PathBuf,
    pub test_qrels: PathBuf,
    pub target_run: PathBuf,
    pub index_dir: PathBuf,
    pub train_embeddings: Option<PathBuf>,
    pub test_embeddings: Option<PathBuf>,
    pub folds: Option<PathBuf>,
}

impl Paths {
    pub fn document_index(&self) -> PathBuf {
        self.index_dir.join("documents.json")
    }

    pub fn query_index(&self) -> PathBuf {
        self.index_dir.join("queries.json")
    }
}

/// Validated settings for one invocation.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub qpp: QppConfig,
    pub metric: TargetMetric,
    pub grid: Grid,
    pub confidence: f64,
    pub run_depth: usize,
}

/// Options shared by every subcommand. Flags override the config file.
#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Pipeline configuration (TOML). Relative paths inside it are resolved
    /// against its directory.
    #[arg(long, short)]
    pub config: PathBuf,
    /// Worker threads (default: all cores). Output does not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    /// nqc or uef
    #[arg(long)]
    pub base: Option<String>,
    /// bm25 or dense
    #[arg(long)]
    pub query_retriever: Option<String>,
    #[arg(long)]
    pub use_2hop: Option<bool>,
    /// pool or top-k
    #[arg(long)]
    pub two_hop_seeds: Option<String>,
    /// ap@<k> or ndcg@<k>
    #[arg(long)]
    pub metric: Option<String>,
    /// Target run file, replacing `paths.target_run`.
    #[arg(long)]
    pub run: Option<PathBuf>,
}

fn resolve(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

impl PipelineConfig {
    pub fn load(args: &CommonArgs) -> Result<Self> {
        let text = std::fs::read_to_string(&args.config)
            .with_context(|| format!("reading config {}", args.config.display()))?;
        let file: FileConfig = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", args.config.display()))?;
        let base = args.config.parent().unwrap_or(Path::new("."));
        let p = file.paths;
        let paths = Paths {
            collection: resolve(base, p.collection),
            train_queries: resolve(base, p.train_queries),
            train_qrels: resolve(base, p.train_qrels),
            test_queries: resolve(base, p.test_queries),
            test_qrels: resolve(base, p.test_qrels),
            target_run: args
                .run
                .clone()
                .unwrap_or_else(|| resolve(base, p.target_run)),
            index_dir: resolve(base, p.index_dir),
            train_embeddings: p.train_embeddings.map(|x| resolve(base, x)),
            test_embeddings: p.test_embeddings.map(|x| resolve(base, x)),
            folds: p.folds.map(|x| resolve(base, x)),
        };

        let mut qpp = file.qpp;
        if let Some(l) = args.lambda {
            qpp.lambda = l;
        }
        if let Some(k) = args.k {
            qpp.k = k;
        }
        if let Some(n) = args.n {
            qpp.n = n;
        }
        if let Some(b) = &args.base {
            qpp.predictor.base = b.parse::<BaseKind>()?;
        }
        if let Some(r) = &args.query_retriever {
            qpp.query_retriever = match r.as_str() {
                "bm25" => QueryRetrieverKind::Bm25,
                "dense" => QueryRetrieverKind::Dense,
                _ => bail!("unknown query retriever `{r}` (expected bm25 or dense)"),
            };
        }
        if let Some(u) = args.use_2hop {
            qpp.use_2hop = u;
        }
        if let Some(s) = &args.two_hop_seeds {
            qpp.two_hop_seeds = match s.as_str() {
                "pool" => TwoHopSeeds::Pool,
                "top-k" => TwoHopSeeds::TopK,
                _ => bail!("unknown 2-hop seed mode `{s}` (expected pool or top-k)"),
            };
        }
        qpp.predictor.seed = args.seed.unwrap_or(file.seed);

        let eval = file.evaluation;
        let metric: TargetMetric = args.metric.as_deref().unwrap_or(&eval.metric).parse()?;
        let config = PipelineConfig {
            paths,
            qpp,
            metric,
            grid: Grid::new(eval.lambdas, eval.ks)?,
            confidence: eval.confidence,
            run_depth: eval.run_depth,
        };
        config.validate()?;
        Ok(config)
    }

    /// Fails before any file is written.
    fn validate(&self) -> Result<()> {
        self.qpp.validate()?;
        let max_k = self.grid.ks.iter().copied().max().unwrap_or(0);
        if max_k >= self.qpp.n {
            bail!(
                "grid k values must stay below n={}, got {max_k}",
                self.qpp.n
            );
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            bail!("confidence must be in (0,1), got {}", self.confidence);
        }
        if self.run_depth == 0 {
            bail!("run_depth must be positive");
        }
        let p = &self.paths;
        let mut required = vec![
            ("collection", Some(&p.collection)),
            ("train_queries", Some(&p.train_queries)),
            ("train_qrels", Some(&p.train_qrels)),
            ("test_queries", Some(&p.test_queries)),
            ("test_qrels", Some(&p.test_qrels)),
            ("target_run", Some(&p.target_run)),
            ("train_embeddings", p.train_embeddings.as_ref()),
            ("test_embeddings", p.test_embeddings.as_ref()),
            ("folds", p.folds.as_ref()),
        ];
        if self.qpp.query_retriever == QueryRetrieverKind::Dense {
            for (name, path) in &required[6..8] {
                if path.is_none() {
                    bail!("dense query retrieval needs `paths.{name}`");
                }
            }
        }
        for (name, path) in required.drain(..) {
            if let Some(path) = path {
                if !path.is_file() {
                    bail!("paths.{name}: {} does not exist", path.display());
                }
            }
        }
        Ok(())
    }
}
