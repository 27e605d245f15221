//! Experiment orchestration: embed, build similarity matrices, minimize over
//! the (version, budget, run) grid, evaluate.
//!
//! Output layout under the job's `out` directory:
//!
//! ```text
//! embeddings/<project>/<version>.ltme
//! versions.jsonl   one line per version: embedding time, truncated ids
//! prep.jsonl       one line per (version, measure): embed + matrix time
//! runs.jsonl       one RunRecord per grid cell
//! report.json, report.csv
//! manifest.json    config hash, resolved config, sha256 of every file
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{
    load_corpus, suite_budget_size, Corpus, CorpusError, CorpusManifest, VersionKey,
};
use crate::embedding::{
    embed_suite, load_embeddings, store_embeddings, version_file, EmbeddingError,
    EmbeddingProvider, EmbeddingSet, FileProvider, HashingProvider, RemoteProvider,
};
use crate::evaluation::{
    build_report, EvaluationError, EvaluationReport, GridSpec, ReportConfig, VersionOutcome,
};
use crate::minimizer::{
    fitness, ga_minimize, random_minimize, run_seed, GaParams, Minimizer, MinimizerError,
    RunRecord, SearchOutcome,
};
use crate::similarity::{
    build_matrix, CondensedSimilarityMatrix, SimilarityError, SimilarityMeasure,
};

pub const DEFAULT_BUDGETS: [f64; 3] = [0.25, 0.50, 0.75];
pub const DEFAULT_RUNS: usize = 10;
pub const DEFAULT_OUT: &str = "tsmin-out";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Provider(EmbeddingError),
    #[error("{0}")]
    Data(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> u8 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::Provider(_) => 2,
            PipelineError::Data(_) => 3,
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "E_CONFIG",
            PipelineError::Provider(_) => "E_PROVIDER",
            PipelineError::Data(_) => "E_DATA",
        }
    }
}

impl From<EmbeddingError> for PipelineError {
    fn from(e: EmbeddingError) -> Self {
        match e {
            EmbeddingError::Io(_) | EmbeddingError::CorruptFile { .. } => {
                PipelineError::Data(e.to_string())
            }
            other => PipelineError::Provider(other),
        }
    }
}

impl From<SimilarityError> for PipelineError {
    fn from(e: SimilarityError) -> Self {
        match e {
            SimilarityError::Embedding(inner) => inner.into(),
            other => PipelineError::Data(other.to_string()),
        }
    }
}

impl From<CorpusError> for PipelineError {
    fn from(e: CorpusError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<EvaluationError> for PipelineError {
    fn from(e: EvaluationError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<MinimizerError> for PipelineError {
    fn from(e: MinimizerError) -> Self {
        match e {
            MinimizerError::InvalidParams(_) => PipelineError::Config(e.to_string()),
            other => PipelineError::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        PipelineError::Data(e.to_string())
    }
}

/// `hashing`, `file:PATH`, or `remote:MODEL[@URL]`. A remote spec without a
/// URL uses `TSMIN_PROVIDER_URL`, falling back to the local default.
#[derive(Debug, Clone, PartialEq)]
pub enum ProviderSpec {
    Hashing,
    File(PathBuf),
    Remote { model: String, url: Option<String> },
}

impl ProviderSpec {
    pub fn parse(s: &str) -> Result<Self, PipelineError> {
        let bad = || PipelineError::Config(format!("unknown provider spec `{s}`"));
        if s == "hashing" {
            return Ok(ProviderSpec::Hashing);
        }
        if let Some(path) = s.strip_prefix("file:") {
            if path.is_empty() {
                return Err(bad());
            }
            return Ok(ProviderSpec::File(PathBuf::from(path)));
        }
        if let Some(rest) = s.strip_prefix("remote:") {
            let (model, url) = match rest.split_once('@') {
                Some((m, u)) => (m, Some(u.to_string())),
                None => (rest, None),
            };
            if model.is_empty() || url.as_deref() == Some("") {
                return Err(bad());
            }
            return Ok(ProviderSpec::Remote {
                model: model.to_string(),
                url,
            });
        }
        Err(bad())
    }

    /// Hashed form. The remote URL is a location, not an input, so only the
    /// model tag is kept.
    fn canonical(&self) -> String {
        match self {
            ProviderSpec::Hashing => format!("hashing:{}", HashingProvider::MODEL_TAG),
            ProviderSpec::File(p) => format!("file:{}", p.display()),
            ProviderSpec::Remote { model, .. } => format!("remote:{model}"),
        }
    }

    pub fn build(&self) -> Box<dyn EmbeddingProvider> {
        match self {
            ProviderSpec::Hashing => Box::new(HashingProvider::default()),
            ProviderSpec::File(p) => Box::new(FileProvider::new(p)),
            ProviderSpec::Remote {
                model,
                url: Some(url),
            } => Box::new(RemoteProvider::new(url.clone(), model.clone())),
            ProviderSpec::Remote { model, url: None } => {
                Box::new(RemoteProvider::from_env(model.clone()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

/// Optional settings from a config file or command-line flags.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub corpus: Option<PathBuf>,
    pub provider: Option<String>,
    #[serde(alias = "measures")]
    pub measure: Option<OneOrMany>,
    pub budgets: Option<Vec<f64>>,
    pub runs: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub pop: Option<usize>,
    #[serde(rename = "mut")]
    pub mutation: Option<f64>,
    pub cross: Option<f64>,
    pub eps: Option<f64>,
    #[serde(alias = "min-gen")]
    pub min_gen: Option<usize>,
    #[serde(alias = "max-gen")]
    pub max_gen: Option<usize>,
    pub baseline: Option<bool>,
    pub partial: Option<bool>,
}

impl ConfigOverrides {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(format!("config file: {e}")))
    }

    /// Fields set in `over` win.
    pub fn merged(self, over: ConfigOverrides) -> Self {
        Self {
            corpus: over.corpus.or(self.corpus),
            provider: over.provider.or(self.provider),
            measure: over.measure.or(self.measure),
            budgets: over.budgets.or(self.budgets),
            runs: over.runs.or(self.runs),
            seed: over.seed.or(self.seed),
            out: over.out.or(self.out),
            workers: over.workers.or(self.workers),
            pop: over.pop.or(self.pop),
            mutation: over.mutation.or(self.mutation),
            cross: over.cross.or(self.cross),
            eps: over.eps.or(self.eps),
            min_gen: over.min_gen.or(self.min_gen),
            max_gen: over.max_gen.or(self.max_gen),
            baseline: over.baseline.or(self.baseline),
            partial: over.partial.or(self.partial),
        }
    }
}

#[derive(Debug, Clone)]
pub struct JobConfig {
    pub corpus: PathBuf,
    pub provider: ProviderSpec,
    pub measures: Vec<SimilarityMeasure>,
    pub budgets: Vec<f64>,
    pub runs: usize,
    pub seed: u64,
    pub ga: GaParams,
    /// Also run the random-selection baseline for every cell.
    pub baseline: bool,
    pub out: PathBuf,
    pub workers: usize,
    pub partial: bool,
}

impl JobConfig {
    /// Reads `config_file` (if any) and applies `flags` on top.
    pub fn load(config_file: Option<&Path>, flags: ConfigOverrides) -> Result<Self, PipelineError> {
        let base = match config_file {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| {
                    PipelineError::Config(format!("cannot read config {}: {e}", p.display()))
                })?;
                ConfigOverrides::from_toml(&text)?
            }
            None => ConfigOverrides::default(),
        };
        Self::resolve(base.merged(flags))
    }

    pub fn resolve(o: ConfigOverrides) -> Result<Self, PipelineError> {
        let cfg = |m: String| PipelineError::Config(m);
        let corpus = o.corpus.ok_or_else(|| cfg("missing corpus path".into()))?;
        let provider = ProviderSpec::parse(o.provider.as_deref().unwrap_or("hashing"))?;

        let names = match o.measure {
            None => vec!["cos".to_string()],
            Some(OneOrMany::One(s)) => s.split(',').map(|p| p.trim().to_string()).collect(),
            Some(OneOrMany::Many(v)) => v,
        };
        let mut measures = Vec::new();
        for name in &names {
            let m = SimilarityMeasure::parse(name)
                .ok_or_else(|| cfg(format!("unknown measure `{name}` (expected cos or euc)")))?;
            if !measures.contains(&m) {
                measures.push(m);
            }
        }
        if measures.is_empty() {
            return Err(cfg("no similarity measure given".into()));
        }

        let budgets = o.budgets.unwrap_or_else(|| DEFAULT_BUDGETS.to_vec());
        if budgets.is_empty() {
            return Err(cfg("no budgets given".into()));
        }
        for (i, b) in budgets.iter().enumerate() {
            if !(*b > 0.0 && *b < 1.0) {
                return Err(cfg(format!("budget {b} must lie strictly between 0 and 1")));
            }
            if budgets[..i].iter().any(|p| p.to_bits() == b.to_bits()) {
                return Err(cfg(format!("budget {b} listed twice")));
            }
        }

        let runs = o.runs.unwrap_or(DEFAULT_RUNS);
        if runs == 0 {
            return Err(cfg("runs must be at least 1".into()));
        }

        let mut ga = GaParams::default();
        if let Some(v) = o.pop {
            ga.population_size = v;
        }
        if let Some(v) = o.mutation {
            ga.mutation_rate = v;
        }
        if let Some(v) = o.cross {
            ga.crossover_rate = v;
        }
        if let Some(v) = o.eps {
            ga.convergence_epsilon = v;
        }
        if let Some(v) = o.min_gen {
            ga.min_generations = v;
        }
        if let Some(v) = o.max_gen {
            ga.max_generations = v;
        }
        ga.validate()?;

        let workers = match o.workers {
            Some(0) => return Err(cfg("workers must be at least 1".into())),
            Some(w) => w,
            None => std::thread::available_parallelism().map_or(1, |n| n.get()),
        };

        Ok(Self {
            corpus,
            provider,
            measures,
            budgets,
            runs,
            seed: o.seed.unwrap_or(0),
            ga,
            baseline: o.baseline.unwrap_or(false),
            out: o.out.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
            workers,
            partial: o.partial.unwrap_or(false),
        })
    }

    /// Configuration labels in report order.
    pub fn config_labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = self.measures.iter().map(|m| format!("ga/{m}")).collect();
        if self.baseline {
            labels.push("random".into());
        }
        labels
    }
}

/// Everything that influences non-timing outputs. Worker count, output
/// directory and partial mode are excluded.
#[derive(Debug, Clone, Serialize)]
pub struct HashedConfig {
    pub corpus_sha256: String,
    pub provider: String,
    pub measures: Vec<SimilarityMeasure>,
    pub budgets: Vec<f64>,
    pub runs: usize,
    pub seed: u64,
    pub ga: GaParams,
    pub baseline: bool,
}

impl HashedConfig {
    pub fn new(config: &JobConfig, corpus: &CorpusManifest) -> Self {
        Self {
            corpus_sha256: corpus.sha256.clone(),
            provider: config.provider.canonical(),
            measures: config.measures.clone(),
            budgets: config.budgets.clone(),
            runs: config.runs,
            seed: config.seed,
            ga: config.ga.clone(),
            baseline: config.baseline,
        }
    }

    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// One line of `versions.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionPrep {
    pub project: String,
    pub version: String,
    pub n_tests: usize,
    pub model_tag: String,
    pub embed_time_ms: f64,
    pub truncated: Vec<String>,
    pub config_hash: String,
}

/// One line of `prep.jsonl`: preparation time of one (version, measure).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixPrep {
    pub project: String,
    pub version: String,
    pub measure: SimilarityMeasure,
    pub embed_time_ms: f64,
    pub matrix_time_ms: f64,
    pub prep_time_ms: f64,
    pub config_hash: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: String,
    config_hash: &'a str,
    config: &'a HashedConfig,
    corpus: &'a CorpusManifest,
    files: BTreeMap<String, String>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), PipelineError> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).map_err(|e| PipelineError::Data(e.to_string()))?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let file = fs::File::open(path)
        .map_err(|e| PipelineError::Data(format!("cannot open {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| PipelineError::Data(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

fn list_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            list_files(root, &path, out)?;
        } else if let Ok(rel) = path.strip_prefix(root) {
            out.push(rel.to_path_buf());
        }
    }
    Ok(())
}

fn pool(threads: usize) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| PipelineError::Config(format!("cannot start worker pool: {e}")))
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    suite: usize,
    measure: usize,
    minimizer: Minimizer,
    budget: f64,
    run: usize,
}

/// A resolved job bound to its loaded corpus.
pub struct Job {
    pub config: JobConfig,
    pub corpus: Corpus,
    pub hashed: HashedConfig,
    pub config_hash: String,
}

impl Job {
    pub fn open(config: JobConfig) -> Result<Self, PipelineError> {
        let corpus = load_corpus(&config.corpus)?;
        let hashed = HashedConfig::new(&config, &corpus.manifest);
        let config_hash = hashed.hash();
        Ok(Self {
            config,
            corpus,
            hashed,
            config_hash,
        })
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.config.out.join(name)
    }

    fn embeddings_dir(&self) -> PathBuf {
        self.out_path("embeddings")
    }

    /// Embeds every version and writes `embeddings/` and `versions.jsonl`.
    /// Versions run in parallel up to the provider's concurrency limit.
    pub fn embed(
        &self,
        provider: &dyn EmbeddingProvider,
    ) -> Result<Vec<EmbeddingSet>, PipelineError> {
        let threads = self
            .config
            .workers
            .min(provider.capabilities().max_concurrent);
        let sets = pool(threads)?.install(|| {
            self.corpus
                .suites
                .par_iter()
                .map(|suite| embed_suite(provider, suite))
                .collect::<Result<Vec<_>, _>>()
        })?;
        let dir = self.embeddings_dir();
        let mut lines = Vec::with_capacity(sets.len());
        for (suite, set) in self.corpus.suites.iter().zip(&sets) {
            let path = version_file(&dir, &suite.project, &suite.version);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            store_embeddings(set, &path)?;
            lines.push(VersionPrep {
                project: suite.project.clone(),
                version: suite.version.clone(),
                n_tests: suite.len(),
                model_tag: set.model_tag.clone(),
                embed_time_ms: set.prep_time_ms,
                truncated: set.truncated.clone(),
                config_hash: self.config_hash.clone(),
            });
        }
        write_jsonl(&self.out_path("versions.jsonl"), &lines)?;
        Ok(sets)
    }

    /// Reads back what [`Job::embed`] wrote, restoring timing and model tags.
    pub fn load_embedded(&self) -> Result<Vec<EmbeddingSet>, PipelineError> {
        let preps: Vec<VersionPrep> = read_jsonl(&self.out_path("versions.jsonl"))?;
        let by_key: HashMap<VersionKey, &VersionPrep> = preps
            .iter()
            .map(|p| (VersionKey::new(&p.project, &p.version), p))
            .collect();
        let dir = self.embeddings_dir();
        self.corpus
            .suites
            .iter()
            .map(|suite| {
                let prep = by_key.get(&suite.key()).ok_or_else(|| {
                    PipelineError::Data(format!("versions.jsonl has no entry for {}", suite.key()))
                })?;
                let mut set = load_embeddings(version_file(&dir, &suite.project, &suite.version))?;
                set.model_tag = prep.model_tag.clone();
                set.prep_time_ms = prep.embed_time_ms;
                set.truncated = prep.truncated.clone();
                Ok(set)
            })
            .collect()
    }

    fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for suite in 0..self.corpus.suites.len() {
            let mut push = |measure: usize, minimizer: Minimizer| {
                for &budget in &self.config.budgets {
                    for run in 0..self.config.runs {
                        cells.push(Cell {
                            suite,
                            measure,
                            minimizer,
                            budget,
                            run,
                        });
                    }
                }
            };
            for measure in 0..self.config.measures.len() {
                push(measure, Minimizer::Ga);
            }
            if self.config.baseline {
                push(0, Minimizer::Random);
            }
        }
        cells
    }

    fn run_cell(
        &self,
        cell: Cell,
        m: &CondensedSimilarityMatrix,
    ) -> Result<RunRecord, PipelineError> {
        let suite = &self.corpus.suites[cell.suite];
        let n = suite_budget_size(suite.len(), cell.budget);
        let seed = run_seed(self.config.seed, cell.run);
        let outcome = match cell.minimizer {
            Minimizer::Ga => ga_minimize(m, n, &self.config.ga, seed)?,
            Minimizer::Random => {
                let start = Instant::now();
                let best = random_minimize(suite.len(), n, seed)?;
                let search_time_ms = start.elapsed().as_secs_f64() * 1e3;
                SearchOutcome {
                    seed,
                    best_fitness: fitness(&best, m),
                    best,
                    generations: 0,
                    search_time_ms,
                    fitness_history: Vec::new(),
                }
            }
        };
        let mut record = RunRecord::from_outcome(
            &suite.key(),
            cell.budget,
            cell.run,
            self.config.measures[cell.measure],
            cell.minimizer,
            outcome,
        );
        record.config_hash = self.config_hash.clone();
        Ok(record)
    }

    /// Builds one matrix per (version, measure), then searches every grid
    /// cell. Writes `prep.jsonl` and `runs.jsonl` in grid order.
    pub fn minimize(
        &self,
        sets: &[EmbeddingSet],
    ) -> Result<(Vec<RunRecord>, Vec<MatrixPrep>), PipelineError> {
        if sets.len() != self.corpus.suites.len() {
            return Err(PipelineError::Data(format!(
                "{} embedding sets for {} versions",
                sets.len(),
                self.corpus.suites.len()
            )));
        }
        let measures = &self.config.measures;
        let workers = pool(self.config.workers)?;
        let (matrices, records) = workers.install(|| {
            let matrices = self
                .corpus
                .suites
                .par_iter()
                .zip(sets)
                .map(|(suite, set)| {
                    measures
                        .iter()
                        .map(|&m| build_matrix(set, suite, m))
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()?;
            let records = self
                .cells()
                .into_par_iter()
                .map(|cell| self.run_cell(cell, &matrices[cell.suite][cell.measure]))
                .collect::<Result<Vec<_>, PipelineError>>()?;
            Ok::<_, PipelineError>((matrices, records))
        })?;

        let mut preps = Vec::new();
        for ((suite, set), row) in self.corpus.suites.iter().zip(sets).zip(&matrices) {
            for (measure, m) in measures.iter().zip(row) {
                preps.push(MatrixPrep {
                    project: suite.project.clone(),
                    version: suite.version.clone(),
                    measure: *measure,
                    embed_time_ms: set.prep_time_ms,
                    matrix_time_ms: m.build_time_ms,
                    prep_time_ms: set.prep_time_ms + m.build_time_ms,
                    config_hash: self.config_hash.clone(),
                });
            }
        }
        write_jsonl(&self.out_path("prep.jsonl"), &preps)?;
        write_jsonl(&self.out_path("runs.jsonl"), &records)?;
        Ok((records, preps))
    }

    fn grid(&self) -> GridSpec {
        GridSpec {
            versions: self.corpus.suites.iter().map(|s| s.key()).collect(),
            configs: self.config.config_labels(),
            budgets: self.config.budgets.clone(),
            runs: self.config.runs,
        }
    }

    /// Joins records with preparation times and writes `report.json` and
    /// `report.csv`. The random baseline has no preparation step.
    pub fn evaluate(
        &self,
        records: &[RunRecord],
        preps: &[MatrixPrep],
    ) -> Result<EvaluationReport, PipelineError> {
        let prep_by: HashMap<(VersionKey, SimilarityMeasure), f64> = preps
            .iter()
            .map(|p| {
                (
                    (VersionKey::new(&p.project, &p.version), p.measure),
                    p.prep_time_ms,
                )
            })
            .collect();
        let mut outcomes = Vec::with_capacity(records.len());
        for r in records {
            let key = r.key();
            let suite = self
                .corpus
                .suite(&key)
                .ok_or_else(|| EvaluationError::UnknownVersion(key.clone()))?;
            let prep = match r.minimizer {
                Minimizer::Random => 0.0,
                Minimizer::Ga => *prep_by.get(&(key.clone(), r.measure)).ok_or_else(|| {
                    PipelineError::Data(format!("no preparation time for {key} ({})", r.measure))
                })?,
            };
            outcomes.push(VersionOutcome::from_record(suite, r, prep)?);
        }
        let report = build_report(
            &outcomes,
            &ReportConfig {
                config_hash: self.config_hash.clone(),
                grid: Some(self.grid()),
                partial: self.config.partial,
                comparisons: Vec::new(),
            },
        )?;
        write_atomic(&self.out_path("report.json"), report.to_json().as_bytes())?;
        let mut csv = Vec::new();
        report
            .write_csv(&mut csv)
            .map_err(|e| PipelineError::Data(format!("csv: {e}")))?;
        write_atomic(&self.out_path("report.csv"), &csv)?;
        Ok(report)
    }

    /// Records the config hash and a sha256 of every output file.
    pub fn write_manifest(&self) -> Result<(), PipelineError> {
        let out = &self.config.out;
        let mut paths = Vec::new();
        if out.is_dir() {
            list_files(out, out, &mut paths)?;
        }
        paths.sort();
        let mut files = BTreeMap::new();
        for rel in paths {
            if rel == Path::new("manifest.json") {
                continue;
            }
            let bytes = fs::read(out.join(&rel))?;
            let name = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>();
            files.insert(name.join("/"), hex::encode(Sha256::digest(&bytes)));
        }
        let manifest = Manifest {
            tool: format!("tsmin {}", env!("CARGO_PKG_VERSION")),
            config_hash: &self.config_hash,
            config: &self.hashed,
            corpus: &self.corpus.manifest,
            files,
        };
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| PipelineError::Data(e.to_string()))?;
        write_atomic(&self.out_path("manifest.json"), json.as_bytes())
    }

    pub fn read_outputs(&self) -> Result<(Vec<RunRecord>, Vec<MatrixPrep>), PipelineError> {
        let records: Vec<RunRecord> = read_jsonl(&self.out_path("runs.jsonl"))?;
        let preps: Vec<MatrixPrep> = read_jsonl(&self.out_path("prep.jsonl"))?;
        for r in &records {
            if r.config_hash != self.config_hash {
                return Err(PipelineError::Data(format!(
                    "runs.jsonl was produced by config {} but this job hashes to {}",
                    r.config_hash, self.config_hash
                )));
            }
        }
        Ok((records, preps))
    }
}

/// What a command produced, for the CLI summary.
#[derive(Debug, Clone, Default)]
pub struct Summary {
    pub config_hash: String,
    pub versions: usize,
    pub records: usize,
    pub report: Option<EvaluationReport>,
}

pub fn cmd_embed(config: JobConfig) -> Result<Summary, PipelineError> {
    let job = Job::open(config)?;
    let provider = job.config.provider.build();
    let sets = job.embed(provider.as_ref())?;
    job.write_manifest()?;
    Ok(Summary {
        config_hash: job.config_hash,
        versions: sets.len(),
        ..Default::default()
    })
}

pub fn cmd_minimize(config: JobConfig) -> Result<Summary, PipelineError> {
    let job = Job::open(config)?;
    let sets = job.load_embedded()?;
    let (records, _) = job.minimize(&sets)?;
    job.write_manifest()?;
    Ok(Summary {
        config_hash: job.config_hash,
        versions: sets.len(),
        records: records.len(),
        report: None,
    })
}

pub fn cmd_evaluate(config: JobConfig) -> Result<Summary, PipelineError> {
    let job = Job::open(config)?;
    let (records, preps) = job.read_outputs()?;
    let report = job.evaluate(&records, &preps)?;
    job.write_manifest()?;
    Ok(Summary {
        config_hash: job.config_hash,
        versions: job.corpus.suites.len(),
        records: records.len(),
        report: Some(report),
    })
}

pub fn cmd_pipeline(config: JobConfig) -> Result<Summary, PipelineError> {
    let job = Job::open(config)?;
    let provider = job.config.provider.build();
    let sets = job.embed(provider.as_ref())?;
    let (records, preps) = job.minimize(&sets)?;
    let report = job.evaluate(&records, &preps)?;
    job.write_manifest()?;
    Ok(Summary {
        config_hash: job.config_hash,
        versions: sets.len(),
        records: records.len(),
        report: Some(report),
    })
}
