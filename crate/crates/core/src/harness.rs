//! Experiment orchestration: configuration, baselines, accuracy tables and
//! end-to-end runs that persist every prediction before any report is
//! derived from them.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{builtin, load_corpus, Corpus, Sample, TaskSpec};
use crate::embedding::EmbeddingIndex;
use crate::error::{Error, Result};
use crate::fixtures::OverviewRow;
use crate::predict::{Mode, Prediction, Predictor, Strategy};
use crate::prompt::PromptConfig;
use crate::retrieval::{random_retrieve, retrieve_top_k, RetrievalHit};
use crate::scorer::{
    CacheConfig, CachedScorer, FixtureScorer, HttpConfig, HttpScorer, ScorerBackend,
};

pub const CACHE_DIR_ENV: &str = "PARC_CACHE_DIR";
pub const DEFAULT_HRL_LANGUAGE: &str = "en";

pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const HITS_FILE: &str = "hits.jsonl";
pub const MANIFEST_FILE: &str = "run.json";
pub const REPORT_TXT: &str = "report.txt";
pub const REPORT_JSON: &str = "report.json";

/// Round half up to one decimal, as printed in the result tables.
pub fn round1(x: f64) -> f64 {
    ((x * 10.0) + 0.5 + 1e-9).floor() / 10.0
}

pub fn fmt1(x: f64) -> String {
    format!("{:.1}", round1(x))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Maj,
    Direct,
    Random,
    ParcUnlabeled,
    ParcLabeled,
}

impl Method {
    pub fn display(self) -> &'static str {
        match self {
            Method::Maj => "MAJ",
            Method::Direct => "Direct",
            Method::Random => "Random",
            Method::ParcUnlabeled => "PARC-unlabeled",
            Method::ParcLabeled => "PARC-labeled",
        }
    }

    /// Methods that do not depend on k are reported once with k = 0.
    pub fn uses_k(self) -> bool {
        matches!(
            self,
            Method::Random | Method::ParcUnlabeled | Method::ParcLabeled
        )
    }

    fn mode(self) -> Mode {
        match self {
            Method::ParcUnlabeled => Mode::Unlabeled,
            _ => Mode::Labeled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSet {
    pub language: String,
    pub corpus: PathBuf,
    /// Embeddings of the test inputs, keyed by sample id.
    pub index: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerSpec {
    Fixture(PathBuf),
    Http(HttpConfig),
}

fn default_methods() -> Vec<Method> {
    vec![
        Method::Maj,
        Method::Direct,
        Method::Random,
        Method::ParcUnlabeled,
        Method::ParcLabeled,
    ]
}

fn default_strategy() -> Strategy {
    Strategy::Bor
}

fn default_k() -> Vec<usize> {
    vec![1]
}

fn default_hrl() -> String {
    DEFAULT_HRL_LANGUAGE.into()
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Builtin task name or path to a task JSON file.
    pub task: String,
    #[serde(default)]
    pub pattern_index: Option<usize>,
    pub test: Vec<TestSet>,
    pub hrl_corpus: PathBuf,
    pub hrl_index: PathBuf,
    pub scorer: ScorerSpec,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    #[serde(default = "default_k")]
    pub k: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default = "default_hrl")]
    pub hrl_language: String,
    #[serde(default)]
    pub prompt: PromptConfig,
    #[serde(default = "default_true")]
    pub bor_renormalize: bool,
    #[serde(default)]
    pub cache: CacheConfig,
}

impl ExperimentConfig {
    /// Reads a config file; relative paths are resolved against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for t in &mut self.test {
            fix(&mut t.corpus);
            fix(&mut t.index);
        }
        fix(&mut self.hrl_corpus);
        fix(&mut self.hrl_index);
        fix(&mut self.output_dir);
        if let ScorerSpec::Fixture(p) = &mut self.scorer {
            fix(p);
        }
        if let Some(p) = &mut self.cache.path {
            fix(p);
        }
        if builtin::by_name(&self.task).is_none() && Path::new(&self.task).is_relative() {
            self.task = base.join(&self.task).to_string_lossy().into_owned();
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k.is_empty() {
            return Err(Error::Config("k list must not be empty".into()));
        }
        if self.k.contains(&0) {
            return Err(Error::Config("k values must be positive".into()));
        }
        if self.k.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "k list must be strictly ascending, got {:?}",
                self.k
            )));
        }
        if self.strategy == Strategy::Single && self.k != [1] {
            return Err(Error::Config(
                "the single strategy only supports k = [1]".into(),
            ));
        }
        if self.test.is_empty() {
            return Err(Error::Config("no test sets configured".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods configured".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for t in &self.test {
            if !seen.insert(&t.language) {
                return Err(Error::Config(format!(
                    "test language `{}` listed twice",
                    t.language
                )));
            }
        }
        let spec = self.task_spec()?;
        self.pattern(&spec)?;
        Ok(())
    }

    pub fn task_spec(&self) -> Result<TaskSpec> {
        resolve_task(&self.task)
    }

    pub fn pattern_index_for(&self, spec: &TaskSpec) -> usize {
        self.pattern_index.unwrap_or_else(|| {
            if builtin::by_name(spec.task_id()).is_some() {
                builtin::default_pattern(spec.task_id())
            } else {
                0
            }
        })
    }

    fn pattern<'s>(&self, spec: &'s TaskSpec) -> Result<&'s crate::corpus::PatternTemplate> {
        spec.pattern(self.pattern_index_for(spec))
    }

    /// The score cache location: `$PARC_CACHE_DIR/scores.jsonl` when set,
    /// otherwise the configured path.
    pub fn effective_cache(&self) -> CacheConfig {
        let mut c = self.cache.clone();
        if let Some(dir) = std::env::var_os(CACHE_DIR_ENV).filter(|d| !d.is_empty()) {
            c.path = Some(PathBuf::from(dir).join("scores.jsonl"));
        }
        c
    }
}

/// A builtin task name or the path of a task JSON file.
pub fn resolve_task(name_or_path: &str) -> Result<TaskSpec> {
    match builtin::by_name(name_or_path) {
        Some(def) => TaskSpec::from_def(def),
        None => TaskSpec::load(name_or_path).map_err(|e| match e {
            Error::Io { .. } => Error::Config(format!("task `{name_or_path}`: {e}")),
            other => other,
        }),
    }
}

pub fn build_backend(spec: &ScorerSpec) -> Result<Box<dyn ScorerBackend>> {
    Ok(match spec {
        ScorerSpec::Fixture(path) => Box::new(FixtureScorer::load(path)?),
        ScorerSpec::Http(cfg) => Box::new(HttpScorer::new(cfg.clone())?),
    })
}

/// 100 × correct / total. Every prediction must match exactly one gold
/// sample and every gold sample must be predicted.
pub fn accuracy(preds: &[Prediction], gold: &Corpus) -> Result<f64> {
    if gold.is_empty() || preds.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty corpus".into()));
    }
    if preds.len() != gold.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} gold samples",
            preds.len(),
            gold.len()
        )));
    }
    let mut seen = std::collections::HashSet::new();
    let mut correct = 0usize;
    for p in preds {
        let s = gold
            .get(&p.input_id)
            .ok_or_else(|| Error::UnknownSample(p.input_id.clone()))?;
        if !seen.insert(p.input_id.as_str()) {
            return Err(Error::DuplicateId(p.input_id.clone()));
        }
        let g = s
            .gold
            .as_ref()
            .ok_or_else(|| Error::MissingGold(s.id.clone()))?;
        if g.index == p.label.index {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / gold.len() as f64)
}

fn label_counts(test: &Corpus, spec: &TaskSpec) -> Result<Vec<usize>> {
    if test.is_empty() {
        return Err(Error::InvalidArgument(
            "majority baseline of an empty corpus".into(),
        ));
    }
    let mut counts = vec![0usize; spec.num_labels()];
    for s in test.samples() {
        let g = s
            .gold
            .as_ref()
            .ok_or_else(|| Error::MissingGold(s.id.clone()))?;
        *counts.get_mut(g.index).ok_or(Error::LabelOutOfRange {
            index: g.index,
            count: spec.num_labels(),
        })? += 1;
    }
    Ok(counts)
}

/// Accuracy of always predicting the most frequent gold label.
pub fn majority_baseline(test: &Corpus, spec: &TaskSpec) -> Result<f64> {
    let counts = label_counts(test, spec)?;
    let best = counts.iter().copied().max().unwrap_or(0);
    Ok(100.0 * best as f64 / test.len() as f64)
}

fn majority_label(test: &Corpus, spec: &TaskSpec) -> Result<usize> {
    let counts = label_counts(test, spec)?;
    let best = counts.iter().copied().max().unwrap_or(0);
    Ok(counts.iter().position(|&c| c == best).unwrap_or(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub language: String,
    pub method: Method,
    pub k: usize,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub task: String,
    pub languages: Vec<String>,
    pub hrl_language: String,
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn get(&self, language: &str, method: Method, k: usize) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.language == language && r.method == method && r.k == k)
    }

    pub fn lrls(&self) -> impl Iterator<Item = &String> {
        self.languages
            .iter()
            .filter(move |l| **l != self.hrl_language)
    }

    /// (method, k) row keys in first-seen order.
    pub fn keys(&self) -> Vec<(Method, usize)> {
        let mut keys: Vec<(Method, usize)> = Vec::new();
        for r in &self.rows {
            if !keys.contains(&(r.method, r.k)) {
                keys.push((r.method, r.k));
            }
        }
        keys
    }

    /// Unweighted mean over the LRL cells of a row, before rounding.
    pub fn average(&self, method: Method, k: usize) -> Option<f64> {
        let cells: Vec<f64> = self
            .lrls()
            .map(|l| self.get(l, method, k).map(|r| r.accuracy))
            .collect::<Option<_>>()?;
        if cells.is_empty() {
            return None;
        }
        Some(cells.iter().sum::<f64>() / cells.len() as f64)
    }

    pub fn render(&self) -> String {
        let lrls: Vec<&String> = self.lrls().collect();
        let hrls: Vec<&String> = self
            .languages
            .iter()
            .filter(|l| **l == self.hrl_language)
            .collect();
        let mut out = format!("task: {}\n", self.task);
        let mut header = format!("{:<16} {:>3}", "Method", "k");
        for l in &lrls {
            header.push_str(&format!(" {l:>6}"));
        }
        header.push_str(&format!(" {:>6}", "Avg"));
        for l in &hrls {
            header.push_str(&format!(" {l:>6}"));
        }
        out.push_str(header.trim_end());
        out.push('\n');
        for (m, k) in self.keys() {
            let mut line = format!(
                "{:<16} {:>3}",
                m.display(),
                if m.uses_k() {
                    k.to_string()
                } else {
                    "-".into()
                }
            );
            for l in &lrls {
                let cell = self
                    .get(l, m, k)
                    .map(|r| fmt1(r.accuracy))
                    .unwrap_or_else(|| "-".into());
                line.push_str(&format!(" {cell:>6}"));
            }
            let avg = self.average(m, k).map(fmt1).unwrap_or_else(|| "-".into());
            line.push_str(&format!(" {avg:>6}"));
            for l in &hrls {
                let cell = self
                    .get(l, m, k)
                    .map(|r| fmt1(r.accuracy))
                    .unwrap_or_else(|| "-".into());
                line.push_str(&format!(" {cell:>6}"));
            }
            out.push_str(line.trim_end());
            out.push('\n');
        }
        out
    }
}

/// Task-level summary: one row per method, one column per task, plus Avg.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverviewTable {
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl OverviewTable {
    pub fn from_fixture(rows: &[OverviewRow]) -> Self {
        OverviewTable {
            columns: vec!["Amazon".into(), "AGNews".into(), "XNLI".into()],
            rows: rows
                .iter()
                .map(|r| (r.method.clone(), r.tasks().to_vec()))
                .collect(),
        }
    }

    /// LRL averages of each (method, k) row across several task tables.
    pub fn from_results(tables: &[ResultTable], k: usize) -> Self {
        let mut methods: Vec<Method> = Vec::new();
        for t in tables {
            for (m, _) in t.keys() {
                if !methods.contains(&m) {
                    methods.push(m);
                }
            }
        }
        methods.sort();
        let rows = methods
            .into_iter()
            .filter_map(|m| {
                let key_k = if m.uses_k() { k } else { 0 };
                let vals: Option<Vec<f64>> = tables.iter().map(|t| t.average(m, key_k)).collect();
                vals.map(|v| (m.display().to_string(), v))
            })
            .collect();
        OverviewTable {
            columns: tables.iter().map(|t| t.task.clone()).collect(),
            rows,
        }
    }

    pub fn average(values: &[f64]) -> f64 {
        values.iter().sum::<f64>() / values.len() as f64
    }

    pub fn render(&self) -> String {
        let mut out = format!("{:<16}", "");
        for c in &self.columns {
            out.push_str(&format!(" {c:>7}"));
        }
        out.push_str(&format!(" {:>7}\n", "Avg"));
        for (name, vals) in &self.rows {
            let mut line = format!("{name:<16}");
            for v in vals {
                line.push_str(&format!(" {:>7}", fmt1(*v)));
            }
            line.push_str(&format!(" {:>7}", fmt1(Self::average(vals))));
            out.push_str(&line);
            out.push('\n');
        }
        out
    }
}

/// Persisted record of one prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub language: String,
    pub method: Method,
    pub k: usize,
    pub input_id: String,
    pub gold: String,
    pub label: String,
    pub correct: bool,
    pub per_label_score: Vec<f64>,
    pub context_ids: Vec<String>,
    pub prompts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitsRecord {
    pub language: String,
    pub input_id: String,
    pub retriever: String,
    pub k: usize,
    pub hits: Vec<RetrievalHit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub task: String,
    pub pattern_index: usize,
    pub languages: Vec<String>,
    pub hrl_language: String,
    pub methods: Vec<Method>,
    pub strategy: Strategy,
    pub k: Vec<usize>,
    pub seed: u64,
    pub backend: String,
    pub bor_renormalize: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub table: ResultTable,
    pub manifest: RunManifest,
    pub output_dir: PathBuf,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the random-context draw for one input at one k.
pub fn derive_seed(seed: u64, language_pos: usize, input_pos: usize, k: usize) -> u64 {
    [language_pos, input_pos, k]
        .into_iter()
        .fold(splitmix64(seed), |acc, v| splitmix64(acc ^ v as u64))
}

struct InputOutcome {
    preds: Vec<PredictionRecord>,
    hits: Vec<HitsRecord>,
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    spec: &'a TaskSpec,
    predictor: &'a Predictor<'a>,
    pool_index: &'a EmbeddingIndex,
    language: &'a str,
    language_pos: usize,
    majority: usize,
}

fn record(
    ctx: &Ctx,
    method: Method,
    k: usize,
    sample: &Sample,
    p: Prediction,
) -> Result<PredictionRecord> {
    let gold = sample
        .gold
        .as_ref()
        .ok_or_else(|| Error::MissingGold(sample.id.clone()))?;
    Ok(PredictionRecord {
        language: ctx.language.to_string(),
        method,
        k,
        input_id: sample.id.clone(),
        gold: gold.name.clone(),
        label: p.label.name.clone(),
        correct: p.label.index == gold.index,
        per_label_score: p.per_label_score,
        context_ids: p.context_ids,
        prompts: p.prompts,
    })
}

fn process_input(
    ctx: &Ctx,
    test_index: &EmbeddingIndex,
    pos: usize,
    sample: &Sample,
) -> Result<InputOutcome> {
    let cfg = ctx.cfg;
    let mut preds = Vec::new();
    let mut hits_out = Vec::new();
    let kmax = *cfg.k.last().expect("validated non-empty");
    let needs_query = cfg.methods.iter().any(|m| m.uses_k());
    let query = if needs_query {
        Some(
            test_index
                .vector(&sample.id)
                .ok_or_else(|| Error::UnknownSample(sample.id.clone()))?,
        )
    } else {
        None
    };
    let top = match query {
        Some(q)
            if cfg
                .methods
                .iter()
                .any(|m| matches!(m, Method::ParcLabeled | Method::ParcUnlabeled)) =>
        {
            let h = retrieve_top_k(q, ctx.pool_index, kmax)?;
            hits_out.push(HitsRecord {
                language: ctx.language.into(),
                input_id: sample.id.clone(),
                retriever: "top_k".into(),
                k: kmax,
                hits: h.clone(),
            });
            h
        }
        _ => Vec::new(),
    };

    for &m in &cfg.methods {
        match m {
            Method::Maj => {
                let label = ctx.spec.label(ctx.majority)?.clone();
                let p = Prediction {
                    input_id: sample.id.clone(),
                    label,
                    per_label_score: Vec::new(),
                    mode: Mode::Labeled,
                    strategy: Strategy::Single,
                    k: 0,
                    context_ids: Vec::new(),
                    prompts: Vec::new(),
                };
                preds.push(record(ctx, m, 0, sample, p)?);
            }
            Method::Direct => {
                let p = ctx.predictor.predict_direct(sample)?;
                preds.push(record(ctx, m, 0, sample, p)?);
            }
            Method::Random => {
                let q = query.expect("query loaded for k-dependent methods");
                for &k in &cfg.k {
                    let seed = derive_seed(cfg.seed, ctx.language_pos, pos, k);
                    let h = random_retrieve(q, ctx.pool_index, k, seed)?;
                    hits_out.push(HitsRecord {
                        language: ctx.language.into(),
                        input_id: sample.id.clone(),
                        retriever: "random".into(),
                        k,
                        hits: h.clone(),
                    });
                    let p = ctx.predictor.predict(sample, &h, m.mode(), cfg.strategy)?;
                    preds.push(record(ctx, m, k, sample, p)?);
                }
            }
            Method::ParcLabeled | Method::ParcUnlabeled => {
                for &k in &cfg.k {
                    let h = &top[..k.min(top.len())];
                    let p = ctx.predictor.predict(sample, h, m.mode(), cfg.strategy)?;
                    preds.push(record(ctx, m, k, sample, p)?);
                }
            }
        }
    }
    Ok(InputOutcome {
        preds,
        hits: hits_out,
    })
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(&item).expect("record serializes"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_reports(dir: &Path, table: &ResultTable) -> Result<()> {
    let txt = dir.join(REPORT_TXT);
    fs::write(&txt, table.render()).map_err(|e| Error::io(&txt, e))?;
    let json = dir.join(REPORT_JSON);
    let mut body = serde_json::to_string_pretty(table).expect("table serializes");
    body.push('\n');
    fs::write(&json, body).map_err(|e| Error::io(&json, e))
}

/// Accuracy table from persisted prediction records.
pub fn table_from_records(
    manifest: &RunManifest,
    records: &[PredictionRecord],
) -> Result<ResultTable> {
    let mut cells: BTreeMap<(usize, usize), (usize, usize)> = BTreeMap::new();
    let mut keys: Vec<(Method, usize)> = Vec::new();
    for m in &manifest.methods {
        if m.uses_k() {
            keys.extend(manifest.k.iter().map(|&k| (*m, k)));
        } else {
            keys.push((*m, 0));
        }
    }
    for r in records {
        let li = manifest
            .languages
            .iter()
            .position(|l| *l == r.language)
            .ok_or_else(|| {
                Error::InvalidArgument(format!("record for unlisted language `{}`", r.language))
            })?;
        let ki = keys
            .iter()
            .position(|&(m, k)| m == r.method && k == r.k)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "record for unlisted method {:?} k={}",
                    r.method, r.k
                ))
            })?;
        let cell = cells.entry((ki, li)).or_default();
        cell.1 += 1;
        if r.correct {
            cell.0 += 1;
        }
    }
    let mut rows = Vec::new();
    for (ki, &(method, k)) in keys.iter().enumerate() {
        for (li, lang) in manifest.languages.iter().enumerate() {
            let Some(&(correct, total)) = cells.get(&(ki, li)) else {
                continue;
            };
            rows.push(ResultRow {
                language: lang.clone(),
                method,
                k,
                correct,
                total,
                accuracy: 100.0 * correct as f64 / total as f64,
            });
        }
    }
    Ok(ResultTable {
        task: manifest.task.clone(),
        languages: manifest.languages.clone(),
        hrl_language: manifest.hrl_language.clone(),
        rows,
    })
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::MalformedRecord {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Rebuilds the result table of a finished run from its persisted artifacts.
pub fn derive_report(run_dir: impl AsRef<Path>) -> Result<ResultTable> {
    let dir = run_dir.as_ref();
    let mpath = dir.join(MANIFEST_FILE);
    let mtext = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: RunManifest =
        serde_json::from_str(&mtext).map_err(|e| Error::MalformedRecord {
            line: 1,
            message: e.to_string(),
        })?;
    let records: Vec<PredictionRecord> = read_jsonl(&dir.join(PREDICTIONS_FILE))?;
    table_from_records(&manifest, &records)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let backend = build_backend(&cfg.scorer)?;
    let cached = CachedScorer::new(backend, cfg.effective_cache())?;
    run_experiment_with(cfg, &cached)
}

/// Runs every configured method over every test set with the given backend.
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    backend: &dyn ScorerBackend,
) -> Result<RunOutput> {
    cfg.validate()?;
    let spec = cfg.task_spec()?;
    let pattern_index = cfg.pattern_index_for(&spec);
    let pattern = spec.pattern(pattern_index)?;
    let pool = load_corpus(&cfg.hrl_corpus, &spec)?;
    let pool_index = EmbeddingIndex::load_any(&cfg.hrl_index)?;
    for id in pool_index.ids() {
        if pool.get(id).is_none() {
            return Err(Error::UnknownSample(format!(
                "{id} (in HRL index but not in HRL corpus)"
            )));
        }
    }
    if cfg.methods.contains(&Method::ParcLabeled) || cfg.methods.contains(&Method::Random) {
        if let Some(s) = pool.samples().iter().find(|s| s.gold.is_none()) {
            return Err(Error::MissingGold(s.id.clone()));
        }
    }
    let predictor = Predictor::new(&spec, pattern, &pool, backend)
        .with_prompt_config(cfg.prompt.clone())
        .with_bor_renormalize(cfg.bor_renormalize);

    let mut all_preds = Vec::new();
    let mut all_hits = Vec::new();
    for (language_pos, set) in cfg.test.iter().enumerate() {
        let corpus = load_corpus(&set.corpus, &spec)?;
        if corpus.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "test set `{}` is empty",
                set.language
            )));
        }
        let test_index = if cfg.methods.iter().any(|m| m.uses_k()) {
            EmbeddingIndex::load_any(&set.index)?
        } else {
            EmbeddingIndex::build(vec!["_".into()], [vec![1.0f32]])?
        };
        let ctx = Ctx {
            cfg,
            spec: &spec,
            predictor: &predictor,
            pool_index: &pool_index,
            language: &set.language,
            language_pos,
            majority: majority_label(&corpus, &spec)?,
        };
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.sort_by(|&a, &b| corpus.samples()[a].id.cmp(&corpus.samples()[b].id));
        let outcomes = order
            .par_iter()
            .map(|&pos| {
                let s = &corpus.samples()[pos];
                process_input(&ctx, &test_index, pos, s).map_err(|e| e.at_input(&s.id))
            })
            .collect::<Result<Vec<_>>>()?;
        for o in outcomes {
            all_preds.extend(o.preds);
            all_hits.extend(o.hits);
        }
    }

    let manifest = RunManifest {
        task: spec.task_id().to_string(),
        pattern_index,
        languages: cfg.test.iter().map(|t| t.language.clone()).collect(),
        hrl_language: cfg.hrl_language.clone(),
        methods: cfg.methods.clone(),
        strategy: cfg.strategy,
        k: cfg.k.clone(),
        seed: cfg.seed,
        backend: backend.id(),
        bor_renormalize: cfg.bor_renormalize,
    };
    // Predictions are sorted by (language, method, k, input id) so the
    // files do not depend on the order methods ran in.
    let lang_pos = |l: &str| manifest.languages.iter().position(|x| x == l);
    all_preds.sort_by(|a, b| {
        (lang_pos(&a.language), a.method, a.k, &a.input_id).cmp(&(
            lang_pos(&b.language),
            b.method,
            b.k,
            &b.input_id,
        ))
    });

    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mpath = dir.join(MANIFEST_FILE);
    let mut mtext = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    mtext.push('\n');
    fs::write(&mpath, mtext).map_err(|e| Error::io(&mpath, e))?;
    write_jsonl(&dir.join(PREDICTIONS_FILE), &all_preds)?;
    write_jsonl(&dir.join(HITS_FILE), &all_hits)?;

    let table = table_from_records(&manifest, &all_preds)?;
    write_reports(dir, &table)?;
    Ok(RunOutput {
        table,
        manifest,
        output_dir: dir.clone(),
    })
}
