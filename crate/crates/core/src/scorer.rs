//! Scorer gateway: a uniform contract for mask-fill probabilities and
//! sentence embeddings, with fixture, HTTP and caching implementations.
//!
//! HTTP protocol spoken with a model sidecar:
//!
//! * `POST /score` `{"prompts":[..], "candidates":[[..],..]}` -> `{"probs":[[..],..]}`
//! * `POST /embed` `{"texts":[..]}` -> `{"vectors":[[..],..], "dim":D}`
//! * `GET /info` -> `{"model":.., "deterministic":bool}`

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Tolerance on the raw candidate mass reported by a backend.
pub const MASS_TOLERANCE: f64 = 1e-6;

/// Per-candidate probabilities for one prompt, aligned with its candidate list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScoreVector {
    probs: Vec<f64>,
}

impl ScoreVector {
    /// Rejects negative or non-finite entries and total mass above one.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidScore(format!(
                "probability {p} is not finite and non-negative"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if sum > 1.0 + MASS_TOLERANCE {
            return Err(Error::InvalidScore(format!(
                "probabilities sum to {sum} > 1"
            )));
        }
        Ok(ScoreVector { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> Option<usize> {
        argmax(&self.probs)
    }
}

pub(crate) fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some(b) if values[b] >= v => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Rescales to unit mass. The argmax is unchanged.
pub fn renormalize(s: &ScoreVector) -> Result<ScoreVector> {
    let sum = s.sum();
    if sum <= 0.0 {
        return Err(Error::DegenerateScore);
    }
    Ok(ScoreVector {
        probs: s.probs.iter().map(|p| p / sum).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub prompt: String,
    pub candidates: Vec<String>,
}

impl ScoreRequest {
    pub fn new(prompt: impl Into<String>, candidates: &[String]) -> Self {
        ScoreRequest {
            prompt: prompt.into(),
            candidates: candidates.to_vec(),
        }
    }
}

/// A source of mask-fill probabilities and sentence embeddings.
pub trait ScorerBackend: Send + Sync {
    /// Stable identifier; part of every cache key.
    fn id(&self) -> String;

    /// Whether identical inputs always produce identical outputs.
    fn deterministic(&self) -> bool;

    /// One score vector per request, in request order.
    fn score(&self, batch: &[ScoreRequest]) -> Result<Vec<ScoreVector>>;

    fn embed(&self, _texts: &[String]) -> Result<Vec<Vec<f32>>> {
        Err(Error::Unsupported(self.id()))
    }
}

impl<T: ScorerBackend + ?Sized> ScorerBackend for Box<T> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn deterministic(&self) -> bool {
        (**self).deterministic()
    }
    fn score(&self, batch: &[ScoreRequest]) -> Result<Vec<ScoreVector>> {
        (**self).score(batch)
    }
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        (**self).embed(texts)
    }
}

pub fn prompt_sha256(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// SHA-256 over the backend id, prompt and ordered candidate list.
pub fn cache_key(backend_id: &str, request: &ScoreRequest) -> String {
    // JSON encoding keeps field boundaries unambiguous.
    let material = serde_json::to_vec(&(backend_id, &request.prompt, &request.candidates))
        .expect("strings serialize");
    hex::encode(Sha256::digest(&material))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub prompt_sha256: String,
    /// Optional human-readable copy of the prompt; ignored on lookup.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    pub scores: BTreeMap<String, f64>,
}

/// Deterministic backend reading probabilities from a JSON-lines table
/// keyed by prompt hash.
#[derive(Debug, Clone, Default)]
pub struct FixtureScorer {
    name: String,
    table: HashMap<String, BTreeMap<String, f64>>,
}

impl FixtureScorer {
    pub fn from_entries(
        name: impl Into<String>,
        entries: impl IntoIterator<Item = FixtureEntry>,
    ) -> Result<Self> {
        let mut table = HashMap::new();
        for entry in entries {
            for (word, p) in &entry.scores {
                if !p.is_finite() || *p < 0.0 {
                    return Err(Error::InvalidScore(format!(
                        "fixture {}: `{word}` has probability {p}",
                        entry.prompt_sha256
                    )));
                }
            }
            table.insert(entry.prompt_sha256, entry.scores);
        }
        Ok(FixtureScorer {
            name: name.into(),
            table,
        })
    }

    pub fn parse(name: impl Into<String>, text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: FixtureEntry =
                serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            entries.push(entry);
        }
        Self::from_entries(name, entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(format!("fixture:{}", path.display()), &text)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn fixture_score(&self, prompt: &str, candidates: &[String]) -> Result<ScoreVector> {
        let hash = prompt_sha256(prompt);
        let scores = self.table.get(&hash).ok_or_else(|| Error::FixtureMiss {
            hash: hash.clone(),
            candidate: None,
        })?;
        let probs = candidates
            .iter()
            .map(|c| {
                scores.get(c).copied().ok_or_else(|| Error::FixtureMiss {
                    hash: hash.clone(),
                    candidate: Some(c.clone()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ScoreVector::new(probs)
    }
}

impl ScorerBackend for FixtureScorer {
    fn id(&self) -> String {
        self.name.clone()
    }

    fn deterministic(&self) -> bool {
        true
    }

    fn score(&self, batch: &[ScoreRequest]) -> Result<Vec<ScoreVector>> {
        batch
            .iter()
            .map(|r| self.fixture_score(&r.prompt, &r.candidates))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub url: String,
    pub max_batch: usize,
    /// Extra attempts after a transport failure.
    pub retries: usize,
    pub timeout_secs: u64,
    /// Declared determinism of the remote model.
    pub deterministic: bool,
    /// Overrides the backend id used in cache keys.
    pub backend_id: Option<String>,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            url: "http://127.0.0.1:8765".into(),
            max_batch: 32,
            retries: 2,
            timeout_secs: 120,
            deterministic: true,
            backend_id: None,
        }
    }
}

#[derive(Serialize)]
struct ScoreBody<'a> {
    prompts: Vec<&'a str>,
    candidates: Vec<&'a [String]>,
}

#[derive(Deserialize)]
struct ScoreReply {
    probs: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct EmbedBody<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedReply {
    vectors: Vec<Vec<f32>>,
    dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarInfo {
    pub model: String,
    pub deterministic: bool,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

/// Client for a model sidecar speaking the JSON protocol above.
pub struct HttpScorer {
    cfg: HttpConfig,
    client: reqwest::blocking::Client,
    requests: AtomicUsize,
}

impl HttpScorer {
    pub fn new(cfg: HttpConfig) -> Result<Self> {
        if cfg.max_batch == 0 {
            return Err(Error::Config("max_batch must be positive".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(HttpScorer {
            cfg,
            client,
            requests: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.cfg
    }

    /// Number of HTTP requests issued, including retries.
    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    fn endpoint(&self, path: &str) -> String {
        format!("{}/{}", self.cfg.url.trim_end_matches('/'), path)
    }

    fn send<B: Serialize, R: for<'de> Deserialize<'de>>(
        &self,
        path: &str,
        body: Option<&B>,
    ) -> Result<R> {
        let url = self.endpoint(path);
        let mut last = None;
        for _ in 0..=self.cfg.retries {
            self.requests.fetch_add(1, Ordering::SeqCst);
            let req = match body {
                Some(b) => self.client.post(&url).json(b),
                None => self.client.get(&url),
            };
            match req.send() {
                Ok(resp) if resp.status().is_server_error() => {
                    last = Some(format!("{url}: HTTP {}", resp.status()));
                }
                Ok(resp) if !resp.status().is_success() => {
                    let status = resp.status();
                    let text = resp.text().unwrap_or_default();
                    return Err(Error::Protocol(format!("{url}: HTTP {status}: {text}")));
                }
                Ok(resp) => {
                    let bytes = resp.bytes().map_err(|e| Error::Transport(e.to_string()))?;
                    return serde_json::from_slice(&bytes)
                        .map_err(|e| Error::Protocol(format!("{url}: invalid response: {e}")));
                }
                Err(e) => last = Some(format!("{url}: {e}")),
            }
        }
        Err(Error::Transport(last.unwrap_or_default()))
    }

    pub fn info(&self) -> Result<SidecarInfo> {
        self.send::<(), _>("info", None)
    }

    /// Scores one batch (at most `max_batch` requests) in a single call.
    pub fn http_score(&self, batch: &[ScoreRequest]) -> Result<Vec<ScoreVector>> {
        if batch.len() > self.cfg.max_batch {
            return Err(Error::InvalidArgument(format!(
                "batch of {} exceeds max_batch {}",
                batch.len(),
                self.cfg.max_batch
            )));
        }
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let body = ScoreBody {
            prompts: batch.iter().map(|r| r.prompt.as_str()).collect(),
            candidates: batch.iter().map(|r| r.candidates.as_slice()).collect(),
        };
        let reply: ScoreReply = self.send("score", Some(&body))?;
        if reply.probs.len() != batch.len() {
            return Err(Error::Protocol(format!(
                "{} score vectors for {} prompts",
                reply.probs.len(),
                batch.len()
            )));
        }
        reply
            .probs
            .into_iter()
            .zip(batch)
            .enumerate()
            .map(|(i, (probs, req))| {
                if probs.len() != req.candidates.len() {
                    return Err(Error::Protocol(format!(
                        "response {i}: {} probabilities for {} candidates",
                        probs.len(),
                        req.candidates.len()
                    )));
                }
                ScoreVector::new(probs).map_err(|e| Error::Protocol(format!("response {i}: {e}")))
            })
            .collect()
    }
}

impl ScorerBackend for HttpScorer {
    fn id(&self) -> String {
        self.cfg
            .backend_id
            .clone()
            .unwrap_or_else(|| format!("http:{}", self.cfg.url))
    }

    fn deterministic(&self) -> bool {
        self.cfg.deterministic
    }

    fn score(&self, batch: &[ScoreRequest]) -> Result<Vec<ScoreVector>> {
        let mut out = Vec::with_capacity(batch.len());
        for chunk in batch.chunks(self.cfg.max_batch) {
            out.extend(self.http_score(chunk)?);
        }
        Ok(out)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.cfg.max_batch) {
            let reply: EmbedReply = self.send("embed", Some(&EmbedBody { texts: chunk }))?;
            if reply.vectors.len() != chunk.len() {
                return Err(Error::Protocol(format!(
                    "{} vectors for {} texts",
                    reply.vectors.len(),
                    chunk.len()
                )));
            }
            for v in reply.vectors {
                if v.len() != reply.dim {
                    return Err(Error::Protocol(format!(
                        "vector of length {} but dim {}",
                        v.len(),
                        reply.dim
                    )));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Protocol("non-finite embedding component".into()));
                }
                out.push(v);
            }
        }
        Ok(out)
    }
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CacheConfig {
    pub enabled: bool,
    /// Append-only JSON-lines file; in-memory only when absent.
    pub path: Option<PathBuf>,
    /// Requests per backend call.
    pub max_batch: usize,
    /// Concurrent backend calls.
    pub max_inflight: usize,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            enabled: true,
            path: None,
            max_batch: 32,
            max_inflight: 4,
        }
    }
}

/// Wraps a backend with a content-addressed score cache.
pub struct CachedScorer<B> {
    inner: B,
    cfg: CacheConfig,
    memory: RwLock<HashMap<String, ScoreVector>>,
    file: Option<Mutex<File>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl<B: ScorerBackend> CachedScorer<B> {
    pub fn new(inner: B, cfg: CacheConfig) -> Result<Self> {
        if cfg.max_batch == 0 || cfg.max_inflight == 0 {
            return Err(Error::Config(
                "max_batch and max_inflight must be positive".into(),
            ));
        }
        let mut memory = HashMap::new();
        let mut file = None;
        if let (true, Some(path)) = (cfg.enabled, &cfg.path) {
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            if path.exists() {
                let f = File::open(path).map_err(|e| Error::io(path, e))?;
                for line in BufReader::new(f).lines() {
                    let line = line.map_err(|e| Error::io(path, e))?;
                    // A torn final write is simply skipped.
                    let Ok(entry) = serde_json::from_str::<CacheLine>(&line) else {
                        continue;
                    };
                    if let Ok(sv) = ScoreVector::new(entry.probs) {
                        memory.insert(entry.key, sv);
                    }
                }
            }
            let f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            file = Some(Mutex::new(f));
        }
        Ok(CachedScorer {
            inner,
            cfg,
            memory: RwLock::new(memory),
            file,
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        })
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::SeqCst)
    }

    fn store(&self, key: String, sv: ScoreVector) -> Result<()> {
        let mut memory = self.memory.write().expect("cache lock poisoned");
        if memory.contains_key(&key) {
            return Ok(());
        }
        if let Some(file) = &self.file {
            let mut line = serde_json::to_string(&CacheLine {
                key: key.clone(),
                probs: sv.probs.clone(),
            })
            .expect("cache line serializes");
            line.push('\n');
            let mut f = file.lock().expect("cache file lock poisoned");
            f.write_all(line.as_bytes())
                .and_then(|_| f.flush())
                .map_err(|e| Error::io(self.cfg.path.clone().unwrap_or_default(), e))?;
        }
        memory.insert(key, sv);
        Ok(())
    }
}

impl<B: ScorerBackend> ScorerBackend for CachedScorer<B> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn deterministic(&self) -> bool {
        self.inner.deterministic()
    }

    fn score(&self, batch: &[ScoreRequest]) -> Result<Vec<ScoreVector>> {
        if !self.cfg.enabled {
            return self.inner.score(batch);
        }
        let id = self.inner.id();
        let keys: Vec<String> = batch.iter().map(|r| cache_key(&id, r)).collect();

        let mut pending: Vec<usize> = Vec::new();
        {
            let memory = self.memory.read().expect("cache lock poisoned");
            let mut queued = std::collections::HashSet::new();
            for (i, key) in keys.iter().enumerate() {
                if !memory.contains_key(key) && queued.insert(key.as_str()) {
                    pending.push(i);
                }
            }
        }
        self.hits
            .fetch_add(batch.len() - pending.len(), Ordering::SeqCst);
        self.misses.fetch_add(pending.len(), Ordering::SeqCst);

        let chunks: Vec<&[usize]> = pending.chunks(self.cfg.max_batch).collect();
        for wave in chunks.chunks(self.cfg.max_inflight) {
            let results: Vec<Result<Vec<ScoreVector>>> = std::thread::scope(|scope| {
                let handles: Vec<_> = wave
                    .iter()
                    .map(|chunk| {
                        let reqs: Vec<ScoreRequest> =
                            chunk.iter().map(|&i| batch[i].clone()).collect();
                        scope.spawn(move || self.inner.score(&reqs))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("backend thread panicked"))
                    .collect()
            });
            for (chunk, result) in wave.iter().zip(results) {
                let vectors = result?;
                if vectors.len() != chunk.len() {
                    return Err(Error::Protocol(format!(
                        "backend returned {} vectors for {} requests",
                        vectors.len(),
                        chunk.len()
                    )));
                }
                for (&i, sv) in chunk.iter().zip(vectors) {
                    self.store(keys[i].clone(), sv)?;
                }
            }
        }

        let memory = self.memory.read().expect("cache lock poisoned");
        Ok(keys
            .iter()
            .map(|k| memory.get(k).cloned().expect("every key resolved"))
            .collect())
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        self.inner.embed(texts)
    }
}

/// Deterministic stand-in model: each candidate gets a pseudo-random weight
/// derived from the SHA-256 of (prompt, candidate), scaled to sum to `mass`.
#[derive(Debug, Clone)]
pub struct HashScorer {
    mass: f64,
}

impl HashScorer {
    pub fn new(mass: f64) -> Result<Self> {
        if !(mass > 0.0 && mass <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "mass must be in (0, 1], got {mass}"
            )));
        }
        Ok(HashScorer { mass })
    }

    fn weight(prompt: &str, candidate: &str) -> f64 {
        let digest = Sha256::new()
            .chain_update(prompt.as_bytes())
            .chain_update([0u8])
            .chain_update(candidate.as_bytes())
            .finalize();
        let mut word = [0u8; 8];
        word.copy_from_slice(&digest[..8]);
        // 53 random bits, shifted away from zero
        ((u64::from_le_bytes(word) >> 11) as f64 + 1.0) / (1u64 << 53) as f64
    }
}

impl Default for HashScorer {
    fn default() -> Self {
        HashScorer { mass: 0.9 }
    }
}

impl ScorerBackend for HashScorer {
    fn id(&self) -> String {
        format!("hash:{}", self.mass)
    }

    fn deterministic(&self) -> bool {
        true
    }

    fn score(&self, batch: &[ScoreRequest]) -> Result<Vec<ScoreVector>> {
        batch
            .iter()
            .map(|r| {
                let w: Vec<f64> = r
                    .candidates
                    .iter()
                    .map(|c| Self::weight(&r.prompt, c))
                    .collect();
                let total: f64 = w.iter().sum();
                ScoreVector::new(w.iter().map(|x| x / total * self.mass).collect())
            })
            .collect()
    }
}
