//! Seeded random tasks, pools, indices and retrieval cases for property
//! tests and benchmarks.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, RngCore};

use crate::corpus::{builtin, Corpus, Sample, TaskSpec};
use crate::embedding::EmbeddingIndex;
use crate::retrieval::RetrievalHit;

const WORDS: &[&str] = &[
    "river",
    "lamp",
    "quiet",
    "orange",
    "market",
    "seven",
    "paper",
    "storm",
    "bread",
    "window",
    "slow",
    "happy",
    "garden",
    "metal",
    "north",
    "song",
    "cheap",
    "broken",
    "bright",
    "Kaapstad",
    "mooi",
    "sokoni",
    "ನದಿ",
    "طوفان",
    "蜂蜜",
    "très",
    "naïve",
    "zweig",
    "yes,",
    "no.",
    "a",
    "the",
];

pub const TASKS: [&str; 4] = ["amazon", "agnews", "xnli", "xnli_rw"];

pub fn task(name: &str) -> TaskSpec {
    TaskSpec::from_def(builtin::by_name(name).expect("builtin task"))
        .expect("builtin task is valid")
}

pub fn sentence<R: Rng + ?Sized>(rng: &mut R) -> String {
    let n = rng.random_range(1..=8);
    (0..n)
        .map(|_| *WORDS.choose(rng).expect("non-empty"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// A sample with the task's arity, optionally with a random gold label.
pub fn sample<R: Rng + ?Sized>(rng: &mut R, spec: &TaskSpec, id: String, labeled: bool) -> Sample {
    let segments = (0..spec.arity().segments())
        .map(|_| sentence(rng))
        .collect();
    let s = Sample::new(id, segments, "xx");
    if labeled {
        let i = rng.random_range(0..spec.num_labels());
        s.with_gold(spec.label(i).expect("index in range").clone())
    } else {
        s
    }
}

pub fn pool<R: Rng + ?Sized>(rng: &mut R, spec: &TaskSpec, n: usize, labeled: bool) -> Corpus {
    let samples = (0..n)
        .map(|i| sample(rng, spec, format!("h{i}"), labeled))
        .collect();
    Corpus::new(spec, samples).expect("generated ids are unique")
}

/// `n` Gaussian-ish rows of width `dim`, ids `r0..`.
pub fn index<R: RngCore + ?Sized>(rng: &mut R, n: usize, dim: usize) -> EmbeddingIndex {
    let ids = (0..n).map(|i| format!("r{i}")).collect();
    let rows: Vec<Vec<f32>> = (0..n).map(|_| vector(rng, dim)).collect();
    EmbeddingIndex::build(ids, rows).expect("random rows are non-zero")
}

pub fn vector<R: RngCore + ?Sized>(rng: &mut R, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0f32..1.0)).sum())
            .collect();
        if v.iter().any(|&x| x != 0.0) {
            return v;
        }
    }
}

/// One prediction problem: a task, a pattern, a pool and `k` distinct hits
/// into it.
#[derive(Debug, Clone)]
pub struct Case {
    pub spec: TaskSpec,
    pub pattern_index: usize,
    pub pool: Corpus,
    pub input: Sample,
    pub hits: Vec<RetrievalHit>,
}

pub fn case<R: Rng + ?Sized>(rng: &mut R, k: usize, labeled: bool) -> Case {
    let spec = task(TASKS.choose(rng).expect("non-empty"));
    let pattern_index = rng.random_range(0..spec.patterns().len());
    let n = rng.random_range(k.max(1)..=k.max(1) + 6);
    let pool = pool(rng, &spec, n, labeled);
    let input = sample(rng, &spec, "q".into(), false);
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(rng);
    let mut sims: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
    sims.sort_by(|a, b| b.total_cmp(a));
    let hits = ids[..k]
        .iter()
        .zip(sims)
        .enumerate()
        .map(|(rank, (&i, similarity))| RetrievalHit {
            sample_id: pool.samples()[i].id.clone(),
            similarity,
            rank,
        })
        .collect();
    Case {
        spec,
        pattern_index,
        pool,
        input,
        hits,
    }
}
