//! Regenerates the toy corpora, embeddings and fixture scores under
//! `testdata/`. Scores come from `HashScorer`; every request made during a
//! full run of `testdata/toy/eval.json` is recorded into `scores.jsonl`.
//!
//!     cargo run -p parc-core --example gen_toy

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use parc_core::harness::{run_experiment_with, ExperimentConfig};
use parc_core::scorer::{prompt_sha256, FixtureEntry};
use parc_core::{HashScorer, Result, ScoreRequest, ScoreVector, ScorerBackend};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

struct Recorder<B> {
    inner: B,
    seen: Mutex<BTreeMap<String, FixtureEntry>>,
}

impl<B: ScorerBackend> ScorerBackend for Recorder<B> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn deterministic(&self) -> bool {
        true
    }

    fn score(&self, batch: &[ScoreRequest]) -> Result<Vec<ScoreVector>> {
        let out = self.inner.score(batch)?;
        let mut seen = self.seen.lock().unwrap();
        for (r, sv) in batch.iter().zip(&out) {
            let hash = prompt_sha256(&r.prompt);
            seen.entry(hash.clone()).or_insert_with(|| FixtureEntry {
                prompt_sha256: hash,
                prompt: Some(r.prompt.clone()),
                scores: r
                    .candidates
                    .iter()
                    .cloned()
                    .zip(sv.probs().iter().copied())
                    .collect(),
            });
        }
        Ok(out)
    }
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) {
    let mut text = String::new();
    for l in lines {
        text.push_str(&l);
        text.push('\n');
    }
    fs::write(path, text).unwrap();
}

fn single(id: &str, text: &str, lang: &str, label: &str) -> String {
    json!({"id": id, "segments": [text], "language": lang, "label": label}).to_string()
}

fn balanced_sets(dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    let amazon = [
        ("neg", "Broke after one day."),
        ("pos", "Works as described."),
        ("neg", "Waste of money."),
        ("pos", "Very happy with it."),
        ("neg", "Arrived damaged."),
        ("pos", "Would buy again."),
        ("neg", "Stopped charging."),
        ("pos", "Sturdy and light."),
    ];
    write_lines(
        &dir.join("amazon.jsonl"),
        amazon
            .iter()
            .enumerate()
            .map(|(i, (l, t))| single(&format!("a{i}"), t, "af", l)),
    );
    let agnews = [
        ("World", "Talks resume in Geneva."),
        ("Sports", "Late goal wins the derby."),
        ("Business", "Shares climb on earnings."),
        ("Tech", "New phone chip announced."),
        ("World", "Flooding hits coastal towns."),
        ("Sports", "Champion retires at 34."),
        ("Business", "Bank raises interest rates."),
        ("Tech", "Browser update fixes bugs."),
    ];
    write_lines(
        &dir.join("agnews.jsonl"),
        agnews
            .iter()
            .enumerate()
            .map(|(i, (l, t))| single(&format!("g{i}"), t, "ta", l)),
    );
    let xnli = [
        ("entailment", "A man is sleeping.", "Someone rests."),
        ("neutral", "A man is sleeping.", "He is tired."),
        ("contradiction", "A man is sleeping.", "He is running."),
        ("entailment", "Two kids play.", "Children are playing."),
        ("neutral", "Two kids play.", "They are brothers."),
        ("contradiction", "Two kids play.", "Nobody is outside."),
        ("entailment", "It is raining.", "The ground is wet."),
        ("neutral", "It is raining.", "It rains daily."),
        ("contradiction", "It is raining.", "The sky is clear."),
    ];
    write_lines(
        &dir.join("xnli.jsonl"),
        xnli.iter().enumerate().map(|(i, (l, a, b))| {
            json!({"id": format!("x{i}"), "segments": [a, b], "language": "sw", "label": l})
                .to_string()
        }),
    );
}

fn vector(rng: &mut ChaCha8Rng, center: &[f32]) -> Vec<f32> {
    center
        .iter()
        .map(|c| c + rng.random_range(-0.4f32..0.4))
        .collect()
}

fn tsv_line(id: &str, v: &[f32]) -> String {
    let vals: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("{id}\t{}", vals.join(","))
}

fn toy_run(dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let dim = 8;
    let pos_center: Vec<f32> = (0..dim).map(|i| if i < 4 { 1.0 } else { 0.1 }).collect();
    let neg_center: Vec<f32> = (0..dim).map(|i| if i < 4 { 0.1 } else { 1.0 }).collect();
    let center = |label: &str| {
        if label == "pos" {
            &pos_center
        } else {
            &neg_center
        }
    };

    let hrl = [
        ("pos", "Great value for the price."),
        ("neg", "The battery died within a week."),
        ("pos", "Exactly what I needed."),
        ("neg", "Poor quality stitching."),
        ("pos", "Fast shipping and well packed."),
        ("neg", "Instructions were useless."),
        ("pos", "My kids love it."),
        ("neg", "Returned it the same day."),
        ("pos", "Comfortable and stylish."),
        ("neg", "Smells strange and feels cheap."),
        ("pos", "Five stars, no complaints."),
        ("neg", "Does not fit as advertised."),
    ];
    write_lines(
        &dir.join("hrl.jsonl"),
        hrl.iter()
            .enumerate()
            .map(|(i, (l, t))| single(&format!("en{i:02}"), t, "en", l)),
    );
    write_lines(
        &dir.join("hrl.tsv"),
        hrl.iter()
            .enumerate()
            .map(|(i, (l, _))| tsv_line(&format!("en{i:02}"), &vector(&mut rng, center(l)))),
    );

    let af = [
        ("pos", "Uitstekende produk, werk perfek."),
        ("neg", "Dit het na twee dae gebreek."),
        ("pos", "Baie tevrede met die aankoop."),
        ("neg", "Swak gehalte, nie die moeite werd nie."),
        ("pos", "Vinnige aflewering en goeie prys."),
        ("neg", "Die grootte is heeltemal verkeerd."),
        ("pos", "Ek sal dit weer koop."),
        ("neg", "Dit werk glad nie."),
    ];
    write_lines(
        &dir.join("test_af.jsonl"),
        af.iter()
            .enumerate()
            .map(|(i, (l, t))| single(&format!("af{i}"), t, "af", l)),
    );
    write_lines(
        &dir.join("test_af.tsv"),
        af.iter()
            .enumerate()
            .map(|(i, (l, _))| tsv_line(&format!("af{i}"), &vector(&mut rng, center(l)))),
    );

    let en = [
        ("pos", "Really solid build."),
        ("neg", "Screen cracked on arrival."),
        ("pos", "Works great with my laptop."),
        ("neg", "Too loud to use at night."),
    ];
    write_lines(
        &dir.join("test_en.jsonl"),
        en.iter()
            .enumerate()
            .map(|(i, (l, t))| single(&format!("ent{i}"), t, "en", l)),
    );
    write_lines(
        &dir.join("test_en.tsv"),
        en.iter()
            .enumerate()
            .map(|(i, (l, _))| tsv_line(&format!("ent{i}"), &vector(&mut rng, center(l)))),
    );

    let config = json!({
        "task": "amazon",
        "test": [
            {"language": "af", "corpus": "test_af.jsonl", "index": "test_af.tsv"},
            {"language": "en", "corpus": "test_en.jsonl", "index": "test_en.tsv"}
        ],
        "hrl_corpus": "hrl.jsonl",
        "hrl_index": "hrl.tsv",
        "scorer": {"fixture": "scores.jsonl"},
        "methods": ["maj", "direct", "random", "parc_unlabeled", "parc_labeled"],
        "strategy": "bor",
        "k": [1, 3],
        "seed": 7,
        "output_dir": "out",
        "cache": {"enabled": false}
    });
    let cfg_path = dir.join("eval.json");
    fs::write(
        &cfg_path,
        serde_json::to_string_pretty(&config).unwrap() + "\n",
    )
    .unwrap();

    let mut cfg = ExperimentConfig::load(&cfg_path).unwrap();
    let tmp = std::env::temp_dir().join("parc_gen_toy_out");
    cfg.output_dir = tmp.clone();
    let recorder = Recorder {
        inner: HashScorer::default(),
        seen: Mutex::new(BTreeMap::new()),
    };
    let out = run_experiment_with(&cfg, &recorder).unwrap();
    // the same requests again in CONC form, so either strategy replays
    cfg.strategy = parc_core::Strategy::Conc;
    run_experiment_with(&cfg, &recorder).unwrap();
    let _ = fs::remove_dir_all(&tmp);

    let seen = recorder.seen.into_inner().unwrap();
    write_lines(
        &dir.join("scores.jsonl"),
        seen.values().map(|e| serde_json::to_string(e).unwrap()),
    );
    eprintln!("{} fixture prompts", seen.len());
    eprint!("{}", out.table.render());
}

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("testdata");
    balanced_sets(&root.join("balanced"));
    toy_run(&root.join("toy"));
}
