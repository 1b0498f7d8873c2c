//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use itertools::Itertools;
use parc_core::analysis::{
    self, reproduce_paper_correlations, ColumnMapping, Method as CorrMethod,
};
use parc_core::corpus::load_corpus;
use parc_core::embedding::normalize;
use parc_core::fixtures::load_fixture;
use parc_core::harness::{majority_baseline, round1, OverviewTable};
use parc_core::langsim::SimilarityReport;
use parc_core::prompt::mask_count;
use parc_core::synth;
use parc_core::{
    assemble_prompt, build_context, retrieve_top_k, HashScorer, Mode, Predictor, PromptConfig,
    RetrievalHit,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn core_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core")
}

fn retrieval_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let index = synth::index(&mut rng, 5000, 64);
    let queries: Vec<Vec<f32>> = (0..200)
        .map(|_| normalize(&synth::vector(&mut rng, 64)).unwrap())
        .collect();
    let ks = [1, 5, 30];

    let start = Instant::now();
    let mut got = Vec::new();
    for q in &queries {
        for &k in &ks {
            let hits = retrieve_top_k(q, &index, k).unwrap();
            got.push(hits.into_iter().map(|h| h.sample_id).collect::<Vec<_>>());
        }
    }
    let elapsed = start.elapsed();

    let mut mismatches = 0;
    let mut i = 0;
    for q in &queries {
        let mut all: Vec<(f64, usize)> = index
            .rows()
            .enumerate()
            .map(|(r, row)| {
                (
                    q.iter()
                        .zip(row)
                        .map(|(a, b)| f64::from(*a) * f64::from(*b))
                        .sum(),
                    r,
                )
            })
            .collect();
        all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &k in &ks {
            let want: Vec<String> = all[..k]
                .iter()
                .map(|&(_, r)| index.ids()[r].clone())
                .collect();
            mismatches += usize::from(got[i] != want);
            i += 1;
        }
    }
    outcome(
        mismatches == 0 && elapsed < Duration::from_secs(5),
        format!(
            "{} of 600 id sequences differ, {:.2?} total",
            mismatches, elapsed
        ),
    )
}

fn bor_one_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let scorer = HashScorer::default();
    let mut bad = 0;
    for n in 0..500 {
        let case = synth::case(&mut rng, 1, true);
        let mode = if n % 2 == 0 {
            Mode::Labeled
        } else {
            Mode::Unlabeled
        };
        let pattern = &case.spec.patterns()[case.pattern_index];
        let p = Predictor::new(&case.spec, pattern, &case.pool, &scorer);
        let bor = p.predict_bor(&case.input, &case.hits, mode).unwrap();
        let single = p.predict_single(&case.input, &case.hits[0], mode).unwrap();
        bad += usize::from(bor.prompts != single.prompts || bor.label != single.label);
    }
    outcome(bad == 0, format!("{}/500 cases identical", 500 - bad))
}

fn bor_permutation_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let scorer = HashScorer::default();
    let mut bad = 0;
    for _ in 0..200 {
        let case = synth::case(&mut rng, 3, true);
        let pattern = &case.spec.patterns()[case.pattern_index];
        let p = Predictor::new(&case.spec, pattern, &case.pool, &scorer);
        let labels: Vec<usize> = case
            .hits
            .iter()
            .cloned()
            .permutations(3)
            .map(|hits: Vec<RetrievalHit>| {
                p.predict_bor(&case.input, &hits, Mode::Labeled)
                    .unwrap()
                    .label
                    .index
            })
            .collect();
        assert_eq!(labels.len(), 6);
        bad += usize::from(labels.iter().any(|&l| l != labels[0]));
    }
    outcome(
        bad == 0,
        format!("{}/200 cases agree across all 6 orderings", 200 - bad),
    )
}

fn language_similarity_mean() -> Outcome {
    let rows = load_fixture("langsim_10").unwrap().langsim_rows().unwrap();
    let mut off = Vec::new();
    for r in &rows {
        let rep = SimilarityReport::from_per_feature("en", r.lang.clone(), r.per_feature());
        let oracle = r.per_feature().iter().sum::<f64>() / 5.0;
        assert!((rep.aggregate - oracle).abs() < 1e-12);
        if (rep.aggregate - r.sim).abs() > 0.05 {
            off.push(format!(
                "{} mean {:.2} vs SIM {}",
                r.lang, rep.aggregate, r.sim
            ));
        }
    }
    let ok = rows.len() - off.len();
    let mut detail = format!("{ok}/{} rows within 0.05", rows.len());
    if !off.is_empty() {
        detail.push_str(&format!(" (outside: {})", off.join("; ")));
    }
    outcome(off.is_empty() && rows.len() == 10, detail)
}

fn correlation_reproduction() -> Outcome {
    let start = Instant::now();
    let rows = load_fixture("fifty_pairs").unwrap().pair_records().unwrap();
    let reference = load_fixture("correlations")
        .unwrap()
        .reference_cells()
        .unwrap();
    let report =
        reproduce_paper_correlations(&rows, ColumnMapping::DEFAULT, &reference, 0.03).unwrap();
    let elapsed = start.elapsed();
    let within = report.cells.iter().filter(|c| c.within_tolerance).count();
    let flags = report
        .cells
        .iter()
        .filter(|c| c.significance_matches)
        .count();
    let max_dev = report
        .cells
        .iter()
        .filter_map(|c| c.deviation.map(f64::abs))
        .fold(0.0, f64::max);
    outcome(
        report.cells.len() == 12 && within == 12 && flags == 12 && elapsed < Duration::from_secs(1),
        format!(
            "{within}/12 coefficients within 0.03 (max deviation {max_dev:.3}), {flags}/12 significance flags, {elapsed:.2?}"
        ),
    )
}

fn average_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|v| {
            let below = x.iter().filter(|w| *w < v).count() as f64;
            let equal = x.iter().filter(|w| *w == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn plain_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

fn correlation_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(3..40);
        // small integer range so ties occur
        let x: Vec<f64> = (0..n)
            .map(|_| f64::from(rng.random_range(0..12u8)))
            .collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        if x.iter().all(|v| *v == x[0]) {
            continue;
        }
        let s = analysis::spearman(&x, &y).unwrap().coefficient;
        let oracle = plain_pearson(&average_ranks(&x), &average_ranks(&y));
        worst = worst.max((s - oracle).abs());
    }

    let mut p_mismatch = 0;
    for _ in 0..20 {
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
        let y: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
        for method in [CorrMethod::Pearson, CorrMethod::Spearman] {
            let (xs, ys) = match method {
                CorrMethod::Pearson => (x.clone(), y.clone()),
                CorrMethod::Spearman => (average_ranks(&x), average_ranks(&y)),
            };
            let observed = plain_pearson(&xs, &ys).abs();
            let extreme = ys
                .iter()
                .copied()
                .permutations(6)
                .filter(|perm| plain_pearson(&xs, perm).abs() >= observed - 1e-12)
                .count();
            let exhaustive = extreme as f64 / 720.0;
            let p = analysis::permutation_p(&x, &y, method, 10, 0).unwrap();
            p_mismatch += usize::from(p != exhaustive);
        }
    }
    outcome(
        worst < 1e-12 && p_mismatch == 0,
        format!("max |spearman - pearson(ranks)| = {worst:.1e} over 1000 vectors, {p_mismatch}/40 exact p-values differ"),
    )
}

fn baseline_sanity() -> Outcome {
    let maj = load_fixture("overview")
        .unwrap()
        .overview_rows()
        .unwrap()
        .into_iter()
        .find(|r| r.method == "MAJ")
        .unwrap();
    let mut got = Vec::new();
    for task in ["amazon", "agnews", "xnli"] {
        let spec = synth::task(task);
        let corpus = load_corpus(
            core_dir().join(format!("testdata/balanced/{task}.jsonl")),
            &spec,
        )
        .unwrap();
        got.push(round1(majority_baseline(&corpus, &spec).unwrap()));
    }
    let expected = [50.0, 25.0, 33.3];
    outcome(
        got == expected && maj.tasks() == expected,
        format!("balanced sets {got:?}, published MAJ row {:?}", maj.tasks()),
    )
}

fn mask_count_property() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = PromptConfig::default();
    let mut bad = 0;
    let mut arities = [0usize; 3];
    for _ in 0..10_000 {
        let n = rng.random_range(0..=5);
        let case = synth::case(&mut rng, n, true);
        arities[case.spec.arity().segments()] += 1;
        let pattern = &case.spec.patterns()[case.pattern_index];
        let (mut ctx, mut ids) = (Vec::new(), Vec::new());
        for h in &case.hits {
            let s = case.pool.get(&h.sample_id).unwrap();
            ctx.push(build_context(pattern, s, s.gold.as_ref().unwrap(), &case.spec).unwrap());
            ids.push(s.id.clone());
        }
        let p = assemble_prompt(&ctx, &ids, &case.input, pattern, &case.spec, &cfg).unwrap();
        bad += usize::from(mask_count(&p.text) != 1);
    }
    outcome(
        bad == 0 && arities[1] > 0 && arities[2] > 0,
        format!(
            "{}/10000 prompts with exactly one mask ({} single-segment, {} pair)",
            10_000 - bad,
            arities[1],
            arities[2]
        ),
    )
}

fn end_to_end_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let config = core_dir().join("testdata/toy/eval.json");
    let mut runs = Vec::new();
    for name in ["first", "second"] {
        let out = tmp.path().join(name);
        let o = Command::new(env!("CARGO_BIN_EXE_parc"))
            .args(["eval", "--config"])
            .arg(&config)
            .arg("--output-dir")
            .arg(&out)
            .env_remove("PARC_CACHE_DIR")
            .output()
            .unwrap();
        if !o.status.success() {
            return outcome(
                false,
                format!("parc eval failed: {}", String::from_utf8_lossy(&o.stderr)),
            );
        }
        let files: Vec<Vec<u8>> = ["report.txt", "report.json"]
            .iter()
            .map(|f| fs::read(out.join(f)).unwrap())
            .collect();
        runs.push((o.stdout, files));
    }
    let same = runs[0] == runs[1];
    outcome(
        same,
        format!(
            "report.txt and report.json {} across two runs",
            if same { "byte-identical" } else { "differ" }
        ),
    )
}

fn overview_layout() -> Outcome {
    let rows = load_fixture("overview").unwrap().overview_rows().unwrap();
    let rendered = OverviewTable::from_fixture(&rows).render();
    let lines: Vec<&str> = rendered.lines().collect();
    let header: Vec<&str> = lines[0].split_whitespace().collect();
    let mut problems = Vec::new();
    if header != ["Amazon", "AGNews", "XNLI", "Avg"] {
        problems.push(format!("header {header:?}"));
    }
    let order = [
        "MAJ",
        "Random",
        "Direct",
        "Finetune",
        "PARC-unlabeled",
        "PARC-labeled",
    ];
    if lines.len() != order.len() + 1 {
        problems.push(format!("{} rows", lines.len() - 1));
    }
    for (line, (name, r)) in lines[1..].iter().zip(order.iter().zip(&rows)) {
        let cells: Vec<&str> = line.split_whitespace().collect();
        let printed: Vec<String> = r
            .tasks()
            .iter()
            .chain([&r.avg])
            .map(|v| format!("{v:.1}"))
            .collect();
        if cells[0] != *name
            || cells[1..] != printed.iter().map(String::as_str).collect::<Vec<_>>()[..]
        {
            problems.push(format!("row `{line}`"));
        }
    }
    let detail = if problems.is_empty() {
        "6 method rows render with the published cells and averages".to_string()
    } else {
        problems.join("; ")
    };
    outcome(problems.is_empty(), detail)
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("retrieval oracle equivalence", retrieval_oracle),
        ("BoR(1) identity", bor_one_identity),
        ("BoR permutation invariance", bor_permutation_invariance),
        (
            "language similarity mean vs SIM column",
            language_similarity_mean,
        ),
        ("correlation reproduction", correlation_reproduction),
        ("spearman/pearson identities", correlation_identities),
        ("baseline sanity", baseline_sanity),
        ("mask-count property", mask_count_property),
        ("end-to-end determinism", end_to_end_determinism),
        ("overview table layout", overview_layout),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let o = check();
        failed += usize::from(!o.pass);
        println!(
            "{} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!(
        "acceptance: {}/{} criteria pass",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
