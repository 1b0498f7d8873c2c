use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use super::run;

struct Output {
    code: u8,
    stdout: Vec<u8>,
    stderr: Vec<u8>,
}

fn toy() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/testdata/toy")
}

fn parc(args: &[&str]) -> Output {
    let (mut stdout, mut stderr) = (Vec::new(), Vec::new());
    let code = run(
        std::iter::once("parc").chain(args.iter().copied()),
        &mut stdout,
        &mut stderr,
    );
    Output {
        code,
        stdout,
        stderr,
    }
}

fn code(o: &Output) -> u8 {
    o.code
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json_lines(o: &Output) -> Vec<Value> {
    stdout(o)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Toy config rewritten with absolute paths and extra fields.
fn toy_config(dir: &Path, patch: Value) -> PathBuf {
    let mut cfg: Value =
        serde_json::from_str(&fs::read_to_string(toy().join("eval.json")).unwrap()).unwrap();
    let abs = |name: &str| Value::String(toy().join(name).to_string_lossy().into_owned());
    for t in cfg["test"].as_array_mut().unwrap() {
        t["corpus"] = abs(t["corpus"].as_str().unwrap());
        t["index"] = abs(t["index"].as_str().unwrap());
    }
    cfg["hrl_corpus"] = abs("hrl.jsonl");
    cfg["hrl_index"] = abs("hrl.tsv");
    cfg["scorer"] = json!({"fixture": toy().join("scores.jsonl")});
    cfg["output_dir"] = json!(dir.join("out"));
    for (k, v) in patch.as_object().unwrap() {
        cfg[k] = v.clone();
    }
    let path = dir.join("eval.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn eval_twice_gives_identical_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy().join("eval.json");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let ra = parc(&["eval", "--config", s(&cfg), "--output-dir", s(&a)]);
    let rb = parc(&["eval", "--config", s(&cfg), "--output-dir", s(&b)]);
    assert_eq!(code(&ra), 0, "{}", String::from_utf8_lossy(&ra.stderr));
    assert_eq!(ra.stdout, rb.stdout);
    for f in ["report.txt", "report.json", "predictions.jsonl"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    assert_eq!(
        stdout(&ra),
        fs::read_to_string(a.join("report.txt")).unwrap()
    );
}

#[test]
fn report_check_detects_edited_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    assert_eq!(
        code(&parc(&[
            "eval",
            "--config",
            s(&toy().join("eval.json")),
            "--output-dir",
            s(&out)
        ])),
        0
    );
    assert_eq!(code(&parc(&["report", "--run", s(&out), "--check"])), 0);
    let path = out.join("report.txt");
    let edited = fs::read_to_string(&path)
        .unwrap()
        .replacen("50.0", "51.0", 1);
    fs::write(&path, edited).unwrap();
    assert_eq!(code(&parc(&["report", "--run", s(&out), "--check"])), 1);
}

#[test]
fn exit_codes_follow_error_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let eval = toy().join("eval.json");
    let out = tmp.path().join("o");

    // usage and config problems
    assert_eq!(code(&parc(&["eval"])), 2);
    let bad_k = toy_config(tmp.path(), json!({"k": [3, 1]}));
    assert_eq!(code(&parc(&["eval", "--config", s(&bad_k)])), 2);
    let unknown = tmp.path().join("unknown.json");
    fs::write(&unknown, r#"{"task": "amazon", "bogus": 1}"#).unwrap();
    assert_eq!(code(&parc(&["eval", "--config", s(&unknown)])), 2);

    // data problems
    let broken = tmp.path().join("broken.jsonl");
    fs::write(
        &broken,
        "{\"id\": \"x\", \"segments\": [\"a\"], \"language\": \"af\", \"label\": \"meh\"}\n",
    )
    .unwrap();
    let cfg = toy_config(
        tmp.path(),
        json!({"test": [{"language": "af", "corpus": broken, "index": toy().join("test_af.tsv")}]}),
    );
    assert_eq!(code(&parc(&["eval", "--config", s(&cfg)])), 3);

    // backend problems: a seed whose random draws the fixture never saw
    let miss = parc(&[
        "eval",
        "--config",
        s(&eval),
        "--output-dir",
        s(&out),
        "--seed",
        "99",
    ]);
    assert_eq!(code(&miss), 4);
    assert!(String::from_utf8_lossy(&miss.stderr).contains("fixture miss"));
}

#[test]
fn cache_dir_env_redirects_score_cache() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy_config(tmp.path(), json!({"cache": {"enabled": true}}));
    let cache = tmp.path().join("cache");
    fs::create_dir_all(&cache).unwrap();
    // the only test that sets the variable; the others keep the cache off
    std::env::set_var(parc_core::harness::CACHE_DIR_ENV, &cache);
    let o = parc(&["eval", "--config", s(&cfg)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let lines = fs::read_to_string(cache.join("scores.jsonl")).unwrap();
    assert!(lines.lines().count() > 0);
    // a second run is served from the cache and reports the same table
    let again = parc(&["eval", "--config", s(&cfg)]);
    std::env::remove_var(parc_core::harness::CACHE_DIR_ENV);
    assert_eq!(again.stdout, o.stdout);
    assert_eq!(
        fs::read_to_string(cache.join("scores.jsonl")).unwrap(),
        lines
    );
}

#[test]
fn retrieve_emits_ranked_hits() {
    let o = parc(&[
        "retrieve",
        "--index",
        s(&toy().join("hrl.tsv")),
        "--query-file",
        s(&toy().join("test_af.tsv")),
        "-k",
        "3",
    ]);
    assert_eq!(code(&o), 0);
    let lines = json_lines(&o);
    assert_eq!(lines.len(), 8);
    assert_eq!(lines[0]["query_id"], "af0");
    for l in &lines {
        let hits = l["hits"].as_array().unwrap();
        assert_eq!(hits.len(), 3);
        let sims: Vec<f64> = hits.iter().map(|h| h["sim"].as_f64().unwrap()).collect();
        assert!(sims.windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(hits[0]["rank"], 0);
    }

    let one = parc(&[
        "retrieve",
        "--index",
        s(&toy().join("hrl.tsv")),
        "--query-file",
        s(&toy().join("test_af.tsv")),
        "--id",
        "af3",
        "--random",
        "--seed",
        "5",
        "-k",
        "2",
    ]);
    assert_eq!(json_lines(&one).len(), 1);
    assert_eq!(json_lines(&one)[0]["hits"].as_array().unwrap().len(), 2);
}

#[test]
fn index_round_trips_tsv() {
    let tmp = tempfile::tempdir().unwrap();
    let bin = tmp.path().join("hrl.idx");
    let o = parc(&[
        "index",
        "--tsv",
        s(&toy().join("hrl.tsv")),
        "--out",
        s(&bin),
    ]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("12 vectors of dim 8"));
    let args = |idx: &Path| {
        parc(&[
            "retrieve",
            "--index",
            s(idx),
            "--query-file",
            s(&toy().join("test_en.tsv")),
            "-k",
            "4",
        ])
        .stdout
    };
    assert_eq!(args(&bin), args(&toy().join("hrl.tsv")));
}

#[test]
fn predict_modes_and_strategies() {
    let cfg = toy().join("eval.json");
    let direct = parc(&["predict", "--config", s(&cfg), "--k", "0"]);
    assert_eq!(
        code(&direct),
        0,
        "{}",
        String::from_utf8_lossy(&direct.stderr)
    );
    let lines = json_lines(&direct);
    assert_eq!(lines.len(), 8);
    assert!(lines
        .iter()
        .all(|l| l["context_ids"].as_array().unwrap().is_empty()));

    let bor = parc(&[
        "predict",
        "--config",
        s(&cfg),
        "--language",
        "en",
        "--k",
        "3",
        "--mode",
        "unlabeled",
    ]);
    assert_eq!(code(&bor), 0, "{}", String::from_utf8_lossy(&bor.stderr));
    let lines = json_lines(&bor);
    assert_eq!(lines.len(), 4);
    for l in &lines {
        assert_eq!(l["context_ids"].as_array().unwrap().len(), 3);
        let total: f64 = l["scores"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_f64().unwrap())
            .sum();
        assert!((total - 3.0).abs() < 1e-9, "{total}");
    }

    let one = parc(&[
        "predict",
        "--config",
        s(&cfg),
        "--id",
        "af2",
        "--k",
        "1",
        "--strategy",
        "single",
    ]);
    assert_eq!(json_lines(&one).len(), 1);
    assert_eq!(json_lines(&one)[0]["input_id"], "af2");

    let missing = parc(&["predict", "--config", s(&cfg), "--id", "nope"]);
    assert_eq!(code(&missing), 3);
}

#[test]
fn correlate_reports_mapping_outcome() {
    let ok = parc(&["correlate"]);
    assert_eq!(code(&ok), 0, "{}", stdout(&ok));
    let printed = parc(&["correlate", "--mapping", "as-printed"]);
    assert_eq!(code(&printed), 1);
    let js = parc(&["correlate", "--json"]);
    let v: Value = serde_json::from_slice(&js.stdout).unwrap();
    assert_eq!(v["cells"].as_array().unwrap().len(), 12);
}

#[test]
fn langsim_fixture_check_and_profiles() {
    // the printed table has one row whose SIM is 0.06 away from the feature mean
    let fx = parc(&["langsim"]);
    assert_eq!(code(&fx), 1);
    assert!(stdout(&fx).contains("9/10 rows within tolerance"));

    let tmp = tempfile::tempdir().unwrap();
    let profiles = tmp.path().join("p.jsonl");
    let rows = [
        json!({"code": "en", "wiki_size": 14, "features": {"SYN": [1, 0, 1], "PHO": [1, 1], "INV": [0, 1], "FAM": [1, 0], "GEO": [0.2, 0.8]}}),
        json!({"code": "af", "wiki_size": 6, "features": {"SYN": [1, null, 1], "PHO": [1, 0], "INV": [1, 1], "FAM": [1, 1], "GEO": [0.3, 0.7]}}),
        json!({"code": "sw", "wiki_size": 6, "features": {"SYN": [0, 1, 0], "PHO": [0.2, 1], "INV": [1, 0], "FAM": [0, 1], "GEO": [0.9, 0.1]}}),
    ];
    fs::write(
        &profiles,
        rows.iter()
            .map(|r| r.to_string() + "\n")
            .collect::<String>(),
    )
    .unwrap();
    let pairs = tmp.path().join("pairs.txt");
    fs::write(&pairs, "en-af, en-sw\n").unwrap();
    let o = parc(&[
        "langsim",
        "--profiles",
        s(&profiles),
        "--pairs",
        s(&pairs),
        "--impute-k",
        "1",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.lines().next().unwrap().contains("WikiSize"));
    assert_eq!(out.lines().count(), 3);
    assert!(out.contains("en-af") && out.contains("en-sw"));
}

#[test]
fn overview_renders_fixture_rows() {
    let o = parc(&["report", "--overview", "overview"]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    for m in [
        "MAJ",
        "Random",
        "Direct",
        "Finetune",
        "PARC-unlabeled",
        "PARC-labeled",
    ] {
        assert!(out.contains(m), "{m}");
    }
    assert!(out.contains("57.4"));
}
