//! Bundled published-number fixtures. Each file is JSON lines: a header
//! object naming the fixture and its source table, then one object per row.
//! Files ship with a SHA-256 checksum that is verified on every load.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::analysis::{PairRecord, ReferenceCell};
use crate::error::{Error, Result};

macro_rules! bundled {
    ($($name:literal),* $(,)?) => {
        &[$(($name,
            include_str!(concat!("../fixtures/", $name, ".jsonl")),
            include_str!(concat!("../fixtures/", $name, ".sha256")))),*]
    };
}

static BUNDLED: &[(&str, &str, &str)] = bundled![
    "langsim_10",
    "fifty_pairs",
    "overview",
    "correlations",
    "test_sets"
];

pub fn fixture_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _, _)| *n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaperFixture {
    pub name: String,
    pub anchor: String,
    pub header: Value,
    pub rows: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LangsimRow {
    pub lang: String,
    #[serde(rename = "SYN")]
    pub syn: f64,
    #[serde(rename = "PHO")]
    pub pho: f64,
    #[serde(rename = "INV")]
    pub inv: f64,
    #[serde(rename = "FAM")]
    pub fam: f64,
    #[serde(rename = "GEO")]
    pub geo: f64,
    #[serde(rename = "SIM")]
    pub sim: f64,
    pub wiki_size: u32,
}

impl LangsimRow {
    pub fn per_feature(&self) -> [f64; 5] {
        [self.syn, self.pho, self.inv, self.fam, self.geo]
    }
}

#[derive(Debug, Deserialize)]
struct RawPair {
    pair: String,
    perf: [f64; 2],
    #[serde(rename = "SYN")]
    syn: f64,
    #[serde(rename = "PHO")]
    pho: f64,
    #[serde(rename = "INV")]
    inv: f64,
    #[serde(rename = "FAM")]
    fam: f64,
    #[serde(rename = "GEO")]
    geo: f64,
    #[serde(rename = "SIM")]
    sim: f64,
    source_size: f64,
    target_size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverviewRow {
    pub method: String,
    #[serde(rename = "Amazon")]
    pub amazon: f64,
    #[serde(rename = "AGNews")]
    pub agnews: f64,
    #[serde(rename = "XNLI")]
    pub xnli: f64,
    #[serde(rename = "Avg")]
    pub avg: f64,
}

impl OverviewRow {
    pub fn tasks(&self) -> [f64; 3] {
        [self.amazon, self.agnews, self.xnli]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSetRow {
    pub task: String,
    pub dataset: String,
    pub size: usize,
    pub num_labels: usize,
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn expected_digest(sha_file: &str) -> Result<String> {
    sha_file
        .split_whitespace()
        .next()
        .map(str::to_ascii_lowercase)
        .ok_or_else(|| Error::Fixture("empty checksum file".into()))
}

/// Verifies `text` against the checksum file contents and parses it.
pub fn parse_fixture(name: &str, text: &str, sha_file: &str) -> Result<PaperFixture> {
    let expected = expected_digest(sha_file)?;
    let actual = sha256_hex(text);
    if actual != expected {
        return Err(Error::Fixture(format!(
            "{name}: checksum mismatch (expected {expected}, found {actual})"
        )));
    }
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::Fixture(format!("{name}: empty fixture")))?;
    let header: Value = serde_json::from_str(first).map_err(|e| Error::MalformedRecord {
        line: 1,
        message: e.to_string(),
    })?;
    let anchor = header
        .get("anchor")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Fixture(format!("{name}: header has no anchor")))?
        .to_string();
    let rows = lines
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::MalformedRecord {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect::<Result<Vec<Value>>>()?;
    if let Some(n) = header.get("rows").and_then(Value::as_u64) {
        if n as usize != rows.len() {
            return Err(Error::Fixture(format!(
                "{name}: header declares {n} rows, found {}",
                rows.len()
            )));
        }
    }
    Ok(PaperFixture {
        name: name.to_string(),
        anchor,
        header,
        rows,
    })
}

pub fn load_fixture(name: &str) -> Result<PaperFixture> {
    let (_, text, sha) = BUNDLED
        .iter()
        .find(|(n, _, _)| *n == name)
        .ok_or_else(|| Error::Fixture(format!("unknown fixture `{name}`")))?;
    parse_fixture(name, text, sha)
}

/// Loads `<dir>/<name>.jsonl` with its sibling `<name>.sha256`.
pub fn load_fixture_from(path: impl AsRef<Path>) -> Result<PaperFixture> {
    let path = path.as_ref();
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Fixture(format!("bad fixture path {}", path.display())))?;
    let sha_path = path.with_extension("sha256");
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let sha = std::fs::read_to_string(&sha_path).map_err(|e| Error::io(&sha_path, e))?;
    parse_fixture(name, &text, &sha)
}

/// Loads an existing fixture file, else the bundled fixture of that name
/// (a trailing `.jsonl` is ignored).
pub fn resolve_fixture(name_or_path: &str) -> Result<PaperFixture> {
    if Path::new(name_or_path).is_file() {
        return load_fixture_from(name_or_path);
    }
    load_fixture(name_or_path.strip_suffix(".jsonl").unwrap_or(name_or_path))
}

impl PaperFixture {
    pub fn typed_rows<T: DeserializeOwned>(&self) -> Result<Vec<T>> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                serde_json::from_value(r.clone()).map_err(|e| Error::MalformedRecord {
                    line: i + 2,
                    message: format!("{}: {e}", self.name),
                })
            })
            .collect()
    }

    pub fn langsim_rows(&self) -> Result<Vec<LangsimRow>> {
        self.typed_rows()
    }

    pub fn pair_records(&self) -> Result<Vec<PairRecord>> {
        Ok(self
            .typed_rows::<RawPair>()?
            .into_iter()
            .map(|r| PairRecord {
                pair: r.pair,
                performance: r.perf,
                features: [r.syn, r.pho, r.inv, r.fam, r.geo],
                sim: r.sim,
                source_size: r.source_size,
                target_size: r.target_size,
            })
            .collect())
    }

    pub fn overview_rows(&self) -> Result<Vec<OverviewRow>> {
        self.typed_rows()
    }

    pub fn reference_cells(&self) -> Result<Vec<ReferenceCell>> {
        self.typed_rows()
    }

    pub fn test_set_rows(&self) -> Result<Vec<TestSetRow>> {
        self.typed_rows()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{Method, Setting, Variable};

    #[test]
    fn every_bundled_fixture_verifies() {
        for name in fixture_names() {
            let f = load_fixture(name).unwrap();
            assert_eq!(f.name, name);
            assert!(!f.anchor.is_empty());
        }
        assert!(matches!(load_fixture("nope"), Err(Error::Fixture(_))));
    }

    #[test]
    fn langsim_shape() {
        let rows = load_fixture("langsim_10").unwrap().langsim_rows().unwrap();
        assert_eq!(rows.len(), 10);
        let af = &rows[0];
        assert_eq!(af.lang, "af");
        assert_eq!(af.per_feature(), [84.9, 60.3, 38.4, 50.4, 33.1]);
        assert_eq!((af.sim, af.wiki_size), (53.4, 6));
    }

    #[test]
    fn fifty_pairs_shape() {
        let rows = load_fixture("fifty_pairs").unwrap().pair_records().unwrap();
        assert_eq!(rows.len(), 50);
        assert_eq!(rows[0].pair, "en-af");
        assert_eq!(rows[0].performance, [79.2, 62.0]);
        let sources: std::collections::BTreeSet<_> = rows
            .iter()
            .map(|r| r.pair.split('-').next().unwrap())
            .collect();
        assert_eq!(
            sources.into_iter().collect::<Vec<_>>(),
            ["ceb", "de", "en", "hi", "zh"]
        );
    }

    #[test]
    fn english_pairs_agree_with_language_table() {
        // the two appendix tables were transcribed separately
        let langs = load_fixture("langsim_10").unwrap().langsim_rows().unwrap();
        let pairs = load_fixture("fifty_pairs").unwrap().pair_records().unwrap();
        for l in &langs {
            let p = pairs
                .iter()
                .find(|p| p.pair == format!("en-{}", l.lang))
                .unwrap();
            assert_eq!(p.features, l.per_feature(), "{}", l.lang);
            assert_eq!(p.sim, l.sim);
            assert_eq!(p.target_size, f64::from(l.wiki_size));
            assert_eq!(p.source_size, 14.0);
        }
    }

    #[test]
    fn pair_sim_is_feature_mean_up_to_print_rounding() {
        // five inputs and the output each carry up to 0.05 of rounding
        for p in load_fixture("fifty_pairs").unwrap().pair_records().unwrap() {
            let mean = p.features.iter().sum::<f64>() / 5.0;
            assert!(
                (mean - p.sim).abs() <= 0.1 + 1e-9,
                "{}: {mean} vs {}",
                p.pair,
                p.sim
            );
        }
    }

    #[test]
    fn overview_shape() {
        let rows = load_fixture("overview").unwrap().overview_rows().unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[0].method, "MAJ");
        assert_eq!(rows[0].tasks(), [50.0, 25.0, 33.3]);
        assert_eq!(rows[5].avg, 57.4);
    }

    #[test]
    fn correlation_reference_shape() {
        let cells = load_fixture("correlations")
            .unwrap()
            .reference_cells()
            .unwrap();
        assert_eq!(cells.len(), 12);
        let c = cells
            .iter()
            .find(|c| {
                c.setting == Setting::Unlabeled
                    && c.method == Method::Pearson
                    && c.variable == Variable::SourceSize
            })
            .unwrap();
        assert_eq!((c.coefficient, c.p_value, c.starred), (0.22, 0.12, true));
    }

    #[test]
    fn test_set_sizes() {
        let rows = load_fixture("test_sets").unwrap().test_set_rows().unwrap();
        let sizes: Vec<_> = rows
            .iter()
            .map(|r| (r.task.as_str(), r.size, r.num_labels))
            .collect();
        assert_eq!(
            sizes,
            [("amazon", 1000, 2), ("agnews", 2000, 4), ("xnli", 1500, 3)]
        );
    }

    #[test]
    fn tampered_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (_, text, sha) = BUNDLED[2];
        let path = dir.path().join("overview.jsonl");
        std::fs::write(&path, text).unwrap();
        std::fs::write(dir.path().join("overview.sha256"), sha).unwrap();
        assert_eq!(load_fixture_from(&path).unwrap().rows.len(), 6);

        std::fs::write(&path, text.replace("57.4", "57.5")).unwrap();
        assert!(matches!(load_fixture_from(&path), Err(Error::Fixture(_))));
    }
}
