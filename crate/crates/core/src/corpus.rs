//! Tasks, labels, samples and corpora.
//!
//! A [`TaskSpec`] bundles the cloze patterns of one classification task with
//! its label-to-word verbalizer. Corpora are read from JSON-lines files with
//! one sample per line; labels are resolved by name against the task.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

pub const MASK: &str = "[MASK]";
pub const SLOT_X: &str = "[X]";
pub const SLOT_X1: &str = "[X1]";
pub const SLOT_X2: &str = "[X2]";

/// A class label. Ordering and tie-breaking always use `index`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Label {
    pub index: usize,
    pub name: String,
}

/// Single-sentence or sentence-pair task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arity {
    Single,
    Pair,
}

impl Arity {
    pub fn from_count(n: usize) -> Result<Self> {
        match n {
            1 => Ok(Arity::Single),
            2 => Ok(Arity::Pair),
            other => Err(Error::InvalidTask(format!(
                "arity must be 1 or 2, got {other}"
            ))),
        }
    }

    pub fn segments(self) -> usize {
        match self {
            Arity::Single => 1,
            Arity::Pair => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Piece {
    Literal(String),
    Segment(usize),
    Mask,
}

/// A cloze template such as `[X] All in all, it was [MASK].`
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternTemplate {
    template: String,
    arity: Arity,
    pieces: Vec<Piece>,
}

impl PatternTemplate {
    pub fn parse(template: &str, arity: Arity) -> Result<Self> {
        let invalid = |message: String| Error::InvalidPattern {
            template: template.to_string(),
            message,
        };

        let mut pieces = Vec::new();
        let mut literal = String::new();
        let mut rest = template;
        let (mut masks, mut x, mut x1, mut x2) = (0usize, 0usize, 0usize, 0usize);
        'outer: while !rest.is_empty() {
            for (token, kind) in [(MASK, 0), (SLOT_X, 1), (SLOT_X1, 2), (SLOT_X2, 3)] {
                if let Some(tail) = rest.strip_prefix(token) {
                    if !literal.is_empty() {
                        pieces.push(Piece::Literal(std::mem::take(&mut literal)));
                    }
                    match kind {
                        0 => {
                            masks += 1;
                            pieces.push(Piece::Mask);
                        }
                        1 => {
                            x += 1;
                            pieces.push(Piece::Segment(0));
                        }
                        2 => {
                            x1 += 1;
                            pieces.push(Piece::Segment(0));
                        }
                        _ => {
                            x2 += 1;
                            pieces.push(Piece::Segment(1));
                        }
                    }
                    rest = tail;
                    continue 'outer;
                }
            }
            let ch = rest.chars().next().expect("non-empty");
            literal.push(ch);
            rest = &rest[ch.len_utf8()..];
        }
        if !literal.is_empty() {
            pieces.push(Piece::Literal(literal));
        }

        if masks != 1 {
            return Err(invalid(format!(
                "expected exactly one {MASK}, found {masks}"
            )));
        }
        match arity {
            Arity::Single if x != 1 || x1 + x2 != 0 => {
                return Err(invalid(format!(
                    "single-segment pattern needs exactly one {SLOT_X} and no {SLOT_X1}/{SLOT_X2}"
                )))
            }
            Arity::Pair if x1 != 1 || x2 != 1 || x != 0 => {
                return Err(invalid(format!(
                    "pair pattern needs exactly one {SLOT_X1} and one {SLOT_X2} and no {SLOT_X}"
                )))
            }
            _ => {}
        }

        Ok(PatternTemplate {
            template: template.to_string(),
            arity,
            pieces,
        })
    }

    pub fn as_str(&self) -> &str {
        &self.template
    }

    pub fn arity(&self) -> Arity {
        self.arity
    }

    pub(crate) fn pieces(&self) -> &[Piece] {
        &self.pieces
    }
}

impl fmt::Display for PatternTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.template)
    }
}

/// Raw, unvalidated task definition as stored in a task JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpecDef {
    pub task_id: String,
    pub arity: usize,
    pub patterns: Vec<String>,
    /// Label name to verbalizer word, in label-index order.
    #[serde(deserialize_with = "ordered_pairs", serialize_with = "pairs_as_map")]
    pub verbalizer: Vec<(String, String)>,
}

fn ordered_pairs<'de, D>(de: D) -> std::result::Result<Vec<(String, String)>, D::Error>
where
    D: Deserializer<'de>,
{
    struct PairVisitor;

    impl<'de> Visitor<'de> for PairVisitor {
        type Value = Vec<(String, String)>;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("an object mapping label names to verbalizer words")
        }

        fn visit_map<A: MapAccess<'de>>(
            self,
            mut map: A,
        ) -> std::result::Result<Self::Value, A::Error> {
            let mut out = Vec::new();
            while let Some((k, v)) = map.next_entry::<String, String>()? {
                out.push((k, v));
            }
            Ok(out)
        }
    }

    de.deserialize_map(PairVisitor)
}

fn pairs_as_map<S>(pairs: &[(String, String)], ser: S) -> std::result::Result<S::Ok, S::Error>
where
    S: serde::Serializer,
{
    use serde::ser::SerializeMap;
    let mut map = ser.serialize_map(Some(pairs.len()))?;
    for (k, v) in pairs {
        map.serialize_entry(k, v)?;
    }
    map.end()
}

/// Checks every task invariant without building a [`TaskSpec`].
pub fn validate_task(def: &TaskSpecDef) -> Result<()> {
    TaskSpec::from_def(def.clone()).map(|_| ())
}

/// A validated task: cloze patterns plus a bijective verbalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    task_id: String,
    arity: Arity,
    patterns: Vec<PatternTemplate>,
    labels: Vec<Label>,
    words: Vec<String>,
}

impl TaskSpec {
    pub fn from_def(def: TaskSpecDef) -> Result<Self> {
        let arity = Arity::from_count(def.arity)?;
        if def.patterns.is_empty() {
            return Err(Error::InvalidTask(
                "at least one pattern is required".into(),
            ));
        }
        if def.verbalizer.is_empty() {
            return Err(Error::InvalidTask("verbalizer is empty".into()));
        }
        let patterns = def
            .patterns
            .iter()
            .map(|p| PatternTemplate::parse(p, arity))
            .collect::<Result<Vec<_>>>()?;

        let mut labels = Vec::with_capacity(def.verbalizer.len());
        let mut words = Vec::with_capacity(def.verbalizer.len());
        for (index, (name, word)) in def.verbalizer.into_iter().enumerate() {
            if labels.iter().any(|l: &Label| l.name == name) {
                return Err(Error::InvalidTask(format!("duplicate label name `{name}`")));
            }
            if words.contains(&word) {
                return Err(Error::InvalidTask(format!(
                    "duplicate verbalizer word `{word}`"
                )));
            }
            if word.is_empty() {
                return Err(Error::InvalidTask(format!(
                    "empty verbalizer word for `{name}`"
                )));
            }
            labels.push(Label { index, name });
            words.push(word);
        }

        Ok(TaskSpec {
            task_id: def.task_id,
            arity,
            patterns,
            labels,
            words,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let def: TaskSpecDef =
            serde_json::from_str(text).map_err(|e| Error::InvalidTask(e.to_string()))?;
        Self::from_def(def)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_def(&self) -> TaskSpecDef {
        TaskSpecDef {
            task_id: self.task_id.clone(),
            arity: self.arity.segments(),
            patterns: self
                .patterns
                .iter()
                .map(|p| p.as_str().to_string())
                .collect(),
            verbalizer: self
                .labels
                .iter()
                .zip(&self.words)
                .map(|(l, w)| (l.name.clone(), w.clone()))
                .collect(),
        }
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    pub fn arity(&self) -> Arity {
        self.arity
    }

    pub fn patterns(&self) -> &[PatternTemplate] {
        &self.patterns
    }

    pub fn pattern(&self, index: usize) -> Result<&PatternTemplate> {
        self.patterns.get(index).ok_or_else(|| {
            Error::Config(format!(
                "pattern index {index} out of range ({} patterns)",
                self.patterns.len()
            ))
        })
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn label(&self, index: usize) -> Result<&Label> {
        self.labels.get(index).ok_or(Error::LabelOutOfRange {
            index,
            count: self.labels.len(),
        })
    }

    pub fn label_by_name(&self, name: &str) -> Result<&Label> {
        self.labels
            .iter()
            .find(|l| l.name == name)
            .ok_or_else(|| Error::UnknownLabel(name.to_string()))
    }

    /// Verbalizer word of `label`.
    pub fn verbalize(&self, label: &Label) -> Result<&str> {
        match self.labels.get(label.index) {
            Some(l) if l == label => Ok(&self.words[label.index]),
            _ => Err(Error::UnknownLabel(format!(
                "{} (index {})",
                label.name, label.index
            ))),
        }
    }

    /// Inverse verbalizer.
    pub fn label_for_word(&self, word: &str) -> Option<&Label> {
        self.words
            .iter()
            .position(|w| w == word)
            .map(|i| &self.labels[i])
    }

    /// Verbalizer words in label-index order.
    pub fn candidates(&self) -> &[String] {
        &self.words
    }
}

/// Task definitions used in the experiments: Amazon reviews, AG News and XNLI.
pub mod builtin {
    use super::TaskSpecDef;

    fn def(
        task_id: &str,
        arity: usize,
        patterns: &[&str],
        verbalizer: &[(&str, &str)],
    ) -> TaskSpecDef {
        TaskSpecDef {
            task_id: task_id.into(),
            arity,
            patterns: patterns.iter().map(|s| s.to_string()).collect(),
            verbalizer: verbalizer
                .iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
        }
    }

    /// Default pattern index for each builtin task.
    pub fn default_pattern(task_id: &str) -> usize {
        match task_id {
            "amazon" | "agnews" => 2,
            _ => 1,
        }
    }

    pub fn amazon() -> TaskSpecDef {
        def(
            "amazon",
            1,
            &[
                "[X] [MASK]",
                "It was [MASK]. [X]",
                "[X] All in all, it was [MASK].",
                "Just [MASK]! [X]",
                "[X] In summary, the product is [MASK].",
            ],
            &[("neg", "terrible"), ("pos", "great")],
        )
    }

    pub fn agnews() -> TaskSpecDef {
        def(
            "agnews",
            1,
            &[
                "[X] [MASK]",
                "[MASK]: [X]",
                "[MASK] News: [X]",
                "[X] Category: [MASK]",
            ],
            &[
                ("World", "World"),
                ("Sports", "Sports"),
                ("Business", "Business"),
                ("Tech", "Tech"),
            ],
        )
    }

    pub fn xnli() -> TaskSpecDef {
        def(
            "xnli",
            2,
            &["[X1] [MASK] [X2]", "[X1]? [MASK], [X2]"],
            &[
                ("entailment", "Yes"),
                ("neutral", "Maybe"),
                ("contradiction", "No"),
            ],
        )
    }

    /// XNLI with the Right/Wrong answer words.
    pub fn xnli_right_wrong() -> TaskSpecDef {
        def(
            "xnli_rw",
            2,
            &["[X1]? [MASK], [X2]"],
            &[
                ("entailment", "Right"),
                ("neutral", "Maybe"),
                ("contradiction", "Wrong"),
            ],
        )
    }

    pub fn by_name(name: &str) -> Option<TaskSpecDef> {
        match name {
            "amazon" => Some(amazon()),
            "agnews" => Some(agnews()),
            "xnli" => Some(xnli()),
            "xnli_rw" => Some(xnli_right_wrong()),
            _ => None,
        }
    }
}

/// One test or corpus item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub segments: Vec<String>,
    pub language: String,
    pub gold: Option<Label>,
}

impl Sample {
    pub fn new(id: impl Into<String>, segments: Vec<String>, language: impl Into<String>) -> Self {
        Sample {
            id: id.into(),
            segments,
            language: language.into(),
            gold: None,
        }
    }

    pub fn with_gold(mut self, label: Label) -> Self {
        self.gold = Some(label);
        self
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    id: String,
    segments: Vec<String>,
    language: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

/// An ordered collection of samples for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    task_id: String,
    samples: Vec<Sample>,
    labeled: bool,
    positions: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(task: &TaskSpec, samples: Vec<Sample>) -> Result<Self> {
        let mut positions = HashMap::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            if s.segments.len() != task.arity().segments() {
                return Err(Error::ArityMismatch {
                    id: s.id.clone(),
                    expected: task.arity().segments(),
                    found: s.segments.len(),
                });
            }
            if let Some(gold) = &s.gold {
                if task.label(gold.index)? != gold {
                    return Err(Error::UnknownLabel(gold.name.clone()));
                }
            }
            if positions.insert(s.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(s.id.clone()));
            }
        }
        let labeled = !samples.is_empty() && samples.iter().all(|s| s.gold.is_some());
        Ok(Corpus {
            task_id: task.task_id().to_string(),
            samples,
            labeled,
            positions,
        })
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.labeled
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.positions.get(id).map(|&i| &self.samples[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.positions.get(id).copied()
    }

    /// Re-serializes the corpus in the JSON-lines file format.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            let record = SampleRecord {
                id: s.id.clone(),
                segments: s.segments.clone(),
                language: s.language.clone(),
                label: s.gold.as_ref().map(|l| l.name.clone()),
            };
            out.push_str(&serde_json::to_string(&record).expect("sample serializes"));
            out.push('\n');
        }
        out
    }
}

/// Parses a corpus from JSON-lines text. Blank lines are skipped.
pub fn parse_corpus(text: &str, task: &TaskSpec) -> Result<Corpus> {
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: SampleRecord =
            serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
                line: line_no,
                message: e.to_string(),
            })?;
        let gold = match &record.label {
            Some(name) => Some(
                task.label_by_name(name)
                    .map_err(|e| Error::MalformedRecord {
                        line: line_no,
                        message: e.to_string(),
                    })?
                    .clone(),
            ),
            None => None,
        };
        samples.push(Sample {
            id: record.id,
            segments: record.segments,
            language: record.language,
            gold,
        });
    }
    Corpus::new(task, samples)
}

pub fn load_corpus(path: impl AsRef<Path>, task: &TaskSpec) -> Result<Corpus> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, task)
}
