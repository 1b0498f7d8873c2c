//! Typological language profiles, nearest-neighbour imputation of missing
//! feature values, and batch min-max normalized language similarity.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Resource threshold: languages below this WikiSize are low-resource.
pub const LOW_RESOURCE_WIKI_SIZE: u32 = 7;

pub const DEFAULT_IMPUTE_K: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Feature {
    #[serde(rename = "SYN")]
    Syntax,
    #[serde(rename = "PHO")]
    Phonology,
    #[serde(rename = "INV")]
    Inventory,
    #[serde(rename = "FAM")]
    Family,
    #[serde(rename = "GEO")]
    Geography,
}

impl Feature {
    pub const ALL: [Feature; 5] = [
        Feature::Syntax,
        Feature::Phonology,
        Feature::Inventory,
        Feature::Family,
        Feature::Geography,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Feature::Syntax => "SYN",
            Feature::Phonology => "PHO",
            Feature::Inventory => "INV",
            Feature::Family => "FAM",
            Feature::Geography => "GEO",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// `None` marks a missing value.
pub type FeatureVector = Vec<Option<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageProfile {
    pub code: String,
    /// log2 of the Wikipedia size in MB.
    pub wiki_size: u32,
    pub features: BTreeMap<Feature, FeatureVector>,
}

impl LanguageProfile {
    pub fn new(code: impl Into<String>, wiki_size: u32, features: [FeatureVector; 5]) -> Self {
        LanguageProfile {
            code: code.into(),
            wiki_size,
            features: Feature::ALL.into_iter().zip(features).collect(),
        }
    }

    pub fn feature(&self, f: Feature) -> Result<&FeatureVector> {
        self.features
            .get(&f)
            .ok_or_else(|| Error::InvalidArgument(format!("{}: missing feature {f}", self.code)))
    }

    pub fn has_missing(&self) -> bool {
        self.features.values().flatten().any(Option::is_none)
    }
}

pub fn is_low_resource(p: &LanguageProfile) -> bool {
    p.wiki_size < LOW_RESOURCE_WIKI_SIZE
}

pub fn parse_profiles(text: &str) -> Result<Vec<LanguageProfile>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: LanguageProfile =
            serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
                line: i + 1,
                message: e.to_string(),
            })?;
        for f in Feature::ALL {
            p.feature(f).map_err(|e| Error::MalformedRecord {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        out.push(p);
    }
    Ok(out)
}

pub fn load_profiles(path: impl AsRef<Path>) -> Result<Vec<LanguageProfile>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_profiles(&text)
}

/// Cosine over the dimensions observed in both vectors; 0 when either side
/// has no mass there.
fn masked_cosine(a: &[Option<f64>], b: &[Option<f64>]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        if let (Some(x), Some(y)) = (x, y) {
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Fills each missing entry with the mean of that dimension over the `k`
/// most similar languages observing it. Similarity is cosine over the
/// mutually observed dimensions of the same feature; ties keep input order.
/// Only originally observed values are used as donors.
pub fn impute_missing(profiles: &[LanguageProfile], k: usize) -> Result<Vec<LanguageProfile>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let mut out = profiles.to_vec();
    for f in Feature::ALL {
        let vectors = profiles
            .iter()
            .map(|p| p.feature(f).map(Vec::as_slice))
            .collect::<Result<Vec<_>>>()?;
        let Some(dim) = vectors.first().map(|v| v.len()) else {
            continue;
        };
        for (p, v) in profiles.iter().zip(&vectors) {
            if v.len() != dim {
                return Err(Error::Imputation(format!(
                    "{}: {f} has {} dims, expected {dim}",
                    p.code,
                    v.len()
                )));
            }
            if dim > 0 && v.iter().all(Option::is_none) {
                return Err(Error::Imputation(format!(
                    "{}: no observed {f} values",
                    p.code
                )));
            }
        }
        for d in 0..dim {
            if vectors.iter().all(|v| v[d].is_none()) {
                return Err(Error::Imputation(format!(
                    "{f} dimension {d} is missing in every language"
                )));
            }
        }

        for (li, v) in vectors.iter().enumerate() {
            if v.iter().all(Option::is_some) {
                continue;
            }
            let mut neighbours: Vec<(f64, usize)> = vectors
                .iter()
                .enumerate()
                .filter(|&(mi, _)| mi != li)
                .map(|(mi, m)| (masked_cosine(v, m), mi))
                .collect();
            neighbours.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

            let target = out[li].features.get_mut(&f).expect("feature checked above");
            for d in 0..dim {
                if v[d].is_some() {
                    continue;
                }
                let donors: Vec<f64> = neighbours
                    .iter()
                    .filter_map(|&(_, mi)| vectors[mi][d])
                    .take(k)
                    .collect();
                if donors.is_empty() {
                    return Err(Error::Imputation(format!(
                        "{}: no other language observes {f} dimension {d}",
                        profiles[li].code
                    )));
                }
                target[d] = Some(donors.iter().sum::<f64>() / donors.len() as f64);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub source: String,
    pub target: String,
    /// SYN, PHO, INV, FAM, GEO on a 0..=100 scale.
    pub per_feature: [f64; 5],
    pub aggregate: f64,
}

impl SimilarityReport {
    pub fn from_per_feature(
        source: impl Into<String>,
        target: impl Into<String>,
        per_feature: [f64; 5],
    ) -> Self {
        SimilarityReport {
            source: source.into(),
            target: target.into(),
            aggregate: per_feature.iter().sum::<f64>() / per_feature.len() as f64,
            per_feature,
        }
    }

    pub fn feature(&self, f: Feature) -> f64 {
        self.per_feature[f.slot()]
    }
}

fn dense(p: &LanguageProfile, f: Feature) -> Result<Vec<f64>> {
    p.feature(f)?
        .iter()
        .map(|x| {
            x.ok_or_else(|| {
                Error::InvalidArgument(format!("{}: {f} still has missing values", p.code))
            })
        })
        .collect()
}

/// Raw per-feature cosine similarities; an all-zero vector scores 0.
pub fn raw_cosines(i: &LanguageProfile, j: &LanguageProfile) -> Result<[f64; 5]> {
    let mut out = [0.0; 5];
    for f in Feature::ALL {
        let (a, b) = (dense(i, f)?, dense(j, f)?);
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: a.len(),
                found: b.len(),
            });
        }
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        out[f.slot()] = if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        };
    }
    Ok(out)
}

/// Similarity of every `(source, target)` pair in `batch`. Each feature's
/// raw cosines are min-max rescaled to 0..=100 over the batch, and the
/// aggregate is their mean.
pub fn pairwise_similarity(
    profiles: &[LanguageProfile],
    batch: &[(String, String)],
) -> Result<Vec<SimilarityReport>> {
    let lookup = |code: &str| {
        profiles
            .iter()
            .find(|p| p.code == code)
            .ok_or_else(|| Error::InvalidArgument(format!("no profile for language `{code}`")))
    };
    let raw = batch
        .iter()
        .map(|(i, j)| raw_cosines(lookup(i)?, lookup(j)?))
        .collect::<Result<Vec<_>>>()?;

    let mut lo = [f64::INFINITY; 5];
    let mut hi = [f64::NEG_INFINITY; 5];
    for r in &raw {
        for s in 0..5 {
            lo[s] = lo[s].min(r[s]);
            hi[s] = hi[s].max(r[s]);
        }
    }
    for f in Feature::ALL {
        let s = f.slot();
        if raw.is_empty() || hi[s] - lo[s] <= 0.0 {
            return Err(Error::Statistics(format!(
                "cannot min-max normalize {f}: batch of {} pair(s) has zero range",
                raw.len()
            )));
        }
    }

    Ok(batch
        .iter()
        .zip(&raw)
        .map(|((i, j), r)| {
            let mut scaled = [0.0; 5];
            for s in 0..5 {
                scaled[s] = (r[s] - lo[s]) / (hi[s] - lo[s]) * 100.0;
            }
            SimilarityReport::from_per_feature(i.clone(), j.clone(), scaled)
        })
        .collect())
}
