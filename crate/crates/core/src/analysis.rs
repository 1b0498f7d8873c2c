//! Pearson and Spearman correlation with t-approximation or permutation
//! p-values, and the 50-pair correlation study.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Largest n for which permutation p-values enumerate all n! orderings.
pub const EXACT_PERMUTATION_MAX_N: usize = 8;
pub const DEFAULT_PERMUTATIONS: usize = 10_000;
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;
pub const DEFAULT_TOLERANCE: f64 = 0.03;
pub const PAIR_COUNT: usize = 50;

const PERM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Spearman,
    Pearson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PMethod {
    #[default]
    TApprox,
    Permutation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub coefficient: f64,
    pub p_value: f64,
    pub n: usize,
    pub method: Method,
    pub p_method: PMethod,
}

impl CorrelationResult {
    pub fn significant(&self) -> bool {
        self.p_value < SIGNIFICANCE_LEVEL
    }
}

fn check_inputs(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Statistics(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::Statistics(format!(
            "need at least 3 observations, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Statistics("non-finite observation".into()));
    }
    Ok(())
}

/// Product-moment coefficient without input checks beyond variance.
fn pearson_raw(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Statistics("zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Fractional (1-based) ranks; tied values share their average rank.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            out[o] = avg;
        }
        i = j + 1;
    }
    out
}

/// Two-sided p-value from Student's t with n-2 degrees of freedom.
pub fn t_approx_p(r: f64, n: usize) -> Result<f64> {
    if n < 3 {
        return Err(Error::Statistics("t approximation needs n >= 3".into()));
    }
    if r.abs() >= 1.0 {
        return Ok(0.0);
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Statistics(e.to_string()))?;
    Ok((2.0 * dist.sf(t.abs())).clamp(0.0, 1.0))
}

fn coefficient(x: &[f64], y: &[f64], method: Method) -> Result<f64> {
    match method {
        Method::Pearson => pearson_raw(x, y),
        Method::Spearman => pearson_raw(&ranks(x), &ranks(y)),
    }
}

/// Visits every permutation of `v` (Heap's algorithm).
fn for_each_permutation(v: &mut [f64], mut f: impl FnMut(&[f64])) {
    let n = v.len();
    let mut c = vec![0usize; n];
    f(v);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                v.swap(0, i);
            } else {
                v.swap(c[i], i);
            }
            f(v);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// Two-sided permutation p-value: the share of orderings of `y` whose
/// |coefficient| reaches the observed one. Exact for small n, otherwise
/// `permutations` seeded shuffles with the usual +1 correction.
pub fn permutation_p(
    x: &[f64],
    y: &[f64],
    method: Method,
    permutations: usize,
    seed: u64,
) -> Result<f64> {
    check_inputs(x, y)?;
    let (xs, mut ys) = match method {
        Method::Pearson => (x.to_vec(), y.to_vec()),
        Method::Spearman => (ranks(x), ranks(y)),
    };
    let observed = pearson_raw(&xs, &ys)?.abs();
    let hit = |perm: &[f64]| pearson_raw(&xs, perm).map(|r| r.abs() >= observed - PERM_EPS);

    if x.len() <= EXACT_PERMUTATION_MAX_N {
        let (mut total, mut extreme) = (0u64, 0u64);
        let mut err = None;
        for_each_permutation(&mut ys, |perm| {
            total += 1;
            match hit(perm) {
                Ok(true) => extreme += 1,
                Ok(false) => {}
                Err(e) => err = Some(e),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        return Ok(extreme as f64 / total as f64);
    }

    if permutations == 0 {
        return Err(Error::InvalidArgument(
            "permutation count must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut extreme = 0usize;
    for _ in 0..permutations {
        ys.shuffle(&mut rng);
        if hit(&ys)? {
            extreme += 1;
        }
    }
    Ok((extreme + 1) as f64 / (permutations + 1) as f64)
}

pub fn correlate(
    x: &[f64],
    y: &[f64],
    method: Method,
    p_method: PMethod,
) -> Result<CorrelationResult> {
    check_inputs(x, y)?;
    let r = coefficient(x, y, method)?;
    let p_value = match p_method {
        PMethod::TApprox => t_approx_p(r, x.len())?,
        PMethod::Permutation => permutation_p(x, y, method, DEFAULT_PERMUTATIONS, 0)?,
    };
    Ok(CorrelationResult {
        coefficient: r,
        p_value,
        n: x.len(),
        method,
        p_method,
    })
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<CorrelationResult> {
    correlate(x, y, Method::Pearson, PMethod::TApprox)
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<CorrelationResult> {
    correlate(x, y, Method::Spearman, PMethod::TApprox)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Unlabeled,
    Labeled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    Similarity,
    SourceSize,
    TargetSize,
}

impl Setting {
    pub const ALL: [Setting; 2] = [Setting::Unlabeled, Setting::Labeled];
}

impl Variable {
    pub const ALL: [Variable; 3] = [
        Variable::Similarity,
        Variable::SourceSize,
        Variable::TargetSize,
    ];

    pub fn header(self) -> &'static str {
        match self {
            Variable::Similarity => "Sim",
            Variable::SourceSize => "Src size",
            Variable::TargetSize => "Tgt size",
        }
    }
}

/// One source-target pair with its two performance columns as printed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub pair: String,
    pub performance: [f64; 2],
    /// SYN, PHO, INV, FAM, GEO.
    pub features: [f64; 5],
    pub sim: f64,
    pub source_size: f64,
    pub target_size: f64,
}

impl PairRecord {
    fn variable(&self, v: Variable) -> f64 {
        match v {
            Variable::Similarity => self.sim,
            Variable::SourceSize => self.source_size,
            Variable::TargetSize => self.target_size,
        }
    }
}

/// Which printed performance column holds each setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub labeled: usize,
    pub unlabeled: usize,
}

impl ColumnMapping {
    /// Verified by recomputing the published correlations: the first
    /// printed column matches the labeled row.
    pub const DEFAULT: ColumnMapping = ColumnMapping {
        labeled: 0,
        unlabeled: 1,
    };
    pub const AS_PRINTED: ColumnMapping = ColumnMapping {
        labeled: 1,
        unlabeled: 0,
    };

    fn column(&self, s: Setting) -> usize {
        match s {
            Setting::Labeled => self.labeled,
            Setting::Unlabeled => self.unlabeled,
        }
    }
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// A published coefficient and p-value; `starred` marks an insignificant cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCell {
    pub setting: Setting,
    pub method: Method,
    pub variable: Variable,
    pub coefficient: f64,
    pub p_value: f64,
    pub starred: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub setting: Setting,
    pub method: Method,
    pub variable: Variable,
    pub result: CorrelationResult,
    pub reference: Option<ReferenceCell>,
    pub deviation: Option<f64>,
    pub within_tolerance: bool,
    pub significance_matches: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub mapping: ColumnMapping,
    pub tolerance: f64,
    pub cells: Vec<CellReport>,
}

impl CorrelationReport {
    pub fn cell(
        &self,
        setting: Setting,
        method: Method,
        variable: Variable,
    ) -> Option<&CellReport> {
        self.cells
            .iter()
            .find(|c| c.setting == setting && c.method == method && c.variable == variable)
    }

    pub fn all_within_tolerance(&self) -> bool {
        self.cells.iter().all(|c| c.within_tolerance)
    }

    pub fn all_significance_match(&self) -> bool {
        self.cells.iter().all(|c| c.significance_matches)
    }

    /// Six-cell layout per setting, with `!` after any cell outside tolerance
    /// and `*` after insignificant p-values.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<10} {:<9} {:>16} {:>16} {:>16}\n",
            "Setting", "Method", "Sim", "Src size", "Tgt size"
        ));
        for s in Setting::ALL {
            for m in [Method::Spearman, Method::Pearson] {
                let mut line = format!("{:<10} {:<9}", format!("{s:?}"), format!("{m:?}"));
                for v in Variable::ALL {
                    let cell = self.cell(s, m, v).expect("all cells computed");
                    let flag = if cell.within_tolerance { "" } else { "!" };
                    let star = if cell.result.significant() { "" } else { "*" };
                    let text = format!(
                        "{:.2}/{}{star}{flag}",
                        cell.result.coefficient,
                        format_p(cell.result.p_value)
                    );
                    line.push_str(&format!(" {text:>16}"));
                }
                out.push_str(line.trim_end());
                out.push('\n');
            }
        }
        let bad: Vec<_> = self
            .cells
            .iter()
            .filter(|c| !c.within_tolerance || !c.significance_matches)
            .collect();
        if bad.is_empty() {
            out.push_str(&format!(
                "all cells within ±{} of reference; significance flags match\n",
                self.tolerance
            ));
        } else {
            for c in bad {
                out.push_str(&format!(
                    "deviation: {:?} {:?} {}: computed {:.4}, reference {}\n",
                    c.setting,
                    c.method,
                    c.variable.header(),
                    c.result.coefficient,
                    c.reference
                        .as_ref()
                        .map(|r| format!("{}", r.coefficient))
                        .unwrap_or_else(|| "none".into())
                ));
            }
        }
        out
    }
}

fn format_p(p: f64) -> String {
    if p >= 0.01 {
        format!("{p:.2}")
    } else {
        format!("{p:.0e}")
    }
}

/// Recomputes every (setting, method, variable) cell from the pair rows
/// and compares it against `reference`.
pub fn reproduce_paper_correlations(
    rows: &[PairRecord],
    mapping: ColumnMapping,
    reference: &[ReferenceCell],
    tolerance: f64,
) -> Result<CorrelationReport> {
    if rows.len() != PAIR_COUNT {
        return Err(Error::Fixture(format!(
            "expected {PAIR_COUNT} pair rows, got {}",
            rows.len()
        )));
    }
    if mapping.labeled > 1 || mapping.unlabeled > 1 || mapping.labeled == mapping.unlabeled {
        return Err(Error::InvalidArgument(format!(
            "invalid column mapping {mapping:?}"
        )));
    }
    let mut cells = Vec::new();
    for s in Setting::ALL {
        let perf: Vec<f64> = rows
            .iter()
            .map(|r| r.performance[mapping.column(s)])
            .collect();
        for m in [Method::Spearman, Method::Pearson] {
            for v in Variable::ALL {
                let xs: Vec<f64> = rows.iter().map(|r| r.variable(v)).collect();
                let result = correlate(&xs, &perf, m, PMethod::TApprox)?;
                let reference = reference
                    .iter()
                    .find(|c| c.setting == s && c.method == m && c.variable == v)
                    .cloned();
                let deviation = reference
                    .as_ref()
                    .map(|r| result.coefficient - r.coefficient);
                let within_tolerance = deviation.is_some_and(|d| d.abs() <= tolerance);
                let significance_matches = reference
                    .as_ref()
                    .is_some_and(|r| r.starred != result.significant());
                cells.push(CellReport {
                    setting: s,
                    method: m,
                    variable: v,
                    result,
                    reference,
                    deviation,
                    within_tolerance,
                    significance_matches,
                });
            }
        }
    }
    Ok(CorrelationReport {
        mapping,
        tolerance,
        cells,
    })
}
