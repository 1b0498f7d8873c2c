use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use parc_core::analysis::{reproduce_paper_correlations, ColumnMapping, DEFAULT_TOLERANCE};
use parc_core::corpus::load_corpus;
use parc_core::fixtures::resolve_fixture;
use parc_core::harness::{
    build_backend, derive_report, derive_seed, resolve_task, run_experiment, ExperimentConfig,
    OverviewTable, REPORT_TXT,
};
use parc_core::langsim::{
    impute_missing, load_profiles, pairwise_similarity, LanguageProfile, SimilarityReport,
    DEFAULT_IMPUTE_K,
};
use parc_core::scorer::{CachedScorer, HttpConfig, HttpScorer};
use parc_core::{
    random_retrieve, retrieve_top_k, EmbeddingIndex, Error, ErrorKind, Mode, Predictor, Result,
    Sample, ScorerBackend, Strategy,
};

/// Output streams of one invocation. Write failures (closed pipes) are
/// ignored.
pub struct Io<'a> {
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

macro_rules! outln {
    ($io:expr, $($t:tt)*) => {{ let _ = writeln!($io.out, $($t)*); }};
}

macro_rules! out {
    ($io:expr, $($t:tt)*) => {{ let _ = write!($io.out, $($t)*); }};
}

macro_rules! errln {
    ($io:expr, $($t:tt)*) => {{ let _ = writeln!($io.err, $($t)*); }};
}

#[derive(Parser)]
#[command(
    name = "parc",
    version,
    about = "Retrieval-augmented cross-lingual prompting toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mapping {
    /// First printed performance column is the labeled setting.
    Default,
    /// Columns as the table header names them.
    AsPrinted,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Labeled,
    Unlabeled,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Single,
    Bor,
    Conc,
}

#[derive(Subcommand)]
enum Command {
    /// Build a binary embedding index from a TSV file or a sidecar.
    Index {
        /// `id<TAB>v1,v2,...` lines.
        #[arg(long, conflicts_with_all = ["corpus", "sidecar"])]
        tsv: Option<PathBuf>,
        /// Corpus to embed through a sidecar.
        #[arg(long, requires_all = ["sidecar", "task"])]
        corpus: Option<PathBuf>,
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        sidecar: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the top-k (or random) neighbours of query vectors as JSON lines.
    Retrieve {
        #[arg(long)]
        index: PathBuf,
        /// Query vectors (binary index or TSV), keyed by query id.
        #[arg(long, alias = "queries")]
        query_file: PathBuf,
        /// Only this query id.
        #[arg(long)]
        id: Option<String>,
        #[arg(long, short, default_value_t = 1)]
        k: usize,
        #[arg(long)]
        random: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Predict test inputs with the setup of an experiment config; k = 0
    /// gives the context-free prompt.
    Predict {
        #[arg(long)]
        config: PathBuf,
        /// Test language; defaults to the first configured one.
        #[arg(long)]
        language: Option<String>,
        /// Only this input.
        #[arg(long)]
        id: Option<String>,
        #[arg(long, value_enum, default_value_t = ModeArg::Labeled)]
        mode: ModeArg,
        #[arg(long, value_enum, default_value_t = StrategyArg::Bor)]
        strategy: StrategyArg,
        #[arg(long, short, default_value_t = 1)]
        k: usize,
    },
    /// Run a full experiment and write predictions, hits and reports.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Language similarity from typological profiles, or a check of the
    /// bundled per-language table.
    Langsim {
        /// JSON-lines profiles with null for missing values.
        #[arg(long, conflicts_with = "fixture")]
        profiles: Option<PathBuf>,
        /// File of `source-target` pairs, one per line or comma-separated.
        #[arg(long, requires = "profiles")]
        pairs: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_IMPUTE_K)]
        impute_k: usize,
        #[arg(long)]
        fixture: Option<String>,
    },
    /// Correlation study over the 50-pair table.
    Correlate {
        #[arg(long, default_value = "fifty_pairs")]
        fixture: String,
        #[arg(long, default_value = "correlations")]
        reference: String,
        #[arg(long, value_enum, default_value_t = Mapping::Default)]
        mapping: Mapping,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
        #[arg(long)]
        json: bool,
    },
    /// Re-derive a run's report, or render the task overview table.
    Report {
        #[arg(long, conflicts_with = "overview")]
        run: Option<PathBuf>,
        #[arg(long)]
        overview: Option<String>,
        /// Fail unless the re-derived report equals the stored one.
        #[arg(long, requires = "run")]
        check: bool,
    },
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn cmd_index(
    io: &mut Io,
    tsv: Option<PathBuf>,
    corpus: Option<PathBuf>,
    task: Option<String>,
    sidecar: Option<String>,
    out: PathBuf,
) -> Result<()> {
    let index = match (tsv, corpus) {
        (Some(tsv), None) => EmbeddingIndex::load_tsv(tsv)?,
        (None, Some(corpus)) => {
            let spec = resolve_task(task.as_deref().unwrap_or_default())?;
            let corpus = load_corpus(corpus, &spec)?;
            let scorer = HttpScorer::new(HttpConfig {
                url: sidecar.unwrap_or_default(),
                ..Default::default()
            })?;
            let texts: Vec<String> = corpus
                .samples()
                .iter()
                .map(|s| s.segments.join(" "))
                .collect();
            let vectors = scorer.embed(&texts)?;
            let ids = corpus.samples().iter().map(|s| s.id.clone()).collect();
            EmbeddingIndex::build(ids, vectors)?
        }
        _ => {
            return Err(usage(
                "give either --tsv or --corpus with --sidecar and --task",
            ))
        }
    };
    index.save(&out)?;
    outln!(
        io,
        "{} vectors of dim {} -> {}",
        index.len(),
        index.dim(),
        out.display()
    );
    Ok(())
}

fn cmd_retrieve(
    io: &mut Io,
    index: PathBuf,
    queries: PathBuf,
    id: Option<String>,
    k: usize,
    random: bool,
    seed: u64,
) -> Result<()> {
    let index = EmbeddingIndex::load_any(index)?;
    let queries = EmbeddingIndex::load_any(queries)?;
    let ids: Vec<String> = match id {
        Some(id) => vec![id],
        None => queries.ids().to_vec(),
    };
    for (pos, qid) in ids.iter().enumerate() {
        let q = queries
            .vector(qid)
            .ok_or_else(|| Error::UnknownSample(qid.clone()))?;
        let hits = if random {
            random_retrieve(q, &index, k, derive_seed(seed, 0, pos, k))?
        } else {
            retrieve_top_k(q, &index, k)?
        };
        outln!(io, "{}", serde_json::json!({"query_id": qid, "hits": hits}));
    }
    Ok(())
}

fn cmd_predict(
    io: &mut Io,
    config: PathBuf,
    language: Option<String>,
    id: Option<String>,
    mode: ModeArg,
    strategy: StrategyArg,
    k: usize,
) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let spec = cfg.task_spec()?;
    let pattern = spec.pattern(cfg.pattern_index_for(&spec))?;
    let set = match &language {
        Some(l) => cfg
            .test
            .iter()
            .find(|t| t.language == *l)
            .ok_or_else(|| usage(format!("language `{l}` not in config")))?,
        None => &cfg.test[0],
    };
    let corpus = load_corpus(&set.corpus, &spec)?;
    let inputs: Vec<&Sample> = match &id {
        Some(id) => vec![corpus
            .get(id)
            .ok_or_else(|| Error::UnknownSample(id.clone()))?],
        None => corpus.samples().iter().collect(),
    };
    let pool = load_corpus(&cfg.hrl_corpus, &spec)?;
    let backend = CachedScorer::new(build_backend(&cfg.scorer)?, cfg.effective_cache())?;
    let predictor = Predictor::new(&spec, pattern, &pool, &backend)
        .with_prompt_config(cfg.prompt.clone())
        .with_bor_renormalize(cfg.bor_renormalize);
    let mode = match mode {
        ModeArg::Labeled => Mode::Labeled,
        ModeArg::Unlabeled => Mode::Unlabeled,
    };
    let strategy = match strategy {
        StrategyArg::Single => Strategy::Single,
        StrategyArg::Bor => Strategy::Bor,
        StrategyArg::Conc => Strategy::Conc,
    };
    let indexes = if k > 0 {
        Some((
            EmbeddingIndex::load_any(&cfg.hrl_index)?,
            EmbeddingIndex::load_any(&set.index)?,
        ))
    } else {
        None
    };
    for sample in inputs {
        let prediction = match &indexes {
            None => predictor.predict_direct(sample),
            Some((pool_index, test_index)) => test_index
                .vector(&sample.id)
                .ok_or_else(|| Error::UnknownSample(sample.id.clone()))
                .and_then(|q| retrieve_top_k(q, pool_index, k))
                .and_then(|hits| predictor.predict(sample, &hits, mode, strategy)),
        }
        .map_err(|e| e.at_input(&sample.id))?;
        outln!(
            io,
            "{}",
            serde_json::json!({
                "input_id": prediction.input_id,
                "label": prediction.label.name,
                "scores": prediction.per_label_score,
                "context_ids": prediction.context_ids,
            })
        );
    }
    Ok(())
}

fn cmd_eval(
    io: &mut Io,
    config: PathBuf,
    output_dir: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(dir) = output_dir {
        cfg.output_dir = dir;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let out = run_experiment(&cfg)?;
    out!(io, "{}", out.table.render());
    errln!(io, "artifacts written to {}", out.output_dir.display());
    Ok(())
}

fn print_similarity(io: &mut Io, reports: &[SimilarityReport], profiles: &[LanguageProfile]) {
    outln!(
        io,
        "{:<10} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>8}",
        "pair",
        "SYN",
        "PHO",
        "INV",
        "FAM",
        "GEO",
        "SIM",
        "WikiSize"
    );
    for r in reports {
        let f = r.per_feature;
        let wiki = profiles
            .iter()
            .find(|p| p.code == r.target)
            .map(|p| p.wiki_size.to_string())
            .unwrap_or_default();
        outln!(
            io,
            "{:<10} {:>6.1} {:>6.1} {:>6.1} {:>6.1} {:>6.1} {:>6.1} {:>8}",
            format!("{}-{}", r.source, r.target),
            f[0],
            f[1],
            f[2],
            f[3],
            f[4],
            r.aggregate,
            wiki
        );
    }
}

fn read_pairs(path: &PathBuf) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.split([',', '\n'])
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.split_once('-')
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .ok_or_else(|| Error::MalformedRecord {
                    line: 0,
                    message: format!("bad pair `{p}`, expected source-target"),
                })
        })
        .collect()
}

fn cmd_langsim(
    io: &mut Io,
    profiles: Option<PathBuf>,
    pairs: Option<PathBuf>,
    impute_k: usize,
    fixture: Option<String>,
) -> Result<bool> {
    if let Some(path) = profiles {
        let pairs = pairs.ok_or_else(|| usage("--pairs is required with --profiles"))?;
        let batch = read_pairs(&pairs)?;
        let profiles = impute_missing(&load_profiles(path)?, impute_k)?;
        print_similarity(io, &pairwise_similarity(&profiles, &batch)?, &profiles);
        return Ok(true);
    }
    let fx = resolve_fixture(fixture.as_deref().unwrap_or("langsim_10"))?;
    let rows = fx.langsim_rows()?;
    let mut ok = 0;
    outln!(
        io,
        "{:<6} {:>8} {:>8} {:>8}  {}",
        "lang",
        "mean",
        "SIM",
        "diff",
        "within 0.05"
    );
    for r in &rows {
        let rep = SimilarityReport::from_per_feature("en", r.lang.clone(), r.per_feature());
        let diff = rep.aggregate - r.sim;
        let within = diff.abs() <= 0.05;
        ok += usize::from(within);
        outln!(
            io,
            "{:<6} {:>8.3} {:>8.1} {:>+8.3}  {}",
            r.lang,
            rep.aggregate,
            r.sim,
            diff,
            if within { "yes" } else { "NO" }
        );
    }
    outln!(io, "{ok}/{} rows within tolerance", rows.len());
    Ok(ok == rows.len())
}

fn cmd_correlate(
    io: &mut Io,
    fixture: String,
    reference: String,
    mapping: Mapping,
    tolerance: f64,
    json: bool,
) -> Result<bool> {
    let rows = resolve_fixture(&fixture)?.pair_records()?;
    let reference = resolve_fixture(&reference)?.reference_cells()?;
    let mapping = match mapping {
        Mapping::Default => ColumnMapping::DEFAULT,
        Mapping::AsPrinted => ColumnMapping::AS_PRINTED,
    };
    let report = reproduce_paper_correlations(&rows, mapping, &reference, tolerance)?;
    if json {
        outln!(
            io,
            "{}",
            serde_json::to_string_pretty(&report).expect("report serializes")
        );
    } else {
        out!(io, "{}", report.render());
    }
    Ok(report.all_within_tolerance() && report.all_significance_match())
}

fn cmd_report(
    io: &mut Io,
    run: Option<PathBuf>,
    overview: Option<String>,
    check: bool,
) -> Result<bool> {
    if let Some(dir) = run {
        let table = derive_report(&dir)?;
        let text = table.render();
        out!(io, "{text}");
        if check {
            let path = dir.join(REPORT_TXT);
            let stored = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            if stored != text {
                errln!(
                    io,
                    "stored report differs from the one derived from predictions"
                );
                return Ok(false);
            }
        }
        return Ok(true);
    }
    let fx = resolve_fixture(overview.as_deref().unwrap_or("overview"))?;
    out!(
        io,
        "{}",
        OverviewTable::from_fixture(&fx.overview_rows()?).render()
    );
    Ok(true)
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Backend => 4,
    }
}

/// Runs the command line `args` (program name first) against the given
/// streams and returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let target: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = write!(target, "{}", e.render());
            return e.exit_code() as u8;
        }
    };
    let mut io = Io { out, err };
    let result = match cli.command {
        Command::Index {
            tsv,
            corpus,
            task,
            sidecar,
            out,
        } => cmd_index(&mut io, tsv, corpus, task, sidecar, out).map(|_| true),
        Command::Retrieve {
            index,
            query_file,
            id,
            k,
            random,
            seed,
        } => cmd_retrieve(&mut io, index, query_file, id, k, random, seed).map(|_| true),
        Command::Predict {
            config,
            language,
            id,
            mode,
            strategy,
            k,
        } => cmd_predict(&mut io, config, language, id, mode, strategy, k).map(|_| true),
        Command::Eval {
            config,
            output_dir,
            seed,
        } => cmd_eval(&mut io, config, output_dir, seed).map(|_| true),
        Command::Langsim {
            profiles,
            pairs,
            impute_k,
            fixture,
        } => cmd_langsim(&mut io, profiles, pairs, impute_k, fixture),
        Command::Correlate {
            fixture,
            reference,
            mapping,
            tolerance,
            json,
        } => cmd_correlate(&mut io, fixture, reference, mapping, tolerance, json),
        Command::Report {
            run,
            overview,
            check,
        } => cmd_report(&mut io, run, overview, check),
    };
    match result {
        Ok(true) => 0,
        // checks that ran but found deviations
        Ok(false) => 1,
        Err(e) => {
            errln!(io, "error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests;
