//! The `pickle-sentry` command line.
//!
//! [`run`] parses arguments and writes to the given streams, so the binary and
//! the tests share one code path. Exit codes: 0 success (for `scan`: every
//! file benign), 1 `scan` found a malicious or suspicious file, 2 runtime
//! error or any scan error, 64 usage error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use pickle_sentry::corpus::{self, GenSpec};
use pickle_sentry::decompiler::decompile;
use pickle_sentry::features::{self, FeatureVector};
use pickle_sentry::ml::{self, ForestConfig, IsoConfig, LabeledCorpus, Label, LofConfig, ModelKind, TrainedModel};
use pickle_sentry::scan::{self, FileVerdict, ImportPolicy, ScanConfig, ScanReport, Scanner};
use pickle_sentry::unwrap::{self, format_chain, Limits};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FINDINGS: i32 = 1;
pub const EXIT_ERROR: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "pickle-sentry", version, about = "Detect malicious pickle model files from opcode statistics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Scan files or directories and report a verdict per file.
    Scan(ScanArgs),
    /// Train a model on a corpus manifest.
    Train(TrainArgs),
    /// Evaluate a model on a corpus manifest.
    Eval(EvalArgs),
    /// Print one line per opcode: offset, mnemonic, argument.
    Disasm(FileArg),
    /// Print Python-like pseudo-source for each embedded pickle.
    Decompile(FileArg),
    /// Export opcode-frequency vectors as CSV.
    Features(FeaturesArgs),
    /// Generate a labeled synthetic corpus.
    GenCorpus(GenCorpusArgs),
    /// Time each pipeline stage over a corpus.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct ScanArgs {
    #[arg(required = true)]
    paths: Vec<PathBuf>,
    /// Trained model; without one only the import rules apply.
    #[arg(long, env = "PICKLE_SENTRY_MODEL")]
    model: Option<PathBuf>,
    /// Decide by the model alone and ignore the import rules.
    #[arg(long, env = "PICKLE_SENTRY_ML_ONLY")]
    ml_only: bool,
    /// JSON import policy extending the default deny list.
    #[arg(long, env = "PICKLE_SENTRY_POLICY")]
    policy: Option<PathBuf>,
    /// Emit JSON Lines instead of text.
    #[arg(long, env = "PICKLE_SENTRY_JSON")]
    json: bool,
    #[arg(long, env = "PICKLE_SENTRY_MAX_DEPTH", default_value_t = Limits::default().max_depth)]
    max_depth: usize,
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, env = "PICKLE_SENTRY_JOBS", value_parser = clap::value_parser!(u16).range(1..))]
    jobs: Option<u16>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// forest, iforest or lof.
    #[arg(long, env = "PICKLE_SENTRY_KIND")]
    kind: ModelKind,
    /// Manifest CSV written by gen-corpus.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, env = "PICKLE_SENTRY_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Trees for forest and iforest.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    trees: Option<u32>,
    /// Neighbours for lof.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    k: Option<u32>,
    #[arg(long, env = "PICKLE_SENTRY_MAX_DEPTH", default_value_t = Limits::default().max_depth)]
    max_depth: usize,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, env = "PICKLE_SENTRY_MODEL")]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, env = "PICKLE_SENTRY_MAX_DEPTH", default_value_t = Limits::default().max_depth)]
    max_depth: usize,
}

#[derive(Debug, Args)]
struct FileArg {
    file: PathBuf,
    #[arg(long, env = "PICKLE_SENTRY_MAX_DEPTH", default_value_t = Limits::default().max_depth)]
    max_depth: usize,
}

#[derive(Debug, Args)]
struct FeaturesArgs {
    #[arg(required = true)]
    paths: Vec<PathBuf>,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = "PICKLE_SENTRY_MAX_DEPTH", default_value_t = Limits::default().max_depth)]
    max_depth: usize,
    #[arg(long, env = "PICKLE_SENTRY_JOBS", value_parser = clap::value_parser!(u16).range(1..))]
    jobs: Option<u16>,
}

#[derive(Debug, Args)]
struct GenCorpusArgs {
    /// JSON corpus spec.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, env = "PICKLE_SENTRY_MODEL")]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Passes over the corpus; timings are pooled.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    repeat: u32,
}

/// An error caused by how the command was invoked.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(UsageError(msg.into()).into())
}

/// Parse `args` (including the program name) and run the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = out.write_all(text.as_bytes());
                    EXIT_OK
                }
                _ => {
                    let _ = err.write_all(text.as_bytes());
                    EXIT_USAGE
                }
            };
        }
    };
    let result = match cli.command {
        Command::Scan(a) => scan_cmd(a, out, err),
        Command::Train(a) => train_cmd(a, out, err),
        Command::Eval(a) => eval_cmd(a, out, err),
        Command::Disasm(a) => disasm_cmd(a, out),
        Command::Decompile(a) => decompile_cmd(a, out, err),
        Command::Features(a) => features_cmd(a, out),
        Command::GenCorpus(a) => gen_corpus_cmd(a, out),
        Command::Bench(a) => bench_cmd(a, out, err),
    };
    match result {
        Ok(code) => code,
        Err(e) if e.is::<UsageError>() => {
            let _ = writeln!(err, "error: {e}\n\nFor more information, try '--help'.");
            EXIT_USAGE
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            EXIT_ERROR
        }
    }
}

fn limits(max_depth: usize) -> Result<Limits> {
    if max_depth == 0 {
        return usage("--max-depth must be at least 1");
    }
    Ok(Limits { max_depth, ..Limits::default() })
}

fn with_jobs<R: Send>(jobs: Option<u16>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match jobs {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n.into()).build().context("starting worker pool")?;
            Ok(pool.install(f))
        }
    }
}

/// File arguments are scanned together; directory arguments are walked.
/// Reports follow argument order.
fn scan_all(scanner: &Scanner, paths: &[PathBuf]) -> Vec<ScanReport> {
    let mut reports = Vec::new();
    let mut files: Vec<PathBuf> = Vec::new();
    for p in paths {
        if p.is_dir() {
            reports.extend(scanner.scan_paths(&std::mem::take(&mut files)));
            reports.extend(scanner.scan_tree(p));
        } else {
            files.push(p.clone());
        }
    }
    reports.extend(scanner.scan_paths(&files));
    reports
}

/// 2 if anything failed to scan, else 1 if anything was flagged, else 0.
pub fn exit_code(reports: &[ScanReport]) -> i32 {
    if reports.iter().any(|r| r.file_verdict == FileVerdict::ScanError) {
        EXIT_ERROR
    } else if reports.iter().any(|r| matches!(r.file_verdict, FileVerdict::Malicious | FileVerdict::Suspicious)) {
        EXIT_FINDINGS
    } else {
        EXIT_OK
    }
}

fn write_report(out: &mut dyn Write, r: &ScanReport) -> std::io::Result<()> {
    write!(out, "{:<11} {}", r.file_verdict.to_string(), r.path)?;
    if let Some(s) = r.ml_score {
        write!(out, "  ml_score={s:.4}")?;
    }
    if let Some(e) = &r.error {
        write!(out, "  error: {e}")?;
    }
    writeln!(out)?;
    for e in &r.unwrap_errors {
        writeln!(out, "    unwrap error: {e}")?;
    }
    for c in &r.candidates {
        write!(out, "    {}  rule={}", format_chain(&c.origin_chain), c.rule_verdict)?;
        if let (Some(s), Some(v)) = (c.ml_score, c.ml_verdict) {
            write!(out, "  ml={v} ({s:.4})")?;
        }
        if !c.well_formed {
            match c.malform_reason {
                Some(m) => write!(out, "  malformed: {m}")?,
                None => write!(out, "  malformed")?,
            }
        }
        if c.oov_mass > 0.0 {
            write!(out, "  oov_mass={:.4}", c.oov_mass)?;
        }
        if !c.imports.is_empty() {
            let names: Vec<String> = c.imports.iter().map(|(m, n)| format!("{m}.{n}")).collect();
            write!(out, "  imports: {}", names.join(", "))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

fn scan_cmd(a: ScanArgs, out: &mut dyn Write, _err: &mut dyn Write) -> Result<i32> {
    if a.ml_only && a.model.is_none() {
        return usage("--ml-only needs --model");
    }
    let limits = limits(a.max_depth)?;
    let model = match &a.model {
        Some(p) => Some(ml::load_model(p, None).with_context(|| format!("loading model {}", p.display()))?),
        None => None,
    };
    let policy = match &a.policy {
        Some(p) => ImportPolicy::load(p).with_context(|| format!("loading policy {}", p.display()))?,
        None => ImportPolicy::default(),
    };
    let scanner = Scanner::new(model, ScanConfig { limits, policy, ml_only: a.ml_only });
    let reports = with_jobs(a.jobs, || scan_all(&scanner, &a.paths))?;
    for r in &reports {
        if a.json {
            writeln!(out, "{}", r.to_json_line())?;
        } else {
            write_report(out, r)?;
        }
    }
    if !a.json {
        let count = |v: FileVerdict| reports.iter().filter(|r| r.file_verdict == v).count();
        writeln!(
            out,
            "{} files: {} benign, {} suspicious, {} malicious, {} scan errors",
            reports.len(),
            count(FileVerdict::Benign),
            count(FileVerdict::Suspicious),
            count(FileVerdict::Malicious),
            count(FileVerdict::ScanError)
        )?;
    }
    Ok(exit_code(&reports))
}

fn load_manifest_corpus(path: &Path, limits: &Limits, err: &mut dyn Write) -> Result<LabeledCorpus> {
    let (corpus, skipped) =
        corpus::load_corpus(path, limits).with_context(|| format!("loading corpus {}", path.display()))?;
    for s in &skipped {
        writeln!(err, "warning: skipped {s}")?;
    }
    Ok(corpus)
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let limits = limits(a.max_depth)?;
    let corpus = load_manifest_corpus(&a.corpus, &limits, err)?;
    let model = match a.kind {
        ModelKind::RandomForest => {
            let mut cfg = ForestConfig { seed: a.seed, ..ForestConfig::default() };
            if let Some(t) = a.trees {
                cfg.n_trees = t as usize;
            }
            ml::train_random_forest(&corpus, &cfg)?
        }
        ModelKind::IsolationForest => {
            let mut cfg = IsoConfig { seed: a.seed, ..IsoConfig::default() };
            if let Some(t) = a.trees {
                cfg.n_trees = t as usize;
            }
            ml::train_isolation_forest(&corpus, &cfg)?
        }
        ModelKind::Lof => {
            let mut cfg = LofConfig { seed: a.seed, ..LofConfig::default() };
            if let Some(k) = a.k {
                cfg.k = k as usize;
            }
            ml::train_lof(&corpus, &cfg)?
        }
    };
    ml::save_model(&model, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    writeln!(
        out,
        "trained {} on {} samples ({} benign, {} malicious), {} features, threshold {}",
        model.kind,
        corpus.len(),
        corpus.count(Label::Benign),
        corpus.count(Label::Malicious),
        model.projection.dim(),
        model.threshold
    )?;
    writeln!(out, "wrote {}", a.out.display())?;
    Ok(EXIT_OK)
}

fn pct(x: f64) -> String {
    format!("{:.2}", x * 100.0)
}

fn eval_cmd(a: EvalArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let limits = limits(a.max_depth)?;
    let model = ml::load_model(&a.model, None).with_context(|| format!("loading model {}", a.model.display()))?;
    let corpus = load_manifest_corpus(&a.corpus, &limits, err)?;
    let m = ml::evaluate(&model, &corpus)?;
    writeln!(out, "model {}", model.kind)?;
    writeln!(
        out,
        "samples {} ({} benign, {} malicious)",
        corpus.len(),
        corpus.count(Label::Benign),
        corpus.count(Label::Malicious)
    )?;
    writeln!(out, "counts tp={} tn={} fp={} fn={}", m.tp, m.tn, m.fp, m.fn_)?;
    writeln!(out, "TP {}", pct(m.tp_rate))?;
    writeln!(out, "TN {}", pct(m.tn_rate))?;
    writeln!(out, "Precision {}", pct(m.precision))?;
    writeln!(out, "Recall {}", pct(m.recall))?;
    writeln!(out, "F1 {}", pct(m.f1))?;
    Ok(EXIT_OK)
}

fn read_input(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.is_empty() {
        anyhow::bail!("{} is empty", path.display());
    }
    Ok(bytes)
}

/// Raw pickles are returned as-is; containers are expanded.
fn candidates(bytes: &[u8], limits: &Limits) -> Result<Vec<(String, Vec<u8>)>> {
    let u = unwrap::unwrap(bytes, limits)?;
    Ok(u.candidates.iter().map(|c| (c.chain_string(), c.bytes.to_vec())).collect())
}

fn disasm_cmd(a: FileArg, out: &mut dyn Write) -> Result<i32> {
    let limits = limits(a.max_depth)?;
    let bytes = read_input(&a.file)?;
    let cands = candidates(&bytes, &limits)?;
    if cands.is_empty() {
        anyhow::bail!("no pickle found in {}", a.file.display());
    }
    let show_chain = cands.len() > 1 || cands[0].0 != "pkl";
    for (chain, data) in &cands {
        if show_chain {
            writeln!(out, "# {chain}")?;
        }
        for seg in pickle_sentry::disassemble_all(data)? {
            for e in &seg.events {
                writeln!(out, "{e}")?;
            }
            if let Some(reason) = seg.malform_reason {
                writeln!(out, "# malformed at byte {}: {reason}", seg.start + seg.byte_len)?;
            }
        }
    }
    Ok(EXIT_OK)
}

fn decompile_cmd(a: FileArg, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let limits = limits(a.max_depth)?;
    let bytes = read_input(&a.file)?;
    let cands = candidates(&bytes, &limits)?;
    if cands.is_empty() {
        anyhow::bail!("no pickle found in {}", a.file.display());
    }
    let show_chain = cands.len() > 1 || cands[0].0 != "pkl";
    for (chain, data) in &cands {
        if show_chain {
            writeln!(out, "# {chain}")?;
        }
        let segs = pickle_sentry::disassemble_all(data)?;
        for (i, seg) in segs.iter().enumerate() {
            if segs.len() > 1 {
                writeln!(out, "# pickle {} at byte {}", i + 1, seg.start)?;
            }
            match decompile(seg) {
                Ok(p) => write!(out, "{p}")?,
                Err(e) => writeln!(err, "warning: {chain}: {e}")?,
            }
        }
    }
    Ok(EXIT_OK)
}

fn features_cmd(a: FeaturesArgs, out: &mut dyn Write) -> Result<i32> {
    let limits = limits(a.max_depth)?;
    let mut files = Vec::new();
    for p in &a.paths {
        if p.is_dir() {
            let (found, errors) = scan::list_files(p);
            if let Some((path, e)) = errors.first() {
                anyhow::bail!("{path}: {e}");
            }
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    let rows: Vec<Result<(String, FeatureVector)>> = with_jobs(a.jobs, || {
        use rayon::prelude::*;
        files
            .par_iter()
            .map(|p| {
                let bytes = read_input(p)?;
                let v = scan::file_vector(&bytes, &limits).map_err(|e| anyhow::anyhow!("{}: {e}", p.display()))?;
                Ok((p.display().to_string(), v))
            })
            .collect()
    })?;
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    match &a.out {
        Some(path) => {
            let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            features::export_csv(&rows, std::io::BufWriter::new(f))?;
        }
        None => features::export_csv(&rows, out)?,
    }
    Ok(EXIT_OK)
}

fn gen_corpus_cmd(a: GenCorpusArgs, out: &mut dyn Write) -> Result<i32> {
    let text = fs::read_to_string(&a.spec).with_context(|| format!("reading {}", a.spec.display()))?;
    let spec = GenSpec::from_json(&text).with_context(|| format!("parsing {}", a.spec.display()))?;
    let rows = corpus::generate(&spec, &a.out)?;
    let malicious = rows.iter().filter(|r| r.label == Label::Malicious).count();
    writeln!(
        out,
        "wrote {} files ({} benign, {} malicious) and {}",
        rows.len(),
        rows.len() - malicious,
        malicious,
        a.out.join(corpus::MANIFEST_NAME).display()
    )?;
    Ok(EXIT_OK)
}

#[derive(Default)]
struct StageTimes {
    read: Vec<f64>,
    unwrap: Vec<f64>,
    disasm: Vec<f64>,
    features: Vec<f64>,
    inference: Vec<f64>,
    pipeline: Vec<f64>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn time_file(model: &TrainedModel, path: &Path, limits: &Limits, t: &mut StageTimes) -> Result<()> {
    let start = Instant::now();
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    t.read.push(ms(start));

    let start = Instant::now();
    let u = unwrap::unwrap(&bytes, limits)?;
    let unwrap_ms = ms(start);

    let start = Instant::now();
    let mut counts = [0u64; pickle_sentry::VOCABULARY_SIZE];
    for c in &u.candidates {
        if let Ok(seg) = pickle_sentry::disasm::count_all(&c.bytes) {
            counts.iter_mut().zip(seg).for_each(|(a, b)| *a += b);
        }
    }
    let disasm_ms = ms(start);

    let start = Instant::now();
    let v = FeatureVector::from_counts(&counts)?;
    let features_ms = ms(start);

    let start = Instant::now();
    std::hint::black_box(ml::predict(model, &v)?);
    let inference_ms = ms(start);

    t.unwrap.push(unwrap_ms);
    t.disasm.push(disasm_ms);
    t.features.push(features_ms);
    t.inference.push(inference_ms);
    t.pipeline.push(unwrap_ms + disasm_ms + features_ms + inference_ms);
    Ok(())
}

fn bench_cmd(a: BenchArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let model = ml::load_model(&a.model, None).with_context(|| format!("loading model {}", a.model.display()))?;
    let manifest = fs::File::open(&a.corpus).with_context(|| format!("opening {}", a.corpus.display()))?;
    let rows = corpus::read_manifest(manifest)?;
    let base = a.corpus.parent().unwrap_or(Path::new("."));
    let limits = Limits::default();
    let mut t = StageTimes::default();
    let mut skipped = 0;
    for _ in 0..a.repeat {
        for row in &rows {
            if let Err(e) = time_file(&model, &base.join(&row.path), &limits, &mut t) {
                skipped += 1;
                writeln!(err, "warning: {}: {e:#}", row.path)?;
            }
        }
    }
    writeln!(out, "model {}, {} files x {} passes", model.kind, rows.len() - skipped / a.repeat as usize, a.repeat)?;
    writeln!(out, "{:<12} {:>10} {:>10}", "stage", "median_ms", "mean_ms")?;
    for (name, v) in [
        ("read", &mut t.read),
        ("unwrap", &mut t.unwrap),
        ("disassemble", &mut t.disasm),
        ("features", &mut t.features),
        ("inference", &mut t.inference),
        ("pipeline", &mut t.pipeline),
    ] {
        let mean = if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        writeln!(out, "{name:<12} {:>10.4} {:>10.4}", median(v), mean)?;
    }
    Ok(EXIT_OK)
}
