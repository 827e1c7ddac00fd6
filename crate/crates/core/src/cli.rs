//! Command-line front end: `causal-augment <subcommand> [flags]`.
//!
//! Exit codes: 0 success, 1 operational error, 2 usage error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand};
use log::{info, warn, LevelFilter};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::adversarial::{
    attack_dataset, perturbed_items, read_annotations, AcoParams, AttackConfig, SubstitutionLexicon,
};
use crate::copa_data::{
    dataset_stats, import_xml, parse_items, write_items, write_jsonl, CopaItem,
};
use crate::corpus_filter::{
    read_pairs, write_pairs, CommandValidator, ConnectiveSet, Extractor, IcLexicon, Segmenter,
    ValidationPolicy,
};
use crate::distractor::{augment, AugmentOptions, Strategy};
use crate::error::{Error, Result};
use crate::eval::{accuracy, ar_test, ar_test_exact, EvalReport, SeedResult};
use crate::model_backend::{connect, stub_serve, CannedTable, StubConfig, StubModel};
use crate::text::{read_to_string, StopWords};

pub const BACKEND_ENV: &str = "CAUSAL_AUGMENT_BACKEND";

#[derive(Parser, Debug)]
#[command(
    name = "causal-augment",
    version,
    about = "Build, augment, attack and evaluate COPA-style causal reasoning data",
    args_override_self = true,
    arg_required_else_help = true
)]
struct Cli {
    /// File of key=value lines supplying defaults for any flag.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// off, error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    log_level: LevelFilter,

    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Word-count summary of a dataset.
    Stats(StatsArgs),
    /// Mine (effect, cause) pairs from a raw text corpus.
    Extract(ExtractArgs),
    /// Turn causal pairs into COPA items by adding a distractor.
    Augment(AugmentArgs),
    /// Search word substitutions that flip a victim classifier.
    Attack(AttackArgs),
    /// Accuracy of one or more backends on a dataset.
    Eval(EvalArgs),
    /// Approximate randomization test between two evaluation reports.
    Sigtest(SigtestArgs),
    /// Serve the deterministic stub model over HTTP.
    StubServe(StubServeArgs),
}

#[derive(clap::Args, Debug, Serialize)]
struct StatsArgs {
    /// JSONL items or the original XML release.
    #[arg(long)]
    input: PathBuf,
    /// Also write the statistics as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args, Debug, Serialize)]
struct ExtractArgs {
    /// A text file or a directory of shards.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// TSV of `surface<TAB>backward|forward`.
    #[arg(long)]
    connectives: Option<PathBuf>,
    /// One implicit-causality verb form per line.
    #[arg(long)]
    ic_lexicon: Option<PathBuf>,
    #[arg(long)]
    abbreviations: Option<PathBuf>,
    /// Shell command labelling sentences over JSON lines.
    #[arg(long)]
    validator_cmd: Option<String>,
    /// Relation label the validator must report; repeatable.
    #[arg(long)]
    accept_label: Vec<String>,
    /// Accept pairs when the validator is unavailable.
    #[arg(long)]
    fail_open: bool,
    /// Abort on invalid UTF-8 instead of skipping the line.
    #[arg(long)]
    strict: bool,
    /// Write the rejection histogram as JSON.
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(clap::Args, Debug, Serialize)]
struct AugmentArgs {
    #[arg(long)]
    pairs: PathBuf,
    /// random, overlap or lm.
    #[arg(long)]
    strategy: Strategy,
    /// Generation backend, needed by the lm strategy.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    stopwords: Option<PathBuf>,
    #[arg(long)]
    connectives: Option<PathBuf>,
    #[arg(long, default_value_t = crate::distractor::DEFAULT_MAX_RETRIES)]
    max_retries: usize,
    #[arg(long, default_value_t = crate::distractor::DEFAULT_MAX_NEW_WORDS)]
    max_new_words: usize,
    #[arg(long, default_value_t = 1)]
    first_id: u64,
    /// Drop exact duplicate items.
    #[arg(long)]
    dedup: bool,
}

#[derive(clap::Args, Debug, Serialize)]
struct AttackArgs {
    #[arg(long)]
    data: PathBuf,
    /// Victim backend.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    subst_lexicon: PathBuf,
    #[arg(long)]
    annotations: PathBuf,
    /// Attack results, one JSON record per item.
    #[arg(long)]
    out: PathBuf,
    /// Successful perturbed items; defaults to `<out>` with a `.perturbed.jsonl` extension.
    #[arg(long)]
    perturbed_out: Option<PathBuf>,
    /// First id for perturbed items; defaults to one past the largest input id.
    #[arg(long)]
    first_id: Option<u64>,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    ants: usize,
    #[arg(long, default_value_t = 50)]
    iters: usize,
    #[arg(long, default_value_t = 0.1)]
    rho: f64,
    #[arg(long, default_value_t = 1.0)]
    tau0: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 0.25)]
    max_frac: f64,
    /// Use every sense of a lemma for tokens without a sense id.
    #[arg(long)]
    pos_only: bool,
}

#[derive(clap::Args, Debug, Serialize)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// One backend per fine-tuning seed; repeatable.
    #[arg(long)]
    backend: Vec<String>,
    /// Report with per-seed correctness vectors.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args, Debug, Serialize)]
struct SigtestArgs {
    /// Evaluation report of system A.
    #[arg(long)]
    a: PathBuf,
    /// Evaluation report of system B.
    #[arg(long)]
    b: PathBuf,
    /// Which per-seed record of each report to compare.
    #[arg(long, default_value_t = 0)]
    record: usize,
    #[arg(long, default_value_t = 10_000)]
    iterations: u64,
    #[arg(long, required_unless_present = "exact")]
    seed: Option<u64>,
    /// Enumerate every swap pattern (at most 20 items).
    #[arg(long)]
    exact: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args, Debug, Serialize)]
struct StubServeArgs {
    /// 0 picks a free port.
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// TSV of `prompt-key<TAB>continuation`.
    #[arg(long)]
    canned: Option<PathBuf>,
    #[arg(long, default_value_t = 4.0, allow_hyphen_values = true)]
    w: f64,
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    b: f64,
    #[arg(long, default_value_t = 4)]
    workers: usize,
}

enum Failure {
    Usage(clap::Error),
    Op(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Op(e)
    }
}

fn usage(kind: ErrorKind, message: impl std::fmt::Display) -> Failure {
    Failure::Usage(Cli::command().error(kind, message))
}

/// Parse `argv` (program name first), run the subcommand and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<String> = argv
        .into_iter()
        .map(|a| a.into().to_string_lossy().into_owned())
        .collect();
    let outcome = with_config(argv)
        .and_then(|argv| Cli::try_parse_from(argv).map_err(Failure::Usage))
        .and_then(|cli| {
            init_logging(cli.log_level);
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(cli.jobs.unwrap_or(0))
                .build()
                .map_err(|e| Error::Argument(format!("thread pool: {e}")))?;
            pool.install(|| dispatch(cli.command))
        });
    match outcome {
        Ok(()) => 0,
        Err(Failure::Usage(e)) => {
            let _ = e.print();
            e.exit_code()
        }
        Err(Failure::Op(e)) => {
            log::error!("{e}");
            1
        }
    }
}

fn init_logging(level: LevelFilter) {
    let _ = env_logger::Builder::new()
        .filter_level(LevelFilter::Trace)
        .format(|buf, record| {
            let line = json!({
                "level": record.level().as_str(),
                "target": record.target(),
                "message": record.args().to_string(),
            });
            writeln!(buf, "{line}")
        })
        .target(env_logger::Target::Stderr)
        .try_init();
    log::set_max_level(level);
}

/// Splice `--config` entries into `argv` right after the subcommand, skipping
/// flags the command line already sets.
fn with_config(argv: Vec<String>) -> std::result::Result<Vec<String>, Failure> {
    let mut path = None;
    for (i, a) in argv.iter().enumerate() {
        if a == "--config" {
            path = argv.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else {
        return Ok(argv);
    };
    let mut cmd = Cli::command();
    cmd.build();
    let Some((sub_index, sub)) = argv
        .iter()
        .enumerate()
        .skip(1)
        .find_map(|(i, a)| cmd.find_subcommand(a).map(|s| (i, s.clone())))
    else {
        return Ok(argv);
    };
    let content = read_to_string(Path::new(&path))?;
    let mut extra = Vec::new();
    for (n, line) in content.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            usage(
                ErrorKind::InvalidValue,
                format!("{path}:{}: expected key=value", n + 1),
            )
        })?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        let given = argv[1..]
            .iter()
            .any(|a| *a == format!("--{key}") || a.starts_with(&format!("--{key}=")));
        if given {
            continue;
        }
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| {
                usage(
                    ErrorKind::UnknownArgument,
                    format!("{path}:{}: unknown key {key:?} for {}", n + 1, sub.get_name()),
                )
            })?;
        if arg.get_action().takes_values() {
            extra.push(format!("--{key}"));
            extra.push(value.to_string());
        } else if value.parse::<bool>().map_err(|_| {
            usage(
                ErrorKind::InvalidValue,
                format!("{path}:{}: {key} expects true or false", n + 1),
            )
        })? {
            extra.push(format!("--{key}"));
        }
    }
    let mut out = argv[..=sub_index].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[sub_index + 1..]);
    Ok(out)
}

fn dispatch(command: Command) -> std::result::Result<(), Failure> {
    match command {
        Command::Stats(a) => cmd_stats(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Augment(a) => cmd_augment(a),
        Command::Attack(a) => cmd_attack(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sigtest(a) => cmd_sigtest(a),
        Command::StubServe(a) => cmd_stub_serve(a),
    }
}

/// Items from JSONL, or from the XML release when the file looks like XML.
pub fn load_items(path: &Path) -> Result<Vec<CopaItem>> {
    let content = read_to_string(path)?;
    let is_xml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("xml"))
        || content.trim_start().starts_with('<');
    if is_xml {
        import_xml(&content)
    } else {
        parse_items(content.as_bytes())
    }
}

fn backend_address(flag: Option<String>, subcommand: &str) -> std::result::Result<String, Failure> {
    flag.or_else(|| std::env::var(BACKEND_ENV).ok().filter(|s| !s.is_empty()))
        .ok_or_else(|| {
            usage(
                ErrorKind::MissingRequiredArgument,
                format!("{subcommand} requires --backend (or {BACKEND_ENV})"),
            )
        })
}

#[derive(Debug, Serialize)]
struct FileDigest {
    path: String,
    bytes: u64,
    sha256: String,
}

fn digest_file(path: &Path) -> Result<FileDigest> {
    let mut file = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        bytes += n as u64;
    }
    Ok(FileDigest {
        path: path.to_string_lossy().into_owned(),
        bytes,
        sha256: hasher.finalize().iter().map(|b| format!("{b:02x}")).collect(),
    })
}

fn digest_paths(paths: &[&Path]) -> Result<Vec<FileDigest>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            for entry in walkdir::WalkDir::new(p).sort_by_file_name() {
                let entry = entry.map_err(|e| Error::Io {
                    path: p.to_path_buf(),
                    source: e.into(),
                })?;
                if entry.file_type().is_file() {
                    out.push(digest_file(entry.path())?);
                }
            }
        } else {
            out.push(digest_file(p)?);
        }
    }
    Ok(out)
}

/// Record of one run, written to `<out>.manifest.json`. Contains no clock
/// readings, so identical runs produce identical manifests.
struct Manifest<'a> {
    subcommand: &'static str,
    settings: Value,
    inputs: Vec<&'a Path>,
    outputs: Vec<&'a Path>,
    counts: BTreeMap<&'static str, Value>,
}

impl Manifest<'_> {
    fn write(&self, primary: &Path) -> Result<PathBuf> {
        let mut name = primary.as_os_str().to_owned();
        name.push(".manifest.json");
        let path = PathBuf::from(name);
        let doc = json!({
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "subcommand": self.subcommand,
            "settings": self.settings,
            "inputs": digest_paths(&self.inputs)?,
            "outputs": digest_paths(&self.outputs)?,
            "counts": self.counts,
        });
        let mut text = serde_json::to_string_pretty(&doc).expect("manifest serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

fn settings<T: Serialize>(args: &T) -> Value {
    serde_json::to_value(args).expect("arguments serialize")
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_stats(args: StatsArgs) -> std::result::Result<(), Failure> {
    let items = load_items(&args.input)?;
    let stats = dataset_stats(&items)?;
    print!("{stats}");
    if let Some(out) = &args.out {
        write_json(out, &stats)?;
        Manifest {
            subcommand: "stats",
            settings: settings(&args),
            inputs: vec![&args.input],
            outputs: vec![out],
            counts: BTreeMap::from([("items", json!(items.len()))]),
        }
        .write(out)?;
    }
    Ok(())
}

fn cmd_extract(args: ExtractArgs) -> std::result::Result<(), Failure> {
    let mut extractor = Extractor::default();
    if let Some(p) = &args.connectives {
        extractor.connectives = ConnectiveSet::load(p)?;
    }
    if let Some(p) = &args.ic_lexicon {
        extractor.ic_lexicon = IcLexicon::load(p)?;
    }
    extractor.segmenter = match &args.abbreviations {
        Some(p) => Segmenter::load_abbreviations(p, args.strict)?,
        None => {
            let mut s = Segmenter::default();
            s.strict = args.strict;
            s
        }
    };
    if let Some(cmd) = &args.validator_cmd {
        extractor.validator = Box::new(CommandValidator {
            command: cmd.clone(),
        });
    }
    let mut policy = ValidationPolicy {
        fail_open: args.fail_open,
        ..ValidationPolicy::default()
    };
    if !args.accept_label.is_empty() {
        policy.accept_labels = args.accept_label.clone();
    }
    extractor.policy = policy;

    let extraction = if args.corpus.is_dir() {
        extractor.extract_dir(&args.corpus)?
    } else {
        let name = args
            .corpus
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        extractor.extract_file(&args.corpus, &name)?
    };
    write_pairs(&args.out, &extraction.pairs)?;
    let s = &extraction.stats;
    info!(
        "extracted {} pairs from {} sentences ({} with a connective, {} rejected)",
        s.accepted,
        s.sentences,
        s.with_connective,
        s.total_rejected()
    );
    let mut outputs: Vec<&Path> = vec![&args.out];
    if let Some(p) = &args.stats {
        write_json(p, s)?;
        outputs.push(p);
    }
    Manifest {
        subcommand: "extract",
        settings: settings(&args),
        inputs: vec![&args.corpus],
        outputs,
        counts: BTreeMap::from([
            ("sentences", json!(s.sentences)),
            ("with_connective", json!(s.with_connective)),
            ("pairs", json!(s.accepted)),
            ("rejected", json!(s.rejected)),
            ("skipped_lines", json!(s.skipped_lines)),
        ]),
    }
    .write(&args.out)?;
    Ok(())
}

fn cmd_augment(args: AugmentArgs) -> std::result::Result<(), Failure> {
    let backend = match args.strategy {
        Strategy::Lm => Some(connect(&backend_address(args.backend.clone(), "augment --strategy lm")?)?),
        _ => None,
    };
    let pairs = read_pairs(&args.pairs)?;
    let opts = AugmentOptions {
        strategy: args.strategy,
        seed: args.seed,
        stopwords: match &args.stopwords {
            Some(p) => StopWords::load(p)?,
            None => StopWords::default(),
        },
        connectives: match &args.connectives {
            Some(p) => ConnectiveSet::load(p)?,
            None => ConnectiveSet::default(),
        },
        max_retries: args.max_retries,
        max_new_words: args.max_new_words,
        first_id: args.first_id,
        dedup: args.dedup,
    };
    let outcome = augment(&pairs, &opts, backend.as_deref().map(|b| b as _))?;
    for (source, reason) in &outcome.failures {
        warn!("{source}: {reason}");
    }
    let records: Vec<CopaItem> = outcome.items.iter().map(|i| i.to_record()).collect();
    write_items(&args.out, &records)?;
    info!(
        "{} items from {} pairs ({} failed, {} duplicates)",
        records.len(),
        pairs.len(),
        outcome.failures.len(),
        outcome.duplicates
    );
    Manifest {
        subcommand: "augment",
        settings: settings(&args),
        inputs: vec![&args.pairs],
        outputs: vec![&args.out],
        counts: BTreeMap::from([
            ("pairs", json!(pairs.len())),
            ("items", json!(records.len())),
            ("failures", json!(outcome.failures.len())),
            ("duplicates", json!(outcome.duplicates)),
        ]),
    }
    .write(&args.out)?;
    Ok(())
}

fn cmd_attack(args: AttackArgs) -> std::result::Result<(), Failure> {
    let address = backend_address(args.backend.clone(), "attack")?;
    let params = AcoParams {
        ants: args.ants,
        iterations: args.iters,
        rho: args.rho,
        tau0: args.tau0,
        alpha: args.alpha,
        beta: args.beta,
        max_substitution_fraction: args.max_frac,
        seed: args.seed,
    };
    params
        .validate()
        .map_err(|e| usage(ErrorKind::InvalidValue, e))?;
    let backend = connect(&address)?;
    let items = load_items(&args.data)?;
    let lexicon = SubstitutionLexicon::load(&args.subst_lexicon)?;
    let annotations = read_annotations(&args.annotations)?;
    let config = AttackConfig {
        lexicon: &lexicon,
        annotations: &annotations,
        params,
        pos_only: args.pos_only,
    };
    let summary = attack_dataset(&items, &backend, &config)?;
    for (id, message) in &summary.errors {
        warn!("item {id}: {message}");
    }
    write_jsonl(&args.out, &summary.results)?;
    let perturbed_path = args
        .perturbed_out
        .clone()
        .unwrap_or_else(|| args.out.with_extension("perturbed.jsonl"));
    let first_id = args
        .first_id
        .unwrap_or_else(|| items.iter().map(|i| i.id).max().unwrap_or(0) + 1);
    let perturbed = perturbed_items(&summary.results, first_id);
    write_items(&perturbed_path, &perturbed)?;
    println!(
        "attempted {} successes {} success_rate {:.4} errors {}",
        summary.attempted,
        summary.successes,
        summary.success_rate,
        summary.errors.len()
    );
    Manifest {
        subcommand: "attack",
        settings: settings(&args),
        inputs: vec![&args.data, &args.subst_lexicon, &args.annotations],
        outputs: vec![&args.out, &perturbed_path],
        counts: BTreeMap::from([
            ("items", json!(items.len())),
            ("attempted", json!(summary.attempted)),
            ("successes", json!(summary.successes)),
            ("success_rate", json!(summary.success_rate)),
            ("errors", json!(summary.errors.len())),
            ("backend", json!(address)),
        ]),
    }
    .write(&args.out)?;
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> std::result::Result<(), Failure> {
    let backends = if args.backend.is_empty() {
        vec![backend_address(None, "eval")?]
    } else {
        args.backend.clone()
    };
    let items = load_items(&args.data)?;
    let mut per_seed = Vec::with_capacity(backends.len());
    for (i, address) in backends.iter().enumerate() {
        let backend = connect(address)?;
        let (acc, correct) = accuracy(&items, &backend)?;
        println!("seed {i} backend {address} accuracy {:.4}", acc);
        per_seed.push(SeedResult {
            seed: i as u64,
            backend: address.clone(),
            accuracy: acc,
            correct,
        });
    }
    let report = EvalReport::from_seeds(per_seed);
    match report.aggregate {
        Some(a) => println!(
            "aggregate min {:.4} max {:.4} mean {:.4} std {:.4}",
            a.min, a.max, a.mean, a.std
        ),
        None => info!("fewer than 5 seeds, no trimmed aggregate"),
    }
    if let Some(out) = &args.out {
        report.write(out)?;
        Manifest {
            subcommand: "eval",
            settings: settings(&args),
            inputs: vec![&args.data],
            outputs: vec![out],
            counts: BTreeMap::from([
                ("items", json!(items.len())),
                ("seeds", json!(report.per_seed.len())),
                ("backends", json!(backends)),
            ]),
        }
        .write(out)?;
    }
    Ok(())
}

fn pick_record(path: &Path, index: usize) -> Result<SeedResult> {
    let report = EvalReport::read(path)?;
    let n = report.per_seed.len();
    report.per_seed.into_iter().nth(index).ok_or_else(|| {
        Error::Argument(format!(
            "{} has {n} seed records, record {index} requested",
            path.display()
        ))
    })
}

fn cmd_sigtest(args: SigtestArgs) -> std::result::Result<(), Failure> {
    let a = pick_record(&args.a, args.record)?;
    let b = pick_record(&args.b, args.record)?;
    let outcome = if args.exact {
        ar_test_exact(&a.correct, &b.correct)?
    } else {
        ar_test(
            &a.correct,
            &b.correct,
            args.iterations,
            args.seed.expect("clap enforces --seed without --exact"),
        )?
    };
    println!(
        "observed {:.6} p {:.6} samples {} exact {}",
        outcome.observed, outcome.p_value, outcome.samples, outcome.exact
    );
    if let Some(out) = &args.out {
        write_json(out, &outcome)?;
        Manifest {
            subcommand: "sigtest",
            settings: settings(&args),
            inputs: vec![&args.a, &args.b],
            outputs: vec![out],
            counts: BTreeMap::from([("items", json!(a.correct.len()))]),
        }
        .write(out)?;
    }
    Ok(())
}

fn cmd_stub_serve(args: StubServeArgs) -> std::result::Result<(), Failure> {
    let mut model = StubModel::with_params(args.w, args.b);
    if let Some(p) = &args.canned {
        model.canned = CannedTable::load(p)?;
    }
    let server = stub_serve(StubConfig {
        port: args.port,
        host: args.host.clone(),
        model,
        workers: args.workers,
    })?;
    println!("listening on http://{}:{}", args.host, server.port());
    let _ = std::io::stdout().flush();
    server.join();
    Ok(())
}
