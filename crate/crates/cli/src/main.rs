//! `stepchain` command-line tool.
//!
//! Exit codes: 0 on success, 1 when a command finds violations or fails
//! for a domain reason, 2 on a usage error.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stepchain::chain_data::{
    compute_stats, generate_synthetic, parse_and_validate, read_split_files, serialize_records,
    split_records, stratified_split, write_split_files, ChainRecord, FeatureTable, SplitManifest,
    SplitRatios, StepSchema,
};
use stepchain::checks::{gradcheck_suite, TOLERANCE};
use stepchain::distill::{
    evaluate_student, evaluate_teacher, examples_from_records, read_config_file, DistillConfig,
    Example, Trainer,
};
use stepchain::encoders::ImageFeatureSource;
use stepchain::numerics::ParamStore;
use stepchain::student::StudentModel;
use stepchain::teacher::TeacherModel;
use stepchain::{Error, Result};

const SEED_ENV: &str = "STEPCHAIN_SEED";

#[derive(Parser)]
#[command(
    name = "stepchain",
    version,
    about = "Stepwise chest X-ray reasoning: data tooling, training and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a data.json document against the seven-step template.
    Validate {
        #[arg(long)]
        data: PathBuf,
        /// Write the violation report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stratified train/val/test split by diagnosis.
    Split(SplitArgs),
    /// Dataset statistics as JSON.
    Stats {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate synthetic records and prototype image features.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory receiving data.json and features.json.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Pretrain the teacher, then distil into the student.
    Train(Box<TrainArgs>),
    /// Per-step metrics of a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// File of ids (one per line) restricting the evaluated records.
        #[arg(long)]
        ids: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every differentiable op and both models.
    Gradcheck {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SplitArgs {
    /// Records to split; their step-7 answer is the stratum.
    #[arg(long, conflicts_with = "counts", required_unless_present = "counts")]
    data: Option<PathBuf>,
    /// Split synthetic ids from per-class totals, e.g. `Normal=6787,Mass=120`.
    #[arg(long)]
    counts: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0.70)]
    train: f64,
    #[arg(long, default_value_t = 0.15)]
    val: f64,
    #[arg(long, default_value_t = 0.15)]
    test: f64,
    /// Directory receiving train.csv, val.csv, test.csv and manifest.json.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// `key = value` file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    /// Directory holding train.csv and val.csv; split on the fly otherwise.
    #[arg(long)]
    splits: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    teacher_lr: Option<f64>,
    #[arg(long)]
    student_lr: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    alpha_kd: Option<f64>,
    #[arg(long)]
    alpha_ch: Option<f64>,
    #[arg(long)]
    teacher_hidden: Option<usize>,
    #[arg(long)]
    student_hidden: Option<usize>,
    #[arg(long)]
    proj_dim: Option<usize>,
    /// Any other config key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn seed_or_env(flag: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| {
            Error::Config(format!("{SEED_ENV} must be an unsigned integer, got `{v}`"))
        }),
        Err(_) => Ok(0),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
}

fn write_out(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn load_clean(path: &Path, schema: &StepSchema) -> Result<Vec<ChainRecord>> {
    let report = parse_and_validate(&read(path)?, schema)?;
    if !report.is_clean() {
        let first = &report.violations[0];
        return Err(Error::InvalidArgument(format!(
            "{}: {} violation(s); first: record {} {}: {}",
            path.display(),
            report.violations.len(),
            first.index,
            first.rule,
            first.message
        )));
    }
    Ok(report.records)
}

/// Returns whether the document was clean.
fn validate(data: &Path, out: Option<&Path>) -> Result<bool> {
    let report = parse_and_validate(&read(data)?, &StepSchema::standard())?;
    let json = serde_json::json!({
        "total": report.total,
        "valid": report.is_clean(),
        "violations": report.violations,
    });
    if let Some(out) = out {
        write_out(
            out,
            &serde_json::to_string_pretty(&json).expect("report serializes"),
        )?;
    }
    for v in &report.violations {
        let step = v.step.map_or_else(String::new, |s| format!(" step {s}"));
        let id = v.patient_id.as_deref().unwrap_or("?");
        println!("record {} ({id}){step}: {}: {}", v.index, v.rule, v.message);
    }
    println!(
        "{} record(s), {} violation(s)",
        report.total,
        report.violations.len()
    );
    Ok(report.is_clean())
}

fn parse_counts(spec: &str) -> Result<Vec<(String, String)>> {
    let mut items = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (class, n) = part
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected CLASS=COUNT, got `{part}`")))?;
        let n: usize = n
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad count in `{part}`")))?;
        let class = class.trim();
        items.extend((0..n).map(|i| (format!("{class}-{i:06}"), class.to_string())));
    }
    Ok(items)
}

fn split(args: &SplitArgs) -> Result<()> {
    let ratios = SplitRatios {
        train: args.train,
        val: args.val,
        test: args.test,
    };
    let seed = seed_or_env(args.seed)?;
    let manifest = match (&args.data, &args.counts) {
        (Some(data), _) => {
            let schema = StepSchema::standard();
            split_records(&load_clean(data, &schema)?, &schema, ratios, seed)?
        }
        (None, Some(counts)) => stratified_split(&parse_counts(counts)?, ratios, seed)?,
        (None, None) => unreachable!("clap requires one of --data / --counts"),
    };
    if let Some(dir) = &args.out_dir {
        write_split_files(dir, &manifest)?;
        let per_class =
            serde_json::to_string_pretty(&manifest.per_class).expect("counts serialize");
        write_out(&dir.join("manifest.json"), &per_class)?;
    }
    let width = manifest
        .per_class
        .keys()
        .map(String::len)
        .max()
        .unwrap_or(5)
        .max(5);
    println!(
        "{:<width$}  {:>7}  {:>7}  {:>7}",
        "Class", "Train", "Val", "Test"
    );
    for (class, c) in &manifest.per_class {
        println!(
            "{class:<width$}  {:>7}  {:>7}  {:>7}",
            c.train, c.val, c.test
        );
    }
    println!(
        "{:<width$}  {:>7}  {:>7}  {:>7}",
        "Total",
        manifest.train.len(),
        manifest.val.len(),
        manifest.test.len()
    );
    Ok(())
}

fn stats(data: &Path, out: Option<&Path>) -> Result<()> {
    let stats = compute_stats(&load_clean(data, &StepSchema::standard())?);
    let json = serde_json::to_string_pretty(&stats).expect("stats serialize");
    match out {
        Some(out) => write_out(out, &json),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

fn synth(n: usize, dim: usize, noise: f64, seed: Option<u64>, out_dir: &Path) -> Result<()> {
    let data = generate_synthetic(n, dim, seed_or_env(seed)?, noise)?;
    fs::create_dir_all(out_dir)?;
    write_out(
        &out_dir.join("data.json"),
        &serialize_records(&data.records),
    )?;
    data.features.save(&out_dir.join("features.json"))?;
    println!(
        "wrote {n} record(s) with {dim}-dim features to {}",
        out_dir.display()
    );
    Ok(())
}

fn select(examples: &[Example], ids: &[String]) -> Result<Vec<Example>> {
    let by_id: HashMap<&str, &Example> = examples.iter().map(|e| (e.id.as_str(), e)).collect();
    ids.iter()
        .map(|id| {
            by_id.get(id.as_str()).map(|e| (*e).clone()).ok_or_else(|| {
                Error::InvalidArgument(format!("split id `{id}` is not in the data"))
            })
        })
        .collect()
}

/// File entries, then flags, in increasing precedence.
fn train_settings(args: &TrainArgs) -> Result<(DistillConfig, BTreeMap<String, String>)> {
    let mut entries = match &args.config {
        Some(path) => read_config_file(path)?,
        None => BTreeMap::new(),
    };
    let mut put = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            entries.insert(k.to_string(), v);
        }
    };
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    put("data", path(&args.data));
    put("features", path(&args.features));
    put("splits", path(&args.splits));
    put("out_dir", path(&args.out_dir));
    put("seed", args.seed.map(|v| v.to_string()));
    put("epochs", args.epochs.map(|v| v.to_string()));
    put(
        "pretrain_epochs",
        args.pretrain_epochs.map(|v| v.to_string()),
    );
    put("batch_size", args.batch_size.map(|v| v.to_string()));
    put("teacher_lr", args.teacher_lr.map(|v| v.to_string()));
    put("student_lr", args.student_lr.map(|v| v.to_string()));
    put("temperature", args.temperature.map(|v| v.to_string()));
    put("alpha_kd", args.alpha_kd.map(|v| v.to_string()));
    put("alpha_ch", args.alpha_ch.map(|v| v.to_string()));
    put("teacher_hidden", args.teacher_hidden.map(|v| v.to_string()));
    put("student_hidden", args.student_hidden.map(|v| v.to_string()));
    put("proj_dim", args.proj_dim.map(|v| v.to_string()));
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        entries.insert(k.trim().to_string(), v.trim().to_string());
    }
    if !entries.contains_key("seed") {
        entries.insert("seed".into(), seed_or_env(None)?.to_string());
    }
    let mut config = DistillConfig::default();
    let rest = config.apply(&entries)?;
    config.validate()?;
    let known = ["data", "features", "splits", "out_dir"];
    if let Some(k) = rest.keys().find(|k| !known.contains(&k.as_str())) {
        return Err(Error::Config(format!("unknown config key `{k}`")));
    }
    Ok((config, rest))
}

fn train(args: &TrainArgs) -> Result<()> {
    let (config, paths) = train_settings(args)?;
    let need = |k: &str| {
        paths.get(k).map(PathBuf::from).ok_or_else(|| {
            Error::Config(format!(
                "missing `{k}` (config key or --{})",
                k.replace('_', "-")
            ))
        })
    };
    let (data, features, out_dir) = (need("data")?, need("features")?, need("out_dir")?);
    let schema = StepSchema::standard();
    let records = load_clean(&data, &schema)?;
    let source = ImageFeatureSource::new(FeatureTable::load(&features)?);
    let manifest: SplitManifest = match paths.get("splits") {
        Some(dir) => read_split_files(Path::new(dir))?,
        None => {
            let m = split_records(&records, &schema, SplitRatios::default(), config.seed)?;
            write_split_files(&out_dir.join("splits"), &m)?;
            m
        }
    };
    let examples = examples_from_records(&records, &schema)?;
    let (train_set, val_set) = (
        select(&examples, &manifest.train)?,
        select(&examples, &manifest.val)?,
    );

    fs::create_dir_all(&out_dir)?;
    let mut log = fs::File::create(out_dir.join("metrics.jsonl"))?;
    let outcome =
        Trainer::new(config.clone(), &source)?.train(&train_set, &val_set, Some(&mut log))?;
    outcome.teacher.save(&out_dir.join("teacher.json"))?;
    outcome.student.save(&out_dir.join("student.json"))?;
    println!(
        "teacher: best mean val accuracy {:.2}% at epoch {}",
        outcome.best_teacher_accuracy, outcome.best_teacher_epoch
    );
    println!(
        "student: best mean val accuracy {:.2}% at epoch {}",
        outcome.best_student_accuracy, outcome.best_student_epoch
    );
    println!(
        "checkpoints and metrics.jsonl written to {}",
        out_dir.display()
    );
    Ok(())
}

fn eval(
    checkpoint: &Path,
    data: &Path,
    features: &Path,
    ids: Option<&Path>,
    batch_size: usize,
    out: Option<&Path>,
) -> Result<()> {
    let schema = StepSchema::standard();
    let examples = examples_from_records(&load_clean(data, &schema)?, &schema)?;
    let examples = match ids {
        Some(path) => {
            let ids: Vec<String> = read(path)?
                .lines()
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect();
            select(&examples, &ids)?
        }
        None => examples,
    };
    if examples.is_empty() {
        return Err(Error::InvalidArgument("no records to evaluate".into()));
    }
    let source = ImageFeatureSource::new(FeatureTable::load(features)?);
    let params = ParamStore::load(checkpoint)?;
    let is_teacher = params.names().any(|n| n.starts_with("teacher/"));
    let report = if is_teacher {
        evaluate_teacher(
            &TeacherModel::from_params(params)?,
            &source,
            &examples,
            batch_size,
        )?
    } else {
        evaluate_student(
            &StudentModel::from_params(params)?,
            &source,
            &examples,
            batch_size,
        )?
    };
    if let Some(out) = out {
        write_out(out, &report.to_json())?;
    }
    print!("{}", report.to_table());
    println!("mean accuracy {:.2}%", report.mean_accuracy());
    Ok(())
}

/// Returns whether every check passed.
fn gradcheck(out: Option<&Path>) -> Result<bool> {
    let results = gradcheck_suite()?;
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(4);
    for r in &results {
        let verdict = if r.passed { "ok" } else { "FAIL" };
        println!(
            "{:<width$}  {:>10.3e}  {:>6}  {verdict}",
            r.name, r.max_relative_error, r.coordinates
        );
    }
    let passed = results.iter().all(|r| r.passed);
    println!(
        "{} of {} checks within {TOLERANCE:e}",
        results.iter().filter(|r| r.passed).count(),
        results.len()
    );
    if let Some(out) = out {
        write_out(
            out,
            &serde_json::to_string_pretty(&results).expect("results serialize"),
        )?;
    }
    Ok(passed)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Validate { data, out } => validate(&data, out.as_deref()),
        Command::Split(args) => split(&args).map(|_| true),
        Command::Stats { data, out } => stats(&data, out.as_deref()).map(|_| true),
        Command::Synth {
            n,
            dim,
            noise,
            seed,
            out_dir,
        } => synth(n, dim, noise, seed, &out_dir).map(|_| true),
        Command::Train(args) => train(&args).map(|_| true),
        Command::Eval {
            checkpoint,
            data,
            features,
            ids,
            batch_size,
            out,
        } => eval(
            &checkpoint,
            &data,
            &features,
            ids.as_deref(),
            batch_size,
            out.as_deref(),
        )
        .map(|_| true),
        Command::Gradcheck { out } => gradcheck(out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
