//! Command-line front end: train and evaluate single runs, sweep B×M grids,
//! and emit plot-ready CSV.
//!
//! Exit codes: 0 success, 1 usage/parse/configuration error, 2 I/O error.
//! Relative dataset paths are resolved under `BUDGETSVM_DATA_DIR` when that
//! variable is set.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};

use crate::data::{load_svmlight, split, DataError, Dataset};
use crate::diagnostics::{confusion_counts, evaluate_accuracy, merge_fraction, RunReport};
use crate::merge::{GoldenSectionParams, GradientDescentParams, Strategy};
use crate::model::{BudgetedModel, ModelError};
use crate::sgd::{train, LrSchedule, TrainConfig, TrainError};

/// Dataset path prefix for relative paths.
pub const DATA_DIR_ENV: &str = "BUDGETSVM_DATA_DIR";

#[derive(Parser)]
#[command(
    name = "budgetsvm",
    version,
    about = "Budgeted kernel SVM training with multi-merge budget maintenance"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write the model file and report.
    Train(TrainArgs),
    /// Run a B×M×strategy×seed grid and append one CSV row per run.
    Sweep(SweepArgs),
    /// Evaluate a saved model on a dataset.
    Eval(EvalArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Training data in svmlight format, plain or gzip.
    #[arg(long)]
    data: PathBuf,
    /// Held-out test data; accuracy falls back to the training set without it.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Split off a test set when no --test file exists: train fraction in (0,1).
    #[arg(long)]
    split_fraction: Option<f64>,
    #[arg(long, default_value_t = 1)]
    split_seed: u64,
    /// Min-max scale features to [0,1] using training-set ranges.
    #[arg(long)]
    scale: bool,
}

#[derive(Args)]
struct HyperArgs {
    /// SVM cost parameter; translated to lambda = 1/(n*C).
    #[arg(long = "C")]
    c: Option<f64>,
    /// Regularization parameter (alternative to --C).
    #[arg(long)]
    lambda: Option<f64>,
    /// Gaussian kernel bandwidth.
    #[arg(long)]
    gamma: Option<f64>,
    /// Hyperparameter preset: phishing, web, adult, ijcnn or skin.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, default_value_t = 1)]
    epochs: usize,
    /// Learning-rate schedule: 'pegasos' or 'const:<eta>'.
    #[arg(long, default_value = "pegasos")]
    eta: LrSchedule,
    /// Golden section stops at this bracket width.
    #[arg(long, default_value_t = 1e-3)]
    gs_tol: f64,
    #[arg(long, default_value_t = 200)]
    gs_max_iters: usize,
    /// Relative-improvement stop for gradient-descent merging.
    #[arg(long, default_value_t = 1e-8)]
    gd_epsilon: f64,
    #[arg(long, default_value_t = 100)]
    gd_max_iters: usize,
    /// Refine the cascade output by gradient descent (mm-gd only).
    #[arg(long)]
    gd_refine: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long)]
    budget: usize,
    #[arg(long, default_value_t = 2)]
    mergees: usize,
    /// removal, merge, mm-bsgd or mm-gd.
    #[arg(long, default_value = "mm-bsgd")]
    strategy: Strategy,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Write the trained model here.
    #[arg(long)]
    model_out: Option<PathBuf>,
    /// Write the report as a one-row CSV here.
    #[arg(long)]
    report_out: Option<PathBuf>,
    /// Write the full report (logs included) as JSON here.
    #[arg(long)]
    report_json: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Comma-separated budget values.
    #[arg(long, value_delimiter = ',', required = true)]
    budgets: Vec<usize>,
    /// Comma-separated mergee counts.
    #[arg(long, value_delimiter = ',', required = true)]
    mergees: Vec<usize>,
    /// Comma-separated strategies.
    #[arg(long, value_delimiter = ',', default_value = "mm-bsgd")]
    strategies: Vec<Strategy>,
    /// Repetitions per grid cell, with seeds seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// CSV output; existing rows are kept and their runs skipped.
    #[arg(long)]
    out: PathBuf,
    /// Run up to N trainings concurrently. Timing columns become
    /// unreliable under co-running jobs; keep sequential for benchmarks.
    #[arg(long, value_name = "N")]
    parallel: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

/// CSV schema of sweep output rows.
pub const SWEEP_HEADER: &str =
    "dataset,B,M,strategy,seed,accuracy,total_seconds,merge_fraction,avg_gradient_error,final_sv_count";

#[derive(Debug)]
struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError {
            code: 2,
            message: e.to_string(),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let code = match e {
            DataError::Io(_) => 2,
            _ => 1,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        CliError {
            code: 1,
            message: e.to_string(),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let code = match e {
            ModelError::Io(_) => 2,
            _ => 1,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

/// Parses the process arguments, runs the command, and returns the exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprint!("{e}");
            return 1;
        }
    };
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Eval(args) => cmd_eval(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

/// Tuned (C, γ) presets for the benchmark datasets.
pub fn preset(name: &str) -> Result<(f64, f64), String> {
    match name {
        "phishing" => Ok((8.0, 8.0)),
        "web" => Ok((8.0, 0.03)),
        "adult" => Ok((32.0, 0.008)),
        "ijcnn" => Ok((32.0, 2.0)),
        "skin" => Ok((8.0, 0.03)),
        _ => Err(format!(
            "unknown preset '{name}' (expected phishing, web, adult, ijcnn or skin)"
        )),
    }
}

/// Relative paths are resolved under `BUDGETSVM_DATA_DIR` when set.
pub fn resolve_data_path(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir).join(path),
        _ => path.to_path_buf(),
    }
}

fn load_datasets(args: &DataArgs) -> Result<(Dataset, Option<Dataset>, String), CliError> {
    let train_path = resolve_data_path(&args.data);
    let dataset_label = args.data.display().to_string();
    let mut train_set = load_svmlight(&train_path)?;
    let mut test_set = match &args.test {
        Some(p) => Some(load_svmlight(&resolve_data_path(p))?),
        None => None,
    };
    if test_set.is_none() {
        if let Some(fraction) = args.split_fraction {
            let (tr, te) = split(&train_set, fraction, args.split_seed)?;
            train_set = tr;
            test_set = Some(te);
        }
    }
    if args.scale {
        let ranges = train_set.min_max_ranges();
        train_set.apply_min_max(&ranges);
        if let Some(te) = &mut test_set {
            te.apply_min_max(&ranges);
        }
    }
    Ok((train_set, test_set, dataset_label))
}

fn build_config(hyper: &HyperArgs) -> Result<TrainConfig, CliError> {
    let (mut c, mut gamma) = (hyper.c, hyper.gamma);
    if let Some(name) = &hyper.preset {
        let (pc, pg) = preset(name).map_err(CliError::usage)?;
        // explicit flags override the preset's components
        if c.is_none() && hyper.lambda.is_none() {
            c = Some(pc);
        }
        if gamma.is_none() {
            gamma = Some(pg);
        }
    }
    let gamma = gamma.ok_or_else(|| CliError::usage("either --gamma or --preset is required"))?;
    Ok(TrainConfig {
        lambda: hyper.lambda,
        c,
        gamma,
        epochs: hyper.epochs,
        schedule: hyper.eta,
        golden: GoldenSectionParams {
            tol: hyper.gs_tol,
            max_iters: hyper.gs_max_iters,
        },
        gd: GradientDescentParams {
            epsilon: hyper.gd_epsilon,
            max_iters: hyper.gd_max_iters,
        },
        gd_refine: hyper.gd_refine,
        ..TrainConfig::default()
    })
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let (train_set, test_set, _) = load_datasets(&args.data)?;
    let mut config = build_config(&args.hyper)?;
    config.budget = args.budget;
    config.mergees = args.mergees;
    config.strategy = args.strategy;
    config.seed = args.seed;

    let (model, report) = train(&train_set, test_set.as_ref(), &config)?;

    if let Some(path) = &args.model_out {
        model.save(path)?;
    }
    if let Some(path) = &args.report_out {
        let mut f = File::create(path)?;
        writeln!(f, "{}", RunReport::csv_header())?;
        writeln!(f, "{}", report.csv_row())?;
    }
    if let Some(path) = &args.report_json {
        std::fs::write(path, report.to_json())?;
    }
    print!("{}", report.pretty());
    Ok(())
}

fn sweep_row_key(dataset: &str, b: usize, m: usize, strategy: Strategy, seed: u64) -> String {
    format!("{dataset},{b},{m},{strategy},{seed}")
}

fn existing_sweep_keys(path: &Path) -> Result<HashSet<String>, CliError> {
    let mut keys = HashSet::new();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(keys),
        Err(e) => return Err(e.into()),
    };
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.is_empty() || line.starts_with("dataset,") {
            continue;
        }
        let key: Vec<&str> = line.split(',').take(5).collect();
        if key.len() == 5 {
            keys.insert(key.join(","));
        }
    }
    Ok(keys)
}

fn cmd_sweep(args: SweepArgs) -> Result<(), CliError> {
    if args.budgets.is_empty() || args.mergees.is_empty() || args.reps == 0 {
        return Err(CliError::usage(
            "sweep needs nonempty --budgets and --mergees and --reps >= 1",
        ));
    }
    if args.data.data.to_string_lossy().contains(',') {
        // the dataset path is the first CSV column and the resume key
        return Err(CliError::usage(
            "sweep cannot use dataset paths containing commas",
        ));
    }
    let (train_set, test_set, dataset_label) = load_datasets(&args.data)?;
    let base = build_config(&args.hyper)?;

    let done = existing_sweep_keys(&args.out)?;
    let mut pending: Vec<TrainConfig> = Vec::new();
    let mut warned_classic = false;
    for &b in &args.budgets {
        for &m in &args.mergees {
            for &strategy in &args.strategies {
                if strategy == Strategy::Merge && m != 2 {
                    // classic merge is M = 2 by definition; the cell is
                    // structurally impossible rather than a failed run
                    if !warned_classic {
                        eprintln!("warning: skipping strategy 'merge' for mergees != 2");
                        warned_classic = true;
                    }
                    continue;
                }
                for rep in 0..args.reps {
                    let seed = args.seed + rep as u64;
                    if done.contains(&sweep_row_key(&dataset_label, b, m, strategy, seed)) {
                        continue;
                    }
                    let mut cfg = base.clone();
                    cfg.budget = b;
                    cfg.mergees = m;
                    cfg.strategy = strategy;
                    cfg.seed = seed;
                    pending.push(cfg);
                }
            }
        }
    }

    let needs_header = std::fs::metadata(&args.out).map_or(true, |m| m.len() == 0);
    let mut out = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&args.out)?;
    if needs_header {
        writeln!(out, "{SWEEP_HEADER}")?;
        out.flush()?;
    }

    let emit = |cfg: &TrainConfig| -> Result<String, TrainError> {
        let (_, report) = train(&train_set, test_set.as_ref(), cfg)?;
        Ok(format!(
            "{},{},{},{},{},{},{},{},{},{}",
            dataset_label,
            cfg.budget,
            cfg.mergees,
            cfg.strategy,
            cfg.seed,
            report.test_accuracy,
            report.total_train_seconds,
            merge_fraction(&report),
            report.avg_gradient_error,
            report.final_sv_count
        ))
    };

    match args.parallel {
        None | Some(0) | Some(1) => {
            for cfg in &pending {
                let row = emit(cfg)?;
                writeln!(out, "{row}")?;
                out.flush()?;
            }
        }
        Some(workers) => {
            eprintln!(
                "warning: running {workers} trainings concurrently; timing columns are unreliable"
            );
            let queue = Mutex::new(pending.into_iter());
            let sink = Mutex::new(&mut out);
            let failure: Mutex<Option<TrainError>> = Mutex::new(None);
            std::thread::scope(|scope| {
                for _ in 0..workers {
                    scope.spawn(|| loop {
                        let Some(cfg) = queue.lock().unwrap().next() else {
                            return;
                        };
                        match emit(&cfg) {
                            Ok(row) => {
                                let mut out = sink.lock().unwrap();
                                let _ = writeln!(out, "{row}");
                                let _ = out.flush();
                            }
                            Err(e) => {
                                *failure.lock().unwrap() = Some(e);
                                return;
                            }
                        }
                    });
                }
            });
            if let Some(e) = failure.into_inner().unwrap() {
                return Err(e.into());
            }
        }
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let model = BudgetedModel::load(&resolve_data_path(&args.model))?;
    let dataset = load_svmlight(&resolve_data_path(&args.data))?;
    let accuracy = evaluate_accuracy(&model, &dataset);
    let (tp, fn_, fp, tn) = confusion_counts(&model, &dataset);
    println!("accuracy {accuracy:.6}");
    println!("confusion tp {tp} fn {fn_} fp {fp} tn {tn}");
    println!("svs {}", model.num_svs());
    Ok(())
}
