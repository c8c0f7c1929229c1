//! `gqlearn`: synthetic data, calibration, cross-validation, network
//! training and result tables.

// `!(x > 0.0)` deliberately rejects NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use gqlearn::budget::{TimeBudget, DEFAULT_BUDGET_SECS};
use gqlearn::data::{self, CsvOptions, Dataset, SplitSpec, TargetEncoding, Task};
use gqlearn::eval::{self, grid_search, pow10_axis, run_kfold, CellRun, GridSpec, DEFAULT_FOLDS};
use gqlearn::kernel::MAX_MKL_COMPONENTS;
use gqlearn::model::{Algorithm, HyperParams};
use gqlearn::nn::{self, LossKind, MlpModel, OutputActivation, TrainConfig, GAMMA_S_LINE_SEARCH};
use gqlearn::report::{self, Metric, RecordKind, RunRecord};

/// Error caused by the invocation rather than by the run; exits with 2.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Parser)]
#[command(
    name = "gqlearn",
    version,
    about = "Generalized quadratic loss learners"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic 3-feature dataset with random labels.
    Synth(SynthArgs),
    /// Grid-search a kernel algorithm on train/validation and score on test.
    Calibrate(CalibrateArgs),
    /// k-fold cross-validation of a calibrated kernel algorithm.
    Cv(CvArgs),
    /// Train a feed-forward network with the standard or the GQL loss.
    Nn(NnArgs),
    /// Render result records under a run directory as tables.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum SynthKind {
    Uniform,
    Normal,
}

#[derive(Args)]
struct SynthArgs {
    kind: SynthKind,
    n: usize,
    #[arg(long, env = "GQLEARN_SEED", default_value_t = 0)]
    seed: u64,
    /// Output CSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone, Serialize)]
struct DataArgs {
    /// CSV (label column selectable) or libsvm-format file (`.svm`, `.libsvm`).
    #[arg(long)]
    dataset: PathBuf,
    /// Label column of a CSV file.
    #[arg(long, default_value_t = 0)]
    target_col: usize,
    /// The CSV file has a header line.
    #[arg(long)]
    header: bool,
    /// Train,validation,test sizes, e.g. `550,150,100`. Default 60/20/20.
    #[arg(long)]
    split: Option<String>,
    /// Keep duplicated training patterns.
    #[arg(long)]
    keep_duplicates: bool,
    #[arg(long, env = "GQLEARN_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Clone, Serialize)]
struct GridArgs {
    #[arg(long, value_parser = parse_algo)]
    #[serde(serialize_with = "ser_display")]
    algo: Algorithm,
    /// Per-run wall-clock budget in seconds.
    #[arg(long, default_value_t = DEFAULT_BUDGET_SECS)]
    budget_secs: f64,
    /// Lower grid bound per axis, `AXIS=VALUE` with AXIS in C, gamma_K,
    /// gamma_S or `all`. Repeatable.
    #[arg(long)]
    grid_min: Vec<String>,
    /// Upper grid bound per axis, as for --grid-min.
    #[arg(long)]
    grid_max: Vec<String>,
    /// Largest number of MKL components for K.
    #[arg(long)]
    max_nk: Option<usize>,
    /// Largest number of MKL components for S.
    #[arg(long)]
    max_ns: Option<usize>,
    /// Worker threads for grid cells.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct CalibrateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args, Serialize)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    grid: GridArgs,
    /// Number of folds.
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    k: usize,
}

#[derive(Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum TaskArg {
    Classification,
    Regression,
}

#[derive(Args, Serialize)]
struct NnArgs {
    #[command(flatten)]
    data: DataArgs,
    /// `nn` (standard loss) or `gql-nn`.
    #[arg(long, value_parser = parse_algo)]
    #[serde(serialize_with = "ser_display")]
    algo: Algorithm,
    #[arg(long, value_enum, default_value_t = TaskArg::Classification)]
    task: TaskArg,
    /// Similarity exponent; without it the line search over
    /// 1e-5..1e-1 is run.
    #[arg(long)]
    gamma_s: Option<f64>,
    /// Hidden layer widths, e.g. `100,100`.
    #[arg(long, default_value = "100")]
    hidden: String,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = nn::DEFAULT_WEIGHT_PENALTY)]
    weight_penalty: f64,
    /// Worker threads for the line search.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    run_dir: PathBuf,
    /// Where to write the CSV tables; defaults to the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_algo(s: &str) -> std::result::Result<Algorithm, String> {
    s.parse::<Algorithm>().map_err(|e| e.to_string())
}

fn ser_display<S: serde::Serializer>(a: &Algorithm, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(a.name())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Calibrate(a) => cmd_calibrate(&a),
        Command::Cv(a) => cmd_cv(&a),
        Command::Nn(a) => cmd_nn(&a),
        Command::Report(a) => cmd_report(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    if a.n == 0 {
        return Err(usage("n must be at least 1"));
    }
    let d = match a.kind {
        SynthKind::Uniform => data::synth_uniform(a.n, a.seed)?,
        SynthKind::Normal => data::synth_normal(a.n, a.seed)?,
    };
    match &a.out {
        Some(p) => data::write_csv(&d, p).with_context(|| format!("writing {}", p.display()))?,
        None => data::write_csv_to(&d, std::io::BufWriter::new(std::io::stdout().lock()))?,
    }
    Ok(())
}

struct Splits {
    name: String,
    train: Dataset,
    val: Dataset,
    test: Dataset,
    removed_duplicates: usize,
}

fn load(a: &DataArgs, task: Task) -> Result<Dataset> {
    if !a.dataset.is_file() {
        return Err(usage(format!(
            "dataset file not found: {}",
            a.dataset.display()
        )));
    }
    let encoding = match task {
        Task::Classification => TargetEncoding::Binary,
        Task::Regression => TargetEncoding::Real,
    };
    let ext = a.dataset.extension().and_then(|e| e.to_str()).unwrap_or("");
    let d = if matches!(ext, "svm" | "libsvm") {
        data::load_sparse(&a.dataset, encoding)?
    } else {
        let opts = CsvOptions {
            target_col: a.target_col,
            has_header: a.header,
            encoding,
        };
        data::load_csv(&a.dataset, &opts)?
    };
    Ok(d)
}

fn parse_split(s: &str) -> Result<SplitSpec> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| usage(format!("--split expects three counts, got '{s}'")))?;
    match parts[..] {
        [tr, va, te] if tr > 0 && va > 0 && te > 0 => Ok(SplitSpec::new(tr, va, te)),
        _ => Err(usage(format!(
            "--split expects three positive counts, got '{s}'"
        ))),
    }
}

fn prepare(a: &DataArgs, task: Task) -> Result<Splits> {
    let d = load(a, task)?;
    let spec = match &a.split {
        Some(s) => parse_split(s)?,
        None => {
            let n = d.len();
            let (tr, va) = (n * 6 / 10, n * 2 / 10);
            SplitSpec::new(tr, va, n - tr - va)
        }
    };
    if spec.total() > d.len() {
        return Err(usage(format!(
            "split needs {} rows, dataset has {}",
            spec.total(),
            d.len()
        )));
    }
    if spec.n_train == 0 || spec.n_val == 0 || spec.n_test == 0 {
        return Err(usage("dataset too small for a train/validation/test split"));
    }
    let (mut train, val, test) = data::split(&d, &spec, a.seed)?;
    let before = train.len();
    if !a.keep_duplicates {
        train = data::dedup(&train);
    }
    Ok(Splits {
        name: d.name.clone(),
        removed_duplicates: before - train.len(),
        train,
        val,
        test,
    })
}

fn parse_bounds(items: &[String]) -> Result<Vec<(String, f64)>> {
    items
        .iter()
        .map(|s| {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| usage(format!("grid bound '{s}' is not AXIS=VALUE")))?;
            let key = match k {
                "C" | "c" => "C",
                "gamma_K" | "gamma_k" | "gk" => "gamma_K",
                "gamma_S" | "gamma_s" | "gs" => "gamma_S",
                "all" => "all",
                _ => return Err(usage(format!("unknown grid axis '{k}'"))),
            };
            let v: f64 = v
                .parse()
                .map_err(|_| usage(format!("grid bound '{s}' has a bad value")))?;
            Ok((key.to_string(), v))
        })
        .collect()
}

fn build_grid(g: &GridArgs) -> Result<GridSpec> {
    let mut grid = GridSpec::default_for(g.algo);
    let mins = parse_bounds(&g.grid_min)?;
    let maxs = parse_bounds(&g.grid_max)?;
    let pick = |bounds: &[(String, f64)], axis: &str| {
        bounds
            .iter()
            .rev()
            .find(|(k, _)| k == axis)
            .or_else(|| bounds.iter().rev().find(|(k, _)| k == "all"))
            .map(|(_, v)| *v)
    };
    let axes: [(&str, &mut Option<Vec<f64>>); 3] = [
        ("C", &mut grid.c),
        ("gamma_K", &mut grid.gamma_k),
        ("gamma_S", &mut grid.gamma_s),
    ];
    for (name, axis) in axes {
        let Some(values) = axis.as_mut() else {
            if mins.iter().chain(&maxs).any(|(k, _)| k == name) {
                return Err(usage(format!("{} has no {name} axis", g.algo)));
            }
            continue;
        };
        let lo = pick(&mins, name).unwrap_or(values[0]);
        let hi = pick(&maxs, name).unwrap_or(*values.last().unwrap());
        *values = pow10_axis(lo, hi).map_err(|e| usage(e.to_string()))?;
    }
    for (flag, cap, axis) in [
        ("--max-nk", g.max_nk, &mut grid.n_k),
        ("--max-ns", g.max_ns, &mut grid.n_s),
    ] {
        if let Some(cap) = cap {
            if cap == 0 || cap > MAX_MKL_COMPONENTS {
                return Err(usage(format!("{flag} must be in 1..={MAX_MKL_COMPONENTS}")));
            }
            match axis.as_mut() {
                Some(v) => *v = (1..=cap).collect(),
                None => return Err(usage(format!("{} does not use {flag}", g.algo))),
            }
        }
    }
    grid.validate().map_err(|e| usage(e.to_string()))?;
    Ok(grid)
}

fn check_grid_args(g: &GridArgs) -> Result<()> {
    if !g.algo.is_kernel() {
        return Err(usage(format!(
            "{} is trained with the `nn` command",
            g.algo
        )));
    }
    if !(g.budget_secs > 0.0) {
        return Err(usage("--budget-secs must be positive"));
    }
    if g.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    Ok(())
}

#[derive(Serialize)]
struct Manifest<'a, T: Serialize> {
    command: &'a str,
    #[serde(flatten)]
    args: &'a T,
}

fn write_manifest<T: Serialize>(out: &Path, command: &str, args: &T) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let m = Manifest { command, args };
    std::fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&m)? + "\n",
    )?;
    Ok(())
}

fn cell_records(
    algo: &str,
    dataset: &str,
    metric: Metric,
    cells: &[eval::CellLog],
) -> Vec<RunRecord> {
    cells
        .iter()
        .map(|c| {
            let mut r = RunRecord::new(RecordKind::Cell, algo, dataset, metric);
            r.params = Some(c.params);
            r.val_score = c.val_score;
            r.timeout = c.timeout;
            r.error = c.error.clone();
            r.meta.wall_ms = c.wall_ms;
            r
        })
        .collect()
}

fn cmd_calibrate(a: &CalibrateArgs) -> Result<()> {
    check_grid_args(&a.grid)?;
    let grid = build_grid(&a.grid)?;
    let s = prepare(&a.data, Task::Classification)?;
    write_manifest(&a.grid.out, "calibrate", a)?;
    let budget = TimeBudget::seconds(a.grid.budget_secs);
    let start = Instant::now();
    let res = grid_search(
        a.grid.algo,
        &s.train,
        &s.val,
        Some(&s.test),
        &grid,
        &budget,
        a.grid.jobs,
    )?;
    let algo = a.grid.algo.name();
    let cells = cell_records(algo, &s.name, Metric::F1, &res.cells);
    let mut best = RunRecord::new(RecordKind::Best, algo, &s.name, Metric::F1);
    best.params = Some(res.best_params);
    best.val_score = Some(res.validation_score);
    best.test_score = res.test_score;
    best.timeout = res.cells.iter().any(|c| c.timeout);
    best.meta.wall_ms = start.elapsed().as_millis() as u64;
    let out = &a.grid.out;
    report::write_jsonl(out.join("cells.jsonl"), &cells)?;
    report::write_jsonl(out.join("results.jsonl"), &[best])?;
    res.best_model.save(out.join("model.json"))?;
    println!(
        "{algo} on {}: {} cells, {} duplicates removed, best {} val F1 {:.6} test F1 {:.6}",
        s.name,
        res.cells.len(),
        s.removed_duplicates,
        res.best_params,
        res.validation_score,
        res.test_score.unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_cv(a: &CvArgs) -> Result<()> {
    check_grid_args(&a.grid)?;
    if a.k < 2 {
        return Err(usage("--k must be at least 2"));
    }
    let grid = build_grid(&a.grid)?;
    let s = prepare(&a.data, Task::Classification)?;
    if a.k > s.train.len() {
        return Err(usage(format!(
            "--k {} exceeds the {} training patterns",
            a.k,
            s.train.len()
        )));
    }
    write_manifest(&a.grid.out, "cv", a)?;
    let budget = TimeBudget::seconds(a.grid.budget_secs);
    let start = Instant::now();
    let res = run_kfold(
        a.grid.algo,
        &s.train,
        &s.val,
        &s.test,
        a.k,
        &grid,
        &budget,
        a.grid.jobs,
        a.data.seed,
    )?;
    let algo = a.grid.algo.name();
    let mut records: Vec<RunRecord> = res
        .folds
        .iter()
        .map(|f| {
            let mut r = RunRecord::new(RecordKind::Fold, algo, &s.name, Metric::F1);
            r.fold = Some(f.fold);
            r.params = f.params;
            r.val_score = f.val_score;
            r.test_score = f.test_score;
            r.error = f.error.clone();
            r
        })
        .collect();
    let mut agg = RunRecord::new(RecordKind::Cv, algo, &s.name, Metric::F1);
    agg.test_score = Some(res.mean).filter(|m| m.is_finite());
    agg.std = Some(res.std).filter(|m| m.is_finite());
    agg.meta.wall_ms = start.elapsed().as_millis() as u64;
    let failed = res.folds.iter().filter(|f| f.error.is_some()).count();
    if failed > 0 {
        agg.error = Some(format!("{failed} of {} folds failed", a.k));
    }
    records.push(agg);
    report::write_jsonl(a.grid.out.join("cv.jsonl"), &records)?;
    println!(
        "{algo} on {}: {}-fold test F1 mean {:.6} std {:.6}{}",
        s.name,
        a.k,
        res.mean,
        res.std,
        if failed > 0 {
            format!(" ({failed} folds failed)")
        } else {
            String::new()
        }
    );
    Ok(())
}

fn parse_hidden(s: &str) -> Result<Vec<usize>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| match p.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(usage(format!(
                "--hidden expects positive widths, got '{s}'"
            ))),
        })
        .collect()
}

struct NnRun {
    model: MlpModel,
    report: nn::TrainReport,
}

fn cmd_nn(a: &NnArgs) -> Result<()> {
    if a.algo.is_kernel() {
        return Err(usage(format!("{} is trained with `calibrate`", a.algo)));
    }
    if a.algo == Algorithm::Nn && a.gamma_s.is_some() {
        return Err(usage("--gamma-s applies to gql-nn only"));
    }
    if let Some(g) = a.gamma_s {
        if !(g > 0.0) {
            return Err(usage("--gamma-s must be positive"));
        }
    }
    if a.epochs == 0 || a.batch_size == 0 || !(a.lr > 0.0) || a.jobs == 0 {
        return Err(usage(
            "--epochs, --batch-size, --lr and --jobs must be positive",
        ));
    }
    let hidden = parse_hidden(&a.hidden)?;
    let (task, output, metric) = match a.task {
        TaskArg::Classification => (Task::Classification, OutputActivation::Sigmoid, Metric::F1),
        TaskArg::Regression => (Task::Regression, OutputActivation::Identity, Metric::Mse),
    };
    let s = prepare(&a.data, task)?;
    write_manifest(&a.out, "nn", a)?;
    let mut sizes = vec![s.train.dim()];
    sizes.extend(&hidden);
    sizes.push(1);
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        seed: a.data.seed,
        ..Default::default()
    };
    let cells: Vec<HyperParams> = match (a.algo, a.gamma_s) {
        (Algorithm::GqlNn, Some(g)) => vec![HyperParams {
            gamma_s: Some(g),
            ..Default::default()
        }],
        (Algorithm::GqlNn, None) => GAMMA_S_LINE_SEARCH
            .iter()
            .map(|&g| HyperParams {
                gamma_s: Some(g),
                ..Default::default()
            })
            .collect(),
        _ => vec![HyperParams::default()],
    };
    let start = Instant::now();
    let search = eval::grid_search_with(&cells, a.jobs, metric == Metric::F1, |hp| {
        let loss = match hp.gamma_s {
            Some(gamma_s) => LossKind::Gql { gamma_s },
            None => LossKind::Standard,
        };
        let mut model = MlpModel::new(&sizes, output, a.weight_penalty, a.data.seed)?;
        let report = nn::train(&mut model, &s.train, &cfg, loss, Some(&s.val))?;
        report.check()?;
        let val_score = nn::evaluate(&model, &s.val)?;
        Ok(CellRun {
            model: NnRun { model, report },
            val_score,
            timed_out: false,
        })
    })?;
    let algo = a.algo.name();
    let test_score = nn::evaluate(&search.best_model.model, &s.test)?;
    let cells = cell_records(algo, &s.name, metric, &search.cells);
    let mut best = RunRecord::new(RecordKind::Best, algo, &s.name, metric);
    best.params = Some(search.best_params()).filter(|p| p.gamma_s.is_some());
    best.val_score = Some(search.validation_score());
    best.test_score = Some(test_score);
    best.meta.wall_ms = start.elapsed().as_millis() as u64;
    report::write_jsonl(a.out.join("cells.jsonl"), &cells)?;
    report::write_jsonl(a.out.join("results.jsonl"), &[best])?;
    search.best_model.model.save(a.out.join("model.json"))?;
    search
        .best_model
        .report
        .write_csv(a.out.join("trace.csv"))?;
    println!(
        "{algo} on {}: {} run(s), best {} val {} {:.6} test {} {:.6}",
        s.name,
        search.cells.len(),
        search.best_params(),
        metric.label(),
        search.validation_score(),
        metric.label(),
        test_score
    );
    Ok(())
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    if !a.run_dir.is_dir() {
        return Err(usage(format!(
            "run directory not found: {}",
            a.run_dir.display()
        )));
    }
    let records = report::read_dir(&a.run_dir)?;
    let metrics = report::metrics_present(&records);
    if metrics.is_empty() {
        return Err(usage(format!(
            "no result records under {}",
            a.run_dir.display()
        )));
    }
    let out = a.out.as_deref().unwrap_or(&a.run_dir);
    std::fs::create_dir_all(out)?;
    let text = report::render_text(&records);
    std::fs::write(out.join("report.txt"), &text)?;
    for m in metrics {
        let name = format!("report_{}.csv", m.label().to_lowercase());
        std::fs::write(out.join(name), report::render_csv(&records, m)?)?;
    }
    print!("{text}");
    Ok(())
}
