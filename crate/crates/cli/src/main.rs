//! Command-line front end for the dictionary-learning anomaly detector:
//! `train`, `detect`, `grid`, `kfold`, and `sweep` wire the library's
//! training, detection, and evaluation entry points to CSV files on disk.
//!
//! Exit codes are part of the contract: 0 on success, 1 on runtime failures
//! (unreadable files, infeasible parameters at run time), 2 on usage errors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dlocsvm::models::TracePoint;
use dlocsvm::{
    balanced_accuracy, contamination_sweep, detect_with, grid_search, kfold_eval, load_csv,
    load_model, save_model, standardize, train, Dataset, DetectOptions, GridSpec, Hyperparams,
    KernelSpec, TrimRule, Variant,
};

#[derive(Parser)]
#[command(name = "dlocsvm", version, about = "Dictionary-learning anomaly detection")]
struct Cli {
    /// Print more log detail (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Worker threads for grid, kfold, and sweep runs. Defaults to the
    /// DLOCSVM_JOBS environment variable, then to all cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and write it together with its convergence trace.
    Train(TrainArgs),
    /// Score samples with a trained model.
    Detect(DetectArgs),
    /// Grid-search hyperparameters on a labeled dataset.
    Grid(GridArgs),
    /// Cross-validated model selection with a held-out test split.
    Kfold(KfoldArgs),
    /// Retrain with an increasing number of outliers in the training set.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    DlOcsvm,
    DplOcsvm,
    KdlOcsvm,
    KdplOcsvm,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Variant {
        match v {
            VariantArg::DlOcsvm => Variant::DlOcsvm,
            VariantArg::DplOcsvm => Variant::DplOcsvm,
            VariantArg::KdlOcsvm => Variant::KdlOcsvm,
            VariantArg::KdplOcsvm => Variant::KdplOcsvm,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KernelKind {
    Linear,
    Rbf,
    Polynomial,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TrimRuleArg {
    SingularValue,
    FixedAtom,
}

impl From<TrimRuleArg> for TrimRule {
    fn from(r: TrimRuleArg) -> TrimRule {
        match r {
            TrimRuleArg::SingularValue => TrimRule::SingularValue,
            TrimRuleArg::FixedAtom => TrimRule::FixedAtom,
        }
    }
}

/// Input file flags shared by every subcommand.
#[derive(Args)]
struct DataArgs {
    /// Data CSV, one sample per row.
    #[arg(long)]
    data: PathBuf,
    /// Name of the ground-truth label column (0 normal, 1 anomaly); the
    /// column is removed from the features.
    #[arg(long)]
    label_column: Option<String>,
    /// Treat the first row as data rather than a header.
    #[arg(long)]
    no_header: bool,
}

/// Model-family flags shared by train, grid, kfold, and sweep.
#[derive(Args)]
struct FamilyArgs {
    /// Model variant.
    #[arg(long, value_enum)]
    model: VariantArg,
    /// Dictionary size.
    #[arg(long)]
    atoms: usize,
    /// Nonzeros per sparse code.
    #[arg(long)]
    sparsity: usize,
    #[command(flatten)]
    kernel: KernelArgs,
}

#[derive(Args)]
struct KernelArgs {
    /// Kernel for the kernel variants.
    #[arg(long, value_enum, default_value_t = KernelKind::Linear)]
    kernel: KernelKind,
    /// RBF bandwidth.
    #[arg(long)]
    sigma: Option<f64>,
    /// Polynomial degree.
    #[arg(long)]
    degree: Option<u32>,
    /// Polynomial offset (default 1).
    #[arg(long)]
    coef: Option<f64>,
}

impl KernelArgs {
    /// Build the kernel, rejecting flags that do not belong to the chosen
    /// kind. Grid runs pass the first grid bandwidth as `fallback_sigma` so
    /// `--sigmas` alone is enough for an rbf search.
    fn to_spec(&self, fallback_sigma: Option<f64>) -> Result<KernelSpec, CliError> {
        match self.kernel {
            KernelKind::Linear => {
                if self.sigma.is_some() || self.degree.is_some() || self.coef.is_some() {
                    return Err(CliError::Usage(
                        "--sigma, --degree, and --coef do not apply to the linear kernel".into(),
                    ));
                }
                Ok(KernelSpec::Linear)
            }
            KernelKind::Rbf => {
                if self.degree.is_some() || self.coef.is_some() {
                    return Err(CliError::Usage(
                        "--degree and --coef only apply to the polynomial kernel".into(),
                    ));
                }
                let sigma = self
                    .sigma
                    .or(fallback_sigma)
                    .ok_or_else(|| CliError::Usage("the rbf kernel needs --sigma".into()))?;
                Ok(KernelSpec::Rbf { sigma })
            }
            KernelKind::Polynomial => {
                if self.sigma.is_some() {
                    return Err(CliError::Usage("--sigma only applies to the rbf kernel".into()));
                }
                let degree = self
                    .degree
                    .ok_or_else(|| CliError::Usage("the polynomial kernel needs --degree".into()))?;
                Ok(KernelSpec::Polynomial {
                    degree,
                    coef: self.coef.unwrap_or(1.0),
                })
            }
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    input: DataArgs,
    #[command(flatten)]
    family: FamilyArgs,
    /// Row-norm penalty weight.
    #[arg(long)]
    beta: f64,
    /// l1 penalty weight (analysis variants only).
    #[arg(long)]
    gamma: Option<f64>,
    /// Target outlier fraction of the one-class SVM, in (0, 1].
    #[arg(long)]
    nu: f64,
    /// Outer alternating passes.
    #[arg(long, default_value_t = 6)]
    outer_iters: usize,
    /// Detection-time row-norm floor for analysis codes.
    #[arg(long, default_value_t = 1e-6)]
    trim_tol: f64,
    /// Dictionary initialization seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Standardize features; the scaler is stored in the model and applied
    /// again at detection time.
    #[arg(long)]
    standardize: bool,
    /// Model output path (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Trace output path; defaults to the model path with a `.trace.txt`
    /// extension.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    /// Trained model file.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: DataArgs,
    /// Residual test that trims synthesis code rows.
    #[arg(long, value_enum, default_value_t = TrimRuleArg::SingularValue)]
    trim_rule: TrimRuleArg,
    /// Per-sample results file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    input: DataArgs,
    #[command(flatten)]
    family: FamilyArgs,
    /// Comma-separated beta values.
    #[arg(long, value_delimiter = ',', required = true)]
    betas: Vec<f64>,
    /// Comma-separated gamma values (analysis variants only).
    #[arg(long, value_delimiter = ',')]
    gammas: Vec<f64>,
    /// Comma-separated nu values.
    #[arg(long = "nus", value_delimiter = ',', required = true)]
    nus: Vec<f64>,
    /// Comma-separated rbf bandwidths.
    #[arg(long, value_delimiter = ',')]
    sigmas: Vec<f64>,
    /// Comma-separated dictionary seeds (default 0-19).
    #[arg(long, value_delimiter = ',')]
    dict_seeds: Vec<u64>,
    #[arg(long, default_value_t = 6)]
    outer_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    trim_tol: f64,
    /// Standardize features per cell, fitted on that cell's training split.
    #[arg(long)]
    standardize: bool,
    /// Per-cell results file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct KfoldArgs {
    #[command(flatten)]
    grid: GridArgs,
    /// Number of validation folds.
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Fraction of samples held out for the final test split.
    #[arg(long, default_value_t = 0.2)]
    test_frac: f64,
    /// Seed for the test split and fold shuffling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    input: DataArgs,
    #[command(flatten)]
    family: FamilyArgs,
    /// Row-norm penalty weight.
    #[arg(long)]
    beta: f64,
    /// l1 penalty weight (analysis variants only).
    #[arg(long)]
    gamma: Option<f64>,
    /// Target outlier fraction of the one-class SVM, in (0, 1].
    #[arg(long)]
    nu: f64,
    #[arg(long, default_value_t = 6)]
    outer_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    trim_tol: f64,
    /// Dictionary seed; also drives the outlier subsampling stream.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated outlier counts to keep in the training set.
    #[arg(long, value_delimiter = ',', required = true)]
    counts: Vec<usize>,
    #[arg(long)]
    standardize: bool,
    /// One-line-per-count results file.
    #[arg(long)]
    out: PathBuf,
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<dlocsvm::Error> for CliError {
    fn from(e: dlocsvm::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// For preflight checks that mirror library preconditions: the same message,
/// but reported as a flag problem.
fn usage(e: dlocsvm::Error) -> CliError {
    CliError::Usage(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = effective_jobs(cli.jobs)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("thread pool setup failed: {e}")))?;
    }
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Detect(args) => cmd_detect(args),
        Command::Grid(args) => cmd_grid(args),
        Command::Kfold(args) => cmd_kfold(args),
        Command::Sweep(args) => cmd_sweep(args),
    }
}

fn effective_jobs(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    let jobs = match flag {
        Some(n) => Some(n),
        None => match std::env::var("DLOCSVM_JOBS") {
            Ok(v) => Some(v.parse().map_err(|_| {
                CliError::Usage(format!("DLOCSVM_JOBS must be a thread count, got {v:?}"))
            })?),
            Err(_) => None,
        },
    };
    if jobs == Some(0) {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    Ok(jobs)
}

fn load_dataset(input: &DataArgs) -> Result<Dataset, CliError> {
    if input.no_header && input.label_column.is_some() {
        return Err(CliError::Usage(
            "--label-column needs a header row; drop --no-header".into(),
        ));
    }
    Ok(load_csv(
        &input.data,
        input.label_column.as_deref(),
        !input.no_header,
    )?)
}

/// Assemble and preflight a single configuration from the scalar flags.
fn single_hp(
    family: &FamilyArgs,
    beta: f64,
    gamma: Option<f64>,
    nu: f64,
    outer_iters: usize,
    trim_tol: f64,
    seed: u64,
) -> Result<Hyperparams, CliError> {
    let variant: Variant = family.model.into();
    let kernel = family.kernel.to_spec(None)?;
    check_kernel_applies(variant, &kernel)?;
    let mut hp = Hyperparams::new(variant, family.atoms, family.sparsity, beta, nu);
    hp.gamma = resolve_gamma(variant, gamma)?;
    hp.kernel = kernel;
    hp.outer_iters = outer_iters;
    hp.trim_tol = trim_tol;
    hp.seed = seed;
    hp.validate().map_err(usage)?;
    Ok(hp)
}

fn resolve_gamma(variant: Variant, gamma: Option<f64>) -> Result<f64, CliError> {
    match (variant.is_analysis(), gamma) {
        (true, Some(g)) => Ok(g),
        (true, None) => Err(CliError::Usage(format!("{variant} needs --gamma"))),
        (false, None) => Ok(0.0),
        (false, Some(_)) => Err(CliError::Usage(format!("--gamma does not apply to {variant}"))),
    }
}

/// Only the kernel variants evaluate a kernel; a non-linear choice on the
/// standard variants would be silently ignored, so reject it up front.
fn check_kernel_applies(variant: Variant, kernel: &KernelSpec) -> Result<(), CliError> {
    if !variant.is_kernel() && !matches!(kernel, KernelSpec::Linear) {
        return Err(CliError::Usage(format!(
            "--kernel does not apply to {variant}; use kdl-ocsvm or kdpl-ocsvm"
        )));
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn write_trace(path: &Path, trace: &[TracePoint]) -> Result<(), CliError> {
    let mut text = String::with_capacity(48 * trace.len() + 32);
    text.push_str("# outer inner F G total\n");
    for p in trace {
        let _ = writeln!(text, "{} {} {} {} {}", p.outer, p.inner, p.f, p.g, p.total);
    }
    write_file(path, &text)
}

/// Sigma column for result files: the bandwidth for rbf cells, `-` otherwise.
fn sigma_column(kernel: &KernelSpec) -> String {
    match kernel {
        KernelSpec::Rbf { sigma } => sigma.to_string(),
        _ => "-".into(),
    }
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let hp = single_hp(
        &args.family,
        args.beta,
        args.gamma,
        args.nu,
        args.outer_iters,
        args.trim_tol,
        args.seed,
    )?;
    let data = load_dataset(&args.input)?;
    let started = Instant::now();
    let model = if args.standardize {
        let (y, scaler) = standardize(&data.y);
        let mut m = train(&y, &hp)?;
        m.standardizer = Some(scaler);
        m
    } else {
        train(&data.y, &hp)?
    };
    let wall = started.elapsed().as_secs_f64();

    save_model(&model, &args.out)?;
    let trace_path = args
        .trace
        .unwrap_or_else(|| args.out.with_extension("trace.txt"));
    write_trace(&trace_path, &model.loss_trace)?;

    let alive = model.row_alive.iter().filter(|&&a| a).count();
    let last = model
        .loss_trace
        .last()
        .expect("training always records at least the baseline point");
    println!(
        "trained {} on {} samples x {} features in {wall:.2}s",
        hp.variant,
        data.y.ncols(),
        data.y.nrows()
    );
    println!(
        "final loss {:.6} (F {:.6}, G {:.6}); {alive}/{} atoms alive",
        last.total, last.f, last.g, hp.n_atoms
    );
    println!("model: {}", args.out.display());
    println!("trace: {}", trace_path.display());
    Ok(())
}

fn cmd_detect(args: DetectArgs) -> Result<(), CliError> {
    let model = load_model(&args.model)?;
    let data = load_dataset(&args.input)?;
    let started = Instant::now();
    let det = detect_with(
        &model,
        &data.y,
        &DetectOptions {
            trim_rule: args.trim_rule.into(),
        },
    )?;
    let wall_test = started.elapsed().as_secs_f64();

    let n = det.scores.len();
    let mut text = String::with_capacity(32 * n + 128);
    text.push_str("# index score label\n");
    for (i, &score) in det.scores.iter().enumerate() {
        let label = if score <= 0.0 { "anomaly" } else { "normal" };
        let _ = writeln!(text, "{i} {score} {label}");
    }

    if let Some(labels) = &data.labels {
        let mut predicted = vec![0u8; n];
        for &i in &det.anomalies {
            predicted[i] = 1;
        }
        match balanced_accuracy(labels, &predicted) {
            Ok(metrics) => {
                let c = &metrics.confusion;
                let _ = writeln!(
                    text,
                    "# ba {} tpr {} tnr {}",
                    metrics.ba, metrics.tpr, metrics.tnr
                );
                let _ = writeln!(
                    text,
                    "# confusion tp {} fn {} tn {} fp {}",
                    c.true_positives, c.false_negatives, c.true_negatives, c.false_positives
                );
                let _ = writeln!(text, "# wall_test {wall_test:.3}");
                println!(
                    "ba {:.4} tpr {:.4} tnr {:.4}",
                    metrics.ba, metrics.tpr, metrics.tnr
                );
            }
            // A single-class truth column cannot be scored; the detection
            // output is still valid.
            Err(e) => log::warn!("skipping the accuracy block: {e}"),
        }
    }
    write_file(&args.out, &text)?;

    let frac = det.anomalies.len() as f64 / n.max(1) as f64;
    println!(
        "{n} samples, {} anomalies ({:.1}%) -> {}",
        det.anomalies.len(),
        100.0 * frac,
        args.out.display()
    );
    Ok(())
}

/// Base configuration plus search axes from the grid flags.
fn grid_parts(args: &GridArgs) -> Result<(Hyperparams, GridSpec), CliError> {
    let variant: Variant = args.family.model.into();
    if variant.is_analysis() && args.gammas.is_empty() {
        return Err(CliError::Usage(format!("{variant} needs --gammas")));
    }
    if !variant.is_analysis() && !args.gammas.is_empty() {
        return Err(CliError::Usage(format!("--gammas does not apply to {variant}")));
    }
    if !args.sigmas.is_empty() && args.family.kernel.kernel != KernelKind::Rbf {
        return Err(CliError::Usage("a --sigmas grid requires --kernel rbf".into()));
    }
    let kernel = args.family.kernel.to_spec(args.sigmas.first().copied())?;
    check_kernel_applies(variant, &kernel)?;

    let mut base = Hyperparams::new(
        variant,
        args.family.atoms,
        args.family.sparsity,
        args.betas[0],
        args.nus[0],
    );
    base.gamma = args.gammas.first().copied().unwrap_or(0.0);
    base.kernel = kernel;
    base.outer_iters = args.outer_iters;
    base.trim_tol = args.trim_tol;
    base.validate().map_err(usage)?;

    let mut grid = GridSpec::new(args.betas.clone(), args.nus.clone());
    if !args.gammas.is_empty() {
        grid.gammas = args.gammas.clone();
    }
    grid.sigmas = args.sigmas.clone();
    if !args.dict_seeds.is_empty() {
        grid.dictionary_seeds = args.dict_seeds.clone();
    }
    Ok((base, grid))
}

fn cmd_grid(args: GridArgs) -> Result<(), CliError> {
    let (base, grid) = grid_parts(&args)?;
    let data = load_dataset(&args.input)?;
    let outcome = grid_search(&data, &base, &grid, args.standardize)?;

    let mut text = String::new();
    let _ = writeln!(
        text,
        "# grid: {} on {}, {} cells",
        base.variant,
        args.input.data.display(),
        outcome.cells.len()
    );
    text.push_str("# beta gamma nu sigma seed ba tpr tnr wall_train wall_test\n");
    let mut failed = 0usize;
    for cell in &outcome.cells {
        let hp = &cell.config;
        match &cell.outcome {
            Ok(report) => {
                let m = &report.metrics;
                let _ = writeln!(
                    text,
                    "{} {} {} {} {} {} {} {} {:.3} {:.3}",
                    hp.beta,
                    hp.gamma,
                    hp.nu_frac,
                    sigma_column(&hp.kernel),
                    hp.seed,
                    m.ba,
                    m.tpr,
                    m.tnr,
                    report.wall_train,
                    report.wall_test
                );
            }
            Err(msg) => {
                failed += 1;
                let _ = writeln!(
                    text,
                    "# failed cell (beta {} gamma {} nu {} sigma {} seed {}): {msg}",
                    hp.beta,
                    hp.gamma,
                    hp.nu_frac,
                    sigma_column(&hp.kernel),
                    hp.seed
                );
            }
        }
    }
    let best = &outcome.best;
    let _ = writeln!(
        text,
        "# best: beta {} gamma {} nu {} sigma {} seed {} ba {}",
        best.config.beta,
        best.config.gamma,
        best.config.nu_frac,
        sigma_column(&best.config.kernel),
        best.config.seed,
        best.metrics.ba
    );
    write_file(&args.out, &text)?;

    if failed > 0 {
        log::warn!("{failed} of {} cells failed; see {}", outcome.cells.len(), args.out.display());
    }
    println!("{} cells -> {}", outcome.cells.len(), args.out.display());
    println!(
        "best ba {:.4} (beta {}, gamma {}, nu {}, sigma {}, seed {})",
        best.metrics.ba,
        best.config.beta,
        best.config.gamma,
        best.config.nu_frac,
        sigma_column(&best.config.kernel),
        best.config.seed
    );
    Ok(())
}

fn cmd_kfold(args: KfoldArgs) -> Result<(), CliError> {
    let (base, grid) = grid_parts(&args.grid)?;
    let data = load_dataset(&args.grid.input)?;
    let outcome = kfold_eval(
        &data,
        &base,
        &grid,
        args.k,
        args.test_frac,
        args.seed,
        args.grid.standardize,
    )?;

    let mut text = String::new();
    let _ = writeln!(
        text,
        "# kfold: {} on {}, k {}, test_frac {}, seed {}",
        base.variant,
        args.grid.input.data.display(),
        args.k,
        args.test_frac,
        args.seed
    );
    text.push_str("# beta gamma nu sigma seed cv_ba\n");
    for (hp, cv) in &outcome.cells {
        let cv_col = cv.map_or_else(|| "-".into(), |v| v.to_string());
        let _ = writeln!(
            text,
            "{} {} {} {} {} {cv_col}",
            hp.beta,
            hp.gamma,
            hp.nu_frac,
            sigma_column(&hp.kernel),
            hp.seed
        );
    }
    let win = &outcome.report.config;
    let m = &outcome.report.metrics;
    let _ = writeln!(
        text,
        "# winner: beta {} gamma {} nu {} sigma {} seed {} cv_ba {}",
        win.beta,
        win.gamma,
        win.nu_frac,
        sigma_column(&win.kernel),
        win.seed,
        outcome.cv_mean_ba
    );
    let c = &m.confusion;
    let _ = writeln!(
        text,
        "# test: ba {} tpr {} tnr {} tp {} fn {} tn {} fp {}",
        m.ba, m.tpr, m.tnr, c.true_positives, c.false_negatives, c.true_negatives, c.false_positives
    );
    write_file(&args.grid.out, &text)?;

    println!(
        "cv winner ba {:.4} (beta {}, gamma {}, nu {}, sigma {}, seed {})",
        outcome.cv_mean_ba,
        win.beta,
        win.gamma,
        win.nu_frac,
        sigma_column(&win.kernel),
        win.seed
    );
    println!("test ba {:.4} -> {}", m.ba, args.grid.out.display());
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), CliError> {
    let hp = single_hp(
        &args.family,
        args.beta,
        args.gamma,
        args.nu,
        args.outer_iters,
        args.trim_tol,
        args.seed,
    )?;
    let data = load_dataset(&args.input)?;
    let points = contamination_sweep(&data, &hp, &args.counts, args.seed, args.standardize)?;

    let mut text = String::new();
    let _ = writeln!(
        text,
        "# contamination sweep: {} on {}, seed {}",
        hp.variant,
        args.input.data.display(),
        args.seed
    );
    text.push_str("# requested used ba tpr tnr wall_train wall_test\n");
    for p in &points {
        let m = &p.report.metrics;
        let _ = writeln!(
            text,
            "{} {} {} {} {} {:.3} {:.3}",
            p.requested, p.used, m.ba, m.tpr, m.tnr, p.report.wall_train, p.report.wall_test
        );
    }
    write_file(&args.out, &text)?;

    println!("{} sweep points -> {}", points.len(), args.out.display());
    for p in &points {
        println!(
            "outliers {:>5}: ba {:.4} tpr {:.4} tnr {:.4}",
            p.used, p.report.metrics.ba, p.report.metrics.tpr, p.report.metrics.tnr
        );
    }
    Ok(())
}
