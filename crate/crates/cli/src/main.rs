//! `capsroute`: generate planted datasets, route them dynamically or
//! through a master matrix, build masters, run the correlation analyses,
//! and benchmark the two routing modes.
//!
//! Exit codes: 0 success, 2 validation error (including bad arguments),
//! 3 file-format error, 4 I/O error.

use std::path::PathBuf;
use std::process::ExitCode;

use capsroute::storage::{format_value, write_csv};
use capsroute::{
    accuracy_report, build_master, class_mean_correlations, classify, dynamic_route,
    export_accuracy_csv, export_bench_csv, export_correlation_csv, export_tuning_csv, fast_route,
    fast_route_trace, generate_planted, gt_correlation_matrix, master_class_correlations,
    read_dataset, read_master, run_benchmark, tuning_curves, write_dataset, write_master,
    write_trace_set, BuilderConfig, CapsuleOutputs, Error, FilterStrategy, LabeledDataset,
    MasterMatrix, NormKind, PlantedSpec, Result, RoutingConfig, RoutingTrace,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "capsroute",
    version,
    about = "Capsule routing experiments: planted data, dynamic and fast routing, master builders, analyses, benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted train/test dataset pair
    Gen(GenArgs),
    /// Route a dataset and write traces plus a per-example report
    Route(RouteArgs),
    /// Build a master coefficient matrix from a dataset
    BuildMaster(BuildMasterArgs),
    /// Run a correlation, tuning, or accuracy analysis to CSV
    Analyze(AnalyzeArgs),
    /// Time dynamic vs fast routing over a dataset
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum NormArg {
    Maxmin,
    Softmax,
}

impl From<NormArg> for NormKind {
    fn from(v: NormArg) -> NormKind {
        match v {
            NormArg::Maxmin => NormKind::MaxMin,
            NormArg::Softmax => NormKind::Softmax,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Dynamic,
    Fast,
}

#[derive(Args)]
struct GenArgs {
    /// JSON file holding a full generator spec (alternative to the inline flags)
    #[arg(long, value_name = "file")]
    spec: Option<PathBuf>,
    #[arg(long, required_unless_present = "spec", conflicts_with = "spec")]
    classes: Option<usize>,
    #[arg(long, required_unless_present = "spec", conflicts_with = "spec")]
    n_lower: Option<usize>,
    /// Pose dimension d_h
    #[arg(long, required_unless_present = "spec", conflicts_with = "spec")]
    dim: Option<usize>,
    /// Fraction of lower capsules active per class
    #[arg(long, required_unless_present = "spec", conflicts_with = "spec")]
    active_frac: Option<f64>,
    /// Fraction of each class's support shared with the previous class
    #[arg(long, required_unless_present = "spec", conflicts_with = "spec")]
    overlap: Option<f64>,
    /// Noise standard deviation sigma
    #[arg(long, required_unless_present = "spec", conflicts_with = "spec")]
    noise: Option<f64>,
    /// Signal strength beta
    #[arg(long, required_unless_present = "spec", conflicts_with = "spec")]
    beta: Option<f64>,
    /// Per-example magnitude jitter range
    #[arg(long, required_unless_present = "spec", conflicts_with = "spec")]
    jitter: Option<f64>,
    #[arg(long, required_unless_present = "spec", conflicts_with = "spec")]
    per_class_train: Option<usize>,
    #[arg(long, required_unless_present = "spec", conflicts_with = "spec")]
    per_class_test: Option<usize>,
    #[arg(long, required_unless_present = "spec", conflicts_with = "spec")]
    seed: Option<u64>,
    #[arg(long, value_name = "path")]
    out_train: PathBuf,
    #[arg(long, value_name = "path")]
    out_test: PathBuf,
}

#[derive(Args)]
struct RouteArgs {
    #[arg(long, value_name = "path")]
    dataset: PathBuf,
    #[arg(long)]
    mode: ModeArg,
    /// Master matrix file; required in fast mode
    #[arg(long, value_name = "path", required_if_eq("mode", "fast"))]
    master: Option<PathBuf>,
    #[arg(long)]
    norm: NormArg,
    #[arg(long, value_name = "r")]
    iters: usize,
    /// Max-Min lower bound
    #[arg(long)]
    p: f64,
    /// Max-Min upper bound
    #[arg(long)]
    q: f64,
    #[arg(long, value_name = "path")]
    out_trace: PathBuf,
    /// Per-example CSV: label, prediction, output norms
    #[arg(long, value_name = "csv")]
    report: PathBuf,
}

#[derive(Args)]
struct BuildMasterArgs {
    #[arg(long, value_name = "path")]
    dataset: PathBuf,
    #[arg(long)]
    norm: NormArg,
    /// none, kmeans:<drop-fraction>, or sim:<keep-fraction>
    #[arg(long)]
    filter: String,
    #[arg(long, value_name = "r")]
    iters: usize,
    #[arg(long)]
    p: f64,
    #[arg(long)]
    q: f64,
    #[arg(long, value_name = "path")]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AnalyzeKind {
    GtCorr,
    ClassCorr,
    MasterCorr,
    Tuning,
    Accuracy,
}

#[derive(Args)]
struct AnalyzeArgs {
    kind: AnalyzeKind,
    #[arg(long, value_name = "path")]
    dataset: PathBuf,
    /// Master matrix file; required for master-corr, switches accuracy to
    /// the fast path
    #[arg(long, value_name = "path")]
    master: Option<PathBuf>,
    /// Restrict gt-corr to the first M examples
    #[arg(long, value_name = "M")]
    first: Option<usize>,
    #[arg(long, value_name = "csv")]
    out: PathBuf,
    /// Routing overrides; defaults to the master's stored config where one
    /// is given, otherwise maxmin/3/[0,1]
    #[arg(long)]
    norm: Option<NormArg>,
    #[arg(long, value_name = "r")]
    iters: Option<usize>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_name = "path")]
    dataset: PathBuf,
    #[arg(long, value_name = "path")]
    master: PathBuf,
    /// Dynamic-routing iteration count to compare against
    #[arg(long, value_name = "r")]
    iters: usize,
    #[arg(long, value_name = "n")]
    repeats: usize,
    #[arg(long, value_name = "csv")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = match cli.command {
        Command::Gen(args) => run_gen(args),
        Command::Route(args) => run_route(args),
        Command::BuildMaster(args) => run_build_master(args),
        Command::Analyze(args) => run_analyze(args),
        Command::Bench(args) => run_bench(args),
    };
    match run {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run_gen(args: GenArgs) -> Result<()> {
    let spec = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str::<PlantedSpec>(&text)
                .map_err(|e| Error::Validation(format!("spec file {}: {e}", path.display())))?
        }
        None => PlantedSpec {
            classes: args.classes.unwrap(),
            n_lower: args.n_lower.unwrap(),
            dim: args.dim.unwrap(),
            active_fraction: args.active_frac.unwrap(),
            overlap: args.overlap.unwrap(),
            signal: args.beta.unwrap(),
            noise: args.noise.unwrap(),
            profile_jitter: args.jitter.unwrap(),
            per_class_train: args.per_class_train.unwrap(),
            per_class_test: args.per_class_test.unwrap(),
            seed: args.seed.unwrap(),
        },
    };
    for warning in spec.warnings() {
        eprintln!("warning: {warning}");
    }
    let (train, test) = generate_planted(&spec)?;
    write_dataset(&args.out_train, &train)?;
    write_dataset(&args.out_test, &test)?;
    println!(
        "generated {} train and {} test examples ({} classes, {}x{} predictions) -> {}, {}",
        train.len(),
        test.len(),
        spec.classes,
        spec.n_lower,
        spec.dim,
        args.out_train.display(),
        args.out_test.display()
    );
    Ok(())
}

fn routing_config_from_flags(norm: NormArg, iters: usize, p: f64, q: f64) -> Result<RoutingConfig> {
    let cfg = RoutingConfig {
        iterations: iters,
        norm_kind: norm.into(),
        lower_bound: p,
        upper_bound: q,
        ..RoutingConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn write_report(path: &PathBuf, dataset: &LabeledDataset, outputs: &[CapsuleOutputs]) -> Result<(usize, usize)> {
    let mut header: Vec<String> = ["example", "label", "prediction", "correct"]
        .map(String::from)
        .to_vec();
    header.extend((0..dataset.n_upper()).map(|j| format!("norm{j}")));
    let mut correct = 0usize;
    let rows: Vec<Vec<String>> = outputs
        .iter()
        .zip(dataset.labels())
        .enumerate()
        .map(|(idx, (v, &label))| {
            let prediction = classify(v);
            if prediction == label {
                correct += 1;
            }
            let mut row = vec![
                idx.to_string(),
                label.to_string(),
                prediction.to_string(),
                usize::from(prediction == label).to_string(),
            ];
            row.extend(v.norms().into_iter().map(format_value));
            row
        })
        .collect();
    write_csv(path, &header, &rows)?;
    Ok((correct, outputs.len()))
}

fn run_route(args: RouteArgs) -> Result<()> {
    let dataset = read_dataset(&args.dataset)?;
    if dataset.is_empty() {
        return Err(Error::Validation("dataset has no examples to route".into()));
    }
    let (traces, trace_config, mode_name): (Vec<RoutingTrace>, RoutingConfig, &str) =
        match args.mode {
            ModeArg::Dynamic => {
                let cfg = routing_config_from_flags(args.norm, args.iters, args.p, args.q)?;
                let traces = dataset
                    .examples()
                    .iter()
                    .map(|e| dynamic_route(e, &cfg))
                    .collect::<Result<_>>()?;
                (traces, cfg, "dynamic")
            }
            ModeArg::Fast => {
                let master = read_master(args.master.as_ref().expect("enforced by clap"))?;
                let stored = master.routing_config();
                if stored.norm_kind != args.norm.into()
                    || stored.lower_bound != args.p
                    || stored.upper_bound != args.q
                    || stored.iterations != args.iters
                {
                    eprintln!(
                        "warning: routing flags differ from the master's stored config ({} iters, {}, [{}, {}]); the master's applies",
                        stored.iterations, stored.norm_kind, stored.lower_bound, stored.upper_bound
                    );
                }
                let traces = dataset
                    .examples()
                    .iter()
                    .map(|e| fast_route_trace(e, &master))
                    .collect::<Result<_>>()?;
                let cfg = RoutingConfig {
                    iterations: 1,
                    ..stored.clone()
                };
                (traces, cfg, "fast")
            }
        };
    write_trace_set(&args.out_trace, &traces, dataset.labels(), &trace_config)?;
    let outputs: Vec<CapsuleOutputs> = traces.iter().map(|t| t.outputs().clone()).collect();
    let (correct, total) = write_report(&args.report, &dataset, &outputs)?;
    println!(
        "routed {total} examples ({mode_name}), accuracy {:.4}; traces -> {}, report -> {}",
        correct as f64 / total as f64,
        args.out_trace.display(),
        args.report.display()
    );
    Ok(())
}

fn run_build_master(args: BuildMasterArgs) -> Result<()> {
    let dataset = read_dataset(&args.dataset)?;
    let filter: FilterStrategy = args.filter.parse()?;
    let routing = routing_config_from_flags(args.norm, args.iters, args.p, args.q)?;
    let builder = BuilderConfig {
        norm_kind: args.norm.into(),
        lower_bound: args.p,
        upper_bound: args.q,
        filter,
        ..BuilderConfig::default()
    };
    let master = build_master(&dataset, &routing, &builder)?;
    write_master(&args.out, &master)?;
    println!(
        "built {}x{} master from {} examples ({} classes) -> {}",
        master.n_lower(),
        master.n_upper(),
        dataset.len(),
        master.class_counts().len(),
        args.out.display()
    );
    Ok(())
}

fn analysis_routing_config(args: &AnalyzeArgs, master: Option<&MasterMatrix>) -> Result<RoutingConfig> {
    let mut cfg = master
        .map(|m| m.routing_config().clone())
        .unwrap_or_default();
    if let Some(norm) = args.norm {
        cfg.norm_kind = norm.into();
    }
    if let Some(iters) = args.iters {
        cfg.iterations = iters;
    }
    if let Some(p) = args.p {
        cfg.lower_bound = p;
    }
    if let Some(q) = args.q {
        cfg.upper_bound = q;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_analyze(args: AnalyzeArgs) -> Result<()> {
    let dataset = read_dataset(&args.dataset)?;
    if dataset.is_empty() {
        return Err(Error::Validation("dataset has no examples to analyze".into()));
    }
    let classes = dataset.n_upper();
    let master = match (&args.kind, &args.master) {
        (AnalyzeKind::MasterCorr, None) => {
            return Err(Error::Validation("master-corr needs --master".into()));
        }
        (_, Some(path)) => Some(read_master(path)?),
        (_, None) => None,
    };
    let cfg = analysis_routing_config(&args, master.as_ref())?;

    let route_coefficients = || -> Result<Vec<capsroute::CoefficientMatrix>> {
        dataset
            .examples()
            .iter()
            .map(|e| Ok(dynamic_route(e, &cfg)?.last_coefficients()))
            .collect()
    };

    match args.kind {
        AnalyzeKind::GtCorr => {
            let coefficients = route_coefficients()?;
            let first = args.first.unwrap_or(dataset.len());
            let matrix = gt_correlation_matrix(&coefficients, dataset.labels(), first)?;
            export_correlation_csv(&args.out, &matrix)?;
        }
        AnalyzeKind::ClassCorr => {
            let coefficients = route_coefficients()?;
            let matrix = class_mean_correlations(&coefficients, dataset.labels(), classes)?;
            export_correlation_csv(&args.out, &matrix)?;
        }
        AnalyzeKind::MasterCorr => {
            let master = master.as_ref().expect("checked above");
            let coefficients = route_coefficients()?;
            let matrix =
                master_class_correlations(master, &coefficients, dataset.labels(), classes)?;
            export_correlation_csv(&args.out, &matrix)?;
        }
        AnalyzeKind::Tuning => {
            let outputs: Vec<CapsuleOutputs> = dataset
                .examples()
                .iter()
                .map(|e| Ok(dynamic_route(e, &cfg)?.outputs().clone()))
                .collect::<Result<_>>()?;
            let curves = tuning_curves(&outputs, dataset.labels(), classes)?;
            export_tuning_csv(&args.out, &curves)?;
        }
        AnalyzeKind::Accuracy => {
            let predictions: Vec<usize> = match &master {
                Some(m) => dataset
                    .examples()
                    .iter()
                    .map(|e| Ok(classify(&fast_route(e, m)?)))
                    .collect::<Result<_>>()?,
                None => dataset
                    .examples()
                    .iter()
                    .map(|e| Ok(classify(dynamic_route(e, &cfg)?.outputs())))
                    .collect::<Result<_>>()?,
            };
            let report = accuracy_report(&predictions, dataset.labels(), classes)?;
            export_accuracy_csv(&args.out, &report)?;
            println!("overall accuracy {:.4}", report.overall);
        }
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn run_bench(args: BenchArgs) -> Result<()> {
    let dataset = read_dataset(&args.dataset)?;
    let master = read_master(&args.master)?;
    let cfg = RoutingConfig {
        iterations: args.iters,
        ..master.routing_config().clone()
    };
    cfg.validate()?;
    let (dynamic, fast) = run_benchmark(&dataset, &master, &cfg, args.repeats)?;
    println!(
        "dynamic {:.1} us/example, fast {:.1} us/example, speedup {:.2}x, agreement {:.4}",
        dynamic.per_example_mean_us,
        fast.per_example_mean_us,
        fast.speedup_vs_dynamic.unwrap_or(f64::NAN),
        fast.agreement_rate
    );
    export_bench_csv(&args.out, &[dynamic, fast])?;
    println!("wrote {}", args.out.display());
    Ok(())
}
