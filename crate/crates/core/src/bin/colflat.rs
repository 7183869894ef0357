//! Command-line interface: generate signals, solve single instances, run
//! condition checks and width estimators, and execute sweep configs.
//!
//! Exit codes: 0 success, 2 parameter error, 3 no convergence, 4 I/O
//! error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use colflat_core::conditions::{
    check_erc, check_flatness_condition, compute_mrip_constants, estimate_nsp_ratio,
    estimate_robust_nsp, thm41_report, ConditionReport,
};
use colflat_core::error::CoreError;
use colflat_core::experiments::{
    run_phase_transition, run_robustness_sweep, run_stability_experiment, write_csv,
    ExperimentConfig, ExperimentKind,
};
use colflat_core::norms::norm_colmax_l1_mat;
use colflat_core::operators::{
    make_dense, make_kronecker_random, make_sum_kronecker_random, MeasurementOp,
};
use colflat_core::rng::{derive_seed, rng_from_seed, Dist};
use colflat_core::signal::{gen_sparse_flat_signal, support_pattern, MatrixSignal};
use colflat_core::solver::{solve_constrained, solve_penalized, SolverConfig};
use colflat_core::widths::{
    analytic_width_bound, estimate_lambda_min, mc_width_kronecker, mc_width_sq,
    necessary_measurements, q_xi_estimate, required_measurements, BoundConstants,
    MeasurementFamily, WidthBoundFamily,
};

#[derive(Parser)]
#[command(
    name = "colflat",
    about = "Recovery of column-sparse, l1-column-flat matrix signals",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a column-sparse flat signal and write it as JSON.
    Gen(GenArgs),
    /// Solve one planted instance and write the result record.
    Solve(SolveArgs),
    /// Run condition checkers on a described operator.
    Check(CheckArgs),
    /// Run width estimators or closed-form bounds.
    Width(WidthArgs),
    /// Run a sweep described by a JSON config file.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    s: usize,
    /// Number of maximal-norm columns; defaults to n (flat signal).
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 0.2)]
    min_gap: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    /// Operator spec: dense | kronecker | sum-kronecker, with an optional
    /// -gaussian/-rademacher/-uniform suffix.
    #[arg(long)]
    op: String,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    s: usize,
    #[arg(long)]
    r: Option<usize>,
    /// Measurement count (side length for Kronecker kinds).
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 0.0)]
    eta: f64,
    /// Solve the penalized program at this multiplier instead of the
    /// constrained one.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    seed: u64,
    /// Number of Kronecker terms for the sum-kronecker kind.
    #[arg(long, default_value_t = 2)]
    terms: usize,
    /// Load the planted signal from a JSON file instead of generating it.
    #[arg(long)]
    signal: Option<PathBuf>,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    op: String,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 1)]
    s: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    eta: f64,
    #[arg(long, default_value_t = 2)]
    terms: usize,
    /// Comma-separated subset of nsp,rnsp,mrip,erc,flatness,thm41.
    #[arg(long, default_value = "nsp,rnsp,mrip,erc,flatness,thm41")]
    checks: String,
}

#[derive(Args)]
struct WidthArgs {
    /// gaussian | kronecker | qxi | lambda-min | bound | required |
    /// necessary
    #[arg(long)]
    kind: String,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    s: usize,
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 10)]
    directions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "gaussian")]
    dist: String,
    /// Family for bound/required kinds: gaussian | subgaussian |
    /// kronecker-gaussian | kronecker-subgaussian.
    #[arg(long, default_value = "gaussian")]
    family: String,
    #[arg(long, default_value_t = 0.0)]
    eta: f64,
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
    #[arg(long, default_value_t = 1.0)]
    t: f64,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long, default_value_t = 1.0)]
    c1: f64,
    #[arg(long, default_value_t = 1.0)]
    c2: f64,
    #[arg(long, default_value_t = 1.0)]
    c3: f64,
    #[arg(long, default_value_t = 1.0)]
    a: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma_a: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma_b: f64,
    /// Operator spec for lambda-min.
    #[arg(long, default_value = "dense-gaussian")]
    op: String,
    #[arg(long, default_value_t = 2)]
    terms: usize,
}

#[derive(Args)]
struct SweepArgs {
    /// Path to the JSON sweep configuration.
    config: PathBuf,
    /// Override the config's output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// On-disk signal format: row-major entries with generation provenance.
#[derive(Serialize, Deserialize)]
struct SignalFile {
    n: usize,
    s: usize,
    r: usize,
    seed: u64,
    min_gap: f64,
    entries: Vec<Vec<f64>>,
}

fn exit_code_for(err: &CoreError) -> u8 {
    match err {
        CoreError::Parameter(_)
        | CoreError::Dimension(_)
        | CoreError::Domain(_)
        | CoreError::SizeGuard(_) => 2,
        CoreError::NoConvergence(_) | CoreError::Singular { .. } => 3,
        CoreError::Io(_) => 4,
    }
}

fn parse_op_spec(spec: &str) -> Result<(String, Dist), CoreError> {
    let (kind, dist) = match spec.rsplit_once('-') {
        Some((k, d)) if ["gaussian", "rademacher", "uniform"].contains(&d) => {
            (k.to_string(), d.parse::<Dist>()?)
        }
        _ => (spec.to_string(), Dist::Gaussian),
    };
    match kind.as_str() {
        "dense" | "kronecker" | "sum-kronecker" => Ok((kind, dist)),
        other => Err(CoreError::Parameter(format!(
            "unknown operator kind `{other}`"
        ))),
    }
}

fn build_op(
    spec: &str,
    m: usize,
    n: usize,
    seed: u64,
    terms: usize,
) -> Result<MeasurementOp, CoreError> {
    let (kind, dist) = parse_op_spec(spec)?;
    match kind.as_str() {
        "dense" => make_dense(m, n, dist, seed),
        "kronecker" => make_kronecker_random(m, n, dist, seed),
        "sum-kronecker" => make_sum_kronecker_random(terms, m, n, dist, seed),
        _ => unreachable!("validated by parse_op_spec"),
    }
}

fn signal_to_file(x: &MatrixSignal, s: usize, r: usize, seed: u64, min_gap: f64) -> SignalFile {
    let n = x.n();
    let entries = (0..n)
        .map(|i| (0..n).map(|j| x[(i, j)]).collect())
        .collect();
    SignalFile {
        n,
        s,
        r,
        seed,
        min_gap,
        entries,
    }
}

fn load_signal(path: &PathBuf) -> Result<MatrixSignal, CoreError> {
    let text = std::fs::read_to_string(path)?;
    let file: SignalFile = serde_json::from_str(&text)?;
    MatrixSignal::from_rows(&file.entries)
}

fn run_gen(args: GenArgs) -> Result<(), CoreError> {
    let r = args.r.unwrap_or(args.n);
    let x = gen_sparse_flat_signal(args.n, args.s, r, args.seed, args.min_gap)?;
    let file = signal_to_file(&x, args.s, r, args.seed, args.min_gap);
    std::fs::write(&args.out, serde_json::to_string_pretty(&file)?)?;
    println!("wrote signal to {}", args.out.display());
    Ok(())
}

#[derive(Serialize)]
struct SolveRecord {
    op_kind: String,
    dist: String,
    n: usize,
    m: usize,
    mode: String,
    eta: f64,
    gamma: f64,
    objective: f64,
    kkt_residual: f64,
    feasibility_gap: f64,
    residual_norm: f64,
    iterations: usize,
    converged: bool,
    status: String,
    error_fro: f64,
    error_l1max: f64,
    minimizer: Vec<Vec<f64>>,
}

fn run_solve(args: SolveArgs) -> Result<(), CoreError> {
    let r = args.r.unwrap_or(args.n);
    let op = build_op(&args.op, args.m, args.n, args.seed, args.terms)?;
    let x = match &args.signal {
        Some(path) => load_signal(path)?,
        None => gen_sparse_flat_signal(args.n, args.s, r, derive_seed(args.seed, 1, 0), 0.2)?,
    };
    if x.n() != args.n {
        return Err(CoreError::Dimension(format!(
            "signal file has n = {}, expected {}",
            x.n(),
            args.n
        )));
    }
    let y_clean = op.apply_mat(x.entries());
    let y = if args.eta > 0.0 {
        let mut rng = rng_from_seed(derive_seed(args.seed, 2, 0));
        let noise = DVector::from_fn(op.meas_dim(), |_, _| Dist::Gaussian.sample(&mut rng));
        let nrm = noise.norm();
        &y_clean + noise * (args.eta / nrm.max(1e-300))
    } else {
        y_clean
    };
    let cfg = SolverConfig::default();
    let (mode, res) = match args.gamma {
        Some(g) => ("penalized", solve_penalized(&op, &y, g, &cfg)?),
        None => ("constrained", solve_constrained(&op, &y, args.eta, &cfg)?),
    };
    let err = res.minimizer.entries() - x.entries();
    let n = args.n;
    let record = SolveRecord {
        op_kind: op.kind_tag().into(),
        dist: op.dist().map(|d| d.tag()).unwrap_or("custom").into(),
        n,
        m: args.m,
        mode: mode.into(),
        eta: args.eta,
        gamma: res.gamma,
        objective: res.objective,
        kkt_residual: res.kkt_residual,
        feasibility_gap: res.feasibility_gap,
        residual_norm: res.residual_norm,
        iterations: res.iterations,
        converged: res.converged,
        status: format!("{:?}", res.status).to_lowercase(),
        error_fro: err.norm(),
        error_l1max: norm_colmax_l1_mat(&err),
        minimizer: (0..n)
            .map(|i| (0..n).map(|j| res.minimizer[(i, j)]).collect())
            .collect(),
    };
    let text = serde_json::to_string_pretty(&record)?;
    match &args.out {
        Some(path) => {
            std::fs::write(path, text)?;
            println!("wrote result to {}", path.display());
        }
        None => println!("{text}"),
    }
    if !res.converged {
        return Err(CoreError::NoConvergence(format!(
            "kkt residual {:.3e}, feasibility gap {:.3e}",
            res.kkt_residual, res.feasibility_gap
        )));
    }
    Ok(())
}

fn print_report(report: &ConditionReport) {
    print!("{}", report.to_kv_lines());
    println!();
}

fn run_check(args: CheckArgs) -> Result<(), CoreError> {
    let op = build_op(&args.op, args.m, args.n, args.seed, args.terms)?;
    let x = gen_sparse_flat_signal(args.n, args.s, args.n, derive_seed(args.seed, 1, 0), 0.2)?;
    let pattern = support_pattern(&x, 0.0);
    let selected: Vec<&str> = args.checks.split(',').map(|s| s.trim()).collect();
    for check in &selected {
        let result = match *check {
            "nsp" => estimate_nsp_ratio(&op, args.s, 120, 80, derive_seed(args.seed, 2, 0)),
            "rnsp" => estimate_robust_nsp(&op, args.s, 150, derive_seed(args.seed, 3, 0)),
            "mrip" => compute_mrip_constants(&op, args.s, 60, derive_seed(args.seed, 4, 0)),
            "erc" => check_erc(&op, &pattern),
            "flatness" => check_flatness_condition(&op, &pattern),
            "thm41" => thm41_report(&op, &pattern, args.eta),
            other => Err(CoreError::Parameter(format!("unknown check `{other}`"))),
        };
        match result {
            Ok(report) => print_report(&report),
            Err(e @ CoreError::Parameter(_)) => return Err(e),
            Err(e) => {
                println!("report={check}\nerror={e}\n");
            }
        }
    }
    Ok(())
}

fn print_kv(pairs: &[(&str, String)]) {
    for (k, v) in pairs {
        println!("{k}={v}");
    }
}

fn run_width(args: WidthArgs) -> Result<(), CoreError> {
    let r = args.r.unwrap_or(args.n);
    let dist: Dist = args.dist.parse()?;
    match args.kind.as_str() {
        "gaussian" => {
            let x = gen_sparse_flat_signal(args.n, args.s, r, derive_seed(args.seed, 1, 0), 0.2)?;
            let est = mc_width_sq(&x, args.samples, args.seed)?;
            print_kv(&[
                ("kind", "gaussian_width_sq".into()),
                ("mean", format!("{:.12e}", est.mean)),
                ("std_error", format!("{:.12e}", est.std_error)),
                ("samples", est.samples.to_string()),
            ]);
        }
        "kronecker" => {
            let m = args
                .m
                .ok_or_else(|| CoreError::Parameter("kronecker width needs --m".into()))?;
            let x = gen_sparse_flat_signal(args.n, args.s, r, derive_seed(args.seed, 1, 0), 0.2)?;
            let est = mc_width_kronecker(&x, m, dist, args.samples, args.seed)?;
            print_kv(&[
                ("kind", "kronecker_width".into()),
                ("mean", format!("{:.12e}", est.mean)),
                ("std_error", format!("{:.12e}", est.std_error)),
                ("samples", est.samples.to_string()),
            ]);
        }
        "qxi" => {
            let est = q_xi_estimate(dist, args.n, args.directions, args.samples, args.seed)?;
            print_kv(&[
                ("kind", "q_xi".into()),
                ("min_probability", format!("{:.12e}", est.mean)),
                ("std_error", format!("{:.12e}", est.std_error)),
                ("samples", est.samples.to_string()),
            ]);
        }
        "lambda-min" => {
            let m = args
                .m
                .ok_or_else(|| CoreError::Parameter("lambda-min needs --m".into()))?;
            let op = build_op(&args.op, m, args.n, args.seed, args.terms)?;
            let x = gen_sparse_flat_signal(args.n, args.s, r, derive_seed(args.seed, 1, 0), 0.2)?;
            let est = estimate_lambda_min(&op, &x, args.samples, args.seed)?;
            print_kv(&[
                ("kind", "lambda_min".into()),
                ("min", format!("{:.12e}", est.mean)),
                ("std_error", format!("{:.12e}", est.std_error)),
                ("samples", est.samples.to_string()),
            ]);
        }
        "bound" => {
            let family = match args.family.as_str() {
                "gaussian" => WidthBoundFamily::Gaussian,
                "kronecker-gaussian" => WidthBoundFamily::KroneckerGaussian,
                "kronecker-subgaussian" => WidthBoundFamily::KroneckerSubgaussian {
                    sigma_a: args.sigma_a,
                    sigma_b: args.sigma_b,
                },
                other => {
                    return Err(CoreError::Parameter(format!(
                        "unknown bound family `{other}`"
                    )))
                }
            };
            let v = analytic_width_bound(args.n, args.s, r, args.c, family)?;
            print_kv(&[("kind", "width_bound".into()), ("value", format!("{v:.12e}"))]);
        }
        "required" => {
            let family = match args.family.as_str() {
                "gaussian" => MeasurementFamily::Gaussian,
                "subgaussian" => MeasurementFamily::Subgaussian {
                    alpha: args.alpha,
                    rho: args.rho,
                    sigma: args.sigma,
                },
                "kronecker-gaussian" => MeasurementFamily::KroneckerGaussian,
                "kronecker-subgaussian" => MeasurementFamily::KroneckerSubgaussian {
                    sigma_a: args.sigma_a,
                    sigma_b: args.sigma_b,
                },
                other => {
                    return Err(CoreError::Parameter(format!(
                        "unknown measurement family `{other}`"
                    )))
                }
            };
            let constants = BoundConstants {
                c1: args.c1,
                c2: args.c2,
                c3: args.c3,
                a: args.a,
            };
            let v = required_measurements(
                family, args.n, args.s, args.eta, args.delta, args.t, constants,
            )?;
            let is_side = matches!(
                args.family.as_str(),
                "kronecker-gaussian" | "kronecker-subgaussian"
            );
            print_kv(&[
                ("kind", "required_measurements".into()),
                ("value", format!("{v:.12e}")),
                (
                    "interpretation",
                    if is_side {
                        "side m (measurement count is m^2)".into()
                    } else {
                        "measurement count m".into()
                    },
                ),
            ]);
        }
        "necessary" => {
            let v = necessary_measurements(args.n, args.s)?;
            print_kv(&[
                ("kind", "necessary_measurements".into()),
                ("value", format!("{v:.12e}")),
            ]);
        }
        other => {
            return Err(CoreError::Parameter(format!(
                "unknown width kind `{other}`"
            )))
        }
    }
    Ok(())
}

fn run_sweep(args: SweepArgs) -> Result<(), CoreError> {
    let text = std::fs::read_to_string(&args.config)?;
    let cfg: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| CoreError::Parameter(format!("config: {e}")))?;
    cfg.validate()?;
    let out_path = args
        .out
        .clone()
        .or_else(|| cfg.output.clone().map(PathBuf::from))
        .ok_or_else(|| {
            CoreError::Parameter("no output path: set `output` in the config or pass --out".into())
        })?;
    let (records, summary_json) = match cfg.experiment {
        ExperimentKind::PhaseTransition => {
            let (records, summary) = run_phase_transition(&cfg)?;
            (records, serde_json::to_string_pretty(&summary)?)
        }
        ExperimentKind::Robustness => {
            let (records, summary) = run_robustness_sweep(&cfg)?;
            (records, serde_json::to_string_pretty(&summary)?)
        }
        ExperimentKind::Stability => {
            let (records, summary) = run_stability_experiment(&cfg)?;
            (records, serde_json::to_string_pretty(&summary)?)
        }
    };
    let mut file = std::io::BufWriter::new(std::fs::File::create(&out_path)?);
    write_csv(&mut file, &records)?;
    println!("{summary_json}");
    eprintln!("wrote {} rows to {}", records.len(), out_path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(args) => run_gen(args),
        Command::Solve(args) => run_solve(args),
        Command::Check(args) => run_check(args),
        Command::Width(args) => run_width(args),
        Command::Sweep(args) => run_sweep(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
