use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use pdglasso::model::{
    default_tolerance, deviance, ebic, extract_graph_masked, lrt, mle, model_select, n_params, ClassMode, ClassSpec,
    ColourMask, LrtResult,
};
use pdglasso::penalty::{lambda1_block_max, lambda1_diag_max, lambda2_sym_max};
use pdglasso::simulate::{cell_means, run_scenario, ScenarioSpec};
use pdglasso::{pdglasso_solve, AdmmConfig, FusedLevel, PairedIndex, PenaltySpec};
use serde::Serialize;

use pdglasso_cli::io::{load_input, to_csv, write_output, Input, InputOptions};
use pdglasso_cli::report::{FitReport, ReportContext};

const EXIT_INPUT: u8 = 1;
const EXIT_NONCONVERGENCE: u8 = 2;

/// Graphical lasso for paired data.
#[derive(Parser)]
#[command(name = "pdglasso", version)]
struct Cli {
    /// Worker threads for grid evaluation (0 = all cores).
    #[arg(long, global = true, env = "PDGLASSO_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one penalized model and refit its MLE.
    Fit(FitArgs),
    /// Print the three closed-form penalty thresholds.
    Thresholds(ThresholdArgs),
    /// Two-stage eBIC selection over penalty grids.
    Path(PathArgs),
    /// Run a simulation scenario comparing pdglasso with glasso.
    Simulate(SimulateArgs),
    /// Likelihood ratio test of a submodel against a larger model.
    Compare(CompareArgs),
}

#[derive(Args)]
struct InputArgs {
    /// CSV with a header row; first half of the columns is group L.
    #[arg(long, short)]
    input: PathBuf,
    /// The input is a p x p covariance matrix rather than n x p data.
    #[arg(long)]
    cov: bool,
    /// Sample size (required with --cov whenever eBIC is needed).
    #[arg(long)]
    n: Option<usize>,
    /// Center data columns before forming S.
    #[arg(long)]
    center: bool,
    /// Rescale S to a correlation matrix.
    #[arg(long)]
    standardize: bool,
}

impl InputArgs {
    fn load(&self) -> Result<Input> {
        load_input(
            &self.input,
            &InputOptions { cov: self.cov, n: self.n, center: self.center, standardize: self.standardize },
        )
    }
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long, default_value_t = 1e-8)]
    eps_abs: f64,
    #[arg(long, default_value_t = 1e-8)]
    eps_rel: f64,
    #[arg(long, default_value_t = 5000)]
    max_iter: usize,
}

impl SolverArgs {
    fn config(&self) -> Result<AdmmConfig> {
        let cfg = AdmmConfig {
            eps_abs: self.eps_abs,
            eps_rel: self.eps_rel,
            max_outer: self.max_iter,
            ..AdmmConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    lambda1: f64,
    /// Shorthand setting all three fused components.
    #[arg(long)]
    lambda2: Option<FusedLevel>,
    /// Number, 0 or Inf.
    #[arg(long)]
    lambda2_vertex: Option<FusedLevel>,
    #[arg(long)]
    lambda2_inside: Option<FusedLevel>,
    #[arg(long)]
    lambda2_across: Option<FusedLevel>,
    /// Leave the diagonal out of the lasso term.
    #[arg(long)]
    no_penalize_diagonal: bool,
    /// eBIC gamma.
    #[arg(long)]
    gamma: Option<f64>,
    /// Report path (stdout when absent).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ThresholdArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct PathArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Grid length of each stage.
    #[arg(long, default_value_t = 20)]
    m: usize,
    #[arg(long, default_value_t = 0.0)]
    gamma: f64,
    /// Mode of each fused component: 0, grid or inf.
    #[arg(long, default_value = "grid")]
    vertex: ClassMode,
    #[arg(long, default_value = "grid")]
    inside: ClassMode,
    #[arg(long, default_value = "grid")]
    across: ClassMode,
    #[arg(long)]
    no_penalize_diagonal: bool,
    /// Winning report (stdout when absent).
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// One row per evaluated grid point.
    #[arg(long)]
    grid: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    p: usize,
    #[arg(long, default_value_t = 0.2)]
    density: f64,
    /// Share of eligible positions made symmetric (0 = GGM, 1 = fully symmetric).
    #[arg(long, default_value_t = 0.0)]
    symmetry: f64,
    /// Comma-separated sample sizes.
    #[arg(long, value_delimiter = ',', required = true)]
    n: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    m: usize,
    #[arg(long, default_value_t = 0.0)]
    gamma: f64,
    /// Per-cell table (stdout when absent).
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Averages over replications.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Report of the larger model.
    #[arg(long, required_unless_present = "precomputed")]
    full: Option<PathBuf>,
    /// Report of the submodel.
    #[arg(long, required_unless_present = "precomputed")]
    sub: Option<PathBuf>,
    #[arg(long, short, required_unless_present = "precomputed")]
    input: Option<PathBuf>,
    #[arg(long)]
    cov: bool,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    center: bool,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[command(flatten)]
    solver: SolverArgs,
    /// Test supplied deviances and parameter counts directly.
    #[arg(long, requires_all = ["dev_full", "d_full", "dev_sub", "d_sub"])]
    precomputed: bool,
    #[arg(long)]
    dev_full: Option<f64>,
    #[arg(long)]
    d_full: Option<usize>,
    #[arg(long)]
    dev_sub: Option<f64>,
    #[arg(long)]
    d_sub: Option<usize>,
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_INPUT);
        }
    }
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Thresholds(a) => cmd_thresholds(a),
        Command::Path(a) => cmd_path(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Compare(a) => cmd_compare(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}

fn converged_exit(converged: bool) -> ExitCode {
    if converged {
        ExitCode::SUCCESS
    } else {
        eprintln!("warning: solver did not converge; report written");
        ExitCode::from(EXIT_NONCONVERGENCE)
    }
}

fn cmd_fit(a: FitArgs) -> Result<ExitCode> {
    let cfg = a.solver.config()?;
    let input = a.input.load()?;
    if a.gamma.is_some() && input.n.is_none() {
        bail!("--n is required with --cov to compute eBIC");
    }
    let gamma = a.gamma.unwrap_or(0.0);
    let level = |specific: Option<FusedLevel>| specific.or(a.lambda2).unwrap_or(FusedLevel::Zero);
    let mut spec = PenaltySpec::glasso(a.lambda1).with_fused(
        level(a.lambda2_vertex),
        level(a.lambda2_inside),
        level(a.lambda2_across),
    );
    spec.penalize_diagonal = !a.no_penalize_diagonal;

    let idx = PairedIndex::from_dim(input.s.dim())?;
    let (theta, report) = pdglasso_solve(&input.s, &spec, &cfg)?;
    let tol = default_tolerance(&theta);
    let mask = ColourMask {
        vertex: !spec.lambda2_vertex.is_zero(),
        inside: !spec.lambda2_inside.is_zero(),
        across: !spec.lambda2_across.is_zero(),
    };
    let graph = extract_graph_masked(&theta, idx, tol, tol, mask)?;
    let d = n_params(&graph);
    let refit = match mle(&input.s, &graph, &cfg) {
        Ok(t) => Some(t),
        Err(e) => {
            eprintln!("warning: MLE refit failed: {e}");
            None
        }
    };
    let score = match (&refit, input.n) {
        (Some(t), Some(n)) => Some(ebic(t, &input.s, n, d, gamma)?),
        _ => None,
    };
    let ctx = ReportContext {
        command: "fit",
        variables: &input.names,
        n: input.n,
        gamma,
        standardized: input.standardized,
        config: &cfg,
    };
    let out = FitReport::new(&ctx, &spec, &report, &theta, &graph, d, score, refit.as_ref());
    write_output(a.out.as_deref(), &out.to_json()?)?;
    Ok(converged_exit(report.converged))
}

#[derive(Serialize)]
struct Thresholds {
    lambda1_diag: f64,
    lambda1_block: f64,
    lambda2_sym: f64,
}

fn cmd_thresholds(a: ThresholdArgs) -> Result<ExitCode> {
    let input = a.input.load()?;
    let idx = PairedIndex::from_dim(input.s.dim())?;
    let t = Thresholds {
        lambda1_diag: lambda1_diag_max(&input.s)?,
        lambda1_block: lambda1_block_max(&input.s, idx)?,
        lambda2_sym: lambda2_sym_max(&input.s, idx)?,
    };
    if a.json {
        println!("{}", serde_json::to_string_pretty(&t)?);
    } else {
        println!("lambda1_diag {}", t.lambda1_diag);
        println!("lambda1_block {}", t.lambda1_block);
        println!("lambda2_sym {}", t.lambda2_sym);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_path(a: PathArgs) -> Result<ExitCode> {
    let cfg = a.solver.config()?;
    let input = a.input.load()?;
    let n = input.n.context("--n is required with --cov for model selection")?;
    let class =
        ClassSpec { vertex: a.vertex, inside: a.inside, across: a.across, penalize_diagonal: !a.no_penalize_diagonal };
    let sel = model_select(&input.s, n, a.m, a.gamma, &class, &cfg)?;
    let ctx = ReportContext {
        command: "path",
        variables: &input.names,
        n: Some(n),
        gamma: a.gamma,
        standardized: input.standardized,
        config: &cfg,
    };
    write_output(a.out.as_deref(), &FitReport::from_fit(&ctx, &sel.best).to_json()?)?;
    if let Some(path) = &a.grid {
        write_output(Some(path), &to_csv(&sel.grid)?)?;
    }
    Ok(converged_exit(sel.best.report.converged))
}

fn cmd_simulate(a: SimulateArgs) -> Result<ExitCode> {
    let cfg = a.solver.config()?;
    let spec = ScenarioSpec {
        p: a.p,
        density: a.density,
        symmetry_fraction: a.symmetry,
        n_list: a.n,
        replications: a.reps,
        seed: a.seed,
        grid_len: a.m,
        gamma: a.gamma,
    };
    let rows = run_scenario(&spec, &cfg)?;
    write_output(a.out.as_deref(), &to_csv(&rows)?)?;
    if let Some(path) = &a.summary {
        write_output(Some(path), &to_csv(&cell_means(&rows))?)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn read_report(path: &Path) -> Result<FitReport> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    FitReport::from_json(&text).with_context(|| format!("{}: invalid report", path.display()))
}

#[derive(Serialize)]
struct Comparison {
    deviance_full: f64,
    d_full: usize,
    deviance_sub: f64,
    d_sub: usize,
    alpha: f64,
    #[serde(flatten)]
    test: LrtResult,
}

fn cmd_compare(a: CompareArgs) -> Result<ExitCode> {
    let (dev_full, d_full, dev_sub, d_sub) = if a.precomputed {
        (a.dev_full.unwrap(), a.d_full.unwrap(), a.dev_sub.unwrap(), a.d_sub.unwrap())
    } else {
        let cfg = a.solver.config()?;
        let (full, sub) = (read_report(a.full.as_ref().unwrap())?, read_report(a.sub.as_ref().unwrap())?);
        sub.graph.check_nested_in(&full.graph)?;
        let input = load_input(
            a.input.as_ref().unwrap(),
            &InputOptions { cov: a.cov, n: a.n, center: a.center, standardize: full.standardized },
        )?;
        let n = input.n.context("--n is required with --cov")?;
        let fit = |g| -> Result<f64> { Ok(deviance(&mle(&input.s, g, &cfg)?, &input.s, n)?) };
        (fit(&full.graph)?, n_params(&full.graph), fit(&sub.graph)?, n_params(&sub.graph))
    };
    let test = lrt(dev_full, d_full, dev_sub, d_sub, a.alpha)?;
    let c = Comparison { deviance_full: dev_full, d_full, deviance_sub: dev_sub, d_sub, alpha: a.alpha, test };
    if a.json {
        println!("{}", serde_json::to_string_pretty(&c)?);
    } else {
        println!("deviance_full {:.4} (d = {})", c.deviance_full, c.d_full);
        println!("deviance_sub {:.4} (d = {})", c.deviance_sub, c.d_sub);
        if test.df == 0 {
            println!("degenerate comparison: equal parameter counts, no test");
        } else {
            println!(
                "lrt {:.4} on {} df, critical value {:.4} at alpha {}",
                test.stat, test.df, test.critical, a.alpha
            );
            println!("{}", if test.reject { "reject the submodel" } else { "do not reject the submodel" });
        }
    }
    Ok(ExitCode::SUCCESS)
}
