use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use deconv::report::{self, Provenance};
use deconv::select::{heldout_select, HeldoutOptions};
use deconv::simulate::{run_benchmark, BenchConfig, Method};
use deconv::tweedie::posterior_means_from_density;
use deconv::{aic_select, compute_path, solve, DeconvError, Grid, KernelMatrix, Norm, PenaltySpec, SolverConfig, TauGrid};

#[derive(Parser, Debug)]
#[command(name = "deconv", version, about = "Empirical-Bayes deconvolution by penalized Poisson likelihood")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit at a single tau.
    Fit(FitArgs),
    /// Fit a warm-started path over a tau grid, optionally selecting tau.
    Path(PathArgs),
    /// Monte Carlo benchmark on one of the built-in mixtures.
    Simulate(SimulateArgs),
    /// Posterior means for samples under a fitted estimate.
    Means(MeansArgs),
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Samples, one number per line ('#' starts a comment).
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = deconv::grid::DEFAULT_BINS)]
    bins: usize,
    /// Trend-filtering order k; the penalty acts on differences of order k + 1.
    #[arg(long, default_value_t = 1)]
    order: usize,
    #[arg(long, value_enum, default_value_t = PenaltyArg::L1)]
    penalty: PenaltyArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    tau: f64,
}

#[derive(Args, Debug)]
struct PathArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// MIN,MAX,COUNT
    #[arg(long, default_value = "1e-3,1e7,50")]
    tau_grid: String,
    #[arg(long, value_enum)]
    select: Option<SelectArg>,
    /// Seed for the held-out split.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    example: u32,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, value_enum, default_value_t = PenaltyArg::L1)]
    method: PenaltyArg,
    #[arg(long, default_value_t = deconv::grid::DEFAULT_BINS)]
    bins: usize,
    #[arg(long, default_value_t = 1)]
    order: usize,
    #[arg(long, default_value = "1e-3,1e7,50")]
    tau_grid: String,
    /// Base seed; replicate i uses seed + i.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for replicates (0 = all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MeansArgs {
    /// Estimate CSV written by `fit` or `path --select`.
    #[arg(long)]
    estimate: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum PenaltyArg {
    L1,
    L2,
}

impl PenaltyArg {
    fn norm(self) -> Norm {
        match self {
            PenaltyArg::L1 => Norm::L1,
            PenaltyArg::L2 => Norm::L2,
        }
    }

    fn name(self) -> &'static str {
        self.norm().as_str()
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SelectArg {
    Aic,
    Heldout,
}

/// Failures mapped onto the exit-code contract.
enum Failure {
    Usage(String),
    Solver(String),
}

impl From<DeconvError> for Failure {
    fn from(e: DeconvError) -> Self {
        match e {
            DeconvError::LineSearchFailed { .. }
            | DeconvError::AdmmDiverged
            | DeconvError::PathFailed
            | DeconvError::ThetaOutOfRange { .. }
            | DeconvError::InvalidIntensity(_) => Failure::Solver(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

/// Outcome of a command that ran to completion.
enum Status {
    Ok,
    Flagged(String),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DECONV_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Path(args) => cmd_path(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Means(args) => cmd_means(args),
    };
    match result {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Flagged(msg)) => {
            eprintln!("warning: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Solver(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn read_samples(path: &Path) -> Result<Vec<f64>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    report::parse_samples(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Usage(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn parse_tau_grid(spec: &str) -> Result<TauGrid, Failure> {
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    let bad = || Failure::Usage(format!("--tau-grid expects MIN,MAX,COUNT, got {spec:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let min: f64 = parts[0].parse().map_err(|_| bad())?;
    let max: f64 = parts[1].parse().map_err(|_| bad())?;
    let count: usize = parts[2].parse().map_err(|_| bad())?;
    Ok(TauGrid::new(max, min, count)?)
}

fn model_flags(m: &ModelArgs) -> Vec<(String, String)> {
    vec![
        ("input".into(), m.input.display().to_string()),
        ("bins".into(), m.bins.to_string()),
        ("order".into(), m.order.to_string()),
        ("penalty".into(), m.penalty.name().into()),
    ]
}

fn prepare(m: &ModelArgs) -> Result<(Vec<f64>, Grid, KernelMatrix), Failure> {
    if m.bins < 2 {
        return Err(Failure::Usage("--bins must be at least 2".into()));
    }
    let y = read_samples(&m.input)?;
    let grid = Grid::from_samples(&y, m.bins)?;
    grid.check_order(m.order)?;
    let kernel = KernelMatrix::build(&grid);
    Ok((y, grid, kernel))
}

fn cmd_fit(args: FitArgs) -> Result<Status, Failure> {
    let spec = PenaltySpec::new(args.model.order, args.model.penalty.norm(), args.tau)?;
    let (_, grid, kernel) = prepare(&args.model)?;
    let mut flags = model_flags(&args.model);
    flags.push(("tau".into(), report::fmt_f64(args.tau)));
    let prov = Provenance::new("fit", flags, None);
    let est = solve(&grid, &kernel, &spec, &SolverConfig::default())?;
    write(&args.model.out, "estimate.csv", &report::estimate_csv(&prov, &grid, &est))?;
    write(&args.model.out, "diagnostics.json", &report::to_json(&prov, &est.diagnostics)?)?;
    Ok(if est.converged() {
        Status::Ok
    } else {
        Status::Flagged(est.diagnostics.message.clone().unwrap_or_else(|| "solver did not converge".into()))
    })
}

fn cmd_path(args: PathArgs) -> Result<Status, Failure> {
    let taus = parse_tau_grid(&args.tau_grid)?;
    let norm = args.model.penalty.norm();
    match (args.select, norm) {
        (Some(SelectArg::Aic), Norm::L2) => return Err(DeconvError::AicRequiresL1.into()),
        (Some(SelectArg::Heldout), Norm::L1) => return Err(DeconvError::HeldoutRequiresL2.into()),
        _ => {}
    }
    let (y, grid, kernel) = prepare(&args.model)?;
    let mut flags = model_flags(&args.model);
    flags.push(("tau-grid".into(), format!("{},{},{}", report::fmt_f64(taus.min), report::fmt_f64(taus.max), taus.count)));
    if let Some(sel) = args.select {
        let name = match sel {
            SelectArg::Aic => "aic",
            SelectArg::Heldout => "heldout",
        };
        flags.push(("select".into(), name.into()));
    }
    let seed = matches!(args.select, Some(SelectArg::Heldout)).then_some(args.seed);
    let prov = Provenance::new("path", flags, seed);
    let cfg = SolverConfig::default();
    let out = &args.model.out;

    let (path, selection, chosen) = match args.select {
        Some(SelectArg::Heldout) => {
            let opts = HeldoutOptions {
                order: args.model.order,
                taus,
                seed: args.seed,
                ..Default::default()
            };
            let fit = heldout_select(&y, &grid, &kernel, &opts, &cfg)?;
            // The scored path is the training-split path; report the
            // full-data path alongside it so plots use all samples.
            let path = compute_path(&grid, &kernel, args.model.order, norm, &opts.taus, &cfg)?;
            write(out, "train_path.json", &report::to_json(&prov, &report::path_summary(&fit.train_path, Some(&fit.report)))?)?;
            (path, Some(fit.report), Some(fit.refit))
        }
        Some(SelectArg::Aic) => {
            let path = compute_path(&grid, &kernel, args.model.order, norm, &taus, &cfg)?;
            let report = aic_select(&path, &grid, &kernel, None)?;
            let chosen = path.entries[report.chosen_index].estimate.clone();
            (path, Some(report), Some(chosen))
        }
        None => (compute_path(&grid, &kernel, args.model.order, norm, &taus, &cfg)?, None, None),
    };

    write(out, "path.csv", &report::path_csv(&prov, &path))?;
    let aic_scores = selection.as_ref().filter(|s| s.method == deconv::SelectionMethod::Aic);
    write(out, "path.json", &report::to_json(&prov, &report::path_summary(&path, aic_scores))?)?;
    if let Some(sel) = &selection {
        write(out, "selection.json", &report::to_json(&prov, sel)?)?;
    }
    if let Some(est) = &chosen {
        write(out, "estimate.csv", &report::estimate_csv(&prov, &grid, est))?;
    }

    let flagged = path.entries.len() - path.converged_count();
    if let Some(est) = chosen.as_ref().filter(|e| !e.converged()) {
        return Ok(Status::Flagged(format!(
            "selected estimate did not converge: {}",
            est.diagnostics.message.clone().unwrap_or_default()
        )));
    }
    Ok(if flagged > 0 {
        Status::Flagged(format!("{flagged} of {} path entries did not converge", path.entries.len()))
    } else {
        Status::Ok
    })
}

fn cmd_simulate(args: SimulateArgs) -> Result<Status, Failure> {
    deconv::simulate::benchmark_example(args.example)?;
    let taus = parse_tau_grid(&args.tau_grid)?;
    let method = match args.method {
        PenaltyArg::L1 => Method::L1,
        PenaltyArg::L2 => Method::L2,
    };
    let cfg = BenchConfig {
        bins: args.bins,
        order: args.order,
        taus,
        base_seed: args.seed,
        jobs: args.jobs,
        ..Default::default()
    };
    let flags = vec![
        ("example".into(), args.example.to_string()),
        ("n".into(), args.n.to_string()),
        ("reps".into(), args.reps.to_string()),
        ("method".into(), args.method.name().into()),
        ("bins".into(), args.bins.to_string()),
        ("order".into(), args.order.to_string()),
        ("tau-grid".into(), format!("{},{},{}", report::fmt_f64(cfg.taus.min), report::fmt_f64(cfg.taus.max), cfg.taus.count)),
    ];
    let prov = Provenance::new("simulate", flags, Some(args.seed));
    let bench = run_benchmark(args.example, args.n, args.reps, method, &cfg)?;
    write(&args.out, "bench.json", &report::to_json(&prov, &bench)?)?;
    write(&args.out, "bench.csv", &report::bench_csv(&prov, &bench))?;
    let failed = bench.replicates.iter().filter(|r| r.error.is_some()).count();
    Ok(if failed > 0 {
        Status::Flagged(format!("{failed} of {} replicates failed", bench.replicates.len()))
    } else {
        Status::Ok
    })
}

fn cmd_means(args: MeansArgs) -> Result<Status, Failure> {
    let text = fs::read_to_string(&args.estimate).map_err(|e| Failure::Usage(format!("{}: {e}", args.estimate.display())))?;
    let table = report::parse_estimate_csv(&text).map_err(|e| Failure::Usage(format!("{}: {e}", args.estimate.display())))?;
    let grid = table.grid()?;
    let y = read_samples(&args.input)?;
    let flags = vec![
        ("estimate".into(), args.estimate.display().to_string()),
        ("input".into(), args.input.display().to_string()),
    ];
    let prov = Provenance::new("means", flags, None);
    let means = posterior_means_from_density(&table.f_hat, &grid, &y)?;
    write(&args.out, "means.csv", &report::means_csv(&prov, &y, &means.mu_hat))?;
    Ok(if means.fallbacks > 0 {
        Status::Flagged(format!("{} posterior means fell back to the nearest support point", means.fallbacks))
    } else {
        Status::Ok
    })
}
