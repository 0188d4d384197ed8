use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use pde_arena::bench::{
    self, default_cache_dir, emit_report, l2_relative_error, records_from_json, BenchOptions, EvalGrid, GroundTruth,
    GroundTruthKind, Method, ReportFormat, Selection,
};
use pde_arena::evolution::{run_evolution, write_trajectory, Scheme};
use pde_arena::fem::solve_stationary;
use pde_arena::mesh::Mesh;
use pde_arena::pinn::{evaluate_pinn, train, TrainConfig};
use pde_arena::problems::{Manifest, ProblemId, RunPlan, Scale};

/// Largest mesh (in nodes) `fem solve` accepts.
const MAX_NODES: f64 = 2.0e7;

#[derive(Parser, Debug)]
#[command(name = "pde-arena", version, about = "FEM versus PINN benchmark on Poisson, Allen-Cahn and Schrodinger problems")]
struct Cli {
    /// Worker threads for parallel loops (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Ground-truth management.
    Gt {
        #[command(subcommand)]
        action: GtCommand,
    },
    /// Finite element runs.
    Fem {
        #[command(subcommand)]
        action: FemCommand,
    },
    /// Network training.
    Pinn {
        #[command(subcommand)]
        action: PinnCommand,
    },
    /// Benchmark FEM and PINN configurations against the ground truth.
    Compare(CompareArgs),
    /// Re-emit a records file as CSV and/or JSON with pareto tables.
    Report(ReportArgs),
    /// Write the default problem manifest.
    Manifest {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum GtCommand {
    /// Build (or verify) cached ground truths.
    Build {
        #[command(flatten)]
        scale: ScaleArgs,
        /// Problems to build; all evolution problems when omitted.
        #[arg(long = "problem", value_parser = parse_problem)]
        problems: Vec<ProblemId>,
        /// Recompute even when a valid cache entry exists.
        #[arg(long)]
        force: bool,
        #[command(flatten)]
        cache: CacheArgs,
    },
}

#[derive(Subcommand, Debug)]
enum FemCommand {
    /// Solve one problem on one mesh.
    Solve {
        #[arg(long, value_parser = parse_problem)]
        problem: ProblemId,
        /// Cells per axis.
        #[arg(long)]
        n: usize,
        /// Nominal time step (evolution problems; default from the manifest).
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long, value_enum, default_value_t = SchemeArg::SemiImplicit)]
        scheme: SchemeArg,
        #[command(flatten)]
        scale: ScaleArgs,
        /// Write the solution (JSON) or trajectory (JSON lines) here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also report the error of evolution problems (builds the ground truth if needed).
        #[arg(long)]
        with_error: bool,
        #[command(flatten)]
        cache: CacheArgs,
    },
}

#[derive(Subcommand, Debug)]
enum PinnCommand {
    /// Train one architecture with the manifest schedule.
    Train {
        #[arg(long, value_parser = parse_problem)]
        problem: ProblemId,
        /// Layer widths including the output layer, e.g. 20,20,1.
        #[arg(long, value_parser = parse_arch)]
        arch: Arch,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        scale: ScaleArgs,
        /// Override the Adam epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        /// Override the L-BFGS iteration budget.
        #[arg(long)]
        lbfgs_iters: Option<usize>,
        /// Checkpoint file (JSON).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Training log (JSON lines).
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        with_error: bool,
        #[command(flatten)]
        cache: CacheArgs,
    },
}

#[derive(Args, Debug)]
struct ScaleArgs {
    #[arg(long, value_enum, default_value_t = ScaleArg::Desk)]
    scale: ScaleArg,
    /// Required with --scale paper: the paper schedules run for hours to days.
    #[arg(long)]
    accept_long_runtime: bool,
    /// Problem manifest (JSON); the built-in manifest when omitted.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CacheArgs {
    /// Ground-truth cache root (default: $PDE_ARENA_CACHE or ./pde-arena-cache).
    #[arg(long)]
    cache: Option<PathBuf>,
}

impl CacheArgs {
    fn dir(&self) -> PathBuf {
        self.cache.clone().unwrap_or_else(default_cache_dir)
    }
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Problems to run (repeatable); all when omitted.
    #[arg(long = "problem", value_parser = parse_problem)]
    problems: Vec<ProblemId>,
    #[command(flatten)]
    scale: ScaleArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Timing repeats (default 3 at desk scale, 10 at paper scale).
    #[arg(long)]
    repeats: Option<usize>,
    /// Restrict to one method.
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Restrict FEM runs to these mesh sizes (repeatable).
    #[arg(long = "fem-n")]
    fem_n: Vec<usize>,
    /// Restrict PINN runs to these architectures (repeatable).
    #[arg(long = "arch", value_parser = parse_arch)]
    arch: Vec<Arch>,
    /// Run configurations concurrently (records are marked timing-invalid).
    #[arg(long)]
    parallel: bool,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Both)]
    format: FormatArg,
    #[command(flatten)]
    cache: CacheArgs,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Records file written by `compare` (JSON).
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Both)]
    format: FormatArg,
    /// Output directory (default: next to the input).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScaleArg {
    Desk,
    Paper,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SchemeArg {
    SemiImplicit,
    Implicit,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Fem,
    Pinn,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
    Both,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Both => ReportFormat::Both,
        }
    }
}

fn parse_problem(s: &str) -> Result<ProblemId, String> {
    s.parse().map_err(|e: pde_arena::Error| e.to_string())
}

/// Layer widths given as `20,20,1` or `[20,20,1]`.
#[derive(Clone, Debug)]
struct Arch(Vec<usize>);

fn parse_arch(s: &str) -> Result<Arch, String> {
    let v: Vec<usize> = s
        .trim_matches(|c| c == '[' || c == ']')
        .split(',')
        .map(|w| w.trim().parse::<usize>().map_err(|e| format!("bad width `{w}`: {e}")))
        .collect::<Result<_, _>>()?;
    if v.is_empty() || v.contains(&0) {
        return Err("architecture needs nonzero widths".into());
    }
    Ok(Arch(v))
}

/// Errors that are the caller's fault and map to exit code 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

impl ScaleArgs {
    fn scale(&self) -> anyhow::Result<Scale> {
        match self.scale {
            ScaleArg::Desk => Ok(Scale::Desk),
            ScaleArg::Paper if self.accept_long_runtime => Ok(Scale::Paper),
            ScaleArg::Paper => Err(usage("--scale paper replays the full schedules (hours to days); pass --accept-long-runtime")),
        }
    }

    fn manifest(&self) -> anyhow::Result<Manifest> {
        match &self.manifest {
            None => Ok(Manifest::default()),
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                Manifest::from_json(&text).map_err(|e| usage(format!("invalid manifest {}: {e}", p.display())))
            }
        }
    }

    fn plan(&self, id: ProblemId) -> anyhow::Result<RunPlan> {
        Ok(self.manifest()?.plan(id, self.scale()?)?)
    }
}

fn create(path: &Path) -> anyhow::Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn gt_build(scale: &ScaleArgs, problems: &[ProblemId], force: bool, cache: &Path) -> anyhow::Result<()> {
    let ids: Vec<ProblemId> =
        if problems.is_empty() { ProblemId::ALL.into_iter().filter(|p| !p.is_poisson()).collect() } else { problems.to_vec() };
    for id in ids {
        let plan = scale.plan(id)?;
        let gt = GroundTruth::for_plan(&plan)?;
        if gt.kind == GroundTruthKind::Analytic {
            println!("{id}: analytic solution, nothing to cache");
            continue;
        }
        let cached = if force { None } else { gt.load(cache)? };
        let state = if cached.is_some() {
            "cached"
        } else {
            let v = gt.compute()?;
            gt.store(cache, &v)?;
            "built"
        };
        println!("{id}: {state} {:?} on grid {} (key {})", gt.kind, gt.grid.describe(), gt.key()?);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn fem_solve(
    problem: ProblemId,
    n: usize,
    dt: Option<f64>,
    scheme: SchemeArg,
    scale: &ScaleArgs,
    out: Option<&Path>,
    with_error: bool,
    cache: &Path,
) -> anyhow::Result<()> {
    let plan = scale.plan(problem)?;
    let p = &plan.problem;
    let nodes = (n as f64 + 1.0).powi(p.spatial_dim() as i32);
    if n == 0 || nodes > MAX_NODES {
        return Err(usage(format!("mesh n = {n} in {}D has {nodes:.3e} nodes; the limit is {MAX_NODES:.0e}", p.spatial_dim())));
    }
    let mesh = Arc::new(Mesh::for_box(n, p.domain.clone())?);
    let grid = EvalGrid::for_plan(&plan)?;
    if p.is_evolution() {
        let nominal = dt.or(plan.dt).expect("evolution plans carry a time step");
        let tg = p.time_grid(nominal)?;
        let scheme = match scheme {
            SchemeArg::SemiImplicit => Scheme::SemiImplicit,
            SchemeArg::Implicit => Scheme::Implicit,
        };
        let (states, solve) = run_evolution(p, mesh, tg.dt(), p.horizon, scheme, &grid.times)?;
        println!("{problem} n={n}: {} steps of dt={:.6e}, solve {:.4} s", tg.steps, tg.dt(), solve.as_secs_f64());
        if let Some(path) = out {
            write_trajectory(&states, create(path)?)?;
        }
        if with_error {
            let truth = GroundTruth::for_plan(&plan)?.values(Some(cache))?;
            let xs = grid.spatial_points();
            let mut approx = Vec::new();
            for s in &states {
                approx.extend(s.evaluate_modulus(&xs)?);
            }
            println!("l2_rel_error {:.6e}", l2_relative_error(&approx, &truth)?);
        }
    } else {
        let (field, solve) = solve_stationary(p, mesh)?;
        let (values, eval) = field.evaluate(&grid.spatial_points())?;
        let truth = GroundTruth::for_plan(&plan)?.values(None)?;
        println!(
            "{problem} n={n}: solve {:.4e} s, eval {:.4e} s, l2_rel_error {:.6e}",
            solve.as_secs_f64(),
            eval.as_secs_f64(),
            l2_relative_error(&values, &truth)?
        );
        if let Some(path) = out {
            fs::write(path, field.to_json()?).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn pinn_train(
    problem: ProblemId,
    arch: &[usize],
    seed: u64,
    scale: &ScaleArgs,
    epochs: Option<usize>,
    lbfgs_iters: Option<usize>,
    out: Option<&Path>,
    log_path: Option<&Path>,
    with_error: bool,
    cache: &Path,
) -> anyhow::Result<()> {
    let plan = scale.plan(problem)?;
    let p = &plan.problem;
    if arch.last() != Some(&p.output_dim()) {
        return Err(usage(format!("{problem} needs an output width of {}", p.output_dim())));
    }
    let mut cfg = TrainConfig::from_plan(&plan, arch, seed);
    if let Some(e) = epochs {
        cfg.adam_epochs = e;
    }
    if let Some(i) = lbfgs_iters {
        cfg.lbfgs_iters = i;
    }
    let mut sink = log_path.map(create).transpose()?;
    let outcome = train::<f64>(p, &cfg, sink.as_mut().map(|w| w as &mut dyn std::io::Write))?;
    println!(
        "{problem} {}: train {:.3} s, final loss {:.6e}, L-BFGS {} iterations ({:?})",
        bench::RunConfig::Pinn { arch: arch.to_vec() }.label(),
        outcome.train_time.as_secs_f64(),
        outcome.final_loss,
        outcome.lbfgs_iterations,
        outcome.lbfgs_termination
    );
    if let Some(path) = out {
        fs::write(path, outcome.model.to_checkpoint_json()?).with_context(|| format!("writing {}", path.display()))?;
    }
    if !p.is_evolution() || with_error {
        let gt = GroundTruth::for_plan(&plan)?;
        let truth = gt.values(Some(cache))?;
        let (raw, eval) = evaluate_pinn(&outcome.model, &gt.grid.network_inputs())?;
        let values: Vec<f64> = if p.output_dim() == 2 { raw.chunks(2).map(|h| h[0].hypot(h[1])).collect() } else { raw };
        println!("eval {:.4e} s, l2_rel_error {:.6e}", eval.as_secs_f64(), l2_relative_error(&values, &truth)?);
    }
    Ok(())
}

fn compare(args: &CompareArgs) -> anyhow::Result<bool> {
    let scale = args.scale.scale()?;
    let manifest = args.scale.manifest()?;
    let sel = Selection {
        problems: args.problems.clone(),
        methods: match args.method {
            None => Vec::new(),
            Some(MethodArg::Fem) => vec![Method::Fem],
            Some(MethodArg::Pinn) => vec![Method::Pinn],
        },
        fem_meshes: args.fem_n.clone(),
        architectures: args.arch.iter().map(|a| a.0.clone()).collect(),
    };
    let repeats = args.repeats.unwrap_or(if scale == Scale::Paper { 10 } else { 3 });
    if repeats == 0 {
        return Err(usage("--repeats must be at least 1"));
    }
    let opts = BenchOptions { scale, repeats, seed: args.seed, cache_dir: Some(args.cache.dir()), parallel: args.parallel };
    let records = bench::run_benchmark(&manifest, &sel, &opts)?;
    if records.is_empty() {
        return Err(usage("the selection matched no configurations"));
    }
    let written = emit_report(&records, &args.out, args.format.into())?;
    for r in &records {
        match (&r.failure, r.l2_rel_error) {
            (Some(f), _) => println!("{:<14} {:<4} {:<16} FAILED: {f}", r.problem, r.method.as_str(), r.config),
            (None, Some(e)) => println!(
                "{:<14} {:<4} {:<16} error {:.3e}  solve {:.3e} s  eval {:.3e} s",
                r.problem,
                r.method.as_str(),
                r.config,
                e,
                r.solve_time_s.unwrap_or(f64::NAN),
                r.eval_time_s.unwrap_or(f64::NAN)
            ),
            (None, None) => {}
        }
    }
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(records.iter().all(|r| r.failure.is_none()))
}

fn report(args: &ReportArgs) -> anyhow::Result<()> {
    let text = fs::read_to_string(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let records = records_from_json(&text).map_err(|e| usage(format!("{}: {e}", args.input.display())))?;
    let dir = args.out.clone().unwrap_or_else(|| args.input.parent().map(Path::to_path_buf).unwrap_or_default());
    for p in emit_report(&records, &dir, args.format.into())? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(usage("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::Gt { action: GtCommand::Build { scale, problems, force, cache } } => gt_build(scale, problems, *force, &cache.dir())?,
        Command::Fem { action: FemCommand::Solve { problem, n, dt, scheme, scale, out, with_error, cache } } => {
            fem_solve(*problem, *n, *dt, *scheme, scale, out.as_deref(), *with_error, &cache.dir())?
        }
        Command::Pinn { action: PinnCommand::Train { problem, arch, seed, scale, epochs, lbfgs_iters, out, log, with_error, cache } } => {
            pinn_train(*problem, &arch.0, *seed, scale, *epochs, *lbfgs_iters, out.as_deref(), log.as_deref(), *with_error, &cache.dir())?
        }
        Command::Compare(args) => return compare(args),
        Command::Report(args) => report(args)?,
        Command::Manifest { out } => {
            let text = Manifest::default().to_json()?;
            match out {
                Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
                None => println!("{text}"),
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: some runs failed; see the records");
            ExitCode::from(1)
        }
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
