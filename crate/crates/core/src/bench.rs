//! Ground truths, the error metric, benchmark runs and report files.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evolution::{run_evolution, EvolutionState, Scheme};
use crate::fem::solve_stationary;
use crate::mesh::Mesh;
use crate::pinn::{evaluate_pinn, train, TrainConfig};
use crate::problems::{FineResolution, Manifest, ProblemId, ProblemSpec, RunPlan, Scale};

pub const SCHEMA_VERSION: &str = "v1";
pub const CACHE_ENV: &str = "PDE_ARENA_CACHE";

/// `‖approx - reference‖₂ / ‖reference‖₂`.
pub fn l2_relative_error(approx: &[f64], reference: &[f64]) -> Result<f64> {
    if approx.len() != reference.len() {
        return Err(Error::DimensionMismatch { expected: reference.len(), got: approx.len() });
    }
    let den = reference.iter().map(|r| r * r).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(Error::invalid("reference has zero norm"));
    }
    let num = approx.iter().zip(reference).map(|(a, r)| (a - r) * (a - r)).sum::<f64>().sqrt();
    Ok(num / den)
}

/// Tensor grid of `per_axis` equally spaced points per spatial axis
/// (endpoints included), taken at each snapshot time for evolution problems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalGrid {
    pub problem: ProblemId,
    pub per_axis: usize,
    /// Snapshot times; empty for stationary problems.
    pub times: Vec<f64>,
}

impl EvalGrid {
    pub fn new(p: &ProblemSpec, per_axis: usize) -> Result<Self> {
        if per_axis < 2 {
            return Err(Error::invalid("evaluation grid needs at least two points per axis"));
        }
        let times = if p.is_evolution() {
            (1..=p.snapshot_count()).map(|k| p.horizon * k as f64 / p.snapshot_count() as f64).collect()
        } else {
            Vec::new()
        };
        Ok(EvalGrid { problem: p.id, per_axis, times })
    }

    pub fn for_plan(plan: &RunPlan) -> Result<Self> {
        EvalGrid::new(&plan.problem, plan.eval_grid)
    }

    /// Spatial grid points, x fastest.
    pub fn spatial_points(&self) -> Vec<f64> {
        let p = ProblemSpec::new(self.problem);
        let d = p.spatial_dim();
        let m = self.per_axis;
        let total = m.pow(d as u32);
        let mut pts = Vec::with_capacity(total * d);
        for k in 0..total {
            let mut r = k;
            for a in 0..d {
                let i = r % m;
                r /= m;
                let (lo, hi) = (p.domain.lo[a], p.domain.hi[a]);
                pts.push(if i + 1 == m { hi } else { lo + (hi - lo) * i as f64 / (m - 1) as f64 });
            }
        }
        pts
    }

    pub fn num_spatial(&self) -> usize {
        self.per_axis.pow(ProblemSpec::new(self.problem).spatial_dim() as u32)
    }

    /// Network inputs: `(t, x, ...)` for every time and spatial point, time-major.
    pub fn network_inputs(&self) -> Vec<f64> {
        let xs = self.spatial_points();
        if self.times.is_empty() {
            return xs;
        }
        let d = ProblemSpec::new(self.problem).spatial_dim();
        let mut out = Vec::with_capacity(self.times.len() * (xs.len() + xs.len() / d));
        for &t in &self.times {
            for x in xs.chunks(d) {
                out.push(t);
                out.extend_from_slice(x);
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.num_spatial() * self.times.len().max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn describe(&self) -> String {
        let d = ProblemSpec::new(self.problem).spatial_dim();
        let space = vec![self.per_axis.to_string(); d].join("x");
        if self.times.is_empty() {
            space
        } else {
            format!("{space}@{}t", self.times.len())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundTruthKind {
    Analytic,
    /// Implicit Euler on a finer mesh and time grid.
    FineFem { n: usize, dt: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub problem: ProblemId,
    pub kind: GroundTruthKind,
    pub grid: EvalGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheMeta {
    schema: String,
    truth: GroundTruth,
    len: usize,
    sha256: String,
}

/// Where ground truths are cached: `$PDE_ARENA_CACHE`, else `./pde-arena-cache`.
pub fn default_cache_dir() -> PathBuf {
    std::env::var_os(CACHE_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("pde-arena-cache"))
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn encode_values(v: &[f64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn decode_values(b: &[u8]) -> Option<Vec<f64>> {
    if b.len() % 8 != 0 {
        return None;
    }
    Some(b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

/// Values of each snapshot on the grid; the modulus for complex states.
fn fem_snapshot_values(states: &[EvolutionState], xs: &[f64]) -> Result<(Vec<f64>, Duration)> {
    let mut out = Vec::new();
    let mut elapsed = Duration::ZERO;
    for s in states {
        let mut parts = Vec::with_capacity(s.fields.len());
        for f in &s.fields {
            let (v, t) = f.evaluate(xs)?;
            elapsed += t;
            parts.push(v);
        }
        match parts.as_slice() {
            [re] => out.extend_from_slice(re),
            [re, im] => out.extend(re.iter().zip(im).map(|(r, i)| r.hypot(*i))),
            _ => return Err(Error::invalid("state must have one or two fields")),
        }
    }
    Ok((out, elapsed))
}

impl GroundTruth {
    pub fn analytic(problem: ProblemId, grid: EvalGrid) -> Result<Self> {
        if !problem.is_poisson() {
            return Err(Error::invalid(format!("{problem} has no closed-form solution")));
        }
        Ok(GroundTruth { problem, kind: GroundTruthKind::Analytic, grid })
    }

    pub fn fine_fem(problem: ProblemId, res: FineResolution, grid: EvalGrid) -> Result<Self> {
        if problem.is_poisson() {
            return Err(Error::invalid(format!("{problem} uses its closed-form solution")));
        }
        Ok(GroundTruth { problem, kind: GroundTruthKind::FineFem { n: res.n, dt: res.dt }, grid })
    }

    pub fn for_plan(plan: &RunPlan) -> Result<Self> {
        let grid = EvalGrid::for_plan(plan)?;
        match plan.ground_truth {
            None => GroundTruth::analytic(plan.problem.id, grid),
            Some(res) => GroundTruth::fine_fem(plan.problem.id, res, grid),
        }
    }

    /// Cache key: hash of the problem, resolution and grid.
    pub fn key(&self) -> Result<String> {
        let text = serde_json::to_string(&(SCHEMA_VERSION, self))?;
        Ok(sha_hex(text.as_bytes())[..16].to_string())
    }

    /// Computes the reference values without touching the cache.
    pub fn compute(&self) -> Result<Vec<f64>> {
        let p = ProblemSpec::new(self.problem);
        let xs = self.grid.spatial_points();
        match self.kind {
            GroundTruthKind::Analytic => {
                Ok(xs.chunks(p.spatial_dim()).map(|x| p.analytic(x).expect("analytic problem")).collect())
            }
            GroundTruthKind::FineFem { n, dt } => {
                let tg = p.time_grid(dt)?;
                let mesh = Arc::new(Mesh::for_box(n, p.domain.clone())?);
                log::info!("building {} reference: n = {n}, {} implicit steps", p.id, tg.steps);
                let (states, _) = run_evolution(&p, mesh, tg.dt(), p.horizon, Scheme::Implicit, &self.grid.times)?;
                Ok(fem_snapshot_values(&states, &xs)?.0)
            }
        }
    }

    fn paths(&self, root: &Path) -> Result<(PathBuf, PathBuf)> {
        let dir = root.join("gt").join(self.problem.as_str());
        let key = self.key()?;
        Ok((dir.join(format!("{key}.bin")), dir.join(format!("{key}.meta.json"))))
    }

    /// Reads cached values; `Ok(None)` if absent, an error if corrupted.
    pub fn load(&self, root: &Path) -> Result<Option<Vec<f64>>> {
        let (bin, meta_path) = self.paths(root)?;
        if !bin.exists() || !meta_path.exists() {
            return Ok(None);
        }
        let corrupt = |reason: String| Error::CacheCorrupt { path: bin.clone(), reason };
        let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: CacheMeta = serde_json::from_str(&meta_text).map_err(|e| corrupt(format!("unreadable metadata: {e}")))?;
        let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        if sha_hex(&bytes) != meta.sha256 {
            return Err(corrupt("content hash mismatch".into()));
        }
        if meta.truth != *self {
            return Err(corrupt("metadata describes a different ground truth".into()));
        }
        let values = decode_values(&bytes).ok_or_else(|| corrupt("truncated value file".into()))?;
        if values.len() != meta.len || values.len() != self.grid.len() {
            return Err(corrupt(format!("expected {} values, found {}", self.grid.len(), values.len())));
        }
        Ok(Some(values))
    }

    pub fn store(&self, root: &Path, values: &[f64]) -> Result<PathBuf> {
        let (bin, meta_path) = self.paths(root)?;
        let dir = bin.parent().expect("cache file has a parent");
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let bytes = encode_values(values);
        let meta = CacheMeta { schema: SCHEMA_VERSION.into(), truth: self.clone(), len: values.len(), sha256: sha_hex(&bytes) };
        fs::write(&bin, &bytes).map_err(|e| Error::io(&bin, e))?;
        fs::write(&meta_path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&meta_path, e))?;
        Ok(bin)
    }

    /// Cached values if present, otherwise computes and caches them.
    /// Analytic truths are never cached.
    pub fn values(&self, cache: Option<&Path>) -> Result<Vec<f64>> {
        if self.kind == GroundTruthKind::Analytic {
            return self.compute();
        }
        if let Some(root) = cache {
            if let Some(v) = self.load(root)? {
                return Ok(v);
            }
        }
        let v = self.compute()?;
        if let Some(root) = cache {
            self.store(root, &v)?;
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Fem,
    Pinn,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Fem => "fem",
            Method::Pinn => "pinn",
        }
    }
}

/// One benchmarked configuration.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum RunConfig {
    Fem { n: usize },
    Pinn { arch: Vec<usize> },
}

impl RunConfig {
    pub fn method(&self) -> Method {
        match self {
            RunConfig::Fem { .. } => Method::Fem,
            RunConfig::Pinn { .. } => Method::Pinn,
        }
    }

    pub fn label(&self) -> String {
        match self {
            RunConfig::Fem { n } => format!("n={n}"),
            RunConfig::Pinn { arch } => {
                format!("[{}]", arch.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","))
            }
        }
    }
}

/// One row of results. Numeric fields are `None` when the run failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub schema: String,
    pub problem: ProblemId,
    pub method: Method,
    pub config: String,
    pub scale: Scale,
    pub eval_grid: String,
    /// Mean over repeats, seconds.
    pub solve_time_s: Option<f64>,
    pub eval_time_s: Option<f64>,
    pub l2_rel_error: Option<f64>,
    pub solve_times_s: Vec<f64>,
    pub eval_times_s: Vec<f64>,
    pub repeats: usize,
    pub seed: u64,
    pub timestamp: u64,
    pub machine: String,
    pub device: String,
    /// False when runs shared the machine, so times are not comparable.
    pub timing_valid: bool,
    pub failure: Option<String>,
}

/// Host description stored with every record.
pub fn machine_descriptor() -> String {
    let model = fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| s.lines().find(|l| l.starts_with("model name")).and_then(|l| l.split(':').nth(1)).map(|m| m.trim().to_string()))
        .unwrap_or_else(|| "unknown cpu".into());
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!("{} {} / {model} / {threads} hw threads / {} rayon threads", std::env::consts::OS, std::env::consts::ARCH, rayon::current_num_threads())
}

fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Which runs to perform.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Selection {
    /// Empty means every problem in the manifest.
    pub problems: Vec<ProblemId>,
    /// Empty means both methods.
    pub methods: Vec<Method>,
    /// Restricts FEM runs to these mesh sizes when nonempty.
    pub fem_meshes: Vec<usize>,
    /// Restricts PINN runs to these architectures when nonempty.
    pub architectures: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub scale: Scale,
    pub repeats: usize,
    pub seed: u64,
    pub cache_dir: Option<PathBuf>,
    /// Run configurations concurrently; records are marked timing-invalid.
    pub parallel: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions { scale: Scale::Desk, repeats: 3, seed: 0, cache_dir: Some(default_cache_dir()), parallel: false }
    }
}

/// Values on the grid plus solve and evaluation times of one run.
pub struct RunResult {
    pub values: Vec<f64>,
    pub solve: Duration,
    pub eval: Duration,
}

/// Solves with FEM (semi-implicit Euler for evolution problems) and interpolates onto the grid.
pub fn run_fem(plan: &RunPlan, n: usize, grid: &EvalGrid) -> Result<RunResult> {
    let p = &plan.problem;
    let mesh = Arc::new(Mesh::for_box(n, p.domain.clone())?);
    let xs = grid.spatial_points();
    if p.is_evolution() {
        let dt = plan.dt.ok_or_else(|| Error::invalid("evolution plan without a time step"))?;
        let tg = p.time_grid(dt)?;
        let (states, solve) = run_evolution(p, mesh, tg.dt(), p.horizon, Scheme::SemiImplicit, &grid.times)?;
        let (values, eval) = fem_snapshot_values(&states, &xs)?;
        Ok(RunResult { values, solve, eval })
    } else {
        let (field, solve) = solve_stationary(p, mesh)?;
        let (values, eval) = field.evaluate(&xs)?;
        Ok(RunResult { values, solve, eval })
    }
}

/// Trains a PINN with the plan's schedule and evaluates it on the grid.
pub fn run_pinn(plan: &RunPlan, arch: &[usize], seed: u64, grid: &EvalGrid) -> Result<RunResult> {
    let p = &plan.problem;
    let mut cfg = TrainConfig::from_plan(plan, arch, seed);
    cfg.log_every = 1000;
    let out = train::<f64>(p, &cfg, None)?;
    let inputs = grid.network_inputs();
    let (raw, eval) = evaluate_pinn(&out.model, &inputs)?;
    let values = if p.output_dim() == 2 { raw.chunks(2).map(|h| h[0].hypot(h[1])).collect() } else { raw };
    Ok(RunResult { values, solve: out.train_time, eval })
}

fn run_one(plan: &RunPlan, cfg: &RunConfig, grid: &EvalGrid, truth: &[f64], opts: &BenchOptions) -> BenchRecord {
    let mut rec = BenchRecord {
        schema: SCHEMA_VERSION.into(),
        problem: plan.problem.id,
        method: cfg.method(),
        config: cfg.label(),
        scale: opts.scale,
        eval_grid: grid.describe(),
        solve_time_s: None,
        eval_time_s: None,
        l2_rel_error: None,
        solve_times_s: Vec::new(),
        eval_times_s: Vec::new(),
        repeats: opts.repeats.max(1),
        seed: opts.seed,
        timestamp: now_secs(),
        machine: machine_descriptor(),
        device: "cpu".into(),
        timing_valid: !opts.parallel,
        failure: None,
    };
    for r in 0..rec.repeats {
        let res = match cfg {
            RunConfig::Fem { n } => run_fem(plan, *n, grid),
            RunConfig::Pinn { arch } => run_pinn(plan, arch, opts.seed, grid),
        };
        let res = match res {
            Ok(v) => v,
            Err(e) => {
                log::warn!("{} {} failed: {e}", plan.problem.id, cfg.label());
                rec.failure = Some(e.to_string());
                return rec;
            }
        };
        if r == 0 {
            match l2_relative_error(&res.values, truth) {
                Ok(err) if err.is_finite() => rec.l2_rel_error = Some(err),
                Ok(err) => {
                    rec.failure = Some(format!("non-finite error {err}"));
                    return rec;
                }
                Err(e) => {
                    rec.failure = Some(e.to_string());
                    return rec;
                }
            }
        }
        rec.solve_times_s.push(res.solve.as_secs_f64());
        rec.eval_times_s.push(res.eval.as_secs_f64());
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    rec.solve_time_s = Some(mean(&rec.solve_times_s));
    rec.eval_time_s = Some(mean(&rec.eval_times_s));
    log::info!(
        "{} {} {}: error {:.3e}, solve {:.3e} s, eval {:.3e} s",
        rec.problem,
        rec.method.as_str(),
        rec.config,
        rec.l2_rel_error.unwrap_or(f64::NAN),
        rec.solve_time_s.unwrap_or(f64::NAN),
        rec.eval_time_s.unwrap_or(f64::NAN)
    );
    rec
}

/// Configurations selected for one plan, FEM first.
pub fn configs_for(plan: &RunPlan, sel: &Selection) -> Vec<RunConfig> {
    let wants = |m: Method| sel.methods.is_empty() || sel.methods.contains(&m);
    let mut out = Vec::new();
    if wants(Method::Fem) {
        for &n in &plan.fem_meshes {
            if sel.fem_meshes.is_empty() || sel.fem_meshes.contains(&n) {
                out.push(RunConfig::Fem { n });
            }
        }
        for &n in &sel.fem_meshes {
            if !plan.fem_meshes.contains(&n) {
                out.push(RunConfig::Fem { n });
            }
        }
    }
    if wants(Method::Pinn) {
        for a in &plan.architectures {
            if sel.architectures.is_empty() || sel.architectures.contains(a) {
                out.push(RunConfig::Pinn { arch: a.clone() });
            }
        }
        for a in &sel.architectures {
            if !plan.architectures.contains(a) {
                out.push(RunConfig::Pinn { arch: a.clone() });
            }
        }
    }
    out
}

/// Runs every selected configuration against its ground truth.
///
/// A failing run yields a record with `failure` set; only an unusable
/// manifest or ground truth aborts the batch.
pub fn run_benchmark(manifest: &Manifest, sel: &Selection, opts: &BenchOptions) -> Result<Vec<BenchRecord>> {
    manifest.validate()?;
    let problems: Vec<ProblemId> =
        if sel.problems.is_empty() { manifest.problems.iter().map(|e| e.id).collect() } else { sel.problems.clone() };
    let mut records = Vec::new();
    for id in problems {
        let plan = manifest.plan(id, opts.scale)?;
        let truth_spec = GroundTruth::for_plan(&plan)?;
        let truth = truth_spec.values(opts.cache_dir.as_deref())?;
        let grid = &truth_spec.grid;
        let configs = configs_for(&plan, sel);
        if opts.parallel {
            records.par_extend(configs.par_iter().map(|c| run_one(&plan, c, grid, &truth, opts)));
        } else {
            records.extend(configs.iter().map(|c| run_one(&plan, c, grid, &truth, opts)));
        }
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Both,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "both" => Ok(ReportFormat::Both),
            _ => Err(Error::invalid(format!("unknown format `{s}`"))),
        }
    }
}

pub const CSV_COLUMNS: [&str; 8] = ["problem", "method", "config", "solve_time_s", "eval_time_s", "l2_rel_error", "repeats", "seed"];

pub const PARETO_COLUMNS: [&str; 9] = [
    "problem",
    "method",
    "config",
    "fem_solve_time_s",
    "pinn_train_time_s",
    "eval_time_s",
    "l2_rel_error",
    "pareto_solve",
    "pareto_eval",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

pub fn write_records_csv(records: &[BenchRecord], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in records {
        w.write_record([
            r.problem.as_str().to_string(),
            r.method.as_str().to_string(),
            r.config.clone(),
            opt(r.solve_time_s),
            opt(r.eval_time_s),
            opt(r.l2_rel_error),
            r.repeats.to_string(),
            r.seed.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn records_to_json(records: &[BenchRecord]) -> Result<String> {
    Ok(serde_json::to_string_pretty(records)?)
}

pub fn records_from_json(text: &str) -> Result<Vec<BenchRecord>> {
    let recs: Vec<BenchRecord> = serde_json::from_str(text)?;
    if let Some(r) = recs.iter().find(|r| r.schema != SCHEMA_VERSION) {
        return Err(Error::invalid(format!("unsupported record schema `{}`", r.schema)));
    }
    Ok(recs)
}

/// One row per (problem, method, config), averaged over records of that key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoRow {
    pub problem: ProblemId,
    pub method: Method,
    pub config: String,
    pub fem_solve_time_s: Option<f64>,
    pub pinn_train_time_s: Option<f64>,
    pub eval_time_s: f64,
    pub l2_rel_error: f64,
    /// Not dominated in (solution or training time, error) within the problem.
    pub pareto_solve: bool,
    /// Not dominated in (evaluation time, error) within the problem.
    pub pareto_eval: bool,
}

impl ParetoRow {
    pub fn solve_time(&self) -> f64 {
        self.fem_solve_time_s.or(self.pinn_train_time_s).unwrap_or(f64::NAN)
    }
}

fn dominated(points: &[(f64, f64)], i: usize) -> bool {
    let (t, e) = points[i];
    points.iter().enumerate().any(|(j, &(tj, ej))| j != i && tj <= t && ej <= e && (tj < t || ej < e))
}

/// Time-versus-error table over the successful records.
pub fn pareto_table(records: &[BenchRecord]) -> Vec<ParetoRow> {
    let mut groups: BTreeMap<(ProblemId, Method, String), Vec<&BenchRecord>> = BTreeMap::new();
    for r in records {
        if let (Some(_), Some(_), Some(_)) = (r.solve_time_s, r.eval_time_s, r.l2_rel_error) {
            groups.entry((r.problem, r.method, r.config.clone())).or_default().push(r);
        }
    }
    let mut rows: Vec<ParetoRow> = groups
        .into_iter()
        .map(|((problem, method, config), rs)| {
            let n = rs.len() as f64;
            let avg = |f: fn(&BenchRecord) -> Option<f64>| rs.iter().filter_map(|r| f(r)).sum::<f64>() / n;
            let solve = avg(|r| r.solve_time_s);
            ParetoRow {
                problem,
                method,
                config,
                fem_solve_time_s: (method == Method::Fem).then_some(solve),
                pinn_train_time_s: (method == Method::Pinn).then_some(solve),
                eval_time_s: avg(|r| r.eval_time_s),
                l2_rel_error: avg(|r| r.l2_rel_error),
                pareto_solve: false,
                pareto_eval: false,
            }
        })
        .collect();
    rows.sort_by(|a, b| (a.problem, a.method).cmp(&(b.problem, b.method)).then(a.solve_time().total_cmp(&b.solve_time())));
    let problems: Vec<ProblemId> = rows.iter().map(|r| r.problem).collect();
    for pid in problems.iter().copied().collect::<std::collections::BTreeSet<_>>() {
        let idx: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].problem == pid).collect();
        let solve_pts: Vec<(f64, f64)> = idx.iter().map(|&i| (rows[i].solve_time(), rows[i].l2_rel_error)).collect();
        let eval_pts: Vec<(f64, f64)> = idx.iter().map(|&i| (rows[i].eval_time_s, rows[i].l2_rel_error)).collect();
        for (k, &i) in idx.iter().enumerate() {
            rows[i].pareto_solve = !dominated(&solve_pts, k);
            rows[i].pareto_eval = !dominated(&eval_pts, k);
        }
    }
    rows
}

pub fn write_pareto_csv(rows: &[ParetoRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PARETO_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.problem.as_str().to_string(),
            r.method.as_str().to_string(),
            r.config.clone(),
            opt(r.fem_solve_time_s),
            opt(r.pinn_train_time_s),
            format!("{:e}", r.eval_time_s),
            format!("{:e}", r.l2_rel_error),
            r.pareto_solve.to_string(),
            r.pareto_eval.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Writes `records.{csv,json}` and `pareto.{csv,json}` into `dir`; returns the written paths.
pub fn emit_report(records: &[BenchRecord], dir: &Path, format: ReportFormat) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::invalid("no records to report"));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let pareto = pareto_table(records);
    let mut written = Vec::new();
    let create = |name: &str| -> Result<(PathBuf, fs::File)> {
        let path = dir.join(name);
        let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok((path, f))
    };
    if matches!(format, ReportFormat::Csv | ReportFormat::Both) {
        let (path, f) = create("records.csv")?;
        write_records_csv(records, f)?;
        written.push(path);
        let (path, f) = create("pareto.csv")?;
        write_pareto_csv(&pareto, f)?;
        written.push(path);
    }
    if matches!(format, ReportFormat::Json | ReportFormat::Both) {
        let path = dir.join("records.json");
        fs::write(&path, records_to_json(records)?).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        let path = dir.join("pareto.json");
        fs::write(&path, serde_json::to_string_pretty(&pareto)?).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_metric_examples() {
        assert_eq!(l2_relative_error(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(l2_relative_error(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 1.0);
        assert_eq!(l2_relative_error(&[1.0, 1.0], &[2.0, 2.0]).unwrap(), 0.5);
        assert!(l2_relative_error(&[1.0], &[0.0]).is_err());
        assert!(l2_relative_error(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn grids() {
        let g = EvalGrid::new(&ProblemSpec::new(ProblemId::Poisson1d), 512).unwrap();
        let xs = g.spatial_points();
        assert_eq!(xs.len(), 512);
        assert_eq!((xs[0], xs[511]), (0.0, 1.0));
        let g = EvalGrid::new(&ProblemSpec::new(ProblemId::Schrodinger2d), 8).unwrap();
        assert_eq!(g.times.len(), 4);
        assert_eq!(g.len(), 256);
        assert_eq!(g.network_inputs().len(), 256 * 3);
        assert_eq!(g.describe(), "8x8@4t");
    }

    #[test]
    fn analytic_truth_points() {
        let g = EvalGrid::new(&ProblemSpec::new(ProblemId::Poisson1d), 3).unwrap();
        let v = GroundTruth::analytic(ProblemId::Poisson1d, g).unwrap().values(None).unwrap();
        assert_eq!(v[2], (-1.0f64).exp());
        let g = EvalGrid::new(&ProblemSpec::new(ProblemId::Poisson3d), 3).unwrap();
        let v = GroundTruth::analytic(ProblemId::Poisson3d, g).unwrap().values(None).unwrap();
        assert!((v[13] - 1.0).abs() < 1e-15);
        assert!(GroundTruth::analytic(ProblemId::AllenCahn1d, EvalGrid::new(&ProblemSpec::new(ProblemId::AllenCahn1d), 3).unwrap()).is_err());
    }

    fn record(problem: ProblemId, method: Method, config: &str, solve: f64, eval: f64, err: f64) -> BenchRecord {
        BenchRecord {
            schema: SCHEMA_VERSION.into(),
            problem,
            method,
            config: config.into(),
            scale: Scale::Desk,
            eval_grid: "4".into(),
            solve_time_s: Some(solve),
            eval_time_s: Some(eval),
            l2_rel_error: Some(err),
            solve_times_s: vec![solve],
            eval_times_s: vec![eval],
            repeats: 1,
            seed: 0,
            timestamp: 0,
            machine: "test".into(),
            device: "cpu".into(),
            timing_valid: true,
            failure: None,
        }
    }

    #[test]
    fn pareto_fronts() {
        let recs = vec![
            record(ProblemId::Poisson2d, Method::Fem, "n=50", 0.01, 0.001, 1e-3),
            record(ProblemId::Poisson2d, Method::Fem, "n=100", 0.05, 0.002, 2e-4),
            record(ProblemId::Poisson2d, Method::Pinn, "[20,1]", 10.0, 0.0001, 1e-2),
            record(ProblemId::Poisson2d, Method::Pinn, "[20,20,1]", 20.0, 0.0005, 5e-2),
        ];
        let rows = pareto_table(&recs);
        assert_eq!(rows.len(), 4);
        let by = |c: &str| rows.iter().find(|r| r.config == c).unwrap();
        assert!(by("n=50").pareto_solve && by("n=100").pareto_solve);
        assert!(!by("[20,1]").pareto_solve && by("[20,1]").pareto_eval);
        assert!(!by("[20,20,1]").pareto_eval);
        assert!(by("n=50").fem_solve_time_s.is_some() && by("n=50").pinn_train_time_s.is_none());
        assert!(by("[20,1]").pinn_train_time_s.is_some() && by("[20,1]").fem_solve_time_s.is_none());
    }

    #[test]
    fn cache_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let p = ProblemSpec::new(ProblemId::AllenCahn1d);
        let gt = GroundTruth::fine_fem(ProblemId::AllenCahn1d, FineResolution { n: 64, dt: 0.01 }, EvalGrid::new(&p, 9).unwrap()).unwrap();
        assert!(gt.load(dir.path()).unwrap().is_none());
        let v = gt.values(Some(dir.path())).unwrap();
        assert_eq!(gt.load(dir.path()).unwrap().unwrap(), v);
        let (bin, _) = gt.paths(dir.path()).unwrap();
        assert!(bin.starts_with(dir.path().join("gt").join("allen_cahn1d")));
        let mut bytes = fs::read(&bin).unwrap();
        bytes[3] ^= 1;
        fs::write(&bin, bytes).unwrap();
        assert!(matches!(gt.load(dir.path()), Err(Error::CacheCorrupt { .. })));
    }
}
