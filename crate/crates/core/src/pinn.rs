//! Physics-informed losses for the six problems and the training schedule.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{loss_gradient, loss_value, Jet, JetOrder, LossTerm, Mlp};
use crate::optim::{lbfgs_minimize, AdamState, LbfgsOptions, Termination};
use crate::problems::{CollocationCounts, ProblemId, ProblemSpec, RunPlan};
use crate::sampling::{lhs_sample, SampleBatch};
use crate::scalar::Real;

/// Space-time box `(t, x, ...)` of the network inputs.
fn input_box(p: &ProblemSpec) -> (Vec<f64>, Vec<f64>) {
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    if p.is_evolution() {
        lo.push(0.0);
        hi.push(p.horizon);
    }
    lo.extend_from_slice(&p.domain.lo);
    hi.extend_from_slice(&p.domain.hi);
    (lo, hi)
}

/// Points per boundary group.
pub fn boundary_group_size(id: ProblemId) -> usize {
    match id {
        ProblemId::Poisson1d | ProblemId::AllenCahn1d | ProblemId::Schrodinger1d => 2,
        ProblemId::Poisson2d | ProblemId::Schrodinger2d => 4,
        ProblemId::Poisson3d => 6,
    }
}

/// Draws a fresh collocation batch with the given counts.
///
/// The 1D Poisson boundary is the fixed pair `x = 0, x = 1`, so its batch
/// always holds a single boundary group.
pub fn sample_batch<R: rand::Rng + ?Sized>(p: &ProblemSpec, counts: CollocationCounts, rng: &mut R) -> Result<SampleBatch> {
    let (lo, hi) = input_box(p);
    let d = lo.len();
    let sd = p.spatial_dim();
    let interior = lhs_sample(counts.interior, &lo, &hi, rng)?;
    let (a, b) = (p.domain.lo.clone(), p.domain.hi.clone());
    let mut boundary = Vec::new();
    match p.id {
        ProblemId::Poisson1d => boundary.extend([a[0], b[0]]),
        ProblemId::Poisson2d | ProblemId::Poisson3d => {
            let s = lhs_sample(counts.boundary, &a, &b, rng)?;
            for q in s.chunks(sd) {
                for upper in [false, true] {
                    for axis in 0..sd {
                        let mut pt = q.to_vec();
                        pt[axis] = if upper { b[axis] } else { a[axis] };
                        boundary.extend(pt);
                    }
                }
            }
            if p.id == ProblemId::Poisson2d {
                // Group order (0,y), (1,y), (x,0), (x,1).
                let mut reordered = Vec::with_capacity(boundary.len());
                for g in boundary.chunks(4 * sd) {
                    for k in [0, 2, 1, 3] {
                        reordered.extend_from_slice(&g[k * sd..(k + 1) * sd]);
                    }
                }
                boundary = reordered;
            }
        }
        ProblemId::AllenCahn1d | ProblemId::Schrodinger1d => {
            let ts = lhs_sample(counts.boundary, &[0.0], &[p.horizon], rng)?;
            for t in ts {
                boundary.extend([t, a[0], t, b[0]]);
            }
        }
        ProblemId::Schrodinger2d => {
            let s = lhs_sample(counts.boundary, &lo, &hi, rng)?;
            for q in s.chunks(3) {
                let (t, x, y) = (q[0], q[1], q[2]);
                boundary.extend([t, a[0], y, t, b[0], y, t, x, a[1], t, x, b[1]]);
            }
        }
    }
    let initial = if p.is_evolution() { lhs_sample(counts.initial, &a, &b, rng)? } else { Vec::new() };
    Ok(SampleBatch { input_dim: d, interior, boundary, boundary_group: boundary_group_size(p.id), initial, spatial_dim: sd })
}

fn to_t<T: Real>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::lit(x)).collect()
}

/// Which terms of the loss to include.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Part {
    Full,
    InitialOnly,
}

/// Builds the loss terms of `p` on `batch` and hands them to `f`.
fn with_terms<T: Real, R>(p: &ProblemSpec, batch: &SampleBatch, part: Part, f: impl FnOnce(&[LossTerm<'_, T>]) -> R) -> Result<R> {
    let d = p.input_dim();
    if batch.input_dim != d || batch.spatial_dim != p.spatial_dim() {
        return Err(Error::DimensionMismatch { expected: d, got: batch.input_dim });
    }
    if batch.boundary_group != boundary_group_size(p.id) {
        return Err(Error::invalid("boundary grouping does not match the problem"));
    }
    let t0 = usize::from(p.is_evolution());
    let interior: Vec<T> = to_t(&batch.interior);
    let boundary: Vec<T> = to_t(&batch.boundary);
    let initial: Vec<T> = to_t(&batch.initial_with_time());
    let nf = batch.interior_count();
    let ng = batch.boundary_count();
    let nh = batch.initial_count();
    let inv = |n: usize| T::one() / T::from_usize_lossy(n.max(1));
    let (wf, wg, wh) = (inv(nf), inv(ng), T::lit(p.ic_weight) * inv(nh));

    // Per-point targets that depend on coordinates.
    let sources: Vec<T> =
        batch.interior.chunks(d).map(|x| T::lit(p.source(&x[t0..]))).collect();
    let ic: Vec<[T; 2]> = batch
        .initial
        .chunks(batch.spatial_dim.max(1))
        .map(|x| {
            let v = p.initial_condition(x);
            [T::lit(v[0]), T::lit(v[1])]
        })
        .collect();
    let eps = T::lit(p.epsilon);
    let diff = T::lit(p.diffusion);
    let two = T::lit(2.0);
    let right = T::lit((-1.0f64).exp());
    let imag_ic = p.id == ProblemId::Schrodinger1d || p.imag_ic_term;

    let poisson_interior = |g: usize, j: &[Jet<T>], a: &mut [Jet<T>]| {
        let r = j[0].laplacian(0, 0) - sources[g];
        for k in 0..d {
            a[0].second[k] = two * r * wf;
        }
        r * r * wf
    };
    let allen_cahn_interior = |_: usize, j: &[Jet<T>], a: &mut [Jet<T>]| {
        let u = j[0].value[0];
        let react = u * (T::one() - u) * (T::one() - two * u);
        let dreact = T::one() - T::lit(6.0) * u + T::lit(6.0) * u * u;
        let r = j[0].d(0, 0) - eps * j[0].laplacian(0, 1) + two / eps * react;
        let s = two * r * wf;
        a[0].value[0] = s * two / eps * dreact;
        a[0].grad[0] = s;
        for k in 1..d {
            a[0].second[k] = -eps * s;
        }
        r * r * wf
    };
    let schrodinger_interior = |_: usize, j: &[Jet<T>], a: &mut [Jet<T>]| {
        let (re, im) = (j[0].value[0], j[0].value[1]);
        let w = re * re + im * im;
        let r1 = j[0].d(1, 0) - diff * j[0].laplacian(0, 1) - w * re;
        let r2 = j[0].d(0, 0) + diff * j[0].laplacian(1, 1) + w * im;
        let (s1, s2) = (two * r1 * wf, two * r2 * wf);
        let three = T::lit(3.0);
        a[0].value[0] = -s1 * (three * re * re + im * im) + s2 * two * re * im;
        a[0].value[1] = -s1 * two * re * im + s2 * (re * re + three * im * im);
        a[0].grad[d] = s1;
        a[0].grad[0] = s2;
        for k in 1..d {
            a[0].second[k] = -diff * s1;
            a[0].second[d + k] = diff * s2;
        }
        (r1 * r1 + r2 * r2) * wf
    };

    let poisson1d_boundary = |_: usize, j: &[Jet<T>], a: &mut [Jet<T>]| {
        let (u0, u1) = (j[0].value[0], j[1].value[0] - right);
        a[0].value[0] = two * u0 * wg;
        a[1].value[0] = two * u1 * wg;
        (u0 * u0 + u1 * u1) * wg
    };
    let poisson2d_boundary = |_: usize, j: &[Jet<T>], a: &mut [Jet<T>]| {
        // (0,y) and (1,y) carry -u_x and u_x; (x,0) is Dirichlet; (x,1) carries u_y.
        let (n0, n1, u, n3) = (j[0].d(0, 0), j[1].d(0, 0), j[2].value[0], j[3].d(0, 1));
        a[0].grad[0] = two * n0 * wg;
        a[1].grad[0] = two * n1 * wg;
        a[2].value[0] = two * u * wg;
        a[3].grad[1] = two * n3 * wg;
        (n0 * n0 + n1 * n1 + u * u + n3 * n3) * wg
    };
    let dirichlet_zero = |_: usize, j: &[Jet<T>], a: &mut [Jet<T>]| {
        let mut s = T::zero();
        for (jk, ak) in j.iter().zip(a.iter_mut()) {
            let u = jk.value[0];
            ak.value[0] = two * u * wg;
            s += u * u;
        }
        s * wg
    };
    let periodic_values = |_: usize, j: &[Jet<T>], a: &mut [Jet<T>]| {
        let diff = j[0].value[0] - j[1].value[0];
        a[0].value[0] = two * diff * wg;
        a[1].value[0] = -two * diff * wg;
        diff * diff * wg
    };
    // Pairs (lower, upper) with the coordinate whose derivative must match.
    let schrodinger_pairs: &[(usize, usize, usize)] = if p.id == ProblemId::Schrodinger1d { &[(0, 1, 1)] } else { &[(0, 1, 1), (2, 3, 2)] };
    let periodic_complex = |_: usize, j: &[Jet<T>], a: &mut [Jet<T>]| {
        let mut s = T::zero();
        for &(l, u, k) in schrodinger_pairs {
            for o in 0..2 {
                let dv = j[l].value[o] - j[u].value[o];
                a[l].value[o] = two * dv * wg;
                a[u].value[o] = -two * dv * wg;
                let dd = j[l].d(o, k) - j[u].d(o, k);
                a[l].grad[o * d + k] = two * dd * wg;
                a[u].grad[o * d + k] = -two * dd * wg;
                s += dv * dv + dd * dd;
            }
        }
        s * wg
    };
    let initial_term = |g: usize, j: &[Jet<T>], a: &mut [Jet<T>]| {
        let r = j[0].value[0] - ic[g][0];
        a[0].value[0] = two * r * wh;
        let mut s = r * r;
        if p.id.is_schrodinger() && imag_ic {
            let q = j[0].value[1] - ic[g][1];
            a[0].value[1] = two * q * wh;
            s += q * q;
        }
        s * wh
    };

    type Eval<'e, T> = &'e (dyn Fn(usize, &[Jet<T>], &mut [Jet<T>]) -> T + Sync);
    let (interior_eval, boundary_eval, boundary_order): (Eval<T>, Eval<T>, JetOrder) = match p.id {
        ProblemId::Poisson1d => (&poisson_interior, &poisson1d_boundary, JetOrder::Value),
        ProblemId::Poisson2d => (&poisson_interior, &poisson2d_boundary, JetOrder::First),
        ProblemId::Poisson3d => (&poisson_interior, &dirichlet_zero, JetOrder::Value),
        ProblemId::AllenCahn1d => (&allen_cahn_interior, &periodic_values, JetOrder::Value),
        ProblemId::Schrodinger1d | ProblemId::Schrodinger2d => (&schrodinger_interior, &periodic_complex, JetOrder::First),
    };
    let gs = batch.boundary_group;
    let mut terms = Vec::new();
    if part == Part::Full {
        terms.push(LossTerm { name: "interior", points: &interior, group_size: 1, order: JetOrder::Second, eval: interior_eval });
        terms.push(LossTerm { name: "boundary", points: &boundary, group_size: gs, order: boundary_order, eval: boundary_eval });
    }
    if p.is_evolution() {
        terms.push(LossTerm { name: "initial", points: &initial, group_size: 1, order: JetOrder::Value, eval: &initial_term });
    }
    terms.retain(|t| !t.points.is_empty());
    Ok(f(&terms))
}

/// PDE residual at one interior point: one component, or `(r1, r2)` for
/// the Schrödinger problems with `r1 = I_t - d ΔR - |h|² R` and
/// `r2 = R_t + d ΔI + |h|² I`.
pub fn pde_residual<T: Real>(p: &ProblemSpec, m: &Mlp<T>, point: &[f64]) -> Result<Vec<T>> {
    if point.len() != p.input_dim() || m.input_dim() != p.input_dim() {
        return Err(Error::DimensionMismatch { expected: p.input_dim(), got: point.len() });
    }
    let x: Vec<T> = to_t(point);
    residual_from_jet(p, &m.jet2(&x)?, point)
}

/// The residual formula applied to any jet of a candidate solution at `point`.
pub fn residual_from_jet<T: Real>(p: &ProblemSpec, j: &Jet<T>, point: &[f64]) -> Result<Vec<T>> {
    if j.dim() != p.input_dim() || j.value.len() != p.output_dim() {
        return Err(Error::DimensionMismatch { expected: p.input_dim(), got: j.dim() });
    }
    let t0 = usize::from(p.is_evolution());
    Ok(match p.id {
        ProblemId::Poisson1d | ProblemId::Poisson2d | ProblemId::Poisson3d => {
            vec![j.laplacian(0, 0) - T::lit(p.source(point))]
        }
        ProblemId::AllenCahn1d => {
            let (u, eps) = (j.value[0], T::lit(p.epsilon));
            let react = u * (T::one() - u) * (T::one() - T::lit(2.0) * u);
            vec![j.d(0, 0) - eps * j.laplacian(0, t0) + T::lit(2.0) / eps * react]
        }
        ProblemId::Schrodinger1d | ProblemId::Schrodinger2d => {
            let (re, im) = (j.value[0], j.value[1]);
            let w = re * re + im * im;
            let dc = T::lit(p.diffusion);
            vec![j.d(1, 0) - dc * j.laplacian(0, t0) - w * re, j.d(0, 0) + dc * j.laplacian(1, t0) + w * im]
        }
    })
}

/// Full loss: mean squared residual plus the boundary and initial terms.
pub fn total_loss<T: Real>(p: &ProblemSpec, m: &Mlp<T>, batch: &SampleBatch) -> Result<T> {
    with_terms(p, batch, Part::Full, |terms| loss_value(m, terms))?
}

/// Full loss and its parameter gradient.
pub fn total_loss_gradient<T: Real>(p: &ProblemSpec, m: &Mlp<T>, batch: &SampleBatch) -> Result<(T, Vec<T>)> {
    with_terms(p, batch, Part::Full, |terms| loss_gradient(m, terms))?
}

/// The weighted initial-condition term alone (Allen–Cahn pretraining).
pub fn ic_only_loss<T: Real>(p: &ProblemSpec, m: &Mlp<T>, batch: &SampleBatch) -> Result<T> {
    Ok(ic_only_loss_gradient_impl(p, m, batch, false)?.0)
}

pub fn ic_only_loss_gradient<T: Real>(p: &ProblemSpec, m: &Mlp<T>, batch: &SampleBatch) -> Result<(T, Vec<T>)> {
    ic_only_loss_gradient_impl(p, m, batch, true)
}

fn ic_only_loss_gradient_impl<T: Real>(p: &ProblemSpec, m: &Mlp<T>, batch: &SampleBatch, grad: bool) -> Result<(T, Vec<T>)> {
    if p.id != ProblemId::AllenCahn1d {
        return Err(Error::invalid(format!("initial-condition pretraining is defined for allen_cahn1d, not {}", p.id)));
    }
    with_terms(p, batch, Part::InitialOnly, |terms| {
        if grad {
            loss_gradient(m, terms)
        } else {
            loss_value(m, terms).map(|v| (v, Vec::new()))
        }
    })?
}

/// Network outputs at `points` (flat, `input_dim` per point) and the wall time taken.
pub fn evaluate_pinn<T: Real>(m: &Mlp<T>, points: &[T]) -> Result<(Vec<T>, Duration)> {
    let start = Instant::now();
    let v = m.forward_batch(points)?;
    Ok((v, start.elapsed()))
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub epoch: usize,
    pub loss: f64,
    pub wall_time: f64,
}

/// Optimizer schedule for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub arch: Vec<usize>,
    pub seed: u64,
    pub adam_epochs: usize,
    pub ic_epochs: usize,
    pub learning_rate: f64,
    pub lbfgs_iters: usize,
    pub lbfgs_grad_tol: f64,
    pub counts: CollocationCounts,
    /// Keep one log line every this many epochs (the last epoch of each phase is always kept).
    pub log_every: usize,
}

impl TrainConfig {
    pub fn from_plan(plan: &RunPlan, arch: &[usize], seed: u64) -> Self {
        TrainConfig {
            arch: arch.to_vec(),
            seed,
            adam_epochs: plan.adam_epochs,
            ic_epochs: plan.ic_epochs,
            learning_rate: plan.learning_rate,
            lbfgs_iters: plan.lbfgs_iters,
            lbfgs_grad_tol: plan.lbfgs_grad_tol,
            counts: plan.problem.counts,
            log_every: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: Mlp<T>,
    /// Wall time of all Adam epochs and the L-BFGS phase.
    pub train_time: Duration,
    pub final_loss: f64,
    pub lbfgs_iterations: usize,
    pub lbfgs_termination: Option<Termination>,
    pub log: Vec<LogEntry>,
}

/// Runs the schedule: optional IC-only Adam phase, Adam on the full loss
/// with a fresh batch every epoch, then L-BFGS on one fixed batch.
///
/// Log lines are also written as JSON to `sink` when given.
pub fn train<T: Real>(p: &ProblemSpec, cfg: &TrainConfig, mut sink: Option<&mut dyn Write>) -> Result<TrainOutcome<T>> {
    let mut model = Mlp::<T>::init(p.input_dim(), &cfg.arch, cfg.seed)?;
    if model.output_dim() != p.output_dim() {
        return Err(Error::invalid(format!("{} needs {} outputs, architecture has {}", p.id, p.output_dim(), model.output_dim())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let start = Instant::now();
    let mut log = Vec::new();
    let every = cfg.log_every.max(1);
    let mut record = |epoch: usize, loss: f64, force: bool, log: &mut Vec<LogEntry>| -> Result<()> {
        if !force && epoch % every != 0 {
            return Ok(());
        }
        let e = LogEntry { epoch, loss, wall_time: start.elapsed().as_secs_f64() };
        if let Some(w) = sink.as_deref_mut() {
            serde_json::to_writer(&mut *w, &e)?;
            writeln!(w).map_err(|err| Error::io("<training log>", err))?;
        }
        log.push(e);
        Ok(())
    };
    let diverged = |epoch: usize, e: Error| match e {
        Error::NonFinite(_) => Error::Diverged { epoch, loss: f64::NAN },
        other => other,
    };

    let mut epoch = 0;
    let phases = [(cfg.ic_epochs, true), (cfg.adam_epochs, false)];
    for (count, ic_phase) in phases {
        if ic_phase && count > 0 && p.id != ProblemId::AllenCahn1d {
            return Err(Error::invalid("initial-condition pretraining is only defined for allen_cahn1d"));
        }
        let mut adam = AdamState::new(model.num_params(), T::lit(cfg.learning_rate));
        for k in 0..count {
            let batch = sample_batch(p, cfg.counts, &mut rng)?;
            let (loss, grad) = if ic_phase {
                ic_only_loss_gradient(p, &model, &batch)
            } else {
                total_loss_gradient(p, &model, &batch)
            }
            .map_err(|e| diverged(epoch, e))?;
            let lf = loss.as_f64();
            if !lf.is_finite() {
                return Err(Error::Diverged { epoch, loss: lf });
            }
            adam.step(model.params_mut(), &grad).map_err(|e| diverged(epoch, e))?;
            record(epoch, lf, k + 1 == count, &mut log)?;
            epoch += 1;
        }
    }

    let mut final_loss = log.last().map_or(f64::NAN, |e| e.loss);
    let mut lbfgs_iterations = 0;
    let mut lbfgs_termination = None;
    if cfg.lbfgs_iters > 0 {
        let batch = sample_batch(p, cfg.counts, &mut rng)?;
        let widths = model.widths().to_vec();
        let opts = LbfgsOptions { max_iter: cfg.lbfgs_iters, grad_tol: T::lit(cfg.lbfgs_grad_tol), ..Default::default() };
        let x0 = model.params().to_vec();
        let report = lbfgs_minimize(
            |x: &[T]| {
                let m = Mlp::from_params(widths.clone(), x.to_vec())?;
                match total_loss_gradient(p, &m, &batch) {
                    // Non-finite trial points are rejected by the line search.
                    Err(Error::NonFinite(_)) => Ok((T::infinity(), vec![T::zero(); x.len()])),
                    other => other,
                }
            },
            &x0,
            &opts,
        )
        .map_err(|e| diverged(epoch, e))?;
        model.set_params(&report.x)?;
        lbfgs_iterations = report.iterations;
        lbfgs_termination = Some(report.termination);
        final_loss = report.f.as_f64();
        epoch += report.iterations;
        record(epoch, final_loss, true, &mut log)?;
    }
    Ok(TrainOutcome { model, train_time: start.elapsed(), final_loss, lbfgs_iterations, lbfgs_termination, log })
}
