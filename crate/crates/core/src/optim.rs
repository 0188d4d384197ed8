//! Adam and L-BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::scalar::{axpy, dot, norm2, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub step: usize,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Real> AdamState<T> {
    /// Moments start at zero; `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
    pub fn new(n: usize, lr: T) -> Self {
        AdamState {
            lr,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            step: 0,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [T], grad: &[T]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::DimensionMismatch { expected: self.m.len(), got: grad.len().min(params.len()) });
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient entry {i} is {}", grad[i])));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions<T> {
    pub max_iter: usize,
    pub grad_tol: T,
    pub history: usize,
    /// Sufficient-decrease constant.
    pub c1: T,
    /// Curvature constant.
    pub c2: T,
    pub max_line_evals: usize,
}

impl<T: Real> Default for LbfgsOptions<T> {
    fn default() -> Self {
        LbfgsOptions { max_iter: 500, grad_tol: T::lit(1e-9), history: 10, c1: T::lit(1e-4), c2: T::lit(0.9), max_line_evals: 25 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct LbfgsReport<T> {
    pub x: Vec<T>,
    pub f: T,
    pub grad_norm: T,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

/// Curvature pairs kept by L-BFGS; every stored pair has `sᵀy > 0`.
#[derive(Debug, Clone)]
pub struct LbfgsState<T> {
    depth: usize,
    pairs: VecDeque<(Vec<T>, Vec<T>, T)>,
    pub skipped: usize,
}

impl<T: Real> LbfgsState<T> {
    pub fn new(depth: usize) -> Self {
        LbfgsState { depth: depth.max(1), pairs: VecDeque::new(), skipped: 0 }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&[T], &[T])> {
        self.pairs.iter().map(|(s, y, _)| (s.as_slice(), y.as_slice()))
    }

    /// Stores `(s, y)` if it has positive curvature; returns whether it was kept.
    pub fn push(&mut self, s: Vec<T>, y: Vec<T>) -> bool {
        let sy = dot(&s, &y);
        if !(sy > T::zero()) || !sy.is_finite() {
            self.skipped += 1;
            return false;
        }
        if self.pairs.len() == self.depth {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, T::one() / sy));
        true
    }

    /// Two-loop recursion: approximate inverse Hessian times `g`.
    pub fn apply(&self, g: &[T]) -> Vec<T> {
        let mut q = g.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = *rho * dot(s, &q);
            axpy(-a, y, &mut q);
            alphas.push(a);
        }
        if let Some((s, y, _)) = self.pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.into_iter().rev()) {
            let b = *rho * dot(y, &q);
            axpy(a - b, s, &mut q);
        }
        q
    }
}

struct LinePoint<T> {
    alpha: T,
    f: T,
    g: Vec<T>,
    dg: T,
}

fn cubic_min<T: Real>(a: &LinePoint<T>, b: &LinePoint<T>) -> Option<T> {
    // Minimizer of the cubic interpolating f and f' at both ends.
    let d1 = a.dg + b.dg - T::lit(3.0) * (a.f - b.f) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.dg * b.dg;
    if !(disc >= T::zero()) {
        return None;
    }
    let d2 = disc.sqrt() * (b.alpha - a.alpha).signum();
    let t = b.alpha - (b.alpha - a.alpha) * (b.dg + d2 - d1) / (b.dg - a.dg + T::lit(2.0) * d2);
    if t.is_finite() {
        Some(t)
    } else {
        None
    }
}

/// Strong-Wolfe line search along `dir` from `x` (Nocedal & Wright, Alg. 3.5/3.6).
#[allow(clippy::too_many_arguments)]
fn line_search<T: Real>(
    fg: &mut impl FnMut(&[T]) -> Result<(T, Vec<T>)>,
    x: &[T],
    f0: T,
    dg0: T,
    dir: &[T],
    alpha0: T,
    opts: &LbfgsOptions<T>,
    evals: &mut usize,
) -> Result<Option<LinePoint<T>>> {
    let mut eval = |alpha: T, evals: &mut usize| -> Result<LinePoint<T>> {
        let mut xt = x.to_vec();
        axpy(alpha, dir, &mut xt);
        let (f, g) = fg(&xt)?;
        *evals += 1;
        let dg = dot(&g, dir);
        Ok(LinePoint { alpha, f, g, dg })
    };
    let armijo = |p: &LinePoint<T>| p.f <= f0 + opts.c1 * p.alpha * dg0;
    let curvature = |p: &LinePoint<T>| p.dg.abs() <= -opts.c2 * dg0;
    let origin = LinePoint { alpha: T::zero(), f: f0, g: Vec::new(), dg: dg0 };
    let mut prev = origin;
    let mut alpha = alpha0;
    let mut used = 0;
    let (mut lo, mut hi);
    loop {
        let cur = eval(alpha, evals)?;
        used += 1;
        if !cur.f.is_finite() {
            // Step into a non-finite region: shrink and retry.
            if used >= opts.max_line_evals {
                return Ok(None);
            }
            alpha = (prev.alpha + alpha) / T::lit(2.0);
            continue;
        }
        if !armijo(&cur) || (used > 1 && cur.f >= prev.f) {
            lo = prev;
            hi = cur;
            break;
        }
        if curvature(&cur) {
            return Ok(Some(cur));
        }
        if cur.dg >= T::zero() {
            lo = cur;
            hi = prev;
            break;
        }
        if used >= opts.max_line_evals {
            return Ok(None);
        }
        prev = cur;
        alpha = alpha * T::lit(2.0);
    }
    // Zoom: lo satisfies sufficient decrease with the lowest value seen, hi brackets.
    while used < opts.max_line_evals {
        let (a, b) = if lo.alpha < hi.alpha { (lo.alpha, hi.alpha) } else { (hi.alpha, lo.alpha) };
        let width = b - a;
        let mut trial = if lo.g.is_empty() || hi.g.is_empty() {
            None
        } else {
            cubic_min(&lo, &hi)
        };
        if let Some(t) = trial {
            if t <= a + T::lit(0.1) * width || t >= b - T::lit(0.1) * width {
                trial = None;
            }
        }
        let alpha = trial.unwrap_or((a + b) / T::lit(2.0));
        if width <= T::epsilon() * b.max(T::one()) {
            return Ok(None);
        }
        let cur = eval(alpha, evals)?;
        used += 1;
        if !cur.f.is_finite() || !armijo(&cur) || cur.f >= lo.f {
            hi = cur;
        } else {
            if curvature(&cur) {
                return Ok(Some(cur));
            }
            if cur.dg * (hi.alpha - lo.alpha) >= T::zero() {
                hi = lo;
            }
            lo = cur;
        }
    }
    Ok(None)
}

/// Minimizes `f` starting at `x0`; `fg` returns the value and gradient.
///
/// Stops when the gradient norm drops to `grad_tol`, after `max_iter`
/// iterations, or when the line search fails; in every case the best
/// iterate found is returned.
pub fn lbfgs_minimize<T: Real>(
    mut fg: impl FnMut(&[T]) -> Result<(T, Vec<T>)>,
    x0: &[T],
    opts: &LbfgsOptions<T>,
) -> Result<LbfgsReport<T>> {
    let mut x = x0.to_vec();
    let (mut f, mut g) = fg(&x)?;
    if !f.is_finite() {
        return Err(Error::NonFinite(format!("objective is {f} at the starting point")));
    }
    let mut evals = 1;
    let mut state = LbfgsState::new(opts.history);
    let mut iterations = 0;
    let termination = loop {
        let gn = norm2(&g);
        if gn <= opts.grad_tol {
            break Termination::GradientTolerance;
        }
        if iterations >= opts.max_iter {
            break Termination::MaxIterations;
        }
        let mut dir: Vec<T> = state.apply(&g).into_iter().map(|v| -v).collect();
        let mut dg0 = dot(&g, &dir);
        if !(dg0 < T::zero()) {
            // Not a descent direction: restart from steepest descent.
            state = LbfgsState::new(opts.history);
            dir = g.iter().map(|v| -*v).collect();
            dg0 = -gn * gn;
        }
        let alpha0 = if state.is_empty() { T::one().min(T::one() / gn) } else { T::one() };
        let found = line_search(&mut fg, &x, f, dg0, &dir, alpha0, opts, &mut evals)?;
        let Some(p) = found else {
            break Termination::LineSearchFailed;
        };
        let s: Vec<T> = dir.iter().map(|d| *d * p.alpha).collect();
        let y: Vec<T> = p.g.iter().zip(&g).map(|(a, b)| *a - *b).collect();
        axpy(T::one(), &s, &mut x);
        f = p.f;
        g = p.g;
        state.push(s, y);
        iterations += 1;
    };
    let grad_norm = norm2(&g);
    Ok(LbfgsReport { x, f, grad_norm, iterations, evaluations: evals, termination })
}
