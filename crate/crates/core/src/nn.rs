//! Dense tanh networks with second-order forward-mode jets and a
//! hand-written reverse pass through the jet propagation.
//!
//! Parameters are stored flat. Layer `l` maps width `w[l]` to `w[l+1]` and
//! occupies `w[l+1] * w[l]` row-major weights followed by `w[l+1]` biases.
//! Hidden layers apply tanh, the output layer is affine.
//!
//! A jet carries, per output, the value, the first derivative along each
//! input coordinate and the pure second derivative along each input
//! coordinate. Internally these are "channels": channel 0 is the value,
//! channels `1..=d` first derivatives, `d+1..=2d` second derivatives.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// How many derivative channels a loss term needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum JetOrder {
    Value = 0,
    First = 1,
    Second = 2,
}

/// Value, gradient and pure second derivatives of every network output at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet<T> {
    dim: usize,
    pub value: Vec<T>,
    /// `grad[o * dim + k] = d out_o / d x_k`
    pub grad: Vec<T>,
    /// `second[o * dim + k] = d² out_o / d x_k²`
    pub second: Vec<T>,
}

impl<T: Real> Jet<T> {
    pub fn zeros(outputs: usize, dim: usize) -> Self {
        Jet { dim, value: vec![T::zero(); outputs], grad: vec![T::zero(); outputs * dim], second: vec![T::zero(); outputs * dim] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn d(&self, out: usize, k: usize) -> T {
        self.grad[out * self.dim + k]
    }

    pub fn dd(&self, out: usize, k: usize) -> T {
        self.second[out * self.dim + k]
    }

    /// Sum of second derivatives of output `out` over coordinates `from..dim`.
    pub fn laplacian(&self, out: usize, from: usize) -> T {
        (from..self.dim).map(|k| self.dd(out, k)).sum()
    }

    fn clear(&mut self) {
        for v in self.value.iter_mut().chain(self.grad.iter_mut()).chain(self.second.iter_mut()) {
            *v = T::zero();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    widths: Vec<usize>,
    seed: Option<u64>,
    params: Vec<T>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    arch: Vec<usize>,
    seed: Option<u64>,
    params: Vec<f64>,
}

fn validate_widths(input_dim: usize, arch: &[usize]) -> Result<Vec<usize>> {
    if arch.is_empty() {
        return Err(Error::invalid("architecture must have at least an output layer"));
    }
    if input_dim == 0 || arch.contains(&0) {
        return Err(Error::invalid(format!("zero-width layer in {arch:?}")));
    }
    let mut w = vec![input_dim];
    w.extend_from_slice(arch);
    Ok(w)
}

fn param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|p| p[1] * p[0] + p[1]).sum()
}

impl<T: Real> Mlp<T> {
    /// Network with all parameters zero. `arch` lists hidden widths followed by the output width.
    pub fn zeros(input_dim: usize, arch: &[usize]) -> Result<Self> {
        let widths = validate_widths(input_dim, arch)?;
        let n = param_count(&widths);
        Ok(Mlp { widths, seed: None, params: vec![T::zero(); n] })
    }

    /// Glorot-uniform weights, zero biases, fully determined by `seed`.
    pub fn init(input_dim: usize, arch: &[usize], seed: u64) -> Result<Self> {
        let mut m = Self::zeros(input_dim, arch)?;
        m.seed = Some(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut off = 0;
        for l in 0..m.num_layers() {
            let (fin, fout) = (m.widths[l], m.widths[l + 1]);
            let bound = (6.0 / (fin + fout) as f64).sqrt();
            for w in &mut m.params[off..off + fin * fout] {
                *w = T::lit(rng.gen_range(-bound..bound));
            }
            off += fin * fout + fout;
        }
        Ok(m)
    }

    /// Network from full layer widths (input first) and a flat parameter vector.
    pub fn from_params(widths: Vec<usize>, params: Vec<T>) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::invalid("need an input and an output width"));
        }
        let _ = validate_widths(widths[0], &widths[1..])?;
        let n = param_count(&widths);
        if params.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: params.len() });
        }
        Ok(Mlp { widths, seed: None, params })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// Hidden and output widths, in the `[20, 20, 1]` notation.
    pub fn arch(&self) -> &[usize] {
        &self.widths[1..]
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn set_params(&mut self, p: &[T]) -> Result<()> {
        if p.len() != self.params.len() {
            return Err(Error::DimensionMismatch { expected: self.params.len(), got: p.len() });
        }
        self.params.copy_from_slice(p);
        Ok(())
    }

    /// Offset of layer `l`'s weights; biases follow at `offset + out * in`.
    fn layer_offset(&self, l: usize) -> usize {
        param_count(&self.widths[..=l])
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() == self.input_dim() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected: self.input_dim(), got: x.len() })
        }
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x)?;
        let mut h = x.to_vec();
        for l in 0..self.num_layers() {
            let (fin, fout) = (self.widths[l], self.widths[l + 1]);
            let off = self.layer_offset(l);
            let w = &self.params[off..off + fin * fout];
            let b = &self.params[off + fin * fout..off + fin * fout + fout];
            let last = l + 1 == self.num_layers();
            h = (0..fout)
                .map(|o| {
                    let a = b[o] + w[o * fin..(o + 1) * fin].iter().zip(&h).map(|(&wi, &hi)| wi * hi).sum::<T>();
                    if last {
                        a
                    } else {
                        a.tanh()
                    }
                })
                .collect();
        }
        Ok(h)
    }

    /// Forward pass over many points (flat, `input_dim` each), processed in blocks.
    pub fn forward_batch(&self, points: &[T]) -> Result<Vec<T>> {
        let d = self.input_dim();
        if points.len() % d != 0 {
            return Err(Error::DimensionMismatch { expected: d, got: points.len() % d });
        }
        const BLOCK: usize = 256;
        let out_dim = self.output_dim();
        let blocks: Vec<Vec<T>> = points.par_chunks(BLOCK * d).map(|blk| self.forward_block(blk)).collect();
        let mut out = Vec::with_capacity(points.len() / d * out_dim);
        for b in blocks {
            out.extend(b);
        }
        Ok(out)
    }

    fn forward_block(&self, pts: &[T]) -> Vec<T> {
        let np = pts.len() / self.input_dim();
        let mut h = pts.to_vec();
        let mut next = Vec::new();
        for l in 0..self.num_layers() {
            let (fin, fout) = (self.widths[l], self.widths[l + 1]);
            let off = self.layer_offset(l);
            let w = &self.params[off..off + fin * fout];
            let b = &self.params[off + fin * fout..off + fin * fout + fout];
            let last = l + 1 == self.num_layers();
            next.clear();
            next.resize(np * fout, T::zero());
            for p in 0..np {
                let hp = &h[p * fin..(p + 1) * fin];
                let row = &mut next[p * fout..(p + 1) * fout];
                for o in 0..fout {
                    let wo = &w[o * fin..(o + 1) * fin];
                    let mut a = b[o];
                    for i in 0..fin {
                        a += wo[i] * hp[i];
                    }
                    row[o] = if last { a } else { a.tanh() };
                }
            }
            std::mem::swap(&mut h, &mut next);
        }
        h
    }

    /// Value, first and pure second derivatives of every output at `x`.
    pub fn jet2(&self, x: &[T]) -> Result<Jet<T>> {
        self.check_input(x)?;
        let mut tape = Tape::new(self, JetOrder::Second);
        tape.forward(self, x);
        let mut jet = Jet::zeros(self.output_dim(), self.input_dim());
        tape.read_output(&mut jet);
        Ok(jet)
    }

    /// JSON checkpoint `{arch, seed, params}`; parameters round-trip bit-exactly.
    pub fn to_checkpoint_json(&self) -> Result<String> {
        let c = Checkpoint { arch: self.widths.clone(), seed: self.seed, params: self.params.iter().map(|p| p.as_f64()).collect() };
        Ok(serde_json::to_string(&c)?)
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        let mut m = Self::from_params(c.arch, c.params.into_iter().map(T::lit).collect())?;
        m.seed = c.seed;
        Ok(m)
    }
}

/// Per-point record of the jet forward pass needed by the reverse pass.
struct Tape<T> {
    dim: usize,
    channels: usize,
    /// Input channels of each layer, `channels x width[l]`, plus the network output.
    hs: Vec<Vec<T>>,
    /// Pre-activation channels of each layer.
    pre: Vec<Vec<T>>,
    /// Adjoint scratch for the current and previous layer.
    bar: Vec<T>,
    bar_prev: Vec<T>,
}

impl<T: Real> Tape<T> {
    fn new(m: &Mlp<T>, order: JetOrder) -> Self {
        let dim = m.input_dim();
        let channels = 1 + dim * order as usize;
        let hs = m.widths.iter().map(|&w| vec![T::zero(); channels * w]).collect();
        let pre = m.widths[1..].iter().map(|&w| vec![T::zero(); channels * w]).collect();
        let maxw = *m.widths.iter().max().unwrap();
        Tape { dim, channels, hs, pre, bar: vec![T::zero(); channels * maxw], bar_prev: vec![T::zero(); channels * maxw] }
    }

    fn forward(&mut self, m: &Mlp<T>, x: &[T]) {
        let (d, c) = (self.dim, self.channels);
        let h0 = &mut self.hs[0];
        h0.iter_mut().for_each(|v| *v = T::zero());
        h0[..d].copy_from_slice(x);
        if c > 1 {
            for k in 0..d {
                h0[(1 + k) * d + k] = T::one();
            }
        }
        for l in 0..m.num_layers() {
            let (fin, fout) = (m.widths[l], m.widths[l + 1]);
            let off = m.layer_offset(l);
            let w = &m.params[off..off + fin * fout];
            let b = &m.params[off + fin * fout..off + fin * fout + fout];
            let (lo, hi) = self.hs.split_at_mut(l + 1);
            let h = &lo[l];
            let a = &mut self.pre[l];
            for ch in 0..c {
                let hc = &h[ch * fin..(ch + 1) * fin];
                for o in 0..fout {
                    let wo = &w[o * fin..(o + 1) * fin];
                    let mut s = if ch == 0 { b[o] } else { T::zero() };
                    for i in 0..fin {
                        s += wo[i] * hc[i];
                    }
                    a[ch * fout + o] = s;
                }
            }
            let next = &mut hi[0];
            if l + 1 == m.num_layers() {
                next.copy_from_slice(a);
                continue;
            }
            let two = T::lit(2.0);
            let first = c > 1;
            let second = c > 1 + d;
            for o in 0..fout {
                let g = a[o].tanh();
                let s = T::one() - g * g;
                let s2 = -two * g * s;
                next[o] = g;
                if first {
                    for k in 0..d {
                        let a1 = a[(1 + k) * fout + o];
                        next[(1 + k) * fout + o] = s * a1;
                        if second {
                            let a2 = a[(1 + d + k) * fout + o];
                            next[(1 + d + k) * fout + o] = s * a2 + s2 * a1 * a1;
                        }
                    }
                }
            }
        }
    }

    fn read_output(&self, jet: &mut Jet<T>) {
        let (d, c) = (self.dim, self.channels);
        let out = self.hs.last().unwrap();
        let no = jet.value.len();
        for o in 0..no {
            jet.value[o] = out[o];
            for k in 0..d {
                if c > 1 {
                    jet.grad[o * d + k] = out[(1 + k) * no + o];
                }
                if c > 1 + d {
                    jet.second[o * d + k] = out[(1 + d + k) * no + o];
                }
            }
        }
    }

    /// Accumulates the parameter gradient for output-jet adjoint `adj` into `grad`.
    fn backward(&mut self, m: &Mlp<T>, adj: &Jet<T>, grad: &mut [T]) {
        let (d, c) = (self.dim, self.channels);
        let no = m.output_dim();
        for o in 0..no {
            self.bar[o] = adj.value[o];
            for k in 0..d {
                if c > 1 {
                    self.bar[(1 + k) * no + o] = adj.grad[o * d + k];
                }
                if c > 1 + d {
                    self.bar[(1 + d + k) * no + o] = adj.second[o * d + k];
                }
            }
        }
        let two = T::lit(2.0);
        for l in (0..m.num_layers()).rev() {
            let (fin, fout) = (m.widths[l], m.widths[l + 1]);
            let off = m.layer_offset(l);
            let h = &self.hs[l];
            {
                let (gw, gb) = grad[off..off + fin * fout + fout].split_at_mut(fin * fout);
                for ch in 0..c {
                    let hc = &h[ch * fin..(ch + 1) * fin];
                    for o in 0..fout {
                        let ab = self.bar[ch * fout + o];
                        if ab == T::zero() {
                            continue;
                        }
                        let row = &mut gw[o * fin..(o + 1) * fin];
                        for i in 0..fin {
                            row[i] += ab * hc[i];
                        }
                    }
                }
                for o in 0..fout {
                    gb[o] += self.bar[o];
                }
            }
            if l == 0 {
                break;
            }
            // Adjoint of this layer's input channels, then through the tanh jet of layer l-1.
            let w = &m.params[off..off + fin * fout];
            let hb = &mut self.bar_prev;
            for ch in 0..c {
                for i in 0..fin {
                    let mut s = T::zero();
                    for o in 0..fout {
                        s += w[o * fin + i] * self.bar[ch * fout + o];
                    }
                    hb[ch * fin + i] = s;
                }
            }
            let a = &self.pre[l - 1];
            for i in 0..fin {
                let g = h[i];
                let s = T::one() - g * g;
                let s2 = -two * g * s;
                let mut sbar = T::zero();
                let mut s2bar = T::zero();
                for k in 0..d {
                    if c > 1 {
                        let a1 = a[(1 + k) * fin + i];
                        let h1b = hb[(1 + k) * fin + i];
                        sbar += h1b * a1;
                        let mut a1b = h1b * s;
                        if c > 1 + d {
                            let a2 = a[(1 + d + k) * fin + i];
                            let h2b = hb[(1 + d + k) * fin + i];
                            sbar += h2b * a2;
                            s2bar += h2b * a1 * a1;
                            a1b += two * h2b * s2 * a1;
                            self.bar[(1 + d + k) * fin + i] = h2b * s;
                        }
                        self.bar[(1 + k) * fin + i] = a1b;
                    }
                }
                let gbar = hb[i] - two * g * sbar + (T::lit(6.0) * g * g - two) * s2bar;
                self.bar[i] = gbar * s;
            }
        }
    }
}

/// One term of a loss: a per-group closure evaluated over groups of points.
///
/// `points` holds `groups * group_size` points of `input_dim` coordinates.
/// For each group the closure receives the group index, the jets at its points and a zeroed
/// adjoint jet per point; it returns the group's contribution to the loss
/// and writes the derivative of that contribution with respect to each jet
/// component into the adjoints.
pub struct LossTerm<'a, T> {
    pub name: &'a str,
    pub points: &'a [T],
    pub group_size: usize,
    pub order: JetOrder,
    #[allow(clippy::type_complexity)]
    pub eval: &'a (dyn Fn(usize, &[Jet<T>], &mut [Jet<T>]) -> T + Sync),
}

/// Groups per parallel work unit; fixed so the reduction order never depends on thread count.
const CHUNK_GROUPS: usize = 32;

struct Chunk<'a, 'b, T> {
    term: &'b LossTerm<'a, T>,
    start: usize,
    end: usize,
}

fn eval_chunk<T: Real>(m: &Mlp<T>, ch: &Chunk<'_, '_, T>, with_grad: bool) -> Result<(T, Vec<T>)> {
    let term = ch.term;
    let d = m.input_dim();
    let gs = term.group_size;
    let mut tapes: Vec<Tape<T>> = (0..gs).map(|_| Tape::new(m, term.order)).collect();
    let mut jets: Vec<Jet<T>> = (0..gs).map(|_| Jet::zeros(m.output_dim(), d)).collect();
    let mut adjs = jets.clone();
    let mut grad = if with_grad { vec![T::zero(); m.num_params()] } else { Vec::new() };
    let mut total = T::zero();
    for g in ch.start..ch.end {
        for j in 0..gs {
            let p = &term.points[(g * gs + j) * d..(g * gs + j + 1) * d];
            tapes[j].forward(m, p);
            tapes[j].read_output(&mut jets[j]);
            adjs[j].clear();
        }
        let v = (term.eval)(g, &jets, &mut adjs);
        if !v.is_finite() {
            let p = &term.points[g * gs * d..(g * gs + 1) * d];
            return Err(Error::NonFinite(format!("loss term `{}` is {v} at group {g} (first point {p:?})", term.name)));
        }
        total += v;
        if with_grad {
            for j in 0..gs {
                tapes[j].backward(m, &adjs[j], &mut grad);
            }
        }
    }
    Ok((total, grad))
}

fn run_terms<T: Real>(m: &Mlp<T>, terms: &[LossTerm<'_, T>], with_grad: bool) -> Result<(T, Vec<T>)> {
    let d = m.input_dim();
    let mut chunks = Vec::new();
    for term in terms {
        let per_group = term.group_size * d;
        if term.group_size == 0 || term.points.len() % per_group != 0 {
            return Err(Error::DimensionMismatch { expected: per_group, got: term.points.len() % per_group.max(1) });
        }
        let groups = term.points.len() / per_group;
        let mut s = 0;
        while s < groups {
            let e = (s + CHUNK_GROUPS).min(groups);
            chunks.push(Chunk { term, start: s, end: e });
            s = e;
        }
    }
    let parts: Vec<Result<(T, Vec<T>)>> = chunks.par_iter().map(|c| eval_chunk(m, c, with_grad)).collect();
    let mut loss = T::zero();
    let mut grad = if with_grad { vec![T::zero(); m.num_params()] } else { Vec::new() };
    for part in parts {
        let (l, g) = part?;
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += *b;
        }
    }
    Ok((loss, grad))
}

/// Loss and its gradient with respect to every network parameter.
///
/// Reverse mode through the jet propagation, so terms may use first and
/// second input derivatives. The result is bit-identical for identical
/// inputs regardless of the number of worker threads.
pub fn loss_gradient<T: Real>(m: &Mlp<T>, terms: &[LossTerm<'_, T>]) -> Result<(T, Vec<T>)> {
    run_terms(m, terms, true)
}

/// Loss value only.
pub fn loss_value<T: Real>(m: &Mlp<T>, terms: &[LossTerm<'_, T>]) -> Result<T> {
    Ok(run_terms(m, terms, false)?.0)
}
