//! Equations of motion for a Gaussian operator in the local harmonic
//! approximation, and the adaptive integrator that advances them.
//!
//! Flattened layout: `x_alpha`, `x_beta`, the upper triangle of the covariance
//! as (re, im) pairs in row-major order, then `phase` and `log_amp`.

use nalgebra::DVector;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::hamiltonian::HamiltonianModel;
use crate::phase_space::{CMatrix, Covariance, GaussianOperator, PhaseVector, RMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rel: f64,
    pub abs: f64,
    pub max_step: f64,
    /// Smallest step relative to `max(1, |t|)` before giving up.
    pub min_step: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { rel: 1e-9, abs: 1e-10, max_step: 0.5, min_step: 1e-12 }
    }
}

impl Tolerances {
    pub fn uniform(tol: f64) -> Self {
        Self { rel: tol, abs: tol, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.rel > 0.0 && self.abs > 0.0 && self.max_step > 0.0 && self.min_step > 0.0;
        if !ok || !(self.rel.is_finite() && self.abs.is_finite() && self.max_step.is_finite()) {
            return Err(Error::InvalidIntegration(format!("bad tolerances {self:?}")));
        }
        Ok(())
    }
}

fn sigma_len(n: usize) -> usize {
    n * (n + 1)
}

/// The evolving members of a [`GaussianOperator`], flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicalState {
    pub time: f64,
    n: usize,
    data: Vec<f64>,
}

impl DynamicalState {
    pub fn from_operator(g: &GaussianOperator, time: f64) -> Self {
        let n = g.dim();
        let mut data = vec![0.0; 2 * n + sigma_len(n) + 2];
        data[..n].copy_from_slice(g.x_alpha().as_slice());
        data[n..2 * n].copy_from_slice(g.x_beta().as_slice());
        pack_sigma(g.sigma().matrix(), &mut data[2 * n..2 * n + sigma_len(n)]);
        data[2 * n + sigma_len(n)] = g.phase();
        data[2 * n + sigma_len(n) + 1] = g.log_amp();
        Self { time, n, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Phase-space dimension.
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn x_alpha(&self) -> &[f64] {
        &self.data[..self.n]
    }

    pub fn x_beta(&self) -> &[f64] {
        &self.data[self.n..2 * self.n]
    }

    pub fn sigma(&self) -> CMatrix {
        let mut m = CMatrix::zeros(self.n, self.n);
        unpack_sigma(self.sigma_slice(), &mut m);
        m
    }

    fn sigma_slice(&self) -> &[f64] {
        &self.data[2 * self.n..2 * self.n + sigma_len(self.n)]
    }

    pub fn phase(&self) -> f64 {
        self.data[2 * self.n + sigma_len(self.n)]
    }

    pub fn log_amp(&self) -> f64 {
        self.data[2 * self.n + sigma_len(self.n) + 1]
    }

    /// Copies the dynamical members back into `g`, which must have the same layout.
    pub fn write_back(&self, g: &mut GaussianOperator) -> Result<()> {
        if g.dim() != self.n {
            return Err(Error::DimensionMismatch { expected: g.dim(), found: self.n });
        }
        write_back(&self.data, self.n, g);
        Ok(())
    }
}

fn write_back(y: &[f64], n: usize, g: &mut GaussianOperator) {
    g.x_alpha = PhaseVector::from_vector_unchecked(DVector::from_column_slice(&y[..n]));
    g.x_beta = PhaseVector::from_vector_unchecked(DVector::from_column_slice(&y[n..2 * n]));
    let mut s = CMatrix::zeros(n, n);
    unpack_sigma(&y[2 * n..2 * n + sigma_len(n)], &mut s);
    g.sigma = Covariance::from_matrix_unchecked(s);
    g.phase = y[2 * n + sigma_len(n)];
    g.log_amp = y[2 * n + sigma_len(n) + 1];
}

fn pack_sigma(m: &CMatrix, out: &mut [f64]) {
    let n = m.nrows();
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            out[k] = m[(i, j)].re;
            out[k + 1] = m[(i, j)].im;
            k += 2;
        }
    }
}

/// Packs `(m + m^T) / 2`.
fn pack_sigma_symmetrized(m: &CMatrix, out: &mut [f64]) {
    let n = m.nrows();
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            let v = if i == j { m[(i, i)] } else { (m[(i, j)] + m[(j, i)]) * 0.5 };
            out[k] = v.re;
            out[k + 1] = v.im;
            k += 2;
        }
    }
}

fn unpack_sigma(src: &[f64], m: &mut CMatrix) {
    let n = m.nrows();
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            let v = C64::new(src[k], src[k + 1]);
            m[(i, j)] = v;
            m[(j, i)] = v;
            k += 2;
        }
    }
}

// (J v)_i = s_i v_{p_i}
#[inline]
fn j_partner(i: usize) -> (usize, f64) {
    if i % 2 == 0 { (i + 1, 1.0) } else { (i - 1, -1.0) }
}

/// Preallocated buffers for right-hand-side evaluation.
struct Workspace {
    n: usize,
    ga: Vec<f64>,
    gb: Vec<f64>,
    ha: RMatrix,
    hb: RMatrix,
    hp: RMatrix,
    hm: RMatrix,
    sigma: CMatrix,
    t: CMatrix,
    u: CMatrix,
    v: CMatrix,
    sd: CMatrix,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self {
            n,
            ga: vec![0.0; n],
            gb: vec![0.0; n],
            ha: RMatrix::zeros(n, n),
            hb: RMatrix::zeros(n, n),
            hp: RMatrix::zeros(n, n),
            hm: RMatrix::zeros(n, n),
            sigma: CMatrix::zeros(n, n),
            t: CMatrix::zeros(n, n),
            u: CMatrix::zeros(n, n),
            v: CMatrix::zeros(n, n),
            sd: CMatrix::zeros(n, n),
        }
    }

    fn ensure(&mut self, n: usize) {
        if self.n != n {
            *self = Self::new(n);
        }
    }
}

/// `out = h * s` for real `h`, skipping zero entries of `h`.
fn real_times_complex(h: &RMatrix, s: &CMatrix, out: &mut CMatrix) {
    let n = h.nrows();
    out.fill(C64::default());
    for k in 0..n {
        for i in 0..n {
            let hik = h[(i, k)];
            if hik == 0.0 {
                continue;
            }
            for j in 0..n {
                out[(i, j)] += s[(k, j)] * hik;
            }
        }
    }
}

/// `2 (J H S - S H J)` via `X = J (H S)`, `X + X^T`.
fn commutator_term(ws: &mut Workspace) {
    let n = ws.n;
    real_times_complex(&ws.hp, &ws.sigma, &mut ws.t);
    for i in 0..n {
        let (pi, si) = j_partner(i);
        for j in 0..n {
            let (pj, sj) = j_partner(j);
            let xij = ws.t[(pi, j)] * si;
            let xji = ws.t[(pj, i)] * sj;
            ws.sd[(i, j)] = (xij + xji) * 2.0;
        }
    }
}

fn j_grad(g: &[f64], out: &mut [f64]) {
    for (gc, oc) in g.chunks_exact(2).zip(out.chunks_exact_mut(2)) {
        oc[0] = gc[1];
        oc[1] = -gc[0];
    }
}

fn check_state_len(n_state: usize) -> Result<usize> {
    // n_state = n^2 + 3n + 2 = (n + 1)(n + 2)
    let n = (((1.0 + 4.0 * n_state as f64).sqrt() - 3.0) / 2.0).round() as usize;
    if (n + 1) * (n + 2) != n_state || n == 0 || n % 2 != 0 {
        return Err(Error::InvalidDimension(format!("state length {n_state} is not a valid layout")));
    }
    Ok(n)
}

fn eval_diagonal<M: HamiltonianModel + ?Sized>(model: &M, ws: &mut Workspace, y: &[f64], dy: &mut [f64]) -> Result<()> {
    let n = ws.n;
    let xa = &y[..n];
    model.gradient(xa, &mut ws.ga)?;
    j_grad(&ws.ga, &mut dy[..n]);
    let (left, right) = dy.split_at_mut(n);
    right[..n].copy_from_slice(&left[..n]);
    model.hessian(xa, &mut ws.hp)?;
    unpack_sigma(&y[2 * n..2 * n + sigma_len(n)], &mut ws.sigma);
    commutator_term(ws);
    pack_sigma_symmetrized(&ws.sd, &mut dy[2 * n..2 * n + sigma_len(n)]);
    dy[2 * n + sigma_len(n)] = 0.0;
    dy[2 * n + sigma_len(n) + 1] = 0.0;
    Ok(())
}

fn eval_offdiagonal<M: HamiltonianModel + ?Sized>(
    model: &M,
    ws: &mut Workspace,
    y: &[f64],
    dy: &mut [f64],
) -> Result<()> {
    let n = ws.n;
    let xa = &y[..n];
    let xb = &y[n..2 * n];
    model.gradient(xa, &mut ws.ga)?;
    model.gradient(xb, &mut ws.gb)?;
    j_grad(&ws.ga, &mut dy[..n]);
    j_grad(&ws.gb, &mut dy[n..2 * n]);
    model.hessian(xa, &mut ws.ha)?;
    model.hessian(xb, &mut ws.hb)?;
    let mut split = false;
    for k in 0..n * n {
        let (a, b) = (ws.ha.as_slice()[k], ws.hb.as_slice()[k]);
        ws.hp.as_mut_slice()[k] = (a + b) * 0.5;
        let d = a - b;
        ws.hm.as_mut_slice()[k] = d;
        split |= d != 0.0;
    }
    unpack_sigma(&y[2 * n..2 * n + sigma_len(n)], &mut ws.sigma);
    commutator_term(ws);

    let mut dphi = C64::new(model.lagrangian(xa)? - model.lagrangian(xb)?, 0.0);
    if split {
        // -(i/2) J Hm J
        for i in 0..n {
            let (pi, si) = j_partner(i);
            for j in 0..n {
                let (pj, sj) = j_partner(j);
                let jhj = -si * sj * ws.hm[(pi, pj)];
                if jhj != 0.0 {
                    ws.sd[(i, j)].im -= 0.5 * jhj;
                }
            }
        }
        // -2i S Hm S
        real_times_complex(&ws.hm, &ws.sigma, &mut ws.u);
        ws.v.gemm(C64::new(1.0, 0.0), &ws.sigma, &ws.u, C64::default());
        let mut trace = C64::default();
        for i in 0..n {
            trace += ws.u[(i, i)];
            for j in 0..n {
                let v = ws.v[(i, j)];
                ws.sd[(i, j)] += C64::new(2.0 * v.im, -2.0 * v.re);
            }
        }
        dphi -= trace;
    }
    pack_sigma_symmetrized(&ws.sd, &mut dy[2 * n..2 * n + sigma_len(n)]);
    dy[2 * n + sigma_len(n)] = dphi.re;
    dy[2 * n + sigma_len(n) + 1] = 0.0 - dphi.im;
    Ok(())
}

/// Time derivative for a diagonal component (`x_alpha == x_beta`).
pub fn rhs_diagonal<M: HamiltonianModel + ?Sized>(model: &M, state: &DynamicalState) -> Result<Vec<f64>> {
    if state.x_alpha() != state.x_beta() {
        return Err(Error::InvalidIntegration("rhs_diagonal needs x_alpha == x_beta".into()));
    }
    let mut ws = Workspace::new(state.n);
    let mut dy = vec![0.0; state.len()];
    eval_diagonal(model, &mut ws, &state.data, &mut dy)?;
    Ok(dy)
}

/// Time derivative for a general component.
pub fn rhs_offdiagonal<M: HamiltonianModel + ?Sized>(model: &M, state: &DynamicalState) -> Result<Vec<f64>> {
    let mut ws = Workspace::new(state.n);
    let mut dy = vec![0.0; state.len()];
    eval_offdiagonal(model, &mut ws, &state.data, &mut dy)?;
    Ok(dy)
}

/// Complex phase derivative `L_alpha - L_beta - Tr(Sigma Hm)` from an assembled
/// derivative (`phase' = Re`, `log_amp' = -Im`).
pub fn rhs_phase(derivative: &[f64]) -> C64 {
    let k = derivative.len();
    C64::new(derivative[k - 2], -derivative[k - 1])
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Reached,
    /// The stop predicate fired after an accepted step.
    Interrupted,
}

// Dormand-Prince 5(4)
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Adaptive Dormand-Prince 5(4) stepper with an RMS error norm.
#[derive(Debug, Clone, Default)]
pub struct Dopri5 {
    h: f64,
    k: [Vec<f64>; 7],
    stage: Vec<f64>,
    y_new: Vec<f64>,
    pub stats: StepStats,
}

impl Dopri5 {
    pub fn new() -> Self {
        Self::default()
    }

    /// Step size the next call will try first.
    pub fn suggested_step(&self) -> f64 {
        self.h
    }

    fn resize(&mut self, len: usize) {
        for k in &mut self.k {
            k.resize(len, 0.0);
        }
        self.stage.resize(len, 0.0);
        self.y_new.resize(len, 0.0);
    }

    /// Advances `y` from `*t` to `t_end`, landing exactly on `t_end`. After every
    /// accepted step `stop(t, y)` is consulted; returning true ends the call early.
    pub fn advance<F, S>(
        &mut self,
        f: &mut F,
        t: &mut f64,
        y: &mut [f64],
        t_end: f64,
        tol: &Tolerances,
        stop: &mut S,
    ) -> Result<Outcome>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
        S: FnMut(f64, &[f64]) -> bool,
    {
        tol.validate()?;
        if !(t_end >= *t) {
            return Err(Error::InvalidIntegration(format!("target {t_end} precedes current time {}", *t)));
        }
        if t_end == *t {
            return Ok(Outcome::Reached);
        }
        let len = y.len();
        self.resize(len);
        if !(self.h > 0.0) {
            self.h = 0.01f64.min(tol.max_step);
        }
        f(*t, y, &mut self.k[0])?;
        self.stats.evaluations += 1;
        let mut rejected_last = false;
        loop {
            let remaining = t_end - *t;
            let mut h = self.h.min(tol.max_step);
            let last = h >= remaining * (1.0 - 1e-12);
            if last {
                h = remaining;
            }
            for s in 1..7 {
                for i in 0..len {
                    let mut acc = 0.0;
                    for (r, a) in A[s][..s].iter().enumerate() {
                        if *a != 0.0 {
                            acc += a * self.k[r][i];
                        }
                    }
                    self.stage[i] = y[i] + h * acc;
                }
                let (head, tail) = self.k.split_at_mut(s);
                let _ = head;
                f(*t + C[s] * h, &self.stage, &mut tail[0])?;
                self.stats.evaluations += 1;
            }
            // stage 6 input is the 5th-order solution
            self.y_new.copy_from_slice(&self.stage);
            let mut acc = 0.0;
            for i in 0..len {
                let mut e = 0.0;
                for (s, c) in E.iter().enumerate() {
                    if *c != 0.0 {
                        e += c * self.k[s][i];
                    }
                }
                let scale = tol.abs + tol.rel * y[i].abs().max(self.y_new[i].abs());
                let r = h * e / scale;
                acc += r * r;
            }
            let mut err = (acc / len as f64).sqrt();
            if !err.is_finite() || self.y_new.iter().any(|v| !v.is_finite()) {
                err = f64::INFINITY;
            }
            if err <= 1.0 {
                *t = if last { t_end } else { *t + h };
                y.copy_from_slice(&self.y_new);
                self.k.swap(0, 6);
                self.stats.accepted += 1;
                let mut fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                if rejected_last {
                    fac = fac.min(1.0);
                }
                rejected_last = false;
                let proposal = h * fac;
                self.h = if last { self.h.max(proposal) } else { proposal };
                if last {
                    return Ok(Outcome::Reached);
                }
                if stop(*t, y) {
                    return Ok(Outcome::Interrupted);
                }
            } else {
                self.stats.rejected += 1;
                rejected_last = true;
                let fac = if err.is_finite() { (0.9 * err.powf(-0.2)).clamp(0.2, 1.0) } else { 0.2 };
                self.h = h * fac;
                if self.h < tol.min_step * t.abs().max(1.0) {
                    return Err(Error::Stiffness { t: *t, h: self.h, err_norm: err });
                }
            }
        }
    }
}

/// Integrator bound to a model, reusing its buffers across calls.
pub struct Propagator<'m, M: HamiltonianModel + ?Sized> {
    model: &'m M,
    tol: Tolerances,
    ws: Workspace,
    stepper: Dopri5,
    y: Vec<f64>,
}

impl<'m, M: HamiltonianModel + ?Sized> Propagator<'m, M> {
    pub fn new(model: &'m M, tol: Tolerances) -> Self {
        Self { model, tol, ws: Workspace::new(0), stepper: Dopri5::new(), y: Vec::new() }
    }

    pub fn stats(&self) -> StepStats {
        self.stepper.stats
    }

    /// Advances `g` from `*t` towards `t_end`. `stop` sees the flattened state
    /// after every accepted step; `g` is updated in either case.
    pub fn advance<S>(&mut self, g: &mut GaussianOperator, t: &mut f64, t_end: f64, mut stop: S) -> Result<Outcome>
    where
        S: FnMut(f64, &[f64]) -> bool,
    {
        let state = DynamicalState::from_operator(g, *t);
        let n = state.n;
        self.y.clear();
        self.y.extend_from_slice(&state.data);
        self.ws.ensure(n);
        let model = self.model;
        let ws = &mut self.ws;
        let mut rhs = |_t: f64, y: &[f64], dy: &mut [f64]| eval_offdiagonal(model, ws, y, dy);
        let outcome = self.stepper.advance(&mut rhs, t, &mut self.y, t_end, &self.tol, &mut stop)?;
        write_back(&self.y, n, g);
        Ok(outcome)
    }
}

/// Integrates `g` from `t0` to `t_target` without events.
pub fn integrate<M: HamiltonianModel + ?Sized>(
    model: &M,
    g: &GaussianOperator,
    t0: f64,
    t_target: f64,
    tol: &Tolerances,
) -> Result<GaussianOperator> {
    let mut out = g.clone();
    let mut t = t0;
    Propagator::new(model, *tol).advance(&mut out, &mut t, t_target, |_, _| false)?;
    Ok(out)
}

/// Phase-space dimension encoded by a flattened state length.
pub fn layout_dim(state_len: usize) -> Result<usize> {
    check_state_len(state_len)
}
