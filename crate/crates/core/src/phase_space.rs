//! Gaussian phase-space primitives.
//!
//! Coordinates are interleaved per degree of freedom, `[r1, p1, r2, p2, ...]`,
//! in units with hbar = 1. With that ordering the symplectic form is
//! block-diagonal and every particle occupies a contiguous block.
//!
//! A Gaussian operator `|a><b|` is carried by its two branch centres, a
//! complex symmetric covariance and a complex log-amplitude. Its Weyl symbol is
//!
//! ```text
//! W(x) = w * N(S) * exp(-1/2 (x - c)^T S^{-1} (x - c)) * exp(eta + i*phi)
//! N(S) = 1 / ((2 pi)^d sqrt(det S))
//! c    = (x_a + x_b)/2 + i S J (x_a - x_b)
//! eta  = 1/2 dx^T J S J dx - i/2 (p_a + p_b).(r_a - r_b)
//! ```
//!
//! so that `Tr` of the operator is `w * exp(eta + i*phi)`.

use std::f64::consts::TAU;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64 as C64;

use crate::environment::{Registry, TraceLedger};
use crate::error::{Error, Result};

pub type RMatrix = DMatrix<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

const I: C64 = C64::new(0.0, 1.0);

/// Real phase-space point, interleaved `[r1, p1, ..., rd, pd]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseVector(DVector<f64>);

impl PhaseVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() || entries.len() % 2 != 0 {
            return Err(Error::InvalidDimension(format!(
                "phase vector length must be even and positive, got {}",
                entries.len()
            )));
        }
        if let Some(index) = entries.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self(DVector::from_vec(entries)))
    }

    pub fn zeros(len: usize) -> Result<Self> {
        Self::new(vec![0.0; len])
    }

    pub(crate) fn from_vector_unchecked(v: DVector<f64>) -> Self {
        debug_assert!(v.len() % 2 == 0);
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of canonical pairs.
    pub fn n_dof(&self) -> usize {
        self.0.len() / 2
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    #[cfg(test)]
    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        self.0.as_mut_slice()
    }

    pub fn r(&self, k: usize) -> f64 {
        self.0[2 * k]
    }

    pub fn p(&self, k: usize) -> f64 {
        self.0[2 * k + 1]
    }

    pub fn positions(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().step_by(2).copied()
    }

    pub fn momenta(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().skip(1).step_by(2).copied()
    }
}

/// The symplectic form `J`: `d` diagonal blocks `[[0, 1], [-1, 0]]`, so that
/// `dx/dt = J grad H`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SymplecticForm {
    n_dof: usize,
}

impl SymplecticForm {
    pub fn new(n_dof: usize) -> Result<Self> {
        if n_dof == 0 {
            return Err(Error::InvalidDimension(
                "symplectic form needs at least one degree of freedom".into(),
            ));
        }
        Ok(Self { n_dof })
    }

    pub fn n_dof(&self) -> usize {
        self.n_dof
    }

    pub fn dim(&self) -> usize {
        2 * self.n_dof
    }

    pub fn matrix(&self) -> RMatrix {
        let mut s = RMatrix::zeros(self.dim(), self.dim());
        for k in 0..self.n_dof {
            s[(2 * k, 2 * k + 1)] = 1.0;
            s[(2 * k + 1, 2 * k)] = -1.0;
        }
        s
    }
}

/// Dense matrix of the symplectic form with `n_dof` canonical pairs.
pub fn symplectic_form(n_dof: usize) -> Result<RMatrix> {
    Ok(SymplecticForm::new(n_dof)?.matrix())
}

// J is a signed permutation, so products with it are index shuffles.

pub(crate) fn j_apply(v: &[f64], out: &mut [f64]) {
    for k in 0..v.len() / 2 {
        out[2 * k] = v[2 * k + 1];
        out[2 * k + 1] = -v[2 * k];
    }
}

pub(crate) fn j_apply_vec(v: &[f64]) -> DVector<f64> {
    let mut out = DVector::zeros(v.len());
    j_apply(v, out.as_mut_slice());
    out
}

/// Complex symmetric covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariance(CMatrix);

impl Covariance {
    /// Wraps `m`, checking shape and symmetry (relative tolerance 1e-10).
    pub fn new(m: CMatrix) -> Result<Self> {
        let n = m.nrows();
        if n == 0 || n != m.ncols() || n % 2 != 0 {
            return Err(Error::InvalidDimension(format!(
                "covariance must be square with even size, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
        for i in 0..n {
            for j in 0..i {
                if (m[(i, j)] - m[(j, i)]).norm() > 1e-10 * scale {
                    return Err(Error::InvalidDimension(format!(
                        "covariance is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        if let Some(index) = m.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self(m))
    }

    pub fn from_real(m: &RMatrix) -> Result<Self> {
        Self::new(m.map(|v| C64::new(v, 0.0)))
    }

    /// Minimum-uncertainty coherent-state covariance, `(1/2) Identity`.
    pub fn coherent(n_dof: usize) -> Self {
        Self(CMatrix::from_diagonal_element(2 * n_dof, 2 * n_dof, C64::new(0.5, 0.0)))
    }

    pub(crate) fn from_matrix_unchecked(m: CMatrix) -> Self {
        Self(m)
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    #[cfg(test)]
    pub(crate) fn matrix_mut(&mut self) -> &mut CMatrix {
        &mut self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn max_imag(&self) -> f64 {
        self.0.iter().map(|z| z.im.abs()).fold(0.0, f64::max)
    }

    pub fn real_part(&self) -> RMatrix {
        self.0.map(|z| z.re)
    }

    /// `ln det` on the branch continuous from real positive-definite matrices.
    pub fn ln_det(&self) -> Result<C64> {
        ln_det_positive_real_part(&self.0)
    }

    pub fn inverse(&self) -> Result<CMatrix> {
        self.0.clone().try_inverse().ok_or(Error::SingularCovariance)
    }
}

/// `ln det M` for complex symmetric `M` whose real part is positive definite.
///
/// With `Re M = L L^T` we have `M = L (1 + i B) L^T`, `B` real symmetric, so
/// `ln det M = ln det Re M + sum_j ln(1 + i mu_j)` with principal logarithms.
/// The set of such matrices is convex, so this is the unique continuous branch
/// that is real on real matrices.
pub(crate) fn ln_det_positive_real_part(m: &CMatrix) -> Result<C64> {
    let n = m.nrows();
    let re = RMatrix::from_fn(n, n, |i, j| 0.5 * (m[(i, j)].re + m[(j, i)].re));
    let im = RMatrix::from_fn(n, n, |i, j| 0.5 * (m[(i, j)].im + m[(j, i)].im));
    let chol = Cholesky::new(re).ok_or(Error::SingularCovariance)?;
    let l = chol.l();
    let mut ln_re = 0.0;
    for i in 0..n {
        ln_re += 2.0 * l[(i, i)].ln();
    }
    let mut total = C64::new(ln_re, 0.0);
    if im.iter().any(|v| *v != 0.0) {
        let x = l
            .solve_lower_triangular(&im)
            .ok_or(Error::SingularCovariance)?;
        let b = l
            .solve_lower_triangular(&x.transpose())
            .ok_or(Error::SingularCovariance)?;
        let b = RMatrix::from_fn(n, n, |i, j| 0.5 * (b[(i, j)] + b[(j, i)]));
        for mu in SymmetricEigen::new(b).eigenvalues.iter() {
            total += C64::new(1.0, *mu).ln();
        }
    }
    if !total.re.is_finite() || !total.im.is_finite() {
        return Err(Error::SingularCovariance);
    }
    Ok(total)
}

/// One component `w |a><b|` of a Gaussian expansion, together with the
/// bookkeeping accumulated by partial traces.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianOperator {
    pub(crate) x_alpha: PhaseVector,
    pub(crate) x_beta: PhaseVector,
    pub(crate) sigma: Covariance,
    /// Real part of the accumulated phase.
    pub(crate) phase: f64,
    /// Log-magnitude accumulated by the phase equation (minus its imaginary part).
    pub(crate) log_amp: f64,
    pub(crate) weight: C64,
    pub(crate) ledger: TraceLedger,
    pub(crate) registry: Registry,
}

impl GaussianOperator {
    pub fn new(
        x_alpha: PhaseVector,
        x_beta: PhaseVector,
        sigma: Covariance,
        registry: Registry,
    ) -> Result<Self> {
        let n = registry.phase_dim();
        for found in [x_alpha.len(), x_beta.len(), sigma.dim()] {
            if found != n {
                return Err(Error::DimensionMismatch { expected: n, found });
            }
        }
        Ok(Self {
            x_alpha,
            x_beta,
            sigma,
            phase: 0.0,
            log_amp: 0.0,
            weight: C64::new(1.0, 0.0),
            ledger: TraceLedger::empty(n),
            registry,
        })
    }

    /// `|a><a|` for a coherent state centred at `center`.
    pub fn coherent(registry: Registry, center: PhaseVector) -> Result<Self> {
        let n_dof = registry.phase_dim() / 2;
        Self::new(center.clone(), center, Covariance::coherent(n_dof), registry)
    }

    /// `|a><b|` for two coherent states.
    pub fn coherent_pair(registry: Registry, x_alpha: PhaseVector, x_beta: PhaseVector) -> Result<Self> {
        let n_dof = registry.phase_dim() / 2;
        Self::new(x_alpha, x_beta, Covariance::coherent(n_dof), registry)
    }

    pub fn with_weight(mut self, weight: C64) -> Self {
        self.weight = weight;
        self
    }

    pub fn with_phase(mut self, phase: f64) -> Self {
        self.phase = phase;
        self
    }

    pub fn x_alpha(&self) -> &PhaseVector {
        &self.x_alpha
    }

    pub fn x_beta(&self) -> &PhaseVector {
        &self.x_beta
    }

    pub fn sigma(&self) -> &Covariance {
        &self.sigma
    }

    pub fn phase(&self) -> f64 {
        self.phase
    }

    pub fn log_amp(&self) -> f64 {
        self.log_amp
    }

    pub fn weight(&self) -> C64 {
        self.weight
    }

    pub fn ledger(&self) -> &TraceLedger {
        &self.ledger
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn dim(&self) -> usize {
        self.x_alpha.len()
    }

    pub fn n_dof(&self) -> usize {
        self.x_alpha.n_dof()
    }

    pub fn is_diagonal(&self) -> bool {
        self.x_alpha == self.x_beta
    }

    pub fn delta_x(&self) -> DVector<f64> {
        self.x_alpha.as_vector() - self.x_beta.as_vector()
    }

    /// Full `eta`, including contributions recorded when particles were traced out.
    pub fn eta(&self) -> C64 {
        // dimensions are consistent by construction
        eta_factor(&self.x_alpha, &self.x_beta, &self.sigma).unwrap_or_default()
            + self.ledger.eta_offset
    }

    /// `ln Tr` of the represented operator.
    pub fn ln_trace(&self) -> C64 {
        self.weight.ln() + self.eta() + C64::new(self.log_amp, self.phase)
    }

    pub fn trace(&self) -> C64 {
        self.ln_trace().exp()
    }

    /// Log of the prefactor in front of the Gaussian in the Weyl symbol.
    fn ln_prefactor(&self) -> Result<C64> {
        let d = self.n_dof() as f64;
        Ok(self.ln_trace() - d * TAU.ln() - 0.5 * self.sigma.ln_det()?)
    }
}

/// `eta = 1/2 dx^T J S J dx - (i/2)(p_a + p_b).(r_a - r_b)`.
pub fn eta_factor(x_alpha: &PhaseVector, x_beta: &PhaseVector, sigma: &Covariance) -> Result<C64> {
    let n = x_alpha.len();
    for found in [x_beta.len(), sigma.dim()] {
        if found != n {
            return Err(Error::DimensionMismatch { expected: n, found });
        }
    }
    let dx = x_alpha.as_vector() - x_beta.as_vector();
    // dx^T J S J dx = -(J dx)^T S (J dx)
    let u = j_apply_vec(dx.as_slice());
    let s = sigma.matrix();
    let mut quad = C64::default();
    for i in 0..n {
        if u[i] == 0.0 {
            continue;
        }
        let mut row = C64::default();
        for j in 0..n {
            row += s[(i, j)] * u[j];
        }
        quad += row * u[i];
    }
    let mut cross = 0.0;
    for k in 0..n / 2 {
        cross += (x_alpha.p(k) + x_beta.p(k)) * (x_alpha.r(k) - x_beta.r(k));
    }
    Ok(-0.5 * quad - 0.5 * I * cross)
}

/// Complex centre of the Weyl symbol, `(x_a + x_b)/2 + i S J (x_a - x_b)`
/// plus the offsets recorded by partial traces.
pub fn centroid(g: &GaussianOperator) -> CVector {
    let n = g.dim();
    let dx = g.delta_x();
    let u = j_apply_vec(dx.as_slice());
    let s = g.sigma.matrix();
    CVector::from_fn(n, |i, _| {
        let mid = 0.5 * (g.x_alpha.as_slice()[i] + g.x_beta.as_slice()[i]);
        let mut su = C64::default();
        for j in 0..n {
            if u[j] != 0.0 {
                su += s[(i, j)] * u[j];
            }
        }
        C64::new(mid, 0.0) + I * su + g.ledger.centroid_offset[i]
    })
}

/// Weyl symbol of `g` evaluated at a real phase-space point.
pub fn wigner_eval(g: &GaussianOperator, point: &PhaseVector) -> Result<C64> {
    if point.len() != g.dim() {
        return Err(Error::DimensionMismatch { expected: g.dim(), found: point.len() });
    }
    let k = g.sigma.inverse()?;
    let c = centroid(g);
    let y = CVector::from_fn(g.dim(), |i, _| C64::new(point.as_slice()[i], 0.0) - c[i]);
    let quad = (y.transpose() * &k * &y)[(0, 0)];
    Ok((g.ln_prefactor()? - 0.5 * quad).exp())
}

/// Weyl symbol written as `exp(q - 1/2 x^T K x + h^T x)`, prepared once so that
/// many pairwise Hilbert-Schmidt products can share the inversions.
#[derive(Debug, Clone)]
pub struct PreparedGaussian {
    k: CMatrix,
    h: CVector,
    q: C64,
}

impl PreparedGaussian {
    pub fn new(g: &GaussianOperator) -> Result<Self> {
        let k = g.sigma.inverse()?;
        let c = centroid(g);
        let h = &k * &c;
        let q = g.ln_prefactor()? - 0.5 * (c.transpose() * &h)[(0, 0)];
        Ok(Self { k, h, q })
    }

    pub fn dim(&self) -> usize {
        self.k.nrows()
    }

    /// `ln Tr(A B^dagger)`.
    pub fn ln_hs_inner(&self, other: &PreparedGaussian) -> Result<C64> {
        let n = self.dim();
        if other.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, found: other.dim() });
        }
        let m = CMatrix::from_fn(n, n, |i, j| self.k[(i, j)] + other.k[(i, j)].conj());
        let h = CVector::from_fn(n, |i, _| self.h[i] + other.h[i].conj());
        let ln_det = ln_det_positive_real_part(&m)?;
        let lu = m.lu();
        let sol = lu.solve(&h).ok_or(Error::SingularCovariance)?;
        let quad = (h.transpose() * sol)[(0, 0)];
        // (2 pi)^d from the trace formula, (2 pi)^(n/2) = (2 pi)^d from the integral
        let d = (n / 2) as f64;
        Ok(self.q + other.q.conj() + 2.0 * d * TAU.ln() - 0.5 * ln_det + 0.5 * quad)
    }
}

/// Hilbert-Schmidt inner product `Tr(A B^dagger)` of two Gaussian operators,
/// `(2 pi)^d` times the phase-space integral of `W_A conj(W_B)`.
pub fn hs_inner(g1: &GaussianOperator, g2: &GaussianOperator) -> Result<C64> {
    if g1.dim() != g2.dim() {
        return Err(Error::DimensionMismatch { expected: g1.dim(), found: g2.dim() });
    }
    let a = PreparedGaussian::new(g1)?;
    let b = PreparedGaussian::new(g2)?;
    Ok(a.ln_hs_inner(&b)?.exp())
}
