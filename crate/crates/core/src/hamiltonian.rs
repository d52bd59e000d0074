//! Hamiltonians on interleaved phase-space vectors.
//!
//! `hessian` returns half the matrix of second derivatives, which is the
//! curvature that enters the equations of motion in `propagator`.

use crate::error::{Error, Result};
use crate::phase_space::RMatrix;

pub trait HamiltonianModel: Send + Sync {
    fn value(&self, x: &[f64]) -> Result<f64>;

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<()>;

    /// Writes half the second-derivative matrix into `out` (resized if needed).
    fn hessian(&self, x: &[f64], out: &mut RMatrix) -> Result<()>;

    /// `p . dH/dp - H`.
    fn lagrangian(&self, x: &[f64]) -> Result<f64> {
        let mut g = vec![0.0; x.len()];
        self.gradient(x, &mut g)?;
        let pdot: f64 = x.chunks_exact(2).zip(g.chunks_exact(2)).map(|(xi, gi)| xi[1] * gi[1]).sum();
        Ok(pdot - self.value(x)?)
    }

    fn gradient_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; x.len()];
        self.gradient(x, &mut g)?;
        Ok(g)
    }

    fn hessian_matrix(&self, x: &[f64]) -> Result<RMatrix> {
        let mut h = RMatrix::zeros(x.len(), x.len());
        self.hessian(x, &mut h)?;
        Ok(h)
    }
}

fn prepare(out: &mut RMatrix, n: usize) {
    if out.nrows() != n || out.ncols() != n {
        *out = RMatrix::zeros(n, n);
    } else {
        out.fill(0.0);
    }
}

fn check_len(x: &[f64], expected: usize) -> Result<()> {
    if x.len() != expected {
        return Err(Error::DimensionMismatch { expected, found: x.len() });
    }
    Ok(())
}

/// Isotropic harmonic oscillator in `n_dof` coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Harmonic {
    pub n_dof: usize,
    pub mass: f64,
    pub omega: f64,
}

impl Harmonic {
    pub fn unit(n_dof: usize) -> Self {
        Self { n_dof, mass: 1.0, omega: 1.0 }
    }
}

impl HamiltonianModel for Harmonic {
    fn value(&self, x: &[f64]) -> Result<f64> {
        check_len(x, 2 * self.n_dof)?;
        let k = self.mass * self.omega * self.omega;
        Ok(x.chunks_exact(2).map(|c| 0.5 * c[1] * c[1] / self.mass + 0.5 * k * c[0] * c[0]).sum())
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        check_len(x, 2 * self.n_dof)?;
        check_len(out, 2 * self.n_dof)?;
        let k = self.mass * self.omega * self.omega;
        for (c, o) in x.chunks_exact(2).zip(out.chunks_exact_mut(2)) {
            o[0] = k * c[0];
            o[1] = c[1] / self.mass;
        }
        Ok(())
    }

    fn hessian(&self, x: &[f64], out: &mut RMatrix) -> Result<()> {
        check_len(x, 2 * self.n_dof)?;
        prepare(out, x.len());
        for a in 0..self.n_dof {
            out[(2 * a, 2 * a)] = 0.5 * self.mass * self.omega * self.omega;
            out[(2 * a + 1, 2 * a + 1)] = 0.5 / self.mass;
        }
        Ok(())
    }
}

/// Unit 3D oscillator coupled to free bath particles through
/// `V = epsilon * exp(-|r_sys - r_j|^2 / (2 width^2))`.
///
/// The phase vector holds the system block followed by one 6-entry block per
/// bath particle, so the particle count follows from its length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentHamiltonian {
    pub epsilon: f64,
    pub width: f64,
    pub m_env: f64,
}

const BLOCK: usize = 6;

impl Default for ExperimentHamiltonian {
    fn default() -> Self {
        Self { epsilon: 12.0, width: 25.0, m_env: 1.0 }
    }
}

impl ExperimentHamiltonian {
    pub fn new(epsilon: f64, width: f64, m_env: f64) -> Self {
        Self { epsilon, width, m_env }
    }

    fn particles(&self, x: &[f64]) -> Result<usize> {
        if x.is_empty() || x.len() % BLOCK != 0 {
            return Err(Error::DimensionMismatch {
                expected: BLOCK * (x.len() / BLOCK).max(1),
                found: x.len(),
            });
        }
        Ok(x.len() / BLOCK)
    }

    /// Separation `r_sys - r_j` and the pair energy.
    fn pair(&self, x: &[f64], j: usize) -> ([f64; 3], f64) {
        let s = j * BLOCK;
        let d = [x[0] - x[s], x[2] - x[s + 2], x[4] - x[s + 4]];
        let d2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
        (d, self.epsilon * (-0.5 * d2 / (self.width * self.width)).exp())
    }
}

impl HamiltonianModel for ExperimentHamiltonian {
    fn value(&self, x: &[f64]) -> Result<f64> {
        let k = self.particles(x)?;
        let mut h: f64 = x[..BLOCK].chunks_exact(2).map(|c| 0.5 * (c[0] * c[0] + c[1] * c[1])).sum();
        for j in 1..k {
            let s = j * BLOCK;
            h += x[s..s + BLOCK].chunks_exact(2).map(|c| 0.5 * c[1] * c[1] / self.m_env).sum::<f64>();
            h += self.pair(x, j).1;
        }
        Ok(h)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let k = self.particles(x)?;
        check_len(out, x.len())?;
        out[..BLOCK].copy_from_slice(&x[..BLOCK]);
        let w2 = self.width * self.width;
        for j in 1..k {
            let s = j * BLOCK;
            let (d, v) = self.pair(x, j);
            for a in 0..3 {
                let f = v * d[a] / w2;
                out[2 * a] -= f;
                out[s + 2 * a] = f;
                out[s + 2 * a + 1] = x[s + 2 * a + 1] / self.m_env;
            }
        }
        Ok(())
    }

    fn hessian(&self, x: &[f64], out: &mut RMatrix) -> Result<()> {
        let k = self.particles(x)?;
        prepare(out, x.len());
        for i in 0..BLOCK {
            out[(i, i)] = 0.5;
        }
        let w2 = self.width * self.width;
        for j in 1..k {
            let s = j * BLOCK;
            let (d, v) = self.pair(x, j);
            for a in 0..3 {
                out[(s + 2 * a + 1, s + 2 * a + 1)] = 0.5 / self.m_env;
                for b in 0..3 {
                    let delta = if a == b { 1.0 } else { 0.0 };
                    let q = 0.5 * v * (d[a] * d[b] / (w2 * w2) - delta / w2);
                    out[(2 * a, 2 * b)] += q;
                    out[(s + 2 * a, s + 2 * b)] = q;
                    out[(2 * a, s + 2 * b)] = -q;
                    out[(s + 2 * a, 2 * b)] = -q;
                }
            }
        }
        Ok(())
    }

    fn lagrangian(&self, x: &[f64]) -> Result<f64> {
        let k = self.particles(x)?;
        let mut kin: f64 = x[..BLOCK].chunks_exact(2).map(|c| 0.5 * c[1] * c[1]).sum();
        let mut pot: f64 = x[..BLOCK].chunks_exact(2).map(|c| 0.5 * c[0] * c[0]).sum();
        for j in 1..k {
            let s = j * BLOCK;
            kin += x[s..s + BLOCK].chunks_exact(2).map(|c| 0.5 * c[1] * c[1] / self.m_env).sum::<f64>();
            pot += self.pair(x, j).1;
        }
        Ok(kin - pot)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn fd_gradient(m: &dyn HamiltonianModel, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        (0..x.len())
            .map(|i| {
                let h = 1e-5 * (1.0 + x[i].abs());
                y[i] = x[i] + h;
                let fp = m.value(&y).unwrap();
                y[i] = x[i] - h;
                let fm = m.value(&y).unwrap();
                y[i] = x[i];
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }

    fn fd_half_hessian(m: &dyn HamiltonianModel, x: &[f64]) -> RMatrix {
        let n = x.len();
        let mut out = RMatrix::zeros(n, n);
        let mut y = x.to_vec();
        for j in 0..n {
            let h = 1e-5 * (1.0 + x[j].abs());
            y[j] = x[j] + h;
            let gp = m.gradient_vec(&y).unwrap();
            y[j] = x[j] - h;
            let gm = m.gradient_vec(&y).unwrap();
            y[j] = x[j];
            for i in 0..n {
                out[(i, j)] = 0.25 * (gp[i] - gm[i]) / h;
            }
        }
        out
    }

    #[test]
    fn isolated_system_curvature() {
        let m = ExperimentHamiltonian::default();
        let h = m.hessian_matrix(&[0.3, -1.0, 2.0, 0.1, 0.0, 4.0]).unwrap();
        assert_eq!(h, RMatrix::identity(6, 6) * 0.5);
    }

    #[test]
    fn pair_curvature_at_contact() {
        let m = ExperimentHamiltonian::new(2.0, 3.0, 5.0);
        let x = [1.0, 0.0, -2.0, 0.0, 0.5, 0.0, 1.0, 7.0, -2.0, 1.0, 0.5, -3.0];
        let h = m.hessian_matrix(&x).unwrap();
        let q = 0.5 * (-2.0 / 9.0);
        for a in 0..3 {
            assert_relative_eq!(h[(6 + 2 * a, 6 + 2 * a)], q, max_relative = 1e-15);
            assert_relative_eq!(h[(2 * a, 2 * a)], 0.5 + q, max_relative = 1e-15);
            assert_relative_eq!(h[(2 * a, 6 + 2 * a)], -q, max_relative = 1e-15);
            assert_eq!(h[(7 + 2 * a, 7 + 2 * a)], 0.1);
        }
    }

    #[test]
    fn bath_bath_blocks_vanish() {
        let m = ExperimentHamiltonian::new(1.5, 2.0, 1.0);
        let x: Vec<f64> = (0..18).map(|i| (i as f64 * 0.37).sin()).collect();
        let h = m.hessian_matrix(&x).unwrap();
        for i in 6..12 {
            for j in 12..18 {
                assert_eq!(h[(i, j)], 0.0);
                assert_eq!(h[(j, i)], 0.0);
            }
        }
    }

    #[test]
    fn pair_term_is_short_ranged() {
        let m = ExperimentHamiltonian::new(1.0, 25.0, 1.0);
        let x = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 251.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let h = m.hessian_matrix(&x).unwrap();
        assert!(2.0 * h[(6, 6)].abs() < 1e-12);
    }

    #[test]
    fn lagrangian_examples() {
        let free = Harmonic { n_dof: 1, mass: 2.0, omega: 0.0 };
        assert_relative_eq!(free.lagrangian(&[5.0, 3.0]).unwrap(), 9.0 / 4.0);
        let osc = Harmonic::unit(1);
        assert_relative_eq!(osc.lagrangian(&[1.5, 0.0]).unwrap(), -1.125);
    }

    #[test]
    fn harmonic_curvature() {
        assert_eq!(Harmonic::unit(3).hessian_matrix(&[0.0; 6]).unwrap(), RMatrix::identity(6, 6) * 0.5);
    }

    #[test]
    fn rejects_bad_lengths() {
        let m = ExperimentHamiltonian::default();
        assert!(matches!(m.value(&[0.0; 7]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(Harmonic::unit(2).value(&[0.0; 6]), Err(Error::DimensionMismatch { .. })));
    }

    fn point(k: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-30.0..30.0f64, 6 * (k + 1))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn derivatives_match_finite_differences(x in (0usize..3).prop_flat_map(point), eps in 0.1..5.0f64, w in 2.0..30.0f64) {
            let m = ExperimentHamiltonian::new(eps, w, 1.7);
            let g = m.gradient_vec(&x).unwrap();
            let scale = g.iter().fold(1.0f64, |a, v| a.max(v.abs()));
            for (a, b) in g.iter().zip(fd_gradient(&m, &x)) {
                prop_assert!((a - b).abs() <= 1e-6 * scale, "{} vs {}", a, b);
            }
            let h = m.hessian_matrix(&x).unwrap();
            prop_assert_eq!(&h, &h.transpose());
            let fd = fd_half_hessian(&m, &x);
            let hscale = h.amax().max(1e-3);
            prop_assert!((&h - &fd).amax() <= 1e-6 * hscale);
        }

        #[test]
        fn lagrangian_consistent_with_gradient(x in (0usize..3).prop_flat_map(point)) {
            let m = ExperimentHamiltonian::new(1.3, 4.0, 2.5);
            let g = m.gradient_vec(&x).unwrap();
            let pdot: f64 = (0..x.len() / 2).map(|a| x[2 * a + 1] * g[2 * a + 1]).sum();
            let expected = pdot - m.value(&x).unwrap();
            prop_assert!((m.lagrangian(&x).unwrap() - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
        }
    }
}
