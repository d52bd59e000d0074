//! The off-diagonal operator |a><b| propagated as one Gaussian must agree with
//! the two branches |a><a| and |b><b| propagated separately:
//! `||Tr_B |a><b|||^2 = Tr(rho_a^B rho_b^B)` and `|Tr |a><b||^2 = Tr(rho_a rho_b)`.

use gaussdrift::environment::{inject_particle, particle_covariance, reduce_to_system};
use gaussdrift::hamiltonian::ExperimentHamiltonian;
use gaussdrift::phase_space::{hs_inner, CMatrix};
use gaussdrift::propagator::{integrate, Tolerances};
use gaussdrift::{Covariance, GaussianOperator, ParticleId, PhaseVector, Registry};

fn pv(v: &[f64]) -> PhaseVector {
    PhaseVector::new(v.to_vec()).unwrap()
}

fn with_bath(xa: &[f64], xb: &[f64], bath: &[f64], width: f64) -> GaussianOperator {
    let mut g = GaussianOperator::coherent_pair(Registry::system(3), pv(xa), pv(xb)).unwrap();
    let block = Covariance::from_real(&particle_covariance(width)).unwrap();
    inject_particle(&mut g, ParticleId::Bath(1), &pv(bath), &block).unwrap();
    g
}

/// Bath marginal of a diagonal operator: the bath block of centre and covariance.
fn bath_marginal(g: &GaussianOperator) -> GaussianOperator {
    let x = pv(&g.x_alpha().as_slice()[6..12]);
    let s: CMatrix = g.sigma().matrix().view((6, 6), (6, 6)).into_owned();
    GaussianOperator::new(x.clone(), x, Covariance::new(s).unwrap(), Registry::system(3)).unwrap()
}

fn check(dx: [f64; 6], bath: [f64; 6], model: ExperimentHamiltonian, t_end: f64) -> (f64, f64) {
    let xa: Vec<f64> = dx.iter().map(|d| 0.5 * d).collect();
    let xb: Vec<f64> = dx.iter().map(|d| -0.5 * d).collect();
    let tol = Tolerances { rel: 1e-11, abs: 1e-12, max_step: 0.05, ..Default::default() };

    let off = integrate(&model, &with_bath(&xa, &xb, &bath, 1.0), 0.0, t_end, &tol).unwrap();
    let aa = integrate(&model, &with_bath(&xa, &xa, &bath, 1.0), 0.0, t_end, &tol).unwrap();
    let bb = integrate(&model, &with_bath(&xb, &xb, &bath, 1.0), 0.0, t_end, &tol).unwrap();

    // the full operator stays a product of two normalized states
    let full = hs_inner(&off, &off).unwrap();
    assert!((full.re - 1.0).abs() < 1e-7 && full.im.abs() < 1e-9, "{full}");

    let trace = off.trace();
    let overlap = hs_inner(&aa, &bb).unwrap().re;
    assert!((trace.norm_sqr() - overlap).abs() < 1e-7 * overlap.max(1e-300), "{trace} {overlap}");

    let reduced = reduce_to_system(&off).unwrap();
    let lhs = hs_inner(&reduced, &reduced).unwrap();
    let rhs = hs_inner(&bath_marginal(&aa), &bath_marginal(&bb)).unwrap();
    assert!(lhs.im.abs() < 1e-9);
    (lhs.re, rhs.re)
}

#[test]
fn positional_cat_head_on_collision() {
    let model = ExperimentHamiltonian::new(3.0, 2.0, 1.0);
    let (lhs, rhs) = check([3.0, 0.0, 0.0, 0.0, 0.0, 0.0], [-20.0, 6.0, 0.5, 0.0, 0.0, 0.0], model, 7.0);
    assert!(lhs < 0.95, "collision must decohere: {lhs}");
    assert!((lhs - rhs).abs() < 1e-6 * rhs, "{lhs} vs {rhs}");
}

#[test]
fn mixed_separation_glancing_heavy_particle() {
    let model = ExperimentHamiltonian::new(1.5, 3.0, 4.0);
    let (lhs, rhs) = check(
        [2.0, -1.0, 0.0, 1.5, -0.5, 0.0],
        [-15.0, 20.0, 2.0, -1.0, 1.0, 4.0],
        model,
        6.0,
    );
    assert!(lhs < 0.999);
    assert!((lhs - rhs).abs() < 1e-6 * rhs, "{lhs} vs {rhs}");
}
