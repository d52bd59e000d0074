//! Fixtures shared by the benchmarks.

use gaussdrift::environment::{inject_particle, particle_covariance};
use gaussdrift::experiment::{cat_component, Separation};
use gaussdrift::{Covariance, GaussianOperator, ParticleId, PhaseVector};

/// A cat component with `k` bath particles spread along a ring of radius 40.
pub fn cat_with_bath(delta_x: f64, k: usize) -> GaussianOperator {
    let mut g = cat_component(delta_x, Separation::Position).expect("valid separation");
    let block = Covariance::from_real(&particle_covariance(1.0)).expect("diagonal block");
    for j in 0..k {
        let a = 2.0 * std::f64::consts::PI * j as f64 / k.max(1) as f64;
        let centre = PhaseVector::new(vec![40.0 * a.cos(), -a.sin(), 40.0 * a.sin(), a.cos(), 0.0, 0.0])
            .expect("finite centre");
        inject_particle(&mut g, ParticleId::Bath(j as u64 + 1), &centre, &block).expect("fresh id");
    }
    g
}

/// Reduced system operators with independent random phases.
pub fn phased_ensemble(delta_x: f64, m: usize) -> Vec<GaussianOperator> {
    let g = cat_component(delta_x, Separation::Position).expect("valid separation");
    (0..m).map(|i| g.clone().with_phase(0.7 * i as f64 + 0.013 * (i * i) as f64)).collect()
}
