use std::f64::consts::PI;

use gaussdrift::environment::{
    dof_count, drop_particle, flux_schedule, inject_particle, particle_covariance, BathMode,
};
use gaussdrift::hamiltonian::ExperimentHamiltonian;
use gaussdrift::phase_space::{CMatrix, RMatrix};
use gaussdrift::propagator::{integrate, DynamicalState, Tolerances};
use gaussdrift::{BathParams, Covariance, GaussianOperator, ParticleId, PhaseVector, Registry};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pv(v: &[f64]) -> PhaseVector {
    PhaseVector::new(v.to_vec()).unwrap()
}

fn cat(dx: f64) -> GaussianOperator {
    GaussianOperator::coherent_pair(
        Registry::system(3),
        pv(&[dx / 2.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
        pv(&[-dx / 2.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
    )
    .unwrap()
}

fn max_diff(a: &GaussianOperator, b: &GaussianOperator) -> f64 {
    let xs = a
        .x_alpha()
        .as_slice()
        .iter()
        .zip(b.x_alpha().as_slice())
        .chain(a.x_beta().as_slice().iter().zip(b.x_beta().as_slice()))
        .map(|(u, v)| (u - v).abs())
        .fold(0.0, f64::max);
    let s = (a.sigma().matrix() - b.sigma().matrix()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    xs.max(s).max((a.phase() - b.phase()).abs()).max((a.log_amp() - b.log_amp()).abs())
}

#[test]
fn far_particle_round_trip_leaves_system_unchanged() {
    let model = ExperimentHamiltonian::new(12.0, 25.0, 1.0);
    let tol = Tolerances::uniform(1e-12);
    let g0 = cat(10.0);
    let mid = integrate(&model, &g0, 0.0, PI, &tol).unwrap();
    let reference = integrate(&model, &mid, PI, 2.0 * PI, &tol).unwrap();

    let mut g = g0.clone();
    let block = Covariance::from_real(&particle_covariance(1.0)).unwrap();
    inject_particle(&mut g, ParticleId::Bath(1), &pv(&[5000.0, 0.0, 0.0, 0.0, 0.0, 0.0]), &block).unwrap();
    let with = integrate(&model, &g, 0.0, PI, &tol).unwrap();
    let dropped = drop_particle(&with, ParticleId::Bath(1)).unwrap();
    let after = integrate(&model, &dropped, PI, 2.0 * PI, &tol).unwrap();

    let d = max_diff(&after, &reference);
    assert!(d < 1e-8, "round trip deviates by {d:e}");
}

fn correlated_pair(entries: &[f64], centre: &[f64]) -> GaussianOperator {
    let a = RMatrix::from_row_slice(12, 12, entries);
    let s = &a * a.transpose() / 12.0 + RMatrix::identity(12, 12) * 0.5;
    let x = pv(centre);
    GaussianOperator::new(x.clone(), x, Covariance::from_real(&s).unwrap(), Registry::with_particles(3, 2)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn drop_keeps_retained_moments(
        entries in prop::collection::vec(-1.0f64..1.0, 144),
        centre in prop::collection::vec(-50.0f64..50.0, 12),
    ) {
        let g = correlated_pair(&entries, &centre);
        let r = drop_particle(&g, ParticleId::Bath(1)).unwrap();
        prop_assert_eq!(r.dim(), 6);
        for i in 0..6 {
            prop_assert!((r.x_alpha().as_slice()[i] - centre[i]).abs() <= 1e-12);
            prop_assert!((r.x_beta().as_slice()[i] - centre[i]).abs() <= 1e-12);
        }
        let kept: CMatrix = g.sigma().matrix().view((0, 0), (6, 6)).into_owned();
        let d = (r.sigma().matrix() - kept).iter().map(|z| z.norm()).fold(0.0, f64::max);
        prop_assert!(d <= 1e-12);
        prop_assert!((r.trace() - g.trace()).norm() <= 1e-12);
    }
}

#[test]
fn random_inject_drop_sequence_stays_consistent() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut g = cat(4.0);
    let system_x = g.x_alpha().clone();
    let system_s = g.sigma().matrix().clone();
    let trace = g.trace();
    let mut next = 0u64;
    let mut live: Vec<u64> = Vec::new();
    for _ in 0..300 {
        if live.is_empty() || rng.random_bool(0.55) {
            next += 1;
            let centre: Vec<f64> = (0..6).map(|_| rng.random_range(-100.0..100.0)).collect();
            let block = Covariance::from_real(&particle_covariance(rng.random_range(0.3..3.0))).unwrap();
            inject_particle(&mut g, ParticleId::Bath(next), &pv(&centre), &block).unwrap();
            live.push(next);
        } else {
            let id = live.remove(rng.random_range(0..live.len()));
            g = drop_particle(&g, ParticleId::Bath(id)).unwrap();
        }
        let reg = g.registry();
        assert_eq!(reg.n_bath(), live.len());
        assert_eq!(g.dim(), reg.phase_dim());
        assert_eq!(DynamicalState::from_operator(&g, 0.0).len(), dof_count(live.len()));
        for (k, id) in live.iter().enumerate() {
            assert_eq!(reg.index_of(ParticleId::Bath(*id)), Some(k + 1));
        }
        assert_eq!(&g.x_alpha().as_slice()[..6], system_x.as_slice());
        assert_eq!(g.sigma().matrix().view((0, 0), (6, 6)), system_s);
        assert!((g.trace() - trace).norm() < 1e-14);
    }
}

#[test]
fn flux_arrival_count_is_poisson() {
    let params = BathParams { mode: BathMode::Flux, ..BathParams::default() };
    let t_end = 20.0 * PI;
    let expected = params.injection_rate() * t_end;
    let runs = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let counts: Vec<f64> = (0..runs).map(|_| flux_schedule(&params, t_end, &mut rng).len() as f64).collect();
    let mean = counts.iter().sum::<f64>() / runs as f64;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (runs - 1) as f64;
    let se = (expected / runs as f64).sqrt();
    assert!((mean - expected).abs() < 4.0 * se, "mean {mean} vs {expected}");
    assert!((var / expected - 1.0).abs() < 0.2, "dispersion {}", var / expected);
}
