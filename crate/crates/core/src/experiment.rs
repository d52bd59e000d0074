//! Cat-state decoherence sweep: one `|a><b|` component per bath realization,
//! propagated with injection and tracing of bath particles, measured on the
//! system-only reduced operator.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::environment::{
    drop_particle_in_place, leaving_branch, reduce_to_system, should_drop, BathParams, Injector, ParticleId,
    Registry,
};
use crate::error::{Error, Result};
use crate::hamiltonian::ExperimentHamiltonian;
use crate::observables::{coherence_estimate, fit_decay, CoherenceMode, CoherenceSeries, DecayFit};
use crate::phase_space::{GaussianOperator, PhaseVector};
use crate::propagator::{Outcome, Propagator, Tolerances};

/// Direction of the branch separation in the system's phase space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Separation {
    #[default]
    Position,
    Momentum,
    /// Equal position and momentum components along the first axis.
    Mixed,
}

impl Separation {
    pub fn as_str(self) -> &'static str {
        match self {
            Separation::Position => "position",
            Separation::Momentum => "momentum",
            Separation::Mixed => "mixed",
        }
    }

    fn unit(self) -> [f64; 2] {
        match self {
            Separation::Position => [1.0, 0.0],
            Separation::Momentum => [0.0, 1.0],
            Separation::Mixed => [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2],
        }
    }
}

impl std::str::FromStr for Separation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "position" => Ok(Separation::Position),
            "momentum" => Ok(Separation::Momentum),
            "mixed" => Ok(Separation::Mixed),
            other => Err(format!("unknown separation '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ExperimentHamiltonian,
    pub bath: BathParams,
    pub tolerances: Tolerances,
    pub delta_x_list: Vec<f64>,
    /// In oscillator periods.
    pub t_max: f64,
    pub n_samples: usize,
    pub n_realizations: usize,
    pub master_seed: u64,
    /// 0 selects the rayon default.
    pub threads: usize,
    pub coherence_mode: CoherenceMode,
    pub separation: Separation,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ExperimentHamiltonian::default(),
            bath: BathParams::default(),
            tolerances: Tolerances::default(),
            delta_x_list: vec![10.0, 20.0, 30.0, 40.0],
            t_max: 10.0,
            n_samples: 41,
            n_realizations: 200,
            master_seed: 20_240_601,
            threads: 0,
            coherence_mode: CoherenceMode::AveragedOperator,
            separation: Separation::Position,
        }
    }
}

impl ExperimentConfig {
    /// Measurement times in oscillator periods.
    pub fn sample_times(&self) -> Vec<f64> {
        let n = self.n_samples;
        (0..n).map(|k| self.t_max * k as f64 / (n - 1) as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealizationFailure {
    pub index: usize,
    pub seed: u64,
    pub error: Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaXResult {
    pub delta_x: f64,
    pub series: CoherenceSeries,
    pub fit: std::result::Result<DecayFit, Error>,
    pub failures: Vec<RealizationFailure>,
    /// Bath particles injected, summed over the used realizations.
    pub injections: usize,
}

impl DeltaXResult {
    pub fn n_used(&self) -> usize {
        self.series.n_realizations
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub results: Vec<DeltaXResult>,
}

/// The cat component `|a><b|` with centres `+-dx/2` along the separation direction.
pub fn cat_component(delta_x: f64, separation: Separation) -> Result<GaussianOperator> {
    let u = separation.unit();
    let mut xa = vec![0.0; 6];
    let mut xb = vec![0.0; 6];
    for k in 0..2 {
        xa[k] = 0.5 * delta_x * u[k];
        xb[k] = -0.5 * delta_x * u[k];
    }
    GaussianOperator::coherent_pair(Registry::system(3), PhaseVector::new(xa)?, PhaseVector::new(xb)?)
}

/// Random stream of realization `index`; shared by every separation.
pub fn realization_rng(master_seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index as u64);
    rng
}

/// Reduced system operators at every sample time for one bath realization,
/// plus the number of injected particles.
pub fn run_realization(
    cfg: &ExperimentConfig,
    delta_x: f64,
    index: usize,
) -> Result<(Vec<GaussianOperator>, usize)> {
    let period = 2.0 * PI;
    let times: Vec<f64> = cfg.sample_times().iter().map(|t| t * period).collect();
    let t_end = *times.last().expect("at least two samples");
    let mut rng = realization_rng(cfg.master_seed, index);
    let mut injector = Injector::schedule(&cfg.bath, t_end, &mut rng);
    let mut g = cat_component(delta_x, cfg.separation)?;
    let mut prop = Propagator::new(&cfg.model, cfg.tolerances);
    let bath = &cfg.bath;
    let mut t = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for &target in &times {
        loop {
            let next_injection = injector.maybe_inject(&mut g, t, bath)?;
            if t >= target {
                break;
            }
            let stop_at = next_injection.map_or(target, |ti| ti.min(target));
            if stop_at > t {
                let leaving = |_: f64, y: &[f64]| {
                    let n = y.len();
                    let dim = crate::propagator::layout_dim(n).unwrap_or(0);
                    let (xa, xb) = (&y[..dim], &y[dim..2 * dim]);
                    (1..dim / 6).any(|j| leaving_branch(xa, j, bath) && leaving_branch(xb, j, bath))
                };
                if prop.advance(&mut g, &mut t, stop_at, leaving)? == Outcome::Interrupted {
                    drop_leaving(&mut g, bath)?;
                }
            }
        }
        drop_leaving(&mut g, bath)?;
        out.push(reduce_to_system(&g)?);
    }
    Ok((out, injector.injected()))
}

fn drop_leaving(g: &mut GaussianOperator, bath: &BathParams) -> Result<()> {
    let ids: Vec<ParticleId> = g.registry().bath_ids().collect();
    for id in ids {
        if should_drop(g, id, bath)? {
            drop_particle_in_place(g, id)?;
        }
    }
    Ok(())
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidIntegration(format!("thread pool: {e}")))
}

/// Runs every realization for one separation and reduces them to a series.
pub fn run_delta_x(cfg: &ExperimentConfig, delta_x: f64) -> Result<DeltaXResult> {
    thread_pool(cfg.threads)?.install(|| run_delta_x_in_pool(cfg, delta_x))
}

fn run_delta_x_in_pool(cfg: &ExperimentConfig, delta_x: f64) -> Result<DeltaXResult> {
    let outcomes: Vec<Result<(Vec<GaussianOperator>, usize)>> = (0..cfg.n_realizations)
        .into_par_iter()
        .map(|m| run_realization(cfg, delta_x, m))
        .collect();
    let mut used = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    let mut injections = 0;
    for (index, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok((ops, n)) => {
                injections += n;
                used.push(ops);
            }
            Err(error) => failures.push(RealizationFailure { index, seed: cfg.master_seed, error }),
        }
    }
    if used.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let times = cfg.sample_times();
    let mut values = Vec::with_capacity(times.len());
    let mut stderr = Vec::with_capacity(times.len());
    for k in 0..times.len() {
        let snapshot: Vec<GaussianOperator> = used.iter().map(|ops| ops[k].clone()).collect();
        let est = coherence_estimate(&snapshot, cfg.coherence_mode)?;
        values.push(est.value);
        stderr.push(est.stderr);
    }
    let series = CoherenceSeries::new(times, values, stderr, used.len())?.normalized()?;
    let fit = fit_decay(&series);
    Ok(DeltaXResult { delta_x, series, fit, failures, injections })
}

/// Runs the full sweep over `delta_x_list`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    if cfg.n_samples < 2 || cfg.n_realizations == 0 || !(cfg.t_max > 0.0) {
        return Err(Error::InvalidIntegration("need n_samples >= 2, n_realizations >= 1, t_max > 0".into()));
    }
    let pool = thread_pool(cfg.threads)?;
    let results = pool.install(|| {
        cfg.delta_x_list.iter().map(|&dx| run_delta_x_in_pool(cfg, dx)).collect::<Result<Vec<_>>>()
    })?;
    Ok(ExperimentResult { results })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::BathMode;

    fn small(epsilon: f64) -> ExperimentConfig {
        ExperimentConfig {
            model: ExperimentHamiltonian { epsilon, width: 5.0, m_env: 1.0 },
            bath: BathParams {
                temperature: 100.0,
                density: 2e-4,
                vicinity_radius: 20.0,
                max_active: 1,
                ..Default::default()
            },
            delta_x_list: vec![0.0, 3.0],
            t_max: 2.0,
            n_samples: 9,
            n_realizations: 6,
            threads: 2,
            ..Default::default()
        }
    }

    #[test]
    fn cat_components() {
        let g = cat_component(4.0, Separation::Position).unwrap();
        assert_eq!(g.x_alpha().as_slice(), &[2.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(g.x_beta().as_slice(), &[-2.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let m = cat_component(2.0, Separation::Momentum).unwrap();
        assert_eq!(m.x_alpha().p(0), 1.0);
        let d = m.delta_x();
        assert!((d.norm() - 2.0).abs() < 1e-15);
        let mixed = cat_component(2.0, Separation::Mixed).unwrap();
        assert!((mixed.delta_x().norm() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn uncoupled_bath_leaves_coherence_at_one() {
        let cfg = small(0.0);
        let res = run_experiment(&cfg).unwrap();
        for r in &res.results {
            assert!(r.injections > 0);
            for v in &r.series.values {
                assert!((v - 1.0).abs() < 1e-8, "{v}");
            }
        }
    }

    #[test]
    fn coupling_decoheres_separated_cat() {
        let res = run_experiment(&small(20.0)).unwrap();
        let (zero, split) = (&res.results[0], &res.results[1]);
        assert!(split.failures.is_empty());
        let last = |r: &DeltaXResult| *r.series.values.last().unwrap();
        assert!(last(split) < last(zero), "{} vs {}", last(split), last(zero));
        assert!(last(split) < 0.99);
    }

    #[test]
    fn roster_mode_runs() {
        let mut cfg = small(5.0);
        cfg.bath.mode = BathMode::Roster { size: 50 };
        cfg.bath.density = 5e-5;
        cfg.delta_x_list = vec![2.0];
        let res = run_experiment(&cfg).unwrap();
        assert_eq!(res.results[0].n_used(), cfg.n_realizations);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let mut a = small(20.0);
        a.threads = 1;
        let mut b = a.clone();
        b.threads = 3;
        assert_eq!(run_experiment(&a).unwrap(), run_experiment(&b).unwrap());
    }
}
