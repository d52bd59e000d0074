//! Bath sampling and the vicinity scheme: bath particles are added to a
//! Gaussian operator when they cross into a sphere around the system and
//! traced out once they leave it again.
//!
//! Tracing out a particle marginalizes the Weyl symbol over its coordinates.
//! The marginal keeps the amplitude and the retained block of the complex
//! centre, but the centre and `eta` are re-derived from the *retained* branch
//! coordinates afterwards, so the dropped coordinates' share of both is
//! recorded in a [`TraceLedger`] at drop time and held fixed from then on.

use std::f64::consts::PI;
use std::ops::Range;

use nalgebra::DVector;
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::phase_space::{j_apply_vec, CMatrix, CVector, Covariance, GaussianOperator, PhaseVector, RMatrix};

/// Spatial dimension of every particle in the experiment.
pub const SPATIAL_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParticleId {
    System,
    Bath(u64),
}

/// Maps contiguous phase-space blocks to particles. The system is always first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Registry {
    spatial_dim: usize,
    particles: Vec<ParticleId>,
}

impl Registry {
    pub fn system(spatial_dim: usize) -> Self {
        assert!(spatial_dim > 0);
        Self { spatial_dim, particles: vec![ParticleId::System] }
    }

    /// System plus `count - 1` bath particles numbered from 1.
    pub fn with_particles(spatial_dim: usize, count: usize) -> Self {
        let mut r = Self::system(spatial_dim);
        for k in 1..count {
            r.particles.push(ParticleId::Bath(k as u64));
        }
        r
    }

    pub fn spatial_dim(&self) -> usize {
        self.spatial_dim
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn n_bath(&self) -> usize {
        self.particles.len() - 1
    }

    pub fn particles(&self) -> &[ParticleId] {
        &self.particles
    }

    pub fn bath_ids(&self) -> impl Iterator<Item = ParticleId> + '_ {
        self.particles[1..].iter().copied()
    }

    pub fn block_size(&self) -> usize {
        2 * self.spatial_dim
    }

    pub fn phase_dim(&self) -> usize {
        self.block_size() * self.particles.len()
    }

    pub fn index_of(&self, id: ParticleId) -> Option<usize> {
        self.particles.iter().position(|p| *p == id)
    }

    pub fn block(&self, index: usize) -> Range<usize> {
        let b = self.block_size();
        index * b..(index + 1) * b
    }

    fn push(&mut self, id: ParticleId) {
        self.particles.push(id);
    }

    fn remove(&mut self, index: usize) {
        self.particles.remove(index);
    }
}

/// Corrections recorded when particles are traced out.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceLedger {
    /// Added to the complex centre; indexed by the currently retained coordinates.
    pub(crate) centroid_offset: CVector,
    /// Added to `eta`.
    pub(crate) eta_offset: C64,
    /// Sum of the real parts of the `eta` contributions, i.e. the log-magnitude
    /// the component's trace lost to dropped particles. Diagnostic only: it is
    /// already contained in `eta_offset`.
    pub(crate) norm_log: f64,
    pub(crate) drops: usize,
}

impl TraceLedger {
    pub fn empty(dim: usize) -> Self {
        Self {
            centroid_offset: CVector::zeros(dim),
            eta_offset: C64::default(),
            norm_log: 0.0,
            drops: 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.drops == 0
    }

    pub fn centroid_offset(&self) -> &CVector {
        &self.centroid_offset
    }

    pub fn eta_offset(&self) -> C64 {
        self.eta_offset
    }

    pub fn norm_log(&self) -> f64 {
        self.norm_log
    }

    pub fn drops(&self) -> usize {
        self.drops
    }
}

/// Number of real ODEs for one system particle and `k_active` bath particles
/// in 3D: complex symmetric covariance, both branch centres, and the complex phase.
pub fn dof_count(k_active: usize) -> usize {
    let d = 2 * SPATIAL_DIM * (k_active + 1);
    d * (d + 1) + 2 * d + 2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BathMode {
    /// Poisson arrivals through the vicinity sphere.
    Flux,
    /// A fixed roster of ballistic particles injected at their crossing times.
    Roster { size: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BathParams {
    /// k_B = 1.
    pub temperature: f64,
    /// Particles per cubic oscillator length.
    pub density: f64,
    pub mass: f64,
    /// Position standard deviation of a fresh bath wavepacket.
    pub env_width: f64,
    pub vicinity_radius: f64,
    pub max_active: usize,
    pub mode: BathMode,
}

impl Default for BathParams {
    fn default() -> Self {
        Self {
            temperature: 10_000.0,
            density: 8.0e-8,
            mass: 1.0,
            env_width: 1.0,
            vicinity_radius: 100.0,
            max_active: 1,
            mode: BathMode::Flux,
        }
    }
}

impl BathParams {
    /// Per-axis velocity standard deviation.
    pub fn thermal_velocity(&self) -> f64 {
        (self.temperature / self.mass).sqrt()
    }

    pub fn mean_speed(&self) -> f64 {
        (8.0 * self.temperature / (PI * self.mass)).sqrt()
    }

    /// Kinetic-theory rate of particles crossing into the vicinity sphere,
    /// `density * 4 pi R^2 * <|v|> / 4`.
    pub fn injection_rate(&self) -> f64 {
        self.density * PI * self.vicinity_radius.powi(2) * self.mean_speed()
    }

    /// Minimum-uncertainty covariance block of a fresh bath particle.
    pub fn particle_covariance(&self) -> RMatrix {
        particle_covariance(self.env_width)
    }
}

pub fn particle_covariance(env_width: f64) -> RMatrix {
    let b = 2 * SPATIAL_DIM;
    let mut m = RMatrix::zeros(b, b);
    for a in 0..SPATIAL_DIM {
        m[(2 * a, 2 * a)] = env_width * env_width;
        m[(2 * a + 1, 2 * a + 1)] = 0.25 / (env_width * env_width);
    }
    m
}

/// Axis-aligned box for bath sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialBox {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
}

impl SpatialBox {
    pub fn cube(center: [f64; 3], half_width: f64) -> Self {
        Self {
            lower: [center[0] - half_width, center[1] - half_width, center[2] - half_width],
            upper: [center[0] + half_width, center[1] + half_width, center[2] + half_width],
        }
    }

    pub fn volume(&self) -> f64 {
        (0..3).map(|a| self.upper[a] - self.lower[a]).product()
    }
}

/// Thermal bath realization: `round(density * volume)` particles placed uniformly
/// in the box with Maxwell-Boltzmann momenta and minimum-uncertainty wavepackets.
pub fn sample_bath<R: Rng + ?Sized>(
    params: &BathParams,
    rng: &mut R,
    region: &SpatialBox,
) -> Vec<(PhaseVector, Covariance)> {
    let count = (params.density * region.volume()).round() as usize;
    let sigma_p = (params.mass * params.temperature).sqrt();
    let cov = Covariance::from_real(&params.particle_covariance()).expect("valid block");
    (0..count)
        .map(|_| {
            let mut entries = vec![0.0; 2 * SPATIAL_DIM];
            for a in 0..SPATIAL_DIM {
                entries[2 * a] = rng.random_range(region.lower[a]..region.upper[a]);
                let z: f64 = StandardNormal.sample(rng);
                entries[2 * a + 1] = sigma_p * z;
            }
            (PhaseVector::new(entries).expect("finite sample"), cov.clone())
        })
        .collect()
}

fn block_position(x: &[f64], block: &Range<usize>) -> [f64; 3] {
    let s = block.start;
    [x[s], x[s + 2], x[s + 4]]
}

fn block_momentum(x: &[f64], block: &Range<usize>) -> [f64; 3] {
    let s = block.start;
    [x[s + 1], x[s + 3], x[s + 5]]
}

/// Outside the vicinity and receding, evaluated on one branch. The system is
/// the first block and has unit mass.
pub(crate) fn leaving_branch(x: &[f64], index: usize, params: &BathParams) -> bool {
    let b = 2 * SPATIAL_DIM;
    let sys = 0..b;
    let blk = index * b..(index + 1) * b;
    let rs = block_position(x, &sys);
    let ps = block_momentum(x, &sys);
    let rp = block_position(x, &blk);
    let pp = block_momentum(x, &blk);
    let mut dist2 = 0.0;
    let mut radial = 0.0;
    for a in 0..3 {
        let dr = rp[a] - rs[a];
        dist2 += dr * dr;
        radial += dr * (pp[a] / params.mass - ps[a]);
    }
    dist2 > params.vicinity_radius * params.vicinity_radius && radial > 0.0
}

/// True when the particle lies outside the vicinity radius and moves away
/// from the system in both branches.
pub fn should_drop(g: &GaussianOperator, id: ParticleId, params: &BathParams) -> Result<bool> {
    let index = g.registry().index_of(id).ok_or(Error::UnknownParticle(id))?;
    if index == 0 {
        return Ok(false);
    }
    check_3d(g)?;
    Ok(leaving_branch(g.x_alpha().as_slice(), index, params)
        && leaving_branch(g.x_beta().as_slice(), index, params))
}

fn check_3d(g: &GaussianOperator) -> Result<()> {
    if g.registry().spatial_dim() != SPATIAL_DIM {
        return Err(Error::InvalidDimension(format!(
            "vicinity tests need {SPATIAL_DIM}D particles, got {}D",
            g.registry().spatial_dim()
        )));
    }
    Ok(())
}

/// Traces particle `id` out of `g`.
pub fn drop_particle(g: &GaussianOperator, id: ParticleId) -> Result<GaussianOperator> {
    let mut out = g.clone();
    drop_particle_in_place(&mut out, id)?;
    Ok(out)
}

pub(crate) fn drop_particle_in_place(g: &mut GaussianOperator, id: ParticleId) -> Result<()> {
    let index = g.registry.index_of(id).ok_or(Error::UnknownParticle(id))?;
    if index == 0 {
        return Err(Error::SystemDrop);
    }
    let n = g.dim();
    let dropped = g.registry.block(index);
    let retained: Vec<usize> = (0..n).filter(|i| !dropped.contains(i)).collect();

    let dx = g.delta_x();
    let u = j_apply_vec(dx.as_slice());
    let s = g.sigma.matrix();

    // centre: i [S J P dx] on retained rows
    let mut offset = CVector::zeros(retained.len());
    for (row, &i) in retained.iter().enumerate() {
        let mut acc = C64::default();
        for k in dropped.clone() {
            if u[k] != 0.0 {
                acc += s[(i, k)] * u[k];
            }
        }
        offset[row] = g.ledger.centroid_offset[i] + C64::new(0.0, 1.0) * acc;
    }

    // eta: terms of -1/2 u^T S u and of the momentum cross term that touch dropped entries
    let mut cross_rd = C64::default();
    for &i in &retained {
        if u[i] == 0.0 {
            continue;
        }
        for k in dropped.clone() {
            cross_rd += u[i] * s[(i, k)] * u[k];
        }
    }
    let mut dd = C64::default();
    for i in dropped.clone() {
        for k in dropped.clone() {
            dd += u[i] * s[(i, k)] * u[k];
        }
    }
    let xa = g.x_alpha.as_slice();
    let xb = g.x_beta.as_slice();
    let mut momentum_cross = 0.0;
    for k in dropped.clone().step_by(2) {
        momentum_cross += (xa[k + 1] + xb[k + 1]) * (xa[k] - xb[k]);
    }
    let d_eta = -0.5 * (2.0 * cross_rd + dd) - C64::new(0.0, 0.5 * momentum_cross);

    let sigma = CMatrix::from_fn(retained.len(), retained.len(), |a, b| s[(retained[a], retained[b])]);
    let keep = |v: &PhaseVector| {
        PhaseVector::from_vector_unchecked(DVector::from_iterator(
            retained.len(),
            retained.iter().map(|&i| v.as_slice()[i]),
        ))
    };
    g.x_alpha = keep(&g.x_alpha);
    g.x_beta = keep(&g.x_beta);
    g.sigma = Covariance::from_matrix_unchecked(sigma);
    g.ledger.centroid_offset = offset;
    g.ledger.eta_offset += d_eta;
    g.ledger.norm_log += d_eta.re;
    g.ledger.drops += 1;
    g.registry.remove(index);
    Ok(())
}

/// Traces out every bath particle, leaving the system-only operator.
pub fn reduce_to_system(g: &GaussianOperator) -> Result<GaussianOperator> {
    let mut out = g.clone();
    let ids: Vec<ParticleId> = out.registry.bath_ids().collect();
    for id in ids {
        drop_particle_in_place(&mut out, id)?;
    }
    Ok(out)
}

/// Adds an uncorrelated particle with identical state in both branches.
pub fn inject_particle(
    g: &mut GaussianOperator,
    id: ParticleId,
    center: &PhaseVector,
    block: &Covariance,
) -> Result<()> {
    let b = g.registry.block_size();
    if center.len() != b {
        return Err(Error::DimensionMismatch { expected: b, found: center.len() });
    }
    if block.dim() != b {
        return Err(Error::DimensionMismatch { expected: b, found: block.dim() });
    }
    if g.registry.index_of(id).is_some() {
        return Err(Error::InvalidDimension(format!("particle {id:?} is already active")));
    }
    let n = g.dim();
    let extend = |v: &PhaseVector| {
        PhaseVector::from_vector_unchecked(DVector::from_iterator(
            n + b,
            v.as_slice().iter().chain(center.as_slice()).copied(),
        ))
    };
    g.x_alpha = extend(&g.x_alpha);
    g.x_beta = extend(&g.x_beta);
    let old = g.sigma.matrix();
    let bm = block.matrix();
    let sigma = CMatrix::from_fn(n + b, n + b, |i, j| match (i < n, j < n) {
        (true, true) => old[(i, j)],
        (false, false) => bm[(i - n, j - n)],
        _ => C64::default(),
    });
    g.sigma = Covariance::from_matrix_unchecked(sigma);
    g.ledger.centroid_offset = CVector::from_iterator(
        n + b,
        g.ledger.centroid_offset.iter().copied().chain(std::iter::repeat_n(C64::default(), b)),
    );
    g.registry.push(id);
    Ok(())
}

/// Where a scheduled particle enters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Entry {
    /// Point on the vicinity sphere relative to the system's mean position.
    OnSphere { offset: [f64; 3] },
    /// Ballistic particle: absolute position at t = 0, moved along its momentum.
    Ballistic { origin: [f64; 3] },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    pub time: f64,
    pub entry: Entry,
    pub momentum: [f64; 3],
}

impl Arrival {
    /// Phase-space block of the particle if it is injected at time `t`.
    pub fn state_at(&self, t: f64, system_center: [f64; 3], mass: f64) -> PhaseVector {
        let mut entries = vec![0.0; 2 * SPATIAL_DIM];
        for a in 0..3 {
            entries[2 * a] = match self.entry {
                Entry::OnSphere { offset } => system_center[a] + offset[a],
                Entry::Ballistic { origin } => origin[a] + self.momentum[a] / mass * t,
            };
            entries[2 * a + 1] = self.momentum[a];
        }
        PhaseVector::new(entries).expect("finite arrival")
    }
}

fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm > 1e-12 {
            return [v[0] / norm, v[1] / norm, v[2] / norm];
        }
    }
}

/// Poisson arrivals through the vicinity sphere on `[0, t_end]`: uniform entry
/// points, inward-flux-weighted Maxwell-Boltzmann velocities (Rayleigh normal
/// component, Gaussian tangential components).
pub fn flux_schedule<R: Rng + ?Sized>(params: &BathParams, t_end: f64, rng: &mut R) -> Vec<Arrival> {
    let rate = params.injection_rate();
    if !(rate > 0.0) {
        return Vec::new();
    }
    let gaps = Exp::new(rate).expect("positive rate");
    let sigma_v = params.thermal_velocity();
    let tangential = Normal::new(0.0, sigma_v).expect("finite velocity");
    let mut out = Vec::new();
    let mut t = 0.0;
    loop {
        t += gaps.sample(rng);
        if t > t_end {
            break;
        }
        let n = unit_vector(rng);
        // tangent basis
        let helper = if n[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
        let t1 = normalize(cross(n, helper));
        let t2 = cross(n, t1);
        let u: f64 = rng.random::<f64>();
        let v_in = sigma_v * (-2.0 * (1.0 - u).ln()).sqrt();
        let (a, b) = (tangential.sample(rng), tangential.sample(rng));
        let mut momentum = [0.0; 3];
        for k in 0..3 {
            momentum[k] = params.mass * (-v_in * n[k] + a * t1[k] + b * t2[k]);
        }
        let r = params.vicinity_radius;
        out.push(Arrival {
            time: t,
            entry: Entry::OnSphere { offset: [r * n[0], r * n[1], r * n[2]] },
            momentum,
        });
    }
    out
}

/// Ballistic roster: `size` particles uniform in a cube of volume `size / density`
/// centred on the origin, injected when their straight-line path first enters
/// the vicinity sphere. Particles starting inside enter at t = 0.
pub fn roster_schedule<R: Rng + ?Sized>(
    params: &BathParams,
    size: usize,
    t_end: f64,
    rng: &mut R,
) -> Vec<Arrival> {
    if size == 0 || !(params.density > 0.0) {
        return Vec::new();
    }
    let half = 0.5 * (size as f64 / params.density).cbrt();
    let region = SpatialBox::cube([0.0; 3], half);
    let sigma_p = (params.mass * params.temperature).sqrt();
    let r2 = params.vicinity_radius.powi(2);
    let mut out = Vec::new();
    for _ in 0..size {
        let mut origin = [0.0; 3];
        let mut momentum = [0.0; 3];
        for a in 0..3 {
            origin[a] = rng.random_range(region.lower[a]..region.upper[a]);
            let z: f64 = StandardNormal.sample(rng);
            momentum[a] = sigma_p * z;
        }
        let v: Vec<f64> = momentum.iter().map(|p| p / params.mass).collect();
        let rr = dot(origin, origin);
        let time = if rr <= r2 {
            Some(0.0)
        } else {
            let vv = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
            let rv = origin[0] * v[0] + origin[1] * v[1] + origin[2] * v[2];
            let disc = rv * rv - vv * (rr - r2);
            if vv > 0.0 && disc >= 0.0 && rv < 0.0 {
                Some((-rv - disc.sqrt()) / vv)
            } else {
                None
            }
        };
        if let Some(time) = time.filter(|t| *t <= t_end) {
            out.push(Arrival { time, entry: Entry::Ballistic { origin }, momentum });
        }
    }
    out.sort_by(|a, b| a.time.total_cmp(&b.time));
    out
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Feeds scheduled arrivals into one trajectory, deferring those that arrive
/// while `max_active` particles are already in the vicinity.
#[derive(Debug, Clone)]
pub struct Injector {
    arrivals: Vec<Arrival>,
    next: usize,
    next_id: u64,
    injected: usize,
}

impl Injector {
    pub fn new(arrivals: Vec<Arrival>) -> Self {
        Self { arrivals, next: 0, next_id: 1, injected: 0 }
    }

    pub fn schedule<R: Rng + ?Sized>(params: &BathParams, t_end: f64, rng: &mut R) -> Self {
        let arrivals = match params.mode {
            BathMode::Flux => flux_schedule(params, t_end, rng),
            BathMode::Roster { size } => roster_schedule(params, size, t_end, rng),
        };
        Self::new(arrivals)
    }

    pub fn arrivals(&self) -> &[Arrival] {
        &self.arrivals
    }

    pub fn injected(&self) -> usize {
        self.injected
    }

    /// Scheduled time of the next pending arrival (possibly already past if deferred).
    pub fn next_time(&self) -> Option<f64> {
        self.arrivals.get(self.next).map(|a| a.time)
    }

    /// Injects every arrival due by `t` while capacity remains, and returns the
    /// time of the next injection event, if any. Deferred arrivals report `t`
    /// only once a slot is free.
    pub fn maybe_inject(&mut self, g: &mut GaussianOperator, t: f64, params: &BathParams) -> Result<Option<f64>> {
        check_3d(g)?;
        let block = Covariance::from_real(&params.particle_covariance())?;
        while let Some(arrival) = self.arrivals.get(self.next) {
            if arrival.time > t || g.registry.n_bath() >= params.max_active {
                break;
            }
            let center = system_mean_position(g);
            let state = arrival.state_at(t, center, params.mass);
            let id = ParticleId::Bath(self.next_id);
            inject_particle(g, id, &state, &block)?;
            self.next_id += 1;
            self.next += 1;
            self.injected += 1;
        }
        Ok(match self.next_time() {
            Some(_) if g.registry.n_bath() >= params.max_active => None,
            Some(time) => Some(time.max(t)),
            None => None,
        })
    }
}

/// Mean of the two branch positions of the system particle.
pub fn system_mean_position(g: &GaussianOperator) -> [f64; 3] {
    let a = g.x_alpha().as_slice();
    let b = g.x_beta().as_slice();
    [0.5 * (a[0] + b[0]), 0.5 * (a[2] + b[2]), 0.5 * (a[4] + b[4])]
}
