//! Coherence of the evolved `|a><b|` component and exponential decay fits.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::phase_space::{GaussianOperator, PreparedGaussian};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoherenceMode {
    /// Hilbert-Schmidt norm of the realization-averaged operator.
    #[default]
    AveragedOperator,
    /// Average of the per-realization Hilbert-Schmidt norms.
    MeanOfNorms,
}

impl CoherenceMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CoherenceMode::AveragedOperator => "averaged-operator",
            CoherenceMode::MeanOfNorms => "mean-of-norms",
        }
    }
}

impl std::str::FromStr for CoherenceMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "averaged-operator" => Ok(CoherenceMode::AveragedOperator),
            "mean-of-norms" => Ok(CoherenceMode::MeanOfNorms),
            other => Err(format!("unknown coherence mode '{other}'")),
        }
    }
}

/// Coherence estimate with its standard error. In averaged-operator mode the
/// error combines the jackknife spread with the finite-ensemble bias of the
/// plain average, which dominates once the coherence reaches `~1/sqrt(M)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

fn prepare_all(ops: &[GaussianOperator]) -> Result<Vec<PreparedGaussian>> {
    let first = ops.first().ok_or(Error::EmptyEnsemble)?;
    let n = first.dim();
    ops.iter()
        .map(|g| {
            if g.dim() != n {
                return Err(Error::DimensionMismatch { expected: n, found: g.dim() });
            }
            PreparedGaussian::new(g)
        })
        .collect()
}

pub fn coherence_norm(ops: &[GaussianOperator], mode: CoherenceMode) -> Result<f64> {
    Ok(coherence_estimate(ops, mode)?.value)
}

/// Coherence of an ensemble of reduced operators. Row sums of the Gram matrix
/// are computed in parallel and reduced in index order, so the result does not
/// depend on the thread count.
pub fn coherence_estimate(ops: &[GaussianOperator], mode: CoherenceMode) -> Result<Estimate> {
    let prepared = prepare_all(ops)?;
    let m = prepared.len();
    match mode {
        CoherenceMode::AveragedOperator => {
            // rows[i] = (sum_j Re <i, j>, Re <i, i>)
            let rows: Vec<(f64, f64)> = (0..m)
                .into_par_iter()
                .map(|i| {
                    let mut sum = 0.0;
                    let mut diag = 0.0;
                    for j in 0..m {
                        let v = prepared[i].ln_hs_inner(&prepared[j])?.exp().re;
                        if i == j {
                            diag = v;
                        }
                        sum += v;
                    }
                    Ok((sum, diag))
                })
                .collect::<Result<_>>()?;
            let total: f64 = rows.iter().map(|r| r.0).sum();
            let value = total.max(0.0).sqrt() / m as f64;
            let stderr = if m > 1 {
                let loo: Vec<f64> = rows
                    .iter()
                    .map(|(row, diag)| (total - 2.0 * row + diag).max(0.0).sqrt() / (m - 1) as f64)
                    .collect();
                // the squared norm of the plain average is biased upward by the
                // diagonal terms; the bias enters the error budget
                let diag: f64 = rows.iter().map(|r| r.1).sum();
                let unbiased = ((total - diag) / (m * (m - 1)) as f64).max(0.0).sqrt();
                jackknife(&loo).hypot(value - unbiased)
            } else {
                0.0
            };
            Ok(Estimate { value, stderr })
        }
        CoherenceMode::MeanOfNorms => {
            let norms: Vec<f64> = prepared
                .par_iter()
                .map(|p| Ok(p.ln_hs_inner(p)?.exp().re.max(0.0).sqrt()))
                .collect::<Result<_>>()?;
            let value = norms.iter().sum::<f64>() / m as f64;
            let stderr = if m > 1 {
                let var = norms.iter().map(|v| (v - value).powi(2)).sum::<f64>() / (m - 1) as f64;
                (var / m as f64).sqrt()
            } else {
                0.0
            };
            Ok(Estimate { value, stderr })
        }
    }
}

fn jackknife(loo: &[f64]) -> f64 {
    let m = loo.len() as f64;
    let mean = loo.iter().sum::<f64>() / m;
    ((m - 1.0) / m * loo.iter().map(|v| (v - mean).powi(2)).sum::<f64>()).sqrt()
}

/// Ensemble coherence against time (in oscillator periods), normalized to 1 at t = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_realizations: usize,
}

impl CoherenceSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>, stderr: Vec<f64>, n_realizations: usize) -> Result<Self> {
        if values.len() != times.len() {
            return Err(Error::DimensionMismatch { expected: times.len(), found: values.len() });
        }
        if stderr.len() != times.len() {
            return Err(Error::DimensionMismatch { expected: times.len(), found: stderr.len() });
        }
        if let Some(i) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidDimension(format!("times not strictly increasing at index {}", i + 1)));
        }
        Ok(Self { times, values, stderr, n_realizations })
    }

    /// Divides values and errors by the first value.
    pub fn normalized(mut self) -> Result<Self> {
        let v0 = *self.values.first().ok_or(Error::EmptyEnsemble)?;
        if !(v0 > 0.0) {
            return Err(Error::NonFinite { index: 0 });
        }
        for (v, s) in self.values.iter_mut().zip(&mut self.stderr) {
            *v /= v0;
            *s /= v0;
        }
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    /// Per oscillator period.
    pub gamma: f64,
    pub gamma_stderr: f64,
    pub fit_window: (f64, f64),
    pub r_squared: f64,
    pub n_points: usize,
}

/// Largest relative error a point may carry and still enter the fit.
pub const NOISE_FLOOR: f64 = 0.5;
pub const MIN_FIT_POINTS: usize = 5;

/// Weighted least squares of `ln(value)` against time over the longest prefix
/// of points above the noise floor. Weights are inverse squared relative
/// errors; exact points (zero error) take the weight of the most precise
/// noisy point, or all points are weighted equally if none carries an error.
pub fn fit_decay(series: &CoherenceSeries) -> Result<DecayFit> {
    let usable = series
        .values
        .iter()
        .zip(&series.stderr)
        .take_while(|(v, s)| v.is_finite() && **v > 0.0 && s.is_finite() && **s <= NOISE_FLOOR * **v)
        .count();
    if usable < MIN_FIT_POINTS {
        return Err(Error::InsufficientData { needed: MIN_FIT_POINTS, found: usable });
    }
    let t = &series.times[..usable];
    let y: Vec<f64> = series.values[..usable].iter().map(|v| v.ln()).collect();
    let rel: Vec<f64> = (0..usable).map(|i| series.stderr[i] / series.values[i]).collect();
    let floor = rel.iter().copied().filter(|r| *r > 0.0).fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = if floor.is_finite() {
        rel.iter().map(|r| 1.0 / r.max(floor).powi(2)).collect()
    } else {
        vec![1.0; usable]
    };

    let sw: f64 = w.iter().sum();
    let tm = w.iter().zip(t).map(|(w, t)| w * t).sum::<f64>() / sw;
    let ym = w.iter().zip(&y).map(|(w, y)| w * y).sum::<f64>() / sw;
    let mut stt = 0.0;
    let mut sty = 0.0;
    let mut syy = 0.0;
    for i in 0..usable {
        let dt = t[i] - tm;
        let dy = y[i] - ym;
        stt += w[i] * dt * dt;
        sty += w[i] * dt * dy;
        syy += w[i] * dy * dy;
    }
    let slope = sty / stt;
    let ss_res: f64 = (0..usable)
        .map(|i| {
            let r = y[i] - ym - slope * (t[i] - tm);
            w[i] * r * r
        })
        .sum();
    let dof = (usable - 2) as f64;
    let gamma_stderr = (ss_res / dof / stt).sqrt();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(DecayFit {
        gamma: -slope,
        gamma_stderr,
        fit_window: (t[0], t[usable - 1]),
        r_squared,
        n_points: usable,
    })
}
