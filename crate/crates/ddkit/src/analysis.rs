//! Decay-curve statistics: bootstrap errors, interpolation and time averaging,
//! box summaries and the anchored decay fit with post-selection.

use std::cmp::Ordering;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::metrics::{self, MetricsError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("empty input")]
    Empty,
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("duplicate time {0}")]
    DuplicateTimes(f64),
    #[error("times must be strictly increasing")]
    UnsortedTimes,
    #[error("invalid counts: {0}")]
    InvalidCounts(String),
    #[error("shots must be positive")]
    ZeroShots,
    #[error("initial fidelity is zero")]
    ZeroInitialFidelity,
    #[error("{0}")]
    OutOfRange(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("prefix {prefix} exceeds {len} samples")]
    PrefixTooLarge { prefix: usize, len: usize },
    #[error(transparent)]
    Quadrature(#[from] MetricsError),
}

type Result<T> = std::result::Result<T, AnalysisError>;

/// Counts of a single fidelity decay measurement series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    pub sequence: String,
    pub state: String,
    pub calibration: u32,
    pub times: Vec<f64>,
    pub counts: Vec<(u64, u64)>,
}

impl DecayCurve {
    pub fn new(sequence: &str, state: &str, calibration: u32, times: Vec<f64>, counts: Vec<(u64, u64)>) -> Result<Self> {
        let curve = DecayCurve { sequence: sequence.to_string(), state: state.to_string(), calibration, times, counts };
        curve.validate()?;
        Ok(curve)
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.counts.len() {
            return Err(AnalysisError::InvalidCounts(format!("{} times but {} counts", self.times.len(), self.counts.len())));
        }
        check_grid(&self.times)?;
        for (i, &(z, s)) in self.counts.iter().enumerate() {
            if s == 0 {
                return Err(AnalysisError::ZeroShots);
            }
            if z > s {
                return Err(AnalysisError::InvalidCounts(format!("point {i}: zeros {z} > shots {s}")));
            }
        }
        Ok(())
    }

    pub fn fidelities(&self) -> Vec<f64> {
        self.counts.iter().map(|&(z, s)| z as f64 / s as f64).collect()
    }

    pub fn time_averaged(&self, total: f64, method: Interpolation) -> Result<f64> {
        time_averaged_fidelity(&self.times, &self.fidelities(), total, method)
    }

    /// Bootstrap errors per point, floored at 1/shots so that saturated points keep a finite weight.
    pub fn bootstrap_sigmas(&self, resamples: usize, seed: u64) -> Result<Vec<f64>> {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, &(z, s))| {
                let (_, sd) = bootstrap_fidelity(z, s, resamples, seed.wrapping_add(i as u64))?;
                Ok(sd.max(1.0 / s as f64))
            })
            .collect()
    }
}

fn check_grid(times: &[f64]) -> Result<()> {
    for w in times.windows(2) {
        if w[1] == w[0] {
            return Err(AnalysisError::DuplicateTimes(w[0]));
        }
        if !(w[1] > w[0]) {
            return Err(AnalysisError::UnsortedTimes);
        }
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(AnalysisError::UnsortedTimes);
    }
    Ok(())
}

/// Mean and sample standard deviation of resampled zero ratios.
pub fn bootstrap_fidelity(zeros: u64, shots: u64, resamples: usize, seed: u64) -> Result<(f64, f64)> {
    if shots == 0 {
        return Err(AnalysisError::ZeroShots);
    }
    if zeros > shots {
        return Err(AnalysisError::InvalidCounts(format!("zeros {zeros} > shots {shots}")));
    }
    if resamples < 100 {
        return Err(AnalysisError::InvalidParameter(format!("resamples {resamples} < 100")));
    }
    let p = zeros as f64 / shots as f64;
    if zeros == 0 || zeros == shots {
        return Ok((p, 0.0));
    }
    let dist = Binomial::new(shots, p).map_err(|e| AnalysisError::InvalidParameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<f64> = (0..resamples).map(|_| dist.sample(&mut rng) as f64 / shots as f64).collect();
    let mean = draws.iter().sum::<f64>() / resamples as f64;
    let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (resamples - 1) as f64;
    Ok((mean, var.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Hermite3,
    CubicSpline,
}

impl std::str::FromStr for Interpolation {
    type Err = AnalysisError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hermite3" => Ok(Interpolation::Hermite3),
            "cubic_spline" | "spline" => Ok(Interpolation::CubicSpline),
            _ => Err(AnalysisError::InvalidParameter(format!("unknown interpolation '{s}'"))),
        }
    }
}

/// Piecewise cubic in Hermite form: node values plus node slopes.
#[derive(Debug, Clone, PartialEq)]
pub struct Interpolant {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl Interpolant {
    pub fn nodes(&self) -> &[f64] {
        &self.xs
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    fn segment(&self, t: f64) -> usize {
        let n = self.xs.len();
        match self.xs.partition_point(|&x| x <= t) {
            0 => 0,
            k if k >= n => n - 2,
            k => k - 1,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let h = self.xs[i + 1] - self.xs[i];
        let s = (t - self.xs[i]) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.ys[i] + h10 * h * self.slopes[i] + h01 * self.ys[i + 1] + h11 * h * self.slopes[i + 1]
    }

    /// Exact integral over [a, b]: Gauss–Kronrod is exact on each cubic piece.
    pub fn integral(&self, a: f64, b: f64) -> Result<f64> {
        let mut cuts = vec![a];
        cuts.extend(self.xs.iter().copied().filter(|&x| x > a && x < b));
        cuts.push(b);
        let mut total = 0.0;
        for w in cuts.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let i = self.segment(mid);
            let piece = |t: f64| {
                let h = self.xs[i + 1] - self.xs[i];
                let s = (t - self.xs[i]) / h;
                let s2 = s * s;
                let s3 = s2 * s;
                (2.0 * s3 - 3.0 * s2 + 1.0) * self.ys[i]
                    + (s3 - 2.0 * s2 + s) * h * self.slopes[i]
                    + (-2.0 * s3 + 3.0 * s2) * self.ys[i + 1]
                    + (s3 - s2) * h * self.slopes[i + 1]
            };
            total += metrics::integrate(&piece, w[0], w[1], 1, 1e-12)?.value;
        }
        Ok(total)
    }
}

pub fn interpolate(times: &[f64], values: &[f64], method: Interpolation) -> Result<Interpolant> {
    if times.len() != values.len() {
        return Err(AnalysisError::InvalidParameter(format!("{} times but {} values", times.len(), values.len())));
    }
    if times.len() < 3 {
        return Err(AnalysisError::TooFewPoints { need: 3, got: times.len() });
    }
    check_grid(times)?;
    let slopes = match method {
        Interpolation::Hermite3 => lagrange_slopes(times, values),
        Interpolation::CubicSpline => not_a_knot_slopes(times, values),
    };
    Ok(Interpolant { xs: times.to_vec(), ys: values.to_vec(), slopes })
}

// Slope at node i from the cubic through four neighbouring nodes (three if n = 3).
fn lagrange_slopes(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let w = n.min(4);
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(1).min(n - w);
            let idx: Vec<usize> = (lo..lo + w).collect();
            let xi = xs[i];
            let mut d = 0.0;
            for &j in &idx {
                let lj = if j == i {
                    idx.iter().filter(|&&k| k != i).map(|&k| 1.0 / (xi - xs[k])).sum::<f64>()
                } else {
                    let num: f64 = idx.iter().filter(|&&k| k != i && k != j).map(|&k| xi - xs[k]).product();
                    let den: f64 = idx.iter().filter(|&&k| k != j).map(|&k| xs[j] - xs[k]).product();
                    num / den
                };
                d += ys[j] * lj;
            }
            d
        })
        .collect()
}

fn not_a_knot_slopes(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let dx: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    let m: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / dx[i]).collect();
    if n == 3 {
        return lagrange_slopes(xs, ys);
    }
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for i in 1..n - 1 {
        a[(i, i - 1)] = dx[i];
        a[(i, i)] = 2.0 * (dx[i - 1] + dx[i]);
        a[(i, i + 1)] = dx[i - 1];
        b[i] = 3.0 * (dx[i] * m[i - 1] + dx[i - 1] * m[i]);
    }
    let (d0, d1) = (dx[0], dx[1]);
    a[(0, 0)] = d1;
    a[(0, 1)] = d0 + d1;
    b[0] = ((d0 + 2.0 * (d0 + d1)) * d1 * m[0] + d0 * d0 * m[1]) / (d0 + d1);
    let (e1, e2) = (dx[n - 2], dx[n - 3]);
    a[(n - 1, n - 1)] = e2;
    a[(n - 1, n - 2)] = e1 + e2;
    b[n - 1] = (e1 * e1 * m[n - 3] + (2.0 * (e2 + e1) + e1) * e2 * m[n - 2]) / (e2 + e1);
    a.lu().solve(&b).map(|s| s.iter().copied().collect()).unwrap_or_else(|| lagrange_slopes(xs, ys))
}

/// Normalized time average (1/T)∫₀ᵀ f(t)/f(0) dt of the interpolated curve.
pub fn time_averaged_fidelity(times: &[f64], values: &[f64], total: f64, method: Interpolation) -> Result<f64> {
    if times.is_empty() {
        return Err(AnalysisError::Empty);
    }
    if times[0] != 0.0 {
        return Err(AnalysisError::OutOfRange(format!("curve starts at {} instead of 0", times[0])));
    }
    if !(total > 0.0) {
        return Err(AnalysisError::InvalidParameter(format!("T = {total}")));
    }
    let last = *times.last().unwrap();
    if total > last * (1.0 + 1e-12) {
        return Err(AnalysisError::OutOfRange(format!("T = {total} beyond data range {last}")));
    }
    if values[0] <= 0.0 {
        return Err(AnalysisError::ZeroInitialFidelity);
    }
    let interp = interpolate(times, values, method)?;
    Ok(interp.integral(0.0, total.min(last))? / (total * values[0]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
    pub mean: f64,
}

/// Smallest sample with at least x% of the data at or below it.
pub fn quantile(sorted: &[f64], x: f64) -> f64 {
    let n = sorted.len();
    let k = ((x * n as f64 / 100.0) - 1e-9).ceil().max(1.0) as usize;
    sorted[k.min(n) - 1]
}

pub fn quartile_summary(values: &[f64]) -> Result<BoxStats> {
    if values.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    Ok(BoxStats {
        min: v[0],
        q25: quantile(&v, 25.0),
        median: quantile(&v, 50.0),
        q75: quantile(&v, 75.0),
        max: v[v.len() - 1],
        mean: v.iter().sum::<f64>() / v.len() as f64,
    })
}

/// Prefix means E_N over the first N samples.
pub fn haar_convergence(values: &[f64], prefixes: &[usize]) -> Result<Vec<f64>> {
    prefixes
        .iter()
        .map(|&p| {
            if p == 0 {
                return Err(AnalysisError::InvalidParameter("prefix 0".into()));
            }
            if p > values.len() {
                return Err(AnalysisError::PrefixTooLarge { prefix: p, len: values.len() });
            }
            Ok(values[..p].iter().sum::<f64>() / p as f64)
        })
        .collect()
}

/// Γ(t) = ½(e^{−t/λ} cos γt + e^{−t/α}).
pub fn decay_gamma(t: f64, lambda: f64, gamma: f64, alpha: f64) -> f64 {
    0.5 * ((-t / lambda).exp() * (gamma * t).cos() + (-t / alpha).exp())
}

/// Decay model anchored at f(0) = f0 and f(t_f) = f_t.
pub fn decay_model(t: f64, p: [f64; 3], f0: f64, ft: f64, tf: f64) -> f64 {
    let g_end = decay_gamma(tf, p[0], p[1], p[2]);
    (ft - f0) / (g_end - 1.0) * (decay_gamma(t, p[0], p[1], p[2]) - 1.0) + f0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitData {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub sigmas: Vec<f64>,
}

impl FitData {
    pub fn from_curve(curve: &DecayCurve, resamples: usize, seed: u64) -> Result<Self> {
        Ok(FitData { times: curve.times.clone(), values: curve.fidelities(), sigmas: curve.bootstrap_sigmas(resamples, seed)? })
    }

    fn validate(&self) -> Result<()> {
        let n = self.times.len();
        if self.values.len() != n || self.sigmas.len() != n {
            return Err(AnalysisError::InvalidParameter("times, values and sigmas differ in length".into()));
        }
        if n < 5 {
            return Err(AnalysisError::TooFewPoints { need: 5, got: n });
        }
        check_grid(&self.times)?;
        if self.times[0] != 0.0 {
            return Err(AnalysisError::OutOfRange(format!("fit window starts at {} instead of 0", self.times[0])));
        }
        if let Some(s) = self.sigmas.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(AnalysisError::InvalidParameter(format!("sigma {s} must be positive")));
        }
        Ok(())
    }

    /// Sample spacing used for the Nyquist band (mean spacing on non-uniform grids).
    pub fn spacing(&self) -> f64 {
        (self.times[self.times.len() - 1] - self.times[0]) / (self.times.len() - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rejection {
    NonConvergent,
    SingularNormalMatrix,
    PredictionOutOfRange,
    Insignificant(String),
    AboveNyquist,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub seed_index: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub std_errors: [f64; 3],
    pub half_widths: [f64; 3],
    pub chi2: f64,
    pub aicc: f64,
    pub iterations: usize,
    pub converged: bool,
    pub accepted: bool,
    pub rejections: Vec<Rejection>,
    /// Objective value after each accepted optimizer step, starting at the seed.
    pub objective_trace: Vec<f64>,
}

impl FitResult {
    pub fn params(&self) -> [f64; 3] {
        [self.lambda, self.gamma, self.alpha]
    }
}

/// Seed grid {0, B/4, B/2} × {T/2, T, 2T} × {λ, 10λ} for (γ, λ, α), returned as (λ, γ, α).
pub fn default_seeds(tf: f64, dt: f64) -> Vec<[f64; 3]> {
    let b = nyquist_band(dt);
    let mut out = Vec::with_capacity(18);
    for g in [0.0, b / 4.0, b / 2.0] {
        for l in [tf / 2.0, tf, 2.0 * tf] {
            for a in [l, 10.0 * l] {
                out.push([l, g, a]);
            }
        }
    }
    out
}

/// B = 2π/(2 dt).
pub fn nyquist_band(dt: f64) -> f64 {
    PI / dt
}

pub fn fold_gamma(gamma: f64, dt: f64) -> f64 {
    gamma.abs().rem_euclid(nyquist_band(dt))
}

const PARAM_NAMES: [&str; 3] = ["lambda", "gamma", "alpha"];
const MAX_ITER: usize = 400;
const DIVERGED: f64 = 1e6;
const RANGE_GRID: usize = 400;

struct Scaled<'a> {
    u: Vec<f64>,
    y: &'a [f64],
    w: Vec<f64>,
    f0: f64,
    ft: f64,
}

impl Scaled<'_> {
    fn residuals(&self, q: &Vector3<f64>) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let (l, g, a) = (q[0], q[1], q[2]);
        let n = self.u.len();
        let gam = |u: f64| 0.5 * ((-u / l).exp() * (g * u).cos() + (-u / a).exp());
        let dgam = |u: f64| {
            let el = (-u / l).exp();
            Vector3::new(0.5 * el * (g * u).cos() * u / (l * l), -0.5 * el * u * (g * u).sin(), 0.5 * (-u / a).exp() * u / (a * a))
        };
        let g1 = gam(1.0) - 1.0;
        let c = (self.ft - self.f0) / g1;
        let dc = -dgam(1.0) * (c / g1);
        let mut r = DVector::zeros(n);
        let mut j = DMatrix::zeros(n, 3);
        for i in 0..n {
            let gi = gam(self.u[i]) - 1.0;
            r[i] = (c * gi + self.f0 - self.y[i]) * self.w[i];
            let d = dgam(self.u[i]) * c + dc * gi;
            for k in 0..3 {
                j[(i, k)] = d[k] * self.w[i];
            }
        }
        (r.iter().all(|x| x.is_finite()) && j.iter().all(|x| x.is_finite())).then_some((r, j))
    }

    fn predict(&self, q: &Vector3<f64>, u: f64) -> f64 {
        decay_model(u, [q[0], q[1], q[2]], self.f0, self.ft, 1.0)
    }
}

struct LmOutcome {
    q: Vector3<f64>,
    jac: DMatrix<f64>,
    chi2: f64,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
}

fn levenberg_marquardt(prob: &Scaled, q0: Vector3<f64>) -> Option<LmOutcome> {
    let (mut r, mut jac) = prob.residuals(&q0)?;
    let mut q = q0;
    let mut cost = r.norm_squared();
    let mut trace = vec![cost];
    let mut mu = 1e-3;
    let mut converged = false;
    let mut it = 0;
    while it < MAX_ITER {
        it += 1;
        let jtj = jac.tr_mul(&jac);
        let grad = jac.tr_mul(&r);
        let dmax = (0..3).map(|k| jtj[(k, k)]).fold(0.0, f64::max);
        if dmax == 0.0 {
            break;
        }
        let mut a: Matrix3<f64> = Matrix3::from_fn(|i, k| jtj[(i, k)]);
        for k in 0..3 {
            a[(k, k)] += mu * jtj[(k, k)].max(1e-12 * dmax);
        }
        let g3 = Vector3::new(grad[0], grad[1], grad[2]);
        let step = match a.lu().solve(&(-g3)) {
            Some(s) => s,
            None => {
                mu *= 4.0;
                continue;
            }
        };
        let trial = q + step;
        let accepted = prob.residuals(&trial).map(|(rn, jn)| (rn.norm_squared(), rn, jn)).filter(|(c, _, _)| *c < cost);
        match accepted {
            Some((new_cost, rn, jn)) => {
                let drop = cost - new_cost;
                q = trial;
                r = rn;
                jac = jn;
                cost = new_cost;
                trace.push(cost);
                mu = (mu / 3.0).max(1e-15);
                if q[0].abs() > DIVERGED || q[2].abs() > DIVERGED {
                    break;
                }
                if drop <= 1e-12 * cost.max(1e-300) || step.norm() <= 1e-12 * (q.norm() + 1e-12) {
                    converged = true;
                    break;
                }
            }
            None => {
                mu *= 2.0;
                if mu > 1e16 {
                    // No descent direction left at working precision.
                    converged = true;
                    break;
                }
            }
        }
    }
    Some(LmOutcome { q, jac, chi2: cost, trace, iterations: it, converged })
}

/// Weighted least-squares fit of the anchored decay model from each seed (λ, γ, α).
/// A fit is accepted when it converged, its covariance exists, its predictions stay in
/// [0, 1] over the window, every parameter exceeds its half-width and |γ| ≤ π/dt.
pub fn fit_decay(data: &FitData, seeds: &[[f64; 3]]) -> Result<Vec<FitResult>> {
    data.validate()?;
    let n = data.times.len();
    let tf = data.times[n - 1];
    let prob = Scaled {
        u: data.times.iter().map(|t| t / tf).collect(),
        y: &data.values,
        w: data.sigmas.iter().map(|s| 1.0 / s).collect(),
        f0: data.values[0],
        ft: data.values[n - 1],
    };
    let scale = Vector3::new(tf, 1.0 / tf, tf);
    let band = nyquist_band(data.spacing());
    let tq = StudentsT::new(0.0, 1.0, (n - 3) as f64)
        .map_err(|e| AnalysisError::InvalidParameter(e.to_string()))?
        .inverse_cdf(0.975);
    let log_norm: f64 = data.sigmas.iter().map(|s| (2.0 * PI * s * s).ln()).sum();
    let k = 4.0;
    let nn = n as f64;
    let aicc_pen = if nn - k - 1.0 > 0.0 { 2.0 * k + 2.0 * k * (k + 1.0) / (nn - k - 1.0) } else { f64::INFINITY };

    let mut out = Vec::with_capacity(seeds.len());
    for (si, s) in seeds.iter().enumerate() {
        let q0 = Vector3::new(s[0] / tf, s[1] * tf, s[2] / tf);
        let mut res = FitResult {
            seed_index: si,
            lambda: s[0],
            gamma: s[1],
            alpha: s[2],
            std_errors: [f64::NAN; 3],
            half_widths: [f64::NAN; 3],
            chi2: f64::NAN,
            aicc: f64::INFINITY,
            iterations: 0,
            converged: false,
            accepted: false,
            rejections: Vec::new(),
            objective_trace: Vec::new(),
        };
        let Some(lm) = levenberg_marquardt(&prob, q0) else {
            res.rejections.push(Rejection::NonConvergent);
            out.push(res);
            continue;
        };
        let p = lm.q.component_mul(&scale);
        res.lambda = p[0];
        res.gamma = p[1];
        res.alpha = p[2];
        res.chi2 = lm.chi2;
        res.aicc = lm.chi2 + log_norm + aicc_pen;
        res.iterations = lm.iterations;
        res.converged = lm.converged;
        res.objective_trace = lm.trace;
        if !lm.converged {
            res.rejections.push(Rejection::NonConvergent);
        }
        let normal = lm.jac.tr_mul(&lm.jac);
        let cov = normal_inverse(&normal);
        match &cov {
            Some(c) => {
                for k in 0..3 {
                    let se = c[(k, k)].max(0.0).sqrt() * scale[k];
                    res.std_errors[k] = se;
                    res.half_widths[k] = se * tq;
                }
            }
            None => res.rejections.push(Rejection::SingularNormalMatrix),
        }
        let in_range = (0..RANGE_GRID).all(|i| {
            let f = prob.predict(&lm.q, i as f64 / (RANGE_GRID - 1) as f64);
            f.is_finite() && (0.0..=1.0).contains(&f)
        });
        if !in_range {
            res.rejections.push(Rejection::PredictionOutOfRange);
        }
        if res.gamma.abs() > band {
            res.rejections.push(Rejection::AboveNyquist);
        }
        if cov.is_some() {
            for (k, name) in PARAM_NAMES.iter().enumerate() {
                if !(p[k].abs() > res.half_widths[k]) {
                    res.rejections.push(Rejection::Insignificant(name.to_string()));
                }
            }
        }
        res.accepted = res.rejections.is_empty();
        out.push(res);
    }
    Ok(out)
}

fn normal_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    if !(max > 0.0) || min <= 1e-14 * max {
        return None;
    }
    m.clone().try_inverse()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub best: Option<FitResult>,
    pub rejected: Vec<(usize, Vec<Rejection>)>,
}

/// Keep accepted fits, pick the lowest AICc (ties by seed index) and fold γ into the Nyquist band.
pub fn postselect_and_fold(fits: &[FitResult], dt: f64) -> Result<Selection> {
    if !(dt > 0.0) {
        return Err(AnalysisError::InvalidParameter(format!("dt = {dt}")));
    }
    let rejected = fits.iter().filter(|f| !f.accepted).map(|f| (f.seed_index, f.rejections.clone())).collect();
    let best = fits
        .iter()
        .filter(|f| f.accepted)
        .min_by(|a, b| a.aicc.partial_cmp(&b.aicc).unwrap_or(Ordering::Equal).then(a.seed_index.cmp(&b.seed_index)))
        .map(|f| {
            let mut f = f.clone();
            f.gamma = fold_gamma(f.gamma, dt);
            f
        });
    Ok(Selection { best, rejected })
}

/// Fits from the default seed grid and post-selects.
pub fn fit_and_select(data: &FitData) -> Result<Selection> {
    data.validate()?;
    let dt = data.spacing();
    let fits = fit_decay(data, &default_seeds(*data.times.last().unwrap(), dt))?;
    postselect_and_fold(&fits, dt)
}
