//! Fidelity, η_DD, filter functions, decoherence integrals and closed-form bounds.

use std::f64::consts::PI;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, kron, op_norm, Mat, C64};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("input not normalized: {0}")]
    NotNormalized(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("operator is not unitary (defect {0:e})")]
    NotUnitary(f64),
    #[error("pulse times must satisfy 0 < t_1 < ... < t_n <= T")]
    UnsortedTimes,
    #[error("quadrature did not converge: {0}")]
    NonConvergent(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Survival probability ⟨ψ|ρ|ψ⟩.
pub fn state_fidelity(rho: &Mat, psi: &DVector<C64>) -> Result<f64, MetricsError> {
    if rho.nrows() != psi.len() || rho.ncols() != psi.len() {
        return Err(MetricsError::DimensionMismatch(format!("ρ is {}x{}, ψ has {}", rho.nrows(), rho.ncols(), psi.len())));
    }
    let tr = rho.trace();
    if (tr - Complex64::new(1.0, 0.0)).norm() > 1e-8 {
        return Err(MetricsError::NotNormalized(format!("tr ρ = {tr}")));
    }
    let n = psi.norm();
    if (n - 1.0).abs() > 1e-8 {
        return Err(MetricsError::NotNormalized(format!("‖ψ‖ = {n}")));
    }
    let f = (psi.adjoint() * rho * psi)[(0, 0)].re;
    Ok(f.clamp(0.0, 1.0))
}

/// Distance of a joint unitary from the nearest U0 ⊗ B′.
pub fn eta_dd(u: &Mat, u0: &Mat) -> Result<f64, MetricsError> {
    let ds = u0.nrows();
    if ds == 0 || u.nrows() % ds != 0 || u.nrows() != u.ncols() {
        return Err(MetricsError::DimensionMismatch(format!("{}x{} joint vs {ds} system", u.nrows(), u.ncols())));
    }
    let defect = linalg::unitarity_defect(u).max(linalg::unitarity_defect(u0));
    if defect > 1e-8 {
        return Err(MetricsError::NotUnitary(defect));
    }
    let db = u.nrows() / ds;
    let m = linalg::partial_trace_system(&(kron(&u0.adjoint(), &linalg::eye(db)) * u), ds, db) * linalg::c(1.0 / ds as f64, 0.0);
    let b = linalg::polar_unitary(&m);
    Ok(op_norm(&(u - kron(u0, &b))))
}

/// Coefficients and times of g(ω) = Σ c_k e^{iω s_k}.
fn filter_terms(times: &[f64], total: f64) -> Result<Vec<(f64, f64)>, MetricsError> {
    let mut prev = 0.0;
    for &t in times {
        if !(t > prev) || t > total {
            return Err(MetricsError::UnsortedTimes);
        }
        prev = t;
    }
    let n = times.len();
    let mut terms = vec![(0.0, 1.0)];
    for (j, &t) in times.iter().enumerate() {
        terms.push((t, 2.0 * sign(j + 1)));
    }
    terms.push((total, sign(n + 1)));
    // merge coincident times (a pulse exactly at T)
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(terms.len());
    for (s, c) in terms {
        match merged.last_mut() {
            Some(last) if last.0 == s => last.1 += c,
            _ => merged.push((s, c)),
        }
    }
    Ok(merged)
}

fn sign(k: usize) -> f64 {
    if k % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// F(ωT) = |1 + (−1)^{n+1} e^{iωT} + 2 Σ_j (−1)^j e^{iωt_j}|².
pub fn filter_function(times: &[f64], total: f64, omega: f64) -> Result<f64, MetricsError> {
    let terms = filter_terms(times, total)?;
    let g: C64 = terms.iter().map(|&(s, c)| C64::from_polar(c, omega * s)).sum();
    Ok(g.norm_sqr())
}

/// F(ω)/ω² evaluated without cancellation near ω = 0.
pub fn filter_over_omega2(times: &[f64], total: f64, omega: f64) -> Result<f64, MetricsError> {
    filter_terms(times, total)?;
    Ok(filter_ratio(times, total, omega))
}

/// |∫ y(t) e^{iωt} dt|² with y the ±1 switching function; equals F/ω².
fn filter_ratio(times: &[f64], total: f64, omega: f64) -> f64 {
    let mut acc = C64::new(0.0, 0.0);
    let mut a = 0.0;
    for (j, &b) in times.iter().chain(std::iter::once(&total)).enumerate() {
        let s = b - a;
        if s > 0.0 {
            let x = 0.5 * omega * s;
            let sinc = if x.abs() < 1e-8 { 1.0 - x * x / 6.0 } else { x.sin() / x };
            acc += C64::from_polar(sign(j) * s * sinc, omega * a + x);
        }
        a = b;
    }
    acc.norm_sqr()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpectralDensity {
    /// S = A ω^s e^{−ω/ω_c}.
    Ohmic { amplitude: f64, cutoff: f64, exponent: f64 },
    /// S = A ω^s for ω ≤ ω_c, zero above.
    SharpOhmic { amplitude: f64, cutoff: f64, exponent: f64 },
    /// S = A γ² / ((ω − ω_0)² + γ²).
    Lorentzian { amplitude: f64, width: f64, center: f64 },
    /// S = A / ω on [ω_min, ω_max].
    OneOverF { amplitude: f64, omega_min: f64, omega_max: f64 },
    /// S = A on [0, ∞).
    White { amplitude: f64 },
    /// Linear interpolation of samples, zero outside.
    Tabulated { omega: Vec<f64>, values: Vec<f64> },
}

impl SpectralDensity {
    pub fn eval(&self, w: f64) -> f64 {
        if w < 0.0 {
            return 0.0;
        }
        match self {
            SpectralDensity::Ohmic { amplitude, cutoff, exponent } => amplitude * w.powf(*exponent) * (-w / cutoff).exp(),
            SpectralDensity::SharpOhmic { amplitude, cutoff, exponent } => {
                if w <= *cutoff {
                    amplitude * w.powf(*exponent)
                } else {
                    0.0
                }
            }
            SpectralDensity::Lorentzian { amplitude, width, center } => amplitude * width * width / ((w - center).powi(2) + width * width),
            SpectralDensity::OneOverF { amplitude, omega_min, omega_max } => {
                if w >= *omega_min && w <= *omega_max {
                    amplitude / w
                } else {
                    0.0
                }
            }
            SpectralDensity::White { amplitude } => *amplitude,
            SpectralDensity::Tabulated { omega, values } => {
                if omega.is_empty() || w < omega[0] || w > omega[omega.len() - 1] {
                    return 0.0;
                }
                let k = omega.partition_point(|&x| x <= w).min(omega.len() - 1).max(1);
                let (x0, x1) = (omega[k - 1], omega[k]);
                let f = if x1 > x0 { (w - x0) / (x1 - x0) } else { 0.0 };
                values[k - 1] + f * (values[k] - values[k - 1])
            }
        }
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        let bad = |m: &str| Err(MetricsError::InvalidParameter(m.to_string()));
        match self {
            SpectralDensity::Ohmic { amplitude, cutoff, exponent } | SpectralDensity::SharpOhmic { amplitude, cutoff, exponent } => {
                if *amplitude < 0.0 || !(*cutoff > 0.0) {
                    return bad("ohmic needs amplitude >= 0 and cutoff > 0");
                }
                if *exponent < -1.0 + 1e-12 {
                    return bad("ohmic exponent must exceed -1 for integrability");
                }
            }
            SpectralDensity::Lorentzian { amplitude, width, .. } => {
                if *amplitude < 0.0 || !(*width > 0.0) {
                    return bad("lorentzian needs amplitude >= 0 and width > 0");
                }
            }
            SpectralDensity::OneOverF { amplitude, omega_min, omega_max } => {
                if *amplitude < 0.0 || !(*omega_min > 0.0) || !(omega_max > omega_min) {
                    return bad("1/f needs 0 < omega_min < omega_max");
                }
            }
            SpectralDensity::White { amplitude } => {
                if *amplitude < 0.0 {
                    return bad("negative amplitude");
                }
            }
            SpectralDensity::Tabulated { omega, values } => {
                if omega.len() != values.len() || omega.len() < 2 {
                    return bad("tabulated spectrum needs matching arrays of length >= 2");
                }
                if omega.windows(2).any(|w| !(w[1] > w[0])) || omega[0] < 0.0 {
                    return bad("tabulated frequencies must be increasing and non-negative");
                }
                if values.iter().any(|v| *v < 0.0) {
                    return bad("tabulated values must be non-negative");
                }
            }
        }
        Ok(())
    }

    /// Scale the amplitude by s.
    pub fn scaled(&self, s: f64) -> SpectralDensity {
        let mut out = self.clone();
        match &mut out {
            SpectralDensity::Ohmic { amplitude, .. }
            | SpectralDensity::SharpOhmic { amplitude, .. }
            | SpectralDensity::Lorentzian { amplitude, .. }
            | SpectralDensity::OneOverF { amplitude, .. }
            | SpectralDensity::White { amplitude } => *amplitude *= s,
            SpectralDensity::Tabulated { values, .. } => values.iter_mut().for_each(|v| *v *= s),
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

// Gauss–Kronrod 7/15 nodes and weights on [-1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss–Kronrod over [a, b] split into `panels` equal pieces first.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, panels: usize, tol: f64) -> Result<Quadrature, MetricsError> {
    let mut value = 0.0;
    let mut error = 0.0;
    let mut evals = 0;
    let mut stack: Vec<(f64, f64, u32)> = Vec::new();
    let panels = panels.max(1);
    for k in (0..panels).rev() {
        let lo = a + (b - a) * k as f64 / panels as f64;
        let hi = a + (b - a) * (k + 1) as f64 / panels as f64;
        stack.push((lo, hi, 0));
    }
    let width = b - a;
    while let Some((lo, hi, depth)) = stack.pop() {
        let (v, e) = gk15(f, lo, hi);
        evals += 15;
        let local = tol * (hi - lo) / width;
        if e <= local.max(1e-15 * v.abs()) || hi - lo < 1e-14 * width {
            value += v;
            error += e;
        } else if depth >= 60 {
            return Err(MetricsError::NonConvergent(format!("subdivision limit on [{lo:e}, {hi:e}]")));
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((mid, hi, depth + 1));
            stack.push((lo, mid, depth + 1));
        }
        if evals > 50_000_000 {
            return Err(MetricsError::NonConvergent("evaluation budget exhausted".into()));
        }
    }
    Ok(Quadrature { value, error, evaluations: evals })
}

/// χ(t) = (2/π) ∫₀^∞ S(ω) F(ωt)/ω² dω with absolute tolerance 1e-9.
pub fn coherence_chi(s: &SpectralDensity, times: &[f64], total: f64) -> Result<Quadrature, MetricsError> {
    coherence_chi_tol(s, times, total, 1e-9)
}

pub fn coherence_chi_tol(s: &SpectralDensity, times: &[f64], total: f64, tol: f64) -> Result<Quadrature, MetricsError> {
    s.validate()?;
    let terms = filter_terms(times, total)?;
    if !(total > 0.0) {
        return Err(MetricsError::InvalidParameter("total time must be positive".into()));
    }
    let fmax = terms.iter().map(|t| t.1.abs()).sum::<f64>().powi(2);
    let k = 2.0 / PI;
    // upper limit W and an analytic tail contribution beyond it
    let budget = 0.1 * tol;
    let (lo, hi, tail) = match s {
        SpectralDensity::SharpOhmic { cutoff, .. } => (0.0, *cutoff, 0.0),
        SpectralDensity::OneOverF { omega_min, omega_max, .. } => (*omega_min, *omega_max, 0.0),
        SpectralDensity::Tabulated { omega, .. } => (omega[0], omega[omega.len() - 1], 0.0),
        SpectralDensity::Ohmic { amplitude, cutoff, exponent } => {
            let mut w = cutoff * (exponent.max(0.0) + 10.0);
            loop {
                let ratio = (exponent - 2.0).max(0.0) * cutoff / w;
                let bound = k * fmax * amplitude * w.powf(exponent - 2.0) * (-w / cutoff).exp() * cutoff / (1.0 - ratio);
                if ratio < 0.5 && bound < budget {
                    break;
                }
                w *= 1.5;
                if w > cutoff * 1e4 {
                    return Err(MetricsError::NonConvergent("ohmic tail".into()));
                }
            }
            (0.0, w, 0.0)
        }
        SpectralDensity::Lorentzian { amplitude, width, center } => {
            let mut w = 2.0 * center.abs() + 10.0 * width;
            while k * fmax * 4.0 * amplitude * width * width / (3.0 * w.powi(3)) > budget {
                w *= 1.5;
            }
            (0.0, w, 0.0)
        }
        SpectralDensity::White { amplitude } => {
            // ∫_W^∞ F/ω² = Σ|c|²/W + R with |R| ≤ Σ_{j≠k} 2|c_j c_k| / (|s_j − s_k| W²)
            let mean: f64 = terms.iter().map(|t| t.1 * t.1).sum();
            let mut cross = 0.0;
            for (i, a) in terms.iter().enumerate() {
                for (j, b) in terms.iter().enumerate() {
                    if i != j {
                        cross += 2.0 * (a.1 * b.1).abs() / (a.0 - b.0).abs();
                    }
                }
            }
            let w = (k * amplitude * cross / budget).sqrt().max(20.0 * PI / total);
            (0.0, w, k * amplitude * mean / w)
        }
    };
    if hi <= lo {
        return Ok(Quadrature { value: tail, error: 0.0, evaluations: 0 });
    }
    let f = |w: f64| k * s.eval(w) * filter_ratio(times, total, w);
    // one panel per half oscillation of the slowest-varying filter term
    let span = total.max(1e-300);
    let panels = (((hi - lo) * span / PI).ceil() as usize).clamp(1, 2_000_000);
    let q = integrate(&f, lo, hi, panels, 0.9 * tol)?;
    Ok(Quadrature { value: q.value + tail, error: q.error + budget, evaluations: q.evaluations })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TheoryKind {
    Xy4,
    Edd,
    Cdd(u32),
}

/// Closed-form η bounds. For XY4 a nonzero Δ adds 4JΔ; for CDD_n the value is floored
/// at 16ΔJ. `c` is the constant in the CDD bound.
pub fn theory_eta(kind: TheoryKind, j: f64, eps: f64, tau: f64, delta: f64, c: f64) -> Result<f64, MetricsError> {
    if j < 0.0 || eps < 0.0 || tau < 0.0 || delta < 0.0 || c < 0.0 {
        return Err(MetricsError::InvalidParameter("scales must be non-negative".into()));
    }
    let bracket = |k: f64| {
        let x = k * eps * tau;
        (k * j * tau) * (0.5 * x + 2.0 / 9.0 * x * x)
    };
    Ok(match kind {
        TheoryKind::Xy4 => 4.0 * j * delta + bracket(4.0),
        TheoryKind::Edd => bracket(8.0),
        TheoryKind::Cdd(n) => {
            if n == 0 {
                return Err(MetricsError::InvalidParameter("CDD level must be >= 1".into()));
            }
            let nf = n as f64;
            let main = 4f64.powf(nf * (nf + 3.0) / 2.0) * (c * eps * tau).powf(nf) * (j * tau);
            main.max(16.0 * delta * j)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimalLevel {
    pub level: u32,
    /// Set when the input lies outside the regime where concatenation helps.
    pub warning: bool,
}

/// n_opt = ⌊log₄(1/x) − 1⌋, clamped at 0.
pub fn cdd_optimal_level(x: f64) -> Result<OptimalLevel, MetricsError> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(MetricsError::InvalidParameter(format!("c̄ετ must be positive (got {x})")));
    }
    let raw = (1.0 / x).ln() / 4f64.ln() - 1.0;
    // absorb rounding of log at exact powers of 4
    let level = (raw + 1e-12).floor();
    if level < 0.0 || x >= 1.0 {
        return Ok(OptimalLevel { level: 0, warning: true });
    }
    Ok(OptimalLevel { level: level as u32, warning: false })
}

/// Range (lo, hi] of c̄ετ for which the optimal level equals n.
pub fn cdd_level_interval(n: u32) -> (f64, f64) {
    (4f64.powi(-(n as i32 + 2)), 4f64.powi(-(n as i32 + 1)))
}
