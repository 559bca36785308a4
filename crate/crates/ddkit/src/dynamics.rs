//! Noise models, pulse unitaries and schedule propagation.
//!
//! The joint space is system (one qubit) ⊗ bath, system index outermost. Density
//! operators are vectorized column-major, so vec(AρB) = (Bᵀ ⊗ A) vec(ρ).
//!
//! Rotating-frame models store the static generator K of the frame together with the
//! excitation number n_a of every basis state; the frame Hamiltonian is
//! H̃(t)_ab = K_ab e^{iω_d t (n_a − n_b)} and the lab Hamiltonian is K + ω_d N̂.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, c, dagger, eye, kron, op_norm, pauli, Mat, C64, I, ONE, ZERO};
use crate::scheduler::Schedule;
use crate::seqlib::{Pulse, PulseKind, SequenceIR};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("operator `{0}` is not Hermitian")]
    NotHermitian(&'static str),
    #[error("invalid Lindblad rates: T2 = {t2:e} must satisfy 0 < T2 <= 2 T1 = {two_t1:e}")]
    InvalidLindblad { t2: f64, two_t1: f64 },
    #[error("time slicing did not converge below {tol:e} with {slices} slices")]
    StepSizeFailure { slices: usize, tol: f64 },
    #[error("operation requires zero-width pulses")]
    FiniteWidthUnsupported,
    #[error("model has no rotating-frame parameters")]
    MissingRotatingFrame,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotatingFrame {
    pub omega_d: f64,
    pub omega_q1: f64,
    pub omega_q2: f64,
    pub j_zz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lindblad {
    pub t1: f64,
    pub t2: f64,
}

impl Lindblad {
    pub fn new(t1: f64, t2: f64) -> Result<Lindblad, DynamicsError> {
        if !(t1 > 0.0 && t2 > 0.0 && t2 <= 2.0 * t1 * (1.0 + 1e-12)) {
            return Err(DynamicsError::InvalidLindblad { t2, two_t1: 2.0 * t1 });
        }
        Ok(Lindblad { t1, t2 })
    }

    /// Pure-dephasing rate 1/T_φ = 1/T2 − 1/(2 T1), never negative.
    pub fn dephasing_rate(&self) -> f64 {
        (1.0 / self.t2 - 0.5 / self.t1).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    Lab,
    Rotating,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Envelope {
    Square,
    Gaussian,
}

/// How a physical pulse occupying [t, t + Δ] is simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseMode {
    /// Ideal pulse at the start of the window, then free evolution over Δ.
    Instant,
    /// Control and noise Hamiltonians together over the window.
    Finite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseErrorModel {
    pub eps_r: f64,
    pub axis_errors: (f64, f64),
    pub envelope: Envelope,
    pub mode: PulseMode,
}

impl Default for PulseErrorModel {
    fn default() -> Self {
        PulseErrorModel { eps_r: 0.0, axis_errors: (0.0, 0.0), envelope: Envelope::Square, mode: PulseMode::Instant }
    }
}

/// Gaussian envelope standard deviation as a fraction of the window.
const GAUSS_SIGMA: f64 = 0.25;

impl PulseErrorModel {
    pub fn ideal() -> Self {
        Self::default()
    }

    pub fn flip_angle(eps_r: f64) -> Self {
        PulseErrorModel { eps_r, ..Self::default() }
    }

    pub fn finite(envelope: Envelope) -> Self {
        PulseErrorModel { envelope, mode: PulseMode::Finite, ..Self::default() }
    }

    /// Peak amplitude Ω_0 for a window of width Δ with ∫Ω dt = π/2.
    pub fn omega0(&self, delta: f64) -> f64 {
        match self.envelope {
            Envelope::Square => PI / (2.0 * delta),
            Envelope::Gaussian => {
                let s = GAUSS_SIGMA * delta;
                let area = s * (2.0 * PI).sqrt() * statrs::function::erf::erf(delta / (2.0 * 2f64.sqrt() * s));
                PI / 2.0 / area
            }
        }
    }

    /// Envelope Ω(t) for t measured from the window start.
    pub fn amplitude(&self, t: f64, delta: f64) -> f64 {
        if t < 0.0 || t > delta {
            return 0.0;
        }
        let a = self.omega0(delta);
        match self.envelope {
            Envelope::Square => a,
            Envelope::Gaussian => {
                let s = GAUSS_SIGMA * delta;
                let x = t - 0.5 * delta;
                a * (-x * x / (2.0 * s * s)).exp()
            }
        }
    }

    /// Unit rotation axis after axis misspecification, as Bloch components.
    pub fn axis(&self, phi: f64) -> [f64; 3] {
        let (eb, eg) = self.axis_errors;
        let v = [phi.cos() - eb * phi.sin(), phi.sin() + eb * phi.cos(), eg];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        [v[0] / n, v[1] / n, v[2] / n]
    }
}

fn axis_op(n: [f64; 3]) -> Mat {
    pauli(1) * c(n[0], 0.0) + pauli(2) * c(n[1], 0.0) + pauli(3) * c(n[2], 0.0)
}

/// Ideal (instantaneous) pulse on the system qubit including flip-angle and axis errors.
pub fn ideal_pulse_unitary(p: &Pulse, err: &PulseErrorModel) -> Mat {
    match p.kind {
        PulseKind::VirtualZ => linalg::expm_hermitian(&pauli(3), 0.5 * PI),
        PulseKind::IdentityWait => eye(2),
        PulseKind::Physical => {
            let angle = p.sign as f64 * 0.5 * p.theta * (1.0 + err.eps_r);
            linalg::expm_hermitian(&axis_op(err.axis(p.phi)), angle)
        }
    }
}

/// Error-free pulse unitary.
pub fn perfect_pulse(p: &Pulse) -> Mat {
    ideal_pulse_unitary(p, &PulseErrorModel::ideal())
}

/// Control Hamiltonian factor h such that H_c(t) = Ω(t)·h on the system.
fn control_op(p: &Pulse, err: &PulseErrorModel) -> Mat {
    axis_op(err.axis(p.phi)) * c(p.sign as f64 * (p.theta / PI) * (1.0 + err.eps_r), 0.0)
}

#[derive(Debug, Clone)]
pub struct NoiseModel {
    pub bath_dim: usize,
    pub gamma: [f64; 4],
    pub bath_ops: [Mat; 4],
    pub h_b: Mat,
    pub beta: f64,
    pub j: f64,
    pub eps: f64,
    pub rotating_frame: Option<RotatingFrame>,
    pub lindblad: Option<Lindblad>,
    pub bath_lindblad: Option<Lindblad>,
    h: Mat,
    number: Option<Vec<f64>>,
    eig: (DVector<f64>, Mat),
    liouvillian: Option<Mat>,
}

fn random_hermitian(rng: &mut ChaCha8Rng, d: usize) -> Mat {
    let mut a = Mat::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            a[(i, j)] = c(re, im);
        }
    }
    linalg::hermitian_part(&a)
}

fn scaled_to(a: Mat, norm: f64) -> Mat {
    let n = op_norm(&a);
    if n == 0.0 {
        a
    } else {
        a * c(norm / n, 0.0)
    }
}

impl NoiseModel {
    /// Model from H = I ⊗ H_B + Σ_α γ_α σ^α ⊗ B^α (the α = 0 term is folded into H_B).
    pub fn from_terms(gamma: [f64; 4], bath_ops: [Mat; 4], h_b: Mat) -> Result<NoiseModel, DynamicsError> {
        let db = h_b.nrows();
        for b in bath_ops.iter().chain(std::iter::once(&h_b)) {
            if b.nrows() != db || b.ncols() != db {
                return Err(DynamicsError::DimensionMismatch { expected: db, got: b.nrows() });
            }
            if !linalg::is_hermitian(b, 1e-12 * (1.0 + op_norm(b))) {
                return Err(DynamicsError::NotHermitian("bath operator"));
            }
        }
        let mut h = kron(&eye(2), &h_b);
        for k in 0..4 {
            h += kron(&pauli(k), &bath_ops[k]) * c(gamma[k], 0.0);
        }
        Ok(Self::from_joint(h, None, None))
    }

    /// Decompose a joint Hermitian generator (2·d_B square) into the model fields.
    fn from_joint(h: Mat, rotating_frame: Option<RotatingFrame>, number: Option<Vec<f64>>) -> NoiseModel {
        let h = linalg::hermitian_part(&h);
        let db = h.nrows() / 2;
        let comps = linalg::pauli_components(&h, db);
        let h_b = linalg::hermitian_part(&comps[0]);
        let mut gamma = [0.0; 4];
        let bath_ops: [Mat; 4] = std::array::from_fn(|k| {
            if k == 0 {
                return Mat::zeros(db, db);
            }
            let b = linalg::hermitian_part(&comps[k]);
            let n = op_norm(&b);
            gamma[k] = n;
            if n > 0.0 {
                b * c(1.0 / n, 0.0)
            } else {
                b
            }
        });
        let beta = op_norm(&h_b);
        let j = op_norm(&(&h - kron(&eye(2), &h_b)));
        let h_eig = match (&rotating_frame, &number) {
            (Some(rf), Some(n)) => &h + Mat::from_diagonal(&DVector::from_iterator(n.len(), n.iter().map(|x| c(rf.omega_d * x, 0.0)))),
            _ => h.clone(),
        };
        let eig = linalg::eigh(&h_eig);
        NoiseModel {
            bath_dim: db,
            gamma,
            bath_ops,
            h_b,
            beta,
            j,
            eps: beta + j,
            rotating_frame,
            lindblad: None,
            bath_lindblad: None,
            h,
            number,
            eig,
            liouvillian: None,
        }
    }

    /// No coupling and no bath dynamics on n_b bath qubits.
    pub fn zero(n_b: u32) -> NoiseModel {
        let db = 1usize << n_b;
        Self::from_joint(Mat::zeros(2 * db, 2 * db), None, None)
    }

    /// Seeded random bath with ‖H_B‖ = β and ‖H_SB‖ = J, all three coupling axes.
    pub fn generic(n_b: u32, beta: f64, j: f64, seed: u64) -> Result<NoiseModel, DynamicsError> {
        Self::random(n_b, beta, j, seed, &[1, 2, 3])
    }

    /// Seeded random bath coupled through σ^z only.
    pub fn dephasing(n_b: u32, beta: f64, j: f64, seed: u64) -> Result<NoiseModel, DynamicsError> {
        Self::random(n_b, beta, j, seed, &[3])
    }

    fn random(n_b: u32, beta: f64, j: f64, seed: u64, axes: &[usize]) -> Result<NoiseModel, DynamicsError> {
        if n_b > 3 {
            return Err(DynamicsError::InvalidParameter(format!("at most 3 bath qubits (got {n_b})")));
        }
        if beta < 0.0 || j < 0.0 {
            return Err(DynamicsError::InvalidParameter("negative energy scale".into()));
        }
        let db = 1usize << n_b;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h_b = scaled_to(random_hermitian(&mut rng, db), beta);
        let mut hsb = Mat::zeros(2 * db, 2 * db);
        for &a in axes {
            hsb += kron(&pauli(a), &random_hermitian(&mut rng, db));
        }
        let hsb = scaled_to(hsb, j);
        Ok(Self::from_joint(kron(&eye(2), &h_b) + hsb, None, None))
    }

    /// Two transmons in the frame rotating at ω_d: qubit 1 is the DD qubit, qubit 2 the
    /// bath. `coupling` sets the norm of a seeded random set of extra σ^α ⊗ σ^β terms.
    pub fn rotating_crosstalk(rf: RotatingFrame, coupling: f64, seed: u64) -> Result<NoiseModel, DynamicsError> {
        if !(rf.omega_d > 0.0) {
            return Err(DynamicsError::InvalidParameter("omega_d must be positive".into()));
        }
        let (z1, z2) = (kron(&pauli(3), &eye(2)), kron(&eye(2), &pauli(3)));
        let mut k = &z1 * c(0.5 * (rf.omega_d - rf.omega_q1), 0.0) + &z2 * c(0.5 * (rf.omega_d - rf.omega_q2), 0.0) + kron(&pauli(3), &pauli(3)) * c(rf.j_zz, 0.0);
        if coupling > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut extra = Mat::zeros(4, 4);
            for a in 0..4 {
                for b in 0..4 {
                    if a == 0 && b == 0 {
                        continue;
                    }
                    let w: f64 = StandardNormal.sample(&mut rng);
                    extra += kron(&pauli(a), &pauli(b)) * c(w, 0.0);
                }
            }
            k += scaled_to(extra, coupling);
        }
        // |kl⟩ with k the DD qubit; N̂ counts excitations
        let number = vec![0.0, 1.0, 1.0, 2.0];
        Ok(Self::from_joint(k, Some(rf), Some(number)))
    }

    pub fn with_lindblad(mut self, lb: Lindblad) -> Result<NoiseModel, DynamicsError> {
        let lb = Lindblad::new(lb.t1, lb.t2)?;
        self.lindblad = Some(lb);
        self.liouvillian = Some(self.build_liouvillian());
        Ok(self)
    }

    /// Relaxation on the first bath qubit as well.
    pub fn with_bath_lindblad(mut self, lb: Lindblad) -> Result<NoiseModel, DynamicsError> {
        if self.bath_dim < 2 {
            return Err(DynamicsError::InvalidParameter("no bath qubit to relax".into()));
        }
        let lb = Lindblad::new(lb.t1, lb.t2)?;
        self.bath_lindblad = Some(lb);
        self.liouvillian = Some(self.build_liouvillian());
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        2 * self.bath_dim
    }

    /// Static joint generator (the frame generator K for rotating models).
    pub fn hamiltonian(&self) -> &Mat {
        &self.h
    }

    /// σ^α_S ⊗ B^α part of the generator.
    pub fn coupling(&self) -> Mat {
        &self.h - kron(&eye(2), &self.h_b)
    }

    pub fn is_open(&self) -> bool {
        self.liouvillian.is_some()
    }

    fn number_op(&self) -> Option<Mat> {
        self.number.as_ref().map(|n| Mat::from_diagonal(&DVector::from_iterator(n.len(), n.iter().map(|x| c(*x, 0.0)))))
    }

    /// Lab-frame Hamiltonian K + ω_d N̂ (K for static models).
    pub fn lab_hamiltonian(&self) -> Mat {
        match (&self.rotating_frame, self.number_op()) {
            (Some(rf), Some(n)) => &self.h + n * c(rf.omega_d, 0.0),
            _ => self.h.clone(),
        }
    }

    /// H̃(t) in the model's native frame.
    pub fn hamiltonian_at(&self, t: f64) -> Mat {
        match (&self.rotating_frame, &self.number) {
            (Some(rf), Some(n)) => {
                let mut out = self.h.clone();
                for a in 0..n.len() {
                    for b in 0..n.len() {
                        out[(a, b)] *= C64::from_polar(1.0, rf.omega_d * t * (n[a] - n[b]));
                    }
                }
                out
            }
            _ => self.h.clone(),
        }
    }

    /// ∫_{t0}^{t1} H̃(t) dt evaluated exactly.
    pub fn integrated_hamiltonian(&self, t0: f64, t1: f64) -> Mat {
        match (&self.rotating_frame, &self.number) {
            (Some(rf), Some(n)) => {
                let mut out = self.h.clone();
                for a in 0..n.len() {
                    for b in 0..n.len() {
                        let nu = rf.omega_d * (n[a] - n[b]);
                        out[(a, b)] *= phase_integral(nu, t0, t1);
                    }
                }
                out
            }
            _ => &self.h * c(t1 - t0, 0.0),
        }
    }

    /// Frame phases V(t) = diag(e^{iω_d n_a t}) reduced modulo the frame period.
    fn frame_phases(&self, t: f64) -> Option<Vec<C64>> {
        match (&self.rotating_frame, &self.number) {
            (Some(rf), Some(n)) => {
                let period = 2.0 * PI / rf.omega_d;
                let r = t.rem_euclid(period);
                Some(n.iter().map(|x| C64::from_polar(1.0, rf.omega_d * x * r)).collect())
            }
            _ => None,
        }
    }

    fn jump_operators(&self) -> Vec<Mat> {
        let db = self.bath_dim;
        let lower = Mat::from_row_slice(2, 2, &[ZERO, ONE, ZERO, ZERO]);
        let mut ops = Vec::new();
        let mut add = |lb: &Lindblad, embed: &dyn Fn(&Mat) -> Mat| {
            ops.push(embed(&lower) * c((1.0 / lb.t1).sqrt(), 0.0));
            let g = lb.dephasing_rate();
            if g > 0.0 {
                ops.push(embed(&pauli(3)) * c((0.5 * g).sqrt(), 0.0));
            }
        };
        if let Some(lb) = &self.lindblad {
            add(lb, &|op| kron(op, &eye(db)));
        }
        if let Some(lb) = &self.bath_lindblad {
            let rest = db / 2;
            add(lb, &|op| kron(&eye(2), &kron(op, &eye(rest))));
        }
        ops
    }

    fn build_liouvillian(&self) -> Mat {
        let h = self.lab_hamiltonian();
        let mut l = hamiltonian_superop(&h);
        l += dissipator(&self.jump_operators());
        l
    }
}

fn phase_integral(nu: f64, t0: f64, t1: f64) -> C64 {
    let s = t1 - t0;
    if nu == 0.0 {
        return c(s, 0.0);
    }
    // e^{iνt0} (e^{iνs} − 1)/(iν) written with sinc for small νs
    let x = 0.5 * nu * s;
    let sinc = if x.abs() < 1e-8 { 1.0 - x * x / 6.0 } else { x.sin() / x };
    C64::from_polar(s * sinc, nu * t0 + x)
}

/// −i(I⊗H − Hᵀ⊗I).
pub fn hamiltonian_superop(h: &Mat) -> Mat {
    let d = h.nrows();
    let id = eye(d);
    (kron(&id, h) - kron(&h.transpose(), &id)) * (-I)
}

/// Σ_k L̄_k⊗L_k − ½ I⊗L_k†L_k − ½ (L_k†L_k)ᵀ⊗I.
pub fn dissipator(ops: &[Mat]) -> Mat {
    let d = ops.first().map(|m| m.nrows()).unwrap_or(0);
    let id = eye(d);
    let mut out = Mat::zeros(d * d, d * d);
    for l in ops {
        let ll = dagger(l) * l;
        out += kron(&l.map(|z| z.conj()), l);
        out -= kron(&id, &ll) * c(0.5, 0.0);
        out -= kron(&ll.transpose(), &id) * c(0.5, 0.0);
    }
    out
}

/// Superoperator of ρ ↦ UρU†.
pub fn unitary_superop(u: &Mat) -> Mat {
    kron(&u.map(|z| z.conj()), u)
}

pub fn vec_rho(rho: &Mat) -> DVector<C64> {
    DVector::from_column_slice(rho.as_slice())
}

pub fn unvec_rho(v: &DVector<C64>, d: usize) -> Mat {
    Mat::from_column_slice(d, d, v.as_slice())
}

/// Total evolution of a schedule: a joint unitary or, for open models, a superoperator.
#[derive(Debug, Clone)]
pub enum Evolution {
    Unitary(Mat),
    Super(Mat),
}

impl Evolution {
    pub fn apply(&self, rho: &Mat) -> Mat {
        match self {
            Evolution::Unitary(u) => u * rho * dagger(u),
            Evolution::Super(s) => unvec_rho(&(s * vec_rho(rho)), rho.nrows()),
        }
    }

    pub fn unitary(&self) -> Option<&Mat> {
        match self {
            Evolution::Unitary(u) => Some(u),
            Evolution::Super(_) => None,
        }
    }

    fn compose_after(&self, first: &Evolution) -> Evolution {
        match (self, first) {
            (Evolution::Unitary(a), Evolution::Unitary(b)) => Evolution::Unitary(a * b),
            (a, b) => Evolution::Super(a.to_super() * b.to_super()),
        }
    }

    pub fn to_super(&self) -> Mat {
        match self {
            Evolution::Unitary(u) => unitary_superop(u),
            Evolution::Super(s) => s.clone(),
        }
    }

    fn pow(&self, n: u64) -> Evolution {
        match self {
            Evolution::Unitary(u) => Evolution::Unitary(linalg::mat_pow(u, n)),
            Evolution::Super(s) => Evolution::Super(linalg::mat_pow(s, n)),
        }
    }
}

/// Free evolution over [0, τ] in the chosen frame, as a unitary.
pub fn free_propagator(model: &NoiseModel, tau: f64, frame: Frame) -> Result<Mat, DynamicsError> {
    if tau < 0.0 {
        return Err(DynamicsError::InvalidParameter(format!("negative duration {tau:e}")));
    }
    let e = linalg::unitary_from_eig(&model.eig.0, &model.eig.1, tau);
    Ok(match (frame, model.frame_phases(tau)) {
        (Frame::Rotating, Some(v)) => scale_rows(&e, &v),
        _ => e,
    })
}

/// Free propagator obtained by piecewise-constant slicing of H̃(t); used to cross-check
/// the exact frame formula.
pub fn free_propagator_sliced(model: &NoiseModel, t0: f64, tau: f64, tol: f64) -> Result<Mat, DynamicsError> {
    slice_unitary(&|t| model.hamiltonian_at(t), t0, tau, tol)
}

fn scale_rows(m: &Mat, v: &[C64]) -> Mat {
    let mut out = m.clone();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out[(i, j)] *= v[i];
        }
    }
    out
}

fn scale_cols(m: &Mat, v: &[C64]) -> Mat {
    let mut out = m.clone();
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            out[(i, j)] *= v[j];
        }
    }
    out
}

/// Diagonal of Ad(V) = V̄ ⊗ V for diagonal V.
fn super_phases(v: &[C64]) -> Vec<C64> {
    let d = v.len();
    let mut out = Vec::with_capacity(d * d);
    for j in 0..d {
        for i in 0..d {
            out.push(v[j].conj() * v[i]);
        }
    }
    out
}

/// Fourth-order commutator-free Magnus stepping of U' = −iH(t)U with step halving.
fn slice_unitary(h: &dyn Fn(f64) -> Mat, t0: f64, s: f64, tol: f64) -> Result<Mat, DynamicsError> {
    let step = |n: usize| -> Mat {
        let d = h(t0).nrows();
        let dt = s / n as f64;
        let mut u = eye(d);
        for k in 0..n {
            let (h1, h2) = magnus_nodes(h, t0 + k as f64 * dt, dt);
            let a = &h1 * c(CFM_A1, 0.0) + &h2 * c(CFM_A2, 0.0);
            let b = &h1 * c(CFM_A2, 0.0) + &h2 * c(CFM_A1, 0.0);
            u = linalg::expm_hermitian(&a, dt) * linalg::expm_hermitian(&b, dt) * u;
        }
        u
    };
    halving(step, tol)
}

fn slice_super(l: &dyn Fn(f64) -> Mat, t0: f64, s: f64, tol: f64) -> Result<Mat, DynamicsError> {
    let step = |n: usize| -> Mat {
        let d = l(t0).nrows();
        let dt = s / n as f64;
        let mut m = eye(d);
        for k in 0..n {
            let (l1, l2) = magnus_nodes(l, t0 + k as f64 * dt, dt);
            let a = (&l1 * c(CFM_A1, 0.0) + &l2 * c(CFM_A2, 0.0)) * c(dt, 0.0);
            let b = (&l1 * c(CFM_A2, 0.0) + &l2 * c(CFM_A1, 0.0)) * c(dt, 0.0);
            m = a.exp() * b.exp() * m;
        }
        m
    };
    halving(step, tol)
}

const CFM_A1: f64 = 0.25 - 0.288_675_134_594_812_9; // 1/4 − √3/6
const CFM_A2: f64 = 0.25 + 0.288_675_134_594_812_9;
const GAUSS_OFF: f64 = 0.288_675_134_594_812_9; // √3/6

fn magnus_nodes(f: &dyn Fn(f64) -> Mat, t: f64, dt: f64) -> (Mat, Mat) {
    (f(t + (0.5 - GAUSS_OFF) * dt), f(t + (0.5 + GAUSS_OFF) * dt))
}

const MAX_SLICES: usize = 1 << 16;

fn halving(step: impl Fn(usize) -> Mat, tol: f64) -> Result<Mat, DynamicsError> {
    let mut n = 4;
    let mut prev = step(n);
    while n < MAX_SLICES {
        n *= 2;
        let next = step(n);
        if op_norm(&(&next - &prev)) < tol {
            return Ok(next);
        }
        prev = next;
    }
    Err(DynamicsError::StepSizeFailure { slices: n, tol })
}

/// Tolerance for time-sliced segments.
pub const SLICE_TOL: f64 = 1e-10;

/// Segment maps with caching of the duration-only factors.
struct Engine<'a> {
    model: &'a NoiseModel,
    err: PulseErrorModel,
    open: bool,
    unitary_cache: HashMap<u64, Mat>,
    super_cache: HashMap<u64, Mat>,
    period_super: Option<Mat>,
}

impl<'a> Engine<'a> {
    fn new(model: &'a NoiseModel, err: PulseErrorModel) -> Self {
        Engine { model, err, open: model.is_open(), unitary_cache: HashMap::new(), super_cache: HashMap::new(), period_super: None }
    }

    /// e^{−iH s} with H the lab (or static) Hamiltonian.
    fn lab_unitary(&mut self, s: f64) -> Mat {
        let m = self.model;
        self.unitary_cache.entry(s.to_bits()).or_insert_with(|| linalg::unitary_from_eig(&m.eig.0, &m.eig.1, s)).clone()
    }

    /// e^{L s} with L the lab (or static) Liouvillian. Long durations are split into whole
    /// frame periods for rotating models to keep the exponent small.
    fn lab_super(&mut self, s: f64) -> Mat {
        if let Some(m) = self.super_cache.get(&s.to_bits()) {
            return m.clone();
        }
        let l = self.model.liouvillian.as_ref().expect("open model");
        let out = match &self.model.rotating_frame {
            Some(rf) if s > 2.0 * PI / rf.omega_d => {
                let p = 2.0 * PI / rf.omega_d;
                let k = (s / p).floor();
                let r = s - k * p;
                let per = self.period_super.get_or_insert_with(|| (l * c(p, 0.0)).exp()).clone();
                (l * c(r, 0.0)).exp() * linalg::mat_pow(&per, k as u64)
            }
            _ => (l * c(s, 0.0)).exp(),
        };
        self.super_cache.insert(s.to_bits(), out.clone());
        out
    }

    fn free(&mut self, t0: f64, s: f64) -> Evolution {
        let model = self.model;
        if self.open {
            let x = self.lab_super(s);
            match (model.frame_phases(t0 + s), model.frame_phases(t0)) {
                (Some(v1), Some(v0)) => {
                    let p1 = super_phases(&v1);
                    let p0: Vec<C64> = super_phases(&v0).iter().map(|z| z.conj()).collect();
                    Evolution::Super(scale_cols(&scale_rows(&x, &p1), &p0))
                }
                _ => Evolution::Super(x),
            }
        } else {
            let e = self.lab_unitary(s);
            match (model.frame_phases(t0 + s), model.frame_phases(t0)) {
                (Some(v1), Some(v0)) => {
                    let v0c: Vec<C64> = v0.iter().map(|z| z.conj()).collect();
                    Evolution::Unitary(scale_cols(&scale_rows(&e, &v1), &v0c))
                }
                _ => Evolution::Unitary(e),
            }
        }
    }

    fn instant(&self, u: Mat) -> Evolution {
        let full = kron(&u, &eye(self.model.bath_dim));
        if self.open {
            Evolution::Super(unitary_superop(&full))
        } else {
            Evolution::Unitary(full)
        }
    }

    fn pulse(&mut self, t0: f64, dur: f64, p: &Pulse) -> Result<Evolution, DynamicsError> {
        match p.kind {
            PulseKind::VirtualZ => Ok(self.instant(perfect_pulse(p))),
            PulseKind::IdentityWait => Ok(self.free(t0, dur)),
            PulseKind::Physical => {
                if dur == 0.0 {
                    return Ok(self.instant(ideal_pulse_unitary(p, &self.err)));
                }
                match self.err.mode {
                    PulseMode::Instant => {
                        let pulse = self.instant(ideal_pulse_unitary(p, &self.err));
                        Ok(self.free(t0, dur).compose_after(&pulse))
                    }
                    PulseMode::Finite => finite_segment(self.model, &self.err, p, t0, dur),
                }
            }
        }
    }
}

/// Control plus noise over a pulse window [t0, t0 + Δ] in the model's native frame.
fn finite_segment(model: &NoiseModel, err: &PulseErrorModel, p: &Pulse, t0: f64, delta: f64) -> Result<Evolution, DynamicsError> {
    let hc = kron(&control_op(p, err), &eye(model.bath_dim));
    let constant = err.envelope == Envelope::Square && model.rotating_frame.is_none();
    let amp = |t: f64| err.amplitude(t - t0, delta);
    if model.is_open() {
        let base = model.liouvillian.as_ref().expect("open model");
        let lc = hamiltonian_superop(&hc);
        if constant {
            let gen = (base + &lc * c(err.omega0(delta), 0.0)) * c(delta, 0.0);
            return Ok(Evolution::Super(gen.exp()));
        }
        // rotating-frame dissipators are frame invariant, so only H̃(t) changes
        let diss = base - hamiltonian_superop(&model.lab_hamiltonian());
        let l = |t: f64| hamiltonian_superop(&model.hamiltonian_at(t)) + &diss + &lc * c(amp(t), 0.0);
        Ok(Evolution::Super(slice_super(&l, t0, delta, SLICE_TOL)?))
    } else {
        if constant {
            let h = model.hamiltonian() + &hc * c(err.omega0(delta), 0.0);
            return Ok(Evolution::Unitary(linalg::expm_hermitian(&h, delta)));
        }
        let h = |t: f64| model.hamiltonian_at(t) + &hc * c(amp(t), 0.0);
        Ok(Evolution::Unitary(slice_unitary(&h, t0, delta, SLICE_TOL)?))
    }
}

/// Finite-width pulse on system ⊗ bath over a window of width Δ starting at t = 0.
pub fn finite_pulse_unitary(p: &Pulse, err: &PulseErrorModel, model: &NoiseModel, delta: f64) -> Result<Mat, DynamicsError> {
    if !(delta > 0.0) {
        return Err(DynamicsError::InvalidParameter(format!("pulse width must be positive (got {delta:e})")));
    }
    if p.kind != PulseKind::Physical {
        return Ok(kron(&perfect_pulse(p), &eye(model.bath_dim)) * free_propagator(model, if p.kind == PulseKind::IdentityWait { delta } else { 0.0 }, Frame::Rotating)?);
    }
    let closed = NoiseModel { liouvillian: None, lindblad: None, bath_lindblad: None, ..model.clone() };
    match finite_segment(&closed, &PulseErrorModel { mode: PulseMode::Finite, ..*err }, p, 0.0, delta)? {
        Evolution::Unitary(u) => Ok(u),
        Evolution::Super(_) => unreachable!("closed model"),
    }
}

fn block_is_periodic(s: &Schedule) -> bool {
    let reps = s.reps.max(1) as usize;
    if reps == 1 || s.events.len() % reps != 0 {
        return false;
    }
    let n = s.events.len() / reps;
    let tb = s.block_time();
    let tol = 1e-12 * s.total_time;
    (1..reps).all(|b| (0..n).all(|k| {
        let (a, e) = (&s.events[k], &s.events[b * n + k]);
        a.pulse == e.pulse && a.duration == e.duration && (e.t_start - a.t_start - b as f64 * tb).abs() <= tol
    }))
}

fn propagate_range(engine: &mut Engine, events: &[crate::scheduler::Event], t_begin: f64, t_end: f64) -> Result<Evolution, DynamicsError> {
    let d = engine.model.dim();
    let mut total = if engine.open { Evolution::Super(eye(d * d)) } else { Evolution::Unitary(eye(d)) };
    let mut t = t_begin;
    for e in events {
        let gap = e.t_start - t;
        if gap > 0.0 {
            total = engine.free(t, gap).compose_after(&total);
        }
        let start = e.t_start.max(t);
        total = engine.pulse(start, e.duration, &e.pulse)?.compose_after(&total);
        t = start + e.duration;
    }
    if t_end > t {
        total = engine.free(t, t_end - t).compose_after(&total);
    }
    Ok(total)
}

/// Evolution generated by a schedule in the model's native frame (rotating if the model
/// has frame parameters) or in the lab frame.
///
/// Static models with repeated blocks are propagated as (block map)^N. Rotating models
/// are stepped event by event since the frame breaks block periodicity.
pub fn propagate(schedule: &Schedule, model: &NoiseModel, err: &PulseErrorModel, frame: Frame) -> Result<Evolution, DynamicsError> {
    let mut engine = Engine::new(model, *err);
    let evo = if model.rotating_frame.is_none() && block_is_periodic(schedule) {
        let n = schedule.events.len() / schedule.reps as usize;
        let block = propagate_range(&mut engine, &schedule.events[..n], 0.0, schedule.block_time())?;
        block.pow(schedule.reps as u64)
    } else {
        propagate_range(&mut engine, &schedule.events, 0.0, schedule.total_time)?
    };
    Ok(match (frame, model.frame_phases(schedule.total_time)) {
        (Frame::Lab, Some(v)) => {
            let vc: Vec<C64> = v.iter().map(|z| z.conj()).collect();
            match evo {
                Evolution::Unitary(u) => Evolution::Unitary(scale_rows(&u, &vc)),
                Evolution::Super(s) => Evolution::Super(scale_rows(&s, &super_phases(&vc))),
            }
        }
        _ => evo,
    })
}

/// Product of error-free pulses of a schedule, on the system only.
pub fn ideal_product(pulses: &[Pulse]) -> Mat {
    pulses.iter().fold(eye(2), |acc, p| perfect_pulse(p) * acc)
}

/// Product of the pulses of a sequence with the given error model (no free evolution).
pub fn pulse_product(seq: &SequenceIR, err: &PulseErrorModel) -> Mat {
    seq.pulses.iter().fold(eye(2), |acc, p| ideal_pulse_unitary(p, err) * acc)
}

fn zero_width(s: &Schedule) -> Result<(), DynamicsError> {
    if s.events.iter().any(|e| e.duration != 0.0) {
        Err(DynamicsError::FiniteWidthUnsupported)
    } else {
        Ok(())
    }
}

/// Control propagator U_c(t) after all pulses with t_start ≤ t, on system ⊗ bath.
fn control_at(s: &Schedule, t: f64, db: usize) -> Mat {
    let uc = s.events.iter().take_while(|e| e.t_start <= t).fold(eye(2), |acc, e| perfect_pulse(&e.pulse) * acc);
    kron(&uc, &eye(db))
}

/// U_c†(t) H̃(t) U_c(t) for a zero-width schedule.
pub fn toggling_hamiltonian(s: &Schedule, model: &NoiseModel, t: f64) -> Result<Mat, DynamicsError> {
    zero_width(s)?;
    let uc = control_at(s, t, model.bath_dim);
    Ok(dagger(&uc) * model.hamiltonian_at(t) * uc)
}

/// (1/T) ∫ U_c† H̃ U_c dt over the whole schedule, integrated segment by segment.
pub fn first_order_average_hamiltonian(s: &Schedule, model: &NoiseModel) -> Result<Mat, DynamicsError> {
    zero_width(s)?;
    average_of(s, model.dim(), model.bath_dim, |t0, t1| model.integrated_hamiltonian(t0, t1))
}

fn average_of(s: &Schedule, d: usize, db: usize, integral: impl Fn(f64, f64) -> Mat) -> Result<Mat, DynamicsError> {
    let mut acc = Mat::zeros(d, d);
    let mut uc = eye(2);
    let mut t = 0.0;
    let idb = eye(db);
    let mut add = |t0: f64, t1: f64, uc: &Mat| {
        if t1 > t0 {
            let u = kron(uc, &idb);
            acc += dagger(&u) * integral(t0, t1) * u;
        }
    };
    for e in &s.events {
        add(t, e.t_start, &uc);
        uc = perfect_pulse(&e.pulse) * uc;
        t = t.max(e.t_start);
    }
    add(t, s.total_time, &uc);
    Ok(acc * c(1.0 / s.total_time, 0.0))
}

/// System part of an operator on 2 ⊗ d_B: the σ^{x,y,z} components as bath operators.
pub fn system_components(a: &Mat, db: usize) -> [Mat; 3] {
    let comps = linalg::pauli_components(a, db);
    [comps[1].clone(), comps[2].clone(), comps[3].clone()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermReport {
    /// Two-letter label, DD qubit first (e.g. "XZ", "IZ").
    pub term: String,
    pub free: f64,
    pub dd: f64,
    /// Term acts trivially on the DD qubit and commutes with every pulse.
    pub commutes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermScan {
    pub tau: f64,
    pub cycle: f64,
    pub fine_tuned: bool,
    pub terms: Vec<TermReport>,
}

/// First-order contribution of each two-qubit Pauli term over one cycle, with the
/// sequence applied to qubit 1 at pulse interval τ and without pulses.
pub fn rotating_frame_term_scan(seq: &SequenceIR, model: &NoiseModel, tau: f64) -> Result<TermScan, DynamicsError> {
    let rf = model.rotating_frame.ok_or(DynamicsError::MissingRotatingFrame)?;
    let n = model.number.clone().ok_or(DynamicsError::MissingRotatingFrame)?;
    if !(tau > 0.0) {
        return Err(DynamicsError::InvalidParameter("tau must be positive".into()));
    }
    let k = seq.free_periods().max(1);
    let cycle = tau * k as f64;
    let sched = crate::scheduler::render(seq, cycle, 0.0, 0.0, crate::scheduler::Symmetry::Asymmetric, 1)
        .map_err(|e| DynamicsError::InvalidParameter(e.to_string()))?;
    let idle = Schedule::idle(cycle);
    let names = ["I", "X", "Y", "Z"];
    let period = 2.0 * PI / rf.omega_d;
    let ratio = tau / period;
    let fine_tuned = (ratio - ratio.round()).abs() < 1e-9 && ratio.round() >= 1.0;
    let mut terms = Vec::new();
    for a in 0..4 {
        for b in 0..4 {
            if a == 0 && b == 0 {
                continue;
            }
            let op = kron(&pauli(a), &pauli(b));
            let integral = |t0: f64, t1: f64| {
                let mut out = op.clone();
                for i in 0..4 {
                    for j in 0..4 {
                        out[(i, j)] *= phase_integral(rf.omega_d * (n[i] - n[j]), t0, t1);
                    }
                }
                out
            };
            let free = op_norm(&average_of(&idle, 4, 2, integral)?);
            let dd = op_norm(&average_of(&sched, 4, 2, integral)?);
            terms.push(TermReport { term: format!("{}{}", names[a], names[b]), free, dd, commutes: a == 0 });
        }
    }
    Ok(TermScan { tau, cycle, fine_tuned, terms })
}
