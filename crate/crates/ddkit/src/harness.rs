//! Experiment drivers: dense and interval-sweep protocols, shot sampling, seeded
//! state preparation and the schedule / curve / config file formats.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::{Read, Write};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{quartile_summary, BoxStats, DecayCurve};
use crate::dynamics::{self, Evolution, Frame, Lindblad, NoiseModel, PulseErrorModel, PulseMode, RotatingFrame};
use crate::linalg::{self, c, kron, Mat, C64};
use crate::scheduler::{self, Event, Schedule, Symmetry};
use crate::seqlib::{self, Pulse, PulseKind, SeqId, SequenceIR, TimedSequence};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{path}: line {line}, {field}: {message}")]
    Parse { path: String, line: u64, field: String, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Process exit code: 2 for bad input, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Numerical(_) => 3,
            _ => 2,
        }
    }
}

impl From<dynamics::DynamicsError> for HarnessError {
    fn from(e: dynamics::DynamicsError) -> Self {
        match e {
            dynamics::DynamicsError::StepSizeFailure { .. } => HarnessError::Numerical(e.to_string()),
            _ => HarnessError::Validation(e.to_string()),
        }
    }
}

impl From<scheduler::ScheduleError> for HarnessError {
    fn from(e: scheduler::ScheduleError) -> Self {
        HarnessError::Validation(e.to_string())
    }
}

impl From<seqlib::SeqError> for HarnessError {
    fn from(e: seqlib::SeqError) -> Self {
        HarnessError::Validation(e.to_string())
    }
}

type Result<T> = std::result::Result<T, HarnessError>;

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for one task from the master seed and a tuple of task coordinates.
pub fn task_seed(master: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix64(master), |h, &p| splitmix64(h ^ p))
}

/// FNV-1a, so that seeds depend on names rather than list positions.
pub fn name_tag(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

const TAG_SHOTS: u64 = 1;
const TAG_CAL: u64 = 2;
const TAG_HAAR: u64 = 3;

/// Binomial number of zeros for survival probability p.
pub fn sample_shots(p: f64, shots: u64, seed: u64) -> Result<u64> {
    let p = clamp_probability(p)?.0;
    if p == 0.0 {
        return Ok(0);
    }
    if p == 1.0 {
        return Ok(shots);
    }
    let dist = Binomial::new(shots, p).map_err(|e| HarnessError::Validation(e.to_string()))?;
    Ok(dist.sample(&mut ChaCha8Rng::seed_from_u64(seed)))
}

/// Clamp p into [0, 1] if it lies within 1e-12 outside; the flag reports a clamp.
pub fn clamp_probability(p: f64) -> Result<(f64, bool)> {
    if !p.is_finite() || !(-1e-12..=1.0 + 1e-12).contains(&p) {
        return Err(HarnessError::Numerical(format!("probability {p} outside [0, 1]")));
    }
    let q = p.clamp(0.0, 1.0);
    Ok((q, q != p))
}

/// Uniform Bloch-sphere state, fixed by (seed, index).
pub fn haar_state(seed: u64, index: u64) -> DVector<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(task_seed(seed, &[TAG_HAAR, index]));
    let cos_t: f64 = rng.random_range(-1.0..=1.0);
    let phi: f64 = rng.random_range(0.0..2.0 * PI);
    let half = 0.5 * cos_t.clamp(-1.0, 1.0).acos();
    DVector::from_vec(vec![c(half.cos(), 0.0), C64::from_polar(half.sin(), phi)])
}

pub const PAULI_LABELS: [&str; 6] = ["0", "1", "+", "-", "+i", "-i"];

pub fn pauli_state(label: &str) -> Option<DVector<C64>> {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let v = match label {
        "0" => [c(1.0, 0.0), c(0.0, 0.0)],
        "1" => [c(0.0, 0.0), c(1.0, 0.0)],
        "+" => [c(r, 0.0), c(r, 0.0)],
        "-" => [c(r, 0.0), c(-r, 0.0)],
        "+i" => [c(r, 0.0), c(0.0, r)],
        "-i" => [c(r, 0.0), c(0.0, -r)],
        _ => return None,
    };
    Some(DVector::from_vec(v.to_vec()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StateSet {
    Pauli6,
    Haar { k: u32, seed: u64 },
}

impl StateSet {
    pub fn states(&self) -> Vec<(String, DVector<C64>)> {
        match *self {
            StateSet::Pauli6 => PAULI_LABELS.iter().map(|l| (l.to_string(), pauli_state(l).unwrap())).collect(),
            StateSet::Haar { k, seed } => (0..k).map(|i| (format!("h{i}"), haar_state(seed, i as u64))).collect(),
        }
    }

    /// `pauli6` or `haar:K` (the Haar seed is taken from the master seed).
    pub fn parse(s: &str, seed: u64) -> Result<StateSet> {
        if s == "pauli6" {
            return Ok(StateSet::Pauli6);
        }
        if let Some(k) = s.strip_prefix("haar:") {
            let k: u32 = k.parse().map_err(|_| HarnessError::Validation(format!("bad Haar count in '{s}'")))?;
            return Ok(StateSet::Haar { k, seed });
        }
        Err(HarnessError::Validation(format!("unknown state set '{s}' (expected pauli6 or haar:K)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZMode {
    /// Y-type pulses become a physical X followed by a virtual Z.
    Virtual,
    #[default]
    Physical,
}

impl std::str::FromStr for ZMode {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "virtual" => Ok(ZMode::Virtual),
            "physical" => Ok(ZMode::Physical),
            _ => Err(HarnessError::Validation(format!("unknown z-mode '{s}'"))),
        }
    }
}

/// Rewrite Y-type pulses as X then Zv (Z·X ∝ Y); the Zv sits at the end of the X window.
pub fn apply_z_mode(s: &Schedule, mode: ZMode) -> Schedule {
    if mode == ZMode::Physical {
        return s.clone();
    }
    let mut events = Vec::with_capacity(s.events.len());
    for e in &s.events {
        let p = e.pulse;
        let y_type = p.kind == PulseKind::Physical && ((p.phi - 0.5 * PI).abs() < 1e-12 || (p.phi - 1.5 * PI).abs() < 1e-12);
        if y_type {
            events.push(Event { pulse: Pulse { phi: 0.0, ..p }, ..*e });
            events.push(Event { t_start: e.end(), duration: 0.0, pulse: Pulse::virtual_z() });
        } else {
            events.push(*e);
        }
    }
    Schedule { events, ..s.clone() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BathSpec {
    /// Qubit only.
    None,
    /// DD transmon plus one spectator transmon in the frame of the drive.
    Crosstalk { omega_d: f64, omega_q1: f64, omega_q2: f64, j_zz: f64, coupling: f64 },
    Generic { n_b: u32, beta: f64, j: f64 },
    Dephasing { n_b: u32, beta: f64, j: f64 },
}

/// Device description; each calibration redraws the bath and jitters T1/T2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceModel {
    pub bath: BathSpec,
    pub t1: Option<f64>,
    pub t2: Option<f64>,
    #[serde(default)]
    pub eps_r: f64,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    #[serde(default = "default_mode")]
    pub pulse_mode: PulseMode,
}

fn default_jitter() -> f64 {
    0.1
}

fn default_mode() -> PulseMode {
    PulseMode::Instant
}

impl DeviceModel {
    /// Transmon-like preset: ZZ crosstalk to a spectator, small drive detuning,
    /// T1 = 120 μs, T2 = 90 μs.
    pub fn transmon() -> DeviceModel {
        let two_pi = 2.0 * PI;
        let omega_d = two_pi * 5.0e9;
        DeviceModel {
            bath: BathSpec::Crosstalk {
                omega_d,
                omega_q1: omega_d - two_pi * 15e3,
                omega_q2: two_pi * 5.3e9,
                j_zz: two_pi * 20e3,
                coupling: two_pi * 2e3,
            },
            t1: Some(120e-6),
            t2: Some(90e-6),
            eps_r: 0.0,
            jitter: 0.1,
            pulse_mode: PulseMode::Instant,
        }
    }

    /// Amplitude damping only (T2 = 2 T1).
    pub fn t1_only(t1: f64) -> DeviceModel {
        DeviceModel { bath: BathSpec::None, t1: Some(t1), t2: Some(2.0 * t1), eps_r: 0.0, jitter: 0.0, pulse_mode: PulseMode::Instant }
    }

    pub fn lindblad(t1: f64, t2: f64) -> DeviceModel {
        DeviceModel { bath: BathSpec::None, t1: Some(t1), t2: Some(t2), eps_r: 0.0, jitter: 0.1, pulse_mode: PulseMode::Instant }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(HarnessError::Validation(format!("model.jitter = {} must lie in [0, 1)", self.jitter)));
        }
        match (self.t1, self.t2) {
            (Some(t1), Some(t2)) => {
                Lindblad::new(t1, t2)?;
            }
            (None, None) => {}
            _ => return Err(HarnessError::Validation("model.t1 and model.t2 must be given together".into())),
        }
        Ok(())
    }

    pub fn pulse_errors(&self) -> PulseErrorModel {
        PulseErrorModel { eps_r: self.eps_r, mode: self.pulse_mode, ..PulseErrorModel::default() }
    }

    /// Noise model of calibration `cal`.
    pub fn draw(&self, master: u64, cal: u32) -> Result<NoiseModel> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(task_seed(master, &[TAG_CAL, cal as u64]));
        let bath_seed: u64 = rng.random();
        let j1: f64 = rng.random_range(-1.0..=1.0);
        let j2: f64 = rng.random_range(-1.0..=1.0);
        let model = match &self.bath {
            BathSpec::None => NoiseModel::zero(0),
            BathSpec::Crosstalk { omega_d, omega_q1, omega_q2, j_zz, coupling } => NoiseModel::rotating_crosstalk(
                RotatingFrame { omega_d: *omega_d, omega_q1: *omega_q1, omega_q2: *omega_q2, j_zz: *j_zz },
                *coupling,
                bath_seed,
            )?,
            BathSpec::Generic { n_b, beta, j } => NoiseModel::generic(*n_b, *beta, *j, bath_seed)?,
            BathSpec::Dephasing { n_b, beta, j } => NoiseModel::dephasing(*n_b, *beta, *j, bath_seed)?,
        };
        match (self.t1, self.t2) {
            (Some(t1), Some(t2)) => {
                let t1 = t1 * (1.0 + self.jitter * j1);
                let t2 = (t2 * (1.0 + self.jitter * j2)).min(2.0 * t1);
                Ok(model.with_lindblad(Lindblad::new(t1, t2)?)?)
            }
            _ => Ok(model),
        }
    }
}

/// A resolved sequence ready for layout.
#[derive(Debug, Clone)]
pub enum SeqPlan {
    Free,
    Uniform(SequenceIR),
    Timed(TimedSequence),
}

impl SeqPlan {
    pub fn resolve(name: &str) -> Result<SeqPlan> {
        Self::from_id(SeqId::parse(name, None, None)?)
    }

    pub fn from_id(id: SeqId) -> Result<SeqPlan> {
        Ok(match id {
            SeqId::Free => SeqPlan::Free,
            SeqId::Uddx(n) => SeqPlan::Timed(seqlib::uddx(n, 1.0)?),
            SeqId::Qdd(n, m) => SeqPlan::Timed(seqlib::qdd(n, m, 1.0)?),
            _ => SeqPlan::Uniform(seqlib::build(id)?),
        })
    }

    fn timed_count(&self) -> usize {
        let pulses = match self {
            SeqPlan::Free => return 0,
            SeqPlan::Uniform(ir) => &ir.pulses,
            SeqPlan::Timed(ts) => &ts.ir.pulses,
        };
        pulses.iter().filter(|p| p.kind != PulseKind::VirtualZ).count()
    }

    /// Length of one repetition with padding d.
    fn block_length(&self, delta: f64, d: f64) -> f64 {
        let n = self.timed_count() as f64;
        match self {
            SeqPlan::Free => 0.0,
            SeqPlan::Uniform(_) => n * (delta + d),
            SeqPlan::Timed(ts) => scheduler::udd_min_base(ts, delta) + n * d,
        }
    }

    /// Repetitions that fit in T with padding d (0 if none).
    pub fn reps(&self, total: f64, delta: f64, d: f64) -> u32 {
        let b = self.block_length(delta, d);
        if b <= 0.0 {
            return 1;
        }
        (total / b * (1.0 + 1e-12)).floor().min(u32::MAX as f64) as u32
    }

    /// Largest d at which one repetition fills T.
    pub fn max_delay(&self, total: f64, delta: f64) -> Result<f64> {
        Ok(match self {
            SeqPlan::Free => 0.0,
            SeqPlan::Uniform(ir) => scheduler::max_delay(ir, total, delta)?,
            SeqPlan::Timed(ts) => scheduler::max_delay_timed(ts, total, delta)?,
        })
    }

    /// Layout with as many repetitions as fit; `None` if not even one fits.
    pub fn schedule(&self, total: f64, delta: f64, d: f64, sym: Symmetry) -> Result<Option<Schedule>> {
        if self.timed_count() == 0 {
            return Ok(Some(Schedule::idle(total)));
        }
        let reps = self.reps(total, delta, d);
        if reps == 0 {
            return Ok(None);
        }
        self.layout(total, delta, d, sym, reps).map(Some)
    }

    /// Layout with an explicit repetition count.
    pub fn layout(&self, total: f64, delta: f64, d: f64, sym: Symmetry, reps: u32) -> Result<Schedule> {
        Ok(match self {
            SeqPlan::Free => Schedule::idle(total),
            SeqPlan::Uniform(ir) => scheduler::render(ir, total, delta, d, sym, reps)?,
            SeqPlan::Timed(ts) => {
                if reps == 0 {
                    return Err(scheduler::ScheduleError::ZeroReps.into());
                }
                let n = self.timed_count() as f64;
                let base = total / reps as f64 - n * d;
                let block = scheduler::render_udd_family_padded(ts, base, delta, d, sym)?;
                scheduler::repeat(&block, reps)?
            }
        })
    }
}

/// Survival probability ⟨φ|Tr_B ρ(T)|φ⟩ with φ = U0|ψ⟩ and the bath starting maximally mixed.
pub fn survival_probability(evo: &Evolution, psi: &DVector<C64>, u0: &Mat, bath_dim: usize) -> Result<f64> {
    let rho_s = psi * psi.adjoint();
    let rho0 = kron(&rho_s, &(linalg::eye(bath_dim) * c(1.0 / bath_dim as f64, 0.0)));
    let rho = evo.apply(&rho0);
    let tr = rho.trace();
    if (tr.re - 1.0).abs() > 1e-9 || tr.im.abs() > 1e-9 {
        return Err(HarnessError::Numerical(format!("trace drifted to {tr}")));
    }
    let reduced = linalg::partial_trace_bath(&rho, 2, bath_dim);
    let phi = u0 * psi;
    let p = (phi.adjoint() * reduced * phi)[(0, 0)].re;
    // same tolerance as the trace check
    if !(-1e-9..=1.0 + 1e-9).contains(&p) {
        return Err(HarnessError::Numerical(format!("survival probability {p} outside [0, 1]")));
    }
    Ok(p.clamp(0.0, 1.0))
}

fn schedule_pulses(s: &Schedule) -> Vec<Pulse> {
    s.events.iter().map(|e| e.pulse).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: DeviceModel,
    pub sequences: Vec<String>,
    pub states: StateSet,
    /// Time grid of the dense protocol (seconds).
    pub times: Vec<f64>,
    /// Fixed total time of the interval sweep (seconds).
    pub total: f64,
    pub delta: f64,
    #[serde(default = "default_d_points")]
    pub d_points: usize,
    #[serde(default = "default_symmetries")]
    pub symmetries: Vec<Symmetry>,
    pub shots: u64,
    pub calibrations: u32,
    pub seed: u64,
    #[serde(default)]
    pub z_mode: ZMode,
}

fn default_d_points() -> usize {
    8
}

fn default_symmetries() -> Vec<Symmetry> {
    vec![Symmetry::Asymmetric, Symmetry::Symmetric]
}

/// 12 points from 0 to 75 μs.
pub fn default_time_grid() -> Vec<f64> {
    linspace(0.0, 75e-6, 12)
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![a],
        _ => (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect(),
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: DeviceModel::transmon(),
            sequences: vec!["free".into(), "xy4".into()],
            states: StateSet::Pauli6,
            times: default_time_grid(),
            total: 75e-6,
            delta: 50e-9,
            d_points: 8,
            symmetries: default_symmetries(),
            shots: 8192,
            calibrations: 10,
            seed: 0,
            z_mode: ZMode::Physical,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shots == 0 {
            return Err(HarnessError::Validation("shots must be positive".into()));
        }
        if let StateSet::Haar { k: 0, .. } = self.states {
            return Err(HarnessError::Validation("states: Haar count must be at least 1".into()));
        }
        if self.calibrations == 0 {
            return Err(HarnessError::Validation("calibrations must be positive".into()));
        }
        if !(self.delta >= 0.0) {
            return Err(HarnessError::Validation(format!("delta = {} must be non-negative", self.delta)));
        }
        if self.sequences.is_empty() {
            return Err(HarnessError::Validation("sequences: empty list".into()));
        }
        for (i, s) in self.sequences.iter().enumerate() {
            SeqPlan::resolve(s).map_err(|e| HarnessError::Validation(format!("sequences[{i}] = '{s}': {e}")))?;
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) || self.times.iter().any(|t| !(*t >= 0.0)) {
            return Err(HarnessError::Validation("times must be non-negative and strictly increasing".into()));
        }
        if self.d_points < 2 {
            return Err(HarnessError::Validation("d_points must be at least 2".into()));
        }
        self.model.validate()
    }

    fn plans(&self) -> Result<Vec<(String, SeqPlan)>> {
        self.sequences.iter().map(|s| Ok((s.clone(), SeqPlan::resolve(s)?))).collect()
    }

    fn shot_seed(&self, seq: &str, state: &str, cal: u32, t: f64, d: f64, sym: Option<Symmetry>) -> u64 {
        let sym_tag = match sym {
            Some(Symmetry::Symmetric) if d > 0.0 => 2,
            Some(Symmetry::Asymmetric) if d > 0.0 => 1,
            _ => 0,
        };
        task_seed(self.seed, &[TAG_SHOTS, name_tag(seq), name_tag(state), cal as u64, t.to_bits(), d.to_bits(), sym_tag])
    }
}

/// A grid point that could not be laid out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub sequence: String,
    pub calibration: u32,
    pub time_s: f64,
    pub d_s: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PauliRun {
    pub curves: Vec<DecayCurve>,
    pub skipped: Vec<Skipped>,
}

struct Point {
    seq: String,
    state: String,
    cal: u32,
    t: f64,
    zeros: u64,
}

fn simulate_point(
    cfg: &ExperimentConfig,
    model: &NoiseModel,
    sched: Option<&Schedule>,
    states: &[(String, DVector<C64>)],
) -> Result<Vec<f64>> {
    let err = cfg.model.pulse_errors();
    let Some(s) = sched else {
        return Ok(vec![1.0; states.len()]);
    };
    let s = apply_z_mode(s, cfg.z_mode);
    let evo = dynamics::propagate(&s, model, &err, Frame::Rotating)?;
    let u0 = dynamics::ideal_product(&schedule_pulses(&s));
    states.iter().map(|(_, psi)| survival_probability(&evo, psi, &u0, model.bath_dim)).collect()
}

/// Dense protocol: for every (sequence, state, calibration, t) pack as many repetitions
/// as fit into t, simulate, and sample shots.
pub fn run_pauli_experiment(cfg: &ExperimentConfig) -> Result<PauliRun> {
    cfg.validate()?;
    let plans = cfg.plans()?;
    let states = cfg.states.states();
    let tasks: Vec<(usize, u32)> = (0..plans.len()).flat_map(|i| (0..cfg.calibrations).map(move |c| (i, c))).collect();
    let results: Vec<Result<(Vec<Point>, Vec<Skipped>)>> = tasks
        .par_iter()
        .map(|&(i, cal)| {
            let (name, plan) = &plans[i];
            let model = cfg.model.draw(cfg.seed, cal)?;
            let mut points = Vec::new();
            let mut skipped = Vec::new();
            for &t in &cfg.times {
                let sched = if t == 0.0 { None } else { plan.schedule(t, cfg.delta, 0.0, Symmetry::Asymmetric)? };
                if t > 0.0 && sched.is_none() {
                    skipped.push(Skipped { sequence: name.clone(), calibration: cal, time_s: t, d_s: 0.0, reason: "over-packed".into() });
                    continue;
                }
                let probs = simulate_point(cfg, &model, sched.as_ref(), &states)?;
                for ((label, _), p) in states.iter().zip(probs) {
                    let seed = cfg.shot_seed(name, label, cal, t, 0.0, None);
                    points.push(Point { seq: name.clone(), state: label.clone(), cal, t, zeros: sample_shots(p, cfg.shots, seed)? });
                }
            }
            Ok((points, skipped))
        })
        .collect();

    let mut grouped: BTreeMap<(String, String, u32), (Vec<f64>, Vec<(u64, u64)>)> = BTreeMap::new();
    let mut skipped = Vec::new();
    for r in results {
        let (points, sk) = r?;
        skipped.extend(sk);
        for p in points {
            let e = grouped.entry((p.seq, p.state, p.cal)).or_default();
            e.0.push(p.t);
            e.1.push((p.zeros, cfg.shots));
        }
    }
    let curves = grouped
        .into_iter()
        .map(|((seq, state, cal), (times, counts))| {
            DecayCurve::new(&seq, &state, cal, times, counts).map_err(|e| HarnessError::Validation(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    skipped.sort_by(|a, b| (&a.sequence, a.calibration).cmp(&(&b.sequence, b.calibration)).then(a.time_s.total_cmp(&b.time_s)));
    Ok(PauliRun { curves, skipped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HaarRecord {
    pub sequence: String,
    pub symmetry: Symmetry,
    pub d_index: usize,
    pub d_s: f64,
    pub state: String,
    pub calibration: u32,
    pub probability: f64,
    pub zeros: u64,
    pub shots: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HaarSummary {
    pub sequence: String,
    pub symmetry: Symmetry,
    pub d_index: usize,
    pub d_s: f64,
    pub stats: BoxStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HaarRun {
    pub records: Vec<HaarRecord>,
    pub summaries: Vec<HaarSummary>,
    pub skipped: Vec<Skipped>,
}

impl HaarRun {
    /// Summary for one (sequence, symmetry) pair, ordered by d.
    pub fn column(&self, seq: &str, sym: Symmetry) -> Vec<&HaarSummary> {
        self.summaries.iter().filter(|s| s.sequence == seq && s.symmetry == sym).collect()
    }
}

/// Interval sweep at fixed T: d from 0 to d_max (one repetition) in `d_points` steps,
/// for each symmetry, state and calibration.
pub fn run_haar_interval_experiment(cfg: &ExperimentConfig) -> Result<HaarRun> {
    cfg.validate()?;
    let plans = cfg.plans()?;
    let states = cfg.states.states();
    let total = cfg.total;
    if !(total > 0.0) {
        return Err(HarnessError::Validation(format!("total = {total} must be positive")));
    }
    let mut grids = Vec::with_capacity(plans.len());
    for (name, plan) in &plans {
        if plan.reps(total, cfg.delta, 0.0) == 0 {
            return Err(HarnessError::Validation(format!("T = {total:e} is shorter than one dense repetition of {name}")));
        }
        grids.push(linspace(0.0, plan.max_delay(total, cfg.delta)?, cfg.d_points));
    }
    let mut tasks = Vec::new();
    for i in 0..plans.len() {
        for &sym in &cfg.symmetries {
            for k in 0..cfg.d_points {
                for cal in 0..cfg.calibrations {
                    tasks.push((i, sym, k, cal));
                }
            }
        }
    }
    let results: Vec<Result<(Vec<HaarRecord>, Option<Skipped>)>> = tasks
        .par_iter()
        .map(|&(i, sym, k, cal)| {
            let (name, plan) = &plans[i];
            let d = grids[i][k];
            let model = cfg.model.draw(cfg.seed, cal)?;
            let Some(sched) = plan.schedule(total, cfg.delta, d, sym)? else {
                let sk = Skipped { sequence: name.clone(), calibration: cal, time_s: total, d_s: d, reason: "over-packed".into() };
                return Ok((vec![], Some(sk)));
            };
            let probs = simulate_point(cfg, &model, Some(&sched), &states)?;
            let recs = states
                .iter()
                .zip(probs)
                .map(|((label, _), p)| {
                    let seed = cfg.shot_seed(name, label, cal, total, d, Some(sym));
                    Ok(HaarRecord {
                        sequence: name.clone(),
                        symmetry: sym,
                        d_index: k,
                        d_s: d,
                        state: label.clone(),
                        calibration: cal,
                        probability: p,
                        zeros: sample_shots(p, cfg.shots, seed)?,
                        shots: cfg.shots,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((recs, None))
        })
        .collect();
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        let (recs, sk) = r?;
        records.extend(recs);
        skipped.extend(sk);
    }
    let summaries = haar_summaries(&records)?;
    Ok(HaarRun { records, summaries, skipped })
}

/// Box statistics of the sampled fidelity per (sequence, symmetry, d index).
pub fn haar_summaries(records: &[HaarRecord]) -> Result<Vec<HaarSummary>> {
    let mut groups: BTreeMap<(String, u8, usize), (f64, Vec<f64>)> = BTreeMap::new();
    for r in records {
        let e = groups.entry((r.sequence.clone(), r.symmetry as u8, r.d_index)).or_insert((r.d_s, vec![]));
        e.1.push(r.zeros as f64 / r.shots as f64);
    }
    groups
        .into_iter()
        .map(|((sequence, sym, d_index), (d_s, v))| {
            let symmetry = if sym == Symmetry::Asymmetric as u8 { Symmetry::Asymmetric } else { Symmetry::Symmetric };
            Ok(HaarSummary { sequence, symmetry, d_index, d_s, stats: quartile_summary(&v).map_err(|e| HarnessError::Validation(e.to_string()))? })
        })
        .collect()
}

pub const SCHEDULE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleFile {
    pub version: u32,
    #[serde(rename = "T")]
    pub total: f64,
    pub delta: f64,
    pub d: f64,
    pub symmetry: String,
    pub reps: u32,
    pub events: Vec<Event>,
}

impl From<&Schedule> for ScheduleFile {
    fn from(s: &Schedule) -> Self {
        ScheduleFile {
            version: SCHEDULE_VERSION,
            total: s.total_time,
            delta: s.delta,
            d: s.delay,
            symmetry: s.symmetry.short().to_string(),
            reps: s.reps,
            events: s.events.clone(),
        }
    }
}

fn parse_error(path: &str, line: usize, field: &str, message: impl Into<String>) -> HarnessError {
    HarnessError::Parse { path: path.to_string(), line: line as u64, field: field.to_string(), message: message.into() }
}

pub fn export_schedule(s: &Schedule) -> String {
    serde_json::to_string_pretty(&ScheduleFile::from(s)).expect("schedule serializes")
}

pub fn import_schedule(text: &str, path: &str) -> Result<Schedule> {
    let f: ScheduleFile = serde_json::from_str(text).map_err(|e| parse_error(path, e.line(), &format!("column {}", e.column()), e.to_string()))?;
    if f.version != SCHEDULE_VERSION {
        return Err(parse_error(path, 1, "version", format!("unsupported version {}", f.version)));
    }
    let symmetry = match f.symmetry.as_str() {
        "a" | "asymmetric" => Symmetry::Asymmetric,
        "s" | "symmetric" => Symmetry::Symmetric,
        other => return Err(parse_error(path, 1, "symmetry", format!("expected 'a' or 's', got '{other}'"))),
    };
    let s = Schedule { events: f.events, total_time: f.total, delta: f.delta, delay: f.d, symmetry, reps: f.reps };
    if let Some(v) = scheduler::validate(&s).first() {
        let field = v.index.map(|i| format!("events[{i}]")).unwrap_or_else(|| "schedule".into());
        return Err(parse_error(path, 1, &field, format!("{:?}: {}", v.kind, v.detail)));
    }
    Ok(s)
}

pub const CURVE_HEADER: [&str; 6] = ["sequence", "state", "calibration", "time_s", "zeros", "shots"];

#[derive(Debug, Serialize, Deserialize)]
struct CurveRow {
    sequence: String,
    state: String,
    calibration: u32,
    time_s: f64,
    zeros: u64,
    shots: u64,
}

pub fn write_curves<W: Write>(curves: &[DecayCurve], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CURVE_HEADER).map_err(csv_io)?;
    for cv in curves {
        for (t, &(z, s)) in cv.times.iter().zip(&cv.counts) {
            w.write_record([cv.sequence.clone(), cv.state.clone(), cv.calibration.to_string(), format!("{t:e}"), z.to_string(), s.to_string()])
                .map_err(csv_io)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> HarnessError {
    HarnessError::Io(std::io::Error::other(e.to_string()))
}

pub fn curves_to_csv(curves: &[DecayCurve]) -> String {
    let mut buf = Vec::new();
    write_curves(curves, &mut buf).expect("in-memory write");
    String::from_utf8(buf).expect("utf-8")
}

/// Read curves, grouping rows by (sequence, state, calibration) in sorted order.
pub fn read_curves<R: Read>(input: R, path: &str) -> Result<Vec<DecayCurve>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers().map_err(|e| parse_error(path, 1, "header", e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != CURVE_HEADER {
        return Err(parse_error(path, 1, "header", format!("expected '{}'", CURVE_HEADER.join(","))));
    }
    let mut grouped: BTreeMap<(String, String, u32), (Vec<f64>, Vec<(u64, u64)>, usize)> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_error(path, line as usize, "row", e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0) as usize;
        let row: CurveRow = rec.deserialize(Some(&headers)).map_err(|e| {
            let field = match e.kind() {
                csv::ErrorKind::Deserialize { err, .. } => err.field().and_then(|i| CURVE_HEADER.get(i as usize)).copied().unwrap_or("row"),
                _ => "row",
            };
            parse_error(path, line, field, e.to_string())
        })?;
        if row.shots == 0 || row.zeros > row.shots {
            return Err(parse_error(path, line, "zeros", format!("zeros {} with shots {}", row.zeros, row.shots)));
        }
        let e = grouped.entry((row.sequence, row.state, row.calibration)).or_insert((vec![], vec![], line));
        e.0.push(row.time_s);
        e.1.push((row.zeros, row.shots));
    }
    grouped
        .into_iter()
        .map(|((seq, state, cal), (times, counts, line))| {
            DecayCurve::new(&seq, &state, cal, times, counts).map_err(|e| parse_error(path, line, "time_s", e.to_string()))
        })
        .collect()
}

pub const HAAR_HEADER: [&str; 8] = ["sequence", "symmetry", "d_index", "d_s", "state", "calibration", "zeros", "shots"];

pub fn haar_to_csv(run: &HaarRun) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HAAR_HEADER).expect("in-memory write");
    for r in &run.records {
        w.write_record([
            r.sequence.clone(),
            r.symmetry.short().to_string(),
            r.d_index.to_string(),
            format!("{:e}", r.d_s),
            r.state.clone(),
            r.calibration.to_string(),
            r.zeros.to_string(),
            r.shots.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

#[derive(Debug, Deserialize)]
struct HaarRow {
    sequence: String,
    symmetry: String,
    d_index: usize,
    d_s: f64,
    state: String,
    calibration: u32,
    zeros: u64,
    shots: u64,
}

/// Read interval-sweep records written by [`haar_to_csv`]. The file holds counts only,
/// so `probability` is the sampled estimate zeros/shots.
pub fn read_haar<R: Read>(input: R, path: &str) -> Result<Vec<HaarRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers().map_err(|e| parse_error(path, 1, "header", e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != HAAR_HEADER {
        return Err(parse_error(path, 1, "header", format!("expected '{}'", HAAR_HEADER.join(","))));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_error(path, line as usize, "row", e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0) as usize;
        let row: HaarRow = rec.deserialize(Some(&headers)).map_err(|e| {
            let field = match e.kind() {
                csv::ErrorKind::Deserialize { err, .. } => err.field().and_then(|i| HAAR_HEADER.get(i as usize)).copied().unwrap_or("row"),
                _ => "row",
            };
            parse_error(path, line, field, e.to_string())
        })?;
        let symmetry = match row.symmetry.as_str() {
            "a" => Symmetry::Asymmetric,
            "s" => Symmetry::Symmetric,
            other => return Err(parse_error(path, line, "symmetry", format!("expected 'a' or 's', got '{other}'"))),
        };
        if row.shots == 0 || row.zeros > row.shots {
            return Err(parse_error(path, line, "zeros", format!("zeros {} with shots {}", row.zeros, row.shots)));
        }
        out.push(HaarRecord {
            sequence: row.sequence,
            symmetry,
            d_index: row.d_index,
            d_s: row.d_s,
            state: row.state,
            calibration: row.calibration,
            probability: row.zeros as f64 / row.shots as f64,
            zeros: row.zeros,
            shots: row.shots,
        });
    }
    Ok(out)
}

pub fn import_config(text: &str, path: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig =
        serde_json::from_str(text).map_err(|e| parse_error(path, e.line(), &format!("column {}", e.column()), e.to_string()))?;
    cfg.validate().map_err(|e| match e {
        HarnessError::Validation(m) => {
            let field = m.split(['=', ':', ' ']).next().unwrap_or("config").to_string();
            parse_error(path, 1, &field, m)
        }
        other => other,
    })?;
    Ok(cfg)
}

pub fn export_config(cfg: &ExperimentConfig) -> String {
    serde_json::to_string_pretty(cfg).expect("config serializes")
}

pub fn import_model(text: &str, path: &str) -> Result<DeviceModel> {
    let m: DeviceModel =
        serde_json::from_str(text).map_err(|e| parse_error(path, e.line(), &format!("column {}", e.column()), e.to_string()))?;
    m.validate()?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn quick(seqs: &[&str]) -> ExperimentConfig {
        ExperimentConfig {
            model: DeviceModel::lindblad(60e-6, 40e-6),
            sequences: seqs.iter().map(|s| s.to_string()).collect(),
            times: linspace(0.0, 20e-6, 5),
            total: 10e-6,
            delta: 200e-9,
            d_points: 4,
            shots: 2048,
            calibrations: 2,
            seed: 11,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn shot_sampling_edges() {
        assert_eq!(sample_shots(1.0, 8192, 3).unwrap(), 8192);
        assert_eq!(sample_shots(0.0, 8192, 3).unwrap(), 0);
        assert_eq!(sample_shots(1.0 + 1e-13, 100, 3).unwrap(), 100);
        assert!(sample_shots(1.0 + 1e-9, 100, 3).is_err());
        assert!(sample_shots(-0.1, 100, 3).is_err());
    }

    #[test]
    fn shot_sampling_is_binomial() {
        let n = 10_000;
        let sd = (8192.0f64 * 0.25).sqrt();
        let mut sum = 0.0;
        for s in 0..n {
            let z = sample_shots(0.5, 8192, s).unwrap() as f64;
            assert!((z - 4096.0).abs() <= 4.0 * sd + 1.0 || s > 0 && (z - 4096.0).abs() <= 5.0 * sd);
            sum += z;
        }
        let mean = sum / n as f64;
        assert!((mean - 4096.0).abs() / 4096.0 < 0.005);
        let outside = (0..n).filter(|&s| (sample_shots(0.5, 8192, s).unwrap() as f64 - 4096.0).abs() > 4.0 * sd).count();
        assert!(outside <= 5, "{outside}");
    }

    #[test]
    fn haar_states_are_reproducible_and_uniform() {
        assert_eq!(haar_state(9, 4), haar_state(9, 4));
        let n = 100_000;
        let (mut m1, mut m2) = (0.0, 0.0);
        for i in 0..n {
            let v = haar_state(1, i);
            let z = v[0].norm_sqr() - v[1].norm_sqr();
            assert!((v.norm() - 1.0).abs() < 1e-12);
            m1 += z;
            m2 += z * z;
        }
        assert!((m1 / n as f64).abs() < 0.01);
        assert!((m2 / n as f64 - 1.0 / 3.0).abs() < 0.01);
    }

    #[test]
    fn seeds_depend_on_every_part() {
        let a = task_seed(1, &[1, 2, 3]);
        assert_ne!(a, task_seed(2, &[1, 2, 3]));
        assert_ne!(a, task_seed(1, &[1, 3, 2]));
        assert_eq!(a, task_seed(1, &[1, 2, 3]));
    }

    #[test]
    fn free_zero_does_not_decay() {
        let run = run_pauli_experiment(&quick(&["free"])).unwrap();
        for cv in run.curves.iter().filter(|c| c.state == "0") {
            assert!(cv.fidelities().iter().all(|&f| f == 1.0), "{cv:?}");
        }
    }

    #[test]
    fn free_one_follows_relaxation() {
        let mut cfg = quick(&["free"]);
        cfg.model = DeviceModel::t1_only(30e-6);
        cfg.shots = 8192;
        let run = run_pauli_experiment(&cfg).unwrap();
        let cv = run.curves.iter().find(|c| c.state == "1").unwrap();
        for (t, f) in cv.times.iter().zip(cv.fidelities()) {
            let p = (-t / 30e-6f64).exp();
            let sd = (p * (1.0 - p) / 8192.0).sqrt();
            assert!((f - p).abs() <= 4.0 * sd + 1e-12, "t = {t}: {f} vs {p}");
        }
    }

    #[test]
    fn probabilities_and_traces_are_conserved() {
        let model = DeviceModel::transmon().draw(3, 0).unwrap();
        let plan = SeqPlan::resolve("xy4").unwrap();
        let s = plan.schedule(3e-6, 50e-9, 0.0, Symmetry::Asymmetric).unwrap().unwrap();
        let evo = dynamics::propagate(&s, &model, &PulseErrorModel::ideal(), Frame::Rotating).unwrap();
        let u0 = dynamics::ideal_product(&schedule_pulses(&s));
        for (_, psi) in StateSet::Pauli6.states() {
            let p = survival_probability(&evo, &psi, &u0, model.bath_dim).unwrap();
            assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn d_grid_spans_zero_to_single_repetition() {
        let plan = SeqPlan::resolve("cpmg").unwrap();
        let total = 10e-6;
        let dmax = plan.max_delay(total, 200e-9).unwrap();
        let grid = linspace(0.0, dmax, 8);
        assert_eq!(grid.len(), 8);
        assert_eq!(grid[0], 0.0);
        assert_eq!(plan.reps(total, 200e-9, dmax), 1);
        assert_eq!(plan.schedule(total, 200e-9, dmax, Symmetry::Asymmetric).unwrap().unwrap().reps, 1);
        let timed = SeqPlan::resolve("uddx4").unwrap();
        let dmax = timed.max_delay(total, 200e-9).unwrap();
        assert_eq!(timed.reps(total, 200e-9, dmax), 1);
        assert!(timed.schedule(total, 200e-9, dmax, Symmetry::Symmetric).unwrap().is_some());
    }

    #[test]
    fn symmetry_matters_only_with_padding() {
        for name in ["cpmg", "xy4", "uddx3", "qdd2_2"] {
            let plan = SeqPlan::resolve(name).unwrap();
            let a0 = plan.schedule(10e-6, 100e-9, 0.0, Symmetry::Asymmetric).unwrap().unwrap();
            let s0 = plan.schedule(10e-6, 100e-9, 0.0, Symmetry::Symmetric).unwrap().unwrap();
            assert_eq!(a0.events, s0.events, "{name}");
            let a = plan.schedule(10e-6, 100e-9, 300e-9, Symmetry::Asymmetric).unwrap().unwrap();
            let s = plan.schedule(10e-6, 100e-9, 300e-9, Symmetry::Symmetric).unwrap().unwrap();
            assert_ne!(a.events, s.events, "{name}");
            assert!(scheduler::validate(&a).is_empty() && scheduler::validate(&s).is_empty(), "{name}");
        }
    }

    #[test]
    fn pauli_states_through_interval_driver_match_dense_driver() {
        let mut cfg = quick(&["xy4", "uddx3"]);
        cfg.times = vec![0.0, cfg.total];
        let dense = run_pauli_experiment(&cfg).unwrap();
        let sweep = run_haar_interval_experiment(&cfg).unwrap();
        for cv in &dense.curves {
            for sym in [Symmetry::Asymmetric, Symmetry::Symmetric] {
                let r = sweep
                    .records
                    .iter()
                    .find(|r| r.sequence == cv.sequence && r.state == cv.state && r.calibration == cv.calibration && r.d_index == 0 && r.symmetry == sym)
                    .unwrap();
                assert_eq!(r.zeros, cv.counts[1].0, "{} {}", cv.sequence, cv.state);
            }
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = quick(&["xy4", "free"]);
        let a = curves_to_csv(&run_pauli_experiment(&cfg).unwrap().curves);
        let b = curves_to_csv(&run_pauli_experiment(&cfg).unwrap().curves);
        assert_eq!(a, b);
    }

    #[test]
    fn virtual_z_rewrites_y_pulses() {
        let plan = SeqPlan::resolve("xy4").unwrap();
        let s = plan.schedule(4e-6, 100e-9, 0.0, Symmetry::Asymmetric).unwrap().unwrap();
        let v = apply_z_mode(&s, ZMode::Virtual);
        assert_eq!(v.events.len(), s.events.len() * 3 / 2);
        assert!(scheduler::validate(&v).is_empty());
        let u = dynamics::ideal_product(&schedule_pulses(&s));
        let w = dynamics::ideal_product(&schedule_pulses(&v));
        assert!(linalg::phase_aligned_distance(&u, &w) < 1e-12);
    }

    #[test]
    fn schedule_file_round_trip() {
        let plan = SeqPlan::resolve("qdd2_3").unwrap();
        let s = plan.schedule(7.3e-6, 37e-9, 11e-9, Symmetry::Symmetric).unwrap().unwrap();
        let text = export_schedule(&s);
        let back = import_schedule(&text, "s.json").unwrap();
        assert_eq!(back, s);
        let err = import_schedule("{\"version\": 1,\n \"T\": \"x\"}", "bad.json").unwrap_err();
        assert!(matches!(err, HarnessError::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn curve_csv_round_trip() {
        let run = run_pauli_experiment(&quick(&["cpmg"])).unwrap();
        let text = curves_to_csv(&run.curves);
        assert!(text.starts_with("sequence,state,calibration,time_s,zeros,shots\n"));
        let back = read_curves(text.as_bytes(), "c.csv").unwrap();
        assert_eq!(back, run.curves);
        let bad = "sequence,state,calibration,time_s,zeros,shots\nxy4,0,0,0,5,4\n";
        let err = read_curves(bad.as_bytes(), "c.csv").unwrap_err();
        assert!(matches!(err, HarnessError::Parse { line: 2, ref field, .. } if field == "zeros"), "{err}");
        let bad = "sequence,state,calibration,time_s,zeros,shots\nxy4,0,zero,0,5,4\n";
        let err = read_curves(bad.as_bytes(), "c.csv").unwrap_err();
        assert!(matches!(err, HarnessError::Parse { line: 2, ref field, .. } if field == "calibration"), "{err}");
    }

    #[test]
    fn haar_csv_round_trip() {
        let mut cfg = quick(&["cpmg"]);
        cfg.states = StateSet::Haar { k: 3, seed: 4 };
        cfg.d_points = 3;
        let run = run_haar_interval_experiment(&cfg).unwrap();
        let back = read_haar(haar_to_csv(&run).as_bytes(), "h.csv").unwrap();
        // the file carries counts only, so the probability comes back as zeros/shots
        let expected: Vec<HaarRecord> =
            run.records.iter().map(|r| HaarRecord { probability: r.zeros as f64 / r.shots as f64, ..r.clone() }).collect();
        assert_eq!(back, expected);
        assert_eq!(haar_summaries(&back).unwrap(), run.summaries);
        let bad = "sequence,symmetry,d_index,d_s,state,calibration,zeros,shots\ncpmg,x,0,0,h0,0,1,2\n";
        let err = read_haar(bad.as_bytes(), "h.csv").unwrap_err();
        assert!(matches!(err, HarnessError::Parse { line: 2, ref field, .. } if field == "symmetry"), "{err}");
    }

    #[test]
    fn config_with_unknown_sequence_names_the_field() {
        let mut cfg = quick(&["xy4"]);
        cfg.sequences.push("xy5".into());
        let text = export_config(&cfg);
        let err = import_config(&text, "cfg.json").unwrap_err();
        assert!(err.to_string().contains("sequences[1]"), "{err}");
        cfg.sequences.pop();
        assert_eq!(import_config(&export_config(&cfg), "cfg.json").unwrap(), cfg);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(HarnessError::Validation("x".into()).exit_code(), 2);
        assert_eq!(HarnessError::Numerical("x".into()).exit_code(), 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn dense_layouts_are_valid(idx in 0usize..8, t in 1e-6f64..80e-6, d in 0.0f64..1e-6) {
            let names = ["cpmg", "xy4", "edd", "ur6", "kdd", "uddx5", "qdd2_2", "cdd2"];
            let plan = SeqPlan::resolve(names[idx]).unwrap();
            if let Some(s) = plan.schedule(t, 50e-9, d, Symmetry::Symmetric).unwrap() {
                prop_assert!(scheduler::validate(&s).is_empty(), "{:?}", scheduler::validate(&s));
                prop_assert!((s.total_time - t).abs() <= 1e-9 * t);
            }
        }
    }
}
