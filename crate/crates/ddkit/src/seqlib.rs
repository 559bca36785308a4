//! Pulse sequence catalog.
//!
//! Sequences are stored as an ordered pulse list plus normalized free-interval
//! fractions (leading, one after each pulse). Recursive families are built with
//! [`concat`], the non-uniform ones from closed-form pulse times.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_6, PI};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const TWO_PI: f64 = 2.0 * PI;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeqError {
    #[error("unknown sequence name `{0}`")]
    UnknownName(String),
    #[error("order {order} out of range for {family} (allowed {allowed})")]
    OrderOutOfRange { family: &'static str, order: u32, allowed: &'static str },
    #[error("UR is defined for even n only (got {0})")]
    OddUr(u32),
    #[error("missing order parameter `{0}` for {1}")]
    MissingOrder(&'static str, &'static str),
    #[error("total time must be positive (got {0})")]
    NonPositiveTime(f64),
    #[error("cannot concatenate into non-uniform sequence `{0}`")]
    NonUniformOuter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseKind {
    Physical,
    VirtualZ,
    IdentityWait,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub phi: f64,
    pub theta: f64,
    pub sign: i8,
    pub kind: PulseKind,
}

impl Pulse {
    pub fn axis(phi: f64) -> Pulse {
        Pulse { phi: phi.rem_euclid(TWO_PI), theta: PI, sign: 1, kind: PulseKind::Physical }
    }
    pub fn x() -> Pulse {
        Pulse::axis(0.0)
    }
    pub fn y() -> Pulse {
        Pulse::axis(FRAC_PI_2)
    }
    pub fn xbar() -> Pulse {
        Pulse::x().bar()
    }
    pub fn ybar() -> Pulse {
        Pulse::y().bar()
    }
    pub fn virtual_z() -> Pulse {
        Pulse { phi: 0.0, theta: PI, sign: 1, kind: PulseKind::VirtualZ }
    }
    pub fn identity_wait() -> Pulse {
        Pulse { phi: 0.0, theta: 0.0, sign: 1, kind: PulseKind::IdentityWait }
    }
    /// Same axis, opposite orientation.
    pub fn bar(self) -> Pulse {
        Pulse { sign: -self.sign, ..self }
    }
    pub fn is_physical(&self) -> bool {
        self.kind == PulseKind::Physical
    }
    /// Short label such as `X`, `Ybar`, `(π)_1.0472`, `Zv`, `I`.
    pub fn label(&self) -> String {
        let base = match self.kind {
            PulseKind::VirtualZ => return "Zv".into(),
            PulseKind::IdentityWait => return "I".into(),
            PulseKind::Physical => {
                if self.phi.abs() < 1e-12 {
                    "X".to_string()
                } else if (self.phi - FRAC_PI_2).abs() < 1e-12 {
                    "Y".to_string()
                } else {
                    format!("P({:.6})", self.phi)
                }
            }
        };
        if self.sign < 0 {
            format!("{base}bar")
        } else {
            base
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Free,
    Hahn,
    Cpmg,
    Xy4,
    Cdd,
    Edd,
    Rga,
    Kdd,
    Ur,
    Uddx,
    Qdd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RgaKind {
    R2x,
    R2y,
    R4,
    R4p,
    R8a,
    R8c,
    R16b,
    R32a,
    R32c,
    R64a,
    R64c,
    R256a,
}

impl RgaKind {
    pub const ALL: [RgaKind; 12] = [
        RgaKind::R2x,
        RgaKind::R2y,
        RgaKind::R4,
        RgaKind::R4p,
        RgaKind::R8a,
        RgaKind::R8c,
        RgaKind::R16b,
        RgaKind::R32a,
        RgaKind::R32c,
        RgaKind::R64a,
        RgaKind::R64c,
        RgaKind::R256a,
    ];

    fn suffix(self) -> &'static str {
        match self {
            RgaKind::R2x => "2x",
            RgaKind::R2y => "2y",
            RgaKind::R4 => "4",
            RgaKind::R4p => "4p",
            RgaKind::R8a => "8a",
            RgaKind::R8c => "8c",
            RgaKind::R16b => "16b",
            RgaKind::R32a => "32a",
            RgaKind::R32c => "32c",
            RgaKind::R64a => "64a",
            RgaKind::R64c => "64c",
            RgaKind::R256a => "256a",
        }
    }
}

/// Catalog identifier with its order parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SeqId {
    Free,
    Hahn,
    SuperHahn,
    Px,
    Cpmg,
    SuperCpmg,
    Xy4,
    Cdd(u32),
    Edd,
    SuperEuler,
    Rga(RgaKind),
    Kdd,
    Ur(u32),
    Uddx(u32),
    Qdd(u32, u32),
}

impl SeqId {
    /// Parse a catalog name. Orders may be embedded (`cdd3`, `ur20`, `qdd2_3`)
    /// or passed separately.
    pub fn parse(name: &str, n: Option<u32>, m: Option<u32>) -> Result<SeqId, SeqError> {
        let raw = name.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        let fixed = match raw.as_str() {
            "free" => Some(SeqId::Free),
            "hahn" => Some(SeqId::Hahn),
            "super_hahn" | "superhahn" | "s_hahn" => Some(SeqId::SuperHahn),
            "px" => Some(SeqId::Px),
            "cpmg" => Some(SeqId::Cpmg),
            "super_cpmg" | "supercpmg" | "s_cpmg" => Some(SeqId::SuperCpmg),
            "xy4" => Some(SeqId::Xy4),
            "edd" => Some(SeqId::Edd),
            "xy8" => Some(SeqId::Rga(RgaKind::R8c)),
            "super_euler" | "supereuler" | "s_xy4" => Some(SeqId::SuperEuler),
            "kdd" => Some(SeqId::Kdd),
            _ => None,
        };
        if let Some(id) = fixed {
            return Ok(id);
        }
        if let Some(rest) = raw.strip_prefix("rga").map(|r| r.trim_start_matches('_')) {
            for k in RgaKind::ALL {
                if rest == k.suffix() {
                    return Ok(SeqId::Rga(k));
                }
            }
            return Err(SeqError::UnknownName(name.to_string()));
        }
        let ordered = |prefix: &str| -> Option<Result<Option<u32>, SeqError>> {
            let rest = raw.strip_prefix(prefix)?.trim_start_matches('_');
            if rest.is_empty() {
                Some(Ok(None))
            } else {
                Some(rest.parse::<u32>().map(Some).map_err(|_| SeqError::UnknownName(name.to_string())))
            }
        };
        if let Some(r) = ordered("cdd") {
            let order = r?.or(n).ok_or(SeqError::MissingOrder("n", "CDD"))?;
            return Ok(SeqId::Cdd(order));
        }
        if let Some(r) = ordered("ur") {
            let order = r?.or(n).ok_or(SeqError::MissingOrder("n", "UR"))?;
            return Ok(SeqId::Ur(order));
        }
        for prefix in ["uddx", "udd"] {
            if let Some(r) = ordered(prefix) {
                let order = r?.or(n).ok_or(SeqError::MissingOrder("n", "UDDx"))?;
                return Ok(SeqId::Uddx(order));
            }
        }
        if let Some(rest) = raw.strip_prefix("qdd") {
            let rest = rest.trim_start_matches('_');
            if rest.is_empty() {
                let nn = n.ok_or(SeqError::MissingOrder("n", "QDD"))?;
                let mm = m.ok_or(SeqError::MissingOrder("m", "QDD"))?;
                return Ok(SeqId::Qdd(nn, mm));
            }
            let parts: Vec<&str> = rest.split('_').collect();
            if parts.len() == 2 {
                if let (Ok(a), Ok(b)) = (parts[0].parse(), parts[1].parse()) {
                    return Ok(SeqId::Qdd(a, b));
                }
            }
        }
        Err(SeqError::UnknownName(name.to_string()))
    }

    pub fn family(&self) -> Family {
        match self {
            SeqId::Free => Family::Free,
            SeqId::Hahn | SeqId::SuperHahn => Family::Hahn,
            SeqId::Px | SeqId::Cpmg | SeqId::SuperCpmg => Family::Cpmg,
            SeqId::Xy4 | SeqId::SuperEuler => Family::Xy4,
            SeqId::Cdd(_) => Family::Cdd,
            SeqId::Edd => Family::Edd,
            SeqId::Rga(_) => Family::Rga,
            SeqId::Kdd => Family::Kdd,
            SeqId::Ur(_) => Family::Ur,
            SeqId::Uddx(_) => Family::Uddx,
            SeqId::Qdd(_, _) => Family::Qdd,
        }
    }

    /// Whether pulse times come from closed-form non-uniform timing.
    pub fn is_timed(&self) -> bool {
        matches!(self, SeqId::Uddx(_) | SeqId::Qdd(_, _))
    }
}

impl fmt::Display for SeqId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SeqId::Free => write!(f, "free"),
            SeqId::Hahn => write!(f, "hahn"),
            SeqId::SuperHahn => write!(f, "super_hahn"),
            SeqId::Px => write!(f, "px"),
            SeqId::Cpmg => write!(f, "cpmg"),
            SeqId::SuperCpmg => write!(f, "super_cpmg"),
            SeqId::Xy4 => write!(f, "xy4"),
            SeqId::Cdd(n) => write!(f, "cdd{n}"),
            SeqId::Edd => write!(f, "edd"),
            SeqId::SuperEuler => write!(f, "super_euler"),
            SeqId::Rga(k) => write!(f, "rga{}", k.suffix()),
            SeqId::Kdd => write!(f, "kdd"),
            SeqId::Ur(n) => write!(f, "ur{n}"),
            SeqId::Uddx(n) => write!(f, "uddx{n}"),
            SeqId::Qdd(n, m) => write!(f, "qdd{n}_{m}"),
        }
    }
}

impl FromStr for SeqId {
    type Err = SeqError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SeqId::parse(s, None, None)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceIR {
    pub name: String,
    pub pulses: Vec<Pulse>,
    /// Leading interval followed by the interval after each pulse; sums to 1.
    pub fractions: Vec<f64>,
    pub uniform: bool,
    pub universal: bool,
    pub family: Family,
}

impl SequenceIR {
    fn new(name: impl Into<String>, pulses: Vec<Pulse>, fractions: Vec<f64>, universal: bool, family: Family) -> SequenceIR {
        debug_assert_eq!(pulses.len() + 1, fractions.len());
        let uniform = fractions_uniform(&fractions);
        SequenceIR { name: name.into(), pulses, fractions, uniform, universal, family }
    }

    /// Pulses separated by equal intervals, starting with a pulse: P f P f ... P f.
    fn even(name: &str, pulses: Vec<Pulse>, universal: bool, family: Family) -> SequenceIR {
        let n = pulses.len();
        let mut fr = vec![0.0];
        fr.extend(std::iter::repeat(1.0 / n as f64).take(n));
        SequenceIR::new(name, pulses, fr, universal, family)
    }

    /// Half intervals at both ends: f P f2 P ... P f.
    fn centered(name: &str, pulses: Vec<Pulse>, universal: bool, family: Family) -> SequenceIR {
        let n = pulses.len() as f64;
        let mut fr = vec![0.5 / n];
        fr.extend(std::iter::repeat(1.0 / n).take(pulses.len() - 1));
        fr.push(0.5 / n);
        SequenceIR::new(name, pulses, fr, universal, family)
    }

    /// The empty sequence: a single free period.
    pub fn free() -> SequenceIR {
        SequenceIR::new("free", vec![], vec![1.0], false, Family::Free)
    }

    pub fn len(&self) -> usize {
        self.pulses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pulses.is_empty()
    }

    pub fn physical_count(&self) -> usize {
        self.pulses.iter().filter(|p| p.is_physical()).count()
    }

    /// Number of nonzero free periods.
    pub fn free_periods(&self) -> usize {
        self.fractions.iter().filter(|&&f| f > 0.0).count()
    }

    /// Ideal pulse times on [0, 1] (cumulative fractions).
    pub fn normalized_times(&self) -> Vec<f64> {
        let mut t = 0.0;
        let mut out = Vec::with_capacity(self.pulses.len());
        for k in 0..self.pulses.len() {
            t += self.fractions[k];
            out.push(t);
        }
        out
    }

    pub fn labels(&self) -> Vec<String> {
        self.pulses.iter().map(|p| p.label()).collect()
    }
}

/// Nonzero interior fractions all equal.
pub fn fractions_uniform(fr: &[f64]) -> bool {
    if fr.len() <= 2 {
        return true;
    }
    let interior: Vec<f64> = fr[1..fr.len() - 1].iter().cloned().filter(|&f| f > 0.0).collect();
    match interior.first() {
        None => true,
        Some(&first) => interior.iter().all(|&f| (f - first).abs() <= 1e-12),
    }
}

/// Build a catalog sequence. Timed families (UDDx, QDD) are built over T = 1.
pub fn build(id: SeqId) -> Result<SequenceIR, SeqError> {
    use Pulse as P;
    let (x, y, xb) = (P::x(), P::y(), P::xbar());
    let name = id.to_string();
    let seq = match id {
        SeqId::Free => SequenceIR::free(),
        SeqId::Hahn => SequenceIR::centered(&name, vec![x], false, Family::Hahn),
        SeqId::SuperHahn => SequenceIR::even(&name, vec![x, xb], false, Family::Hahn),
        SeqId::Px => SequenceIR::even(&name, vec![x, x], false, Family::Cpmg),
        SeqId::Cpmg => SequenceIR::centered(&name, vec![x, x], false, Family::Cpmg),
        SeqId::SuperCpmg => SequenceIR::even(&name, vec![x, x, xb, xb], false, Family::Cpmg),
        SeqId::Xy4 => SequenceIR::even(&name, vec![y, x, y, x], true, Family::Xy4),
        SeqId::Edd => SequenceIR::even(&name, vec![x, y, x, y, y, x, y, x], true, Family::Edd),
        SeqId::SuperEuler => {
            let mut p = vec![x, y, x, y, y, x, y, x];
            let barred: Vec<Pulse> = p.iter().map(|q| q.bar()).collect();
            p.extend(barred);
            SequenceIR::even(&name, p, true, Family::Xy4)
        }
        SeqId::Cdd(n) => {
            check_range("CDD", n, 1, 5, "1..=5")?;
            cdd(n)
        }
        SeqId::Rga(k) => rga(k),
        SeqId::Kdd => {
            let mut p = Vec::with_capacity(20);
            for phi in [FRAC_PI_2, 0.0, FRAC_PI_2, 0.0] {
                p.extend(kdd_block(phi));
            }
            SequenceIR::even(&name, p, true, Family::Kdd)
        }
        SeqId::Ur(n) => {
            let phases = ur_phases(n)?;
            let pulses: Vec<Pulse> = phases.into_iter().map(Pulse::axis).collect();
            if n == 2 {
                SequenceIR::centered(&name, pulses, false, Family::Ur)
            } else {
                SequenceIR::even(&name, pulses, true, Family::Ur)
            }
        }
        SeqId::Uddx(n) => {
            check_range("UDDx", n, 1, 25, "1..=25")?;
            uddx(n, 1.0)?.ir
        }
        SeqId::Qdd(n, m) => {
            check_range("QDD n", n, 1, 6, "1..=6")?;
            check_range("QDD m", m, 1, 6, "1..=6")?;
            qdd(n, m, 1.0)?.ir
        }
    };
    Ok(SequenceIR { name, ..seq })
}

/// Build without the tested-range checks (orders still must be structurally valid).
pub fn build_unchecked(id: SeqId) -> Result<SequenceIR, SeqError> {
    match id {
        SeqId::Cdd(n) if n >= 1 => Ok(SequenceIR { name: id.to_string(), ..cdd(n) }),
        SeqId::Uddx(n) if n >= 1 => Ok(SequenceIR { name: id.to_string(), ..uddx(n, 1.0)?.ir }),
        SeqId::Qdd(n, m) if n >= 1 && m >= 1 => Ok(SequenceIR { name: id.to_string(), ..qdd(n, m, 1.0)?.ir }),
        _ => build(id),
    }
}

fn check_range(family: &'static str, order: u32, lo: u32, hi: u32, allowed: &'static str) -> Result<(), SeqError> {
    if order < lo || order > hi {
        Err(SeqError::OrderOutOfRange { family, order, allowed })
    } else {
        Ok(())
    }
}

fn cdd(n: u32) -> SequenceIR {
    let xy4 = build(SeqId::Xy4).expect("xy4");
    let mut s = xy4.clone();
    for _ in 1..n {
        s = concat(&xy4, &s).expect("xy4 is uniform");
    }
    SequenceIR { family: Family::Cdd, universal: true, ..s }
}

fn rga(k: RgaKind) -> SequenceIR {
    use Pulse as P;
    let (x, y, xb, yb) = (P::x(), P::y(), P::xbar(), P::ybar());
    let name = SeqId::Rga(k).to_string();
    let base = |p: Vec<Pulse>, universal: bool| SequenceIR::even(&name, p, universal, Family::Rga);
    let nested = |outer: RgaKind, inner: RgaKind| {
        let s = concat(&rga(outer), &rga(inner)).expect("rga bases are uniform");
        SequenceIR { name: name.clone(), ..s }
    };
    match k {
        RgaKind::R2x => base(vec![x, xb], false),
        RgaKind::R2y => base(vec![y, yb], false),
        RgaKind::R4 => base(vec![yb, x, yb, x], true),
        RgaKind::R4p => base(vec![yb, xb, yb, xb], true),
        RgaKind::R8a => base(vec![x, yb, x, yb, y, xb, y, xb], true),
        RgaKind::R8c => base(vec![x, y, x, y, y, x, y, x], true),
        RgaKind::R16b => nested(RgaKind::R4p, RgaKind::R4p),
        RgaKind::R32a => nested(RgaKind::R4, RgaKind::R8a),
        RgaKind::R32c => nested(RgaKind::R8c, RgaKind::R4),
        RgaKind::R64a => nested(RgaKind::R8a, RgaKind::R8a),
        RgaKind::R64c => nested(RgaKind::R8c, RgaKind::R8c),
        RgaKind::R256a => nested(RgaKind::R4, RgaKind::R64a),
    }
}

/// UR axis angles φ_k = (k−1)(k−2)/2 · Φ + (k−1)π/2 reduced to [0, 2π).
///
/// The reduction is done in exact integer arithmetic on the rational multiple of π.
pub fn ur_phases(n: u32) -> Result<Vec<f64>, SeqError> {
    if n % 2 == 1 {
        return Err(SeqError::OddUr(n));
    }
    if n < 2 {
        return Err(SeqError::OrderOutOfRange { family: "UR", order: n, allowed: "even n >= 2" });
    }
    if n == 2 {
        return Ok(vec![0.0, 0.0]);
    }
    // Φ = π·p/q; φ_k/π = tri·p/q + (k−1)/2 = (2·tri·p + (k−1)·q) / (2q), taken mod 2.
    let (p, q): (u64, u64) = if n % 4 == 0 {
        (1, (n / 4) as u64)
    } else {
        let m = ((n - 2) / 4) as u64;
        (2 * m, 2 * m + 1)
    };
    let den = 2 * q;
    let modulus = 2 * den;
    Ok((1..=n as u64)
        .map(|k| {
            let tri = ((k - 1) * (k.saturating_sub(2)) / 2) % modulus;
            let num = (2 * tri * p + (k - 1) * q) % modulus;
            PI * num as f64 / den as f64
        })
        .collect())
}

/// Knill composite block: axes [π/6+φ, φ, π/2+φ, φ, π/6+φ].
pub fn kdd_block(phi: f64) -> Vec<Pulse> {
    [FRAC_PI_6 + phi, phi, FRAC_PI_2 + phi, phi, FRAC_PI_6 + phi].into_iter().map(Pulse::axis).collect()
}

/// Uhrig times t_j = T sin²(jπ/(2n+2)); padded to an even count with a pulse at T for odd n.
pub fn uhrig_times(n: u32, total: f64) -> Result<Vec<f64>, SeqError> {
    if !(total > 0.0) {
        return Err(SeqError::NonPositiveTime(total));
    }
    if n == 0 {
        return Err(SeqError::OrderOutOfRange { family: "UDD", order: 0, allowed: ">= 1" });
    }
    let last = if n % 2 == 0 { n } else { n + 1 };
    let denom = (2 * n + 2) as f64;
    Ok((1..=last)
        .map(|j| {
            if j == n + 1 {
                total
            } else {
                let s = (j as f64 * PI / denom).sin();
                total * s * s
            }
        })
        .collect())
}

/// s_j = sin((2j−1)π/(2n+2)) · csc(π/(2n+2)), j = 1..n+1.
pub fn udd_normalized_intervals(n: u32) -> Vec<f64> {
    let denom = (2 * n + 2) as f64;
    let csc = 1.0 / (PI / denom).sin();
    (1..=n + 1).map(|j| ((2 * j - 1) as f64 * PI / denom).sin() * csc).collect()
}

/// A sequence together with its absolute target times over a total time.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedSequence {
    pub ir: SequenceIR,
    pub times: Vec<f64>,
    pub total: f64,
}

fn timed(name: String, events: Vec<(f64, Pulse)>, total: f64, universal: bool, family: Family) -> TimedSequence {
    let mut fractions = Vec::with_capacity(events.len() + 1);
    let mut prev = 0.0;
    for (t, _) in &events {
        fractions.push(((t - prev) / total).max(0.0));
        prev = *t;
    }
    fractions.push(((total - prev) / total).max(0.0));
    let times = events.iter().map(|e| e.0).collect();
    let pulses = events.into_iter().map(|e| e.1).collect();
    TimedSequence { ir: SequenceIR::new(name, pulses, fractions, universal, family), times, total }
}

/// UDDx_n over total time T; even n ends with a timed identity at T.
pub fn uddx(n: u32, total: f64) -> Result<TimedSequence, SeqError> {
    let times = uhrig_times(n, total)?;
    let mut events: Vec<(f64, Pulse)> = times.into_iter().map(|t| (t, Pulse::x())).collect();
    if n % 2 == 0 {
        events.push((total, Pulse::identity_wait()));
    }
    Ok(timed(SeqId::Uddx(n).to_string(), events, total, false, Family::Uddx))
}

/// QDD_{n,m}: outer Y pulses at Uhrig times of order n, inner X pulses at order-m
/// Uhrig times inside every outer interval. For odd m the inner X that lands on an
/// outer Y is emitted as a virtual Z followed by a timed identity.
pub fn qdd(n: u32, m: u32, total: f64) -> Result<TimedSequence, SeqError> {
    if !(total > 0.0) {
        return Err(SeqError::NonPositiveTime(total));
    }
    if n == 0 || m == 0 {
        return Err(SeqError::OrderOutOfRange { family: "QDD", order: 0, allowed: ">= 1" });
    }
    let outer = uhrig_times(n, total)?;
    // interval boundaries t_0 = 0, t_1..t_n, t_{n+1} = T
    let mut bounds = vec![0.0];
    bounds.extend(outer.iter().cloned().take(n as usize));
    bounds.push(total);
    let inner_count = if m % 2 == 0 { m } else { m + 1 };
    let denom = (2 * m + 2) as f64;
    let mut events = Vec::new();
    for j in 1..=(n as usize + 1) {
        let (t0, t1) = (bounds[j - 1], bounds[j]);
        let tau = t1 - t0;
        let outer_here = j <= n as usize || n % 2 == 1;
        for k in 1..=inner_count {
            let coincident = k == m + 1;
            if coincident {
                if outer_here {
                    events.push((t1, Pulse::virtual_z()));
                    events.push((t1, Pulse::identity_wait()));
                } else {
                    events.push((t1, Pulse::x()));
                }
            } else {
                let s = (k as f64 * PI / denom).sin();
                events.push((tau * s * s + t0, Pulse::x()));
            }
        }
        let inner_ends_on_boundary = m % 2 == 1;
        if !inner_ends_on_boundary {
            if outer_here {
                events.push((t1, Pulse::y()));
            } else {
                events.push((t1, Pulse::identity_wait()));
            }
        }
    }
    Ok(timed(SeqId::Qdd(n, m).to_string(), events, total, true, Family::Qdd))
}

/// Replace every nonzero free period of `outer` by a copy of `inner` scaled to it.
/// Pulses are emitted literally; adjacent pulses get a zero interval between them.
pub fn concat(outer: &SequenceIR, inner: &SequenceIR) -> Result<SequenceIR, SeqError> {
    if !outer.uniform {
        return Err(SeqError::NonUniformOuter(outer.name.clone()));
    }
    let mut pulses = Vec::new();
    let mut fractions = Vec::new();
    let mut pending = 0.0;
    for (k, &w) in outer.fractions.iter().enumerate() {
        if w > 0.0 {
            for (i, p) in inner.pulses.iter().enumerate() {
                pending += w * inner.fractions[i];
                fractions.push(pending);
                pulses.push(*p);
                pending = 0.0;
            }
            pending += w * inner.fractions[inner.pulses.len()];
        }
        if k < outer.pulses.len() {
            fractions.push(pending);
            pulses.push(outer.pulses[k]);
            pending = 0.0;
        }
    }
    fractions.push(pending);
    let name = if inner.is_empty() { outer.name.clone() } else { format!("{}({})", outer.name, inner.name) };
    let universal = outer.universal || inner.universal;
    Ok(SequenceIR::new(name, pulses, fractions, universal, outer.family))
}

/// Catalog entries exercised by the tests and listed by the CLI.
pub fn catalog() -> Vec<SeqId> {
    let mut out = vec![
        SeqId::Free,
        SeqId::Hahn,
        SeqId::SuperHahn,
        SeqId::Px,
        SeqId::Cpmg,
        SeqId::SuperCpmg,
        SeqId::Xy4,
        SeqId::Edd,
        SeqId::SuperEuler,
        SeqId::Kdd,
    ];
    out.extend((1..=5).map(SeqId::Cdd));
    out.extend(RgaKind::ALL.iter().map(|&k| SeqId::Rga(k)));
    out.extend([2, 4, 6, 8, 10, 12, 16, 20, 50, 100].iter().map(|&n| SeqId::Ur(n)));
    out.extend((1..=25).map(SeqId::Uddx));
    for n in 1..=6 {
        for m in 1..=6 {
            out.push(SeqId::Qdd(n, m));
        }
    }
    out
}
