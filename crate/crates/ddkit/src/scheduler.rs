//! Rendering of sequences into absolute-time schedules.
//!
//! Uniform sequences are laid out left to right: a pulse "at t" occupies
//! [t, t + Δ]. Timed (UDD/QDD) sequences put the pulse end at its target time.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seqlib::{Pulse, PulseKind, SequenceIR, TimedSequence};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("sequence does not fit: needs {needed:e} s per block but only {available:e} s available")]
    OverPacked { needed: f64, available: f64 },
    #[error("negative padding or width (Δ = {delta:e}, d = {d:e})")]
    NegativePadding { delta: f64, d: f64 },
    #[error("total time must be positive (got {0:e})")]
    NonPositiveTime(f64),
    #[error("repetition count must be at least 1")]
    ZeroReps,
    #[error("pulse width {delta:e} exceeds the smallest gap {gap:e} between target times")]
    WidthExceedsGap { delta: f64, gap: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Symmetry {
    Asymmetric,
    Symmetric,
}

impl Symmetry {
    pub fn short(&self) -> &'static str {
        match self {
            Symmetry::Asymmetric => "a",
            Symmetry::Symmetric => "s",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t_start: f64,
    pub duration: f64,
    #[serde(flatten)]
    pub pulse: Pulse,
}

impl Event {
    pub fn end(&self) -> f64 {
        self.t_start + self.duration
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub events: Vec<Event>,
    pub total_time: f64,
    pub delta: f64,
    pub delay: f64,
    pub symmetry: Symmetry,
    pub reps: u32,
}

impl Schedule {
    /// A schedule with no pulses.
    pub fn idle(total_time: f64) -> Schedule {
        Schedule { events: vec![], total_time, delta: 0.0, delay: 0.0, symmetry: Symmetry::Asymmetric, reps: 1 }
    }

    /// Length of one repetition block.
    pub fn block_time(&self) -> f64 {
        self.total_time / self.reps.max(1) as f64
    }

    /// Events of the first block (all events when reps = 1).
    pub fn block_events(&self) -> &[Event] {
        let n = self.events.len() / self.reps.max(1) as usize;
        &self.events[..n]
    }

    pub fn pulse_count(&self) -> usize {
        self.events.iter().filter(|e| e.pulse.is_physical()).count()
    }

    /// Interval fractions of the first block measured between event starts,
    /// normalized by the block time. Only meaningful for zero-width schedules.
    pub fn block_fractions(&self) -> Vec<f64> {
        let tb = self.block_time();
        let ev = self.block_events();
        let mut out = Vec::with_capacity(ev.len() + 1);
        let mut prev = 0.0;
        for e in ev {
            out.push((e.t_start - prev) / tb);
            prev = e.t_start;
        }
        out.push((tb - prev) / tb);
        out
    }
}

fn timed_duration(kind: PulseKind, delta: f64) -> f64 {
    match kind {
        PulseKind::VirtualZ => 0.0,
        PulseKind::Physical | PulseKind::IdentityWait => delta,
    }
}

fn timed_count(pulses: &[Pulse]) -> usize {
    pulses.iter().filter(|p| p.kind != PulseKind::VirtualZ).count()
}

/// Lay out `reps` back-to-back blocks of `seq` over total time `total`.
///
/// Each block has free budget F = T/N − nΔ − nd which is split by the sequence
/// fractions; every timed pulse is followed by its share plus d. In the symmetric
/// form the block opens with d/2 and the last pulse is followed by d/2 instead of d.
pub fn render(seq: &SequenceIR, total: f64, delta: f64, d: f64, sym: Symmetry, reps: u32) -> Result<Schedule, ScheduleError> {
    if !(total > 0.0) {
        return Err(ScheduleError::NonPositiveTime(total));
    }
    if delta < 0.0 || d < 0.0 {
        return Err(ScheduleError::NegativePadding { delta, d });
    }
    if reps == 0 {
        return Err(ScheduleError::ZeroReps);
    }
    let block = total / reps as f64;
    let n = timed_count(&seq.pulses);
    let needed = n as f64 * (delta + d);
    let mut free = block - needed;
    if free < -1e-12 * total {
        return Err(ScheduleError::OverPacked { needed, available: block });
    }
    free = free.max(0.0);

    let last_timed = seq.pulses.iter().rposition(|p| p.kind != PulseKind::VirtualZ);
    // offsets within one block
    let mut offsets = Vec::with_capacity(seq.pulses.len());
    let mut t = if sym == Symmetry::Symmetric { 0.5 * d } else { 0.0 };
    t += seq.fractions[0] * free;
    for (k, p) in seq.pulses.iter().enumerate() {
        offsets.push(t);
        t += timed_duration(p.kind, delta);
        let pad = if p.kind == PulseKind::VirtualZ {
            0.0
        } else if sym == Symmetry::Symmetric && Some(k) == last_timed {
            0.5 * d
        } else {
            d
        };
        t += seq.fractions[k + 1] * free + pad;
    }

    let mut events = Vec::with_capacity(seq.pulses.len() * reps as usize);
    for b in 0..reps {
        let start = total * b as f64 / reps as f64;
        for (k, p) in seq.pulses.iter().enumerate() {
            events.push(Event { t_start: start + offsets[k], duration: timed_duration(p.kind, delta), pulse: *p });
        }
    }
    Ok(Schedule { events, total_time: total, delta, delay: d, symmetry: sym, reps })
}

/// Smallest gap between consecutive timed target times (the first gap is measured from 0).
fn min_gap(times: &[f64], pulses: &[Pulse]) -> f64 {
    let mut prev = 0.0;
    let mut gap = f64::INFINITY;
    for (t, p) in times.iter().zip(pulses) {
        if p.kind == PulseKind::VirtualZ {
            continue;
        }
        gap = gap.min(t - prev);
        prev = *t;
    }
    gap
}

/// Timed-family layout: each timed pulse ends at its target time, i.e. starts at t_j − Δ.
/// Virtual Z events sit at the start of the identity wait that follows them.
pub fn render_udd_family(seq: &TimedSequence, total: f64, delta: f64) -> Result<Schedule, ScheduleError> {
    render_udd_family_padded(seq, total, delta, 0.0, Symmetry::Asymmetric)
}

/// Timed-family layout over a base time T_b with extra delay d inserted after every
/// timed pulse (symmetric form: d/2 lead, d/2 after the last pulse). Block length is
/// T_b + n·d.
pub fn render_udd_family_padded(seq: &TimedSequence, base: f64, delta: f64, d: f64, sym: Symmetry) -> Result<Schedule, ScheduleError> {
    if !(base > 0.0) {
        return Err(ScheduleError::NonPositiveTime(base));
    }
    if delta < 0.0 || d < 0.0 {
        return Err(ScheduleError::NegativePadding { delta, d });
    }
    let scale = base / seq.total;
    let times: Vec<f64> = seq.times.iter().map(|t| t * scale).collect();
    let gap = min_gap(&times, &seq.ir.pulses);
    if delta > gap * (1.0 + 1e-12) {
        return Err(ScheduleError::WidthExceedsGap { delta, gap });
    }
    let n = timed_count(&seq.ir.pulses);
    let mut shift = if sym == Symmetry::Symmetric { 0.5 * d } else { 0.0 };
    let mut events = Vec::with_capacity(seq.ir.pulses.len());
    for (t, p) in times.iter().zip(&seq.ir.pulses) {
        let dur = timed_duration(p.kind, delta);
        events.push(Event { t_start: (t - delta).max(0.0) + shift, duration: dur, pulse: *p });
        if p.kind != PulseKind::VirtualZ {
            shift += d;
        }
    }
    let total = base + n as f64 * d;
    Ok(Schedule { events, total_time: total, delta, delay: d, symmetry: sym, reps: 1 })
}

/// Minimal base time at which a timed sequence fits with width Δ.
pub fn udd_min_base(seq: &TimedSequence, delta: f64) -> f64 {
    let norm: Vec<f64> = seq.times.iter().map(|t| t / seq.total).collect();
    let g = min_gap(&norm, &seq.ir.pulses);
    if g <= 0.0 {
        f64::INFINITY
    } else {
        delta / g
    }
}

/// Concatenate `reps` copies of a single-block schedule.
pub fn repeat(block: &Schedule, reps: u32) -> Result<Schedule, ScheduleError> {
    if reps == 0 {
        return Err(ScheduleError::ZeroReps);
    }
    let tb = block.total_time;
    let mut events = Vec::with_capacity(block.events.len() * reps as usize);
    for b in 0..reps {
        let start = tb * b as f64;
        events.extend(block.events.iter().map(|e| Event { t_start: start + e.t_start, ..*e }));
    }
    Ok(Schedule { events, total_time: tb * reps as f64, reps, ..block.clone() })
}

/// Largest d for which a single repetition exactly fills T.
pub fn max_delay(seq: &SequenceIR, total: f64, delta: f64) -> Result<f64, ScheduleError> {
    let n = timed_count(&seq.pulses);
    if n == 0 {
        return Ok(0.0);
    }
    let needed = n as f64 * delta;
    if total < needed {
        return Err(ScheduleError::OverPacked { needed, available: total });
    }
    Ok((total - needed) / n as f64)
}

/// Largest d for a timed sequence laid out at its minimal base time.
pub fn max_delay_timed(seq: &TimedSequence, total: f64, delta: f64) -> Result<f64, ScheduleError> {
    let n = timed_count(&seq.ir.pulses);
    let base = udd_min_base(seq, delta);
    if n == 0 {
        return Ok(0.0);
    }
    if total < base {
        return Err(ScheduleError::OverPacked { needed: base, available: total });
    }
    Ok((total - base) / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Overlap,
    EndsAfterTotal,
    WrongDuration,
    NegativeStart,
    NonPositiveTotal,
    NegativeParameter,
    ZeroReps,
    RepsMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub index: Option<usize>,
    pub detail: String,
}

/// Check every schedule invariant; an empty list means valid.
pub fn validate(s: &Schedule) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |kind, index, detail: String| out.push(Violation { kind, index, detail });
    if !(s.total_time > 0.0) {
        push(ViolationKind::NonPositiveTotal, None, format!("total_time = {}", s.total_time));
    }
    if s.delta < 0.0 || s.delay < 0.0 {
        push(ViolationKind::NegativeParameter, None, format!("delta = {}, d = {}", s.delta, s.delay));
    }
    if s.reps == 0 {
        push(ViolationKind::ZeroReps, None, "reps = 0".into());
    } else if s.events.len() % s.reps as usize != 0 {
        push(ViolationKind::RepsMismatch, None, format!("{} events not divisible by {} reps", s.events.len(), s.reps));
    }
    let tol = 1e-15 * s.total_time.abs();
    for (i, e) in s.events.iter().enumerate() {
        if e.t_start < -tol {
            push(ViolationKind::NegativeStart, Some(i), format!("t_start = {}", e.t_start));
        }
        let want = timed_duration(e.pulse.kind, s.delta);
        if (e.duration - want).abs() > 1e-12 * s.delta.max(f64::MIN_POSITIVE) && e.duration != want {
            push(ViolationKind::WrongDuration, Some(i), format!("duration {} but expected {}", e.duration, want));
        }
        if let Some(next) = s.events.get(i + 1) {
            if e.end() > next.t_start + tol {
                push(ViolationKind::Overlap, Some(i), format!("ends at {} after next start {}", e.end(), next.t_start));
            }
        }
    }
    if let Some(last) = s.events.last() {
        if last.end() > s.total_time + tol {
            push(ViolationKind::EndsAfterTotal, Some(s.events.len() - 1), format!("ends at {} > T = {}", last.end(), s.total_time));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqlib::{build, catalog, qdd, uddx, SeqId};
    use proptest::prelude::*;

    fn starts(s: &Schedule) -> Vec<f64> {
        s.events.iter().map(|e| e.t_start).collect()
    }

    #[test]
    fn symmetric_px_is_cpmg_layout() {
        let tau = 2e-6;
        let px = build(SeqId::Px).unwrap();
        let s = render(&px, 2.0 * tau, 0.0, tau, Symmetry::Symmetric, 1).unwrap();
        assert_eq!(starts(&s), vec![0.5 * tau, 1.5 * tau]);
        let cpmg = build(SeqId::Cpmg).unwrap();
        let c = render(&cpmg, 2.0 * tau, 0.0, 0.0, Symmetry::Asymmetric, 1).unwrap();
        for (a, b) in starts(&s).iter().zip(starts(&c)) {
            assert!((a - b).abs() < 1e-20);
        }
    }

    #[test]
    fn dense_xy4_back_to_back() {
        let delta = 50e-9;
        let s = render(&build(SeqId::Xy4).unwrap(), 4.0 * delta, delta, 0.0, Symmetry::Asymmetric, 1).unwrap();
        let st = starts(&s);
        for k in 0..4 {
            assert!((st[k] - k as f64 * delta).abs() < 1e-21);
        }
        assert!(validate(&s).is_empty());
    }

    #[test]
    fn zero_width_total_duration() {
        let s = render(&build(SeqId::Rga(crate::seqlib::RgaKind::R8a)).unwrap(), 1e-5, 0.0, 0.0, Symmetry::Asymmetric, 7).unwrap();
        assert_eq!(s.events.len(), 56);
        assert!((s.block_time() * 7.0 - 1e-5).abs() < 1e-20);
    }

    #[test]
    fn over_packing_rejected() {
        let r = render(&build(SeqId::Xy4).unwrap(), 1e-7, 50e-9, 0.0, Symmetry::Asymmetric, 1);
        assert!(matches!(r, Err(ScheduleError::OverPacked { .. })));
        let r = render(&build(SeqId::Xy4).unwrap(), 1e-6, 0.0, -1.0, Symmetry::Asymmetric, 1);
        assert!(matches!(r, Err(ScheduleError::NegativePadding { .. })));
    }

    #[test]
    fn udd1_alignment() {
        let t = 1e-5;
        let delta = 1e-7;
        let s = render_udd_family(&uddx(1, 1.0).unwrap(), t, delta).unwrap();
        let st = starts(&s);
        assert!((st[0] - (t / 2.0 - delta)).abs() < 1e-20);
        assert!((st[1] - (t - delta)).abs() < 1e-20);
        assert!(validate(&s).is_empty());
    }

    #[test]
    fn udd_zero_width_hits_targets() {
        let seq = uddx(6, 1.0).unwrap();
        let s = render_udd_family(&seq, 3.0, 0.0).unwrap();
        for (e, t) in s.events.iter().zip(&seq.times) {
            assert!((e.t_start - 3.0 * t).abs() < 1e-15);
        }
        assert_eq!(s.events.last().unwrap().pulse.kind, PulseKind::IdentityWait);
    }

    #[test]
    fn qdd11_z_then_wait() {
        let s = render_udd_family(&qdd(1, 1, 1.0).unwrap(), 1e-5, 1e-7).unwrap();
        let kinds: Vec<PulseKind> = s.events.iter().map(|e| e.pulse.kind).collect();
        assert_eq!(kinds[1], PulseKind::VirtualZ);
        assert_eq!(kinds[2], PulseKind::IdentityWait);
        assert_eq!(s.events[1].duration, 0.0);
        assert_eq!(s.events[2].duration, 1e-7);
        assert_eq!(s.events[1].t_start, s.events[2].t_start);
        assert!(validate(&s).is_empty());
    }

    #[test]
    fn udd_width_too_large() {
        let r = render_udd_family(&uddx(10, 1.0).unwrap(), 1e-6, 1e-7);
        assert!(matches!(r, Err(ScheduleError::WidthExceedsGap { .. })));
    }

    #[test]
    fn max_delay_examples() {
        let px = build(SeqId::Px).unwrap();
        assert!((max_delay(&px, 1.0, 0.0).unwrap() - 0.5).abs() < 1e-15);
        let cpmg = build(SeqId::Cpmg).unwrap();
        let d = max_delay(&cpmg, 75e-6, 50e-9).unwrap();
        let s = render(&cpmg, 75e-6, 50e-9, d, Symmetry::Symmetric, 1).unwrap();
        let spacing = s.events[1].t_start - s.events[0].t_start;
        assert!((spacing - 37.5e-6).abs() < 1e-12);
        assert!(validate(&s).is_empty());
        let mut prev = f64::INFINITY;
        for k in 0..20 {
            let dm = max_delay(&cpmg, 75e-6, k as f64 * 1e-7).unwrap();
            assert!(dm < prev);
            prev = dm;
        }
    }

    #[test]
    fn validate_reports_corruption() {
        let mut s = render(&build(SeqId::Xy4).unwrap(), 4e-7, 1e-7, 0.0, Symmetry::Asymmetric, 1).unwrap();
        assert!(validate(&s).is_empty());
        s.events[2].t_start -= 5e-8;
        let v = validate(&s);
        assert_eq!(v[0].kind, ViolationKind::Overlap);
        assert_eq!(v[0].index, Some(1));
        let mut s = render(&build(SeqId::Xy4).unwrap(), 4e-7, 1e-7, 0.0, Symmetry::Asymmetric, 1).unwrap();
        s.total_time = 3.5e-7;
        assert!(validate(&s).iter().any(|v| v.kind == ViolationKind::EndsAfterTotal));
    }

    #[test]
    fn roundtrip_fractions() {
        for id in catalog() {
            let seq = build(id).unwrap();
            let s = render(&seq, 1.0, 0.0, 0.0, Symmetry::Asymmetric, 1).unwrap();
            for (a, b) in s.block_fractions().iter().zip(&seq.fractions) {
                assert!((a - b).abs() < 1e-12, "{id}");
            }
        }
    }

    #[test]
    fn symmetric_equals_asymmetric_at_zero_delay() {
        let seq = build(SeqId::Kdd).unwrap();
        let a = render(&seq, 2e-5, 3e-8, 0.0, Symmetry::Asymmetric, 3).unwrap();
        let s = render(&seq, 2e-5, 3e-8, 0.0, Symmetry::Symmetric, 3).unwrap();
        assert_eq!(a.events, s.events);
    }

    #[test]
    fn render_is_deterministic() {
        let seq = build(SeqId::Ur(20)).unwrap();
        let a = render(&seq, 7.5e-5, 5e-8, 1e-7, Symmetry::Symmetric, 4).unwrap();
        let b = render(&seq, 7.5e-5, 5e-8, 1e-7, Symmetry::Symmetric, 4).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }

    #[test]
    fn repeat_tiles_blocks() {
        let block = render_udd_family(&uddx(4, 1.0).unwrap(), 2e-6, 5e-8).unwrap();
        let r = repeat(&block, 3).unwrap();
        assert_eq!(r.events.len(), 3 * block.events.len());
        assert!((r.total_time - 6e-6).abs() < 1e-20);
        assert!(validate(&r).is_empty());
    }

    #[test]
    fn padded_udd_block_length() {
        let seq = uddx(3, 1.0).unwrap();
        let s = render_udd_family_padded(&seq, 1e-5, 1e-7, 2e-7, Symmetry::Symmetric).unwrap();
        assert!((s.total_time - (1e-5 + 4.0 * 2e-7)).abs() < 1e-18);
        assert!(validate(&s).is_empty());
        let dmax = max_delay_timed(&seq, 2e-5, 1e-7).unwrap();
        let base = udd_min_base(&seq, 1e-7);
        let s = render_udd_family_padded(&seq, base, 1e-7, dmax, Symmetry::Asymmetric).unwrap();
        assert!((s.total_time - 2e-5).abs() < 1e-17);
        assert!(validate(&s).is_empty());
    }

    proptest! {
        #[test]
        fn catalog_renders_validate(idx in 0usize..200, delta_ns in 0u32..60, d_ns in 0u32..500, reps in 1u32..5, sym in any::<bool>()) {
            let ids = catalog();
            let id = ids[idx % ids.len()];
            let seq = build(id).unwrap();
            let delta = delta_ns as f64 * 1e-9;
            let d = d_ns as f64 * 1e-9;
            let sym = if sym { Symmetry::Symmetric } else { Symmetry::Asymmetric };
            let n = seq.pulses.iter().filter(|p| p.kind != PulseKind::VirtualZ).count() as f64;
            let total = reps as f64 * (n * (delta + d) + 1e-6);
            let s = render(&seq, total, delta, d, sym, reps).unwrap();
            let v = validate(&s);
            prop_assert!(v.is_empty(), "{} {:?}", id, v);
        }

        #[test]
        fn padded_intervals_add_d(d_ns in 0u32..1000) {
            // peak-to-peak spacing of a padded uniform sequence is fraction·F + Δ + d
            let seq = build(SeqId::Xy4).unwrap();
            let delta = 5e-8;
            let d = d_ns as f64 * 1e-9;
            let total = 4.0 * (delta + d) + 4e-6;
            let s = render(&seq, total, delta, d, Symmetry::Asymmetric, 1).unwrap();
            for w in s.events.windows(2) {
                let gap = w[1].t_start - w[0].t_start;
                prop_assert!((gap - (1e-6 + delta + d)).abs() < 1e-15);
            }
        }
    }
}
