//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line with the measured
//! numbers and then asserts, so failures show up both in the log and in the test summary.

use std::f64::consts::PI;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use ddkit::analysis::{self, bootstrap_fidelity, decay_gamma, FitData, Interpolation};
use ddkit::dynamics::{self, first_order_average_hamiltonian, propagate, system_components, Frame, NoiseModel, PulseErrorModel};
use ddkit::harness::{self, DeviceModel, ExperimentConfig, StateSet};
use ddkit::linalg::{eye, op_norm, phase_aligned_distance, Mat};
use ddkit::metrics::{self, SpectralDensity};
use ddkit::scheduler::{render, Symmetry};
use ddkit::seqlib::{self, build, PulseKind, SeqId};

fn report(id: &str, ok: bool, detail: &str) {
    println!("{id} {} {detail}", if ok { "PASS" } else { "FAIL" });
}

fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let num: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    num / den
}

fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| a * (b / a).powf(k as f64 / (n - 1) as f64)).collect()
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    analysis::quantile(v, 50.0)
}

#[test]
fn c1_kdd_robustness() {
    let start = Instant::now();
    let eps = PI / 20.0;
    let err = PulseErrorModel::flip_angle(eps);
    let power = |id: SeqId| {
        let p = dynamics::pulse_product(&build(id).unwrap(), &err);
        let mut acc = eye(2);
        for _ in 0..10 {
            acc = &p * &acc;
        }
        phase_aligned_distance(&acc, &eye(2))
    };
    let kdd = power(SeqId::Kdd);
    let xy4 = power(SeqId::Xy4);
    let elapsed = start.elapsed();
    let ok = (1e-7..=1e-6).contains(&kdd) && (1e-2..=1e-1).contains(&xy4) && elapsed < Duration::from_secs(1);
    report("C1", ok, &format!("eps=pi/20 |KDD^10-I|={kdd:.3e} (want [1e-7,1e-6]) |XY4^10-I|={xy4:.3e} (want [1e-2,1e-1]) runtime={elapsed:?}"));
    assert!(ok);
}

#[test]
fn c2_ur_identities() {
    let start = Instant::now();
    let ur4 = seqlib::ur_phases(4).unwrap();
    let xy4: Vec<f64> = build(SeqId::Xy4).unwrap().pulses.iter().map(|p| p.phi).collect();
    let literal = ur4 == xy4;
    let eps = logspace(1e-3, 1e-1, 9);
    let mut slopes = Vec::new();
    let mut ok = literal;
    for n in [4u32, 6, 8] {
        let ir = build(SeqId::Ur(n)).unwrap();
        let p0 = dynamics::pulse_product(&ir, &PulseErrorModel::ideal());
        let res: Vec<f64> = eps.iter().map(|&e| phase_aligned_distance(&dynamics::pulse_product(&ir, &PulseErrorModel::flip_angle(e)), &p0)).collect();
        let max_res = res.iter().cloned().fold(0.0, f64::max);
        let s = if max_res > 1e-14 { loglog_slope(&eps, &res) } else { f64::NAN };
        ok &= (s - n as f64 / 2.0).abs() <= 0.5;
        slopes.push(format!("n={n}: slope={s:.3} (want {:.1}±0.5, max residual {max_res:.2e})", n as f64 / 2.0));
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(5);
    report("C2", ok, &format!("ur_phases(4)={ur4:?} xy4={xy4:?} literal_equal={literal}; {}; runtime={elapsed:?}", slopes.join("; ")));
    assert!(ok);
}

#[test]
fn c3_timing_closed_forms() {
    let mut worst_t: f64 = 0.0;
    let mut worst_s: f64 = 0.0;
    for n in 1..=25u32 {
        let total = 1.7;
        let t = seqlib::uhrig_times(n, total).unwrap();
        let want_len = if n % 2 == 0 { n } else { n + 1 } as usize;
        assert_eq!(t.len(), want_len);
        // half-angle form of the same times
        for (j, &tj) in t.iter().enumerate() {
            let j = (j + 1) as f64;
            let oracle = total * 0.5 * (1.0 - (j * PI / (n + 1) as f64).cos());
            worst_t = worst_t.max((tj - oracle).abs());
        }
        // normalized intervals as differences of consecutive times over the first one
        let full: Vec<f64> = (0..=n + 1).map(|j| 0.5 * (1.0 - (j as f64 * PI / (n + 1) as f64).cos())).collect();
        let s = seqlib::udd_normalized_intervals(n);
        assert_eq!(s.len(), n as usize + 1);
        for (j, &sj) in s.iter().enumerate() {
            let oracle = (full[j + 1] - full[j]) / full[1];
            worst_s = worst_s.max((sj - oracle).abs());
        }
    }
    let mut worst_q: f64 = 0.0;
    let mut count_ok = true;
    for n in 1..=6u32 {
        for m in 1..=6u32 {
            let total = 2.3;
            let q = seqlib::qdd(n, m, total).unwrap();
            let mut bounds = vec![0.0];
            bounds.extend((1..=n).map(|j| total * (j as f64 * PI / (2 * n + 2) as f64).sin().powi(2)));
            bounds.push(total);
            let mut oracle = Vec::new();
            for j in 1..=(n as usize + 1) {
                let tau = bounds[j] - bounds[j - 1];
                for k in 1..=m {
                    oracle.push(tau * (k as f64 * PI / (2 * m + 2) as f64).sin().powi(2) + bounds[j - 1]);
                }
                if m % 2 == 1 && j == n as usize + 1 && n % 2 == 0 {
                    oracle.push(total);
                }
            }
            let got: Vec<f64> =
                q.ir.pulses.iter().zip(&q.times).filter(|(p, _)| p.kind == PulseKind::Physical && p.phi == 0.0).map(|(_, &t)| t).collect();
            if got.len() != oracle.len() {
                count_ok = false;
                continue;
            }
            for (a, b) in got.iter().zip(&oracle) {
                worst_q = worst_q.max((a - b).abs());
            }
        }
    }
    let ok = worst_t < 1e-12 && worst_s < 1e-12 && worst_q < 1e-12 && count_ok;
    report("C3", ok, &format!("max |uhrig - oracle|={worst_t:.2e} max |s_j - oracle|={worst_s:.2e} (n<=25); max |t_jk - oracle|={worst_q:.2e} counts_match={count_ok} (n,m<=6)"));
    assert!(ok);
}

#[test]
fn c4_average_hamiltonian_structure() {
    let mut px_off: f64 = 0.0;
    let mut px_on_err: f64 = 0.0;
    let mut px_on_min = f64::INFINITY;
    let mut other: f64 = 0.0;
    for seed in 1..=5u64 {
        let m = NoiseModel::generic(2, 0.3 + 0.1 * seed as f64, 0.5 + 0.2 * seed as f64, 100 + seed).unwrap();
        let db = m.bath_dim;
        let avg = |id: SeqId| -> [Mat; 3] {
            let s = render(&build(id).unwrap(), 1.0, 0.0, 0.0, Symmetry::Asymmetric, 1).unwrap();
            system_components(&first_order_average_hamiltonian(&s, &m).unwrap(), db)
        };
        let full = system_components(m.hamiltonian(), db);
        let px = avg(SeqId::Px);
        px_off = px_off.max(op_norm(&px[1])).max(op_norm(&px[2]));
        px_on_err = px_on_err.max(op_norm(&(&px[0] - &full[0])));
        px_on_min = px_on_min.min(op_norm(&px[0]));
        for id in [SeqId::Xy4, SeqId::Edd] {
            for comp in avg(id) {
                other = other.max(op_norm(&comp));
            }
        }
    }
    let ok = px_off < 1e-10 && px_on_min > 1e-3 && other < 1e-10;
    report(
        "C4",
        ok,
        &format!("5 seeded baths: PX off-axis max={px_off:.2e}, sigma^x part min norm={px_on_min:.3} (matches H's sigma^x part to {px_on_err:.1e}); XY4/EDD system part max={other:.2e}"),
    );
    assert!(ok);
}

fn eta_of(ir: &seqlib::SequenceIR, m: &NoiseModel, tau: f64) -> f64 {
    let s = render(ir, tau * ir.physical_count() as f64, 0.0, 0.0, Symmetry::Asymmetric, 1).unwrap();
    let u = propagate(&s, m, &PulseErrorModel::ideal(), Frame::Lab).unwrap();
    let u0 = dynamics::ideal_product(&s.events.iter().map(|e| e.pulse).collect::<Vec<_>>());
    metrics::eta_dd(u.unitary().unwrap(), &u0).unwrap()
}

#[test]
fn c5_order_scaling() {
    let start = Instant::now();
    let m = NoiseModel::generic(2, 0.5, 0.5, 7).unwrap();
    let taus = [0.04, 0.02, 0.01, 0.005];
    let xy4 = build(SeqId::Xy4).unwrap();
    let cdd2 = build(SeqId::Cdd(2)).unwrap();
    let e_xy4: Vec<f64> = taus.iter().map(|&t| eta_of(&xy4, &m, t)).collect();
    let e_cdd2: Vec<f64> = taus.iter().map(|&t| eta_of(&cdd2, &m, t)).collect();
    let s_xy4 = loglog_slope(&taus, &e_xy4);
    let s_cdd2 = loglog_slope(&taus, &e_cdd2);
    let tau_sat = 0.01;
    let sat: Vec<f64> = (1..=5).map(|n| eta_of(&build(SeqId::Cdd(n)).unwrap(), &m, tau_sat)).collect();
    let n_opt = (0..sat.len() - 1).find(|&i| sat[i + 1] >= sat[i]).map(|i| i + 1);
    let eps_tau = m.eps * taus[0];
    let elapsed = start.elapsed();
    let ok = eps_tau <= 0.05
        && s_xy4 >= 1.8
        && s_cdd2 >= s_xy4 + 0.8
        && n_opt.is_some_and(|n| n <= 5)
        && elapsed < Duration::from_secs(120);
    report(
        "C5",
        ok,
        &format!(
            "eps*tau_max={eps_tau:.3}; slope XY4={s_xy4:.3} (want >=1.8), slope CDD2={s_cdd2:.3} (want >={:.3}); CDD_n eta at tau={tau_sat}: {:?}; n_opt={n_opt:?} (want <=5); runtime={elapsed:?}",
            s_xy4 + 0.8,
            sat.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>()
        ),
    );
    assert!(ok);
}

#[test]
fn c6_optimal_level_arithmetic() {
    let lvl = metrics::cdd_optimal_level(4f64.powi(-4)).unwrap();
    let (lo, hi) = metrics::cdd_level_interval(3);
    let (lo_s, hi_s) = (format!("{lo:.2e}"), format!("{hi:.2e}"));
    let ok = lvl.level == 3 && !lvl.warning && lo_s == "9.77e-4" && hi_s == "3.91e-3";
    report("C6", ok, &format!("n_opt(4^-4)={} interval=({lo_s}, {hi_s}]", lvl.level));
    assert!(ok);
}

#[test]
fn c7_filter_functions() {
    let total = 2.0;
    let mut worst: f64 = 0.0;
    for k in 0..1000 {
        let w = k as f64 * 0.037;
        let fid = metrics::filter_function(&[], total, w).unwrap();
        let hahn = metrics::filter_function(&[total / 2.0], total, w).unwrap();
        worst = worst.max((fid - 4.0 * (w * total / 2.0).sin().powi(2)).abs());
        worst = worst.max((hahn - 16.0 * (w * total / 4.0).sin().powi(4)).abs());
    }
    let spectra = [
        SpectralDensity::Ohmic { amplitude: 0.5, cutoff: 30.0, exponent: 1.0 },
        SpectralDensity::Lorentzian { amplitude: 1.0, width: 2.0, center: 10.0 },
        SpectralDensity::OneOverF { amplitude: 0.2, omega_min: 0.1, omega_max: 200.0 },
    ];
    let seqs = [vec![], vec![0.5], seqlib::uhrig_times(4, 1.0).unwrap(), vec![0.25, 0.75]];
    let tol = 1e-9;
    let mut halving: f64 = 0.0;
    for s in &spectra {
        for times in &seqs {
            let a = metrics::coherence_chi_tol(s, times, 1.0, tol).unwrap().value;
            let b = metrics::coherence_chi_tol(s, times, 1.0, tol / 2.0).unwrap().value;
            halving = halving.max((a - b).abs());
        }
    }
    let ok = worst < 1e-12 && halving < 1e-8;
    report("C7", ok, &format!("max closed-form deviation on 1000 omegas={worst:.2e}; max chi change on halving tol={halving:.2e}"));
    assert!(ok);
}

fn synthetic_curve(truth: [f64; 3], tf: f64, points: usize, noise: f64, seed: u64) -> FitData {
    let times = harness::linspace(0.0, tf, points);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Normal::new(0.0, noise).unwrap();
    let values = times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let f = 0.5 + 0.5 * decay_gamma(t, truth[0], truth[1], truth[2]);
            // endpoints are the anchors of the model and stay exact
            if i == 0 || i == points - 1 {
                f
            } else {
                f + d.sample(&mut rng)
            }
        })
        .collect();
    FitData { times, values, sigmas: vec![noise; points] }
}

#[test]
fn c8_analysis_pipeline() {
    let lambda = 40.0;
    let times = harness::linspace(0.0, lambda, 201);
    let values: Vec<f64> = times.iter().map(|t| (-t / lambda).exp()).collect();
    let exact = 1.0 - (-1.0f64).exp();
    let ita_h = analysis::time_averaged_fidelity(&times, &values, lambda, Interpolation::Hermite3).unwrap();
    let ita_s = analysis::time_averaged_fidelity(&times, &values, lambda, Interpolation::CubicSpline).unwrap();
    let ita_ok = (ita_h - exact).abs() < 1e-6 && (ita_s - exact).abs() < 1e-6;

    let mut boot_ok = true;
    let mut boot_worst: f64 = 0.0;
    for (i, &(z, n)) in [(4096u64, 8192u64), (7000, 8192), (300, 1000), (95, 100)].iter().enumerate() {
        let (mean, sd) = bootstrap_fidelity(z, n, 4000, 11 + i as u64).unwrap();
        let p = z as f64 / n as f64;
        let sd0 = (p * (1.0 - p) / n as f64).sqrt();
        let (rm, rs) = ((mean - p).abs() / p, (sd - sd0).abs() / sd0);
        boot_worst = boot_worst.max(rm).max(rs);
        boot_ok &= rm <= 0.1 && rs <= 0.1;
    }

    let truth = [40.0, 0.12, 120.0];
    let curves = 100;
    let mut covered = [0usize; 3];
    let mut all_three = 0;
    let mut no_fit = 0;
    for k in 0..curves {
        let data = synthetic_curve(truth, 150.0, 12, 0.01, 1000 + k as u64);
        let sel = analysis::fit_and_select(&data).unwrap();
        let Some(best) = sel.best else {
            no_fit += 1;
            continue;
        };
        let hit: Vec<bool> = (0..3).map(|i| (best.params()[i] - truth[i]).abs() <= best.half_widths[i]).collect();
        for i in 0..3 {
            covered[i] += hit[i] as usize;
        }
        all_three += hit.iter().all(|&h| h) as usize;
    }
    let fit_ok = covered.iter().all(|&c| c * 10 >= curves * 9);

    let band = analysis::nyquist_band(12.5);
    let band_ok = (band - 0.2513).abs() < 5e-5;
    let ok = ita_ok && boot_ok && fit_ok && band_ok;
    report(
        "C8",
        ok,
        &format!(
            "ITA hermite={ita_h:.9} spline={ita_s:.9} exact={exact:.9}; bootstrap worst relative deviation={boot_worst:.3}; \
             95% interval coverage over {curves} curves lambda={} gamma={} alpha={} (all three jointly {all_three}, no accepted fit {no_fit}); B(12.5)={band:.6}",
            covered[0], covered[1], covered[2]
        ),
    );
    assert!(ok);
}

#[test]
fn c9_end_to_end_directionality() {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        model: DeviceModel::transmon(),
        sequences: vec!["free".into(), "xy4".into()],
        states: StateSet::Pauli6,
        calibrations: 10,
        seed: 2024,
        ..ExperimentConfig::default()
    };
    let run = harness::run_pauli_experiment(&cfg).unwrap();
    let final_median = |seq: &str, cal: u32| {
        let mut v: Vec<f64> =
            run.curves.iter().filter(|c| c.sequence == seq && c.calibration == cal).map(|c| *c.fidelities().last().unwrap()).collect();
        median(&mut v)
    };
    let mut wins = 0;
    let mut pairs = Vec::new();
    for cal in 0..cfg.calibrations {
        let (f, x) = (final_median("free", cal), final_median("xy4", cal));
        wins += (x > f) as u32;
        pairs.push(format!("{x:.3}/{f:.3}"));
    }
    let dense_ok = wins == cfg.calibrations;

    let haar_cfg = ExperimentConfig { sequences: vec!["cpmg".into()], states: StateSet::Haar { k: 25, seed: 2024 }, ..cfg.clone() };
    let sweep = harness::run_haar_interval_experiment(&haar_cfg).unwrap();
    let mut sweep_ok = true;
    let mut lines = Vec::new();
    for sym in [Symmetry::Asymmetric, Symmetry::Symmetric] {
        let col = sweep.column("cpmg", sym);
        let at0 = col.iter().find(|s| s.d_index == 0).unwrap().stats.median;
        let best = col.iter().max_by(|a, b| a.stats.median.total_cmp(&b.stats.median)).unwrap();
        sweep_ok &= best.stats.median >= at0;
        lines.push(format!(
            "{}: median(d=0)={at0:.4} best median={:.4} at d={:.3e}s [{}]",
            sym.short(),
            best.stats.median,
            best.d_s,
            col.iter().map(|s| format!("{:.4}", s.stats.median)).collect::<Vec<_>>().join(" ")
        ));
    }
    let elapsed = start.elapsed();
    let ok = dense_ok && sweep_ok && elapsed < Duration::from_secs(600);
    report(
        "C9",
        ok,
        &format!(
            "median F(75us) XY4 > Free in {wins}/{} calibrations (xy4/free: {}); CPMG sweep {}; runtime={elapsed:?}",
            cfg.calibrations,
            pairs.join(" "),
            lines.join("; ")
        ),
    );
    assert!(ok);
}

#[test]
fn c10_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str], name: &str| -> Vec<u8> {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_ddkit")).args(args).arg("--out").arg(&out).status().unwrap();
        assert!(status.success(), "{args:?}");
        std::fs::read(out).unwrap()
    };
    let dense = ["simulate", "--seq", "free,xy4,uddx4", "--calibrations", "3", "--seed", "99"];
    let interval = ["simulate", "--experiment", "interval", "--seq", "cpmg", "--states", "haar:4", "--calibrations", "2", "--d-points", "4", "--seed", "99"];
    let (a, b) = (run(&dense, "a.csv"), run(&dense, "b.csv"));
    let (c, d) = (run(&interval, "c.csv"), run(&interval, "d.csv"));
    let ok = a == b && c == d && !a.is_empty() && !c.is_empty();
    report("C10", ok, &format!("dense payloads identical={} ({} bytes); interval payloads identical={} ({} bytes)", a == b, a.len(), c == d, c.len()));
    assert!(ok);
}
