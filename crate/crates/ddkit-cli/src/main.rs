//! `ddkit` command line: catalog, schedules, simulation, analysis and closed-form theory.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use ddkit::analysis::{self, AnalysisError, FitData, Interpolation};
use ddkit::harness::{self, DeviceModel, ExperimentConfig, HarnessError, SeqPlan, StateSet, ZMode};
use ddkit::metrics::{self, MetricsError, SpectralDensity, TheoryKind};
use ddkit::scheduler::{self, ScheduleError, Symmetry};
use ddkit::seqlib::{self, PulseKind, SeqError, SeqId};

#[derive(Parser)]
#[command(name = "ddkit", version, about = "Dynamical decoupling sequences, simulation and analysis")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// List the sequence catalog.
    List {
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a sequence into a timed schedule (JSON).
    Schedule(ScheduleArgs),
    /// Run the dense (Pauli) or interval (Haar) experiment and write counts as CSV.
    Simulate(SimulateArgs),
    /// Analyze count files.
    Analyze {
        #[command(subcommand)]
        what: AnalyzeCmd,
    },
    /// Filter function of a sequence, or the decoherence integral χ for a spectrum.
    Filter(FilterArgs),
    /// Closed-form η bounds and the optimal concatenation level.
    Theory {
        #[command(subcommand)]
        what: TheoryCmd,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Sym {
    A,
    S,
}

impl From<Sym> for Symmetry {
    fn from(s: Sym) -> Self {
        match s {
            Sym::A => Symmetry::Asymmetric,
            Sym::S => Symmetry::Symmetric,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Experiment {
    /// Fidelity vs time with the densest packing.
    Dense,
    /// Fixed T, padding d swept from 0 to one repetition.
    Interval,
}

#[derive(Args)]
struct SeqArgs {
    /// Catalog name, e.g. xy4, cdd3, ur20, uddx8, qdd2_3.
    #[arg(long)]
    seq: String,
    /// Order parameter for cdd, ur, uddx, qdd.
    #[arg(long)]
    n: Option<u32>,
    /// Inner order for qdd.
    #[arg(long)]
    m: Option<u32>,
}

impl SeqArgs {
    fn id(&self) -> Result<SeqId, Failure> {
        Ok(SeqId::parse(&self.seq, self.n, self.m)?)
    }
}

#[derive(Args)]
struct ScheduleArgs {
    #[command(flatten)]
    seq: SeqArgs,
    /// Total time in seconds.
    #[arg(long = "T")]
    total: f64,
    /// Pulse width in seconds.
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    /// Extra padding after every pulse, in seconds.
    #[arg(long, default_value_t = 0.0)]
    d: f64,
    #[arg(long, value_enum, default_value_t = Sym::A)]
    sym: Sym,
    /// Repetitions; defaults to 1.
    #[arg(long, default_value_t = 1)]
    reps: u32,
    #[arg(long = "z-mode", default_value = "physical")]
    z_mode: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value_t = Experiment::Dense)]
    experiment: Experiment,
    /// Experiment config (JSON); flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sequence names, comma separated or repeated.
    #[arg(long, value_delimiter = ',')]
    seq: Vec<String>,
    /// Order applied to sequence names given without one.
    #[arg(long)]
    n: Option<u32>,
    #[arg(long)]
    m: Option<u32>,
    /// Longest time of the dense grid, or the fixed T of the interval sweep (seconds).
    #[arg(long = "T")]
    total: Option<f64>,
    /// Number of points of the dense time grid (including t = 0).
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    /// Number of d values in the interval sweep.
    #[arg(long = "d-points")]
    d_points: Option<usize>,
    /// Restrict the interval sweep to one symmetry.
    #[arg(long, value_enum)]
    sym: Option<Sym>,
    /// pauli6 or haar:K.
    #[arg(long)]
    states: Option<String>,
    #[arg(long)]
    shots: Option<u64>,
    #[arg(long)]
    calibrations: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Device model file (JSON), or the preset name `transmon`.
    #[arg(long)]
    model: Option<String>,
    #[arg(long = "z-mode")]
    z_mode: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InputArgs {
    /// Count file (CSV) written by `simulate`.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum AnalyzeCmd {
    /// Time-averaged fidelity of every curve.
    Ita {
        #[command(flatten)]
        io: InputArgs,
        /// Averaging window in seconds; defaults to the last time of each curve.
        #[arg(long = "T")]
        total: Option<f64>,
        #[arg(long, default_value = "hermite3")]
        method: String,
    },
    /// Quartile summaries. Dense files are grouped per sequence, interval files per
    /// (sequence, symmetry, d).
    Boxstats {
        #[command(flatten)]
        io: InputArgs,
        /// Dense files only: summarize the ITA instead of the final fidelity.
        #[arg(long)]
        ita: bool,
        #[arg(long, default_value = "hermite3")]
        method: String,
    },
    /// Anchored decay fit with post-selection for every curve.
    Fit {
        #[command(flatten)]
        io: InputArgs,
        #[arg(long, default_value_t = 1000)]
        resamples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct FilterArgs {
    #[command(flatten)]
    seq: SeqArgs,
    #[arg(long = "T")]
    total: f64,
    /// Explicit angular frequencies (rad/s), comma separated.
    #[arg(long, value_delimiter = ',')]
    omega: Vec<f64>,
    #[arg(long = "omega-min", default_value_t = 0.0)]
    omega_min: f64,
    #[arg(long = "omega-max")]
    omega_max: Option<f64>,
    #[arg(long, default_value_t = 200)]
    points: usize,
    /// Spectral density (JSON); prints χ instead of the filter function.
    #[arg(long)]
    spectrum: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum TheoryCmd {
    /// η bound for xy4, edd or cddN.
    Eta {
        #[arg(long)]
        kind: String,
        /// Bath coupling strength J.
        #[arg(long)]
        j: f64,
        /// Bath operator norm ε.
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        tau: f64,
        #[arg(long, default_value_t = 0.0)]
        delta: f64,
        #[arg(long, default_value_t = 1.0)]
        c: f64,
    },
    /// Optimal CDD level for c̄ετ = x, with the interval of x giving that level.
    Nopt {
        #[arg(long)]
        x: f64,
    },
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn validation(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Failure { code: e.exit_code(), message: e.to_string() }
    }
}

impl From<SeqError> for Failure {
    fn from(e: SeqError) -> Self {
        Failure::validation(e.to_string())
    }
}

impl From<ScheduleError> for Failure {
    fn from(e: ScheduleError) -> Self {
        Failure::validation(e.to_string())
    }
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        let code = if matches!(e, MetricsError::NonConvergent(_)) { 3 } else { 2 };
        Failure { code, message: e.to_string() }
    }
}

impl From<AnalysisError> for Failure {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Quadrature(m) => m.into(),
            other => Failure::validation(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::validation(format!("io error: {e}"))
    }
}

type Res<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code as u8)
        }
    }
}

fn run(cli: Cli) -> Res<()> {
    match cli.cmd {
        Cmd::List { format, out } => list(format, out),
        Cmd::Schedule(a) => schedule(a),
        Cmd::Simulate(a) => simulate(a),
        Cmd::Analyze { what } => analyze(what),
        Cmd::Filter(a) => filter(a),
        Cmd::Theory { what } => theory(what),
    }
}

fn emit(out: &Option<PathBuf>, text: &str) -> Res<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Failure::validation(format!("{}: {e}", p.display()))),
        None => {
            let mut so = std::io::stdout().lock();
            so.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn read(path: &PathBuf) -> Res<String> {
    fs::read_to_string(path).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))
}

fn csv_text(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}

fn json_text(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json value serializes");
    s.push('\n');
    s
}

fn list(format: Format, out: Option<PathBuf>) -> Res<()> {
    let mut rows = Vec::new();
    for id in seqlib::catalog() {
        let ir = match SeqPlan::from_id(id)? {
            SeqPlan::Free => seqlib::SequenceIR::free(),
            SeqPlan::Uniform(ir) => ir,
            SeqPlan::Timed(ts) => ts.ir,
        };
        let pulses = ir.pulses.iter().filter(|p| p.kind == PulseKind::Physical).count();
        rows.push((id.to_string(), format!("{:?}", ir.family).to_lowercase(), pulses, ir.uniform, ir.universal, id.is_timed()));
    }
    let text = match format {
        Format::Csv => csv_text(
            &["name", "family", "pulses", "uniform", "universal", "timed"],
            &rows.iter().map(|r| vec![r.0.clone(), r.1.clone(), r.2.to_string(), r.3.to_string(), r.4.to_string(), r.5.to_string()]).collect::<Vec<_>>(),
        ),
        Format::Json => json_text(&serde_json::Value::Array(
            rows.iter()
                .map(|r| json!({"name": r.0, "family": r.1, "pulses": r.2, "uniform": r.3, "universal": r.4, "timed": r.5}))
                .collect(),
        )),
    };
    emit(&out, &text)
}

fn schedule(a: ScheduleArgs) -> Res<()> {
    let plan = SeqPlan::from_id(a.seq.id()?)?;
    let z: ZMode = a.z_mode.parse()?;
    let s = plan.layout(a.total, a.delta, a.d, a.sym.into(), a.reps)?;
    if let Some(v) = scheduler::validate(&s).first() {
        return Err(Failure::validation(format!("{:?}: {}", v.kind, v.detail)));
    }
    let mut text = harness::export_schedule(&harness::apply_z_mode(&s, z));
    text.push('\n');
    emit(&a.out, &text)
}

fn simulate(a: SimulateArgs) -> Res<()> {
    let mut cfg = match &a.config {
        Some(p) => harness::import_config(&read(p)?, &p.display().to_string())?,
        None => ExperimentConfig::default(),
    };
    if !a.seq.is_empty() {
        cfg.sequences = a.seq.iter().map(|s| SeqId::parse(s, a.n, a.m).map(|id| id.to_string())).collect::<Result<_, _>>()?;
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(m) = &a.model {
        cfg.model = if m == "transmon" {
            DeviceModel::transmon()
        } else {
            let p = PathBuf::from(m);
            harness::import_model(&read(&p)?, m)?
        };
    }
    if let Some(s) = &a.states {
        cfg.states = StateSet::parse(s, cfg.seed)?;
    }
    if let Some(z) = &a.z_mode {
        cfg.z_mode = z.parse()?;
    }
    if let Some(v) = a.delta {
        cfg.delta = v;
    }
    if let Some(v) = a.shots {
        cfg.shots = v;
    }
    if let Some(v) = a.calibrations {
        cfg.calibrations = v;
    }
    if let Some(v) = a.d_points {
        cfg.d_points = v;
    }
    if let Some(s) = a.sym {
        cfg.symmetries = vec![s.into()];
    }
    if let Some(t) = a.total {
        cfg.total = t;
    }
    if a.total.is_some() || a.points.is_some() {
        let t_max = a.total.unwrap_or_else(|| cfg.times.last().copied().unwrap_or(cfg.total));
        cfg.times = harness::linspace(0.0, t_max, a.points.unwrap_or(cfg.times.len().max(2)));
    }
    let (text, skipped) = match a.experiment {
        Experiment::Dense => {
            let run = harness::run_pauli_experiment(&cfg)?;
            (harness::curves_to_csv(&run.curves), run.skipped)
        }
        Experiment::Interval => {
            let run = harness::run_haar_interval_experiment(&cfg)?;
            (harness::haar_to_csv(&run), run.skipped)
        }
    };
    for s in &skipped {
        eprintln!("warning: skipped {} calibration {} at t = {:e} s, d = {:e} s: {}", s.sequence, s.calibration, s.time_s, s.d_s, s.reason);
    }
    emit(&a.out, &text)
}

fn fmt(x: f64) -> String {
    format!("{x:e}")
}

fn label_text(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        serde_json::Value::Number(n) => match n.as_f64() {
            Some(x) if !n.is_u64() => fmt(x),
            _ => n.to_string(),
        },
        other => other.to_string(),
    }
}

fn analyze(what: AnalyzeCmd) -> Res<()> {
    match what {
        AnalyzeCmd::Ita { io, total, method } => {
            let method: Interpolation = method.parse()?;
            let curves = harness::read_curves(read(&io.input)?.as_bytes(), &io.input.display().to_string())?;
            let mut rows = Vec::new();
            for cv in &curves {
                let t = total.unwrap_or(*cv.times.last().expect("validated curve"));
                rows.push((cv, t, cv.time_averaged(t, method)?));
            }
            let text = match io.format {
                Format::Csv => csv_text(
                    &["sequence", "state", "calibration", "T_s", "ita"],
                    &rows.iter().map(|(c, t, v)| vec![c.sequence.clone(), c.state.clone(), c.calibration.to_string(), fmt(*t), fmt(*v)]).collect::<Vec<_>>(),
                ),
                Format::Json => json_text(&serde_json::Value::Array(
                    rows.iter()
                        .map(|(c, t, v)| json!({"sequence": c.sequence, "state": c.state, "calibration": c.calibration, "T_s": t, "ita": v}))
                        .collect(),
                )),
            };
            emit(&io.out, &text)
        }
        AnalyzeCmd::Boxstats { io, ita, method } => {
            let text = read(&io.input)?;
            let path = io.input.display().to_string();
            let header = text.lines().next().unwrap_or("");
            // (group labels, stats)
            let mut groups: Vec<(Vec<(&str, serde_json::Value)>, analysis::BoxStats)> = Vec::new();
            if header == harness::HAAR_HEADER.join(",") {
                let recs = harness::read_haar(text.as_bytes(), &path)?;
                for s in harness::haar_summaries(&recs)? {
                    let labels = vec![
                        ("sequence", json!(s.sequence)),
                        ("symmetry", json!(s.symmetry.short())),
                        ("d_index", json!(s.d_index)),
                        ("d_s", json!(s.d_s)),
                    ];
                    groups.push((labels, s.stats));
                }
            } else {
                let method: Interpolation = method.parse()?;
                let curves = harness::read_curves(text.as_bytes(), &path)?;
                let mut by_seq: std::collections::BTreeMap<&str, Vec<f64>> = Default::default();
                for cv in &curves {
                    let v = if ita {
                        cv.time_averaged(*cv.times.last().expect("validated curve"), method)?
                    } else {
                        *cv.fidelities().last().expect("validated curve")
                    };
                    by_seq.entry(&cv.sequence).or_default().push(v);
                }
                for (seq, v) in by_seq {
                    groups.push((vec![("sequence", json!(seq))], analysis::quartile_summary(&v)?));
                }
            }
            let stat_names = ["min", "q25", "median", "q75", "max", "mean"];
            let stat_vals = |b: &analysis::BoxStats| [b.min, b.q25, b.median, b.q75, b.max, b.mean];
            let out = match io.format {
                Format::Csv => {
                    let mut header: Vec<&str> = groups.first().map(|g| g.0.iter().map(|l| l.0).collect()).unwrap_or_else(|| vec!["sequence"]);
                    header.extend(stat_names);
                    let rows: Vec<Vec<String>> = groups
                        .iter()
                        .map(|(labels, b)| labels.iter().map(|l| label_text(&l.1)).chain(stat_vals(b).iter().map(|&x| fmt(x))).collect())
                        .collect();
                    csv_text(&header, &rows)
                }
                Format::Json => json_text(&serde_json::Value::Array(
                    groups
                        .iter()
                        .map(|(labels, b)| {
                            let mut m = serde_json::Map::new();
                            for (k, v) in labels {
                                m.insert(k.to_string(), v.clone());
                            }
                            for (k, v) in stat_names.iter().zip(stat_vals(b)) {
                                m.insert(k.to_string(), json!(v));
                            }
                            serde_json::Value::Object(m)
                        })
                        .collect(),
                )),
            };
            emit(&io.out, &out)
        }
        AnalyzeCmd::Fit { io, resamples, seed } => {
            let curves = harness::read_curves(read(&io.input)?.as_bytes(), &io.input.display().to_string())?;
            let mut results = Vec::new();
            for (i, cv) in curves.iter().enumerate() {
                let data = FitData::from_curve(cv, resamples, harness::task_seed(seed, &[i as u64]))?;
                results.push((cv, analysis::fit_and_select(&data)?));
            }
            let text = match io.format {
                Format::Csv => {
                    let header = [
                        "sequence", "state", "calibration", "accepted", "lambda_s", "gamma_rad_per_s", "alpha_s", "hw_lambda", "hw_gamma", "hw_alpha", "chi2", "aicc",
                    ];
                    let rows: Vec<Vec<String>> = results
                        .iter()
                        .map(|(cv, sel)| {
                            let mut r = vec![cv.sequence.clone(), cv.state.clone(), cv.calibration.to_string()];
                            match &sel.best {
                                Some(f) => {
                                    r.push("true".into());
                                    r.extend([f.lambda, f.gamma, f.alpha].iter().chain(&f.half_widths).chain([&f.chi2, &f.aicc]).map(|&x| fmt(x)));
                                }
                                None => {
                                    r.push("false".into());
                                    r.extend(std::iter::repeat_n(String::new(), 8));
                                }
                            }
                            r
                        })
                        .collect();
                    csv_text(&header, &rows)
                }
                Format::Json => json_text(&serde_json::Value::Array(
                    results
                        .iter()
                        .map(|(cv, sel)| json!({"sequence": cv.sequence, "state": cv.state, "calibration": cv.calibration, "best": sel.best, "rejected": sel.rejected}))
                        .collect(),
                )),
            };
            emit(&io.out, &text)
        }
    }
}

/// Ideal pulse times of one repetition scaled to `total`. Pulses at t = 0 only flip the
/// overall sign of the switching function, and coincident pairs cancel, so both are dropped.
fn flip_times(id: SeqId, total: f64) -> Res<Vec<f64>> {
    let (pulses, times) = match SeqPlan::from_id(id)? {
        SeqPlan::Free => (vec![], vec![]),
        SeqPlan::Uniform(ir) => {
            let t: Vec<f64> = ir.normalized_times().iter().map(|x| x * total).collect();
            (ir.pulses, t)
        }
        SeqPlan::Timed(ts) => {
            let t: Vec<f64> = ts.times.iter().map(|x| x * total / ts.total).collect();
            (ts.ir.pulses, t)
        }
    };
    let mut out: Vec<f64> = Vec::new();
    for (p, t) in pulses.iter().zip(times) {
        if p.kind != PulseKind::Physical || t <= 0.0 {
            continue;
        }
        if out.last().is_some_and(|&l| (l - t).abs() <= 1e-12 * total) {
            out.pop();
        } else {
            out.push(t);
        }
    }
    Ok(out)
}

fn filter(a: FilterArgs) -> Res<()> {
    if !(a.total > 0.0) {
        return Err(Failure::validation(format!("T = {} must be positive", a.total)));
    }
    let times = flip_times(a.seq.id()?, a.total)?;
    if let Some(p) = &a.spectrum {
        let s: SpectralDensity =
            serde_json::from_str(&read(p)?).map_err(|e| Failure::validation(format!("{}: line {}: {e}", p.display(), e.line())))?;
        s.validate()?;
        let q = metrics::coherence_chi_tol(&s, &times, a.total, a.tol)?;
        let text = match a.format {
            Format::Csv => csv_text(&["chi", "error", "evaluations"], &[vec![fmt(q.value), fmt(q.error), q.evaluations.to_string()]]),
            Format::Json => json_text(&json!({"chi": q.value, "error": q.error, "evaluations": q.evaluations})),
        };
        return emit(&a.out, &text);
    }
    let omegas = if a.omega.is_empty() {
        let hi = a.omega_max.unwrap_or(20.0 * std::f64::consts::PI * (times.len() + 1) as f64 / a.total);
        harness::linspace(a.omega_min, hi, a.points)
    } else {
        a.omega.clone()
    };
    let vals = omegas.iter().map(|&w| metrics::filter_function(&times, a.total, w)).collect::<Result<Vec<_>, _>>()?;
    let text = match a.format {
        Format::Csv => csv_text(&["omega", "F"], &omegas.iter().zip(&vals).map(|(w, f)| vec![fmt(*w), fmt(*f)]).collect::<Vec<_>>()),
        Format::Json => json_text(&json!({"pulse_times": times, "omega": omegas, "F": vals})),
    };
    emit(&a.out, &text)
}

fn theory(what: TheoryCmd) -> Res<()> {
    let v = match what {
        TheoryCmd::Eta { kind, j, eps, tau, delta, c } => {
            let k = match kind.to_ascii_lowercase().as_str() {
                "xy4" => TheoryKind::Xy4,
                "edd" => TheoryKind::Edd,
                other => match other.strip_prefix("cdd").and_then(|n| n.parse().ok()) {
                    Some(n) => TheoryKind::Cdd(n),
                    None => return Err(Failure::validation(format!("unknown kind '{kind}' (expected xy4, edd or cddN)"))),
                },
            };
            json!({"kind": kind, "eta": metrics::theory_eta(k, j, eps, tau, delta, c)?})
        }
        TheoryCmd::Nopt { x } => {
            let lvl = metrics::cdd_optimal_level(x)?;
            let (lo, hi) = metrics::cdd_level_interval(lvl.level);
            if lvl.warning {
                eprintln!("warning: x = {x} is outside the range where concatenation helps");
            }
            json!({"x": x, "n_opt": lvl.level, "warning": lvl.warning, "interval": [lo, hi]})
        }
    };
    emit(&None, &json_text(&v))
}
