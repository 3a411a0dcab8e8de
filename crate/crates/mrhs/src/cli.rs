//! `mrhs` subcommands. Every command prints a one-line JSON header before
//! its payload and maps failures onto exit codes 1 (validation), 2
//! (numerical) and 3 (internal).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use mrhs_core::costmodel::{
    cost, direct_product, kernel_cost, run_kernel, AbstractMachine, CostWeights, Strategy, WeightPreset,
};
use mrhs_core::dirac::{DiracOperator, WilsonDirac};
use mrhs_core::field::{block_norms, BlockField, Layout, LayoutPolicy, SPINOR};
use mrhs_core::geometry::RankGrid;
use mrhs_core::gmres::{gmres_solve, GmresOutcome};
use mrhs_core::oe::OddEven;
use mrhs_core::oracle::{
    assemble_dirac_dense, assemble_schur_dense, dense_solve, field_columns, field_from_columns, max_relative_error,
    MAX_DENSE_DIM,
};
use mrhs_core::perf::RooflineInputs;
use mrhs_core::C64;

use crate::bench::{bench_dirac, mrhs_speedup, BenchOptions};
use crate::config::{OutputFormat, RunConfig, RNG_NAME};
use crate::error::{Error, Result};
use crate::halo::{apply_decomposed, DecomposedProblem, RankExecution, DEFAULT_TIMEOUT};
use crate::report::{history_csv, parse_runs, roofline, roofline_csv, roofline_json, runs_json, PerfRecordJson};
use crate::snapshot::{self, checksum};
use crate::stream::{stream_bench, StreamKind, LLC_MULTIPLE};
use crate::threads::Threaded;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

/// Tolerance of the gauge special-unitarity check.
pub const GAUGE_TOL: f64 = 1e-12;

#[derive(Debug, Parser)]
#[command(name = "mrhs", version, about = "Multiple right-hand-side Wilson-Dirac kernel laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Time the operator for every configured block size and layout.
    BenchDirac {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 2)]
        warmup: usize,
        #[arg(long, default_value_t = 10)]
        reps: usize,
        /// Write the perf records as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve `D x = eta` for a seeded random block of right-hand sides.
    Solve {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Compare the kernels against dense reference matrices.
    OracleCheck {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Use this gauge snapshot instead of the generated field.
        #[arg(long)]
        gauge: Option<PathBuf>,
        /// Use this clover snapshot instead of the generated field.
        #[arg(long)]
        clover: Option<PathBuf>,
    },
    /// Memory bandwidth micro-benchmark.
    Stream {
        #[arg(long, default_value = "triad")]
        kind: String,
        /// Size of each array in MiB; defaults to a multiple of --llc-mb.
        #[arg(long)]
        mb: Option<f64>,
        #[arg(long, default_value_t = 32.0)]
        llc_mb: f64,
        #[arg(long, default_value_t = 10)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Roofline table from perf records.
    Roofline {
        #[arg(long = "in")]
        input: PathBuf,
        /// Triad bandwidth in GB/s.
        #[arg(long)]
        triad_bw: f64,
        /// Copy bandwidth in GB/s.
        #[arg(long)]
        copy_bw: Option<f64>,
        /// CSV output, or JSON when the name ends in `.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Instruction histogram and cost of a small-matrix strategy.
    CostModel {
        #[arg(long, default_value = "neg-a")]
        strategy: String,
        #[arg(long, default_value_t = 8)]
        b: usize,
        #[arg(long)]
        b2: Option<usize>,
        #[arg(long, default_value_t = 512)]
        svl: usize,
        #[arg(long, default_value_t = 100)]
        iters: u64,
        #[arg(long, default_value = "uniform")]
        weights: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write seeded gauge, clover and right-hand-side snapshots.
    GenFields {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::BenchDirac { .. } => "bench-dirac",
            Command::Solve { .. } => "solve",
            Command::OracleCheck { .. } => "oracle-check",
            Command::Stream { .. } => "stream",
            Command::Roofline { .. } => "roofline",
            Command::CostModel { .. } => "cost-model",
            Command::GenFields { .. } => "gen-fields",
        }
    }

    fn config_args(&self) -> Option<&ConfigArgs> {
        match self {
            Command::BenchDirac { cfg, .. }
            | Command::Solve { cfg }
            | Command::OracleCheck { cfg, .. }
            | Command::GenFields { cfg, .. } => Some(cfg),
            _ => None,
        }
    }
}

/// Failure with a specific exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

pub fn exit_code(e: &Error) -> i32 {
    use mrhs_core::Error as E;
    match e {
        Error::Config(_) | Error::Format(_) | Error::Io { .. } => EXIT_VALIDATION,
        Error::Numerical(_) => EXIT_NUMERICAL,
        Error::Json(_) => EXIT_INTERNAL,
        Error::Core(c) => match c {
            E::InvalidArgument(_) | E::ShapeMismatch(_) | E::Unsupported(_) => EXIT_VALIDATION,
            E::SingularBlock { .. } | E::SingularMatrix(_) => EXIT_NUMERICAL,
            E::Comm(_) | E::HaloMissing { .. } => EXIT_INTERNAL,
        },
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

impl From<mrhs_core::Error> for Failure {
    fn from(e: mrhs_core::Error) -> Self {
        Error::from(e).into()
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Error::from(e).into()
    }
}

type CmdResult = std::result::Result<i32, Failure>;

pub fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut text = match &args.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        None => String::new(),
    };
    for s in &args.set {
        if !s.contains('=') {
            return Err(Error::Config(format!("--set {s:?}: expected KEY=VALUE")));
        }
        text.push('\n');
        text.push_str(s);
    }
    RunConfig::parse(&dedup_overrides(&text))
}

/// Later assignments of a key replace earlier ones.
fn dedup_overrides(text: &str) -> String {
    let mut last: BTreeMap<String, usize> = BTreeMap::new();
    let lines: Vec<&str> = text.lines().collect();
    for (n, l) in lines.iter().enumerate() {
        if let Some((k, _)) = l.split('#').next().unwrap_or("").split_once('=') {
            last.insert(k.trim().to_string(), n);
        }
    }
    lines
        .iter()
        .enumerate()
        .filter(|(n, l)| match l.split('#').next().unwrap_or("").split_once('=') {
            Some((k, _)) => last.get(k.trim()) == Some(n),
            None => true,
        })
        .map(|(_, l)| *l)
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Serialize)]
struct Header<'a> {
    version: &'a str,
    command: &'a str,
    config_hash: String,
    seed: u64,
    rng: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    args: Option<Value>,
}

fn emit(out: &mut dyn Write, v: &impl Serialize) -> std::result::Result<(), Failure> {
    let line = serde_json::to_string(v)?;
    writeln!(out, "{line}").map_err(|e| Failure {
        code: EXIT_INTERNAL,
        message: format!("stdout: {e}"),
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(err, "{e}")
            } else {
                write!(out, "{e}")
            };
            return code;
        }
    };
    match dispatch(&cli.command, out) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(cmd: &Command, out: &mut dyn Write) -> CmdResult {
    let cfg = match cmd.config_args() {
        Some(a) => load_config(a)?,
        None => RunConfig::default(),
    };
    let args = match cmd {
        Command::Stream {
            kind,
            mb,
            llc_mb,
            reps,
            threads,
        } => Some(json!({"kind": kind, "mb": mb, "llc_mb": llc_mb, "reps": reps, "threads": threads})),
        Command::Roofline {
            input,
            triad_bw,
            copy_bw,
            out,
        } => Some(json!({"in": input, "triad_bw": triad_bw, "copy_bw": copy_bw, "out": out})),
        Command::CostModel {
            strategy,
            b,
            b2,
            svl,
            iters,
            weights,
            out,
        } => Some(
            json!({"strategy": strategy, "b": b, "b2": b2, "svl": svl, "iters": iters, "weights": weights, "out": out}),
        ),
        _ => None,
    };
    emit(
        out,
        &Header {
            version: env!("CARGO_PKG_VERSION"),
            command: cmd.name(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            rng: RNG_NAME,
            args,
        },
    )?;
    match cmd {
        Command::BenchDirac {
            warmup,
            reps,
            out: path,
            ..
        } => cmd_bench(&cfg, *warmup, *reps, path.as_deref(), out),
        Command::Solve { .. } => cmd_solve(&cfg, out),
        Command::OracleCheck { gauge, clover, .. } => cmd_oracle(&cfg, gauge.as_deref(), clover.as_deref(), out),
        Command::Stream {
            kind,
            mb,
            llc_mb,
            reps,
            threads,
        } => cmd_stream(kind, *mb, *llc_mb, *reps, *threads, out),
        Command::Roofline {
            input,
            triad_bw,
            copy_bw,
            out: path,
        } => cmd_roofline(input, *triad_bw, *copy_bw, path.as_deref(), out),
        Command::CostModel {
            strategy,
            b,
            b2,
            svl,
            iters,
            weights,
            out: path,
        } => cmd_cost_model(strategy, *b, *b2, *svl, *iters, weights, path.as_deref(), out),
        Command::GenFields { out_dir, .. } => cmd_gen_fields(&cfg, out_dir, out),
    }
}

fn cmd_bench(cfg: &RunConfig, warmup: usize, reps: usize, path: Option<&Path>, out: &mut dyn Write) -> CmdResult {
    let rep = bench_dirac(
        cfg,
        BenchOptions {
            warmup,
            repetitions: reps,
        },
    )?;
    emit(
        out,
        &json!({"gauge_checksum": rep.gauge_checksum, "clover_checksum": rep.clover_checksum}),
    )?;
    for r in &rep.records {
        emit(out, &PerfRecordJson::from(r))?;
    }
    if let Some(m) = &rep.multi_rank {
        emit(out, &json!({ "multi_rank": m }))?;
    }
    if let Some(s) = mrhs_speedup(&rep.records) {
        emit(out, &json!({"mrhs_speedup": s, "below_one": s.speedup < 1.0}))?;
    }
    if let Some(p) = path {
        write_text(p, &runs_json(&rep.records)?)?;
    }
    Ok(EXIT_OK)
}

/// Relative explicit residual `|eta_i - D x_i| / |eta_i|` per rhs.
pub fn explicit_relnorms(dirac: &WilsonDirac<'_>, x: &BlockField, eta: &BlockField) -> Result<Vec<f64>> {
    let mut r = BlockField::zeros(x.n_sites(), SPINOR, x.policy());
    dirac.apply(x, &mut r, &mrhs_core::Serial)?;
    for (ri, ei) in r.data_mut().iter_mut().zip(eta.data()) {
        *ri = *ei - *ri;
    }
    Ok(block_norms(&r)
        .into_iter()
        .zip(block_norms(eta))
        .map(|(r, e)| if e > 0.0 { r / e } else { r })
        .collect())
}

pub struct Solved {
    pub solution: BlockField,
    pub outcome: GmresOutcome,
    pub explicit: Vec<f64>,
}

/// Solves the seeded problem of `cfg`, through the odd-even reduced system
/// when configured.
pub fn solve(cfg: &RunConfig) -> Result<Solved> {
    let geom = cfg.geometry()?;
    let gauge = cfg.gauge(&geom);
    let clover = cfg.clover(&geom);
    let dirac = WilsonDirac::new(cfg.params(), &gauge, &clover)?;
    let exec = Threaded::new(cfg.threads);
    let pol = cfg.policy()?;
    let eta = BlockField::random(geom.n_sites(), SPINOR, pol, cfg.rhs_seed());
    let gcfg = cfg.gmres();
    let (solution, outcome) = if cfg.odd_even {
        let oe = OddEven::new(&dirac, &exec)?;
        let rhs = oe.prepare_rhs(&eta)?;
        let x0 = BlockField::zeros(rhs.n_sites(), SPINOR, pol);
        let out = gmres_solve(&oe, &rhs, &x0, &gcfg)?;
        (oe.reconstruct_full(&out.solution, &eta)?, out)
    } else {
        let op = DiracOperator::new(&dirac, &exec);
        let x0 = BlockField::zeros(geom.n_sites(), SPINOR, pol);
        let out = gmres_solve(&op, &eta, &x0, &gcfg)?;
        (out.solution.clone(), out)
    };
    let explicit = explicit_relnorms(&dirac, &solution, &eta)?;
    Ok(Solved {
        solution,
        outcome,
        explicit,
    })
}

fn cmd_solve(cfg: &RunConfig, out: &mut dyn Write) -> CmdResult {
    let s = solve(cfg)?;
    let o = &s.outcome;
    let converged = s.explicit.iter().all(|&r| r <= cfg.tol);
    emit(
        out,
        &json!({
            "odd_even": cfg.odd_even,
            "iterations": o.iterations,
            "cycles": o.cycles,
            "converged": converged,
            "stagnated": o.stagnated,
            "final_explicit_relnorms": s.explicit,
            "solution_checksum": checksum(s.solution.data()),
        }),
    )?;
    let history = match cfg.format {
        OutputFormat::Csv => history_csv(&o.history),
        OutputFormat::Json => serde_json::to_string(&o.history)? + "\n",
    };
    if cfg.path.is_empty() {
        write!(out, "{history}").map_err(|e| Failure {
            code: EXIT_INTERNAL,
            message: format!("stdout: {e}"),
        })?;
    } else {
        let ext = match cfg.format {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        };
        write_text(Path::new(&format!("{}.history.{ext}", cfg.path)), &history)?;
        let geom = cfg.geometry()?;
        let p = PathBuf::from(format!("{}.solution.lqml", cfg.path));
        snapshot::write_file(&p, &snapshot::encode_spinor(&geom, &s.solution)?)?;
    }
    if !cfg.fixed_iterations && !converged {
        return Err(Error::Numerical(format!(
            "solver did not reach tol {:e}; explicit residuals {:?}",
            cfg.tol, s.explicit
        ))
        .into());
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteResult {
    pub suite: String,
    pub passed: bool,
    pub error: f64,
    pub tolerance: f64,
    pub detail: String,
}

fn suite(name: &str, error: f64, tolerance: f64, detail: String) -> SuiteResult {
    SuiteResult {
        suite: name.to_string(),
        passed: error.is_finite() && error <= tolerance,
        error,
        tolerance,
        detail,
    }
}

fn rank_grid_for(cfg: &RunConfig) -> Option<[usize; 4]> {
    let geom = cfg.geometry().ok()?;
    if cfg.ranks.iter().product::<usize>() > 1 {
        return Some(cfg.ranks);
    }
    (0..4)
        .map(|mu| {
            let mut g = [1; 4];
            g[mu] = 2;
            g
        })
        .find(|&g| RankGrid::new(&geom, g).is_ok())
}

/// Dense-equivalence suites on the configured lattice.
pub fn oracle_suites(
    cfg: &RunConfig,
    gauge: &mrhs_core::GaugeField,
    clover: &mrhs_core::CloverField,
) -> Result<Vec<SuiteResult>> {
    let geom = *gauge.geometry();
    let dim = geom.n_sites() * SPINOR;
    if dim > MAX_DENSE_DIM {
        return Err(Error::Config(format!(
            "oracle-check needs at most {} sites, lattice has {}",
            MAX_DENSE_DIM / SPINOR,
            geom.n_sites()
        )));
    }
    let mut results = Vec::new();
    if let Err(e) = gauge.validate(GAUGE_TOL) {
        results.push(SuiteResult {
            suite: "gauge-unitarity".into(),
            passed: false,
            error: f64::INFINITY,
            tolerance: GAUGE_TOL,
            detail: e.to_string(),
        });
        return Ok(results);
    }
    results.push(suite("gauge-unitarity", 0.0, GAUGE_TOL, "all links special unitary".into()));

    let params = cfg.params();
    let dirac = WilsonDirac::new(params, gauge, clover)?;
    let dense = assemble_dirac_dense(params, gauge, clover)?;
    for b in [1, 8] {
        for layout in [Layout::ColumnMajor, Layout::RowMajor] {
            let pol = LayoutPolicy::new(layout, b)?;
            let psi = BlockField::random(geom.n_sites(), SPINOR, pol, cfg.rhs_seed());
            let mut eta = BlockField::zeros(geom.n_sites(), SPINOR, pol);
            dirac.apply(&psi, &mut eta, &mrhs_core::Serial)?;
            let want = dense.apply_field(&psi)?;
            results.push(suite(
                "dirac-dense",
                max_relative_error(&eta, &want),
                1e-12,
                format!("b={b} layout={layout}"),
            ));
        }
    }

    let pol = LayoutPolicy::new(Layout::ColumnMajor, 2)?;
    let oe = OddEven::new(&dirac, &mrhs_core::Serial)?;
    let half = BlockField::random(oe.split().even().len(), SPINOR, pol, cfg.rhs_seed());
    let mut got = BlockField::zeros(half.n_sites(), SPINOR, pol);
    oe.apply_schur(&half, &mut got)?;
    let schur = assemble_schur_dense(params, gauge, clover)?;
    results.push(suite(
        "schur-dense",
        max_relative_error(&got, &schur.apply_field(&half)?),
        1e-11,
        "b=2 layout=1".into(),
    ));

    let pol = LayoutPolicy::new(Layout::RowMajor, 2)?;
    let eta = BlockField::random(geom.n_sites(), SPINOR, pol, cfg.rhs_seed());
    let op = DiracOperator::new(&dirac, &mrhs_core::Serial);
    let x0 = BlockField::zeros(geom.n_sites(), SPINOR, pol);
    let sol = gmres_solve(&op, &eta, &x0, &cfg.gmres())?;
    let exact = dense_solve(&dense, &field_columns(&eta))?;
    let exact = field_from_columns(geom.n_sites(), SPINOR, Layout::RowMajor, &exact)?;
    results.push(suite(
        "gmres-dense",
        max_relative_error(&sol.solution, &exact),
        1e-6,
        format!("b=2 tol={:e}", cfg.tol),
    ));

    if let Some(grid) = rank_grid_for(cfg) {
        let problem = DecomposedProblem::new(gauge, clover, grid)?;
        let pol = LayoutPolicy::new(Layout::ColumnMajor, 8)?;
        let psi = BlockField::random(geom.n_sites(), SPINOR, pol, cfg.rhs_seed());
        let mut single = BlockField::zeros(geom.n_sites(), SPINOR, pol);
        dirac.apply(&psi, &mut single, &mrhs_core::Serial)?;
        let multi = apply_decomposed(params, &problem, &psi, RankExecution::Sequential, DEFAULT_TIMEOUT)?;
        results.push(suite(
            "multi-rank",
            max_relative_error(&multi.eta, &single),
            1e-15,
            format!("grid={grid:?} b=8"),
        ));
    }
    Ok(results)
}

fn cmd_oracle(cfg: &RunConfig, gauge: Option<&Path>, clover: Option<&Path>, out: &mut dyn Write) -> CmdResult {
    let geom = cfg.geometry()?;
    let u = match gauge {
        Some(p) => snapshot::decode_gauge(&snapshot::read_file(p)?)?,
        None => cfg.gauge(&geom),
    };
    let c = match clover {
        Some(p) => snapshot::decode_clover(&snapshot::read_file(p)?)?,
        None => cfg.clover(u.geometry()),
    };
    if u.geometry() != c.geometry() {
        return Err(Error::Config("gauge and clover lattices differ".into()).into());
    }
    let results = oracle_suites(cfg, &u, &c)?;
    for r in &results {
        emit(out, r)?;
    }
    match results.iter().find(|r| !r.passed) {
        Some(r) => Err(Failure {
            code: EXIT_NUMERICAL,
            message: format!("suite {} failed: {}", r.suite, r.detail),
        }),
        None => Ok(EXIT_OK),
    }
}

fn cmd_stream(kind: &str, mb: Option<f64>, llc_mb: f64, reps: usize, threads: usize, out: &mut dyn Write) -> CmdResult {
    let kind = StreamKind::from_name(kind)?;
    let mb = mb.unwrap_or(llc_mb * LLC_MULTIPLE as f64);
    if !(mb.is_finite() && mb > 0.0) {
        return Err(Error::Config(format!("--mb must be positive, got {mb}")).into());
    }
    let r = stream_bench(kind, (mb * 1024.0 * 1024.0) as usize, reps, threads)?;
    emit(out, &r)?;
    Ok(EXIT_OK)
}

fn cmd_roofline(
    input: &Path,
    triad_bw: f64,
    copy_bw: Option<f64>,
    path: Option<&Path>,
    out: &mut dyn Write,
) -> CmdResult {
    if !(triad_bw.is_finite() && triad_bw > 0.0) {
        return Err(Error::Config(format!("--triad-bw must be positive, got {triad_bw}")).into());
    }
    let text = std::fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
    let runs = parse_runs(&text)?;
    let inputs = RooflineInputs {
        stream_triad_bw: triad_bw * 1e9,
        stream_copy_bw: copy_bw.unwrap_or(triad_bw) * 1e9,
    };
    let rows = roofline(&runs, &inputs);
    let is_json = path.is_some_and(|p| p.extension().is_some_and(|e| e == "json"));
    let body = if is_json { roofline_json(&rows)? } else { roofline_csv(&rows) };
    match path {
        Some(p) => write_text(p, &body)?,
        None => write!(out, "{body}").map_err(|e| Failure {
            code: EXIT_INTERNAL,
            message: format!("stdout: {e}"),
        })?,
    }
    let violations = rows.iter().filter(|r| r.violates_model()).count();
    emit(out, &json!({"rows": rows.len(), "model_violations": violations}))?;
    Ok(EXIT_OK)
}

/// `{opcode: count}` plus cost for one strategy and width.
pub fn cost_report(strategy: Strategy, b: usize, svl: usize, weights: &CostWeights) -> Result<Value> {
    let mut mach = AbstractMachine::new(svl)?;
    let a: [C64; 9] = BlockField::random(1, 9, LayoutPolicy::unblocked(), 1)
        .into_data()
        .try_into()
        .expect("9 values");
    let m = BlockField::random(1, 3 * b, LayoutPolicy::unblocked(), 2).into_data();
    let (o, hist) = run_kernel(strategy, &a, &m, b, &mut mach)?;
    let want = direct_product(&a, &m, b);
    let value_error = o
        .iter()
        .zip(&want)
        .map(|(x, y)| (x - y).norm() / y.norm().max(1.0))
        .fold(0.0, f64::max);
    if value_error > 1e-13 {
        return Err(Error::Numerical(format!("{strategy} product differs from the direct product by {value_error:e}")));
    }
    let histogram: BTreeMap<&str, u64> = hist.iter().filter(|&(_, n)| n > 0).map(|(op, n)| (op.name(), n)).collect();
    Ok(json!({
        "strategy": strategy.name(),
        "b": b,
        "svl": svl,
        "histogram": histogram,
        "total_instructions": hist.total(),
        "total_cost": cost(&hist, weights)?,
        "value_error": value_error,
    }))
}

#[allow(clippy::too_many_arguments)]
fn cmd_cost_model(
    strategy: &str,
    b: usize,
    b2: Option<usize>,
    svl: usize,
    iters: u64,
    weights: &str,
    path: Option<&Path>,
    out: &mut dyn Write,
) -> CmdResult {
    let strategy = Strategy::from_name(strategy)?;
    let preset = match weights {
        "uniform" => WeightPreset::Uniform,
        "override" => WeightPreset::Override,
        _ => return Err(Error::Config(format!("--weights {weights:?}: expected uniform or override")).into()),
    };
    let w = CostWeights::preset(preset);
    let mut report = cost_report(strategy, b, svl, &w)?;
    report["weights"] = json!(weights);
    if let Some(b2) = b2 {
        let second = cost_report(strategy, b2, svl, &w)?;
        let delta = iters as f64 * (kernel_cost(strategy, b2, svl, &w)? - kernel_cost(strategy, b, svl, &w)?);
        report["b2"] = second;
        report["iters"] = json!(iters);
        report["delta_cost"] = json!(delta);
    }
    match path {
        Some(p) => write_text(p, &serde_json::to_string_pretty(&report)?)?,
        None => emit(out, &report)?,
    }
    Ok(EXIT_OK)
}

fn cmd_gen_fields(cfg: &RunConfig, dir: &Path, out: &mut dyn Write) -> CmdResult {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let geom = cfg.geometry()?;
    let u = cfg.gauge(&geom);
    let c = cfg.clover(&geom);
    let eta = BlockField::random(geom.n_sites(), SPINOR, cfg.policy()?, cfg.rhs_seed());
    let files = [
        ("gauge.lqmg", snapshot::encode_gauge(&u), checksum(u.data())),
        ("clover.lqmc", snapshot::encode_clover(&c), checksum(c.data())),
        ("rhs.lqml", snapshot::encode_spinor(&geom, &eta)?, checksum(eta.data())),
    ];
    for (name, bytes, sum) in files {
        let p = dir.join(name);
        snapshot::write_file(&p, &bytes)?;
        emit(out, &json!({"file": p, "bytes": bytes.len(), "checksum": sum}))?;
    }
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_replace_earlier_keys() {
        let text = "seed = 1\nblock.b = 2\nseed = 5";
        assert_eq!(dedup_overrides(text), "block.b = 2\nseed = 5");
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_VALIDATION);
        assert_eq!(exit_code(&Error::Numerical("x".into())), EXIT_NUMERICAL);
        assert_eq!(
            exit_code(&mrhs_core::Error::SingularBlock { site: 0, pivot_ratio: 0.0 }.into()),
            EXIT_NUMERICAL
        );
        assert_eq!(exit_code(&mrhs_core::Error::Comm("x".into()).into()), EXIT_INTERNAL);
    }
}
