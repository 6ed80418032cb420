//! The method × grid benchmark on the quasilinear flux problem.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::multigrid::Ramp;
use crate::operator::Vector;
use crate::pde::{NuCoefficient, PdeConstants, PdeProblem};
use crate::problems::ProblemSpec;
use crate::solver::{run, Method, RunStatus, SchurMode, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchCase {
    pub nu: NuCoefficient,
    /// Relaxation used by IPPGDv-tau.
    pub tau: f64,
}

impl BenchCase {
    pub fn label(&self) -> String {
        format!("({},{},{})", self.nu.a0, self.nu.a1, self.nu.a2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub cases: Vec<BenchCase>,
    pub grids: Vec<usize>,
    pub methods: Vec<Method>,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
    /// Inexact methods add a cycle each time the smallest relative step
    /// drops by this factor.
    pub ramp_ratio: f64,
    /// Multiplies every method's default step.
    pub alpha_scale: f64,
    /// Parallel cells; `None` uses all cores.
    pub threads: Option<usize>,
}

pub fn default_bench() -> BenchConfig {
    BenchConfig {
        cases: vec![
            BenchCase {
                nu: NuCoefficient::new(1.0, 1.0, 5.0).expect("valid coefficient"),
                tau: 0.5,
            },
            BenchCase {
                nu: NuCoefficient::new(1.0, 6.0, 5.0).expect("valid coefficient"),
                tau: 0.2,
            },
        ],
        grids: vec![32, 64, 128],
        methods: Method::ALL.to_vec(),
        max_iters: 3000,
        grad_tol: 1e-14,
        step_tol: 1e-10,
        ramp_ratio: 0.5,
        alpha_scale: 1.0,
        threads: None,
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cases.is_empty() || self.grids.is_empty() || self.methods.is_empty() {
            return Err(Error::InvalidArgument("bench needs at least one case, grid and method".into()));
        }
        if let Some(&n) = self.grids.iter().find(|&&n| n < 4 || !n.is_power_of_two()) {
            return Err(Error::InvalidArgument(format!("grid {n} must be a power of two >= 4")));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidArgument("threads must be positive".into()));
        }
        for c in &self.cases {
            if !(c.tau > 0.0 && c.tau <= 1.0) {
                return Err(Error::InvalidArgument("tau must be in (0,1]".into()));
            }
        }
        Ok(())
    }
}

/// Step sizes: `1/L` of `f` in `M(1)` for the fixed metric, and
/// `1/sup ν/ν̃'` for the variable metric, enlarged by `1/τ` when relaxed.
pub fn method_config(method: Method, case: &BenchCase, cfg: &BenchConfig) -> SolverConfig {
    let c = PdeConstants::of(&case.nu);
    let alpha = cfg.alpha_scale
        * match method {
            Method::Pgd | Method::Ippgd => 1.0 / c.l_sharp,
            Method::Ippgdv => 1.0 / c.l_local,
            Method::IppgdvTau => 1.0 / (c.l_local * case.tau),
        };
    let mut s = SolverConfig::preset(method, alpha);
    if method == Method::IppgdvTau {
        s.tau = case.tau;
    }
    s.max_iters = cfg.max_iters;
    s.grad_tol = cfg.grad_tol;
    s.step_tol = cfg.step_tol;
    if let SchurMode::Schedule(ref mut sched) = s.schur {
        sched.ramp = Ramp::Progress {
            ratio: cfg.ramp_ratio,
        };
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub case: String,
    pub n: usize,
    pub dofs: usize,
    pub method: Method,
    pub iterations: usize,
    pub avg_cycles: f64,
    pub total_cycles: usize,
    pub seconds: f64,
    pub converged: bool,
    pub status: String,
    pub l2_error: f64,
    /// Measured cycles for a `1e-8` Schur residual on this grid.
    pub exact_cycles: Option<usize>,
}

fn status_text(s: &RunStatus) -> String {
    match s {
        RunStatus::Converged(r) => format!("converged:{r:?}"),
        RunStatus::MaxIters => "max_iters".into(),
        RunStatus::Diverged(m) => format!("FAILED: diverged: {m}"),
        RunStatus::Failed(m) => format!("FAILED: {m}"),
    }
}

fn run_cell(problem: &PdeProblem, case: &BenchCase, method: Method, cfg: &BenchConfig) -> BenchRow {
    let n = problem.grid().n;
    let mut row = BenchRow {
        case: case.label(),
        n,
        dofs: problem.grid().num_flux() + problem.grid().num_cells(),
        method,
        iterations: 0,
        avg_cycles: f64::NAN,
        total_cycles: 0,
        seconds: 0.0,
        converged: false,
        status: String::new(),
        l2_error: f64::NAN,
        exact_cycles: problem.measured_exact_cycles(),
    };
    let scfg = method_config(method, case, cfg);
    let t0 = Instant::now();
    let out = run(problem, &Vector::zeros(problem.dim()), &scfg);
    row.seconds = t0.elapsed().as_secs_f64();
    match out {
        Ok(o) => {
            row.iterations = o.trace.iterations();
            row.avg_cycles = o.trace.average_cycles();
            row.total_cycles = o.trace.total_cycles();
            row.converged = o.status.converged();
            row.status = status_text(&o.status);
            row.l2_error = problem.l2_error(&problem.flux(&o.u)).unwrap_or(f64::NAN);
        }
        Err(e) => row.status = format!("FAILED: {e}"),
    }
    row
}

/// Runs every case × grid × method cell. Rows come back in configuration
/// order whatever the scheduling; a failed setup marks all its rows.
pub fn bench_table(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cfg.threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let setups: Vec<(BenchCase, usize)> = cfg
        .cases
        .iter()
        .flat_map(|c| cfg.grids.iter().map(move |&n| (*c, n)))
        .collect();
    let rows = pool.install(|| {
        setups
            .par_iter()
            .map(|(case, n)| match PdeProblem::manufactured(*n, case.nu) {
                Ok(p) => cfg
                    .methods
                    .par_iter()
                    .map(|&m| run_cell(&p, case, m, cfg))
                    .collect::<Vec<_>>(),
                Err(e) => cfg
                    .methods
                    .iter()
                    .map(|&m| BenchRow {
                        case: case.label(),
                        n: *n,
                        dofs: 0,
                        method: m,
                        iterations: 0,
                        avg_cycles: f64::NAN,
                        total_cycles: 0,
                        seconds: 0.0,
                        converged: false,
                        status: format!("FAILED: setup: {e}"),
                        l2_error: f64::NAN,
                        exact_cycles: None,
                    })
                    .collect(),
            })
            .collect::<Vec<_>>()
    });
    Ok(rows.into_iter().flatten().collect())
}

/// `IPPGDv-tau ≤ IPPGDv ≤ IPPGD ≤ PGD` in outer iterations for every
/// case and grid that has all four rows.
pub fn ordering_holds(rows: &[BenchRow]) -> bool {
    let order = [Method::IppgdvTau, Method::Ippgdv, Method::Ippgd, Method::Pgd];
    let mut keys: Vec<(&str, usize)> = rows.iter().map(|r| (r.case.as_str(), r.n)).collect();
    keys.dedup();
    keys.iter().all(|(case, n)| {
        let its: Vec<Option<usize>> = order
            .iter()
            .map(|m| {
                rows.iter()
                    .find(|r| r.case == *case && r.n == *n && r.method == *m)
                    .map(|r| r.iterations)
            })
            .collect();
        if its.iter().any(|i| i.is_none()) {
            return true;
        }
        its.windows(2).all(|w| w[0] <= w[1])
    })
}

pub const BENCH_COLUMNS: [&str; 12] = [
    "case",
    "grid",
    "dofs",
    "method",
    "iterations",
    "avg_wcycles",
    "total_wcycles",
    "status",
    "l2_error",
    "exact_cycles",
    "converged",
    "seconds",
];

/// CSV report; `include_time = false` gives byte-identical output across
/// reruns.
pub fn write_bench_csv<W: Write>(rows: &[BenchRow], w: W, include_time: bool) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let cols = if include_time { &BENCH_COLUMNS[..] } else { &BENCH_COLUMNS[..11] };
    let err = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    wr.write_record(cols).map_err(err)?;
    for r in rows {
        let mut rec = vec![
            r.case.clone(),
            format!("{0}x{0}", r.n),
            r.dofs.to_string(),
            r.method.name().to_string(),
            r.iterations.to_string(),
            format!("{:.3}", r.avg_cycles),
            r.total_cycles.to_string(),
            r.status.clone(),
            format!("{:.6e}", r.l2_error),
            r.exact_cycles.map_or("none".into(), |c| c.to_string()),
            r.converged.to_string(),
        ];
        if include_time {
            rec.push(format!("{:.3}", r.seconds));
        }
        wr.write_record(&rec).map_err(err)?;
    }
    wr.flush()?;
    Ok(())
}
