use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ippgd_core::bench::{bench_table, write_bench_csv};
use ippgd_core::checks::{run_checks, Scope};
use ippgd_core::config::{self, BuiltProblem, FlowStart};
use ippgd_core::dynamics::{integrate_flow_partial, FlowTrajectory, LyapunovAnchors};
use ippgd_core::problems::{fixed_point_solve_from, kkt_oracle, metric_set};
use ippgd_core::solver::{run, MetricPolicy, Method, RunStatus, SolverConfig, TheoryConstants};
use ippgd_core::{Error, Result, Vector};

#[derive(Parser)]
#[command(name = "ippgd", version, about = "Inexact projected preconditioned gradient descent")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one solver configuration and write its iteration trace.
    Solve {
        config: PathBuf,
        /// Trace CSV; overrides `output.trace`. Without either the trace goes to stdout.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run the method × grid table on the flux problem.
    Bench {
        /// Optional TOML overriding the default table.
        config: Option<PathBuf>,
        /// Report CSV; overrides `output.report`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Leave out the timing column so reruns are byte-identical.
        #[arg(long)]
        no_time: bool,
    },
    /// Run the built-in numerical checks.
    Check {
        #[arg(long, default_value = "all")]
        scope: Scope,
    },
    /// Integrate the continuous flow and fit its Lyapunov decay rate.
    Flow {
        config: PathBuf,
        /// Trajectory CSV; overrides `output.trajectory`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn solve(path: &Path, trace: Option<PathBuf>) -> Result<ExitCode> {
    let file = config::load_solve(path)?;
    let problem = file.problem.build()?;
    let cfg = file.solver.build(&problem)?;
    let spec = problem.spec();
    let out = run(spec, &Vector::zeros(spec.dim()), &cfg)?;
    let trace_path = trace.or(file.output.trace);
    out.trace.write_csv(sink(trace_path.as_deref())?, file.output.include_wall)?;
    let last = out.trace.records.last();
    let summary = format!(
        "method={} iterations={} final_grad_norm={:.6e} constraint_res={:.6e} status={:?}",
        cfg.method.name(),
        out.trace.iterations(),
        last.map_or(f64::NAN, |r| r.grad_norm_m),
        last.map_or(f64::NAN, |r| r.constraint_res),
        out.status,
    );
    if trace_path.is_some() {
        println!("{summary}");
    } else {
        eprintln!("{summary}");
    }
    Ok(match out.status {
        RunStatus::Converged(_) => ExitCode::SUCCESS,
        RunStatus::MaxIters => ExitCode::from(2),
        RunStatus::Diverged(m) | RunStatus::Failed(m) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    })
}

fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var("IPPGD_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Parse(format!("IPPGD_THREADS must be a positive integer, got '{v}'"))),
        },
        Err(_) => Ok(None),
    }
}

fn bench(path: Option<PathBuf>, out: Option<PathBuf>, no_time: bool) -> Result<ExitCode> {
    let file = match &path {
        Some(p) => config::load_bench(p)?,
        None => config::BenchFile {
            bench: Default::default(),
            output: Default::default(),
        },
    };
    let cfg = file.bench.build(threads_from_env()?)?;
    let rows = bench_table(&cfg)?;
    let report = out.or(file.output.report);
    write_bench_csv(&rows, sink(report.as_deref())?, !no_time)?;
    let failed: Vec<_> = rows.iter().filter(|r| r.status.starts_with("FAILED")).collect();
    for r in &failed {
        eprintln!("{} {}x{} {}: {}", r.case, r.n, r.n, r.method.name(), r.status);
    }
    Ok(if failed.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn check(scope: Scope) -> Result<ExitCode> {
    let items = run_checks(scope)?;
    for it in &items {
        println!("{it}");
    }
    match items.iter().find(|i| !i.passed()) {
        Some(bad) => {
            eprintln!("check failed: {}", bad.id);
            Ok(ExitCode::from(3))
        }
        None => Ok(ExitCode::SUCCESS),
    }
}

/// `u⋆`, the inexact fixed point and `M⋆` for the Lyapunov columns.
fn flow_anchors(
    problem: &BuiltProblem,
    policy: MetricPolicy,
    schur: ippgd_core::problems::SchurLevel,
    alpha: f64,
) -> Result<(LyapunovAnchors, Option<(f64, f64)>)> {
    let spec = problem.spec();
    let u_star = match problem {
        BuiltProblem::Quadratic(q) => kkt_oracle(q)?,
        BuiltProblem::Pde(p) => {
            let c = p.constants();
            let mut cfg = SolverConfig::preset(Method::Pgd, 1.0 / c.l_sharp);
            cfg.grad_tol = 1e-10;
            cfg.max_iters = 20_000;
            run(spec, &Vector::zeros(spec.dim()), &cfg)?.u
        }
    };
    let m_star = match policy {
        MetricPolicy::Fixed => spec.reference_metric(),
        _ => spec.metric(&u_star)?,
    };
    let (star, _) = metric_set(spec, &m_star, schur, "star")?;
    let tol = 1e-13 * (1.0 + u_star.norm());
    let fp = fixed_point_solve_from(spec, &star, alpha, tol, &u_star)?;
    let mu_l = spec.mu_l_in(&m_star);
    Ok((LyapunovAnchors::new(u_star, fp.u_phi_star, star)?, mu_l))
}

fn write_flow_csv<W: Write>(traj: &FlowTrajectory, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::Io(io::Error::other(e.to_string()));
    wr.write_record(["t", "E1", "E2", "E", "constraint_res"]).map_err(err)?;
    for s in &traj.samples {
        let (e1, e2, e) = s.state.map_or((f64::NAN, f64::NAN, f64::NAN), |st| (st.e1, st.e2, st.e_total));
        wr.write_record([
            format!("{:.6}", s.t),
            format!("{e1:.12e}"),
            format!("{e2:.12e}"),
            format!("{e:.12e}"),
            format!("{:.12e}", s.constraint_res),
        ])
        .map_err(err)?;
    }
    wr.flush()?;
    Ok(())
}

fn flow(path: &Path, out: Option<PathBuf>) -> Result<ExitCode> {
    let file = config::load_flow(path)?;
    let problem = file.problem.build()?;
    let (mut cfg, start) = file.flow.build(&problem)?;
    let spec = problem.spec();
    // A step outside the contraction range has no fixed point; the flow still
    // runs, without Lyapunov columns.
    let (anchors, mu_l) = match flow_anchors(&problem, cfg.metric_policy, cfg.schur, cfg.alpha) {
        Ok((a, m)) => (Some(a), m),
        Err(e) => {
            eprintln!("warning: no Lyapunov anchors: {e}");
            (None, None)
        }
    };
    let tc = mu_l.map(|(mu, l)| TheoryConstants::fixed_metric(mu, l, 1.0, cfg.alpha, 1.0, 0.0));
    if cfg.lambda.is_nan() {
        cfg.lambda = tc.map_or(1.0, |t| t.continuous_lambda_max());
    }
    let u0 = match start {
        FlowStart::Zero => Vector::zeros(spec.dim()),
        FlowStart::Ones => Vector::from_element(spec.dim(), 1.0),
    };
    let (traj, blow_up) = integrate_flow_partial(spec, &u0, &cfg, anchors.as_ref())?;
    let dest = out.or(file.output.trajectory);
    write_flow_csv(&traj, sink(dest.as_deref())?)?;
    if let Some(e) = blow_up {
        let t = traj.samples.last().map_or(0.0, |s| s.t);
        eprintln!("error: {e}");
        eprintln!("last finite state (t = {t}):");
        let stderr = io::stderr();
        let mut w = stderr.lock();
        for v in traj.u_final.iter() {
            writeln!(w, "{v:.17e}")?;
        }
        return Ok(ExitCode::from(1));
    }
    let fitted = traj.fitted_rate(1e-10);
    let omega = tc.map(|t| t.omega_continuous());
    let fmt = |v: Option<f64>| v.map_or("unavailable".to_string(), |x| format!("{x:.6e}"));
    let msg = format!("fitted_rate={} omega={}", fmt(fitted), fmt(omega));
    if dest.is_some() {
        println!("{msg}");
    } else {
        eprintln!("{msg}");
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Solve { config, trace } => solve(&config, trace),
        Command::Bench { config, out, no_time } => bench(config, out, no_time),
        Command::Check { scope } => check(scope),
        Command::Flow { config, out } => flow(&config, out),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
