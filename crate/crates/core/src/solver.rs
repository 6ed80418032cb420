//! Projected preconditioned gradient iterations
//!
//! ```text
//! u_{k+1} = (1 − τ)u_k + τ·P̃_{𝓜_k}(u_k − αM_k⁻¹∇f(u_k)),
//! ```
//!
//! with exact or inexact projections, fixed or variable metrics, and the
//! step-size rules of the discrete Lyapunov analysis.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use crate::dynamics::{lyapunov_eval, theta_between, LyapunovAnchors};
use crate::error::{check_dim, Error, Result};
use crate::multigrid::MgSchedule;
use crate::operator::{norm_m, SpdRef, Vector};
use crate::problems::{metric_set, ProblemSpec, SchurLevel};
use crate::projection::{estimate_delta, InexactProjector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Pgd,
    Ippgd,
    Ippgdv,
    IppgdvTau,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Pgd, Method::Ippgd, Method::Ippgdv, Method::IppgdvTau];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Pgd => "PGD",
            Method::Ippgd => "IPPGD",
            Method::Ippgdv => "IPPGDv",
            Method::IppgdvTau => "IPPGDv-tau",
        }
    }

    pub fn variable_metric(&self) -> bool {
        matches!(self, Method::Ippgdv | Method::IppgdvTau)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "pgd" => Ok(Method::Pgd),
            "ippgd" => Ok(Method::Ippgd),
            "ippgdv" => Ok(Method::Ippgdv),
            "ippgdv-tau" | "ippgdv-τ" => Ok(Method::IppgdvTau),
            _ => Err(Error::Parse(format!("unknown method '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricPolicy {
    /// `M_k = M(1)`.
    Fixed,
    EveryIteration,
    /// Rebuild `M(u_k)` when `k` is a multiple of `m`.
    EveryM(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SchurMode {
    /// The problem's exactness level.
    Exactness,
    Schedule(MgSchedule),
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub method: Method,
    pub alpha: f64,
    pub tau: f64,
    pub metric_policy: MetricPolicy,
    pub schur: SchurMode,
    pub max_iters: usize,
    /// Stop when the projected preconditioned gradient falls below this
    /// fraction of its initial value.
    pub grad_tol: f64,
    /// Stop when `‖u_{k+1} − u_k‖_{M_k} ≤ step_tol·‖u_{k+1}‖_{M_k}` once the
    /// inner-cycle schedule is saturated.
    pub step_tol: f64,
    /// Record `δ_k` estimates in the trace.
    pub estimate_delta: bool,
    /// Record `Θ_k` against the anchor metric in the trace.
    pub estimate_theta: bool,
    /// Keep `(u_k, 𝓜_k)` every this many iterations for auditing; 0 keeps none.
    pub snapshot_every: usize,
}

impl SolverConfig {
    pub fn preset(method: Method, alpha: f64) -> Self {
        let (policy, schur, tau) = match method {
            Method::Pgd => (MetricPolicy::Fixed, SchurMode::Exactness, 1.0),
            Method::Ippgd => (MetricPolicy::Fixed, SchurMode::Schedule(MgSchedule::default()), 1.0),
            Method::Ippgdv => (
                MetricPolicy::EveryIteration,
                SchurMode::Schedule(MgSchedule::default()),
                1.0,
            ),
            Method::IppgdvTau => (
                MetricPolicy::EveryIteration,
                SchurMode::Schedule(MgSchedule::default()),
                0.5,
            ),
        };
        Self {
            method,
            alpha,
            tau,
            metric_policy: policy,
            schur,
            max_iters: 1000,
            grad_tol: 1e-6,
            step_tol: 1e-12,
            estimate_delta: false,
            estimate_theta: false,
            snapshot_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidArgument("alpha must be positive".into()));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::InvalidArgument("tau must be in (0,1]".into()));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::InvalidArgument("grad_tol must be positive".into()));
        }
        if !(self.step_tol > 0.0) {
            return Err(Error::InvalidArgument("step_tol must be positive".into()));
        }
        if let MetricPolicy::EveryM(0) = self.metric_policy {
            return Err(Error::InvalidArgument("metric rebuild period must be positive".into()));
        }
        if let SchurMode::Schedule(s) = &self.schur {
            s.validate()?;
        }
        Ok(())
    }

    fn level_at(&self, problem: &dyn ProblemSpec, k: usize, progress: f64) -> SchurLevel {
        match &self.schur {
            SchurMode::Exactness => problem.exactness_level(),
            SchurMode::Schedule(s) => SchurLevel::Cycles(s.cycles_at(k, self.max_iters, progress)),
        }
    }

    fn saturated(&self, level: SchurLevel) -> bool {
        match (&self.schur, level) {
            (SchurMode::Schedule(s), SchurLevel::Cycles(n)) => s.saturated(n),
            _ => true,
        }
    }
}

/// `u + τ(y − u)`, and exactly `y` when `τ = 1`.
pub fn relax(u: &Vector, y: &Vector, tau: f64) -> Vector {
    if tau == 1.0 {
        y.clone()
    } else {
        u + (y - u) * tau
    }
}

/// Returns `(M⁻¹∇f(u), P̃(u − αM⁻¹∇f(u)))`.
pub fn step_direction(
    problem: &dyn ProblemSpec,
    u: &Vector,
    p: &InexactProjector,
    alpha: f64,
) -> Result<(Vector, Vector)> {
    let g = problem.eval_grad(u)?;
    let d = p.metric().m.solve(&g)?;
    let y = p.apply(&(u - &d * alpha))?;
    Ok((d, y))
}

/// One relaxed step.
pub fn step(problem: &dyn ProblemSpec, u: &Vector, p: &InexactProjector, alpha: f64, tau: f64) -> Result<Vector> {
    check_dim("step", problem.dim(), u.len())?;
    let (_, y) = step_direction(problem, u, p, alpha)?;
    let next = relax(u, &y, tau);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("iterate".into()));
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    pub f: f64,
    /// `‖P̃_k M_k⁻¹∇f(u_k)‖_{M_k}`.
    pub grad_norm_m: f64,
    pub constraint_res: f64,
    pub e1: f64,
    pub e2: f64,
    pub e: f64,
    /// `D_f(u_k, u⋆)`.
    pub e1_true: f64,
    pub delta_est: f64,
    /// Inner cycles per projection at this iteration, 0 for a direct solve.
    pub n_mg: usize,
    pub theta_est: f64,
    pub wall_ms: f64,
}

impl IterationRecord {
    /// Every field except wall time, as raw bits.
    pub fn fingerprint(&self) -> Vec<u64> {
        vec![
            self.k as u64,
            self.f.to_bits(),
            self.grad_norm_m.to_bits(),
            self.constraint_res.to_bits(),
            self.e1.to_bits(),
            self.e2.to_bits(),
            self.e.to_bits(),
            self.e1_true.to_bits(),
            self.delta_est.to_bits(),
            self.n_mg as u64,
            self.theta_est.to_bits(),
        ]
    }
}

pub const TRACE_COLUMNS: [&str; 11] = [
    "k",
    "f",
    "grad_norm_M",
    "constraint_res",
    "E1",
    "E2",
    "E",
    "delta_est",
    "n_mg",
    "theta_est",
    "wall_ms",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
}

impl IterationTrace {
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    /// Cycles spent by the steps taken (the last record takes no step).
    pub fn total_cycles(&self) -> usize {
        let n = self.iterations();
        self.records.iter().take(n).map(|r| r.n_mg).sum()
    }

    pub fn average_cycles(&self) -> f64 {
        match self.iterations() {
            0 => 0.0,
            n => self.total_cycles() as f64 / n as f64,
        }
    }

    /// Traces agree bitwise in everything but wall time.
    pub fn same_values(&self, other: &IterationTrace) -> bool {
        self.records.len() == other.records.len()
            && self
                .records
                .iter()
                .zip(&other.records)
                .all(|(a, b)| a.fingerprint() == b.fingerprint())
    }

    pub fn write_csv<W: Write>(&self, w: W, include_wall: bool) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let cols = if include_wall { &TRACE_COLUMNS[..] } else { &TRACE_COLUMNS[..10] };
        wr.write_record(cols).map_err(csv_err)?;
        for r in &self.records {
            let mut row = vec![
                r.k.to_string(),
                fmt_f(r.f),
                fmt_f(r.grad_norm_m),
                fmt_f(r.constraint_res),
                fmt_f(r.e1),
                fmt_f(r.e2),
                fmt_f(r.e),
                fmt_f(r.delta_est),
                r.n_mg.to_string(),
                fmt_f(r.theta_est),
            ];
            if include_wall {
                row.push(format!("{:.3}", r.wall_ms));
            }
            wr.write_record(&row).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn fmt_f(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.17e}")
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub enum StopReason {
    GradTol,
    StepTol,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Converged(StopReason),
    MaxIters,
    Diverged(String),
    Failed(String),
}

impl RunStatus {
    pub fn converged(&self) -> bool {
        matches!(self, RunStatus::Converged(_))
    }
}

pub struct RunOutcome {
    pub u: Vector,
    pub trace: IterationTrace,
    pub status: RunStatus,
    pub snapshots: Vec<(Vector, InexactProjector)>,
}

/// Lyapunov anchors and weight used to fill the `E` columns.
pub struct Monitor<'a> {
    pub anchors: &'a LyapunovAnchors,
    pub lambda: f64,
}

pub fn run(problem: &dyn ProblemSpec, u0: &Vector, cfg: &SolverConfig) -> Result<RunOutcome> {
    run_monitored(problem, u0, cfg, None)
}

/// Divergence: `f` increased this many times in a row.
const DIVERGENCE_STREAK: usize = 10;

pub fn run_monitored(
    problem: &dyn ProblemSpec,
    u0: &Vector,
    cfg: &SolverConfig,
    monitor: Option<&Monitor<'_>>,
) -> Result<RunOutcome> {
    cfg.validate()?;
    check_dim("initial iterate", problem.dim(), u0.len())?;
    if u0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial iterate".into()));
    }
    let start = Instant::now();
    let b = problem.constraint();
    let rhs = problem.constraint_rhs();
    let mut u = u0.clone();
    let mut trace = IterationTrace::default();
    let mut snapshots = Vec::new();
    let mut metric: Option<SpdRef> = None;
    let mut proj: Option<(InexactProjector, SchurLevel)> = None;
    let mut progress = 1.0;
    let mut g0 = None;
    let mut step0 = None;
    let mut f_prev = f64::INFINITY;
    let mut streak = 0;
    let mut steps = [0.0, 0.0];
    let mut pending_stop: Option<StopReason> = None;

    let status = 'outer: {
        for k in 0..=cfg.max_iters {
            let level = cfg.level_at(problem, k, progress);
            let rebuild = match cfg.metric_policy {
                MetricPolicy::Fixed => metric.is_none(),
                MetricPolicy::EveryIteration => true,
                MetricPolicy::EveryM(m) => k % m == 0 || metric.is_none(),
            };
            if rebuild {
                metric = Some(match cfg.metric_policy {
                    MetricPolicy::Fixed => problem.reference_metric(),
                    _ => match problem.metric(&u) {
                        Ok(m) => m,
                        Err(e) => break 'outer RunStatus::Failed(e.to_string()),
                    },
                });
            }
            let m = metric.clone().unwrap();
            if rebuild || proj.as_ref().map(|(_, l)| *l) != Some(level) {
                proj = Some((metric_set(problem, &m, level, cfg.method.name())?.0, level));
            }
            let p = &proj.as_ref().unwrap().0;
            let cycles = match level {
                SchurLevel::Exact => 0,
                SchurLevel::Cycles(n) => n,
            };

            let eval = (|| -> Result<(f64, Vector, Vector, f64)> {
                let f = problem.eval_f(&u)?;
                let g = problem.eval_grad(&u)?;
                let d = m.solve(&g)?;
                let pd = p.apply(&d)?;
                Ok((f, d, pd.clone(), norm_m(m.as_ref(), &pd)))
            })();
            let (f, d, _, gnorm) = match eval {
                Ok(v) => v,
                Err(e) => break 'outer RunStatus::Failed(e.to_string()),
            };
            let mut rec = IterationRecord {
                k,
                f,
                grad_norm_m: gnorm,
                constraint_res: (b.apply(&u) - &rhs).norm(),
                e1: f64::NAN,
                e2: f64::NAN,
                e: f64::NAN,
                e1_true: f64::NAN,
                delta_est: f64::NAN,
                n_mg: cycles,
                theta_est: f64::NAN,
                wall_ms: 0.0,
            };
            if let Some(mon) = monitor {
                let s = lyapunov_eval(problem, &u, mon.anchors, mon.lambda, cfg.alpha)?;
                rec.e1 = s.e1;
                rec.e2 = s.e2;
                rec.e = s.e_total;
                rec.e1_true = s.e1_true;
                if cfg.estimate_theta {
                    rec.theta_est = theta_between(mon.anchors.m_star(), &m)?;
                }
            }
            if cfg.estimate_delta {
                rec.delta_est = estimate_delta(p, 1e-8).map(|e| e.delta).unwrap_or(f64::NAN);
            }
            if cfg.snapshot_every > 0 && k % cfg.snapshot_every == 0 {
                snapshots.push((u.clone(), p.clone()));
            }
            rec.wall_ms = start.elapsed().as_secs_f64() * 1e3;
            trace.records.push(rec);

            if !f.is_finite() || !gnorm.is_finite() {
                break 'outer RunStatus::Failed(format!("non-finite state at iteration {k}"));
            }
            if let Some(r) = pending_stop.take() {
                break 'outer RunStatus::Converged(r);
            }
            let g0v = *g0.get_or_insert(gnorm);
            if gnorm <= cfg.grad_tol * g0v {
                break 'outer RunStatus::Converged(StopReason::GradTol);
            }
            if k == cfg.max_iters {
                break 'outer RunStatus::MaxIters;
            }
            // Infeasible iterates may raise f while they contract; only count
            // increases that come with non-shrinking steps.
            let growing = steps[1] >= steps[0];
            if f > f_prev + 1e-12 * f_prev.abs().max(1.0) && growing {
                streak += 1;
                if streak >= DIVERGENCE_STREAK {
                    break 'outer RunStatus::Diverged(format!(
                        "f increased {DIVERGENCE_STREAK} consecutive iterations up to k = {k}"
                    ));
                }
            } else {
                streak = 0;
            }
            f_prev = f;

            let y = match p.apply(&(&u - &d * cfg.alpha)) {
                Ok(y) => y,
                Err(e) => break 'outer RunStatus::Failed(e.to_string()),
            };
            let next = relax(&u, &y, cfg.tau);
            if next.iter().any(|v| !v.is_finite()) {
                break 'outer RunStatus::Failed(format!("non-finite iterate after step {k}"));
            }
            let dstep = norm_m(m.as_ref(), &(&next - &u));
            steps = [steps[1], dstep];
            let s0 = *step0.get_or_insert(dstep);
            if s0 > 0.0 {
                progress = progress.min(dstep / s0);
            }
            if cfg.saturated(level) && dstep <= cfg.step_tol * norm_m(m.as_ref(), &next) {
                pending_stop = Some(StopReason::StepTol);
            }
            u = next;
        }
        RunStatus::MaxIters
    };
    Ok(RunOutcome {
        u,
        trace,
        status,
        snapshots,
    })
}

/// Constants of the discrete Lyapunov analysis.
///
/// `mu`, `l`, `kappa` are in the current metric, the `_star` variants in
/// `M⋆`. `grad_star` is `‖∇f(u⋆)‖_{M⋆⁻¹}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryConstants {
    pub mu: f64,
    pub l: f64,
    pub kappa: f64,
    pub mu_star: f64,
    pub kappa_star: f64,
    pub theta_m: f64,
    pub k_s: f64,
    pub k_theta: f64,
    pub grad_star: f64,
    pub alpha: f64,
    pub tau: f64,
    pub delta: f64,
    pub delta_star: f64,
    pub lambda: f64,
}

/// `ε` in the relaxed contraction constant.
const K3_EPS: f64 = 0.125;

impl TheoryConstants {
    /// Fixed-metric constants: `M_k = M⋆`, so `θ_m = 0` and `δ⋆ = δ`.
    pub fn fixed_metric(mu: f64, l: f64, grad_star: f64, alpha: f64, tau: f64, delta: f64) -> Self {
        let mut tc = Self {
            mu,
            l,
            kappa: l / mu,
            mu_star: mu,
            kappa_star: l / mu,
            theta_m: 0.0,
            k_s: 0.0,
            k_theta: 1.0,
            grad_star,
            alpha,
            tau,
            delta,
            delta_star: delta,
            lambda: 0.0,
        };
        tc.lambda = tc.default_lambda();
        tc
    }

    pub fn k1(&self) -> f64 {
        2.0 * (2.0 * self.kappa.powi(2) + self.alpha.powi(2) * self.l.powi(2))
            + 1.5 * self.l * self.tau * self.alpha
    }

    pub fn k2(&self) -> f64 {
        (1.5 * self.l * self.tau * self.alpha + 2.0 * self.kappa.powi(2))
            * (1.0 + self.theta_m)
            * self.grad_star.powi(2)
    }

    pub fn k3(&self) -> f64 {
        (1.5 * self.tau * K3_EPS + 4.0) * (1.0 + self.theta_m).powi(2) * self.l
    }

    pub fn k4(&self) -> f64 {
        1.5 * (1.0 + self.theta_m) * self.grad_star.powi(2)
    }

    pub fn k5(&self) -> f64 {
        1.5 * (1.0 + 1.5 * (1.0 + self.theta_m).powi(2) * self.delta.powi(2))
    }

    /// `p = (9κ⋆ + 4)δ⋆ + (1 + 2K_S)δ`.
    pub fn p(&self) -> f64 {
        (9.0 * self.kappa_star + 4.0) * self.delta_star + (1.0 + 2.0 * self.k_s) * self.delta
    }

    /// `C⋆ = μ⋆^{1/2}‖∇f(u⋆)‖_{M⋆⁻¹}`.
    pub fn c_star(&self) -> f64 {
        self.mu_star.sqrt() * self.grad_star
    }

    /// `min(1/(16K₁), 10⁻²)`.
    pub fn default_lambda(&self) -> f64 {
        (1.0 / (16.0 * self.k1())).min(1e-2)
    }

    pub fn omega_k(&self) -> f64 {
        (self.alpha * self.mu / (4.0 * self.kappa)).min(1.0 / 32.0)
    }

    /// Rate of the continuous flow, `min(μκ⁻¹α/8, 3/2)`.
    pub fn omega_continuous(&self) -> f64 {
        (self.mu * self.alpha / (8.0 * self.kappa)).min(1.5)
    }

    /// Continuous-time `λ` cap `1/(4K₁)` with `K₁ = 2(2κ² + α²L²)`.
    pub fn continuous_lambda_max(&self) -> f64 {
        1.0 / (8.0 * (2.0 * self.kappa.powi(2) + self.alpha.powi(2) * self.l.powi(2)))
    }

    /// Bound on `(λα)⁻¹E⁽²⁾₀` for a feasible start, `3αμ⋆/(8(9κ⋆+4)²κ⋆K_θ²)`.
    pub fn feasible_start_bound(&self) -> f64 {
        3.0 * self.alpha * self.mu_star
            / (8.0 * (9.0 * self.kappa_star + 4.0).powi(2) * self.kappa_star * self.k_theta.powi(2))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryBounds {
    pub tau_max: f64,
    pub delta_max: f64,
    pub delta_star_max: f64,
    pub p_max: f64,
    pub lambda_max: f64,
}

impl TheoryBounds {
    /// Whether `tc` meets every bound.
    pub fn admits(&self, tc: &TheoryConstants) -> bool {
        tc.tau <= self.tau_max
            && tc.delta <= self.delta_max
            && tc.delta_star <= self.delta_star_max
            && tc.p() <= self.p_max
            && tc.lambda <= self.lambda_max
    }
}

/// Admissible `τ`, `δ`, `δ⋆`, `p` and `λ` for step `alpha`.
pub fn theory_bounds(tc: &TheoryConstants, alpha: f64) -> TheoryBounds {
    let TheoryConstants {
        kappa,
        l,
        theta_m,
        delta,
        k_theta,
        lambda,
        kappa_star,
        ..
    } = *tc;
    let tau_max = (1.0 / (36.0 * kappa * kappa * l * alpha))
        .min(49.0 / (48.0 * (1.0 + 1.5 * (1.0 + theta_m) * delta * delta)));
    let sl = lambda.sqrt();
    let delta_max = (sl / (21.0 * (1.0 + theta_m) * kappa)).min(1.0 / (8.0 * theta_m + 9.0));
    let root = k_theta * ((1.0 + theta_m) * kappa).sqrt() * tc.c_star();
    let delta_star_max = (sl / (12.0 * 2f64.sqrt() * root)).min(1.0 / (4.0 * kappa_star));
    let p_max = sl / (9.0 * root);
    let with_alpha = TheoryConstants { alpha, ..*tc };
    TheoryBounds {
        tau_max,
        delta_max,
        delta_star_max,
        p_max,
        lambda_max: 1.0 / (16.0 * with_alpha.k1()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relax_is_exact_at_one() {
        let u = Vector::from_vec(vec![0.1, 0.2]);
        let y = Vector::from_vec(vec![1.0 / 3.0, 7.0]);
        assert_eq!(relax(&u, &y, 1.0), y);
        assert_eq!(relax(&u, &y, 0.5), (&u + &y) * 0.5);
    }

    #[test]
    fn method_names_roundtrip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
    }
}
