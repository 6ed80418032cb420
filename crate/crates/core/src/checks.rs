//! Property suites behind `ippgd check`, run on seeded instances.

use std::fmt;
use std::str::FromStr;

use crate::dynamics::{flow_check, integrate_flow, slp_check_discrete, FlowConfig, Integrator, LyapunovAnchors};
use crate::error::{Error, Result};
use crate::multigrid::MgSchedule;
use crate::operator::{check_spd, check_symmetry, seeded_vector, Vector};
use crate::pde::{NuCoefficient, PdeProblem};
use crate::problems::{
    dual_norm, fixed_point_solve, gen_quadratic, gradient_fd_check, kkt_oracle, metric_set,
    u_diff_bound_check, ProblemSpec, QuadraticInstance, SchurLevel,
};
use crate::projection::{
    dproj_suite, estimate_delta, gradient_identity_check, lemma_pi_suite, metric_equivalence,
    PropertyReport,
};
use crate::solver::{
    run_monitored, theory_bounds, MetricPolicy, Method, Monitor, SchurMode, SolverConfig, TheoryConstants,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Projection,
    FixedPoint,
    Lyapunov,
    Pde,
    All,
}

impl FromStr for Scope {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "projection" => Ok(Scope::Projection),
            "fixed-point" => Ok(Scope::FixedPoint),
            "lyapunov" => Ok(Scope::Lyapunov),
            "pde" => Ok(Scope::Pde),
            "all" => Ok(Scope::All),
            _ => Err(Error::Parse(format!(
                "unknown scope '{s}' (projection, fixed-point, lyapunov, pde, all)"
            ))),
        }
    }
}

/// Worst observed value of one inequality against its threshold.
#[derive(Debug, Clone)]
pub struct CheckItem {
    pub id: String,
    pub value: f64,
    pub threshold: f64,
}

impl CheckItem {
    pub fn passed(&self) -> bool {
        self.value <= self.threshold
    }
}

impl fmt::Display for CheckItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<28} {:>11.3e}  (threshold {:.1e})  {}",
            self.id,
            self.value,
            self.threshold,
            if self.passed() { "ok" } else { "FAIL" }
        )
    }
}

fn item(id: impl Into<String>, value: f64, threshold: f64) -> CheckItem {
    CheckItem {
        id: id.into(),
        value: if value.is_nan() { f64::INFINITY } else { value },
        threshold,
    }
}

fn seeded_instance(seed: u64, dim: usize, rows: usize, kappa: f64, cond: f64, delta: f64) -> Result<QuadraticInstance> {
    Ok(gen_quadratic(dim, rows, kappa, seed)?
        .with_random_metric(cond)
        .with_schur_delta(delta))
}

/// Projection inequalities and identities on 100 instances of dimension ≤ 50.
pub fn projection_checks() -> Result<Vec<CheckItem>> {
    let mut rep = PropertyReport::default();
    for i in 0..100u64 {
        let dim = 4 + (i as usize * 11) % 47;
        let rows = 1 + (i as usize * 5) % (dim / 2);
        let delta = [0.0, 0.1, 0.4, 0.8][i as usize % 4];
        let q = seeded_instance(7000 + i, dim, rows, 2.0 + (i % 6) as f64 * 4.0, 1.0 + (i % 4) as f64, delta)?;
        let m = q.reference_metric();
        let (p, _) = metric_set(&q, &m, SchurLevel::Cycles(1), "check")?;
        let exact = q.exact_projector(&m)?;
        let eps = estimate_delta(&p, 1e-12)?.delta;
        rep.merge(&lemma_pi_suite(&p, &exact, eps, 4, 3 * i)?);
        rep.merge(&gradient_identity_check(&q, &p, 4, 5 * i)?);
        let q2 = QuadraticInstance {
            seed: q.seed ^ 0xabc,
            ..q.clone()
        }
        .with_random_metric(2.0 + (i % 3) as f64);
        let m2 = q2.reference_metric();
        let (p2, _) = metric_set(&q2, &m2, SchurLevel::Cycles(1), "check2")?;
        let eps2 = estimate_delta(&p2, 1e-12)?.delta;
        let c = metric_equivalence(m.as_ref(), m2.as_ref(), 1e-13)?;
        rep.merge(&dproj_suite(&p, eps, &p2, eps2, c, 4, 7 * i)?);
    }
    Ok(rep
        .entries
        .iter()
        .map(|e| item(e.name, e.max_violation, 1e-8))
        .collect())
}

/// Contraction of the fixed-point map and the equilibrium error bounds.
pub fn fixed_point_checks() -> Result<Vec<CheckItem>> {
    let mut ratio_excess = f64::NEG_INFINITY;
    for (j, kappa) in [2.0, 10.0, 100.0].iter().enumerate() {
        for i in 0..4u64 {
            let q = seeded_instance(8000 + 10 * j as u64 + i, 10 + i as usize, 3, *kappa, 1.5, 0.25)?;
            let m = q.reference_metric();
            let (mu, l) = q.mu_l_in(&m).ok_or_else(|| Error::InvalidArgument("μ/L".into()))?;
            let (p, _) = metric_set(&q, &m, SchurLevel::Cycles(1), "check")?;
            let alpha = 1.0 / l;
            let fp = fixed_point_solve(&q, &p, alpha, 1e-12)?;
            let bound = (1.0 - alpha * l).abs().max((1.0 - alpha * mu).abs());
            ratio_excess = ratio_excess.max(fp.contraction_ratio_observed - bound);
        }
    }
    let mut worst = [f64::NEG_INFINITY; 4];
    for (a, kappa) in [2.0, 5.0, 10.0].iter().enumerate() {
        for (b, frac) in [0.2, 0.6, 1.0].iter().enumerate() {
            for (c, af) in [1.0, 0.5, 0.2].iter().enumerate() {
                let q = seeded_instance(
                    8100 + 9 * a as u64 + 3 * b as u64 + c as u64,
                    14,
                    4,
                    *kappa,
                    1.0,
                    frac / (4.0 * kappa),
                )?;
                let m = q.reference_metric();
                let (_, l) = q.mu_l_in(&m).ok_or_else(|| Error::InvalidArgument("μ/L".into()))?;
                let (p, _) = metric_set(&q, &m, SchurLevel::Cycles(1), "check")?;
                let rep = u_diff_bound_check(&q, &p, af / l)?;
                for (i, w) in worst.iter_mut().enumerate() {
                    let (lhs, rhs) = rep.sides[i];
                    *w = w.max((lhs - rhs) / rhs.abs().max(1e-300));
                }
            }
        }
    }
    let mut out = vec![item("fixed_point_contraction", ratio_excess, 0.05)];
    for (i, w) in worst.iter().enumerate() {
        out.push(item(format!("fixed_point_offset_{i}"), *w, 1e-10));
    }
    Ok(out)
}

/// Discrete and continuous Lyapunov decrease on quadratics.
pub fn lyapunov_checks() -> Result<Vec<CheckItem>> {
    let mut slp = 0usize;
    let mut product = 0usize;
    let mut start_excess = f64::NEG_INFINITY;
    for (seed, kappa) in [(9000u64, 2.0), (9001, 5.0)] {
        let q = seeded_instance(seed, 12, 4, kappa, 1.0, 0.0)?.normalized()?;
        let m = q.reference_metric();
        let (mu, l) = q.mu_l_in(&m).ok_or_else(|| Error::InvalidArgument("μ/L".into()))?;
        let alpha = 1.0 / l;
        let u_star = kkt_oracle(&q)?;
        let gs = dual_norm(m.as_ref(), &q.eval_grad(&u_star)?)?;
        let probe = TheoryConstants::fixed_metric(mu, l, gs, alpha, 1.0, 0.0);
        let b = theory_bounds(&probe, alpha);
        let delta = 0.5 * b.delta_max.min(b.delta_star_max).min(b.p_max / (9.0 * probe.kappa + 5.0));
        let q = q.with_schur_delta(delta);
        let (p, _) = metric_set(&q, &m, SchurLevel::Cycles(1), "check")?;
        let measured = estimate_delta(&p, 1e-12)?.delta;
        let tc = TheoryConstants::fixed_metric(mu, l, gs, alpha, b.tau_max, measured);
        let anchors = LyapunovAnchors::for_quadratic(&q, p, alpha)?;
        let mut cfg = SolverConfig::preset(Method::IppgdvTau, alpha);
        cfg.tau = tc.tau;
        cfg.metric_policy = MetricPolicy::Fixed;
        cfg.schur = SchurMode::Schedule(MgSchedule::fixed(1));
        cfg.max_iters = 500;
        cfg.grad_tol = 1e-300;
        cfg.step_tol = 1e-300;
        let mon = Monitor {
            anchors: &anchors,
            lambda: tc.lambda,
        };
        let out = run_monitored(&q, &Vector::zeros(q.dim()), &cfg, Some(&mon))?;
        let rep = slp_check_discrete(&out.trace, &tc, true)?;
        slp += rep.violations.len();
        product += rep.product_violations.len();
        if let Some((v, bound)) = rep.feasible_start {
            start_excess = start_excess.max(v / bound - 1.0);
        }
    }
    let mut bound_viol = 0usize;
    let mut rate_deficit = f64::NEG_INFINITY;
    {
        let q = seeded_instance(9100, 10, 3, 3.0, 1.0, 0.0)?.normalized()?;
        let m = q.reference_metric();
        let (mu, l) = q.mu_l_in(&m).ok_or_else(|| Error::InvalidArgument("μ/L".into()))?;
        let alpha = 1.0 / l;
        let tc = TheoryConstants::fixed_metric(mu, l, 1.0, alpha, 1.0, 0.0);
        let (p, _) = metric_set(&q, &m, SchurLevel::Exact, "check")?;
        let anchors = LyapunovAnchors::for_quadratic(&q, p, alpha)?;
        let cfg = FlowConfig {
            integrator: Integrator::Rk4,
            dt: 1e-3,
            t_end: 20.0,
            alpha,
            metric_policy: MetricPolicy::Fixed,
            schur: SchurLevel::Exact,
            lambda: tc.continuous_lambda_max(),
        };
        let traj = integrate_flow(&q, &Vector::from_element(q.dim(), 1.0), &cfg, Some(&anchors))?;
        let omega = tc.omega_continuous();
        let chk = flow_check(&traj, omega);
        bound_viol += chk.bound_violations;
        rate_deficit = rate_deficit.max(0.9 * omega - chk.fitted_rate.unwrap_or(0.0));
    }
    Ok(vec![
        item("discrete_lyapunov_decrease", slp as f64, 0.0),
        item("discrete_product_bound", product as f64, 0.0),
        item("feasible_start_bound", start_excess, 1e-12),
        item("flow_exponential_bound", bound_viol as f64, 0.0),
        item("flow_rate_deficit", rate_deficit, 0.0),
    ])
}

/// Coefficient inversion, source, gradient and multigrid sanity on 16².
pub fn pde_checks() -> Result<Vec<CheckItem>> {
    let mut out = Vec::new();
    let mut roundtrip = 0.0f64;
    for (a0, a1, a2) in [(1.0, 1.0, 5.0), (1.0, 6.0, 5.0)] {
        let nu = NuCoefficient::new(a0, a1, a2)?;
        for i in 0..=180 {
            let s = 10f64.powf(-6.0 + 9.0 * i as f64 / 180.0);
            roundtrip = roundtrip.max((nu.nu_tilde_inverse(nu.nu_tilde(s))? - s).abs() / (1.0 + s));
        }
    }
    out.push(item("nu_tilde_roundtrip", roundtrip, 1e-10));

    let nu = NuCoefficient::new(1.0, 6.0, 5.0)?;
    let p = PdeProblem::manufactured(16, nu)?;
    let w = seeded_vector(p.dim(), 3) * 0.3;
    let dir = seeded_vector(p.dim(), 4);
    out.push(item("gradient_fd", gradient_fd_check(&p, &w, &dir, 1e-5)?, 1e-6));
    let sigma = p.flux(&w);
    let e = p.energy(&sigma)?;
    let eq = p.energy_quadrature(&sigma, 1e-13)?;
    out.push(item("energy_closed_form", (e - eq).abs() / e.abs().max(1.0), 1e-10));
    let st = p.schur_solver(p.mass())?;
    out.push(item("schur_symmetry", check_symmetry(st.as_ref(), 5, 1), 1e-12));
    out.push(item("schur_positivity", -check_spd(st.as_ref(), 5, 1), 0.0));
    let cycles = p.measure_exact_cycles(1e-8, 20).map_or(f64::INFINITY, |c| c as f64);
    out.push(item("mg_exactness_cycles", cycles, 20.0));
    let m = p.reference_metric();
    for n_mg in [1, 2, 3] {
        let (pr, _) = metric_set(&p, &m, SchurLevel::Cycles(n_mg), "check")?;
        let lmax = match estimate_delta(&pr, 1e-9) {
            Ok(e) => e.lambda_max,
            Err(_) => f64::INFINITY,
        };
        out.push(item(format!("mg_domination_n{n_mg}"), lmax - 1.0, 1e-9));
    }
    Ok(out)
}

pub fn run_checks(scope: Scope) -> Result<Vec<CheckItem>> {
    let mut out = Vec::new();
    if matches!(scope, Scope::Projection | Scope::All) {
        out.extend(projection_checks()?);
    }
    if matches!(scope, Scope::FixedPoint | Scope::All) {
        out.extend(fixed_point_checks()?);
    }
    if matches!(scope, Scope::Lyapunov | Scope::All) {
        out.extend(lyapunov_checks()?);
    }
    if matches!(scope, Scope::Pde | Scope::All) {
        out.extend(pde_checks()?);
    }
    Ok(out)
}
