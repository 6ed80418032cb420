//! Lyapunov functions, the continuous projected flow, and checks of the
//! decrease properties along computed trajectories.
//!
//! With anchors `u⋆`, `u⋆_φ` and the limiting metric set `𝓜⋆`,
//!
//! ```text
//! E = λαE⁽¹⁾ + E⁽²⁾,  E⁽¹⁾ = D_f(u, u⋆_φ),  E⁽²⁾ = ½‖(I − P̃⋆)(u − u⋆_φ)‖²_{M⋆}.
//! ```

use crate::error::{check_dim, Error, Result};
use crate::operator::{loewner_bounds, norm_m, to_dense, SpdRef, Vector};
use crate::problems::{fixed_point_solve, kkt_oracle, ProblemSpec, QuadraticInstance, SchurLevel};
use crate::projection::{estimate_delta, InexactProjector};
use crate::solver::{relax, step_direction, IterationTrace, MetricPolicy, TheoryConstants};

/// Reference points for the Lyapunov function.
#[derive(Clone)]
pub struct LyapunovAnchors {
    pub u_star: Vector,
    pub u_phi_star: Vector,
    /// `𝓜⋆ = {M⋆, S̃⋆}` as its projector.
    pub star: InexactProjector,
}

impl LyapunovAnchors {
    pub fn new(u_star: Vector, u_phi_star: Vector, star: InexactProjector) -> Result<Self> {
        check_dim("anchor u⋆", star.dim(), u_star.len())?;
        check_dim("anchor u⋆_φ", star.dim(), u_phi_star.len())?;
        Ok(Self {
            u_star,
            u_phi_star,
            star,
        })
    }

    /// `u⋆` from the KKT system, `u⋆_φ` by Picard iteration at step `alpha`.
    pub fn for_quadratic(q: &QuadraticInstance, star: InexactProjector, alpha: f64) -> Result<Self> {
        let u_star = kkt_oracle(q)?;
        let scale = 1.0 + u_star.norm();
        let fp = fixed_point_solve(q, &star, alpha, 1e-14 * scale)?;
        Self::new(u_star, fp.u_phi_star, star)
    }

    pub fn m_star(&self) -> &SpdRef {
        &self.star.metric().m
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovState {
    pub lambda_weight: f64,
    pub alpha: f64,
    /// `D_f(u, u⋆_φ)`.
    pub e1: f64,
    pub e2: f64,
    pub e_total: f64,
    /// `D_f(u, u⋆)`, reported alongside.
    pub e1_true: f64,
}

pub fn lyapunov_eval(
    problem: &dyn ProblemSpec,
    u: &Vector,
    anchors: &LyapunovAnchors,
    lambda_weight: f64,
    alpha: f64,
) -> Result<LyapunovState> {
    check_dim("lyapunov point", anchors.star.dim(), u.len())?;
    check_dim("lyapunov problem", problem.dim(), u.len())?;
    let e1 = problem.bregman(u, &anchors.u_phi_star)?;
    let e1_true = problem.bregman(u, &anchors.u_star)?;
    let d = u - &anchors.u_phi_star;
    let r = &d - anchors.star.apply(&d)?;
    let n = norm_m(anchors.m_star().as_ref(), &r);
    let e2 = 0.5 * n * n;
    Ok(LyapunovState {
        lambda_weight,
        alpha,
        e1,
        e2,
        e_total: lambda_weight * alpha * e1 + e2,
        e1_true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    ForwardEuler,
    Rk4,
}

#[derive(Debug, Clone)]
pub struct FlowConfig {
    pub integrator: Integrator,
    pub dt: f64,
    pub t_end: f64,
    pub alpha: f64,
    pub metric_policy: MetricPolicy,
    pub schur: SchurLevel,
    /// Lyapunov weight `λ`, used only when anchors are given.
    pub lambda: f64,
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || self.dt > 1.0 {
            return Err(Error::InvalidArgument("dt must be in (0,1]".into()));
        }
        if self.integrator == Integrator::Rk4 && self.dt > 0.1 {
            return Err(Error::InvalidArgument("RK4 flow needs dt ≤ 0.1".into()));
        }
        if !(self.t_end > 0.0) {
            return Err(Error::InvalidArgument("t_end must be positive".into()));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidArgument("alpha must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FlowSample {
    pub t: f64,
    pub state: Option<LyapunovState>,
    pub constraint_res: f64,
}

pub struct FlowTrajectory {
    pub samples: Vec<FlowSample>,
    /// Iterates at every step, including `u0`.
    pub states: Vec<Vector>,
    pub u_final: Vector,
}

impl FlowTrajectory {
    /// Decay rate from a least-squares fit of `ln E(t)`, ignoring samples
    /// below `floor·E(0)`.
    pub fn fitted_rate(&self, floor: f64) -> Option<f64> {
        let e0 = self.samples.first()?.state?.e_total;
        let pts: Vec<(f64, f64)> = self
            .samples
            .iter()
            .filter_map(|s| s.state.map(|st| (s.t, st.e_total)))
            .filter(|(_, e)| *e > floor * e0 && *e > 0.0)
            .map(|(t, e)| (t, e.ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let me = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|(t, e)| (t - mt) * (e - me)).sum();
        let sxx: f64 = pts.iter().map(|(t, _)| (t - mt) * (t - mt)).sum();
        Some(-sxy / sxx)
    }
}

struct FlowField<'a> {
    problem: &'a dyn ProblemSpec,
    alpha: f64,
    schur: SchurLevel,
    fixed: Option<InexactProjector>,
}

impl FlowField<'_> {
    fn projector(&self, u: &Vector) -> Result<InexactProjector> {
        if let Some(p) = &self.fixed {
            return Ok(p.clone());
        }
        let m = self.problem.metric(u)?;
        Ok(crate::problems::metric_set(self.problem, &m, self.schur, "flow")?.0)
    }

    /// `P̃(u − αM⁻¹∇f(u))`; the flow velocity is this minus `u`.
    fn target(&self, u: &Vector) -> Result<Vector> {
        let p = self.projector(u)?;
        Ok(step_direction(self.problem, u, &p, self.alpha)?.1)
    }
}

/// Integrates `u' = −u + P̃_{𝓜(u)}(u − αM(u)⁻¹∇f(u))`.
///
/// Any policy other than [`MetricPolicy::Fixed`] rebuilds the metric at every
/// right-hand-side evaluation.
/// A forward-Euler step of size `dt` is the relaxed iteration with `τ = dt`.
pub fn integrate_flow(
    problem: &dyn ProblemSpec,
    u0: &Vector,
    cfg: &FlowConfig,
    anchors: Option<&LyapunovAnchors>,
) -> Result<FlowTrajectory> {
    match integrate_flow_partial(problem, u0, cfg, anchors)? {
        (traj, None) => Ok(traj),
        (_, Some(e)) => Err(e),
    }
}

/// Like [`integrate_flow`], but a blow-up returns the trajectory up to the
/// last finite state together with the error.
pub fn integrate_flow_partial(
    problem: &dyn ProblemSpec,
    u0: &Vector,
    cfg: &FlowConfig,
    anchors: Option<&LyapunovAnchors>,
) -> Result<(FlowTrajectory, Option<Error>)> {
    cfg.validate()?;
    check_dim("flow start", problem.dim(), u0.len())?;
    let fixed = match cfg.metric_policy {
        MetricPolicy::Fixed => {
            let m = problem.reference_metric();
            Some(crate::problems::metric_set(problem, &m, cfg.schur, "flow")?.0)
        }
        _ => None,
    };
    let field = FlowField {
        problem,
        alpha: cfg.alpha,
        schur: cfg.schur,
        fixed,
    };
    let b = problem.constraint();
    let rhs = problem.constraint_rhs();
    let sample = |t: f64, u: &Vector| -> Result<FlowSample> {
        let state = match anchors {
            Some(a) => Some(lyapunov_eval(problem, u, a, cfg.lambda, cfg.alpha)?),
            None => None,
        };
        Ok(FlowSample {
            t,
            state,
            constraint_res: (b.apply(u) - &rhs).norm(),
        })
    };
    let steps = (cfg.t_end / cfg.dt).round().max(1.0) as usize;
    let mut u = u0.clone();
    let mut samples = vec![sample(0.0, &u)?];
    let mut states = vec![u.clone()];
    let mut blow_up = None;
    for k in 1..=steps {
        let dt = cfg.dt;
        let next = match cfg.integrator {
            Integrator::ForwardEuler => relax(&u, &field.target(&u)?, dt),
            Integrator::Rk4 => {
                let vel = |x: &Vector| -> Result<Vector> { Ok(field.target(x)? - x) };
                let k1 = vel(&u)?;
                let k2 = vel(&(&u + &k1 * (0.5 * dt)))?;
                let k3 = vel(&(&u + &k2 * (0.5 * dt)))?;
                let k4 = vel(&(&u + &k3 * dt))?;
                &u + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
            }
        };
        let un = next.norm();
        if !un.is_finite() || un > 1e12 {
            blow_up = Some(Error::Diverged {
                iteration: k,
                reason: format!("flow blew up at t = {}", k as f64 * dt),
            });
            break;
        }
        u = next;
        samples.push(sample(k as f64 * dt, &u)?);
        states.push(u.clone());
    }
    Ok((
        FlowTrajectory {
            samples,
            states,
            u_final: u,
        },
        blow_up,
    ))
}

/// Checks of `E(t) ≤ e^{−ωt}(E⁽¹⁾(0) + (λα)⁻¹E⁽²⁾(0))` and monotone decay.
#[derive(Debug, Clone)]
pub struct FlowCheck {
    pub omega: f64,
    pub bound_violations: usize,
    pub monotone_violations: usize,
    pub fitted_rate: Option<f64>,
}

pub fn flow_check(traj: &FlowTrajectory, omega: f64) -> FlowCheck {
    let states: Vec<(f64, LyapunovState)> = traj
        .samples
        .iter()
        .filter_map(|s| s.state.map(|st| (s.t, st)))
        .collect();
    let mut bound_violations = 0;
    let mut monotone_violations = 0;
    if let Some((_, s0)) = states.first() {
        let c = s0.e1 + s0.e2 / (s0.lambda_weight * s0.alpha);
        let slack = 1e-12 * s0.e_total.max(f64::MIN_POSITIVE);
        for (t, s) in &states {
            if s.e_total > (-omega * t).exp() * c + slack {
                bound_violations += 1;
            }
        }
        for w in states.windows(2) {
            if w[1].1.e_total > w[0].1.e_total + slack {
                monotone_violations += 1;
            }
        }
    }
    FlowCheck {
        omega,
        bound_violations,
        monotone_violations,
        fitted_rate: traj.fitted_rate(1e-10),
    }
}

#[derive(Debug, Clone)]
pub struct SlpViolation {
    pub k: usize,
    /// `(E_{k+1} − E_k)/τ`.
    pub lhs: f64,
    /// `−ω_k E_k + slack`.
    pub rhs: f64,
}

#[derive(Debug, Clone)]
pub struct SlpReport {
    pub omega: f64,
    pub checked: usize,
    pub violations: Vec<SlpViolation>,
    pub product_violations: Vec<usize>,
    /// `((λα)⁻¹E⁽²⁾₀, bound)` when the start is feasible.
    pub feasible_start: Option<(f64, f64)>,
}

impl SlpReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
            && self.product_violations.is_empty()
            && self.feasible_start.is_none_or(|(v, b)| v <= b * (1.0 + 1e-12))
    }

    pub fn first_violation(&self) -> Option<usize> {
        self.violations.first().map(|v| v.k)
    }
}

/// Verifies the discrete strong Lyapunov property along a trace that carries
/// Lyapunov values. `feasible_start` enables the bound on `(λα)⁻¹E⁽²⁾₀`.
pub fn slp_check_discrete(
    trace: &IterationTrace,
    tc: &TheoryConstants,
    feasible_start: bool,
) -> Result<SlpReport> {
    let rec = &trace.records;
    if rec.is_empty() || !rec[0].e.is_finite() {
        return Err(Error::InvalidArgument("trace has no Lyapunov values".into()));
    }
    let omega = tc.omega_k();
    let e0 = rec[0].e;
    let slack = 1e-10 * e0;
    let mut violations = Vec::new();
    let mut product_violations = Vec::new();
    let lam_alpha = tc.lambda * tc.alpha;
    let start = rec[0].e1 + rec[0].e2 / lam_alpha;
    let factor = 1.0 - (tc.kappa.powi(-4) / 9.0).min(tc.tau / 2.0) / 16.0;
    let mut prod = 1.0;
    for (k, w) in rec.windows(2).enumerate() {
        let lhs = (w[1].e - w[0].e) / tc.tau;
        let rhs = -omega * w[0].e + slack;
        if lhs > rhs {
            violations.push(SlpViolation { k, lhs, rhs });
        }
        prod *= factor;
        if w[1].e > prod * start + slack {
            product_violations.push(k + 1);
        }
    }
    let feasible = feasible_start.then(|| (rec[0].e2 / lam_alpha, tc.feasible_start_bound()));
    Ok(SlpReport {
        omega,
        checked: rec.len() - 1,
        violations,
        product_violations,
        feasible_start: feasible,
    })
}

/// Empirical assumption constants along a run.
#[derive(Debug, Clone)]
pub struct AuditReport {
    /// `Θ_k` from the metric pair `(M⋆, M_k)`.
    pub theta: Vec<f64>,
    /// `Θ̃_k` from `(S̃⋆⁻¹, S̃_k⁻¹)`, when assessable.
    pub theta_tilde: Vec<Option<f64>>,
    pub delta: Vec<Option<f64>>,
    /// `max_k Θ_k / (√μ ‖u_k − u⋆_φ‖_{M⋆})` over snapshots away from `u⋆_φ`.
    pub k_theta: Option<f64>,
    /// Sampled lower bound on `K_S`; the true constant may be larger.
    pub k_s_lower: Option<f64>,
    pub notes: Vec<String>,
}

/// `max(c2 − 1, 1/c1 − 1, 0)` for `c1 M⋆ ≼ M ≼ c2 M⋆`.
pub fn theta_between(m_star: &SpdRef, m: &SpdRef) -> Result<f64> {
    let (c1, c2) = if m_star.is_diagonal() && m.is_diagonal() {
        let a = m_star.diagonal().unwrap();
        let b = m.diagonal().unwrap();
        check_dim("theta", a.len(), b.len())?;
        let r = b.component_div(&a);
        (r.min(), r.max())
    } else {
        let iv = loewner_bounds(m_star.as_ref(), m.as_ref(), 1e-10)?;
        (iv.c1, iv.c2)
    };
    Ok((c2 - 1.0).max(1.0 / c1 - 1.0).max(0.0))
}

/// Dense limit for `Θ̃` and `K_S` sampling.
const AUDIT_DENSE_LIMIT: usize = 400;

/// Estimates `Θ_k`, `Θ̃_k`, `δ_k`, `K_θ` and a lower bound on `K_S` from
/// metric snapshots `(u_k, 𝓜_k)`.
pub fn assumption_audit(
    problem: &dyn ProblemSpec,
    snapshots: &[(Vector, InexactProjector)],
    anchors: &LyapunovAnchors,
    samples: usize,
    seed: u64,
) -> Result<AuditReport> {
    let m_star = anchors.m_star().clone();
    let mu = problem.mu_l_in(&m_star).map(|(mu, _)| mu);
    let mut notes = Vec::new();
    if mu.is_none() {
        notes.push("μ in M⋆ unknown; K_θ uses μ = 1".into());
    }
    let mu = mu.unwrap_or(1.0);
    let ncon = anchors.star.constraint().nrows();
    let dense = ncon <= AUDIT_DENSE_LIMIT;
    if !dense {
        notes.push("Θ̃ and K_S not assessed (constraint space too large)".into());
    }
    let star_tilde = dense.then(|| to_dense(anchors.star.metric().schur_tilde_inverse.as_ref()));
    let star_exact = if dense {
        Some(problem.exact_projector(&m_star)?)
    } else {
        None
    };
    let mut theta = Vec::new();
    let mut theta_tilde = Vec::new();
    let mut delta = Vec::new();
    let mut k_theta: Option<f64> = None;
    let mut k_s: Option<f64> = None;
    for (u, p) in snapshots {
        let th = theta_between(&m_star, &p.metric().m)?;
        theta.push(th);
        let dk = estimate_delta(p, 1e-8).ok().map(|e| e.delta);
        delta.push(dk);
        let dist = norm_m(m_star.as_ref(), &(u - &anchors.u_phi_star));
        if dist > 1e-10 * (1.0 + norm_m(m_star.as_ref(), &anchors.u_phi_star)) {
            let r = th / (mu.sqrt() * dist);
            k_theta = Some(k_theta.map_or(r, |k: f64| k.max(r)));
        }
        let tt = match &star_tilde {
            Some(st) => {
                let sk = to_dense(p.metric().schur_tilde_inverse.as_ref());
                let st_sym = (st + st.transpose()) * 0.5;
                let sk_sym = (&sk + sk.transpose()) * 0.5;
                let q = crate::operator::DenseOperator::spd(st_sym)?;
                let r = crate::operator::DenseOperator::general(sk_sym);
                let iv = loewner_bounds(&q, &r, 1e-10)?;
                Some((iv.c2 - 1.0).max(1.0 / iv.c1 - 1.0).max(0.0))
            }
            None => None,
        };
        theta_tilde.push(tt);
        if let (Some(st), Some(ex), Some(dk)) = (&star_tilde, &star_exact, dk) {
            let thm = th.max(tt.unwrap_or(0.0));
            if thm * dk > 1e-12 {
                let ek = problem.exact_projector(&p.metric().m)?;
                let sk = p.metric().schur_tilde_inverse.clone();
                for s in 0..samples {
                    let x = crate::operator::seeded_vector(ncon, seed.wrapping_add(s as u64));
                    let s_inv_k = ek.schur_solver().solve(&x)?;
                    let s_inv_star = ex.schur_solver().solve(&x)?;
                    let lhs = x.dot(&(sk.apply(&x) - s_inv_k))
                        - x.dot(&(st * &x - &s_inv_star));
                    let r = lhs.abs() / (thm * dk * x.dot(&s_inv_star));
                    k_s = Some(k_s.map_or(r, |k: f64| k.max(r)));
                }
            }
        }
    }
    Ok(AuditReport {
        theta,
        theta_tilde,
        delta,
        k_theta,
        k_s_lower: k_s,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::gen_quadratic;

    #[test]
    fn energy_vanishes_at_anchor() {
        let q = gen_quadratic(8, 3, 4.0, 5).unwrap();
        let m = q.reference_metric();
        let star = q.exact_projector(&m).unwrap().as_inexact().unwrap();
        let a = LyapunovAnchors::for_quadratic(&q, star, 0.1).unwrap();
        let s = lyapunov_eval(&q, &a.u_star.clone(), &a, 0.01, 0.1).unwrap();
        assert!(s.e_total < 1e-20, "{s:?}");
    }
}
