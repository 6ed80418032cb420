//! Problem abstraction, the dense quadratic testbed, and fixed points of the
//! inexact projected gradient map.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::operator::{
    bregman_generic, loewner_bounds, norm_m, norm_m_inv, DenseOperator, OpRef, SpdOperator, SpdRef,
    Vector,
};
use crate::projection::{
    dense_schur, estimate_delta, ExactProjector, InexactProjector, MetricSet,
};

/// How accurately the Schur inverse inside a projection is approximated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchurLevel {
    Exact,
    /// `n` applications of the problem's inner solver (multigrid cycles for
    /// the PDE benchmark).
    Cycles(usize),
}

pub struct SchurApprox {
    pub tilde_inverse: OpRef,
    /// Inner cycles spent per application of `tilde_inverse`.
    pub cycles: usize,
}

pub trait ProblemSpec: Send + Sync {
    fn dim(&self) -> usize;
    fn eval_f(&self, u: &Vector) -> Result<f64>;
    fn eval_grad(&self, u: &Vector) -> Result<Vector>;
    fn constraint(&self) -> OpRef;

    /// Right-hand side of `Bu = g`. Problems with `g ≠ 0` are shifted at
    /// setup, so the core always sees zero.
    fn constraint_rhs(&self) -> Vector {
        Vector::zeros(self.constraint().nrows())
    }

    /// Variable metric `M(u)`.
    fn metric(&self, u: &Vector) -> Result<SpdRef>;

    /// Fixed reference metric `M(1)`.
    fn reference_metric(&self) -> SpdRef;

    /// `(μ, L)` of `f` in the given metric, when known.
    fn mu_l_in(&self, _m: &SpdRef) -> Option<(f64, f64)> {
        None
    }

    fn mu_l_bounds(&self) -> Option<(f64, f64)> {
        self.mu_l_in(&self.reference_metric())
    }

    fn bregman(&self, u: &Vector, v: &Vector) -> Result<f64> {
        bregman_generic(self.as_dyn(), u, v)
    }

    fn schur_approx(&self, m: &SpdRef, level: SchurLevel) -> Result<SchurApprox> {
        match level {
            SchurLevel::Exact => {
                let s = dense_schur(&self.constraint(), m)?;
                let inv = s.matrix().clone().try_inverse().ok_or_else(|| {
                    Error::Factorization("schur complement not invertible".into())
                })?;
                Ok(SchurApprox {
                    tilde_inverse: Arc::new(DenseOperator::general((&inv + inv.transpose()) * 0.5)),
                    cycles: 0,
                })
            }
            SchurLevel::Cycles(_) => Err(Error::InvalidArgument(
                "problem has no inexact Schur approximation".into(),
            )),
        }
    }

    fn exact_projector(&self, m: &SpdRef) -> Result<ExactProjector> {
        ExactProjector::dense(m.clone(), self.constraint())
    }

    /// Schur accuracy used when a method asks for an exact projection. Problems
    /// with an iterative inner solver return the cycle count that reaches
    /// solver precision, so that its cost is visible.
    fn exactness_level(&self) -> SchurLevel {
        SchurLevel::Exact
    }

    fn as_dyn(&self) -> &dyn ProblemSpec;
}

/// Inexact projector for metric `m` at the given Schur accuracy, with the
/// inner cycles it costs per application.
pub fn metric_set(
    problem: &dyn ProblemSpec,
    m: &SpdRef,
    level: SchurLevel,
    label: &str,
) -> Result<(InexactProjector, usize)> {
    let approx = problem.schur_approx(m, level)?;
    let p = InexactProjector::new(
        MetricSet::new(m.clone(), approx.tilde_inverse, label),
        problem.constraint(),
    )?;
    Ok((p, approx.cycles))
}

#[derive(Debug, Clone)]
pub enum MetricModel {
    Fixed(DMatrix<f64>),
    /// `M(u) = base + gain · diag(u_i² / (1 + u_i²))`.
    StateDependent { base: DMatrix<f64>, gain: f64 },
}

/// `f(u) = ½ uᵀAu + bᵀu` subject to `Bu = 0`.
#[derive(Debug, Clone)]
pub struct QuadraticInstance {
    pub hessian: DMatrix<f64>,
    pub linear: Vector,
    pub constraint: DMatrix<f64>,
    pub seed: u64,
    pub metric_model: MetricModel,
    /// Inexactness of one Schur cycle; `n` cycles give `delta^n`.
    pub schur_delta: f64,
}

fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| gaussian(rng));
    g.qr().q()
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// SPD matrix with log-spaced spectrum in `[1, cond]`.
pub fn random_spd(n: usize, cond: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let q = random_orthogonal(n, rng);
    let d = Vector::from_fn(n, |i, _| {
        if n == 1 {
            1.0
        } else {
            cond.powf(i as f64 / (n - 1) as f64)
        }
    });
    let a = &q * DMatrix::from_diagonal(&d) * q.transpose();
    (&a + a.transpose()) * 0.5
}

pub fn gen_quadratic(dim: usize, constraint_rows: usize, kappa_target: f64, seed: u64) -> Result<QuadraticInstance> {
    if constraint_rows >= dim {
        return Err(Error::InvalidArgument("constraint_rows must be < dim".into()));
    }
    if !(kappa_target >= 1.0) {
        return Err(Error::InvalidArgument("kappa_target must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hessian = if kappa_target == 1.0 {
        DMatrix::identity(dim, dim)
    } else {
        random_spd(dim, kappa_target, &mut rng)
    };
    let linear = Vector::from_fn(dim, |_, _| gaussian(&mut rng));
    let constraint = DMatrix::from_fn(constraint_rows, dim, |_, _| gaussian(&mut rng));
    let q = QuadraticInstance {
        hessian,
        linear,
        constraint,
        seed,
        metric_model: MetricModel::Fixed(DMatrix::identity(dim, dim)),
        schur_delta: 0.0,
    };
    if q.constraint_rank() < constraint_rows {
        return Err(Error::InvalidArgument("generated constraint is rank deficient".into()));
    }
    Ok(q)
}

impl QuadraticInstance {
    pub fn with_metric(mut self, model: MetricModel) -> Self {
        self.metric_model = model;
        self
    }

    pub fn with_schur_delta(mut self, delta: f64) -> Self {
        self.schur_delta = delta;
        self
    }

    /// Random fixed SPD metric with condition number `cond`, seeded from the instance.
    pub fn with_random_metric(self, cond: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x9e37_79b9);
        let m = random_spd(self.hessian.nrows(), cond, &mut rng);
        self.with_metric(MetricModel::Fixed(m))
    }

    /// Rescales `f` so that `μ = 1` in the reference metric.
    pub fn normalized(mut self) -> Result<Self> {
        let m = self.reference_metric_dense();
        let mm = DenseOperator::spd(m)?;
        let a = DenseOperator::general(self.hessian.clone());
        let mu = loewner_bounds(&mm, &a, 1e-13)?.c1;
        self.hessian /= mu;
        self.linear /= mu;
        Ok(self)
    }

    pub fn constraint_rank(&self) -> usize {
        if self.constraint.nrows() == 0 {
            return 0;
        }
        let svd = self.constraint.clone().svd(false, false);
        let smax = svd.singular_values.max();
        svd.singular_values
            .iter()
            .filter(|s| **s > 1e-12 * smax.max(1.0))
            .count()
    }

    pub fn condition_number(&self) -> f64 {
        let e = SymmetricEigen::new(self.hessian.clone()).eigenvalues;
        e.max() / e.min()
    }

    fn reference_metric_dense(&self) -> DMatrix<f64> {
        match &self.metric_model {
            MetricModel::Fixed(m) => m.clone(),
            MetricModel::StateDependent { base, gain } => {
                let n = base.nrows();
                let ones = Vector::from_element(n, 1.0);
                base + DMatrix::from_diagonal(&ones.map(|x| gain * x * x / (1.0 + x * x)))
            }
        }
    }

    fn metric_dense(&self, u: &Vector) -> DMatrix<f64> {
        match &self.metric_model {
            MetricModel::Fixed(m) => m.clone(),
            MetricModel::StateDependent { base, gain } => {
                base + DMatrix::from_diagonal(&u.map(|x| gain * x * x / (1.0 + x * x)))
            }
        }
    }

    pub fn into_ref(self) -> Arc<dyn ProblemSpec> {
        Arc::new(self)
    }

    /// Seeded orthogonal basis used to spread the Schur inexactness.
    fn schur_mixing(&self, k: usize) -> (DMatrix<f64>, Vector) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x51ab_c0de);
        let q = random_orthogonal(k, &mut rng);
        let t = Vector::from_fn(k, |i, _| {
            if k == 1 {
                1.0
            } else {
                i as f64 / (k - 1) as f64
            }
        });
        (q, t)
    }

    /// `S̃⁻¹ = S^{-1/2} Q diag(1 − δ t_i) Qᵀ S^{-1/2}` with `t` spanning `[0, 1]`,
    /// so the spectrum of `S̃⁻¹S` is exactly `{1 − δ t_i}`.
    pub fn schur_tilde_inverse_dense(&self, m: &SpdRef, delta: f64) -> Result<DMatrix<f64>> {
        let b: OpRef = Arc::new(DenseOperator::general(self.constraint.clone()));
        let s = dense_schur(&b, m)?.matrix().clone();
        let k = s.nrows();
        let eig = SymmetricEigen::new(s);
        let s_mhalf = &eig.eigenvectors
            * DMatrix::from_diagonal(&eig.eigenvalues.map(|x| 1.0 / x.sqrt()))
            * eig.eigenvectors.transpose();
        let (q, t) = self.schur_mixing(k);
        let d = DMatrix::from_diagonal(&t.map(|ti| 1.0 - delta * ti));
        let inner = &q * d * q.transpose();
        let r = &s_mhalf * inner * &s_mhalf;
        Ok((&r + r.transpose()) * 0.5)
    }
}

impl ProblemSpec for QuadraticInstance {
    fn dim(&self) -> usize {
        self.hessian.nrows()
    }

    fn eval_f(&self, u: &Vector) -> Result<f64> {
        check_dim("quadratic f", self.dim(), u.len())?;
        Ok(0.5 * u.dot(&(&self.hessian * u)) + self.linear.dot(u))
    }

    fn eval_grad(&self, u: &Vector) -> Result<Vector> {
        check_dim("quadratic gradient", self.dim(), u.len())?;
        Ok(&self.hessian * u + &self.linear)
    }

    fn constraint(&self) -> OpRef {
        Arc::new(DenseOperator::general(self.constraint.clone()))
    }

    fn metric(&self, u: &Vector) -> Result<SpdRef> {
        check_dim("quadratic metric", self.dim(), u.len())?;
        Ok(Arc::new(DenseOperator::spd(self.metric_dense(u))?))
    }

    fn reference_metric(&self) -> SpdRef {
        Arc::new(DenseOperator::spd(self.reference_metric_dense()).expect("metric model is SPD"))
    }

    fn mu_l_in(&self, m: &SpdRef) -> Option<(f64, f64)> {
        let a = DenseOperator::general(self.hessian.clone());
        loewner_bounds(m.as_ref(), &a, 1e-13).ok().map(|b| (b.c1, b.c2))
    }

    fn bregman(&self, u: &Vector, v: &Vector) -> Result<f64> {
        check_dim("quadratic bregman", self.dim(), u.len())?;
        let d = u - v;
        Ok(0.5 * d.dot(&(&self.hessian * &d)))
    }

    fn schur_approx(&self, m: &SpdRef, level: SchurLevel) -> Result<SchurApprox> {
        let delta = match level {
            SchurLevel::Exact => 0.0,
            SchurLevel::Cycles(n) => self.schur_delta.powi(n as i32),
        };
        let inv = self.schur_tilde_inverse_dense(m, delta)?;
        Ok(SchurApprox {
            tilde_inverse: Arc::new(DenseOperator::general(inv)),
            cycles: match level {
                SchurLevel::Exact => 0,
                SchurLevel::Cycles(n) => n,
            },
        })
    }

    fn as_dyn(&self) -> &dyn ProblemSpec {
        self
    }
}

/// Minimizer from the dense KKT system `[A Bᵀ; B 0][u; p] = [−b; 0]`.
pub fn kkt_oracle(q: &QuadraticInstance) -> Result<Vector> {
    let n = q.dim();
    let m = q.constraint.nrows();
    let mut k = DMatrix::zeros(n + m, n + m);
    k.view_mut((0, 0), (n, n)).copy_from(&q.hessian);
    k.view_mut((0, n), (n, m)).copy_from(&q.constraint.transpose());
    k.view_mut((n, 0), (m, n)).copy_from(&q.constraint);
    let mut rhs = Vector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(&(-&q.linear));
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Factorization("singular KKT matrix".into()))?;
    Ok(sol.rows(0, n).into_owned())
}

#[derive(Debug, Clone)]
pub struct FixedPointResult {
    pub u_phi_star: Vector,
    pub iterations: usize,
    pub contraction_ratio_observed: f64,
    /// Theoretical factor `max{|1−αL|, |1−αμ|}` when `(μ, L)` is known.
    pub contraction_bound: Option<f64>,
    /// Set when the observed ratio exceeds the bound by more than 10%.
    pub warning: Option<String>,
}

/// `φ(u) = P̃(u − αM⁻¹∇f(u))`.
pub fn phi(problem: &dyn ProblemSpec, p: &InexactProjector, alpha: f64, u: &Vector) -> Result<Vector> {
    let g = problem.eval_grad(u)?;
    let d = p.metric().m.solve(&g)?;
    p.apply(&(u - d * alpha))
}

/// Picard iteration for the fixed point of `φ` from `u = 0`.
pub fn fixed_point_solve(
    problem: &dyn ProblemSpec,
    p: &InexactProjector,
    alpha: f64,
    tol: f64,
) -> Result<FixedPointResult> {
    fixed_point_solve_from(problem, p, alpha, tol, &Vector::zeros(problem.dim()))
}

pub fn fixed_point_solve_from(
    problem: &dyn ProblemSpec,
    p: &InexactProjector,
    alpha: f64,
    tol: f64,
    u0: &Vector,
) -> Result<FixedPointResult> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument("alpha must be positive".into()));
    }
    let m = p.metric().m.clone();
    let bounds = problem.mu_l_in(&m);
    let bound = match bounds {
        Some((mu, l)) => {
            if alpha >= 2.0 / l {
                return Err(Error::InvalidArgument(format!(
                    "alpha = {alpha:e} outside (0, 2/L) with L = {l:e}"
                )));
            }
            Some((1.0 - alpha * l).abs().max((1.0 - alpha * mu).abs()))
        }
        None => None,
    };
    let ratio_for_cap = bound.unwrap_or(0.999).clamp(1e-3, 0.999_999);
    let cap = ((10.0 * (1.0 / tol).ln() / (1.0 / ratio_for_cap).ln()).ceil() as usize).max(100);

    let mut u = u0.clone();
    let mut prev_step: Option<f64> = None;
    let mut observed = 0.0f64;
    for it in 1..=cap {
        let next = phi(problem, p, alpha, &u)?;
        let step = norm_m(m.as_ref(), &(&next - &u));
        let scale = norm_m(m.as_ref(), &next).max(1.0);
        if let Some(ps) = prev_step {
            if ps > 1e-9 * scale {
                observed = observed.max(step / ps);
            }
        }
        u = next;
        if !step.is_finite() {
            return Err(Error::NonFinite("fixed point iteration".into()));
        }
        if step <= tol {
            let warning = match bound {
                Some(b) if observed > 1.1 * b + 1e-12 => Some(format!(
                    "observed contraction {observed:.4} exceeds bound {b:.4}; μ/L may be misestimated"
                )),
                _ => None,
            };
            return Ok(FixedPointResult {
                u_phi_star: u,
                iterations: it,
                contraction_ratio_observed: observed,
                contraction_bound: bound,
                warning,
            });
        }
        prev_step = Some(step);
    }
    Err(Error::NotConverged {
        what: "fixed point iteration".into(),
        iterations: cap,
        estimate: prev_step.unwrap_or(f64::NAN),
    })
}

#[derive(Debug, Clone)]
pub struct UDiffReport {
    pub mu: f64,
    pub l: f64,
    pub kappa: f64,
    pub delta_star: f64,
    pub alpha: f64,
    /// `(lhs, rhs)` for the four inequalities, in order 0..3.
    pub sides: [(f64, f64); 4],
    pub preconditions_hold: bool,
    pub u_phi_minus_u_star: f64,
}

impl UDiffReport {
    /// `rhs / lhs`, infinite when `lhs` vanishes.
    pub fn slack(&self, i: usize) -> f64 {
        let (l, r) = self.sides[i];
        if l == 0.0 {
            f64::INFINITY
        } else {
            r / l
        }
    }

    /// Violations beyond a relative tolerance; inequalities 1–3 count only when the
    /// preconditions `α ≤ 1/L` and `δ⋆ ≤ 1/(4κ)` hold.
    pub fn violations(&self, rtol: f64) -> Vec<&'static str> {
        let names = ["fixed_point_offset_0", "fixed_point_offset_1", "fixed_point_offset_2", "fixed_point_offset_3"];
        let mut out = Vec::new();
        for (i, name) in names.iter().enumerate() {
            if i > 0 && !self.preconditions_hold {
                continue;
            }
            let (l, r) = self.sides[i];
            if l > r + rtol * r.abs().max(1e-300) + 1e-15 {
                out.push(*name);
            }
        }
        out
    }
}

/// Computes `u⋆`, `u⋆_φ` and both sides of the equilibrium error bounds.
pub fn u_diff_bound_check(q: &QuadraticInstance, p: &InexactProjector, alpha: f64) -> Result<UDiffReport> {
    let m = p.metric().m.clone();
    let (mu, l) = q
        .mu_l_in(&m)
        .ok_or_else(|| Error::InvalidArgument("μ/L unavailable".into()))?;
    let kappa = l / mu;
    let delta_star = estimate_delta(p, 1e-10)?.delta;
    let u_star = kkt_oracle(q)?;
    let fp = fixed_point_solve(q, p, alpha, 1e-14 * (1.0 + norm_m(m.as_ref(), &u_star)))?;
    let u_phi = fp.u_phi_star;
    let g_star = q.eval_grad(&u_star)?;
    let gn = norm_m_inv(m.as_ref(), &g_star)?;
    let eta = &u_star - &u_phi;

    let lhs0 = norm_m(m.as_ref(), &(&eta - p.apply(&eta)?));
    let rhs0 = 2.0 * alpha * delta_star * gn;
    let diff = norm_m(m.as_ref(), &eta);
    let rhs1 = 3.0 * kappa.sqrt() / mu.sqrt() * delta_star * alpha.sqrt() * gn;
    let g_phi = q.eval_grad(&u_phi)?;
    let lhs2 = norm_m_inv(m.as_ref(), &(&g_phi - &g_star))?;
    let rhs2 = 3.0 * l.sqrt() * kappa * delta_star * alpha.sqrt() * gn;
    let lhs3 = norm_m_inv(m.as_ref(), &g_phi)?;
    let rhs3 = 2.0 * gn;
    Ok(UDiffReport {
        mu,
        l,
        kappa,
        delta_star,
        alpha,
        sides: [(lhs0, rhs0), (diff, rhs1), (lhs2, rhs2), (lhs3, rhs3)],
        preconditions_hold: alpha <= 1.0 / l * (1.0 + 1e-12) && delta_star <= 1.0 / (4.0 * kappa) * (1.0 + 1e-12),
        u_phi_minus_u_star: diff,
    })
}

/// Central finite-difference check of `eval_grad` against `eval_f`.
pub fn gradient_fd_check(problem: &dyn ProblemSpec, u: &Vector, dir: &Vector, h: f64) -> Result<f64> {
    let fp = problem.eval_f(&(u + dir * h))?;
    let fm = problem.eval_f(&(u - dir * h))?;
    let fd = (fp - fm) / (2.0 * h);
    let an = problem.eval_grad(u)?.dot(dir);
    Ok((fd - an).abs() / an.abs().max(fd.abs()).max(1e-12))
}

/// Minimal `SpdOperator` view used when only the dense metric is at hand.
pub fn dense_metric(m: DMatrix<f64>) -> Result<SpdRef> {
    Ok(Arc::new(DenseOperator::spd(m)?))
}

/// `‖u‖` in `M⁻¹`, re-exported for callers holding only a metric reference.
pub fn dual_norm(m: &dyn SpdOperator, g: &Vector) -> Result<f64> {
    norm_m_inv(m, g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn kkt_two_dim() {
        let q = QuadraticInstance {
            hessian: DMatrix::identity(2, 2),
            linear: Vector::from_vec(vec![-1.0, -1.0]),
            constraint: dmatrix![1.0, -1.0],
            seed: 0,
            metric_model: MetricModel::Fixed(DMatrix::identity(2, 2)),
            schur_delta: 0.0,
        };
        let u = kkt_oracle(&q).unwrap();
        assert!((u[0] - 1.0).abs() < 1e-14 && (u[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn unit_kappa_gives_identity() {
        let q = gen_quadratic(6, 2, 1.0, 3).unwrap();
        assert_eq!(q.hessian, DMatrix::identity(6, 6));
    }
}
