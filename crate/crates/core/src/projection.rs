//! Exact and inexact projections onto `ker(B)` in a metric `M`.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{check_dim, Error, Result};
use crate::operator::{
    lanczos_extremes, loewner_bounds, norm_m, norm_m_inv, seeded_vector, to_dense, DenseOperator,
    LinearOperator, OpRef, ScaledOperator, SchurOperator, SpdOperator, SpdRef, Vector,
    LANCZOS_MAX_ITERS, SPECTRAL_SEED,
};
use crate::problems::ProblemSpec;

/// The pair `{M, S̃}` behind one inexact projection.
#[derive(Clone)]
pub struct MetricSet {
    pub m: SpdRef,
    pub schur_tilde_inverse: OpRef,
    pub label: String,
}

impl MetricSet {
    pub fn new(m: SpdRef, schur_tilde_inverse: OpRef, label: impl Into<String>) -> Self {
        Self {
            m,
            schur_tilde_inverse,
            label: label.into(),
        }
    }
}

#[derive(Clone)]
pub struct InexactProjector {
    metric: MetricSet,
    b: OpRef,
}

impl InexactProjector {
    pub fn new(metric: MetricSet, b: OpRef) -> Result<Self> {
        check_dim("projector metric", metric.m.nrows(), b.ncols())?;
        check_dim(
            "projector schur inverse",
            metric.schur_tilde_inverse.nrows(),
            b.nrows(),
        )?;
        Ok(Self { metric, b })
    }

    pub fn metric(&self) -> &MetricSet {
        &self.metric
    }

    pub fn constraint(&self) -> &OpRef {
        &self.b
    }

    pub fn dim(&self) -> usize {
        self.b.ncols()
    }

    /// `u − M⁻¹Bᵀ S̃⁻¹ B u`.
    pub fn apply(&self, u: &Vector) -> Result<Vector> {
        check_dim("inexact_project", self.dim(), u.len())?;
        if self.b.nrows() == 0 {
            return Ok(u.clone());
        }
        let r = self.metric.schur_tilde_inverse.apply(&self.b.apply(u));
        let c = self.metric.m.solve(&self.b.apply_transpose(&r))?;
        Ok(u - c)
    }

    /// `P̃ᵀ u = u − Bᵀ S̃⁻¹ B M⁻¹ u`.
    pub fn apply_transpose(&self, u: &Vector) -> Result<Vector> {
        check_dim("inexact_project transpose", self.dim(), u.len())?;
        if self.b.nrows() == 0 {
            return Ok(u.clone());
        }
        let z = self.metric.m.solve(u)?;
        let r = self.metric.schur_tilde_inverse.apply(&self.b.apply(&z));
        Ok(u - self.b.apply_transpose(&r))
    }

    pub fn schur(&self) -> SchurOperator {
        SchurOperator::new(self.b.clone(), self.metric.m.clone()).expect("checked at construction")
    }

    fn with_scale(&self, scale: f64) -> Self {
        let scaled: OpRef = Arc::new(ScaledOperator::new(
            self.metric.schur_tilde_inverse.clone(),
            scale,
        ));
        Self {
            metric: MetricSet::new(self.metric.m.clone(), scaled, self.metric.label.clone()),
            b: self.b.clone(),
        }
    }
}

#[derive(Clone)]
pub struct ExactProjector {
    m: SpdRef,
    b: OpRef,
    schur_solver: SpdRef,
}

impl ExactProjector {
    pub fn new(m: SpdRef, b: OpRef, schur_solver: SpdRef) -> Result<Self> {
        check_dim("exact projector", m.nrows(), b.ncols())?;
        check_dim("exact projector schur", schur_solver.nrows(), b.nrows())?;
        Ok(Self { m, b, schur_solver })
    }

    /// Dense Cholesky of the assembled Schur complement.
    pub fn dense(m: SpdRef, b: OpRef) -> Result<Self> {
        let solver: SpdRef = Arc::new(dense_schur(&b, &m)?);
        Self::new(m, b, solver)
    }

    pub fn metric(&self) -> &SpdRef {
        &self.m
    }

    pub fn schur_solver(&self) -> &SpdRef {
        &self.schur_solver
    }

    pub fn apply(&self, u: &Vector) -> Result<Vector> {
        check_dim("exact_project", self.b.ncols(), u.len())?;
        if self.b.nrows() == 0 {
            return Ok(u.clone());
        }
        let r = self.schur_solver.solve(&self.b.apply(u))?;
        Ok(u - self.m.solve(&self.b.apply_transpose(&r))?)
    }

    pub fn apply_transpose(&self, u: &Vector) -> Result<Vector> {
        check_dim("exact_project transpose", self.b.ncols(), u.len())?;
        if self.b.nrows() == 0 {
            return Ok(u.clone());
        }
        let z = self.m.solve(u)?;
        let r = self.schur_solver.solve(&self.b.apply(&z))?;
        Ok(u - self.b.apply_transpose(&r))
    }

    /// The exact metric set `{M, S}` seen as an inexact one with `δ = 0`.
    pub fn as_inexact(&self) -> Result<InexactProjector> {
        let solver = self.schur_solver.clone();
        let n = self.b.nrows();
        let inv: OpRef = Arc::new(crate::operator::SymmetricFnOperator::new(n, true, move |x| {
            solver.solve(x).expect("schur solve")
        }));
        InexactProjector::new(MetricSet::new(self.m.clone(), inv, "exact"), self.b.clone())
    }
}

pub fn exact_project(p: &ExactProjector, u: &Vector) -> Result<Vector> {
    p.apply(u)
}

pub fn inexact_project(p: &InexactProjector, u: &Vector) -> Result<Vector> {
    p.apply(u)
}

/// Assembled `B M⁻¹ Bᵀ`, factorized.
pub fn dense_schur(b: &OpRef, m: &SpdRef) -> Result<DenseOperator> {
    let s = SchurOperator::new(b.clone(), m.clone())?;
    DenseOperator::spd(to_dense(&s))
}

/// Preconditioned conjugate gradients. Returns `(x, iterations, relative residual)`.
pub fn pcg(
    a: &dyn LinearOperator,
    rhs: &Vector,
    precond: Option<&dyn LinearOperator>,
    rtol: f64,
    max_iters: usize,
) -> Result<(Vector, usize, f64)> {
    let n = rhs.len();
    let bnorm = rhs.norm();
    let mut x = Vector::zeros(n);
    if bnorm == 0.0 {
        return Ok((x, 0, 0.0));
    }
    let mut r = rhs.clone();
    let mut z = match precond {
        Some(p) => p.apply(&r),
        None => r.clone(),
    };
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    for it in 1..=max_iters {
        let ap = a.apply(&p);
        let pap = p.dot(&ap);
        if !(pap > 0.0) {
            return Err(Error::NotConverged {
                what: "pcg (operator not positive on search direction)".into(),
                iterations: it,
                estimate: r.norm() / bnorm,
            });
        }
        let step = rz / pap;
        x.axpy(step, &p, 1.0);
        r.axpy(-step, &ap, 1.0);
        let rel = r.norm() / bnorm;
        if rel <= rtol {
            return Ok((x, it, rel));
        }
        z = match precond {
            Some(pc) => pc.apply(&r),
            None => r.clone(),
        };
        let rz_new = r.dot(&z);
        p = &z + &p * (rz_new / rz);
        rz = rz_new;
    }
    Err(Error::NotConverged {
        what: "pcg".into(),
        iterations: max_iters,
        estimate: r.norm() / bnorm,
    })
}

/// Solves with an SPD operator by PCG to a fixed relative residual.
pub struct PcgSolver {
    a: OpRef,
    precond: Option<OpRef>,
    rtol: f64,
    max_iters: usize,
}

impl PcgSolver {
    pub fn new(a: OpRef, precond: Option<OpRef>, rtol: f64, max_iters: usize) -> Self {
        Self {
            a,
            precond,
            rtol,
            max_iters,
        }
    }
}

impl LinearOperator for PcgSolver {
    fn nrows(&self) -> usize {
        self.a.nrows()
    }
    fn ncols(&self) -> usize {
        self.a.ncols()
    }
    fn apply(&self, x: &Vector) -> Vector {
        self.a.apply(x)
    }
    fn apply_transpose(&self, x: &Vector) -> Vector {
        self.a.apply(x)
    }
    fn is_symmetric(&self) -> bool {
        true
    }
    fn is_spd(&self) -> bool {
        true
    }
}

impl SpdOperator for PcgSolver {
    fn solve(&self, b: &Vector) -> Result<Vector> {
        check_dim("pcg solve", self.a.nrows(), b.len())?;
        let (x, _, _) = pcg(
            self.a.as_ref(),
            b,
            self.precond.as_deref(),
            self.rtol,
            self.max_iters,
        )?;
        Ok(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimateMethod {
    Lanczos,
    DenseOracle,
}

#[derive(Debug, Clone)]
pub struct InexactnessEstimate {
    pub delta: f64,
    /// Largest eigenvalue of `S̃⁻¹S`; at most one once calibrated.
    pub lambda_max: f64,
    pub method: EstimateMethod,
    pub iterations: usize,
}

fn spectrum_s_tilde_inv_s(p: &InexactProjector, tol: f64) -> Result<(f64, f64, usize)> {
    let n = p.b.nrows();
    if n == 0 {
        return Ok((1.0, 1.0, 0));
    }
    let s = p.schur();
    let stinv = p.metric.schur_tilde_inverse.clone();
    let t = |x: &Vector| stinv.apply(&s.apply(x));
    let w = |x: &Vector| s.apply(x);
    let est = lanczos_extremes(n, &t, &w, tol, LANCZOS_MAX_ITERS, SPECTRAL_SEED)?;
    Ok((est.lambda_min, est.lambda_max, est.iterations))
}

/// `δ = 1 − λ_min(S̃⁻¹S)`, requiring `λ_max(S̃⁻¹S) ≤ 1 + tol`.
///
/// Lanczos on `S̃⁻¹S`, which is self-adjoint in the `S` inner product. This has
/// the same Krylov space as the error propagator `I − S̃⁻¹S`.
pub fn estimate_delta(p: &InexactProjector, tol: f64) -> Result<InexactnessEstimate> {
    let (lmin, lmax, iterations) = spectrum_s_tilde_inv_s(p, tol.min(1e-10))?;
    if lmax > 1.0 + tol {
        return Err(Error::Domination(format!(
            "S̃ not dominating (λ_max(S̃⁻¹S) = {lmax:.6e}); run calibrate_domination first"
        )));
    }
    Ok(InexactnessEstimate {
        delta: (1.0 - lmin).clamp(0.0, 1.0),
        lambda_max: lmax,
        method: EstimateMethod::Lanczos,
        iterations,
    })
}

/// Dense route for small constraint counts.
pub fn estimate_delta_dense(p: &InexactProjector, tol: f64) -> Result<InexactnessEstimate> {
    let n = p.b.nrows();
    if n == 0 {
        return Ok(InexactnessEstimate {
            delta: 0.0,
            lambda_max: 1.0,
            method: EstimateMethod::DenseOracle,
            iterations: 0,
        });
    }
    let s = to_dense(&p.schur());
    let st = to_dense(p.metric.schur_tilde_inverse.as_ref());
    let st = (&st + st.transpose()) * 0.5;
    let l = nalgebra::Cholesky::new(s.clone())
        .ok_or_else(|| Error::Factorization("schur complement".into()))?
        .l();
    // S̃⁻¹S is similar to Lᵀ S̃⁻¹ L
    let sym: DMatrix<f64> = l.transpose() * &st * &l;
    let eig = nalgebra::SymmetricEigen::new((&sym + sym.transpose()) * 0.5);
    let lmin = eig.eigenvalues.min();
    let lmax = eig.eigenvalues.max();
    if lmax > 1.0 + tol {
        return Err(Error::Domination(format!(
            "S̃ not dominating (λ_max(S̃⁻¹S) = {lmax:.6e}); run calibrate_domination first"
        )));
    }
    Ok(InexactnessEstimate {
        delta: (1.0 - lmin).clamp(0.0, 1.0),
        lambda_max: lmax,
        method: EstimateMethod::DenseOracle,
        iterations: n,
    })
}

/// Rescales `S̃⁻¹` by `min(1, (1 − tol)/λ_max(S̃⁻¹S))` so that `S ≼ S̃`.
pub fn calibrate_domination(p: &InexactProjector, tol: f64) -> Result<(InexactProjector, f64)> {
    let (_, lmax, _) = spectrum_s_tilde_inv_s(p, 1e-10)?;
    if !(lmax > 0.0) {
        return Err(Error::Domination("S̃⁻¹ is not positive".into()));
    }
    let scale = ((1.0 - tol) / lmax).min(1.0);
    if scale == 1.0 {
        return Ok((p.clone(), 1.0));
    }
    Ok((p.with_scale(scale), scale))
}

#[derive(Debug, Clone)]
pub struct PropertyViolation {
    pub name: &'static str,
    pub max_violation: f64,
}

#[derive(Debug, Clone, Default)]
pub struct PropertyReport {
    pub entries: Vec<PropertyViolation>,
    pub samples: usize,
}

impl PropertyReport {
    fn record(&mut self, name: &'static str, v: f64) {
        let v = if v.is_nan() { f64::INFINITY } else { v.max(0.0) };
        match self.entries.iter_mut().find(|e| e.name == name) {
            Some(e) => e.max_violation = e.max_violation.max(v),
            None => self.entries.push(PropertyViolation {
                name,
                max_violation: v,
            }),
        }
    }

    pub fn merge(&mut self, other: &PropertyReport) {
        for e in &other.entries {
            self.record(e.name, e.max_violation);
        }
        self.samples += other.samples;
    }

    pub fn max_violation(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| m.max(e.max_violation))
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.name == name).map(|e| e.max_violation)
    }

    /// First entry above `threshold`, if any.
    pub fn first_failure(&self, threshold: f64) -> Option<&PropertyViolation> {
        self.entries.iter().find(|e| !(e.max_violation <= threshold))
    }
}

fn excess(lhs: f64, rhs: f64, scale: f64) -> f64 {
    (lhs - rhs) / scale.max(f64::MIN_POSITIVE)
}

/// Projection inequalities and identities on `samples` seeded vectors.
///
/// `epsilon` is the inexactness level used in the `(1−ε)` bounds, normally
/// from [`estimate_delta`].
pub fn lemma_pi_suite(
    p: &InexactProjector,
    exact: &ExactProjector,
    epsilon: f64,
    samples: usize,
    seed: u64,
) -> Result<PropertyReport> {
    check_dim("lemma_pi_suite", p.dim(), exact.b.ncols())?;
    let m = p.metric.m.as_ref();
    let n = p.dim();
    let mut rep = PropertyReport {
        samples,
        ..Default::default()
    };
    for s in 0..samples {
        let u = seeded_vector(n, seed.wrapping_add(2 * s as u64));
        let v = seeded_vector(n, seed.wrapping_add(2 * s as u64 + 1));
        let pu = exact.apply(&u)?;
        let ptu = p.apply(&u)?;
        let ptv = p.apply(&v)?;
        let nu2 = u.dot(&m.apply(&u));
        let nu = nu2.sqrt();

        let lhs = pu.dot(&m.apply(&pu));
        let rhs = ptu.dot(&m.apply(&ptu));
        rep.record("exact_norm_le_inexact", excess(lhs, rhs, nu2));

        let upu = u.dot(&m.apply(&ptu));
        rep.record("inexact_inner_le_norm", excess(upu, nu2, nu2));
        rep.record("inexact_norm_le_inner", excess(rhs, upu, nu2));

        let r_exact = norm_m(m, &(&u - &pu));
        let r_inexact = norm_m(m, &(&u - &ptu));
        rep.record("complement_lower", excess((1.0 - epsilon) * r_exact, r_inexact, nu));
        rep.record("complement_upper", excess(r_inexact, r_exact, nu));

        let d = p.apply_transpose(&u)? - exact.apply_transpose(&u)?;
        let un = norm_m_inv(p.metric.m.as_ref(), &u)?;
        rep.record("adjoint_gap", excess(norm_m_inv(p.metric.m.as_ref(), &d)?, epsilon * un, un));

        let ppt = exact.apply(&ptu)?;
        let ptp = p.apply(&pu)?;
        let pn = norm_m(m, &pu).max(nu * 1e-300);
        rep.record("exact_after_inexact", norm_m(m, &(&ppt - &pu)) / nu.max(pn));
        rep.record("inexact_after_exact", norm_m(m, &(&ptp - &pu)) / nu.max(pn));

        let a = ptu.dot(&m.apply(&v));
        let b = u.dot(&m.apply(&ptv));
        let scale = nu * norm_m(m, &v);
        rep.record("inexact_self_adjoint", (a - b).abs() / scale);
    }
    Ok(rep)
}

/// `⟨∇_𝓜 f(u), v⟩_M = ⟨∇f(u), P̃v⟩` with `∇_𝓜 f = P̃M⁻¹∇f`.
pub fn gradient_identity_check(
    problem: &dyn ProblemSpec,
    p: &InexactProjector,
    samples: usize,
    seed: u64,
) -> Result<PropertyReport> {
    let m = p.metric.m.as_ref();
    let mut rep = PropertyReport {
        samples,
        ..Default::default()
    };
    for s in 0..samples {
        let u = seeded_vector(p.dim(), seed.wrapping_add(2 * s as u64));
        let v = seeded_vector(p.dim(), seed.wrapping_add(2 * s as u64 + 1));
        let g = problem.eval_grad(&u)?;
        let mg = p.apply(&p.metric.m.solve(&g)?)?;
        let lhs = mg.dot(&m.apply(&v));
        let rhs = g.dot(&p.apply(&v)?);
        let scale = norm_m_inv(p.metric.m.as_ref(), &g)? * norm_m(m, &v);
        rep.record("gradient_identity", (lhs - rhs).abs() / scale);
    }
    Ok(rep)
}

/// Constant `c` with `M₂ ≼ cM₁` and `M₁ ≼ cM₂`.
pub fn metric_equivalence(m1: &dyn SpdOperator, m2: &dyn SpdOperator, tol: f64) -> Result<f64> {
    let b = loewner_bounds(m1, m2, tol)?;
    Ok(b.c2.max(1.0 / b.c1))
}

/// Two-metric bounds on `‖(Π₁ − Π₂Π₁)u‖_{M₂}`.
pub fn dproj_suite(
    p1: &InexactProjector,
    eps1: f64,
    p2: &InexactProjector,
    eps2: f64,
    c: f64,
    samples: usize,
    seed: u64,
) -> Result<PropertyReport> {
    check_dim("dproj_suite", p1.dim(), p2.dim())?;
    let m1 = p1.metric.m.as_ref();
    let m2 = p2.metric.m.as_ref();
    let mut rep = PropertyReport {
        samples,
        ..Default::default()
    };
    for s in 0..samples {
        let u = seeded_vector(p1.dim(), seed.wrapping_add(s as u64));
        let p1u = p1.apply(&u)?;
        let lhs = norm_m(m2, &(&p1u - p2.apply(&p1u)?));
        let n1 = norm_m(m1, &u);
        let n2 = norm_m(m2, &u);
        let scale = n1.max(n2);
        rep.record("metric_change_a", excess(lhs, c.sqrt() * eps1 * n1, scale));
        rep.record("metric_change_b", excess(lhs, c * eps1 * n2, scale));
        let r1 = norm_m(m1, &(&u - &p1u));
        let r2 = norm_m(m2, &(&u - p2.apply(&u)?));
        rep.record(
            "metric_change_complement_a",
            excess(lhs, c.sqrt() * eps1 / (1.0 - eps1) * r1, scale),
        );
        rep.record(
            "metric_change_complement_b",
            excess(lhs, c * eps1 / (1.0 - eps2) * r2, scale),
        );
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::DiagonalOperator;
    use nalgebra::dmatrix;

    #[test]
    fn two_dim_exact_projection() {
        let m: SpdRef = Arc::new(DiagonalOperator::identity(2));
        let b: OpRef = Arc::new(DenseOperator::general(dmatrix![1.0, 1.0]));
        let p = ExactProjector::dense(m, b).unwrap();
        let out = p.apply(&Vector::from_vec(vec![1.0, 0.0])).unwrap();
        assert!((out[0] - 0.5).abs() < 1e-15 && (out[1] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn delta_of_diagonal_pair() {
        // S = diag(1,2) from M = I and B = diag(1, sqrt 2)
        let m: SpdRef = Arc::new(DiagonalOperator::identity(2));
        let b: OpRef = Arc::new(DenseOperator::general(dmatrix![1.0, 0.0; 0.0, 2f64.sqrt()]));
        let st: OpRef = Arc::new(DiagonalOperator::new(Vector::from_vec(vec![1.0, 0.25])).unwrap());
        let p = InexactProjector::new(MetricSet::new(m, st, "t"), b).unwrap();
        let e = estimate_delta(&p, 1e-10).unwrap();
        assert!((e.delta - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_constraint_is_identity() {
        let m: SpdRef = Arc::new(DiagonalOperator::identity(3));
        let b: OpRef = Arc::new(DenseOperator::general(DMatrix::zeros(0, 3)));
        let st: OpRef = Arc::new(DenseOperator::general(DMatrix::zeros(0, 0)));
        let p = InexactProjector::new(MetricSet::new(m.clone(), st, "t"), b.clone()).unwrap();
        let u = Vector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(p.apply(&u).unwrap(), u);
        let e = ExactProjector::dense(m, b).unwrap();
        assert_eq!(e.apply(&u).unwrap(), u);
        assert_eq!(estimate_delta(&p, 1e-8).unwrap().delta, 0.0);
    }
}
