//! Vectors, linear operators, metric inner products and spectral bounds.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::problems::ProblemSpec;

pub type Vector = DVector<f64>;

/// Seed used for every deterministic start vector in spectral estimation.
pub const SPECTRAL_SEED: u64 = 0x1bb6_7a3d;

/// Cap on Lanczos steps.
pub const LANCZOS_MAX_ITERS: usize = 200;

pub trait LinearOperator: Send + Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    fn apply(&self, x: &Vector) -> Vector;
    fn apply_transpose(&self, x: &Vector) -> Vector;

    fn is_symmetric(&self) -> bool {
        false
    }

    /// Claimed positive definiteness. Checkable with [`check_spd`].
    fn is_spd(&self) -> bool {
        false
    }

    fn diagonal(&self) -> Option<Vector> {
        None
    }

    /// True when [`LinearOperator::diagonal`] describes the whole operator.
    fn is_diagonal(&self) -> bool {
        false
    }
}

/// An SPD operator that can also be inverted.
pub trait SpdOperator: LinearOperator {
    fn solve(&self, b: &Vector) -> Result<Vector>;
}

pub type OpRef = Arc<dyn LinearOperator>;
pub type SpdRef = Arc<dyn SpdOperator>;

/// Closed interval holding the generalized eigenvalues of a pair `(Q, R)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoewnerInterval {
    pub c1: f64,
    pub c2: f64,
}

pub struct DenseOperator {
    mat: DMatrix<f64>,
    symmetric: bool,
    chol: Option<Cholesky<f64, Dyn>>,
}

impl DenseOperator {
    pub fn general(mat: DMatrix<f64>) -> Self {
        let symmetric = mat.is_square() && (&mat - mat.transpose()).amax() <= 1e-14 * mat.amax();
        Self {
            mat,
            symmetric,
            chol: None,
        }
    }

    /// Builds an SPD operator, failing when Cholesky does.
    pub fn spd(mat: DMatrix<f64>) -> Result<Self> {
        if !mat.is_square() {
            return Err(Error::InvalidArgument("SPD operator must be square".into()));
        }
        let sym = (&mat + mat.transpose()) * 0.5;
        let chol = Cholesky::new(sym.clone())
            .ok_or_else(|| Error::Factorization("matrix is not positive definite".into()))?;
        Ok(Self {
            mat: sym,
            symmetric: true,
            chol: Some(chol),
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }
}

impl LinearOperator for DenseOperator {
    fn nrows(&self) -> usize {
        self.mat.nrows()
    }
    fn ncols(&self) -> usize {
        self.mat.ncols()
    }
    fn apply(&self, x: &Vector) -> Vector {
        &self.mat * x
    }
    fn apply_transpose(&self, x: &Vector) -> Vector {
        self.mat.tr_mul(x)
    }
    fn is_symmetric(&self) -> bool {
        self.symmetric
    }
    fn is_spd(&self) -> bool {
        self.chol.is_some()
    }
    fn diagonal(&self) -> Option<Vector> {
        Some(self.mat.diagonal())
    }
}

impl SpdOperator for DenseOperator {
    fn solve(&self, b: &Vector) -> Result<Vector> {
        check_dim("dense solve", self.mat.nrows(), b.len())?;
        match &self.chol {
            Some(c) => Ok(c.solve(b)),
            None => Err(Error::Factorization("operator was not built as SPD".into())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiagonalOperator {
    diag: Vector,
}

impl DiagonalOperator {
    pub fn new(diag: Vector) -> Result<Self> {
        if diag.iter().any(|d| !d.is_finite() || *d <= 0.0) {
            return Err(Error::InvalidArgument(
                "diagonal metric entries must be finite and positive".into(),
            ));
        }
        Ok(Self { diag })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            diag: Vector::from_element(n, 1.0),
        }
    }

    pub fn entries(&self) -> &Vector {
        &self.diag
    }
}

impl LinearOperator for DiagonalOperator {
    fn is_diagonal(&self) -> bool {
        true
    }
    fn nrows(&self) -> usize {
        self.diag.len()
    }
    fn ncols(&self) -> usize {
        self.diag.len()
    }
    fn apply(&self, x: &Vector) -> Vector {
        self.diag.component_mul(x)
    }
    fn apply_transpose(&self, x: &Vector) -> Vector {
        self.apply(x)
    }
    fn is_symmetric(&self) -> bool {
        true
    }
    fn is_spd(&self) -> bool {
        true
    }
    fn diagonal(&self) -> Option<Vector> {
        Some(self.diag.clone())
    }
}

impl SpdOperator for DiagonalOperator {
    fn solve(&self, b: &Vector) -> Result<Vector> {
        check_dim("diagonal solve", self.diag.len(), b.len())?;
        Ok(b.component_div(&self.diag))
    }
}

/// Compressed sparse row operator.
pub struct CsrOperator {
    mat: CsrMatrix<f64>,
}

impl CsrOperator {
    pub fn new(mat: CsrMatrix<f64>) -> Self {
        Self { mat }
    }

    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut coo = CooMatrix::new(nrows, ncols);
        for &(i, j, v) in triplets {
            if i >= nrows || j >= ncols {
                return Err(Error::InvalidArgument(format!(
                    "triplet ({i}, {j}) outside {nrows}x{ncols}"
                )));
            }
            coo.push(i, j, v);
        }
        Ok(Self {
            mat: CsrMatrix::from(&coo),
        })
    }

    pub fn matrix(&self) -> &CsrMatrix<f64> {
        &self.mat
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.mat.nrows(), self.mat.ncols());
        for (i, j, v) in self.mat.triplet_iter() {
            d[(i, j)] += *v;
        }
        d
    }
}

impl LinearOperator for CsrOperator {
    fn nrows(&self) -> usize {
        self.mat.nrows()
    }
    fn ncols(&self) -> usize {
        self.mat.ncols()
    }
    fn apply(&self, x: &Vector) -> Vector {
        let mut y = Vector::zeros(self.mat.nrows());
        for (i, row) in self.mat.row_iter().enumerate() {
            let mut acc = 0.0;
            for (&j, &v) in row.col_indices().iter().zip(row.values()) {
                acc += v * x[j];
            }
            y[i] = acc;
        }
        y
    }
    fn apply_transpose(&self, x: &Vector) -> Vector {
        let mut y = Vector::zeros(self.mat.ncols());
        for (i, row) in self.mat.row_iter().enumerate() {
            let xi = x[i];
            for (&j, &v) in row.col_indices().iter().zip(row.values()) {
                y[j] += v * xi;
            }
        }
        y
    }
}

type ApplyFn = dyn Fn(&Vector) -> Vector + Send + Sync;

/// Symmetric operator given only by its action.
pub struct SymmetricFnOperator {
    n: usize,
    f: Box<ApplyFn>,
    spd: bool,
}

impl SymmetricFnOperator {
    pub fn new(n: usize, spd: bool, f: impl Fn(&Vector) -> Vector + Send + Sync + 'static) -> Self {
        Self {
            n,
            f: Box::new(f),
            spd,
        }
    }
}

impl LinearOperator for SymmetricFnOperator {
    fn nrows(&self) -> usize {
        self.n
    }
    fn ncols(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &Vector) -> Vector {
        (self.f)(x)
    }
    fn apply_transpose(&self, x: &Vector) -> Vector {
        (self.f)(x)
    }
    fn is_symmetric(&self) -> bool {
        true
    }
    fn is_spd(&self) -> bool {
        self.spd
    }
}

/// `scale * inner`. Operators are immutable, so rescaling wraps.
pub struct ScaledOperator {
    inner: OpRef,
    scale: f64,
}

impl ScaledOperator {
    pub fn new(inner: OpRef, scale: f64) -> Self {
        Self { inner, scale }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

impl LinearOperator for ScaledOperator {
    fn nrows(&self) -> usize {
        self.inner.nrows()
    }
    fn ncols(&self) -> usize {
        self.inner.ncols()
    }
    fn apply(&self, x: &Vector) -> Vector {
        self.inner.apply(x) * self.scale
    }
    fn apply_transpose(&self, x: &Vector) -> Vector {
        self.inner.apply_transpose(x) * self.scale
    }
    fn is_symmetric(&self) -> bool {
        self.inner.is_symmetric()
    }
    fn is_spd(&self) -> bool {
        self.inner.is_spd() && self.scale > 0.0
    }
}

/// The Schur complement `S = B M^{-1} B^T` as an action.
pub struct SchurOperator {
    b: OpRef,
    m: SpdRef,
}

impl SchurOperator {
    pub fn new(b: OpRef, m: SpdRef) -> Result<Self> {
        check_dim("schur complement", m.nrows(), b.ncols())?;
        Ok(Self { b, m })
    }
}

impl LinearOperator for SchurOperator {
    fn nrows(&self) -> usize {
        self.b.nrows()
    }
    fn ncols(&self) -> usize {
        self.b.nrows()
    }
    fn apply(&self, x: &Vector) -> Vector {
        let bt = self.b.apply_transpose(x);
        // metrics shipped here are factorized at construction
        let z = self.m.solve(&bt).expect("metric solve");
        self.b.apply(&z)
    }
    fn apply_transpose(&self, x: &Vector) -> Vector {
        self.apply(x)
    }
    fn is_symmetric(&self) -> bool {
        true
    }
    fn is_spd(&self) -> bool {
        true
    }
}

/// Assembles any operator densely, column by column.
pub fn to_dense(op: &dyn LinearOperator) -> DMatrix<f64> {
    let n = op.ncols();
    let mut d = DMatrix::zeros(op.nrows(), n);
    let mut e = Vector::zeros(n);
    for j in 0..n {
        e[j] = 1.0;
        d.set_column(j, &op.apply(&e));
        e[j] = 0.0;
    }
    d
}

pub fn checked_apply(op: &dyn LinearOperator, x: &Vector) -> Result<Vector> {
    check_dim("operator apply", op.ncols(), x.len())?;
    let y = op.apply(x);
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("operator apply".into()));
    }
    Ok(y)
}

/// ⟨u, M v⟩.
pub fn inner_m(m: &dyn LinearOperator, u: &Vector, v: &Vector) -> Result<f64> {
    check_dim("inner_m", m.nrows(), u.len())?;
    check_dim("inner_m", m.ncols(), v.len())?;
    let r = u.dot(&m.apply(v));
    if !r.is_finite() {
        return Err(Error::NonFinite("inner_m".into()));
    }
    Ok(r)
}

pub fn norm_m(m: &dyn LinearOperator, u: &Vector) -> f64 {
    u.dot(&m.apply(u)).max(0.0).sqrt()
}

/// ‖u‖ in the `M^{-1}` metric.
pub fn norm_m_inv(m: &dyn SpdOperator, u: &Vector) -> Result<f64> {
    Ok(u.dot(&m.solve(u)?).max(0.0).sqrt())
}

pub fn seeded_vector(n: usize, seed: u64) -> Vector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Vector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0))
}

#[derive(Debug, Clone)]
pub struct SpectralEstimate {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// Extreme eigenvalues of an operator `T` self-adjoint in the `W` inner product.
///
/// Lanczos with full reorthogonalization from a seeded start vector.
/// Ritz residuals `|beta_k s_k|` below `sqrt(tol)` relative decide
/// convergence; the Krylov space running out also counts as converged.
pub fn lanczos_extremes(
    n: usize,
    apply_t: &dyn Fn(&Vector) -> Vector,
    apply_w: &dyn Fn(&Vector) -> Vector,
    tol: f64,
    max_iters: usize,
    seed: u64,
) -> Result<SpectralEstimate> {
    if n == 0 {
        return Err(Error::InvalidArgument("empty operator".into()));
    }
    let kmax = max_iters.min(n).max(1);
    let mut v = seeded_vector(n, seed);
    let mut z = apply_w(&v);
    let nrm = v.dot(&z).sqrt();
    if !(nrm > 0.0 && nrm.is_finite()) {
        return Err(Error::InvalidArgument("weight operator is not positive".into()));
    }
    v /= nrm;
    z /= nrm;
    let mut basis: Vec<Vector> = Vec::with_capacity(kmax + 1);
    let mut wbasis: Vec<Vector> = Vec::with_capacity(kmax + 1);
    let mut alphas = Vec::with_capacity(kmax);
    let mut betas: Vec<f64> = Vec::with_capacity(kmax);
    basis.push(v);
    wbasis.push(z);

    let mut last = SpectralEstimate {
        lambda_min: f64::NAN,
        lambda_max: f64::NAN,
        iterations: 0,
        residual: f64::INFINITY,
    };
    for j in 0..kmax {
        let mut w = apply_t(&basis[j]);
        let a = wbasis[j].dot(&w);
        if !a.is_finite() {
            return Err(Error::NonFinite("lanczos recurrence".into()));
        }
        alphas.push(a);
        for _ in 0..2 {
            for (q, wq) in basis.iter().zip(&wbasis) {
                let c = wq.dot(&w);
                w.axpy(-c, q, 1.0);
            }
        }
        let ww = apply_w(&w);
        let b = w.dot(&ww).max(0.0).sqrt();
        let k = j + 1;
        let scale = alphas.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
        let exhausted = b <= 1e-13 * scale || k == n;
        if exhausted || k % 5 == 0 || k == kmax {
            let est = tridiagonal_extremes(&alphas, &betas, b, k);
            // Ritz value error is of order residual²/gap
            let ok = exhausted
                || est.residual <= tol.sqrt() * est.lambda_max.abs().max(est.lambda_min.abs());
            last = est;
            if ok {
                last.residual = if exhausted { 0.0 } else { last.residual };
                return Ok(last);
            }
        }
        if k == kmax {
            break;
        }
        betas.push(b);
        basis.push(w / b);
        wbasis.push(ww / b);
    }
    Err(Error::NotConverged {
        what: "lanczos eigenvalue estimate".into(),
        iterations: last.iterations,
        estimate: last.lambda_max,
    })
}

fn tridiagonal_extremes(alphas: &[f64], betas: &[f64], beta_next: f64, k: usize) -> SpectralEstimate {
    let mut t = DMatrix::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alphas[i];
        if i + 1 < k {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let (mut imin, mut imax) = (0, 0);
    for i in 0..k {
        if eig.eigenvalues[i] < eig.eigenvalues[imin] {
            imin = i;
        }
        if eig.eigenvalues[i] > eig.eigenvalues[imax] {
            imax = i;
        }
    }
    let rmin = (beta_next * eig.eigenvectors[(k - 1, imin)]).abs();
    let rmax = (beta_next * eig.eigenvectors[(k - 1, imax)]).abs();
    SpectralEstimate {
        lambda_min: eig.eigenvalues[imin],
        lambda_max: eig.eigenvalues[imax],
        iterations: k,
        residual: rmin.max(rmax),
    }
}

/// Generalized eigenvalue range of `(Q, R)`, i.e. `λ(Q^{-1}R) ⊂ [c1, c2]`.
pub fn loewner_bounds(q: &dyn SpdOperator, r: &dyn LinearOperator, tol: f64) -> Result<LoewnerInterval> {
    check_dim("loewner_bounds", q.nrows(), r.nrows())?;
    let t = |x: &Vector| q.solve(&r.apply(x)).expect("metric solve");
    let w = |x: &Vector| q.apply(x);
    let est = lanczos_extremes(q.nrows(), &t, &w, tol, LANCZOS_MAX_ITERS, SPECTRAL_SEED)?;
    Ok(LoewnerInterval {
        c1: est.lambda_min,
        c2: est.lambda_max,
    })
}

/// Bregman divergence `D_f(u, v)`.
pub fn bregman(problem: &dyn ProblemSpec, u: &Vector, v: &Vector) -> Result<f64> {
    problem.bregman(u, v)
}

/// Generic route for `D_f(u, v)`, straight from the definition.
pub fn bregman_generic(problem: &dyn ProblemSpec, u: &Vector, v: &Vector) -> Result<f64> {
    let fu = problem.eval_f(u)?;
    let fv = problem.eval_f(v)?;
    let gv = problem.eval_grad(v)?;
    let d = fu - fv - gv.dot(&(u - v));
    if !d.is_finite() {
        return Err(Error::NonFinite("bregman".into()));
    }
    Ok(d)
}

#[derive(Debug, Clone)]
pub struct SpdLemmaReport {
    pub interval: LoewnerInterval,
    pub factor: f64,
    pub samples: usize,
    pub max_violation: f64,
    pub violations: usize,
}

impl SpdLemmaReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Samples `⟨(Q⁻¹−R⁻¹)R(Q⁻¹−R⁻¹)x, x⟩ ≤ max{(1−c1)²,(1−c2)²}⟨R⁻¹x, x⟩`.
pub fn lemma_spd_check(q: &dyn SpdOperator, r: &dyn SpdOperator, samples: usize) -> Result<SpdLemmaReport> {
    let interval = loewner_bounds(q, r, 1e-12)?;
    lemma_spd_check_with(q, r, interval, samples, 0x5eed)
}

pub fn lemma_spd_check_with(
    q: &dyn SpdOperator,
    r: &dyn SpdOperator,
    interval: LoewnerInterval,
    samples: usize,
    seed: u64,
) -> Result<SpdLemmaReport> {
    check_dim("lemma_spd_check", q.nrows(), r.nrows())?;
    let factor = (1.0 - interval.c1).powi(2).max((1.0 - interval.c2).powi(2));
    let mut max_violation = 0.0f64;
    let mut violations = 0;
    for s in 0..samples {
        let x = seeded_vector(q.nrows(), seed.wrapping_add(s as u64));
        let d = q.solve(&x)? - r.solve(&x)?;
        let lhs = d.dot(&r.apply(&d));
        let rhs = factor * x.dot(&r.solve(&x)?);
        let scale = x.dot(&r.solve(&x)?).max(f64::MIN_POSITIVE);
        let v = ((lhs - rhs) / scale).max(0.0);
        if v > 1e-9 {
            violations += 1;
        }
        max_violation = max_violation.max(v);
    }
    Ok(SpdLemmaReport {
        interval,
        factor,
        samples,
        max_violation,
        violations,
    })
}

/// Samples linearity and, when claimed, symmetry of an operator. Returns the
/// worst relative defect.
pub fn check_linearity(op: &dyn LinearOperator, samples: usize, seed: u64) -> f64 {
    let mut worst = 0.0f64;
    for s in 0..samples {
        let x = seeded_vector(op.ncols(), seed + 3 * s as u64);
        let y = seeded_vector(op.ncols(), seed + 3 * s as u64 + 1);
        let (a, b) = (0.7, -1.3);
        let lhs = op.apply(&(&x * a + &y * b));
        let rhs = op.apply(&x) * a + op.apply(&y) * b;
        let scale = rhs.norm().max(op.apply(&x).norm()).max(f64::MIN_POSITIVE);
        worst = worst.max((lhs - rhs).norm() / scale);
    }
    worst
}

pub fn check_symmetry(op: &dyn LinearOperator, samples: usize, seed: u64) -> f64 {
    let mut worst = 0.0f64;
    for s in 0..samples {
        let x = seeded_vector(op.ncols(), seed + 2 * s as u64);
        let y = seeded_vector(op.ncols(), seed + 2 * s as u64 + 1);
        let a = op.apply(&x).dot(&y);
        let b = x.dot(&op.apply(&y));
        let scale = (op.apply(&x).norm() * y.norm()).max(f64::MIN_POSITIVE);
        worst = worst.max((a - b).abs() / scale);
    }
    worst
}

/// Smallest sampled Rayleigh quotient `⟨Ax,x⟩/⟨x,x⟩`; positive for SPD.
pub fn check_spd(op: &dyn LinearOperator, samples: usize, seed: u64) -> f64 {
    let mut worst = f64::INFINITY;
    for s in 0..samples {
        let x = seeded_vector(op.ncols(), seed + s as u64);
        worst = worst.min(x.dot(&op.apply(&x)) / x.dot(&x));
    }
    worst
}

pub fn read_matrix_market(path: &Path) -> Result<CsrOperator> {
    let coo: CooMatrix<f64> = nalgebra_sparse::io::load_coo_from_matrix_market_file(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    Ok(CsrOperator::new(CsrMatrix::from(&coo)))
}

pub fn write_matrix_market(path: &Path, op: &CsrOperator) -> Result<()> {
    nalgebra_sparse::io::save_to_matrix_market_file(op.matrix(), path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    Ok(())
}

pub fn dense_to_csr(m: &DMatrix<f64>) -> CsrOperator {
    let mut coo = CooMatrix::new(m.nrows(), m.ncols());
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let v = m[(i, j)];
            if v != 0.0 {
                coo.push(i, j, v);
            }
        }
    }
    CsrOperator::new(CsrMatrix::from(&coo))
}

/// One value per line.
pub fn read_vector(path: &Path) -> Result<Vector> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') || t.starts_with('%') {
            continue;
        }
        let v: f64 = t
            .parse()
            .map_err(|_| Error::Parse(format!("{}:{}: bad value {t:?}", path.display(), lineno + 1)))?;
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{}:{}", path.display(), lineno + 1)));
        }
        out.push(v);
    }
    Ok(Vector::from_vec(out))
}

pub fn write_vector(path: &Path, v: &Vector) -> Result<()> {
    let mut s = String::with_capacity(v.len() * 24);
    for x in v.iter() {
        s.push_str(&format!("{x:.17e}\n"));
    }
    std::fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inner_m_small_cases() {
        let i2 = DiagonalOperator::identity(2);
        let u = Vector::from_vec(vec![1.0, 2.0]);
        let v = Vector::from_vec(vec![3.0, 4.0]);
        assert_eq!(inner_m(&i2, &u, &v).unwrap(), 11.0);
        let d = DiagonalOperator::new(Vector::from_vec(vec![2.0, 3.0])).unwrap();
        let ones = Vector::from_element(2, 1.0);
        assert_eq!(inner_m(&d, &ones, &ones).unwrap(), 5.0);
        assert!(inner_m(&d, &ones, &Vector::zeros(3)).is_err());
    }

    #[test]
    fn loewner_diagonal() {
        let q = DiagonalOperator::identity(2);
        let r = DiagonalOperator::new(Vector::from_vec(vec![2.0, 3.0])).unwrap();
        let b = loewner_bounds(&q, &r, 1e-12).unwrap();
        assert!((b.c1 - 2.0).abs() < 1e-12 && (b.c2 - 3.0).abs() < 1e-12);
    }

    #[test]
    fn lemma_spd_equality_case() {
        let q = DiagonalOperator::identity(4);
        let r = DiagonalOperator::new(Vector::from_element(4, 2.0)).unwrap();
        let rep = lemma_spd_check(&q, &r, 10).unwrap();
        assert!((rep.factor - 1.0).abs() < 1e-12);
        assert!(rep.max_violation < 1e-12);
    }

    #[test]
    fn csr_transpose_matches_dense() {
        let op = CsrOperator::from_triplets(2, 3, &[(0, 0, 1.0), (0, 2, 2.0), (1, 1, -1.0)]).unwrap();
        let d = op.to_dense();
        let x = Vector::from_vec(vec![1.0, 2.0]);
        assert_eq!(op.apply_transpose(&x), d.tr_mul(&x));
    }
}
