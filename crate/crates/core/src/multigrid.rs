//! Cell-centered geometric multigrid for variable-coefficient 5-point
//! operators on the unit square.
//!
//! An operator is given by face coefficients: `(Sp)_K = Σ c_f (p_K − p_N)`
//! over interior faces plus `Σ c_f p_K` over boundary faces. Cells are
//! indexed `i + n*j`, x-faces `i + (n+1)*j` and y-faces `i + n*j`.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};
use crate::operator::{LinearOperator, OpRef, SymmetricFnOperator, Vector};

/// Coarsening stops at this many cells per side.
pub const COARSEST_SIDE: usize = 4;

/// Over-weighting of the coarse-grid correction. Piecewise-constant transfer
/// under-corrects smooth errors; weights near 1.8 restore mesh-independent
/// contraction.
pub const DEFAULT_CORRECTION_WEIGHT: f64 = 1.8;

/// Face coefficients of one 5-point operator on an `n × n` cell grid.
#[derive(Debug, Clone)]
pub struct SchurField {
    pub n: usize,
    /// `(n+1) * n` coefficients on faces normal to x.
    pub cx: Vec<f64>,
    /// `n * (n+1)` coefficients on faces normal to y.
    pub cy: Vec<f64>,
}

impl SchurField {
    pub fn new(n: usize, cx: Vec<f64>, cy: Vec<f64>) -> Result<Self> {
        if cx.len() != (n + 1) * n || cy.len() != n * (n + 1) {
            return Err(Error::InvalidArgument("face coefficient arrays have wrong length".into()));
        }
        if cx.iter().chain(&cy).any(|c| !(*c > 0.0) || !c.is_finite()) {
            return Err(Error::InvalidArgument("coefficients must be positive".into()));
        }
        Ok(Self { n, cx, cy })
    }

    /// Constant coefficient `c` in the interior, `2c` on the boundary (half-cell
    /// distance to the wall).
    pub fn constant(n: usize, c: f64) -> Result<Self> {
        let mut cx = vec![c; (n + 1) * n];
        let mut cy = vec![c; n * (n + 1)];
        for j in 0..n {
            cx[(n + 1) * j] = 2.0 * c;
            cx[n + (n + 1) * j] = 2.0 * c;
        }
        for i in 0..n {
            cy[i] = 2.0 * c;
            cy[i + n * n] = 2.0 * c;
        }
        Self::new(n, cx, cy)
    }

    fn coarsen(&self) -> SchurField {
        let n = self.n;
        let nc = n / 2;
        let mut cx = vec![0.0; (nc + 1) * nc];
        let mut cy = vec![0.0; nc * (nc + 1)];
        for jc in 0..nc {
            for ic in 0..=nc {
                let i = 2 * ic;
                cx[ic + (nc + 1) * jc] =
                    0.5 * (self.cx[i + (n + 1) * (2 * jc)] + self.cx[i + (n + 1) * (2 * jc + 1)]);
            }
        }
        for jc in 0..=nc {
            for ic in 0..nc {
                let j = 2 * jc;
                cy[ic + nc * jc] = 0.5 * (self.cy[2 * ic + n * j] + self.cy[2 * ic + 1 + n * j]);
            }
        }
        SchurField { n: nc, cx, cy }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let n = self.n;
        let mut d = vec![0.0; n * n];
        for j in 0..n {
            for i in 0..n {
                d[i + n * j] = self.cx[i + (n + 1) * j]
                    + self.cx[i + 1 + (n + 1) * j]
                    + self.cy[i + n * j]
                    + self.cy[i + n * (j + 1)];
            }
        }
        d
    }

    pub fn apply(&self, p: &[f64], out: &mut [f64]) {
        let n = self.n;
        for j in 0..n {
            for i in 0..n {
                let k = i + n * j;
                let pk = p[k];
                let (w, e) = (self.cx[i + (n + 1) * j], self.cx[i + 1 + (n + 1) * j]);
                let (s, nn) = (self.cy[i + n * j], self.cy[i + n * (j + 1)]);
                let mut acc = (w + e + s + nn) * pk;
                if i > 0 {
                    acc -= w * p[k - 1];
                }
                if i + 1 < n {
                    acc -= e * p[k + 1];
                }
                if j > 0 {
                    acc -= s * p[k - n];
                }
                if j + 1 < n {
                    acc -= nn * p[k + n];
                }
                out[k] = acc;
            }
        }
    }

    fn gs_sweep(&self, diag: &[f64], b: &[f64], x: &mut [f64], forward: bool) {
        let n = self.n;
        let mut relax = |k: usize| {
            let (i, j) = (k % n, k / n);
            let mut acc = b[k];
            if i > 0 {
                acc += self.cx[i + (n + 1) * j] * x[k - 1];
            }
            if i + 1 < n {
                acc += self.cx[i + 1 + (n + 1) * j] * x[k + 1];
            }
            if j > 0 {
                acc += self.cy[i + n * j] * x[k - n];
            }
            if j + 1 < n {
                acc += self.cy[i + n * (j + 1)] * x[k + n];
            }
            x[k] = acc / diag[k];
        };
        if forward {
            (0..n * n).for_each(&mut relax);
        } else {
            (0..n * n).rev().for_each(&mut relax);
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let m = self.n * self.n;
        let mut d = DMatrix::zeros(m, m);
        let mut e = vec![0.0; m];
        let mut col = vec![0.0; m];
        for k in 0..m {
            e[k] = 1.0;
            self.apply(&e, &mut col);
            for (r, v) in col.iter().enumerate() {
                d[(r, k)] = *v;
            }
            e[k] = 0.0;
        }
        d
    }
}

struct Level {
    field: SchurField,
    diag: Vec<f64>,
}

/// Levels from fine to coarse; the last one is factorized.
pub struct MgHierarchy {
    levels: Vec<Level>,
    coarse: Cholesky<f64, Dyn>,
    pub pre_smooth: usize,
    pub post_smooth: usize,
    correction_weight: f64,
}

/// Increment rule for the inner-cycle count over outer iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ramp {
    /// `+1` every `fraction * max_iters` outer iterations.
    Periodic { fraction: f64 },
    /// `+1` each time the smallest step so far, relative to the first step,
    /// drops by another factor of `ratio`.
    Progress { ratio: f64 },
    /// Always `n_start`.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MgSchedule {
    pub n_start: usize,
    pub n_max: usize,
    pub ramp: Ramp,
}

impl Default for MgSchedule {
    fn default() -> Self {
        Self {
            n_start: 1,
            n_max: 6,
            ramp: Ramp::Periodic { fraction: 0.1 },
        }
    }
}

impl MgSchedule {
    pub fn fixed(n: usize) -> Self {
        Self {
            n_start: n,
            n_max: n,
            ramp: Ramp::None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_start < 1 || self.n_max < self.n_start {
            return Err(Error::InvalidArgument("mg schedule needs 1 <= n_start <= n_max".into()));
        }
        match self.ramp {
            Ramp::Periodic { fraction } if !(fraction > 0.0) => Err(Error::InvalidArgument(
                "ramp fraction must be positive".into(),
            )),
            Ramp::Progress { ratio } if !(ratio > 0.0 && ratio < 1.0) => Err(
                Error::InvalidArgument("ramp ratio must be in (0,1)".into()),
            ),
            _ => Ok(()),
        }
    }

    /// Cycle count at outer iteration `k`; `progress` is the smallest relative
    /// step length so far.
    pub fn cycles_at(&self, k: usize, max_iters: usize, progress: f64) -> usize {
        let extra = match self.ramp {
            Ramp::None => 0,
            Ramp::Periodic { fraction } => {
                let period = ((fraction * max_iters as f64).ceil() as usize).max(1);
                k / period
            }
            Ramp::Progress { ratio } => {
                if progress >= 1.0 || !progress.is_finite() {
                    0
                } else {
                    (progress.ln() / ratio.ln()).floor().max(0.0) as usize
                }
            }
        };
        (self.n_start + extra).min(self.n_max)
    }

    pub fn saturated(&self, n: usize) -> bool {
        n >= self.n_max
    }
}

pub fn build_hierarchy(field: &SchurField) -> Result<MgHierarchy> {
    if field.cx.iter().chain(&field.cy).any(|c| !(*c > 0.0)) {
        return Err(Error::InvalidArgument("non-positive coefficient".into()));
    }
    let mut n = field.n;
    if n <= COARSEST_SIDE || !n.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "grid {n}x{n} is not coarsenable (needs an even side above {COARSEST_SIDE})"
        )));
    }
    let mut levels = vec![Level {
        diag: field.diagonal(),
        field: field.clone(),
    }];
    while n > COARSEST_SIDE && n.is_multiple_of(2) {
        let c = levels.last().unwrap().field.coarsen();
        n = c.n;
        levels.push(Level {
            diag: c.diagonal(),
            field: c,
        });
    }
    if n > 2 * COARSEST_SIDE {
        return Err(Error::InvalidArgument(format!(
            "grid {}x{} coarsens only to {n}x{n}; side must be a power of two times at most {}",
            field.n,
            field.n,
            2 * COARSEST_SIDE
        )));
    }
    let coarse = Cholesky::new(levels.last().unwrap().field.to_dense())
        .ok_or_else(|| Error::Factorization("coarse grid operator".into()))?;
    Ok(MgHierarchy {
        levels,
        coarse,
        pre_smooth: 1,
        post_smooth: 1,
        correction_weight: DEFAULT_CORRECTION_WEIGHT,
    })
}

impl MgHierarchy {
    pub fn n(&self) -> usize {
        self.levels[0].field.n
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn correction_weight(&self) -> f64 {
        self.correction_weight
    }

    pub fn field(&self) -> &SchurField {
        &self.levels[0].field
    }

    fn cycle(&self, l: usize, b: &[f64], x: &mut [f64]) {
        let lev = &self.levels[l];
        if l + 1 == self.levels.len() {
            let sol = self.coarse.solve(&Vector::from_column_slice(b));
            x.copy_from_slice(sol.as_slice());
            return;
        }
        let n = lev.field.n;
        for _ in 0..self.pre_smooth {
            lev.field.gs_sweep(&lev.diag, b, x, true);
        }
        let mut r = vec![0.0; n * n];
        lev.field.apply(x, &mut r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        let nc = n / 2;
        let mut rc = vec![0.0; nc * nc];
        for j in 0..n {
            for i in 0..n {
                rc[i / 2 + nc * (j / 2)] += 0.5 * r[i + n * j];
            }
        }
        let mut ec = vec![0.0; nc * nc];
        self.cycle(l + 1, &rc, &mut ec);
        if l + 2 < self.levels.len() {
            self.cycle(l + 1, &rc, &mut ec);
        }
        for j in 0..n {
            for i in 0..n {
                x[i + n * j] += self.correction_weight * ec[i / 2 + nc * (j / 2)];
            }
        }
        for _ in 0..self.post_smooth {
            lev.field.gs_sweep(&lev.diag, b, x, false);
        }
    }

    /// Scalar `s` with `s·𝒢(S, n_mg)·S ≼ I`.
    ///
    /// The cycle error propagator `E` is S-self-adjoint with spectrum in
    /// `[1 − ω, 1)`, so `E^n ≽ 0` for even `n` and `E^n ≽ −(ω − 1)^n` for odd
    /// `n`. Hence `λ_max(𝒢S) ≤ 1 + (ω − 1)^n` for odd counts when `ω > 1`.
    pub fn domination_scale(&self, n_mg: usize) -> f64 {
        let excess = self.correction_weight - 1.0;
        if n_mg.is_multiple_of(2) || excess <= 0.0 {
            1.0
        } else {
            1.0 / (1.0 + excess.powi(n_mg as i32))
        }
    }

    pub fn set_correction_weight(&mut self, w: f64) -> Result<()> {
        if !(w > 0.0 && w < 2.0) {
            return Err(Error::InvalidArgument(format!(
                "correction weight {w} outside (0, 2)"
            )));
        }
        self.correction_weight = w;
        Ok(())
    }

    /// One W-cycle applied to the current iterate `x`.
    pub fn wcycle(&self, b: &[f64], x: &mut [f64]) {
        self.cycle(0, b, x);
    }

    pub fn apply_operator(&self, p: &Vector) -> Vector {
        let mut out = Vector::zeros(p.len());
        self.levels[0].field.apply(p.as_slice(), out.as_mut_slice());
        out
    }

    /// Relative residuals after `0..=cycles` W-cycles from a zero guess.
    pub fn residual_history(&self, rhs: &Vector, cycles: usize) -> Vec<f64> {
        let bn = rhs.norm();
        let mut x = vec![0.0; rhs.len()];
        let mut hist = vec![1.0];
        for _ in 0..cycles {
            self.wcycle(rhs.as_slice(), &mut x);
            let r = rhs - self.apply_operator(&Vector::from_column_slice(&x));
            hist.push(if bn > 0.0 { r.norm() / bn } else { 0.0 });
        }
        hist
    }

    /// Smallest cycle count reaching `tol`, if any up to `max_cycles`.
    pub fn cycles_to_tolerance(&self, rhs: &Vector, tol: f64, max_cycles: usize) -> Option<usize> {
        self.residual_history(rhs, max_cycles)
            .iter()
            .position(|r| *r < tol)
    }
}

/// `n_mg` W-cycles from a zero initial guess.
pub fn wcycle_apply(h: &MgHierarchy, rhs: &Vector, n_mg: usize) -> Vector {
    let mut x = vec![0.0; rhs.len()];
    for _ in 0..n_mg {
        h.wcycle(rhs.as_slice(), &mut x);
    }
    Vector::from_vec(x)
}

/// `𝒢(S, n_mg)` as an operator.
pub fn as_schur_tilde_inverse(h: Arc<MgHierarchy>, n_mg: usize) -> OpRef {
    let n = h.n() * h.n();
    Arc::new(SymmetricFnOperator::new(n, true, move |x| wcycle_apply(&h, x, n_mg)))
}

/// `𝒢(S, n_mg)` times [`MgHierarchy::domination_scale`], so that `S ≼ S̃`.
pub fn dominated_schur_tilde_inverse(h: Arc<MgHierarchy>, n_mg: usize) -> OpRef {
    let n = h.n() * h.n();
    let s = h.domination_scale(n_mg);
    Arc::new(SymmetricFnOperator::new(n, true, move |x| {
        let mut y = wcycle_apply(&h, x, n_mg);
        if s != 1.0 {
            y *= s;
        }
        y
    }))
}

/// The fine-level 5-point operator as an action.
pub struct StencilOperator {
    h: Arc<MgHierarchy>,
}

impl StencilOperator {
    pub fn new(h: Arc<MgHierarchy>) -> Self {
        Self { h }
    }
}

impl LinearOperator for StencilOperator {
    fn nrows(&self) -> usize {
        self.h.n() * self.h.n()
    }
    fn ncols(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, x: &Vector) -> Vector {
        self.h.apply_operator(x)
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
