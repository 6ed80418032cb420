//! Quasilinear elliptic benchmark `∇·(ν(|∇u|)∇u) = g` on the unit square in
//! mixed form.
//!
//! The flux `σ = ν(|∇u|)∇u` lives on cell faces (lowest-order face elements
//! with a lumped mass matrix), cells carry the divergence constraint. With
//! `ν̃(s) = ν(s)s` the flux problem is
//!
//! ```text
//! min f(σ) = ∫ Ψ(|σ|) − ∫_∂Ω g_D σ·n   subject to  div σ = g,
//! ```
//!
//! where `Ψ(t) = ∫₀ᵗ ν̃⁻¹`. Integrals over a cell use its four corners with
//! weight `h²/4`; at a corner the flux vector is assembled from the two
//! adjacent faces. This makes every mass matrix diagonal.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{check_dim, Error, Result};
use crate::multigrid::{
    build_hierarchy, dominated_schur_tilde_inverse, wcycle_apply, MgHierarchy, SchurField,
};
use crate::operator::{
    CsrOperator, DiagonalOperator, LinearOperator, OpRef, SpdOperator, SpdRef,
    SymmetricFnOperator, Vector,
};
use crate::problems::{ProblemSpec, SchurApprox, SchurLevel};
use crate::projection::{pcg, ExactProjector};

/// Relative tolerance of the Schur solves treated as exact.
pub const EXACT_SCHUR_RTOL: f64 = 1e-13;

/// `ν(s) = a0 + a1·exp(−a2·s)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuCoefficient {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
}

impl NuCoefficient {
    pub fn new(a0: f64, a1: f64, a2: f64) -> Result<Self> {
        if !(a0 > 0.0 && a1 >= 0.0 && a2 > 0.0) || !(a0 + a1 + a2).is_finite() {
            return Err(Error::InvalidArgument(format!(
                "coefficient ({a0}, {a1}, {a2}) needs a0 > 0, a1 ≥ 0, a2 > 0"
            )));
        }
        let nu = Self { a0, a1, a2 };
        if !(nu.nu1() > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "ν̃ is not strictly increasing for ({a0}, {a1}, {a2}): a0 ≤ a1·e⁻²"
            )));
        }
        Ok(nu)
    }

    pub fn nu(&self, s: f64) -> f64 {
        self.a0 + self.a1 * (-self.a2 * s).exp()
    }

    pub fn nu_prime(&self, s: f64) -> f64 {
        -self.a1 * self.a2 * (-self.a2 * s).exp()
    }

    pub fn nu_tilde(&self, s: f64) -> f64 {
        self.nu(s) * s
    }

    pub fn nu_tilde_prime(&self, s: f64) -> f64 {
        self.a0 + self.a1 * (-self.a2 * s).exp() * (1.0 - self.a2 * s)
    }

    /// Lipschitz constant of `ν̃`, equal to `sup ν = a0 + a1`.
    pub fn nu0(&self) -> f64 {
        self.a0 + self.a1
    }

    /// Monotonicity constant `inf ν̃' = a0 − a1·e⁻²`, attained at `s = 2/a2`.
    pub fn nu1(&self) -> f64 {
        self.a0 - self.a1 * (-2.0f64).exp()
    }

    /// `sup_s ν(s)/ν̃'(s)`, the curvature of `Ψ` relative to the weighted
    /// metric. Evaluated on a fine grid around `2/a2` and refined.
    pub fn metric_ratio_bound(&self) -> f64 {
        let ratio = |s: f64| self.nu(s) / self.nu_tilde_prime(s);
        let span = 12.0 / self.a2;
        let samples = 4000;
        let mut best = (0.0, ratio(0.0));
        for k in 1..=samples {
            let s = span * k as f64 / samples as f64;
            let r = ratio(s);
            if r > best.1 {
                best = (s, r);
            }
        }
        let (mut lo, mut hi) = ((best.0 - span / samples as f64).max(0.0), best.0 + span / samples as f64);
        for _ in 0..100 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if ratio(m1) < ratio(m2) {
                lo = m1;
            } else {
                hi = m2;
            }
        }
        best.1.max(ratio(0.5 * (lo + hi)))
    }

    /// `ν̃⁻¹(t)`: bisection on `[t/(a0+a1), t/a0]`, then safeguarded Newton.
    pub fn nu_tilde_inverse(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::InvalidArgument(format!("ν̃⁻¹ needs t ≥ 0, got {t}")));
        }
        if t == 0.0 {
            return Ok(0.0);
        }
        let mut lo = t / self.nu0();
        let mut hi = t / self.a0;
        let res = |s: f64| self.nu_tilde(s) - t;
        if res(lo) > 1e-14 * t || res(hi) < -1e-14 * t {
            return Err(Error::NotConverged {
                what: "ν̃⁻¹ bracket".into(),
                iterations: 0,
                estimate: t,
            });
        }
        for _ in 0..6 {
            let mid = 0.5 * (lo + hi);
            if res(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let goal = 1e-13 * (1.0 + t);
        let mut s = 0.5 * (lo + hi);
        for _ in 0..100 {
            let r = res(s);
            if r.abs() <= goal {
                return Ok(s);
            }
            if r > 0.0 {
                hi = s;
            } else {
                lo = s;
            }
            let newton = s - r / self.nu_tilde_prime(s);
            s = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo <= 4.0 * f64::EPSILON * hi {
                return Ok(s);
            }
        }
        Err(Error::NotConverged {
            what: "ν̃⁻¹ Newton".into(),
            iterations: 100,
            estimate: res(s),
        })
    }

    /// `Ψ(t)` given `s = ν̃⁻¹(t)`.
    ///
    /// Integrating by parts, `Ψ(t) = t·s − ∫₀ˢ ν̃ = t·s − a0·s²/2 − a1·G(a2·s)/a2²`
    /// with `G(x) = 1 − e⁻ˣ(1 + x)`.
    pub fn psi_with(&self, t: f64, s: f64) -> f64 {
        let x = self.a2 * s;
        t * s - 0.5 * self.a0 * s * s - self.a1 * g_fn(x) / (self.a2 * self.a2)
    }

    pub fn psi(&self, t: f64) -> Result<f64> {
        Ok(self.psi_with(t, self.nu_tilde_inverse(t)?))
    }

    /// `Ψ(t)` by adaptive Gauss–Legendre quadrature of `ν̃⁻¹`.
    pub fn psi_quadrature(&self, t: f64, tol: f64) -> Result<f64> {
        if t == 0.0 {
            return Ok(0.0);
        }
        let f = |x: f64| self.nu_tilde_inverse(x);
        adaptive_gauss(&f, 0.0, t, tol * (1.0 + t * t), 40)
    }
}

fn g_fn(x: f64) -> f64 {
    if x < 0.1 {
        // Σ_{m≥2} (−1)^m (m−1) x^m / m!
        let mut term = x; // x^m / m! at m = 1
        let mut sum = 0.0;
        for m in 2..30 {
            term *= x / m as f64;
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * (m - 1) as f64 * term;
            if term < 1e-18 * sum.abs() {
                break;
            }
        }
        sum
    } else {
        -(-x).exp_m1() - x * (-x).exp()
    }
}

const GL5_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL5_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];

fn gauss5(f: &dyn Fn(f64) -> Result<f64>, a: f64, b: f64) -> Result<f64> {
    let (c, r) = (0.5 * (a + b), 0.5 * (b - a));
    let mut acc = 0.0;
    for (x, w) in GL5_NODES.iter().zip(GL5_WEIGHTS) {
        acc += w * f(c + r * x)?;
    }
    Ok(acc * r)
}

fn adaptive_gauss(f: &dyn Fn(f64) -> Result<f64>, a: f64, b: f64, tol: f64, depth: usize) -> Result<f64> {
    let whole = gauss5(f, a, b)?;
    let m = 0.5 * (a + b);
    let left = gauss5(f, a, m)?;
    let right = gauss5(f, m, b)?;
    if (left + right - whole).abs() <= tol {
        return Ok(left + right);
    }
    if depth == 0 {
        return Err(Error::NotConverged {
            what: "adaptive quadrature".into(),
            iterations: 40,
            estimate: (left + right - whole).abs(),
        });
    }
    Ok(adaptive_gauss(f, a, m, 0.5 * tol, depth - 1)? + adaptive_gauss(f, m, b, 0.5 * tol, depth - 1)?)
}

/// Gauss–Legendre rule on `[−1, 1]`, 4 points.
const GL4: [(f64, f64); 4] = [
    (-0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
    (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
];

/// `n × n` cells on the unit square.
///
/// Flux unknowns are ordered x-normal faces first (`i + (n+1)·j`, face at
/// `x = i·h`), then y-normal faces (`i + n·j`, face at `y = j·h`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MixedGrid {
    pub n: usize,
}

impl MixedGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument("grid needs at least 2 cells per side".into()));
        }
        Ok(Self { n })
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn num_cells(&self) -> usize {
        self.n * self.n
    }

    pub fn num_x_faces(&self) -> usize {
        (self.n + 1) * self.n
    }

    pub fn num_flux(&self) -> usize {
        2 * (self.n + 1) * self.n
    }

    pub fn xface(&self, i: usize, j: usize) -> usize {
        i + (self.n + 1) * j
    }

    pub fn yface(&self, i: usize, j: usize) -> usize {
        self.num_x_faces() + i + self.n * j
    }

    /// `(Bσ)_K = h·(σ_right − σ_left + σ_top − σ_bottom)`, the flux out of `K`.
    pub fn divergence(&self) -> CsrOperator {
        let n = self.n;
        let h = self.h();
        let mut t = Vec::with_capacity(4 * n * n);
        for j in 0..n {
            for i in 0..n {
                let k = i + n * j;
                t.push((k, self.xface(i + 1, j), h));
                t.push((k, self.xface(i, j), -h));
                t.push((k, self.yface(i, j + 1), h));
                t.push((k, self.yface(i, j), -h));
            }
        }
        CsrOperator::from_triplets(n * n, self.num_flux(), &t).expect("indices in range")
    }

    /// Corner flux vectors `(σ_x, σ_y)` with the two face indices they use,
    /// four per cell.
    fn corners(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.n;
        (0..n * n).flat_map(move |k| {
            let (i, j) = (k % n, k / n);
            [(0, 0), (1, 0), (0, 1), (1, 1)]
                .into_iter()
                .map(move |(a, b)| (self.xface(i + a, j), self.yface(i, j + b)))
        })
    }

    /// Diagonal of the lumped mass matrix with corner weights `w`.
    fn lumped_mass(&self, w: impl Iterator<Item = f64>) -> Vector {
        let q = 0.25 * self.h() * self.h();
        let mut m = Vector::zeros(self.num_flux());
        for ((fx, fy), wc) in self.corners().zip(w) {
            m[fx] += q * wc;
            m[fy] += q * wc;
        }
        m
    }

    /// `M(1)`: `h²` on interior faces, `h²/2` on boundary faces.
    pub fn mass(&self) -> Vector {
        self.lumped_mass(std::iter::repeat(1.0))
    }

    /// Midpoint and unit normal of each flux unknown.
    pub fn face_geometry(&self, f: usize) -> ((f64, f64), (f64, f64)) {
        let h = self.h();
        if f < self.num_x_faces() {
            let (i, j) = (f % (self.n + 1), f / (self.n + 1));
            ((i as f64 * h, (j as f64 + 0.5) * h), (1.0, 0.0))
        } else {
            let g = f - self.num_x_faces();
            let (i, j) = (g % self.n, g / self.n);
            (((i as f64 + 0.5) * h, j as f64 * h), (0.0, 1.0))
        }
    }

    /// Outward sign of a boundary face, `None` for interior faces.
    pub fn boundary_sign(&self, f: usize) -> Option<f64> {
        let n = self.n;
        if f < self.num_x_faces() {
            let i = f % (n + 1);
            match i {
                0 => Some(-1.0),
                _ if i == n => Some(1.0),
                _ => None,
            }
        } else {
            let j = (f - self.num_x_faces()) / n;
            match j {
                0 => Some(-1.0),
                _ if j == n => Some(1.0),
                _ => None,
            }
        }
    }
}

/// Schur coefficients `c_f = h²/m_f` for a diagonal metric `m`, so that
/// `B·diag(m)⁻¹·Bᵀ` is the 5-point operator of [`SchurField`].
pub fn assemble_schur_field(grid: &MixedGrid, m: &Vector) -> Result<SchurField> {
    check_dim("schur field", grid.num_flux(), m.len())?;
    let h2 = grid.h() * grid.h();
    let nx = grid.num_x_faces();
    let cx = m.iter().take(nx).map(|v| h2 / v).collect();
    let cy = m.iter().skip(nx).map(|v| h2 / v).collect();
    SchurField::new(grid.n, cx, cy)
}

/// Analytic data of the manufactured solution `u = sin x · sin y`.
#[derive(Debug, Clone, Copy)]
pub struct Manufactured {
    pub nu: NuCoefficient,
}

impl Manufactured {
    pub fn u(&self, x: f64, y: f64) -> f64 {
        x.sin() * y.sin()
    }

    pub fn grad_u(&self, x: f64, y: f64) -> (f64, f64) {
        (x.cos() * y.sin(), x.sin() * y.cos())
    }

    /// `σ = ν(|∇u|)∇u`.
    pub fn flux(&self, x: f64, y: f64) -> (f64, f64) {
        let (ux, uy) = self.grad_u(x, y);
        let nu = self.nu.nu(ux.hypot(uy));
        (nu * ux, nu * uy)
    }

    /// `div σ = ν(r)Δu + ν'(r)∇r·∇u` with `r = |∇u|`.
    pub fn source(&self, x: f64, y: f64) -> f64 {
        let (sx, cx, sy, cy) = (x.sin(), x.cos(), y.sin(), y.cos());
        let r = (cx * sy).hypot(sx * cy);
        let lap = -2.0 * sx * sy;
        let mut g = self.nu.nu(r) * lap;
        if r > 0.0 {
            let grad_r_dot = sx * sy * (cx * cx * (2.0 * y).cos() + cy * cy * (2.0 * x).cos()) / r;
            g += self.nu.nu_prime(r) * grad_r_dot;
        }
        g
    }

    /// Sixth-order central difference of `div σ`.
    pub fn source_fd(&self, x: f64, y: f64, d: f64) -> f64 {
        const C: [f64; 3] = [3.0 / 4.0, -3.0 / 20.0, 1.0 / 60.0];
        let mut acc = 0.0;
        for (k, c) in C.iter().enumerate() {
            let s = (k + 1) as f64 * d;
            acc += c * (self.flux(x + s, y).0 - self.flux(x - s, y).0);
            acc += c * (self.flux(x, y + s).1 - self.flux(x, y - s).1);
        }
        acc / d
    }

    /// Max deviation of the analytic source from its finite-difference
    /// check over interior sample points.
    pub fn validate_source(&self, samples_per_side: usize) -> f64 {
        let mut worst = 0.0f64;
        for a in 1..=samples_per_side {
            for b in 1..=samples_per_side {
                let x = a as f64 / (samples_per_side + 1) as f64;
                let y = b as f64 / (samples_per_side + 1) as f64;
                let e = (self.source(x, y) - self.source_fd(x, y, 1e-3)).abs();
                worst = worst.max(e / (1.0 + self.source(x, y).abs()));
            }
        }
        worst
    }
}

/// Benchmark constants derived from `ν`.
#[derive(Debug, Clone, Copy)]
pub struct PdeConstants {
    pub nu0: f64,
    pub nu1: f64,
    /// `ν₀⁻¹`.
    pub mu: f64,
    /// `2ν₁⁻¹`, the bound used for step-size rules.
    pub l: f64,
    /// `ν₁⁻¹`, the sharp curvature bound of the lumped energy in `M(1)`.
    pub l_sharp: f64,
    /// `ν₀/ν₁`.
    pub kappa: f64,
    /// `2ν₀/ν₁`.
    pub kappa_wide: f64,
    /// `sup ν/ν̃'`, curvature relative to the weighted metric `M(σ)`.
    pub l_local: f64,
}

impl PdeConstants {
    pub fn of(nu: &NuCoefficient) -> Self {
        let (nu0, nu1) = (nu.nu0(), nu.nu1());
        Self {
            nu0,
            nu1,
            mu: 1.0 / nu0,
            l: 2.0 / nu1,
            l_sharp: 1.0 / nu1,
            kappa: nu0 / nu1,
            kappa_wide: 2.0 * nu0 / nu1,
            l_local: nu.metric_ratio_bound(),
        }
    }
}

const MAX_EXACT_CYCLES: usize = 20;

/// The discretized flux problem, shifted so that the constraint is
/// homogeneous: the unknown is `w` with `σ = σ_p + w` and `Bw = 0`.
pub struct PdeProblem {
    grid: MixedGrid,
    nu: NuCoefficient,
    b: Arc<CsrOperator>,
    /// Cell integrals of the source.
    g_bar: Vector,
    /// Boundary pairing `∫_∂Ω g_D v·n` per face.
    b_dirichlet: Vector,
    sigma_p: Vector,
    mass: Vector,
    reference: SpdRef,
    exact_flux: Option<Vector>,
    exact_cycles: Option<usize>,
}

impl PdeProblem {
    /// Builds `g` and `g_D` from `u = sin x · sin y`.
    pub fn manufactured(n: usize, nu: NuCoefficient) -> Result<Self> {
        let grid = MixedGrid::new(n)?;
        let man = Manufactured { nu };
        let dev = man.validate_source(9);
        if !(dev <= 1e-8) {
            return Err(Error::InvalidArgument(format!(
                "manufactured source disagrees with finite differences by {dev:e}"
            )));
        }
        let h = grid.h();
        let mut g_bar = Vector::zeros(grid.num_cells());
        for j in 0..n {
            for i in 0..n {
                let mut acc = 0.0;
                for (px, wx) in GL4 {
                    for (py, wy) in GL4 {
                        let x = (i as f64 + 0.5 + 0.5 * px) * h;
                        let y = (j as f64 + 0.5 + 0.5 * py) * h;
                        acc += wx * wy * man.source(x, y);
                    }
                }
                g_bar[i + n * j] = acc * 0.25 * h * h;
            }
        }
        let mut b_dirichlet = Vector::zeros(grid.num_flux());
        let mut exact = Vector::zeros(grid.num_flux());
        for f in 0..grid.num_flux() {
            let ((x, y), (nx, ny)) = grid.face_geometry(f);
            let s = man.flux(x, y);
            exact[f] = s.0 * nx + s.1 * ny;
            if let Some(sign) = grid.boundary_sign(f) {
                let mut acc = 0.0;
                for (p, w) in GL4 {
                    let t = 0.5 * p * h;
                    let (px, py) = if nx != 0.0 { (x, y + t) } else { (x + t, y) };
                    acc += w * man.u(px, py);
                }
                b_dirichlet[f] = sign * acc * 0.5 * h;
            }
        }
        Self::from_data(grid, nu, g_bar, b_dirichlet, Some(exact))
    }

    /// General data: cell integrals of `g` and the boundary pairing vector.
    pub fn from_data(
        grid: MixedGrid,
        nu: NuCoefficient,
        g_bar: Vector,
        b_dirichlet: Vector,
        exact_flux: Option<Vector>,
    ) -> Result<Self> {
        check_dim("pde source", grid.num_cells(), g_bar.len())?;
        check_dim("pde boundary data", grid.num_flux(), b_dirichlet.len())?;
        let b = Arc::new(grid.divergence());
        let mass = grid.mass();
        let reference: SpdRef = Arc::new(DiagonalOperator::new(mass.clone())?);
        let mut p = Self {
            grid,
            nu,
            b,
            g_bar,
            b_dirichlet,
            sigma_p: Vector::zeros(grid.num_flux()),
            mass,
            reference,
            exact_flux,
            exact_cycles: None,
        };
        let solver = p.schur_solver(&p.mass)?;
        let y = solver.solve(&p.g_bar)?;
        p.sigma_p = p.b.apply_transpose(&y).component_div(&p.mass);
        p.exact_cycles = p.measure_exact_cycles(1e-8, MAX_EXACT_CYCLES);
        Ok(p)
    }

    pub fn grid(&self) -> &MixedGrid {
        &self.grid
    }

    pub fn nu(&self) -> &NuCoefficient {
        &self.nu
    }

    pub fn constants(&self) -> PdeConstants {
        PdeConstants::of(&self.nu)
    }

    pub fn source_integrals(&self) -> &Vector {
        &self.g_bar
    }

    pub fn dirichlet_pairing(&self) -> &Vector {
        &self.b_dirichlet
    }

    pub fn particular_flux(&self) -> &Vector {
        &self.sigma_p
    }

    pub fn exact_flux(&self) -> Option<&Vector> {
        self.exact_flux.as_ref()
    }

    pub fn mass(&self) -> &Vector {
        &self.mass
    }

    /// Full flux `σ = σ_p + w`.
    pub fn flux(&self, w: &Vector) -> Vector {
        &self.sigma_p + w
    }

    /// Cycles whose W-cycle residual reaches `1e-8` on `S(1)`, rounded up to
    /// an even count so that no domination scaling is needed.
    pub fn exact_cycles(&self) -> usize {
        let n = self.exact_cycles.unwrap_or(MAX_EXACT_CYCLES);
        n + n % 2
    }

    /// Cycle count measured at setup, `None` if `1e-8` was not reached
    /// within the cap.
    pub fn measured_exact_cycles(&self) -> Option<usize> {
        self.exact_cycles
    }

    /// Smallest cycle count reaching `tol` on `S(1)` for a seeded rhs.
    pub fn measure_exact_cycles(&self, tol: f64, max_cycles: usize) -> Option<usize> {
        let h = self.hierarchy(&self.mass).ok()?;
        let rhs = crate::operator::seeded_vector(self.grid.num_cells(), 11);
        h.cycles_to_tolerance(&rhs, tol, max_cycles)
    }

    /// `|σ_c|` at all corners.
    fn corner_norms(&self, sigma: &Vector) -> Vec<f64> {
        self.grid
            .corners()
            .map(|(fx, fy)| sigma[fx].hypot(sigma[fy]))
            .collect()
    }

    fn corner_s(&self, t: &[f64]) -> Result<Vec<f64>> {
        t.iter().map(|t| self.nu.nu_tilde_inverse(*t)).collect()
    }

    /// `f(σ)` on the unshifted flux.
    pub fn energy(&self, sigma: &Vector) -> Result<f64> {
        check_dim("pde energy", self.grid.num_flux(), sigma.len())?;
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pde energy argument".into()));
        }
        let t = self.corner_norms(sigma);
        let s = self.corner_s(&t)?;
        let q = 0.25 * self.grid.h() * self.grid.h();
        let psi: f64 = t.iter().zip(&s).map(|(t, s)| self.nu.psi_with(*t, *s)).sum();
        Ok(q * psi - self.b_dirichlet.dot(sigma))
    }

    /// Energy with `Ψ` from quadrature instead of its closed form.
    pub fn energy_quadrature(&self, sigma: &Vector, tol: f64) -> Result<f64> {
        check_dim("pde energy", self.grid.num_flux(), sigma.len())?;
        let q = 0.25 * self.grid.h() * self.grid.h();
        let mut psi = 0.0;
        for t in self.corner_norms(sigma) {
            psi += self.nu.psi_quadrature(t, tol)?;
        }
        Ok(q * psi - self.b_dirichlet.dot(sigma))
    }

    /// Diagonal of `M(σ)`, corner weights `1/ν(ν̃⁻¹(|σ_c|))`.
    pub fn weighted_mass(&self, sigma: &Vector) -> Result<Vector> {
        check_dim("pde metric", self.grid.num_flux(), sigma.len())?;
        let s = self.corner_s(&self.corner_norms(sigma))?;
        Ok(self.grid.lumped_mass(s.into_iter().map(|s| 1.0 / self.nu.nu(s))))
    }

    pub fn weighted_mass_metric(&self, sigma: &Vector) -> Result<SpdRef> {
        Ok(Arc::new(DiagonalOperator::new(self.weighted_mass(sigma)?)?))
    }

    /// `∇f(σ) = M(σ)σ − b_D`.
    pub fn gradient(&self, sigma: &Vector) -> Result<Vector> {
        let m = self.weighted_mass(sigma)?;
        Ok(m.component_mul(sigma) - &self.b_dirichlet)
    }

    /// Discrete `L²` error `‖σ − σ_ex‖` in the lumped mass norm.
    pub fn l2_error(&self, sigma: &Vector) -> Option<f64> {
        let ex = self.exact_flux.as_ref()?;
        let d = sigma - ex;
        Some(d.component_mul(&d).dot(&self.mass).sqrt())
    }

    /// `‖Bσ − ḡ‖`.
    pub fn constraint_residual(&self, sigma: &Vector) -> f64 {
        (self.b.apply(sigma) - &self.g_bar).norm()
    }

    fn diagonal_of(m: &SpdRef) -> Result<Vector> {
        m.diagonal()
            .ok_or_else(|| Error::InvalidArgument("pde metric must be diagonal".into()))
    }

    pub fn hierarchy(&self, m: &Vector) -> Result<MgHierarchy> {
        build_hierarchy(&assemble_schur_field(&self.grid, m)?)
    }

    /// PCG on `S = B·diag(m)⁻¹·Bᵀ`, preconditioned by two W-cycles.
    pub fn schur_solver(&self, m: &Vector) -> Result<SpdRef> {
        let h = Arc::new(self.hierarchy(m)?);
        Ok(Arc::new(MgPcg { h }))
    }
}

struct MgPcg {
    h: Arc<MgHierarchy>,
}

impl LinearOperator for MgPcg {
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

impl SpdOperator for MgPcg {
    fn solve(&self, b: &Vector) -> Result<Vector> {
        check_dim("schur pcg", self.nrows(), b.len())?;
        let h = self.h.clone();
        let pre = SymmetricFnOperator::new(self.nrows(), true, move |x| wcycle_apply(&h, x, 2));
        let a = crate::multigrid::StencilOperator::new(self.h.clone());
        Ok(pcg(&a, b, Some(&pre), EXACT_SCHUR_RTOL, 200)?.0)
    }
}

impl ProblemSpec for PdeProblem {
    fn dim(&self) -> usize {
        self.grid.num_flux()
    }

    fn eval_f(&self, w: &Vector) -> Result<f64> {
        check_dim("pde f", self.dim(), w.len())?;
        self.energy(&self.flux(w))
    }

    fn eval_grad(&self, w: &Vector) -> Result<Vector> {
        check_dim("pde gradient", self.dim(), w.len())?;
        self.gradient(&self.flux(w))
    }

    fn constraint(&self) -> OpRef {
        self.b.clone()
    }

    fn metric(&self, w: &Vector) -> Result<SpdRef> {
        check_dim("pde metric", self.dim(), w.len())?;
        self.weighted_mass_metric(&self.flux(w))
    }

    fn reference_metric(&self) -> SpdRef {
        self.reference.clone()
    }

    /// Sharp bounds `(ν₀⁻¹, ν₁⁻¹)` in `M(1)`; unknown in other metrics.
    fn mu_l_in(&self, m: &SpdRef) -> Option<(f64, f64)> {
        let d = m.diagonal()?;
        let same = d
            .iter()
            .zip(self.mass.iter())
            .all(|(a, b)| (a - b).abs() <= 1e-14 * b);
        same.then(|| {
            let c = self.constants();
            (c.mu, c.l_sharp)
        })
    }

    fn schur_approx(&self, m: &SpdRef, level: SchurLevel) -> Result<SchurApprox> {
        let d = Self::diagonal_of(m)?;
        match level {
            SchurLevel::Exact => {
                let solver = self.schur_solver(&d)?;
                let n = self.grid.num_cells();
                Ok(SchurApprox {
                    tilde_inverse: Arc::new(SymmetricFnOperator::new(n, true, move |x| {
                        solver.solve(x).expect("schur pcg")
                    })),
                    cycles: 0,
                })
            }
            SchurLevel::Cycles(n_mg) => {
                if n_mg == 0 {
                    return Err(Error::InvalidArgument("n_mg must be at least 1".into()));
                }
                let h = Arc::new(self.hierarchy(&d)?);
                Ok(SchurApprox {
                    tilde_inverse: dominated_schur_tilde_inverse(h, n_mg),
                    cycles: n_mg,
                })
            }
        }
    }

    fn exact_projector(&self, m: &SpdRef) -> Result<ExactProjector> {
        let d = Self::diagonal_of(m)?;
        ExactProjector::new(m.clone(), self.b.clone(), self.schur_solver(&d)?)
    }

    fn exactness_level(&self) -> SchurLevel {
        SchurLevel::Cycles(self.exact_cycles())
    }

    fn as_dyn(&self) -> &dyn ProblemSpec {
        self
    }
}

/// Least-squares slope of `log e` against `log h`.
pub fn convergence_slope(h: &[f64], e: &[f64]) -> f64 {
    let n = h.len() as f64;
    let xs: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Writes a field as a one-line text header followed by little-endian `f64`s.
pub fn write_snapshot(path: &Path, grid: &MixedGrid, name: &str, data: &Vector) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "ippgd-snapshot n={} h={:.17e} field={} len={}",
        grid.n,
        grid.h(),
        name,
        data.len()
    )?;
    for v in data.iter() {
        f.write_all(&v.to_le_bytes())?;
    }
    f.flush()?;
    Ok(())
}

/// Reads a snapshot written by [`write_snapshot`]; returns `(n, field, data)`.
pub fn read_snapshot(path: &Path) -> Result<(usize, String, Vector)> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut header = String::new();
    r.read_line(&mut header)?;
    let mut n = None;
    let mut name = None;
    let mut len = None;
    for tok in header.split_whitespace().skip(1) {
        match tok.split_once('=') {
            Some(("n", v)) => n = v.parse().ok(),
            Some(("field", v)) => name = Some(v.to_string()),
            Some(("len", v)) => len = v.parse::<usize>().ok(),
            _ => {}
        }
    }
    let (n, name, len) = match (n, name, len) {
        (Some(n), Some(name), Some(len)) if header.starts_with("ippgd-snapshot") => (n, name, len),
        _ => return Err(Error::Parse(format!("bad snapshot header: {}", header.trim()))),
    };
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != 8 * len {
        return Err(Error::Parse(format!(
            "snapshot holds {} bytes, header says {len} values",
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect::<Vec<_>>();
    Ok((n, name, Vector::from_vec(data)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nu_constants() {
        let a = NuCoefficient::new(1.0, 1.0, 5.0).unwrap();
        assert_eq!(a.nu0(), 2.0);
        assert!((a.nu1() - 0.8647).abs() < 1e-4);
        let b = NuCoefficient::new(1.0, 6.0, 5.0).unwrap();
        assert_eq!(b.nu0(), 7.0);
        assert!((b.nu1() - 0.18799).abs() < 1e-5);
    }

    #[test]
    fn g_series_matches_direct() {
        for x in [0.05f64, 0.0999, 0.1] {
            let direct = 1.0 - (-x).exp() * (1.0 + x);
            assert!((g_fn(x) - direct).abs() < 1e-15, "{x}");
        }
    }

    #[test]
    fn mass_of_unit_weight() {
        let g = MixedGrid::new(4).unwrap();
        let m = g.mass();
        let h2 = g.h() * g.h();
        assert!((m[g.xface(0, 1)] - 0.5 * h2).abs() < 1e-16);
        assert!((m[g.xface(2, 1)] - h2).abs() < 1e-16);
        assert!((m[g.yface(1, 4)] - 0.5 * h2).abs() < 1e-16);
    }
}
