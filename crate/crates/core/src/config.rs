//! TOML run configurations for the command-line tool.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::bench::{default_bench, BenchCase, BenchConfig};
use crate::dynamics::{FlowConfig, Integrator};
use crate::error::{Error, Result};
use crate::multigrid::{MgSchedule, Ramp};
use crate::pde::{NuCoefficient, PdeConstants, PdeProblem};
use crate::problems::{gen_quadratic, MetricModel, ProblemSpec, QuadraticInstance, SchurLevel};
use crate::solver::{MetricPolicy, Method, SchurMode, SolverConfig};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub kind: String,
    pub dim: Option<usize>,
    pub constraints: Option<usize>,
    pub kappa: Option<f64>,
    pub seed: Option<u64>,
    pub schur_delta: Option<f64>,
    pub metric_cond: Option<f64>,
    /// Adds `gain·u_i²/(1+u_i²)` to the metric diagonal.
    pub metric_gain: Option<f64>,
    pub grid: Option<usize>,
    pub nu: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub method: Option<String>,
    pub alpha: Option<f64>,
    pub tau: Option<f64>,
    pub metric_policy: Option<String>,
    pub metric_every: Option<usize>,
    pub schur: Option<String>,
    pub mg_start: Option<usize>,
    pub mg_max: Option<usize>,
    pub mg_ramp: Option<String>,
    pub mg_ramp_fraction: Option<f64>,
    pub mg_ramp_ratio: Option<f64>,
    pub max_iters: Option<usize>,
    pub grad_tol: Option<f64>,
    pub step_tol: Option<f64>,
    pub estimate_delta: Option<bool>,
    pub estimate_theta: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub trace: Option<PathBuf>,
    pub trajectory: Option<PathBuf>,
    pub report: Option<PathBuf>,
    #[serde(default)]
    pub include_wall: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveFile {
    pub problem: ProblemSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseSection {
    pub nu: [f64; 3],
    pub tau: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub grids: Option<Vec<usize>>,
    pub methods: Option<Vec<String>>,
    pub cases: Option<Vec<CaseSection>>,
    pub max_iters: Option<usize>,
    pub grad_tol: Option<f64>,
    pub step_tol: Option<f64>,
    pub ramp_ratio: Option<f64>,
    pub alpha_scale: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchFile {
    #[serde(default)]
    pub bench: BenchSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    pub integrator: Option<String>,
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    pub alpha: Option<f64>,
    pub metric_policy: Option<String>,
    /// 0 for an exact Schur inverse.
    pub schur_cycles: Option<usize>,
    pub lambda: Option<f64>,
    /// `zero` or `ones`.
    pub start: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowFile {
    pub problem: ProblemSection,
    #[serde(default)]
    pub flow: FlowSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn bad(key: &str, msg: impl std::fmt::Display) -> Error {
    Error::Parse(format!("invalid value for key `{key}`: {msg}"))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("cannot read config {}: {e}", path.display())))
}

fn parse<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Parse(e.to_string().trim_end().to_string()))
}

pub fn load_solve(path: &Path) -> Result<SolveFile> {
    parse(&read(path)?)
}

pub fn parse_solve(text: &str) -> Result<SolveFile> {
    parse(text)
}

pub fn load_bench(path: &Path) -> Result<BenchFile> {
    parse(&read(path)?)
}

pub fn load_flow(path: &Path) -> Result<FlowFile> {
    parse(&read(path)?)
}

pub enum BuiltProblem {
    Quadratic(QuadraticInstance),
    Pde(PdeProblem),
}

impl BuiltProblem {
    pub fn spec(&self) -> &dyn ProblemSpec {
        match self {
            BuiltProblem::Quadratic(q) => q,
            BuiltProblem::Pde(p) => p,
        }
    }
}

impl ProblemSection {
    pub fn build(&self) -> Result<BuiltProblem> {
        match self.kind.as_str() {
            "quadratic" => {
                let dim = self.dim.unwrap_or(20);
                let rows = self.constraints.unwrap_or(dim / 4);
                let mut q = gen_quadratic(dim, rows, self.kappa.unwrap_or(10.0), self.seed.unwrap_or(1))
                    .map_err(|e| bad("problem", e))?;
                if let Some(c) = self.metric_cond {
                    if !(c >= 1.0) {
                        return Err(bad("problem.metric_cond", "must be >= 1"));
                    }
                    q = q.with_random_metric(c);
                }
                if let Some(g) = self.metric_gain {
                    if !(g >= 0.0) {
                        return Err(bad("problem.metric_gain", "must be non-negative"));
                    }
                    let base = match &q.metric_model {
                        MetricModel::Fixed(m) => m.clone(),
                        MetricModel::StateDependent { base, .. } => base.clone(),
                    };
                    q = q.with_metric(MetricModel::StateDependent { base, gain: g });
                }
                let delta = self.schur_delta.unwrap_or(0.0);
                if !(0.0..1.0).contains(&delta) {
                    return Err(bad("problem.schur_delta", "must be in [0,1)"));
                }
                Ok(BuiltProblem::Quadratic(q.with_schur_delta(delta)))
            }
            "pde" => {
                let n = self.grid.unwrap_or(32);
                if n < 4 || !n.is_power_of_two() {
                    return Err(bad("problem.grid", "must be a power of two >= 4"));
                }
                let [a0, a1, a2] = self.nu.unwrap_or([1.0, 1.0, 5.0]);
                let nu = NuCoefficient::new(a0, a1, a2).map_err(|e| bad("problem.nu", e))?;
                Ok(BuiltProblem::Pde(PdeProblem::manufactured(n, nu)?))
            }
            other => Err(bad("problem.kind", format!("'{other}' (expected quadratic or pde)"))),
        }
    }
}

fn metric_policy(s: Option<&str>, every: Option<usize>, key: &str) -> Result<Option<MetricPolicy>> {
    Ok(match s {
        None => None,
        Some("fixed") => Some(MetricPolicy::Fixed),
        Some("every-iteration") => Some(MetricPolicy::EveryIteration),
        Some("every-m") => match every {
            Some(m) if m > 0 => Some(MetricPolicy::EveryM(m)),
            _ => return Err(bad(key, "every-m needs a positive metric_every")),
        },
        Some(other) => return Err(bad(key, format!("unknown policy '{other}'"))),
    })
}

/// Default step: `1/L` in the reference metric for quadratics, the
/// benchmark rule for the PDE problem.
fn default_alpha(problem: &BuiltProblem, method: Method, tau: f64) -> Result<f64> {
    match problem {
        BuiltProblem::Quadratic(q) => {
            let (_, l) = q
                .mu_l_in(&q.reference_metric())
                .ok_or_else(|| Error::InvalidArgument("curvature of the quadratic unavailable".into()))?;
            Ok(1.0 / l)
        }
        BuiltProblem::Pde(p) => {
            let c = PdeConstants::of(p.nu());
            Ok(match method {
                Method::Pgd | Method::Ippgd => 1.0 / c.l_sharp,
                Method::Ippgdv => 1.0 / c.l_local,
                Method::IppgdvTau => 1.0 / (c.l_local * tau),
            })
        }
    }
}

impl SolverSection {
    pub fn build(&self, problem: &BuiltProblem) -> Result<SolverConfig> {
        let method: Method = match &self.method {
            Some(m) => m.parse().map_err(|e| bad("solver.method", e))?,
            None => Method::Ippgd,
        };
        let tau = self.tau.unwrap_or(match method {
            Method::IppgdvTau => 0.5,
            _ => 1.0,
        });
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(bad("solver.tau", "tau must be in (0,1]"));
        }
        let alpha = match self.alpha {
            Some(a) => a,
            None => default_alpha(problem, method, tau)?,
        };
        let mut cfg = SolverConfig::preset(method, alpha);
        cfg.tau = tau;
        if let Some(p) = metric_policy(self.metric_policy.as_deref(), self.metric_every, "solver.metric_policy")? {
            cfg.metric_policy = p;
        }
        match self.schur.as_deref() {
            None => {}
            Some("exactness") => cfg.schur = SchurMode::Exactness,
            Some("schedule") => cfg.schur = SchurMode::Schedule(MgSchedule::default()),
            Some(other) => return Err(bad("solver.schur", format!("'{other}' (expected exactness or schedule)"))),
        }
        if let SchurMode::Schedule(ref mut s) = cfg.schur {
            if let Some(n) = self.mg_start {
                s.n_start = n;
            }
            if let Some(n) = self.mg_max {
                s.n_max = n;
            }
            match self.mg_ramp.as_deref() {
                None => {}
                Some("periodic") => {
                    s.ramp = Ramp::Periodic {
                        fraction: self.mg_ramp_fraction.unwrap_or(0.1),
                    }
                }
                Some("progress") => {
                    s.ramp = Ramp::Progress {
                        ratio: self.mg_ramp_ratio.unwrap_or(0.5),
                    }
                }
                Some("none") => s.ramp = Ramp::None,
                Some(other) => return Err(bad("solver.mg_ramp", format!("unknown ramp '{other}'"))),
            }
            s.validate().map_err(|e| bad("solver.mg_*", e))?;
        }
        if let Some(v) = self.max_iters {
            cfg.max_iters = v;
        }
        if let Some(v) = self.grad_tol {
            cfg.grad_tol = v;
        }
        if let Some(v) = self.step_tol {
            cfg.step_tol = v;
        }
        cfg.estimate_delta = self.estimate_delta.unwrap_or(false);
        cfg.estimate_theta = self.estimate_theta.unwrap_or(false);
        if !(cfg.alpha > 0.0 && cfg.alpha.is_finite()) {
            return Err(bad("solver.alpha", "alpha must be positive"));
        }
        if !(cfg.grad_tol > 0.0) {
            return Err(bad("solver.grad_tol", "must be positive"));
        }
        if !(cfg.step_tol > 0.0) {
            return Err(bad("solver.step_tol", "must be positive"));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl BenchSection {
    pub fn build(&self, threads: Option<usize>) -> Result<BenchConfig> {
        let mut cfg = default_bench();
        if let Some(g) = &self.grids {
            cfg.grids = g.clone();
        }
        if let Some(ms) = &self.methods {
            cfg.methods = ms
                .iter()
                .map(|m| m.parse().map_err(|e| bad("bench.methods", e)))
                .collect::<Result<_>>()?;
        }
        if let Some(cs) = &self.cases {
            cfg.cases = cs
                .iter()
                .map(|c| {
                    if !(c.tau > 0.0 && c.tau <= 1.0) {
                        return Err(bad("bench.cases.tau", "tau must be in (0,1]"));
                    }
                    Ok(BenchCase {
                        nu: NuCoefficient::new(c.nu[0], c.nu[1], c.nu[2]).map_err(|e| bad("bench.cases.nu", e))?,
                        tau: c.tau,
                    })
                })
                .collect::<Result<_>>()?;
        }
        if let Some(v) = self.max_iters {
            cfg.max_iters = v;
        }
        if let Some(v) = self.grad_tol {
            cfg.grad_tol = v;
        }
        if let Some(v) = self.step_tol {
            cfg.step_tol = v;
        }
        if let Some(v) = self.ramp_ratio {
            if !(v > 0.0 && v < 1.0) {
                return Err(bad("bench.ramp_ratio", "must be in (0,1)"));
            }
            cfg.ramp_ratio = v;
        }
        if let Some(v) = self.alpha_scale {
            if !(v > 0.0) {
                return Err(bad("bench.alpha_scale", "must be positive"));
            }
            cfg.alpha_scale = v;
        }
        cfg.threads = threads;
        cfg.validate()?;
        Ok(cfg)
    }
}

pub enum FlowStart {
    Zero,
    Ones,
}

impl FlowSection {
    pub fn build(&self, problem: &BuiltProblem) -> Result<(FlowConfig, FlowStart)> {
        let integrator = match self.integrator.as_deref().unwrap_or("rk4") {
            "rk4" => Integrator::Rk4,
            "euler" | "forward-euler" => Integrator::ForwardEuler,
            other => return Err(bad("flow.integrator", format!("unknown integrator '{other}'"))),
        };
        let dt = self.dt.unwrap_or(1e-3);
        let alpha = match self.alpha {
            Some(a) => a,
            None => default_alpha(problem, Method::Ippgd, 1.0)?,
        };
        let policy = metric_policy(self.metric_policy.as_deref(), None, "flow.metric_policy")?
            .unwrap_or(MetricPolicy::Fixed);
        let schur = match self.schur_cycles.unwrap_or(0) {
            0 => SchurLevel::Exact,
            n => SchurLevel::Cycles(n),
        };
        let start = match self.start.as_deref().unwrap_or("zero") {
            "zero" => FlowStart::Zero,
            "ones" => FlowStart::Ones,
            other => return Err(bad("flow.start", format!("'{other}' (expected zero or ones)"))),
        };
        let cfg = FlowConfig {
            integrator,
            dt,
            t_end: self.t_end.unwrap_or(20.0),
            alpha,
            metric_policy: policy,
            schur,
            lambda: self.lambda.unwrap_or(f64::NAN),
        };
        let check = FlowConfig {
            lambda: 1.0,
            ..cfg.clone()
        };
        check.validate().map_err(|e| bad("flow", e))?;
        if let Some(l) = self.lambda {
            if !(l > 0.0) {
                return Err(bad("flow.lambda", "must be positive"));
            }
        }
        Ok((cfg, start))
    }
}
