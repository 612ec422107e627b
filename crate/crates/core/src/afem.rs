//! Adaptive loop ITERATE -> ESTIMATE -> MARK -> REFINE with the
//! estimator-based stopping criterion for the algebraic solver.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use thiserror::Error;

use crate::algebraic::{rate_drift, IterationTrace};
use crate::equilibration::{equilibrate, Equilibration, EquilibrationError};
use crate::fem::{apply_dirichlet, assemble_load, assemble_stiffness, transfer, FemError, ReducedSystem};
use crate::linalg::{direct_solve, norm2, norm_a, residual, sub, LinalgError};
use crate::mesh::{build_uniform_mesh, nested_interpolation, MeshError, TriMesh};
use crate::problems::{BenchmarkProblem, ProblemError};
use crate::solvers::{random_initial_guess, IterativeSolver, SolverError, SymmetricGaussSeidel, VCycle};

#[derive(Debug, Error)]
pub enum AfemError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("solver diverged on level {level}: residual grew for {checks} consecutive iterations up to k = {k}")]
    Divergence { level: usize, k: usize, checks: usize },
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Equilibration(#[from] EquilibrationError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// `eta_d` below this fraction of `||u_h||_A` ends the loop.
pub const NEGLIGIBLE_ESTIMATOR: f64 = 1e-10;

/// Consecutive residual increases tolerated before declaring divergence.
pub const DIVERGENCE_CHECKS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct StoppingConfig {
    pub tol: f64,
    pub tol_rho: f64,
    pub check_every: usize,
    pub exact_solve_dof_threshold: usize,
    pub dorfler_theta: f64,
    pub max_cycles: usize,
    pub max_iterations_per_level: usize,
    /// Require the observed rate to have settled (second condition).
    pub rate_condition: bool,
}

impl Default for StoppingConfig {
    fn default() -> Self {
        Self {
            tol: 0.67,
            tol_rho: 0.1,
            check_every: 3,
            exact_solve_dof_threshold: 500,
            dorfler_theta: 0.5,
            max_cycles: 40,
            max_iterations_per_level: 10_000,
            rate_condition: true,
        }
    }
}

impl StoppingConfig {
    pub fn validate(&self) -> Result<(), AfemError> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(AfemError::Config(format!("tol must lie in (0, 1), got {}", self.tol)));
        }
        if !(self.tol_rho > 0.0) {
            return Err(AfemError::Config("tol_rho must be positive".into()));
        }
        if !(self.dorfler_theta > 0.0 && self.dorfler_theta <= 1.0) {
            return Err(AfemError::Config(format!(
                "theta must lie in (0, 1], got {}",
                self.dorfler_theta
            )));
        }
        if self.check_every == 0 || self.max_cycles == 0 || self.max_iterations_per_level == 0 {
            return Err(AfemError::Config(
                "check_every, max_cycles and max_iterations_per_level must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// `eta_a < tol * eta_d` and `|rho_k / rho_km1 - 1| < tol_rho`.
pub fn stopping_check(eta_a: f64, eta_d: f64, rho_k: f64, rho_km1: f64, cfg: &StoppingConfig) -> bool {
    eta_a < cfg.tol * eta_d && rate_drift(rho_k, rho_km1) < cfg.tol_rho
}

/// Smallest set of elements, taken by descending indicator with ties
/// broken by index, whose squared indicators reach `theta` of the total.
pub fn dorfler_mark(indicators: &[f64], theta: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..indicators.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (indicators[a] * indicators[a], indicators[b] * indicators[b]);
        y.total_cmp(&x).then(a.cmp(&b))
    });
    let total: f64 = order.iter().map(|&t| indicators[t] * indicators[t]).sum();
    if total == 0.0 {
        return Vec::new();
    }
    let mut acc = 0.0;
    let mut marked = Vec::new();
    for t in order {
        if acc >= theta * total {
            break;
        }
        acc += indicators[t] * indicators[t];
        marked.push(t);
    }
    marked
}

/// `r` in `error ~ DoF^{-r}` by least squares in log-log scale.
pub fn fit_convergence_rate(points: &[(usize, f64)]) -> Result<f64, AfemError> {
    if points.len() < 3 {
        return Err(AfemError::Config(format!(
            "rate fit needs at least 3 levels, got {}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| (p.0 as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(AfemError::Config("rate fit needs distinct DoF counts".into()));
    }
    Ok(-(sxy / sxx) + 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    MgV11,
    Sgs,
    Direct,
}

impl FromStr for SolverKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mg-v11" => Ok(Self::MgV11),
            "sgs" => Ok(Self::Sgs),
            "direct" => Ok(Self::Direct),
            other => Err(format!("unknown solver `{other}` (expected mg-v11, sgs or direct)")),
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::MgV11 => "mg-v11",
            Self::Sgs => "sgs",
            Self::Direct => "direct",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// Algebraic estimator against the total estimator.
    Estimator,
    /// `|r_k| / |r_0| <= threshold`.
    RelativeResidual(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    /// Stop refining once `||u - u_h||_A / ||u||_A` drops below this.
    RelativeError(f64),
    /// Stop refining once `eta_d` drops below this.
    Estimator(f64),
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub solver: SolverKind,
    pub stop: StopRule,
    pub target: Target,
    pub seed: u64,
    /// Also compute the direct-solve reference on iterative levels and
    /// report algebraic and total errors per iteration.
    pub track_errors: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            solver: SolverKind::MgV11,
            stop: StopRule::Estimator,
            target: Target::None,
            seed: 0,
            track_errors: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Exact,
    Estimator,
    RelativeResidual,
    Converged,
    IterationCap,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Exact => "exact",
            Self::Estimator => "estimator",
            Self::RelativeResidual => "relres",
            Self::Converged => "converged",
            Self::IterationCap => "cap",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub level: usize,
    pub k: usize,
    pub res_norm: f64,
    pub rho: Option<f64>,
    pub rho_hat: Option<f64>,
    pub du_norm_a: Option<f64>,
    pub eta_a: Option<f64>,
    pub eta_d: Option<f64>,
    /// `||u_T - u^(k)||_A`, when tracked.
    pub alg_error: Option<f64>,
    /// `||u - u^(k)||_A`, when tracked and the exact solution is known.
    pub total_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    pub level: usize,
    pub dof: usize,
    pub elements: usize,
    pub eta_d: f64,
    pub eta_a: Option<f64>,
    pub stop_iter: Option<usize>,
    pub stop_reason: StopReason,
    pub error: Option<f64>,
    pub rel_error: Option<f64>,
    pub alg_error: Option<f64>,
    pub effectivity: Option<f64>,
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct LevelOutput {
    pub mesh: TriMesh,
    pub indicators: Vec<f64>,
    pub solution: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AfemRun {
    pub cycles: Vec<CycleRecord>,
    pub trace: Vec<TraceRow>,
    pub levels: Vec<LevelOutput>,
}

impl AfemRun {
    pub fn final_cycle(&self) -> &CycleRecord {
        self.cycles.last().expect("a run has at least one level")
    }

    /// Rate fit over levels from `first` on.
    pub fn convergence_rate_from(&self, first: usize) -> Result<f64, AfemError> {
        let pts: Vec<(usize, f64)> = self.cycles[first..]
            .iter()
            .filter_map(|c| c.error.map(|e| (c.dof, e)))
            .collect();
        fit_convergence_rate(&pts)
    }
}

/// Coarser uniform meshes nested below the `n`-subdivision mesh, coarsest
/// first, used as extra multigrid levels.
pub fn uniform_coarse_chain(problem: &BenchmarkProblem) -> Result<Vec<TriMesh>, AfemError> {
    let mut ns = Vec::new();
    let mut n = problem.initial_subdivisions;
    while n % 2 == 0 && n / 2 >= 2 {
        n /= 2;
        ns.push(n);
    }
    ns.reverse();
    ns.into_iter()
        .map(|k| Ok(build_uniform_mesh(problem.domain, k)?))
        .collect()
}

/// Runs the adaptive loop from the problem's initial mesh.
pub fn run_inexact_afem(
    problem: &BenchmarkProblem,
    cfg: &StoppingConfig,
    opts: &RunOptions,
) -> Result<AfemRun, AfemError> {
    let chain = uniform_coarse_chain(problem)?;
    run_afem(problem, problem.initial_mesh()?, chain, cfg, opts)
}

struct LevelResult {
    u: Vec<f64>,
    eq: Equilibration,
    eta_a: Option<f64>,
    stop_iter: Option<usize>,
    reason: StopReason,
    alg_error: Option<f64>,
}

/// Runs the adaptive loop from `initial`. `coarse` holds extra nested
/// meshes below `initial` for the multigrid hierarchy.
pub fn run_afem(
    problem: &BenchmarkProblem,
    initial: TriMesh,
    coarse: Vec<TriMesh>,
    cfg: &StoppingConfig,
    opts: &RunOptions,
) -> Result<AfemRun, AfemError> {
    cfg.validate()?;
    if let StopRule::RelativeResidual(t) = opts.stop {
        if !(t > 0.0) {
            return Err(AfemError::Config("relative residual threshold must be positive".into()));
        }
    }
    let mut history = coarse;
    let mut mesh = initial;
    let mut prev_u: Option<Vec<f64>> = None;
    let mut cycles = Vec::new();
    let mut trace = Vec::new();
    let mut levels = Vec::new();

    for level in 0..cfg.max_cycles {
        let start = Instant::now();
        let a = problem.coefficient_field(&mesh)?;
        let f = problem.source_field(&mesh);
        let k = assemble_stiffness(&mesh, &a)?;
        let sys = apply_dirichlet(&mesh, &k, &assemble_load(&mesh, &f), &problem.boundary_values(&mesh))?;
        history.push(mesh.clone());

        let x0 = match &prev_u {
            None => random_initial_guess(sys.dim(), opts.seed),
            Some(u) => sys.restrict(u),
        };
        let exact = opts.solver == SolverKind::Direct || sys.dim() < cfg.exact_solve_dof_threshold;
        let res = if exact || sys.dim() == 0 {
            let x = if sys.dim() == 0 { vec![] } else { direct_solve(&sys.matrix, &sys.rhs)? };
            let u = sys.expand(&x);
            let eq = equilibrate(&mesh, &a, &f, &u)?;
            LevelResult {
                u,
                eq,
                eta_a: None,
                stop_iter: None,
                reason: StopReason::Exact,
                alg_error: opts.track_errors.then_some(0.0),
            }
        } else {
            let solver: Box<dyn IterativeSolver> = match opts.solver {
                SolverKind::Sgs => Box::new(SymmetricGaussSeidel::new(sys.matrix.clone())?),
                _ => {
                    let refs: Vec<&TriMesh> = history.iter().collect();
                    Box::new(VCycle::from_meshes(sys.matrix.clone(), &refs)?)
                }
            };
            iterate_level(problem, &mesh, &a, &f, &sys, solver.as_ref(), x0, level, cfg, opts, &mut trace)?
        };

        let dof = sys.dim();
        let error = problem.energy_error(&mesh, &a, &res.u);
        let rel_error = error.zip(problem.exact_energy_norm).map(|(e, n)| e / n);
        let eta_d = res.eq.eta;
        cycles.push(CycleRecord {
            level,
            dof,
            elements: mesh.num_elements(),
            eta_d,
            eta_a: res.eta_a,
            stop_iter: res.stop_iter,
            stop_reason: res.reason,
            error,
            rel_error,
            alg_error: res.alg_error,
            effectivity: error.filter(|&e| e > 0.0).map(|e| eta_d / e),
            wall_time: start.elapsed().as_secs_f64(),
        });
        levels.push(LevelOutput {
            mesh: mesh.clone(),
            indicators: res.eq.indicators.clone(),
            solution: res.u.clone(),
        });

        // eta_d at rounding level means the discrete solution is exact
        let energy = k.mul_vec(&res.u).iter().zip(&res.u).map(|(x, y)| x * y).sum::<f64>().max(0.0).sqrt();
        let done = eta_d <= NEGLIGIBLE_ESTIMATOR * energy
            || match opts.target {
                Target::RelativeError(t) => rel_error.is_some_and(|r| r < t),
                Target::Estimator(t) => eta_d < t,
                Target::None => false,
            };
        if done || level + 1 == cfg.max_cycles {
            break;
        }
        let marked = dorfler_mark(&res.eq.indicators, cfg.dorfler_theta);
        if marked.is_empty() {
            break;
        }
        let next = mesh.bisect(&marked)?;
        let w = nested_interpolation(&mesh, &next)?;
        prev_u = Some(transfer(&w, &res.u));
        mesh = next;
    }
    Ok(AfemRun { cycles, trace, levels })
}

#[allow(clippy::too_many_arguments)]
fn iterate_level(
    problem: &BenchmarkProblem,
    mesh: &TriMesh,
    a: &[f64],
    f: &[f64],
    sys: &ReducedSystem,
    solver: &dyn IterativeSolver,
    x0: Vec<f64>,
    level: usize,
    cfg: &StoppingConfig,
    opts: &RunOptions,
    rows: &mut Vec<TraceRow>,
) -> Result<LevelResult, AfemError> {
    let mat = &sys.matrix;
    let reference = if opts.track_errors {
        Some(direct_solve(mat, &sys.rhs)?)
    } else {
        None
    };
    let errors = |x: &[f64]| -> (Option<f64>, Option<f64>) {
        match &reference {
            Some(r) => {
                let alg = norm_a(mat, &sub(r, x)).ok();
                let total = problem.energy_error(mesh, a, &sys.expand(x));
                (alg, total)
            }
            None => (None, None),
        }
    };

    let mut x = x0;
    let mut r = residual(mat, &sys.rhs, &x);
    let mut trace = IterationTrace::new(norm2(&r));
    let (alg0, tot0) = errors(&x);
    rows.push(TraceRow {
        level,
        k: 0,
        res_norm: trace.residuals()[0],
        rho: None,
        rho_hat: None,
        du_norm_a: None,
        eta_a: None,
        eta_d: None,
        alg_error: alg0,
        total_error: tot0,
    });
    let mut growth = 0;
    for k in 1.. {
        let d = solver.apply(&r);
        let du = norm_a(mat, &d)?;
        for (xi, di) in x.iter_mut().zip(&d) {
            *xi += di;
        }
        r = residual(mat, &sys.rhs, &x);
        let rn = norm2(&r);
        trace.push(rn, du);
        let rho = trace.rho(k).ok();
        let eta_a = trace.eta_a(k).ok();
        growth = if rho.is_some_and(|p| p > 1.0) { growth + 1 } else { 0 };
        if growth >= DIVERGENCE_CHECKS {
            return Err(AfemError::Divergence {
                level,
                k,
                checks: growth,
            });
        }

        let mut eq = None;
        let mut reason = None;
        match opts.stop {
            StopRule::Estimator => {
                if k % cfg.check_every == 0 {
                    if let Some(ea) = eta_a {
                        let e = equilibrate(mesh, a, f, &sys.expand(&x))?;
                        let first = ea < cfg.tol * e.eta;
                        let second = !cfg.rate_condition || trace.drift(k).is_ok_and(|dr| dr < cfg.tol_rho);
                        if first && second {
                            reason = Some(StopReason::Estimator);
                        }
                        eq = Some(e);
                    }
                }
            }
            StopRule::RelativeResidual(t) => {
                if rn <= t * trace.residuals()[0] {
                    reason = Some(StopReason::RelativeResidual);
                }
            }
        }
        if reason.is_none() && rn == 0.0 {
            reason = Some(StopReason::Converged);
        }
        if reason.is_none() && k >= cfg.max_iterations_per_level {
            reason = Some(StopReason::IterationCap);
        }
        if reason.is_some() && eq.is_none() {
            eq = Some(equilibrate(mesh, a, f, &sys.expand(&x))?);
        }
        let (alg, tot) = errors(&x);
        rows.push(TraceRow {
            level,
            k,
            res_norm: rn,
            rho,
            rho_hat: trace.rho_hat(k).ok(),
            du_norm_a: Some(du),
            eta_a,
            eta_d: eq.as_ref().map(|e| e.eta),
            alg_error: alg,
            total_error: tot,
        });
        if let Some(reason) = reason {
            return Ok(LevelResult {
                u: sys.expand(&x),
                eq: eq.unwrap(),
                eta_a,
                stop_iter: Some(k),
                reason,
                alg_error: alg,
            });
        }
    }
    unreachable!()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stopping_check_examples() {
        let cfg = StoppingConfig::default();
        assert!(stopping_check(0.03, 0.08, 0.5, 0.5 / 1.05, &cfg));
        assert!(!stopping_check(0.06, 0.08, 0.5, 0.5, &cfg));
        assert!(!stopping_check(1e-9, 0.08, 0.6, 0.5, &cfg));
    }

    #[test]
    fn dorfler_examples() {
        assert_eq!(dorfler_mark(&[3.0, 2.0, 1.0], 0.5), vec![0]);
        assert_eq!(dorfler_mark(&[0.0, 2.0, 0.0, 1.0], 1.0), vec![1, 3]);
        assert_eq!(dorfler_mark(&[1.0; 7], 0.5), vec![0, 1, 2, 3]);
        assert_eq!(dorfler_mark(&[1.0; 8], 0.5), vec![0, 1, 2, 3]);
        assert!(dorfler_mark(&[0.0; 5], 0.5).is_empty());
    }

    #[test]
    fn dorfler_is_scale_invariant() {
        let eta = [0.3, 1.2, 0.05, 0.7, 0.7, 0.01];
        let scaled: Vec<f64> = eta.iter().map(|x| x * 17.5).collect();
        assert_eq!(dorfler_mark(&eta, 0.5), dorfler_mark(&scaled, 0.5));
    }

    #[test]
    fn rate_fit_examples() {
        let pts: Vec<(usize, f64)> = [100, 400, 1600, 6400]
            .iter()
            .map(|&n| (n, (n as f64).powf(-0.5)))
            .collect();
        assert!((fit_convergence_rate(&pts).unwrap() - 0.5).abs() < 1e-12);
        let flat = [(10, 0.2), (20, 0.2), (40, 0.2)];
        assert_eq!(fit_convergence_rate(&flat).unwrap(), 0.0);
        assert!(fit_convergence_rate(&flat[..2]).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = StoppingConfig {
            tol: 1.2,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(StoppingConfig::default().validate().is_ok());
    }

    #[test]
    fn solver_names_round_trip() {
        for s in ["mg-v11", "sgs", "direct"] {
            assert_eq!(s.parse::<SolverKind>().unwrap().to_string(), s);
        }
        assert!("cg".parse::<SolverKind>().is_err());
    }
}
