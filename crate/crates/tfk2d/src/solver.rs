//! Time-marching driver for the fully discrete scheme.
//!
//! After homogenisation the unknown W satisfies, at each step n,
//!     [diag(d_0)/tau^alpha + A] W^n = f_w^n - (1/tau^alpha) sum_{k=1}^n diag(d_k) W^{n-k},
//! where A is the assembled spatial operator and d_k the per-node
//! convolution-quadrature weights. The system matrix is built once; each
//! step is solved by (preconditioned) conjugate gradients on the
//! Toeplitz-structured operator, and the solution is mapped back through
//! G^n = W^n + G_0 e^{-c t_n}.

use crate::cq::{build_table, CqWeightTable};
use crate::grid::{Field, Grid, ProblemSpec};
use crate::linalg::{build_preconditioner, krylov_solve, BccbPreconditioner, BttbOperator};
use crate::oracle::{homogenize, Homogenized};
use crate::spatial::{assemble, SpatialError, SpatialOperator};
use crate::special::Scheme;
use num_complex::Complex64;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Plain conjugate gradients.
    Cg,
    /// Conjugate gradients with the optimal circulant preconditioner.
    Pcg,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub method: Method,
    /// Relative residual tolerance per time step.
    pub tol: f64,
    pub max_iter: usize,
    /// Keep the reconstructed solution at every step, not just the last.
    pub store_all_steps: bool,
    /// Quadrature tolerance for source/homogenisation oracle evaluations.
    pub oracle_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            method: Method::Pcg,
            tol: 1e-9,
            max_iter: 10_000,
            store_all_steps: false,
            oracle_tol: 1e-9,
        }
    }
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("spatial assembly failed: {0}")]
    Spatial(#[from] SpatialError),
    #[error("circulant preconditioner is numerically singular (eigenvalue ratio {0:.3e})")]
    Preconditioner(f64),
    #[error("invalid solver input: {0}")]
    Invalid(String),
}

pub struct SolveResult {
    /// Reconstructed solution G at the final time.
    pub final_field: Field,
    /// Reconstructed solution (t_n, G^n) at every step when requested.
    pub snapshots: Vec<(f64, Field)>,
    /// Krylov iteration count per time step.
    pub iterations: Vec<usize>,
    /// True relative residual per time step.
    pub residuals: Vec<f64>,
    pub converged: bool,
    pub tau: f64,
    /// Seconds spent building weights, system operator and preconditioner.
    pub setup_seconds: f64,
    /// Seconds spent marching the time loop.
    pub march_seconds: f64,
}

impl SolveResult {
    pub fn mean_iterations(&self) -> f64 {
        if self.iterations.is_empty() {
            return 0.0;
        }
        self.iterations.iter().sum::<usize>() as f64 / self.iterations.len() as f64
    }
}

/// Assemble the spatial operator and homogenise, then march.
pub fn solve(
    spec: &ProblemSpec,
    grid: &Grid,
    scheme: Scheme,
    steps: usize,
    cfg: &SolverConfig,
) -> Result<SolveResult, SolverError> {
    let op = assemble(grid, spec.beta, spec.gamma, spec.sigma)?;
    let hom = homogenize(spec, grid, None, cfg.oracle_tol);
    solve_prepared(spec, grid, scheme, steps, cfg, &op, &hom)
}

/// March with a pre-assembled spatial operator and homogenised problem
/// (the expensive grid-dependent pieces, reusable across time-step ladders).
pub fn solve_prepared(
    spec: &ProblemSpec,
    grid: &Grid,
    scheme: Scheme,
    steps: usize,
    cfg: &SolverConfig,
    op: &SpatialOperator,
    hom: &Homogenized,
) -> Result<SolveResult, SolverError> {
    if steps == 0 {
        return Err(SolverError::Invalid("need at least one time step".into()));
    }
    spec.validate().map_err(|e| SolverError::Invalid(e.to_string()))?;
    let m = grid.m();
    let setup_start = std::time::Instant::now();
    let cq: CqWeightTable = build_table(spec, grid, scheme, steps);
    let tau = cq.tau;
    let sys = BttbOperator::new(op, &cq);
    let precond: Option<BccbPreconditioner> = match cfg.method {
        Method::Cg => None,
        Method::Pcg => {
            Some(build_preconditioner(&sys).map_err(|e| SolverError::Preconditioner(e.ratio))?)
        }
    };

    let setup_seconds = setup_start.elapsed().as_secs_f64();
    let march_start = std::time::Instant::now();
    let source = hom.w_spec.source.clone();
    let eval_source = |t: f64| -> Field {
        let nodes: Vec<(i64, i64)> = grid.iter_nodes().collect();
        nodes
            .iter()
            .map(|&(p, q)| {
                let (x, y) = grid.node(p, q);
                source(t, x, y)
            })
            .collect()
    };

    // W^0 = 0 after homogenisation
    let mut history: Vec<Field> = vec![vec![Complex64::new(0.0, 0.0); m]];
    let mut iterations = Vec::with_capacity(steps);
    let mut residuals = Vec::with_capacity(steps);
    let mut converged = true;
    let mut snapshots: Vec<(f64, Field)> = Vec::new();

    for n in 1..=steps {
        let t_n = tau * n as f64;
        let mut rhs = eval_source(t_n);
        let hist = cq.history_term(&history, n);
        for (r, h) in rhs.iter_mut().zip(&hist) {
            *r -= h;
        }
        let (w, stats) = krylov_solve(&sys, &rhs, precond.as_ref(), cfg.tol, cfg.max_iter);
        iterations.push(stats.iterations);
        residuals.push(stats.residual);
        converged &= stats.converged;
        if cfg.store_all_steps {
            snapshots.push((t_n, hom.reconstruct(&w, t_n)));
        }
        history.push(w);
    }

    let final_field = hom.reconstruct(history.last().unwrap(), tau * steps as f64);
    Ok(SolveResult {
        final_field,
        snapshots,
        iterations,
        residuals,
        converged,
        tau,
        setup_seconds,
        march_seconds: march_start.elapsed().as_secs_f64(),
    })
}

/// Convenience wrapper returning the homogenised problem alongside cached
/// operator assembly, for callers running several ladders on one grid.
pub fn prepare(
    spec: &ProblemSpec,
    grid: &Grid,
    tfl_g0: Option<Arc<Vec<f64>>>,
    oracle_tol: f64,
) -> Result<(SpatialOperator, Homogenized), SolverError> {
    let op = assemble(grid, spec.beta, spec.gamma, spec.sigma)?;
    let hom = homogenize(spec, grid, tfl_g0, oracle_tol);
    Ok((op, hom))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, Coeff};
    use crate::oracle::{exact_solution_manufactured, manufactured_problem, poly_bump};
    use nalgebra::{DMatrix, DVector};

    fn linf_error(field: &Field, exact: &Field) -> f64 {
        field
            .iter()
            .zip(exact)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn zero_problem_stays_zero() {
        let grid = make_grid(1.0, 4).unwrap();
        let spec = ProblemSpec {
            alpha: 0.4,
            beta: 0.7,
            gamma: 0.1,
            lambda: 0.2,
            rho: 0.5,
            sigma: 1.35,
            reaction: Coeff::Const(-1.0),
            weight: Coeff::Const(1.0),
            g0: Arc::new(|_, _| Complex64::new(0.0, 0.0)),
            source: Arc::new(|_, _, _| Complex64::new(0.0, 0.0)),
            t_final: 1.0,
        };
        let res = solve(&spec, &grid, Scheme::BackwardEuler, 8, &SolverConfig::default()).unwrap();
        assert!(res.converged);
        assert!(res.final_field.iter().all(|v| v.norm() == 0.0));
        assert!(res.iterations.iter().all(|&it| it <= 1));
    }

    /// Dense reference march: build the full system matrix by applying the
    /// fast operator to unit vectors, then LU-solve every step.
    #[test]
    fn matches_dense_time_march_small_grid() {
        let grid = make_grid(1.0, 2).unwrap();
        let prob = manufactured_problem(0.3, 0.5, 0.05, 0.1, 0.8, 1.25, 1.5, &grid, None);
        let steps = 6;
        let cfg = SolverConfig { tol: 1e-13, ..SolverConfig::default() };
        let res = solve(&prob.spec, &grid, Scheme::Sbd, steps, &cfg).unwrap();
        assert!(res.converged);

        // independent dense march
        let (op, hom) = prepare(&prob.spec, &grid, Some(prob.ap.clone()), 1e-10).unwrap();
        let cq = build_table(&prob.spec, &grid, Scheme::Sbd, steps);
        let sys = BttbOperator::new(&op, &cq);
        let m = grid.m();
        let mut dense = DMatrix::<Complex64>::zeros(m, m);
        for j in 0..m {
            let mut e = vec![Complex64::new(0.0, 0.0); m];
            e[j] = Complex64::new(1.0, 0.0);
            let col = sys.matvec(&e);
            for i in 0..m {
                dense[(i, j)] = col[i];
            }
        }
        let lu = dense.lu();
        let tau = cq.tau;
        let mut hist: Vec<Field> = vec![vec![Complex64::new(0.0, 0.0); m]];
        for n in 1..=steps {
            let t = tau * n as f64;
            let mut rhs: Vec<Complex64> = grid
                .iter_nodes()
                .map(|(p, q)| {
                    let (x, y) = grid.node(p, q);
                    (hom.w_spec.source)(t, x, y)
                })
                .collect();
            let h = cq.history_term(&hist, n);
            for (r, hv) in rhs.iter_mut().zip(&h) {
                *r -= hv;
            }
            let sol = lu.solve(&DVector::from_vec(rhs)).unwrap();
            hist.push(sol.iter().copied().collect());
        }
        let g_dense = hom.reconstruct(hist.last().unwrap(), 1.0);
        let err = linf_error(&res.final_field, &g_dense);
        let scale = g_dense.iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(err < 1e-10 * scale.max(1.0), "err = {err:.3e}");
    }

    #[test]
    fn manufactured_coarse_error_matches_reference_magnitude() {
        // alpha = 0.3, beta = 0.5, gamma = 0.05, sigma = 1 + beta/2, rho = 1:
        // at h = 1/8 with small enough tau the max-norm error of the scheme
        // is about 3.46e-3; accept a factor-of-two band.
        let grid = make_grid(1.0, 8).unwrap();
        let prob = manufactured_problem(0.3, 0.5, 0.05, 0.1, 1.0, 1.25, 1.5, &grid, None);
        let res = solve(&prob.spec, &grid, Scheme::Sbd, 160, &SolverConfig::default()).unwrap();
        assert!(res.converged);
        let exact: Field = grid
            .iter_nodes()
            .map(|(p, q)| {
                let (x, y) = grid.node(p, q);
                exact_solution_manufactured(&prob, 1.0, x, y)
            })
            .collect();
        let err = linf_error(&res.final_field, &exact);
        assert!(
            err > 3.464e-3 / 2.0 && err < 3.464e-3 * 2.0,
            "coarse-grid error {err:.4e} outside expected band"
        );
    }

    #[test]
    fn schemes_agree_on_smooth_problem() {
        let grid = make_grid(1.0, 8).unwrap();
        let prob = manufactured_problem(0.5, 0.8, 0.0, 0.3, 0.5, 1.4, 2.0, &grid, None);
        let steps = 80;
        let cfg = SolverConfig::default();
        let (op, hom) = prepare(&prob.spec, &grid, Some(prob.ap.clone()), 1e-10).unwrap();
        let be =
            solve_prepared(&prob.spec, &grid, Scheme::BackwardEuler, steps, &cfg, &op, &hom)
                .unwrap();
        let sbd = solve_prepared(&prob.spec, &grid, Scheme::Sbd, steps, &cfg, &op, &hom).unwrap();
        let diff = linf_error(&be.final_field, &sbd.final_field);
        let scale = sbd.final_field.iter().map(|v| v.norm()).fold(0.0, f64::max);
        // both converge to the same semidiscrete limit; BE's O(tau) error bounds the gap
        assert!(diff < 0.05 * scale, "BE/SBD gap {diff:.3e} vs scale {scale:.3e}");
        assert!(diff > 0.0);
    }

    #[test]
    fn initial_condition_reproduced_at_zero_steps_of_error() {
        // after one tiny step the solution should stay near G0 * e^{-c tau}
        let grid = make_grid(1.0, 4).unwrap();
        let prob = manufactured_problem(0.3, 0.5, 0.05, 0.1, 0.6, 1.25, 1.5, &grid, None);
        let mut spec = prob.spec.clone();
        spec.t_final = 1e-3;
        let res = solve(&spec, &grid, Scheme::BackwardEuler, 1, &SolverConfig::default()).unwrap();
        for (p, q) in grid.iter_nodes() {
            let (x, y) = grid.node(p, q);
            let c = spec.c_coeff(x, y);
            let want = Complex64::new(poly_bump(x, y), 0.0) * (-c * 1e-3).exp();
            let got = res.final_field[grid.index(p, q)];
            assert!((got - want).norm() < 1e-4, "({x},{y}): {got} vs {want}");
        }
    }

    #[test]
    fn marching_is_deterministic() {
        let grid = make_grid(1.0, 4).unwrap();
        let prob = manufactured_problem(0.3, 0.8, 0.05, 0.1, 0.7, 1.4, 1.5, &grid, None);
        let cfg = SolverConfig::default();
        let a = solve(&prob.spec, &grid, Scheme::Sbd, 10, &cfg).unwrap();
        let b = solve(&prob.spec, &grid, Scheme::Sbd, 10, &cfg).unwrap();
        assert_eq!(a.final_field, b.final_field, "bitwise reproducibility");
        assert_eq!(a.iterations, b.iterations);
    }
}
