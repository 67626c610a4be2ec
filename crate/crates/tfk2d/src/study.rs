//! Convergence studies and Krylov-method benchmarks.
//!
//! A study runs a refinement ladder (in h or in tau), measures max-norm and
//! h-weighted discrete l2 errors against the exact solution (manufactured
//! problem) or against the next-coarser run at shared nodes (unknown
//! solution), and reports observed orders rate_k = log(e_{k-1}/e_k) /
//! log(x_{k-1}/x_k). Grid-dependent expensive pieces — the assembled
//! spatial operator and the quadrature field (Delta+gamma)^{beta/2} applied
//! to the manufactured spatial factor — are memoised process-wide.

use crate::grid::{make_grid, Field, Grid};
use crate::oracle::{
    exact_solution_manufactured, homogenize, manufactured_problem, poly_bump,
    quadratic_coefficient_problem, tfl_field, Homogenized,
};
use crate::solver::{solve_prepared, Method, SolveResult, SolverConfig, SolverError};
use crate::spatial::{assemble, SpatialError, SpatialOperator};
use crate::special::Scheme;
use once_cell::sync::Lazy;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::{Arc, Mutex};
use thiserror::Error;

/// Max norm of a complex field.
pub fn linf_norm(v: &Field) -> f64 {
    v.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// h-weighted discrete l2 norm: h * sqrt(sum |v|^2).
pub fn l2_norm(v: &Field, h: f64) -> f64 {
    h * v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Refine h at fixed time step count.
    Space,
    /// Refine tau at fixed grid.
    Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExampleId {
    /// Polynomial manufactured solution with constant coefficients.
    Manufactured,
    /// Quadratic-coefficient problem with unknown solution (Richardson
    /// differences against the next-coarser rung).
    Quadratic,
}

#[derive(Debug, Clone)]
pub struct ParamBlock {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub rho: f64,
    pub sigma: f64,
    pub nu: f64,
    /// Domain half-width.
    pub l: f64,
    pub t_final: f64,
}

#[derive(Debug, Clone)]
pub struct SolverBlock {
    pub method: Method,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverBlock {
    fn default() -> Self {
        SolverBlock { method: Method::Pcg, tol: 1e-9, max_iter: 10_000 }
    }
}

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub example: ExampleId,
    pub axis: Axis,
    pub scheme: Scheme,
    pub params: ParamBlock,
    /// Ladder of h (space axis) or tau (time axis) values, strictly decreasing.
    pub ladder: Vec<f64>,
    /// Time step count held fixed on the space axis.
    pub fixed_steps: usize,
    /// Grid resolution N held fixed on the time axis.
    pub fixed_n: usize,
    pub solver: SolverBlock,
}

#[derive(Debug, Clone)]
pub struct ReportRow {
    /// The ladder value: h for space studies, tau for time studies.
    pub grid_or_tau: f64,
    pub err_linf: Option<f64>,
    pub rate_linf: Option<f64>,
    pub err_l2: Option<f64>,
    pub rate_l2: Option<f64>,
    pub iters_mean: f64,
    pub wall_seconds: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub rows: Vec<ReportRow>,
    /// Full configuration echo, one `key = value` per line.
    pub metadata: String,
}

impl ConvergenceReport {
    pub fn all_converged(&self) -> bool {
        self.rows.iter().all(|r| r.converged)
    }
}

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("invalid study config: {0}")]
    Config(String),
    #[error("rung {rung} (value {value:.6e}) failed: {source}")]
    Rung {
        rung: usize,
        value: f64,
        source: SolverError,
    },
}

impl From<SpatialError> for StudyError {
    fn from(e: SpatialError) -> Self {
        StudyError::Config(e.to_string())
    }
}

type CacheKey = (usize, u64, u64, u64, u64);

fn key(n: usize, a: f64, b: f64, c: f64, d: f64) -> CacheKey {
    (n, a.to_bits(), b.to_bits(), c.to_bits(), d.to_bits())
}

static OP_CACHE: Lazy<Mutex<HashMap<CacheKey, Arc<SpatialOperator>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));
static AP_CACHE: Lazy<Mutex<HashMap<CacheKey, Arc<Vec<f64>>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

/// Assembled spatial operator, memoised on (N, beta, gamma, sigma, l).
pub fn cached_operator(
    grid: &Grid,
    beta: f64,
    gamma: f64,
    sigma: f64,
) -> Result<Arc<SpatialOperator>, SpatialError> {
    let k = key(grid.n, beta, gamma, sigma, grid.l);
    if let Some(op) = OP_CACHE.lock().unwrap().get(&k) {
        return Ok(op.clone());
    }
    let op = Arc::new(assemble(grid, beta, gamma, sigma)?);
    OP_CACHE.lock().unwrap().insert(k, op.clone());
    Ok(op)
}

/// (Delta+gamma)^{beta/2} of the manufactured spatial factor at every node,
/// memoised on (N, beta, gamma, l).
pub fn cached_bump_tfl(grid: &Grid, beta: f64, gamma: f64) -> Arc<Vec<f64>> {
    let k = key(grid.n, beta, gamma, 0.0, grid.l);
    if let Some(ap) = AP_CACHE.lock().unwrap().get(&k) {
        return ap.clone();
    }
    let ap = Arc::new(tfl_field(&poly_bump, grid, beta, gamma, 1e-9));
    AP_CACHE.lock().unwrap().insert(k, ap.clone());
    ap
}

fn build_problem(
    cfg: &StudyConfig,
    grid: &Grid,
) -> (crate::grid::ProblemSpec, Option<Arc<Vec<f64>>>) {
    let p = &cfg.params;
    match cfg.example {
        ExampleId::Manufactured => {
            let ap = cached_bump_tfl(grid, p.beta, p.gamma);
            let prob = manufactured_problem(
                p.alpha,
                p.beta,
                p.gamma,
                p.lambda,
                p.rho,
                p.sigma,
                p.nu,
                grid,
                Some(ap.clone()),
            );
            let mut spec = prob.spec;
            spec.t_final = p.t_final;
            (spec, Some(ap))
        }
        ExampleId::Quadratic => {
            let mut spec = quadratic_coefficient_problem(
                p.alpha, p.beta, p.gamma, p.lambda, p.rho, p.sigma, p.nu,
            );
            spec.t_final = p.t_final;
            (spec, None)
        }
    }
}

fn rung_resolution(cfg: &StudyConfig, value: f64) -> Result<(usize, usize), StudyError> {
    match cfg.axis {
        Axis::Space => {
            let n = (cfg.params.l / value).round() as usize;
            if n < 2 || (cfg.params.l / n as f64 - value).abs() > 1e-12 * value {
                return Err(StudyError::Config(format!("h = {value} is not l/N for integer N >= 2")));
            }
            Ok((n, cfg.fixed_steps))
        }
        Axis::Time => {
            let steps = (cfg.params.t_final / value).round() as usize;
            if steps == 0 || (cfg.params.t_final / steps as f64 - value).abs() > 1e-12 * value {
                return Err(StudyError::Config(format!("tau = {value} is not T/L for integer L >= 1")));
            }
            Ok((cfg.fixed_n, steps))
        }
    }
}

fn validate_ladder(ladder: &[f64], min_len: usize) -> Result<(), StudyError> {
    if ladder.len() < min_len {
        return Err(StudyError::Config(format!("ladder needs at least {min_len} rungs")));
    }
    if !ladder.windows(2).all(|w| w[1] < w[0]) {
        return Err(StudyError::Config("ladder must be strictly decreasing".into()));
    }
    Ok(())
}

fn config_metadata(cfg: &StudyConfig) -> String {
    let p = &cfg.params;
    let mut s = String::new();
    let _ = writeln!(s, "example = {:?}", cfg.example);
    let _ = writeln!(s, "axis = {:?}", cfg.axis);
    let _ = writeln!(s, "scheme = {:?}", cfg.scheme);
    let _ = writeln!(
        s,
        "alpha = {}\nbeta = {}\ngamma = {}\nlambda = {}\nrho = {}\nsigma = {}\nnu = {}\nl = {}\nt_final = {}",
        p.alpha, p.beta, p.gamma, p.lambda, p.rho, p.sigma, p.nu, p.l, p.t_final
    );
    let _ = writeln!(s, "ladder = {:?}", cfg.ladder);
    let _ = writeln!(s, "fixed_steps = {}\nfixed_n = {}", cfg.fixed_steps, cfg.fixed_n);
    let _ = writeln!(
        s,
        "method = {:?}\ntol = {:e}\nmax_iter = {}",
        cfg.solver.method, cfg.solver.tol, cfg.solver.max_iter
    );
    let _ = writeln!(s, "version = {}", env!("CARGO_PKG_VERSION"));
    s
}

struct RungOutcome {
    grid: Grid,
    result: SolveResult,
    wall_seconds: f64,
}

fn run_rung(
    cfg: &StudyConfig,
    rung: usize,
    value: f64,
    method: Method,
) -> Result<RungOutcome, StudyError> {
    let (n, steps) = rung_resolution(cfg, value)?;
    let grid = make_grid(cfg.params.l, n).map_err(|e| StudyError::Config(e.to_string()))?;
    let (spec, ap) = build_problem(cfg, &grid);
    let op = cached_operator(&grid, spec.beta, spec.gamma, spec.sigma)?;
    let hom: Homogenized = homogenize(&spec, &grid, ap, 1e-9);
    let solver_cfg = SolverConfig {
        method,
        tol: cfg.solver.tol,
        max_iter: cfg.solver.max_iter,
        store_all_steps: false,
        oracle_tol: 1e-9,
    };
    let start = std::time::Instant::now();
    let result = solve_prepared(&spec, &grid, cfg.scheme, steps, &solver_cfg, &op, &hom)
        .map_err(|source| StudyError::Rung { rung, value, source })?;
    let wall_seconds = start.elapsed().as_secs_f64();
    Ok(RungOutcome { grid, result, wall_seconds })
}

/// Exact-solution errors for the manufactured problem.
fn manufactured_errors(cfg: &StudyConfig, out: &RungOutcome) -> (f64, f64) {
    let p = &cfg.params;
    let grid = &out.grid;
    let prob = manufactured_problem(
        p.alpha, p.beta, p.gamma, p.lambda, p.rho, p.sigma, p.nu, grid,
        Some(cached_bump_tfl(grid, p.beta, p.gamma)),
    );
    let diff: Field = grid
        .iter_nodes()
        .map(|(pp, qq)| {
            let (x, y) = grid.node(pp, qq);
            out.result.final_field[grid.index(pp, qq)]
                - exact_solution_manufactured(&prob, p.t_final, x, y)
        })
        .collect();
    (linf_norm(&diff), l2_norm(&diff, grid.h))
}

/// Difference against the previous (coarser) rung at shared nodes.
fn richardson_errors(
    cfg: &StudyConfig,
    prev: &RungOutcome,
    cur: &RungOutcome,
) -> Result<(f64, f64), StudyError> {
    match cfg.axis {
        Axis::Time => {
            // same grid, different tau
            let diff: Field = cur
                .result
                .final_field
                .iter()
                .zip(&prev.result.final_field)
                .map(|(a, b)| a - b)
                .collect();
            Ok((linf_norm(&diff), l2_norm(&diff, cur.grid.h)))
        }
        Axis::Space => {
            let (nc, nf) = (prev.grid.n, cur.grid.n);
            if nf % nc != 0 {
                return Err(StudyError::Config(format!(
                    "space Richardson ladder needs nested grids: N = {nc} does not divide {nf}"
                )));
            }
            let stride = (nf / nc) as i64;
            let diff: Field = prev
                .grid
                .iter_nodes()
                .map(|(p, q)| {
                    cur.result.final_field[cur.grid.index(p * stride, q * stride)]
                        - prev.result.final_field[prev.grid.index(p, q)]
                })
                .collect();
            Ok((linf_norm(&diff), l2_norm(&diff, prev.grid.h)))
        }
    }
}

fn push_rates(rows: &mut [ReportRow]) {
    for k in 1..rows.len() {
        let ratio = rows[k - 1].grid_or_tau / rows[k].grid_or_tau;
        if ratio <= 1.0 {
            continue;
        }
        let rate = |e0: Option<f64>, e1: Option<f64>| match (e0, e1) {
            (Some(a), Some(b)) if a > 0.0 && b > 0.0 => Some((a / b).ln() / ratio.ln()),
            _ => None,
        };
        rows[k].rate_linf = rate(rows[k - 1].err_linf, rows[k].err_linf);
        rows[k].rate_l2 = rate(rows[k - 1].err_l2, rows[k].err_l2);
    }
}

/// Run the refinement ladder and tabulate errors and observed orders.
pub fn run_convergence(cfg: &StudyConfig) -> Result<ConvergenceReport, StudyError> {
    validate_ladder(&cfg.ladder, 2)?;
    let mut rows: Vec<ReportRow> = Vec::new();
    let mut prev: Option<RungOutcome> = None;
    for (rung, &value) in cfg.ladder.iter().enumerate() {
        let out = run_rung(cfg, rung, value, cfg.solver.method)?;
        let errs = match cfg.example {
            ExampleId::Manufactured => Some(manufactured_errors(cfg, &out)),
            ExampleId::Quadratic => match &prev {
                Some(p) => Some(richardson_errors(cfg, p, &out)?),
                None => None,
            },
        };
        let (err_linf, err_l2) = match errs {
            Some((a, b)) => {
                // zero-error degenerate runs report not-a-number markers
                let mark = |e: f64| if e == 0.0 { Some(f64::NAN) } else { Some(e) };
                (mark(a), mark(b))
            }
            None => (None, None),
        };
        rows.push(ReportRow {
            grid_or_tau: value,
            err_linf,
            rate_linf: None,
            err_l2,
            rate_l2: None,
            iters_mean: out.result.mean_iterations(),
            wall_seconds: out.wall_seconds,
            converged: out.result.converged,
        });
        prev = Some(out);
    }
    push_rates(&mut rows);
    Ok(ConvergenceReport { rows, metadata: config_metadata(cfg) })
}

/// Benchmark CG against PCG on identical systems over the ladder; for each
/// rung the report holds a CG row followed by a PCG row.
pub fn run_solver_bench(cfg: &StudyConfig) -> Result<ConvergenceReport, StudyError> {
    validate_ladder(&cfg.ladder, 1)?;
    let mut rows = Vec::new();
    for (rung, &value) in cfg.ladder.iter().enumerate() {
        for method in [Method::Cg, Method::Pcg] {
            let out = run_rung(cfg, rung, value, method)?;
            let errs = match cfg.example {
                ExampleId::Manufactured => Some(manufactured_errors(cfg, &out)),
                ExampleId::Quadratic => None,
            };
            rows.push(ReportRow {
                grid_or_tau: value,
                err_linf: errs.map(|e| e.0),
                rate_linf: None,
                err_l2: errs.map(|e| e.1),
                rate_l2: None,
                iters_mean: out.result.mean_iterations(),
                wall_seconds: out.wall_seconds,
                converged: out.result.converged,
            });
        }
    }
    let mut metadata = config_metadata(cfg);
    metadata.push_str("bench_rows = cg,pcg per rung\n");
    Ok(ConvergenceReport { rows, metadata })
}

fn sci(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.3e}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(sci).unwrap_or_default()
}

/// CSV with the fixed eight-column schema, LF line endings.
pub fn emit_csv(report: &ConvergenceReport) -> String {
    let mut s = String::from(
        "grid_or_tau,err_linf,rate_linf,err_l2,rate_l2,iters_mean,wall_seconds,converged\n",
    );
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            sci(r.grid_or_tau),
            opt(r.err_linf),
            opt(r.rate_linf),
            opt(r.err_l2),
            opt(r.rate_l2),
            sci(r.iters_mean),
            sci(r.wall_seconds),
            r.converged
        );
    }
    s
}

/// Pipe table carrying the same values as the CSV, with the config echo as
/// a comment block.
pub fn emit_markdown(report: &ConvergenceReport) -> String {
    let mut s = String::new();
    for line in report.metadata.lines() {
        let _ = writeln!(s, "<!-- {line} -->");
    }
    s.push_str(
        "| grid_or_tau | err_linf | rate_linf | err_l2 | rate_l2 | iters_mean | wall_seconds | converged |\n",
    );
    s.push_str("|---|---|---|---|---|---|---|---|\n");
    for r in &report.rows {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} | {} |",
            sci(r.grid_or_tau),
            opt(r.err_linf),
            opt(r.rate_linf),
            opt(r.err_l2),
            opt(r.rate_l2),
            sci(r.iters_mean),
            sci(r.wall_seconds),
            r.converged
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> StudyConfig {
        StudyConfig {
            example: ExampleId::Manufactured,
            axis: Axis::Space,
            scheme: Scheme::Sbd,
            params: ParamBlock {
                alpha: 0.3,
                beta: 0.5,
                gamma: 0.05,
                lambda: 0.1,
                rho: 1.0,
                sigma: 1.25,
                nu: 1.5,
                l: 1.0,
                t_final: 1.0,
            },
            ladder: vec![1.0 / 4.0, 1.0 / 8.0],
            fixed_steps: 16,
            fixed_n: 4,
            solver: SolverBlock::default(),
        }
    }

    #[test]
    fn ladder_validation_rejects_bad_input() {
        let mut cfg = small_cfg();
        cfg.ladder = vec![0.25];
        assert!(matches!(run_convergence(&cfg), Err(StudyError::Config(_))));
        cfg.ladder = vec![0.125, 0.25];
        assert!(matches!(run_convergence(&cfg), Err(StudyError::Config(_))));
    }

    #[test]
    fn space_study_produces_decreasing_errors_and_rates() {
        let cfg = small_cfg();
        let rep = run_convergence(&cfg).unwrap();
        assert_eq!(rep.rows.len(), 2);
        assert!(rep.all_converged());
        assert!(rep.rows[0].rate_linf.is_none(), "first row has no rate");
        let (e0, e1) = (rep.rows[0].err_linf.unwrap(), rep.rows[1].err_linf.unwrap());
        assert!(e1 < e0, "errors should decrease: {e0:.3e} -> {e1:.3e}");
        assert!(rep.rows[1].rate_linf.unwrap() > 0.5);
    }

    #[test]
    fn richardson_time_study_runs_on_quadratic_problem() {
        let mut cfg = small_cfg();
        cfg.example = ExampleId::Quadratic;
        cfg.axis = Axis::Time;
        cfg.scheme = Scheme::BackwardEuler;
        cfg.params.sigma = 2.0;
        cfg.params.nu = 1.2;
        cfg.fixed_n = 4;
        cfg.ladder = vec![1.0 / 4.0, 1.0 / 8.0, 1.0 / 16.0];
        let rep = run_convergence(&cfg).unwrap();
        assert!(rep.rows[0].err_linf.is_none(), "no reference for first rung");
        assert!(rep.rows[1].err_linf.is_some());
        assert!(rep.rows[2].rate_linf.is_some());
        assert!(rep.all_converged());
    }

    #[test]
    fn bench_rows_alternate_and_pcg_wins() {
        let mut cfg = small_cfg();
        cfg.ladder = vec![1.0 / 8.0];
        let rep = run_solver_bench(&cfg).unwrap();
        assert_eq!(rep.rows.len(), 2, "one cg and one pcg row");
        let (cg, pcg) = (&rep.rows[0], &rep.rows[1]);
        assert!(pcg.iters_mean <= cg.iters_mean, "pcg {} vs cg {}", pcg.iters_mean, cg.iters_mean);
        // both methods solve the same system to the same tolerance
        let rel = (cg.err_linf.unwrap() - pcg.err_linf.unwrap()).abs() / cg.err_linf.unwrap();
        assert!(rel < 1e-6);
    }

    #[test]
    fn csv_schema_and_formatting() {
        let cfg = small_cfg();
        let rep = run_convergence(&cfg).unwrap();
        let csv = emit_csv(&rep);
        let mut lines = csv.lines();
        let header = lines.next().unwrap();
        assert_eq!(header.split(',').count(), 8);
        for line in lines {
            assert_eq!(line.split(',').count(), 8, "row: {line}");
        }
        assert!(!csv.contains('\r'), "LF endings only");
        // 4 significant digits scientific
        assert!(csv.contains("2.500e-1") || csv.contains("1.250e-1"));
        let md = emit_markdown(&rep);
        // markdown mirrors the CSV values
        for r in &rep.rows {
            assert!(md.contains(&sci(r.grid_or_tau)));
        }
    }

    #[test]
    fn determinism_across_repeat_runs() {
        // error tables are bitwise reproducible; wall time is not
        let strip = |csv: String| -> String {
            csv.lines()
                .map(|l| {
                    let cols: Vec<&str> = l.split(',').collect();
                    [&cols[..6], &cols[7..]].concat().join(",")
                })
                .collect::<Vec<_>>()
                .join("\n")
        };
        let cfg = small_cfg();
        let a = strip(emit_csv(&run_convergence(&cfg).unwrap()));
        let b = strip(emit_csv(&run_convergence(&cfg).unwrap()));
        assert_eq!(a, b);
    }
}
