//! Command-line harness for convergence studies and CG/PCG benchmarks.
//!
//! Reads a TOML config describing the problem, refinement ladder and solver
//! settings; every CLI flag overrides its config key. Emits the report as
//! CSV or a Markdown pipe table. Exit code 0 iff every rung's linear solves
//! converged; otherwise a machine-readable `FAIL ...` line goes to stderr.

use anyhow::{bail, Context, Result};
use clap::Parser;
use serde::Deserialize;
use std::path::PathBuf;
use std::process::ExitCode;
use tfk2d::solver::Method;
use tfk2d::special::Scheme;
use tfk2d::study::{
    emit_csv, emit_markdown, run_convergence, run_solver_bench, Axis, ConvergenceReport,
    ExampleId, ParamBlock, SolverBlock, StudyConfig,
};

#[derive(Parser, Debug)]
#[command(name = "tfk2d", about = "convergence studies for the 2D tempered fractional solver")]
struct Cli {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Problem: 1 (manufactured solution) or 3 (unknown solution).
    #[arg(long)]
    example: Option<u32>,
    /// Refinement axis: space | time.
    #[arg(long)]
    axis: Option<String>,
    /// Time discretisation: be | sbd.
    #[arg(long)]
    scheme: Option<String>,
    /// Krylov method: cg | pcg. Also selects the benchmark mode via config.
    #[arg(long)]
    method: Option<String>,
    /// Output file path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format: csv | markdown.
    #[arg(long)]
    format: Option<String>,
    /// Relative residual tolerance for the per-step linear solves.
    #[arg(long)]
    tol: Option<f64>,
    /// Allow resolutions beyond the desk-scale guardrail (N > 256 or L > 2000).
    #[arg(long)]
    force: bool,
    /// Run the CG-vs-PCG benchmark instead of a convergence study.
    #[arg(long)]
    bench: bool,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    example: Option<u32>,
    axis: Option<String>,
    scheme: Option<String>,
    bench: Option<bool>,
    #[serde(default)]
    params: FileParams,
    ladder: Option<Vec<f64>>,
    fixed_steps: Option<usize>,
    fixed_n: Option<usize>,
    #[serde(default)]
    solver: FileSolver,
    out: Option<String>,
    format: Option<String>,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct FileParams {
    alpha: Option<f64>,
    beta: Option<f64>,
    gamma: Option<f64>,
    lambda: Option<f64>,
    rho: Option<f64>,
    sigma: Option<f64>,
    nu: Option<f64>,
    l: Option<f64>,
    t_final: Option<f64>,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct FileSolver {
    method: Option<String>,
    tol: Option<f64>,
    max_iter: Option<usize>,
}

fn parse_axis(s: &str) -> Result<Axis> {
    match s.to_ascii_lowercase().as_str() {
        "space" => Ok(Axis::Space),
        "time" => Ok(Axis::Time),
        other => bail!("unknown axis '{other}' (expected space|time)"),
    }
}

fn parse_scheme(s: &str) -> Result<Scheme> {
    match s.to_ascii_lowercase().as_str() {
        "be" | "backward-euler" => Ok(Scheme::BackwardEuler),
        "sbd" => Ok(Scheme::Sbd),
        other => bail!("unknown scheme '{other}' (expected be|sbd)"),
    }
}

fn parse_method(s: &str) -> Result<Method> {
    match s.to_ascii_lowercase().as_str() {
        "cg" => Ok(Method::Cg),
        "pcg" => Ok(Method::Pcg),
        other => bail!("unknown method '{other}' (expected cg|pcg)"),
    }
}

fn parse_example(id: u32) -> Result<ExampleId> {
    match id {
        1 => Ok(ExampleId::Manufactured),
        3 => Ok(ExampleId::Quadratic),
        other => bail!("unknown example id {other} (expected 1 or 3)"),
    }
}

struct Run {
    study: StudyConfig,
    bench: bool,
    out: Option<PathBuf>,
    format: String,
}

fn merge(cli: &Cli, file: FileConfig) -> Result<Run> {
    let example = parse_example(cli.example.or(file.example).unwrap_or(1))?;
    let axis = parse_axis(cli.axis.as_deref().or(file.axis.as_deref()).unwrap_or("space"))?;
    let scheme = parse_scheme(cli.scheme.as_deref().or(file.scheme.as_deref()).unwrap_or("sbd"))?;
    let method = parse_method(
        cli.method.as_deref().or(file.solver.method.as_deref()).unwrap_or("pcg"),
    )?;
    let p = file.params;
    let params = ParamBlock {
        alpha: p.alpha.unwrap_or(0.3),
        beta: p.beta.unwrap_or(0.5),
        gamma: p.gamma.unwrap_or(0.05),
        lambda: p.lambda.unwrap_or(0.1),
        rho: p.rho.unwrap_or(1.0),
        sigma: p.sigma.unwrap_or(1.25),
        nu: p.nu.unwrap_or(1.5),
        l: p.l.unwrap_or(1.0),
        t_final: p.t_final.unwrap_or(1.0),
    };
    let ladder = file
        .ladder
        .unwrap_or_else(|| vec![params.l / 8.0, params.l / 16.0, params.l / 32.0]);
    let study = StudyConfig {
        example,
        axis,
        scheme,
        params,
        ladder,
        fixed_steps: file.fixed_steps.unwrap_or(64),
        fixed_n: file.fixed_n.unwrap_or(16),
        solver: SolverBlock {
            method,
            tol: cli.tol.or(file.solver.tol).unwrap_or(1e-9),
            max_iter: file.solver.max_iter.unwrap_or(10_000),
        },
    };
    let format = cli
        .format
        .clone()
        .or(file.format)
        .unwrap_or_else(|| "csv".into())
        .to_ascii_lowercase();
    if format != "csv" && format != "markdown" {
        bail!("unknown format '{format}' (expected csv|markdown)");
    }
    Ok(Run {
        study,
        bench: cli.bench || file.bench.unwrap_or(false),
        out: cli.out.clone().or(file.out.map(PathBuf::from)),
        format,
    })
}

/// Desk-scale guardrail: the dense end of the ladder can take hours.
fn guard(run: &Run, force: bool) -> Result<()> {
    if force {
        return Ok(());
    }
    let p = &run.study.params;
    for &v in &run.study.ladder {
        match run.study.axis {
            Axis::Space => {
                let n = (p.l / v).round() as usize;
                if n > 256 {
                    bail!("N = {n} exceeds the desk-scale guardrail (256); pass --force to override");
                }
            }
            Axis::Time => {
                let steps = (p.t_final / v).round() as usize;
                if steps > 2000 {
                    bail!("L = {steps} exceeds the desk-scale guardrail (2000); pass --force to override");
                }
            }
        }
    }
    if run.study.fixed_n > 256 {
        bail!("fixed_n = {} exceeds the desk-scale guardrail (256); pass --force to override", run.study.fixed_n);
    }
    if run.study.fixed_steps > 2000 {
        bail!("fixed_steps = {} exceeds the desk-scale guardrail (2000); pass --force to override", run.study.fixed_steps);
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<ConvergenceReport> {
    let file: FileConfig = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => FileConfig::default(),
    };
    let run = merge(cli, file)?;
    guard(&run, cli.force)?;
    let report = if run.bench {
        run_solver_bench(&run.study)?
    } else {
        run_convergence(&run.study)?
    };
    let rendered = match run.format.as_str() {
        "markdown" => emit_markdown(&report),
        _ => emit_csv(&report),
    };
    match &run.out {
        Some(path) => std::fs::write(path, rendered)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{rendered}"),
    }
    Ok(report)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(report) if report.all_converged() => ExitCode::SUCCESS,
        Ok(report) => {
            let bad: Vec<String> = report
                .rows
                .iter()
                .enumerate()
                .filter(|(_, r)| !r.converged)
                .map(|(i, r)| format!("row={i} value={:.4e}", r.grid_or_tau))
                .collect();
            eprintln!("FAIL reason=non-converged rungs [{}]", bad.join("; "));
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("FAIL reason=error detail={e:#}");
            ExitCode::FAILURE
        }
    }
}
