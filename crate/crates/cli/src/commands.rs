//! The `quantize` and `verify` commands.

use std::path::Path;

use serde::Serialize;

use sdquant::diagnostics::{run_diagnostics, FdOptions, VerifyOptions};
use sdquant::divergences::{
    entropic_semidiscrete, max_sliced_semidiscrete, sliced_w2_discrete, EntropicConfig,
    MaxSlicedOptions, SlicedConfig, WeightedCloud,
};
use sdquant::lloyd::{run_optimal, run_uniform, LloydOptions, SolverTrace};
use sdquant::{
    power_partition_with, solve_dual, tie_weights, voronoi_partition_with, CostSpec, GridDensity,
    PointConfiguration, SolverOptions,
};

use crate::config::{RunConfig, Solver};
use crate::render::render_svg;
use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Header of the objective history written by the dual and entropic solvers.
pub const HISTORY_CSV_HEADER: &str = "n,value";

/// Everything `quantize` reports. Fields that do not apply to the chosen
/// solver are omitted.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ResultJson {
    pub schema: u32,
    pub solver: Solver,
    pub seed: u64,
    pub n: usize,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Loss (`G_N`, `F_N`), dual value, or divergence value.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    /// `step_tol` or `max_iter` for the Lloyd solvers.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Vec<f64>>>,
    /// Dual weights (potentials).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    /// Mass of every point's region.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub masses: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub direction: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub directions: Option<usize>,
    pub flags: Flags,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Flags {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub descent_violations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outside_support: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hard_min_fallback: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub potential_bound_exceeded: Option<bool>,
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    match out {
        Some(path) => write_file(path, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn history_csv(history: &[f64]) -> String {
    let mut out = format!("{HISTORY_CSV_HEADER}\n");
    for (n, v) in history.iter().enumerate() {
        out.push_str(&format!("{n},{v}\n"));
    }
    out
}

/// Solver failures become exit code 2, except invalid arguments (1) and
/// I/O failures (3).
fn solver_error(e: sdquant::Error) -> CliError {
    match e {
        sdquant::Error::InvalidArgument(m) => CliError::Config(m),
        sdquant::Error::Io(io) => CliError::Io {
            path: "<solver>".into(),
            source: io,
        },
        other => CliError::Solver(other.to_string()),
    }
}

/// Output of one solver run before anything is written.
struct Outcome {
    result: ResultJson,
    trace_csv: Option<String>,
    /// Points, region labels and per-point masses for the render.
    render: Option<(PointConfiguration, Vec<u32>, Vec<f64>)>,
}

fn lloyd_outcome(
    d: &GridDensity,
    cfg: &RunConfig,
    y: PointConfiguration,
    trace: SolverTrace,
    result: &mut ResultJson,
) -> Result<Outcome, CliError> {
    let labels = match &trace.final_weights {
        Some(w) => power_partition_with(d, &y, &w.w, &CostSpec::SquaredEuclidean, cfg.quadrature()),
        None => voronoi_partition_with(d, &y, false, cfg.quadrature()),
    }
    .map_err(solver_error)?
    .labels()
    .to_vec();
    result.converged = true;
    result.value = Some(trace.final_loss);
    result.iterations = Some(trace.rows.len());
    result.stop = Some(if trace.converged {
        "step_tol"
    } else {
        "max_iter"
    });
    result.grad_norm = Some(trace.final_grad_norm);
    result.points = Some(y.rows());
    result.weights = trace.final_weights.as_ref().map(|w| w.w.clone());
    result.masses = Some(trace.final_masses.clone());
    result.flags.descent_violations = Some(trace.violations().len());
    result.flags.outside_support = Some(trace.rows.last().map_or(0, |r| r.outside_support));
    Ok(Outcome {
        result: result.clone(),
        trace_csv: Some(trace.to_csv()),
        render: Some((y, labels, trace.final_masses)),
    })
}

fn run_solver(
    d: &GridDensity,
    cfg: &RunConfig,
    result: &mut ResultJson,
) -> Result<Outcome, CliError> {
    let y = cfg.initial_points(d)?;
    result.n = y.len();
    let inner = SolverOptions {
        mass_tol: cfg.mass_tol,
        quadrature: cfg.quadrature(),
        ..SolverOptions::default()
    };
    match cfg.solver() {
        Solver::Optimal | Solver::Uniform => {
            y.require_off_diagonal()
                .map_err(|e| CliError::Config(e.to_string()))?;
            let opts = LloydOptions {
                max_iter: cfg.max_iter.unwrap_or(10_000),
                step_tol: cfg.step_tol,
                check_descent: cfg.check_descent.unwrap_or(false),
                seed: cfg.seed(),
                inner,
                quadrature: cfg.quadrature(),
            };
            let run = if cfg.solver() == Solver::Optimal {
                run_optimal
            } else {
                run_uniform
            };
            let (y, trace) = run(d, &y, &opts).map_err(solver_error)?;
            lloyd_outcome(d, cfg, y, trace, result)
        }
        Solver::Dual => {
            let opts = SolverOptions {
                max_iter: cfg.max_iter.unwrap_or(10_000),
                ..inner
            };
            let lambda = tie_weights(&y);
            let report = solve_dual(
                d,
                &y,
                &CostSpec::SquaredEuclidean,
                lambda.as_slice(),
                &opts,
                None,
            )
            .map_err(solver_error)?;
            let labels = match &report.plan {
                Some(plan) => plan.partition(d, &y),
                None => power_partition_with(
                    d,
                    &y,
                    &report.weights.w,
                    &CostSpec::SquaredEuclidean,
                    opts.quadrature,
                )
                .map_err(solver_error)?,
            }
            .labels()
            .to_vec();
            result.converged = report.converged;
            result.value = Some(report.value);
            result.iterations = Some(report.iterations);
            result.points = Some(y.rows());
            result.weights = Some(report.weights.w.clone());
            result.masses = Some(report.masses.clone());
            Ok(Outcome {
                result: result.clone(),
                trace_csv: Some(history_csv(&report.history)),
                render: Some((y, labels, report.masses)),
            })
        }
        Solver::Entropic => {
            let defaults = EntropicConfig::default();
            let ecfg = EntropicConfig {
                epsilon: cfg.epsilon.unwrap_or(defaults.epsilon),
                max_iter: cfg.max_iter.unwrap_or(defaults.max_iter),
                grad_tol: cfg.mass_tol.unwrap_or(defaults.grad_tol),
            };
            let r = entropic_semidiscrete(d, &y, &CostSpec::SquaredEuclidean, &ecfg)
                .map_err(solver_error)?;
            let labels = power_partition_with(
                d,
                &y,
                &r.weights.w,
                &CostSpec::SquaredEuclidean,
                sdquant::Quadrature::CellCenter,
            )
            .map_err(solver_error)?
            .labels()
            .to_vec();
            result.converged = true;
            result.value = Some(r.value);
            result.iterations = Some(r.iterations);
            result.grad_norm = Some(r.grad_norm);
            result.points = Some(y.rows());
            result.weights = Some(r.weights.w.clone());
            result.masses = Some(r.soft_masses.clone());
            result.flags.hard_min_fallback = Some(r.flags.hard_min_fallback);
            result.flags.potential_bound_exceeded = Some(r.flags.potential_bound_exceeded);
            Ok(Outcome {
                result: result.clone(),
                trace_csv: Some(history_csv(&r.history)),
                render: Some((y, labels, r.soft_masses)),
            })
        }
        Solver::Sliced => {
            let x = WeightedCloud::from_configuration(&y);
            let other = match &cfg.against {
                Some(p) => WeightedCloud::from_configuration(&p.to_configuration(d.dim())?),
                None => grid_cloud(d),
            };
            let scfg = SlicedConfig {
                num_directions: cfg
                    .directions
                    .unwrap_or(SlicedConfig::default().num_directions),
                seed: cfg.seed(),
            };
            let est = sliced_w2_discrete(&x, &other, &scfg).map_err(solver_error)?;
            result.converged = true;
            result.value = Some(est.value);
            result.std_error = Some(est.std_error);
            result.directions = Some(est.num_directions);
            result.points = Some(y.rows());
            Ok(Outcome {
                result: result.clone(),
                trace_csv: None,
                render: None,
            })
        }
        Solver::MaxSliced => {
            let opts = MaxSlicedOptions {
                seed: cfg.seed(),
                max_steps: cfg
                    .max_iter
                    .unwrap_or(MaxSlicedOptions::default().max_steps),
                ..MaxSlicedOptions::default()
            };
            let r = max_sliced_semidiscrete(d, &y, &opts).map_err(solver_error)?;
            result.converged = true;
            result.value = Some(r.value);
            result.direction = Some(r.direction);
            result.iterations = Some(r.evaluations);
            result.points = Some(y.rows());
            Ok(Outcome {
                result: result.clone(),
                trace_csv: None,
                render: None,
            })
        }
    }
}

/// The density as a discrete cloud of cell centers weighted by cell mass.
fn grid_cloud(d: &GridDensity) -> WeightedCloud {
    let support = d.support();
    let flat: Vec<f64> = support.iter().flat_map(|&k| d.center(k).to_vec()).collect();
    let points = ndarray::Array2::from_shape_vec((support.len(), d.dim()), flat).expect("shape");
    let masses: Vec<f64> = support.iter().map(|&k| d.cell_mass(k)).collect();
    let total: f64 = sdquant::numeric::sum(masses.iter().copied());
    WeightedCloud::new(points, masses.iter().map(|m| m / total).collect())
        .expect("normalized density")
}

/// Load the density, run the configured solver and write the result JSON,
/// trace CSV and optional SVG.
///
/// On solver failure the result is still written, with `converged: false`
/// and the error message, before the error is returned.
pub fn cmd_quantize(cfg: &RunConfig) -> Result<ResultJson, CliError> {
    cfg.validate()?;
    let d = cfg.load_density()?;
    let mut result = ResultJson {
        schema: SCHEMA_VERSION,
        solver: cfg.solver(),
        seed: cfg.seed(),
        n: cfg.n.unwrap_or(0),
        ..ResultJson::default()
    };
    let outcome = match run_solver(&d, cfg, &mut result) {
        Ok(o) => o,
        Err(CliError::Solver(message)) => {
            result.converged = false;
            result.error = Some(message.clone());
            emit_json(&result, cfg.out.as_deref())?;
            return Err(CliError::Solver(message));
        }
        Err(e) => return Err(e),
    };
    emit_json(&outcome.result, cfg.out.as_deref())?;
    if let Some(path) = &cfg.trace {
        match &outcome.trace_csv {
            Some(csv) => write_file(path, csv.as_bytes())?,
            None => eprintln!(
                "note: this solver has no iteration trace; {} not written",
                path.display()
            ),
        }
    }
    if let Some(path) = &cfg.render {
        let (y, labels, masses) = match outcome.render {
            Some(r) => r,
            None => {
                let y = cfg.initial_points(&d)?;
                let labels = voronoi_partition_with(&d, &y, true, sdquant::Quadrature::CellCenter)
                    .map_err(solver_error)?;
                let masses = labels.masses();
                (y, labels.labels().to_vec(), masses)
            }
        };
        let svg = render_svg(&d, &labels, &y, &masses).map_err(CliError::Config)?;
        write_file(path, svg.as_bytes())?;
    }
    if !outcome.result.converged {
        return Err(CliError::Solver("the solver did not converge".into()));
    }
    Ok(outcome.result)
}

#[derive(Debug, Clone, Serialize)]
struct VerifyJson<'a> {
    schema: u32,
    passed: bool,
    checks: &'a [sdquant::diagnostics::Check],
}

/// Run the diagnostic suite and print a pass/fail table. `fault_scale`
/// multiplies the analytic gradients, to exercise the checker.
pub fn cmd_verify(
    cfg: &RunConfig,
    fault_scale: f64,
) -> Result<sdquant::DiagnosticReport, CliError> {
    cfg.validate()?;
    let d = cfg.load_density()?;
    let y = cfg.initial_points(&d)?;
    y.require_off_diagonal()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let defaults = VerifyOptions::default();
    let opts = VerifyOptions {
        fd: FdOptions {
            fault_scale,
            ..FdOptions::default()
        },
        run_iterations: cfg.max_iter.unwrap_or(defaults.run_iterations),
        inner: SolverOptions {
            mass_tol: Some(cfg.mass_tol.unwrap_or(1e-10)),
            ..defaults.inner
        },
        quadrature: cfg.quadrature(),
        entropic: EntropicConfig {
            epsilon: cfg.epsilon.unwrap_or(defaults.entropic.epsilon),
            ..defaults.entropic
        },
    };
    let report = match run_diagnostics(&d, &y, &opts) {
        Ok(r) => r,
        Err(e) => return Err(solver_error(e)),
    };
    print!("{}", report.to_table());
    if let Some(path) = &cfg.out {
        let json = VerifyJson {
            schema: SCHEMA_VERSION,
            passed: report.passed(),
            checks: &report.checks,
        };
        emit_json(&json, Some(path))?;
    }
    let failed = report.checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        for c in report.checks.iter().filter(|c| !c.passed) {
            eprintln!(
                "FAILED {}: {} (value {:.6e}, tolerance {:.6e})",
                c.name, c.detail, c.value, c.tolerance
            );
        }
        return Err(CliError::ChecksFailed(failed));
    }
    Ok(report)
}
