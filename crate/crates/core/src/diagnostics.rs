//! Numerical verification of the gradient formulas, descent inequalities
//! and dual optimality conditions on a concrete instance.

use std::fmt::Write as _;

use ndarray::Array2;
use serde::Serialize;

use crate::cells::{tie_weights, PointConfiguration};
use crate::cost::CostSpec;
use crate::density::{GridDensity, Quadrature};
use crate::divergences::{entropic_semidiscrete, entropic_sweep, EntropicConfig};
use crate::dual::{solve_dual, SolverOptions};
use crate::lloyd::{
    grad_optimal, grad_uniform, loss_optimal, loss_uniform, run_optimal, run_uniform, LloydOptions,
};
use crate::numeric;
use crate::Result;

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// The measured quantity (error, residual or violation count).
    pub value: f64,
    pub tolerance: f64,
    /// The inequality that failed, empty on success.
    pub detail: String,
}

impl Check {
    fn at_most(name: &str, value: f64, tolerance: f64, detail: impl FnOnce() -> String) -> Self {
        let passed = value <= tolerance;
        Self {
            name: name.into(),
            passed,
            value,
            tolerance,
            detail: if passed { String::new() } else { detail() },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DiagnosticReport {
    pub checks: Vec<Check>,
}

impl DiagnosticReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Fixed-width pass/fail table, one check per line.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<28} {:<6} {:>12} {:>12}  detail",
            "check", "result", "value", "tolerance"
        );
        for c in &self.checks {
            let _ = writeln!(
                out,
                "{:<28} {:<6} {:>12.3e} {:>12.3e}  {}",
                c.name,
                if c.passed { "PASS" } else { "FAIL" },
                c.value,
                c.tolerance,
                c.detail
            );
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdOptions {
    /// Central-difference step.
    pub step: f64,
    /// Allowed relative error per coordinate.
    pub rel_tol: f64,
    /// Multiplies the analytic gradient before comparison. `1.0` except
    /// when deliberately injecting a fault to test the checker itself.
    pub fault_scale: f64,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self {
            step: 1e-4,
            rel_tol: 1e-3,
            fault_scale: 1.0,
        }
    }
}

/// Analytic gradient against central differences of the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub analytic: Array2<f64>,
    pub numeric: Array2<f64>,
    /// Largest per-coordinate relative error.
    pub max_rel_error: f64,
    /// `(point, axis)` of the largest error.
    pub worst: (usize, usize),
}

/// `|a − b| / max(|a|, |b|, floor)`, or `0` when the denominator vanishes.
///
/// The floor keeps coordinates where the gradient vanishes from comparing
/// finite-difference truncation error against zero; the checks pass the
/// difference step.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(floor);
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn central_differences(
    y: &PointConfiguration,
    analytic: Array2<f64>,
    opts: &FdOptions,
    loss: impl Fn(&PointConfiguration) -> Result<f64>,
) -> Result<GradientCheck> {
    let analytic = analytic * opts.fault_scale;
    let mut numeric = Array2::zeros(analytic.raw_dim());
    let mut max_rel_error = 0.0;
    let mut worst = (0, 0);
    for i in 0..y.len() {
        for a in 0..y.dim() {
            let mut p = y.as_array().clone();
            p[[i, a]] += opts.step;
            let plus = loss(&PointConfiguration::new(p.clone())?)?;
            p[[i, a]] -= 2.0 * opts.step;
            let minus = loss(&PointConfiguration::new(p)?)?;
            let fd = (plus - minus) / (2.0 * opts.step);
            numeric[[i, a]] = fd;
            let rel = relative_error(analytic[[i, a]], fd, opts.step);
            if rel > max_rel_error {
                max_rel_error = rel;
                worst = (i, a);
            }
        }
    }
    Ok(GradientCheck {
        analytic,
        numeric,
        max_rel_error,
        worst,
    })
}

/// Compare `∇G_N = M(V)(Y − T_N(Y))` with central differences of `G_N`.
pub fn check_gradient_optimal(
    d: &GridDensity,
    y: &PointConfiguration,
    quadrature: Quadrature,
    opts: &FdOptions,
) -> Result<GradientCheck> {
    let g = grad_optimal(d, y, quadrature)?;
    central_differences(y, g, opts, |p| loss_optimal(d, p, quadrature))
}

/// Compare `∇F_N = (Y − B_N(Y))/N` with central differences of `F_N`.
pub fn check_gradient_uniform(
    d: &GridDensity,
    y: &PointConfiguration,
    inner: &SolverOptions,
    opts: &FdOptions,
) -> Result<GradientCheck> {
    let g = grad_uniform(d, y, inner)?;
    central_differences(y, g, opts, |p| Ok(loss_uniform(d, p, inner)?.0))
}

/// `W_ε + ε` along a decreasing `ε` sweep, compared with the unregularized
/// transport cost of the same discrete problem.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCheck {
    pub epsilons: Vec<f64>,
    /// `W_ε + ε` per sweep entry.
    pub shifted_values: Vec<f64>,
    pub transport_cost: f64,
    /// Largest increase of `W_ε + ε` from one entry to the next.
    pub max_increase: f64,
    /// `|W_ε + ε − T_c|` at the smallest `ε`.
    pub final_gap: f64,
    /// `5·(max cell mass + ε_min)`.
    pub gap_tolerance: f64,
}

impl SweepCheck {
    pub fn passed(&self) -> bool {
        self.max_increase <= 1e-12 && self.final_gap <= self.gap_tolerance
    }
}

/// Run an entropic sweep with `epsilons` sorted from large to small.
pub fn check_entropic_sweep(
    d: &GridDensity,
    y: &PointConfiguration,
    cost: &CostSpec,
    epsilons: &[f64],
    cfg: &EntropicConfig,
) -> Result<SweepCheck> {
    let mut eps = epsilons.to_vec();
    eps.sort_by(|a, b| b.total_cmp(a));
    let sweep = entropic_sweep(d, y, cost, &eps, cfg)?;
    let shifted: Vec<f64> = sweep.iter().map(|(e, r)| r.value + e).collect();
    let lambda = tie_weights(y);
    let opts = SolverOptions::default()
        .with_quadrature(Quadrature::CellCenter)
        .with_mass_tol(1e-12);
    let exact = solve_dual(d, y, cost, lambda.as_slice(), &opts, None)?;
    let max_increase = shifted
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0);
    let eps_min = eps.last().copied().unwrap_or(0.0);
    Ok(SweepCheck {
        final_gap: (shifted.last().copied().unwrap_or(f64::NAN) - exact.value).abs(),
        gap_tolerance: 5.0 * (d.max_cell_mass() + eps_min),
        epsilons: eps,
        shifted_values: shifted,
        transport_cost: exact.value,
        max_increase,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub fd: FdOptions,
    /// Length of the short Lloyd runs whose descent inequalities are checked.
    pub run_iterations: usize,
    /// Dual settings for the uniform loss and the mass-residual check.
    pub inner: SolverOptions,
    pub quadrature: Quadrature,
    pub entropic: EntropicConfig,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            fd: FdOptions::default(),
            run_iterations: 10,
            inner: SolverOptions::default().with_mass_tol(1e-10),
            quadrature: Quadrature::Exact,
            entropic: EntropicConfig::default(),
        }
    }
}

fn violation_check(name: &str, violations: &[(usize, &'static str, f64, f64)]) -> Check {
    Check::at_most(name, violations.len() as f64, 0.0, || {
        let (n, what, lhs, rhs) = violations[0];
        format!("iteration {n}: {what} lhs {lhs:.6e} < rhs {rhs:.6e}")
    })
}

/// Run every check on `(d, y)`.
pub fn run_diagnostics(
    d: &GridDensity,
    y: &PointConfiguration,
    opts: &VerifyOptions,
) -> Result<DiagnosticReport> {
    let mut checks = Vec::new();
    let inner = SolverOptions {
        quadrature: opts.quadrature,
        ..opts.inner.clone()
    };

    for (name, g) in [
        (
            "gradient G_N",
            check_gradient_optimal(d, y, opts.quadrature, &opts.fd)?,
        ),
        (
            "gradient F_N",
            check_gradient_uniform(d, y, &inner, &opts.fd)?,
        ),
    ] {
        checks.push(Check::at_most(
            name,
            g.max_rel_error,
            opts.fd.rel_tol,
            || {
                let (i, a) = g.worst;
                format!(
                    "point {i} axis {a}: analytic {:.6e} vs finite difference {:.6e}",
                    g.analytic[[i, a]],
                    g.numeric[[i, a]]
                )
            },
        ));
    }

    let lloyd = LloydOptions {
        max_iter: opts.run_iterations.max(1),
        step_tol: Some(0.0),
        inner: inner.clone(),
        quadrature: opts.quadrature,
        ..LloydOptions::default()
    };
    let (_, trace) = run_optimal(d, y, &lloyd)?;
    checks.push(violation_check("descent optimal", &trace.violations()));
    let (_, trace) = run_uniform(d, y, &lloyd)?;
    checks.push(violation_check("descent uniform", &trace.violations()));
    let n = y.len() as f64;
    let diam = d.support_diameter();
    let identity = trace
        .rows
        .iter()
        .map(|r| r.identity_residual - n * r.inner_residual * diam)
        .fold(f64::NEG_INFINITY, f64::max);
    checks.push(Check::at_most(
        "gradient-step identity",
        identity,
        1e-12,
        || "‖Y_{n+1} − (Y_n − N∇F_N)‖ exceeds N·residual·diam".into(),
    ));

    let lambda = tie_weights(y);
    let report = solve_dual(
        d,
        y,
        &CostSpec::SquaredEuclidean,
        lambda.as_slice(),
        &inner,
        None,
    )?;
    checks.push(Check::at_most(
        "dual mass residual",
        report.max_residual(),
        report.mass_tol,
        || format!("after {} iterations", report.iterations),
    ));

    let entropic = entropic_semidiscrete(d, y, &CostSpec::SquaredEuclidean, &opts.entropic)?;
    checks.push(Check::at_most(
        "entropic gradient",
        entropic.grad_norm,
        opts.entropic.grad_tol,
        || format!("after {} iterations", entropic.iterations),
    ));
    let soft_total = numeric::sum(entropic.soft_masses.iter().copied());
    checks.push(Check::at_most(
        "entropic soft mass",
        (soft_total - 1.0).abs(),
        1e-10,
        || format!("soft masses sum to {soft_total}"),
    ));

    Ok(DiagnosticReport { checks })
}
