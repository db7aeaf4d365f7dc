//! Lloyd-type fixed-point solvers for optimal and uniform quantization.
//!
//! * Optimal quantization minimizes
//!   `G_N(Y) = ½ ∫ min_i ‖x − y_i‖² dμ(x)`, the squared Wasserstein distance
//!   to the best weighted Dirac sum on `Y`. Its fixed-point map sends every
//!   point to the barycenter of its Voronoi region, and
//!   `∇G_N(Y) = M(V(Y)) (Y − T_N(Y))` with `M` the diagonal of region masses.
//! * Uniform quantization minimizes `F_N(Y) = ½ W₂²(μ, (1/N) Σ δ_{y_i})`.
//!   The map `B_N(Y)_i = N ∫ x dγ_i` uses the optimal plan onto equal masses,
//!   and `∇F_N(Y) = (Y − B_N(Y)) / N`.
//!
//! Both runs record a [`SolverTrace`] with the descent inequalities that
//! make the iterations converge.

use std::fmt::Write as _;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cells::{tie_weights, voronoi_partition_with, CellPartition, PointConfiguration};
use crate::cost::CostSpec;
use crate::density::{GridDensity, Quadrature};
use crate::dual::{solve_dual, DualReport, DualWeights, SolverOptions};
use crate::numeric::{self, CompensatedSum};
use crate::{Error, Result};

/// Absolute slack allowed in every descent inequality.
pub const DESCENT_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct LloydOptions {
    pub max_iter: usize,
    /// Stop once `‖Y_{n+1} − Y_n‖ ≤ step_tol`. `None` selects
    /// `1e−9 · diam(supp μ)`.
    pub step_tol: Option<f64>,
    /// Fail with [`Error::DescentViolation`] as soon as an inequality breaks.
    pub check_descent: bool,
    pub seed: u64,
    /// Dual solver settings for the uniform variant. Its quadrature is
    /// replaced by [`LloydOptions::quadrature`].
    pub inner: SolverOptions,
    pub quadrature: Quadrature,
}

impl Default for LloydOptions {
    fn default() -> Self {
        Self {
            max_iter: 10_000,
            step_tol: None,
            check_descent: false,
            seed: 0,
            inner: SolverOptions::default(),
            quadrature: Quadrature::Exact,
        }
    }
}

impl LloydOptions {
    pub fn resolved_step_tol(&self, d: &GridDensity) -> f64 {
        self.step_tol.unwrap_or(1e-9 * d.support_diameter())
    }
}

/// One iteration `Y_n → Y_{n+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub n: usize,
    /// Loss at `Y_n`.
    pub loss: f64,
    pub grad_norm: f64,
    pub step_norm: f64,
    /// Smallest region mass at `Y_n`.
    pub min_cell_mass: f64,
    /// `loss(Y_n) − loss(Y_{n+1})`.
    pub descent_lhs: f64,
    /// `(ℓ̂/2)‖∇G_N‖‖ΔY‖` (optimal) or `‖ΔY‖²/(2N)` (uniform).
    pub descent_rhs: f64,
    pub inner_iterations: usize,
    /// `½ Σ μ(V_i)‖Δy_i‖²` (optimal only, zero otherwise).
    pub intermediate_rhs: f64,
    /// Extra slack granted to the uniform inequality for inexact duals.
    pub inner_slack: f64,
    /// Largest dual mass residual at `Y_n` (uniform only).
    pub inner_residual: f64,
    /// `‖Y_{n+1} − (Y_n − N∇F_N(Y_n))‖` (uniform only).
    pub identity_residual: f64,
    /// Points of `Y_{n+1}` outside the support of `μ`.
    pub outside_support: usize,
}

impl TraceRow {
    pub fn monotone(&self) -> bool {
        self.descent_lhs >= -DESCENT_SLACK - self.inner_slack
    }

    pub fn descent_holds(&self) -> bool {
        self.descent_lhs >= self.descent_rhs - DESCENT_SLACK - self.inner_slack
    }

    pub fn intermediate_holds(&self) -> bool {
        self.descent_lhs >= self.intermediate_rhs - DESCENT_SLACK - self.inner_slack
    }

    fn first_violation(&self) -> Option<(&'static str, f64, f64)> {
        if !self.monotone() {
            Some(("monotone loss", self.descent_lhs, 0.0))
        } else if !self.intermediate_holds() {
            Some((
                "intermediate descent",
                self.descent_lhs,
                self.intermediate_rhs,
            ))
        } else if !self.descent_holds() {
            Some(("strong descent", self.descent_lhs, self.descent_rhs))
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Optimal,
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverTrace {
    pub variant: Variant,
    pub rows: Vec<TraceRow>,
    /// Loss at the returned configuration.
    pub final_loss: f64,
    /// Gradient norm at the returned configuration.
    pub final_grad_norm: f64,
    /// Region masses at the returned configuration.
    pub final_masses: Vec<f64>,
    /// Dual weights at the returned configuration (uniform only).
    pub final_weights: Option<DualWeights>,
    /// True when the step tolerance was met before `max_iter`.
    pub converged: bool,
}

pub const TRACE_CSV_HEADER: &str =
    "n,loss,grad_norm,step_norm,min_cell_mass,descent_lhs,descent_rhs,inner_iterations";

impl SolverTrace {
    /// Running minimum of the region masses over the whole run.
    pub fn min_cell_mass(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.min_cell_mass)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn violations(&self) -> Vec<(usize, &'static str, f64, f64)> {
        self.rows
            .iter()
            .filter_map(|r| r.first_violation().map(|(what, l, rr)| (r.n, what, l, rr)))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.n,
                r.loss,
                r.grad_norm,
                r.step_norm,
                r.min_cell_mass,
                r.descent_lhs,
                r.descent_rhs,
                r.inner_iterations
            );
        }
        out
    }
}

/// Draw `n` i.i.d. points from `μ`: a cell by inverse CDF over the support,
/// then a uniform position inside it.
pub fn sample_points(d: &GridDensity, n: usize, seed: u64) -> Result<PointConfiguration> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one point".into()));
    }
    let support = d.support();
    if support.is_empty() {
        return Err(Error::DegenerateMeasure("density has no support".into()));
    }
    let mut cdf = Vec::with_capacity(support.len());
    let mut acc = CompensatedSum::new();
    for &k in support {
        acc.add(d.cell_mass(k));
        cdf.push(acc.value());
    }
    let total = acc.value();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = d.dim();
    let mut flat = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let u: f64 = rng.random::<f64>() * total;
        let pos = cdf.partition_point(|&c| c <= u).min(support.len() - 1);
        let center = d.center(support[pos]);
        for (&c, &h) in center.iter().zip(d.spacing()) {
            let jitter: f64 = rng.random::<f64>() - 0.5;
            flat.push(c + jitter * h);
        }
    }
    PointConfiguration::new(Array2::from_shape_vec((n, dim), flat).expect("shape"))
}

/// `G_N(Y) = ½ Σ_k m_k min_i ‖x_k − y_i‖²`; defined on the diagonal too.
pub fn loss_optimal(
    d: &GridDensity,
    y: &PointConfiguration,
    quadrature: Quadrature,
) -> Result<f64> {
    let p = voronoi_partition_with(d, y, true, quadrature)?;
    Ok(0.5 * numeric::sum(p.stats().iter().map(|s| s.second_moment)))
}

fn barycenters(
    y: &PointConfiguration,
    p: &CellPartition,
    iteration: Option<usize>,
) -> Result<PointConfiguration> {
    let mut rows = Vec::with_capacity(y.len());
    for (i, s) in p.stats().iter().enumerate() {
        match &s.barycenter {
            Some(b) => rows.push(b.clone()),
            None => {
                return Err(Error::EmptyRegion {
                    region: i,
                    iteration,
                })
            }
        }
    }
    PointConfiguration::from_rows(&rows)
}

/// `T_N(Y)`: barycenters of the Voronoi regions.
pub fn step_optimal(
    d: &GridDensity,
    y: &PointConfiguration,
    quadrature: Quadrature,
) -> Result<PointConfiguration> {
    let p = voronoi_partition_with(d, y, false, quadrature)?;
    barycenters(y, &p, None)
}

fn scaled_difference(
    y: &PointConfiguration,
    target: &PointConfiguration,
    scale: &[f64],
) -> Array2<f64> {
    let mut g = y.as_array() - target.as_array();
    for (mut row, &s) in g.rows_mut().into_iter().zip(scale) {
        row *= s;
    }
    g
}

/// `∇G_N(Y)`: row `i` is `μ(V_i)(y_i − T_N(Y)_i)`.
pub fn grad_optimal(
    d: &GridDensity,
    y: &PointConfiguration,
    quadrature: Quadrature,
) -> Result<Array2<f64>> {
    let p = voronoi_partition_with(d, y, false, quadrature)?;
    let t = barycenters(y, &p, None)?;
    Ok(scaled_difference(y, &t, &p.masses()))
}

fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Everything the uniform variant needs at one configuration.
#[derive(Debug, Clone)]
pub struct UniformState {
    /// `F_N(Y)`.
    pub loss: f64,
    pub report: DualReport,
    /// `B_N(Y)`.
    pub image: PointConfiguration,
}

impl UniformState {
    /// `∇F_N(Y) = (Y − B_N(Y)) / N`.
    pub fn gradient(&self, y: &PointConfiguration) -> Array2<f64> {
        let n = y.len() as f64;
        (y.as_array() - self.image.as_array()) / n
    }
}

/// Solve the equal-mass dual at `y` (tie weights on the diagonal) and
/// evaluate `F_N` and `B_N`.
pub fn uniform_state(
    d: &GridDensity,
    y: &PointConfiguration,
    inner: &SolverOptions,
    warm: Option<&[f64]>,
    iteration: Option<usize>,
) -> Result<UniformState> {
    let lambda = tie_weights(y);
    let report = solve_dual(
        d,
        y,
        &CostSpec::SquaredEuclidean,
        lambda.as_slice(),
        inner,
        warm,
    )?;
    if !report.converged {
        return Err(Error::DualNotConverged {
            report: Box::new(report),
            iteration,
        });
    }
    let n = y.len() as f64;
    let moments = &report.moments;
    let image = PointConfiguration::new(
        Array2::from_shape_vec((y.len(), y.dim()), moments.iter().map(|m| n * m).collect())
            .expect("shape"),
    )?;
    Ok(UniformState {
        loss: 0.5 * report.value,
        report,
        image,
    })
}

/// `F_N(Y)` and the maximizing weights.
pub fn loss_uniform(
    d: &GridDensity,
    y: &PointConfiguration,
    inner: &SolverOptions,
) -> Result<(f64, DualWeights)> {
    let lambda = tie_weights(y);
    let report = solve_dual(
        d,
        y,
        &CostSpec::SquaredEuclidean,
        lambda.as_slice(),
        inner,
        None,
    )?;
    if !report.converged {
        return Err(Error::DualNotConverged {
            report: Box::new(report),
            iteration: None,
        });
    }
    Ok((0.5 * report.value, report.weights))
}

/// `B_N(Y)` and the weights for warm starts.
pub fn step_uniform(
    d: &GridDensity,
    y: &PointConfiguration,
    inner: &SolverOptions,
) -> Result<(PointConfiguration, DualWeights)> {
    y.require_off_diagonal()?;
    let s = uniform_state(d, y, inner, None, None)?;
    Ok((s.image, s.report.weights))
}

/// `∇F_N(Y) = (Y − B_N(Y)) / N`.
pub fn grad_uniform(
    d: &GridDensity,
    y: &PointConfiguration,
    inner: &SolverOptions,
) -> Result<Array2<f64>> {
    y.require_off_diagonal()?;
    let s = uniform_state(d, y, inner, None, None)?;
    Ok(s.gradient(y))
}

fn count_outside(d: &GridDensity, y: &PointConfiguration) -> usize {
    (0..y.len()).filter(|&i| !d.in_support(y.point(i))).count()
}

fn check_row(row: &TraceRow, opts: &LloydOptions) -> Result<()> {
    if opts.check_descent {
        if let Some((inequality, lhs, rhs)) = row.first_violation() {
            return Err(Error::DescentViolation {
                iteration: row.n,
                inequality,
                lhs,
                rhs,
            });
        }
    }
    Ok(())
}

fn check_start(d: &GridDensity, y0: &PointConfiguration, opts: &LloydOptions) -> Result<()> {
    y0.require_dim(d)?;
    y0.require_off_diagonal()?;
    if opts.max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
    }
    if let Some(t) = opts.step_tol {
        if !(t >= 0.0) {
            return Err(Error::InvalidArgument(
                "step_tol must be nonnegative".into(),
            ));
        }
    }
    Ok(())
}

/// Iterate `Y_{n+1} = T_N(Y_n)`.
///
/// Points are allowed to leave the support (possible for non-convex
/// supports); such iterates are counted in [`TraceRow::outside_support`].
pub fn run_optimal(
    d: &GridDensity,
    y0: &PointConfiguration,
    opts: &LloydOptions,
) -> Result<(PointConfiguration, SolverTrace)> {
    check_start(d, y0, opts)?;
    let step_tol = opts.resolved_step_tol(d);
    let mut y = y0.clone();
    let mut part = voronoi_partition_with(d, &y, false, opts.quadrature)?;
    let mut loss = 0.5 * numeric::sum(part.stats().iter().map(|s| s.second_moment));
    let mut rows = Vec::new();
    let mut ell = f64::INFINITY;
    let mut converged = false;
    for n in 0..opts.max_iter {
        let masses = part.masses();
        let t = barycenters(&y, &part, Some(n))?;
        let grad = scaled_difference(&y, &t, &masses);
        let grad_norm = frobenius(&grad);
        if let Some((i, j)) = t.diagonal_pair() {
            return Err(Error::Diagonal(i, j));
        }
        let min_mass = part.min_mass();
        ell = ell.min(min_mass);
        let step_norm = t.distance(&y);
        let intermediate = 0.5
            * numeric::sum(
                (0..y.len()).map(|i| masses[i] * numeric::squared_distance(y.point(i), t.point(i))),
            );
        let next = voronoi_partition_with(d, &t, false, opts.quadrature)?;
        let next_loss = 0.5 * numeric::sum(next.stats().iter().map(|s| s.second_moment));
        let row = TraceRow {
            n,
            loss,
            grad_norm,
            step_norm,
            min_cell_mass: min_mass,
            descent_lhs: loss - next_loss,
            descent_rhs: 0.5 * ell * grad_norm * step_norm,
            inner_iterations: 0,
            intermediate_rhs: intermediate,
            inner_slack: 0.0,
            inner_residual: 0.0,
            identity_residual: 0.0,
            outside_support: count_outside(d, &t),
        };
        check_row(&row, opts)?;
        rows.push(row);
        y = t;
        part = next;
        loss = next_loss;
        if step_norm <= step_tol {
            converged = true;
            break;
        }
    }
    let final_masses = part.masses();
    let final_grad_norm = match barycenters(&y, &part, None) {
        Ok(t) => frobenius(&scaled_difference(&y, &t, &final_masses)),
        Err(_) => f64::NAN,
    };
    let trace = SolverTrace {
        variant: Variant::Optimal,
        rows,
        final_loss: loss,
        final_grad_norm,
        final_masses,
        final_weights: None,
        converged,
    };
    Ok((y, trace))
}

/// Iterate `Y_{n+1} = B_N(Y_n)`, warm-starting each dual solve from the
/// previous weights.
pub fn run_uniform(
    d: &GridDensity,
    y0: &PointConfiguration,
    opts: &LloydOptions,
) -> Result<(PointConfiguration, SolverTrace)> {
    check_start(d, y0, opts)?;
    let step_tol = opts.resolved_step_tol(d);
    let n_points = y0.len() as f64;
    let diam = d.support_diameter();
    let mut y = y0.clone();
    let inner = SolverOptions {
        quadrature: opts.quadrature,
        ..opts.inner.clone()
    };
    let mut state = uniform_state(d, &y, &inner, None, Some(0))?;
    let mut rows = Vec::new();
    let mut converged = false;
    for n in 0..opts.max_iter {
        let grad = state.gradient(&y);
        let grad_norm = frobenius(&grad);
        let t = state.image.clone();
        if let Some((i, j)) = t.diagonal_pair() {
            return Err(Error::Diagonal(i, j));
        }
        let step_norm = t.distance(&y);
        let identity = frobenius(&(t.as_array() - &(y.as_array() - &(&grad * n_points))));
        let next = uniform_state(d, &t, &inner, Some(&state.report.weights.w), Some(n + 1))?;
        let masses = state.report.masses.clone();
        let residual = state.report.max_residual();
        // An inexact plan perturbs each of the two losses by at most
        // N·residual·diam²/2.
        let slack = n_points * (residual + next.report.max_residual()) * diam * diam;
        let row = TraceRow {
            n,
            loss: state.loss,
            grad_norm,
            step_norm,
            min_cell_mass: masses.iter().copied().fold(f64::INFINITY, f64::min),
            descent_lhs: state.loss - next.loss,
            descent_rhs: step_norm * step_norm / (2.0 * n_points),
            inner_iterations: state.report.iterations,
            intermediate_rhs: 0.0,
            inner_slack: slack,
            inner_residual: residual,
            identity_residual: identity,
            outside_support: count_outside(d, &t),
        };
        check_row(&row, opts)?;
        rows.push(row);
        y = t;
        state = next;
        if step_norm <= step_tol {
            converged = true;
            break;
        }
    }
    let trace = SolverTrace {
        variant: Variant::Uniform,
        rows,
        final_loss: state.loss,
        final_grad_norm: frobenius(&state.gradient(&y)),
        final_masses: state.report.masses.clone(),
        final_weights: Some(state.report.weights.clone()),
        converged,
    };
    Ok((y, trace))
}
