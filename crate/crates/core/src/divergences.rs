//! Sliced, max-sliced and entropic semi-discrete losses.
//!
//! * [`w2_1d_discrete`] is the exact squared 2-Wasserstein distance between
//!   two weighted point sets on the line, integrated along the quantile
//!   functions.
//! * [`sliced_w2_discrete`] averages it over random directions on the unit
//!   sphere; [`max_sliced_semidiscrete`] maximizes it between a projected
//!   grid density and projected support points.
//! * [`entropic_semidiscrete`] maximizes the smooth log-sum-exp dual of
//!   entropy-regularized transport between a grid density (cell-center
//!   quadrature) and `Σ λ_i δ_{y_i}`.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::cells::{active_indices, tie_weights, PointConfiguration};
use crate::cost::CostSpec;
use crate::density::{GridDensity, Quadrature};
use crate::dual::{solve_dual, Anchor, DualWeights, SolverOptions};
use crate::numeric::{self, CompensatedSum};
use crate::{Error, Result};

/// Tolerance on the total weight of a discrete probability measure.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

fn check_weights(weights: &[f64], what: &str) -> Result<()> {
    if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "{what}: weights must be nonnegative"
        )));
    }
    let total = numeric::sum(weights.iter().copied());
    if (total - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::InvalidArgument(format!(
            "{what}: weights sum to {total}, not 1"
        )));
    }
    Ok(())
}

fn sorted(positions: &[f64], weights: &[f64]) -> Vec<(f64, f64)> {
    let mut v: Vec<(f64, f64)> = positions
        .iter()
        .copied()
        .zip(weights.iter().copied())
        .filter(|&(_, w)| w > 0.0)
        .collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    v
}

/// Quantile coupling of two sorted measures on the line.
fn quantile_w2(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let mut acc = CompensatedSum::new();
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a[0].1, b[0].1);
    loop {
        let t = ra.min(rb);
        let diff = a[i].0 - b[j].0;
        acc.add(t * diff * diff);
        ra -= t;
        rb -= t;
        // whichever atom is exhausted advances; the last atoms absorb rounding
        if ra <= rb {
            if i + 1 == a.len() {
                break;
            }
            i += 1;
            ra = a[i].1;
        } else {
            if j + 1 == b.len() {
                break;
            }
            j += 1;
            rb = b[j].1;
        }
    }
    // mass left on the final atoms after rounding
    let tail = ra.max(rb).max(0.0);
    let diff = a[i].0 - b[j].0;
    acc.add(tail.min(WEIGHT_SUM_TOL) * diff * diff);
    acc.value()
}

/// Exact `W₂²` between `Σ wa_k δ_{xa_k}` and `Σ wb_k δ_{xb_k}` on the line.
pub fn w2_1d_discrete(xa: &[f64], wa: &[f64], xb: &[f64], wb: &[f64]) -> Result<f64> {
    if xa.len() != wa.len() || xb.len() != wb.len() || xa.is_empty() || xb.is_empty() {
        return Err(Error::InvalidArgument(
            "positions and weights must match and be nonempty".into(),
        ));
    }
    if xa.iter().chain(xb).any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("positions must be finite".into()));
    }
    check_weights(wa, "first measure")?;
    check_weights(wb, "second measure")?;
    Ok(quantile_w2(&sorted(xa, wa), &sorted(xb, wb)))
}

/// A discrete probability measure `Σ w_k δ_{x_k}` in `R^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedCloud {
    points: Array2<f64>,
    weights: Vec<f64>,
}

impl WeightedCloud {
    pub fn new(points: Array2<f64>, weights: Vec<f64>) -> Result<Self> {
        if points.nrows() != weights.len() || points.nrows() == 0 {
            return Err(Error::InvalidArgument(
                "one weight per point is required".into(),
            ));
        }
        if points.ncols() == 0 {
            return Err(Error::InvalidArgument(
                "points need a positive dimension".into(),
            ));
        }
        check_weights(&weights, "cloud")?;
        Ok(Self {
            points: points.as_standard_layout().into_owned(),
            weights,
        })
    }

    /// Equal weights `1/N` on the given points.
    pub fn uniform(points: Array2<f64>) -> Result<Self> {
        let n = points.nrows();
        Self::new(points, vec![1.0 / n as f64; n])
    }

    /// The points of a configuration with their tie weights.
    pub fn from_configuration(y: &PointConfiguration) -> Self {
        Self {
            points: y.as_array().clone(),
            weights: tie_weights(y).as_slice().to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    fn project(&self, theta: &[f64]) -> Vec<f64> {
        self.points
            .rows()
            .into_iter()
            .map(|r| numeric::dot(r.as_slice().expect("standard layout"), theta))
            .collect()
    }

    /// Apply `x ↦ R x` to every point; `rotation` is row-major `dim×dim`.
    pub fn transformed(&self, rotation: &[f64]) -> Self {
        let d = self.dim();
        let mut points = self.points.clone();
        for mut row in points.rows_mut() {
            let x: Vec<f64> = row.to_vec();
            for a in 0..d {
                row[a] = (0..d).map(|b| rotation[a * d + b] * x[b]).sum();
            }
        }
        Self {
            points,
            weights: self.weights.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlicedConfig {
    pub num_directions: usize,
    pub seed: u64,
}

impl Default for SlicedConfig {
    fn default() -> Self {
        Self {
            num_directions: 1000,
            seed: 0,
        }
    }
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlicedEstimate {
    pub value: f64,
    pub std_error: f64,
    pub num_directions: usize,
}

/// `count` independent uniform directions on the unit sphere of `R^dim`,
/// drawn by normalizing standard normal vectors.
pub fn sample_directions(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = numeric::norm(&v);
        if norm > 0.0 {
            out.push(v.iter().map(|x| x / norm).collect());
        }
    }
    out
}

/// Sliced `W₂²`: the mean over `cfg.num_directions` random directions of the
/// 1-D distance between the projected clouds.
pub fn sliced_w2_discrete(
    x: &WeightedCloud,
    y: &WeightedCloud,
    cfg: &SlicedConfig,
) -> Result<SlicedEstimate> {
    if x.dim() != y.dim() {
        return Err(Error::InvalidArgument(
            "clouds must share one dimension".into(),
        ));
    }
    if cfg.num_directions == 0 {
        return Err(Error::InvalidArgument("need at least one direction".into()));
    }
    let directions = sample_directions(x.dim(), cfg.num_directions, cfg.seed);
    sliced_along(x, y, &directions)
}

/// Sliced `W₂²` along caller-supplied unit directions.
pub fn sliced_along(
    x: &WeightedCloud,
    y: &WeightedCloud,
    directions: &[Vec<f64>],
) -> Result<SlicedEstimate> {
    if directions.is_empty() {
        return Err(Error::InvalidArgument("need at least one direction".into()));
    }
    let values: Vec<f64> = directions
        .par_iter()
        .map(|theta| {
            quantile_w2(
                &sorted(&x.project(theta), &x.weights),
                &sorted(&y.project(theta), &y.weights),
            )
        })
        .collect();
    let n = values.len() as f64;
    let mean = numeric::sum(values.iter().copied()) / n;
    let var = if values.len() > 1 {
        numeric::sum(values.iter().map(|v| (v - mean) * (v - mean))) / (n - 1.0)
    } else {
        0.0
    };
    Ok(SlicedEstimate {
        value: mean,
        std_error: (var / n).sqrt(),
        num_directions: values.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxSlicedOptions {
    pub starts: usize,
    pub max_steps: usize,
    pub seed: u64,
    /// Angle used for finite-difference directional derivatives.
    pub fd_step: f64,
    /// Directions tried besides the random starts.
    pub extra_starts: Vec<Vec<f64>>,
}

impl Default for MaxSlicedOptions {
    fn default() -> Self {
        Self {
            starts: 16,
            max_steps: 500,
            seed: 0,
            fd_step: 1e-6,
            extra_starts: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaxSlicedResult {
    /// Best `W₂²` found; a lower bound on the maximum over the sphere.
    pub value: f64,
    /// Maximizing direction. `θ` and `−θ` give the same value.
    pub direction: Vec<f64>,
    pub evaluations: usize,
}

/// Projected measures for max-sliced evaluation.
struct Projector<'a> {
    d: &'a GridDensity,
    y: &'a PointConfiguration,
    cell_masses: Vec<f64>,
    lambda: Vec<f64>,
}

impl Projector<'_> {
    fn value(&self, theta: &[f64]) -> f64 {
        let grid: Vec<f64> = self
            .d
            .support()
            .iter()
            .map(|&k| numeric::dot(self.d.center(k), theta))
            .collect();
        let points: Vec<f64> = (0..self.y.len())
            .map(|i| numeric::dot(self.y.point(i), theta))
            .collect();
        quantile_w2(
            &sorted(&grid, &self.cell_masses),
            &sorted(&points, &self.lambda),
        )
    }
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let n = numeric::norm(v);
    v.iter().map(|x| x / n).collect()
}

/// Orthonormal basis of the tangent space of the sphere at `theta`.
fn tangent_basis(theta: &[f64]) -> Vec<Vec<f64>> {
    let dim = theta.len();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for a in 0..dim {
        let mut v = vec![0.0; dim];
        v[a] = 1.0;
        for b in std::iter::once(theta).chain(basis.iter().map(Vec::as_slice)) {
            let p = numeric::dot(&v, b);
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= p * bi;
            }
        }
        let n = numeric::norm(&v);
        if n > 1e-8 {
            basis.push(v.iter().map(|x| x / n).collect());
        }
        if basis.len() + 1 == dim {
            break;
        }
    }
    basis
}

/// Max-sliced `W₂²` between the grid density and `Σ λ_i δ_{y_i}`.
///
/// Multi-start projected gradient ascent over the sphere, with
/// finite-difference directional derivatives and backtracking steps. In one
/// dimension the sphere is `{±1}` and no search is needed.
pub fn max_sliced_semidiscrete(
    d: &GridDensity,
    y: &PointConfiguration,
    opts: &MaxSlicedOptions,
) -> Result<MaxSlicedResult> {
    y.require_dim(d)?;
    let cell_masses: Vec<f64> = d.support().iter().map(|&k| d.cell_mass(k)).collect();
    check_weights(&cell_masses, "density")?;
    let proj = Projector {
        d,
        y,
        cell_masses,
        lambda: tie_weights(y).as_slice().to_vec(),
    };
    let dim = d.dim();
    if dim == 1 {
        return Ok(MaxSlicedResult {
            value: proj.value(&[1.0]),
            direction: vec![1.0],
            evaluations: 1,
        });
    }
    let mut starts = sample_directions(dim, opts.starts.max(1), opts.seed);
    for e in &opts.extra_starts {
        if e.len() == dim && numeric::norm(e) > 0.0 {
            starts.push(normalized(e));
        }
    }
    let runs: Vec<(f64, Vec<f64>, usize)> = starts
        .par_iter()
        .map(|start| ascend_on_sphere(&proj, start.clone(), opts))
        .collect();
    let mut best = (f64::NEG_INFINITY, Vec::new());
    let mut evaluations = 0;
    for (v, theta, evals) in runs {
        evaluations += evals;
        if v > best.0 {
            best = (v, theta);
        }
    }
    Ok(MaxSlicedResult {
        value: best.0,
        direction: best.1,
        evaluations,
    })
}

fn ascend_on_sphere(
    proj: &Projector<'_>,
    mut theta: Vec<f64>,
    opts: &MaxSlicedOptions,
) -> (f64, Vec<f64>, usize) {
    let h = opts.fd_step;
    let mut value = proj.value(&theta);
    let mut evals = 1;
    let mut step = 0.1f64;
    for _ in 0..opts.max_steps {
        let basis = tangent_basis(&theta);
        let mut grad = vec![0.0; theta.len()];
        for e in &basis {
            let plus: Vec<f64> = normalized(
                &theta
                    .iter()
                    .zip(e)
                    .map(|(t, v)| t + h * v)
                    .collect::<Vec<_>>(),
            );
            let minus: Vec<f64> = normalized(
                &theta
                    .iter()
                    .zip(e)
                    .map(|(t, v)| t - h * v)
                    .collect::<Vec<_>>(),
            );
            let slope = (proj.value(&plus) - proj.value(&minus)) / (2.0 * h);
            evals += 2;
            for (g, v) in grad.iter_mut().zip(e) {
                *g += slope * v;
            }
        }
        let gnorm = numeric::norm(&grad);
        if gnorm < 1e-12 {
            break;
        }
        let dir: Vec<f64> = grad.iter().map(|g| g / gnorm).collect();
        let mut t = step;
        let mut improved = false;
        while t > 1e-12 {
            let trial = normalized(
                &theta
                    .iter()
                    .zip(&dir)
                    .map(|(a, b)| a + t * b)
                    .collect::<Vec<_>>(),
            );
            let v = proj.value(&trial);
            evals += 1;
            if v > value {
                theta = trial;
                value = v;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
        step = (2.0 * t).min(1.0);
    }
    (value, theta, evals)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropicConfig {
    pub epsilon: f64,
    pub max_iter: usize,
    /// Stop once `‖λ − soft masses‖₂` is at most this.
    pub grad_tol: f64,
}

impl Default for EntropicConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            max_iter: 500,
            grad_tol: 1e-11,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct EntropicFlags {
    /// The log-sum-exp overflowed and the value was computed from the
    /// unregularized (hard-min) dual instead.
    pub hard_min_fallback: bool,
    /// `‖w‖_∞` exceeded `2·Lip(c)·R` with `R` the diameter of the support
    /// and points.
    pub potential_bound_exceeded: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropicResult {
    /// `W_ε`.
    pub value: f64,
    /// Maximizing weights, first active weight zero.
    pub weights: DualWeights,
    /// `∫ softmax_i dμ`.
    pub soft_masses: Vec<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
    /// Objective after every accepted step.
    pub history: Vec<f64>,
    pub flags: EntropicFlags,
}

struct SoftEval {
    value: f64,
    masses: Vec<f64>,
    /// `Σ_k m_k (diag p_k − p_k p_kᵀ)`, row-major `N×N` (when requested).
    covariance: Vec<f64>,
    finite: bool,
}

const ENTROPIC_CHUNK: usize = 512;

struct SoftProblem<'a> {
    d: &'a GridDensity,
    y: &'a PointConfiguration,
    cost: &'a CostSpec,
    lambda: &'a [f64],
    active: &'a [usize],
    epsilon: f64,
}

impl SoftProblem<'_> {
    fn eval(&self, w: &[f64], with_hessian: bool) -> SoftEval {
        let n = self.y.len();
        let eps = self.epsilon;
        let log_lambda: Vec<f64> = self.lambda.iter().map(|l| l.ln()).collect();
        let parts: Vec<(CompensatedSum, Vec<CompensatedSum>, Vec<f64>, bool)> = self
            .d
            .support()
            .par_chunks(ENTROPIC_CHUNK)
            .map(|chunk| {
                let mut value = CompensatedSum::new();
                let mut masses = vec![CompensatedSum::new(); n];
                let mut cov = if with_hessian {
                    vec![0.0; n * n]
                } else {
                    Vec::new()
                };
                let mut finite = true;
                let mut z = vec![0.0; self.active.len()];
                for &k in chunk {
                    let x = self.d.center(k);
                    let m = self.d.cell_mass(k);
                    let mut zmax = f64::NEG_INFINITY;
                    for (p, &i) in self.active.iter().enumerate() {
                        z[p] = log_lambda[i] + (w[i] - self.cost.eval(x, self.y.point(i))) / eps;
                        zmax = zmax.max(z[p]);
                    }
                    let mut total = 0.0;
                    for zp in z.iter_mut() {
                        *zp = (*zp - zmax).exp();
                        total += *zp;
                    }
                    let lse = zmax + total.ln();
                    if !lse.is_finite() {
                        finite = false;
                        continue;
                    }
                    value.add(-eps * m * lse);
                    for (p, &i) in self.active.iter().enumerate() {
                        let pi = z[p] / total;
                        masses[i].add(m * pi);
                        if with_hessian {
                            cov[i * n + i] += m * pi;
                            for (q, &j) in self.active.iter().enumerate() {
                                cov[i * n + j] -= m * pi * z[q] / total;
                            }
                        }
                    }
                }
                (value, masses, cov, finite)
            })
            .collect();
        let mut value = CompensatedSum::new();
        let mut masses = vec![CompensatedSum::new(); n];
        let mut covariance = vec![0.0; if with_hessian { n * n } else { 0 }];
        let mut finite = true;
        for (v, ms, cov, f) in parts {
            value.add(v.value());
            for (a, b) in masses.iter_mut().zip(&ms) {
                a.add(b.value());
            }
            for (a, b) in covariance.iter_mut().zip(&cov) {
                *a += b;
            }
            finite &= f;
        }
        for &i in self.active {
            value.add(self.lambda[i] * w[i]);
        }
        value.add(-eps);
        let value = value.value();
        SoftEval {
            value,
            masses: masses.iter().map(CompensatedSum::value).collect(),
            covariance,
            finite: finite && value.is_finite(),
        }
    }

    fn gradient(&self, e: &SoftEval) -> Vec<f64> {
        let mut g = vec![0.0; self.y.len()];
        for &i in self.active {
            g[i] = self.lambda[i] - e.masses[i];
        }
        g
    }

    /// Solve `(C/ε) δ = g` on the active indices with the first pinned.
    fn newton_direction(&self, e: &SoftEval, g: &[f64]) -> Option<Vec<f64>> {
        let n = self.y.len();
        let m = self.active.len();
        if m < 2 {
            return None;
        }
        let mut h = nalgebra::DMatrix::<f64>::zeros(m - 1, m - 1);
        let mut rhs = nalgebra::DVector::<f64>::zeros(m - 1);
        for p in 1..m {
            let i = self.active[p];
            rhs[p - 1] = g[i];
            for q in 1..m {
                h[(p - 1, q - 1)] = e.covariance[i * n + self.active[q]] / self.epsilon;
            }
        }
        let sol = h.cholesky()?.solve(&rhs);
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let mut dir = vec![0.0; n];
        for p in 1..m {
            dir[self.active[p]] = sol[p - 1];
        }
        Some(dir)
    }
}

/// Entropic semi-discrete transport `W_ε` by damped Newton ascent on the
/// log-sum-exp dual, with Armijo backtracking and a gradient-step fallback.
pub fn entropic_semidiscrete(
    d: &GridDensity,
    y: &PointConfiguration,
    cost: &CostSpec,
    cfg: &EntropicConfig,
) -> Result<EntropicResult> {
    entropic_from(d, y, cost, cfg, None)
}

/// [`entropic_semidiscrete`] warm-started from `warm`.
pub fn entropic_from(
    d: &GridDensity,
    y: &PointConfiguration,
    cost: &CostSpec,
    cfg: &EntropicConfig,
    warm: Option<&[f64]>,
) -> Result<EntropicResult> {
    y.require_dim(d)?;
    if !(cfg.epsilon > 0.0 && cfg.epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive and finite, got {}",
            cfg.epsilon
        )));
    }
    let n = y.len();
    let lambda = tie_weights(y).as_slice().to_vec();
    let active = active_indices(&lambda);
    let problem = SoftProblem {
        d,
        y,
        cost,
        lambda: &lambda,
        active: &active,
        epsilon: cfg.epsilon,
    };
    let mut w = vec![0.0; n];
    if let Some(w0) = warm {
        if w0.len() != n {
            return Err(Error::InvalidArgument(
                "warm start has the wrong length".into(),
            ));
        }
        for &i in &active {
            w[i] = w0[i] - w0[active[0]];
        }
    }
    let bound = potential_bound(d, y, cost);
    let mut e = problem.eval(&w, true);
    if !e.finite {
        return hard_min_fallback(d, y, cost, &lambda, cfg, bound);
    }
    let mut history = vec![e.value];
    let mut g = problem.gradient(&e);
    let mut gnorm = numeric::norm(&g);
    let mut iterations = 0;
    let mut step = 1.0f64;
    while gnorm > cfg.grad_tol && iterations < cfg.max_iter {
        iterations += 1;
        let round = 4.0 * f64::EPSILON * e.value.abs().max(1e-300);
        let mut accepted = None;
        if let Some(dir) = problem.newton_direction(&e, &g) {
            let slope = numeric::dot(&g, &dir);
            let mut t = 1.0;
            while t > 1e-10 {
                let trial: Vec<f64> = w.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
                let et = problem.eval(&trial, true);
                if et.finite && et.value >= e.value + 1e-4 * t * slope - round {
                    let gt = problem.gradient(&et);
                    // near the optimum the value stalls in rounding; require
                    // the gradient to shrink as well
                    if et.value > e.value || numeric::norm(&gt) < gnorm {
                        accepted = Some((trial, et));
                        break;
                    }
                }
                t *= 0.5;
            }
        }
        if accepted.is_none() {
            let mut t = step;
            while t > 1e-14 {
                let trial: Vec<f64> = w.iter().zip(&g).map(|(a, b)| a + t * b).collect();
                let et = problem.eval(&trial, true);
                if et.finite && et.value >= e.value + 0.1 * t * gnorm * gnorm {
                    step = (2.0 * t).min(1e6);
                    accepted = Some((trial, et));
                    break;
                }
                t *= 0.5;
            }
        }
        let Some((trial, et)) = accepted else {
            break;
        };
        w = trial;
        e = et;
        history.push(e.value);
        g = problem.gradient(&e);
        gnorm = numeric::norm(&g);
    }
    if gnorm > cfg.grad_tol {
        return Err(Error::EntropicNotConverged {
            grad_norm: gnorm,
            iterations,
        });
    }
    let w_inf = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(EntropicResult {
        value: e.value,
        weights: DualWeights {
            w,
            anchor: Anchor::FirstZero,
        },
        soft_masses: e.masses,
        grad_norm: gnorm,
        iterations,
        history,
        flags: EntropicFlags {
            hard_min_fallback: false,
            potential_bound_exceeded: w_inf > bound,
        },
    })
}

/// `2·Lip(c)·R`, with `R` the diameter of the support and the points.
fn potential_bound(d: &GridDensity, y: &PointConfiguration, cost: &CostSpec) -> f64 {
    let (mut lo, mut hi) = d.bounds();
    for i in 0..y.len() {
        for (a, &v) in y.point(i).iter().enumerate() {
            lo[a] = lo[a].min(v);
            hi[a] = hi[a].max(v);
        }
    }
    let r = numeric::squared_distance(&lo, &hi).sqrt();
    let probe: Vec<Vec<f64>> = y.rows().into_iter().chain([lo, hi]).collect();
    2.0 * cost.lipschitz_estimate(r, &probe) * r
}

fn hard_min_fallback(
    d: &GridDensity,
    y: &PointConfiguration,
    cost: &CostSpec,
    lambda: &[f64],
    cfg: &EntropicConfig,
    bound: f64,
) -> Result<EntropicResult> {
    let opts = SolverOptions {
        anchor: Anchor::FirstZero,
        quadrature: Quadrature::CellCenter,
        ..SolverOptions::default().with_mass_tol(1e-10)
    };
    let report = solve_dual(d, y, cost, lambda, &opts, None)?;
    let w_inf = report.weights.w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(EntropicResult {
        value: report.value - cfg.epsilon,
        soft_masses: report.masses.clone(),
        grad_norm: numeric::norm(&report.mass_residuals),
        iterations: report.iterations,
        history: report.history.iter().map(|v| v - cfg.epsilon).collect(),
        weights: report.weights,
        flags: EntropicFlags {
            hard_min_fallback: true,
            potential_bound_exceeded: w_inf > bound,
        },
    })
}

/// `W_ε` along a list of regularization strengths, warm-starting each solve
/// from the previous weights.
pub fn entropic_sweep(
    d: &GridDensity,
    y: &PointConfiguration,
    cost: &CostSpec,
    epsilons: &[f64],
    cfg: &EntropicConfig,
) -> Result<Vec<(f64, EntropicResult)>> {
    let mut out: Vec<(f64, EntropicResult)> = Vec::with_capacity(epsilons.len());
    for &epsilon in epsilons {
        let c = EntropicConfig {
            epsilon,
            ..cfg.clone()
        };
        let warm = out.last().map(|(_, r)| r.weights.w.clone());
        let r = entropic_from(d, y, cost, &c, warm.as_deref())?;
        out.push((epsilon, r));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{build_disk_mixture, build_uniform_box, GaussianComponent};

    #[test]
    fn one_dimensional_examples() {
        assert_eq!(
            w2_1d_discrete(&[0.3, 0.9], &[0.5, 0.5], &[0.9, 0.3], &[0.5, 0.5]).unwrap(),
            0.0
        );
        assert_eq!(
            w2_1d_discrete(&[0.0], &[1.0], &[0.7], &[1.0]).unwrap(),
            0.7 * 0.7
        );
        let v = w2_1d_discrete(&[0.0, 1.0], &[0.5, 0.5], &[0.5], &[1.0]).unwrap();
        assert!((v - 0.25).abs() < 1e-15);
        assert!(w2_1d_discrete(&[0.0], &[0.9], &[0.5], &[1.0]).is_err());
    }

    /// Independent oracle: integrate `(F_a⁻¹(t) − F_b⁻¹(t))²` by the midpoint
    /// rule on a fine `t` grid.
    fn quantile_oracle(xa: &[f64], wa: &[f64], xb: &[f64], wb: &[f64]) -> f64 {
        let qf = |x: &[f64], w: &[f64], t: f64| {
            let mut idx: Vec<usize> = (0..x.len()).collect();
            idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
            let mut acc = 0.0;
            for &i in &idx {
                acc += w[i];
                if t < acc {
                    return x[i];
                }
            }
            x[*idx.last().unwrap()]
        };
        let m = 200_000;
        (0..m)
            .map(|k| {
                let t = (k as f64 + 0.5) / m as f64;
                (qf(xa, wa, t) - qf(xb, wb, t)).powi(2)
            })
            .sum::<f64>()
            / m as f64
    }

    #[test]
    fn quantile_traversal_matches_midpoint_oracle() {
        let xa = [0.3, -1.2, 2.0, 0.7];
        let wa = [0.1, 0.4, 0.25, 0.25];
        let xb = [1.5, -0.4, 0.0];
        let wb = [0.5, 0.3, 0.2];
        let v = w2_1d_discrete(&xa, &wa, &xb, &wb).unwrap();
        assert!((v - quantile_oracle(&xa, &wa, &xb, &wb)).abs() < 1e-4);
        let sym = w2_1d_discrete(&xb, &wb, &xa, &wa).unwrap();
        assert!((v - sym).abs() < 1e-15);
    }

    #[test]
    fn sliced_examples() {
        let x = WeightedCloud::uniform(
            Array2::from_shape_vec((3, 2), vec![0.0, 0.0, 1.0, 0.5, -0.3, 2.0]).unwrap(),
        )
        .unwrap();
        let cfg = SlicedConfig {
            num_directions: 64,
            seed: 3,
        };
        assert_eq!(sliced_w2_discrete(&x, &x, &cfg).unwrap().value, 0.0);
        // one dimension: both signs of θ give the exact 1-D value
        let a = WeightedCloud::new(
            Array2::from_shape_vec((2, 1), vec![0.0, 1.0]).unwrap(),
            vec![0.5, 0.5],
        )
        .unwrap();
        let b = WeightedCloud::new(
            Array2::from_shape_vec((1, 1), vec![0.5]).unwrap(),
            vec![1.0],
        )
        .unwrap();
        let s = sliced_w2_discrete(&a, &b, &cfg).unwrap();
        assert!((s.value - 0.25).abs() < 1e-12);
    }

    #[test]
    fn sliced_is_symmetric() {
        let x = WeightedCloud::uniform(
            Array2::from_shape_vec((2, 2), vec![0.0, 0.0, 1.0, 1.0]).unwrap(),
        )
        .unwrap();
        let y = WeightedCloud::new(
            Array2::from_shape_vec((3, 2), vec![0.5, 0.0, 0.2, 0.9, -1.0, 0.3]).unwrap(),
            vec![0.2, 0.5, 0.3],
        )
        .unwrap();
        let cfg = SlicedConfig {
            num_directions: 200,
            seed: 11,
        };
        let a = sliced_w2_discrete(&x, &y, &cfg).unwrap();
        let b = sliced_w2_discrete(&y, &x, &cfg).unwrap();
        assert!((a.value - b.value).abs() < 1e-14);
    }

    #[test]
    fn directions_are_unit() {
        for v in sample_directions(3, 100, 5) {
            assert!((numeric::norm(&v) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn max_sliced_single_cell_recovers_the_offset() {
        let mut values = vec![0.0; 100];
        values[37] = 1.0;
        let d = GridDensity::new(vec![0.0, 0.0], vec![0.1, 0.1], vec![10, 10], values)
            .unwrap()
            .normalize()
            .unwrap();
        let x = d.center(37).to_vec();
        let y = PointConfiguration::from_rows(&[vec![0.2, 0.9]]).unwrap();
        let r = max_sliced_semidiscrete(&d, &y, &MaxSlicedOptions::default()).unwrap();
        let u = [x[0] - 0.2, x[1] - 0.9];
        let n2 = u[0] * u[0] + u[1] * u[1];
        assert!((r.value - n2).abs() < 1e-6, "{} vs {n2}", r.value);
        let cos = numeric::dot(&r.direction, &u).abs() / n2.sqrt();
        assert!(cos.min(1.0).acos() < 1e-3);
    }

    #[test]
    fn max_sliced_in_one_dimension_needs_no_search() {
        let d = build_uniform_box(&[0.0], &[1.0], &[100]).unwrap();
        let y = PointConfiguration::from_scalars(&[0.5]).unwrap();
        let r = max_sliced_semidiscrete(&d, &y, &MaxSlicedOptions::default()).unwrap();
        assert_eq!(r.evaluations, 1);
        let direct: f64 = d
            .support()
            .iter()
            .map(|&k| d.cell_mass(k) * (d.center(k)[0] - 0.5).powi(2))
            .sum();
        assert!((r.value - direct).abs() < 1e-14);
    }

    #[test]
    fn max_sliced_dominates_sliced_on_shared_directions() {
        let g = [GaussianComponent::isotropic(vec![0.0, 0.0], 0.2, 1.0)];
        let d = build_disk_mixture(&[0.0, 0.0], 1.0, &g, &[40, 40]).unwrap();
        let y = PointConfiguration::from_rows(&[vec![0.3, 0.1], vec![-0.4, 0.2], vec![0.0, -0.5]])
            .unwrap();
        let dirs = sample_directions(2, 32, 9);
        let grid = WeightedCloud::new(
            Array2::from_shape_vec(
                (d.support().len(), 2),
                d.support()
                    .iter()
                    .flat_map(|&k| d.center(k).to_vec())
                    .collect(),
            )
            .unwrap(),
            d.support().iter().map(|&k| d.cell_mass(k)).collect(),
        )
        .unwrap();
        let sliced = sliced_along(&grid, &WeightedCloud::from_configuration(&y), &dirs).unwrap();
        let opts = MaxSlicedOptions {
            extra_starts: dirs.clone(),
            ..Default::default()
        };
        let max = max_sliced_semidiscrete(&d, &y, &opts).unwrap();
        assert!(max.value >= sliced.value);
    }

    fn unit_interval(n: usize) -> GridDensity {
        build_uniform_box(&[0.0], &[1.0], &[n]).unwrap()
    }

    #[test]
    fn entropic_single_point_is_closed_form() {
        let d = unit_interval(1000);
        let y = PointConfiguration::from_scalars(&[0.5]).unwrap();
        let direct = numeric::sum(
            d.support()
                .iter()
                .map(|&k| d.cell_mass(k) * (d.center(k)[0] - 0.5).powi(2)),
        );
        for eps in [1.0, 0.1, 0.01] {
            let cfg = EntropicConfig {
                epsilon: eps,
                ..Default::default()
            };
            let r = entropic_semidiscrete(&d, &y, &CostSpec::SquaredEuclidean, &cfg).unwrap();
            assert!((r.value - (direct - eps)).abs() < 1e-14);
            assert_eq!(r.weights.w, vec![0.0]);
        }
    }

    #[test]
    fn entropic_symmetric_pair() {
        let d = unit_interval(1000);
        let y = PointConfiguration::from_scalars(&[0.0, 1.0]).unwrap();
        let cfg = EntropicConfig {
            epsilon: 0.05,
            ..Default::default()
        };
        let r = entropic_semidiscrete(&d, &y, &CostSpec::SquaredEuclidean, &cfg).unwrap();
        assert!(
            r.weights.w.iter().all(|w| w.abs() < 1e-10),
            "{:?}",
            r.weights.w
        );
        for m in &r.soft_masses {
            assert!((m - 0.5).abs() < 1e-10);
        }
    }

    #[test]
    fn entropic_ascent_is_monotone_and_balanced() {
        let g = [GaussianComponent::isotropic(vec![0.1, 0.0], 0.1, 1.0)];
        let d = build_disk_mixture(&[0.0, 0.0], 1.0, &g, &[32, 32]).unwrap();
        let y = PointConfiguration::from_rows(&[
            vec![0.3, 0.1],
            vec![-0.4, 0.2],
            vec![0.0, -0.5],
            vec![0.3, 0.1],
        ])
        .unwrap();
        for eps in [0.5, 0.01] {
            let cfg = EntropicConfig {
                epsilon: eps,
                ..Default::default()
            };
            let r = entropic_semidiscrete(&d, &y, &CostSpec::SquaredEuclidean, &cfg).unwrap();
            for pair in r.history.windows(2) {
                assert!(pair[1] >= pair[0] - 1e-14);
            }
            assert!(r.grad_norm <= cfg.grad_tol);
            assert!((numeric::sum(r.soft_masses.iter().copied()) - 1.0).abs() < 1e-10);
            // the duplicate carries no mass and no weight
            assert_eq!(r.soft_masses[3], 0.0);
            assert_eq!(r.weights.w[3], 0.0);
            assert_eq!(r.weights.w[0], 0.0);
            assert!(r.value >= -eps);
            assert!(!r.flags.potential_bound_exceeded);
        }
    }

    #[test]
    fn entropic_falls_back_to_hard_min_on_overflow() {
        let d = unit_interval(200);
        let y = PointConfiguration::from_scalars(&[0.2, 0.7]).unwrap();
        let cfg = EntropicConfig {
            epsilon: 1e-310,
            ..Default::default()
        };
        let r = entropic_semidiscrete(&d, &y, &CostSpec::SquaredEuclidean, &cfg).unwrap();
        assert!(r.flags.hard_min_fallback);
        let opts = SolverOptions::default()
            .with_quadrature(Quadrature::CellCenter)
            .with_mass_tol(1e-10);
        let exact = solve_dual(
            &d,
            &y,
            &CostSpec::SquaredEuclidean,
            &[0.5, 0.5],
            &opts,
            None,
        )
        .unwrap();
        assert!((r.value - exact.value).abs() < 1e-12);
    }

    #[test]
    fn entropic_rejects_nonpositive_epsilon() {
        let d = unit_interval(10);
        let y = PointConfiguration::from_scalars(&[0.5]).unwrap();
        let cfg = EntropicConfig {
            epsilon: 0.0,
            ..Default::default()
        };
        assert!(entropic_semidiscrete(&d, &y, &CostSpec::SquaredEuclidean, &cfg).is_err());
    }
}
