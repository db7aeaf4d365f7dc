//! Semi-discrete Kantorovich dual for a general cost.
//!
//! For a grid density `μ`, support points `y_i` and target weights `λ`, the
//! dual objective is
//!
//! ```text
//! g(w) = ∫ min_{i: λ_i > 0} (c(x, y_i) − w_i) dμ(x) + Σ_i λ_i w_i
//! ```
//!
//! which is concave in `w`; its maximum is the transport cost between `μ`
//! and `Σ λ_i δ_{y_i}`, and its supergradient is `λ − (power-cell masses)`.
//!
//! With [`Quadrature::Exact`] (squared Euclidean cost only) `g` is
//! continuously differentiable and [`solve_dual`] runs a damped Newton
//! method whose Hessian comes from the integrals of the density over the
//! cell interfaces.
//!
//! With [`Quadrature::CellCenter`] `μ` is discrete and `g` piecewise linear.
//! Supergradient ascent with an Armijo backtracking line search brings the
//! masses to within grid granularity. Because a whole-cell assignment can
//! never balance masses more finely than one cell, an exact finishing phase
//! then runs successive shortest paths on the sink graph: cells on a
//! boundary are split between sinks, which yields an optimal transport plan
//! of the discrete problem together with optimal weights.

use serde::{Deserialize, Serialize};

use crate::cells::{
    active_indices, assign_support, CellPartition, PointConfiguration, StatsAccumulator, UNASSIGNED,
};
use crate::cost::CostSpec;
use crate::density::{GridDensity, Quadrature};
use crate::exact::{power_integrals, PowerIntegrals};
use crate::numeric::CompensatedSum;
use crate::{Error, Result};

/// Normalization applied to the weights on return.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    /// Mean of the active weights is zero.
    #[default]
    MeanZero,
    /// The first active weight is zero.
    FirstZero,
}

/// Dual potentials with their anchoring convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualWeights {
    pub w: Vec<f64>,
    pub anchor: Anchor,
}

impl DualWeights {
    pub fn zeros(n: usize, anchor: Anchor) -> Self {
        Self {
            w: vec![0.0; n],
            anchor,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    /// Zero the inactive entries and shift the active ones to the anchor.
    pub fn normalize(&mut self, target: &[f64]) {
        let active = active_indices(target);
        let shift = match self.anchor {
            Anchor::MeanZero if !active.is_empty() => {
                active.iter().map(|&i| self.w[i]).sum::<f64>() / active.len() as f64
            }
            Anchor::FirstZero if !active.is_empty() => self.w[active[0]],
            _ => 0.0,
        };
        for (i, w) in self.w.iter_mut().enumerate() {
            *w = if target[i] > 0.0 { *w - shift } else { 0.0 };
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Stop once every `|λ_i − mass_i|` is at most this. `None` selects
    /// `1e−9` for exact quadrature and `max(1e−9, 2·largest cell mass)` at
    /// cell centers.
    pub mass_tol: Option<f64>,
    pub max_iter: usize,
    pub anchor: Anchor,
    pub quadrature: Quadrature,
    /// Cell-center quadrature: split boundary cells to balance masses
    /// exactly after the ascent.
    pub exact_finish: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            mass_tol: None,
            max_iter: 10_000,
            anchor: Anchor::MeanZero,
            quadrature: Quadrature::Exact,
            exact_finish: true,
        }
    }
}

impl SolverOptions {
    pub fn with_mass_tol(mut self, tol: f64) -> Self {
        self.mass_tol = Some(tol);
        self
    }

    pub fn with_quadrature(mut self, quadrature: Quadrature) -> Self {
        self.quadrature = quadrature;
        self
    }

    pub fn resolved_mass_tol(&self, d: &GridDensity) -> f64 {
        self.mass_tol.unwrap_or_else(|| match self.quadrature {
            Quadrature::Exact => 1e-9,
            Quadrature::CellCenter => f64::max(1e-9, 2.0 * d.max_cell_mass()),
        })
    }
}

/// Discrete transport plan: for every support cell (in support order) the
/// sinks it sends mass to and the amounts.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransportPlan {
    flows: Vec<Vec<(u32, f64)>>,
}

impl TransportPlan {
    fn from_assignment(d: &GridDensity, assignment: &[(u32, f64)]) -> Self {
        let flows = d
            .support()
            .iter()
            .zip(assignment)
            .map(|(&k, &(label, _))| vec![(label, d.cell_mass(k))])
            .collect();
        Self { flows }
    }

    /// Flows of the `s`-th support cell.
    pub fn cell_flows(&self, s: usize) -> &[(u32, f64)] {
        &self.flows[s]
    }

    pub fn num_cells(&self) -> usize {
        self.flows.len()
    }

    /// Number of cells split between two or more sinks.
    pub fn split_cells(&self) -> usize {
        self.flows.iter().filter(|f| f.len() > 1).count()
    }

    pub fn masses(&self, n: usize) -> Vec<f64> {
        let mut acc = vec![CompensatedSum::new(); n];
        for flows in &self.flows {
            for &(i, a) in flows {
                acc[i as usize].add(a);
            }
        }
        acc.iter().map(CompensatedSum::value).collect()
    }

    /// `Σ_k Σ_i γ_ki c(x_k, y_i)`
    pub fn cost(&self, d: &GridDensity, y: &PointConfiguration, cost: &CostSpec) -> f64 {
        let mut acc = CompensatedSum::new();
        for (&k, flows) in d.support().iter().zip(&self.flows) {
            for &(i, a) in flows {
                acc.add(a * cost.eval(d.center(k), y.point(i as usize)));
            }
        }
        acc.value()
    }

    /// Unnormalized first moments `Σ_k γ_ki x_k`, row-major `N×dim`.
    pub fn first_moments(&self, d: &GridDensity, y: &PointConfiguration) -> Vec<f64> {
        self.accumulate(d, y).first_moments()
    }

    /// Per-sink statistics from the (possibly fractional) plan. A split cell
    /// is labelled with the sink receiving its largest share.
    pub fn partition(&self, d: &GridDensity, y: &PointConfiguration) -> CellPartition {
        let mut labels = vec![UNASSIGNED; d.num_cells()];
        for (&k, flows) in d.support().iter().zip(&self.flows) {
            let mut best = flows[0];
            for &f in &flows[1..] {
                if f.1 > best.1 {
                    best = f;
                }
            }
            labels[k] = best.0;
        }
        CellPartition::from_parts(labels, self.accumulate(d, y).finish())
    }

    fn accumulate<'a>(&self, d: &GridDensity, y: &'a PointConfiguration) -> StatsAccumulator<'a> {
        let mut acc = StatsAccumulator::new(y);
        for (&k, flows) in d.support().iter().zip(&self.flows) {
            for &(i, a) in flows {
                acc.add(i as usize, a, d.center(k));
            }
        }
        acc
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualReport {
    pub weights: DualWeights,
    /// Maximized dual objective.
    pub value: f64,
    /// Mass sent to every point.
    pub masses: Vec<f64>,
    /// `λ_i − mass_i`.
    pub mass_residuals: Vec<f64>,
    /// `∫ x dγ_i` for every point, row-major `N×dim`.
    pub moments: Vec<f64>,
    /// Ascent or Newton steps plus augmentations of the finishing phase.
    pub iterations: usize,
    pub ascent_iterations: usize,
    pub converged: bool,
    pub mass_tol: f64,
    pub quadrature: Quadrature,
    /// Discrete transport plan (cell-center quadrature only).
    pub plan: Option<TransportPlan>,
    /// Objective after every accepted update, in order.
    pub history: Vec<f64>,
}

impl DualReport {
    pub fn max_residual(&self) -> f64 {
        max_abs(&self.mass_residuals)
    }
}

fn validate(d: &GridDensity, y: &PointConfiguration, w: &[f64], target: &[f64]) -> Result<()> {
    y.require_dim(d)?;
    if w.len() != y.len() || target.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "expected {} weights and target entries, got {} and {}",
            y.len(),
            w.len(),
            target.len()
        )));
    }
    if target.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
        return Err(Error::InvalidArgument(
            "target weights must be nonnegative".into(),
        ));
    }
    let total: f64 = target.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "target weights must sum to 1, got {total}"
        )));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("weights must be finite".into()));
    }
    Ok(())
}

struct Evaluation {
    assignment: Vec<(u32, f64)>,
    value: f64,
    masses: Vec<f64>,
}

fn evaluate(
    d: &GridDensity,
    y: &PointConfiguration,
    w: &[f64],
    target: &[f64],
    active: &[usize],
    cost: &CostSpec,
) -> Evaluation {
    let assignment = assign_support(d, y, w, active, cost);
    let mut value = CompensatedSum::new();
    let mut masses = vec![CompensatedSum::new(); y.len()];
    for (&k, &(label, r)) in d.support().iter().zip(&assignment) {
        let m = d.cell_mass(k);
        value.add(m * r);
        masses[label as usize].add(m);
    }
    for &i in active {
        value.add(target[i] * w[i]);
    }
    Evaluation {
        assignment,
        value: value.value(),
        masses: masses.iter().map(CompensatedSum::value).collect(),
    }
}

/// `∫ min_{i: λ_i>0} (c(x, y_i) − w_i) dμ + Σ_i λ_i w_i` under cell-center
/// quadrature.
///
/// For the squared Euclidean cost and `λ = 1/N` this is twice the
/// semi-discrete dual of `½W₂²`.
pub fn dual_objective(
    d: &GridDensity,
    y: &PointConfiguration,
    w: &[f64],
    cost: &CostSpec,
    target: &[f64],
) -> Result<f64> {
    dual_objective_with(d, y, w, cost, target, Quadrature::CellCenter)
}

/// [`dual_objective`] with a choice of quadrature.
pub fn dual_objective_with(
    d: &GridDensity,
    y: &PointConfiguration,
    w: &[f64],
    cost: &CostSpec,
    target: &[f64],
    quadrature: Quadrature,
) -> Result<f64> {
    validate(d, y, w, target)?;
    check_quadrature(cost, quadrature)?;
    let active = active_indices(target);
    Ok(match quadrature {
        Quadrature::CellCenter => evaluate(d, y, w, target, &active, cost).value,
        Quadrature::Exact => exact_value(&power_integrals(d, y, w, &active), w, target, &active),
    })
}

fn check_quadrature(cost: &CostSpec, quadrature: Quadrature) -> Result<()> {
    if quadrature == Quadrature::Exact && !cost.is_squared_euclidean() {
        return Err(Error::InvalidArgument(
            "exact quadrature needs the squared Euclidean cost".into(),
        ));
    }
    Ok(())
}

fn exact_value(ev: &PowerIntegrals, w: &[f64], target: &[f64], active: &[usize]) -> f64 {
    let mut v = CompensatedSum::new();
    v.add(ev.transport);
    for &i in active {
        v.add(target[i] * w[i]);
    }
    v.value()
}

fn residuals(target: &[f64], masses: &[f64], active: &[usize]) -> Vec<f64> {
    let mut s = vec![0.0; target.len()];
    for &i in active {
        s[i] = target[i] - masses[i];
    }
    s
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Maximize the dual objective over the active weights.
///
/// `warm` seeds the weights (inactive entries are ignored). Non-convergence
/// is reported through [`DualReport::converged`], never as an error.
pub fn solve_dual(
    d: &GridDensity,
    y: &PointConfiguration,
    cost: &CostSpec,
    target: &[f64],
    opts: &SolverOptions,
    warm: Option<&[f64]>,
) -> Result<DualReport> {
    let n = y.len();
    let mut w: Vec<f64> = match warm {
        Some(w0) => w0.to_vec(),
        None => vec![0.0; n],
    };
    validate(d, y, &w, target)?;
    check_quadrature(cost, opts.quadrature)?;
    let active = active_indices(target);
    if active.is_empty() {
        return Err(Error::InvalidArgument("no positive target weight".into()));
    }
    for (i, wi) in w.iter_mut().enumerate() {
        if target[i] <= 0.0 {
            *wi = 0.0;
        }
    }
    let mass_tol = opts.resolved_mass_tol(d);
    let mut history = Vec::new();
    let (iterations, ascent_iterations, masses, moments, plan) = match opts.quadrature {
        Quadrature::Exact => {
            let (steps, ev) =
                newton_exact(d, y, target, &active, opts, mass_tol, &mut w, &mut history);
            (steps, steps, ev.masses, ev.moments, None)
        }
        Quadrature::CellCenter => {
            let (ascent, augmentations, plan) = ascend_cell_center(
                d,
                y,
                cost,
                target,
                &active,
                opts,
                mass_tol,
                &mut w,
                &mut history,
            );
            let masses = plan.masses(n);
            let moments = plan.first_moments(d, y);
            (ascent + augmentations, ascent, masses, moments, Some(plan))
        }
    };
    let mass_residuals = residuals(target, &masses, &active);
    let mut weights = DualWeights {
        w,
        anchor: opts.anchor,
    };
    weights.normalize(target);
    let value = dual_objective_with(d, y, &weights.w, cost, target, opts.quadrature)?;
    let converged = max_abs(&mass_residuals) <= mass_tol;
    Ok(DualReport {
        weights,
        value,
        masses,
        mass_residuals,
        moments,
        iterations,
        ascent_iterations,
        converged,
        mass_tol,
        quadrature: opts.quadrature,
        plan,
        history,
    })
}

/// Supergradient ascent on the discrete objective, then the exact finish.
#[allow(clippy::too_many_arguments)]
fn ascend_cell_center(
    d: &GridDensity,
    y: &PointConfiguration,
    cost: &CostSpec,
    target: &[f64],
    active: &[usize],
    opts: &SolverOptions,
    mass_tol: f64,
    w: &mut Vec<f64>,
    history: &mut Vec<f64>,
) -> (usize, usize, TransportPlan) {
    let n = y.len();
    let max_iter = opts.max_iter.max(1);
    let mut eval = evaluate(d, y, w, target, active, cost);
    history.push(eval.value);
    let mut s = residuals(target, &eval.masses, active);
    let granularity = if opts.exact_finish {
        mass_tol.max(2.0 * d.max_cell_mass())
    } else {
        mass_tol
    };
    let mut step = 1.0f64;
    let mut ascent_iterations = 0;
    while max_abs(&s) > granularity && ascent_iterations < max_iter {
        ascent_iterations += 1;
        let s_norm2: f64 = s.iter().map(|v| v * v).sum();
        let mut t = step;
        let mut accepted = None;
        while t > 1e-14 {
            let trial: Vec<f64> = w.iter().zip(&s).map(|(wi, si)| wi + t * si).collect();
            let e = evaluate(d, y, &trial, target, active, cost);
            if e.value >= eval.value + 0.1 * t * s_norm2 {
                accepted = Some((trial, e));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((trial, e)) => {
                *w = trial;
                eval = e;
                history.push(eval.value);
                s = residuals(target, &eval.masses, active);
                step = (2.0 * t).min(1e6);
            }
            None => break,
        }
    }

    let mut plan = TransportPlan::from_assignment(d, &eval.assignment);
    let mut augmentations = 0;
    if opts.exact_finish && max_abs(&s) > mass_tol {
        let budget =
            max_iter.saturating_sub(ascent_iterations).max(1) * 4 * (d.support().len() + n);
        augmentations = finish_exact(d, y, cost, target, active, w, &mut plan, budget, history);
    }
    (ascent_iterations, augmentations, plan)
}

/// Damped Newton ascent for exact quadrature.
///
/// The Jacobian of the masses is the weighted graph Laplacian with edge
/// weights `∫_{Γ_ij} f dσ / (2‖y_i − y_j‖)`. A Newton step is accepted when
/// it keeps every mass above half its starting floor, shrinks the residual
/// norm by the factor `1 − t/2` and does not decrease the objective. Empty
/// cells, or a singular Laplacian, fall back to an Armijo gradient step.
#[allow(clippy::too_many_arguments)]
fn newton_exact(
    d: &GridDensity,
    y: &PointConfiguration,
    target: &[f64],
    active: &[usize],
    opts: &SolverOptions,
    mass_tol: f64,
    w: &mut Vec<f64>,
    history: &mut Vec<f64>,
) -> (usize, PowerIntegrals) {
    let mut ev = power_integrals(d, y, w, active);
    let mut value = exact_value(&ev, w, target, active);
    history.push(value);
    let lambda_min = active
        .iter()
        .map(|&i| target[i])
        .fold(f64::INFINITY, f64::min);
    let mut floor: Option<f64> = None;
    let mut step = 1.0f64;
    let mut iterations = 0;
    let round = |v: f64| 4.0 * f64::EPSILON * v.abs().max(1e-300);
    while iterations < opts.max_iter.max(1) {
        let s = residuals(target, &ev.masses, active);
        if max_abs(&s) <= mass_tol {
            break;
        }
        iterations += 1;
        let s_norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let min_mass = active
            .iter()
            .map(|&i| ev.masses[i])
            .fold(f64::INFINITY, f64::min);
        let direction = if min_mass > 0.0 {
            let eps = *floor.get_or_insert(0.5 * lambda_min.min(min_mass));
            newton_direction(y, &ev, &s, active).map(|dir| (dir, eps))
        } else {
            None
        };
        let mut accepted = None;
        if let Some((dir, eps)) = direction {
            let mut t = 1.0;
            while t > 1e-10 {
                let trial: Vec<f64> = w.iter().zip(&dir).map(|(wi, di)| wi + t * di).collect();
                let e = power_integrals(d, y, &trial, active);
                let v = exact_value(&e, &trial, target, active);
                let s_trial = residuals(target, &e.masses, active);
                let trial_norm = s_trial.iter().map(|x| x * x).sum::<f64>().sqrt();
                let min_trial = active
                    .iter()
                    .map(|&i| e.masses[i])
                    .fold(f64::INFINITY, f64::min);
                if min_trial >= eps
                    && trial_norm <= (1.0 - 0.5 * t) * s_norm
                    && v >= value - round(value)
                {
                    accepted = Some((trial, e, v));
                    break;
                }
                t *= 0.5;
            }
        }
        if accepted.is_none() {
            // Armijo gradient step along λ − masses.
            let s_norm2 = s_norm * s_norm;
            let mut t = step;
            while t > 1e-14 {
                let trial: Vec<f64> = w.iter().zip(&s).map(|(wi, si)| wi + t * si).collect();
                let e = power_integrals(d, y, &trial, active);
                let v = exact_value(&e, &trial, target, active);
                if v >= value + 0.1 * t * s_norm2 {
                    step = (2.0 * t).min(1e6);
                    accepted = Some((trial, e, v));
                    break;
                }
                t *= 0.5;
            }
        }
        match accepted {
            Some((trial, e, v)) => {
                *w = trial;
                ev = e;
                value = v;
                history.push(value);
            }
            None => break,
        }
    }
    (iterations, ev)
}

/// Solve `L δ = s` on the active indices with the first one pinned to zero.
fn newton_direction(
    y: &PointConfiguration,
    ev: &PowerIntegrals,
    s: &[f64],
    active: &[usize],
) -> Option<Vec<f64>> {
    let n = y.len();
    let m = active.len();
    if m < 2 {
        return None;
    }
    let mut lap = nalgebra::DMatrix::<f64>::zeros(m - 1, m - 1);
    let mut rhs = nalgebra::DVector::<f64>::zeros(m - 1);
    for p in 0..m {
        let i = active[p];
        for q in p + 1..m {
            let j = active[q];
            let facet = ev.facets[i * n + j];
            if facet <= 0.0 {
                continue;
            }
            let a = facet / (2.0 * crate::numeric::squared_distance(y.point(i), y.point(j)).sqrt());
            if p > 0 {
                lap[(p - 1, p - 1)] += a;
            }
            lap[(q - 1, q - 1)] += a;
            if p > 0 {
                lap[(p - 1, q - 1)] -= a;
                lap[(q - 1, p - 1)] -= a;
            }
        }
        if p > 0 {
            rhs[p - 1] = s[i];
        }
    }
    let solution = lap.cholesky()?.solve(&rhs);
    if solution.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut dir = vec![0.0; n];
    for p in 1..m {
        dir[active[p]] = solution[p - 1];
    }
    Some(dir)
}

/// Residual imbalance below which a sink counts as balanced.
const BALANCE_TOL: f64 = 1e-14;

/// Successive shortest paths on the sink graph.
///
/// Invariant: every cell only sends mass to sinks minimizing its reduced
/// cost `c(x_k, y_i) − w_i`. An edge `i → j` moves mass of some cell from
/// sink `i` to sink `j`; its length is the smallest increase in reduced cost
/// over the cells currently sending to `i`. After a multi-source Dijkstra
/// from the sinks in excess, raising `w_j` by `min(dist_j, D)` (with `D` the
/// distance to the nearest sink in deficit) keeps the invariant and makes
/// the shortest path tight, so its bottleneck can be rerouted.
#[allow(clippy::too_many_arguments)]
fn finish_exact(
    d: &GridDensity,
    y: &PointConfiguration,
    cost: &CostSpec,
    target: &[f64],
    active: &[usize],
    w: &mut [f64],
    plan: &mut TransportPlan,
    budget: usize,
    history: &mut Vec<f64>,
) -> usize {
    let n = y.len();
    let support = d.support();
    let mut masses = plan.masses(n);
    let mut augmentations = 0;
    let is_active: Vec<bool> = target.iter().map(|&l| l > 0.0).collect();
    let mut edge_len = vec![f64::INFINITY; n * n];
    let mut edge_via = vec![(usize::MAX, 0usize); n * n];

    while augmentations < budget {
        let excess: Vec<f64> = (0..n)
            .map(|i| {
                if is_active[i] {
                    masses[i] - target[i]
                } else {
                    0.0
                }
            })
            .collect();
        if excess.iter().all(|e| e.abs() <= BALANCE_TOL) {
            break;
        }
        if !excess.iter().any(|&e| e > BALANCE_TOL) || !excess.iter().any(|&e| e < -BALANCE_TOL) {
            break;
        }

        edge_len.fill(f64::INFINITY);
        for (s, &k) in support.iter().enumerate() {
            let x = d.center(k);
            let flows = &plan.flows[s];
            for (pos, &(i, _)) in flows.iter().enumerate() {
                let i = i as usize;
                let ri = cost.eval(x, y.point(i)) - w[i];
                for &j in active {
                    if j == i {
                        continue;
                    }
                    let len = (cost.eval(x, y.point(j)) - w[j] - ri).max(0.0);
                    if len < edge_len[i * n + j] {
                        edge_len[i * n + j] = len;
                        edge_via[i * n + j] = (s, pos);
                    }
                }
            }
        }

        // Dense Dijkstra from every sink in excess.
        let mut dist = vec![f64::INFINITY; n];
        let mut pred = vec![usize::MAX; n];
        let mut done = vec![false; n];
        for &i in active {
            if excess[i] > BALANCE_TOL {
                dist[i] = 0.0;
            }
        }
        let mut reached = None;
        loop {
            let mut u = usize::MAX;
            for &i in active {
                if !done[i] && dist[i].is_finite() && (u == usize::MAX || dist[i] < dist[u]) {
                    u = i;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if excess[u] < -BALANCE_TOL {
                reached = Some(u);
                break;
            }
            for &j in active {
                if done[j] {
                    continue;
                }
                let cand = dist[u] + edge_len[u * n + j];
                if cand < dist[j] {
                    dist[j] = cand;
                    pred[j] = u;
                }
            }
        }
        let Some(sink) = reached else {
            break;
        };
        let reach = dist[sink];
        for &j in active {
            w[j] += dist[j].min(reach);
        }

        // Bottleneck along the path, then reroute.
        let mut path = Vec::new();
        let mut j = sink;
        while pred[j] != usize::MAX {
            path.push((pred[j], j));
            j = pred[j];
        }
        let source = j;
        let mut amount = excess[source].min(-excess[sink]);
        for &(i, j) in &path {
            let (s, pos) = edge_via[i * n + j];
            amount = amount.min(plan.flows[s][pos].1);
        }
        for &(i, j) in &path {
            let (s, pos) = edge_via[i * n + j];
            let flows = &mut plan.flows[s];
            let moved = amount.min(flows[pos].1);
            flows[pos].1 -= moved;
            if let Some(f) = flows.iter_mut().find(|f| f.0 as usize == j) {
                f.1 += moved;
            } else {
                flows.push((j as u32, moved));
            }
            if flows[pos].1 <= 0.0 {
                flows.remove(pos);
            }
            masses[i] -= moved;
            masses[j] += moved;
        }
        augmentations += 1;
        history.push(evaluate(d, y, w, target, active, cost).value);
    }
    augmentations
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::tie_weights;
    use crate::density::build_uniform_box;

    const CENTER: Quadrature = Quadrature::CellCenter;
    const EXACT: Quadrature = Quadrature::Exact;

    fn unit_interval(n: usize) -> GridDensity {
        build_uniform_box(&[0.0], &[1.0], &[n]).unwrap()
    }

    fn opts(quadrature: Quadrature, tol: f64) -> SolverOptions {
        SolverOptions::default()
            .with_quadrature(quadrature)
            .with_mass_tol(tol)
    }

    #[test]
    fn objective_examples() {
        let d = unit_interval(10_000);
        let cost = CostSpec::SquaredEuclidean;
        let y = PointConfiguration::from_scalars(&[0.5]).unwrap();
        let v = dual_objective(&d, &y, &[0.0], &cost, &[1.0]).unwrap();
        assert!((v - 1.0 / 12.0).abs() < 1e-8);
        let v = dual_objective_with(&d, &y, &[0.0], &cost, &[1.0], EXACT).unwrap();
        assert!((v - 1.0 / 12.0).abs() < 1e-15);
        let y = PointConfiguration::from_scalars(&[0.0, 1.0]).unwrap();
        for q in [CENTER, EXACT] {
            let v = dual_objective_with(&d, &y, &[0.0, 0.0], &cost, &[0.5, 0.5], q).unwrap();
            assert!((v - 1.0 / 12.0).abs() < 1e-8);
            let shifted =
                dual_objective_with(&d, &y, &[0.375, 0.375], &cost, &[0.5, 0.5], q).unwrap();
            assert!((shifted - v).abs() < 1e-14);
        }
        let p1 = CostSpec::p_power(1.0).unwrap();
        assert!(dual_objective_with(&d, &y, &[0.0, 0.0], &p1, &[0.5, 0.5], EXACT).is_err());
    }

    #[test]
    fn symmetric_pair_has_equal_weights() {
        let d = unit_interval(10_000);
        let y = PointConfiguration::from_scalars(&[0.0, 1.0]).unwrap();
        for q in [CENTER, EXACT] {
            let o = SolverOptions::default().with_quadrature(q);
            let r = solve_dual(&d, &y, &CostSpec::SquaredEuclidean, &[0.5, 0.5], &o, None).unwrap();
            assert!(r.converged);
            assert!(r.weights.w.iter().all(|w| w.abs() < 1e-12));
            assert!((r.value - 1.0 / 12.0).abs() < 1e-8);
            for m in &r.masses {
                assert!((m - 0.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unequal_targets_move_the_boundary() {
        let d = unit_interval(10_000);
        let y = PointConfiguration::from_scalars(&[0.0, 1.0]).unwrap();
        let cost = CostSpec::SquaredEuclidean;
        let r = solve_dual(&d, &y, &cost, &[0.75, 0.25], &opts(CENTER, 1e-10), None).unwrap();
        assert!(r.converged, "{r:?}");
        // boundary lies within one cell of 0.75
        assert!((r.weights.w[0] - 0.25).abs() < 2e-4, "{:?}", r.weights.w);
        assert!((r.weights.w[1] + 0.25).abs() < 2e-4);
        assert!((r.masses[0] - 0.75).abs() < 1e-10 && (r.masses[1] - 0.25).abs() < 1e-10);
        // exact quadrature hits the boundary equation itself
        let r = solve_dual(&d, &y, &cost, &[0.75, 0.25], &opts(EXACT, 1e-12), None).unwrap();
        assert!(r.converged);
        assert!((r.weights.w[0] - 0.25).abs() < 1e-10 && (r.weights.w[1] + 0.25).abs() < 1e-10);
    }

    #[test]
    fn single_point_is_immediate() {
        let d = unit_interval(100);
        let y = PointConfiguration::from_scalars(&[0.3]).unwrap();
        for q in [CENTER, EXACT] {
            let o = SolverOptions::default().with_quadrature(q);
            let r = solve_dual(&d, &y, &CostSpec::SquaredEuclidean, &[1.0], &o, None).unwrap();
            assert!(r.converged);
            assert_eq!(r.iterations, 0);
            assert_eq!(r.weights.w, vec![0.0]);
        }
    }

    #[test]
    fn anchors_hold_exactly_and_inactive_weights_vanish() {
        let d = build_uniform_box(&[0.0, 0.0], &[1.0, 1.0], &[30, 30]).unwrap();
        let y = PointConfiguration::from_rows(&[
            vec![0.2, 0.2],
            vec![0.2, 0.2],
            vec![0.8, 0.3],
            vec![0.5, 0.9],
        ])
        .unwrap();
        let lambda = tie_weights(&y);
        for q in [CENTER, EXACT] {
            for anchor in [Anchor::MeanZero, Anchor::FirstZero] {
                let o = SolverOptions {
                    anchor,
                    ..opts(q, 1e-10)
                };
                let warm = [3.0, 7.0, -1.0, 0.5];
                let r = solve_dual(
                    &d,
                    &y,
                    &CostSpec::SquaredEuclidean,
                    lambda.as_slice(),
                    &o,
                    Some(&warm),
                )
                .unwrap();
                assert!(r.converged);
                assert_eq!(r.weights.w[1], 0.0);
                match anchor {
                    Anchor::MeanZero => {
                        let mean = (r.weights.w[0] + r.weights.w[2] + r.weights.w[3]) / 3.0;
                        assert!(mean.abs() < 1e-15);
                    }
                    Anchor::FirstZero => assert_eq!(r.weights.w[0], 0.0),
                }
                assert!((r.masses[0] - 0.5).abs() < 1e-10 && r.masses[1] == 0.0);
                let sum: f64 = r.mass_residuals.iter().sum();
                assert!(sum.abs() < 1e-12);
            }
        }
    }

    fn five_points() -> (GridDensity, PointConfiguration) {
        let d = build_uniform_box(&[0.0, 0.0], &[2.0, 1.0], &[40, 20]).unwrap();
        let y = PointConfiguration::from_rows(&[
            vec![0.1, 0.1],
            vec![1.9, 0.2],
            vec![1.0, 0.5],
            vec![0.4, 0.8],
            vec![3.0, 3.0],
        ])
        .unwrap();
        (d, y)
    }

    #[test]
    fn cell_center_value_matches_plan_cost_and_ascends() {
        let (d, y) = five_points();
        let lambda = vec![0.2; 5];
        for cost in [CostSpec::SquaredEuclidean, CostSpec::p_power(1.0).unwrap()] {
            let r = solve_dual(&d, &y, &cost, &lambda, &opts(CENTER, 1e-11), None).unwrap();
            assert!(r.converged, "{:?}", r.mass_residuals);
            for pair in r.history.windows(2) {
                assert!(pair[1] >= pair[0] - 1e-12, "{pair:?}");
            }
            let primal = r.plan.as_ref().unwrap().cost(&d, &y, &cost);
            assert!((primal - r.value).abs() < 1e-10, "{primal} vs {}", r.value);
        }
    }

    #[test]
    fn exact_newton_ascends_and_balances() {
        let (d, y) = five_points();
        let lambda = vec![0.2; 5];
        let r = solve_dual(
            &d,
            &y,
            &CostSpec::SquaredEuclidean,
            &lambda,
            &opts(EXACT, 1e-13),
            None,
        )
        .unwrap();
        assert!(r.converged, "{:?}", r.mass_residuals);
        assert!(r.iterations < 100, "{}", r.iterations);
        for pair in r.history.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-14, "{pair:?}");
        }
        // the piecewise-constant value is close to the discrete one
        let c = solve_dual(
            &d,
            &y,
            &CostSpec::SquaredEuclidean,
            &lambda,
            &opts(CENTER, 1e-11),
            None,
        )
        .unwrap();
        assert!(
            (r.value - c.value).abs() < 0.01,
            "{} vs {}",
            r.value,
            c.value
        );
    }
}
