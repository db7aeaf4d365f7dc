//! Exact integration of power cells against a piecewise-constant density.
//!
//! Each grid cell carries a constant density over its whole box. For the
//! squared Euclidean cost, power cells are intersections of half-spaces, so
//! a boundary cell is split by clipping its box against the bisector
//! half-spaces of the competing points. Masses, moments and transport costs
//! are then exact polynomial integrals over the pieces. This makes the
//! quantization losses continuously differentiable in the points, and the
//! boundary integrals give the Hessian of the dual objective.

use rayon::prelude::*;

use crate::cells::PointConfiguration;
use crate::density::GridDensity;
use crate::numeric::CompensatedSum;

/// Cells per parallel work unit. Fixed so that the reduction order, and
/// hence every rounding error, does not depend on the thread count.
const CHUNK: usize = 512;

const NO_FACET: usize = usize::MAX;

/// Integrals over the power cells `{x : ‖x − y_i‖² − w_i minimal}`.
#[derive(Debug, Clone)]
pub(crate) struct PowerIntegrals {
    pub masses: Vec<f64>,
    /// `∫_i x dμ`, row-major `N×dim`.
    pub moments: Vec<f64>,
    /// `∫_i ‖x − y_i‖² dμ`
    pub second: Vec<f64>,
    /// `Σ_i ∫_i (‖x − y_i‖² − w_i) dμ`
    pub transport: f64,
    /// `∫_{Γ_ij} f dσ` over the interface between cells `i` and `j`,
    /// row-major `N×N`, symmetric.
    pub facets: Vec<f64>,
    /// Region of every support cell center, in support order.
    pub labels: Vec<u32>,
}

struct Accumulator {
    n: usize,
    dim: usize,
    mass: Vec<CompensatedSum>,
    moment: Vec<CompensatedSum>,
    second: Vec<CompensatedSum>,
    transport: CompensatedSum,
    facets: Vec<f64>,
    labels: Vec<u32>,
}

impl Accumulator {
    fn new(n: usize, dim: usize, cells: usize) -> Self {
        Self {
            n,
            dim,
            mass: vec![CompensatedSum::new(); n],
            moment: vec![CompensatedSum::new(); n * dim],
            second: vec![CompensatedSum::new(); n],
            transport: CompensatedSum::new(),
            facets: vec![0.0; n * n],
            labels: Vec::with_capacity(cells),
        }
    }

    /// Add `f` times the integrals of one piece, given in coordinates
    /// `u = x − c` relative to the cell center `c`.
    #[allow(clippy::too_many_arguments)]
    fn add_piece(
        &mut self,
        i: usize,
        f: f64,
        c: &[f64],
        y: &[f64],
        w: f64,
        area: f64,
        first: &[f64],
        sq: f64,
    ) {
        let mut d2 = 0.0;
        let mut cross = 0.0;
        for a in 0..self.dim {
            let d = c[a] - y[a];
            d2 += d * d;
            cross += d * first[a];
            self.moment[i * self.dim + a].add(f * (area * c[a] + first[a]));
        }
        let second = sq + 2.0 * cross + d2 * area;
        self.mass[i].add(f * area);
        self.second[i].add(f * second);
        self.transport.add(f * (second - w * area));
    }

    fn merge(&mut self, other: Accumulator) {
        for (a, b) in self.mass.iter_mut().zip(&other.mass) {
            a.add(b.value());
        }
        for (a, b) in self.moment.iter_mut().zip(&other.moment) {
            a.add(b.value());
        }
        for (a, b) in self.second.iter_mut().zip(&other.second) {
            a.add(b.value());
        }
        self.transport.add(other.transport.value());
        for (a, b) in self.facets.iter_mut().zip(&other.facets) {
            *a += b;
        }
        self.labels.extend(other.labels);
    }

    fn finish(self) -> PowerIntegrals {
        let n = self.n;
        let mut facets = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                facets[i * n + j] = 0.5 * (self.facets[i * n + j] + self.facets[j * n + i]);
            }
        }
        PowerIntegrals {
            masses: self.mass.iter().map(CompensatedSum::value).collect(),
            moments: self.moment.iter().map(CompensatedSum::value).collect(),
            second: self.second.iter().map(CompensatedSum::value).collect(),
            transport: self.transport.value(),
            facets,
            labels: self.labels,
        }
    }
}

/// Vertex of a clipped polygon together with the interface label of the
/// edge leaving it.
#[derive(Clone, Copy)]
struct Vertex {
    u: [f64; 2],
    facet: usize,
}

/// Clip a convex polygon by `a·u ≤ b`, labelling new edges with `facet`.
fn clip(poly: &[Vertex], a: [f64; 2], b: f64, facet: usize, out: &mut Vec<Vertex>) {
    out.clear();
    let m = poly.len();
    for k in 0..m {
        let p = poly[k];
        let q = poly[(k + 1) % m];
        let sp = a[0] * p.u[0] + a[1] * p.u[1] - b;
        let sq = a[0] * q.u[0] + a[1] * q.u[1] - b;
        let p_in = sp <= 0.0;
        let q_in = sq <= 0.0;
        if p_in {
            out.push(p);
        }
        if p_in != q_in {
            let t = sp / (sp - sq);
            let u = [
                p.u[0] + t * (q.u[0] - p.u[0]),
                p.u[1] + t * (q.u[1] - p.u[1]),
            ];
            let label = if p_in { facet } else { p.facet };
            out.push(Vertex { u, facet: label });
        }
    }
}

/// Area, first moment and `∫‖u‖²` of a simple polygon.
fn polygon_integrals(poly: &[Vertex]) -> (f64, [f64; 2], f64) {
    let m = poly.len();
    let (mut area, mut mx, mut my, mut qx, mut qy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for k in 0..m {
        let [x0, y0] = poly[k].u;
        let [x1, y1] = poly[(k + 1) % m].u;
        let c = x0 * y1 - x1 * y0;
        area += c;
        mx += (x0 + x1) * c;
        my += (y0 + y1) * c;
        qx += (x0 * x0 + x0 * x1 + x1 * x1) * c;
        qy += (y0 * y0 + y0 * y1 + y1 * y1) * c;
    }
    (area / 2.0, [mx / 6.0, my / 6.0], (qx + qy) / 12.0)
}

struct Problem<'a> {
    d: &'a GridDensity,
    y: &'a PointConfiguration,
    w: &'a [f64],
    active: &'a [usize],
    /// `‖y_i‖` free bisector data: `Σ_a h_a |y_ia − y_ja|` is recomputed.
    half_extent_sq: f64,
}

impl Problem<'_> {
    /// Largest change of `r_j − r_i` between the center and a corner.
    #[inline]
    fn spread(&self, i: usize, j: usize) -> f64 {
        let h = self.d.spacing();
        let (yi, yj) = (self.y.point(i), self.y.point(j));
        (0..h.len()).map(|a| h[a] * (yi[a] - yj[a]).abs()).sum()
    }

    fn cell(
        &self,
        k: usize,
        acc: &mut Accumulator,
        rc: &mut Vec<f64>,
        scratch: &mut (Vec<Vertex>, Vec<Vertex>),
    ) {
        let d = self.d;
        let c = d.center(k);
        let f = d.values()[k];
        rc.clear();
        let mut best = 0;
        for (pos, &i) in self.active.iter().enumerate() {
            let r = crate::numeric::squared_distance(c, self.y.point(i)) - self.w[i];
            if r < rc.get(best).copied().unwrap_or(f64::INFINITY) {
                best = pos;
            }
            rc.push(r);
        }
        let owner = self.active[best];
        acc.labels.push(owner as u32);
        let whole = self
            .active
            .iter()
            .enumerate()
            .all(|(pos, &j)| pos == best || rc[pos] - rc[best] > self.spread(owner, j));
        if whole {
            let zero = [0.0; 2];
            let volume = d.cell_volume();
            acc.add_piece(
                owner,
                f,
                c,
                self.y.point(owner),
                self.w[owner],
                volume,
                &zero[..d.dim()],
                volume * self.half_extent_sq,
            );
            return;
        }
        // Points whose cell meets this box: not beaten at every corner.
        let candidates: Vec<usize> = (0..self.active.len())
            .filter(|&p| {
                let i = self.active[p];
                !(0..self.active.len())
                    .any(|q| q != p && rc[q] - rc[p] + self.spread(i, self.active[q]) < 0.0)
            })
            .collect();
        for &p in &candidates {
            let i = self.active[p];
            match d.dim() {
                1 => self.clip_interval(k, p, i, &candidates, rc, acc),
                _ => self.clip_square(k, p, i, &candidates, rc, acc, scratch),
            }
        }
    }

    fn clip_interval(
        &self,
        k: usize,
        p: usize,
        i: usize,
        candidates: &[usize],
        rc: &[f64],
        acc: &mut Accumulator,
    ) {
        let h = self.d.spacing()[0];
        let (mut lo, mut hi) = (-0.5 * h, 0.5 * h);
        let (mut lo_facet, mut hi_facet) = (NO_FACET, NO_FACET);
        let yi = self.y.point(i)[0];
        for &q in candidates {
            if q == p {
                continue;
            }
            let j = self.active[q];
            // r_i ≤ r_j  ⇔  2(y_j − y_i)·u ≤ rc_j − rc_i
            let a = 2.0 * (self.y.point(j)[0] - yi);
            let b = rc[q] - rc[p];
            let t = b / a;
            if a > 0.0 && t < hi {
                hi = t;
                hi_facet = j;
            } else if a < 0.0 && t > lo {
                lo = t;
                lo_facet = j;
            }
        }
        if lo >= hi {
            return;
        }
        let f = self.d.values()[k];
        let n = acc.n;
        for (facet, at) in [(lo_facet, lo), (hi_facet, hi)] {
            if facet != NO_FACET && at.abs() < 0.5 * h {
                acc.facets[i * n + facet] += f;
            }
        }
        let area = hi - lo;
        let first = [(hi * hi - lo * lo) / 2.0];
        let sq = (hi * hi * hi - lo * lo * lo) / 3.0;
        acc.add_piece(
            i,
            f,
            self.d.center(k),
            self.y.point(i),
            self.w[i],
            area,
            &first,
            sq,
        );
    }

    #[allow(clippy::too_many_arguments)]
    fn clip_square(
        &self,
        k: usize,
        p: usize,
        i: usize,
        candidates: &[usize],
        rc: &[f64],
        acc: &mut Accumulator,
        scratch: &mut (Vec<Vertex>, Vec<Vertex>),
    ) {
        let h = self.d.spacing();
        let (hx, hy) = (0.5 * h[0], 0.5 * h[1]);
        let (poly, next) = scratch;
        poly.clear();
        for u in [[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]] {
            poly.push(Vertex { u, facet: NO_FACET });
        }
        let yi = self.y.point(i);
        for &q in candidates {
            if q == p {
                continue;
            }
            let j = self.active[q];
            let yj = self.y.point(j);
            let a = [2.0 * (yj[0] - yi[0]), 2.0 * (yj[1] - yi[1])];
            clip(poly, a, rc[q] - rc[p], j, next);
            std::mem::swap(poly, next);
            if poly.len() < 3 {
                return;
            }
        }
        let f = self.d.values()[k];
        let n = acc.n;
        for e in 0..poly.len() {
            let v = poly[e];
            if v.facet != NO_FACET {
                let wv = poly[(e + 1) % poly.len()];
                let len = ((wv.u[0] - v.u[0]).powi(2) + (wv.u[1] - v.u[1]).powi(2)).sqrt();
                acc.facets[i * n + v.facet] += f * len;
            }
        }
        let (area, first, sq) = polygon_integrals(poly);
        if area > 0.0 {
            acc.add_piece(i, f, self.d.center(k), yi, self.w[i], area, &first, sq);
        }
    }
}

/// Integrate every power cell of `(y, w)` restricted to `active` points.
pub(crate) fn power_integrals(
    d: &GridDensity,
    y: &PointConfiguration,
    w: &[f64],
    active: &[usize],
) -> PowerIntegrals {
    let n = y.len();
    let dim = d.dim();
    let half_extent_sq = d.spacing().iter().map(|h| h * h / 12.0).sum();
    let problem = Problem {
        d,
        y,
        w,
        active,
        half_extent_sq,
    };
    let partials: Vec<Accumulator> = d
        .support()
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = Accumulator::new(n, dim, chunk.len());
            let mut rc = Vec::with_capacity(active.len());
            let mut scratch = (Vec::with_capacity(8), Vec::with_capacity(8));
            for &k in chunk {
                problem.cell(k, &mut acc, &mut rc, &mut scratch);
            }
            acc
        })
        .collect();
    let mut total = Accumulator::new(n, dim, d.support().len());
    for part in partials {
        total.merge(part);
    }
    total.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{build_uniform_box, GridDensity};

    fn all(n: usize) -> Vec<usize> {
        (0..n).collect()
    }

    #[test]
    fn interval_split_inside_a_cell_is_exact() {
        // 10 cells of width 0.1; boundary at 0.43 falls inside cell 4
        let d = build_uniform_box(&[0.0], &[1.0], &[10]).unwrap();
        let y = PointConfiguration::from_scalars(&[0.2, 0.66]).unwrap();
        let r = power_integrals(&d, &y, &[0.0, 0.0], &all(2));
        assert!((r.masses[0] - 0.43).abs() < 1e-14);
        assert!((r.masses[1] - 0.57).abs() < 1e-14);
        assert!((r.moments[0] - 0.43 * 0.43 / 2.0).abs() < 1e-14);
        assert!((r.moments[1] - (1.0 - 0.43 * 0.43) / 2.0).abs() < 1e-14);
        // ∫ (x − y)² over an interval, by antiderivative
        let cube = |a: f64, b: f64, c: f64| ((b - c).powi(3) - (a - c).powi(3)) / 3.0;
        assert!((r.second[0] - cube(0.0, 0.43, 0.2)).abs() < 1e-14);
        assert!((r.second[1] - cube(0.43, 1.0, 0.66)).abs() < 1e-14);
        // density 1 at the single interface point
        assert!((r.facets[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn square_split_by_a_diagonal_bisector() {
        // one unit cell, bisector of (0,0) and (1,1) is the anti-diagonal
        let d = GridDensity::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![1, 1], vec![1.0]).unwrap();
        let y = PointConfiguration::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let r = power_integrals(&d, &y, &[0.0, 0.0], &all(2));
        assert!((r.masses[0] - 0.5).abs() < 1e-15);
        assert!((r.moments[0] - 1.0 / 6.0).abs() < 1e-15);
        assert!((r.moments[1] - 1.0 / 6.0).abs() < 1e-15);
        // ∫ over the lower triangle of x² + y² is 1/6
        assert!((r.second[0] - 1.0 / 6.0).abs() < 1e-15);
        assert!((r.facets[1] - 2f64.sqrt()).abs() < 1e-14);
        assert!((r.transport - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn small_region_inside_one_cell_is_found() {
        // the center point's cell is a tilted square strictly inside the box:
        // 0.7 ≤ x + y ≤ 1.3 and |x − y| ≤ 0.3, area 0.18
        let d = GridDensity::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![1, 1], vec![1.0]).unwrap();
        let y = PointConfiguration::from_rows(&[
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
            vec![0.5, 0.5],
        ])
        .unwrap();
        let r = power_integrals(&d, &y, &[0.0, 0.0, 0.0, 0.0, -0.2], &all(5));
        assert!((r.masses[4] - 0.18).abs() < 1e-15, "{:?}", r.masses);
        assert!((r.masses.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        // each interface with a corner point is a side of length 0.6/√2
        assert!((r.facets[4] - 0.6 / 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn whole_cells_include_their_spread() {
        let d = build_uniform_box(&[0.0, 0.0], &[1.0, 1.0], &[4, 4]).unwrap();
        let y = PointConfiguration::from_rows(&[vec![0.5, 0.5]]).unwrap();
        let r = power_integrals(&d, &y, &[0.0], &all(1));
        // ∫_{[0,1]²} ‖x − (½,½)‖² = 1/6
        assert!((r.second[0] - 1.0 / 6.0).abs() < 1e-15);
        assert!((r.masses[0] - 1.0).abs() < 1e-15);
    }
}
