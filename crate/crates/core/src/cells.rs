//! Voronoi and power (Laguerre) partitions of a grid density.
//!
//! Every positive-density cell is assigned wholly to one region: the argmin of
//! `c(x, y_i) − w_i` over the active points, evaluated at the cell center,
//! with the lowest index winning ties.

use std::fmt::Write as _;

use ndarray::Array2;
use rayon::prelude::*;

use crate::cost::CostSpec;
use crate::density::{GridDensity, Quadrature};
use crate::exact::power_integrals;
use crate::numeric::{self, CompensatedSum};
use crate::pgm::PgmImage;
use crate::{Error, Result};

/// `N ≥ 1` support points in `R^dim`, stored as the rows of a matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PointConfiguration {
    points: Array2<f64>,
}

impl PointConfiguration {
    pub fn new(points: Array2<f64>) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(Error::InvalidArgument(
                "a configuration needs at least one point of positive dimension".into(),
            ));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "point coordinates must be finite".into(),
            ));
        }
        Ok(Self {
            points: points.as_standard_layout().into_owned(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidArgument(
                "points must share one dimension".into(),
            ));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let points = Array2::from_shape_vec((rows.len(), dim), flat)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Self::new(points)
    }

    /// One-dimensional configuration from scalar positions.
    pub fn from_scalars(xs: &[f64]) -> Result<Self> {
        let points = Array2::from_shape_vec((xs.len(), 1), xs.to_vec())
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Self::new(points)
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.points.as_slice().expect("standard layout")[i * d..(i + 1) * d]
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn into_array(self) -> Array2<f64> {
        self.points
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.point(i).to_vec()).collect()
    }

    /// First pair `i < j` with `y_i = y_j` (exact equality), if any.
    pub fn diagonal_pair(&self) -> Option<(usize, usize)> {
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                if self.point(i) == self.point(j) {
                    return Some((i, j));
                }
            }
        }
        None
    }

    pub fn on_diagonal(&self) -> bool {
        self.diagonal_pair().is_some()
    }

    /// Fail with [`Error::Diagonal`] when two points coincide.
    pub fn require_off_diagonal(&self) -> Result<()> {
        match self.diagonal_pair() {
            Some((i, j)) => Err(Error::Diagonal(i, j)),
            None => Ok(()),
        }
    }

    pub(crate) fn require_dim(&self, d: &GridDensity) -> Result<()> {
        if self.dim() != d.dim() {
            return Err(Error::InvalidArgument(format!(
                "points have dimension {} but the density has dimension {}",
                self.dim(),
                d.dim()
            )));
        }
        Ok(())
    }

    /// Frobenius distance to another configuration of the same shape.
    pub fn distance(&self, other: &PointConfiguration) -> f64 {
        numeric::squared_distance(
            self.points.as_slice().expect("standard layout"),
            other.points.as_slice().expect("standard layout"),
        )
        .sqrt()
    }
}

/// Merged Dirac weights: each group of coincident points puts its whole mass
/// `|group|/N` on its first index and zero on the others.
#[derive(Debug, Clone, PartialEq)]
pub struct TieWeights {
    lambda: Vec<f64>,
}

impl TieWeights {
    pub fn as_slice(&self) -> &[f64] {
        &self.lambda
    }

    /// Indices carrying positive weight, ascending.
    pub fn active(&self) -> Vec<usize> {
        active_indices(&self.lambda)
    }
}

pub(crate) fn active_indices(weights: &[f64]) -> Vec<usize> {
    (0..weights.len()).filter(|&i| weights[i] > 0.0).collect()
}

pub fn tie_weights(y: &PointConfiguration) -> TieWeights {
    let n = y.len();
    let lambda = (0..n)
        .map(|i| {
            if (0..i).any(|k| y.point(k) == y.point(i)) {
                0.0
            } else {
                (i..n).filter(|&j| y.point(j) == y.point(i)).count() as f64 / n as f64
            }
        })
        .collect();
    TieWeights { lambda }
}

/// Per-region statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionStats {
    pub mass: f64,
    /// `None` for a region without mass.
    pub barycenter: Option<Vec<f64>>,
    /// `∫_region ‖x − y_i‖² dμ`
    pub second_moment: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellPartition {
    labels: Vec<u32>,
    stats: Vec<RegionStats>,
}

pub const UNASSIGNED: u32 = u32::MAX;

impl CellPartition {
    /// Region of grid cell `k`; `None` for zero-density cells.
    pub fn label(&self, k: usize) -> Option<usize> {
        let l = self.labels[k];
        (l != UNASSIGNED).then_some(l as usize)
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn stats(&self) -> &[RegionStats] {
        &self.stats
    }

    pub fn masses(&self) -> Vec<f64> {
        self.stats.iter().map(|s| s.mass).collect()
    }

    pub fn min_mass(&self) -> f64 {
        self.stats
            .iter()
            .map(|s| s.mass)
            .fold(f64::INFINITY, f64::min)
    }

    /// Label raster in grid order: region `i` is stored as `i + 1` and
    /// unassigned cells as `0`. One-dimensional grids give a single row.
    pub fn label_image(&self, d: &GridDensity) -> Result<PgmImage> {
        if d.dim() > 2 {
            return Err(Error::InvalidArgument(
                "label rasters need a 1-D or 2-D grid".into(),
            ));
        }
        let maxval = u16::try_from(self.stats.len().max(1))
            .map_err(|_| Error::InvalidArgument("too many regions for a 16-bit raster".into()))?;
        let pixels = self
            .labels
            .iter()
            .map(|&l| if l == UNASSIGNED { 0 } else { l as u16 + 1 })
            .collect();
        Ok(PgmImage {
            width: d.shape()[0],
            height: d.shape().get(1).copied().unwrap_or(1),
            maxval,
            pixels,
        })
    }

    /// Per-region statistics as CSV with header
    /// `region,mass,second_moment,barycenter_0,…`.
    pub fn stats_csv(&self) -> String {
        let dim = self
            .stats
            .iter()
            .find_map(|s| s.barycenter.as_ref().map(Vec::len))
            .unwrap_or(0);
        let mut out = String::from("region,mass,second_moment");
        for a in 0..dim {
            let _ = write!(out, ",barycenter_{a}");
        }
        out.push('\n');
        for (i, s) in self.stats.iter().enumerate() {
            let _ = write!(out, "{i},{},{}", s.mass, s.second_moment);
            for a in 0..dim {
                match &s.barycenter {
                    Some(b) => {
                        let _ = write!(out, ",{}", b[a]);
                    }
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }

    pub(crate) fn from_parts(labels: Vec<u32>, stats: Vec<RegionStats>) -> Self {
        Self { labels, stats }
    }
}

/// Accumulates mass, first and second moments per region in a fixed order.
pub(crate) struct StatsAccumulator<'a> {
    y: &'a PointConfiguration,
    mass: Vec<CompensatedSum>,
    moment: Vec<CompensatedSum>,
    second: Vec<CompensatedSum>,
}

impl<'a> StatsAccumulator<'a> {
    pub(crate) fn new(y: &'a PointConfiguration) -> Self {
        let n = y.len();
        Self {
            y,
            mass: vec![CompensatedSum::new(); n],
            moment: vec![CompensatedSum::new(); n * y.dim()],
            second: vec![CompensatedSum::new(); n],
        }
    }

    #[inline]
    pub(crate) fn add(&mut self, region: usize, mass: f64, x: &[f64]) {
        let d = self.y.dim();
        self.mass[region].add(mass);
        for (m, &xa) in self.moment[region * d..(region + 1) * d].iter_mut().zip(x) {
            m.add(mass * xa);
        }
        self.second[region].add(mass * numeric::squared_distance(x, self.y.point(region)));
    }

    pub(crate) fn finish(self) -> Vec<RegionStats> {
        let d = self.y.dim();
        (0..self.y.len())
            .map(|i| {
                let mass = self.mass[i].value();
                let barycenter = (mass > 0.0).then(|| {
                    (0..d)
                        .map(|a| self.moment[i * d + a].value() / mass)
                        .collect()
                });
                RegionStats {
                    mass,
                    barycenter,
                    second_moment: self.second[i].value(),
                }
            })
            .collect()
    }

    /// Unnormalized first moments `∫_region x dμ`, row-major `N×dim`.
    pub(crate) fn first_moments(&self) -> Vec<f64> {
        self.moment.iter().map(CompensatedSum::value).collect()
    }
}

/// Best `(label, c(x, y_label) − w_label)` for every support cell, in support
/// order. Labels index into `y`; only `active` indices compete.
pub(crate) fn assign_support(
    d: &GridDensity,
    y: &PointConfiguration,
    w: &[f64],
    active: &[usize],
    cost: &CostSpec,
) -> Vec<(u32, f64)> {
    debug_assert!(!active.is_empty());
    d.support()
        .par_iter()
        .with_min_len(256)
        .map(|&k| {
            let x = d.center(k);
            let mut best = active[0];
            let mut best_val = cost.eval(x, y.point(best)) - w[best];
            for &i in &active[1..] {
                let v = cost.eval(x, y.point(i)) - w[i];
                if v < best_val {
                    best = i;
                    best_val = v;
                }
            }
            (best as u32, best_val)
        })
        .collect()
}

fn partition_from_assignment(
    d: &GridDensity,
    y: &PointConfiguration,
    assignment: &[(u32, f64)],
) -> CellPartition {
    let mut labels = vec![UNASSIGNED; d.num_cells()];
    let mut acc = StatsAccumulator::new(y);
    for (&k, &(label, _)) in d.support().iter().zip(assignment) {
        labels[k] = label;
        acc.add(label as usize, d.cell_mass(k), d.center(k));
    }
    CellPartition::from_parts(labels, acc.finish())
}

/// Voronoi partition for squared Euclidean distance.
///
/// Configurations on the generalized diagonal are rejected unless
/// `merge_duplicates` is set, in which case only the first point of each
/// coincident group receives cells.
pub fn voronoi_partition(
    d: &GridDensity,
    y: &PointConfiguration,
    merge_duplicates: bool,
) -> Result<CellPartition> {
    y.require_dim(d)?;
    if !merge_duplicates {
        y.require_off_diagonal()?;
    }
    let active = tie_weights(y).active();
    let zeros = vec![0.0; y.len()];
    let assignment = assign_support(d, y, &zeros, &active, &CostSpec::SquaredEuclidean);
    Ok(partition_from_assignment(d, y, &assignment))
}

/// Power partition: cell center `x` goes to the argmin of `c(x, y_i) − w_i`
/// over the indices with positive tie weight.
pub fn power_partition(
    d: &GridDensity,
    y: &PointConfiguration,
    w: &[f64],
    cost: &CostSpec,
) -> Result<CellPartition> {
    y.require_dim(d)?;
    if w.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "{} weights for {} points",
            w.len(),
            y.len()
        )));
    }
    let active = tie_weights(y).active();
    let assignment = assign_support(d, y, w, &active, cost);
    Ok(partition_from_assignment(d, y, &assignment))
}

/// Partition with region statistics integrated by `quadrature`.
///
/// Labels always follow the cell centers; with [`Quadrature::Exact`] the
/// statistics account for the parts of boundary cells on either side.
pub fn voronoi_partition_with(
    d: &GridDensity,
    y: &PointConfiguration,
    merge_duplicates: bool,
    quadrature: Quadrature,
) -> Result<CellPartition> {
    match quadrature {
        Quadrature::CellCenter => voronoi_partition(d, y, merge_duplicates),
        Quadrature::Exact => {
            if !merge_duplicates {
                y.require_off_diagonal()?;
            }
            power_partition_with(
                d,
                y,
                &vec![0.0; y.len()],
                &CostSpec::SquaredEuclidean,
                quadrature,
            )
        }
    }
}

/// [`power_partition`] with region statistics integrated by `quadrature`.
pub fn power_partition_with(
    d: &GridDensity,
    y: &PointConfiguration,
    w: &[f64],
    cost: &CostSpec,
    quadrature: Quadrature,
) -> Result<CellPartition> {
    if quadrature == Quadrature::CellCenter {
        return power_partition(d, y, w, cost);
    }
    if !cost.is_squared_euclidean() {
        return Err(Error::InvalidArgument(
            "exact quadrature needs the squared Euclidean cost".into(),
        ));
    }
    y.require_dim(d)?;
    if w.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "{} weights for {} points",
            w.len(),
            y.len()
        )));
    }
    let active = tie_weights(y).active();
    let ev = power_integrals(d, y, w, &active);
    let mut labels = vec![UNASSIGNED; d.num_cells()];
    for (&k, &l) in d.support().iter().zip(&ev.labels) {
        labels[k] = l;
    }
    let dim = y.dim();
    let stats = (0..y.len())
        .map(|i| {
            let mass = ev.masses[i];
            RegionStats {
                mass,
                barycenter: (mass > 0.0)
                    .then(|| (0..dim).map(|a| ev.moments[i * dim + a] / mass).collect()),
                second_moment: ev.second[i],
            }
        })
        .collect();
    Ok(CellPartition::from_parts(labels, stats))
}
