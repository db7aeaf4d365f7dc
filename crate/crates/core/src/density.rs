//! Grid-discretized target densities.
//!
//! A [`GridDensity`] stores a nonnegative density on a regular 1-D or 2-D
//! grid, collocated at cell centers. Every integral against the measure is a
//! weighted sum over cells, so the measure is effectively the discrete measure
//! `Σ_k values[k]·cellVolume·δ_{center(k)}`.
//!
//! Cells are indexed with axis 0 varying fastest: `k = i0 + shape[0]·i1`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numeric::{self, CompensatedSum};
use crate::pgm::{self, PgmImage};
use crate::{Error, Result};

/// Tolerance under which a density counts as already normalized.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// How integrals against a grid density are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrature {
    /// Each cell is a Dirac mass at its center: the measure is discrete.
    CellCenter,
    /// Each cell spreads its mass uniformly over its box and cells cut by a
    /// region boundary are split exactly. Only available for the squared
    /// Euclidean cost, whose region boundaries are hyperplanes.
    #[default]
    Exact,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    origin: Vec<f64>,
    spacing: Vec<f64>,
    shape: Vec<usize>,
    values: Vec<f64>,
    cell_volume: f64,
    centers: Vec<f64>,
    support: Vec<usize>,
}

impl GridDensity {
    /// Build an (unnormalized) grid density after validating its geometry.
    pub fn new(
        origin: Vec<f64>,
        spacing: Vec<f64>,
        shape: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let dim = shape.len();
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidArgument(format!(
                "grid dimension must be 1 or 2, got {dim}"
            )));
        }
        if origin.len() != dim || spacing.len() != dim {
            return Err(Error::InvalidArgument(
                "origin, spacing and shape must have the same length".into(),
            ));
        }
        if spacing.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "spacing must be strictly positive and finite: {spacing:?}"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidArgument("origin must be finite".into()));
        }
        if shape.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "every axis needs at least one cell: {shape:?}"
            )));
        }
        let count: usize = shape.iter().product();
        if values.len() != count {
            return Err(Error::InvalidArgument(format!(
                "expected {count} values, got {}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "density values must be finite and nonnegative, found {v}"
            )));
        }
        let cell_volume = spacing.iter().product();
        let mut centers = Vec::with_capacity(count * dim);
        for k in 0..count {
            let mut rest = k;
            for axis in 0..dim {
                let i = rest % shape[axis];
                rest /= shape[axis];
                centers.push(origin[axis] + (i as f64 + 0.5) * spacing[axis]);
            }
        }
        let support = (0..count).filter(|&k| values[k] > 0.0).collect();
        Ok(Self {
            origin,
            spacing,
            shape,
            values,
            cell_volume,
            centers,
            support,
        })
    }

    /// Rescale so that the total mass is one.
    ///
    /// A density whose mass is already within [`NORMALIZATION_TOL`] of one is
    /// returned unchanged, which makes normalization idempotent.
    pub fn normalize(mut self) -> Result<Self> {
        let total = self.total_mass();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::DegenerateMeasure(format!(
                "total mass {total} cannot be normalized"
            )));
        }
        if (total - 1.0).abs() <= NORMALIZATION_TOL {
            return Ok(self);
        }
        for v in &mut self.values {
            *v /= total;
        }
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    pub fn num_cells(&self) -> usize {
        self.values.len()
    }

    /// Center of cell `k` in world units.
    #[inline]
    pub fn center(&self, k: usize) -> &[f64] {
        let d = self.dim();
        &self.centers[k * d..(k + 1) * d]
    }

    #[inline]
    pub fn cell_mass(&self, k: usize) -> f64 {
        self.values[k] * self.cell_volume
    }

    /// Indices of cells with positive density, ascending.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn total_mass(&self) -> f64 {
        numeric::sum(self.values.iter().map(|v| v * self.cell_volume))
    }

    pub fn max_cell_mass(&self) -> f64 {
        self.values
            .iter()
            .fold(0.0f64, |m, v| m.max(v * self.cell_volume))
    }

    /// Lower and upper corners of the grid window.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let hi = (0..self.dim())
            .map(|a| self.origin[a] + self.shape[a] as f64 * self.spacing[a])
            .collect();
        (self.origin.clone(), hi)
    }

    /// Diagonal length of the bounding box of the support cells.
    pub fn support_diameter(&self) -> f64 {
        let d = self.dim();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for &k in &self.support {
            let c = self.center(k);
            for a in 0..d {
                lo[a] = lo[a].min(c[a] - 0.5 * self.spacing[a]);
                hi[a] = hi[a].max(c[a] + 0.5 * self.spacing[a]);
            }
        }
        if self.support.is_empty() {
            return 0.0;
        }
        (0..d).map(|a| (hi[a] - lo[a]).powi(2)).sum::<f64>().sqrt()
    }

    /// Index of the cell containing `point`, if it lies inside the window.
    pub fn cell_of(&self, point: &[f64]) -> Option<usize> {
        if point.len() != self.dim() {
            return None;
        }
        let mut k = 0;
        let mut stride = 1;
        for (a, &p) in point.iter().enumerate() {
            let t = (p - self.origin[a]) / self.spacing[a];
            if !(t >= 0.0) || t >= self.shape[a] as f64 {
                return None;
            }
            k += (t.floor() as usize).min(self.shape[a] - 1) * stride;
            stride *= self.shape[a];
        }
        Some(k)
    }

    /// True when `point` falls in a cell with positive density.
    pub fn in_support(&self, point: &[f64]) -> bool {
        self.cell_of(point).is_some_and(|k| self.values[k] > 0.0)
    }

    /// The same density on a grid moved rigidly by `shift`.
    pub fn translated(&self, shift: &[f64]) -> Result<Self> {
        if shift.len() != self.dim() {
            return Err(Error::InvalidArgument("shift dimension mismatch".into()));
        }
        let origin = self.origin.iter().zip(shift).map(|(o, s)| o + s).collect();
        GridDensity::new(
            origin,
            self.spacing.clone(),
            self.shape.clone(),
            self.values.clone(),
        )
    }
}

/// Load a PGM image as a density on `[0,W)×[0,H)` with unit spacing.
///
/// Pixel `(col, row)` becomes the cell centered at `(col + ½, row + ½)`;
/// values are proportional to intensities and normalized to mass one.
pub fn load_pgm(path: impl AsRef<Path>) -> Result<GridDensity> {
    density_from_image(&pgm::read_pgm(path)?)
}

pub fn density_from_image(image: &PgmImage) -> Result<GridDensity> {
    let values = image.pixels.iter().map(|&p| p as f64).collect();
    GridDensity::new(
        vec![0.0, 0.0],
        vec![1.0, 1.0],
        vec![image.width, image.height],
        values,
    )?
    .normalize()
    .map_err(|_| Error::DegenerateMeasure("image has no nonzero pixel".into()))
}

/// Uniform normalized density on the box `[lo, hi]`.
pub fn build_uniform_box(lo: &[f64], hi: &[f64], resolution: &[usize]) -> Result<GridDensity> {
    if lo.len() != hi.len() || lo.len() != resolution.len() {
        return Err(Error::InvalidArgument(
            "lo, hi and resolution must have the same length".into(),
        ));
    }
    if lo.iter().zip(hi).any(|(l, h)| !(h - l > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "box must have positive extent on every axis: lo {lo:?}, hi {hi:?}"
        )));
    }
    let spacing: Vec<f64> = (0..lo.len())
        .map(|a| (hi[a] - lo[a]) / resolution[a].max(1) as f64)
        .collect();
    let count: usize = resolution.iter().product();
    let volume: f64 = lo.iter().zip(hi).map(|(l, h)| h - l).product();
    GridDensity::new(
        lo.to_vec(),
        spacing,
        resolution.to_vec(),
        vec![1.0 / volume; count],
    )?
    .normalize()
}

/// One Gaussian term of a mixture; `covariance` is row-major `dim×dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub mean: Vec<f64>,
    pub covariance: Vec<f64>,
    pub weight: f64,
}

impl GaussianComponent {
    pub fn isotropic(mean: Vec<f64>, variance: f64, weight: f64) -> Self {
        let d = mean.len();
        let mut covariance = vec![0.0; d * d];
        for a in 0..d {
            covariance[a * d + a] = variance;
        }
        Self {
            mean,
            covariance,
            weight,
        }
    }

    fn prepare(&self, dim: usize) -> Result<PreparedGaussian> {
        if self.mean.len() != dim || self.covariance.len() != dim * dim {
            return Err(Error::InvalidArgument(format!(
                "component dimensions do not match grid dimension {dim}"
            )));
        }
        if !(self.weight > 0.0 && self.weight.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "mixture weight must be positive, got {}",
                self.weight
            )));
        }
        let c = &self.covariance;
        let (det, inverse) = match dim {
            1 => (c[0], vec![1.0 / c[0]]),
            _ => {
                if c[1] != c[2] {
                    return Err(Error::InvalidArgument(
                        "covariance must be symmetric".into(),
                    ));
                }
                let det = c[0] * c[3] - c[1] * c[2];
                (det, vec![c[3] / det, -c[1] / det, -c[2] / det, c[0] / det])
            }
        };
        if !(c[0] > 0.0 && det > 0.0 && det.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "covariance must be positive definite: {c:?}"
            )));
        }
        let norm = self.weight / ((2.0 * std::f64::consts::PI).powi(dim as i32) * det).sqrt();
        Ok(PreparedGaussian {
            mean: self.mean.clone(),
            inverse,
            norm,
        })
    }
}

struct PreparedGaussian {
    mean: Vec<f64>,
    inverse: Vec<f64>,
    norm: f64,
}

impl PreparedGaussian {
    fn pdf(&self, x: &[f64]) -> f64 {
        let d = self.mean.len();
        let mut q = 0.0;
        for a in 0..d {
            for b in 0..d {
                q += (x[a] - self.mean[a]) * self.inverse[a * d + b] * (x[b] - self.mean[b]);
            }
        }
        self.norm * (-0.5 * q).exp()
    }
}

/// Gaussian mixture evaluated at cell centers, truncated to the closed ball
/// `|x − center| ≤ radius`, on a grid covering the ball's bounding box.
pub fn build_disk_mixture(
    center: &[f64],
    radius: f64,
    components: &[GaussianComponent],
    resolution: &[usize],
) -> Result<GridDensity> {
    let lo: Vec<f64> = center.iter().map(|c| c - radius).collect();
    let hi: Vec<f64> = center.iter().map(|c| c + radius).collect();
    build_disk_mixture_in_window(center, radius, components, resolution, &lo, &hi)
}

/// Like [`build_disk_mixture`] but on an explicit grid window `[lo, hi]`.
pub fn build_disk_mixture_in_window(
    center: &[f64],
    radius: f64,
    components: &[GaussianComponent],
    resolution: &[usize],
    lo: &[f64],
    hi: &[f64],
) -> Result<GridDensity> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "radius must be positive, got {radius}"
        )));
    }
    if components.is_empty() {
        return Err(Error::InvalidArgument(
            "mixture needs at least one component".into(),
        ));
    }
    let dim = center.len();
    if lo.len() != dim || hi.len() != dim || resolution.len() != dim {
        return Err(Error::InvalidArgument("window dimension mismatch".into()));
    }
    let prepared = components
        .iter()
        .map(|c| c.prepare(dim))
        .collect::<Result<Vec<_>>>()?;
    let window = build_uniform_box(lo, hi, resolution)?;
    let r2 = radius * radius;
    let values = (0..window.num_cells())
        .map(|k| {
            let x = window.center(k);
            if numeric::squared_distance(x, center) > r2 {
                0.0
            } else {
                prepared.iter().map(|g| g.pdf(x)).sum()
            }
        })
        .collect();
    GridDensity::new(
        window.origin().to_vec(),
        window.spacing().to_vec(),
        window.shape().to_vec(),
        values,
    )?
    .normalize()
    .map_err(|_| Error::DegenerateMeasure("mixture has no mass inside the disk".into()))
}

/// Two-component Gaussian mixture truncated to the unit disk, sampled on a
/// `resolution × resolution` grid over `[−1, 1]²`. One elongated, correlated
/// component carries 60% of the weight and an isotropic one the rest.
pub fn reference_mixture(resolution: usize) -> Result<GridDensity> {
    let components = [
        GaussianComponent {
            mean: vec![-0.35, -0.2],
            covariance: vec![0.08, 0.02, 0.02, 0.05],
            weight: 0.6,
        },
        GaussianComponent::isotropic(vec![0.4, 0.35], 0.04, 0.4),
    ];
    build_disk_mixture(&[0.0, 0.0], 1.0, &components, &[resolution, resolution])
}

/// Mass and barycenter of a set of cells.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSummary {
    pub mass: f64,
    /// `None` when the region carries no mass.
    pub barycenter: Option<Vec<f64>>,
}

/// Mass and barycenter of the cells selected by `mask`, accumulated in
/// ascending cell order.
pub fn region_stats(d: &GridDensity, mask: impl Fn(usize) -> bool) -> RegionSummary {
    let dim = d.dim();
    let mut mass = CompensatedSum::new();
    let mut moment = vec![CompensatedSum::new(); dim];
    for &k in d.support() {
        if !mask(k) {
            continue;
        }
        let m = d.cell_mass(k);
        mass.add(m);
        for (acc, x) in moment.iter_mut().zip(d.center(k)) {
            acc.add(m * x);
        }
    }
    let mass = mass.value();
    let barycenter = (mass > 0.0).then(|| moment.iter().map(|s| s.value() / mass).collect());
    RegionSummary { mass, barycenter }
}
