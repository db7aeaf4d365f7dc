//! Semi-discrete optimal transport quantization on grid densities.
//!
//! A target probability measure is discretized on a regular grid
//! ([`GridDensity`]) and approximated by `N` Dirac masses. Two Lloyd-type
//! fixed-point solvers are provided:
//!
//! * [`lloyd::run_optimal`] moves every point to the barycenter of its
//!   Voronoi region (free weights),
//! * [`lloyd::run_uniform`] moves every point to the barycenter of its
//!   equal-mass power cell, obtained by solving the Kantorovich dual
//!   ([`dual::solve_dual`]).
//!
//! [`divergences`] adds sliced, max-sliced and entropic semi-discrete losses,
//! and [`diagnostics`] checks gradient formulas and descent inequalities
//! numerically.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cells;
pub mod cost;
pub mod density;
pub mod diagnostics;
pub mod divergences;
pub mod dual;
mod error;
mod exact;
pub mod lloyd;
pub mod numeric;
pub mod pgm;

pub use cells::{
    power_partition, power_partition_with, tie_weights, voronoi_partition, voronoi_partition_with,
    CellPartition, PointConfiguration, RegionStats, TieWeights,
};
pub use cost::CostSpec;
pub use density::{
    build_disk_mixture, build_uniform_box, load_pgm, reference_mixture, region_stats,
    GaussianComponent, GridDensity, Quadrature, RegionSummary,
};
pub use diagnostics::{DiagnosticReport, FdOptions, VerifyOptions};
pub use divergences::{
    entropic_semidiscrete, max_sliced_semidiscrete, sliced_w2_discrete, w2_1d_discrete,
    EntropicConfig, EntropicResult, MaxSlicedOptions, MaxSlicedResult, SlicedConfig,
    SlicedEstimate, WeightedCloud,
};
pub use dual::{
    dual_objective, dual_objective_with, solve_dual, Anchor, DualReport, DualWeights,
    SolverOptions, TransportPlan,
};
pub use error::{Error, Result};
pub use lloyd::{LloydOptions, SolverTrace, TraceRow};
