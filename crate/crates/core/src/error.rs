use thiserror::Error;

use crate::dual::DualReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("PGM parse error: {0}")]
    Parse(String),

    #[error("degenerate measure: {0}")]
    DegenerateMeasure(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration lies on the generalized diagonal: points {0} and {1} coincide")]
    Diagonal(usize, usize),

    #[error("region {region} has zero mass{}", at_iteration(*.iteration))]
    EmptyRegion {
        region: usize,
        iteration: Option<usize>,
    },

    #[error(
        "dual solver did not converge (max mass residual {:.3e} after {} iterations){}",
        .report.max_residual(), .report.iterations, at_iteration(*.iteration)
    )]
    DualNotConverged {
        report: Box<DualReport>,
        iteration: Option<usize>,
    },

    #[error("entropic solver did not converge: gradient norm {grad_norm:.3e} after {iterations} iterations")]
    EntropicNotConverged { grad_norm: f64, iterations: usize },

    #[error("descent check failed at iteration {iteration}: {inequality} (lhs {lhs:.6e}, rhs {rhs:.6e})")]
    DescentViolation {
        iteration: usize,
        inequality: &'static str,
        lhs: f64,
        rhs: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn at_iteration(iteration: Option<usize>) -> String {
    match iteration {
        Some(n) => format!(" at iteration {n}"),
        None => String::new(),
    }
}
