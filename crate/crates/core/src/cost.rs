//! Ground costs `c(x, y)` between a grid location and a support point.

use std::fmt;
use std::sync::Arc;

use crate::numeric;
use crate::{Error, Result};

type CostFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;

#[derive(Clone, Default)]
pub enum CostSpec {
    /// `‖x − y‖²`
    #[default]
    SquaredEuclidean,
    /// `‖x − y‖^p` with `p ≥ 1`
    PPower(f64),
    /// Any nonnegative evaluator.
    Custom(Arc<CostFn>),
}

impl CostSpec {
    pub fn p_power(p: f64) -> Result<Self> {
        if !(p >= 1.0 && p.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "cost exponent must be >= 1, got {p}"
            )));
        }
        Ok(CostSpec::PPower(p))
    }

    pub fn custom(f: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        CostSpec::Custom(Arc::new(f))
    }

    #[inline]
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            CostSpec::SquaredEuclidean => numeric::squared_distance(x, y),
            CostSpec::PPower(p) => numeric::squared_distance(x, y).sqrt().powf(*p),
            CostSpec::Custom(f) => f(x, y),
        }
    }

    pub fn is_squared_euclidean(&self) -> bool {
        matches!(self, CostSpec::SquaredEuclidean)
    }

    /// Lipschitz constant of `y ↦ c(x, y)` over a set of the given diameter.
    ///
    /// Custom costs are probed by difference quotients over `probe` points.
    pub fn lipschitz_estimate(&self, diameter: f64, probe: &[Vec<f64>]) -> f64 {
        match self {
            CostSpec::SquaredEuclidean => 2.0 * diameter,
            CostSpec::PPower(p) => p * diameter.powf(p - 1.0),
            CostSpec::Custom(f) => {
                let mut lip = 0.0f64;
                for x in probe {
                    for (i, a) in probe.iter().enumerate() {
                        for b in &probe[i + 1..] {
                            let dist = numeric::squared_distance(a, b).sqrt();
                            if dist > 0.0 {
                                lip = lip.max((f(x, a) - f(x, b)).abs() / dist);
                            }
                        }
                    }
                }
                lip
            }
        }
    }
}

impl fmt::Debug for CostSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostSpec::SquaredEuclidean => write!(f, "SquaredEuclidean"),
            CostSpec::PPower(p) => write!(f, "PPower({p})"),
            CostSpec::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluates_builtin_costs() {
        let x = [0.0, 0.0];
        let y = [3.0, 4.0];
        assert_eq!(CostSpec::SquaredEuclidean.eval(&x, &y), 25.0);
        assert!((CostSpec::p_power(1.0).unwrap().eval(&x, &y) - 5.0).abs() < 1e-12);
        assert!((CostSpec::p_power(3.0).unwrap().eval(&x, &y) - 125.0).abs() < 1e-9);
        assert!(CostSpec::p_power(0.5).is_err());
        let l1 = CostSpec::custom(|a, b| a.iter().zip(b).map(|(u, v)| (u - v).abs()).sum());
        assert_eq!(l1.eval(&x, &y), 7.0);
    }
}
