//! Run configuration: a JSON file merged with command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sdquant::{
    build_disk_mixture, build_uniform_box, load_pgm, reference_mixture, GaussianComponent,
    GridDensity, PointConfiguration, Quadrature,
};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    #[default]
    Optimal,
    Uniform,
    Dual,
    Entropic,
    Sliced,
    #[value(name = "max_sliced", alias = "max-sliced")]
    MaxSliced,
}

/// Point list: `"0.2,0.6"` (one scalar per point in 1-D),
/// `"0.1,0.2;0.3,0.4"` (points separated by `;`), or a JSON array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PointsSpec {
    Text(String),
    Rows(Vec<Vec<f64>>),
    Scalars(Vec<f64>),
}

impl PointsSpec {
    pub fn to_configuration(&self, dim: usize) -> Result<PointConfiguration, CliError> {
        let rows = match self {
            PointsSpec::Rows(rows) => rows.clone(),
            PointsSpec::Scalars(xs) if dim == 1 => xs.iter().map(|&x| vec![x]).collect(),
            PointsSpec::Scalars(xs) => xs.chunks(dim).map(<[f64]>::to_vec).collect(),
            PointsSpec::Text(s) => parse_point_text(s, dim)?,
        };
        if rows.iter().any(|r| r.len() != dim) {
            return Err(CliError::Config(format!(
                "every point needs {dim} coordinates"
            )));
        }
        PointConfiguration::from_rows(&rows).map_err(|e| CliError::Config(e.to_string()))
    }
}

fn parse_numbers(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("not a number: {t:?}")))
        })
        .collect()
}

fn parse_point_text(s: &str, dim: usize) -> Result<Vec<Vec<f64>>, CliError> {
    if s.contains(';') {
        s.split(';')
            .filter(|p| !p.trim().is_empty())
            .map(parse_numbers)
            .collect()
    } else {
        let xs = parse_numbers(s)?;
        if xs.len() % dim != 0 {
            return Err(CliError::Config(format!(
                "{} numbers do not form {dim}-D points",
                xs.len()
            )));
        }
        Ok(xs.chunks(dim).map(<[f64]>::to_vec).collect())
    }
}

/// Disk-truncated Gaussian mixture read from a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub center: Vec<f64>,
    pub radius: f64,
    pub components: Vec<GaussianComponent>,
    #[serde(default)]
    pub resolution: Option<Vec<usize>>,
}

/// Every setting of one run. Absent fields take their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// `uniform:a,b`, `uniform:a,b,c,d`, `mixture:reference`, a `.pgm`
    /// image or a `.json` mixture file.
    pub density: Option<String>,
    /// Cells per axis for analytic densities.
    pub resolution: Option<Vec<usize>>,
    pub solver: Option<Solver>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub points: Option<PointsSpec>,
    /// Second cloud for the sliced solver; the density itself when absent.
    pub against: Option<PointsSpec>,
    pub max_iter: Option<usize>,
    pub step_tol: Option<f64>,
    pub mass_tol: Option<f64>,
    pub epsilon: Option<f64>,
    pub directions: Option<usize>,
    pub quadrature: Option<Quadrature>,
    pub check_descent: Option<bool>,
    pub trace: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub render: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Fill every field set in `flags`, keeping the rest.
    pub fn overridden_by(mut self, flags: RunConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => {$(if flags.$f.is_some() { self.$f = flags.$f; })*};
        }
        take!(
            density,
            resolution,
            solver,
            n,
            seed,
            points,
            against,
            max_iter,
            step_tol,
            mass_tol,
            epsilon,
            directions,
            quadrature,
            check_descent,
            trace,
            out,
            render
        );
        self
    }

    pub fn solver(&self) -> Solver {
        self.solver.unwrap_or_default()
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn quadrature(&self) -> Quadrature {
        self.quadrature.unwrap_or_default()
    }

    pub fn load_density(&self) -> Result<GridDensity, CliError> {
        let spec = self
            .density
            .as_deref()
            .ok_or_else(|| CliError::Config("no density source given (--density)".into()))?;
        load_density(spec, self.resolution.as_deref())
    }

    /// Explicit points, or `n` seeded samples from `d`.
    pub fn initial_points(&self, d: &GridDensity) -> Result<PointConfiguration, CliError> {
        let y = match &self.points {
            Some(p) => {
                let y = p.to_configuration(d.dim())?;
                if let Some(n) = self.n {
                    if n != y.len() {
                        return Err(CliError::Config(format!(
                            "--n {n} but {} points given",
                            y.len()
                        )));
                    }
                }
                y
            }
            None => {
                let n = self
                    .n
                    .ok_or_else(|| CliError::Config("give --n or --points".into()))?;
                if n == 0 {
                    return Err(CliError::Config("--n must be at least 1".into()));
                }
                sdquant::lloyd::sample_points(d, n, self.seed())
                    .map_err(|e| CliError::Config(e.to_string()))?
            }
        };
        Ok(y)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let positive = |name: &str, v: Option<f64>| match v {
            Some(x) if !(x > 0.0 && x.is_finite()) => Err(CliError::Config(format!(
                "{name} must be positive and finite"
            ))),
            _ => Ok(()),
        };
        positive("--mass-tol", self.mass_tol)?;
        positive("--epsilon", self.epsilon)?;
        if let Some(t) = self.step_tol {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(CliError::Config("--step-tol must be nonnegative".into()));
            }
        }
        if self.max_iter == Some(0) {
            return Err(CliError::Config("--max-iter must be at least 1".into()));
        }
        if self.directions == Some(0) {
            return Err(CliError::Config("--directions must be at least 1".into()));
        }
        Ok(())
    }
}

/// Build a density from a source string.
pub fn load_density(spec: &str, resolution: Option<&[usize]>) -> Result<GridDensity, CliError> {
    let config = |e: sdquant::Error| CliError::Config(format!("density {spec:?}: {e}"));
    if let Some(rest) = spec.strip_prefix("uniform:") {
        let bounds = parse_numbers(rest)?;
        if bounds.is_empty() || bounds.len() % 2 != 0 || bounds.len() > 4 {
            return Err(CliError::Config(format!(
                "uniform box needs lo,hi per axis, got {rest:?}"
            )));
        }
        let dim = bounds.len() / 2;
        let lo: Vec<f64> = bounds.iter().step_by(2).copied().collect();
        let hi: Vec<f64> = bounds.iter().skip(1).step_by(2).copied().collect();
        let res = resolution_for(resolution, dim)?;
        return build_uniform_box(&lo, &hi, &res).map_err(config);
    }
    if spec == "mixture:reference" {
        let res = resolution_for(resolution, 2)?;
        if res[0] != res[1] {
            return Err(CliError::Config(
                "the reference mixture needs a square grid".into(),
            ));
        }
        return reference_mixture(res[0]).map_err(config);
    }
    let path = Path::new(spec);
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => load_pgm(path).map_err(|e| match e {
            sdquant::Error::Io(io) => CliError::io(path, io),
            other => config(other),
        }),
        Some("json") => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let m: MixtureSpec = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{spec}: {e}")))?;
            let res = match resolution.or(m.resolution.as_deref()) {
                Some(r) => resolution_for(Some(r), m.center.len())?,
                None => resolution_for(None, m.center.len())?,
            };
            build_disk_mixture(&m.center, m.radius, &m.components, &res).map_err(config)
        }
        _ => Err(CliError::Config(format!(
            "unknown density source {spec:?}; expected uniform:…, mixture:reference, .pgm or .json"
        ))),
    }
}

fn resolution_for(resolution: Option<&[usize]>, dim: usize) -> Result<Vec<usize>, CliError> {
    match resolution {
        None => Ok(vec![if dim == 1 { 10_000 } else { 128 }; dim]),
        Some([r]) => Ok(vec![*r; dim]),
        Some(r) if r.len() == dim => Ok(r.to_vec()),
        Some(r) => Err(CliError::Config(format!(
            "resolution {r:?} does not match dimension {dim}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_text_forms() {
        let y = PointsSpec::Text("0.2,0.6".into())
            .to_configuration(1)
            .unwrap();
        assert_eq!(y.len(), 2);
        let y = PointsSpec::Text("0.1,0.2;0.3,0.4".into())
            .to_configuration(2)
            .unwrap();
        assert_eq!(y.point(1), &[0.3, 0.4]);
        assert!(PointsSpec::Text("0.1,0.2,0.3".into())
            .to_configuration(2)
            .is_err());
        assert!(PointsSpec::Text("a".into()).to_configuration(1).is_err());
    }

    #[test]
    fn flags_override_file_values() {
        let file: RunConfig =
            serde_json::from_str(r#"{"n": 3, "seed": 7, "solver": "uniform"}"#).unwrap();
        let flags = RunConfig {
            n: Some(5),
            ..Default::default()
        };
        let merged = file.overridden_by(flags);
        assert_eq!(merged.n, Some(5));
        assert_eq!(merged.seed, Some(7));
        assert_eq!(merged.solver(), Solver::Uniform);
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn density_sources() {
        let d = load_density("uniform:0,1", Some(&[100])).unwrap();
        assert_eq!(d.shape(), &[100]);
        let d = load_density("uniform:0,2,0,1", Some(&[4, 2])).unwrap();
        assert_eq!(d.shape(), &[4, 2]);
        assert!(load_density("uniform:0", None).is_err());
        assert!(load_density("nothing.txt", None).is_err());
        assert!(matches!(
            load_density("/nonexistent/x.pgm", None),
            Err(CliError::Io { .. })
        ));
    }
}
