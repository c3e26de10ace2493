//! Run configuration: strict TOML, every table mapped onto library types.
//!
//! ```toml
//! [operator]
//! preset = "laplacian"
//! scale = 1.0
//!
//! [domain]
//! kind = "interval"
//! a = 0.0
//! b = 1.0
//!
//! [measure]
//! density = "1"
//! atoms = [[0.5, 1.0]]
//!
//! [nonlinearity]
//! f = "-y^3"
//! ```

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Deserialize;

use crate::coeff::{MatrixField, ScalarField, VectorField};
use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::measures::{MeasureData, Nonlinearity};
use crate::operators::{DivergenceForm, FractionalLaplacian, OperatorSpec};
use crate::process::{HorizonPolicy, SimConfig};
use crate::solver::{MeasureTermMode, PicardConfig};

/// A coefficient given as a number or an expression in `x, x1..xd`.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum Coef {
    Num(f64),
    Expr(String),
}

impl Coef {
    fn field(&self, what: &str) -> Result<ScalarField> {
        match self {
            Coef::Num(v) => Ok(ScalarField::constant(*v)),
            Coef::Expr(src) => {
                let e = Expr::parse(src)?;
                if e.uses_value() {
                    return Err(Error::Config(format!("{what}: coefficient may not depend on y")));
                }
                Ok(ScalarField::from_expr(e))
            }
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OperatorTable {
    /// `scale·Δ`.
    Laplacian {
        #[serde(default = "one")]
        scale: f64,
    },
    Divergence {
        a: Vec<Vec<Coef>>,
        b: Option<Vec<Coef>>,
        c: Option<Coef>,
        d: Option<Vec<Coef>>,
    },
    Fractional {
        alpha: f64,
        #[serde(default = "one")]
        scale: f64,
        drift: Option<Vec<Coef>>,
    },
    Ou {
        a: Vec<Vec<f64>>,
        q: Vec<Vec<f64>>,
        lambda: f64,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DomainTable {
    Interval { a: f64, b: f64 },
    Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    FullSpace { dim: usize },
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureTable {
    pub density: Option<Coef>,
    /// Rows `[x1, .., xd, weight]`.
    #[serde(default)]
    pub atoms: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearityTable {
    pub f: Coef,
    #[serde(default)]
    pub declared_monotone: bool,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimTable {
    pub dt: Option<f64>,
    pub paths: Option<usize>,
    pub seed: Option<u64>,
    pub max_horizon: Option<f64>,
    pub horizon_policy: Option<HorizonPolicy>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardTable {
    pub tolerance: Option<f64>,
    pub max_iterations: Option<usize>,
    pub damping: Option<f64>,
    pub crn: Option<bool>,
    pub grid: Option<usize>,
    pub measure_term: Option<MeasureTermMode>,
    pub epsilon: Option<f64>,
    pub lattice_refine: Option<usize>,
    pub box_half_width: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyTable {
    /// Probe point of the pathwise checks; the domain centre when unset.
    pub x0: Option<Vec<f64>>,
    pub k_values: Option<Vec<f64>>,
    /// Amplitude of a hat bump added to the solution before the
    /// martingale check (negative control).
    pub corrupt_bump: Option<f64>,
    pub checkpoints: Option<Vec<f64>>,
    pub horizons: Option<Vec<f64>>,
    pub energy_tolerance: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputTable {
    pub dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub operator: OperatorTable,
    pub domain: DomainTable,
    #[serde(default)]
    pub measure: MeasureTable,
    pub nonlinearity: Option<NonlinearityTable>,
    #[serde(default)]
    pub sim: SimTable,
    #[serde(default)]
    pub picard: PicardTable,
    #[serde(default)]
    pub verify: VerifyTable,
    #[serde(default)]
    pub output: OutputTable,
}

/// Library-level problem assembled from a [`RunConfig`].
#[derive(Clone, Debug)]
pub struct Problem {
    pub spec: OperatorSpec,
    pub domain: Domain,
    pub mu: MeasureData,
    pub f: Nonlinearity,
    pub sim: SimConfig,
    pub picard: PicardConfig,
    pub verify: VerifyTable,
    pub out_dir: PathBuf,
}

fn vector(v: &[Coef], dim: usize, what: &str) -> Result<VectorField> {
    if v.len() != dim {
        return Err(Error::Config(format!("{what} needs {dim} components, got {}", v.len())));
    }
    Ok(VectorField(v.iter().map(|c| c.field(what)).collect::<Result<_>>()?))
}

fn dense(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Config(format!("{what} must be a non-empty square matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim().replace('\n', " ")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn domain(&self) -> Domain {
        match &self.domain {
            DomainTable::Interval { a, b } => Domain::Interval { a: *a, b: *b },
            DomainTable::Ball { center, radius } => {
                Domain::Ball { center: center.clone(), radius: *radius, dim: center.len() }
            }
            DomainTable::Box { lo, hi } => Domain::Box { lo: lo.clone(), hi: hi.clone() },
            DomainTable::FullSpace { dim } => Domain::FullSpace { dim: *dim },
        }
    }

    pub fn operator(&self, dim: usize) -> Result<OperatorSpec> {
        Ok(match &self.operator {
            OperatorTable::Laplacian { scale } => OperatorSpec::laplacian(dim, *scale),
            OperatorTable::Divergence { a, b, c, d } => {
                if a.len() != dim || a.iter().any(|r| r.len() != dim) {
                    return Err(Error::Config(format!("operator.a must be {dim}×{dim}")));
                }
                let entries = a.iter().flatten().map(|c| c.field("operator.a")).collect::<Result<_>>()?;
                let zero = VectorField::zero(dim);
                OperatorSpec::DivergenceForm(DivergenceForm {
                    a: MatrixField::new(dim, entries),
                    b: b.as_deref().map(|v| vector(v, dim, "operator.b")).transpose()?.unwrap_or_else(|| zero.clone()),
                    c: c.as_ref().map(|c| c.field("operator.c")).transpose()?.unwrap_or_else(ScalarField::zero),
                    d: d.as_deref().map(|v| vector(v, dim, "operator.d")).transpose()?.unwrap_or(zero),
                })
            }
            OperatorTable::Fractional { alpha, scale, drift } => OperatorSpec::FractionalLaplacian(FractionalLaplacian {
                dim,
                alpha: *alpha,
                scale: *scale,
                drift: drift.as_deref().map(|v| vector(v, dim, "operator.drift")).transpose()?,
            }),
            OperatorTable::Ou { a, q, lambda } => {
                let (a, q) = (dense(a, "operator.a")?, dense(q, "operator.q")?);
                if a.nrows() != dim || q.nrows() != dim {
                    return Err(Error::Config(format!("operator.a and operator.q must be {dim}×{dim}")));
                }
                OperatorSpec::ornstein_uhlenbeck(a, q, *lambda)
            }
        })
    }

    pub fn measure(&self, dim: usize) -> Result<MeasureData> {
        let mut mu = match &self.measure.density {
            None => MeasureData::zero(),
            Some(Coef::Num(v)) => MeasureData::constant_density(*v),
            Some(c) => MeasureData::from_density(c.field("measure.density")?),
        };
        for row in &self.measure.atoms {
            if row.len() != dim + 1 {
                return Err(Error::Config(format!("measure.atoms rows need {} entries (point, weight)", dim + 1)));
            }
            mu = mu.with_atom(row[..dim].to_vec(), row[dim]);
        }
        Ok(mu)
    }

    pub fn nonlinearity(&self) -> Result<Nonlinearity> {
        match &self.nonlinearity {
            None => Ok(Nonlinearity::zero()),
            Some(t) => match &t.f {
                Coef::Num(v) if *v == 0.0 => Ok(Nonlinearity::zero()),
                Coef::Num(v) => Nonlinearity::from_expr(&v.to_string(), t.declared_monotone),
                Coef::Expr(src) => Nonlinearity::from_expr(src, t.declared_monotone),
            },
        }
    }

    pub fn sim(&self) -> SimConfig {
        let s = &self.sim;
        SimConfig {
            dt: s.dt.unwrap_or(1e-3),
            max_horizon: s.max_horizon.unwrap_or(50.0),
            seed: s.seed.unwrap_or(0),
            paths: s.paths.unwrap_or(10_000),
            horizon_policy: s.horizon_policy.unwrap_or_default(),
        }
    }

    pub fn picard(&self) -> PicardConfig {
        let p = &self.picard;
        let d = PicardConfig::default();
        PicardConfig {
            tolerance: p.tolerance.unwrap_or(d.tolerance),
            max_iterations: p.max_iterations.unwrap_or(d.max_iterations),
            damping: p.damping.unwrap_or(d.damping),
            crn: p.crn.unwrap_or(d.crn),
            grid: p.grid.unwrap_or(d.grid),
            measure_term: p.measure_term.unwrap_or(d.measure_term),
            epsilon: p.epsilon.or(d.epsilon),
            lattice_refine: p.lattice_refine.unwrap_or(d.lattice_refine),
            box_half_width: p.box_half_width.or(d.box_half_width),
        }
    }

    /// Assemble and validate all module-level values.
    pub fn problem(&self) -> Result<Problem> {
        let domain = self.domain();
        domain.validate()?;
        let dim = domain.dim();
        let spec = self.operator(dim)?;
        let sim = self.sim();
        sim.validate()?;
        let picard = self.picard();
        picard.validate()?;
        let verify = self.verify.clone();
        if let Some(x0) = &verify.x0 {
            if x0.len() != dim {
                return Err(Error::Config(format!("verify.x0 needs {dim} coordinates")));
            }
        }
        Ok(Problem {
            mu: self.measure(dim)?,
            f: self.nonlinearity()?,
            spec,
            domain,
            sim,
            picard,
            verify,
            out_dir: self.output.dir.clone().unwrap_or_else(|| PathBuf::from("out")),
        })
    }
}

impl Problem {
    /// `verify.x0`, else the domain centre (origin on the full space).
    pub fn probe(&self) -> Vec<f64> {
        if let Some(x0) = &self.verify.x0 {
            return x0.clone();
        }
        match self.domain.bounding_box() {
            Some((lo, hi)) => lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect(),
            None => vec![0.0; self.domain.dim()],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINEAR: &str = r#"
        [operator]
        preset = "laplacian"
        [domain]
        kind = "interval"
        a = 0.0
        b = 1.0
        [measure]
        density = 1.0
        [sim]
        dt = 1e-3
        paths = 1000
        seed = 7
    "#;

    #[test]
    fn parses_linear_case() {
        let p = RunConfig::parse(LINEAR).unwrap().problem().unwrap();
        assert_eq!(p.domain, Domain::unit_interval());
        assert_eq!(p.mu.constant_value(), Some(1.0));
        assert!(p.f.is_zero());
        assert_eq!(p.sim.seed, 7);
        assert_eq!(p.picard.grid, 21);
        assert_eq!(p.probe(), vec![0.5]);
    }

    #[test]
    fn rejects_unknown_keys() {
        let bad = LINEAR.replace("seed = 7", "seed = 7\nsede = 8");
        assert!(matches!(RunConfig::parse(&bad), Err(Error::Config(_))));
        let bad = LINEAR.replace("b = 1.0", "b = 1.0\nradius = 2.0");
        assert!(RunConfig::parse(&bad).is_err());
        let bad = LINEAR.replace("[measure]", "[measures]");
        assert!(RunConfig::parse(&bad).is_err());
    }

    #[test]
    fn expressions_atoms_and_presets() {
        let text = r#"
            [operator]
            preset = "divergence"
            a = [["1 + x1^2", 0], [0, 1]]
            c = 0.5
            [domain]
            kind = "box"
            lo = [0.0, 0.0]
            hi = [1.0, 2.0]
            [measure]
            density = "sin(x1) * x2"
            atoms = [[0.5, 0.5, 2.0]]
            [nonlinearity]
            f = "-y^3 + sin(x1)"
            declared_monotone = true
        "#;
        let p = RunConfig::parse(text).unwrap().problem().unwrap();
        assert_eq!(p.spec.dim(), 2);
        assert_eq!(p.mu.atoms.len(), 1);
        assert!((p.mu.smooth_density(&[1.0, 2.0]) - 2.0 * 1f64.sin()).abs() < 1e-15);
        assert!((p.f.eval(&[0.0, 0.0], 2.0) + 8.0).abs() < 1e-15);
        let ou = r#"
            [operator]
            preset = "ou"
            a = [[-1.0]]
            q = [[2.0]]
            lambda = 1.0
            [domain]
            kind = "full-space"
            dim = 1
        "#;
        let p = RunConfig::parse(ou).unwrap().problem().unwrap();
        assert_eq!(p.spec.name(), "ou");
        assert!(p.mu.is_zero());
        let bad_atom = LINEAR.replace("density = 1.0", "atoms = [[0.5]]");
        assert!(RunConfig::parse(&bad_atom).unwrap().problem().is_err());
        let y_coef = LINEAR.replace("scale = 1.0", "").replace("preset = \"laplacian\"", "preset = \"divergence\"\na = [[\"1 + y\"]]");
        assert!(RunConfig::parse(&y_coef).unwrap().problem().is_err());
    }
}
