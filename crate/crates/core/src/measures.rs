//! Measure data `μ`, the nonlinearity `f`, truncation and mollification.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::coeff::ScalarField;
use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::quad::{self, ReferenceMeasure};
use rayon::prelude::*;

use crate::green::{kernel_for, potential_rmu};
use crate::operators::OperatorSpec;
use crate::process::{Dynamics, SimConfig};
use crate::rng::{derive_seed, halton, path_rng};
use crate::sum::Estimate;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Atom {
    pub point: Vec<f64>,
    pub weight: f64,
}

/// Tensor-product hat of half-width `eps` carrying mass `weight` with
/// respect to the reference measure, clipped to the domain.
#[derive(Clone, Debug)]
pub struct Bump {
    pub center: Vec<f64>,
    pub half_width: f64,
    pub weight: f64,
    lo: Vec<f64>,
    hi: Vec<f64>,
    ball: Option<(Vec<f64>, f64)>,
    norm: f64,
}

fn hat(t: f64, c: f64, eps: f64) -> f64 {
    (1.0 - (t - c).abs() / eps).max(0.0) / eps
}

fn hat_cdf(t: f64, c: f64, eps: f64) -> f64 {
    let s = ((t - c) / eps).clamp(-1.0, 1.0);
    if s < 0.0 {
        0.5 * (1.0 + s) * (1.0 + s)
    } else {
        1.0 - 0.5 * (1.0 - s) * (1.0 - s)
    }
}

impl Bump {
    pub fn new(center: Vec<f64>, half_width: f64, weight: f64, domain: &Domain, reference: &ReferenceMeasure) -> Result<Self> {
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::InvalidArgument(format!("mollification width must be > 0, got {half_width}")));
        }
        let d = center.len();
        let mut lo: Vec<f64> = center.iter().map(|c| c - half_width).collect();
        let mut hi: Vec<f64> = center.iter().map(|c| c + half_width).collect();
        if let Some((blo, bhi)) = domain.bounding_box() {
            for k in 0..d {
                lo[k] = lo[k].max(blo[k]);
                hi[k] = hi[k].min(bhi[k]);
            }
        }
        let ball = match domain {
            Domain::Ball { center: bc, radius, .. } => {
                let r: f64 = center.iter().zip(bc).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                (r + half_width * (d as f64).sqrt() > *radius).then(|| (bc.clone(), *radius))
            }
            _ => None,
        };
        let mut b = Bump { center, half_width, weight, lo, hi, ball, norm: 1.0 };
        b.norm = match (reference, &b.ball) {
            (ReferenceMeasure::Lebesgue, None) => {
                (0..d).map(|k| hat_cdf(b.hi[k], b.center[k], half_width) - hat_cdf(b.lo[k], b.center[k], half_width)).product()
            }
            _ => {
                let breaks: Vec<Vec<f64>> = b.center.iter().map(|&c| vec![c]).collect();
                let shape = |x: &[f64]| b.shape(x);
                match reference {
                    ReferenceMeasure::Lebesgue => quad::integrate_box(&b.lo, &b.hi, 16, &breaks, shape),
                    ReferenceMeasure::Gaussian { cov } => {
                        let dens = gaussian_density(cov)?;
                        quad::integrate_box(&b.lo, &b.hi, 16, &breaks, |x| shape(x) * dens(x))
                    }
                }
            }
        };
        if !(b.norm > 0.0) {
            return Err(Error::InvalidArgument("mollified atom has no mass inside the domain".into()));
        }
        Ok(b)
    }

    fn shape(&self, x: &[f64]) -> f64 {
        let mut v = 1.0;
        for k in 0..x.len() {
            if x[k] < self.lo[k] || x[k] > self.hi[k] {
                return 0.0;
            }
            v *= hat(x[k], self.center[k], self.half_width);
        }
        if let Some((c, r)) = &self.ball {
            let d2: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 >= r * r {
                return 0.0;
            }
        }
        v
    }

    /// Density with respect to the reference measure.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.weight * self.shape(x) / self.norm
    }

    pub fn support(&self) -> (&[f64], &[f64]) {
        (&self.lo, &self.hi)
    }

    fn overlaps(&self, other: &Bump) -> bool {
        (0..self.lo.len()).all(|k| self.lo[k] < other.hi[k] && other.lo[k] < self.hi[k])
    }
}

fn gaussian_density(cov: &nalgebra::DMatrix<f64>) -> Result<impl Fn(&[f64]) -> f64> {
    let d = cov.nrows();
    let chol = nalgebra::Cholesky::new(cov.clone())
        .ok_or_else(|| Error::InvalidArgument("Gaussian covariance is not positive definite".into()))?;
    let inv = chol.inverse();
    let det = chol.determinant();
    let c = ((2.0 * std::f64::consts::PI).powi(d as i32) * det).sqrt().recip();
    Ok(move |x: &[f64]| {
        let mut q = 0.0;
        for i in 0..d {
            for j in 0..d {
                q += x[i] * inv[(i, j)] * x[j];
            }
        }
        c * (-0.5 * q).exp()
    })
}

/// Signed measure `density·m + Σ bumps + Σ w_i δ_{p_i}`, where `m` is the
/// operator's reference measure.
#[derive(Clone, Debug, Default)]
pub struct MeasureData {
    pub density: Option<ScalarField>,
    pub bumps: Vec<Bump>,
    pub atoms: Vec<Atom>,
}

impl MeasureData {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_density(density: ScalarField) -> Self {
        Self { density: Some(density), ..Self::default() }
    }

    pub fn constant_density(c: f64) -> Self {
        Self::from_density(ScalarField::constant(c))
    }

    pub fn dirac(point: Vec<f64>, weight: f64) -> Self {
        Self { atoms: vec![Atom { point, weight }], ..Self::default() }
    }

    pub fn with_atom(mut self, point: Vec<f64>, weight: f64) -> Self {
        self.atoms.push(Atom { point, weight });
        self
    }

    pub fn has_atoms(&self) -> bool {
        !self.atoms.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.density.as_ref().is_none_or(|d| d.is_zero())
            && self.bumps.iter().all(|b| b.weight == 0.0)
            && self.atoms.iter().all(|a| a.weight == 0.0)
    }

    /// `Some(c)` when `μ = c·m`.
    pub fn constant_value(&self) -> Option<f64> {
        if !self.bumps.is_empty() || !self.atoms.is_empty() {
            return None;
        }
        match &self.density {
            None => Some(0.0),
            Some(d) => d.as_const(),
        }
    }

    /// Absolutely continuous part (density plus bumps) at `x`.
    pub fn smooth_density(&self, x: &[f64]) -> f64 {
        let mut v = self.density.as_ref().map_or(0.0, |d| d.eval(x));
        for b in &self.bumps {
            v += b.eval(x);
        }
        v
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            density: self.density.as_ref().map(|d| d.scaled(s)),
            bumps: self.bumps.iter().map(|b| Bump { weight: b.weight * s, ..b.clone() }).collect(),
            atoms: self.atoms.iter().map(|a| Atom { point: a.point.clone(), weight: a.weight * s }).collect(),
        }
    }

    pub fn plus(&self, other: &MeasureData) -> Self {
        let density = match (&self.density, &other.density) {
            (None, None) => None,
            (Some(a), None) => Some(a.clone()),
            (None, Some(b)) => Some(b.clone()),
            (Some(a), Some(b)) => match (a.as_const(), b.as_const()) {
                (Some(x), Some(y)) => Some(ScalarField::constant(x + y)),
                _ => {
                    let (a, b) = (a.clone(), b.clone());
                    Some(ScalarField::from_fn(move |x| a.eval(x) + b.eval(x)))
                }
            },
        };
        Self {
            density,
            bumps: self.bumps.iter().chain(&other.bumps).cloned().collect(),
            atoms: self.atoms.iter().chain(&other.atoms).cloned().collect(),
        }
    }

    fn bumps_disjoint(&self) -> bool {
        self.bumps
            .iter()
            .enumerate()
            .all(|(i, b)| self.bumps[i + 1..].iter().all(|c| !b.overlaps(c)))
    }

    /// The total-variation measure `|μ|`.
    pub fn abs(&self) -> Self {
        let atoms = self.atoms.iter().map(|a| Atom { point: a.point.clone(), weight: a.weight.abs() }).collect();
        if self.bumps_disjoint() && self.density.is_none() {
            return Self {
                density: None,
                bumps: self.bumps.iter().map(|b| Bump { weight: b.weight.abs(), ..b.clone() }).collect(),
                atoms,
            };
        }
        if self.bumps.is_empty() {
            let density = self.density.as_ref().map(|d| match d.as_const() {
                Some(c) => ScalarField::constant(c.abs()),
                None => {
                    let d = d.clone();
                    ScalarField::from_fn(move |x| d.eval(x).abs())
                }
            });
            return Self { density, bumps: Vec::new(), atoms };
        }
        let me = self.clone();
        Self {
            density: Some(ScalarField::from_fn(move |x| me.smooth_density(x).abs())),
            bumps: Vec::new(),
            atoms,
        }
    }

    /// Kink locations per axis, for quadrature breakpoints.
    pub fn breakpoints(&self, dim: usize) -> Vec<Vec<f64>> {
        let mut br = vec![Vec::new(); dim];
        for b in &self.bumps {
            for k in 0..dim {
                br[k].extend([b.center[k] - b.half_width, b.center[k], b.center[k] + b.half_width]);
            }
        }
        br
    }
}

/// Relative tolerance of the total-variation quadrature.
pub const TV_REL_TOL: f64 = 1e-3;

/// `∫|density| dm + Σ|weights|`.
pub fn total_variation(mu: &MeasureData, domain: &Domain, reference: &ReferenceMeasure) -> Result<f64> {
    let atoms: f64 = mu.atoms.iter().map(|a| a.weight.abs()).sum();
    if mu.density.is_none() && mu.bumps_disjoint() {
        return Ok(atoms + mu.bumps.iter().map(|b| b.weight.abs()).sum::<f64>());
    }
    if let Some(c) = mu.constant_value() {
        let mass = match reference {
            ReferenceMeasure::Gaussian { .. } => Some(1.0),
            ReferenceMeasure::Lebesgue => domain.volume(),
        };
        if let Some(m) = mass {
            return Ok(atoms + c.abs() * m);
        }
    }
    let breaks = mu.breakpoints(domain.dim());
    let ac = quad::integrate_adaptive(domain, reference, &breaks, TV_REL_TOL, |x| mu.smooth_density(x).abs())?;
    Ok(ac + atoms)
}

/// Truncation `T_c(y) = (-c) ∨ y ∧ c`.
pub fn truncate(c: f64, y: f64) -> f64 {
    debug_assert!(c >= 0.0);
    y.max(-c).min(c)
}

/// Replace every atom by a hat bump of half-width `eps` and equal mass
/// (clipped to the domain and renormalized).
pub fn mollify(mu: &MeasureData, eps: f64, domain: &Domain, reference: &ReferenceMeasure) -> Result<MeasureData> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("mollification width must be > 0, got {eps}")));
    }
    let mut out = MeasureData { density: mu.density.clone(), bumps: mu.bumps.clone(), atoms: Vec::new() };
    for a in &mu.atoms {
        if !domain.contains_closed(&a.point) {
            return Err(Error::InvalidArgument(format!("atom {:?} lies outside the domain", a.point)));
        }
        out.bumps.push(Bump::new(a.point.clone(), eps, a.weight, domain, reference)?);
    }
    Ok(out)
}

type NonlinearityFn = dyn Fn(&[f64], f64) -> f64 + Send + Sync;

/// Driver `f(x, y)` with a declared monotonicity flag.
#[derive(Clone)]
pub struct Nonlinearity {
    f: Arc<NonlinearityFn>,
    pub declared_monotone: bool,
    zero: bool,
    source: Option<String>,
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Nonlinearity")
            .field("source", &self.source)
            .field("declared_monotone", &self.declared_monotone)
            .finish()
    }
}

impl Nonlinearity {
    pub fn new(f: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static, declared_monotone: bool) -> Self {
        Self { f: Arc::new(f), declared_monotone, zero: false, source: None }
    }

    pub fn zero() -> Self {
        Self { f: Arc::new(|_, _| 0.0), declared_monotone: true, zero: true, source: Some("0".into()) }
    }

    /// `f(x, y) = slope·y`.
    pub fn linear(slope: f64) -> Self {
        let mut n = Self::new(move |_, y| slope * y, slope <= 0.0);
        n.zero = slope == 0.0;
        n
    }

    pub fn from_expr(src: &str, declared_monotone: bool) -> Result<Self> {
        let e = Expr::parse(src)?;
        let zero = e.as_constant() == Some(0.0);
        let mut n = Self::new(move |x, y| e.eval(x, y), declared_monotone);
        n.zero = zero;
        n.source = Some(src.to_string());
        Ok(n)
    }

    #[inline]
    pub fn eval(&self, x: &[f64], y: f64) -> f64 {
        (self.f)(x, y)
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }

    pub fn source(&self) -> Option<&str> {
        self.source.as_deref()
    }
}

pub const MONOTONE_Y_RANGE: f64 = 100.0;
pub const MONOTONE_TOL: f64 = 1e-12;

/// Quasi-random test of `(f(x,y₁) - f(x,y₂))(y₁ - y₂) ≤ 0`. A `true`
/// result is evidence, not proof.
pub fn check_monotone(f: &Nonlinearity, domain: &Domain, n_samples: usize) -> bool {
    let d = domain.dim();
    let pts = crate::operators::sample_points(domain, 64);
    if pts.is_empty() {
        return true;
    }
    (0..n_samples.max(100) as u64).all(|i| {
        let h = halton(i + 1, 3);
        let x = &pts[((h[0] * pts.len() as f64) as usize).min(pts.len() - 1)];
        debug_assert_eq!(x.len(), d);
        let y1 = MONOTONE_Y_RANGE * (2.0 * h[1] - 1.0);
        let y2 = MONOTONE_Y_RANGE * (2.0 * h[2] - 1.0);
        let (f1, f2) = (f.eval(x, y1), f.eval(x, y2));
        if !(f1.is_finite() && f2.is_finite()) {
            return false;
        }
        (f1 - f2) * (y1 - y2) <= MONOTONE_TOL * (1.0 + f1.abs() + f2.abs()) * (y1 - y2).abs()
    })
}

/// Values of `R|μ|` at probe points.
#[derive(Clone, Debug, Serialize)]
pub struct ClassRReport {
    pub probes: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Probes where the estimate kept growing under horizon extension.
    pub divergent: Vec<bool>,
    /// `None` when the total-variation quadrature diverges.
    pub total_variation: Option<f64>,
    pub tv_infinite: bool,
    pub method: &'static str,
    pub in_class: bool,
}

/// Estimate `R|μ|` at `probes`: exact kernel when one covers `|μ|`, else
/// Monte Carlo on the mollified `|μ|` at horizons `T/4`, `T/2`, `T`.
pub fn is_class_r(
    mu: &MeasureData,
    spec: &OperatorSpec,
    domain: &Domain,
    probes: &[Vec<f64>],
    sim: &SimConfig,
) -> Result<ClassRReport> {
    let reference = spec.reference_measure()?;
    let abs = mu.abs();
    let (total_variation, tv_infinite) = match total_variation(mu, domain, &reference) {
        Ok(v) if v.is_finite() => (Some(v), false),
        Ok(_) | Err(Error::QuadratureFailed(_)) => (None, true),
        Err(e) => return Err(e),
    };
    let n = probes.len();
    if abs.is_zero() {
        return Ok(ClassRReport {
            probes: probes.to_vec(),
            values: vec![0.0; n],
            stderr: vec![0.0; n],
            divergent: vec![false; n],
            total_variation,
            tv_infinite,
            method: "zero",
            in_class: true,
        });
    }
    if let Some(kernel) = kernel_for(spec, domain).filter(|k| k.supports(&abs)) {
        let mut values = Vec::with_capacity(n);
        let mut divergent = Vec::with_capacity(n);
        for p in probes {
            match potential_rmu(&kernel, &abs, p) {
                Ok(v) if v.is_finite() => {
                    values.push(v);
                    divergent.push(false);
                }
                Ok(_) | Err(Error::QuadratureFailed(_)) => {
                    values.push(f64::INFINITY);
                    divergent.push(true);
                }
                Err(e) => return Err(e),
            }
        }
        return Ok(ClassRReport {
            in_class: !divergent.iter().any(|d| *d),
            probes: probes.to_vec(),
            values,
            stderr: vec![0.0; n],
            divergent,
            total_variation,
            tv_infinite,
            method: "kernel",
        });
    }
    sim.validate()?;
    let smooth = if abs.has_atoms() { mollify(&abs, 2.0 * sim.dt.sqrt(), domain, &reference)? } else { abs };
    let dynamics = Dynamics::new(spec, domain, sim.dt)?;
    let horizon = sim.max_horizon;
    let marks = [0.25 * horizon, 0.5 * horizon, horizon];
    let mut values = Vec::with_capacity(n);
    let mut stderr = Vec::with_capacity(n);
    let mut divergent = Vec::with_capacity(n);
    for (pi, p) in probes.iter().enumerate() {
        let seed = derive_seed(sim.seed, pi as u64);
        let samples: Vec<[f64; 3]> = (0..sim.paths as u64)
            .into_par_iter()
            .map(|i| {
                let mut acc = [0.0; 3];
                dynamics.run(&mut path_rng(seed, i), p, horizon, |t, x, h| {
                    let g = smooth.smooth_density(x) * h;
                    for (a, m) in acc.iter_mut().zip(marks) {
                        if t < m {
                            *a += g;
                        }
                    }
                });
                acc
            })
            .collect();
        let est: Vec<Estimate> =
            (0..3).map(|j| Estimate::from_samples(&samples.iter().map(|s| s[j]).collect::<Vec<_>>())).collect();
        let diffs: Vec<Estimate> = (0..2)
            .map(|j| Estimate::from_samples(&samples.iter().map(|s| s[j + 1] - s[j]).collect::<Vec<_>>()))
            .collect();
        let growing = diffs[1].mean > 3.0 * diffs[1].stderr && diffs[1].mean >= 0.5 * diffs[0].mean;
        values.push(est[2].mean);
        stderr.push(est[2].stderr);
        divergent.push(growing || !est[2].mean.is_finite());
    }
    Ok(ClassRReport {
        in_class: !divergent.iter().any(|d| *d),
        probes: probes.to_vec(),
        values,
        stderr,
        divergent,
        total_variation,
        tv_infinite,
        method: "monte-carlo",
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn unit() -> Domain {
        Domain::unit_interval()
    }

    #[test]
    fn tv_of_atoms() {
        let mu = MeasureData::dirac(vec![0.5], 1.0).with_atom(vec![0.75], -2.0);
        assert_eq!(total_variation(&mu, &unit(), &ReferenceMeasure::Lebesgue).unwrap(), 3.0);
    }

    #[test]
    fn tv_of_unit_density() {
        let mu = MeasureData::constant_density(1.0);
        assert_eq!(total_variation(&mu, &unit(), &ReferenceMeasure::Lebesgue).unwrap(), 1.0);
    }

    #[test]
    fn tv_of_manufactured_source() {
        let mu = MeasureData::from_density(ScalarField::from_fn(|x| {
            let s = (PI * x[0]).sin();
            PI * PI * s + s * s * s
        }));
        let tv = total_variation(&mu, &unit(), &ReferenceMeasure::Lebesgue).unwrap();
        assert!((tv - (2.0 * PI + 4.0 / (3.0 * PI))).abs() < 1e-8, "{tv}");
    }

    #[test]
    fn tv_of_nonintegrable_density_fails() {
        let mu = MeasureData::from_density(ScalarField::from_fn(|x| 1.0 / x[0].min(1.0 - x[0])));
        let err = total_variation(&mu, &unit(), &ReferenceMeasure::Lebesgue).unwrap_err();
        assert!(err.to_string().contains("TV quadrature failed"));
    }

    #[test]
    fn truncation_examples() {
        assert_eq!(truncate(2.0, 3.0), 2.0);
        assert_eq!(truncate(2.0, -5.0), -2.0);
        assert_eq!(truncate(2.0, 1.0), 1.0);
    }

    #[test]
    fn mollified_dirac_keeps_mass() {
        let lebesgue = ReferenceMeasure::Lebesgue;
        let m = mollify(&MeasureData::dirac(vec![0.5], 1.0), 0.1, &unit(), &lebesgue).unwrap();
        assert!(m.atoms.is_empty());
        assert_eq!(m.bumps.len(), 1);
        assert!((m.smooth_density(&[0.5]) - 10.0).abs() < 1e-12);
        let mass = quad::integrate_box(&[0.0], &[1.0], 4, &m.breakpoints(1), |x| m.smooth_density(x));
        assert!((mass - 1.0).abs() < 1e-12);
        assert!((total_variation(&m, &unit(), &lebesgue).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mollify_two_atoms_and_empty() {
        let lebesgue = ReferenceMeasure::Lebesgue;
        let mu = MeasureData::dirac(vec![0.5], 1.0).with_atom(vec![0.75], -2.0);
        let m = mollify(&mu, 0.05, &unit(), &lebesgue).unwrap();
        assert_eq!(m.bumps.len(), 2);
        assert!((total_variation(&m, &unit(), &lebesgue).unwrap() - 3.0).abs() < 1e-12);
        let e = mollify(&MeasureData::zero(), 0.05, &unit(), &lebesgue).unwrap();
        assert!(e.is_zero() && e.bumps.is_empty());
        assert!(mollify(&mu, 0.0, &unit(), &lebesgue).is_err());
    }

    #[test]
    fn clipped_bump_is_renormalized() {
        let lebesgue = ReferenceMeasure::Lebesgue;
        let m = mollify(&MeasureData::dirac(vec![0.02], 1.0), 0.1, &unit(), &lebesgue).unwrap();
        let mass = quad::integrate_box(&[0.0], &[1.0], 4, &m.breakpoints(1), |x| m.smooth_density(x));
        assert!((mass - 1.0).abs() < 1e-12, "{mass}");
    }

    #[test]
    fn gaussian_reference_bump_mass() {
        let cov = nalgebra::DMatrix::from_element(1, 1, 0.5);
        let dens = gaussian_density(&cov).unwrap();
        let reference = ReferenceMeasure::Gaussian { cov };
        let m = mollify(&MeasureData::dirac(vec![0.3], 2.0), 0.2, &Domain::FullSpace { dim: 1 }, &reference).unwrap();
        let mass = quad::integrate_box(&[-1.0], &[1.0], 64, &m.breakpoints(1), |x| m.smooth_density(x) * dens(x));
        assert!((mass - 2.0).abs() < 1e-9, "{mass}");
    }

    #[test]
    fn monotonicity_examples() {
        let dom = unit();
        assert!(check_monotone(&Nonlinearity::new(|_, y| -y * y * y, true), &dom, 1000));
        assert!(!check_monotone(&Nonlinearity::new(|_, y| y, true), &dom, 1000));
        assert!(check_monotone(&Nonlinearity::new(|x, y| -y + x[0].sin(), true), &dom, 1000));
        assert!(check_monotone(&Nonlinearity::zero(), &dom, 100));
    }

    #[test]
    fn expression_nonlinearity() {
        let f = Nonlinearity::from_expr("-y^3", true).unwrap();
        assert_eq!(f.eval(&[0.3], 2.0), -8.0);
        assert!(!f.is_zero());
        assert!(Nonlinearity::from_expr("0", true).unwrap().is_zero());
    }

    #[test]
    fn class_r_reports() {
        let dom = Domain::unit_interval();
        let lap = OperatorSpec::laplacian(1, 1.0);
        let sim = SimConfig::new(1e-3, 4.0, 3, 2000);
        let probes = vec![vec![0.25], vec![0.5]];
        let rep = is_class_r(&MeasureData::constant_density(1.0), &lap, &dom, &probes, &sim).unwrap();
        assert!(rep.in_class && !rep.tv_infinite);
        assert!((rep.values[1] - 0.125).abs() < 1e-12);
        let rep = is_class_r(&MeasureData::zero(), &lap, &dom, &probes, &sim).unwrap();
        assert!(rep.in_class && rep.values.iter().all(|v| *v == 0.0));
        let sing = MeasureData::from_density(ScalarField::from_fn(|x| 1.0 / x[0].min(1.0 - x[0])));
        let rep = is_class_r(&sing, &lap, &dom, &probes, &sim).unwrap();
        assert!(rep.tv_infinite && rep.total_variation.is_none());
        assert!(rep.in_class);
        // G(½, y)/min(y, 1 − y) integrates to 2·∫₀^½ y/(2y) dy = ½
        assert!((rep.values[1] - 0.5).abs() < 1e-6, "{}", rep.values[1]);
    }

    #[test]
    fn class_r_by_simulation() {
        let dom = Domain::Box { lo: vec![0.0, 0.0], hi: vec![1.0, 1.0] };
        let lap = OperatorSpec::laplacian(2, 1.0);
        let sim = SimConfig::new(1e-3, 2.0, 5, 4000);
        let rep = is_class_r(&MeasureData::constant_density(1.0), &lap, &dom, &[vec![0.5, 0.5]], &sim).unwrap();
        assert_eq!(rep.method, "monte-carlo");
        assert!(rep.in_class);
        // torsion function of the unit square at its centre
        assert!((rep.values[0] - 0.0736713).abs() < 4.0 * rep.stderr[0] + 0.003, "{rep:?}");
    }
}
