//! Green kernels and potentials used as deterministic oracles: the exact
//! interval kernel of `s·d²/dx²`, the stable exit moment on balls, and
//! dense finite-difference inverses of `-L` for small grids.

use std::sync::Arc;

use nalgebra::DMatrix;
use statrs::function::gamma::gamma;

use crate::coeff::ScalarField;
use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::grid::UniformGrid;
use crate::measures::MeasureData;
use crate::operators::{DivergenceForm, OperatorSpec};
use crate::quad::{self, ReferenceMeasure};

#[derive(Clone, Debug)]
pub enum KernelSpec {
    /// Generator `s·d²/dx²` on `(a, b)`.
    IntervalLaplacian { a: f64, b: f64, scale: f64 },
    /// `scale·(-Δ)^{α/2}` on the ball of the given radius around `center`;
    /// only the potential of constant densities is available.
    StableExitMoment { alpha: f64, radius: f64, dim: usize, center: Vec<f64>, scale: f64 },
    FiniteDifference(Arc<FdKernel>),
    /// Kernel of the adjoint operator, `Ĝ(x, y) = G(y, x)`.
    AdjointOf(Box<KernelSpec>),
}

/// `G(x, y)` for `s·d²/dx²` on `(a, b)` with zero boundary values.
pub fn green_interval(a: f64, b: f64, scale: f64, x: f64, y: f64) -> Result<f64> {
    if !(a < x && x < b && a < y && y < b) {
        return Err(Error::InvalidArgument(format!("({x}, {y}) not inside ({a}, {b})")));
    }
    Ok(green_interval_closed(a, b, scale, x, y))
}

fn green_interval_closed(a: f64, b: f64, scale: f64, x: f64, y: f64) -> f64 {
    (x.min(y) - a) * (b - x.max(y)) / ((b - a) * scale)
}

/// `C_{d,α} = Γ(d/2) / (2^α Γ(1+α/2) Γ((d+α)/2))`.
pub fn stable_exit_constant(dim: usize, alpha: f64) -> f64 {
    let d = dim as f64;
    gamma(d / 2.0) / (2f64.powf(alpha) * gamma(1.0 + alpha / 2.0) * gamma((d + alpha) / 2.0))
}

/// `E_x τ = C_{d,α}(r² - |x|²)^{α/2}` for the symmetric α-stable process
/// with symbol `|ξ|^α` leaving the centered ball of radius `r`.
pub fn stable_exit_moment(alpha: f64, radius: f64, dim: usize, x: &[f64]) -> Result<f64> {
    let r2: f64 = x.iter().map(|v| v * v).sum();
    if x.len() != dim || r2 >= radius * radius {
        return Err(Error::InvalidArgument(format!("{x:?} is not inside the ball of radius {radius}")));
    }
    Ok(stable_exit_constant(dim, alpha) * (radius * radius - r2).powf(alpha / 2.0))
}

/// Exact kernel for the operator/domain pair, if one is shipped.
pub fn kernel_for(spec: &OperatorSpec, domain: &Domain) -> Option<KernelSpec> {
    match (spec, domain) {
        (OperatorSpec::DivergenceForm(op), Domain::Interval { a, b }) => {
            op.pure_scaled_laplacian().map(|s| KernelSpec::IntervalLaplacian { a: *a, b: *b, scale: s })
        }
        (OperatorSpec::FractionalLaplacian(op), _) if op.drift.is_none() => {
            let (center, radius) = match domain {
                Domain::Interval { a, b } => (vec![0.5 * (a + b)], 0.5 * (b - a)),
                Domain::Ball { center, radius, .. } => (center.clone(), *radius),
                _ => return None,
            };
            Some(KernelSpec::StableExitMoment { alpha: op.alpha, radius, dim: op.dim, center, scale: op.scale })
        }
        _ => None,
    }
}

const POTENTIAL_REL_TOL: f64 = 1e-11;

impl KernelSpec {
    pub fn is_symmetric(&self) -> bool {
        match self {
            KernelSpec::IntervalLaplacian { .. } | KernelSpec::StableExitMoment { .. } => true,
            KernelSpec::FiniteDifference(k) => k.symmetric,
            KernelSpec::AdjointOf(k) => k.is_symmetric(),
        }
    }

    pub fn domain(&self) -> Domain {
        match self {
            KernelSpec::IntervalLaplacian { a, b, .. } => Domain::interval(*a, *b),
            KernelSpec::StableExitMoment { radius, dim, center, .. } => {
                if *dim == 1 {
                    Domain::interval(center[0] - radius, center[0] + radius)
                } else {
                    Domain::Ball { center: center.clone(), radius: *radius, dim: *dim }
                }
            }
            KernelSpec::FiniteDifference(k) => k.domain.clone(),
            KernelSpec::AdjointOf(k) => k.domain(),
        }
    }

    /// Whether [`potential_rmu`] can evaluate `μ` exactly.
    pub fn supports(&self, mu: &MeasureData) -> bool {
        match self {
            KernelSpec::StableExitMoment { .. } => mu.constant_value().is_some(),
            KernelSpec::AdjointOf(k) => k.supports(mu),
            _ => true,
        }
    }
}

/// `Rμ(x) = ∫ G(x, y) μ(dy)`.
pub fn potential_rmu(kernel: &KernelSpec, mu: &MeasureData, x: &[f64]) -> Result<f64> {
    potential_impl(kernel, mu, x, false)
}

/// `Ĝφ(x) = ∫ G(y, x) φ(y) dy`.
pub fn copotential(kernel: &KernelSpec, phi: &ScalarField, x: &[f64]) -> Result<f64> {
    potential_impl(kernel, &MeasureData::from_density(phi.clone()), x, true)
}

/// `Ĝν(x) = ∫ G(y, x) ν(dy)` for a measure `ν`.
pub fn copotential_measure(kernel: &KernelSpec, nu: &MeasureData, x: &[f64]) -> Result<f64> {
    potential_impl(kernel, nu, x, true)
}

fn potential_impl(kernel: &KernelSpec, mu: &MeasureData, x: &[f64], adjoint: bool) -> Result<f64> {
    match kernel {
        KernelSpec::AdjointOf(inner) => potential_impl(inner, mu, x, !adjoint),
        KernelSpec::IntervalLaplacian { a, b, scale } => {
            let (a, b, s) = (*a, *b, *scale);
            if !(a < x[0] && x[0] < b) {
                return Err(Error::NotInterior(x.to_vec()));
            }
            let mut total: f64 = mu
                .atoms
                .iter()
                .map(|at| green_interval_closed(a, b, s, x[0], at.point[0].clamp(a, b)) * at.weight)
                .sum();
            if mu.density.is_some() || !mu.bumps.is_empty() {
                if let Some(c) = mu.constant_value() {
                    total += c * (x[0] - a) * (b - x[0]) / (2.0 * s);
                } else {
                    let mut breaks = mu.breakpoints(1);
                    breaks[0].push(x[0]);
                    let dom = Domain::interval(a, b);
                    total += quad::integrate_adaptive(&dom, &ReferenceMeasure::Lebesgue, &breaks, POTENTIAL_REL_TOL, |y| {
                        green_interval_closed(a, b, s, x[0], y[0]) * mu.smooth_density(y)
                    })?;
                }
            }
            Ok(total)
        }
        KernelSpec::StableExitMoment { alpha, radius, dim, center, scale } => {
            let c = mu.constant_value().ok_or_else(|| {
                Error::NoKernel("the stable exit moment only covers constant densities".into())
            })?;
            let y: Vec<f64> = x.iter().zip(center).map(|(a, b)| a - b).collect();
            Ok(c * stable_exit_moment(*alpha, *radius, *dim, &y)? / scale)
        }
        KernelSpec::FiniteDifference(k) => {
            let nodal = k.potential_nodes(&k.nodal_measure(mu), adjoint);
            Ok(k.interpolate(&nodal, x))
        }
    }
}

/// Dense inverse of the finite-difference matrix of `-L` with zero
/// exterior values, on a uniform grid over the domain's bounding box.
#[derive(Debug)]
pub struct FdKernel {
    pub grid: UniformGrid,
    pub domain: Domain,
    /// Grid index → unknown index for interior nodes.
    unknown: Vec<Option<usize>>,
    inverse: DMatrix<f64>,
    symmetric: bool,
}

impl FdKernel {
    pub fn new(op: &DivergenceForm, domain: &Domain, n: usize) -> Result<Self> {
        let d = domain.dim();
        if d > 2 {
            return Err(Error::Unsupported("dense finite-difference kernels are limited to d ≤ 2".into()));
        }
        let grid = UniformGrid::for_domain(domain, n)?;
        let mut unknown = vec![None; grid.len()];
        let mut count = 0;
        for (i, slot) in unknown.iter_mut().enumerate() {
            if !grid.on_box_boundary(i) && domain.contains(&grid.node(i)) {
                *slot = Some(count);
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::GridTooCoarse("no interior nodes".into()));
        }
        let mut m = DMatrix::<f64>::zeros(count, count);
        for i in 0..grid.len() {
            let Some(r) = unknown[i] else { continue };
            let x = grid.node(i);
            let diff = op.diffusion_matrix(&x);
            let drift = op.drift(&x);
            let mut add = |j: usize, v: f64| {
                if let Some(c) = unknown[j] {
                    m[(r, c)] -= v;
                }
            };
            add(i, -op.killing_rate(&x));
            for k in 0..d {
                let (s, h) = (grid.stride(k), grid.spacing(k));
                let dkk = diff[k * d + k] / (h * h);
                add(i + s, dkk + drift[k] / (2.0 * h));
                add(i - s, dkk - drift[k] / (2.0 * h));
                add(i, -2.0 * dkk);
                for l in (k + 1)..d {
                    let (t, hl) = (grid.stride(l), grid.spacing(l));
                    let c = (diff[k * d + l] + diff[l * d + k]) / (4.0 * h * hl);
                    add(i + s + t, c);
                    add(i - s - t, c);
                    add(i + s - t, -c);
                    add(i - s + t, -c);
                }
            }
        }
        let symmetric = (&m - m.transpose()).abs().max() <= 1e-12 * m.abs().max();
        let inverse = m
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::InvalidOperator("finite-difference operator is singular".into()))?;
        Ok(Self { grid, domain: domain.clone(), unknown, inverse, symmetric })
    }

    /// Cell masses of `μ` at the unknowns: density times cell volume plus
    /// atoms split by multilinear weights.
    pub fn nodal_measure(&self, mu: &MeasureData) -> Vec<f64> {
        let vol: f64 = (0..self.grid.dim()).map(|k| self.grid.spacing(k)).product();
        let mut out = vec![0.0; self.inverse.nrows()];
        for (i, slot) in self.unknown.iter().enumerate() {
            if let Some(r) = slot {
                out[*r] = mu.smooth_density(&self.grid.node(i)) * vol;
            }
        }
        for a in &mu.atoms {
            self.grid.for_each_corner(&a.point, |j, w| {
                if let Some(r) = self.unknown[j] {
                    out[r] += w * a.weight;
                }
            });
        }
        out
    }

    /// Values at every grid node (zero off the unknowns) of the discrete
    /// potential of the cell masses, or of the adjoint potential.
    pub fn potential_nodes(&self, masses: &[f64], adjoint: bool) -> Vec<f64> {
        let vol: f64 = (0..self.grid.dim()).map(|k| self.grid.spacing(k)).product();
        let v = nalgebra::DVector::from_column_slice(masses) / vol;
        let sol = if adjoint { self.inverse.tr_mul(&v) } else { &self.inverse * v };
        self.unknown.iter().map(|s| s.map_or(0.0, |r| sol[r])).collect()
    }

    pub fn interpolate(&self, nodal: &[f64], x: &[f64]) -> f64 {
        if !self.domain.contains_closed(x) {
            return 0.0;
        }
        let mut v = 0.0;
        self.grid.for_each_corner(x, |j, w| v += w * nodal[j]);
        v
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::VectorField;
    use crate::rng::halton;

    #[test]
    fn interval_kernel_values() {
        assert_eq!(green_interval(0.0, 1.0, 1.0, 0.25, 0.5).unwrap(), 0.125);
        assert_eq!(green_interval(0.0, 1.0, 0.5, 0.25, 0.5).unwrap(), 0.25);
        assert!(green_interval(0.0, 1.0, 1.0, 0.0, 0.5).is_err());
    }

    #[test]
    fn interval_kernel_symmetry() {
        for i in 0..100 {
            let h = halton(i, 2);
            let (x, y) = (0.001 + 0.998 * h[0], 0.001 + 0.998 * h[1]);
            assert_eq!(green_interval(0.0, 1.0, 1.0, x, y).unwrap(), green_interval(0.0, 1.0, 1.0, y, x).unwrap());
        }
    }

    #[test]
    fn potentials_on_interval() {
        let k = KernelSpec::IntervalLaplacian { a: 0.0, b: 1.0, scale: 1.0 };
        assert_eq!(potential_rmu(&k, &MeasureData::dirac(vec![0.5], 1.0), &[0.25]).unwrap(), 0.125);
        assert_eq!(potential_rmu(&k, &MeasureData::zero(), &[0.25]).unwrap(), 0.0);
        assert_eq!(potential_rmu(&k, &MeasureData::constant_density(1.0), &[0.5]).unwrap(), 0.125);
        let var = MeasureData::from_density(ScalarField::from_fn(|_| 1.0));
        assert!((potential_rmu(&k, &var, &[0.3]).unwrap() - 0.105).abs() < 1e-13);
        let one = ScalarField::constant(1.0);
        assert_eq!(
            copotential(&k, &one, &[0.3]).unwrap(),
            potential_rmu(&k, &MeasureData::constant_density(1.0), &[0.3]).unwrap()
        );
    }

    #[test]
    fn stable_moment_values() {
        assert!((stable_exit_moment(1.0, 1.0, 1, &[0.0]).unwrap() - 1.0).abs() < 1e-14);
        assert!((stable_exit_moment(1.0, 1.0, 1, &[0.6]).unwrap() - 0.8).abs() < 1e-14);
        assert!((stable_exit_constant(1, 1.999_999) - 0.5).abs() < 1e-5);
        assert!(stable_exit_moment(1.0, 1.0, 1, &[1.0]).is_err());
    }

    #[test]
    fn fd_kernel_matches_interval_kernel() {
        let op = DivergenceForm::laplacian(1, 1.0);
        let fd = FdKernel::new(&op, &Domain::unit_interval(), 201).unwrap();
        assert!(fd.is_symmetric());
        let k = KernelSpec::FiniteDifference(Arc::new(fd));
        let v = potential_rmu(&k, &MeasureData::dirac(vec![0.5], 1.0), &[0.25]).unwrap();
        assert!((v - 0.125).abs() < 1e-3, "{v}");
    }

    #[test]
    fn drift_breaks_adjoint_symmetry() {
        let mut op = DivergenceForm::laplacian(1, 1.0);
        op.b = VectorField(vec![ScalarField::constant(-3.0)]);
        let fd = Arc::new(FdKernel::new(&op, &Domain::unit_interval(), 200).unwrap());
        assert!(!fd.is_symmetric());
        let ones = fd.nodal_measure(&MeasureData::constant_density(1.0));
        let r1 = fd.potential_nodes(&ones, false);
        let g1 = fd.potential_nodes(&ones, true);
        let diff: Vec<f64> = r1.iter().zip(&g1).map(|(a, b)| a - b).collect();
        assert!(diff.iter().any(|v| *v > 1e-3) && diff.iter().any(|v| *v < -1e-3));
        let net: f64 = diff.iter().sum();
        assert!(net.abs() < 1e-10 * r1.iter().map(|v| v.abs()).sum::<f64>());
    }
}
