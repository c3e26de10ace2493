//! Operators `L`, their structural validation, and discrete quadratic forms.
//!
//! Normalization: `DivergenceForm` stores the raw coefficient `a` of
//! `Lu = ∂_i(a_ij ∂_j u) - b·∇u + ∂_i(d_i u) - c u`, so `a = ½·I` is the
//! generator `½Δ` and `a = I` is `Δ`. The diffusion matrix of the
//! generator (coefficient of the second derivatives) is the symmetric part
//! `ã`; for the Ornstein–Uhlenbeck operator
//! `Lu = ½ tr(Q ∇²u) + ⟨Ax, ∇u⟩` it is `½Q`.

use nalgebra::DMatrix;
use serde::Serialize;
use statrs::function::gamma::gamma;

use crate::coeff::{MatrixField, ScalarField, VectorField};
use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::grid::SolutionField;
use crate::quad::ReferenceMeasure;
use crate::rng::halton;

#[derive(Clone, Debug)]
pub struct DivergenceForm {
    pub a: MatrixField,
    pub b: VectorField,
    pub c: ScalarField,
    pub d: VectorField,
}

impl DivergenceForm {
    /// `L = scale·Δ` in `dim` dimensions.
    pub fn laplacian(dim: usize, scale: f64) -> Self {
        Self {
            a: MatrixField::scaled_identity(dim, scale),
            b: VectorField::zero(dim),
            c: ScalarField::zero(),
            d: VectorField::zero(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.a.dim
    }

    /// Symmetric part `ã(x)`, row-major.
    pub fn diffusion_matrix(&self, x: &[f64]) -> Vec<f64> {
        self.a.symmetric_part(x)
    }

    /// First-order coefficient of the non-divergence form of `L`:
    /// `Σ_i ∂_i a_ij - b_j + d_j`.
    pub fn drift(&self, x: &[f64]) -> Vec<f64> {
        let mut v = self.a.column_divergence(x);
        for (j, vj) in v.iter_mut().enumerate() {
            *vj += self.d.0[j].eval(x) - self.b.0[j].eval(x);
        }
        v
    }

    /// Zero-order killing rate `c - div d`.
    pub fn killing_rate(&self, x: &[f64]) -> f64 {
        self.c.eval(x) - self.d.divergence(x)
    }

    /// `a = s·I` with `b = c = d = 0`: returns `s`.
    pub fn pure_scaled_laplacian(&self) -> Option<f64> {
        if !(self.b.is_zero() && self.c.is_zero() && self.d.is_zero() && self.a.is_constant()) {
            return None;
        }
        let n = self.dim();
        let s = self.a.entry(0, 0).as_const()?;
        for i in 0..n {
            for j in 0..n {
                let v = self.a.entry(i, j).as_const()?;
                if (i == j && v != s) || (i != j && v != 0.0) {
                    return None;
                }
            }
        }
        Some(s)
    }
}

#[derive(Clone, Debug)]
pub struct FractionalLaplacian {
    pub dim: usize,
    /// Stability index in `(0, 2)`.
    pub alpha: f64,
    /// Symbol `scale·|ξ|^α`.
    pub scale: f64,
    pub drift: Option<VectorField>,
}

#[derive(Clone, Debug)]
pub struct OrnsteinUhlenbeck {
    pub a: DMatrix<f64>,
    pub q: DMatrix<f64>,
    /// Killing rate of the `-Lu + λu` problem.
    pub lambda: f64,
}

impl OrnsteinUhlenbeck {
    /// Invariant covariance: solves `A Q∞ + Q∞ Aᵀ = -Q`.
    pub fn invariant_covariance(&self) -> Result<DMatrix<f64>> {
        let d = self.a.nrows();
        let id = DMatrix::<f64>::identity(d, d);
        // vec(AX + XAᵀ) = (I⊗A + A⊗I) vec(X), column-major vec.
        let k = id.kronecker(&self.a) + self.a.kronecker(&id);
        let rhs = DMatrix::from_iterator(d * d, 1, self.q.iter().map(|v| -v));
        let sol = k
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::InvalidOperator("Lyapunov equation is singular".into()))?;
        let x = DMatrix::from_column_slice(d, d, sol.as_slice());
        Ok((&x + x.transpose()) * 0.5)
    }
}

#[derive(Clone, Debug)]
pub enum OperatorSpec {
    DivergenceForm(DivergenceForm),
    FractionalLaplacian(FractionalLaplacian),
    OrnsteinUhlenbeck(OrnsteinUhlenbeck),
}

impl OperatorSpec {
    pub fn laplacian(dim: usize, scale: f64) -> Self {
        OperatorSpec::DivergenceForm(DivergenceForm::laplacian(dim, scale))
    }

    pub fn fractional(dim: usize, alpha: f64, scale: f64) -> Self {
        OperatorSpec::FractionalLaplacian(FractionalLaplacian { dim, alpha, scale, drift: None })
    }

    pub fn ornstein_uhlenbeck(a: DMatrix<f64>, q: DMatrix<f64>, lambda: f64) -> Self {
        OperatorSpec::OrnsteinUhlenbeck(OrnsteinUhlenbeck { a, q, lambda })
    }

    pub fn dim(&self) -> usize {
        match self {
            OperatorSpec::DivergenceForm(op) => op.dim(),
            OperatorSpec::FractionalLaplacian(op) => op.dim,
            OperatorSpec::OrnsteinUhlenbeck(op) => op.a.nrows(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OperatorSpec::DivergenceForm(_) => "divergence",
            OperatorSpec::FractionalLaplacian(_) => "fractional",
            OperatorSpec::OrnsteinUhlenbeck(_) => "ou",
        }
    }

    /// Coefficient of the second derivatives of the generator (`ã` or
    /// `½Q`); `None` for nonlocal operators.
    pub fn generator_diffusion_matrix(&self, x: &[f64]) -> Option<Vec<f64>> {
        match self {
            OperatorSpec::DivergenceForm(op) => Some(op.diffusion_matrix(x)),
            OperatorSpec::OrnsteinUhlenbeck(op) => Some(op.q.transpose().iter().map(|v| 0.5 * v).collect()),
            OperatorSpec::FractionalLaplacian(_) => None,
        }
    }

    /// Measure `m` with respect to which densities are given.
    pub fn reference_measure(&self) -> Result<ReferenceMeasure> {
        match self {
            OperatorSpec::OrnsteinUhlenbeck(op) => Ok(ReferenceMeasure::Gaussian {
                cov: op.invariant_covariance()?,
            }),
            _ => Ok(ReferenceMeasure::Lebesgue),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub rule: String,
    pub message: String,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
    pub ellipticity_lambda: Option<f64>,
    pub antisymmetric_bound: Option<f64>,
    pub stability_margin: Option<f64>,
    pub notes: Vec<String>,
}

impl ValidationReport {
    fn push(&mut self, rule: &str, message: impl Into<String>) {
        self.violations.push(Violation { rule: rule.to_string(), message: message.into() });
    }

    pub fn has(&self, rule: &str) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }
}

pub const ELLIPTICITY_POINTS: usize = 64;
pub const ELLIPTICITY_DIRECTIONS: usize = 16;

/// Deterministic sample of points in the domain (a unit box around the
/// origin for the full space).
pub fn sample_points(domain: &Domain, count: usize) -> Vec<Vec<f64>> {
    let d = domain.dim();
    let (lo, hi) = domain
        .bounding_box()
        .unwrap_or_else(|| (vec![-1.0; d], vec![1.0; d]));
    let mut pts = Vec::with_capacity(count);
    let mut i = 0u64;
    while pts.len() < count && i < 100 * count as u64 {
        let u = halton(i, d);
        let x: Vec<f64> = (0..d).map(|k| lo[k] + (hi[k] - lo[k]) * (0.01 + 0.98 * u[k])).collect();
        if domain.contains(&x) {
            pts.push(x);
        }
        i += 1;
    }
    pts
}

fn unit_directions(dim: usize, count: usize) -> Vec<Vec<f64>> {
    match dim {
        1 => vec![vec![1.0]],
        2 => (0..count)
            .map(|k| {
                let t = std::f64::consts::PI * k as f64 / count as f64;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        _ => {
            let mut dirs: Vec<Vec<f64>> = (0..dim)
                .map(|k| {
                    let mut e = vec![0.0; dim];
                    e[k] = 1.0;
                    e
                })
                .collect();
            let mut i = 0;
            while dirs.len() < count.max(dim) {
                let v: Vec<f64> = halton(i, dim).iter().map(|u| 2.0 * u - 1.0).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n > 0.1 {
                    dirs.push(v.iter().map(|x| x / n).collect());
                }
                i += 1;
            }
            dirs
        }
    }
}

/// Collect every violated structural condition; never fails.
pub fn validate(spec: &OperatorSpec, domain: &Domain) -> ValidationReport {
    let mut rep = ValidationReport::default();
    if let Err(e) = domain.validate() {
        rep.push("domain.invalid", e.to_string());
    }
    if spec.dim() != domain.dim() {
        rep.push(
            "domain.dimension",
            format!("operator dimension {} differs from domain dimension {}", spec.dim(), domain.dim()),
        );
    }
    if !rep.violations.is_empty() {
        rep.ok = false;
        return rep;
    }
    match spec {
        OperatorSpec::DivergenceForm(op) => validate_divergence(op, domain, &mut rep),
        OperatorSpec::FractionalLaplacian(op) => validate_fractional(op, domain, &mut rep),
        OperatorSpec::OrnsteinUhlenbeck(op) => validate_ou(op, domain, &mut rep),
    }
    rep.ok = rep.violations.is_empty();
    rep
}

fn validate_divergence(op: &DivergenceForm, domain: &Domain, rep: &mut ValidationReport) {
    let d = op.dim();
    if op.b.dim() != d || op.d.dim() != d {
        rep.push("divergence.shape", "b and d must have one component per dimension");
        return;
    }
    if !domain.is_bounded() {
        rep.push("divergence.domain", "divergence-form operators need a bounded domain");
    }
    let pts = sample_points(domain, ELLIPTICITY_POINTS);
    let dirs = unit_directions(d, ELLIPTICITY_DIRECTIONS);
    let mut lambda = f64::INFINITY;
    let mut m_bound: f64 = 0.0;
    let mut worst_zero_order = f64::INFINITY;
    for x in &pts {
        let s = op.diffusion_matrix(x);
        for xi in &dirs {
            let mut q = 0.0;
            for i in 0..d {
                for j in 0..d {
                    q += s[i * d + j] * xi[i] * xi[j];
                }
            }
            lambda = lambda.min(q);
        }
        for v in op.a.antisymmetric_part(x) {
            m_bound = m_bound.max(v.abs());
        }
        let c = op.c.eval(x);
        worst_zero_order = worst_zero_order.min(c - op.b.divergence(x)).min(c - op.d.divergence(x));
    }
    if !(lambda > 0.0) {
        rep.push("divergence.elliptic", format!("not elliptic: sampled min ξᵀãξ = {lambda:.3e}"));
    }
    if !m_bound.is_finite() {
        rep.push("divergence.antisymmetric", "antisymmetric part of a is unbounded on samples");
    }
    if worst_zero_order < -1e-8 {
        rep.push(
            "divergence.zero-order",
            format!("c - div b and c - div d must be ≥ 0; sampled minimum {worst_zero_order:.3e}"),
        );
    }
    rep.ellipticity_lambda = Some(lambda);
    rep.antisymmetric_bound = Some(m_bound);
    if m_bound > 0.0 || !op.b.is_zero() || !op.d.is_zero() {
        rep.notes.push("non-symmetric form: sector condition assumed, not verified numerically".into());
    }
}

fn validate_fractional(op: &FractionalLaplacian, domain: &Domain, rep: &mut ValidationReport) {
    if !(op.alpha > 0.0 && op.alpha < 2.0) {
        rep.push("fractional.alpha", format!("alpha must lie in (0, 2), got {}", op.alpha));
    }
    if !(op.scale > 0.0 && op.scale.is_finite()) {
        rep.push("fractional.scale", format!("scale must be > 0, got {}", op.scale));
    }
    if let Some(b) = &op.drift {
        if b.dim() != op.dim {
            rep.push("fractional.drift-shape", "drift must have one component per dimension");
            return;
        }
        if op.alpha <= 1.0 {
            rep.push("fractional.drift-alpha", format!("a drift requires alpha in (1, 2), got {}", op.alpha));
        }
        let pts = sample_points(domain, ELLIPTICITY_POINTS);
        let mut worst: f64 = 0.0;
        let mut sup: f64 = 0.0;
        for x in &pts {
            worst = worst.max(b.divergence(x).abs());
            sup = b.eval(x).iter().fold(sup, |m, v| m.max(v.abs()));
        }
        if worst > 1e-6 {
            rep.push("fractional.drift-divergence", format!("drift must be divergence-free; sampled |div b| up to {worst:.3e}"));
        }
        if !sup.is_finite() {
            rep.push("fractional.drift-bounded", "drift is not bounded on samples");
        }
    }
}

fn validate_ou(op: &OrnsteinUhlenbeck, domain: &Domain, rep: &mut ValidationReport) {
    let d = op.a.nrows();
    if op.a.ncols() != d || op.q.nrows() != d || op.q.ncols() != d {
        rep.push("ou.shape", "A and Q must be square with the domain dimension");
        return;
    }
    if !matches!(domain, Domain::FullSpace { .. }) {
        rep.push("ou.domain", "the Ornstein–Uhlenbeck preset lives on the full space");
    }
    let eig = op.a.complex_eigenvalues();
    let max_re = eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    let margin = -max_re;
    rep.stability_margin = Some(margin);
    if !(margin > 0.0) {
        rep.push("ou.stability", format!("A must have spectrum in the open left half-plane; max Re λ = {max_re:.3e}"));
    }
    let asym = (&op.q - op.q.transpose()).abs().max();
    if asym > 1e-12 * (1.0 + op.q.abs().max()) {
        rep.push("ou.q-symmetric", "Q must be symmetric");
    } else if nalgebra::Cholesky::new(op.q.clone()).is_none() {
        rep.push("ou.q-positive", "Q must be positive definite");
    }
    if !(op.lambda > 0.0) {
        rep.push("ou.lambda", format!("the solver requires lambda > 0, got {}", op.lambda));
    }
}

/// Normalization constant `c_{d,α}` of `(-Δ)^{α/2}` as a singular integral.
pub fn fractional_constant(dim: usize, alpha: f64) -> f64 {
    let d = dim as f64;
    alpha * 2f64.powf(alpha - 1.0) * gamma((d + alpha) / 2.0)
        / (std::f64::consts::PI.powf(d / 2.0) * gamma(1.0 - alpha / 2.0))
}

/// Finite-difference gradients at every node: central inside the grid
/// box, one-sided on its faces.
fn nodal_gradients(u: &SolutionField) -> Vec<Vec<f64>> {
    let g = &u.grid;
    let d = g.dim();
    (0..g.len())
        .map(|i| {
            let m = g.multi_index(i);
            (0..d)
                .map(|k| {
                    let s = g.stride(k);
                    let h = g.spacing(k);
                    if m[k] == 0 {
                        (u.values[i + s] - u.values[i]) / h
                    } else if m[k] + 1 == g.n[k] {
                        (u.values[i] - u.values[i - s]) / h
                    } else {
                        (u.values[i + s] - u.values[i - s]) / (2.0 * h)
                    }
                })
                .collect()
        })
        .collect()
}

fn trapezoid_weight(u: &SolutionField, i: usize) -> f64 {
    let g = &u.grid;
    g.multi_index(i)
        .iter()
        .enumerate()
        .map(|(k, &mk)| {
            let h = g.spacing(k);
            if mk == 0 || mk + 1 == g.n[k] {
                0.5 * h
            } else {
                h
            }
        })
        .product()
}

fn check_energy_grid(u: &SolutionField) -> Result<()> {
    if !u.domain.is_bounded() {
        return Err(Error::Unsupported("discrete energy needs a bounded domain".into()));
    }
    let interior = u.interior_nodes().len();
    if interior < 3 {
        return Err(Error::GridTooCoarse(format!("{interior} interior nodes, need at least 3")));
    }
    Ok(())
}

/// Discrete quadratic form `𝓔(u, u)`.
pub fn dirichlet_energy(spec: &OperatorSpec, u: &SolutionField) -> Result<f64> {
    check_energy_grid(u)?;
    if spec.dim() != u.dim() {
        return Err(Error::InvalidArgument("operator and field dimensions differ".into()));
    }
    match spec {
        OperatorSpec::DivergenceForm(op) => Ok(local_energy(op, u)),
        OperatorSpec::FractionalLaplacian(op) => Ok(nonlocal_energy(op, u)),
        OperatorSpec::OrnsteinUhlenbeck(_) => Err(Error::Unsupported(
            "no discrete energy for the Ornstein–Uhlenbeck form".into(),
        )),
    }
}

fn local_energy(op: &DivergenceForm, u: &SolutionField) -> f64 {
    let d = op.dim();
    let grads = nodal_gradients(u);
    let terms: Vec<f64> = (0..u.grid.len())
        .map(|i| {
            let x = u.grid.node(i);
            let g = &grads[i];
            let s = op.diffusion_matrix(&x);
            let mut q = 0.0;
            for a in 0..d {
                for b in 0..d {
                    q += s[a * d + b] * g[a] * g[b];
                }
            }
            let ui = u.values[i];
            trapezoid_weight(u, i) * (q + op.c.eval(&x) * ui * ui)
        })
        .collect();
    crate::sum::pairwise_sum(&terms)
}

fn nonlocal_energy(op: &FractionalLaplacian, u: &SolutionField) -> f64 {
    let alpha = op.alpha;
    let cst = op.scale * fractional_constant(op.dim, alpha);
    let g = &u.grid;
    let d = g.dim();
    let vol: f64 = (0..d).map(|k| g.spacing(k)).product();
    let nodes = g.nodes();
    let n = nodes.len();
    let kern = |x: &[f64], y: &[f64]| -> f64 {
        let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        r2.powf(-(d as f64 + alpha) / 2.0)
    };
    // Pairs inside the grid's cell cover.
    let mut pair_terms = Vec::with_capacity(n);
    for i in 0..n {
        let mut s = 0.0;
        for j in (i + 1)..n {
            let du = u.values[i] - u.values[j];
            if du != 0.0 {
                s += du * du * kern(&nodes[i], &nodes[j]);
            }
        }
        pair_terms.push(s);
    }
    let inner = cst * crate::sum::pairwise_sum(&pair_terms) * vol * vol;
    // Interaction with the exterior of the cell cover, where u = 0.
    let exterior: Vec<f64> = (0..n)
        .filter(|&i| u.values[i] != 0.0)
        .map(|i| u.values[i] * u.values[i] * exterior_kernel(g, &nodes[i], alpha) * vol)
        .collect();
    let outer = cst * crate::sum::pairwise_sum(&exterior);
    // Self-cell contribution, from the local gradient (1-d only).
    let diag = if d == 1 {
        let h = g.spacing(0);
        let grads = nodal_gradients(u);
        let cell = 2.0 * h.powf(3.0 - alpha) / ((2.0 - alpha) * (3.0 - alpha));
        let t: Vec<f64> = grads.iter().map(|gr| gr[0] * gr[0] * cell).collect();
        0.5 * cst * crate::sum::pairwise_sum(&t)
    } else {
        0.0
    };
    inner + outer + diag
}

/// `∫_{y ∉ C} |x - y|^{-d-α} dy` where `C` is the union of grid cells.
fn exterior_kernel(g: &crate::grid::UniformGrid, x: &[f64], alpha: f64) -> f64 {
    let d = g.dim();
    if d == 1 {
        let h = g.spacing(0);
        let l = x[0] - (g.lo[0] - 0.5 * h);
        let r = (g.hi[0] + 0.5 * h) - x[0];
        return (l.powf(-alpha) + r.powf(-alpha)) / alpha;
    }
    // Zero-padded ring of one box width, then an isotropic far-field tail.
    let width: Vec<f64> = (0..d).map(|k| g.hi[k] - g.lo[k]).collect();
    let hs: Vec<f64> = (0..d).map(|k| g.spacing(k)).collect();
    let pad: Vec<usize> = (0..d).map(|k| (width[k] / hs[k]).ceil() as usize).collect();
    let vol: f64 = hs.iter().product();
    let counts: Vec<usize> = (0..d).map(|k| g.n[k] + 2 * pad[k]).collect();
    let total: usize = counts.iter().product();
    let mut s = 0.0;
    for idx in 0..total {
        let mut rem = idx;
        let mut inside = true;
        let mut r2 = 0.0;
        for k in 0..d {
            let m = rem % counts[k];
            rem /= counts[k];
            let mi = m as isize - pad[k] as isize;
            if mi < 0 || mi >= g.n[k] as isize {
                inside = false;
            }
            let y = g.lo[k] + mi as f64 * hs[k];
            r2 += (x[k] - y) * (x[k] - y);
        }
        if !inside {
            s += r2.powf(-(d as f64 + alpha) / 2.0) * vol;
        }
    }
    let reach = (0..d)
        .map(|k| (x[k] - (g.lo[k] - (pad[k] as f64 + 0.5) * hs[k])).min(g.hi[k] + (pad[k] as f64 + 0.5) * hs[k] - x[k]))
        .fold(f64::INFINITY, f64::min);
    let dd = d as f64;
    let sphere = 2.0 * std::f64::consts::PI.powf(dd / 2.0) / gamma(dd / 2.0);
    s + sphere * reach.powf(-alpha) / alpha
}

/// Discrete bilinear form `𝓔(u, v)` for local operators.
pub fn bilinear_form(spec: &OperatorSpec, u: &SolutionField, v: &SolutionField) -> Result<f64> {
    check_energy_grid(u)?;
    if u.grid != v.grid {
        return Err(Error::InvalidArgument("fields must share a grid".into()));
    }
    let op = match spec {
        OperatorSpec::DivergenceForm(op) => op,
        _ => return Err(Error::Unsupported("bilinear form is implemented for divergence-form operators".into())),
    };
    let d = op.dim();
    let gu = nodal_gradients(u);
    let gv = nodal_gradients(v);
    let mut a = vec![0.0; d * d];
    let terms: Vec<f64> = (0..u.grid.len())
        .map(|i| {
            let x = u.grid.node(i);
            op.a.eval_into(&x, &mut a);
            let mut q = 0.0;
            for r in 0..d {
                for c in 0..d {
                    q += a[r * d + c] * gu[i][c] * gv[i][r];
                }
            }
            let bu: f64 = (0..d).map(|k| op.b.0[k].eval(&x) * gu[i][k]).sum();
            let dv: f64 = (0..d).map(|k| op.d.0[k].eval(&x) * gv[i][k]).sum();
            let (ui, vi) = (u.values[i], v.values[i]);
            trapezoid_weight(u, i) * (q + bu * vi + dv * ui + op.c.eval(&x) * ui * vi)
        })
        .collect();
    Ok(crate::sum::pairwise_sum(&terms))
}

/// Discrete `∫|∇u|²` with the same gradients as the energy.
pub fn gradient_norm_squared(u: &SolutionField) -> f64 {
    let grads = nodal_gradients(u);
    let terms: Vec<f64> = (0..u.grid.len())
        .map(|i| trapezoid_weight(u, i) * grads[i].iter().map(|g| g * g).sum::<f64>())
        .collect();
    crate::sum::pairwise_sum(&terms)
}

/// Second-order finite-difference value of `Lu(x)` at an interior grid
/// node, for smooth manufactured-solution diagnostics. For the
/// Ornstein–Uhlenbeck operator this is `Lu` without the `-λu` term.
pub fn generator_apply(spec: &OperatorSpec, u: &SolutionField, x: &[f64]) -> Result<f64> {
    let g = &u.grid;
    let idx = g
        .node_at(x, 1e-9)
        .ok_or_else(|| Error::InvalidArgument(format!("{x:?} is not a grid node")))?;
    if g.on_box_boundary(idx) || !u.domain.contains(x) {
        return Err(Error::NotInterior(x.to_vec()));
    }
    let d = g.dim();
    let x = g.node(idx);
    let (diff, drift, kill) = match spec {
        OperatorSpec::DivergenceForm(op) => (op.diffusion_matrix(&x), op.drift(&x), op.killing_rate(&x)),
        OperatorSpec::OrnsteinUhlenbeck(op) => {
            let diff = spec.generator_diffusion_matrix(&x).expect("local");
            let ax = &op.a * nalgebra::DVector::from_column_slice(&x);
            (diff, ax.iter().copied().collect(), 0.0)
        }
        OperatorSpec::FractionalLaplacian(_) => {
            return Err(Error::Unsupported("finite-difference generator of a nonlocal operator".into()))
        }
    };
    let val = |i: usize| u.values[i];
    let mut lu = -kill * val(idx);
    for k in 0..d {
        let (s, h) = (g.stride(k), g.spacing(k));
        let dk = (val(idx + s) - val(idx - s)) / (2.0 * h);
        let dkk = (val(idx + s) - 2.0 * val(idx) + val(idx - s)) / (h * h);
        lu += diff[k * d + k] * dkk + drift[k] * dk;
        for l in (k + 1)..d {
            let (t, hl) = (g.stride(l), g.spacing(l));
            let dkl = (val(idx + s + t) - val(idx + s - t) - val(idx - s + t) + val(idx - s - t)) / (4.0 * h * hl);
            lu += (diff[k * d + l] + diff[l * d + k]) * dkl;
        }
    }
    Ok(lu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::UniformGrid;
    use std::f64::consts::PI;

    fn unit() -> Domain {
        Domain::unit_interval()
    }

    #[test]
    fn identity_is_elliptic_with_unit_constant() {
        let rep = validate(&OperatorSpec::laplacian(1, 1.0), &unit());
        assert!(rep.ok, "{:?}", rep.violations);
        assert_eq!(rep.ellipticity_lambda, Some(1.0));
    }

    #[test]
    fn indefinite_matrix_is_not_elliptic() {
        let mut op = DivergenceForm::laplacian(2, 1.0);
        op.a = MatrixField::constant(2, &[1.0, 0.0, 0.0, -1.0]);
        let dom = Domain::Box { lo: vec![0.0, 0.0], hi: vec![1.0, 1.0] };
        let rep = validate(&OperatorSpec::DivergenceForm(op), &dom);
        assert!(!rep.ok);
        assert!(rep.has("divergence.elliptic"));
    }

    #[test]
    fn fractional_drift_rules() {
        let rot = VectorField(vec![ScalarField::from_fn(|x| x[1]), ScalarField::from_fn(|x| -x[0])]);
        let ball = Domain::Ball { center: vec![0.0, 0.0], radius: 1.0, dim: 2 };
        let ok = OperatorSpec::FractionalLaplacian(FractionalLaplacian { dim: 2, alpha: 1.5, scale: 1.0, drift: Some(rot.clone()) });
        assert!(validate(&ok, &ball).ok);
        let low = OperatorSpec::FractionalLaplacian(FractionalLaplacian { dim: 2, alpha: 1.0, scale: 1.0, drift: Some(rot) });
        let rep = validate(&low, &ball);
        assert!(rep.has("fractional.drift-alpha"));
        assert!(!rep.has("fractional.drift-divergence"));
        let radial = VectorField(vec![ScalarField::from_fn(|x| x[0]), ScalarField::from_fn(|x| x[1])]);
        let bad = OperatorSpec::FractionalLaplacian(FractionalLaplacian { dim: 2, alpha: 1.5, scale: 1.0, drift: Some(radial) });
        assert!(validate(&bad, &ball).has("fractional.drift-divergence"));
    }

    #[test]
    fn ou_rules() {
        let full = Domain::FullSpace { dim: 1 };
        let good = OperatorSpec::ornstein_uhlenbeck(DMatrix::from_element(1, 1, -1.0), DMatrix::from_element(1, 1, 1.0), 1.0);
        let rep = validate(&good, &full);
        assert!(rep.ok, "{:?}", rep.violations);
        assert_eq!(rep.stability_margin, Some(1.0));
        let unstable = OperatorSpec::ornstein_uhlenbeck(DMatrix::from_element(1, 1, 0.5), DMatrix::from_element(1, 1, 1.0), 0.0);
        let rep = validate(&unstable, &full);
        assert!(rep.has("ou.stability") && rep.has("ou.lambda"));
    }

    #[test]
    fn invariant_covariance_matches_closed_form() {
        // Q = I and A symmetric negative definite: Q∞ = -½A⁻¹.
        let a = DMatrix::from_row_slice(2, 2, &[-2.0, 0.5, 0.5, -1.0]);
        let op = OrnsteinUhlenbeck { a: a.clone(), q: DMatrix::identity(2, 2), lambda: 1.0 };
        let qinf = op.invariant_covariance().unwrap();
        let expect = a.try_inverse().unwrap() * -0.5;
        assert!((qinf - expect).abs().max() < 1e-12);
    }

    #[test]
    fn energy_of_zero_field_is_zero() {
        let u = SolutionField::sample(&unit(), 11, |_| 0.0).unwrap();
        assert_eq!(dirichlet_energy(&OperatorSpec::laplacian(1, 1.0), &u).unwrap(), 0.0);
    }

    #[test]
    fn energy_of_parabola() {
        let u = SolutionField::sample(&unit(), 1000, |x| x[0] * (1.0 - x[0]) / 2.0).unwrap();
        let e = dirichlet_energy(&OperatorSpec::laplacian(1, 1.0), &u).unwrap();
        assert!((e - 1.0 / 12.0).abs() < 1e-4, "{e}");
    }

    #[test]
    fn energy_of_green_function() {
        let u = SolutionField::sample(&unit(), 1001, |x| x[0].min(0.5) * (1.0 - x[0].max(0.5))).unwrap();
        let e = dirichlet_energy(&OperatorSpec::laplacian(1, 1.0), &u).unwrap();
        assert!((e - 0.25).abs() < 1e-3, "{e}");
        assert!(e < 0.25);
    }

    #[test]
    fn coarse_grid_rejected() {
        let u = SolutionField::sample(&unit(), 4, |_| 0.0).unwrap();
        assert!(matches!(
            dirichlet_energy(&OperatorSpec::laplacian(1, 1.0), &u),
            Err(Error::GridTooCoarse(_))
        ));
    }

    #[test]
    fn generator_on_quadratic_and_sine() {
        let lap = OperatorSpec::laplacian(1, 1.0);
        let u = SolutionField::sample(&unit(), 11, |x| x[0] * x[0]).unwrap();
        assert!((generator_apply(&lap, &u, &[0.5]).unwrap() - 2.0).abs() < 1e-9);
        let s = SolutionField::sample(&unit(), 1001, |x| (PI * x[0]).sin()).unwrap();
        assert!((generator_apply(&lap, &s, &[0.5]).unwrap() + PI * PI).abs() < 1e-3);
        assert!(matches!(generator_apply(&lap, &u, &[0.0]), Err(Error::NotInterior(_))));
    }

    #[test]
    fn generator_of_ou_on_identity() {
        let ou = OperatorSpec::ornstein_uhlenbeck(DMatrix::from_element(1, 1, -1.0), DMatrix::from_element(1, 1, 1.0), 1.0);
        let grid = UniformGrid::new(vec![-1.0], vec![1.0], vec![21]).unwrap();
        let u = SolutionField::from_fn(Domain::FullSpace { dim: 1 }, grid, |x| x[0]).unwrap();
        assert!((generator_apply(&ou, &u, &[0.3]).unwrap() + 0.3).abs() < 1e-12);
    }

    #[test]
    fn fractional_constant_values() {
        // c_{1,1} = 1/π; c_{1,α} → 0 as α → 0 and the α → 2 limit is finite.
        assert!((fractional_constant(1, 1.0) - 1.0 / PI).abs() < 1e-14);
    }
}
