//! Killed Markov processes attached to each operator preset, simulated on
//! a fixed time grid.
//!
//! Every path is a pure function of `(seed, path_index)`. Exits detected
//! inside a step (position test or bridge crossing) are dated at the step
//! midpoint; the Ornstein–Uhlenbeck killing clock is exact.

use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coeff::VectorField;
use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::measures::MeasureData;
use crate::operators::{validate, DivergenceForm, OperatorSpec};
use crate::rng::{path_rng, PathRng};
use crate::sum::{pairwise_sum, Estimate};

/// What to do with paths still alive at the horizon.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HorizonPolicy {
    /// Censored fraction at or above [`CENSOR_LIMIT`] is an error.
    #[default]
    Reject,
    /// Paths are cut at the horizon and contribute what they accrued.
    Truncate,
}

pub const CENSOR_LIMIT: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub max_horizon: f64,
    pub seed: u64,
    pub paths: usize,
    #[serde(default)]
    pub horizon_policy: HorizonPolicy,
}

impl SimConfig {
    pub fn new(dt: f64, max_horizon: f64, seed: u64, paths: usize) -> Self {
        Self { dt, max_horizon, seed, paths, horizon_policy: HorizonPolicy::Reject }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.max_horizon >= self.dt) {
            return Err(Error::InvalidArgument(format!(
                "max_horizon {} must be at least dt {}",
                self.max_horizon, self.dt
            )));
        }
        if self.paths == 0 {
            return Err(Error::InvalidArgument("paths must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExitKind {
    BoundaryExit,
    JumpOvershoot,
    KillingClock,
    HorizonCap,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathEnd {
    pub lifetime: f64,
    pub exit_kind: ExitKind,
}

impl PathEnd {
    pub fn censored(&self) -> bool {
        self.exit_kind == ExitKind::HorizonCap
    }
}

/// One recorded trajectory: `states[k]` is the position at `times[k]`,
/// all strictly before the lifetime.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSample {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub lifetime: f64,
    pub exit_kind: ExitKind,
}

impl PathSample {
    pub fn censored(&self) -> bool {
        self.exit_kind == ExitKind::HorizonCap
    }

    /// Length of the `k`-th segment, `min(t_{k+1}, ζ) - t_k`.
    pub fn segment(&self, k: usize) -> f64 {
        let next = self.times.get(k + 1).copied().unwrap_or(self.lifetime);
        next.min(self.lifetime) - self.times[k]
    }
}

/// Symmetric α-stable variate with `E e^{iξS} = e^{-|ξ|^α}`
/// (Chambers–Mallows–Stuck).
pub fn symmetric_stable<R: Rng + ?Sized>(rng: &mut R, alpha: f64) -> f64 {
    let v = std::f64::consts::PI * (rng.random::<f64>() - 0.5);
    if alpha == 1.0 {
        return v.tan();
    }
    let w: f64 = rng.sample(Exp1);
    (alpha * v).sin() / v.cos().powf(1.0 / alpha) * ((v * (1.0 - alpha)).cos() / w).powf((1.0 - alpha) / alpha)
}

/// Positive β-stable variate with `E e^{-λA} = e^{-λ^β}`, `β ∈ (0,1)`
/// (Kanter's representation).
pub fn positive_stable<R: Rng + ?Sized>(rng: &mut R, beta: f64) -> f64 {
    let u = std::f64::consts::PI * rng.random::<f64>();
    let e: f64 = rng.sample(Exp1);
    let a = ((beta * u).sin() / u.sin()).powf(1.0 / (1.0 - beta)) * ((1.0 - beta) * u).sin() / (beta * u).sin();
    (a / e).powf((1.0 - beta) / beta)
}

/// Rotation-invariant α-stable vector with `E e^{i⟨ξ,X⟩} = e^{-|ξ|^α}`:
/// `√A·G` with `G ~ N(0, 2I)` and `A` positive (α/2)-stable.
pub fn isotropic_stable<R: Rng + ?Sized>(rng: &mut R, alpha: f64, out: &mut [f64]) {
    if out.len() == 1 {
        out[0] = symmetric_stable(rng, alpha);
        return;
    }
    let s = positive_stable(rng, alpha / 2.0).sqrt() * std::f64::consts::SQRT_2;
    for v in out.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v = s * z;
    }
}

/// Lower Cholesky factor of a small row-major SPD matrix, in place.
fn cholesky_in_place(a: &mut [f64], d: usize) -> bool {
    for j in 0..d {
        let mut s = a[j * d + j];
        for k in 0..j {
            s -= a[j * d + k] * a[j * d + k];
        }
        if !(s > 0.0) {
            return false;
        }
        let l = s.sqrt();
        a[j * d + j] = l;
        for i in (j + 1)..d {
            let mut t = a[i * d + j];
            for k in 0..j {
                t -= a[i * d + k] * a[j * d + k];
            }
            a[i * d + j] = t / l;
        }
        for i in 0..j {
            a[i * d + j] = 0.0;
        }
    }
    true
}

#[derive(Clone, Debug)]
enum Coefficients {
    Constant { sym: Vec<f64>, sigma: Vec<f64>, drift: Vec<f64>, kill: f64 },
    Variable(DivergenceForm),
}

#[derive(Clone, Debug)]
enum Kind {
    Diffusion(Coefficients),
    Stable { alpha: f64, jump_scale: f64, drift: Option<VectorField> },
    Ou { mean: Vec<f64>, chol: Vec<f64>, lambda: f64 },
}

/// Time-discretized law of the killed process of an operator on a domain.
#[derive(Clone, Debug)]
pub struct Dynamics {
    kind: Kind,
    domain: Domain,
    dt: f64,
    dim: usize,
}

const BRIDGE_CUTOFF: f64 = 50.0;

impl Dynamics {
    pub fn new(spec: &OperatorSpec, domain: &Domain, dt: f64) -> Result<Self> {
        let rep = validate(spec, domain);
        if !rep.ok {
            let msgs: Vec<String> = rep.violations.iter().map(|v| format!("{}: {}", v.rule, v.message)).collect();
            return Err(Error::InvalidOperator(msgs.join("; ")));
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be > 0, got {dt}")));
        }
        let dim = domain.dim();
        let kind = match spec {
            OperatorSpec::DivergenceForm(op) => {
                let constant = op.a.is_constant() && op.b.is_constant() && op.d.is_zero() && op.c.as_const().is_some();
                if constant {
                    let x0 = vec![0.0; dim];
                    let sym = op.diffusion_matrix(&x0);
                    let mut sigma: Vec<f64> = sym.iter().map(|v| 2.0 * v).collect();
                    if !cholesky_in_place(&mut sigma, dim) {
                        return Err(Error::InvalidOperator("diffusion matrix is not positive definite".into()));
                    }
                    Kind::Diffusion(Coefficients::Constant {
                        sym,
                        sigma,
                        drift: op.drift(&x0),
                        kill: op.killing_rate(&x0).max(0.0),
                    })
                } else {
                    Kind::Diffusion(Coefficients::Variable(op.clone()))
                }
            }
            OperatorSpec::FractionalLaplacian(op) => Kind::Stable {
                alpha: op.alpha,
                jump_scale: (op.scale * dt).powf(1.0 / op.alpha),
                drift: op.drift.clone(),
            },
            OperatorSpec::OrnsteinUhlenbeck(op) => {
                let (mean, cov) = ou_transition(&op.a, &op.q, dt);
                let chol = nalgebra::Cholesky::new(cov)
                    .ok_or_else(|| Error::InvalidOperator("transition covariance is not positive definite".into()))?
                    .l();
                Kind::Ou {
                    mean: mean.transpose().iter().copied().collect(),
                    chol: chol.transpose().iter().copied().collect(),
                    lambda: op.lambda,
                }
            }
        };
        Ok(Self { kind, domain: domain.clone(), dt, dim })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    /// Simulate one path from `x0` up to `horizon`, calling
    /// `visit(t_k, X_{t_k}, w_k)` for every step started alive. The weights
    /// are trapezoidal in time: `w_k = Δt_k = min(t_{k+1}, ζ, horizon) - t_k`
    /// except that half of `Δt_0` moves from the start state to the last
    /// alive state, so `Σ w_k = ζ ∧ horizon` and time integrals of functions
    /// peaked at `x0` carry no `O(Δt·g(x0))` start bias.
    pub fn run<F>(&self, rng: &mut PathRng, x0: &[f64], horizon: f64, mut visit: F) -> PathEnd
    where
        F: FnMut(f64, &[f64], f64),
    {
        let d = self.dim;
        if !self.domain.contains(x0) {
            return PathEnd { lifetime: 0.0, exit_kind: ExitKind::BoundaryExit };
        }
        let dt = self.dt;
        let full_steps = (horizon / dt * (1.0 + 1e-12)).floor() as u64;
        let mut x = x0.to_vec();
        let mut y = vec![0.0; d];
        let mut scratch = vec![0.0; 2 * d * d + 2 * d];
        let mut clock = match &self.kind {
            Kind::Ou { lambda, .. } if *lambda > 0.0 => rng.sample::<f64, _>(Exp1) / lambda,
            Kind::Diffusion(Coefficients::Constant { kill, .. }) if *kill > 0.0 => rng.sample::<f64, _>(Exp1),
            Kind::Diffusion(Coefficients::Variable(op)) if !(op.c.is_zero() && op.d.is_zero()) => rng.sample::<f64, _>(Exp1),
            _ => f64::INFINITY,
        };
        let mut intensity = 0.0;
        let mut carry = 0.0;
        let mut k: u64 = 0;
        loop {
            let t = k as f64 * dt;
            if k >= full_steps {
                let rest = horizon - t;
                if rest > 0.0 || k > 0 {
                    visit(t, &x, rest + carry);
                }
                return PathEnd { lifetime: horizon, exit_kind: ExitKind::HorizonCap };
            }
            let event = match &self.kind {
                Kind::Diffusion(c) => self.diffusion_step(c, rng, &x, &mut y, &mut scratch, &mut intensity, &mut clock),
                Kind::Stable { alpha, jump_scale, drift } => {
                    self.stable_step(*alpha, *jump_scale, drift.as_ref(), rng, &x, &mut y, &mut scratch)
                }
                Kind::Ou { mean, chol, .. } => {
                    ou_step(mean, chol, d, rng, &x, &mut y, &mut scratch);
                    (clock <= t + dt).then_some((clock - t, ExitKind::KillingClock))
                }
            };
            if let Some((offset, kind)) = event {
                visit(t, &x, if k == 0 { offset } else { offset + carry });
                return PathEnd { lifetime: t + offset, exit_kind: kind };
            }
            if k == 0 {
                carry = 0.5 * dt;
                visit(t, &x, carry);
            } else {
                visit(t, &x, dt);
            }
            std::mem::swap(&mut x, &mut y);
            k += 1;
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn diffusion_step(
        &self,
        coeffs: &Coefficients,
        rng: &mut PathRng,
        x: &[f64],
        y: &mut [f64],
        scratch: &mut [f64],
        intensity: &mut f64,
        clock: &mut f64,
    ) -> Option<(f64, ExitKind)> {
        let d = self.dim;
        let dt = self.dt;
        let sq = dt.sqrt();
        let (sym, sigma_buf) = scratch.split_at_mut(d * d);
        let (sigma, rest) = sigma_buf.split_at_mut(d * d);
        let (drift_buf, z) = rest.split_at_mut(d);
        let (sym, sigma, drift, kill): (&[f64], &[f64], &[f64], f64) = match coeffs {
            Coefficients::Constant { sym, sigma, drift, kill } => (sym, sigma, drift, *kill),
            Coefficients::Variable(op) => {
                let s = op.diffusion_matrix(x);
                sym.copy_from_slice(&s);
                for (o, v) in sigma.iter_mut().zip(&s) {
                    *o = 2.0 * v;
                }
                if !cholesky_in_place(sigma, d) {
                    sigma.iter_mut().for_each(|v| *v = 0.0);
                }
                drift_buf.copy_from_slice(&op.drift(x));
                (sym, sigma, drift_buf, op.killing_rate(x).max(0.0))
            }
        };
        if d == 1 {
            let n: f64 = rng.sample(StandardNormal);
            y[0] = x[0] + drift[0] * dt + sigma[0] * sq * n;
        } else {
            for zi in z.iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
            for i in 0..d {
                let mut s = x[i] + drift[i] * dt;
                for j in 0..=i {
                    s += sigma[i * d + j] * sq * z[j];
                }
                y[i] = s;
            }
        }
        let mut event = None;
        if kill > 0.0 {
            let next = *intensity + kill * dt;
            if next >= *clock {
                event = Some(((*clock - *intensity) / kill, ExitKind::KillingClock));
            }
            *intensity = next;
        }
        let exit = if !self.domain.contains(y) {
            true
        } else {
            let (d0, d1, ann) = match &self.domain {
                Domain::Interval { a, b } => {
                    let (la, lb) = ((x[0] - a) * (y[0] - a), (b - x[0]) * (b - y[0]));
                    (la.min(lb), 1.0, sym[0])
                }
                _ => match self.domain.nearest_face(x, y) {
                    Some(face) => {
                        let n = &face.normal;
                        let mut ann = 0.0;
                        for i in 0..d {
                            for j in 0..d {
                                ann += n[i] * sym[i * d + j] * n[j];
                            }
                        }
                        (face.start * face.end, 1.0, ann)
                    }
                    None => (f64::INFINITY, 1.0, 1.0),
                },
            };
            let expo = d0 * d1 / (ann * dt);
            expo < BRIDGE_CUTOFF && rng.random::<f64>() < (-expo).exp()
        };
        if exit {
            let mid = 0.5 * dt;
            match event {
                Some((s, _)) if s <= mid => {}
                _ => event = Some((mid, ExitKind::BoundaryExit)),
            }
        }
        event
    }

    #[allow(clippy::too_many_arguments)]
    fn stable_step(
        &self,
        alpha: f64,
        jump_scale: f64,
        drift: Option<&VectorField>,
        rng: &mut PathRng,
        x: &[f64],
        y: &mut [f64],
        scratch: &mut [f64],
    ) -> Option<(f64, ExitKind)> {
        let d = self.dim;
        let half = 0.5 * self.dt;
        let exit = Some((half, ExitKind::JumpOvershoot));
        y.copy_from_slice(x);
        let (b, jump) = scratch.split_at_mut(d);
        let jump = &mut jump[..d];
        if let Some(f) = drift {
            f.eval_into(y, b);
            for i in 0..d {
                y[i] += half * b[i];
            }
            if !self.domain.contains(y) {
                return exit;
            }
        }
        isotropic_stable(rng, alpha, jump);
        for i in 0..d {
            y[i] += jump_scale * jump[i];
        }
        if !self.domain.contains(y) {
            return exit;
        }
        if let Some(f) = drift {
            f.eval_into(y, b);
            for i in 0..d {
                y[i] += half * b[i];
            }
            if !self.domain.contains(y) {
                return exit;
            }
        }
        None
    }
}

fn ou_step(mean: &[f64], chol: &[f64], d: usize, rng: &mut PathRng, x: &[f64], y: &mut [f64], scratch: &mut [f64]) {
    let z = &mut scratch[..d];
    for zi in z.iter_mut() {
        *zi = rng.sample(StandardNormal);
    }
    for i in 0..d {
        let mut s = 0.0;
        for j in 0..d {
            s += mean[i * d + j] * x[j];
        }
        for j in 0..=i {
            s += chol[i * d + j] * z[j];
        }
        y[i] = s;
    }
}

/// Exact Ornstein–Uhlenbeck transition over `dt` for `dX = AX dt + Q^{1/2} dW`:
/// mean map `e^{dt·A}` and covariance `∫₀^{dt} e^{sA} Q e^{sAᵀ} ds`
/// (Van Loan's block exponential).
pub fn ou_transition(a: &DMatrix<f64>, q: &DMatrix<f64>, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = a.nrows();
    let mut block = DMatrix::<f64>::zeros(2 * d, 2 * d);
    block.view_mut((0, 0), (d, d)).copy_from(&(-a * dt));
    block.view_mut((0, d), (d, d)).copy_from(&(q * dt));
    block.view_mut((d, d), (d, d)).copy_from(&(a.transpose() * dt));
    let e = block.exp();
    let f22t = e.view((d, d), (d, d)).transpose();
    let g12 = e.view((0, d), (d, d)).clone_owned();
    let cov = &f22t * g12;
    let cov = (&cov + cov.transpose()) * 0.5;
    (f22t, cov)
}

/// Record one path of the killed process.
pub fn sample_path(spec: &OperatorSpec, domain: &Domain, x0: &[f64], cfg: &SimConfig, path_index: u64) -> Result<PathSample> {
    cfg.validate()?;
    if !domain.contains(x0) {
        return Err(Error::NotInterior(x0.to_vec()));
    }
    let dyn_ = Dynamics::new(spec, domain, cfg.dt)?;
    Ok(record_path(&dyn_, x0, cfg, path_index))
}

pub fn record_path(dyn_: &Dynamics, x0: &[f64], cfg: &SimConfig, path_index: u64) -> PathSample {
    let mut rng = path_rng(cfg.seed, path_index);
    let mut times = Vec::new();
    let mut states = Vec::new();
    let end = dyn_.run(&mut rng, x0, cfg.max_horizon, |t, x, _| {
        times.push(t);
        states.push(x.to_vec());
    });
    PathSample { times, states, lifetime: end.lifetime, exit_kind: end.exit_kind }
}

/// `A^μ_ζ` for an atom-free measure, with the same trapezoidal time
/// weights as [`Dynamics::run`].
pub fn additive_functional(path: &PathSample, mu: &MeasureData) -> Result<f64> {
    if mu.has_atoms() {
        return Err(Error::AtomsPresent);
    }
    if let Some(c) = mu.constant_value() {
        return Ok(c * path.lifetime);
    }
    let n = path.times.len();
    let shift = if n > 1 { 0.5 * path.segment(0) } else { 0.0 };
    let terms: Vec<f64> = (0..n)
        .map(|k| {
            let w = path.segment(k) - if k == 0 { shift } else { 0.0 } + if k + 1 == n { shift } else { 0.0 };
            mu.smooth_density(&path.states[k]) * w
        })
        .collect();
    Ok(pairwise_sum(&terms))
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ExitTimeEstimate {
    pub estimate: Estimate,
    pub censored_fraction: f64,
}

/// Mean lifetime over the uncensored paths.
pub fn mean_exit_time(spec: &OperatorSpec, domain: &Domain, x0: &[f64], cfg: &SimConfig) -> Result<ExitTimeEstimate> {
    cfg.validate()?;
    if !domain.contains(x0) {
        return Err(Error::NotInterior(x0.to_vec()));
    }
    let dyn_ = Dynamics::new(spec, domain, cfg.dt)?;
    let ends: Vec<PathEnd> = (0..cfg.paths as u64)
        .into_par_iter()
        .map(|i| dyn_.run(&mut path_rng(cfg.seed, i), x0, cfg.max_horizon, |_, _, _| {}))
        .collect();
    let censored = ends.iter().filter(|e| e.censored()).count();
    let fraction = censored as f64 / ends.len() as f64;
    if fraction >= CENSOR_LIMIT {
        return Err(Error::HorizonTooSmall { fraction, limit: CENSOR_LIMIT, horizon: cfg.max_horizon });
    }
    let lifetimes: Vec<f64> = ends.iter().filter(|e| !e.censored()).map(|e| e.lifetime).collect();
    Ok(ExitTimeEstimate { estimate: Estimate::from_samples(&lifetimes), censored_fraction: fraction })
}

/// Debug dump, one row per recorded state: `path_index,t,x1..xd`.
pub fn write_path_dump<W: Write>(out: W, paths: &[(u64, PathSample)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let dim = paths.iter().find_map(|(_, p)| p.states.first().map(|s| s.len())).unwrap_or(1);
    let mut header = vec!["path_index".to_string(), "t".to_string()];
    header.extend((1..=dim).map(|k| format!("x{k}")));
    w.write_record(&header)?;
    for (idx, p) in paths {
        for (t, x) in p.times.iter().zip(&p.states) {
            let mut row = vec![idx.to_string(), t.to_string()];
            row.extend(x.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::ScalarField;

    fn half_laplacian() -> OperatorSpec {
        OperatorSpec::laplacian(1, 0.5)
    }

    #[test]
    fn paths_are_reproducible() {
        let cfg = SimConfig::new(1e-3, 10.0, 42, 1);
        let dom = Domain::unit_interval();
        let a = sample_path(&half_laplacian(), &dom, &[0.5], &cfg, 7).unwrap();
        let b = sample_path(&half_laplacian(), &dom, &[0.5], &cfg, 7).unwrap();
        let c = sample_path(&half_laplacian(), &dom, &[0.5], &cfg, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.states.iter().all(|s| dom.contains(s)));
        assert!(a.times.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn rejects_exterior_start() {
        let cfg = SimConfig::new(1e-3, 10.0, 1, 1);
        assert!(matches!(
            sample_path(&half_laplacian(), &Domain::unit_interval(), &[1.5], &cfg, 0),
            Err(Error::NotInterior(_))
        ));
    }

    #[test]
    fn unit_density_functional_is_lifetime() {
        let cfg = SimConfig::new(1e-3, 10.0, 3, 1);
        let p = sample_path(&half_laplacian(), &Domain::unit_interval(), &[0.3], &cfg, 0).unwrap();
        let one = MeasureData::from_density(ScalarField::from_fn(|_| 1.0));
        let a = additive_functional(&p, &one).unwrap();
        assert!((a - p.lifetime).abs() < 1e-12);
        assert_eq!(additive_functional(&p, &MeasureData::zero()).unwrap(), 0.0);
        assert!(matches!(
            additive_functional(&p, &MeasureData::dirac(vec![0.5], 1.0)),
            Err(Error::AtomsPresent)
        ));
    }

    #[test]
    fn small_horizon_is_reported() {
        let cfg = SimConfig::new(1e-3, 0.01, 3, 200);
        let err = mean_exit_time(&half_laplacian(), &Domain::unit_interval(), &[0.5], &cfg).unwrap_err();
        assert!(matches!(err, Error::HorizonTooSmall { .. }));
    }

    #[test]
    fn ou_transition_scalar() {
        let a = DMatrix::from_element(1, 1, -1.0);
        let q = DMatrix::from_element(1, 1, 1.0);
        let (m, c) = ou_transition(&a, &q, 0.3);
        assert!((m[(0, 0)] - (-0.3f64).exp()).abs() < 1e-14);
        assert!((c[(0, 0)] - (1.0 - (-0.6f64).exp()) / 2.0).abs() < 1e-14);
    }

    #[test]
    fn cholesky_small() {
        let mut a = vec![4.0, 2.0, 2.0, 3.0];
        assert!(cholesky_in_place(&mut a, 2));
        assert_eq!(a, vec![2.0, 0.0, 1.0, 2f64.sqrt()]);
        let mut b = vec![1.0, 0.0, 0.0, -1.0];
        assert!(!cholesky_in_place(&mut b, 2));
    }

    #[test]
    fn symmetric_stable_characteristic_function() {
        // E cos(ξS) = e^{-|ξ|^α}.
        let mut rng = path_rng(5, 0);
        for &alpha in &[0.5, 1.0, 1.5, 2.0] {
            let n = 200_000;
            let xi = 0.7;
            let s: f64 = (0..n).map(|_| (xi * symmetric_stable(&mut rng, alpha)).cos()).sum::<f64>() / n as f64;
            let expect = (-f64::powf(xi, alpha)).exp();
            assert!((s - expect).abs() < 5e-3, "alpha {alpha}: {s} vs {expect}");
        }
    }

    #[test]
    fn positive_stable_laplace_transform() {
        let mut rng = path_rng(6, 0);
        for &beta in &[0.25, 0.5, 0.75] {
            let n = 200_000;
            let lam = 1.3;
            let s: f64 = (0..n).map(|_| (-lam * positive_stable(&mut rng, beta)).exp()).sum::<f64>() / n as f64;
            let expect = (-f64::powf(lam, beta)).exp();
            assert!((s - expect).abs() < 5e-3, "beta {beta}: {s} vs {expect}");
        }
    }

    #[test]
    fn isotropic_stable_characteristic_function() {
        let mut rng = path_rng(8, 0);
        let alpha = 1.2;
        let xi: [f64; 2] = [0.4, -0.5];
        let norm = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
        let n = 200_000;
        let mut v = [0.0; 2];
        let s: f64 = (0..n)
            .map(|_| {
                isotropic_stable(&mut rng, alpha, &mut v);
                (xi[0] * v[0] + xi[1] * v[1]).cos()
            })
            .sum::<f64>()
            / n as f64;
        assert!((s - (-norm.powf(alpha)).exp()).abs() < 5e-3);
    }
}
