//! Monte Carlo Feynman–Kac map and damped Picard iteration for
//! `-Lu = f(x, u) + μ`.
//!
//! Two engines evaluate `x ↦ E_x[∫₀^ζ h(X_t) dt]` at the grid nodes.
//!
//! * Lattice: with common random numbers on a bounded domain of dimension
//!   at most two, the paths from every node are simulated once and their
//!   occupation measure is accumulated, per batch of paths, on a lattice
//!   finer than the solution grid. Each Picard sweep is then a
//!   contraction of the stored occupation against `h` at the lattice
//!   nodes. Standard errors come from batch means.
//! * Pathwise: paths are re-simulated for every evaluation (same seeds
//!   when common random numbers are on) and `h` is evaluated along them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::green::{kernel_for, potential_rmu, KernelSpec};
use crate::grid::{SolutionField, UniformGrid};
use crate::measures::{check_monotone, mollify, total_variation, truncate, MeasureData, Nonlinearity};
use crate::operators::OperatorSpec;
use crate::process::{Dynamics, HorizonPolicy, SimConfig, CENSOR_LIMIT};
use crate::quad::{self, ReferenceMeasure};
use crate::rng::{derive_seed, path_rng};
use crate::sum::{pairwise_sum, Estimate};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeasureTermMode {
    /// Exact kernel when one covers the datum, pathwise otherwise.
    #[default]
    Auto,
    Kernel,
    Pathwise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PicardConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub damping: f64,
    pub crn: bool,
    /// Nodes per axis of the solution grid.
    pub grid: usize,
    pub measure_term: MeasureTermMode,
    /// Mollification half-width for atoms; `2·dt^{1/2}` when unset.
    pub epsilon: Option<f64>,
    /// Lattice cells per solution-grid cell and axis.
    pub lattice_refine: usize,
    /// Half-width of the solution grid box on the full space; derived from
    /// the invariant covariance when unset.
    pub box_half_width: Option<f64>,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iterations: 100,
            damping: 0.5,
            crn: true,
            grid: 21,
            measure_term: MeasureTermMode::Auto,
            epsilon: None,
            lattice_refine: 8,
            box_half_width: None,
        }
    }
}

impl PicardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument(format!("tolerance must be > 0, got {}", self.tolerance)));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidArgument(format!("damping must lie in (0, 1], got {}", self.damping)));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be ≥ 1".into()));
        }
        if self.grid < 2 {
            return Err(Error::InvalidArgument("grid needs at least 2 nodes per axis".into()));
        }
        if self.lattice_refine == 0 {
            return Err(Error::InvalidArgument("lattice_refine must be ≥ 1".into()));
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0) {
                return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {e}")));
            }
        }
        Ok(())
    }
}

/// Nodewise Monte Carlo estimates on the solution grid (zero with zero
/// error at nodes outside the open domain).
#[derive(Clone, Debug, PartialEq)]
pub struct NodeEstimates {
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
}

/// Which part of `μ` to add to a path functional.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeasurePart {
    None,
    Signed,
    Abs,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub converged: bool,
    pub sup_residuals: Vec<f64>,
    pub stderr: Vec<f64>,
    pub l1_f_u: f64,
    pub tv_mu: Option<f64>,
    pub y_max: f64,
    pub majorant: Vec<f64>,
    pub engine: String,
    pub measure_term: String,
    pub epsilon: Option<f64>,
    pub censored_fraction: f64,
    pub warnings: Vec<String>,
}

/// Memory budget, in doubles, for stored occupation measures.
pub const LATTICE_BUDGET: usize = 30_000_000;
pub const MAX_BATCHES: usize = 64;
const MIN_BATCHES: usize = 16;
/// Safety factor on the a-priori bound used to clip `u` inside `f`.
pub const CLIP_FACTOR: f64 = 4.0;

struct Lattice {
    grid: UniformGrid,
    batches: usize,
    /// Per active node: `batches × lattice.len()` occupation times.
    occupation: Vec<Vec<f64>>,
    counts: Vec<usize>,
    /// Per active node and batch: signed and absolute `A^μ` totals.
    measure_signed: Vec<Vec<f64>>,
    measure_abs: Vec<Vec<f64>>,
}

enum Engine {
    Lattice(Lattice),
    Pathwise,
    /// `f ≡ 0` with an exact measure term: nothing to simulate.
    Deterministic,
}

enum MeasureTerm {
    Zero,
    Kernel { signed: Vec<f64>, abs: Vec<f64> },
    Pathwise { mu: MeasureData, abs: MeasureData, epsilon: Option<f64> },
}

/// Prepared Feynman–Kac evaluator for one problem.
pub struct FkEngine {
    pub spec: OperatorSpec,
    pub domain: Domain,
    pub f: Nonlinearity,
    pub mu: MeasureData,
    pub sim: SimConfig,
    pub picard: PicardConfig,
    pub grid: UniformGrid,
    pub reference: ReferenceMeasure,
    dynamics: Dynamics,
    /// Solution-grid indices of the nodes that are estimated.
    active: Vec<usize>,
    engine: Engine,
    measure: MeasureTerm,
    censored: f64,
    pub warnings: Vec<String>,
}

/// Grid the solver reports on: the domain's bounding box, or a centred box
/// on the full space.
pub fn solution_grid(spec: &OperatorSpec, domain: &Domain, picard: &PicardConfig) -> Result<UniformGrid> {
    if domain.is_bounded() {
        return UniformGrid::for_domain(domain, picard.grid);
    }
    let d = domain.dim();
    let half = match picard.box_half_width {
        Some(h) => h,
        None => match spec.reference_measure()? {
            ReferenceMeasure::Gaussian { cov } => 3.0 * cov.diagonal().max().sqrt(),
            ReferenceMeasure::Lebesgue => 1.0,
        },
    };
    UniformGrid::new(vec![-half; d], vec![half; d], vec![picard.grid; d])
}

impl FkEngine {
    pub fn new(
        spec: &OperatorSpec,
        domain: &Domain,
        f: &Nonlinearity,
        mu: &MeasureData,
        sim: &SimConfig,
        picard: &PicardConfig,
    ) -> Result<Self> {
        sim.validate()?;
        picard.validate()?;
        domain.validate()?;
        if !check_monotone(f, domain, 4096) {
            return Err(Error::NotMonotone(match f.source() {
                Some(s) => format!("f(x, y) = {s} increases in y on sampled pairs"),
                None => "f increases in y on sampled pairs".into(),
            }));
        }
        let dynamics = Dynamics::new(spec, domain, sim.dt)?;
        let reference = spec.reference_measure()?;
        let grid = solution_grid(spec, domain, picard)?;
        let active: Vec<usize> = (0..grid.len()).filter(|&i| domain.contains(&grid.node(i))).collect();
        let mut warnings = Vec::new();

        let kernel = kernel_for(spec, domain).filter(|k| k.supports(mu) && k.supports(&mu.abs()));
        let measure = if mu.is_zero() {
            MeasureTerm::Zero
        } else {
            let use_kernel = match picard.measure_term {
                MeasureTermMode::Kernel => {
                    if kernel.is_none() {
                        return Err(Error::NoKernel(format!("{} operator on this domain", spec.name())));
                    }
                    true
                }
                MeasureTermMode::Auto => kernel.is_some(),
                MeasureTermMode::Pathwise => false,
            };
            if use_kernel {
                let k = kernel.as_ref().expect("kernel checked");
                Self::kernel_term(k, mu, &grid, &active)?
            } else {
                let (moll, eps) = if mu.has_atoms() {
                    let eps = picard.epsilon.unwrap_or(2.0 * sim.dt.sqrt());
                    (mollify(mu, eps, domain, &reference)?, Some(eps))
                } else {
                    (mu.clone(), None)
                };
                let abs = moll.abs();
                MeasureTerm::Pathwise { mu: moll, abs, epsilon: eps }
            }
        };

        let bounded_small = domain.is_bounded() && domain.dim() <= 2;
        let mut engine = Engine::Pathwise;
        let mut censored = 0.0;
        if f.is_zero() && !matches!(measure, MeasureTerm::Pathwise { .. }) {
            engine = Engine::Deterministic;
        } else if picard.crn && bounded_small {
            match Self::lattice_shape(domain, &grid, picard, sim.paths, active.len()) {
                Some((lgrid, batches)) => {
                    let (lat, frac) = Self::build_lattice(&dynamics, sim, &grid, &active, lgrid, batches, &measure);
                    censored = frac;
                    engine = Engine::Lattice(lat);
                }
                None => warnings.push("occupation lattice exceeds the memory budget; using the pathwise engine".into()),
            }
        }
        let mut me = Self {
            spec: spec.clone(),
            domain: domain.clone(),
            f: f.clone(),
            mu: mu.clone(),
            sim: sim.clone(),
            picard: picard.clone(),
            grid,
            reference,
            dynamics,
            active,
            engine,
            measure,
            censored,
            warnings,
        };
        if matches!(me.engine, Engine::Pathwise) {
            me.censored = me.pathwise_censoring();
        }
        if me.censored >= CENSOR_LIMIT {
            match sim.horizon_policy {
                HorizonPolicy::Reject => {
                    return Err(Error::HorizonTooSmall { fraction: me.censored, limit: CENSOR_LIMIT, horizon: sim.max_horizon })
                }
                HorizonPolicy::Truncate => me.warnings.push(format!(
                    "{:.3e} of the paths were cut at the horizon {}",
                    me.censored, sim.max_horizon
                )),
            }
        }
        Ok(me)
    }

    fn kernel_term(k: &KernelSpec, mu: &MeasureData, grid: &UniformGrid, active: &[usize]) -> Result<MeasureTerm> {
        let abs_mu = mu.abs();
        let mut signed = vec![0.0; grid.len()];
        let mut abs = vec![0.0; grid.len()];
        for &i in active {
            let x = grid.node(i);
            signed[i] = potential_rmu(k, mu, &x)?;
            abs[i] = potential_rmu(k, &abs_mu, &x)?;
        }
        Ok(MeasureTerm::Kernel { signed, abs })
    }

    fn lattice_shape(
        domain: &Domain,
        grid: &UniformGrid,
        picard: &PicardConfig,
        paths: usize,
        active: usize,
    ) -> Option<(UniformGrid, usize)> {
        let mut refine = picard.lattice_refine;
        let mut batches = MAX_BATCHES.min(paths);
        loop {
            let n: Vec<usize> = grid.n.iter().map(|&m| (m - 1) * refine + 1).collect();
            let size: usize = n.iter().product();
            if size.saturating_mul(batches).saturating_mul(active) <= LATTICE_BUDGET {
                let (lo, hi) = domain.bounding_box()?;
                return UniformGrid::new(lo, hi, n).ok().map(|g| (g, batches));
            }
            if batches > MIN_BATCHES {
                batches = (batches / 2).max(MIN_BATCHES);
            } else if refine > 1 {
                refine /= 2;
            } else {
                return None;
            }
        }
    }

    fn node_seed(&self, node: usize, sweep: u64) -> u64 {
        node_seed(self.sim.seed, node, self.picard.crn, sweep)
    }

    fn build_lattice(
        dynamics: &Dynamics,
        sim: &SimConfig,
        grid: &UniformGrid,
        active: &[usize],
        lattice: UniformGrid,
        batches: usize,
        measure: &MeasureTerm,
    ) -> (Lattice, f64) {
        let m = lattice.len();
        let paths = sim.paths;
        let counts: Vec<usize> = (0..batches).map(|b| batch_range(paths, batches, b).len()).collect();
        let pathwise = match measure {
            MeasureTerm::Pathwise { mu, abs, .. } => Some((mu, abs)),
            _ => None,
        };
        let results: Vec<(Vec<f64>, Vec<f64>, Vec<f64>, usize)> = active
            .par_iter()
            .map(|&node| {
                let x0 = grid.node(node);
                let seed = node_seed(sim.seed, node, true, 0);
                let mut occ = vec![0.0; batches * m];
                let mut ms = vec![0.0; batches];
                let mut ma = vec![0.0; batches];
                let mut censored = 0;
                for b in 0..batches {
                    let row = &mut occ[b * m..(b + 1) * m];
                    let mut path_ms = Vec::new();
                    let mut path_ma = Vec::new();
                    for p in batch_range(paths, batches, b) {
                        let mut rng = path_rng(seed, p as u64);
                        let (mut s, mut a) = (0.0, 0.0);
                        let end = dynamics.run(&mut rng, &x0, sim.max_horizon, |_, x, dt| {
                            lattice.for_each_corner(x, |j, w| row[j] += w * dt);
                            if let Some((mu, abs)) = pathwise {
                                s += mu.smooth_density(x) * dt;
                                a += abs.smooth_density(x) * dt;
                            }
                        });
                        if end.censored() {
                            censored += 1;
                        }
                        path_ms.push(s);
                        path_ma.push(a);
                    }
                    ms[b] = pairwise_sum(&path_ms);
                    ma[b] = pairwise_sum(&path_ma);
                }
                (occ, ms, ma, censored)
            })
            .collect();
        let total_censored: usize = results.iter().map(|r| r.3).sum();
        let frac = total_censored as f64 / (paths * active.len().max(1)) as f64;
        let mut lat = Lattice {
            grid: lattice,
            batches,
            occupation: Vec::with_capacity(active.len()),
            counts,
            measure_signed: Vec::with_capacity(active.len()),
            measure_abs: Vec::with_capacity(active.len()),
        };
        for (occ, ms, ma, _) in results {
            lat.occupation.push(occ);
            lat.measure_signed.push(ms);
            lat.measure_abs.push(ma);
        }
        (lat, frac)
    }

    fn pathwise_censoring(&self) -> f64 {
        let counts: Vec<usize> = self
            .active
            .par_iter()
            .map(|&node| {
                let x0 = self.grid.node(node);
                let seed = self.node_seed(node, 0);
                (0..self.sim.paths as u64)
                    .filter(|&p| {
                        let mut rng = path_rng(seed, p);
                        self.dynamics.run(&mut rng, &x0, self.sim.max_horizon, |_, _, _| {}).censored()
                    })
                    .count()
            })
            .collect();
        counts.iter().sum::<usize>() as f64 / (self.sim.paths * self.active.len().max(1)) as f64
    }

    pub fn engine_name(&self) -> &'static str {
        match self.engine {
            Engine::Lattice(_) => "lattice",
            Engine::Pathwise => "pathwise",
            Engine::Deterministic => "none",
        }
    }

    pub fn measure_term_name(&self) -> &'static str {
        match self.measure {
            MeasureTerm::Zero => "zero",
            MeasureTerm::Kernel { .. } => "kernel",
            MeasureTerm::Pathwise { .. } => "pathwise",
        }
    }

    pub fn epsilon(&self) -> Option<f64> {
        match &self.measure {
            MeasureTerm::Pathwise { epsilon, .. } => *epsilon,
            _ => None,
        }
    }

    pub fn censored_fraction(&self) -> f64 {
        self.censored
    }

    pub fn active_nodes(&self) -> &[usize] {
        &self.active
    }

    /// `E_x[∫₀^ζ h(X_t, u(X_t)) dt] + (measure part)` at every grid node.
    /// `sweep` selects fresh streams when common random numbers are off.
    pub fn functional<H>(&self, u: &SolutionField, h: H, part: MeasurePart, sweep: u64) -> NodeEstimates
    where
        H: Fn(&[f64], f64) -> f64 + Sync,
    {
        let n = self.grid.len();
        let mut values = vec![0.0; n];
        let mut stderr = vec![0.0; n];
        let (kernel_add, path_measure): (Option<&Vec<f64>>, Option<&MeasureData>) = match (&self.measure, part) {
            (MeasureTerm::Kernel { signed, .. }, MeasurePart::Signed) => (Some(signed), None),
            (MeasureTerm::Kernel { abs, .. }, MeasurePart::Abs) => (Some(abs), None),
            (MeasureTerm::Pathwise { mu, .. }, MeasurePart::Signed) => (None, Some(mu)),
            (MeasureTerm::Pathwise { abs, .. }, MeasurePart::Abs) => (None, Some(abs)),
            _ => (None, None),
        };
        let estimates: Vec<Estimate> = match &self.engine {
            Engine::Lattice(lat) => {
                let hv: Vec<f64> = (0..lat.grid.len())
                    .map(|j| {
                        let y = lat.grid.node(j);
                        h(&y, u.eval(&y))
                    })
                    .collect();
                let m = hv.len();
                (0..self.active.len())
                    .into_par_iter()
                    .map(|a| {
                        let occ = &lat.occupation[a];
                        let sums: Vec<f64> = (0..lat.batches)
                            .map(|b| {
                                let row = &occ[b * m..(b + 1) * m];
                                let mut s = dot(row, &hv);
                                if path_measure.is_some() {
                                    s += match part {
                                        MeasurePart::Abs => lat.measure_abs[a][b],
                                        _ => lat.measure_signed[a][b],
                                    };
                                }
                                s
                            })
                            .collect();
                        Estimate::from_batches(&sums, &lat.counts)
                    })
                    .collect()
            }
            Engine::Deterministic => vec![Estimate::exact(0.0); self.active.len()],
            Engine::Pathwise => self
                .active
                .par_iter()
                .map(|&node| {
                    let x0 = self.grid.node(node);
                    let seed = self.node_seed(node, sweep);
                    let samples: Vec<f64> = (0..self.sim.paths as u64)
                        .map(|p| {
                            let mut rng = path_rng(seed, p);
                            let mut acc = 0.0;
                            self.dynamics.run(&mut rng, &x0, self.sim.max_horizon, |_, x, dt| {
                                let mut v = h(x, u.eval(x));
                                if let Some(mu) = path_measure {
                                    v += mu.smooth_density(x);
                                }
                                acc += v * dt;
                            });
                            acc
                        })
                        .collect();
                    Estimate::from_samples(&samples)
                })
                .collect(),
        };
        for (a, &node) in self.active.iter().enumerate() {
            values[node] = estimates[a].mean + kernel_add.map_or(0.0, |k| k[node]);
            stderr[node] = estimates[a].stderr;
        }
        NodeEstimates { values, stderr }
    }

    /// A-priori majorant `E_x[∫₀^ζ |f(X,0)| dt + ∫₀^ζ d|A^μ|]` per node.
    pub fn majorant(&self) -> NodeEstimates {
        let zero = SolutionField::zeros(self.domain.clone(), self.grid.clone()).expect("grid matches domain");
        let f = &self.f;
        self.functional(&zero, |x, _| f.eval(x, 0.0).abs(), MeasurePart::Abs, 0)
    }

    /// One Feynman–Kac map evaluation with `u` clipped at `y_max` inside `f`.
    pub fn map(&self, u: &SolutionField, y_max: f64, sweep: u64) -> NodeEstimates {
        let f = &self.f;
        self.functional(u, |x, y| f.eval(x, truncate(y_max, y)), MeasurePart::Signed, sweep)
    }

    pub fn field(&self, values: Vec<f64>) -> SolutionField {
        SolutionField::new(self.domain.clone(), self.grid.clone(), values).expect("finite values on the engine grid")
    }
}

fn node_seed(seed: u64, node: usize, crn: bool, sweep: u64) -> u64 {
    let s = derive_seed(seed, node as u64);
    if crn || sweep == 0 {
        s
    } else {
        derive_seed(s, sweep)
    }
}

fn batch_range(paths: usize, batches: usize, b: usize) -> std::ops::Range<usize> {
    (b * paths / batches)..((b + 1) * paths / batches)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            s[l] += a[4 * c + l] * b[4 * c + l];
        }
    }
    let mut t = (s[0] + s[1]) + (s[2] + s[3]);
    for i in 4 * chunks..a.len() {
        t += a[i] * b[i];
    }
    t
}

/// One application of the map `u ↦ E_x[∫ f(X, u(X)) dt + ∫ dA^μ]`.
pub fn feynman_kac_map(
    spec: &OperatorSpec,
    domain: &Domain,
    f: &Nonlinearity,
    u: &SolutionField,
    mu: &MeasureData,
    sim: &SimConfig,
    picard: &PicardConfig,
) -> Result<(SolutionField, Vec<f64>)> {
    let engine = FkEngine::new(spec, domain, f, mu, sim, picard)?;
    let est = engine.map(u, f64::INFINITY, 0);
    Ok((engine.field(est.values), est.stderr))
}

/// `∫_D |f(x, u(x))| dm` by Gauss–Legendre on the grid cells (Hermite
/// for Gaussian reference measures).
pub fn l1_norm(
    domain: &Domain,
    reference: &ReferenceMeasure,
    u: &SolutionField,
    g: impl Fn(&[f64], f64) -> f64,
) -> Result<f64> {
    let breaks: Vec<Vec<f64>> = (0..u.dim()).map(|k| (0..u.grid.n[k]).map(|i| u.grid.coord(k, i)).collect()).collect();
    let panels = match reference {
        ReferenceMeasure::Gaussian { .. } => 16,
        ReferenceMeasure::Lebesgue => 1,
    };
    quad::integrate(domain, reference, panels, &breaks, |x| g(x, u.eval(x)).abs())
}

/// Damped Picard iteration `u_{k+1} = (1-θ)u_k + θ·Φ(u_k)` from `u₀ = 0`.
pub fn picard_solve(
    spec: &OperatorSpec,
    domain: &Domain,
    f: &Nonlinearity,
    mu: &MeasureData,
    sim: &SimConfig,
    picard: &PicardConfig,
) -> Result<(SolutionField, SolveReport)> {
    let engine = FkEngine::new(spec, domain, f, mu, sim, picard)?;
    picard_with_engine(&engine)
}

pub fn picard_with_engine(engine: &FkEngine) -> Result<(SolutionField, SolveReport)> {
    let picard = &engine.picard;
    let mut warnings = engine.warnings.clone();
    let majorant = engine.majorant();
    let y_max = CLIP_FACTOR * majorant.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let theta = picard.damping;
    let mut u = engine.field(vec![0.0; engine.grid.len()]);
    let mut residuals = Vec::new();
    let mut stderr = vec![0.0; engine.grid.len()];
    let mut converged = false;
    if engine.f.is_zero() {
        // The map does not depend on u: one evaluation is the fixed point.
        let est = engine.map(&u, y_max, 1);
        residuals.push(est.values.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        stderr = est.stderr;
        u = engine.field(est.values);
        converged = true;
    }
    for it in 0..picard.max_iterations {
        if converged {
            break;
        }
        let est = engine.map(&u, y_max, it as u64 + 1);
        let next: Vec<f64> = u.values.iter().zip(&est.values).map(|(a, b)| (1.0 - theta) * a + theta * b).collect();
        let res = u.values.iter().zip(&next).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        residuals.push(res);
        stderr = est.stderr;
        u = engine.field(next);
        if res < picard.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NotConverged {
            iterations: residuals.len(),
            last: *residuals.last().unwrap_or(&f64::NAN),
            tolerance: picard.tolerance,
            residuals,
        });
    }
    let f = &engine.f;
    let l1_f_u = l1_norm(&engine.domain, &engine.reference, &u, |x, y| f.eval(x, y))?;
    let tv_mu = match total_variation(&engine.mu, &engine.domain, &engine.reference) {
        Ok(v) => Some(v),
        Err(Error::QuadratureFailed(msg)) => {
            warnings.push(format!("total variation of μ is not finite: {msg}"));
            None
        }
        Err(e) => return Err(e),
    };
    let report = SolveReport {
        iterations: residuals.len(),
        converged,
        sup_residuals: residuals,
        stderr,
        l1_f_u,
        tv_mu,
        y_max,
        majorant: majorant.values,
        engine: engine.engine_name().into(),
        measure_term: engine.measure_term_name().into(),
        epsilon: engine.epsilon(),
        censored_fraction: engine.censored_fraction(),
        warnings,
    };
    Ok((u, report))
}

#[derive(Clone, Debug, Serialize)]
pub struct NodeBound {
    pub x: Vec<f64>,
    pub lhs: f64,
    pub lhs_stderr: f64,
    pub rhs: f64,
    pub rhs_stderr: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ResidualReport {
    pub nodes: Vec<NodeBound>,
    pub l1_f_u: f64,
    pub l1_f0: f64,
    pub tv_mu: Option<f64>,
    pub tolerance: f64,
    pub global_pass: bool,
    pub pass: bool,
}

/// Nodewise check of `E_x∫|f_u(X)| dt ≤ E_x[∫|f(X,0)| dt + ∫d|A^μ|]` on
/// one ensemble and the global bound `‖f_u‖₁ ≤ ‖f(·,0)‖₁ + ‖μ‖_TV`.
pub fn residual_report(engine: &FkEngine, u: &SolutionField, u_stderr: &[f64]) -> Result<ResidualReport> {
    let f = &engine.f;
    let lhs = engine.functional(u, |x, y| f.eval(x, y).abs(), MeasurePart::None, 0);
    let rhs = engine.majorant();
    let nodes = engine
        .active_nodes()
        .iter()
        .map(|&i| {
            let tol = 3.0 * (lhs.stderr[i].powi(2) + rhs.stderr[i].powi(2)).sqrt();
            NodeBound {
                x: engine.grid.node(i),
                lhs: lhs.values[i],
                lhs_stderr: lhs.stderr[i],
                rhs: rhs.values[i],
                rhs_stderr: rhs.stderr[i],
                pass: lhs.values[i] <= rhs.values[i] + tol + 1e-12,
            }
        })
        .collect::<Vec<_>>();
    let l1 = l1_estimate(engine, u, u_stderr)?;
    Ok(ResidualReport {
        pass: l1.pass && nodes.iter().all(|n| n.pass),
        nodes,
        l1_f_u: l1.l1_f_u,
        l1_f0: l1.l1_f0,
        tv_mu: l1.tv_mu,
        tolerance: l1.tolerance,
        global_pass: l1.pass,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct L1Report {
    pub l1_f_u: f64,
    pub l1_f0: f64,
    pub tv_mu: Option<f64>,
    pub bound: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// `‖f_u‖_{L¹} ≤ ‖f(·,0)‖_{L¹} + ‖μ‖_TV`, with a tolerance made of the
/// quadrature allowance and the effect of a 3-stderr shift of `u`.
pub fn l1_estimate(engine: &FkEngine, u: &SolutionField, u_stderr: &[f64]) -> Result<L1Report> {
    l1_estimate_parts(&engine.domain, &engine.reference, &engine.f, &engine.mu, u, u_stderr)
}

pub fn l1_estimate_parts(
    domain: &Domain,
    reference: &ReferenceMeasure,
    f: &Nonlinearity,
    mu: &MeasureData,
    u: &SolutionField,
    u_stderr: &[f64],
) -> Result<L1Report> {
    let l1_f_u = l1_norm(domain, reference, u, |x, y| f.eval(x, y))?;
    let l1_f0 = l1_norm(domain, reference, u, |x, _| f.eval(x, 0.0))?;
    let tv_mu = total_variation(mu, domain, reference).ok();
    let shift = |sign: f64| -> Result<f64> {
        let v: Vec<f64> = u.values.iter().zip(u_stderr).map(|(a, s)| a + sign * 3.0 * s).collect();
        let w = SolutionField::new(u.domain.clone(), u.grid.clone(), v)?;
        l1_norm(domain, reference, &w, |x, y| f.eval(x, y))
    };
    let stat = if u_stderr.iter().any(|s| *s > 0.0) {
        (shift(1.0)? - l1_f_u).abs().max((shift(-1.0)? - l1_f_u).abs())
    } else {
        0.0
    };
    let bound = l1_f0 + tv_mu.unwrap_or(f64::INFINITY);
    let tolerance = stat + crate::measures::TV_REL_TOL * bound.min(1e300);
    Ok(L1Report { l1_f_u, l1_f0, tv_mu, bound, tolerance, pass: l1_f_u <= bound + tolerance })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lap() -> OperatorSpec {
        OperatorSpec::laplacian(1, 1.0)
    }

    fn small(paths: usize) -> (SimConfig, PicardConfig) {
        (
            SimConfig::new(1e-3, 20.0, 11, paths),
            PicardConfig { grid: 11, ..PicardConfig::default() },
        )
    }

    #[test]
    fn zero_data_gives_zero_field() {
        let (sim, pc) = small(100);
        let dom = Domain::unit_interval();
        let (u, rep) = picard_solve(&lap(), &dom, &Nonlinearity::zero(), &MeasureData::zero(), &sim, &pc).unwrap();
        assert!(u.values.iter().all(|v| *v == 0.0));
        assert_eq!(rep.y_max, 0.0);
        assert!(rep.converged);
    }

    #[test]
    fn lebesgue_map_matches_parabola() {
        let (sim, pc) = small(4000);
        let dom = Domain::unit_interval();
        let zero = SolutionField::sample(&dom, 11, |_| 0.0).unwrap();
        let pc = PicardConfig { measure_term: MeasureTermMode::Pathwise, ..pc };
        let (m, se) = feynman_kac_map(&lap(), &dom, &Nonlinearity::zero(), &zero, &MeasureData::constant_density(1.0), &sim, &pc).unwrap();
        let i = 5;
        assert!((m.values[i] - 0.125).abs() < 3.0 * se[i] + 2e-3, "{} ± {}", m.values[i], se[i]);
    }

    #[test]
    fn linear_driver_map() {
        let (sim, pc) = small(4000);
        let dom = Domain::unit_interval();
        let one = SolutionField::sample(&dom, 11, |_| 1.0).unwrap();
        let (m, se) = feynman_kac_map(&lap(), &dom, &Nonlinearity::linear(-1.0), &one, &MeasureData::zero(), &sim, &pc).unwrap();
        assert!((m.values[5] + 0.125).abs() < 3.0 * se[5] + 2e-3, "{} ± {}", m.values[5], se[5]);
    }

    #[test]
    fn refuses_increasing_driver() {
        let (sim, pc) = small(10);
        let err = picard_solve(&lap(), &Domain::unit_interval(), &Nonlinearity::linear(1.0), &MeasureData::zero(), &sim, &pc)
            .unwrap_err();
        assert!(matches!(err, Error::NotMonotone(_)));
        assert!(err.to_string().contains("A2"));
    }

    #[test]
    fn lattice_and_pathwise_engines_agree_under_crn() {
        let (sim, pc) = small(300);
        let dom = Domain::unit_interval();
        let u = SolutionField::sample(&dom, 11, |x| (std::f64::consts::PI * x[0]).sin()).unwrap();
        let f = Nonlinearity::new(|_, y| -y, true);
        let mu = MeasureData::zero();
        let lattice = FkEngine::new(&lap(), &dom, &f, &mu, &sim, &pc).unwrap();
        assert_eq!(lattice.engine_name(), "lattice");
        let pathwise = FkEngine::new(&lap(), &dom, &f, &mu, &sim, &PicardConfig { crn: false, ..pc }).unwrap();
        assert_eq!(pathwise.engine_name(), "pathwise");
        let a = lattice.map(&u, f64::INFINITY, 1);
        let b = pathwise.map(&u, f64::INFINITY, 0);
        for i in 1..10 {
            // Same paths; only the lattice interpolation of h differs.
            assert!((a.values[i] - b.values[i]).abs() < 1e-3, "{i}: {} vs {}", a.values[i], b.values[i]);
        }
    }

    #[test]
    fn non_convergence_carries_history() {
        let (sim, mut pc) = small(100);
        pc.max_iterations = 2;
        pc.tolerance = 1e-14;
        let err = picard_solve(&lap(), &Domain::unit_interval(), &Nonlinearity::linear(-1.0), &MeasureData::constant_density(1.0), &sim, &pc)
            .unwrap_err();
        match err {
            Error::NotConverged { residuals, .. } => assert_eq!(residuals.len(), 2),
            e => panic!("{e}"),
        }
    }
}
