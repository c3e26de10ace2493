//! Checks of the backward-equation representation `u(X_t) = Y_t`: the
//! martingale property of the compensated process, the horizon-truncated
//! scheme, and the driver `L¹` bounds.

use rayon::prelude::*;
use serde::Serialize;

use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::grid::SolutionField;
use crate::measures::{mollify, MeasureData, Nonlinearity};
use crate::operators::OperatorSpec;
use crate::process::{Dynamics, HorizonPolicy, SimConfig};
use crate::rng::{derive_seed, path_rng};
use crate::solver::{picard_solve, MeasureTermMode, PicardConfig};
use crate::sum::Estimate;

pub const CHECKPOINTS: usize = 8;
const PILOT_PATHS: usize = 2000;
const PILOT_SALT: u64 = 0x9d107;

#[derive(Clone, Debug, Serialize)]
pub struct MartingaleReport {
    pub x0: Vec<f64>,
    pub u_x0: f64,
    pub checkpoint_times: Vec<f64>,
    pub ensemble_means: Vec<f64>,
    pub stderr: Vec<f64>,
    pub max_drift: f64,
    pub pass: bool,
    /// Quantiles (50%, 90%, 99%, 99.9%, max) of `sup_t |Z_t|`; a class-(D)
    /// diagnostic without a threshold.
    pub sup_abs_z_quantiles: Vec<f64>,
    /// `E sup_t |u(X_t)|^q` for `q = ½`; diagnostic only.
    pub sup_u_moment_half: Estimate,
    pub epsilon: Option<f64>,
}

impl MartingaleReport {
    /// Pass criterion with the allowance widened by the Monte Carlo error
    /// `solution_stderr` of the tested field itself.
    pub fn pass_with_solution_error(&self, solution_stderr: f64) -> bool {
        self.ensemble_means
            .iter()
            .zip(&self.stderr)
            .all(|(m, s)| (m - self.u_x0).abs() <= 3.0 * (s * s + solution_stderr * solution_stderr).sqrt())
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let i = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[i]
}

/// Measure with atoms replaced by bumps, ready for pathwise integration.
fn pathwise_measure(mu: &MeasureData, domain: &Domain, spec: &OperatorSpec, sim: &SimConfig, epsilon: Option<f64>) -> Result<(MeasureData, Option<f64>)> {
    if mu.has_atoms() {
        let eps = epsilon.unwrap_or(2.0 * sim.dt.sqrt());
        Ok((mollify(mu, eps, domain, &spec.reference_measure()?)?, Some(eps)))
    } else {
        Ok((mu.clone(), None))
    }
}

/// Geometric checkpoints `q·2^{-7}, ..., q` snapped to the time grid,
/// with `q` the 95% quantile of the lifetime from a pilot run.
pub fn default_checkpoints(dyn_: &Dynamics, x0: &[f64], sim: &SimConfig) -> Vec<f64> {
    let seed = derive_seed(sim.seed, PILOT_SALT);
    let mut life: Vec<f64> = (0..PILOT_PATHS.min(sim.paths.max(100)) as u64)
        .into_par_iter()
        .map(|p| dyn_.run(&mut path_rng(seed, p), x0, sim.max_horizon, |_, _, _| {}).lifetime)
        .collect();
    life.sort_by(f64::total_cmp);
    let q95 = quantile(&life, 0.95).max(sim.dt);
    let mut ts: Vec<f64> = (0..CHECKPOINTS)
        .map(|j| {
            let t = q95 * 2f64.powi(j as i32 - (CHECKPOINTS as i32 - 1));
            (t / sim.dt).round().max(1.0) * sim.dt
        })
        .collect();
    ts.dedup();
    ts
}

/// Ensemble means of `Z_t = u(X_{t∧ζ}) + ∫₀^{t∧ζ} f(X, u(X)) ds + A^μ_{t∧ζ}`
/// at the checkpoints; for the true solution they all equal `u(x₀)`.
#[allow(clippy::too_many_arguments)]
pub fn martingale_residual(
    u: &SolutionField,
    spec: &OperatorSpec,
    domain: &Domain,
    x0: &[f64],
    f: &Nonlinearity,
    mu: &MeasureData,
    sim: &SimConfig,
    checkpoints: Option<&[f64]>,
    epsilon: Option<f64>,
) -> Result<MartingaleReport> {
    sim.validate()?;
    if !domain.contains(x0) {
        return Err(Error::NotInterior(x0.to_vec()));
    }
    let dyn_ = Dynamics::new(spec, domain, sim.dt)?;
    let (mu, eps) = pathwise_measure(mu, domain, spec, sim, epsilon)?;
    let times: Vec<f64> = match checkpoints {
        Some(ts) => ts.iter().map(|t| (t / sim.dt).round().max(1.0) * sim.dt).collect(),
        None => default_checkpoints(&dyn_, x0, sim),
    };
    let steps: Vec<u64> = times.iter().map(|t| (t / sim.dt).round() as u64).collect();
    let horizon = sim.max_horizon.max(times.last().copied().unwrap_or(0.0) + sim.dt);
    let u0 = u.eval(x0);
    let seed = derive_seed(sim.seed, 0x3a7);
    let nc = times.len();
    let records: Vec<(Vec<f64>, f64, f64)> = (0..sim.paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(seed, p);
            let mut z = vec![f64::NAN; nc];
            let mut acc = 0.0;
            let mut sup_z: f64 = 0.0;
            let mut sup_u: f64 = 0.0;
            let mut next = 0;
            dyn_.run(&mut rng, x0, horizon, |t, x, w| {
                let ux = u.eval(x);
                let h = f.eval(x, ux) + mu.smooth_density(x);
                let k = (t / sim.dt).round() as u64;
                // trapezoid up to t_k: the weight of X_{t_k} itself is half a step
                let zk = ux + acc + if k > 0 { 0.5 * sim.dt * h } else { 0.0 };
                while next < nc && steps[next] <= k {
                    z[next] = zk;
                    next += 1;
                }
                sup_z = sup_z.max(zk.abs());
                sup_u = sup_u.max(ux.abs());
                acc += h * w;
            });
            for v in z.iter_mut().skip(next) {
                *v = acc;
            }
            sup_z = sup_z.max(acc.abs());
            (z, sup_z, sup_u.sqrt())
        })
        .collect();
    let mut means = Vec::with_capacity(nc);
    let mut errs = Vec::with_capacity(nc);
    for c in 0..nc {
        let col: Vec<f64> = records.iter().map(|r| r.0[c]).collect();
        let e = Estimate::from_samples(&col);
        means.push(e.mean);
        errs.push(e.stderr);
    }
    let max_drift = means.iter().fold(0.0f64, |m, v| m.max((v - u0).abs()));
    let pass = means.iter().zip(&errs).all(|(m, s)| (m - u0).abs() <= 3.0 * s);
    let mut sups: Vec<f64> = records.iter().map(|r| r.1).collect();
    sups.sort_by(f64::total_cmp);
    let tails = [0.5, 0.9, 0.99, 0.999, 1.0].iter().map(|&q| quantile(&sups, q)).collect();
    let moments: Vec<f64> = records.iter().map(|r| r.2).collect();
    Ok(MartingaleReport {
        x0: x0.to_vec(),
        u_x0: u0,
        checkpoint_times: times,
        ensemble_means: means,
        stderr: errs,
        max_drift,
        pass,
        sup_abs_z_quantiles: tails,
        sup_u_moment_half: Estimate::from_samples(&moments),
        epsilon: eps,
    })
}

/// `u + amplitude·hat`, the hat centred at `center` with half-width a
/// quarter of the shortest side of the grid box.
pub fn corrupt_with_bump(u: &SolutionField, center: &[f64], amplitude: f64) -> SolutionField {
    let w = (0..u.dim()).map(|k| u.grid.hi[k] - u.grid.lo[k]).fold(f64::INFINITY, f64::min) * 0.25;
    let mut out = u.clone();
    for (i, v) in out.values.iter_mut().enumerate() {
        let x = u.grid.node(i);
        if !u.domain.contains(&x) {
            continue;
        }
        let hat: f64 = x.iter().zip(center).map(|(a, c)| (1.0 - (a - c).abs() / w).max(0.0)).product();
        *v += amplitude * hat;
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct HorizonRung {
    pub horizon: f64,
    pub value: f64,
    pub stderr: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct HorizonReport {
    pub rungs: Vec<HorizonRung>,
    /// Last two rungs agree within three combined standard errors.
    pub stabilized: bool,
    /// Nondecreasing within three combined standard errors.
    pub monotone: bool,
}

fn interpolate_stderr(u: &SolutionField, stderr: &[f64], x: &[f64]) -> f64 {
    let mut v = 0.0;
    u.grid.for_each_corner(x, |i, w| v += w * stderr[i]);
    v
}

/// Full Picard solves with paths cut at each horizon `n` (the cut mass
/// contributes nothing), reporting `uⁿ(x₀)`.
#[allow(clippy::too_many_arguments)]
pub fn horizon_truncation(
    spec: &OperatorSpec,
    domain: &Domain,
    x0: &[f64],
    f: &Nonlinearity,
    mu: &MeasureData,
    horizons: &[f64],
    sim: &SimConfig,
    picard: &PicardConfig,
) -> Result<HorizonReport> {
    if horizons.windows(2).any(|w| !(w[0] < w[1])) || horizons.is_empty() {
        return Err(Error::InvalidArgument("horizons must be strictly increasing".into()));
    }
    let picard = PicardConfig { measure_term: MeasureTermMode::Pathwise, ..picard.clone() };
    let mut rungs = Vec::with_capacity(horizons.len());
    for &n in horizons {
        let sim_n = SimConfig { max_horizon: n, horizon_policy: HorizonPolicy::Truncate, ..sim.clone() };
        let (u, rep) = picard_solve(spec, domain, f, mu, &sim_n, &picard)?;
        rungs.push(HorizonRung {
            horizon: n,
            value: u.eval(x0),
            stderr: interpolate_stderr(&u, &rep.stderr, x0),
            iterations: rep.iterations,
        });
    }
    let close = |a: &HorizonRung, b: &HorizonRung| 3.0 * (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
    let monotone = rungs.windows(2).all(|w| w[1].value >= w[0].value - close(&w[0], &w[1]));
    let stabilized = match rungs.len() {
        0 | 1 => false,
        k => (rungs[k - 1].value - rungs[k - 2].value).abs() <= close(&rungs[k - 1], &rungs[k - 2]),
    };
    Ok(HorizonReport { rungs, stabilized, monotone })
}

#[derive(Clone, Debug, Serialize)]
pub struct DriverBoundReport {
    pub x0: Vec<f64>,
    /// `E ∫₀^ζ |f(X, u(X))| dt`.
    pub lhs: Estimate,
    /// `E[∫₀^ζ |f(X, 0)| dt + ∫₀^ζ d|A^μ|]`.
    pub rhs: Estimate,
    pub u_x0: f64,
    pub integral_pass: bool,
    pub sup_pass: bool,
    pub pass: bool,
}

/// Both sides of the driver bound on one ensemble from `x₀`, and
/// `|u(x₀)| ≤ E[∫|f(X,0)| + d|A^μ|]`.
#[allow(clippy::too_many_arguments)]
pub fn driver_l1_bound_check(
    u: &SolutionField,
    spec: &OperatorSpec,
    domain: &Domain,
    x0: &[f64],
    f: &Nonlinearity,
    mu: &MeasureData,
    sim: &SimConfig,
    epsilon: Option<f64>,
) -> Result<DriverBoundReport> {
    sim.validate()?;
    if !domain.contains(x0) {
        return Err(Error::NotInterior(x0.to_vec()));
    }
    let dyn_ = Dynamics::new(spec, domain, sim.dt)?;
    let (mu, _) = pathwise_measure(mu, domain, spec, sim, epsilon)?;
    let abs = mu.abs();
    let seed = derive_seed(sim.seed, 0x1b0);
    let pairs: Vec<(f64, f64)> = (0..sim.paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(seed, p);
            let (mut l, mut r) = (0.0, 0.0);
            dyn_.run(&mut rng, x0, sim.max_horizon, |_, x, dt| {
                l += f.eval(x, u.eval(x)).abs() * dt;
                r += (f.eval(x, 0.0).abs() + abs.smooth_density(x)) * dt;
            });
            (l, r)
        })
        .collect();
    let l: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let r: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let diff: Vec<f64> = pairs.iter().map(|p| p.0 - p.1).collect();
    let (lhs, rhs, d) = (Estimate::from_samples(&l), Estimate::from_samples(&r), Estimate::from_samples(&diff));
    let u_x0 = u.eval(x0);
    let integral_pass = d.mean <= 3.0 * d.stderr + 1e-12;
    let sup_pass = u_x0.abs() <= rhs.mean + 3.0 * rhs.stderr;
    Ok(DriverBoundReport {
        x0: x0.to_vec(),
        lhs,
        rhs,
        u_x0,
        integral_pass,
        sup_pass,
        pass: integral_pass && sup_pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn unit() -> Domain {
        Domain::unit_interval()
    }

    fn lap() -> OperatorSpec {
        OperatorSpec::laplacian(1, 1.0)
    }

    #[test]
    fn zero_problem_has_no_drift() {
        let u = SolutionField::sample(&unit(), 21, |_| 0.0).unwrap();
        let sim = SimConfig::new(1e-3, 10.0, 1, 500);
        let r = martingale_residual(&u, &lap(), &unit(), &[0.5], &Nonlinearity::zero(), &MeasureData::zero(), &sim, None, None)
            .unwrap();
        assert_eq!(r.max_drift, 0.0);
        assert!(r.pass);
        assert_eq!(r.checkpoint_times.len(), r.ensemble_means.len());
    }

    #[test]
    fn exact_solution_passes_and_bump_fails() {
        let u = SolutionField::sample(&unit(), 201, |x| x[0] * (1.0 - x[0]) / 2.0).unwrap();
        let mu = MeasureData::constant_density(1.0);
        let sim = SimConfig::new(1e-3, 10.0, 2, 20_000);
        let r = martingale_residual(&u, &lap(), &unit(), &[0.5], &Nonlinearity::zero(), &mu, &sim, None, None).unwrap();
        assert!(r.pass, "{r:?}");
        let bad = corrupt_with_bump(&u, &[0.5], 0.1);
        assert!((bad.eval(&[0.5]) - 0.225).abs() < 1e-12);
        let r = martingale_residual(&bad, &lap(), &unit(), &[0.5], &Nonlinearity::zero(), &mu, &sim, None, None).unwrap();
        assert!(!r.pass);
        assert!(r.max_drift > 0.05);
    }

    #[test]
    fn horizon_ladder_zero_and_ou() {
        let picard = PicardConfig { grid: 5, ..PicardConfig::default() };
        let sim = SimConfig::new(1e-3, 1.0, 4, 500);
        let r = horizon_truncation(&lap(), &unit(), &[0.5], &Nonlinearity::zero(), &MeasureData::zero(), &[0.1, 0.2], &sim, &picard)
            .unwrap();
        assert!(r.rungs.iter().all(|g| g.value == 0.0));
        assert!(horizon_truncation(&lap(), &unit(), &[0.5], &Nonlinearity::zero(), &MeasureData::zero(), &[0.2, 0.1], &sim, &picard)
            .is_err());

        let ou = OperatorSpec::ornstein_uhlenbeck(DMatrix::from_element(1, 1, -1.0), DMatrix::from_element(1, 1, 2.0), 1.0);
        let full = Domain::FullSpace { dim: 1 };
        let sim = SimConfig::new(0.05, 1.0, 4, 20_000);
        let picard = PicardConfig { grid: 5, ..PicardConfig::default() };
        let hs = [0.5, 1.0, 2.0];
        let r = horizon_truncation(&ou, &full, &[0.0], &Nonlinearity::zero(), &MeasureData::constant_density(1.0), &hs, &sim, &picard)
            .unwrap();
        for g in &r.rungs {
            let exact = 1.0 - (-g.horizon).exp();
            assert!((g.value - exact).abs() <= 3.0 * g.stderr + 1e-9, "{g:?} vs {exact}");
        }
        assert!(r.monotone);
    }

    #[test]
    fn driver_bound_linear_cases() {
        let u = SolutionField::sample(&unit(), 101, |x| x[0] * (1.0 - x[0]) / 2.0).unwrap();
        let mu = MeasureData::constant_density(1.0);
        let sim = SimConfig::new(1e-3, 10.0, 6, 10_000);
        let r = driver_l1_bound_check(&u, &lap(), &unit(), &[0.5], &Nonlinearity::zero(), &mu, &sim, None).unwrap();
        assert_eq!(r.lhs.mean, 0.0);
        assert!(r.pass);
        assert!((r.rhs.mean - 0.125).abs() < 3.0 * r.rhs.stderr + 2e-3, "{:?}", r.rhs);
        let r = driver_l1_bound_check(&u, &lap(), &unit(), &[0.5], &Nonlinearity::linear(-1.0), &mu, &sim, None).unwrap();
        assert!(r.lhs.mean > 0.0 && r.pass);
    }
}
