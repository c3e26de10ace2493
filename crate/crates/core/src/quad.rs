//! Deterministic quadrature: composite Gauss–Legendre on boxes (with
//! user breakpoints so piecewise-polynomial integrands are integrated
//! exactly) and tensor Gauss–Hermite for Gaussian reference measures.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::domain::Domain;
use crate::error::{Error, Result};

/// Reference measure `m` against which densities are expressed.
#[derive(Clone, Debug, PartialEq)]
pub enum ReferenceMeasure {
    Lebesgue,
    /// Centered Gaussian with the given covariance.
    Gaussian { cov: DMatrix<f64> },
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Probabilists' Gauss–Hermite rule: `Σ w_i g(z_i) ≈ E g(Z)`, `Z ~ N(0,1)`.
pub fn gauss_hermite_prob(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        j[(k - 1, k)] = b;
        j[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

const ORDER: usize = 8;

/// Panel edges of `[a, b]`: `panels` uniform pieces refined at `breaks`.
fn panel_edges(a: f64, b: f64, panels: usize, breaks: &[f64]) -> Vec<f64> {
    let mut e: Vec<f64> = (0..=panels)
        .map(|i| a + (b - a) * i as f64 / panels as f64)
        .collect();
    e.extend(breaks.iter().copied().filter(|&t| t > a && t < b));
    e.sort_by(f64::total_cmp);
    e.dedup_by(|x, y| (*x - *y).abs() <= 1e-14 * (b - a));
    e
}

/// Tensor nodes and weights of composite Gauss–Legendre on one axis.
fn axis_rule(a: f64, b: f64, panels: usize, breaks: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (gx, gw) = gauss_legendre(ORDER);
    let edges = panel_edges(a, b, panels, breaks);
    let mut xs = Vec::with_capacity((edges.len() - 1) * ORDER);
    let mut ws = Vec::with_capacity(xs.capacity());
    for p in edges.windows(2) {
        let (l, r) = (p[0], p[1]);
        let (c, h) = (0.5 * (l + r), 0.5 * (r - l));
        for (x, w) in gx.iter().zip(&gw) {
            xs.push(c + h * x);
            ws.push(h * w);
        }
    }
    (xs, ws)
}

/// `∫_box g` by tensor composite Gauss–Legendre.
pub fn integrate_box(
    lo: &[f64],
    hi: &[f64],
    panels: usize,
    breaks: &[Vec<f64>],
    mut g: impl FnMut(&[f64]) -> f64,
) -> f64 {
    let d = lo.len();
    let rules: Vec<(Vec<f64>, Vec<f64>)> = (0..d)
        .map(|k| axis_rule(lo[k], hi[k], panels, breaks.get(k).map_or(&[][..], |b| b)))
        .collect();
    let mut idx = vec![0usize; d];
    let mut x = vec![0.0; d];
    let mut acc = Vec::new();
    loop {
        let mut w = 1.0;
        for k in 0..d {
            x[k] = rules[k].0[idx[k]];
            w *= rules[k].1[idx[k]];
        }
        acc.push(w * g(&x));
        let mut k = 0;
        loop {
            if k == d {
                return crate::sum::pairwise_sum(&acc);
            }
            idx[k] += 1;
            if idx[k] < rules[k].0.len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// `E g(X)` for `X ~ N(0, cov)` by tensor Gauss–Hermite of order `order`.
pub fn integrate_gaussian(cov: &DMatrix<f64>, order: usize, mut g: impl FnMut(&[f64]) -> f64) -> Result<f64> {
    let d = cov.nrows();
    let chol = nalgebra::Cholesky::new(cov.clone())
        .ok_or_else(|| Error::InvalidArgument("Gaussian covariance is not positive definite".into()))?;
    let l = chol.l();
    let (z, w) = gauss_hermite_prob(order);
    let mut idx = vec![0usize; d];
    let mut zz = vec![0.0; d];
    let mut x = vec![0.0; d];
    let mut acc = Vec::new();
    loop {
        let mut wt = 1.0;
        for k in 0..d {
            zz[k] = z[idx[k]];
            wt *= w[idx[k]];
        }
        for i in 0..d {
            x[i] = (0..=i).map(|j| l[(i, j)] * zz[j]).sum();
        }
        acc.push(wt * g(&x));
        let mut k = 0;
        loop {
            if k == d {
                return Ok(crate::sum::pairwise_sum(&acc));
            }
            idx[k] += 1;
            if idx[k] < order {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// `∫_D g dm` at a fixed resolution (`panels` per axis, or Hermite order
/// `8·panels` for Gaussian reference measures).
pub fn integrate(
    domain: &Domain,
    reference: &ReferenceMeasure,
    panels: usize,
    breaks: &[Vec<f64>],
    mut g: impl FnMut(&[f64]) -> f64,
) -> Result<f64> {
    match (domain, reference) {
        (Domain::FullSpace { .. }, ReferenceMeasure::Gaussian { cov }) => {
            integrate_gaussian(cov, (ORDER * panels).min(200), g)
        }
        (Domain::FullSpace { .. }, ReferenceMeasure::Lebesgue) => Err(Error::Unsupported(
            "Lebesgue integrals over the full space".into(),
        )),
        (_, ReferenceMeasure::Gaussian { .. }) => Err(Error::Unsupported(
            "Gaussian reference measure on a bounded domain".into(),
        )),
        (Domain::Ball { .. }, ReferenceMeasure::Lebesgue) => {
            let (lo, hi) = domain.bounding_box().expect("bounded");
            Ok(integrate_box(&lo, &hi, panels, breaks, |x| {
                if domain.contains(x) {
                    g(x)
                } else {
                    0.0
                }
            }))
        }
        (_, ReferenceMeasure::Lebesgue) => {
            let (lo, hi) = domain.bounding_box().expect("bounded");
            Ok(integrate_box(&lo, &hi, panels, breaks, g))
        }
    }
}

/// Refine until two successive resolutions agree to `rel_tol`; error if
/// they never do.
pub fn integrate_adaptive(
    domain: &Domain,
    reference: &ReferenceMeasure,
    breaks: &[Vec<f64>],
    rel_tol: f64,
    g: impl Fn(&[f64]) -> f64,
) -> Result<f64> {
    let d = domain.dim();
    let max_level = match d {
        1 => 11,
        2 => 6,
        _ => 3,
    };
    let mut prev = integrate(domain, reference, 2, breaks, &g)?;
    let mut panels = 2;
    for _ in 0..max_level {
        panels *= 2;
        if matches!(reference, ReferenceMeasure::Gaussian { .. }) && ORDER * panels > 200 {
            break;
        }
        let cur = integrate(domain, reference, panels, breaks, &g)?;
        if !cur.is_finite() {
            return Err(Error::QuadratureFailed("integrand is not finite".into()));
        }
        let scale = cur.abs().max(prev.abs());
        if (cur - prev).abs() <= rel_tol * scale || scale < 1e-300 {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(Error::QuadratureFailed(format!(
        "no convergence to relative tolerance {rel_tol:e} after refinement (last value {prev})"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert!((s - 2.0 / 15.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn hermite_moments() {
        let (z, w) = gauss_hermite_prob(10);
        let m2: f64 = z.iter().zip(&w).map(|(z, w)| w * z * z).sum();
        let m4: f64 = z.iter().zip(&w).map(|(z, w)| w * z.powi(4)).sum();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-13);
        assert!((m2 - 1.0).abs() < 1e-12);
        assert!((m4 - 3.0).abs() < 1e-11);
    }

    #[test]
    fn breakpoints_make_kinks_exact() {
        let v = integrate_box(&[0.0], &[1.0], 1, &[vec![0.3]], |x| (x[0] - 0.3).abs());
        assert!((v - (0.045 + 0.245)).abs() < 1e-15);
    }

    #[test]
    fn adaptive_reports_divergence() {
        let d = Domain::unit_interval();
        let r = integrate_adaptive(&d, &ReferenceMeasure::Lebesgue, &[], 1e-3, |x| 1.0 / x[0].min(1.0 - x[0]));
        assert!(matches!(r, Err(Error::QuadratureFailed(_))));
    }
}
