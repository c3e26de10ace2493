//! Uniform tensor grids and grid-sampled solution fields.

use serde::{Deserialize, Serialize};

use crate::domain::Domain;
use crate::error::{Error, Result};

const MAX_DIM: usize = 8;

/// Tensor grid with `n[k]` equispaced nodes on `[lo[k], hi[k]]`,
/// endpoints included. Node `0` is the lower corner; axis 0 varies fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformGrid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub n: Vec<usize>,
}

impl UniformGrid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, n: Vec<usize>) -> Result<Self> {
        if lo.len() != hi.len() || lo.len() != n.len() || lo.is_empty() || lo.len() > MAX_DIM {
            return Err(Error::InvalidArgument("grid corner/size dimensions disagree".into()));
        }
        if n.iter().any(|&k| k < 2) {
            return Err(Error::GridTooCoarse("need at least 2 nodes per axis".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h)) {
            return Err(Error::InvalidArgument("grid needs lo < hi".into()));
        }
        Ok(Self { lo, hi, n })
    }

    /// Grid with `n` nodes per axis over the bounding box of a bounded domain.
    pub fn for_domain(domain: &Domain, n: usize) -> Result<Self> {
        let (lo, hi) = domain.bounding_box().ok_or_else(|| {
            Error::InvalidArgument("unbounded domain needs an explicit grid box".into())
        })?;
        let d = lo.len();
        Self::new(lo, hi, vec![n; d])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn len(&self) -> usize {
        self.n.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, k: usize) -> f64 {
        (self.hi[k] - self.lo[k]) / (self.n[k] - 1) as f64
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut m = Vec::with_capacity(self.dim());
        for &nk in &self.n {
            m.push(idx % nk);
            idx /= nk;
        }
        m
    }

    pub fn flat_index(&self, m: &[usize]) -> usize {
        let mut idx = 0;
        let mut stride = 1;
        for (k, &mk) in m.iter().enumerate() {
            idx += mk * stride;
            stride *= self.n[k];
        }
        idx
    }

    pub fn stride(&self, k: usize) -> usize {
        self.n[..k].iter().product()
    }

    pub fn coord(&self, k: usize, i: usize) -> f64 {
        if i + 1 == self.n[k] {
            self.hi[k]
        } else {
            self.lo[k] + i as f64 * self.spacing(k)
        }
    }

    pub fn node(&self, idx: usize) -> Vec<f64> {
        self.multi_index(idx)
            .iter()
            .enumerate()
            .map(|(k, &i)| self.coord(k, i))
            .collect()
    }

    pub fn nodes(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    /// True when the node lies on the boundary of the grid box.
    pub fn on_box_boundary(&self, idx: usize) -> bool {
        self.multi_index(idx)
            .iter()
            .enumerate()
            .any(|(k, &i)| i == 0 || i + 1 == self.n[k])
    }

    /// Index of the node at `x`, if `x` coincides with a node up to `tol`
    /// (relative to the spacing).
    pub fn node_at(&self, x: &[f64], tol: f64) -> Option<usize> {
        let mut m = Vec::with_capacity(self.dim());
        for k in 0..self.dim() {
            let s = (x[k] - self.lo[k]) / self.spacing(k);
            let r = s.round();
            if (s - r).abs() > tol || r < 0.0 || r as usize >= self.n[k] {
                return None;
            }
            m.push(r as usize);
        }
        Some(self.flat_index(&m))
    }

    /// Visit the multilinear interpolation stencil of `x` (clamped into
    /// the box): calls `visit(node_index, weight)` for each of the `2^d`
    /// cell corners.
    #[inline]
    pub fn for_each_corner(&self, x: &[f64], mut visit: impl FnMut(usize, f64)) {
        let d = self.dim();
        if d == 1 {
            let h = self.spacing(0);
            let s = ((x[0] - self.lo[0]) / h).clamp(0.0, (self.n[0] - 1) as f64);
            let i = (s.floor() as usize).min(self.n[0] - 2);
            let t = s - i as f64;
            visit(i, 1.0 - t);
            visit(i + 1, t);
            return;
        }
        let mut base = [0usize; MAX_DIM];
        let mut frac = [0f64; MAX_DIM];
        let mut strides = [0usize; MAX_DIM];
        let mut stride = 1;
        for k in 0..d {
            let h = self.spacing(k);
            let s = ((x[k] - self.lo[k]) / h).clamp(0.0, (self.n[k] - 1) as f64);
            let i = (s.floor() as usize).min(self.n[k] - 2);
            base[k] = i;
            frac[k] = s - i as f64;
            strides[k] = stride;
            stride *= self.n[k];
        }
        let origin: usize = (0..d).map(|k| base[k] * strides[k]).sum();
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = origin;
            for k in 0..d {
                if corner >> k & 1 == 1 {
                    w *= frac[k];
                    idx += strides[k];
                } else {
                    w *= 1.0 - frac[k];
                }
            }
            visit(idx, w);
        }
    }
}

/// Grid-sampled candidate solution with multilinear interpolation.
///
/// On a bounded domain the field is zero outside the closed domain
/// (Dirichlet exterior condition) and grid nodes outside the domain carry
/// value zero. On the full space the evaluation point is clamped into the
/// grid box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionField {
    pub domain: Domain,
    pub grid: UniformGrid,
    pub values: Vec<f64>,
}

impl SolutionField {
    pub fn new(domain: Domain, grid: UniformGrid, values: Vec<f64>) -> Result<Self> {
        if grid.dim() != domain.dim() {
            return Err(Error::InvalidArgument("grid and domain dimensions differ".into()));
        }
        if values.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "{} values for {} grid nodes",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("solution values must be finite".into()));
        }
        Ok(Self { domain, grid, values })
    }

    pub fn zeros(domain: Domain, grid: UniformGrid) -> Result<Self> {
        let n = grid.len();
        Self::new(domain, grid, vec![0.0; n])
    }

    /// Sample `u` at the grid nodes; nodes outside the closed domain get 0.
    pub fn from_fn(domain: Domain, grid: UniformGrid, u: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..grid.len())
            .map(|i| {
                let x = grid.node(i);
                if domain.contains_closed(&x) {
                    u(&x)
                } else {
                    0.0
                }
            })
            .collect();
        Self::new(domain, grid, values)
    }

    /// Convenience: `n` nodes per axis over a bounded domain.
    pub fn sample(domain: &Domain, n: usize, u: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let grid = UniformGrid::for_domain(domain, n)?;
        Self::from_fn(domain.clone(), grid, u)
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        if self.domain.is_bounded() && !self.domain.contains_closed(x) {
            return 0.0;
        }
        let mut acc = 0.0;
        self.grid.for_each_corner(x, |i, w| acc += w * self.values[i]);
        acc
    }

    /// Indices of nodes in the open domain (the unknowns of a solve).
    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.grid.len())
            .filter(|&i| self.domain.contains(&self.grid.node(i)))
            .collect()
    }

    pub fn map(&self, g: impl Fn(f64) -> f64) -> Self {
        Self {
            domain: self.domain.clone(),
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| g(v)).collect(),
        }
    }

    /// Nodewise truncation `T_k u`.
    pub fn truncated(&self, k: f64) -> Self {
        self.map(|v| crate::measures::truncate(k, v))
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_roundtrip() {
        let g = UniformGrid::new(vec![0.0, 0.0], vec![1.0, 2.0], vec![3, 5]).unwrap();
        for i in 0..g.len() {
            assert_eq!(g.flat_index(&g.multi_index(i)), i);
        }
        assert_eq!(g.node(g.len() - 1), vec![1.0, 2.0]);
        assert_eq!(g.node_at(&[0.5, 1.0], 1e-9), Some(g.flat_index(&[1, 2])));
    }

    #[test]
    fn linear_fields_interpolate_exactly() {
        let d = Domain::Box { lo: vec![0.0, 0.0], hi: vec![1.0, 1.0] };
        let u = SolutionField::sample(&d, 6, |x| 1.0 + 2.0 * x[0] - x[1]).unwrap();
        let v = u.eval(&[0.33, 0.71]);
        assert!((v - (1.0 + 0.66 - 0.71)).abs() < 1e-12);
    }

    #[test]
    fn zero_outside_bounded_domain() {
        let u = SolutionField::sample(&Domain::unit_interval(), 11, |_| 1.0).unwrap();
        assert_eq!(u.eval(&[1.2]), 0.0);
        assert_eq!(u.eval(&[0.5]), 1.0);
        assert_eq!(u.interior_nodes().len(), 9);
    }

    #[test]
    fn full_space_clamps() {
        let d = Domain::FullSpace { dim: 1 };
        let g = UniformGrid::new(vec![-1.0], vec![1.0], vec![3]).unwrap();
        let u = SolutionField::from_fn(d, g, |x| x[0]).unwrap();
        assert_eq!(u.eval(&[5.0]), 1.0);
        assert_eq!(u.interior_nodes().len(), 3);
    }
}
