//! Coefficient fields: scalar, vector and matrix valued functions of the
//! position. Constants are kept symbolic so that samplers and kernels can
//! detect the constant-coefficient case.

use std::fmt;
use std::sync::Arc;

use crate::expr::Expr;

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum ScalarField {
    Const(f64),
    Func(ScalarFn),
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarField::Const(v) => write!(f, "Const({v})"),
            ScalarField::Func(_) => write!(f, "Func(..)"),
        }
    }
}

/// Relative step for finite-difference derivatives of coefficients.
const FD_STEP: f64 = 1e-5;

impl ScalarField {
    pub fn constant(v: f64) -> Self {
        ScalarField::Const(v)
    }

    pub fn zero() -> Self {
        ScalarField::Const(0.0)
    }

    pub fn from_fn(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        ScalarField::Func(Arc::new(f))
    }

    pub fn from_expr(e: Expr) -> Self {
        match e.as_constant() {
            Some(v) => ScalarField::Const(v),
            None => ScalarField::Func(Arc::new(move |x: &[f64]| e.eval(x, 0.0))),
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            ScalarField::Const(v) => *v,
            ScalarField::Func(f) => f(x),
        }
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            ScalarField::Const(v) => Some(*v),
            ScalarField::Func(_) => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    /// Central-difference partial derivative along axis `k`.
    pub fn partial(&self, x: &[f64], k: usize) -> f64 {
        match self {
            ScalarField::Const(_) => 0.0,
            ScalarField::Func(f) => {
                let h = FD_STEP * (1.0 + x[k].abs());
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[k] += h;
                xm[k] -= h;
                (f(&xp) - f(&xm)) / (2.0 * h)
            }
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        match self {
            ScalarField::Const(v) => ScalarField::Const(s * v),
            ScalarField::Func(f) => {
                let f = f.clone();
                ScalarField::Func(Arc::new(move |x: &[f64]| s * f(x)))
            }
        }
    }
}

/// Vector field, one scalar field per component.
#[derive(Clone, Debug)]
pub struct VectorField(pub Vec<ScalarField>);

impl VectorField {
    pub fn zero(dim: usize) -> Self {
        VectorField(vec![ScalarField::zero(); dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(ScalarField::is_zero)
    }

    pub fn is_constant(&self) -> bool {
        self.0.iter().all(|c| c.as_const().is_some())
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.0) {
            *o = c.eval(x);
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.0.iter().map(|c| c.eval(x)).collect()
    }

    pub fn divergence(&self, x: &[f64]) -> f64 {
        self.0.iter().enumerate().map(|(k, c)| c.partial(x, k)).sum()
    }
}

/// Square matrix field stored row-major.
#[derive(Clone, Debug)]
pub struct MatrixField {
    pub dim: usize,
    pub entries: Vec<ScalarField>,
}

impl MatrixField {
    pub fn new(dim: usize, entries: Vec<ScalarField>) -> Self {
        assert_eq!(entries.len(), dim * dim, "matrix field needs dim² entries");
        Self { dim, entries }
    }

    pub fn scaled_identity(dim: usize, s: f64) -> Self {
        let entries = (0..dim * dim)
            .map(|k| ScalarField::Const(if k / dim == k % dim { s } else { 0.0 }))
            .collect();
        Self { dim, entries }
    }

    pub fn constant(dim: usize, values: &[f64]) -> Self {
        assert_eq!(values.len(), dim * dim);
        Self {
            dim,
            entries: values.iter().map(|&v| ScalarField::Const(v)).collect(),
        }
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> &ScalarField {
        &self.entries[i * self.dim + j]
    }

    pub fn is_constant(&self) -> bool {
        self.entries.iter().all(|c| c.as_const().is_some())
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.entries) {
            *o = c.eval(x);
        }
    }

    /// Symmetric part `(a + aᵀ)/2` at `x`, row-major.
    pub fn symmetric_part(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut a = vec![0.0; d * d];
        self.eval_into(x, &mut a);
        let mut s = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                s[i * d + j] = 0.5 * (a[i * d + j] + a[j * d + i]);
            }
        }
        s
    }

    /// Antisymmetric part `(a - aᵀ)/2` at `x`, row-major.
    pub fn antisymmetric_part(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut a = vec![0.0; d * d];
        self.eval_into(x, &mut a);
        let mut s = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                s[i * d + j] = 0.5 * (a[i * d + j] - a[j * d + i]);
            }
        }
        s
    }

    /// Column divergence `Σ_i ∂_i a_ij` for each `j`.
    pub fn column_divergence(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|j| (0..d).map(|i| self.entry(i, j).partial(x, i)).sum())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expression_fields_fold_constants() {
        let c = ScalarField::from_expr(Expr::parse("2*3").unwrap());
        assert_eq!(c.as_const(), Some(6.0));
        let f = ScalarField::from_expr(Expr::parse("x1^2").unwrap());
        assert!(f.as_const().is_none());
        assert!((f.partial(&[1.5], 0) - 3.0).abs() < 1e-8);
    }

    #[test]
    fn rotation_field_is_divergence_free() {
        let b = VectorField(vec![
            ScalarField::from_fn(|x| x[1]),
            ScalarField::from_fn(|x| -x[0]),
        ]);
        assert!(b.divergence(&[0.3, -0.7]).abs() < 1e-9);
    }

    #[test]
    fn matrix_parts() {
        let m = MatrixField::constant(2, &[1.0, 2.0, 0.0, 3.0]);
        assert_eq!(m.symmetric_part(&[0.0, 0.0]), vec![1.0, 1.0, 1.0, 3.0]);
        assert_eq!(m.antisymmetric_part(&[0.0, 0.0]), vec![0.0, 1.0, -1.0, 0.0]);
    }
}
