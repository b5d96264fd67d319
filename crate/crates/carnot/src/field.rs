//! Scalar fields on coordinate space: the common interface consumed by the
//! derivative checks, boundary data, and grid sampling. Closed-form fields
//! carry exact jets; expression-backed fields fall back to central
//! differences.

use nalgebra::{DMatrix, DVector};

use crate::expr::{EvalError, Expression};
use crate::frame::Jet2;

pub trait ScalarField: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> f64;
    /// Euclidean 2-jet; default is a second-order central difference.
    fn jet(&self, x: &[f64]) -> Jet2 {
        numeric_jet(&|p| self.eval(p), x)
    }
    /// Optional coordinate box outside which evaluation is invalid.
    fn domain(&self) -> Option<(&[f64], &[f64])> {
        None
    }
}

/// Central-difference 2-jet with steps scaled to the coordinate magnitude.
pub fn numeric_jet(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Jet2 {
    let n = x.len();
    let h: Vec<f64> = x.iter().map(|&v| 1e-5 * (1.0 + v.abs())).collect();
    let mut xp = x.to_vec();
    let f0 = f(x);
    let mut grad = DVector::zeros(n);
    let mut hess = DMatrix::zeros(n, n);
    for i in 0..n {
        xp[i] = x[i] + h[i];
        let fp = f(&xp);
        xp[i] = x[i] - h[i];
        let fm = f(&xp);
        xp[i] = x[i];
        grad[i] = (fp - fm) / (2.0 * h[i]);
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
    }
    for i in 0..n {
        for j in 0..i {
            xp[i] = x[i] + h[i];
            xp[j] = x[j] + h[j];
            let fpp = f(&xp);
            xp[j] = x[j] - h[j];
            let fpm = f(&xp);
            xp[i] = x[i] - h[i];
            let fmm = f(&xp);
            xp[j] = x[j] + h[j];
            let fmp = f(&xp);
            xp[i] = x[i];
            xp[j] = x[j];
            let v = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    Jet2::new(grad, hess)
}

/// `a . x + b`.
pub struct Linear {
    pub a: Vec<f64>,
    pub b: f64,
}

impl ScalarField for Linear {
    fn dim(&self) -> usize {
        self.a.len()
    }
    fn eval(&self, x: &[f64]) -> f64 {
        self.a.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + self.b
    }
    fn jet(&self, _x: &[f64]) -> Jet2 {
        let n = self.a.len();
        Jet2::new(DVector::from_row_slice(&self.a), DMatrix::zeros(n, n))
    }
}

/// `x^T q x / 2 + b . x + c` with symmetric `q`.
pub struct Quadratic {
    pub q: DMatrix<f64>,
    pub b: Vec<f64>,
    pub c: f64,
}

impl ScalarField for Quadratic {
    fn dim(&self) -> usize {
        self.b.len()
    }
    fn eval(&self, x: &[f64]) -> f64 {
        let xv = DVector::from_row_slice(x);
        0.5 * (&self.q * &xv).dot(&xv)
            + self.b.iter().zip(x).map(|(a, v)| a * v).sum::<f64>()
            + self.c
    }
    fn jet(&self, x: &[f64]) -> Jet2 {
        let xv = DVector::from_row_slice(x);
        Jet2::new(&self.q * &xv + DVector::from_row_slice(&self.b), self.q.clone())
    }
}

/// Monomial `prod_i x_i^{e_i}` with exact jet.
pub struct Monomial {
    pub exps: Vec<u32>,
}

impl Monomial {
    fn partial(&self, x: &[f64], drop: &[usize]) -> f64 {
        // Value of the derivative obtained by lowering exponents listed in
        // `drop` (with multiplicity), including the combinatorial factor.
        let mut e: Vec<i64> = self.exps.iter().map(|&v| v as i64).collect();
        let mut coeff = 1.0;
        for &d in drop {
            if e[d] == 0 {
                return 0.0;
            }
            coeff *= e[d] as f64;
            e[d] -= 1;
        }
        coeff
            * e.iter()
                .enumerate()
                .map(|(i, &p)| x[i].powi(p as i32))
                .product::<f64>()
    }
}

impl ScalarField for Monomial {
    fn dim(&self) -> usize {
        self.exps.len()
    }
    fn eval(&self, x: &[f64]) -> f64 {
        self.partial(x, &[])
    }
    fn jet(&self, x: &[f64]) -> Jet2 {
        let n = self.exps.len();
        let grad = DVector::from_fn(n, |i, _| self.partial(x, &[i]));
        let hess = DMatrix::from_fn(n, n, |i, j| self.partial(x, &[i, j]));
        Jet2::new(grad, hess)
    }
}

/// `sin(x_1) cos(x_2)` padded with inert trailing coordinates.
pub struct SinCos {
    pub dim: usize,
}

impl ScalarField for SinCos {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[f64]) -> f64 {
        x[0].sin() * x[1].cos()
    }
    fn jet(&self, x: &[f64]) -> Jet2 {
        let (s1, c1) = x[0].sin_cos();
        let (s2, c2) = x[1].sin_cos();
        let mut grad = DVector::zeros(self.dim);
        grad[0] = c1 * c2;
        grad[1] = -s1 * s2;
        let mut hess = DMatrix::zeros(self.dim, self.dim);
        hess[(0, 0)] = -s1 * c2;
        hess[(1, 1)] = -s1 * c2;
        hess[(0, 1)] = -c1 * s2;
        hess[(1, 0)] = -c1 * s2;
        Jet2::new(grad, hess)
    }
}

/// `|x_1|^(4/3) - |x_2|^(4/3)`; the jet is valid away from the planes
/// `x_1 = 0` and `x_2 = 0`.
pub struct AronssonField {
    pub dim: usize,
}

impl ScalarField for AronssonField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[f64]) -> f64 {
        x[0].abs().powf(4.0 / 3.0) - x[1].abs().powf(4.0 / 3.0)
    }
    fn jet(&self, x: &[f64]) -> Jet2 {
        let mut grad = DVector::zeros(self.dim);
        let mut hess = DMatrix::zeros(self.dim, self.dim);
        let four_thirds = 4.0 / 3.0;
        grad[0] = four_thirds * x[0].signum() * x[0].abs().powf(1.0 / 3.0);
        grad[1] = -four_thirds * x[1].signum() * x[1].abs().powf(1.0 / 3.0);
        hess[(0, 0)] = four_thirds / 3.0 * x[0].abs().powf(-2.0 / 3.0);
        hess[(1, 1)] = -four_thirds / 3.0 * x[1].abs().powf(-2.0 / 3.0);
        Jet2::new(grad, hess)
    }
}

/// Sum of two Gaussian bumps centered on opposite sides of the box.
pub struct Bumps {
    pub dim: usize,
}

impl ScalarField for Bumps {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[f64]) -> f64 {
        let mut d1 = (x[0] - 0.5) * (x[0] - 0.5);
        let mut d2 = (x[0] + 0.5) * (x[0] + 0.5);
        for v in &x[1..] {
            d1 += v * v;
            d2 += v * v;
        }
        (-4.0 * d1).exp() + (-4.0 * d2).exp()
    }
}

/// Euclidean cone `|x|`.
pub struct Cone {
    pub dim: usize,
}

impl ScalarField for Cone {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Field backed by a parsed expression; evaluation errors surface as NaN so
/// sampling can detect them, use `try_eval` where errors matter.
pub struct ExprField {
    expr: Expression,
    dim: usize,
}

impl ExprField {
    pub fn new(expr: Expression, dim: usize) -> Result<Self, EvalError> {
        expr.check_arity(dim)?;
        Ok(ExprField { expr, dim })
    }

    pub fn try_eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        self.expr.eval(x)
    }
}

impl ScalarField for ExprField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[f64]) -> f64 {
        self.expr.eval(x).unwrap_or(f64::NAN)
    }
}

/// Named boundary presets accepted by the experiment configuration.
pub fn preset(name: &str, dim: usize) -> Option<Box<dyn ScalarField>> {
    match name {
        "linear" => Some(Box::new(Linear {
            a: {
                let mut a = vec![0.0; dim];
                a[0] = 1.0;
                a
            },
            b: 0.0,
        })),
        "aronsson" if dim >= 2 => Some(Box::new(AronssonField { dim })),
        "bumps" => Some(Box::new(Bumps { dim })),
        "cone" => Some(Box::new(Cone { dim })),
        _ => None,
    }
}
