//! Horizontal frame and horizontal derivatives.
//!
//! The frame column `sigma^j(x)` is the derivative of left translation
//! `y -> x * y` in the j-th generator direction at `y = 0`; both `sigma` and
//! its space derivative `Dsigma` are obtained by dual-number evaluation of
//! the BCH polynomial, so they are exact.
//!
//! For a Euclidean 2-jet `(grad, hess)` of `u` at `x`:
//!
//! ```text
//! Xu    = sigma(x)^T grad
//! XXu   = sigma^T hess sigma + correction,  correction_ij = <Dsigma^j sigma^i, grad>
//! XX*u  = sigma^T hess sigma + M(x, grad)
//! ```
//!
//! where `M(x, zeta)_ij = (<Dsigma^j sigma^i, zeta> + <Dsigma^i sigma^j, zeta>)/2`
//! is symmetric and linear in `zeta`. Entry `(i,j)` of the raw matrix is
//! `X_i X_j u`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dual::Dual2;
use crate::field::ScalarField;
use crate::group::{GroupError, GroupSpec, Point};
use crate::poly;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error("jet dimension {got} does not match group dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("Hessian must be symmetric, defect {defect}")]
    AsymmetricHessian { defect: f64 },
    #[error("difference step must be nonzero")]
    ZeroStep,
    #[error("direction index {index} exceeds layer {layer} dimension {layer_dim}")]
    BadDirection { index: usize, layer: usize, layer_dim: usize },
    #[error("translated point left the declared domain")]
    DomainExit,
}

/// Euclidean 2-jet of a scalar function: gradient and symmetric Hessian.
#[derive(Debug, Clone)]
pub struct Jet2 {
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

impl Jet2 {
    pub fn new(grad: DVector<f64>, hess: DMatrix<f64>) -> Self {
        Jet2 { grad, hess }
    }
}

/// Frame and its derivative at a point: `sigma` is `n x m`, `dsigma[j]` is the
/// `n x n` Jacobian of the j-th column.
#[derive(Debug, Clone)]
pub struct FrameMatrix {
    pub sigma: DMatrix<f64>,
    pub dsigma: Vec<DMatrix<f64>>,
}

impl FrameMatrix {
    /// Column `j` as a vector field value.
    pub fn column(&self, j: usize) -> DVector<f64> {
        self.sigma.column(j).into_owned()
    }

    /// `M(x, zeta)`: symmetric first-order correction of the horizontal
    /// Hessian, linear in `zeta`.
    pub fn moment(&self, zeta: &DVector<f64>) -> DMatrix<f64> {
        let m = self.sigma.ncols();
        let mut out = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..=i {
                let a = (&self.dsigma[j] * self.sigma.column(i)).dot(zeta);
                let b = (&self.dsigma[i] * self.sigma.column(j)).dot(zeta);
                let v = 0.5 * (a + b);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        out
    }
}

/// Horizontal 2-jet: gradient along the frame, raw second derivatives
/// (`raw[(i,j)] = X_i X_j u`), and the symmetrized matrix used by the
/// operators.
#[derive(Debug, Clone)]
pub struct HorizontalJet {
    pub hgrad: DVector<f64>,
    pub hhess_raw: DMatrix<f64>,
    pub hhess_sym: DMatrix<f64>,
}

/// Evaluates frame and frame derivative by forward-mode differentiation of
/// the group product.
pub fn frame_at(spec: &GroupSpec, x: &[f64]) -> Result<FrameMatrix, FrameError> {
    let n = spec.dim;
    if x.len() != n {
        return Err(FrameError::DimensionMismatch { expected: n, got: x.len() });
    }
    let m = spec.layer_dims[0];
    let mut sigma = DMatrix::zeros(n, m);
    let mut dsigma = vec![DMatrix::zeros(n, n); m];
    for j in 0..m {
        for l in 0..n {
            let xd: Vec<Dual2> = x
                .iter()
                .enumerate()
                .map(|(i, &v)| Dual2::seeded(v, if i == l { 1.0 } else { 0.0 }, 0.0))
                .collect();
            let yd: Vec<Dual2> = (0..n)
                .map(|i| Dual2::seeded(0.0, 0.0, if i == j { 1.0 } else { 0.0 }))
                .collect();
            let z = spec.multiply_in(&xd, &yd)?;
            if l == 0 {
                for k in 0..n {
                    sigma[(k, j)] = z[k].d2;
                }
            }
            for k in 0..n {
                dsigma[j][(k, l)] = z[k].d12;
            }
        }
    }
    debug_assert!({
        let mut ok = true;
        for j in 0..m {
            for k in 0..m {
                let want = if k == j { 1.0 } else { 0.0 };
                ok &= (sigma[(k, j)] - want).abs() < 1e-12;
            }
        }
        ok
    });
    Ok(FrameMatrix { sigma, dsigma })
}

/// Jacobian of left translation `y -> h * y` at `y`.
pub fn left_translation_jacobian(
    spec: &GroupSpec,
    h: &[f64],
    y: &[f64],
) -> Result<DMatrix<f64>, FrameError> {
    let n = spec.dim;
    let mut jac = DMatrix::zeros(n, n);
    let hd: Vec<Dual2> = h.iter().map(|&v| Dual2::constant(v)).collect();
    for l in 0..n {
        let yd: Vec<Dual2> = y
            .iter()
            .enumerate()
            .map(|(i, &v)| Dual2::seeded(v, if i == l { 1.0 } else { 0.0 }, 0.0))
            .collect();
        let z = spec.multiply_in(&hd, &yd)?;
        for k in 0..n {
            jac[(k, l)] = z[k].d1;
        }
    }
    Ok(jac)
}

/// Pushes a Euclidean 2-jet through the frame.
pub fn horizontal_jet(
    spec: &GroupSpec,
    frame: &FrameMatrix,
    jet: &Jet2,
) -> Result<HorizontalJet, FrameError> {
    let n = spec.dim;
    if jet.grad.len() != n || jet.hess.nrows() != n || jet.hess.ncols() != n {
        return Err(FrameError::DimensionMismatch { expected: n, got: jet.grad.len() });
    }
    let defect = (&jet.hess - jet.hess.transpose()).abs().max();
    if defect > 1e-12 {
        return Err(FrameError::AsymmetricHessian { defect });
    }
    let m = spec.layer_dims[0];
    let hgrad = frame.sigma.transpose() * &jet.grad;
    let base = frame.sigma.transpose() * &jet.hess * &frame.sigma;
    let mut raw = base.clone();
    for i in 0..m {
        for j in 0..m {
            raw[(i, j)] += (&frame.dsigma[j] * frame.sigma.column(i)).dot(&jet.grad);
        }
    }
    let sym = base + frame.moment(&jet.grad);
    Ok(HorizontalJet { hgrad, hhess_raw: raw, hhess_sym: sym })
}

/// Weighted difference quotient along a basis direction `(index, layer)`:
/// `(u(x * exp(t^layer X)) - u(x)) / t^layer`.
pub fn group_directional_derivative(
    spec: &GroupSpec,
    u: &dyn ScalarField,
    x: &[f64],
    index: usize,
    layer: usize,
    t: f64,
) -> Result<f64, FrameError> {
    if t == 0.0 {
        return Err(FrameError::ZeroStep);
    }
    if layer < 1 || layer > spec.step || index >= spec.layer_dims[layer - 1] {
        return Err(FrameError::BadDirection {
            index,
            layer,
            layer_dim: if layer >= 1 && layer <= spec.step {
                spec.layer_dims[layer - 1]
            } else {
                0
            },
        });
    }
    let s = t.powi(layer as i32);
    let mut e = vec![0.0; spec.dim];
    e[spec.layer_range(layer).start + index] = s;
    let xh = spec.multiply(x, &e)?;
    check_domain(u, &xh)?;
    Ok((u.eval(&xh) - u.eval(x)) / s)
}

/// First-order group Taylor remainder
/// `|u(x * h) - u(x) - <Xu(x), pi_1(h)>|` with `Xu` from the analytic jet.
pub fn taylor_residual(
    spec: &GroupSpec,
    u: &dyn ScalarField,
    x: &[f64],
    h: &[f64],
) -> Result<f64, FrameError> {
    let xh = spec.multiply(x, h)?;
    check_domain(u, &xh)?;
    let frame = frame_at(spec, x)?;
    let hj = horizontal_jet(spec, &frame, &u.jet(x))?;
    let m = spec.layer_dims[0];
    let first_order: f64 = (0..m).map(|i| hj.hgrad[i] * h[i]).sum();
    Ok((u.eval(&xh) - u.eval(x) - first_order).abs())
}

fn check_domain(u: &dyn ScalarField, x: &[f64]) -> Result<(), FrameError> {
    if let Some((lo, hi)) = u.domain() {
        for i in 0..x.len() {
            if x[i] < lo[i] || x[i] > hi[i] {
                return Err(FrameError::DomainExit);
            }
        }
    }
    Ok(())
}

/// Dimension of the span at `x` of the frame fields together with iterated
/// brackets up to `max_depth`; returns `(rank, depth)` where `depth` is the
/// smallest bracket depth at which the final rank was attained.
pub fn hormander_rank(
    spec: &GroupSpec,
    x: &[f64],
    max_depth: usize,
) -> Result<(usize, usize), FrameError> {
    if spec.step > 3 {
        return Err(FrameError::Group(GroupError::UnsupportedStep { step: spec.step }));
    }
    if x.len() != spec.dim {
        return Err(FrameError::DimensionMismatch { expected: spec.dim, got: x.len() });
    }
    let generators = poly::sigma_fields(spec);
    let mut fields = generators.clone();
    let mut last_new: Vec<poly::PolyField> = generators.clone();
    let mut ranks = vec![rank_at(spec, &fields, x)];
    for _ in 2..=max_depth.max(1) {
        if *ranks.last().unwrap() == spec.dim {
            break;
        }
        let mut fresh = Vec::new();
        for g in &generators {
            for f in &last_new {
                let b = poly::bracket_fields(g, f);
                if !poly::is_zero_field(&b) {
                    fresh.push(b);
                }
            }
        }
        if fresh.is_empty() {
            break;
        }
        fields.extend(fresh.iter().cloned());
        last_new = fresh;
        ranks.push(rank_at(spec, &fields, x));
    }
    let achieved = *ranks.last().unwrap();
    let depth = ranks.iter().position(|&r| r == achieved).unwrap() + 1;
    Ok((achieved, depth))
}

fn rank_at(spec: &GroupSpec, fields: &[poly::PolyField], x: &[f64]) -> usize {
    let mat = DMatrix::from_fn(spec.dim, fields.len(), |k, c| fields[c][k].eval(x));
    mat.rank(1e-9)
}

/// Largest ratio `|u(p) - u(q)| / d(p, q)` over node pairs of a coordinate
/// box with group distance in `(0, scale]`; a scale-restricted metric
/// Lipschitz estimate.
pub fn metric_lipschitz_estimate(
    spec: &GroupSpec,
    points: &[(Point, f64)],
    scale: f64,
) -> Result<f64, FrameError> {
    let mut best: f64 = 0.0;
    for (a, (pa, va)) in points.iter().enumerate() {
        for (pb, vb) in points.iter().skip(a + 1) {
            let d = spec.metric(pa, pb)?;
            if d > 1e-12 && d <= scale {
                best = best.max((va - vb).abs() / d);
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Linear, Monomial, SinCos};
    use crate::group::GroupSpec;
    use approx::assert_abs_diff_eq;

    #[test]
    fn heisenberg_frame_closed_form() {
        let g = GroupSpec::heisenberg();
        let f = frame_at(&g, &[0.3, 0.7, -0.2]).unwrap();
        // sigma1 = (1, 0, -y/2), sigma2 = (0, 1, x/2).
        let s1 = f.column(0);
        let s2 = f.column(1);
        assert_abs_diff_eq!(s1[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s1[1], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s1[2], -0.35, epsilon = 1e-14);
        assert_abs_diff_eq!(s2[0], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s2[1], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s2[2], 0.15, epsilon = 1e-14);
    }

    #[test]
    fn vertical_coordinate_jet_on_heisenberg() {
        let g = GroupSpec::heisenberg();
        let x = [0.3, 0.7, -0.2];
        let f = frame_at(&g, &x).unwrap();
        let u = Monomial { exps: vec![0, 0, 1] };
        let hj = horizontal_jet(&g, &f, &u.jet(&x)).unwrap();
        // X1 t = -y/2, X2 t = x/2; the raw second derivatives are the
        // constant commutator +-1/2 while the symmetrized matrix vanishes.
        assert_abs_diff_eq!(hj.hgrad[0], -0.35, epsilon = 1e-14);
        assert_abs_diff_eq!(hj.hgrad[1], 0.15, epsilon = 1e-14);
        assert_abs_diff_eq!(hj.hhess_raw[(0, 1)], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(hj.hhess_raw[(1, 0)], -0.5, epsilon = 1e-14);
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(hj.hhess_sym[(i, j)], 0.0, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn heisenberg_moment_vanishes() {
        let g = GroupSpec::heisenberg();
        let f = frame_at(&g, &[0.9, -1.4, 0.3]).unwrap();
        let m = f.moment(&nalgebra::DVector::from_row_slice(&[0.7, -0.2, 1.9]));
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(m[(i, j)], 0.0, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn engel_moment_closed_form() {
        // M11 = z4 x2 / 6, M12 = -x1 z4 / 12, M22 = 0.
        let g = GroupSpec::engel();
        let x = [0.4, 0.6, -0.8, 0.25];
        let f = frame_at(&g, &x).unwrap();
        let zeta = nalgebra::DVector::from_row_slice(&[0.0, 0.0, 0.0, 0.5]);
        let m = f.moment(&zeta);
        assert_abs_diff_eq!(m[(0, 0)], 0.5 * 0.6 / 6.0, epsilon = 1e-13);
        assert_abs_diff_eq!(m[(0, 1)], -0.4 * 0.5 / 12.0, epsilon = 1e-13);
        assert_abs_diff_eq!(m[(1, 0)], m[(0, 1)], epsilon = 1e-15);
        assert_abs_diff_eq!(m[(1, 1)], 0.0, epsilon = 1e-13);
        // Trace reduces to z4 x2 / 6.
        assert_abs_diff_eq!(m.trace(), 0.05, epsilon = 1e-13);
    }

    #[test]
    fn moment_is_linear_in_zeta() {
        let g = GroupSpec::engel();
        let f = frame_at(&g, &[0.2, -0.9, 0.4, 0.7]).unwrap();
        let a = nalgebra::DVector::from_row_slice(&[0.3, 1.0, -0.5, 0.8]);
        let b = nalgebra::DVector::from_row_slice(&[-1.1, 0.2, 0.6, -0.4]);
        let lhs = f.moment(&(2.0 * &a + 3.0 * &b));
        let rhs = 2.0 * f.moment(&a) + 3.0 * f.moment(&b);
        assert!((lhs - rhs).abs().max() < 1e-12);
    }

    #[test]
    fn hormander_ranks_and_depths() {
        let h = GroupSpec::heisenberg();
        assert_eq!(hormander_rank(&h, &[0.0; 3], 4).unwrap(), (3, 2));
        let e = GroupSpec::engel();
        assert_eq!(hormander_rank(&e, &[0.0; 4], 5).unwrap(), (4, 3));
        let a = GroupSpec::abelian(3);
        assert_eq!(hormander_rank(&a, &[0.0; 3], 4).unwrap(), (3, 1));
        // Rank is a pointwise property; check off the origin too.
        assert_eq!(hormander_rank(&h, &[0.4, -0.9, 0.3], 4).unwrap(), (3, 2));
    }

    #[test]
    fn directional_quotient_approaches_hgrad() {
        let g = GroupSpec::heisenberg();
        let u = SinCos { dim: 3 };
        let x = [0.3, -0.4, 0.2];
        let f = frame_at(&g, &x).unwrap();
        let hj = horizontal_jet(&g, &f, &u.jet(&x)).unwrap();
        for i in 0..2 {
            let q = group_directional_derivative(&g, &u, &x, i, 1, 1e-6).unwrap();
            assert_abs_diff_eq!(q, hj.hgrad[i], epsilon = 1e-5);
        }
    }

    #[test]
    fn taylor_residual_second_order() {
        let g = GroupSpec::heisenberg();
        let u = SinCos { dim: 3 };
        let x = [0.3, -0.4, 0.2];
        let r1 = taylor_residual(&g, &u, &x, &[1e-2, -1e-2, 1e-4]).unwrap();
        let r2 = taylor_residual(&g, &u, &x, &[1e-3, -1e-3, 1e-6]).unwrap();
        // Halving-by-ten the step shrinks the remainder about a hundredfold.
        assert!(r2 < r1 * 1e-1, "r1 = {r1}, r2 = {r2}");
    }

    #[test]
    fn jet_validation_errors() {
        let g = GroupSpec::heisenberg();
        let f = frame_at(&g, &[0.0; 3]).unwrap();
        let mut hess = nalgebra::DMatrix::zeros(3, 3);
        hess[(0, 1)] = 1.0;
        let jet = Jet2::new(nalgebra::DVector::zeros(3), hess);
        assert!(matches!(
            horizontal_jet(&g, &f, &jet),
            Err(FrameError::AsymmetricHessian { .. })
        ));
        let u = Linear { a: vec![1.0, 0.0, 0.0], b: 0.0 };
        assert!(matches!(
            group_directional_derivative(&g, &u, &[0.0; 3], 0, 1, 0.0),
            Err(FrameError::ZeroStep)
        ));
        assert!(matches!(
            group_directional_derivative(&g, &u, &[0.0; 3], 7, 1, 0.1),
            Err(FrameError::BadDirection { .. })
        ));
    }

    #[test]
    fn left_translation_jacobian_is_frame_at_origin() {
        let g = GroupSpec::engel();
        let h = [0.4, -0.2, 0.7, 0.1];
        let jac = left_translation_jacobian(&g, &h, &[0.0; 4]).unwrap();
        let f = frame_at(&g, &h).unwrap();
        for j in 0..2 {
            for k in 0..4 {
                assert_abs_diff_eq!(jac[(k, j)], f.sigma[(k, j)], epsilon = 1e-13);
            }
        }
    }
}
