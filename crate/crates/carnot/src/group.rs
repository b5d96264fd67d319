//! Carnot group calculus in exponential coordinates.
//!
//! A group is described by a stratified Lie algebra: `layer_dims = [m_1, ..., m_r]`
//! and structure constants `c[k][i][j]` with `[e_i, e_j] = sum_k c[k][i][j] e_k`.
//! Points are coordinate vectors ordered layer by layer. The product is the
//! Baker-Campbell-Hausdorff polynomial, which terminates and is exact for
//! step `r <= 3`:
//!
//! ```text
//! x * y = x + y + [x,y]/2 + ([x,[x,y]] - [y,[x,y]])/12
//! ```
//!
//! Dilations scale layer `j` by `lambda^j`, the homogeneous norm is
//!
//! ```text
//! |x| = ( sum_j |x_(j)|^(2 r!/j) )^(1/(2 r!))
//! ```
//!
//! so that `|delta_lambda(x)| = lambda |x|`, and the left-invariant metric is
//! `d(x,y) = |y^-1 * x|`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Exponential coordinates of a group element, layers concatenated.
pub type Point = Vec<f64>;

/// Largest supported group dimension; the bracket table is dense `dim^3`.
pub const MAX_DIM: usize = 64;

#[derive(Debug, Error)]
pub enum GroupError {
    #[error("BCH product implemented for step <= 3, spec has step {step}")]
    UnsupportedStep { step: usize },
    #[error("dilation parameter must be positive, got {lambda}")]
    NonPositiveDilation { lambda: f64 },
    #[error("point has {got} coordinates, group has dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("layer_dims must be nonempty with positive entries")]
    BadLayerDims,
    #[error("group dimension {dim} exceeds the dense-table cap {MAX_DIM}")]
    DimensionTooLarge { dim: usize },
    #[error("bracket table entry ({k},{i},{j}) given twice with conflicting values")]
    InconsistentBracket { k: usize, i: usize, j: usize },
    #[error("bracket table index out of range: ({k},{i},{j}) for dimension {dim}")]
    BracketIndexOutOfRange { k: usize, i: usize, j: usize, dim: usize },
}

/// One defect found by [`GroupSpec::validate`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Violation {
    /// `c[k][i][j] != -c[k][j][i]`.
    NonAntisymmetric { k: usize, i: usize, j: usize },
    /// A bracket lands outside the layer `layer(i) + layer(j)`.
    GradingBroken { k: usize, i: usize, j: usize },
    /// Jacobi identity defect above tolerance on basis triples.
    JacobiBroken { i: usize, j: usize, k: usize, defect: f64 },
    /// `[layer 1, layer j]` fails to span layer `j+1`.
    NotGenerated { layer: usize, rank: usize, needed: usize },
}

/// Outcome of structural validation; `violations` is empty iff the table
/// describes a stratified algebra of the declared step.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Structure data of a stratified group.
///
/// `hom_dim` is recomputed from `layer_dims` on construction and never read
/// from input.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupSpec {
    pub name: String,
    pub step: usize,
    pub layer_dims: Vec<usize>,
    pub dim: usize,
    pub hom_dim: usize,
    /// 1-based layer of each coordinate.
    layer_of: Vec<usize>,
    /// Dense table, `c[(k*dim + i)*dim + j]`.
    c: Vec<f64>,
    /// Nonzero entries `(k, i, j, value)` for fast bilinear loops.
    nz: Vec<(usize, usize, usize, f64)>,
}

/// Minimal arithmetic needed to evaluate the BCH polynomial; implemented by
/// `f64` and by dual numbers so the frame module can differentiate the
/// product exactly.
pub(crate) trait Ring: Copy {
    fn zero() -> Self;
    fn add(self, o: Self) -> Self;
    fn mul(self, o: Self) -> Self;
    fn scale(self, k: f64) -> Self;
}

impl Ring for f64 {
    fn zero() -> Self {
        0.0
    }
    fn add(self, o: Self) -> Self {
        self + o
    }
    fn mul(self, o: Self) -> Self {
        self * o
    }
    fn scale(self, k: f64) -> Self {
        self * k
    }
}

pub(crate) fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

impl GroupSpec {
    /// Builds a spec from sparse bracket entries `(k, i, j, value)` (0-based),
    /// filling the antisymmetric counterpart of each entry.
    pub fn from_brackets(
        name: &str,
        layer_dims: &[usize],
        brackets: &[(usize, usize, usize, f64)],
    ) -> Result<Self, GroupError> {
        if layer_dims.is_empty() || layer_dims.contains(&0) {
            return Err(GroupError::BadLayerDims);
        }
        let dim: usize = layer_dims.iter().sum();
        let mut c = vec![0.0; dim * dim * dim];
        let mut set = vec![false; dim * dim * dim];
        let idx = |k: usize, i: usize, j: usize| (k * dim + i) * dim + j;
        for &(k, i, j, v) in brackets {
            if k >= dim || i >= dim || j >= dim {
                return Err(GroupError::BracketIndexOutOfRange { k, i, j, dim });
            }
            for (a, b, val) in [(i, j, v), (j, i, -v)] {
                let p = idx(k, a, b);
                if set[p] && c[p] != val {
                    return Err(GroupError::InconsistentBracket { k, i: a, j: b });
                }
                set[p] = true;
                c[p] = val;
            }
        }
        Self::from_dense(name, layer_dims, c)
    }

    /// Builds a spec from a dense table `c[(k*dim + i)*dim + j]` as given,
    /// without symmetrization; validation will report structural defects.
    pub fn from_dense(
        name: &str,
        layer_dims: &[usize],
        c: Vec<f64>,
    ) -> Result<Self, GroupError> {
        if layer_dims.is_empty() || layer_dims.contains(&0) {
            return Err(GroupError::BadLayerDims);
        }
        let dim: usize = layer_dims.iter().sum();
        if c.len() != dim * dim * dim {
            return Err(GroupError::DimensionMismatch {
                expected: dim * dim * dim,
                got: c.len(),
            });
        }
        let step = layer_dims.len();
        let hom_dim = layer_dims
            .iter()
            .enumerate()
            .map(|(j, m)| (j + 1) * m)
            .sum();
        let mut layer_of = Vec::with_capacity(dim);
        for (j, &m) in layer_dims.iter().enumerate() {
            layer_of.extend(std::iter::repeat(j + 1).take(m));
        }
        let mut nz = Vec::new();
        for k in 0..dim {
            for i in 0..dim {
                for j in 0..dim {
                    let v = c[(k * dim + i) * dim + j];
                    if v != 0.0 {
                        nz.push((k, i, j, v));
                    }
                }
            }
        }
        Ok(GroupSpec {
            name: name.to_string(),
            step,
            layer_dims: layer_dims.to_vec(),
            dim,
            hom_dim,
            layer_of,
            c,
            nz,
        })
    }

    /// First Heisenberg group: generators `e1, e2`, center `e3`, `[e1,e2] = e3`.
    pub fn heisenberg() -> Self {
        Self::from_brackets("heisenberg", &[2, 1], &[(2, 0, 1, 1.0)]).unwrap()
    }

    /// Heisenberg group of index `n` (dimension `2n + 1`): `[e_i, e_{n+i}] = e_{2n+1}`.
    pub fn heisenberg_n(n: usize) -> Self {
        assert!(n >= 1, "heisenberg index must be >= 1");
        let brackets: Vec<_> = (0..n).map(|i| (2 * n, i, n + i, 1.0)).collect();
        Self::from_brackets(&format!("heisenberg{n}"), &[2 * n, 1], &brackets).unwrap()
    }

    /// Engel group: step 3, layers (2,1,1), `[e1,e2] = e3`, `[e1,e3] = e4`.
    pub fn engel() -> Self {
        Self::from_brackets("engel", &[2, 1, 1], &[(2, 0, 1, 1.0), (3, 0, 2, 1.0)]).unwrap()
    }

    /// Abelian group `R^n` (step 1, no brackets).
    pub fn abelian(n: usize) -> Self {
        assert!(n >= 1, "dimension must be >= 1");
        Self::from_brackets(&format!("abelian{n}"), &[n], &[]).unwrap()
    }

    /// Free step-2 group on 2 generators (isomorphic to the first Heisenberg
    /// group, shipped as its own named table).
    pub fn free_step2() -> Self {
        Self::from_brackets("free_step2", &[2, 1], &[(2, 0, 1, 1.0)]).unwrap()
    }

    /// Coordinate range of layer `j` (1-based).
    pub fn layer_range(&self, j: usize) -> std::ops::Range<usize> {
        let start: usize = self.layer_dims[..j - 1].iter().sum();
        start..start + self.layer_dims[j - 1]
    }

    /// 1-based layer of coordinate `i`.
    pub fn layer_of(&self, i: usize) -> usize {
        self.layer_of[i]
    }

    pub fn structure_constant(&self, k: usize, i: usize, j: usize) -> f64 {
        self.c[(k * self.dim + i) * self.dim + j]
    }

    /// Nonzero structure constants as `(k, i, j, value)`.
    pub fn nonzero_brackets(&self) -> &[(usize, usize, usize, f64)] {
        &self.nz
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), GroupError> {
        if x.len() != self.dim {
            return Err(GroupError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Lie bracket of coordinate vectors: `[x,y]_k = sum_{i,j} c[k][i][j] x_i y_j`.
    pub(crate) fn bracket_in<T: Ring>(&self, x: &[T], y: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim];
        for &(k, i, j, v) in &self.nz {
            out[k] = out[k].add(x[i].mul(y[j]).scale(v));
        }
        out
    }

    pub fn bracket(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        self.bracket_in(x, y)
    }

    /// BCH product, exact for step `<= 3`.
    pub(crate) fn multiply_in<T: Ring>(&self, x: &[T], y: &[T]) -> Result<Vec<T>, GroupError> {
        if self.step > 3 {
            return Err(GroupError::UnsupportedStep { step: self.step });
        }
        let mut z: Vec<T> = x.iter().zip(y).map(|(&a, &b)| a.add(b)).collect();
        if self.step >= 2 {
            let w = self.bracket_in(x, y);
            for k in 0..self.dim {
                z[k] = z[k].add(w[k].scale(0.5));
            }
            if self.step >= 3 {
                // Accumulated as [x - y, w] / 12 in the same flop order as
                // `multiply_buf`, so both paths agree bitwise.
                let diff: Vec<T> = x.iter().zip(y).map(|(&a, &b)| a.add(b.scale(-1.0))).collect();
                let d = self.bracket_in(&diff, &w);
                for k in 0..self.dim {
                    z[k] = z[k].add(d[k].scale(1.0 / 12.0));
                }
            }
        }
        Ok(z)
    }

    /// Group product `x * y`.
    pub fn multiply(&self, x: &[f64], y: &[f64]) -> Result<Point, GroupError> {
        self.check_dim(x)?;
        self.check_dim(y)?;
        self.multiply_in(x, y)
    }

    /// Allocation-free product for hot loops; `out` must have length `dim`,
    /// the spec must have step `<= 3` (checked by the caller once).
    /// Falls back to the allocating path for dimensions above the stack
    /// buffer size.
    pub fn multiply_buf(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        debug_assert!(self.step <= 3 && out.len() == self.dim);
        if self.dim > 8 {
            let z = self.multiply_in(x, y).expect("step checked by caller");
            out.copy_from_slice(&z);
            return;
        }
        let mut w = [0.0f64; 8];
        let w = &mut w[..self.dim];
        for k in 0..self.dim {
            out[k] = x[k] + y[k];
        }
        if self.step >= 2 {
            for &(k, i, j, v) in &self.nz {
                w[k] += x[i] * y[j] * v;
            }
            for k in 0..self.dim {
                out[k] += w[k] * 0.5;
            }
            if self.step >= 3 {
                let mut d = [0.0f64; 8];
                let d = &mut d[..self.dim];
                for &(k, i, j, v) in &self.nz {
                    d[k] += (x[i] - y[i]) * w[j] * v;
                }
                for k in 0..self.dim {
                    out[k] += d[k] * (1.0 / 12.0);
                }
            }
        }
    }

    /// Allocation-free `|y^-1 * x|^(2 r!)`, the penalty power of the
    /// convolution kernels.
    pub fn metric_pow_buf(&self, x: &[f64], y: &[f64]) -> f64 {
        if self.dim > 8 {
            let yi = self.inverse(y);
            let z = self.multiply_in(&yi, x).expect("step checked by caller");
            return self.hom_norm_pow(&z);
        }
        let mut yi = [0.0f64; 8];
        let yi = &mut yi[..self.dim];
        for k in 0..self.dim {
            yi[k] = -y[k];
        }
        let mut z = [0.0f64; 8];
        let z = &mut z[..self.dim];
        self.multiply_buf(yi, x, z);
        self.hom_norm_pow(z)
    }

    /// Allocation-free left-invariant distance.
    pub fn metric_buf(&self, x: &[f64], y: &[f64]) -> f64 {
        self.metric_pow_buf(x, y)
            .powf(1.0 / (2.0 * factorial(self.step)))
    }

    /// Group inverse; in exponential coordinates `x^-1 = -x`.
    pub fn inverse(&self, x: &[f64]) -> Point {
        x.iter().map(|&v| -v).collect()
    }

    /// Anisotropic dilation: layer `j` scales by `lambda^j`.
    pub fn dilate(&self, lambda: f64, x: &[f64]) -> Result<Point, GroupError> {
        if !(lambda > 0.0) {
            return Err(GroupError::NonPositiveDilation { lambda });
        }
        self.check_dim(x)?;
        Ok(x.iter()
            .enumerate()
            .map(|(i, &v)| v * lambda.powi(self.layer_of[i] as i32))
            .collect())
    }

    /// Homogeneous norm `( sum_j |x_(j)|^(2 r!/j) )^(1/(2 r!))`.
    pub fn hom_norm(&self, x: &[f64]) -> f64 {
        self.hom_norm_pow(x).powf(1.0 / (2.0 * factorial(self.step)))
    }

    /// `|x|^(2 r!)` without the outer root. All exponents `r!/j` are integers,
    /// so this is a polynomial in the coordinates; it is the natural penalty
    /// power for convolution kernels.
    pub fn hom_norm_pow(&self, x: &[f64]) -> f64 {
        let rf = factorial(self.step) as i32;
        let mut total = 0.0;
        for j in 1..=self.step {
            let sq: f64 = x[self.layer_range(j)].iter().map(|v| v * v).sum();
            total += sq.powi(rf / j as i32);
        }
        total
    }

    /// Left-invariant metric `d(x,y) = |y^-1 * x|`.
    pub fn metric(&self, x: &[f64], y: &[f64]) -> Result<f64, GroupError> {
        let yi = self.inverse(y);
        Ok(self.hom_norm(&self.multiply(&yi, x)?))
    }

    /// Conjugation `h^-1 * x * h`.
    pub fn conjugate(&self, h: &[f64], x: &[f64]) -> Result<Point, GroupError> {
        let hi = self.inverse(h);
        let hx = self.multiply(&hi, x)?;
        self.multiply(&hx, h)
    }

    /// Structural validation: antisymmetry, grading, Jacobi identity, and
    /// generation of each layer by brackets with the first.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let n = self.dim;
        let at = |k: usize, i: usize, j: usize| self.c[(k * n + i) * n + j];

        for k in 0..n {
            for i in 0..n {
                for j in 0..=i {
                    if at(k, i, j) != -at(k, j, i) {
                        violations.push(Violation::NonAntisymmetric { k, i, j });
                    }
                }
            }
        }

        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if at(k, i, j) != 0.0
                        && self.layer_of[k] != self.layer_of[i] + self.layer_of[j]
                    {
                        violations.push(Violation::GradingBroken { k, i, j });
                    }
                }
            }
        }

        let tol = 1e-12;
        for i in 0..n {
            for j in (i + 1)..n {
                for k in (j + 1)..n {
                    let ei = basis(n, i);
                    let ej = basis(n, j);
                    let ek = basis(n, k);
                    let mut defect: f64 = 0.0;
                    let t1 = self.bracket(&self.bracket(&ei, &ej), &ek);
                    let t2 = self.bracket(&self.bracket(&ej, &ek), &ei);
                    let t3 = self.bracket(&self.bracket(&ek, &ei), &ej);
                    for l in 0..n {
                        defect = defect.max((t1[l] + t2[l] + t3[l]).abs());
                    }
                    if defect > tol {
                        violations.push(Violation::JacobiBroken { i, j, k, defect });
                    }
                }
            }
        }

        for j in 1..self.step {
            let m_next = self.layer_dims[j];
            let next = self.layer_range(j + 1);
            let mut cols = Vec::new();
            for a in self.layer_range(1) {
                for b in self.layer_range(j) {
                    let br = self.bracket(&basis(n, a), &basis(n, b));
                    cols.push(br[next.clone()].to_vec());
                }
            }
            let rank = rank_of(&cols, m_next);
            if rank < m_next {
                violations.push(Violation::NotGenerated {
                    layer: j + 1,
                    rank,
                    needed: m_next,
                });
            }
        }

        ValidationReport { violations }
    }
}

fn basis(n: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[i] = 1.0;
    e
}

/// Numerical rank of a set of length-`rows` columns, tolerance 1e-9.
fn rank_of(cols: &[Vec<f64>], rows: usize) -> usize {
    if cols.is_empty() || rows == 0 {
        return 0;
    }
    let m = nalgebra::DMatrix::from_fn(rows, cols.len(), |r, c| cols[c][r]);
    m.rank(1e-9)
}

/// Draws a point with `|x| < nu`, Haar-uniform under dilations: uniform
/// direction from coordinate-box rejection, radial law `rho^(Q-1)`.
pub fn sample_in_ball<R: Rng>(spec: &GroupSpec, nu: f64, rng: &mut R) -> Point {
    loop {
        let v: Vec<f64> = (0..spec.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rho = spec.hom_norm(&v);
        if rho < 1e-9 {
            continue;
        }
        let dir = spec.dilate(1.0 / rho, &v).unwrap();
        let u: f64 = rng.gen_range(0.0f64..1.0);
        let s = nu * u.powf(1.0 / spec.hom_dim as f64);
        return spec.dilate(s.max(1e-12), &dir).unwrap();
    }
}

/// Monte-Carlo estimate of the conjugation constant: the largest observed
/// `|x^-1 * y * x| / |y|^(1/r)` over samples with `|x|, |y| < nu`. For step 1
/// conjugation is the identity and the estimate is the largest `|y|^(1-1/r)`
/// which tends to 1 from below at `nu = 1`.
pub fn estimate_conjugation_constant<R: Rng>(
    spec: &GroupSpec,
    nu: f64,
    samples: usize,
    rng: &mut R,
) -> Result<f64, GroupError> {
    let mut sup: f64 = 0.0;
    for _ in 0..samples {
        let x = sample_in_ball(spec, nu, rng);
        let y = sample_in_ball(spec, nu, rng);
        let ny = spec.hom_norm(&y);
        if ny < 1e-12 {
            continue;
        }
        let conj = spec.conjugate(&x, &y)?;
        let ratio = spec.hom_norm(&conj) / ny.powf(1.0 / spec.step as f64);
        sup = sup.max(ratio);
    }
    Ok(sup)
}

/// Monte-Carlo estimate of the quasi-triangle constant: largest observed
/// `|x * y| / (|x| + |y|)` over samples with `|x|, |y| < nu`.
pub fn estimate_triangle_constant<R: Rng>(
    spec: &GroupSpec,
    nu: f64,
    samples: usize,
    rng: &mut R,
) -> Result<f64, GroupError> {
    let mut sup: f64 = 0.0;
    for _ in 0..samples {
        let x = sample_in_ball(spec, nu, rng);
        let y = sample_in_ball(spec, nu, rng);
        let denom = spec.hom_norm(&x) + spec.hom_norm(&y);
        if denom < 1e-12 {
            continue;
        }
        sup = sup.max(spec.hom_norm(&spec.multiply(&x, &y)?) / denom);
    }
    Ok(sup)
}
