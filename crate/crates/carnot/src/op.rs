//! Operator instances `L u = -Tr(A(Xu) XX*u) + H(Xu)` acting on horizontal
//! jets, and samplers for the structure conditions they are expected to
//! satisfy:
//!
//! * degenerate ellipticity `E(xi) = <A(xi) xi, xi> > 0` off the origin,
//! * the scaling bound, for `t >= 1` and every symmetric `X`:
//!   `-Tr(A(t xi) X) <= -Tr(A(xi) X) / (t phi(1/t))` and
//!   `H(t xi) <= H(xi) / phi(1/t)`,
//! * the maximum-principle hypotheses (monotonicity in `(r, X)`, the
//!   `lambda`-scaling lower bound with gauge `phi`, positivity of
//!   `G(x, 0, xi, X - gamma xi xi^T)` for large `gamma`).
//!
//! The gauge is a power `phi(s) = s^k` on `(0, 1]`; instances whose `A` is
//! homogeneous of degree `d` ship with `k = d + 1`, which makes the scaling
//! bound an identity.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::frame::HorizontalJet;

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("unknown operator name `{0}`")]
    UnknownName(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("operator undefined at zero horizontal gradient")]
    SingularGradient,
    #[error("gradient has {got} entries, operator acts on {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Choice of the profile `g` in the Uhlenbeck form
/// `A = I + (|xi| g'(|xi|)/g(|xi|) - 1) xi xi^T / |xi|^2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum GChoice {
    /// `g(t) = t^(p-1)`; reproduces the normalized p-instance.
    Power { p: f64 },
    /// `g(t) = t / sqrt(1 + t^2)`; reproduces the mean curvature instance.
    Bounded,
}

/// Choice of `f` in the Aronsson form `A = grad f(xi) (x) grad f(xi)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum FChoice {
    /// `f = |xi|^2 / 2`; reproduces the infinity instance.
    HalfSquare,
    /// `f = sum_i w_i xi_i^2 / 2`.
    Diag { weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Kind {
    SubLaplacian,
    Infinity,
    NormalizedP { p: f64 },
    Uhlenbeck { g: GChoice },
    MeanCurvature,
    Aronsson { f: FChoice },
    /// `A = -I`: deliberately violates ellipticity; kept for negative tests.
    BrokenNegIdentity,
}

/// First-order term `H`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum HChoice {
    Zero,
    /// `H(xi) = coeff * |xi|`.
    Norm { coeff: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct OperatorSpec {
    pub name: String,
    pub kind: Kind,
    /// `phi(s) = s^phi_exponent`.
    pub phi_exponent: f64,
    pub h_term: HChoice,
}

impl OperatorSpec {
    pub fn sub_laplacian() -> Self {
        OperatorSpec {
            name: "sub_laplacian".into(),
            kind: Kind::SubLaplacian,
            phi_exponent: 1.0,
            h_term: HChoice::Zero,
        }
    }

    pub fn infinity() -> Self {
        OperatorSpec {
            name: "infinity".into(),
            kind: Kind::Infinity,
            phi_exponent: 3.0,
            h_term: HChoice::Zero,
        }
    }

    pub fn normalized_p(p: f64) -> Result<Self, OperatorError> {
        if !(p > 1.0) {
            return Err(OperatorError::InvalidParameter(format!(
                "normalized p-instance needs p > 1, got {p}"
            )));
        }
        Ok(OperatorSpec {
            name: format!("normalized_p({p})"),
            kind: Kind::NormalizedP { p },
            phi_exponent: 1.0,
            h_term: HChoice::Zero,
        })
    }

    pub fn uhlenbeck(g: GChoice) -> Result<Self, OperatorError> {
        if let GChoice::Power { p } = g {
            if !(p > 1.0) {
                return Err(OperatorError::InvalidParameter(format!(
                    "power profile needs p > 1, got {p}"
                )));
            }
        }
        Ok(OperatorSpec {
            name: "uhlenbeck".into(),
            kind: Kind::Uhlenbeck { g },
            phi_exponent: 1.0,
            h_term: HChoice::Zero,
        })
    }

    pub fn mean_curvature() -> Self {
        OperatorSpec {
            name: "mean_curvature".into(),
            kind: Kind::MeanCurvature,
            phi_exponent: 1.0,
            h_term: HChoice::Zero,
        }
    }

    pub fn aronsson(f: FChoice) -> Result<Self, OperatorError> {
        if let FChoice::Diag { weights } = &f {
            if weights.is_empty() || weights.iter().any(|w| !w.is_finite()) {
                return Err(OperatorError::InvalidParameter(
                    "diag weights must be finite and nonempty".into(),
                ));
            }
        }
        Ok(OperatorSpec {
            name: "aronsson".into(),
            kind: Kind::Aronsson { f },
            phi_exponent: 3.0,
            h_term: HChoice::Zero,
        })
    }

    pub fn broken_negative_identity() -> Self {
        OperatorSpec {
            name: "broken".into(),
            kind: Kind::BrokenNegIdentity,
            phi_exponent: 1.0,
            h_term: HChoice::Zero,
        }
    }

    /// Name dispatch used by the configuration layer; `p` feeds the
    /// normalized instance, defaults to 2.
    pub fn builtin(name: &str, p: Option<f64>) -> Result<Self, OperatorError> {
        match name {
            "sub_laplacian" => Ok(Self::sub_laplacian()),
            "infinity" => Ok(Self::infinity()),
            "normalized_p" => Self::normalized_p(p.unwrap_or(2.0)),
            "uhlenbeck" => Self::uhlenbeck(GChoice::Power { p: p.unwrap_or(2.0) }),
            "mean_curvature" => Ok(Self::mean_curvature()),
            "aronsson" => Self::aronsson(FChoice::HalfSquare),
            "broken" => Ok(Self::broken_negative_identity()),
            other => Err(OperatorError::UnknownName(other.to_string())),
        }
    }

    /// True when `A` has a direction singularity at `xi = 0` that needs the
    /// gradient regularization.
    pub fn singular_at_zero(&self) -> bool {
        match &self.kind {
            Kind::NormalizedP { p } => *p != 2.0,
            Kind::Uhlenbeck { g } => match g {
                GChoice::Power { p } => *p != 2.0,
                GChoice::Bounded => false,
            },
            _ => false,
        }
    }

    /// Homogeneity degree of `A` when exact: `A(t xi) = t^d A(xi)`.
    pub fn homogeneity_degree(&self) -> Option<f64> {
        match &self.kind {
            Kind::SubLaplacian | Kind::BrokenNegIdentity | Kind::NormalizedP { .. } => {
                Some(0.0)
            }
            Kind::Infinity | Kind::Aronsson { .. } => Some(2.0),
            Kind::Uhlenbeck { g } => match g {
                GChoice::Power { .. } => Some(0.0),
                GChoice::Bounded => None,
            },
            Kind::MeanCurvature => None,
        }
    }

    /// Gauge `phi(s) = s^k` on `(0, 1]`.
    pub fn phi(&self, s: f64) -> f64 {
        debug_assert!(s > 0.0, "phi evaluated off (0,1]");
        s.powf(self.phi_exponent)
    }

    /// Coefficient matrix `A(xi)`; `eps` regularizes the direction
    /// `xi xi^T / |xi|^2` into `xi xi^T / (|xi|^2 + eps^2)`.
    pub fn a_matrix(&self, xi: &DVector<f64>, eps: f64) -> Result<DMatrix<f64>, OperatorError> {
        let m = xi.len();
        let eye = DMatrix::identity(m, m);
        let nsq = xi.norm_squared();
        let dir = |coeff_over_nsq: f64| -> Result<DMatrix<f64>, OperatorError> {
            let denom = nsq + eps * eps;
            if denom == 0.0 {
                return Err(OperatorError::SingularGradient);
            }
            Ok(xi * xi.transpose() * (coeff_over_nsq / denom))
        };
        Ok(match &self.kind {
            Kind::SubLaplacian => eye,
            Kind::BrokenNegIdentity => -eye,
            Kind::Infinity => xi * xi.transpose(),
            Kind::NormalizedP { p } => {
                if *p == 2.0 {
                    eye
                } else {
                    eye + dir(p - 2.0)?
                }
            }
            Kind::Uhlenbeck { g } => match g {
                GChoice::Power { p } => {
                    if *p == 2.0 {
                        eye
                    } else {
                        eye + dir(p - 2.0)?
                    }
                }
                GChoice::Bounded => {
                    let denom = 1.0 + nsq + eps * eps;
                    eye - xi * xi.transpose() / denom
                }
            },
            Kind::MeanCurvature => {
                let denom = 1.0 + nsq + eps * eps;
                eye - xi * xi.transpose() / denom
            }
            Kind::Aronsson { f } => {
                let grad_f: DVector<f64> = match f {
                    FChoice::HalfSquare => xi.clone(),
                    FChoice::Diag { weights } => {
                        if weights.len() != m {
                            return Err(OperatorError::DimensionMismatch {
                                expected: weights.len(),
                                got: m,
                            });
                        }
                        DVector::from_fn(m, |i, _| weights[i] * xi[i])
                    }
                };
                &grad_f * grad_f.transpose()
            }
        })
    }

    pub fn h_value(&self, xi: &DVector<f64>) -> f64 {
        match &self.h_term {
            HChoice::Zero => 0.0,
            HChoice::Norm { coeff } => coeff * xi.norm(),
        }
    }

    /// `E(xi) = <A(xi) xi, xi>`.
    pub fn energy(&self, xi: &DVector<f64>) -> Result<f64, OperatorError> {
        Ok((self.a_matrix(xi, 0.0)? * xi).dot(xi))
    }

    /// `L = -Tr(A(hgrad) hhess_sym) + H(hgrad)`.
    pub fn apply(&self, jet: &HorizontalJet, eps: f64) -> Result<f64, OperatorError> {
        let a = self.a_matrix(&jet.hgrad, eps)?;
        Ok(-(&a * &jet.hhess_sym).trace() + self.h_value(&jet.hgrad))
    }

    /// Allocation-free twin of [`apply`](Self::apply) on flat buffers, used
    /// by the grid solver's inner sweep. `hgrad` has length `m`; `hhess` is
    /// the symmetric `m x m` matrix in row-major order.
    pub fn apply_flat(&self, hgrad: &[f64], hhess: &[f64], eps: f64) -> Result<f64, OperatorError> {
        let m = hgrad.len();
        debug_assert_eq!(hhess.len(), m * m);
        let nsq: f64 = hgrad.iter().map(|v| v * v).sum();
        let tr_s: f64 = (0..m).map(|i| hhess[i * m + i]).sum();
        let quad = |g: &dyn Fn(usize) -> f64| -> f64 {
            let mut acc = 0.0;
            for i in 0..m {
                for j in 0..m {
                    acc += g(i) * hhess[i * m + j] * g(j);
                }
            }
            acc
        };
        let xsx = quad(&|i| hgrad[i]);
        let trace_term = match &self.kind {
            Kind::SubLaplacian => tr_s,
            Kind::BrokenNegIdentity => -tr_s,
            Kind::Infinity => xsx,
            Kind::NormalizedP { p } | Kind::Uhlenbeck { g: GChoice::Power { p } } => {
                if *p == 2.0 {
                    tr_s
                } else {
                    let denom = nsq + eps * eps;
                    if denom == 0.0 {
                        return Err(OperatorError::SingularGradient);
                    }
                    tr_s + (p - 2.0) * xsx / denom
                }
            }
            Kind::MeanCurvature | Kind::Uhlenbeck { g: GChoice::Bounded } => {
                tr_s - xsx / (1.0 + nsq + eps * eps)
            }
            Kind::Aronsson { f } => match f {
                FChoice::HalfSquare => xsx,
                FChoice::Diag { weights } => {
                    if weights.len() != m {
                        return Err(OperatorError::DimensionMismatch {
                            expected: weights.len(),
                            got: m,
                        });
                    }
                    quad(&|i| weights[i] * hgrad[i])
                }
            },
        };
        let h = match &self.h_term {
            HChoice::Zero => 0.0,
            HChoice::Norm { coeff } => coeff * nsq.sqrt(),
        };
        Ok(-trace_term + h)
    }

    /// `Tr(A(hgrad) G)` for a symmetric `m x m` matrix `G` in row-major
    /// order; with `G = sigma^T sigma` this is the Euclidean diffusion
    /// trace that caps the solver step. Every instance has the form
    /// `A = c0 I + c1 v v^T`, so the trace reduces to
    /// `c0 Tr G + c1 v^T G v`.
    pub fn trace_a_weighted_flat(
        &self,
        hgrad: &[f64],
        gram: &[f64],
        eps: f64,
    ) -> Result<f64, OperatorError> {
        let m = hgrad.len();
        debug_assert_eq!(gram.len(), m * m);
        let nsq: f64 = hgrad.iter().map(|v| v * v).sum();
        let tr_g: f64 = (0..m).map(|i| gram[i * m + i]).sum();
        let quad = |g: &dyn Fn(usize) -> f64| -> f64 {
            let mut acc = 0.0;
            for i in 0..m {
                for j in 0..m {
                    acc += g(i) * gram[i * m + j] * g(j);
                }
            }
            acc
        };
        Ok(match &self.kind {
            Kind::SubLaplacian => tr_g,
            Kind::BrokenNegIdentity => -tr_g,
            Kind::Infinity => quad(&|i| hgrad[i]),
            Kind::NormalizedP { p } | Kind::Uhlenbeck { g: GChoice::Power { p } } => {
                if *p == 2.0 {
                    tr_g
                } else {
                    let denom = nsq + eps * eps;
                    if denom == 0.0 {
                        return Err(OperatorError::SingularGradient);
                    }
                    tr_g + (p - 2.0) * quad(&|i| hgrad[i]) / denom
                }
            }
            Kind::MeanCurvature | Kind::Uhlenbeck { g: GChoice::Bounded } => {
                tr_g - quad(&|i| hgrad[i]) / (1.0 + nsq + eps * eps)
            }
            Kind::Aronsson { f } => match f {
                FChoice::HalfSquare => quad(&|i| hgrad[i]),
                FChoice::Diag { weights } => {
                    if weights.len() != m {
                        return Err(OperatorError::DimensionMismatch {
                            expected: weights.len(),
                            got: m,
                        });
                    }
                    quad(&|i| weights[i] * hgrad[i])
                }
            },
        })
    }

    /// `Tr A(hgrad)` on a flat gradient buffer; the damping normalizer of
    /// the grid solver.
    pub fn trace_a_flat(&self, hgrad: &[f64], eps: f64) -> Result<f64, OperatorError> {
        let m = hgrad.len() as f64;
        let nsq: f64 = hgrad.iter().map(|v| v * v).sum();
        Ok(match &self.kind {
            Kind::SubLaplacian => m,
            Kind::BrokenNegIdentity => -m,
            Kind::Infinity => nsq,
            Kind::NormalizedP { p } | Kind::Uhlenbeck { g: GChoice::Power { p } } => {
                if *p == 2.0 {
                    m
                } else {
                    let denom = nsq + eps * eps;
                    if denom == 0.0 {
                        return Err(OperatorError::SingularGradient);
                    }
                    m + (p - 2.0) * nsq / denom
                }
            }
            Kind::MeanCurvature | Kind::Uhlenbeck { g: GChoice::Bounded } => {
                m - nsq / (1.0 + nsq + eps * eps)
            }
            Kind::Aronsson { f } => match f {
                FChoice::HalfSquare => nsq,
                FChoice::Diag { weights } => {
                    if weights.len() != hgrad.len() {
                        return Err(OperatorError::DimensionMismatch {
                            expected: weights.len(),
                            got: hgrad.len(),
                        });
                    }
                    weights
                        .iter()
                        .zip(hgrad)
                        .map(|(w, g)| (w * g) * (w * g))
                        .sum()
                }
            },
        })
    }
}

// ----------------------------------------------------------------- sampling

pub fn random_symmetric<R: Rng>(m: usize, scale: f64, rng: &mut R) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let v = rng.gen_range(-scale..scale);
            x[(i, j)] = v;
            x[(j, i)] = v;
        }
    }
    x
}

pub fn random_psd<R: Rng>(m: usize, scale: f64, rng: &mut R) -> DMatrix<f64> {
    let b = DMatrix::from_fn(m, m, |_, _| rng.gen_range(-scale..scale));
    &b * b.transpose()
}

fn random_nonzero_xi<R: Rng>(m: usize, radius: f64, rng: &mut R) -> DVector<f64> {
    loop {
        let xi = DVector::from_fn(m, |_, _| rng.gen_range(-radius..radius));
        if xi.norm() > 1e-6 * radius {
            return xi;
        }
    }
}

/// Worst observed slack of a family of inequalities `lhs <= rhs`
/// (`slack = rhs - lhs`, negative slack beyond tolerance is a violation).
#[derive(Debug, Clone, Serialize)]
pub struct SampleStats {
    pub samples: usize,
    pub violations: usize,
    pub worst_slack: f64,
}

impl SampleStats {
    fn new() -> Self {
        SampleStats { samples: 0, violations: 0, worst_slack: f64::INFINITY }
    }

    fn record(&mut self, slack: f64, scale: f64) {
        self.samples += 1;
        self.worst_slack = self.worst_slack.min(slack);
        if slack < -1e-9 * scale.max(1.0) {
            self.violations += 1;
        }
    }

    pub fn ok(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EllipticityReport {
    pub samples: usize,
    pub violations: usize,
    pub min_energy: f64,
}

/// Samples `E(xi) > 0` over nonzero gradients in a coordinate box.
pub fn check_ellipticity<R: Rng>(
    op: &OperatorSpec,
    m: usize,
    radius: f64,
    samples: usize,
    rng: &mut R,
) -> Result<EllipticityReport, OperatorError> {
    let mut violations = 0;
    let mut min_energy = f64::INFINITY;
    for _ in 0..samples {
        let xi = random_nonzero_xi(m, radius, rng);
        let e = op.energy(&xi)?;
        min_energy = min_energy.min(e);
        if !(e > 0.0) {
            violations += 1;
        }
    }
    Ok(EllipticityReport { samples, violations, min_energy })
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingReport {
    pub matrix_part: SampleStats,
    pub h_part: SampleStats,
    /// Largest `|A(t xi) - t^d A(xi)|` observed when a homogeneity degree is
    /// declared; exact homogeneity plus matching gauge certifies the scaling
    /// bound as an identity.
    pub homogeneity_defect: Option<f64>,
}

impl ScalingReport {
    pub fn ok(&self) -> bool {
        self.matrix_part.ok() && self.h_part.ok()
    }
}

/// Samples the scaling bound over `t in [1, t_max]`, gradients in a box and
/// symmetric matrices with entries in `[-1, 1]`.
pub fn check_scaling<R: Rng>(
    op: &OperatorSpec,
    m: usize,
    radius: f64,
    t_max: f64,
    samples: usize,
    rng: &mut R,
) -> Result<ScalingReport, OperatorError> {
    let mut matrix_part = SampleStats::new();
    let mut h_part = SampleStats::new();
    let mut defect: Option<f64> = op.homogeneity_degree().map(|_| 0.0);
    for k in 0..samples {
        let t = rng.gen_range(1.0..t_max);
        let xi = random_nonzero_xi(m, radius, rng);
        let x = if k % 4 == 0 {
            // Include the rank-one case X = xi xi^T explicitly.
            &xi * xi.transpose()
        } else {
            random_symmetric(m, 1.0, rng)
        };
        let a1 = op.a_matrix(&xi, 0.0)?;
        let txi = &xi * t;
        let at = op.a_matrix(&txi, 0.0)?;
        let factor = 1.0 / (t * op.phi(1.0 / t));
        let lhs = -(&at * &x).trace();
        let rhs = -(&a1 * &x).trace() * factor;
        let scale = lhs.abs().max(rhs.abs());
        matrix_part.record(rhs - lhs, scale);

        let h_lhs = op.h_value(&txi);
        let h_rhs = op.h_value(&xi) / op.phi(1.0 / t);
        h_part.record(h_rhs - h_lhs, h_lhs.abs().max(h_rhs.abs()));

        if let (Some(d), Some(deg)) = (defect.as_mut(), op.homogeneity_degree()) {
            let diff = (&at - &a1 * t.powf(deg)).norm();
            *d = d.max(diff);
        }
    }
    Ok(ScalingReport { matrix_part, h_part, homogeneity_defect: defect })
}

#[derive(Debug, Clone, Serialize)]
pub struct LowerBoundReport {
    /// `E(xi)`.
    pub lhs: f64,
    /// `inf E over |zeta| = theta`, from sphere sampling with refinement.
    pub a_theta: f64,
    /// `a_theta / phi(theta/|xi|)`.
    pub rhs: f64,
    /// `|xi| a_theta / (theta phi(theta/|xi|))`.
    pub rhs_strong: f64,
    pub ok: bool,
}

/// Both sides of the ellipticity lower bound at `xi` with sphere radius
/// `theta <= |xi|`.
pub fn ellipticity_lower_bound<R: Rng>(
    op: &OperatorSpec,
    xi: &DVector<f64>,
    theta: f64,
    sphere_samples: usize,
    rng: &mut R,
) -> Result<LowerBoundReport, OperatorError> {
    let norm = xi.norm();
    if !(theta > 0.0 && theta <= norm) {
        return Err(OperatorError::InvalidParameter(format!(
            "need 0 < theta <= |xi|, got theta = {theta}, |xi| = {norm}"
        )));
    }
    if sphere_samples == 0 {
        return Err(OperatorError::InvalidParameter("sphere_samples must be >= 1".into()));
    }
    let m = xi.len();
    let mut best_dir = xi / norm;
    let mut a_theta = f64::INFINITY;
    // Coarse pass plus three shrinking refinement rounds around the minimizer.
    for round in 0..4 {
        let spread = [1.0, 0.1, 0.01, 0.001][round];
        let mut round_best = best_dir.clone();
        for _ in 0..sphere_samples {
            let zeta = if round == 0 {
                random_nonzero_xi(m, 1.0, rng)
            } else {
                &best_dir + random_nonzero_xi(m, spread, rng)
            };
            let dir = &zeta / zeta.norm();
            let e = op.energy(&(&dir * theta))?;
            if e < a_theta {
                a_theta = e;
                round_best = dir;
            }
        }
        best_dir = round_best;
    }
    let lhs = op.energy(xi)?;
    let phi = op.phi(theta / norm);
    let rhs = a_theta / phi;
    let rhs_strong = norm * a_theta / (theta * phi);
    Ok(LowerBoundReport { lhs, a_theta, rhs, rhs_strong, ok: lhs >= rhs * (1.0 - 1e-9) })
}

#[derive(Debug, Clone, Serialize)]
pub struct SmpReport {
    pub monotonicity: SampleStats,
    pub lambda_scaling: SampleStats,
    pub positivity: SampleStats,
}

impl SmpReport {
    pub fn ok(&self) -> bool {
        self.monotonicity.ok() && self.lambda_scaling.ok() && self.positivity.ok()
    }
}

/// Samples the three maximum-principle hypotheses for
/// `G(x, r, xi, X) = -Tr(A(xi) X) + H(xi)`.
pub fn check_smp_hypotheses<R: Rng>(
    op: &OperatorSpec,
    m: usize,
    radius: f64,
    samples: usize,
    rng: &mut R,
) -> Result<SmpReport, OperatorError> {
    let mut monotonicity = SampleStats::new();
    let mut lambda_scaling = SampleStats::new();
    let mut positivity = SampleStats::new();
    for _ in 0..samples {
        let xi = random_nonzero_xi(m, radius, rng);
        let a = op.a_matrix(&xi, 0.0)?;
        let h = op.h_value(&xi);

        // (1) For Y <= X, G(., X) <= G(., Y): Tr(A (X - Y)) >= 0.
        let p = random_psd(m, 1.0, rng);
        let slack = (&a * &p).trace();
        monotonicity.record(slack, p.norm());

        // (2) G(x, lambda r, lambda xi, lambda X) >= phi(lambda) G(x, r, xi, X).
        let lambda = rng.gen_range(0.01f64..1.0);
        let x = random_symmetric(m, 1.0, rng);
        let lxi = &xi * lambda;
        let al = op.a_matrix(&lxi, 0.0)?;
        let lhs = -lambda * (&al * &x).trace() + op.h_value(&lxi);
        let rhs = op.phi(lambda) * (-(&a * &x).trace() + h);
        lambda_scaling.record(lhs - rhs, lhs.abs().max(rhs.abs()));

        // (3) gamma E(xi) - Tr(A(xi) X) + H(xi) > 0 for gamma above the
        // threshold (Tr(A X) - H)/E; probed at twice the threshold.
        let energy = (&a * &xi).dot(&xi);
        let tr_ax = (&a * &x).trace();
        if energy <= 0.0 {
            positivity.record(-1.0, 1.0);
        } else {
            let threshold = (tr_ax - h) / energy;
            let gamma = if threshold > 0.0 { 2.0 * threshold } else { 1.0 };
            let value = gamma * energy - tr_ax + h;
            positivity.record(value, tr_ax.abs().max(1.0));
        }
    }
    Ok(SmpReport { monotonicity, lambda_scaling, positivity })
}

#[derive(Debug, Clone, Serialize)]
pub struct ModulusEstimate {
    pub radii: Vec<f64>,
    pub omega_a: Vec<f64>,
    pub omega_h: Vec<f64>,
    pub pairs_per_radius: usize,
}

/// Monte-Carlo moduli of continuity of `A` (Frobenius) and `H` over the
/// annulus `inner <= |xi| <= outer`, per distance radius. Radial probes at
/// the exact distance are included so collinear suprema are attained;
/// estimates are made monotone in the radius by a final prefix maximum.
pub fn estimate_moduli<R: Rng>(
    op: &OperatorSpec,
    m: usize,
    inner: f64,
    outer: f64,
    radii: &[f64],
    pairs_per_radius: usize,
    rng: &mut R,
) -> Result<ModulusEstimate, OperatorError> {
    let mut order: Vec<usize> = (0..radii.len()).collect();
    order.sort_by(|&a, &b| radii[a].total_cmp(&radii[b]));
    let mut omega_a = vec![0.0f64; radii.len()];
    let mut omega_h = vec![0.0f64; radii.len()];
    let sample_annulus = |rng: &mut R| -> DVector<f64> {
        loop {
            let xi = random_nonzero_xi(m, outer, rng);
            let n = xi.norm();
            if n >= inner && n <= outer {
                return xi;
            }
        }
    };
    for (slot, &idx) in order.iter().enumerate() {
        let t = radii[idx];
        let mut sup_a: f64 = 0.0;
        let mut sup_h: f64 = 0.0;
        let mut done = 0;
        let mut attempts = 0usize;
        while done < pairs_per_radius && attempts < pairs_per_radius * 50 {
            attempts += 1;
            let xi = sample_annulus(rng);
            let n = xi.norm();
            let zeta = if attempts % 5 == 0 {
                // Radial probe at exact distance t.
                let sign = if n + t <= outer { 1.0 } else { -1.0 };
                &xi * (1.0 + sign * t / n)
            } else {
                let dir = random_nonzero_xi(m, 1.0, rng);
                let step = rng.gen_range(0.0..1.0) * t;
                &xi + &dir * (step / dir.norm())
            };
            let zn = zeta.norm();
            if zn < inner || zn > outer || (&zeta - &xi).norm() > t * (1.0 + 1e-12) {
                continue;
            }
            done += 1;
            let da = (op.a_matrix(&xi, 0.0)? - op.a_matrix(&zeta, 0.0)?).norm();
            let dh = (op.h_value(&xi) - op.h_value(&zeta)).abs();
            sup_a = sup_a.max(da);
            sup_h = sup_h.max(dh);
        }
        omega_a[idx] = sup_a;
        omega_h[idx] = sup_h;
        // Prefix maximum in increasing radius keeps the estimate monotone.
        if slot > 0 {
            let prev = order[slot - 1];
            omega_a[idx] = omega_a[idx].max(omega_a[prev]);
            omega_h[idx] = omega_h[idx].max(omega_h[prev]);
        }
    }
    Ok(ModulusEstimate {
        radii: radii.to_vec(),
        omega_a,
        omega_h,
        pairs_per_radius,
    })
}

impl ModulusEstimate {
    /// Estimated `omega_A` at radius `t` (exact match or next larger radius).
    pub fn omega_a_at(&self, t: f64) -> f64 {
        self.lookup(&self.omega_a, t)
    }

    pub fn omega_h_at(&self, t: f64) -> f64 {
        self.lookup(&self.omega_h, t)
    }

    fn lookup(&self, table: &[f64], t: f64) -> f64 {
        let mut best: Option<(f64, f64)> = None;
        for (&r, &v) in self.radii.iter().zip(table) {
            if r >= t * (1.0 - 1e-12) {
                match best {
                    Some((br, _)) if br <= r => {}
                    _ => best = Some((r, v)),
                }
            }
        }
        best.map(|(_, v)| v)
            .unwrap_or_else(|| table.iter().fold(0.0f64, |m, &v| m.max(v)))
    }
}
