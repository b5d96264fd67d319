//! Semi-convexity scans, group Moreau-type envelopes, and the perturbation
//! and translation machinery used by the comparison experiments.
//!
//! Everything here operates either on [`GridFunction`] snapshots (second
//! differences, sup/inf convolutions, translated maxima, domain masks) or on
//! analytic [`ScalarField`]s with exact jets (composition and tilt checks).
//! Node scans are embarrassingly parallel and are parallelized with rayon;
//! only per-index maps and max/min reductions are parallel, so results are
//! bitwise deterministic.

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::field::ScalarField;
use crate::frame::{frame_at, horizontal_jet, FrameError, HorizontalJet};
use crate::grid::{GridError, GridFunction};
use crate::group::{estimate_conjugation_constant, GroupError, GroupSpec, Point};
use crate::op::{ModulusEstimate, OperatorError, OperatorSpec};

/// Scan cap for the semi-convexity constant; beyond this the function is
/// declared not semi-convex at grid scale.
pub const LAMBDA_CAP: f64 = 1e6;

#[derive(Debug, Error)]
pub enum SemiError {
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("grid is not semi-convex at grid scale (constant exceeds {cap:e})")]
    NotSemiConvex { cap: f64 },
    #[error("node {index} does not attain the grid maximum")]
    NotArgmax { index: usize },
    #[error("translated point left the grid box")]
    DomainExit,
    #[error("shrunken domain mask is empty at delta = {delta}")]
    EmptyDomain { delta: f64 },
}

/// Result of the second-difference scan.
#[derive(Debug, Clone, Copy)]
pub struct SemiConvexity {
    /// Smallest `lambda >= 0` such that every scanned second difference of
    /// `u + lambda |x|^2 / 2` clears `-tol`.
    pub lambda: f64,
    /// False when `lambda` hits [`LAMBDA_CAP`].
    pub semiconvex: bool,
    /// Worst raw second difference encountered.
    pub min_second_difference: f64,
}

/// Scans pure (axis) and diagonal (axis-pair) second central differences of
/// `u` and returns the smallest shift `lambda` that makes them all
/// nonnegative up to a relative tolerance. Adding `lambda |x|^2 / 2` adds
/// exactly `lambda` to every such difference quotient, so
/// `lambda = max(0, -min - tol)`.
pub fn semiconvexity_constant(u: &GridFunction) -> SemiConvexity {
    let d = u.ndim();
    // Offsets: e_a, then e_a + e_b and e_a - e_b for a < b.
    let mut offsets: Vec<Vec<isize>> = Vec::new();
    for a in 0..d {
        let mut o = vec![0isize; d];
        o[a] = 1;
        offsets.push(o);
    }
    for a in 0..d {
        for b in (a + 1)..d {
            for sgn in [1isize, -1] {
                let mut o = vec![0isize; d];
                o[a] = 1;
                o[b] = sgn;
                offsets.push(o);
            }
        }
    }
    let step_sq: Vec<f64> = offsets
        .iter()
        .map(|o| {
            o.iter()
                .enumerate()
                .map(|(a, &c)| (c as f64 * u.spacing[a]).powi(2))
                .sum()
        })
        .collect();

    let min_dd = (0..u.len())
        .into_par_iter()
        .map(|lin| {
            let mut idx = [0usize; 8];
            let idx = &mut idx[..d];
            u.unravel(lin, idx);
            let mut local = f64::INFINITY;
            for (o, &ss) in offsets.iter().zip(&step_sq) {
                let mut plus = 0usize;
                let mut minus = 0usize;
                let mut ok = true;
                for a in 0..d {
                    let ip = idx[a] as isize + o[a];
                    let im = idx[a] as isize - o[a];
                    if ip < 0 || im < 0 || ip >= u.shape[a] as isize || im >= u.shape[a] as isize {
                        ok = false;
                        break;
                    }
                    plus += ip as usize * u.strides[a];
                    minus += im as usize * u.strides[a];
                }
                if !ok {
                    continue;
                }
                let dd = (u.values[plus] - 2.0 * u.values[lin] + u.values[minus]) / ss;
                if dd < local {
                    local = dd;
                }
            }
            local
        })
        .reduce(|| f64::INFINITY, f64::min);

    let tol = 1e-9 * u.sup_norm().max(1.0);
    let lambda = (-min_dd - tol).max(0.0);
    SemiConvexity {
        lambda,
        semiconvex: lambda <= LAMBDA_CAP,
        min_second_difference: min_dd,
    }
}

fn node_coords_flat(g: &GridFunction) -> Vec<f64> {
    let d = g.ndim();
    let mut coords = vec![0.0; g.len() * d];
    let mut idx = vec![0usize; d];
    for lin in 0..g.len() {
        g.unravel(lin, &mut idx);
        let mut x = vec![0.0; d];
        g.node_coord(&idx, &mut x);
        coords[lin * d..(lin + 1) * d].copy_from_slice(&x);
    }
    coords
}

fn check_grid_group(spec: &GroupSpec, g: &GridFunction) -> Result<(), SemiError> {
    if spec.step > 3 {
        return Err(GroupError::UnsupportedStep { step: spec.step }.into());
    }
    if spec.dim != g.ndim() {
        return Err(SemiError::InvalidParameter(format!(
            "grid dimension {} does not match group dimension {}",
            g.ndim(),
            spec.dim
        )));
    }
    Ok(())
}

fn convolve(
    spec: &GroupSpec,
    w: &GridFunction,
    eps: f64,
    sup: bool,
) -> Result<GridFunction, SemiError> {
    if !(eps > 0.0) {
        return Err(SemiError::InvalidParameter(format!(
            "convolution parameter must be positive, got {eps}"
        )));
    }
    check_grid_group(spec, w)?;
    let d = w.ndim();
    let m = spec.layer_dims[0];
    let rf = crate::group::factorial(spec.step) as i32;
    let coords = node_coords_flat(w);
    let inv2eps = 1.0 / (2.0 * eps);

    // Node where w is extreme (max for the upper envelope, min for the
    // lower); seeding the running best with it tightens the skip bound
    // from the first iteration.
    let mut ext = 0usize;
    for (i, &v) in w.values.iter().enumerate() {
        let better = if sup { v > w.values[ext] } else { v < w.values[ext] };
        if better {
            ext = i;
        }
    }

    // Row-major layout puts the first-layer axes outermost, so every
    // first-layer index prefix owns one contiguous block of `tail` nodes
    // sharing the same first-layer coordinates.
    let tail: usize = w.shape[m..].iter().product();
    let heads = w.len() / tail;
    let wmax = w.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let wmin = w.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let wext = if sup { wmax } else { wmin };

    let values: Vec<f64> = (0..w.len())
        .into_par_iter()
        .map(|ix| {
            let x = &coords[ix * d..ix * d + d];
            let mut minus_x = [0.0f64; 8];
            for a in 0..d {
                minus_x[a] = -x[a];
            }
            let mut z = [0.0f64; 8];
            // Penalty distance d(x^-1, y^-1) = |y * (-x)| by the inverse of
            // an inverse; the power 2 r! makes it polynomial.
            let mut pen_at = |iy: usize| {
                let y = &coords[iy * d..iy * d + d];
                spec.multiply_buf(y, &minus_x[..d], &mut z[..d]);
                spec.hom_norm_pow(&z[..d]) * inv2eps
            };
            let cand_at = |wv: f64, pen: f64| if sup { wv - pen } else { wv + pen };
            let mut best = cand_at(w.values[ix], pen_at(ix));
            let seed = cand_at(w.values[ext], pen_at(ext));
            if (sup && seed > best) || (!sup && seed < best) {
                best = seed;
            }
            for head in 0..heads {
                let base = head * tail;
                // The first layer of y * (-x) is the plain difference, so
                // its norm term alone bounds the penalty from below; the
                // bound is shared by the whole block.
                let y1 = &coords[base * d..base * d + m];
                let mut s = 0.0;
                for a in 0..m {
                    let t = y1[a] - x[a];
                    s += t * t;
                }
                let low = s.powi(rf) * inv2eps;
                if sup {
                    // Even the global max cannot beat the running best
                    // through this penalty: skip the block.
                    if wext - low <= best {
                        continue;
                    }
                    let mut thr = best + low;
                    for (off, &wv) in w.values[base..base + tail].iter().enumerate() {
                        if wv > thr {
                            let cand = cand_at(wv, pen_at(base + off));
                            if cand > best {
                                best = cand;
                                thr = best + low;
                            }
                        }
                    }
                } else {
                    if wext + low >= best {
                        continue;
                    }
                    let mut thr = best - low;
                    for (off, &wv) in w.values[base..base + tail].iter().enumerate() {
                        if wv < thr {
                            let cand = cand_at(wv, pen_at(base + off));
                            if cand < best {
                                best = cand;
                                thr = best - low;
                            }
                        }
                    }
                }
            }
            best
        })
        .collect();

    Ok(GridFunction::from_values(&w.lo, &w.hi, &w.shape, values)?)
}

/// Group Moreau-type upper envelope
/// `(w^eps)(x) = max_y { w(y) - d(x^-1, y^-1)^(2 r!) / (2 eps) }`,
/// maximized over grid nodes.
pub fn sup_convolution(
    spec: &GroupSpec,
    w: &GridFunction,
    eps: f64,
) -> Result<GridFunction, SemiError> {
    convolve(spec, w, eps, true)
}

/// Dual lower envelope: `min_y { w(y) + penalty }`. Satisfies
/// `inf_convolution(w) = -sup_convolution(-w)` exactly.
pub fn inf_convolution(
    spec: &GroupSpec,
    w: &GridFunction,
    eps: f64,
) -> Result<GridFunction, SemiError> {
    convolve(spec, w, eps, false)
}

/// `u_lambda = u + lambda (u - min u)^2`. The deviation is at most
/// `4 lambda |u|_inf^2` since `u - min u <= 2 |u|_inf`.
pub fn strict_subsolution_perturb(
    u: &GridFunction,
    lambda: f64,
) -> Result<GridFunction, SemiError> {
    if !(lambda > 0.0) {
        return Err(SemiError::InvalidParameter(format!(
            "perturbation weight must be positive, got {lambda}"
        )));
    }
    let u0 = u.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let values: Vec<f64> = u
        .values
        .iter()
        .map(|&v| v + lambda * (v - u0) * (v - u0))
        .collect();
    Ok(GridFunction::from_values(&u.lo, &u.hi, &u.shape, values)?)
}

/// Increasing scalar reparametrization `h` with `h' >= 1`, `h'' >= 0` on the
/// sampled range.
#[derive(Debug, Clone, Copy)]
pub enum MonotoneMap {
    Identity,
    /// `h(s) = s + lambda (s - base)^2`; requires `lambda >= 0` and samples
    /// with `s >= base` so that `h' >= 1`.
    ShiftedSquare { lambda: f64, base: f64 },
}

impl MonotoneMap {
    pub fn eval(&self, s: f64) -> f64 {
        match *self {
            MonotoneMap::Identity => s,
            MonotoneMap::ShiftedSquare { lambda, base } => s + lambda * (s - base) * (s - base),
        }
    }

    pub fn d1(&self, s: f64) -> f64 {
        match *self {
            MonotoneMap::Identity => 1.0,
            MonotoneMap::ShiftedSquare { lambda, base } => 1.0 + 2.0 * lambda * (s - base),
        }
    }

    pub fn d2(&self, _s: f64) -> f64 {
        match *self {
            MonotoneMap::Identity => 0.0,
            MonotoneMap::ShiftedSquare { lambda, .. } => 2.0 * lambda,
        }
    }
}

/// Outcome of the composition inequality scan.
#[derive(Debug, Clone)]
pub struct ChainRuleReport {
    pub samples: usize,
    pub skipped_singular: usize,
    /// Largest `lhs - rhs`; negative when the inequality holds strictly.
    pub max_violation: f64,
    /// Points where `lhs > rhs + tol`.
    pub violations: usize,
    pub tolerance: f64,
}

/// Checks, at each sample point, that applying the operator to `h(w)` is
/// bounded by the rescaled operator value of `w`:
/// `L(h(w)) <= h'^k [ L w - (h''/h') E(Xw) ]`, where `h'^k = 1/phi(1/h')`.
/// Uses the exact composite jets `X h(w) = h' Xw` and
/// `XX h(w) = h' XXw + h'' Xw Xw^T`. Points where a singular operator would
/// divide by `|Xw| = 0` are skipped and counted.
pub fn chain_rule_inequality_check(
    spec: &GroupSpec,
    op: &OperatorSpec,
    w: &dyn ScalarField,
    h: MonotoneMap,
    points: &[Point],
) -> Result<ChainRuleReport, SemiError> {
    if let MonotoneMap::ShiftedSquare { lambda, .. } = h {
        if lambda < 0.0 {
            return Err(SemiError::InvalidParameter(
                "reparametrization weight must be nonnegative".into(),
            ));
        }
    }
    let mut report = ChainRuleReport {
        samples: 0,
        skipped_singular: 0,
        max_violation: f64::NEG_INFINITY,
        violations: 0,
        tolerance: 1e-9,
    };
    for x in points {
        let frame = frame_at(spec, x)?;
        let jet = w.jet(x);
        let hj = horizontal_jet(spec, &frame, &jet)?;
        if op.singular_at_zero() && hj.hgrad.norm() < 1e-9 {
            report.skipped_singular += 1;
            continue;
        }
        let s = w.eval(x);
        let d1 = h.d1(s);
        let d2 = h.d2(s);
        if d1 < 1.0 - 1e-12 {
            return Err(SemiError::InvalidParameter(format!(
                "reparametrization slope {d1} below one at sample value {s}"
            )));
        }
        let hg = &hj.hgrad * d1;
        let hh = &hj.hhess_sym * d1 + (&hj.hgrad * hj.hgrad.transpose()) * d2;
        let composed = HorizontalJet {
            hgrad: hg,
            hhess_raw: hh.clone(),
            hhess_sym: hh,
        };
        let lhs = op.apply(&composed, 0.0)?;
        let lw = op.apply(&hj, 0.0)?;
        let ew = op.energy(&hj.hgrad)?;
        let rhs = (1.0 / op.phi(1.0 / d1)) * (lw - (d2 / d1) * ew);
        let tol = 1e-9 * (1.0 + lhs.abs().max(rhs.abs()));
        let viol = lhs - rhs;
        report.samples += 1;
        if viol > report.max_violation {
            report.max_violation = viol;
        }
        if viol > tol {
            report.violations += 1;
        }
        report.tolerance = report.tolerance.max(tol);
    }
    Ok(report)
}

/// Effect of a linear coordinate tilt `w_p = w + p . x` on the operator
/// value at the scanned points.
#[derive(Debug, Clone)]
pub struct PerturbationShift {
    pub p_norm: f64,
    pub samples: usize,
    pub skipped_singular: usize,
    /// `sup |L w_p - L w|` over the points.
    pub max_diff: f64,
    /// Sup of the structural envelope
    /// `omega_A(|p|)(|XXw| + |p|) + |A(Xw)| |p| + omega_H(|p|)`.
    pub max_envelope: f64,
    /// Largest pointwise ratio difference/envelope (the fitted constant).
    pub ratio: f64,
}

/// Evaluates `|L w_p - L w|` with the exact tilted jets
/// `X w_p = Xw + sigma^T p` and `XX w_p = XXw + M(x, p)` and compares it to
/// the moduli envelope. The constant is fitted (largest observed ratio), not
/// asserted.
pub fn linear_perturbation_shift(
    spec: &GroupSpec,
    op: &OperatorSpec,
    w: &dyn ScalarField,
    p: &[f64],
    points: &[Point],
    moduli: &ModulusEstimate,
) -> Result<PerturbationShift, SemiError> {
    if p.len() != spec.dim {
        return Err(SemiError::InvalidParameter(format!(
            "tilt vector length {} does not match group dimension {}",
            p.len(),
            spec.dim
        )));
    }
    let p_norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    if p_norm > 1.0 + 1e-12 {
        return Err(SemiError::InvalidParameter(format!(
            "tilt vector norm {p_norm} exceeds 1"
        )));
    }
    let pv = DVector::from_row_slice(p);
    let mut out = PerturbationShift {
        p_norm,
        samples: 0,
        skipped_singular: 0,
        max_diff: 0.0,
        max_envelope: 0.0,
        ratio: 0.0,
    };
    let wa = moduli.omega_a_at(p_norm);
    let wh = moduli.omega_h_at(p_norm);
    for x in points {
        let frame = frame_at(spec, x)?;
        let jet = w.jet(x);
        let hj = horizontal_jet(spec, &frame, &jet)?;
        let hg_p = &hj.hgrad + frame.sigma.transpose() * &pv;
        if op.singular_at_zero() && (hj.hgrad.norm() < 1e-9 || hg_p.norm() < 1e-9) {
            out.skipped_singular += 1;
            continue;
        }
        let hh_p = &hj.hhess_sym + frame.moment(&pv);
        let tilted = HorizontalJet {
            hgrad: hg_p,
            hhess_raw: hh_p.clone(),
            hhess_sym: hh_p,
        };
        let diff = (op.apply(&tilted, 0.0)? - op.apply(&hj, 0.0)?).abs();
        let envelope = wa * (hj.hhess_sym.norm() + p_norm)
            + op.a_matrix(&hj.hgrad, 0.0)?.norm() * p_norm
            + wh;
        out.samples += 1;
        out.max_diff = out.max_diff.max(diff);
        out.max_envelope = out.max_envelope.max(envelope);
        if envelope > 1e-15 {
            out.ratio = out.ratio.max(diff / envelope);
        }
    }
    Ok(out)
}

/// Dyadic tilt study: shifts for `p = 2^-k d`, `k = 1..=levels`, plus the
/// log-log decay slope of the worst difference.
#[derive(Debug, Clone)]
pub struct PerturbationDecay {
    pub shifts: Vec<PerturbationShift>,
    /// Largest ratio over all levels (reported constant).
    pub fitted_c: f64,
    /// Least-squares slope of `ln max_diff` against `ln |p|`; infinite when
    /// every difference vanishes to rounding.
    pub decay_slope: f64,
}

pub fn linear_perturbation_decay(
    spec: &GroupSpec,
    op: &OperatorSpec,
    w: &dyn ScalarField,
    direction: &[f64],
    points: &[Point],
    moduli: &ModulusEstimate,
    levels: usize,
) -> Result<PerturbationDecay, SemiError> {
    let dir_norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(dir_norm > 0.0) || levels == 0 {
        return Err(SemiError::InvalidParameter(
            "decay study needs a nonzero direction and at least one level".into(),
        ));
    }
    let unit: Vec<f64> = direction.iter().map(|v| v / dir_norm).collect();
    let mut shifts = Vec::with_capacity(levels);
    for k in 1..=levels {
        let scale = 0.5f64.powi(k as i32);
        let p: Vec<f64> = unit.iter().map(|v| v * scale).collect();
        shifts.push(linear_perturbation_shift(spec, op, w, &p, points, moduli)?);
    }
    let fitted_c = shifts.iter().fold(0.0f64, |acc, s| acc.max(s.ratio));
    let pts: Vec<(f64, f64)> = shifts
        .iter()
        .filter(|s| s.max_diff > 1e-14)
        .map(|s| (s.p_norm.ln(), s.max_diff.ln()))
        .collect();
    let decay_slope = if pts.len() < 2 {
        f64::INFINITY
    } else {
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        (n * sxy - sx * sy) / (n * sxx - sx * sx)
    };
    Ok(PerturbationDecay { shifts, fitted_c, decay_slope })
}

/// Tilt-probe outcome for the interior-maximum fraction.
#[derive(Debug, Clone)]
pub struct JensenReport {
    pub fraction: f64,
    pub trials: usize,
    pub interior_hits: usize,
    /// True when `u` is constant on the ball and the whole ball is the
    /// maximum set; an interior representative exists, so every trial counts.
    pub degenerate_constant: bool,
    pub ball_nodes: usize,
    pub interior_nodes: usize,
}

/// Samples uniform tilts `|p| < delta`, maximizes `u + p . x` over the
/// discrete Euclidean ball `B_r(xhat)`, and reports the fraction of trials
/// whose maximum set touches the ball interior (nodes whose axis neighbors
/// all stay in the ball). Ties within `1e-9 (range)` count as maxima; among
/// ties an interior representative is preferred, otherwise the lowest linear
/// index stands.
pub fn jensen_probe<R: Rng>(
    u: &GridFunction,
    xhat: usize,
    r: f64,
    delta: f64,
    trials: usize,
    rng: &mut R,
) -> Result<JensenReport, SemiError> {
    if !(r > 0.0) || !(delta > 0.0) || trials == 0 {
        return Err(SemiError::InvalidParameter(
            "probe needs positive radius, tilt bound, and trial count".into(),
        ));
    }
    if xhat >= u.len() {
        return Err(SemiError::InvalidParameter(format!(
            "argmax node {xhat} outside grid of {} nodes",
            u.len()
        )));
    }
    let sc = semiconvexity_constant(u);
    if !sc.semiconvex {
        return Err(SemiError::NotSemiConvex { cap: LAMBDA_CAP });
    }
    let umax = u.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let umin = u.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let tie_u = 1e-9 * (umax - umin).max(1e-12);
    if u.values[xhat] < umax - tie_u {
        return Err(SemiError::NotArgmax { index: xhat });
    }

    let d = u.ndim();
    let coords = node_coords_flat(u);
    let center = &coords[xhat * d..xhat * d + d];
    let mut in_ball = vec![false; u.len()];
    let mut ball: Vec<usize> = Vec::new();
    for lin in 0..u.len() {
        let x = &coords[lin * d..lin * d + d];
        let dist2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
        if dist2 <= r * r {
            in_ball[lin] = true;
            ball.push(lin);
        }
    }
    let mut idx = vec![0usize; d];
    let interior: Vec<bool> = ball
        .iter()
        .map(|&lin| {
            u.unravel(lin, &mut idx);
            (0..d).all(|a| {
                idx[a] > 0
                    && idx[a] + 1 < u.shape[a]
                    && in_ball[lin - u.strides[a]]
                    && in_ball[lin + u.strides[a]]
            })
        })
        .collect();
    let interior_nodes = interior.iter().filter(|&&b| b).count();
    if interior_nodes == 0 {
        return Err(SemiError::InvalidParameter(
            "ball radius is below grid resolution: no interior nodes".into(),
        ));
    }

    let ball_min = ball.iter().map(|&i| u.values[i]).fold(f64::INFINITY, f64::min);
    let ball_max = ball.iter().map(|&i| u.values[i]).fold(f64::NEG_INFINITY, f64::max);
    if ball_max - ball_min <= 1e-9 * u.sup_norm().max(1.0) {
        // Constant on the ball: the maximum set is the whole ball and an
        // interior representative is always available.
        return Ok(JensenReport {
            fraction: 1.0,
            trials,
            interior_hits: trials,
            degenerate_constant: true,
            ball_nodes: ball.len(),
            interior_nodes,
        });
    }

    let mut interior_hits = 0usize;
    let mut p = vec![0.0; d];
    for _ in 0..trials {
        loop {
            let mut nsq = 0.0;
            for v in p.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
                nsq += *v * *v;
            }
            if nsq <= 1.0 {
                break;
            }
        }
        let mut best = f64::NEG_INFINITY;
        let mut worst = f64::INFINITY;
        for &lin in &ball {
            let x = &coords[lin * d..lin * d + d];
            let tilt: f64 = x.iter().zip(&p).map(|(a, b)| a * b).sum();
            let v = u.values[lin] + delta * tilt;
            best = best.max(v);
            worst = worst.min(v);
        }
        let tie = 1e-9 * (best - worst).max(1e-12);
        let mut hit = false;
        for (k, &lin) in ball.iter().enumerate() {
            if !interior[k] {
                continue;
            }
            let x = &coords[lin * d..lin * d + d];
            let tilt: f64 = x.iter().zip(&p).map(|(a, b)| a * b).sum();
            if u.values[lin] + delta * tilt >= best - tie {
                hit = true;
                break;
            }
        }
        if hit {
            interior_hits += 1;
        }
    }
    Ok(JensenReport {
        fraction: interior_hits as f64 / trials as f64,
        trials,
        interior_hits,
        degenerate_constant: false,
        ball_nodes: ball.len(),
        interior_nodes,
    })
}

/// Shrunken-domain node masks for one `delta`.
#[derive(Debug, Clone)]
pub struct DomainMasks {
    pub delta: f64,
    /// Conjugation constant (Monte-Carlo estimate times the 1.5 safety
    /// factor) used for the outer mask.
    pub c_estimate: f64,
    /// `dist(x, boundary) > delta`.
    pub omega_delta: Vec<bool>,
    /// `dist(x, boundary) > c delta^(1/r)`.
    pub omega_upper: Vec<bool>,
    /// Intersection of the two.
    pub omega_cap: Vec<bool>,
    /// Group distance of every node to the discrete boundary band.
    pub boundary_distance: Vec<f64>,
}

impl DomainMasks {
    pub fn counts(&self) -> (usize, usize, usize) {
        let c = |m: &Vec<bool>| m.iter().filter(|&&b| b).count();
        (c(&self.omega_delta), c(&self.omega_upper), c(&self.omega_cap))
    }
}

/// Distance of every node to the boundary band, in the group metric
/// (minimum over boundary nodes; boundary nodes get zero).
pub fn boundary_distance_map(
    spec: &GroupSpec,
    g: &GridFunction,
) -> Result<Vec<f64>, SemiError> {
    check_grid_group(spec, g)?;
    let d = g.ndim();
    let coords = node_coords_flat(g);
    let bnodes: Vec<usize> = (0..g.len()).filter(|&i| g.boundary[i]).collect();
    let bcoords: Vec<f64> = bnodes
        .iter()
        .flat_map(|&i| coords[i * d..i * d + d].to_vec())
        .collect();
    let dist: Vec<f64> = (0..g.len())
        .into_par_iter()
        .map(|lin| {
            if g.boundary[lin] {
                return 0.0;
            }
            let x = &coords[lin * d..lin * d + d];
            let mut best = f64::INFINITY;
            for bi in 0..bnodes.len() {
                let b = &bcoords[bi * d..bi * d + d];
                let m = spec.metric_pow_buf(x, b);
                if m < best {
                    best = m;
                }
            }
            best.powf(1.0 / (2.0 * crate::group::factorial(spec.step)))
        })
        .collect();
    Ok(dist)
}

/// Builds the three shrunken-domain masks at scale `delta`: the metric
/// shrink `dist > delta`, the conjugation-adjusted shrink
/// `dist > c delta^(1/r)`, and their intersection. `c` comes from the
/// Monte-Carlo conjugation estimate over the box with a 1.5 safety factor.
pub fn domain_shrink<R: Rng>(
    spec: &GroupSpec,
    g: &GridFunction,
    delta: f64,
    samples: usize,
    rng: &mut R,
) -> Result<DomainMasks, SemiError> {
    if !(delta > 0.0) {
        return Err(SemiError::InvalidParameter(format!(
            "shrink scale must be positive, got {delta}"
        )));
    }
    check_grid_group(spec, g)?;
    let dist = boundary_distance_map(spec, g)?;
    let reach = g
        .lo
        .iter()
        .zip(&g.hi)
        .map(|(a, b)| a.abs().max(b.abs()))
        .fold(0.0f64, f64::max);
    let nu = reach.max(delta) * 1.1;
    let c_estimate = 1.5 * estimate_conjugation_constant(spec, nu, samples.max(100), rng)?;
    let upper_radius = c_estimate * delta.powf(1.0 / spec.step as f64);
    let omega_delta: Vec<bool> = dist.iter().map(|&v| v > delta).collect();
    let omega_upper: Vec<bool> = dist.iter().map(|&v| v > upper_radius).collect();
    let omega_cap: Vec<bool> = omega_delta
        .iter()
        .zip(&omega_upper)
        .map(|(&a, &b)| a && b)
        .collect();
    if !omega_cap.iter().any(|&b| b) {
        return Err(SemiError::EmptyDomain { delta });
    }
    Ok(DomainMasks {
        delta,
        c_estimate,
        omega_delta,
        omega_upper,
        omega_cap,
        boundary_distance: dist,
    })
}

/// Translated max record: value and argmax set of
/// `x -> u(x * h) - v(x * l)` over a node mask.
#[derive(Debug, Clone)]
pub struct TranslationMaxRecord {
    pub h: Point,
    pub l: Point,
    pub delta: f64,
    /// The maximum value.
    pub value: f64,
    /// All mask nodes within tie tolerance of the maximum, ascending; the
    /// first entry is the deterministic representative.
    pub argmax_nodes: Vec<usize>,
    pub scanned: usize,
    pub tie_tolerance: f64,
}

/// Computes the translated max over the metric-shrunken mask computed on the
/// fly. For repeated calls on the same geometry prefer
/// [`translation_max_with_mask`] with a cached [`DomainMasks`].
pub fn translation_max<R: Rng>(
    spec: &GroupSpec,
    u: &GridFunction,
    v: &GridFunction,
    h: &[f64],
    l: &[f64],
    delta: f64,
    samples: usize,
    rng: &mut R,
) -> Result<TranslationMaxRecord, SemiError> {
    let masks = domain_shrink(spec, u, delta, samples, rng)?;
    translation_max_with_mask(spec, u, v, h, l, &masks)
}

/// Max of `u(x * h) - v(x * l)` over the `omega_delta` mask nodes, with
/// translated values read by multilinear interpolation. Ties within
/// `1e-9 (range)` are all recorded, lowest linear index first.
pub fn translation_max_with_mask(
    spec: &GroupSpec,
    u: &GridFunction,
    v: &GridFunction,
    h: &[f64],
    l: &[f64],
    masks: &DomainMasks,
) -> Result<TranslationMaxRecord, SemiError> {
    check_grid_group(spec, u)?;
    if !u.same_geometry(v) {
        return Err(SemiError::InvalidParameter(
            "translated max needs both grids on the same geometry".into(),
        ));
    }
    let delta = masks.delta;
    let hn = spec.hom_norm(h);
    let ln = spec.hom_norm(l);
    if hn >= delta || ln >= delta {
        return Err(SemiError::InvalidParameter(format!(
            "translations must satisfy |h|, |l| < delta; got {hn}, {ln} vs {delta}"
        )));
    }
    let inradius = u
        .lo
        .iter()
        .zip(&u.hi)
        .map(|(a, b)| (b - a) / 2.0)
        .fold(f64::INFINITY, f64::min);
    if delta >= inradius {
        return Err(SemiError::InvalidParameter(format!(
            "shrink scale {delta} is not below the box inradius {inradius}"
        )));
    }
    let d = u.ndim();
    let coords = node_coords_flat(u);
    let nodes: Vec<usize> = (0..u.len()).filter(|&i| masks.omega_delta[i]).collect();
    if nodes.is_empty() {
        return Err(SemiError::EmptyDomain { delta });
    }
    let diffs: Vec<f64> = nodes
        .par_iter()
        .map(|&lin| {
            let x = &coords[lin * d..lin * d + d];
            let mut xh = [0.0f64; 8];
            let mut xl = [0.0f64; 8];
            spec.multiply_buf(x, h, &mut xh[..d]);
            spec.multiply_buf(x, l, &mut xl[..d]);
            let uu = u.interpolate(&xh[..d]);
            let vv = v.interpolate(&xl[..d]);
            match (uu, vv) {
                (Ok(a), Ok(b)) => a - b,
                _ => f64::NAN,
            }
        })
        .collect();
    if diffs.iter().any(|v| v.is_nan()) {
        return Err(SemiError::DomainExit);
    }
    let max = diffs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = diffs.iter().cloned().fold(f64::INFINITY, f64::min);
    let tie = 1e-9 * (max - min).max(0.0);
    let mut argmax_nodes: Vec<usize> = nodes
        .iter()
        .zip(&diffs)
        .filter(|(_, &v)| v >= max - tie)
        .map(|(&lin, _)| lin)
        .collect();
    argmax_nodes.sort_unstable();
    Ok(TranslationMaxRecord {
        h: h.to_vec(),
        l: l.to_vec(),
        delta,
        value: max,
        argmax_nodes,
        scanned: nodes.len(),
        tie_tolerance: tie,
    })
}

/// Largest difference quotient `|u(b) - u(a)| / d(a, b)` over node pairs
/// with group distance at most `scale`; the discrete metric Lipschitz
/// constant at that scale. Pair enumeration is windowed per axis using the
/// layer weights, so the scan stays near-linear on anisotropic boxes.
pub fn grid_metric_lipschitz(
    spec: &GroupSpec,
    u: &GridFunction,
    scale: f64,
) -> Result<f64, SemiError> {
    if !(scale > 0.0) {
        return Err(SemiError::InvalidParameter(format!(
            "scale must be positive, got {scale}"
        )));
    }
    check_grid_group(spec, u)?;
    let d = u.ndim();
    let coords = node_coords_flat(u);
    // Window: on layer j the coordinate reach of a metric ball of radius s
    // grows like s^j; factor 2 absorbs the polynomial cross terms.
    let window: Vec<isize> = (0..d)
        .map(|a| {
            let j = spec.layer_of(a);
            let reach = 2.0 * scale.powi(j as i32) / u.spacing[a];
            (reach.ceil() as isize).clamp(1, u.shape[a] as isize - 1)
        })
        .collect();
    let best = (0..u.len())
        .into_par_iter()
        .map(|lin| {
            let mut idx = [0usize; 8];
            let idx = &mut idx[..d];
            u.unravel(lin, idx);
            let xa = &coords[lin * d..lin * d + d];
            window_scan(spec, u, &coords, lin, idx, xa, &window, scale)
        })
        .reduce(|| 0.0, f64::max);
    Ok(best)
}

/// Scans the half-space of window offsets around one node and returns the
/// largest difference quotient within `scale`.
fn window_scan(
    spec: &GroupSpec,
    u: &GridFunction,
    coords: &[f64],
    lin: usize,
    idx: &[usize],
    xa: &[f64],
    window: &[isize],
    scale: f64,
) -> f64 {
    let d = idx.len();
    let mut off = vec![0isize; d];
    for (o, &w) in off.iter_mut().zip(window) {
        *o = -w;
    }
    let mut best: f64 = 0.0;
    'outer: loop {
        // Keep only the lexicographically positive half to visit each
        // unordered pair once.
        let positive = off.iter().find(|&&o| o != 0).map(|&o| o > 0).unwrap_or(false);
        if positive {
            let mut nb = 0usize;
            let mut ok = true;
            for a in 0..d {
                let i = idx[a] as isize + off[a];
                if i < 0 || i >= u.shape[a] as isize {
                    ok = false;
                    break;
                }
                nb += i as usize * u.strides[a];
            }
            if ok {
                let xb = &coords[nb * d..nb * d + d];
                let dist = spec.metric_buf(xb, xa);
                if dist > 0.0 && dist <= scale {
                    let q = (u.values[nb] - u.values[lin]).abs() / dist;
                    if q > best {
                        best = q;
                    }
                }
            }
        }
        // Odometer increment.
        let mut a = d;
        loop {
            if a == 0 {
                break 'outer;
            }
            a -= 1;
            if off[a] < window[a] {
                off[a] += 1;
                for b in (a + 1)..d {
                    off[b] = -window[b];
                }
                continue 'outer;
            }
        }
    }
    best
}
