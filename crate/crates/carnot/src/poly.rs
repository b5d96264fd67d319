//! Small multivariate polynomials, enough to bracket the frame fields
//! symbolically for rank probes. Terms are (exponent vector, coefficient)
//! pairs; every operation renormalizes.

use crate::group::GroupSpec;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Poly {
    nvars: usize,
    /// Sorted exponent vectors with nonzero coefficients.
    terms: Vec<(Vec<u16>, f64)>,
}

/// A vector field with polynomial components, one per coordinate.
pub(crate) type PolyField = Vec<Poly>;

impl Poly {
    pub fn zero(nvars: usize) -> Self {
        Poly { nvars, terms: Vec::new() }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Poly::zero(nvars);
        if c != 0.0 {
            p.terms.push((vec![0; nvars], c));
        }
        p
    }

    pub fn var(nvars: usize, l: usize) -> Self {
        let mut e = vec![0; nvars];
        e[l] = 1;
        Poly { nvars, terms: vec![(e, 1.0)] }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    fn normalize(&mut self) {
        self.terms.sort_by(|a, b| a.0.cmp(&b.0));
        let mut out: Vec<(Vec<u16>, f64)> = Vec::with_capacity(self.terms.len());
        for (e, c) in self.terms.drain(..) {
            match out.last_mut() {
                Some(last) if last.0 == e => last.1 += c,
                _ => out.push((e, c)),
            }
        }
        out.retain(|(_, c)| c.abs() > 1e-14);
        self.terms = out;
    }

    pub fn add(&self, o: &Poly) -> Poly {
        let mut p = self.clone();
        p.terms.extend(o.terms.iter().cloned());
        p.normalize();
        p
    }

    pub fn scale(&self, k: f64) -> Poly {
        let mut p = self.clone();
        for t in &mut p.terms {
            t.1 *= k;
        }
        p.normalize();
        p
    }

    pub fn mul(&self, o: &Poly) -> Poly {
        let mut p = Poly::zero(self.nvars);
        for (ea, ca) in &self.terms {
            for (eb, cb) in &o.terms {
                let e: Vec<u16> = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                p.terms.push((e, ca * cb));
            }
        }
        p.normalize();
        p
    }

    pub fn diff(&self, l: usize) -> Poly {
        let mut p = Poly::zero(self.nvars);
        for (e, c) in &self.terms {
            if e[l] > 0 {
                let mut d = e.clone();
                d[l] -= 1;
                p.terms.push((d, c * e[l] as f64));
            }
        }
        p.normalize();
        p
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| {
                c * e
                    .iter()
                    .enumerate()
                    .map(|(l, &p)| x[l].powi(p as i32))
                    .product::<f64>()
            })
            .sum()
    }
}

/// Structure-constant bracket of polynomial coordinate vectors.
fn algebra_bracket(spec: &GroupSpec, a: &[Poly], b: &[Poly]) -> PolyField {
    let n = spec.dim;
    let mut out = vec![Poly::zero(n); n];
    for &(k, i, j, v) in spec.nonzero_brackets() {
        out[k] = out[k].add(&a[i].mul(&b[j]).scale(v));
    }
    out
}

/// Frame columns as polynomial fields:
/// `sigma^j = e_j + [x, e_j]/2 + [x, [x, e_j]]/12`.
pub(crate) fn sigma_fields(spec: &GroupSpec) -> Vec<PolyField> {
    let n = spec.dim;
    let m = spec.layer_dims[0];
    let x: Vec<Poly> = (0..n).map(|l| Poly::var(n, l)).collect();
    (0..m)
        .map(|j| {
            let mut ej = vec![Poly::zero(n); n];
            ej[j] = Poly::constant(n, 1.0);
            let b1 = algebra_bracket(spec, &x, &ej);
            let b2 = algebra_bracket(spec, &x, &b1);
            (0..n)
                .map(|k| ej[k].add(&b1[k].scale(0.5)).add(&b2[k].scale(1.0 / 12.0)))
                .collect()
        })
        .collect()
}

/// Lie bracket of vector fields: `[v, w]_k = sum_l (v_l d_l w_k - w_l d_l v_k)`.
pub(crate) fn bracket_fields(v: &PolyField, w: &PolyField) -> PolyField {
    let n = v.len();
    (0..n)
        .map(|k| {
            let mut p = Poly::zero(n);
            for l in 0..n {
                p = p.add(&v[l].mul(&w[k].diff(l)));
                p = p.add(&w[l].mul(&v[k].diff(l)).scale(-1.0));
            }
            p
        })
        .collect()
}

pub(crate) fn is_zero_field(f: &PolyField) -> bool {
    f.iter().all(|p| p.is_zero())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_and_eval() {
        let x = Poly::var(2, 0);
        let y = Poly::var(2, 1);
        // (x + 2y)^2 = x^2 + 4xy + 4y^2
        let p = x.add(&y.scale(2.0));
        let q = p.mul(&p);
        assert_eq!(q.eval(&[3.0, 1.0]), 25.0);
        assert_eq!(q.diff(0).eval(&[3.0, 1.0]), 10.0);
        assert_eq!(q.diff(1).eval(&[3.0, 1.0]), 20.0);
    }

    #[test]
    fn heisenberg_frame_brackets_to_center() {
        let spec = GroupSpec::heisenberg();
        let s = sigma_fields(&spec);
        // [sigma^1, sigma^2] = e3 for the Heisenberg frame.
        let b = bracket_fields(&s[0], &s[1]);
        assert!(b[0].is_zero());
        assert!(b[1].is_zero());
        assert_eq!(b[2].eval(&[0.7, -0.3, 0.2]), 1.0);
    }
}
