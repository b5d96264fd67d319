//! Two-infinitesimal dual numbers for exact forward-mode differentiation of
//! the polynomial group product: `e1` and `e2` are independent nilpotents
//! (`e1^2 = e2^2 = 0`), so `d12` carries the mixed second derivative.

use crate::group::Ring;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Dual2 {
    pub re: f64,
    pub d1: f64,
    pub d2: f64,
    pub d12: f64,
}

impl Dual2 {
    pub fn constant(v: f64) -> Self {
        Dual2 { re: v, d1: 0.0, d2: 0.0, d12: 0.0 }
    }

    /// `v + e1 * t1 + e2 * t2`.
    pub fn seeded(v: f64, t1: f64, t2: f64) -> Self {
        Dual2 { re: v, d1: t1, d2: t2, d12: 0.0 }
    }
}

impl Ring for Dual2 {
    fn zero() -> Self {
        Dual2::constant(0.0)
    }

    fn add(self, o: Self) -> Self {
        Dual2 {
            re: self.re + o.re,
            d1: self.d1 + o.d1,
            d2: self.d2 + o.d2,
            d12: self.d12 + o.d12,
        }
    }

    fn mul(self, o: Self) -> Self {
        Dual2 {
            re: self.re * o.re,
            d1: self.re * o.d1 + self.d1 * o.re,
            d2: self.re * o.d2 + self.d2 * o.re,
            d12: self.re * o.d12 + self.d12 * o.re + self.d1 * o.d2 + self.d2 * o.d1,
        }
    }

    fn scale(self, k: f64) -> Self {
        Dual2 {
            re: self.re * k,
            d1: self.d1 * k,
            d2: self.d2 * k,
            d12: self.d12 * k,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixed_partial_of_product_polynomial() {
        // f(a, b) = (3 + a)^2 * (5 + 2 b): d^2 f / da db at (0,0) = 2*3*2 = 12.
        let a = Dual2::seeded(3.0, 1.0, 0.0);
        let b = Dual2::seeded(5.0, 0.0, 2.0);
        let f = a.mul(a).mul(b);
        assert_eq!(f.re, 45.0);
        assert_eq!(f.d1, 30.0); // df/da = 2*3*5
        assert_eq!(f.d2, 18.0); // df/db = 9*2
        assert_eq!(f.d12, 12.0);
    }
}
