//! Double-word (`hi + lo`) arithmetic built on FMA error-free transforms.
//!
//! Only the handful of operations needed to form pencil residuals without
//! cancellation are provided.

use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

/// `a + b` as an unevaluated sum `s + e` (Knuth).
#[inline]
pub fn two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    let bb = s - a;
    Dd { hi: s, lo: (a - (s - bb)) + (b - bb) }
}

/// `a * b` as an unevaluated sum, exact with a fused multiply-add.
#[inline]
pub fn two_prod(a: f64, b: f64) -> Dd {
    let p = a * b;
    Dd { hi: p, lo: a.mul_add(b, -p) }
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn recip(self) -> Dd {
        let q = self.hi.recip();
        // One Newton step on 1 - q x.
        let r = Dd::from(1.0) - self * q;
        Dd::from(q) + Dd::from(r.to_f64() * q)
    }
}

impl From<f64> for Dd {
    fn from(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, o: Dd) -> Dd {
        let s = two_sum(self.hi, o.hi);
        let e = s.lo + self.lo + o.lo;
        two_sum(s.hi, e)
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, o: Dd) -> Dd {
        self + (-o)
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, o: Dd) -> Dd {
        let p = two_prod(self.hi, o.hi);
        let e = p.lo + self.hi * o.lo + self.lo * o.hi;
        two_sum(p.hi, e)
    }
}

impl Mul<f64> for Dd {
    type Output = Dd;
    fn mul(self, b: f64) -> Dd {
        let p = two_prod(self.hi, b);
        let e = p.lo + self.lo * b;
        two_sum(p.hi, e)
    }
}
