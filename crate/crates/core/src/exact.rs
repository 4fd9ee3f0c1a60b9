//! Exact arithmetic for sub-bit space accounting.
//!
//! Space bounds here have the shape `a + log2(p/q) + c/d` with huge `p`, `q`.
//! Floating point cannot certify inequalities at 1/r-bit granularity, so a
//! [`Bits`] value keeps the three parts separate and compares by cross
//! powering: `log2(P) <= E + e/D  <=>  P^D <= 2^(E*D + e)` over `BigUint`.

use num_bigint::BigUint;
use num_integer::Integer;
use num_rational::Ratio;
use num_traits::{One, Zero};

/// An exactly-represented quantity of bits: `int + log2(num/den) + frac`.
#[derive(Clone, Debug)]
pub struct Bits {
    pub int: i64,
    pub num: BigUint,
    pub den: BigUint,
    pub frac: Ratio<i64>,
}

impl Bits {
    pub fn zero() -> Self {
        Bits {
            int: 0,
            num: BigUint::one(),
            den: BigUint::one(),
            frac: Ratio::zero(),
        }
    }

    pub fn from_int(i: i64) -> Self {
        Bits { int: i, ..Bits::zero() }
    }

    pub fn from_frac(frac: Ratio<i64>) -> Self {
        Bits { frac, ..Bits::zero() }
    }

    /// log2 of a positive integer.
    pub fn log2(n: &BigUint) -> Self {
        assert!(!n.is_zero(), "log2 of zero");
        let mut b = Bits { num: n.clone(), ..Bits::zero() };
        b.strip_twos();
        b
    }

    /// log2 of a positive rational p/q.
    pub fn log2_ratio(p: &BigUint, q: &BigUint) -> Self {
        assert!(!p.is_zero() && !q.is_zero());
        let mut b = Bits {
            num: p.clone(),
            den: q.clone(),
            ..Bits::zero()
        };
        b.strip_twos();
        b
    }

    fn strip_twos(&mut self) {
        let g = self.num.gcd(&self.den);
        if !g.is_one() {
            self.num /= &g;
            self.den /= &g;
        }
        let tn = self.num.trailing_zeros().unwrap_or(0);
        if tn > 0 {
            self.num >>= tn;
            self.int += tn as i64;
        }
        let td = self.den.trailing_zeros().unwrap_or(0);
        if td > 0 {
            self.den >>= td;
            self.int -= td as i64;
        }
    }

    pub fn add(&self, other: &Bits) -> Bits {
        let mut b = Bits {
            int: self.int + other.int,
            num: &self.num * &other.num,
            den: &self.den * &other.den,
            frac: self.frac + other.frac,
        };
        b.strip_twos();
        b
    }

    pub fn sub(&self, other: &Bits) -> Bits {
        let mut b = Bits {
            int: self.int - other.int,
            num: &self.num * &other.den,
            den: &self.den * &other.num,
            frac: self.frac - other.frac,
        };
        b.strip_twos();
        b
    }

    /// Exact comparison `self <= other`.
    pub fn le(&self, other: &Bits) -> bool {
        let d = other.sub(self);
        // 0 <= d.int + log2(d.num/d.den) + e/D
        // <=> d.den^D <= d.num^D * 2^(D*d.int + e)
        let dd = *d.frac.denom();
        debug_assert!(dd > 0);
        let e = d.int as i128 * dd as i128 + *d.frac.numer() as i128;
        let p = d.den.pow(dd as u32);
        let q = d.num.pow(dd as u32);
        if e >= 0 {
            p <= q << (e as u64 as usize).min(usize::MAX)
        } else {
            p << ((-e) as usize) <= q
        }
    }

    pub fn lt(&self, other: &Bits) -> bool {
        !other.le(self)
    }

    /// Approximate value for display.
    pub fn approx(&self) -> f64 {
        self.int as f64 + log2_approx(&self.num) - log2_approx(&self.den)
            + *self.frac.numer() as f64 / *self.frac.denom() as f64
    }
}

/// Floating approximation of log2 of a positive integer.
pub fn log2_approx(n: &BigUint) -> f64 {
    if n.is_one() {
        return 0.0;
    }
    let bits = n.bits();
    if bits <= 53 {
        return (u64::try_from(n.clone()).unwrap() as f64).log2();
    }
    let top = n >> (bits - 53);
    (u64::try_from(top).unwrap() as f64).log2() + (bits - 53) as f64
}

/// Exact binomial coefficient C(n, k) for a (possibly huge) n.
pub fn binomial(n: &BigUint, k: u64) -> BigUint {
    let mut acc = BigUint::one();
    for i in 0..k {
        let term = n - BigUint::from(i);
        if term.is_zero() {
            return BigUint::zero();
        }
        acc = acc * term / BigUint::from(i + 1);
    }
    acc
}

/// C(n, k) for machine-sized n.
pub fn binomial_u64(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    binomial(&BigUint::from(n), k.min(n - k))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomials() {
        assert_eq!(binomial_u64(5, 2), BigUint::from(10u32));
        assert_eq!(binomial_u64(64, 8), BigUint::from(4426165368u64));
        assert_eq!(binomial_u64(5, 6), BigUint::zero());
        assert_eq!(binomial_u64(0, 0), BigUint::from(1u32));
    }

    #[test]
    fn compare_exact() {
        // log2(3) <= 1.585 = 1 + 585/1000, but not <= 1.584
        let l3 = Bits::log2(&BigUint::from(3u32));
        let hi = Bits::from_int(1).add(&Bits::from_frac(Ratio::new(585, 1000)));
        let lo = Bits::from_int(1).add(&Bits::from_frac(Ratio::new(584, 1000)));
        assert!(l3.le(&hi));
        assert!(!l3.le(&lo));
    }

    #[test]
    fn add_sub_roundtrip() {
        let a = Bits::log2(&BigUint::from(1000u32)).add(&Bits::from_frac(Ratio::new(1, 3)));
        let b = Bits::log2(&BigUint::from(42u32)).add(&Bits::from_int(7));
        let c = a.add(&b).sub(&b);
        assert!(c.le(&a) && a.le(&c));
    }

    #[test]
    fn split_redundancy_example() {
        // 1 + log2(3) - log2(5) <= 1  (the X=5, r=2 example): 0.263 <= 1
        let red = Bits::from_int(1)
            .add(&Bits::log2(&BigUint::from(3u32)))
            .sub(&Bits::log2(&BigUint::from(5u32)));
        assert!(red.le(&Bits::from_int(1)));
        assert!(Bits::zero().le(&red));
        assert!((red.approx() - 0.2630).abs() < 1e-3);
    }

    #[test]
    fn log2_approx_large() {
        let n = BigUint::from(3u32).pow(500);
        let expect = 500.0 * 3f64.log2();
        assert!((log2_approx(&n) - expect).abs() < 1e-6);
    }
}
