//! Arithmetic in GF(2^d) for d <= 64, with reduction polynomials found at
//! runtime by Rabin's irreducibility test.

/// Carry-less product of two 64-bit polynomials over GF(2).
fn clmul(a: u64, b: u64) -> u128 {
    let mut acc = 0u128;
    let mut a = a as u128;
    let mut b = b;
    while b != 0 {
        if b & 1 == 1 {
            acc ^= a;
        }
        a <<= 1;
        b >>= 1;
    }
    acc
}

/// Degree of a nonzero polynomial.
fn deg(p: u128) -> u32 {
    127 - p.leading_zeros()
}

/// Remainder of `a` modulo the degree-`d` polynomial `x^d + taps`.
fn reduce(mut a: u128, d: u32, taps: u64) -> u64 {
    let m = (1u128 << d) | taps as u128;
    while a >> d != 0 {
        let shift = deg(a) - d;
        a ^= m << shift;
    }
    a as u64
}

/// Product in GF(2^d) with reduction polynomial `x^d + taps`.
pub fn mul(a: u64, b: u64, d: u32, taps: u64) -> u64 {
    reduce(clmul(a, b), d, taps)
}

#[cfg(test)]
fn powmod(mut base: u64, mut e: u128, d: u32, taps: u64) -> u64 {
    let mut acc = 1u64;
    while e != 0 {
        if e & 1 == 1 {
            acc = mul(acc, base, d, taps);
        }
        base = mul(base, base, d, taps);
        e >>= 1;
    }
    acc
}

fn poly_gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        // a mod b
        let db = deg(b);
        while a != 0 && deg(a) >= db {
            a ^= b << (deg(a) - db);
        }
        std::mem::swap(&mut a, &mut b);
    }
    a
}

fn prime_divisors(mut n: u32) -> Vec<u32> {
    let mut out = Vec::new();
    let mut p = 2;
    while p * p <= n {
        if n % p == 0 {
            out.push(p);
            while n % p == 0 {
                n /= p;
            }
        }
        p += 1;
    }
    if n > 1 {
        out.push(n);
    }
    out
}

/// Rabin's test: `x^d + taps` is irreducible over GF(2) iff
/// x^(2^d) == x mod f, and gcd(x^(2^(d/p)) - x, f) == 1 for every prime p | d.
fn is_irreducible(d: u32, taps: u64) -> bool {
    if d == 1 {
        return true;
    }
    // x^(2^d) mod f, computed by squaring x d times.
    let mut t = 0b10u64; // the polynomial x
    for _ in 0..d {
        t = mul(t, t, d, taps);
    }
    if t != 0b10 {
        return false;
    }
    for p in prime_divisors(d) {
        let e = d / p;
        let mut t = 0b10u64;
        for _ in 0..e {
            t = mul(t, t, d, taps);
        }
        let g = poly_gcd((t ^ 0b10) as u128, (1u128 << d) | taps as u128);
        if g != 1 {
            return false;
        }
    }
    true
}

/// Smallest `taps` such that `x^d + taps` is irreducible. Cached per degree.
pub fn irreducible_taps(d: u32) -> u64 {
    assert!((1..=64).contains(&d), "field degree {d} out of range");
    use std::sync::OnceLock;
    static CACHE: OnceLock<Vec<std::sync::OnceLock<u64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| (0..=64).map(|_| std::sync::OnceLock::new()).collect());
    *cache[d as usize].get_or_init(|| {
        // constant term must be 1, otherwise x divides f
        (0..)
            .map(|k| 2 * k + 1)
            .find(|&taps| is_irreducible(d, taps))
            .expect("an irreducible polynomial of every degree exists")
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_small_polys() {
        // x^2+x+1, x^3+x+1, x^4+x+1, x^8+x^4+x^3+x+1 (AES uses 0x1b)
        assert_eq!(irreducible_taps(2), 0b11);
        assert_eq!(irreducible_taps(3), 0b011);
        assert_eq!(irreducible_taps(4), 0b0011);
        assert_eq!(irreducible_taps(8), 0x1b);
    }

    #[test]
    fn field_axioms_spot_check() {
        for d in [5u32, 13, 29, 47, 64] {
            let taps = irreducible_taps(d);
            let mask = if d == 64 { u64::MAX } else { (1 << d) - 1 };
            let a = 0x9e3779b97f4a7c15u64 & mask;
            let b = 0xc2b2ae3d27d4eb4fu64 & mask;
            let c = 0x165667b19e3779f9u64 & mask;
            assert_eq!(mul(a, b, d, taps), mul(b, a, d, taps));
            assert_eq!(
                mul(a, mul(b, c, d, taps), d, taps),
                mul(mul(a, b, d, taps), c, d, taps)
            );
            assert_eq!(mul(a, b ^ c, d, taps), mul(a, b, d, taps) ^ mul(a, c, d, taps));
            // every nonzero element has order dividing 2^d - 1
            if a != 0 {
                let ord = if d == 64 {
                    u64::MAX as u128
                } else {
                    (1u128 << d) - 1
                };
                assert_eq!(powmod(a, ord, d, taps), 1);
            }
        }
    }
}
