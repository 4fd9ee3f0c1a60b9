//! Lexicographic rank/unrank of n-element subsets of [U'].
//!
//! Sets are sorted sequences a_1 < ... < a_n; ranks follow increasing
//! lexicographic order of the sequences. Runs of binomial terms collapse via
//! the hockey-stick identity, so U' may be astronomically larger than n.

use crate::bitbuf::BitBuf;
use crate::exact::binomial;
use crate::spillover::{bits_to_biguint, biguint_to_bits};
use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RankError {
    #[error("index out of range for C({0}, {1})")]
    IndexRange(u64, u64),
    #[error("set is not a sorted {0}-subset of [{1}]")]
    BadSet(u64, u64),
}

/// Sum of C(universe - 1 - c, m) for c in [lo, hi], via hockey stick:
/// C(U - lo, m + 1) - C(U - hi - 1, m + 1).
fn run_sum(universe: u64, lo: u64, hi: u64, m: u64) -> BigUint {
    if hi < lo {
        return BigUint::zero();
    }
    let a = binomial(&BigUint::from(universe - lo), m + 1);
    let b = binomial(&BigUint::from(universe - hi - 1), m + 1);
    a - b
}

/// Lexicographic index of the sorted set `s` among n-subsets of [universe].
pub fn rank_set(universe: u64, s: &[u64]) -> Result<BigUint, RankError> {
    let n = s.len() as u64;
    let ok = s.windows(2).all(|w| w[0] < w[1]) && s.iter().all(|&a| a < universe);
    if !ok {
        return Err(RankError::BadSet(n, universe));
    }
    let mut rank = BigUint::zero();
    let mut lo = 0u64;
    for (i, &a) in s.iter().enumerate() {
        let m = n - i as u64 - 1;
        if a > lo {
            rank += run_sum(universe, lo, a - 1, m);
        }
        lo = a + 1;
    }
    Ok(rank)
}

/// Inverse of [`rank_set`].
pub fn unrank_set(universe: u64, n: u64, index: &BigUint) -> Result<Vec<u64>, RankError> {
    if *index >= binomial(&BigUint::from(universe), n) {
        return Err(RankError::IndexRange(universe, n));
    }
    let mut rest = index.clone();
    let mut out = Vec::with_capacity(n as usize);
    let mut lo = 0u64;
    for i in 0..n {
        let m = n - i - 1;
        // find the largest c >= lo with run_sum(lo, c-1, m) <= rest by
        // binary search; c is this position's element
        let mut a = lo;
        let mut b = universe - m - 1; // largest feasible element here
        while a < b {
            let mid = a + (b - a + 1) / 2;
            if run_sum(universe, lo, mid - 1, m) <= rest {
                a = mid;
            } else {
                b = mid - 1;
            }
        }
        if a > lo {
            rest -= run_sum(universe, lo, a - 1, m);
        }
        out.push(a);
        lo = a + 1;
    }
    debug_assert!(rest.is_zero());
    Ok(out)
}

/// Number of bits of the canonical encoding body for C(universe, n).
pub fn encoded_body_bits(universe: u64, n: u64) -> usize {
    let c = binomial(&BigUint::from(universe), n);
    if c <= BigUint::one() {
        0
    } else {
        ((&c - BigUint::one()).bits()) as usize
    }
}

/// Canonical bit encoding: a 64-bit count header followed by the
/// ceil(log2 C(U', n))-bit rank.
pub fn encode_set(universe: u64, s: &[u64]) -> Result<BitBuf, RankError> {
    let rank = rank_set(universe, s)?;
    let body = encoded_body_bits(universe, s.len() as u64);
    let mut out = BitBuf::zeros(64);
    out.set_bits_u128(0, 64, s.len() as u128);
    let tail = biguint_to_bits(&rank, body);
    out.extend(&tail);
    Ok(out)
}

pub fn decode_set(universe: u64, bits: &BitBuf) -> Result<Vec<u64>, RankError> {
    let n = bits.get_bits_u128(0, 64) as u64;
    let body = encoded_body_bits(universe, n);
    let rank = bits_to_biguint(&bits.slice(64, body));
    unrank_set(universe, n, &rank)
}

/// Convenience: rank fits u64 for small instances.
pub fn rank_set_u64(universe: u64, s: &[u64]) -> u64 {
    rank_set(universe, s).unwrap().to_u64().expect("rank fits u64")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::binomial_u64;

    #[test]
    fn first_set_is_zero() {
        for n in 0..6u64 {
            let s: Vec<u64> = (0..n).collect();
            assert_eq!(rank_set(20, &s).unwrap(), BigUint::zero());
        }
    }

    #[test]
    fn exhaustive_lex_order_5_2() {
        // all C(5,2) = 10 subsets enumerate in lexicographic order
        let mut expect = 0u64;
        for a in 0..5u64 {
            for b in a + 1..5 {
                let r = rank_set(5, &[a, b]).unwrap();
                assert_eq!(r, BigUint::from(expect));
                assert_eq!(unrank_set(5, 2, &r).unwrap(), vec![a, b]);
                expect += 1;
            }
        }
        assert_eq!(expect, 10);
    }

    #[test]
    fn exhaustive_roundtrip_small() {
        for (u, n) in [(8u64, 3u64), (10, 5), (12, 2)] {
            let total = binomial_u64(u, n).to_u64().unwrap();
            let mut prev: Option<Vec<u64>> = None;
            for idx in 0..total {
                let s = unrank_set(u, n, &BigUint::from(idx)).unwrap();
                assert_eq!(rank_set(u, &s).unwrap(), BigUint::from(idx));
                if let Some(p) = prev {
                    assert!(p < s, "lexicographic order");
                }
                prev = Some(s);
            }
        }
    }

    #[test]
    fn fuzz_roundtrip_64_8() {
        let mut rng = 0xdadau64;
        for _ in 0..10_000 {
            let mut s = std::collections::BTreeSet::new();
            while s.len() < 8 {
                rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                s.insert(rng >> 33 & 63);
            }
            let v: Vec<u64> = s.into_iter().collect();
            let r = rank_set(64, &v).unwrap();
            assert_eq!(unrank_set(64, 8, &r).unwrap(), v);
        }
    }

    #[test]
    fn huge_universe_roundtrip() {
        let u = 1u64 << 53;
        let s: Vec<u64> = (0..40u64).map(|i| i * i * 1_234_567 + 3).collect();
        let r = rank_set(u, &s).unwrap();
        assert_eq!(unrank_set(u, 40, &r).unwrap(), s);
    }

    #[test]
    fn encode_decode_with_header() {
        let s = vec![3u64, 17, 29];
        let bits = encode_set(64, &s).unwrap();
        assert_eq!(bits.len(), 64 + encoded_body_bits(64, 3));
        assert_eq!(decode_set(64, &bits).unwrap(), s);
    }

    #[test]
    fn out_of_range_errors() {
        assert!(rank_set(8, &[1, 1]).is_err());
        assert!(rank_set(8, &[9]).is_err());
        let total = binomial_u64(8, 2);
        assert!(unrank_set(8, 2, &total).is_err());
    }
}
