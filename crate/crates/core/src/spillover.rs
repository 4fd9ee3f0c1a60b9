//! Spillover codecs: the basic split, distribution perturbation, and joint
//! compression of a label with attached memory bits and spills.
//!
//! A value from a universe of size X is represented as a pair
//! `(k, m) in [K] x {0,1}^M` with small spill universe K, so the fractional
//! bit lives in the spill instead of being rounded away.

use crate::bitbuf::BitBuf;
use crate::exact::Bits;
use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SpilloverError {
    #[error("density does not sum to 1 within 2^-40")]
    NotNormalized,
    #[error("joint spec violates its budget at label {0}")]
    BudgetViolated(usize),
    #[error("input out of range: {0}")]
    OutOfRange(String),
}

/// `(k, m)` with spill universe `K <= 2r` and `M` memory bits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpilloverPair {
    pub spill: u64,
    pub spill_universe: u64,
    pub mem: BitBuf,
}

impl SpilloverPair {
    pub fn mem_bits(&self) -> usize {
        self.mem.len()
    }
}

/// Converts the low `len` bits of a BigUint into a buffer.
pub fn biguint_to_bits(v: &BigUint, len: usize) -> BitBuf {
    let mut b = BitBuf::zeros(len);
    for (i, byte) in v.to_bytes_le().iter().enumerate() {
        for j in 0..8 {
            let pos = i * 8 + j;
            if pos < len && byte >> j & 1 == 1 {
                b.set(pos, true);
            }
        }
    }
    b
}

pub fn bits_to_biguint(b: &BitBuf) -> BigUint {
    let mut bytes = vec![0u8; b.len().div_ceil(8)];
    for i in 0..b.len() {
        if b.get(i) {
            bytes[i / 8] |= 1 << (i % 8);
        }
    }
    BigUint::from_bytes_le(&bytes)
}

/// Memory width and spill universe of the split for a universe of `x_size`.
///
/// The smallest M with `ceil(X / 2^M) <= max(2r - 1, 1)`; matches both
/// worked 2-adic cases and keeps the redundancy below `log2(r/(r-1)) <= 2/r`.
pub fn split_params(x_size: &BigUint, r: u64) -> (usize, u64) {
    assert!(r >= 1 && !x_size.is_zero());
    let cap = BigUint::from((2 * r - 1).max(1));
    // smallest M with ceil(X/2^M) <= cap; start just below the closed-form
    // bound and walk up (at most a couple of steps)
    let mut m = (x_size.bits().saturating_sub(cap.bits() + 1)) as usize;
    loop {
        // ceil(X / 2^m)
        let k = (x_size + ((BigUint::one() << m) - BigUint::one())) >> m;
        if k <= cap {
            debug_assert!(m == 0 || (x_size + ((BigUint::one() << (m - 1)) - BigUint::one())) >> (m - 1) > cap);
            return (m, k.to_u64().expect("spill universe fits u64"));
        }
        m += 1;
    }
}

/// Encodes `x in [x_size]` as a spillover pair with parameter r.
pub fn split(x: &BigUint, x_size: &BigUint, r: u64) -> SpilloverPair {
    assert!(x < x_size, "element outside universe");
    let (m, k_universe) = split_params(x_size, r);
    let spill = (x >> m).to_u64().expect("spill fits u64");
    let mem = biguint_to_bits(&(x % (BigUint::one() << m)), m);
    SpilloverPair { spill, spill_universe: k_universe, mem }
}

/// Inverse of [`split`].
pub fn unsplit(pair: &SpilloverPair, x_size: &BigUint, r: u64) -> BigUint {
    let (m, k_universe) = split_params(x_size, r);
    assert_eq!(m, pair.mem.len(), "pair was made with different parameters");
    assert_eq!(k_universe, pair.spill_universe);
    (BigUint::from(pair.spill) << m) + bits_to_biguint(&pair.mem)
}

/// Convenience for machine-sized universes.
pub fn split_u64(x: u64, x_size: u64, r: u64) -> SpilloverPair {
    split(&BigUint::from(x), &BigUint::from(x_size), r)
}

pub fn unsplit_u64(pair: &SpilloverPair, x_size: u64, r: u64) -> u64 {
    unsplit(pair, &BigUint::from(x_size), r).to_u64().unwrap()
}

/// Exact redundancy of the split for a given universe: `M + log2 K - log2 X`.
pub fn split_redundancy(x_size: &BigUint, r: u64) -> Bits {
    let (m, k) = split_params(x_size, r);
    Bits::from_int(m as i64)
        .add(&Bits::log2(&BigUint::from(k)))
        .sub(&Bits::log2(x_size))
}

/// Mixes a density toward uniform: `p'(x) = (1 - 1/2r) p(x) + 1/(2r|X|)`,
/// giving `p'(x) >= 1/(2r|X|)` and `log2(1/p') <= log2(1/p) + 2/r`.
pub fn perturb(p: &[BigRational], r: u64) -> Result<Vec<BigRational>, SpilloverError> {
    assert!(r >= 1 && !p.is_empty());
    let total: BigRational = p.iter().sum();
    let tol = BigRational::new(1.into(), num_bigint::BigInt::from(BigUint::one() << 40));
    if (total.clone() - BigRational::one()).abs() > tol {
        return Err(SpilloverError::NotNormalized);
    }
    let x = BigUint::from(p.len());
    let keep = BigRational::one()
        - BigRational::new(BigUint::one().into(), BigUint::from(2 * r).into());
    let floor = BigRational::new(BigUint::one().into(), (BigUint::from(2 * r) * x).into());
    Ok(p.iter()
        .map(|pi| keep.clone() * pi / total.clone() + floor.clone())
        .collect())
}

/// Joint compression spec: label x with density p(x), plus `M(x)` attached
/// memory bits and a spill from `[K(x)]`, within an `H`-bit budget.
#[derive(Clone, Debug)]
pub struct JointSpec {
    pub p: Vec<BigRational>,
    pub mem_bits: Vec<usize>,
    pub spill_range: Vec<u64>,
    pub budget: Bits,
    pub r: u64,
}

impl JointSpec {
    pub fn labels(&self) -> usize {
        self.p.len()
    }

    /// Checks `log2(1/p(x)) + M(x) + log2 K(x) <= H` for every label.
    pub fn check(&self) -> Result<(), SpilloverError> {
        assert_eq!(self.p.len(), self.mem_bits.len());
        assert_eq!(self.p.len(), self.spill_range.len());
        for x in 0..self.labels() {
            let px = &self.p[x];
            let inv_p = Bits::log2_ratio(
                px.denom().magnitude(),
                px.numer().magnitude(),
            );
            let lhs = inv_p
                .add(&Bits::from_int(self.mem_bits[x] as i64))
                .add(&Bits::log2(&BigUint::from(self.spill_range[x])));
            if !lhs.le(&self.budget) {
                return Err(SpilloverError::BudgetViolated(x));
            }
        }
        Ok(())
    }

    /// Total index space `S = sum_x 2^M(x) K(x)`; the budget condition
    /// forces `S <= 2^H`.
    pub fn index_space(&self) -> BigUint {
        self.mem_bits
            .iter()
            .zip(&self.spill_range)
            .map(|(&m, &k)| BigUint::from(k) << m)
            .sum()
    }

    /// Output parameters `(M*, K*)`, functions of the spec alone.
    pub fn output_params(&self) -> (usize, u64) {
        split_params(&self.index_space(), self.r)
    }
}

/// Encodes `(x, y_m, y_k)` as a single spillover pair by ranking the triple
/// in lexicographic order (label, then memory value, then spill) and
/// splitting the rank.
pub fn joint_encode(
    spec: &JointSpec,
    x: usize,
    y_m: &BitBuf,
    y_k: u64,
) -> Result<SpilloverPair, SpilloverError> {
    spec.check()?;
    if x >= spec.labels() || y_m.len() != spec.mem_bits[x] || y_k >= spec.spill_range[x] {
        return Err(SpilloverError::OutOfRange(format!(
            "label {x} mem {} spill {y_k}",
            y_m.len()
        )));
    }
    let mut z = BigUint::zero();
    for i in 0..x {
        z += BigUint::from(spec.spill_range[i]) << spec.mem_bits[i];
    }
    z += (bits_to_biguint(y_m) * spec.spill_range[x]) + y_k;
    Ok(split(&z, &spec.index_space(), spec.r))
}

/// Inverse of [`joint_encode`].
pub fn joint_decode(
    spec: &JointSpec,
    pair: &SpilloverPair,
) -> Result<(usize, BitBuf, u64), SpilloverError> {
    let mut z = unsplit(pair, &spec.index_space(), spec.r);
    for x in 0..spec.labels() {
        let w = BigUint::from(spec.spill_range[x]) << spec.mem_bits[x];
        if z < w {
            let k = (&z % spec.spill_range[x]).to_u64().unwrap();
            let m = biguint_to_bits(&(z / spec.spill_range[x]), spec.mem_bits[x]);
            return Ok((x, m, k));
        }
        z -= w;
    }
    Err(SpilloverError::OutOfRange("rank outside index space".into()))
}
