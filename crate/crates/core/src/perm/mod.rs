//! Hash primitives: master seeds, circle hashes for dynamic matching, and
//! Feistel permutation families over bit-string and mixed domains.

pub mod gf2;

use crate::bitbuf::BitBuf;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PermError {
    #[error("invalid split parameters: s={s}, width={width}")]
    BadSplit { s: u32, width: u32 },
    #[error("input {x} outside domain of size {size}")]
    OutOfDomain { x: u128, size: u128 },
}

/// 128-bit master seed. Every derived function is a pure function of
/// (seed, derivation path, input).
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Seed {
    pub hi: u64,
    pub lo: u64,
}

impl std::fmt::Debug for Seed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Seed({})", self.to_hex())
    }
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Seed {
    pub fn new(hi: u64, lo: u64) -> Self {
        Seed { hi, lo }
    }

    /// Parses 32 lowercase hex characters.
    pub fn from_hex(s: &str) -> Option<Self> {
        if s.len() != 32 || !s.bytes().all(|b| b.is_ascii_hexdigit()) {
            return None;
        }
        let hi = u64::from_str_radix(&s[..16], 16).ok()?;
        let lo = u64::from_str_radix(&s[16..], 16).ok()?;
        Some(Seed { hi, lo })
    }

    pub fn to_hex(&self) -> String {
        format!("{:016x}{:016x}", self.hi, self.lo)
    }

    /// Keyed PRF: a 64-bit value determined by the seed and the path words.
    pub fn prf64(&self, path: &[u64]) -> u64 {
        let mut h = mix64(self.hi ^ GOLDEN);
        h = mix64(h ^ self.lo.rotate_left(17));
        for (i, &p) in path.iter().enumerate() {
            h = mix64(h ^ p.wrapping_add(GOLDEN.wrapping_mul(i as u64 + 1)));
        }
        h
    }

    /// Derives an independent child seed for a named subcomponent.
    pub fn derive(&self, path: &[u64]) -> Seed {
        let mut ext = Vec::with_capacity(path.len() + 1);
        ext.extend_from_slice(path);
        ext.push(0x5eed);
        let hi = self.prf64(&ext);
        ext.push(0xfeed);
        let lo = self.prf64(&ext);
        Seed { hi, lo }
    }
}

/// Role of an element on the matching circle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Ball,
    Bin,
}

/// One round of circle hashing: h_i maps (element, role) pairs to points on
/// the unit circle with a deterministic total order.
#[derive(Clone, Copy, Debug)]
pub struct CircleHash {
    pub seed: Seed,
    pub round: u32,
}

/// A point on the circle, ordered lexicographically. The 64-bit hash is the
/// binary fraction; (role, element) break ties so distinct inputs always get
/// distinct keys.
pub type CirclePoint = (u64, u8, u64);

impl CircleHash {
    pub fn new(seed: Seed, round: u32) -> Self {
        CircleHash { seed, round }
    }

    pub fn point(&self, element: u64, role: Role) -> CirclePoint {
        let r = match role {
            Role::Ball => 0u8,
            Role::Bin => 1u8,
        };
        let h = self
            .seed
            .prf64(&[0xc1cc1e, self.round as u64, r as u64, element]);
        (h, r, element)
    }

    /// The point as a fraction in [0, 1), for diagnostics.
    pub fn point_fraction(&self, element: u64, role: Role) -> f64 {
        self.point(element, role).0 as f64 / (u64::MAX as f64 + 1.0)
    }
}

/// Which hash family the inner function of a Feistel permutation comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeistelKind {
    /// Simple tabulation with c character tables; strong concentration.
    KWise,
    /// Degree-1 polynomial over a binary field; exactly pairwise independent.
    Pairwise,
}

/// Inner function f mapping the right part of the domain to s bits.
#[derive(Clone, Debug)]
enum Inner {
    /// XOR of character-table lookups. `char_bits` bits per character.
    Tabulation { tables: Vec<Vec<u64>>, char_bits: u32 },
    /// x -> low s bits of (a*x + b) in GF(2^field_deg).
    Poly { a: u64, b: u64, field_deg: u32, taps: u64 },
}

impl Inner {
    fn eval(&self, x: u64, s: u32) -> u64 {
        let smask = if s == 64 { u64::MAX } else { (1u64 << s) - 1 };
        match self {
            Inner::Tabulation { tables, char_bits } => {
                let cmask = (1u64 << char_bits) - 1;
                let mut acc = 0u64;
                for (i, t) in tables.iter().enumerate() {
                    let c = (x >> (i as u32 * char_bits)) & cmask;
                    acc ^= t[c as usize];
                }
                acc & smask
            }
            Inner::Poly { a, b, field_deg, taps } => {
                (gf2::mul(*a, x, *field_deg, *taps) ^ b) & smask
            }
        }
    }

    fn storage_bits(&self) -> usize {
        match self {
            Inner::Tabulation { tables, .. } => tables.iter().map(|t| t.len() * 64).sum(),
            Inner::Poly { .. } => 2 * 64,
        }
    }
}

/// A Feistel permutation over `{0,1}^s x [t]`; the all-bits domain
/// `{0,1}^L` is the special case `t = 2^(L-s)`.
///
/// pi_f(x_l, x_r) = (x_l xor f(x_r), x_r), its own inverse.
#[derive(Clone, Debug)]
pub struct FeistelPerm {
    pub s: u32,
    /// Size of the right part of the domain.
    pub t: u128,
    pub kind: FeistelKind,
    inner: Inner,
}

fn right_width(t: u128) -> u32 {
    // number of bits needed to address [t]
    128 - (t.saturating_sub(1)).leading_zeros()
}

impl FeistelPerm {
    /// Domain size 2^s * t.
    pub fn domain_size(&self) -> u128 {
        (1u128 << self.s) * self.t
    }

    /// Splits an element of the mixed domain into (left, right).
    fn split(&self, x: u128) -> (u64, u64) {
        ((x / self.t) as u64, (x % self.t) as u64)
    }

    pub fn apply(&self, x: u128) -> Result<u128, PermError> {
        if x >= self.domain_size() {
            return Err(PermError::OutOfDomain {
                x,
                size: self.domain_size(),
            });
        }
        let (l, r) = self.split(x);
        let l2 = l ^ self.inner.eval(r, self.s);
        Ok(l2 as u128 * self.t + r as u128)
    }

    /// First s bits of the output: the equivalence-class / bucket index.
    pub fn bucket(&self, x: u128) -> Result<u64, PermError> {
        Ok((self.apply(x)? / self.t) as u64)
    }

    /// Output split as (bucket, right remainder).
    pub fn apply_split(&self, x: u128) -> Result<(u64, u64), PermError> {
        let y = self.apply(x)?;
        Ok(((y / self.t) as u64, (y % self.t) as u64))
    }

    /// Reassembles an element from (bucket, right remainder) and inverts.
    pub fn invert_split(&self, bucket: u64, rem: u64) -> Result<u128, PermError> {
        self.apply(bucket as u128 * self.t + rem as u128)
    }

    /// Measured storage of the inner function, in bits.
    pub fn storage_bits(&self) -> usize {
        self.inner.storage_bits()
    }
}

/// Samples from the k-wise-style family over `{0,1}^L` with `s` output bits:
/// simple tabulation with `c = ceil(2/epsilon)` character tables.
pub fn sample_kwise_feistel(seed: Seed, s: u32, l: u32, epsilon: f64) -> Result<FeistelPerm, PermError> {
    if s < 1 || s >= l || l > 64 + s {
        return Err(PermError::BadSplit { s, width: l });
    }
    let t = 1u128 << (l - s);
    sample_kwise_mixed(seed, s, t, epsilon)
}

/// k-wise-style family over the mixed domain `{0,1}^s x [t]`.
pub fn sample_kwise_mixed(seed: Seed, s: u32, t: u128, epsilon: f64) -> Result<FeistelPerm, PermError> {
    if s < 1 || s > 63 || t < 1 || epsilon <= 0.0 {
        return Err(PermError::BadSplit { s, width: s + right_width(t) });
    }
    let rb = right_width(t).max(1);
    let c = ((2.0 / epsilon).ceil() as u32).max(1);
    let char_bits = rb.div_ceil(c).max(1);
    let n_tables = rb.div_ceil(char_bits);
    let smask = (1u64 << s) - 1;
    let tables = (0..n_tables)
        .map(|ti| {
            (0..1u64 << char_bits)
                .map(|ci| seed.prf64(&[0x7ab, ti as u64, ci]) & smask)
                .collect()
        })
        .collect();
    Ok(FeistelPerm {
        s,
        t,
        kind: FeistelKind::KWise,
        inner: Inner::Tabulation { tables, char_bits },
    })
}

/// Pairwise family over `{0,1}^L`: inner f is a degree-1 polynomial over
/// GF(2^d) with d = max(s, L-s), truncated to s bits.
pub fn sample_pairwise_feistel(seed: Seed, s: u32, l: u32) -> Result<FeistelPerm, PermError> {
    if s == 0 || s >= l || l > 64 + s {
        return Err(PermError::BadSplit { s, width: l });
    }
    sample_pairwise_mixed(seed, s, 1u128 << (l - s))
}

/// Pairwise family over the mixed domain `{0,1}^s x [t]`.
pub fn sample_pairwise_mixed(seed: Seed, s: u32, t: u128) -> Result<FeistelPerm, PermError> {
    if s < 1 || s > 63 || t < 1 {
        return Err(PermError::BadSplit { s, width: s + right_width(t) });
    }
    let field_deg = right_width(t).max(s).max(1).min(64);
    let taps = gf2::irreducible_taps(field_deg);
    let fmask = if field_deg == 64 { u64::MAX } else { (1u64 << field_deg) - 1 };
    let a = seed.prf64(&[0x2, 0xa]) & fmask;
    let b = seed.prf64(&[0x2, 0xb]) & fmask;
    Ok(FeistelPerm {
        s,
        t,
        kind: FeistelKind::Pairwise,
        inner: Inner::Poly { a, b, field_deg, taps },
    })
}

/// Serializes permutation parameters as `(kind, s, t, seed)` tuple text.
pub fn perm_params_string(kind: FeistelKind, s: u32, t: u128, seed: Seed) -> String {
    let k = match kind {
        FeistelKind::KWise => "kwise",
        FeistelKind::Pairwise => "pairwise",
    };
    format!("{k},{s},{t},{}", seed.to_hex())
}

/// Test-only hook: builds a Feistel permutation from an explicit inner
/// function table, for hand-evaluated examples.
pub fn feistel_from_fn(s: u32, t: u128, f: impl Fn(u64) -> u64) -> FeistelPerm {
    let table: Vec<u64> = (0..t as u64).map(f).collect();
    FeistelPerm {
        s,
        t,
        kind: FeistelKind::Pairwise,
        inner: Inner::Tabulation {
            tables: vec![table],
            char_bits: right_width(t).max(1),
        },
    }
}

/// Packs the inner-function description into a bit string (used by space
/// audits that charge hash-function storage).
pub fn feistel_storage_image(p: &FeistelPerm) -> BitBuf {
    let mut b = BitBuf::new();
    match &p.inner {
        Inner::Tabulation { tables, .. } => {
            for t in tables {
                for &v in t {
                    let at = b.grow(64);
                    b.set_bits_u128(at, 64, v as u128);
                }
            }
        }
        Inner::Poly { a, b: pb, .. } => {
            let at = b.grow(128);
            b.set_bits_u128(at, 64, *a as u128);
            b.set_bits_u128(at + 64, 64, *pb as u128);
        }
    }
    b
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn seed(n: u64) -> Seed {
        Seed::new(0x5a5a_0000_dead_beef ^ n, 0x0123_4567_89ab_cdef ^ n.rotate_left(32))
    }

    #[test]
    fn circle_point_deterministic() {
        let h = CircleHash::new(seed(1), 3);
        assert_eq!(h.point(42, Role::Ball), h.point(42, Role::Ball));
        assert_ne!(h.point(42, Role::Ball).1, h.point(42, Role::Bin).1);
    }

    #[test]
    fn circle_point_tiebreak_injective() {
        let h = CircleHash::new(seed(2), 1);
        let keys: HashSet<CirclePoint> = (0..1u64 << 10).map(|e| h.point(e, Role::Ball)).collect();
        assert_eq!(keys.len(), 1 << 10);
    }

    #[test]
    fn circle_rank_uniform_ks() {
        // rank of element 0 among 256 balls, over 1000 seeds, vs uniform
        let n = 256u64;
        let trials = 1000;
        let mut ranks = Vec::with_capacity(trials);
        for t in 0..trials {
            let h = CircleHash::new(seed(1000 + t as u64), 1);
            let p0 = h.point(0, Role::Ball);
            let rank = (1..n).filter(|&e| h.point(e, Role::Ball) < p0).count();
            ranks.push(rank);
        }
        ranks.sort_unstable();
        let mut d: f64 = 0.0;
        for (i, &r) in ranks.iter().enumerate() {
            let emp_hi = (i + 1) as f64 / trials as f64;
            let emp_lo = i as f64 / trials as f64;
            let cdf = (r + 1) as f64 / n as f64;
            d = d.max((emp_hi - cdf).abs()).max((emp_lo - cdf).abs());
        }
        // critical value at p = 0.01 for n = 1000 samples
        assert!(d <= 1.628 / (trials as f64).sqrt(), "KS statistic {d} too large");
    }

    #[test]
    fn feistel_zero_inner_is_identity() {
        let p = feistel_from_fn(3, 32, |_| 0);
        for x in 0..p.domain_size() {
            assert_eq!(p.apply(x).unwrap(), x);
        }
    }

    #[test]
    fn feistel_hand_example() {
        // L=4, s=2, f(r)=r: 0b0111 -> (01 xor 11) || 11 = 0b1011
        let p = feistel_from_fn(2, 4, |r| r);
        assert_eq!(p.apply(0b0111).unwrap(), 0b1011);
    }

    #[test]
    fn feistel_involution_exhaustive() {
        let p = sample_kwise_feistel(seed(3), 3, 8, 0.5).unwrap();
        for x in 0..256 {
            assert_eq!(p.apply(p.apply(x).unwrap()).unwrap(), x);
        }
        let q = sample_pairwise_feistel(seed(4), 5, 8).unwrap();
        for x in 0..256 {
            assert_eq!(q.apply(q.apply(x).unwrap()).unwrap(), x);
        }
    }

    #[test]
    fn feistel_out_of_domain() {
        let p = sample_pairwise_feistel(seed(5), 2, 6).unwrap();
        assert!(matches!(p.apply(64), Err(PermError::OutOfDomain { .. })));
    }

    #[test]
    fn pairwise_equal_right_halves_never_collide() {
        // Feistel with equal right halves: first s bits always differ.
        let s = 6;
        let l = 16;
        let p = sample_pairwise_feistel(seed(6), s, l).unwrap();
        let mut rng = 0x12345u64;
        for _ in 0..100_000 {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let xr = rng >> 10 & ((1 << (l - s)) - 1);
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let (l1, l2) = (rng >> 5 & 0x3f, rng >> 20 & 0x3f);
            if l1 == l2 {
                continue;
            }
            let x1 = (l1 as u128) << (l - s) | xr as u128;
            let x2 = (l2 as u128) << (l - s) | xr as u128;
            assert_ne!(p.bucket(x1).unwrap(), p.bucket(x2).unwrap());
        }
    }

    #[test]
    fn mixed_t1_degenerates_to_xor() {
        let p = sample_kwise_mixed(seed(7), 5, 1, 0.5).unwrap();
        let outs: HashSet<u128> = (0..32).map(|x| p.apply(x).unwrap()).collect();
        assert_eq!(outs.len(), 32);
        let c = p.apply(0).unwrap();
        for x in 0..32 {
            assert_eq!(p.apply(x).unwrap(), x ^ c);
        }
    }

    #[test]
    fn mixed_small_domain_bijective() {
        // (s=3, T=5): all 40 inputs map to a permutation of the domain
        for kind in 0..2 {
            let p = if kind == 0 {
                sample_kwise_mixed(seed(8), 3, 5, 0.5).unwrap()
            } else {
                sample_pairwise_mixed(seed(8), 3, 5).unwrap()
            };
            let outs: HashSet<u128> = (0..40).map(|x| p.apply(x).unwrap()).collect();
            assert_eq!(outs.len(), 40);
            assert!(outs.iter().all(|&y| y < 40));
        }
    }

    #[test]
    fn mixed_inverse_roundtrip() {
        let p = sample_pairwise_mixed(seed(9), 11, 12345).unwrap();
        let mut rng = 777u64;
        for _ in 0..10_000 {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let x = (rng as u128).wrapping_rem(p.domain_size());
            assert_eq!(p.apply(p.apply(x).unwrap()).unwrap(), x);
        }
    }

    #[test]
    fn storage_bounds() {
        let p = sample_pairwise_feistel(seed(10), 8, 32).unwrap();
        assert_eq!(p.storage_bits(), 128);
        assert!(p.storage_bits() <= 16 * 32);
        // tabulation: c tables of 2^ceil((L-s)/c) entries
        let q = sample_kwise_feistel(seed(11), 4, 20, 0.25).unwrap();
        let c = (2.0f64 / 0.25).ceil() as usize;
        let eps_bound = c * (1usize << ((20f64 * 0.25).ceil() as usize)) * 64;
        assert!(q.storage_bits() <= eps_bound, "{} > {eps_bound}", q.storage_bits());
    }

    #[test]
    fn seed_hex_roundtrip() {
        let s = seed(12);
        assert_eq!(Seed::from_hex(&s.to_hex()), Some(s));
        assert_eq!(Seed::from_hex("xyz"), None);
        assert_eq!(s.to_hex().len(), 32);
    }
}
