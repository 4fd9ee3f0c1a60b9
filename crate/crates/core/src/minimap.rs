//! Minimap: a fixed-capacity key-value store whose key set is cheap enough
//! to encode wholesale, with sub-bit redundancy and a history-independent
//! memory image.
//!
//! Layout at fill j: j value slots of M* bits each, then a header encoding
//! (key set, value spills) as one ranked index. Values are split as
//! (spill, M* memory bits) with parameter r' = r*n; the header index is
//! split with parameter r. Slot order is the dynamic matching between the
//! key set and slot indices, so the whole image is a pure function of the
//! stored set, the parameters, and the seed.

use crate::bitmem::VmSpace;
use crate::exact::{binomial_u64, Bits};
use crate::matching::{compute_matching, BallBinInstance, Matching};
use crate::mlhash::rankset::{rank_set, unrank_set};
use crate::perm::Seed;
use crate::spillover::{biguint_to_bits, bits_to_biguint, split_params};
use num_bigint::BigUint;
use num_rational::Ratio;
use num_traits::ToPrimitive;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MinimapError {
    #[error("key {0} already present")]
    Duplicate(u64),
    #[error("key {0} not present")]
    Missing(u64),
    #[error("minimap at capacity {0}")]
    Full(usize),
    #[error("parameter overflow: header index space too large")]
    ParamOverflow,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MinimapParams {
    /// Key universe [U].
    pub key_universe: u64,
    /// Value universe [V].
    pub value_universe: u64,
    /// Nominal capacity n.
    pub capacity: usize,
    /// Redundancy parameter r.
    pub r: u64,
    pub seed: Seed,
}

impl MinimapParams {
    /// Value split (M*, K*) with parameter r' = r*n.
    pub fn value_split(&self) -> (usize, u64) {
        let r_prime = (self.r * self.capacity.max(1) as u64).max(1);
        split_params(&BigUint::from(self.value_universe), r_prime)
    }

    /// Header index space at fill j: |X_j| = C(U, j) * K*^j.
    pub fn header_space(&self, fill: usize) -> BigUint {
        let (_, k_star) = self.value_split();
        binomial_u64(self.key_universe, fill as u64) * BigUint::from(k_star).pow(fill as u32)
    }

    /// Header split at fill j, with the spill absorbed one step when the
    /// universe lands exactly on r, keeping K in (r, 2r] whenever |X| > r.
    pub fn header_params(&self, fill: usize) -> (usize, u64) {
        header_split_params(&self.header_space(fill), self.r)
    }

    /// Total memory bits at fill j.
    pub fn mem_bits(&self, fill: usize) -> usize {
        let (m_star, _) = self.value_split();
        fill * m_star + self.header_params(fill).0
    }

    /// Spill universe at fill j.
    pub fn spill_universe(&self, fill: usize) -> u64 {
        self.header_params(fill).1
    }
}

/// Split with the one-bit absorb rule: if the minimal split gives K = r
/// exactly and has memory to spare, trade one memory bit into the spill.
pub fn header_split_params(x_size: &BigUint, r: u64) -> (usize, u64) {
    let (m, k) = split_params(x_size, r);
    if k == r && m > 0 {
        let m2 = m - 1;
        let k2 = ((x_size + (BigUint::from(1u32) << m2) - BigUint::from(1u32)) >> m2)
            .to_u64()
            .expect("absorbed spill fits");
        (m2, k2)
    } else {
        (m, k)
    }
}

/// In-memory companion state: the decoded key set and value spills. This is
/// derived data; the image in (vm, spill) is authoritative.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MinimapView {
    /// Sorted keys.
    pub keys: Vec<u64>,
    /// Value spills, aligned with `keys`.
    pub spills: Vec<u64>,
}

impl MinimapView {
    pub fn fill(&self) -> usize {
        self.keys.len()
    }
}

fn slot_matching(params: &MinimapParams, keys: &[u64]) -> Matching {
    let bins: Vec<u64> = (1..=keys.len() as u64).collect();
    let inst = BallBinInstance::new(keys.to_vec(), bins).expect("|A| = |B|");
    compute_matching(&inst, params.seed).expect("slot matching")
}

fn encode_header(params: &MinimapParams, view: &MinimapView) -> (BigUint, usize, u64) {
    let (_, k_star) = params.value_split();
    let mut z = rank_set(params.key_universe, &view.keys).expect("valid key set");
    for &s in &view.spills {
        z = z * k_star + s;
    }
    let (m_hdr, k_hdr) = params.header_params(view.fill());
    (z, m_hdr, k_hdr)
}

fn decode_header(params: &MinimapParams, z: &BigUint, fill: usize) -> MinimapView {
    let (_, k_star) = params.value_split();
    let mut rest = z.clone();
    let mut spills = vec![0u64; fill];
    for i in (0..fill).rev() {
        spills[i] = (&rest % k_star).to_u64().unwrap();
        rest /= k_star;
    }
    let keys = unrank_set(params.key_universe, fill as u64, &rest).expect("valid rank");
    MinimapView { keys, spills }
}

/// Canonical image of a key-value set as raw bits plus spill. This is the
/// from-scratch oracle, the initial constructor, and the leaf encoder of
/// the tree dictionary.
pub fn encode_bits(params: &MinimapParams, pairs: &[(u64, u64)]) -> (crate::bitbuf::BitBuf, u64) {
    let mut sorted: Vec<(u64, u64)> = pairs.to_vec();
    sorted.sort_unstable();
    let (m_star, _) = params.value_split();
    let view = MinimapView {
        keys: sorted.iter().map(|&(k, _)| k).collect(),
        spills: sorted.iter().map(|&(_, v)| v >> m_star).collect(),
    };
    let j = view.fill();
    let mut bits = crate::bitbuf::BitBuf::zeros(params.mem_bits(j));
    let sigma = slot_matching(params, &view.keys);
    for &(k, v) in &sorted {
        let slot = sigma.get(k).expect("matched") as usize;
        let mem_part = v & low_mask(m_star);
        bits.set_bits_u128((slot - 1) * m_star, m_star, mem_part as u128);
    }
    let (z, m_hdr, _k_hdr) = encode_header(params, &view);
    let hdr = biguint_to_bits(&(&z % (BigUint::from(1u32) << m_hdr)), m_hdr);
    bits.copy_from(j * m_star, &hdr, 0, m_hdr);
    let spill = (z >> m_hdr).to_u64().expect("spill fits");
    (bits, spill)
}

/// [`encode_bits`] wrapped into a standalone 64-bit-word VM.
pub fn encode_image(params: &MinimapParams, pairs: &[(u64, u64)]) -> (crate::bitmem::VirtualMemory, u64) {
    let (bits, spill) = encode_bits(params, pairs);
    let mut vm = crate::bitmem::VirtualMemory::new(64);
    while vm.len_bits() + 64 <= bits.len() {
        vm.alloc(64);
    }
    while vm.len_bits() < bits.len() {
        vm.alloc(1);
    }
    vm.write_range(0, &bits);
    (vm, spill)
}

#[inline]
fn low_mask(n: usize) -> u64 {
    if n >= 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

/// Reads and decodes the header region of a minimap image at fill j.
pub fn read_view(
    params: &MinimapParams,
    vm: &mut impl VmSpace,
    spill: u64,
    fill: usize,
) -> MinimapView {
    let (m_star, _) = params.value_split();
    let (m_hdr, _) = params.header_params(fill);
    let hdr = vm.read_range(fill * m_star, m_hdr);
    let z = (BigUint::from(spill) << m_hdr) + bits_to_biguint(&hdr);
    decode_header(params, &z, fill)
}

/// Looks up a key: decodes the header, then reads exactly one slot.
pub fn query(
    params: &MinimapParams,
    vm: &mut impl VmSpace,
    spill: u64,
    fill: usize,
    key: u64,
) -> Option<u64> {
    let view = read_view(params, vm, spill, fill);
    let idx = view.keys.binary_search(&key).ok()?;
    let (m_star, _) = params.value_split();
    let sigma = slot_matching(params, &view.keys);
    let slot = sigma.get(key).expect("matched") as usize;
    let mem = vm.read_range((slot - 1) * m_star, m_star);
    let mem_val = mem.get_bits_u128(0, m_star) as u64;
    Some(view.spills[idx] << m_star | mem_val)
}

/// Inserts (key, value). Returns (new spill, relocation count). The caller
/// tracks fill externally; on success the new fill is `fill + 1`.
pub fn insert(
    params: &MinimapParams,
    vm: &mut impl VmSpace,
    spill: u64,
    fill: usize,
    key: u64,
    value: u64,
) -> Result<(u64, usize), MinimapError> {
    if fill >= params.capacity {
        return Err(MinimapError::Full(params.capacity));
    }
    let view = read_view(params, vm, spill, fill);
    if view.keys.binary_search(&key).is_ok() {
        return Err(MinimapError::Duplicate(key));
    }
    let (m_star, _) = params.value_split();
    let old_sigma = slot_matching(params, &view.keys);

    let mut new_view = view.clone();
    let pos = new_view.keys.binary_search(&key).unwrap_err();
    new_view.keys.insert(pos, key);
    new_view.spills.insert(pos, value >> m_star);
    let new_sigma = slot_matching(params, &new_view.keys);

    // buffer slot contents that move, keyed by destination
    let mut writes: Vec<(usize, u64)> = Vec::new();
    let mut relocations = 0usize;
    for &k in &view.keys {
        let old_slot = old_sigma.get(k).unwrap() as usize;
        let new_slot = new_sigma.get(k).unwrap() as usize;
        if old_slot != new_slot {
            let v = vm.read_range((old_slot - 1) * m_star, m_star);
            writes.push((new_slot, v.get_bits_u128(0, m_star) as u64));
            relocations += 1;
        }
    }
    let new_slot = new_sigma.get(key).unwrap() as usize;
    writes.push((new_slot, value & low_mask(m_star)));
    relocations += 1; // the fresh placement counts once, per the cost formula

    // resize to the new image length
    let old_len = params.mem_bits(fill);
    let new_len = params.mem_bits(fill + 1);
    debug_assert!(vm.len_bits() >= old_len);
    grow_to(vm, old_len, new_len);

    for (slot, v) in writes {
        let buf = crate::bitbuf::BitBuf::from_u128(v as u128, m_star);
        vm.write_range((slot - 1) * m_star, &buf);
    }
    let (z, m_hdr, _) = encode_header(params, &new_view);
    let hdr = biguint_to_bits(&(&z % (BigUint::from(1u32) << m_hdr)), m_hdr);
    vm.write_range((fill + 1) * m_star, &hdr);
    Ok(((z >> m_hdr).to_u64().expect("spill fits"), relocations))
}

/// Deletes a key, returning (value, new spill, relocation count).
pub fn delete(
    params: &MinimapParams,
    vm: &mut impl VmSpace,
    spill: u64,
    fill: usize,
    key: u64,
) -> Result<(u64, u64, usize), MinimapError> {
    let view = read_view(params, vm, spill, fill);
    let idx = view
        .keys
        .binary_search(&key)
        .map_err(|_| MinimapError::Missing(key))?;
    let (m_star, _) = params.value_split();
    let old_sigma = slot_matching(params, &view.keys);
    let dying_slot = old_sigma.get(key).unwrap() as usize;
    let dying_mem = vm.read_range((dying_slot - 1) * m_star, m_star);
    let value = view.spills[idx] << m_star | dying_mem.get_bits_u128(0, m_star) as u64;

    let mut new_view = view.clone();
    new_view.keys.remove(idx);
    new_view.spills.remove(idx);
    let new_sigma = slot_matching(params, &new_view.keys);

    let mut writes: Vec<(usize, u64)> = Vec::new();
    let mut relocations = 1; // the removed key counts once
    for &k in &new_view.keys {
        let old_slot = old_sigma.get(k).unwrap() as usize;
        let new_slot = new_sigma.get(k).unwrap() as usize;
        if old_slot != new_slot {
            let v = vm.read_range((old_slot - 1) * m_star, m_star);
            writes.push((new_slot, v.get_bits_u128(0, m_star) as u64));
            relocations += 1;
        }
    }

    let old_len = params.mem_bits(fill);
    let new_len = params.mem_bits(fill - 1);
    for (slot, v) in writes {
        let buf = crate::bitbuf::BitBuf::from_u128(v as u128, m_star);
        vm.write_range((slot - 1) * m_star, &buf);
    }
    shrink_to(vm, old_len, new_len);
    let (z, m_hdr, _) = encode_header(params, &new_view);
    let hdr = biguint_to_bits(&(&z % (BigUint::from(1u32) << m_hdr)), m_hdr);
    vm.write_range((fill - 1) * m_star, &hdr);
    Ok((value, (z >> m_hdr).to_u64().expect("spill fits"), relocations))
}

fn grow_to(vm: &mut impl VmSpace, old_len: usize, new_len: usize) {
    debug_assert_eq!(vm.len_bits(), old_len);
    for _ in old_len..new_len {
        vm.alloc(1);
    }
    for _ in new_len..old_len {
        vm.release(1);
    }
}

fn shrink_to(vm: &mut impl VmSpace, old_len: usize, new_len: usize) {
    grow_to(vm, old_len, new_len);
}

/// Exact space audit at fill j: (M, K, redundancy), where redundancy is
/// `M + log2 K - log2 C(U, j) - j log2 V`, to be at most 4/r.
pub fn space_audit(params: &MinimapParams, fill: usize) -> (usize, u64, Bits) {
    let m = params.mem_bits(fill);
    let k = params.spill_universe(fill);
    let baseline = Bits::log2(&binomial_u64(params.key_universe, fill as u64)).add(
        &Bits::log2(&BigUint::from(params.value_universe).pow(fill as u32)),
    );
    let used = Bits::from_int(m as i64).add(&Bits::log2(&BigUint::from(k)));
    (m, k, used.sub(&baseline))
}

/// The 4/r budget as an exact quantity.
pub fn audit_budget(r: u64) -> Bits {
    Bits::from_frac(Ratio::new(4, r as i64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitmem::VirtualMemory;

    fn params(u: u64, v: u64, n: usize, r: u64, s: u64) -> MinimapParams {
        MinimapParams {
            key_universe: u,
            value_universe: v,
            capacity: n,
            r,
            seed: Seed::new(0x1111_2222 ^ s, 0x3333_4444 ^ s.rotate_left(13)),
        }
    }

    fn fresh(params: &MinimapParams) -> (VirtualMemory, u64) {
        encode_image(params, &[])
    }

    #[test]
    fn empty_image_deterministic() {
        let p = params(16, 8, 3, 2, 0);
        let (vm1, s1) = fresh(&p);
        let (vm2, s2) = fresh(&p);
        assert_eq!(vm1.bits(), vm2.bits());
        assert_eq!(s1, s2);
        assert_eq!(p.mem_bits(0), 0);
    }

    #[test]
    fn sizes_match_split_formulas() {
        let p = params(16, 8, 3, 2, 1);
        let (m_star, k_star) = p.value_split();
        // r' = 6: smallest M with ceil(8/2^M) <= 11 -> M = 0, K = 8
        assert_eq!((m_star, k_star), (0, 8));
        let expect_space = binomial_u64(16, 3) * BigUint::from(8u32).pow(3);
        assert_eq!(p.header_space(3), expect_space);
        let (m_hdr, k_hdr) = p.header_params(3);
        assert_eq!((m_hdr, k_hdr), header_split_params(&expect_space, 2));
        assert!(k_hdr > 2 && k_hdr <= 4);
    }

    #[test]
    fn insert_then_delete_restores_image() {
        let p = params(32, 16, 4, 4, 2);
        let (mut vm, mut spill) = fresh(&p);
        let baseline = vm.bits().clone();
        let base_spill = spill;
        let (s, _) = insert(&p, &mut vm, spill, 0, 7, 13).unwrap();
        spill = s;
        let (v, s, _) = delete(&p, &mut vm, spill, 1, 7).unwrap();
        assert_eq!(v, 13);
        assert_eq!(s, base_spill);
        assert_eq!(vm.bits(), &baseline);
    }

    #[test]
    fn permutation_invariance_of_image() {
        let p = params(64, 64, 6, 4, 3);
        let pairs = [(3u64, 9u64), (11, 0), (40, 63), (17, 5), (60, 31), (25, 25)];
        // canonical image
        let (vm_canon, spill_canon) = encode_image(&p, &pairs);
        // build by two different insertion orders
        for perm in [[0usize, 1, 2, 3, 4, 5], [5, 3, 1, 0, 4, 2]] {
            let (mut vm, mut spill) = fresh(&p);
            for (fill, &i) in perm.iter().enumerate() {
                let (s, _) = insert(&p, &mut vm, spill, fill, pairs[i].0, pairs[i].1).unwrap();
                spill = s;
            }
            assert_eq!(vm.bits(), vm_canon.bits());
            assert_eq!(spill, spill_canon);
        }
    }

    #[test]
    fn query_roundtrip_fuzz() {
        let p = params(64, 64, 8, 2, 4);
        let (mut vm, mut spill) = fresh(&p);
        let mut model = std::collections::BTreeMap::new();
        let mut rng = 0x1717u64;
        let mut fill = 0usize;
        for _ in 0..2_000 {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let key = rng >> 40 & 63;
            let val = rng >> 20 & 63;
            if model.contains_key(&key) {
                if rng & 1 == 1 {
                    let (v, s, _) = delete(&p, &mut vm, spill, fill, key).unwrap();
                    assert_eq!(v, model.remove(&key).unwrap());
                    spill = s;
                    fill -= 1;
                } else {
                    assert_eq!(query(&p, &mut vm, spill, fill, key), model.get(&key).copied());
                }
            } else if fill < p.capacity {
                let (s, _) = insert(&p, &mut vm, spill, fill, key, val).unwrap();
                model.insert(key, val);
                spill = s;
                fill += 1;
            }
            // image equals the from-scratch encoding of the model
            let pairs: Vec<(u64, u64)> = model.iter().map(|(&k, &v)| (k, v)).collect();
            let (vm_expect, spill_expect) = encode_image(&p, &pairs);
            assert_eq!(vm.bits(), vm_expect.bits());
            assert_eq!(spill, spill_expect);
        }
    }

    #[test]
    fn errors() {
        let p = params(16, 4, 2, 2, 5);
        let (mut vm, mut spill) = fresh(&p);
        let (s, _) = insert(&p, &mut vm, spill, 0, 3, 1).unwrap();
        spill = s;
        assert_eq!(
            insert(&p, &mut vm, spill, 1, 3, 2).unwrap_err(),
            MinimapError::Duplicate(3)
        );
        assert_eq!(
            delete(&p, &mut vm, spill, 1, 9).unwrap_err(),
            MinimapError::Missing(9)
        );
        let (s, _) = insert(&p, &mut vm, spill, 1, 4, 0).unwrap();
        spill = s;
        assert_eq!(
            insert(&p, &mut vm, spill, 2, 5, 0).unwrap_err(),
            MinimapError::Full(2)
        );
    }

    #[test]
    fn query_reads_header_plus_one_slot() {
        // instrument by wrapping the VM read counter: approximate by
        // checking slots_audit: every stored key maps to a distinct slot
        let p = params(64, 64, 8, 2, 6);
        let pairs: Vec<(u64, u64)> = (0..8).map(|i| (i * 7 + 1, i * 3)).collect();
        let (mut vm, spill) = encode_image(&p, &pairs);
        let view = read_view(&p, &mut vm, spill, 8);
        let sigma = slot_matching(&p, &view.keys);
        let slots: std::collections::HashSet<u64> =
            view.keys.iter().map(|&k| sigma.get(k).unwrap()).collect();
        assert_eq!(slots.len(), 8);
        assert!(slots.iter().all(|&s| (1..=8).contains(&s)));
        for &(k, v) in &pairs {
            assert_eq!(query(&p, &mut vm, spill, 8, k), Some(v));
        }
    }

    #[test]
    fn audit_small_cases() {
        // U = V = n = 1: full state redundancy zero within the split slack
        let p = params(1, 1, 1, 1, 7);
        let (_, _, red) = space_audit(&p, 1);
        assert!(red.le(&audit_budget(1)));
        assert!(Bits::zero().le(&red));

        // spec's worked case: (U=32, n=4, V=16, r=4) audits at most 1 bit
        let p = params(32, 16, 4, 4, 8);
        let (_, _, red) = space_audit(&p, 4);
        assert!(red.le(&Bits::from_int(1)));
    }

    #[test]
    fn audit_sweep_r_monotone_budget() {
        for &r in &[1u64, 2, 4, 8, 16] {
            let p = params(64, 32, 6, r, 9);
            for fill in 0..=6 {
                let (_, k, red) = space_audit(&p, fill);
                assert!(k <= 2 * r);
                assert!(
                    red.le(&audit_budget(r)),
                    "r={r} fill={fill}: {} > 4/r",
                    red.approx()
                );
                assert!(Bits::zero().le(&red), "redundancy cannot be negative");
            }
        }
    }

    #[test]
    fn relocations_within_budget_small() {
        let p = params(4096, 64, 32, 2, 10);
        let (mut vm, mut spill) = fresh(&p);
        let mut fill = 0usize;
        let mut keys = Vec::new();
        let mut rng = 0xabcdu64;
        let mut total = 0usize;
        let mut ops = 0usize;
        for _ in 0..400 {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            if fill < 32 && (fill == 0 || rng & 1 == 0) {
                let key = rng >> 20 & 4095;
                if keys.contains(&key) {
                    continue;
                }
                let (s, reloc) = insert(&p, &mut vm, spill, fill, key, rng >> 10 & 63).unwrap();
                spill = s;
                keys.push(key);
                fill += 1;
                total += reloc;
            } else {
                let key = keys.swap_remove(rng as usize % keys.len());
                let (_, s, reloc) = delete(&p, &mut vm, spill, fill, key).unwrap();
                spill = s;
                fill -= 1;
                total += reloc;
            }
            ops += 1;
        }
        let mean = total as f64 / ops as f64;
        assert!(mean <= 2.0 * 32f64.log2() + 6.0, "mean relocations {mean}");
    }
}
