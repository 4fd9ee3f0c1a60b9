//! From-scratch encoding of a whole bucket: the five construction steps run
//! as pure bit-string transformations. This is the canonical image (the
//! incremental machinery must always agree with it), the rebuild path, and
//! the decode oracle.

use super::sizes::SizeTables;
use super::{hash_leaf, level_id, TreeConfig, TreeSeeds};
use crate::adapter::{AdapterCache, AdapterState, Granularity};
use crate::bitbuf::BitBuf;
use crate::bitmem::{swap_join_bits, swap_split_bits};
use crate::minimap;
use crate::spillover::{biguint_to_bits, bits_to_biguint};
use num_bigint::BigUint;
use num_traits::ToPrimitive;

/// Why a key set cannot be encoded under the current hash functions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncodeFailure {
    LeafOverflow,
    LeafUnderflow,
    IdCollision,
    RootBounds,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BucketEncoding {
    pub bits: BitBuf,
    pub spill: u64,
    pub n: usize,
}

/// Per-level adapter caches, shared between from-scratch and incremental
/// paths so matchings are computed once per length vector.
pub struct LevelCaches {
    pub word: Vec<AdapterCache>,
    pub bit: Vec<AdapterCache>,
}

impl LevelCaches {
    pub fn new(cfg: &TreeConfig) -> Self {
        LevelCaches {
            word: (0..=cfg.d).map(|_| AdapterCache::new(512)).collect(),
            bit: (0..=cfg.d).map(|_| AdapterCache::new(512)).collect(),
        }
    }
}

/// Adapter states for a node at `level` whose children have the given
/// word/bit tape lengths. Sub-VM 0 of the word adapter is the bit VM.
pub fn node_adapters(
    cfg: &TreeConfig,
    seeds: &TreeSeeds,
    level: usize,
    l_word: &[usize],
    l_bit: &[usize],
) -> (AdapterState, AdapterState) {
    let w = cfg.w as usize;
    let bit_total: usize = l_bit.iter().sum();
    let mut word_lengths = vec![(bit_total / w) as u64];
    word_lengths.extend(l_word.iter().map(|&x| x as u64));
    let l_max = (cfg.n1 * 32 + 256) as u64;
    let word_ad = AdapterState::new(
        word_lengths,
        seeds.adapter_seed(level, true),
        Granularity::Word,
        l_max,
    );
    let bit_ad = AdapterState::new(
        l_bit.iter().map(|&x| x as u64).collect(),
        seeds.adapter_seed(level, false),
        Granularity::Bit,
        l_max,
    );
    (word_ad, bit_ad)
}

/// Groups bucket pairs (xid, xquot) by leaf, checking leaf bounds and ID
/// uniqueness.
pub fn group_by_leaf(
    cfg: &TreeConfig,
    seeds: &TreeSeeds,
    bucket: usize,
    pairs: &[(u64, u64)],
) -> Result<Vec<Vec<(u64, u64)>>, EncodeFailure> {
    let leaves = cfg.b.pow(cfg.d as u32 - 1);
    let mut groups = vec![Vec::new(); leaves];
    for &(xid, q) in pairs {
        let (v, yid) = hash_leaf(cfg, seeds, bucket, xid);
        groups[v].push((yid, q));
    }
    for g in &mut groups {
        g.sort_unstable();
        if g.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(EncodeFailure::IdCollision);
        }
        if g.len() > cfg.leaf_hi {
            return Err(EncodeFailure::LeafOverflow);
        }
        if g.len() < cfg.leaf_lo {
            return Err(EncodeFailure::LeafUnderflow);
        }
    }
    Ok(groups)
}

/// Encodes the level-l node holding `pairs` (level-l ids with quotients).
fn encode_node(
    cfg: &TreeConfig,
    seeds: &TreeSeeds,
    sizes: &SizeTables,
    caches: &mut LevelCaches,
    level: usize,
    pairs: &[(u64, u64)],
) -> (BitBuf, u64) {
    if level == cfg.d {
        return minimap::encode_bits(&sizes.leaf_params(), pairs);
    }
    let shift = cfg.id_bits[level + 1];
    let mut child_pairs = vec![Vec::new(); cfg.b];
    for &(id, q) in pairs {
        let c = (id >> shift) as usize;
        child_pairs[c].push((id & ((1u64 << shift) - 1), q));
    }
    let mut child_bits = Vec::with_capacity(cfg.b);
    let mut n_vec = Vec::with_capacity(cfg.b);
    let mut k_vec = Vec::with_capacity(cfg.b);
    for c in 0..cfg.b {
        let (bits, spill) = encode_node(cfg, seeds, sizes, caches, level + 1, &child_pairs[c]);
        n_vec.push(child_pairs[c].len());
        k_vec.push(spill);
        child_bits.push(bits);
    }
    assemble_node(cfg, seeds, sizes, caches, level, &n_vec, &k_vec, &child_bits)
}

/// Steps 1-5 given already-encoded children.
#[allow(clippy::too_many_arguments)]
pub fn assemble_node(
    cfg: &TreeConfig,
    seeds: &TreeSeeds,
    sizes: &SizeTables,
    caches: &mut LevelCaches,
    level: usize,
    n_vec: &[usize],
    k_vec: &[u64],
    child_bits: &[BitBuf],
) -> (BitBuf, u64) {
    let w = cfg.w as usize;
    let n: usize = n_vec.iter().sum();
    let swap_seed = seeds.swap_seed(cfg, level + 1);

    // Step 1: random swap each child into WVM tapes
    let mut word_tapes = Vec::with_capacity(cfg.b);
    let mut bit_tapes = Vec::with_capacity(cfg.b);
    for bits in child_bits {
        let (wt, bt) = swap_split_bits(bits, &swap_seed).expect("child swappable");
        word_tapes.push(wt);
        bit_tapes.push(bt);
    }
    let l_word: Vec<usize> = word_tapes.iter().map(|t| t.len() / w).collect();
    let l_bit: Vec<usize> = bit_tapes.iter().map(|t| t.len()).collect();

    // Step 2: bit adapter over the bit tapes, word adapter over all word
    // tapes including the bit VM's complete words
    let (word_ad, bit_ad) = node_adapters(cfg, seeds, level, &l_word, &l_bit);
    let bit_total: usize = l_bit.iter().sum();
    let mut bit_vm = BitBuf::zeros(bit_total);
    for c in 0..cfg.b {
        for b in 1..=l_bit[c] {
            let t = bit_ad.resolve(&mut caches.bit[level], c, b as u64).unwrap();
            bit_vm.set(t as usize - 1, bit_tapes[c].get(b - 1));
        }
    }
    let bitvm_words = bit_total / w;
    let w_cat = bitvm_words + l_word.iter().sum::<usize>();
    let mut word_vm = BitBuf::zeros(w_cat * w);
    for j in 1..=bitvm_words {
        let t = word_ad.resolve(&mut caches.word[level], 0, j as u64).unwrap();
        word_vm.copy_from((t as usize - 1) * w, &bit_vm, (j - 1) * w, w);
    }
    for c in 0..cfg.b {
        for j in 1..=l_word[c] {
            let t = word_ad
                .resolve(&mut caches.word[level], c + 1, j as u64)
                .unwrap();
            word_vm.copy_from((t as usize - 1) * w, &word_tapes[c], (j - 1) * w, w);
        }
    }
    let mut m_cat = word_vm;
    let bit_tail_len = bit_total - bitvm_words * w;
    let at = m_cat.grow(bit_tail_len);
    m_cat.copy_from(at, &bit_vm, bitvm_words * w, bit_tail_len);

    // Step 3: cut at M_fix, padding zeros when the concatenation is short
    let size = sizes.node_size(level, n);
    let (m_fix_bits, m_rem_bits) = if m_cat.len() >= size.m_fix {
        (m_cat.slice(0, size.m_fix), m_cat.slice(size.m_fix, m_cat.len() - size.m_fix))
    } else {
        let mut f = m_cat.clone();
        f.grow(size.m_fix - m_cat.len());
        (f, BitBuf::new())
    };

    // Step 4: joint compression of (n-vector, k_cat, m_rem)
    let z = sizes.rank_meta(level, n_vec, &bits_to_biguint(&m_rem_bits), k_vec);
    let meta = biguint_to_bits(&(&z % (BigUint::from(1u32) << size.m_star)), size.m_star);
    let spill = (&z >> size.m_star).to_u64().expect("node spill fits u64");

    // Step 5: concatenate and pad
    let mut out = m_fix_bits;
    out.extend(&meta);
    out.grow(size.pad);
    debug_assert_eq!(out.len(), size.m);
    debug_assert!(spill < size.k);
    (out, spill)
}

/// Inverse of [`assemble_node`]: recovers child encodings and counts.
pub fn disassemble_node(
    cfg: &TreeConfig,
    seeds: &TreeSeeds,
    sizes: &SizeTables,
    caches: &mut LevelCaches,
    level: usize,
    bits: &BitBuf,
    spill: u64,
    n: usize,
) -> (Vec<usize>, Vec<u64>, Vec<BitBuf>) {
    let w = cfg.w as usize;
    let size = sizes.node_size(level, n);
    let meta = bits.slice(size.m_fix, size.m_star);
    let z = (BigUint::from(spill) << size.m_star) + bits_to_biguint(&meta);
    let (n_vec, m_rem_val, k_vec) = sizes.unrank_meta(level, n, &z);
    let (m_cat_len, m_rem_len) = sizes.cat_rem(level, &n_vec);
    let mut m_cat = if m_cat_len >= size.m_fix {
        let mut c = bits.slice(0, size.m_fix);
        c.extend(&biguint_to_bits(&m_rem_val, m_rem_len));
        c
    } else {
        bits.slice(0, m_cat_len)
    };
    debug_assert_eq!(m_cat.len(), m_cat_len);

    // un-concatenate: word VM then bit-VM tail
    let l_word: Vec<usize> = n_vec
        .iter()
        .map(|&nc| sizes.tapes(seeds, level + 1, nc).0)
        .collect();
    let l_bit: Vec<usize> = n_vec
        .iter()
        .map(|&nc| sizes.tapes(seeds, level + 1, nc).1)
        .collect();
    let bit_total: usize = l_bit.iter().sum();
    let bitvm_words = bit_total / w;
    let (word_ad, bit_ad) = node_adapters(cfg, seeds, level, &l_word, &l_bit);

    let mut bit_vm = BitBuf::zeros(bit_total);
    let tail_len = bit_total - bitvm_words * w;
    bit_vm.copy_from(bitvm_words * w, &m_cat, m_cat.len() - tail_len, tail_len);
    m_cat.shrink(tail_len);
    for j in 1..=bitvm_words {
        let t = word_ad.resolve(&mut caches.word[level], 0, j as u64).unwrap();
        bit_vm.copy_from((j - 1) * w, &m_cat, (t as usize - 1) * w, w);
    }
    let mut child_bits = Vec::with_capacity(cfg.b);
    for c in 0..cfg.b {
        let mut wt = BitBuf::zeros(l_word[c] * w);
        for j in 1..=l_word[c] {
            let t = word_ad
                .resolve(&mut caches.word[level], c + 1, j as u64)
                .unwrap();
            wt.copy_from((j - 1) * w, &m_cat, (t as usize - 1) * w, w);
        }
        let mut bt = BitBuf::zeros(l_bit[c]);
        for b in 1..=l_bit[c] {
            let t = bit_ad.resolve(&mut caches.bit[level], c, b as u64).unwrap();
            bt.set(b - 1, bit_vm.get(t as usize - 1));
        }
        child_bits.push(swap_join_bits(&wt, &bt, &seeds.swap_seed(cfg, level + 1)).unwrap());
    }
    (n_vec, k_vec, child_bits)
}

/// Decodes a level-l node image into its (id, quotient) pairs.
pub fn decode_node(
    cfg: &TreeConfig,
    seeds: &TreeSeeds,
    sizes: &SizeTables,
    caches: &mut LevelCaches,
    level: usize,
    bits: &BitBuf,
    spill: u64,
    n: usize,
) -> Vec<(u64, u64)> {
    if level == cfg.d {
        let p = sizes.leaf_params();
        let mut vm = crate::bitmem::VirtualMemory::from_bits(1, bits.clone());
        let view = minimap::read_view(&p, &mut vm, spill, n);
        return view
            .keys
            .iter()
            .map(|&k| {
                let v = minimap::query(&p, &mut vm, spill, n, k).expect("stored key");
                (k, v)
            })
            .collect();
    }
    let shift = cfg.id_bits[level + 1];
    let (n_vec, k_vec, child_bits) =
        disassemble_node(cfg, seeds, sizes, caches, level, bits, spill, n);
    let mut out = Vec::with_capacity(n);
    for c in 0..cfg.b {
        for (id, q) in decode_node(
            cfg,
            seeds,
            sizes,
            caches,
            level + 1,
            &child_bits[c],
            k_vec[c],
            n_vec[c],
        ) {
            out.push(((c as u64) << shift | id, q));
        }
    }
    out
}

/// Encodes a whole bucket from its (xid, xquot) pairs.
pub fn encode_bucket(
    cfg: &TreeConfig,
    seeds: &TreeSeeds,
    sizes: &SizeTables,
    caches: &mut LevelCaches,
    bucket: usize,
    pairs: &[(u64, u64)],
) -> Result<BucketEncoding, EncodeFailure> {
    if pairs.len() < cfg.root_lo || pairs.len() > cfg.root_hi {
        return Err(EncodeFailure::RootBounds);
    }
    let groups = group_by_leaf(cfg, seeds, bucket, pairs)?;
    // level-1 pairs carry ids (leaf || yid)
    let mut l1: Vec<(u64, u64)> = Vec::with_capacity(pairs.len());
    for (leaf, g) in groups.iter().enumerate() {
        for &(yid, q) in g {
            l1.push((level_id(cfg, leaf, yid, 1), q));
        }
    }
    let (bits, spill) = encode_node(cfg, seeds, sizes, caches, 1, &l1);
    Ok(BucketEncoding { bits, spill, n: pairs.len() })
}

/// Decodes a whole bucket image back to its (xid, xquot) pairs, sorted.
pub fn decode_bucket(
    cfg: &TreeConfig,
    seeds: &TreeSeeds,
    sizes: &SizeTables,
    caches: &mut LevelCaches,
    bucket: usize,
    enc: &BucketEncoding,
) -> Vec<(u64, u64)> {
    let id1 = decode_node(cfg, seeds, sizes, caches, 1, &enc.bits, enc.spill, enc.n);
    let mut out: Vec<(u64, u64)> = id1
        .into_iter()
        .map(|(id, q)| {
            let yid = id & ((1u64 << cfg.id_bits[cfg.d]) - 1);
            let leaf = (id >> cfg.id_bits[cfg.d]) as usize;
            (super::unhash_leaf(cfg, seeds, bucket, leaf, yid), q)
        })
        .collect();
    out.sort_unstable();
    out
}
