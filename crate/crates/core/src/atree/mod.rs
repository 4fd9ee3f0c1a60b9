//! The adapter-tree dictionary: a B-ary tree over each level-1 bucket where
//! every node's variable-size encoding is built by random swap, two
//! adapters, a cut, joint compression of child metadata, and concatenation.
//!
//! Each bucket's root owns one physical VM; all descendant state lives
//! inside it and is reached through nested address translations.

mod dict;
mod encode;
mod sizes;

pub use dict::{ATree, AccessProfile, BucketImage, OpReport, TreeMode};
pub use encode::{decode_bucket, encode_bucket, BucketEncoding};
pub use sizes::{NodeSize, SizeTables};

use crate::perm::{
    sample_kwise_feistel, sample_kwise_mixed, sample_pairwise_mixed, FeistelPerm, Seed,
};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TreeError {
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("key {0} out of universe")]
    KeyRange(u64),
    #[error("key {0} already present")]
    Duplicate(u64),
    #[error("key {0} not present")]
    Missing(u64),
    #[error("bucket structure cannot encode the set (hash failure)")]
    HashFailure,
    #[error("capacity exceeded: dictionary holds at most {0} keys")]
    CapacityExceeded(usize),
}

/// Rebuild policy: resample hashes on failure, or keep them fixed and fall
/// back to the rank-coded fail mode (strongly history independent).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HistoryMode {
    Rebuild,
    Strict,
}

/// Parameters of the tree dictionary.
#[derive(Clone, Debug)]
pub struct TreeConfig {
    /// Branching factor (power of two).
    pub b: usize,
    /// Depth: root at level 1, leaves at level d.
    pub d: usize,
    /// Expected keys per level-1 bucket; r = n_1.
    pub n1: usize,
    /// Number of level-1 buckets (power of two).
    pub roots: usize,
    /// Quotient range Q.
    pub q: u64,
    pub mode: HistoryMode,
    // derived
    /// Per-level expected widths n_l, index 0 unused, 1..=d.
    pub n_level: Vec<usize>,
    /// ID length at each level.
    pub id_bits: Vec<u32>,
    /// Word length w = floor(log2(U_d / n_d)) - 5.
    pub w: u32,
    /// Redundancy parameter r = n_1.
    pub r: u64,
    /// Leaf count bounds.
    pub leaf_lo: usize,
    pub leaf_hi: usize,
    /// Bucket count bounds.
    pub root_lo: usize,
    pub root_hi: usize,
}

impl TreeConfig {
    pub fn new(
        b: usize,
        d: usize,
        n1: usize,
        roots: usize,
        q: u64,
        mode: HistoryMode,
    ) -> Result<Self, TreeError> {
        if !b.is_power_of_two() || b < 2 {
            return Err(TreeError::BadConfig("B must be a power of two >= 2".into()));
        }
        if d < 2 {
            return Err(TreeError::BadConfig("depth must be at least 2".into()));
        }
        if !roots.is_power_of_two() {
            return Err(TreeError::BadConfig("root count must be a power of two".into()));
        }
        let fan = b.pow(d as u32 - 1);
        if n1 % fan != 0 {
            return Err(TreeError::BadConfig(format!(
                "n1 = {n1} must be divisible by B^(d-1) = {fan}"
            )));
        }
        let mut n_level = vec![0usize; d + 1];
        let mut id_bits = vec![0u32; d + 1];
        let i1 = (4.0 * (n1 as f64).log2()).ceil() as u32;
        for l in 1..=d {
            n_level[l] = n1 / b.pow(l as u32 - 1);
            id_bits[l] = i1 - (l as u32 - 1) * b.ilog2();
        }
        let nd = n_level[d];
        let ud_over_nd = ((1u128 << id_bits[d]) * q as u128) / nd as u128;
        let w = (128 - ud_over_nd.leading_zeros() - 1).saturating_sub(5);
        if w < 40 {
            return Err(TreeError::BadConfig(format!(
                "word length w = {w} below 40; increase q or id width"
            )));
        }
        if w > 128 {
            return Err(TreeError::BadConfig("word length above 128".into()));
        }
        // U_l >= 4 n_l at the leaf implies it everywhere (same ratio)
        if (1u128 << id_bits[d]) * q as u128 < 4 * nd as u128 {
            return Err(TreeError::BadConfig("universe below 4n".into()));
        }
        let dev = |n: usize| (n as f64).powf(2.0 / 3.0);
        let leaf_lo = (nd as f64 - dev(nd)).floor() as usize;
        let leaf_hi = (nd as f64 + dev(nd)).ceil() as usize;
        let root_lo = (n1 as f64 - dev(n1)).floor() as usize;
        let root_hi = (n1 as f64 + dev(n1)).ceil() as usize;
        if leaf_lo * 2 < nd || leaf_hi > 2 * nd {
            return Err(TreeError::BadConfig(
                "leaf bounds leave the [n/2, 2n] range".into(),
            ));
        }
        Ok(TreeConfig {
            b,
            d,
            n1,
            roots,
            q,
            mode,
            n_level,
            id_bits,
            w,
            r: n1 as u64,
            leaf_lo,
            leaf_hi,
            root_lo,
            root_hi,
        })
    }

    /// Rounded-up key universe: roots * 2^{i_1} * Q.
    pub fn universe(&self) -> u128 {
        self.roots as u128 * (1u128 << self.id_bits[1]) * self.q as u128
    }

    /// Universe size of a level-l node.
    pub fn node_universe(&self, level: usize) -> u128 {
        (1u128 << self.id_bits[level]) * self.q as u128
    }

    /// Total capacity N = roots * n1.
    pub fn capacity(&self) -> usize {
        self.roots * self.n1
    }

    /// Child index bits consumed between level l and l+1.
    pub fn child_bits(&self) -> u32 {
        self.b.ilog2()
    }
}

/// The fixed hash functions and shared randomness of one tree dictionary.
pub struct TreeSeeds {
    pub master: Seed,
    pub cfg_b: usize,
    /// Attempt counters bump derivations in rebuild mode.
    pub global_attempt: u32,
    pub bucket_attempt: Vec<u32>,
}

impl TreeSeeds {
    pub fn new(master: Seed, cfg: &TreeConfig) -> Self {
        TreeSeeds {
            master,
            cfg_b: cfg.b,
            global_attempt: 0,
            bucket_attempt: vec![0; cfg.roots],
        }
    }

    /// Top-level distributor: [U] -> [roots] x [2^{i1} Q].
    pub fn c1(&self, cfg: &TreeConfig) -> FeistelPerm {
        let s = cfg.roots.ilog2().max(1);
        let t = (1u128 << cfg.id_bits[1]) * cfg.q as u128;
        sample_kwise_mixed(
            self.master.derive(&[0xc1, self.global_attempt as u64]),
            s,
            t,
            0.25,
        )
        .expect("c1 family")
    }

    /// Per-bucket ID extractor: [2^{i1} Q] -> [2^{i1}] x [Q].
    pub fn id_extractor(&self, cfg: &TreeConfig, bucket: usize) -> FeistelPerm {
        sample_pairwise_mixed(
            self.master.derive(&[
                0x1d,
                bucket as u64,
                self.global_attempt as u64,
                self.bucket_attempt[bucket] as u64,
            ]),
            cfg.id_bits[1],
            cfg.q as u128,
        )
        .expect("id extractor family")
    }

    /// Per-bucket leaf distributor: [2^{i1}] -> [B^{d-1}] x [2^{i_d}].
    pub fn leaf_hash(&self, cfg: &TreeConfig, bucket: usize) -> FeistelPerm {
        let s = (cfg.d as u32 - 1) * cfg.child_bits();
        sample_kwise_feistel(
            self.master.derive(&[
                0x2ea_f,
                bucket as u64,
                self.global_attempt as u64,
                self.bucket_attempt[bucket] as u64,
            ]),
            s,
            cfg.id_bits[1],
            0.25,
        )
        .expect("leaf hash family")
    }

    /// Swap seed shared by all level-l sub-VMs.
    pub fn swap_seed(&self, cfg: &TreeConfig, level: usize) -> crate::bitmem::SwapSeed {
        // sized to the largest conceivable node VM at this level
        let max_words = cfg.n1 * 16 + 64;
        let log = (max_words as u64).ilog2() + 1;
        crate::bitmem::SwapSeed::sample(&self.master.derive(&[0x3aff, level as u64]), cfg.w, log)
    }

    /// Adapter seed for (level, word/bit granularity).
    pub fn adapter_seed(&self, level: usize, word: bool) -> Seed {
        self.master.derive(&[0xada, level as u64, word as u64])
    }

    /// Slot-matching seed shared by all leaf minimaps.
    pub fn minimap_seed(&self) -> Seed {
        self.master.derive(&[0x111a])
    }
}

/// Hash a key to (bucket, xid, xquot).
pub fn hash_key(cfg: &TreeConfig, seeds: &TreeSeeds, x: u128) -> Result<(usize, u64, u64), TreeError> {
    if x >= cfg.universe() {
        return Err(TreeError::KeyRange(x as u64));
    }
    let c1 = seeds.c1(cfg);
    let (bucket, y) = c1.apply_split(x).expect("in domain");
    let iu = seeds.id_extractor(cfg, bucket as usize);
    let (xid, xquot) = iu.apply_split(y as u128).expect("in domain");
    Ok((bucket as usize, xid, xquot))
}

/// Inverse of [`hash_key`].
pub fn unhash_key(cfg: &TreeConfig, seeds: &TreeSeeds, bucket: usize, xid: u64, xquot: u64) -> u128 {
    let iu = seeds.id_extractor(cfg, bucket);
    let y = iu.invert_split(xid, xquot).expect("in domain");
    let c1 = seeds.c1(cfg);
    c1.invert_split(bucket as u64, y as u64).expect("in domain")
}

/// Hash a bucket-level ID to (leaf index, leaf id).
pub fn hash_leaf(cfg: &TreeConfig, seeds: &TreeSeeds, bucket: usize, xid: u64) -> (usize, u64) {
    let h2 = seeds.leaf_hash(cfg, bucket);
    let (v, yid) = h2.apply_split(xid as u128).expect("in domain");
    (v as usize, yid)
}

pub fn unhash_leaf(cfg: &TreeConfig, seeds: &TreeSeeds, bucket: usize, leaf: usize, yid: u64) -> u64 {
    let h2 = seeds.leaf_hash(cfg, bucket);
    h2.invert_split(leaf as u64, yid).expect("in domain") as u64
}

/// Child index at each inner level (1..d) along the path to `leaf`.
pub fn path_children(cfg: &TreeConfig, leaf: usize) -> Vec<usize> {
    let cb = cfg.child_bits();
    (1..cfg.d)
        .map(|l| (leaf >> ((cfg.d - 1 - l) as u32 * cb)) & (cfg.b - 1))
        .collect()
}

/// The level-l identifier of a key: child-path bits below level l, then the
/// leaf id. At the root (l = 1) this is exactly (leaf || yid).
pub fn level_id(cfg: &TreeConfig, leaf: usize, yid: u64, level: usize) -> u64 {
    let below = (cfg.d - level) as u32 * cfg.child_bits();
    let low_path = leaf as u64 & ((1u64 << below) - 1);
    low_path << cfg.id_bits[cfg.d] | yid
}
