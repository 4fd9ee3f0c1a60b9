//! The adapter-tree dictionary proper: buckets with one physical VM each,
//! incremental operations that walk the path translating accesses and
//! resizes through swap layouts and adapters, and the fail-mode fallback.

use super::encode::{
    decode_bucket, encode_bucket, group_by_leaf, node_adapters, BucketEncoding, EncodeFailure,
    LevelCaches,
};
use super::sizes::SizeTables;
use super::{
    hash_key, hash_leaf, path_children, unhash_key, HistoryMode, TreeConfig, TreeError, TreeSeeds,
};
use crate::bitbuf::BitBuf;
use crate::bitmem::{SwapLayout, VirtualMemory, VmSpace, WvmLoc};
use crate::minimap;
use crate::mlhash::rankset;
use crate::spillover::{biguint_to_bits, bits_to_biguint};
use num_bigint::BigUint;
use num_traits::ToPrimitive;

/// Mode of a bucket or of the whole dictionary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TreeMode {
    Normal,
    Fail,
}

enum Bucket {
    Normal { n: usize, vm: VirtualMemory, spill: u64 },
    /// Sorted (xid, xquot) pairs; canonical image is the lexicographic rank.
    Fail { pairs: Vec<(u64, u64)> },
}

/// Counters for one operation.
#[derive(Clone, Copy, Debug, Default)]
pub struct OpReport {
    /// Physical root-VM word accesses.
    pub root_word_accesses: u64,
    /// Per-path-node VM size deltas (level, delta), root first.
    pub size_deltas: [i64; 8],
    pub size_delta_count: usize,
    /// Slot relocations inside the leaf minimap.
    pub leaf_relocations: usize,
    /// Bucket rebuilt or mode-switched during this op.
    pub rebuilt: bool,
}

/// Read-only access profile of a query.
#[derive(Clone, Copy, Debug, Default)]
pub struct AccessProfile {
    pub root_word_accesses: u64,
    pub root_word_writes: u64,
}

/// Canonical byte image of a bucket, for history-independence replay.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BucketImage {
    pub mode: TreeMode,
    pub n: usize,
    pub bits: BitBuf,
    pub spill: u64,
}

pub struct ATree {
    pub cfg: TreeConfig,
    pub seeds: TreeSeeds,
    pub sizes: SizeTables,
    caches: LevelCaches,
    buckets: Vec<Bucket>,
    /// Whole-dictionary fail mode (top-level hash failure, strict mode).
    global_fail: Option<Vec<u128>>,
    count: usize,
}

const REBUILD_ATTEMPTS: u32 = 64;
const GLOBAL_ATTEMPTS: u32 = 8;

impl ATree {
    pub fn new(cfg: TreeConfig, master: crate::perm::Seed) -> Self {
        let seeds = TreeSeeds::new(master, &cfg);
        let sizes = SizeTables::new(cfg.clone(), &seeds);
        let caches = LevelCaches::new(&cfg);
        let buckets = (0..cfg.roots).map(|_| Bucket::Fail { pairs: Vec::new() }).collect();
        let mut t = ATree {
            cfg,
            seeds,
            sizes,
            caches,
            buckets,
            global_fail: None,
            count: 0,
        };
        // an empty dictionary under-fills every bucket: fail mode everywhere
        t.global_recheck();
        t
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn mode(&self) -> TreeMode {
        if self.global_fail.is_some() {
            TreeMode::Fail
        } else {
            TreeMode::Normal
        }
    }

    pub fn bucket_mode(&self, b: usize) -> TreeMode {
        match self.buckets[b] {
            Bucket::Normal { .. } => TreeMode::Normal,
            Bucket::Fail { .. } => TreeMode::Fail,
        }
    }

    /// Builds from a key set, replacing the current contents.
    pub fn build(&mut self, keys: &[u128]) -> Result<(), TreeError> {
        let mut sorted = keys.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != keys.len() {
            return Err(TreeError::Duplicate(keys[0] as u64));
        }
        for &k in &sorted {
            if k >= self.cfg.universe() {
                return Err(TreeError::KeyRange(k as u64));
            }
        }
        self.count = sorted.len();
        self.rebuild_all(&sorted);
        Ok(())
    }

    fn rebuild_all(&mut self, keys: &[u128]) {
        // distribute; on strict mode a top-level bounds violation moves the
        // whole dictionary to fail mode, on rebuild mode the distributor is
        // resampled a few times first
        for attempt in 0..=GLOBAL_ATTEMPTS {
            let per_bucket = self.distribute(keys);
            let bounds_ok = per_bucket
                .iter()
                .all(|p| (self.cfg.root_lo..=self.cfg.root_hi).contains(&p.len()));
            if bounds_ok || self.cfg.mode == HistoryMode::Strict || attempt == GLOBAL_ATTEMPTS {
                if !bounds_ok && self.cfg.mode == HistoryMode::Strict {
                    self.global_fail = Some(keys.to_vec());
                    return;
                }
                if !bounds_ok {
                    // rebuild mode exhausted: keep per-bucket fail modes
                }
                self.global_fail = None;
                let mut built = Vec::with_capacity(per_bucket.len());
                for (b, pairs) in per_bucket.into_iter().enumerate() {
                    built.push(self.make_bucket(b, pairs));
                }
                self.buckets = built;
                return;
            }
            self.seeds.global_attempt += 1;
        }
    }

    fn distribute(&self, keys: &[u128]) -> Vec<Vec<(u64, u64)>> {
        let mut per_bucket = vec![Vec::new(); self.cfg.roots];
        for &k in keys {
            let (b, xid, q) = hash_key(&self.cfg, &self.seeds, k).expect("validated");
            per_bucket[b].push((xid, q));
        }
        for p in &mut per_bucket {
            p.sort_unstable();
        }
        per_bucket
    }

    /// Builds one bucket, honoring the rebuild/strict policy.
    fn make_bucket(&mut self, b: usize, pairs: Vec<(u64, u64)>) -> Bucket {
        if !(self.cfg.root_lo..=self.cfg.root_hi).contains(&pairs.len()) {
            return Bucket::Fail { pairs };
        }
        match self.cfg.mode {
            HistoryMode::Strict => {
                match encode_bucket(&self.cfg, &self.seeds, &self.sizes, &mut self.caches, b, &pairs)
                {
                    Ok(enc) => Bucket::Normal { n: enc.n, vm: VirtualMemory::from_bits(self.cfg.w, enc.bits), spill: enc.spill },
                    Err(_) => Bucket::Fail { pairs },
                }
            }
            HistoryMode::Rebuild => {
                for _ in 0..REBUILD_ATTEMPTS {
                    match encode_bucket(
                        &self.cfg,
                        &self.seeds,
                        &self.sizes,
                        &mut self.caches,
                        b,
                        &pairs,
                    ) {
                        Ok(enc) => {
                            return Bucket::Normal {
                                n: enc.n,
                                vm: VirtualMemory::from_bits(self.cfg.w, enc.bits),
                                spill: enc.spill,
                            }
                        }
                        Err(EncodeFailure::RootBounds) => break,
                        Err(_) => {
                            self.seeds.bucket_attempt[b] += 1;
                        }
                    }
                }
                Bucket::Fail { pairs }
            }
        }
    }

    /// Re-evaluates mode transitions after an operation (strict mode keeps
    /// everything a function of the current set; rebuild mode retries).
    fn recheck_bucket(&mut self, b: usize) {
        let pairs = match &self.buckets[b] {
            Bucket::Fail { pairs } => pairs.clone(),
            Bucket::Normal { .. } => return,
        };
        self.buckets[b] = self.make_bucket(b, pairs);
    }

    fn global_recheck(&mut self) {
        if let Some(keys) = self.global_fail.take() {
            self.rebuild_all(&keys);
        }
    }

    fn demote_bucket(&mut self, b: usize) {
        if let Bucket::Normal { n, vm, spill } = &self.buckets[b] {
            let enc = BucketEncoding { bits: vm.bits().clone(), spill: *spill, n: *n };
            let pairs = decode_bucket(&self.cfg, &self.seeds, &self.sizes, &mut self.caches, b, &enc);
            self.buckets[b] = Bucket::Fail { pairs };
        }
    }

    /// Every stored key, sorted.
    pub fn all_keys(&mut self) -> Vec<u128> {
        if let Some(keys) = &self.global_fail {
            return keys.clone();
        }
        let mut out = Vec::with_capacity(self.count);
        for b in 0..self.buckets.len() {
            match &self.buckets[b] {
                Bucket::Fail { pairs } => {
                    for &(xid, q) in pairs {
                        out.push(unhash_key(&self.cfg, &self.seeds, b, xid, q));
                    }
                }
                Bucket::Normal { n, vm, spill } => {
                    let enc = BucketEncoding { bits: vm.bits().clone(), spill: *spill, n: *n };
                    for (xid, q) in
                        decode_bucket(&self.cfg, &self.seeds, &self.sizes, &mut self.caches, b, &enc)
                    {
                        out.push(unhash_key(&self.cfg, &self.seeds, b, xid, q));
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    pub fn query(&mut self, x: u128) -> Result<bool, TreeError> {
        if x >= self.cfg.universe() {
            return Err(TreeError::KeyRange(x as u64));
        }
        Ok(self.query_profiled(x)?.0)
    }

    /// Query plus the physical access profile (for instrumentation tests).
    pub fn query_profiled(&mut self, x: u128) -> Result<(bool, AccessProfile), TreeError> {
        if let Some(keys) = &self.global_fail {
            return Ok((keys.binary_search(&x).is_ok(), AccessProfile::default()));
        }
        let (b, xid, q) = hash_key(&self.cfg, &self.seeds, x)?;
        if let Bucket::Fail { pairs } = &self.buckets[b] {
            return Ok((pairs.binary_search(&(xid, q)).is_ok(), AccessProfile::default()));
        }
        let (found, profile) = self.walk_query(b, xid, q);
        Ok((found, profile))
    }

    pub fn insert(&mut self, x: u128) -> Result<OpReport, TreeError> {
        if x >= self.cfg.universe() {
            return Err(TreeError::KeyRange(x as u64));
        }
        if self.query(x)? {
            return Err(TreeError::Duplicate(x as u64));
        }
        let mut report = OpReport::default();
        if let Some(keys) = &mut self.global_fail {
            let pos = keys.binary_search(&x).unwrap_err();
            keys.insert(pos, x);
            self.count += 1;
            report.rebuilt = true;
            self.global_recheck();
            return Ok(report);
        }
        let (b, xid, q) = hash_key(&self.cfg, &self.seeds, x)?;
        if let Bucket::Fail { pairs } = &mut self.buckets[b] {
            let pos = pairs.binary_search(&(xid, q)).unwrap_err();
            pairs.insert(pos, (xid, q));
            self.count += 1;
            report.rebuilt = true;
            self.recheck_bucket(b);
            return Ok(report);
        }
        let n = match &self.buckets[b] {
            Bucket::Normal { n, .. } => *n,
            Bucket::Fail { .. } => unreachable!(),
        };
        if n + 1 > self.cfg.root_hi {
            // bucket overflow: top-level structure failure
            self.count += 1;
            self.handle_root_bounds(b, x, true);
            report.rebuilt = true;
        } else {
            match self.walk_insert(b, xid, q, &mut report) {
                Ok(()) => {
                    self.count += 1;
                }
                Err(_) => {
                    // leaf overflow or ID collision under the fixed hashes:
                    // transition per policy
                    self.count += 1;
                    self.fail_transition(b, Some((xid, q)), None);
                    report.rebuilt = true;
                }
            }
        }
        Ok(report)
    }

    pub fn delete(&mut self, x: u128) -> Result<OpReport, TreeError> {
        if x >= self.cfg.universe() {
            return Err(TreeError::KeyRange(x as u64));
        }
        if !self.query(x)? {
            return Err(TreeError::Missing(x as u64));
        }
        let mut report = OpReport::default();
        if let Some(keys) = &mut self.global_fail {
            let pos = keys.binary_search(&x).unwrap();
            keys.remove(pos);
            self.count -= 1;
            report.rebuilt = true;
            self.global_recheck();
            return Ok(report);
        }
        let (b, xid, q) = hash_key(&self.cfg, &self.seeds, x)?;
        if let Bucket::Fail { pairs } = &mut self.buckets[b] {
            let pos = pairs.binary_search(&(xid, q)).unwrap();
            pairs.remove(pos);
            self.count -= 1;
            report.rebuilt = true;
            self.recheck_bucket(b);
            return Ok(report);
        }
        let n = match &self.buckets[b] {
            Bucket::Normal { n, .. } => *n,
            Bucket::Fail { .. } => unreachable!(),
        };
        if n - 1 < self.cfg.root_lo {
            self.count -= 1;
            self.handle_root_bounds(b, x, false);
            report.rebuilt = true;
        } else {
            match self.walk_delete(b, xid, q, &mut report) {
                Ok(()) => {
                    self.count -= 1;
                }
                Err(_) => {
                    self.count -= 1;
                    self.fail_transition(b, None, Some((xid, q)));
                    report.rebuilt = true;
                }
            }
        }
        Ok(report)
    }

    /// Root-count bound violation: the top-level distributor can no longer
    /// place this set. Strict mode moves the whole dictionary to fail mode;
    /// rebuild mode resamples the distributor and rebuilds everything.
    fn handle_root_bounds(&mut self, _b: usize, x: u128, insert: bool) {
        let mut keys = self.all_keys();
        if insert {
            let pos = keys.binary_search(&x).unwrap_err();
            keys.insert(pos, x);
        } else {
            let pos = keys.binary_search(&x).unwrap();
            keys.remove(pos);
        }
        match self.cfg.mode {
            HistoryMode::Strict => {
                self.global_fail = Some(keys);
            }
            HistoryMode::Rebuild => {
                self.rebuild_all(&keys);
            }
        }
    }

    /// Leaf-level failure during an op: apply the pending change in fail
    /// representation, then retry encodability per policy.
    fn fail_transition(&mut self, b: usize, add: Option<(u64, u64)>, del: Option<(u64, u64)>) {
        self.demote_bucket(b);
        if let Bucket::Fail { pairs } = &mut self.buckets[b] {
            if let Some(p) = add {
                let pos = pairs.binary_search(&p).unwrap_err();
                pairs.insert(pos, p);
            }
            if let Some(p) = del {
                let pos = pairs.binary_search(&p).unwrap();
                pairs.remove(pos);
            }
        }
        self.recheck_bucket(b);
    }

    /// Canonical image of a bucket: mode flag, count, and either the VM
    /// bits plus spill, or the lexicographic rank of the stored pairs.
    pub fn bucket_image(&self, b: usize) -> BucketImage {
        match &self.buckets[b] {
            Bucket::Normal { n, vm, spill } => BucketImage {
                mode: TreeMode::Normal,
                n: *n,
                bits: vm.bits().clone(),
                spill: *spill,
            },
            Bucket::Fail { pairs } => {
                let u1 = self.cfg.node_universe(1);
                let flat: Vec<u64> = pairs
                    .iter()
                    .map(|&(xid, q)| xid * self.cfg.q + q)
                    .collect();
                debug_assert!(flat.iter().all(|&f| (f as u128) < u1));
                let rank = rankset::rank_set(u1 as u64, &flat).expect("valid set");
                let body = rankset::encoded_body_bits(u1 as u64, flat.len() as u64);
                BucketImage {
                    mode: TreeMode::Fail,
                    n: pairs.len(),
                    bits: biguint_to_bits(&rank, body),
                    spill: 0,
                }
            }
        }
    }

    /// Full-dictionary canonical dump, usable for byte-identical replay.
    pub fn image_dump(&self) -> String {
        let mut out = String::new();
        if let Some(keys) = &self.global_fail {
            out.push_str(&format!("GLOBALFAIL {}\n", keys.len()));
            for k in keys {
                out.push_str(&format!("KEY {k}\n"));
            }
            return out;
        }
        for b in 0..self.buckets.len() {
            let img = self.bucket_image(b);
            out.push_str(&format!(
                "BUCKET {b} {} {} SPILL {} {}\n",
                match img.mode {
                    TreeMode::Normal => "normal",
                    TreeMode::Fail => "fail",
                },
                img.n,
                img.spill,
                img.bits.to_bit_string()
            ));
        }
        out
    }

    /// Per-node audit rows: (level, n, M, K, slack_bits, bound_ok).
    pub fn audit(&mut self) -> Vec<(usize, usize, usize, u64, f64, bool)> {
        let mut rows = Vec::new();
        for b in 0..self.buckets.len() {
            if let Bucket::Normal { n, vm, spill } = &self.buckets[b] {
                let enc = BucketEncoding { bits: vm.bits().clone(), spill: *spill, n: *n };
                let cfg = self.cfg.clone();
                audit_node(
                    &cfg,
                    &self.seeds,
                    &self.sizes,
                    &mut self.caches,
                    1,
                    &enc.bits,
                    enc.spill,
                    enc.n,
                    &mut rows,
                );
            }
        }
        rows
    }
}

#[allow(clippy::too_many_arguments)]
fn audit_node(
    cfg: &TreeConfig,
    seeds: &TreeSeeds,
    sizes: &SizeTables,
    caches: &mut LevelCaches,
    level: usize,
    bits: &BitBuf,
    spill: u64,
    n: usize,
    rows: &mut Vec<(usize, usize, usize, u64, f64, bool)>,
) {
    let size = sizes.node_size(level, n);
    assert_eq!(bits.len(), size.m, "image length matches the size function");
    assert!(spill < size.k);
    rows.push((
        level,
        n,
        size.m,
        size.k,
        sizes.bound_slack_bits(level, n),
        sizes.check_bounds(level, n),
    ));
    if level == cfg.d {
        return;
    }
    let (n_vec, k_vec, child_bits) = super::encode::disassemble_node(
        cfg, seeds, sizes, caches, level, bits, spill, n,
    );
    for c in 0..cfg.b {
        audit_node(
            cfg,
            seeds,
            sizes,
            caches,
            level + 1,
            &child_bits[c],
            k_vec[c],
            n_vec[c],
            rows,
        );
    }
}

// ---------------------------------------------------------------------------
// Incremental path machinery
// ---------------------------------------------------------------------------

/// Decoded state of one inner path node during an operation.
struct LevelCtx {
    /// 1-based level of this node.
    level: usize,
    n: usize,
    n_vec: Vec<usize>,
    k_vec: Vec<u64>,
    /// Tape lengths: l_word[0] is the bit VM's word count, l_word[1..=B]
    /// the children's word tapes; l_bit[c] the children's bit tapes.
    l_word: Vec<usize>,
    l_bit: Vec<usize>,
    /// Frozen cut position (until this node's re-encode).
    m_fix: usize,
    /// Live concatenated length (changes with child resizes).
    m_cat_len: usize,
    /// Live m_rem contents: m_cat positions [m_fix, m_cat_len).
    rem_cache: BitBuf,
}

struct OpCtx<'a> {
    cfg: &'a TreeConfig,
    seeds: &'a TreeSeeds,
    sizes: &'a SizeTables,
    caches: &'a mut LevelCaches,
    vm: &'a mut VirtualMemory,
    root_reads: u64,
    root_writes: u64,
    levels: Vec<LevelCtx>,
    /// 0-based child index at each inner level along the path.
    child_path: Vec<usize>,
}

/// Physical location of one node-VM bit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Loc {
    Root(usize),
    /// (level ctx index, offset into rem_cache)
    Rem(usize, usize),
}

impl<'a> OpCtx<'a> {
    /// Current VM length of path node j.
    fn node_m(&self, j: usize) -> usize {
        if j == 0 {
            self.vm.len_bits()
        } else {
            let p = &self.levels[j - 1];
            let c = self.child_path[j - 1];
            self.cfg.w as usize * p.l_word[c + 1] + p.l_bit[c]
        }
    }

    fn swap_seed_for(&self, j: usize) -> crate::bitmem::SwapSeed {
        self.seeds.swap_seed(self.cfg, j + 1)
    }

    /// Maps node-j VM bit p to its physical location.
    fn locate(&mut self, j: usize, mut p: usize) -> Loc {
        let w = self.cfg.w as usize;
        let mut jj = j;
        while jj >= 1 {
            let m_child = self.node_m(jj);
            let seed = self.swap_seed_for(jj);
            let layout = SwapLayout::new(&seed, m_child).expect("layout");
            let c = self.child_path[jj - 1];
            let pcat = {
                let ctx = &self.levels[jj - 1];
                match layout.loc(p) {
                    WvmLoc::Word(widx, off) => {
                        let word_ad = self.word_adapter(jj - 1);
                        let t = word_ad
                            .resolve(&mut self.caches.word[ctx.level], c + 1, widx as u64)
                            .unwrap() as usize;
                        (t - 1) * w + off
                    }
                    WvmLoc::Bit(bidx) => {
                        let bit_ad = self.bit_adapter(jj - 1);
                        let q = bit_ad
                            .resolve(&mut self.caches.bit[ctx.level], c, bidx as u64)
                            .unwrap() as usize
                            - 1;
                        let ctx = &self.levels[jj - 1];
                        let bw = ctx.l_word[0];
                        if q < bw * w {
                            let word_ad = self.word_adapter(jj - 1);
                            let t = word_ad
                                .resolve(
                                    &mut self.caches.word[self.levels[jj - 1].level],
                                    0,
                                    (q / w + 1) as u64,
                                )
                                .unwrap() as usize;
                            (t - 1) * w + q % w
                        } else {
                            let w_cat: usize = self.levels[jj - 1].l_word.iter().sum();
                            w_cat * w + (q - bw * w)
                        }
                    }
                }
            };
            let ctx = &self.levels[jj - 1];
            if pcat < ctx.m_fix.min(ctx.m_cat_len) {
                p = pcat;
                jj -= 1;
            } else {
                debug_assert!(pcat >= ctx.m_fix && pcat < ctx.m_cat_len);
                return Loc::Rem(jj - 1, pcat - ctx.m_fix);
            }
        }
        Loc::Root(p)
    }

    fn word_adapter(&self, ctx_idx: usize) -> crate::adapter::AdapterState {
        let ctx = &self.levels[ctx_idx];
        let (word_ad, _) = node_adapters(
            self.cfg,
            self.seeds,
            ctx.level,
            &ctx.l_word[1..].iter().copied().collect::<Vec<_>>(),
            &ctx.l_bit,
        );
        debug_assert_eq!(word_ad.lengths[0] as usize, ctx.l_word[0]);
        word_ad
    }

    fn bit_adapter(&self, ctx_idx: usize) -> crate::adapter::AdapterState {
        let ctx = &self.levels[ctx_idx];
        let (_, bit_ad) = node_adapters(
            self.cfg,
            self.seeds,
            ctx.level,
            &ctx.l_word[1..].iter().copied().collect::<Vec<_>>(),
            &ctx.l_bit,
        );
        bit_ad
    }

    /// Reads node-j VM bits [pos, pos+len), coalescing root word accesses.
    fn read_node_bits(&mut self, j: usize, pos: usize, len: usize) -> BitBuf {
        let w = self.cfg.w as usize;
        let mut out = BitBuf::zeros(len);
        let mut cache: Option<(usize, u128)> = None;
        for i in 0..len {
            let bit = match self.locate(j, pos + i) {
                Loc::Root(p) => {
                    let widx = p / w;
                    if widx < self.vm.words() {
                        let v = match cache {
                            Some((ci, cv)) if ci == widx => cv,
                            _ => {
                                self.root_reads += 1;
                                let v = self.vm.read_word(widx + 1);
                                cache = Some((widx, v));
                                v
                            }
                        };
                        v >> (p % w) & 1 == 1
                    } else {
                        self.root_reads += 1;
                        let (t, _) = self.vm.read_tail();
                        t >> (p - self.vm.words() * w) & 1 == 1
                    }
                }
                Loc::Rem(ci, off) => self.levels[ci].rem_cache.get(off),
            };
            out.set(i, bit);
        }
        out
    }

    fn write_node_bits(&mut self, j: usize, pos: usize, data: &BitBuf) {
        let w = self.cfg.w as usize;
        // collect destinations, then write with per-word read-modify-write
        let mut word_groups: Vec<(usize, u128, u128)> = Vec::new();
        let mut tail_group: Option<(u128, u128)> = None;
        for i in 0..data.len() {
            let bit = data.get(i);
            match self.locate(j, pos + i) {
                Loc::Root(p) => {
                    let widx = p / w;
                    if widx < self.vm.words() {
                        let off = p % w;
                        let g = match word_groups.iter_mut().find(|g| g.0 == widx) {
                            Some(g) => g,
                            None => {
                                word_groups.push((widx, 0, 0));
                                word_groups.last_mut().unwrap()
                            }
                        };
                        g.1 |= 1 << off;
                        if bit {
                            g.2 |= 1 << off;
                        }
                    } else {
                        let off = p - self.vm.words() * w;
                        let g = tail_group.get_or_insert((0, 0));
                        g.0 |= 1 << off;
                        if bit {
                            g.1 |= 1 << off;
                        }
                    }
                }
                Loc::Rem(ci, off) => {
                    self.levels[ci].rem_cache.set(off, bit);
                }
            }
        }
        for (widx, mask, val) in word_groups {
            let full = w == 128 && mask == u128::MAX || w < 128 && mask == (1u128 << w) - 1;
            let cur = if full {
                0
            } else {
                self.root_reads += 1;
                self.vm.read_word(widx + 1)
            };
            self.root_writes += 1;
            self.vm.write_word(widx + 1, (cur & !mask) | val);
        }
        if let Some((mask, val)) = tail_group {
            self.root_reads += 1;
            let (t, _) = self.vm.read_tail();
            self.root_writes += 1;
            self.vm.write_tail((t & !mask) | val);
        }
    }

    /// m_cat accessor for the node described by levels[ci].
    fn read_cat_bits(&mut self, ci: usize, pos: usize, len: usize) -> BitBuf {
        let mut out = BitBuf::zeros(len);
        let boundary = self.levels[ci].m_fix.min(self.levels[ci].m_cat_len);
        let mut i = 0;
        while i < len {
            let p = pos + i;
            if p < boundary {
                let run = (boundary - p).min(len - i);
                let chunk = self.read_node_bits(ci, p, run);
                out.copy_from(i, &chunk, 0, run);
                i += run;
            } else {
                let off = p - self.levels[ci].m_fix;
                out.set(i, self.levels[ci].rem_cache.get(off));
                i += 1;
            }
        }
        out
    }

    fn write_cat_bits(&mut self, ci: usize, pos: usize, data: &BitBuf) {
        let boundary = self.levels[ci].m_fix.min(self.levels[ci].m_cat_len);
        let mut i = 0;
        while i < data.len() {
            let p = pos + i;
            if p < boundary {
                let run = (boundary - p).min(data.len() - i);
                let chunk = data.slice(i, run);
                self.write_node_bits(ci, p, &chunk);
                i += run;
            } else {
                let off = p - self.levels[ci].m_fix;
                self.levels[ci].rem_cache.set(off, data.get(i));
                i += 1;
            }
        }
    }

    /// Grows or shrinks m_cat of levels[ci] by `delta` trailing bits.
    fn resize_cat(&mut self, ci: usize, delta: i64) {
        let ctx = &mut self.levels[ci];
        let old_len = ctx.m_cat_len;
        let new_len = (old_len as i64 + delta) as usize;
        ctx.m_cat_len = new_len;
        if new_len > old_len {
            // fresh positions: rem-cache part grows zeroed; physical part
            // (below m_fix) is zeroed explicitly
            let new_rem = new_len.saturating_sub(ctx.m_fix);
            let old_rem = ctx.rem_cache.len();
            if new_rem > old_rem {
                ctx.rem_cache.grow(new_rem - old_rem);
            }
            let phys_lo = old_len.min(ctx.m_fix);
            let phys_hi = new_len.min(ctx.m_fix);
            if phys_hi > phys_lo {
                let zeros = BitBuf::zeros(phys_hi - phys_lo);
                self.write_node_bits(ci, phys_lo, &zeros);
            }
        } else {
            let new_rem = new_len.saturating_sub(ctx.m_fix);
            let old_rem = ctx.rem_cache.len();
            if old_rem > new_rem {
                ctx.rem_cache.shrink(old_rem - new_rem);
            }
            // vacated physical positions become padding zeros
            let phys_lo = new_len.min(ctx.m_fix);
            let phys_hi = old_len.min(ctx.m_fix);
            if phys_hi > phys_lo {
                let zeros = BitBuf::zeros(phys_hi - phys_lo);
                self.write_node_bits(ci, phys_lo, &zeros);
            }
        }
    }

    /// Word-tape resize for child c of levels[ci]: the word adapter and
    /// m_cat layout change; the bit-VM tail shifts by one word.
    fn tape_resize_word(&mut self, ci: usize, c: usize, grow: bool) {
        let w = self.cfg.w as usize;
        let level = self.levels[ci].level;
        let word_ad = self.word_adapter(ci);
        let (new_ad, moves) = word_ad
            .resize(&mut self.caches.word[level], c + 1, if grow { 1 } else { -1 })
            .unwrap();
        let w_cat_old: usize = self.levels[ci].l_word.iter().sum();
        let bit_total: usize = self.levels[ci].l_bit.iter().sum();
        let tail_len = bit_total - self.levels[ci].l_word[0] * w;
        // read moved words and the bit-VM tail at old coordinates
        let moved: Vec<(u64, BitBuf)> = moves
            .iter()
            .map(|&(from, to)| {
                let v = self.read_cat_bits(ci, (from as usize - 1) * w, w);
                (to, v)
            })
            .collect();
        let tail = self.read_cat_bits(ci, w_cat_old * w, tail_len);
        let dying = if !grow {
            None // dropped cell content disappears with the length change
        } else {
            None
        };
        let _ = dying;
        self.resize_cat(ci, if grow { w as i64 } else { -(w as i64) });
        self.levels[ci].l_word[c + 1] = (new_ad.lengths[c + 1]) as usize;
        let w_cat_new: usize = self.levels[ci].l_word.iter().sum();
        if grow {
            // zero the fresh cell before any mover lands on it
            let t_new = new_ad.lengths[c + 1];
            let fresh = self
                .word_adapter(ci)
                .resolve(&mut self.caches.word[level], c + 1, t_new)
                .unwrap() as usize;
            let zeros = BitBuf::zeros(w);
            self.write_cat_bits(ci, (fresh - 1) * w, &zeros);
        }
        for (to, v) in moved {
            self.write_cat_bits(ci, (to as usize - 1) * w, &v);
        }
        self.write_cat_bits(ci, w_cat_new * w, &tail);
    }

    /// Bit-tape resize for child c of levels[ci].
    fn tape_resize_bit(&mut self, ci: usize, c: usize, grow: bool) {
        let w = self.cfg.w as usize;
        let level = self.levels[ci].level;
        let bit_total_old: usize = self.levels[ci].l_bit.iter().sum();
        let bw_old = self.levels[ci].l_word[0];
        debug_assert_eq!(bw_old, bit_total_old / w);
        let bit_total_new = if grow { bit_total_old + 1 } else { bit_total_old - 1 };
        let bw_new = bit_total_new / w;

        // materialize the whole bit VM at old coordinates (small)
        let mut bit_vm = BitBuf::zeros(bit_total_old);
        {
            let w_cat_old: usize = self.levels[ci].l_word.iter().sum();
            let tail_len = bit_total_old - bw_old * w;
            let tail = self.read_cat_bits(ci, w_cat_old * w, tail_len);
            bit_vm.copy_from(bw_old * w, &tail, 0, tail_len);
            for jw in 1..=bw_old {
                let t = self
                    .word_adapter(ci)
                    .resolve(&mut self.caches.word[level], 0, jw as u64)
                    .unwrap() as usize;
                let word = self.read_cat_bits(ci, (t - 1) * w, w);
                bit_vm.copy_from((jw - 1) * w, &word, 0, w);
            }
        }
        // apply the bit-adapter move list to the materialized buffer
        let bit_ad = self.bit_adapter(ci);
        let (new_bit_ad, moves) = bit_ad
            .resize(&mut self.caches.bit[level], c, if grow { 1 } else { -1 })
            .unwrap();
        let mut new_bit_vm = BitBuf::zeros(bit_total_new);
        new_bit_vm.copy_from(0, &bit_vm, 0, bit_total_new.min(bit_total_old));
        for &(from, to) in &moves {
            new_bit_vm.set(to as usize - 1, bit_vm.get(from as usize - 1));
        }
        if grow {
            let fresh = new_bit_ad
                .resolve(&mut self.caches.bit[level], c, new_bit_ad.lengths[c])
                .unwrap() as usize;
            new_bit_vm.set(fresh - 1, false);
        }
        self.levels[ci].l_bit[c] = new_bit_ad.lengths[c] as usize;

        if bw_new != bw_old {
            // the bit VM gains/loses a complete word: word adapter resize
            // on sub-VM 0 plus a relayout of the whole (small) bit VM
            let word_ad = self.word_adapter(ci);
            debug_assert_eq!(word_ad.lengths[0] as usize, bw_old);
            let (new_word_ad, wmoves) = word_ad
                .resize(&mut self.caches.word[level], 0, if grow { 1 } else { -1 })
                .unwrap();
            let moved: Vec<(u64, BitBuf)> = wmoves
                .iter()
                .map(|&(from, to)| (to, self.read_cat_bits(ci, (from as usize - 1) * w, w)))
                .collect();
            self.resize_cat(ci, if grow { 1 } else { -1 });
            self.levels[ci].l_word[0] = bw_new;
            let w_cat_new: usize = self.levels[ci].l_word.iter().sum();
            for (to, v) in moved {
                self.write_cat_bits(ci, (to as usize - 1) * w, &v);
            }
            // rewrite the full bit VM through the new mapping
            for jw in 1..=bw_new {
                let t = new_word_ad
                    .resolve(&mut self.caches.word[level], 0, jw as u64)
                    .unwrap() as usize;
                let chunk = new_bit_vm.slice((jw - 1) * w, w);
                self.write_cat_bits(ci, (t - 1) * w, &chunk);
            }
            let tail_len = bit_total_new - bw_new * w;
            let tail = new_bit_vm.slice(bw_new * w, tail_len);
            self.write_cat_bits(ci, w_cat_new * w, &tail);
        } else {
            // common case: adjust only the moved bits and the tail length
            self.resize_cat(ci, if grow { 1 } else { -1 });
            let w_cat: usize = self.levels[ci].l_word.iter().sum();
            let tail_len = bit_total_new - bw_new * w;
            // tail region content may shift by one position; rewrite it
            let tail = new_bit_vm.slice(bw_new * w, tail_len);
            self.write_cat_bits(ci, w_cat * w, &tail);
            // moved bits inside the word region
            for &(from, to) in &moves {
                let (fp, tp) = (from as usize - 1, to as usize - 1);
                if tp < bw_new * w {
                    let t = self
                        .word_adapter(ci)
                        .resolve(&mut self.caches.word[level], 0, (tp / w + 1) as u64)
                        .unwrap() as usize;
                    let mut bitbuf = BitBuf::zeros(1);
                    bitbuf.set(0, new_bit_vm.get(tp));
                    self.write_cat_bits(ci, (t - 1) * w + tp % w, &bitbuf);
                }
                let _ = fp;
            }
            if grow {
                let fresh = new_bit_ad
                    .resolve(&mut self.caches.bit[level], c, new_bit_ad.lengths[c])
                    .unwrap() as usize
                    - 1;
                if fresh < bw_new * w {
                    let t = self
                        .word_adapter(ci)
                        .resolve(&mut self.caches.word[level], 0, (fresh / w + 1) as u64)
                        .unwrap() as usize;
                    let mut bitbuf = BitBuf::zeros(1);
                    bitbuf.set(0, false);
                    self.write_cat_bits(ci, (t - 1) * w + fresh % w, &bitbuf);
                }
            }
        }
    }

    /// VM alloc/release on path node j, translated through its swap layout
    /// into tape operations on the parent.
    fn node_resize(&mut self, j: usize, amount: usize, grow: bool) {
        let w = self.cfg.w as usize;
        debug_assert!(amount == 1 || amount == w);
        if j == 0 {
            if grow {
                self.vm.vm_alloc(amount).expect("root alloc");
            } else {
                self.vm.vm_release(amount).expect("root release");
            }
            return;
        }
        let seed = self.swap_seed_for(j);
        let m_old = self.node_m(j);
        let m_new = if grow { m_old + amount } else { m_old - amount };
        let old = SwapLayout::new(&seed, m_old).expect("old layout");
        let new = SwapLayout::new(&seed, m_new).expect("new layout");

        let mut cand: Vec<(usize, usize)> = old.swap_blocks();
        cand.extend(new.swap_blocks());
        cand.push((m_old.min(m_new), m_old.max(m_new) - m_old.min(m_new)));
        let keep = m_old.min(m_new);
        let mut positions: Vec<usize> = cand
            .iter()
            .flat_map(|&(p, len)| p..p + len)
            .filter(|&p| p < keep)
            .collect();
        positions.sort_unstable();
        positions.dedup();
        positions.retain(|&p| old.loc(p) != new.loc(p));

        // read phase through the old tape mapping
        let saved: Vec<(usize, bool)> = positions
            .iter()
            .map(|&p| (p, self.tape_read_bit(j, &old, p)))
            .collect();

        // resize tapes at the parent
        let ci = j - 1;
        let c = self.child_path[ci];
        while self.levels[ci].l_word[c + 1] < new.l_word {
            self.tape_resize_word(ci, c, true);
        }
        while self.levels[ci].l_word[c + 1] > new.l_word {
            self.tape_resize_word(ci, c, false);
        }
        while self.levels[ci].l_bit[c] < new.l_bit {
            self.tape_resize_bit(ci, c, true);
        }
        while self.levels[ci].l_bit[c] > new.l_bit {
            self.tape_resize_bit(ci, c, false);
        }

        // write phase through the new mapping
        for (p, bit) in saved {
            self.tape_write_bit(j, &new, p, bit);
        }
        if grow {
            for p in m_old..m_new {
                self.tape_write_bit(j, &new, p, false);
            }
        }
    }

    /// Reads one bit of node j's VM under an explicit swap layout (used
    /// mid-resize when the live layout is in flux).
    fn tape_read_bit(&mut self, j: usize, layout: &SwapLayout, p: usize) -> bool {
        let w = self.cfg.w as usize;
        let ci = j - 1;
        let c = self.child_path[ci];
        let level = self.levels[ci].level;
        match layout.loc(p) {
            WvmLoc::Word(widx, off) => {
                let t = self
                    .word_adapter(ci)
                    .resolve(&mut self.caches.word[level], c + 1, widx as u64)
                    .unwrap() as usize;
                self.read_cat_bits(ci, (t - 1) * w + off, 1).get(0)
            }
            WvmLoc::Bit(bidx) => {
                let q = self
                    .bit_adapter(ci)
                    .resolve(&mut self.caches.bit[level], c, bidx as u64)
                    .unwrap() as usize
                    - 1;
                let bw = self.levels[ci].l_word[0];
                if q < bw * w {
                    let t = self
                        .word_adapter(ci)
                        .resolve(&mut self.caches.word[level], 0, (q / w + 1) as u64)
                        .unwrap() as usize;
                    self.read_cat_bits(ci, (t - 1) * w + q % w, 1).get(0)
                } else {
                    let w_cat: usize = self.levels[ci].l_word.iter().sum();
                    self.read_cat_bits(ci, w_cat * w + (q - bw * w), 1).get(0)
                }
            }
        }
    }

    fn tape_write_bit(&mut self, j: usize, layout: &SwapLayout, p: usize, bit: bool) {
        let w = self.cfg.w as usize;
        let ci = j - 1;
        let c = self.child_path[ci];
        let level = self.levels[ci].level;
        let mut one = BitBuf::zeros(1);
        one.set(0, bit);
        match layout.loc(p) {
            WvmLoc::Word(widx, off) => {
                let t = self
                    .word_adapter(ci)
                    .resolve(&mut self.caches.word[level], c + 1, widx as u64)
                    .unwrap() as usize;
                self.write_cat_bits(ci, (t - 1) * w + off, &one);
            }
            WvmLoc::Bit(bidx) => {
                let q = self
                    .bit_adapter(ci)
                    .resolve(&mut self.caches.bit[level], c, bidx as u64)
                    .unwrap() as usize
                    - 1;
                let bw = self.levels[ci].l_word[0];
                if q < bw * w {
                    let t = self
                        .word_adapter(ci)
                        .resolve(&mut self.caches.word[level], 0, (q / w + 1) as u64)
                        .unwrap() as usize;
                    self.write_cat_bits(ci, (t - 1) * w + q % w, &one);
                } else {
                    let w_cat: usize = self.levels[ci].l_word.iter().sum();
                    self.write_cat_bits(ci, w_cat * w + (q - bw * w), &one);
                }
            }
        }
    }

    /// Decodes the metadata of path node j (level j+1) and pushes its ctx.
    fn push_level(&mut self, j: usize, n: usize, spill: u64) {
        let level = j + 1;
        let size = self.sizes.node_size(level, n);
        let meta = self.read_node_bits(j, size.m_fix, size.m_star);
        let z = (BigUint::from(spill) << size.m_star) + bits_to_biguint(&meta);
        let (n_vec, m_rem_val, k_vec) = self.sizes.unrank_meta(level, n, &z);
        let (m_cat_len, m_rem_len) = self.sizes.cat_rem(level, &n_vec);
        let rem_cache = biguint_to_bits(&m_rem_val, m_rem_len);
        let mut l_word = Vec::with_capacity(self.cfg.b + 1);
        let mut l_bit = Vec::with_capacity(self.cfg.b);
        let mut bit_total = 0usize;
        for &nc in &n_vec {
            let (lw, lb) = self.sizes.tapes(self.seeds, level + 1, nc);
            l_word.push(lw);
            l_bit.push(lb);
            bit_total += lb;
        }
        l_word.insert(0, bit_total / self.cfg.w as usize);
        self.levels.push(LevelCtx {
            level,
            n,
            n_vec,
            k_vec,
            l_word,
            l_bit,
            m_fix: size.m_fix,
            m_cat_len,
            rem_cache,
        });
    }

    /// Re-encodes path node j after its children changed: moves the cut,
    /// resizes the VM, rewrites metadata and padding. Returns the new spill
    /// and the size delta.
    fn reencode_level(&mut self, j: usize) -> (u64, i64) {
        let ctx_idx = j;
        let level = self.levels[ctx_idx].level;
        let n_new: usize = self.levels[ctx_idx].n_vec.iter().sum();
        let size_new = self.sizes.node_size(level, n_new);
        let m_old = self.node_m(j);
        let m_fix_old = self.levels[ctx_idx].m_fix;
        let m_cat_len = self.levels[ctx_idx].m_cat_len;
        // sanity: the live concatenation length equals the size tables' view
        debug_assert_eq!(
            m_cat_len,
            self.sizes.cat_rem(level, &self.levels[ctx_idx].n_vec).0
        );

        // materialize the boundary region [lo, m_cat_len) of m_cat before
        // any resizing: everything at or beyond the new or old cut
        let lo = m_fix_old.min(size_new.m_fix).min(m_cat_len);
        let boundary = self.read_cat_bits(ctx_idx, lo, m_cat_len - lo);

        // metadata rank under the new layout
        let rem_len = m_cat_len.saturating_sub(size_new.m_fix);
        let m_rem = if rem_len > 0 {
            boundary.slice(m_cat_len - rem_len - lo, rem_len)
        } else {
            BitBuf::new()
        };
        let n_vec = self.levels[ctx_idx].n_vec.clone();
        let k_vec = self.levels[ctx_idx].k_vec.clone();
        let z = self
            .sizes
            .rank_meta(level, &n_vec, &bits_to_biguint(&m_rem), &k_vec);
        let meta = biguint_to_bits(
            &(&z % (BigUint::from(1u32) << size_new.m_star)),
            size_new.m_star,
        );
        let spill = (&z >> size_new.m_star).to_u64().expect("spill fits");

        // resize this node's VM to the new total
        let m_new = size_new.m;
        let w = self.cfg.w as usize;
        let mut cur = m_old as i64;
        while cur + (w as i64) <= m_new as i64 {
            self.node_resize(j, w, true);
            cur += w as i64;
        }
        while cur - (w as i64) >= m_new as i64 {
            self.node_resize(j, w, false);
            cur -= w as i64;
        }
        while cur < m_new as i64 {
            self.node_resize(j, 1, true);
            cur += 1;
        }
        while cur > m_new as i64 {
            self.node_resize(j, 1, false);
            cur -= 1;
        }

        // assemble and write the whole region [lo, m_new): m_cat content up
        // to the new cut, zero padding to the cut, metadata, trailing pad
        let mut region = BitBuf::new();
        let cat_keep = m_cat_len.min(size_new.m_fix);
        if cat_keep > lo {
            let part = boundary.slice(0, cat_keep - lo);
            region.extend(&part);
        }
        region.grow(size_new.m_fix - cat_keep.max(lo));
        region.extend(&meta);
        region.grow(size_new.pad);
        debug_assert_eq!(lo + region.len(), m_new);

        // the new cut takes effect now: rem cache becomes the tail of m_cat
        {
            let ctx = &mut self.levels[ctx_idx];
            ctx.m_fix = size_new.m_fix;
            ctx.rem_cache = m_rem;
            ctx.n = n_new;
        }
        self.write_node_bits(j, lo, &region);
        (spill, m_new as i64 - m_old as i64)
    }
}

/// A VmSpace view of the leaf node's VM, routing everything through the
/// path context.
struct LeafVm<'c, 'a> {
    ctx: &'c mut OpCtx<'a>,
    j: usize,
}

impl VmSpace for LeafVm<'_, '_> {
    fn word_len(&self) -> u32 {
        self.ctx.cfg.w
    }

    fn len_bits(&self) -> usize {
        self.ctx.node_m(self.j)
    }

    fn read_word(&mut self, idx: usize) -> u128 {
        let w = self.ctx.cfg.w as usize;
        self.ctx
            .read_node_bits(self.j, (idx - 1) * w, w)
            .get_bits_u128(0, w)
    }

    fn write_word(&mut self, idx: usize, v: u128) {
        let w = self.ctx.cfg.w as usize;
        let buf = BitBuf::from_u128(v, w);
        self.ctx.write_node_bits(self.j, (idx - 1) * w, &buf);
    }

    fn read_tail(&mut self) -> (u128, usize) {
        let w = self.ctx.cfg.w as usize;
        let m = self.len_bits();
        let t = m % w;
        (
            self.ctx
                .read_node_bits(self.j, m - t, t)
                .get_bits_u128(0, t),
            t,
        )
    }

    fn write_tail(&mut self, v: u128) {
        let w = self.ctx.cfg.w as usize;
        let m = self.len_bits();
        let t = m % w;
        let buf = BitBuf::from_u128(v, t);
        self.ctx.write_node_bits(self.j, m - t, &buf);
    }

    fn alloc(&mut self, amount: usize) {
        self.ctx.node_resize(self.j, amount, true);
    }

    fn release(&mut self, amount: usize) {
        self.ctx.node_resize(self.j, amount, false);
    }
}

impl ATree {
    /// Builds the path context for (bucket, leaf), decoding every inner
    /// node's metadata top-down. Returns (leaf fill, leaf spill).
    fn open_path<'a>(
        cfg: &'a TreeConfig,
        seeds: &'a TreeSeeds,
        sizes: &'a SizeTables,
        caches: &'a mut LevelCaches,
        vm: &'a mut VirtualMemory,
        n_root: usize,
        spill_root: u64,
        leaf: usize,
    ) -> (OpCtx<'a>, usize, u64) {
        let child_path = path_children(cfg, leaf);
        let mut ctx = OpCtx {
            cfg,
            seeds,
            sizes,
            caches,
            vm,
            root_reads: 0,
            root_writes: 0,
            levels: Vec::new(),
            child_path,
        };
        let mut n = n_root;
        let mut spill = spill_root;
        for j in 0..cfg.d - 1 {
            ctx.push_level(j, n, spill);
            let c = ctx.child_path[j];
            n = ctx.levels[j].n_vec[c];
            spill = ctx.levels[j].k_vec[c];
        }
        (ctx, n, spill)
    }

    fn walk_query(&mut self, b: usize, xid: u64, q: u64) -> (bool, AccessProfile) {
        let (leaf, yid) = hash_leaf(&self.cfg, &self.seeds, b, xid);
        let Bucket::Normal { n, vm, spill } = &mut self.buckets[b] else {
            unreachable!()
        };
        let (mut ctx, fill, leaf_spill) = Self::open_path(
            &self.cfg,
            &self.seeds,
            &self.sizes,
            &mut self.caches,
            vm,
            *n,
            *spill,
            leaf,
        );
        let p = ctx.sizes.leaf_params();
        let mut leaf_vm = LeafVm { ctx: &mut ctx, j: self.cfg.d - 1 };
        let found = match minimap::query(&p, &mut leaf_vm, leaf_spill, fill, yid) {
            Some(stored_q) => stored_q == q,
            None => false,
        };
        let profile = AccessProfile {
            root_word_accesses: ctx.root_reads + ctx.root_writes,
            root_word_writes: ctx.root_writes,
        };
        debug_assert_eq!(ctx.root_writes, 0, "queries must not write");
        (found, profile)
    }

    fn walk_insert(
        &mut self,
        b: usize,
        xid: u64,
        q: u64,
        report: &mut OpReport,
    ) -> Result<(), EncodeFailure> {
        let (leaf, yid) = hash_leaf(&self.cfg, &self.seeds, b, xid);
        let d = self.cfg.d;
        let Bucket::Normal { n, vm, spill } = &mut self.buckets[b] else {
            unreachable!()
        };
        let (mut ctx, fill, leaf_spill) = Self::open_path(
            &self.cfg,
            &self.seeds,
            &self.sizes,
            &mut self.caches,
            vm,
            *n,
            *spill,
            leaf,
        );
        if fill + 1 > self.cfg.leaf_hi {
            return Err(EncodeFailure::LeafOverflow);
        }
        let p = ctx.sizes.leaf_params();
        let mut leaf_vm = LeafVm { ctx: &mut ctx, j: d - 1 };
        let m_leaf_before = leaf_vm.len_bits() as i64;
        let (new_leaf_spill, relocations) =
            match minimap::insert(&p, &mut leaf_vm, leaf_spill, fill, yid, q) {
                Ok(v) => v,
                Err(minimap::MinimapError::Duplicate(_)) => {
                    return Err(EncodeFailure::IdCollision)
                }
                Err(minimap::MinimapError::Full(_)) => return Err(EncodeFailure::LeafOverflow),
                Err(e) => panic!("unexpected leaf failure: {e}"),
            };
        report.leaf_relocations = relocations;
        let m_leaf_after = LeafVm { ctx: &mut ctx, j: d - 1 }.len_bits() as i64;
        report.size_deltas[report.size_delta_count] = m_leaf_after - m_leaf_before;
        report.size_delta_count += 1;

        // bubble the change up: counts, spills, re-encodes
        let mut child_spill = new_leaf_spill;
        for j in (0..d - 1).rev() {
            let c = ctx.child_path[j];
            ctx.levels[j].n_vec[c] += 1;
            ctx.levels[j].k_vec[c] = child_spill;
            let (sp, delta) = ctx.reencode_level(j);
            child_spill = sp;
            report.size_deltas[report.size_delta_count] = delta;
            report.size_delta_count += 1;
        }
        report.root_word_accesses = ctx.root_reads + ctx.root_writes;
        *n += 1;
        *spill = child_spill;
        Ok(())
    }

    fn walk_delete(
        &mut self,
        b: usize,
        xid: u64,
        q: u64,
        report: &mut OpReport,
    ) -> Result<(), EncodeFailure> {
        let (leaf, yid) = hash_leaf(&self.cfg, &self.seeds, b, xid);
        let d = self.cfg.d;
        let Bucket::Normal { n, vm, spill } = &mut self.buckets[b] else {
            unreachable!()
        };
        let (mut ctx, fill, leaf_spill) = Self::open_path(
            &self.cfg,
            &self.seeds,
            &self.sizes,
            &mut self.caches,
            vm,
            *n,
            *spill,
            leaf,
        );
        if fill == 0 || fill - 1 < self.cfg.leaf_lo {
            return Err(EncodeFailure::LeafUnderflow);
        }
        let p = ctx.sizes.leaf_params();
        let mut leaf_vm = LeafVm { ctx: &mut ctx, j: d - 1 };
        let m_leaf_before = leaf_vm.len_bits() as i64;
        let (stored_q, new_leaf_spill, relocations) =
            minimap::delete(&p, &mut leaf_vm, leaf_spill, fill, yid)
                .expect("presence checked by caller");
        debug_assert_eq!(stored_q, q);
        report.leaf_relocations = relocations;
        let m_leaf_after = LeafVm { ctx: &mut ctx, j: d - 1 }.len_bits() as i64;
        report.size_deltas[report.size_delta_count] = m_leaf_after - m_leaf_before;
        report.size_delta_count += 1;

        let mut child_spill = new_leaf_spill;
        for j in (0..d - 1).rev() {
            let c = ctx.child_path[j];
            ctx.levels[j].n_vec[c] -= 1;
            ctx.levels[j].k_vec[c] = child_spill;
            let (sp, delta) = ctx.reencode_level(j);
            child_spill = sp;
            report.size_deltas[report.size_delta_count] = delta;
            report.size_delta_count += 1;
        }
        report.root_word_accesses = ctx.root_reads + ctx.root_writes;
        *n -= 1;
        *spill = child_spill;
        Ok(())
    }
}
