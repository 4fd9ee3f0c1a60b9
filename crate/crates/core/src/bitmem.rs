//! Virtual memory (VM), weak virtual memory (WVM), and the random-swap
//! translation storing a word-dominant VM inside a WVM.
//!
//! A VM is a growable bit tape addressed as L = floor(M/w) complete words
//! plus a tail of M mod w bits; sizes change by exactly 1 or w bits. A WVM
//! has a word tape and a separately addressed bit tape of fewer than 2w
//! bits. The random swap exchanges the tail (and sometimes the last word)
//! with word prefixes at seeded positions, so that tail accesses almost
//! always land on the word tape.

use crate::bitbuf::BitBuf;
use crate::perm::Seed;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BitMemError {
    #[error("address {0} out of range (L = {1})")]
    OutOfRange(usize, usize),
    #[error("release of {0} bits underflows M = {1}")]
    Underflow(usize, usize),
    #[error("allocation amount {0} must be 1 or the word length {1}")]
    BadAmount(usize, u32),
    #[error("tail write supplies {0} bits, tail has {1}")]
    TailWidth(usize, usize),
    #[error("operation would violate word dominance at M = {0}")]
    WordDominance(usize),
    #[error("swap store requires 2w < M < N*w (M = {0})")]
    SwapRange(usize),
}

/// Word-or-tail address in a VM.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VmAddr {
    /// 1-based complete-word index.
    Word(usize),
    Tail,
}

/// Abstract VM interface: the minimap and the tree nodes operate over this,
/// so the same code runs on a flat buffer or through nested translations.
pub trait VmSpace {
    fn word_len(&self) -> u32;
    fn len_bits(&self) -> usize;
    fn read_word(&mut self, idx: usize) -> u128;
    fn write_word(&mut self, idx: usize, v: u128);
    /// Returns (value, width).
    fn read_tail(&mut self) -> (u128, usize);
    fn write_tail(&mut self, v: u128);
    fn alloc(&mut self, amount: usize);
    fn release(&mut self, amount: usize);

    fn words(&self) -> usize {
        self.len_bits() / self.word_len() as usize
    }

    fn tail_bits(&self) -> usize {
        self.len_bits() % self.word_len() as usize
    }

    /// Reads an arbitrary bit range through word/tail accesses.
    fn read_range(&mut self, pos: usize, len: usize) -> BitBuf {
        let w = self.word_len() as usize;
        assert!(pos + len <= self.len_bits());
        let mut out = BitBuf::zeros(len);
        let mut done = 0;
        while done < len {
            let p = pos + done;
            let widx = p / w;
            let off = p % w;
            let (chunk, avail) = if widx < self.words() {
                (self.read_word(widx + 1), w - off)
            } else {
                let (t, tl) = self.read_tail();
                (t, tl - off)
            };
            let take = avail.min(len - done);
            let v = chunk >> off & mask128(take);
            out.set_bits_u128(done, take, v);
            done += take;
        }
        out
    }

    /// Writes an arbitrary bit range through word/tail accesses
    /// (read-modify-write at the edges).
    fn write_range(&mut self, pos: usize, data: &BitBuf) {
        let w = self.word_len() as usize;
        let len = data.len();
        assert!(pos + len <= self.len_bits());
        let mut done = 0;
        while done < len {
            let p = pos + done;
            let widx = p / w;
            let off = p % w;
            let in_words = widx < self.words();
            let avail = if in_words {
                w - off
            } else {
                self.tail_bits() - off
            };
            let take = avail.min(len - done);
            let v = data.get_bits_u128(done, take);
            if in_words {
                let old = self.read_word(widx + 1);
                let nw = (old & !(mask128(take) << off)) | v << off;
                self.write_word(widx + 1, nw);
            } else {
                let (old, tl) = self.read_tail();
                let nw = (old & !(mask128(take) << off)) | v << off;
                let _ = tl;
                self.write_tail(nw);
            }
            done += take;
        }
    }
}

#[inline]
fn mask128(n: usize) -> u128 {
    if n >= 128 {
        u128::MAX
    } else {
        (1u128 << n) - 1
    }
}

/// A flat, single-owner virtual memory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VirtualMemory {
    w: u32,
    bits: BitBuf,
}

impl VirtualMemory {
    pub fn new(w: u32) -> Self {
        assert!((1..=128).contains(&w));
        VirtualMemory { w, bits: BitBuf::new() }
    }

    pub fn from_bits(w: u32, bits: BitBuf) -> Self {
        assert!((1..=128).contains(&w));
        VirtualMemory { w, bits }
    }

    pub fn bits(&self) -> &BitBuf {
        &self.bits
    }

    pub fn into_bits(self) -> BitBuf {
        self.bits
    }

    pub fn vm_read(&mut self, addr: VmAddr) -> Result<(u128, usize), BitMemError> {
        match addr {
            VmAddr::Word(i) => {
                if i == 0 || i > self.words() {
                    return Err(BitMemError::OutOfRange(i, self.words()));
                }
                Ok((self.read_word(i), self.w as usize))
            }
            VmAddr::Tail => {
                let (v, n) = self.read_tail();
                Ok((v, n))
            }
        }
    }

    pub fn vm_write(&mut self, addr: VmAddr, v: u128, width: usize) -> Result<(), BitMemError> {
        match addr {
            VmAddr::Word(i) => {
                if i == 0 || i > self.words() {
                    return Err(BitMemError::OutOfRange(i, self.words()));
                }
                if width != self.w as usize {
                    return Err(BitMemError::TailWidth(width, self.w as usize));
                }
                self.write_word(i, v);
                Ok(())
            }
            VmAddr::Tail => {
                if width != self.tail_bits() {
                    return Err(BitMemError::TailWidth(width, self.tail_bits()));
                }
                self.write_tail(v);
                Ok(())
            }
        }
    }

    pub fn vm_alloc(&mut self, amount: usize) -> Result<(), BitMemError> {
        if amount != 1 && amount != self.w as usize {
            return Err(BitMemError::BadAmount(amount, self.w));
        }
        self.alloc(amount);
        Ok(())
    }

    pub fn vm_release(&mut self, amount: usize) -> Result<(), BitMemError> {
        if amount != 1 && amount != self.w as usize {
            return Err(BitMemError::BadAmount(amount, self.w));
        }
        if amount > self.len_bits() {
            return Err(BitMemError::Underflow(amount, self.len_bits()));
        }
        self.release(amount);
        Ok(())
    }

    /// Debug dump: `WORD <idx> <hex>` lines then `TAIL <bitstring>`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let w = self.w as usize;
        for i in 0..self.words() {
            let v = self.bits.get_bits_u128(i * w, w);
            out.push_str(&format!("WORD {} {:x}\n", i + 1, v));
        }
        let t = self.bits.slice(self.words() * w, self.tail_bits());
        out.push_str(&format!("TAIL {}\n", t.to_bit_string()));
        out
    }
}

impl VmSpace for VirtualMemory {
    fn word_len(&self) -> u32 {
        self.w
    }

    fn len_bits(&self) -> usize {
        self.bits.len()
    }

    fn read_word(&mut self, idx: usize) -> u128 {
        let w = self.w as usize;
        assert!(idx >= 1 && idx <= self.bits.len() / w, "word {idx} out of range");
        self.bits.get_bits_u128((idx - 1) * w, w)
    }

    fn write_word(&mut self, idx: usize, v: u128) {
        let w = self.w as usize;
        assert!(idx >= 1 && idx <= self.bits.len() / w, "word {idx} out of range");
        self.bits.set_bits_u128((idx - 1) * w, w, v & mask128(w));
    }

    fn read_tail(&mut self) -> (u128, usize) {
        let w = self.w as usize;
        let l = self.bits.len() / w;
        let t = self.bits.len() - l * w;
        (self.bits.get_bits_u128(l * w, t), t)
    }

    fn write_tail(&mut self, v: u128) {
        let w = self.w as usize;
        let l = self.bits.len() / w;
        let t = self.bits.len() - l * w;
        self.bits.set_bits_u128(l * w, t, v & mask128(t));
    }

    fn alloc(&mut self, amount: usize) {
        debug_assert!(amount == 1 || amount == self.w as usize);
        self.bits.grow(amount);
    }

    fn release(&mut self, amount: usize) {
        debug_assert!(amount == 1 || amount == self.w as usize);
        assert!(amount <= self.bits.len(), "release underflow");
        self.bits.shrink(amount);
    }
}

/// Smallest positive n with `nw + 3n <= M <= nw + 10n`, if any.
pub fn word_dominant_witness(m: usize, w: u32) -> Option<u64> {
    if m == 0 {
        return None;
    }
    let w = w as u64;
    let m = m as u64;
    let lo = m.div_ceil(w + 10); // smallest n with n(w+10) >= M
    if lo >= 1 && lo * (w + 3) <= m && m <= lo * (w + 10) {
        Some(lo)
    } else {
        None
    }
}

/// Operation counters for a weak virtual memory.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct WvmStats {
    pub word_reads: u64,
    pub word_writes: u64,
    pub bit_reads: u64,
    pub bit_writes: u64,
    pub word_allocs: u64,
    pub word_releases: u64,
    pub bit_allocs: u64,
    pub bit_releases: u64,
}

impl WvmStats {
    pub fn word_accesses(&self) -> u64 {
        self.word_reads + self.word_writes
    }

    pub fn bit_accesses(&self) -> u64 {
        self.bit_reads + self.bit_writes
    }
}

/// Abstract WVM interface; implemented by [`Wvm`] directly and by the
/// adapter-backed tapes inside the tree dictionary.
pub trait WvmSpace {
    fn word_len(&self) -> u32;
    fn words(&self) -> usize;
    fn bits(&self) -> usize;
    fn read_word(&mut self, idx: usize) -> u128;
    fn write_word(&mut self, idx: usize, v: u128);
    fn read_bit(&mut self, idx: usize) -> bool;
    fn write_bit(&mut self, idx: usize, v: bool);
    fn alloc_word(&mut self);
    fn release_word(&mut self);
    fn alloc_bit(&mut self);
    fn release_bit(&mut self);
}

/// A concrete weak virtual memory: word tape plus bit tape.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Wvm {
    w: u32,
    pub word_tape: BitBuf,
    pub bit_tape: BitBuf,
    pub stats: WvmStats,
}

impl Wvm {
    pub fn new(w: u32) -> Self {
        Wvm {
            w,
            word_tape: BitBuf::new(),
            bit_tape: BitBuf::new(),
            stats: WvmStats::default(),
        }
    }

    pub fn reset_stats(&mut self) {
        self.stats = WvmStats::default();
    }

    /// `WORD <idx> <hex>` lines then `BIT <idx> <0|1>` lines.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let w = self.w as usize;
        for i in 0..self.word_tape.len() / w {
            out.push_str(&format!(
                "WORD {} {:x}\n",
                i + 1,
                self.word_tape.get_bits_u128(i * w, w)
            ));
        }
        for i in 0..self.bit_tape.len() {
            out.push_str(&format!("BIT {} {}\n", i + 1, u8::from(self.bit_tape.get(i))));
        }
        out
    }

    /// Equality of contents, ignoring the stats counters.
    pub fn same_image(&self, other: &Wvm) -> bool {
        self.w == other.w && self.word_tape == other.word_tape && self.bit_tape == other.bit_tape
    }
}

impl WvmSpace for Wvm {
    fn word_len(&self) -> u32 {
        self.w
    }

    fn words(&self) -> usize {
        self.word_tape.len() / self.w as usize
    }

    fn bits(&self) -> usize {
        self.bit_tape.len()
    }

    fn read_word(&mut self, idx: usize) -> u128 {
        let w = self.w as usize;
        assert!(idx >= 1 && idx <= self.words(), "WVM word {idx} out of range");
        self.stats.word_reads += 1;
        self.word_tape.get_bits_u128((idx - 1) * w, w)
    }

    fn write_word(&mut self, idx: usize, v: u128) {
        let w = self.w as usize;
        assert!(idx >= 1 && idx <= self.words(), "WVM word {idx} out of range");
        self.stats.word_writes += 1;
        self.word_tape.set_bits_u128((idx - 1) * w, w, v & mask128(w));
    }

    fn read_bit(&mut self, idx: usize) -> bool {
        assert!(idx >= 1 && idx <= self.bit_tape.len(), "WVM bit {idx} out of range");
        self.stats.bit_reads += 1;
        self.bit_tape.get(idx - 1)
    }

    fn write_bit(&mut self, idx: usize, v: bool) {
        assert!(idx >= 1 && idx <= self.bit_tape.len(), "WVM bit {idx} out of range");
        self.stats.bit_writes += 1;
        self.bit_tape.set(idx - 1, v);
    }

    fn alloc_word(&mut self) {
        self.stats.word_allocs += 1;
        self.word_tape.grow(self.w as usize);
    }

    fn release_word(&mut self) {
        self.stats.word_releases += 1;
        self.word_tape.shrink(self.w as usize);
    }

    fn alloc_bit(&mut self) {
        self.stats.bit_allocs += 1;
        assert!(self.bit_tape.len() + 1 < 2 * self.w as usize, "bit tape overflow");
        self.bit_tape.grow(1);
    }

    fn release_bit(&mut self) {
        self.stats.bit_releases += 1;
        self.bit_tape.shrink(1);
    }
}

/// The fixed random choices of the swap scheme. Sampled once; never changes
/// with the memory contents.
#[derive(Clone, Debug)]
pub struct SwapSeed {
    pub w: u32,
    pub max_words_log: u32,
    /// Few-word threshold, in `[ceil(w/20), floor(w/11))`.
    pub l_r: u64,
    /// `l_list[i] in [2^i, 2^(i+1))`.
    pub l_list: Vec<u64>,
    /// `s_list[i] in [1, l_list[i]]`.
    pub s_list: Vec<u64>,
    /// Short-tail threshold, in `[0, w-2]`.
    pub a: u64,
}

impl SwapSeed {
    /// Requires w >= 40 so the L_r interval is nonempty.
    pub fn sample(seed: &Seed, w: u32, max_words_log: u32) -> Self {
        assert!(w >= 40, "swap seed requires w >= 40, got {w}");
        assert!(w <= 128);
        let lo = (w as u64).div_ceil(20);
        let hi = (w as u64) / 11;
        assert!(hi >= lo, "empty L_r interval at w = {w}");
        let span = (hi - lo).max(1);
        let l_r = lo + seed.prf64(&[0x3afe, 0]) % span;
        let mut l_list = Vec::new();
        let mut s_list = Vec::new();
        for i in 0..=max_words_log {
            let base = 1u64 << i;
            let l_i = base + seed.prf64(&[0x3afe, 1, i as u64]) % base;
            let s_i = 1 + seed.prf64(&[0x3afe, 2, i as u64]) % l_i;
            l_list.push(l_i);
            s_list.push(s_i);
        }
        let a = seed.prf64(&[0x3afe, 3]) % (w as u64 - 1);
        SwapSeed { w, max_words_log, l_r, l_list, s_list, a }
    }
}

/// Where a VM bit lives inside the WVM.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum WvmLoc {
    /// (1-based word index, bit offset within the word)
    Word(usize, usize),
    /// 1-based bit-tape index
    Bit(usize),
}

/// Derived layout for a specific memory size M: which case applies, which
/// words are swapped, and how the tapes split.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SwapLayout {
    pub w: u32,
    pub m: usize,
    /// complete words
    pub l: usize,
    /// tail bits
    pub t: usize,
    /// true for the Few-Word and Long-Tail cases (single swap)
    pub single: bool,
    /// swap target for the tail
    pub s_k: usize,
    /// second swap word (Short-Tail case): cyclic successor of s_k in [1, L_k]
    pub succ: usize,
    pub l_word: usize,
    pub l_bit: usize,
}

impl SwapLayout {
    pub fn new(seed: &SwapSeed, m: usize) -> Result<Self, BitMemError> {
        let w = seed.w as usize;
        if m <= 2 * w || m >= (1usize << (seed.max_words_log + 1)) * w {
            return Err(BitMemError::SwapRange(m));
        }
        let l = m / w;
        let t = m - l * w;
        // unique k with L_k < L <= L_{k+1}
        let k = (0..seed.l_list.len() - 1)
            .find(|&i| seed.l_list[i] < l as u64 && l as u64 <= seed.l_list[i + 1])
            .expect("L covered by sampled thresholds");
        let l_k = seed.l_list[k];
        let s_k = seed.s_list[k] as usize;
        let succ = (seed.s_list[k] % l_k + 1) as usize;
        let single = l as u64 <= seed.l_r || t as u64 > seed.a;
        let (l_word, l_bit) = if single { (l, t) } else { (l - 1, t + w) };
        debug_assert!(l_bit < 2 * w);
        debug_assert!(s_k < l && succ < l);
        Ok(SwapLayout { w: seed.w, m, l, t, single, s_k, succ, l_word, l_bit })
    }

    /// Maps a VM bit position to its position in the swapped string.
    pub fn to_temp(&self, p: usize) -> usize {
        debug_assert!(p < self.m);
        let w = self.w as usize;
        let q = if self.single {
            p
        } else {
            // swap 1: word s_k <-> word L
            block_swap(p, (self.s_k - 1) * w, (self.l - 1) * w, w)
        };
        // swap 2: tail <-> prefix of target word (s_k in the single case,
        // succ in the short-tail case)
        let tgt = if self.single { self.s_k } else { self.succ };
        block_swap(q, self.l * w, (tgt - 1) * w, self.t)
    }

    /// Inverse of `to_temp`.
    pub fn from_temp(&self, q: usize) -> usize {
        let w = self.w as usize;
        let tgt = if self.single { self.s_k } else { self.succ };
        let p = block_swap(q, self.l * w, (tgt - 1) * w, self.t);
        if self.single {
            p
        } else {
            block_swap(p, (self.s_k - 1) * w, (self.l - 1) * w, w)
        }
    }

    /// WVM location of a VM bit.
    pub fn loc(&self, p: usize) -> WvmLoc {
        let w = self.w as usize;
        let q = self.to_temp(p);
        if q < self.l_word * w {
            WvmLoc::Word(q / w + 1, q % w)
        } else {
            WvmLoc::Bit(q - self.l_word * w + 1)
        }
    }

    /// VM bit ranges whose mapping is not the identity: the swap blocks.
    pub fn swap_blocks(&self) -> Vec<(usize, usize)> {
        let w = self.w as usize;
        let mut v = Vec::new();
        if self.single {
            if self.t > 0 {
                v.push(((self.s_k - 1) * w, self.t));
                v.push((self.l * w, self.t));
            }
        } else {
            v.push(((self.s_k - 1) * w, w));
            v.push(((self.l - 1) * w, w));
            if self.t > 0 {
                v.push(((self.succ - 1) * w, self.t));
                v.push((self.l * w, self.t));
            }
        }
        v
    }
}

#[inline]
fn block_swap(p: usize, a: usize, b: usize, len: usize) -> usize {
    if p >= a && p < a + len {
        b + (p - a)
    } else if p >= b && p < b + len {
        a + (p - b)
    } else {
        p
    }
}

/// Splits a flat bit string into (word tape, bit tape) contents per the
/// swap layout for its length.
pub fn swap_split_bits(bits: &BitBuf, seed: &SwapSeed) -> Result<(BitBuf, BitBuf), BitMemError> {
    let m = bits.len();
    let layout = SwapLayout::new(seed, m)?;
    let w = seed.w as usize;
    let mut temp = bits.clone();
    if !layout.single {
        temp.swap_ranges((layout.s_k - 1) * w, (layout.l - 1) * w, w);
    }
    let tgt = if layout.single { layout.s_k } else { layout.succ };
    if layout.t > 0 {
        temp.swap_ranges(layout.l * w, (tgt - 1) * w, layout.t);
    }
    Ok((
        temp.slice(0, layout.l_word * w),
        temp.slice(layout.l_word * w, layout.l_bit),
    ))
}

/// Inverse of [`swap_split_bits`].
pub fn swap_join_bits(word_tape: &BitBuf, bit_tape: &BitBuf, seed: &SwapSeed) -> Result<BitBuf, BitMemError> {
    let w = seed.w as usize;
    let m = word_tape.len() + bit_tape.len();
    let layout = SwapLayout::new(seed, m)?;
    let mut temp = word_tape.clone();
    temp.extend(bit_tape);
    let tgt = if layout.single { layout.s_k } else { layout.succ };
    if layout.t > 0 {
        temp.swap_ranges(layout.l * w, (tgt - 1) * w, layout.t);
    }
    if !layout.single {
        temp.swap_ranges((layout.s_k - 1) * w, (layout.l - 1) * w, w);
    }
    Ok(temp)
}

/// Stores a word-dominant VM into a fresh WVM (Alg. "Storing VM into WVM").
pub fn swap_store(vm: &VirtualMemory, seed: &SwapSeed) -> Result<Wvm, BitMemError> {
    let m = vm.bits().len();
    if word_dominant_witness(m, seed.w).is_none() {
        return Err(BitMemError::WordDominance(m));
    }
    let (word_tape, bit_tape) = swap_split_bits(vm.bits(), seed)?;
    let mut wvm = Wvm::new(seed.w);
    wvm.word_tape = word_tape;
    wvm.bit_tape = bit_tape;
    Ok(wvm)
}

/// Reconstructs the VM from a WVM produced by [`swap_store`].
pub fn swap_load(wvm: &Wvm, seed: &SwapSeed) -> Result<VirtualMemory, BitMemError> {
    let temp = swap_join_bits(&wvm.word_tape, &wvm.bit_tape, seed)?;
    Ok(VirtualMemory::from_bits(seed.w, temp))
}

/// A VM view over any WVM, translating every access and size change
/// through the swap layout. Tracks the current VM size `m`.
pub struct VmOverWvm<'a, W: WvmSpace> {
    pub wvm: &'a mut W,
    pub seed: &'a SwapSeed,
    pub m: usize,
}

impl<'a, W: WvmSpace> VmOverWvm<'a, W> {
    pub fn new(wvm: &'a mut W, seed: &'a SwapSeed, m: usize) -> Self {
        debug_assert_eq!(wvm.words() * seed.w as usize + wvm.bits(), m);
        VmOverWvm { wvm, seed, m }
    }

    fn layout(&self) -> SwapLayout {
        SwapLayout::new(self.seed, self.m).expect("valid layout")
    }

    /// Reads VM bits [pos, pos+len) with accesses coalesced per WVM word.
    fn read_bits(&mut self, pos: usize, len: usize) -> u128 {
        assert!(len <= 128);
        let layout = self.layout();
        let mut out = 0u128;
        let mut cache: Option<(usize, u128)> = None;
        for i in 0..len {
            let bit = match layout.loc(pos + i) {
                WvmLoc::Word(idx, off) => {
                    let v = match cache {
                        Some((ci, cv)) if ci == idx => cv,
                        _ => {
                            let v = self.wvm.read_word(idx);
                            cache = Some((idx, v));
                            v
                        }
                    };
                    v >> off & 1 == 1
                }
                WvmLoc::Bit(idx) => self.wvm.read_bit(idx),
            };
            if bit {
                out |= 1 << i;
            }
        }
        out
    }

    fn write_bits(&mut self, pos: usize, len: usize, v: u128) {
        assert!(len <= 128);
        let layout = self.layout();
        let w = self.seed.w as usize;
        // group word-tape destinations so a fully covered word is a single
        // write and a partially covered one a read-modify-write
        let mut groups: Vec<(usize, u128, u128)> = Vec::new();
        for i in 0..len {
            let bit = v >> i & 1 == 1;
            match layout.loc(pos + i) {
                WvmLoc::Word(idx, off) => {
                    let g = match groups.iter_mut().find(|g| g.0 == idx) {
                        Some(g) => g,
                        None => {
                            groups.push((idx, 0, 0));
                            groups.last_mut().unwrap()
                        }
                    };
                    g.1 |= 1 << off;
                    if bit {
                        g.2 |= 1 << off;
                    }
                }
                WvmLoc::Bit(idx) => {
                    self.wvm.write_bit(idx, bit);
                }
            }
        }
        for (idx, mask, val) in groups {
            if mask == mask128(w) {
                self.wvm.write_word(idx, val);
            } else {
                let cur = self.wvm.read_word(idx);
                self.wvm.write_word(idx, (cur & !mask) | val);
            }
        }
    }

    /// Applies a VM alloc/release: resizes the tapes and moves exactly the
    /// bits whose WVM location changes between the old and new layouts.
    fn resize(&mut self, amount: usize, grow: bool) {
        let w = self.seed.w as usize;
        debug_assert!(amount == 1 || amount == w);
        let m_old = self.m;
        let m_new = if grow { m_old + amount } else { m_old - amount };
        if word_dominant_witness(m_new, self.seed.w).is_none() {
            panic!("forbidden: resize to M = {m_new} violates word dominance");
        }
        let old = SwapLayout::new(self.seed, m_old).expect("old layout");
        let new = SwapLayout::new(self.seed, m_new).expect("new layout");

        // candidate moved positions: swap blocks under either layout plus
        // the grown/shrunk suffix
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

        // read phase (coalesced)
        let mut saved: Vec<(usize, bool)> = Vec::with_capacity(positions.len());
        {
            let mut cache: Option<(usize, u128)> = None;
            for &p in &positions {
                let bit = match old.loc(p) {
                    WvmLoc::Word(idx, off) => {
                        let v = match cache {
                            Some((ci, cv)) if ci == idx => cv,
                            _ => {
                                let v = self.wvm.read_word(idx);
                                cache = Some((idx, v));
                                v
                            }
                        };
                        v >> off & 1 == 1
                    }
                    WvmLoc::Bit(idx) => self.wvm.read_bit(idx),
                };
                saved.push((p, bit));
            }
        }

        // resize tapes
        while self.wvm.words() < new.l_word {
            self.wvm.alloc_word();
        }
        while self.wvm.words() > new.l_word {
            self.wvm.release_word();
        }
        while self.wvm.bits() < new.l_bit {
            self.wvm.alloc_bit();
        }
        while self.wvm.bits() > new.l_bit {
            self.wvm.release_bit();
        }
        self.m = m_new;

        // write phase: moved survivors, then zeros for fresh bits
        let mut writes: Vec<(usize, bool)> = saved;
        if grow {
            for p in m_old..m_new {
                writes.push((p, false));
            }
        }
        let mut cache: Option<(usize, u128)> = None;
        let flush = |wvm: &mut W, cache: &mut Option<(usize, u128)>| {
            if let Some((ci, cv)) = cache.take() {
                wvm.write_word(ci, cv);
            }
        };
        writes.sort_unstable_by_key(|&(p, _)| match new.loc(p) {
            WvmLoc::Word(i, o) => (0, i, o),
            WvmLoc::Bit(i) => (1, i, 0),
        });
        for (p, bit) in writes {
            match new.loc(p) {
                WvmLoc::Word(idx, off) => {
                    let cur = match cache {
                        Some((ci, cv)) if ci == idx => cv,
                        _ => {
                            flush(self.wvm, &mut cache);
                            self.wvm.read_word(idx)
                        }
                    };
                    let nv = if bit { cur | 1 << off } else { cur & !(1 << off) };
                    cache = Some((idx, nv));
                }
                WvmLoc::Bit(idx) => self.wvm.write_bit(idx, bit),
            }
        }
        flush(self.wvm, &mut cache);
    }
}

impl<W: WvmSpace> VmSpace for VmOverWvm<'_, W> {
    fn word_len(&self) -> u32 {
        self.seed.w
    }

    fn len_bits(&self) -> usize {
        self.m
    }

    fn read_word(&mut self, idx: usize) -> u128 {
        let w = self.seed.w as usize;
        assert!(idx >= 1 && idx <= self.m / w);
        self.read_bits((idx - 1) * w, w)
    }

    fn write_word(&mut self, idx: usize, v: u128) {
        let w = self.seed.w as usize;
        assert!(idx >= 1 && idx <= self.m / w);
        self.write_bits((idx - 1) * w, w, v & mask128(w));
    }

    fn read_tail(&mut self) -> (u128, usize) {
        let w = self.seed.w as usize;
        let l = self.m / w;
        let t = self.m - l * w;
        (self.read_bits(l * w, t), t)
    }

    fn write_tail(&mut self, v: u128) {
        let w = self.seed.w as usize;
        let l = self.m / w;
        let t = self.m - l * w;
        self.write_bits(l * w, t, v & mask128(t));
    }

    fn alloc(&mut self, amount: usize) {
        self.resize(amount, true);
    }

    fn release(&mut self, amount: usize) {
        self.resize(amount, false);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seed(n: u64) -> Seed {
        Seed::new(0xb17_0000_0000 ^ n, 0x5eed ^ n.rotate_left(7))
    }

    struct Lcg(u64);
    impl Lcg {
        fn next(&mut self) -> u64 {
            self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            self.0 >> 11
        }
    }

    #[test]
    fn vm_write_read_word() {
        let mut vm = VirtualMemory::new(64);
        vm.vm_alloc(64).unwrap();
        vm.vm_write(VmAddr::Word(1), 0xdeadbeef, 64).unwrap();
        assert_eq!(vm.vm_read(VmAddr::Word(1)).unwrap(), (0xdeadbeef, 64));
    }

    #[test]
    fn vm_tail_empty_at_word_multiple() {
        let mut vm = VirtualMemory::new(64);
        vm.vm_alloc(64).unwrap();
        assert_eq!(vm.words(), 1);
        assert_eq!(vm.vm_read(VmAddr::Tail).unwrap(), (0, 0));
    }

    #[test]
    fn vm_alloc_release_shapes() {
        let mut vm = VirtualMemory::new(64);
        vm.vm_alloc(64).unwrap();
        vm.vm_alloc(1).unwrap();
        assert_eq!((vm.words(), vm.tail_bits()), (1, 1));
        vm.vm_alloc(64).unwrap();
        assert_eq!((vm.words(), vm.tail_bits()), (2, 1));
        vm.vm_release(1).unwrap();
        assert_eq!((vm.words(), vm.tail_bits()), (2, 0));
        assert!(matches!(vm.vm_alloc(17), Err(BitMemError::BadAmount(17, 64))));
        let mut small = VirtualMemory::new(64);
        assert!(matches!(small.vm_release(1), Err(BitMemError::Underflow(1, 0))));
    }

    #[test]
    fn vm_fuzz_against_flat_buffer() {
        // random word/tail writes vs a reference bit string
        let mut rng = Lcg(42);
        let w = 64u32;
        let mut vm = VirtualMemory::new(w);
        let mut reference = BitBuf::new();
        for _ in 0..10_000 {
            let m = vm.len_bits();
            match rng.next() % 5 {
                0 if m < 4096 => {
                    let amt = if rng.next() % 2 == 0 { 1 } else { w as usize };
                    vm.vm_alloc(amt).unwrap();
                    reference.grow(amt);
                }
                1 if m > 8 * w as usize => {
                    let amt = if rng.next() % 2 == 0 { 1 } else { w as usize };
                    vm.vm_release(amt).unwrap();
                    reference.shrink(amt);
                }
                2 if vm.words() > 0 => {
                    let i = 1 + rng.next() as usize % vm.words();
                    let v = rng.next() as u128;
                    vm.vm_write(VmAddr::Word(i), v, 64).unwrap();
                    reference.set_bits_u128((i - 1) * 64, 64, v);
                }
                3 if vm.tail_bits() > 0 => {
                    let t = vm.tail_bits();
                    let v = rng.next() as u128 & ((1 << t) - 1);
                    vm.vm_write(VmAddr::Tail, v, t).unwrap();
                    reference.set_bits_u128(vm.words() * 64, t, v);
                }
                _ => {
                    if vm.words() > 0 {
                        let i = 1 + rng.next() as usize % vm.words();
                        assert_eq!(
                            vm.vm_read(VmAddr::Word(i)).unwrap().0,
                            reference.get_bits_u128((i - 1) * 64, 64)
                        );
                    }
                }
            }
            assert_eq!(vm.bits(), &reference);
            assert_eq!(vm.words(), reference.len() / 64);
            assert_eq!(vm.tail_bits(), reference.len() % 64);
        }
    }

    #[test]
    fn word_dominance_witnesses() {
        assert_eq!(word_dominant_witness(67, 64), Some(1));
        assert_eq!(word_dominant_witness(64, 64), None);
        assert_eq!(word_dominant_witness(135, 64), Some(2));
        assert_eq!(word_dominant_witness(74, 64), Some(1));
        assert_eq!(word_dominant_witness(75, 64), None);
        assert_eq!(word_dominant_witness(0, 64), None);
    }

    fn random_word_dominant_vm(rng: &mut Lcg, w: u32, max_words: usize) -> VirtualMemory {
        // pick n then M in [nw+3n, nw+10n], requiring M > 2w
        loop {
            let n = 2 + rng.next() as usize % max_words;
            let m = n * w as usize + 3 * n + rng.next() as usize % (7 * n + 1);
            if m <= 2 * w as usize {
                continue;
            }
            let mut bits = BitBuf::zeros(m);
            for i in 0..m {
                bits.set(i, rng.next() & 1 == 1);
            }
            return VirtualMemory::from_bits(w, bits);
        }
    }

    #[test]
    fn swap_store_roundtrip() {
        let mut rng = Lcg(7);
        for trial in 0..2_000 {
            let w = if trial % 2 == 0 { 64 } else { 41 };
            let ss = SwapSeed::sample(&seed(trial), w, 12);
            let vm = random_word_dominant_vm(&mut rng, w, 200);
            let wvm = swap_store(&vm, &ss).unwrap();
            assert_eq!(
                wvm.word_tape.len() + wvm.bit_tape.len(),
                vm.bits().len(),
                "conservation"
            );
            assert!(wvm.bit_tape.len() < 2 * w as usize);
            let back = swap_load(&wvm, &ss).unwrap();
            assert_eq!(back.bits(), vm.bits());
        }
    }

    #[test]
    fn swap_case_shapes() {
        // force each case and check the documented bit-tape lengths
        let w = 64u32;
        for s in 0..200u64 {
            let ss = SwapSeed::sample(&seed(s), w, 12);
            // Few-Word: L <= L_r. Pick L = L_r, T = 5 (word-dominant needs
            // M in [nw+3n, nw+10n]; with T=5 and L=L_r, n=L works if 3L<=5+?).
            let l = ss.l_r as usize;
            for t in 1..10usize {
                let m = l * 64 + t;
                if word_dominant_witness(m, w).is_none() || m <= 128 {
                    continue;
                }
                let layout = SwapLayout::new(&ss, m).unwrap();
                assert!(layout.single);
                assert_eq!(layout.l_bit, t, "few-word bit tape = T");
            }
            // Long-Tail: L > L_r, T > a
            let l = ss.l_r as usize + 3;
            let t = (ss.a + 1) as usize;
            let m = l * 64 + t;
            if t < 64 && word_dominant_witness(m, w).is_some() {
                let layout = SwapLayout::new(&ss, m).unwrap();
                assert!(layout.single);
                assert_eq!(layout.l_bit, t, "long-tail bit tape = T");
            }
            // Short-Tail: L > L_r, T <= a
            let t = ss.a as usize;
            let m = l * 64 + t;
            if word_dominant_witness(m, w).is_some() {
                let layout = SwapLayout::new(&ss, m).unwrap();
                assert!(!layout.single);
                assert_eq!(layout.l_bit, t + 64, "short-tail bit tape = T + w");
            }
        }
    }

    #[test]
    fn translated_reads_match_flat() {
        let mut rng = Lcg(99);
        for trial in 0..300 {
            let w = 64u32;
            let ss = SwapSeed::sample(&seed(trial), w, 12);
            let mut vm = random_word_dominant_vm(&mut rng, w, 64);
            let mut wvm = swap_store(&vm, &ss).unwrap();
            let m = vm.bits().len();
            let mut view = VmOverWvm::new(&mut wvm, &ss, m);
            for i in 1..=m / 64 {
                assert_eq!(view.read_word(i), vm.read_word(i), "word {i}");
            }
            assert_eq!(view.read_tail(), vm.read_tail());
        }
    }

    #[test]
    fn unswapped_word_costs_one_access() {
        let w = 64u32;
        let ss = SwapSeed::sample(&seed(4), w, 12);
        let mut rng = Lcg(5);
        let vm = random_word_dominant_vm(&mut rng, w, 64);
        let m = vm.bits().len();
        let layout = SwapLayout::new(&ss, m).unwrap();
        let mut wvm = swap_store(&vm, &ss).unwrap();
        // find a word not involved in any swap
        let blocks = layout.swap_blocks();
        let untouched = (1..=layout.l)
            .find(|&i| {
                let lo = (i - 1) * 64;
                blocks.iter().all(|&(p, len)| lo + 64 <= p || p + len <= lo)
            })
            .unwrap();
        wvm.reset_stats();
        let mut view = VmOverWvm::new(&mut wvm, &ss, m);
        view.read_word(untouched);
        let stats = wvm.stats;
        assert_eq!(stats.word_reads, 1);
        assert_eq!(stats.bit_accesses(), 0);
        // writes to an unswapped word are also a single access
        wvm.reset_stats();
        let mut view = VmOverWvm::new(&mut wvm, &ss, m);
        view.write_word(untouched, 0x1234);
        assert_eq!(wvm.stats.word_writes, 1);
        assert_eq!(wvm.stats.word_reads, 0);
        assert_eq!(wvm.stats.bit_accesses(), 0);
    }

    #[test]
    fn tail_access_lands_per_layout() {
        // reading the original tail touches the word tape (the swap target)
        // and never more than one word plus the permitted bit positions
        let w = 64u32;
        for s in 0..50u64 {
            let ss = SwapSeed::sample(&seed(s), w, 12);
            let mut rng = Lcg(s ^ 0xbeef);
            let vm = random_word_dominant_vm(&mut rng, w, 64);
            let m = vm.bits().len();
            if m % 64 == 0 {
                continue;
            }
            let mut wvm = swap_store(&vm, &ss).unwrap();
            wvm.reset_stats();
            let mut view = VmOverWvm::new(&mut wvm, &ss, m);
            let (tv, tb) = view.read_tail();
            let mut flat = vm.clone();
            assert_eq!((tv, tb), flat.read_tail());
            assert!(wvm.stats.word_reads <= 1, "tail read spans one word");
        }
    }

    #[test]
    fn common_case_bit_alloc_cost() {
        // 1-bit alloc with no threshold crossing: 1 bit-tape alloc + O(1)
        // word ops and at most one bit write
        let w = 64u32;
        'outer: for s in 0..100u64 {
            let ss = SwapSeed::sample(&seed(s), w, 12);
            let mut rng = Lcg(s);
            let vm = random_word_dominant_vm(&mut rng, w, 64);
            let m = vm.bits().len();
            let old = SwapLayout::new(&ss, m).unwrap();
            let new = match SwapLayout::new(&ss, m + 1) {
                Ok(n) => n,
                Err(_) => continue 'outer,
            };
            if word_dominant_witness(m + 1, w).is_none() {
                continue;
            }
            // no threshold crossing: same case, same k-block, tail grows
            if old.single != new.single || old.l != new.l || old.s_k != new.s_k {
                continue;
            }
            if !old.single || old.t + 1 != new.t {
                continue;
            }
            let mut wvm = swap_store(&vm, &ss).unwrap();
            wvm.reset_stats();
            let mut view = VmOverWvm::new(&mut wvm, &ss, m);
            view.alloc(1);
            let st = wvm.stats;
            assert_eq!(st.bit_allocs, 1, "seed {s}");
            assert_eq!(st.word_allocs + st.word_releases + st.bit_releases, 0);
            assert!(st.word_accesses() <= 3, "seed {s}: {st:?}");
            assert!(st.bit_writes <= 1, "seed {s}: {st:?}");
            // resulting state must equal a from-scratch store
            let mut after = vm.clone();
            after.alloc(1);
            assert!(swap_store(&after, &ss).unwrap().same_image(&wvm));
            return; // one qualifying seed is enough
        }
        panic!("no qualifying common-case seed found");
    }

    #[test]
    fn translated_updates_match_from_scratch() {
        // fuzz mixed updates and accesses; after every op the incremental
        // WVM must equal swap_store of the same VM maintained flat
        let mut rng = Lcg(1234);
        for trial in 0..60 {
            let w = if trial % 2 == 0 { 64 } else { 128 };
            let ss = SwapSeed::sample(&seed(10_000 + trial), w, 12);
            let mut flat = random_word_dominant_vm(&mut rng, w, 48);
            let mut wvm = swap_store(&flat, &ss).unwrap();
            for _ in 0..200 {
                let m = flat.len_bits();
                let mut view = VmOverWvm::new(&mut wvm, &ss, m);
                match rng.next() % 6 {
                    0 | 1 => {
                        let amt = if rng.next() % 2 == 0 { 1 } else { w as usize };
                        if word_dominant_witness(m + amt, w).is_some()
                            && SwapLayout::new(&ss, m + amt).is_ok()
                        {
                            view.alloc(amt);
                            flat.alloc(amt);
                        }
                    }
                    2 => {
                        let amt = if rng.next() % 2 == 0 { 1 } else { w as usize };
                        if m > amt + 2 * w as usize
                            && word_dominant_witness(m - amt, w).is_some()
                        {
                            view.release(amt);
                            flat.release(amt);
                        }
                    }
                    3 if flat.words() > 0 => {
                        let i = 1 + rng.next() as usize % flat.words();
                        let v = ((rng.next() as u128) << 64 | rng.next() as u128) & mask128(w as usize);
                        view.write_word(i, v);
                        flat.write_word(i, v);
                    }
                    4 if flat.tail_bits() > 0 => {
                        let t = flat.tail_bits();
                        let v = (rng.next() as u128) & mask128(t);
                        view.write_tail(v);
                        flat.write_tail(v);
                    }
                    _ if flat.words() > 0 => {
                        let i = 1 + rng.next() as usize % flat.words();
                        assert_eq!(view.read_word(i), flat.read_word(i));
                    }
                    _ => {}
                }
                let expect = swap_store(&flat, &ss).unwrap();
                assert!(
                    expect.same_image(&wvm),
                    "trial {trial}: incremental state diverged at M = {}",
                    flat.len_bits()
                );
                // conservation + WVM stipulation
                assert_eq!(
                    wvm.word_tape.len() + wvm.bit_tape.len(),
                    flat.len_bits()
                );
                assert!(wvm.bit_tape.len() < 2 * w as usize);
            }
        }
    }

    #[test]
    fn dump_formats() {
        let mut vm = VirtualMemory::new(64);
        vm.vm_alloc(64).unwrap();
        vm.vm_alloc(1).unwrap();
        vm.vm_write(VmAddr::Word(1), 0xff, 64).unwrap();
        let d = vm.dump();
        assert!(d.starts_with("WORD 1 ff\n"));
        assert!(d.contains("TAIL 0"));
        let mut wvm = Wvm::new(64);
        wvm.alloc_word();
        wvm.alloc_bit();
        wvm.write_bit(1, true);
        let d = wvm.dump();
        assert!(d.contains("WORD 1 0"));
        assert!(d.contains("BIT 1 1"));
    }
}
