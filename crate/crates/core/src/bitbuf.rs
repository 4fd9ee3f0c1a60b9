//! Growable bit string with word-chunked storage.
//!
//! All bit positions are 0-based. Multi-bit reads/writes use LSB-first
//! order within the returned integer: bit `pos` of the buffer becomes bit 0
//! of the value, bit `pos+1` becomes bit 1, and so on.

/// A bit string backed by `u64` limbs.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct BitBuf {
    limbs: Vec<u64>,
    len: usize,
}

impl std::fmt::Debug for BitBuf {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BitBuf[{}; ", self.len)?;
        for i in 0..self.len.min(128) {
            write!(f, "{}", u8::from(self.get(i)))?;
        }
        if self.len > 128 {
            write!(f, "…")?;
        }
        write!(f, "]")
    }
}

impl BitBuf {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn zeros(len: usize) -> Self {
        BitBuf {
            limbs: vec![0; len.div_ceil(64)],
            len,
        }
    }

    /// Builds a buffer of `len` bits from the low bits of `v`.
    pub fn from_u128(v: u128, len: usize) -> Self {
        assert!(len <= 128);
        let mut b = BitBuf::zeros(len);
        b.set_bits_u128(0, len, v);
        b
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, pos: usize) -> bool {
        assert!(pos < self.len, "bit index {pos} out of range {}", self.len);
        self.limbs[pos / 64] >> (pos % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, pos: usize, v: bool) {
        assert!(pos < self.len, "bit index {pos} out of range {}", self.len);
        let limb = &mut self.limbs[pos / 64];
        if v {
            *limb |= 1 << (pos % 64);
        } else {
            *limb &= !(1 << (pos % 64));
        }
    }

    /// Reads `len <= 128` bits starting at `pos`.
    pub fn get_bits_u128(&self, pos: usize, len: usize) -> u128 {
        assert!(len <= 128);
        assert!(pos + len <= self.len, "range {pos}+{len} out of {}", self.len);
        let mut out = 0u128;
        let mut done = 0;
        while done < len {
            let p = pos + done;
            let avail = 64 - p % 64;
            let take = avail.min(len - done);
            let chunk = self.limbs[p / 64] >> (p % 64);
            let mask = if take == 64 { u64::MAX } else { (1u64 << take) - 1 };
            out |= ((chunk & mask) as u128) << done;
            done += take;
        }
        out
    }

    /// Writes the low `len <= 128` bits of `v` starting at `pos`.
    pub fn set_bits_u128(&mut self, pos: usize, len: usize, v: u128) {
        assert!(len <= 128);
        assert!(pos + len <= self.len, "range {pos}+{len} out of {}", self.len);
        if len < 128 {
            debug_assert_eq!(v >> len, 0, "value wider than field");
        }
        let mut done = 0;
        while done < len {
            let p = pos + done;
            let avail = 64 - p % 64;
            let take = avail.min(len - done);
            let mask = if take == 64 { u64::MAX } else { (1u64 << take) - 1 };
            let limb = &mut self.limbs[p / 64];
            *limb &= !(mask << (p % 64));
            *limb |= (((v >> done) as u64) & mask) << (p % 64);
            done += take;
        }
    }

    /// Appends `len` bits, zero-initialized. Returns the old length.
    pub fn grow(&mut self, len: usize) -> usize {
        let old = self.len;
        self.len += len;
        if self.limbs.len() * 64 < self.len {
            self.limbs.resize(self.len.div_ceil(64), 0);
        }
        old
    }

    /// Drops the last `len` bits. Freed bits are cleared so that equal
    /// logical contents compare equal limb-wise.
    pub fn shrink(&mut self, len: usize) {
        assert!(len <= self.len);
        self.len -= len;
        self.limbs.truncate(self.len.div_ceil(64));
        let spare = self.limbs.len() * 64 - self.len;
        if spare > 0 {
            let last = self.limbs.len() - 1;
            self.limbs[last] &= u64::MAX >> spare;
        }
    }

    /// Copies `len` bits from `src[src_pos..]` into `self[dst_pos..]`.
    /// Works limb-chunked, not bit-by-bit.
    pub fn copy_from(&mut self, dst_pos: usize, src: &BitBuf, src_pos: usize, len: usize) {
        let mut done = 0;
        while done < len {
            let take = (len - done).min(64);
            let v = src.get_bits_u128(src_pos + done, take) as u64;
            self.set_bits_u128(dst_pos + done, take, v as u128);
            done += take;
        }
    }

    /// Extracts `len` bits starting at `pos` as a new buffer.
    pub fn slice(&self, pos: usize, len: usize) -> BitBuf {
        let mut out = BitBuf::zeros(len);
        out.copy_from(0, self, pos, len);
        out
    }

    /// Swaps the equal-length ranges `[a, a+len)` and `[b, b+len)`.
    /// The ranges must not overlap.
    pub fn swap_ranges(&mut self, a: usize, b: usize, len: usize) {
        assert!(a + len <= b || b + len <= a, "overlapping swap");
        let mut done = 0;
        while done < len {
            let take = (len - done).min(64);
            let va = self.get_bits_u128(a + done, take);
            let vb = self.get_bits_u128(b + done, take);
            self.set_bits_u128(a + done, take, vb);
            self.set_bits_u128(b + done, take, va);
            done += take;
        }
    }

    /// Appends the contents of `other`.
    pub fn extend(&mut self, other: &BitBuf) {
        let at = self.grow(other.len());
        self.copy_from(at, other, 0, other.len());
    }

    /// Renders as an MSB-less plain `0`/`1` string, bit 0 first.
    pub fn to_bit_string(&self) -> String {
        (0..self.len).map(|i| if self.get(i) { '1' } else { '0' }).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_bits() {
        let mut b = BitBuf::zeros(200);
        b.set_bits_u128(3, 128, 0xdead_beef_cafe_f00d_0123_4567_89ab_cdef);
        assert_eq!(
            b.get_bits_u128(3, 128),
            0xdead_beef_cafe_f00d_0123_4567_89ab_cdef
        );
        assert_eq!(b.get_bits_u128(0, 3), 0);
        b.set(0, true);
        assert!(b.get(0));
    }

    #[test]
    fn grow_shrink_canonical() {
        let mut b = BitBuf::zeros(10);
        b.set_bits_u128(0, 10, 0x3ff);
        b.grow(7);
        assert_eq!(b.get_bits_u128(10, 7), 0);
        b.shrink(12);
        assert_eq!(b.len(), 5);
        let c = {
            let mut c = BitBuf::zeros(5);
            c.set_bits_u128(0, 5, 0x1f);
            c
        };
        assert_eq!(b, c);
    }

    #[test]
    fn swap_disjoint_ranges() {
        let mut b = BitBuf::zeros(100);
        b.set_bits_u128(0, 8, 0xa5);
        b.set_bits_u128(70, 8, 0x3c);
        b.swap_ranges(0, 70, 8);
        assert_eq!(b.get_bits_u128(0, 8), 0x3c);
        assert_eq!(b.get_bits_u128(70, 8), 0xa5);
    }

    #[test]
    fn copy_across_limb_boundaries() {
        let mut src = BitBuf::zeros(130);
        for i in 0..130 {
            src.set(i, i % 3 == 0);
        }
        let mut dst = BitBuf::zeros(200);
        dst.copy_from(33, &src, 1, 129);
        for i in 0..129 {
            assert_eq!(dst.get(33 + i), src.get(1 + i));
        }
    }
}
