//! Size functions and the metadata codec for tree nodes.
//!
//! For every (level, key count) the encoding parameters (M, K, M_fix, pads)
//! are pure functions of the config and seed, computed on demand and
//! memoized; nothing about them depends on the stored keys. The metadata of
//! an inner node — children key counts, combined child spillover, and the
//! memory remainder past the cut — is ranked exactly: the index of
//! (n-vector, m_rem, k_cat) in lexicographic order weighted by
//! 2^|m_rem| * K_cat, so the index space telescopes to
//! sum over n-vectors = C(U_l, n) / 2^M_fix scale with no table storage.

use super::{TreeConfig, TreeSeeds};
use crate::bitmem::SwapLayout;
use crate::exact::{binomial, Bits};
use crate::minimap::{header_split_params, MinimapParams};
use crate::perm::Seed;
use num_bigint::BigUint;
use num_rational::Ratio;
use num_traits::{One, ToPrimitive, Zero};
use std::cell::RefCell;
use std::collections::HashMap;

/// Encoding parameters of a level-l node holding n keys.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeSize {
    pub level: usize,
    pub n: usize,
    /// Total VM bits, including metadata and pad.
    pub m: usize,
    /// Spill universe, in (r, 2r] whenever the index space allows.
    pub k: u64,
    /// Inner nodes: cut position; leaves: 0.
    pub m_fix: usize,
    /// Inner nodes: metadata bits (m* region length); leaves: 0.
    pub m_star: usize,
    /// Trailing zero padding enforcing the lower space bound.
    pub pad: usize,
    /// Inner nodes: max over compositions of sum of child sizes.
    pub m_max: usize,
}

pub struct SizeTables {
    pub cfg: TreeConfig,
    mm_seed: Seed,
    /// Upper bound on any node's key count (all leaves at their max).
    pub n_cap: usize,
    node: RefCell<HashMap<(usize, usize), NodeSize>>,
    /// Per level: child-size DP tables, lazily built to n_cap.
    conv: RefCell<HashMap<usize, ConvTables>>,
    fmemo: RefCell<HashMap<(usize, usize, usize, i64), BigUint>>,
    /// Statement-1 inequality verdicts, memoized per (level, n).
    bounds: RefCell<HashMap<(usize, usize), bool>>,
}

/// DP tables over compositions of m keys into j children (suffix
/// children), all weighted by the child size function of one level.
struct ConvTables {
    /// min/max of sum of child M over compositions of m into j parts;
    /// index [j][m], j in 0..=B.
    min_m: Vec<Vec<i64>>,
    max_m: Vec<Vec<i64>>,
    /// A[j][m] = sum over compositions of 2^(sum M) * prod K.
    a: Vec<Vec<BigUint>>,
    /// C[j][m] = sum over compositions of prod K.
    c: Vec<Vec<BigUint>>,
}

impl SizeTables {
    pub fn new(cfg: TreeConfig, seeds: &TreeSeeds) -> Self {
        let n_cap = cfg.b.pow(cfg.d as u32 - 1) * cfg.leaf_hi + 1;
        SizeTables {
            mm_seed: seeds.minimap_seed(),
            cfg,
            n_cap,
            node: RefCell::new(HashMap::new()),
            conv: RefCell::new(HashMap::new()),
            fmemo: RefCell::new(HashMap::new()),
            bounds: RefCell::new(HashMap::new()),
        }
    }

    /// Minimap parameters used by every leaf.
    pub fn leaf_params(&self) -> MinimapParams {
        MinimapParams {
            key_universe: 1u64 << self.cfg.id_bits[self.cfg.d],
            value_universe: self.cfg.q,
            capacity: self.cfg.leaf_hi,
            r: self.cfg.r,
            seed: self.mm_seed,
        }
    }

    /// (M, K, ...) of a level-l node with n keys.
    pub fn node_size(&self, level: usize, n: usize) -> NodeSize {
        if let Some(s) = self.node.borrow().get(&(level, n)) {
            return s.clone();
        }
        let s = if level == self.cfg.d {
            self.leaf_size(n)
        } else {
            self.inner_size(level, n)
        };
        self.node.borrow_mut().insert((level, n), s.clone());
        s
    }

    fn leaf_size(&self, n: usize) -> NodeSize {
        let p = self.leaf_params();
        NodeSize {
            level: self.cfg.d,
            n,
            m: p.mem_bits(n),
            k: p.spill_universe(n),
            m_fix: 0,
            m_star: 0,
            pad: 0,
            m_max: 0,
        }
    }

    fn inner_size(&self, level: usize, n: usize) -> NodeSize {
        let b = self.cfg.b;
        self.ensure_conv(level + 1);
        let (min_m, max_m) = {
            let conv = self.conv.borrow();
            let t = conv.get(&(level + 1)).unwrap();
            (t.min_m[b][n], t.max_m[b][n])
        };
        let _ = min_m;
        let m_max = max_m as usize;
        let w = self.cfg.w as usize;
        assert!(m_max > w, "M_max must exceed one word");
        let m_fix = m_max - w;
        let s_total = self.f(level + 1, b, n, m_fix as i64);
        let (m_star, k) = header_split_params(&s_total, self.cfg.r);
        // lower-bound pad: grow M until M + log2 K > log2 C(U_l, n) - 1
        let c_un = self.instances(level, n);
        let target = Bits::log2(&c_un).sub(&Bits::from_int(1));
        let mut pad = 0usize;
        loop {
            let total = Bits::from_int((m_fix + m_star + pad) as i64)
                .add(&Bits::log2(&BigUint::from(k)));
            if target.lt(&total) {
                break;
            }
            pad += 1;
        }
        NodeSize {
            level,
            n,
            m: m_fix + m_star + pad,
            k,
            m_fix,
            m_star,
            pad,
            m_max,
        }
    }

    /// C(U_level, n), the instance count of a node.
    pub fn instances(&self, level: usize, n: usize) -> BigUint {
        let u = self.cfg.node_universe(level);
        binomial(&BigUint::from(u), n as u64)
    }

    /// Checks the space inequality
    /// `log2 C - 1 < M + log2 K <= log2 C + (n_l - 1)/r` exactly.
    pub fn check_bounds(&self, level: usize, n: usize) -> bool {
        if let Some(&ok) = self.bounds.borrow().get(&(level, n)) {
            return ok;
        }
        let s = self.node_size(level, n);
        let c_un = self.instances(level, n);
        let total = Bits::from_int(s.m as i64).add(&Bits::log2(&BigUint::from(s.k)));
        let lo = Bits::log2(&c_un).sub(&Bits::from_int(1));
        let slack = Ratio::new(self.cfg.n_level[level] as i64 - 1, self.cfg.r as i64);
        let hi = Bits::log2(&c_un).add(&Bits::from_frac(slack));
        let ok = lo.lt(&total) && total.le(&hi);
        self.bounds.borrow_mut().insert((level, n), ok);
        ok
    }

    /// Exact slack `log2 C + (n_l-1)/r - (M + log2 K)` for audit reports.
    pub fn bound_slack_bits(&self, level: usize, n: usize) -> f64 {
        let s = self.node_size(level, n);
        let c_un = self.instances(level, n);
        let total = Bits::from_int(s.m as i64).add(&Bits::log2(&BigUint::from(s.k)));
        let slack = Ratio::new(self.cfg.n_level[level] as i64 - 1, self.cfg.r as i64);
        let hi = Bits::log2(&c_un).add(&Bits::from_frac(slack));
        hi.sub(&total).approx()
    }

    /// Word/bit-tape lengths of a level-l sub-VM holding n keys.
    pub fn tapes(&self, seeds: &TreeSeeds, level: usize, n: usize) -> (usize, usize) {
        let m = self.node_size(level, n).m;
        let ss = seeds.swap_seed(&self.cfg, level);
        let layout = SwapLayout::new(&ss, m).expect("node sizes are swappable");
        (layout.l_word, layout.l_bit)
    }

    fn ensure_conv(&self, child_level: usize) {
        if self.conv.borrow().contains_key(&child_level) {
            return;
        }
        let b = self.cfg.b;
        let cap = self.n_cap;
        // child weight primitives
        let sizes: Vec<(i64, u64)> = (0..=cap)
            .map(|n| {
                let s = self.node_size(child_level, n);
                (s.m as i64, s.k)
            })
            .collect();
        let neg = i64::MIN / 4;
        let pos = i64::MAX / 4;
        let mut min_m = vec![vec![pos; cap + 1]; b + 1];
        let mut max_m = vec![vec![neg; cap + 1]; b + 1];
        let mut a = vec![vec![BigUint::zero(); cap + 1]; b + 1];
        let mut c = vec![vec![BigUint::zero(); cap + 1]; b + 1];
        min_m[0][0] = 0;
        max_m[0][0] = 0;
        a[0][0] = BigUint::one();
        c[0][0] = BigUint::one();
        for j in 1..=b {
            for m in 0..=cap {
                for (nc, &(mw, kw)) in sizes.iter().enumerate().take(m + 1) {
                    let rest = m - nc;
                    if min_m[j - 1][rest] == pos {
                        continue;
                    }
                    min_m[j][m] = min_m[j][m].min(mw + min_m[j - 1][rest]);
                    max_m[j][m] = max_m[j][m].max(mw + max_m[j - 1][rest]);
                    let term_a = (&a[j - 1][rest] * kw) << (mw as usize);
                    a[j][m] += term_a;
                    c[j][m] += &c[j - 1][rest] * kw;
                }
            }
        }
        self.conv
            .borrow_mut()
            .insert(child_level, ConvTables { min_m, max_m, a, c });
    }

    /// F: sum over compositions of m into `parts` children at `child_level`
    /// of 2^max(sum M - t, 0) * prod K.
    fn f(&self, child_level: usize, parts: usize, m: usize, t: i64) -> BigUint {
        self.ensure_conv(child_level);
        {
            let conv = self.conv.borrow();
            let tab = conv.get(&child_level).unwrap();
            let minv = tab.min_m[parts][m];
            let maxv = tab.max_m[parts][m];
            if minv > maxv {
                return BigUint::zero(); // no composition (impossible here)
            }
            if t <= minv {
                // every term keeps its exponent: A >> t (exact) or << -t
                let av = &tab.a[parts][m];
                return if t >= 0 { av >> (t as usize) } else { av << ((-t) as usize) };
            }
            if t >= maxv {
                return tab.c[parts][m].clone();
            }
        }
        let key = (child_level, parts, m, t);
        if let Some(v) = self.fmemo.borrow().get(&key) {
            return v.clone();
        }
        // mid band: peel one child
        let mut acc = BigUint::zero();
        for nc in 0..=m {
            let (mw, kw) = {
                let s = self.node_size(child_level, nc);
                (s.m as i64, s.k)
            };
            let sub = self.f(child_level, parts - 1, m - nc, t - mw);
            acc += sub * kw;
        }
        self.fmemo.borrow_mut().insert(key, acc.clone());
        acc
    }

    /// Total metadata index space of a level-l node with n keys.
    pub fn index_space(&self, level: usize, n: usize) -> BigUint {
        let s = self.node_size(level, n);
        self.f(level + 1, self.cfg.b, n, s.m_fix as i64)
    }

    /// M_cat and M_rem for a given child count vector.
    pub fn cat_rem(&self, level: usize, n_vec: &[usize]) -> (usize, usize) {
        let m_cat: usize = n_vec
            .iter()
            .map(|&nc| self.node_size(level + 1, nc).m)
            .sum();
        let n: usize = n_vec.iter().sum();
        let m_fix = self.node_size(level, n).m_fix;
        (m_cat, m_cat.saturating_sub(m_fix))
    }

    /// Ranks (n_vec, m_rem value, child spills) into the metadata index.
    pub fn rank_meta(
        &self,
        level: usize,
        n_vec: &[usize],
        m_rem: &BigUint,
        k_vec: &[u64],
    ) -> BigUint {
        let b = self.cfg.b;
        assert_eq!(n_vec.len(), b);
        assert_eq!(k_vec.len(), b);
        let n: usize = n_vec.iter().sum();
        let m_fix = self.node_size(level, n).m_fix as i64;
        let mut prefix = BigUint::zero();
        let mut m_left = n;
        let mut t = m_fix;
        for (j, &nj) in n_vec.iter().enumerate() {
            for c in 0..nj {
                let s = self.node_size(level + 1, c);
                prefix += self.f(level + 1, b - j - 1, m_left - c, t - s.m as i64) * s.k;
            }
            let s = self.node_size(level + 1, nj);
            m_left -= nj;
            t -= s.m as i64;
        }
        // inner offset: m_rem value, then the mixed-radix spill index
        let mut k_cat = BigUint::one();
        for (j, &nj) in n_vec.iter().enumerate() {
            let _ = j;
            k_cat *= self.node_size(level + 1, nj).k;
        }
        let mut k_idx = BigUint::zero();
        for (j, &kj) in k_vec.iter().enumerate() {
            let kr = self.node_size(level + 1, n_vec[j]).k;
            assert!(kj < kr);
            k_idx = k_idx * kr + kj;
        }
        prefix + m_rem * k_cat + k_idx
    }

    /// Inverse of [`rank_meta`].
    pub fn unrank_meta(
        &self,
        level: usize,
        n: usize,
        z: &BigUint,
    ) -> (Vec<usize>, BigUint, Vec<u64>) {
        let b = self.cfg.b;
        let m_fix = self.node_size(level, n).m_fix as i64;
        let mut rest = z.clone();
        let mut n_vec = Vec::with_capacity(b);
        let mut m_left = n;
        let mut t = m_fix;
        for j in 0..b {
            let mut chosen = None;
            for c in 0..=m_left {
                let s = self.node_size(level + 1, c);
                let block = self.f(level + 1, b - j - 1, m_left - c, t - s.m as i64) * s.k;
                if rest < block {
                    chosen = Some(c);
                    break;
                }
                rest -= block;
            }
            let c = chosen.expect("rank within space");
            let s = self.node_size(level + 1, c);
            n_vec.push(c);
            m_left -= c;
            t -= s.m as i64;
        }
        let mut k_cat = BigUint::one();
        for &nj in &n_vec {
            k_cat *= self.node_size(level + 1, nj).k;
        }
        let m_rem_val = &rest / &k_cat;
        let mut k_idx = &rest % &k_cat;
        let mut k_vec = vec![0u64; b];
        for j in (0..b).rev() {
            let kr = self.node_size(level + 1, n_vec[j]).k;
            k_vec[j] = (&k_idx % kr).to_u64().unwrap();
            k_idx /= kr;
        }
        (n_vec, m_rem_val, k_vec)
    }
}
