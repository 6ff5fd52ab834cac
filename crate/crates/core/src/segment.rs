//! Segments and chains: the doubly-exponential storage hierarchy.
//!
//! Chain 0 (front) holds the smallest keys in `S₀[0]`, with each later
//! segment holding larger keys. Chain 1 (back) mirrors it from the largest
//! key downwards. `S₀[l]` and `S₁[l]` meet in the middle.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::bpmap::BPMap;
use crate::cost::Cost;
use crate::op::{Key, Value};

/// Highest level whose capacity is representable; larger levels saturate.
pub const MAX_LEVEL: usize = 5;

/// Slack of level `k`: 2^(2^(k+1)), saturating.
pub fn c(k: usize) -> usize {
    let exp = 1u32.checked_shl(k as u32 + 1).unwrap_or(u32::MAX);
    1usize.checked_shl(exp).filter(|_| exp < usize::BITS).unwrap_or(usize::MAX)
}

/// Target size of level `k`: 2·c(k).
pub fn t(k: usize) -> usize {
    c(k).saturating_mul(2)
}

/// Smallest `j` with 2^(2^j) ≥ `x`, i.e. ⌈log₂log₂ x⌉ for x ≥ 2.
pub fn ceil_loglog(x: usize) -> usize {
    (0..=6)
        .find(|&j| (1u32 << j) >= usize::BITS || (1usize << (1u32 << j)) >= x)
        .expect("2^64 exceeds every usize")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Balance {
    Balanced,
    Overfull,
    Underfull,
}

/// Classifies a segment of `size` items at level `k`. A last segment has
/// target capacity `[0, t(k)]` and so is never underfull.
pub fn classify(size: usize, k: usize, last: bool) -> Balance {
    let (tk, ck) = (t(k), c(k));
    if size > tk.saturating_add(ck) {
        Balance::Overfull
    } else if !last && size < tk - ck {
        Balance::Underfull
    } else {
        Balance::Balanced
    }
}

/// Moves `q` items from `S_i[k]` (`lower`) to `S_i[k+1]` (`upper`).
pub fn shift_up<K: Key, V: Value>(side: usize, lower: &mut BPMap<K, V>, upper: &mut BPMap<K, V>, q: usize, cost: &mut Cost) {
    if q == 0 {
        return;
    }
    if side == 0 {
        let moved = lower.take_high(q, cost);
        upper.append_low(moved, cost);
    } else {
        let moved = lower.take_low(q, cost);
        upper.append_high(moved, cost);
    }
}

/// Moves `q` items from `S_i[k+1]` (`upper`) to `S_i[k]` (`lower`).
pub fn shift_down<K: Key, V: Value>(side: usize, lower: &mut BPMap<K, V>, upper: &mut BPMap<K, V>, q: usize, cost: &mut Cost) {
    if q == 0 {
        return;
    }
    if side == 0 {
        let moved = upper.take_low(q, cost);
        lower.append_high(moved, cost);
    } else {
        let moved = upper.take_high(q, cost);
        lower.append_low(moved, cost);
    }
}

/// Moves the `q` innermost items of a segment on side `from_side` to the
/// inner end of a segment on the other side.
pub fn shift_across<K: Key, V: Value>(from_side: usize, from: &mut BPMap<K, V>, to: &mut BPMap<K, V>, q: usize, cost: &mut Cost) {
    if q == 0 {
        return;
    }
    if from_side == 0 {
        let moved = from.take_high(q, cost);
        to.append_low(moved, cost);
    } else {
        let moved = from.take_low(q, cost);
        to.append_high(moved, cost);
    }
}

/// Both chains of a structure (or of a slab of one).
#[derive(Debug)]
pub struct Chains<K, V> {
    pub sides: [Vec<BPMap<K, V>>; 2],
    /// Set when the chains continue in segments held elsewhere, so that no
    /// segment here counts as last.
    pub open_top: bool,
    pub(crate) touched: AtomicU64,
}

impl<K: Key, V: Value> Default for Chains<K, V> {
    fn default() -> Self {
        Self::new()
    }
}

impl<K: Key, V: Value> Clone for Chains<K, V> {
    fn clone(&self) -> Self {
        Chains {
            sides: self.sides.clone(),
            open_top: self.open_top,
            touched: AtomicU64::new(self.touched.load(Ordering::Relaxed)),
        }
    }
}

impl<K: Key, V: Value> Chains<K, V> {
    /// One section of two empty segments.
    pub fn new() -> Self {
        Self::from_sides([vec![BPMap::new()], vec![BPMap::new()]])
    }

    pub fn from_sides(sides: [Vec<BPMap<K, V>>; 2]) -> Self {
        Chains {
            sides,
            open_top: false,
            touched: AtomicU64::new(0),
        }
    }

    /// Lays out sorted entries so that every non-last segment is exactly at
    /// target and the last section splits the remainder evenly.
    pub fn layout(mut all: BPMap<K, V>, cost: &mut Cost) -> Self {
        let mut sides: [Vec<BPMap<K, V>>; 2] = [Vec::new(), Vec::new()];
        let mut k = 0;
        while all.len() > 2 * (t(k).saturating_add(c(k))).min(usize::MAX / 2) {
            sides[0].push(all.take_low(t(k), cost));
            sides[1].push(all.take_high(t(k), cost));
            k += 1;
        }
        let half = all.len() / 2;
        sides[0].push(all.take_low(half, cost));
        sides[1].push(all);
        Self::from_sides(sides)
    }

    pub fn len(&self, i: usize) -> usize {
        self.sides[i].len()
    }

    pub fn sections(&self) -> usize {
        self.len(0).max(self.len(1))
    }

    pub fn seg(&self, i: usize, k: usize) -> Option<&BPMap<K, V>> {
        self.sides[i].get(k)
    }

    pub fn size(&self, i: usize, k: usize) -> usize {
        self.seg(i, k).map_or(0, |s| s.len())
    }

    pub fn is_last(&self, i: usize, k: usize) -> bool {
        !self.open_top && k + 1 == self.len(i)
    }

    pub fn status(&self, i: usize, k: usize) -> Balance {
        classify(self.size(i, k), k, self.is_last(i, k))
    }

    pub fn total_len(&self) -> usize {
        self.sides.iter().flatten().map(|s| s.len()).sum()
    }

    pub fn note_touch(&self, k: usize) {
        self.touched.fetch_or(1u64 << k.min(63), Ordering::Relaxed);
    }

    /// Bitmask of levels touched since the last call.
    pub fn take_touched(&self) -> u64 {
        self.touched.swap(0, Ordering::Relaxed)
    }

    /// Whether `key` fits `S₀[k]` (side 0) or `S₁[k]` (side 1) by range
    /// alone, ignoring the default placement at the last section.
    pub fn fits_range(&self, i: usize, k: usize, key: &K, cost: &mut Cost) -> bool {
        let Some(s) = self.seg(i, k) else { return false };
        cost.step(u64::from(s.height()) + 1);
        if i == 0 {
            s.max_key().is_some_and(|m| key <= m)
        } else {
            s.min_key().is_some_and(|m| key >= m)
        }
    }

    /// Where the fits-in rule puts `key`. Keys strictly between the chains
    /// go to the innermost front segment. With `open_top`, keys beyond the
    /// held sections yield `None`.
    pub fn locate(&self, key: &K, cost: &mut Cost) -> Option<(usize, usize)> {
        for k in 0..self.sections() {
            if self.fits_range(0, k, key, cost) {
                return Some((0, k));
            }
            if self.fits_range(1, k, key, cost) {
                return Some((1, k));
            }
        }
        if self.open_top {
            None
        } else if self.len(0) > 0 {
            Some((0, self.len(0) - 1))
        } else {
            Some((1, self.len(1) - 1))
        }
    }

    /// All entries in key order.
    pub fn entries(&self) -> Vec<(K, V)> {
        let mut out = Vec::with_capacity(self.total_len());
        for s in &self.sides[0] {
            out.extend(s.to_vec());
        }
        for s in self.sides[1].iter().rev() {
            out.extend(s.to_vec());
        }
        out
    }

    /// Joins every segment into one map, leaving a single empty section.
    pub fn drain_all(&mut self, cost: &mut Cost) -> BPMap<K, V> {
        let mut all = BPMap::new();
        for s in std::mem::take(&mut self.sides[0]) {
            all.append_high(s, cost);
        }
        for s in std::mem::take(&mut self.sides[1]).into_iter().rev() {
            all.append_high(s, cost);
        }
        self.sides = [vec![BPMap::new()], vec![BPMap::new()]];
        all
    }

    /// Sizes per side, for diagnostics.
    pub fn shape(&self) -> [Vec<usize>; 2] {
        [
            self.sides[0].iter().map(|s| s.len()).collect(),
            self.sides[1].iter().map(|s| s.len()).collect(),
        ]
    }

    /// Key order across all segments.
    pub fn check_order(&self) -> Result<(), String> {
        let mut prev: Option<K> = None;
        let ordered = self.sides[0].iter().chain(self.sides[1].iter().rev());
        for (n, s) in ordered.enumerate() {
            s.check().map_err(|e| format!("segment #{n}: {e}"))?;
            if let (Some(p), Some(m)) = (&prev, s.min_key()) {
                if p >= m {
                    return Err(format!("segment #{n} starts at {m:?}, not above {p:?}"));
                }
            }
            if let Some(m) = s.max_key() {
                prev = Some(m.clone());
            }
        }
        Ok(())
    }

    /// Every segment balanced, chains of equal length, keys ordered.
    pub fn check(&self) -> Result<(), String> {
        if self.len(0) != self.len(1) {
            return Err(format!("chain lengths differ: {:?}", self.shape()));
        }
        if self.len(0) == 0 {
            return Err("no sections".into());
        }
        for i in 0..2 {
            for k in 0..self.len(i) {
                if self.status(i, k) != Balance::Balanced {
                    return Err(format!(
                        "S{i}[{k}] {:?} with {} items, shape {:?}",
                        self.status(i, k),
                        self.size(i, k),
                        self.shape()
                    ));
                }
            }
        }
        self.check_order()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_sizes() {
        assert_eq!([c(0), c(1), c(2), c(3)], [4, 16, 256, 65536]);
        assert_eq!([t(0), t(1)], [8, 32]);
        assert_eq!(c(4), 1usize << 32);
        assert_eq!(c(5), usize::MAX);
        assert_eq!(t(6), usize::MAX);
    }

    #[test]
    fn loglog_values() {
        let got: Vec<usize> = [2, 3, 4, 5, 16, 17, 80, 256, 257, 320].iter().map(|&x| ceil_loglog(x)).collect();
        assert_eq!(got, vec![0, 1, 1, 2, 2, 3, 3, 3, 4, 4]);
    }

    #[test]
    fn classification() {
        assert_eq!(classify(12, 0, false), Balance::Balanced);
        assert_eq!(classify(13, 0, false), Balance::Overfull);
        assert_eq!(classify(3, 0, false), Balance::Underfull);
        assert_eq!(classify(4, 0, false), Balance::Balanced);
        assert_eq!(classify(0, 0, true), Balance::Balanced);
        assert_eq!(classify(13, 0, true), Balance::Overfull);
    }

    fn sorted(n: i64) -> BPMap<i64, i64> {
        BPMap::from_sorted((0..n).map(|k| (k, k)).collect()).unwrap()
    }

    #[test]
    fn layout_is_balanced_and_ordered() {
        for n in [0, 1, 7, 24, 25, 100, 1000, 5000] {
            let mut cost = Cost::ZERO;
            let ch = Chains::layout(sorted(n), &mut cost);
            ch.check().unwrap_or_else(|e| panic!("n={n}: {e}"));
            assert_eq!(ch.entries().len() as i64, n);
        }
    }

    #[test]
    fn locate_follows_fit_rule() {
        let mut cost = Cost::ZERO;
        let ch = Chains::layout(sorted(200), &mut cost);
        // 200 items: S[0] 8+8, S[1] 32+32, last section 60+60.
        assert_eq!(ch.shape(), [vec![8, 32, 60], vec![8, 32, 60]]);
        assert_eq!(ch.locate(&0, &mut cost), Some((0, 0)));
        assert_eq!(ch.locate(&7, &mut cost), Some((0, 0)));
        assert_eq!(ch.locate(&8, &mut cost), Some((0, 1)));
        assert_eq!(ch.locate(&199, &mut cost), Some((1, 0)));
        assert_eq!(ch.locate(&100, &mut cost), Some((1, 2)));
        assert_eq!(ch.locate(&99, &mut cost), Some((0, 2)));
        assert_eq!(ch.locate(&-5, &mut cost), Some((0, 0)));
        let empty: Chains<i64, i64> = Chains::new();
        assert_eq!(empty.locate(&3, &mut cost), Some((0, 0)));
    }

    #[test]
    fn shifts_keep_order() {
        let mut cost = Cost::ZERO;
        let mut ch = Chains::layout(sorted(200), &mut cost);
        let [front, back] = &mut ch.sides;
        let (a, b) = front.split_at_mut(1);
        shift_up(0, &mut a[0], &mut b[0], 3, &mut cost);
        let (a, b) = back.split_at_mut(1);
        shift_down(1, &mut a[0], &mut b[0], 2, &mut cost);
        shift_across(1, &mut back[2], &mut front[2], 4, &mut cost);
        ch.check_order().unwrap();
        assert_eq!(ch.shape(), [vec![5, 35, 64], vec![10, 30, 56]]);
    }
}
