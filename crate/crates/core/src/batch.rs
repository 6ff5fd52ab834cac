//! Immutable ordered batches with O(1) split, and the bunch container.
//!
//! A batch is a window into a shared array. Splitting only narrows the
//! window, so it never copies; joining copies every element once.

use std::cmp::Ordering;
use std::fmt;
use std::ops::Deref;
use std::sync::Arc;

use rayon::prelude::*;

use crate::cost::{ceil_log2, Cost, GRAIN};
use crate::error::{Error, Result};

pub struct Batch<T> {
    buf: Arc<[T]>,
    start: usize,
    end: usize,
}

impl<T> Clone for Batch<T> {
    fn clone(&self) -> Self {
        Batch {
            buf: Arc::clone(&self.buf),
            start: self.start,
            end: self.end,
        }
    }
}

impl<T: fmt::Debug> fmt::Debug for Batch<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.iter()).finish()
    }
}

impl<T: PartialEq> PartialEq for Batch<T> {
    fn eq(&self, other: &Self) -> bool {
        self.as_slice() == other.as_slice()
    }
}

impl<T> Deref for Batch<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        self.as_slice()
    }
}

impl<T> Default for Batch<T> {
    fn default() -> Self {
        Batch::empty()
    }
}

impl<T> From<Vec<T>> for Batch<T> {
    fn from(v: Vec<T>) -> Self {
        let end = v.len();
        Batch {
            buf: Arc::from(v),
            start: 0,
            end,
        }
    }
}

impl<T> FromIterator<T> for Batch<T> {
    fn from_iter<I: IntoIterator<Item = T>>(iter: I) -> Self {
        Batch::from(iter.into_iter().collect::<Vec<T>>())
    }
}

impl<T> Batch<T> {
    pub fn empty() -> Self {
        Batch::from(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn as_slice(&self) -> &[T] {
        &self.buf[self.start..self.end]
    }

    /// Left part holds the first `pos` elements.
    pub fn split(&self, pos: usize, cost: &mut Cost) -> Result<(Batch<T>, Batch<T>)> {
        if pos > self.len() {
            return Err(Error::Range {
                pos,
                len: self.len(),
            });
        }
        cost.step(1);
        let mid = self.start + pos;
        Ok((self.window(self.start, mid), self.window(mid, self.end)))
    }

    fn window(&self, start: usize, end: usize) -> Batch<T> {
        Batch {
            buf: Arc::clone(&self.buf),
            start,
            end,
        }
    }

    /// Splits at sorted positions; `cuts` must be non-decreasing and at most
    /// `len`.
    pub fn split_many(&self, cuts: &[usize], cost: &mut Cost) -> Result<Vec<Batch<T>>> {
        let mut out = Vec::with_capacity(cuts.len() + 1);
        let mut prev = 0;
        for &c in cuts {
            if c < prev || c > self.len() {
                return Err(Error::Range {
                    pos: c,
                    len: self.len(),
                });
            }
            out.push(self.window(self.start + prev, self.start + c));
            prev = c;
        }
        out.push(self.window(self.start + prev, self.end));
        cost.parallel(cuts.len() as u64 + 1, ceil_log2(cuts.len() + 1) + 1);
        Ok(out)
    }
}

impl<T: Clone + Send + Sync> Batch<T> {
    /// Elements whose key is `≤ pivot` go left, the rest right; relative
    /// order is kept on both sides.
    pub fn partition_by_pivot<K, F>(&self, pivot: &K, key: F, cost: &mut Cost) -> (Batch<T>, Batch<T>)
    where
        K: Ord + Sync,
        F: Fn(&T) -> &K + Sync,
    {
        let n = self.len();
        cost.parallel(n as u64, ceil_log2(n) + 1);
        let s = self.as_slice();
        if n < GRAIN {
            let (lo, hi): (Vec<T>, Vec<T>) = s.iter().cloned().partition(|x| key(x) <= pivot);
            return (lo.into(), hi.into());
        }
        let (lo, hi) = rayon::join(
            || s.par_iter().filter(|x| key(x) <= pivot).cloned().collect::<Vec<T>>(),
            || s.par_iter().filter(|x| key(x) > pivot).cloned().collect::<Vec<T>>(),
        );
        (lo.into(), hi.into())
    }

    /// Splits a key-sorted batch around sorted pivots. Part `i` holds the
    /// elements in `(pivots[i-1], pivots[i]]`; the last part holds the rest.
    pub fn partition_sorted<K, F>(&self, pivots: &[K], key: F, cost: &mut Cost) -> Result<Vec<Batch<T>>>
    where
        K: Ord,
        F: Fn(&T) -> &K,
    {
        if cfg!(debug_assertions) {
            if !self.windows(2).all(|w| key(&w[0]) <= key(&w[1])) {
                return Err(Error::Contract("partition_sorted: batch not sorted".into()));
            }
            if !pivots.windows(2).all(|w| w[0] <= w[1]) {
                return Err(Error::Contract("partition_sorted: pivots not sorted".into()));
            }
        }
        let s = self.as_slice();
        let mut cuts = Vec::with_capacity(pivots.len());
        let mut search = Cost::ZERO;
        for p in pivots {
            cuts.push(s.partition_point(|x| key(x) <= p));
            search.work += ceil_log2(s.len() + 1) + 1;
        }
        search.span = ceil_log2(s.len() + 1) + 1;
        cost.then(search);
        self.split_many(&cuts, cost)
    }

    /// Concatenates `parts` in order.
    pub fn join(parts: &[Batch<T>], cost: &mut Cost) -> Batch<T> {
        let total: usize = parts.iter().map(|p| p.len()).sum();
        // Prefix sums over part sizes, then one parallel copy.
        cost.parallel(
            (total + parts.len()) as u64,
            ceil_log2(parts.len() + 1) + ceil_log2(total + 1) + 1,
        );
        if parts.len() == 1 {
            return parts[0].clone();
        }
        if total < GRAIN {
            let mut v = Vec::with_capacity(total);
            for p in parts {
                v.extend_from_slice(p.as_slice());
            }
            return v.into();
        }
        let v: Vec<T> = parts
            .par_iter()
            .flat_map_iter(|p| p.as_slice().iter().cloned())
            .collect();
        v.into()
    }

    /// Stable merge of two sorted batches; among equals, `a` comes first.
    pub fn merge<F>(a: &Batch<T>, b: &Batch<T>, cmp: F, cost: &mut Cost) -> Batch<T>
    where
        F: Fn(&T, &T) -> Ordering + Sync,
    {
        merge_slices::<T, F, fn(T, T) -> T>(a.as_slice(), b.as_slice(), &cmp, None, cost).into()
    }

    /// Merge in which an element of `a` equal to one of `b` collapses with
    /// it into `combine(a_elem, b_elem)`. Each input must be free of
    /// duplicates, so equal runs have length at most two.
    pub fn merge_with<F, C>(a: &Batch<T>, b: &Batch<T>, cmp: F, combine: C, cost: &mut Cost) -> Batch<T>
    where
        F: Fn(&T, &T) -> Ordering + Sync,
        C: Fn(T, T) -> T + Sync,
    {
        merge_slices(a.as_slice(), b.as_slice(), &cmp, Some(&combine), cost).into()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.as_slice().to_vec()
    }
}

fn merge_seq<T, F, C>(a: &[T], b: &[T], cmp: &F, combine: Option<&C>, out: &mut Vec<T>) -> u64
where
    T: Clone,
    F: Fn(&T, &T) -> Ordering,
    C: Fn(T, T) -> T,
{
    let (mut i, mut j, mut cmps) = (0, 0, 0u64);
    while i < a.len() && j < b.len() {
        cmps += 1;
        match (cmp(&a[i], &b[j]), combine) {
            (Ordering::Greater, _) => {
                out.push(b[j].clone());
                j += 1;
            }
            (Ordering::Equal, Some(f)) => {
                out.push(f(a[i].clone(), b[j].clone()));
                i += 1;
                j += 1;
            }
            _ => {
                out.push(a[i].clone());
                i += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    cmps
}

/// Cuts the merge into independent pieces by binary-searching every
/// `GRAIN`-th element of `b` in `a`, then merges the pieces in parallel.
/// Without combining, `a`'s elements equal to the cut element stay in the
/// earlier piece (stability); with combining they move to the later piece
/// so that equal pairs are never separated.
fn merge_slices<T, F, C>(a: &[T], b: &[T], cmp: &F, combine: Option<&C>, cost: &mut Cost) -> Vec<T>
where
    T: Clone + Send + Sync,
    F: Fn(&T, &T) -> Ordering + Sync,
    C: Fn(T, T) -> T + Sync,
{
    let n = a.len() + b.len();
    if n < 2 * GRAIN || b.len() < GRAIN {
        let mut out = Vec::with_capacity(n);
        let cmps = merge_seq(a, b, cmp, combine, &mut out);
        cost.step(cmps);
        return out;
    }
    let mut bounds = vec![(0usize, 0usize)];
    let mut search = 0u64;
    let mut j = GRAIN;
    while j < b.len() {
        let x = &b[j];
        let ra = if combine.is_some() {
            a.partition_point(|y| cmp(y, x) == Ordering::Less)
        } else {
            a.partition_point(|y| cmp(y, x) != Ordering::Greater)
        };
        bounds.push((ra, j));
        search += ceil_log2(a.len() + 1) + 1;
        j += GRAIN;
    }
    bounds.push((a.len(), b.len()));
    let pieces: Vec<(Vec<T>, u64)> = bounds
        .par_windows(2)
        .map(|w| {
            let (a0, b0) = w[0];
            let (a1, b1) = w[1];
            let mut out = Vec::with_capacity(a1 - a0 + b1 - b0);
            let c = merge_seq(&a[a0..a1], &b[b0..b1], cmp, combine, &mut out);
            (out, c)
        })
        .collect();
    let piece_span = pieces.iter().map(|p| p.1).max().unwrap_or(0);
    let cmps: u64 = pieces.iter().map(|p| p.1).sum();
    cost.parallel(search + cmps, ceil_log2(a.len() + 1) + 1 + piece_span);
    let mut out = Vec::with_capacity(n);
    for (p, _) in pieces {
        out.extend(p);
    }
    out
}

/// An unordered collection of batches with O(1) addition.
pub struct Bunch<T> {
    parts: Vec<Batch<T>>,
    size: usize,
}

impl<T> Default for Bunch<T> {
    fn default() -> Self {
        Bunch {
            parts: Vec::new(),
            size: 0,
        }
    }
}

impl<T> Clone for Bunch<T> {
    fn clone(&self) -> Self {
        Bunch {
            parts: self.parts.clone(),
            size: self.size,
        }
    }
}

impl<T: fmt::Debug> fmt::Debug for Bunch<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Bunch")
            .field("size", &self.size)
            .field("parts", &self.parts.len())
            .finish()
    }
}

impl<T> Bunch<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn parts(&self) -> &[Batch<T>] {
        &self.parts
    }

    /// Records `b` as one more part without looking at its elements.
    pub fn add(&mut self, b: Batch<T>, cost: &mut Cost) {
        cost.step(1);
        if !b.is_empty() {
            self.size += b.len();
            self.parts.push(b);
        }
    }

    /// Moves all parts of `other` into `self`.
    pub fn absorb(&mut self, other: Bunch<T>, cost: &mut Cost) {
        cost.step(other.parts.len() as u64);
        self.size += other.size;
        self.parts.extend(other.parts);
    }
}

impl<T: Clone + Send + Sync> Bunch<T> {
    /// All elements, parts in the order they were added.
    pub fn to_batch(&self, cost: &mut Cost) -> Batch<T> {
        Batch::join(&self.parts, cost)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(v: &[i64]) -> Batch<i64> {
        Batch::from(v.to_vec())
    }

    fn id(x: &i64) -> &i64 {
        x
    }

    #[test]
    fn split_basic() {
        let mut c = Cost::ZERO;
        let (l, r) = b(&[1, 2, 3, 4]).split(2, &mut c).unwrap();
        assert_eq!((l.to_vec(), r.to_vec()), (vec![1, 2], vec![3, 4]));
        let (l, r) = b(&[7]).split(0, &mut c).unwrap();
        assert!(l.is_empty());
        assert_eq!(r.to_vec(), vec![7]);
        assert!(matches!(b(&[1]).split(2, &mut c), Err(Error::Range { pos: 2, len: 1 })));
    }

    #[test]
    fn split_work_is_logarithmic() {
        let big: Batch<i64> = (0..1000).collect();
        let mut c = Cost::ZERO;
        let (l, r) = big.split(500, &mut c).unwrap();
        assert_eq!(l.len(), 500);
        assert_eq!(r[0], 500);
        // A copying split would touch all 1000 elements.
        assert!(c.work as f64 <= 16.0 * 1000f64.log2());
    }

    #[test]
    fn pivot_partition_examples() {
        let mut c = Cost::ZERO;
        let (lo, hi) = b(&[3, 1, 4, 1, 5]).partition_by_pivot(&3, id, &mut c);
        assert_eq!((lo.to_vec(), hi.to_vec()), (vec![3, 1, 1], vec![4, 5]));
        let (lo, hi) = b(&[]).partition_by_pivot(&3, id, &mut c);
        assert!(lo.is_empty() && hi.is_empty());
    }

    #[test]
    fn sorted_partition_examples() {
        let mut c = Cost::ZERO;
        let parts = b(&[1, 2, 3, 4, 5, 6, 7, 8, 9, 10])
            .partition_sorted(&[3, 7], id, &mut c)
            .unwrap();
        let parts: Vec<Vec<i64>> = parts.iter().map(|p| p.to_vec()).collect();
        assert_eq!(parts, vec![vec![1, 2, 3], vec![4, 5, 6, 7], vec![8, 9, 10]]);
        let one = b(&[4, 5]).partition_sorted(&[], id, &mut c).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].to_vec(), vec![4, 5]);
    }

    #[test]
    fn unsorted_input_is_a_contract_violation() {
        if cfg!(debug_assertions) {
            let mut c = Cost::ZERO;
            assert!(matches!(
                b(&[2, 1]).partition_sorted(&[1], id, &mut c),
                Err(Error::Contract(_))
            ));
        }
    }

    #[test]
    fn join_examples() {
        let mut c = Cost::ZERO;
        assert_eq!(Batch::join(&[b(&[1]), b(&[2, 3]), b(&[])], &mut c).to_vec(), vec![1, 2, 3]);
        assert!(Batch::<i64>::join(&[], &mut c).is_empty());
    }

    #[test]
    fn join_of_singletons_has_log_depth() {
        let parts: Vec<Batch<i64>> = (0..1000).map(|i| b(&[i])).collect();
        let mut c = Cost::ZERO;
        let j = Batch::join(&parts, &mut c);
        assert_eq!(j.to_vec(), (0..1000).collect::<Vec<_>>());
        assert!(c.span as f64 <= 4.0 * 1000f64.log2());
    }

    #[test]
    fn merge_examples() {
        let mut c = Cost::ZERO;
        let cmp = |x: &i64, y: &i64| x.cmp(y);
        assert_eq!(Batch::merge(&b(&[1, 3]), &b(&[2, 3]), cmp, &mut c).to_vec(), vec![1, 2, 3, 3]);
        let kept = Batch::merge_with(&b(&[1, 3]), &b(&[2, 3]), cmp, |l, _| l, &mut c);
        assert_eq!(kept.to_vec(), vec![1, 2, 3]);
    }

    #[test]
    fn merge_is_stable() {
        let mut c = Cost::ZERO;
        let a: Batch<(i64, char)> = vec![(1, 'a'), (2, 'a')].into();
        let bb: Batch<(i64, char)> = vec![(1, 'b'), (2, 'b')].into();
        let m = Batch::merge(&a, &bb, |x, y| x.0.cmp(&y.0), &mut c);
        assert_eq!(m.to_vec(), vec![(1, 'a'), (1, 'b'), (2, 'a'), (2, 'b')]);
    }

    #[test]
    fn bunch_examples() {
        let mut c = Cost::ZERO;
        let mut u = Bunch::new();
        u.add(b(&[1, 2]), &mut c);
        assert_eq!(u.len(), 2);
        u.add(b(&[]), &mut c);
        assert_eq!(u.len(), 2);
        assert!(Bunch::<i64>::new().to_batch(&mut c).is_empty());

        let mut v = Bunch::new();
        v.add(b(&[1]), &mut c);
        v.add(b(&[2, 3]), &mut c);
        let first = v.to_batch(&mut c).to_vec();
        assert_eq!(first, v.to_batch(&mut c).to_vec());
        let mut sorted = first.clone();
        sorted.sort();
        assert_eq!(sorted, vec![1, 2, 3]);
    }

    #[test]
    fn bunch_add_work_is_constant() {
        let mut u = Bunch::new();
        let mut worst = 0;
        for i in 0..1000 {
            let mut c = Cost::ZERO;
            u.add((i * 10..i * 10 + 10).collect(), &mut c);
            worst = worst.max(c.work);
        }
        assert_eq!(u.len(), 10_000);
        assert_eq!(worst, 1);
    }
}
