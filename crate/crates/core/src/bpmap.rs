//! Join-based AVL map with batch search, sorted batch access, and
//! logarithmic split/join.

use std::cmp::Ordering;
use std::fmt;

use rayon::prelude::*;

use crate::cost::{ceil_log2, Cost};
use crate::error::{Error, Result};
use crate::op::{apply_to_slot, Key, Operation, Value};

/// Sub-batches at least this large recurse on separate tasks.
const FORK_AT: usize = 256;

type Link<K, V> = Option<Box<Node<K, V>>>;

struct Node<K, V> {
    key: K,
    val: V,
    left: Link<K, V>,
    right: Link<K, V>,
    height: u32,
    size: usize,
}

fn height<K, V>(t: &Link<K, V>) -> u32 {
    t.as_ref().map_or(0, |n| n.height)
}

fn size<K, V>(t: &Link<K, V>) -> usize {
    t.as_ref().map_or(0, |n| n.size)
}

fn fix<K, V>(n: &mut Node<K, V>) {
    n.height = height(&n.left).max(height(&n.right)) + 1;
    n.size = size(&n.left) + size(&n.right) + 1;
}

fn node<K, V>(left: Link<K, V>, key: K, val: V, right: Link<K, V>) -> Box<Node<K, V>> {
    let mut n = Box::new(Node {
        key,
        val,
        left,
        right,
        height: 0,
        size: 0,
    });
    fix(&mut n);
    n
}

fn rot_left<K, V>(mut n: Box<Node<K, V>>) -> Box<Node<K, V>> {
    let mut r = n.right.take().expect("rotation needs a right child");
    n.right = r.left.take();
    fix(&mut n);
    r.left = Some(n);
    fix(&mut r);
    r
}

fn rot_right<K, V>(mut n: Box<Node<K, V>>) -> Box<Node<K, V>> {
    let mut l = n.left.take().expect("rotation needs a left child");
    n.left = l.right.take();
    fix(&mut n);
    l.right = Some(n);
    fix(&mut l);
    l
}

/// `l` is taller than `r` by at least 2.
fn join_right<K, V>(l: Box<Node<K, V>>, k: K, v: V, r: Link<K, V>, cost: &mut Cost) -> Box<Node<K, V>> {
    cost.step(1);
    let Node {
        key, val, left, right, ..
    } = *l;
    if height(&right) <= height(&r) + 1 {
        let t = node(right, k, v, r);
        if t.height <= height(&left) + 1 {
            node(left, key, val, Some(t))
        } else {
            rot_left(node(left, key, val, Some(rot_right(t))))
        }
    } else {
        let t = join_right(right.expect("taller side is non-empty"), k, v, r, cost);
        let th = t.height;
        let n = node(left, key, val, Some(t));
        if th <= height(&n.left) + 1 {
            n
        } else {
            rot_left(n)
        }
    }
}

/// `r` is taller than `l` by at least 2.
fn join_left<K, V>(l: Link<K, V>, k: K, v: V, r: Box<Node<K, V>>, cost: &mut Cost) -> Box<Node<K, V>> {
    cost.step(1);
    let Node {
        key, val, left, right, ..
    } = *r;
    if height(&left) <= height(&l) + 1 {
        let t = node(l, k, v, left);
        if t.height <= height(&right) + 1 {
            node(Some(t), key, val, right)
        } else {
            rot_right(node(Some(rot_left(t)), key, val, right))
        }
    } else {
        let t = join_left(l, k, v, left.expect("taller side is non-empty"), cost);
        let th = t.height;
        let n = node(Some(t), key, val, right);
        if th <= height(&n.right) + 1 {
            n
        } else {
            rot_right(n)
        }
    }
}

fn join3<K, V>(l: Link<K, V>, k: K, v: V, r: Link<K, V>, cost: &mut Cost) -> Box<Node<K, V>> {
    let (hl, hr) = (height(&l), height(&r));
    if hl > hr + 1 {
        join_right(l.unwrap(), k, v, r, cost)
    } else if hr > hl + 1 {
        join_left(l, k, v, r.unwrap(), cost)
    } else {
        cost.step(1);
        node(l, k, v, r)
    }
}

fn split_last<K, V>(t: Box<Node<K, V>>, cost: &mut Cost) -> (Link<K, V>, K, V) {
    cost.step(1);
    let Node {
        key, val, left, right, ..
    } = *t;
    match right {
        None => (left, key, val),
        Some(r) => {
            let (rest, k, v) = split_last(r, cost);
            (Some(join3(left, key, val, rest, cost)), k, v)
        }
    }
}

fn join2<K, V>(l: Link<K, V>, r: Link<K, V>, cost: &mut Cost) -> Link<K, V> {
    match l {
        None => r,
        Some(l) => {
            let (rest, k, v) = split_last(l, cost);
            Some(join3(rest, k, v, r, cost))
        }
    }
}

fn split_key<K: Ord, V>(t: Link<K, V>, key: &K, cost: &mut Cost) -> (Link<K, V>, Option<(K, V)>, Link<K, V>) {
    let Some(n) = t else {
        return (None, None, None);
    };
    cost.step(1);
    let Node {
        key: k, val, left, right, ..
    } = *n;
    match key.cmp(&k) {
        Ordering::Equal => (left, Some((k, val)), right),
        Ordering::Less => {
            let (a, m, b) = split_key(left, key, cost);
            (a, m, Some(join3(b, k, val, right, cost)))
        }
        Ordering::Greater => {
            let (a, m, b) = split_key(right, key, cost);
            (Some(join3(left, k, val, a, cost)), m, b)
        }
    }
}

fn split_rank<K, V>(t: Link<K, V>, r: usize, cost: &mut Cost) -> (Link<K, V>, Link<K, V>) {
    let Some(n) = t else {
        return (None, None);
    };
    if r == 0 {
        return (None, Some(n));
    }
    if r == n.size {
        return (Some(n), None);
    }
    cost.step(1);
    let Node {
        key, val, left, right, ..
    } = *n;
    let ls = size(&left);
    if r <= ls {
        let (a, b) = split_rank(left, r, cost);
        (a, Some(join3(b, key, val, right, cost)))
    } else {
        let (a, b) = split_rank(right, r - ls - 1, cost);
        (Some(join3(left, key, val, a, cost)), b)
    }
}

fn build<K, V, I: Iterator<Item = (K, V)>>(n: usize, it: &mut I) -> Link<K, V> {
    if n == 0 {
        return None;
    }
    let left = build(n / 2, it);
    let (k, v) = it.next().expect("iterator holds n items");
    let right = build(n - n / 2 - 1, it);
    Some(node(left, k, v, right))
}

struct Slot<K, I, O> {
    key: K,
    input: Option<I>,
    output: Option<O>,
}

fn apply<K, V, I, O, F>(t: Link<K, V>, items: &mut [Slot<K, I, O>], f: &F, cost: &mut Cost) -> Link<K, V>
where
    K: Key,
    V: Value,
    I: Send,
    O: Send,
    F: Fn(&K, Option<V>, I) -> (Option<V>, O) + Sync,
{
    if items.is_empty() {
        return t;
    }
    let Some(n) = t else {
        let mut fresh = Vec::new();
        for s in items.iter_mut() {
            let (nv, o) = f(&s.key, None, s.input.take().expect("input used once"));
            s.output = Some(o);
            if let Some(v) = nv {
                fresh.push((s.key.clone(), v));
            }
        }
        cost.parallel(items.len() as u64, ceil_log2(items.len()) + 1);
        let len = fresh.len();
        return build(len, &mut fresh.into_iter());
    };
    let Node {
        key, val, left, right, ..
    } = *n;
    cost.step(ceil_log2(items.len() + 1) + 1);
    let pos = items.partition_point(|s| s.key < key);
    let (lo, rest) = items.split_at_mut(pos);
    let hit = rest.first().is_some_and(|s| s.key == key);
    let (mid, hi) = rest.split_at_mut(usize::from(hit));
    let root = match mid.first_mut() {
        Some(s) => {
            let (nv, o) = f(&key, Some(val), s.input.take().expect("input used once"));
            s.output = Some(o);
            nv
        }
        None => Some(val),
    };
    let fork = lo.len() + hi.len() >= FORK_AT;
    let (l, r) = cost.join(fork, |c| apply(left, lo, f, c), |c| apply(right, hi, f, c));
    match root {
        Some(v) => Some(join3(l, key, v, r, cost)),
        None => join2(l, r, cost),
    }
}

pub struct BPMap<K, V> {
    root: Link<K, V>,
}

impl<K, V> Default for BPMap<K, V> {
    fn default() -> Self {
        BPMap { root: None }
    }
}

impl<K: fmt::Debug, V: fmt::Debug> fmt::Debug for BPMap<K, V> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map().entries(self.iter()).finish()
    }
}

impl<K: Clone, V: Clone> Clone for BPMap<K, V> {
    fn clone(&self) -> Self {
        fn go<K: Clone, V: Clone>(t: &Link<K, V>) -> Link<K, V> {
            t.as_ref().map(|n| {
                Box::new(Node {
                    key: n.key.clone(),
                    val: n.val.clone(),
                    left: go(&n.left),
                    right: go(&n.right),
                    height: n.height,
                    size: n.size,
                })
            })
        }
        BPMap { root: go(&self.root) }
    }
}

impl<K, V> Drop for BPMap<K, V> {
    fn drop(&mut self) {
        // Iterative teardown keeps deep drops off the stack.
        let mut stack: Vec<Box<Node<K, V>>> = self.root.take().into_iter().collect();
        while let Some(mut n) = stack.pop() {
            stack.extend(n.left.take());
            stack.extend(n.right.take());
        }
    }
}

impl<K, V> BPMap<K, V> {
    pub fn new() -> Self {
        BPMap { root: None }
    }

    pub fn len(&self) -> usize {
        size(&self.root)
    }

    pub fn is_empty(&self) -> bool {
        self.root.is_none()
    }

    pub fn height(&self) -> u32 {
        height(&self.root)
    }

    pub fn iter(&self) -> Iter<'_, K, V> {
        let mut it = Iter { stack: Vec::new() };
        it.push_left(self.root.as_deref());
        it
    }

    pub fn first(&self) -> Option<(&K, &V)> {
        let mut n = self.root.as_deref()?;
        while let Some(l) = n.left.as_deref() {
            n = l;
        }
        Some((&n.key, &n.val))
    }

    pub fn last(&self) -> Option<(&K, &V)> {
        let mut n = self.root.as_deref()?;
        while let Some(r) = n.right.as_deref() {
            n = r;
        }
        Some((&n.key, &n.val))
    }

    pub fn min_key(&self) -> Option<&K> {
        self.first().map(|e| e.0)
    }

    pub fn max_key(&self) -> Option<&K> {
        self.last().map(|e| e.0)
    }
}

impl<K: Key, V: Value> BPMap<K, V> {
    /// Builds a balanced map from strictly increasing entries.
    pub fn from_sorted(entries: Vec<(K, V)>) -> Result<Self> {
        if !entries.windows(2).all(|w| w[0].0 < w[1].0) {
            return Err(Error::Contract("from_sorted: keys not strictly increasing".into()));
        }
        let n = entries.len();
        Ok(BPMap {
            root: build(n, &mut entries.into_iter()),
        })
    }

    /// Lookup plus the number of nodes visited.
    pub fn get_counted(&self, key: &K) -> (Option<&V>, u64) {
        let mut steps = 0;
        let mut t = self.root.as_deref();
        while let Some(n) = t {
            steps += 1;
            match key.cmp(&n.key) {
                Ordering::Equal => return (Some(&n.val), steps),
                Ordering::Less => t = n.left.as_deref(),
                Ordering::Greater => t = n.right.as_deref(),
            }
        }
        (None, steps.max(1))
    }

    pub fn get(&self, key: &K) -> Option<&V> {
        self.get_counted(key).0
    }

    pub fn contains(&self, key: &K) -> bool {
        self.get(key).is_some()
    }

    /// Independent lookups; duplicates allowed. Also returns each query's
    /// path length.
    pub fn search_counted(&self, keys: &[K]) -> Vec<(Option<V>, u64)> {
        let one = |k: &K| {
            let (v, s) = self.get_counted(k);
            (v.cloned(), s)
        };
        if keys.len() >= FORK_AT {
            keys.par_iter().map(one).collect()
        } else {
            keys.iter().map(one).collect()
        }
    }

    pub fn unsorted_batch_search(&self, keys: &[K], cost: &mut Cost) -> Vec<Option<V>> {
        let found = self.search_counted(keys);
        let work: u64 = found.iter().map(|x| x.1).sum();
        let deepest = found.iter().map(|x| x.1).max().unwrap_or(0);
        cost.parallel(work, deepest + ceil_log2(keys.len()) + 1);
        found.into_iter().map(|x| x.0).collect()
    }

    /// Applies `f` to the slot of every key in `items`, which must be
    /// sorted with distinct keys. `f` gets the current value (if any) and
    /// returns the new one together with an output.
    pub fn batch_apply<I, O, F>(&mut self, items: Vec<(K, I)>, f: F, cost: &mut Cost) -> Result<Vec<O>>
    where
        I: Send,
        O: Send,
        F: Fn(&K, Option<V>, I) -> (Option<V>, O) + Sync,
    {
        if !items.windows(2).all(|w| w[0].0 < w[1].0) {
            return Err(Error::Contract(
                "batch access needs sorted, distinct keys".into(),
            ));
        }
        let mut slots: Vec<Slot<K, I, O>> = items
            .into_iter()
            .map(|(key, input)| Slot {
                key,
                input: Some(input),
                output: None,
            })
            .collect();
        let root = self.root.take();
        self.root = apply(root, &mut slots, &f, cost);
        Ok(slots
            .into_iter()
            .map(|s| s.output.expect("every slot visited"))
            .collect())
    }

    /// Performs key-sorted operations on distinct keys and returns, for
    /// each, the value bound to its key beforehand.
    pub fn sorted_batch_access(&mut self, ops: &[Operation<K, V>], cost: &mut Cost) -> Result<Vec<Option<V>>> {
        let items: Vec<(K, &Operation<K, V>)> = ops.iter().map(|op| (op.key().clone(), op)).collect();
        self.batch_apply(
            items,
            |_, cur, op| {
                let prior = cur.clone();
                (apply_to_slot(op, cur), prior)
            },
            cost,
        )
    }

    /// Left part keeps ranks `1..=r`.
    pub fn split_at_rank(mut self, r: usize, cost: &mut Cost) -> Result<(Self, Self)> {
        if r > self.len() {
            return Err(Error::Range { pos: r, len: self.len() });
        }
        let (a, b) = split_rank(self.root.take(), r, cost);
        Ok((BPMap { root: a }, BPMap { root: b }))
    }

    /// Splits into keys `< key`, the entry at `key`, and keys `> key`.
    pub fn split_key(mut self, key: &K, cost: &mut Cost) -> (Self, Option<(K, V)>, Self) {
        let (a, m, b) = split_key(self.root.take(), key, cost);
        (BPMap { root: a }, m, BPMap { root: b })
    }

    /// Number of keys `< key`.
    pub fn rank_of(&self, key: &K, cost: &mut Cost) -> usize {
        let mut rank = 0;
        let mut t = self.root.as_deref();
        while let Some(n) = t {
            cost.step(1);
            match key.cmp(&n.key) {
                Ordering::Greater => {
                    rank += size(&n.left) + 1;
                    t = n.right.as_deref();
                }
                Ordering::Equal => return rank + size(&n.left),
                Ordering::Less => t = n.left.as_deref(),
            }
        }
        rank
    }

    pub fn join_maps(mut lo: Self, mut hi: Self, cost: &mut Cost) -> Result<Self> {
        if let (Some(a), Some(b)) = (lo.max_key(), hi.min_key()) {
            cost.step(u64::from(lo.height() + hi.height()));
            if a >= b {
                return Err(Error::Contract(format!(
                    "join_maps: ranges overlap ({a:?} >= {b:?})"
                )));
            }
        }
        Ok(BPMap {
            root: join2(lo.root.take(), hi.root.take(), cost),
        })
    }

    /// Removes and returns the `q` smallest entries.
    pub fn take_low(&mut self, q: usize, cost: &mut Cost) -> Self {
        let q = q.min(self.len());
        let (a, b) = split_rank(self.root.take(), q, cost);
        self.root = b;
        BPMap { root: a }
    }

    /// Removes and returns the `q` largest entries.
    pub fn take_high(&mut self, q: usize, cost: &mut Cost) -> Self {
        let keep = self.len() - q.min(self.len());
        let (a, b) = split_rank(self.root.take(), keep, cost);
        self.root = a;
        BPMap { root: b }
    }

    /// Appends entries that all sort after `self`'s.
    pub fn append_high(&mut self, hi: Self, cost: &mut Cost) {
        let lo = std::mem::take(self);
        *self = Self::join_maps(lo, hi, cost).expect("append_high: ranges overlap");
    }

    /// Prepends entries that all sort before `self`'s.
    pub fn append_low(&mut self, lo: Self, cost: &mut Cost) {
        let hi = std::mem::take(self);
        *self = Self::join_maps(lo, hi, cost).expect("append_low: ranges overlap");
    }

    pub fn to_vec(&self) -> Vec<(K, V)> {
        self.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    /// Checks ordering, AVL balance, and cached sizes and heights.
    pub fn check(&self) -> std::result::Result<(), String> {
        fn go<K: Ord + fmt::Debug, V>(t: &Link<K, V>, lo: Option<&K>, hi: Option<&K>) -> std::result::Result<(u32, usize), String> {
            let Some(n) = t else { return Ok((0, 0)) };
            if lo.is_some_and(|l| n.key <= *l) || hi.is_some_and(|h| n.key >= *h) {
                return Err(format!("key {:?} out of order", n.key));
            }
            let (hl, sl) = go(&n.left, lo, Some(&n.key))?;
            let (hr, sr) = go(&n.right, Some(&n.key), hi)?;
            if hl.abs_diff(hr) > 1 {
                return Err(format!("unbalanced at {:?}: {hl} vs {hr}", n.key));
            }
            let (h, s) = (hl.max(hr) + 1, sl + sr + 1);
            if h != n.height || s != n.size {
                return Err(format!("stale cache at {:?}", n.key));
            }
            Ok((h, s))
        }
        go(&self.root, None, None).map(|_| ())
    }
}

pub struct Iter<'a, K, V> {
    stack: Vec<&'a Node<K, V>>,
}

impl<'a, K, V> Iter<'a, K, V> {
    fn push_left(&mut self, mut t: Option<&'a Node<K, V>>) {
        while let Some(n) = t {
            self.stack.push(n);
            t = n.left.as_deref();
        }
    }
}

impl<'a, K, V> Iterator for Iter<'a, K, V> {
    type Item = (&'a K, &'a V);

    fn next(&mut self) -> Option<Self::Item> {
        let n = self.stack.pop()?;
        self.push_left(n.right.as_deref());
        Some((&n.key, &n.val))
    }
}
