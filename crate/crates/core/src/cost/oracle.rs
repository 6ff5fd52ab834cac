use std::collections::{BTreeMap, HashMap};
use std::fmt;

use crate::op::{apply_to_slot, Key, OpId, Operation, Request, Value};

/// Sequential reference map; every operation reports the prior value.
#[derive(Clone, Debug, Default)]
pub struct ReferenceMap<K, V> {
    map: BTreeMap<K, V>,
}

impl<K: Key, V: Value> ReferenceMap<K, V> {
    pub fn new() -> Self {
        ReferenceMap { map: BTreeMap::new() }
    }

    pub fn apply(&mut self, op: &Operation<K, V>) -> Option<V> {
        let prior = self.map.get(op.key()).cloned();
        match apply_to_slot(op, prior.clone()) {
            Some(v) => {
                if !matches!(op, Operation::Search(_)) {
                    self.map.insert(op.key().clone(), v);
                }
            }
            None => {
                self.map.remove(op.key());
            }
        }
        prior
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn entries(&self) -> Vec<(K, V)> {
        self.map.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    pub fn inner(&self) -> &BTreeMap<K, V> {
        &self.map
    }
}

/// Fenwick tree over presence flags of a fixed key universe.
#[derive(Clone, Debug)]
struct Fenwick {
    tree: Vec<i64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick { tree: vec![0; n + 1] }
    }

    fn add(&mut self, i: usize, d: i64) {
        let mut i = i + 1;
        while i < self.tree.len() {
            self.tree[i] += d;
            i += i & i.wrapping_neg();
        }
    }

    /// Sum over positions `0..i`.
    fn prefix(&self, i: usize) -> i64 {
        let mut i = i;
        let mut s = 0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Replays operations against a reference map and accumulates the finger
/// bound: each operation adds `log₂ r + 1`, where `r` is the number of items
/// from its key to the nearer end of the map, counting the key itself.
#[derive(Clone, Debug)]
pub struct FingerOracle<K, V> {
    universe: Vec<K>,
    present: Fenwick,
    reference: ReferenceMap<K, V>,
    f_total: f64,
    ops: u64,
}

impl<K: Key, V: Value> FingerOracle<K, V> {
    /// `keys` must contain every key the oracle will ever see.
    pub fn new<I: IntoIterator<Item = K>>(keys: I) -> Self {
        let mut universe: Vec<K> = keys.into_iter().collect();
        universe.sort();
        universe.dedup();
        let present = Fenwick::new(universe.len());
        FingerOracle {
            universe,
            present,
            reference: ReferenceMap::new(),
            f_total: 0.0,
            ops: 0,
        }
    }

    pub fn for_requests(reqs: &[Request<K, V>]) -> Self {
        Self::new(reqs.iter().map(|r| r.op.key().clone()))
    }

    fn slot(&self, key: &K) -> usize {
        self.universe
            .binary_search(key)
            .unwrap_or_else(|_| panic!("key {key:?} outside the oracle universe"))
    }

    /// Finger distance of `key` in the current contents, without applying
    /// anything.
    pub fn distance(&self, key: &K) -> u64 {
        let i = self.slot(key);
        let total = self.present.prefix(self.universe.len());
        let below = self.present.prefix(i);
        let at = self.present.prefix(i + 1) - below;
        let above = total - below - at;
        // For an absent key these are the ranks of its insertion position.
        let front = below + 1;
        let back = above + 1;
        front.min(back).max(1) as u64
    }

    pub fn apply(&mut self, op: &Operation<K, V>) -> (Option<V>, u64) {
        let r = self.distance(op.key());
        self.f_total += (r as f64).log2() + 1.0;
        self.ops += 1;
        let prior = self.reference.apply(op);
        let now = self.reference.inner().contains_key(op.key());
        if prior.is_some() != now {
            let i = self.slot(op.key());
            self.present.add(i, if now { 1 } else { -1 });
        }
        (prior, r)
    }

    pub fn f_total(&self) -> f64 {
        self.f_total
    }

    pub fn ops(&self) -> u64 {
        self.ops
    }

    pub fn reference(&self) -> &ReferenceMap<K, V> {
        &self.reference
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Mismatch<V> {
    /// The linearization names an operation that has no recorded result.
    Missing(OpId),
    /// The first operation whose recorded result differs from the replay.
    Diverged {
        id: OpId,
        expected: Option<V>,
        recorded: Option<V>,
    },
    /// Some recorded results are not covered by the linearization.
    Unordered(usize),
}

impl<V: fmt::Debug> fmt::Display for Mismatch<V> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mismatch::Missing(id) => write!(f, "op {id} has no recorded result"),
            Mismatch::Diverged {
                id,
                expected,
                recorded,
            } => write!(f, "op {id}: expected {expected:?}, recorded {recorded:?}"),
            Mismatch::Unordered(n) => write!(f, "{n} recorded results not in the linearization"),
        }
    }
}

/// Replays `order` through a fresh oracle and checks every recorded result.
/// On success returns the oracle, which holds F_L and the final contents.
pub fn verify_linearization<K: Key, V: Value>(
    order: &[Request<K, V>],
    recorded: &HashMap<OpId, Option<V>>,
) -> Result<FingerOracle<K, V>, Mismatch<V>> {
    let mut oracle = FingerOracle::for_requests(order);
    for req in order {
        let (expected, _) = oracle.apply(&req.op);
        match recorded.get(&req.id) {
            None => return Err(Mismatch::Missing(req.id)),
            Some(got) if *got != expected => {
                return Err(Mismatch::Diverged {
                    id: req.id,
                    expected,
                    recorded: got.clone(),
                })
            }
            Some(_) => {}
        }
    }
    if recorded.len() != order.len() {
        return Err(Mismatch::Unordered(recorded.len().abs_diff(order.len())));
    }
    Ok(oracle)
}
