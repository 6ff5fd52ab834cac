//! Map requests, their outcomes, and the group-operations built from them.

use std::fmt;

use crate::sort::Bundle;

/// Keys stored in the finger structures.
pub trait Key: Ord + Clone + Send + Sync + fmt::Debug + 'static {}
impl<T: Ord + Clone + Send + Sync + fmt::Debug + 'static> Key for T {}

/// Values stored alongside keys.
pub trait Value: Clone + PartialEq + Send + Sync + fmt::Debug + 'static {}
impl<T: Clone + PartialEq + Send + Sync + fmt::Debug + 'static> Value for T {}

pub type OpId = u64;

/// Access type. The derived order is the execution order inside a batch:
/// searches, updates, insertions, and deletions last.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AccessKind {
    Search,
    Update,
    Insert,
    Delete,
}

impl AccessKind {
    pub const ALL: [AccessKind; 4] = [
        AccessKind::Search,
        AccessKind::Update,
        AccessKind::Insert,
        AccessKind::Delete,
    ];

    pub fn rank(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Operation<K, V> {
    Search(K),
    Update(K, V),
    Insert(K, V),
    Delete(K),
}

impl<K, V> Operation<K, V> {
    pub fn key(&self) -> &K {
        match self {
            Operation::Search(k) | Operation::Delete(k) => k,
            Operation::Update(k, _) | Operation::Insert(k, _) => k,
        }
    }

    pub fn kind(&self) -> AccessKind {
        match self {
            Operation::Search(_) => AccessKind::Search,
            Operation::Update(..) => AccessKind::Update,
            Operation::Insert(..) => AccessKind::Insert,
            Operation::Delete(_) => AccessKind::Delete,
        }
    }

    pub fn value(&self) -> Option<&V> {
        match self {
            Operation::Update(_, v) | Operation::Insert(_, v) => Some(v),
            _ => None,
        }
    }
}

/// A submitted operation tagged with a caller-unique id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Request<K, V> {
    pub id: OpId,
    pub op: Operation<K, V>,
}

impl<K, V> Request<K, V> {
    pub fn new(id: OpId, op: Operation<K, V>) -> Self {
        Request { id, op }
    }
}

/// Outcome of one operation: the value bound to the key just before the
/// operation took effect (`None` if the key was absent).
///
/// For a search this is the current value, for an update or insert the
/// replaced value, and for a delete the removed value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpResult<V> {
    pub id: OpId,
    pub prior: Option<V>,
}

/// Applies `op` to a single map slot and returns the new slot content.
pub(crate) fn apply_to_slot<K, V: Clone>(op: &Operation<K, V>, slot: Option<V>) -> Option<V> {
    match op {
        Operation::Search(_) => slot,
        Operation::Update(_, v) => slot.map(|_| v.clone()),
        Operation::Insert(_, v) => Some(v.clone()),
        Operation::Delete(_) => None,
    }
}

/// Operations of one access type on one key, combined so that they execute
/// as a single map operation whose effect is the last member.
#[derive(Clone, Debug)]
pub struct GroupOperation<K, V> {
    kind: AccessKind,
    members: Bundle<Request<K, V>>,
}

impl<K: Key, V: Value> GroupOperation<K, V> {
    /// Wraps a bundle produced by entropy sorting. All leaves must share the
    /// access type and key.
    pub fn from_bundle(members: Bundle<Request<K, V>>) -> Self {
        let kind = members.item().op.kind();
        GroupOperation { kind, members }
    }

    /// Concatenates two groups on the same key and type; `self` members first.
    pub fn concat(self, later: Self) -> Self {
        debug_assert_eq!(self.kind, later.kind);
        debug_assert!(self.key() == later.key());
        GroupOperation {
            kind: self.kind,
            members: Bundle::combine(self.members, later.members),
        }
    }

    pub fn kind(&self) -> AccessKind {
        self.kind
    }

    pub fn key(&self) -> &K {
        self.members.item().op.key()
    }

    pub fn len(&self) -> usize {
        self.members.size()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn height(&self) -> usize {
        self.members.height()
    }

    pub fn members(&self) -> &Bundle<Request<K, V>> {
        &self.members
    }

    /// The last member, whose operation is what the map actually applies.
    pub fn effect(&self) -> &Request<K, V> {
        self.members.last()
    }

    /// Member ids in group order.
    pub fn ids(&self) -> Vec<OpId> {
        self.members.leaves().map(|r| r.id).collect()
    }

    /// Results for every member, as if the members ran one after another
    /// starting from a slot holding `prior`.
    pub fn fan_out(&self, prior: Option<V>) -> Vec<OpResult<V>> {
        let mut slot = prior;
        let mut out = Vec::with_capacity(self.len());
        for req in self.members.leaves() {
            out.push(OpResult {
                id: req.id,
                prior: slot.clone(),
            });
            slot = apply_to_slot(&req.op, slot);
        }
        out
    }
}
