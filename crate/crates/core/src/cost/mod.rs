//! Work/span accounting and the sequential oracles used to check it.

mod oracle;

pub use oracle::{verify_linearization, FingerOracle, Mismatch, ReferenceMap};

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::op::OpId;

/// Inputs smaller than this are processed without forking.
pub const GRAIN: usize = 2048;

/// Work and span of a sub-computation, in abstract units: one per key
/// comparison and one per tree node touched.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Cost {
    pub work: u64,
    pub span: u64,
}

impl Cost {
    pub const ZERO: Cost = Cost { work: 0, span: 0 };

    pub fn new(work: u64, span: u64) -> Self {
        Cost { work, span }
    }

    /// Charges `n` sequential units.
    #[inline]
    pub fn step(&mut self, n: u64) {
        self.work += n;
        self.span += n;
    }

    /// Charges a data-parallel pass of `work` units whose critical path is
    /// `span` units.
    #[inline]
    pub fn parallel(&mut self, work: u64, span: u64) {
        self.work += work;
        self.span += span;
    }

    /// Sequential composition.
    pub fn then(&mut self, other: Cost) {
        self.work += other.work;
        self.span += other.span;
    }

    /// Parallel composition of two sub-costs.
    pub fn absorb_parallel(&mut self, a: Cost, b: Cost) {
        self.work += a.work + b.work;
        self.span += a.span.max(b.span);
    }

    /// Runs `a` and `b` as a fork/join pair, on separate tasks when `fork`
    /// is set.
    pub fn join<A, B, RA, RB>(&mut self, fork: bool, a: A, b: B) -> (RA, RB)
    where
        A: FnOnce(&mut Cost) -> RA + Send,
        B: FnOnce(&mut Cost) -> RB + Send,
        RA: Send,
        RB: Send,
    {
        let mut ca = Cost::ZERO;
        let mut cb = Cost::ZERO;
        let out = if fork {
            rayon::join(|| a(&mut ca), || b(&mut cb))
        } else {
            (a(&mut ca), b(&mut cb))
        };
        self.absorb_parallel(ca, cb);
        out
    }
}

/// ⌈log₂(n)⌉ for n ≥ 1, and 0 for n = 0.
pub fn ceil_log2(n: usize) -> u64 {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    /// Fit checks and unsorted probing.
    Locate,
    /// Tag partitioning and entropy sorting.
    Separate,
    /// Cutting group-ops and segment access.
    Execute,
    /// Segment, chain and buffer-drain shifting.
    Rebalance,
    /// Parallel-buffer flushes and bunch handling.
    Buffer,
    /// Finger moves.
    Finger,
}

impl Phase {
    pub const ALL: [Phase; 6] = [
        Phase::Locate,
        Phase::Separate,
        Phase::Execute,
        Phase::Rebalance,
        Phase::Buffer,
        Phase::Finger,
    ];
}

/// Shared counters for one structure. Work charged with [`charge_op`] is
/// attributed to an operation, everything else is unattributed.
///
/// [`charge_op`]: CostLedger::charge_op
#[derive(Debug, Default)]
pub struct CostLedger {
    phases: [AtomicU64; 6],
    span: AtomicU64,
    attributed: AtomicU64,
    max_level: AtomicUsize,
    per_op: Option<Mutex<HashMap<OpId, u64>>>,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// A ledger that also keeps the per-operation charge map.
    pub fn with_per_op() -> Self {
        CostLedger {
            per_op: Some(Mutex::new(HashMap::new())),
            ..Self::default()
        }
    }

    pub fn charge(&self, phase: Phase, cost: Cost) {
        self.phases[phase as usize].fetch_add(cost.work, Ordering::Relaxed);
        self.span.fetch_add(cost.span, Ordering::Relaxed);
    }

    pub fn charge_op(&self, phase: Phase, id: OpId, units: u64) {
        self.phases[phase as usize].fetch_add(units, Ordering::Relaxed);
        self.attributed.fetch_add(units, Ordering::Relaxed);
        if let Some(map) = &self.per_op {
            *map.lock().unwrap().entry(id).or_insert(0) += units;
        }
    }

    /// Attributes a batch of `(id, units)` charges.
    pub fn charge_ops<I: IntoIterator<Item = (OpId, u64)>>(&self, phase: Phase, charges: I) {
        let mut sum = 0;
        match &self.per_op {
            Some(map) => {
                let mut map = map.lock().unwrap();
                for (id, units) in charges {
                    *map.entry(id).or_insert(0) += units;
                    sum += units;
                }
            }
            None => sum = charges.into_iter().map(|(_, u)| u).sum(),
        }
        self.phases[phase as usize].fetch_add(sum, Ordering::Relaxed);
        self.attributed.fetch_add(sum, Ordering::Relaxed);
    }

    pub fn note_level(&self, k: usize) {
        self.max_level.fetch_max(k, Ordering::Relaxed);
    }

    pub fn phase(&self, phase: Phase) -> u64 {
        self.phases[phase as usize].load(Ordering::Relaxed)
    }

    pub fn total(&self) -> u64 {
        self.phases.iter().map(|p| p.load(Ordering::Relaxed)).sum()
    }

    pub fn comparisons(&self) -> u64 {
        self.phase(Phase::Locate) + self.phase(Phase::Separate) + self.phase(Phase::Execute)
    }

    pub fn rebalance_work(&self) -> u64 {
        self.phase(Phase::Rebalance)
    }

    pub fn attributed(&self) -> u64 {
        self.attributed.load(Ordering::Relaxed)
    }

    pub fn unattributed(&self) -> u64 {
        self.total() - self.attributed()
    }

    /// Sum of the spans of all charged sub-computations (an upper bound on
    /// the critical path when they ran one after another).
    pub fn span(&self) -> u64 {
        self.span.load(Ordering::Relaxed)
    }

    pub fn max_level(&self) -> usize {
        self.max_level.load(Ordering::Relaxed)
    }

    pub fn op_charge(&self, id: OpId) -> Option<u64> {
        self.per_op
            .as_ref()
            .and_then(|m| m.lock().unwrap().get(&id).copied())
    }

    pub fn per_op_snapshot(&self) -> Option<HashMap<OpId, u64>> {
        self.per_op.as_ref().map(|m| m.lock().unwrap().clone())
    }
}
