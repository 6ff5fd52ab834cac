//! Finger search structures: a sequential amortized structure, a
//! batch-parallel one, a pipelined one, and a multi-finger variant, with the
//! batch, sort, map and synchronization layers they are built from.

pub mod batch;
pub mod bpmap;
pub mod cost;
pub mod error;
pub mod fs0;
pub mod fs1;
pub mod fs2;
pub mod multifinger;
pub mod op;
pub mod segment;
pub mod sort;
pub mod sync;

pub use batch::{Batch, Bunch};
pub use bpmap::BPMap;
pub use cost::{Cost, CostLedger, FingerOracle, Phase, ReferenceMap};
pub use error::{Error, Result};
pub use op::{AccessKind, GroupOperation, Key, OpId, OpResult, Operation, Request, Value};
