//! Workload generation, oracle-checked replay and CSV reporting for the
//! finger structures in `pfs-core`.

pub mod run;
pub mod workload;

pub use run::{run, Report, RunOptions};
pub use workload::{generate, parse_ops, Distribution, HarnessError, Structure, TraceOp, WorkloadSpec};
