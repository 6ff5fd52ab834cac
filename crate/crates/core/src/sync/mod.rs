//! Locks, the reactivation wrapper, the parallel buffer, and the task
//! spawners the pipelined structures run on.

mod buffer;
mod dedicated;
mod exec;
mod lock;
mod reactivation;

pub use buffer::{current_slot, ParallelBuffer};
pub use dedicated::{max_bypass, Acquisition, DedicatedLock};
pub use exec::{Executor, Pending, Spawner, TaskQueue};
pub use lock::NonBlockingLock;
pub use reactivation::ReactivationWrapper;
