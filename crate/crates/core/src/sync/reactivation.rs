use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use super::Spawner;

/// Runs a procedure on demand such that runs never overlap, every
/// reactivation is followed by a run that starts after it, and
/// reactivations arriving during a run coalesce into one more run.
pub struct ReactivationWrapper {
    count: AtomicUsize,
    body: Box<dyn Fn() + Send + Sync>,
    spawner: Spawner,
    runs: AtomicU64,
    reactivations: AtomicU64,
}

impl ReactivationWrapper {
    pub fn new<F: Fn() + Send + Sync + 'static>(spawner: Spawner, body: F) -> Arc<Self> {
        Arc::new(ReactivationWrapper {
            count: AtomicUsize::new(0),
            body: Box::new(body),
            spawner,
            runs: AtomicU64::new(0),
            reactivations: AtomicU64::new(0),
        })
    }

    pub fn reactivate(self: &Arc<Self>) {
        self.reactivations.fetch_add(1, Ordering::Relaxed);
        if self.count.fetch_add(1, Ordering::AcqRel) == 0 {
            let me = Arc::clone(self);
            self.spawner.spawn(move || me.drive());
        }
    }

    fn drive(&self) {
        loop {
            self.count.store(1, Ordering::SeqCst);
            self.runs.fetch_add(1, Ordering::Relaxed);
            (self.body)();
            if self.count.fetch_sub(1, Ordering::AcqRel) <= 1 {
                break;
            }
        }
    }

    /// No run in progress or pending.
    pub fn is_idle(&self) -> bool {
        self.count.load(Ordering::SeqCst) == 0
    }

    pub fn runs(&self) -> u64 {
        self.runs.load(Ordering::Relaxed)
    }

    pub fn reactivations(&self) -> u64 {
        self.reactivations.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sync::{Pending, TaskQueue};
    use std::sync::Mutex;

    #[test]
    fn idle_reactivation_runs_once() {
        let q = TaskQueue::new();
        let w = ReactivationWrapper::new(Spawner::Queue(q.clone()), || {});
        w.reactivate();
        q.run_until_idle();
        assert_eq!(w.runs(), 1);
        assert!(w.is_idle());
    }

    #[test]
    fn two_reactivations_during_a_run_give_one_more() {
        let gate = Arc::new(Mutex::new(()));
        let entered = Pending::new();
        let hold = gate.lock().unwrap();
        let (g, e) = (gate.clone(), entered.clone());
        let first = Arc::new(std::sync::atomic::AtomicBool::new(true));
        let w = ReactivationWrapper::new(Spawner::Thread, move || {
            if first.swap(false, Ordering::SeqCst) {
                e.fulfill(());
                drop(g.lock().unwrap());
            }
        });
        w.reactivate();
        entered.wait();
        w.reactivate();
        w.reactivate();
        drop(hold);
        while !w.is_idle() {
            std::thread::yield_now();
        }
        assert_eq!(w.runs(), 2);
    }
}
