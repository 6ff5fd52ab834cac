use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

struct FlagTree {
    /// Heap-indexed internal nodes `1..leaves`.
    flags: Box<[AtomicBool]>,
}

impl FlagTree {
    fn new(leaves: usize) -> Self {
        FlagTree {
            flags: (0..leaves).map(|_| AtomicBool::new(false)).collect(),
        }
    }
}

/// Buffer of pending calls with one sub-buffer per worker. A submission
/// test-and-sets the flags on its leaf-to-root path and stops at the first
/// flag already set; the one that sets the root notifies the owner. A flush
/// installs a fresh flag tree, then empties every sub-buffer.
pub struct ParallelBuffer<C> {
    subs: Box<[Mutex<Vec<C>>]>,
    leaves: usize,
    tree: Mutex<Arc<FlagTree>>,
    notify: Box<dyn Fn() + Send + Sync>,
}

/// Sub-buffer index for the calling thread: its fork/join worker index
/// when it has one, otherwise a hash of its thread id.
pub fn current_slot() -> usize {
    match rayon::current_thread_index() {
        Some(i) => i,
        None => {
            let mut h = std::collections::hash_map::DefaultHasher::new();
            std::thread::current().id().hash(&mut h);
            h.finish() as usize
        }
    }
}

impl<C: Send> ParallelBuffer<C> {
    pub fn new<F: Fn() + Send + Sync + 'static>(workers: usize, notify: F) -> Self {
        let leaves = workers.max(1).next_power_of_two();
        ParallelBuffer {
            subs: (0..leaves).map(|_| Mutex::new(Vec::new())).collect(),
            leaves,
            tree: Mutex::new(Arc::new(FlagTree::new(leaves))),
            notify: Box::new(notify),
        }
    }

    /// Records `call` in sub-buffer `slot` (taken modulo the worker count).
    /// Returns whether this submission notified the owner.
    pub fn submit(&self, slot: usize, call: C) -> bool {
        let slot = slot % self.leaves;
        self.subs[slot].lock().unwrap().push(call);
        let tree = Arc::clone(&self.tree.lock().unwrap());
        let mut node = (self.leaves + slot) / 2;
        while node >= 1 {
            if tree.flags[node].swap(true, Ordering::AcqRel) {
                return false;
            }
            node /= 2;
        }
        if self.leaves == 1 && tree.flags[0].swap(true, Ordering::AcqRel) {
            return false;
        }
        (self.notify)();
        true
    }

    /// Takes every call submitted before each sub-buffer is swapped out,
    /// sub-buffers in index order.
    pub fn flush(&self) -> Vec<C> {
        *self.tree.lock().unwrap() = Arc::new(FlagTree::new(self.leaves));
        let mut out = Vec::new();
        for s in self.subs.iter() {
            out.append(&mut s.lock().unwrap());
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.subs.iter().all(|s| s.lock().unwrap().is_empty())
    }

    pub fn workers(&self) -> usize {
        self.leaves
    }
}
