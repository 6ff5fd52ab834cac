use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread::Thread;

struct Slot {
    waiter: Mutex<Option<Thread>>,
    parked: AtomicBool,
    granted: AtomicBool,
    seq: AtomicU64,
    in_use: AtomicBool,
}

/// Lock with a fixed set of keys, one per prospective holder. Release hands
/// the lock directly to a waiting key, scanning cyclically after the last
/// holder, so a waiter is bypassed at most once per other key.
pub struct DedicatedLock {
    count: AtomicUsize,
    last: AtomicUsize,
    acquisitions: AtomicU64,
    slots: Box<[Slot]>,
}

/// Sequence numbers of one acquisition: how many grants had been made when
/// the caller was parked and waiting, and the number of its own grant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Acquisition {
    pub pending_after: u64,
    pub seq: u64,
}

impl DedicatedLock {
    pub fn new(keys: usize) -> Self {
        assert!(keys > 0);
        DedicatedLock {
            count: AtomicUsize::new(0),
            last: AtomicUsize::new(0),
            acquisitions: AtomicU64::new(0),
            slots: (0..keys)
                .map(|_| Slot {
                    waiter: Mutex::new(None),
                    parked: AtomicBool::new(false),
                    granted: AtomicBool::new(false),
                    seq: AtomicU64::new(0),
                    in_use: AtomicBool::new(false),
                })
                .collect(),
        }
    }

    pub fn keys(&self) -> usize {
        self.slots.len()
    }

    /// Blocks until key `i` holds the lock. Concurrent callers must use
    /// distinct keys.
    pub fn acquire(&self, i: usize) -> Acquisition {
        let slot = &self.slots[i];
        let reused = slot.in_use.swap(true, Ordering::AcqRel);
        debug_assert!(!reused, "dedicated lock key {i} used concurrently");
        if self.count.fetch_add(1, Ordering::AcqRel) == 0 {
            self.last.store(i, Ordering::Relaxed);
            let seq = self.acquisitions.fetch_add(1, Ordering::AcqRel) + 1;
            return Acquisition {
                pending_after: seq - 1,
                seq,
            };
        }
        slot.granted.store(false, Ordering::Relaxed);
        *slot.waiter.lock().unwrap() = Some(std::thread::current());
        slot.parked.store(true, Ordering::SeqCst);
        let pending_after = self.acquisitions.load(Ordering::SeqCst);
        while !slot.granted.load(Ordering::Acquire) {
            std::thread::park();
        }
        let seq = slot.seq.load(Ordering::Acquire);
        Acquisition {
            pending_after: pending_after.min(seq - 1),
            seq,
        }
    }

    /// Releases key `i`'s hold, passing the lock on if anyone waits.
    pub fn release(&self, i: usize) {
        self.slots[i].in_use.store(false, Ordering::Release);
        if self.count.fetch_sub(1, Ordering::AcqRel) == 1 {
            return;
        }
        // Someone has announced itself; it may not have parked yet.
        let k = self.slots.len();
        let mut j = self.last.load(Ordering::Relaxed);
        loop {
            let mut found = None;
            for _ in 0..k {
                j = (j + 1) % k;
                if self.slots[j].parked.swap(false, Ordering::SeqCst) {
                    found = Some(j);
                    break;
                }
            }
            if let Some(j) = found {
                self.last.store(j, Ordering::Relaxed);
                let slot = &self.slots[j];
                let th = slot.waiter.lock().unwrap().take().expect("parked waiter registered");
                slot.seq.store(self.acquisitions.fetch_add(1, Ordering::SeqCst) + 1, Ordering::Relaxed);
                slot.granted.store(true, Ordering::Release);
                th.unpark();
                return;
            }
            std::hint::spin_loop();
            std::thread::yield_now();
        }
    }

    pub fn acquisitions(&self) -> u64 {
        self.acquisitions.load(Ordering::Acquire)
    }
}

/// Largest number of grants any single other key received while some
/// acquisition in `log` was waiting. `log` holds `(key, acquisition)` pairs.
pub fn max_bypass(log: &[(usize, Acquisition)]) -> usize {
    let mut by_seq: Vec<(u64, usize)> = log.iter().map(|(k, a)| (a.seq, *k)).collect();
    by_seq.sort_unstable();
    let keys = log.iter().map(|(k, _)| k + 1).max().unwrap_or(0);
    let mut worst = 0;
    let mut counts = vec![0usize; keys];
    for (key, a) in log {
        let lo = by_seq.partition_point(|(s, _)| *s <= a.pending_after);
        let hi = by_seq.partition_point(|(s, _)| *s < a.seq);
        if hi <= lo {
            continue;
        }
        counts.iter_mut().for_each(|c| *c = 0);
        for &(_, other) in &by_seq[lo..hi] {
            if other != *key {
                counts[other] += 1;
                worst = worst.max(counts[other]);
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn free_lock_is_taken_immediately() {
        let l = DedicatedLock::new(2);
        let a = l.acquire(0);
        assert_eq!(a.seq, 1);
        l.release(0);
        let b = l.acquire(1);
        assert_eq!(b.seq, 2);
        l.release(1);
        assert_eq!(l.count.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn mutual_exclusion_under_contention() {
        let l = Arc::new(DedicatedLock::new(4));
        let inside = Arc::new(AtomicUsize::new(0));
        let worst = Arc::new(AtomicUsize::new(0));
        let hs: Vec<_> = (0..4)
            .map(|i| {
                let (l, inside, worst) = (l.clone(), inside.clone(), worst.clone());
                std::thread::spawn(move || {
                    for _ in 0..2000 {
                        l.acquire(i);
                        let now = inside.fetch_add(1, Ordering::SeqCst) + 1;
                        worst.fetch_max(now, Ordering::SeqCst);
                        inside.fetch_sub(1, Ordering::SeqCst);
                        l.release(i);
                    }
                })
            })
            .collect();
        hs.into_iter().for_each(|h| h.join().unwrap());
        assert_eq!(worst.load(Ordering::SeqCst), 1);
        assert_eq!(l.acquisitions(), 8000);
    }
}
