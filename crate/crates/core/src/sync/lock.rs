use std::sync::atomic::{AtomicBool, Ordering};

/// Test-and-set lock that never blocks.
#[derive(Debug, Default)]
pub struct NonBlockingLock {
    held: AtomicBool,
}

impl NonBlockingLock {
    pub const fn new() -> Self {
        NonBlockingLock {
            held: AtomicBool::new(false),
        }
    }

    /// True iff the caller now holds the lock.
    pub fn try_lock(&self) -> bool {
        !self.held.swap(true, Ordering::Acquire)
    }

    pub fn unlock(&self) {
        self.held.store(false, Ordering::Release);
    }

    pub fn is_held(&self) -> bool {
        self.held.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;
    use std::sync::Arc;

    #[test]
    fn basic() {
        let l = NonBlockingLock::new();
        assert!(l.try_lock());
        assert!(!l.try_lock());
        l.unlock();
        assert!(l.try_lock());
    }

    #[test]
    fn exactly_one_winner() {
        for _ in 0..50 {
            let l = Arc::new(NonBlockingLock::new());
            let wins = Arc::new(AtomicUsize::new(0));
            let hs: Vec<_> = (0..8)
                .map(|_| {
                    let (l, wins) = (l.clone(), wins.clone());
                    std::thread::spawn(move || {
                        if l.try_lock() {
                            wins.fetch_add(1, Ordering::SeqCst);
                        }
                    })
                })
                .collect();
            hs.into_iter().for_each(|h| h.join().unwrap());
            assert_eq!(wins.load(Ordering::SeqCst), 1);
        }
    }
}
