use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use pfs_core::sync::{max_bypass, Acquisition, DedicatedLock, Executor, NonBlockingLock, ParallelBuffer, ReactivationWrapper, Spawner};

/// Straightforward recount of the bypass log.
fn naive_bypass(log: &[(usize, Acquisition)]) -> usize {
    let mut worst = 0;
    for (key, a) in log {
        if a.seq <= a.pending_after + 1 {
            continue;
        }
        let mut per: HashMap<usize, usize> = HashMap::new();
        for (other, b) in log {
            if other != key && b.seq > a.pending_after && b.seq < a.seq {
                *per.entry(*other).or_default() += 1;
            }
        }
        worst = worst.max(per.values().copied().max().unwrap_or(0));
    }
    worst
}

fn dedicated_stress(keys: usize, rounds: usize) -> (Vec<(usize, Acquisition)>, usize) {
    let lock = Arc::new(DedicatedLock::new(keys));
    let log = Arc::new(Mutex::new(Vec::new()));
    let inside = Arc::new(AtomicUsize::new(0));
    let worst = Arc::new(AtomicUsize::new(0));
    let hs: Vec<_> = (0..keys)
        .map(|k| {
            let (lock, log, inside, worst) = (lock.clone(), log.clone(), inside.clone(), worst.clone());
            std::thread::spawn(move || {
                for _ in 0..rounds {
                    let a = lock.acquire(k);
                    let now = inside.fetch_add(1, Ordering::SeqCst) + 1;
                    worst.fetch_max(now, Ordering::SeqCst);
                    log.lock().unwrap().push((k, a));
                    inside.fetch_sub(1, Ordering::SeqCst);
                    lock.release(k);
                }
            })
        })
        .collect();
    hs.into_iter().for_each(|h| h.join().unwrap());
    let log = Arc::try_unwrap(log).unwrap().into_inner().unwrap();
    (log, worst.load(Ordering::SeqCst))
}

#[test]
fn dedicated_lock_bypass_two_and_four_keys() {
    for keys in [2, 4] {
        let (log, occupancy) = dedicated_stress(keys, 3000);
        assert_eq!(occupancy, 1);
        assert_eq!(log.len(), keys * 3000);
        let mut seqs: Vec<u64> = log.iter().map(|(_, a)| a.seq).collect();
        seqs.sort_unstable();
        assert_eq!(seqs, (1..=log.len() as u64).collect::<Vec<_>>());
        let b = max_bypass(&log);
        assert!(b <= 1, "{keys} keys: a waiter saw {b} grants of one other key");
        assert_eq!(b, naive_bypass(&log));
    }
}

#[test]
fn bypass_counter_sees_a_planted_violation() {
    let a = |pending_after, seq| Acquisition { pending_after, seq };
    let log = vec![(0, a(0, 1)), (1, a(1, 4)), (0, a(1, 2)), (0, a(2, 3))];
    assert_eq!(max_bypass(&log), 2);
    assert_eq!(naive_bypass(&log), 2);
}

#[test]
fn non_blocking_lock_single_holder() {
    let l = Arc::new(NonBlockingLock::new());
    let inside = Arc::new(AtomicUsize::new(0));
    let hs: Vec<_> = (0..8)
        .map(|_| {
            let (l, inside) = (l.clone(), inside.clone());
            std::thread::spawn(move || {
                for _ in 0..5000 {
                    if l.try_lock() {
                        assert_eq!(inside.fetch_add(1, Ordering::SeqCst), 0);
                        inside.fetch_sub(1, Ordering::SeqCst);
                        l.unlock();
                    }
                }
            })
        })
        .collect();
    hs.into_iter().for_each(|h| h.join().unwrap());
    assert!(!l.is_held());
}

#[test]
fn reactivation_storm() {
    let exec = Executor::new(4);
    let clock = Arc::new(AtomicU64::new(0));
    let inside = Arc::new(AtomicUsize::new(0));
    let overlaps = Arc::new(AtomicUsize::new(0));
    let last_start = Arc::new(AtomicU64::new(0));
    let w = {
        let (clock, inside, overlaps, last_start) = (clock.clone(), inside.clone(), overlaps.clone(), last_start.clone());
        ReactivationWrapper::new(Spawner::Executor(exec.clone()), move || {
            if inside.fetch_add(1, Ordering::SeqCst) != 0 {
                overlaps.fetch_add(1, Ordering::SeqCst);
            }
            last_start.fetch_max(clock.fetch_add(1, Ordering::SeqCst), Ordering::SeqCst);
            std::hint::spin_loop();
            inside.fetch_sub(1, Ordering::SeqCst);
        })
    };
    let last_reactivation = Arc::new(AtomicU64::new(0));
    let hs: Vec<_> = (0..4)
        .map(|_| {
            let (w, clock, lr) = (w.clone(), clock.clone(), last_reactivation.clone());
            std::thread::spawn(move || {
                for _ in 0..25_000 {
                    lr.fetch_max(clock.fetch_add(1, Ordering::SeqCst), Ordering::SeqCst);
                    w.reactivate();
                }
            })
        })
        .collect();
    hs.into_iter().for_each(|h| h.join().unwrap());
    let deadline = std::time::Instant::now() + Duration::from_secs(30);
    while !w.is_idle() {
        assert!(std::time::Instant::now() < deadline, "wrapper never went idle");
        std::thread::sleep(Duration::from_millis(1));
    }
    assert_eq!(w.reactivations(), 100_000);
    assert!(w.runs() >= 1 && w.runs() <= w.reactivations());
    assert_eq!(overlaps.load(Ordering::SeqCst), 0);
    assert!(last_start.load(Ordering::SeqCst) > last_reactivation.load(Ordering::SeqCst));
}

#[test]
fn buffer_storm_delivers_within_two_flushes() {
    let notified = Arc::new(AtomicUsize::new(0));
    let buf = {
        let n = notified.clone();
        Arc::new(ParallelBuffer::<(u64, u64)>::new(8, move || {
            n.fetch_add(1, Ordering::SeqCst);
        }))
    };
    let started = Arc::new(AtomicU64::new(0));
    let done = Arc::new(AtomicUsize::new(0));
    let flusher = {
        let (buf, started, done) = (buf.clone(), started.clone(), done.clone());
        std::thread::spawn(move || {
            let mut seen = Vec::new();
            loop {
                let finished = done.load(Ordering::SeqCst) == 8;
                let idx = started.fetch_add(1, Ordering::SeqCst) + 1;
                seen.extend(buf.flush().into_iter().map(|c| (c, idx)));
                if finished {
                    return seen;
                }
                std::thread::yield_now();
            }
        })
    };
    let hs: Vec<_> = (0..8u64)
        .map(|w| {
            let (buf, started, done) = (buf.clone(), started.clone(), done.clone());
            std::thread::spawn(move || {
                for i in 0..1250u64 {
                    let s = started.load(Ordering::SeqCst);
                    buf.submit(w as usize, (w * 10_000 + i, s));
                }
                done.fetch_add(1, Ordering::SeqCst);
            })
        })
        .collect();
    hs.into_iter().for_each(|h| h.join().unwrap());
    let seen = flusher.join().unwrap();
    assert_eq!(seen.len(), 10_000);
    let mut ids: Vec<u64> = seen.iter().map(|((id, _), _)| *id).collect();
    ids.sort_unstable();
    ids.dedup();
    assert_eq!(ids.len(), 10_000);
    for ((_, s), flushed_in) in &seen {
        assert!(*flushed_in <= s + 1, "submitted while flush {s} had started, delivered by flush {flushed_in}");
    }
    assert!(notified.load(Ordering::SeqCst) >= 1);
}
