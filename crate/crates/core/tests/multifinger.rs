mod common;

use std::collections::HashMap;
use std::sync::Arc;

use pfs_core::cost::verify_linearization;
use pfs_core::fs1::Fs1;
use pfs_core::multifinger::{FingerPos, MfRequest, MoveOutcome, MultiFinger};
use pfs_core::{CostLedger, Request};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_pos(rng: &mut ChaCha8Rng, keys: i64) -> FingerPos<i64> {
    match rng.gen_range(0..20) {
        0 => FingerPos::NegInf,
        1 => FingerPos::PosInf,
        _ => FingerPos::At {
            key: rng.gen_range(0..keys),
            after: rng.gen_bool(0.5),
        },
    }
}

#[test]
fn no_fingers_is_the_plain_structure() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = MultiFinger::new(0, Arc::new(CostLedger::new()));
        let mut s = Fs1::with_ledger(Arc::new(CostLedger::new()));
        let mut next = 0;
        for _ in 0..40 {
            let b = rng.gen_range(1..300);
            let batch = common::random_ops(&mut rng, b, 2000, next);
            next += b as u64;
            let a = m
                .process_batch(batch.iter().cloned().map(MfRequest::Access).collect())
                .unwrap();
            let e = s.process_batch(batch).unwrap();
            assert_eq!(a.results, e.results);
            assert_eq!(m.sectors()[0].chains().shape(), s.chains().shape());
        }
        assert_eq!(m.entries(), s.entries());
    }
}

fn run_mixed(seed: u64, f: usize, keys: i64, batches: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prefill: Vec<(i64, i64)> = (0..keys).filter(|k| k % 3 != 0).map(|k| (k, -k)).collect();
    let mut fingers: Vec<FingerPos<i64>> = (0..f).map(|_| random_pos(&mut rng, keys)).collect();
    fingers.sort();
    let mut m = MultiFinger::from_sorted(prefill.clone(), fingers, Arc::new(CostLedger::new())).unwrap();

    let mut order: Vec<Request<i64, i64>> = prefill
        .iter()
        .enumerate()
        .map(|(i, (k, v))| Request::new(u64::MAX - i as u64, pfs_core::Operation::Insert(*k, *v)))
        .collect();
    let mut rec: HashMap<u64, Option<i64>> = order.iter().map(|r| (r.id, None)).collect();
    let mut next = 0u64;
    for bi in 0..batches {
        let b = rng.gen_range(0..200);
        let ops = common::random_ops(&mut rng, b, keys, next);
        next += b as u64;
        let by_id: HashMap<u64, Request<i64, i64>> = ops.iter().map(|r| (r.id, r.clone())).collect();
        let mut batch: Vec<MfRequest<i64, i64>> = ops.into_iter().map(MfRequest::Access).collect();
        for _ in 0..rng.gen_range(0..=3) {
            if f == 0 {
                break;
            }
            let at = rng.gen_range(0..=batch.len());
            batch.insert(
                at,
                MfRequest::Move {
                    id: next,
                    finger: rng.gen_range(0..f),
                    to: random_pos(&mut rng, keys),
                },
            );
            next += 1;
        }
        let out = m.process_batch(batch).unwrap_or_else(|e| panic!("seed {seed} batch {bi}: {e}"));
        m.check().unwrap_or_else(|e| panic!("seed {seed} batch {bi}: {e}"));
        assert!(m.fingers().windows(2).all(|w| w[0] <= w[1]));
        for r in &out.results {
            order.push(by_id[&r.id].clone());
            rec.insert(r.id, r.prior);
        }
    }
    let oracle = verify_linearization(&order, &rec).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
    assert_eq!(oracle.reference().entries(), m.entries());
}

#[test]
fn random_moves_and_accesses_match_reference() {
    for seed in 0..12 {
        run_mixed(seed, (seed % 4) as usize, 3000, 60);
    }
}

#[test]
fn many_fingers_small_keyspace() {
    for seed in 0..6 {
        run_mixed(100 + seed, 7, 200, 80);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Moves alone keep the multiset and respect finger order.
    #[test]
    fn moves_preserve_contents(
        n in 0i64..4000,
        start in proptest::collection::vec(-10i64..4010, 1..4),
        moves in proptest::collection::vec((0usize..4, -10i64..4010, any::<bool>()), 0..25),
    ) {
        let mut start = start;
        start.sort();
        let fingers: Vec<_> = start.iter().map(|&k| FingerPos::before(k)).collect();
        let f = fingers.len();
        let entries: Vec<(i64, i64)> = (0..n).map(|k| (k, k)).collect();
        let mut m = MultiFinger::from_sorted(entries.clone(), fingers, Arc::new(CostLedger::new())).unwrap();
        for (finger, key, after) in moves {
            let to = FingerPos::At { key, after };
            let old_sizes: Vec<usize> = m.sectors().iter().map(|s| s.len()).collect();
            match m.move_finger(finger, to.clone()) {
                Ok(MoveOutcome::Moved { transferred, .. }) => {
                    let new_sizes: Vec<usize> = m.sectors().iter().map(|s| s.len()).collect();
                    let moved: usize = old_sizes.iter().zip(&new_sizes).map(|(a, b)| a.abs_diff(*b)).sum();
                    prop_assert_eq!(moved, 2 * transferred);
                    prop_assert_eq!(&m.fingers()[finger], &to);
                }
                Ok(other) => prop_assert!(false, "unexpected {:?}", other),
                Err(_) => prop_assert!(finger >= f || m.fingers()[finger] != to),
            }
            prop_assert!(m.check().is_ok(), "{:?}", m.check());
        }
        prop_assert_eq!(m.entries(), entries);
    }
}

#[test]
fn short_move_work_is_independent_of_size() {
    let mut charges = Vec::new();
    for n in [10_000i64, 200_000] {
        let ledger = Arc::new(CostLedger::new());
        let entries = (0..n).map(|k| (k, k)).collect();
        let mut m = MultiFinger::from_sorted(entries, vec![FingerPos::before(n / 2)], Arc::clone(&ledger)).unwrap();
        let before = ledger.phase(pfs_core::Phase::Finger);
        let out = m.move_finger(0, FingerPos::before(n / 2 - 3)).unwrap();
        assert_eq!(out, MoveOutcome::Moved { transferred: 3, far: false });
        m.check().unwrap();
        charges.push(ledger.phase(pfs_core::Phase::Finger) - before);
    }
    assert!(charges[1] <= charges[0] + 8, "{charges:?}");
    assert!(charges[1] < 400, "{charges:?}");
}
