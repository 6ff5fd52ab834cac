mod common;

use std::collections::HashMap;
use std::sync::Arc;

use pfs_core::cost::verify_linearization;
use pfs_core::fs0::Fs0;
use pfs_core::fs1::Fs1;
use pfs_core::{CostLedger, Request};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn fs0_matches_reference_map() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ops = common::random_ops(&mut rng, 3000, 500, 0);
        let mut s = Fs0::new();
        let mut rec = HashMap::new();
        for (n, r) in ops.iter().enumerate() {
            let out = s.execute(r);
            rec.insert(out.id, out.prior);
            if n % 97 == 0 {
                s.check().unwrap_or_else(|e| panic!("seed {seed} op {n}: {e}"));
            }
        }
        s.check().unwrap();
        let oracle = verify_linearization(&ops, &rec).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        assert_eq!(oracle.reference().entries(), s.entries());
    }
}

fn run_fs1(seed: u64, batches: usize, max_batch: usize, keys: i64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = Fs1::with_ledger(Arc::new(CostLedger::new()));
    let mut order: Vec<Request<i64, i64>> = Vec::new();
    let mut rec = HashMap::new();
    let mut next = 0u64;
    for bi in 0..batches {
        let b = rng.gen_range(1..=max_batch);
        let batch = if rng.gen_bool(0.3) {
            common::edge_ops(&mut rng, b, keys, next)
        } else {
            common::random_ops(&mut rng, b, keys, next)
        };
        next += b as u64;
        let by_id: HashMap<u64, Request<i64, i64>> = batch.iter().map(|r| (r.id, r.clone())).collect();
        let out = s
            .process_batch(batch)
            .unwrap_or_else(|e| panic!("seed {seed} batch {bi}: {e}"));
        s.check()
            .unwrap_or_else(|e| panic!("seed {seed} batch {bi}: {e}"));
        for r in out.results {
            order.push(by_id[&r.id].clone());
            rec.insert(r.id, r.prior);
        }
    }
    let oracle = verify_linearization(&order, &rec).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
    assert_eq!(oracle.reference().entries(), s.entries());
}

#[test]
fn fs1_matches_reference_small_batches() {
    for seed in 0..20 {
        run_fs1(seed, 200, 12, 300);
    }
}

#[test]
fn fs1_matches_reference_large_batches() {
    for seed in 100..110 {
        run_fs1(seed, 60, 3000, 20_000);
    }
}

#[test]
fn fs1_mass_delete_shrinks_cleanly() {
    let mut s = Fs1::new();
    let ins: Vec<Request<i64, i64>> = (0..5000).map(|k| Request::new(k as u64, pfs_core::Operation::Insert(k, k))).collect();
    s.process_batch(ins).unwrap();
    s.check().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut live: Vec<i64> = (0..5000).collect();
    let mut id = 10_000u64;
    while !live.is_empty() {
        let n = rng.gen_range(1..=live.len().min(900));
        let start = rng.gen_range(0..=live.len() - n);
        let batch: Vec<Request<i64, i64>> = live
            .drain(start..start + n)
            .map(|k| {
                id += 1;
                Request::new(id, pfs_core::Operation::Delete(k))
            })
            .collect();
        let out = s.process_batch(batch).unwrap();
        assert!(out.report.chain_iterations <= 2);
        s.check().unwrap();
    }
    assert!(s.is_empty());
}
