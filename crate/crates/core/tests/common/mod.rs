#![allow(dead_code)]

use pfs_core::{Operation, Request};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Mixed operations over keys `0..keys`, ids starting at `first_id`.
pub fn random_ops(rng: &mut ChaCha8Rng, n: usize, keys: i64, first_id: u64) -> Vec<Request<i64, i64>> {
    (0..n)
        .map(|i| {
            let k = rng.gen_range(0..keys);
            let v = rng.gen_range(0..1_000_000);
            let op = match rng.gen_range(0..10) {
                0..=3 => Operation::Insert(k, v),
                4..=5 => Operation::Delete(k),
                6..=8 => Operation::Search(k),
                _ => Operation::Update(k, v),
            };
            Request::new(first_id + i as u64, op)
        })
        .collect()
}

/// Operations concentrated near the two ends of `0..keys`.
pub fn edge_ops(rng: &mut ChaCha8Rng, n: usize, keys: i64, first_id: u64) -> Vec<Request<i64, i64>> {
    let mut v = random_ops(rng, n, 16, first_id);
    for r in v.iter_mut() {
        let flip = rng.gen_bool(0.5);
        let remap = |k: i64| if flip { keys - 1 - k } else { k };
        r.op = match r.op.clone() {
            Operation::Insert(k, x) => Operation::Insert(remap(k), x),
            Operation::Delete(k) => Operation::Delete(remap(k)),
            Operation::Search(k) => Operation::Search(remap(k)),
            Operation::Update(k, x) => Operation::Update(remap(k), x),
        };
    }
    v
}
