//! Finger structure with `f` movable fingers: one batch-parallel structure
//! per sector between adjacent fingers. A batch first moves fingers, then
//! runs its accesses on all sectors in parallel.

use std::cmp::Ordering;
use std::sync::Arc;

use rayon::prelude::*;

use crate::bpmap::BPMap;
use crate::cost::{ceil_log2, Cost, CostLedger, Phase};
use crate::error::{Error, Result};
use crate::fs1::{rebalance_chains, rebalance_segments, BatchReport, Fs1};
use crate::op::{Key, OpId, OpResult, Request, Value};
use crate::segment::{t, Chains};

/// Chain rebalancing iterations allowed after a finger move.
pub const MOVE_CHAIN_CAP: usize = 64;

/// A finger position: an end, or a gap just before or just after a key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FingerPos<K> {
    NegInf,
    /// Just before `key` when `after` is false, just after it otherwise.
    At { key: K, after: bool },
    PosInf,
}

impl<K: Ord> FingerPos<K> {
    pub fn before(key: K) -> Self {
        FingerPos::At { key, after: false }
    }

    pub fn after(key: K) -> Self {
        FingerPos::At { key, after: true }
    }

    /// Whether `x` lies to the right of this position.
    pub fn left_of(&self, x: &K) -> bool {
        match self {
            FingerPos::NegInf => true,
            FingerPos::PosInf => false,
            FingerPos::At { key, after: false } => x >= key,
            FingerPos::At { key, after: true } => x > key,
        }
    }
}

impl<K: Ord> PartialOrd for FingerPos<K> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<K: Ord> Ord for FingerPos<K> {
    fn cmp(&self, other: &Self) -> Ordering {
        use FingerPos::*;
        match (self, other) {
            (NegInf, NegInf) | (PosInf, PosInf) => Ordering::Equal,
            (NegInf, _) | (_, PosInf) => Ordering::Less,
            (_, NegInf) | (PosInf, _) => Ordering::Greater,
            (At { key: a, after: x }, At { key: b, after: y }) => a.cmp(b).then(x.cmp(y)),
        }
    }
}

/// One element of a batch: an access or a finger move.
#[derive(Clone, Debug)]
pub enum MfRequest<K, V> {
    Access(Request<K, V>),
    Move { id: OpId, finger: usize, to: FingerPos<K> },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MoveOutcome {
    /// Applied; `transferred` items changed sector.
    Moved { transferred: usize, far: bool },
    /// A later move of the same finger in the batch replaced this one.
    Superseded,
    Rejected(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MoveResult {
    pub id: OpId,
    pub finger: usize,
    pub outcome: MoveOutcome,
}

#[derive(Clone, Debug)]
pub struct MfOutcome<V> {
    /// Access results, sector by sector, each in its sector's
    /// linearization order.
    pub results: Vec<OpResult<V>>,
    pub moves: Vec<MoveResult>,
    pub reports: Vec<BatchReport>,
}

/// Splits `map` into the keys left of `pos` and those right of it.
fn split_at_finger<K: Key, V: Value>(map: BPMap<K, V>, pos: &FingerPos<K>, cost: &mut Cost) -> (BPMap<K, V>, BPMap<K, V>) {
    match pos {
        FingerPos::NegInf => (BPMap::new(), map),
        FingerPos::PosInf => (map, BPMap::new()),
        FingerPos::At { key, after } => {
            let (mut lo, mid, mut hi) = map.split_key(key, cost);
            if let Some((k, v)) = mid {
                let one = BPMap::from_sorted(vec![(k, v)]).expect("single entry");
                if *after {
                    lo.append_high(one, cost);
                } else {
                    hi.append_low(one, cost);
                }
            }
            (lo, hi)
        }
    }
}

/// Takes the sizes `t(0), t(1), …` off the finger end of `b` into levels
/// `0..k` and leaves the rest for level `k`. `side` is the receiving chain.
fn fill_from<K: Key, V: Value>(side: usize, mut b: BPMap<K, V>, k: usize, cost: &mut Cost) -> Vec<BPMap<K, V>> {
    let mut out = Vec::with_capacity(k + 1);
    for level in 0..k {
        let q = t(level).min(b.len());
        out.push(if side == 0 { b.take_low(q, cost) } else { b.take_high(q, cost) });
    }
    out.push(b);
    out
}

#[derive(Debug)]
pub struct MultiFinger<K, V> {
    fingers: Vec<FingerPos<K>>,
    sectors: Vec<Fs1<K, V>>,
    ledger: Arc<CostLedger>,
}

impl<K: Key, V: Value> MultiFinger<K, V> {
    /// `f` fingers, all at the left end.
    pub fn new(f: usize, ledger: Arc<CostLedger>) -> Self {
        Self::with_fingers(vec![FingerPos::NegInf; f], ledger).expect("equal fingers are ordered")
    }

    pub fn with_fingers(fingers: Vec<FingerPos<K>>, ledger: Arc<CostLedger>) -> Result<Self> {
        Self::from_sorted(Vec::new(), fingers, ledger)
    }

    /// Holds `entries` (strictly increasing), split into sectors at the
    /// given finger positions, which must be non-decreasing.
    pub fn from_sorted(entries: Vec<(K, V)>, fingers: Vec<FingerPos<K>>, ledger: Arc<CostLedger>) -> Result<Self> {
        if !fingers.windows(2).all(|w| w[0] <= w[1]) {
            return Err(Error::Contract("finger positions must be non-decreasing".into()));
        }
        let mut parts: Vec<Vec<(K, V)>> = vec![Vec::new(); fingers.len() + 1];
        for (k, v) in entries {
            let s = fingers.partition_point(|f| f.left_of(&k));
            parts[s].push((k, v));
        }
        let sectors = parts
            .into_iter()
            .map(|p| Fs1::from_sorted(p, Arc::clone(&ledger)))
            .collect::<Result<Vec<_>>>()?;
        Ok(MultiFinger {
            fingers,
            sectors,
            ledger,
        })
    }

    pub fn fingers(&self) -> &[FingerPos<K>] {
        &self.fingers
    }

    pub fn sectors(&self) -> &[Fs1<K, V>] {
        &self.sectors
    }

    pub fn ledger(&self) -> &Arc<CostLedger> {
        &self.ledger
    }

    pub fn len(&self) -> usize {
        self.sectors.iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entries(&self) -> Vec<(K, V)> {
        self.sectors.iter().flat_map(|s| s.entries()).collect()
    }

    /// Sector whose range holds `key`.
    pub fn sector_of(&self, key: &K) -> usize {
        self.fingers.partition_point(|f| f.left_of(key))
    }

    /// Every sector balanced, and every key inside its sector's range.
    pub fn check(&self) -> std::result::Result<(), String> {
        for (s, sec) in self.sectors.iter().enumerate() {
            sec.check().map_err(|e| format!("sector {s}: {e}"))?;
            for (k, _) in sec.entries() {
                if self.sector_of(&k) != s {
                    return Err(format!("key {k:?} in sector {s}, belongs to {}", self.sector_of(&k)));
                }
            }
        }
        Ok(())
    }

    /// Moves finger `finger` to `to`, transferring the items it passes to
    /// the sector on its other side.
    pub fn move_finger(&mut self, finger: usize, to: FingerPos<K>) -> Result<MoveOutcome> {
        let f = self.fingers.len();
        if finger >= f {
            return Err(Error::Range { pos: finger, len: f });
        }
        if (finger > 0 && to < self.fingers[finger - 1]) || (finger + 1 < f && to > self.fingers[finger + 1]) {
            return Err(Error::Contract(format!("finger {finger} would pass a neighbouring finger")));
        }
        let mut cost = Cost::ZERO;
        let old = std::mem::replace(&mut self.fingers[finger], to.clone());
        let outcome = match to.cmp(&old) {
            Ordering::Equal => MoveOutcome::Moved {
                transferred: 0,
                far: false,
            },
            // Leftwards: the left sector gives up its largest keys.
            Ordering::Less => {
                let (l, r) = self.sectors.split_at_mut(finger + 1);
                transfer(&mut l[finger], &mut r[0], 1, &to, &mut cost)?
            }
            Ordering::Greater => {
                let (l, r) = self.sectors.split_at_mut(finger + 1);
                transfer(&mut r[0], &mut l[finger], 0, &to, &mut cost)?
            }
        };
        self.ledger.charge(Phase::Finger, cost);
        Ok(outcome)
    }

    /// Runs a batch: the finger phase, then every sector's share of the
    /// accesses in parallel.
    pub fn process_batch(&mut self, batch: Vec<MfRequest<K, V>>) -> Result<MfOutcome<V>> {
        let mut accesses = Vec::new();
        let mut moves: Vec<(OpId, usize, FingerPos<K>)> = Vec::new();
        for r in batch {
            match r {
                MfRequest::Access(req) => accesses.push(req),
                MfRequest::Move { id, finger, to } => moves.push((id, finger, to)),
            }
        }

        let mut results = Vec::with_capacity(moves.len());
        let mut last_of: Vec<Option<usize>> = vec![None; self.fingers.len()];
        for (n, (_, finger, _)) in moves.iter().enumerate() {
            match last_of.get_mut(*finger) {
                Some(slot) => {
                    if let Some(prev) = slot.replace(n) {
                        results.push((prev, MoveOutcome::Superseded));
                    }
                }
                None => results.push((
                    n,
                    MoveOutcome::Rejected(Error::Range { pos: *finger, len: self.fingers.len() }.to_string()),
                )),
            }
        }
        for n in last_of.into_iter().flatten() {
            let (_, finger, to) = moves[n].clone();
            let outcome = match self.move_finger(finger, to) {
                Ok(o) => o,
                Err(Error::Contract(msg)) => MoveOutcome::Rejected(msg),
                Err(e) => return Err(e),
            };
            results.push((n, outcome));
        }
        results.sort_by_key(|r| r.0);
        let move_results = results
            .into_iter()
            .map(|(n, outcome)| MoveResult {
                id: moves[n].0,
                finger: moves[n].1,
                outcome,
            })
            .collect();

        let b = accesses.len();
        let mut route = Cost::ZERO;
        route.parallel(b as u64 * (ceil_log2(self.fingers.len() + 1) + 1), ceil_log2(b) + 1);
        let mut parts: Vec<Vec<Request<K, V>>> = vec![Vec::new(); self.sectors.len()];
        for req in accesses {
            let s = self.sector_of(req.op.key());
            parts[s].push(req);
        }
        self.ledger.charge(Phase::Locate, route);

        let outs: Vec<_> = self
            .sectors
            .par_iter_mut()
            .zip(parts)
            .map(|(sec, part)| sec.process_batch(part))
            .collect::<Result<Vec<_>>>()?;
        let mut out = MfOutcome {
            results: Vec::with_capacity(b),
            moves: move_results,
            reports: Vec::with_capacity(outs.len()),
        };
        for o in outs {
            out.results.extend(o.results);
            out.reports.push(o.report);
        }
        Ok(out)
    }
}

/// Moves the items of `donor` on the far side of `to` into `receiver`.
/// `near` is the donor chain facing the finger; the receiver faces it with
/// the other chain.
fn transfer<K: Key, V: Value>(
    donor: &mut Fs1<K, V>,
    receiver: &mut Fs1<K, V>,
    near: usize,
    to: &FingerPos<K>,
    cost: &mut Cost,
) -> Result<MoveOutcome> {
    let moves = |key: &K| if near == 1 { to.left_of(key) } else { !to.left_of(key) };
    let segs = &donor.chains().sides[near];
    // Level of the first near-chain segment that keeps some item.
    let mut level = None;
    let mut moved = 0;
    for (k, s) in segs.iter().enumerate() {
        let inner = if near == 1 { s.min_key() } else { s.max_key() };
        match inner {
            Some(x) if !moves(x) => {
                level = Some(k);
                break;
            }
            _ => moved += s.len(),
        }
    }
    let Some(k) = level else {
        return far_transfer(donor, receiver, near, to, cost);
    };

    let d = donor.chains_mut();
    let (stay, part) = {
        let seg = std::mem::take(&mut d.sides[near][k]);
        let (l, r) = split_at_finger(seg, to, cost);
        if near == 1 {
            (l, r)
        } else {
            (r, l)
        }
    };
    d.sides[near][k] = stay;
    let mut b = part;
    for j in (0..k).rev() {
        let s = std::mem::take(&mut d.sides[near][j]);
        if near == 1 {
            b.append_high(s, cost);
        } else {
            b.append_low(s, cost);
        }
    }
    let transferred = b.len();
    debug_assert!(transferred >= moved);
    if transferred == 0 {
        return Ok(MoveOutcome::Moved {
            transferred: 0,
            far: false,
        });
    }

    let side = 1 - near;
    let r = receiver.chains_mut();
    while r.sides[side].len() < k + 2 {
        r.sides[side].push(BPMap::new());
    }
    let mut joined = BPMap::new();
    for j in 0..=k {
        let s = std::mem::take(&mut r.sides[side][j]);
        if side == 0 {
            joined.append_high(s, cost);
        } else {
            joined.append_low(s, cost);
        }
    }
    if side == 0 {
        r.sides[side][k + 1].append_low(joined, cost);
    } else {
        r.sides[side][k + 1].append_high(joined, cost);
    }
    for (j, s) in fill_from(side, b, k, cost).into_iter().enumerate() {
        r.sides[side][j] = s;
    }

    for ch in [donor.chains_mut(), receiver.chains_mut()] {
        trim_empty_tops(ch);
        let reached = vec![true; ch.sections() + 2];
        rebalance_segments(ch, 0, &reached, cost)?;
        rebalance_chains(ch, MOVE_CHAIN_CAP, cost)?;
    }
    Ok(MoveOutcome::Moved {
        transferred,
        far: false,
    })
}

/// Drops empty trailing segments beyond the other chain's length, keeping at
/// least one section.
fn trim_empty_tops<K: Key, V: Value>(ch: &mut Chains<K, V>) {
    for i in 0..2 {
        while ch.sides[i].len() > ch.sides[1 - i].len().max(1) && ch.sides[i].last().is_some_and(|s| s.is_empty()) {
            ch.sides[i].pop();
        }
    }
}

/// Repositions the boundary by splitting the donor and joining the moved
/// part onto the receiver, then laying both out afresh.
fn far_transfer<K: Key, V: Value>(
    donor: &mut Fs1<K, V>,
    receiver: &mut Fs1<K, V>,
    near: usize,
    to: &FingerPos<K>,
    cost: &mut Cost,
) -> Result<MoveOutcome> {
    let all = donor.chains_mut().drain_all(cost);
    let (l, r) = split_at_finger(all, to, cost);
    let (stay, part) = if near == 1 { (l, r) } else { (r, l) };
    let transferred = part.len();
    let rest = receiver.chains_mut().drain_all(cost);
    let joined = if near == 1 {
        BPMap::join_maps(part, rest, cost)?
    } else {
        BPMap::join_maps(rest, part, cost)?
    };
    *donor.chains_mut() = Chains::layout(stay, cost);
    *receiver.chains_mut() = Chains::layout(joined, cost);
    Ok(MoveOutcome::Moved {
        transferred,
        far: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::op::Operation;

    fn mf(n: i64, fingers: Vec<FingerPos<i64>>) -> MultiFinger<i64, i64> {
        let entries = (0..n).map(|k| (k, k)).collect();
        MultiFinger::from_sorted(entries, fingers, Arc::new(CostLedger::new())).unwrap()
    }

    #[test]
    fn positions_order_and_routing() {
        assert!(FingerPos::NegInf < FingerPos::before(3));
        assert!(FingerPos::before(3) < FingerPos::after(3));
        assert!(FingerPos::after(3) < FingerPos::before(4));
        assert!(FingerPos::after(9) < FingerPos::PosInf);
        let m = mf(10, vec![FingerPos::before(3), FingerPos::after(6)]);
        let got: Vec<usize> = (0..10).map(|k| m.sector_of(&k)).collect();
        assert_eq!(got, vec![0, 0, 0, 1, 1, 1, 1, 2, 2, 2]);
        assert_eq!(m.sectors().iter().map(|s| s.len()).collect::<Vec<_>>(), vec![3, 4, 3]);
    }

    #[test]
    fn zero_distance_move_changes_nothing() {
        let mut m = mf(500, vec![FingerPos::before(250)]);
        let before: Vec<_> = m.sectors().iter().map(|s| s.chains().shape()).collect();
        assert_eq!(
            m.move_finger(0, FingerPos::before(250)).unwrap(),
            MoveOutcome::Moved {
                transferred: 0,
                far: false
            }
        );
        let after: Vec<_> = m.sectors().iter().map(|s| s.chains().shape()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn move_past_one_item() {
        let mut m = mf(500, vec![FingerPos::before(250)]);
        let out = m.move_finger(0, FingerPos::before(249)).unwrap();
        assert_eq!(
            out,
            MoveOutcome::Moved {
                transferred: 1,
                far: false
            }
        );
        assert_eq!(m.sectors()[0].len(), 249);
        assert_eq!(m.sectors()[1].len(), 251);
        assert_eq!(m.sectors()[1].chains().seg(0, 0).unwrap().min_key(), Some(&249));
        m.check().unwrap();
    }

    #[test]
    fn moves_both_ways_and_far() {
        let mut m = mf(3000, vec![FingerPos::before(1000), FingerPos::before(2000)]);
        for (f, to) in [(0, 1040), (0, 700), (1, 1900), (1, 2600), (0, 1899), (0, 10), (1, 2999)] {
            m.move_finger(f, FingerPos::before(to)).unwrap();
            m.check().unwrap_or_else(|e| panic!("after moving {f} to {to}: {e}"));
            assert_eq!(m.len(), 3000);
        }
        assert!(matches!(
            m.move_finger(0, FingerPos::PosInf),
            Err(Error::Contract(_))
        ));
        assert!(matches!(m.move_finger(5, FingerPos::NegInf), Err(Error::Range { .. })));
    }

    #[test]
    fn last_move_of_a_finger_wins() {
        let mut m = mf(100, vec![FingerPos::before(50)]);
        let out = m
            .process_batch(vec![
                MfRequest::Move {
                    id: 1,
                    finger: 0,
                    to: FingerPos::before(10),
                },
                MfRequest::Access(Request::new(2, Operation::Search(30))),
                MfRequest::Move {
                    id: 3,
                    finger: 0,
                    to: FingerPos::before(60),
                },
            ])
            .unwrap();
        assert_eq!(out.moves[0].outcome, MoveOutcome::Superseded);
        assert!(matches!(out.moves[1].outcome, MoveOutcome::Moved { transferred: 10, .. }));
        assert_eq!(m.fingers(), &[FingerPos::before(60)]);
        assert_eq!(out.results, vec![OpResult { id: 2, prior: Some(30) }]);
        assert_eq!(m.sectors()[0].len(), 60);
    }
}
