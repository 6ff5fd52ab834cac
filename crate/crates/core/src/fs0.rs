//! Sequential amortized finger structure: one operation at a time, each
//! followed by cascade and chain rebalancing.

use std::sync::Arc;

use crate::cost::{Cost, CostLedger, Phase};
use crate::error::{Error, Result};
use crate::op::{Key, OpResult, Request, Value};
use crate::segment::{c, shift_across, shift_down, shift_up, t, Balance, Chains};

/// Where an operation ran and what locating it cost.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Placement {
    pub side: usize,
    pub level: usize,
    /// Units spent finding the segment and accessing it.
    pub search_units: u64,
}

#[derive(Debug)]
pub struct Fs0<K, V> {
    chains: Chains<K, V>,
    ledger: Arc<CostLedger>,
}

impl<K: Key, V: Value> Default for Fs0<K, V> {
    fn default() -> Self {
        Self::new()
    }
}

impl<K: Key, V: Value> Fs0<K, V> {
    pub fn new() -> Self {
        Self::with_ledger(Arc::new(CostLedger::new()))
    }

    pub fn with_ledger(ledger: Arc<CostLedger>) -> Self {
        Fs0 {
            chains: Chains::new(),
            ledger,
        }
    }

    /// A structure holding `entries` (strictly increasing) in balanced layout.
    pub fn from_sorted(entries: Vec<(K, V)>, ledger: Arc<CostLedger>) -> Result<Self> {
        let map = crate::bpmap::BPMap::from_sorted(entries)?;
        let mut cost = Cost::ZERO;
        Ok(Fs0 {
            chains: Chains::layout(map, &mut cost),
            ledger,
        })
    }

    pub fn chains(&self) -> &Chains<K, V> {
        &self.chains
    }

    pub fn ledger(&self) -> &Arc<CostLedger> {
        &self.ledger
    }

    pub fn len(&self) -> usize {
        self.chains.total_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entries(&self) -> Vec<(K, V)> {
        self.chains.entries()
    }

    pub fn check(&self) -> std::result::Result<(), String> {
        self.chains.check()
    }

    pub fn execute(&mut self, req: &Request<K, V>) -> OpResult<V> {
        self.execute_traced(req).0
    }

    /// Runs one operation and reports the segment it fit in.
    pub fn execute_traced(&mut self, req: &Request<K, V>) -> (OpResult<V>, Placement) {
        let key = req.op.key();
        let mut find = Cost::ZERO;
        let (i, k) = self
            .chains
            .locate(key, &mut find)
            .expect("a closed structure places every key");
        let mut access = Cost::ZERO;
        let prior = self.chains.sides[i][k]
            .sorted_batch_access(std::slice::from_ref(&req.op), &mut access)
            .expect("single operation is trivially sorted")
            .pop()
            .expect("one result per operation");
        self.ledger.charge_op(Phase::Locate, req.id, find.work);
        self.ledger.charge_op(Phase::Execute, req.id, access.work);
        self.ledger.note_level(k);

        let mut reb = Cost::ZERO;
        self.cascade(i, k, &mut reb);
        self.rebalance_chains(&mut reb)
            .expect("single-operation changes leave chains at most one apart");
        self.ledger.charge(Phase::Rebalance, reb);
        (
            OpResult { id: req.id, prior },
            Placement {
                side: i,
                level: k,
                search_units: find.work + access.work,
            },
        )
    }

    fn cascade(&mut self, i: usize, mut k: usize, cost: &mut Cost) {
        while k < self.chains.len(i) && self.chains.status(i, k) != Balance::Balanced {
            self.rebalance_segment(i, k, cost);
            k += 1;
        }
    }

    /// Brings `S_i[k]` to its target size, or as close as the next segment
    /// allows. Creates `S_i[k+1]` when shifting out of the last segment and
    /// removes it when a fill empties it. Does nothing to a balanced segment.
    pub fn rebalance_segment(&mut self, i: usize, k: usize, cost: &mut Cost) {
        let size = self.chains.size(i, k);
        match self.chains.status(i, k) {
            Balance::Balanced => {}
            Balance::Overfull => {
                let segs = &mut self.chains.sides[i];
                if k + 1 == segs.len() {
                    segs.push(Default::default());
                    self.ledger.note_level(k + 1);
                }
                let (lo, hi) = segs.split_at_mut(k + 1);
                shift_up(i, &mut lo[k], &mut hi[0], size - t(k), cost);
            }
            Balance::Underfull => {
                let segs = &mut self.chains.sides[i];
                if k + 1 < segs.len() {
                    let (lo, hi) = segs.split_at_mut(k + 1);
                    let q = (t(k) - size).min(hi[0].len());
                    shift_down(i, &mut lo[k], &mut hi[0], q, cost);
                    if hi[0].is_empty() && k + 2 == segs.len() {
                        segs.pop();
                    }
                }
            }
        }
    }

    /// Evens out chains whose lengths differ by one: fills the shorter
    /// chain's last segment from the longer chain's last, then either drops
    /// the emptied segment or opens a new one on the shorter side.
    pub fn rebalance_chains(&mut self, cost: &mut Cost) -> Result<()> {
        let (l0, l1) = (self.chains.len(0), self.chains.len(1));
        if l0 == l1 {
            return Ok(());
        }
        if l0.abs_diff(l1) > 1 {
            return Err(Error::Invariant(format!(
                "chain lengths {l0} and {l1} differ by more than one"
            )));
        }
        let (i, j) = if l0 > l1 { (0, 1) } else { (1, 0) };
        let l = self.chains.len(j) - 1;
        let [a, b] = &mut self.chains.sides;
        let (long, short) = if i == 0 { (a, b) } else { (b, a) };
        let q = t(l).saturating_sub(short[l].len()).min(long[l + 1].len());
        shift_across(i, &mut long[l + 1], &mut short[l], q, cost);
        if short[l].len() < t(l) {
            debug_assert!(long[l + 1].is_empty());
            long.pop();
        } else {
            short.push(Default::default());
        }
        cost.step(1);
        Ok(())
    }
}

/// Upper bound on the search units of an operation fitting level `k`:
/// a fit check per level up to `k` plus one segment access.
pub fn search_bound(k: usize) -> u64 {
    // Heights of AVL trees over at most 3·c(a) items.
    let h = |a: usize| (1.45 * ((3 * c(a).min(1 << 40)) as f64).log2()).ceil() as u64 + 2;
    (0..=k).map(|a| 2 * (h(a) + 1)).sum::<u64>() + 3 * h(k) + 4
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::op::Operation;
    use crate::segment::classify;

    fn req(id: u64, op: Operation<i64, i64>) -> Request<i64, i64> {
        Request::new(id, op)
    }

    #[test]
    fn insert_into_empty() {
        let mut s = Fs0::new();
        let (r, at) = s.execute_traced(&req(0, Operation::Insert(5, 50)));
        assert_eq!(r.prior, None);
        assert_eq!((at.side, at.level), (0, 0));
        assert_eq!(s.chains().seg(0, 0).unwrap().to_vec(), vec![(5, 50)]);
    }

    #[test]
    fn ascending_then_search_smallest() {
        let mut s = Fs0::new();
        for k in 1..=100 {
            s.execute(&req(k as u64, Operation::Insert(k, k)));
            s.check().unwrap();
        }
        let (r, at) = s.execute_traced(&req(1000, Operation::Search(1)));
        assert_eq!(r.prior, Some(1));
        assert_eq!(at.level, 0);
        assert!(at.search_units <= search_bound(0));
    }

    #[test]
    fn overfull_first_segment_sheds_to_target() {
        let mut s: Fs0<i64, i64> = Fs0::new();
        let mut cost = Cost::ZERO;
        // Build S₀[0] with 13 items by hand, bypassing rebalancing.
        let items: Vec<(i64, i64)> = (0..13).map(|k| (k, k)).collect();
        s.chains.sides[0][0] = crate::BPMap::from_sorted(items).unwrap();
        assert_eq!(s.chains.status(0, 0), Balance::Overfull);
        s.rebalance_segment(0, 0, &mut cost);
        assert_eq!(s.chains.size(0, 0), 8);
        assert_eq!(s.chains.size(0, 1), 5);
        assert_eq!(s.chains.seg(0, 1).unwrap().min_key(), Some(&8));
        // Idempotent on a balanced segment.
        let before = s.chains.shape();
        s.rebalance_segment(0, 0, &mut cost);
        assert_eq!(s.chains.shape(), before);
    }

    #[test]
    fn emptied_last_segment_is_removed() {
        let mut s: Fs0<i64, i64> = Fs0::new();
        let mut cost = Cost::ZERO;
        s.chains.sides[0] = vec![
            crate::BPMap::from_sorted((0..3).map(|k| (k, k)).collect()).unwrap(),
            crate::BPMap::from_sorted(vec![(10, 10)]).unwrap(),
        ];
        s.chains.sides[1].push(Default::default());
        s.rebalance_segment(0, 0, &mut cost);
        assert_eq!(s.chains.shape()[0], vec![4]);
    }

    #[test]
    fn cascade_reaches_second_level() {
        let mut s: Fs0<i64, i64> = Fs0::new();
        let mut cost = Cost::ZERO;
        // S₀[1] sits at its upper limit t(1)+c(1)=48; S₀[0] overflows by 5.
        s.chains.sides[0] = vec![
            crate::BPMap::from_sorted((0..13).map(|k| (k, k)).collect()).unwrap(),
            crate::BPMap::from_sorted((100..148).map(|k| (k, k)).collect()).unwrap(),
        ];
        s.chains.sides[1].push(Default::default());
        s.cascade(0, 0, &mut cost);
        assert_eq!(s.chains.shape()[0], vec![8, 32, 21]);
        s.chains.check_order().unwrap();
    }

    #[test]
    fn chain_fill_then_drop_or_extend() {
        // Front chain one longer, back last segment underfull and the source
        // runs dry: the emptied source is dropped.
        let mut s: Fs0<i64, i64> = Fs0::new();
        let mut cost = Cost::ZERO;
        s.chains.sides[0] = vec![
            crate::BPMap::from_sorted((0..8).map(|k| (k, k)).collect()).unwrap(),
            crate::BPMap::from_sorted((8..11).map(|k| (k, k)).collect()).unwrap(),
        ];
        s.chains.sides[1] = vec![crate::BPMap::from_sorted((20..22).map(|k| (k, k)).collect()).unwrap()];
        s.rebalance_chains(&mut cost).unwrap();
        assert_eq!(s.chains.shape(), [vec![8], vec![5]]);

        // Back last segment reaches target: a new empty back segment opens.
        let mut s: Fs0<i64, i64> = Fs0::new();
        s.chains.sides[0] = vec![
            crate::BPMap::from_sorted((0..8).map(|k| (k, k)).collect()).unwrap(),
            crate::BPMap::from_sorted((8..20).map(|k| (k, k)).collect()).unwrap(),
        ];
        s.chains.sides[1] = vec![crate::BPMap::from_sorted((30..36).map(|k| (k, k)).collect()).unwrap()];
        s.rebalance_chains(&mut cost).unwrap();
        assert_eq!(s.chains.shape(), [vec![8, 10], vec![8, 0]]);
        s.check().unwrap();

        // Equal chains: no-op.
        let before = s.chains.shape();
        s.rebalance_chains(&mut cost).unwrap();
        assert_eq!(s.chains.shape(), before);
    }

    #[test]
    fn chains_two_apart_is_an_invariant_violation() {
        let mut s: Fs0<i64, i64> = Fs0::new();
        s.chains.sides[0].push(Default::default());
        s.chains.sides[0].push(Default::default());
        let mut cost = Cost::ZERO;
        assert!(matches!(s.rebalance_chains(&mut cost), Err(Error::Invariant(_))));
    }

    #[test]
    fn classify_matches_segment_status() {
        let s: Fs0<i64, i64> = Fs0::new();
        assert_eq!(s.chains.status(0, 0), classify(0, 0, true));
    }
}
