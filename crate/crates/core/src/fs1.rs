//! Batch-processed finger structure: each batch runs a preliminary,
//! separation, execution and rebalancing phase over a first slab of `m`
//! sections and the final slab beyond it.

use std::cmp::Ordering;
use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::sync::Arc;

use crate::batch::Batch;
use crate::bpmap::BPMap;
use crate::cost::{ceil_log2, Cost, CostLedger, Phase, GRAIN};
use crate::error::{Error, Result};
use crate::op::{AccessKind, GroupOperation, Key, OpId, OpResult, Operation, Request, Value};
use crate::segment::{c, ceil_loglog, shift_across, shift_down, shift_up, t, Balance, Chains};
use crate::sort::{pesort_with_stats, SortStats};

/// Chain rebalancing iterations allowed per batch.
pub const CHAIN_ITERATION_CAP: usize = 2;

/// Number of first-slab sections for a batch of `b` operations:
/// ⌈log₂log₂(2b)⌉ + 1, with single-operation batches treated as `b = 2`.
pub fn first_slab_len(b: usize) -> usize {
    ceil_loglog(2 * b.max(2)) + 1
}

/// Type rank, then key.
pub fn op_order<K: Ord, V>(a: &Request<K, V>, b: &Request<K, V>) -> Ordering {
    (a.op.kind(), a.op.key()).cmp(&(b.op.kind(), b.op.key()))
}

/// An operation after the preliminary phase.
#[derive(Clone, Debug)]
pub struct Tagged<K, V> {
    pub req: Request<K, V>,
    /// Segment the key fits in, if within the probed sections.
    pub fit: Option<(usize, usize)>,
    pub found: Option<V>,
}

/// Probes sections `0..m` in order, tagging each operation with its fit and
/// current value, and stops early once every operation has found its
/// section. Operations beyond the probed sections keep `fit == None`.
pub fn preliminary<K: Key, V: Value>(
    chains: &Chains<K, V>,
    batch: Vec<Request<K, V>>,
    m: usize,
    ledger: &CostLedger,
    cost: &mut Cost,
) -> Vec<Tagged<K, V>> {
    let n = batch.len();
    let mut tagged: Vec<Tagged<K, V>> = batch
        .into_iter()
        .map(|req| Tagged {
            req,
            fit: None,
            found: None,
        })
        .collect();
    let mut charges = vec![0u64; n];
    let mut remaining: Vec<usize> = (0..n).collect();
    let sections = chains.sections();
    for k in 0..m.min(sections) {
        if remaining.is_empty() {
            break;
        }
        chains.note_touch(k);
        let last = !chains.open_top && k + 1 == sections;
        let seg0 = chains.seg(0, k);
        let seg1 = chains.seg(1, k);
        let max0 = seg0.and_then(|s| s.max_key());
        let min1 = seg1.and_then(|s| s.min_key());
        cost.step(u64::from(seg0.map_or(0, |s| s.height()) + seg1.map_or(0, |s| s.height())) + 2);

        let (mut at0, mut at1, mut rest) = (Vec::new(), Vec::new(), Vec::new());
        for &idx in &remaining {
            let key = tagged[idx].req.op.key();
            charges[idx] += 2;
            if max0.is_some_and(|m| key <= m) {
                at0.push(idx);
            } else if min1.is_some_and(|m| key >= m) {
                at1.push(idx);
            } else if last {
                if seg0.is_some() {
                    at0.push(idx);
                } else {
                    at1.push(idx);
                }
            } else {
                rest.push(idx);
            }
        }
        cost.parallel(2 * remaining.len() as u64, ceil_log2(remaining.len()) + 2);

        let keys = |ix: &[usize]| -> Vec<K> { ix.iter().map(|&i| tagged[i].req.op.key().clone()).collect() };
        let (k0, k1) = (keys(&at0), keys(&at1));
        let probe = |seg: Option<&BPMap<K, V>>, ks: &[K], c: &mut Cost| -> Vec<(Option<V>, u64)> {
            let Some(seg) = seg else { return Vec::new() };
            let found = seg.search_counted(ks);
            let deepest = found.iter().map(|f| f.1).max().unwrap_or(0);
            c.parallel(found.iter().map(|f| f.1).sum(), deepest + ceil_log2(ks.len()) + 1);
            found
        };
        let fork = k0.len() + k1.len() >= GRAIN;
        let (f0, f1) = cost.join(fork, |c| probe(seg0, &k0, c), |c| probe(seg1, &k1, c));
        for (side, ix, found) in [(0, &at0, f0), (1, &at1, f1)] {
            for (&i, (v, steps)) in ix.iter().zip(found) {
                tagged[i].fit = Some((side, k));
                tagged[i].found = v;
                charges[i] += steps;
            }
        }
        remaining = rest;
    }
    ledger.charge_ops(
        Phase::Locate,
        tagged.iter().zip(&charges).map(|(t, &u)| (t.req.id, u)),
    );
    tagged
}

/// The three parts of a batch after separation. Effectual and residual
/// group-ops are sorted by type rank, then key.
#[derive(Debug)]
pub struct Separated<K, V> {
    pub ineffectual: Vec<Request<K, V>>,
    pub effectual: Vec<GroupOperation<K, V>>,
    pub residual: Vec<GroupOperation<K, V>>,
    pub sort: SortStats,
}

fn is_ineffectual<K, V>(t: &Tagged<K, V>) -> bool {
    t.fit.is_some() && t.found.is_none() && t.req.op.kind() != AccessKind::Insert
}

/// Splits tagged operations into ineffectual, effectual and residual ones,
/// entropy-sorting and grouping the latter two.
pub fn separate<K: Key, V: Value>(tagged: Vec<Tagged<K, V>>, cost: &mut Cost) -> Separated<K, V> {
    let n = tagged.len();
    cost.parallel(n as u64, ceil_log2(n) + 1);
    let (mut ineffectual, mut effectual, mut residual) = (Vec::new(), Vec::new(), Vec::new());
    for t in tagged {
        if is_ineffectual(&t) {
            ineffectual.push(t.req);
        } else if t.fit.is_some() {
            effectual.push(t.req);
        } else {
            residual.push(t.req);
        }
    }
    let group = |reqs: Vec<Request<K, V>>, c: &mut Cost| -> (Vec<GroupOperation<K, V>>, SortStats) {
        if reqs.is_empty() {
            return (Vec::new(), SortStats::default());
        }
        let (sorted, stats, sc) = pesort_with_stats(&Batch::from(reqs), &op_order);
        c.then(sc);
        (sorted.iter().cloned().map(GroupOperation::from_bundle).collect(), stats)
    };
    let fork = effectual.len() + residual.len() >= GRAIN;
    let ((effectual, se), (residual, sr)) = cost.join(fork, |c| group(effectual, c), |c| group(residual, c));
    Separated {
        ineffectual,
        effectual,
        residual,
        sort: SortStats {
            comparisons: se.comparisons + sr.comparisons,
            entropy_budget: se.entropy_budget + sr.entropy_budget,
        },
    }
}

/// Group-ops split by access type, each part sorted by key.
pub type ByKind<K, V> = [Vec<GroupOperation<K, V>>; 4];

pub fn by_kind<K: Key, V: Value>(groups: Vec<GroupOperation<K, V>>) -> ByKind<K, V> {
    let mut out: ByKind<K, V> = Default::default();
    for g in groups {
        out[g.kind().rank()].push(g);
    }
    out
}

/// Applies each type's group-ops to one segment, types in rank order.
/// Returns every group with the prior value of its key.
pub fn apply_to_segment<K: Key, V: Value>(
    seg: &mut BPMap<K, V>,
    parts: ByKind<K, V>,
    cost: &mut Cost,
) -> Vec<(GroupOperation<K, V>, Option<V>)> {
    let mut out = Vec::new();
    for part in parts {
        if part.is_empty() {
            continue;
        }
        let ops: Vec<Operation<K, V>> = part.iter().map(|g| g.effect().op.clone()).collect();
        let priors = seg
            .sorted_batch_access(&ops, cost)
            .expect("group-ops of one type have distinct sorted keys");
        out.extend(part.into_iter().zip(priors));
    }
    out
}

/// Splits key-sorted group-ops of one type into those fitting the front
/// segment (keys up to `max0`), those fitting the back segment (keys from
/// `min1` on), and the rest, which stay in `g`. With `default` set, the rest
/// go to that side instead.
pub fn split_fitting<K: Key, V: Value>(
    max0: Option<&K>,
    min1: Option<&K>,
    default: Option<usize>,
    g: &mut Vec<GroupOperation<K, V>>,
    cost: &mut Cost,
) -> (Vec<GroupOperation<K, V>>, Vec<GroupOperation<K, V>>) {
    if g.is_empty() {
        return (Vec::new(), Vec::new());
    }
    cost.step(2 * (ceil_log2(g.len() + 1) + 1));
    let mut n0 = match max0 {
        Some(m) => g.partition_point(|x| x.key() <= m),
        None => 0,
    };
    let mut s1 = match min1 {
        Some(m) => g.partition_point(|x| x.key() < m).max(n0),
        None => g.len(),
    };
    match default {
        Some(0) => n0 = s1,
        Some(_) => s1 = n0,
        None => {}
    }
    let back = g.split_off(s1);
    let mid = g.split_off(n0);
    (std::mem::replace(g, mid), back)
}

/// Cuts the group-ops that fit `S₀[k]` (a prefix of each part) and `S₁[k]`
/// (a suffix) out of `gs`. At the last section everything fits.
pub fn cut_section<K: Key, V: Value>(
    chains: &Chains<K, V>,
    k: usize,
    gs: &mut ByKind<K, V>,
    cost: &mut Cost,
) -> (ByKind<K, V>, ByKind<K, V>) {
    let last = !chains.open_top && k + 1 == chains.sections();
    let seg0 = chains.seg(0, k);
    let seg1 = chains.seg(1, k);
    let max0 = seg0.and_then(|s| s.max_key());
    let min1 = seg1.and_then(|s| s.min_key());
    cost.step(u64::from(seg0.map_or(0, |s| s.height()) + seg1.map_or(0, |s| s.height())) + 2);
    let default = last.then_some(if seg0.is_some() { 0 } else { 1 });
    let mut front: ByKind<K, V> = Default::default();
    let mut back: ByKind<K, V> = Default::default();
    for a in 0..4 {
        (front[a], back[a]) = split_fitting(max0, min1, default, &mut gs[a], cost);
    }
    (front, back)
}

/// Runs sorted group-ops through `levels` in order, stopping once none are
/// left. Returns the applied groups with their priors, the group-ops left
/// over, and the sections reached.
pub fn execute<K: Key, V: Value>(
    chains: &mut Chains<K, V>,
    groups: Vec<GroupOperation<K, V>>,
    levels: Range<usize>,
    cost: &mut Cost,
) -> (Vec<(GroupOperation<K, V>, Option<V>)>, Vec<GroupOperation<K, V>>, Vec<usize>) {
    let mut gs = by_kind(groups);
    let mut done = Vec::new();
    let mut reached = Vec::new();
    for k in levels {
        if gs.iter().all(|g| g.is_empty()) || k >= chains.sections() {
            break;
        }
        reached.push(k);
        chains.note_touch(k);
        let (front, back) = cut_section(chains, k, &mut gs, cost);
        let fork = front.iter().chain(back.iter()).map(|g| g.len()).sum::<usize>() >= GRAIN;
        let [s0, s1] = &mut chains.sides;
        let (r0, r1) = cost.join(
            fork,
            |c| match s0.get_mut(k) {
                Some(seg) => apply_to_segment(seg, front, c),
                None => {
                    assert!(front.iter().all(|g| g.is_empty()), "ops cut for a missing segment");
                    Vec::new()
                }
            },
            |c| match s1.get_mut(k) {
                Some(seg) => apply_to_segment(seg, back, c),
                None => {
                    assert!(back.iter().all(|g| g.is_empty()), "ops cut for a missing segment");
                    Vec::new()
                }
            },
        );
        done.extend(r0);
        done.extend(r1);
    }
    let leftover = gs.into_iter().flatten().collect();
    (done, leftover, reached)
}

fn first_underfull<K: Key, V: Value>(segs: &[BPMap<K, V>], open_top: bool, upto: usize) -> Option<usize> {
    (0..upto.min(segs.len())).find(|&k| {
        let last = !open_top && k + 1 == segs.len();
        crate::segment::classify(segs[k].len(), k, last) == Balance::Underfull
    })
}

/// Fills `segs[k0..k]` from `segs[k]`: for `j` from `k-1` down to `k0`,
/// shifts items down so that `segs[k0..=j]` total `Σ t(a)` or as close as
/// possible, removing a trailing segment that becomes empty.
pub fn fill<K: Key, V: Value>(
    side: usize,
    segs: &mut Vec<BPMap<K, V>>,
    open_top: bool,
    k0: usize,
    k: usize,
    touched: &AtomicU64,
    cost: &mut Cost,
) {
    for j in (k0..k).rev() {
        if j + 1 >= segs.len() {
            continue;
        }
        let target: usize = (k0..=j).map(t).fold(0usize, |a, b| a.saturating_add(b));
        let have: usize = segs[k0..=j].iter().map(|s| s.len()).sum();
        if have < target {
            let (lo, hi) = segs.split_at_mut(j + 1);
            let q = (target - have).min(hi[0].len());
            shift_down(side, &mut lo[j], &mut hi[0], q, cost);
            touched.fetch_or((1 << j) | (1 << (j + 1)), AtomicOrdering::Relaxed);
        }
        if !open_top && j + 2 == segs.len() && segs[j + 1].is_empty() {
            segs.pop();
        }
    }
}

fn status_of<K, V>(segs: &[BPMap<K, V>], open_top: bool, k: usize) -> Balance {
    let last = !open_top && k + 1 == segs.len();
    crate::segment::classify(segs[k].len(), k, last)
}

/// Checks that every imbalanced segment in `segs[0..=k]` is either `segs[k]`
/// or starts an all-underfull run up to `k`.
fn check_segment_invariant<K, V>(segs: &[BPMap<K, V>], open_top: bool, k: usize) -> Result<()> {
    let upto = (k + 1).min(segs.len());
    for a in 0..upto {
        if status_of(segs, open_top, a) != Balance::Balanced && a != k {
            let run_ok = (a..upto).all(|b| status_of(segs, open_top, b) == Balance::Underfull);
            if !run_ok {
                return Err(Error::Invariant(format!(
                    "segment rebalancing: S[{a}] imbalanced after level {k}, sizes {:?}",
                    segs.iter().map(|s| s.len()).collect::<Vec<_>>()
                )));
            }
        }
    }
    Ok(())
}

/// Segment rebalancing of one chain. `reached[k]` tells whether execution
/// visited section `k`; `m` is where the final slab begins.
pub fn rebalance_side<K: Key, V: Value>(
    side: usize,
    segs: &mut Vec<BPMap<K, V>>,
    open_top: bool,
    m: usize,
    reached: &[bool],
    touched: &AtomicU64,
    cost: &mut Cost,
) -> Result<()> {
    let mut k = 0;
    while k < segs.len() {
        if k > 0 {
            match status_of(segs, open_top, k - 1) {
                Balance::Overfull => {
                    let q = segs[k - 1].len() - t(k - 1);
                    let (lo, hi) = segs.split_at_mut(k);
                    shift_up(side, &mut lo[k - 1], &mut hi[0], q, cost);
                    touched.fetch_or((1 << (k - 1)) | (1 << k), AtomicOrdering::Relaxed);
                }
                Balance::Underfull => {
                    let last = !open_top && k + 1 == segs.len();
                    if segs[k].len() >= c(k) / 2 || last {
                        let k0 = first_underfull(segs, open_top, k).expect("segs[k-1] is underfull");
                        fill(side, segs, open_top, k0, k, touched, cost);
                    }
                }
                Balance::Balanced => {}
            }
        }
        if k >= segs.len() {
            break;
        }
        let last = !open_top && k + 1 == segs.len();
        if last && status_of(segs, open_top, k) == Balance::Overfull {
            segs.push(BPMap::new());
            touched.fetch_or(1 << (k + 1).min(63), AtomicOrdering::Relaxed);
        }
        if cfg!(debug_assertions) {
            check_segment_invariant(segs, open_top, k)?;
        }
        if status_of(segs, open_top, k) == Balance::Balanced && !reached.get(k).copied().unwrap_or(false) {
            if k < m {
                k = m;
                continue;
            }
            break;
        }
        k += 1;
    }
    Ok(())
}

/// Segment rebalancing of both chains, in parallel.
pub fn rebalance_segments<K: Key, V: Value>(chains: &mut Chains<K, V>, m: usize, reached: &[bool], cost: &mut Cost) -> Result<()> {
    let open_top = chains.open_top;
    let touched = &chains.touched;
    let [s0, s1] = &mut chains.sides;
    let (a, b) = cost.join(
        true,
        |c| rebalance_side(0, s0, open_top, m, reached, touched, c),
        |c| rebalance_side(1, s1, open_top, m, reached, touched, c),
    );
    a.and(b)
}

/// Chain rebalancing: moves the longer chain's last segment across and
/// refills the shorter chain, repeating until the lengths agree. Returns the
/// number of iterations, failing once `cap` is exceeded.
pub fn rebalance_chains<K: Key, V: Value>(chains: &mut Chains<K, V>, cap: usize, cost: &mut Cost) -> Result<usize> {
    let mut iterations = 0;
    while chains.len(0) != chains.len(1) {
        iterations += 1;
        if iterations > cap {
            return Err(Error::ChainRebalance { cap });
        }
        let (i, j) = if chains.len(0) > chains.len(1) { (0, 1) } else { (1, 0) };
        let k = chains.len(i) - 1;
        let touched = &chains.touched;
        let [a, b] = &mut chains.sides;
        let (long, short) = if i == 0 { (a, b) } else { (b, a) };
        while short.len() < k + 1 {
            short.push(BPMap::new());
        }
        let all = long[k].len();
        shift_across(i, &mut long[k], &mut short[k], all, cost);
        touched.fetch_or(1 << k.min(63), AtomicOrdering::Relaxed);
        if let Some(k0) = first_underfull(short, false, k) {
            fill(j, short, false, k0, k, touched, cost);
        }
        if short.len() <= k || short[k].is_empty() {
            long.pop();
            if short.len() == k + 1 {
                short.pop();
            }
        }
        cost.step(1);
    }
    Ok(iterations)
}

#[derive(Clone, Debug, Default)]
pub struct BatchReport {
    pub size: usize,
    pub first_slab: usize,
    pub ineffectual: usize,
    pub effectual: usize,
    pub residual: usize,
    pub groups: usize,
    pub max_group_height: usize,
    pub chain_iterations: usize,
    /// Bitmask of section levels probed, executed or rebalanced.
    pub touched: u64,
    pub sort: SortStats,
    pub cost: Cost,
}

#[derive(Clone, Debug)]
pub struct BatchOutcome<V> {
    /// Results in linearization order.
    pub results: Vec<OpResult<V>>,
    pub report: BatchReport,
}

impl<V> BatchOutcome<V> {
    pub fn order(&self) -> Vec<OpId> {
        self.results.iter().map(|r| r.id).collect()
    }
}

/// Orders the batch's applied groups as the canonical linearization:
/// searches, updates, insertions from the ends inwards, deletions from the
/// middle outwards; members of a group stay together in group order.
pub fn linearize<K: Key, V: Value>(
    ineffectual: Vec<Request<K, V>>,
    applied: Vec<(GroupOperation<K, V>, Option<V>)>,
) -> Vec<OpResult<V>> {
    let mut out: Vec<OpResult<V>> = ineffectual
        .into_iter()
        .map(|r| OpResult { id: r.id, prior: None })
        .collect();
    let mut parts = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    for (g, prior) in applied {
        parts[g.kind().rank()].push((g, prior));
    }
    for (rank, mut part) in parts.into_iter().enumerate() {
        part.sort_by(|a, b| a.0.key().cmp(b.0.key()));
        if rank >= AccessKind::Insert.rank() {
            let n = part.len();
            let mut keyed: Vec<(usize, usize)> = (0..n).map(|p| ((p + 1).min(n - p), p)).collect();
            keyed.sort();
            if rank == AccessKind::Delete.rank() {
                keyed.reverse();
            }
            let mut slots: Vec<Option<(GroupOperation<K, V>, Option<V>)>> = part.into_iter().map(Some).collect();
            part = keyed.into_iter().map(|(_, p)| slots[p].take().unwrap()).collect();
        }
        for (g, prior) in part {
            out.extend(g.fan_out(prior));
        }
    }
    out
}

#[derive(Debug)]
pub struct Fs1<K, V> {
    chains: Chains<K, V>,
    ledger: Arc<CostLedger>,
    chain_cap: usize,
}

impl<K: Key, V: Value> Default for Fs1<K, V> {
    fn default() -> Self {
        Self::new()
    }
}

impl<K: Key, V: Value> Fs1<K, V> {
    pub fn new() -> Self {
        Self::with_ledger(Arc::new(CostLedger::new()))
    }

    pub fn with_ledger(ledger: Arc<CostLedger>) -> Self {
        Fs1 {
            chains: Chains::new(),
            ledger,
            chain_cap: CHAIN_ITERATION_CAP,
        }
    }

    /// A structure holding `entries` (strictly increasing) in balanced layout.
    pub fn from_sorted(entries: Vec<(K, V)>, ledger: Arc<CostLedger>) -> Result<Self> {
        let map = BPMap::from_sorted(entries)?;
        let mut cost = Cost::ZERO;
        let chains = Chains::layout(map, &mut cost);
        Ok(Fs1 {
            chains,
            ledger,
            chain_cap: CHAIN_ITERATION_CAP,
        })
    }

    pub fn set_chain_cap(&mut self, cap: usize) {
        self.chain_cap = cap;
    }

    pub fn chains(&self) -> &Chains<K, V> {
        &self.chains
    }

    pub(crate) fn chains_mut(&mut self) -> &mut Chains<K, V> {
        &mut self.chains
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

    pub fn process_batch(&mut self, batch: Vec<Request<K, V>>) -> Result<BatchOutcome<V>> {
        let b = batch.len();
        let m = first_slab_len(b);
        let mut report = BatchReport {
            size: b,
            first_slab: m,
            ..Default::default()
        };
        if b == 0 {
            return Ok(BatchOutcome {
                results: Vec::new(),
                report,
            });
        }
        self.chains.take_touched();

        let mut locate = Cost::ZERO;
        let tagged = preliminary(&self.chains, batch, m, &self.ledger, &mut locate);
        self.ledger.charge(Phase::Locate, Cost::new(0, locate.span));

        let mut sep_cost = Cost::ZERO;
        let sep = separate(tagged, &mut sep_cost);
        self.ledger.charge(Phase::Separate, sep_cost);
        report.ineffectual = sep.ineffectual.len();
        report.effectual = sep.effectual.iter().map(|g| g.len()).sum();
        report.residual = sep.residual.iter().map(|g| g.len()).sum();
        report.groups = sep.effectual.len() + sep.residual.len();
        report.max_group_height = sep
            .effectual
            .iter()
            .chain(&sep.residual)
            .map(|g| g.height())
            .max()
            .unwrap_or(0);
        report.sort = sep.sort;

        let mut exec = Cost::ZERO;
        let sections = self.chains.sections();
        let (mut applied, left, mut reached) = execute(&mut self.chains, sep.effectual, 0..m, &mut exec);
        debug_assert!(left.is_empty(), "effectual ops fit the first slab");
        let (applied2, left2, reached2) = execute(&mut self.chains, sep.residual, m..sections, &mut exec);
        debug_assert!(left2.is_empty(), "residual ops fit the final slab");
        applied.extend(applied2);
        reached.extend(reached2);
        self.ledger.charge(Phase::Execute, exec);

        let mut reb = Cost::ZERO;
        let mut seen = vec![false; sections];
        for k in reached {
            seen[k] = true;
        }
        rebalance_segments(&mut self.chains, m, &seen, &mut reb)?;
        report.chain_iterations = rebalance_chains(&mut self.chains, self.chain_cap, &mut reb)?;
        self.ledger.charge(Phase::Rebalance, reb);
        self.ledger.note_level(self.chains.sections() - 1);

        report.touched = self.chains.take_touched();
        report.cost = Cost::new(
            locate.work + sep_cost.work + exec.work + reb.work,
            locate.span + sep_cost.span + exec.span + reb.span,
        );
        Ok(BatchOutcome {
            results: linearize(sep.ineffectual, applied),
            report,
        })
    }
}
