use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;
use std::time::{Duration, Instant};

use pfs_core::cost::verify_linearization;
use pfs_core::fs0::Fs0;
use pfs_core::fs1::{Fs1, CHAIN_ITERATION_CAP};
use pfs_core::fs2::{Fs2, Fs2Params, Fs2Stats};
use pfs_core::multifinger::{MfRequest, MultiFinger};
use pfs_core::sync::{Executor, Spawner};
use pfs_core::{CostLedger, FingerOracle, OpId, Operation, Request};

use crate::workload::{HarnessError, Structure, TraceOp, WorkloadSpec};

/// How long an fs2 run may take to drain before it counts as deadlocked.
pub const WATCHDOG: Duration = Duration::from_secs(60);

pub const CSV_HEADER: [&str; 9] = [
    "structure",
    "n_ops",
    "p",
    "total_work",
    "F_L",
    "ratio",
    "max_segment_level",
    "invariant_failures",
    "wall_time",
];

#[derive(Clone, Debug)]
pub struct RunOptions {
    /// Full invariant scan after this many operations; 0 scans only at the
    /// end. Batched structures scan at the first batch boundary past it.
    pub check_every: usize,
    /// Report a zero wall time so the CSV row is reproducible.
    pub deterministic: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            check_every: 0,
            deterministic: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Report {
    pub structure: Structure,
    pub n_ops: usize,
    pub p: usize,
    pub total_work: u64,
    pub f_l: f64,
    pub ratio: f64,
    pub max_segment_level: usize,
    pub invariant_failures: usize,
    pub wall_time: Duration,
    /// The first few failure descriptions.
    pub failures: Vec<String>,
    pub entries: Vec<(i64, i64)>,
    /// Prior value reported to each access, by op id.
    pub results: HashMap<OpId, Option<i64>>,
    pub chain_iterations_max: usize,
    pub fs2: Option<Fs2Stats>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.invariant_failures == 0
    }

    /// Mean ledger charge per access.
    pub fn mean_charge(&self) -> f64 {
        self.total_work as f64 / self.n_ops.max(1) as f64
    }

    /// Mean `log₂ r + 1` per access.
    pub fn mean_finger_cost(&self) -> f64 {
        self.f_l / self.n_ops.max(1) as f64
    }

    pub fn csv_row(&self, deterministic: bool) -> Vec<String> {
        let wall = if deterministic { 0.0 } else { self.wall_time.as_secs_f64() };
        vec![
            self.structure.to_string(),
            self.n_ops.to_string(),
            self.p.to_string(),
            self.total_work.to_string(),
            format!("{:.3}", self.f_l),
            format!("{:.6}", self.ratio),
            self.max_segment_level.to_string(),
            self.invariant_failures.to_string(),
            format!("{wall:.6}"),
        ]
    }

    /// Writes a header line and this report's row.
    pub fn write_csv<W: Write>(&self, w: W, header: bool, deterministic: bool) -> Result<(), HarnessError> {
        let mut out = csv::Writer::from_writer(w);
        if header {
            out.write_record(CSV_HEADER)?;
        }
        out.write_record(self.csv_row(deterministic))?;
        out.flush()?;
        Ok(())
    }
}

struct Failures {
    count: usize,
    kept: Vec<String>,
}

impl Failures {
    fn push(&mut self, msg: String) {
        self.count += 1;
        if self.kept.len() < 20 {
            self.kept.push(msg);
        }
    }
}

/// Replays `trace` on the structure `spec` names, checks invariants and
/// every reported result against the reference map, and reports the work.
pub fn run(spec: &WorkloadSpec, trace: &[TraceOp], opts: &RunOptions) -> Result<Report, HarnessError> {
    spec.validate()?;
    if spec.structure != Structure::Mf && trace.iter().any(|t| matches!(t, TraceOp::Move { .. })) {
        return Err(HarnessError::Config(format!("finger moves need --structure mf, not {}", spec.structure)));
    }
    let prefill = spec.prefill_entries();
    let ledger = Arc::new(CostLedger::new());
    let requests: Vec<(OpId, &TraceOp)> = trace.iter().enumerate().map(|(i, t)| (i as OpId, t)).collect();
    let n_ops = trace.iter().filter(|t| matches!(t, TraceOp::Access(_))).count();
    let by_id: HashMap<OpId, Request<i64, i64>> = requests
        .iter()
        .filter_map(|(id, t)| match t {
            TraceOp::Access(op) => Some((*id, Request::new(*id, op.clone()))),
            TraceOp::Move { .. } => None,
        })
        .collect();

    let mut fails = Failures {
        count: 0,
        kept: Vec::new(),
    };
    let mut order: Vec<OpId> = Vec::with_capacity(n_ops);
    let mut results: HashMap<OpId, Option<i64>> = HashMap::with_capacity(n_ops);
    let mut chain_iterations_max = 0;
    let mut fs2_stats = None;
    let mut since_check = 0usize;
    let mut due = |n: usize| {
        since_check += n;
        if opts.check_every > 0 && since_check >= opts.check_every {
            since_check = 0;
            true
        } else {
            false
        }
    };
    let baseline = ledger.total();
    let started = Instant::now();

    let (entries, levels) = match spec.structure {
        Structure::Fs0 => {
            let mut s = Fs0::from_sorted(prefill.clone(), Arc::clone(&ledger))?;
            for req in by_id_in_order(&requests, &by_id) {
                let out = s.execute(req);
                order.push(out.id);
                results.insert(out.id, out.prior);
                if due(1) {
                    if let Err(e) = s.check() {
                        fails.push(format!("after op {}: {e}", out.id));
                    }
                }
            }
            if let Err(e) = s.check() {
                fails.push(format!("final: {e}"));
            }
            (s.entries(), s.chains().sections())
        }
        Structure::Fs1 => {
            let mut s = Fs1::from_sorted(prefill.clone(), Arc::clone(&ledger))?;
            let all: Vec<Request<i64, i64>> = by_id_in_order(&requests, &by_id).cloned().collect();
            for chunk in all.chunks(spec.batch) {
                match s.process_batch(chunk.to_vec()) {
                    Ok(out) => {
                        chain_iterations_max = chain_iterations_max.max(out.report.chain_iterations);
                        if out.report.chain_iterations > CHAIN_ITERATION_CAP {
                            fails.push(format!("{} chain rebalancing iterations", out.report.chain_iterations));
                        }
                        for r in out.results {
                            order.push(r.id);
                            results.insert(r.id, r.prior);
                        }
                    }
                    Err(e) => {
                        fails.push(format!("batch starting at op {}: {e}", chunk[0].id));
                        break;
                    }
                }
                if due(chunk.len()) {
                    if let Err(e) = s.check() {
                        fails.push(format!("after batch ending at op {}: {e}", chunk[chunk.len() - 1].id));
                    }
                }
            }
            if let Err(e) = s.check() {
                fails.push(format!("final: {e}"));
            }
            (s.entries(), s.chains().sections())
        }
        Structure::Mf => {
            let mut s = MultiFinger::from_sorted(prefill.clone(), spec.finger_positions(), Arc::clone(&ledger))?;
            let all: Vec<MfRequest<i64, i64>> = requests
                .iter()
                .map(|(id, t)| match t {
                    TraceOp::Access(op) => MfRequest::Access(Request::new(*id, op.clone())),
                    TraceOp::Move { finger, to } => MfRequest::Move {
                        id: *id,
                        finger: *finger,
                        to: to.clone(),
                    },
                })
                .collect();
            for chunk in all.chunks(spec.batch) {
                match s.process_batch(chunk.to_vec()) {
                    Ok(out) => {
                        for rep in &out.reports {
                            chain_iterations_max = chain_iterations_max.max(rep.chain_iterations);
                        }
                        for r in out.results {
                            order.push(r.id);
                            results.insert(r.id, r.prior);
                        }
                    }
                    Err(e) => {
                        fails.push(format!("batch: {e}"));
                        break;
                    }
                }
                if due(chunk.len()) {
                    if let Err(e) = s.check() {
                        fails.push(e);
                    }
                }
            }
            if let Err(e) = s.check() {
                fails.push(format!("final: {e}"));
            }
            let levels = s.sectors().iter().map(|x| x.chains().sections()).max().unwrap_or(0);
            (s.entries(), levels)
        }
        Structure::Fs2 => {
            let exec = Executor::new(spec.p + 2);
            let s = Fs2::from_sorted(
                prefill.clone(),
                Fs2Params::for_workers(spec.p),
                Spawner::Executor(Arc::clone(&exec)),
                Arc::clone(&ledger),
            )?;
            let all: Vec<Request<i64, i64>> = by_id_in_order(&requests, &by_id).cloned().collect();
            // Ops are dealt round-robin so the interleaving stays close to
            // trace order. Each worker is a sequential caller: it waits for
            // every result before issuing its next operation.
            let answers: Vec<(OpId, Option<Option<i64>>)> = std::thread::scope(|sc| {
                let hs: Vec<_> = (0..spec.p)
                    .map(|w| {
                        let chunk: Vec<&Request<i64, i64>> = all.iter().skip(w).step_by(spec.p).collect();
                        let s = s.clone();
                        sc.spawn(move || {
                            let mut got = Vec::with_capacity(chunk.len());
                            for r in chunk {
                                let answer = s.submit_request((*r).clone()).wait_timeout(WATCHDOG);
                                let stuck = answer.is_none();
                                got.push((r.id, answer));
                                if stuck {
                                    break;
                                }
                            }
                            got
                        })
                    })
                    .collect();
                hs.into_iter().flat_map(|h| h.join().expect("submitter panicked")).collect()
            });
            if !s.wait_idle(WATCHDOG) {
                fails.push(format!("no quiescence within {WATCHDOG:?}"));
            }
            for (id, answer) in &answers {
                match answer {
                    Some(v) => {
                        results.insert(*id, *v);
                    }
                    None => fails.push(format!("op {id} got no result within {WATCHDOG:?}")),
                }
            }
            if answers.len() != all.len() {
                fails.push(format!("{} of {} ops were submitted", answers.len(), all.len()));
            }
            order = s.linearization();
            let stats = s.stats();
            for (i, v) in stats.violations.iter().enumerate() {
                if *v > 0 {
                    fails.push(format!("balance invariant {} violated {v} times", i + 1));
                }
            }
            for e in &stats.errors {
                fails.push(e.clone());
            }
            if stats.max_region_occupancy > 1 {
                fails.push(format!("{} runs shared a lock region", stats.max_region_occupancy));
            }
            if stats.delivered != all.len() as u64 {
                fails.push(format!("{} results delivered for {} ops", stats.delivered, all.len()));
            }
            for e in s.check_idle() {
                fails.push(e);
            }
            fs2_stats = Some(stats);
            let levels = s.shape().iter().map(|c| c.len()).max().unwrap_or(0);
            (s.entries(), levels)
        }
    };
    let wall_time = started.elapsed();
    let total_work = ledger.total() - baseline;

    // Prefill is replayed as inserts ahead of the trace with ids from the top.
    let mut replay: Vec<Request<i64, i64>> = prefill
        .iter()
        .enumerate()
        .map(|(i, (k, v))| Request::new(OpId::MAX - i as OpId, Operation::Insert(*k, *v)))
        .collect();
    let mut recorded = results.clone();
    for r in &replay {
        recorded.insert(r.id, None);
    }
    let mut pre = FingerOracle::new(prefill.iter().map(|(k, _)| *k));
    for r in &replay {
        pre.apply(&r.op);
    }
    for id in &order {
        match by_id.get(id) {
            Some(r) => replay.push(r.clone()),
            None => fails.push(format!("linearization names unknown op {id}")),
        }
    }
    let f_l = match verify_linearization(&replay, &recorded) {
        Ok(oracle) => {
            if oracle.reference().entries() != entries {
                fails.push("final contents differ from the reference map".into());
            }
            oracle.f_total() - pre.f_total()
        }
        Err(m) => {
            fails.push(format!("oracle mismatch: {m}"));
            f64::NAN
        }
    };

    Ok(Report {
        structure: spec.structure,
        n_ops,
        p: spec.p,
        total_work,
        f_l,
        ratio: total_work as f64 / f_l,
        max_segment_level: ledger.max_level().max(levels.saturating_sub(1)),
        invariant_failures: fails.count,
        wall_time,
        failures: fails.kept,
        entries,
        results,
        chain_iterations_max,
        fs2: fs2_stats,
    })
}

fn by_id_in_order<'a>(
    requests: &'a [(OpId, &TraceOp)],
    by_id: &'a HashMap<OpId, Request<i64, i64>>,
) -> impl Iterator<Item = &'a Request<i64, i64>> {
    requests.iter().filter_map(move |(id, _)| by_id.get(id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{generate, Distribution};

    #[test]
    fn every_structure_passes_a_small_trace() {
        let mut contents = Vec::new();
        for structure in [Structure::Fs0, Structure::Fs1, Structure::Fs2, Structure::Mf] {
            // One sequential caller: batches of one, a single fs2 worker.
            let spec = WorkloadSpec {
                structure,
                n_ops: 3000,
                key_space: 1000,
                prefill: 300,
                seed: 4,
                p: 1,
                batch: 1,
                ..WorkloadSpec::default()
            };
            let trace = generate(&spec).unwrap();
            let rep = run(&spec, &trace, &RunOptions { check_every: 500, ..RunOptions::default() }).unwrap();
            assert!(rep.passed(), "{structure}: {:?}", rep.failures);
            assert_eq!(rep.n_ops, 3000);
            assert!(rep.ratio.is_finite() && rep.ratio > 0.0);
            contents.push(rep.entries);
        }
        assert!(contents.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn batched_and_concurrent_runs_pass() {
        for (structure, p) in [(Structure::Fs1, 1), (Structure::Mf, 1), (Structure::Fs2, 4)] {
            let spec = WorkloadSpec {
                structure,
                n_ops: 5000,
                key_space: 800,
                prefill: 200,
                fingers: 3,
                p,
                distribution: Distribution::FingerLocal(0.6),
                ..WorkloadSpec::default()
            };
            let trace = generate(&spec).unwrap();
            let rep = run(&spec, &trace, &RunOptions { check_every: 1000, ..RunOptions::default() }).unwrap();
            assert!(rep.passed(), "{structure}: {:?}", rep.failures);
        }
    }

    #[test]
    fn moves_need_mf() {
        let spec = WorkloadSpec {
            structure: Structure::Fs1,
            ..WorkloadSpec::default()
        };
        let trace = vec![TraceOp::Move {
            finger: 0,
            to: pfs_core::multifinger::FingerPos::NegInf,
        }];
        assert!(matches!(run(&spec, &trace, &RunOptions::default()), Err(HarnessError::Config(_))));
    }

    #[test]
    fn deterministic_rows_repeat() {
        let spec = WorkloadSpec {
            structure: Structure::Fs1,
            n_ops: 2000,
            distribution: Distribution::Zipf(1.1),
            ..WorkloadSpec::default()
        };
        let trace = generate(&spec).unwrap();
        let row = |_: ()| {
            let mut buf = Vec::new();
            run(&spec, &trace, &RunOptions::default())
                .unwrap()
                .write_csv(&mut buf, true, true)
                .unwrap();
            buf
        };
        assert_eq!(row(()), row(()));
    }
}
