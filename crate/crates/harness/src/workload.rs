use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use pfs_core::multifinger::FingerPos;
use pfs_core::Operation;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Zipf};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Core(#[from] pfs_core::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Structure {
    Fs0,
    Fs1,
    Fs2,
    Mf,
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Structure::Fs0 => "fs0",
            Structure::Fs1 => "fs1",
            Structure::Fs2 => "fs2",
            Structure::Mf => "mf",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Distribution {
    Uniform,
    /// Keys at geometric rank offset from the current minimum or maximum;
    /// each further step away happens with probability `1 − λ`.
    FingerLocal(f64),
    Zipf(f64),
    /// Fill and drain runs of doubling length at alternating ends.
    AdversarialCascade,
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Distribution::Uniform => write!(f, "uniform"),
            Distribution::FingerLocal(l) => write!(f, "finger-local({l})"),
            Distribution::Zipf(s) => write!(f, "zipf({s})"),
            Distribution::AdversarialCascade => write!(f, "adversarial-cascade"),
        }
    }
}

impl FromStr for Distribution {
    type Err = HarnessError;

    /// Accepts `uniform`, `finger-local(0.9)`, `finger-local:0.9`, `zipf(1.1)`,
    /// `zipf:1.1` and `adversarial-cascade`.
    fn from_str(s: &str) -> Result<Self, HarnessError> {
        let s = s.trim();
        let (name, arg) = match s.find(['(', ':']) {
            Some(i) => (&s[..i], Some(s[i + 1..].trim_end_matches(')'))),
            None => (s, None),
        };
        let param = |what: &str| -> Result<f64, HarnessError> {
            arg.ok_or_else(|| HarnessError::Config(format!("{what} needs a parameter")))?
                .parse::<f64>()
                .map_err(|e| HarnessError::Config(format!("{what} parameter: {e}")))
        };
        let d = match name {
            "uniform" => Distribution::Uniform,
            "finger-local" => Distribution::FingerLocal(param("finger-local")?),
            "zipf" => Distribution::Zipf(param("zipf")?),
            "adversarial-cascade" => Distribution::AdversarialCascade,
            other => return Err(HarnessError::Config(format!("unknown distribution {other:?}"))),
        };
        d.validate()?;
        Ok(d)
    }
}

impl Distribution {
    pub fn validate(&self) -> Result<(), HarnessError> {
        match *self {
            Distribution::FingerLocal(l) if !(l > 0.0 && l < 1.0) => {
                Err(HarnessError::Config(format!("finger-local λ must lie in (0, 1), got {l}")))
            }
            Distribution::Zipf(s) if !(s > 0.0 && s.is_finite()) => {
                Err(HarnessError::Config(format!("zipf exponent must be positive, got {s}")))
            }
            _ => Ok(()),
        }
    }
}

/// One line of a trace.
#[derive(Clone, Debug, PartialEq)]
pub enum TraceOp {
    Access(Operation<i64, i64>),
    Move { finger: usize, to: FingerPos<i64> },
}

#[derive(Clone, Debug)]
pub struct WorkloadSpec {
    pub structure: Structure,
    pub n_ops: usize,
    /// Keys are drawn from `0..key_space`.
    pub key_space: i64,
    pub distribution: Distribution,
    pub p: usize,
    pub seed: u64,
    /// Items present before the trace starts, spread evenly over the middle
    /// half of the key space.
    pub prefill: usize,
    /// Batch size for fs1 and mf.
    pub batch: usize,
    /// Finger count for mf, spread evenly over the key space.
    pub fingers: usize,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            structure: Structure::Fs1,
            n_ops: 10_000,
            key_space: 100_000,
            distribution: Distribution::Uniform,
            p: 4,
            seed: 0,
            prefill: 0,
            batch: 256,
            fingers: 0,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.distribution.validate()?;
        if self.key_space <= 0 {
            return Err(HarnessError::Config("key space must be positive".into()));
        }
        if 2 * self.prefill as i64 > self.key_space {
            return Err(HarnessError::Config("prefill exceeds half the key space".into()));
        }
        if self.p == 0 || self.batch == 0 {
            return Err(HarnessError::Config("p and batch must be at least 1".into()));
        }
        Ok(())
    }

    /// The prefill entries, keyed evenly across the middle half of the key
    /// space so both ends have room to grow.
    pub fn prefill_entries(&self) -> Vec<(i64, i64)> {
        let n = self.prefill as i64;
        let base = self.key_space / 4;
        let span = self.key_space / 2;
        (0..n).map(|i| (base + i * span / n.max(1), i)).collect()
    }

    /// Initial finger positions for mf.
    pub fn finger_positions(&self) -> Vec<FingerPos<i64>> {
        let f = self.fingers as i64;
        (1..=f).map(|j| FingerPos::before(j * self.key_space / (f + 1))).collect()
    }
}

fn random_kind(rng: &mut ChaCha8Rng, key: i64) -> Operation<i64, i64> {
    let v = rng.gen_range(0..1_000_000);
    match rng.gen_range(0..10) {
        0..=3 => Operation::Insert(key, v),
        4..=5 => Operation::Delete(key),
        6..=8 => Operation::Search(key),
        _ => Operation::Update(key, v),
    }
}

/// First absent key met walking from `start` downwards or upwards.
fn gap_near(present: &BTreeSet<i64>, start: i64, down: bool, key_space: i64) -> Option<i64> {
    let mut c = start;
    while (0..key_space).contains(&c) {
        if !present.contains(&c) {
            return Some(c);
        }
        c += if down { -1 } else { 1 };
    }
    None
}

fn finger_local_key(rng: &mut ChaCha8Rng, present: &BTreeSet<i64>, lambda: f64, key_space: i64, insert: bool) -> i64 {
    let mut d = 0usize;
    while rng.gen::<f64>() >= lambda {
        d += 1;
    }
    let front = rng.gen_bool(0.5);
    if present.is_empty() {
        return key_space / 2;
    }
    let d = d.min(present.len() - 1);
    let at = if front {
        *present.iter().nth(d).unwrap()
    } else {
        *present.iter().nth_back(d).unwrap()
    };
    if !insert {
        return at;
    }
    // Absent key between the d-th item and the one beyond it, towards the end.
    gap_near(present, if front { at - 1 } else { at + 1 }, front, key_space)
        .or_else(|| gap_near(present, at, !front, key_space))
        .unwrap_or(at)
}

fn apply_model(present: &mut BTreeSet<i64>, op: &Operation<i64, i64>) {
    match op {
        Operation::Insert(k, _) => {
            present.insert(*k);
        }
        Operation::Delete(k) => {
            present.remove(k);
        }
        _ => {}
    }
}

fn cascade(spec: &WorkloadSpec, present: &mut BTreeSet<i64>, rng: &mut ChaCha8Rng) -> Vec<TraceOp> {
    let mut out = Vec::with_capacity(spec.n_ops);
    let mut front = true;
    let mut j = 1;
    while out.len() < spec.n_ops {
        let run = 1usize << j;
        j = if j >= 14 { 1 } else { j + 1 };
        // Fill: the run of absent keys nearest the end, outermost last.
        let mut fill = Vec::with_capacity(run);
        let mut c = if front { 0 } else { spec.key_space - 1 };
        while fill.len() < run && (0..spec.key_space).contains(&c) {
            if !present.contains(&c) {
                fill.push(c);
            }
            c += if front { 1 } else { -1 };
        }
        for &k in fill.iter().rev() {
            let op = Operation::Insert(k, rng.gen_range(0..1_000_000));
            apply_model(present, &op);
            out.push(TraceOp::Access(op));
        }
        // Drain: the same number of items from the same end, outermost first.
        let drain: Vec<i64> = if front {
            present.iter().take(fill.len()).copied().collect()
        } else {
            present.iter().rev().take(fill.len()).copied().collect()
        };
        for k in drain {
            let op = Operation::Delete(k);
            apply_model(present, &op);
            out.push(TraceOp::Access(op));
        }
        front = !front;
    }
    out.truncate(spec.n_ops);
    out
}

/// The trace a spec describes; the seed determines it completely.
pub fn generate(spec: &WorkloadSpec) -> Result<Vec<TraceOp>, HarnessError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut present: BTreeSet<i64> = spec.prefill_entries().into_iter().map(|(k, _)| k).collect();
    let ops = match spec.distribution {
        Distribution::AdversarialCascade => return Ok(cascade(spec, &mut present, &mut rng)),
        Distribution::Uniform => (0..spec.n_ops)
            .map(|_| {
                let k = rng.gen_range(0..spec.key_space);
                random_kind(&mut rng, k)
            })
            .collect(),
        Distribution::Zipf(s) => {
            let zipf = Zipf::new(spec.key_space as u64, s).map_err(|e| HarnessError::Config(format!("zipf: {e}")))?;
            // Popular ranks land on scattered keys.
            let mut perm: Vec<i64> = (0..spec.key_space).collect();
            perm.shuffle(&mut rng);
            (0..spec.n_ops)
                .map(|_| {
                    let rank = zipf.sample(&mut rng) as usize;
                    let k = perm[rank.clamp(1, perm.len()) - 1];
                    random_kind(&mut rng, k)
                })
                .collect()
        }
        Distribution::FingerLocal(lambda) => {
            let mut ops = Vec::with_capacity(spec.n_ops);
            for _ in 0..spec.n_ops {
                let probe = random_kind(&mut rng, 0);
                let insert = matches!(probe, Operation::Insert(..));
                let k = finger_local_key(&mut rng, &present, lambda, spec.key_space, insert);
                let op = match probe {
                    Operation::Insert(_, v) => Operation::Insert(k, v),
                    Operation::Delete(_) => Operation::Delete(k),
                    Operation::Search(_) => Operation::Search(k),
                    Operation::Update(_, v) => Operation::Update(k, v),
                };
                apply_model(&mut present, &op);
                ops.push(op);
            }
            ops
        }
    };
    Ok(ops.into_iter().map(TraceOp::Access).collect())
}

fn parse_pos(s: &str) -> Result<FingerPos<i64>, String> {
    match s {
        "-inf" => Ok(FingerPos::NegInf),
        "+inf" | "inf" => Ok(FingerPos::PosInf),
        _ => {
            let (key, after) = match s.strip_suffix('+') {
                Some(k) => (k, true),
                None => (s.strip_suffix('-').unwrap_or(s), false),
            };
            let key = key.parse::<i64>().map_err(|e| format!("finger position {s:?}: {e}"))?;
            Ok(FingerPos::At { key, after })
        }
    }
}

fn format_pos(p: &FingerPos<i64>) -> String {
    match p {
        FingerPos::NegInf => "-inf".into(),
        FingerPos::PosInf => "+inf".into(),
        FingerPos::At { key, after: false } => format!("{key}-"),
        FingerPos::At { key, after: true } => format!("{key}+"),
    }
}

/// Parses the op-file format: one op per line, `<type> <key> [<value>]`
/// with types S, U, I, D, and `M <finger> <position>` for finger moves,
/// where a position is `-inf`, `+inf`, `<key>-` (just before the key) or
/// `<key>+` (just after it). Blank lines and `#` comments are skipped.
pub fn parse_ops(text: &str) -> Result<Vec<TraceOp>, HarnessError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| HarnessError::Parse { line: n + 1, msg };
        let f: Vec<&str> = line.split_whitespace().collect();
        let num = |i: usize| -> Result<i64, HarnessError> {
            f.get(i)
                .ok_or_else(|| err(format!("missing field {}", i + 1)))?
                .parse::<i64>()
                .map_err(|e| err(format!("field {}: {e}", i + 1)))
        };
        let want = |len: usize| {
            if f.len() == len {
                Ok(())
            } else {
                Err(err(format!("{} takes {} fields, got {}", f[0], len - 1, f.len() - 1)))
            }
        };
        let op = match f[0] {
            "S" => {
                want(2)?;
                TraceOp::Access(Operation::Search(num(1)?))
            }
            "D" => {
                want(2)?;
                TraceOp::Access(Operation::Delete(num(1)?))
            }
            "I" => {
                want(3)?;
                TraceOp::Access(Operation::Insert(num(1)?, num(2)?))
            }
            "U" => {
                want(3)?;
                TraceOp::Access(Operation::Update(num(1)?, num(2)?))
            }
            "M" => {
                want(3)?;
                let finger = usize::try_from(num(1)?).map_err(|e| err(e.to_string()))?;
                TraceOp::Move {
                    finger,
                    to: parse_pos(f[2]).map_err(err)?,
                }
            }
            other => return Err(err(format!("unknown op type {other:?}"))),
        };
        out.push(op);
    }
    Ok(out)
}

pub fn format_ops(trace: &[TraceOp]) -> String {
    let mut s = String::new();
    for op in trace {
        let line = match op {
            TraceOp::Access(Operation::Search(k)) => format!("S {k}"),
            TraceOp::Access(Operation::Delete(k)) => format!("D {k}"),
            TraceOp::Access(Operation::Insert(k, v)) => format!("I {k} {v}"),
            TraceOp::Access(Operation::Update(k, v)) => format!("U {k} {v}"),
            TraceOp::Move { finger, to } => format!("M {finger} {}", format_pos(to)),
        };
        s.push_str(&line);
        s.push('\n');
    }
    s
}
