//! Turns frequency-compressed [`AccessOp`]s into concrete requests and runs
//! them against a partition.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{OpTrace, Partition, Request, KEY_GAP};
use crate::error::Result;
use crate::features::randomness_or_zero;
use crate::schema::{AccessOp, OpType, Workload};

/// Order in which an insert op emits its fresh keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyOrder {
    /// Ascending, past every existing key.
    Sequential,
    /// Uniform over the key domain, between existing keys.
    Random,
    /// Ascending runs appended in shuffled run order.
    ShuffledBlock,
}

impl KeyOrder {
    /// Picks the order that best matches a requested randomness.
    pub fn for_randomness(r: f64) -> Self {
        if r <= 0.05 {
            KeyOrder::Sequential
        } else if r >= 0.95 {
            KeyOrder::Random
        } else {
            KeyOrder::ShuffledBlock
        }
    }
}

/// Hands out keys that are not yet stored or promised to another op.
#[derive(Debug, Clone)]
pub struct KeyAllocator {
    next_seq: u64,
    reserved: HashSet<u64>,
}

impl KeyAllocator {
    pub fn for_partition(p: &Partition) -> Self {
        KeyAllocator {
            next_seq: p.max_key().map_or(0, |k| k + KEY_GAP),
            reserved: HashSet::new(),
        }
    }

    pub fn fresh_keys(&mut self, p: &Partition, n: usize, order: KeyOrder, rng: &mut impl Rng) -> Vec<u64> {
        let mut keys = match order {
            KeyOrder::Sequential | KeyOrder::ShuffledBlock => {
                let k: Vec<u64> = (0..n as u64).map(|i| self.next_seq + i * KEY_GAP).collect();
                self.next_seq += n as u64 * KEY_GAP;
                k
            }
            KeyOrder::Random => {
                let hi = self.next_seq + n as u64 * KEY_GAP;
                let mut out = Vec::with_capacity(n);
                while out.len() < n {
                    let k = rng.gen_range(0..hi);
                    if !p.contains_key(k) && self.reserved.insert(k) {
                        out.push(k);
                    }
                }
                self.next_seq = self.next_seq.max(hi);
                out
            }
        };
        if order == KeyOrder::ShuffledBlock && n >= 2 {
            let blocks = rng.gen_range(2..=8usize).min(n);
            let size = n.div_ceil(blocks);
            let mut chunks: Vec<Vec<u64>> = keys.chunks(size).map(|c| c.to_vec()).collect();
            chunks.shuffle(rng);
            keys = chunks.concat();
        }
        if order != KeyOrder::Random {
            self.reserved.extend(keys.iter().copied());
        }
        keys
    }
}

/// Knobs for interleaving cache clears and idle periods between requests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub cache_clear_prob: f64,
    pub idle_prob: f64,
    pub max_idle_us: f64,
    /// Share of point lookups aimed at absent keys.
    pub missing_key_prob: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            cache_clear_prob: 0.0,
            idle_prob: 0.0,
            max_idle_us: 2_000_000.0,
            missing_key_prob: 0.0,
        }
    }
}

/// One executed request, tied back to the workload op it came from.
#[derive(Debug, Clone)]
pub struct Executed<'a> {
    pub op_index: usize,
    pub source: &'a AccessOp,
    pub request: Request,
    pub trace: OpTrace,
}

struct Pending {
    remaining: u64,
    keys: Option<(Vec<u64>, f64)>,
    cursor: usize,
}

/// Runs every request of `workload` in a seeded interleaving that keeps
/// each op's own repetitions in order, reporting each one to `sink`.
pub fn run_workload<F>(p: &mut Partition, workload: &Workload, seed: u64, opts: &RunOptions, mut sink: F) -> Result<()>
where
    F: FnMut(Executed<'_>),
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut alloc = KeyAllocator::for_partition(p);
    let mut pending: Vec<Pending> = workload
        .ops
        .iter()
        .map(|o| Pending {
            remaining: o.frequency,
            keys: None,
            cursor: 0,
        })
        .collect();
    let mut total: u64 = pending.iter().map(|x| x.remaining).sum();
    let names = p.schema().value_names();
    while total > 0 {
        let mut pick = rng.gen_range(0..total);
        let i = pending
            .iter()
            .position(|x| {
                if pick < x.remaining {
                    true
                } else {
                    pick -= x.remaining;
                    false
                }
            })
            .expect("pick within total");
        let op = &workload.ops[i];
        if opts.cache_clear_prob > 0.0 && rng.gen_bool(opts.cache_clear_prob) {
            p.clear_page_cache();
        }
        if opts.idle_prob > 0.0 && rng.gen_bool(opts.idle_prob) {
            let d = rng.gen_range(0.0..opts.max_idle_us);
            p.idle(d);
        }
        let columns: Vec<usize> = op
            .columns
            .iter()
            .filter_map(|c| names.iter().position(|n| n == c))
            .collect();
        let mut stream_randomness = None;
        let request = match op.op_type {
            OpType::PointLookup => {
                let key = if opts.missing_key_prob > 0.0 && rng.gen_bool(opts.missing_key_prob) {
                    rng.gen_range(0..p.max_key().unwrap_or(0) + KEY_GAP) | 1
                } else {
                    random_existing_key(p, &mut rng)
                };
                Request::Lookup { key, columns }
            }
            OpType::RangeScan => {
                let rows = op.result_rows.min(p.rows());
                let start = scan_start(p, rows, &mut rng);
                Request::Scan { start, rows, columns }
            }
            OpType::Insert => {
                let pend = &mut pending[i];
                if pend.keys.is_none() {
                    let n = (op.frequency * op.result_rows) as usize;
                    let order = if n < 2 {
                        KeyOrder::Sequential
                    } else {
                        KeyOrder::for_randomness(op.key_randomness.unwrap_or(0.0))
                    };
                    let keys = alloc.fresh_keys(p, n, order, &mut rng);
                    let r = randomness_or_zero(&keys);
                    pend.keys = Some((keys, r));
                }
                let (keys, r) = pend.keys.as_ref().unwrap();
                let b = op.result_rows as usize;
                let chunk = keys[pend.cursor..pend.cursor + b].to_vec();
                pend.cursor += b;
                stream_randomness = Some(*r);
                Request::Insert { keys: chunk }
            }
        };
        let mut trace = p.exec(&request)?;
        if let Some(r) = stream_randomness {
            trace.op.key_randomness = Some(r);
        }
        trace.op.age = op.age;
        pending[i].remaining -= 1;
        if pending[i].remaining == 0 {
            pending[i].keys = None;
        }
        total -= 1;
        sink(Executed {
            op_index: i,
            source: op,
            request,
            trace,
        });
    }
    Ok(())
}

fn random_existing_key(p: &Partition, rng: &mut impl Rng) -> u64 {
    match p.max_key() {
        None => 0,
        Some(max) => {
            let x = rng.gen_range(0..=max);
            p.successor_key(x).unwrap_or(max)
        }
    }
}

/// Start key such that roughly `rows` rows follow it.
fn scan_start(p: &Partition, rows: u64, rng: &mut impl Rng) -> u64 {
    let n = p.rows();
    let Some(max) = p.max_key() else {
        return 0;
    };
    if n == 0 || rows >= n {
        return 0;
    }
    let room = 1.0 - rows as f64 / n as f64;
    let x = (rng.gen_range(0.0..=room) * max as f64) as u64;
    p.successor_key(x).unwrap_or(0)
}

/// Total elapsed virtual time of `workload` on `p`.
pub fn measure_workload(p: &mut Partition, workload: &Workload, seed: u64) -> Result<f64> {
    let mut total = 0.0;
    run_workload(p, workload, seed, &RunOptions::default(), |e| {
        total += e.trace.elapsed_us
    })?;
    Ok(total)
}
