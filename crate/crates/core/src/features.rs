//! Feature extraction for the learned cost model: schema, operation and
//! runtime features, plus the insertion-randomness metric.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{row_bytes_for_group, AccessOp, LengthKind, OpType, TableSchema};

/// Bumped whenever the feature order or meaning changes. Models trained on
/// another version are rejected.
pub const FEATURE_VERSION: &str = "fv1";

pub const FEATURE_NAMES: [&str; 21] = [
    "avg_row_len",
    "num_key_fields",
    "num_value_fields",
    "key_bytes",
    "value_bytes",
    "num_fixed_fields",
    "num_var_fields",
    "fixed_bytes",
    "var_bytes",
    "op_point_lookup",
    "op_range_scan",
    "op_insert",
    "result_size",
    "selectivity",
    "insert_randomness",
    "disk_read_tput",
    "disk_write_tput",
    "cache_ratio",
    "file_count",
    "l1_file_count",
    "l2_file_count",
];

pub const NUM_FEATURES: usize = FEATURE_NAMES.len();

/// Counts pairs `i < j` with `seq[i] > seq[j]` by merge sort, `O(n log n)`.
/// Equal elements never count.
pub fn inversions<T: Ord + Clone>(seq: &[T]) -> u64 {
    let mut buf = seq.to_vec();
    let mut scratch = seq.to_vec();
    merge_count(&mut buf, &mut scratch)
}

fn merge_count<T: Ord + Clone>(v: &mut [T], scratch: &mut [T]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count = {
        let (lo, hi) = v.split_at_mut(mid);
        let (slo, shi) = scratch.split_at_mut(mid);
        merge_count(lo, slo) + merge_count(hi, shi)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            // every remaining element of the left half exceeds v[j]
            count += (mid - i) as u64;
            scratch[k] = v[j].clone();
            j += 1;
        } else {
            scratch[k] = v[i].clone();
            i += 1;
        }
        k += 1;
    }
    while i < mid {
        scratch[k] = v[i].clone();
        i += 1;
        k += 1;
    }
    while j < n {
        scratch[k] = v[j].clone();
        j += 1;
        k += 1;
    }
    v.clone_from_slice(&scratch[..n]);
    count
}

/// Normalised inversion number in `[0, 1]`. Sorted and reverse-sorted
/// sequences both score 0; a uniformly random permutation scores close to 1.
pub fn randomness<T: Ord + Clone>(seq: &[T]) -> Result<f64> {
    let n = seq.len();
    if n < 2 {
        return Err(Error::DegenerateSequence(n));
    }
    let d = (n as f64) * (n as f64) - n as f64;
    let v = inversions(seq) as f64;
    let r = if v < d / 4.0 { 4.0 * v / d } else { 2.0 - 4.0 * v / d };
    Ok(r.clamp(0.0, 1.0))
}

/// Randomness with the single-key convention: fewer than two keys read as
/// sequential.
pub fn randomness_or_zero<T: Ord + Clone>(seq: &[T]) -> f64 {
    randomness(seq).unwrap_or(0.0)
}

/// System-level state of one partition, sampled before an operation runs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RuntimeState {
    /// Bytes per second read from disk over the trailing window.
    pub disk_read_tput: f64,
    pub disk_write_tput: f64,
    pub cached_pages: u64,
    pub total_pages: u64,
    pub file_count: u64,
    pub l1_file_count: u64,
    pub l2_file_count: u64,
}

impl RuntimeState {
    pub fn cache_ratio(&self) -> f64 {
        if self.total_pages == 0 {
            0.0
        } else {
            (self.cached_pages as f64 / self.total_pages as f64).clamp(0.0, 1.0)
        }
    }

    /// Drops the LSM-only counters.
    pub fn without_lsm_files(mut self) -> Self {
        self.file_count = 0;
        self.l1_file_count = 0;
        self.l2_file_count = 0;
        self
    }
}

/// Partition state plus (cached, total) pages of each column group's files.
/// Without group entries every group sees the partition-wide counts.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StructureState {
    pub partition: RuntimeState,
    pub group_pages: Vec<(u64, u64)>,
}

impl StructureState {
    /// The state a record for group `g` carries.
    pub fn group(&self, g: usize) -> RuntimeState {
        match self.group_pages.get(g) {
            Some(&(cached, total)) => RuntimeState {
                cached_pages: cached.min(total),
                total_pages: total,
                ..self.partition
            },
            None => self.partition,
        }
    }
}

impl From<RuntimeState> for StructureState {
    fn from(partition: RuntimeState) -> Self {
        StructureState {
            partition,
            group_pages: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    values: [f64; NUM_FEATURES],
}

impl FeatureVector {
    pub fn from_values(values: [f64; NUM_FEATURES]) -> Self {
        FeatureVector { values }
    }

    pub fn values(&self) -> &[f64; NUM_FEATURES] {
        &self.values
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        FEATURE_NAMES.iter().position(|n| *n == name).map(|i| self.values[i])
    }

    pub fn named(&self) -> impl Iterator<Item = (&'static str, f64)> + '_ {
        FEATURE_NAMES.iter().copied().zip(self.values.iter().copied())
    }
}

/// Builds the feature vector for `op` executed against one column group.
///
/// Schema features describe the group's effective schema (all key fields
/// plus the group's value columns), operation features are copied from
/// `op`, runtime features from `state`.
pub fn extract_features<S: AsRef<str>>(
    schema: &TableSchema,
    op: &AccessOp,
    group: &[S],
    state: &RuntimeState,
) -> Result<FeatureVector> {
    let row_len = row_bytes_for_group(schema, group)?;
    let mut nkeys = 0.0;
    let mut key_bytes = 0.0;
    let (mut nfixed, mut nvar, mut fixed_bytes, mut var_bytes) = (0.0, 0.0, 0.0, 0.0);
    let mut tally = |kind: LengthKind, bytes: u32| match kind {
        LengthKind::Fixed => {
            nfixed += 1.0;
            fixed_bytes += bytes as f64;
        }
        LengthKind::Variable => {
            nvar += 1.0;
            var_bytes += bytes as f64;
        }
    };
    for k in schema.key_fields() {
        nkeys += 1.0;
        key_bytes += k.avg_length_bytes as f64;
        tally(k.length_kind, k.avg_length_bytes);
    }
    let mut value_bytes = 0.0;
    for c in group {
        let f = schema.value_field(c.as_ref())?;
        value_bytes += f.avg_length_bytes as f64;
        tally(f.length_kind, f.avg_length_bytes);
    }
    let one_hot = |t: OpType| if op.op_type == t { 1.0 } else { 0.0 };
    Ok(FeatureVector {
        values: [
            row_len as f64,
            nkeys,
            group.len() as f64,
            key_bytes,
            value_bytes,
            nfixed,
            nvar,
            fixed_bytes,
            var_bytes,
            one_hot(OpType::PointLookup),
            one_hot(OpType::RangeScan),
            one_hot(OpType::Insert),
            op.result_rows as f64,
            op.selectivity.clamp(0.0, 1.0),
            op.key_randomness.unwrap_or(0.0).clamp(0.0, 1.0),
            state.disk_read_tput,
            state.disk_write_tput,
            state.cache_ratio(),
            state.file_count as f64,
            state.l1_file_count as f64,
            state.l2_file_count as f64,
        ],
    })
}
