//! Column-group candidate generation: prune the workload to representative
//! queries, give every column a vector of decayed query weights, cluster the
//! columns hierarchically and emit every level from NSM down to DSM.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{natural_cmp, AccessOp, DataLayout, OpType, TableSchema, Workload};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutConfig {
    /// Attenuation per age step: a query of age `s` is weighted `(1-a)^s`.
    pub decay_alpha: f64,
    /// Representative queries below this share of the total weight are dropped.
    pub theta: f64,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        LayoutConfig {
            decay_alpha: 0.1,
            theta: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentativeQuery {
    pub columns: Vec<String>,
    pub weight: f64,
    pub member_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnVector {
    pub column: String,
    pub coords: Vec<f64>,
}

/// Bytes a read touches: rows times the accessed value bytes.
pub fn bytes_accessed(schema: &TableSchema, op: &AccessOp) -> f64 {
    let bytes: u64 = op
        .read_columns(schema)
        .iter()
        .filter_map(|c| schema.value_field(c).ok())
        .map(|f| f.avg_length_bytes as u64)
        .sum();
    op.result_rows.max(1) as f64 * bytes as f64
}

/// Groups read ops by column set. Each group's weight sums
/// `(1-alpha)^age * frequency * cost(op)` over its members.
pub fn prune(
    workload: &Workload,
    schema: &TableSchema,
    cfg: &LayoutConfig,
    cost: &dyn Fn(&AccessOp) -> f64,
) -> Result<Vec<RepresentativeQuery>> {
    if !(0.0..1.0).contains(&cfg.decay_alpha) {
        return Err(Error::Parse(format!("decay_alpha {} outside [0,1)", cfg.decay_alpha)));
    }
    let mut groups: BTreeMap<Vec<String>, (f64, usize)> = BTreeMap::new();
    for op in workload.ops.iter().filter(|o| o.op_type != OpType::Insert) {
        let w = (1.0 - cfg.decay_alpha).powf(op.age as f64) * op.frequency as f64 * cost(op);
        let e = groups.entry(op.read_columns(schema)).or_default();
        e.0 += w;
        e.1 += 1;
    }
    let total: f64 = groups.values().map(|g| g.0).sum();
    if groups.is_empty() || total.is_nan() || total <= 0.0 {
        return Err(Error::EmptyWorkload);
    }
    let mut reps: Vec<RepresentativeQuery> = groups
        .into_iter()
        .filter(|(_, (w, _))| *w > 0.0 && *w >= cfg.theta * total)
        .map(|(columns, (weight, member_count))| RepresentativeQuery {
            columns,
            weight,
            member_count,
        })
        .collect();
    reps.sort_by(|a, b| {
        b.weight
            .total_cmp(&a.weight)
            .then_with(|| cmp_names(&a.columns, &b.columns))
    });
    Ok(reps)
}

fn cmp_names(a: &[String], b: &[String]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match natural_cmp(x, y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

/// `coords[j] = w_j` when representative query `j` reads the column.
pub fn vectorize(columns: &[String], reps: &[RepresentativeQuery]) -> Vec<ColumnVector> {
    columns
        .iter()
        .map(|c| ColumnVector {
            column: c.clone(),
            coords: reps
                .iter()
                .map(|q| if q.columns.contains(c) { q.weight } else { 0.0 })
                .collect(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    /// Cluster ids: leaves are `0..n`, merge `i` creates cluster `n + i`.
    pub a: usize,
    pub b: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub leaves: Vec<String>,
    pub merges: Vec<Merge>,
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn nearly_equal(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

/// Agglomerative clustering with Euclidean distance and average linkage.
/// Ties go to the pair whose smallest column names sort first.
pub fn cluster(vectors: &[ColumnVector]) -> Dendrogram {
    let n = vectors.len();
    let leaves: Vec<String> = vectors.iter().map(|v| v.column.clone()).collect();
    // active clusters: (id, members, smallest name)
    let mut active: Vec<(usize, Vec<usize>, String)> = (0..n).map(|i| (i, vec![i], leaves[i].clone())).collect();
    let pair: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| euclid(&vectors[i].coords, &vectors[j].coords)).collect())
        .collect();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    while active.len() > 1 {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..active.len() {
            for j in i + 1..active.len() {
                let (ma, mb) = (&active[i].1, &active[j].1);
                let d = ma
                    .iter()
                    .flat_map(|&x| mb.iter().map(move |&y| (x, y)))
                    .map(|(x, y)| pair[x][y])
                    .sum::<f64>()
                    / (ma.len() * mb.len()) as f64;
                let better = match best {
                    None => true,
                    Some((bd, bi, bj)) => {
                        if nearly_equal(d, bd) {
                            tie_key(&active, i, j) < tie_key(&active, bi, bj)
                        } else {
                            d < bd
                        }
                    }
                };
                if better {
                    best = Some((d, i, j));
                }
            }
        }
        let (d, i, j) = best.expect("at least one pair");
        let (a, b) = (active[i].0, active[j].0);
        let (lo, hi) = if tie_key(&active, i, j).0 .0 == active[i].2 {
            (a, b)
        } else {
            (b, a)
        };
        merges.push(Merge {
            a: lo,
            b: hi,
            distance: d,
        });
        let right = active.remove(j);
        let left = &mut active[i];
        left.0 = n + merges.len() - 1;
        left.1.extend(right.1);
        if natural_cmp(&right.2, &left.2) == Ordering::Less {
            left.2 = right.2;
        }
    }
    Dendrogram { leaves, merges }
}

#[derive(PartialEq, Eq)]
struct NameKey(String);

impl PartialOrd for NameKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for NameKey {
    fn cmp(&self, other: &Self) -> Ordering {
        natural_cmp(&self.0, &other.0)
    }
}

/// (smaller, larger) of the two clusters' smallest column names.
fn tie_key(active: &[(usize, Vec<usize>, String)], i: usize, j: usize) -> (NameKey, NameKey) {
    let (x, y) = (&active[i].2, &active[j].2);
    if natural_cmp(x, y) == Ordering::Less {
        (NameKey(x.clone()), NameKey(y.clone()))
    } else {
        (NameKey(y.clone()), NameKey(x.clone()))
    }
}

impl Dendrogram {
    /// Layouts from DSM towards NSM, one per merge distance step; merges at
    /// distance zero form a single step.
    pub fn levels(&self) -> Vec<DataLayout> {
        let n = self.leaves.len();
        let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        let mut alive: Vec<bool> = vec![true; n];
        let snapshot = |members: &Vec<Vec<usize>>, alive: &Vec<bool>| {
            DataLayout::new(
                members
                    .iter()
                    .zip(alive)
                    .filter(|(_, a)| **a)
                    .map(|(m, _)| m.iter().map(|&i| self.leaves[i].clone()).collect::<Vec<_>>()),
            )
        };
        let mut out = vec![snapshot(&members, &alive)];
        for (k, m) in self.merges.iter().enumerate() {
            let mut joined = members[m.a].clone();
            joined.extend(members[m.b].iter().copied());
            alive[m.a] = false;
            alive[m.b] = false;
            members.push(joined);
            alive.push(true);
            let zero_follows = m.distance == 0.0 && self.merges.get(k + 1).is_some_and(|x| x.distance == 0.0);
            if !zero_follows {
                out.push(snapshot(&members, &alive));
            }
        }
        out
    }
}

/// Every layout level for the workload, NSM first and DSM last, each one
/// refining the one before. Falls back to NSM and DSM when there is no
/// read to learn from.
pub fn recommend_layouts(
    workload: &Workload,
    schema: &TableSchema,
    cfg: &LayoutConfig,
    cost: &dyn Fn(&AccessOp) -> f64,
) -> Result<Vec<DataLayout>> {
    workload.validate(schema)?;
    let columns = schema.value_names();
    let reps = match prune(workload, schema, cfg, cost) {
        Ok(r) => r,
        Err(Error::EmptyWorkload) => return Ok(dedup(vec![DataLayout::nsm(schema), DataLayout::dsm(schema)])),
        Err(e) => return Err(e),
    };
    Ok(layouts_from_reps(&columns, &reps))
}

pub fn layouts_from_reps(columns: &[String], reps: &[RepresentativeQuery]) -> Vec<DataLayout> {
    let dendro = cluster(&vectorize(columns, reps));
    let mut levels = dendro.levels();
    levels.reverse();
    dedup(levels)
}

fn dedup(layouts: Vec<DataLayout>) -> Vec<DataLayout> {
    let mut out: Vec<DataLayout> = Vec::with_capacity(layouts.len());
    for l in layouts {
        if !out.contains(&l) {
            out.push(l);
        }
    }
    out
}

/// Baseline: with each representative query in turn as the most important
/// one, peel its columns into the first group, then the remaining queries'
/// columns by descending weight, then the leftovers.
pub fn recommend_layouts_query_oriented(
    workload: &Workload,
    schema: &TableSchema,
    cfg: &LayoutConfig,
    cost: &dyn Fn(&AccessOp) -> f64,
) -> Result<Vec<DataLayout>> {
    workload.validate(schema)?;
    let reps = match prune(workload, schema, cfg, cost) {
        Ok(r) => r,
        Err(Error::EmptyWorkload) => return Ok(vec![DataLayout::nsm(schema)]),
        Err(e) => return Err(e),
    };
    Ok(query_oriented_from_reps(&schema.value_names(), &reps))
}

pub fn query_oriented_from_reps(columns: &[String], reps: &[RepresentativeQuery]) -> Vec<DataLayout> {
    let mut out = Vec::new();
    for first in 0..reps.len() {
        let order = std::iter::once(first).chain((0..reps.len()).filter(|&i| i != first));
        let mut left: Vec<String> = columns.to_vec();
        let mut groups = Vec::new();
        for q in order {
            let g: Vec<String> = left.iter().filter(|c| reps[q].columns.contains(c)).cloned().collect();
            if !g.is_empty() {
                left.retain(|c| !g.contains(c));
                groups.push(g);
            }
        }
        if !left.is_empty() {
            groups.push(left);
        }
        out.push(DataLayout::new(groups));
    }
    dedup(out)
}

/// Every partition of the schema's value columns (Bell-number many), for
/// exhaustive checks on small tables.
pub fn all_layouts(schema: &TableSchema) -> Result<Vec<DataLayout>> {
    let cols = schema.value_names();
    if cols.len() > 8 {
        return Err(Error::InvalidSchema(format!(
            "exhaustive enumeration limited to 8 value columns, got {}",
            cols.len()
        )));
    }
    let mut out = Vec::new();
    let mut assign = vec![0usize; cols.len()];
    fn rec(i: usize, blocks: usize, assign: &mut Vec<usize>, cols: &[String], out: &mut Vec<DataLayout>) {
        if i == cols.len() {
            let groups: Vec<Vec<String>> = (0..blocks)
                .map(|b| {
                    (0..cols.len())
                        .filter(|&c| assign[c] == b)
                        .map(|c| cols[c].clone())
                        .collect()
                })
                .collect();
            out.push(DataLayout::new(groups));
            return;
        }
        for b in 0..=blocks {
            assign[i] = b;
            rec(i + 1, blocks.max(b + 1), assign, cols, out);
        }
    }
    rec(0, 0, &mut assign, &cols, &mut out);
    Ok(out)
}
