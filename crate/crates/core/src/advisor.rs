//! Candidate generation, cost ranking and the improvement-threshold rule.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{RuntimeState, StructureState};
use crate::layout::{recommend_layouts, LayoutConfig};
use crate::learn::CostModel;
use crate::schema::{AccessOp, Candidate, DataLayout, EngineKind, OpType, StorageStructure, TableSchema, Workload};
use crate::sim::CostParams;

pub const DEFAULT_EPSILON: f64 = 0.10;

/// Every (engine, layout) pair that forms a valid structure, without
/// duplicates. Columnar only pairs with DSM.
pub fn generate_candidates(layouts: &[DataLayout], engines: &[EngineKind]) -> Vec<StorageStructure> {
    let mut out: Vec<StorageStructure> = Vec::new();
    for &engine in engines {
        for layout in layouts {
            if engine == EngineKind::Columnar && !layout.is_dsm() {
                continue;
            }
            let s = StorageStructure {
                engine,
                layout: layout.clone(),
            };
            if !out.contains(&s) {
                out.push(s);
            }
        }
    }
    out
}

/// Every pair, valid or not.
pub fn raw_candidate_count(layouts: &[DataLayout], engines: &[EngineKind]) -> usize {
    layouts.len() * engines.len()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Decision {
    Apply,
    Hold(String),
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Decision::Apply => f.write_str("apply"),
            Decision::Hold(r) => write!(f, "hold: {r}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub current: StorageStructure,
    pub current_cost_us: f64,
    /// Ascending by predicted cost.
    pub candidates: Vec<Candidate>,
    pub chosen: Option<StorageStructure>,
    pub epsilon: f64,
    pub decision: Decision,
}

impl Recommendation {
    pub fn best(&self) -> Option<&Candidate> {
        self.candidates.first()
    }

    /// Relative predicted saving of the best candidate over the current one.
    pub fn improvement(&self) -> f64 {
        match self.best() {
            Some(b) if self.current_cost_us > 0.0 => {
                (self.current_cost_us - b.predicted_cost_us) / self.current_cost_us
            }
            _ => 0.0,
        }
    }

    /// Plain-text table for terminals.
    pub fn table(&self) -> String {
        let mut s = format!("current  {:>14.1} us  {}\n", self.current_cost_us, self.current);
        for (i, c) in self.candidates.iter().enumerate() {
            let mark = if self.chosen.as_ref() == Some(&c.structure) {
                '*'
            } else {
                ' '
            };
            s.push_str(&format!(
                "{mark}{:>3}     {:>14.1} us  {}\n",
                i + 1,
                c.predicted_cost_us,
                c.structure
            ));
        }
        s.push_str(&format!(
            "improvement {:.2}% vs epsilon {:.2}%: {}\n",
            100.0 * self.improvement(),
            100.0 * self.epsilon,
            self.decision
        ));
        s
    }
}

/// The threshold rule on its own.
pub fn decide(current_cost_us: f64, best_cost_us: f64, epsilon: f64) -> Decision {
    if current_cost_us.is_nan() || current_cost_us <= 0.0 {
        return Decision::Hold("current structure has no predicted cost".into());
    }
    let gain = (current_cost_us - best_cost_us) / current_cost_us;
    if gain > epsilon {
        Decision::Apply
    } else {
        Decision::Hold(format!(
            "predicted improvement {:.2}% does not exceed {:.2}%",
            100.0 * gain,
            100.0 * epsilon
        ))
    }
}

fn bytes_per_row(schema: &TableSchema, engine: EngineKind, group: &[String]) -> u64 {
    let vb: u64 = group
        .iter()
        .filter_map(|c| schema.value_field(c).ok())
        .map(|f| f.avg_length_bytes as u64)
        .sum();
    match engine {
        EngineKind::Columnar => vb.max(1),
        _ => schema.key_bytes() + vb,
    }
}

/// Pages per group of `rows` bulk-loaded rows.
pub fn estimate_pages(schema: &TableSchema, structure: &StorageStructure, rows: u64, params: &CostParams) -> Vec<u64> {
    structure
        .layout
        .groups()
        .iter()
        .map(|g| {
            let per_page = (params.page_size / bytes_per_row(schema, structure.engine, g).max(1)).max(1);
            rows.div_ceil(per_page)
        })
        .collect()
}

/// Runtime state the candidate would show in place of `current`: page
/// counts follow the candidate's footprint, the page cache keeps its
/// absolute size and LSM counters exist only for the LSM engine.
pub fn project_partition_state(
    observed: &RuntimeState,
    current: &StorageStructure,
    candidate: &StorageStructure,
    schema: &TableSchema,
    rows: u64,
    params: &CostParams,
) -> RuntimeState {
    if candidate == current {
        return *observed;
    }
    let pages: Vec<u64> = estimate_pages(schema, candidate, rows, params);
    let total: u64 = pages.iter().sum();
    let cur_total: u64 = estimate_pages(schema, current, rows, params).iter().sum();
    let mut s = *observed;
    s.total_pages = if observed.total_pages > 0 && cur_total > 0 {
        ((observed.total_pages as f64) * total as f64 / cur_total as f64).round() as u64
    } else {
        total
    };
    s.cached_pages = if observed.cached_pages >= observed.total_pages {
        s.total_pages
    } else {
        observed.cached_pages.min(s.total_pages)
    };
    if candidate.engine != EngineKind::LsmRow {
        return s.without_lsm_files();
    }
    if current.engine == EngineKind::LsmRow {
        let scale = candidate.layout.len() as f64 / current.layout.len().max(1) as f64;
        let f = |x: u64| (x as f64 * scale).round() as u64;
        s.l1_file_count = f(observed.l1_file_count);
        s.l2_file_count = f(observed.l2_file_count);
        s.file_count = f(observed.file_count);
    } else {
        // freshly converted: everything sits in the bottom level
        s.l1_file_count = 0;
        s.l2_file_count = pages.iter().map(|p| p.div_ceil(params.l2_file_pages.max(1))).sum();
        s.file_count = s.l2_file_count;
    }
    s
}

struct HotSet {
    group_pages: Vec<(u64, u64)>,
    /// Expected page misses over the workload.
    misses: f64,
}

/// Splits `budget` cached pages among the groups the workload touches.
fn hot_set(
    structure: &StorageStructure,
    schema: &TableSchema,
    workload: &Workload,
    params: &CostParams,
    totals: &[u64],
    budget: u64,
) -> HotSet {
    let rows = workload.initial_table_rows;
    let groups = structure.layout.groups();
    let mut heat = vec![0.0f64; groups.len()];
    let mut scanned = vec![false; groups.len()];
    for op in &workload.ops {
        let touched = match op.op_type {
            OpType::Insert => (0..groups.len()).collect(),
            _ => structure.layout.touched_groups(&op.read_columns(schema)),
        };
        for g in touched {
            let per_page = (params.page_size / bytes_per_row(schema, structure.engine, &groups[g]).max(1)).max(1);
            let pages = match op.op_type {
                OpType::PointLookup => 1.0,
                _ => (op.result_rows.min(rows.max(1)) as f64 / per_page as f64).max(1.0),
            };
            heat[g] += op.frequency as f64 * pages;
            scanned[g] |= op.op_type == OpType::RangeScan && op.frequency > 0;
        }
    }
    // LRU over repeated scans: either the whole scanned set fits, or every
    // scanned group keeps a share proportional to its size
    let touched: u64 = (0..groups.len()).filter(|&g| scanned[g]).map(|g| totals[g]).sum();
    let mut left = budget;
    let mut group_pages = vec![(0u64, 0u64); groups.len()];
    let share = if touched <= budget {
        1.0
    } else {
        budget as f64 / touched as f64
    };
    for g in (0..groups.len()).filter(|&g| scanned[g]) {
        let c = ((totals[g] as f64 * share).floor() as u64).min(left);
        left -= c;
        group_pages[g] = (c, totals[g]);
    }
    let mut rest: Vec<usize> = (0..groups.len()).filter(|&g| !scanned[g]).collect();
    rest.sort_by(|&a, &b| (heat[b] / totals[b].max(1) as f64).total_cmp(&(heat[a] / totals[a].max(1) as f64)));
    for g in rest {
        let c = totals[g].min(left);
        left -= c;
        group_pages[g] = (c, totals[g]);
    }
    let mut misses = 0.0;
    for g in 0..groups.len() {
        let cold = 1.0 - group_pages[g].0 as f64 / totals[g].max(1) as f64;
        // every touched page misses at least once
        misses += (heat[g] * cold).max(heat[g].min(totals[g] as f64));
    }
    HotSet { group_pages, misses }
}

fn scaled_totals(
    schema: &TableSchema,
    structure: &StorageStructure,
    rows: u64,
    params: &CostParams,
    total: u64,
) -> Vec<u64> {
    let est = estimate_pages(schema, structure, rows, params);
    let est_total: u64 = est.iter().sum();
    let scale = if total > 0 && est_total > 0 {
        total as f64 / est_total as f64
    } else {
        1.0
    };
    est.iter().map(|&p| (p as f64 * scale).round() as u64).collect()
}

fn cache_budget(s: &RuntimeState) -> u64 {
    if s.cached_pages >= s.total_pages {
        u64::MAX
    } else {
        s.cached_pages
    }
}

/// Partition state projected onto `candidate`, with per-group cache
/// estimates and disk read throughput scaled by the expected page misses.
pub fn project_state(
    observed: &RuntimeState,
    current: &StorageStructure,
    candidate: &StorageStructure,
    schema: &TableSchema,
    workload: &Workload,
    params: &CostParams,
) -> StructureState {
    let rows = workload.initial_table_rows;
    let mut partition = project_partition_state(observed, current, candidate, schema, rows, params);
    let totals = scaled_totals(schema, candidate, rows, params, partition.total_pages);
    let hot = hot_set(candidate, schema, workload, params, &totals, cache_budget(&partition));
    if candidate != current {
        let cur_totals = scaled_totals(schema, current, rows, params, observed.total_pages);
        let base = hot_set(current, schema, workload, params, &cur_totals, cache_budget(observed));
        if base.misses > 0.0 {
            partition.disk_read_tput = observed.disk_read_tput * hot.misses / base.misses;
        }
    }
    StructureState {
        partition,
        group_pages: hot.group_pages,
    }
}

/// Predicts every candidate, ranks them and applies the threshold rule.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    candidates: &[StorageStructure],
    workload: &Workload,
    schema: &TableSchema,
    model: Option<&CostModel>,
    current: &StorageStructure,
    observed: &RuntimeState,
    params: &CostParams,
    epsilon: f64,
) -> Result<Recommendation> {
    let model = model.ok_or(Error::ModelMissing)?;
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Parse(format!("epsilon {epsilon} outside [0,1]")));
    }
    current.validate(schema)?;
    workload.validate(schema)?;
    let cost = |s: &StorageStructure| -> Result<f64> {
        let st = project_state(observed, current, s, schema, workload, params);
        model.predict_workload(s, schema, workload, &st)
    };
    let current_cost_us = cost(current)?;
    let mut ranked = Vec::with_capacity(candidates.len());
    for s in candidates {
        s.validate(schema)?;
        ranked.push(Candidate {
            structure: s.clone(),
            predicted_cost_us: cost(s)?,
        });
    }
    ranked.sort_by(|a, b| {
        a.predicted_cost_us
            .total_cmp(&b.predicted_cost_us)
            .then_with(|| a.structure.to_string().cmp(&b.structure.to_string()))
    });
    let decision = match ranked.first() {
        Some(b) => decide(current_cost_us, b.predicted_cost_us, epsilon),
        None => Decision::Hold("no candidates".into()),
    };
    let chosen = (decision == Decision::Apply).then(|| ranked[0].structure.clone());
    Ok(Recommendation {
        current: current.clone(),
        current_cost_us,
        candidates: ranked,
        chosen,
        epsilon,
        decision,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdvisorConfig {
    pub epsilon: f64,
    pub layout: LayoutConfig,
    pub engines: Vec<EngineKind>,
}

impl Default for AdvisorConfig {
    fn default() -> Self {
        AdvisorConfig {
            epsilon: DEFAULT_EPSILON,
            layout: LayoutConfig::default(),
            engines: vec![EngineKind::BPlusRow, EngineKind::LsmRow, EngineKind::Columnar],
        }
    }
}

/// Full pass: layouts weighted by the model's per-query cost on the current
/// engine with every column stored apart, then candidate ranking.
pub fn advise(
    workload: &Workload,
    schema: &TableSchema,
    model: &CostModel,
    current: &StorageStructure,
    observed: &RuntimeState,
    params: &CostParams,
    cfg: &AdvisorConfig,
) -> Result<(Vec<DataLayout>, Recommendation)> {
    let probe = StorageStructure {
        engine: current.engine,
        layout: DataLayout::dsm(schema),
    };
    let probe_state = project_state(observed, current, &probe, schema, workload, params);
    let query_cost = |op: &AccessOp| {
        let single = op.clone().with_frequency(1);
        model
            .predict_access(&probe, schema, &single, &probe_state)
            .unwrap_or(0.0)
    };
    let layouts = recommend_layouts(workload, schema, &cfg.layout, &query_cost)?;
    let candidates = generate_candidates(&layouts, &cfg.engines);
    let rec = evaluate(
        &candidates,
        workload,
        schema,
        Some(model),
        current,
        observed,
        params,
        cfg.epsilon,
    )?;
    Ok((layouts, rec))
}

/// The structure a fresh partition starts with: LSM engine, NSM layout.
pub fn default_structure(schema: &TableSchema) -> StorageStructure {
    StorageStructure {
        engine: EngineKind::LsmRow,
        layout: DataLayout::nsm(schema),
    }
}
