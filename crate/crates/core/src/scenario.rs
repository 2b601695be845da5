//! Scenario documents (schema + workload + seed) and ground-truth
//! measurement of a workload on the simulators.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::RuntimeState;
use crate::schema::{
    lineitem_schema, AccessOp, DataLayout, EngineKind, OpType, StorageStructure, TableSchema, Workload,
};
use crate::sim::driver::{measure_workload, run_workload, RunOptions};
use crate::sim::{CostParams, Partition};

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpSpec {
    pub op_type: OpType,
    /// Value columns read; empty reads all of them.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub columns: Vec<String>,
    /// Rows per request. Scans default to the whole initial table, other
    /// ops to one row.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_randomness: Option<f64>,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    /// Ops per age step; 0 leaves every op at age 0.
    #[serde(default)]
    pub age_window: u64,
    pub ops: Vec<OpSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureSpec {
    pub engine: EngineKind,
    /// Layout text such as `(V1,V2)(V3)`, or `nsm` / `dsm`.
    pub layout: String,
}

impl StructureSpec {
    pub fn resolve(&self, schema: &TableSchema) -> Result<StorageStructure> {
        let layout = parse_layout(&self.layout, schema)?;
        StorageStructure::new(self.engine, layout, schema)
    }
}

pub fn parse_layout(text: &str, schema: &TableSchema) -> Result<DataLayout> {
    match text.trim().to_ascii_lowercase().as_str() {
        "nsm" => Ok(DataLayout::nsm(schema)),
        "dsm" => Ok(DataLayout::dsm(schema)),
        _ => DataLayout::parse(text, schema),
    }
}

/// `engine:layout`, e.g. `bplus:(V1)(V2,V3)` or `columnar:dsm`.
pub fn parse_structure(text: &str, schema: &TableSchema) -> Result<StorageStructure> {
    let (e, l) = text
        .split_once(':')
        .ok_or_else(|| Error::Parse(format!("structure `{text}` is not engine:layout")))?;
    StorageStructure::new(e.trim().parse()?, parse_layout(l, schema)?, schema)
}

fn default_version() -> u32 {
    SCENARIO_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    #[serde(default = "default_version")]
    pub version: u32,
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub initial_table_rows: u64,
    /// Structure the partition starts in; LSM with NSM when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current: Option<StructureSpec>,
    pub schema: TableSchema,
    pub workload: WorkloadSpec,
}

impl ScenarioSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: ScenarioSpec = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if s.version != SCENARIO_VERSION {
            return Err(Error::UnsupportedVersion {
                what: "scenario",
                found: s.version,
            });
        }
        s.schema.validate()?;
        s.workload()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn workload(&self) -> Result<Workload> {
        let n = self.workload.ops.len() as u64;
        let table = self.initial_table_rows;
        let inserted: u64 = self
            .workload
            .ops
            .iter()
            .filter(|o| o.op_type == OpType::Insert)
            .map(|o| o.count.saturating_mul(o.rows.unwrap_or(1)))
            .sum();
        // selectivities refer to the mean table size over the run
        let mean_rows = table + inserted / 2;
        let mut ops = Vec::with_capacity(self.workload.ops.len());
        for (i, o) in self.workload.ops.iter().enumerate() {
            if o.count == 0 {
                continue;
            }
            let cols: Vec<&str> = o.columns.iter().map(String::as_str).collect();
            let op = match o.op_type {
                OpType::PointLookup => AccessOp::point_lookup(&cols, mean_rows),
                OpType::RangeScan => AccessOp::range_scan(&cols, o.rows.unwrap_or(table).min(table.max(1)), mean_rows),
                OpType::Insert => {
                    let r = o
                        .key_randomness
                        .ok_or_else(|| Error::InvalidOp("insert needs key_randomness".into()))?;
                    AccessOp::insert(o.rows.unwrap_or(1), r, mean_rows)
                }
            };
            let age = match self.workload.age_window {
                0 => 0,
                w => ((n - 1 - i as u64) / w).min(u32::MAX as u64) as u32,
            };
            ops.push(op.with_frequency(o.count).with_age(age));
        }
        let w = Workload {
            table: self.schema.name.clone(),
            ops,
            initial_table_rows: table,
        };
        w.validate(&self.schema)?;
        Ok(w)
    }

    pub fn current_structure(&self) -> Result<StorageStructure> {
        match &self.current {
            Some(s) => s.resolve(&self.schema),
            None => Ok(crate::advisor::default_structure(&self.schema)),
        }
    }
}

/// Runs the workload under `structure` and returns the measured time with
/// the mean runtime state seen before each request.
pub fn observe(spec: &ScenarioSpec, structure: &StorageStructure, params: &CostParams) -> Result<(f64, RuntimeState)> {
    let w = spec.workload()?;
    let mut p = Partition::with_rows(&spec.schema, structure, params, spec.initial_table_rows)?;
    let (mut total, mut n) = (0.0, 0u64);
    let mut acc = [0.0f64; 7];
    run_workload(&mut p, &w, spec.seed, &RunOptions::default(), |e| {
        total += e.trace.elapsed_us;
        n += 1;
        let s = &e.trace.state_before;
        let v = [
            s.disk_read_tput,
            s.disk_write_tput,
            s.cached_pages as f64,
            s.total_pages as f64,
            s.file_count as f64,
            s.l1_file_count as f64,
            s.l2_file_count as f64,
        ];
        acc.iter_mut().zip(v).for_each(|(a, x)| *a += x);
    })?;
    if n == 0 {
        return Ok((0.0, p.state()));
    }
    let m = |i: usize| acc[i] / n as f64;
    let c = |i: usize| m(i).round() as u64;
    Ok((
        total,
        RuntimeState {
            disk_read_tput: m(0),
            disk_write_tput: m(1),
            cached_pages: c(2),
            total_pages: c(3),
            file_count: c(4),
            l1_file_count: c(5),
            l2_file_count: c(6),
        },
    ))
}

/// Measured virtual time of the scenario's workload on a freshly loaded
/// partition under `structure`.
pub fn simulate(spec: &ScenarioSpec, structure: &StorageStructure, params: &CostParams) -> Result<f64> {
    let w = spec.workload()?;
    let mut p = Partition::with_rows(&spec.schema, structure, params, spec.initial_table_rows)?;
    measure_workload(&mut p, &w, spec.seed)
}

/// Table sizes and query counts of the LineItem workloads, scaled down.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineitemScale {
    /// Divisor applied to table sizes, insert counts and lookup counts.
    pub divisor: u64,
}

impl Default for LineitemScale {
    fn default() -> Self {
        LineitemScale { divisor: 120 }
    }
}

const Q3: [&str; 3] = ["V2", "V3", "V7"];
const Q5: [&str; 2] = ["V2", "V3"];
const RQ2: [&str; 8] = ["V1", "V2", "V3", "V5", "V6", "V7", "V8", "V11"];

/// The four mixes over LineItem as (name, inserts, RQ1, RQ2, Q3, Q5, initial rows) before scaling.
pub const LINEITEM_MIXES: [(&str, u64, u64, u64, u64, u64, u64); 4] = [
    ("transactional", 9_000_000, 10_000, 10_000, 0, 0, 0),
    ("transactional-mixed", 3_000_000, 30_000, 30_000, 5, 5, 9_000_000),
    ("analytical-mixed", 0, 10_000, 10_000, 15, 15, 12_000_000),
    ("analytical", 0, 0, 0, 30, 30, 12_000_000),
];

pub fn lineitem_scenario(name: &str, scale: LineitemScale) -> Result<ScenarioSpec> {
    let &(name, ins, rq1, rq2, q3, q5, s) = LINEITEM_MIXES
        .iter()
        .find(|m| m.0 == name)
        .ok_or_else(|| Error::Parse(format!("unknown scenario `{name}`")))?;
    let d = scale.divisor.max(1);
    let cols = |c: &[&str]| c.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let mut ops = Vec::new();
    let mut push = |op_type, columns: Vec<String>, key_randomness, count| {
        if count > 0 {
            ops.push(OpSpec {
                op_type,
                columns,
                rows: None,
                key_randomness,
                count,
            });
        }
    };
    push(OpType::Insert, vec![], Some(0.0), ins / d);
    push(OpType::PointLookup, vec![], None, rq1.div_ceil(d));
    push(OpType::PointLookup, cols(&RQ2), None, rq2.div_ceil(d));
    push(OpType::RangeScan, cols(&Q3), None, q3);
    push(OpType::RangeScan, cols(&Q5), None, q5);
    Ok(ScenarioSpec {
        version: SCENARIO_VERSION,
        name: name.into(),
        seed: 7,
        initial_table_rows: s / d,
        current: None,
        schema: lineitem_schema(),
        workload: WorkloadSpec { age_window: 0, ops },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let s = lineitem_scenario("analytical-mixed", LineitemScale::default()).unwrap();
        let text = s.to_toml();
        assert_eq!(ScenarioSpec::from_toml(&text).unwrap(), s);
        let w = s.workload().unwrap();
        assert_eq!(w.initial_table_rows, 100_000);
        assert_eq!(w.ops.len(), 4);
        assert_eq!(w.ops[2].result_rows, 100_000);
    }

    #[test]
    fn rejects_unknown_version_and_bad_columns() {
        let mut s = lineitem_scenario("analytical", LineitemScale::default()).unwrap();
        s.version = 9;
        assert!(matches!(
            ScenarioSpec::from_toml(&s.to_toml()),
            Err(Error::UnsupportedVersion { found: 9, .. })
        ));
        s.version = 1;
        s.workload.ops[0].columns.push("V99".into());
        assert_eq!(
            ScenarioSpec::from_toml(&s.to_toml()),
            Err(Error::UnknownColumn("V99".into()))
        );
    }

    #[test]
    fn ages_follow_position() {
        let mut s = lineitem_scenario("transactional-mixed", LineitemScale::default()).unwrap();
        s.workload.age_window = 2;
        let ages: Vec<u32> = s.workload().unwrap().ops.iter().map(|o| o.age).collect();
        assert_eq!(ages, [2, 1, 1, 0, 0]);
    }

    #[test]
    fn structure_text() {
        let s = lineitem_schema();
        assert!(parse_structure("columnar:dsm", &s).is_ok());
        assert!(matches!(
            parse_structure("columnar:nsm", &s),
            Err(Error::TargetInvalid(_))
        ));
        let st = parse_structure("bplus:(V2,V3,V7)(V1,V4,V5,V6,V8,V9,V10,V11,V12)", &s).unwrap();
        assert_eq!(st.layout.len(), 2);
        assert!(parse_structure("nsm", &s).is_err());
    }

    #[test]
    fn simulate_is_reproducible_and_empty_is_free() {
        let mut s = lineitem_scenario("analytical", LineitemScale { divisor: 2400 }).unwrap();
        let st = crate::advisor::default_structure(&s.schema);
        let p = CostParams::default();
        let a = simulate(&s, &st, &p).unwrap();
        assert_eq!(a, simulate(&s, &st, &p).unwrap());
        assert!(a > 0.0);
        let (b, obs) = observe(&s, &st, &p).unwrap();
        assert_eq!(a, b);
        assert!(obs.total_pages > 0 && obs.cached_pages <= obs.total_pages);
        s.workload.ops.clear();
        assert_eq!(simulate(&s, &st, &p).unwrap(), 0.0);
    }

    #[test]
    fn grouped_layout_beats_nsm_for_narrow_scans() {
        let s = lineitem_scenario("analytical", LineitemScale { divisor: 1200 }).unwrap();
        let p = CostParams::default();
        let nsm = StorageStructure {
            engine: EngineKind::BPlusRow,
            layout: DataLayout::nsm(&s.schema),
        };
        let split = parse_structure("bplus:(V2,V3,V7)(V1,V4,V5,V6,V8,V9,V10,V11,V12)", &s.schema).unwrap();
        assert!(simulate(&s, &split, &p).unwrap() < simulate(&s, &nsm, &p).unwrap());
    }
}
