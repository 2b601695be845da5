//! Property suites shared by the `properties` and `acceptance` targets.
//! Each suite runs through a proptest runner and reports the minimal
//! failing input as an error string.

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use storesel_core::advisor::{decide, Decision};
use storesel_core::convert::{convert, FailPoint, PartitionDir};
use storesel_core::layout::{recommend_layouts, LayoutConfig};
use storesel_core::learn::{BoostedRegressor, GbdtParams};
use storesel_core::schema::{
    AccessOp, DataLayout, EngineKind, FieldSpec, LengthKind, StorageStructure, TableSchema, Workload,
};
use storesel_core::sim::driver::{run_workload, RunOptions};
use storesel_core::sim::{CostParams, Partition, Request};

pub type Suite = fn(u32) -> Result<(), String>;

#[allow(dead_code)]
pub const SUITES: [(&str, Suite); 7] = [
    ("layout refinement chain", refinement_chain),
    ("weight-scale invariance", scale_invariance),
    ("conversion round trip and atomicity", conversion_round_trip),
    ("simulator determinism", sim_determinism),
    ("logical-content invariance", content_invariance),
    ("epsilon-rule monotonicity", epsilon_monotonicity),
    ("boosting training-error monotonicity", boosting_monotonicity),
];

fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn schema(widths: &[u32]) -> TableSchema {
    let mut fields = vec![FieldSpec::key("k", LengthKind::Fixed, 8)];
    for (i, &w) in widths.iter().enumerate() {
        let kind = if w > 8 { LengthKind::Variable } else { LengthKind::Fixed };
        fields.push(FieldSpec::value(format!("c{}", i + 1), kind, w));
    }
    TableSchema::new("p", fields).unwrap()
}

fn widths(max_cols: usize) -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(1u32..64, 1..=max_cols)
}

/// Read ops over random column subsets, described by masks, frequencies,
/// ages and scan lengths.
fn reads() -> impl Strategy<Value = Vec<(u32, u64, u32, u64)>> {
    prop::collection::vec((1u32..256, 1u64..50, 0u32..6, 0u64..2000), 1..6)
}

fn workload(s: &TableSchema, reads: &[(u32, u64, u32, u64)], rows: u64) -> Workload {
    let names = s.value_names();
    let ops = reads
        .iter()
        .map(|&(mask, freq, age, scan)| {
            let mut cols: Vec<&str> = names
                .iter()
                .enumerate()
                .filter(|(i, _)| mask >> (i % 8) & 1 == 1)
                .map(|(_, n)| n.as_str())
                .collect();
            if cols.is_empty() {
                cols.push(names[0].as_str());
            }
            let op = if scan == 0 {
                AccessOp::point_lookup(&cols, rows)
            } else {
                AccessOp::range_scan(&cols, scan.min(rows), rows)
            };
            op.with_frequency(freq).with_age(age)
        })
        .collect();
    Workload {
        table: s.name.clone(),
        ops,
        initial_table_rows: rows,
    }
}

fn byte_cost(s: &TableSchema) -> impl Fn(&AccessOp) -> f64 + '_ {
    move |op| storesel_core::layout::bytes_accessed(s, op) * op.result_rows.max(1) as f64
}

pub fn refinement_chain(cases: u32) -> Result<(), String> {
    run(cases, (widths(8), reads()), |(w, r)| {
        let s = schema(&w);
        let levels = recommend_layouts(&workload(&s, &r, 5000), &s, &LayoutConfig::default(), &byte_cost(&s))
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!(levels.first().unwrap().is_nsm());
        prop_assert!(levels.last().unwrap().is_dsm());
        for pair in levels.windows(2) {
            prop_assert!(pair[1].refines(&pair[0]), "{} does not refine {}", pair[1], pair[0]);
            prop_assert!(pair[1].len() > pair[0].len());
        }
        Ok(())
    })
}

pub fn scale_invariance(cases: u32) -> Result<(), String> {
    run(cases, (widths(8), reads(), -3.0f64..3.0), |(w, r, e)| {
        let s = schema(&w);
        let wl = workload(&s, &r, 5000);
        let cfg = LayoutConfig::default();
        let base = byte_cost(&s);
        let c = 10f64.powf(e);
        let scaled = |op: &AccessOp| c * base(op);
        let a = recommend_layouts(&wl, &s, &cfg, &base).unwrap();
        let b = recommend_layouts(&wl, &s, &cfg, &scaled).unwrap();
        prop_assert_eq!(a, b);
        Ok(())
    })
}

fn structure_of(s: &TableSchema, engine: u8, cut: u32) -> StorageStructure {
    let names = s.value_names();
    let engine = [EngineKind::BPlusRow, EngineKind::LsmRow, EngineKind::Columnar][engine as usize % 3];
    let layout = if engine == EngineKind::Columnar {
        DataLayout::dsm(s)
    } else {
        // bit i of `cut` starts a new group before column i
        let mut groups: Vec<Vec<String>> = Vec::new();
        for (i, n) in names.iter().enumerate() {
            if groups.is_empty() || cut >> i & 1 == 1 {
                groups.push(Vec::new());
            }
            groups.last_mut().unwrap().push(n.clone());
        }
        DataLayout::new(groups)
    };
    StorageStructure::new(engine, layout, s).unwrap()
}

pub fn conversion_round_trip(cases: u32) -> Result<(), String> {
    let strategy = (
        widths(6),
        0u64..400,
        prop::collection::vec(any::<u64>(), 0..50),
        (any::<u8>(), any::<u32>()),
        (any::<u8>(), any::<u32>()),
        0usize..4,
    );
    run(cases.min(64), strategy, |(w, rows, extra, a, b, fail)| {
        let s = schema(&w);
        let params = CostParams::default();
        let sa = structure_of(&s, a.0, a.1);
        let sb = structure_of(&s, b.0, b.1);
        let mut p = Partition::with_rows(&s, &sa, &params, rows).unwrap();
        if !extra.is_empty() {
            p.exec(&Request::Insert { keys: extra }).unwrap();
        }
        let original = p.snapshot();
        let there = convert(&p, &sb).unwrap();
        prop_assert_eq!(&there.snapshot(), &original);
        let back = convert(&there, &sa).unwrap();
        prop_assert_eq!(&back.snapshot(), &original);

        let tmp = tempfile::tempdir().unwrap();
        let mut dir = PartitionDir::create(tmp.path(), "p", &p).unwrap();
        let fp = [
            None,
            Some(FailPoint::CorruptBuild),
            Some(FailPoint::AfterBuild),
            Some(FailPoint::BeforeSwap),
        ][fail];
        let before = dir.manifest().generation;
        let r = dir.convert(&sb, &params, fp);
        let seen = PartitionDir::open(tmp.path()).unwrap();
        prop_assert_eq!(seen.load(&params).unwrap().snapshot(), original);
        match fp {
            None => {
                prop_assert!(r.is_ok());
                prop_assert_eq!(&seen.manifest().structure, &sb);
                prop_assert!(seen.manifest().generation > before);
            }
            Some(_) => {
                prop_assert!(r.is_err());
                prop_assert_eq!(&seen.manifest().structure, &sa);
                prop_assert_eq!(seen.manifest().generation, before);
            }
        }
        Ok(())
    })
}

fn mixed_workload(s: &TableSchema, r: &[(u32, u64, u32, u64)], rows: u64, inserts: u64, randomness: f64) -> Workload {
    let mut w = workload(s, r, rows);
    for op in &mut w.ops {
        op.frequency = op.frequency.min(5);
    }
    if inserts > 0 {
        w.ops
            .push(AccessOp::insert(1, randomness, rows).with_frequency(inserts));
    }
    w
}

pub fn sim_determinism(cases: u32) -> Result<(), String> {
    let strategy = (
        widths(6),
        reads(),
        100u64..3000,
        0u64..300,
        0.0f64..1.0,
        (any::<u8>(), any::<u32>()),
        any::<u64>(),
    );
    run(cases.min(48), strategy, |(w, r, rows, ins, rnd, st, seed)| {
        let s = schema(&w);
        let wl = mixed_workload(&s, &r, rows, ins, rnd);
        let structure = structure_of(&s, st.0, st.1);
        let params = CostParams::default();
        let opts = RunOptions {
            cache_clear_prob: 0.05,
            idle_prob: 0.05,
            ..RunOptions::default()
        };
        let trace = || {
            let mut p = Partition::with_rows(&s, &structure, &params, rows).unwrap();
            let mut out = Vec::new();
            run_workload(&mut p, &wl, seed, &opts, |e| out.push(e.trace)).unwrap();
            (out, p.snapshot())
        };
        prop_assert_eq!(trace(), trace());
        Ok(())
    })
}

pub fn content_invariance(cases: u32) -> Result<(), String> {
    let strategy = (
        widths(6),
        50u64..1500,
        prop::collection::vec((0u8..3, any::<u64>(), 1u64..40, any::<u32>()), 1..40),
        (any::<u8>(), any::<u32>()),
        (any::<u8>(), any::<u32>()),
    );
    run(cases.min(48), strategy, |(w, rows, reqs, a, b)| {
        let s = schema(&w);
        let n = s.num_values();
        let params = CostParams::default();
        let mut pa = Partition::with_rows(&s, &structure_of(&s, a.0, a.1), &params, rows).unwrap();
        let mut pb = Partition::with_rows(&s, &structure_of(&s, b.0, b.1), &params, rows).unwrap();
        for (kind, key, len, mask) in reqs {
            let columns: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
            let key = key % (rows * storesel_core::sim::KEY_GAP + 1);
            let req = match kind {
                0 => Request::Lookup { key, columns },
                1 => Request::Scan {
                    start: key,
                    rows: len,
                    columns,
                },
                _ => Request::Insert {
                    keys: (0..len).map(|i| key.wrapping_add(i * 7919)).collect(),
                },
            };
            let (_, ra) = pa.exec_collect(&req).unwrap();
            let (_, rb) = pb.exec_collect(&req).unwrap();
            prop_assert_eq!(ra, rb);
        }
        prop_assert_eq!(pa.snapshot(), pb.snapshot());
        Ok(())
    })
}

pub fn epsilon_monotonicity(cases: u32) -> Result<(), String> {
    run(
        cases.max(256),
        (0.0f64..1e7, 0.0f64..1e7, 0.0f64..=1.0, 0.0f64..=1.0),
        |(cur, best, e1, e2)| {
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            if matches!(decide(cur, best, lo), Decision::Hold(_)) {
                prop_assert!(matches!(decide(cur, best, hi), Decision::Hold(_)));
            }
            prop_assert!(matches!(decide(cur, best, 1.0), Decision::Hold(_)));
            Ok(())
        },
    )
}

pub fn boosting_monotonicity(cases: u32) -> Result<(), String> {
    let strategy = prop::collection::vec((prop::array::uniform3(-10.0f64..10.0), -100.0f64..100.0), 20..200);
    run(cases.min(24), strategy, |data| {
        let rows: Vec<&[f64]> = data.iter().map(|(x, _)| x.as_slice()).collect();
        let y: Vec<f64> = data.iter().map(|(_, t)| *t).collect();
        let params = GbdtParams {
            n_trees: 30,
            ..GbdtParams::default()
        };
        let m = BoostedRegressor::fit(&rows, &y, &params);
        let mse = |k: usize| {
            rows.iter()
                .zip(&y)
                .map(|(x, t)| (m.predict_truncated(x, k) - t).powi(2))
                .sum::<f64>()
                / y.len() as f64
        };
        let mut prev = mse(0);
        for k in 1..=m.trees.len() {
            let cur = mse(k);
            prop_assert!(cur <= prev * (1.0 + 1e-12) + 1e-12, "tree {k}: {cur} > {prev}");
            prev = cur;
        }
        Ok(())
    })
}
