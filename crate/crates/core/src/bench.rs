//! Benchmark generator: random schemas and workloads with long-tailed
//! shapes, executed on every engine kind to produce training records.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, OpClass, Result};
use crate::features::{extract_features, FeatureVector, FEATURE_NAMES, FEATURE_VERSION, NUM_FEATURES};
use crate::schema::{AccessOp, DataLayout, EngineKind, FieldSpec, LengthKind, StorageStructure, TableSchema, Workload};
use crate::sim::driver::{run_workload, RunOptions};
use crate::sim::{CostParams, OpTrace, Partition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub num_schemas: usize,
    /// Executed requests per schema and engine.
    pub ops_per_schema: usize,
    pub field_count_range: [u32; 2],
    pub varlen_range: [u32; 2],
    /// Log-normal sigma of the field-count and variable-length draws.
    pub long_tail_shape: f64,
    /// Log-normal sigma of batch-insert sizes and scan lengths.
    pub write_rows_tail_shape: f64,
    pub table_rows_range: [u64; 2],
    pub cache_clear_prob: f64,
    pub idle_prob: f64,
    pub seed: u64,
    pub params: CostParams,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            num_schemas: 40,
            ops_per_schema: 1000,
            field_count_range: [2, 24],
            varlen_range: [2, 256],
            long_tail_shape: 0.7,
            write_rows_tail_shape: 1.8,
            table_rows_range: [500, 120_000],
            cache_clear_prob: 0.05,
            idle_prob: 0.05,
            seed: 42,
            params: CostParams::default(),
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Parse(format!("bench config: {m}")));
        if self.num_schemas == 0 || self.ops_per_schema == 0 {
            return bad("num_schemas and ops_per_schema must be positive");
        }
        if self.field_count_range[0] < 2 || self.field_count_range[0] >= self.field_count_range[1] {
            return bad("field_count_range must be [min >= 2, max > min]");
        }
        if self.varlen_range[0] == 0 || self.varlen_range[0] >= self.varlen_range[1] {
            return bad("varlen_range must be [min >= 1, max > min]");
        }
        if self.table_rows_range[0] == 0 || self.table_rows_range[0] >= self.table_rows_range[1] {
            return bad("table_rows_range must be [min >= 1, max > min]");
        }
        if self.long_tail_shape <= 0.0 || self.write_rows_tail_shape <= 0.0 {
            return bad("tail shapes must be positive");
        }
        for p in [self.cache_clear_prob, self.idle_prob] {
            if !(0.0..=1.0).contains(&p) {
                return bad("probabilities must lie in [0,1]");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordSource {
    Benchmark,
    Runtime,
}

/// One training example: features of an operation on one column group and
/// its measured per-row time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfRecord {
    pub engine: EngineKind,
    pub features: FeatureVector,
    pub elapsed_per_row_us: f64,
    pub surge: bool,
    pub source: RecordSource,
}

impl PerfRecord {
    pub fn class(&self) -> OpClass {
        if self.features.values()[11] > 0.5 {
            OpClass::Write
        } else {
            OpClass::Read
        }
    }

    /// Rows the time was spread over (at least one).
    pub fn rows(&self) -> f64 {
        self.features.values()[12].max(1.0)
    }

    pub fn elapsed_us(&self) -> f64 {
        self.elapsed_per_row_us * self.rows()
    }
}

fn lognormal(median: f64, sigma: f64) -> LogNormal<f64> {
    LogNormal::new(median.ln(), sigma).expect("finite lognormal parameters")
}

fn draw_clamped(rng: &mut impl Rng, median: f64, sigma: f64, lo: u64, hi: u64) -> u64 {
    let x = lognormal(median, sigma).sample(rng).round();
    (x as u64).clamp(lo, hi)
}

/// Random schema: long-tailed field count, one to four key fields, a mix
/// of fixed-width and long-tailed variable-width fields.
pub fn gen_schema(cfg: &BenchConfig, name: &str, rng: &mut impl Rng) -> TableSchema {
    let [lo, hi] = cfg.field_count_range;
    let median = ((lo * hi) as f64).sqrt().max(lo as f64);
    let count = draw_clamped(rng, median, cfg.long_tail_shape, lo as u64, hi as u64) as usize;
    let nkeys = rng.gen_range(1..=4usize).min(count - 1);
    let [vlo, vhi] = cfg.varlen_range;
    let var_median = (vlo as f64 * 8.0).min(vhi as f64);
    let mut fields = Vec::with_capacity(count);
    for i in 0..count {
        let fixed_share = if i < nkeys { 0.8 } else { 0.55 };
        let (kind, bytes) = if rng.gen_bool(fixed_share) {
            (LengthKind::Fixed, *[1u32, 2, 4, 8].choose(rng).unwrap())
        } else {
            let b = draw_clamped(rng, var_median, cfg.long_tail_shape * 1.4, vlo as u64, vhi as u64);
            (LengthKind::Variable, b as u32)
        };
        fields.push(if i < nkeys {
            FieldSpec::key(format!("k{i}"), kind, bytes)
        } else {
            FieldSpec::value(format!("v{}", i - nkeys), kind, bytes)
        });
    }
    TableSchema::new(name, fields).expect("generated schema is valid")
}

/// Initial table size for a generated schema.
pub fn gen_table_rows(cfg: &BenchConfig, rng: &mut impl Rng) -> u64 {
    let [lo, hi] = cfg.table_rows_range;
    let median = ((lo as f64) * (hi as f64)).sqrt();
    draw_clamped(rng, median, 1.2, lo, hi)
}

fn random_columns(schema: &TableSchema, rng: &mut impl Rng) -> Vec<String> {
    if rng.gen_bool(0.5) {
        return Vec::new();
    }
    let names = schema.value_names();
    let k = rng.gen_range(1..=names.len());
    let mut picked: Vec<String> = names.choose_multiple(rng, k).cloned().collect();
    picked.sort();
    picked
}

/// Interleaved inserts (single-row streams and long-tailed batches), point
/// lookups and long-tailed range scans totalling `cfg.ops_per_schema`
/// executed requests.
pub fn gen_workload(cfg: &BenchConfig, schema: &TableSchema, table_rows: u64, rng: &mut impl Rng) -> Workload {
    let budget = cfg.ops_per_schema as u64;
    let shape = cfg.write_rows_tail_shape;
    let mut ops = Vec::new();
    let mut used = 0u64;
    let mut rows = table_rows;
    while used < budget {
        let roll: f64 = rng.gen();
        let mut op = if roll < 0.35 {
            let randomness = *[0.0, 0.5, 1.0].choose(rng).unwrap();
            if rng.gen_bool(0.5) {
                let freq = draw_clamped(rng, 20.0, 1.2, 1, 500);
                AccessOp::insert(1, randomness, rows).with_frequency(freq)
            } else {
                let b = draw_clamped(rng, 40.0, shape, 2, 20_000);
                AccessOp::insert(b, randomness, rows)
            }
        } else if roll < 0.7 {
            let cols = random_columns(schema, rng);
            let c: Vec<&str> = cols.iter().map(String::as_str).collect();
            let freq = draw_clamped(rng, 5.0, 1.0, 1, 100);
            AccessOp::point_lookup(&c, rows).with_frequency(freq)
        } else {
            let cols = random_columns(schema, rng);
            let c: Vec<&str> = cols.iter().map(String::as_str).collect();
            let n = if rng.gen_bool(0.05) {
                ((rng.gen_range(0.5..=1.0) * rows as f64) as u64).max(1)
            } else {
                draw_clamped(rng, 200.0, shape, 1, rows.max(1))
            };
            AccessOp::range_scan(&c, n, rows)
        };
        op.frequency = op.frequency.min(budget - used);
        used += op.frequency;
        if op.op_type == crate::schema::OpType::Insert {
            rows += op.frequency * op.result_rows;
        }
        ops.push(op);
    }
    Workload {
        table: schema.name.clone(),
        ops,
        initial_table_rows: table_rows,
    }
}

/// The structure a benchmark run uses for an engine: NSM for row engines,
/// DSM for the columnar engine.
pub fn bench_structure(schema: &TableSchema, engine: EngineKind) -> StorageStructure {
    let layout = match engine {
        EngineKind::Columnar => DataLayout::dsm(schema),
        _ => DataLayout::nsm(schema),
    };
    StorageStructure { engine, layout }
}

/// Converts one trace into one record per touched column group.
pub fn trace_records(
    schema: &TableSchema,
    structure: &StorageStructure,
    trace: &OpTrace,
    source: RecordSource,
) -> Result<Vec<PerfRecord>> {
    let rows = trace.rows().max(1) as f64;
    trace
        .groups
        .iter()
        .map(|g| {
            let group = &structure.layout.groups()[g.group];
            Ok(PerfRecord {
                engine: structure.engine,
                features: extract_features(schema, &trace.op, group, &g.state(&trace.state_before))?,
                elapsed_per_row_us: g.elapsed_us / rows,
                surge: trace.surge,
                source,
            })
        })
        .collect()
}

/// Everything one schema's benchmark produced, for every engine.
#[derive(Debug, Clone)]
pub struct SchemaRun {
    pub schema: TableSchema,
    pub workload: Workload,
    pub records: Vec<PerfRecord>,
}

fn schema_seed(seed: u64, i: usize) -> u64 {
    seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Generates and runs the benchmark for schema number `i`.
pub fn run_schema(cfg: &BenchConfig, i: usize) -> Result<SchemaRun> {
    let seed = schema_seed(cfg.seed, i);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schema = gen_schema(cfg, &format!("bench{i}"), &mut rng);
    let rows = gen_table_rows(cfg, &mut rng);
    let workload = gen_workload(cfg, &schema, rows, &mut rng);
    let opts = RunOptions {
        cache_clear_prob: cfg.cache_clear_prob,
        idle_prob: cfg.idle_prob,
        missing_key_prob: 0.1,
        ..Default::default()
    };
    let mut records = Vec::new();
    for engine in EngineKind::ALL {
        let structure = bench_structure(&schema, engine);
        let mut p = Partition::with_rows(&schema, &structure, &cfg.params, rows)?;
        let mut err = None;
        run_workload(&mut p, &workload, seed.rotate_left(17), &opts, |e| match trace_records(
            &schema,
            &structure,
            &e.trace,
            RecordSource::Benchmark,
        ) {
            Ok(r) => records.extend(r),
            Err(x) => err = Some(x),
        })?;
        if let Some(e) = err {
            return Err(e);
        }
    }
    Ok(SchemaRun {
        schema,
        workload,
        records,
    })
}

/// Runs every schema (in parallel, one partition per thread) and returns
/// the records in schema order. Any failing schema fails the whole run.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<Vec<PerfRecord>> {
    Ok(run_benchmark_schemas(cfg)?
        .into_iter()
        .flat_map(|r| r.records)
        .collect())
}

pub fn run_benchmark_schemas(cfg: &BenchConfig) -> Result<Vec<SchemaRun>> {
    cfg.validate()?;
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(cfg.num_schemas);
    let mut slots: Vec<Option<Result<SchemaRun>>> = (0..cfg.num_schemas).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunks: Vec<(usize, &mut [Option<Result<SchemaRun>>])> = {
            let size = cfg.num_schemas.div_ceil(workers);
            slots.chunks_mut(size).enumerate().map(|(c, s)| (c * size, s)).collect()
        };
        for (base, chunk) in chunks {
            scope.spawn(move || {
                for (j, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(run_schema(cfg, base + j));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every slot filled")).collect()
}

/// Bernoulli-samples live traces into runtime records.
pub fn sample_runtime(
    schema: &TableSchema,
    structure: &StorageStructure,
    traces: &[OpTrace],
    rate: f64,
    seed: u64,
) -> Result<Vec<PerfRecord>> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::Parse(format!("sampling rate {rate} outside (0,1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for t in traces {
        if rate >= 1.0 || rng.gen_bool(rate) {
            out.extend(trace_records(schema, structure, t, RecordSource::Runtime)?);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Performance-data files
// ---------------------------------------------------------------------------

pub const PERFDATA_FORMAT: &str = "storesel-perfdata";
pub const PERFDATA_VERSION: u32 = 1;

pub fn perfdata_file(dir: &Path, engine: EngineKind, class: OpClass) -> PathBuf {
    dir.join(format!("{}_{}.jsonl", engine.as_str(), class.as_str()))
}

fn header(engine: EngineKind, class: OpClass) -> Value {
    json!({
        "format": PERFDATA_FORMAT,
        "version": PERFDATA_VERSION,
        "feature_version": FEATURE_VERSION,
        "engine": engine,
        "class": class.as_str(),
        "features": FEATURE_NAMES,
    })
}

fn record_line(r: &PerfRecord) -> Value {
    let features: Map<String, Value> = r.features.named().map(|(n, v)| (n.to_string(), json!(v))).collect();
    json!({
        "features": features,
        "elapsed_per_row_us": r.elapsed_per_row_us,
        "surge": r.surge,
        "source": r.source,
    })
}

/// Writes records into one file per (engine, op class), replacing any
/// existing files. Files for empty partitions still get a header.
pub fn write_perfdata(dir: &Path, records: &[PerfRecord]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for engine in EngineKind::ALL {
        for class in [OpClass::Read, OpClass::Write] {
            let path = perfdata_file(dir, engine, class);
            let mut w = BufWriter::new(File::create(&path)?);
            writeln!(w, "{}", header(engine, class))?;
            for r in records.iter().filter(|r| r.engine == engine && r.class() == class) {
                writeln!(w, "{}", record_line(r))?;
            }
            w.flush()?;
            paths.push(path);
        }
    }
    Ok(paths)
}

/// Appends records to the partitioned files, creating them when missing.
pub fn append_perfdata(dir: &Path, records: &[PerfRecord]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for engine in EngineKind::ALL {
        for class in [OpClass::Read, OpClass::Write] {
            let batch: Vec<&PerfRecord> = records
                .iter()
                .filter(|r| r.engine == engine && r.class() == class)
                .collect();
            if batch.is_empty() {
                continue;
            }
            let path = perfdata_file(dir, engine, class);
            let fresh = !path.exists();
            let mut w = BufWriter::new(OpenOptions::new().create(true).append(true).open(&path)?);
            if fresh {
                writeln!(w, "{}", header(engine, class))?;
            }
            for r in batch {
                writeln!(w, "{}", record_line(r))?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

/// Reads every partitioned file present in `dir`.
pub fn read_perfdata(dir: &Path) -> Result<Vec<PerfRecord>> {
    let mut out = Vec::new();
    for engine in EngineKind::ALL {
        for class in [OpClass::Read, OpClass::Write] {
            let path = perfdata_file(dir, engine, class);
            if path.exists() {
                out.extend(read_perfdata_file(&path, engine)?);
            }
        }
    }
    Ok(out)
}

fn read_perfdata_file(path: &Path, engine: EngineKind) -> Result<Vec<PerfRecord>> {
    let parse = |m: String| Error::Parse(format!("{}: {m}", path.display()));
    let mut lines = BufReader::new(File::open(path)?).lines();
    let head: Value = match lines.next() {
        Some(l) => serde_json::from_str(&l?).map_err(|e| parse(e.to_string()))?,
        None => return Err(parse("missing header".into())),
    };
    if head["format"] != PERFDATA_FORMAT {
        return Err(parse("not a performance-data file".into()));
    }
    let version = head["version"].as_u64().unwrap_or(0) as u32;
    if version != PERFDATA_VERSION {
        return Err(Error::UnsupportedVersion {
            what: "performance data",
            found: version,
        });
    }
    let fv = head["feature_version"].as_str().unwrap_or_default();
    if fv != FEATURE_VERSION {
        return Err(Error::FeatureVersionMismatch {
            expected: FEATURE_VERSION.into(),
            found: fv.into(),
        });
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
        let mut values = [0.0; NUM_FEATURES];
        for (i, name) in FEATURE_NAMES.iter().enumerate() {
            values[i] = v["features"][name]
                .as_f64()
                .ok_or_else(|| parse(format!("missing feature `{name}`")))?;
        }
        out.push(PerfRecord {
            engine,
            features: FeatureVector::from_values(values),
            elapsed_per_row_us: v["elapsed_per_row_us"]
                .as_f64()
                .ok_or_else(|| parse("missing elapsed_per_row_us".into()))?,
            surge: v["surge"].as_bool().unwrap_or(false),
            source: serde_json::from_value(v["source"].clone()).map_err(|e| parse(e.to_string()))?,
        });
    }
    Ok(out)
}
