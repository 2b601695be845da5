//! Deterministic virtual-time simulators of a B+ tree row store, an LSM row
//! store and a columnar store.
//!
//! Every engine holds real rows. Elapsed time is computed from fixed cost
//! rules over pages touched, cache hits and misses, buffered writes and
//! flushes, and is reported per column group so that an operation's cost
//! is the sum of its group costs.

pub mod cache;
pub mod driver;
pub mod lsm;
pub mod paged;
pub mod snapshot;

use std::collections::{BTreeMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{randomness_or_zero, RuntimeState};
use crate::schema::{AccessOp, EngineKind, OpType, StorageStructure, TableSchema};

use cache::{PageCache, PageId};
use lsm::LsmStore;
use paged::{PagedStore, Row};

pub use snapshot::Snapshot;

/// Spacing between keys of a bulk-loaded table, leaving room for random
/// inserts between existing keys.
pub const KEY_GAP: u64 = 1 << 16;

/// Simulator constants. Times are virtual microseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostParams {
    pub page_size: u64,
    pub c_hit: f64,
    pub c_miss: f64,
    /// Per-row cost of a buffered insert.
    pub c_buf: f64,
    /// Per-byte cost of the write-ahead log append.
    pub c_log: f64,
    /// Per-page cost of writing out dirty or flushed pages.
    pub c_flush: f64,
    /// Per-page cost of compaction IO (pages read plus pages written).
    pub c_compact: f64,
    /// Fixed per-operation cost charged to every group an op touches.
    pub c_op: f64,
    /// Per-row decode cost for row engines.
    pub c_row: f64,
    pub c_row_columnar: f64,
    /// Per-file probe cost of an LSM lookup or seek.
    pub c_probe: f64,
    pub cache_pages: usize,
    pub write_buffer_rows: usize,
    pub l1_compaction_trigger: usize,
    pub l2_file_pages: u64,
    pub throughput_window_us: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            page_size: 4096,
            c_hit: 1.0,
            c_miss: 100.0,
            c_buf: 0.5,
            c_log: 0.0,
            c_flush: 10.0,
            c_compact: 0.3,
            c_op: 5.0,
            c_row: 0.05,
            c_row_columnar: 0.01,
            c_probe: 0.5,
            cache_pages: 1024,
            write_buffer_rows: 1000,
            l1_compaction_trigger: 4,
            l2_file_pages: 256,
            throughput_window_us: 1_000_000.0,
        }
    }
}

/// Deterministic cell content for `(key, value column)`.
pub fn cell_value(key: u64, column: usize) -> u64 {
    let mut z = key
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((column as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A concrete request against a partition. Column lists hold value-column
/// indices; empty means every column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    Lookup { key: u64, columns: Vec<usize> },
    Scan { start: u64, rows: u64, columns: Vec<usize> },
    Insert { keys: Vec<u64> },
}

impl Request {
    pub fn op_type(&self) -> OpType {
        match self {
            Request::Lookup { .. } => OpType::PointLookup,
            Request::Scan { .. } => OpType::RangeScan,
            Request::Insert { .. } => OpType::Insert,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTrace {
    pub group: usize,
    pub elapsed_us: f64,
    /// Portion of `elapsed_us` spent flushing or compacting.
    pub surge_us: f64,
    /// The group's cached and total pages just before it was accessed.
    pub cached_pages: u64,
    pub total_pages: u64,
}

impl GroupTrace {
    /// `partition` with the page counts narrowed to this group's files.
    pub fn state(&self, partition: &RuntimeState) -> RuntimeState {
        RuntimeState {
            cached_pages: self.cached_pages.min(self.total_pages),
            total_pages: self.total_pages,
            ..*partition
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpTrace {
    /// The executed operation with its actual row count.
    pub op: AccessOp,
    pub elapsed_us: f64,
    /// A write-buffer flush happened during this operation.
    pub surge: bool,
    pub flushes: u32,
    /// `false` for a point lookup that missed.
    pub key_found: bool,
    pub state_before: RuntimeState,
    pub groups: Vec<GroupTrace>,
}

impl OpTrace {
    pub fn rows(&self) -> u64 {
        self.op.result_rows
    }

    pub fn surge_us(&self) -> f64 {
        self.groups.iter().map(|g| g.surge_us).sum()
    }
}

/// One result row: key plus `(value column, cell)` pairs.
pub type ResultRow = (u64, Vec<(usize, u64)>);

#[derive(Debug, Clone)]
enum Store {
    Paged(PagedStore),
    Lsm(LsmStore),
}

impl Store {
    fn rows(&self) -> u64 {
        match self {
            Store::Paged(s) => s.rows(),
            Store::Lsm(s) => s.rows(),
        }
    }

    fn pages(&self) -> u64 {
        match self {
            Store::Paged(s) => s.pages(),
            Store::Lsm(s) => s.pages(),
        }
    }

    fn successor(&self, key: u64) -> Option<u64> {
        match self {
            Store::Paged(s) => s.successor(key),
            Store::Lsm(s) => s.successor(key),
        }
    }

    fn contains(&self, key: u64) -> bool {
        match self {
            Store::Paged(s) => s.contains(key),
            Store::Lsm(s) => s.contains(key),
        }
    }

    fn cached_pages(&self, cache: &PageCache) -> u64 {
        match self {
            Store::Paged(s) => cache.cached_in(s.file()) as u64,
            Store::Lsm(s) => s.files().map(|f| cache.cached_in(f) as u64).sum(),
        }
    }

    fn rows_in_order(&self) -> Vec<(u64, &Row)> {
        match self {
            Store::Paged(s) => s.iter().collect(),
            Store::Lsm(s) => s.iter(),
        }
    }
}

#[derive(Debug, Clone)]
struct Group {
    /// Value-column indices held by this group.
    columns: Vec<usize>,
    store: Store,
    dirty: HashSet<PageId>,
}

#[derive(Debug, Clone, Copy)]
struct IoEvent {
    at_us: f64,
    read_bytes: u64,
    write_bytes: u64,
}

/// One table partition stored under one storage structure.
#[derive(Debug, Clone)]
pub struct Partition {
    schema: TableSchema,
    structure: StorageStructure,
    params: CostParams,
    groups: Vec<Group>,
    cache: PageCache,
    buffer_rows: usize,
    clock_us: f64,
    io: VecDeque<IoEvent>,
    next_file: u32,
    max_key: Option<u64>,
}

impl Partition {
    /// An empty partition.
    pub fn new(schema: &TableSchema, structure: &StorageStructure, params: &CostParams) -> Result<Self> {
        Self::from_rows(schema, structure, params, Vec::new())
    }

    /// Bulk-loads `n` generated rows with keys `0, KEY_GAP, 2*KEY_GAP, ...`.
    pub fn with_rows(schema: &TableSchema, structure: &StorageStructure, params: &CostParams, n: u64) -> Result<Self> {
        let nvals = schema.num_values();
        let rows = (0..n)
            .map(|i| {
                let k = i * KEY_GAP;
                (k, (0..nvals).map(|c| cell_value(k, c)).collect())
            })
            .collect();
        Self::from_rows(schema, structure, params, rows)
    }

    /// Bulk-loads full rows (one cell per value column) sorted by key.
    pub fn from_rows(
        schema: &TableSchema,
        structure: &StorageStructure,
        params: &CostParams,
        rows: Vec<(u64, Row)>,
    ) -> Result<Self> {
        structure.validate(schema)?;
        let nvals = schema.num_values();
        if rows.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::SchemaMismatch(
                "bulk-load rows must be sorted by unique key".into(),
            ));
        }
        if let Some((k, r)) = rows.iter().find(|(_, r)| r.len() != nvals) {
            return Err(Error::SchemaMismatch(format!(
                "row {k} has {} cells, schema has {nvals} value columns",
                r.len()
            )));
        }
        let mut next_file = 0u32;
        let mut groups = Vec::with_capacity(structure.layout.len());
        for g in structure.layout.groups() {
            let columns: Vec<usize> = g
                .iter()
                .map(|c| schema.value_index(c).ok_or_else(|| Error::UnknownColumn(c.clone())))
                .collect::<Result<_>>()?;
            let row_bytes = group_row_bytes(schema, structure.engine, &columns);
            let per_page = (params.page_size / row_bytes.max(1)).max(1) as usize;
            let projected = rows
                .iter()
                .map(|(k, r)| (*k, columns.iter().map(|&c| r[c]).collect::<Row>()));
            next_file += 1;
            let store = match structure.engine {
                EngineKind::LsmRow => Store::Lsm(LsmStore::bulk_load(
                    per_page,
                    params.l2_file_pages,
                    next_file,
                    projected,
                )),
                _ => Store::Paged(PagedStore::bulk_load(next_file, per_page, projected)),
            };
            groups.push(Group {
                columns,
                store,
                dirty: HashSet::new(),
            });
        }
        Ok(Partition {
            schema: schema.clone(),
            structure: structure.clone(),
            params: params.clone(),
            groups,
            cache: PageCache::new(params.cache_pages),
            buffer_rows: 0,
            clock_us: 0.0,
            io: VecDeque::new(),
            next_file,
            max_key: rows.last().map(|(k, _)| *k),
        })
    }

    pub fn schema(&self) -> &TableSchema {
        &self.schema
    }

    pub fn structure(&self) -> &StorageStructure {
        &self.structure
    }

    pub fn params(&self) -> &CostParams {
        &self.params
    }

    pub fn rows(&self) -> u64 {
        self.groups[0].store.rows()
    }

    pub fn max_key(&self) -> Option<u64> {
        self.max_key
    }

    pub fn clock_us(&self) -> f64 {
        self.clock_us
    }

    pub fn buffered_rows(&self) -> usize {
        self.buffer_rows
    }

    pub fn cached_pages(&self) -> usize {
        self.cache.len()
    }

    pub fn contains_key(&self, key: u64) -> bool {
        self.groups[0].store.contains(key)
    }

    /// Smallest stored key `>= key`.
    pub fn successor_key(&self, key: u64) -> Option<u64> {
        self.groups[0].store.successor(key)
    }

    /// Group indices holding any of `columns` (value indices, empty = all).
    pub fn touched_groups(&self, columns: &[usize]) -> Vec<usize> {
        if columns.is_empty() {
            return (0..self.groups.len()).collect();
        }
        (0..self.groups.len())
            .filter(|&g| self.groups[g].columns.iter().any(|c| columns.contains(c)))
            .collect()
    }

    pub fn state(&self) -> RuntimeState {
        let secs = self.params.throughput_window_us / 1e6;
        let from = self.clock_us - self.params.throughput_window_us;
        let (mut rd, mut wr) = (0u64, 0u64);
        for e in self.io.iter().filter(|e| e.at_us > from) {
            rd += e.read_bytes;
            wr += e.write_bytes;
        }
        let mut s = RuntimeState {
            disk_read_tput: rd as f64 / secs,
            disk_write_tput: wr as f64 / secs,
            cached_pages: self.cache.len() as u64,
            total_pages: self.groups.iter().map(|g| g.store.pages()).sum(),
            ..Default::default()
        };
        s.cached_pages = s.cached_pages.min(s.total_pages);
        for g in &self.groups {
            if let Store::Lsm(l) = &g.store {
                s.file_count += l.file_count();
                s.l1_file_count += l.l1_files();
                s.l2_file_count += l.l2_files();
            }
        }
        s
    }

    pub fn clear_page_cache(&mut self) {
        self.cache.clear();
    }

    /// Advances the virtual clock without doing work.
    pub fn idle(&mut self, duration_us: f64) {
        if duration_us > 0.0 {
            self.clock_us += duration_us;
            self.prune_io();
        }
    }

    fn prune_io(&mut self) {
        let from = self.clock_us - self.params.throughput_window_us;
        while self.io.front().is_some_and(|e| e.at_us <= from) {
            self.io.pop_front();
        }
    }

    pub fn exec(&mut self, req: &Request) -> Result<OpTrace> {
        self.run(req, None)
    }

    /// Executes `req` and also returns the rows it read.
    pub fn exec_collect(&mut self, req: &Request) -> Result<(OpTrace, Vec<ResultRow>)> {
        let mut out = BTreeMap::new();
        let trace = self.run(req, Some(&mut out))?;
        let rows = out
            .into_iter()
            .map(|(k, mut cells): (u64, Vec<(usize, u64)>)| {
                cells.sort_unstable();
                (k, cells)
            })
            .collect();
        Ok((trace, rows))
    }

    fn check_columns(&self, columns: &[usize]) -> Result<()> {
        let n = self.schema.num_values();
        match columns.iter().find(|&&c| c >= n) {
            Some(c) => Err(Error::SchemaMismatch(format!("value column index {c} out of range"))),
            None => Ok(()),
        }
    }

    fn run(&mut self, req: &Request, mut collect: Option<&mut BTreeMap<u64, Vec<(usize, u64)>>>) -> Result<OpTrace> {
        let state_before = self.state();
        let pages_before: Vec<(u64, u64)> = (0..self.groups.len()).map(|g| self.group_pages(g)).collect();
        let table_rows = self.rows();
        let mut io = IoTally::default();
        let mut groups = Vec::new();
        let mut surge = false;
        let mut flushes = 0;
        let mut found = true;
        let (op_type, rows, key_randomness, columns) = match req {
            Request::Lookup { key, columns } => {
                self.check_columns(columns)?;
                let touched = self.touched_groups(columns);
                found = self.contains_key(*key);
                for g in touched {
                    let (cached_pages, total_pages) = self.group_pages(g);
                    let (cost, _) = self.lookup_group(g, *key, columns, &mut io, collect.as_deref_mut());
                    groups.push(GroupTrace {
                        group: g,
                        elapsed_us: cost,
                        surge_us: 0.0,
                        cached_pages,
                        total_pages,
                    });
                }
                (OpType::PointLookup, found as u64, None, columns.clone())
            }
            Request::Scan { start, rows, columns } => {
                self.check_columns(columns)?;
                let touched = self.touched_groups(columns);
                let mut got = 0;
                for g in touched {
                    let (cached_pages, total_pages) = self.group_pages(g);
                    let (cost, n) = self.scan_group(g, *start, *rows, columns, &mut io, collect.as_deref_mut());
                    got = n;
                    groups.push(GroupTrace {
                        group: g,
                        elapsed_us: cost,
                        surge_us: 0.0,
                        cached_pages,
                        total_pages,
                    });
                }
                (OpType::RangeScan, got, None, columns.clone())
            }
            Request::Insert { keys } => {
                let mut costs: Vec<GroupTrace> = (0..self.groups.len())
                    .map(|g| GroupTrace {
                        group: g,
                        elapsed_us: self.params.c_op,
                        surge_us: 0.0,
                        cached_pages: pages_before[g].0,
                        total_pages: pages_before[g].1,
                    })
                    .collect();
                for &k in keys {
                    for (g, c) in costs.iter_mut().enumerate() {
                        c.elapsed_us += self.insert_group(g, k, &mut io);
                    }
                    self.max_key = Some(self.max_key.map_or(k, |m| m.max(k)));
                    self.buffer_rows += 1;
                    if self.buffer_rows >= self.params.write_buffer_rows {
                        for (g, c) in costs.iter_mut().enumerate() {
                            let f = self.flush_group(g, &mut io);
                            c.elapsed_us += f;
                            c.surge_us += f;
                        }
                        self.buffer_rows = 0;
                        surge = true;
                        flushes += 1;
                    }
                }
                groups = costs;
                let r = randomness_or_zero(keys);
                (OpType::Insert, keys.len() as u64, Some(r), Vec::new())
            }
        };
        let elapsed: f64 = groups.iter().map(|g| g.elapsed_us).sum();
        self.clock_us += elapsed;
        if io.read_bytes > 0 || io.write_bytes > 0 {
            self.io.push_back(IoEvent {
                at_us: self.clock_us,
                read_bytes: io.read_bytes,
                write_bytes: io.write_bytes,
            });
        }
        self.prune_io();
        let names = self.schema.value_names();
        let op = AccessOp {
            op_type,
            columns: columns.iter().map(|&c| names[c].clone()).collect(),
            result_rows: rows,
            selectivity: if table_rows == 0 {
                if rows > 0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                (match op_type {
                    OpType::PointLookup => 1.0,
                    _ => rows as f64,
                } / table_rows as f64)
                    .min(1.0)
            },
            key_randomness,
            frequency: 1,
            age: 0,
        };
        Ok(OpTrace {
            op,
            elapsed_us: elapsed,
            surge,
            flushes,
            key_found: found,
            state_before,
            groups,
        })
    }

    fn touch(&mut self, page: PageId, io: &mut IoTally) -> f64 {
        if self.cache.access(page) {
            self.params.c_hit
        } else {
            io.read_bytes += self.params.page_size;
            self.params.c_miss
        }
    }

    /// Cached and total pages of group `g`'s files.
    fn group_pages(&self, g: usize) -> (u64, u64) {
        let st = &self.groups[g].store;
        (st.cached_pages(&self.cache), st.pages())
    }

    fn row_cost(&self) -> f64 {
        if self.structure.engine == EngineKind::Columnar {
            self.params.c_row_columnar
        } else {
            self.params.c_row
        }
    }

    fn traversal(&self, g: usize) -> f64 {
        self.params.c_hit * ((self.groups[g].store.rows() + 1) as f64).log2()
    }

    fn lookup_group(
        &mut self,
        g: usize,
        key: u64,
        columns: &[usize],
        io: &mut IoTally,
        collect: Option<&mut BTreeMap<u64, Vec<(usize, u64)>>>,
    ) -> (f64, bool) {
        let mut cost = self.params.c_op;
        let (page, row) = match &self.groups[g].store {
            Store::Paged(s) => {
                cost += self.traversal(g);
                let (p, r) = s.get(key);
                (p, r.cloned())
            }
            Store::Lsm(s) => {
                cost += self.params.c_probe * s.file_count() as f64;
                let (p, r) = s.get(key);
                if p.is_none() && r.is_some() {
                    cost += self.params.c_hit;
                }
                (p, r.cloned())
            }
        };
        if let Some(p) = page {
            cost += self.touch(p, io);
        }
        let hit = row.is_some();
        if let Some(row) = row {
            cost += self.row_cost();
            if let Some(out) = collect {
                emit(out, key, &self.groups[g].columns, &row, columns);
            }
        }
        (cost, hit)
    }

    fn scan_group(
        &mut self,
        g: usize,
        start: u64,
        n: u64,
        columns: &[usize],
        io: &mut IoTally,
        mut collect: Option<&mut BTreeMap<u64, Vec<(usize, u64)>>>,
    ) -> (f64, u64) {
        let mut cost = self.params.c_op;
        let mut got = 0u64;
        let gcols = self.groups[g].columns.clone();
        let mut visit = |k: u64, r: &Row| {
            got += 1;
            if let Some(out) = collect.as_deref_mut() {
                emit(out, k, &gcols, r, columns);
            }
        };
        let pages = match &self.groups[g].store {
            Store::Paged(s) => {
                let p = s.scan(start, n, &mut visit);
                cost += self.traversal(g);
                p
            }
            Store::Lsm(s) => {
                cost += self.params.c_probe * s.file_count() as f64;
                s.scan(start, n, &mut visit)
            }
        };
        for p in pages {
            cost += self.touch(p, io);
        }
        cost += got as f64 * self.row_cost();
        (cost, got)
    }

    fn insert_group(&mut self, g: usize, key: u64, io: &mut IoTally) -> f64 {
        let row: Row = self.groups[g].columns.iter().map(|&c| cell_value(key, c)).collect();
        let bytes = group_row_bytes(&self.schema, self.structure.engine, &self.groups[g].columns);
        let mut cost = self.params.c_buf + self.params.c_log * bytes as f64;
        let placed = match &mut self.groups[g].store {
            Store::Paged(s) => Some(s.insert(key, row)),
            Store::Lsm(s) => {
                s.insert(key, row);
                None
            }
        };
        if let Some(r) = placed {
            if let Some(split) = r.split {
                // freshly split pages are built in memory
                self.cache.access(split);
                self.groups[g].dirty.insert(split);
            }
            cost += self.touch(r.page, io);
            self.groups[g].dirty.insert(r.page);
        }
        cost
    }

    fn flush_group(&mut self, g: usize, io: &mut IoTally) -> f64 {
        let p = &self.params;
        let group = &mut self.groups[g];
        match &mut group.store {
            Store::Paged(_) => {
                let pages = group.dirty.len() as u64;
                group.dirty.clear();
                io.write_bytes += pages * p.page_size;
                p.c_flush * pages as f64
            }
            Store::Lsm(s) => {
                let out = s.flush(&mut self.next_file, p.l1_compaction_trigger);
                for f in &out.dropped_files {
                    self.cache.remove_file(*f);
                }
                io.write_bytes += (out.flushed_pages + out.compaction_write_pages) * p.page_size;
                io.read_bytes += out.compaction_read_pages * p.page_size;
                p.c_flush * out.flushed_pages as f64
                    + p.c_compact * (out.compaction_read_pages + out.compaction_write_pages) as f64
            }
        }
    }

    /// Captures the full logical content (key -> every value cell).
    pub fn snapshot(&self) -> Snapshot {
        let nvals = self.schema.num_values();
        let per_group: Vec<Vec<(u64, &Row)>> = self.groups.iter().map(|g| g.store.rows_in_order()).collect();
        let n = per_group[0].len();
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let key = per_group[0][i].0;
            let mut cells = vec![0u64; nvals];
            for (g, rows_g) in per_group.iter().enumerate() {
                let (k, r) = rows_g[i];
                debug_assert_eq!(k, key, "column groups diverged");
                for (j, &c) in self.groups[g].columns.iter().enumerate() {
                    cells[c] = r[j];
                }
            }
            rows.push((key, cells.into_boxed_slice()));
        }
        Snapshot {
            schema: self.schema.clone(),
            rows,
        }
    }

    /// True when every group holds the same key set.
    pub fn groups_consistent(&self) -> bool {
        let first: Vec<u64> = self.groups[0].store.rows_in_order().iter().map(|r| r.0).collect();
        self.groups[1..]
            .iter()
            .all(|g| g.store.rows_in_order().iter().map(|r| r.0).eq(first.iter().copied()))
    }
}

fn emit(out: &mut BTreeMap<u64, Vec<(usize, u64)>>, key: u64, gcols: &[usize], row: &Row, wanted: &[usize]) {
    let cells = out.entry(key).or_default();
    for (j, &c) in gcols.iter().enumerate() {
        if wanted.is_empty() || wanted.contains(&c) {
            cells.push((c, row[j]));
        }
    }
}

/// Physical bytes per row of a group. Row engines replicate the key into
/// every group; columnar files are position-aligned and store values only.
fn group_row_bytes(schema: &TableSchema, engine: EngineKind, columns: &[usize]) -> u64 {
    let values: Vec<u64> = schema.value_fields().map(|f| f.avg_length_bytes as u64).collect();
    let vb: u64 = columns.iter().map(|&c| values[c]).sum();
    match engine {
        EngineKind::Columnar => vb.max(1),
        _ => schema.key_bytes() + vb,
    }
}

#[derive(Debug, Default)]
struct IoTally {
    read_bytes: u64,
    write_bytes: u64,
}
