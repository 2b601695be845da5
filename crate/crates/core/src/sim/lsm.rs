//! Two-level LSM tree: a memtable, overlapping level-1 runs produced by
//! flushes, and non-overlapping level-2 runs produced by compaction.

use std::collections::BTreeMap;

use super::cache::{page_id, PageId};
use super::paged::Row;

#[derive(Debug, Clone)]
struct Run {
    file: u32,
    keys: Vec<u64>,
    vals: Vec<Row>,
}

impl Run {
    fn first(&self) -> u64 {
        self.keys[0]
    }

    fn last(&self) -> u64 {
        *self.keys.last().unwrap()
    }
}

/// Result of a memtable flush, including any compaction it triggered.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlushOutcome {
    pub flushed_pages: u64,
    pub compaction_read_pages: u64,
    pub compaction_write_pages: u64,
    /// Files deleted by compaction; their cached pages are stale.
    pub dropped_files: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct LsmStore {
    rows_per_page: usize,
    l2_file_pages: u64,
    memtable: BTreeMap<u64, Row>,
    l1: Vec<Run>,
    l2: Vec<Run>,
    rows: u64,
}

impl LsmStore {
    pub fn new(rows_per_page: usize, l2_file_pages: u64) -> Self {
        LsmStore {
            rows_per_page: rows_per_page.max(1),
            l2_file_pages: l2_file_pages.max(1),
            memtable: BTreeMap::new(),
            l1: Vec::new(),
            l2: Vec::new(),
            rows: 0,
        }
    }

    /// Ingests sorted rows directly into level 2.
    pub fn bulk_load(
        rows_per_page: usize,
        l2_file_pages: u64,
        file: u32,
        rows: impl IntoIterator<Item = (u64, Row)>,
    ) -> Self {
        let mut s = LsmStore::new(rows_per_page, l2_file_pages);
        let (keys, vals): (Vec<u64>, Vec<Row>) = rows.into_iter().unzip();
        s.rows = keys.len() as u64;
        if !keys.is_empty() {
            s.l2.push(Run { file, keys, vals });
        }
        s
    }

    fn run_pages(&self, run: &Run) -> u64 {
        run.keys.len().div_ceil(self.rows_per_page) as u64
    }

    fn pid(&self, run: &Run, pos: usize) -> PageId {
        page_id(run.file, (pos / self.rows_per_page) as u32)
    }

    pub fn rows(&self) -> u64 {
        self.rows
    }

    pub fn memtable_rows(&self) -> usize {
        self.memtable.len()
    }

    pub fn pages(&self) -> u64 {
        self.l1.iter().chain(&self.l2).map(|r| self.run_pages(r)).sum()
    }

    pub fn l1_files(&self) -> u64 {
        self.l1.len() as u64
    }

    pub fn l2_files(&self) -> u64 {
        self.l2
            .iter()
            .map(|r| self.run_pages(r).div_ceil(self.l2_file_pages))
            .sum()
    }

    /// Ids of the files currently holding runs.
    pub fn files(&self) -> impl Iterator<Item = u32> + '_ {
        self.l1.iter().chain(&self.l2).map(|r| r.file)
    }

    pub fn file_count(&self) -> u64 {
        self.l1_files() + self.l2_files()
    }

    /// Returns `true` if the key was new.
    pub fn insert(&mut self, key: u64, row: Row) -> bool {
        let fresh = !self.contains(key);
        self.memtable.insert(key, row);
        if fresh {
            self.rows += 1;
        }
        fresh
    }

    fn find_in_run(run: &Run, key: u64) -> Option<usize> {
        if run.keys.is_empty() || key < run.first() || key > run.last() {
            return None;
        }
        run.keys.binary_search(&key).ok()
    }

    fn l2_run_for(&self, key: u64) -> Option<&Run> {
        let i = self.l2.partition_point(|r| r.last() < key);
        self.l2.get(i).filter(|r| r.first() <= key)
    }

    /// Looks `key` up newest-first. The page is `None` when the memtable
    /// answered or no run holds the key.
    pub fn get(&self, key: u64) -> (Option<PageId>, Option<&Row>) {
        if let Some(r) = self.memtable.get(&key) {
            return (None, Some(r));
        }
        for run in self.l1.iter().rev() {
            if let Some(i) = Self::find_in_run(run, key) {
                return (Some(self.pid(run, i)), Some(&run.vals[i]));
            }
        }
        if let Some(run) = self.l2_run_for(key) {
            if let Some(i) = Self::find_in_run(run, key) {
                return (Some(self.pid(run, i)), Some(&run.vals[i]));
            }
        }
        (None, None)
    }

    pub fn contains(&self, key: u64) -> bool {
        self.get(key).1.is_some()
    }

    pub fn successor(&self, key: u64) -> Option<u64> {
        let mut best = self.memtable.range(key..).next().map(|(&k, _)| k);
        for run in self.l1.iter().chain(&self.l2) {
            let i = run.keys.partition_point(|&k| k < key);
            if let Some(&k) = run.keys.get(i) {
                best = Some(best.map_or(k, |b: u64| b.min(k)));
            }
        }
        best
    }

    /// Merged scan of up to `n` rows with key `>= start`. Returns the pages
    /// read from on-disk runs; memtable rows cost no IO.
    pub fn scan(&self, start: u64, n: u64, mut visit: impl FnMut(u64, &Row)) -> Vec<PageId> {
        let n = n as usize;
        // (key, source) where source = None for the memtable
        let mut cands: Vec<(u64, Option<(usize, usize)>)> =
            self.memtable.range(start..).take(n).map(|(&k, _)| (k, None)).collect();
        let runs: Vec<&Run> = self.l1.iter().chain(&self.l2).collect();
        for (ri, run) in runs.iter().enumerate() {
            if run.keys.last().is_none_or(|&l| l < start) {
                continue;
            }
            let from = run.keys.partition_point(|&k| k < start);
            let to = (from + n).min(run.keys.len());
            cands.extend((from..to).map(|i| (run.keys[i], Some((ri, i)))));
        }
        cands.sort_unstable_by_key(|c| c.0);
        cands.truncate(n);
        let mut touched = Vec::new();
        for (k, src) in cands {
            match src {
                None => visit(k, &self.memtable[&k]),
                Some((ri, i)) => {
                    let run = runs[ri];
                    let p = self.pid(run, i);
                    if touched.last() != Some(&p) && !touched.contains(&p) {
                        touched.push(p);
                    }
                    visit(k, &run.vals[i]);
                }
            }
        }
        touched
    }

    /// Writes the memtable out as a new level-1 run; compacts level 1 into
    /// level 2 once more than `l1_trigger` runs accumulate.
    pub fn flush(&mut self, file_ids: &mut u32, l1_trigger: usize) -> FlushOutcome {
        let mut out = FlushOutcome::default();
        if self.memtable.is_empty() {
            return out;
        }
        let (keys, vals): (Vec<u64>, Vec<Row>) = std::mem::take(&mut self.memtable).into_iter().unzip();
        let run = Run {
            file: next_file(file_ids),
            keys,
            vals,
        };
        out.flushed_pages = self.run_pages(&run);
        self.l1.push(run);
        if self.l1.len() > l1_trigger {
            self.compact(file_ids, &mut out);
        }
        out
    }

    fn compact(&mut self, file_ids: &mut u32, out: &mut FlushOutcome) {
        let l1 = std::mem::take(&mut self.l1);
        let lo = l1.iter().map(Run::first).min().unwrap();
        let hi = l1.iter().map(Run::last).max().unwrap();
        let (overlap, keep): (Vec<Run>, Vec<Run>) = std::mem::take(&mut self.l2)
            .into_iter()
            .partition(|r| r.last() >= lo && r.first() <= hi);
        let mut merged: Vec<(u64, Row, usize)> = Vec::new();
        // newer runs win on duplicate keys: l1 runs are ordered oldest first
        for (age, run) in overlap.into_iter().chain(l1).enumerate() {
            out.compaction_read_pages += self.run_pages(&run);
            out.dropped_files.push(run.file);
            merged.extend(run.keys.into_iter().zip(run.vals).map(|(k, v)| (k, v, age)));
        }
        merged.sort_by(|a, b| a.0.cmp(&b.0).then(b.2.cmp(&a.2)));
        merged.dedup_by_key(|e| e.0);
        let (keys, vals): (Vec<u64>, Vec<Row>) = merged.into_iter().map(|(k, v, _)| (k, v)).unzip();
        let run = Run {
            file: next_file(file_ids),
            keys,
            vals,
        };
        out.compaction_write_pages += self.run_pages(&run);
        let mut l2 = keep;
        l2.push(run);
        l2.sort_by_key(Run::first);
        self.l2 = l2;
    }

    /// Every row in key order, memtable included.
    pub fn iter(&self) -> Vec<(u64, &Row)> {
        let mut all: BTreeMap<u64, &Row> = BTreeMap::new();
        for run in self.l2.iter().chain(&self.l1) {
            for (k, v) in run.keys.iter().zip(&run.vals) {
                all.insert(*k, v);
            }
        }
        for (k, v) in &self.memtable {
            all.insert(*k, v);
        }
        all.into_iter().collect()
    }
}

fn next_file(ids: &mut u32) -> u32 {
    *ids += 1;
    *ids
}
