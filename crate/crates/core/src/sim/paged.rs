//! Leaf level of a B+ tree: sorted fixed-capacity pages indexed by their
//! first key. Also used for the per-column files of the columnar engine.

use std::collections::BTreeMap;
use std::ops::Bound;

use super::cache::{page_id, PageId};

pub type Row = Box<[u64]>;

#[derive(Debug, Clone, Default)]
struct Page {
    keys: Vec<u64>,
    vals: Vec<Row>,
}

#[derive(Debug, Clone)]
pub struct PagedStore {
    file: u32,
    rows_per_page: usize,
    pages: Vec<Page>,
    /// first key of each page -> page number
    index: BTreeMap<u64, usize>,
    rows: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PagedInsert {
    pub page: PageId,
    /// Page created by a split, if any.
    pub split: Option<PageId>,
    /// The key existed already and its row was replaced.
    pub replaced: bool,
}

impl PagedStore {
    pub fn new(file: u32, rows_per_page: usize) -> Self {
        PagedStore {
            file,
            rows_per_page: rows_per_page.max(1),
            pages: Vec::new(),
            index: BTreeMap::new(),
            rows: 0,
        }
    }

    /// Fills pages to capacity from rows sorted by key.
    pub fn bulk_load(file: u32, rows_per_page: usize, rows: impl IntoIterator<Item = (u64, Row)>) -> Self {
        let mut s = PagedStore::new(file, rows_per_page);
        let mut cur = Page::default();
        for (k, v) in rows {
            if cur.keys.len() == s.rows_per_page {
                s.push_page(std::mem::take(&mut cur));
            }
            cur.keys.push(k);
            cur.vals.push(v);
            s.rows += 1;
        }
        if !cur.keys.is_empty() {
            s.push_page(cur);
        }
        s
    }

    fn push_page(&mut self, page: Page) {
        self.index.insert(page.keys[0], self.pages.len());
        self.pages.push(page);
    }

    pub fn rows(&self) -> u64 {
        self.rows
    }

    pub fn pages(&self) -> u64 {
        self.pages.len() as u64
    }

    pub fn file(&self) -> u32 {
        self.file
    }

    fn pid(&self, page: usize) -> PageId {
        page_id(self.file, page as u32)
    }

    /// Page that holds, or would hold, `key`.
    fn locate(&self, key: u64) -> Option<usize> {
        self.index
            .range(..=key)
            .next_back()
            .or_else(|| self.index.iter().next())
            .map(|(_, &p)| p)
    }

    pub fn insert(&mut self, key: u64, row: Row) -> PagedInsert {
        let Some(p) = self.locate(key) else {
            self.push_page(Page {
                keys: vec![key],
                vals: vec![row],
            });
            self.rows += 1;
            return PagedInsert {
                page: self.pid(0),
                split: None,
                replaced: false,
            };
        };
        let page = &mut self.pages[p];
        let old_first = page.keys[0];
        let pos = match page.keys.binary_search(&key) {
            Ok(i) => {
                page.vals[i] = row;
                return PagedInsert {
                    page: self.pid(p),
                    split: None,
                    replaced: true,
                };
            }
            Err(i) => i,
        };
        page.keys.insert(pos, key);
        page.vals.insert(pos, row);
        self.rows += 1;
        if pos == 0 {
            self.index.remove(&old_first);
            self.index.insert(key, p);
        }
        let mut split = None;
        if self.pages[p].keys.len() > self.rows_per_page {
            let page = &mut self.pages[p];
            let is_last = self
                .index
                .range((Bound::Excluded(page.keys[0]), Bound::Unbounded))
                .next()
                .is_none();
            // appends to the rightmost page split off only the new row, so
            // sequential loads leave full pages behind
            let at = if is_last && pos == page.keys.len() - 1 {
                page.keys.len() - 1
            } else {
                page.keys.len() / 2
            };
            let new = Page {
                keys: page.keys.split_off(at),
                vals: page.vals.split_off(at),
            };
            let np = self.pages.len();
            self.push_page(new);
            split = Some(self.pid(np));
            if pos >= at {
                return PagedInsert {
                    page: self.pid(np),
                    split: Some(self.pid(p)),
                    replaced: false,
                };
            }
        }
        PagedInsert {
            page: self.pid(p),
            split,
            replaced: false,
        }
    }

    /// Returns the page probed for `key` and the row, if present.
    pub fn get(&self, key: u64) -> (Option<PageId>, Option<&Row>) {
        match self.locate(key) {
            None => (None, None),
            Some(p) => {
                let page = &self.pages[p];
                let row = page.keys.binary_search(&key).ok().map(|i| &page.vals[i]);
                (Some(self.pid(p)), row)
            }
        }
    }

    pub fn contains(&self, key: u64) -> bool {
        self.get(key).1.is_some()
    }

    /// Smallest key `>= key`.
    pub fn successor(&self, key: u64) -> Option<u64> {
        let p = self.locate(key)?;
        let page = &self.pages[p];
        let i = page.keys.partition_point(|&k| k < key);
        if i < page.keys.len() {
            return Some(page.keys[i]);
        }
        self.index
            .range((Bound::Excluded(page.keys[0]), Bound::Unbounded))
            .next()
            .map(|(&k, _)| k)
    }

    /// Up to `n` rows with key `>= start`, in key order, with the distinct
    /// pages they were read from.
    pub fn scan(&self, start: u64, n: u64, mut visit: impl FnMut(u64, &Row)) -> Vec<PageId> {
        let mut touched = Vec::new();
        let Some(first) = self.locate(start) else {
            return touched;
        };
        let mut left = n;
        let first_key = self.pages[first].keys[0];
        for (_, &p) in self.index.range(first_key..) {
            if left == 0 {
                break;
            }
            let page = &self.pages[p];
            let from = page.keys.partition_point(|&k| k < start);
            if from == page.keys.len() {
                continue;
            }
            touched.push(self.pid(p));
            for i in from..page.keys.len() {
                if left == 0 {
                    break;
                }
                visit(page.keys[i], &page.vals[i]);
                left -= 1;
            }
        }
        touched
    }

    /// Every row in key order.
    pub fn iter(&self) -> impl Iterator<Item = (u64, &Row)> + '_ {
        self.index.values().flat_map(move |&p| {
            let page = &self.pages[p];
            page.keys.iter().copied().zip(page.vals.iter())
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(k: u64) -> Row {
        vec![k * 10].into_boxed_slice()
    }

    #[test]
    fn sequential_inserts_fill_pages() {
        let mut s = PagedStore::new(1, 4);
        for k in 0..16 {
            s.insert(k, row(k));
        }
        assert_eq!(s.pages(), 4);
        assert_eq!(s.rows(), 16);
    }

    #[test]
    fn random_inserts_leave_half_full_pages() {
        let mut s = PagedStore::new(1, 4);
        for k in [8u64, 3, 14, 1, 11, 6, 0, 15, 4, 9, 2, 13, 7, 5, 12, 10] {
            s.insert(k, row(k));
        }
        assert!(s.pages() > 4);
        let keys: Vec<u64> = s.iter().map(|(k, _)| k).collect();
        assert_eq!(keys, (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn get_scan_successor() {
        let s = PagedStore::bulk_load(2, 3, (0..10).map(|k| (k * 2, row(k * 2))));
        assert_eq!(s.get(4).1.map(|r| r[0]), Some(40));
        assert!(s.get(5).1.is_none());
        assert!(s.get(5).0.is_some());
        assert_eq!(s.successor(5), Some(6));
        assert_eq!(s.successor(18), Some(18));
        assert_eq!(s.successor(19), None);
        let mut got = Vec::new();
        let pages = s.scan(5, 4, |k, _| got.push(k));
        assert_eq!(got, vec![6, 8, 10, 12]);
        assert_eq!(pages.len(), 2);
    }

    #[test]
    fn replacing_a_key_keeps_row_count() {
        let mut s = PagedStore::new(1, 4);
        s.insert(1, row(1));
        let r = s.insert(1, row(2));
        assert!(r.replaced);
        assert_eq!(s.rows(), 1);
    }
}
