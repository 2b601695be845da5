use std::collections::{BTreeMap, HashMap};

/// Page identifier: file id in the high 32 bits, page number in the low 32.
pub type PageId = u64;

pub fn page_id(file: u32, page: u32) -> PageId {
    ((file as u64) << 32) | page as u64
}

pub fn file_of(page: PageId) -> u32 {
    (page >> 32) as u32
}

/// Bounded LRU set of page ids.
#[derive(Debug, Clone)]
pub struct PageCache {
    capacity: usize,
    tick: u64,
    stamps: HashMap<PageId, u64>,
    order: BTreeMap<u64, PageId>,
    per_file: HashMap<u32, usize>,
}

impl PageCache {
    pub fn new(capacity: usize) -> Self {
        PageCache {
            capacity: capacity.max(1),
            tick: 0,
            stamps: HashMap::new(),
            order: BTreeMap::new(),
            per_file: HashMap::new(),
        }
    }

    /// Touches `page`, returning whether it was already cached. Misses load
    /// the page, evicting the least recently used one when full.
    pub fn access(&mut self, page: PageId) -> bool {
        self.tick += 1;
        if let Some(stamp) = self.stamps.get_mut(&page) {
            self.order.remove(stamp);
            *stamp = self.tick;
            self.order.insert(self.tick, page);
            return true;
        }
        if self.stamps.len() >= self.capacity {
            if let Some((_, victim)) = self.order.pop_first() {
                self.stamps.remove(&victim);
                self.forget(victim);
            }
        }
        *self.per_file.entry(file_of(page)).or_default() += 1;
        self.stamps.insert(page, self.tick);
        self.order.insert(self.tick, page);
        false
    }

    pub fn contains(&self, page: PageId) -> bool {
        self.stamps.contains_key(&page)
    }

    /// Forgets every page of a deleted file.
    pub fn remove_file(&mut self, file: u32) {
        let stale: Vec<PageId> = self.stamps.keys().copied().filter(|p| file_of(*p) == file).collect();
        for p in stale {
            if let Some(s) = self.stamps.remove(&p) {
                self.order.remove(&s);
            }
        }
        self.per_file.remove(&file);
    }

    fn forget(&mut self, page: PageId) {
        let f = file_of(page);
        if let Some(n) = self.per_file.get_mut(&f) {
            *n -= 1;
            if *n == 0 {
                self.per_file.remove(&f);
            }
        }
    }

    /// Cached pages belonging to `file`.
    pub fn cached_in(&self, file: u32) -> usize {
        self.per_file.get(&file).copied().unwrap_or(0)
    }

    pub fn clear(&mut self) {
        self.stamps.clear();
        self.order.clear();
        self.per_file.clear();
    }

    pub fn len(&self) -> usize {
        self.stamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stamps.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lru_eviction_order() {
        let mut c = PageCache::new(2);
        assert!(!c.access(1));
        assert!(!c.access(2));
        assert!(c.access(1));
        assert!(!c.access(3)); // evicts 2
        assert!(c.contains(1) && c.contains(3) && !c.contains(2));
        assert_eq!(c.cached_in(0), 2);
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn remove_file_drops_only_that_file() {
        let mut c = PageCache::new(8);
        c.access(page_id(1, 0));
        c.access(page_id(1, 1));
        c.access(page_id(2, 0));
        assert_eq!((c.cached_in(1), c.cached_in(2)), (2, 1));
        c.remove_file(1);
        assert_eq!(c.len(), 1);
        assert_eq!(c.cached_in(1), 0);
        assert!(c.contains(page_id(2, 0)));
        c.clear();
        assert!(c.is_empty());
    }
}
