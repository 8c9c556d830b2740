//! Dual-space byte-budgeted LRU cache.
//!
//! Demand-fetched items live in the main space. Prefetched items land in a
//! separate preemptive space (a fraction of the main budget) and move to the
//! main space on their first read, so useless prefetches only churn the
//! preemptive space.
//!
//! A prefetch hit is the first read of a prefetched entry while it is still
//! resident. `precision = prefetch_hits / prefetches` and
//! `hit_rate = cache_hits / accesses`; prefetch hits count as cache hits too.

use std::sync::Mutex;

use bytes::Bytes;
use lru::LruCache;

use crate::error::{Error, Result};
use crate::types::DataContainer;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CacheConfig {
    pub main_bytes: usize,
    pub preemptive_fraction: f64,
    pub entry_overhead_bytes: usize,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self {
            main_bytes: 32 << 20,
            preemptive_fraction: 0.10,
            entry_overhead_bytes: 64,
        }
    }
}

impl CacheConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.preemptive_fraction > 0.0 && self.preemptive_fraction < 1.0) {
            return Err(Error::config(
                "cache.preemptive-fraction",
                "must be in (0, 1)",
            ));
        }
        Ok(())
    }

    pub fn preemptive_bytes(&self) -> usize {
        (self.main_bytes as f64 * self.preemptive_fraction).round() as usize
    }

    pub fn entry_size(&self, value_len: usize) -> usize {
        (value_len + self.entry_overhead_bytes).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    Main,
    Preemptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadOutcome {
    MainHit,
    PreemptiveHit,
    Miss,
}

impl ReadOutcome {
    pub fn is_hit(self) -> bool {
        !matches!(self, ReadOutcome::Miss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Demand,
    Prefetch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdmitOutcome {
    Stored,
    /// Prefetch of a key that is already resident; nothing changed.
    AlreadyResident,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheMetrics {
    pub number_of_accesses: u64,
    pub cache_hits: u64,
    pub prefetch_hits: u64,
    pub number_of_prefetches: u64,
    pub evictions_main: u64,
    pub evictions_preemptive: u64,
}

impl CacheMetrics {
    pub fn hit_rate(&self) -> f64 {
        ratio(self.cache_hits, self.number_of_accesses)
    }

    pub fn precision(&self) -> f64 {
        ratio(self.prefetch_hits, self.number_of_prefetches)
    }

    /// Counter increments since `earlier`.
    pub fn since(&self, earlier: &CacheMetrics) -> CacheMetrics {
        CacheMetrics {
            number_of_accesses: self.number_of_accesses - earlier.number_of_accesses,
            cache_hits: self.cache_hits - earlier.cache_hits,
            prefetch_hits: self.prefetch_hits - earlier.prefetch_hits,
            number_of_prefetches: self.number_of_prefetches - earlier.number_of_prefetches,
            evictions_main: self.evictions_main - earlier.evictions_main,
            evictions_preemptive: self.evictions_preemptive - earlier.evictions_preemptive,
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone)]
struct Entry {
    value: Bytes,
    size: usize,
    prefetched_unhit: bool,
}

struct LruSpace {
    entries: LruCache<DataContainer, Entry>,
    used: usize,
    capacity: usize,
}

impl LruSpace {
    fn new(capacity: usize) -> Self {
        Self {
            entries: LruCache::unbounded(),
            used: 0,
            capacity,
        }
    }

    /// Insert as MRU and evict from the LRU end until the budget holds.
    /// Returns how many entries were evicted.
    fn insert(&mut self, key: DataContainer, entry: Entry) -> u64 {
        self.used += entry.size;
        if let Some(old) = self.entries.put(key, entry) {
            self.used -= old.size;
        }
        self.shrink()
    }

    fn shrink(&mut self) -> u64 {
        let mut evicted = 0;
        while self.used > self.capacity {
            let Some((_, e)) = self.entries.pop_lru() else { break };
            self.used -= e.size;
            evicted += 1;
        }
        evicted
    }

    fn remove(&mut self, key: &DataContainer) -> Option<Entry> {
        let e = self.entries.pop(key)?;
        self.used -= e.size;
        Some(e)
    }
}

struct Spaces {
    main: LruSpace,
    preemptive: LruSpace,
    metrics: CacheMetrics,
}

/// Thread-safe dual-space cache. One lock covers both spaces so promotion
/// and counter updates are atomic with respect to every other operation.
pub struct DualCache {
    cfg: CacheConfig,
    inner: Mutex<Spaces>,
}

impl DualCache {
    pub fn new(cfg: CacheConfig) -> Self {
        Self {
            inner: Mutex::new(Spaces {
                main: LruSpace::new(cfg.main_bytes),
                preemptive: LruSpace::new(cfg.preemptive_bytes()),
                metrics: CacheMetrics::default(),
            }),
            cfg,
        }
    }

    pub fn config(&self) -> &CacheConfig {
        &self.cfg
    }

    pub fn read(&self, key: &DataContainer) -> (Option<Bytes>, ReadOutcome) {
        let mut s = self.inner.lock().unwrap();
        s.metrics.number_of_accesses += 1;
        if let Some(e) = s.main.entries.get(key) {
            let value = e.value.clone();
            s.metrics.cache_hits += 1;
            return (Some(value), ReadOutcome::MainHit);
        }
        if let Some(mut e) = s.preemptive.remove(key) {
            s.metrics.cache_hits += 1;
            if e.prefetched_unhit {
                s.metrics.prefetch_hits += 1;
                e.prefetched_unhit = false;
            }
            let value = e.value.clone();
            let evicted = s.main.insert(key.clone(), e);
            s.metrics.evictions_main += evicted;
            return (Some(value), ReadOutcome::PreemptiveHit);
        }
        (None, ReadOutcome::Miss)
    }

    pub fn admit(&self, key: &DataContainer, value: Bytes, origin: Origin) -> Result<AdmitOutcome> {
        let size = self.cfg.entry_size(value.len());
        let mut s = self.inner.lock().unwrap();
        match origin {
            Origin::Demand => {
                if size > s.main.capacity {
                    return Err(Error::EntryLargerThanSpace {
                        size,
                        capacity: s.main.capacity,
                    });
                }
                s.preemptive.remove(key);
                let evicted = s.main.insert(
                    key.clone(),
                    Entry {
                        value,
                        size,
                        prefetched_unhit: false,
                    },
                );
                s.metrics.evictions_main += evicted;
                Ok(AdmitOutcome::Stored)
            }
            Origin::Prefetch => {
                if s.main.entries.contains(key) || s.preemptive.entries.contains(key) {
                    return Ok(AdmitOutcome::AlreadyResident);
                }
                if size > s.preemptive.capacity {
                    return Err(Error::EntryLargerThanSpace {
                        size,
                        capacity: s.preemptive.capacity,
                    });
                }
                s.metrics.number_of_prefetches += 1;
                let evicted = s.preemptive.insert(
                    key.clone(),
                    Entry {
                        value,
                        size,
                        prefetched_unhit: true,
                    },
                );
                s.metrics.evictions_preemptive += evicted;
                Ok(AdmitOutcome::Stored)
            }
        }
    }

    /// Replace a resident value in place and mark it most recently used.
    /// Returns whether the key was resident. Absent keys are not admitted.
    pub fn write(&self, key: &DataContainer, value: Bytes) -> bool {
        let size = self.cfg.entry_size(value.len());
        let mut s = self.inner.lock().unwrap();
        let s = &mut *s;
        for (space, evictions) in [
            (&mut s.main, &mut s.metrics.evictions_main),
            (&mut s.preemptive, &mut s.metrics.evictions_preemptive),
        ] {
            if let Some(old) = space.remove(key) {
                if size <= space.capacity {
                    *evictions += space.insert(
                        key.clone(),
                        Entry {
                            value,
                            size,
                            prefetched_unhit: old.prefetched_unhit,
                        },
                    );
                }
                return true;
            }
        }
        false
    }

    pub fn invalidate(&self, key: &DataContainer) {
        let mut s = self.inner.lock().unwrap();
        if s.main.remove(key).is_none() {
            s.preemptive.remove(key);
        }
    }

    /// Which space holds `key`, without touching recency.
    pub fn residency(&self, key: &DataContainer) -> Option<Space> {
        let s = self.inner.lock().unwrap();
        if s.main.entries.contains(key) {
            Some(Space::Main)
        } else if s.preemptive.entries.contains(key) {
            Some(Space::Preemptive)
        } else {
            None
        }
    }

    pub fn snapshot_metrics(&self) -> CacheMetrics {
        self.inner.lock().unwrap().metrics
    }

    /// Bytes in use by (main, preemptive).
    pub fn used_bytes(&self) -> (usize, usize) {
        let s = self.inner.lock().unwrap();
        (s.main.used, s.preemptive.used)
    }

    /// Keys of a space from least to most recently used.
    pub fn keys_lru_order(&self, space: Space) -> Vec<DataContainer> {
        let s = self.inner.lock().unwrap();
        let sp = match space {
            Space::Main => &s.main,
            Space::Preemptive => &s.preemptive,
        };
        sp.entries.iter().rev().map(|(k, _)| k.clone()).collect()
    }
}
