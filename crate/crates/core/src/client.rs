//! The caching client: read/write path, prefetch execution and re-mining.
//!
//! Reads consult the dual cache, fall through to the backstore on a miss
//! and are appended to the session log. When prefetching is enabled every
//! read is also offered to the client's prefetcher; the resulting plan is
//! split into batches and handed to a fetch executor so the foreground read
//! never waits on it.
//!
//! Two executors exist. Under virtual time, batches are fetched immediately
//! but only become visible to the cache once the logical clock reaches their
//! completion time, which keeps runs deterministic. Under real time a small
//! worker pool performs the fetches while the backstore sleeps.

use std::cmp::Ordering as CmpOrdering;
use std::collections::{BinaryHeap, HashMap};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use bytes::Bytes;
use crossbeam::channel::{self, Sender};

use crate::backstore::{Backstore, TimeMode};
use crate::cache::{CacheConfig, CacheMetrics, DualCache, Origin, ReadOutcome};
use crate::error::{Error, Result};
use crate::metastore::{merge_patterns, Metastore};
use crate::miner::{mine_adaptive_with, MiningConfig, MiningControl, SequenceDatabase};
use crate::prefetch::{batch_plan, ClientPrefetcher, HeuristicKind, PlannedItem};
use crate::session_log::{segment, sort_records, ErrorCallback, LogRecord, SessionGapConfig, SessionLog};
use crate::types::{DataContainer, SequencePattern};

#[derive(Debug, Clone)]
pub struct ClientConfig {
    /// `None` is a passthrough client: no cache, no logging, no prefetching.
    pub cache: Option<CacheConfig>,
    pub heuristic: Option<HeuristicKind>,
    pub max_contexts: usize,
    /// Cost charged for a cache lookup, in microseconds.
    pub cache_service_us: u64,
    pub time: TimeMode,
    /// Prefetch worker threads under real time.
    pub fetch_workers: usize,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            cache: Some(CacheConfig::default()),
            heuristic: Some(HeuristicKind::FetchTopN(HeuristicKind::DEFAULT_TOP_N)),
            max_contexts: ClientPrefetcher::DEFAULT_MAX_CONTEXTS,
            cache_service_us: 1,
            time: TimeMode::Virtual,
            fetch_workers: 4,
        }
    }
}

impl ClientConfig {
    pub fn passthrough(time: TimeMode) -> Self {
        Self {
            cache: None,
            heuristic: None,
            time,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(cache) = &self.cache {
            cache.validate()?;
        } else if self.heuristic.is_some() {
            return Err(Error::config("heuristic", "prefetching requires a cache"));
        }
        if let Some(h) = &self.heuristic {
            h.validate()?;
        }
        if self.fetch_workers == 0 {
            return Err(Error::config("fetch-workers", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadResult {
    pub value: Option<Bytes>,
    pub outcome: ReadOutcome,
    pub latency_us: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PrefetchStats {
    pub batches: u64,
    pub items: u64,
    /// Completions dropped because a write or invalidation overtook them.
    pub discarded: u64,
}

/// Source of cross-client update notifications.
pub trait UpdateNotifier {
    fn subscribe(&self, listener: Arc<dyn Fn(&DataContainer) + Send + Sync>);
}

enum Clock {
    Virtual(AtomicU64),
    Real { start: Instant, skipped_us: AtomicU64 },
}

impl Clock {
    fn now_us(&self) -> u64 {
        match self {
            Clock::Virtual(t) => t.load(Ordering::SeqCst),
            Clock::Real { start, skipped_us } => {
                start.elapsed().as_micros() as u64 + skipped_us.load(Ordering::SeqCst)
            }
        }
    }
}

struct Shared {
    cache: Option<DualCache>,
    store: Arc<dyn Backstore>,
    inflight: Mutex<HashMap<DataContainer, u64>>,
    next_token: AtomicU64,
    batches: AtomicU64,
    items: AtomicU64,
    discarded: AtomicU64,
    passthrough_reads: AtomicU64,
    write_failures: AtomicU64,
    on_write_error: Option<ErrorCallback>,
}

impl Shared {
    fn complete(&self, items: Vec<(DataContainer, u64)>, values: Vec<Option<Bytes>>) {
        let Some(cache) = &self.cache else { return };
        for ((key, token), value) in items.into_iter().zip(values) {
            let current = {
                let mut inflight = self.inflight.lock().unwrap();
                if inflight.get(&key) == Some(&token) {
                    inflight.remove(&key);
                    true
                } else {
                    false
                }
            };
            if !current {
                self.discarded.fetch_add(1, Ordering::Relaxed);
                continue;
            }
            if let Some(value) = value {
                // Oversized entries bypass the cache; nothing to report.
                let _ = cache.admit(&key, value, Origin::Prefetch);
            }
        }
    }

    fn put(&self, key: &DataContainer, value: Bytes) {
        if let Err(e) = self.store.put(key, value).value {
            self.write_failed(key, e);
        }
    }

    fn write_failed(&self, key: &DataContainer, cause: Error) {
        self.write_failures.fetch_add(1, Ordering::Relaxed);
        let err = match cause {
            e @ Error::BackstoreWriteFailed { .. } => e,
            other => Error::BackstoreWriteFailed {
                key: key.encoded().to_string(),
                reason: other.to_string(),
            },
        };
        if let Some(cb) = &self.on_write_error {
            cb(&err);
        }
    }

    fn invalidate(&self, key: &DataContainer) {
        self.inflight.lock().unwrap().remove(key);
        if let Some(cache) = &self.cache {
            cache.invalidate(key);
        }
    }
}

struct Pending {
    ready_at: u64,
    seq: u64,
    items: Vec<(DataContainer, u64)>,
    values: Vec<Option<Bytes>>,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        (self.ready_at, self.seq) == (other.ready_at, other.seq)
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<CmpOrdering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    // Reversed so the max-heap pops the earliest completion.
    fn cmp(&self, other: &Self) -> CmpOrdering {
        (other.ready_at, other.seq).cmp(&(self.ready_at, self.seq))
    }
}

enum Job {
    Fetch(Vec<(DataContainer, u64)>),
    Write(DataContainer, Bytes),
}

enum Executor {
    Virtual {
        pending: Mutex<BinaryHeap<Pending>>,
        seq: AtomicU64,
    },
    Threaded {
        tx: Option<Sender<Job>>,
        outstanding: Arc<AtomicU64>,
        workers: Vec<JoinHandle<()>>,
    },
}

impl Executor {
    fn threaded(shared: &Arc<Shared>, workers: usize) -> Result<Self> {
        let (tx, rx) = channel::unbounded::<Job>();
        let outstanding = Arc::new(AtomicU64::new(0));
        let handles = (0..workers)
            .map(|i| {
                let rx = rx.clone();
                let shared = Arc::clone(shared);
                let outstanding = Arc::clone(&outstanding);
                std::thread::Builder::new()
                    .name(format!("prefetch-{i}"))
                    .spawn(move || {
                        for job in rx {
                            match job {
                                Job::Fetch(items) => {
                                    let keys: Vec<_> = items.iter().map(|(k, _)| k.clone()).collect();
                                    let values = shared.store.multi_get(&keys).value;
                                    shared.complete(items, values);
                                }
                                Job::Write(key, value) => shared.put(&key, value),
                            }
                            outstanding.fetch_sub(1, Ordering::SeqCst);
                        }
                    })
                    .map_err(|e| Error::io("prefetch worker", e))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Executor::Threaded {
            tx: Some(tx),
            outstanding,
            workers: handles,
        })
    }

    fn submit(&self, shared: &Shared, job: Job, issued_at: u64) {
        match self {
            Executor::Virtual { pending, seq } => match job {
                Job::Fetch(items) => {
                    let keys: Vec<_> = items.iter().map(|(k, _)| k.clone()).collect();
                    let fetched = shared.store.multi_get(&keys);
                    pending.lock().unwrap().push(Pending {
                        ready_at: issued_at + fetched.latency_us,
                        seq: seq.fetch_add(1, Ordering::Relaxed),
                        items,
                        values: fetched.value,
                    });
                }
                Job::Write(key, value) => shared.put(&key, value),
            },
            Executor::Threaded { tx, outstanding, .. } => {
                outstanding.fetch_add(1, Ordering::SeqCst);
                if let Some(tx) = tx {
                    if tx.send(job).is_err() {
                        outstanding.fetch_sub(1, Ordering::SeqCst);
                    }
                }
            }
        }
    }

    /// Apply every virtual completion due at or before `now_us`.
    fn drain(&self, shared: &Shared, now_us: u64) {
        if let Executor::Virtual { pending, .. } = self {
            loop {
                let next = {
                    let mut heap = pending.lock().unwrap();
                    match heap.peek() {
                        Some(p) if p.ready_at <= now_us => heap.pop(),
                        _ => None,
                    }
                };
                match next {
                    Some(p) => shared.complete(p.items, p.values),
                    None => break,
                }
            }
        }
    }

    fn settle(&self, shared: &Shared) {
        match self {
            Executor::Virtual { .. } => self.drain(shared, u64::MAX),
            Executor::Threaded { outstanding, .. } => {
                while outstanding.load(Ordering::SeqCst) > 0 {
                    std::thread::sleep(Duration::from_micros(200));
                }
            }
        }
    }
}

/// A client-side caching layer over a [`Backstore`].
pub struct CachingClient {
    cfg: ClientConfig,
    shared: Arc<Shared>,
    executor: Executor,
    clock: Clock,
    metastore: Arc<Metastore>,
    log: Arc<SessionLog>,
    prefetchers: Mutex<HashMap<u64, ClientPrefetcher>>,
    prefetching: AtomicBool,
}

impl CachingClient {
    pub fn new(
        cfg: ClientConfig,
        store: Arc<dyn Backstore>,
        metastore: Arc<Metastore>,
        log: Arc<SessionLog>,
        on_write_error: Option<ErrorCallback>,
    ) -> Result<Self> {
        cfg.validate()?;
        let shared = Arc::new(Shared {
            cache: cfg.cache.map(DualCache::new),
            store,
            inflight: Mutex::new(HashMap::new()),
            next_token: AtomicU64::new(1),
            batches: AtomicU64::new(0),
            items: AtomicU64::new(0),
            discarded: AtomicU64::new(0),
            passthrough_reads: AtomicU64::new(0),
            write_failures: AtomicU64::new(0),
            on_write_error,
        });
        let (executor, clock) = match cfg.time {
            TimeMode::Virtual => (
                Executor::Virtual {
                    pending: Mutex::new(BinaryHeap::new()),
                    seq: AtomicU64::new(0),
                },
                Clock::Virtual(AtomicU64::new(0)),
            ),
            TimeMode::Real => (
                Executor::threaded(&shared, cfg.fetch_workers)?,
                Clock::Real {
                    start: Instant::now(),
                    skipped_us: AtomicU64::new(0),
                },
            ),
        };
        Ok(Self {
            prefetching: AtomicBool::new(cfg.heuristic.is_some()),
            cfg,
            shared,
            executor,
            clock,
            metastore,
            log,
            prefetchers: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &ClientConfig {
        &self.cfg
    }

    pub fn metastore(&self) -> &Arc<Metastore> {
        &self.metastore
    }

    pub fn log(&self) -> &Arc<SessionLog> {
        &self.log
    }

    pub fn cache(&self) -> Option<&DualCache> {
        self.shared.cache.as_ref()
    }

    /// Enable or disable prefetching. Has no effect without a heuristic.
    pub fn set_prefetching(&self, on: bool) {
        self.prefetching
            .store(on && self.cfg.heuristic.is_some(), Ordering::SeqCst);
    }

    pub fn prefetching(&self) -> bool {
        self.prefetching.load(Ordering::SeqCst)
    }

    pub fn now_us(&self) -> u64 {
        self.clock.now_us()
    }

    /// Client think time between operations.
    pub fn think(&self, us: u64) {
        match &self.clock {
            Clock::Virtual(t) => {
                t.fetch_add(us, Ordering::SeqCst);
            }
            Clock::Real { .. } => std::thread::sleep(Duration::from_micros(us)),
        }
    }

    /// Skip ahead without waiting, e.g. the idle gap between sessions. In-flight
    /// real-time fetches are unaffected.
    pub fn idle(&self, us: u64) {
        match &self.clock {
            Clock::Virtual(t) => t.fetch_add(us, Ordering::SeqCst),
            Clock::Real { skipped_us, .. } => skipped_us.fetch_add(us, Ordering::SeqCst),
        };
    }

    pub fn read(&self, client_id: u64, key: &DataContainer) -> ReadResult {
        let started = Instant::now();
        let start_us = self.clock.now_us();
        self.executor.drain(&self.shared, start_us);

        let Some(cache) = &self.shared.cache else {
            self.shared.passthrough_reads.fetch_add(1, Ordering::Relaxed);
            let fetched = self.shared.store.get(key);
            let latency_us = self.finish(started, fetched.latency_us);
            return ReadResult {
                value: fetched.value,
                outcome: ReadOutcome::Miss,
                latency_us,
            };
        };

        self.log
            .append(LogRecord::new(client_id, start_us / 1000, key.clone()));
        let (cached, outcome) = cache.read(key);
        if self.prefetching() {
            self.prefetch(client_id, key, start_us);
        }
        let (value, service_us) = if outcome.is_hit() {
            (cached, self.cfg.cache_service_us)
        } else {
            let fetched = self.shared.store.get(key);
            if let Some(v) = &fetched.value {
                let _ = cache.admit(key, v.clone(), Origin::Demand);
            }
            (fetched.value, self.cfg.cache_service_us + fetched.latency_us)
        };
        ReadResult {
            value,
            outcome,
            latency_us: self.finish(started, service_us),
        }
    }

    /// Write through the cache. Cached clients return immediately and apply
    /// the backstore write asynchronously; failures go to the error callback.
    /// A passthrough client writes synchronously and returns the error.
    pub fn write(&self, _client_id: u64, key: &DataContainer, value: Bytes) -> Result<u64> {
        let started = Instant::now();
        let now = self.clock.now_us();
        self.executor.drain(&self.shared, now);
        let Some(cache) = &self.shared.cache else {
            let put = self.shared.store.put(key, value);
            let latency_us = self.finish(started, put.latency_us);
            return put.value.map(|()| latency_us);
        };
        cache.write(key, value.clone());
        self.shared.inflight.lock().unwrap().remove(key);
        self.executor
            .submit(&self.shared, Job::Write(key.clone(), value), now);
        Ok(self.finish(started, self.cfg.cache_service_us))
    }

    pub fn invalidate(&self, key: &DataContainer) {
        self.shared.invalidate(key);
    }

    /// Callback that invalidates this client's copy of an updated key.
    pub fn invalidation_listener(&self) -> Arc<dyn Fn(&DataContainer) + Send + Sync> {
        let shared = Arc::clone(&self.shared);
        Arc::new(move |key| shared.invalidate(key))
    }

    pub fn subscribe_to(&self, notifier: &dyn UpdateNotifier) {
        notifier.subscribe(self.invalidation_listener());
    }

    /// Cache counters; a passthrough client reports only its accesses.
    pub fn metrics(&self) -> CacheMetrics {
        match &self.shared.cache {
            Some(cache) => cache.snapshot_metrics(),
            None => CacheMetrics {
                number_of_accesses: self.shared.passthrough_reads.load(Ordering::Relaxed),
                ..CacheMetrics::default()
            },
        }
    }

    pub fn prefetch_stats(&self) -> PrefetchStats {
        PrefetchStats {
            batches: self.shared.batches.load(Ordering::Relaxed),
            items: self.shared.items.load(Ordering::Relaxed),
            discarded: self.shared.discarded.load(Ordering::Relaxed),
        }
    }

    pub fn write_failures(&self) -> u64 {
        self.shared.write_failures.load(Ordering::Relaxed)
    }

    /// Wait for (or, under virtual time, apply) every outstanding fetch and write.
    pub fn settle(&self) {
        self.executor.settle(&self.shared);
    }

    fn finish(&self, started: Instant, service_us: u64) -> u64 {
        match &self.clock {
            Clock::Virtual(t) => {
                t.fetch_add(service_us, Ordering::SeqCst);
                service_us
            }
            Clock::Real { .. } => started.elapsed().as_micros() as u64,
        }
    }

    fn prefetch(&self, client_id: u64, key: &DataContainer, issued_at: u64) {
        let Some(heuristic) = self.cfg.heuristic else { return };
        let Some(cache) = &self.shared.cache else { return };
        let mut plan: Vec<PlannedItem> = {
            let mut prefetchers = self.prefetchers.lock().unwrap();
            prefetchers
                .entry(client_id)
                .or_insert_with(|| ClientPrefetcher::new(heuristic, self.cfg.max_contexts))
                .on_request(key, &self.metastore)
        };
        plan.retain(|p| cache.residency(&p.item).is_none());
        if plan.is_empty() {
            return;
        }
        let mut jobs = Vec::new();
        {
            let mut inflight = self.shared.inflight.lock().unwrap();
            plan.retain(|p| !inflight.contains_key(&p.item));
            for batch in batch_plan(&plan) {
                let items: Vec<_> = batch
                    .items
                    .into_iter()
                    .map(|item| {
                        let token = self.shared.next_token.fetch_add(1, Ordering::Relaxed);
                        inflight.insert(item.clone(), token);
                        (item, token)
                    })
                    .collect();
                jobs.push(items);
            }
        }
        for items in jobs {
            self.shared.batches.fetch_add(1, Ordering::Relaxed);
            self.shared
                .items
                .fetch_add(items.len() as u64, Ordering::Relaxed);
            self.executor
                .submit(&self.shared, Job::Fetch(items), issued_at);
        }
    }
}

impl Drop for CachingClient {
    fn drop(&mut self) {
        if let Executor::Threaded { tx, workers, .. } = &mut self.executor {
            tx.take();
            for w in workers.drain(..) {
                let _ = w.join();
            }
        }
    }
}

/// Result of one mining pass over logged reads.
#[derive(Debug, Clone)]
pub struct MiningOutcome {
    pub sessions: usize,
    pub minsup_used: f64,
    pub passes: usize,
    /// Patterns installed in the metastore after ranking and capping.
    pub stored: Vec<SequencePattern>,
    pub generation: u64,
}

/// Segment `records`, mine them adaptively, merge in `extra` patterns (a-priori
/// knowledge or an earlier generation) and swap the result into `metastore`.
pub fn remine(
    metastore: &Metastore,
    mut records: Vec<LogRecord>,
    gap: SessionGapConfig,
    mining: &MiningConfig,
    extra: &[SequencePattern],
    cancel: Option<&AtomicBool>,
) -> Result<MiningOutcome> {
    sort_records(&mut records);
    let sessions = segment(&records, gap)?;
    let db = SequenceDatabase::new(sessions);
    let mined = mine_adaptive_with(&db, mining, MiningControl { cancel })?;
    let merged = merge_patterns(mined.patterns, extra.to_vec());
    let stored = metastore.install(merged)?;
    Ok(MiningOutcome {
        sessions: db.len(),
        minsup_used: mined.minsup_used,
        passes: mined.passes,
        stored,
        generation: metastore.generation(),
    })
}

/// Run [`remine`] over the log suffix starting at `offset` on a background thread.
pub fn spawn_remine(
    metastore: Arc<Metastore>,
    log: Arc<SessionLog>,
    offset: usize,
    gap: SessionGapConfig,
    mining: MiningConfig,
    extra: Vec<SequencePattern>,
    cancel: Arc<AtomicBool>,
) -> Result<JoinHandle<Result<MiningOutcome>>> {
    std::thread::Builder::new()
        .name("pattern-miner".into())
        .spawn(move || {
            let (records, _) = log.snapshot_since(offset);
            remine(&metastore, records, gap, &mining, &extra, Some(&cancel))
        })
        .map_err(|e| Error::io("pattern-miner", e))
}
