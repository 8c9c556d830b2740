//! Synthetic sequence workload and the experiment drivers built on it.
//!
//! A pool of "frequent sequences" is drawn from the populated keys. Each
//! session picks one pool sequence with zipfian bias over pool rank and reads
//! its items in order, occasionally writing an item back right after reading
//! it. [`run_two_stage`] observes a first batch of sessions, mines the log
//! and then measures a second batch with prefetching on. [`run_drift`] cycles
//! through item-disjoint pools and re-mines at fixed operation intervals.

use std::sync::Arc;

use bytes::Bytes;
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};

use crate::backstore::{LatencyModel, SimStore, TimeMode};
use crate::cache::{CacheConfig, CacheMetrics};
use crate::client::{remine, CachingClient, ClientConfig, PrefetchStats};
use crate::error::{Error, Result};
use crate::metastore::{Metastore, MetastoreConfig};
use crate::miner::MiningConfig;
use crate::prefetch::{ClientPrefetcher, HeuristicKind};
use crate::session_log::{SessionGapConfig, SessionLog};
use crate::types::{DataContainer, SequencePattern, Session};

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadConfig {
    pub container_count: usize,
    pub value_bytes: usize,
    pub freq_seq_count: usize,
    pub seq_min_len: usize,
    pub seq_max_len: usize,
    pub zipf_exponent: f64,
    pub session_count: usize,
    pub read_fraction: f64,
    pub seed: u64,
    /// Stage-1 sessions as a fraction of `session_count`.
    pub sequence_factor: f64,
    pub drift_pattern_sets: usize,
    pub remine_interval_fraction: f64,
    /// Think time between consecutive operations of a session, in µs.
    pub step_us: u64,
    /// Concurrent client streams.
    pub streams: usize,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        Self {
            container_count: 50_000,
            value_bytes: 1000,
            freq_seq_count: 1000,
            seq_min_len: 3,
            seq_max_len: 10,
            zipf_exponent: 1.0,
            session_count: 2000,
            read_fraction: 0.95,
            seed: 42,
            sequence_factor: 1.0,
            drift_pattern_sets: 1,
            remine_interval_fraction: 0.2,
            step_us: 1000,
            streams: 1,
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| Err(Error::config(format!("workload.{key}"), reason));
        if self.container_count == 0 {
            return bad("container-count", "must be at least 1");
        }
        if self.value_bytes == 0 {
            return bad("value-bytes", "must be at least 1");
        }
        if self.seq_min_len < 3 || self.seq_min_len > self.seq_max_len {
            return bad("seq-min-len", "need 3 <= seq-min-len <= seq-max-len");
        }
        if !(self.zipf_exponent >= 0.0 && self.zipf_exponent.is_finite()) {
            return Err(Error::config("zipf", "must be a finite value >= 0"));
        }
        if !(0.0..=1.0).contains(&self.read_fraction) {
            return bad("read-fraction", "must be in [0, 1]");
        }
        if !(self.sequence_factor > 0.0 && self.sequence_factor.is_finite()) {
            return bad("sequence-factor", "must be > 0");
        }
        if !(self.remine_interval_fraction > 0.0 && self.remine_interval_fraction <= 1.0) {
            return bad("remine-interval-fraction", "must be in (0, 1]");
        }
        if self.session_count == 0 {
            return bad("session-count", "must be at least 1");
        }
        if self.streams == 0 {
            return bad("streams", "must be at least 1");
        }
        Ok(())
    }

    pub fn stage1_sessions(&self) -> usize {
        (self.session_count as f64 * self.sequence_factor).round() as usize
    }
}

/// Derive an independent seed for a named component from the root seed.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    // FNV-1a over the label, then a splitmix64 finaliser.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = root ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn seeded_rng(root: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, label))
}

/// Analytic probability of 1-based `rank` among `n` under exponent `s`.
pub fn zipf_probability(rank: usize, n: usize, s: f64) -> f64 {
    let norm: f64 = (1..=n).map(|r| (r as f64).powf(-s)).sum();
    (rank as f64).powf(-s) / norm
}

/// Zipfian choice of a 0-based pool index.
#[derive(Debug, Clone, Copy)]
pub struct RankSampler {
    dist: Zipf<f64>,
}

impl RankSampler {
    pub fn new(n: usize, s: f64) -> Result<Self> {
        let dist = Zipf::new(n.max(1) as f64, s)
            .map_err(|e| Error::config("zipf", e.to_string()))?;
        Ok(Self { dist })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        self.dist.sample(rng) as usize - 1
    }
}

/// `count` sequences with lengths uniform in the configured range, items
/// distinct within each sequence.
pub fn generate_sequence_pool(
    cfg: &WorkloadConfig,
    universe: &[DataContainer],
    rng: &mut impl Rng,
) -> Result<Vec<Vec<DataContainer>>> {
    if cfg.freq_seq_count == 0 {
        return Ok(Vec::new());
    }
    if universe.len() < cfg.seq_max_len {
        return Err(Error::PoolTooLargeForUniverse {
            requested: cfg.seq_max_len,
            available: universe.len(),
        });
    }
    Ok((0..cfg.freq_seq_count)
        .map(|_| {
            let len = rng.random_range(cfg.seq_min_len..=cfg.seq_max_len);
            index::sample(rng, universe.len(), len)
                .into_iter()
                .map(|i| universe[i].clone())
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Op {
    Read(DataContainer),
    Write(DataContainer, Bytes),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedSession {
    /// 0-based pool rank, or `None` for a random session over an empty pool.
    pub rank: Option<usize>,
    pub ops: Vec<Op>,
}

impl GeneratedSession {
    pub fn reads(&self) -> impl Iterator<Item = &DataContainer> {
        self.ops.iter().filter_map(|op| match op {
            Op::Read(k) => Some(k),
            Op::Write(..) => None,
        })
    }

    /// The read sequence with timestamps `start_ms, start_ms + step_ms, ...`.
    pub fn session(&self, id: u64, start_ms: u64, step_ms: u64) -> Result<Session> {
        let items: Vec<_> = self.reads().cloned().collect();
        let stamps = (0..items.len() as u64).map(|i| start_ms + i * step_ms).collect();
        Session::new(id, items, stamps)
    }
}

pub fn next_session(
    cfg: &WorkloadConfig,
    pool: &[Vec<DataContainer>],
    ranks: &RankSampler,
    universe: &[DataContainer],
    rng: &mut impl Rng,
) -> GeneratedSession {
    let (rank, items) = if pool.is_empty() {
        let len = rng.random_range(cfg.seq_min_len..=cfg.seq_max_len);
        let items = (0..len)
            .map(|_| universe[rng.random_range(0..universe.len())].clone())
            .collect();
        (None, items)
    } else {
        let r = ranks.sample(rng).min(pool.len() - 1);
        (Some(r), pool[r].clone())
    };
    let mut ops = Vec::with_capacity(items.len() + 1);
    for item in items {
        let write = rng.random::<f64>() >= cfg.read_fraction;
        ops.push(Op::Read(item.clone()));
        if write {
            let fill: u8 = rng.random();
            ops.push(Op::Write(item, Bytes::from(vec![fill; cfg.value_bytes])));
        }
    }
    GeneratedSession { rank, ops }
}

/// Fraction of the top-decile pool sequences (by zipf mass) that are
/// contiguously contained in some stored pattern.
pub fn recoverability(pool: &[Vec<DataContainer>], s: f64, stored: &[SequencePattern]) -> f64 {
    if pool.is_empty() {
        return 1.0;
    }
    let mut mass = 0.0;
    let mut top = 0;
    while top < pool.len() && (top == 0 || mass < 0.1) {
        mass += zipf_probability(top + 1, pool.len(), s);
        top += 1;
    }
    let found = pool[..top]
        .iter()
        .filter(|seq| {
            stored.iter().any(|p| {
                p.items.len() >= seq.len() && p.items.windows(seq.len()).any(|w| w == &seq[..])
            })
        })
        .count();
    found as f64 / top as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SystemMode {
    /// No cache, synchronous writes.
    Passthrough,
    /// Cache without prefetching.
    CacheOnly,
    Prefetch(HeuristicKind),
}

impl SystemMode {
    pub fn label(&self) -> String {
        match self {
            SystemMode::Passthrough => "passthrough".into(),
            SystemMode::CacheOnly => "cache-only".into(),
            SystemMode::Prefetch(h) => h.to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SystemConfig {
    pub mode: SystemMode,
    pub cache: CacheConfig,
    pub mining: MiningConfig,
    pub metastore: MetastoreConfig,
    pub latency: LatencyModel,
    pub time: TimeMode,
    pub gap: SessionGapConfig,
    pub cache_service_us: u64,
    pub max_contexts: usize,
    pub apriori: Vec<SequencePattern>,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            mode: SystemMode::Prefetch(HeuristicKind::FetchTopN(HeuristicKind::DEFAULT_TOP_N)),
            cache: CacheConfig::default(),
            mining: MiningConfig::default(),
            metastore: MetastoreConfig::default(),
            latency: LatencyModel::default(),
            time: TimeMode::Virtual,
            gap: SessionGapConfig::default(),
            cache_service_us: 1,
            max_contexts: ClientPrefetcher::DEFAULT_MAX_CONTEXTS,
            apriori: Vec::new(),
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        self.cache.validate()?;
        self.mining.validate()?;
        self.metastore.validate()?;
        self.latency.validate()?;
        if let SystemMode::Prefetch(h) = self.mode {
            h.validate()?;
        }
        Ok(())
    }

    fn client_config(&self) -> ClientConfig {
        let heuristic = match self.mode {
            SystemMode::Prefetch(h) => Some(h),
            _ => None,
        };
        ClientConfig {
            cache: (self.mode != SystemMode::Passthrough).then_some(self.cache),
            heuristic,
            max_contexts: self.max_contexts,
            cache_service_us: self.cache_service_us,
            time: self.time,
            ..ClientConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LatencySummary {
    pub count: usize,
    pub mean_us: f64,
    pub median_us: f64,
    pub p5_us: f64,
    pub p95_us: f64,
}

impl LatencySummary {
    /// Nearest-rank percentiles.
    pub fn from_samples(samples: &[u64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut sorted = samples.to_vec();
        sorted.sort_unstable();
        let n = sorted.len();
        let pct = |p: f64| {
            let rank = ((p / 100.0) * n as f64).ceil() as usize;
            sorted[rank.clamp(1, n) - 1] as f64
        };
        Self {
            count: n,
            mean_us: sorted.iter().map(|&x| x as f64).sum::<f64>() / n as f64,
            median_us: pct(50.0),
            p5_us: pct(5.0),
            p95_us: pct(95.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub mode: String,
    pub zipf_exponent: f64,
    pub sequence_factor: f64,
    pub seed: u64,
    pub stage1: CacheMetrics,
    pub stage2: CacheMetrics,
    /// Stage-2 read latencies.
    pub latency: LatencySummary,
    pub throughput_ops_s: f64,
    /// Sum of stage-2 foreground operation latencies.
    pub runtime_s: f64,
    pub minsup_used: Option<f64>,
    pub patterns_stored: usize,
    pub sessions: usize,
    pub operations: u64,
    pub prefetch: PrefetchStats,
    pub patterns: Vec<SequencePattern>,
    /// Recoverability of the pool from the stage-1 patterns.
    pub recovered_fraction: Option<f64>,
}

#[derive(Debug, Default)]
struct StageTrace {
    read_latencies: Vec<u64>,
    operations: u64,
    service_us: u64,
}

impl StageTrace {
    fn merge(&mut self, other: StageTrace) {
        self.read_latencies.extend(other.read_latencies);
        self.operations += other.operations;
        self.service_us += other.service_us;
    }
}

struct Environment {
    keys: Vec<DataContainer>,
    client: CachingClient,
}

fn build_environment(w: &WorkloadConfig, sys: &SystemConfig, log: Arc<SessionLog>) -> Result<Environment> {
    let store = Arc::new(SimStore::new(sys.latency, sys.time, derive_seed(w.seed, "store-latency")));
    let keys = store.populate(w.container_count, w.value_bytes, derive_seed(w.seed, "store-values"));
    let metastore = Arc::new(Metastore::new(sys.metastore));
    let client = CachingClient::new(sys.client_config(), store, metastore, log, None)?;
    Ok(Environment { keys, client })
}

fn run_session(client: &CachingClient, stream: u64, s: &GeneratedSession, w: &WorkloadConfig, gap: SessionGapConfig, trace: &mut StageTrace) -> Result<()> {
    for (i, op) in s.ops.iter().enumerate() {
        if i > 0 {
            client.think(w.step_us);
        }
        let latency = match op {
            Op::Read(key) => {
                let r = client.read(stream, key);
                trace.read_latencies.push(r.latency_us);
                r.latency_us
            }
            Op::Write(key, value) => client.write(stream, key, value.clone())?,
        };
        trace.operations += 1;
        trace.service_us += latency;
    }
    // Strictly more than the gap, so the next session starts afresh.
    client.idle(gap.gap_ms * 1000 + 1000);
    Ok(())
}

/// Session sources, one seeded generator per client stream.
struct Streams {
    rngs: Vec<ChaCha8Rng>,
    next: usize,
}

impl Streams {
    fn new(w: &WorkloadConfig, label: &str) -> Self {
        Self {
            rngs: (0..w.streams)
                .map(|i| seeded_rng(w.seed, &format!("{label}/stream-{i}")))
                .collect(),
            next: 0,
        }
    }

    /// The next `count` sessions, tagged with their stream, in round-robin order.
    fn take(
        &mut self,
        count: usize,
        w: &WorkloadConfig,
        pool: &[Vec<DataContainer>],
        ranks: &RankSampler,
        universe: &[DataContainer],
    ) -> Vec<(u64, GeneratedSession)> {
        (0..count)
            .map(|_| {
                let s = self.next % self.rngs.len();
                self.next += 1;
                (s as u64, next_session(w, pool, ranks, universe, &mut self.rngs[s]))
            })
            .collect()
    }
}

fn drive(
    client: &CachingClient,
    sessions: &[(u64, GeneratedSession)],
    w: &WorkloadConfig,
    sys: &SystemConfig,
) -> Result<StageTrace> {
    let mut trace = StageTrace::default();
    if sys.time == TimeMode::Virtual || w.streams == 1 {
        for (stream, s) in sessions {
            run_session(client, *stream, s, w, sys.gap, &mut trace)?;
        }
        return Ok(trace);
    }
    let results: Vec<Result<StageTrace>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..w.streams as u64)
            .map(|stream| {
                scope.spawn(move || {
                    let mut t = StageTrace::default();
                    for (_, s) in sessions.iter().filter(|(st, _)| *st == stream) {
                        run_session(client, stream, s, w, sys.gap, &mut t)?;
                    }
                    Ok(t)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("stream thread panicked")).collect()
    });
    for r in results {
        trace.merge(r?);
    }
    Ok(trace)
}

/// Observe, mine, then measure with prefetching.
pub fn run_two_stage(w: &WorkloadConfig, sys: &SystemConfig) -> Result<RunReport> {
    w.validate()?;
    sys.validate()?;
    let env = build_environment(w, sys, Arc::new(SessionLog::in_memory()))?;
    run_two_stage_in(w, sys, env)
}

/// As [`run_two_stage`], also writing every logged read to `log_path`.
pub fn run_two_stage_logged(w: &WorkloadConfig, sys: &SystemConfig, log_path: &std::path::Path) -> Result<RunReport> {
    w.validate()?;
    sys.validate()?;
    let log = Arc::new(SessionLog::with_file(log_path, None, None)?);
    let env = build_environment(w, sys, Arc::clone(&log))?;
    let report = run_two_stage_in(w, sys, env);
    log.flush();
    report
}

fn run_two_stage_in(w: &WorkloadConfig, sys: &SystemConfig, env: Environment) -> Result<RunReport> {
    let Environment { keys, client } = env;
    let pool = generate_sequence_pool(w, &keys, &mut seeded_rng(w.seed, "pool"))?;
    let ranks = RankSampler::new(pool.len(), w.zipf_exponent)?;
    let mut streams = Streams::new(w, "sessions");

    // Both stages run the same session stream: stage 1 observes its first
    // `stage1_sessions` sessions, stage 2 replays its first `session_count`.
    let stream = streams.take(w.stage1_sessions().max(w.session_count), w, &pool, &ranks, &keys);
    client.set_prefetching(false);
    drive(&client, &stream[..w.stage1_sessions()], w, sys)?;
    let stage1_metrics = client.metrics();

    let mut minsup_used = None;
    let mut patterns = Vec::new();
    let mut recovered_fraction = None;
    if matches!(sys.mode, SystemMode::Prefetch(_)) && !client.log().is_empty() {
        let outcome = remine(
            client.metastore(),
            client.log().snapshot(),
            sys.gap,
            &sys.mining,
            &sys.apriori,
            None,
        )?;
        minsup_used = Some(outcome.minsup_used);
        recovered_fraction = Some(recoverability(&pool, w.zipf_exponent, &outcome.stored));
        patterns = outcome.stored;
    }

    client.set_prefetching(true);
    let before = client.metrics();
    let trace = drive(&client, &stream[..w.session_count], w, sys)?;
    let stage2_metrics = client.metrics().since(&before);
    let prefetch = client.prefetch_stats();
    client.settle();

    let runtime_s = trace.service_us as f64 / 1e6;
    Ok(RunReport {
        mode: sys.mode.label(),
        zipf_exponent: w.zipf_exponent,
        sequence_factor: w.sequence_factor,
        seed: w.seed,
        stage1: stage1_metrics,
        stage2: stage2_metrics,
        latency: LatencySummary::from_samples(&trace.read_latencies),
        throughput_ops_s: if runtime_s > 0.0 { trace.operations as f64 / runtime_s } else { 0.0 },
        runtime_s,
        minsup_used,
        patterns_stored: patterns.len(),
        sessions: w.session_count,
        operations: trace.operations,
        prefetch,
        patterns,
        recovered_fraction,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftWindow {
    pub set: usize,
    pub window: usize,
    /// Counters accumulated during this window only.
    pub metrics: CacheMetrics,
    pub local_hit_rate: f64,
    pub global_hit_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftSet {
    pub label: String,
    /// Counters accumulated while this set was active.
    pub metrics: CacheMetrics,
    pub local_hit_rate: f64,
    pub global_hit_rate: f64,
    /// Hit rate of the last re-mining window of this set.
    pub final_window_hit_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftRun {
    pub mode: String,
    pub windows: Vec<DriftWindow>,
    pub sets: Vec<DriftSet>,
    pub remines: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftReport {
    pub prefetch: DriftRun,
    pub cache_only: DriftRun,
}

/// `A`, `B`, ..., `Z`, `AA`, ...
pub fn set_label(i: usize) -> String {
    let mut i = i;
    let mut out = Vec::new();
    loop {
        out.push(b'A' + (i % 26) as u8);
        if i < 26 {
            break;
        }
        i = i / 26 - 1;
    }
    out.reverse();
    String::from_utf8(out).expect("ascii")
}

/// Item-disjoint pools, one per pattern set.
pub fn drift_pools(w: &WorkloadConfig, keys: &[DataContainer]) -> Result<Vec<Vec<Vec<DataContainer>>>> {
    let mut rng = seeded_rng(w.seed, "drift-pools");
    let mut shuffled = keys.to_vec();
    shuffled.shuffle(&mut rng);
    let block = shuffled.len() / w.drift_pattern_sets;
    shuffled
        .chunks_exact(block.max(1))
        .take(w.drift_pattern_sets)
        .map(|universe| generate_sequence_pool(w, universe, &mut rng))
        .collect()
}

/// Run consecutive item-disjoint pattern sets with periodic re-mining, once
/// with the configured heuristic and once as a cache-only control.
pub fn run_drift(w: &WorkloadConfig, sys: &SystemConfig) -> Result<DriftReport> {
    w.validate()?;
    sys.validate()?;
    if w.drift_pattern_sets < 2 {
        return Err(Error::config("workload.drift-pattern-sets", "drift needs at least 2 sets"));
    }
    if !matches!(sys.mode, SystemMode::Prefetch(_)) {
        return Err(Error::config("heuristic", "drift compares a heuristic against cache-only"));
    }
    let control = SystemConfig {
        mode: SystemMode::CacheOnly,
        ..sys.clone()
    };
    Ok(DriftReport {
        prefetch: drift_one(w, sys)?,
        cache_only: drift_one(w, &control)?,
    })
}

fn drift_one(w: &WorkloadConfig, sys: &SystemConfig) -> Result<DriftRun> {
    let env = build_environment(w, sys, Arc::new(SessionLog::in_memory()))?;
    let Environment { keys, client } = env;
    let pools = drift_pools(w, &keys)?;
    let mut streams = Streams::new(w, "drift-sessions");
    let mining = matches!(sys.mode, SystemMode::Prefetch(_));

    let start = client.metrics();
    let mut windows = Vec::new();
    let mut sets = Vec::new();
    let mut log_offset = 0;
    let mut remines = 0;
    let mut carried: Vec<SequencePattern> = Vec::new();
    for (set, pool) in pools.iter().enumerate() {
        let ranks = RankSampler::new(pool.len(), w.zipf_exponent)?;
        let sessions = streams.take(w.session_count, w, pool, &ranks, &keys);
        let total_ops: usize = sessions.iter().map(|(_, s)| s.ops.len()).sum();
        let interval = ((total_ops as f64 * w.remine_interval_fraction).ceil() as usize).max(1);

        let set_start = client.metrics();
        let mut window_start = set_start;
        let mut ops_done = 0;
        let mut next_boundary = interval;
        let mut last_window_rate = 0.0;
        for (i, session) in sessions.iter().enumerate() {
            drive(&client, std::slice::from_ref(session), w, sys)?;
            ops_done += session.1.ops.len();
            if ops_done >= next_boundary || i + 1 == sessions.len() {
                while next_boundary <= ops_done {
                    next_boundary += interval;
                }
                let now = client.metrics();
                let local = now.since(&window_start);
                last_window_rate = local.hit_rate();
                windows.push(DriftWindow {
                    set,
                    window: windows.iter().filter(|x: &&DriftWindow| x.set == set).count(),
                    metrics: local,
                    local_hit_rate: last_window_rate,
                    global_hit_rate: now.since(&start).hit_rate(),
                });
                window_start = now;
                if mining {
                    let (records, offset) = client.log().snapshot_since(log_offset);
                    log_offset = offset;
                    if !records.is_empty() {
                        // The previous generation is carried forward so knowledge
                        // accumulates; ranking and the capacity bound age it out.
                        let extra: Vec<_> = sys.apriori.iter().chain(&carried).cloned().collect();
                        carried = remine(client.metastore(), records, sys.gap, &sys.mining, &extra, None)?.stored;
                        remines += 1;
                    }
                }
            }
        }
        let now = client.metrics();
        sets.push(DriftSet {
            label: set_label(set),
            metrics: now.since(&set_start),
            local_hit_rate: now.since(&set_start).hit_rate(),
            global_hit_rate: now.since(&start).hit_rate(),
            final_window_hit_rate: last_window_rate,
        });
    }
    client.settle();
    Ok(DriftRun {
        mode: sys.mode.label(),
        windows,
        sets,
        remines,
    })
}
