//! Python bindings: containers, pattern mining, the metastore with its
//! prefetch planners, the dual cache and the two-stage experiment driver.

use std::time::Duration;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use seqcache::cache::AdmitOutcome;
use seqcache::miner;
use seqcache::prefetch::{context_on_root, plan_fetch_all, plan_fetch_top_n, plan_items};
use seqcache::workload::{self, SystemConfig, SystemMode, WorkloadConfig};
use seqcache::{
    CacheConfig, CacheMetrics, DataContainer, DualCache, Error, HeuristicKind, LatencyKind,
    LatencyModel, MetastoreConfig, MiningConfig, Origin, ReadOutcome, SequenceDatabase,
    SequencePattern, Session,
};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config { .. }
        | Error::Parse { .. }
        | Error::MalformedKey { .. }
        | Error::InvalidContainer(_)
        | Error::InvalidSession(_)
        | Error::EmptyDatabase => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn decode(key: &str) -> PyResult<DataContainer> {
    key.parse().map_err(to_py)
}

fn decode_all(keys: &[String]) -> PyResult<Vec<DataContainer>> {
    keys.iter().map(|k| decode(k)).collect()
}

fn database(sessions: Vec<Vec<String>>) -> PyResult<SequenceDatabase> {
    let sessions = sessions
        .iter()
        .enumerate()
        .map(|(id, items)| Session::untimed(id as u64, decode_all(items)?).map_err(to_py))
        .collect::<PyResult<Vec<_>>>()?;
    Ok(SequenceDatabase::new(sessions))
}

fn encoded(items: &[DataContainer]) -> Vec<String> {
    items.iter().map(|c| c.encoded().to_string()).collect()
}

/// A table/row/family/qualifier address in the backing store.
#[pyclass(name = "Container", frozen, eq, hash, skip_from_py_object)]
#[derive(Clone, PartialEq, Eq, Hash)]
struct PyContainer(DataContainer);

#[pymethods]
impl PyContainer {
    #[new]
    #[pyo3(signature = (table=None, row=None, family=None, qualifier=None))]
    fn new(
        table: Option<&str>,
        row: Option<&str>,
        family: Option<&str>,
        qualifier: Option<&str>,
    ) -> PyResult<Self> {
        DataContainer::new(table, row, family, qualifier)
            .map(Self)
            .map_err(to_py)
    }

    #[staticmethod]
    fn decode(encoded: &str) -> PyResult<Self> {
        decode(encoded).map(Self)
    }

    #[getter]
    fn encoded(&self) -> &str {
        self.0.encoded()
    }

    #[getter]
    fn table(&self) -> Option<&str> {
        self.0.table()
    }

    #[getter]
    fn row(&self) -> Option<&str> {
        self.0.row_key()
    }

    #[getter]
    fn family(&self) -> Option<&str> {
        self.0.family()
    }

    #[getter]
    fn qualifier(&self) -> Option<&str> {
        self.0.qualifier()
    }

    fn __str__(&self) -> &str {
        self.0.encoded()
    }

    fn __repr__(&self) -> String {
        format!("Container({:?})", self.0.encoded())
    }
}

/// A frequent contiguous sequence with its support.
#[pyclass(name = "Pattern", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPattern(SequencePattern);

#[pymethods]
impl PyPattern {
    #[new]
    fn new(items: Vec<String>, support_count: u64, support_fraction: f64) -> PyResult<Self> {
        Ok(Self(SequencePattern::new(
            decode_all(&items)?,
            support_count,
            support_fraction,
        )))
    }

    #[getter]
    fn items(&self) -> Vec<String> {
        encoded(&self.0.items)
    }

    #[getter]
    fn support_count(&self) -> u64 {
        self.0.support_count
    }

    #[getter]
    fn support_fraction(&self) -> f64 {
        self.0.support_fraction
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Pattern({}, count={}, fraction={})",
            self.0.encoded_items(),
            self.0.support_count,
            self.0.support_fraction
        )
    }
}

fn wrap(patterns: Vec<SequencePattern>) -> Vec<PyPattern> {
    patterns.into_iter().map(PyPattern).collect()
}

fn mining_config(min_len: usize, max_len: usize) -> MiningConfig {
    MiningConfig {
        min_len,
        max_len,
        ..MiningConfig::default()
    }
}

/// Maximal contiguous patterns with support at least `minsup`.
#[pyfunction]
#[pyo3(signature = (sessions, minsup, min_len=3, max_len=15))]
fn mine_maximal(
    sessions: Vec<Vec<String>>,
    minsup: f64,
    min_len: usize,
    max_len: usize,
) -> PyResult<Vec<PyPattern>> {
    let db = database(sessions)?;
    miner::mine_maximal(&db, minsup, &mining_config(min_len, max_len))
        .map(wrap)
        .map_err(to_py)
}

/// Lower the minimum support until enough patterns appear. Returns
/// `(patterns, minsup_used)`.
#[pyfunction]
#[pyo3(signature = (sessions, min_sup_start=0.5, min_sup_floor=0.01, min_sup_step=0.05, min_pattern_count=10, min_len=3, max_len=15, budget_ms=60000))]
#[allow(clippy::too_many_arguments)]
fn mine_adaptive(
    sessions: Vec<Vec<String>>,
    min_sup_start: f64,
    min_sup_floor: f64,
    min_sup_step: f64,
    min_pattern_count: usize,
    min_len: usize,
    max_len: usize,
    budget_ms: u64,
) -> PyResult<(Vec<PyPattern>, f64)> {
    let db = database(sessions)?;
    let cfg = MiningConfig {
        min_sup_start,
        min_sup_floor,
        min_sup_step,
        min_pattern_count,
        budget: Duration::from_millis(budget_ms),
        ..mining_config(min_len, max_len)
    };
    let r = miner::mine_adaptive(&db, &cfg).map_err(to_py)?;
    Ok((wrap(r.patterns), r.minsup_used))
}

/// `(count, fraction)` of sessions containing `pattern` contiguously.
#[pyfunction]
fn support(pattern: Vec<String>, sessions: Vec<Vec<String>>) -> PyResult<(u64, f64)> {
    let db = database(sessions)?;
    miner::support(&decode_all(&pattern)?, &db).map_err(to_py)
}

/// Pattern store with prefetch planning over its trees.
#[pyclass(name = "Metastore")]
struct PyMetastore(seqcache::Metastore);

#[pymethods]
impl PyMetastore {
    #[new]
    #[pyo3(signature = (capacity=10000, max_elements=15))]
    fn new(capacity: usize, max_elements: usize) -> PyResult<Self> {
        let cfg = MetastoreConfig {
            capacity_sequences: capacity,
            max_elements_per_sequence: max_elements,
        };
        cfg.validate().map_err(to_py)?;
        Ok(Self(seqcache::Metastore::new(cfg)))
    }

    /// Rank, cap and install `patterns`; returns the patterns kept.
    fn install(&self, patterns: Vec<PyRef<'_, PyPattern>>) -> PyResult<Vec<PyPattern>> {
        let patterns = patterns.iter().map(|p| p.0.clone()).collect();
        self.0.install(patterns).map(wrap).map_err(to_py)
    }

    #[getter]
    fn generation(&self) -> u64 {
        self.0.generation()
    }

    #[getter]
    fn pattern_count(&self) -> usize {
        self.0.snapshot().forest.pattern_count()
    }

    /// Items a heuristic would prefetch when `item` is requested. For
    /// fetch-progressive, `then` lists follow-up requests; each step's items
    /// are appended in order.
    #[pyo3(signature = (heuristic, item, n=None, then=Vec::new()))]
    fn plan(
        &self,
        heuristic: &str,
        item: &str,
        n: Option<usize>,
        then: Vec<String>,
    ) -> PyResult<Vec<String>> {
        let kind = HeuristicKind::from_name(heuristic, n).map_err(to_py)?;
        let Some(root) = self.0.lookup_root(&decode(item)?) else {
            return Ok(Vec::new());
        };
        let plan = match kind {
            HeuristicKind::FetchAll => plan_fetch_all(&root.tree),
            HeuristicKind::FetchTopN(n) => plan_fetch_top_n(&root.tree, n),
            HeuristicKind::FetchProgressively(n) => {
                let (mut ctx, mut plan) = context_on_root(&root, n);
                for next in &then {
                    match ctx.advance(&decode(next)?, root.generation) {
                        Ok(step) => plan.extend(step),
                        Err(_) => break,
                    }
                }
                plan
            }
        };
        Ok(encoded(&plan_items(&plan)))
    }
}

fn metrics_dict<'py>(py: Python<'py>, m: &CacheMetrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("accesses", m.number_of_accesses)?;
    d.set_item("cache_hits", m.cache_hits)?;
    d.set_item("prefetches", m.number_of_prefetches)?;
    d.set_item("prefetch_hits", m.prefetch_hits)?;
    d.set_item("evictions_main", m.evictions_main)?;
    d.set_item("evictions_preemptive", m.evictions_preemptive)?;
    d.set_item("hit_rate", m.hit_rate())?;
    d.set_item("precision", m.precision())?;
    Ok(d)
}

/// Main plus preemptive LRU spaces with byte budgets.
#[pyclass(name = "Cache")]
struct PyCache(DualCache);

#[pymethods]
impl PyCache {
    #[new]
    #[pyo3(signature = (main_bytes, preemptive_fraction=0.1, entry_overhead_bytes=64))]
    fn new(main_bytes: usize, preemptive_fraction: f64, entry_overhead_bytes: usize) -> PyResult<Self> {
        let cfg = CacheConfig {
            main_bytes,
            preemptive_fraction,
            entry_overhead_bytes,
        };
        cfg.validate().map_err(to_py)?;
        Ok(Self(DualCache::new(cfg)))
    }

    /// Returns `(value or None, "main" | "preemptive" | "miss")`.
    fn read<'py>(&self, py: Python<'py>, key: &str) -> PyResult<(Option<Bound<'py, PyBytes>>, &'static str)> {
        let (value, outcome) = self.0.read(&decode(key)?);
        let label = match outcome {
            ReadOutcome::MainHit => "main",
            ReadOutcome::PreemptiveHit => "preemptive",
            ReadOutcome::Miss => "miss",
        };
        Ok((value.map(|v| PyBytes::new(py, &v)), label))
    }

    /// Store a value fetched on demand or, with `prefetch=True`, by a
    /// prefetch. Returns False if a prefetched key was already resident.
    #[pyo3(signature = (key, value, prefetch=false))]
    fn admit(&self, key: &str, value: &[u8], prefetch: bool) -> PyResult<bool> {
        let origin = if prefetch { Origin::Prefetch } else { Origin::Demand };
        let outcome = self
            .0
            .admit(&decode(key)?, bytes::Bytes::copy_from_slice(value), origin)
            .map_err(to_py)?;
        Ok(outcome == AdmitOutcome::Stored)
    }

    fn invalidate(&self, key: &str) -> PyResult<()> {
        self.0.invalidate(&decode(key)?);
        Ok(())
    }

    /// `(main_bytes_used, preemptive_bytes_used)`.
    fn used_bytes(&self) -> (usize, usize) {
        self.0.used_bytes()
    }

    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        metrics_dict(py, &self.0.snapshot_metrics())
    }
}

/// Run the two-stage experiment and return its stage-2 results.
#[pyfunction]
#[pyo3(signature = (heuristic="fetch-top-n", n=None, zipf=1.0, seed=42, sessions=2000, containers=50000, pool=1000, main_bytes=4194304, min_sup_floor=0.01, min_pattern_count=10, latency="fixed:1000"))]
#[allow(clippy::too_many_arguments)]
fn run_two_stage<'py>(
    py: Python<'py>,
    heuristic: &str,
    n: Option<usize>,
    zipf: f64,
    seed: u64,
    sessions: usize,
    containers: usize,
    pool: usize,
    main_bytes: usize,
    min_sup_floor: f64,
    min_pattern_count: usize,
    latency: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let mode = match heuristic {
        "none" | "cache-only" => SystemMode::CacheOnly,
        "passthrough" => SystemMode::Passthrough,
        other => SystemMode::Prefetch(HeuristicKind::from_name(other, n).map_err(to_py)?),
    };
    let w = WorkloadConfig {
        container_count: containers,
        freq_seq_count: pool,
        session_count: sessions,
        zipf_exponent: zipf,
        seed,
        ..WorkloadConfig::default()
    };
    let sys = SystemConfig {
        mode,
        cache: CacheConfig {
            main_bytes,
            ..CacheConfig::default()
        },
        mining: MiningConfig {
            min_sup_floor,
            min_pattern_count,
            ..MiningConfig::default()
        },
        latency: LatencyModel {
            kind: latency.parse::<LatencyKind>().map_err(to_py)?,
            ..LatencyModel::default()
        },
        ..SystemConfig::default()
    };
    let r = py
        .detach(|| workload::run_two_stage(&w, &sys))
        .map_err(to_py)?;
    let d = metrics_dict(py, &r.stage2)?;
    d.set_item("mode", r.mode)?;
    d.set_item("mean_latency_us", r.latency.mean_us)?;
    d.set_item("runtime_s", r.runtime_s)?;
    d.set_item("minsup_used", r.minsup_used)?;
    d.set_item("patterns_stored", r.patterns_stored)?;
    d.set_item("recovered_fraction", r.recovered_fraction)?;
    Ok(d)
}

#[pymodule]
fn seqcache_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyContainer>()?;
    m.add_class::<PyPattern>()?;
    m.add_class::<PyMetastore>()?;
    m.add_class::<PyCache>()?;
    m.add_function(wrap_pyfunction!(mine_maximal, m)?)?;
    m.add_function(wrap_pyfunction!(mine_adaptive, m)?)?;
    m.add_function(wrap_pyfunction!(support, m)?)?;
    m.add_function(wrap_pyfunction!(run_two_stage, m)?)?;
    Ok(())
}
