//! Backing-store interface and an in-memory simulated store.
//!
//! Every operation reports the service latency it incurred. Under
//! [`TimeMode::Virtual`] the latency is only reported, so experiments run
//! fast on a logical clock; under [`TimeMode::Real`] the calling thread also
//! sleeps for it.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};
use std::time::Duration;

use bytes::Bytes;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

use crate::error::{Error, Result};
use crate::types::DataContainer;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LatencyKind {
    Fixed { us: u64 },
    Uniform { min_us: u64, max_us: u64 },
    /// Parameters of the underlying normal, in ln(µs).
    LogNormal { mu_log: f64, sigma_log: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyModel {
    pub kind: LatencyKind,
    pub batch_discount: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            kind: LatencyKind::Fixed { us: 1000 },
            batch_discount: 0.9,
        }
    }
}

impl LatencyModel {
    pub fn fixed(us: u64) -> Self {
        Self {
            kind: LatencyKind::Fixed { us },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            LatencyKind::Fixed { us } => us > 0,
            LatencyKind::Uniform { min_us, max_us } => min_us > 0 && min_us <= max_us,
            LatencyKind::LogNormal { mu_log, sigma_log } => mu_log.is_finite() && sigma_log > 0.0,
        };
        if !ok {
            return Err(Error::config("store.latency", "parameters must be positive"));
        }
        if !(0.0..=1.0).contains(&self.batch_discount) {
            return Err(Error::config("store.batch-discount", "must be in [0, 1]"));
        }
        Ok(())
    }

    /// One round-trip latency in microseconds.
    pub fn sample(&self, rng: &mut impl Rng) -> u64 {
        match self.kind {
            LatencyKind::Fixed { us } => us,
            LatencyKind::Uniform { min_us, max_us } => rng.random_range(min_us..=max_us),
            LatencyKind::LogNormal { mu_log, sigma_log } => {
                let d = LogNormal::new(mu_log, sigma_log).expect("validated parameters");
                d.sample(rng).round().max(1.0) as u64
            }
        }
    }

    /// Service time of a multi-get of `k` items with base latency `base_us`.
    pub fn batch_cost(&self, base_us: u64, k: usize) -> u64 {
        if k == 0 {
            return 0;
        }
        (base_us as f64 * (1.0 + self.batch_discount * (k - 1) as f64)).round() as u64
    }
}

impl FromStr for LatencyKind {
    type Err = Error;

    /// `fixed:1000`, `uniform:500:2000` or `lognormal:6.9:0.5`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config("store.latency", format!("cannot parse {s:?}"));
        let parts: Vec<&str> = s.split(':').collect();
        let kind = match parts.as_slice() {
            ["fixed", us] => LatencyKind::Fixed {
                us: us.parse().map_err(|_| bad())?,
            },
            ["uniform", lo, hi] => LatencyKind::Uniform {
                min_us: lo.parse().map_err(|_| bad())?,
                max_us: hi.parse().map_err(|_| bad())?,
            },
            ["lognormal", mu, sigma] => LatencyKind::LogNormal {
                mu_log: mu.parse().map_err(|_| bad())?,
                sigma_log: sigma.parse().map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        };
        Ok(kind)
    }
}

impl fmt::Display for LatencyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LatencyKind::Fixed { us } => write!(f, "fixed:{us}"),
            LatencyKind::Uniform { min_us, max_us } => write!(f, "uniform:{min_us}:{max_us}"),
            LatencyKind::LogNormal { mu_log, sigma_log } => {
                write!(f, "lognormal:{mu_log}:{sigma_log}")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeMode {
    Virtual,
    Real,
}

/// A value together with the service latency it cost.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Timed<T> {
    pub value: T,
    pub latency_us: u64,
}

pub trait Backstore: Send + Sync {
    fn get(&self, key: &DataContainer) -> Timed<Option<Bytes>>;

    /// Positionally aligned with `keys`; one amortised round trip.
    fn multi_get(&self, keys: &[DataContainer]) -> Timed<Vec<Option<Bytes>>>;

    fn put(&self, key: &DataContainer, value: Bytes) -> Timed<Result<()>>;
}

/// In-memory store with a sampled latency per round trip.
pub struct SimStore {
    data: RwLock<HashMap<DataContainer, Bytes>>,
    model: LatencyModel,
    mode: TimeMode,
    rng: Mutex<ChaCha8Rng>,
    service_us: AtomicU64,
    round_trips: AtomicU64,
}

impl SimStore {
    pub fn new(model: LatencyModel, mode: TimeMode, seed: u64) -> Self {
        Self {
            data: RwLock::new(HashMap::new()),
            model,
            mode,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
            service_us: AtomicU64::new(0),
            round_trips: AtomicU64::new(0),
        }
    }

    pub fn model(&self) -> &LatencyModel {
        &self.model
    }

    /// Total service time charged so far, in microseconds.
    pub fn total_service_us(&self) -> u64 {
        self.service_us.load(Ordering::Relaxed)
    }

    pub fn round_trips(&self) -> u64 {
        self.round_trips.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.data.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Store `count` synthetic rows of `value_bytes` random bytes each and
    /// return their keys in generation order. Values depend only on `seed`.
    pub fn populate(&self, count: usize, value_bytes: usize, seed: u64) -> Vec<DataContainer> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keys = synthetic_keys(count);
        let mut data = self.data.write().unwrap();
        data.reserve(count);
        for key in &keys {
            let mut value = vec![0u8; value_bytes];
            rng.fill_bytes(&mut value);
            data.insert(key.clone(), Bytes::from(value));
        }
        keys
    }

    fn charge(&self, k: usize) -> u64 {
        let base = self.model.sample(&mut *self.rng.lock().unwrap());
        let cost = self.model.batch_cost(base, k);
        self.service_us.fetch_add(cost, Ordering::Relaxed);
        self.round_trips.fetch_add(1, Ordering::Relaxed);
        if self.mode == TimeMode::Real {
            std::thread::sleep(Duration::from_micros(cost));
        }
        cost
    }
}

/// Keys `seqb/rowNNNNNNNN/f:v` for `0..count`.
pub fn synthetic_keys(count: usize) -> Vec<DataContainer> {
    (0..count)
        .map(|i| {
            DataContainer::cell("seqb", &format!("row{i:08}"), "f", "v")
                .expect("synthetic keys are valid")
        })
        .collect()
}

impl Backstore for SimStore {
    fn get(&self, key: &DataContainer) -> Timed<Option<Bytes>> {
        let value = self.data.read().unwrap().get(key).cloned();
        Timed {
            value,
            latency_us: self.charge(1),
        }
    }

    fn multi_get(&self, keys: &[DataContainer]) -> Timed<Vec<Option<Bytes>>> {
        let value = {
            let data = self.data.read().unwrap();
            keys.iter().map(|k| data.get(k).cloned()).collect()
        };
        Timed {
            value,
            latency_us: self.charge(keys.len().max(1)),
        }
    }

    fn put(&self, key: &DataContainer, value: Bytes) -> Timed<Result<()>> {
        self.data.write().unwrap().insert(key.clone(), value);
        Timed {
            value: Ok(()),
            latency_us: self.charge(1),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn store() -> SimStore {
        SimStore::new(LatencyModel::fixed(1000), TimeMode::Virtual, 1)
    }

    #[test]
    fn get_after_populate() {
        let s = store();
        let keys = s.populate(3, 16, 9);
        assert_eq!(keys.len(), 3);
        let got = s.get(&keys[1]);
        assert_eq!(got.value.unwrap().len(), 16);
        assert_eq!(got.latency_us, 1000);
    }

    #[test]
    fn absent_key_still_costs() {
        let s = store();
        let got = s.get(&DataContainer::row("t", "nope").unwrap());
        assert_eq!(got, Timed { value: None, latency_us: 1000 });
    }

    #[test]
    fn fixed_latency_accumulates() {
        let s = store();
        let k = DataContainer::row("t", "a").unwrap();
        for _ in 0..100 {
            s.get(&k);
        }
        assert_eq!(s.total_service_us(), 100_000);
    }

    #[test]
    fn batch_cost_formula() {
        let m = LatencyModel::fixed(1000);
        assert_eq!(m.batch_cost(1000, 1), 1000);
        assert_eq!(m.batch_cost(1000, 10), 9100);
        let s = store();
        let keys = s.populate(10, 4, 1);
        let got = s.multi_get(&keys);
        assert_eq!(got.latency_us, 9100);
        assert_eq!(s.multi_get(&keys[..1]).latency_us, s.get(&keys[0]).latency_us);
    }

    #[test]
    fn multi_get_is_aligned() {
        let s = store();
        let keys = s.populate(2, 4, 1);
        let absent = DataContainer::row("t", "x").unwrap();
        let got = s.multi_get(&[keys[0].clone(), absent.clone(), keys[1].clone()]).value;
        assert!(got[0].is_some() && got[1].is_none() && got[2].is_some());
        let single: Vec<_> = [keys[0].clone(), absent, keys[1].clone()]
            .iter()
            .map(|k| s.get(k).value)
            .collect();
        assert_eq!(got, single);
    }

    #[test]
    fn last_write_wins() {
        let s = store();
        let k = DataContainer::row("t", "a").unwrap();
        s.put(&k, Bytes::from_static(b"1")).value.unwrap();
        s.put(&k, Bytes::from_static(b"2")).value.unwrap();
        assert_eq!(s.get(&k).value.unwrap(), Bytes::from_static(b"2"));
    }

    #[test]
    fn concurrent_puts_to_distinct_keys() {
        let s = Arc::new(store());
        let handles: Vec<_> = (0..8)
            .map(|t| {
                let s = Arc::clone(&s);
                std::thread::spawn(move || {
                    for i in 0..50 {
                        let k = DataContainer::row("t", &format!("{t}-{i}")).unwrap();
                        s.put(&k, Bytes::from(vec![t as u8])).value.unwrap();
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(s.len(), 400);
        let k = DataContainer::row("t", "3-49").unwrap();
        assert_eq!(s.get(&k).value.unwrap(), Bytes::from(vec![3u8]));
    }

    #[test]
    fn populate_is_deterministic() {
        let (a, b) = (store(), store());
        let ka = a.populate(50, 32, 77);
        let kb = b.populate(50, 32, 77);
        assert_eq!(ka, kb);
        for k in &ka {
            assert_eq!(a.get(k).value, b.get(k).value);
        }
        let c = store();
        c.populate(50, 32, 78);
        assert_ne!(a.get(&ka[0]).value, c.get(&ka[0]).value);
        assert_eq!(store().populate(1, 1, 0).len(), 1);
    }

    #[test]
    fn seeded_latencies_repeat() {
        let model = LatencyModel {
            kind: LatencyKind::LogNormal { mu_log: 6.9, sigma_log: 0.5 },
            batch_discount: 0.9,
        };
        let k = DataContainer::row("t", "a").unwrap();
        let run = |seed| {
            let s = SimStore::new(model, TimeMode::Virtual, seed);
            (0..20).map(|_| s.get(&k).latency_us).collect::<Vec<_>>()
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }

    #[test]
    fn uniform_latency_in_range() {
        let model = LatencyModel {
            kind: LatencyKind::Uniform { min_us: 500, max_us: 2000 },
            batch_discount: 0.9,
        };
        let s = SimStore::new(model, TimeMode::Virtual, 3);
        let k = DataContainer::row("t", "a").unwrap();
        for _ in 0..200 {
            let l = s.get(&k).latency_us;
            assert!((500..=2000).contains(&l));
        }
    }

    #[test]
    fn parses_latency_strings() {
        assert_eq!("fixed:1000".parse::<LatencyKind>().unwrap(), LatencyKind::Fixed { us: 1000 });
        assert_eq!(
            "uniform:500:2000".parse::<LatencyKind>().unwrap(),
            LatencyKind::Uniform { min_us: 500, max_us: 2000 }
        );
        assert_eq!(
            "lognormal:6.9:0.5".parse::<LatencyKind>().unwrap(),
            LatencyKind::LogNormal { mu_log: 6.9, sigma_log: 0.5 }
        );
        for bad in ["fixed", "fixed:x", "gauss:1:2", "uniform:1"] {
            assert!(bad.parse::<LatencyKind>().is_err(), "{bad}");
        }
        let m = LatencyModel { kind: LatencyKind::Fixed { us: 0 }, batch_discount: 0.9 };
        assert!(m.validate().is_err());
    }
}
