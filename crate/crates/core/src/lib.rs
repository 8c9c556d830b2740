//! Predictive caching for a key-value backing store.
//!
//! Client reads are logged, segmented into sessions and mined for frequent
//! contiguous access sequences. The mined sequences are kept as probabilistic
//! prefix trees; when a request matches a tree root the client prefetches
//! likely successors into a small preemptive cache space.

pub mod backstore;
pub mod cache;
pub mod cli;
pub mod client;
pub mod error;
pub mod metastore;
pub mod miner;
pub mod prefetch;
pub mod session_log;
pub mod types;
pub mod workload;

pub use backstore::{Backstore, LatencyKind, LatencyModel, SimStore, TimeMode, Timed};
pub use cache::{CacheConfig, CacheMetrics, DualCache, Origin, ReadOutcome, Space};
pub use client::{CachingClient, ClientConfig, ReadResult};
pub use error::{Error, Result};
pub use metastore::{Metastore, MetastoreConfig, PatternForest, PatternTree};
pub use miner::{MiningConfig, SequenceDatabase};
pub use prefetch::{ClientPrefetcher, HeuristicKind, PlannedItem};
pub use session_log::{LogRecord, SessionGapConfig, SessionLog};
pub use types::{DataContainer, SequencePattern, Session};
