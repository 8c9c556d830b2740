use std::collections::VecDeque;
use std::sync::Arc;

use bytes::Bytes;
use proptest::collection::vec;
use proptest::prelude::*;

use seqcache::metastore::{build_trees, merge_patterns};
use seqcache::miner::{mine_maximal, mine_maximal_bruteforce, occurs, support};
use seqcache::types::decode_container;
use seqcache::*;

fn c(i: u8) -> DataContainer {
    DataContainer::row("t", &format!("r{i}")).unwrap()
}

fn token() -> impl Strategy<Value = Option<String>> {
    proptest::option::of("[a-zA-Z0-9/:% _.\\-é]{1,8}")
}

fn database(alphabet: u8) -> impl Strategy<Value = SequenceDatabase> {
    vec(vec(0..alphabet, 1..=12), 1..=30).prop_map(|rows| {
        SequenceDatabase::new(
            rows.into_iter()
                .enumerate()
                .map(|(id, r)| Session::untimed(id as u64, r.into_iter().map(c).collect()).unwrap())
                .collect(),
        )
    })
}

fn mining() -> MiningConfig {
    MiningConfig {
        min_len: 2,
        max_len: 12,
        ..MiningConfig::default()
    }
}

fn contained(short: &[DataContainer], long: &[DataContainer]) -> bool {
    long.windows(short.len()).any(|w| w == short)
}

/// Byte-budget LRU kept as a recency list, most recent last.
struct ReferenceLru {
    entries: VecDeque<(u8, usize)>,
    capacity: usize,
}

impl ReferenceLru {
    fn access(&mut self, key: u8, size: usize) -> bool {
        if let Some(pos) = self.entries.iter().position(|(k, _)| *k == key) {
            let e = self.entries.remove(pos).unwrap();
            self.entries.push_back(e);
            return true;
        }
        self.entries.push_back((key, size));
        while self.entries.iter().map(|(_, s)| s).sum::<usize>() > self.capacity {
            self.entries.pop_front();
        }
        false
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn container_encoding_round_trips(t in token(), r in token(), f in token(), q in token()) {
        prop_assume!(t.is_some() || r.is_some() || f.is_some() || q.is_some());
        let original = DataContainer::new(t.as_deref(), r.as_deref(), f.as_deref(), q.as_deref()).unwrap();
        let decoded = decode_container(original.encoded()).unwrap();
        prop_assert_eq!(decoded.table(), original.table());
        prop_assert_eq!(decoded.row_key(), original.row_key());
        prop_assert_eq!(decoded.family(), original.family());
        prop_assert_eq!(decoded.qualifier(), original.qualifier());
        prop_assert_eq!(decoded, original);
    }

    #[test]
    fn miner_matches_brute_force(db in database(6), minsup in prop_oneof![Just(0.1), Just(0.2), Just(0.5)]) {
        let fast = mine_maximal(&db, minsup, &mining()).unwrap();
        let slow = mine_maximal_bruteforce(&db, minsup, &mining()).unwrap();
        prop_assert_eq!(fast, slow);
    }

    #[test]
    fn mined_patterns_are_frequent_maximal_and_closed_downward(db in database(5), minsup in 0.05f64..0.6) {
        let patterns = mine_maximal(&db, minsup, &mining()).unwrap();
        let threshold = (minsup * db.len() as f64).ceil() as u64;
        for p in &patterns {
            let (count, fraction) = support(&p.items, &db).unwrap();
            prop_assert_eq!(count, p.support_count);
            prop_assert!((fraction - p.support_fraction).abs() < 1e-12);
            prop_assert!(count >= threshold.max(1));
            for len in 2..p.items.len() {
                for w in p.items.windows(len) {
                    prop_assert!(support(w, &db).unwrap().0 >= count);
                }
            }
            for other in &patterns {
                if other.items.len() > p.items.len() {
                    prop_assert!(!contained(&p.items, &other.items));
                }
            }
        }
    }

    #[test]
    fn lowering_minsup_never_loses_coverage(db in database(5), hi in 0.2f64..0.6, delta in 0.05f64..0.2) {
        let high = mine_maximal(&db, hi, &mining()).unwrap();
        let low = mine_maximal(&db, hi - delta, &mining()).unwrap();
        for p in &high {
            prop_assert!(low.iter().any(|q| contained(&p.items, &q.items)));
        }
    }

    #[test]
    fn support_counts_sessions_not_occurrences(db in database(4), pattern in vec(0u8..4, 2..4)) {
        let items: Vec<_> = pattern.into_iter().map(c).collect();
        let expected = db.sessions().iter().filter(|s| occurs(&items, s)).count() as u64;
        prop_assert_eq!(support(&items, &db).unwrap().0, expected);
    }

    #[test]
    fn tree_weights_and_probabilities(words in vec((vec(0u8..4, 3), 1u64..500), 1..25)) {
        let patterns: Vec<SequencePattern> = words
            .iter()
            .map(|(w, n)| {
                let mut items = vec![c(9)];
                items.extend(w.iter().copied().map(c));
                SequencePattern::new(items, *n, 0.0)
            })
            .collect();
        let merged = merge_patterns(patterns, Vec::new());
        let forest = build_trees(&merged).unwrap();
        let tree = forest.get(&c(9)).unwrap();
        let total: u64 = merged.iter().map(|p| p.support_count).sum();
        prop_assert_eq!(tree.node(0).weight, total);
        for id in 0..tree.len() {
            let kids = tree.children(id);
            if kids.is_empty() {
                continue;
            }
            prop_assert_eq!(kids.iter().map(|&k| tree.node(k).weight).sum::<u64>(), tree.node(id).weight);
            let sum: f64 = kids.iter().map(|&k| tree.edge_probability(k)).sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            for &k in kids {
                let cumulative = tree.cumulative_probability(k);
                prop_assert!(cumulative <= tree.cumulative_probability(id) + 1e-12);
                prop_assert!((cumulative - tree.node(k).weight as f64 / total as f64).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn merged_patterns_form_an_antichain(a in vec(vec(0u8..4, 2..6), 0..10), b in vec(vec(0u8..4, 2..6), 0..10)) {
        let to_patterns = |v: &Vec<Vec<u8>>| -> Vec<SequencePattern> {
            v.iter().map(|w| SequencePattern::new(w.iter().copied().map(c).collect(), 1, 0.1)).collect()
        };
        let merged = merge_patterns(to_patterns(&a), to_patterns(&b));
        for (i, p) in merged.iter().enumerate() {
            for (j, q) in merged.iter().enumerate() {
                if i != j {
                    prop_assert!(p.items != q.items);
                    prop_assert!(!(q.items.len() > p.items.len() && contained(&p.items, &q.items)));
                }
            }
        }
        prop_assert!(build_trees(&merged).is_ok());
    }

    #[test]
    fn cache_main_space_is_a_byte_lru(ops in vec((0u8..20, 1usize..300), 1..200), capacity in 200usize..2000) {
        let cfg = CacheConfig { main_bytes: capacity, preemptive_fraction: 0.1, entry_overhead_bytes: 64 };
        let cache = DualCache::new(cfg);
        let mut reference = ReferenceLru { entries: VecDeque::new(), capacity };
        for (key, len) in ops {
            let size = len + 64;
            let (_, outcome) = cache.read(&c(key));
            let hit = if size > capacity && !outcome.is_hit() {
                false
            } else {
                reference.access(key, size)
            };
            prop_assert_eq!(outcome.is_hit(), hit);
            if !outcome.is_hit() && size <= capacity {
                cache.admit(&c(key), Bytes::from(vec![0u8; len]), Origin::Demand).unwrap();
            }
            prop_assert!(cache.used_bytes().0 <= capacity);
            let order: Vec<_> = reference.entries.iter().map(|(k, _)| c(*k)).collect();
            prop_assert_eq!(cache.keys_lru_order(Space::Main), order);
        }
    }

    #[test]
    fn client_without_prefetch_behaves_like_lru(reads in vec(0u8..12, 1..150), slots in 1usize..8) {
        let value_len = 100;
        let capacity = slots * (value_len + 64);
        let store = Arc::new(SimStore::new(LatencyModel::fixed(1000), TimeMode::Virtual, 1));
        for i in 0..12 {
            store.put(&c(i), Bytes::from(vec![i; value_len])).value.unwrap();
        }
        let metastore = Arc::new(Metastore::new(MetastoreConfig::default()));
        // Patterns exist, but prefetching is switched off.
        metastore.install(vec![SequencePattern::new((0..6).map(c).collect(), 10, 0.5)]).unwrap();
        let client = CachingClient::new(
            ClientConfig {
                cache: Some(CacheConfig { main_bytes: capacity, ..CacheConfig::default() }),
                heuristic: Some(HeuristicKind::FetchAll),
                ..ClientConfig::default()
            },
            store,
            metastore,
            Arc::new(SessionLog::in_memory()),
            None,
        ).unwrap();
        client.set_prefetching(false);
        let mut reference = ReferenceLru { entries: VecDeque::new(), capacity };
        for key in reads {
            let r = client.read(1, &c(key));
            prop_assert_eq!(r.outcome.is_hit(), reference.access(key, value_len + 64));
            prop_assert_eq!(r.value.unwrap(), Bytes::from(vec![key; value_len]));
        }
        prop_assert_eq!(client.metrics().number_of_prefetches, 0);
    }
}
