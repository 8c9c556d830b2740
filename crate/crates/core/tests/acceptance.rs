//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process fails if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use bytes::Bytes;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seqcache::metastore::{build_trees, rank_and_cap, score};
use seqcache::miner::{mine_maximal, mine_maximal_bruteforce};
use seqcache::prefetch::{context_on_root, plan_fetch_all, plan_fetch_top_n, PlannedItem};
use seqcache::workload::{run_drift, run_two_stage, SystemConfig, SystemMode, WorkloadConfig};
use seqcache::*;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const EDGE_TOL: f64 = 1e-12;
const HIT_RATE_MARGIN: f64 = 0.10;
const MONOTONE_BAND: f64 = 0.03;
const LATENCY_FACTOR: f64 = 5.0;
const OVERHEAD_TOL: f64 = 0.10;

type Outcome = std::result::Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, ok: String, bad: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(bad)
    }
}

fn c(name: &str) -> DataContainer {
    DataContainer::row("t", name).unwrap()
}

fn pat(names: &str, count: u64) -> SequencePattern {
    SequencePattern::new(names.chars().map(|ch| c(&ch.to_string())).collect(), count, 0.0)
}

fn names(plan: &[PlannedItem]) -> String {
    plan.iter().map(|p| p.item.row_key().unwrap()).collect()
}

/// Desk-scale two-stage experiment shared by criteria 5, 6, 7 and 9.
fn desk_workload(seed: u64, zipf: f64) -> WorkloadConfig {
    WorkloadConfig {
        container_count: 50_000,
        session_count: 2000,
        freq_seq_count: 5000,
        zipf_exponent: zipf,
        seed,
        ..WorkloadConfig::default()
    }
}

fn desk_system(mode: SystemMode) -> SystemConfig {
    SystemConfig {
        mode,
        cache: CacheConfig {
            main_bytes: 4 << 20,
            ..CacheConfig::default()
        },
        mining: MiningConfig {
            min_sup_floor: 0.0005,
            min_pattern_count: 10_000,
            ..MiningConfig::default()
        },
        latency: LatencyModel::fixed(1000),
        time: TimeMode::Virtual,
        ..SystemConfig::default()
    }
}

fn mean_hit_rate(mode: SystemMode, zipf: f64) -> f64 {
    let total: f64 = SEEDS
        .iter()
        .map(|&s| {
            run_two_stage(&desk_workload(s, zipf), &desk_system(mode))
                .unwrap()
                .stage2
                .hit_rate()
        })
        .sum();
    total / SEEDS.len() as f64
}

fn top_n() -> SystemMode {
    SystemMode::Prefetch(HeuristicKind::FetchTopN(5))
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0001);
    let cfg = MiningConfig {
        min_len: 2,
        max_len: 12,
        ..MiningConfig::default()
    };
    let alphabet: Vec<DataContainer> = (0..10).map(|i| c(&format!("i{i}"))).collect();
    for case in 0..500 {
        let sessions = (0..rng.random_range(1..=50))
            .map(|id| {
                let len = rng.random_range(1..=12);
                let width = rng.random_range(2..=10);
                let items = (0..len).map(|_| alphabet[rng.random_range(0..width)].clone()).collect();
                Session::untimed(id, items).unwrap()
            })
            .collect();
        let db = SequenceDatabase::new(sessions);
        let minsup = [0.1, 0.2, 0.5][case % 3];
        let fast = mine_maximal(&db, minsup, &cfg).unwrap();
        let slow = mine_maximal_bruteforce(&db, minsup, &cfg).unwrap();
        if fast != slow {
            return Err(format!("database {case} at minsup {minsup} differs from brute force"));
        }
    }
    let elapsed = start.elapsed();
    check(
        elapsed < Duration::from_secs(30),
        format!("500 databases agree with brute force in {:.1}s", elapsed.as_secs_f64()),
        format!("took {:.1}s", elapsed.as_secs_f64()),
    )
}

fn criterion_2() -> Outcome {
    let forest = build_trees(&[pat("adi", 70), pat("aej", 24), pat("aek", 6)]).unwrap();
    let tree = forest.get(&c("a")).unwrap();
    let prob = |path: &str| {
        let mut at = 0;
        for ch in path.chars() {
            at = tree.child_with_item(at, &c(&ch.to_string())).unwrap();
        }
        tree.edge_probability(at)
    };
    let expected = [("d", 0.7), ("e", 0.3), ("ej", 0.8), ("ek", 0.2)];
    for (path, p) in expected {
        if (prob(path) - p).abs() > EDGE_TOL {
            return Err(format!("edge to {path} has probability {}", prob(path)));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0002);
    for case in 0..1000 {
        // Equal-length distinct patterns form an antichain.
        let len = rng.random_range(2..=5);
        let mut seen = BTreeMap::new();
        for _ in 0..rng.random_range(1..=20) {
            let mut s = String::from("r");
            for _ in 1..len {
                s.push((b'a' + rng.random_range(0..4u8)) as char);
            }
            seen.entry(s).or_insert(rng.random_range(1..=100u64));
        }
        let patterns: Vec<_> = seen.iter().map(|(s, &n)| pat(s, n)).collect();
        let forest = build_trees(&patterns).unwrap();
        let tree = forest.get(&c("r")).unwrap();
        for id in 0..tree.len() {
            let node = tree.node(id);
            let kids = tree.children(id);
            if kids.is_empty() {
                continue;
            }
            let child_weight: u64 = kids.iter().map(|&k| tree.node(k).weight).sum();
            if child_weight != node.weight {
                return Err(format!("tree {case}: weight not conserved at node {id}"));
            }
            let sum: f64 = kids.iter().map(|&k| tree.edge_probability(k)).sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(format!("tree {case}: child probabilities sum to {sum}"));
            }
        }
    }
    Ok("edges 0.7/0.3/0.8/0.2; invariants hold on 1000 random trees".into())
}

fn criterion_3() -> Outcome {
    let store = Arc::new(SimStore::new(LatencyModel::fixed(1000), TimeMode::Virtual, 1));
    for name in ["a", "d", "e", "i", "j", "k"] {
        store.put(&c(name), Bytes::from(name.to_string())).value.unwrap();
    }
    let metastore = Arc::new(Metastore::new(MetastoreConfig::default()));
    metastore
        .install(vec![pat("adi", 70), pat("aej", 24), pat("aek", 6)])
        .unwrap();
    let client = CachingClient::new(
        ClientConfig {
            heuristic: Some(HeuristicKind::FetchAll),
            ..ClientConfig::default()
        },
        store,
        metastore,
        Arc::new(SessionLog::in_memory()),
        None,
    )
    .unwrap();
    client.read(1, &c("a"));
    client.think(10_000);
    client.read(1, &c("d"));
    client.read(1, &c("i"));
    let m = client.metrics();
    check(
        m.prefetch_hits * 5 == m.number_of_prefetches * 2 && m.number_of_prefetches == 5,
        format!("precision {}/{}", m.prefetch_hits, m.number_of_prefetches),
        format!("precision {}/{}", m.prefetch_hits, m.number_of_prefetches),
    )
}

fn criterion_4() -> Outcome {
    let store = Metastore::new(MetastoreConfig::default());
    store
        .install(vec![
            pat("adi", 70),
            pat("aej", 24),
            pat("aek", 6),
            pat("cfl", 5),
            pat("cgmq", 4),
            pat("chn", 3),
        ])
        .unwrap();
    let a = store.lookup_root(&c("a")).unwrap().tree;
    let all = names(&plan_fetch_all(&a));
    let top = names(&plan_fetch_top_n(&a, 3));
    let root = store.lookup_root(&c("c")).unwrap();
    let (mut ctx, first) = context_on_root(&root, 2);
    let first = names(&first);
    let next = names(&ctx.advance(&c("g"), root.generation).unwrap_or_default());
    let summary = format!("fetch-all {all}, top-3 {top}, progressive {first} then {next}");
    check(
        all == "deijk" && top == "dei" && first == "fghlmn" && next == "q",
        summary.clone(),
        summary,
    )
}

fn criterion_5() -> Outcome {
    let base = mean_hit_rate(SystemMode::CacheOnly, 1.0);
    let mut parts = vec![format!("cache-only {base:.3}")];
    let mut ok = true;
    for h in [
        HeuristicKind::FetchAll,
        HeuristicKind::FetchTopN(5),
        HeuristicKind::FetchProgressively(2),
    ] {
        let rate = mean_hit_rate(SystemMode::Prefetch(h), 1.0);
        ok &= rate - base >= HIT_RATE_MARGIN;
        parts.push(format!("{} {rate:.3}", h.name()));
    }
    check(ok, parts.join(", "), parts.join(", "))
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let rates: Vec<f64> = [0.5, 1.0, 1.5, 2.0]
        .iter()
        .map(|&z| mean_hit_rate(top_n(), z))
        .collect();
    let monotone = rates.windows(2).all(|w| w[1] >= w[0] - MONOTONE_BAND);
    let elapsed = start.elapsed();
    let summary = format!(
        "top-n hit rates {:?} in {:.0}s",
        rates.iter().map(|r| (r * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
        elapsed.as_secs_f64()
    );
    check(monotone && elapsed < Duration::from_secs(300), summary.clone(), summary)
}

fn criterion_7() -> Outcome {
    let mean_latency = |mode| {
        SEEDS
            .iter()
            .map(|&s| {
                run_two_stage(&desk_workload(s, 1.5), &desk_system(mode))
                    .unwrap()
                    .latency
                    .mean_us
            })
            .sum::<f64>()
            / SEEDS.len() as f64
    };
    let prefetch = mean_latency(top_n());
    let baseline = mean_latency(SystemMode::Passthrough);
    let summary = format!("top-n {prefetch:.1} µs vs no cache {baseline:.1} µs");
    check(prefetch * LATENCY_FACTOR <= baseline, summary.clone(), summary)
}

fn criterion_8() -> Outcome {
    let w = WorkloadConfig {
        freq_seq_count: 2000,
        session_count: 10_000,
        drift_pattern_sets: 5,
        remine_interval_fraction: 0.2,
        seed: 1,
        ..WorkloadConfig::default()
    };
    let mut sys = desk_system(SystemMode::Prefetch(HeuristicKind::FetchAll));
    sys.cache.main_bytes = (4 << 20) / 3;
    let r = run_drift(&w, &sys).unwrap();
    let mut problems = Vec::new();
    for (p, b) in r.prefetch.sets.iter().zip(&r.cache_only.sets).skip(1) {
        if p.final_window_hit_rate <= b.final_window_hit_rate {
            problems.push(format!(
                "set {}: {:.3} <= {:.3}",
                p.label, p.final_window_hit_rate, b.final_window_hit_rate
            ));
        }
    }
    let gap = r.prefetch.sets.last().unwrap().global_hit_rate
        - r.cache_only.sets.last().unwrap().global_hit_rate;
    if gap < HIT_RATE_MARGIN {
        problems.push(format!("final global gap {:.1} points", gap * 100.0));
    }
    check(
        problems.is_empty(),
        format!("recovers after every drift; final global gap {:.1} points", gap * 100.0),
        problems.join("; "),
    )
}

fn criterion_9() -> Outcome {
    let mut ratios = Vec::new();
    for &s in &SEEDS[..2] {
        let w = desk_workload(s, 1.0);
        let mut zero = desk_system(top_n());
        zero.cache.main_bytes = 0;
        let prefetch = run_two_stage(&w, &zero).unwrap().runtime_s;
        let pass = run_two_stage(&w, &desk_system(SystemMode::Passthrough)).unwrap().runtime_s;
        ratios.push(prefetch / pass);
    }
    let ok = ratios.iter().all(|r| (r - 1.0).abs() <= OVERHEAD_TOL);
    let summary = format!("runtime ratios vs passthrough {ratios:.3?}");
    check(ok, summary.clone(), summary)
}

fn criterion_10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0010);
    let alphabet: Vec<DataContainer> = (0..60).map(|i| c(&format!("k{i:02}"))).collect();
    let mut unique = BTreeSet::new();
    let mut patterns = Vec::new();
    while patterns.len() < 50_000 {
        let items: Vec<DataContainer> =
            (0..4).map(|_| alphabet[rng.random_range(0..alphabet.len())].clone()).collect();
        let key: Vec<String> = items.iter().map(|i| i.encoded().to_string()).collect();
        if !unique.insert(key) {
            continue;
        }
        // Few distinct counts so that ties are common.
        let count = rng.random_range(1..=20u64);
        patterns.push(SequencePattern::new(items, count, count as f64 / 20.0));
    }

    // Oracle: rank by (length * fraction, count, encoded items) with a plain sort key.
    let mut keyed: Vec<(i64, u64, Vec<String>, usize)> = patterns
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let milli = (p.items.len() as f64 * p.support_fraction * 1e6).round() as i64;
            let enc = p.items.iter().map(|x| x.encoded().to_string()).collect();
            (-milli, u64::MAX - p.support_count, enc, i)
        })
        .collect();
    keyed.sort();
    let expected: Vec<usize> = keyed.iter().take(10_000).map(|k| k.3).collect();

    let cfg = MetastoreConfig {
        capacity_sequences: 10_000,
        ..MetastoreConfig::default()
    };
    let kept = rank_and_cap(patterns.clone(), &cfg);
    let got: Vec<&SequencePattern> = kept.iter().collect();
    let want: Vec<&SequencePattern> = expected.iter().map(|&i| &patterns[i]).collect();
    if got != want {
        return Err("rank_and_cap disagrees with the oracle".into());
    }
    if kept.windows(2).any(|w| score(&w[0]) < score(&w[1])) {
        return Err("kept patterns are not in score order".into());
    }

    let store = Metastore::new(cfg);
    let installed = store.install(patterns.clone()).unwrap();
    let stored = store.snapshot().forest.pattern_count();
    let oversized = build_trees(&patterns).unwrap();
    let rejected = store.swap_generation(oversized).is_err();
    let after = store.snapshot().forest.pattern_count();
    check(
        installed.len() == 10_000 && stored == 10_000 && rejected && after == 10_000,
        "top 10000 of 50000 match the oracle; metastore holds 10000".into(),
        format!("installed {} stored {stored} rejected {rejected} after {after}", installed.len()),
    )
}

fn criterion_11() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_seqcache"))
            .args(["run", "--virtual-time", "--seed", "7", "--out"])
            .arg(&out)
            .args([
                "--heuristic",
                "fetch-all,fetch-top-n,fetch-progressive,none",
                "--zipf",
                "1.0,1.5",
                "--workload.container-count",
                "5000",
                "--workload.session-count",
                "400",
                "--workload.freq-seq-count",
                "300",
                "--cache.main-bytes",
                "1000000",
                "--mining.min-sup-floor",
                "0.005",
            ])
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(out.join("metrics.csv")).unwrap()
    };
    let a = run("a");
    let b = run("b");
    check(
        a == b && !a.is_empty(),
        format!("two runs produced identical metrics.csv ({} bytes)", a.len()),
        "metrics.csv differs between identical runs".into(),
    )
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("miner matches brute force", criterion_1),
        ("tree probabilities", criterion_2),
        ("worked precision", criterion_3),
        ("heuristic plans", criterion_4),
        ("prefetch beats cache-only", criterion_5),
        ("hit rate rises with skew", criterion_6),
        ("latency reduction", criterion_7),
        ("recovery after drift", criterion_8),
        ("zero-cache overhead", criterion_9),
        ("metastore ranking and capacity", criterion_10),
        ("deterministic metrics", criterion_11),
    ];
    let results: Vec<Outcome> = std::thread::scope(|scope| {
        let handles: Vec<_> = criteria
            .iter()
            .map(|(_, f)| {
                let f = *f;
                scope.spawn(move || {
                    std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut failed = 0;
    for (i, ((name, _), result)) in criteria.iter().zip(&results).enumerate() {
        match result {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
