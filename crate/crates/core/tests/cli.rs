use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--workload.container-count",
    "3000",
    "--workload.session-count",
    "200",
    "--workload.freq-seq-count",
    "100",
    "--mining.min-sup-floor",
    "0.01",
];

fn seqcache(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqcache"))
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_in(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--out", out.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    seqcache(&args)
}

#[test]
fn run_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = run_in(&out, &["--heuristic", "fetch-top-n,none", "--heuristic.n", "3", "--emit-plot-data"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [
        "metrics.csv",
        "latency.csv",
        "drift.csv",
        "patterns.txt",
        "run.log",
        "plot_hit_rate.csv",
        "plot_precision.csv",
        "plot_latency.csv",
        "plot_drift.csv",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let mut reader = csv::Reader::from_path(out.join("metrics.csv")).unwrap();
    assert_eq!(
        reader.headers().unwrap().iter().collect::<Vec<_>>(),
        seqcache::cli::METRICS_COLUMNS
    );
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(&rows[0][1], "fetch-top-n");
    assert_eq!(&rows[0][5], "1");
    assert_eq!(&rows[1][5], "2");
    assert_eq!(&rows[2][1], "cache-only");
    let patterns = fs::read_to_string(out.join("patterns.txt")).unwrap();
    assert!(patterns.lines().all(|l| l.split_once('\t').is_some()));
}

#[test]
fn invalid_settings_exit_one_and_name_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(&dir.path().join("x"), &["--heuristic", "fetch-most"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--heuristic"));

    let o = run_in(&dir.path().join("x"), &["--zipf", "-1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--zipf"), "{}", stderr(&o));

    let o = run_in(&dir.path().join("x"), &["--mining.min-sup-floor", "0.9"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--mining.min-sup-floor"));

    let o = seqcache(&["run", "--no-such-flag", "1"]);
    assert_eq!(o.status.code(), Some(1));

    assert_eq!(seqcache(&["--help"]).status.code(), Some(0));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.conf");
    fs::write(
        &cfg,
        "# small run\nheuristic = none\nworkload.session_count = 150\nzipf = 2.0\n",
    )
    .unwrap();
    let out = dir.path().join("o");
    let o = run_in(
        &out,
        &["--config", cfg.to_str().unwrap(), "--zipf", "1.5", "--workload.session-count", "120"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let row: Vec<&str> = metrics.lines().nth(2).unwrap().split(',').collect();
    assert_eq!(row[1], "cache-only");
    assert_eq!(row[2], "1.5");
    assert_eq!(row[16], "120");

    fs::write(&cfg, "unknown.setting = 3\n").unwrap();
    let o = run_in(&out, &["--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("exp.conf:1"));
}

#[test]
fn drift_and_overhead_modes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("drift");
    let o = run_in(
        &out,
        &["--mode", "drift", "--workload.drift-pattern-sets", "3", "--heuristic", "fetch-all"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let labels: Vec<String> = metrics
        .lines()
        .skip(1)
        .map(|l| format!("{}:{}", l.split(',').nth(1).unwrap(), l.split(',').nth(5).unwrap()))
        .collect();
    assert_eq!(
        labels,
        ["fetch-all:A", "fetch-all:B", "fetch-all:C", "cache-only:A", "cache-only:B", "cache-only:C"]
    );
    let drift = fs::read_to_string(out.join("drift.csv")).unwrap();
    assert!(drift.lines().count() > 6);

    let out = dir.path().join("overhead");
    let o = run_in(&out, &["--mode", "overhead-zero-cache", "--heuristic", "fetch-top-n"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = fs::read_to_string(out.join("run.log")).unwrap();
    assert!(log.contains("overhead heuristic=fetch-top-n"));
    assert!(log.contains("cache_main_bytes=0"));
}

#[test]
fn mine_reads_session_databases_and_logs() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("sessions.txt");
    fs::write(&db, "t/a/: t/b/: t/c/:\nt/a/: t/b/: t/c/:\nt/x/: t/a/: t/b/:\n").unwrap();
    let patterns = dir.path().join("p.txt");
    let o = seqcache(&["mine", db.to_str().unwrap(), "--output", patterns.to_str().unwrap(), "--minsup", "0.6", "--mining.min-len", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("patterns=1"));
    assert_eq!(fs::read_to_string(&patterns).unwrap(), "2\tt/a/: t/b/: t/c/:\n");

    let log = dir.path().join("reads.log");
    let mut text = String::new();
    for client in 0..4 {
        for (i, item) in ["t/p/:", "t/q/:", "t/r/:"].iter().enumerate() {
            text.push_str(&format!("{client}\t{}\t{item}\n", i * 100));
        }
    }
    fs::write(&log, text).unwrap();
    let out = dir.path().join("out");
    let o = seqcache(&["mine", log.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mined = fs::read_to_string(out.join("patterns.txt")).unwrap();
    assert_eq!(mined, "4\tt/p/: t/q/: t/r/:\n");

    fs::write(&db, "").unwrap();
    let o = seqcache(&["mine", db.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn report_merges_and_sorts() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run_in(&a, &["--heuristic", "none", "--zipf", "2.0"]).status.success());
    assert!(run_in(&b, &["--heuristic", "none,fetch-all", "--zipf", "1.0"]).status.success());
    let merged = dir.path().join("all.csv");
    let o = seqcache(&["report", a.to_str().unwrap(), b.to_str().unwrap(), "--output", merged.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut reader = csv::Reader::from_path(&merged).unwrap();
    assert_eq!(reader.headers().unwrap().iter().next_back(), Some("source"));
    let keys: Vec<(String, String)> = reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[1].to_string(), r[2].to_string())
        })
        .collect();
    assert_eq!(keys.len(), 6);
    assert_eq!(keys[0], ("cache-only".into(), "1".into()));
    assert_eq!(keys[2], ("cache-only".into(), "2".into()));
    assert_eq!(keys[4], ("fetch-all".into(), "1".into()));

    let broken = dir.path().join("broken");
    fs::create_dir(&broken).unwrap();
    fs::write(broken.join("metrics.csv"), "mode,heuristic\nx,y\n").unwrap();
    let o = seqcache(&["report", broken.to_str().unwrap(), "--output", merged.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("zipf_exponent"));
}
