//! Command-line front end: `run`, `mine` and `report`.
//!
//! Every experiment setting is a dotted flag such as `--mining.min-sup-start`.
//! The same keys may be given in a `key=value` file passed with `--config`;
//! flags on the command line win. Configuration problems exit with status 1
//! and name the offending flag, runtime failures exit with status 2.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Display;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use clap::{Arg, ArgAction, ArgMatches, Command};

use crate::backstore::{LatencyKind, LatencyModel, TimeMode};
use crate::cache::{CacheConfig, CacheMetrics};
use crate::error::{Error, Result};
use crate::metastore::{rank_and_cap, read_patterns_file, write_patterns_file, MetastoreConfig};
use crate::miner::{mine_adaptive, mine_maximal, read_session_db, MiningConfig, SequenceDatabase};
use crate::prefetch::HeuristicKind;
use crate::session_log::{read_log_file, segment, sort_records, SessionGapConfig};
use crate::workload::{
    run_drift, run_two_stage, DriftRun, RunReport, SystemConfig, SystemMode, WorkloadConfig,
};

/// Columns of `metrics.csv`, in order.
pub const METRICS_COLUMNS: &[&str] = &[
    "mode",
    "heuristic",
    "zipf_exponent",
    "sequence_factor",
    "seed",
    "stage",
    "accesses",
    "cache_hits",
    "hit_rate",
    "prefetches",
    "prefetch_hits",
    "precision",
    "evictions_main",
    "evictions_preemptive",
    "minsup_used",
    "patterns_stored",
    "sessions",
    "operations",
    "runtime_s",
    "throughput_ops_s",
];

/// Columns of `latency.csv`, in order.
pub const LATENCY_COLUMNS: &[&str] = &[
    "mode",
    "heuristic",
    "zipf_exponent",
    "sequence_factor",
    "seed",
    "samples",
    "mean_us",
    "median_us",
    "p5_us",
    "p95_us",
];

/// Columns of `drift.csv`, in order.
pub const DRIFT_COLUMNS: &[&str] = &[
    "mode",
    "heuristic",
    "zipf_exponent",
    "sequence_factor",
    "seed",
    "set",
    "window",
    "accesses",
    "local_hit_rate",
    "global_hit_rate",
];

/// Experiment settings accepted as flags and in config files.
const RUN_SETTINGS: &[(&str, &str)] = &[
    ("mode", "two-stage, drift or overhead-zero-cache [default: two-stage]"),
    ("heuristic", "comma list of fetch-all, fetch-top-n, fetch-progressive, none, passthrough"),
    ("heuristic.n", "n for fetch-top-n and fetch-progressive"),
    ("zipf", "comma list of zipf exponents [default: 1.0]"),
    ("workload.container-count", "containers populated in the store [default: 50000]"),
    ("workload.value-bytes", "bytes per stored value [default: 1000]"),
    ("workload.freq-seq-count", "size of the frequent-sequence pool [default: 1000]"),
    ("workload.seq-min-len", "shortest pool sequence [default: 3]"),
    ("workload.seq-max-len", "longest pool sequence [default: 10]"),
    ("workload.session-count", "sessions measured in stage 2 [default: 2000]"),
    ("workload.read-fraction", "probability an item is not followed by a write [default: 0.95]"),
    ("workload.sequence-factor", "stage-1 sessions as a fraction of stage 2 [default: 1.0]"),
    ("workload.drift-pattern-sets", "pattern sets in drift mode [default: 1]"),
    ("workload.remine-interval-fraction", "re-mining interval in drift mode [default: 0.2]"),
    ("workload.step-us", "think time between operations [default: 1000]"),
    ("workload.streams", "concurrent client streams [default: 1]"),
    ("cache.main-bytes", "main cache space in bytes [default: 33554432]"),
    ("cache.preemptive-fraction", "preemptive space relative to main [default: 0.1]"),
    ("cache.entry-overhead-bytes", "bookkeeping bytes charged per entry [default: 64]"),
    ("cache.service-us", "cost of a cache lookup [default: 1]"),
    ("prefetch.max-contexts", "live progressive contexts per client [default: 16]"),
    ("store.latency", "fixed:US, uniform:MIN:MAX or lognormal:MU:SIGMA [default: fixed:1000]"),
    ("store.batch-discount", "per-item multi-get discount [default: 0.9]"),
    ("session.gap-ms", "idle gap that ends a session [default: 30000]"),
    ("apriori", "patterns file merged into every mining result"),
];

const MINING_SETTINGS: &[(&str, &str)] = &[
    ("mining.min-len", "shortest mined pattern [default: 3]"),
    ("mining.max-len", "longest mined pattern [default: 15]"),
    ("mining.max-gap", "maximum gap; only 1 is supported [default: 1]"),
    ("mining.min-sup-start", "first minimum support tried [default: 0.5]"),
    ("mining.min-sup-floor", "lowest minimum support tried [default: 0.01]"),
    ("mining.min-sup-step", "support decrement per pass [default: 0.05]"),
    ("mining.min-pattern-count", "patterns wanted before stopping [default: 10]"),
    ("mining.budget-ms", "wall-clock budget per mining pass [default: 60000]"),
    ("metastore.capacity", "maximum stored patterns [default: 10000]"),
    ("metastore.max-elements", "maximum items per stored pattern [default: 15]"),
];

const GLOBAL_KEYS: &[&str] = &["seed", "out"];

/// Parse `args` (including the program name), run the subcommand and return
/// the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let result = match matches.subcommand() {
        Some(("run", sub)) => cmd_run(&matches, sub),
        Some(("mine", sub)) => cmd_mine(&matches, sub),
        Some(("report", sub)) => cmd_report(sub),
        _ => unreachable!("a subcommand is required"),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. }
        | Error::Parse { .. }
        | Error::EmptyDatabase
        | Error::MalformedKey { .. } => 1,
        _ => 2,
    }
}

fn describe(e: &Error) -> String {
    match e {
        Error::Config { key, reason } => format!("invalid value for --{key}: {reason}"),
        other => other.to_string(),
    }
}

fn setting_arg(key: &'static str, help: &'static str) -> Arg {
    Arg::new(key)
        .long(key)
        .value_name("VALUE")
        .allow_negative_numbers(true)
        .help(help)
}

pub fn command() -> Command {
    Command::new("seqcache")
        .about("Sequence-mining prefetch cache: experiments and offline tools")
        .subcommand_required(true)
        .args_override_self(true)
        .arg_required_else_help(true)
        .arg(setting_arg("seed", "root seed for every random stream [default: 42]").global(true))
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("PATH")
                .help("key=value settings file; flags override it")
                .global(true),
        )
        .arg(setting_arg("out", "output directory [default: out]").global(true))
        .arg(
            Arg::new("virtual-time")
                .long("virtual-time")
                .action(ArgAction::SetTrue)
                .conflicts_with("real-time")
                .help("accumulate latencies on a logical clock (default)")
                .global(true),
        )
        .arg(
            Arg::new("real-time")
                .long("real-time")
                .action(ArgAction::SetTrue)
                .help("sleep for simulated latencies")
                .global(true),
        )
        .subcommand(
            Command::new("run")
                .args_override_self(true)
                .about("Run an experiment and write CSV results")
                .args(RUN_SETTINGS.iter().map(|(k, h)| setting_arg(k, h)))
                .args(MINING_SETTINGS.iter().map(|(k, h)| setting_arg(k, h)))
                .arg(
                    Arg::new("emit-plot-data")
                        .long("emit-plot-data")
                        .action(ArgAction::SetTrue)
                        .help("also write CSVs shaped for plotting"),
                ),
        )
        .subcommand(
            Command::new("mine")
                .args_override_self(true)
                .about("Mine a log or session-database file into a patterns file")
                .arg(Arg::new("input").required(true).value_name("INPUT"))
                .arg(
                    Arg::new("output")
                        .long("output")
                        .value_name("PATH")
                        .help("patterns file to write [default: <out>/patterns.txt]"),
                )
                .arg(setting_arg("minsup", "mine once at this support instead of adaptively"))
                .arg(setting_arg("session.gap-ms", "idle gap that ends a session [default: 30000]"))
                .args(MINING_SETTINGS.iter().map(|(k, h)| setting_arg(k, h))),
        )
        .subcommand(
            Command::new("report")
                .about("Merge metrics.csv files from several run directories")
                .arg(
                    Arg::new("dirs")
                        .required(true)
                        .num_args(1..)
                        .value_name("RUN_DIR"),
                )
                .arg(
                    Arg::new("output")
                        .long("output")
                        .required(true)
                        .value_name("PATH"),
                ),
        )
}

/// Settings from the config file overlaid with command-line flags.
#[derive(Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    fn known(key: &str) -> bool {
        GLOBAL_KEYS.contains(&key)
            || key == "minsup"
            || RUN_SETTINGS.iter().chain(MINING_SETTINGS).any(|(k, _)| *k == key)
    }

    fn normalise(key: &str) -> String {
        key.trim().replace('_', "-")
    }

    /// Parse a `key=value` file. Blank lines and `#` comments are ignored.
    pub fn parse_config(text: &str, origin: &Path) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path: origin.to_path_buf(),
                    line: n + 1,
                    reason: "expected key=value".into(),
                });
            };
            let key = Self::normalise(k);
            if !Self::known(&key) {
                return Err(Error::Parse {
                    path: origin.to_path_buf(),
                    line: n + 1,
                    reason: format!("unknown setting `{key}`"),
                });
            }
            values.insert(key, v.trim().to_string());
        }
        Ok(Self { values })
    }

    fn from_matches(global: &ArgMatches, sub: &ArgMatches) -> Result<Self> {
        let mut settings = match global.get_one::<String>("config") {
            Some(path) => {
                let path = PathBuf::from(path);
                let text = fs::read_to_string(&path).map_err(|e| Error::Config {
                    key: "config".into(),
                    reason: format!("cannot read {}: {e}", path.display()),
                })?;
                Self::parse_config(&text, &path)?
            }
            None => Self::default(),
        };
        let keys = GLOBAL_KEYS
            .iter()
            .copied()
            .chain(RUN_SETTINGS.iter().chain(MINING_SETTINGS).map(|(k, _)| *k))
            .chain(["minsup"]);
        for key in keys {
            let value = sub
                .try_get_one::<String>(key)
                .ok()
                .flatten()
                .or_else(|| global.try_get_one::<String>(key).ok().flatten());
            if let Some(v) = value {
                settings.values.insert(key.to_string(), v.clone());
            }
        }
        Ok(settings)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(Self::normalise(key), value.into());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T>(&self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| Error::config(key, format!("cannot parse {v:?}: {e}"))),
        }
    }

    fn list<T>(&self, key: &str, default: &str) -> Result<Vec<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let raw = self.raw(key).unwrap_or(default);
        let items: Vec<&str> = raw.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        if items.is_empty() {
            return Err(Error::config(key, "empty list"));
        }
        items
            .into_iter()
            .map(|v| {
                v.parse()
                    .map_err(|e| Error::config(key, format!("cannot parse {v:?}: {e}")))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    TwoStage,
    Drift,
    OverheadZeroCache,
}

impl RunMode {
    pub fn label(&self) -> &'static str {
        match self {
            RunMode::TwoStage => "two-stage",
            RunMode::Drift => "drift",
            RunMode::OverheadZeroCache => "overhead-zero-cache",
        }
    }
}

impl FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "two-stage" => Ok(RunMode::TwoStage),
            "drift" => Ok(RunMode::Drift),
            "overhead-zero-cache" => Ok(RunMode::OverheadZeroCache),
            _ => Err("expected two-stage, drift or overhead-zero-cache".into()),
        }
    }
}

/// A fully validated `run` invocation.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub mode: RunMode,
    pub workload: WorkloadConfig,
    pub zipf_exponents: Vec<f64>,
    pub systems: Vec<SystemMode>,
    pub system: SystemConfig,
    pub out: PathBuf,
    pub emit_plot_data: bool,
}

fn mining_config(s: &Settings) -> Result<MiningConfig> {
    let d = MiningConfig::default();
    let cfg = MiningConfig {
        min_len: s.get("mining.min-len", d.min_len)?,
        max_len: s.get("mining.max-len", d.max_len)?,
        max_gap: s.get("mining.max-gap", d.max_gap)?,
        min_sup_start: s.get("mining.min-sup-start", d.min_sup_start)?,
        min_sup_floor: s.get("mining.min-sup-floor", d.min_sup_floor)?,
        min_sup_step: s.get("mining.min-sup-step", d.min_sup_step)?,
        min_pattern_count: s.get("mining.min-pattern-count", d.min_pattern_count)?,
        budget: Duration::from_millis(s.get("mining.budget-ms", d.budget.as_millis() as u64)?),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn metastore_config(s: &Settings) -> Result<MetastoreConfig> {
    let d = MetastoreConfig::default();
    let cfg = MetastoreConfig {
        capacity_sequences: s.get("metastore.capacity", d.capacity_sequences)?,
        max_elements_per_sequence: s.get("metastore.max-elements", d.max_elements_per_sequence)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn time_mode(global: &ArgMatches) -> TimeMode {
    if global.get_flag("real-time") {
        TimeMode::Real
    } else {
        TimeMode::Virtual
    }
}

fn parse_systems(s: &Settings) -> Result<Vec<SystemMode>> {
    let n = match s.raw("heuristic.n") {
        Some(_) => Some(s.get::<usize>("heuristic.n", 0)?),
        None => None,
    };
    let names: Vec<String> = s.list("heuristic", "fetch-all,fetch-top-n,fetch-progressive,none")?;
    names
        .iter()
        .map(|name| match name.as_str() {
            "none" | "cache-only" => Ok(SystemMode::CacheOnly),
            "passthrough" => Ok(SystemMode::Passthrough),
            other => HeuristicKind::from_name(other, n).map(SystemMode::Prefetch),
        })
        .collect()
}

/// Build an [`ExperimentPlan`] from merged settings.
pub fn experiment_plan(s: &Settings, time: TimeMode, emit_plot_data: bool) -> Result<ExperimentPlan> {
    let mode: RunMode = s.get("mode", RunMode::TwoStage)?;
    let wd = WorkloadConfig::default();
    let workload = WorkloadConfig {
        container_count: s.get("workload.container-count", wd.container_count)?,
        value_bytes: s.get("workload.value-bytes", wd.value_bytes)?,
        freq_seq_count: s.get("workload.freq-seq-count", wd.freq_seq_count)?,
        seq_min_len: s.get("workload.seq-min-len", wd.seq_min_len)?,
        seq_max_len: s.get("workload.seq-max-len", wd.seq_max_len)?,
        zipf_exponent: wd.zipf_exponent,
        session_count: s.get("workload.session-count", wd.session_count)?,
        read_fraction: s.get("workload.read-fraction", wd.read_fraction)?,
        seed: s.get("seed", wd.seed)?,
        sequence_factor: s.get("workload.sequence-factor", wd.sequence_factor)?,
        drift_pattern_sets: s.get("workload.drift-pattern-sets", wd.drift_pattern_sets)?,
        remine_interval_fraction: s
            .get("workload.remine-interval-fraction", wd.remine_interval_fraction)?,
        step_us: s.get("workload.step-us", wd.step_us)?,
        streams: s.get("workload.streams", wd.streams)?,
    };
    let zipf_exponents: Vec<f64> = s.list("zipf", "1.0")?;
    for &z in &zipf_exponents {
        WorkloadConfig {
            zipf_exponent: z,
            ..workload.clone()
        }
        .validate()?;
    }

    let mut systems = parse_systems(s)?;
    let cd = CacheConfig::default();
    let mut cache = CacheConfig {
        main_bytes: s.get("cache.main-bytes", cd.main_bytes)?,
        preemptive_fraction: s.get("cache.preemptive-fraction", cd.preemptive_fraction)?,
        entry_overhead_bytes: s.get("cache.entry-overhead-bytes", cd.entry_overhead_bytes)?,
    };
    match mode {
        RunMode::TwoStage => {}
        RunMode::Drift => {
            if workload.drift_pattern_sets < 2 {
                return Err(Error::config(
                    "workload.drift-pattern-sets",
                    "drift mode needs at least 2 pattern sets",
                ));
            }
            systems.retain(|m| matches!(m, SystemMode::Prefetch(_)));
            if systems.is_empty() {
                return Err(Error::config("heuristic", "drift mode needs a prefetch heuristic"));
            }
        }
        RunMode::OverheadZeroCache => {
            if s.raw("cache.main-bytes").is_some() && cache.main_bytes != 0 {
                return Err(Error::config(
                    "cache.main-bytes",
                    "overhead-zero-cache runs with a zero-sized cache",
                ));
            }
            cache.main_bytes = 0;
            if !systems.contains(&SystemMode::Passthrough) {
                systems.push(SystemMode::Passthrough);
            }
        }
    }

    let latency = LatencyModel {
        kind: s.get::<LatencyKind>("store.latency", LatencyModel::default().kind)?,
        batch_discount: s.get("store.batch-discount", LatencyModel::default().batch_discount)?,
    };
    let sd = SystemConfig::default();
    let apriori = match s.raw("apriori") {
        Some(path) => read_patterns_file(Path::new(path), workload.stage1_sessions().max(1) as u64)?,
        None => Vec::new(),
    };
    let system = SystemConfig {
        mode: sd.mode,
        cache,
        mining: mining_config(s)?,
        metastore: metastore_config(s)?,
        latency,
        time,
        gap: SessionGapConfig::new(s.get("session.gap-ms", sd.gap.gap_ms)?)?,
        cache_service_us: s.get("cache.service-us", sd.cache_service_us)?,
        max_contexts: s.get("prefetch.max-contexts", sd.max_contexts)?,
        apriori,
    };
    system.validate()?;
    Ok(ExperimentPlan {
        mode,
        workload,
        zipf_exponents,
        systems,
        system,
        out: PathBuf::from(s.raw("out").unwrap_or("out")),
        emit_plot_data,
    })
}

fn opt<T: Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

struct Outputs {
    metrics: csv::Writer<File>,
    latency: csv::Writer<File>,
    drift: csv::Writer<File>,
    log: File,
}

fn create(dir: &Path, name: &str) -> Result<File> {
    let path = dir.join(name);
    File::create(&path).map_err(|e| Error::io(&path, e))
}

fn csv_writer(dir: &Path, name: &str, header: &[&str]) -> Result<csv::Writer<File>> {
    let mut w = csv::Writer::from_writer(create(dir, name)?);
    w.write_record(header)?;
    Ok(w)
}

fn metrics_row(
    plan: &ExperimentPlan,
    heuristic: &str,
    zipf: f64,
    stage: &str,
    m: &CacheMetrics,
    rest: [String; 6],
) -> Vec<String> {
    let mut row = vec![
        plan.mode.label().to_string(),
        heuristic.to_string(),
        zipf.to_string(),
        plan.workload.sequence_factor.to_string(),
        plan.workload.seed.to_string(),
        stage.to_string(),
        m.number_of_accesses.to_string(),
        m.cache_hits.to_string(),
        m.hit_rate().to_string(),
        m.number_of_prefetches.to_string(),
        m.prefetch_hits.to_string(),
        m.precision().to_string(),
        m.evictions_main.to_string(),
        m.evictions_preemptive.to_string(),
    ];
    row.extend(rest);
    row
}

fn write_two_stage(out: &mut Outputs, plan: &ExperimentPlan, r: &RunReport) -> Result<()> {
    let common = [
        opt(r.minsup_used),
        r.patterns_stored.to_string(),
    ];
    out.metrics.write_record(metrics_row(
        plan,
        &r.mode,
        r.zipf_exponent,
        "1",
        &r.stage1,
        [
            common[0].clone(),
            common[1].clone(),
            plan.workload.stage1_sessions().to_string(),
            String::new(),
            String::new(),
            String::new(),
        ],
    ))?;
    out.metrics.write_record(metrics_row(
        plan,
        &r.mode,
        r.zipf_exponent,
        "2",
        &r.stage2,
        [
            common[0].clone(),
            common[1].clone(),
            r.sessions.to_string(),
            r.operations.to_string(),
            r.runtime_s.to_string(),
            r.throughput_ops_s.to_string(),
        ],
    ))?;
    out.latency.write_record([
        plan.mode.label().to_string(),
        r.mode.clone(),
        r.zipf_exponent.to_string(),
        plan.workload.sequence_factor.to_string(),
        plan.workload.seed.to_string(),
        r.latency.count.to_string(),
        r.latency.mean_us.to_string(),
        r.latency.median_us.to_string(),
        r.latency.p5_us.to_string(),
        r.latency.p95_us.to_string(),
    ])?;
    writeln!(
        out.log,
        "run heuristic={} zipf={} hit_rate={:.4} precision={:.4} mean_latency_us={:.1} runtime_s={:.3} minsup_used={} patterns_stored={}",
        r.mode,
        r.zipf_exponent,
        r.stage2.hit_rate(),
        r.stage2.precision(),
        r.latency.mean_us,
        r.runtime_s,
        opt(r.minsup_used),
        r.patterns_stored
    )
    .map_err(|e| Error::io("run.log", e))
}

fn write_drift(out: &mut Outputs, plan: &ExperimentPlan, zipf: f64, run: &DriftRun) -> Result<()> {
    for set in &run.sets {
        let blank = || String::new();
        out.metrics.write_record(metrics_row(
            plan,
            &run.mode,
            zipf,
            &set.label,
            &set.metrics,
            [blank(), blank(), plan.workload.session_count.to_string(), blank(), blank(), blank()],
        ))?;
    }
    for w in &run.windows {
        out.drift.write_record([
            plan.mode.label().to_string(),
            run.mode.clone(),
            zipf.to_string(),
            plan.workload.sequence_factor.to_string(),
            plan.workload.seed.to_string(),
            crate::workload::set_label(w.set),
            w.window.to_string(),
            w.metrics.number_of_accesses.to_string(),
            w.local_hit_rate.to_string(),
            w.global_hit_rate.to_string(),
        ])?;
    }
    let last = run.sets.last().map(|s| s.global_hit_rate).unwrap_or(0.0);
    writeln!(
        out.log,
        "drift heuristic={} zipf={} remines={} final_global_hit_rate={:.4}",
        run.mode, zipf, run.remines, last
    )
    .map_err(|e| Error::io("run.log", e))
}

/// Execute `plan`, writing every output file into `plan.out`.
pub fn execute(plan: &ExperimentPlan) -> Result<()> {
    fs::create_dir_all(&plan.out).map_err(|e| Error::io(&plan.out, e))?;
    let mut out = Outputs {
        metrics: csv_writer(&plan.out, "metrics.csv", METRICS_COLUMNS)?,
        latency: csv_writer(&plan.out, "latency.csv", LATENCY_COLUMNS)?,
        drift: csv_writer(&plan.out, "drift.csv", DRIFT_COLUMNS)?,
        log: create(&plan.out, "run.log")?,
    };
    writeln!(
        out.log,
        "mode={} seed={} time={:?} sessions={} containers={} pool={} cache_main_bytes={} latency={} batch_discount={}",
        plan.mode.label(),
        plan.workload.seed,
        plan.system.time,
        plan.workload.session_count,
        plan.workload.container_count,
        plan.workload.freq_seq_count,
        plan.system.cache.main_bytes,
        plan.system.latency.kind,
        plan.system.latency.batch_discount,
    )
    .map_err(|e| Error::io("run.log", e))?;

    let mut reports: Vec<RunReport> = Vec::new();
    let mut drifts: Vec<(f64, DriftRun)> = Vec::new();
    let mut patterns_written = false;
    for &zipf in &plan.zipf_exponents {
        let workload = WorkloadConfig {
            zipf_exponent: zipf,
            ..plan.workload.clone()
        };
        for &mode in &plan.systems {
            let system = SystemConfig {
                mode,
                ..plan.system.clone()
            };
            match plan.mode {
                RunMode::TwoStage | RunMode::OverheadZeroCache => {
                    let r = run_two_stage(&workload, &system)?;
                    write_two_stage(&mut out, plan, &r)?;
                    if !patterns_written && r.minsup_used.is_some() {
                        write_patterns_file(&plan.out.join("patterns.txt"), &r.patterns)?;
                        patterns_written = true;
                    }
                    reports.push(r);
                }
                RunMode::Drift => {
                    let r = run_drift(&workload, &system)?;
                    write_drift(&mut out, plan, zipf, &r.prefetch)?;
                    write_drift(&mut out, plan, zipf, &r.cache_only)?;
                    drifts.push((zipf, r.prefetch));
                    drifts.push((zipf, r.cache_only));
                }
            }
        }
    }
    if !patterns_written {
        write_patterns_file(&plan.out.join("patterns.txt"), &[])?;
    }
    if plan.mode == RunMode::OverheadZeroCache {
        for &zipf in &plan.zipf_exponents {
            let at = |label: &str| {
                reports
                    .iter()
                    .find(|r| r.zipf_exponent == zipf && r.mode == label)
                    .map(|r| r.runtime_s)
            };
            if let Some(base) = at("passthrough").filter(|b| *b > 0.0) {
                for r in reports.iter().filter(|r| r.zipf_exponent == zipf && r.mode != "passthrough") {
                    writeln!(
                        out.log,
                        "overhead heuristic={} zipf={} runtime_ratio={:.4}",
                        r.mode,
                        zipf,
                        r.runtime_s / base
                    )
                    .map_err(|e| Error::io("run.log", e))?;
                }
            }
        }
    }
    out.metrics.flush().map_err(|e| Error::io("metrics.csv", e))?;
    out.latency.flush().map_err(|e| Error::io("latency.csv", e))?;
    out.drift.flush().map_err(|e| Error::io("drift.csv", e))?;
    if plan.emit_plot_data {
        write_plot_data(&plan.out, &reports, &drifts)?;
    }
    Ok(())
}

fn write_plot_data(dir: &Path, reports: &[RunReport], drifts: &[(f64, DriftRun)]) -> Result<()> {
    let mut hit = csv_writer(dir, "plot_hit_rate.csv", &["heuristic", "zipf_exponent", "hit_rate"])?;
    let mut precision =
        csv_writer(dir, "plot_precision.csv", &["heuristic", "zipf_exponent", "precision"])?;
    let mut latency = csv_writer(
        dir,
        "plot_latency.csv",
        &["heuristic", "zipf_exponent", "mean_us", "median_us", "p5_us", "p95_us"],
    )?;
    for r in reports {
        let z = r.zipf_exponent.to_string();
        hit.write_record([r.mode.clone(), z.clone(), r.stage2.hit_rate().to_string()])?;
        precision.write_record([r.mode.clone(), z.clone(), r.stage2.precision().to_string()])?;
        latency.write_record([
            r.mode.clone(),
            z,
            r.latency.mean_us.to_string(),
            r.latency.median_us.to_string(),
            r.latency.p5_us.to_string(),
            r.latency.p95_us.to_string(),
        ])?;
    }
    let mut drift = csv_writer(
        dir,
        "plot_drift.csv",
        &["heuristic", "zipf_exponent", "set", "window", "local_hit_rate", "global_hit_rate"],
    )?;
    for (zipf, run) in drifts {
        for w in &run.windows {
            drift.write_record([
                run.mode.clone(),
                zipf.to_string(),
                crate::workload::set_label(w.set),
                w.window.to_string(),
                w.local_hit_rate.to_string(),
                w.global_hit_rate.to_string(),
            ])?;
        }
    }
    for w in [&mut hit, &mut precision, &mut latency, &mut drift] {
        w.flush().map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn cmd_run(global: &ArgMatches, sub: &ArgMatches) -> Result<()> {
    let settings = Settings::from_matches(global, sub)?;
    let plan = experiment_plan(&settings, time_mode(global), sub.get_flag("emit-plot-data"))?;
    execute(&plan)
}

/// Outcome of [`mine_file`].
#[derive(Debug, Clone)]
pub struct MineSummary {
    pub sessions: usize,
    pub minsup_used: f64,
    pub patterns: usize,
}

fn looks_like_log(text: &str) -> bool {
    text.lines()
        .find(|l| !l.trim().is_empty())
        .is_some_and(|l| l.contains('\t'))
}

/// Mine `input` (raw log or session database) and write the ranked,
/// capped patterns to `output`.
pub fn mine_file(
    input: &Path,
    output: &Path,
    mining: &MiningConfig,
    metastore: &MetastoreConfig,
    gap: SessionGapConfig,
    fixed_minsup: Option<f64>,
) -> Result<MineSummary> {
    let text = fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
    let sessions = if looks_like_log(&text) {
        let mut records = read_log_file(input)?;
        sort_records(&mut records);
        segment(&records, gap)?
    } else {
        read_session_db(input)?
    };
    let db = SequenceDatabase::new(sessions);
    let (patterns, minsup_used) = match fixed_minsup {
        Some(minsup) => (mine_maximal(&db, minsup, mining)?, minsup),
        None => {
            let r = mine_adaptive(&db, mining)?;
            (r.patterns, r.minsup_used)
        }
    };
    let kept = rank_and_cap(patterns, metastore);
    write_patterns_file(output, &kept)?;
    Ok(MineSummary {
        sessions: db.len(),
        minsup_used,
        patterns: kept.len(),
    })
}

fn cmd_mine(global: &ArgMatches, sub: &ArgMatches) -> Result<()> {
    let settings = Settings::from_matches(global, sub)?;
    let input = PathBuf::from(sub.get_one::<String>("input").expect("required"));
    let output = match sub.get_one::<String>("output") {
        Some(p) => PathBuf::from(p),
        None => {
            let dir = PathBuf::from(settings.raw("out").unwrap_or("out"));
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            dir.join("patterns.txt")
        }
    };
    let fixed = match settings.raw("minsup") {
        Some(_) => Some(settings.get::<f64>("minsup", 0.0)?),
        None => None,
    };
    let gap = SessionGapConfig::new(settings.get("session.gap-ms", SessionGapConfig::default().gap_ms)?)?;
    let summary = mine_file(
        &input,
        &output,
        &mining_config(&settings)?,
        &metastore_config(&settings)?,
        gap,
        fixed,
    )?;
    println!(
        "sessions={} minsup_used={} patterns={} output={}",
        summary.sessions,
        summary.minsup_used,
        summary.patterns,
        output.display()
    );
    Ok(())
}

/// Merge the `metrics.csv` of every directory into `output`, ordered by
/// (mode, heuristic, zipf_exponent, sequence_factor) and otherwise keeping
/// input order. A `source` column records the originating directory.
pub fn merge_reports(dirs: &[PathBuf], output: &Path) -> Result<usize> {
    let mut rows: Vec<Vec<String>> = Vec::new();
    for dir in dirs {
        let path = dir.join("metrics.csv");
        let mut reader = csv::Reader::from_path(&path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(&path, io),
            other => Error::Parse {
                path: path.clone(),
                line: 1,
                reason: format!("{other:?}"),
            },
        })?;
        let header = reader.headers()?.clone();
        let positions = METRICS_COLUMNS
            .iter()
            .map(|col| {
                header.iter().position(|h| h == *col).ok_or_else(|| Error::Parse {
                    path: path.clone(),
                    line: 1,
                    reason: format!("missing column `{col}`"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        for record in reader.records() {
            let record = record?;
            let mut row: Vec<String> = positions
                .iter()
                .map(|&i| record.get(i).unwrap_or("").to_string())
                .collect();
            row.push(dir.display().to_string());
            rows.push(row);
        }
    }
    let num = |s: &str| s.parse::<f64>().unwrap_or(f64::NAN);
    rows.sort_by(|a, b| {
        a[0].cmp(&b[0])
            .then_with(|| a[1].cmp(&b[1]))
            .then_with(|| num(&a[2]).total_cmp(&num(&b[2])))
            .then_with(|| num(&a[3]).total_cmp(&num(&b[3])))
    });
    let file = File::create(output).map_err(|e| Error::io(output, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header: Vec<&str> = METRICS_COLUMNS.to_vec();
    header.push("source");
    w.write_record(&header)?;
    for row in &rows {
        w.write_record(row)?;
    }
    w.flush().map_err(|e| Error::io(output, e))?;
    Ok(rows.len())
}

fn cmd_report(sub: &ArgMatches) -> Result<()> {
    let dirs: Vec<PathBuf> = sub
        .get_many::<String>("dirs")
        .expect("required")
        .map(PathBuf::from)
        .collect();
    let output = PathBuf::from(sub.get_one::<String>("output").expect("required"));
    let n = merge_reports(&dirs, &output)?;
    println!("rows={n} output={}", output.display());
    Ok(())
}
