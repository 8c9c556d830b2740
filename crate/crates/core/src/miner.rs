//! Maximal contiguous sequential pattern mining.
//!
//! With a maximum gap of one, an occurrence of a pattern is a contiguous run
//! of items in a session, so mining reduces to frequent-substring discovery
//! over the container alphabet. Support is counted once per session.
//!
//! [`mine_maximal`] grows patterns to the right from every frequent item,
//! carrying the list of occurrence positions. Contiguous containment is
//! downward closed, so a pattern is non-maximal exactly when one of its
//! one-item extensions (left or right) is frequent and still within the
//! length bound. [`mine_maximal_bruteforce`] enumerates every substring and
//! checks maximality pairwise; it exists to verify the fast path.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::types::{cmp_items, decode_container, DataContainer, SequencePattern, Session};

#[derive(Debug, Clone, PartialEq)]
pub struct MiningConfig {
    pub min_len: usize,
    pub max_len: usize,
    /// Only contiguous occurrences are supported; must be 1.
    pub max_gap: usize,
    pub min_sup_start: f64,
    pub min_sup_floor: f64,
    pub min_sup_step: f64,
    pub min_pattern_count: usize,
    /// Wall-clock budget of a single mining pass.
    pub budget: Duration,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            min_len: 3,
            max_len: 15,
            max_gap: 1,
            min_sup_start: 0.5,
            min_sup_floor: 0.01,
            min_sup_step: 0.05,
            min_pattern_count: 10,
            budget: Duration::from_secs(60),
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_len < 2 || self.min_len > self.max_len {
            return Err(Error::config(
                "mining.min-len",
                format!("need 2 <= min-len <= max-len, got {} and {}", self.min_len, self.max_len),
            ));
        }
        if self.max_gap != 1 {
            return Err(Error::config("mining.max-gap", "only a gap of 1 is supported"));
        }
        if !(self.min_sup_floor > 0.0
            && self.min_sup_floor <= self.min_sup_start
            && self.min_sup_start <= 1.0)
        {
            return Err(Error::config(
                "mining.min-sup-floor",
                "need 0 < min-sup-floor <= min-sup-start <= 1",
            ));
        }
        if self.min_sup_step.is_nan() || self.min_sup_step <= 0.0 {
            return Err(Error::config("mining.min-sup-step", "must be > 0"));
        }
        Ok(())
    }
}

/// Immutable snapshot of sessions to mine.
#[derive(Debug, Clone, Default)]
pub struct SequenceDatabase {
    sessions: Vec<Session>,
    item_universe: BTreeSet<DataContainer>,
}

impl SequenceDatabase {
    pub fn new(sessions: Vec<Session>) -> Self {
        let item_universe = sessions
            .iter()
            .flat_map(|s| s.items().iter().cloned())
            .collect();
        Self {
            sessions,
            item_universe,
        }
    }

    pub fn sessions(&self) -> &[Session] {
        &self.sessions
    }

    pub fn item_universe(&self) -> &BTreeSet<DataContainer> {
        &self.item_universe
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }
}

/// Cooperative cancellation for a mining pass.
#[derive(Debug, Default, Clone, Copy)]
pub struct MiningControl<'a> {
    pub cancel: Option<&'a AtomicBool>,
}

/// True iff `pattern` occurs contiguously in `session`.
pub fn occurs(pattern: &[DataContainer], session: &Session) -> bool {
    contains_run(session.items(), pattern)
}

fn contains_run<T: PartialEq>(haystack: &[T], needle: &[T]) -> bool {
    needle.is_empty() || haystack.windows(needle.len()).any(|w| w == needle)
}

/// Number and fraction of sessions containing `pattern`.
pub fn support(pattern: &[DataContainer], db: &SequenceDatabase) -> Result<(u64, f64)> {
    if db.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    let count = db.sessions.iter().filter(|s| occurs(pattern, s)).count() as u64;
    Ok((count, count as f64 / db.len() as f64))
}

/// Smallest session count whose fraction reaches `minsup`.
fn min_count_for(minsup: f64, sessions: usize) -> u64 {
    (1..=sessions as u64)
        .find(|&c| meets(c, sessions, minsup))
        .unwrap_or(sessions as u64 + 1)
}

fn meets(count: u64, sessions: usize, minsup: f64) -> bool {
    count as f64 / sessions as f64 >= minsup - 1e-12
}

/// Deterministic output order: support desc, length desc, items ascending.
pub fn sort_patterns(patterns: &mut [SequencePattern]) {
    patterns.sort_by(|a, b| {
        b.support_count
            .cmp(&a.support_count)
            .then(b.items.len().cmp(&a.items.len()))
            .then_with(|| cmp_items(&a.items, &b.items))
    });
}

pub fn mine_maximal(
    db: &SequenceDatabase,
    minsup: f64,
    cfg: &MiningConfig,
) -> Result<Vec<SequencePattern>> {
    mine_maximal_with(db, minsup, cfg, MiningControl::default())
}

pub fn mine_maximal_with(
    db: &SequenceDatabase,
    minsup: f64,
    cfg: &MiningConfig,
    control: MiningControl<'_>,
) -> Result<Vec<SequencePattern>> {
    if db.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    cfg.validate()?;
    if !(minsup > 0.0 && minsup <= 1.0) {
        return Err(Error::config("minsup", format!("must be in (0, 1], got {minsup}")));
    }

    // Items are interned as indices into the sorted universe, so index order
    // is encoding order.
    let alphabet: Vec<DataContainer> = db.item_universe.iter().cloned().collect();
    let index: HashMap<&DataContainer, u32> = alphabet
        .iter()
        .enumerate()
        .map(|(i, c)| (c, i as u32))
        .collect();
    let sequences: Vec<Vec<u32>> = db
        .sessions
        .iter()
        .map(|s| s.items().iter().map(|c| index[c]).collect())
        .collect();

    let mut search = Search {
        sequences: &sequences,
        min_count: min_count_for(minsup, db.len()),
        cfg,
        control,
        started: Instant::now(),
        found: Vec::new(),
    };

    let mut first: HashMap<u32, Vec<Occurrence>> = HashMap::new();
    for (sid, seq) in sequences.iter().enumerate() {
        for (pos, &item) in seq.iter().enumerate() {
            first.entry(item).or_default().push(Occurrence {
                sid: sid as u32,
                pos: pos as u32,
            });
        }
    }
    let mut roots: Vec<(u32, Vec<Occurrence>)> = first
        .into_iter()
        .filter(|(_, occ)| distinct_sessions(occ) >= search.min_count)
        .collect();
    roots.sort_by_key(|(item, _)| *item);

    let mut prefix = Vec::with_capacity(cfg.max_len);
    for (item, occ) in roots {
        prefix.push(item);
        search.grow(&mut prefix, &occ)?;
        prefix.pop();
    }

    let total = db.len() as f64;
    let mut patterns: Vec<SequencePattern> = search
        .found
        .into_iter()
        .map(|(items, count)| {
            SequencePattern::new(
                items.iter().map(|&i| alphabet[i as usize].clone()).collect(),
                count,
                count as f64 / total,
            )
        })
        .collect();
    sort_patterns(&mut patterns);
    Ok(patterns)
}

#[derive(Debug, Clone, Copy)]
struct Occurrence {
    sid: u32,
    pos: u32,
}

/// Occurrence lists are sorted by session, so distinct sessions are runs.
fn distinct_sessions(occ: &[Occurrence]) -> u64 {
    let mut count = 0;
    let mut last = None;
    for o in occ {
        if last != Some(o.sid) {
            count += 1;
            last = Some(o.sid);
        }
    }
    count
}

struct Search<'a> {
    sequences: &'a [Vec<u32>],
    min_count: u64,
    cfg: &'a MiningConfig,
    control: MiningControl<'a>,
    started: Instant,
    found: Vec<(Vec<u32>, u64)>,
}

impl Search<'_> {
    fn check_budget(&self) -> Result<()> {
        if self
            .control
            .cancel
            .is_some_and(|c| c.load(Ordering::Relaxed))
        {
            return Err(Error::MiningCancelled);
        }
        if self.started.elapsed() > self.cfg.budget {
            return Err(Error::MiningBudgetExceeded {
                budget_ms: self.cfg.budget.as_millis() as u64,
            });
        }
        Ok(())
    }

    fn grow(&mut self, prefix: &mut Vec<u32>, occ: &[Occurrence]) -> Result<()> {
        self.check_budget()?;
        let len = prefix.len();

        // Right extensions, keyed by the next item, each with its
        // (still session-sorted) occurrence list.
        let mut right: Vec<(u32, Vec<Occurrence>)> = Vec::new();
        if len < self.cfg.max_len {
            let mut by_item: HashMap<u32, Vec<Occurrence>> = HashMap::new();
            for o in occ {
                let seq = &self.sequences[o.sid as usize];
                if let Some(&next) = seq.get(o.pos as usize + len) {
                    by_item.entry(next).or_default().push(*o);
                }
            }
            right = by_item
                .into_iter()
                .filter(|(_, o)| distinct_sessions(o) >= self.min_count)
                .collect();
            right.sort_by_key(|(item, _)| *item);
        }

        if len >= self.cfg.min_len {
            let maximal = len == self.cfg.max_len
                || (right.is_empty() && !self.has_frequent_left_extension(occ));
            if maximal {
                self.found.push((prefix.clone(), distinct_sessions(occ)));
            }
        }

        for (item, ext) in right {
            prefix.push(item);
            self.grow(prefix, &ext)?;
            prefix.pop();
        }
        Ok(())
    }

    fn has_frequent_left_extension(&self, occ: &[Occurrence]) -> bool {
        let mut by_item: HashMap<u32, (u64, u32)> = HashMap::new();
        for o in occ.iter().filter(|o| o.pos > 0) {
            let prev = self.sequences[o.sid as usize][o.pos as usize - 1];
            let entry = by_item.entry(prev).or_insert((0, u32::MAX));
            if entry.1 != o.sid {
                entry.0 += 1;
                entry.1 = o.sid;
                if entry.0 >= self.min_count {
                    return true;
                }
            }
        }
        false
    }
}

/// Exhaustive reference miner for small databases.
pub fn mine_maximal_bruteforce(
    db: &SequenceDatabase,
    minsup: f64,
    cfg: &MiningConfig,
) -> Result<Vec<SequencePattern>> {
    if db.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    let mut counts: HashMap<Vec<DataContainer>, u64> = HashMap::new();
    for session in &db.sessions {
        let items = session.items();
        let mut seen: HashSet<&[DataContainer]> = HashSet::new();
        for start in 0..items.len() {
            for len in cfg.min_len..=cfg.max_len {
                if start + len > items.len() {
                    break;
                }
                seen.insert(&items[start..start + len]);
            }
        }
        for run in seen {
            *counts.entry(run.to_vec()).or_default() += 1;
        }
    }
    let frequent: Vec<(Vec<DataContainer>, u64)> = counts
        .into_iter()
        .filter(|(_, c)| meets(*c, db.len(), minsup))
        .collect();
    let mut patterns: Vec<SequencePattern> = frequent
        .iter()
        .filter(|(p, _)| {
            !frequent
                .iter()
                .any(|(q, _)| q.len() > p.len() && contains_run(q, p))
        })
        .map(|(p, c)| SequencePattern::new(p.clone(), *c, *c as f64 / db.len() as f64))
        .collect();
    sort_patterns(&mut patterns);
    Ok(patterns)
}

/// Result of [`mine_adaptive`].
#[derive(Debug, Clone)]
pub struct AdaptiveResult {
    pub patterns: Vec<SequencePattern>,
    pub minsup_used: f64,
    pub passes: usize,
}

/// Lower the minimum support from `min_sup_start` in steps of
/// `min_sup_step` until at least `min_pattern_count` patterns are found,
/// finishing with a pass at `min_sup_floor` if the grid runs out.
pub fn mine_adaptive(db: &SequenceDatabase, cfg: &MiningConfig) -> Result<AdaptiveResult> {
    mine_adaptive_with(db, cfg, MiningControl::default())
}

pub fn mine_adaptive_with(
    db: &SequenceDatabase,
    cfg: &MiningConfig,
    control: MiningControl<'_>,
) -> Result<AdaptiveResult> {
    if db.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    cfg.validate()?;
    for (pass, minsup) in support_grid(cfg).into_iter().enumerate() {
        let patterns = mine_maximal_with(db, minsup, cfg, control)?;
        let passes = pass + 1;
        if patterns.len() >= cfg.min_pattern_count || minsup <= cfg.min_sup_floor {
            return Ok(AdaptiveResult {
                patterns,
                minsup_used: minsup,
                passes,
            });
        }
    }
    unreachable!("the support grid always ends at the floor")
}

/// `start, start - step, ...` while above the floor, then the floor itself.
pub fn support_grid(cfg: &MiningConfig) -> Vec<f64> {
    let round = |x: f64| (x * 1e9).round() / 1e9;
    let mut grid = Vec::new();
    let mut k = 0u32;
    loop {
        let minsup = round(cfg.min_sup_start - f64::from(k) * cfg.min_sup_step);
        if minsup <= cfg.min_sup_floor + 1e-12 {
            break;
        }
        grid.push(minsup);
        k += 1;
    }
    grid.push(cfg.min_sup_floor);
    grid
}

/// Parse a session database: one session per line, items are encoded
/// containers separated by a single space, blank lines ignored.
pub fn parse_session_db(text: &str, origin: &Path) -> Result<Vec<Session>> {
    let mut sessions = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |reason: String| Error::Parse {
            path: origin.to_owned(),
            line: n + 1,
            reason,
        };
        let items = line
            .split(' ')
            .map(|tok| {
                if tok.is_empty() {
                    Err(parse_err("items must be separated by a single space".into()))
                } else {
                    decode_container(tok).map_err(|e| parse_err(e.to_string()))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        sessions.push(Session::untimed(sessions.len() as u64, items)?);
    }
    Ok(sessions)
}

pub fn read_session_db(path: &Path) -> Result<Vec<Session>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    for line in BufReader::new(file).lines() {
        text.push_str(&line.map_err(|e| Error::io(path, e))?);
        text.push('\n');
    }
    parse_session_db(&text, path)
}

pub fn write_session_db(path: &Path, sessions: &[Session]) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for s in sessions {
        writeln!(out, "{}", crate::types::join_encoded(s.items())).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
