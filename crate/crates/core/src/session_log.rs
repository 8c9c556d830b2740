//! Read-request backlog and time-gap session segmentation.
//!
//! Log file format, one record per `\n`-terminated UTF-8 line, no header:
//!
//! ```text
//! <clientId>\t<timestampMs>\t<encoded container>
//! ```

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use crossbeam::channel::{self, Receiver, Sender};

use crate::error::{Error, Result};
use crate::types::{decode_container, DataContainer, Session};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    pub client_id: u64,
    pub timestamp_ms: u64,
    pub container: DataContainer,
}

impl LogRecord {
    pub fn new(client_id: u64, timestamp_ms: u64, container: DataContainer) -> Self {
        Self {
            client_id,
            timestamp_ms,
            container,
        }
    }

    /// The record as one log line, including the trailing newline.
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\n",
            self.client_id,
            self.timestamp_ms,
            self.container.encoded()
        )
    }

    /// Parse one line (with or without its trailing newline).
    pub fn parse_line(line: &str) -> std::result::Result<Self, String> {
        let line = line.strip_suffix('\n').unwrap_or(line);
        let mut fields = line.split('\t');
        let (Some(client), Some(ts), Some(key), None) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err("expected three tab-separated fields".into());
        };
        let client_id = client
            .parse()
            .map_err(|_| format!("invalid client id {client:?}"))?;
        let timestamp_ms = ts
            .parse()
            .map_err(|_| format!("invalid timestamp {ts:?}"))?;
        let container = decode_container(key).map_err(|e| e.to_string())?;
        Ok(Self::new(client_id, timestamp_ms, container))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionGapConfig {
    pub gap_ms: u64,
}

impl SessionGapConfig {
    pub fn new(gap_ms: u64) -> Result<Self> {
        if gap_ms == 0 {
            return Err(Error::config("session.gap-ms", "must be > 0"));
        }
        Ok(Self { gap_ms })
    }
}

impl Default for SessionGapConfig {
    fn default() -> Self {
        Self { gap_ms: 30_000 }
    }
}

/// Stable sort into the `(client, timestamp)` order `segment` expects.
pub fn sort_records(records: &mut [LogRecord]) {
    records.sort_by_key(|r| (r.client_id, r.timestamp_ms));
}

/// Split records into per-client sessions: a new session starts whenever
/// two consecutive reads of the same client are more than `gap_ms` apart.
/// Session ids are assigned from 0 in input order.
pub fn segment(records: &[LogRecord], cfg: SessionGapConfig) -> Result<Vec<Session>> {
    if let Some(index) = records.windows(2).position(|w| {
        (w[1].client_id, w[1].timestamp_ms) < (w[0].client_id, w[0].timestamp_ms)
    }) {
        return Err(Error::UnsortedInput { index: index + 1 });
    }

    let mut sessions = Vec::new();
    let mut items = Vec::new();
    let mut stamps = Vec::new();
    let mut prev: Option<&LogRecord> = None;
    for record in records {
        let boundary = match prev {
            None => false,
            Some(p) => {
                p.client_id != record.client_id || record.timestamp_ms - p.timestamp_ms > cfg.gap_ms
            }
        };
        if boundary {
            let id = sessions.len() as u64;
            sessions.push(Session::new(
                id,
                std::mem::take(&mut items),
                std::mem::take(&mut stamps),
            )?);
        }
        items.push(record.container.clone());
        stamps.push(record.timestamp_ms);
        prev = Some(record);
    }
    if !items.is_empty() {
        let id = sessions.len() as u64;
        sessions.push(Session::new(id, items, stamps)?);
    }
    Ok(sessions)
}

/// Read every record of a log file.
pub fn read_log_file(path: &Path) -> Result<Vec<LogRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let record = LogRecord::parse_line(&line).map_err(|reason| Error::Parse {
            path: path.to_owned(),
            line: n + 1,
            reason,
        })?;
        records.push(record);
    }
    Ok(records)
}

pub type ErrorCallback = Arc<dyn Fn(&Error) + Send + Sync>;

enum WriterMsg {
    Record(LogRecord),
    Flush(Sender<()>),
}

struct FileSink {
    tx: Option<Sender<WriterMsg>>,
    handle: Option<JoinHandle<()>>,
    base: PathBuf,
    segments: Arc<AtomicU64>,
}

/// Concurrent append-only backlog of read requests.
///
/// Every record is kept in memory for mining snapshots. When a file sink is
/// configured, a single background thread also drains records to disk;
/// `append` itself only enqueues.
pub struct SessionLog {
    records: Mutex<Vec<LogRecord>>,
    sink: Option<FileSink>,
    io_failures: Arc<AtomicU64>,
}

impl SessionLog {
    pub fn in_memory() -> Self {
        Self {
            records: Mutex::new(Vec::new()),
            sink: None,
            io_failures: Arc::new(AtomicU64::new(0)),
        }
    }

    /// Log that also writes to `path`. With `max_segment_bytes`, the writer
    /// rolls over to `path.1`, `path.2`, ... once a segment reaches that size.
    pub fn with_file(
        path: impl Into<PathBuf>,
        max_segment_bytes: Option<u64>,
        on_error: Option<ErrorCallback>,
    ) -> Result<Self> {
        let base: PathBuf = path.into();
        let first = File::create(&base).map_err(|e| Error::io(&base, e))?;
        let (tx, rx) = channel::unbounded();
        let io_failures = Arc::new(AtomicU64::new(0));
        let segments = Arc::new(AtomicU64::new(1));
        let handle = {
            let base = base.clone();
            let failures = Arc::clone(&io_failures);
            let segments = Arc::clone(&segments);
            std::thread::Builder::new()
                .name("session-log-writer".into())
                .spawn(move || {
                    writer_loop(rx, first, base, max_segment_bytes, failures, segments, on_error)
                })
                .map_err(|e| Error::io("session-log-writer", e))?
        };
        Ok(Self {
            records: Mutex::new(Vec::new()),
            sink: Some(FileSink {
                tx: Some(tx),
                handle: Some(handle),
                base,
                segments,
            }),
            io_failures,
        })
    }

    pub fn append(&self, record: LogRecord) {
        if let Some(tx) = self.sink.as_ref().and_then(|s| s.tx.as_ref()) {
            // A closed channel only happens during drop.
            let _ = tx.send(WriterMsg::Record(record.clone()));
        }
        self.records.lock().unwrap().push(record);
    }

    pub fn len(&self) -> usize {
        self.records.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> Vec<LogRecord> {
        self.records.lock().unwrap().clone()
    }

    /// Records appended at or after `offset`, plus the offset to resume from.
    pub fn snapshot_since(&self, offset: usize) -> (Vec<LogRecord>, usize) {
        let records = self.records.lock().unwrap();
        let start = offset.min(records.len());
        (records[start..].to_vec(), records.len())
    }

    /// Block until every record appended so far has reached the file.
    pub fn flush(&self) {
        if let Some(tx) = self.sink.as_ref().and_then(|s| s.tx.as_ref()) {
            let (ack_tx, ack_rx) = channel::bounded(1);
            if tx.send(WriterMsg::Flush(ack_tx)).is_ok() {
                let _ = ack_rx.recv();
            }
        }
    }

    /// Paths of all file segments written so far, oldest first.
    pub fn segment_paths(&self) -> Vec<PathBuf> {
        let Some(sink) = &self.sink else {
            return Vec::new();
        };
        (0..sink.segments.load(Ordering::SeqCst))
            .map(|i| segment_path(&sink.base, i))
            .collect()
    }

    pub fn io_failures(&self) -> u64 {
        self.io_failures.load(Ordering::Relaxed)
    }
}

impl Drop for SessionLog {
    fn drop(&mut self) {
        if let Some(sink) = &mut self.sink {
            drop(sink.tx.take());
            if let Some(handle) = sink.handle.take() {
                let _ = handle.join();
            }
        }
    }
}

fn segment_path(base: &Path, index: u64) -> PathBuf {
    if index == 0 {
        base.to_owned()
    } else {
        let mut name = base.as_os_str().to_owned();
        name.push(format!(".{index}"));
        PathBuf::from(name)
    }
}

fn writer_loop(
    rx: Receiver<WriterMsg>,
    first: File,
    base: PathBuf,
    max_segment_bytes: Option<u64>,
    failures: Arc<AtomicU64>,
    segments: Arc<AtomicU64>,
    on_error: Option<ErrorCallback>,
) {
    let mut out = BufWriter::new(first);
    let mut written = 0u64;
    let mut current = segment_path(&base, 0);
    let report = |path: &Path, e: std::io::Error| {
        failures.fetch_add(1, Ordering::Relaxed);
        if let Some(cb) = &on_error {
            cb(&Error::io(path, e));
        }
    };
    for msg in rx {
        match msg {
            WriterMsg::Record(record) => {
                let line = record.to_line();
                if let Some(limit) = max_segment_bytes {
                    if written > 0 && written + line.len() as u64 > limit {
                        if let Err(e) = out.flush() {
                            report(&current, e);
                        }
                        let index = segments.load(Ordering::SeqCst);
                        current = segment_path(&base, index);
                        match OpenOptions::new()
                            .create(true)
                            .write(true)
                            .truncate(true)
                            .open(&current)
                        {
                            Ok(f) => {
                                out = BufWriter::new(f);
                                segments.store(index + 1, Ordering::SeqCst);
                                written = 0;
                            }
                            Err(e) => report(&current, e),
                        }
                    }
                }
                match out.write_all(line.as_bytes()) {
                    Ok(()) => written += line.len() as u64,
                    Err(e) => report(&current, e),
                }
            }
            WriterMsg::Flush(ack) => {
                if let Err(e) = out.flush() {
                    report(&current, e);
                }
                let _ = ack.send(());
            }
        }
    }
    if let Err(e) = out.flush() {
        report(&current, e);
    }
}
