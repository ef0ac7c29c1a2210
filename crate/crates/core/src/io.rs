//! On-disk formats.
//!
//! Every JSONL file starts with a header line naming its schema version and
//! kind; each following line is one record. Snapshot files also carry the
//! checkpoint grid and embedding dimension, so a store can be rebuilt from
//! its two files alone (grid snapshots plus converged embeddings).
//!
//! All writes go through [`write_atomic`]: the bytes land in a temporary
//! sibling that is then renamed over the target.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::pipeline::ModeKind;
use crate::sim::{GroundTruth, ScheduleEntry};
use crate::types::{
    CheckpointGrid, EmbeddingSnapshot, EventLog, InteractionEvent, SignalType, SnapshotStore, LOG_SCHEMA_VERSION,
};

pub const MANIFEST_SCHEMA_VERSION: &str = "embcycle-manifest-v1";
pub const MANIFEST_FILE: &str = "manifest.json";

/// First line of every JSONL file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogHeader {
    pub schema: String,
    pub kind: LogKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<CheckpointGrid>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogKind {
    Events,
    Snapshots,
    Converged,
    Schedule,
}

impl LogKind {
    fn as_str(self) -> &'static str {
        match self {
            LogKind::Events => "events",
            LogKind::Snapshots => "snapshots",
            LogKind::Converged => "converged",
            LogKind::Schedule => "schedule",
        }
    }
}

impl LogHeader {
    fn new(kind: LogKind) -> Self {
        LogHeader {
            schema: LOG_SCHEMA_VERSION.to_string(),
            kind,
            k_dim: None,
            grid: None,
        }
    }

    fn for_store(kind: LogKind, store: &SnapshotStore) -> Self {
        LogHeader {
            k_dim: Some(store.k_dim()),
            grid: Some(store.grid().clone()),
            ..LogHeader::new(kind)
        }
    }
}

/// Writes `bytes` to a temporary sibling of `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp_name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()
    };
    write().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn json_line<T: Serialize>(out: &mut String, value: &T) {
    out.push_str(&serde_json::to_string(value).expect("record serialization cannot fail"));
    out.push('\n');
}

fn jsonl<'a, T: Serialize + 'a>(header: &LogHeader, records: impl IntoIterator<Item = &'a T>) -> String {
    let mut out = String::new();
    json_line(&mut out, header);
    for r in records {
        json_line(&mut out, r);
    }
    out
}

/// Splits a JSONL text into its header and typed records. Line numbers in
/// errors are 1-based and count the header.
fn parse_jsonl<T: DeserializeOwned>(text: &str, source_name: &str, kind: LogKind) -> Result<(LogHeader, Vec<T>)> {
    let parse_err = |line: usize, reason: String| Error::Parse {
        source_name: source_name.to_string(),
        line,
        reason,
    };
    if !text.is_empty() && !text.ends_with('\n') {
        let line = text.lines().count();
        return Err(parse_err(line, "truncated record (missing final newline)".into()));
    }
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, first) = lines.next().ok_or_else(|| parse_err(1, "missing header line".into()))?;
    let raw: serde_json::Value = serde_json::from_str(first).map_err(|e| parse_err(1, format!("bad header: {e}")))?;
    let found = raw.get("schema").and_then(|v| v.as_str()).unwrap_or("<none>");
    if found != LOG_SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            source_name: source_name.to_string(),
            expected: LOG_SCHEMA_VERSION.to_string(),
            found: found.to_string(),
        });
    }
    let header: LogHeader = serde_json::from_value(raw).map_err(|e| parse_err(1, format!("bad header: {e}")))?;
    if header.kind != kind {
        return Err(parse_err(
            1,
            format!("expected a {} file, found {}", kind.as_str(), header.kind.as_str()),
        ));
    }
    let records = lines
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| parse_err(n, e.to_string())))
        .collect::<Result<Vec<T>>>()?;
    Ok((header, records))
}

pub fn events_to_jsonl(log: &EventLog) -> String {
    jsonl(&LogHeader::new(LogKind::Events), log.iter())
}

/// Parses and validates an event log.
pub fn parse_events(text: &str, source_name: &str) -> Result<EventLog> {
    let (_, events) = parse_jsonl::<InteractionEvent>(text, source_name, LogKind::Events)?;
    let log = EventLog::new(events);
    log.validate()?;
    Ok(log)
}

pub fn snapshots_to_jsonl(store: &SnapshotStore) -> String {
    jsonl(&LogHeader::for_store(LogKind::Snapshots, store), store.snapshots())
}

pub fn converged_to_jsonl(store: &SnapshotStore) -> String {
    jsonl(&LogHeader::for_store(LogKind::Converged, store), store.iter_converged())
}

fn store_shape(header: &LogHeader, source_name: &str) -> Result<(CheckpointGrid, usize)> {
    match (&header.grid, header.k_dim) {
        (Some(g), Some(k)) => Ok((g.clone(), k)),
        _ => Err(Error::Parse {
            source_name: source_name.to_string(),
            line: 1,
            reason: "snapshot header needs grid and k_dim".into(),
        }),
    }
}

/// Rebuilds a store from its grid-snapshot and converged files.
pub fn parse_store(snapshots: (&str, &str), converged: (&str, &str)) -> Result<SnapshotStore> {
    let (snap_text, snap_name) = snapshots;
    let (conv_text, conv_name) = converged;
    let (h1, snaps) = parse_jsonl::<EmbeddingSnapshot>(snap_text, snap_name, LogKind::Snapshots)?;
    let (h2, conv) = parse_jsonl::<EmbeddingSnapshot>(conv_text, conv_name, LogKind::Converged)?;
    let (grid, k_dim) = store_shape(&h1, snap_name)?;
    if store_shape(&h2, conv_name)? != (grid.clone(), k_dim) {
        return Err(Error::Parse {
            source_name: conv_name.to_string(),
            line: 1,
            reason: format!("grid or k_dim differs from {snap_name}"),
        });
    }
    let mut store = SnapshotStore::new(grid, k_dim);
    for s in snaps {
        store.push(s)?;
    }
    for s in conv {
        store.set_converged(s)?;
    }
    Ok(store)
}

pub fn schedule_to_jsonl(schedule: &[ScheduleEntry]) -> String {
    jsonl(&LogHeader::new(LogKind::Schedule), schedule)
}

pub fn parse_schedule(text: &str, source_name: &str) -> Result<Vec<ScheduleEntry>> {
    Ok(parse_jsonl(text, source_name, LogKind::Schedule)?.1)
}

pub fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serialization cannot fail");
    s.push('\n');
    s
}

pub fn parse_json<T: DeserializeOwned>(text: &str, source_name: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        source_name: source_name.to_string(),
        line: e.line(),
        reason: e.to_string(),
    })
}

pub fn world_to_json(truth: &GroundTruth) -> String {
    to_pretty_json(truth)
}

pub fn parse_world(text: &str, source_name: &str) -> Result<GroundTruth> {
    parse_json(text, source_name)
}

/// Files holding one signal's store, relative to the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalFiles {
    pub signal: SignalType,
    pub snapshots: PathBuf,
    pub converged: PathBuf,
}

/// One training run: its event log and per-signal stores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFiles {
    pub mode: ModeKind,
    pub events: PathBuf,
    pub impressions: u64,
    pub stores: Vec<SignalFiles>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunKind {
    Simulate,
    Compare,
}

/// Index of everything a command wrote, plus the configuration echo needed
/// to recompute metrics from the logs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema: String,
    pub kind: RunKind,
    pub config: RunConfig,
    pub world: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<PathBuf>,
    pub runs: Vec<RunFiles>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        to_pretty_json(self)
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Manifest> {
        let raw: serde_json::Value = parse_json(text, source_name)?;
        let found = raw.get("schema").and_then(|v| v.as_str()).unwrap_or("<none>");
        if found != MANIFEST_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                source_name: source_name.to_string(),
                expected: MANIFEST_SCHEMA_VERSION.to_string(),
                found: found.to_string(),
            });
        }
        serde_json::from_value(raw).map_err(|e| Error::Parse {
            source_name: source_name.to_string(),
            line: 0,
            reason: e.to_string(),
        })
    }

    pub fn load(dir: &Path) -> Result<Manifest> {
        let path = dir.join(MANIFEST_FILE);
        Manifest::parse(&read_text(&path)?, &path.display().to_string())
    }
}

/// Event logs and stores loaded back from a manifest directory.
#[derive(Debug)]
pub struct LoadedRun {
    pub mode: ModeKind,
    pub log: EventLog,
    pub stores: Vec<(SignalType, SnapshotStore)>,
}

pub fn load_runs(dir: &Path, manifest: &Manifest) -> Result<Vec<LoadedRun>> {
    manifest
        .runs
        .iter()
        .map(|run| {
            let read = |rel: &Path| -> Result<(String, String)> {
                let p = dir.join(rel);
                Ok((read_text(&p)?, p.display().to_string()))
            };
            let (text, name) = read(&run.events)?;
            let log = parse_events(&text, &name)?;
            let stores = run
                .stores
                .iter()
                .map(|f| {
                    let (st, sn) = read(&f.snapshots)?;
                    let (ct, cn) = read(&f.converged)?;
                    Ok((f.signal, parse_store((&st, &sn), (&ct, &cn))?))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(LoadedRun {
                mode: run.mode,
                log,
                stores,
            })
        })
        .collect()
}
