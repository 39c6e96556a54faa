//! Profile, export, verify: the workload side of the debloating pipeline.
//!
//! Workloads are deterministic access traces. Profiling replays a trace
//! through a converted container so every touched file migrates into the
//! debloating layer(s); export freezes those layers into ordinary image
//! layers and drops everything else; verify replays a (possibly different)
//! trace against the debloated result and reports what broke.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::convert::ConvertMode;
use crate::digest::Digest;
use crate::engine::{AccessOp, AccessRecord};
use crate::error::{Error, Result};
use crate::model::{ContainerFs, EntryKind, LayerId, LayerRole, LayerStore};
use crate::path::FsPath;

/// One trace event. `data` is the payload for writes; `expect` optionally
/// pins the content digest a read must return.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub op: AccessOp,
    pub path: FsPath,
    pub data: Option<Vec<u8>>,
    pub expect: Option<Digest>,
}

impl TraceEvent {
    pub fn read(path: FsPath) -> Self {
        TraceEvent {
            op: AccessOp::Read,
            path,
            data: None,
            expect: None,
        }
    }

    pub fn stat(path: FsPath) -> Self {
        TraceEvent {
            op: AccessOp::Stat,
            path,
            data: None,
            expect: None,
        }
    }

    pub fn list(path: FsPath) -> Self {
        TraceEvent {
            op: AccessOp::List,
            path,
            data: None,
            expect: None,
        }
    }

    pub fn write(path: FsPath, data: Vec<u8>) -> Self {
        TraceEvent {
            op: AccessOp::Write,
            path,
            data: Some(data),
            expect: None,
        }
    }

    pub fn expecting(mut self, digest: Digest) -> Self {
        self.expect = Some(digest);
        self
    }
}

/// An ordered workload: the profiling input and the verification contract.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AccessTrace {
    pub events: Vec<TraceEvent>,
}

/// Line format for trace files.
#[derive(Serialize, Deserialize)]
struct TraceLine {
    op: String,
    path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    expect: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    data_b64: Option<String>,
}

impl AccessTrace {
    pub fn new(events: Vec<TraceEvent>) -> Self {
        AccessTrace { events }
    }

    /// Parse the line-delimited trace format: one JSON object per line,
    /// e.g. `{"op":"read","path":"/usr/bin/app"}`. Blank lines and `#`
    /// comment lines are skipped.
    pub fn parse_jsonl(text: &str) -> Result<Self> {
        let mut events = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let parsed: TraceLine = serde_json::from_str(trimmed).map_err(|e| Error::BadTrace {
                line: line_no,
                reason: e.to_string(),
            })?;
            let op = match parsed.op.as_str() {
                "read" => AccessOp::Read,
                "stat" => AccessOp::Stat,
                "list" => AccessOp::List,
                "write" => AccessOp::Write,
                other => {
                    return Err(Error::BadTrace {
                        line: line_no,
                        reason: format!("unknown op {other:?}"),
                    });
                }
            };
            let path = FsPath::new(&parsed.path).map_err(|e| Error::BadTrace {
                line: line_no,
                reason: e.to_string(),
            })?;
            let data = match parsed.data_b64 {
                Some(b64) => Some(
                    base64::engine::general_purpose::STANDARD
                        .decode(b64.as_bytes())
                        .map_err(|e| Error::BadTrace {
                            line: line_no,
                            reason: format!("bad data_b64: {e}"),
                        })?,
                ),
                None => None,
            };
            let expect = match parsed.expect {
                Some(s) => Some(Digest::parse(&s).map_err(|_| Error::BadTrace {
                    line: line_no,
                    reason: format!("bad expect digest {s:?}"),
                })?),
                None => None,
            };
            if op == AccessOp::Write && data.is_none() {
                return Err(Error::BadTrace {
                    line: line_no,
                    reason: "write event without data_b64".to_string(),
                });
            }
            events.push(TraceEvent {
                op,
                path,
                data,
                expect,
            });
        }
        Ok(AccessTrace { events })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for ev in &self.events {
            let line = TraceLine {
                op: match ev.op {
                    AccessOp::Read => "read",
                    AccessOp::Stat => "stat",
                    AccessOp::List => "list",
                    AccessOp::Write => "write",
                }
                .to_string(),
                path: ev.path.as_str().to_string(),
                expect: ev.expect.as_ref().map(|d| d.to_string()),
                data_b64: ev
                    .data
                    .as_ref()
                    .map(|d| base64::engine::general_purpose::STANDARD.encode(d)),
            };
            out.push_str(&serde_json::to_string(&line).expect("trace line serializes"));
            out.push('\n');
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_jsonl(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }
}

/// Replay a trace through a converted container. Touched files migrate as a
/// side effect; per-event misses are recorded in the returned record, never
/// raised.
pub fn profile(store: &mut LayerStore, fs: &ContainerFs, trace: &AccessTrace) -> AccessRecord {
    let mut rec = AccessRecord::new();
    for ev in &trace.events {
        match ev.op {
            AccessOp::Read => {
                let _ = store.read(fs, &ev.path, None, &mut rec);
            }
            AccessOp::Stat => {
                let _ = store.stat(fs, &ev.path, &mut rec);
            }
            AccessOp::List => {
                let _ = store.list_dir(fs, &ev.path, &mut rec);
            }
            AccessOp::Write => {
                let _ = store.write(fs, &ev.path, ev.data.as_deref().unwrap_or(b""), &mut rec);
            }
        }
    }
    rec
}

/// Profile several containers of one fleet, each with its own trace.
pub fn profile_fleet(
    store: &mut LayerStore,
    pairs: &[(&ContainerFs, &AccessTrace)],
) -> Vec<AccessRecord> {
    pairs
        .iter()
        .map(|(fs, trace)| profile(store, fs, trace))
        .collect()
}

/// Freeze the debloating layers into image layers, drop all child image
/// layers and the old write layer, and return the debloated container with
/// a fresh write layer. Shape depends on the conversion mode:
/// no-sharing → a single layer; fully-sharing → the n shared frozen layers;
/// semi-sharing → the frozen layer followed by the untouched base layers.
pub fn export(store: &mut LayerStore, fs: &ContainerFs) -> Result<ContainerFs> {
    let mode = fs
        .mode
        .ok_or_else(|| Error::ExportBeforeConvert(fs.container_id.clone()))?;
    for &root in &fs.root_layers {
        freeze(store, root)?;
    }
    let base_depth = match mode {
        ConvertMode::SemiSharing { base_depth } => base_depth,
        _ => 0,
    };
    Ok(ContainerFs {
        container_id: fs.container_id.clone(),
        root_layers: fs.root_layers.clone(),
        write_layer: store.add_layer(LayerRole::Write),
        mode: None,
        base_depth,
    })
}

/// Reassign role=image, drop the child list, and compute the frozen
/// layer's digest. Idempotent: a wrapper already frozen through another
/// container of the fleet passes through untouched.
fn freeze(store: &mut LayerStore, id: LayerId) -> Result<()> {
    match store.layer(id).role {
        LayerRole::Debloating => {
            let layer = store.layer_mut(id);
            layer.role = LayerRole::Image;
            layer.children = Vec::new();
            layer.digest = None;
            store.ensure_layer_digest(id)?;
            Ok(())
        }
        LayerRole::Image => Ok(()),
        LayerRole::Write => panic!("write layer {id} found among root layers"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyReason {
    NotFound,
    ContentMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyFailure {
    pub event_index: usize,
    pub path: FsPath,
    pub reason: VerifyReason,
}

/// Outcome of replaying a verification trace: `passed` iff no failures.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub failures: Vec<VerifyFailure>,
}

/// Replay `trace` against an exported container. With no debloating layers
/// left there is nothing to migrate; reads that miss or return unexpected
/// content become failures in the report. Writes land in the container's
/// own write layer, as they would at runtime.
pub fn verify(store: &mut LayerStore, fs: &ContainerFs, trace: &AccessTrace) -> VerifyReport {
    let mut failures = Vec::new();
    let mut rec = AccessRecord::new();
    for (idx, ev) in trace.events.iter().enumerate() {
        let fail = |reason| VerifyFailure {
            event_index: idx,
            path: ev.path.clone(),
            reason,
        };
        match ev.op {
            AccessOp::Read => match store.read(fs, &ev.path, None, &mut rec) {
                Ok(bytes) => {
                    if let Some(expect) = &ev.expect {
                        if &Digest::of_bytes(&bytes) != expect {
                            failures.push(fail(VerifyReason::ContentMismatch));
                        }
                    }
                }
                Err(_) => failures.push(fail(VerifyReason::NotFound)),
            },
            AccessOp::Stat => match store.stat(fs, &ev.path, &mut rec) {
                Ok(entry) => {
                    if let (Some(expect), Some(actual)) = (&ev.expect, &entry.content_digest) {
                        if expect != actual {
                            failures.push(fail(VerifyReason::ContentMismatch));
                        }
                    }
                }
                Err(_) => failures.push(fail(VerifyReason::NotFound)),
            },
            AccessOp::List => {
                if store.list_dir(fs, &ev.path, &mut rec).is_err() {
                    failures.push(fail(VerifyReason::NotFound));
                }
            }
            AccessOp::Write => {
                if store
                    .write(fs, &ev.path, ev.data.as_deref().unwrap_or(b""), &mut rec)
                    .is_err()
                {
                    failures.push(fail(VerifyReason::NotFound));
                }
            }
        }
    }
    VerifyReport {
        passed: failures.is_empty(),
        failures,
    }
}

/// Write the fully resolved tree to a host directory so external tools can
/// inspect it.
pub fn materialize(store: &LayerStore, fs: &ContainerFs, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let tree = store.resolved_tree(fs);
    for (path, (_, entry)) in &tree {
        let rel = &path.as_str()[1..];
        let host = dir.join(rel);
        match entry.kind {
            EntryKind::Directory => {
                fs::create_dir_all(&host)?;
            }
            EntryKind::Regular => {
                if let Some(parent) = host.parent() {
                    fs::create_dir_all(parent)?;
                }
                fs::write(
                    &host,
                    store
                        .content(entry.content_digest.as_ref().expect("regular entry digest"))
                        .expect("content present")
                        .as_slice(),
                )?;
                set_mode(&host, entry.mode_bits);
            }
            EntryKind::Symlink => {
                if let Some(parent) = host.parent() {
                    fs::create_dir_all(parent)?;
                }
                let target = entry.link_target.as_deref().unwrap_or("/");
                #[cfg(unix)]
                std::os::unix::fs::symlink(target, &host)?;
                #[cfg(not(unix))]
                fs::write(&host, target)?;
            }
        }
    }
    // Apply directory modes after children exist.
    for (path, (_, entry)) in tree.iter().rev() {
        if entry.kind == EntryKind::Directory {
            set_mode(&dir.join(&path.as_str()[1..]), entry.mode_bits);
        }
    }
    Ok(())
}

#[cfg(unix)]
fn set_mode(path: &Path, mode_bits: u32) {
    use std::os::unix::fs::PermissionsExt;
    // Mask to permission bits; ignore failures on exotic filesystems.
    let _ = fs::set_permissions(path, fs::Permissions::from_mode(mode_bits & 0o7777));
}

#[cfg(not(unix))]
fn set_mode(_path: &Path, _mode_bits: u32) {}
