//! Layered path resolution with migrate-on-read debloating layers.
//!
//! Resolution walks the write layer, then the root layers top→bottom. A
//! plain layer is probed directly; a debloating layer is probed through
//! [`LayerStore::dopen`], which on first access moves the entry out of the
//! child image layer that holds it and into the debloating layer itself.
//! Every access appends one event to an [`AccessRecord`].

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ContainerFs, EntryKind, FileEntry, LayerId, LayerRole, LayerStore};
use crate::path::FsPath;

/// Longest symlink chain followed before giving up.
const MAX_LINK_HOPS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessOp {
    Read,
    Stat,
    List,
    Write,
}

/// One recorded access.
///
/// `probe_count` is the total number of layers examined (write layer, roots,
/// and debloating-layer children all count). `dopen_probes` is the number of
/// probes performed inside the debloating layer that served the hit — 1 on
/// the warm path, 1 + children-scanned on a migrating first access, `None`
/// when no debloating layer served the request. For reads that follow
/// symlinks it is the worst hop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccessEvent {
    pub op: AccessOp,
    pub path: FsPath,
    /// Final path after symlink resolution, when the operation found one.
    pub resolved: Option<FsPath>,
    /// Serving layer, or `None` on a miss.
    pub hit: Option<LayerId>,
    pub probe_count: u32,
    pub dopen_probes: Option<u32>,
}

impl AccessEvent {
    pub fn is_miss(&self) -> bool {
        self.hit.is_none()
    }
}

/// Ordered list of access events for one container.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AccessRecord {
    pub events: Vec<AccessEvent>,
}

impl AccessRecord {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, event: AccessEvent) {
        debug_assert!(event.probe_count >= 1);
        self.events.push(event);
    }

    pub fn last(&self) -> Option<&AccessEvent> {
        self.events.last()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Open handle onto a path inside a specific layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileHandle {
    pub layer: LayerId,
    pub path: FsPath,
    pub offset: u64,
}

/// Non-migrating lookup outcome used internally.
struct Hit {
    layer: LayerId,
    entry: FileEntry,
    probes: u32,
    dopen_probes: Option<u32>,
}

impl LayerStore {
    /// Open `path` through debloating layer `layer`: fast path if the entry
    /// is already present, otherwise probe the children top→bottom and move
    /// the first hit (entry and any missing parent directories) into the
    /// debloating layer.
    ///
    /// Returns the handle plus the number of probes performed (1 on the
    /// fast path).
    pub fn dopen(&mut self, layer: LayerId, path: &FsPath) -> Result<(FileHandle, u32)> {
        debug_assert_eq!(self.layer(layer).role, LayerRole::Debloating);
        let mut probes = 1u32;
        if self.layer(layer).contains(path) {
            return Ok((
                FileHandle {
                    layer,
                    path: path.clone(),
                    offset: 0,
                },
                probes,
            ));
        }
        let children = self.layer(layer).children.clone();
        for child in children {
            probes += 1;
            if self.layer(child).contains(path) {
                self.migrate(child, layer, path);
                return Ok((
                    FileHandle {
                        layer,
                        path: path.clone(),
                        offset: 0,
                    },
                    probes,
                ));
            }
        }
        Err(Error::NotFound(path.clone()))
    }

    /// Read up to `cap` bytes at the handle's cursor, advancing it. A
    /// handle on a symlink reads the target string (readlink semantics);
    /// directories cannot be read.
    pub fn read_handle(&self, handle: &mut FileHandle, cap: usize) -> Result<Vec<u8>> {
        let entry = self
            .layer(handle.layer)
            .entry(&handle.path)
            .ok_or_else(|| Error::NotFound(handle.path.clone()))?
            .clone();
        let bytes: &[u8] = match entry.kind {
            EntryKind::Directory => return Err(Error::IsDirectory(handle.path.clone())),
            EntryKind::Regular => self.content_bytes(&entry),
            EntryKind::Symlink => entry.link_target.as_deref().unwrap_or("").as_bytes(),
        };
        let start = (handle.offset as usize).min(bytes.len());
        let end = start.saturating_add(cap).min(bytes.len());
        handle.offset = end as u64;
        Ok(bytes[start..end].to_vec())
    }

    /// Move `path` from `src` into `dst`, creating any parent directory
    /// entries `dst` is missing (directories themselves are copied, not
    /// moved: the source layer may still need them for its own files).
    fn migrate(&mut self, src: LayerId, dst: LayerId, path: &FsPath) {
        for ancestor in path.ancestors() {
            if !self.layer(dst).contains(&ancestor) {
                let mode = match self.layer(src).entry(&ancestor) {
                    Some(e) => e.mode_bits,
                    None => 0o755,
                };
                self.layer_mut(dst)
                    .insert(FileEntry::directory(ancestor, mode));
            }
        }
        let entry = self
            .layer_mut(src)
            .remove(path)
            .expect("migrate source lost the entry");
        self.layer_mut(dst).insert(entry);
    }

    /// One resolution pass over the stack, no symlink following. Migrates
    /// when the hit comes from a debloating layer.
    fn resolve_entry(&mut self, fs: &ContainerFs, path: &FsPath) -> std::result::Result<Hit, u32> {
        let mut probes = 1u32;
        if let Some(e) = self.layer(fs.write_layer).entry(path) {
            return Ok(Hit {
                layer: fs.write_layer,
                entry: e.clone(),
                probes,
                dopen_probes: None,
            });
        }
        for &root in &fs.root_layers {
            if self.layer(root).role == LayerRole::Debloating {
                let before = probes;
                match self.dopen(root, path) {
                    Ok((handle, dprobes)) => {
                        probes += dprobes;
                        let entry = self
                            .layer(handle.layer)
                            .entry(path)
                            .expect("dopen hit vanished")
                            .clone();
                        return Ok(Hit {
                            layer: handle.layer,
                            entry,
                            probes,
                            dopen_probes: Some(dprobes),
                        });
                    }
                    Err(_) => {
                        probes = before + 1 + self.layer(root).children.len() as u32;
                    }
                }
            } else {
                probes += 1;
                if let Some(e) = self.layer(root).entry(path) {
                    return Ok(Hit {
                        layer: root,
                        entry: e.clone(),
                        probes,
                        dopen_probes: None,
                    });
                }
            }
        }
        Err(probes)
    }

    /// Read up to `cap` bytes from `path` (all bytes when `cap` is `None`),
    /// following symlinks. Appends one event to `rec` whether or not the
    /// read succeeds.
    pub fn read(
        &mut self,
        fs: &ContainerFs,
        path: &FsPath,
        cap: Option<usize>,
        rec: &mut AccessRecord,
    ) -> Result<Vec<u8>> {
        let mut probes = 0u32;
        let mut worst_dopen: Option<u32> = None;
        let mut current = path.clone();
        let mut hops = 0usize;
        loop {
            if current.is_root() {
                rec.push(AccessEvent {
                    op: AccessOp::Read,
                    path: path.clone(),
                    resolved: Some(current.clone()),
                    hit: None,
                    probe_count: probes.max(1),
                    dopen_probes: worst_dopen,
                });
                return Err(Error::IsDirectory(current));
            }
            match self.resolve_entry(fs, &current) {
                Ok(hit) => {
                    probes += hit.probes;
                    if let Some(d) = hit.dopen_probes {
                        worst_dopen = Some(worst_dopen.map_or(d, |w| w.max(d)));
                    }
                    match hit.entry.kind {
                        EntryKind::Symlink => {
                            hops += 1;
                            if hops > MAX_LINK_HOPS {
                                rec.push(AccessEvent {
                                    op: AccessOp::Read,
                                    path: path.clone(),
                                    resolved: Some(current.clone()),
                                    hit: Some(hit.layer),
                                    probe_count: probes,
                                    dopen_probes: worst_dopen,
                                });
                                return Err(Error::TooManyLinks(path.clone()));
                            }
                            let target = hit.entry.link_target.as_deref().unwrap_or("/");
                            current = current.resolve_link(target);
                        }
                        EntryKind::Directory => {
                            rec.push(AccessEvent {
                                op: AccessOp::Read,
                                path: path.clone(),
                                resolved: Some(current.clone()),
                                hit: Some(hit.layer),
                                probe_count: probes,
                                dopen_probes: worst_dopen,
                            });
                            return Err(Error::IsDirectory(current));
                        }
                        EntryKind::Regular => {
                            let bytes = self.content_bytes(&hit.entry);
                            let take = cap.unwrap_or(bytes.len()).min(bytes.len());
                            let out = bytes[..take].to_vec();
                            rec.push(AccessEvent {
                                op: AccessOp::Read,
                                path: path.clone(),
                                resolved: Some(current.clone()),
                                hit: Some(hit.layer),
                                probe_count: probes,
                                dopen_probes: worst_dopen,
                            });
                            return Ok(out);
                        }
                    }
                }
                Err(miss_probes) => {
                    probes += miss_probes;
                    rec.push(AccessEvent {
                        op: AccessOp::Read,
                        path: path.clone(),
                        resolved: None,
                        hit: None,
                        probe_count: probes,
                        dopen_probes: worst_dopen,
                    });
                    return Err(Error::NotFound(current));
                }
            }
        }
    }

    /// Metadata for `path` without following a final symlink (lstat).
    /// Counts as use: the entry migrates exactly as a read would.
    pub fn stat(
        &mut self,
        fs: &ContainerFs,
        path: &FsPath,
        rec: &mut AccessRecord,
    ) -> Result<FileEntry> {
        if path.is_root() {
            let entry = FileEntry::directory(FsPath::root(), 0o755);
            rec.push(AccessEvent {
                op: AccessOp::Stat,
                path: path.clone(),
                resolved: Some(path.clone()),
                hit: None,
                probe_count: 1,
                dopen_probes: None,
            });
            return Ok(entry);
        }
        match self.resolve_entry(fs, path) {
            Ok(hit) => {
                rec.push(AccessEvent {
                    op: AccessOp::Stat,
                    path: path.clone(),
                    resolved: Some(path.clone()),
                    hit: Some(hit.layer),
                    probe_count: hit.probes,
                    dopen_probes: hit.dopen_probes,
                });
                Ok(hit.entry)
            }
            Err(probes) => {
                rec.push(AccessEvent {
                    op: AccessOp::Stat,
                    path: path.clone(),
                    resolved: None,
                    hit: None,
                    probe_count: probes,
                    dopen_probes: None,
                });
                Err(Error::NotFound(path.clone()))
            }
        }
    }

    /// Union of child names across every reachable layer. Listing is not
    /// use: nothing migrates.
    pub fn list_dir(
        &self,
        fs: &ContainerFs,
        path: &FsPath,
        rec: &mut AccessRecord,
    ) -> Result<BTreeSet<String>> {
        let reachable = self.reachable_layers(fs);
        let probe_count = reachable.len() as u32;
        // The directory itself must resolve (the root is implicit).
        if !path.is_root() {
            let found = self.lookup_no_migrate(fs, path);
            let ev = |hit, resolved| AccessEvent {
                op: AccessOp::List,
                path: path.clone(),
                resolved,
                hit,
                probe_count,
                dopen_probes: None,
            };
            match found {
                None => {
                    rec.push(ev(None, None));
                    return Err(Error::NotFound(path.clone()));
                }
                Some((layer, entry)) if entry.kind != EntryKind::Directory => {
                    rec.push(ev(Some(layer), Some(path.clone())));
                    return Err(Error::NotADirectory(path.clone()));
                }
                Some((layer, _)) => {
                    rec.push(ev(Some(layer), Some(path.clone())));
                }
            }
        } else {
            rec.push(AccessEvent {
                op: AccessOp::List,
                path: path.clone(),
                resolved: Some(path.clone()),
                hit: None,
                probe_count,
                dopen_probes: None,
            });
        }
        let mut names = BTreeSet::new();
        for id in reachable {
            for entry in self.layer(id).entries() {
                if entry.path.parent().as_ref() == Some(path) {
                    if let Some(name) = entry.path.file_name() {
                        names.insert(name.to_string());
                    }
                }
            }
        }
        Ok(names)
    }

    /// Copy-on-write: the entry lands in the write layer only; lower layers
    /// are never touched.
    pub fn write(
        &mut self,
        fs: &ContainerFs,
        path: &FsPath,
        bytes: &[u8],
        rec: &mut AccessRecord,
    ) -> Result<()> {
        if path.is_root() {
            return Err(Error::IsDirectory(path.clone()));
        }
        for ancestor in path.ancestors() {
            if !self.layer(fs.write_layer).contains(&ancestor) {
                let mode = match self.lookup_no_migrate(fs, &ancestor) {
                    Some((_, e)) if e.kind == EntryKind::Directory => e.mode_bits,
                    _ => 0o755,
                };
                self.layer_mut(fs.write_layer)
                    .insert(FileEntry::directory(ancestor, mode));
            }
        }
        self.add_regular(fs.write_layer, path.clone(), bytes.to_vec(), 0o644);
        rec.push(AccessEvent {
            op: AccessOp::Write,
            path: path.clone(),
            resolved: Some(path.clone()),
            hit: Some(fs.write_layer),
            probe_count: 1,
            dopen_probes: None,
        });
        Ok(())
    }

    /// Resolution-order lookup without migration or symlink following.
    /// Debloating layers are searched entry-first, then children top→bottom,
    /// mirroring `dopen` exactly.
    pub fn lookup_no_migrate(
        &self,
        fs: &ContainerFs,
        path: &FsPath,
    ) -> Option<(LayerId, FileEntry)> {
        if let Some(e) = self.layer(fs.write_layer).entry(path) {
            return Some((fs.write_layer, e.clone()));
        }
        for &root in &fs.root_layers {
            let layer = self.layer(root);
            if let Some(e) = layer.entry(path) {
                return Some((root, e.clone()));
            }
            for &child in &layer.children {
                if let Some(e) = self.layer(child).entry(path) {
                    return Some((child, e.clone()));
                }
            }
        }
        None
    }

    /// The fully resolved tree: every visible path mapped to its serving
    /// layer and entry, honoring resolution order. No migration.
    pub fn resolved_tree(
        &self,
        fs: &ContainerFs,
    ) -> std::collections::BTreeMap<FsPath, (LayerId, FileEntry)> {
        let mut tree = std::collections::BTreeMap::new();
        for id in self.reachable_layers(fs) {
            for entry in self.layer(id).entries() {
                tree.entry(entry.path.clone())
                    .or_insert_with(|| (id, entry.clone()));
            }
        }
        tree
    }
}
