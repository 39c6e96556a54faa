//! Layers, file entries, container filesystems, and size accounting.
//!
//! A [`LayerStore`] owns every layer in play plus a content-addressed pool of
//! file bytes. Containers and layers reference each other by [`LayerId`], so
//! two containers share a layer by holding the same id — which is exactly
//! what the size accounting and the fully-sharing conversion rely on.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::convert::ConvertMode;
use crate::digest::Digest;
use crate::path::FsPath;

/// What a layer entry is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Regular,
    Directory,
    Symlink,
}

/// One file, directory, or symlink inside a layer.
///
/// `size` is the content length for regular files, 0 for directories, and
/// the target-string length for symlinks. Regular files carry the digest of
/// their bytes; the bytes themselves live in the [`LayerStore`] content pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: FsPath,
    pub kind: EntryKind,
    pub size: u64,
    pub content_digest: Option<Digest>,
    pub mode_bits: u32,
    pub link_target: Option<String>,
}

impl FileEntry {
    pub fn directory(path: FsPath, mode_bits: u32) -> Self {
        FileEntry {
            path,
            kind: EntryKind::Directory,
            size: 0,
            content_digest: None,
            mode_bits,
            link_target: None,
        }
    }

    pub fn symlink(path: FsPath, target: &str, mode_bits: u32) -> Self {
        FileEntry {
            path,
            kind: EntryKind::Symlink,
            size: target.len() as u64,
            content_digest: None,
            mode_bits,
            link_target: Some(target.to_string()),
        }
    }

    fn regular(path: FsPath, size: u64, content_digest: Digest, mode_bits: u32) -> Self {
        FileEntry {
            path,
            kind: EntryKind::Regular,
            size,
            content_digest: Some(content_digest),
            mode_bits,
            link_target: None,
        }
    }
}

/// Role of a layer in a container filesystem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerRole {
    /// Read-only image layer, possibly shared between containers.
    Image,
    /// Migration target: absorbs every file read through it from its
    /// ordered child image layers.
    Debloating,
    /// Per-container copy-on-write top layer.
    Write,
}

/// Opaque layer identity within a [`LayerStore`].
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LayerId(pub u64);

impl std::fmt::Debug for LayerId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "L{}", self.0)
    }
}

impl std::fmt::Display for LayerId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "L{}", self.0)
    }
}

/// A named set of file entries with a role and, for debloating layers, an
/// ordered child list (top→bottom).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Layer {
    pub id: LayerId,
    pub role: LayerRole,
    entries: BTreeMap<FsPath, FileEntry>,
    pub children: Vec<LayerId>,
    /// Digest of the layer's canonical tar; present on image layers loaded
    /// from a bundle or frozen at export. Cleared on any entry mutation.
    pub digest: Option<Digest>,
}

impl Layer {
    fn new(id: LayerId, role: LayerRole) -> Self {
        Layer {
            id,
            role,
            entries: BTreeMap::new(),
            children: Vec::new(),
            digest: None,
        }
    }

    pub fn entry(&self, path: &FsPath) -> Option<&FileEntry> {
        self.entries.get(path)
    }

    pub fn contains(&self, path: &FsPath) -> bool {
        self.entries.contains_key(path)
    }

    pub fn entries(&self) -> impl Iterator<Item = &FileEntry> {
        self.entries.values()
    }

    pub fn entry_count(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sum of `FileEntry.size` over all entries (directories contribute 0,
    /// symlinks their target length).
    pub fn size_bytes(&self) -> u64 {
        self.entries.values().map(|e| e.size).sum()
    }

    /// Sum of regular-file sizes only; the basis for container accounting.
    pub fn regular_bytes(&self) -> u64 {
        self.entries
            .values()
            .filter(|e| e.kind == EntryKind::Regular)
            .map(|e| e.size)
            .sum()
    }

    pub(crate) fn insert(&mut self, entry: FileEntry) {
        self.digest = None;
        self.entries.insert(entry.path.clone(), entry);
    }

    pub(crate) fn remove(&mut self, path: &FsPath) -> Option<FileEntry> {
        let e = self.entries.remove(path);
        if e.is_some() {
            self.digest = None;
        }
        e
    }
}

/// An ordered stack of root layers (top→bottom) plus one private write
/// layer; the unit that is converted, profiled, and exported.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContainerFs {
    pub container_id: String,
    /// Root layers top→bottom; resolution iterates exactly this list after
    /// the write layer.
    pub root_layers: Vec<LayerId>,
    pub write_layer: LayerId,
    /// Set by conversion, cleared by export.
    pub mode: Option<ConvertMode>,
    /// Bottom layers belonging to a platform base image (0 if unknown).
    pub base_depth: usize,
}

/// Per-container and fleet-total byte accounting. Shared layers count once
/// in `total`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeAccount {
    pub per_container: BTreeMap<String, u64>,
    pub total: u64,
}

/// Owner of all layers and file contents.
///
/// Contents are content-addressed (`Digest` → bytes) and shared via `Arc`,
/// so cloning a store for what-if analysis is cheap.
#[derive(Debug, Clone, Default)]
pub struct LayerStore {
    layers: BTreeMap<LayerId, Layer>,
    contents: BTreeMap<Digest, Arc<Vec<u8>>>,
    next_id: u64,
}

impl LayerStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_layer(&mut self, role: LayerRole) -> LayerId {
        let id = LayerId(self.next_id);
        self.next_id += 1;
        self.layers.insert(id, Layer::new(id, role));
        id
    }

    /// Panics on a dangling id: layer ids are never removed from a store.
    pub fn layer(&self, id: LayerId) -> &Layer {
        self.layers
            .get(&id)
            .unwrap_or_else(|| panic!("dangling layer id {id}"))
    }

    pub(crate) fn layer_mut(&mut self, id: LayerId) -> &mut Layer {
        self.layers
            .get_mut(&id)
            .unwrap_or_else(|| panic!("dangling layer id {id}"))
    }

    pub fn layer_ids(&self) -> impl Iterator<Item = LayerId> + '_ {
        self.layers.keys().copied()
    }

    /// Store file bytes in the content pool, returning their digest.
    pub fn put_content(&mut self, bytes: Vec<u8>) -> Digest {
        let digest = Digest::of_bytes(&bytes);
        self.contents
            .entry(digest.clone())
            .or_insert_with(|| Arc::new(bytes));
        digest
    }

    pub fn content(&self, digest: &Digest) -> Option<&Arc<Vec<u8>>> {
        self.contents.get(digest)
    }

    pub(crate) fn content_bytes(&self, entry: &FileEntry) -> &[u8] {
        let digest = entry
            .content_digest
            .as_ref()
            .unwrap_or_else(|| panic!("regular entry {} has no digest", entry.path));
        self.contents
            .get(digest)
            .unwrap_or_else(|| panic!("content {digest} missing from pool"))
            .as_slice()
    }

    /// Digests referenced by at least one regular entry; what a state dump
    /// must persist.
    pub fn referenced_digests(&self) -> BTreeSet<Digest> {
        self.layers
            .values()
            .flat_map(|l| l.entries())
            .filter_map(|e| e.content_digest.clone())
            .collect()
    }

    /// Insert a regular file: bytes go to the content pool, the entry into
    /// the layer. Keeps the `size == len(bytes)` invariant by construction.
    pub fn add_regular(&mut self, layer: LayerId, path: FsPath, bytes: Vec<u8>, mode_bits: u32) {
        let size = bytes.len() as u64;
        let digest = self.put_content(bytes);
        self.layer_mut(layer)
            .insert(FileEntry::regular(path, size, digest, mode_bits));
    }

    pub fn add_directory(&mut self, layer: LayerId, path: FsPath, mode_bits: u32) {
        self.layer_mut(layer)
            .insert(FileEntry::directory(path, mode_bits));
    }

    pub fn add_symlink(&mut self, layer: LayerId, path: FsPath, target: &str, mode_bits: u32) {
        self.layer_mut(layer)
            .insert(FileEntry::symlink(path, target, mode_bits));
    }

    /// Private copy of a layer under a fresh id. The copy never inherits the
    /// source digest: it is about to diverge.
    pub fn clone_layer(&mut self, id: LayerId) -> LayerId {
        let src = self.layer(id).clone();
        let new_id = self.add_layer(src.role);
        let dst = self.layer_mut(new_id);
        dst.entries = src.entries;
        dst.children = src.children;
        new_id
    }

    /// Every layer a container can reach: write layer, then each root and
    /// (for debloating roots) its children, in resolution order.
    pub fn reachable_layers(&self, fs: &ContainerFs) -> Vec<LayerId> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        let push = |id: LayerId, out: &mut Vec<LayerId>, seen: &mut BTreeSet<LayerId>| {
            if seen.insert(id) {
                out.push(id);
            }
        };
        push(fs.write_layer, &mut out, &mut seen);
        for &root in &fs.root_layers {
            push(root, &mut out, &mut seen);
            for &child in &self.layer(root).children {
                push(child, &mut out, &mut seen);
            }
        }
        out
    }

    /// Fleet size accounting: per-container regular-file bytes over all
    /// reachable layers, and a total in which each distinct layer counts
    /// exactly once.
    pub fn account_sizes(&self, containers: &[&ContainerFs]) -> SizeAccount {
        let mut per_container = BTreeMap::new();
        let mut all_layers: BTreeSet<LayerId> = BTreeSet::new();
        for fs in containers {
            let reachable = self.reachable_layers(fs);
            let bytes = reachable
                .iter()
                .map(|&id| self.layer(id).regular_bytes())
                .sum();
            per_container.insert(fs.container_id.clone(), bytes);
            all_layers.extend(reachable);
        }
        let total = all_layers
            .iter()
            .map(|&id| self.layer(id).regular_bytes())
            .sum();
        SizeAccount {
            per_container,
            total,
        }
    }

    /// Serializable layer snapshot (contents are persisted separately as
    /// blobs, keyed by digest).
    pub fn snapshot(&self) -> StoreSnapshot {
        StoreSnapshot {
            layers: self.layers.values().cloned().collect(),
            next_id: self.next_id,
        }
    }

    /// Rebuild a store from a snapshot plus a content lookup. Returns the
    /// digests still missing after `contents` has been drained.
    pub fn restore(
        snapshot: StoreSnapshot,
        contents: BTreeMap<Digest, Vec<u8>>,
    ) -> (Self, BTreeSet<Digest>) {
        let mut store = LayerStore {
            layers: snapshot.layers.into_iter().map(|l| (l.id, l)).collect(),
            contents: contents
                .into_iter()
                .map(|(d, b)| (d, Arc::new(b)))
                .collect(),
            next_id: snapshot.next_id,
        };
        store.next_id = store
            .next_id
            .max(store.layers.keys().map(|id| id.0 + 1).max().unwrap_or(0));
        let missing = store
            .referenced_digests()
            .into_iter()
            .filter(|d| !store.contents.contains_key(d))
            .collect();
        (store, missing)
    }

    /// Existing unmutated image layer with this digest, if any. Used to
    /// dedup layers shared between images at load time.
    pub(crate) fn find_image_layer_by_digest(&self, digest: &Digest) -> Option<LayerId> {
        self.layers
            .values()
            .find(|l| l.role == LayerRole::Image && l.digest.as_ref() == Some(digest))
            .map(|l| l.id)
    }
}

/// Persistable view of a [`LayerStore`] (everything except file bytes).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoreSnapshot {
    pub layers: Vec<Layer>,
    pub next_id: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    const MB: u64 = 1 << 20;

    fn path(s: &str) -> FsPath {
        FsPath::new(s).unwrap()
    }

    fn patterned(len: usize, seed: u8) -> Vec<u8> {
        (0..len)
            .map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed))
            .collect()
    }

    /// Two shared image layers holding 1MB+2MB and 3MB+4MB files, and two
    /// containers stacked on them.
    fn shared_pair(store: &mut LayerStore) -> (ContainerFs, ContainerFs) {
        let upper = store.add_layer(LayerRole::Image);
        store.add_regular(upper, path("/f1"), patterned(MB as usize, 1), 0o644);
        store.add_regular(upper, path("/f2"), patterned(2 * MB as usize, 2), 0o644);
        let lower = store.add_layer(LayerRole::Image);
        store.add_regular(lower, path("/f3"), patterned(3 * MB as usize, 3), 0o644);
        store.add_regular(lower, path("/f4"), patterned(4 * MB as usize, 4), 0o644);
        let mk = |store: &mut LayerStore, id: &str| ContainerFs {
            container_id: id.to_string(),
            root_layers: vec![upper, lower],
            write_layer: store.add_layer(LayerRole::Write),
            mode: None,
            base_depth: 0,
        };
        (mk(store, "c1"), mk(store, "c2"))
    }

    #[test]
    fn layer_size_sums_entries() {
        let mut store = LayerStore::new();
        let (c1, _) = shared_pair(&mut store);
        assert_eq!(store.layer(c1.root_layers[0]).size_bytes(), 3 * MB);
        assert_eq!(store.layer(c1.root_layers[1]).size_bytes(), 7 * MB);
        assert_eq!(store.layer(c1.write_layer).size_bytes(), 0);
    }

    #[test]
    fn layer_size_counts_symlink_target_length_and_dirs_zero() {
        let mut store = LayerStore::new();
        let l = store.add_layer(LayerRole::Image);
        store.add_directory(l, path("/d"), 0o755);
        store.add_symlink(l, path("/d/link"), "/target/far/away", 0o777);
        assert_eq!(store.layer(l).size_bytes(), "/target/far/away".len() as u64);
        assert_eq!(store.layer(l).regular_bytes(), 0);
    }

    #[test]
    fn account_shared_originals() {
        let mut store = LayerStore::new();
        let (c1, c2) = shared_pair(&mut store);
        let acct = store.account_sizes(&[&c1, &c2]);
        assert_eq!(acct.per_container["c1"], 10 * MB);
        assert_eq!(acct.per_container["c2"], 10 * MB);
        assert_eq!(acct.total, 10 * MB);
    }

    #[test]
    fn account_dedups_by_layer_id() {
        let mut store = LayerStore::new();
        let (c1, c2) = shared_pair(&mut store);
        let one = store.account_sizes(&[&c1]);
        let both = store.account_sizes(&[&c1, &c2]);
        // The second container adds only its (empty) write layer.
        assert_eq!(one.total, both.total);
    }

    #[test]
    fn sharing_monotonicity() {
        let mut store = LayerStore::new();
        let (c1, c2) = shared_pair(&mut store);
        let acct = store.account_sizes(&[&c1, &c2]);
        let sum: u64 = acct.per_container.values().sum();
        assert!(acct.total <= sum);
    }

    #[test]
    fn content_pool_dedups() {
        let mut store = LayerStore::new();
        let d1 = store.put_content(vec![1, 2, 3]);
        let d2 = store.put_content(vec![1, 2, 3]);
        assert_eq!(d1, d2);
    }

    #[test]
    fn snapshot_restore_roundtrip() {
        let mut store = LayerStore::new();
        let (c1, _) = shared_pair(&mut store);
        let contents: BTreeMap<Digest, Vec<u8>> = store
            .referenced_digests()
            .into_iter()
            .map(|d| {
                let bytes = store.content(&d).unwrap().to_vec();
                (d, bytes)
            })
            .collect();
        let (restored, missing) = LayerStore::restore(store.snapshot(), contents);
        assert!(missing.is_empty());
        let acct = restored.account_sizes(&[&c1]);
        assert_eq!(acct.per_container["c1"], 10 * MB);
        // Fresh ids must not collide with restored ones.
        let mut restored = restored;
        let new = restored.add_layer(LayerRole::Write);
        assert!(store.layer_ids().all(|id| id != new));
    }
}
