//! On-disk image layout: `manifest.json` plus content-addressed layer blobs.
//!
//! Each layer serializes to a canonical uncompressed tar — entries sorted by
//! path, zeroed timestamps, numeric uid/gid 0 — so two layers with equal
//! entry sets hash to the same digest on any machine. That determinism is
//! what lets semi-sharing exports keep base-image digests byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::digest::Digest;
use crate::error::{Error, Result};
use crate::model::{ContainerFs, EntryKind, LayerId, LayerRole, LayerStore};
use crate::path::FsPath;

/// `manifest.json`: image name, layer digests bottom→top, and how many of
/// the bottom layers belong to the platform base image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageManifest {
    pub image_name: String,
    #[serde(rename = "layers")]
    pub layer_digests: Vec<Digest>,
    #[serde(default)]
    pub base_depth: usize,
}

/// An image held fully in memory: manifest plus blob bytes keyed by digest.
#[derive(Debug, Clone)]
pub struct ImageBundle {
    pub manifest: ImageManifest,
    pub blobs: BTreeMap<Digest, Vec<u8>>,
}

impl LayerStore {
    /// Canonical-tar digest of a layer, computed and cached on demand.
    /// Entry mutation clears the cache, so a cached digest is always live.
    pub fn ensure_layer_digest(&mut self, id: LayerId) -> Result<Digest> {
        if let Some(d) = self.layer(id).digest.clone() {
            return Ok(d);
        }
        let bytes = self.layer_tar_bytes(id)?;
        let digest = Digest::of_bytes(&bytes);
        self.layer_mut(id).digest = Some(digest.clone());
        Ok(digest)
    }

    /// Serialize a layer to its canonical tar.
    pub fn layer_tar_bytes(&self, id: LayerId) -> Result<Vec<u8>> {
        let mut builder = tar::Builder::new(Vec::new());
        // BTreeMap iteration gives the path-sorted order the canonical
        // format requires.
        for entry in self.layer(id).entries() {
            let rel = &entry.path.as_str()[1..];
            let mut header = tar::Header::new_ustar();
            header.set_mode(entry.mode_bits);
            header.set_uid(0);
            header.set_gid(0);
            header.set_mtime(0);
            match entry.kind {
                EntryKind::Regular => {
                    header.set_entry_type(tar::EntryType::Regular);
                    header.set_path(rel)?;
                    header.set_size(entry.size);
                    header.set_cksum();
                    builder.append(&header, self.content_bytes(entry))?;
                }
                EntryKind::Directory => {
                    header.set_entry_type(tar::EntryType::Directory);
                    header.set_path(format!("{rel}/"))?;
                    header.set_size(0);
                    header.set_cksum();
                    builder.append(&header, std::io::empty())?;
                }
                EntryKind::Symlink => {
                    header.set_entry_type(tar::EntryType::Symlink);
                    header.set_path(rel)?;
                    header.set_link_name(entry.link_target.as_deref().unwrap_or(""))?;
                    header.set_size(0);
                    header.set_cksum();
                    builder.append(&header, std::io::empty())?;
                }
            }
        }
        Ok(builder.into_inner()?)
    }

    /// Parse a canonical layer tar into a fresh image layer.
    fn layer_from_tar(&mut self, bytes: &[u8], digest: Digest) -> Result<LayerId> {
        let id = self.add_layer(LayerRole::Image);
        let mut archive = tar::Archive::new(bytes);
        for entry in archive.entries()? {
            let mut entry = entry?;
            let raw = entry.path()?.into_owned();
            let path = FsPath::new(&format!("/{}", raw.display()))?;
            let mode = entry.header().mode()?;
            match entry.header().entry_type() {
                tar::EntryType::Directory => self.add_directory(id, path, mode),
                tar::EntryType::Symlink => {
                    let target = entry
                        .link_name()?
                        .map(|t| t.display().to_string())
                        .ok_or_else(|| {
                            Error::BadManifest(format!("symlink {path} without target"))
                        })?;
                    self.add_symlink(id, path, &target, mode);
                }
                tar::EntryType::Regular => {
                    let mut content = Vec::with_capacity(entry.size() as usize);
                    entry.read_to_end(&mut content)?;
                    self.add_regular(id, path, content, mode);
                }
                other => {
                    return Err(Error::BadManifest(format!(
                        "unsupported tar entry type {other:?} at {path}"
                    )));
                }
            }
        }
        self.layer_mut(id).digest = Some(digest);
        Ok(id)
    }
}

fn blob_path(dir: &Path, digest: &Digest) -> std::path::PathBuf {
    dir.join("blobs").join("sha256").join(digest.hex())
}

/// Load an image from `dir`, verifying every blob digest. Layers whose
/// digest already exists unmutated in the store are reused, so images
/// loaded side by side share layers the way registries share them.
///
/// Returns the bundle plus a container stacked on the image with a fresh
/// empty write layer.
pub fn load_image(
    store: &mut LayerStore,
    dir: impl AsRef<Path>,
) -> Result<(ImageBundle, ContainerFs)> {
    let dir = dir.as_ref();
    let manifest_bytes = fs::read(dir.join("manifest.json")).map_err(|e| {
        Error::BadManifest(format!(
            "cannot read {}: {e}",
            dir.join("manifest.json").display()
        ))
    })?;
    let manifest: ImageManifest =
        serde_json::from_slice(&manifest_bytes).map_err(|e| Error::BadManifest(e.to_string()))?;
    if manifest.base_depth > manifest.layer_digests.len() {
        return Err(Error::BadManifest(format!(
            "base_depth {} exceeds layer count {}",
            manifest.base_depth,
            manifest.layer_digests.len()
        )));
    }
    {
        let mut seen = std::collections::BTreeSet::new();
        for d in &manifest.layer_digests {
            if !seen.insert(d) {
                return Err(Error::BadManifest(format!("duplicate layer digest {d}")));
            }
        }
    }

    let mut blobs = BTreeMap::new();
    let mut bottom_to_top = Vec::with_capacity(manifest.layer_digests.len());
    for digest in &manifest.layer_digests {
        let path = blob_path(dir, digest);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::MissingBlob(digest.clone()))
            }
            Err(e) => return Err(e.into()),
        };
        let actual = Digest::of_bytes(&bytes);
        if &actual != digest {
            return Err(Error::CorruptBlob {
                expected: digest.clone(),
                actual,
            });
        }
        let layer = match store.find_image_layer_by_digest(digest) {
            Some(existing) => existing,
            None => store.layer_from_tar(&bytes, digest.clone())?,
        };
        bottom_to_top.push(layer);
        blobs.insert(digest.clone(), bytes);
    }

    let mut root_layers = bottom_to_top;
    root_layers.reverse();
    let fs = ContainerFs {
        container_id: manifest.image_name.clone(),
        root_layers,
        write_layer: store.add_layer(LayerRole::Write),
        mode: None,
        base_depth: manifest.base_depth,
    };
    Ok((ImageBundle { manifest, blobs }, fs))
}

/// Write a container's image layers to `dir` as a content-addressed bundle.
/// Requires every root layer to be image-role (i.e. export has run, or the
/// container was never converted). Unmutated layers reproduce their
/// load-time digests exactly.
pub fn store_image(
    store: &mut LayerStore,
    fs: &ContainerFs,
    dir: impl AsRef<Path>,
) -> Result<ImageManifest> {
    let dir = dir.as_ref();
    if fs
        .root_layers
        .iter()
        .any(|&id| store.layer(id).role != LayerRole::Image)
    {
        return Err(Error::ExportBeforeConvert(fs.container_id.clone()));
    }
    fs::create_dir_all(dir.join("blobs").join("sha256"))?;

    let mut layer_digests = Vec::with_capacity(fs.root_layers.len());
    for &id in fs.root_layers.iter().rev() {
        let digest = store.ensure_layer_digest(id)?;
        let path = blob_path(dir, &digest);
        if !path.exists() {
            let bytes = store.layer_tar_bytes(id)?;
            debug_assert_eq!(Digest::of_bytes(&bytes), digest);
            write_atomic(&path, &bytes)?;
        }
        layer_digests.push(digest);
    }

    let manifest = ImageManifest {
        image_name: fs.container_id.clone(),
        layer_digests,
        base_depth: fs.base_depth,
    };
    write_atomic(
        &dir.join("manifest.json"),
        &serde_json::to_vec_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::BadManifest(e.to_string())
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
