//! On-disk engine state between pipeline steps: a state descriptor plus the
//! converted layers' file contents as content-addressed blobs.
//!
//! Layout:
//! ```text
//! <state>/state.json          # layers, containers, original sizes
//! <state>/blobs/sha256/<hex>  # file contents
//! <state>/lock                # present while a command holds the state
//! ```
//!
//! Updates write `state.json` through a temp file + rename; blobs are
//! content-addressed and only ever added, so an interrupted command never
//! leaves a state that fails to load.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shedfs::{ContainerFs, Digest, Error, LayerStore, StoreSnapshot};

use crate::{CliError, CliResult};

const STATE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
pub struct ContainerRecord {
    pub fs: ContainerFs,
    /// Account at load time, for reduction summaries.
    pub original_bytes: u64,
}

#[derive(Serialize, Deserialize)]
struct StateDoc {
    version: u32,
    containers: Vec<ContainerRecord>,
    store: StoreSnapshot,
}

pub struct StateBundle {
    pub store: LayerStore,
    pub containers: Vec<ContainerRecord>,
    dir: PathBuf,
}

fn blob_path(dir: &Path, digest: &Digest) -> PathBuf {
    dir.join("blobs").join("sha256").join(digest.hex())
}

impl StateBundle {
    pub fn new(store: LayerStore, containers: Vec<ContainerRecord>, dir: PathBuf) -> Self {
        StateBundle {
            store,
            containers,
            dir,
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn exists(dir: &Path) -> bool {
        dir.join("state.json").is_file()
    }

    /// Create the state directory in one shot: everything is staged in a
    /// temp sibling and renamed into place.
    pub fn create(&self, pretty: bool) -> CliResult<()> {
        if self.dir.exists() {
            return Err(CliError::StateMisuse(format!(
                "state directory {} already exists",
                self.dir.display()
            )));
        }
        let staging = self
            .dir
            .with_extension(format!("tmp-{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        let result = (|| -> Result<(), Error> {
            fs::create_dir_all(staging.join("blobs").join("sha256"))?;
            self.write_blobs(&staging)?;
            self.write_doc(&staging, pretty)?;
            Ok(())
        })();
        match result {
            Ok(()) => {
                fs::rename(&staging, &self.dir).map_err(Error::Io)?;
                Ok(())
            }
            Err(e) => {
                let _ = fs::remove_dir_all(&staging);
                Err(e.into())
            }
        }
    }

    /// Persist in place: new blobs first (additive), then the descriptor
    /// atomically.
    pub fn save(&self) -> Result<(), Error> {
        self.write_blobs(&self.dir)?;
        self.write_doc(&self.dir, false)?;
        Ok(())
    }

    fn write_blobs(&self, dir: &Path) -> Result<(), Error> {
        fs::create_dir_all(dir.join("blobs").join("sha256"))?;
        for digest in self.store.referenced_digests() {
            let path = blob_path(dir, &digest);
            if path.exists() {
                continue;
            }
            let bytes = self
                .store
                .content(&digest)
                .unwrap_or_else(|| panic!("state references missing content {digest}"));
            let tmp = path.with_extension(format!("tmp-{}", std::process::id()));
            fs::write(&tmp, bytes.as_slice())?;
            fs::rename(&tmp, &path)?;
        }
        Ok(())
    }

    fn write_doc(&self, dir: &Path, pretty: bool) -> Result<(), Error> {
        let doc = StateDoc {
            version: STATE_VERSION,
            containers: self
                .containers
                .iter()
                .map(|c| ContainerRecord {
                    fs: c.fs.clone(),
                    original_bytes: c.original_bytes,
                })
                .collect(),
            store: self.store.snapshot(),
        };
        let json = if pretty {
            serde_json::to_vec_pretty(&doc)?
        } else {
            serde_json::to_vec(&doc)?
        };
        let path = dir.join("state.json");
        let tmp = path.with_extension(format!("tmp-{}", std::process::id()));
        fs::write(&tmp, json)?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> CliResult<Self> {
        let doc_path = dir.join("state.json");
        let bytes = fs::read(&doc_path).map_err(|_| {
            CliError::StateMisuse(format!(
                "no state bundle at {} (run convert first)",
                dir.display()
            ))
        })?;
        let doc: StateDoc = serde_json::from_slice(&bytes)
            .map_err(|e| Error::BadManifest(format!("state.json: {e}")))?;
        if doc.version != STATE_VERSION {
            return Err(
                Error::BadManifest(format!("state version {} unsupported", doc.version)).into(),
            );
        }

        // Pull in every referenced blob, digest-checked by filename.
        let mut contents = BTreeMap::new();
        let mut want = std::collections::BTreeSet::new();
        for layer in &doc.store.layers {
            for entry in layer.entries() {
                if let Some(d) = &entry.content_digest {
                    want.insert(d.clone());
                }
            }
        }
        for digest in want {
            let path = blob_path(dir, &digest);
            let bytes = fs::read(&path).map_err(|_| Error::MissingBlob(digest.clone()))?;
            let actual = Digest::of_bytes(&bytes);
            if actual != digest {
                return Err(Error::CorruptBlob {
                    expected: digest,
                    actual,
                }
                .into());
            }
            contents.insert(digest, bytes);
        }

        let (store, missing) = LayerStore::restore(doc.store, contents);
        if let Some(d) = missing.into_iter().next() {
            return Err(Error::MissingBlob(d).into());
        }
        Ok(StateBundle {
            store,
            containers: doc.containers,
            dir: dir.to_path_buf(),
        })
    }
}

/// Exclusive per-state lock file, removed on drop.
pub struct StateLock {
    path: PathBuf,
}

impl StateLock {
    pub fn acquire(dir: &Path) -> CliResult<Self> {
        let path = dir.join("lock");
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(StateLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(CliError::StateMisuse(format!(
                    "state {} is locked by another command (remove {} if that command crashed)",
                    dir.display(),
                    path.display()
                )))
            }
            Err(e) => Err(CliError::Engine(Error::Io(e))),
        }
    }
}

impl Drop for StateLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
