//! Conversions from a linear layer stack to the three debloatable shapes.
//!
//! * no-sharing: one debloating layer over all n image layers — smallest
//!   per-container result.
//! * fully-sharing: n debloating layers, one per image layer, shared
//!   fleet-wide by layer digest — smallest total across containers.
//! * semi-sharing: one debloating layer over the top c unique layers; the
//!   bottom b base-image layers stay untouched so a platform can keep
//!   reusing them.
//!
//! Conversion is content-transparent: resolution answers are identical
//! before and after.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::digest::Digest;
use crate::error::{Error, Result};
use crate::model::{ContainerFs, LayerId, LayerRole, LayerStore};

/// Which of the three shapes a container was converted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "variant")]
pub enum ConvertMode {
    NoSharing,
    FullySharing,
    SemiSharing { base_depth: usize },
}

impl ConvertMode {
    /// Number of layers above the base image for an n-layer stack.
    pub fn unique_depth(&self, layer_count: usize) -> usize {
        match self {
            ConvertMode::SemiSharing { base_depth } => layer_count.saturating_sub(*base_depth),
            _ => layer_count,
        }
    }
}

impl std::fmt::Display for ConvertMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConvertMode::NoSharing => write!(f, "no-sharing"),
            ConvertMode::FullySharing => write!(f, "fully-sharing"),
            ConvertMode::SemiSharing { base_depth } => {
                write!(f, "semi-sharing(base_depth={base_depth})")
            }
        }
    }
}

/// Fleet-wide map from image layer to the single debloating layer wrapping
/// it. Keyed by content digest, so two loads of the same layer share a
/// wrapper; known layer ids are memoized because a wrapped layer's content
/// (and hence digest) changes as files migrate out of it.
#[derive(Debug, Clone, Default)]
pub struct SharingRegistry {
    wrappers: BTreeMap<Digest, LayerId>,
    by_child: BTreeMap<LayerId, LayerId>,
}

impl SharingRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn wrapper_for(&self, digest: &Digest) -> Option<LayerId> {
        self.wrappers.get(digest).copied()
    }

    pub fn len(&self) -> usize {
        self.wrappers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wrappers.is_empty()
    }
}

fn ensure_unconverted(store: &LayerStore, fs: &ContainerFs) -> Result<()> {
    let all_image = fs
        .root_layers
        .iter()
        .all(|&id| store.layer(id).role == LayerRole::Image);
    if fs.mode.is_some() || !all_image {
        return Err(Error::AlreadyConverted(fs.container_id.clone()));
    }
    Ok(())
}

/// Prepend one debloating layer owning private copies of all former root
/// layers (top→bottom order preserved). Copies keep profiling from bleeding
/// migrations into layers other containers still stack on.
pub fn convert_no_sharing(store: &mut LayerStore, fs: &mut ContainerFs) -> Result<()> {
    ensure_unconverted(store, fs)?;
    let children: Vec<LayerId> = fs
        .root_layers
        .iter()
        .map(|&id| store.clone_layer(id))
        .collect();
    let debloating = store.add_layer(LayerRole::Debloating);
    store.layer_mut(debloating).children = children;
    fs.root_layers = vec![debloating];
    fs.mode = Some(ConvertMode::NoSharing);
    Ok(())
}

/// Wrap every distinct image layer (keyed by digest) in exactly one
/// debloating layer fleet-wide; containers that share a layer share its
/// wrapper, and with it every file any of them pulls in.
pub fn convert_fully_sharing(
    store: &mut LayerStore,
    fleet: &mut [ContainerFs],
    registry: &mut SharingRegistry,
) -> Result<()> {
    for fs in fleet.iter() {
        ensure_unconverted(store, fs)?;
    }
    for fs in fleet.iter_mut() {
        let mut wrappers = Vec::with_capacity(fs.root_layers.len());
        for &layer in &fs.root_layers {
            let wrapper = match registry.by_child.get(&layer) {
                Some(&w) => w,
                None => {
                    let digest = store.ensure_layer_digest(layer)?;
                    let w = match registry.wrappers.get(&digest) {
                        Some(&w) => w,
                        None => {
                            let w = store.add_layer(LayerRole::Debloating);
                            store.layer_mut(w).children = vec![layer];
                            registry.wrappers.insert(digest, w);
                            w
                        }
                    };
                    registry.by_child.insert(layer, w);
                    w
                }
            };
            wrappers.push(wrapper);
        }
        fs.root_layers = wrappers;
        fs.mode = Some(ConvertMode::FullySharing);
        fs.base_depth = 0;
    }
    Ok(())
}

/// Debloat only the top `n - base_depth` layers; the bottom `base_depth`
/// base-image layers keep their identity (and digests) and are never
/// migration sources.
pub fn convert_semi_sharing(
    store: &mut LayerStore,
    fs: &mut ContainerFs,
    base_depth: usize,
) -> Result<()> {
    ensure_unconverted(store, fs)?;
    let n = fs.root_layers.len();
    if base_depth >= n {
        return Err(Error::InvalidBaseDepth {
            base_depth,
            layer_count: n,
        });
    }
    let unique = n - base_depth;
    let children: Vec<LayerId> = fs.root_layers[..unique]
        .iter()
        .map(|&id| store.clone_layer(id))
        .collect();
    let debloating = store.add_layer(LayerRole::Debloating);
    store.layer_mut(debloating).children = children;
    let mut roots = vec![debloating];
    roots.extend_from_slice(&fs.root_layers[unique..]);
    fs.root_layers = roots;
    fs.mode = Some(ConvertMode::SemiSharing { base_depth });
    fs.base_depth = base_depth;
    Ok(())
}
