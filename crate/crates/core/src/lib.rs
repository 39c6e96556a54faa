//! shedfs — a bloat-aware layered filesystem engine for container debloating.
//!
//! Container images accumulate files that the deployed workload never touches.
//! shedfs separates used from unused files at the filesystem level: a
//! *debloating layer* is spliced into the layer stack, and every file read
//! through it migrates from its original image layer into the debloating
//! layer. After a profiling run, the image layers hold only dead weight and
//! can be dropped wholesale.
//!
//! The pipeline has three steps:
//!
//! 1. **Convert** — reshape a linear layer stack into one of three shapes:
//!    [`convert_no_sharing`] (one debloating layer over everything, smallest
//!    per-container result), [`convert_fully_sharing`] (one shared debloating
//!    layer per image layer, smallest fleet total), or
//!    [`convert_semi_sharing`] (debloat only the layers above a platform base
//!    image, keeping base digests byte-identical).
//! 2. **Profile** — replay an [`AccessTrace`] through the engine; reads and
//!    stats migrate files, directory listings do not.
//! 3. **Export** — freeze the debloating layers into ordinary image layers
//!    and drop everything else.
//!
//! [`analyze`] runs the no-sharing and fully-sharing pipelines on cloned
//! state, measures both outcomes, and recommends a mode for a fleet.
//!
//! Images live on disk in a minimal content-addressed layout
//! (`manifest.json` + `blobs/sha256/<hex>` canonical tars) handled by
//! [`load_image`] and [`store_image`].
//!
//! [`convert_no_sharing`]: convert::convert_no_sharing
//! [`convert_fully_sharing`]: convert::convert_fully_sharing
//! [`convert_semi_sharing`]: convert::convert_semi_sharing
//! [`AccessTrace`]: profile::AccessTrace
//! [`analyze`]: advisor::analyze
//! [`load_image`]: image::load_image
//! [`store_image`]: image::store_image

pub mod advisor;
pub mod convert;
pub mod digest;
pub mod engine;
pub mod error;
pub mod fixtures;
pub mod image;
pub mod model;
pub mod path;
pub mod profile;

pub use crate::{
    advisor::{analyze, select_mode, ModeChoice, ModeReport},
    convert::{
        convert_fully_sharing, convert_no_sharing, convert_semi_sharing, ConvertMode,
        SharingRegistry,
    },
    digest::Digest,
    engine::{AccessEvent, AccessOp, AccessRecord, FileHandle},
    error::{Error, Result},
    image::{load_image, store_image, ImageBundle, ImageManifest},
    model::{
        ContainerFs, EntryKind, FileEntry, Layer, LayerId, LayerRole, LayerStore, SizeAccount,
        StoreSnapshot,
    },
    path::FsPath,
    profile::{
        export, materialize, profile, profile_fleet, verify, AccessTrace, TraceEvent,
        VerifyFailure, VerifyReason, VerifyReport,
    },
};
