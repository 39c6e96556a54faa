//! Normalized absolute paths.
//!
//! Every path in the engine is absolute, `/`-separated, and free of `.` and
//! `..` components, so layer entries can be compared and ordered as plain
//! strings.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A normalized absolute filesystem path.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FsPath(String);

impl FsPath {
    /// Parse and normalize an absolute path. Rejects relative paths and
    /// NUL bytes; collapses `//`, `.` and `..` (`..` stops at the root).
    pub fn new(raw: &str) -> Result<Self> {
        if !raw.starts_with('/') {
            return Err(Error::InvalidPath {
                path: raw.to_string(),
                reason: "must be absolute".to_string(),
            });
        }
        if raw.contains('\0') {
            return Err(Error::InvalidPath {
                path: raw.to_string(),
                reason: "contains NUL".to_string(),
            });
        }
        Ok(Self::normalize_from_root(raw))
    }

    pub fn root() -> Self {
        FsPath("/".to_string())
    }

    pub fn is_root(&self) -> bool {
        self.0 == "/"
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Parent directory; `None` for the root.
    pub fn parent(&self) -> Option<FsPath> {
        if self.is_root() {
            return None;
        }
        match self.0.rfind('/') {
            Some(0) => Some(FsPath::root()),
            Some(i) => Some(FsPath(self.0[..i].to_string())),
            None => None,
        }
    }

    /// Final component; `None` for the root.
    pub fn file_name(&self) -> Option<&str> {
        if self.is_root() {
            return None;
        }
        self.0.rfind('/').map(|i| &self.0[i + 1..])
    }

    /// All proper ancestors except the root, shallowest first
    /// (`/a/b/c` yields `/a`, `/a/b`).
    pub fn ancestors(&self) -> Vec<FsPath> {
        let mut out = Vec::new();
        let mut cur = self.parent();
        while let Some(p) = cur {
            if p.is_root() {
                break;
            }
            cur = p.parent();
            out.push(p);
        }
        out.reverse();
        out
    }

    /// Resolve a symlink target against this path's directory. Absolute
    /// targets restart at the root; relative targets are joined to the
    /// parent of `self`. The result is always normalized.
    pub fn resolve_link(&self, target: &str) -> FsPath {
        if target.starts_with('/') {
            Self::normalize_from_root(target)
        } else {
            let base = self.parent().unwrap_or_else(FsPath::root);
            let joined = if base.is_root() {
                format!("/{target}")
            } else {
                format!("{}/{target}", base.0)
            };
            Self::normalize_from_root(&joined)
        }
    }

    fn normalize_from_root(raw: &str) -> FsPath {
        let mut parts: Vec<&str> = Vec::new();
        for comp in raw.split('/') {
            match comp {
                "" | "." => {}
                ".." => {
                    parts.pop();
                }
                c => parts.push(c),
            }
        }
        if parts.is_empty() {
            FsPath::root()
        } else {
            FsPath(format!("/{}", parts.join("/")))
        }
    }
}

impl fmt::Display for FsPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for FsPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl std::str::FromStr for FsPath {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        FsPath::new(s)
    }
}
