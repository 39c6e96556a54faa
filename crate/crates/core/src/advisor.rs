//! Mode selection: measure a fleet under both no-sharing and fully-sharing
//! and recommend one.
//!
//! With per-container debloated sizes s_i (no-sharing, total t) and s'_i
//! (fully-sharing, total t'):
//!
//! * alpha = Σ s_i − t'  — bytes duplicated across no-sharing containers,
//! * beta  = Σ (s'_i − s_i) — unnecessary bytes retained under fully-sharing,
//! * theta = alpha / beta, with an epsilon guard when beta is zero.
//!
//! theta below the threshold (default 1) favors no-sharing; at or above it,
//! fully-sharing.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::convert::{convert_fully_sharing, convert_no_sharing, ConvertMode, SharingRegistry};
use crate::error::{Error, Result};
use crate::model::{ContainerFs, LayerStore};
use crate::profile::{export, profile, AccessTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeChoice {
    NoSharing,
    FullySharing,
}

impl std::fmt::Display for ModeChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModeChoice::NoSharing => write!(f, "no-sharing"),
            ModeChoice::FullySharing => write!(f, "fully-sharing"),
        }
    }
}

/// Everything the decision is based on, in bytes except for `theta`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeReport {
    /// s_i: per-container debloated size under no-sharing.
    pub no_sharing_sizes: BTreeMap<String, u64>,
    /// s'_i: per-container debloated size under fully-sharing.
    pub fully_sharing_sizes: BTreeMap<String, u64>,
    /// t: fleet total under no-sharing.
    pub no_sharing_total: u64,
    /// t': fleet total under fully-sharing.
    pub fully_sharing_total: u64,
    pub alpha: u64,
    pub beta: u64,
    /// Divide-by-zero guard applied when beta is zero; integer bytes.
    pub epsilon: u64,
    pub theta: f64,
    pub threshold: f64,
    pub recommendation: ModeChoice,
}

impl ModeReport {
    /// Assemble a report from measured sizes. Panics if the engine produced
    /// sizes violating alpha ≥ 0 or beta-term ≥ 0 — both hold by
    /// construction, so a violation is an engine bug, not an input problem.
    pub fn from_sizes(
        no_sharing_sizes: BTreeMap<String, u64>,
        fully_sharing_sizes: BTreeMap<String, u64>,
        no_sharing_total: u64,
        fully_sharing_total: u64,
        threshold: f64,
        epsilon: u64,
    ) -> Self {
        let sum_s: u64 = no_sharing_sizes.values().sum();
        let alpha = sum_s
            .checked_sub(fully_sharing_total)
            .expect("engine bug: fully-sharing total exceeds sum of no-sharing sizes");
        let beta = no_sharing_sizes
            .iter()
            .map(|(id, &s)| {
                let s_prime = fully_sharing_sizes.get(id).copied().unwrap_or(s);
                s_prime
                    .checked_sub(s)
                    .expect("engine bug: fully-sharing size below no-sharing size")
            })
            .sum();
        let theta = compute_theta(alpha, beta, epsilon);
        let recommendation = if theta >= threshold {
            ModeChoice::FullySharing
        } else {
            ModeChoice::NoSharing
        };
        ModeReport {
            no_sharing_sizes,
            fully_sharing_sizes,
            no_sharing_total,
            fully_sharing_total,
            alpha,
            beta,
            epsilon,
            theta,
            threshold,
            recommendation,
        }
    }
}

/// alpha/beta, guarded: a zero beta divides by epsilon instead (clamped to
/// at least one byte so the ratio stays finite).
pub fn compute_theta(alpha: u64, beta: u64, epsilon: u64) -> f64 {
    let denom = if beta > 0 { beta } else { epsilon.max(1) };
    alpha as f64 / denom as f64
}

/// Debloat cloned copies of the fleet under both modes, measure, and fill a
/// [`ModeReport`]. The caller's store and containers are never touched.
pub fn analyze(
    store: &LayerStore,
    containers: &[ContainerFs],
    traces: &[AccessTrace],
    threshold: f64,
    epsilon: u64,
) -> Result<ModeReport> {
    if containers.len() != traces.len() {
        return Err(Error::AnalysisFailed(format!(
            "{} containers but {} traces",
            containers.len(),
            traces.len()
        )));
    }
    if containers.is_empty() {
        return Err(Error::AnalysisFailed("empty fleet".to_string()));
    }
    {
        let mut seen = std::collections::BTreeSet::new();
        for fs in containers {
            if !seen.insert(&fs.container_id) {
                return Err(Error::AnalysisFailed(format!(
                    "duplicate container id {:?}",
                    fs.container_id
                )));
            }
        }
    }

    // No-sharing pass.
    let mut ns_store = store.clone();
    let mut ns_fleet = containers.to_vec();
    let mut ns_exported = Vec::with_capacity(ns_fleet.len());
    for (fs, trace) in ns_fleet.iter_mut().zip(traces) {
        convert_no_sharing(&mut ns_store, fs)?;
        profile(&mut ns_store, fs, trace);
        ns_exported.push(export(&mut ns_store, fs)?);
    }
    let ns_refs: Vec<&ContainerFs> = ns_exported.iter().collect();
    let ns_account = ns_store.account_sizes(&ns_refs);

    // Fully-sharing pass.
    let mut fs_store = store.clone();
    let mut fs_fleet = containers.to_vec();
    let mut registry = SharingRegistry::new();
    convert_fully_sharing(&mut fs_store, &mut fs_fleet, &mut registry)?;
    for (fs, trace) in fs_fleet.iter().zip(traces) {
        profile(&mut fs_store, fs, trace);
    }
    let mut fs_exported = Vec::with_capacity(fs_fleet.len());
    for fs in &fs_fleet {
        fs_exported.push(export(&mut fs_store, fs)?);
    }
    let fs_refs: Vec<&ContainerFs> = fs_exported.iter().collect();
    let fs_account = fs_store.account_sizes(&fs_refs);

    Ok(ModeReport::from_sizes(
        ns_account.per_container,
        fs_account.per_container,
        ns_account.total,
        fs_account.total,
        threshold,
        epsilon,
    ))
}

/// The decision rule by itself: no-sharing iff theta < threshold.
pub fn select_mode(report: &ModeReport, threshold: f64) -> ConvertMode {
    if report.theta < threshold {
        ConvertMode::NoSharing
    } else {
        ConvertMode::FullySharing
    }
}
