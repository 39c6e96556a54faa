//! Python bindings: drive the debloating engine in-process.
//!
//! One `Engine` holds a layer store and any number of containers, addressed
//! by image name. Structured results (records, reports, accounts) cross the
//! boundary as JSON strings so Python sees plain dicts after `json.loads`.
//!
//!     import shedfs_py, json
//!     eng = shedfs_py.Engine()
//!     name = eng.load_image("images/webserv")
//!     eng.convert(name, "no-sharing")
//!     eng.profile_path(name, "images/webserv.trace.jsonl")
//!     eng.export(name)
//!     eng.store_image(name, "out/webserv")

use std::collections::BTreeMap;

use pyo3::exceptions::{
    PyFileExistsError, PyFileNotFoundError, PyIOError, PyIsADirectoryError, PyKeyError,
    PyNotADirectoryError, PyValueError,
};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use shedfs::{AccessRecord, AccessTrace, ContainerFs, Error, FsPath, LayerStore, SharingRegistry};

fn to_py_err(e: Error) -> PyErr {
    match &e {
        Error::NotFound(_) | Error::MissingBlob(_) => PyFileNotFoundError::new_err(e.to_string()),
        Error::IsDirectory(_) => PyIsADirectoryError::new_err(e.to_string()),
        Error::NotADirectory(_) => PyNotADirectoryError::new_err(e.to_string()),
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        Error::AlreadyConverted(_) | Error::ExportBeforeConvert(_) => {
            PyFileExistsError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_path(path: &str) -> PyResult<FsPath> {
    FsPath::new(path).map_err(to_py_err)
}

fn to_json<T: serde::Serialize>(value: &T) -> PyResult<String> {
    serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// A layer store plus the containers stacked on it.
#[pyclass]
struct Engine {
    store: LayerStore,
    containers: BTreeMap<String, ContainerFs>,
    original_bytes: BTreeMap<String, u64>,
    registry: SharingRegistry,
}

impl Engine {
    fn container(&self, name: &str) -> PyResult<&ContainerFs> {
        self.containers
            .get(name)
            .ok_or_else(|| PyKeyError::new_err(format!("no container {name:?} loaded")))
    }
}

#[pymethods]
impl Engine {
    #[new]
    fn new() -> Self {
        Engine {
            store: LayerStore::new(),
            containers: BTreeMap::new(),
            original_bytes: BTreeMap::new(),
            registry: SharingRegistry::new(),
        }
    }

    /// Load an image bundle directory; returns the container name. Images
    /// loaded into the same engine share identical layers.
    fn load_image(&mut self, dir: &str) -> PyResult<String> {
        let (_, fs) = shedfs::load_image(&mut self.store, dir).map_err(to_py_err)?;
        let name = fs.container_id.clone();
        if self.containers.contains_key(&name) {
            return Err(PyValueError::new_err(format!(
                "container {name:?} already loaded"
            )));
        }
        let size = self.store.account_sizes(&[&fs]).per_container[&name];
        self.original_bytes.insert(name.clone(), size);
        self.containers.insert(name.clone(), fs);
        Ok(name)
    }

    fn container_names(&self) -> Vec<String> {
        self.containers.keys().cloned().collect()
    }

    /// Regular-file bytes currently reachable from the container.
    fn size_bytes(&self, name: &str) -> PyResult<u64> {
        let fs = self.container(name)?;
        Ok(self.store.account_sizes(&[fs]).per_container[name])
    }

    fn original_size_bytes(&self, name: &str) -> PyResult<u64> {
        self.original_bytes
            .get(name)
            .copied()
            .ok_or_else(|| PyKeyError::new_err(format!("no container {name:?} loaded")))
    }

    /// Per-container and deduplicated total sizes, as JSON.
    fn account_json(&self) -> PyResult<String> {
        let refs: Vec<&ContainerFs> = self.containers.values().collect();
        to_json(&self.store.account_sizes(&refs))
    }

    /// Reshape a container for debloating. `mode` is "no-sharing" or
    /// "semi-sharing" (which takes the manifest's base depth unless
    /// `base_depth` is given). Fully-sharing operates on a fleet, see
    /// `convert_fully_sharing`.
    #[pyo3(signature = (name, mode, base_depth=None))]
    fn convert(&mut self, name: &str, mode: &str, base_depth: Option<usize>) -> PyResult<()> {
        let fs = self
            .containers
            .get_mut(name)
            .ok_or_else(|| PyKeyError::new_err(format!("no container {name:?} loaded")))?;
        match mode {
            "no-sharing" => shedfs::convert_no_sharing(&mut self.store, fs).map_err(to_py_err),
            "semi-sharing" => {
                let depth = base_depth.unwrap_or(fs.base_depth);
                shedfs::convert_semi_sharing(&mut self.store, fs, depth).map_err(to_py_err)
            }
            "fully-sharing" => Err(PyValueError::new_err(
                "use convert_fully_sharing(names) for fleets",
            )),
            other => Err(PyValueError::new_err(format!("unknown mode {other:?}"))),
        }
    }

    /// Convert a fleet to fully-sharing; containers sharing image layers
    /// share debloating layers, across calls on this engine.
    fn convert_fully_sharing(&mut self, names: Vec<String>) -> PyResult<()> {
        let mut fleet = Vec::with_capacity(names.len());
        for n in &names {
            fleet.push(self.container(n)?.clone());
        }
        shedfs::convert_fully_sharing(&mut self.store, &mut fleet, &mut self.registry)
            .map_err(to_py_err)?;
        for fs in fleet {
            let name = fs.container_id.clone();
            self.containers.insert(name, fs);
        }
        Ok(())
    }

    /// Replay a JSONL trace (one `{"op":...,"path":...}` object per line);
    /// returns the access record as JSON.
    fn profile(&mut self, name: &str, trace_jsonl: &str) -> PyResult<String> {
        let trace = AccessTrace::parse_jsonl(trace_jsonl).map_err(to_py_err)?;
        let fs = self.container(name)?.clone();
        let record: AccessRecord = shedfs::profile(&mut self.store, &fs, &trace);
        to_json(&record)
    }

    /// Like `profile`, reading the trace from a file.
    fn profile_path(&mut self, name: &str, trace_path: &str) -> PyResult<String> {
        let trace = AccessTrace::load(trace_path).map_err(to_py_err)?;
        let fs = self.container(name)?.clone();
        let record = shedfs::profile(&mut self.store, &fs, &trace);
        to_json(&record)
    }

    /// Freeze the debloating layers and drop everything unused; the
    /// container under `name` becomes its debloated version.
    fn export(&mut self, name: &str) -> PyResult<()> {
        let fs = self.container(name)?.clone();
        let debloated = shedfs::export(&mut self.store, &fs).map_err(to_py_err)?;
        self.containers.insert(name.to_string(), debloated);
        Ok(())
    }

    /// Write the container as an image bundle directory.
    fn store_image(&mut self, name: &str, dir: &str) -> PyResult<()> {
        let fs = self.container(name)?.clone();
        shedfs::store_image(&mut self.store, &fs, dir).map_err(to_py_err)?;
        Ok(())
    }

    /// Replay a verification trace; returns the report as JSON with
    /// `passed` and per-event `failures`.
    fn verify(&mut self, name: &str, trace_jsonl: &str) -> PyResult<String> {
        let trace = AccessTrace::parse_jsonl(trace_jsonl).map_err(to_py_err)?;
        let fs = self.container(name)?.clone();
        to_json(&shedfs::verify(&mut self.store, &fs, &trace))
    }

    fn verify_path(&mut self, name: &str, trace_path: &str) -> PyResult<String> {
        let trace = AccessTrace::load(trace_path).map_err(to_py_err)?;
        let fs = self.container(name)?.clone();
        to_json(&shedfs::verify(&mut self.store, &fs, &trace))
    }

    /// Size the named containers under both no-sharing and fully-sharing
    /// (on cloned state) and recommend a mode; returns the report as JSON.
    #[pyo3(signature = (names, traces_jsonl, threshold=1.0, epsilon=1))]
    fn analyze(
        &self,
        names: Vec<String>,
        traces_jsonl: Vec<String>,
        threshold: f64,
        epsilon: u64,
    ) -> PyResult<String> {
        let mut fleet = Vec::with_capacity(names.len());
        for n in &names {
            fleet.push(self.container(n)?.clone());
        }
        let mut traces = Vec::with_capacity(traces_jsonl.len());
        for t in &traces_jsonl {
            traces.push(AccessTrace::parse_jsonl(t).map_err(to_py_err)?);
        }
        let report =
            shedfs::analyze(&self.store, &fleet, &traces, threshold, epsilon).map_err(to_py_err)?;
        to_json(&report)
    }

    /// Write the fully resolved tree to a host directory.
    fn materialize(&self, name: &str, dir: &str) -> PyResult<()> {
        shedfs::materialize(&self.store, self.container(name)?, dir).map_err(to_py_err)
    }

    // Direct filesystem operations, mainly for exploration and tests.

    /// Read a file (follows symlinks). Migrates on first access when the
    /// container is converted, exactly like a profiled read.
    fn read<'py>(
        &mut self,
        py: Python<'py>,
        name: &str,
        path: &str,
    ) -> PyResult<Bound<'py, PyBytes>> {
        let fs = self.container(name)?.clone();
        let p = parse_path(path)?;
        let mut rec = AccessRecord::new();
        let bytes = self
            .store
            .read(&fs, &p, None, &mut rec)
            .map_err(to_py_err)?;
        Ok(PyBytes::new(py, &bytes))
    }

    fn write(&mut self, name: &str, path: &str, data: &[u8]) -> PyResult<()> {
        let fs = self.container(name)?.clone();
        let p = parse_path(path)?;
        let mut rec = AccessRecord::new();
        self.store.write(&fs, &p, data, &mut rec).map_err(to_py_err)
    }

    /// Entry metadata (lstat) as JSON; counts as use.
    fn stat(&mut self, name: &str, path: &str) -> PyResult<String> {
        let fs = self.container(name)?.clone();
        let p = parse_path(path)?;
        let mut rec = AccessRecord::new();
        let entry = self.store.stat(&fs, &p, &mut rec).map_err(to_py_err)?;
        to_json(&entry)
    }

    /// Child names across all layers; never migrates.
    fn list_dir(&self, name: &str, path: &str) -> PyResult<Vec<String>> {
        let fs = self.container(name)?;
        let p = parse_path(path)?;
        let mut rec = AccessRecord::new();
        let names = self.store.list_dir(fs, &p, &mut rec).map_err(to_py_err)?;
        Ok(names.into_iter().collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Engine(containers={:?})",
            self.containers.keys().collect::<Vec<_>>()
        )
    }
}

/// Write the demo fleet (`app-a`, `app-b` with shared layers) plus traces.
#[pyfunction]
fn write_demo_images(dir: &str) -> PyResult<()> {
    shedfs::fixtures::write_demo_images(dir).map_err(to_py_err)
}

/// Write the synthetic web-server image plus its serving trace.
#[pyfunction]
fn write_webserver_image(dir: &str) -> PyResult<()> {
    shedfs::fixtures::write_webserver_image(dir).map_err(to_py_err)
}

#[pymodule]
fn shedfs_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Engine>()?;
    m.add_function(wrap_pyfunction!(write_demo_images, m)?)?;
    m.add_function(wrap_pyfunction!(write_webserver_image, m)?)?;
    Ok(())
}
