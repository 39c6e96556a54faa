//! Shared test infrastructure: a brute-force flattened-union oracle, a
//! deterministic instance generator, and a builder that turns plain instance
//! descriptions into engine state.
//!
//! The oracle never calls into the engine's resolution path: it keeps its
//! own copy of every layer as a plain path→entry map and resolves lookups
//! over the flattened union of the original linear stack (most-recent write,
//! then layers top→bottom).

use std::collections::{BTreeMap, BTreeSet};

use shedfs::{AccessOp, ContainerFs, FsPath, LayerRole, LayerStore, TraceEvent};

pub const MAX_LINK_HOPS: usize = 40;

// ---------------------------------------------------------------------------
// Deterministic RNG (SplitMix64): no dependency, stable across platforms.
// ---------------------------------------------------------------------------

pub struct Rng(u64);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n.max(1) as u64) as usize
    }

    pub fn chance(&mut self, percent: u32) -> bool {
        (self.next_u64() % 100) < percent as u64
    }

    pub fn pick<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.below(items.len())]
    }
}

// ---------------------------------------------------------------------------
// Plain (engine-independent) instance description
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlainEntry {
    File { bytes: Vec<u8>, mode: u32 },
    Dir { mode: u32 },
    Link { target: String, mode: u32 },
}

pub type PlainLayer = BTreeMap<String, PlainEntry>;

#[derive(Debug, Clone)]
pub struct PlainContainer {
    pub id: String,
    /// Indices into the instance layer pool, top→bottom.
    pub layer_idx: Vec<usize>,
    pub trace: Vec<TraceEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeKind {
    NoSharing,
    FullySharing,
    SemiSharing,
}

#[derive(Debug, Clone)]
pub struct PlainInstance {
    pub seed: u64,
    pub layers: Vec<PlainLayer>,
    pub containers: Vec<PlainContainer>,
    pub mode: ModeKind,
    /// Base depth per container (semi-sharing only).
    pub base_depth: usize,
}

// ---------------------------------------------------------------------------
// Oracle: flattened-union resolution over the original stack plus writes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OErr {
    NotFound,
    IsDirectory,
    NotADirectory,
    TooManyLinks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Writes,
    /// Served by the stack layer at this index (0 = top).
    Layer(usize),
}

impl Source {
    pub fn is_layer(&self) -> bool {
        matches!(self, Source::Layer(_))
    }
}

pub struct Oracle {
    /// The container's original layers, top→bottom, as plain maps.
    layers: Vec<PlainLayer>,
    /// Copy-on-write overlay updated by `write`.
    writes: PlainLayer,
}

impl Oracle {
    pub fn new(layers: Vec<PlainLayer>) -> Self {
        Oracle {
            layers,
            writes: PlainLayer::new(),
        }
    }

    pub fn lookup(&self, path: &str) -> Option<(Source, &PlainEntry)> {
        if let Some(e) = self.writes.get(path) {
            return Some((Source::Writes, e));
        }
        for (idx, layer) in self.layers.iter().enumerate() {
            if let Some(e) = layer.get(path) {
                return Some((Source::Layer(idx), e));
            }
        }
        None
    }

    /// Follow symlinks to the final entry. Returns the final path, where it
    /// came from, and the entry.
    pub fn resolve(&self, path: &str) -> Result<(String, Source, &PlainEntry), OErr> {
        self.resolve_touching(path, &mut |_, _| {})
    }

    /// Like `resolve`, reporting every path the walk touches (each link hop
    /// and the final entry) together with its source — the entries a
    /// debloating layer would migrate.
    pub fn resolve_touching(
        &self,
        path: &str,
        touched: &mut dyn FnMut(&str, Source),
    ) -> Result<(String, Source, &PlainEntry), OErr> {
        let mut current = path.to_string();
        let mut hops = 0usize;
        loop {
            if current == "/" {
                return Err(OErr::IsDirectory);
            }
            let (source, entry) = self.lookup(&current).ok_or(OErr::NotFound)?;
            touched(&current, source);
            match entry {
                PlainEntry::Link { target, .. } => {
                    hops += 1;
                    if hops > MAX_LINK_HOPS {
                        return Err(OErr::TooManyLinks);
                    }
                    current = resolve_link(&current, target);
                }
                _ => return Ok((current.clone(), source, entry)),
            }
        }
    }

    pub fn read(&self, path: &str) -> Result<(String, Source, Vec<u8>), OErr> {
        let (final_path, source, entry) = self.resolve(path)?;
        match entry {
            PlainEntry::File { bytes, .. } => Ok((final_path, source, bytes.clone())),
            PlainEntry::Dir { .. } => Err(OErr::IsDirectory),
            PlainEntry::Link { .. } => unreachable!("resolve returned a link"),
        }
    }

    /// lstat: the entry at `path` itself, no following.
    pub fn stat(&self, path: &str) -> Result<(Source, PlainEntry), OErr> {
        if path == "/" {
            return Ok((Source::Writes, PlainEntry::Dir { mode: 0o755 }));
        }
        self.lookup(path)
            .map(|(s, e)| (s, e.clone()))
            .ok_or(OErr::NotFound)
    }

    pub fn list(&self, path: &str) -> Result<BTreeSet<String>, OErr> {
        if path != "/" {
            match self.lookup(path) {
                None => return Err(OErr::NotFound),
                Some((_, PlainEntry::Dir { .. })) => {}
                Some(_) => return Err(OErr::NotADirectory),
            }
        }
        let mut names = BTreeSet::new();
        let mut collect = |layer: &PlainLayer| {
            for p in layer.keys() {
                if parent_of(p).as_deref() == Some(path) {
                    if let Some(name) = file_name_of(p) {
                        names.insert(name.to_string());
                    }
                }
            }
        };
        collect(&self.writes);
        for layer in &self.layers {
            collect(layer);
        }
        Ok(names)
    }

    pub fn write(&mut self, path: &str, bytes: &[u8]) -> Result<(), OErr> {
        if path == "/" {
            return Err(OErr::IsDirectory);
        }
        for anc in ancestors_of(path) {
            if !self.writes.contains_key(&anc) {
                let mode = match self.lookup(&anc) {
                    Some((_, PlainEntry::Dir { mode })) => *mode,
                    _ => 0o755,
                };
                self.writes.insert(anc, PlainEntry::Dir { mode });
            }
        }
        self.writes.insert(
            path.to_string(),
            PlainEntry::File {
                bytes: bytes.to_vec(),
                mode: 0o644,
            },
        );
        Ok(())
    }
}

pub fn parent_of(path: &str) -> Option<String> {
    if path == "/" {
        return None;
    }
    match path.rfind('/') {
        Some(0) => Some("/".to_string()),
        Some(i) => Some(path[..i].to_string()),
        None => None,
    }
}

pub fn file_name_of(path: &str) -> Option<&str> {
    if path == "/" {
        None
    } else {
        path.rfind('/').map(|i| &path[i + 1..])
    }
}

pub fn ancestors_of(path: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = parent_of(path);
    while let Some(p) = cur {
        if p == "/" {
            break;
        }
        cur = parent_of(&p);
        out.push(p);
    }
    out.reverse();
    out
}

/// Symlink target resolution, same rule the engine documents: absolute
/// targets restart at `/`, relative ones join the link's directory; `.`
/// and `..` normalize with `..` stopping at the root.
pub fn resolve_link(link_path: &str, target: &str) -> String {
    let joined = if target.starts_with('/') {
        target.to_string()
    } else {
        let base = parent_of(link_path).unwrap_or_else(|| "/".to_string());
        if base == "/" {
            format!("/{target}")
        } else {
            format!("{base}/{target}")
        }
    };
    let mut parts: Vec<&str> = Vec::new();
    for comp in joined.split('/') {
        match comp {
            "" | "." => {}
            ".." => {
                parts.pop();
            }
            c => parts.push(c),
        }
    }
    if parts.is_empty() {
        "/".to_string()
    } else {
        format!("/{}", parts.join("/"))
    }
}

// ---------------------------------------------------------------------------
// Instance generation
// ---------------------------------------------------------------------------

fn gen_path_pool(rng: &mut Rng) -> (Vec<String>, Vec<String>) {
    // A handful of directories, some nested.
    let mut dirs = vec!["/d0".to_string(), "/d1".to_string()];
    for i in 0..rng.below(3) {
        dirs.push(format!("/d{i}/sub"));
    }
    if rng.chance(40) {
        dirs.push("/d0/sub/deep".to_string());
    }
    dirs.sort();
    dirs.dedup();

    let mut files = Vec::new();
    let file_count = 6 + rng.below(24);
    for i in 0..file_count {
        let dir = if rng.chance(25) {
            ""
        } else {
            rng.pick(&dirs).as_str()
        };
        files.push(format!("{dir}/f{i}"));
    }
    files.sort();
    files.dedup();
    (dirs, files)
}

fn add_file_with_parents(layer: &mut PlainLayer, rng: &mut Rng, path: &str, bytes: Vec<u8>) {
    for anc in ancestors_of(path) {
        layer.entry(anc).or_insert(PlainEntry::Dir { mode: 0o755 });
    }
    let mode = if rng.chance(20) { 0o755 } else { 0o644 };
    layer.insert(path.to_string(), PlainEntry::File { bytes, mode });
}

fn gen_layer(rng: &mut Rng, dirs: &[String], files: &[String], nonce: u64) -> PlainLayer {
    let mut layer = PlainLayer::new();
    let take = 1 + rng.below(files.len().min(12));
    for _ in 0..take {
        let path = rng.pick(files).clone();
        if layer.contains_key(&path) {
            continue;
        }
        let len = rng.below(48) + 1;
        let mut bytes: Vec<u8> = (0..len).map(|_| (rng.next_u64() & 0xff) as u8).collect();
        bytes.extend_from_slice(&nonce.to_le_bytes());
        add_file_with_parents(&mut layer, rng, &path, bytes);
    }
    // Sprinkle symlinks at paths this layer does not already use.
    for _ in 0..rng.below(3) {
        let path = rng.pick(files).clone();
        let link_path = format!("{path}.lnk");
        if layer.contains_key(&link_path) {
            continue;
        }
        let target = match rng.below(5) {
            0 => "/nowhere/dangling".to_string(),
            1 => rng.pick(dirs).clone(),
            2 => format!("{}.lnk", rng.pick(files)), // possible chain or cycle
            _ => rng.pick(files).clone(),
        };
        // Occasionally a relative target.
        let target = if rng.chance(30) && target.starts_with('/') {
            format!("..{target}")
        } else {
            target
        };
        for anc in ancestors_of(&link_path) {
            layer.entry(anc).or_insert(PlainEntry::Dir { mode: 0o755 });
        }
        layer.insert(
            link_path,
            PlainEntry::Link {
                target,
                mode: 0o777,
            },
        );
    }
    layer
}

/// Payload prefix for generated writes; the privacy check scans for it.
pub const WRITE_TAG: &[u8] = b"WRITTEN-PAYLOAD::";

fn gen_trace(
    rng: &mut Rng,
    oracle: &mut Oracle,
    files: &[String],
    dirs: &[String],
) -> Vec<TraceEvent> {
    let mut events = Vec::new();
    let target_len = 6 + rng.below(14);
    let mut written = Vec::new();
    // Link paths participate so traces exercise symlink migration.
    let mut lookup_pool: Vec<String> = files.to_vec();
    lookup_pool.extend(files.iter().map(|f| format!("{f}.lnk")));
    while events.len() < target_len {
        match rng.below(100) {
            // Reads dominate, as in real workloads.
            0..=59 => {
                // Pick any pool path whose read currently succeeds.
                let mut candidates: Vec<String> =
                    lookup_pool.iter().chain(written.iter()).cloned().collect();
                candidates.sort();
                candidates.dedup();
                let readable: Vec<String> = candidates
                    .into_iter()
                    .filter(|p| oracle.read(p).is_ok())
                    .collect();
                if readable.is_empty() {
                    break;
                }
                let path = rng.pick(&readable).clone();
                events.push(TraceEvent::read(FsPath::new(&path).unwrap()));
            }
            60..=74 => {
                let pool: Vec<String> = lookup_pool
                    .iter()
                    .chain(dirs.iter())
                    .filter(|p| oracle.lookup(p).is_some())
                    .cloned()
                    .collect();
                if pool.is_empty() {
                    continue;
                }
                let path = rng.pick(&pool).clone();
                events.push(TraceEvent::stat(FsPath::new(&path).unwrap()));
            }
            75..=84 => {
                let mut pool: Vec<String> = dirs
                    .iter()
                    .filter(|p| matches!(oracle.lookup(p), Some((_, PlainEntry::Dir { .. }))))
                    .cloned()
                    .collect();
                pool.push("/".to_string());
                let path = rng.pick(&pool).clone();
                // Listing alone does not mark a directory used, so a listed
                // directory would be debloated away and verification would
                // fail — the documented list-after-debloat failure mode.
                // Workloads that need the directory stat it first.
                if path != "/" {
                    events.push(TraceEvent::stat(FsPath::new(&path).unwrap()));
                }
                events.push(TraceEvent::list(FsPath::new(&path).unwrap()));
            }
            _ => {
                let path = if rng.chance(50) {
                    rng.pick(files).clone()
                } else {
                    format!("{}/w{}", rng.pick(dirs), rng.below(10))
                };
                let mut payload = WRITE_TAG.to_vec();
                payload.extend((0..rng.below(24) + 4).map(|_| (rng.next_u64() & 0xff) as u8));
                oracle.write(&path, &payload).unwrap();
                written.push(path.clone());
                events.push(TraceEvent::write(FsPath::new(&path).unwrap(), payload));
            }
        }
    }
    events
}

pub fn gen_instance(seed: u64) -> PlainInstance {
    let mut rng = Rng::new(seed);
    let mode = match seed % 3 {
        0 => ModeKind::NoSharing,
        1 => ModeKind::FullySharing,
        _ => ModeKind::SemiSharing,
    };
    let (dirs, files) = gen_path_pool(&mut rng);

    let pool_size = 1 + rng.below(6);
    let layers: Vec<PlainLayer> = (0..pool_size)
        .map(|i| {
            gen_layer(
                &mut rng,
                &dirs,
                &files,
                seed.wrapping_mul(31).wrapping_add(i as u64),
            )
        })
        .collect();

    let container_count = match mode {
        ModeKind::SemiSharing => 1,
        ModeKind::FullySharing => 1 + rng.below(3),
        ModeKind::NoSharing => 1 + rng.below(2),
    };

    let mut containers = Vec::new();
    for c in 0..container_count {
        // An ordered subsequence of the pool; containers overlap freely.
        let mut layer_idx: Vec<usize> = (0..pool_size).filter(|_| rng.chance(70)).collect();
        if layer_idx.is_empty() {
            layer_idx.push(rng.below(pool_size));
        }
        let stack: Vec<PlainLayer> = layer_idx.iter().map(|&i| layers[i].clone()).collect();
        let mut scratch = Oracle::new(stack);
        let trace = gen_trace(&mut rng, &mut scratch, &files, &dirs);
        containers.push(PlainContainer {
            id: format!("c{c}"),
            layer_idx,
            trace,
        });
    }

    let base_depth = match mode {
        ModeKind::SemiSharing => rng.below(containers[0].layer_idx.len()),
        _ => 0,
    };

    PlainInstance {
        seed,
        layers,
        containers,
        mode,
        base_depth,
    }
}

// ---------------------------------------------------------------------------
// Engine state construction from plain data
// ---------------------------------------------------------------------------

pub struct BuiltInstance {
    pub store: LayerStore,
    pub containers: Vec<ContainerFs>,
}

pub fn build_engine_state(plain: &PlainInstance) -> BuiltInstance {
    let mut store = LayerStore::new();
    let pool_ids: Vec<_> = plain
        .layers
        .iter()
        .map(|layer| {
            let id = store.add_layer(LayerRole::Image);
            for (path, entry) in layer {
                let fp = FsPath::new(path).unwrap();
                match entry {
                    PlainEntry::File { bytes, mode } => {
                        store.add_regular(id, fp, bytes.clone(), *mode)
                    }
                    PlainEntry::Dir { mode } => store.add_directory(id, fp, *mode),
                    PlainEntry::Link { target, mode } => store.add_symlink(id, fp, target, *mode),
                }
            }
            id
        })
        .collect();

    let containers = plain
        .containers
        .iter()
        .map(|c| ContainerFs {
            container_id: c.id.clone(),
            root_layers: c.layer_idx.iter().map(|&i| pool_ids[i]).collect(),
            write_layer: store.add_layer(LayerRole::Write),
            mode: None,
            base_depth: 0,
        })
        .collect();

    BuiltInstance { store, containers }
}

/// Convert every container of a built instance according to the plain
/// instance's mode.
pub fn convert_instance(plain: &PlainInstance, built: &mut BuiltInstance) {
    match plain.mode {
        ModeKind::NoSharing => {
            for fs in &mut built.containers {
                shedfs::convert_no_sharing(&mut built.store, fs).unwrap();
            }
        }
        ModeKind::FullySharing => {
            let mut registry = shedfs::SharingRegistry::new();
            shedfs::convert_fully_sharing(&mut built.store, &mut built.containers, &mut registry)
                .unwrap();
        }
        ModeKind::SemiSharing => {
            for fs in &mut built.containers {
                shedfs::convert_semi_sharing(&mut built.store, fs, plain.base_depth).unwrap();
            }
        }
    }
}

/// Fresh per-container oracles over the original stacks.
pub fn oracles_for(plain: &PlainInstance) -> Vec<Oracle> {
    plain
        .containers
        .iter()
        .map(|c| {
            Oracle::new(
                c.layer_idx
                    .iter()
                    .map(|&i| plain.layers[i].clone())
                    .collect(),
            )
        })
        .collect()
}

/// Map an engine error onto the oracle's error space; panics on anything a
/// corpus operation should never produce.
pub fn map_engine_err(err: &shedfs::Error) -> OErr {
    match err {
        shedfs::Error::NotFound(_) => OErr::NotFound,
        shedfs::Error::IsDirectory(_) => OErr::IsDirectory,
        shedfs::Error::NotADirectory(_) => OErr::NotADirectory,
        shedfs::Error::TooManyLinks(_) => OErr::TooManyLinks,
        other => panic!("unexpected engine error in corpus: {other}"),
    }
}

/// The regular files a trace is expected to pin into the debloating
/// layer(s): final targets of successful layer-served reads plus directly
/// stat'ed regular entries. Simulated oracle-side only.
pub fn expected_accessed_regulars(
    oracle: &mut Oracle,
    trace: &[TraceEvent],
) -> BTreeMap<String, Vec<u8>> {
    let mut accessed = BTreeMap::new();
    for ev in trace {
        let path = ev.path.as_str();
        match ev.op {
            AccessOp::Read => {
                if let Ok((final_path, source, bytes)) = oracle.read(path) {
                    if source.is_layer() {
                        accessed.insert(final_path, bytes);
                    }
                }
            }
            AccessOp::Stat => {
                if let Ok((source, PlainEntry::File { bytes, .. })) = oracle.stat(path) {
                    if source.is_layer() {
                        accessed.insert(path.to_string(), bytes);
                    }
                }
            }
            AccessOp::List => {}
            AccessOp::Write => {
                oracle
                    .write(path, ev.data.as_deref().unwrap_or(b""))
                    .unwrap();
            }
        }
    }
    accessed
}

/// Every path a trace is expected to leave inside the container's
/// debloating layer(s): entries whose resolution touched a migrating layer
/// (symlink hops included, failed reads included up to the point of
/// failure) plus the parent-directory entries created for them. `migrates`
/// decides, per serving layer index, whether the layer sits under a
/// debloating layer in the converted shape.
pub fn expected_debloated_paths(
    oracle: &mut Oracle,
    trace: &[TraceEvent],
    migrates: &dyn Fn(usize) -> bool,
) -> BTreeSet<String> {
    let mut moved: BTreeSet<String> = BTreeSet::new();
    let touch = |moved: &mut BTreeSet<String>, path: &str, source: Source| {
        if let Source::Layer(idx) = source {
            if migrates(idx) {
                moved.insert(path.to_string());
            }
        }
    };
    for ev in trace {
        let path = ev.path.as_str();
        match ev.op {
            AccessOp::Read => {
                let mut touched = Vec::new();
                let _ = oracle.resolve_touching(path, &mut |p, s| touched.push((p.to_string(), s)));
                for (p, s) in touched {
                    touch(&mut moved, &p, s);
                }
            }
            AccessOp::Stat => {
                if let Ok((source, _)) = oracle.stat(path) {
                    touch(&mut moved, path, source);
                }
            }
            AccessOp::List => {}
            AccessOp::Write => {
                oracle
                    .write(path, ev.data.as_deref().unwrap_or(b""))
                    .unwrap();
            }
        }
    }
    // Parent directories come along with every move.
    let mut with_parents = moved.clone();
    for p in &moved {
        with_parents.extend(ancestors_of(p));
    }
    with_parents
}
