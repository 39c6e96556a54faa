//! Deterministic demo images: a two-container pair with shared layers and a
//! larger synthetic web-server image. Used by the test suites, the CLI
//! walkthrough, and the Python smoke test.

use std::path::Path;

use crate::error::Result;
use crate::image::store_image;
use crate::model::{ContainerFs, LayerRole, LayerStore};
use crate::path::FsPath;
use crate::profile::{AccessTrace, TraceEvent};

pub const MB: u64 = 1 << 20;

fn path(s: &str) -> FsPath {
    FsPath::new(s).expect("fixture path")
}

/// Deterministic filler bytes, seeded per file so contents differ.
pub fn patterned_bytes(len: usize, seed: u64) -> Vec<u8> {
    let mut state = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1);
    (0..len)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state & 0xff) as u8
        })
        .collect()
}

/// A fleet of two containers stacked on the same two image layers:
/// `app-a` and `app-b` each see `/bin/app` (1 MB) and `/lib/libcore.so`
/// (2 MB) in the upper layer, `/lib/libextra.so` (3 MB) and
/// `/share/data.bin` (4 MB) in the lower.
pub struct DemoPair {
    pub a: ContainerFs,
    pub b: ContainerFs,
    /// app-a's workload: the binary plus the core library (3 MB total).
    pub a_trace: AccessTrace,
    /// app-b's workload: the core and extra libraries (5 MB total).
    pub b_trace: AccessTrace,
}

pub fn demo_pair(store: &mut LayerStore) -> DemoPair {
    let upper = store.add_layer(LayerRole::Image);
    store.add_directory(upper, path("/bin"), 0o755);
    store.add_directory(upper, path("/lib"), 0o755);
    store.add_regular(
        upper,
        path("/bin/app"),
        patterned_bytes(MB as usize, 11),
        0o755,
    );
    store.add_regular(
        upper,
        path("/lib/libcore.so"),
        patterned_bytes(2 * MB as usize, 12),
        0o644,
    );

    let lower = store.add_layer(LayerRole::Image);
    store.add_directory(lower, path("/lib"), 0o755);
    store.add_directory(lower, path("/share"), 0o755);
    store.add_regular(
        lower,
        path("/lib/libextra.so"),
        patterned_bytes(3 * MB as usize, 13),
        0o644,
    );
    store.add_regular(
        lower,
        path("/share/data.bin"),
        patterned_bytes(4 * MB as usize, 14),
        0o644,
    );

    let mk = |store: &mut LayerStore, id: &str| ContainerFs {
        container_id: id.to_string(),
        root_layers: vec![upper, lower],
        write_layer: store.add_layer(LayerRole::Write),
        mode: None,
        base_depth: 0,
    };
    let a = mk(store, "app-a");
    let b = mk(store, "app-b");
    let a_trace = AccessTrace::new(vec![
        TraceEvent::read(path("/bin/app")),
        TraceEvent::read(path("/lib/libcore.so")),
    ]);
    let b_trace = AccessTrace::new(vec![
        TraceEvent::read(path("/lib/libcore.so")),
        TraceEvent::read(path("/lib/libextra.so")),
    ]);
    DemoPair {
        a,
        b,
        a_trace,
        b_trace,
    }
}

/// A synthetic web-server image: two layers, ~15 MB of files of which the
/// serving workload touches ~5 MB. Plenty of locale, doc, and tooling bloat.
pub fn webserver_image(store: &mut LayerStore) -> (ContainerFs, AccessTrace) {
    let base = store.add_layer(LayerRole::Image);
    for d in [
        "/lib",
        "/etc",
        "/etc/ssl",
        "/usr",
        "/usr/bin",
        "/usr/share",
        "/usr/share/locale",
    ] {
        store.add_directory(base, path(d), 0o755);
    }
    store.add_regular(
        base,
        path("/lib/libc.so"),
        patterned_bytes(2 * MB as usize, 21),
        0o644,
    );
    store.add_regular(
        base,
        path("/lib/libssl.so"),
        patterned_bytes(MB as usize, 22),
        0o644,
    );
    store.add_regular(
        base,
        path("/etc/ssl/certs.pem"),
        patterned_bytes(200 * 1024, 23),
        0o644,
    );
    store.add_regular(
        base,
        path("/usr/bin/perl"),
        patterned_bytes(3 * MB as usize / 2, 24),
        0o755,
    );
    for i in 0..10 {
        store.add_regular(
            base,
            path(&format!("/usr/share/locale/messages_{i:02}.mo")),
            patterned_bytes(MB as usize / 2, 25 + i),
            0o644,
        );
    }

    let app = store.add_layer(LayerRole::Image);
    for d in [
        "/etc",
        "/etc/webd",
        "/usr",
        "/usr/sbin",
        "/usr/lib",
        "/usr/lib/webd",
        "/usr/share",
        "/usr/share/doc",
        "/usr/share/doc/webd",
        "/usr/share/man",
        "/var",
        "/var/www",
        "/var/www/html",
    ] {
        store.add_directory(app, path(d), 0o755);
    }
    store.add_regular(
        app,
        path("/usr/sbin/webd"),
        patterned_bytes(3 * MB as usize / 2, 41),
        0o755,
    );
    store.add_regular(
        app,
        path("/etc/webd/webd.conf"),
        patterned_bytes(4 * 1024, 42),
        0o644,
    );
    store.add_regular(
        app,
        path("/etc/webd/mime.types"),
        patterned_bytes(16 * 1024, 43),
        0o644,
    );
    store.add_regular(
        app,
        path("/var/www/html/index.html"),
        patterned_bytes(8 * 1024, 44),
        0o644,
    );
    store.add_regular(
        app,
        path("/usr/lib/webd/mod_tls.so"),
        patterned_bytes(300 * 1024, 45),
        0o644,
    );
    store.add_regular(
        app,
        path("/usr/lib/webd/mod_proxy.so"),
        patterned_bytes(300 * 1024, 46),
        0o644,
    );
    store.add_symlink(app, path("/usr/sbin/webd-debug"), "webd", 0o777);
    for i in 0..8 {
        store.add_regular(
            app,
            path(&format!("/usr/share/doc/webd/manual_{i}.html")),
            patterned_bytes(384 * 1024, 50 + i),
            0o644,
        );
    }
    store.add_regular(
        app,
        path("/usr/share/man/webd.8"),
        patterned_bytes(100 * 1024, 60),
        0o644,
    );

    let fs = ContainerFs {
        container_id: "webserv".to_string(),
        root_layers: vec![app, base],
        write_layer: store.add_layer(LayerRole::Write),
        mode: None,
        base_depth: 1,
    };
    // Serving workload: start the daemon, load config and TLS bits, serve
    // the index page, log an access.
    let trace = AccessTrace::new(vec![
        TraceEvent::read(path("/usr/sbin/webd")),
        TraceEvent::read(path("/lib/libc.so")),
        TraceEvent::read(path("/lib/libssl.so")),
        TraceEvent::read(path("/etc/webd/webd.conf")),
        TraceEvent::stat(path("/etc/webd/mime.types")),
        TraceEvent::read(path("/etc/ssl/certs.pem")),
        TraceEvent::read(path("/usr/lib/webd/mod_tls.so")),
        TraceEvent::list(path("/var/www/html")),
        TraceEvent::read(path("/var/www/html/index.html")),
        TraceEvent::write(path("/var/log/webd/access.log"), b"GET / 200\n".to_vec()),
    ]);
    (fs, trace)
}

/// Write the demo pair as on-disk image bundles plus trace files:
/// `<dir>/app-a/`, `<dir>/app-b/`, `<dir>/app-a.trace.jsonl`,
/// `<dir>/app-b.trace.jsonl`.
pub fn write_demo_images(dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let mut store = LayerStore::new();
    let pair = demo_pair(&mut store);
    store_image(&mut store, &pair.a, dir.join("app-a"))?;
    store_image(&mut store, &pair.b, dir.join("app-b"))?;
    pair.a_trace.save(dir.join("app-a.trace.jsonl"))?;
    pair.b_trace.save(dir.join("app-b.trace.jsonl"))?;
    Ok(())
}

/// Write the web-server image and its trace: `<dir>/webserv/`,
/// `<dir>/webserv.trace.jsonl`.
pub fn write_webserver_image(dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let mut store = LayerStore::new();
    let (fs, trace) = webserver_image(&mut store);
    store_image(&mut store, &fs, dir.join("webserv"))?;
    trace.save(dir.join("webserv.trace.jsonl"))?;
    Ok(())
}
