//! Write the bundled demo images and traces to a directory:
//!
//! ```text
//! cargo run -p shedfs --example make_fixture -- /tmp/images
//! ```
//!
//! Produces `app-a/` and `app-b/` (a two-container fleet with shared
//! layers), `webserv/` (a bloated synthetic web server), and one
//! `<name>.trace.jsonl` workload per image.

fn main() {
    let dir = std::env::args().nth(1).unwrap_or_else(|| {
        eprintln!("usage: make_fixture <output-dir>");
        std::process::exit(3);
    });
    shedfs::fixtures::write_demo_images(&dir).expect("write demo images");
    shedfs::fixtures::write_webserver_image(&dir).expect("write webserver image");
    println!("fixture images written to {dir}");
}
