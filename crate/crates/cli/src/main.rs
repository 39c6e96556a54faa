//! shedfs command line: convert → profile → export → verify, plus analyze.
//!
//! Exit codes: 0 success, 1 verification failure, 2 input corruption,
//! 3 invalid arguments, 4 state misuse.

mod state;

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use shedfs::{
    analyze, convert_fully_sharing, convert_no_sharing, convert_semi_sharing, export, load_image,
    profile, store_image, verify, AccessOp, AccessTrace, Error, LayerStore, SharingRegistry,
};

use state::{ContainerRecord, StateBundle, StateLock};

pub enum CliError {
    Engine(Error),
    /// Bad flags or inconsistent arguments → exit 3.
    Usage(String),
    /// Operating on state in the wrong phase, or a held lock → exit 4.
    StateMisuse(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Engine(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Engine(Error::Io(e))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Engine(e) => write!(f, "{e}"),
            CliError::Usage(m) | CliError::StateMisuse(m) => write!(f, "{m}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 3,
            CliError::StateMisuse(_) => 4,
            CliError::Engine(e) => match e {
                Error::MissingBlob(_)
                | Error::CorruptBlob { .. }
                | Error::BadManifest(_)
                | Error::BadTrace { .. }
                | Error::Io(_) => 2,
                Error::InvalidBaseDepth { .. } | Error::InvalidPath { .. } => 3,
                Error::AlreadyConverted(_) | Error::ExportBeforeConvert(_) => 4,
                // Resolution errors surface through reports, not exits; if
                // one escapes this far it is still an input problem.
                _ => 2,
            },
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "shedfs",
    version,
    about = "Debloat container images through a migrate-on-read filesystem layer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    #[value(name = "no-sharing")]
    NoSharing,
    #[value(name = "fully-sharing")]
    FullySharing,
    #[value(name = "semi-sharing")]
    SemiSharing,
}

#[derive(Subcommand)]
enum Command {
    /// Load images and reshape them for debloating; writes an engine state
    /// directory the later steps operate on.
    Convert {
        /// Image directories (manifest.json + blobs); several images form a
        /// fleet and may share layers.
        #[arg(required = true)]
        images: Vec<PathBuf>,
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Bottom layers to leave untouched (semi-sharing). Defaults to the
        /// image manifest's base_depth.
        #[arg(long)]
        base_depth: Option<usize>,
        /// Where to write the engine state.
        #[arg(long)]
        state: PathBuf,
    },
    /// Replay profiling trace(s) through a converted state; used files
    /// migrate into the debloating layers.
    Profile {
        #[arg(long)]
        state: PathBuf,
        /// One trace file per container, in the order images were given to
        /// convert.
        #[arg(long, required = true)]
        trace: Vec<PathBuf>,
    },
    /// Freeze the debloating layers and write debloated image bundles.
    Export {
        #[arg(long)]
        state: PathBuf,
        /// Output directory; one image bundle per container is written
        /// under it.
        #[arg(long)]
        output: PathBuf,
    },
    /// Size a fleet under both no-sharing and fully-sharing and recommend a
    /// mode.
    Analyze {
        #[arg(required = true)]
        images: Vec<PathBuf>,
        /// One trace file per image, in the same order.
        #[arg(long, required = true)]
        trace: Vec<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        threshold: f64,
        /// Denominator guard in bytes, used when beta is zero.
        #[arg(long, default_value_t = 1)]
        epsilon: u64,
        /// Also write the full report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Replay a verification trace against a debloated image.
    Verify {
        image: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        /// Also write the verification report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

const MB: f64 = (1u64 << 20) as f64;

fn fmt_mb(bytes: u64) -> String {
    format!("{:.1} MB", bytes as f64 / MB)
}

fn reduction_pct(original: u64, debloated: u64) -> i64 {
    if original == 0 {
        return 0;
    }
    (((original as f64 - debloated as f64) / original as f64) * 100.0).round() as i64
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version print and exit clean; real parse errors are
            // invalid arguments.
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(3),
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> CliResult<ExitCode> {
    match cli.command {
        Command::Convert {
            images,
            mode,
            base_depth,
            state,
        } => cmd_convert(images, mode, base_depth, state),
        Command::Profile { state, trace } => cmd_profile(state, trace),
        Command::Export { state, output } => cmd_export(state, output),
        Command::Analyze {
            images,
            trace,
            threshold,
            epsilon,
            report,
        } => cmd_analyze(images, trace, threshold, epsilon, report),
        Command::Verify {
            image,
            trace,
            report,
        } => cmd_verify(image, trace, report),
    }
}

fn ensure_state_exists(state_dir: &std::path::Path) -> CliResult<()> {
    if !StateBundle::exists(state_dir) {
        return Err(CliError::StateMisuse(format!(
            "no state bundle at {} (run convert first)",
            state_dir.display()
        )));
    }
    Ok(())
}

fn load_fleet(store: &mut LayerStore, images: &[PathBuf]) -> CliResult<Vec<ContainerRecord>> {
    let mut records = Vec::new();
    let mut names = BTreeSet::new();
    for dir in images {
        let (_, fs) = load_image(store, dir)?;
        if !names.insert(fs.container_id.clone()) {
            return Err(CliError::Usage(format!(
                "duplicate image name {:?}",
                fs.container_id
            )));
        }
        let original_bytes = store.account_sizes(&[&fs]).per_container[&fs.container_id];
        records.push(ContainerRecord { fs, original_bytes });
    }
    Ok(records)
}

fn cmd_convert(
    images: Vec<PathBuf>,
    mode: ModeArg,
    base_depth: Option<usize>,
    state_dir: PathBuf,
) -> CliResult<ExitCode> {
    if StateBundle::exists(&state_dir) {
        return Err(CliError::StateMisuse(format!(
            "state {} already holds a converted fleet; convert cannot run twice on the same state",
            state_dir.display()
        )));
    }
    let mut store = LayerStore::new();
    let mut records = load_fleet(&mut store, &images)?;

    match mode {
        ModeArg::NoSharing => {
            for rec in &mut records {
                convert_no_sharing(&mut store, &mut rec.fs)?;
            }
        }
        ModeArg::FullySharing => {
            let mut fleet: Vec<_> = records.iter().map(|r| r.fs.clone()).collect();
            let mut registry = SharingRegistry::new();
            convert_fully_sharing(&mut store, &mut fleet, &mut registry)?;
            for (rec, fs) in records.iter_mut().zip(fleet) {
                rec.fs = fs;
            }
        }
        ModeArg::SemiSharing => {
            for rec in &mut records {
                let depth = base_depth.unwrap_or(rec.fs.base_depth);
                convert_semi_sharing(&mut store, &mut rec.fs, depth)?;
            }
        }
    }

    for rec in &records {
        let roots = rec.fs.root_layers.len();
        let children: usize = rec
            .fs
            .root_layers
            .iter()
            .map(|&id| store.layer(id).children.len())
            .sum();
        println!(
            "converted {} ({}): {} root layer(s), {} child layer(s)",
            rec.fs.container_id,
            rec.fs.mode.expect("just converted"),
            roots,
            children
        );
    }

    let bundle = StateBundle::new(store, records, state_dir);
    bundle.create(true)?;
    println!("state written to {}", bundle.dir().display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_profile(state_dir: PathBuf, trace_paths: Vec<PathBuf>) -> CliResult<ExitCode> {
    ensure_state_exists(&state_dir)?;
    let _lock = StateLock::acquire(&state_dir)?;
    let mut bundle = StateBundle::load(&state_dir)?;
    if trace_paths.len() != bundle.containers.len() {
        return Err(CliError::Usage(format!(
            "{} trace file(s) for {} container(s); pass one --trace per container in convert order",
            trace_paths.len(),
            bundle.containers.len()
        )));
    }

    for (rec, trace_path) in bundle.containers.iter().zip(&trace_paths) {
        let trace = AccessTrace::load(trace_path)?;
        let record = profile(&mut bundle.store, &rec.fs, &trace);
        println!(
            "profiling {} with {} event(s):",
            rec.fs.container_id,
            trace.events.len()
        );
        let mut hits = 0usize;
        for ev in &record.events {
            let op = match ev.op {
                AccessOp::Read => "read",
                AccessOp::Stat => "stat",
                AccessOp::List => "list",
                AccessOp::Write => "write",
            };
            match ev.hit {
                Some(layer) => {
                    hits += 1;
                    println!("  {op} {} -> {layer} ({} probes)", ev.path, ev.probe_count);
                }
                None if ev.op == AccessOp::Stat && ev.resolved.is_some() => {
                    hits += 1;
                    println!("  {op} {} -> / (implicit root)", ev.path);
                }
                None => println!("  {op} {} -> MISS", ev.path),
            }
        }
        println!("  {hits} hit(s), {} miss(es)", record.events.len() - hits);
    }

    bundle.save()?;
    println!("state updated at {}", state_dir.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_export(state_dir: PathBuf, output: PathBuf) -> CliResult<ExitCode> {
    ensure_state_exists(&state_dir)?;
    let _lock = StateLock::acquire(&state_dir)?;
    let mut bundle = StateBundle::load(&state_dir)?;
    if output.exists() {
        return Err(CliError::Usage(format!(
            "output directory {} already exists",
            output.display()
        )));
    }

    // Export every container before measuring; fully-sharing fleets share
    // frozen layers across containers.
    let mut debloated = Vec::new();
    for rec in &bundle.containers {
        debloated.push(export(&mut bundle.store, &rec.fs)?);
    }

    let staging = output.with_extension(format!("tmp-{}", std::process::id()));
    if staging.exists() {
        std::fs::remove_dir_all(&staging).map_err(Error::Io)?;
    }
    let result = (|| -> CliResult<()> {
        let refs: Vec<_> = debloated.iter().collect();
        let account = bundle.store.account_sizes(&refs);
        for (rec, deb) in bundle.containers.iter().zip(&debloated) {
            store_image(&mut bundle.store, deb, staging.join(&deb.container_id))?;
            let after = account.per_container[&deb.container_id];
            println!(
                "{}: {} -> {} bytes ({} -> {}, {}% reduction)",
                deb.container_id,
                rec.original_bytes,
                after,
                fmt_mb(rec.original_bytes),
                fmt_mb(after),
                reduction_pct(rec.original_bytes, after)
            );
        }
        if debloated.len() > 1 {
            println!(
                "fleet total: {} bytes ({}) across {} container(s)",
                account.total,
                fmt_mb(account.total),
                debloated.len()
            );
        }
        Ok(())
    })();
    if let Err(e) = result {
        let _ = std::fs::remove_dir_all(&staging);
        return Err(e);
    }
    std::fs::rename(&staging, &output).map_err(Error::Io)?;

    for (rec, deb) in bundle.containers.iter_mut().zip(debloated) {
        rec.fs = deb;
    }
    bundle.save()?;
    println!("debloated bundle(s) written to {}", output.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_analyze(
    images: Vec<PathBuf>,
    trace_paths: Vec<PathBuf>,
    threshold: f64,
    epsilon: u64,
    report_path: Option<PathBuf>,
) -> CliResult<ExitCode> {
    if images.len() != trace_paths.len() {
        return Err(CliError::Usage(format!(
            "{} image(s) but {} trace file(s); pass one --trace per image",
            images.len(),
            trace_paths.len()
        )));
    }
    let mut store = LayerStore::new();
    let records = load_fleet(&mut store, &images)?;
    let containers: Vec<_> = records.iter().map(|r| r.fs.clone()).collect();
    let mut traces = Vec::new();
    for p in &trace_paths {
        traces.push(AccessTrace::load(p)?);
    }

    let report = analyze(&store, &containers, &traces, threshold, epsilon)?;
    for (id, s) in &report.no_sharing_sizes {
        println!(
            "{id}: no-sharing {} ({}), fully-sharing {} ({})",
            s,
            fmt_mb(*s),
            report.fully_sharing_sizes[id],
            fmt_mb(report.fully_sharing_sizes[id])
        );
    }
    println!(
        "totals: no-sharing {} ({}), fully-sharing {} ({})",
        report.no_sharing_total,
        fmt_mb(report.no_sharing_total),
        report.fully_sharing_total,
        fmt_mb(report.fully_sharing_total)
    );
    println!(
        "alpha = {} bytes, beta = {} bytes, theta = {:.6}",
        report.alpha, report.beta, report.theta
    );
    println!("recommendation: {}", report.recommendation);

    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    match report_path {
        Some(path) => std::fs::write(path, json).map_err(Error::Io)?,
        None => println!("{json}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(
    image: PathBuf,
    trace_path: PathBuf,
    report_path: Option<PathBuf>,
) -> CliResult<ExitCode> {
    let mut store = LayerStore::new();
    let (_, fs) = load_image(&mut store, &image)?;
    let trace = AccessTrace::load(&trace_path)?;
    let report = verify(&mut store, &fs, &trace);

    if let Some(path) = &report_path {
        std::fs::write(
            path,
            serde_json::to_string_pretty(&report).expect("report serializes"),
        )
        .map_err(Error::Io)?;
    }
    if report.passed {
        println!("verification passed ({} event(s))", trace.events.len());
        Ok(ExitCode::SUCCESS)
    } else {
        for f in &report.failures {
            let reason = match f.reason {
                shedfs::VerifyReason::NotFound => "not found",
                shedfs::VerifyReason::ContentMismatch => "content mismatch",
            };
            println!("event {}: {} {}", f.event_index, f.path, reason);
        }
        println!(
            "verification FAILED: {} of {} event(s)",
            report.failures.len(),
            trace.events.len()
        );
        Ok(ExitCode::from(1))
    }
}
