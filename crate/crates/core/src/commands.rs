//! The four CLI commands, usable as library calls.
//!
//! Layout of a run directory:
//!
//! ```text
//! manifest.json            index of the files below plus the config echo
//! world.json               ground truth
//! schedule.jsonl           open loop only
//! events.jsonl             event log (open loop: shared by both modes)
//! snapshots.jsonl          grid snapshots of the first signal
//! converged.jsonl          converged embeddings of the first signal
//! snapshots.<signal>.jsonl / converged.<signal>.jsonl   further signals
//! report.json + *.csv      metric report
//! ```
//!
//! `compare` writes each mode's event log and stores under `realtime/` and
//! `batch/`; an open-loop compare keeps a single top-level `events.jsonl`.

use std::path::{Path, PathBuf};

use log::{info, warn};

use crate::config::{RunConfig, StreamRegime};
use crate::error::Result;
use crate::io::{
    converged_to_jsonl, events_to_jsonl, load_runs, read_text, schedule_to_jsonl, snapshots_to_jsonl, world_to_json,
    write_atomic, Manifest, RunFiles, RunKind, SignalFiles, MANIFEST_FILE, MANIFEST_SCHEMA_VERSION,
};
use crate::report::{build_report, write_report, MetricReport, RunView};
use crate::runner::{build_world, run_mode, run_pair, ModeRun, World};
use crate::svg::write_plots;
use crate::types::SignalType;

fn store_names(signal: SignalType, first: bool) -> (String, String) {
    if first {
        ("snapshots.jsonl".into(), "converged.jsonl".into())
    } else {
        (format!("snapshots.{signal}.jsonl"), format!("converged.{signal}.jsonl"))
    }
}

/// Writes one run's stores (and its event log unless `events` already
/// exists) under `out/sub`, returning the manifest entry.
fn write_run(out: &Path, sub: &Path, run: &ModeRun, events: Option<PathBuf>) -> Result<RunFiles> {
    let events = match events {
        Some(p) => p,
        None => {
            let rel = sub.join("events.jsonl");
            write_atomic(&out.join(&rel), events_to_jsonl(&run.log).as_bytes())?;
            rel
        }
    };
    let mut stores = Vec::new();
    for (i, (signal, store)) in run.stores.iter().enumerate() {
        let (snap, conv) = store_names(*signal, i == 0);
        let (snap, conv) = (sub.join(snap), sub.join(conv));
        write_atomic(&out.join(&snap), snapshots_to_jsonl(store).as_bytes())?;
        write_atomic(&out.join(&conv), converged_to_jsonl(store).as_bytes())?;
        stores.push(SignalFiles {
            signal: *signal,
            snapshots: snap,
            converged: conv,
        });
    }
    Ok(RunFiles {
        mode: run.mode,
        events,
        impressions: run.log.len() as u64,
        stores,
    })
}

/// Writes the world (and open-loop schedule); returns their manifest paths.
fn write_world(out: &Path, world: &World) -> Result<(PathBuf, Option<PathBuf>)> {
    let world_path = PathBuf::from("world.json");
    write_atomic(&out.join(&world_path), world_to_json(&world.truth).as_bytes())?;
    let schedule = match &world.schedule {
        Some(s) => {
            let p = PathBuf::from("schedule.jsonl");
            write_atomic(&out.join(&p), schedule_to_jsonl(s).as_bytes())?;
            Some(p)
        }
        None => None,
    };
    Ok((world_path, schedule))
}

fn finish(out: &Path, manifest: &Manifest, runs: &[&ModeRun]) -> Result<MetricReport> {
    let views: Vec<RunView<'_>> = runs
        .iter()
        .map(|r| RunView {
            mode: r.mode,
            log: &r.log,
            stores: &r.stores,
        })
        .collect();
    let report = build_report(manifest.kind, &manifest.config, &views)?;
    for w in &report.warnings {
        warn!("{w}");
    }
    write_report(&report, out)?;
    // The manifest goes last: its presence marks a complete run directory.
    write_atomic(&out.join(MANIFEST_FILE), manifest.to_json().as_bytes())?;
    Ok(report)
}

/// Runs the configured mode end to end and writes logs, stores, the
/// manifest and the metric report to `cfg.output_dir`.
pub fn simulate(cfg: &RunConfig) -> Result<MetricReport> {
    cfg.validate()?;
    let out = cfg.output_dir.as_path();
    info!("simulate: {} mode, {:?} loop, seed {}", cfg.mode, cfg.stream, cfg.seed);
    let world = build_world(cfg)?;
    let run = run_mode(cfg, &world, cfg.mode)?;
    let (world_path, schedule) = write_world(out, &world)?;
    let files = write_run(out, Path::new(""), &run, None)?;
    let manifest = Manifest {
        schema: MANIFEST_SCHEMA_VERSION.to_string(),
        kind: RunKind::Simulate,
        config: cfg.clone(),
        world: world_path,
        schedule,
        runs: vec![files],
    };
    finish(out, &manifest, &[&run])
}

/// Trains both modes on one world and writes a joint report.
pub fn compare(cfg: &RunConfig) -> Result<MetricReport> {
    cfg.validate()?;
    let out = cfg.output_dir.as_path();
    info!("compare: {:?} loop, seed {}", cfg.stream, cfg.seed);
    let world = build_world(cfg)?;
    let (rt, batch) = run_pair(cfg, &world)?;
    let (world_path, schedule) = write_world(out, &world)?;
    let shared = match cfg.stream {
        StreamRegime::Open => {
            let p = PathBuf::from("events.jsonl");
            write_atomic(&out.join(&p), events_to_jsonl(&rt.log).as_bytes())?;
            Some(p)
        }
        StreamRegime::Closed => None,
    };
    let runs = [&rt, &batch]
        .into_iter()
        .map(|r| write_run(out, Path::new(r.mode.as_str()), r, shared.clone()))
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        schema: MANIFEST_SCHEMA_VERSION.to_string(),
        kind: RunKind::Compare,
        config: cfg.clone(),
        world: world_path,
        schedule,
        runs,
    };
    finish(out, &manifest, &[&rt, &batch])
}

/// Recomputes the report of the run directory `logs` from its archived
/// logs and writes it (with CSVs) to `out`.
pub fn metrics(logs: &Path, out: &Path) -> Result<MetricReport> {
    let manifest = Manifest::load(logs)?;
    let loaded = load_runs(logs, &manifest)?;
    let views: Vec<RunView<'_>> = loaded
        .iter()
        .map(|r| RunView {
            mode: r.mode,
            log: &r.log,
            stores: &r.stores,
        })
        .collect();
    let report = build_report(manifest.kind, &manifest.config, &views)?;
    for w in &report.warnings {
        warn!("{w}");
    }
    write_report(&report, out)?;
    Ok(report)
}

/// Renders the figures of a report file into `out`. Returns skip notices.
pub fn plot(report_path: &Path, out: &Path) -> Result<Vec<String>> {
    let report = MetricReport::parse(&read_text(report_path)?, &report_path.display().to_string())?;
    let notices = write_plots(&report, out)?;
    for n in &notices {
        warn!("{n}");
    }
    Ok(notices)
}
