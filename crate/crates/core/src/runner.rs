//! End-to-end runs driven by a [`RunConfig`].

use std::sync::Arc;

use crate::config::{RunConfig, StreamRegime};
use crate::error::Result;
use crate::ffm::{init_model, FfmModel};
use crate::pipeline::{ModeKind, Pipeline};
use crate::seed::RunSeed;
use crate::sim::{closed_loop_run, init_world, open_loop_schedule, replay_open_loop, GroundTruth, ScheduleEntry};
use crate::types::{EventLog, SignalType, SnapshotStore};

/// Output of one training mode.
#[derive(Debug)]
pub struct ModeRun {
    pub mode: ModeKind,
    pub log: Arc<EventLog>,
    /// One store per trained signal, in config order.
    pub stores: Vec<(SignalType, SnapshotStore)>,
}

/// Inputs shared by both modes of a run.
#[derive(Debug)]
pub struct World {
    pub truth: GroundTruth,
    /// Present for open-loop runs.
    pub schedule: Option<Vec<ScheduleEntry>>,
    pub log: Option<Arc<EventLog>>,
}

fn seed(cfg: &RunConfig) -> RunSeed {
    RunSeed(cfg.seed)
}

/// Fresh model. Every signal and both modes start from identical parameters.
pub fn initial_model(cfg: &RunConfig) -> Result<FfmModel> {
    init_model(cfg.k_dim, &cfg.hyper, seed(cfg).derive("model"))
}

/// Ground truth plus, for open-loop runs, the shared schedule and log.
pub fn build_world(cfg: &RunConfig) -> Result<World> {
    cfg.validate()?;
    let truth = init_world(&cfg.loop_cfg, &cfg.truth, seed(cfg).derive("world"))?;
    match cfg.stream {
        StreamRegime::Closed => Ok(World {
            truth,
            schedule: None,
            log: None,
        }),
        StreamRegime::Open => {
            let schedule = open_loop_schedule(&cfg.loop_cfg, &truth, seed(cfg).derive("schedule"))?;
            let log = replay_open_loop(&schedule, &truth, &cfg.loop_cfg, seed(cfg).derive("outcomes"))?;
            Ok(World {
                truth,
                schedule: Some(schedule),
                log: Some(Arc::new(log)),
            })
        }
    }
}

/// Trains every configured signal on a fixed log.
pub fn train_on_log(cfg: &RunConfig, mode: ModeKind, log: Arc<EventLog>) -> Result<ModeRun> {
    let grid = cfg.checkpoint_grid()?;
    let mut stores = Vec::with_capacity(cfg.signals.len());
    for &signal in &cfg.signals {
        let mut p = Pipeline::new(
            cfg.update_mode(mode),
            signal,
            initial_model(cfg)?,
            grid.clone(),
            cfg.hyper.clone(),
        )?;
        for e in log.iter() {
            p.push(e)?;
        }
        stores.push((signal, p.finish()?.store));
    }
    Ok(ModeRun { mode, log, stores })
}

/// Runs `mode` in the configured stream regime.
pub fn run_mode(cfg: &RunConfig, world: &World, mode: ModeKind) -> Result<ModeRun> {
    match &world.log {
        Some(log) => train_on_log(cfg, mode, Arc::clone(log)),
        None => {
            let grid = cfg.checkpoint_grid()?;
            let ranking = initial_model(cfg)?;
            let out = closed_loop_run(
                &cfg.loop_cfg,
                &world.truth,
                cfg.update_mode(mode),
                ranking,
                &grid,
                &cfg.hyper,
                &cfg.signals,
                cfg.metrics.buckets.edges(),
                seed(cfg).derive("closed-loop"),
            )?;
            let stores = cfg
                .signals
                .iter()
                .copied()
                .zip(out.outputs.into_iter().map(|o| o.store))
                .collect();
            Ok(ModeRun {
                mode,
                log: Arc::new(out.log),
                stores,
            })
        }
    }
}

/// Realtime and batch runs on the same world, executed concurrently.
pub fn run_pair(cfg: &RunConfig, world: &World) -> Result<(ModeRun, ModeRun)> {
    let (rt, batch) = std::thread::scope(|s| {
        let rt = s.spawn(|| run_mode(cfg, world, ModeKind::Realtime));
        let batch = s.spawn(|| run_mode(cfg, world, ModeKind::Batch));
        (
            rt.join().expect("realtime worker panicked"),
            batch.join().expect("batch worker panicked"),
        )
    });
    Ok((rt?, batch?))
}
