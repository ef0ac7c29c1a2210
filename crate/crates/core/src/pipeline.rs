//! Real-time and windowed-batch training of one FFM, with embedding
//! snapshots captured on the checkpoint grid.
//!
//! Snapshots always read the *published* embeddings. In real-time mode the
//! live model is published after every update; in batch mode events are
//! buffered until the window closes, the model is trained on the buffer and
//! only then published, so snapshots inside a window see a stale vector.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ffm::{Active, Feature, FfmModel, Hyperparams};
use crate::types::{
    snapshot_crossings, CheckpointGrid, EmbeddingSnapshot, EventLog, InteractionEvent, ItemId, SignalType,
    SnapshotStore, UserId,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "size", rename_all = "snake_case")]
pub enum BatchWindow {
    SimHours(f64),
    EventCount(u64),
}

impl Default for BatchWindow {
    fn default() -> Self {
        BatchWindow::SimHours(6.0)
    }
}

impl BatchWindow {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BatchWindow::SimHours(h) if h.is_finite() && h > 0.0 => Ok(()),
            BatchWindow::EventCount(n) if n > 0 => Ok(()),
            _ => Err(Error::config("window.size", "must be positive")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeKind {
    Realtime,
    Batch,
}

impl ModeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModeKind::Realtime => "realtime",
            ModeKind::Batch => "batch",
        }
    }
}

impl std::fmt::Display for ModeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UpdateMode {
    Realtime,
    Batch(BatchWindow),
}

impl UpdateMode {
    pub fn kind(&self) -> ModeKind {
        match self {
            UpdateMode::Realtime => ModeKind::Realtime,
            UpdateMode::Batch(_) => ModeKind::Batch,
        }
    }
}

/// Read-only view of the published model: what a serving layer sees.
#[derive(Clone, Copy, Debug)]
pub struct PublishedEmbeddings<'a> {
    model: &'a FfmModel,
    version: u64,
}

impl<'a> PublishedEmbeddings<'a> {
    /// Number of publications so far.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn item_embedding(&self, item: ItemId) -> Vec<f64> {
        self.model.item_embedding(item)
    }

    pub fn user_embedding(&self, user: UserId) -> Vec<f64> {
        self.model.user_embedding(user)
    }

    /// Whether the published model has ever been trained on `user`.
    pub fn knows_user(&self, user: UserId) -> bool {
        self.model.contains(Feature::user(user))
    }

    /// Whether the published model has ever been trained on `item`.
    pub fn knows_item(&self, item: ItemId) -> bool {
        self.model.contains(Feature::item(item))
    }

    pub fn predict(&self, user: UserId, item: ItemId, context: u32) -> f64 {
        self.model.predict(user, item, context)
    }

    pub fn model(&self) -> &'a FfmModel {
        self.model
    }
}

/// Incremental trainer for one signal. Feed events with [`Pipeline::push`],
/// then call [`Pipeline::finish`].
#[derive(Debug)]
pub struct Pipeline {
    mode: UpdateMode,
    signal: SignalType,
    hyper: Hyperparams,
    model: FfmModel,
    /// Serving copy in batch mode; the live model is published in real time.
    serving: Option<FfmModel>,
    version: u64,
    store: SnapshotStore,
    counters: HashMap<ItemId, u64>,
    buffer: Vec<InteractionEvent>,
    dirty: BTreeSet<Feature>,
    window_end: f64,
    last_seq: Option<u64>,
    consumed: u64,
}

/// Everything a finished pipeline produced.
#[derive(Debug)]
pub struct PipelineOutput {
    pub store: SnapshotStore,
    pub model: FfmModel,
    pub publications: u64,
    pub events: u64,
}

impl Pipeline {
    pub fn new(
        mode: UpdateMode,
        signal: SignalType,
        model: FfmModel,
        grid: CheckpointGrid,
        hyper: Hyperparams,
    ) -> Result<Self> {
        hyper.validate()?;
        let (serving, window_end) = match mode {
            UpdateMode::Realtime => (None, f64::INFINITY),
            UpdateMode::Batch(w) => {
                w.validate()?;
                let end = match w {
                    BatchWindow::SimHours(h) => h,
                    BatchWindow::EventCount(_) => f64::INFINITY,
                };
                (Some(model.clone()), end)
            }
        };
        let store = SnapshotStore::new(grid, model.k_dim());
        Ok(Pipeline {
            mode,
            signal,
            hyper,
            model,
            serving,
            version: 0,
            store,
            counters: HashMap::new(),
            buffer: Vec::new(),
            dirty: BTreeSet::new(),
            window_end,
            last_seq: None,
            consumed: 0,
        })
    }

    pub fn mode(&self) -> UpdateMode {
        self.mode
    }

    pub fn signal(&self) -> SignalType {
        self.signal
    }

    pub fn published(&self) -> PublishedEmbeddings<'_> {
        PublishedEmbeddings {
            model: self.serving.as_ref().unwrap_or(&self.model),
            version: self.version,
        }
    }

    /// Impressions of `item` consumed so far.
    pub fn impressions(&self, item: ItemId) -> u64 {
        self.counters.get(&item).copied().unwrap_or(0)
    }

    pub fn push(&mut self, event: &InteractionEvent) -> Result<()> {
        if self.last_seq.is_some_and(|s| event.seq_no <= s) {
            return Err(Error::Stream {
                seq: event.seq_no,
                reason: "seq does not increase".into(),
            });
        }
        let before = self.impressions(event.item_id);
        if event.item_view_count_at_impression != before {
            return Err(Error::Stream {
                seq: event.seq_no,
                reason: format!(
                    "views_at_imp {} but item {} has {} prior impressions",
                    event.item_view_count_at_impression, event.item_id, before
                ),
            });
        }
        self.last_seq = Some(event.seq_no);
        self.consumed += 1;

        if let UpdateMode::Batch(BatchWindow::SimHours(h)) = self.mode {
            if event.sim_time >= self.window_end {
                self.flush()?;
                while self.window_end <= event.sim_time {
                    self.window_end += h;
                }
            }
        }

        if before == 0 {
            self.capture(event.item_id, 0, event.seq_no)?;
        }

        match self.mode {
            UpdateMode::Realtime => {
                self.model.sgd_step(event, self.signal, &self.hyper)?;
                self.version += 1;
            }
            UpdateMode::Batch(window) => {
                self.dirty.extend(Active::of(event).features());
                self.buffer.push(event.clone());
                if let BatchWindow::EventCount(n) = window {
                    if self.buffer.len() as u64 >= n {
                        self.flush()?;
                    }
                }
            }
        }

        let after = before + 1;
        self.counters.insert(event.item_id, after);
        for v in snapshot_crossings(before, after, self.store.grid()) {
            self.capture(event.item_id, v, event.seq_no)?;
        }
        Ok(())
    }

    fn capture(&mut self, item: ItemId, checkpoint: u64, seq: u64) -> Result<()> {
        let vector = self.published().item_embedding(item);
        self.store.push(EmbeddingSnapshot {
            item_id: item,
            checkpoint_view_count: checkpoint,
            vector,
            wall_seq: seq,
        })
    }

    /// Trains on the buffered window and publishes. No-op in real-time mode
    /// or when the buffer is empty.
    fn flush(&mut self) -> Result<()> {
        if self.buffer.is_empty() {
            return Ok(());
        }
        for _ in 0..self.hyper.batch_epochs {
            for e in &self.buffer {
                self.model.sgd_step(e, self.signal, &self.hyper)?;
            }
        }
        if let Some(serving) = self.serving.as_mut() {
            serving.sync_from(&self.model, &self.dirty);
        }
        self.buffer.clear();
        self.dirty.clear();
        self.version += 1;
        Ok(())
    }

    /// Flushes the final partial window and records the converged (final
    /// published) embedding of every item seen.
    pub fn finish(mut self) -> Result<PipelineOutput> {
        self.flush()?;
        let seq = self.last_seq.unwrap_or(0);
        let mut items: Vec<(ItemId, u64)> = self.counters.iter().map(|(k, v)| (*k, *v)).collect();
        items.sort_unstable();
        for (item, count) in items {
            let vector = self.published().item_embedding(item);
            self.store.set_converged(EmbeddingSnapshot {
                item_id: item,
                checkpoint_view_count: count,
                vector,
                wall_seq: seq,
            })?;
        }
        Ok(PipelineOutput {
            store: self.store,
            model: self.model,
            publications: self.version,
            events: self.consumed,
        })
    }
}

fn run(
    stream: impl IntoIterator<Item = InteractionEvent>,
    mode: UpdateMode,
    model: FfmModel,
    grid: &CheckpointGrid,
    hyper: &Hyperparams,
    signal: SignalType,
) -> Result<(SnapshotStore, EventLog)> {
    let mut pipeline = Pipeline::new(mode, signal, model, grid.clone(), hyper.clone())?;
    let mut log = Vec::new();
    for event in stream {
        pipeline.push(&event)?;
        log.push(event);
    }
    let out = pipeline.finish()?;
    Ok((out.store, EventLog::new(log)))
}

/// Updates and publishes after every event.
pub fn run_realtime(
    stream: impl IntoIterator<Item = InteractionEvent>,
    model: FfmModel,
    grid: &CheckpointGrid,
    hyper: &Hyperparams,
    signal: SignalType,
) -> Result<(SnapshotStore, EventLog)> {
    run(stream, UpdateMode::Realtime, model, grid, hyper, signal)
}

/// Buffers events per window, trains `batch_epochs` passes in arrival order
/// when the window closes, then publishes.
pub fn run_batch(
    stream: impl IntoIterator<Item = InteractionEvent>,
    model: FfmModel,
    window: BatchWindow,
    grid: &CheckpointGrid,
    hyper: &Hyperparams,
    signal: SignalType,
) -> Result<(SnapshotStore, EventLog)> {
    run(stream, UpdateMode::Batch(window), model, grid, hyper, signal)
}
