//! Shared vocabulary: signals, interaction events, the checkpoint grid and
//! the per-item snapshot store.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type UserId = u32;
pub type ItemId = u32;

/// Version tag written into every run manifest. Bumped on any change to the
/// event, snapshot, schedule or manifest layouts.
pub const LOG_SCHEMA_VERSION: &str = "embcycle-log-v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalType {
    View,
    Skip,
    Click,
    Like,
    Share,
}

impl SignalType {
    pub const ALL: [SignalType; 5] = [
        SignalType::View,
        SignalType::Skip,
        SignalType::Click,
        SignalType::Like,
        SignalType::Share,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SignalType::View => "view",
            SignalType::Skip => "skip",
            SignalType::Click => "click",
            SignalType::Like => "like",
            SignalType::Share => "share",
        }
    }
}

impl fmt::Display for SignalType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SignalType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SignalType::ALL
            .into_iter()
            .find(|sig| sig.as_str() == s)
            .ok_or_else(|| Error::config("signals", format!("unknown signal {s:?}")))
    }
}

/// Binary outcome of every signal for one impression.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outcomes {
    pub view: u8,
    pub skip: u8,
    pub click: u8,
    pub like: u8,
    pub share: u8,
}

impl Outcomes {
    pub fn get(&self, signal: SignalType) -> u8 {
        match signal {
            SignalType::View => self.view,
            SignalType::Skip => self.skip,
            SignalType::Click => self.click,
            SignalType::Like => self.like,
            SignalType::Share => self.share,
        }
    }

    pub fn set(&mut self, signal: SignalType, value: u8) {
        let slot = match signal {
            SignalType::View => &mut self.view,
            SignalType::Skip => &mut self.skip,
            SignalType::Click => &mut self.click,
            SignalType::Like => &mut self.like,
            SignalType::Share => &mut self.share,
        };
        *slot = value;
    }

    pub fn all(value: u8) -> Self {
        Outcomes {
            view: value,
            skip: value,
            click: value,
            like: value,
            share: value,
        }
    }

    fn check(&self) -> std::result::Result<(), String> {
        for sig in SignalType::ALL {
            if self.get(sig) > 1 {
                return Err(format!("outcome {sig} must be 0 or 1"));
            }
        }
        if self.skip + self.view != 1 {
            return Err("skip must be the complement of view".into());
        }
        Ok(())
    }
}

/// One user-item impression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionEvent {
    #[serde(rename = "seq")]
    pub seq_no: u64,
    #[serde(rename = "user")]
    pub user_id: UserId,
    #[serde(rename = "item")]
    pub item_id: ItemId,
    /// Impressions of `item_id` earlier in the same run.
    #[serde(rename = "views_at_imp")]
    pub item_view_count_at_impression: u64,
    pub outcomes: Outcomes,
    /// Simulated hours since the start of the run.
    #[serde(rename = "t")]
    pub sim_time: f64,
}

impl InteractionEvent {
    /// Hour-of-day context feature.
    pub fn context_id(&self) -> u32 {
        (self.sim_time.max(0.0).floor() as u64 % 24) as u32
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventLog {
    pub events: Vec<InteractionEvent>,
}

impl EventLog {
    pub fn new(events: Vec<InteractionEvent>) -> Self {
        EventLog { events }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, InteractionEvent> {
        self.events.iter()
    }

    /// Checks seq ordering, outcome coherence and that every
    /// `views_at_imp` equals the number of earlier impressions of the item.
    pub fn validate(&self) -> Result<()> {
        let mut counts: BTreeMap<ItemId, u64> = BTreeMap::new();
        let mut prev: Option<u64> = None;
        for e in &self.events {
            if prev.is_some_and(|p| e.seq_no <= p) {
                return Err(Error::Stream {
                    seq: e.seq_no,
                    reason: "seq does not increase".into(),
                });
            }
            prev = Some(e.seq_no);
            if !(e.sim_time.is_finite() && e.sim_time >= 0.0) {
                return Err(Error::Stream {
                    seq: e.seq_no,
                    reason: "sim time must be finite and non-negative".into(),
                });
            }
            e.outcomes
                .check()
                .map_err(|reason| Error::Stream { seq: e.seq_no, reason })?;
            let c = counts.entry(e.item_id).or_default();
            if *c != e.item_view_count_at_impression {
                return Err(Error::Stream {
                    seq: e.seq_no,
                    reason: format!(
                        "views_at_imp {} but item {} has {} prior impressions",
                        e.item_view_count_at_impression, e.item_id, c
                    ),
                });
            }
            *c += 1;
        }
        Ok(())
    }

    /// Total impressions per item.
    pub fn impressions_per_item(&self) -> BTreeMap<ItemId, u64> {
        let mut counts = BTreeMap::new();
        for e in &self.events {
            *counts.entry(e.item_id).or_default() += 1;
        }
        counts
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    Linear,
    Geometric,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub kind: GridKind,
    pub start: u64,
    pub stop: u64,
    pub points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            kind: GridKind::Linear,
            start: 250,
            stop: 10_000,
            points: 40,
        }
    }
}

/// View-count checkpoints `0 = V_0 < V_1 < ... < V_k`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u64>", into = "Vec<u64>")]
pub struct CheckpointGrid {
    views: Vec<u64>,
}

impl CheckpointGrid {
    pub fn new(views: Vec<u64>) -> Result<Self> {
        if views.first() != Some(&0) {
            return Err(Error::config("grid", "first checkpoint must be 0"));
        }
        if views.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("grid", "checkpoints must strictly increase"));
        }
        Ok(CheckpointGrid { views })
    }

    pub fn views(&self) -> &[u64] {
        &self.views
    }

    pub fn last(&self) -> u64 {
        *self.views.last().expect("grid holds V_0")
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn position(&self, views: u64) -> Option<usize> {
        self.views.binary_search(&views).ok()
    }
}

impl TryFrom<Vec<u64>> for CheckpointGrid {
    type Error = Error;

    fn try_from(views: Vec<u64>) -> Result<Self> {
        CheckpointGrid::new(views)
    }
}

impl From<CheckpointGrid> for Vec<u64> {
    fn from(g: CheckpointGrid) -> Self {
        g.views
    }
}

/// Builds a checkpoint grid: `V_0 = 0` followed by `points` values spaced
/// linearly or geometrically between `start` and `stop`, rounded to the
/// nearest integer and deduplicated.
pub fn make_grid(spec: &GridSpec) -> Result<CheckpointGrid> {
    if spec.start < 1 {
        return Err(Error::config("grid.start", "must be at least 1"));
    }
    if spec.stop <= spec.start {
        return Err(Error::config("grid.stop", "must exceed grid.start"));
    }
    if spec.points < 2 {
        return Err(Error::config("grid.points", "must be at least 2"));
    }
    let (a, b) = (spec.start as f64, spec.stop as f64);
    let last = (spec.points - 1) as f64;
    let mut views = vec![0u64];
    for j in 0..spec.points {
        let v = if j == 0 {
            spec.start
        } else if j == spec.points - 1 {
            spec.stop
        } else {
            let frac = j as f64 / last;
            let x = match spec.kind {
                GridKind::Linear => a + (b - a) * frac,
                GridKind::Geometric => a * (b / a).powf(frac),
            };
            x.round() as u64
        };
        if *views.last().unwrap() < v {
            views.push(v);
        }
    }
    CheckpointGrid::new(views)
}

/// Checkpoints `V` with `before < V <= after`.
pub fn snapshot_crossings(counter_before: u64, counter_after: u64, grid: &CheckpointGrid) -> Vec<u64> {
    let lo = grid.views.partition_point(|&v| v <= counter_before);
    let hi = grid.views.partition_point(|&v| v <= counter_after);
    grid.views[lo..hi].to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSnapshot {
    #[serde(rename = "item")]
    pub item_id: ItemId,
    #[serde(rename = "checkpoint")]
    pub checkpoint_view_count: u64,
    #[serde(rename = "vec")]
    pub vector: Vec<f64>,
    #[serde(rename = "seq")]
    pub wall_seq: u64,
}

/// Per-item embedding time series on a shared checkpoint grid, plus the
/// converged (final published) embedding of every item seen in the run.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotStore {
    grid: CheckpointGrid,
    k_dim: usize,
    per_item: BTreeMap<ItemId, Vec<EmbeddingSnapshot>>,
    converged: BTreeMap<ItemId, EmbeddingSnapshot>,
}

impl SnapshotStore {
    pub fn new(grid: CheckpointGrid, k_dim: usize) -> Self {
        SnapshotStore {
            grid,
            k_dim,
            per_item: BTreeMap::new(),
            converged: BTreeMap::new(),
        }
    }

    pub fn grid(&self) -> &CheckpointGrid {
        &self.grid
    }

    pub fn k_dim(&self) -> usize {
        self.k_dim
    }

    fn check_vector(&self, snap: &EmbeddingSnapshot) -> Result<()> {
        if snap.vector.len() != self.k_dim {
            return Err(Error::Stream {
                seq: snap.wall_seq,
                reason: format!(
                    "snapshot of item {} has dimension {}, expected {}",
                    snap.item_id,
                    snap.vector.len(),
                    self.k_dim
                ),
            });
        }
        if snap.vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence {
                seq: snap.wall_seq,
                detail: format!("non-finite embedding for item {}", snap.item_id),
            });
        }
        Ok(())
    }

    /// Appends a grid snapshot. Snapshots of an item must fill the grid in
    /// order, starting at `V_0`.
    pub fn push(&mut self, snap: EmbeddingSnapshot) -> Result<()> {
        self.check_vector(&snap)?;
        let series = self.per_item.entry(snap.item_id).or_default();
        let expected = self.grid.views.get(series.len()).copied();
        if expected != Some(snap.checkpoint_view_count) {
            return Err(Error::Stream {
                seq: snap.wall_seq,
                reason: format!(
                    "snapshot of item {} at {} views breaks the grid prefix (expected {:?})",
                    snap.item_id, snap.checkpoint_view_count, expected
                ),
            });
        }
        series.push(snap);
        Ok(())
    }

    pub fn set_converged(&mut self, snap: EmbeddingSnapshot) -> Result<()> {
        self.check_vector(&snap)?;
        self.converged.insert(snap.item_id, snap);
        Ok(())
    }

    pub fn series(&self, item: ItemId) -> Option<&[EmbeddingSnapshot]> {
        self.per_item.get(&item).map(Vec::as_slice)
    }

    pub fn converged(&self, item: ItemId) -> Option<&EmbeddingSnapshot> {
        self.converged.get(&item)
    }

    pub fn items(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.per_item.keys().copied()
    }

    pub fn item_count(&self) -> usize {
        self.per_item.len()
    }

    pub fn iter_series(&self) -> impl Iterator<Item = (ItemId, &[EmbeddingSnapshot])> {
        self.per_item.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn iter_converged(&self) -> impl Iterator<Item = &EmbeddingSnapshot> {
        self.converged.values()
    }

    /// All grid snapshots in (item, checkpoint) order.
    pub fn snapshots(&self) -> impl Iterator<Item = &EmbeddingSnapshot> {
        self.per_item.values().flatten()
    }

    /// Grid snapshots followed by the converged snapshot: the series a
    /// maturity curve is measured on.
    pub fn maturity_series(&self, item: ItemId) -> Option<Vec<&EmbeddingSnapshot>> {
        let series = self.per_item.get(&item)?;
        let last = self.converged.get(&item)?;
        Some(series.iter().chain(std::iter::once(last)).collect())
    }

    /// Keeps only items for which `keep` holds.
    pub fn retain(&mut self, mut keep: impl FnMut(ItemId) -> bool) {
        self.per_item.retain(|k, _| keep(*k));
        self.converged.retain(|k, _| keep(*k));
    }
}
