//! Synthetic interaction streams.
//!
//! Two regimes:
//! - open loop: a model-independent schedule of `(user, item)` impressions,
//!   replayed with sampled outcomes so both training modes see the same data;
//! - closed loop: the model being trained ranks candidates through its
//!   published embeddings, so exposure depends on the update mode.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ffm::{sigmoid, FfmModel, Hyperparams};
use crate::pipeline::{Pipeline, PipelineOutput, UpdateMode};
use crate::seed::RunSeed;
use crate::types::{CheckpointGrid, EventLog, InteractionEvent, ItemId, Outcomes, SignalType, UserId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruthConfig {
    pub d_true: usize,
    /// Standard deviation of every user/item affinity component.
    pub vec_scale: f64,
    pub item_bias_scale: f64,
    /// New items per simulated hour.
    pub arrival_rate: f64,
    pub signal_offsets: BTreeMap<SignalType, f64>,
}

impl Default for TruthConfig {
    fn default() -> Self {
        TruthConfig {
            d_true: 8,
            vec_scale: 0.6,
            item_bias_scale: 0.5,
            arrival_rate: 1.0,
            signal_offsets: BTreeMap::from([
                (SignalType::View, 0.0),
                (SignalType::Skip, 0.0),
                (SignalType::Click, -2.0),
                (SignalType::Like, -3.0),
                (SignalType::Share, -4.0),
            ]),
        }
    }
}

impl TruthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_true < 1 {
            return Err(Error::config("truth.d_true", "must be at least 1"));
        }
        if !(self.vec_scale.is_finite() && self.vec_scale >= 0.0) {
            return Err(Error::config("truth.vec_scale", "must be finite and non-negative"));
        }
        if !(self.item_bias_scale.is_finite() && self.item_bias_scale >= 0.0) {
            return Err(Error::config(
                "truth.item_bias_scale",
                "must be finite and non-negative",
            ));
        }
        if !(self.arrival_rate.is_finite() && self.arrival_rate >= 0.0) {
            return Err(Error::config("truth.arrival_rate", "must be finite and non-negative"));
        }
        if self.signal_offsets.values().any(|v| !v.is_finite()) {
            return Err(Error::config("truth.offset", "offsets must be finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    pub n_users: u32,
    pub n_items_initial: u32,
    pub slate_size: u32,
    pub explore_epsilon: f64,
    pub impressions_per_hour: f64,
    pub total_impressions: u64,
    pub candidate_pool: u32,
    /// Open loop only: an item stops receiving impressions once it has this
    /// many. Zero disables the cap.
    pub item_view_cap: u64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            n_users: 2_000,
            n_items_initial: 40,
            slate_size: 1,
            explore_epsilon: 0.1,
            impressions_per_hour: 10_000.0,
            total_impressions: 1_500_000,
            candidate_pool: 50,
            item_view_cap: 10_000,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users < 1 {
            return Err(Error::config("loop.n_users", "must be positive"));
        }
        if self.n_items_initial < 1 {
            return Err(Error::config("loop.n_items_initial", "must be positive"));
        }
        if self.slate_size < 1 {
            return Err(Error::config("loop.slate_size", "must be positive"));
        }
        if self.candidate_pool < self.slate_size {
            return Err(Error::config("loop.candidate_pool", "must be at least loop.slate_size"));
        }
        if !(0.0..=1.0).contains(&self.explore_epsilon) {
            return Err(Error::config("loop.explore_epsilon", "must lie in [0, 1]"));
        }
        if !(self.impressions_per_hour.is_finite() && self.impressions_per_hour > 0.0) {
            return Err(Error::config("loop.impressions_per_hour", "must be positive"));
        }
        Ok(())
    }

    /// Simulated hours covered by `total_impressions`.
    pub fn horizon_hours(&self) -> f64 {
        self.total_impressions as f64 / self.impressions_per_hour
    }
}

/// Hidden affinities that generate feedback.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    pub d_true: usize,
    pub user_vecs: Vec<Vec<f64>>,
    pub item_vecs: Vec<Vec<f64>>,
    pub item_bias: Vec<f64>,
    /// Arrival hour of each item, non-decreasing in item id.
    pub item_arrival: Vec<f64>,
    pub signal_offsets: BTreeMap<SignalType, f64>,
    pub arrival_rate: f64,
}

/// Draws users, items and a Poisson arrival schedule covering the loop
/// horizon. Items `0..n_items_initial` are live at hour 0.
pub fn init_world(cfg: &LoopConfig, truth_cfg: &TruthConfig, seed: RunSeed) -> Result<GroundTruth> {
    cfg.validate()?;
    truth_cfg.validate()?;
    let mut rng = seed.rng("world");
    let normal = Normal::new(0.0, truth_cfg.vec_scale).map_err(|e| Error::config("truth.vec_scale", e.to_string()))?;
    let bias = Normal::new(0.0, truth_cfg.item_bias_scale)
        .map_err(|e| Error::config("truth.item_bias_scale", e.to_string()))?;
    let d = truth_cfg.d_true;
    let draw = |rng: &mut ChaCha8Rng| (0..d).map(|_| normal.sample(rng)).collect::<Vec<f64>>();

    let user_vecs = (0..cfg.n_users).map(|_| draw(&mut rng)).collect();

    let mut item_arrival = vec![0.0; cfg.n_items_initial as usize];
    if truth_cfg.arrival_rate > 0.0 {
        let exp = Exp::new(truth_cfg.arrival_rate).map_err(|e| Error::config("truth.arrival_rate", e.to_string()))?;
        let mut arrivals = seed.rng("arrivals");
        let horizon = cfg.horizon_hours();
        let mut t = exp.sample(&mut arrivals);
        while t < horizon {
            item_arrival.push(t);
            t += exp.sample(&mut arrivals);
        }
    }
    let item_vecs = item_arrival.iter().map(|_| draw(&mut rng)).collect();
    let item_bias = item_arrival.iter().map(|_| bias.sample(&mut rng)).collect();

    let mut signal_offsets = truth_cfg.signal_offsets.clone();
    for s in SignalType::ALL {
        signal_offsets.entry(s).or_insert(0.0);
    }
    Ok(GroundTruth {
        d_true: d,
        user_vecs,
        item_vecs,
        item_bias,
        item_arrival,
        signal_offsets,
        arrival_rate: truth_cfg.arrival_rate,
    })
}

impl GroundTruth {
    pub fn n_users(&self) -> u32 {
        self.user_vecs.len() as u32
    }

    pub fn n_items(&self) -> u32 {
        self.item_vecs.len() as u32
    }

    /// Items that have arrived by hour `t`.
    pub fn live_items(&self, t: f64) -> u32 {
        self.item_arrival.partition_point(|&a| a <= t) as u32
    }

    fn check_ids(&self, user: UserId, item: ItemId) -> Result<()> {
        if user >= self.n_users() {
            return Err(Error::UnknownId { kind: "user", id: user });
        }
        if item >= self.n_items() {
            return Err(Error::UnknownId { kind: "item", id: item });
        }
        Ok(())
    }

    pub fn affinity(&self, user: UserId, item: ItemId) -> f64 {
        let (u, i) = (&self.user_vecs[user as usize], &self.item_vecs[item as usize]);
        u.iter().zip(i).map(|(a, b)| a * b).sum()
    }

    /// Probability of a positive outcome. Skip is the complement of view.
    pub fn feedback_probability(&self, user: UserId, item: ItemId, signal: SignalType) -> Result<f64> {
        self.check_ids(user, item)?;
        let base = self.affinity(user, item) + self.item_bias[item as usize];
        let offset = |s| self.signal_offsets.get(&s).copied().unwrap_or(0.0);
        Ok(match signal {
            SignalType::Skip => 1.0 - sigmoid(base + offset(SignalType::View)),
            s => sigmoid(base + offset(s)),
        })
    }

    /// Samples outcomes for one impression: view, click, like and share are
    /// independent Bernoulli draws and skip is `1 - view`.
    pub fn sample_outcomes(&self, user: UserId, item: ItemId, rng: &mut impl Rng) -> Result<Outcomes> {
        let mut out = Outcomes::default();
        for s in [SignalType::View, SignalType::Click, SignalType::Like, SignalType::Share] {
            let p = self.feedback_probability(user, item, s)?;
            out.set(s, u8::from(rng.gen::<f64>() < p));
        }
        out.skip = 1 - out.view;
        Ok(out)
    }
}

/// A single Bernoulli draw for `signal`.
pub fn sample_feedback(
    truth: &GroundTruth,
    user: UserId,
    item: ItemId,
    signal: SignalType,
    rng: &mut impl Rng,
) -> Result<u8> {
    let p = truth.feedback_probability(user, item, signal)?;
    Ok(u8::from(rng.gen::<f64>() < p))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub seq: u64,
    pub user: UserId,
    pub item: ItemId,
}

fn slot_time(seq: u64, cfg: &LoopConfig) -> f64 {
    seq as f64 / cfg.impressions_per_hour
}

/// Model-independent exposure schedule. Each impression slot goes to a
/// uniformly drawn user and a uniformly drawn live item below the view cap.
/// Slots with no eligible item are skipped, so `seq` may have gaps.
pub fn open_loop_schedule(cfg: &LoopConfig, truth: &GroundTruth, seed: RunSeed) -> Result<Vec<ScheduleEntry>> {
    cfg.validate()?;
    let mut rng = seed.rng("schedule");
    let cap = if cfg.item_view_cap == 0 {
        u64::MAX
    } else {
        cfg.item_view_cap
    };
    let mut counts = vec![0u64; truth.n_items() as usize];
    // Arrived items still under the cap, kept in arrival order.
    let mut eligible: Vec<ItemId> = Vec::new();
    let mut arrived = 0u32;
    let mut out = Vec::with_capacity(cfg.total_impressions as usize);
    let mut slot = 0u64;
    while (out.len() as u64) < cfg.total_impressions {
        let t = slot_time(slot, cfg);
        let live = truth.live_items(t);
        while arrived < live {
            eligible.push(arrived);
            arrived += 1;
        }
        if eligible.is_empty() {
            if arrived >= truth.n_items() {
                break;
            }
            let next = truth.item_arrival[arrived as usize];
            slot = ((next * cfg.impressions_per_hour).ceil() as u64).max(slot + 1);
            continue;
        }
        let user = rng.gen_range(0..truth.n_users());
        let pos = rng.gen_range(0..eligible.len());
        let item = eligible[pos];
        counts[item as usize] += 1;
        if counts[item as usize] >= cap {
            eligible.remove(pos);
        }
        out.push(ScheduleEntry { seq: slot, user, item });
        slot += 1;
    }
    Ok(out)
}

/// Fills a schedule with outcomes sampled from `truth`.
pub fn replay_open_loop(
    schedule: &[ScheduleEntry],
    truth: &GroundTruth,
    cfg: &LoopConfig,
    seed: RunSeed,
) -> Result<EventLog> {
    let mut rng = seed.rng("open-loop-outcomes");
    let mut counts: BTreeMap<ItemId, u64> = BTreeMap::new();
    let mut events = Vec::with_capacity(schedule.len());
    for s in schedule {
        let outcomes = truth.sample_outcomes(s.user, s.item, &mut rng)?;
        let c = counts.entry(s.item).or_default();
        events.push(InteractionEvent {
            seq_no: s.seq,
            user_id: s.user,
            item_id: s.item,
            item_view_count_at_impression: *c,
            outcomes,
            sim_time: slot_time(s.seq, cfg),
        });
        *c += 1;
    }
    let log = EventLog::new(events);
    log.validate()?;
    Ok(log)
}

/// Impressions per view bucket, by the item's view count at impression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketTally {
    pub edges: Vec<u64>,
    pub counts: Vec<u64>,
}

impl BucketTally {
    pub fn new(edges: &[u64]) -> Self {
        BucketTally {
            edges: edges.to_vec(),
            counts: vec![0; edges.len()],
        }
    }

    pub fn record(&mut self, views_at_impression: u64) {
        let b = self
            .edges
            .partition_point(|&e| e <= views_at_impression)
            .saturating_sub(1);
        self.counts[b] += 1;
    }
}

/// Result of a closed-loop run: the shared log plus one pipeline output per
/// trained signal (the first signal's model does the ranking).
#[derive(Debug)]
pub struct ClosedLoopOutput {
    pub log: EventLog,
    pub outputs: Vec<PipelineOutput>,
    pub tally: BucketTally,
    /// Impressions chosen by exploration (including cold-user fallbacks).
    pub explored: u64,
}

#[allow(clippy::too_many_arguments)]
pub fn closed_loop_run(
    cfg: &LoopConfig,
    truth: &GroundTruth,
    mode: UpdateMode,
    model: FfmModel,
    grid: &CheckpointGrid,
    hyper: &Hyperparams,
    signals: &[SignalType],
    bucket_edges: &[u64],
    seed: RunSeed,
) -> Result<ClosedLoopOutput> {
    cfg.validate()?;
    if signals.is_empty() {
        return Err(Error::config("signals", "at least one signal is required"));
    }
    let mut pipelines = signals
        .iter()
        .map(|&s| Pipeline::new(mode, s, model.clone(), grid.clone(), hyper.clone()))
        .collect::<Result<Vec<_>>>()?;
    let mut pick_rng = seed.rng("closed-loop-pick");
    let mut outcome_rng = seed.rng("closed-loop-outcomes");
    let mut counts = vec![0u64; truth.n_items() as usize];
    let mut tally = BucketTally::new(bucket_edges);
    let mut events = Vec::with_capacity(cfg.total_impressions as usize);
    let mut explored = 0u64;
    let slate = cfg.slate_size as usize;
    let mut scored: Vec<(f64, ItemId)> = Vec::with_capacity(cfg.candidate_pool as usize);
    let mut logits: Vec<f64> = Vec::with_capacity(cfg.candidate_pool as usize);
    let mut known: Vec<ItemId> = Vec::with_capacity(cfg.candidate_pool as usize);

    while (events.len() as u64) < cfg.total_impressions {
        let seq = events.len() as u64;
        let t = slot_time(seq, cfg);
        let live = truth.live_items(t) as usize;
        let user = pick_rng.gen_range(0..truth.n_users());
        let pool = (cfg.candidate_pool as usize).min(live);
        let candidates: Vec<ItemId> = index::sample(&mut pick_rng, live, pool)
            .into_iter()
            .map(|i| i as ItemId)
            .collect();
        let explore_draw = pick_rng.gen::<f64>();
        let shuffle_seed: u64 = pick_rng.gen();

        let published = pipelines[0].published();
        // Items absent from the published model cannot be ranked; they are
        // reachable only through exploration, like cold users.
        known.clear();
        known.extend(candidates.iter().copied().filter(|&i| published.knows_item(i)));
        let explore = explore_draw < cfg.explore_epsilon || !published.knows_user(user) || known.is_empty();
        let chosen: Vec<ItemId> = if explore {
            explored += 1;
            let mut r = RunSeed(shuffle_seed).rng("explore");
            index::sample(&mut r, candidates.len(), slate.min(candidates.len()))
                .into_iter()
                .map(|i| candidates[i])
                .collect()
        } else {
            let ctx = (t.floor() as u64 % 24) as u32;
            published.model().score_items(user, ctx, &known, &mut logits);
            scored.clear();
            scored.extend(logits.iter().copied().zip(known.iter().copied()));
            // Highest score first; ties broken by lower item id.
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            scored.iter().take(slate).map(|&(_, i)| i).collect()
        };

        for item in chosen {
            if events.len() as u64 >= cfg.total_impressions {
                break;
            }
            let outcomes = truth.sample_outcomes(user, item, &mut outcome_rng)?;
            let views = counts[item as usize];
            let event = InteractionEvent {
                seq_no: events.len() as u64,
                user_id: user,
                item_id: item,
                item_view_count_at_impression: views,
                outcomes,
                sim_time: t,
            };
            for p in pipelines.iter_mut() {
                p.push(&event)?;
            }
            counts[item as usize] += 1;
            tally.record(views);
            events.push(event);
        }
    }
    let outputs = pipelines
        .into_iter()
        .map(Pipeline::finish)
        .collect::<Result<Vec<_>>>()?;
    Ok(ClosedLoopOutput {
        log: EventLog::new(events),
        outputs,
        tally,
        explored,
    })
}
