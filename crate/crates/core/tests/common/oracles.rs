//! Brute-force metric oracles and random fixtures shared by the metric
//! tests and the acceptance run. Each `check_*` covers one random case.

use embcycle::metrics::{
    engagement_by_bucket, learning_curve, maturity_curve, norm_ratio, popularity_share, ViewBucketSpec,
};
use embcycle::seed::RunSeed;
use embcycle::types::{CheckpointGrid, EmbeddingSnapshot, EventLog, InteractionEvent, Outcomes, SnapshotStore};
use rand::Rng;

pub const TOL: f64 = 1e-12;

// ---- oracles -------------------------------------------------------------

pub fn oracle_dist(x: &[f64], y: &[f64]) -> f64 {
    let nx = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let ny = y.iter().map(|a| a * a).sum::<f64>().sqrt();
    let mut cos = 0.0;
    for i in 0..x.len() {
        cos += (x[i] / nx) * (y[i] / ny);
    }
    (1.0 - cos).clamp(0.0, 2.0)
}

pub fn oracle_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |acc, a| acc + a * a).sqrt()
}

pub fn lookup(snaps: &[EmbeddingSnapshot], views: u64) -> Option<&EmbeddingSnapshot> {
    snaps.iter().find(|s| s.checkpoint_view_count == views)
}

/// `L(V_i)` term by term, over items holding snapshots at both checkpoints.
pub fn oracle_learning(items: &[Vec<EmbeddingSnapshot>], grid: &[u64]) -> Vec<(u64, f64, usize)> {
    let mut out = Vec::new();
    for i in 1..grid.len() {
        let mut total = 0.0;
        let mut n = 0;
        for snaps in items {
            if let (Some(prev), Some(cur)) = (lookup(snaps, grid[i - 1]), lookup(snaps, grid[i])) {
                total += oracle_dist(&cur.vector, &prev.vector);
                n += 1;
            }
        }
        if n > 0 {
            out.push((grid[i], total / (n as f64 * (grid[i] - grid[i - 1]) as f64), n));
        }
    }
    out
}

pub fn oracle_bucket(edges: &[u64], views: u64) -> usize {
    let mut b = 0;
    for (i, &e) in edges.iter().enumerate() {
        if views >= e {
            b = i;
        }
    }
    b
}

// ---- random fixtures -----------------------------------------------------

pub struct Fixture {
    pub grid: CheckpointGrid,
    pub items: Vec<Vec<EmbeddingSnapshot>>,
    pub converged: Vec<EmbeddingSnapshot>,
    pub store: SnapshotStore,
}

pub fn random_vec(rng: &mut impl Rng, k: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect();
        if v.iter().any(|x| *x != 0.0) {
            return v;
        }
    }
}

pub fn random_store(seed: u64) -> Fixture {
    let mut rng = RunSeed(seed).rng("metric-oracle");
    let n_checkpoints = rng.gen_range(2..=6);
    let mut views = vec![0u64];
    for _ in 1..n_checkpoints {
        let last = *views.last().unwrap();
        views.push(last + rng.gen_range(1..500));
    }
    let grid = CheckpointGrid::new(views.clone()).unwrap();
    let k = rng.gen_range(2..=5);
    let mut store = SnapshotStore::new(grid.clone(), k);
    let mut items = Vec::new();
    let mut converged = Vec::new();
    for item in 0..rng.gen_range(1..=10u32) {
        let len = rng.gen_range(1..=views.len());
        let snaps: Vec<EmbeddingSnapshot> = views[..len]
            .iter()
            .enumerate()
            .map(|(i, &v)| EmbeddingSnapshot {
                item_id: item,
                checkpoint_view_count: v,
                vector: random_vec(&mut rng, k),
                wall_seq: i as u64,
            })
            .collect();
        for s in &snaps {
            store.push(s.clone()).unwrap();
        }
        let conv = EmbeddingSnapshot {
            item_id: item,
            checkpoint_view_count: views[len - 1] + rng.gen_range(0..50),
            vector: random_vec(&mut rng, k),
            wall_seq: 1_000,
        };
        store.set_converged(conv.clone()).unwrap();
        items.push(snaps);
        converged.push(conv);
    }
    Fixture {
        grid,
        items,
        converged,
        store,
    }
}

pub fn random_log(seed: u64) -> EventLog {
    let mut rng = RunSeed(seed).rng("log-oracle");
    let n = rng.gen_range(1..300);
    EventLog::new(
        (0..n)
            .map(|i| {
                let view = rng.gen_range(0..2u8);
                InteractionEvent {
                    seq_no: i,
                    user_id: rng.gen_range(0..20),
                    item_id: rng.gen_range(0..10),
                    item_view_count_at_impression: rng.gen_range(0..12_000),
                    outcomes: Outcomes {
                        view,
                        skip: 1 - view,
                        click: rng.gen_range(0..2),
                        like: 0,
                        share: 0,
                    },
                    sim_time: i as f64,
                }
            })
            .collect(),
    )
}

pub fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL
}

// ---- per-case checks -----------------------------------------------------

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {{
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    }};
}

pub fn check_maturity(seed: u64) -> Result<(), String> {
    let f = random_store(seed);
    for (snaps, conv) in f.items.iter().zip(&f.converged) {
        let series = f.store.maturity_series(conv.item_id).ok_or("missing series")?;
        let curve = maturity_curve(&series).map_err(|e| e.to_string())?.ok_or("no curve")?;
        let expected: Vec<(u64, f64)> = snaps
            .iter()
            .chain(std::iter::once(conv))
            .map(|s| (s.checkpoint_view_count, oracle_dist(&s.vector, &conv.vector)))
            .collect();
        ensure!(curve.points.len() == expected.len(), "seed {seed}: curve length");
        for (got, want) in curve.points.iter().zip(&expected) {
            ensure!(
                got.0 == want.0 && close(got.1, want.1),
                "seed {seed}: {got:?} vs {want:?}"
            );
        }
        ensure!(curve.points.last().unwrap().1 == 0.0, "seed {seed}: terminal point");
    }
    Ok(())
}

pub fn check_learning(seed: u64) -> Result<(), String> {
    let f = random_store(seed);
    let want = oracle_learning(&f.items, f.grid.views());
    let got = learning_curve(&f.store, true);
    ensure!(got.points.len() == want.len(), "seed {seed}: learning length");
    for (g, w) in got.points.iter().zip(&want) {
        ensure!((g.views, g.items) == (w.0, w.2), "seed {seed}: learning support");
        ensure!(close(g.value, w.1), "seed {seed}: {} vs {}", g.value, w.1);
    }
    let raw = learning_curve(&f.store, false);
    for (g, w) in raw.points.iter().zip(&want) {
        ensure!(close(g.value, w.1 * w.2 as f64), "seed {seed}: unaveraged learning");
    }
    Ok(())
}

pub fn check_norm_ratio(seed: u64) -> Result<(), String> {
    let f = random_store(seed);
    for &x in f.grid.views() {
        for snaps in &f.items {
            let got = norm_ratio(snaps, x);
            match lookup(snaps, x) {
                Some(at) => {
                    let want = oracle_norm(&at.vector) / oracle_norm(&snaps[0].vector);
                    ensure!(got.as_ref().is_ok_and(|g| close(*g, want)), "seed {seed}: ratio at {x}");
                }
                None => ensure!(got.is_err(), "seed {seed}: ratio without snapshot"),
            }
        }
    }
    Ok(())
}

pub fn check_popularity(seed: u64) -> Result<(), String> {
    let buckets = ViewBucketSpec::default();
    let log = random_log(seed);
    let got = popularity_share(&log, &buckets).map_err(|e| e.to_string())?;
    let mut counts = vec![0.0; buckets.len()];
    for e in log.iter() {
        counts[oracle_bucket(buckets.edges(), e.item_view_count_at_impression)] += 1.0;
    }
    for (g, c) in got.iter().zip(&counts) {
        ensure!(close(*g, c / log.len() as f64), "seed {seed}: share");
    }
    ensure!((got.iter().sum::<f64>() - 1.0).abs() <= TOL, "seed {seed}: shares sum");
    Ok(())
}

pub fn check_engagement(seed: u64) -> Result<(), String> {
    let buckets = ViewBucketSpec::new(vec![0, 500, 2_000, 5_000]).map_err(|e| e.to_string())?;
    let log = random_log(seed);
    let got = engagement_by_bucket(&log, &buckets).map_err(|e| e.to_string())?;
    for (b, g) in got.iter().enumerate() {
        let in_bucket: Vec<&InteractionEvent> = log
            .iter()
            .filter(|e| oracle_bucket(buckets.edges(), e.item_view_count_at_impression) == b)
            .collect();
        ensure!(g.impressions == in_bucket.len() as u64, "seed {seed}: bucket size");
        if in_bucket.is_empty() {
            ensure!(
                (g.click_rate, g.svp_rate) == (None, None),
                "seed {seed}: empty bucket rates"
            );
        } else {
            let n = in_bucket.len() as f64;
            let clicks = in_bucket.iter().filter(|e| e.outcomes.click == 1).count() as f64;
            let plays = in_bucket.iter().filter(|e| e.outcomes.view == 1).count() as f64;
            ensure!(
                g.click_rate.is_some_and(|r| close(r, clicks / n)),
                "seed {seed}: click rate"
            );
            ensure!(g.svp_rate.is_some_and(|r| close(r, plays / n)), "seed {seed}: svp rate");
        }
    }
    Ok(())
}

/// Every metric oracle on one random case.
pub fn check_all(seed: u64) -> Result<(), String> {
    check_maturity(seed)?;
    check_learning(seed)?;
    check_norm_ratio(seed)?;
    check_popularity(seed)?;
    check_engagement(seed)
}
