//! Write → parse → write must reproduce every archived file byte for byte,
//! and parsed values must equal the originals bit for bit.

use std::path::PathBuf;
use std::sync::Arc;

use embcycle::config::{RunConfig, StreamRegime};
use embcycle::io::{
    converged_to_jsonl, events_to_jsonl, parse_events, parse_store, snapshots_to_jsonl, Manifest, RunFiles, RunKind,
    SignalFiles, MANIFEST_SCHEMA_VERSION,
};
use embcycle::pipeline::ModeKind;
use embcycle::report::{build_report, MetricReport, RunView};
use embcycle::runner::{build_world, train_on_log};
use embcycle::types::{
    make_grid, EmbeddingSnapshot, EventLog, GridSpec, InteractionEvent, Outcomes, SignalType, SnapshotStore,
};
use proptest::prelude::*;

/// Any finite double, including subnormals and extreme exponents.
fn finite() -> impl Strategy<Value = f64> {
    any::<f64>().prop_filter("finite", |x| x.is_finite())
}

fn event_log() -> impl Strategy<Value = EventLog> {
    let row = (
        1..1_000u64,
        0..50u32,
        0..6u32,
        any::<bool>(),
        any::<[bool; 3]>(),
        0.0..1e6f64,
    );
    prop::collection::vec(row, 0..60).prop_map(|rows| {
        let mut seq = 0;
        let mut counts = std::collections::HashMap::new();
        let events = rows
            .into_iter()
            .map(|(gap, user, item, view, [click, like, share], t)| {
                seq += gap;
                let c = counts.entry(item).or_insert(0u64);
                let e = InteractionEvent {
                    seq_no: seq,
                    user_id: user,
                    item_id: item,
                    item_view_count_at_impression: *c,
                    outcomes: Outcomes {
                        view: view.into(),
                        skip: (!view).into(),
                        click: click.into(),
                        like: like.into(),
                        share: share.into(),
                    },
                    sim_time: t,
                };
                *c += 1;
                e
            })
            .collect();
        EventLog::new(events)
    })
}

fn store() -> impl Strategy<Value = SnapshotStore> {
    let k = 1..5usize;
    k.prop_flat_map(|k| {
        let series = (
            0..8u32,
            1..=6usize,
            prop::collection::vec(finite(), k * 7),
            any::<u32>(),
        );
        (Just(k), prop::collection::vec(series, 0..6))
    })
    .prop_map(|(k, items)| {
        let grid = make_grid(&GridSpec {
            stop: 5_000,
            points: 6,
            ..GridSpec::default()
        })
        .unwrap();
        let mut store = SnapshotStore::new(grid.clone(), k);
        let mut seen = std::collections::BTreeSet::new();
        for (item, len, values, seq) in items {
            if !seen.insert(item) {
                continue;
            }
            let mut chunks = values.chunks(k);
            for &views in &grid.views()[..len] {
                store
                    .push(EmbeddingSnapshot {
                        item_id: item,
                        checkpoint_view_count: views,
                        vector: chunks.next().unwrap().to_vec(),
                        wall_seq: u64::from(seq) + views,
                    })
                    .unwrap();
            }
            store
                .set_converged(EmbeddingSnapshot {
                    item_id: item,
                    checkpoint_view_count: grid.views()[len - 1] + 1,
                    vector: chunks.next().unwrap().to_vec(),
                    wall_seq: u64::from(seq) + 10_000,
                })
                .unwrap();
        }
        store
    })
}

fn tiny_config(seed: u64, stream: StreamRegime, k: usize) -> RunConfig {
    let mut cfg = RunConfig::with_seed(seed);
    cfg.stream = stream;
    cfg.loop_cfg.n_users = 40;
    cfg.loop_cfg.n_items_initial = 6;
    cfg.loop_cfg.total_impressions = 3_000;
    cfg.loop_cfg.impressions_per_hour = 500.0;
    cfg.grid.start = 20;
    cfg.grid.stop = 200;
    cfg.grid.points = 5;
    cfg.k_dim = k;
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn event_logs_round_trip(log in event_log()) {
        let text = events_to_jsonl(&log);
        let parsed = parse_events(&text, "events").unwrap();
        prop_assert_eq!(events_to_jsonl(&parsed), text);
        for (a, b) in log.iter().zip(parsed.iter()) {
            prop_assert_eq!(a.sim_time.to_bits(), b.sim_time.to_bits());
        }
        prop_assert_eq!(parsed, log);
    }

    #[test]
    fn snapshot_stores_round_trip(store in store()) {
        let (snaps, conv) = (snapshots_to_jsonl(&store), converged_to_jsonl(&store));
        let parsed = parse_store((&snaps, "snapshots"), (&conv, "converged")).unwrap();
        prop_assert_eq!(snapshots_to_jsonl(&parsed), snaps);
        prop_assert_eq!(converged_to_jsonl(&parsed), conv);
        for (a, b) in store.snapshots().zip(parsed.snapshots()) {
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&a.vector), bits(&b.vector));
        }
        prop_assert_eq!(parsed, store);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn reports_and_manifests_round_trip(seed in any::<u64>(), k in 1..6usize, both in any::<bool>()) {
        let cfg = tiny_config(seed, StreamRegime::Open, k);
        let world = build_world(&cfg).unwrap();
        let log = world.log.clone().unwrap();
        let modes: &[ModeKind] = if both { &[ModeKind::Realtime, ModeKind::Batch] } else { &[ModeKind::Batch] };
        let runs: Vec<_> = modes.iter().map(|&m| train_on_log(&cfg, m, Arc::clone(&log)).unwrap()).collect();
        let views: Vec<RunView<'_>> = runs
            .iter()
            .map(|r| RunView { mode: r.mode, log: &r.log, stores: &r.stores })
            .collect();
        let kind = if both { RunKind::Compare } else { RunKind::Simulate };

        let report = build_report(kind, &cfg, &views).unwrap();
        let json = report.to_json();
        let mut parsed = MetricReport::parse(&json, "report").unwrap();
        prop_assert_eq!(parsed.to_json(), json);
        prop_assert!(report.modes[0].signals[0].retained_items > 0);
        // The output directory is deliberately not echoed.
        parsed.manifest.config.output_dir.clone_from(&cfg.output_dir);
        prop_assert_eq!(parsed, report);

        let manifest = Manifest {
            schema: MANIFEST_SCHEMA_VERSION.to_string(),
            kind,
            config: cfg.clone(),
            world: "world.json".into(),
            schedule: Some("schedule.jsonl".into()),
            runs: runs
                .iter()
                .map(|r| RunFiles {
                    mode: r.mode,
                    events: "events.jsonl".into(),
                    impressions: r.log.len() as u64,
                    stores: vec![SignalFiles {
                        signal: SignalType::View,
                        snapshots: PathBuf::from(r.mode.as_str()).join("snapshots.jsonl"),
                        converged: PathBuf::from(r.mode.as_str()).join("converged.jsonl"),
                    }],
                })
                .collect(),
        };
        let json = manifest.to_json();
        let parsed = Manifest::parse(&json, "manifest").unwrap();
        prop_assert_eq!(parsed.to_json(), json);
    }
}
