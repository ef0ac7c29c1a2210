//! The metric report: every monitoring quantity for one or two training
//! runs, computed from event logs and snapshot stores only.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::{parse_json, to_pretty_json, write_atomic, RunKind};
use crate::metrics::{
    engagement_by_bucket, learning_curve, maturity_crossing, maturity_curve, median, norm_ratios, peak_and_saturation,
    popularity_share, Histogram, LearningPoint, ViewBucketSpec,
};
use crate::pipeline::ModeKind;
use crate::types::{EventLog, ItemId, SignalType, SnapshotStore};

pub const REPORT_SCHEMA_VERSION: &str = "report-v1";
pub const REPORT_FILE: &str = "report.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricReport {
    pub schema: String,
    pub manifest: ReportManifest,
    pub modes: Vec<ModeReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Comparison>,
    pub warnings: Vec<String>,
}

/// Configuration echo of the run the report describes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportManifest {
    pub kind: RunKind,
    pub config: RunConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeReport {
    pub mode: ModeKind,
    pub impressions: u64,
    pub popularity: Vec<BucketShare>,
    pub engagement: Vec<BucketRates>,
    pub signals: Vec<SignalReport>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BucketShare {
    pub lo: u64,
    /// Exclusive upper edge; absent for the open top bucket.
    pub hi: Option<u64>,
    pub impressions: u64,
    pub share: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BucketRates {
    pub lo: u64,
    pub hi: Option<u64>,
    pub impressions: u64,
    /// Absent for an empty bucket.
    pub click_rate: Option<f64>,
    pub svp_rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalReport {
    pub signal: SignalType,
    /// Items with at least `min_views` impressions and a snapshot series.
    pub retained_items: usize,
    /// Items with snapshots but too few impressions.
    pub excluded_low_views: usize,
    pub maturity: MaturitySummary,
    pub learning: LearningSummary,
    pub norm_ratio: NormRatioSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaturitySummary {
    pub alpha: f64,
    pub median_crossing: Option<f64>,
    /// Retained items whose series has fewer than two snapshots.
    pub skipped_short_series: usize,
    /// Items skipped because a snapshot had zero norm.
    pub excluded_zero_norm: usize,
    /// Mean distance to the converged embedding at each grid checkpoint,
    /// over the items holding a snapshot there.
    pub mean_curve: Vec<MeanDistance>,
    pub items: Vec<ItemMaturity>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanDistance {
    pub views: u64,
    pub distance: f64,
    pub items: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemMaturity {
    pub item: ItemId,
    pub crossing: Option<u64>,
    pub points: Vec<(u64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningSummary {
    pub averaged: bool,
    pub sat_frac: f64,
    pub peak_view: Option<u64>,
    pub saturation_view: Option<u64>,
    pub excluded_zero_norm: usize,
    pub points: Vec<LearningPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormRatioSummary {
    pub at_views: u64,
    pub mean: Option<f64>,
    pub missing: usize,
    pub zero_norm: usize,
    pub values: Vec<(ItemId, f64)>,
    pub histogram: Histogram,
}

/// Realtime-versus-batch summary for the first signal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Comparison {
    pub signal: SignalType,
    pub median_crossing: ModePair<Option<f64>>,
    /// Realtime median crossing divided by the batch one.
    pub crossing_ratio: Option<f64>,
    pub peak_view: ModePair<Option<u64>>,
    pub saturation_view: ModePair<Option<u64>>,
    pub norm_ratio_mean: ModePair<Option<f64>>,
    /// Batch mean norm ratio divided by the realtime one.
    pub norm_mean_ratio: Option<f64>,
    pub top_bucket_share: ModePair<Option<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModePair<T> {
    pub realtime: T,
    pub batch: T,
}

/// One training run as seen by the report builder.
pub struct RunView<'a> {
    pub mode: ModeKind,
    pub log: &'a EventLog,
    pub stores: &'a [(SignalType, SnapshotStore)],
}

fn bucket_bounds(buckets: &ViewBucketSpec) -> impl Iterator<Item = (u64, Option<u64>)> + '_ {
    buckets
        .edges()
        .iter()
        .enumerate()
        .map(|(b, &lo)| (lo, buckets.upper(b)))
}

fn signal_report(
    cfg: &RunConfig,
    mode: ModeKind,
    log: &EventLog,
    signal: SignalType,
    store: &SnapshotStore,
    warnings: &mut Vec<String>,
) -> Result<SignalReport> {
    let m = &cfg.metrics;
    let min_views = cfg.min_views()?;
    let counts = log.impressions_per_item();
    let mut retained = store.clone();
    retained.retain(|i| counts.get(&i).copied().unwrap_or(0) >= min_views);
    let excluded_low_views = store.item_count() - retained.item_count();
    let tag = format!("{mode}/{signal}");
    if retained.item_count() == 0 {
        warnings.push(format!("{tag}: no item reached {min_views} impressions"));
    }

    let views = retained.grid().views().to_vec();
    let mut sums = vec![0.0; views.len()];
    let mut present = vec![0usize; views.len()];
    let mut items = Vec::new();
    let mut crossings = Vec::new();
    let (mut short, mut zero) = (0, 0);
    for item in retained.items() {
        let series = retained.maturity_series(item).unwrap_or_default();
        match maturity_curve(&series) {
            Ok(Some(curve)) => {
                let crossing = maturity_crossing(&curve, m.alpha);
                if let Some(c) = crossing {
                    crossings.push(c as f64);
                }
                // The final point is the converged embedding, not a grid checkpoint.
                for (i, &(_, d)) in curve.points[..curve.points.len() - 1].iter().enumerate() {
                    sums[i] += d;
                    present[i] += 1;
                }
                items.push(ItemMaturity {
                    item,
                    crossing,
                    points: curve.points,
                });
            }
            Ok(None) => short += 1,
            Err(_) => zero += 1,
        }
    }
    if short > 0 {
        warnings.push(format!("{tag}: {short} items skipped with fewer than two snapshots"));
    }
    if zero > 0 {
        warnings.push(format!("{tag}: {zero} items excluded for a zero-norm snapshot"));
    }
    let mean_curve = views
        .iter()
        .enumerate()
        .filter(|&(i, _)| present[i] > 0)
        .map(|(i, &v)| MeanDistance {
            views: v,
            distance: sums[i] / present[i] as f64,
            items: present[i],
        })
        .collect();

    let curve = learning_curve(&retained, !m.unaveraged_learning);
    let (peak_view, saturation_view) = match peak_and_saturation(&curve, m.sat_frac) {
        Some((p, s)) => (Some(p), s),
        None => (None, None),
    };
    let at_views = retained.grid().last();
    let ratios = norm_ratios(&retained, at_views);
    if ratios.zero_norm > 0 {
        warnings.push(format!(
            "{tag}: {} items have a zero-norm initial embedding",
            ratios.zero_norm
        ));
    }
    Ok(SignalReport {
        signal,
        retained_items: retained.item_count(),
        excluded_low_views,
        maturity: MaturitySummary {
            alpha: m.alpha,
            median_crossing: median(&crossings),
            skipped_short_series: short,
            excluded_zero_norm: zero,
            mean_curve,
            items,
        },
        learning: LearningSummary {
            averaged: !m.unaveraged_learning,
            sat_frac: m.sat_frac,
            peak_view,
            saturation_view,
            excluded_zero_norm: curve.excluded_zero_norm,
            points: curve.points,
        },
        norm_ratio: NormRatioSummary {
            at_views,
            mean: ratios.mean(),
            missing: ratios.missing,
            zero_norm: ratios.zero_norm,
            values: ratios.values,
            // Placeholder; rebinned on a range shared by all modes below.
            histogram: Histogram {
                edges: Vec::new(),
                counts: Vec::new(),
            },
        },
    })
}

fn mode_report(cfg: &RunConfig, run: &RunView<'_>, warnings: &mut Vec<String>) -> Result<ModeReport> {
    let buckets = &cfg.metrics.buckets;
    let (popularity, engagement) = if run.log.is_empty() {
        warnings.push(format!("{}: empty event log", run.mode));
        (Vec::new(), Vec::new())
    } else {
        let shares = popularity_share(run.log, buckets)?;
        let rates = engagement_by_bucket(run.log, buckets)?;
        let popularity = bucket_bounds(buckets)
            .zip(shares.iter().zip(&rates))
            .map(|((lo, hi), (&share, r))| BucketShare {
                lo,
                hi,
                impressions: r.impressions,
                share,
            })
            .collect();
        let engagement = bucket_bounds(buckets)
            .zip(&rates)
            .map(|((lo, hi), r)| BucketRates {
                lo,
                hi,
                impressions: r.impressions,
                click_rate: r.click_rate,
                svp_rate: r.svp_rate,
            })
            .collect();
        (popularity, engagement)
    };
    let signals = run
        .stores
        .iter()
        .map(|(s, store)| signal_report(cfg, run.mode, run.log, *s, store, warnings))
        .collect::<Result<Vec<_>>>()?;
    Ok(ModeReport {
        mode: run.mode,
        impressions: run.log.len() as u64,
        popularity,
        engagement,
        signals,
    })
}

/// Bins every mode's norm ratios of one signal on a common `[0, ceil(max))`
/// range so the histograms can be overlaid.
fn bin_norm_ratios(modes: &mut [ModeReport], bins: usize) -> Result<()> {
    let n_signals = modes.first().map_or(0, |m| m.signals.len());
    for s in 0..n_signals {
        let max = modes
            .iter()
            .filter_map(|m| m.signals.get(s))
            .flat_map(|r| r.norm_ratio.values.iter().map(|v| v.1))
            .fold(1.0_f64, f64::max);
        let hi = max.ceil() + if max.ceil() == max { 1.0 } else { 0.0 };
        for m in modes.iter_mut() {
            if let Some(r) = m.signals.get_mut(s) {
                let values: Vec<f64> = r.norm_ratio.values.iter().map(|v| v.1).collect();
                r.norm_ratio.histogram = Histogram::new(&values, 0.0, hi, bins)?;
            }
        }
    }
    Ok(())
}

fn comparison(modes: &[ModeReport]) -> Option<Comparison> {
    let rt = modes.iter().find(|m| m.mode == ModeKind::Realtime)?;
    let b = modes.iter().find(|m| m.mode == ModeKind::Batch)?;
    let (rs, bs) = (rt.signals.first()?, b.signals.first()?);
    let pair = |f: &dyn Fn(&SignalReport) -> Option<f64>| ModePair {
        realtime: f(rs),
        batch: f(bs),
    };
    let pair_u = |f: &dyn Fn(&SignalReport) -> Option<u64>| ModePair {
        realtime: f(rs),
        batch: f(bs),
    };
    let ratio = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) if b != 0.0 => Some(a / b),
        _ => None,
    };
    let median_crossing = pair(&|r| r.maturity.median_crossing);
    let norm_ratio_mean = pair(&|r| r.norm_ratio.mean);
    Some(Comparison {
        signal: rs.signal,
        crossing_ratio: ratio(median_crossing.realtime, median_crossing.batch),
        median_crossing,
        peak_view: pair_u(&|r| r.learning.peak_view),
        saturation_view: pair_u(&|r| r.learning.saturation_view),
        norm_mean_ratio: ratio(norm_ratio_mean.batch, norm_ratio_mean.realtime),
        norm_ratio_mean,
        top_bucket_share: ModePair {
            realtime: rt.popularity.last().map(|p| p.share),
            batch: b.popularity.last().map(|p| p.share),
        },
    })
}

/// Builds the report. Pure: the same inputs always give the same report.
pub fn build_report(kind: RunKind, cfg: &RunConfig, runs: &[RunView<'_>]) -> Result<MetricReport> {
    let mut warnings = Vec::new();
    let mut modes = runs
        .iter()
        .map(|r| mode_report(cfg, r, &mut warnings))
        .collect::<Result<Vec<_>>>()?;
    bin_norm_ratios(&mut modes, cfg.metrics.norm_bins)?;
    Ok(MetricReport {
        schema: REPORT_SCHEMA_VERSION.to_string(),
        manifest: ReportManifest {
            kind,
            config: cfg.clone(),
        },
        comparison: comparison(&modes),
        modes,
        warnings,
    })
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        to_pretty_json(self)
    }

    pub fn parse(text: &str, source_name: &str) -> Result<MetricReport> {
        let raw: serde_json::Value = parse_json(text, source_name)?;
        let found = raw.get("schema").and_then(|v| v.as_str()).unwrap_or("<none>");
        if found != REPORT_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                source_name: source_name.to_string(),
                expected: REPORT_SCHEMA_VERSION.to_string(),
                found: found.to_string(),
            });
        }
        serde_json::from_value(raw).map_err(|e| Error::Parse {
            source_name: source_name.to_string(),
            line: 0,
            reason: e.to_string(),
        })
    }

    pub fn mode(&self, mode: ModeKind) -> Option<&ModeReport> {
        self.modes.iter().find(|m| m.mode == mode)
    }
}

pub const CSV_FILES: [&str; 5] = [
    "maturity.csv",
    "learning.csv",
    "norm_ratio.csv",
    "popularity.csv",
    "engagement.csv",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_text(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv write");
    for r in rows {
        w.write_record(&r).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv output is utf-8")
}

/// The five per-figure CSV files as `(file name, contents)`.
pub fn report_csvs(report: &MetricReport) -> Vec<(&'static str, String)> {
    let mut maturity = Vec::new();
    let mut learning = Vec::new();
    let mut norm = Vec::new();
    let mut popularity = Vec::new();
    let mut engagement = Vec::new();
    for m in &report.modes {
        let mode = m.mode.to_string();
        for s in &m.signals {
            let sig = s.signal.to_string();
            for it in &s.maturity.items {
                for &(v, d) in &it.points {
                    maturity.push(vec![
                        mode.clone(),
                        sig.clone(),
                        it.item.to_string(),
                        v.to_string(),
                        d.to_string(),
                    ]);
                }
            }
            for p in &s.learning.points {
                learning.push(vec![
                    mode.clone(),
                    sig.clone(),
                    p.views.to_string(),
                    p.value.to_string(),
                    p.items.to_string(),
                ]);
            }
            for (item, r) in &s.norm_ratio.values {
                norm.push(vec![mode.clone(), sig.clone(), item.to_string(), r.to_string()]);
            }
        }
        for p in &m.popularity {
            popularity.push(vec![
                mode.clone(),
                p.lo.to_string(),
                opt(p.hi),
                p.impressions.to_string(),
                p.share.to_string(),
            ]);
        }
        for e in &m.engagement {
            engagement.push(vec![
                mode.clone(),
                e.lo.to_string(),
                opt(e.hi),
                e.impressions.to_string(),
                opt(e.click_rate),
                opt(e.svp_rate),
            ]);
        }
    }
    vec![
        (
            "maturity.csv",
            csv_text(&["mode", "signal", "item", "views", "distance"], maturity),
        ),
        (
            "learning.csv",
            csv_text(&["mode", "signal", "views", "value", "items"], learning),
        ),
        ("norm_ratio.csv", csv_text(&["mode", "signal", "item", "ratio"], norm)),
        (
            "popularity.csv",
            csv_text(&["mode", "bucket_lo", "bucket_hi", "impressions", "share"], popularity),
        ),
        (
            "engagement.csv",
            csv_text(
                &[
                    "mode",
                    "bucket_lo",
                    "bucket_hi",
                    "impressions",
                    "click_rate",
                    "svp_rate",
                ],
                engagement,
            ),
        ),
    ]
}

/// Writes `report.json` and the CSV files into `dir`.
pub fn write_report(report: &MetricReport, dir: &Path) -> Result<()> {
    write_atomic(&dir.join(REPORT_FILE), report.to_json().as_bytes())?;
    for (name, text) in report_csvs(report) {
        write_atomic(&dir.join(name), text.as_bytes())?;
    }
    Ok(())
}
