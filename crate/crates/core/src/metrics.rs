//! Embedding-evolution monitoring metrics. Everything here is a pure
//! function of completed snapshot stores and event logs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{EmbeddingSnapshot, EventLog, ItemId, SnapshotStore};

/// `1 - <x, y> / (|x| |y|)`, clamped to `[0, 2]`.
pub fn cosine_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    assert_eq!(x.len(), y.len(), "cosine distance of vectors with different lengths");
    let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        xy += a * b;
        xx += a * a;
        yy += b * b;
    }
    if xx == 0.0 || yy == 0.0 {
        return Err(Error::ZeroNorm);
    }
    // sqrt(a * a) == a exactly, so identical vectors give exactly 0.
    Ok((1.0 - xy / (xx * yy).sqrt()).clamp(0.0, 2.0))
}

pub fn l2_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaturityCurve {
    pub item_id: ItemId,
    /// `(views, distance to the converged embedding)`; the last point is the
    /// converged embedding itself.
    pub points: Vec<(u64, f64)>,
}

/// Distance of every snapshot in `series` to its last element. Returns
/// `Ok(None)` when there are fewer than two snapshots.
pub fn maturity_curve(series: &[&EmbeddingSnapshot]) -> Result<Option<MaturityCurve>> {
    let Some(last) = series.last() else {
        return Ok(None);
    };
    if series.len() < 2 {
        return Ok(None);
    }
    let points = series
        .iter()
        .map(|s| Ok((s.checkpoint_view_count, cosine_distance(&s.vector, &last.vector)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(MaturityCurve {
        item_id: last.item_id,
        points,
    }))
}

/// First view count from which the curve stays below `alpha`.
pub fn maturity_crossing(curve: &MaturityCurve, alpha: f64) -> Option<u64> {
    let last_above = curve.points.iter().rposition(|&(_, d)| d >= alpha);
    match last_above {
        None => curve.points.first().map(|p| p.0),
        Some(i) => curve.points.get(i + 1).map(|p| p.0),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningPoint {
    pub views: u64,
    pub value: f64,
    pub items: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub points: Vec<LearningPoint>,
    /// Item intervals skipped because a snapshot had zero norm.
    pub excluded_zero_norm: usize,
}

/// Information per view between consecutive checkpoints:
///
/// `L(V_i) = 1 / (N_i (V_i - V_{i-1})) * sum_j Dist(V_i^j, V_{i-1}^j)`
///
/// over the `N_i` items holding snapshots at both checkpoints. With
/// `averaged = false` the `1/N_i` factor is dropped. Checkpoints with no
/// contributing item are omitted.
pub fn learning_curve(store: &SnapshotStore, averaged: bool) -> LearningCurve {
    let views = store.grid().views();
    let mut sums = vec![0.0; views.len()];
    let mut counts = vec![0usize; views.len()];
    let mut excluded = 0;
    for (_, series) in store.iter_series() {
        for (i, pair) in series.windows(2).enumerate() {
            match cosine_distance(&pair[1].vector, &pair[0].vector) {
                Ok(d) => {
                    sums[i + 1] += d;
                    counts[i + 1] += 1;
                }
                Err(_) => excluded += 1,
            }
        }
    }
    let points = (1..views.len())
        .filter(|&i| counts[i] > 0)
        .map(|i| {
            let width = (views[i] - views[i - 1]) as f64;
            let norm = if averaged { counts[i] as f64 } else { 1.0 };
            LearningPoint {
                views: views[i],
                value: sums[i] / (norm * width),
                items: counts[i],
            }
        })
        .collect();
    LearningCurve {
        points,
        excluded_zero_norm: excluded,
    }
}

/// Peak of the learning curve (earliest on ties) and the first checkpoint
/// after it from which `L` stays at or below `sat_frac * peak`.
pub fn peak_and_saturation(curve: &LearningCurve, sat_frac: f64) -> Option<(u64, Option<u64>)> {
    let pts = &curve.points;
    let mut peak = 0;
    for (i, p) in pts.iter().enumerate() {
        if p.value > pts[peak].value {
            peak = i;
        }
    }
    let max = pts.get(peak)?.value;
    let threshold = sat_frac * max;
    let last_above = pts.iter().rposition(|p| p.value > threshold).unwrap_or(peak).max(peak);
    let saturation = pts.get(last_above + 1).map(|p| p.views);
    Some((pts[peak].views, saturation))
}

/// `|emb at x views| / |emb at 0 views|` for one item's grid series.
pub fn norm_ratio(series: &[EmbeddingSnapshot], x: u64) -> Result<f64> {
    let find = |v: u64| series.iter().find(|s| s.checkpoint_view_count == v);
    let item = series.first().map_or(0, |s| s.item_id);
    let initial = find(0).ok_or(Error::MissingSnapshot { item, views: 0 })?;
    let at = find(x).ok_or(Error::MissingSnapshot { item, views: x })?;
    let denom = l2_norm(&initial.vector);
    if denom == 0.0 {
        return Err(Error::ZeroInitialNorm { item });
    }
    Ok(l2_norm(&at.vector) / denom)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// `bins` equal-width bins over `[lo, hi)`. Values outside the range are
    /// counted in the first or last bin.
    pub fn new(values: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Histogram> {
        if bins == 0 || !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::config(
                "metrics.norm_bins",
                "need at least one bin over a non-empty range",
            ));
        }
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
        let mut counts = vec![0u64; bins];
        for &v in values {
            let b = ((v - lo) / width).floor();
            let b = if b.is_nan() || b < 0.0 {
                0
            } else {
                (b as usize).min(bins - 1)
            };
            counts[b] += 1;
        }
        Ok(Histogram { edges, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Mean estimated from bin midpoints.
    pub fn midpoint_mean(&self) -> Option<f64> {
        let n = self.total();
        (n > 0).then(|| {
            self.counts
                .iter()
                .enumerate()
                .map(|(i, &c)| c as f64 * 0.5 * (self.edges[i] + self.edges[i + 1]))
                .sum::<f64>()
                / n as f64
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NormRatios {
    pub values: Vec<(ItemId, f64)>,
    pub missing: usize,
    pub zero_norm: usize,
}

impl NormRatios {
    pub fn ratios(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.1).collect()
    }

    pub fn mean(&self) -> Option<f64> {
        (!self.values.is_empty()).then(|| self.values.iter().map(|v| v.1).sum::<f64>() / self.values.len() as f64)
    }
}

/// Norm ratios at `x` views for every item in the store.
pub fn norm_ratios(store: &SnapshotStore, x: u64) -> NormRatios {
    let mut out = NormRatios::default();
    for (item, series) in store.iter_series() {
        match norm_ratio(series, x) {
            Ok(r) => out.values.push((item, r)),
            Err(Error::ZeroInitialNorm { .. }) => out.zero_norm += 1,
            Err(_) => out.missing += 1,
        }
    }
    out
}

/// Histogram of the store's norm ratios at `x`.
pub fn norm_ratio_histogram(store: &SnapshotStore, x: u64, lo: f64, hi: f64, bins: usize) -> Result<Histogram> {
    Histogram::new(&norm_ratios(store, x).ratios(), lo, hi, bins)
}

/// Half-open view buckets `[e_0, e_1), [e_1, e_2), ..., [e_last, inf)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u64>", into = "Vec<u64>")]
pub struct ViewBucketSpec {
    edges: Vec<u64>,
}

impl ViewBucketSpec {
    pub fn new(edges: Vec<u64>) -> Result<Self> {
        if edges.first() != Some(&0) {
            return Err(Error::config("metrics.buckets", "first edge must be 0"));
        }
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("metrics.buckets", "edges must strictly increase"));
        }
        Ok(ViewBucketSpec { edges })
    }

    pub fn edges(&self) -> &[u64] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn bucket_of(&self, views: u64) -> usize {
        self.edges.partition_point(|&e| e <= views) - 1
    }

    /// Upper edge of bucket `b`, `None` for the open top bucket.
    pub fn upper(&self, b: usize) -> Option<u64> {
        self.edges.get(b + 1).copied()
    }
}

impl Default for ViewBucketSpec {
    fn default() -> Self {
        ViewBucketSpec {
            edges: vec![0, 1_000, 2_000, 5_000, 10_000],
        }
    }
}

impl TryFrom<Vec<u64>> for ViewBucketSpec {
    type Error = Error;

    fn try_from(edges: Vec<u64>) -> Result<Self> {
        ViewBucketSpec::new(edges)
    }
}

impl From<ViewBucketSpec> for Vec<u64> {
    fn from(b: ViewBucketSpec) -> Self {
        b.edges
    }
}

/// Share of impressions per bucket of the item's view count at impression.
pub fn popularity_share(log: &EventLog, buckets: &ViewBucketSpec) -> Result<Vec<f64>> {
    if log.is_empty() {
        return Err(Error::EmptyLog);
    }
    let mut counts = vec![0u64; buckets.len()];
    for e in log.iter() {
        counts[buckets.bucket_of(e.item_view_count_at_impression)] += 1;
    }
    let total = log.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / total).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketEngagement {
    pub impressions: u64,
    /// Absent for an empty bucket.
    pub click_rate: Option<f64>,
    pub svp_rate: Option<f64>,
}

/// Click rate and successful-play (view) rate per view bucket.
pub fn engagement_by_bucket(log: &EventLog, buckets: &ViewBucketSpec) -> Result<Vec<BucketEngagement>> {
    if log.is_empty() {
        return Err(Error::EmptyLog);
    }
    let mut n = vec![0u64; buckets.len()];
    let mut clicks = vec![0u64; buckets.len()];
    let mut views = vec![0u64; buckets.len()];
    for e in log.iter() {
        let b = buckets.bucket_of(e.item_view_count_at_impression);
        n[b] += 1;
        clicks[b] += u64::from(e.outcomes.click);
        views[b] += u64::from(e.outcomes.view);
    }
    Ok((0..buckets.len())
        .map(|b| {
            let rate = |k: u64| (n[b] > 0).then(|| k as f64 / n[b] as f64);
            BucketEngagement {
                impressions: n[b],
                click_rate: rate(clicks[b]),
                svp_rate: rate(views[b]),
            }
        })
        .collect())
}

/// Median of a non-empty sample (mean of the middle pair for even sizes).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}
