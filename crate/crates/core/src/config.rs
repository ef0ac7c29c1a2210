//! Run configuration and its flat `key = value` text format.
//!
//! ```text
//! # comment
//! seed = 42
//! mode = batch
//! window.kind = sim_hours
//! window.size = 6
//! grid.stop = 10000
//! hyper.learning_rate = 0.2
//! ```
//!
//! Every key except `seed` has a default; unknown or repeated keys are
//! rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ffm::Hyperparams;
use crate::metrics::ViewBucketSpec;
use crate::pipeline::{BatchWindow, ModeKind, UpdateMode};
use crate::sim::{LoopConfig, TruthConfig};
use crate::types::{make_grid, CheckpointGrid, GridKind, GridSpec, SignalType};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamRegime {
    Open,
    Closed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSettings {
    pub alpha: f64,
    pub sat_frac: f64,
    /// Items with fewer total impressions are excluded from embedding
    /// metrics. `None` means the grid's final checkpoint.
    pub min_views: Option<u64>,
    pub buckets: ViewBucketSpec,
    pub norm_bins: usize,
    /// Drop the `1/N_i` averaging in the learning curve.
    pub unaveraged_learning: bool,
}

impl Default for MetricSettings {
    fn default() -> Self {
        MetricSettings {
            alpha: 0.5,
            sat_frac: 0.1,
            min_views: None,
            buckets: ViewBucketSpec::default(),
            norm_bins: 20,
            unaveraged_learning: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub mode: ModeKind,
    pub window: BatchWindow,
    pub grid: GridSpec,
    pub k_dim: usize,
    pub hyper: Hyperparams,
    #[serde(rename = "loop")]
    pub loop_cfg: LoopConfig,
    pub truth: TruthConfig,
    pub stream: StreamRegime,
    pub signals: Vec<SignalType>,
    pub metrics: MetricSettings,
    /// Where commands write; not part of the serialized echo, so reports do
    /// not depend on the directory they were written to.
    #[serde(skip, default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    /// Defaults for everything; the seed must still be chosen by the caller.
    pub fn with_seed(seed: u64) -> Self {
        RunConfig {
            seed,
            mode: ModeKind::Realtime,
            window: BatchWindow::default(),
            grid: GridSpec::default(),
            k_dim: 32,
            hyper: Hyperparams::default(),
            loop_cfg: LoopConfig::default(),
            truth: TruthConfig::default(),
            stream: StreamRegime::Open,
            signals: vec![SignalType::View],
            metrics: MetricSettings::default(),
            output_dir: default_output_dir(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        self.checkpoint_grid()?;
        if self.k_dim < 1 {
            return Err(Error::config("model.k_dim", "must be at least 1"));
        }
        self.hyper.validate()?;
        self.loop_cfg.validate()?;
        self.truth.validate()?;
        if self.signals.is_empty() {
            return Err(Error::config("signals", "at least one signal is required"));
        }
        for (i, s) in self.signals.iter().enumerate() {
            if self.signals[..i].contains(s) {
                return Err(Error::config("signals", format!("duplicate signal {s}")));
            }
        }
        let m = &self.metrics;
        if !(m.alpha > 0.0 && m.alpha < 2.0) {
            return Err(Error::config("metrics.alpha", "must lie in (0, 2)"));
        }
        if !(m.sat_frac > 0.0 && m.sat_frac < 1.0) {
            return Err(Error::config("metrics.sat_frac", "must lie in (0, 1)"));
        }
        if m.norm_bins < 1 {
            return Err(Error::config("metrics.norm_bins", "must be at least 1"));
        }
        Ok(())
    }

    pub fn checkpoint_grid(&self) -> Result<CheckpointGrid> {
        make_grid(&self.grid)
    }

    pub fn update_mode(&self, kind: ModeKind) -> UpdateMode {
        match kind {
            ModeKind::Realtime => UpdateMode::Realtime,
            ModeKind::Batch => UpdateMode::Batch(self.window),
        }
    }

    /// Retention threshold for embedding metrics.
    pub fn min_views(&self) -> Result<u64> {
        Ok(match self.metrics.min_views {
            Some(v) => v,
            None => self.checkpoint_grid()?.last(),
        })
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_config(&text)
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse {value:?}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::config(key, "expected true or false")),
    }
}

/// Parses the flat text format and validates the result.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_with_seed(text, None)
}

/// As [`parse_config`], with `seed` (when given) taking precedence over the
/// file's `seed` key, which then becomes optional.
pub fn parse_config_with_seed(text: &str, seed: Option<u64>) -> Result<RunConfig> {
    let mut entries: BTreeMap<String, String> = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            source_name: "config".into(),
            line: n + 1,
            reason: "expected key = value".into(),
        })?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if entries.insert(k.clone(), v).is_some() {
            return Err(Error::config(k, "key given more than once"));
        }
    }

    let file_seed = entries.remove("seed");
    let seed = match (seed, file_seed) {
        (Some(s), _) => s,
        (None, Some(s)) => parse_value("seed", &s)?,
        (None, None) => return Err(Error::config("seed", "missing required key")),
    };
    let mut cfg = RunConfig::with_seed(seed);
    let mut window_kind: Option<String> = None;
    let mut window_size: Option<String> = None;

    for (key, value) in &entries {
        let (k, v) = (key.as_str(), value.as_str());
        let h = &mut cfg.hyper;
        let l = &mut cfg.loop_cfg;
        let t = &mut cfg.truth;
        let m = &mut cfg.metrics;
        match k {
            "mode" => {
                cfg.mode = match v {
                    "realtime" => ModeKind::Realtime,
                    "batch" => ModeKind::Batch,
                    _ => return Err(Error::config(k, "expected realtime or batch")),
                }
            }
            "stream" => {
                cfg.stream = match v {
                    "open" => StreamRegime::Open,
                    "closed" => StreamRegime::Closed,
                    _ => return Err(Error::config(k, "expected open or closed")),
                }
            }
            "signals" => cfg.signals = parse_list(k, v)?,
            "output_dir" => cfg.output_dir = PathBuf::from(v),
            "window.kind" => window_kind = Some(v.to_string()),
            "window.size" => window_size = Some(v.to_string()),
            "grid.kind" => {
                cfg.grid.kind = match v {
                    "linear" => GridKind::Linear,
                    "geometric" => GridKind::Geometric,
                    _ => return Err(Error::config(k, "expected linear or geometric")),
                }
            }
            "grid.start" => cfg.grid.start = parse_value(k, v)?,
            "grid.stop" => cfg.grid.stop = parse_value(k, v)?,
            "grid.points" => cfg.grid.points = parse_value(k, v)?,
            "model.k_dim" => cfg.k_dim = parse_value(k, v)?,
            "hyper.learning_rate" => h.learning_rate = parse_value(k, v)?,
            "hyper.l2_reg" => h.l2_reg = parse_value(k, v)?,
            "hyper.init_scale" => h.init_scale = parse_value(k, v)?,
            "hyper.adagrad_epsilon" => h.adagrad_epsilon = parse_value(k, v)?,
            "hyper.batch_epochs" => h.batch_epochs = parse_value(k, v)?,
            "loop.n_users" => l.n_users = parse_value(k, v)?,
            "loop.n_items_initial" => l.n_items_initial = parse_value(k, v)?,
            "loop.slate_size" => l.slate_size = parse_value(k, v)?,
            "loop.explore_epsilon" => l.explore_epsilon = parse_value(k, v)?,
            "loop.impressions_per_hour" => l.impressions_per_hour = parse_value(k, v)?,
            "loop.total_impressions" => l.total_impressions = parse_value(k, v)?,
            "loop.candidate_pool" => l.candidate_pool = parse_value(k, v)?,
            "loop.item_view_cap" => l.item_view_cap = parse_value(k, v)?,
            "truth.d_true" => t.d_true = parse_value(k, v)?,
            "truth.vec_scale" => t.vec_scale = parse_value(k, v)?,
            "truth.item_bias_scale" => t.item_bias_scale = parse_value(k, v)?,
            "truth.arrival_rate" => t.arrival_rate = parse_value(k, v)?,
            "metrics.alpha" => m.alpha = parse_value(k, v)?,
            "metrics.sat_frac" => m.sat_frac = parse_value(k, v)?,
            "metrics.min_views" => m.min_views = Some(parse_value(k, v)?),
            "metrics.buckets" => m.buckets = ViewBucketSpec::new(parse_list(k, v)?)?,
            "metrics.norm_bins" => m.norm_bins = parse_value(k, v)?,
            "metrics.unaveraged_learning" => m.unaveraged_learning = parse_bool(k, v)?,
            _ => {
                if let Some(sig) = k.strip_prefix("truth.offset.") {
                    let sig: SignalType = sig.parse().map_err(|_| Error::config(k, "unknown signal"))?;
                    t.signal_offsets.insert(sig, parse_value(k, v)?);
                } else {
                    return Err(Error::config(k, "unknown key"));
                }
            }
        }
    }

    let kind = window_kind.as_deref().unwrap_or(match cfg.window {
        BatchWindow::SimHours(_) => "sim_hours",
        BatchWindow::EventCount(_) => "event_count",
    });
    cfg.window = match kind {
        "sim_hours" => BatchWindow::SimHours(match &window_size {
            Some(s) => parse_value("window.size", s)?,
            None => 6.0,
        }),
        "event_count" => BatchWindow::EventCount(match &window_size {
            Some(s) => parse_value("window.size", s)?,
            None => 1,
        }),
        _ => return Err(Error::config("window.kind", "expected sim_hours or event_count")),
    };

    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = parse_config("seed = 7\n").unwrap();
        assert_eq!(cfg, RunConfig::with_seed(7));
        assert_eq!(cfg.window, BatchWindow::SimHours(6.0));
        assert_eq!(cfg.k_dim, 32);
        assert_eq!(cfg.signals, vec![SignalType::View]);
    }

    #[test]
    fn missing_seed_names_the_field() {
        match parse_config("mode = batch\n") {
            Err(Error::Config { field, .. }) => assert_eq!(field, "seed"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parses_sections_and_comments() {
        let text = "\
# experiment
seed = 3
mode = batch        # trailing comment
window.kind = event_count
window.size = 500
grid.kind = geometric
grid.start = 10
grid.stop = 1000
grid.points = 3
hyper.batch_epochs = 2
loop.explore_epsilon = 0.25
truth.offset.click = -1.5
signals = view, click
metrics.buckets = 0, 10, 100
metrics.unaveraged_learning = true
";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.mode, ModeKind::Batch);
        assert_eq!(cfg.window, BatchWindow::EventCount(500));
        assert_eq!(cfg.checkpoint_grid().unwrap().views(), &[0, 10, 100, 1000]);
        assert_eq!(cfg.hyper.batch_epochs, 2);
        assert_eq!(cfg.loop_cfg.explore_epsilon, 0.25);
        assert_eq!(cfg.truth.signal_offsets[&SignalType::Click], -1.5);
        assert_eq!(cfg.signals, vec![SignalType::View, SignalType::Click]);
        assert_eq!(cfg.metrics.buckets.edges(), &[0, 10, 100]);
        assert!(cfg.metrics.unaveraged_learning);
        assert_eq!(cfg.min_views().unwrap(), 1000);
    }

    #[test]
    fn field_level_errors() {
        let field = |text: &str| match parse_config(text) {
            Err(Error::Config { field, .. }) => field,
            other => panic!("{text}: {other:?}"),
        };
        assert_eq!(field("seed = 1\nbogus = 2\n"), "bogus");
        assert_eq!(field("seed = 1\nhyper.init_scale = 0\n"), "hyper.init_scale");
        assert_eq!(field("seed = 1\nloop.explore_epsilon = 1.5\n"), "loop.explore_epsilon");
        assert_eq!(field("seed = 1\nwindow.size = -2\n"), "window.size");
        assert_eq!(field("seed = 1\nseed = 2\n"), "seed");
        assert_eq!(field("seed = x\n"), "seed");
        assert_eq!(field("seed = 1\nsignals = view, view\n"), "signals");
        assert!(matches!(parse_config("seed 1\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = parse_config("seed = 5\nmode = batch\n").unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
    }
}
