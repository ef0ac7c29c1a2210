//! Field-aware factorization machine over three fields (user, item,
//! context) with one active feature per field, trained by logistic-loss SGD
//! with per-coordinate AdaGrad step sizes.
//!
//! The score of an impression `(u, i, c)` is
//!
//! ```text
//! phi = bias + w_u + w_i + w_c
//!     + <v[u, item], v[i, user]> + <v[u, ctx], v[c, user]> + <v[i, ctx], v[c, item]>
//! ```
//!
//! where `v[a, f]` is the latent vector feature `a` uses against field `f`.
//! Parameters of a feature are created the first time the feature is touched.
//! Their initial values depend only on the model seed and the feature, so an
//! untouched feature can be read without mutating the model.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::RunSeed;
use crate::types::{InteractionEvent, ItemId, SignalType, UserId};

pub const NUM_FIELDS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    User,
    Item,
    Context,
}

impl Field {
    pub const ALL: [Field; NUM_FIELDS] = [Field::User, Field::Item, Field::Context];

    pub fn index(self) -> usize {
        self as usize
    }

    fn name(self) -> &'static str {
        match self {
            Field::User => "user",
            Field::Item => "item",
            Field::Context => "context",
        }
    }

    fn prefix(self) -> &'static str {
        match self {
            Field::User => "u",
            Field::Item => "i",
            Field::Context => "c",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Feature {
    pub field: Field,
    pub id: u32,
}

impl Feature {
    pub fn user(id: UserId) -> Self {
        Feature { field: Field::User, id }
    }

    pub fn item(id: ItemId) -> Self {
        Feature { field: Field::Item, id }
    }

    pub fn context(id: u32) -> Self {
        Feature {
            field: Field::Context,
            id,
        }
    }

    fn key(self) -> u64 {
        ((self.field.index() as u64) << 32) | u64::from(self.id)
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.field.prefix(), self.id)
    }
}

impl FromStr for Feature {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (prefix, id) = s.split_once(':').ok_or_else(|| format!("bad feature {s:?}"))?;
        let field = Field::ALL
            .into_iter()
            .find(|f| f.prefix() == prefix)
            .ok_or_else(|| format!("bad field prefix in {s:?}"))?;
        let id = id.parse().map_err(|_| format!("bad feature id in {s:?}"))?;
        Ok(Feature { field, id })
    }
}

/// The three active features of one impression.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Active {
    pub user: UserId,
    pub item: ItemId,
    pub context: u32,
}

impl Active {
    pub fn of(event: &InteractionEvent) -> Self {
        Active {
            user: event.user_id,
            item: event.item_id,
            context: event.context_id(),
        }
    }

    /// Features in field order.
    pub fn features(&self) -> [Feature; NUM_FIELDS] {
        [
            Feature::user(self.user),
            Feature::item(self.item),
            Feature::context(self.context),
        ]
    }
}

/// Field pairs `(a, b)` with `a < b`, in the order gradients are laid out.
const PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub l2_reg: f64,
    pub init_scale: f64,
    pub adagrad_epsilon: f64,
    pub batch_epochs: u32,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            learning_rate: 0.2,
            l2_reg: 2e-5,
            init_scale: 1.0,
            adagrad_epsilon: 1.0,
            batch_epochs: 1,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(
                    format!("hyper.{name}"),
                    "must be a finite positive number",
                ))
            }
        };
        // A zero learning rate is allowed: it freezes the model, which the
        // closed-loop tests use as a control.
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::config("hyper.learning_rate", "must be finite and non-negative"));
        }
        if !(self.l2_reg.is_finite() && self.l2_reg >= 0.0) {
            return Err(Error::config("hyper.l2_reg", "must be finite and non-negative"));
        }
        positive("init_scale", self.init_scale)?;
        positive("adagrad_epsilon", self.adagrad_epsilon)?;
        if self.batch_epochs < 1 {
            return Err(Error::config("hyper.batch_epochs", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct FeatureParams {
    linear: f64,
    linear_acc: f64,
    /// `NUM_FIELDS` blocks of `k_dim`; block `f` is used against field `f`.
    latent: Vec<f64>,
    latent_acc: Vec<f64>,
}

/// Identifies one scalar parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Param {
    Bias,
    Linear(Feature),
    Latent {
        feature: Feature,
        target: Field,
        dim: usize,
    },
}

/// Gradient of the regularized log loss w.r.t. every parameter an impression
/// touches.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub active: Active,
    pub bias: f64,
    /// Indexed by field.
    pub linear: [f64; NUM_FIELDS],
    /// Per pair in `(user,item)`, `(user,ctx)`, `(item,ctx)` order: the
    /// gradient of `v[a, field b]` then of `v[b, field a]`.
    pub latent: Vec<f64>,
    k_dim: usize,
}

impl Gradient {
    /// Flattened `(parameter, gradient)` list.
    pub fn entries(&self) -> Vec<(Param, f64)> {
        let feats = self.active.features();
        let mut out = vec![(Param::Bias, self.bias)];
        for (f, g) in feats.iter().zip(self.linear) {
            out.push((Param::Linear(*f), g));
        }
        let k = self.k_dim;
        for (p, &(a, b)) in PAIRS.iter().enumerate() {
            let block = &self.latent[2 * p * k..2 * (p + 1) * k];
            for d in 0..k {
                out.push((
                    Param::Latent {
                        feature: feats[a],
                        target: Field::ALL[b],
                        dim: d,
                    },
                    block[d],
                ));
                out.push((
                    Param::Latent {
                        feature: feats[b],
                        target: Field::ALL[a],
                        dim: d,
                    },
                    block[k + d],
                ));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FfmModel {
    k_dim: usize,
    seed: RunSeed,
    init_scale: f64,
    bias: f64,
    bias_acc: f64,
    params: HashMap<Feature, FeatureParams>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-log p(y | phi)` computed stably from the logit.
pub fn log_loss(phi: f64, y: f64) -> f64 {
    // log(1 + e^phi) - y * phi
    let softplus = if phi > 0.0 {
        phi + (-phi).exp().ln_1p()
    } else {
        phi.exp().ln_1p()
    };
    softplus - y * phi
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Creates an untrained model. Every latent component of a newly touched
/// feature is drawn uniformly from `[0, init_scale / sqrt(k_dim))`.
pub fn init_model(k_dim: usize, hyper: &Hyperparams, seed: RunSeed) -> Result<FfmModel> {
    if k_dim < 1 {
        return Err(Error::config("model.k_dim", "must be at least 1"));
    }
    hyper.validate()?;
    Ok(FfmModel {
        k_dim,
        seed: seed.derive("ffm-init"),
        init_scale: hyper.init_scale,
        bias: 0.0,
        bias_acc: 0.0,
        params: HashMap::new(),
    })
}

impl FfmModel {
    pub fn k_dim(&self) -> usize {
        self.k_dim
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn contains(&self, feature: Feature) -> bool {
        self.params.contains_key(&feature)
    }

    pub fn feature_count(&self) -> usize {
        self.params.len()
    }

    fn fresh(&self, feature: Feature) -> FeatureParams {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.derive_u64(feature.key()).0);
        let hi = self.init_scale / (self.k_dim as f64).sqrt();
        let n = NUM_FIELDS * self.k_dim;
        FeatureParams {
            linear: 0.0,
            linear_acc: 0.0,
            latent: (0..n).map(|_| rng.gen::<f64>() * hi).collect(),
            latent_acc: vec![0.0; n],
        }
    }

    fn materialize(&mut self, feature: Feature) {
        if !self.params.contains_key(&feature) {
            let p = self.fresh(feature);
            self.params.insert(feature, p);
        }
    }

    /// Latent vector of `feature` against `target`, initialized on demand
    /// without storing it.
    pub fn latent(&self, feature: Feature, target: Field) -> Vec<f64> {
        let range = target.index() * self.k_dim..(target.index() + 1) * self.k_dim;
        match self.params.get(&feature) {
            Some(p) => p.latent[range].to_vec(),
            None => self.fresh(feature).latent[range].to_vec(),
        }
    }

    pub fn linear(&self, feature: Feature) -> f64 {
        self.params.get(&feature).map_or(0.0, |p| p.linear)
    }

    /// The monitored item embedding: the item's vector against the user
    /// field, i.e. the side of the user-item ranking dot product.
    pub fn item_embedding(&self, item: ItemId) -> Vec<f64> {
        self.latent(Feature::item(item), Field::User)
    }

    /// The user's vector against the item field.
    pub fn user_embedding(&self, user: UserId) -> Vec<f64> {
        self.latent(Feature::user(user), Field::Item)
    }

    fn logit_with(&self, active: &Active, mut get: impl FnMut(Feature) -> Option<FeatureParams>) -> f64 {
        let feats = active.features();
        let owned: Vec<Option<FeatureParams>> = feats.iter().map(|f| get(*f)).collect();
        let params: Vec<&FeatureParams> = feats
            .iter()
            .zip(&owned)
            .map(|(f, o)| o.as_ref().unwrap_or_else(|| &self.params[f]))
            .collect();
        let k = self.k_dim;
        let mut phi = self.bias + params.iter().map(|p| p.linear).sum::<f64>();
        for &(a, b) in &PAIRS {
            phi += dot(
                &params[a].latent[b * k..(b + 1) * k],
                &params[b].latent[a * k..(a + 1) * k],
            );
        }
        phi
    }

    /// Raw score before the sigmoid.
    pub fn logit(&self, active: &Active) -> f64 {
        self.logit_with(active, |f| {
            if self.params.contains_key(&f) {
                None
            } else {
                Some(self.fresh(f))
            }
        })
    }

    pub fn predict(&self, user: UserId, item: ItemId, context: u32) -> f64 {
        sigmoid(self.logit(&Active { user, item, context }))
    }

    /// Logits of `user` against every item in `items` under one context,
    /// written to `out`. Equal to calling [`FfmModel::logit`] per item but
    /// looks up the user and context parameters once.
    pub fn score_items(&self, user: UserId, context: u32, items: &[ItemId], out: &mut Vec<f64>) {
        let k = self.k_dim;
        let get = |f: Feature| match self.params.get(&f) {
            Some(p) => std::borrow::Cow::Borrowed(p),
            None => std::borrow::Cow::Owned(self.fresh(f)),
        };
        let pu = get(Feature::user(user));
        let pc = get(Feature::context(context));
        let (u, i, c) = (Field::User.index(), Field::Item.index(), Field::Context.index());
        let block = |p: &FeatureParams, f: usize| -> Vec<f64> { p.latent[f * k..(f + 1) * k].to_vec() };
        let (u_item, u_ctx) = (block(&pu, i), block(&pu, c));
        let (c_user, c_item) = (block(&pc, u), block(&pc, i));
        let base = self.bias + pu.linear + pc.linear + dot(&u_ctx, &c_user);
        out.clear();
        out.extend(items.iter().map(|&item| {
            let pi = get(Feature::item(item));
            base + pi.linear
                + dot(&u_item, &pi.latent[u * k..(u + 1) * k])
                + dot(&pi.latent[c * k..(c + 1) * k], &c_item)
        }));
    }

    /// Log loss plus `l2_reg / 2` times the squared norm of every touched
    /// linear and latent parameter. The bias is not regularized.
    pub fn objective(&self, active: &Active, y: f64, l2_reg: f64) -> f64 {
        let phi = self.logit(active);
        let mut reg = 0.0;
        for f in active.features() {
            let p = self.params.get(&f).cloned().unwrap_or_else(|| self.fresh(f));
            reg += p.linear * p.linear;
        }
        let feats = active.features();
        for &(a, b) in &PAIRS {
            let va = self.latent(feats[a], Field::ALL[b]);
            let vb = self.latent(feats[b], Field::ALL[a]);
            reg += dot(&va, &va) + dot(&vb, &vb);
        }
        log_loss(phi, y) + 0.5 * l2_reg * reg
    }

    /// Analytic gradient of [`FfmModel::objective`]. `sgd_step` applies exactly
    /// this gradient.
    pub fn gradient(&self, active: &Active, y: f64, l2_reg: f64) -> Gradient {
        let k = self.k_dim;
        let feats = active.features();
        let owned: Vec<FeatureParams> = feats
            .iter()
            .map(|f| self.params.get(f).cloned().unwrap_or_else(|| self.fresh(*f)))
            .collect();
        let phi = self.logit(active);
        let g = sigmoid(phi) - y;
        let mut latent = vec![0.0; 6 * k];
        for (p, &(a, b)) in PAIRS.iter().enumerate() {
            let va = &owned[a].latent[b * k..(b + 1) * k];
            let vb = &owned[b].latent[a * k..(a + 1) * k];
            for d in 0..k {
                latent[2 * p * k + d] = g * vb[d] + l2_reg * va[d];
                latent[(2 * p + 1) * k + d] = g * va[d] + l2_reg * vb[d];
            }
        }
        Gradient {
            active: *active,
            bias: g,
            linear: [
                g + l2_reg * owned[0].linear,
                g + l2_reg * owned[1].linear,
                g + l2_reg * owned[2].linear,
            ],
            latent,
            k_dim: k,
        }
    }

    pub fn param(&self, param: Param) -> f64 {
        match param {
            Param::Bias => self.bias,
            Param::Linear(f) => self.linear(f),
            Param::Latent { feature, target, dim } => self.latent(feature, target)[dim],
        }
    }

    /// Overwrites one parameter, materializing its feature if needed.
    pub fn set_param(&mut self, param: Param, value: f64) {
        match param {
            Param::Bias => self.bias = value,
            Param::Linear(f) => {
                self.materialize(f);
                self.params.get_mut(&f).unwrap().linear = value;
            }
            Param::Latent { feature, target, dim } => {
                self.materialize(feature);
                let k = self.k_dim;
                self.params.get_mut(&feature).unwrap().latent[target.index() * k + dim] = value;
            }
        }
    }

    /// One AdaGrad step on the regularized log loss of `event` for `signal`.
    /// Returns the pre-step predicted probability.
    ///
    /// For every touched parameter `p` with gradient `g`: `G_p += g^2`, then
    /// `p -= learning_rate * g / sqrt(G_p + adagrad_epsilon)`.
    pub fn sgd_step(&mut self, event: &InteractionEvent, signal: SignalType, hyper: &Hyperparams) -> Result<f64> {
        let active = Active::of(event);
        let y = f64::from(event.outcomes.get(signal));
        let feats = active.features();
        for f in feats {
            self.materialize(f);
        }
        let divergence = |detail: String| Error::Divergence {
            seq: event.seq_no,
            detail,
        };

        let phi = self.logit_with(&active, |_| None);
        let prob = sigmoid(phi);
        let g = prob - y;
        if !g.is_finite() {
            return Err(divergence(format!("non-finite loss gradient (logit {phi})")));
        }

        let (lr, l2, eps) = (hyper.learning_rate, hyper.l2_reg, hyper.adagrad_epsilon);
        let k = self.k_dim;
        let step = |p: &mut f64, acc: &mut f64, grad: f64| {
            *acc += grad * grad;
            *p -= lr * grad / (*acc + eps).sqrt();
        };

        let [Some(pu), Some(pi), Some(pc)] = self.params.get_disjoint_mut([&feats[0], &feats[1], &feats[2]]) else {
            unreachable!("features were materialized above");
        };
        let mut ps = [pu, pi, pc];

        // Each latent block appears in exactly one pair, so updating pair by
        // pair, coordinate by coordinate, still uses pre-step values.
        for &(a, b) in &PAIRS {
            let (lo, hi) = ps.split_at_mut(b);
            let (pa, pb) = (&mut lo[a], &mut hi[0]);
            for d in 0..k {
                let ia = b * k + d;
                let ib = a * k + d;
                let (va, vb) = (pa.latent[ia], pb.latent[ib]);
                let ga = g * vb + l2 * va;
                let gb = g * va + l2 * vb;
                step(&mut pa.latent[ia], &mut pa.latent_acc[ia], ga);
                step(&mut pb.latent[ib], &mut pb.latent_acc[ib], gb);
            }
        }
        for p in ps.iter_mut() {
            let grad = g + l2 * p.linear;
            step(&mut p.linear, &mut p.linear_acc, grad);
        }
        step(&mut self.bias, &mut self.bias_acc, g);

        for (f, p) in feats.iter().zip(ps.iter()) {
            if !p.linear.is_finite() || p.latent.iter().any(|x| !x.is_finite()) {
                return Err(divergence(format!("non-finite parameter for feature {f}")));
            }
        }
        if !self.bias.is_finite() {
            return Err(divergence("non-finite bias".into()));
        }
        Ok(prob)
    }

    /// Copies the parameters of `features` (and the bias) from `source`.
    /// Used to publish a trained model to a serving copy incrementally.
    pub fn sync_from<'a>(&mut self, source: &FfmModel, features: impl IntoIterator<Item = &'a Feature>) {
        self.bias = source.bias;
        self.bias_acc = source.bias_acc;
        for f in features {
            if let Some(p) = source.params.get(f) {
                match self.params.get_mut(f) {
                    Some(dst) => dst.clone_from(p),
                    None => {
                        self.params.insert(*f, p.clone());
                    }
                }
            }
        }
    }

    pub fn to_checkpoint(&self) -> ModelCheckpoint {
        let mut linear = BTreeMap::new();
        let mut latent = BTreeMap::new();
        let mut linear_acc = BTreeMap::new();
        let mut latent_acc = BTreeMap::new();
        let mut feats: Vec<&Feature> = self.params.keys().collect();
        feats.sort();
        let k = self.k_dim;
        for f in feats {
            let p = &self.params[f];
            linear.insert(f.to_string(), p.linear);
            linear_acc.insert(f.to_string(), p.linear_acc);
            for target in Field::ALL {
                let key = format!("{f}/{}", target.name());
                let r = target.index() * k..(target.index() + 1) * k;
                latent.insert(key.clone(), p.latent[r.clone()].to_vec());
                latent_acc.insert(key, p.latent_acc[r].to_vec());
            }
        }
        ModelCheckpoint {
            k_dim: k,
            init: InitSpec {
                seed: self.seed.0,
                scale: self.init_scale,
            },
            bias: self.bias,
            linear,
            latent,
            accumulators: Accumulators {
                bias: self.bias_acc,
                linear: linear_acc,
                latent: latent_acc,
            },
        }
    }

    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<FfmModel> {
        let bad = |reason: String| Error::Parse {
            source_name: "model checkpoint".into(),
            line: 1,
            reason,
        };
        if ck.k_dim < 1 {
            return Err(bad("k_dim must be at least 1".into()));
        }
        let k = ck.k_dim;
        let mut params: HashMap<Feature, FeatureParams> = HashMap::new();
        for (key, w) in &ck.linear {
            let f: Feature = key.parse().map_err(bad)?;
            let acc = *ck
                .accumulators
                .linear
                .get(key)
                .ok_or_else(|| bad(format!("missing accumulator for {key}")))?;
            params.insert(
                f,
                FeatureParams {
                    linear: *w,
                    linear_acc: acc,
                    latent: vec![0.0; NUM_FIELDS * k],
                    latent_acc: vec![0.0; NUM_FIELDS * k],
                },
            );
        }
        let mut filled: HashMap<Feature, usize> = HashMap::new();
        for (key, v) in &ck.latent {
            let (fs, target) = key
                .split_once('/')
                .ok_or_else(|| bad(format!("bad latent key {key:?}")))?;
            let f: Feature = fs.parse().map_err(bad)?;
            let target = Field::ALL
                .into_iter()
                .find(|t| t.name() == target)
                .ok_or_else(|| bad(format!("bad target field in {key:?}")))?;
            let acc = ck
                .accumulators
                .latent
                .get(key)
                .ok_or_else(|| bad(format!("missing accumulator for {key}")))?;
            if v.len() != k || acc.len() != k {
                return Err(bad(format!("{key}: expected {k} components")));
            }
            let p = params
                .get_mut(&f)
                .ok_or_else(|| bad(format!("latent entry {key} has no linear weight")))?;
            let r = target.index() * k..(target.index() + 1) * k;
            p.latent[r.clone()].copy_from_slice(v);
            p.latent_acc[r].copy_from_slice(acc);
            *filled.entry(f).or_default() += 1;
        }
        if params.keys().any(|f| filled.get(f) != Some(&NUM_FIELDS)) {
            return Err(bad("every feature needs one latent vector per field".into()));
        }
        Ok(FfmModel {
            k_dim: k,
            seed: RunSeed(ck.init.seed),
            init_scale: ck.init.scale,
            bias: ck.bias,
            bias_acc: ck.accumulators.bias,
            params,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    pub seed: u64,
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Accumulators {
    pub bias: f64,
    pub linear: BTreeMap<String, f64>,
    pub latent: BTreeMap<String, Vec<f64>>,
}

/// On-disk model: `{k_dim, init, bias, linear, latent, accumulators}`.
/// Feature keys are `u:<id>`, `i:<id>`, `c:<id>`; latent keys append
/// `/user`, `/item` or `/context`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCheckpoint {
    pub k_dim: usize,
    pub init: InitSpec,
    pub bias: f64,
    pub linear: BTreeMap<String, f64>,
    pub latent: BTreeMap<String, Vec<f64>>,
    pub accumulators: Accumulators,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Outcomes;

    fn event(user: u32, item: u32, view: u8) -> InteractionEvent {
        InteractionEvent {
            seq_no: 0,
            user_id: user,
            item_id: item,
            item_view_count_at_impression: 0,
            outcomes: Outcomes {
                view,
                skip: 1 - view,
                ..Outcomes::default()
            },
            sim_time: 0.5,
        }
    }

    fn model(k: usize, seed: u64) -> FfmModel {
        init_model(k, &Hyperparams::default(), RunSeed(seed)).unwrap()
    }

    #[test]
    fn init_range() {
        let m = model(32, 1);
        let hi = 1.0 / 32f64.sqrt();
        for f in [Feature::user(0), Feature::item(5), Feature::context(3)] {
            for t in Field::ALL {
                let v = m.latent(f, t);
                assert_eq!(v.len(), 32);
                assert!(v.iter().all(|&x| (0.0..hi).contains(&x)));
            }
        }
        assert_eq!(m.linear(Feature::user(0)), 0.0);
        assert_eq!(m.bias(), 0.0);
    }

    #[test]
    fn init_is_seeded() {
        assert_eq!(model(8, 3).item_embedding(4), model(8, 3).item_embedding(4));
        assert_ne!(model(8, 3).item_embedding(4), model(8, 4).item_embedding(4));
        assert_ne!(model(8, 3).item_embedding(4), model(8, 3).item_embedding(5));
    }

    #[test]
    fn rejects_bad_hyperparams() {
        let h = Hyperparams {
            init_scale: 0.0,
            ..Hyperparams::default()
        };
        assert!(matches!(init_model(4, &h, RunSeed(0)), Err(Error::Config { .. })));
        assert!(init_model(0, &Hyperparams::default(), RunSeed(0)).is_err());
    }

    #[test]
    fn zero_model_predicts_half() {
        let mut m = model(4, 0);
        let a = Active {
            user: 1,
            item: 2,
            context: 0,
        };
        for f in a.features() {
            for t in Field::ALL {
                for d in 0..4 {
                    m.set_param(
                        Param::Latent {
                            feature: f,
                            target: t,
                            dim: d,
                        },
                        0.0,
                    );
                }
            }
        }
        assert_eq!(m.predict(1, 2, 0), 0.5);
    }

    #[test]
    fn learning_rate_zero_is_a_no_op() {
        let fresh = model(4, 0);
        let mut m = fresh.clone();
        let h = Hyperparams {
            learning_rate: 0.0,
            ..Hyperparams::default()
        };
        m.sgd_step(&event(1, 2, 1), SignalType::View, &h).unwrap();
        assert_eq!(m.bias(), 0.0);
        for f in Active::of(&event(1, 2, 1)).features() {
            assert_eq!(m.linear(f), 0.0);
            for t in Field::ALL {
                assert_eq!(m.latent(f, t), fresh.latent(f, t));
            }
        }
    }

    #[test]
    fn first_adagrad_step_size() {
        let h = Hyperparams::default();
        let mut m = model(4, 9);
        let ev = event(1, 2, 1);
        let grad = m.gradient(&Active::of(&ev), 1.0, h.l2_reg);
        m.sgd_step(&ev, SignalType::View, &h).unwrap();
        let expected = -h.learning_rate * grad.bias / (grad.bias * grad.bias + h.adagrad_epsilon).sqrt();
        assert!((m.bias() - expected).abs() < 1e-15);
    }

    #[test]
    fn user_update_leaves_other_items_untouched() {
        let mut m = model(4, 2);
        let other = m.item_embedding(99);
        m.sgd_step(&event(1, 2, 1), SignalType::View, &Hyperparams::default())
            .unwrap();
        assert_eq!(m.item_embedding(99), other);
        assert_ne!(m.item_embedding(2), model(4, 2).item_embedding(2));
        assert_eq!(m.feature_count(), 3);
    }

    #[test]
    fn divergence_is_reported_with_seq() {
        let mut m = model(2, 0);
        m.set_param(Param::Bias, f64::NAN);
        let mut ev = event(0, 0, 1);
        ev.seq_no = 17;
        match m.sgd_step(&ev, SignalType::View, &Hyperparams::default()) {
            Err(Error::Divergence { seq, .. }) => assert_eq!(seq, 17),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut m = model(3, 5);
        let h = Hyperparams::default();
        for i in 0..20 {
            m.sgd_step(&event(i % 3, i % 4, (i % 2) as u8), SignalType::View, &h)
                .unwrap();
        }
        let ck = m.to_checkpoint();
        let json = serde_json::to_string(&ck).unwrap();
        let back: ModelCheckpoint = serde_json::from_str(&json).unwrap();
        let restored = FfmModel::from_checkpoint(&back).unwrap();
        assert_eq!(restored, m);
        assert_eq!(serde_json::to_string(&restored.to_checkpoint()).unwrap(), json);
    }

    #[test]
    fn batched_scores_match_logit() {
        let mut m = model(5, 8);
        let h = Hyperparams::default();
        for i in 0..30 {
            m.sgd_step(&event(i % 4, i % 6, (i % 3 == 0) as u8), SignalType::View, &h)
                .unwrap();
        }
        let items = [0, 3, 5, 17, 42];
        let mut out = Vec::new();
        m.score_items(2, 0, &items, &mut out);
        for (&item, &s) in items.iter().zip(&out) {
            let expect = m.logit(&Active {
                user: 2,
                item,
                context: 0,
            });
            assert!((s - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn stable_sigmoid_and_loss() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((log_loss(0.0, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(log_loss(800.0, 1.0).is_finite());
        assert!(log_loss(-800.0, 1.0) > 799.0);
    }
}
