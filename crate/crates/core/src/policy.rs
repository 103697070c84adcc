//! Tabular autoregressive softmax policy.
//!
//! One parameter set plays both roles. The student distribution at a prefix is
//! the softmax of the stored row; the teacher adds in-context biases derived
//! from the privileged context:
//!
//! - answer position `t`: `+answer_bias` on the demonstrated token `path[t]`
//!   (only while `t` is inside the revealed path);
//! - confidence position: `+confidence_bias` on the declared grid level.
//!
//! Confidence-position logits are the per-path row plus a confidence head
//! shared by every prompt the policy covers, so that training on one set of
//! prompts moves the confidence prior everywhere.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ConfidenceGrid;
use crate::math::{log_softmax, softmax};
use crate::rng::{self, TAG_POLICY_INIT};
use crate::world::{all_paths, verify, AnswerPath, PrivilegedContext, PromptId, Token, World};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RowKey {
    pub prompt: PromptId,
    pub prefix: Vec<Token>,
}

impl RowKey {
    pub fn new(prompt: PromptId, prefix: &[Token]) -> Self {
        Self {
            prompt,
            prefix: prefix.to_vec(),
        }
    }
}

/// Conditioning state of one next-token distribution.
///
/// Constructed through [`ConditioningKey::new`], which maps a context of kind
/// `None` to the absent context so that equal states compare equal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConditioningKey {
    pub prompt: PromptId,
    pub context: Option<PrivilegedContext>,
    pub prefix: Vec<Token>,
}

impl ConditioningKey {
    pub fn new(prompt: PromptId, context: Option<&PrivilegedContext>, prefix: &[Token]) -> Self {
        Self {
            prompt,
            context: context.filter(|c| !c.is_none()).cloned(),
            prefix: prefix.to_vec(),
        }
    }
}

/// Logit rows plus the shared confidence head. Also used for gradients.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(into = "ParamRepr", from = "ParamRepr")]
pub struct ParamMap {
    pub rows: BTreeMap<RowKey, Vec<f64>>,
    pub confidence_head: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RowEntry {
    prompt: PromptId,
    prefix: Vec<Token>,
    logits: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ParamRepr {
    rows: Vec<RowEntry>,
    confidence_head: Vec<f64>,
}

impl From<ParamMap> for ParamRepr {
    fn from(p: ParamMap) -> Self {
        Self {
            rows: p
                .rows
                .into_iter()
                .map(|(k, logits)| RowEntry {
                    prompt: k.prompt,
                    prefix: k.prefix,
                    logits,
                })
                .collect(),
            confidence_head: p.confidence_head,
        }
    }
}

impl From<ParamRepr> for ParamMap {
    fn from(r: ParamRepr) -> Self {
        Self {
            rows: r
                .rows
                .into_iter()
                .map(|e| (RowKey { prompt: e.prompt, prefix: e.prefix }, e.logits))
                .collect(),
            confidence_head: r.confidence_head,
        }
    }
}

impl ParamMap {
    /// Sparse zero map with a zero head of `head_len` entries.
    pub fn empty(head_len: usize) -> Self {
        Self {
            rows: BTreeMap::new(),
            confidence_head: vec![0.0; head_len],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            rows: self.rows.iter().map(|(k, v)| (k.clone(), vec![0.0; v.len()])).collect(),
            confidence_head: vec![0.0; self.confidence_head.len()],
        }
    }

    pub fn same_keys(&self, other: &Self) -> bool {
        self.confidence_head.len() == other.confidence_head.len()
            && self.rows.len() == other.rows.len()
            && self
                .rows
                .iter()
                .zip(&other.rows)
                .all(|((ka, va), (kb, vb))| ka == kb && va.len() == vb.len())
    }

    /// `self[key] += scale * values`, creating a zero row when absent.
    pub fn accumulate_row(&mut self, key: &RowKey, values: &[f64], scale: f64) {
        let row = self
            .rows
            .entry(key.clone())
            .or_insert_with(|| vec![0.0; values.len()]);
        for (r, v) in row.iter_mut().zip(values) {
            *r += scale * v;
        }
    }

    pub fn accumulate_head(&mut self, values: &[f64], scale: f64) {
        for (h, v) in self.confidence_head.iter_mut().zip(values) {
            *h += scale * v;
        }
    }

    /// `self += scale * other` for every key of `other` (sparse add).
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (k, v) in &other.rows {
            self.accumulate_row(k, v, scale);
        }
        self.accumulate_head(&other.confidence_head, scale);
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.rows.values_mut() {
            v.iter_mut().for_each(|x| *x *= s);
        }
        self.confidence_head.iter_mut().for_each(|x| *x *= s);
    }

    pub fn max_abs(&self) -> f64 {
        self.rows
            .values()
            .flatten()
            .chain(&self.confidence_head)
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.rows.values().flatten().chain(&self.confidence_head).all(|x| x.is_finite())
    }

    /// Largest absolute elementwise difference; `None` when key sets differ.
    pub fn max_abs_diff(&self, other: &Self) -> Option<f64> {
        self.same_keys(other).then(|| {
            self.rows
                .values()
                .flatten()
                .chain(&self.confidence_head)
                .zip(other.rows.values().flatten().chain(&other.confidence_head))
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        })
    }
}

/// Exponential-moving-average update `shadow <- (1 - alpha) shadow + alpha live`.
pub fn ema_update(shadow: &mut ParamMap, live: &ParamMap, alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidConfig(format!("ema alpha {alpha} not in (0, 1]")));
    }
    if !shadow.same_keys(live) {
        return Err(Error::KeyMismatch);
    }
    let keep = 1.0 - alpha;
    let blend = |s: &mut f64, l: f64| *s = keep * *s + alpha * l;
    for (s, l) in shadow.rows.values_mut().zip(live.rows.values()) {
        s.iter_mut().zip(l).for_each(|(s, &l)| blend(s, l));
    }
    shadow
        .confidence_head
        .iter_mut()
        .zip(&live.confidence_head)
        .for_each(|(s, &l)| blend(s, l));
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PromptLayout {
    pub vocab: usize,
    pub answer_len: usize,
    pub answer_bias: f64,
    pub confidence_bias: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Position {
    Answer(usize),
    Confidence,
}

/// A generated sequence `y = (a, c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub answer_path: AnswerPath,
    pub confidence_token: usize,
    /// Log-probability under the generating conditioning; cleared when edited.
    pub log_prob: Option<f64>,
    pub val_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "PolicyRepr", try_from = "PolicyRepr")]
pub struct Policy {
    params: ParamMap,
    layouts: BTreeMap<PromptId, PromptLayout>,
    grid: ConfidenceGrid,
}

#[derive(Serialize, Deserialize)]
struct LayoutEntry {
    prompt: PromptId,
    #[serde(flatten)]
    layout: PromptLayout,
}

#[derive(Serialize, Deserialize)]
struct PolicyRepr {
    grid: ConfidenceGrid,
    layouts: Vec<LayoutEntry>,
    params: ParamMap,
}

impl From<Policy> for PolicyRepr {
    fn from(p: Policy) -> Self {
        Self {
            grid: p.grid,
            layouts: p
                .layouts
                .into_iter()
                .map(|(prompt, layout)| LayoutEntry { prompt, layout })
                .collect(),
            params: p.params,
        }
    }
}

impl TryFrom<PolicyRepr> for Policy {
    type Error = String;

    fn try_from(r: PolicyRepr) -> std::result::Result<Self, String> {
        if r.params.confidence_head.len() != r.grid.len() {
            return Err("confidence head length does not match the grid".into());
        }
        if !r.params.is_finite() {
            return Err("checkpoint contains non-finite logits".into());
        }
        Ok(Self {
            grid: r.grid,
            layouts: r.layouts.into_iter().map(|e| (e.prompt, e.layout)).collect(),
            params: r.params,
        })
    }
}

const CHECKPOINT_FORMAT: &str = "caopd-policy";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    policy: Policy,
}

fn sample_index(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding slack above the cumulative sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

impl Policy {
    pub fn from_world(world: &World) -> Result<Self> {
        Self::from_worlds(&[world])
    }

    /// One policy covering the prompts of several worlds (disjoint ids, same grid).
    pub fn from_worlds(worlds: &[&World]) -> Result<Self> {
        let first = worlds
            .first()
            .ok_or_else(|| Error::InvalidSpec("at least one world is required".into()))?;
        let grid = first.grid();
        let mut policy = Self {
            params: ParamMap::empty(grid.len()),
            layouts: BTreeMap::new(),
            grid,
        };
        for w in worlds {
            policy.add_world(w)?;
        }
        Ok(policy)
    }

    /// Adds base rows for every prompt of `world`.
    ///
    /// Answer rows: `margin * (1 - d)` on the truth token of each position plus
    /// Normal(0, (noise_scale * d)^2) noise on every entry, drawn from
    /// `rng::stream(world seed, [TAG_POLICY_INIT])`. Confidence rows start at 0.
    pub fn add_world(&mut self, world: &World) -> Result<()> {
        if world.grid() != self.grid {
            return Err(Error::InvalidSpec("worlds must share one confidence grid".into()));
        }
        let spec = world.spec();
        let mut rng = rng::stream(spec.seed, &[TAG_POLICY_INIT]);
        let vocab = world.vocab();
        let len = world.answer_length();
        for (i, &x) in world.prompts().iter().enumerate() {
            if self.layouts.contains_key(&x) {
                return Err(Error::InvalidSpec(format!("prompt id {x} is already covered")));
            }
            self.layouts.insert(
                x,
                PromptLayout {
                    vocab,
                    answer_len: len,
                    answer_bias: spec.context_helpfulness,
                    confidence_bias: spec.context_confidence_bias,
                },
            );
            let d = spec.difficulty(i);
            let margin = spec.base_truth_margin * (1.0 - d);
            let sd = spec.base_noise_scale * d;
            let noise = Normal::new(0.0, sd).map_err(|e| Error::InvalidSpec(e.to_string()))?;
            let truth = world.truth(x)?;
            for (t, &target) in truth.iter().enumerate().take(len) {
                for prefix in all_paths(vocab, t) {
                    let logits: Vec<f64> = (0..vocab)
                        .map(|v| {
                            let n = if sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                            n + if v as Token == target { margin } else { 0.0 }
                        })
                        .collect();
                    self.params.rows.insert(RowKey::new(x, &prefix), logits);
                }
            }
            for path in all_paths(vocab, len) {
                self.params.rows.insert(RowKey::new(x, &path), vec![0.0; self.grid.len()]);
            }
        }
        Ok(())
    }

    pub fn params(&self) -> &ParamMap {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamMap {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamMap) -> Result<()> {
        if !self.params.same_keys(&params) {
            return Err(Error::KeyMismatch);
        }
        self.params = params;
        Ok(())
    }

    pub fn grid(&self) -> ConfidenceGrid {
        self.grid
    }

    pub fn prompts(&self) -> impl Iterator<Item = PromptId> + '_ {
        self.layouts.keys().copied()
    }

    pub fn layout(&self, x: PromptId) -> Result<&PromptLayout> {
        self.layouts.get(&x).ok_or(Error::UnknownPrompt(x))
    }

    /// Overrides the in-context bias strengths of every prompt.
    pub fn set_context_biases(&mut self, answer_bias: f64, confidence_bias: f64) {
        for l in self.layouts.values_mut() {
            l.answer_bias = answer_bias;
            l.confidence_bias = confidence_bias;
        }
    }

    pub fn position(&self, x: PromptId, prefix: &[Token]) -> Result<Position> {
        let layout = self.layout(x)?;
        match prefix.len() {
            t if t < layout.answer_len => Ok(Position::Answer(t)),
            t if t == layout.answer_len => Ok(Position::Confidence),
            _ => Err(Error::InvalidPath {
                prompt: x,
                reason: format!("prefix of length {} past the confidence position", prefix.len()),
            }),
        }
    }

    /// Logits at `prefix` using an explicit parameter set (e.g. an EMA shadow).
    pub fn logits_with(
        &self,
        params: &ParamMap,
        x: PromptId,
        context: Option<&PrivilegedContext>,
        prefix: &[Token],
    ) -> Result<Vec<f64>> {
        let layout = *self.layout(x)?;
        let position = self.position(x, prefix)?;
        let row = params.rows.get(&RowKey::new(x, prefix)).ok_or_else(|| Error::MissingRow {
            prompt: x,
            prefix: prefix.to_vec(),
        })?;
        let mut logits = row.clone();
        let context = context.filter(|c| !c.is_none());
        match position {
            Position::Answer(t) => {
                if let Some(path) = context.and_then(|c| c.demonstrated_path.as_ref()) {
                    if let Some(&tok) = path.get(t) {
                        logits[tok as usize] += layout.answer_bias;
                    }
                }
            }
            Position::Confidence => {
                for (z, h) in logits.iter_mut().zip(&params.confidence_head) {
                    *z += h;
                }
                if let Some(level) = context.and_then(|c| c.declared_confidence) {
                    logits[level] += layout.confidence_bias;
                }
            }
        }
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::NonFinite("policy logits"));
        }
        Ok(logits)
    }

    pub fn logits(&self, x: PromptId, context: Option<&PrivilegedContext>, prefix: &[Token]) -> Result<Vec<f64>> {
        self.logits_with(&self.params, x, context, prefix)
    }

    pub fn distribution(&self, x: PromptId, context: Option<&PrivilegedContext>, prefix: &[Token]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x, context, prefix)?))
    }

    pub fn token_distribution(&self, key: &ConditioningKey) -> Result<Vec<f64>> {
        self.distribution(key.prompt, key.context.as_ref(), &key.prefix)
    }

    pub fn sample_trajectory(
        &self,
        x: PromptId,
        context: Option<&PrivilegedContext>,
        rng: &mut impl Rng,
    ) -> Result<Trajectory> {
        self.sample_trajectory_tempered(x, context, 1.0, rng)
    }

    /// Ancestral sampling of `T_a` answer tokens and one confidence token from
    /// `softmax(logits / temperature)`.
    pub fn sample_trajectory_tempered(
        &self,
        x: PromptId,
        context: Option<&PrivilegedContext>,
        temperature: f64,
        rng: &mut impl Rng,
    ) -> Result<Trajectory> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!("temperature {temperature} must be positive")));
        }
        let layout = *self.layout(x)?;
        let mut prefix: Vec<Token> = Vec::with_capacity(layout.answer_len);
        let mut log_prob = 0.0;
        let mut draw = |prefix: &[Token]| -> Result<usize> {
            let logits: Vec<f64> = self
                .logits(x, context, prefix)?
                .into_iter()
                .map(|z| z / temperature)
                .collect();
            let lp = log_softmax(&logits);
            let probs: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
            let i = sample_index(&probs, rng);
            log_prob += lp[i];
            Ok(i)
        };
        for _ in 0..layout.answer_len {
            let tok = draw(&prefix)? as Token;
            prefix.push(tok);
        }
        let level = draw(&prefix)?;
        Ok(Trajectory {
            answer_path: prefix,
            confidence_token: level,
            log_prob: Some(log_prob),
            val_c: self.grid.value(level),
        })
    }

    /// Exact distribution over answer paths (confidence marginalized), in
    /// lexicographic path order.
    pub fn answer_distribution(&self, x: PromptId, context: Option<&PrivilegedContext>) -> Result<Vec<(AnswerPath, f64)>> {
        self.answer_distribution_with(&self.params, x, context)
    }

    pub fn answer_distribution_with(
        &self,
        params: &ParamMap,
        x: PromptId,
        context: Option<&PrivilegedContext>,
    ) -> Result<Vec<(AnswerPath, f64)>> {
        let layout = *self.layout(x)?;
        let mut frontier: Vec<(AnswerPath, f64)> = vec![(Vec::new(), 0.0)];
        for _ in 0..layout.answer_len {
            let mut next = Vec::with_capacity(frontier.len() * layout.vocab);
            for (prefix, lp) in frontier {
                let step = log_softmax(&self.logits_with(params, x, context, &prefix)?);
                for (tok, l) in step.into_iter().enumerate() {
                    let mut p = prefix.clone();
                    p.push(tok as Token);
                    next.push((p, lp + l));
                }
            }
            frontier = next;
        }
        Ok(frontier.into_iter().map(|(p, lp)| (p, lp.exp())).collect())
    }

    /// Every `(a, c)` with its probability; `|vocab|^T_a * (G + 1)` entries.
    pub fn enumerate_trajectories(
        &self,
        x: PromptId,
        context: Option<&PrivilegedContext>,
    ) -> Result<Vec<(Trajectory, f64)>> {
        let mut out = Vec::new();
        for (path, pa) in self.answer_distribution(x, context)? {
            let lpa = pa.ln();
            let conf = log_softmax(&self.logits(x, context, &path)?);
            for (level, lc) in conf.into_iter().enumerate() {
                let lp = lpa + lc;
                out.push((
                    Trajectory {
                        answer_path: path.clone(),
                        confidence_token: level,
                        log_prob: Some(lp),
                        val_c: self.grid.value(level),
                    },
                    lp.exp(),
                ));
            }
        }
        Ok(out)
    }

    /// μ(x) without context, μ_T(x, z) with one.
    pub fn exact_success_prob(&self, world: &World, x: PromptId, context: Option<&PrivilegedContext>) -> Result<f64> {
        let mut mu = 0.0;
        for (path, p) in self.answer_distribution(x, context)? {
            if verify(world, x, &path)? {
                mu += p;
            }
        }
        Ok(mu)
    }

    /// Expected verbalized confidence `E[val(c)]` under the given conditioning.
    pub fn exact_mean_confidence(&self, x: PromptId, context: Option<&PrivilegedContext>) -> Result<f64> {
        let values = self.grid.values();
        let mut total = 0.0;
        for (path, pa) in self.answer_distribution(x, context)? {
            let pc = self.distribution(x, context, &path)?;
            total += pa * pc.iter().zip(&values).map(|(p, v)| p * v).sum::<f64>();
        }
        Ok(total)
    }

    pub fn to_checkpoint_json(&self) -> Result<String> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            policy: self.clone(),
        };
        Ok(serde_json::to_string(&ck)?)
    }

    pub fn from_checkpoint_json(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Inconsistent(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        Ok(ck.policy)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint_json(&std::fs::read_to_string(path)?)
    }
}
