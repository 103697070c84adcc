//! Finite synthetic tasks.
//!
//! A [`World`] holds a set of prompts, one ground-truth answer path per prompt,
//! a deterministic verifier, and for every prompt a finite distribution over
//! privileged contexts. Worlds are immutable once built and are a pure
//! function of their [`WorldSpec`].
//!
//! Build procedure (stream `rng::stream(seed, [TAG_WORLD])`):
//!
//! 1. For every prompt in index order, draw `answer_length` tokens uniformly
//!    from `0..answer_vocab_size`; this is the truth path.
//! 2. If `misleading_context_prob > 0`, then for every prompt in index order
//!    draw uniformly random paths until one differs from the truth path.

use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ConfidenceGrid;
use crate::policy::Trajectory;
use crate::rng::{self, TAG_WORLD};

pub type Token = u16;
pub type AnswerPath = Vec<Token>;

/// Largest number of answer paths a single prompt may have.
pub const MAX_PATHS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptId(pub u32);

impl fmt::Display for PromptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

fn default_one() -> f64 {
    1.0
}

fn default_margin() -> f64 {
    2.0
}

fn default_noise() -> f64 {
    0.5
}

/// Plain-text (TOML) description of a world.
///
/// ```toml
/// num_prompts = 16
/// answer_vocab_size = 4
/// answer_length = 1
/// confidence_levels = 21          # G + 1
/// difficulty_profile = [0.8]      # one value per prompt, or a single value for all
/// context_helpfulness = 1.0       # answer-position in-context bias
/// context_confidence_bias = 4.0   # confidence-position in-context bias
/// seed = 7
/// helpful_context_prob = 1.0      # context reveals the full truth path
/// feedback_context_prob = 0.0     # context reveals a truth prefix only
/// feedback_prefix_len = 0
/// misleading_context_prob = 0.0   # context demonstrates a wrong path
/// # prompt_weights = [...]        # optional, defaults to uniform
/// prompt_id_offset = 0
/// base_truth_margin = 2.0         # truth logit is margin * (1 - difficulty)
/// base_noise_scale = 0.5          # logit noise sd is scale * difficulty
/// ```
///
/// Context probability left over after the three kinds above goes to an empty
/// (kind `None`) context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub num_prompts: usize,
    pub answer_vocab_size: usize,
    pub answer_length: usize,
    pub confidence_levels: usize,
    pub difficulty_profile: Vec<f64>,
    pub context_helpfulness: f64,
    pub context_confidence_bias: f64,
    pub seed: u64,
    #[serde(default = "default_one")]
    pub helpful_context_prob: f64,
    #[serde(default)]
    pub feedback_context_prob: f64,
    #[serde(default)]
    pub feedback_prefix_len: usize,
    #[serde(default)]
    pub misleading_context_prob: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_weights: Option<Vec<f64>>,
    #[serde(default)]
    pub prompt_id_offset: u32,
    #[serde(default = "default_margin")]
    pub base_truth_margin: f64,
    #[serde(default = "default_noise")]
    pub base_noise_scale: f64,
}

impl WorldSpec {
    /// Small world with every knob at its default; handy in tests.
    pub fn small(num_prompts: usize, vocab: usize, answer_length: usize, seed: u64) -> Self {
        Self {
            num_prompts,
            answer_vocab_size: vocab,
            answer_length,
            confidence_levels: 21,
            difficulty_profile: vec![0.5],
            context_helpfulness: 0.0,
            context_confidence_bias: 0.0,
            seed,
            helpful_context_prob: 1.0,
            feedback_context_prob: 0.0,
            feedback_prefix_len: 0,
            misleading_context_prob: 0.0,
            prompt_weights: None,
            prompt_id_offset: 0,
            base_truth_margin: default_margin(),
            base_noise_scale: default_noise(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: Self = toml::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn num_paths(&self) -> usize {
        self.answer_vocab_size.pow(self.answer_length as u32)
    }

    pub fn difficulty(&self, index: usize) -> f64 {
        if self.difficulty_profile.len() == 1 {
            self.difficulty_profile[0]
        } else {
            self.difficulty_profile[index]
        }
    }

    fn none_context_prob(&self) -> f64 {
        (1.0 - self.helpful_context_prob - self.feedback_context_prob - self.misleading_context_prob)
            .max(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.num_prompts == 0 {
            return bad("num_prompts must be at least 1".into());
        }
        if !(2..=16).contains(&self.answer_vocab_size) {
            return bad(format!("answer_vocab_size {} not in 2..=16", self.answer_vocab_size));
        }
        if !(1..=3).contains(&self.answer_length) {
            return bad(format!("answer_length {} not in 1..=3", self.answer_length));
        }
        if self.num_paths() > MAX_PATHS {
            return bad(format!("{} answer paths exceed the enumeration limit {MAX_PATHS}", self.num_paths()));
        }
        if self.confidence_levels < 2 {
            return bad("confidence grid needs G >= 1 (at least 2 levels)".into());
        }
        let n = self.difficulty_profile.len();
        if n != 1 && n != self.num_prompts {
            return bad(format!("difficulty_profile has {n} entries for {} prompts", self.num_prompts));
        }
        if self.difficulty_profile.iter().any(|d| !(0.0..=1.0).contains(d)) {
            return bad("difficulty values must lie in [0, 1]".into());
        }
        for (name, beta) in [
            ("context_helpfulness", self.context_helpfulness),
            ("context_confidence_bias", self.context_confidence_bias),
        ] {
            if !beta.is_finite() || beta < 0.0 {
                return bad(format!("{name} must be finite and >= 0"));
            }
        }
        let probs = [
            self.helpful_context_prob,
            self.feedback_context_prob,
            self.misleading_context_prob,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || probs.iter().sum::<f64>() > 1.0 + 1e-12 {
            return bad("context probabilities must lie in [0, 1] and sum to at most 1".into());
        }
        if self.feedback_context_prob > 0.0 && self.feedback_prefix_len >= self.answer_length {
            return bad("feedback_prefix_len must be shorter than answer_length".into());
        }
        if let Some(w) = &self.prompt_weights {
            if w.len() != self.num_prompts || w.iter().any(|x| !x.is_finite() || *x <= 0.0) {
                return bad("prompt_weights needs one positive weight per prompt".into());
            }
        }
        if !self.base_truth_margin.is_finite() || !self.base_noise_scale.is_finite() || self.base_noise_scale < 0.0 {
            return bad("base logit knobs must be finite, noise scale >= 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ContextKind {
    None,
    Demonstration,
    SuccessfulRollout,
    Feedback,
}

/// Evidence available to the teacher but never to the deployed student.
///
/// `demonstrated_path` may be shorter than the answer length for
/// [`ContextKind::Feedback`], in which case only that prefix is revealed.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PrivilegedContext {
    pub kind: ContextKind,
    pub demonstrated_path: Option<AnswerPath>,
    pub declared_confidence: Option<usize>,
}

impl PrivilegedContext {
    pub fn none() -> Self {
        Self {
            kind: ContextKind::None,
            demonstrated_path: None,
            declared_confidence: None,
        }
    }

    pub fn is_none(&self) -> bool {
        self.kind == ContextKind::None
    }

    pub fn validate(&self, grid: &ConfidenceGrid) -> Result<()> {
        if self.is_none() && (self.demonstrated_path.is_some() || self.declared_confidence.is_some()) {
            return Err(Error::InvalidContext("kind None carries no path or confidence".into()));
        }
        if let Some(level) = self.declared_confidence {
            if level >= grid.len() {
                return Err(Error::InvalidContext(format!("declared level {level} is off the grid")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedContext {
    pub context: PrivilegedContext,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    spec: WorldSpec,
    prompts: Vec<PromptId>,
    truth: Vec<AnswerPath>,
    contexts: Vec<Vec<WeightedContext>>,
    weights: Vec<f64>,
    grid: ConfidenceGrid,
}

/// Every answer path of `length` tokens over `vocab`, in lexicographic order.
pub fn all_paths(vocab: usize, length: usize) -> Vec<AnswerPath> {
    let mut paths: Vec<AnswerPath> = vec![Vec::new()];
    for _ in 0..length {
        paths = paths
            .into_iter()
            .flat_map(|p| {
                (0..vocab as Token).map(move |t| {
                    let mut q = p.clone();
                    q.push(t);
                    q
                })
            })
            .collect();
    }
    paths
}

pub fn build_world(spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    let grid = ConfidenceGrid::new(spec.confidence_levels - 1)
        .ok_or_else(|| Error::InvalidSpec("G must be >= 1".into()))?;
    let mut rng = rng::stream(spec.seed, &[TAG_WORLD]);
    let vocab = spec.answer_vocab_size;

    let truth: Vec<AnswerPath> = (0..spec.num_prompts)
        .map(|_| {
            (0..spec.answer_length)
                .map(|_| rng.random_range(0..vocab) as Token)
                .collect()
        })
        .collect();

    let misleading: Vec<Option<AnswerPath>> = truth
        .iter()
        .map(|t| {
            (spec.misleading_context_prob > 0.0).then(|| loop {
                let p: AnswerPath = (0..spec.answer_length)
                    .map(|_| rng.random_range(0..vocab) as Token)
                    .collect();
                if &p != t {
                    break p;
                }
            })
        })
        .collect();

    let top = grid.intervals();
    let contexts = truth
        .iter()
        .zip(&misleading)
        .map(|(t, m)| {
            let mut support = Vec::new();
            let mut push = |context, prob: f64| {
                if prob > 0.0 {
                    support.push(WeightedContext { context, prob });
                }
            };
            push(
                PrivilegedContext {
                    kind: ContextKind::Demonstration,
                    demonstrated_path: Some(t.clone()),
                    declared_confidence: Some(top),
                },
                spec.helpful_context_prob,
            );
            push(
                PrivilegedContext {
                    kind: ContextKind::Feedback,
                    demonstrated_path: Some(t[..spec.feedback_prefix_len].to_vec()),
                    declared_confidence: Some(top),
                },
                spec.feedback_context_prob,
            );
            if let Some(m) = m {
                push(
                    PrivilegedContext {
                        kind: ContextKind::Demonstration,
                        demonstrated_path: Some(m.clone()),
                        declared_confidence: Some(top),
                    },
                    spec.misleading_context_prob,
                );
            }
            push(PrivilegedContext::none(), spec.none_context_prob());
            support
        })
        .collect();

    let raw = spec
        .prompt_weights
        .clone()
        .unwrap_or_else(|| vec![1.0; spec.num_prompts]);
    let total: f64 = raw.iter().sum();
    let weights = raw.iter().map(|w| w / total).collect();

    let prompts = (0..spec.num_prompts)
        .map(|i| PromptId(spec.prompt_id_offset + i as u32))
        .collect();

    Ok(World {
        spec: spec.clone(),
        prompts,
        truth,
        contexts,
        weights,
        grid,
    })
}

impl World {
    pub fn spec(&self) -> &WorldSpec {
        &self.spec
    }

    pub fn prompts(&self) -> &[PromptId] {
        &self.prompts
    }

    pub fn grid(&self) -> ConfidenceGrid {
        self.grid
    }

    pub fn vocab(&self) -> usize {
        self.spec.answer_vocab_size
    }

    pub fn answer_length(&self) -> usize {
        self.spec.answer_length
    }

    /// Normalized prompt weights, aligned with [`World::prompts`].
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn index_of(&self, x: PromptId) -> Result<usize> {
        let i = x.0.checked_sub(self.spec.prompt_id_offset).ok_or(Error::UnknownPrompt(x))? as usize;
        if i < self.prompts.len() {
            Ok(i)
        } else {
            Err(Error::UnknownPrompt(x))
        }
    }

    pub fn weight(&self, x: PromptId) -> Result<f64> {
        Ok(self.weights[self.index_of(x)?])
    }

    pub fn truth(&self, x: PromptId) -> Result<&AnswerPath> {
        Ok(&self.truth[self.index_of(x)?])
    }

    /// Support of the privileged-context distribution for `x`.
    pub fn contexts(&self, x: PromptId) -> Result<&[WeightedContext]> {
        Ok(&self.contexts[self.index_of(x)?])
    }

    /// Ancestral draw from the context distribution of `x`.
    pub fn sample_context(&self, x: PromptId, rng: &mut impl Rng) -> Result<&PrivilegedContext> {
        let support = self.contexts(x)?;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for wc in support {
            acc += wc.prob;
            if u < acc {
                return Ok(&wc.context);
            }
        }
        Ok(&support.last().expect("context support is never empty").context)
    }

    /// Replaces the prompt weights (normalized internally).
    pub fn with_weights(mut self, weights: &[f64]) -> Result<Self> {
        if weights.len() != self.prompts.len() || weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(Error::InvalidSpec("prompt weights must be positive, one per prompt".into()));
        }
        let total: f64 = weights.iter().sum();
        self.weights = weights.iter().map(|w| w / total).collect();
        self.spec.prompt_weights = Some(weights.to_vec());
        Ok(self)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn check_path(&self, x: PromptId, path: &[Token]) -> Result<()> {
        if path.len() != self.answer_length() {
            return Err(Error::InvalidPath {
                prompt: x,
                reason: format!("length {} != {}", path.len(), self.answer_length()),
            });
        }
        if let Some(t) = path.iter().find(|&&t| t as usize >= self.vocab()) {
            return Err(Error::InvalidPath {
                prompt: x,
                reason: format!("token {t} outside vocabulary of {}", self.vocab()),
            });
        }
        Ok(())
    }
}

/// The verifier R(x, a): 1 iff `path` is the truth path of `x`.
pub fn verify(world: &World, x: PromptId, path: &[Token]) -> Result<bool> {
    let truth = world.truth(x)?;
    world.check_path(x, path)?;
    Ok(truth.as_slice() == path)
}

/// Ground truth injected as a golden demonstration with full declared confidence.
pub fn build_sdft_context(world: &World, x: PromptId) -> Result<PrivilegedContext> {
    Ok(PrivilegedContext {
        kind: ContextKind::Demonstration,
        demonstrated_path: Some(world.truth(x)?.clone()),
        declared_confidence: Some(world.grid().intervals()),
    })
}

/// First verified rollout in `batch`, carrying its own confidence level.
pub fn build_sdpo_context(
    world: &World,
    x: PromptId,
    batch: &[Trajectory],
) -> Result<Option<PrivilegedContext>> {
    for y in batch {
        if verify(world, x, &y.answer_path)? {
            return Ok(Some(PrivilegedContext {
                kind: ContextKind::SuccessfulRollout,
                demonstrated_path: Some(y.answer_path.clone()),
                declared_confidence: Some(y.confidence_token),
            }));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn traj(path: &[Token], level: usize, grid: &ConfidenceGrid) -> Trajectory {
        Trajectory {
            answer_path: path.to_vec(),
            confidence_token: level,
            log_prob: None,
            val_c: grid.value(level),
        }
    }

    #[test]
    fn same_seed_same_world() {
        let spec = WorldSpec::small(8, 4, 2, 7);
        assert_eq!(build_world(&spec).unwrap(), build_world(&spec).unwrap());
    }

    #[test]
    fn binary_single_token_world_has_two_paths() {
        let spec = WorldSpec::small(3, 2, 1, 1);
        assert_eq!(spec.num_paths(), 2);
        assert_eq!(all_paths(2, 1), vec![vec![0], vec![1]]);
    }

    #[test]
    fn truth_paths_match_reseeded_oracle() {
        let spec = WorldSpec::small(8, 4, 2, 11);
        let world = build_world(&spec).unwrap();
        assert_eq!(all_paths(4, 2).len(), 16);
        let mut oracle = rng::stream(11, &[TAG_WORLD]);
        for &x in world.prompts() {
            let expected: Vec<Token> = (0..2).map(|_| oracle.random_range(0..4usize) as Token).collect();
            assert_eq!(world.truth(x).unwrap(), &expected);
        }
    }

    #[test]
    fn verifier_accepts_exactly_one_path() {
        let world = build_world(&WorldSpec::small(5, 3, 2, 3)).unwrap();
        let paths = all_paths(3, 2);
        for &x in world.prompts() {
            let hits = paths.iter().filter(|p| verify(&world, x, p).unwrap()).count();
            assert_eq!(hits, 1);
            assert!(verify(&world, x, world.truth(x).unwrap()).unwrap());
            assert_eq!(hits as f64 / paths.len() as f64, 1.0 / 9.0);
        }
        assert!(matches!(verify(&world, PromptId(99), &[0, 0]), Err(Error::UnknownPrompt(_))));
        assert!(verify(&world, PromptId(0), &[0]).is_err());
        assert!(verify(&world, PromptId(0), &[0, 7]).is_err());
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = WorldSpec::small(2, 4, 1, 0);
        s.confidence_levels = 1;
        assert!(build_world(&s).is_err());
        let mut s = WorldSpec::small(2, 17, 1, 0);
        assert!(build_world(&s).is_err());
        s.answer_vocab_size = 4;
        s.answer_length = 4;
        assert!(build_world(&s).is_err());
        let mut s = WorldSpec::small(2, 4, 1, 0);
        s.helpful_context_prob = 0.8;
        s.misleading_context_prob = 0.5;
        assert!(build_world(&s).is_err());
        let mut s = WorldSpec::small(3, 4, 1, 0);
        s.difficulty_profile = vec![0.1, 0.2];
        assert!(build_world(&s).is_err());
    }

    #[test]
    fn context_distributions_normalize() {
        let mut s = WorldSpec::small(6, 4, 3, 5);
        s.helpful_context_prob = 0.3;
        s.feedback_context_prob = 0.2;
        s.feedback_prefix_len = 1;
        s.misleading_context_prob = 0.1;
        let world = build_world(&s).unwrap();
        for &x in world.prompts() {
            let support = world.contexts(x).unwrap();
            assert_eq!(support.len(), 4);
            let total: f64 = support.iter().map(|c| c.prob).sum();
            assert!((total - 1.0).abs() < 1e-12);
            for wc in support {
                wc.context.validate(&world.grid()).unwrap();
            }
            let mis = &support[2].context;
            assert_ne!(mis.demonstrated_path.as_ref(), Some(world.truth(x).unwrap()));
        }
    }

    #[test]
    fn context_sampler_frequencies_pass_chi_square() {
        let mut s = WorldSpec::small(1, 4, 2, 9);
        s.helpful_context_prob = 0.5;
        s.feedback_context_prob = 0.2;
        s.feedback_prefix_len = 1;
        s.misleading_context_prob = 0.1;
        let world = build_world(&s).unwrap();
        let x = world.prompts()[0];
        let support = world.contexts(x).unwrap();
        let mut counts = vec![0usize; support.len()];
        let mut rng = rng::stream(1, &[42]);
        let draws = 100_000;
        for _ in 0..draws {
            let c = world.sample_context(x, &mut rng).unwrap();
            let i = support.iter().position(|wc| &wc.context == c).unwrap();
            counts[i] += 1;
        }
        let chi2: f64 = counts
            .iter()
            .zip(support)
            .map(|(&o, wc)| {
                let e = wc.prob * draws as f64;
                (o as f64 - e).powi(2) / e
            })
            .sum();
        // 3 degrees of freedom, p = 0.001 critical value
        assert!(chi2 < 16.27, "chi2 = {chi2}");
    }

    #[test]
    fn sdft_context_declares_full_confidence_and_verifies() {
        let world = build_world(&WorldSpec::small(4, 4, 2, 2)).unwrap();
        for &x in world.prompts() {
            let z = build_sdft_context(&world, x).unwrap();
            assert_eq!(z.kind, ContextKind::Demonstration);
            assert_eq!(world.grid().value(z.declared_confidence.unwrap()), 1.0);
            let path = z.demonstrated_path.unwrap();
            assert_eq!(&path, world.truth(x).unwrap());
            assert!(verify(&world, x, &path).unwrap());
        }
    }

    #[test]
    fn sdpo_context_picks_first_verified_rollout() {
        let world = build_world(&WorldSpec::small(2, 4, 1, 4)).unwrap();
        let grid = world.grid();
        let x = world.prompts()[0];
        let truth = world.truth(x).unwrap().clone();
        let wrong = vec![(truth[0] + 1) % 4];

        assert_eq!(build_sdpo_context(&world, x, &[traj(&wrong, 20, &grid)]).unwrap(), None);
        assert_eq!(build_sdpo_context(&world, x, &[]).unwrap(), None);

        let batch = [traj(&wrong, 20, &grid), traj(&truth, 16, &grid)];
        let z = build_sdpo_context(&world, x, &batch).unwrap().unwrap();
        assert_eq!(z.kind, ContextKind::SuccessfulRollout);
        assert_eq!(z.demonstrated_path.as_ref(), Some(&truth));
        assert_eq!(grid.value(z.declared_confidence.unwrap()), 0.8);

        // all-correct batch: index 0 wins, identified by its distinct confidence
        let batch: Vec<_> = (0..8).map(|k| traj(&truth, 10 + k, &grid)).collect();
        let z = build_sdpo_context(&world, x, &batch).unwrap().unwrap();
        assert_eq!(z.declared_confidence, Some(10));
    }

    #[test]
    fn spec_toml_round_trip() {
        let mut s = WorldSpec::small(3, 4, 2, 8);
        s.prompt_weights = Some(vec![1.0, 2.0, 3.0]);
        let text = s.to_toml_string().unwrap();
        assert_eq!(WorldSpec::from_toml_str(&text).unwrap(), s);
        assert!(WorldSpec::from_toml_str("num_prompts = 2\nbogus = 1\n").is_err());
    }

    #[test]
    fn world_exports_json() {
        let world = build_world(&WorldSpec::small(2, 2, 1, 0)).unwrap();
        let json = world.to_json().unwrap();
        let back: World = serde_json::from_str(&json).unwrap();
        assert_eq!(back, world);
    }

    #[test]
    fn weights_are_normalized() {
        let world = build_world(&WorldSpec::small(4, 2, 1, 0))
            .unwrap()
            .with_weights(&[1.0, 1.0, 2.0, 4.0])
            .unwrap();
        assert_eq!(world.weights(), &[0.125, 0.125, 0.25, 0.5]);
    }
}
