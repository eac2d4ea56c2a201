//! Policy providers and verifiers that stand in for a language model and a
//! rule-based checker.
//!
//! Providers are immutable once built. Randomness either comes from the
//! caller's RNG stream or is derived from a hash of the dialogue state, so
//! repeated calls with the same inputs are bit-identical.

mod gridworld;
mod paraphrase;
mod planted;
mod token_matrix;

pub use gridworld::{GridSpec, GridWorld};
pub use paraphrase::{ParaphraseCluster, ParaphraseSpec};
pub use planted::{PlantedTree, PlantedTreeSpec};
pub use token_matrix::{TokenMatrix, TokenMatrixProvider};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{AmbientVector, GeoError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),
    #[error("requested {requested} candidates but the environment has branching {branching}")]
    Branching { requested: usize, branching: usize },
    #[error("state at depth {0} cannot be expanded")]
    BeyondDepth(usize),
    #[error("malformed action label {0:?}")]
    MalformedAction(Vec<u32>),
    #[error(transparent)]
    Geometry(#[from] GeoError),
}

/// Opaque token-id sequence identifying a sampled action.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionLabel(pub Vec<u32>);

impl ActionLabel {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A dialogue prefix: the actions taken since the prompt.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct DialogueState {
    actions: Vec<ActionLabel>,
}

impl DialogueState {
    pub fn root() -> Self {
        Self::default()
    }

    pub fn new(actions: Vec<ActionLabel>) -> Self {
        Self { actions }
    }

    pub fn actions(&self) -> &[ActionLabel] {
        &self.actions
    }

    pub fn depth(&self) -> usize {
        self.actions.len()
    }

    pub fn child(&self, action: ActionLabel) -> Self {
        let mut actions = self.actions.clone();
        actions.push(action);
        Self { actions }
    }

    /// Total token count over all actions.
    pub fn action_length(&self) -> usize {
        self.actions.iter().map(ActionLabel::len).sum()
    }

    pub fn last_two_identical(&self) -> bool {
        match self.actions.as_slice() {
            [.., a, b] => a == b,
            _ => false,
        }
    }
}

/// One sampled completion.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub action: ActionLabel,
    pub token_logprobs: Vec<f64>,
    pub pooled: AmbientVector,
}

impl Candidate {
    pub fn cumulative_logprob(&self) -> f64 {
        self.token_logprobs.iter().sum()
    }
}

pub trait PolicyProvider: Send + Sync {
    fn hidden_dim(&self) -> usize;

    /// Pooled representation of the prompt itself.
    fn root_pooled(&self) -> AmbientVector;

    /// Samples `branching` candidate continuations of `state`.
    fn sample(
        &self,
        state: &DialogueState,
        branching: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<Candidate>, EnvError>;

    fn answer_extracted(&self, state: &DialogueState) -> bool;
}

pub trait Verifier: Send + Sync {
    /// Reward in `[0, 1]` for a terminal state.
    fn verify(&self, state: &DialogueState) -> Result<f64, EnvError>;
}

/// Deterministic RNG keyed by a seed and a sequence of words.
pub(crate) fn keyed_rng(seed: u64, key: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix64(seed ^ 0x6a09_e667_f3bc_c908);
    for &k in key {
        h = splitmix64(h ^ k.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    }
    ChaCha8Rng::seed_from_u64(h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Standard normal via Box-Muller; keeps the dependency surface to `rand`.
pub(crate) fn standard_normal(rng: &mut impl rand::Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Uniform direction on the unit sphere, restricted to coordinates `from..dim`.
pub(crate) fn random_unit(rng: &mut impl rand::Rng, dim: usize, from: usize) -> Vec<f64> {
    loop {
        let mut v = vec![0.0; dim];
        for x in v.iter_mut().skip(from) {
            *x = standard_normal(rng);
        }
        let n = crate::geometry::l2_norm(&v);
        if n > 1e-9 {
            v.iter_mut().for_each(|x| *x /= n);
            return v;
        }
    }
}
