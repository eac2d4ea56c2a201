//! Paraphrase-aliasing environment.
//!
//! Every expansion partitions its `branching` candidates into `dup_groups`
//! semantic groups. A node's *signature* is the sequence of group ids along
//! its path; all nodes sharing a signature are paraphrases of each other and
//! land within `tau / 2` geodesic distance, while distinct signatures are at
//! least `2 tau` apart. One full-depth signature is rewarding.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};

use super::planted::fixed_root_pooled;
use super::{keyed_rng, random_unit, ActionLabel, Candidate, DialogueState, EnvError, PolicyProvider, Verifier};
use crate::geometry::AmbientVector;

#[derive(Debug, Clone, PartialEq)]
pub struct ParaphraseSpec {
    pub branching: usize,
    pub dup_groups: usize,
    pub depth: usize,
    pub hidden_dim: usize,
    /// Tangent-space length of one semantic step.
    pub step_scale: f64,
    /// Clustering threshold the geometry is built around.
    pub tau: f64,
}

impl ParaphraseSpec {
    pub fn new(branching: usize, dup_groups: usize, depth: usize) -> Self {
        Self { branching, dup_groups, depth, hidden_dim: 16, step_scale: 0.5, tau: 0.1 }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::InvalidSpec(m.to_string()));
        if self.branching == 0 || self.depth == 0 {
            return bad("branching and depth must be positive");
        }
        if self.dup_groups == 0 || self.dup_groups > self.branching {
            return bad("dup_groups must lie in 1..=branching");
        }
        if self.hidden_dim < 4 {
            return bad("hidden_dim must be at least 4");
        }
        if !(self.step_scale > 0.0 && self.tau > 0.0) {
            return bad("step_scale and tau must be positive");
        }
        if self.step_scale < self.tau {
            return bad("step_scale must be at least tau to keep groups 2*tau apart");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ParaphraseCluster {
    spec: ParaphraseSpec,
    seed: u64,
    root_pooled: AmbientVector,
    jitter_scale: f64,
    target: Vec<usize>,
}

impl ParaphraseCluster {
    pub fn new(spec: ParaphraseSpec, seed: u64) -> Result<Self, EnvError> {
        spec.validate()?;
        // Lipschitz bound of exp0 from the tangent space into the ball at
        // tangent radius R is max(2, sinh(2R)/R); two jitters differ by at
        // most 2*eps in ambient units, i.e. 2*eps/sqrt(H) in the tangent.
        let r_max = spec.depth as f64 * spec.step_scale + 0.1;
        let lipschitz = (2.0f64).max((2.0 * r_max).sinh() / r_max);
        let jitter_scale = 0.5 * spec.tau * (spec.hidden_dim as f64).sqrt() / (4.0 * lipschitz);
        let mut rng = keyed_rng(seed, &[0x5441_5247]);
        let target = (0..spec.depth).map(|_| rng.gen_range(0..spec.dup_groups)).collect();
        Ok(Self { root_pooled: fixed_root_pooled(spec.hidden_dim), spec, seed, jitter_scale, target })
    }

    pub fn spec(&self) -> &ParaphraseSpec {
        &self.spec
    }

    /// Rewarding signature.
    pub fn target_signature(&self) -> &[usize] {
        &self.target
    }

    /// Labels are `[depth, candidate index, group]`.
    pub fn signature(&self, state: &DialogueState) -> Result<Vec<usize>, EnvError> {
        state
            .actions()
            .iter()
            .enumerate()
            .map(|(d, a)| match a.0.as_slice() {
                [depth, _, g] if *depth as usize == d && (*g as usize) < self.spec.dup_groups => Ok(*g as usize),
                _ => Err(EnvError::MalformedAction(a.0.clone())),
            })
            .collect()
    }

    fn candidate_indices(state: &DialogueState) -> Vec<u64> {
        state.actions().iter().map(|a| a.0.get(1).copied().unwrap_or(0) as u64).collect()
    }

    /// Group id of each candidate produced at `state`, in sampling order.
    pub fn partition(&self, state: &DialogueState) -> Vec<usize> {
        let key: Vec<u64> = std::iter::once(3).chain(Self::candidate_indices(state)).collect();
        let mut rng = keyed_rng(self.seed, &key);
        let mut groups: Vec<usize> = (0..self.spec.dup_groups).collect();
        groups.extend((self.spec.dup_groups..self.spec.branching).map(|_| rng.gen_range(0..self.spec.dup_groups)));
        groups.shuffle(&mut rng);
        groups
    }

    fn center(&self, signature: &[usize]) -> Vec<f64> {
        let h = self.spec.hidden_dim;
        let step = self.spec.step_scale * (h as f64).sqrt();
        let mut v = self.root_pooled.as_slice().to_vec();
        for k in 1..=signature.len() {
            let key: Vec<u64> = std::iter::once(4).chain(signature[..k].iter().map(|&g| g as u64)).collect();
            let dir = random_unit(&mut keyed_rng(self.seed, &key), h, 0);
            for (x, u) in v.iter_mut().zip(&dir) {
                *x += step * u;
            }
        }
        v
    }

    /// Paraphrases share a likelihood: the cumulative logprob of a group
    /// depends only on the signature it extends.
    fn group_logits(&self, signature: &[usize]) -> Vec<f64> {
        let key: Vec<u64> = std::iter::once(7).chain(signature.iter().map(|&g| g as u64)).collect();
        let mut rng = keyed_rng(self.seed, &key);
        (0..self.spec.dup_groups).map(|_| -(0.5 + rng.gen::<f64>())).collect()
    }

    fn pooled(&self, state: &DialogueState, signature: &[usize]) -> AmbientVector {
        let mut v = self.center(signature);
        let key: Vec<u64> = std::iter::once(5).chain(Self::candidate_indices(state)).collect();
        let jitter = random_unit(&mut keyed_rng(self.seed, &key), self.spec.hidden_dim, 0);
        for (x, j) in v.iter_mut().zip(&jitter) {
            *x += self.jitter_scale * j;
        }
        AmbientVector::new(v).expect("finite construction")
    }
}

impl PolicyProvider for ParaphraseCluster {
    fn hidden_dim(&self) -> usize {
        self.spec.hidden_dim
    }

    fn root_pooled(&self) -> AmbientVector {
        self.root_pooled.clone()
    }

    fn sample(
        &self,
        state: &DialogueState,
        branching: usize,
        _rng: &mut dyn RngCore,
    ) -> Result<Vec<Candidate>, EnvError> {
        if branching != self.spec.branching {
            return Err(EnvError::Branching { requested: branching, branching: self.spec.branching });
        }
        let signature = self.signature(state)?;
        let depth = signature.len();
        if depth >= self.spec.depth {
            return Err(EnvError::BeyondDepth(depth));
        }
        let groups = self.partition(state);
        let key: Vec<u64> = std::iter::once(6).chain(Self::candidate_indices(state)).collect();
        let mut rng = keyed_rng(self.seed, &key);
        let group_logit = self.group_logits(&signature);
        groups
            .iter()
            .enumerate()
            .map(|(k, &g)| {
                let action = ActionLabel(vec![depth as u32, k as u32, g as u32]);
                let child = state.child(action.clone());
                let mut sig = signature.clone();
                sig.push(g);
                let cum = group_logit[g] - 0.05 * rng.gen::<f64>();
                Ok(Candidate { action, token_logprobs: vec![cum], pooled: self.pooled(&child, &sig) })
            })
            .collect()
    }

    fn answer_extracted(&self, state: &DialogueState) -> bool {
        state.depth() >= self.spec.depth
    }
}

impl Verifier for ParaphraseCluster {
    fn verify(&self, state: &DialogueState) -> Result<f64, EnvError> {
        Ok(if self.signature(state)? == self.target { 1.0 } else { 0.0 })
    }
}
