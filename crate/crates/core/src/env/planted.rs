//! Planted-path tree environment.
//!
//! A full `branching`-ary tree of fixed depth with exactly one rewarding leaf.
//! The pooled vector of a node is the root vector plus one step per decision:
//! choosing the planted index at depth `d` steps along a fixed goal
//! direction, any other index steps along a direction orthogonal to it. The
//! planted candidate also receives a log-probability bonus that shrinks as
//! `noise` grows.

use rand::{Rng, RngCore};

use super::{keyed_rng, random_unit, ActionLabel, Candidate, DialogueState, EnvError, PolicyProvider, Verifier};
use crate::geometry::AmbientVector;

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedTreeSpec {
    pub branching: usize,
    pub depth: usize,
    /// Child index chosen at each depth on the rewarding path.
    pub planted_path: Vec<usize>,
    /// 0 makes the planted candidate the unique greedy choice; at 1 and above
    /// its log-probability bonus vanishes.
    pub noise: f64,
    pub hidden_dim: usize,
    /// Tangent-space length of one step after the `1/sqrt(H)` scaling.
    pub step_scale: f64,
}

impl PlantedTreeSpec {
    pub fn new(branching: usize, depth: usize, planted_path: Vec<usize>, noise: f64) -> Self {
        Self { branching, depth, planted_path, noise, hidden_dim: 16, step_scale: 0.4 }
    }

    /// Spec with a planted path drawn from `rng`.
    pub fn random(branching: usize, depth: usize, noise: f64, rng: &mut impl Rng) -> Self {
        let path = (0..depth).map(|_| rng.gen_range(0..branching)).collect();
        Self::new(branching, depth, path, noise)
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::InvalidSpec(m));
        if self.branching == 0 || self.depth == 0 {
            return bad("branching and depth must be positive".into());
        }
        if self.planted_path.len() != self.depth {
            return bad(format!(
                "planted path has length {} but depth is {}",
                self.planted_path.len(),
                self.depth
            ));
        }
        if let Some(&i) = self.planted_path.iter().find(|&&i| i >= self.branching) {
            return bad(format!("planted index {i} out of range for branching {}", self.branching));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise must be finite and non-negative, got {}", self.noise));
        }
        if self.hidden_dim < 2 {
            return bad("hidden_dim must be at least 2".into());
        }
        if !(self.step_scale > 0.0 && self.step_scale.is_finite()) {
            return bad("step_scale must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PlantedTree {
    spec: PlantedTreeSpec,
    seed: u64,
    root_pooled: AmbientVector,
    /// `[depth][index]` step direction for non-planted choices.
    off_dirs: Vec<Vec<Vec<f64>>>,
}

/// Root pooled vector shared by every planted problem of a given width, so a
/// linear value head can transfer across problems.
pub(crate) fn fixed_root_pooled(dim: usize) -> AmbientVector {
    AmbientVector::new((0..dim).map(|i| 0.25 * ((i + 1) as f64).sin()).collect()).expect("finite")
}

impl PlantedTree {
    pub fn new(spec: PlantedTreeSpec, seed: u64) -> Result<Self, EnvError> {
        spec.validate()?;
        let mut rng = keyed_rng(seed, &[0x504c_414e]);
        let off_dirs = (0..spec.depth)
            .map(|_| (0..spec.branching).map(|_| random_unit(&mut rng, spec.hidden_dim, 1)).collect())
            .collect();
        Ok(Self { root_pooled: fixed_root_pooled(spec.hidden_dim), spec, seed, off_dirs })
    }

    pub fn spec(&self) -> &PlantedTreeSpec {
        &self.spec
    }

    pub fn leaf_count(&self) -> usize {
        self.spec.branching.pow(self.spec.depth as u32)
    }

    pub fn action_for(depth: usize, index: usize) -> ActionLabel {
        ActionLabel(vec![depth as u32, index as u32])
    }

    /// Child indices chosen along `state`.
    pub fn indices(&self, state: &DialogueState) -> Result<Vec<usize>, EnvError> {
        state
            .actions()
            .iter()
            .enumerate()
            .map(|(d, a)| match a.0.as_slice() {
                [depth, idx] if *depth as usize == d && (*idx as usize) < self.spec.branching => Ok(*idx as usize),
                _ => Err(EnvError::MalformedAction(a.0.clone())),
            })
            .collect()
    }

    pub fn state_for(indices: &[usize]) -> DialogueState {
        DialogueState::new(indices.iter().enumerate().map(|(d, &i)| Self::action_for(d, i)).collect())
    }

    pub fn planted_state(&self) -> DialogueState {
        Self::state_for(&self.spec.planted_path)
    }

    /// Pooled vector reached by a sequence of child indices.
    pub fn pooled_for(&self, indices: &[usize]) -> AmbientVector {
        let h = self.spec.hidden_dim;
        let step = self.spec.step_scale * (h as f64).sqrt();
        let mut v = self.root_pooled.as_slice().to_vec();
        for (d, &i) in indices.iter().enumerate() {
            if i == self.spec.planted_path[d] {
                v[0] += step;
            } else {
                for (x, u) in v.iter_mut().zip(&self.off_dirs[d][i]) {
                    *x += step * u;
                }
            }
        }
        if self.spec.noise > 0.0 && !indices.is_empty() {
            let key: Vec<u64> = std::iter::once(1).chain(indices.iter().map(|&i| i as u64)).collect();
            let jitter = random_unit(&mut keyed_rng(self.seed, &key), h, 0);
            let mag = 0.05 * self.spec.noise.min(1.0) * step;
            for (x, j) in v.iter_mut().zip(&jitter) {
                *x += mag * j;
            }
        }
        AmbientVector::new(v).expect("finite construction")
    }
}

impl PolicyProvider for PlantedTree {
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
        let prefix = self.indices(state)?;
        let depth = prefix.len();
        if depth >= self.spec.depth {
            return Err(EnvError::BeyondDepth(depth));
        }
        let key: Vec<u64> = std::iter::once(2).chain(prefix.iter().map(|&i| i as u64)).collect();
        let mut rng = keyed_rng(self.seed, &key);
        let margin = (1.0 - self.spec.noise).max(0.0);
        let mut indices = prefix.clone();
        indices.push(0);
        (0..branching)
            .map(|k| {
                let u: f64 = rng.gen();
                let tokens = rng.gen_range(1..=3usize);
                let mut cum = -(1.0 + u);
                if k == self.spec.planted_path[depth] {
                    cum += margin;
                }
                *indices.last_mut().unwrap() = k;
                Ok(Candidate {
                    action: Self::action_for(depth, k),
                    token_logprobs: vec![cum / tokens as f64; tokens],
                    pooled: self.pooled_for(&indices),
                })
            })
            .collect()
    }

    fn answer_extracted(&self, state: &DialogueState) -> bool {
        state.depth() >= self.spec.depth
    }
}

impl Verifier for PlantedTree {
    fn verify(&self, state: &DialogueState) -> Result<f64, EnvError> {
        let idx = self.indices(state)?;
        Ok(if idx == self.spec.planted_path { 1.0 } else { 0.0 })
    }
}
