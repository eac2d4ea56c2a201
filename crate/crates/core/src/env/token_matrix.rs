//! Fixture provider that routes pooled vectors through token-level hidden
//! matrices, so the masked mean-pooling path is exercised end to end.

use rand::{Rng, RngCore};

use super::{keyed_rng, Candidate, DialogueState, EnvError, PolicyProvider};
use crate::geometry::{mean_pool, AmbientVector};

/// Hidden states of one candidate: `rows.len() == mask.len()`, padding rows
/// carry `mask == false`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    pub rows: Vec<Vec<f64>>,
    pub mask: Vec<bool>,
}

/// Wraps a provider and re-derives each candidate's pooled vector from a
/// synthetic `L x H` matrix whose masked mean is the inner pooled vector.
#[derive(Debug, Clone)]
pub struct TokenMatrixProvider<P> {
    inner: P,
    seed: u64,
}

impl<P: PolicyProvider> TokenMatrixProvider<P> {
    pub fn new(inner: P, seed: u64) -> Self {
        Self { inner, seed }
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }

    /// Builds the matrix for a target pooled vector.
    pub fn token_matrix(&self, key: &[u64], target: &AmbientVector) -> TokenMatrix {
        let mut rng = keyed_rng(self.seed, key);
        let h = target.dim();
        let real = rng.gen_range(1..=4usize);
        let pad = rng.gen_range(0..=3usize);
        let mut rows: Vec<Vec<f64>> = (0..real - 1)
            .map(|_| target.as_slice().iter().map(|t| t + rng.gen_range(-1.0..1.0)).collect())
            .collect();
        // last real row makes the masked sum exact: sum = real * target
        let last: Vec<f64> = (0..h)
            .map(|j| real as f64 * target.as_slice()[j] - rows.iter().map(|r| r[j]).sum::<f64>())
            .collect();
        rows.push(last);
        let mut mask = vec![true; real];
        for _ in 0..pad {
            rows.push((0..h).map(|_| rng.gen_range(50.0..100.0)).collect());
            mask.push(false);
        }
        TokenMatrix { rows, mask }
    }

    pub fn sample_with_matrices(
        &self,
        state: &DialogueState,
        branching: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<(Candidate, TokenMatrix)>, EnvError> {
        let base: Vec<u64> = state.actions().iter().flat_map(|a| a.0.iter().map(|&x| x as u64)).collect();
        self.inner
            .sample(state, branching, rng)?
            .into_iter()
            .enumerate()
            .map(|(k, mut c)| {
                let mut key = base.clone();
                key.push(u64::MAX - k as u64);
                let m = self.token_matrix(&key, &c.pooled);
                c.pooled = mean_pool(&m.rows, &m.mask)?;
                Ok((c, m))
            })
            .collect()
    }
}

impl<P: PolicyProvider> PolicyProvider for TokenMatrixProvider<P> {
    fn hidden_dim(&self) -> usize {
        self.inner.hidden_dim()
    }

    fn root_pooled(&self) -> AmbientVector {
        self.inner.root_pooled()
    }

    fn sample(
        &self,
        state: &DialogueState,
        branching: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<Candidate>, EnvError> {
        Ok(self.sample_with_matrices(state, branching, rng)?.into_iter().map(|(c, _)| c).collect())
    }

    fn answer_extracted(&self, state: &DialogueState) -> bool {
        self.inner.answer_extracted(state)
    }
}
