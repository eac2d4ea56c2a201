//! Deterministic grid navigation with a single goal cell.
//!
//! Every cell is embedded on the diameter through the goal latent: a cell at
//! Manhattan distance `m` from the goal sits at signed geodesic position
//! `kappa * (m_start - m)` from the origin, so its geodesic distance to the
//! goal latent is exactly `kappa * m` and the start cell is the origin.

use rand::RngCore;

use super::{ActionLabel, Candidate, DialogueState, EnvError, PolicyProvider, Verifier};
use crate::geometry::{AmbientVector, BallPoint, GeoError};

const MOVES: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub goal: (usize, usize),
    pub start: (usize, usize),
    /// Geodesic length of one Manhattan step.
    pub kappa: f64,
    pub hidden_dim: usize,
}

impl GridSpec {
    pub fn new(width: usize, height: usize, goal: (usize, usize)) -> Self {
        Self { width, height, goal, start: (0, 0), kappa: 0.5, hidden_dim: 4 }
    }
}

#[derive(Debug, Clone)]
pub struct GridWorld {
    spec: GridSpec,
}

impl GridWorld {
    /// Builds the environment; it serves as both provider and verifier.
    pub fn new(spec: GridSpec) -> Result<Self, EnvError> {
        let bad = |m: &str| Err(EnvError::InvalidSpec(m.to_string()));
        if spec.width == 0 || spec.height == 0 {
            return bad("grid must be non-empty");
        }
        let inside = |(x, y): (usize, usize)| x < spec.width && y < spec.height;
        if !inside(spec.goal) || !inside(spec.start) {
            return bad("goal and start must lie inside the grid");
        }
        if spec.goal == spec.start {
            return bad("start cell must differ from the goal");
        }
        if !(spec.kappa > 0.0 && spec.kappa.is_finite()) || spec.hidden_dim == 0 {
            return bad("kappa and hidden_dim must be positive");
        }
        // farthest cell must stay representable inside the projection margin
        let far = (spec.width + spec.height) as f64 * spec.kappa;
        if (far / 2.0).tanh() >= 1.0 - 1e-5 {
            return bad("kappa too large for the grid size");
        }
        Ok(Self { spec })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn manhattan_to_goal(&self, cell: (usize, usize)) -> usize {
        cell.0.abs_diff(self.spec.goal.0) + cell.1.abs_diff(self.spec.goal.1)
    }

    fn step(&self, cell: (usize, usize), mv: usize) -> (usize, usize) {
        let (dx, dy) = MOVES[mv];
        let x = (cell.0 as i64 + dx).clamp(0, self.spec.width as i64 - 1) as usize;
        let y = (cell.1 as i64 + dy).clamp(0, self.spec.height as i64 - 1) as usize;
        (x, y)
    }

    /// Cell reached by replaying the moves in `state`.
    pub fn cell_of(&self, state: &DialogueState) -> Result<(usize, usize), EnvError> {
        let mut cell = self.spec.start;
        for (d, a) in state.actions().iter().enumerate() {
            match a.0.as_slice() {
                [depth, mv] if *depth as usize == d && (*mv as usize) < MOVES.len() => {
                    cell = self.step(cell, *mv as usize)
                }
                _ => return Err(EnvError::MalformedAction(a.0.clone())),
            }
        }
        Ok(cell)
    }

    fn signed_position(&self, cell: (usize, usize)) -> f64 {
        let m_start = self.manhattan_to_goal(self.spec.start) as f64;
        self.spec.kappa * (m_start - self.manhattan_to_goal(cell) as f64)
    }

    /// Exact latent of a cell, along the first coordinate axis.
    pub fn latent_of(&self, cell: (usize, usize)) -> Result<BallPoint, GeoError> {
        let mut c = vec![0.0; self.spec.hidden_dim];
        c[0] = (self.signed_position(cell) / 2.0).tanh();
        BallPoint::new(c)
    }

    pub fn goal_latent(&self) -> BallPoint {
        self.latent_of(self.spec.goal).expect("validated at construction")
    }

    fn pooled_of(&self, cell: (usize, usize)) -> AmbientVector {
        // exp0(v) has geodesic radius 2|v|, so the tangent length is half the position
        let mut v = vec![0.0; self.spec.hidden_dim];
        v[0] = (self.spec.hidden_dim as f64).sqrt() * self.signed_position(cell) / 2.0;
        AmbientVector::new(v).expect("finite")
    }
}

impl PolicyProvider for GridWorld {
    fn hidden_dim(&self) -> usize {
        self.spec.hidden_dim
    }

    fn root_pooled(&self) -> AmbientVector {
        AmbientVector::zeros(self.spec.hidden_dim)
    }

    fn sample(
        &self,
        state: &DialogueState,
        branching: usize,
        _rng: &mut dyn RngCore,
    ) -> Result<Vec<Candidate>, EnvError> {
        if branching != MOVES.len() {
            return Err(EnvError::Branching { requested: branching, branching: MOVES.len() });
        }
        let cell = self.cell_of(state)?;
        let depth = state.depth() as u32;
        let lp = -(MOVES.len() as f64).ln();
        Ok((0..MOVES.len())
            .map(|mv| Candidate {
                action: ActionLabel(vec![depth, mv as u32]),
                token_logprobs: vec![lp],
                pooled: self.pooled_of(self.step(cell, mv)),
            })
            .collect())
    }

    fn answer_extracted(&self, state: &DialogueState) -> bool {
        self.cell_of(state).is_ok_and(|c| c == self.spec.goal)
    }
}

impl Verifier for GridWorld {
    fn verify(&self, state: &DialogueState) -> Result<f64, EnvError> {
        Ok(if self.cell_of(state)? == self.spec.goal { 1.0 } else { 0.0 })
    }
}
