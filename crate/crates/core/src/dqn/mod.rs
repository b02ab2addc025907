//! DQN with experience replay and a hard-copied target network.

mod envs;
mod replay;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use envs::{
    optimal_actions, EnvStep, Environment, GridWorld, JitterMode, LaneVisionEnv, Perception, SingleStateMdp,
    GRID_MOVES,
};
pub use replay::{Batch, ObsCodec, ReplayBuffer, Transition};
pub use train::{
    batch_tensor, huber_loss_and_grad, run_training, td_targets, train_step, EpisodeLog, TrainOutcome, TrainLog,
    UpdateLog, UpdateStats,
};

use crate::nn::NnError;
use crate::preproc::PreprocError;
use crate::sim::SimError;

#[derive(Debug, Error)]
pub enum DqnError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Preproc(#[from] PreprocError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("replay buffer holds {have} transitions, need {need}")]
    BufferUnderfull { have: usize, need: usize },
    #[error("invalid action {0}")]
    InvalidAction(usize),
    #[error("observation has {found} values, expected {expected}")]
    ObservationShape { expected: usize, found: usize },
    #[error("binary replay codec got value {0}")]
    NonBinaryObservation(f32),
    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub gamma: f64,
    pub lr: f64,
    pub buffer_capacity: usize,
    pub learning_starts: u64,
    pub total_timesteps: u64,
    pub train_every: u64,
    pub target_update_every: u64,
    pub epsilon_start: f64,
    pub epsilon_final: f64,
    /// Fraction of `total_timesteps` over which epsilon decays.
    pub exploration_fraction: f64,
    pub max_episode_steps: u64,
    /// Save an intermediate checkpoint every this many steps; 0 disables.
    pub checkpoint_every: u64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn paper() -> Self {
        Self {
            batch_size: 32,
            gamma: 0.99,
            lr: 5e-5,
            buffer_capacity: 50_000,
            learning_starts: 10_000,
            total_timesteps: 500_000,
            train_every: 1,
            target_update_every: 500,
            epsilon_start: 1.0,
            epsilon_final: 0.02,
            exploration_fraction: 0.1,
            max_episode_steps: 2500,
            checkpoint_every: 50_000,
            seed: 0,
        }
    }

    pub fn desk() -> Self {
        Self { buffer_capacity: 10_000, total_timesteps: 100_000, checkpoint_every: 10_000, ..Self::paper() }
    }

    /// `learning_starts` may exceed `total_timesteps`; such a run only collects
    /// experience.
    pub fn validate(&self) -> Result<(), DqnError> {
        let bad = |m: &str| Err(DqnError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.buffer_capacity == 0 || self.train_every == 0 || self.target_update_every == 0 {
            return bad("buffer_capacity, train_every and target_update_every must be positive");
        }
        for e in [self.epsilon_start, self.epsilon_final] {
            if !(0.0..=1.0).contains(&e) {
                return bad("epsilon values must lie in [0, 1]");
            }
        }
        if !(self.exploration_fraction > 0.0 && self.exploration_fraction <= 1.0) {
            return bad("exploration_fraction must lie in (0, 1]");
        }
        if self.max_episode_steps == 0 {
            return bad("max_episode_steps must be positive");
        }
        Ok(())
    }

    /// Linear decay from `epsilon_start` to `epsilon_final` over the first
    /// `exploration_fraction * total_timesteps` steps, constant afterwards.
    pub fn epsilon_at(&self, step: u64) -> f64 {
        let horizon = self.exploration_fraction * self.total_timesteps as f64;
        if horizon <= 0.0 {
            return self.epsilon_final;
        }
        let frac = step as f64 / horizon;
        if frac >= 1.0 {
            return self.epsilon_final;
        }
        self.epsilon_start + frac * (self.epsilon_final - self.epsilon_start)
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::paper()
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(q: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in q.iter().enumerate().skip(1) {
        if *v > q[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy choice. Always draws one uniform for the explore test so
/// the random stream does not depend on `q`.
pub fn select_action<T: PartialOrd + Copy, R: Rng + ?Sized>(q: &[T], epsilon: f64, rng: &mut R) -> usize {
    if rng.gen::<f64>() < epsilon {
        rng.gen_range(0..q.len())
    } else {
        argmax(q)
    }
}
