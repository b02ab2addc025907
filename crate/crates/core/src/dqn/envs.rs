use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::replay::ObsCodec;
use super::DqnError;
use crate::camera::{render, CameraConfig, Jitter, JitterRanges};
use crate::preproc::{preprocess, Frame, FrameStack, PreprocConfig};
use crate::sim::{LaneEnv, LaneInfo, Pose, SimConfig, StepResult, TrackMap};

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub obs: Vec<f32>,
    pub reward: f64,
    /// The episode reached a terminal state (no bootstrapping).
    pub terminated: bool,
    /// The episode was cut by a step limit.
    pub truncated: bool,
}

/// Reset/step contract shared by the lane task and the oracle MDPs.
pub trait Environment {
    /// `[height, width, channels]` of the flattened observation.
    fn observation_shape(&self) -> [usize; 3];
    fn num_actions(&self) -> usize;
    fn codec(&self) -> ObsCodec;
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<Vec<f32>, DqnError>;
    fn step(&mut self, action: usize) -> Result<EnvStep, DqnError>;
}

/// Camera plus preprocessing settings: everything between a pose and a frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perception {
    pub camera: CameraConfig,
    pub preproc: PreprocConfig,
}

impl Perception {
    pub fn paper() -> Self {
        Self { camera: CameraConfig::default(), preproc: PreprocConfig::paper() }
    }

    /// Renders at 192x144, four times the preprocessing target, so the area
    /// average sees the same 4x4 footprint per output pixel as a smaller
    /// version of the full pipeline.
    pub fn desk() -> Self {
        Self { camera: CameraConfig::default().with_resolution(192, 144), preproc: PreprocConfig::desk() }
    }

    pub fn frame(&self, map: &TrackMap, pose: &Pose, jitter: Option<&Jitter>) -> Result<Frame, DqnError> {
        Ok(preprocess(&render(map, pose, &self.camera, jitter), &self.preproc)?)
    }
}

/// How per-episode camera jitter is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum JitterMode {
    #[default]
    Off,
    /// Fresh draw from the ranges at every reset.
    Random(JitterRanges),
    Fixed(Jitter),
}

/// Lane following from stacked, segmented camera frames.
#[derive(Debug, Clone)]
pub struct LaneVisionEnv {
    sim: LaneEnv,
    perception: Perception,
    jitter_mode: JitterMode,
    jitter: Option<Jitter>,
    stack: FrameStack,
    last_lane: Option<LaneInfo>,
}

impl LaneVisionEnv {
    pub fn new(map: Arc<TrackMap>, sim: SimConfig, perception: Perception) -> Self {
        Self {
            sim: LaneEnv::new(map, sim),
            stack: FrameStack::new(perception.preproc.k),
            perception,
            jitter_mode: JitterMode::Off,
            jitter: None,
            last_lane: None,
        }
    }

    pub fn with_jitter(mut self, mode: JitterMode) -> Self {
        self.jitter_mode = mode;
        self
    }

    pub fn sim(&self) -> &LaneEnv {
        &self.sim
    }

    pub fn perception(&self) -> &Perception {
        &self.perception
    }

    pub fn jitter(&self) -> Option<&Jitter> {
        self.jitter.as_ref()
    }

    /// Lane query of the latest step, if any.
    pub fn last_lane(&self) -> Option<&LaneInfo> {
        self.last_lane.as_ref()
    }

    fn observe(&mut self) -> Result<Vec<f32>, DqnError> {
        let pose = self.sim.state().ok_or(crate::sim::SimError::NotReset)?.vehicle.pose;
        let frame = self.perception.frame(self.sim.map(), &pose, self.jitter.as_ref())?;
        Ok(self.stack.push(frame)?.data)
    }

    fn begin_episode(&mut self, rng: Option<&mut ChaCha8Rng>) {
        self.jitter = match (self.jitter_mode, rng) {
            (JitterMode::Off, _) => None,
            (JitterMode::Fixed(j), _) => Some(j),
            (JitterMode::Random(r), Some(rng)) => Some(r.sample(rng)),
            (JitterMode::Random(_), None) => None,
        };
        self.stack.clear();
        self.last_lane = None;
    }

    /// Start at a given pose; random jitter is disabled for such episodes.
    pub fn reset_to(&mut self, pose: Pose) -> Result<Vec<f32>, DqnError> {
        self.begin_episode(None);
        self.sim.reset_to(pose);
        self.observe()
    }

    /// Step and also return the raw simulator result.
    pub fn step_full(&mut self, action: usize) -> Result<(EnvStep, StepResult), DqnError> {
        let r = self.sim.step(action)?;
        self.last_lane = Some(r.lane);
        let obs = self.observe()?;
        Ok((EnvStep { obs, reward: r.reward, terminated: r.terminated, truncated: r.truncated }, r))
    }
}

impl Environment for LaneVisionEnv {
    fn observation_shape(&self) -> [usize; 3] {
        self.perception.preproc.observation_shape()
    }

    fn num_actions(&self) -> usize {
        crate::sim::ACTION_WHEELS.len()
    }

    fn codec(&self) -> ObsCodec {
        ObsCodec::Binary
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<Vec<f32>, DqnError> {
        self.sim.reset(rng)?;
        self.begin_episode(Some(rng));
        self.observe()
    }

    fn step(&mut self, action: usize) -> Result<EnvStep, DqnError> {
        self.step_full(action).map(|(s, _)| s)
    }
}

/// Moves of the gridworld: up, down, left, right (rows grow downward).
pub const GRID_MOVES: [(i64, i64); 4] = [(0, -1), (0, 1), (-1, 0), (1, 0)];

/// Deterministic `n x n` grid, goal in the bottom-right corner, reward -1 per
/// move, one-hot observations. Bumping a wall leaves the agent in place.
#[derive(Debug, Clone)]
pub struct GridWorld {
    n: usize,
    max_steps: usize,
    pos: usize,
    steps: usize,
}

impl GridWorld {
    pub fn new(n: usize, max_steps: usize) -> Self {
        assert!(n >= 2, "grid needs at least two cells per side");
        Self { n, max_steps, pos: 0, steps: 0 }
    }

    pub fn num_states(&self) -> usize {
        self.n * self.n
    }

    pub fn goal(&self) -> usize {
        self.n * self.n - 1
    }

    /// Successor of `state` under `action`.
    pub fn transition(&self, state: usize, action: usize) -> usize {
        let (x, y) = ((state % self.n) as i64, (state / self.n) as i64);
        let (dx, dy) = GRID_MOVES[action];
        let (nx, ny) = (x + dx, y + dy);
        if nx < 0 || ny < 0 || nx >= self.n as i64 || ny >= self.n as i64 {
            state
        } else {
            ny as usize * self.n + nx as usize
        }
    }

    pub fn one_hot(&self, state: usize) -> Vec<f32> {
        let mut v = vec![0.0; self.num_states()];
        v[state] = 1.0;
        v
    }

    /// Optimal action values by value iteration. The goal row is all zeros.
    pub fn value_iteration(&self, gamma: f64) -> Vec<[f64; 4]> {
        let ns = self.num_states();
        let mut q = vec![[0.0f64; 4]; ns];
        loop {
            let v: Vec<f64> = q.iter().map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
            let mut delta = 0f64;
            for s in 0..ns {
                if s == self.goal() {
                    continue;
                }
                for a in 0..4 {
                    let next = self.transition(s, a);
                    let cont = if next == self.goal() { 0.0 } else { v[next] };
                    let new = -1.0 + gamma * cont;
                    delta = delta.max((new - q[s][a]).abs());
                    q[s][a] = new;
                }
            }
            if delta < 1e-12 {
                return q;
            }
        }
    }
}

/// Actions within `tol` of the best value.
pub fn optimal_actions(q: &[f64], tol: f64) -> Vec<usize> {
    let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..q.len()).filter(|&a| q[a] >= best - tol).collect()
}

impl Environment for GridWorld {
    fn observation_shape(&self) -> [usize; 3] {
        [1, 1, self.num_states()]
    }

    fn num_actions(&self) -> usize {
        4
    }

    fn codec(&self) -> ObsCodec {
        ObsCodec::Binary
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<Vec<f32>, DqnError> {
        self.pos = rng.gen_range(0..self.goal());
        self.steps = 0;
        Ok(self.one_hot(self.pos))
    }

    fn step(&mut self, action: usize) -> Result<EnvStep, DqnError> {
        if action >= 4 {
            return Err(DqnError::InvalidAction(action));
        }
        self.pos = self.transition(self.pos, action);
        self.steps += 1;
        let terminated = self.pos == self.goal();
        Ok(EnvStep {
            obs: self.one_hot(self.pos),
            reward: -1.0,
            terminated,
            truncated: !terminated && self.steps >= self.max_steps,
        })
    }
}

/// One state, one action, reward 1 forever: `Q* = 1 / (1 - gamma)`.
#[derive(Debug, Clone)]
pub struct SingleStateMdp {
    max_steps: usize,
    steps: usize,
}

impl SingleStateMdp {
    pub fn new(max_steps: usize) -> Self {
        Self { max_steps, steps: 0 }
    }
}

impl Environment for SingleStateMdp {
    fn observation_shape(&self) -> [usize; 3] {
        [1, 1, 1]
    }

    fn num_actions(&self) -> usize {
        1
    }

    fn codec(&self) -> ObsCodec {
        ObsCodec::Binary
    }

    fn reset(&mut self, _rng: &mut ChaCha8Rng) -> Result<Vec<f32>, DqnError> {
        self.steps = 0;
        Ok(vec![1.0])
    }

    fn step(&mut self, action: usize) -> Result<EnvStep, DqnError> {
        if action != 0 {
            return Err(DqnError::InvalidAction(action));
        }
        self.steps += 1;
        Ok(EnvStep { obs: vec![1.0], reward: 1.0, terminated: false, truncated: self.steps >= self.max_steps })
    }
}
