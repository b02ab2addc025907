use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::sim::kinematics::{KinematicsConfig, VehicleState, WheelCmd, ACTION_WHEELS};
use crate::sim::map::{LaneInfo, Pose, TrackMap, LANE_HALF_WIDTH, ROAD_HALF_WIDTH};
use crate::sim::reward::{compute_reward, RewardInputs};
use crate::sim::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpawnConfig {
    /// Lateral offset is drawn from `U(-lateral_jitter, lateral_jitter)` around the right-lane centerline.
    pub lateral_jitter: f64,
    /// Heading offset (radians) is drawn from `U(-heading_jitter, heading_jitter)` around the lane tangent.
    pub heading_jitter: f64,
    /// Poses this close to the road edge that point toward it are rejected.
    pub edge_margin: f64,
    pub max_attempts: usize,
}

impl Default for SpawnConfig {
    fn default() -> Self {
        Self { lateral_jitter: 0.15, heading_jitter: 0.5, edge_margin: 0.1, max_attempts: 1000 }
    }
}

impl SpawnConfig {
    pub fn exact() -> Self {
        Self { lateral_jitter: 0.0, heading_jitter: 0.0, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub kinematics: KinematicsConfig,
    pub max_episode_steps: usize,
    pub spawn: SpawnConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { kinematics: KinematicsConfig::default(), max_episode_steps: 2500, spawn: SpawnConfig::default() }
    }
}

/// One row of an episode trace. Row 0 is the spawn pose with no action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub pose: Pose,
    pub reward: f64,
    pub action: Option<u8>,
    pub on_track: bool,
}

#[derive(Debug, Clone)]
pub struct EpisodeState {
    pub vehicle: VehicleState,
    pub step_count: usize,
    pub done: bool,
    pub cumulative_reward: f64,
    pub trace: Vec<TraceRow>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub reward: f64,
    pub done: bool,
    /// The robot left the road.
    pub terminated: bool,
    /// The step cap was reached.
    pub truncated: bool,
    pub lane: LaneInfo,
}

/// Whether a pose is an admissible spawn: on the road and not sitting at the
/// road edge pointing off it.
pub fn is_valid_spawn(map: &TrackMap, pose: &Pose, edge_margin: f64) -> bool {
    let info = map.lane_query(pose);
    if !info.on_track {
        return false;
    }
    let t = info.tile.expect("on-track query has a tile");
    let frame = map.local_frame(t, pose.x, pose.y);
    let to_edge = ROAD_HALF_WIDTH - frame.lateral.abs();
    if to_edge < edge_margin {
        // outward normal: left of the canonical tangent when lateral > 0
        let (tx, ty) = frame.tangent;
        let side = frame.lateral.signum();
        let (nx, ny) = (-ty * side, tx * side);
        let facing = nx * pose.heading.cos() + ny * pose.heading.sin();
        if facing > 0.0 {
            return false;
        }
    }
    true
}

/// Draw a random admissible pose: uniform road tile, uniform position along it,
/// random direction of travel, then lateral and heading jitter.
pub fn sample_spawn<R: Rng + ?Sized>(map: &TrackMap, cfg: &SpawnConfig, rng: &mut R) -> Result<Pose, SimError> {
    let circuit = map.circuit();
    for _ in 0..cfg.max_attempts.max(1) {
        let tile = circuit[rng.gen_range(0..circuit.len())];
        let fraction: f64 = rng.gen_range(0.0..1.0);
        let forward = rng.gen_bool(0.5);
        let lateral_jitter = if cfg.lateral_jitter > 0.0 { rng.gen_range(-cfg.lateral_jitter..cfg.lateral_jitter) } else { 0.0 };
        let heading_jitter = if cfg.heading_jitter > 0.0 { rng.gen_range(-cfg.heading_jitter..cfg.heading_jitter) } else { 0.0 };
        let sign = if forward { 1.0 } else { -1.0 };
        let lateral = sign * (-LANE_HALF_WIDTH + lateral_jitter);
        let ((x, y), (tx, ty)) = map.point_at(tile, fraction, lateral);
        let heading = crate::sim::normalize_angle((sign * ty).atan2(sign * tx) + heading_jitter);
        let pose = Pose { x, y, heading };
        if is_valid_spawn(map, &pose, cfg.edge_margin) {
            return Ok(pose);
        }
    }
    Err(SimError::NoValidSpawn { attempts: cfg.max_attempts })
}

/// Episode loop over a track: reset, step, termination.
#[derive(Debug, Clone)]
pub struct LaneEnv {
    map: Arc<TrackMap>,
    cfg: SimConfig,
    episode: Option<EpisodeState>,
}

impl LaneEnv {
    pub fn new(map: Arc<TrackMap>, cfg: SimConfig) -> Self {
        Self { map, cfg, episode: None }
    }

    pub fn map(&self) -> &Arc<TrackMap> {
        &self.map
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<&EpisodeState, SimError> {
        let pose = sample_spawn(&self.map, &self.cfg.spawn, rng)?;
        Ok(self.reset_to(pose))
    }

    /// Start an episode at a given pose (no admissibility check).
    pub fn reset_to(&mut self, pose: Pose) -> &EpisodeState {
        let vehicle = VehicleState::at(pose);
        let on_track = self.map.lane_query(&vehicle.pose).on_track;
        self.episode.insert(EpisodeState {
            vehicle,
            step_count: 0,
            done: false,
            cumulative_reward: 0.0,
            trace: vec![TraceRow { step: 0, pose: vehicle.pose, reward: 0.0, action: None, on_track }],
        })
    }

    pub fn state(&self) -> Option<&EpisodeState> {
        self.episode.as_ref()
    }

    pub fn step(&mut self, action: usize) -> Result<StepResult, SimError> {
        let cmd = *ACTION_WHEELS.get(action).ok_or(SimError::InvalidAction(action))?;
        self.step_wheels(cmd, Some(action as u8))
    }

    pub fn step_wheels(&mut self, cmd: WheelCmd, action: Option<u8>) -> Result<StepResult, SimError> {
        let ep = self.episode.as_mut().ok_or(SimError::NotReset)?;
        if ep.done {
            return Err(SimError::EpisodeDone);
        }
        let kin = &self.cfg.kinematics;
        ep.vehicle = kin.step(&ep.vehicle, cmd);
        ep.step_count += 1;
        let lane = self.map.lane_query(&ep.vehicle.pose);
        let (speed, _) = kin.body_rates(ep.vehicle.last_cmd);
        let inputs = RewardInputs { speed, dist: lane.dist, dot_dir: lane.dot_dir, col_pen: 0.0 };
        let reward = compute_reward(&inputs, &lane);
        let terminated = !lane.on_track;
        let truncated = !terminated && ep.step_count >= self.cfg.max_episode_steps;
        ep.done = terminated || truncated;
        ep.cumulative_reward += reward;
        ep.trace.push(TraceRow {
            step: ep.step_count,
            pose: ep.vehicle.pose,
            reward,
            action,
            on_track: lane.on_track,
        });
        Ok(StepResult { reward, done: ep.done, terminated, truncated, lane })
    }
}

/// Write a trace as CSV: `step,x,y,heading,reward,action`.
pub fn write_trace_csv<W: Write>(rows: &[TraceRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "step,x,y,heading,reward,action")?;
    for r in rows {
        let action = r.action.map(|a| a.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{},{},{}", r.step, r.pose.x, r.pose.y, r.pose.heading, r.reward, action)?;
    }
    Ok(())
}
