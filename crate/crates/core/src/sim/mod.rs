//! Track model, kinematics, reward and episode loop.

mod env;
mod kinematics;
pub mod map;
pub mod maps;
mod reward;

use thiserror::Error;

pub use env::{
    is_valid_spawn, sample_spawn, write_trace_csv, EpisodeState, LaneEnv, SimConfig, SpawnConfig, StepResult,
    TraceRow,
};
pub use kinematics::{normalize_angle, KinematicsConfig, VehicleState, WheelCmd, ACTION_NAMES, ACTION_WHEELS};
pub use map::{LaneInfo, Pose, Port, TileCoord, TileKind, TrackMap};
pub use reward::{compute_reward, RewardInputs, OFF_TRACK_REWARD};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("malformed map: {0}")]
    MalformedMap(String),
    #[error("dangling road tile at {tile}: no matching neighbor on its {port:?} side")]
    DanglingTile { tile: TileCoord, port: Port },
    #[error("road is split into several circuits ({circuit} of {road} tiles reachable)")]
    DisconnectedCircuits { circuit: usize, road: usize },
    #[error("no valid spawn pose after {attempts} attempts")]
    NoValidSpawn { attempts: usize },
    #[error("episode already finished; reset first")]
    EpisodeDone,
    #[error("environment has not been reset")]
    NotReset,
    #[error("invalid action {0}")]
    InvalidAction(usize),
}
