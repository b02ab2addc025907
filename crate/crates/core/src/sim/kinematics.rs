//! Differential-drive kinematics with exact arc integration.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::sim::map::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicsConfig {
    /// Ground speed (units/s) at full wheel command.
    pub gain: f64,
    /// Distance between the wheels.
    pub baseline: f64,
    /// Integration step in seconds; one environment step.
    pub dt: f64,
}

impl Default for KinematicsConfig {
    fn default() -> Self {
        Self { gain: 1.0, baseline: 0.1, dt: 1.0 / 30.0 }
    }
}

/// Left/right wheel commands, each clamped to `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WheelCmd {
    pub left: f64,
    pub right: f64,
}

impl WheelCmd {
    pub fn new(left: f64, right: f64) -> Self {
        Self { left: left.clamp(-1.0, 1.0), right: right.clamp(-1.0, 1.0) }
    }
}

/// Discrete action -> wheel speeds.
pub const ACTION_WHEELS: [WheelCmd; 3] = [
    WheelCmd { left: 0.04, right: 0.4 }, // 0: left
    WheelCmd { left: 0.4, right: 0.04 }, // 1: right
    WheelCmd { left: 0.3, right: 0.3 },  // 2: straight
];

pub const ACTION_NAMES: [&str; 3] = ["Left", "Right", "Straight"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub pose: Pose,
    pub last_cmd: WheelCmd,
}

impl VehicleState {
    pub fn at(pose: Pose) -> Self {
        Self { pose: Pose { heading: normalize_angle(pose.heading), ..pose }, last_cmd: WheelCmd::default() }
    }
}

/// Wrap an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

impl KinematicsConfig {
    /// Forward speed (units/s) and yaw rate (rad/s) for a wheel command.
    pub fn body_rates(&self, cmd: WheelCmd) -> (f64, f64) {
        let v = self.gain * (cmd.left + cmd.right) / 2.0;
        let omega = self.gain * (cmd.right - cmd.left) / self.baseline;
        (v, omega)
    }

    /// Advance one step with the exact unicycle solution over `dt`.
    pub fn step(&self, state: &VehicleState, cmd: WheelCmd) -> VehicleState {
        let cmd = WheelCmd::new(cmd.left, cmd.right);
        let (v, omega) = self.body_rates(cmd);
        let Pose { x, y, heading } = state.pose;
        let dt = self.dt;
        let pose = if omega == 0.0 {
            Pose { x: x + v * dt * heading.cos(), y: y + v * dt * heading.sin(), heading }
        } else {
            let h1 = heading + omega * dt;
            let radius = v / omega;
            Pose {
                x: x + radius * (h1.sin() - heading.sin()),
                y: y - radius * (h1.cos() - heading.cos()),
                heading: normalize_angle(h1),
            }
        };
        VehicleState { pose, last_cmd: cmd }
    }
}
