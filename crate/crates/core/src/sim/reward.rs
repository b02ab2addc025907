use crate::sim::map::LaneInfo;

/// Reward when the robot leaves the paved surface; the episode ends.
pub const OFF_TRACK_REWARD: f64 = -40.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardInputs {
    /// Forward speed, `gain * (v_left + v_right) / 2`.
    pub speed: f64,
    pub dist: f64,
    pub dot_dir: f64,
    /// Collision penalty: 0 without a collision, -1 with one.
    pub col_pen: f64,
}

/// Lane-keeping reward.
///
/// In the right lane: `10 * speed * dot_dir - 100 * |dist| + 400 * col_pen`.
/// Elsewhere on the road: `400 * col_pen`. Off the road: `-40`.
pub fn compute_reward(inputs: &RewardInputs, lane: &LaneInfo) -> f64 {
    if !lane.on_track {
        OFF_TRACK_REWARD
    } else if lane.in_right_lane {
        10.0 * inputs.speed * inputs.dot_dir - 100.0 * inputs.dist.abs() + 400.0 * inputs.col_pen
    } else {
        400.0 * inputs.col_pen
    }
}
