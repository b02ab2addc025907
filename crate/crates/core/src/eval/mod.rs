//! Evaluation battery: random-start lap trials, tile-distance metric,
//! confidence histograms, robustness sweeps and top-down path overlays.

mod overlay;

use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraError, Jitter};
use crate::dqn::{argmax, batch_tensor, DqnError, Perception};
use crate::nn::{NnError, PolicyNet};
use crate::preproc::{FrameStack, PreprocError};
use crate::sim::{sample_spawn, LaneEnv, LaneInfo, Pose, SimConfig, SimError, TileCoord, TrackMap};

pub use overlay::{export_path_overlay, rasterize_overlay, OverlayStyle};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Dqn(#[from] DqnError),
    #[error(transparent)]
    Preproc(#[from] PreprocError),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("network expects input {expected:?}, perception produces {found:?}")]
    InputMismatch { expected: [usize; 3], found: [usize; 3] },
}

/// One control decision, with the Q-values behind it when there are any.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: usize,
    pub q: Option<[f32; 3]>,
}

/// A policy that drives the simulated robot.
pub trait Driver {
    /// Called once at the start of each trial.
    fn begin(&mut self, map: &TrackMap, pose: &Pose);
    fn act(&mut self, map: &TrackMap, pose: &Pose) -> Result<Decision, EvalError>;
}

/// Greedy Q-network policy fed from the rendered camera.
pub struct NetDriver {
    net: Arc<PolicyNet<f32>>,
    perception: Perception,
    jitter: Option<Jitter>,
    stack: FrameStack,
}

impl NetDriver {
    pub fn new(net: Arc<PolicyNet<f32>>, perception: Perception) -> Result<Self, EvalError> {
        let found = perception.preproc.observation_shape();
        if net.spec().input != found || net.spec().outputs != 3 {
            return Err(EvalError::InputMismatch { expected: net.spec().input, found });
        }
        let stack = FrameStack::new(perception.preproc.k);
        Ok(Self { net, perception, jitter: None, stack })
    }

    pub fn with_jitter(mut self, jitter: Option<Jitter>) -> Self {
        self.jitter = jitter;
        self
    }
}

impl Driver for NetDriver {
    fn begin(&mut self, _map: &TrackMap, _pose: &Pose) {
        self.stack.clear();
    }

    fn act(&mut self, map: &TrackMap, pose: &Pose) -> Result<Decision, EvalError> {
        let frame = self.perception.frame(map, pose, self.jitter.as_ref())?;
        let obs = self.stack.push(frame)?;
        let q = self.net.predict(&batch_tensor::<f32>(&obs.data, 1, obs.shape())?)?;
        let row = q.row(0);
        Ok(Decision { action: argmax(row), q: Some([row[0], row[1], row[2]]) })
    }
}

/// Bang-bang lane keeper on ground-truth lane geometry:
/// `s = heading_error + gain * dist`, turn right above `+threshold`, left
/// below `-threshold`, straight otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleDriver {
    pub dist_gain: f64,
    pub threshold: f64,
}

impl Default for OracleDriver {
    fn default() -> Self {
        Self { dist_gain: 3.0, threshold: 0.05 }
    }
}

impl Driver for OracleDriver {
    fn begin(&mut self, _map: &TrackMap, _pose: &Pose) {}

    fn act(&mut self, map: &TrackMap, pose: &Pose) -> Result<Decision, EvalError> {
        let lane = map.lane_query(pose);
        let s = lane.heading_error(pose.heading) + self.dist_gain * lane.dist;
        let action = if s > self.threshold {
            1
        } else if s < -self.threshold {
            0
        } else {
            2
        };
        Ok(Decision { action, q: None })
    }
}

/// Always the same action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantDriver(pub usize);

impl Driver for ConstantDriver {
    fn begin(&mut self, _map: &TrackMap, _pose: &Pose) {}

    fn act(&mut self, _map: &TrackMap, _pose: &Pose) -> Result<Decision, EvalError> {
        Ok(Decision { action: self.0, q: None })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub spawn: Pose,
    pub steps: usize,
    pub lap_completed: bool,
    pub left_track: bool,
    /// Pose after each step, starting with the spawn pose.
    pub trace: Vec<Pose>,
    pub on_track: Vec<bool>,
    pub actions: Vec<u8>,
    /// Empty for drivers without Q-values.
    pub q_values: Vec<[f32; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuccessReport {
    pub label: String,
    pub total: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub trials: Vec<TrialResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub spawn_x: f64,
    pub spawn_y: f64,
    pub spawn_heading: f64,
    pub steps: usize,
    pub lap_completed: bool,
    pub left_track: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub label: String,
    pub total: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub trials: Vec<TrialSummary>,
}

impl SuccessReport {
    pub fn summary(&self) -> ReportSummary {
        ReportSummary {
            label: self.label.clone(),
            total: self.total,
            successes: self.successes,
            success_rate: self.success_rate,
            trials: self
                .trials
                .iter()
                .enumerate()
                .map(|(i, t)| TrialSummary {
                    trial: i,
                    spawn_x: t.spawn.x,
                    spawn_y: t.spawn.y,
                    spawn_heading: t.spawn.heading,
                    steps: t.steps,
                    lap_completed: t.lap_completed,
                    left_track: t.left_track,
                })
                .collect(),
        }
    }

    /// Results-table row: `label | trials | successes | rate`.
    pub fn table_row(&self) -> String {
        format!("| {} | {} | {} | {:.0}% |", self.label, self.total, self.successes, 100.0 * self.success_rate)
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<(), EvalError> {
        serde_json::to_writer_pretty(out, &self.summary())?;
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "trial,spawn_x,spawn_y,spawn_heading,steps,lap_completed,left_track")?;
        for t in self.summary().trials {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                t.trial, t.spawn_x, t.spawn_y, t.spawn_heading, t.steps, t.lap_completed as u8, t.left_track as u8
            )?;
        }
        Ok(())
    }
}

/// Signed circuit-index step from `from` to `to`, wrapped into `(-n/2, n/2]`.
fn circuit_delta(map: &TrackMap, from: TileCoord, to: TileCoord) -> i64 {
    let n = map.circuit().len() as i64;
    let (a, b) = (map.circuit_index(from).unwrap() as i64, map.circuit_index(to).unwrap() as i64);
    let mut d = (b - a).rem_euclid(n);
    if d > n / 2 {
        d -= n;
    }
    d
}

/// Unwrapped circuit progress after each pose, stopping before the first
/// off-track pose. Entry `i` is the signed number of tile boundaries crossed.
fn progress(trace: &[Pose], map: &TrackMap) -> Vec<i64> {
    let mut out = Vec::with_capacity(trace.len());
    let mut prev: Option<TileCoord> = None;
    let mut p = 0i64;
    for pose in trace {
        let lane: LaneInfo = map.lane_query(pose);
        if !lane.on_track {
            break;
        }
        let tile = lane.tile.expect("on-track pose has a tile");
        if let Some(pt) = prev {
            p += circuit_delta(map, pt, tile);
        }
        prev = Some(tile);
        out.push(p);
    }
    out
}

/// A lap: the trace stays on the road and its tile progress reaches the
/// circuit length, so every tile was visited and the start tile re-entered.
pub fn lap_completed(trace: &[Pose], map: &TrackMap) -> bool {
    lap_step(trace, map).is_some()
}

/// Index of the pose at which the lap closes, if it does.
pub fn lap_step(trace: &[Pose], map: &TrackMap) -> Option<usize> {
    let n = map.circuit().len() as i64;
    let prog = progress(trace, map);
    if prog.len() < trace.len() {
        return None;
    }
    prog.iter().position(|p| p.abs() >= n)
}

/// Tiles passed along the travel direction within the first `duration`
/// seconds (sampled at `dt`), stopping at the first off-track pose.
pub fn tile_distance(trace: &[Pose], map: &TrackMap, duration: f64, dt: f64) -> usize {
    let window = (duration / dt).round() as usize + 1;
    let prog = progress(&trace[..trace.len().min(window)], map);
    let fwd = prog.iter().copied().max().unwrap_or(0);
    let back = -prog.iter().copied().min().unwrap_or(0);
    fwd.max(back) as usize
}

/// Run one trial from `spawn` with `driver`; stops at the lap, off-track or
/// the step cap of `sim`.
pub fn run_trial(map: &Arc<TrackMap>, sim: &SimConfig, spawn: Pose, driver: &mut dyn Driver) -> Result<TrialResult, EvalError> {
    let mut env = LaneEnv::new(map.clone(), *sim);
    env.reset_to(spawn);
    driver.begin(map, &spawn);
    let n = map.circuit().len() as i64;
    let mut trial = TrialResult {
        spawn,
        steps: 0,
        lap_completed: false,
        left_track: false,
        trace: vec![spawn],
        on_track: vec![map.lane_query(&spawn).on_track],
        actions: Vec::new(),
        q_values: Vec::new(),
    };
    let mut prev = map.lane_query(&spawn).tile.expect("reference tile");
    let mut p = 0i64;
    loop {
        let pose = env.state().expect("reset").vehicle.pose;
        let d = driver.act(map, &pose)?;
        let r = env.step(d.action)?;
        let pose = env.state().expect("reset").vehicle.pose;
        trial.steps += 1;
        trial.actions.push(d.action as u8);
        if let Some(q) = d.q {
            trial.q_values.push(q);
        }
        trial.trace.push(pose);
        trial.on_track.push(r.lane.on_track);
        if r.terminated {
            trial.left_track = true;
            break;
        }
        let tile = r.lane.tile.expect("on-track pose has a tile");
        p += circuit_delta(map, prev, tile);
        prev = tile;
        if p.abs() >= n {
            trial.lap_completed = true;
            break;
        }
        if r.truncated {
            break;
        }
    }
    Ok(trial)
}

/// Greedy rollouts from `n` random valid spawns drawn with `seed`.
pub fn run_success_trials(
    label: &str,
    map: &Arc<TrackMap>,
    sim: &SimConfig,
    driver: &mut dyn Driver,
    n: usize,
    seed: u64,
) -> Result<SuccessReport, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spawns = (0..n).map(|_| sample_spawn(map, &sim.spawn, &mut rng)).collect::<Result<Vec<_>, _>>()?;
    let mut trials = Vec::with_capacity(n);
    for spawn in spawns {
        trials.push(run_trial(map, sim, spawn, driver)?);
    }
    let successes = trials.iter().filter(|t| t.lap_completed).count();
    Ok(SuccessReport {
        label: label.to_string(),
        total: n,
        successes,
        success_rate: if n == 0 { 0.0 } else { successes as f64 / n as f64 },
        trials,
    })
}

/// Lighting and speed perturbation for a robustness run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Variation {
    pub brightness: f64,
    pub hue_shift_deg: f64,
    pub speed_multiplier: f64,
}

impl Variation {
    pub const IDENTITY: Variation = Variation { brightness: 0.0, hue_shift_deg: 0.0, speed_multiplier: 1.0 };

    fn jitter(&self) -> Option<Jitter> {
        (self.brightness != 0.0 || self.hue_shift_deg != 0.0).then_some(Jitter {
            hue_shift_deg: self.hue_shift_deg,
            brightness: self.brightness,
            pitch_offset: 0.0,
        })
    }
}

/// One success report per variation; every variation reuses the same spawns.
pub fn robustness_sweep(
    net: &Arc<PolicyNet<f32>>,
    perception: Perception,
    map: &Arc<TrackMap>,
    sim: &SimConfig,
    variations: &[Variation],
    n: usize,
    seed: u64,
) -> Result<Vec<(Variation, SuccessReport)>, EvalError> {
    let mut out = Vec::with_capacity(variations.len());
    for v in variations {
        let mut driver = NetDriver::new(net.clone(), perception)?.with_jitter(v.jitter());
        let mut cfg = *sim;
        cfg.kinematics.gain *= v.speed_multiplier;
        let label = format!("brightness {:+.2} hue {:+.1} speed x{:.2}", v.brightness, v.hue_shift_deg, v.speed_multiplier);
        out.push((*v, run_success_trials(&label, map, &cfg, &mut driver, n, seed)?));
    }
    Ok(out)
}

pub const HISTOGRAM_BINS: usize = 20;

/// Max-softmax confidence per step, binned over `[1/3, 1]`, split by the
/// argmax action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionHistogram {
    pub edges: Vec<f64>,
    /// `counts[action][bin]`.
    pub counts: [Vec<u64>; 3],
}

/// `max softmax(q)`, computed stably.
pub fn confidence(q: &[f32; 3]) -> f64 {
    let m = q.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let z: f64 = q.iter().map(|&v| (v as f64 - m).exp()).sum();
    1.0 / z
}

pub fn action_histogram(q_values: &[[f32; 3]]) -> ActionHistogram {
    let lo = 1.0 / 3.0;
    let width = (1.0 - lo) / HISTOGRAM_BINS as f64;
    let edges = (0..=HISTOGRAM_BINS).map(|i| lo + i as f64 * width).collect();
    let mut counts = [vec![0u64; HISTOGRAM_BINS], vec![0u64; HISTOGRAM_BINS], vec![0u64; HISTOGRAM_BINS]];
    for q in q_values {
        let c = confidence(q);
        let bin = (((c - lo) / width).floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1);
        counts[argmax(q)][bin] += 1;
    }
    ActionHistogram { edges, counts }
}

impl ActionHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// `bin_lo,bin_hi,left,right,straight`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "bin_lo,bin_hi,left,right,straight")?;
        for b in 0..HISTOGRAM_BINS {
            writeln!(
                out,
                "{},{},{},{},{}",
                self.edges[b],
                self.edges[b + 1],
                self.counts[0][b],
                self.counts[1][b],
                self.counts[2][b]
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::maps;

    #[test]
    fn uniform_q_lands_in_lowest_bin() {
        let h = action_histogram(&[[0.0; 3]; 4]);
        assert_eq!(h.counts[0][0], 4);
        assert_eq!(h.total(), 4);
    }

    #[test]
    fn dominant_q_lands_in_top_bin() {
        let h = action_histogram(&[[10.0, 0.0, 0.0]]);
        assert_eq!(h.counts[0][HISTOGRAM_BINS - 1], 1);
        assert!(confidence(&[10.0, 0.0, 0.0]) > 0.9999);
    }

    #[test]
    fn histogram_partitions_by_argmax() {
        let qs = [[1.0, 2.0, 0.0], [0.5, 0.1, 3.0], [2.0, 2.0, 0.0], [0.0, 0.0, 0.1]];
        let h = action_histogram(&qs);
        let per: Vec<u64> = h.counts.iter().map(|c| c.iter().sum()).collect();
        assert_eq!(per, vec![1, 1, 2]);
    }

    #[test]
    fn zero_trials_give_empty_report() {
        let map = Arc::new(maps::small_loop());
        let r = run_success_trials("x", &map, &SimConfig::default(), &mut OracleDriver::default(), 0, 1).unwrap();
        assert_eq!((r.total, r.successes, r.success_rate), (0, 0, 0.0));
        assert!(r.trials.is_empty());
    }

    #[test]
    fn stationary_trace_has_zero_distance() {
        let map = maps::small_loop();
        let p = Pose { x: 1.5, y: 0.25, heading: 0.0 };
        assert_eq!(tile_distance(&vec![p; 100], &map, 30.0, 1.0 / 30.0), 0);
    }
}
