//! Run configuration: pinned profiles, a flat `key = value` file format and
//! one command-line flag per key.

use std::fmt;
use std::path::{Path, PathBuf};

use lanedqn::camera::{CameraConfig, JitterRanges};
use lanedqn::dqn::{Perception, TrainConfig};
use lanedqn::nn::NetSpec;
use lanedqn::preproc::PreprocConfig;
use lanedqn::sim::{SimConfig, TrackMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Paper,
    Desk,
}

impl Profile {
    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            other => Err(ConfigError::BadValue { key: "profile".into(), value: other.into(), reason: "expected paper or desk".into() }),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Profile::Paper => "paper",
            Profile::Desk => "desk",
        }
    }
}

#[derive(Debug)]
pub enum ConfigError {
    UnknownKey { key: String, line: Option<usize> },
    BadValue { key: String, value: String, reason: String },
    Syntax { line: usize, text: String },
    Io { path: PathBuf, source: std::io::Error },
    Invalid(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::UnknownKey { key, line: Some(l) } => write!(f, "unknown config key `{key}` on line {l}"),
            ConfigError::UnknownKey { key, line: None } => write!(f, "unknown config key `{key}`"),
            ConfigError::BadValue { key, value, reason } => write!(f, "bad value `{value}` for `{key}`: {reason}"),
            ConfigError::Syntax { line, text } => write!(f, "line {line}: expected `key = value`, got `{text}`"),
            ConfigError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            ConfigError::Invalid(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Everything a subcommand needs to build its pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub profile: Profile,
    /// Bundled map name or path to a map file.
    pub map: String,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub train: TrainConfig,
    pub preproc: PreprocConfig,
    pub camera: CameraConfig,
    /// Per-episode camera jitter during training.
    pub jitter: bool,
    pub jitter_ranges: JitterRanges,
    pub sim: SimConfig,
    pub conv_filters: Vec<usize>,
    pub hidden: Vec<usize>,
}

/// Environment variable that overrides the default output directory.
pub const OUTPUT_DIR_ENV: &str = "LANEDQN_OUTPUT_DIR";

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let (train, perception, net) = match profile {
            Profile::Paper => (TrainConfig::paper(), Perception::paper(), NetSpec::paper()),
            Profile::Desk => (TrainConfig::desk(), Perception::desk(), NetSpec::desk()),
        };
        let sim = SimConfig { max_episode_steps: train.max_episode_steps as usize, ..SimConfig::default() };
        let output_dir = std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
        Self {
            profile,
            map: "small_loop".into(),
            seed: 0,
            output_dir,
            train,
            preproc: perception.preproc,
            camera: perception.camera,
            jitter: false,
            jitter_ranges: JitterRanges::default(),
            sim,
            conv_filters: net.conv_filters,
            hidden: net.hidden,
        }
    }

    pub fn perception(&self) -> Perception {
        Perception { camera: self.camera, preproc: self.preproc }
    }

    pub fn net_spec(&self) -> NetSpec {
        NetSpec {
            input: self.preproc.observation_shape(),
            conv_filters: self.conv_filters.clone(),
            hidden: self.hidden.clone(),
            outputs: 3,
        }
    }

    /// Training config with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train.clone() }
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig { max_episode_steps: self.train.max_episode_steps as usize, ..self.sim }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train_config().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.preproc.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.camera.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.net_spec().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.camera.image_width < self.preproc.target_width || self.camera.image_height < self.preproc.target_height {
            return Err(ConfigError::Invalid("camera image is smaller than the preprocessing target".into()));
        }
        Ok(())
    }

    pub fn load_map(&self) -> Result<TrackMap, String> {
        if let Some(m) = lanedqn::sim::maps::by_name(&self.map) {
            return Ok(m);
        }
        let text = std::fs::read_to_string(&self.map).map_err(|e| format!("map `{}`: {e}", self.map))?;
        TrackMap::parse(&text).map_err(|e| format!("map `{}`: {e}", self.map))
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let spec = KEYS.iter().find(|k| k.key == key).ok_or_else(|| ConfigError::UnknownKey { key: key.into(), line: None })?;
        (spec.set)(self, value.trim()).map_err(|reason| ConfigError::BadValue { key: key.into(), value: value.into(), reason })
    }

    /// Apply a `key = value` file. `profile` lines are skipped here; see
    /// [`profile_in_file`].
    pub fn apply_file(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax { line: i + 1, text: raw.into() })?;
            let k = k.trim();
            if k == "profile" {
                continue;
            }
            self.set(k, v).map_err(|e| match e {
                ConfigError::UnknownKey { key, .. } => ConfigError::UnknownKey { key, line: Some(i + 1) },
                other => other,
            })?;
        }
        Ok(())
    }

    /// Resolved config in file form, one key per line.
    pub fn render(&self) -> String {
        let mut s = format!("profile = {}\n", self.profile.name());
        for k in KEYS {
            s.push_str(&format!("{} = {}\n", k.key, (k.get)(self)));
        }
        s
    }
}

/// The `profile` line of a config file, if any.
pub fn profile_in_file(text: &str) -> Result<Option<Profile>, ConfigError> {
    for raw in text.lines() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if let Some((k, v)) = line.split_once('=') {
            if k.trim() == "profile" {
                return Profile::parse(v.trim()).map(Some);
            }
        }
    }
    Ok(None)
}

pub fn read_file(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })
}

type Setter = fn(&mut RunConfig, &str) -> Result<(), String>;
type Getter = fn(&RunConfig) -> String;

pub struct KeySpec {
    pub key: &'static str,
    pub flag: &'static str,
    pub help: &'static str,
    pub set: Setter,
    pub get: Getter,
}

fn num<T: std::str::FromStr>(v: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| e.to_string())
}

fn boolean(v: &str) -> Result<bool, String> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err("expected true or false".into()),
    }
}

fn list(v: &str) -> Result<Vec<usize>, String> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| num::<usize>(s.trim())).collect()
}

fn show_list(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

macro_rules! key {
    ($key:literal, $flag:literal, $help:literal, |$c:ident| $field:expr, $parse:expr) => {
        KeySpec {
            key: $key,
            flag: $flag,
            help: $help,
            set: |$c, v| {
                $field = ($parse)(v)?;
                Ok(())
            },
            get: |$c| $field.to_string(),
        }
    };
}

/// Every configurable key, its flag and help text.
pub static KEYS: &[KeySpec] = &[
    KeySpec {
        key: "map",
        flag: "map",
        help: "Bundled map name (small_loop, map_a, map_b, map_c) or path to a map file",
        set: |c, v| {
            c.map = v.to_string();
            Ok(())
        },
        get: |c| c.map.clone(),
    },
    key!("seed", "seed", "Random seed", |c| c.seed, num::<u64>),
    KeySpec {
        key: "output_dir",
        flag: "output-dir",
        help: "Directory that receives run directories",
        set: |c, v| {
            c.output_dir = PathBuf::from(v);
            Ok(())
        },
        get: |c| c.output_dir.display().to_string(),
    },
    key!("train.batch_size", "batch-size", "Minibatch size", |c| c.train.batch_size, num::<usize>),
    key!("train.gamma", "gamma", "Discount factor", |c| c.train.gamma, num::<f64>),
    key!("train.lr", "lr", "Adam learning rate", |c| c.train.lr, num::<f64>),
    key!("train.buffer_capacity", "buffer-capacity", "Replay buffer capacity", |c| c.train.buffer_capacity, num::<usize>),
    key!("train.learning_starts", "learning-starts", "Random-action warm-up steps before learning", |c| c.train.learning_starts, num::<u64>),
    key!("train.total_timesteps", "total-timesteps", "Environment steps to train for", |c| c.train.total_timesteps, num::<u64>),
    key!("train.train_every", "train-every", "Environment steps per gradient update", |c| c.train.train_every, num::<u64>),
    key!("train.target_update_every", "target-update-every", "Steps between target network copies", |c| c.train.target_update_every, num::<u64>),
    key!("train.epsilon_start", "epsilon-start", "Initial exploration rate", |c| c.train.epsilon_start, num::<f64>),
    key!("train.epsilon_final", "epsilon-final", "Final exploration rate", |c| c.train.epsilon_final, num::<f64>),
    key!("train.exploration_fraction", "exploration-fraction", "Fraction of training over which epsilon decays", |c| c.train.exploration_fraction, num::<f64>),
    key!("train.max_episode_steps", "max-episode-steps", "Episode step cap", |c| c.train.max_episode_steps, num::<u64>),
    key!("train.checkpoint_every", "checkpoint-every", "Steps between checkpoints (0 disables)", |c| c.train.checkpoint_every, num::<u64>),
    key!("preproc.target_width", "target-width", "Resized image width", |c| c.preproc.target_width, num::<usize>),
    key!("preproc.target_height", "target-height", "Resized image height before cropping", |c| c.preproc.target_height, num::<usize>),
    key!("preproc.crop_top_rows", "crop-top-rows", "Rows removed from the top of the resized image", |c| c.preproc.crop_top_rows, num::<usize>),
    key!("preproc.k", "frame-stack", "Number of stacked frames", |c| c.preproc.k, num::<usize>),
    key!("preproc.yellow_hue_min", "yellow-hue-min", "Yellow hue lower bound, degrees", |c| c.preproc.yellow.hue_min, num::<f32>),
    key!("preproc.yellow_hue_max", "yellow-hue-max", "Yellow hue upper bound, degrees", |c| c.preproc.yellow.hue_max, num::<f32>),
    key!("preproc.yellow_sat_min", "yellow-sat-min", "Yellow minimum saturation", |c| c.preproc.yellow.sat_min, num::<f32>),
    key!("preproc.yellow_val_min", "yellow-val-min", "Yellow minimum value", |c| c.preproc.yellow.val_min, num::<f32>),
    key!("preproc.white_sat_max", "white-sat-max", "White maximum saturation", |c| c.preproc.white.sat_max, num::<f32>),
    key!("preproc.white_val_min", "white-val-min", "White minimum value", |c| c.preproc.white.val_min, num::<f32>),
    key!("camera.width", "camera-width", "Rendered image width", |c| c.camera.image_width, num::<usize>),
    key!("camera.height", "camera-height", "Rendered image height", |c| c.camera.image_height, num::<usize>),
    key!("camera.height_above_ground", "camera-elevation", "Camera height above the ground", |c| c.camera.height_above_ground, num::<f64>),
    key!("camera.pitch_rad", "camera-pitch", "Downward camera tilt, radians", |c| c.camera.pitch, num::<f64>),
    key!("camera.fov_rad", "camera-fov", "Horizontal field of view, radians", |c| c.camera.horizontal_fov, num::<f64>),
    key!("camera.mount_offset", "camera-offset", "Camera position ahead of the axle", |c| c.camera.mount_offset, num::<f64>),
    key!("camera.jitter", "jitter", "Randomize hue, brightness and pitch per training episode", |c| c.jitter, boolean),
    key!("camera.jitter_hue_deg", "jitter-hue", "Hue jitter range, degrees", |c| c.jitter_ranges.hue_deg, num::<f64>),
    key!("camera.jitter_brightness", "jitter-brightness", "Brightness jitter range, fraction", |c| c.jitter_ranges.brightness, num::<f64>),
    key!("camera.jitter_pitch_rad", "jitter-pitch", "Pitch jitter range, radians", |c| c.jitter_ranges.pitch, num::<f64>),
    KeySpec {
        key: "net.conv_filters",
        flag: "conv-filters",
        help: "Filters per conv block, comma separated",
        set: |c, v| {
            c.conv_filters = list(v)?;
            Ok(())
        },
        get: |c| show_list(&c.conv_filters),
    },
    KeySpec {
        key: "net.hidden",
        flag: "hidden",
        help: "Hidden dense layer widths, comma separated",
        set: |c, v| {
            c.hidden = list(v)?;
            Ok(())
        },
        get: |c| show_list(&c.hidden),
    },
    key!("sim.gain", "gain", "Wheel speed gain", |c| c.sim.kinematics.gain, num::<f64>),
    key!("sim.spawn_lateral_jitter", "spawn-lateral-jitter", "Spawn lateral offset range", |c| c.sim.spawn.lateral_jitter, num::<f64>),
    key!("sim.spawn_heading_jitter", "spawn-heading-jitter", "Spawn heading offset range, radians", |c| c.sim.spawn.heading_jitter, num::<f64>),
    key!("sim.spawn_edge_margin", "spawn-edge-margin", "Reject spawns this close to the edge facing out", |c| c.sim.spawn.edge_margin, num::<f64>),
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_profile_pins_training_values() {
        let c = RunConfig::for_profile(Profile::Paper);
        assert_eq!(c.train.batch_size, 32);
        assert_eq!(c.train.gamma, 0.99);
        assert_eq!(c.train.lr, 5e-5);
        assert_eq!(c.train.buffer_capacity, 50_000);
        assert_eq!(c.train.learning_starts, 10_000);
        assert_eq!(c.train.total_timesteps, 500_000);
        assert_eq!(c.net_spec().input, [40, 80, 15]);
        assert_eq!((c.preproc.target_width, c.preproc.target_height), (80, 60));
    }

    #[test]
    fn flags_and_keys_are_unique() {
        for (i, a) in KEYS.iter().enumerate() {
            for b in &KEYS[i + 1..] {
                assert_ne!(a.key, b.key);
                assert_ne!(a.flag, b.flag);
            }
        }
    }

    #[test]
    fn render_then_apply_is_identity() {
        let mut c = RunConfig::for_profile(Profile::Desk);
        c.set("train.lr", "0.001").unwrap();
        c.set("net.hidden", "32,16").unwrap();
        c.set("camera.pitch_rad", "0.21").unwrap();
        let mut d = RunConfig::for_profile(Profile::Desk);
        d.apply_file(&c.render()).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let mut c = RunConfig::for_profile(Profile::Desk);
        assert!(matches!(c.apply_file("train.lrr = 1\n"), Err(ConfigError::UnknownKey { line: Some(1), .. })));
        assert!(matches!(c.set("train.lr", "fast"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(c.apply_file("just words\n"), Err(ConfigError::Syntax { .. })));
        assert!(c.apply_file("# comment\n\nseed = 4 # trailing\n").is_ok());
        assert_eq!(c.seed, 4);
    }

    #[test]
    fn profile_line_is_found() {
        assert_eq!(profile_in_file("seed = 1\nprofile = desk\n").unwrap(), Some(Profile::Desk));
        assert!(profile_in_file("profile = huge\n").is_err());
    }
}
