//! Forward-facing pinhole camera over the ground plane.
//!
//! Every pixel below the horizon is cast onto the ground and colored by the
//! road material found there; everything above gets the backdrop color.
//! Camera frame: `z` along the optical axis, `x` to the image right, `y` down.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::map::{TrackMap, ROAD_HALF_WIDTH};
use crate::sim::Pose;

/// White edge line: lateral band `[ROAD_HALF_WIDTH - WHITE_WIDTH, ROAD_HALF_WIDTH]`.
pub const WHITE_WIDTH: f64 = 0.08;
/// Yellow center line half-width.
pub const YELLOW_HALF_WIDTH: f64 = 0.025;
pub const DASH_LENGTH: f64 = 0.2;
pub const DASH_GAP: f64 = 0.2;

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("invalid camera config: {0}")]
    InvalidConfig(String),
    #[error("image buffer has {found} bytes, expected {expected}")]
    BufferSize { expected: usize, found: usize },
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    pub image_width: usize,
    pub image_height: usize,
    pub height_above_ground: f64,
    /// Downward tilt of the optical axis, radians.
    pub pitch: f64,
    pub horizontal_fov: f64,
    /// Camera position ahead of the wheel axle.
    pub mount_offset: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            image_width: 640,
            image_height: 480,
            height_above_ground: 0.08,
            pitch: 15f64.to_radians(),
            horizontal_fov: 120f64.to_radians(),
            mount_offset: 0.05,
        }
    }
}

impl CameraConfig {
    /// Same optics at a smaller sensor resolution.
    pub fn with_resolution(self, width: usize, height: usize) -> Self {
        Self { image_width: width, image_height: height, ..self }
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        use std::f64::consts::{FRAC_PI_2, PI};
        if self.image_width == 0 || self.image_height == 0 {
            return Err(CameraError::InvalidConfig("zero image size".into()));
        }
        if !(self.pitch > 0.0 && self.pitch < FRAC_PI_2) {
            return Err(CameraError::InvalidConfig(format!("pitch {} outside (0, pi/2)", self.pitch)));
        }
        if !(self.horizontal_fov > 0.0 && self.horizontal_fov < PI) {
            return Err(CameraError::InvalidConfig(format!("fov {} outside (0, pi)", self.horizontal_fov)));
        }
        if !(self.height_above_ground > 0.0) {
            return Err(CameraError::InvalidConfig("camera must sit above the ground".into()));
        }
        Ok(())
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        (self.image_width as f64 / 2.0) / (self.horizontal_fov / 2.0).tan()
    }

    fn principal(&self) -> (f64, f64) {
        (self.image_width as f64 / 2.0, self.image_height as f64 / 2.0)
    }

    /// Continuous image row of the horizon line; pixel rows whose centers lie
    /// below it see the ground.
    pub fn horizon_row(&self) -> f64 {
        self.principal().1 - self.focal() * self.pitch.tan()
    }
}

/// Per-episode appearance perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Jitter {
    pub hue_shift_deg: f64,
    /// Multiplicative brightness change, e.g. `0.15` for +15%.
    pub brightness: f64,
    pub pitch_offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterRanges {
    pub hue_deg: f64,
    pub brightness: f64,
    pub pitch: f64,
}

impl Default for JitterRanges {
    fn default() -> Self {
        Self { hue_deg: 10.0, brightness: 0.15, pitch: 2f64.to_radians() }
    }
}

impl JitterRanges {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Jitter {
        let mut sym = |r: f64| if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 };
        Jitter { hue_shift_deg: sym(self.hue_deg), brightness: sym(self.brightness), pitch_offset: sym(self.pitch) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Material {
    Sky,
    Grass,
    Asphalt,
    WhiteLine,
    YellowLine,
}

impl Material {
    pub fn base_color(self) -> [u8; 3] {
        match self {
            Material::Sky => [150, 180, 220],
            Material::Grass => [60, 140, 60],
            Material::Asphalt => [70, 70, 75],
            Material::WhiteLine => [230, 230, 230],
            Material::YellowLine => [230, 200, 40],
        }
    }

    const ALL: [Material; 5] =
        [Material::Sky, Material::Grass, Material::Asphalt, Material::WhiteLine, Material::YellowLine];
}

/// Ground material at a world point.
pub fn material_at(map: &TrackMap, x: f64, y: f64) -> Material {
    let Some(t) = map.tile_at(x, y) else {
        return Material::Grass;
    };
    if !map.kind(t).is_road() {
        return Material::Grass;
    }
    let frame = map.local_frame(t, x, y);
    if !frame.on_road {
        return Material::Grass;
    }
    let lat = frame.lateral.abs();
    if lat >= ROAD_HALF_WIDTH - WHITE_WIDTH {
        Material::WhiteLine
    } else if lat <= YELLOW_HALF_WIDTH && (frame.along / (DASH_LENGTH + DASH_GAP)).rem_euclid(1.0) * (DASH_LENGTH + DASH_GAP) < DASH_LENGTH {
        Material::YellowLine
    } else {
        Material::Asphalt
    }
}

/// Row-major RGB24 image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RawImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, CameraError> {
        if pixels.len() != 3 * width * height {
            return Err(CameraError::BufferSize { expected: 3 * width * height, found: pixels.len() });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Self { width, height, pixels: rgb.iter().copied().cycle().take(3 * width * height).collect() }
    }

    pub fn pixel(&self, u: usize, v: usize) -> [u8; 3] {
        let i = 3 * (v * self.width + u);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn to_rgb_image(&self) -> image::RgbImage {
        image::RgbImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .expect("buffer size checked on construction")
    }

    /// Save as binary PPM (P6) or PNG depending on the file extension.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CameraError> {
        let path = path.as_ref();
        let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png {
            self.to_rgb_image().save_with_format(path, image::ImageFormat::Png)?;
        } else {
            std::fs::write(path, self.to_ppm())?;
        }
        Ok(())
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    /// Load any format the `image` crate recognizes (PNG, PPM, ...).
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CameraError> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        Self::new(w as usize, h as usize, img.into_raw())
    }
}

fn rgb_to_hsv(c: [u8; 3]) -> (f64, f64, f64) {
    let [r, g, b] = c.map(|v| v as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h = h.rem_euclid(360.0);
    let c = v * s;
    let x = c * (1.0 - ((h / 60.0) % 2.0 - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match (h / 60.0) as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r, g, b].map(|ch| ((ch + m) * 255.0).round().clamp(0.0, 255.0) as u8)
}

fn palette(jitter: Option<&Jitter>) -> [[u8; 3]; 5] {
    Material::ALL.map(|m| {
        let base = m.base_color();
        match jitter {
            None => base,
            Some(j) => {
                let (h, s, v) = rgb_to_hsv(base);
                hsv_to_rgb(h + j.hue_shift_deg, s, (v * (1.0 + j.brightness)).clamp(0.0, 1.0))
            }
        }
    })
}

fn material_index(m: Material) -> usize {
    Material::ALL.iter().position(|&x| x == m).unwrap()
}

/// Camera center in world coordinates and the robot heading.
fn camera_origin(cfg: &CameraConfig, pose: &Pose) -> (f64, f64, f64, f64) {
    let (s, c) = pose.heading.sin_cos();
    (pose.x + cfg.mount_offset * c, pose.y + cfg.mount_offset * s, c, s)
}

/// Render the view from `pose`.
pub fn render(map: &TrackMap, pose: &Pose, cfg: &CameraConfig, jitter: Option<&Jitter>) -> RawImage {
    let (w, h) = (cfg.image_width, cfg.image_height);
    let colors = palette(jitter);
    let sky = colors[material_index(Material::Sky)];
    let pitch = cfg.pitch + jitter.map_or(0.0, |j| j.pitch_offset);
    let (sp, cp) = pitch.sin_cos();
    let f = cfg.focal();
    let (cx, cy) = cfg.principal();
    let (ox, oy, fx, fy) = camera_origin(cfg, pose);
    // left unit vector
    let (lx, ly) = (-fy, fx);
    let mut pixels = vec![0u8; 3 * w * h];
    for v in 0..h {
        let yc = (v as f64 + 0.5 - cy) / f;
        let down = yc * cp + sp;
        let row = &mut pixels[3 * v * w..3 * (v + 1) * w];
        if !(down > 0.0) {
            for px in row.chunks_exact_mut(3) {
                px.copy_from_slice(&sky);
            }
            continue;
        }
        let t = cfg.height_above_ground / down;
        let forward = t * (cp - yc * sp);
        for u in 0..w {
            let xc = (u as f64 + 0.5 - cx) / f;
            let left = -t * xc;
            let gx = ox + forward * fx + left * lx;
            let gy = oy + forward * fy + left * ly;
            let m = material_at(map, gx, gy);
            row[3 * u..3 * u + 3].copy_from_slice(&colors[material_index(m)]);
        }
    }
    RawImage { width: w, height: h, pixels }
}

/// Pixel `(u, v)` where a ground point appears, or `None` when it is behind
/// the camera or outside the image.
pub fn project_ground_point(cfg: &CameraConfig, pose: &Pose, point: (f64, f64)) -> Option<(usize, usize)> {
    let (ox, oy, fx, fy) = camera_origin(cfg, pose);
    let (dx, dy) = (point.0 - ox, point.1 - oy);
    let forward = dx * fx + dy * fy;
    let left = -dx * fy + dy * fx;
    let (sp, cp) = cfg.pitch.sin_cos();
    let hgt = cfg.height_above_ground;
    let z = forward * cp + hgt * sp;
    if !(z > 0.0) {
        return None;
    }
    let y = -forward * sp + hgt * cp;
    let x = -left;
    let f = cfg.focal();
    let (cx, cy) = cfg.principal();
    let u = cx + f * x / z;
    let v = cy + f * y / z;
    let inside = u >= 0.0 && v >= 0.0 && u < cfg.image_width as f64 && v < cfg.image_height as f64;
    inside.then(|| (u.floor() as usize, v.floor() as usize))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::maps;

    fn aligned_pose() -> Pose {
        // bottom straight of the ring, eastbound right lane
        Pose { x: 1.0, y: 0.25, heading: 0.0 }
    }

    #[test]
    fn lines_fall_on_expected_sides() {
        let map = maps::small_loop();
        let cfg = CameraConfig::default();
        let img = render(&map, &aligned_pose(), &cfg, None);
        let yellow = Material::YellowLine.base_color();
        let white = Material::WhiteLine.base_color();
        let center = cfg.image_width / 2;
        let (mut n_yellow, mut n_white_right) = (0, 0);
        for v in 0..cfg.image_height {
            for u in 0..cfg.image_width {
                let p = img.pixel(u, v);
                if p == yellow {
                    assert!(u < center, "yellow at column {u}");
                    n_yellow += 1;
                }
                if p == white && u > center {
                    n_white_right += 1;
                }
            }
        }
        assert!(n_yellow > 100 && n_white_right > 100, "{n_yellow} {n_white_right}");
    }

    #[test]
    fn horizon_row_matches_closed_form() {
        let map = maps::small_loop();
        let cfg = CameraConfig::default();
        let vh = cfg.horizon_row();
        // 240 - f tan(15 deg), f = 320 / tan(60 deg)
        let expected = 240.0 - 320.0 / 60f64.to_radians().tan() * 15f64.to_radians().tan();
        assert!((vh - expected).abs() < 1e-9);
        let first_ground = (vh - 0.5).floor() as usize + 1;
        let sky = Material::Sky.base_color();
        for pose in [aligned_pose(), Pose { x: 0.5, y: 1.4, heading: 1.3 }, Pose { x: 2.4, y: 2.2, heading: -2.0 }] {
            let img = render(&map, &pose, &cfg, None);
            assert!((0..cfg.image_width).all(|u| img.pixel(u, first_ground - 1) == sky));
            assert!((0..cfg.image_width).all(|u| img.pixel(u, first_ground) != sky));
        }
    }

    #[test]
    fn behind_camera_projects_nowhere() {
        let cfg = CameraConfig::default();
        let pose = aligned_pose();
        assert_eq!(project_ground_point(&cfg, &pose, (0.5, 0.25)), None);
    }

    #[test]
    fn optical_axis_hits_center_column() {
        let cfg = CameraConfig::default();
        let pose = aligned_pose();
        let ahead = cfg.height_above_ground / cfg.pitch.tan();
        let (u, v) = project_ground_point(&cfg, &pose, (pose.x + cfg.mount_offset + ahead, 0.2501)).unwrap();
        assert_eq!(u, cfg.image_width / 2 - 1);
        assert!(v == cfg.image_height / 2 || v == cfg.image_height / 2 - 1);
    }

    #[test]
    fn farther_points_project_higher() {
        let cfg = CameraConfig::default();
        let pose = aligned_pose();
        let (_, v1) = project_ground_point(&cfg, &pose, (pose.x + 1.0, 0.25)).unwrap();
        let (_, v2) = project_ground_point(&cfg, &pose, (pose.x + 2.0, 0.25)).unwrap();
        assert!(v2 < v1);
    }

    #[test]
    fn jitter_changes_pixels_but_is_deterministic() {
        let map = maps::small_loop();
        let cfg = CameraConfig::default().with_resolution(160, 120);
        let j = Jitter { hue_shift_deg: 8.0, brightness: -0.1, pitch_offset: 0.01 };
        let a = render(&map, &aligned_pose(), &cfg, Some(&j));
        let b = render(&map, &aligned_pose(), &cfg, Some(&j));
        assert_eq!(a, b);
        assert_ne!(a, render(&map, &aligned_pose(), &cfg, None));
        assert_eq!(render(&map, &aligned_pose(), &cfg, Some(&Jitter::default())), render(&map, &aligned_pose(), &cfg, None));
    }

    #[test]
    fn hsv_roundtrip_of_palette() {
        for m in Material::ALL {
            let (h, s, v) = rgb_to_hsv(m.base_color());
            assert_eq!(hsv_to_rgb(h, s, v), m.base_color());
        }
    }

    #[test]
    fn ppm_header() {
        let img = RawImage::filled(2, 1, [1, 2, 3]);
        assert_eq!(img.to_ppm(), b"P6\n2 1\n255\n\x01\x02\x03\x01\x02\x03".to_vec());
        assert!(RawImage::new(2, 2, vec![0; 11]).is_err());
    }
}
