//! Camera image -> network input: area-average resize, crop above the horizon,
//! yellow/white color segmentation, and k-frame stacking.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::RawImage;

#[derive(Debug, Error, PartialEq)]
pub enum PreprocError {
    #[error("image {width}x{height} is smaller than the {target_width}x{target_height} target")]
    ImageTooSmall { width: usize, height: usize, target_width: usize, target_height: usize },
    #[error("frame shape {found:?} does not match stack shape {expected:?}")]
    ShapeMismatch { expected: (usize, usize), found: (usize, usize) },
    #[error("invalid preprocessing config: {0}")]
    InvalidConfig(String),
}

/// Yellow: hue in `[hue_min, hue_max]` degrees with enough saturation and value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YellowThreshold {
    pub hue_min: f32,
    pub hue_max: f32,
    pub sat_min: f32,
    pub val_min: f32,
}

/// White: low saturation, high value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WhiteThreshold {
    pub sat_max: f32,
    pub val_min: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocConfig {
    pub target_width: usize,
    pub target_height: usize,
    pub crop_top_rows: usize,
    pub k: usize,
    pub yellow: YellowThreshold,
    pub white: WhiteThreshold,
}

impl PreprocConfig {
    /// 640x480 -> 80x60, crop 20 rows -> 80x40, 5 frames.
    pub fn paper() -> Self {
        Self {
            target_width: 80,
            target_height: 60,
            crop_top_rows: 20,
            k: 5,
            yellow: YellowThreshold { hue_min: 40.0, hue_max: 70.0, sat_min: 0.4, val_min: 0.3 },
            white: WhiteThreshold { sat_max: 0.15, val_min: 0.65 },
        }
    }

    /// 48x36, crop 12 rows -> 48x24, 3 frames.
    pub fn desk() -> Self {
        Self { target_width: 48, target_height: 36, crop_top_rows: 12, k: 3, ..Self::paper() }
    }

    pub fn output_height(&self) -> usize {
        self.target_height - self.crop_top_rows
    }

    /// Network input shape `[height, width, 3k]`.
    pub fn observation_shape(&self) -> [usize; 3] {
        [self.output_height(), self.target_width, 3 * self.k]
    }

    /// First source row that can influence the output for a given source height.
    pub fn first_source_row(&self, source_height: usize) -> usize {
        (self.crop_top_rows as f64 * source_height as f64 / self.target_height as f64).floor() as usize
    }

    pub fn validate(&self) -> Result<(), PreprocError> {
        if self.k == 0 {
            return Err(PreprocError::InvalidConfig("k must be at least 1".into()));
        }
        if self.target_width == 0 || self.crop_top_rows >= self.target_height {
            return Err(PreprocError::InvalidConfig("crop leaves no rows".into()));
        }
        Ok(())
    }
}

impl Default for PreprocConfig {
    fn default() -> Self {
        Self::paper()
    }
}

/// Segmented single image, `H x W x 3` (HWC), values in `{0, 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Frame {
    /// Scale to 8-bit for viewing.
    pub fn to_image(&self) -> RawImage {
        let pixels = self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        RawImage::new(self.width, self.height, pixels).expect("frame has 3 channels")
    }
}

/// Stacked frames, `H x W x 3k`, oldest frame in channels `[0, 3)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Observation {
    pub fn shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    /// Frame stored in channel slot `i`.
    pub fn frame(&self, i: usize) -> Frame {
        let mut data = Vec::with_capacity(self.height * self.width * 3);
        for px in self.data.chunks_exact(self.channels) {
            data.extend_from_slice(&px[3 * i..3 * i + 3]);
        }
        Frame { height: self.height, width: self.width, data }
    }
}

/// Source-index/weight pairs for area-averaging one axis.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let lo = i as f64 * scale;
            let hi = (i + 1) as f64 * scale;
            let mut out = Vec::new();
            let mut j = lo.floor() as usize;
            while (j as f64) < hi && j < src {
                let w = (hi.min(j as f64 + 1.0) - lo.max(j as f64)).max(0.0);
                if w > 0.0 {
                    out.push((j, w));
                }
                j += 1;
            }
            out
        })
        .collect()
}

#[inline]
fn classify(rgb: [f32; 3], cfg: &PreprocConfig) -> (bool, bool) {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let sat = if max > 0.0 { d / max } else { 0.0 };
    let hue = if d == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    let y = &cfg.yellow;
    let yellow = d > 0.0 && hue >= y.hue_min && hue <= y.hue_max && sat >= y.sat_min && max >= y.val_min;
    let w = &cfg.white;
    let white = !yellow && sat <= w.sat_max && max >= w.val_min;
    (yellow, white)
}

/// Resize, crop and segment one camera image. Yellow pixels set the red
/// channel, white pixels the green channel; blue is always zero.
pub fn preprocess(raw: &RawImage, cfg: &PreprocConfig) -> Result<Frame, PreprocError> {
    cfg.validate()?;
    if raw.width < cfg.target_width || raw.height < cfg.target_height {
        return Err(PreprocError::ImageTooSmall {
            width: raw.width,
            height: raw.height,
            target_width: cfg.target_width,
            target_height: cfg.target_height,
        });
    }
    let xw = area_weights(raw.width, cfg.target_width);
    let yw = area_weights(raw.height, cfg.target_height);
    let area = (raw.width as f64 / cfg.target_width as f64) * (raw.height as f64 / cfg.target_height as f64);
    let out_h = cfg.output_height();
    let mut data = vec![0f32; out_h * cfg.target_width * 3];
    for (oy, rows) in yw[cfg.crop_top_rows..].iter().enumerate() {
        for (ox, cols) in xw.iter().enumerate() {
            let mut acc = [0f64; 3];
            for &(sy, wy) in rows {
                let line = &raw.pixels[3 * sy * raw.width..3 * (sy + 1) * raw.width];
                for &(sx, wx) in cols {
                    let w = wx * wy;
                    let p = &line[3 * sx..3 * sx + 3];
                    acc[0] += w * p[0] as f64;
                    acc[1] += w * p[1] as f64;
                    acc[2] += w * p[2] as f64;
                }
            }
            let rgb = acc.map(|c| (c / area / 255.0) as f32);
            let (yellow, white) = classify(rgb, cfg);
            let o = 3 * (oy * cfg.target_width + ox);
            data[o] = if yellow { 1.0 } else { 0.0 };
            data[o + 1] = if white { 1.0 } else { 0.0 };
        }
    }
    Ok(Frame { height: out_h, width: cfg.target_width, data })
}

/// FIFO of the last `k` frames.
#[derive(Debug, Clone)]
pub struct FrameStack {
    k: usize,
    frames: VecDeque<Frame>,
}

impl FrameStack {
    pub fn new(k: usize) -> Self {
        assert!(k >= 1, "frame stack depth must be at least 1");
        Self { k, frames: VecDeque::with_capacity(k) }
    }

    pub fn depth(&self) -> usize {
        self.k
    }

    pub fn clear(&mut self) {
        self.frames.clear();
    }

    /// Push a frame and return the stacked observation. Until `k` frames have
    /// been seen, the missing oldest slots repeat the earliest frame.
    pub fn push(&mut self, frame: Frame) -> Result<Observation, PreprocError> {
        if let Some(first) = self.frames.front() {
            if (first.height, first.width) != (frame.height, frame.width) {
                return Err(PreprocError::ShapeMismatch {
                    expected: (first.height, first.width),
                    found: (frame.height, frame.width),
                });
            }
        }
        if self.frames.len() == self.k {
            self.frames.pop_front();
        }
        self.frames.push_back(frame);
        Ok(self.observation())
    }

    fn observation(&self) -> Observation {
        let first = self.frames.front().expect("at least one frame");
        let (h, w) = (first.height, first.width);
        let channels = 3 * self.k;
        let pad = self.k - self.frames.len();
        let slots: Vec<&Frame> = std::iter::repeat(first).take(pad).chain(self.frames.iter()).collect();
        let mut data = vec![0f32; h * w * channels];
        for (p, px) in data.chunks_exact_mut(channels).enumerate() {
            for (i, f) in slots.iter().enumerate() {
                px[3 * i..3 * i + 3].copy_from_slice(&f.data[3 * p..3 * p + 3]);
            }
        }
        Observation { height: h, width: w, channels, data }
    }
}
